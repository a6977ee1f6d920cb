#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "deepdisaster/config.hpp"
#include "deepdisaster/layers.hpp"
#include "deepdisaster/tensor.hpp"

namespace deepdisaster {

enum class Role { teacher, student };
std::string_view to_string(Role role);

struct NetworkArch {
  Role role = Role::student;
  int base_width = 16;
  int image_size = 64;
  int channels = 3;
  int latent_dim = 100;
  int depth = 4;  // number of stride-2 stages
  bool skip_connections = true;

  /// Channels produced by encoder stage `level` (1-based): base_width * min(2^(level-1), 8).
  int width_at(int level) const;
  /// Spatial extent after the last downsampling stage.
  int bottom_extent() const { return image_size >> depth; }
  /// Shape of one sample's discriminator feature map (C, H, W).
  Shape feature_shape() const { return {width_at(depth), bottom_extent(), bottom_extent()}; }

  friend bool operator==(const NetworkArch&, const NetworkArch&) = default;
};

/// Default depth for an image size: spatial extent 4 at the bottleneck.
int default_depth(int image_size);
NetworkArch make_arch(const ExperimentConfig& config, Role role);
/// Throws std::invalid_argument for an unusable architecture.
void validate_arch(const NetworkArch& arch);

/// Conv (or transposed conv) + optional batch norm + activation.
template <class Op>
struct Block {
  Op op;
  bool use_bn = false;
  BatchNorm2d bn;
  Activation act = Activation::none;

  struct Trace {
    Tensor input;
    Tensor pre_norm;  // kept only when use_bn
    BatchNormCache bn_cache;
    Tensor output;
  };

  Tensor forward(const Tensor& x, bool training, Trace& trace);
  Tensor backward(const Trace& trace, const Tensor& grad_out, GradRule rule, bool accumulate);
  void append_params(const std::string& prefix, std::vector<NamedParam>& out);
  void append_buffers(const std::string& prefix, std::vector<NamedBuffer>& out);
  void init(std::mt19937_64& rng);
};

using DownBlock = Block<Conv2d>;
using UpBlock = Block<ConvTranspose2d>;

/// U-Net encoder/decoder. The encoder maps x to a latent z (latent_dim x 1 x 1);
/// each decoder stage is concatenated with its mirrored encoder stage.
class Generator {
public:
  Generator() = default;
  explicit Generator(const NetworkArch& arch);

  struct Trace {
    std::vector<DownBlock::Trace> encoder;
    DownBlock::Trace bottleneck;
    std::vector<UpBlock::Trace> decoder;  // decoder[0] maps z back to the bottom extent
    Tensor z;
    Tensor x_hat;
  };

  Trace forward(const Tensor& x, bool training);
  /// Returns d/dx given upstream gradients on x_hat and (optionally, may be empty) z.
  Tensor backward(const Trace& trace, const Tensor& grad_x_hat, const Tensor& grad_z, GradRule rule, bool accumulate);

  const NetworkArch& arch() const { return arch_; }
  std::vector<NamedParam> named_params();
  std::vector<NamedBuffer> named_buffers();
  std::size_t parameter_count();
  void init(std::mt19937_64& rng);
  /// Zero the final layer's weights and bias (x_hat becomes identically 0).
  void zero_output_layer();

private:
  NetworkArch arch_;
  std::vector<DownBlock> encoder_;
  DownBlock bottleneck_;
  std::vector<UpBlock> decoder_;
};

/// DCGAN-style discriminator. `features` is the penultimate map f(.), `prob` the sigmoid real/fake score.
/// Gradients enter through the pre-sigmoid `logit`, which never saturates.
class Discriminator {
public:
  Discriminator() = default;
  explicit Discriminator(const NetworkArch& arch);

  struct Trace {
    std::vector<DownBlock::Trace> blocks;
    DownBlock::Trace head;
    Tensor features;  // (N, C, b, b)
    Tensor logit;     // (N, 1, 1, 1)
    Tensor prob;      // sigmoid(logit)
  };

  Trace forward(const Tensor& x, bool training);
  /// Either gradient may be empty (treated as zero).
  Tensor backward(const Trace& trace, const Tensor& grad_features, const Tensor& grad_logit, GradRule rule,
                  bool accumulate);

  const NetworkArch& arch() const { return arch_; }
  std::vector<NamedParam> named_params();
  std::vector<NamedBuffer> named_buffers();
  std::size_t parameter_count();
  void init(std::mt19937_64& rng);

private:
  NetworkArch arch_;
  std::vector<DownBlock> blocks_;
  DownBlock head_;
};

/// Generator + discriminator of one role.
struct GanPair {
  Generator generator;
  Discriminator discriminator;

  explicit GanPair(const NetworkArch& arch) : generator(arch), discriminator(arch) {}
  GanPair() = default;

  const NetworkArch& arch() const { return generator.arch(); }
  std::size_t parameter_count() { return generator.parameter_count() + discriminator.parameter_count(); }
  void init(std::uint64_t seed);
  /// Parameters and buffers of both networks, prefixed "generator." / "discriminator.".
  std::vector<NamedParam> named_params();
  std::vector<NamedBuffer> named_buffers();
  /// Digest over every parameter and buffer value.
  std::uint64_t checksum();
};

/// Everything one forward pass exposes.
struct NetworkOutputs {
  Tensor x_hat;
  Tensor z;       // (N, latent_dim)
  Tensor f_x;
  Tensor f_xhat;
  std::vector<double> logits_real;  // sigmoid probabilities D(x)
  std::vector<double> logits_fake;  // D(x_hat)
};

NetworkOutputs forward_network(GanPair& nets, const Tensor& batch, bool training = false);

struct StudentTeacher {
  GanPair student;
  GanPair teacher;
};

/// Two pairs with identical topology that differ only in base width.
StudentTeacher build_student_teacher(const ExperimentConfig& config);
/// Initialization seed build_student_teacher uses for the pair of `role`.
std::uint64_t init_seed(std::int64_t seed, Role role);

/// Fixed channel-group averaging that maps teacher features (C_t channels) onto
/// the student's channel count C_s (C_t must be a multiple of C_s).
Tensor adapt_features(const Tensor& teacher_features, int student_channels);
Tensor adapt_features_backward(const Tensor& grad_adapted, int teacher_channels);

}  // namespace deepdisaster
