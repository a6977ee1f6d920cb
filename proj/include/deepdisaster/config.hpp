#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace deepdisaster {

/// Raised for unreadable, malformed, or invalid configuration input.
class ConfigError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

/// Intermediate activations on which the student is made to match the teacher.
enum class CriticalLayer { generated_image, discriminator_features, bottleneck_z };

std::string_view to_string(CriticalLayer layer);
CriticalLayer critical_layer_from_string(std::string_view name);

enum class TeacherCorpus { in_domain, generic };
enum class ChannelReduction { max, mean };

/// Learning-rate schedule applied once per epoch.
struct LrDecay {
  enum class Kind { none, exponential } kind = Kind::exponential;
  double rate = 0.999;

  /// Multiplier for the learning rate during `epoch` (0-based).
  double factor(int epoch) const;
  friend bool operator==(const LrDecay&, const LrDecay&) = default;
};

struct Paths {
  std::string dataset_root = "data";
  std::string checkpoint_dir = "checkpoints";
  std::string report_dir = "reports";
  /// Image folder used for teacher pretraining when teacher_corpus = generic.
  std::string teacher_corpus_root;
  friend bool operator==(const Paths&, const Paths&) = default;
};

/// Every knob of a run. Immutable once validated.
struct ExperimentConfig {
  // model
  int image_size = 64;
  int channels = 3;
  int latent_dim = 100;
  int teacher_base_width = 64;
  int student_base_width = 16;
  bool skip_connections = true;
  bool equal_size_student = false;

  // optimizer
  double learning_rate = 2e-3;
  double teacher_learning_rate = 2e-3;
  double discriminator_learning_rate = 2e-3;
  LrDecay lr_decay;
  double momentum_beta1 = 0.5;
  double momentum_beta2 = 0.999;

  // schedule
  int batch_size = 64;
  int epochs = 30;
  int teacher_epochs = 10;
  TeacherCorpus teacher_corpus = TeacherCorpus::in_domain;

  // training objective weights
  double lambda_adv = 1.0;
  double lambda_con = 20.0;
  double lambda_lat = 1.0;
  double lambda_kg = 50.0;
  double lambda_kd = 1.0;
  double lambda_kz = 1.0;  // bottleneck-z distillation, only used when z is a critical layer
  /// Also apply the weighted feature-distillation term to the student discriminator's update.
  bool distill_discriminator = true;

  // anomaly score weights
  double omega_l = 0.4;
  double omega_r = 0.2;
  double omega_vd = 0.4;

  /// Kept sorted and unique.
  std::vector<CriticalLayer> critical_layers{CriticalLayer::generated_image, CriticalLayer::discriminator_features};

  // localization
  int smoothgrad_samples = 8;
  double smoothgrad_sigma_fraction = 0.1;
  ChannelReduction saliency_reduction = ChannelReduction::max;

  // data
  double train_fraction = 0.8;
  std::int64_t seed = 1;
  Paths paths;

  bool uses(CriticalLayer layer) const;
  /// Width actually used for the student (teacher width under the equal-size ablation).
  int effective_student_width() const { return equal_size_student ? teacher_base_width : student_base_width; }

  friend bool operator==(const ExperimentConfig&, const ExperimentConfig&) = default;
};

ExperimentConfig default_config();

/// One message per violated invariant; each message starts with the offending field name.
std::vector<std::string> validate_config(const ExperimentConfig& config);

/// Throws ConfigError joining all violations.
void require_valid(const ExperimentConfig& config);

/// Reads `path` on top of default_config() and validates the result.
ExperimentConfig load_config(const std::filesystem::path& path);

/// Applies key=value text on top of `base` (no validation). `origin` is used in messages.
ExperimentConfig parse_config_text(std::string_view text, ExperimentConfig base, const std::string& origin = "<text>");

/// Sets one key. Accepts the dotted name (`loss.lambda_kg`) or the bare leaf (`lambda_kg`).
void apply_override(ExperimentConfig& config, std::string_view key, std::string_view value);

/// Applies DEEPDISASTER_<KEY> variables, e.g. DEEPDISASTER_LAMBDA_KG or DEEPDISASTER_LOSS_LAMBDA_KG.
/// `lookup` returns nullptr for unset names (defaults to std::getenv).
void apply_environment(ExperimentConfig& config, const char* (*lookup)(const char*) = nullptr);

/// Canonical `section.key = value` text, one line per key in a fixed order.
std::string serialize_config(const ExperimentConfig& config);
void save_config(const ExperimentConfig& config, const std::filesystem::path& path);

/// All dotted key names in serialization order.
std::vector<std::string> config_keys();

/// FNV-1a digest of serialize_config(), as 16 hex digits.
std::string config_hash(const ExperimentConfig& config);

}  // namespace deepdisaster
