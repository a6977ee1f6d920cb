#pragma once

#include <random>
#include <string>
#include <vector>

#include "deepdisaster/tensor.hpp"

namespace deepdisaster {

/// A trainable array together with its accumulated gradient.
struct Param {
  Tensor value;
  Tensor grad;

  explicit Param(Shape shape = {}) : value(shape), grad(shape) {}
  void zero_grad() { grad.fill(0.0); }
};

/// How gradients cross rectifier activations on the backward pass.
/// `guided` zeroes negative incoming gradients at every (leaky) rectifier.
enum class GradRule { standard, guided };

/// Named views used for checkpointing, optimizer wiring, and topology checks.
struct NamedParam {
  std::string name;
  Param* param;
};
struct NamedBuffer {
  std::string name;
  Tensor* buffer;
};

/// 2-D convolution over NCHW input, square kernel, symmetric zero padding.
class Conv2d {
public:
  Conv2d() = default;
  Conv2d(int in_channels, int out_channels, int kernel, int stride, int padding, bool bias);

  Tensor forward(const Tensor& x) const;
  /// Gradient w.r.t. `x`; weight/bias gradients are added when `accumulate` is set.
  Tensor backward(const Tensor& x, const Tensor& grad_y, bool accumulate);

  int output_extent(int input_extent) const { return (input_extent + 2 * padding_ - kernel_) / stride_ + 1; }
  void append_params(const std::string& prefix, std::vector<NamedParam>& out);
  void init_normal(std::mt19937_64& rng, double stddev);

  Param weight;  // (out, in, k, k)
  Param bias;    // (out) or empty

  int in_channels() const { return in_; }
  int out_channels() const { return out_; }

private:
  int in_ = 0, out_ = 0, kernel_ = 0, stride_ = 1, padding_ = 0;
  bool has_bias_ = false;
};

/// Transposed convolution (fractionally strided), the adjoint of Conv2d.
class ConvTranspose2d {
public:
  ConvTranspose2d() = default;
  ConvTranspose2d(int in_channels, int out_channels, int kernel, int stride, int padding, bool bias);

  Tensor forward(const Tensor& x) const;
  Tensor backward(const Tensor& x, const Tensor& grad_y, bool accumulate);

  int output_extent(int input_extent) const { return (input_extent - 1) * stride_ - 2 * padding_ + kernel_; }
  void append_params(const std::string& prefix, std::vector<NamedParam>& out);
  void init_normal(std::mt19937_64& rng, double stddev);

  Param weight;  // (in, out, k, k)
  Param bias;

  int in_channels() const { return in_; }
  int out_channels() const { return out_; }

private:
  int in_ = 0, out_ = 0, kernel_ = 0, stride_ = 1, padding_ = 0;
  bool has_bias_ = false;
};

struct BatchNormCache {
  std::vector<double> mean;
  std::vector<double> inv_std;
  bool training = false;
};

/// Per-channel batch normalization with running statistics (momentum 0.1).
class BatchNorm2d {
public:
  BatchNorm2d() = default;
  explicit BatchNorm2d(int channels);

  /// Training mode normalizes with batch statistics and updates the running ones.
  Tensor forward(const Tensor& x, bool training, BatchNormCache& cache);
  Tensor backward(const Tensor& x, const Tensor& grad_y, const BatchNormCache& cache, bool accumulate);

  void append_params(const std::string& prefix, std::vector<NamedParam>& out);
  void append_buffers(const std::string& prefix, std::vector<NamedBuffer>& out);
  void init_normal(std::mt19937_64& rng, double stddev);

  Param gamma;
  Param beta;
  Tensor running_mean;
  Tensor running_var;

  static constexpr double kEps = 1e-5;
  static constexpr double kMomentum = 0.1;

private:
  int channels_ = 0;
};

enum class Activation { none, relu, leaky_relu, tanh, sigmoid };

inline constexpr double kLeakySlope = 0.2;

Tensor activate(const Tensor& x, Activation kind);
/// Backward through an activation given its *output* `y`.
Tensor activate_backward(const Tensor& y, const Tensor& grad_y, Activation kind, GradRule rule);

}  // namespace deepdisaster
