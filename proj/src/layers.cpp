#include "deepdisaster/layers.hpp"

#include <Eigen/Core>

#include <cmath>
#include <stdexcept>

namespace deepdisaster {

namespace {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatrixMap = Eigen::Map<RowMatrix>;
using ConstMatrixMap = Eigen::Map<const RowMatrix>;

struct Geometry {
  int batch, channels, height, width;  // the spatially larger side
  int kernel, stride, padding;
  int out_h, out_w;                    // the spatially smaller grid
  std::size_t rows() const { return static_cast<std::size_t>(channels) * kernel * kernel; }
  std::size_t cols() const { return static_cast<std::size_t>(batch) * out_h * out_w; }
};

// Unfold patches of `image` into a (C*k*k) x (N*Ho*Wo) matrix.
Buffer im2col(const double* image, const Geometry& g) {
  Buffer col(g.rows() * g.cols(), 0.0);
  const std::size_t plane = static_cast<std::size_t>(g.out_h) * g.out_w;
  const std::size_t ncols = g.cols();
  for (int c = 0; c < g.channels; ++c) {
    for (int ky = 0; ky < g.kernel; ++ky) {
      for (int kx = 0; kx < g.kernel; ++kx) {
        const std::size_t row = (static_cast<std::size_t>(c) * g.kernel + ky) * g.kernel + kx;
        double* dst_row = col.data() + row * ncols;
        for (int n = 0; n < g.batch; ++n) {
          const double* src = image + (static_cast<std::size_t>(n) * g.channels + c) * g.height * g.width;
          double* dst = dst_row + n * plane;
          for (int oy = 0; oy < g.out_h; ++oy) {
            const int iy = oy * g.stride - g.padding + ky;
            if (iy < 0 || iy >= g.height) continue;
            const double* src_line = src + static_cast<std::size_t>(iy) * g.width;
            double* dst_line = dst + static_cast<std::size_t>(oy) * g.out_w;
            for (int ox = 0; ox < g.out_w; ++ox) {
              const int ix = ox * g.stride - g.padding + kx;
              if (ix >= 0 && ix < g.width) dst_line[ox] = src_line[ix];
            }
          }
        }
      }
    }
  }
  return col;
}

// Adjoint of im2col: scatter-add columns back into an image buffer.
void col2im(const double* col, const Geometry& g, double* image) {
  const std::size_t plane = static_cast<std::size_t>(g.out_h) * g.out_w;
  const std::size_t ncols = g.cols();
  for (int c = 0; c < g.channels; ++c) {
    for (int ky = 0; ky < g.kernel; ++ky) {
      for (int kx = 0; kx < g.kernel; ++kx) {
        const std::size_t row = (static_cast<std::size_t>(c) * g.kernel + ky) * g.kernel + kx;
        const double* src_row = col + row * ncols;
        for (int n = 0; n < g.batch; ++n) {
          double* dst = image + (static_cast<std::size_t>(n) * g.channels + c) * g.height * g.width;
          const double* src = src_row + n * plane;
          for (int oy = 0; oy < g.out_h; ++oy) {
            const int iy = oy * g.stride - g.padding + ky;
            if (iy < 0 || iy >= g.height) continue;
            double* dst_line = dst + static_cast<std::size_t>(iy) * g.width;
            const double* src_line = src + static_cast<std::size_t>(oy) * g.out_w;
            for (int ox = 0; ox < g.out_w; ++ox) {
              const int ix = ox * g.stride - g.padding + kx;
              if (ix >= 0 && ix < g.width) dst_line[ix] += src_line[ox];
            }
          }
        }
      }
    }
  }
}

// NCHW -> (C x N*H*W)
Buffer to_channel_major(const Tensor& x) {
  const int n = x.dim(0), c = x.dim(1);
  const std::size_t plane = static_cast<std::size_t>(x.dim(2)) * x.dim(3);
  Buffer out(x.size());
  for (int i = 0; i < n; ++i)
    for (int ch = 0; ch < c; ++ch) {
      const double* src = x.data() + (static_cast<std::size_t>(i) * c + ch) * plane;
      std::copy(src, src + plane, out.data() + static_cast<std::size_t>(ch) * n * plane + i * plane);
    }
  return out;
}

Tensor from_channel_major(const double* m, int n, int c, int h, int w) {
  Tensor out({n, c, h, w});
  const std::size_t plane = static_cast<std::size_t>(h) * w;
  for (int i = 0; i < n; ++i)
    for (int ch = 0; ch < c; ++ch) {
      const double* src = m + static_cast<std::size_t>(ch) * n * plane + i * plane;
      std::copy(src, src + plane, out.data() + (static_cast<std::size_t>(i) * c + ch) * plane);
    }
  return out;
}

void require_input(const Tensor& x, int channels, const char* layer) {
  if (x.rank() != 4 || x.dim(1) != channels)
    throw std::invalid_argument(std::string(layer) + ": expected NCHW input with " + std::to_string(channels) +
                                " channels, got " + shape_string(x.shape()));
}

void fill_normal(Tensor& t, std::mt19937_64& rng, double mean, double stddev) {
  std::normal_distribution<double> dist(mean, stddev);
  for (double& v : t.values()) v = dist(rng);
}

}  // namespace

// ---------------------------------------------------------------------------

Conv2d::Conv2d(int in_channels, int out_channels, int kernel, int stride, int padding, bool bias)
    : weight({out_channels, in_channels, kernel, kernel}),
      bias(bias ? Shape{out_channels} : Shape{0}),
      in_(in_channels), out_(out_channels), kernel_(kernel), stride_(stride), padding_(padding), has_bias_(bias) {
  if (in_channels <= 0 || out_channels <= 0 || kernel <= 0 || stride <= 0 || padding < 0)
    throw std::invalid_argument("Conv2d: invalid geometry");
}

Tensor Conv2d::forward(const Tensor& x) const {
  require_input(x, in_, "Conv2d");
  const Geometry g{x.dim(0), in_, x.dim(2), x.dim(3), kernel_, stride_, padding_,
                   output_extent(x.dim(2)), output_extent(x.dim(3))};
  if (g.out_h <= 0 || g.out_w <= 0) throw std::invalid_argument("Conv2d: input too small " + shape_string(x.shape()));
  const Buffer col = im2col(x.data(), g);
  const auto K = static_cast<Eigen::Index>(g.rows());
  const auto P = static_cast<Eigen::Index>(g.cols());
  Buffer y(static_cast<std::size_t>(out_) * P);
  MatrixMap Y(y.data(), out_, P);
  Y.noalias() = ConstMatrixMap(weight.value.data(), out_, K) * ConstMatrixMap(col.data(), K, P);
  if (has_bias_)
    for (int o = 0; o < out_; ++o) Y.row(o).array() += bias.value[o];
  return from_channel_major(y.data(), g.batch, out_, g.out_h, g.out_w);
}

Tensor Conv2d::backward(const Tensor& x, const Tensor& grad_y, bool accumulate) {
  const Geometry g{x.dim(0), in_, x.dim(2), x.dim(3), kernel_, stride_, padding_,
                   output_extent(x.dim(2)), output_extent(x.dim(3))};
  const auto K = static_cast<Eigen::Index>(g.rows());
  const auto P = static_cast<Eigen::Index>(g.cols());
  const Buffer gy = to_channel_major(grad_y);
  ConstMatrixMap G(gy.data(), out_, P);
  const ConstMatrixMap W(weight.value.data(), out_, K);

  if (accumulate) {
    const Buffer col = im2col(x.data(), g);
    MatrixMap(weight.grad.data(), out_, K).noalias() += G * ConstMatrixMap(col.data(), K, P).transpose();
    if (has_bias_)
      for (int o = 0; o < out_; ++o) bias.grad[o] += G.row(o).sum();
  }

  Buffer gcol(static_cast<std::size_t>(K) * P);
  MatrixMap(gcol.data(), K, P).noalias() = W.transpose() * G;
  Tensor gx(x.shape());
  col2im(gcol.data(), g, gx.data());
  return gx;
}

void Conv2d::append_params(const std::string& prefix, std::vector<NamedParam>& out) {
  out.push_back({prefix + ".weight", &weight});
  if (has_bias_) out.push_back({prefix + ".bias", &bias});
}

void Conv2d::init_normal(std::mt19937_64& rng, double stddev) {
  fill_normal(weight.value, rng, 0.0, stddev);
  bias.value.fill(0.0);
}

// ---------------------------------------------------------------------------

ConvTranspose2d::ConvTranspose2d(int in_channels, int out_channels, int kernel, int stride, int padding, bool bias)
    : weight({in_channels, out_channels, kernel, kernel}),
      bias(bias ? Shape{out_channels} : Shape{0}),
      in_(in_channels), out_(out_channels), kernel_(kernel), stride_(stride), padding_(padding), has_bias_(bias) {
  if (in_channels <= 0 || out_channels <= 0 || kernel <= 0 || stride <= 0 || padding < 0)
    throw std::invalid_argument("ConvTranspose2d: invalid geometry");
}

Tensor ConvTranspose2d::forward(const Tensor& x) const {
  require_input(x, in_, "ConvTranspose2d");
  const int n = x.dim(0);
  const Geometry g{n, out_, output_extent(x.dim(2)), output_extent(x.dim(3)), kernel_, stride_, padding_,
                   x.dim(2), x.dim(3)};
  const auto K = static_cast<Eigen::Index>(g.rows());
  const auto P = static_cast<Eigen::Index>(g.cols());
  const Buffer xm = to_channel_major(x);
  Buffer cols(static_cast<std::size_t>(K) * P);
  MatrixMap(cols.data(), K, P).noalias() =
      ConstMatrixMap(weight.value.data(), in_, K).transpose() * ConstMatrixMap(xm.data(), in_, P);
  Tensor y({n, out_, g.height, g.width});
  col2im(cols.data(), g, y.data());
  if (has_bias_) {
    const std::size_t plane = static_cast<std::size_t>(g.height) * g.width;
    for (int i = 0; i < n; ++i)
      for (int o = 0; o < out_; ++o) {
        double* p = y.data() + (static_cast<std::size_t>(i) * out_ + o) * plane;
        for (std::size_t j = 0; j < plane; ++j) p[j] += bias.value[o];
      }
  }
  return y;
}

Tensor ConvTranspose2d::backward(const Tensor& x, const Tensor& grad_y, bool accumulate) {
  const int n = x.dim(0);
  const Geometry g{n, out_, grad_y.dim(2), grad_y.dim(3), kernel_, stride_, padding_, x.dim(2), x.dim(3)};
  const auto K = static_cast<Eigen::Index>(g.rows());
  const auto P = static_cast<Eigen::Index>(g.cols());
  const Buffer gcol = im2col(grad_y.data(), g);
  const ConstMatrixMap GC(gcol.data(), K, P);
  const ConstMatrixMap W(weight.value.data(), in_, K);

  if (accumulate) {
    const Buffer xm = to_channel_major(x);
    MatrixMap(weight.grad.data(), in_, K).noalias() += ConstMatrixMap(xm.data(), in_, P) * GC.transpose();
    if (has_bias_) {
      const std::size_t plane = static_cast<std::size_t>(g.height) * g.width;
      for (int i = 0; i < n; ++i)
        for (int o = 0; o < out_; ++o) {
          const double* p = grad_y.data() + (static_cast<std::size_t>(i) * out_ + o) * plane;
          double s = 0.0;
          for (std::size_t j = 0; j < plane; ++j) s += p[j];
          bias.grad[o] += s;
        }
    }
  }

  Buffer gx(static_cast<std::size_t>(in_) * P);
  MatrixMap(gx.data(), in_, P).noalias() = W * GC;
  return from_channel_major(gx.data(), n, in_, x.dim(2), x.dim(3));
}

void ConvTranspose2d::append_params(const std::string& prefix, std::vector<NamedParam>& out) {
  out.push_back({prefix + ".weight", &weight});
  if (has_bias_) out.push_back({prefix + ".bias", &bias});
}

void ConvTranspose2d::init_normal(std::mt19937_64& rng, double stddev) {
  fill_normal(weight.value, rng, 0.0, stddev);
  bias.value.fill(0.0);
}

// ---------------------------------------------------------------------------

BatchNorm2d::BatchNorm2d(int channels)
    : gamma({channels}), beta({channels}), running_mean({channels}, 0.0), running_var({channels}, 1.0),
      channels_(channels) {
  gamma.value.fill(1.0);
}

Tensor BatchNorm2d::forward(const Tensor& x, bool training, BatchNormCache& cache) {
  require_input(x, channels_, "BatchNorm2d");
  const int n = x.dim(0);
  const std::size_t plane = static_cast<std::size_t>(x.dim(2)) * x.dim(3);
  const std::size_t count = plane * n;
  cache.training = training;
  cache.mean.assign(channels_, 0.0);
  cache.inv_std.assign(channels_, 0.0);
  for (int c = 0; c < channels_; ++c) {
    double mean, var;
    if (training) {
      double s = 0.0;
      for (int i = 0; i < n; ++i) {
        const double* p = x.data() + (static_cast<std::size_t>(i) * channels_ + c) * plane;
        for (std::size_t j = 0; j < plane; ++j) s += p[j];
      }
      mean = s / static_cast<double>(count);
      double sq = 0.0;
      for (int i = 0; i < n; ++i) {
        const double* p = x.data() + (static_cast<std::size_t>(i) * channels_ + c) * plane;
        for (std::size_t j = 0; j < plane; ++j) sq += (p[j] - mean) * (p[j] - mean);
      }
      var = sq / static_cast<double>(count);
      const double unbiased = count > 1 ? sq / static_cast<double>(count - 1) : var;
      running_mean[c] = (1.0 - kMomentum) * running_mean[c] + kMomentum * mean;
      running_var[c] = (1.0 - kMomentum) * running_var[c] + kMomentum * unbiased;
    } else {
      mean = running_mean[c];
      var = running_var[c];
    }
    cache.mean[c] = mean;
    cache.inv_std[c] = 1.0 / std::sqrt(var + kEps);
  }
  Tensor y(x.shape());
  for (int i = 0; i < n; ++i)
    for (int c = 0; c < channels_; ++c) {
      const std::size_t off = (static_cast<std::size_t>(i) * channels_ + c) * plane;
      const double scale = gamma.value[c] * cache.inv_std[c];
      const double shift = beta.value[c] - cache.mean[c] * scale;
      for (std::size_t j = 0; j < plane; ++j) y[off + j] = x[off + j] * scale + shift;
    }
  return y;
}

Tensor BatchNorm2d::backward(const Tensor& x, const Tensor& grad_y, const BatchNormCache& cache, bool accumulate) {
  const int n = x.dim(0);
  const std::size_t plane = static_cast<std::size_t>(x.dim(2)) * x.dim(3);
  const double count = static_cast<double>(plane * n);
  Tensor gx(x.shape());
  for (int c = 0; c < channels_; ++c) {
    const double mu = cache.mean[c], inv = cache.inv_std[c];
    double sum_g = 0.0, sum_gx = 0.0;
    for (int i = 0; i < n; ++i) {
      const std::size_t off = (static_cast<std::size_t>(i) * channels_ + c) * plane;
      for (std::size_t j = 0; j < plane; ++j) {
        sum_g += grad_y[off + j];
        sum_gx += grad_y[off + j] * (x[off + j] - mu) * inv;
      }
    }
    if (accumulate) {
      gamma.grad[c] += sum_gx;
      beta.grad[c] += sum_g;
    }
    const double g = gamma.value[c] * inv;
    for (int i = 0; i < n; ++i) {
      const std::size_t off = (static_cast<std::size_t>(i) * channels_ + c) * plane;
      if (cache.training) {
        for (std::size_t j = 0; j < plane; ++j) {
          const double xhat = (x[off + j] - mu) * inv;
          gx[off + j] = g * (grad_y[off + j] - sum_g / count - xhat * sum_gx / count);
        }
      } else {
        for (std::size_t j = 0; j < plane; ++j) gx[off + j] = g * grad_y[off + j];
      }
    }
  }
  return gx;
}

void BatchNorm2d::append_params(const std::string& prefix, std::vector<NamedParam>& out) {
  out.push_back({prefix + ".gamma", &gamma});
  out.push_back({prefix + ".beta", &beta});
}

void BatchNorm2d::append_buffers(const std::string& prefix, std::vector<NamedBuffer>& out) {
  out.push_back({prefix + ".running_mean", &running_mean});
  out.push_back({prefix + ".running_var", &running_var});
}

void BatchNorm2d::init_normal(std::mt19937_64& rng, double stddev) {
  fill_normal(gamma.value, rng, 1.0, stddev);
  beta.value.fill(0.0);
}

// ---------------------------------------------------------------------------

Tensor activate(const Tensor& x, Activation kind) {
  Tensor y(x.shape());
  const std::size_t n = x.size();
  switch (kind) {
    case Activation::none: return x;
    case Activation::relu:
      for (std::size_t i = 0; i < n; ++i) y[i] = x[i] > 0.0 ? x[i] : 0.0;
      break;
    case Activation::leaky_relu:
      for (std::size_t i = 0; i < n; ++i) y[i] = x[i] > 0.0 ? x[i] : kLeakySlope * x[i];
      break;
    case Activation::tanh:
      for (std::size_t i = 0; i < n; ++i) y[i] = std::tanh(x[i]);
      break;
    case Activation::sigmoid:
      for (std::size_t i = 0; i < n; ++i) y[i] = 1.0 / (1.0 + std::exp(-x[i]));
      break;
  }
  return y;
}

Tensor activate_backward(const Tensor& y, const Tensor& grad_y, Activation kind, GradRule rule) {
  Tensor g(y.shape());
  const std::size_t n = y.size();
  const bool guided = rule == GradRule::guided;
  switch (kind) {
    case Activation::none: return grad_y;
    case Activation::relu:
      for (std::size_t i = 0; i < n; ++i) {
        const double up = guided && grad_y[i] < 0.0 ? 0.0 : grad_y[i];
        g[i] = y[i] > 0.0 ? up : 0.0;
      }
      break;
    case Activation::leaky_relu:
      for (std::size_t i = 0; i < n; ++i) {
        const double up = guided && grad_y[i] < 0.0 ? 0.0 : grad_y[i];
        g[i] = y[i] > 0.0 ? up : kLeakySlope * up;
      }
      break;
    case Activation::tanh:
      for (std::size_t i = 0; i < n; ++i) g[i] = grad_y[i] * (1.0 - y[i] * y[i]);
      break;
    case Activation::sigmoid:
      for (std::size_t i = 0; i < n; ++i) g[i] = grad_y[i] * y[i] * (1.0 - y[i]);
      break;
  }
  return g;
}

}  // namespace deepdisaster
