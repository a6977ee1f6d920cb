#include "deepdisaster/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <functional>
#include <numeric>
#include <sstream>
#include <stdexcept>

namespace deepdisaster {

std::string shape_string(const Shape& shape) {
  std::ostringstream out;
  out << '(';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out << ", ";
    out << shape[i];
  }
  out << ')';
  return out.str();
}

std::size_t shape_size(const Shape& shape) {
  std::size_t n = 1;
  for (int d : shape) {
    if (d < 0) throw std::invalid_argument("negative dimension in shape " + shape_string(shape));
    n *= static_cast<std::size_t>(d);
  }
  return n;
}

Tensor::Tensor(Shape shape, double fill) : shape_(std::move(shape)), data_(shape_size(shape_), fill) {}

Tensor::Tensor(Shape shape, std::vector<double> values) : shape_(std::move(shape)), data_(values.begin(), values.end()) {
  if (data_.size() != shape_size(shape_))
    throw std::invalid_argument("value count does not match shape " + shape_string(shape_));
}

std::size_t Tensor::sample_size() const {
  if (shape_.empty() || shape_[0] == 0) return 0;
  return data_.size() / static_cast<std::size_t>(shape_[0]);
}

std::span<const double> Tensor::sample(int n) const {
  const std::size_t per = sample_size();
  return {data_.data() + per * static_cast<std::size_t>(n), per};
}

std::span<double> Tensor::sample(int n) {
  const std::size_t per = sample_size();
  return {data_.data() + per * static_cast<std::size_t>(n), per};
}

Tensor Tensor::slice(int begin, int count) const {
  if (begin < 0 || count < 0 || begin + count > dim(0))
    throw std::out_of_range("slice [" + std::to_string(begin) + ", +" + std::to_string(count) +
                            ") outside leading dimension " + std::to_string(dim(0)));
  Shape s = shape_;
  s[0] = count;
  Tensor out(s);
  const std::size_t per = sample_size();
  if (per != 0 && count != 0)
    std::memcpy(out.data(), data_.data() + per * begin, per * count * sizeof(double));
  return out;
}

void Tensor::fill(double value) { std::fill(data_.begin(), data_.end(), value); }

Tensor& Tensor::operator+=(const Tensor& other) {
  if (shape_ != other.shape_)
    throw std::invalid_argument("shape mismatch in +=: " + shape_string(shape_) + " vs " +
                                shape_string(other.shape_));
  for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += other.data_[i];
  return *this;
}

Tensor& Tensor::operator*=(double scale) {
  for (double& v : data_) v *= scale;
  return *this;
}

bool Tensor::all_finite() const {
  return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

Tensor concat_channels(const Tensor& a, const Tensor& b) {
  if (a.rank() != 4 || b.rank() != 4 || a.dim(0) != b.dim(0) || a.dim(2) != b.dim(2) || a.dim(3) != b.dim(3))
    throw std::invalid_argument("concat_channels: incompatible shapes " + shape_string(a.shape()) + " and " +
                                shape_string(b.shape()));
  const int n = a.dim(0), ca = a.dim(1), cb = b.dim(1);
  const std::size_t plane = static_cast<std::size_t>(a.dim(2)) * a.dim(3);
  Tensor out({n, ca + cb, a.dim(2), a.dim(3)});
  for (int i = 0; i < n; ++i) {
    double* dst = out.data() + static_cast<std::size_t>(i) * (ca + cb) * plane;
    std::memcpy(dst, a.data() + static_cast<std::size_t>(i) * ca * plane, ca * plane * sizeof(double));
    std::memcpy(dst + ca * plane, b.data() + static_cast<std::size_t>(i) * cb * plane, cb * plane * sizeof(double));
  }
  return out;
}

void split_channels(const Tensor& joined, int first_channels, Tensor& a, Tensor& b) {
  const int n = joined.dim(0), c = joined.dim(1), h = joined.dim(2), w = joined.dim(3);
  const int ca = first_channels, cb = c - first_channels;
  const std::size_t plane = static_cast<std::size_t>(h) * w;
  a = Tensor({n, ca, h, w});
  b = Tensor({n, cb, h, w});
  for (int i = 0; i < n; ++i) {
    const double* src = joined.data() + static_cast<std::size_t>(i) * c * plane;
    std::memcpy(a.data() + static_cast<std::size_t>(i) * ca * plane, src, ca * plane * sizeof(double));
    std::memcpy(b.data() + static_cast<std::size_t>(i) * cb * plane, src + ca * plane, cb * plane * sizeof(double));
  }
}

Tensor stack_batch(std::span<const Tensor> parts) {
  if (parts.empty()) throw std::invalid_argument("stack_batch: no parts");
  Shape s = parts.front().shape();
  const std::size_t per = parts.front().size();
  s[0] = static_cast<int>(parts.size());
  Tensor out(s);
  for (std::size_t i = 0; i < parts.size(); ++i) {
    if (parts[i].shape() != parts.front().shape() || parts[i].dim(0) != 1)
      throw std::invalid_argument("stack_batch: parts must share a shape with leading dimension 1");
    std::memcpy(out.data() + i * per, parts[i].data(), per * sizeof(double));
  }
  return out;
}

std::uint64_t checksum(std::span<const double> values) {
  std::uint64_t h = 1469598103934665603ull;
  const auto* bytes = reinterpret_cast<const unsigned char*>(values.data());
  for (std::size_t i = 0; i < values.size_bytes(); ++i) {
    h ^= bytes[i];
    h *= 1099511628211ull;
  }
  return h;
}

}  // namespace deepdisaster
