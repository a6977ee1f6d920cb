#pragma once

#include <cstddef>
#include <cstdint>
#include <new>
#include <span>
#include <string>
#include <vector>

namespace deepdisaster {

using Shape = std::vector<int>;

// 64-byte aligned storage. Eigen peels vectorized reductions by address, so without a fixed
// alignment the summation order (and the last bits of every result) would vary run to run.
template <class T>
struct AlignedAllocator {
  using value_type = T;
  static constexpr std::align_val_t kAlign{64};
  AlignedAllocator() = default;
  template <class U>
  AlignedAllocator(const AlignedAllocator<U>&) {}
  T* allocate(std::size_t n) { return static_cast<T*>(::operator new(n * sizeof(T), kAlign)); }
  void deallocate(T* p, std::size_t) { ::operator delete(p, kAlign); }
  template <class U>
  bool operator==(const AlignedAllocator<U>&) const { return true; }
};

using Buffer = std::vector<double, AlignedAllocator<double>>;

std::string shape_string(const Shape& shape);
std::size_t shape_size(const Shape& shape);

/// Dense row-major array of doubles. Image-like tensors use NCHW layout.
class Tensor {
public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::vector<double> values);

  const Shape& shape() const { return shape_; }
  int rank() const { return static_cast<int>(shape_.size()); }
  int dim(int axis) const { return shape_.at(static_cast<std::size_t>(axis)); }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }
  std::span<double> values() { return data_; }
  std::span<const double> values() const { return data_; }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  // 4-D accessors (NCHW)
  double& at(int n, int c, int h, int w) {
    return data_[((static_cast<std::size_t>(n) * shape_[1] + c) * shape_[2] + h) * shape_[3] + w];
  }
  double at(int n, int c, int h, int w) const {
    return data_[((static_cast<std::size_t>(n) * shape_[1] + c) * shape_[2] + h) * shape_[3] + w];
  }

  /// Elements belonging to one leading-axis entry.
  std::size_t sample_size() const;
  std::span<const double> sample(int n) const;
  std::span<double> sample(int n);

  /// Copy of `count` leading-axis entries starting at `begin`.
  Tensor slice(int begin, int count) const;

  void fill(double value);
  Tensor& operator+=(const Tensor& other);
  Tensor& operator*=(double scale);

  bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }
  bool all_finite() const;

  friend bool operator==(const Tensor& a, const Tensor& b) = default;

private:
  Shape shape_;
  Buffer data_;
};

/// Concatenate two NCHW tensors along the channel axis.
Tensor concat_channels(const Tensor& a, const Tensor& b);
/// Inverse of concat_channels: split off the first `first_channels` channels.
void split_channels(const Tensor& joined, int first_channels, Tensor& a, Tensor& b);

/// Stack equally-shaped tensors along a new leading axis of size `parts.size()`
/// (each part must have leading dimension 1).
Tensor stack_batch(std::span<const Tensor> parts);

/// Order-sensitive 64-bit FNV-1a digest of the raw bytes.
std::uint64_t checksum(std::span<const double> values);

}  // namespace deepdisaster
