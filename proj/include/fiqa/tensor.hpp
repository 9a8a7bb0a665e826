#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Core>

namespace fiqa {

struct Shape {
  int n = 0;
  int c = 0;
  int h = 0;
  int w = 0;

  std::size_t count() const {
    return static_cast<std::size_t>(n) * c * h * w;
  }
  std::size_t sample_size() const {
    return static_cast<std::size_t>(c) * h * w;
  }
  std::size_t plane() const { return static_cast<std::size_t>(h) * w; }

  friend bool operator==(const Shape&, const Shape&) = default;
};

std::string to_string(const Shape& shape);

// Aligned allocator that leaves elements default-initialized, so buffers that
// are about to be overwritten skip the zero fill.
template <typename T>
struct UninitAllocator : Eigen::aligned_allocator<T> {
  template <typename U>
  struct rebind {
    using other = UninitAllocator<U>;
  };
  UninitAllocator() = default;
  template <typename U>
  UninitAllocator(const UninitAllocator<U>&) noexcept {}
  template <typename U>
  void construct(U* p) noexcept {
    ::new (static_cast<void*>(p)) U;
  }
  template <typename U, typename... Args>
  void construct(U* p, Args&&... args) {
    ::new (static_cast<void*>(p)) U(std::forward<Args>(args)...);
  }
};

// Dense float tensor in NCHW layout. Storage is aligned so that vectorized
// kernels follow the same code path on every run.
class Tensor {
 public:
  using Storage = std::vector<float, UninitAllocator<float>>;

  Tensor() = default;
  explicit Tensor(Shape shape, float fill = 0.0f);
  // Contents unspecified; the caller writes every element.
  static Tensor uninitialized(Shape shape);

  const Shape& shape() const { return shape_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  float* data() { return data_.data(); }
  const float* data() const { return data_.data(); }

  float* sample(int n) { return data_.data() + n * shape_.sample_size(); }
  const float* sample(int n) const {
    return data_.data() + n * shape_.sample_size();
  }
  float* channel(int n, int c) {
    return sample(n) + static_cast<std::size_t>(c) * shape_.plane();
  }
  const float* channel(int n, int c) const {
    return sample(n) + static_cast<std::size_t>(c) * shape_.plane();
  }

  float& at(int n, int c, int y, int x) {
    return data_[((static_cast<std::size_t>(n) * shape_.c + c) * shape_.h + y) *
                     shape_.w + x];
  }
  float at(int n, int c, int y, int x) const {
    return data_[((static_cast<std::size_t>(n) * shape_.c + c) * shape_.h + y) *
                     shape_.w + x];
  }

  std::span<float> values() { return {data_.data(), data_.size()}; }
  std::span<const float> values() const { return {data_.data(), data_.size()}; }

  void fill(float value);
  // Same element count, new shape.
  void reshape(Shape shape);

  // Copies samples [first, first + count) into a new tensor.
  Tensor slice(int first, int count) const;
  // Stacks single-sample tensors of identical shape along the batch axis.
  static Tensor stack(std::span<const Tensor> samples);

  bool all_finite() const;

 private:
  Shape shape_{};
  Storage data_;
};

}  // namespace fiqa
