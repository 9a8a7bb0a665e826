#include "fiqa/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

#include <malloc.h>

#include "fiqa/error.hpp"

namespace fiqa {

std::string to_string(const Shape& shape) {
  return "[" + std::to_string(shape.n) + "x" + std::to_string(shape.c) + "x" +
         std::to_string(shape.h) + "x" + std::to_string(shape.w) + "]";
}

namespace {

// Activations are large and short-lived. Keeping freed blocks in the heap
// instead of returning them to the OS avoids a page-fault storm on every
// layer.
[[maybe_unused]] const bool kAllocatorTuned = [] {
  mallopt(M_MMAP_THRESHOLD, 1 << 30);
  mallopt(M_TRIM_THRESHOLD, 1 << 30);
  return true;
}();

}  // namespace

Tensor::Tensor(Shape shape, float fill) : shape_(shape), data_(shape.count(), fill) {}

Tensor Tensor::uninitialized(Shape shape) {
  Tensor t;
  t.shape_ = shape;
  t.data_.resize(shape.count());
  return t;
}

void Tensor::fill(float value) { std::fill(data_.begin(), data_.end(), value); }

void Tensor::reshape(Shape shape) {
  if (shape.count() != data_.size()) {
    throw Error(ErrorKind::ShapeMismatch,
                "cannot reshape " + to_string(shape_) + " to " + to_string(shape));
  }
  shape_ = shape;
}

Tensor Tensor::slice(int first, int count) const {
  if (first < 0 || count < 0 || first + count > shape_.n) {
    throw Error(ErrorKind::ShapeMismatch, "slice out of range for " + to_string(shape_));
  }
  Shape out_shape = shape_;
  out_shape.n = count;
  Tensor out = Tensor::uninitialized(out_shape);
  std::memcpy(out.data(), sample(first), out.size() * sizeof(float));
  return out;
}

Tensor Tensor::stack(std::span<const Tensor> samples) {
  if (samples.empty()) {
    throw Error(ErrorKind::ShapeMismatch, "cannot stack an empty list");
  }
  Shape shape = samples.front().shape();
  int total = 0;
  for (const auto& t : samples) {
    if (t.shape().c != shape.c || t.shape().h != shape.h || t.shape().w != shape.w) {
      throw Error(ErrorKind::ShapeMismatch, "stack: " + to_string(t.shape()) +
                                                " vs " + to_string(shape));
    }
    total += t.shape().n;
  }
  shape.n = total;
  Tensor out = Tensor::uninitialized(shape);
  float* dst = out.data();
  for (const auto& t : samples) {
    std::memcpy(dst, t.data(), t.size() * sizeof(float));
    dst += t.size();
  }
  return out;
}

bool Tensor::all_finite() const {
  return std::all_of(data_.begin(), data_.end(), [](float v) { return std::isfinite(v); });
}

}  // namespace fiqa
