#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

namespace pma {

// Dense row-major float32 array. The single carrier for images, logits,
// weights and embeddings.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::vector<std::size_t> shape, float fill = 0.0f);
  static Tensor from_data(std::vector<std::size_t> shape, std::vector<float> data);

  const std::vector<std::size_t>& shape() const { return shape_; }
  std::size_t ndim() const { return shape_.size(); }
  std::size_t extent(std::size_t i) const { return shape_[i]; }
  std::size_t numel() const { return data_.size(); }

  float* data() { return data_.data(); }
  const float* data() const { return data_.data(); }
  std::span<float> values() { return data_; }
  std::span<const float> values() const { return data_; }

  float& operator[](std::size_t i) { return data_[i]; }
  float operator[](std::size_t i) const { return data_[i]; }

  bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }

  // Reinterprets the buffer under a new shape with identical element count.
  Tensor reshaped(std::vector<std::size_t> shape) const;

  // Throws a numeric Error if any value is NaN or infinite.
  void check_finite(const char* what) const;

  bool operator==(const Tensor& other) const {
    return shape_ == other.shape_ && data_ == other.data_;
  }

 private:
  std::vector<std::size_t> shape_;
  std::vector<float> data_;
};

std::size_t shape_numel(const std::vector<std::size_t>& shape);
std::string shape_str(const std::vector<std::size_t>& shape);

// Labeled data: inputs [batch, ...], values in [0,1]; labels in [0, classes).
struct LabeledBatch {
  Tensor inputs;
  std::vector<std::uint32_t> labels;

  std::size_t size() const { return labels.size(); }
  void validate(std::size_t classes) const;
};

// View of sample i of a batched tensor as a [1, ...] tensor (copies the row).
Tensor slice_sample(const Tensor& batched, std::size_t i);

}  // namespace pma
