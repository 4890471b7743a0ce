#include "pma/tensor.hpp"

#include <cmath>
#include <cstring>
#include <string>

#include "pma/error.hpp"

namespace pma {

std::size_t shape_numel(const std::vector<std::size_t>& shape) {
  std::size_t n = 1;
  for (std::size_t e : shape) n *= e;
  return n;
}

std::string shape_str(const std::vector<std::size_t>& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ", ";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

Tensor::Tensor(std::vector<std::size_t> shape, float fill)
    : shape_(std::move(shape)), data_(shape_numel(shape_), fill) {}

Tensor Tensor::from_data(std::vector<std::size_t> shape, std::vector<float> data) {
  if (shape_numel(shape) != data.size()) {
    throw Error(ErrorCode::config,
                "tensor data length " + std::to_string(data.size()) +
                    " does not match shape " + shape_str(shape));
  }
  Tensor t;
  t.shape_ = std::move(shape);
  t.data_ = std::move(data);
  return t;
}

Tensor Tensor::reshaped(std::vector<std::size_t> shape) const {
  if (shape_numel(shape) != numel()) {
    throw Error(ErrorCode::config, "reshape " + shape_str(shape_) + " -> " +
                                       shape_str(shape) + ": element count differs");
  }
  Tensor t;
  t.shape_ = std::move(shape);
  t.data_ = data_;
  return t;
}

void Tensor::check_finite(const char* what) const {
  for (float v : data_) {
    if (!std::isfinite(v)) {
      throw Error(ErrorCode::numeric, std::string(what) + ": non-finite value");
    }
  }
}

void LabeledBatch::validate(std::size_t classes) const {
  if (inputs.ndim() < 1 || inputs.extent(0) != labels.size()) {
    throw Error(ErrorCode::config, "batch size mismatch: inputs " +
                                       shape_str(inputs.shape()) + " vs " +
                                       std::to_string(labels.size()) + " labels");
  }
  for (float v : inputs.values()) {
    if (!(v >= 0.0f && v <= 1.0f)) {
      throw Error(ErrorCode::config, "batch inputs outside [0,1]");
    }
  }
  for (std::uint32_t y : labels) {
    if (y >= classes) {
      throw Error(ErrorCode::config,
                  "label " + std::to_string(y) + " outside [0, " +
                      std::to_string(classes) + ")");
    }
  }
}

Tensor slice_sample(const Tensor& batched, std::size_t i) {
  std::size_t batch = batched.extent(0);
  std::size_t stride = batch == 0 ? 0 : batched.numel() / batch;
  std::vector<std::size_t> shape = batched.shape();
  shape[0] = 1;
  std::vector<float> row(batched.data() + i * stride, batched.data() + (i + 1) * stride);
  return Tensor::from_data(std::move(shape), std::move(row));
}

}  // namespace pma
