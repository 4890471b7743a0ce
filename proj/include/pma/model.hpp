#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "pma/tensor.hpp"

namespace pma {

enum class LayerKind { dense, relu, conv2d3x3, flatten };

// dense: in/out are feature extents. conv2d3x3: in/out are channel counts
// (3x3 kernel, stride 1, same padding). relu/flatten carry no parameters.
struct LayerDesc {
  LayerKind kind;
  std::size_t in = 0;
  std::size_t out = 0;
};

struct ModelSpec {
  std::vector<std::size_t> input_shape;
  std::size_t classes = 0;
  std::vector<LayerDesc> layers;

  // Walks the layer chain and checks shape composition; the final output
  // must be [classes]. Throws a config Error naming the offending layer.
  void validate() const;

  bool has_parameters(std::size_t layer) const {
    LayerKind k = layers[layer].kind;
    return k == LayerKind::dense || k == LayerKind::conv2d3x3;
  }
};

struct Classifier {
  ModelSpec spec;
  // Two tensors per parameterized layer, in layer order: weight then bias.
  // dense: W [out, in], b [out]. conv: W [out_ch, in_ch, 3, 3], b [out_ch].
  std::vector<Tensor> weights;
  std::uint64_t seed = 0;
};

// Deterministic init: weights uniform in +-sqrt(6 / (fan_in + fan_out)),
// biases zero. Same (spec, seed) gives bit-identical weights.
Classifier init_classifier(const ModelSpec& spec, std::uint64_t seed);

// Forward pass on a batch [batch, ...input_shape]; returns logits [batch, N].
Tensor forward(const Classifier& model, const Tensor& inputs);

// Row-wise stable softmax with 64-bit accumulation.
Tensor softmax(const Tensor& logits);

// d(sum(logit_grad . logits))/d(inputs) — the chain factor every adversarial
// gradient needs. logit_grad has shape [batch, N].
Tensor input_gradient(const Classifier& model, const Tensor& inputs,
                      const Tensor& logit_grad);

// Forward with cached per-layer activations, for reuse by backward.
struct ForwardTrace {
  // acts[0] = inputs, acts[i+1] = output of layer i; back() = logits.
  std::vector<Tensor> acts;
  const Tensor& logits() const { return acts.back(); }
};
ForwardTrace forward_trace(const Classifier& model, const Tensor& inputs);

struct BackwardResult {
  Tensor input_grad;
  std::vector<Tensor> weight_grads;  // aligned with Classifier::weights
};
BackwardResult backward(const Classifier& model, const ForwardTrace& trace,
                        const Tensor& logit_grad, bool want_weight_grads);

// Argmax per row; ties broken by smallest class index.
std::vector<std::uint32_t> predict_classes(const Classifier& model, const Tensor& inputs);
std::uint32_t argmax_row(const float* row, std::size_t n);

// Checkpoint directory: manifest.json + one PMAT container per weight tensor.
void save_checkpoint(const std::filesystem::path& dir, const Classifier& model);
Classifier load_checkpoint(const std::filesystem::path& dir);

std::string layer_kind_name(LayerKind k);

}  // namespace pma
