#include "pma/model.hpp"

#include <cmath>
#include <cstring>

#include <nlohmann/json.hpp>

#include "pma/error.hpp"
#include "pma/io.hpp"
#include "pma/rng.hpp"

namespace pma {

namespace {

using ordered_json = nlohmann::ordered_json;

std::vector<std::size_t> layer_output_shape(const LayerDesc& layer,
                                            const std::vector<std::size_t>& in,
                                            std::size_t index) {
  auto fail = [&](const std::string& why) -> std::vector<std::size_t> {
    throw Error(ErrorCode::config, "layer " + std::to_string(index) + " (" +
                                       layer_kind_name(layer.kind) + "): " + why +
                                       ", input shape " + shape_str(in));
  };
  switch (layer.kind) {
    case LayerKind::dense:
      if (in.size() != 1 || in[0] != layer.in) {
        return fail("expects flat input of extent " + std::to_string(layer.in));
      }
      return {layer.out};
    case LayerKind::relu:
      return in;
    case LayerKind::conv2d3x3:
      if (in.size() != 3 || in[0] != layer.in) {
        return fail("expects [channels=" + std::to_string(layer.in) + ", H, W]");
      }
      if (in[1] < 1 || in[2] < 1) return fail("spatial extents must be positive");
      return {layer.out, in[1], in[2]};
    case LayerKind::flatten:
      return {shape_numel(in)};
  }
  return fail("unknown layer kind");
}

}  // namespace

std::string layer_kind_name(LayerKind k) {
  switch (k) {
    case LayerKind::dense: return "dense";
    case LayerKind::relu: return "relu";
    case LayerKind::conv2d3x3: return "conv2d3x3";
    case LayerKind::flatten: return "flatten";
  }
  return "?";
}

void ModelSpec::validate() const {
  if (classes < 2) {
    throw Error(ErrorCode::config, "model needs at least 2 classes");
  }
  if (input_shape.empty() || shape_numel(input_shape) == 0) {
    throw Error(ErrorCode::config, "empty model input shape");
  }
  std::vector<std::size_t> shape = input_shape;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    shape = layer_output_shape(layers[i], shape, i);
  }
  if (shape != std::vector<std::size_t>{classes}) {
    throw Error(ErrorCode::config, "final layer output " + shape_str(shape) +
                                       " does not match class count " +
                                       std::to_string(classes));
  }
}

Classifier init_classifier(const ModelSpec& spec, std::uint64_t seed) {
  spec.validate();
  Classifier model;
  model.spec = spec;
  model.seed = seed;
  for (std::size_t i = 0; i < spec.layers.size(); ++i) {
    const LayerDesc& layer = spec.layers[i];
    if (!model.spec.has_parameters(i)) continue;
    Rng rng = derive_rng(seed, {stream_tag("init"), i});
    if (layer.kind == LayerKind::dense) {
      double bound = std::sqrt(6.0 / static_cast<double>(layer.in + layer.out));
      Tensor w({layer.out, layer.in});
      for (std::size_t j = 0; j < w.numel(); ++j) {
        w[j] = static_cast<float>(rng.uniform(-bound, bound));
      }
      model.weights.push_back(std::move(w));
      model.weights.emplace_back(std::vector<std::size_t>{layer.out}, 0.0f);
    } else {
      double fan_in = static_cast<double>(layer.in) * 9.0;
      double fan_out = static_cast<double>(layer.out) * 9.0;
      double bound = std::sqrt(6.0 / (fan_in + fan_out));
      Tensor w({layer.out, layer.in, 3, 3});
      for (std::size_t j = 0; j < w.numel(); ++j) {
        w[j] = static_cast<float>(rng.uniform(-bound, bound));
      }
      model.weights.push_back(std::move(w));
      model.weights.emplace_back(std::vector<std::size_t>{layer.out}, 0.0f);
    }
  }
  return model;
}

ForwardTrace forward_trace(const Classifier& model, const Tensor& inputs) {
  const ModelSpec& spec = model.spec;
  if (inputs.ndim() != spec.input_shape.size() + 1 ||
      !std::equal(spec.input_shape.begin(), spec.input_shape.end(),
                  inputs.shape().begin() + 1)) {
    throw Error(ErrorCode::config, "layer 0 (input): batch shape " +
                                       shape_str(inputs.shape()) +
                                       " does not extend model input shape " +
                                       shape_str(spec.input_shape));
  }
  std::size_t batch = inputs.extent(0);

  ForwardTrace trace;
  trace.acts.reserve(spec.layers.size() + 1);
  trace.acts.push_back(inputs);

  std::size_t wi = 0;
  for (std::size_t li = 0; li < spec.layers.size(); ++li) {
    const LayerDesc& layer = spec.layers[li];
    const Tensor& x = trace.acts.back();
    switch (layer.kind) {
      case LayerKind::dense: {
        const Tensor& w = model.weights[wi];
        const Tensor& b = model.weights[wi + 1];
        wi += 2;
        Tensor y({batch, layer.out});
        for (std::size_t s = 0; s < batch; ++s) {
          const float* xin = x.data() + s * layer.in;
          float* yout = y.data() + s * layer.out;
          for (std::size_t o = 0; o < layer.out; ++o) {
            const float* wrow = w.data() + o * layer.in;
            double acc = b[o];
            for (std::size_t i = 0; i < layer.in; ++i) {
              acc += static_cast<double>(wrow[i]) * static_cast<double>(xin[i]);
            }
            yout[o] = static_cast<float>(acc);
          }
        }
        trace.acts.push_back(std::move(y));
        break;
      }
      case LayerKind::relu: {
        Tensor y = x;
        for (float& v : y.values()) v = v > 0.0f ? v : 0.0f;
        trace.acts.push_back(std::move(y));
        break;
      }
      case LayerKind::conv2d3x3: {
        const Tensor& w = model.weights[wi];
        const Tensor& b = model.weights[wi + 1];
        wi += 2;
        std::size_t ic = layer.in, oc = layer.out;
        std::size_t h = x.extent(2), wd = x.extent(3);
        Tensor y({batch, oc, h, wd});
        for (std::size_t s = 0; s < batch; ++s) {
          for (std::size_t o = 0; o < oc; ++o) {
            for (std::size_t yy = 0; yy < h; ++yy) {
              for (std::size_t xx = 0; xx < wd; ++xx) {
                double acc = b[o];
                for (std::size_t c = 0; c < ic; ++c) {
                  for (int dy = -1; dy <= 1; ++dy) {
                    long sy = static_cast<long>(yy) + dy;
                    if (sy < 0 || sy >= static_cast<long>(h)) continue;
                    for (int dx = -1; dx <= 1; ++dx) {
                      long sx = static_cast<long>(xx) + dx;
                      if (sx < 0 || sx >= static_cast<long>(wd)) continue;
                      float wv = w[((o * ic + c) * 3 + (dy + 1)) * 3 + (dx + 1)];
                      float xv = x[((s * ic + c) * h + sy) * wd + sx];
                      acc += static_cast<double>(wv) * static_cast<double>(xv);
                    }
                  }
                }
                y[((s * oc + o) * h + yy) * wd + xx] = static_cast<float>(acc);
              }
            }
          }
        }
        trace.acts.push_back(std::move(y));
        break;
      }
      case LayerKind::flatten: {
        std::size_t flat = x.numel() / batch;
        trace.acts.push_back(x.reshaped({batch, flat}));
        break;
      }
    }
  }
  trace.logits().check_finite("forward logits");
  return trace;
}

Tensor forward(const Classifier& model, const Tensor& inputs) {
  return forward_trace(model, inputs).logits();
}

Tensor softmax(const Tensor& logits) {
  std::size_t batch = logits.extent(0);
  std::size_t n = logits.extent(1);
  Tensor out(logits.shape());
  for (std::size_t s = 0; s < batch; ++s) {
    const float* z = logits.data() + s * n;
    float* p = out.data() + s * n;
    double zmax = z[0];
    for (std::size_t i = 1; i < n; ++i) zmax = std::max(zmax, static_cast<double>(z[i]));
    double denom = 0.0;
    for (std::size_t i = 0; i < n; ++i) denom += std::exp(static_cast<double>(z[i]) - zmax);
    for (std::size_t i = 0; i < n; ++i) {
      p[i] = static_cast<float>(std::exp(static_cast<double>(z[i]) - zmax) / denom);
    }
  }
  return out;
}

BackwardResult backward(const Classifier& model, const ForwardTrace& trace,
                        const Tensor& logit_grad, bool want_weight_grads) {
  const ModelSpec& spec = model.spec;
  if (!logit_grad.same_shape(trace.logits())) {
    throw Error(ErrorCode::config, "logit gradient shape " +
                                       shape_str(logit_grad.shape()) +
                                       " does not match logits " +
                                       shape_str(trace.logits().shape()));
  }
  std::size_t batch = trace.acts[0].extent(0);

  BackwardResult result;
  if (want_weight_grads) {
    result.weight_grads.reserve(model.weights.size());
    for (const Tensor& w : model.weights) {
      result.weight_grads.emplace_back(w.shape(), 0.0f);
    }
  }

  Tensor grad = logit_grad;
  std::size_t wi = model.weights.size();
  for (std::size_t li = spec.layers.size(); li-- > 0;) {
    const LayerDesc& layer = spec.layers[li];
    const Tensor& x = trace.acts[li];
    switch (layer.kind) {
      case LayerKind::dense: {
        wi -= 2;
        const Tensor& w = model.weights[wi];
        Tensor gx({batch, layer.in});
        for (std::size_t s = 0; s < batch; ++s) {
          const float* gy = grad.data() + s * layer.out;
          float* gxi = gx.data() + s * layer.in;
          for (std::size_t i = 0; i < layer.in; ++i) {
            double acc = 0.0;
            for (std::size_t o = 0; o < layer.out; ++o) {
              acc += static_cast<double>(w[o * layer.in + i]) * static_cast<double>(gy[o]);
            }
            gxi[i] = static_cast<float>(acc);
          }
        }
        if (want_weight_grads) {
          Tensor& gw = result.weight_grads[wi];
          Tensor& gb = result.weight_grads[wi + 1];
          for (std::size_t o = 0; o < layer.out; ++o) {
            double gbacc = 0.0;
            for (std::size_t s = 0; s < batch; ++s) {
              gbacc += grad[s * layer.out + o];
            }
            gb[o] = static_cast<float>(gbacc);
            for (std::size_t i = 0; i < layer.in; ++i) {
              double acc = 0.0;
              for (std::size_t s = 0; s < batch; ++s) {
                acc += static_cast<double>(grad[s * layer.out + o]) *
                       static_cast<double>(x[s * layer.in + i]);
              }
              gw[o * layer.in + i] = static_cast<float>(acc);
            }
          }
        }
        grad = std::move(gx);
        break;
      }
      case LayerKind::relu: {
        Tensor gx = grad;
        for (std::size_t j = 0; j < gx.numel(); ++j) {
          if (x[j] <= 0.0f) gx[j] = 0.0f;
        }
        grad = std::move(gx);
        break;
      }
      case LayerKind::conv2d3x3: {
        wi -= 2;
        const Tensor& w = model.weights[wi];
        std::size_t ic = layer.in, oc = layer.out;
        std::size_t h = x.extent(2), wd = x.extent(3);
        Tensor gx(x.shape(), 0.0f);
        for (std::size_t s = 0; s < batch; ++s) {
          for (std::size_t c = 0; c < ic; ++c) {
            for (std::size_t yy = 0; yy < h; ++yy) {
              for (std::size_t xx = 0; xx < wd; ++xx) {
                double acc = 0.0;
                for (std::size_t o = 0; o < oc; ++o) {
                  for (int dy = -1; dy <= 1; ++dy) {
                    long oy = static_cast<long>(yy) - dy;
                    if (oy < 0 || oy >= static_cast<long>(h)) continue;
                    for (int dx = -1; dx <= 1; ++dx) {
                      long ox = static_cast<long>(xx) - dx;
                      if (ox < 0 || ox >= static_cast<long>(wd)) continue;
                      float wv = w[((o * ic + c) * 3 + (dy + 1)) * 3 + (dx + 1)];
                      float gv = grad[((s * oc + o) * h + oy) * wd + ox];
                      acc += static_cast<double>(wv) * static_cast<double>(gv);
                    }
                  }
                }
                gx[((s * ic + c) * h + yy) * wd + xx] = static_cast<float>(acc);
              }
            }
          }
        }
        if (want_weight_grads) {
          Tensor& gw = result.weight_grads[wi];
          Tensor& gb = result.weight_grads[wi + 1];
          for (std::size_t o = 0; o < oc; ++o) {
            double gbacc = 0.0;
            for (std::size_t s = 0; s < batch; ++s) {
              for (std::size_t j = 0; j < h * wd; ++j) {
                gbacc += grad[(s * oc + o) * h * wd + j];
              }
            }
            gb[o] = static_cast<float>(gbacc);
            for (std::size_t c = 0; c < ic; ++c) {
              for (int dy = -1; dy <= 1; ++dy) {
                for (int dx = -1; dx <= 1; ++dx) {
                  double acc = 0.0;
                  for (std::size_t s = 0; s < batch; ++s) {
                    for (std::size_t yy = 0; yy < h; ++yy) {
                      long sy = static_cast<long>(yy) + dy;
                      if (sy < 0 || sy >= static_cast<long>(h)) continue;
                      for (std::size_t xx = 0; xx < wd; ++xx) {
                        long sx = static_cast<long>(xx) + dx;
                        if (sx < 0 || sx >= static_cast<long>(wd)) continue;
                        acc += static_cast<double>(grad[((s * oc + o) * h + yy) * wd + xx]) *
                               static_cast<double>(x[((s * ic + c) * h + sy) * wd + sx]);
                      }
                    }
                  }
                  gw[((o * ic + c) * 3 + (dy + 1)) * 3 + (dx + 1)] = static_cast<float>(acc);
                }
              }
            }
          }
        }
        grad = std::move(gx);
        break;
      }
      case LayerKind::flatten: {
        grad = grad.reshaped(x.shape());
        break;
      }
    }
  }
  result.input_grad = std::move(grad);
  return result;
}

Tensor input_gradient(const Classifier& model, const Tensor& inputs,
                      const Tensor& logit_grad) {
  ForwardTrace trace = forward_trace(model, inputs);
  return backward(model, trace, logit_grad, false).input_grad;
}

std::uint32_t argmax_row(const float* row, std::size_t n) {
  std::uint32_t best = 0;
  for (std::size_t i = 1; i < n; ++i) {
    if (row[i] > row[best]) best = static_cast<std::uint32_t>(i);
  }
  return best;
}

std::vector<std::uint32_t> predict_classes(const Classifier& model, const Tensor& inputs) {
  Tensor logits = forward(model, inputs);
  std::size_t batch = logits.extent(0);
  std::size_t n = logits.extent(1);
  std::vector<std::uint32_t> out(batch);
  for (std::size_t s = 0; s < batch; ++s) {
    out[s] = argmax_row(logits.data() + s * n, n);
  }
  return out;
}

void save_checkpoint(const std::filesystem::path& dir, const Classifier& model) {
  std::filesystem::create_directories(dir);
  ordered_json manifest;
  manifest["format"] = "pma-checkpoint";
  manifest["version"] = 1;
  manifest["seed"] = model.seed;
  manifest["classes"] = model.spec.classes;
  manifest["input_shape"] = model.spec.input_shape;
  ordered_json layers = ordered_json::array();
  for (const LayerDesc& l : model.spec.layers) {
    layers.push_back({{"kind", layer_kind_name(l.kind)}, {"in", l.in}, {"out", l.out}});
  }
  manifest["layers"] = layers;
  std::vector<std::string> files;
  for (std::size_t i = 0; i < model.weights.size(); ++i) {
    std::string name = (i % 2 == 0 ? "w" : "b") + std::to_string(i / 2) + ".pmat";
    files.push_back(name);
    write_tensor(dir / name, model.weights[i]);
  }
  manifest["tensors"] = files;
  atomic_write_file(dir / "manifest.json", manifest.dump(2) + "\n");
}

Classifier load_checkpoint(const std::filesystem::path& dir) {
  ordered_json manifest;
  try {
    manifest = ordered_json::parse(read_file(dir / "manifest.json"));
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::io, dir.string() + ": bad manifest: " + e.what());
  }
  Classifier model;
  model.seed = manifest.at("seed").get<std::uint64_t>();
  model.spec.classes = manifest.at("classes").get<std::size_t>();
  model.spec.input_shape = manifest.at("input_shape").get<std::vector<std::size_t>>();
  for (const auto& l : manifest.at("layers")) {
    LayerDesc d;
    std::string kind = l.at("kind").get<std::string>();
    if (kind == "dense") d.kind = LayerKind::dense;
    else if (kind == "relu") d.kind = LayerKind::relu;
    else if (kind == "conv2d3x3") d.kind = LayerKind::conv2d3x3;
    else if (kind == "flatten") d.kind = LayerKind::flatten;
    else throw Error(ErrorCode::io, dir.string() + ": unknown layer kind " + kind);
    d.in = l.at("in").get<std::size_t>();
    d.out = l.at("out").get<std::size_t>();
    model.spec.layers.push_back(d);
  }
  model.spec.validate();
  for (const auto& f : manifest.at("tensors")) {
    model.weights.push_back(read_tensor(dir / f.get<std::string>()));
  }
  // Weight shapes must match the spec.
  std::size_t wi = 0;
  for (std::size_t i = 0; i < model.spec.layers.size(); ++i) {
    if (!model.spec.has_parameters(i)) continue;
    const LayerDesc& l = model.spec.layers[i];
    if (wi + 2 > model.weights.size()) {
      throw Error(ErrorCode::io, dir.string() + ": missing weight tensors");
    }
    const Tensor& w = model.weights[wi];
    bool ok = l.kind == LayerKind::dense
                  ? w.shape() == std::vector<std::size_t>{l.out, l.in}
                  : w.shape() == std::vector<std::size_t>{l.out, l.in, 3, 3};
    if (!ok || model.weights[wi + 1].shape() != std::vector<std::size_t>{l.out}) {
      throw Error(ErrorCode::io, dir.string() + ": weight shape mismatch at layer " +
                                     std::to_string(i));
    }
    wi += 2;
  }
  if (wi != model.weights.size()) {
    throw Error(ErrorCode::io, dir.string() + ": extra weight tensors");
  }
  return model;
}

}  // namespace pma
