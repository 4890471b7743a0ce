#include "pma/losses.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "pma/error.hpp"

namespace pma {

namespace {

constexpr double kDlrGuard = 1e-12;

template <typename T>
LogitView build_view(std::span<const T> z, std::uint32_t y, int pinned_max) {
  if (z.size() < 2) {
    throw Error(ErrorCode::config, "losses need at least 2 classes");
  }
  if (y >= z.size()) {
    throw Error(ErrorCode::config, "label " + std::to_string(y) + " outside logit range");
  }
  LogitView v;
  v.y = y;
  v.z.assign(z.begin(), z.end());
  for (double zv : v.z) {
    if (!std::isfinite(zv)) throw Error(ErrorCode::numeric, "non-finite logit");
  }

  std::size_t n = v.z.size();
  double zmax = *std::max_element(v.z.begin(), v.z.end());
  double denom = 0.0;
  for (double zv : v.z) denom += std::exp(zv - zmax);
  v.p.resize(n);
  for (std::size_t i = 0; i < n; ++i) v.p[i] = std::exp(v.z[i] - zmax) / denom;

  if (pinned_max >= 0) {
    if (static_cast<std::size_t>(pinned_max) >= n || static_cast<std::uint32_t>(pinned_max) == y) {
      throw Error(ErrorCode::config, "pinned target outside valid range");
    }
    v.max_idx = static_cast<std::uint32_t>(pinned_max);
  } else {
    std::uint32_t best = y == 0 ? 1 : 0;
    for (std::size_t i = 0; i < n; ++i) {
      if (i == y) continue;
      if (v.z[i] > v.z[best]) best = static_cast<std::uint32_t>(i);
    }
    v.max_idx = best;
  }
  return v;
}

// Descending order of logits for the DLR denominator. Ties keep the smaller
// class index first (stable).
std::vector<std::uint32_t> dlr_ranking(const LogitView& v, DlrPi pi) {
  std::vector<std::uint32_t> order;
  order.reserve(v.z.size());
  for (std::uint32_t i = 0; i < v.z.size(); ++i) {
    if (pi == DlrPi::except_y && i == v.y) continue;
    order.push_back(i);
  }
  std::stable_sort(order.begin(), order.end(),
                   [&](std::uint32_t a, std::uint32_t b) { return v.z[a] > v.z[b]; });
  return order;
}

void require_dlr_classes(const LogitView& v, DlrPi pi) {
  std::size_t needed = pi == DlrPi::all ? 3 : 4;
  if (v.z.size() < needed) {
    throw Error(ErrorCode::config,
                "dlr needs at least " + std::to_string(needed) + " classes (got " +
                    std::to_string(v.z.size()) + ")");
  }
}

}  // namespace

LogitView make_logit_view(std::span<const float> z, std::uint32_t y, int pinned_max) {
  return build_view(z, y, pinned_max);
}

LogitView make_logit_view(std::span<const double> z, std::uint32_t y, int pinned_max) {
  return build_view(z, y, pinned_max);
}

LossKind parse_loss(std::string_view name) {
  if (name == "ce") return {LossTag::ce_untargeted, 1.0};
  if (name == "cet") return {LossTag::ce_targeted, 1.0};
  if (name == "dlr") return {LossTag::dlr, 1.0};
  if (name == "mg") return {LossTag::margin, 1.0};
  if (name == "pm") return {LossTag::pm, 1.0};
  constexpr std::string_view prefix = "pm:beta=";
  if (name.substr(0, prefix.size()) == prefix) {
    std::string num(name.substr(prefix.size()));
    double beta = 0.0;
    try {
      std::size_t used = 0;
      beta = std::stod(num, &used);
      if (used != num.size()) throw std::invalid_argument(num);
    } catch (const std::exception&) {
      throw Error(ErrorCode::config, "bad beta in loss name '" + std::string(name) + "'");
    }
    if (!(std::isfinite(beta) && beta > 0.0)) {
      throw Error(ErrorCode::config, "beta must be finite and > 0");
    }
    return {LossTag::pm_weighted, beta};
  }
  throw Error(ErrorCode::config, "unknown loss '" + std::string(name) + "'");
}

std::string loss_name(const LossKind& kind) {
  switch (kind.tag) {
    case LossTag::ce_untargeted: return "ce";
    case LossTag::ce_targeted: return "cet";
    case LossTag::dlr: return "dlr";
    case LossTag::margin: return "mg";
    case LossTag::pm: return "pm";
    case LossTag::pm_weighted: {
      char buf[48];
      std::snprintf(buf, sizeof buf, "pm:beta=%g", kind.beta);
      return buf;
    }
    case LossTag::stage_pmax: return "stage_pmax";
    case LossTag::stage_neg_py: return "stage_neg_py";
  }
  return "?";
}

double loss_value(const LossKind& kind, const LogitView& v, const LossOptions& opts) {
  std::uint32_t y = v.y, m = v.max_idx;
  switch (kind.tag) {
    case LossTag::ce_untargeted:
      return -std::log(v.p[y]);
    case LossTag::ce_targeted:
      return std::log(v.p[m]);
    case LossTag::margin:
      return v.z[m] - v.z[y];
    case LossTag::pm:
      return v.p[m] - v.p[y];
    case LossTag::pm_weighted:
      return kind.beta * v.p[m] - v.p[y];
    case LossTag::stage_pmax:
      return v.p[m];
    case LossTag::stage_neg_py:
      return -v.p[y];
    case LossTag::dlr: {
      require_dlr_classes(v, opts.dlr_pi);
      std::vector<std::uint32_t> order = dlr_ranking(v, opts.dlr_pi);
      double denom = v.z[order[0]] - v.z[order[2]] + kDlrGuard;
      return (v.z[m] - v.z[y]) / denom;
    }
  }
  throw Error(ErrorCode::config, "unknown loss tag");
}

std::vector<double> loss_grad_logits(const LossKind& kind, const LogitView& v,
                                     const LossOptions& opts) {
  std::size_t n = v.z.size();
  std::uint32_t y = v.y, m = v.max_idx;
  std::vector<double> g(n, 0.0);
  switch (kind.tag) {
    case LossTag::ce_untargeted:
      for (std::size_t i = 0; i < n; ++i) g[i] = v.p[i];
      g[y] -= 1.0;
      return g;
    case LossTag::ce_targeted:
      for (std::size_t i = 0; i < n; ++i) g[i] = -v.p[i];
      g[m] += 1.0;
      return g;
    case LossTag::margin:
      g[m] = 1.0;
      g[y] = -1.0;
      return g;
    case LossTag::pm:
    case LossTag::pm_weighted: {
      double beta = kind.tag == LossTag::pm ? 1.0 : kind.beta;
      double pm = v.p[m], py = v.p[y];
      for (std::size_t i = 0; i < n; ++i) g[i] = (py - beta * pm) * v.p[i];
      g[m] += beta * pm;
      g[y] -= py;
      return g;
    }
    case LossTag::stage_pmax: {
      double pm = v.p[m];
      for (std::size_t i = 0; i < n; ++i) g[i] = -pm * v.p[i];
      g[m] += pm;
      return g;
    }
    case LossTag::stage_neg_py: {
      double py = v.p[y];
      for (std::size_t i = 0; i < n; ++i) g[i] = py * v.p[i];
      g[y] -= py;
      return g;
    }
    case LossTag::dlr: {
      require_dlr_classes(v, opts.dlr_pi);
      std::vector<std::uint32_t> order = dlr_ranking(v, opts.dlr_pi);
      std::uint32_t top = order[0], third = order[2];
      double denom = v.z[top] - v.z[third] + kDlrGuard;
      double num = v.z[m] - v.z[y];
      g[m] += 1.0 / denom;
      g[y] -= 1.0 / denom;
      g[top] -= num / (denom * denom);
      g[third] += num / (denom * denom);
      return g;
    }
  }
  throw Error(ErrorCode::config, "unknown loss tag");
}

double loss_value(const LossKind& kind, std::span<const float> z, std::uint32_t y,
                  const LossOptions& opts) {
  return loss_value(kind, make_logit_view(z, y), opts);
}

std::vector<double> loss_grad_logits(const LossKind& kind, std::span<const float> z,
                                     std::uint32_t y, const LossOptions& opts) {
  return loss_grad_logits(kind, make_logit_view(z, y), opts);
}

StageEval stage_loss(int k, int k1, int r, const LogitView& v, double beta) {
  LossKind kind;
  if (k >= k1) {
    kind = beta == 1.0 ? LossKind{LossTag::pm, 1.0} : LossKind{LossTag::pm_weighted, beta};
  } else if (r % 2 == 0) {
    kind = {LossTag::stage_pmax, 1.0};
  } else {
    kind = {LossTag::stage_neg_py, 1.0};
  }
  return {loss_value(kind, v), loss_grad_logits(kind, v)};
}

StageEval md_stage_loss(int k, int k1, int r, const LogitView& v) {
  std::size_t n = v.z.size();
  StageEval out;
  out.grad.assign(n, 0.0);
  if (k >= k1) {
    out.value = v.z[v.max_idx] - v.z[v.y];
    out.grad[v.max_idx] = 1.0;
    out.grad[v.y] = -1.0;
  } else if (r % 2 == 0) {
    out.value = v.z[v.max_idx];
    out.grad[v.max_idx] = 1.0;
  } else {
    out.value = -v.z[v.y];
    out.grad[v.y] = -1.0;
  }
  return out;
}

}  // namespace pma
