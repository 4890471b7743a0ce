#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace pma {

enum class LossTag {
  ce_untargeted,
  ce_targeted,
  dlr,
  margin,
  pm,
  pm_weighted,
  stage_pmax,
  stage_neg_py,
};

struct LossKind {
  LossTag tag = LossTag::pm;
  double beta = 1.0;  // only read for pm_weighted
};

// Stable string names: ce, cet, dlr, mg, pm, pm:beta=<float>.
LossKind parse_loss(std::string_view name);
std::string loss_name(const LossKind& kind);

// Whether the paper's DLR ranking runs over all logits (default) or skips the
// true class.
enum class DlrPi { all, except_y };

struct LossOptions {
  DlrPi dlr_pi = DlrPi::all;
};

// Per-(z, y) scratch: softmax probabilities (64-bit), the strongest wrong
// class, and the descending logit order for DLR. max_idx ties break to the
// smallest class index. A pinned target replaces the argmax for targeted
// attack variants.
struct LogitView {
  std::vector<double> z;
  std::vector<double> p;
  std::uint32_t y = 0;
  std::uint32_t max_idx = 0;
};

LogitView make_logit_view(std::span<const float> z, std::uint32_t y, int pinned_max = -1);
LogitView make_logit_view(std::span<const double> z, std::uint32_t y, int pinned_max = -1);

double loss_value(const LossKind& kind, const LogitView& v, const LossOptions& opts = {});
std::vector<double> loss_grad_logits(const LossKind& kind, const LogitView& v,
                                     const LossOptions& opts = {});

// Convenience overloads building the view internally.
double loss_value(const LossKind& kind, std::span<const float> z, std::uint32_t y,
                  const LossOptions& opts = {});
std::vector<double> loss_grad_logits(const LossKind& kind, std::span<const float> z,
                                     std::uint32_t y, const LossOptions& opts = {});

struct StageEval {
  double value = 0.0;
  std::vector<double> grad;
};

// Two-stage alternating loss of the probability-margin pipeline:
//   k <  k1, r even: p_max        k < k1, r odd: -p_y        k >= k1: beta*p_max - p_y
// Gradients are the exact derivatives of these terms.
StageEval stage_loss(int k, int k1, int r, const LogitView& v, double beta = 1.0);

// Same alternation in logit space: z_max / -z_y / z_max - z_y.
StageEval md_stage_loss(int k, int k1, int r, const LogitView& v);

}  // namespace pma
