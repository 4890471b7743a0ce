#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "pma/losses.hpp"
#include "pma/model.hpp"
#include "pma/tensor.hpp"

namespace pma {

enum class StepRule { fixed, cosine };
enum class UpdateRule { sign, adaptive };

enum class AttackKind { pgd, pma, md, multi_target, adaptive };
AttackKind parse_attack_kind(std::string_view name);
std::string attack_kind_name(AttackKind kind);

struct AttackConfig {
  double epsilon = 8.0 / 255.0;
  int steps = 100;        // K
  int stage1_steps = 25;  // K1, in [1, K]
  int restarts = 1;       // n
  LossKind loss{LossTag::pm, 1.0};
  StepRule step_rule = StepRule::cosine;
  double alpha = 0.0;  // fixed-rule step size; 0 means epsilon / 4
  std::uint64_t seed = 0;
  bool early_stop = true;
  int targets = 9;  // multi-target only; clamped to classes - 1
  UpdateRule update_rule = UpdateRule::sign;
  double adaptive_lr = 0.05;
  double adaptive_beta1 = 0.9;
  double adaptive_beta2 = 0.99;
  LossOptions loss_options{};

  double fixed_alpha() const { return alpha > 0.0 ? alpha : epsilon / 4.0; }
  void validate(std::size_t classes) const;
};

struct AttackOutcome {
  Tensor adv_example;  // [1, ...input shape], inside the eps-ball and [0,1]
  bool success = false;
  double best_loss = 0.0;
  int steps_used = 0;
  std::string error;  // non-empty when the sample was aborted
};

// Clamp to the L-inf ball around x_orig, then to the [0,1] domain.
Tensor project_linf(const Tensor& x_adv, const Tensor& x_orig, double eps);

// Two-phase cosine schedule; 2*eps at k=1 and at the k=k1 restart.
// Degenerate k1 == K gives 2*eps for the single stage-2 step.
double cosine_step_size(int k, int k1, int K, double eps);

// Per-iterate trace hook for tests and trajectory export. Called after every
// accepted step; must be thread-safe when the attack runs sharded.
struct StepRecord {
  std::size_t sample = 0;
  int restart = 0;
  int k = 0;
  double stage_value = 0.0;
  double tracked_value = 0.0;  // loss used for best-iterate tracking
  double best_so_far = 0.0;
  const Tensor* iterate = nullptr;
};
using StepObserver = std::function<void(const StepRecord&)>;

// Shared low-level entry: attacks samples of `batch` against `ref_labels`
// (ground truth in standard mode, clean predictions in relative mode).
// stream_indices give each sample's RNG stream identity so subset re-attacks
// reproduce the full-batch noise draws; pass {} for 0..batch-1.
std::vector<AttackOutcome> run_attack(AttackKind kind, const Classifier& model,
                                      const Tensor& inputs,
                                      std::span<const std::uint32_t> ref_labels,
                                      const AttackConfig& cfg,
                                      std::span<const std::size_t> stream_indices = {},
                                      int threads = 1,
                                      const StepObserver& observer = nullptr);

// Classic fixed-step sign PGD with uniform init and best-loss tracking.
std::vector<AttackOutcome> pgd_attack(const Classifier& model, const LabeledBatch& batch,
                                      const AttackConfig& cfg, int threads = 1);

// Two-stage probability-margin pipeline: cosine schedule, restart-alternating
// stage terms, best iterate kept under the full (beta-weighted) pm loss.
std::vector<AttackOutcome> pma_attack(const Classifier& model, const LabeledBatch& batch,
                                      const AttackConfig& cfg, int threads = 1);

// Same pipeline with logit-margin terms; best iterate under the margin loss.
std::vector<AttackOutcome> md_attack(const Classifier& model, const LabeledBatch& batch,
                                     const AttackConfig& cfg, int threads = 1);

// Top-T targeted runs per sample (targets ranked by clean logit), union
// outcome across targets.
std::vector<AttackOutcome> multi_target_attack(const Classifier& model,
                                               const LabeledBatch& batch,
                                               const AttackConfig& cfg, int threads = 1);

// Unconstrained-variable variant: delta = eps * tanh(u), adaptive-moment
// ascent with bias correction.
std::vector<AttackOutcome> adaptive_update_attack(const Classifier& model,
                                                  const LabeledBatch& batch,
                                                  const AttackConfig& cfg, int threads = 1);

}  // namespace pma
