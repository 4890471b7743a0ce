#include "pma/attacks.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "pma/error.hpp"
#include "pma/parallel.hpp"
#include "pma/rng.hpp"

namespace pma {

namespace {

constexpr double kPi = 3.14159265358979323846;
constexpr double kBoundSlack = 1e-6;

void assert_constraints(const Tensor& adv, const Tensor& orig, double eps) {
  for (std::size_t i = 0; i < adv.numel(); ++i) {
    double d = static_cast<double>(adv[i]) - static_cast<double>(orig[i]);
    if (std::abs(d) > eps + kBoundSlack || adv[i] < -kBoundSlack ||
        adv[i] > 1.0 + kBoundSlack) {
      throw Error(ErrorCode::numeric, "iterate escaped the eps-ball or [0,1] domain");
    }
  }
}

Tensor sign_step(const Tensor& x, const Tensor& grad, double alpha) {
  Tensor out = x;
  for (std::size_t i = 0; i < out.numel(); ++i) {
    float g = grad[i];
    float s = g > 0.0f ? 1.0f : (g < 0.0f ? -1.0f : 0.0f);
    out[i] = static_cast<float>(out[i] + alpha * s);
  }
  return out;
}

Tensor logit_grad_tensor(const std::vector<double>& g) {
  Tensor t({1, g.size()});
  for (std::size_t i = 0; i < g.size(); ++i) t[i] = static_cast<float>(g[i]);
  return t;
}

struct SampleTask {
  const Classifier* model;
  const AttackConfig* cfg;
  Tensor x_orig;  // [1, ...], clamped to [0,1]
  std::uint32_t ref_label;
  std::size_t stream_index;
  std::size_t sample_pos;  // position in the attacked batch, for observer
  const StepObserver* observer;
};

struct EvalPoint {
  ForwardTrace trace;
  LogitView view;
  std::uint32_t pred;
};

EvalPoint evaluate(const SampleTask& t, const Tensor& x, int pinned_max = -1) {
  EvalPoint e{forward_trace(*t.model, x), {}, 0};
  std::span<const float> row(e.trace.logits().data(), e.trace.logits().extent(1));
  e.view = make_logit_view(row, t.ref_label, pinned_max);
  e.pred = argmax_row(row.data(), row.size());
  return e;
}

// Stage-term/tracked-loss plan for one restart-based iterative attack.
struct IterPlan {
  std::function<StageEval(int k, int r, const LogitView&)> stage;
  std::function<double(const LogitView&)> tracked;
  std::function<double(int k)> step_size;
  int pinned_max = -1;  // >= 0 pins the adversarial class (targeted runs)
};

// Shared loop for pgd / pma / md / targeted runs: uniform init per restart,
// sign ascent with projection, best-iterate tracking across all restarts.
AttackOutcome run_iterative(const SampleTask& t, const IterPlan& plan) {
  const AttackConfig& cfg = *t.cfg;
  const Tensor& x_orig = t.x_orig;

  AttackOutcome out;
  out.adv_example = project_linf(x_orig, x_orig, cfg.epsilon);

  EvalPoint clean = evaluate(t, out.adv_example, plan.pinned_max);
  double best_val = plan.tracked(clean.view);
  std::uint32_t best_pred = clean.pred;
  out.best_loss = best_val;
  out.success = clean.pred != t.ref_label;
  if (cfg.epsilon == 0.0 || (out.success && cfg.early_stop)) {
    return out;
  }

  Tensor best_adv = out.adv_example;
  bool frozen = false;
  for (int r = 1; r <= cfg.restarts && !frozen; ++r) {
    Rng rng = derive_rng(cfg.seed, {t.stream_index, static_cast<std::uint64_t>(r)});
    Tensor start = x_orig;
    for (std::size_t i = 0; i < start.numel(); ++i) {
      start[i] = static_cast<float>(start[i] + rng.uniform(-cfg.epsilon, cfg.epsilon));
    }
    Tensor cur = project_linf(start, x_orig, cfg.epsilon);
    EvalPoint at = evaluate(t, cur, plan.pinned_max);

    for (int k = 1; k <= cfg.steps; ++k) {
      StageEval eval = plan.stage(k, r, at.view);
      Tensor gz = logit_grad_tensor(eval.grad);
      Tensor gx = backward(*t.model, at.trace, gz, false).input_grad;
      cur = project_linf(sign_step(cur, gx, plan.step_size(k)), x_orig, cfg.epsilon);
      assert_constraints(cur, x_orig, cfg.epsilon);
      ++out.steps_used;

      at = evaluate(t, cur, plan.pinned_max);
      double tracked = plan.tracked(at.view);
      if (tracked > best_val) {
        best_val = tracked;
        best_adv = cur;
        best_pred = at.pred;
      }
      if (t.observer) {
        StepRecord rec{t.sample_pos, r, k, eval.value, tracked, best_val, &cur};
        (*t.observer)(rec);
      }
      if (at.pred != t.ref_label && cfg.early_stop) {
        out.adv_example = cur;
        out.success = true;
        out.best_loss = std::max(best_val, tracked);
        return out;
      }
    }
  }

  out.adv_example = std::move(best_adv);
  out.best_loss = best_val;
  out.success = best_pred != t.ref_label;
  return out;
}

AttackOutcome run_adaptive(const SampleTask& t) {
  const AttackConfig& cfg = *t.cfg;
  const Tensor& x_orig = t.x_orig;
  std::size_t n = x_orig.numel();

  auto make_adv = [&](const std::vector<double>& u) {
    Tensor adv = x_orig;
    for (std::size_t i = 0; i < n; ++i) {
      double v = static_cast<double>(x_orig[i]) + cfg.epsilon * std::tanh(u[i]);
      adv[i] = static_cast<float>(std::clamp(v, 0.0, 1.0));
    }
    return adv;
  };

  // u = 0 start: the initial iterate is the clean sample. Restarts would
  // repeat the identical trajectory, so a single pass is run.
  std::vector<double> u(n, 0.0), m(n, 0.0), v(n, 0.0);
  AttackOutcome out;
  out.adv_example = make_adv(u);

  EvalPoint at = evaluate(t, out.adv_example);
  double best_val = loss_value(cfg.loss, at.view, cfg.loss_options);
  std::uint32_t best_pred = at.pred;
  out.best_loss = best_val;
  out.success = at.pred != t.ref_label;
  if (cfg.epsilon == 0.0 || (out.success && cfg.early_stop)) return out;

  Tensor cur = out.adv_example;
  Tensor best_adv = cur;
  for (int k = 1; k <= cfg.steps; ++k) {
    std::vector<double> gl = loss_grad_logits(cfg.loss, at.view, cfg.loss_options);
    Tensor gx = backward(*t.model, at.trace, logit_grad_tensor(gl), false).input_grad;
    for (std::size_t i = 0; i < n; ++i) {
      double th = std::tanh(u[i]);
      double pre = static_cast<double>(x_orig[i]) + cfg.epsilon * th;
      double dclamp = (pre > 0.0 && pre < 1.0) ? 1.0 : 0.0;
      double g = static_cast<double>(gx[i]) * cfg.epsilon * (1.0 - th * th) * dclamp;
      m[i] = cfg.adaptive_beta1 * m[i] + (1.0 - cfg.adaptive_beta1) * g;
      v[i] = cfg.adaptive_beta2 * v[i] + (1.0 - cfg.adaptive_beta2) * g * g;
      double mhat = m[i] / (1.0 - std::pow(cfg.adaptive_beta1, k));
      double vhat = v[i] / (1.0 - std::pow(cfg.adaptive_beta2, k));
      u[i] += cfg.adaptive_lr * mhat / (std::sqrt(vhat) + 1e-12);
    }
    cur = make_adv(u);
    assert_constraints(cur, x_orig, cfg.epsilon);
    ++out.steps_used;

    at = evaluate(t, cur);
    double tracked = loss_value(cfg.loss, at.view, cfg.loss_options);
    if (tracked > best_val) {
      best_val = tracked;
      best_adv = cur;
      best_pred = at.pred;
    }
    if (t.observer) {
      StepRecord rec{t.sample_pos, 1, k, tracked, tracked, best_val, &cur};
      (*t.observer)(rec);
    }
    if (at.pred != t.ref_label && cfg.early_stop) {
      out.adv_example = cur;
      out.success = true;
      out.best_loss = std::max(best_val, tracked);
      return out;
    }
  }
  out.adv_example = std::move(best_adv);
  out.best_loss = best_val;
  out.success = best_pred != t.ref_label;
  return out;
}

AttackOutcome run_multi_target(const SampleTask& t) {
  const AttackConfig& cfg = *t.cfg;
  std::size_t classes = t.model->spec.classes;
  if (cfg.targets < 1) {
    throw Error(ErrorCode::config, "multi-target attack needs targets >= 1");
  }
  std::size_t t_eff = std::min<std::size_t>(cfg.targets, classes - 1);

  // Rank wrong classes by clean logit, descending; ties to smaller index.
  Tensor clean_logits = forward(*t.model, project_linf(t.x_orig, t.x_orig, cfg.epsilon));
  std::vector<std::uint32_t> order;
  for (std::uint32_t c = 0; c < classes; ++c) {
    if (c != t.ref_label) order.push_back(c);
  }
  std::stable_sort(order.begin(), order.end(), [&](std::uint32_t a, std::uint32_t b) {
    return clean_logits[a] > clean_logits[b];
  });

  AttackConfig target_cfg = cfg;
  target_cfg.stage1_steps = 1;  // single-phase cosine schedule over all K steps

  AttackOutcome merged;
  bool have = false;
  int total_steps = 0;
  for (std::size_t ti = 0; ti < t_eff; ++ti) {
    std::uint32_t target = order[ti];
    SampleTask task = t;
    task.cfg = &target_cfg;

    IterPlan plan;
    plan.pinned_max = static_cast<int>(target);
    plan.stage = [&](int, int, const LogitView& v) -> StageEval {
      return {loss_value(cfg.loss, v, cfg.loss_options),
              loss_grad_logits(cfg.loss, v, cfg.loss_options)};
    };
    plan.tracked = [&](const LogitView& v) { return loss_value(cfg.loss, v, cfg.loss_options); };
    plan.step_size = [&](int k) {
      return cosine_step_size(k, 1, cfg.steps, cfg.epsilon);
    };

    // Per-target noise streams, separated from the untargeted ones.
    AttackConfig seeded = target_cfg;
    seeded.seed = hash_mix(cfg.seed, hash_mix(stream_tag("target"), target));
    task.cfg = &seeded;

    AttackOutcome one = run_iterative(task, plan);
    total_steps += one.steps_used;
    bool better = !have || (one.success && !merged.success) ||
                  (one.success == merged.success && one.best_loss > merged.best_loss);
    if (better) {
      Tensor adv = one.adv_example;
      double best = std::max(have ? merged.best_loss : one.best_loss, one.best_loss);
      merged = std::move(one);
      merged.best_loss = best;
      merged.adv_example = std::move(adv);
    } else {
      merged.best_loss = std::max(merged.best_loss, one.best_loss);
    }
    have = true;
    if (merged.success && cfg.early_stop) break;
  }
  merged.steps_used = total_steps;
  return merged;
}

}  // namespace

AttackKind parse_attack_kind(std::string_view name) {
  if (name == "pgd") return AttackKind::pgd;
  if (name == "pma") return AttackKind::pma;
  if (name == "md") return AttackKind::md;
  if (name == "mt") return AttackKind::multi_target;
  if (name == "adaptive") return AttackKind::adaptive;
  throw Error(ErrorCode::config, "unknown attack '" + std::string(name) + "'");
}

std::string attack_kind_name(AttackKind kind) {
  switch (kind) {
    case AttackKind::pgd: return "pgd";
    case AttackKind::pma: return "pma";
    case AttackKind::md: return "md";
    case AttackKind::multi_target: return "mt";
    case AttackKind::adaptive: return "adaptive";
  }
  return "?";
}

void AttackConfig::validate(std::size_t classes) const {
  if (epsilon < 0.0 || !std::isfinite(epsilon)) {
    throw Error(ErrorCode::config, "epsilon must be >= 0");
  }
  if (steps < 1) throw Error(ErrorCode::config, "steps must be >= 1");
  if (stage1_steps < 1 || stage1_steps > steps) {
    throw Error(ErrorCode::config, "stage-1 steps must lie in [1, steps]");
  }
  if (restarts < 1) throw Error(ErrorCode::config, "restarts must be >= 1");
  if (loss.tag == LossTag::pm_weighted && !(std::isfinite(loss.beta) && loss.beta > 0.0)) {
    throw Error(ErrorCode::config, "beta must be finite and > 0");
  }
  if (classes > 0 && targets >= static_cast<int>(classes)) {
    // Clamped at attack time; kept as a validation hook for strict callers.
  }
}

Tensor project_linf(const Tensor& x_adv, const Tensor& x_orig, double eps) {
  if (!x_adv.same_shape(x_orig)) {
    throw Error(ErrorCode::config, "project_linf shape mismatch: " +
                                       shape_str(x_adv.shape()) + " vs " +
                                       shape_str(x_orig.shape()));
  }
  Tensor out = x_adv;
  for (std::size_t i = 0; i < out.numel(); ++i) {
    double lo = std::max(0.0, static_cast<double>(x_orig[i]) - eps);
    double hi = std::min(1.0, static_cast<double>(x_orig[i]) + eps);
    out[i] = static_cast<float>(std::clamp(static_cast<double>(out[i]), lo, hi));
  }
  return out;
}

double cosine_step_size(int k, int k1, int K, double eps) {
  if (k < 1 || k > K) {
    throw Error(ErrorCode::config, "step index outside [1, K]");
  }
  if (k < k1) {
    return eps * (1.0 + std::cos(static_cast<double>(k - 1) * kPi / k1));
  }
  if (K == k1) return 2.0 * eps;  // degenerate single-step stage 2
  return eps * (1.0 + std::cos(static_cast<double>(k - k1) * kPi / (K - k1)));
}

std::vector<AttackOutcome> run_attack(AttackKind kind, const Classifier& model,
                                      const Tensor& inputs,
                                      std::span<const std::uint32_t> ref_labels,
                                      const AttackConfig& cfg,
                                      std::span<const std::size_t> stream_indices,
                                      int threads, const StepObserver& observer) {
  cfg.validate(model.spec.classes);
  if (kind == AttackKind::pgd && cfg.step_rule != StepRule::fixed) {
    throw Error(ErrorCode::config, "pgd uses the fixed step rule");
  }
  if (kind == AttackKind::pma &&
      !(cfg.loss.tag == LossTag::pm || cfg.loss.tag == LossTag::pm_weighted)) {
    throw Error(ErrorCode::config, "pma requires the pm loss");
  }
  std::size_t batch = inputs.extent(0);
  if (ref_labels.size() != batch) {
    throw Error(ErrorCode::config, "reference label count does not match batch");
  }
  if (!stream_indices.empty() && stream_indices.size() != batch) {
    throw Error(ErrorCode::config, "stream index count does not match batch");
  }

  std::vector<AttackOutcome> outcomes(batch);
  parallel_for(batch, threads, [&](std::size_t s) {
    SampleTask task{&model,
                    &cfg,
                    slice_sample(inputs, s),
                    ref_labels[s],
                    stream_indices.empty() ? s : stream_indices[s],
                    s,
                    observer ? &observer : nullptr};
    try {
      switch (kind) {
        case AttackKind::pgd: {
          IterPlan plan;
          plan.stage = [&](int, int, const LogitView& v) -> StageEval {
            return {loss_value(cfg.loss, v, cfg.loss_options),
                    loss_grad_logits(cfg.loss, v, cfg.loss_options)};
          };
          plan.tracked = [&](const LogitView& v) {
            return loss_value(cfg.loss, v, cfg.loss_options);
          };
          plan.step_size = [&](int) { return cfg.fixed_alpha(); };
          outcomes[s] = run_iterative(task, plan);
          break;
        }
        case AttackKind::pma: {
          double beta = cfg.loss.tag == LossTag::pm_weighted ? cfg.loss.beta : 1.0;
          LossKind full = cfg.loss;
          IterPlan plan;
          plan.stage = [&, beta](int k, int r, const LogitView& v) {
            return stage_loss(k, cfg.stage1_steps, r, v, beta);
          };
          plan.tracked = [&, full](const LogitView& v) { return loss_value(full, v); };
          plan.step_size = [&](int k) {
            return cosine_step_size(k, cfg.stage1_steps, cfg.steps, cfg.epsilon);
          };
          outcomes[s] = run_iterative(task, plan);
          break;
        }
        case AttackKind::md: {
          IterPlan plan;
          plan.stage = [&](int k, int r, const LogitView& v) {
            return md_stage_loss(k, cfg.stage1_steps, r, v);
          };
          plan.tracked = [](const LogitView& v) {
            return v.z[v.max_idx] - v.z[v.y];
          };
          plan.step_size = [&](int k) {
            return cosine_step_size(k, cfg.stage1_steps, cfg.steps, cfg.epsilon);
          };
          outcomes[s] = run_iterative(task, plan);
          break;
        }
        case AttackKind::multi_target:
          outcomes[s] = run_multi_target(task);
          break;
        case AttackKind::adaptive:
          outcomes[s] = run_adaptive(task);
          break;
      }
    } catch (const Error& e) {
      if (e.code() != ErrorCode::numeric) throw;
      AttackOutcome aborted;
      aborted.adv_example = project_linf(task.x_orig, task.x_orig, cfg.epsilon);
      aborted.error = e.what();
      outcomes[s] = std::move(aborted);
    }
  });
  return outcomes;
}

std::vector<AttackOutcome> pgd_attack(const Classifier& model, const LabeledBatch& batch,
                                      const AttackConfig& cfg, int threads) {
  return run_attack(AttackKind::pgd, model, batch.inputs, batch.labels, cfg, {}, threads);
}

std::vector<AttackOutcome> pma_attack(const Classifier& model, const LabeledBatch& batch,
                                      const AttackConfig& cfg, int threads) {
  return run_attack(AttackKind::pma, model, batch.inputs, batch.labels, cfg, {}, threads);
}

std::vector<AttackOutcome> md_attack(const Classifier& model, const LabeledBatch& batch,
                                     const AttackConfig& cfg, int threads) {
  return run_attack(AttackKind::md, model, batch.inputs, batch.labels, cfg, {}, threads);
}

std::vector<AttackOutcome> multi_target_attack(const Classifier& model,
                                               const LabeledBatch& batch,
                                               const AttackConfig& cfg, int threads) {
  return run_attack(AttackKind::multi_target, model, batch.inputs, batch.labels, cfg, {},
                    threads);
}

std::vector<AttackOutcome> adaptive_update_attack(const Classifier& model,
                                                  const LabeledBatch& batch,
                                                  const AttackConfig& cfg, int threads) {
  return run_attack(AttackKind::adaptive, model, batch.inputs, batch.labels, cfg, {},
                    threads);
}

}  // namespace pma
