#include "boolmeta/optim.hpp"

#include <cmath>

namespace boolmeta {

void adam_step(Vector& params, AdamState& state, const Vector& grad, const AdamConfig& cfg) {
  if (grad.size() != params.size() || state.m.size() != params.size() || state.v.size() != params.size())
    throw std::invalid_argument("adam_step: shape mismatch");
  ++state.step;
  state.m = cfg.beta1 * state.m + (1.0 - cfg.beta1) * grad;
  state.v = cfg.beta2 * state.v + (1.0 - cfg.beta2) * grad.cwiseAbs2();
  const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
  params.array() -= cfg.lr * (state.m.array() / c1) / ((state.v.array() / c2).sqrt() + cfg.eps);
}

InnerTrajectory adapt(const Objective& support, const Vector& start, const Vector& alpha, int steps) {
  if (steps < 0) throw std::invalid_argument("adapt: steps must be >= 0");
  if (alpha.size() != start.size()) throw std::invalid_argument("adapt: alpha and theta differ in length");
  InnerTrajectory t;
  t.thetas.reserve(static_cast<std::size_t>(steps) + 1);
  t.thetas.push_back(start);
  Vector grad;
  for (int k = 0; k < steps; ++k) {
    t.support_losses.push_back(support.value_and_grad(t.thetas.back(), grad));
    t.thetas.push_back(t.thetas.back() - alpha.cwiseProduct(grad));
    t.support_grads.push_back(grad);
  }
  t.support_losses.push_back(support.value(t.thetas.back()));
  return t;
}

std::string to_string(MetaOrder order) { return order == MetaOrder::First ? "first" : "second"; }

MetaGradient meta_grad(const Objective& support, const Objective& query, const Vector& theta_init,
                       const Vector& alpha, int steps, MetaOrder order, int hessian_depth) {
  MetaGradient out;
  out.trajectory = adapt(support, theta_init, alpha, steps);
  Vector lambda;
  out.query_loss = query.value_and_grad(out.trajectory.thetas.back(), lambda);
  out.d_alpha = Vector::Zero(alpha.size());
  // Adjoint recursion through θ^(k+1) = θ^(k) − α ⊙ g(θ^(k)):
  //   ∂/∂α   += −g(θ^(k)) ⊙ λ
  //   λ      ← λ − H(θ^(k)) (α ⊙ λ)      (second order only)
  for (int k = steps - 1; k >= 0; --k) {
    out.d_alpha -= out.trajectory.support_grads[k].cwiseProduct(lambda);
    const bool with_hessian =
        order == MetaOrder::Second && (hessian_depth < 0 || steps - k <= hessian_depth);
    if (with_hessian) lambda -= support.hvp(out.trajectory.thetas[k], alpha.cwiseProduct(lambda));
  }
  out.d_theta = std::move(lambda);
  return out;
}

std::string to_string(Regime r) {
  switch (r) {
    case Regime::Sgd: return "sgd";
    case Regime::MetaSgdFirst: return "metasgd_first";
    case Regime::MetaSgdSecond: return "metasgd_second";
  }
  return "unknown";
}

Regime regime_from_string(const std::string& s) {
  if (s == "sgd") return Regime::Sgd;
  if (s == "metasgd_first") return Regime::MetaSgdFirst;
  if (s == "metasgd_second") return Regime::MetaSgdSecond;
  throw std::invalid_argument("unknown regime '" + s + "' (expected sgd, metasgd_first, metasgd_second)");
}

void RegimeConfig::validate() const {
  if (adapt_steps < 0) throw std::invalid_argument("adapt_steps must be >= 0");
  if (!(outer_lr > 0.0) || !(baseline_lr > 0.0)) throw std::invalid_argument("learning rates must be > 0");
  if (baseline_steps < 0) throw std::invalid_argument("baseline_steps must be >= 0");
  if (meta_episodes < 0) throw std::invalid_argument("meta_episodes must be >= 0");
  if (meta_batch < 1) throw std::invalid_argument("meta_batch must be >= 1");
  if (!(alpha_init > 0.0)) throw std::invalid_argument("alpha_init must be > 0");
  if (!(alpha_min > 0.0) || !(alpha_max >= alpha_min)) throw std::invalid_argument("alpha bounds must satisfy 0 < min <= max");
  if (snapshot_stride < 1) throw std::invalid_argument("snapshot_stride must be >= 1");
  if (max_concept_attempts < 1) throw std::invalid_argument("max_concept_attempts must be >= 1");
}

std::string method_id(const RegimeConfig& cfg) {
  switch (cfg.regime) {
    case Regime::Sgd: return "sgd";
    case Regime::MetaSgdFirst: return "metasgd1_k" + std::to_string(cfg.adapt_steps);
    case Regime::MetaSgdSecond: return "metasgd2_k" + std::to_string(cfg.adapt_steps);
  }
  return "unknown";
}

CellId cell_id(const RegimeConfig& cfg, int features, int max_depth) {
  const bool meta = cfg.regime != Regime::Sgd;
  return {method_id(cfg), features, max_depth, meta ? cfg.adapt_steps : 0, meta ? to_string(cfg.order()) : "none"};
}

MetaState init_meta_state(const Architecture& arch, std::uint64_t init_seed, double alpha_init) {
  Rng rng(init_seed);
  MetaState s;
  s.arch = arch;
  s.theta_init = std::move(init_params(arch, rng).flat());
  s.alpha = Vector::Constant(s.theta_init.size(), alpha_init);
  s.adam = AdamState(2 * s.theta_init.size());
  return s;
}

TraceRecord meta_train_step(MetaState& state, const RegimeConfig& cfg, std::span<const Episode> episodes,
                            std::int64_t step_index, std::int64_t cum_samples_before) {
  const Eigen::Index n = state.theta_init.size();
  Vector grad = Vector::Zero(2 * n);
  TraceRecord rec;
  rec.episode = step_index + 1;
  std::int64_t samples = 0;
  // Fixed episode order keeps the reduction bit-stable.
  for (const auto& e : episodes) {
    const NetObjective support(state.arch, to_batch(e.support));
    const NetObjective query(state.arch, to_batch(e.query));
    const auto mg = meta_grad(support, query, state.theta_init, state.alpha, cfg.adapt_steps, cfg.order(),
                              cfg.hessian_depth);
    grad.head(n) += mg.d_theta;
    grad.tail(n) += mg.d_alpha;
    rec.support_loss += mg.trajectory.support_losses.back();
    rec.query_loss += mg.query_loss;
    rec.query_acc += accuracy(ParamSet(state.arch, mg.trajectory.thetas.back()), query.batch());
    samples += static_cast<std::int64_t>(e.support.size() + e.query.size());
  }
  const double inv = 1.0 / static_cast<double>(episodes.size());
  grad *= inv;
  rec.support_loss *= inv;
  rec.query_loss *= inv;
  rec.query_acc *= inv;
  rec.cum_samples = cum_samples_before + samples;
  if (!grad.allFinite())
    throw NumericalFailure("non-finite meta-gradient at outer step " + std::to_string(step_index));

  Vector params(2 * n);
  params << state.theta_init, state.alpha;
  adam_step(params, state.adam, grad, AdamConfig{cfg.outer_lr});
  state.theta_init = params.head(n);
  state.alpha = params.tail(n).cwiseMax(cfg.alpha_min).cwiseMin(cfg.alpha_max);
  ++state.outer_steps;
  return rec;
}

MetaTrainResult meta_train(const RegimeConfig& cfg, const GrammarConfig& grammar, const Architecture& arch,
                           std::uint64_t init_seed, const ProgressFn& progress) {
  cfg.validate();
  if (cfg.regime == Regime::Sgd) throw std::invalid_argument("meta_train: regime must be a Meta-SGD variant");
  MetaTrainResult out;
  out.state = init_meta_state(arch, init_seed, cfg.alpha_init);
  out.trace.cell = cell_id(cfg, grammar.features, grammar.max_depth);
  out.trace.seed = init_seed;
  out.trace.snapshots.push_back(out.state.theta_init);
  std::int64_t cum = 0;
  for (std::int64_t step = 0; step < cfg.meta_episodes; ++step) {
    const auto batch = make_batch(grammar, static_cast<std::uint64_t>(step), cfg.meta_batch,
                                  cfg.max_concept_attempts, cfg.shape);
    const auto rec = meta_train_step(out.state, cfg, batch.episodes, step, cum);
    cum = rec.cum_samples;
    out.trace.records.push_back(rec);
    if ((step + 1) % cfg.snapshot_stride == 0 || step + 1 == cfg.meta_episodes)
      out.trace.snapshots.push_back(out.state.theta_init);
    if (progress) progress(step + 1, cfg.meta_episodes);
  }
  return out;
}

BaselineRun eval_baseline(const RegimeConfig& cfg, const Episode& episode, const Architecture& arch,
                          std::uint64_t init_seed, bool keep_trajectory) {
  cfg.validate();
  Rng rng(init_seed);
  ParamSet params = init_params(arch, rng);
  const Batch support = to_batch(episode.support);
  const Batch query = to_batch(episode.query);
  BaselineRun run;
  run.trace.cell = cell_id(RegimeConfig{Regime::Sgd}, episode.features, episode.max_depth);
  run.trace.seed = init_seed;
  AdamState adam(params.size());
  const AdamConfig adam_cfg{cfg.baseline_lr};
  ParamSet grad(arch);
  const auto per_step = static_cast<std::int64_t>(episode.support.size());
  for (int step = 0;; ++step) {
    const double support_loss = loss_and_grad(params, support, grad).mean;
    const auto q = loss(params, query);
    run.trace.records.push_back({step, step * per_step, support_loss, q.mean, accuracy(q.probs, query.labels)});
    if (keep_trajectory) run.trajectory.push_back(params.flat());
    if (step == cfg.baseline_steps) break;
    adam_step(params.flat(), adam, grad.flat(), adam_cfg);
  }
  run.final_params = std::move(params);
  return run;
}

ParamSet adapt_to_episode(const MetaState& meta, const Episode& episode, int steps) {
  const NetObjective support(meta.arch, to_batch(episode.support));
  auto t = adapt(support, meta.theta_init, meta.alpha, steps);
  return ParamSet(meta.arch, std::move(t.thetas.back()));
}

EvalResult meta_eval(const MetaState& meta, std::span<const Episode> episodes, int steps) {
  EvalResult r;
  r.accuracies.reserve(episodes.size());
  for (const auto& e : episodes)
    r.accuracies.push_back(accuracy(adapt_to_episode(meta, e, steps), to_batch(e.query)));
  r.mean = mean(r.accuracies);
  r.stderr_mean = standard_error(r.accuracies);
  return r;
}

}  // namespace boolmeta
