#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "boolmeta/episodes.hpp"
#include "boolmeta/metrics.hpp"
#include "boolmeta/net.hpp"

namespace boolmeta {

class NumericalFailure : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct AdamConfig {
  double lr = 0.001;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamState {
  Vector m;
  Vector v;
  std::int64_t step = 0;

  AdamState() = default;
  explicit AdamState(Eigen::Index n) : m(Vector::Zero(n)), v(Vector::Zero(n)) {}
};

// Bias-corrected Adam update of `params` in place.
void adam_step(Vector& params, AdamState& state, const Vector& grad, const AdamConfig& cfg);

struct InnerTrajectory {
  std::vector<Vector> thetas;         // θ^(0) … θ^(K)
  std::vector<double> support_losses;  // loss at each θ^(k)
  std::vector<Vector> support_grads;   // gradient at θ^(0) … θ^(K-1)
};

// K steps of θ ← θ − α ⊙ ∇L_support(θ).
InnerTrajectory adapt(const Objective& support, const Vector& start, const Vector& alpha, int steps);

enum class MetaOrder { First, Second };

std::string to_string(MetaOrder order);

struct MetaGradient {
  Vector d_theta;
  Vector d_alpha;
  double query_loss = 0.0;
  InnerTrajectory trajectory;
};

// Gradient of L_query(θ^(K)) with respect to (θ_init, α). Second order
// reverse-unrolls every inner step with support-loss HVPs; first order treats
// each inner Jacobian as the identity. `hessian_depth` limits the Hessian terms
// to the last that-many inner steps (negative means all of them).
MetaGradient meta_grad(const Objective& support, const Objective& query, const Vector& theta_init,
                       const Vector& alpha, int steps, MetaOrder order, int hessian_depth = -1);

enum class Regime { Sgd, MetaSgdFirst, MetaSgdSecond };

std::string to_string(Regime r);
Regime regime_from_string(const std::string& s);

struct RegimeConfig {
  Regime regime = Regime::MetaSgdFirst;
  int adapt_steps = 1;
  double outer_lr = 0.001;
  double baseline_lr = 0.001;
  int baseline_steps = 100;
  std::int64_t meta_episodes = 10000;  // outer steps
  int meta_batch = 16;
  double alpha_init = 0.01;
  double alpha_min = 1e-6;
  double alpha_max = 1.0;
  int snapshot_stride = 100;
  int hessian_depth = -1;
  int max_concept_attempts = 100;
  EpisodeShape shape{};

  // Throws std::invalid_argument on out-of-range fields.
  void validate() const;
  MetaOrder order() const { return regime == Regime::MetaSgdSecond ? MetaOrder::Second : MetaOrder::First; }
};

// Identifier used in file names and CSV rows, e.g. "sgd" or "metasgd2_k10".
std::string method_id(const RegimeConfig& cfg);
CellId cell_id(const RegimeConfig& cfg, int features, int max_depth);

struct MetaState {
  Architecture arch;
  Vector theta_init;
  Vector alpha;
  AdamState adam;  // over the concatenation [θ_init; α]
  std::int64_t outer_steps = 0;
};

MetaState init_meta_state(const Architecture& arch, std::uint64_t init_seed, double alpha_init);

struct MetaTrainResult {
  MetaState state;
  RunTrace trace;  // one record per outer step; snapshots of θ_init at the stride
};

using ProgressFn = std::function<void(std::int64_t step, std::int64_t total)>;

// Episodes for outer step t come from make_batch(grammar, t, meta_batch), so
// the grammar seed fixes the training stream.
MetaTrainResult meta_train(const RegimeConfig& cfg, const GrammarConfig& grammar, const Architecture& arch,
                           std::uint64_t init_seed, const ProgressFn& progress = {});

// Applies one outer step of the meta-training loop to `state` and returns the
// record it produces. Exposed for tests.
TraceRecord meta_train_step(MetaState& state, const RegimeConfig& cfg, std::span<const Episode> episodes,
                            std::int64_t step_index, std::int64_t cum_samples_before);

struct BaselineRun {
  RunTrace trace;                 // records for steps 0 … budget
  std::vector<Vector> trajectory;  // parameters after each step, starting at init
  ParamSet final_params;
};

// Fresh He init from `init_seed`, then full-batch Adam on the support set.
BaselineRun eval_baseline(const RegimeConfig& cfg, const Episode& episode, const Architecture& arch,
                          std::uint64_t init_seed, bool keep_trajectory = true);

struct EvalResult {
  std::vector<double> accuracies;
  double mean = 0.0;
  double stderr_mean = 0.0;
};

ParamSet adapt_to_episode(const MetaState& meta, const Episode& episode, int steps);
EvalResult meta_eval(const MetaState& meta, std::span<const Episode> episodes, int steps);

}  // namespace boolmeta
