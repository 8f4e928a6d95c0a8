#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "boolmeta/episodes.hpp"
#include "boolmeta/objective.hpp"
#include "boolmeta/rng.hpp"

namespace boolmeta {

// Fully connected ReLU network with a single sigmoid output unit.
// The default reads "5-layer, 128 hidden units" as four hidden layers plus
// the output layer; hidden_layers = 5 selects the alternative reading.
struct Architecture {
  int features = 8;
  int hidden_width = 128;
  int hidden_layers = 4;

  int num_layers() const { return hidden_layers + 1; }
  int fan_in(int layer) const { return layer == 0 ? features : hidden_width; }
  int fan_out(int layer) const { return layer == hidden_layers ? 1 : hidden_width; }
  Eigen::Index param_count() const;

  bool operator==(const Architecture&) const = default;
};

struct LayerSlot {
  Eigen::Index weight_offset = 0;  // column-major fan_out x fan_in
  Eigen::Index bias_offset = 0;
  int rows = 0;
  int cols = 0;
};

std::vector<LayerSlot> layer_layout(const Architecture& arch);

// Block boundaries in the flat vector: [begin, end) per weight matrix and per bias.
std::vector<std::pair<Eigen::Index, Eigen::Index>> parameter_blocks(const Architecture& arch);

// All weights and biases as one flat vector; weight()/bias() are views into it.
class ParamSet {
 public:
  ParamSet() = default;
  explicit ParamSet(const Architecture& arch);
  ParamSet(const Architecture& arch, Vector flat);

  const Architecture& arch() const { return arch_; }
  Eigen::Index size() const { return values_.size(); }
  const std::vector<LayerSlot>& layout() const { return layout_; }

  Vector& flat() { return values_; }
  const Vector& flat() const { return values_; }

  Eigen::Map<Matrix> weight(int layer);
  Eigen::Map<const Matrix> weight(int layer) const;
  Eigen::Map<Vector> bias(int layer);
  Eigen::Map<const Vector> bias(int layer) const;

 private:
  Architecture arch_;
  std::vector<LayerSlot> layout_;
  Vector values_;
};

enum class InitScheme { HeNormal, Zero };

// He fan-in init: weights ~ N(0, 2/fan_in), biases zero.
ParamSet init_params(const Architecture& arch, Rng& rng, InitScheme scheme = InitScheme::HeNormal);

// Inputs stored one example per column.
struct Batch {
  Matrix inputs;  // features x batch
  Vector labels;  // 0/1

  Eigen::Index size() const { return inputs.cols(); }
};

Batch to_batch(std::span<const Example> examples);

inline constexpr double kProbClamp = 1e-7;

struct ForwardTape {
  std::vector<Matrix> pre;   // z_l per layer
  std::vector<Matrix> post;  // a_0 = inputs, a_l = relu(z_l) for hidden layers
  Vector raw;                // sigmoid(z_out) before clamping
  Vector probs;              // clamped to [kProbClamp, 1 - kProbClamp]
};

// Throws std::invalid_argument on a shape mismatch.
ForwardTape forward(const ParamSet& p, const Matrix& inputs);

struct LossValue {
  double mean = 0.0;
  Vector probs;
};

LossValue loss(const ParamSet& p, const Batch& batch);
// Exact gradient of mean binary cross-entropy by reverse mode.
LossValue loss_and_grad(const ParamSet& p, const Batch& batch, ParamSet& grad);
// Hessian-vector product by forward-over-reverse differentiation.
Vector hvp(const ParamSet& p, const Batch& batch, const Vector& v);

// Fraction of rows where (prob >= 0.5) matches the label.
double accuracy(const Vector& probs, const Vector& labels);
double accuracy(const ParamSet& p, const Batch& batch);

// Mean BCE loss of a fixed architecture on a fixed batch, as an Objective.
class NetObjective final : public Objective {
 public:
  NetObjective(Architecture arch, Batch batch);

  Eigen::Index dimension() const override { return arch_.param_count(); }
  double value(const Vector& theta) const override;
  double value_and_grad(const Vector& theta, Vector& grad) const override;
  Vector hvp(const Vector& theta, const Vector& v) const override;

  const Architecture& arch() const { return arch_; }
  const Batch& batch() const { return batch_; }

 private:
  void require_size(const Vector& theta) const;

  Architecture arch_;
  std::vector<LayerSlot> layout_;
  Batch batch_;
};

// Checkpoint: 8-byte magic, little-endian header (F, width, hidden layers, n,
// seed), then n little-endian IEEE-754 doubles.
struct CheckpointHeader {
  Architecture arch;
  std::uint64_t seed = 0;
};

void write_checkpoint(const std::filesystem::path& path, const ParamSet& p, std::uint64_t seed);
ParamSet read_checkpoint(const std::filesystem::path& path, CheckpointHeader* header = nullptr);

}  // namespace boolmeta
