#include "boolmeta/net.hpp"

#include <array>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <stdexcept>

namespace boolmeta {

Eigen::Index Architecture::param_count() const {
  Eigen::Index n = 0;
  for (int l = 0; l < num_layers(); ++l)
    n += static_cast<Eigen::Index>(fan_out(l)) * fan_in(l) + fan_out(l);
  return n;
}

std::vector<LayerSlot> layer_layout(const Architecture& arch) {
  std::vector<LayerSlot> slots;
  Eigen::Index offset = 0;
  for (int l = 0; l < arch.num_layers(); ++l) {
    LayerSlot s;
    s.rows = arch.fan_out(l);
    s.cols = arch.fan_in(l);
    s.weight_offset = offset;
    offset += static_cast<Eigen::Index>(s.rows) * s.cols;
    s.bias_offset = offset;
    offset += s.rows;
    slots.push_back(s);
  }
  return slots;
}

std::vector<std::pair<Eigen::Index, Eigen::Index>> parameter_blocks(const Architecture& arch) {
  std::vector<std::pair<Eigen::Index, Eigen::Index>> blocks;
  for (const auto& s : layer_layout(arch)) {
    blocks.emplace_back(s.weight_offset, s.bias_offset);
    blocks.emplace_back(s.bias_offset, s.bias_offset + s.rows);
  }
  return blocks;
}

ParamSet::ParamSet(const Architecture& arch) : ParamSet(arch, Vector::Zero(arch.param_count())) {}

ParamSet::ParamSet(const Architecture& arch, Vector flat)
    : arch_(arch), layout_(layer_layout(arch)), values_(std::move(flat)) {
  if (values_.size() != arch_.param_count())
    throw std::invalid_argument("ParamSet: flat vector has " + std::to_string(values_.size()) + " values, expected " +
                                std::to_string(arch_.param_count()));
}

Eigen::Map<Matrix> ParamSet::weight(int layer) {
  const auto& s = layout_.at(layer);
  return {values_.data() + s.weight_offset, s.rows, s.cols};
}

Eigen::Map<const Matrix> ParamSet::weight(int layer) const {
  const auto& s = layout_.at(layer);
  return {values_.data() + s.weight_offset, s.rows, s.cols};
}

Eigen::Map<Vector> ParamSet::bias(int layer) {
  const auto& s = layout_.at(layer);
  return {values_.data() + s.bias_offset, s.rows};
}

Eigen::Map<const Vector> ParamSet::bias(int layer) const {
  const auto& s = layout_.at(layer);
  return {values_.data() + s.bias_offset, s.rows};
}

ParamSet init_params(const Architecture& arch, Rng& rng, InitScheme scheme) {
  ParamSet p(arch);
  if (scheme == InitScheme::Zero) return p;
  for (int l = 0; l < arch.num_layers(); ++l) {
    const double scale = std::sqrt(2.0 / arch.fan_in(l));
    auto w = p.weight(l);
    for (Eigen::Index j = 0; j < w.cols(); ++j)
      for (Eigen::Index i = 0; i < w.rows(); ++i) w(i, j) = scale * rng.normal();
  }
  return p;
}

Batch to_batch(std::span<const Example> examples) {
  Batch b;
  if (examples.empty()) return b;
  const auto width = static_cast<Eigen::Index>(examples.front().x.size());
  b.inputs.resize(width, static_cast<Eigen::Index>(examples.size()));
  b.labels.resize(static_cast<Eigen::Index>(examples.size()));
  for (std::size_t j = 0; j < examples.size(); ++j) {
    const auto& e = examples[j];
    if (static_cast<Eigen::Index>(e.x.size()) != width) throw std::invalid_argument("to_batch: ragged rows");
    for (Eigen::Index i = 0; i < width; ++i) b.inputs(i, static_cast<Eigen::Index>(j)) = e.x[i];
    b.labels(static_cast<Eigen::Index>(j)) = e.y;
  }
  return b;
}

namespace {

double sigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }

bool inside_clamp(double raw) { return raw > kProbClamp && raw < 1.0 - kProbClamp; }

void require_batch(const Batch& batch) {
  if (batch.size() == 0) throw std::invalid_argument("loss: empty batch");
  if (batch.labels.size() != batch.size()) throw std::invalid_argument("loss: label count differs from batch size");
}

// Read-only layer views over a flat parameter buffer, so callers holding a
// plain vector do not have to copy it into a ParamSet.
struct View {
  const std::vector<LayerSlot>& layout;
  const double* data;

  Eigen::Map<const Matrix> weight(int l) const {
    const auto& s = layout[l];
    return {data + s.weight_offset, s.rows, s.cols};
  }
  Eigen::Map<const Vector> bias(int l) const {
    const auto& s = layout[l];
    return {data + s.bias_offset, s.rows};
  }
};

struct MutView {
  const std::vector<LayerSlot>& layout;
  double* data;

  Eigen::Map<Matrix> weight(int l) const {
    const auto& s = layout[l];
    return {data + s.weight_offset, s.rows, s.cols};
  }
  Eigen::Map<Vector> bias(int l) const {
    const auto& s = layout[l];
    return {data + s.bias_offset, s.rows};
  }
};

ForwardTape forward_impl(const Architecture& arch, const View& p, const Matrix& inputs) {
  if (inputs.rows() != arch.features)
    throw std::invalid_argument("forward: input width " + std::to_string(inputs.rows()) + " differs from F=" +
                                std::to_string(arch.features));
  const int layers = arch.num_layers();
  ForwardTape tape;
  tape.pre.reserve(layers);
  tape.post.reserve(layers);
  tape.post.push_back(inputs);
  for (int l = 0; l < layers; ++l) {
    Matrix z = p.weight(l) * tape.post.back();
    z.colwise() += p.bias(l);
    if (l + 1 < layers) tape.post.push_back(z.cwiseMax(0.0));
    tape.pre.push_back(std::move(z));
  }
  const Matrix& out = tape.pre.back();
  tape.raw.resize(out.cols());
  tape.probs.resize(out.cols());
  for (Eigen::Index j = 0; j < out.cols(); ++j) {
    tape.raw(j) = sigmoid(out(0, j));
    tape.probs(j) = std::clamp(tape.raw(j), kProbClamp, 1.0 - kProbClamp);
  }
  return tape;
}

// d(mean BCE)/dz_out, zero where the probability is clamped.
Matrix output_delta(const ForwardTape& tape, const Vector& labels) {
  const auto n = static_cast<double>(labels.size());
  Matrix delta(1, labels.size());
  for (Eigen::Index j = 0; j < labels.size(); ++j)
    delta(0, j) = inside_clamp(tape.raw(j)) ? (tape.raw(j) - labels(j)) / n : 0.0;
  return delta;
}

double mean_bce(const Vector& probs, const Vector& labels) {
  double total = 0.0;
  for (Eigen::Index j = 0; j < labels.size(); ++j)
    total -= labels(j) * std::log(probs(j)) + (1.0 - labels(j)) * std::log(1.0 - probs(j));
  return total / static_cast<double>(labels.size());
}

LossValue grad_impl(const Architecture& arch, const View& p, const Batch& batch, const MutView& grad) {
  require_batch(batch);
  auto tape = forward_impl(arch, p, batch.inputs);
  Matrix delta = output_delta(tape, batch.labels);
  for (int l = arch.num_layers() - 1; l >= 0; --l) {
    grad.weight(l).noalias() = delta * tape.post[l].transpose();
    grad.bias(l) = delta.rowwise().sum();
    if (l > 0) {
      Matrix back = p.weight(l).transpose() * delta;
      delta = (tape.pre[l - 1].array() > 0.0).select(back, 0.0);
    }
  }
  return {mean_bce(tape.probs, batch.labels), std::move(tape.probs)};
}

void hvp_impl(const Architecture& arch, const View& p, const View& dir, const Batch& batch, const MutView& out) {
  require_batch(batch);
  const int layers = arch.num_layers();
  const auto tape = forward_impl(arch, p, batch.inputs);
  std::vector<Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic>> active(layers);
  for (int l = 0; l + 1 < layers; ++l) active[l] = tape.pre[l].array() > 0.0;

  // Forward tangents of pre-activations and activations; the input tangent is zero.
  std::vector<Matrix> dz(layers);
  std::vector<Matrix> da(layers);
  for (int l = 0; l < layers; ++l) {
    dz[l].noalias() = dir.weight(l) * tape.post[l];
    if (l > 0) dz[l].noalias() += p.weight(l) * da[l];
    dz[l].colwise() += dir.bias(l);
    if (l + 1 < layers) da[l + 1] = active[l].select(dz[l], 0.0);
  }

  const auto n = static_cast<double>(batch.size());
  Matrix delta = output_delta(tape, batch.labels);
  Matrix ddelta(1, batch.size());
  for (Eigen::Index j = 0; j < batch.size(); ++j) {
    const double s = tape.raw(j);
    ddelta(0, j) = inside_clamp(s) ? s * (1.0 - s) * dz[layers - 1](0, j) / n : 0.0;
  }

  for (int l = layers - 1; l >= 0; --l) {
    auto w = out.weight(l);
    w.noalias() = ddelta * tape.post[l].transpose();
    if (l > 0) w.noalias() += delta * da[l].transpose();
    out.bias(l) = ddelta.rowwise().sum();
    if (l > 0) {
      Matrix next = dir.weight(l).transpose() * delta;
      next.noalias() += p.weight(l).transpose() * ddelta;
      Matrix back = p.weight(l).transpose() * delta;
      ddelta = active[l - 1].select(next, 0.0);
      delta = active[l - 1].select(back, 0.0);
    }
  }
}

}  // namespace

ForwardTape forward(const ParamSet& p, const Matrix& inputs) {
  return forward_impl(p.arch(), View{p.layout(), p.flat().data()}, inputs);
}

LossValue loss(const ParamSet& p, const Batch& batch) {
  require_batch(batch);
  auto tape = forward(p, batch.inputs);
  return {mean_bce(tape.probs, batch.labels), std::move(tape.probs)};
}

LossValue loss_and_grad(const ParamSet& p, const Batch& batch, ParamSet& grad) {
  if (!(grad.arch() == p.arch())) grad = ParamSet(p.arch());
  return grad_impl(p.arch(), View{p.layout(), p.flat().data()}, batch, MutView{grad.layout(), grad.flat().data()});
}

Vector hvp(const ParamSet& p, const Batch& batch, const Vector& v) {
  if (v.size() != p.size())
    throw std::invalid_argument("hvp: direction has " + std::to_string(v.size()) + " entries, expected " +
                                std::to_string(p.size()));
  Vector out(p.size());
  hvp_impl(p.arch(), View{p.layout(), p.flat().data()}, View{p.layout(), v.data()}, batch,
           MutView{p.layout(), out.data()});
  return out;
}

double accuracy(const Vector& probs, const Vector& labels) {
  if (labels.size() == 0) throw std::invalid_argument("accuracy: empty batch");
  int correct = 0;
  for (Eigen::Index j = 0; j < labels.size(); ++j)
    correct += ((probs(j) >= 0.5) == (labels(j) >= 0.5)) ? 1 : 0;
  return static_cast<double>(correct) / static_cast<double>(labels.size());
}

double accuracy(const ParamSet& p, const Batch& batch) {
  require_batch(batch);
  return accuracy(forward(p, batch.inputs).probs, batch.labels);
}

NetObjective::NetObjective(Architecture arch, Batch batch)
    : arch_(arch), layout_(layer_layout(arch)), batch_(std::move(batch)) {}

void NetObjective::require_size(const Vector& theta) const {
  if (theta.size() != arch_.param_count())
    throw std::invalid_argument("NetObjective: parameter vector has " + std::to_string(theta.size()) +
                                " entries, expected " + std::to_string(arch_.param_count()));
}

double NetObjective::value(const Vector& theta) const {
  require_size(theta);
  require_batch(batch_);
  return mean_bce(forward_impl(arch_, View{layout_, theta.data()}, batch_.inputs).probs, batch_.labels);
}

double NetObjective::value_and_grad(const Vector& theta, Vector& grad) const {
  require_size(theta);
  grad.resize(theta.size());
  return grad_impl(arch_, View{layout_, theta.data()}, batch_, MutView{layout_, grad.data()}).mean;
}

Vector NetObjective::hvp(const Vector& theta, const Vector& v) const {
  require_size(theta);
  require_size(v);
  Vector out(theta.size());
  hvp_impl(arch_, View{layout_, theta.data()}, View{layout_, v.data()}, batch_, MutView{layout_, out.data()});
  return out;
}

namespace {

constexpr std::array<char, 8> kMagic{'B', 'M', 'P', 'A', 'R', 'A', 'M', '1'};

template <typename T>
void put_le(std::ostream& out, T value) {
  static_assert(std::endian::native == std::endian::little, "checkpoint IO assumes a little-endian host");
  out.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

template <typename T>
T get_le(std::istream& in) {
  T value{};
  in.read(reinterpret_cast<char*>(&value), sizeof(T));
  if (!in) throw std::runtime_error("checkpoint: truncated header");
  return value;
}

}  // namespace

void write_checkpoint(const std::filesystem::path& path, const ParamSet& p, std::uint64_t seed) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("checkpoint: cannot open " + path.string() + " for writing");
  out.write(kMagic.data(), kMagic.size());
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(p.arch().features));
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(p.arch().hidden_width));
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(p.arch().hidden_layers));
  put_le<std::uint32_t>(out, 0);
  put_le<std::uint64_t>(out, static_cast<std::uint64_t>(p.size()));
  put_le<std::uint64_t>(out, seed);
  out.write(reinterpret_cast<const char*>(p.flat().data()),
            static_cast<std::streamsize>(p.size() * static_cast<Eigen::Index>(sizeof(double))));
  if (!out) throw std::runtime_error("checkpoint: write failed for " + path.string());
}

ParamSet read_checkpoint(const std::filesystem::path& path, CheckpointHeader* header) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("checkpoint: cannot open " + path.string());
  std::array<char, 8> magic{};
  in.read(magic.data(), magic.size());
  if (!in || magic != kMagic) throw std::runtime_error("checkpoint: bad magic in " + path.string());
  CheckpointHeader h;
  h.arch.features = static_cast<int>(get_le<std::uint32_t>(in));
  h.arch.hidden_width = static_cast<int>(get_le<std::uint32_t>(in));
  h.arch.hidden_layers = static_cast<int>(get_le<std::uint32_t>(in));
  get_le<std::uint32_t>(in);
  const auto n = get_le<std::uint64_t>(in);
  h.seed = get_le<std::uint64_t>(in);
  if (static_cast<Eigen::Index>(n) != h.arch.param_count())
    throw std::runtime_error("checkpoint: parameter count does not match architecture in " + path.string());
  Vector values(static_cast<Eigen::Index>(n));
  in.read(reinterpret_cast<char*>(values.data()), static_cast<std::streamsize>(n * sizeof(double)));
  if (!in) throw std::runtime_error("checkpoint: truncated values in " + path.string());
  if (header) *header = h;
  return ParamSet(h.arch, std::move(values));
}

}  // namespace boolmeta
