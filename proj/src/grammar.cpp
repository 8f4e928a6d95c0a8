#include "boolmeta/grammar.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <limits>

namespace boolmeta {

void GrammarConfig::validate() const {
  if (features < 1) throw std::invalid_argument("grammar: features must be >= 1");
  if (max_depth < 1) throw std::invalid_argument("grammar: max_depth must be >= 1");
  double sum = 0.0;
  for (double p : probs.as_array()) {
    if (!(p >= 0.0)) throw std::invalid_argument("grammar: production probabilities must be nonnegative");
    sum += p;
  }
  if (std::abs(sum - 1.0) > std::numeric_limits<double>::epsilon())
    throw std::invalid_argument("grammar: production probabilities must sum to 1");
}

int ConceptBuilder::open(NodeKind kind, int feature) {
  nodes_.push_back({kind, feature, -1, -1});
  return static_cast<int>(nodes_.size()) - 1;
}

Concept ConceptBuilder::finish() && {
  Concept c;
  c.nodes_ = std::move(nodes_);
  return c;
}

namespace {

void append_shifted(std::vector<Concept::Node>& out, const Concept& c) {
  const int shift = static_cast<int>(out.size());
  for (Concept::Node n : c.nodes()) {
    if (n.lhs >= 0) n.lhs += shift;
    if (n.rhs >= 0) n.rhs += shift;
    out.push_back(n);
  }
}

}  // namespace

Concept Concept::binary(NodeKind kind, const Concept& lhs, const Concept& rhs) {
  Concept c;
  c.nodes_.push_back({kind, 0, 1, static_cast<int>(lhs.size()) + 1});
  append_shifted(c.nodes_, lhs);
  append_shifted(c.nodes_, rhs);
  return c;
}

Concept Concept::literal(int feature) {
  ConceptBuilder b;
  b.open(NodeKind::Literal, feature);
  return std::move(b).finish();
}

Concept Concept::negation(const Concept& child) {
  Concept c;
  c.nodes_.push_back({NodeKind::Not, 0, 1, -1});
  append_shifted(c.nodes_, child);
  return c;
}

Concept Concept::conjunction(const Concept& lhs, const Concept& rhs) { return binary(NodeKind::And, lhs, rhs); }

Concept Concept::disjunction(const Concept& lhs, const Concept& rhs) { return binary(NodeKind::Or, lhs, rhs); }

ComplexityClass classify(int literal_count) {
  if (literal_count >= 7) return ComplexityClass::Complex;
  if (literal_count >= 4) return ComplexityClass::Medium;
  return ComplexityClass::Simple;
}

std::string_view to_string(ComplexityClass c) {
  switch (c) {
    case ComplexityClass::Simple: return "simple";
    case ComplexityClass::Medium: return "medium";
    case ComplexityClass::Complex: return "complex";
  }
  return "unknown";
}

namespace {

int depth_of(const Concept& c, int node) {
  const auto& n = c.nodes()[node];
  switch (n.kind) {
    case NodeKind::Literal: return 1;
    case NodeKind::Not: return 1 + depth_of(c, n.lhs);
    default: return 1 + std::max(depth_of(c, n.lhs), depth_of(c, n.rhs));
  }
}

}  // namespace

ConceptStats concept_stats(const Concept& c) {
  ConceptStats s;
  s.depth = c.size() == 0 ? 0 : depth_of(c, 0);
  s.literal_count = static_cast<int>(
      std::count_if(c.nodes().begin(), c.nodes().end(), [](const auto& n) { return n.kind == NodeKind::Literal; }));
  s.complexity = classify(s.literal_count);
  return s;
}

namespace {

struct Sampler {
  const GrammarConfig& cfg;
  Rng& rng;
  ProductionCounts* counts;
  ConceptBuilder out;

  NodeKind draw(int depth) {
    if (depth >= cfg.max_depth) {
      if (counts) ++counts->forced;
      return NodeKind::Literal;
    }
    const auto p = cfg.probs.as_array();
    const double u = rng.uniform();
    double acc = 0.0;
    std::size_t pick = p.size() - 1;
    for (std::size_t i = 0; i < p.size(); ++i) {
      acc += p[i];
      if (u < acc) {
        pick = i;
        break;
      }
    }
    if (counts) ++counts->free[pick];
    return kProductions[pick];
  }

  int expand(int depth) {
    const NodeKind kind = draw(depth);
    if (kind == NodeKind::Literal) {
      const int feature = 1 + static_cast<int>(rng.below(static_cast<std::uint64_t>(cfg.features)));
      return out.open(NodeKind::Literal, feature);
    }
    const int self = out.open(kind);
    out.set_lhs(self, expand(depth + 1));
    if (kind != NodeKind::Not) out.set_rhs(self, expand(depth + 1));
    return self;
  }
};

}  // namespace

Concept sample_concept(const GrammarConfig& cfg, Rng& rng, ProductionCounts* counts) {
  cfg.validate();
  Sampler s{cfg, rng, counts, {}};
  s.expand(1);
  return std::move(s.out).finish();
}

namespace {

bool eval_node(const Concept& c, int node, std::span<const std::uint8_t> x) {
  const auto& n = c.nodes()[node];
  switch (n.kind) {
    case NodeKind::Literal:
      if (n.feature < 1 || static_cast<std::size_t>(n.feature) > x.size())
        throw std::out_of_range("evaluate: literal x" + std::to_string(n.feature) + " exceeds input length " +
                                std::to_string(x.size()));
      return x[n.feature - 1] != 0;
    case NodeKind::Not: return !eval_node(c, n.lhs, x);
    case NodeKind::And: return eval_node(c, n.lhs, x) && eval_node(c, n.rhs, x);
    case NodeKind::Or: return eval_node(c, n.lhs, x) || eval_node(c, n.rhs, x);
  }
  return false;
}

void write_node(const Concept& c, int node, std::string& out) {
  const auto& n = c.nodes()[node];
  switch (n.kind) {
    case NodeKind::Literal:
      out += 'x';
      out += std::to_string(n.feature);
      return;
    case NodeKind::Not:
      out += '!';
      write_node(c, n.lhs, out);
      return;
    case NodeKind::And:
    case NodeKind::Or:
      out += '(';
      write_node(c, n.lhs, out);
      out += n.kind == NodeKind::And ? " & " : " | ";
      write_node(c, n.rhs, out);
      out += ')';
      return;
  }
}

class Parser {
 public:
  explicit Parser(std::string_view text) : text_(text) {}

  Concept run() {
    if (text_.empty()) fail("empty input");
    parse_expr();
    skip_space();
    if (pos_ != text_.size()) fail("trailing characters");
    return std::move(out_).finish();
  }

 private:
  [[noreturn]] void fail(const std::string& msg) const {
    throw ParseError("parse error at " + std::to_string(pos_) + ": " + msg, pos_);
  }

  void skip_space() {
    while (pos_ < text_.size() && std::isspace(static_cast<unsigned char>(text_[pos_]))) ++pos_;
  }

  int parse_expr() {
    skip_space();
    if (pos_ >= text_.size()) fail("unexpected end of input");
    const char ch = text_[pos_];
    if (ch == 'x') {
      ++pos_;
      const std::size_t start = pos_;
      long value = 0;
      while (pos_ < text_.size() && std::isdigit(static_cast<unsigned char>(text_[pos_]))) {
        value = value * 10 + (text_[pos_] - '0');
        if (value > std::numeric_limits<int>::max()) fail("literal index too large");
        ++pos_;
      }
      if (pos_ == start) fail("expected literal index after 'x'");
      if (value < 1) fail("literal index must be >= 1");
      return out_.open(NodeKind::Literal, static_cast<int>(value));
    }
    if (ch == '!') {
      ++pos_;
      const int self = out_.open(NodeKind::Not);
      out_.set_lhs(self, parse_expr());
      return self;
    }
    if (ch == '(') {
      ++pos_;
      // Operator kind is unknown until the infix symbol is read.
      const int self = out_.open(NodeKind::And);
      out_.set_lhs(self, parse_expr());
      skip_space();
      if (pos_ >= text_.size()) fail("expected '&' or '|'");
      const char op = text_[pos_];
      if (op != '&' && op != '|') fail("expected '&' or '|'");
      ++pos_;
      out_.set_kind(self, op == '&' ? NodeKind::And : NodeKind::Or);
      out_.set_rhs(self, parse_expr());
      skip_space();
      if (pos_ >= text_.size() || text_[pos_] != ')') fail("expected ')'");
      ++pos_;
      return self;
    }
    fail(std::string("unexpected character '") + ch + "'");
  }

  std::string_view text_;
  std::size_t pos_ = 0;
  ConceptBuilder out_;
};

}  // namespace

bool evaluate(const Concept& c, std::span<const std::uint8_t> x) { return eval_node(c, 0, x); }

ParseError::ParseError(const std::string& what, std::size_t position)
    : std::runtime_error(what), position_(position) {}

std::string to_text(const Concept& c) {
  std::string out;
  if (c.size() > 0) write_node(c, 0, out);
  return out;
}

Concept parse_text(std::string_view text) {
  return Parser(text).run();
}

}  // namespace boolmeta
