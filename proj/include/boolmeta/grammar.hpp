#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "boolmeta/rng.hpp"

namespace boolmeta {

enum class NodeKind : std::uint8_t { Literal, Not, And, Or };

// Production order used everywhere probabilities or counts are indexed.
inline constexpr std::array<NodeKind, 4> kProductions{NodeKind::Literal, NodeKind::Not, NodeKind::And,
                                                      NodeKind::Or};

struct ProductionProbs {
  double literal = 0.30;
  double negation = 0.20;
  double conjunction = 0.25;
  double disjunction = 0.25;

  std::array<double, 4> as_array() const { return {literal, negation, conjunction, disjunction}; }
};

struct GrammarConfig {
  int features = 8;
  int max_depth = 3;
  ProductionProbs probs{};
  std::uint64_t seed = 0;

  // Throws std::invalid_argument when the config breaks its invariants.
  void validate() const;
};

// A Boolean formula stored as a pre-order node array. Children are referenced
// by index, so two structurally identical formulas have identical arrays.
class Concept {
 public:
  struct Node {
    NodeKind kind = NodeKind::Literal;
    int feature = 0;  // 1-based, Literal only
    int lhs = -1;
    int rhs = -1;

    bool operator==(const Node&) const = default;
  };

  static Concept literal(int feature);
  static Concept negation(const Concept& child);
  static Concept conjunction(const Concept& lhs, const Concept& rhs);
  static Concept disjunction(const Concept& lhs, const Concept& rhs);

  const std::vector<Node>& nodes() const { return nodes_; }
  const Node& root() const { return nodes_.front(); }
  std::size_t size() const { return nodes_.size(); }

  bool operator==(const Concept&) const = default;

 private:
  friend class ConceptBuilder;
  static Concept binary(NodeKind kind, const Concept& lhs, const Concept& rhs);
  std::vector<Node> nodes_;
};

// Appends nodes in pre-order; used by the sampler and the parser.
class ConceptBuilder {
 public:
  int open(NodeKind kind, int feature = 0);
  void set_lhs(int node, int child) { nodes_[node].lhs = child; }
  void set_rhs(int node, int child) { nodes_[node].rhs = child; }
  void set_kind(int node, NodeKind kind) { nodes_[node].kind = kind; }
  Concept finish() &&;

 private:
  std::vector<Concept::Node> nodes_;
};

enum class ComplexityClass { Simple, Medium, Complex };

ComplexityClass classify(int literal_count);
std::string_view to_string(ComplexityClass c);

struct ConceptStats {
  int depth = 0;
  int literal_count = 0;
  ComplexityClass complexity = ComplexityClass::Simple;
};

ConceptStats concept_stats(const Concept& c);

// Tally of productions drawn at sites where the depth cap did not force a literal.
struct ProductionCounts {
  std::array<std::uint64_t, 4> free{};
  std::uint64_t forced = 0;
};

Concept sample_concept(const GrammarConfig& cfg, Rng& rng, ProductionCounts* counts = nullptr);

// Throws std::out_of_range if a literal index exceeds x.size().
bool evaluate(const Concept& c, std::span<const std::uint8_t> x);

class ParseError : public std::runtime_error {
 public:
  ParseError(const std::string& what, std::size_t position);
  std::size_t position() const { return position_; }

 private:
  std::size_t position_;
};

// Syntax: `x<i>`, `!c`, `(a & b)`, `(a | b)`.
std::string to_text(const Concept& c);
Concept parse_text(std::string_view text);

}  // namespace boolmeta
