#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "boolmeta/grammar.hpp"
#include "boolmeta/rng.hpp"

namespace boolmeta {

struct Example {
  std::vector<std::uint8_t> x;
  std::uint8_t y = 0;

  bool operator==(const Example&) const = default;
};

struct EpisodeShape {
  int support_per_class = 5;
  int query_per_class = 10;
  // Uniform input draws allowed per concept before it is discarded.
  int input_budget = 10000;
};

struct Episode {
  Concept target;
  int features = 0;
  int max_depth = 0;
  std::uint64_t seed = 0;
  std::vector<Example> support;
  std::vector<Example> query;

  bool operator==(const Episode&) const = default;
};

struct EpisodeBatch {
  int features = 0;
  int max_depth = 0;
  std::vector<Episode> episodes;
};

class DegenerateConceptSpace : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Uniform draw from {0,1}^features.
std::vector<std::uint8_t> draw_input(int features, Rng& rng);

// Samples a concept and fills balanced support/query quotas by rejection.
// Support and query never share an input; duplicates within one set are allowed.
Episode make_episode(const GrammarConfig& cfg, Rng& rng, int max_attempts = 100, const EpisodeShape& shape = {});

// Episode seeded deterministically by (cfg.seed, index).
Episode make_indexed_episode(const GrammarConfig& cfg, std::uint64_t index, int max_attempts = 100,
                             const EpisodeShape& shape = {});

// Episodes batch_index*batch_size ... (batch_index+1)*batch_size-1 of the cfg.seed stream.
EpisodeBatch make_batch(const GrammarConfig& cfg, std::uint64_t batch_index, int batch_size, int max_attempts = 100,
                        const EpisodeShape& shape = {});

// One JSON object per line; bit-strings put x_1 leftmost.
std::string serialize_episode(const Episode& e);
Episode parse_episode(std::string_view line);

std::string to_bitstring(const std::vector<std::uint8_t>& x);
std::vector<std::uint8_t> from_bitstring(std::string_view bits);

// Returns a list of invariant violations (empty when the episode is valid).
std::vector<std::string> validate_episode(const Episode& e, const EpisodeShape& shape = {});

}  // namespace boolmeta
