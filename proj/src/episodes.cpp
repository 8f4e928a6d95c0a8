#include "boolmeta/episodes.hpp"

#include <algorithm>
#include <set>

#include "json.hpp"

namespace boolmeta {

namespace {

bool contains(const std::vector<Example>& set, const std::vector<std::uint8_t>& x) {
  return std::any_of(set.begin(), set.end(), [&](const Example& e) { return e.x == x; });
}

// Fills `out` with `per_class` examples of each label, skipping inputs present
// in `exclude`. Draws count against `budget`; returns false when it runs out.
bool fill_balanced(const Concept& c, int features, int per_class, const std::vector<Example>& exclude, Rng& rng,
                   int& budget, std::vector<Example>& out) {
  std::vector<Example> pos, neg;
  while (static_cast<int>(pos.size()) < per_class || static_cast<int>(neg.size()) < per_class) {
    if (budget <= 0) return false;
    --budget;
    auto x = draw_input(features, rng);
    if (contains(exclude, x)) continue;
    const bool label = evaluate(c, x);
    auto& bucket = label ? pos : neg;
    if (static_cast<int>(bucket.size()) < per_class) bucket.push_back({std::move(x), static_cast<std::uint8_t>(label)});
  }
  // Interleave so every prefix is as balanced as possible.
  out.clear();
  for (int i = 0; i < per_class; ++i) {
    out.push_back(std::move(pos[i]));
    out.push_back(std::move(neg[i]));
  }
  return true;
}

}  // namespace

std::vector<std::uint8_t> draw_input(int features, Rng& rng) {
  std::vector<std::uint8_t> x(static_cast<std::size_t>(features));
  for (auto& bit : x) bit = rng.bit() ? 1 : 0;
  return x;
}

Episode make_episode(const GrammarConfig& cfg, Rng& rng, int max_attempts, const EpisodeShape& shape) {
  cfg.validate();
  if (max_attempts < 1) throw std::invalid_argument("make_episode: max_attempts must be >= 1");
  for (int attempt = 0; attempt < max_attempts; ++attempt) {
    Episode e;
    e.target = sample_concept(cfg, rng);
    e.features = cfg.features;
    e.max_depth = cfg.max_depth;
    e.seed = cfg.seed;
    int budget = shape.input_budget;
    if (!fill_balanced(e.target, cfg.features, shape.support_per_class, {}, rng, budget, e.support)) continue;
    if (!fill_balanced(e.target, cfg.features, shape.query_per_class, e.support, rng, budget, e.query)) continue;
    return e;
  }
  throw DegenerateConceptSpace("no balanced concept found in " + std::to_string(max_attempts) +
                               " attempts at F=" + std::to_string(cfg.features) +
                               ", D=" + std::to_string(cfg.max_depth));
}

Episode make_indexed_episode(const GrammarConfig& cfg, std::uint64_t index, int max_attempts,
                             const EpisodeShape& shape) {
  const std::uint64_t seed = derive_seed({cfg.seed, index});
  Rng rng(seed);
  Episode e = make_episode(cfg, rng, max_attempts, shape);
  e.seed = seed;
  return e;
}

EpisodeBatch make_batch(const GrammarConfig& cfg, std::uint64_t batch_index, int batch_size, int max_attempts,
                        const EpisodeShape& shape) {
  if (batch_size < 1) throw std::invalid_argument("make_batch: batch_size must be >= 1");
  EpisodeBatch batch{cfg.features, cfg.max_depth, {}};
  batch.episodes.reserve(static_cast<std::size_t>(batch_size));
  const auto first = batch_index * static_cast<std::uint64_t>(batch_size);
  for (int i = 0; i < batch_size; ++i)
    batch.episodes.push_back(make_indexed_episode(cfg, first + static_cast<std::uint64_t>(i), max_attempts, shape));
  return batch;
}

std::string to_bitstring(const std::vector<std::uint8_t>& x) {
  std::string s(x.size(), '0');
  for (std::size_t i = 0; i < x.size(); ++i)
    if (x[i]) s[i] = '1';
  return s;
}

std::vector<std::uint8_t> from_bitstring(std::string_view bits) {
  std::vector<std::uint8_t> x(bits.size());
  for (std::size_t i = 0; i < bits.size(); ++i) {
    if (bits[i] != '0' && bits[i] != '1') throw std::invalid_argument("bit-string contains non-binary character");
    x[i] = bits[i] == '1' ? 1 : 0;
  }
  return x;
}

namespace {

nlohmann::json rows_to_json(const std::vector<Example>& rows) {
  auto out = nlohmann::json::array();
  for (const auto& r : rows) out.push_back(to_bitstring(r.x) + ":" + std::to_string(r.y));
  return out;
}

std::vector<Example> rows_from_json(const nlohmann::json& j) {
  std::vector<Example> rows;
  for (const auto& item : j) {
    const auto s = item.get<std::string>();
    const auto colon = s.find(':');
    if (colon == std::string::npos || colon + 2 != s.size() || (s.back() != '0' && s.back() != '1'))
      throw std::invalid_argument("malformed example row '" + s + "'");
    rows.push_back({from_bitstring(std::string_view(s).substr(0, colon)), static_cast<std::uint8_t>(s.back() == '1')});
  }
  return rows;
}

}  // namespace

std::string serialize_episode(const Episode& e) {
  nlohmann::json j;
  j["concept"] = to_text(e.target);
  j["F"] = e.features;
  j["D"] = e.max_depth;
  j["seed"] = e.seed;
  j["support"] = rows_to_json(e.support);
  j["query"] = rows_to_json(e.query);
  return j.dump();
}

Episode parse_episode(std::string_view line) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(line);
  } catch (const nlohmann::json::exception& ex) {
    throw std::invalid_argument(std::string("episode line is not valid JSON: ") + ex.what());
  }
  try {
    Episode e;
    e.target = parse_text(j.at("concept").get<std::string>());
    e.features = j.at("F").get<int>();
    e.max_depth = j.at("D").get<int>();
    e.seed = j.at("seed").get<std::uint64_t>();
    e.support = rows_from_json(j.at("support"));
    e.query = rows_from_json(j.at("query"));
    return e;
  } catch (const nlohmann::json::exception& ex) {
    throw std::invalid_argument(std::string("episode line has missing or mistyped fields: ") + ex.what());
  }
}

std::vector<std::string> validate_episode(const Episode& e, const EpisodeShape& shape) {
  std::vector<std::string> problems;
  auto check_set = [&](const std::vector<Example>& rows, int per_class, const char* name) {
    int pos = 0;
    for (const auto& r : rows) {
      if (static_cast<int>(r.x.size()) != e.features) {
        problems.push_back(std::string(name) + ": row width differs from F");
        continue;
      }
      bool truth = false;
      try {
        truth = evaluate(e.target, r.x);
      } catch (const std::out_of_range& ex) {
        problems.push_back(ex.what());
        continue;
      }
      if (truth != (r.y != 0)) problems.push_back(std::string(name) + ": label disagrees with concept");
      pos += r.y ? 1 : 0;
    }
    if (static_cast<int>(rows.size()) != 2 * per_class)
      problems.push_back(std::string(name) + ": expected " + std::to_string(2 * per_class) + " rows");
    if (pos != per_class) problems.push_back(std::string(name) + ": unbalanced labels");
  };
  check_set(e.support, shape.support_per_class, "support");
  check_set(e.query, shape.query_per_class, "query");

  std::set<std::vector<std::uint8_t>> support_inputs;
  for (const auto& r : e.support) support_inputs.insert(r.x);
  for (const auto& r : e.query)
    if (support_inputs.count(r.x)) {
      problems.push_back("query input " + to_bitstring(r.x) + " also appears in support");
      break;
    }
  const auto stats = concept_stats(e.target);
  if (stats.depth > e.max_depth) problems.push_back("concept deeper than D");
  for (const auto& n : e.target.nodes())
    if (n.kind == NodeKind::Literal && (n.feature < 1 || n.feature > e.features)) {
      problems.push_back("literal index outside [1, F]");
      break;
    }
  return problems;
}

}  // namespace boolmeta
