#include "d2c/selector.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <map>
#include <numeric>
#include <set>
#include <sstream>

#include "d2c/binio.hpp"
#include "d2c/rng.hpp"

namespace d2c {

namespace {

constexpr double kNoScore = std::numeric_limits<double>::quiet_NaN();

using Buckets = std::map<std::uint32_t, std::vector<std::size_t>>;

// Table rows grouped by class, each group in ascending global index.
Buckets table_buckets(const ScoreTable& t) {
  if (t.indices.size() != t.scores.size() || t.labels.size() != t.scores.size()) throw std::invalid_argument("score table columns differ in length");
  Buckets b;
  for (std::size_t r = 0; r < t.size(); ++r) b[t.labels[r]].push_back(r);
  for (auto& [y, rows] : b) {
    std::sort(rows.begin(), rows.end(), [&](std::size_t a, std::size_t c) { return t.indices[a] < t.indices[c]; });
  }
  return b;
}

Buckets dataset_buckets(const LabeledDataset& ds) {
  Buckets b;
  for (std::size_t i = 0; i < ds.size(); ++i) b[ds.labels[i]].push_back(i);
  return b;
}

void require(bool ok, std::uint32_t label, std::size_t needed, std::size_t have) {
  if (!ok) {
    throw InfeasibleBudget("class " + std::to_string(label) + " needs at least " + std::to_string(needed) + " samples, has " +
                           std::to_string(have));
  }
}

// Rows of a class sorted ascending by score, ties by global index.
std::vector<std::size_t> ranked(const ScoreTable& t, std::vector<std::size_t> rows) {
  std::stable_sort(rows.begin(), rows.end(), [&](std::size_t a, std::size_t b) { return t.scores[a] < t.scores[b]; });
  return rows;
}

ClassSelection from_rows(const ScoreTable& t, std::uint32_t y, std::span<const std::size_t> rows) {
  ClassSelection c;
  c.label = y;
  for (std::size_t r : rows) {
    c.indices.push_back(t.indices[r]);
    c.scores.push_back(t.scores[r]);
  }
  return c;
}

ClassSelection unscored(std::uint32_t y, std::vector<std::size_t> indices) {
  ClassSelection c;
  c.label = y;
  c.scores.assign(indices.size(), kNoScore);
  c.indices = std::move(indices);
  return c;
}

double sq_dist(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t d = 0; d < a.size(); ++d) s += (a[d] - b[d]) * (a[d] - b[d]);
  return s;
}

std::vector<double> class_mean(const LabeledDataset& ds, std::span<const std::size_t> members) {
  std::vector<double> mu(ds.dim, 0.0);
  for (std::size_t i : members) {
    const auto x = ds.sample(i);
    for (std::size_t d = 0; d < ds.dim; ++d) mu[d] += x[d];
  }
  for (double& v : mu) v /= static_cast<double>(members.size());
  return mu;
}

}  // namespace

std::string to_string(Strategy s) {
  switch (s) {
    case Strategy::interval: return "interval";
    case Strategy::min: return "min";
    case Strategy::max: return "max";
    case Strategy::random: return "random";
    case Strategy::herding: return "herding";
    case Strategy::kcenter: return "kcenter";
  }
  return "?";
}

Strategy strategy_from_string(const std::string& s) {
  for (Strategy v : {Strategy::interval, Strategy::min, Strategy::max, Strategy::random, Strategy::herding, Strategy::kcenter}) {
    if (to_string(v) == s) return v;
  }
  throw std::invalid_argument("unknown selection strategy '" + s + "'");
}

bool uses_scores(Strategy s) { return s == Strategy::interval || s == Strategy::min || s == Strategy::max; }

void SelectionSpec::validate() const {
  if (k < 1) throw std::invalid_argument("interval k must be >= 1");
  if (budget < 1) throw std::invalid_argument("budget must be >= 1");
}

nlohmann::json SelectionSpec::to_json() const {
  return {{"strategy", to_string(strategy)}, {"k", k}, {"budget", budget}, {"seed", seed}};
}

SelectionSpec SelectionSpec::from_json(const nlohmann::json& j) {
  SelectionSpec s;
  s.strategy = strategy_from_string(j.at("strategy").get<std::string>());
  s.k = j.at("k").get<std::uint32_t>();
  s.budget = j.at("budget").get<std::uint32_t>();
  s.seed = j.at("seed").get<std::uint64_t>();
  return s;
}

std::size_t SelectionResult::total() const {
  std::size_t n = 0;
  for (const auto& c : classes) n += c.indices.size();
  return n;
}

std::vector<std::size_t> SelectionResult::flat_indices() const {
  std::vector<std::size_t> out;
  for (const auto& c : classes) out.insert(out.end(), c.indices.begin(), c.indices.end());
  return out;
}

void SelectionResult::validate(std::span<const std::uint32_t> labels) const {
  std::set<std::size_t> seen;
  for (const auto& c : classes) {
    if (c.indices.size() != spec.budget) {
      throw std::logic_error("class " + std::to_string(c.label) + " has " + std::to_string(c.indices.size()) + " selections, budget " +
                             std::to_string(spec.budget));
    }
    for (std::size_t i : c.indices) {
      if (i >= labels.size()) throw std::logic_error("selected index " + std::to_string(i) + " out of range");
      if (labels[i] != c.label) throw std::logic_error("index " + std::to_string(i) + " is not in class " + std::to_string(c.label));
      if (!seen.insert(i).second) throw std::logic_error("index " + std::to_string(i) + " selected twice");
    }
  }
}

SelectionResult interval_select(const ScoreTable& table, std::uint32_t k, std::uint32_t m) {
  SelectionResult r;
  r.spec = {Strategy::interval, k, m, 0};
  r.spec.validate();
  for (const auto& [y, rows] : table_buckets(table)) {
    const std::size_t needed = static_cast<std::size_t>(m - 1) * k + 1;
    require(needed <= rows.size(), y, needed, rows.size());
    const auto order = ranked(table, rows);
    std::vector<std::size_t> pick;
    for (std::uint32_t j = 0; j < m; ++j) pick.push_back(order[static_cast<std::size_t>(j) * k]);
    r.classes.push_back(from_rows(table, y, pick));
  }
  return r;
}

SelectionResult extreme_select(const ScoreTable& table, Extreme mode, std::uint32_t m) {
  SelectionResult r;
  r.spec = {mode == Extreme::min ? Strategy::min : Strategy::max, 1, m, 0};
  r.spec.validate();
  for (const auto& [y, rows] : table_buckets(table)) {
    require(m <= rows.size(), y, m, rows.size());
    std::vector<std::size_t> order = rows;
    if (mode == Extreme::min) {
      order = ranked(table, rows);
    } else {
      std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return table.scores[a] > table.scores[b]; });
    }
    order.resize(m);
    r.classes.push_back(from_rows(table, y, order));
  }
  return r;
}

SelectionResult random_select(const LabeledDataset& ds, std::uint32_t m, std::uint64_t seed) {
  SelectionResult r;
  r.spec = {Strategy::random, 1, m, seed};
  r.spec.validate();
  for (auto& [y, members] : dataset_buckets(ds)) {
    require(m <= members.size(), y, m, members.size());
    // Partial Fisher-Yates on the ascending member list.
    Rng rng(derive_seed(seed, 0x72616e64, y));
    for (std::size_t j = 0; j < m; ++j) {
      const std::size_t pick = j + static_cast<std::size_t>(rng.below(members.size() - j));
      std::swap(members[j], members[pick]);
    }
    members.resize(m);
    std::sort(members.begin(), members.end());
    r.classes.push_back(unscored(y, members));
  }
  return r;
}

SelectionResult herding_select(const LabeledDataset& ds, std::uint32_t m) {
  SelectionResult r;
  r.spec = {Strategy::herding, 1, m, 0};
  r.spec.validate();
  for (const auto& [y, members] : dataset_buckets(ds)) {
    require(m <= members.size(), y, m, members.size());
    const std::vector<double> mu = class_mean(ds, members);
    std::vector<double> sum(ds.dim, 0.0), candidate(ds.dim);
    std::vector<bool> taken(members.size(), false);
    std::vector<std::size_t> pick;
    for (std::uint32_t j = 0; j < m; ++j) {
      std::size_t best = members.size();
      double best_d = 0.0;
      for (std::size_t c = 0; c < members.size(); ++c) {
        if (taken[c]) continue;
        const auto x = ds.sample(members[c]);
        for (std::size_t d = 0; d < ds.dim; ++d) candidate[d] = (sum[d] + x[d]) / static_cast<double>(j + 1);
        const double dist = sq_dist(mu, candidate);
        if (best == members.size() || dist < best_d) {
          best = c;
          best_d = dist;
        }
      }
      taken[best] = true;
      const auto x = ds.sample(members[best]);
      for (std::size_t d = 0; d < ds.dim; ++d) sum[d] += x[d];
      pick.push_back(members[best]);
    }
    r.classes.push_back(unscored(y, pick));
  }
  return r;
}

SelectionResult kcenter_select(const LabeledDataset& ds, std::uint32_t m) {
  SelectionResult r;
  r.spec = {Strategy::kcenter, 1, m, 0};
  r.spec.validate();
  for (const auto& [y, members] : dataset_buckets(ds)) {
    require(m <= members.size(), y, m, members.size());
    const std::vector<double> mu = class_mean(ds, members);
    std::size_t seed = 0;
    for (std::size_t c = 1; c < members.size(); ++c) {
      if (sq_dist(ds.sample(members[c]), mu) < sq_dist(ds.sample(members[seed]), mu)) seed = c;
    }
    // nearest[c]: squared distance from member c to the selected set.
    std::vector<double> nearest(members.size(), std::numeric_limits<double>::infinity());
    std::vector<bool> taken(members.size(), false);
    std::vector<std::size_t> pick;
    std::size_t next = seed;
    for (std::uint32_t j = 0; j < m; ++j) {
      taken[next] = true;
      pick.push_back(members[next]);
      const auto s = ds.sample(members[next]);
      for (std::size_t c = 0; c < members.size(); ++c) nearest[c] = std::min(nearest[c], sq_dist(ds.sample(members[c]), s));
      std::size_t far = members.size();
      for (std::size_t c = 0; c < members.size(); ++c) {
        if (taken[c]) continue;
        if (far == members.size() || nearest[c] > nearest[far]) far = c;
      }
      next = far;
    }
    r.classes.push_back(unscored(y, pick));
  }
  return r;
}

SelectionResult select(const SelectionSpec& spec, const LabeledDataset& ds, const ScoreTable* table) {
  spec.validate();
  if (uses_scores(spec.strategy) && table == nullptr) throw std::invalid_argument(to_string(spec.strategy) + " selection needs a score table");
  if (table != nullptr && table->size() != ds.size()) {
    throw std::invalid_argument("score table has " + std::to_string(table->size()) + " rows, dataset has " + std::to_string(ds.size()));
  }
  SelectionResult r;
  switch (spec.strategy) {
    case Strategy::interval: r = interval_select(*table, spec.k, spec.budget); break;
    case Strategy::min: r = extreme_select(*table, Extreme::min, spec.budget); break;
    case Strategy::max: r = extreme_select(*table, Extreme::max, spec.budget); break;
    case Strategy::random: r = random_select(ds, spec.budget, spec.seed); break;
    case Strategy::herding: r = herding_select(ds, spec.budget); break;
    case Strategy::kcenter: r = kcenter_select(ds, spec.budget); break;
  }
  r.spec = spec;
  if (table != nullptr && !uses_scores(spec.strategy)) {
    std::vector<double> by_index(ds.size(), kNoScore);
    for (std::size_t row = 0; row < table->size(); ++row) {
      if (table->indices[row] < by_index.size()) by_index[table->indices[row]] = table->scores[row];
    }
    for (auto& c : r.classes) {
      for (std::size_t j = 0; j < c.indices.size(); ++j) c.scores[j] = by_index[c.indices[j]];
    }
  }
  r.validate(ds.labels);
  return r;
}

std::uint32_t max_feasible_k(const ScoreTable& table, std::uint32_t m) {
  std::size_t smallest = std::numeric_limits<std::size_t>::max();
  for (const auto& [y, rows] : table_buckets(table)) smallest = std::min(smallest, rows.size());
  if (smallest == std::numeric_limits<std::size_t>::max() || m > smallest) return 0;
  if (m == 1) return static_cast<std::uint32_t>(smallest);
  return static_cast<std::uint32_t>((smallest - 1) / (m - 1));
}

std::string selection_csv(const SelectionResult& r) {
  std::string out = "class,global_index,rank_in_class,score\n";
  char buf[128];
  for (const auto& c : r.classes) {
    for (std::size_t j = 0; j < c.indices.size(); ++j) {
      if (std::isnan(c.scores[j])) {
        std::snprintf(buf, sizeof buf, "%u,%zu,%zu,\n", c.label, c.indices[j], j);
      } else {
        std::snprintf(buf, sizeof buf, "%u,%zu,%zu,%.17g\n", c.label, c.indices[j], j, c.scores[j]);
      }
      out += buf;
    }
  }
  return out;
}

void write_selection(const std::filesystem::path& csv_path, const SelectionResult& r) {
  const std::string csv = selection_csv(r);
  write_file(csv_path, {reinterpret_cast<const std::uint8_t*>(csv.data()), csv.size()});
  nlohmann::json side = {{"spec", r.spec.to_json()}, {"counts", nlohmann::json::object()}};
  for (const auto& c : r.classes) side["counts"][std::to_string(c.label)] = c.indices.size();
  const std::string js = side.dump(2) + "\n";
  auto json_path = csv_path;
  json_path.replace_extension(".json");
  write_file(json_path, {reinterpret_cast<const std::uint8_t*>(js.data()), js.size()});
}

SelectionResult read_selection(const std::filesystem::path& csv_path) {
  auto json_path = csv_path;
  json_path.replace_extension(".json");
  const auto side_bytes = read_file(json_path);
  SelectionResult r;
  try {
    r.spec = SelectionSpec::from_json(nlohmann::json::parse(side_bytes.begin(), side_bytes.end()).at("spec"));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(FormatErrorKind::malformed, json_path.string() + ": " + e.what());
  }
  const auto bytes = read_file(csv_path);
  std::istringstream in(std::string(bytes.begin(), bytes.end()));
  std::string line;
  std::getline(in, line);
  if (line != "class,global_index,rank_in_class,score") throw FormatError(FormatErrorKind::malformed, csv_path.string() + ": unexpected header");
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream row(line);
    std::string f[4];
    for (int i = 0; i < 4; ++i) std::getline(row, f[i], ',');
    try {
      const auto label = static_cast<std::uint32_t>(std::stoul(f[0]));
      if (r.classes.empty() || r.classes.back().label != label) r.classes.push_back({label, {}, {}});
      r.classes.back().indices.push_back(std::stoull(f[1]));
      r.classes.back().scores.push_back(f[3].empty() ? kNoScore : std::stod(f[3]));
    } catch (const std::exception&) {
      throw FormatError(FormatErrorKind::malformed, csv_path.string() + ": bad row '" + line + "'");
    }
  }
  return r;
}

}  // namespace d2c
