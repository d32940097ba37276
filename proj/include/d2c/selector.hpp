#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "d2c/datagen.hpp"
#include "d2c/scorer.hpp"
#include "json.hpp"

namespace d2c {

enum class Strategy { interval, min, max, random, herding, kcenter };

std::string to_string(Strategy s);
Strategy strategy_from_string(const std::string& s);
/// True for strategies that rank by difficulty score.
bool uses_scores(Strategy s);

struct SelectionSpec {
  Strategy strategy = Strategy::interval;
  std::uint32_t k = 1;       ///< interval only
  std::uint32_t budget = 1;  ///< m, per class
  std::uint64_t seed = 0;    ///< random only

  void validate() const;
  nlohmann::json to_json() const;
  static SelectionSpec from_json(const nlohmann::json& j);
  bool operator==(const SelectionSpec&) const = default;
};

/// Budget cannot be met for some class.
class InfeasibleBudget : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct ClassSelection {
  std::uint32_t label = 0;
  std::vector<std::size_t> indices;  ///< global indices in rank order
  std::vector<double> scores;        ///< parallel to indices; NaN where unscored

  bool operator==(const ClassSelection& o) const { return label == o.label && indices == o.indices; }
};

struct SelectionResult {
  SelectionSpec spec;
  std::vector<ClassSelection> classes;  ///< ascending label

  std::size_t total() const;
  /// Class-major, rank order.
  std::vector<std::size_t> flat_indices() const;
  /// Throws std::logic_error on duplicate indices, label mismatch, or a
  /// class whose count differs from the budget.
  void validate(std::span<const std::uint32_t> labels) const;
  bool operator==(const SelectionResult& o) const { return spec == o.spec && classes == o.classes; }
};

/// Per class: sort ascending by score (ties by index), keep positions
/// 0, k, ..., (m-1)k. Requires (m-1)k < n_y.
SelectionResult interval_select(const ScoreTable& table, std::uint32_t k, std::uint32_t m);
enum class Extreme { min, max };
SelectionResult extreme_select(const ScoreTable& table, Extreme mode, std::uint32_t m);
SelectionResult random_select(const LabeledDataset& ds, std::uint32_t m, std::uint64_t seed);
/// Greedy mean matching in raw sample space.
SelectionResult herding_select(const LabeledDataset& ds, std::uint32_t m);
/// Farthest-point greedy seeded at the sample nearest the class mean.
SelectionResult kcenter_select(const LabeledDataset& ds, std::uint32_t m);

/// Dispatch on spec.strategy. table may be null for score-free strategies;
/// when given, selected scores are filled in for every strategy.
SelectionResult select(const SelectionSpec& spec, const LabeledDataset& ds, const ScoreTable* table);

/// Largest k for which interval selection with budget m fits every class.
std::uint32_t max_feasible_k(const ScoreTable& table, std::uint32_t m);

/// class,global_index,rank_in_class,score
std::string selection_csv(const SelectionResult& r);
void write_selection(const std::filesystem::path& csv_path, const SelectionResult& r);
/// Reads the CSV and its ".json" sidecar.
SelectionResult read_selection(const std::filesystem::path& csv_path);

}  // namespace d2c
