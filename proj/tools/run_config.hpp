#pragma once

// Run configuration for the command-line pipeline: a JSON document with the
// sections data, schedule, model, score, select, attach, train and eval.
// Every field has a default; user files are overlaid on the defaults and any
// key the defaults do not have is rejected.

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>

#include "d2c/evaluator.hpp"
#include "json.hpp"

namespace d2c::cli {

/// Schema or value problem, located by a JSON pointer.
class ConfigError : public std::invalid_argument {
 public:
  ConfigError(std::string pointer, const std::string& what) : std::invalid_argument(what), pointer_(std::move(pointer)) {}
  const std::string& pointer() const { return pointer_; }

 private:
  std::string pointer_;
};

/// An input file a stage needs is not where it should be.
class MissingArtifact : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

nlohmann::json default_config();

/// Overlays `user` on `defaults`. Unknown keys and type mismatches raise
/// ConfigError naming the offending pointer.
nlohmann::json merge_config(const nlohmann::json& defaults, const nlohmann::json& user);

/// Reads and merges a config file; an empty path gives the defaults.
nlohmann::json load_config(const std::filesystem::path& path);

/// Typed views of an effective config. Each validates its section and
/// raises ConfigError on bad values.
LabeledDataset generate_data(const nlohmann::json& cfg);
ComparisonConfig comparison_config(const nlohmann::json& cfg);
/// The training variant a chained pipeline runs: selection from `select`,
/// alignment and branch switches from `train`.
StrategyVariant pipeline_variant(const nlohmann::json& cfg);
SelectionSpec selection_spec(const nlohmann::json& cfg);
/// Seed every chained stage derives its stream from (train.seed).
std::uint64_t pipeline_seed(const nlohmann::json& cfg);

}  // namespace d2c::cli
