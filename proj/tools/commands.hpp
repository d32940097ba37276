#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

namespace d2c::cli {

/// Command-line values shared by every stage.
struct StageOptions {
  std::filesystem::path config;
  std::filesystem::path out = ".";
  std::vector<std::filesystem::path> inputs;  ///< searched in order
  std::optional<std::uint64_t> seed;
  std::optional<std::uint32_t> k;
  std::optional<std::uint32_t> budget;
  std::optional<std::string> strategy;
  std::optional<double> cfg_scale;
  std::optional<std::uint64_t> steps;
  bool quiet = false;
};

/// Effective config for a command: file, then command-line overrides.
nlohmann::json effective_config(const std::string& command, const StageOptions& opts);

/// Runs a stage; throws on failure. Known commands: gen-data, train-ref,
/// score, select, attach, train, sample, eval, compare, plot-data.
void run_command(const std::string& command, const StageOptions& opts);

/// Exit code and one-line JSON message for an exception escaping a stage.
struct Failure {
  int code = 1;
  std::string json;
};
Failure describe_failure(const std::string& command);  ///< call inside a catch block

/// samples.csv: header "label,x0,..,x{D-1}", values printed with %.17g.
void write_samples(const std::filesystem::path& path, const std::vector<double>& values, std::size_t dim,
                   const std::vector<std::uint32_t>& labels);
void read_samples(const std::filesystem::path& path, std::vector<double>& values, std::size_t& dim, std::vector<std::uint32_t>& labels);

}  // namespace d2c::cli
