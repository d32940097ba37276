#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "d2c/datagen.hpp"
#include "d2c/model.hpp"
#include "d2c/schedule.hpp"

namespace d2c {

struct McConfig {
  std::uint32_t strata = 8;  ///< S_t
  std::uint32_t draws = 4;   ///< S_eps per stratum
  std::uint64_t seed = 0;

  void validate() const;
  bool operator==(const McConfig&) const = default;
};

/// Per-sample diffusion difficulty: the expected denoising loss under a
/// reference model. Low is easy.
struct ScoreTable {
  std::vector<std::uint32_t> indices;
  std::vector<std::uint32_t> labels;
  std::vector<double> scores;
  McConfig mc;
  std::uint64_t model_fingerprint = 0;
  std::vector<std::string> warnings;  ///< not serialized

  std::size_t size() const { return scores.size(); }
  bool operator==(const ScoreTable& o) const {
    return indices == o.indices && labels == o.labels && scores == o.scores && mc == o.mc && model_fingerprint == o.model_fingerprint;
  }
};

/// Thrown when a loss evaluates to NaN or infinity.
class ScoreError : public NumericError {
 public:
  using NumericError::NumericError;
};

/// The stratum midpoints for S_t strata, mapped into the schedule's domain
/// (continuous t in (0,1), or integer steps in {1..T}).
std::vector<double> stratum_times(const NoiseSchedule& sched, std::uint32_t strata);

/// Regression target for a model: eps, or eps - x0 for velocity models.
std::vector<double> denoising_target(PredictionKind kind, std::span<const double> x0, std::span<const double> eps);

/// Mean over the S_t x S_eps grid of ||target - model(x_t, t, cond)||^2.
/// Noise for stratum i, draw j comes from Rng(sample_seed) in (i, j) order.
double score_sample(const DenoiserModel& model, const NoiseSchedule& sched, std::span<const double> x,
                    const ConditionBundle& cond, const McConfig& mc, std::uint64_t sample_seed,
                    ConditionBranches branches = {false, true});

/// Per-sample stream seed. Keyed on the sample's content rather than its
/// position, so reordering a dataset reorders its scores and nothing else.
std::uint64_t sample_seed(std::uint64_t base_seed, std::span<const double> x, std::uint32_t label);

/// Scores every sample with class-label conditioning. Results do not depend
/// on the worker count.
ScoreTable score_dataset(const DenoiserModel& model, const NoiseSchedule& sched, const LabeledDataset& ds, const McConfig& mc,
                         std::size_t workers = 0);

/// Empty when the table was produced by this model; otherwise a warning.
std::string fingerprint_warning(const ScoreTable& table, const DenoiserModel& model);

std::vector<std::uint8_t> serialize_scores(const ScoreTable& t);
ScoreTable deserialize_scores(std::span<const std::uint8_t> bytes);
void write_scores(const std::filesystem::path& path, const ScoreTable& t);
ScoreTable read_scores(const std::filesystem::path& path);
/// index,label,score with scores printed round-trip exact.
std::string scores_csv(const ScoreTable& t);

}  // namespace d2c
