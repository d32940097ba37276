#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "d2c/attacher.hpp"
#include "d2c/datagen.hpp"
#include "d2c/scorer.hpp"
#include "d2c/selector.hpp"
#include "d2c/trainer.hpp"
#include "json.hpp"

namespace d2c {

/// Row-major sample matrix.
struct SampleSet {
  std::size_t dim = 0;
  std::vector<double> values;
  std::size_t size() const { return dim == 0 ? 0 : values.size() / dim; }
};

/// ||mu_a - mu_b||^2 + Tr(S_a + S_b - 2 (S_a S_b)^{1/2}), with unbiased
/// covariances. The trace of the square root is taken from the eigenvalues
/// of S_a^{1/2} S_b S_a^{1/2}, which is symmetric and shares them.
double frechet_distance(const SampleSet& a, const SampleSet& b);

/// Unbiased U-statistic estimate of squared MMD with k(x,y) = exp(-|x-y|^2 / (2 bw^2)).
double mmd_rbf(const SampleSet& a, const SampleSet& b, double bandwidth);

/// Median pairwise distance of a (on at most `cap` points, taken in order).
double median_bandwidth(const SampleSet& a, std::size_t cap = 1000);

struct MetricReport {
  double frechet = 0.0;            ///< pooled over all classes
  double mean_class_frechet = 0.0; ///< headline metric
  std::vector<double> class_frechet;
  double mmd = 0.0;
  double bandwidth = 0.0;
  std::size_t generated = 0;
  std::size_t reference = 0;
};

/// Generated and reference samples must carry labels over the same classes.
MetricReport evaluate_samples(const SampleSet& gen, std::span<const std::uint32_t> gen_labels, const LabeledDataset& reference,
                              double bandwidth = 0.0);

/// Independent random streams of one pipeline run, all derived from the
/// run's seed so that chained stages and a single comparison cell agree.
enum class Stage : std::uint64_t { reference_init = 1, reference_train, score, select, model_init, train, sample };
std::uint64_t stage_seed(std::uint64_t seed, Stage stage);

/// A named training variant of the pipeline.
struct StrategyVariant {
  std::string name;
  Strategy selection = Strategy::interval;
  double lambda = 0.5;
  bool text_branch = true;
  bool class_branch = true;
  bool sweeps_k = false;  ///< expands over the k grid

  nlohmann::json to_json() const;
};

/// Known variant names: d2c, no-align, only-class, interval-plain, min, max,
/// random, herding, kcenter.
StrategyVariant variant_by_name(const std::string& name);

struct ComparisonConfig {
  std::vector<std::string> strategies = {"d2c"};
  std::vector<std::uint32_t> budgets = {10};
  std::vector<std::uint32_t> k_grid = {2};  ///< 0 stands for the largest feasible k
  std::vector<std::uint64_t> seeds = {0, 1, 2};
  ModelDims dims;
  TrainConfig train;      ///< per-cell seed and variant switches are overridden
  TrainConfig reference;  ///< reference (scoring) model training; seed overridden
  McConfig mc;
  EncoderConfig encoders;
  std::size_t n_eval = 500;
  std::size_t sample_steps = 100;
  double cfg_scale = 1.5;
  std::filesystem::path cache_dir;  ///< empty disables caching
  std::size_t workers = 0;          ///< 0 = worker_count()

  nlohmann::json to_json() const;
};

struct ComparisonRow {
  std::string strategy;
  std::uint32_t budget = 0;
  std::uint32_t k = 0;
  std::uint64_t seed = 0;
  std::uint64_t steps = 0;
  bool ok = true;
  std::string error;
  MetricReport metrics;
};

struct ComparisonTable {
  std::vector<ComparisonRow> rows;
  std::string csv() const;
  /// Mean over seeds of mean_class_frechet for matching successful rows.
  double mean_fd(const std::string& strategy, std::uint32_t budget, std::uint32_t k) const;
};

struct ComparisonStats {
  std::size_t trainings = 0;  ///< models trained in this call (reference included)
  std::size_t cache_hits = 0;
  double seconds = 0.0;
};

/// Everything a cell derives, kept for callers that want the artifacts.
struct CellArtifacts {
  ScoreTable scores;
  SelectionResult selection;
  CondensedDataset condensed;
};

/// Per-stage settings of one cell. The CLI's stage commands use the same
/// functions, so a chained run reproduces a comparison cell.
TrainConfig reference_train_config(const ComparisonConfig& cfg, std::uint64_t seed, std::size_t data_size);
McConfig cell_mc_config(const ComparisonConfig& cfg, std::uint64_t seed);
SelectionSpec cell_selection_spec(const StrategyVariant& variant, std::uint32_t budget, std::uint32_t k, std::uint64_t seed);
TrainConfig cell_train_config(const ComparisonConfig& cfg, const StrategyVariant& variant, std::uint64_t seed, std::size_t data_size);
SampleOptions cell_sample_options(const ComparisonConfig& cfg, const TrainConfig& tc, std::uint64_t seed);
/// n samples of every class of `data`, class-major, with their labels.
SampleSet sample_classes(const DenoiserModel& model, const NoiseSchedule& sched, const CondensedDataset& data, std::size_t n,
                         const SampleOptions& opts, std::vector<std::uint32_t>& labels);

nlohmann::json metrics_to_json(const MetricReport& m);
MetricReport metrics_from_json(const nlohmann::json& j);

/// Runs one cell: reference model and scores for the seed, selection,
/// attachment, training, class-wise sampling and metrics against the held-out
/// split. Artifacts are cached under cfg.cache_dir keyed by content hashes.
ComparisonRow run_cell(const DatasetSplit& split, const ComparisonConfig& cfg, const StrategyVariant& variant, std::uint32_t budget,
                       std::uint32_t k, std::uint64_t seed, ComparisonStats& stats, CellArtifacts* artifacts = nullptr);

/// The factorial grid strategies x budgets x (k grid for sweeping variants)
/// x seeds. A failing cell becomes a row with ok = false.
ComparisonTable run_comparison(const DatasetSplit& split, const ComparisonConfig& cfg, ComparisonStats* stats = nullptr,
                               const std::function<void(const ComparisonRow&)>& progress = {});

/// Reference model for a seed: trained on every training sample.
DenoiserModel reference_model(const DatasetSplit& split, const ComparisonConfig& cfg, std::uint64_t seed, ComparisonStats& stats);

/// Per-figure CSV: "interval_k" (k vs mean FD per budget) and
/// "strategies" (strategy vs mean FD per budget).
std::string plot_data_k(const ComparisonTable& t);
std::string plot_data_strategies(const ComparisonTable& t);
/// step,L_diff smoothed series from a training log.
std::string plot_data_loss(const TrainLog& log, std::size_t window = 50);

}  // namespace d2c
