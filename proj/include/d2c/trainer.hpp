#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "d2c/attacher.hpp"
#include "d2c/model.hpp"
#include "d2c/schedule.hpp"
#include "json.hpp"

namespace d2c {

struct TrainConfig {
  std::uint64_t steps = 2000;
  std::size_t batch = 64;
  double lambda = 0.5;  ///< alignment weight
  PredictionKind prediction = PredictionKind::epsilon;
  ScheduleKind schedule = ScheduleKind::vp_continuous;
  double p_null = 0.1;  ///< per-item condition dropout
  double ema_decay = 0.999;
  double lr = 1e-4;
  std::uint64_t seed = 0;
  bool alignment = true;
  bool text_branch = true;
  bool class_branch = true;

  void validate() const;
  /// lambda if alignment is on, else 0.
  double effective_lambda() const { return alignment ? lambda : 0.0; }
  ConditionBranches branches() const { return {text_branch, class_branch}; }
  nlohmann::json to_json() const;
  static TrainConfig from_json(const nlohmann::json& j);
};

/// One minibatch, already perturbed.
struct TrainBatch {
  Tensor x_t;                            ///< n x D
  std::vector<double> times;             ///< network times
  Tensor target;                         ///< n x D
  std::vector<ConditionBundle> bundles;  ///< text pointers into the dataset
  Tensor visual;                         ///< (n*h) x d_feat
};

struct LossTerms {
  Tensor total;  ///< scalar, on the tape
  double diff = 0.0;
  double proj = 0.0;
  double total_value = 0.0;
};

/// L_diff = batch mean of ||target - prediction||^2 (summed over D).
/// L_proj = -mean over items and tokens of cos(phi(h_i), v_i).
/// L_total = L_diff + lambda * L_proj; with lambda == 0 the projection head
/// is still evaluated for logging but contributes nothing to the graph.
LossTerms compute_loss(Tape& tape, const DenoiserModel& model, const TrainBatch& batch, double lambda, ConditionBranches branches = {});

/// -mean_i cos(a_i, b_i) over rows, as a tape scalar.
Tensor negative_mean_cosine(Tape& tape, const Tensor& a, const Tensor& b);

/// Draws a batch: items chosen by a per-step shuffle, times stratified across
/// the batch, each item nulled with probability p_null.
TrainBatch draw_batch(const DenoiserModel& model, const NoiseSchedule& sched, const CondensedDataset& data, const TrainConfig& cfg,
                      std::uint64_t step);

struct TrainLogRow {
  std::uint64_t step = 0;
  double l_diff = 0.0;
  double l_proj = 0.0;
  double l_total = 0.0;
  double grad_norm = 0.0;
  double seconds = 0.0;
};

struct TrainLog {
  std::vector<TrainLogRow> rows;
  /// step,L_diff,L_proj,L_total,grad_norm
  std::string csv() const;
};

struct TrainResult {
  DenoiserModel model;
  DenoiserModel ema;
  TrainLog log;
};

/// Schedule object for a kind with default parameters.
NoiseSchedule make_schedule(ScheduleKind kind);

/// Runs cfg.steps Adam updates from `model`'s current weights.
TrainResult train(const DenoiserModel& model, const CondensedDataset& data, const TrainConfig& cfg);

struct SampleOptions {
  double cfg_scale = 1.0;
  std::size_t steps = 100;  ///< integration steps (ignored by ddpm-discrete, which uses its own T)
  std::uint64_t seed = 0;
  /// Condition dropout the model was trained with, when known.
  std::optional<double> trained_p_null;
  ConditionBranches branches = {};
};

struct SampleResult {
  std::vector<double> samples;  ///< n x D
  std::vector<std::string> warnings;
};

/// Guided prediction: null + s * (cond - null). At s == 1 the conditional
/// prediction is returned as is.
std::vector<double> guided_prediction(std::span<const double> cond, std::span<const double> null, double scale);

/// Reverse integration from pure noise. vp-continuous runs the matching
/// discrete chain; linear-flow runs Euler steps from t = 1 to 0.
SampleResult sample(const DenoiserModel& model, const NoiseSchedule& sched, std::uint32_t label, const TextEmbedding* text, std::size_t n,
                    const SampleOptions& opts);

}  // namespace d2c
