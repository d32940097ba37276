#pragma once

#include <cstddef>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "d2c/rng.hpp"

namespace d2c {

class RangeError : public std::out_of_range {
 public:
  using std::out_of_range::out_of_range;
};

enum class ScheduleKind { vp_continuous, linear_flow, ddpm_discrete };

std::string to_string(ScheduleKind kind);
ScheduleKind schedule_kind_from_string(const std::string& s);

struct AlphaSigma {
  double alpha;
  double sigma;
};

/// Forward-process noise schedule.
///
/// vp-continuous: abar(t) = exp(-0.5 * t^2 * (beta_max - beta_min) - t * beta_min),
///                alpha = sqrt(abar), sigma = sqrt(1 - abar), t in [0, 1].
/// linear-flow:   alpha = 1 - t, sigma = t, t in [0, 1].
/// ddpm-discrete: beta table over t = 1..T, alpha = sqrt(abar_t), sigma = sqrt(1 - abar_t).
class NoiseSchedule {
 public:
  static NoiseSchedule vp_continuous(double beta_min = 0.1, double beta_max = 20.0);
  static NoiseSchedule linear_flow();
  static NoiseSchedule ddpm_linear(std::size_t steps = 100, double beta_start = 1e-4, double beta_end = 0.02);
  /// Discrete chain from an explicit beta table (betas[0] is beta_1).
  static NoiseSchedule ddpm_from_betas(std::vector<double> betas);

  ScheduleKind kind() const { return kind_; }
  bool discrete() const { return kind_ == ScheduleKind::ddpm_discrete; }
  std::size_t steps() const { return betas_.size(); }

  /// Schedule pair at t. Continuous kinds take t in [0,1]; the discrete kind
  /// takes an integer-valued t in {1..T}.
  AlphaSigma alpha_sigma(double t) const;
  /// Value fed to the network's time embedding, always in [0,1].
  double network_time(double t) const;

  double beta(std::size_t t) const;
  double alpha(std::size_t t) const;      ///< 1 - beta_t
  double alpha_bar(std::size_t t) const;  ///< running product of alpha_1..alpha_t

  /// Discrete chain matching this continuous schedule on a uniform grid of
  /// `steps` points: abar_i = abar(i/steps).
  NoiseSchedule discretize(std::size_t steps) const;

 private:
  NoiseSchedule() = default;
  void check_discrete_t(double t) const;

  ScheduleKind kind_ = ScheduleKind::vp_continuous;
  double beta_min_ = 0.1;
  double beta_max_ = 20.0;
  std::vector<double> betas_;
  std::vector<double> alpha_bars_;
  // Continuous time each discrete index stands for, when discretized.
  std::vector<double> grid_times_;
};

struct PerturbedSample {
  std::vector<double> x_t;
  double t;
  std::vector<double> epsilon;
};

/// x_t = alpha_t x0 + sigma_t eps with eps ~ N(0, I) drawn from rng.
PerturbedSample perturb(const NoiseSchedule& sched, std::span<const double> x0, double t, Rng& rng);

/// Ancestral DDPM step with sigma_t^2 = beta_t; no noise is added at t = 1.
std::vector<double> ddpm_reverse_step(const NoiseSchedule& sched, std::span<const double> x_t, std::size_t t,
                                      std::span<const double> eps_pred, Rng& rng);

/// Explicit Euler step toward data along the linear path: x - dt * v.
std::vector<double> euler_flow_step(std::span<const double> x_t, double t, std::span<const double> v_pred, double dt);

}  // namespace d2c
