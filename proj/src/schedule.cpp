#include "d2c/schedule.hpp"

#include <cmath>

namespace d2c {

std::string to_string(ScheduleKind kind) {
  switch (kind) {
    case ScheduleKind::vp_continuous: return "vp-continuous";
    case ScheduleKind::linear_flow: return "linear-flow";
    case ScheduleKind::ddpm_discrete: return "ddpm-discrete";
  }
  return "unknown";
}

ScheduleKind schedule_kind_from_string(const std::string& s) {
  if (s == "vp-continuous") return ScheduleKind::vp_continuous;
  if (s == "linear-flow") return ScheduleKind::linear_flow;
  if (s == "ddpm-discrete") return ScheduleKind::ddpm_discrete;
  throw std::invalid_argument("unknown schedule kind '" + s + "'");
}

NoiseSchedule NoiseSchedule::vp_continuous(double beta_min, double beta_max) {
  if (!(beta_min >= 0.0) || !(beta_max > beta_min)) throw std::invalid_argument("vp schedule needs 0 <= beta_min < beta_max");
  NoiseSchedule s;
  s.kind_ = ScheduleKind::vp_continuous;
  s.beta_min_ = beta_min;
  s.beta_max_ = beta_max;
  return s;
}

NoiseSchedule NoiseSchedule::linear_flow() {
  NoiseSchedule s;
  s.kind_ = ScheduleKind::linear_flow;
  return s;
}

NoiseSchedule NoiseSchedule::ddpm_linear(std::size_t steps, double beta_start, double beta_end) {
  if (steps < 1) throw std::invalid_argument("ddpm schedule needs at least one step");
  std::vector<double> betas(steps);
  for (std::size_t i = 0; i < steps; ++i) {
    const double f = steps == 1 ? 0.0 : static_cast<double>(i) / static_cast<double>(steps - 1);
    betas[i] = beta_start + f * (beta_end - beta_start);
  }
  return ddpm_from_betas(std::move(betas));
}

NoiseSchedule NoiseSchedule::ddpm_from_betas(std::vector<double> betas) {
  if (betas.empty()) throw std::invalid_argument("empty beta table");
  NoiseSchedule s;
  s.kind_ = ScheduleKind::ddpm_discrete;
  double prod = 1.0;
  for (double b : betas) {
    if (!(b > 0.0 && b < 1.0)) throw std::invalid_argument("beta values must lie in (0, 1)");
    prod *= 1.0 - b;
    s.alpha_bars_.push_back(prod);
  }
  s.betas_ = std::move(betas);
  const double T = static_cast<double>(s.betas_.size());
  for (std::size_t i = 1; i <= s.betas_.size(); ++i) s.grid_times_.push_back(static_cast<double>(i) / T);
  return s;
}

void NoiseSchedule::check_discrete_t(double t) const {
  if (!(t >= 1.0) || t > static_cast<double>(betas_.size()) || t != std::floor(t)) {
    throw RangeError("discrete time " + std::to_string(t) + " outside {1.." + std::to_string(betas_.size()) + "}");
  }
}

AlphaSigma NoiseSchedule::alpha_sigma(double t) const {
  switch (kind_) {
    case ScheduleKind::vp_continuous: {
      if (!(t >= 0.0 && t <= 1.0)) throw RangeError("time " + std::to_string(t) + " outside [0, 1]");
      const double log_abar = -0.5 * t * t * (beta_max_ - beta_min_) - t * beta_min_;
      const double abar = std::exp(log_abar);
      return {std::sqrt(abar), std::sqrt(-std::expm1(log_abar))};
    }
    case ScheduleKind::linear_flow:
      if (!(t >= 0.0 && t <= 1.0)) throw RangeError("time " + std::to_string(t) + " outside [0, 1]");
      return {1.0 - t, t};
    case ScheduleKind::ddpm_discrete: {
      check_discrete_t(t);
      const double abar = alpha_bars_[static_cast<std::size_t>(t) - 1];
      return {std::sqrt(abar), std::sqrt(1.0 - abar)};
    }
  }
  throw std::logic_error("unreachable");
}

double NoiseSchedule::network_time(double t) const {
  if (kind_ != ScheduleKind::ddpm_discrete) {
    if (!(t >= 0.0 && t <= 1.0)) throw RangeError("time " + std::to_string(t) + " outside [0, 1]");
    return t;
  }
  check_discrete_t(t);
  return grid_times_[static_cast<std::size_t>(t) - 1];
}

double NoiseSchedule::beta(std::size_t t) const {
  check_discrete_t(static_cast<double>(t));
  return betas_[t - 1];
}

double NoiseSchedule::alpha(std::size_t t) const { return 1.0 - beta(t); }

double NoiseSchedule::alpha_bar(std::size_t t) const {
  check_discrete_t(static_cast<double>(t));
  return alpha_bars_[t - 1];
}

NoiseSchedule NoiseSchedule::discretize(std::size_t steps) const {
  if (kind_ != ScheduleKind::vp_continuous) throw std::logic_error("only the vp-continuous schedule can be discretized");
  if (steps < 1) throw std::invalid_argument("discretize needs at least one step");
  std::vector<double> betas(steps);
  double prev = 1.0;
  for (std::size_t i = 1; i <= steps; ++i) {
    const double t = static_cast<double>(i) / static_cast<double>(steps);
    const double a = alpha_sigma(t).alpha;
    const double abar = a * a;
    betas[i - 1] = 1.0 - abar / prev;
    prev = abar;
  }
  NoiseSchedule s = ddpm_from_betas(std::move(betas));
  return s;
}

PerturbedSample perturb(const NoiseSchedule& sched, std::span<const double> x0, double t, Rng& rng) {
  const AlphaSigma as = sched.alpha_sigma(t);
  PerturbedSample out{std::vector<double>(x0.size()), t, std::vector<double>(x0.size())};
  for (std::size_t i = 0; i < x0.size(); ++i) {
    if (!std::isfinite(x0[i])) throw std::invalid_argument("perturb: non-finite input");
    out.epsilon[i] = rng.normal();
    out.x_t[i] = as.alpha * x0[i] + as.sigma * out.epsilon[i];
  }
  return out;
}

std::vector<double> ddpm_reverse_step(const NoiseSchedule& sched, std::span<const double> x_t, std::size_t t,
                                      std::span<const double> eps_pred, Rng& rng) {
  if (!sched.discrete()) throw std::logic_error("ddpm_reverse_step needs a discrete schedule");
  if (t < 1 || t > sched.steps()) throw RangeError("reverse step t=" + std::to_string(t) + " outside {1..T}");
  if (x_t.size() != eps_pred.size()) throw std::invalid_argument("ddpm_reverse_step: size mismatch");
  const double beta = sched.beta(t);
  const double alpha = 1.0 - beta;
  const double coef = beta / std::sqrt(1.0 - sched.alpha_bar(t));
  const double inv_sqrt_alpha = 1.0 / std::sqrt(alpha);
  const double noise_scale = t > 1 ? std::sqrt(beta) : 0.0;
  std::vector<double> out(x_t.size());
  for (std::size_t i = 0; i < x_t.size(); ++i) {
    out[i] = inv_sqrt_alpha * (x_t[i] - coef * eps_pred[i]);
    if (t > 1) out[i] += noise_scale * rng.normal();
  }
  return out;
}

std::vector<double> euler_flow_step(std::span<const double> x_t, double t, std::span<const double> v_pred, double dt) {
  if (dt < 0.0 || dt > t + 1e-12) throw RangeError("euler step dt=" + std::to_string(dt) + " exceeds t=" + std::to_string(t));
  if (x_t.size() != v_pred.size()) throw std::invalid_argument("euler_flow_step: size mismatch");
  std::vector<double> out(x_t.size());
  for (std::size_t i = 0; i < x_t.size(); ++i) out[i] = x_t[i] - dt * v_pred[i];
  return out;
}

}  // namespace d2c
