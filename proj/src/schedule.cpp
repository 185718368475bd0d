#include "mvd/schedule.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace mvd {

namespace {

void check_same_size(std::size_t a, std::size_t b, const char* what) {
  if (a != b) {
    throw Error(ErrorCode::ShapeMismatch, std::string(what) + ": size mismatch (" +
                                              std::to_string(a) + " vs " + std::to_string(b) + ")");
  }
}

}  // namespace

NoiseSchedule::NoiseSchedule(std::vector<double> betas) : beta_(std::move(betas)) {
  if (beta_.empty()) {
    throw Error(ErrorCode::InvalidArgument, "noise schedule needs at least one step");
  }
  alpha_bar_.resize(beta_.size() + 1);
  alpha_bar_[0] = 1.0;
  for (std::size_t i = 0; i < beta_.size(); ++i) {
    if (!(beta_[i] > 0.0 && beta_[i] < 1.0)) {
      throw Error(ErrorCode::InvalidArgument, "beta values must lie in (0, 1)");
    }
    alpha_bar_[i + 1] = (1.0 - beta_[i]) * alpha_bar_[i];
  }
}

NoiseSchedule NoiseSchedule::linear(const ScheduleConfig& config) {
  if (config.steps < 1 || config.reference_steps < 1) {
    throw Error(ErrorCode::InvalidArgument, "schedule steps must be >= 1");
  }
  const double scale = static_cast<double>(config.reference_steps) / config.steps;
  const double lo = config.beta_start * scale;
  const double hi = config.beta_end * scale;
  std::vector<double> betas(config.steps);
  for (int i = 0; i < config.steps; ++i) {
    const double frac = config.steps == 1 ? 0.0 : static_cast<double>(i) / (config.steps - 1);
    betas[i] = lo + (hi - lo) * frac;
  }
  return NoiseSchedule(std::move(betas));
}

NoiseSchedule NoiseSchedule::from_betas(std::vector<double> betas) {
  return NoiseSchedule(std::move(betas));
}

void NoiseSchedule::check_step(int t) const {
  if (t < 1 || t > steps()) {
    throw Error(ErrorCode::StepOutOfRange,
                "step " + std::to_string(t) + " outside [1, " + std::to_string(steps()) + "]");
  }
}

double NoiseSchedule::beta(int t) const {
  check_step(t);
  return beta_[t - 1];
}

double NoiseSchedule::alpha_bar(int t) const {
  if (t == 0) return 1.0;
  check_step(t);
  return alpha_bar_[t];
}

double NoiseSchedule::posterior_variance(int t) const {
  check_step(t);
  if (t == 1) return 0.0;
  return (1.0 - alpha_bar_[t - 1]) / (1.0 - alpha_bar_[t]) * beta_[t - 1];
}

SigmaForm parse_sigma_form(std::string_view text) {
  if (text == "verbatim") return SigmaForm::Verbatim;
  if (text == "reciprocal") return SigmaForm::Reciprocal;
  throw Error(ErrorCode::InvalidConfig,
              "schedule_form must be 'verbatim' or 'reciprocal', got '" + std::string(text) + "'");
}

std::string_view to_string(SigmaForm form) {
  return form == SigmaForm::Verbatim ? "verbatim" : "reciprocal";
}

std::vector<double> forward_noise(std::span<const double> x0, int t, std::span<const double> eps,
                                  const NoiseSchedule& schedule) {
  check_same_size(x0.size(), eps.size(), "forward_noise");
  schedule.check_step(t);
  const double abar = schedule.alpha_bar(t);
  const double a = std::sqrt(abar);
  const double b = std::sqrt(1.0 - abar);
  std::vector<double> out(x0.size());
  for (std::size_t i = 0; i < x0.size(); ++i) out[i] = a * x0[i] + b * eps[i];
  return out;
}

std::vector<double> expected_depth(std::span<const double> d_t, int t,
                                   const NoiseSchedule& schedule) {
  schedule.check_step(t);
  const double inv = 1.0 / std::sqrt(schedule.alpha_bar(t));
  std::vector<double> out(d_t.size());
  for (std::size_t i = 0; i < d_t.size(); ++i) out[i] = d_t[i] * inv;
  return out;
}

double depth_sigma(int t, const DepthSampleParams& params, const NoiseSchedule& schedule) {
  schedule.check_step(t);
  const double abar = schedule.alpha_bar(t);
  const double signal = std::sqrt(abar);
  const double noise = std::sqrt(1.0 - abar);
  return params.form == SigmaForm::Verbatim ? params.k * signal / noise
                                            : params.k * noise / signal;
}

std::vector<double> sample_depths(std::span<const double> d_t, int t,
                                  const DepthSampleParams& params, const NoiseSchedule& schedule,
                                  Rng& rng, double near, double far) {
  if (!(near < far)) {
    throw Error(ErrorCode::InvalidBounds, "sample_depths requires near < far");
  }
  if (params.samples < 1 || params.k < 0.0) {
    throw Error(ErrorCode::InvalidArgument, "depth sampling needs samples >= 1 and k >= 0");
  }
  const std::vector<double> mean = expected_depth(d_t, t, schedule);
  const double sigma = depth_sigma(t, params, schedule);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<double> out(mean.size() * params.samples);
  for (std::size_t r = 0; r < mean.size(); ++r) {
    for (int j = 0; j < params.samples; ++j) {
      const double z = normal(rng);
      out[r * params.samples + j] = std::clamp(mean[r] + sigma * z, near, far);
    }
  }
  return out;
}

std::vector<double> cfg_combine(std::span<const double> eps_cond,
                                std::span<const double> eps_uncond, double omega) {
  check_same_size(eps_cond.size(), eps_uncond.size(), "cfg_combine");
  std::vector<double> out(eps_cond.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = omega * eps_cond[i] + (1.0 - omega) * eps_uncond[i];
  }
  return out;
}

std::vector<double> ancestral_step_with_noise(std::span<const double> x_t,
                                              std::span<const double> eps_pred, int t,
                                              const NoiseSchedule& schedule,
                                              std::span<const double> noise) {
  check_same_size(x_t.size(), eps_pred.size(), "ancestral_step");
  schedule.check_step(t);
  const double beta = schedule.beta(t);
  const double inv_sqrt_alpha = 1.0 / std::sqrt(schedule.alpha(t));
  const double eps_coef = beta / std::sqrt(1.0 - schedule.alpha_bar(t));
  const double sigma = std::sqrt(schedule.posterior_variance(t));
  if (t > 1) check_same_size(x_t.size(), noise.size(), "ancestral_step noise");
  std::vector<double> out(x_t.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = inv_sqrt_alpha * (x_t[i] - eps_coef * eps_pred[i]);
    if (t > 1) out[i] += sigma * noise[i];
  }
  return out;
}

std::vector<double> ancestral_step(std::span<const double> x_t, std::span<const double> eps_pred,
                                   int t, const NoiseSchedule& schedule, Rng& rng) {
  schedule.check_step(t);
  std::vector<double> noise;
  if (t > 1) {
    noise.resize(x_t.size());
    std::normal_distribution<double> normal(0.0, 1.0);
    for (double& z : noise) z = normal(rng);
  }
  return ancestral_step_with_noise(x_t, eps_pred, t, schedule, noise);
}

}  // namespace mvd
