#pragma once

#include <span>
#include <string_view>
#include <vector>

#include "mvd/common.hpp"
#include "mvd/rng.hpp"

namespace mvd {

struct ScheduleConfig {
  int steps = 100;
  // Linear beta endpoints as quoted for `reference_steps` steps; they are
  // rescaled by reference_steps / steps so that a short chain still ends near
  // pure noise.
  double beta_start = 1e-4;
  double beta_end = 0.02;
  int reference_steps = 1000;
};

// Steps are 1-based: t in [1, T]. alpha_bar(0) == 1.
class NoiseSchedule {
 public:
  static NoiseSchedule linear(const ScheduleConfig& config);
  static NoiseSchedule from_betas(std::vector<double> betas);

  int steps() const { return static_cast<int>(beta_.size()); }
  double beta(int t) const;
  double alpha(int t) const { return 1.0 - beta(t); }
  double alpha_bar(int t) const;
  // Variance of q(x_{t-1} | x_t, x_0).
  double posterior_variance(int t) const;

  void check_step(int t) const;

 private:
  explicit NoiseSchedule(std::vector<double> betas);

  std::vector<double> beta_;
  std::vector<double> alpha_bar_;  // alpha_bar_[t], index 0 holds 1.0
};

enum class SigmaForm { Verbatim, Reciprocal };

SigmaForm parse_sigma_form(std::string_view text);
std::string_view to_string(SigmaForm form);

struct DepthSampleParams {
  double k = 1.0;
  int samples = 3;
  SigmaForm form = SigmaForm::Reciprocal;
};

std::vector<double> forward_noise(std::span<const double> x0, int t, std::span<const double> eps,
                                  const NoiseSchedule& schedule);

std::vector<double> expected_depth(std::span<const double> d_t, int t,
                                   const NoiseSchedule& schedule);

// Standard deviation of the depth proposal at step t.
//   Verbatim:   k * sqrt(abar) / sqrt(1 - abar)
//   Reciprocal: k * sqrt(1 - abar) / sqrt(abar)
double depth_sigma(int t, const DepthSampleParams& params, const NoiseSchedule& schedule);

// Returns d_t.size() * params.samples depths, ray-major
// (out[r * samples + j] is sample j of ray r), clamped to [near, far].
std::vector<double> sample_depths(std::span<const double> d_t, int t,
                                  const DepthSampleParams& params, const NoiseSchedule& schedule,
                                  Rng& rng, double near, double far);

std::vector<double> cfg_combine(std::span<const double> eps_cond,
                                std::span<const double> eps_uncond, double omega);

// x_{t-1} = mean(x_t, eps) + sqrt(posterior_variance(t)) * z with z ~ N(0, I);
// z is not drawn at t == 1.
std::vector<double> ancestral_step(std::span<const double> x_t, std::span<const double> eps_pred,
                                   int t, const NoiseSchedule& schedule, Rng& rng);

// Same update with caller-provided standard-normal noise (ignored at t == 1).
std::vector<double> ancestral_step_with_noise(std::span<const double> x_t,
                                              std::span<const double> eps_pred, int t,
                                              const NoiseSchedule& schedule,
                                              std::span<const double> noise);

}  // namespace mvd
