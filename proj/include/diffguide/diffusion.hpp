#pragma once

#include <array>
#include <memory>

#include "diffguide/nn.hpp"
#include "diffguide/tensor.hpp"

namespace diffguide {

// alpha_bar[t] = prod_{s<=t} (1 - beta_s), alpha_bar[0] = 1
struct NoiseSchedule {
  int num_train_steps = 0;
  std::vector<double> alpha_bar;  // length num_train_steps + 1

  void validate() const {
    if (num_train_steps < 1 ||
        alpha_bar.size() != static_cast<size_t>(num_train_steps) + 1)
      throw std::invalid_argument("NoiseSchedule: bad size");
    if (alpha_bar[0] != 1.0)
      throw std::invalid_argument("NoiseSchedule: alpha_bar[0] != 1");
    for (size_t t = 1; t < alpha_bar.size(); ++t)
      if (!(alpha_bar[t] > 0.0 && alpha_bar[t] <= 1.0 &&
            alpha_bar[t] < alpha_bar[t - 1]))
        throw std::invalid_argument("NoiseSchedule: not strictly decreasing in (0,1]");
  }
};

enum class ScheduleKind { linear };

inline constexpr double kBetaMinDefault = 1e-4;
inline constexpr double kBetaMaxDefault = 0.02;
inline constexpr int kNumTrainStepsDefault = 1000;

inline NoiseSchedule build_noise_schedule(int num_train_steps,
                                          ScheduleKind kind = ScheduleKind::linear,
                                          double beta_min = kBetaMinDefault,
                                          double beta_max = kBetaMaxDefault) {
  if (num_train_steps < 1)
    throw std::invalid_argument("build_noise_schedule: num_train_steps < 1");
  (void)kind;  // only linear for now
  NoiseSchedule s;
  s.num_train_steps = num_train_steps;
  s.alpha_bar.resize(static_cast<size_t>(num_train_steps) + 1);
  s.alpha_bar[0] = 1.0;
  double prod = 1.0;
  for (int t = 1; t <= num_train_steps; ++t) {
    double beta =
        num_train_steps == 1
            ? beta_min
            : beta_min + (beta_max - beta_min) * (t - 1) / (num_train_steps - 1);
    prod *= 1.0 - beta;
    s.alpha_bar[static_cast<size_t>(t)] = prod;
  }
  s.validate();
  return s;
}

// schedule built from explicit betas (tests, custom ramps)
inline NoiseSchedule schedule_from_betas(const std::vector<double>& betas) {
  if (betas.empty()) throw std::invalid_argument("schedule_from_betas: empty");
  NoiseSchedule s;
  s.num_train_steps = static_cast<int>(betas.size());
  s.alpha_bar.resize(betas.size() + 1);
  s.alpha_bar[0] = 1.0;
  double prod = 1.0;
  for (size_t t = 0; t < betas.size(); ++t) {
    prod *= 1.0 - betas[t];
    s.alpha_bar[t + 1] = prod;
  }
  s.validate();
  return s;
}

struct TimestepPlan {
  int T = 0;
  int max_timestep = 0;
  std::vector<int> timesteps;  // strictly increasing, in [1, max_timestep]

  void validate() const {
    if (T < 1 || max_timestep < 1 || timesteps.size() != static_cast<size_t>(T))
      throw std::invalid_argument("TimestepPlan: bad sizes");
    int prev = 0;
    for (int t : timesteps) {
      if (t <= prev || t > max_timestep)
        throw std::invalid_argument("TimestepPlan: timesteps invalid");
      prev = t;
    }
  }
};

enum class TimestepPolicy { uniform };

inline TimestepPlan sample_timesteps(int T, int max_timestep,
                                     TimestepPolicy policy = TimestepPolicy::uniform) {
  if (T < 1 || max_timestep < 1 || T > max_timestep)
    throw std::invalid_argument("sample_timesteps: need 1 <= T <= max_timestep");
  (void)policy;
  TimestepPlan plan;
  plan.T = T;
  plan.max_timestep = max_timestep;
  for (int i = 1; i <= T; ++i) {
    int t = static_cast<int>(std::lround(static_cast<double>(i) * max_timestep / T));
    plan.timesteps.push_back(std::max(1, t));
  }
  // rounding can collide for small max/T ratios; nudge onto distinct values
  for (size_t i = 1; i < plan.timesteps.size(); ++i)
    if (plan.timesteps[i] <= plan.timesteps[i - 1])
      plan.timesteps[i] = plan.timesteps[i - 1] + 1;
  plan.validate();
  return plan;
}

// x_t = sqrt(alpha_bar_t) x0 + sqrt(1 - alpha_bar_t) eps
inline Tensor forward_diffuse(const Tensor& x0, int t, const Tensor& noise,
                              const NoiseSchedule& schedule) {
  if (t < 0 || t > schedule.num_train_steps)
    throw std::invalid_argument("forward_diffuse: t out of range");
  if (!x0.same_shape(noise))
    throw std::invalid_argument("forward_diffuse: shape mismatch");
  double ab = schedule.alpha_bar[static_cast<size_t>(t)];
  double cs = std::sqrt(ab), cn = std::sqrt(1.0 - ab);
  Tensor out = x0;
  for (size_t i = 0; i < out.data.size(); ++i)
    out.data[i] = cs * x0.data[i] + cn * noise.data[i];
  return out;
}

// 4 upsampling stages x 3 taps each; within a stage all taps share
// spatial size
struct DenoiserFeatures {
  std::array<std::array<Tensor, 3>, 4> taps;  // [layer][k], each [C,H,W]
  int timestep = 0;

  void validate() const {
    for (int l = 0; l < 4; ++l) {
      for (int k = 0; k < 3; ++k) {
        const Tensor& t = taps[static_cast<size_t>(l)][static_cast<size_t>(k)];
        if (t.ndim() != 3) throw std::runtime_error("DenoiserFeatures: tap not 3-D");
        const Tensor& t0 = taps[static_cast<size_t>(l)][0];
        if (t.dim(1) != t0.dim(1) || t.dim(2) != t0.dim(2))
          throw std::runtime_error(
              "DenoiserFeatures: spatial mismatch within layer");
      }
    }
  }
};

class DenoiserInterface {
 public:
  virtual ~DenoiserInterface() = default;
  virtual DenoiserFeatures forward(const Tensor& x_t, int t) const = 0;
  virtual bool frozen() const { return true; }
};

// Small fixed-seed convolutional stack standing in for a pretrained
// denoiser UNet decoder. Emits 4 stages at strides 4/8/16/32 with 3 taps
// each. Parameters are frozen at construction; a loader for real UNet
// weights can implement DenoiserInterface the same way.
class ToyDenoiser : public DenoiserInterface {
 public:
  explicit ToyDenoiser(uint64_t seed = 7, int tap_channels = 8,
                       int num_train_steps = kNumTrainStepsDefault)
      : tap_channels_(tap_channels), num_train_steps_(num_train_steps) {
    Rng rng(derive_seed(seed, "toy_denoiser"));
    int cin = 4;  // rgb + timestep channel
    for (int l = 0; l < 4; ++l) {
      stage_w_[l] = kaiming_init({tap_channels_, cin, 3, 3}, rng);
      stage_b_[l] = Tensor({tap_channels_});
      for (int k = 0; k < 3; ++k) {
        tap_w_[l][k] = kaiming_init({tap_channels_, tap_channels_, 3, 3}, rng);
        tap_b_[l][k] = Tensor({tap_channels_});
      }
      cin = tap_channels_;
    }
  }

  DenoiserFeatures forward(const Tensor& x_t, int t) const override {
    if (x_t.ndim() != 3 || x_t.dim(0) != 3)
      throw std::invalid_argument("ToyDenoiser: expect [3,H,W] input");
    int H = x_t.dim(1), W = x_t.dim(2);
    // timestep conditioning: one constant channel
    Tensor x({1, 4, H, W});
    std::copy(x_t.data.begin(), x_t.data.end(), x.data.begin());
    double tc = static_cast<double>(t) / num_train_steps_;
    std::fill(x.data.begin() + static_cast<size_t>(3) * H * W, x.data.end(), tc);

    DenoiserFeatures out;
    out.timestep = t;
    Var h = Var::constant(std::move(x));
    // stride-4 stem, then stride-2 per remaining stage
    for (int l = 0; l < 4; ++l) {
      int stride = (l == 0) ? 4 : 2;
      // stride-4 via two stride-2 applications of the same kernel
      if (stride == 4) {
        h = ops::relu(ops::conv2d(h, Var::constant(stage_w_[l]),
                                  Var::constant(stage_b_[l]), 2, 1));
        h = ops::bilinear_resize(h, h.value().dim(2) / 2, h.value().dim(3) / 2);
      } else {
        h = ops::relu(ops::conv2d(h, Var::constant(stage_w_[l]),
                                  Var::constant(stage_b_[l]), 2, 1));
      }
      for (int k = 0; k < 3; ++k) {
        Var tap = ops::relu(ops::conv2d(h, Var::constant(tap_w_[l][k]),
                                        Var::constant(tap_b_[l][k]), 1, 1));
        const Tensor& tv = tap.value();
        Tensor chw({tv.dim(1), tv.dim(2), tv.dim(3)}, tv.data);
        out.taps[static_cast<size_t>(l)][static_cast<size_t>(k)] = std::move(chw);
      }
      if (l == 3) break;
      // hand the last tap activations to the next stage
      Tensor next = Tensor({1, tap_channels_, h.value().dim(2), h.value().dim(3)});
      const Tensor& last =
          out.taps[static_cast<size_t>(l)][2];
      std::copy(last.data.begin(), last.data.end(), next.data.begin());
      h = Var::constant(std::move(next));
    }
    out.validate();
    return out;
  }

  int tap_channels() const { return tap_channels_; }

 private:
  int tap_channels_;
  int num_train_steps_;
  std::array<Tensor, 4> stage_w_, stage_b_;
  std::array<std::array<Tensor, 3>, 4> tap_w_, tap_b_;
};

// Diffuse x0 to every planned timestep (fresh noise per step, derived
// from rng_seed) and run the frozen denoiser once per step.
inline std::vector<DenoiserFeatures> extract_multistep_features(
    const Tensor& x0, const TimestepPlan& plan, const NoiseSchedule& schedule,
    const DenoiserInterface& denoiser, uint64_t rng_seed) {
  plan.validate();
  if (plan.max_timestep > schedule.num_train_steps)
    throw std::invalid_argument("extract_multistep_features: plan exceeds schedule");
  if (!denoiser.frozen())
    throw std::invalid_argument("extract_multistep_features: denoiser must be frozen");
  std::vector<DenoiserFeatures> out;
  out.reserve(static_cast<size_t>(plan.T));
  for (int i = 0; i < plan.T; ++i) {
    int t = plan.timesteps[static_cast<size_t>(i)];
    Rng rng(derive_seed(rng_seed, "diffuse_noise", static_cast<uint64_t>(t)));
    Tensor noise = rng.normal_tensor(x0.shape);
    Tensor xt = forward_diffuse(x0, t, noise, schedule);
    DenoiserFeatures f = denoiser.forward(xt, t);
    f.validate();
    if (f.timestep != t)
      throw std::runtime_error("extract_multistep_features: denoiser timestep mismatch");
    out.push_back(std::move(f));
  }
  return out;
}

}  // namespace diffguide
