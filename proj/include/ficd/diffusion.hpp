#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "ficd/schedule.hpp"
#include "ficd/volume.hpp"

namespace ficd {

// Reverse-sampling run descriptor.
struct SampleConfig {
    const NoiseSchedule* schedule = nullptr;
    int mc_repeats = 1;
    uint64_t seed = 0;
    bool clamp_x0 = false;
    bool final_noise_zero = true;  // force z = 0 at t = 1 in ancestral stepping
};

// Buffer-level kernels shared by image-space and latent-space diffusion.
namespace diff {

// x_t = sqrt(abar_t) x0 + sqrt(1 - abar_t) eps
void corrupt(std::vector<double>& out, const std::vector<double>& x0,
             const std::vector<double>& eps, int t, const NoiseSchedule& s);

// x0_hat = (x_t - sqrt(1 - abar_t) eps_hat) / sqrt(abar_t), optionally clipped to [-1,1]
void estimate_x0(std::vector<double>& out, const std::vector<double>& x_t,
                 const std::vector<double>& eps_hat, int t, const NoiseSchedule& s, bool clamp);

// x_{t-1} = (x_t - (1-alpha_t)/sqrt(1-abar_t) eps_hat)/sqrt(alpha_t) + sigma_t z,
// sigma_t = sqrt(posterior variance). Pass z empty for z = 0.
void ancestral_step(std::vector<double>& out, const std::vector<double>& x_t,
                    const std::vector<double>& eps_hat, int t, const std::vector<double>& z,
                    const NoiseSchedule& s);

// x_{t-1} = sqrt(abar_{t-1}) x0_hat + sqrt(1 - abar_{t-1}) eps_hat:
// the estimator output re-noised by the scheduler at the next timestep down.
void renoise_step(std::vector<double>& out, const std::vector<double>& x0_hat,
                  const std::vector<double>& eps_hat, int t, const NoiseSchedule& s);

// Denoiser over flat buffers; the condition is captured by the callable.
using DenoiseFn = std::function<std::vector<double>(const std::vector<double>& x_t, int t)>;

// Full reverse loop t = T..1 from seed-drawn Gaussian noise: predict noise,
// estimate x0, re-noise down one level; returns the final x0 estimate.
std::vector<double> reverse_sample(const DenoiseFn& denoise, size_t n, const SampleConfig& cfg);

// Mean of mc_repeats independent reverse_sample runs (per-repeat seed = seed + index).
std::vector<double> mc_sample(const DenoiseFn& denoise, size_t n, const SampleConfig& cfg);

}  // namespace diff

// Volume-level interface. The denoiser receives the noisy volume, the
// conditioning volume, and the timestep, and returns predicted noise.
using Denoiser = std::function<Volume3(const Volume3& x_t, const Volume3& condition, int t)>;

Volume3 corrupt(const Volume3& x0, const Volume3& eps, int t, const NoiseSchedule& s);
Volume3 estimate_x0(const Volume3& x_t, const Volume3& eps_hat, int t, const NoiseSchedule& s,
                    bool clamp = false);
Volume3 ancestral_step(const Volume3& x_t, const Volume3& eps_hat, int t, const Volume3* z,
                       const NoiseSchedule& s);
Volume3 reverse_sample(const Denoiser& denoiser, const Volume3& condition, const SampleConfig& cfg);
Volume3 mc_sample(const Denoiser& denoiser, const Volume3& condition, const SampleConfig& cfg);

}  // namespace ficd
