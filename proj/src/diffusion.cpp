#include "ficd/diffusion.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "ficd/errors.hpp"
#include "ficd/rng.hpp"

namespace ficd {

namespace diff {

namespace {
void check_sizes(const char* what, size_t a, size_t b) {
    if (a != b)
        throw ShapeError(std::string(what) + ": buffer sizes differ (" + std::to_string(a) +
                         " vs " + std::to_string(b) + ")");
}
}  // namespace

void corrupt(std::vector<double>& out, const std::vector<double>& x0,
             const std::vector<double>& eps, int t, const NoiseSchedule& s) {
    check_sizes("corrupt", x0.size(), eps.size());
    const auto c = s.signal_noise_coeffs(t);
    out.resize(x0.size());
    for (size_t i = 0; i < x0.size(); ++i) out[i] = c.signal * x0[i] + c.noise * eps[i];
}

void estimate_x0(std::vector<double>& out, const std::vector<double>& x_t,
                 const std::vector<double>& eps_hat, int t, const NoiseSchedule& s, bool clamp) {
    check_sizes("estimate_x0", x_t.size(), eps_hat.size());
    const auto c = s.signal_noise_coeffs(t);
    const double inv = 1.0 / c.signal;
    out.resize(x_t.size());
    for (size_t i = 0; i < x_t.size(); ++i) {
        double v = (x_t[i] - c.noise * eps_hat[i]) * inv;
        if (clamp) v = std::clamp(v, -1.0, 1.0);
        out[i] = v;
    }
}

void ancestral_step(std::vector<double>& out, const std::vector<double>& x_t,
                    const std::vector<double>& eps_hat, int t, const std::vector<double>& z,
                    const NoiseSchedule& s) {
    check_sizes("ancestral_step", x_t.size(), eps_hat.size());
    if (!z.empty()) check_sizes("ancestral_step", x_t.size(), z.size());
    const double a = s.alpha(t);
    const double ab = s.alpha_bar(t);
    const double k = (1.0 - a) / std::sqrt(1.0 - ab);
    const double inv = 1.0 / std::sqrt(a);
    const double sigma = std::sqrt(s.posterior_var(t));
    out.resize(x_t.size());
    for (size_t i = 0; i < x_t.size(); ++i) {
        out[i] = (x_t[i] - k * eps_hat[i]) * inv;
        if (!z.empty()) out[i] += sigma * z[i];
    }
}

void renoise_step(std::vector<double>& out, const std::vector<double>& x0_hat,
                  const std::vector<double>& eps_hat, int t, const NoiseSchedule& s) {
    check_sizes("renoise_step", x0_hat.size(), eps_hat.size());
    const double ab_prev = s.alpha_bar(t - 1);
    const double cs = std::sqrt(ab_prev);
    const double cn = std::sqrt(1.0 - ab_prev);
    out.resize(x0_hat.size());
    for (size_t i = 0; i < x0_hat.size(); ++i) out[i] = cs * x0_hat[i] + cn * eps_hat[i];
}

std::vector<double> reverse_sample(const DenoiseFn& denoise, size_t n, const SampleConfig& cfg) {
    if (!cfg.schedule) throw ConfigError("reverse_sample: missing schedule");
    const NoiseSchedule& s = *cfg.schedule;
    Rng rng(cfg.seed);
    std::vector<double> x(n);
    for (double& v : x) v = rng.normal();

    std::vector<double> x0_hat, next;
    for (int t = s.timesteps(); t >= 1; --t) {
        std::vector<double> eps_hat;
        try {
            eps_hat = denoise(x, t);
        } catch (const std::exception& e) {
            throw NumericError("denoiser failed at timestep " + std::to_string(t) + ": " +
                               e.what());
        }
        check_sizes("reverse_sample", x.size(), eps_hat.size());
        estimate_x0(x0_hat, x, eps_hat, t, s, cfg.clamp_x0);
        if (t == 1) {
            x = x0_hat;
            break;
        }
        renoise_step(next, x0_hat, eps_hat, t, s);
        x.swap(next);
    }
    return x;
}

std::vector<double> mc_sample(const DenoiseFn& denoise, size_t n, const SampleConfig& cfg) {
    if (cfg.mc_repeats < 1) throw ConfigError("mc_sample: mc_repeats must be >= 1");
    std::vector<double> acc(n, 0.0);
    for (int r = 0; r < cfg.mc_repeats; ++r) {
        SampleConfig one = cfg;
        one.seed = cfg.seed + static_cast<uint64_t>(r);
        one.mc_repeats = 1;
        std::vector<double> sample = reverse_sample(denoise, n, one);
        for (size_t i = 0; i < n; ++i) acc[i] += sample[i];
    }
    const double inv = 1.0 / static_cast<double>(cfg.mc_repeats);
    for (double& v : acc) v *= inv;
    return acc;
}

}  // namespace diff

// ---------------------------------------------------------------------------
// Volume-level wrappers
// ---------------------------------------------------------------------------

namespace {
void check_dims(const char* what, const Volume3& a, const Volume3& b) {
    if (!(a.dims() == b.dims()))
        throw ShapeError(std::string(what) + ": volume dims differ (" + dims_str(a.dims()) +
                         " vs " + dims_str(b.dims()) + ")");
}
}  // namespace

Volume3 corrupt(const Volume3& x0, const Volume3& eps, int t, const NoiseSchedule& s) {
    check_dims("corrupt", x0, eps);
    if (x0.tag() != RangeTag::Train)
        throw ConfigError("corrupt: x0 must be train-range normalized");
    std::vector<double> out;
    diff::corrupt(out, x0.voxels(), eps.voxels(), t, s);
    return Volume3(x0.dims(), std::move(out), RangeTag::Raw, x0.stored_min(), x0.stored_max());
}

Volume3 estimate_x0(const Volume3& x_t, const Volume3& eps_hat, int t, const NoiseSchedule& s,
                    bool clamp) {
    check_dims("estimate_x0", x_t, eps_hat);
    std::vector<double> out;
    diff::estimate_x0(out, x_t.voxels(), eps_hat.voxels(), t, s, clamp);
    return Volume3(x_t.dims(), std::move(out), RangeTag::Train, x_t.stored_min(),
                   x_t.stored_max());
}

Volume3 ancestral_step(const Volume3& x_t, const Volume3& eps_hat, int t, const Volume3* z,
                       const NoiseSchedule& s) {
    check_dims("ancestral_step", x_t, eps_hat);
    static const std::vector<double> empty;
    if (z) check_dims("ancestral_step", x_t, *z);
    std::vector<double> out;
    diff::ancestral_step(out, x_t.voxels(), eps_hat.voxels(), t, z ? z->voxels() : empty, s);
    return Volume3(x_t.dims(), std::move(out), RangeTag::Raw, x_t.stored_min(), x_t.stored_max());
}

Volume3 reverse_sample(const Denoiser& denoiser, const Volume3& condition,
                       const SampleConfig& cfg) {
    if (condition.tag() != RangeTag::Train)
        throw ConfigError("reverse_sample: condition must be train-range normalized");
    const VolDims d = condition.dims();
    diff::DenoiseFn fn = [&](const std::vector<double>& x, int t) {
        Volume3 xv(d, x, RangeTag::Raw, condition.stored_min(), condition.stored_max());
        return denoiser(xv, condition, t).voxels();
    };
    std::vector<double> out = diff::reverse_sample(fn, static_cast<size_t>(d.count()), cfg);
    return Volume3(d, std::move(out), RangeTag::Train, condition.stored_min(),
                   condition.stored_max());
}

Volume3 mc_sample(const Denoiser& denoiser, const Volume3& condition, const SampleConfig& cfg) {
    if (cfg.mc_repeats < 1) throw ConfigError("mc_sample: mc_repeats must be >= 1");
    const VolDims d = condition.dims();
    std::vector<double> acc(static_cast<size_t>(d.count()), 0.0);
    for (int r = 0; r < cfg.mc_repeats; ++r) {
        SampleConfig one = cfg;
        one.seed = cfg.seed + static_cast<uint64_t>(r);
        one.mc_repeats = 1;
        const Volume3 sample = reverse_sample(denoiser, condition, one);
        for (size_t i = 0; i < acc.size(); ++i) acc[i] += sample.voxels()[i];
    }
    const double inv = 1.0 / static_cast<double>(cfg.mc_repeats);
    for (double& v : acc) v *= inv;
    return Volume3(d, std::move(acc), RangeTag::Train, condition.stored_min(),
                   condition.stored_max());
}

}  // namespace ficd
