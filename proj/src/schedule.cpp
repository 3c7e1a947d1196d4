#include "ficd/schedule.hpp"

#include <cmath>
#include <string>

#include "ficd/errors.hpp"

namespace ficd {

size_t NoiseSchedule::index(int t) const {
    if (t < 1 || t > t_count_)
        throw ConfigError("timestep " + std::to_string(t) + " outside [1," +
                          std::to_string(t_count_) + "]");
    return static_cast<size_t>(t - 1);
}

NoiseSchedule::SignalNoise NoiseSchedule::signal_noise_coeffs(int t) const {
    const double ab = alpha_bar(t);
    (void)index(t);
    return {std::sqrt(ab), std::sqrt(1.0 - ab)};
}

NoiseSchedule::PosteriorCoeffs NoiseSchedule::posterior_coeffs(int t) const {
    const double a = alpha(t);
    const double ab = alpha_bar(t);
    const double ab_prev = alpha_bar(t - 1);
    PosteriorCoeffs c;
    c.c0 = std::sqrt(ab_prev) * (1.0 - a) / (1.0 - ab);
    c.ct = std::sqrt(a) * (1.0 - ab_prev) / (1.0 - ab);
    c.var = posterior_var(t);
    return c;
}

NoiseSchedule linear_schedule(int timesteps, double beta_start, double beta_end) {
    if (timesteps < 2) throw ConfigError("schedule needs at least 2 timesteps");
    if (!(beta_start > 0.0) || !(beta_start <= beta_end) || !(beta_end < 1.0))
        throw ConfigError("schedule requires 0 < beta_start <= beta_end < 1");

    NoiseSchedule s;
    s.t_count_ = timesteps;
    s.beta_.resize(static_cast<size_t>(timesteps));
    s.alpha_.resize(static_cast<size_t>(timesteps));
    s.alpha_bar_.resize(static_cast<size_t>(timesteps));
    s.posterior_var_.resize(static_cast<size_t>(timesteps));

    double running = 1.0;
    for (int t = 1; t <= timesteps; ++t) {
        const size_t i = static_cast<size_t>(t - 1);
        s.beta_[i] = beta_start + (beta_end - beta_start) * static_cast<double>(t - 1) /
                                      static_cast<double>(timesteps - 1);
        s.alpha_[i] = 1.0 - s.beta_[i];
        const double ab_prev = running;
        running *= s.alpha_[i];
        s.alpha_bar_[i] = running;
        s.posterior_var_[i] = (1.0 - ab_prev) / (1.0 - running) * s.beta_[i];
    }
    return s;
}

}  // namespace ficd
