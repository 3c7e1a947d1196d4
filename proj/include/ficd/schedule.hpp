#pragma once

#include <vector>

namespace ficd {

// Variance schedule and derived coefficients, indexed t = 1..T.
// beta_t = 1 - alpha_t, alpha_bar_t = prod_{s<=t} alpha_s with alpha_bar_0 := 1.
class NoiseSchedule {
public:
    int timesteps() const { return t_count_; }
    double beta(int t) const { return beta_[index(t)]; }
    double alpha(int t) const { return alpha_[index(t)]; }
    double alpha_bar(int t) const { return t == 0 ? 1.0 : alpha_bar_[index(t)]; }
    double posterior_var(int t) const { return posterior_var_[index(t)]; }

    double beta_start() const { return beta_.front(); }
    double beta_end() const { return beta_.back(); }

    // (sqrt(alpha_bar_t), sqrt(1 - alpha_bar_t)); squares sum to one.
    struct SignalNoise {
        double signal;
        double noise;
    };
    SignalNoise signal_noise_coeffs(int t) const;

    // Coefficients of the reverse-posterior mean and its variance:
    // mean = c0 * x0_hat + ct * x_t, var = posterior variance at t (0 at t=1).
    struct PosteriorCoeffs {
        double c0;
        double ct;
        double var;
    };
    PosteriorCoeffs posterior_coeffs(int t) const;

    friend NoiseSchedule linear_schedule(int timesteps, double beta_start, double beta_end);

private:
    size_t index(int t) const;

    int t_count_ = 0;
    std::vector<double> beta_;
    std::vector<double> alpha_;
    std::vector<double> alpha_bar_;
    std::vector<double> posterior_var_;
};

// beta_t = beta_start + (t-1)/(T-1) * (beta_end - beta_start), endpoints inclusive.
NoiseSchedule linear_schedule(int timesteps, double beta_start, double beta_end);

}  // namespace ficd
