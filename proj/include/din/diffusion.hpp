#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "din/rng.hpp"
#include "din/types.hpp"

namespace din::diffusion {

// Variance schedule and derived arrays, 1-indexed by timestep (entry t lives
// at [t-1]). alpha_bar_prev(1) is 1, which makes the t=1 reverse step
// deterministic: sigma2[0] == 0.
struct DiffusionSchedule {
    int T = 0;
    std::vector<double> beta;
    std::vector<double> alpha;      // 1 - beta_t
    std::vector<double> alpha_bar;  // prod_{s<=t} alpha_s
    std::vector<double> sigma2;     // (1 - abar_{t-1}) / (1 - abar_t) * beta_t

    double alpha_bar_prev(int t) const { return t <= 1 ? 1.0 : alpha_bar[t - 2]; }
};

DiffusionSchedule make_schedule(int T, double beta_start = 1e-4, double beta_end = 0.02);

struct DiffusedLabel {
    Vec y;
    int t = 0;
};

// Reverse-posterior mean coefficients: mean = g0 * y0_hat + g1 * y_t + g2 * cond.
// They always sum to exactly 1 in exact arithmetic.
struct PosteriorCoeffs {
    double g0 = 0.0, g1 = 0.0, g2 = 0.0;
    double var = 0.0;
};

PosteriorCoeffs posterior_coeffs(const DiffusionSchedule& sched, int t);

// Closed-form marginal at step t: N(mean, var * I).
Vec forward_marginal_mean(const Vec& y0, const Vec& cond, int t, const DiffusionSchedule& sched);
double forward_marginal_var(int t, const DiffusionSchedule& sched);

DiffusedLabel forward_sample(const Vec& y0, const Vec& cond, int t,
                             const DiffusionSchedule& sched, Rng& rng);

// One forward kernel step from y_{t-1} to y_t.
Vec step_forward_mean(const Vec& y_prev, const Vec& cond, int t, const DiffusionSchedule& sched);
DiffusedLabel step_forward(const DiffusedLabel& y_prev, const Vec& cond, int t,
                           const DiffusionSchedule& sched, Rng& rng);

Vec reverse_step_mean(const Vec& y_t, const Vec& y0_hat, const Vec& cond, int t,
                      const DiffusionSchedule& sched);
DiffusedLabel reverse_step(const DiffusedLabel& y_t, const Vec& y0_hat, const Vec& cond, int t,
                           const DiffusionSchedule& sched, Rng& rng);

// Denoiser contract: predict the clean pseudo-label from (y_t, cond, t).
class Denoiser {
public:
    virtual ~Denoiser() = default;
    virtual Vec predict(const Vec& y_t, const Vec& cond, int t) const = 0;
};

Vec sinusoidal_time_embedding(int t, int dim);

enum class InitMode { terminal, gaussian };

struct ChainStep {
    int t = 0;
    double mean_norm = 0.0;
    int y0_argmax = 0;
};

struct AnswerSample {
    Vec y;
    int answer = 0;
};

// Full reverse chain: start from the terminal distribution (or a standard
// Gaussian), iterate reverse steps with the denoiser's clean-label estimate,
// return the final vector and its argmax.
AnswerSample sample_answer(const Denoiser& net, const Vec& cond, const DiffusionSchedule& sched,
                           Rng& rng, InitMode init = InitMode::terminal,
                           std::vector<ChainStep>* trace = nullptr);

enum class DifLossKind { mse, kl };

double dif_loss(const Vec& y_pred, const Vec& y_bar, DifLossKind kind = DifLossKind::mse);

}  // namespace din::diffusion
