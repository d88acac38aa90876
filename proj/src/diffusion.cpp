#include "din/diffusion.hpp"

#include <cmath>

#include "din/common.hpp"

namespace din::diffusion {

DiffusionSchedule make_schedule(int T, double beta_start, double beta_end) {
    require(T >= 1, "make_schedule: T must be >= 1");
    require(0.0 < beta_start && beta_start <= beta_end && beta_end < 1.0,
            "make_schedule: need 0 < beta_start <= beta_end < 1");
    DiffusionSchedule s;
    s.T = T;
    s.beta.resize(T);
    s.alpha.resize(T);
    s.alpha_bar.resize(T);
    s.sigma2.resize(T);
    double abar = 1.0;
    for (int t = 1; t <= T; ++t) {
        const double b =
            T == 1 ? beta_start
                   : beta_start + (beta_end - beta_start) * static_cast<double>(t - 1) / (T - 1);
        const double abar_prev = abar;
        s.beta[t - 1] = b;
        s.alpha[t - 1] = 1.0 - b;
        abar *= s.alpha[t - 1];
        s.alpha_bar[t - 1] = abar;
        s.sigma2[t - 1] = (1.0 - abar_prev) / (1.0 - abar) * b;
    }
    return s;
}

PosteriorCoeffs posterior_coeffs(const DiffusionSchedule& sched, int t) {
    require(t >= 1 && t <= sched.T, "posterior_coeffs: t out of range");
    const double beta = sched.beta[t - 1];
    const double alpha = sched.alpha[t - 1];
    const double abar = sched.alpha_bar[t - 1];
    const double abar_prev = sched.alpha_bar_prev(t);
    const double denom = 1.0 - abar;
    PosteriorCoeffs c;
    c.g0 = beta * std::sqrt(abar_prev) / denom;
    c.g1 = (1.0 - abar_prev) * std::sqrt(alpha) / denom;
    c.g2 = 1.0 + (std::sqrt(abar) - 1.0) * (std::sqrt(alpha) + std::sqrt(abar_prev)) / denom;
    c.var = sched.sigma2[t - 1];
    return c;
}

Vec forward_marginal_mean(const Vec& y0, const Vec& cond, int t, const DiffusionSchedule& sched) {
    require(t >= 1 && t <= sched.T, "forward_marginal_mean: t out of range");
    require(y0.size() == cond.size(), "forward_marginal_mean: length mismatch");
    const double root = std::sqrt(sched.alpha_bar[t - 1]);
    Vec mean(y0.size());
    for (size_t i = 0; i < y0.size(); ++i) mean[i] = root * y0[i] + (1.0 - root) * cond[i];
    return mean;
}

double forward_marginal_var(int t, const DiffusionSchedule& sched) {
    require(t >= 1 && t <= sched.T, "forward_marginal_var: t out of range");
    return 1.0 - sched.alpha_bar[t - 1];
}

DiffusedLabel forward_sample(const Vec& y0, const Vec& cond, int t,
                             const DiffusionSchedule& sched, Rng& rng) {
    Vec mean = forward_marginal_mean(y0, cond, t, sched);
    const double sd = std::sqrt(forward_marginal_var(t, sched));
    DiffusedLabel out;
    out.t = t;
    out.y.resize(mean.size());
    for (size_t i = 0; i < mean.size(); ++i) out.y[i] = mean[i] + sd * rng.normal();
    return out;
}

Vec step_forward_mean(const Vec& y_prev, const Vec& cond, int t, const DiffusionSchedule& sched) {
    require(t >= 1 && t <= sched.T, "step_forward_mean: t out of range");
    require(y_prev.size() == cond.size(), "step_forward_mean: length mismatch");
    const double root = std::sqrt(1.0 - sched.beta[t - 1]);
    Vec mean(y_prev.size());
    for (size_t i = 0; i < y_prev.size(); ++i)
        mean[i] = root * y_prev[i] + (1.0 - root) * cond[i];
    return mean;
}

DiffusedLabel step_forward(const DiffusedLabel& y_prev, const Vec& cond, int t,
                           const DiffusionSchedule& sched, Rng& rng) {
    require(y_prev.t == t - 1, "step_forward: y_prev must sit at step t-1");
    Vec mean = step_forward_mean(y_prev.y, cond, t, sched);
    const double sd = std::sqrt(sched.beta[t - 1]);
    DiffusedLabel out;
    out.t = t;
    out.y.resize(mean.size());
    for (size_t i = 0; i < mean.size(); ++i) out.y[i] = mean[i] + sd * rng.normal();
    return out;
}

Vec reverse_step_mean(const Vec& y_t, const Vec& y0_hat, const Vec& cond, int t,
                      const DiffusionSchedule& sched) {
    require(y_t.size() == y0_hat.size() && y_t.size() == cond.size(),
            "reverse_step_mean: length mismatch");
    const PosteriorCoeffs c = posterior_coeffs(sched, t);
    Vec mean(y_t.size());
    for (size_t i = 0; i < y_t.size(); ++i)
        mean[i] = c.g0 * y0_hat[i] + c.g1 * y_t[i] + c.g2 * cond[i];
    return mean;
}

DiffusedLabel reverse_step(const DiffusedLabel& y_t, const Vec& y0_hat, const Vec& cond, int t,
                           const DiffusionSchedule& sched, Rng& rng) {
    require(y_t.t == t, "reverse_step: y_t must sit at step t");
    Vec mean = reverse_step_mean(y_t.y, y0_hat, cond, t, sched);
    const double var = sched.sigma2[t - 1];
    DiffusedLabel out;
    out.t = t - 1;
    out.y.resize(mean.size());
    if (var > 0.0) {
        const double sd = std::sqrt(var);
        for (size_t i = 0; i < mean.size(); ++i) out.y[i] = mean[i] + sd * rng.normal();
    } else {
        out.y = std::move(mean);  // t = 1: deterministic final step
    }
    return out;
}

Vec sinusoidal_time_embedding(int t, int dim) {
    require(dim >= 2 && dim % 2 == 0, "time embedding dim must be even and >= 2");
    Vec e(dim);
    const int half = dim / 2;
    for (int i = 0; i < half; ++i) {
        const double freq = std::pow(10000.0, -static_cast<double>(i) / half);
        e[2 * i] = std::sin(t * freq);
        e[2 * i + 1] = std::cos(t * freq);
    }
    return e;
}

AnswerSample sample_answer(const Denoiser& net, const Vec& cond, const DiffusionSchedule& sched,
                           Rng& rng, InitMode init, std::vector<ChainStep>* trace) {
    const size_t L = cond.size();
    DiffusedLabel cur;
    cur.t = sched.T;
    cur.y.resize(L);
    if (init == InitMode::terminal) {
        const double sd = std::sqrt(1.0 - sched.alpha_bar[sched.T - 1]);
        for (size_t i = 0; i < L; ++i) cur.y[i] = cond[i] + sd * rng.normal();
    } else {
        for (size_t i = 0; i < L; ++i) cur.y[i] = rng.normal();
    }

    for (int t = sched.T; t >= 1; --t) {
        Vec y0_hat = net.predict(cur.y, cond, t);
        require(y0_hat.size() == L, "sample_answer: denoiser output length mismatch");
        for (double v : y0_hat)
            require(std::isfinite(v), "sample_answer: non-finite denoiser output");
        if (trace) {
            ChainStep step;
            step.t = t;
            double norm = 0.0;
            for (double v : cur.y) norm += v * v;
            step.mean_norm = std::sqrt(norm);
            step.y0_argmax = argmax(y0_hat);
            trace->push_back(step);
        }
        cur = reverse_step(cur, y0_hat, cond, t, sched, rng);
    }

    AnswerSample out;
    out.answer = argmax(cur.y);
    out.y = std::move(cur.y);
    return out;
}

double dif_loss(const Vec& y_pred, const Vec& y_bar, DifLossKind kind) {
    require(y_pred.size() == y_bar.size() && !y_pred.empty(), "dif_loss: length mismatch");
    if (kind == DifLossKind::mse) {
        double acc = 0.0;
        for (size_t i = 0; i < y_pred.size(); ++i) {
            const double d = y_pred[i] - y_bar[i];
            acc += d * d;
        }
        return acc / static_cast<double>(y_pred.size());
    }
    // KL(y_bar || softmax(y_pred))
    double mx = y_pred[0];
    for (double v : y_pred) mx = std::max(mx, v);
    double z = 0.0;
    for (double v : y_pred) z += std::exp(v - mx);
    const double logz = std::log(z) + mx;
    double acc = 0.0;
    for (size_t i = 0; i < y_pred.size(); ++i)
        if (y_bar[i] > 0.0) acc += y_bar[i] * (std::log(y_bar[i]) - (y_pred[i] - logz));
    return acc;
}

}  // namespace din::diffusion
