#include <doctest.h>

#include <cmath>

#include "din/diffusion.hpp"
#include "support/oracles.hpp"

using namespace din;
using namespace din::diffusion;

TEST_CASE("schedule arrays obey their identities") {
    auto s = make_schedule(1, 0.02, 0.02);
    CHECK(s.alpha_bar[0] == doctest::Approx(0.98).epsilon(1e-15));

    auto s3 = make_schedule(3, 0.1, 0.1);
    CHECK(s3.alpha_bar[0] == doctest::Approx(0.9).epsilon(1e-15));
    CHECK(s3.alpha_bar[1] == doctest::Approx(0.81).epsilon(1e-15));
    CHECK(s3.alpha_bar[2] == doctest::Approx(0.729).epsilon(1e-15));

    auto sched = make_schedule(50);
    CHECK(sched.sigma2[0] == 0.0);  // abar_0 = 1 makes the final reverse step deterministic
    double prev_abar = 1.0;
    for (int t = 1; t <= sched.T; ++t) {
        CHECK(sched.alpha[t - 1] == 1.0 - sched.beta[t - 1]);
        CHECK(sched.alpha_bar[t - 1] ==
              doctest::Approx(prev_abar * sched.alpha[t - 1]).epsilon(1e-15));
        CHECK(sched.alpha_bar[t - 1] < prev_abar);
        if (t >= 2) {
            CHECK(sched.beta[t - 1] >= sched.beta[t - 2]);
            CHECK(sched.sigma2[t - 1] > 0.0);
        }
        CHECK(sched.sigma2[t - 1] <= sched.beta[t - 1]);
        const double expect =
            (1.0 - sched.alpha_bar_prev(t)) / (1.0 - sched.alpha_bar[t - 1]) * sched.beta[t - 1];
        CHECK(sched.sigma2[t - 1] == doctest::Approx(expect).epsilon(1e-15));
        prev_abar = sched.alpha_bar[t - 1];
    }

    CHECK_THROWS_AS(make_schedule(0), Error);
    CHECK_THROWS_AS(make_schedule(5, 0.0, 0.1), Error);
    CHECK_THROWS_AS(make_schedule(5, 0.2, 0.1), Error);
    CHECK_THROWS_AS(make_schedule(5, 0.1, 1.0), Error);
}

TEST_CASE("posterior coefficients sum to one and match Gaussian conditioning") {
    for (auto [T, b0, b1] : {std::tuple{1, 0.02, 0.02}, {5, 1e-4, 0.2}, {50, 1e-4, 0.02}}) {
        auto s = make_schedule(T, b0, b1);
        for (int t = 1; t <= T; ++t) {
            auto c = posterior_coeffs(s, t);
            CHECK(c.g0 + c.g1 + c.g2 == doctest::Approx(1.0).epsilon(1e-12));

            // Scalar Bayes oracle: prior = marginal at t-1, likelihood = kernel.
            const double y0 = 0.7, cond = 0.2, y_t = -0.4;
            const double abar_prev = s.alpha_bar_prev(t);
            const double prior_mean = std::sqrt(abar_prev) * y0 + (1.0 - std::sqrt(abar_prev)) * cond;
            const double prior_var = 1.0 - abar_prev;
            const double a = std::sqrt(s.alpha[t - 1]);
            const double b = (1.0 - a) * cond;
            if (prior_var > 0.0) {
                auto post = testsupport::condition_gaussian(prior_mean, prior_var, a, b,
                                                            s.beta[t - 1], y_t);
                const Vec mean = reverse_step_mean({y_t}, {y0}, {cond}, t, s);
                CHECK(mean[0] == doctest::Approx(post.mean).epsilon(1e-10));
                CHECK(s.sigma2[t - 1] == doctest::Approx(post.var).epsilon(1e-10));
            }
        }
    }
}

TEST_CASE("t=1 reverse step returns the denoiser estimate deterministically") {
    auto s = make_schedule(10);
    auto c = posterior_coeffs(s, 1);
    CHECK(c.g0 == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(c.g1 == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(c.g2 == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(c.var == 0.0);

    Rng rng(1);
    DiffusedLabel y1{{0.3, -0.2, 0.9}, 1};
    Vec y0_hat = {0.1, 0.2, 0.7};
    auto out = reverse_step(y1, y0_hat, {0.2, 0.3, 0.5}, 1, s, rng);
    CHECK(out.t == 0);
    for (int i = 0; i < 3; ++i) CHECK(out.y[i] == doctest::Approx(y0_hat[i]).epsilon(1e-12));
}

TEST_CASE("forward marginal endpoints") {
    auto tiny = make_schedule(3, 1e-12, 1e-12);
    Rng rng(5);
    Vec y0 = {1.0, 0.0};
    Vec cond = {0.25, 0.75};
    auto out = forward_sample(y0, cond, 3, tiny, rng);
    CHECK(out.y[0] == doctest::Approx(1.0).epsilon(1e-5));
    CHECK(out.y[1] == doctest::Approx(0.0).epsilon(1e-5));

    // Late steps of a harsh schedule sit near N(cond, I).
    auto harsh = make_schedule(40, 0.5, 0.9);
    CHECK(forward_marginal_var(40, harsh) == doctest::Approx(1.0).epsilon(1e-9));
    auto mean = forward_marginal_mean(y0, cond, 40, harsh);
    CHECK(mean[0] == doctest::Approx(cond[0]).epsilon(1e-4));
    CHECK(mean[1] == doctest::Approx(cond[1]).epsilon(1e-4));
}

TEST_CASE("analytic kernel composition reproduces the closed-form marginal") {
    // Propagate affine-Gaussian (coef_y0, coef_cond, var) through the kernels.
    for (int T : {1, 4, 10}) {
        auto s = make_schedule(T, 1e-3, 0.3);
        double coef_y0 = 1.0, coef_cond = 0.0, var = 0.0;
        for (int t = 1; t <= T; ++t) {
            const double root = std::sqrt(1.0 - s.beta[t - 1]);
            coef_y0 *= root;
            coef_cond = root * coef_cond + (1.0 - root);
            var = (1.0 - s.beta[t - 1]) * var + s.beta[t - 1];

            CHECK(coef_y0 == doctest::Approx(std::sqrt(s.alpha_bar[t - 1])).epsilon(1e-10));
            CHECK(coef_cond ==
                  doctest::Approx(1.0 - std::sqrt(s.alpha_bar[t - 1])).epsilon(1e-10));
            CHECK(var == doctest::Approx(forward_marginal_var(t, s)).epsilon(1e-10));
        }
    }
}

TEST_CASE("stepwise forward composition matches the marginal in distribution") {
    auto s = make_schedule(5, 0.05, 0.3);
    Vec y0 = {0.8, 0.2};
    Vec cond = {0.3, 0.7};
    const int n = 40000;

    Rng rng(77);
    std::vector<double> marginal(n), composed(n);
    for (int i = 0; i < n; ++i) marginal[i] = forward_sample(y0, cond, 3, s, rng).y[0];
    for (int i = 0; i < n; ++i) {
        DiffusedLabel cur{y0, 0};
        for (int t = 1; t <= 3; ++t) cur = step_forward(cur, cond, t, s, rng);
        composed[i] = cur.y[0];
    }
    auto m1 = testsupport::sample_stats(marginal);
    auto m2 = testsupport::sample_stats(composed);
    const double expect_mean = forward_marginal_mean(y0, cond, 3, s)[0];
    const double expect_var = forward_marginal_var(3, s);
    CHECK(m1.mean == doctest::Approx(expect_mean).epsilon(0.02));
    CHECK(m2.mean == doctest::Approx(expect_mean).epsilon(0.02));
    CHECK(m1.var == doctest::Approx(expect_var).epsilon(0.05));
    CHECK(m2.var == doctest::Approx(expect_var).epsilon(0.05));
}

TEST_CASE("step_forward keeps the condition as its fixed point") {
    auto s = make_schedule(4, 0.1, 0.4);
    Vec cond = {0.1, 0.9};
    auto mean = step_forward_mean(cond, cond, 2, s);
    CHECK(mean[0] == doctest::Approx(cond[0]).epsilon(1e-12));
    CHECK(mean[1] == doctest::Approx(cond[1]).epsilon(1e-12));

    auto tiny = make_schedule(4, 1e-14, 1e-14);
    Vec prev = {0.4, -0.3};
    auto m2 = step_forward_mean(prev, cond, 2, tiny);
    CHECK(m2[0] == doctest::Approx(prev[0]).epsilon(1e-6));
    CHECK(m2[1] == doctest::Approx(prev[1]).epsilon(1e-6));
}

namespace {

class ConstantDenoiser : public Denoiser {
public:
    explicit ConstantDenoiser(Vec out) : out_(std::move(out)) {}
    Vec predict(const Vec&, const Vec&, int) const override { return out_; }

private:
    Vec out_;
};

}  // namespace

TEST_CASE("sample_answer follows the denoiser's verdict and is deterministic") {
    auto s = make_schedule(50);
    Vec cond = {0.1, 0.2, 0.7};
    ConstantDenoiser oracle(onehot(1, 3));

    Rng rng1(123), rng2(123);
    std::vector<ChainStep> trace;
    auto a = sample_answer(oracle, cond, s, rng1, InitMode::terminal, &trace);
    auto b = sample_answer(oracle, cond, s, rng2, InitMode::terminal);
    CHECK(a.answer == 1);
    CHECK(a.y == b.y);
    CHECK(trace.size() == 50);  // exactly T reverse steps
    CHECK(trace.front().t == 50);
    CHECK(trace.back().t == 1);

    Rng rng3(7);
    auto c = sample_answer(oracle, cond, s, rng3, InitMode::gaussian);
    CHECK(c.answer == 1);
}

TEST_CASE("dif_loss values and closed-form gradient") {
    CHECK(dif_loss({0.3, 0.7}, {0.3, 0.7}) == 0.0);
    CHECK(dif_loss({1.0, 0.0}, {0.0, 1.0}) == doctest::Approx(1.0).epsilon(1e-15));

    // d/dy mean((y - t)^2) = 2 (y - t) / L, by central differences.
    Vec y = {0.2, -0.4, 0.9};
    Vec t = {0.0, 0.5, 0.5};
    const double h = 1e-6;
    for (int j = 0; j < 3; ++j) {
        Vec yp = y, ym = y;
        yp[j] += h;
        ym[j] -= h;
        const double numeric = (dif_loss(yp, t) - dif_loss(ym, t)) / (2 * h);
        CHECK(numeric == doctest::Approx(2.0 * (y[j] - t[j]) / 3.0).epsilon(1e-6));
    }

    // KL compares y_bar against softmax(y_pred): zero when they coincide.
    CHECK(dif_loss({0.0, 0.0}, {0.5, 0.5}, DifLossKind::kl) < 1e-12);
    CHECK(dif_loss({std::log(0.3), std::log(0.7)}, {0.3, 0.7}, DifLossKind::kl) < 1e-12);
    CHECK(dif_loss({5.0, 0.0}, {0.0, 1.0}, DifLossKind::kl) > 1.0);
    CHECK_THROWS_AS(dif_loss({1.0}, {1.0, 0.0}), Error);
}

TEST_CASE("time embedding has unit-scale entries and distinguishes steps") {
    auto e1 = sinusoidal_time_embedding(1, 32);
    auto e2 = sinusoidal_time_embedding(2, 32);
    CHECK(e1.size() == 32);
    CHECK(e1 != e2);
    for (double v : e1) CHECK(std::abs(v) <= 1.0);
}
