#include <doctest.h>

#include "din/autodiff.hpp"
#include "din/kernels.hpp"
#include "din/rng.hpp"
#include "din/types.hpp"
#include "support/fd.hpp"

using namespace din;
using testsupport::max_grad_rel_err;

namespace {

Mat random_mat(Rng& rng, int r, int c, double scale = 1.0) {
    Mat m(r, c);
    for (double& v : m.a) v = scale * rng.normal();
    return m;
}

Vec random_simplex(Rng& rng, int n) {
    Vec v(n);
    double sum = 0.0;
    for (auto& x : v) {
        x = std::exp(rng.normal());
        sum += x;
    }
    for (auto& x : v) x /= sum;
    return v;
}

}  // namespace

TEST_CASE("matmul/add/gelu/layernorm/softmax gradients match finite differences") {
    Rng rng(11);
    ParamStore ps;
    Param& w = ps.create("w", random_mat(rng, 4, 6, 0.5));
    Param& b = ps.create("b", random_mat(rng, 1, 6, 0.2));
    Param& g = ps.create("g", random_mat(rng, 1, 6, 0.3));
    Param& gb = ps.create("gb", random_mat(rng, 1, 6, 0.1));
    g.value.fill(1.2);
    Mat x = random_mat(rng, 3, 4);
    Mat target = random_mat(rng, 3, 6);

    auto forward = [&](ad::Tape& tp, ad::Var xin) {
        ad::Var h = tp.add_row_vec(tp.matmul_nn(xin, tp.use(w)), tp.use(b));
        h = tp.gelu(h);
        h = tp.layer_norm(h, tp.use(g), tp.use(gb));
        h = tp.softmax_rows(h);
        return tp.mse_loss(h, target);
    };

    ad::Tape tp;
    ad::Var xin = tp.input(x);
    ad::Var loss = forward(tp, xin);
    tp.backward(loss);

    auto eval = [&]() {
        ad::Tape t2;
        return t2.value(forward(t2, t2.input(x))).a[0];
    };
    CHECK(max_grad_rel_err(x, eval, tp.grad(xin)) < 1e-6);
    CHECK(max_grad_rel_err(w.value, eval, tp.grad(tp.use(w))) < 1e-6);
    CHECK(max_grad_rel_err(b.value, eval, tp.grad(tp.use(b))) < 1e-6);
    CHECK(max_grad_rel_err(g.value, eval, tp.grad(tp.use(g))) < 1e-6);
    CHECK(max_grad_rel_err(gb.value, eval, tp.grad(tp.use(gb))) < 1e-6);
}

TEST_CASE("structural ops propagate gradients exactly") {
    Rng rng(17);
    Mat x = random_mat(rng, 3, 4);
    Mat y = random_mat(rng, 3, 2);
    Mat z = random_mat(rng, 2, 4);
    Mat target = random_mat(rng, 4, 5);
    ParamStore ps;
    Param& table = ps.create("emb", random_mat(rng, 6, 5, 0.4));
    std::vector<int> ids = {1, 4, 4, 0};

    auto forward = [&](ad::Tape& tp, ad::Var xin, ad::Var yin, ad::Var zin) {
        ad::Var cat = tp.concat_cols(xin, yin);           // 3 x 6
        ad::Var rows = tp.concat_rows(tp.slice_cols(cat, 1, 5), zin);  // 5 x 4
        ad::Var tr = tp.transpose(rows);                  // 4 x 5
        ad::Var emb = tp.embed_rows(tp.use(table), ids);  // 4 x 5
        ad::Var mix = tp.add_scaled(tr, emb, 0.7, -1.3);
        return tp.mse_loss(tp.scale(mix, 2.0), target);
    };

    ad::Tape tp;
    ad::Var xin = tp.input(x), yin = tp.input(y), zin = tp.input(z);
    ad::Var loss = forward(tp, xin, yin, zin);
    tp.backward(loss);

    auto eval = [&]() {
        ad::Tape t2;
        return t2.value(forward(t2, t2.input(x), t2.input(y), t2.input(z))).a[0];
    };
    CHECK(max_grad_rel_err(x, eval, tp.grad(xin)) < 1e-6);
    CHECK(max_grad_rel_err(y, eval, tp.grad(yin)) < 1e-6);
    CHECK(max_grad_rel_err(z, eval, tp.grad(zin)) < 1e-6);
    CHECK(max_grad_rel_err(table.value, eval, tp.grad(tp.use(table))) < 1e-6);
}

TEST_CASE("reusing a node accumulates gradient") {
    ad::Tape tp;
    Mat x(1, 3, {1.0, -2.0, 0.5});
    ad::Var v = tp.input(x);
    ad::Var s = tp.add(v, v);  // d(s)/d(v) = 2
    ad::Var loss = tp.mse_loss(s, Mat(1, 3));
    tp.backward(loss);
    // loss = mean((2x)^2) -> d/dx = 8x/3
    for (int j = 0; j < 3; ++j)
        CHECK(tp.grad(v).a[j] == doctest::Approx(8.0 * x.a[j] / 3.0).epsilon(1e-12));
}

TEST_CASE("kl loss value and gradient") {
    Rng rng(23);
    Mat logits = random_mat(rng, 1, 5);
    Mat target = Mat::row_vec(random_simplex(rng, 5));

    ad::Tape tp;
    ad::Var lin = tp.input(logits);
    ad::Var loss = tp.kl_loss(lin, target);
    tp.backward(loss);

    // Matching distributions give zero loss.
    Vec p(target.a);
    Mat match(1, 5);
    for (int j = 0; j < 5; ++j) match.a[j] = std::log(p[j]);
    ad::Tape tp2;
    CHECK(tp2.value(tp2.kl_loss(tp2.input(match), target)).a[0] ==
          doctest::Approx(0.0).epsilon(1e-12));

    auto eval = [&]() {
        ad::Tape t2;
        return t2.value(t2.kl_loss(t2.input(logits), target)).a[0];
    };
    CHECK(max_grad_rel_err(logits, eval, tp.grad(lin)) < 1e-6);
}

TEST_CASE("adam step moves parameters against the gradient") {
    ParamStore ps;
    Param& p = ps.create("p", Mat(1, 2, {1.0, -1.0}));
    ps.zero_grads();
    p.grad.a = {0.5, -0.5};
    Adam opt(AdamConfig{.lr = 0.1});
    opt.step(ps);
    CHECK(p.value.a[0] < 1.0);
    CHECK(p.value.a[1] > -1.0);
}
