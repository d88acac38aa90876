#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "din/kernels.hpp"
#include "din/parallel.hpp"
#include "din/rng.hpp"
#include "support/fd.hpp"

using namespace din;

namespace {
Mat random_mat(Rng& rng, int r, int c) {
    Mat m(r, c);
    for (double& v : m.a) v = rng.normal();
    return m;
}
}  // namespace

TEST_CASE("omp kernels match the serial reference bit for bit") {
    Rng rng(42);
    for (auto [m, k, n] : {std::tuple{3, 5, 4}, {17, 9, 23}, {128, 96, 130}, {256, 64, 256}}) {
        Mat a = random_mat(rng, m, k);
        Mat b = random_mat(rng, k, n);
        Mat bt = random_mat(rng, n, k);
        Mat at = random_mat(rng, k, m);

        set_threads(0);
        CHECK(kernels::matmul_nn(a, b) == kernels::serial::matmul_nn(a, b));
        CHECK(kernels::matmul_nt(a, bt) == kernels::serial::matmul_nt(a, bt));
        CHECK(kernels::matmul_tn(at, b) == kernels::serial::matmul_tn(at, b));
    }
}

TEST_CASE("results are independent of worker count") {
    Rng rng(7);
    Mat a = random_mat(rng, 200, 150);
    Mat b = random_mat(rng, 150, 180);

    set_threads(1);
    Mat one = kernels::matmul_nn(a, b);
    set_threads(2);
    Mat two = kernels::matmul_nn(a, b);
    set_threads(0);
    Mat dflt = kernels::matmul_nn(a, b);
    CHECK(one == two);
    CHECK(one == dflt);
}

TEST_CASE("softmax rows are simplex points") {
    Rng rng(3);
    Mat m = random_mat(rng, 5, 9);
    kernels::softmax_rows_inplace(m);
    for (int i = 0; i < m.rows; ++i) {
        double sum = 0.0;
        for (int j = 0; j < m.cols; ++j) {
            CHECK(m(i, j) >= 0.0);
            sum += m(i, j);
        }
        CHECK(sum == doctest::Approx(1.0).epsilon(1e-12));
    }
}

TEST_CASE("gelu gradient matches finite differences") {
    for (double x : {-3.0, -0.7, 0.0, 0.4, 2.5}) {
        const double h = 1e-6;
        const double numeric = (kernels::gelu_scalar(x + h) - kernels::gelu_scalar(x - h)) / (2 * h);
        CHECK(kernels::gelu_grad_scalar(x) == doctest::Approx(numeric).epsilon(1e-7));
    }
}

TEST_CASE("rng streams are deterministic and derivation separates labels") {
    Rng a(123), b(123);
    for (int i = 0; i < 100; ++i) CHECK(a.next_u64() == b.next_u64());
    CHECK(derive_seed(1, "x") != derive_seed(1, "y"));
    CHECK(derive_seed(1, "x") == derive_seed(1, "x"));
    CHECK(derive_seed(1, 2, 3) != derive_seed(1, 3, 2));

    Rng n(5);
    double mean = 0.0, var = 0.0;
    const int draws = 20000;
    std::vector<double> xs(draws);
    for (auto& x : xs) x = n.normal();
    for (double x : xs) mean += x / draws;
    for (double x : xs) var += (x - mean) * (x - mean) / (draws - 1);
    CHECK(mean == doctest::Approx(0.0).epsilon(0.05));
    CHECK(std::abs(mean) < 0.05);
    CHECK(var == doctest::Approx(1.0).epsilon(0.05));
}
