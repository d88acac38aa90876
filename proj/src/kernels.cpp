#include "din/kernels.hpp"

#include <algorithm>
#include <cmath>

#include "din/parallel.hpp"

namespace din {

namespace {
int g_threads = 0;
}

void set_threads(int n) { g_threads = n < 0 ? 0 : n; }
int get_threads() { return g_threads; }

}  // namespace din

namespace din::kernels {

namespace {

// Row dot products in a fixed order; shared by the serial and OpenMP paths.
inline void matmul_nn_row(const Mat& a, const Mat& b, Mat& c, int i) {
    const int k = a.cols, n = b.cols;
    double* ci = c.row(i);
    const double* ai = a.row(i);
    for (int p = 0; p < k; ++p) {
        const double av = ai[p];
        const double* bp = b.row(p);
        for (int j = 0; j < n; ++j) ci[j] += av * bp[j];
    }
}

inline void matmul_nt_row(const Mat& a, const Mat& b, Mat& c, int i) {
    const int k = a.cols, n = b.rows;
    double* ci = c.row(i);
    const double* ai = a.row(i);
    for (int j = 0; j < n; ++j) {
        const double* bj = b.row(j);
        double acc = 0.0;
        for (int p = 0; p < k; ++p) acc += ai[p] * bj[p];
        ci[j] = acc;
    }
}

inline void matmul_tn_row(const Mat& a, const Mat& b, Mat& c, int i) {
    // c(i,j) = sum_p a(p,i) * b(p,j)
    const int k = a.rows, n = b.cols;
    double* ci = c.row(i);
    for (int p = 0; p < k; ++p) {
        const double av = a(p, i);
        const double* bp = b.row(p);
        for (int j = 0; j < n; ++j) ci[j] += av * bp[j];
    }
}

// Matrices in the model are tiny; per-row OpenMP only pays off on large rows.
constexpr size_t kParallelCells = 16 * 1024;

}  // namespace

namespace serial {

Mat matmul_nn(const Mat& a, const Mat& b) {
    require(a.cols == b.rows, "matmul_nn: inner dimensions differ");
    Mat c(a.rows, b.cols);
    for (int i = 0; i < a.rows; ++i) matmul_nn_row(a, b, c, i);
    return c;
}

Mat matmul_nt(const Mat& a, const Mat& b) {
    require(a.cols == b.cols, "matmul_nt: inner dimensions differ");
    Mat c(a.rows, b.rows);
    for (int i = 0; i < a.rows; ++i) matmul_nt_row(a, b, c, i);
    return c;
}

Mat matmul_tn(const Mat& a, const Mat& b) {
    require(a.rows == b.rows, "matmul_tn: inner dimensions differ");
    Mat c(a.cols, b.cols);
    for (int i = 0; i < a.cols; ++i) matmul_tn_row(a, b, c, i);
    return c;
}

void softmax_rows_inplace(Mat& m) {
    for (int i = 0; i < m.rows; ++i) softmax_row(m.row(i), m.cols);
}

void gelu_inplace(Mat& m) {
    for (double& v : m.a) v = gelu_scalar(v);
}

}  // namespace serial

Mat matmul_nn(const Mat& a, const Mat& b) {
    require(a.cols == b.rows, "matmul_nn: inner dimensions differ");
    Mat c(a.rows, b.cols);
    if (c.size() * static_cast<size_t>(a.cols) >= kParallelCells * 64) {
        parallel_for(static_cast<size_t>(a.rows),
                     [&](size_t i) { matmul_nn_row(a, b, c, static_cast<int>(i)); });
    } else {
        for (int i = 0; i < a.rows; ++i) matmul_nn_row(a, b, c, i);
    }
    return c;
}

Mat matmul_nt(const Mat& a, const Mat& b) {
    require(a.cols == b.cols, "matmul_nt: inner dimensions differ");
    Mat c(a.rows, b.rows);
    if (c.size() * static_cast<size_t>(a.cols) >= kParallelCells * 64) {
        parallel_for(static_cast<size_t>(a.rows),
                     [&](size_t i) { matmul_nt_row(a, b, c, static_cast<int>(i)); });
    } else {
        for (int i = 0; i < a.rows; ++i) matmul_nt_row(a, b, c, i);
    }
    return c;
}

Mat matmul_tn(const Mat& a, const Mat& b) {
    require(a.rows == b.rows, "matmul_tn: inner dimensions differ");
    Mat c(a.cols, b.cols);
    if (c.size() * static_cast<size_t>(a.rows) >= kParallelCells * 64) {
        parallel_for(static_cast<size_t>(a.cols),
                     [&](size_t i) { matmul_tn_row(a, b, c, static_cast<int>(i)); });
    } else {
        for (int i = 0; i < a.cols; ++i) matmul_tn_row(a, b, c, i);
    }
    return c;
}

void softmax_rows_inplace(Mat& m) {
    if (m.size() >= kParallelCells) {
        parallel_for(static_cast<size_t>(m.rows),
                     [&](size_t i) { softmax_row(m.row(static_cast<int>(i)), m.cols); });
    } else {
        serial::softmax_rows_inplace(m);
    }
}

void gelu_inplace(Mat& m) {
    if (m.size() >= kParallelCells) {
        parallel_for(static_cast<size_t>(m.rows), [&](size_t i) {
            double* r = m.row(static_cast<int>(i));
            for (int j = 0; j < m.cols; ++j) r[j] = gelu_scalar(r[j]);
        });
    } else {
        serial::gelu_inplace(m);
    }
}

double gelu_scalar(double x) { return 0.5 * x * (1.0 + std::erf(x * M_SQRT1_2)); }

double gelu_grad_scalar(double x) {
    const double cdf = 0.5 * (1.0 + std::erf(x * M_SQRT1_2));
    const double pdf = std::exp(-0.5 * x * x) / std::sqrt(2.0 * M_PI);
    return cdf + x * pdf;
}

void softmax_row(double* x, int n) {
    double mx = x[0];
    for (int j = 1; j < n; ++j) mx = std::max(mx, x[j]);
    double sum = 0.0;
    for (int j = 0; j < n; ++j) {
        x[j] = std::exp(x[j] - mx);
        sum += x[j];
    }
    const double inv = 1.0 / sum;
    for (int j = 0; j < n; ++j) x[j] *= inv;
}

void add_inplace(Mat& dst, const Mat& src) {
    require(dst.same_shape(src), "add_inplace: shape mismatch");
    for (size_t i = 0; i < dst.size(); ++i) dst.a[i] += src.a[i];
}

void axpy_inplace(Mat& dst, double k, const Mat& src) {
    require(dst.same_shape(src), "axpy_inplace: shape mismatch");
    for (size_t i = 0; i < dst.size(); ++i) dst.a[i] += k * src.a[i];
}

}  // namespace din::kernels
