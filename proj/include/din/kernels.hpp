#pragma once

#include "din/mat.hpp"

namespace din::kernels {

// Dense kernels. The default entry points parallelize over output rows with
// OpenMP; each output element is accumulated in a fixed serial order, so the
// result is bit-identical to the serial reference for any thread count.
// kernels::serial holds the plain reference implementations used by tests and
// the benchmark.

namespace serial {
Mat matmul_nn(const Mat& a, const Mat& b);   // a(m,k) * b(k,n)
Mat matmul_nt(const Mat& a, const Mat& b);   // a(m,k) * b(n,k)^T
Mat matmul_tn(const Mat& a, const Mat& b);   // a(k,m)^T * b(k,n)
void softmax_rows_inplace(Mat& m);
void gelu_inplace(Mat& m);
}  // namespace serial

Mat matmul_nn(const Mat& a, const Mat& b);
Mat matmul_nt(const Mat& a, const Mat& b);
Mat matmul_tn(const Mat& a, const Mat& b);
void softmax_rows_inplace(Mat& m);
void gelu_inplace(Mat& m);

double gelu_scalar(double x);
double gelu_grad_scalar(double x);

// Numerically stable in-place softmax of one row.
void softmax_row(double* x, int n);

void add_inplace(Mat& dst, const Mat& src);                 // dst += src
void axpy_inplace(Mat& dst, double k, const Mat& src);      // dst += k * src

}  // namespace din::kernels
