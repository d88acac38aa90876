// Serial-vs-OpenMP benchmark: dense kernels plus one training epoch and one
// evaluation pass at each worker count. Outputs must be identical across
// worker counts; timings are what differ.

#include <chrono>
#include <cstdio>

#include "din/dataset.hpp"
#include "din/kernels.hpp"
#include "din/parallel.hpp"
#include "din/rng.hpp"
#include "din/train.hpp"

#ifdef _OPENMP
#include <omp.h>
#endif

using namespace din;
using Clock = std::chrono::steady_clock;

namespace {

double ms_since(Clock::time_point t0) {
    return std::chrono::duration<double, std::milli>(Clock::now() - t0).count();
}

Mat random_mat(Rng& rng, int r, int c) {
    Mat m(r, c);
    for (double& v : m.a) v = rng.normal();
    return m;
}

void bench_matmul(int size) {
    Rng rng(7);
    Mat a = random_mat(rng, size, size);
    Mat b = random_mat(rng, size, size);

    auto t0 = Clock::now();
    Mat ref = kernels::serial::matmul_nn(a, b);
    const double serial_ms = ms_since(t0);

    set_threads(0);
    t0 = Clock::now();
    Mat par = kernels::matmul_nn(a, b);
    const double omp_ms = ms_since(t0);

    std::printf("matmul %4dx%-4d  serial %8.2f ms   omp %8.2f ms   speedup %.2fx   %s\n", size,
                size, serial_ms, omp_ms, serial_ms / omp_ms,
                ref == par ? "bit-identical" : "MISMATCH");
}

void bench_pipeline(int threads) {
    set_threads(threads);
    Dataset train_data = generate_synthetic_corpus(512, 8, 11);
    Dataset test_data = remap_to_vocabulary(generate_synthetic_corpus(128, 8, 12),
                                            train_data.vocabulary);

    TrainConfig cfg;
    cfg.epochs = 1;
    cfg.seed = 5;
    cfg.threads = threads;

    auto t0 = Clock::now();
    Model model = train(cfg, train_data);
    const double train_ms = ms_since(t0);

    t0 = Clock::now();
    Metrics m = evaluate(model, cfg, test_data, 5);
    const double eval_ms = ms_since(t0);

    std::printf("pipeline threads=%d  epoch %8.1f ms   eval %8.1f ms   overall=%.4f\n", threads,
                train_ms, eval_ms, m.acc_overall);
}

}  // namespace

int main() {
#ifdef _OPENMP
    const int max_threads = omp_get_max_threads();
#else
    const int max_threads = 1;
#endif
    std::printf("max threads: %d\n\n", max_threads);

    for (int size : {128, 256, 512}) bench_matmul(size);
    std::printf("\n");
    bench_pipeline(1);
    if (max_threads > 1) bench_pipeline(0);
    return 0;
}
