#pragma once

#include <cmath>
#include <cstdlib>
#include <vector>

#include "din/mat.hpp"

namespace din {

using Vec = std::vector<double>;

// Output of the auxiliary classifier: a distribution over the L answer
// classes plus its argmax summary.
struct ProtoAnswer {
    Vec probs;
    double confidence = 0.0;
    int arg = 0;

    static ProtoAnswer from_probs(Vec p) {
        ProtoAnswer out;
        out.arg = argmax(p);
        out.confidence = p[out.arg];
        out.probs = std::move(p);
        return out;
    }
};

inline Vec onehot(int index, int n) {
    Vec v(n, 0.0);
    v[index] = 1.0;
    return v;
}

inline bool on_simplex(const Vec& v, double tol = 1e-6) {
    double sum = 0.0;
    for (double x : v) {
        if (x < -tol || x > 1.0 + tol) return false;
        sum += x;
    }
    return std::abs(sum - 1.0) <= tol;
}

}  // namespace din
