#include "din/nlr.hpp"

#include <cmath>

#include "din/common.hpp"

namespace din::nlr {

namespace {
std::atomic<uint64_t> g_calls{0};
}

uint64_t call_count() { return g_calls.load(); }
void reset_call_count() { g_calls.store(0); }

RflResult rfl_loss(const Vec& p_hat, const Vec& a, double gamma, double clip_floor,
                   bool reverse_term) {
    g_calls.fetch_add(1, std::memory_order_relaxed);
    require(p_hat.size() == a.size() && !p_hat.empty(), "rfl_loss: length mismatch");
    require(clip_floor <= 0.0, "rfl_loss: clip floor must be <= 0");
    const int L = static_cast<int>(p_hat.size());

    double loss = 0.0;
    Vec dp(L, 0.0);  // dLoss/dp
    for (int l = 0; l < L; ++l) {
        const double p = p_hat[l];
        require(p > 0.0 && p <= 1.0, "rfl_loss: p_hat must be a strictly positive distribution");
        const double al = a[l];
        const double one_minus = 1.0 - p;
        if (al != 0.0) {
            const double focal = gamma == 0.0 ? 1.0 : std::pow(one_minus, gamma);
            loss -= al * focal * std::log(p);
            // d/dp [-(1-p)^g log p] = g (1-p)^(g-1) log p - (1-p)^g / p,
            // which tends to 0 as p -> 1 for g >= 1.
            double dfocal = 0.0;
            if (gamma != 0.0) {
                dfocal = one_minus <= 1e-15 ? 0.0
                                            : gamma * std::pow(one_minus, gamma - 1.0) * std::log(p);
            }
            dp[l] += al * (dfocal - focal / p);
        }
        if (reverse_term) {
            const double q = al <= 0.0 ? clip_floor : std::max(std::log(al), clip_floor);
            loss -= p * q;
            dp[l] -= q;
        }
    }

    // Chain through softmax: dz_j = p_j (dp_j - sum_m dp_m p_m).
    RflResult out;
    out.loss = loss;
    out.grad_logits.resize(L);
    double dot = 0.0;
    for (int l = 0; l < L; ++l) dot += dp[l] * p_hat[l];
    for (int l = 0; l < L; ++l) out.grad_logits[l] = p_hat[l] * (dp[l] - dot);
    return out;
}

EmaWeight update_weight(const EmaWeight& state, const Vec& batch_confidences) {
    g_calls.fetch_add(1, std::memory_order_relaxed);
    require(!batch_confidences.empty(), "update_weight: empty batch");
    double mean = 0.0;
    for (double c : batch_confidences) {
        require(c >= 0.0 && c <= 1.0, "update_weight: confidence outside [0,1]");
        mean += c;
    }
    mean /= static_cast<double>(batch_confidences.size());

    EmaWeight next = state;
    if (!state.initialized) {
        next.w = mean;
        next.initialized = true;
    } else {
        next.w = state.tau * state.w + (1.0 - state.tau) * mean;
    }
    return next;
}

Vec adjust_answer(const ProtoAnswer& p_hat, const Vec& a, double w) {
    g_calls.fetch_add(1, std::memory_order_relaxed);
    require(p_hat.probs.size() == a.size(), "adjust_answer: length mismatch");
    require(w >= 0.0 && w <= 1.0, "adjust_answer: w outside [0,1]");
    if (p_hat.arg == argmax(a)) return a;
    Vec out(a.size());
    for (size_t l = 0; l < a.size(); ++l) out[l] = w * p_hat.probs[l] + (1.0 - w) * a[l];
    return out;
}

}  // namespace din::nlr
