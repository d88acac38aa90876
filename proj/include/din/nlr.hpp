#pragma once

#include <atomic>
#include <cstdint>

#include "din/types.hpp"

namespace din::nlr {

// Training-time label refinement: robust focal loss, EMA-tracked mixing
// weight, and answer adjustment. None of this may run at inference time;
// every entry point bumps an instrumentation counter that evaluation asserts
// unchanged.

uint64_t call_count();
void reset_call_count();

struct RflResult {
    double loss = 0.0;
    Vec grad_logits;  // exact gradient wrt pre-softmax logits
};

// loss = -sum_l a_l (1-p_l)^gamma log p_l - sum_l p_l clip(log a_l, clip_floor, 0)
// The reverse term's log is clipped below so one-hot labels stay finite.
// gamma = 0 with the reverse term disabled is plain cross-entropy.
RflResult rfl_loss(const Vec& p_hat, const Vec& a, double gamma,
                   double clip_floor = -4.0, bool reverse_term = true);

struct EmaWeight {
    double w = 0.0;
    double tau = 0.99;
    bool initialized = false;
};

// w_t = tau * w_{t-1} + (1-tau) * mean(confidences); the first batch
// initializes w to its mean.
EmaWeight update_weight(const EmaWeight& state, const Vec& batch_confidences);

// Returns a unchanged when the proto-answer argmax agrees with the label;
// otherwise the convex mixture w * p_hat + (1-w) * a.
Vec adjust_answer(const ProtoAnswer& p_hat, const Vec& a, double w);

}  // namespace din::nlr
