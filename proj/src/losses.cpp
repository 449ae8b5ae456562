#include "pgx/losses.hpp"

#include <algorithm>
#include <string>

#include "pgx/errors.hpp"

namespace pgx {

namespace {

void check_weights(const LossWeights& w) {
    if (w.lambda1 < 0.0 || w.lambda2 < 0.0 || w.alpha < 0.0) {
        throw ValidationError("loss weights must be nonnegative");
    }
}

// Reshape a length-D vector to a single row if needed so softmax can run
// along axis 1.
Var as_row(Tape& t, Var v) {
    const Tensor& val = t.value(v);
    if (val.rank() == 1) return t.reshape(v, {1, val.numel()});
    return v;
}

constexpr double kFloor = 1e-12;

// max(x, kFloor) elementwise, then renormalize to sum 1.
Var floored_distribution(Tape& t, Var x) {
    Var lifted = t.add(t.relu(t.sub(x, kFloor)), kFloor);
    return t.div(lifted, t.sum(lifted));
}

}  // namespace

Var cox_loss(Tape& t, Var risks, std::span<const double> times, std::span<const int> events,
             bool mean_over_events) {
    // Copied, not referenced: nodes recorded below may relocate tape storage.
    const Tensor rv = t.value(risks);
    if (rv.rank() != 2 || rv.cols() != 1) {
        throw ShapeError("batch risks must be a [B x 1] column, got " + shape_str(rv.shape()));
    }
    const std::size_t b = rv.rows();
    if (b < 2) throw ValidationError("survival batches need at least two subjects");
    if (times.size() != b || events.size() != b) {
        throw ValidationError("risks, times and events must have equal length");
    }
    std::size_t n_events = 0;
    for (std::size_t i = 0; i < b; ++i) {
        if (times[i] <= 0.0) {
            throw DomainError("survival times must be positive, got " +
                              std::to_string(times[i]));
        }
        if (events[i] != 0 && events[i] != 1) {
            throw ValidationError("event indicators must be 0 or 1");
        }
        n_events += static_cast<std::size_t>(events[i]);
    }
    if (n_events == 0) throw ValidationError("uninformative batch: no events");

    Var total{};
    bool first = true;
    for (std::size_t i = 0; i < b; ++i) {
        if (!events[i]) continue;
        Tensor mask({b, 1}, 0.0);
        double peak = 0.0;
        bool have_peak = false;
        for (std::size_t j = 0; j < b; ++j) {
            if (times[j] >= times[i]) {
                mask[j] = 1.0;
                peak = have_peak ? std::max(peak, rv[j]) : rv[j];
                have_peak = true;
            }
        }
        // Shifting by the risk-set maximum keeps every exponent <= 0; the
        // mask sits inside and outside the exp so excluded subjects
        // contribute exp(0) scaled to zero, with zero gradient.
        Var m = t.leaf(std::move(mask));
        Var shifted = t.mul(m, t.sub(risks, peak));
        Var lse = t.add(t.log(t.sum(t.mul(m, t.exp(shifted)))), peak);
        Var term = t.sub(lse, t.slice_rows(risks, i, i + 1));
        total = first ? term : t.add(total, term);
        first = false;
    }
    if (mean_over_events) total = t.div(total, static_cast<double>(n_events));
    return total;
}

Var kl_embedding(Tape& t, Var p, Var q) {
    Var pn = floored_distribution(t, t.softmax(as_row(t, p), 1));
    Var qn = floored_distribution(t, t.softmax(as_row(t, q), 1));
    return t.sum(t.mul(pn, t.log(t.div(pn, qn))));
}

Var sq_euclidean(Tape& t, Var p, Var q) {
    const Tensor& pv = t.value(p);
    const Tensor& qv = t.value(q);
    if (pv.numel() != qv.numel()) {
        throw ShapeError("squared distance needs equal lengths: " + shape_str(pv.shape()) +
                         " vs " + shape_str(qv.shape()));
    }
    Var d = t.sub(as_row(t, p), as_row(t, q));
    return t.sum(t.mul(d, d));
}

Var latent_loss(Tape& t, Var p_l_cls, Var g_l, const LossWeights& w) {
    check_weights(w);
    return t.add(t.mul(kl_embedding(t, p_l_cls, g_l), w.lambda1),
                 t.mul(sq_euclidean(t, p_l_cls, g_l), w.lambda2));
}

Var translation_loss(Tape& t, Var g_l, Var g_l_hat, const LossWeights& w) {
    check_weights(w);
    return t.add(t.mul(kl_embedding(t, g_l, g_l_hat), w.lambda1),
                 t.mul(sq_euclidean(t, g_l, g_l_hat), w.lambda2));
}

LossBundle total_loss(Tape& t, Var cox, Var latent, Var translation, const LossWeights& w) {
    check_weights(w);
    Var total = t.add(cox, t.mul(t.add(latent, translation), w.alpha));
    return {cox, latent, translation, total};
}

}  // namespace pgx
