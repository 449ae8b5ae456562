#pragma once

#include <span>

#include "pgx/tape.hpp"

namespace pgx {

struct LossWeights {
    double lambda1 = 1.0;  // divergence term weight
    double lambda2 = 1.0;  // squared-distance term weight
    double alpha = 1.0;    // alignment weight against the survival loss
};

// One batch's loss terms, all living on the shared batch tape.
struct LossBundle {
    Var cox;
    Var latent;
    Var translation;
    Var total;
};

// Negative Cox partial log-likelihood over one batch. risks is a [B x 1]
// column; the risk set for subject i is every subject with time >= time_i
// (i included), so tied event times share one risk set. The inner
// log-sum-exp is max-stabilized. Requires B >= 2, positive times, 0/1
// event flags, and at least one event ("uninformative batch" otherwise).
// With mean_over_events the sum is divided by the number of events.
Var cox_loss(Tape& t, Var risks, std::span<const double> times, std::span<const int> events,
             bool mean_over_events = false);

// KL divergence between embeddings: both arguments are softmax-normalized
// into distributions, floored at 1e-12 and renormalized, then
// sum p_i log(p_i / q_i). Nonnegative; zero iff the softmaxes agree.
Var kl_embedding(Tape& t, Var p, Var q);

// sum (p_i - q_i)^2
Var sq_euclidean(Tape& t, Var p, Var q);

// lambda1 * kl_embedding + lambda2 * sq_euclidean, pairing the encoder's
// class token with the projected genomic embedding.
Var latent_loss(Tape& t, Var p_l_cls, Var g_l, const LossWeights& w);

// Same composition for the projected genomic embedding against the
// decoder's estimate of it.
Var translation_loss(Tape& t, Var g_l, Var g_l_hat, const LossWeights& w);

// total = cox + alpha * (latent + translation)
LossBundle total_loss(Tape& t, Var cox, Var latent, Var translation, const LossWeights& w);

}  // namespace pgx
