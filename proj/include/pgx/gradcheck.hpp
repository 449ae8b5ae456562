#pragma once

#include <functional>
#include <span>
#include <vector>

#include "pgx/tape.hpp"

namespace pgx {

// Scalar-valued function built from tape operations. Receives one Var per
// input tensor, in order.
using TapeFn = std::function<Var(Tape&, std::span<const Var>)>;

// Compares backward() against central finite differences of f at `inputs`
// and returns the worst relative error over all input coordinates, where
// the error for one coordinate is |fd - ad| / max(1, |fd|, |ad|). The
// floor of 1 in the denominator makes near-zero gradients judged on
// absolute error.
//
// `analytic_bias` is a harness self-test hook: it is added to every
// analytic gradient before comparison, so any nonzero bias must trip the
// check. Leave it at zero for real verification.
double finite_difference_check(const TapeFn& f, const std::vector<Tensor>& inputs,
                               double step, double analytic_bias = 0.0);

// One named check per differentiable tape operation, plus "pathogenx_forward"
// covering the composed model. Inputs are drawn from `seed`, sized so the
// whole suite runs in seconds.
struct GradCheckCase {
    std::string name;
    TapeFn fn;
    std::vector<Tensor> inputs;
};
std::vector<GradCheckCase> gradient_suite(std::uint64_t seed);

struct GradCheckResult {
    std::string name;
    double max_rel_error = 0.0;
};
// Runs every case; `inject_bad_grad` names one case whose analytic
// gradients are deliberately biased to confirm the harness flags it
// (empty = no injection).
std::vector<GradCheckResult> run_gradient_suite(
    std::uint64_t seed, double step = 1e-5,
    const std::string& inject_bad_grad = "");

}  // namespace pgx
