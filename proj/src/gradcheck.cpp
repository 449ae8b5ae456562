#include "pgx/gradcheck.hpp"

#include <cmath>

#include "pgx/errors.hpp"

namespace pgx {

namespace {

double eval(const TapeFn& f, const std::vector<Tensor>& inputs) {
    Tape tape;
    std::vector<Var> vars;
    vars.reserve(inputs.size());
    for (const Tensor& t : inputs) vars.push_back(tape.leaf(t));
    const Var out = f(tape, vars);
    const Tensor& v = tape.value(out);
    if (v.numel() != 1) throw ShapeError("gradient check needs a scalar-valued function");
    return v[0];
}

}  // namespace

double finite_difference_check(const TapeFn& f, const std::vector<Tensor>& inputs,
                               double step, double analytic_bias) {
    if (step <= 0.0) throw ValidationError("finite difference step must be positive");

    Tape tape;
    std::vector<Var> vars;
    vars.reserve(inputs.size());
    for (const Tensor& t : inputs) vars.push_back(tape.leaf(t));
    const Var out = f(tape, vars);
    if (tape.value(out).numel() != 1) {
        throw ShapeError("gradient check needs a scalar-valued function");
    }
    tape.backward(out);

    double worst = 0.0;
    std::vector<Tensor> probe = inputs;
    for (std::size_t t = 0; t < inputs.size(); ++t) {
        const Tensor& analytic = tape.grad(vars[t]);
        for (std::size_t i = 0; i < probe[t].numel(); ++i) {
            const double saved = probe[t][i];
            probe[t][i] = saved + step;
            const double hi = eval(f, probe);
            probe[t][i] = saved - step;
            const double lo = eval(f, probe);
            probe[t][i] = saved;
            const double fd = (hi - lo) / (2.0 * step);
            const double ad = analytic[i] + analytic_bias;
            const double denom = std::max({1.0, std::fabs(fd), std::fabs(ad)});
            worst = std::max(worst, std::fabs(fd - ad) / denom);
        }
    }
    return worst;
}

}  // namespace pgx
