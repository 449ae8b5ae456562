#include <cmath>
#include <utility>

#include "pgx/gradcheck.hpp"
#include "pgx/losses.hpp"
#include "pgx/model.hpp"
#include "pgx/rng.hpp"

namespace pgx {

namespace {

Tensor rand_tensor(Rng& rng, Shape shape, double scale = 1.0) {
    Tensor t(std::move(shape));
    for (std::size_t i = 0; i < t.numel(); ++i) t[i] = scale * rng.normal();
    return t;
}

// Strictly positive, bounded away from zero for log/sqrt/div.
Tensor positive_tensor(Rng& rng, Shape shape) {
    Tensor t(std::move(shape));
    for (std::size_t i = 0; i < t.numel(); ++i) {
        t[i] = 0.5 + rng.uniform() * 2.0;
    }
    return t;
}

// Values kept away from the relu kink so finite differences stay on one
// side of it.
Tensor off_kink_tensor(Rng& rng, Shape shape) {
    Tensor t(std::move(shape));
    for (std::size_t i = 0; i < t.numel(); ++i) {
        const double sign = rng.uniform() < 0.5 ? -1.0 : 1.0;
        t[i] = sign * (0.2 + rng.uniform());
    }
    return t;
}

// Pairwise gaps of at least 0.3 everywhere, so max() keeps one argmax
// under finite-difference probing.
Tensor spread_tensor(Rng& rng, Shape shape) {
    Tensor t(std::move(shape));
    std::vector<std::size_t> slot(t.numel());
    for (std::size_t i = 0; i < slot.size(); ++i) slot[i] = i;
    rng.shuffle(slot);
    for (std::size_t i = 0; i < t.numel(); ++i) {
        t[i] = 0.5 * static_cast<double>(slot[i]) + 0.1 * rng.uniform();
    }
    return t;
}

// Mean of the elementwise product with a fixed weight, turning any tensor
// into a scalar with nondegenerate gradients.
Var weighted_mean(Tape& t, Var x, const Tensor& w) {
    return t.mean(t.mul(x, t.leaf(w)));
}

}  // namespace

std::vector<GradCheckCase> gradient_suite(std::uint64_t seed) {
    Rng rng(seed);
    std::vector<GradCheckCase> cases;

    cases.push_back({"matmul",
                     [](Tape& t, std::span<const Var> v) {
                         return t.mean(t.matmul(v[0], v[1]));
                     },
                     {rand_tensor(rng, {3, 4}), rand_tensor(rng, {4, 2})}});

    cases.push_back({"add",
                     [](Tape& t, std::span<const Var> v) {
                         const Var full = t.add(v[0], v[1]);
                         const Var row = t.add(full, v[2]);
                         return t.mean(t.add(row, 0.7));
                     },
                     {rand_tensor(rng, {3, 4}), rand_tensor(rng, {3, 4}),
                      rand_tensor(rng, {4})}});

    cases.push_back({"sub",
                     [](Tape& t, std::span<const Var> v) {
                         const Var full = t.sub(v[0], v[1]);
                         const Var row = t.sub(full, v[2]);
                         return t.mean(t.add(t.sub(row, 0.3), t.sub(1.5, v[0])));
                     },
                     {rand_tensor(rng, {3, 4}), rand_tensor(rng, {3, 4}),
                      rand_tensor(rng, {4})}});

    cases.push_back({"mul",
                     [](Tape& t, std::span<const Var> v) {
                         const Var full = t.mul(v[0], v[1]);
                         const Var row = t.mul(full, v[2]);
                         return t.mean(t.mul(row, 2.5));
                     },
                     {rand_tensor(rng, {3, 4}), rand_tensor(rng, {3, 4}),
                      rand_tensor(rng, {4})}});

    cases.push_back({"div",
                     [](Tape& t, std::span<const Var> v) {
                         const Var full = t.div(v[0], v[1]);
                         return t.mean(t.add(t.div(full, 2.0), t.div(v[0], v[2])));
                     },
                     {rand_tensor(rng, {3, 4}), positive_tensor(rng, {3, 4}),
                      positive_tensor(rng, {4})}});

    cases.push_back({"exp",
                     [](Tape& t, std::span<const Var> v) {
                         return t.mean(t.exp(v[0]));
                     },
                     {rand_tensor(rng, {3, 4}, 0.5)}});

    cases.push_back({"log",
                     [](Tape& t, std::span<const Var> v) {
                         return t.mean(t.log(v[0]));
                     },
                     {positive_tensor(rng, {3, 4})}});

    cases.push_back({"sqrt",
                     [](Tape& t, std::span<const Var> v) {
                         return t.mean(t.sqrt(v[0]));
                     },
                     {positive_tensor(rng, {3, 4})}});

    cases.push_back({"neg",
                     [](Tape& t, std::span<const Var> v) {
                         return t.mean(t.neg(v[0]));
                     },
                     {rand_tensor(rng, {3, 4})}});

    {
        Tensor w = rand_tensor(rng, {3, 4});
        cases.push_back({"relu",
                         [w](Tape& t, std::span<const Var> v) {
                             return weighted_mean(t, t.relu(v[0]), w);
                         },
                         {off_kink_tensor(rng, {3, 4})}});
    }

    cases.push_back({"sum",
                     [](Tape& t, std::span<const Var> v) {
                         const Var all = t.sum(v[0]);
                         const Var rows = t.mean(t.sum_axis(v[0], 0));
                         const Var cols = t.mean(t.sum_axis(v[0], 1));
                         return t.add(all, t.add(rows, cols));
                     },
                     {rand_tensor(rng, {3, 4})}});

    cases.push_back({"mean",
                     [](Tape& t, std::span<const Var> v) {
                         const Var all = t.mean(v[0]);
                         const Var rows = t.mean(t.mean_axis(v[0], 0));
                         const Var cols = t.mean(t.mean_axis(v[0], 1));
                         return t.add(all, t.add(rows, cols));
                     },
                     {rand_tensor(rng, {3, 4})}});

    cases.push_back({"max",
                     [](Tape& t, std::span<const Var> v) {
                         const Var all = t.max(v[0]);
                         const Var rows = t.mean(t.max_axis(v[0], 0));
                         const Var cols = t.mean(t.max_axis(v[0], 1));
                         return t.add(all, t.add(rows, cols));
                     },
                     {spread_tensor(rng, {3, 4})}});

    {
        Tensor w = rand_tensor(rng, {3, 4});
        cases.push_back({"softmax",
                         [w](Tape& t, std::span<const Var> v) {
                             const Var rows = weighted_mean(t, t.softmax(v[0], 1), w);
                             const Var cols = weighted_mean(t, t.softmax(v[0], 0), w);
                             return t.add(rows, cols);
                         },
                         {rand_tensor(rng, {3, 4})}});
    }

    {
        Tensor w = rand_tensor(rng, {4, 3});
        cases.push_back({"transpose",
                         [w](Tape& t, std::span<const Var> v) {
                             return weighted_mean(t, t.transpose(v[0]), w);
                         },
                         {rand_tensor(rng, {3, 4})}});
    }

    {
        Tensor w = rand_tensor(rng, {2, 6});
        cases.push_back({"reshape",
                         [w](Tape& t, std::span<const Var> v) {
                             return weighted_mean(t, t.reshape(v[0], {2, 6}), w);
                         },
                         {rand_tensor(rng, {3, 4})}});
    }

    {
        Tensor w = rand_tensor(rng, {7, 2});
        cases.push_back({"concat_rows",
                         [w](Tape& t, std::span<const Var> v) {
                             const Var parts[] = {v[0], v[1], v[2]};
                             return weighted_mean(t, t.concat_rows(parts), w);
                         },
                         {rand_tensor(rng, {3, 2}), rand_tensor(rng, {1, 2}),
                          rand_tensor(rng, {3, 2})}});
    }

    {
        Tensor w = rand_tensor(rng, {2, 4});
        cases.push_back({"slice_rows",
                         [w](Tape& t, std::span<const Var> v) {
                             return weighted_mean(t, t.slice_rows(v[0], 1, 3), w);
                         },
                         {rand_tensor(rng, {5, 4})}});
    }

    {
        Tensor w = rand_tensor(rng, {7, 2});
        cases.push_back({"pad_rows_cyclic",
                         [w](Tape& t, std::span<const Var> v) {
                             return weighted_mean(t, t.pad_rows_cyclic(v[0], 7), w);
                         },
                         {rand_tensor(rng, {3, 2})}});
    }

    {
        Tensor w = rand_tensor(rng, {3, 4});
        cases.push_back({"layer_norm",
                         [w](Tape& t, std::span<const Var> v) {
                             return weighted_mean(
                                 t, t.layer_norm(v[0], v[1], v[2], 1e-5), w);
                         },
                         {rand_tensor(rng, {3, 4}), positive_tensor(rng, {4}),
                          rand_tensor(rng, {4})}});
    }

    {
        Tensor w = rand_tensor(rng, {9, 3});
        cases.push_back({"depthwise_conv",
                         [w](Tape& t, std::span<const Var> v) {
                             return weighted_mean(
                                 t, t.depthwise_conv_grid(v[0], v[1], 3), w);
                         },
                         {rand_tensor(rng, {9, 3}),
                          rand_tensor(rng, {3, 3, 3}, 0.5)}});
    }

    {
        // The composed model: a 3-patch toy bag through the full training
        // forward, with the risk and both alignment penalties folded into
        // one scalar so every path contributes gradients.
        ModelDims dims;
        dims.d_in = 8;
        dims.d_g = 10;
        dims.d = 8;
        dims.heads = 2;
        dims.hidden = 8;
        Rng init_rng = rng.child("model");
        const PathoGenXP<Tensor> params = pathogenx_init(init_rng, dims);
        std::vector<Tensor> inputs;
        visit(params, [&](const std::string&, const Tensor& t) {
            inputs.push_back(t);
        });
        Tensor bag = rand_tensor(rng, {3, 8});
        Tensor g0 = positive_tensor(rng, {1, 10});
        LossWeights weights;
        cases.push_back(
            {"pathogenx_forward",
             [params, bag, g0, weights](Tape& t, std::span<const Var> v) {
                 // bind() supplies the right vector structure; the slots are
                 // then redirected at the harness-controlled inputs.
                 PathoGenXP<Var> p = bind(t, params);
                 std::size_t i = 0;
                 visit(p, [&](const std::string&, Var& slot) { slot = v[i++]; });
                 const ForwardArtifacts art = forward_train(
                     t, p, t.leaf(bag), t.leaf(g0), RiskInput::kTranslated);
                 const Var latent = latent_loss(t, art.p_l_cls, art.g_l, weights);
                 const Var translation =
                     translation_loss(t, art.g_l, art.g_l_hat, weights);
                 return t.add(t.mean(art.risk), t.add(latent, translation));
             },
             std::move(inputs)});
    }

    return cases;
}

std::vector<GradCheckResult> run_gradient_suite(
    std::uint64_t seed, double step, const std::string& inject_bad_grad) {
    std::vector<GradCheckResult> results;
    for (const GradCheckCase& c : gradient_suite(seed)) {
        const double bias = c.name == inject_bad_grad ? 1e-2 : 0.0;
        results.push_back(
            {c.name, finite_difference_check(c.fn, c.inputs, step, bias)});
    }
    return results;
}

}  // namespace pgx
