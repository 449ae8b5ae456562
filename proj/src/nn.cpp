#include "pgx/nn.hpp"

#include <cmath>

#include "pgx/errors.hpp"

namespace pgx {

namespace {

Tensor uniform_fan(Rng& rng, Shape shape, std::size_t fan_in, std::size_t fan_out) {
    const double bound = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    Tensor t(std::move(shape));
    for (std::size_t i = 0; i < t.numel(); ++i) {
        t[i] = bound * (2.0 * rng.uniform() - 1.0);
    }
    return t;
}

Tensor normal_scaled(Rng& rng, Shape shape, double stddev) {
    Tensor t(std::move(shape));
    for (std::size_t i = 0; i < t.numel(); ++i) t[i] = stddev * rng.normal();
    return t;
}

}  // namespace

LinearP<Tensor> linear_init(Rng& rng, std::size_t in, std::size_t out) {
    if (in == 0 || out == 0) throw ValidationError("linear layer dimensions must be positive");
    return {uniform_fan(rng, {in, out}, in, out), Tensor({out}, 0.0)};
}

LayerNormP<Tensor> layer_norm_init(std::size_t dim, double epsilon) {
    if (dim == 0) throw ValidationError("layer norm dimension must be positive");
    if (epsilon <= 0.0) throw ValidationError("layer norm epsilon must be positive");
    return {Tensor({dim}, 1.0), Tensor({dim}, 0.0), epsilon};
}

MSAP<Tensor> msa_init(Rng& rng, std::size_t dim, std::size_t heads) {
    if (heads == 0 || dim % heads != 0) {
        throw ValidationError("attention head count must divide the embedding dimension; got " +
                              std::to_string(heads) + " heads for dimension " +
                              std::to_string(dim));
    }
    const std::size_t head_dim = dim / heads;
    MSAP<Tensor> p;
    for (std::size_t h = 0; h < heads; ++h) {
        // Query and key start near zero so the score matrix begins flat.
        // Fan-balanced scores saturate the row softmax on high-variance
        // tokens, and a saturated softmax passes almost no gradient back.
        p.query.push_back(normal_scaled(rng, {dim, head_dim}, 0.02));
        p.key.push_back(normal_scaled(rng, {dim, head_dim}, 0.02));
        p.value.push_back(uniform_fan(rng, {dim, head_dim}, dim, head_dim));
    }
    p.out = uniform_fan(rng, {dim, dim}, dim, dim);
    return p;
}

PPEGP<Tensor> ppeg_init(Rng& rng, std::size_t dim) {
    if (dim == 0) throw ValidationError("embedding dimension must be positive");
    return {normal_scaled(rng, {7, 7, dim}, 0.02), normal_scaled(rng, {5, 5, dim}, 0.02),
            normal_scaled(rng, {3, 3, dim}, 0.02)};
}

MLPP<Tensor> mlp_init(Rng& rng, std::span<const std::size_t> dims) {
    if (dims.size() < 2) throw ValidationError("an MLP needs at least two dimensions");
    MLPP<Tensor> p;
    for (std::size_t i = 0; i + 1 < dims.size(); ++i) {
        p.layers.push_back(linear_init(rng, dims[i], dims[i + 1]));
    }
    return p;
}

LinearP<Var> bind(Tape& t, const LinearP<Tensor>& p) {
    return {t.leaf(p.weight), t.leaf(p.bias)};
}

LayerNormP<Var> bind(Tape& t, const LayerNormP<Tensor>& p) {
    return {t.leaf(p.gain), t.leaf(p.offset), p.epsilon};
}

MSAP<Var> bind(Tape& t, const MSAP<Tensor>& p) {
    MSAP<Var> out;
    for (const Tensor& q : p.query) out.query.push_back(t.leaf(q));
    for (const Tensor& k : p.key) out.key.push_back(t.leaf(k));
    for (const Tensor& v : p.value) out.value.push_back(t.leaf(v));
    out.out = t.leaf(p.out);
    return out;
}

PPEGP<Var> bind(Tape& t, const PPEGP<Tensor>& p) {
    return {t.leaf(p.k7), t.leaf(p.k5), t.leaf(p.k3)};
}

MLPP<Var> bind(Tape& t, const MLPP<Tensor>& p) {
    MLPP<Var> out;
    for (const auto& layer : p.layers) out.layers.push_back(bind(t, layer));
    return out;
}

Var linear_forward(Tape& t, const LinearP<Var>& p, Var x) {
    return t.add(t.matmul(x, p.weight), p.bias);
}

Var layer_norm_forward(Tape& t, const LayerNormP<Var>& p, Var x) {
    return t.layer_norm(x, p.gain, p.offset, p.epsilon);
}

Var msa_forward(Tape& t, const MSAP<Var>& p, Var x) {
    const std::size_t heads = p.query.size();
    if (heads == 0) throw ValidationError("attention needs at least one head");
    const std::size_t head_dim = t.value(p.query[0]).cols();
    const double scale = 1.0 / std::sqrt(static_cast<double>(head_dim));

    std::vector<Var> mixed_t;  // transposed per-head outputs, [D/h x M] each
    mixed_t.reserve(heads);
    for (std::size_t h = 0; h < heads; ++h) {
        Var q = t.matmul(x, p.query[h]);
        Var k = t.matmul(x, p.key[h]);
        Var v = t.matmul(x, p.value[h]);
        Var attn = t.softmax(t.mul(t.matmul(q, t.transpose(k)), scale), 1);
        mixed_t.push_back(t.transpose(t.matmul(attn, v)));
    }
    Var mixed = t.transpose(t.concat_rows(mixed_t));
    return t.matmul(mixed, p.out);
}

Var ppeg_forward(Tape& t, const PPEGP<Var>& p, Var tokens) {
    const std::size_t rows = t.value(tokens).rows();
    if (rows < 2) {
        throw ShapeError("position encoding needs a class token plus at least one patch, got " +
                         std::to_string(rows) + " rows");
    }
    const std::size_t n = rows - 1;
    std::size_t side = 1;
    while (side * side < n) ++side;

    Var cls = t.slice_rows(tokens, 0, 1);
    Var patches = t.slice_rows(tokens, 1, rows);
    Var padded = t.pad_rows_cyclic(patches, side * side);
    Var summed = t.add(padded, t.depthwise_conv_grid(padded, p.k7, side));
    summed = t.add(summed, t.depthwise_conv_grid(padded, p.k5, side));
    summed = t.add(summed, t.depthwise_conv_grid(padded, p.k3, side));
    return t.concat_rows(cls, t.slice_rows(summed, 0, n));
}

Var mlp_forward(Tape& t, const MLPP<Var>& p, Var x) {
    if (p.layers.empty()) throw ValidationError("an MLP needs at least one layer");
    Var h = x;
    for (std::size_t i = 0; i < p.layers.size(); ++i) {
        h = linear_forward(t, p.layers[i], h);
        if (i + 1 < p.layers.size()) h = t.relu(h);
    }
    return h;
}

}  // namespace pgx
