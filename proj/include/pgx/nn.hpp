#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "pgx/rng.hpp"
#include "pgx/tape.hpp"
#include "pgx/tensor.hpp"

namespace pgx {

// Parameter structs are generic over the carrier type: Tensor while stored
// and optimized, Var once bound onto a tape for a forward pass. visit()
// walks the tensors of a struct in a fixed order shared by both carriers;
// binding, optimizer state and checkpoints all depend on that order.

template <typename T>
struct LinearP {
    T weight;  // [in x out]
    T bias;    // [out]
};

template <typename T>
struct LayerNormP {
    T gain;    // [D]
    T offset;  // [D]
    double epsilon = 1e-5;
};

template <typename T>
struct MSAP {
    std::vector<T> query;  // one [D x D/h] projection per head
    std::vector<T> key;
    std::vector<T> value;
    T out;  // [D x D], shared across heads
};

template <typename T>
struct PPEGP {
    T k7;  // [7 x 7 x D], one filter per channel
    T k5;  // [5 x 5 x D]
    T k3;  // [3 x 3 x D]
};

template <typename T>
struct MLPP {
    std::vector<LinearP<T>> layers;
};

template <typename T, typename F>
void visit(LinearP<T>& p, const std::string& prefix, F&& f) {
    f(prefix + ".weight", p.weight);
    f(prefix + ".bias", p.bias);
}
template <typename T, typename F>
void visit(const LinearP<T>& p, const std::string& prefix, F&& f) {
    f(prefix + ".weight", p.weight);
    f(prefix + ".bias", p.bias);
}

template <typename T, typename F>
void visit(LayerNormP<T>& p, const std::string& prefix, F&& f) {
    f(prefix + ".gain", p.gain);
    f(prefix + ".offset", p.offset);
}
template <typename T, typename F>
void visit(const LayerNormP<T>& p, const std::string& prefix, F&& f) {
    f(prefix + ".gain", p.gain);
    f(prefix + ".offset", p.offset);
}

template <typename T, typename F>
void visit(MSAP<T>& p, const std::string& prefix, F&& f) {
    for (std::size_t h = 0; h < p.query.size(); ++h) {
        const std::string head = prefix + "." + std::to_string(h);
        f(head + ".q", p.query[h]);
        f(head + ".k", p.key[h]);
        f(head + ".v", p.value[h]);
    }
    f(prefix + ".out", p.out);
}
template <typename T, typename F>
void visit(const MSAP<T>& p, const std::string& prefix, F&& f) {
    for (std::size_t h = 0; h < p.query.size(); ++h) {
        const std::string head = prefix + "." + std::to_string(h);
        f(head + ".q", p.query[h]);
        f(head + ".k", p.key[h]);
        f(head + ".v", p.value[h]);
    }
    f(prefix + ".out", p.out);
}

template <typename T, typename F>
void visit(PPEGP<T>& p, const std::string& prefix, F&& f) {
    f(prefix + ".k7", p.k7);
    f(prefix + ".k5", p.k5);
    f(prefix + ".k3", p.k3);
}
template <typename T, typename F>
void visit(const PPEGP<T>& p, const std::string& prefix, F&& f) {
    f(prefix + ".k7", p.k7);
    f(prefix + ".k5", p.k5);
    f(prefix + ".k3", p.k3);
}

template <typename T, typename F>
void visit(MLPP<T>& p, const std::string& prefix, F&& f) {
    for (std::size_t i = 0; i < p.layers.size(); ++i) {
        visit(p.layers[i], prefix + "." + std::to_string(i), f);
    }
}
template <typename T, typename F>
void visit(const MLPP<T>& p, const std::string& prefix, F&& f) {
    for (std::size_t i = 0; i < p.layers.size(); ++i) {
        visit(p.layers[i], prefix + "." + std::to_string(i), f);
    }
}

// Weights ~ uniform(+-sqrt(6/(in+out))), biases zero.
LinearP<Tensor> linear_init(Rng& rng, std::size_t in, std::size_t out);
// Gain ones, offset zeros.
LayerNormP<Tensor> layer_norm_init(std::size_t dim, double epsilon = 1e-5);
// heads must divide dim; per-head projections are bias-free.
MSAP<Tensor> msa_init(Rng& rng, std::size_t dim, std::size_t heads);
// Kernel entries ~ N(0, 0.02^2).
PPEGP<Tensor> ppeg_init(Rng& rng, std::size_t dim);
// dims = {in, hidden..., out}; one linear layer per consecutive pair.
MLPP<Tensor> mlp_init(Rng& rng, std::span<const std::size_t> dims);

LinearP<Var> bind(Tape& t, const LinearP<Tensor>& p);
LayerNormP<Var> bind(Tape& t, const LayerNormP<Tensor>& p);
MSAP<Var> bind(Tape& t, const MSAP<Tensor>& p);
PPEGP<Var> bind(Tape& t, const PPEGP<Tensor>& p);
MLPP<Var> bind(Tape& t, const MLPP<Tensor>& p);

// x[m x in] -> x W + b, [m x out]
Var linear_forward(Tape& t, const LinearP<Var>& p, Var x);

// Per-row zero-mean/unit-variance normalization followed by gain/offset.
Var layer_norm_forward(Tape& t, const LayerNormP<Var>& p, Var x);

// Multi-head self-attention over token rows: per head
// softmax(Q K^T / sqrt(D/h)) V, heads concatenated along columns, then the
// shared output projection. Shape-preserving on [M x D].
Var msa_forward(Tape& t, const MSAP<Var>& p, Var x);

// Conditional position encoding for [class_token; patches] stacks: the
// class token row passes through untouched; the N patch tokens are padded
// cyclically from the start of the sequence to S^2 rows (S = ceil(sqrt(N))),
// seen as an S x S grid, and summed with three depthwise convolutions of
// themselves (zero same-padding); the first N rows are kept.
Var ppeg_forward(Tape& t, const PPEGP<Var>& p, Var tokens);

// Alternating linear / relu; no activation after the final layer.
Var mlp_forward(Tape& t, const MLPP<Var>& p, Var x);

}  // namespace pgx
