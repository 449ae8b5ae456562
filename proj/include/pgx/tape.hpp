#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "pgx/tensor.hpp"

namespace pgx {

// Handle to a node on a Tape. Valid only for the tape that created it.
struct Var {
    std::uint32_t id = 0;
};

// Define-by-run reverse-mode tape. Every operation appends a node holding
// its forward value; backward() walks the tape in reverse creation order,
// accumulating gradients with += into buffers zeroed at the start of the
// pass, so repeated backward calls on one tape are independent and two
// runs over the same tape are bit-identical.
//
// References returned by value()/grad() are invalidated by the next
// operation recorded on the tape; copy out anything that must outlive it.
class Tape {
public:
    Tape();

    Var leaf(const Tensor& t);
    Var leaf(Tensor&& t);
    Var constant_scalar(double v);

    // a[m x k] * b[k x n] -> [m x n]
    Var matmul(Var a, Var b);

    // Elementwise; operands must have equal shapes, or one side is a
    // single element, or one side is a length-n row against an m x n
    // matrix. Division checks for zero divisor elements.
    Var add(Var a, Var b);
    Var sub(Var a, Var b);
    Var mul(Var a, Var b);
    Var div(Var a, Var b);
    Var add(Var a, double s);
    Var sub(Var a, double s);
    Var sub(double s, Var a);
    Var mul(Var a, double s);
    Var div(Var a, double s);

    // Elementwise maps; log and sqrt require strictly positive inputs.
    Var exp(Var a);
    Var log(Var a);
    Var sqrt(Var a);
    Var neg(Var a);
    Var relu(Var a);

    // Reductions over all elements (-> single-element tensor) or along an
    // axis of a rank-2 tensor (-> rank-1 tensor).
    Var sum(Var a);
    Var mean(Var a);
    Var max(Var a);
    Var sum_axis(Var a, int axis);
    Var mean_axis(Var a, int axis);
    Var max_axis(Var a, int axis);

    // Stable softmax along `axis`; each slice sums to 1.
    Var softmax(Var a, int axis);

    Var transpose(Var a);
    Var reshape(Var a, Shape target);
    Var concat_rows(std::span<const Var> parts);
    Var concat_rows(Var a, Var b);
    // rows [r0, r1)
    Var slice_rows(Var a, std::size_t r0, std::size_t r1);
    // Extends to target_rows rows by repeating rows cyclically from row 0.
    Var pad_rows_cyclic(Var a, std::size_t target_rows);

    // Per-row normalization of x[m x D] to zero mean / unit variance
    // (epsilon-stabilized), then elementwise gain/offset (numel D each).
    Var layer_norm(Var x, Var gain, Var offset, double epsilon);

    // tokens[S*S x D] seen as an S x S grid of D-channel cells, convolved
    // depthwise (one k x k filter per channel, zero same-padding) with
    // kernel[k x k x D], k odd.
    Var depthwise_conv_grid(Var tokens, Var kernel, std::size_t grid);

    // root must be a single element. Gradients of every node w.r.t. root.
    void backward(Var root);
    // Generalized pass: seeds[i] is d(objective)/d(roots[i]); all roots
    // must be single-element nodes.
    void backward(std::span<const Var> roots, std::span<const double> seeds);

    const Tensor& value(Var v) const;
    const Tensor& grad(Var v) const;

    std::size_t node_count() const { return nodes_.size(); }

private:
    enum class Op : std::uint8_t {
        kLeaf,
        kMatmul,
        kAdd,
        kSub,
        kMul,
        kDiv,
        kExp,
        kLog,
        kSqrt,
        kNeg,
        kRelu,
        kSum,
        kMean,
        kMax,
        kSoftmax,
        kTranspose,
        kReshape,
        kConcatRows,
        kSliceRows,
        kPadRowsCyclic,
        kLayerNorm,
        kDepthwiseConv,
    };

    enum class Broadcast : std::uint8_t { kSame, kAScalar, kBScalar, kARow, kBRow };

    struct Node {
        Op op = Op::kLeaf;
        Broadcast bcast = Broadcast::kSame;
        int axis = -1;  // -1 = reduce over all elements
        std::size_t a0 = 0, a1 = 0;
        double x0 = 0.0;
        std::vector<std::uint32_t> parents;
        Tensor value;
        Tensor grad;
        std::vector<Tensor> saved;
    };

    Var push(Node node);
    const Node& node(Var v) const;
    Var elementwise(Op op, Var a, Var b);
    Var map_op(Op op, Var a);
    Var reduce_full(Op op, Var a);
    Var reduce_axis(Op op, Var a, int axis);

    void backward_into(const Node& n);

    std::vector<Node> nodes_;
};

}  // namespace pgx
