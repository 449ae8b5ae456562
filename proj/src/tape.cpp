#include "pgx/tape.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "pgx/errors.hpp"

namespace pgx {

namespace {

// C (+)= A[m x k] * B[k x n]
void mm_nn(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
           std::size_t n) {
    for (std::size_t i = 0; i < m; ++i) {
        const double* arow = a + i * k;
        double* crow = c + i * n;
        for (std::size_t l = 0; l < k; ++l) {
            const double av = arow[l];
            if (av == 0.0) continue;
            const double* brow = b + l * n;
            for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

// C += A[m x k] * B^T  with B[n x k]
void mm_nt(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
           std::size_t n) {
    for (std::size_t i = 0; i < m; ++i) {
        const double* arow = a + i * k;
        double* crow = c + i * n;
        for (std::size_t j = 0; j < n; ++j) {
            const double* brow = b + j * k;
            double acc = 0.0;
            for (std::size_t l = 0; l < k; ++l) acc += arow[l] * brow[l];
            crow[j] += acc;
        }
    }
}

// C += A^T * B  with A[k x m], B[k x n]
void mm_tn(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
           std::size_t n) {
    for (std::size_t l = 0; l < k; ++l) {
        const double* arow = a + l * m;
        const double* brow = b + l * n;
        for (std::size_t i = 0; i < m; ++i) {
            const double av = arow[i];
            if (av == 0.0) continue;
            double* crow = c + i * n;
            for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

bool is_row_of(const Tensor& row, const Tensor& mat) {
    if (mat.rank() != 2) return false;
    if (row.rank() == 1) return row.numel() == mat.cols();
    if (row.rank() == 2) return row.shape()[0] == 1 && row.cols() == mat.cols();
    return false;
}

}  // namespace

Tape::Tape() { nodes_.reserve(256); }

Var Tape::push(Node node) {
    nodes_.push_back(std::move(node));
    return Var{static_cast<std::uint32_t>(nodes_.size() - 1)};
}

const Tape::Node& Tape::node(Var v) const { return nodes_.at(v.id); }

Var Tape::leaf(const Tensor& t) { return leaf(Tensor(t)); }

Var Tape::leaf(Tensor&& t) {
    if (t.empty()) throw ShapeError("cannot put an empty tensor on the tape");
    Node n;
    n.op = Op::kLeaf;
    n.value = std::move(t);
    return push(std::move(n));
}

Var Tape::constant_scalar(double v) { return leaf(Tensor::scalar(v)); }

const Tensor& Tape::value(Var v) const { return node(v).value; }

const Tensor& Tape::grad(Var v) const {
    const Node& n = node(v);
    if (n.grad.empty()) throw ValidationError("gradient requested before backward()");
    return n.grad;
}

Var Tape::matmul(Var a, Var b) {
    const Tensor& av = node(a).value;
    const Tensor& bv = node(b).value;
    if (av.rank() != 2 || bv.rank() != 2 || av.cols() != bv.rows()) {
        throw ShapeError("matmul shape mismatch: " + shape_str(av.shape()) + " * " +
                         shape_str(bv.shape()));
    }
    Node n;
    n.op = Op::kMatmul;
    n.parents = {a.id, b.id};
    n.value = Tensor({av.rows(), bv.cols()});
    mm_nn(av.values().data(), bv.values().data(), n.value.values().data(), av.rows(),
          av.cols(), bv.cols());
    return push(std::move(n));
}

Var Tape::elementwise(Op op, Var a, Var b) {
    const Tensor& av = node(a).value;
    const Tensor& bv = node(b).value;

    Broadcast bc;
    if (av.shape() == bv.shape()) {
        bc = Broadcast::kSame;
    } else if (bv.numel() == 1) {
        bc = Broadcast::kBScalar;
    } else if (av.numel() == 1) {
        bc = Broadcast::kAScalar;
    } else if (is_row_of(bv, av)) {
        bc = Broadcast::kBRow;
    } else if (is_row_of(av, bv)) {
        bc = Broadcast::kARow;
    } else {
        throw ShapeError("elementwise shape mismatch: " + shape_str(av.shape()) + " vs " +
                         shape_str(bv.shape()));
    }

    if (op == Op::kDiv) {
        for (double d : bv.values()) {
            if (d == 0.0) throw DomainError("division by zero");
        }
    }

    const bool a_full = (bc == Broadcast::kSame || bc == Broadcast::kBScalar ||
                         bc == Broadcast::kBRow);
    const Tensor& full = a_full ? av : bv;
    const std::size_t n = full.numel();
    const std::size_t ncols = (bc == Broadcast::kARow || bc == Broadcast::kBRow)
                                  ? full.cols()
                                  : 0;

    Node out;
    out.op = op;
    out.bcast = bc;
    out.parents = {a.id, b.id};
    out.value = Tensor(full.shape());
    double* z = out.value.values().data();
    const double* ap = av.values().data();
    const double* bp = bv.values().data();
    for (std::size_t i = 0; i < n; ++i) {
        double x, y;
        switch (bc) {
            case Broadcast::kSame: x = ap[i]; y = bp[i]; break;
            case Broadcast::kBScalar: x = ap[i]; y = bp[0]; break;
            case Broadcast::kAScalar: x = ap[0]; y = bp[i]; break;
            case Broadcast::kBRow: x = ap[i]; y = bp[i % ncols]; break;
            case Broadcast::kARow: x = ap[i % ncols]; y = bp[i]; break;
            default: x = y = 0.0; break;
        }
        switch (op) {
            case Op::kAdd: z[i] = x + y; break;
            case Op::kSub: z[i] = x - y; break;
            case Op::kMul: z[i] = x * y; break;
            case Op::kDiv: z[i] = x / y; break;
            default: break;
        }
    }
    return push(std::move(out));
}

Var Tape::add(Var a, Var b) { return elementwise(Op::kAdd, a, b); }
Var Tape::sub(Var a, Var b) { return elementwise(Op::kSub, a, b); }
Var Tape::mul(Var a, Var b) { return elementwise(Op::kMul, a, b); }
Var Tape::div(Var a, Var b) { return elementwise(Op::kDiv, a, b); }
Var Tape::add(Var a, double s) { return add(a, constant_scalar(s)); }
Var Tape::sub(Var a, double s) { return sub(a, constant_scalar(s)); }
Var Tape::sub(double s, Var a) { return sub(constant_scalar(s), a); }
Var Tape::mul(Var a, double s) { return mul(a, constant_scalar(s)); }
Var Tape::div(Var a, double s) { return div(a, constant_scalar(s)); }

Var Tape::map_op(Op op, Var a) {
    const Tensor& av = node(a).value;
    Node out;
    out.op = op;
    out.parents = {a.id};
    out.value = Tensor(av.shape());
    double* z = out.value.values().data();
    const double* x = av.values().data();
    for (std::size_t i = 0; i < av.numel(); ++i) {
        switch (op) {
            case Op::kExp: z[i] = std::exp(x[i]); break;
            case Op::kLog:
                if (x[i] <= 0.0) throw DomainError("log requires strictly positive input");
                z[i] = std::log(x[i]);
                break;
            case Op::kSqrt:
                if (x[i] <= 0.0) throw DomainError("sqrt requires strictly positive input");
                z[i] = std::sqrt(x[i]);
                break;
            case Op::kNeg: z[i] = -x[i]; break;
            case Op::kRelu: z[i] = x[i] > 0.0 ? x[i] : 0.0; break;
            default: break;
        }
    }
    return push(std::move(out));
}

Var Tape::exp(Var a) { return map_op(Op::kExp, a); }
Var Tape::log(Var a) { return map_op(Op::kLog, a); }
Var Tape::sqrt(Var a) { return map_op(Op::kSqrt, a); }
Var Tape::neg(Var a) { return map_op(Op::kNeg, a); }
Var Tape::relu(Var a) { return map_op(Op::kRelu, a); }

Var Tape::reduce_full(Op op, Var a) {
    const Tensor& av = node(a).value;
    Node out;
    out.op = op;
    out.axis = -1;
    out.parents = {a.id};
    double acc;
    if (op == Op::kMax) {
        acc = av[0];
        for (std::size_t i = 1; i < av.numel(); ++i) acc = std::max(acc, av[i]);
    } else {
        acc = 0.0;
        for (std::size_t i = 0; i < av.numel(); ++i) acc += av[i];
        if (op == Op::kMean) acc /= static_cast<double>(av.numel());
    }
    out.value = Tensor::scalar(acc);
    return push(std::move(out));
}

Var Tape::reduce_axis(Op op, Var a, int axis) {
    const Tensor& av = node(a).value;
    if (av.rank() != 2 || (axis != 0 && axis != 1)) {
        throw ShapeError("axis reduction requires rank 2 and axis in {0,1}; got " +
                         shape_str(av.shape()) + ", axis " + std::to_string(axis));
    }
    const std::size_t rows = av.rows(), cols = av.cols();
    const std::size_t out_n = axis == 0 ? cols : rows;
    Node out;
    out.op = op;
    out.axis = axis;
    out.parents = {a.id};
    out.value = Tensor({out_n});
    double* z = out.value.values().data();
    if (op == Op::kMax) {
        for (std::size_t s = 0; s < out_n; ++s) {
            double m = axis == 0 ? av.at(0, s) : av.at(s, 0);
            const std::size_t len = axis == 0 ? rows : cols;
            for (std::size_t t = 1; t < len; ++t) {
                const double v = axis == 0 ? av.at(t, s) : av.at(s, t);
                m = std::max(m, v);
            }
            z[s] = m;
        }
    } else {
        const std::size_t len = axis == 0 ? rows : cols;
        for (std::size_t s = 0; s < out_n; ++s) {
            double acc = 0.0;
            for (std::size_t t = 0; t < len; ++t) {
                acc += axis == 0 ? av.at(t, s) : av.at(s, t);
            }
            z[s] = op == Op::kMean ? acc / static_cast<double>(len) : acc;
        }
    }
    return push(std::move(out));
}

Var Tape::sum(Var a) { return reduce_full(Op::kSum, a); }
Var Tape::mean(Var a) { return reduce_full(Op::kMean, a); }
Var Tape::max(Var a) { return reduce_full(Op::kMax, a); }
Var Tape::sum_axis(Var a, int axis) { return reduce_axis(Op::kSum, a, axis); }
Var Tape::mean_axis(Var a, int axis) { return reduce_axis(Op::kMean, a, axis); }
Var Tape::max_axis(Var a, int axis) { return reduce_axis(Op::kMax, a, axis); }

Var Tape::softmax(Var a, int axis) {
    const Tensor& av = node(a).value;
    Node out;
    out.op = Op::kSoftmax;
    out.parents = {a.id};
    out.value = Tensor(av.shape());

    auto run_slice = [](const double* x, double* y, std::size_t len, std::size_t stride) {
        double m = x[0];
        for (std::size_t i = 1; i < len; ++i) m = std::max(m, x[i * stride]);
        double s = 0.0;
        for (std::size_t i = 0; i < len; ++i) {
            const double e = std::exp(x[i * stride] - m);
            y[i * stride] = e;
            s += e;
        }
        for (std::size_t i = 0; i < len; ++i) y[i * stride] /= s;
    };

    const double* x = av.values().data();
    double* y = out.value.values().data();
    if (av.rank() == 1) {
        if (axis != 0) throw ShapeError("softmax axis out of range for rank-1 input");
        out.axis = 0;
        run_slice(x, y, av.numel(), 1);
    } else if (av.rank() == 2) {
        if (axis != 0 && axis != 1) throw ShapeError("softmax axis must be 0 or 1");
        out.axis = axis;
        const std::size_t rows = av.rows(), cols = av.cols();
        if (axis == 1) {
            for (std::size_t i = 0; i < rows; ++i) run_slice(x + i * cols, y + i * cols, cols, 1);
        } else {
            for (std::size_t j = 0; j < cols; ++j) run_slice(x + j, y + j, rows, cols);
        }
    } else {
        throw ShapeError("softmax supports rank 1 or 2, got " + shape_str(av.shape()));
    }
    return push(std::move(out));
}

Var Tape::transpose(Var a) {
    const Tensor& av = node(a).value;
    if (av.rank() != 2) throw ShapeError("transpose requires rank 2, got " + shape_str(av.shape()));
    Node out;
    out.op = Op::kTranspose;
    out.parents = {a.id};
    out.value = Tensor({av.cols(), av.rows()});
    for (std::size_t i = 0; i < av.rows(); ++i) {
        for (std::size_t j = 0; j < av.cols(); ++j) out.value.at(j, i) = av.at(i, j);
    }
    return push(std::move(out));
}

Var Tape::reshape(Var a, Shape target) {
    const Tensor& av = node(a).value;
    if (shape_numel(target) != av.numel()) {
        throw ShapeError("reshape element count mismatch: " + shape_str(av.shape()) +
                         " -> " + shape_str(target));
    }
    Node out;
    out.op = Op::kReshape;
    out.parents = {a.id};
    out.value = Tensor(std::move(target), av.values());
    return push(std::move(out));
}

Var Tape::concat_rows(std::span<const Var> parts) {
    if (parts.empty()) throw ShapeError("concat_rows needs at least one part");
    std::size_t rows = 0;
    std::size_t cols = 0;
    for (std::size_t p = 0; p < parts.size(); ++p) {
        const Tensor& t = node(parts[p]).value;
        if (t.rank() != 2) throw ShapeError("concat_rows requires rank-2 parts");
        if (p == 0) {
            cols = t.cols();
        } else if (t.cols() != cols) {
            throw ShapeError("concat_rows column mismatch: " + std::to_string(cols) +
                             " vs " + std::to_string(t.cols()));
        }
        rows += t.rows();
    }
    Node out;
    out.op = Op::kConcatRows;
    for (Var p : parts) out.parents.push_back(p.id);
    out.value = Tensor({rows, cols});
    double* z = out.value.values().data();
    for (Var p : parts) {
        const Tensor& t = node(p).value;
        std::copy(t.values().begin(), t.values().end(), z);
        z += t.numel();
    }
    return push(std::move(out));
}

Var Tape::concat_rows(Var a, Var b) {
    const Var parts[2] = {a, b};
    return concat_rows(std::span<const Var>(parts, 2));
}

Var Tape::slice_rows(Var a, std::size_t r0, std::size_t r1) {
    const Tensor& av = node(a).value;
    if (av.rank() != 2 || r0 >= r1 || r1 > av.rows()) {
        throw ShapeError("slice_rows [" + std::to_string(r0) + "," + std::to_string(r1) +
                         ") invalid for " + shape_str(av.shape()));
    }
    Node out;
    out.op = Op::kSliceRows;
    out.a0 = r0;
    out.a1 = r1;
    out.parents = {a.id};
    const std::size_t cols = av.cols();
    out.value = Tensor({r1 - r0, cols});
    std::copy(av.values().begin() + static_cast<std::ptrdiff_t>(r0 * cols),
              av.values().begin() + static_cast<std::ptrdiff_t>(r1 * cols),
              out.value.values().begin());
    return push(std::move(out));
}

Var Tape::pad_rows_cyclic(Var a, std::size_t target_rows) {
    const Tensor& av = node(a).value;
    if (av.rank() != 2) throw ShapeError("pad_rows_cyclic requires rank 2");
    const std::size_t m = av.rows(), cols = av.cols();
    if (target_rows < m) {
        throw ShapeError("pad_rows_cyclic target " + std::to_string(target_rows) +
                         " smaller than " + std::to_string(m) + " rows");
    }
    Node out;
    out.op = Op::kPadRowsCyclic;
    out.a0 = target_rows;
    out.parents = {a.id};
    out.value = Tensor({target_rows, cols});
    for (std::size_t t = 0; t < target_rows; ++t) {
        const std::size_t src = t < m ? t : (t - m) % m;
        for (std::size_t j = 0; j < cols; ++j) out.value.at(t, j) = av.at(src, j);
    }
    return push(std::move(out));
}

Var Tape::layer_norm(Var x, Var gain, Var offset, double epsilon) {
    const Tensor& xv = node(x).value;
    const Tensor& gv = node(gain).value;
    const Tensor& bv = node(offset).value;
    if (xv.rank() != 2) throw ShapeError("layer_norm input must be rank 2");
    const std::size_t rows = xv.rows(), dim = xv.cols();
    if (gv.numel() != dim || bv.numel() != dim) {
        throw ShapeError("layer_norm gain/offset size mismatch: dim " + std::to_string(dim) +
                         ", gain " + shape_str(gv.shape()) + ", offset " + shape_str(bv.shape()));
    }
    if (epsilon <= 0.0) throw DomainError("layer_norm epsilon must be positive");

    Node out;
    out.op = Op::kLayerNorm;
    out.x0 = epsilon;
    out.parents = {x.id, gain.id, offset.id};
    out.value = Tensor({rows, dim});
    Tensor xhat({rows, dim});
    Tensor inv_std({rows});
    for (std::size_t i = 0; i < rows; ++i) {
        double mu = 0.0;
        for (std::size_t j = 0; j < dim; ++j) mu += xv.at(i, j);
        mu /= static_cast<double>(dim);
        double var = 0.0;
        for (std::size_t j = 0; j < dim; ++j) {
            const double d = xv.at(i, j) - mu;
            var += d * d;
        }
        var /= static_cast<double>(dim);
        const double inv = 1.0 / std::sqrt(var + epsilon);
        inv_std[i] = inv;
        for (std::size_t j = 0; j < dim; ++j) {
            const double h = (xv.at(i, j) - mu) * inv;
            xhat.at(i, j) = h;
            out.value.at(i, j) = h * gv[j] + bv[j];
        }
    }
    out.saved.push_back(std::move(xhat));
    out.saved.push_back(std::move(inv_std));
    return push(std::move(out));
}

Var Tape::depthwise_conv_grid(Var tokens, Var kernel, std::size_t grid) {
    const Tensor& tv = node(tokens).value;
    const Tensor& kv = node(kernel).value;
    if (tv.rank() != 2 || tv.rows() != grid * grid) {
        throw ShapeError("depthwise_conv_grid tokens must be [S*S x D], got " +
                         shape_str(tv.shape()) + " for S=" + std::to_string(grid));
    }
    if (kv.rank() != 3 || kv.shape()[0] != kv.shape()[1] || kv.shape()[0] % 2 == 0 ||
        kv.shape()[2] != tv.cols()) {
        throw ShapeError("depthwise kernel must be [k x k x D] with odd k, got " +
                         shape_str(kv.shape()));
    }
    const std::size_t k = kv.shape()[0];
    const std::size_t dim = tv.cols();
    const std::size_t half = k / 2;

    Node out;
    out.op = Op::kDepthwiseConv;
    out.a0 = grid;
    out.parents = {tokens.id, kernel.id};
    out.value = Tensor({grid * grid, dim});
    for (std::size_t r = 0; r < grid; ++r) {
        for (std::size_t c = 0; c < grid; ++c) {
            double* dst = &out.value.at(r * grid + c, 0);
            for (std::size_t kr = 0; kr < k; ++kr) {
                const std::ptrdiff_t sr = static_cast<std::ptrdiff_t>(r + kr) -
                                          static_cast<std::ptrdiff_t>(half);
                if (sr < 0 || sr >= static_cast<std::ptrdiff_t>(grid)) continue;
                for (std::size_t kc = 0; kc < k; ++kc) {
                    const std::ptrdiff_t sc = static_cast<std::ptrdiff_t>(c + kc) -
                                              static_cast<std::ptrdiff_t>(half);
                    if (sc < 0 || sc >= static_cast<std::ptrdiff_t>(grid)) continue;
                    const std::size_t sidx = static_cast<std::size_t>(sr) * grid +
                                             static_cast<std::size_t>(sc);
                    const double* src = tv.values().data() + sidx * dim;
                    const double* kp = kv.values().data() + (kr * k + kc) * dim;
                    for (std::size_t d = 0; d < dim; ++d) dst[d] += kp[d] * src[d];
                }
            }
        }
    }
    return push(std::move(out));
}

void Tape::backward(Var root) {
    const double seed = 1.0;
    backward(std::span<const Var>(&root, 1), std::span<const double>(&seed, 1));
}

void Tape::backward(std::span<const Var> roots, std::span<const double> seeds) {
    if (roots.size() != seeds.size()) {
        throw ValidationError("backward: roots and seeds must have equal length");
    }
    for (Var r : roots) {
        if (node(r).value.numel() != 1) {
            throw ShapeError("backward root must be a single element, got " +
                             shape_str(node(r).value.shape()));
        }
    }
    for (Node& n : nodes_) {
        n.grad = Tensor(n.value.shape(), 0.0);
    }
    for (std::size_t i = 0; i < roots.size(); ++i) {
        nodes_[roots[i].id].grad[0] += seeds[i];
    }
    for (std::size_t i = nodes_.size(); i-- > 0;) {
        backward_into(nodes_[i]);
    }
}

void Tape::backward_into(const Node& n) {
    switch (n.op) {
        case Op::kLeaf:
            return;
        case Op::kMatmul: {
            const Node& a = nodes_[n.parents[0]];
            Node& am = nodes_[n.parents[0]];
            Node& bm = nodes_[n.parents[1]];
            const std::size_t m = a.value.rows();
            const std::size_t k = a.value.cols();
            const std::size_t cols = n.value.cols();
            // dA += dC * B^T ; dB += A^T * dC
            mm_nt(n.grad.values().data(), bm.value.values().data(), am.grad.values().data(),
                  m, cols, k);
            mm_tn(am.value.values().data(), n.grad.values().data(), bm.grad.values().data(),
                  k, m, cols);
            return;
        }
        case Op::kAdd:
        case Op::kSub:
        case Op::kMul:
        case Op::kDiv: {
            Node& an = nodes_[n.parents[0]];
            Node& bn = nodes_[n.parents[1]];
            const std::size_t cnt = n.value.numel();
            const std::size_t ncols =
                (n.bcast == Broadcast::kARow || n.bcast == Broadcast::kBRow)
                    ? n.value.cols()
                    : 0;
            const double* ap = an.value.values().data();
            const double* bp = bn.value.values().data();
            double* ag = an.grad.values().data();
            double* bg = bn.grad.values().data();
            const double* dz = n.grad.values().data();
            for (std::size_t i = 0; i < cnt; ++i) {
                std::size_t ia, ib;
                switch (n.bcast) {
                    case Broadcast::kSame: ia = i; ib = i; break;
                    case Broadcast::kBScalar: ia = i; ib = 0; break;
                    case Broadcast::kAScalar: ia = 0; ib = i; break;
                    case Broadcast::kBRow: ia = i; ib = i % ncols; break;
                    case Broadcast::kARow: ia = i % ncols; ib = i; break;
                    default: ia = ib = 0; break;
                }
                const double g = dz[i];
                switch (n.op) {
                    case Op::kAdd:
                        ag[ia] += g;
                        bg[ib] += g;
                        break;
                    case Op::kSub:
                        ag[ia] += g;
                        bg[ib] -= g;
                        break;
                    case Op::kMul:
                        ag[ia] += g * bp[ib];
                        bg[ib] += g * ap[ia];
                        break;
                    case Op::kDiv: {
                        const double inv = 1.0 / bp[ib];
                        ag[ia] += g * inv;
                        bg[ib] -= g * ap[ia] * inv * inv;
                        break;
                    }
                    default: break;
                }
            }
            return;
        }
        case Op::kExp:
        case Op::kLog:
        case Op::kSqrt:
        case Op::kNeg:
        case Op::kRelu: {
            Node& an = nodes_[n.parents[0]];
            const double* x = an.value.values().data();
            const double* y = n.value.values().data();
            const double* dz = n.grad.values().data();
            double* ag = an.grad.values().data();
            for (std::size_t i = 0; i < n.value.numel(); ++i) {
                switch (n.op) {
                    case Op::kExp: ag[i] += dz[i] * y[i]; break;
                    case Op::kLog: ag[i] += dz[i] / x[i]; break;
                    case Op::kSqrt: ag[i] += dz[i] * 0.5 / y[i]; break;
                    case Op::kNeg: ag[i] -= dz[i]; break;
                    case Op::kRelu: ag[i] += x[i] > 0.0 ? dz[i] : 0.0; break;
                    default: break;
                }
            }
            return;
        }
        case Op::kSum:
        case Op::kMean:
        case Op::kMax: {
            Node& an = nodes_[n.parents[0]];
            const Tensor& av = an.value;
            double* ag = an.grad.values().data();
            if (n.axis < 0) {
                const double g = n.grad[0];
                if (n.op == Op::kMax) {
                    std::size_t arg = 0;
                    for (std::size_t i = 1; i < av.numel(); ++i) {
                        if (av[i] > av[arg]) arg = i;
                    }
                    ag[arg] += g;
                } else {
                    const double per = n.op == Op::kMean
                                           ? g / static_cast<double>(av.numel())
                                           : g;
                    for (std::size_t i = 0; i < av.numel(); ++i) ag[i] += per;
                }
                return;
            }
            const std::size_t rows = av.rows(), cols = av.cols();
            const std::size_t slices = n.axis == 0 ? cols : rows;
            const std::size_t len = n.axis == 0 ? rows : cols;
            for (std::size_t s = 0; s < slices; ++s) {
                const double g = n.grad[s];
                auto idx = [&](std::size_t t) {
                    return n.axis == 0 ? t * cols + s : s * cols + t;
                };
                if (n.op == Op::kMax) {
                    std::size_t arg = 0;
                    for (std::size_t t = 1; t < len; ++t) {
                        if (av[idx(t)] > av[idx(arg)]) arg = t;
                    }
                    ag[idx(arg)] += g;
                } else {
                    const double per =
                        n.op == Op::kMean ? g / static_cast<double>(len) : g;
                    for (std::size_t t = 0; t < len; ++t) ag[idx(t)] += per;
                }
            }
            return;
        }
        case Op::kSoftmax: {
            Node& an = nodes_[n.parents[0]];
            const Tensor& y = n.value;
            double* ag = an.grad.values().data();
            const double* dz = n.grad.values().data();
            const double* yp = y.values().data();
            auto slice_bw = [&](std::size_t base, std::size_t len, std::size_t stride) {
                double dot = 0.0;
                for (std::size_t i = 0; i < len; ++i) {
                    dot += dz[base + i * stride] * yp[base + i * stride];
                }
                for (std::size_t i = 0; i < len; ++i) {
                    const std::size_t p = base + i * stride;
                    ag[p] += yp[p] * (dz[p] - dot);
                }
            };
            if (y.rank() == 1) {
                slice_bw(0, y.numel(), 1);
            } else if (n.axis == 1) {
                for (std::size_t i = 0; i < y.rows(); ++i) slice_bw(i * y.cols(), y.cols(), 1);
            } else {
                for (std::size_t j = 0; j < y.cols(); ++j) slice_bw(j, y.rows(), y.cols());
            }
            return;
        }
        case Op::kTranspose: {
            Node& an = nodes_[n.parents[0]];
            for (std::size_t i = 0; i < n.value.rows(); ++i) {
                for (std::size_t j = 0; j < n.value.cols(); ++j) {
                    an.grad.at(j, i) += n.grad.at(i, j);
                }
            }
            return;
        }
        case Op::kReshape: {
            Node& an = nodes_[n.parents[0]];
            double* ag = an.grad.values().data();
            const double* dz = n.grad.values().data();
            for (std::size_t i = 0; i < n.value.numel(); ++i) ag[i] += dz[i];
            return;
        }
        case Op::kConcatRows: {
            std::size_t offset = 0;
            const double* dz = n.grad.values().data();
            for (std::uint32_t pid : n.parents) {
                Node& pn = nodes_[pid];
                double* pg = pn.grad.values().data();
                const std::size_t cnt = pn.value.numel();
                for (std::size_t i = 0; i < cnt; ++i) pg[i] += dz[offset + i];
                offset += cnt;
            }
            return;
        }
        case Op::kSliceRows: {
            Node& an = nodes_[n.parents[0]];
            const std::size_t cols = an.value.cols();
            const double* dz = n.grad.values().data();
            double* ag = an.grad.values().data() + n.a0 * cols;
            for (std::size_t i = 0; i < n.value.numel(); ++i) ag[i] += dz[i];
            return;
        }
        case Op::kPadRowsCyclic: {
            Node& an = nodes_[n.parents[0]];
            const std::size_t m = an.value.rows();
            const std::size_t cols = an.value.cols();
            for (std::size_t t = 0; t < n.a0; ++t) {
                const std::size_t src = t < m ? t : (t - m) % m;
                for (std::size_t j = 0; j < cols; ++j) {
                    an.grad.at(src, j) += n.grad.at(t, j);
                }
            }
            return;
        }
        case Op::kLayerNorm: {
            Node& xn = nodes_[n.parents[0]];
            Node& gn = nodes_[n.parents[1]];
            Node& bn = nodes_[n.parents[2]];
            const Tensor& xhat = n.saved[0];
            const Tensor& inv_std = n.saved[1];
            const std::size_t rows = n.value.rows(), dim = n.value.cols();
            const double* gp = gn.value.values().data();
            for (std::size_t i = 0; i < rows; ++i) {
                double mean_dh = 0.0, mean_dh_h = 0.0;
                for (std::size_t j = 0; j < dim; ++j) {
                    const double dh = n.grad.at(i, j) * gp[j];
                    mean_dh += dh;
                    mean_dh_h += dh * xhat.at(i, j);
                }
                mean_dh /= static_cast<double>(dim);
                mean_dh_h /= static_cast<double>(dim);
                const double inv = inv_std[i];
                for (std::size_t j = 0; j < dim; ++j) {
                    const double dy = n.grad.at(i, j);
                    const double dh = dy * gp[j];
                    xn.grad.at(i, j) += inv * (dh - mean_dh - xhat.at(i, j) * mean_dh_h);
                    gn.grad[j] += dy * xhat.at(i, j);
                    bn.grad[j] += dy;
                }
            }
            return;
        }
        case Op::kDepthwiseConv: {
            Node& tn = nodes_[n.parents[0]];
            Node& kn = nodes_[n.parents[1]];
            const std::size_t grid = n.a0;
            const std::size_t k = kn.value.shape()[0];
            const std::size_t dim = n.value.cols();
            const std::size_t half = k / 2;
            for (std::size_t r = 0; r < grid; ++r) {
                for (std::size_t c = 0; c < grid; ++c) {
                    const double* dz = n.grad.values().data() + (r * grid + c) * dim;
                    for (std::size_t kr = 0; kr < k; ++kr) {
                        const std::ptrdiff_t sr = static_cast<std::ptrdiff_t>(r + kr) -
                                                  static_cast<std::ptrdiff_t>(half);
                        if (sr < 0 || sr >= static_cast<std::ptrdiff_t>(grid)) continue;
                        for (std::size_t kc = 0; kc < k; ++kc) {
                            const std::ptrdiff_t sc = static_cast<std::ptrdiff_t>(c + kc) -
                                                      static_cast<std::ptrdiff_t>(half);
                            if (sc < 0 || sc >= static_cast<std::ptrdiff_t>(grid)) continue;
                            const std::size_t sidx = static_cast<std::size_t>(sr) * grid +
                                                     static_cast<std::size_t>(sc);
                            const double* src = tn.value.values().data() + sidx * dim;
                            double* sgrad = tn.grad.values().data() + sidx * dim;
                            const double* kp = kn.value.values().data() + (kr * k + kc) * dim;
                            double* kg = kn.grad.values().data() + (kr * k + kc) * dim;
                            for (std::size_t d = 0; d < dim; ++d) {
                                sgrad[d] += kp[d] * dz[d];
                                kg[d] += src[d] * dz[d];
                            }
                        }
                    }
                }
            }
            return;
        }
    }
}

}  // namespace pgx
