#include "pgx/tensor.hpp"

#include <cmath>
#include <sstream>

#include "pgx/errors.hpp"

namespace pgx {

std::string shape_str(const Shape& s) {
    std::ostringstream out;
    out << '[';
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (i) out << 'x';
        out << s[i];
    }
    out << ']';
    return out.str();
}

std::size_t shape_numel(const Shape& s) {
    std::size_t n = 1;
    for (std::size_t d : s) n *= d;
    return n;
}

namespace {

void check_shape(const Shape& s) {
    if (s.empty()) throw ShapeError("tensor shape must have rank >= 1");
    for (std::size_t d : s) {
        if (d == 0) throw ShapeError("tensor dimensions must be positive, got " + shape_str(s));
    }
}

}  // namespace

Tensor::Tensor(Shape shape, double fill) : shape_(std::move(shape)) {
    check_shape(shape_);
    values_.assign(shape_numel(shape_), fill);
}

Tensor::Tensor(Shape shape, std::vector<double> values)
    : shape_(std::move(shape)), values_(std::move(values)) {
    check_shape(shape_);
    if (values_.size() != shape_numel(shape_)) {
        throw ShapeError("value count " + std::to_string(values_.size()) +
                         " does not match shape " + shape_str(shape_));
    }
}

Tensor Tensor::scalar(double v) { return Tensor({1}, std::vector<double>{v}); }

Tensor Tensor::row(std::vector<double> v) {
    const std::size_t n = v.size();
    return Tensor({1, n}, std::move(v));
}

Tensor Tensor::matrix(std::size_t rows, std::size_t cols, std::vector<double> values) {
    return Tensor({rows, cols}, std::move(values));
}

std::size_t Tensor::rows() const {
    if (rank() != 2) throw ShapeError("rows() requires rank 2, got " + shape_str(shape_));
    return shape_[0];
}

std::size_t Tensor::cols() const {
    if (rank() != 2) throw ShapeError("cols() requires rank 2, got " + shape_str(shape_));
    return shape_[1];
}

double& Tensor::at(std::size_t i, std::size_t j) { return values_[i * cols() + j]; }

double Tensor::at(std::size_t i, std::size_t j) const { return values_[i * cols() + j]; }

double Tensor::scalar_value() const {
    if (!is_scalar()) {
        throw ShapeError("expected a scalar tensor, got " + shape_str(shape_));
    }
    return values_[0];
}

bool Tensor::all_finite() const {
    for (double v : values_) {
        if (!std::isfinite(v)) return false;
    }
    return true;
}

}  // namespace pgx
