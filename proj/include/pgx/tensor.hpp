#pragma once

#include <cstddef>
#include <string>
#include <vector>

namespace pgx {

using Shape = std::vector<std::size_t>;

std::string shape_str(const Shape& s);
std::size_t shape_numel(const Shape& s);

// Dense row-major array of 64-bit floats. Rank 1 and 2 cover almost all
// uses; convolution kernels are rank 3 (k x k x channels).
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(Shape shape, double fill = 0.0);
    Tensor(Shape shape, std::vector<double> values);

    static Tensor scalar(double v);
    static Tensor row(std::vector<double> v);  // 1 x n
    static Tensor matrix(std::size_t rows, std::size_t cols,
                         std::vector<double> values);

    const Shape& shape() const { return shape_; }
    std::size_t rank() const { return shape_.size(); }
    std::size_t numel() const { return values_.size(); }
    bool empty() const { return values_.empty(); }

    // rank-2 accessors
    std::size_t rows() const;
    std::size_t cols() const;
    double& at(std::size_t i, std::size_t j);
    double at(std::size_t i, std::size_t j) const;

    double& operator[](std::size_t i) { return values_[i]; }
    double operator[](std::size_t i) const { return values_[i]; }

    bool is_scalar() const { return values_.size() == 1; }
    double scalar_value() const;

    std::vector<double>& values() { return values_; }
    const std::vector<double>& values() const { return values_; }

    bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }
    bool all_finite() const;

private:
    Shape shape_;
    std::vector<double> values_;
};

}  // namespace pgx
