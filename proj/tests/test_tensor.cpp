#include <doctest.h>

#include <limits>
#include <string>
#include <vector>

#include "pgx/errors.hpp"
#include "pgx/tensor.hpp"

using pgx::Shape;
using pgx::Tensor;

TEST_CASE("tensor construction and accessors") {
    Tensor m = Tensor::matrix(2, 3, {1, 2, 3, 4, 5, 6});
    CHECK(m.rank() == 2);
    CHECK(m.rows() == 2);
    CHECK(m.cols() == 3);
    CHECK(m.numel() == 6);
    CHECK(m.at(1, 2) == 6.0);

    Tensor fill(Shape{4}, 2.5);
    for (std::size_t i = 0; i < 4; ++i) CHECK(fill[i] == 2.5);

    Tensor s = Tensor::scalar(-3.0);
    CHECK(s.is_scalar());
    CHECK(s.scalar_value() == -3.0);

    Tensor r = Tensor::row({7, 8});
    CHECK(r.shape() == Shape{1, 2});
}

TEST_CASE("tensor rejects malformed shapes") {
    CHECK_THROWS_AS(Tensor(Shape{}), pgx::ShapeError);
    CHECK_THROWS_AS(Tensor(Shape{2, 0}), pgx::ShapeError);
    CHECK_THROWS_AS(Tensor(Shape{2, 2}, {1.0, 2.0, 3.0}), pgx::ShapeError);
    CHECK_THROWS_AS(Tensor::matrix(2, 2, {1.0}), pgx::ShapeError);
}

TEST_CASE("shape error messages name the offending shapes") {
    try {
        Tensor(Shape{2, 2}, std::vector<double>{1.0});
        FAIL("expected a shape error");
    } catch (const pgx::ShapeError& e) {
        const std::string msg = e.what();
        CHECK(msg.find("[2x2]") != std::string::npos);
        CHECK(msg.find("count 1") != std::string::npos);
    }
}

TEST_CASE("rank guards on 2-d accessors") {
    Tensor v(Shape{3}, 1.0);
    CHECK_THROWS_AS((void)v.rows(), pgx::ShapeError);
    CHECK_THROWS_AS((void)v.at(0, 0), pgx::ShapeError);
}

TEST_CASE("all_finite flags NaN and infinity") {
    Tensor t(Shape{2}, 0.0);
    CHECK(t.all_finite());
    t[0] = std::numeric_limits<double>::quiet_NaN();
    CHECK_FALSE(t.all_finite());
    t[0] = std::numeric_limits<double>::infinity();
    CHECK_FALSE(t.all_finite());
}
