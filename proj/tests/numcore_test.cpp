#include <random>

#include <gtest/gtest.h>

#include "l0sign/numcore.hpp"

using namespace l0sign;

namespace {

Matrix random_matrix(std::size_t r, std::size_t c, std::mt19937_64& rng) {
    std::normal_distribution<double> n(0.0, 1.0);
    Matrix m(r, c);
    for (double& v : m.values()) v = n(rng);
    return m;
}

Vector random_vector(std::size_t n, std::mt19937_64& rng) {
    std::normal_distribution<double> d(0.0, 1.0);
    Vector v(n);
    for (double& x : v) x = d(rng);
    return v;
}

} // namespace

TEST(Linear, IdentityAndHandArithmetic) {
    EXPECT_EQ(linear(Matrix::identity(2), Vector{3, 4}, Vector{0, 0}), (Vector{3, 4}));
    const Matrix W(2, 2, {1, 2, 0, 1});
    EXPECT_EQ(linear(W, Vector{1, 1}, Vector{1, 0}), (Vector{4, 1}));
}

TEST(Linear, MatchesNaiveTripleLoop) {
    std::mt19937_64 rng(11);
    for (int trial = 0; trial < 20; ++trial) {
        const std::size_t r = 1 + rng() % 7, c = 1 + rng() % 7;
        const Matrix W = random_matrix(r, c, rng);
        const Vector x = random_vector(c, rng), b = random_vector(r, rng);
        const Vector got = linear(W, x, b);
        // naive reference: treat x as a c x 1 matrix
        for (std::size_t i = 0; i < r; ++i) {
            double ref = 0.0;
            for (std::size_t k = 0; k < c; ++k) {
                for (std::size_t j = 0; j < 1; ++j) ref += W(i, k) * x[k + j];
            }
            EXPECT_NEAR(got[i], ref + b[i], 1e-12);
        }
    }
}

TEST(Linear, ShapeMismatchNamesBothShapes) {
    try {
        linear(Matrix(2, 3), Vector{1, 2}, Vector{0, 0});
        FAIL() << "expected shape error";
    } catch (const Error& e) {
        EXPECT_NE(std::string(e.what()).find("(2x3)"), std::string::npos);
        EXPECT_NE(std::string(e.what()).find("x (2)"), std::string::npos);
    }
    EXPECT_THROW(linear(Matrix(2, 2), Vector{1, 2}, Vector{0}), Error);
}

TEST(ElementwiseProduct, Basics) {
    EXPECT_EQ(elementwise_product(Vector{1, 2}, Vector{3, 4}), (Vector{3, 8}));
    EXPECT_EQ(elementwise_product(Vector{1.5, -2}, Vector{0, 0}), (Vector{0, 0}));
    EXPECT_THROW(elementwise_product(Vector{1}, Vector{1, 2}), Error);

    std::mt19937_64 rng(3);
    const auto a = random_vector(9, rng), b = random_vector(9, rng);
    EXPECT_EQ(elementwise_product(a, b), elementwise_product(b, a));
}

TEST(Activations, ReluSigmoidMean) {
    EXPECT_EQ(relu(Vector{-1, 0, 2}), (Vector{0, 0, 2}));
    EXPECT_DOUBLE_EQ(sigmoid(0.0), 0.5);
    EXPECT_NEAR(sigmoid(-40.0), std::exp(-40.0), 1e-30);
    EXPECT_NEAR(sigmoid(40.0), 1.0, 1e-16);
    EXPECT_EQ(sigmoid(-800.0), 0.0);
    EXPECT_EQ(sigmoid(800.0), 1.0);

    const std::vector<Vector> vs{{1, 1}, {3, 3}};
    EXPECT_EQ(reduce_mean(vs), (Vector{2, 2}));
    EXPECT_THROW(reduce_mean(std::span<const Vector>{}), Error);
}

TEST(Activations, ReduceMeanOfCopiesIsExact) {
    std::mt19937_64 rng(5);
    for (std::size_t n = 1; n <= 16; ++n) {
        const Vector v = random_vector(6, rng);
        EXPECT_EQ(reduce_mean(std::vector<Vector>(n, v)), v) << n;
    }
}

TEST(Backward, ElementaryRules) {
    EXPECT_DOUBLE_EQ(sigmoid_backward(sigmoid(0.0), 1.0), 0.25);
    const Vector a{1, -2, 3}, b{4, 5, -6}, g{0.5, 1, 2};
    EXPECT_EQ(elementwise_product_backward(b, g), elementwise_product(g, b));
    EXPECT_EQ(relu_backward(Vector{-1, 0, 2}, Vector{1, 1, 1}), (Vector{0, 0, 1}));
    EXPECT_EQ(reduce_mean_backward(4, Vector{4, 8}), (Vector{1, 2}));
}

TEST(Backward, LinearMatchesFiniteDifferences) {
    std::mt19937_64 rng(17);
    const Matrix W = random_matrix(3, 4, rng);
    const Vector x = random_vector(4, rng), b = random_vector(3, rng), up = random_vector(3, rng);
    Matrix dW(3, 4);
    Vector db(3, 0.0);
    const Vector dx = linear_backward(W, x, up, dW, db);

    auto objective = [&](const Matrix& w, const Vector& xx, const Vector& bb) {
        return dot(linear(w, xx, bb), up);
    };
    const double h = 1e-6;
    for (std::size_t i = 0; i < 4; ++i) {
        Vector xp = x, xm = x;
        xp[i] += h;
        xm[i] -= h;
        EXPECT_NEAR(dx[i], (objective(W, xp, b) - objective(W, xm, b)) / (2 * h), 1e-8);
    }
    for (std::size_t r = 0; r < 3; ++r) {
        for (std::size_t c = 0; c < 4; ++c) {
            Matrix wp = W, wm = W;
            wp(r, c) += h;
            wm(r, c) -= h;
            EXPECT_NEAR(dW(r, c), (objective(wp, x, b) - objective(wm, x, b)) / (2 * h), 1e-8);
        }
        EXPECT_DOUBLE_EQ(db[r], up[r]);
    }
}

TEST(ParamStore, GradientShapesTrackParameters) {
    ParamStore s;
    s.add("w", Matrix(3, 2, 1.0));
    s.add("b", Matrix(3, 1));
    EXPECT_THROW(s.add("w", Matrix(1, 1)), Error);
    EXPECT_EQ(s.scalar_count(), 9u);
    for (std::size_t i = 0; i < s.count(); ++i) {
        EXPECT_EQ(s.grad(i).rows(), s.value(i).rows());
        EXPECT_EQ(s.grad(i).cols(), s.value(i).cols());
    }
    s.grad(0)(1, 1) = 5.0;
    ParamStore t = s;
    s.accumulate_grad(t, 2.0);
    EXPECT_DOUBLE_EQ(s.grad(0)(1, 1), 15.0);
    s.zero_grad();
    EXPECT_DOUBLE_EQ(s.grad(0)(1, 1), 0.0);
    EXPECT_EQ(s.index_of("b"), 1u);
    EXPECT_THROW(s.index_of("nope"), Error);
}
