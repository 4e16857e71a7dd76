#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <vector>

#include "lerm/numerics.hpp"

using namespace lerm;

TEST(Softmax, HandValues) {
    const Matrix p = softmax_rows(Matrix::from_rows({{0.0, 0.0}}));
    EXPECT_DOUBLE_EQ(p(0, 0), 0.5);
    EXPECT_DOUBLE_EQ(p(0, 1), 0.5);

    const Matrix big = softmax_rows(Matrix::from_rows({{1000.0, 1000.0, 1000.0}}));
    for (std::size_t j = 0; j < 3; ++j) EXPECT_NEAR(big(0, j), 1.0 / 3.0, 1e-15);

    const Matrix q = softmax_rows(Matrix::from_rows({{std::log(1.0), std::log(3.0)}}));
    EXPECT_NEAR(q(0, 0), 0.25, 1e-15);
    EXPECT_NEAR(q(0, 1), 0.75, 1e-15);
}

TEST(Softmax, RowsSumToOneOnRandomLogits) {
    Rng rng(7);
    for (int trial = 0; trial < 1000; ++trial) {
        Matrix logits(4, 6);
        for (double& v : logits.values()) v = -50.0 + 100.0 * rng.uniform();
        const Matrix p = softmax_rows(logits);
        for (std::size_t i = 0; i < p.rows(); ++i) {
            double s = 0.0;
            for (double v : p.row(i)) {
                EXPECT_GE(v, 0.0);
                EXPECT_LE(v, 1.0);
                s += v;
            }
            ASSERT_NEAR(s, 1.0, 1e-12);
        }
    }
}

TEST(Softmax, ShiftInvariance) {
    Rng rng(11);
    for (int trial = 0; trial < 200; ++trial) {
        Matrix logits(3, 5);
        for (double& v : logits.values()) v = -50.0 + 100.0 * rng.uniform();
        Matrix shifted = logits;
        for (std::size_t i = 0; i < 3; ++i) {
            const double c = -20.0 + 40.0 * rng.uniform();
            for (std::size_t j = 0; j < 5; ++j) shifted(i, j) += c;
        }
        EXPECT_LE(max_abs_diff(softmax_rows(logits), softmax_rows(shifted)), 1e-12);
    }
}

TEST(Softmax, NeverNegativeUnderUnderflow) {
    const Matrix p = softmax_rows(Matrix::from_rows({{0.0, -2000.0, 800.0}}));
    EXPECT_EQ(p(0, 0), 0.0);
    EXPECT_EQ(p(0, 1), 0.0);
    EXPECT_FALSE(std::signbit(p(0, 1)));
    EXPECT_EQ(p(0, 2), 1.0);
}

TEST(Softmax, RejectsNonFinite) {
    EXPECT_THROW((void)softmax_rows(Matrix::from_rows({{0.0, NAN}})), NonFiniteError);
    EXPECT_THROW((void)softmax_rows(Matrix::from_rows({{INFINITY, 0.0}})), NonFiniteError);
}

TEST(Matmul, HandValues) {
    const Matrix a = Matrix::from_rows({{1.0, 2.0}});
    const Matrix b = Matrix::from_rows({{3.0}, {4.0}});
    const Matrix c = matmul(a, b);
    ASSERT_EQ(c.rows(), 1u);
    ASSERT_EQ(c.cols(), 1u);
    EXPECT_EQ(c(0, 0), 11.0);
}

TEST(Matmul, IdentityAndZero) {
    Rng rng(3);
    Matrix m(3, 4);
    for (double& v : m.values()) v = rng.normal();
    EXPECT_EQ(matmul(Matrix::identity(3), m), m);
    EXPECT_EQ(matmul(Matrix(2, 3), m), Matrix(2, 4));
}

TEST(Matmul, DimensionMismatch) {
    EXPECT_THROW((void)matmul(Matrix(2, 3), Matrix(2, 3)), std::invalid_argument);
}

TEST(Matmul, Associativity) {
    Rng rng(5);
    for (int trial = 0; trial < 100; ++trial) {
        Matrix a(4, 4), b(4, 4), c(4, 4);
        for (auto* m : {&a, &b, &c})
            for (double& v : m->values()) v = rng.normal();
        EXPECT_LE(max_abs_diff(matmul(matmul(a, b), c), matmul(a, matmul(b, c))), 1e-9);
    }
}

TEST(Matmul, TransposedVariantsAgree) {
    Rng rng(9);
    Matrix a(3, 4), b(3, 5), c(5, 4);
    for (auto* m : {&a, &b, &c})
        for (double& v : m->values()) v = rng.normal();
    EXPECT_LE(max_abs_diff(matmul_tn(a, b), matmul(transpose(a), b)), 1e-14);
    EXPECT_LE(max_abs_diff(matmul_nt(a, c), matmul(a, transpose(c))), 1e-14);
}

TEST(MatrixType, ShapeValidation) {
    EXPECT_THROW(Matrix(2, 2, std::vector<double>(3)), std::invalid_argument);
    EXPECT_THROW((void)Matrix::from_rows({{1.0, 2.0}, {3.0}}), std::invalid_argument);
    const Matrix g = gather_rows(Matrix::from_rows({{1.0}, {2.0}, {3.0}}), std::vector<std::size_t>{2, 0});
    EXPECT_EQ(g, Matrix::from_rows({{3.0}, {1.0}}));
}

TEST(DrawNormal, ZeroStdIsConstant) {
    Rng rng(1);
    const Matrix x = draw_normal(rng, 50, 2.5, 0.0);
    for (double v : x.values()) EXPECT_EQ(v, 2.5);
}

TEST(DrawNormal, SameSeedSameDraws) {
    Rng a(42), b(42);
    EXPECT_EQ(draw_normal(a, 100, 0.0, 1.0), draw_normal(b, 100, 0.0, 1.0));
}

TEST(DrawNormal, SampleMeanSmokeTest) {
    Rng rng(1);
    const Matrix x = draw_normal(rng, 100000, 0.0, 1.0);
    const double mean = std::accumulate(x.values().begin(), x.values().end(), 0.0) / 1e5;
    EXPECT_GT(mean, -0.05);
    EXPECT_LT(mean, 0.05);
    EXPECT_LT(std::abs(mean), 5.0 / std::sqrt(1e5));
}

TEST(DrawNormal, NegativeStdRejected) {
    Rng rng(1);
    EXPECT_THROW((void)draw_normal(rng, 3, 0.0, -1.0), std::invalid_argument);
}

TEST(RngTest, ReproducibleAndSplittable) {
    Rng a(123), b(123);
    for (int i = 0; i < 1000; ++i) ASSERT_EQ(a.next_u64(), b.next_u64());
    Rng root(5);
    Rng s1 = root.split(1), s1b = root.split(1), s2 = root.split(2);
    EXPECT_EQ(s1.next_u64(), s1b.next_u64());
    EXPECT_NE(root.split(1).next_u64(), s2.next_u64());
    EXPECT_NE(derive_seed(5, 1), derive_seed(5, 2));
}

TEST(RngTest, KnownFirstDraws) {
    // Pinned values: a generator change is a breaking change for every seeded artifact.
    Rng rng(0);
    const std::uint64_t first = rng.next_u64();
    Rng again(0);
    EXPECT_EQ(first, again.next_u64());
    std::uint64_t sm = 0;
    EXPECT_EQ(splitmix64(sm), 0xE220A8397B1DCDAFULL);
}

TEST(RngTest, UniformRangeAndBelow) {
    Rng rng(8);
    std::vector<int> counts(5, 0);
    for (int i = 0; i < 50000; ++i) {
        const double u = rng.uniform();
        ASSERT_GE(u, 0.0);
        ASSERT_LT(u, 1.0);
        ++counts[rng.below(5)];
    }
    for (int c : counts) EXPECT_NEAR(c / 50000.0, 0.2, 0.01);
}

TEST(RngTest, ShuffleIsPermutation) {
    Rng rng(4);
    std::vector<int> v(100);
    std::iota(v.begin(), v.end(), 0);
    rng.shuffle(v);
    std::vector<int> sorted = v;
    std::sort(sorted.begin(), sorted.end());
    for (int i = 0; i < 100; ++i) EXPECT_EQ(sorted[i], i);
}

TEST(Dirichlet, RowsOnSimplex) {
    Rng rng(2);
    const Matrix p = draw_dirichlet_rows(rng, 200, 4);
    for (std::size_t i = 0; i < p.rows(); ++i) {
        double s = 0.0;
        for (double v : p.row(i)) {
            EXPECT_GE(v, 0.0);
            s += v;
        }
        EXPECT_NEAR(s, 1.0, 1e-12);
    }
}
