#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>
#include <vector>

#include "lerm/model.hpp"
#include "lerm/risks.hpp"
#include "oracles.hpp"

using namespace lerm;
using lerm::testing::fd_check_params;

namespace {

Matrix random_matrix(Rng& rng, std::size_t r, std::size_t c) {
    Matrix m(r, c);
    for (double& v : m.values()) v = rng.normal();
    return m;
}

void zero_all(MlpModel& m) {
    for (auto& t : tensors(m)) std::fill(t.tensor->values().begin(), t.tensor->values().end(), 0.0);
}

double max_abs(const MlpGradients& g) {
    double worst = 0.0;
    for (const auto& t : tensors(g))
        for (double v : t.tensor->values()) worst = std::max(worst, std::abs(v));
    return worst;
}

}  // namespace

TEST(Init, DeterministicAndHeScaled) {
    const MlpSpec spec{{4, 8, 3}, Activation::relu, 3};
    Rng a(1), b(1);
    const MlpModel m1 = init_model(spec, a);
    const MlpModel m2 = init_model(spec, b);
    EXPECT_EQ(m1.extractor, m2.extractor);
    EXPECT_EQ(m1.classifier, m2.classifier);
    for (double v : m1.extractor[0].bias.values()) EXPECT_EQ(v, 0.0);

    Rng big(2);
    const MlpModel wide = init_model(MlpSpec{{200, 400}, Activation::relu, 2}, big);
    double ss = 0.0;
    for (double v : wide.extractor[0].weight.values()) ss += v * v;
    EXPECT_NEAR(std::sqrt(ss / 80000.0), std::sqrt(2.0 / 200.0), 0.003);
}

TEST(Init, ParameterCount) {
    Rng rng(1);
    const MlpModel m = init_model(MlpSpec{{4, 8, 3}, Activation::relu, 3}, rng);
    EXPECT_EQ(parameter_count(m), 4u * 8 + 8 + 8 * 3 + 3 + 3 * 3 + 3);
}

TEST(Init, InvalidSpec) {
    Rng rng(1);
    EXPECT_THROW((void)init_model(MlpSpec{{}, Activation::relu, 3}, rng), std::invalid_argument);
    EXPECT_THROW((void)init_model(MlpSpec{{3, 0}, Activation::relu, 3}, rng), std::invalid_argument);
}

TEST(Forward, NoHiddenLayersActsOnRawInput) {
    Rng rng(1);
    MlpModel m = init_model(MlpSpec{{2}, Activation::relu, 2}, rng);
    EXPECT_TRUE(m.extractor.empty());
    m.classifier.weight = Matrix::from_rows({{1.0, 0.0}, {0.0, 2.0}});
    const auto f = forward(m, Matrix::from_rows({{3.0, 4.0}}));
    EXPECT_EQ(f.logits, Matrix::from_rows({{3.0, 8.0}}));
}

TEST(Forward, HandSetLayer) {
    Rng rng(1);
    MlpModel m = init_model(MlpSpec{{2, 2}, Activation::relu, 2}, rng);
    m.extractor[0].weight = Matrix::from_rows({{1.0, -1.0}, {2.0, 0.5}});
    m.extractor[0].bias = Matrix::from_rows({{0.0, 0.0}});
    m.classifier.weight = Matrix::identity(2);
    m.classifier.bias = Matrix::from_rows({{0.5, 0.0}});
    // [1, 1]·W = [3, -0.5] → relu [3, 0] → logits [3.5, 0]
    const auto f = forward(m, Matrix::from_rows({{1.0, 1.0}}));
    EXPECT_EQ(f.features, Matrix::from_rows({{3.0, 0.0}}));
    EXPECT_EQ(f.logits, Matrix::from_rows({{3.5, 0.0}}));
    EXPECT_NEAR(f.probs(0, 0), 1.0 / (1.0 + std::exp(-3.5)), 1e-15);
}

TEST(Forward, ZeroWeightsGiveUniform) {
    Rng rng(1);
    MlpModel m = init_model(MlpSpec{{3, 5}, Activation::relu, 4}, rng);
    zero_all(m);
    const auto f = forward(m, random_matrix(rng, 6, 3));
    for (double v : f.probs.matrix().values()) EXPECT_DOUBLE_EQ(v, 0.25);
}

TEST(Forward, RowsSumToOneAndShapeChecked) {
    Rng rng(4);
    const MlpModel m = init_model(MlpSpec{{3, 6, 4}, Activation::leaky_relu, 5}, rng);
    const auto f = forward(m, random_matrix(rng, 9, 3));
    EXPECT_EQ(f.probs.samples(), 9u);
    EXPECT_THROW((void)forward(m, random_matrix(rng, 2, 4)), std::invalid_argument);
    const auto g = forward(m, f.cache.extractor.inputs.front());
    EXPECT_EQ(f.logits, g.logits);
}

TEST(Backward, ZeroUpstreamGivesZero) {
    Rng rng(5);
    const MlpModel m = init_model(MlpSpec{{3, 4, 3}, Activation::relu, 3}, rng);
    const auto f = forward(m, random_matrix(rng, 5, 3));
    EXPECT_EQ(max_abs(backward(m, f.cache, Matrix(5, 3))), 0.0);
}

TEST(Backward, FusedCrossEntropyMatchesChained) {
    Rng rng(6);
    const MlpModel m = init_model(MlpSpec{{3, 4, 3}, Activation::relu, 3}, rng);
    const auto f = forward(m, random_matrix(rng, 7, 3));
    const std::vector<std::size_t> y{0, 1, 2, 0, 1, 2, 2};
    const MlpGradients fused = backward_logits(m, f.cache, cross_entropy_logit_grad(f.cache.probs, y));
    Matrix dprobs(7, 3);
    for (std::size_t i = 0; i < 7; ++i) dprobs(i, y[i]) = -1.0 / (7.0 * f.cache.probs(i, y[i]));
    const MlpGradients chained = backward(m, f.cache, dprobs);
    auto a = tensors(fused);
    auto b = tensors(chained);
    for (std::size_t k = 0; k < a.size(); ++k) EXPECT_LE(max_abs_diff(*a[k].tensor, *b[k].tensor), 1e-10);
}

TEST(Backward, CompositeMatchesFiniteDifferences) {
    for (auto act : {Activation::relu, Activation::leaky_relu}) {
        Rng rng(7);
        const MlpModel m = init_model(MlpSpec{{3, 4, 3}, act, 3}, rng);
        const Matrix xl = random_matrix(rng, 6, 3);
        const Matrix xu = random_matrix(rng, 10, 3);
        const std::vector<std::size_t> y{0, 1, 2, 0, 1, 2};
        const double lambda = 0.7;
        auto loss = [&](const MlpModel& mm) {
            const auto fl = forward(mm, xl);
            const auto fu = forward(mm, xu);
            return cross_entropy(fl.cache.probs, y) +
                   lambda * raw::label_encoding_risk(raw::prediction_means_unlabeled(fu.cache.probs, 1e-12),
                                                     Divergence::l2);
        };
        const auto fl = forward(m, xl);
        const auto fu = forward(m, xu);
        MlpGradients g = backward_logits(m, fl.cache, cross_entropy_logit_grad(fl.cache.probs, y));
        Matrix up = raw::label_encoding_risk_grad(fu.cache.probs, Divergence::l2, 1e-12);
        for (double& v : up.values()) v *= lambda;
        accumulate(g, backward(m, fu.cache, up));
        EXPECT_LT(fd_check_params(m, g, loss), 1e-4) << to_string(act);
    }
}

TEST(Backward, StaleCacheRejected) {
    Rng rng(8);
    MlpModel m = init_model(MlpSpec{{3, 4, 3}, Activation::relu, 3}, rng);
    const auto f = forward(m, random_matrix(rng, 2, 3));
    OptimizerState opt = OptimizerState::sgd(0.1);
    step(m, zeros_like(m), opt);
    EXPECT_THROW((void)backward(m, f.cache, Matrix(2, 3)), std::logic_error);
}

TEST(Optimizer, SgdHandUpdate) {
    Rng rng(1);
    MlpModel m = init_model(MlpSpec{{1}, Activation::relu, 2}, rng);
    zero_all(m);
    MlpGradients g = zeros_like(m);
    g.classifier.weight(0, 0) = 1.0;
    OptimizerState opt = OptimizerState::sgd(0.1, 0.9);
    step(m, g, opt);
    EXPECT_DOUBLE_EQ(m.classifier.weight(0, 0), -0.1);
    step(m, g, opt);  // v = 0.9·1 + 1
    EXPECT_DOUBLE_EQ(m.classifier.weight(0, 0), -0.1 - 0.1 * 1.9);
}

TEST(Optimizer, ZeroGradientLeavesParameters) {
    Rng rng(2);
    for (auto opt : {OptimizerState::sgd(0.1), OptimizerState::adam(0.001)}) {
        MlpModel m = init_model(MlpSpec{{3, 4, 3}, Activation::relu, 3}, rng);
        const MlpModel before = m;
        step(m, zeros_like(m), opt);
        EXPECT_EQ(m.extractor, before.extractor);
        EXPECT_EQ(m.classifier, before.classifier);
    }
}

TEST(Optimizer, AdamFirstStepIsSignedLearningRate) {
    Rng rng(3);
    MlpModel m = init_model(MlpSpec{{1}, Activation::relu, 2}, rng);
    zero_all(m);
    MlpGradients g = zeros_like(m);
    g.classifier.weight(0, 1) = -4.0;
    OptimizerState opt = OptimizerState::adam(0.001);
    step(m, g, opt);
    // m̂ = g, v̂ = g², update = lr·g/(|g| + ε)
    EXPECT_NEAR(m.classifier.weight(0, 1), 0.001 * 4.0 / (4.0 + 1e-8), 1e-15);
}

TEST(Optimizer, DeterministicAcrossCopies) {
    Rng rng(4);
    MlpModel a = init_model(MlpSpec{{3, 4, 3}, Activation::relu, 3}, rng);
    MlpModel b = a;
    MlpGradients g = zeros_like(a);
    for (auto& t : tensors(g))
        for (double& v : t.tensor->values()) v = rng.normal();
    OptimizerState oa = OptimizerState::adam(0.01), ob = OptimizerState::adam(0.01);
    for (int i = 0; i < 5; ++i) {
        step(a, g, oa);
        step(b, g, ob);
    }
    EXPECT_EQ(a.extractor, b.extractor);
    EXPECT_EQ(a.classifier, b.classifier);
}

TEST(Optimizer, NonFiniteGradientNamesParameter) {
    Rng rng(5);
    MlpModel m = init_model(MlpSpec{{3, 4, 3}, Activation::relu, 3}, rng);
    MlpGradients g = zeros_like(m);
    g.extractor[0].bias(0, 2) = NAN;
    OptimizerState opt = OptimizerState::sgd(0.1);
    try {
        step(m, g, opt);
        FAIL() << "expected domain_error";
    } catch (const std::domain_error& e) {
        EXPECT_NE(std::string(e.what()).find("extractor.0.bias"), std::string::npos) << e.what();
    }
}

TEST(Shda, DualExtractorShapesAndFiniteDifferences) {
    Rng rng(6);
    const ShdaModel m = init_shda_model(MlpSpec{{5, 4}, Activation::leaky_relu, 3},
                                        MlpSpec{{2, 4}, Activation::leaky_relu, 3}, rng);
    EXPECT_THROW((void)init_shda_model(MlpSpec{{5, 4}, Activation::leaky_relu, 3},
                                       MlpSpec{{2, 3}, Activation::leaky_relu, 3}, rng),
                 std::invalid_argument);
    const Matrix xs = random_matrix(rng, 6, 5);
    const std::vector<std::size_t> y{0, 1, 2, 2, 1, 0};
    auto loss = [&](const ShdaModel& mm) {
        const auto f = detail::branch_forward(mm.source, Activation::leaky_relu, mm.classifier, xs, mm.revision);
        return cross_entropy(f.cache.probs, y);
    };
    const auto f = detail::branch_forward(m.source, Activation::leaky_relu, m.classifier, xs, m.revision);
    ShdaGradients g = zeros_like(m);
    detail::branch_backward_logits(m.source, Activation::leaky_relu, m.classifier, f.cache,
                                   cross_entropy_logit_grad(f.cache.probs, y), g.source, g.classifier);
    EXPECT_LT(fd_check_params(m, g, loss), 1e-4);
}

TEST(Checkpoint, RoundTripIsExact) {
    Rng rng(9);
    const MlpModel m = init_model(MlpSpec{{3, 5, 4}, Activation::leaky_relu, 3}, rng);
    std::stringstream ss;
    save_checkpoint(ss, m);
    const MlpModel back = load_checkpoint(ss);
    EXPECT_EQ(back.spec, m.spec);
    EXPECT_EQ(back.extractor, m.extractor);
    EXPECT_EQ(back.classifier, m.classifier);

    const ShdaModel s = init_shda_model(MlpSpec{{6, 4}, Activation::leaky_relu, 3},
                                        MlpSpec{{2, 4}, Activation::leaky_relu, 3}, rng);
    std::stringstream ss2;
    save_checkpoint(ss2, s);
    const ShdaModel sb = load_shda_checkpoint(ss2);
    EXPECT_EQ(sb.source, s.source);
    EXPECT_EQ(sb.target, s.target);
    EXPECT_EQ(sb.classifier, s.classifier);
}

TEST(Checkpoint, RejectsMalformed) {
    std::stringstream bad("lerm-checkpoint 9\n");
    EXPECT_THROW((void)load_checkpoint(bad), std::runtime_error);
    std::stringstream truncated("lerm-checkpoint 1\nkind mlp\nactivation relu\nclasses 2\ndims 1 3\ntensor");
    EXPECT_ANY_THROW((void)load_checkpoint(truncated));
}
