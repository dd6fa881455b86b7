#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "support.hpp"
#include "vflhlp/checkpoint.hpp"
#include "vflhlp/nn.hpp"
#include "vflhlp/transport.hpp"

using namespace vflhlp;
using vflhlp::testing::random_block;
using vflhlp::testing::random_labels;
using vflhlp::testing::relu_margin;

namespace {

nn::Mlp identity_mlp(std::size_t n, nn::Activation act) {
    nn::Mlp m;
    m.layers.emplace_back(n, n, act);
    for (std::size_t i = 0; i < n; ++i) m.layers[0].weights(i, i) = 1.0;
    return m;
}

/// Encoder with a single-logit output, resampled until relu units sit away
/// from their kinks on `x`.
nn::Encoder guarded_encoder(const nn::EncoderSpec& spec, const FeatureBlock& x, Rng& rng) {
    for (;;) {
        nn::Encoder enc = nn::make_encoder(spec, rng);
        for (auto& t : enc.embeddings.tables) {
            for (double& v : t.values()) v = rng.uniform(-0.5, 0.5);
        }
        for (auto& l : enc.mlp.layers) {
            for (double& b : l.bias) b = rng.uniform(-0.1, 0.1);
        }
        if (relu_margin(enc, x) > 1e-3) return enc;
    }
}

}  // namespace

TEST(Forward, IdentityLayerPassesInputThrough) {
    const auto m = identity_mlp(3, nn::Activation::identity);
    const Matrix y = nn::forward(m, Matrix::from_rows({{1, 2, 3}}));
    EXPECT_EQ(y, Matrix::from_rows({{1, 2, 3}}));
}

TEST(Forward, ReluClampsNegatives) {
    const auto m = identity_mlp(2, nn::Activation::relu);
    EXPECT_EQ(nn::forward(m, Matrix::from_rows({{-1, 2}})), Matrix::from_rows({{0, 2}}));
}

TEST(Forward, TwoLayerModelMatchesHandEvaluatedChain) {
    Rng rng(11);
    const std::size_t hidden[] = {4};
    const nn::Mlp m = nn::Mlp::make(3, hidden, 2, rng);
    const Matrix x = Matrix::from_rows({{0.3, -1.2, 0.7}, {1.5, 0.2, -0.4}});
    const Matrix y = nn::forward(m, x);
    for (std::size_t n = 0; n < 2; ++n) {
        double h[4];
        for (int o = 0; o < 4; ++o) {
            double s = m.layers[0].bias[o];
            for (int i = 0; i < 3; ++i) s += m.layers[0].weights(o, i) * x(n, i);
            h[o] = s > 0 ? s : 0;
        }
        for (int o = 0; o < 2; ++o) {
            double s = m.layers[1].bias[o];
            for (int i = 0; i < 4; ++i) s += m.layers[1].weights(o, i) * h[i];
            EXPECT_NEAR(y(n, o), s, 1e-15);
        }
    }
}

TEST(Forward, DimensionMismatchIsSchemaError) {
    const auto m = identity_mlp(3, nn::Activation::identity);
    EXPECT_THROW(nn::forward(m, Matrix(2, 4)), SchemaError);
}

TEST(Forward, DeterministicForSameSeed) {
    const nn::EncoderSpec spec{{5, 3}, 4, 2, {6}, 3};
    Rng a(5), b(5), data(9);
    const FeatureBlock x = random_block(7, spec.cardinalities, 2, data);
    const Matrix ya = nn::forward(nn::make_encoder(spec, a), x);
    const Matrix yb = nn::forward(nn::make_encoder(spec, b), x);
    EXPECT_EQ(ya, yb);
}

TEST(Forward, UnseenCategoryUsesReservedRow) {
    const nn::EncoderSpec spec{{3}, 2, 0, {}, 2};
    Rng rng(3);
    const nn::Encoder enc = nn::make_encoder(spec, rng);
    FeatureBlock x(2, 1, 0);
    x.cat(0, 0) = 0;
    x.cat(1, 0) = 99;
    const Matrix e = nn::embed(enc, x);
    EXPECT_EQ(e.row(0)[0], enc.embeddings.tables[0](0, 0));
    EXPECT_EQ(e.row(1)[0], enc.embeddings.tables[0](0, 0));
    EXPECT_EQ(e.row(1)[1], enc.embeddings.tables[0](0, 1));
}

TEST(Backward, IdentityLayerWithUnitUpstream) {
    const auto m = identity_mlp(2, nn::Activation::identity);
    const Matrix x = Matrix::from_rows({{1, 2}, {3, 4}});
    nn::MlpTape tape;
    nn::forward(m, x, &tape);
    const nn::MlpGrad g = nn::backward(m, tape, Matrix(2, 2, 1.0));
    // dW[o][i] = sum_n x[n][i]
    EXPECT_EQ(g.params.layers[0].weights, Matrix::from_rows({{4, 6}, {4, 6}}));
    EXPECT_EQ(g.params.layers[0].bias, (std::vector<double>{2, 2}));
    EXPECT_EQ(g.input, Matrix(2, 2, 1.0));
}

TEST(Backward, ZeroUpstreamGivesZeroGradients) {
    const nn::EncoderSpec spec{{4, 4}, 3, 2, {5}, 3};
    Rng rng(8);
    const nn::Encoder enc = nn::make_encoder(spec, rng);
    const FeatureBlock x = random_block(6, spec.cardinalities, 2, rng);
    nn::EncoderTape tape;
    nn::forward(enc, x, &tape);
    const nn::EncoderGrad g = nn::backward(enc, tape, Matrix(6, 3));
    for (double v : nn::flatten(g.params)) EXPECT_EQ(v, 0.0);
    for (double v : g.input.values()) EXPECT_EQ(v, 0.0);
}

TEST(Backward, UpstreamShapeMismatchIsRejected) {
    const auto m = identity_mlp(2, nn::Activation::identity);
    nn::MlpTape tape;
    nn::forward(m, Matrix(3, 2), &tape);
    EXPECT_THROW(nn::backward(m, tape, Matrix(2, 2)), SchemaError);
}

TEST(Backward, BasisUpstreamsSumToUnitUpstream) {
    const nn::EncoderSpec spec{{4}, 3, 2, {5}, 3};
    Rng rng(21);
    const nn::Encoder enc = nn::make_encoder(spec, rng);
    const FeatureBlock x = random_block(4, spec.cardinalities, 2, rng);
    nn::EncoderTape tape;
    const Matrix y = nn::forward(enc, x, &tape);
    std::vector<double> sum(nn::parameter_count(enc), 0.0);
    for (std::size_t i = 0; i < y.size(); ++i) {
        Matrix e(y.rows(), y.cols());
        e.values()[i] = 1.0;
        const auto g = nn::flatten(nn::backward(enc, tape, e).params);
        for (std::size_t j = 0; j < g.size(); ++j) sum[j] += g[j];
    }
    const auto ones = nn::flatten(nn::backward(enc, tape, Matrix(y.rows(), y.cols(), 1.0)).params);
    for (std::size_t j = 0; j < ones.size(); ++j) EXPECT_NEAR(sum[j], ones[j], 1e-12);
}

TEST(GradCheck, LinearModelBelowOneInAMillion) {
    const nn::EncoderSpec spec{{3, 5}, 2, 3, {}, 1};
    Rng rng(4);
    const FeatureBlock x = random_block(8, spec.cardinalities, 3, rng);
    const auto y = random_labels(8, rng);
    const nn::Encoder enc = guarded_encoder(spec, x, rng);
    EXPECT_LT(nn::grad_check(enc, x, y, 1e-5), 1e-6);
}

TEST(GradCheck, ReluModelsBelowTolerance) {
    Rng rng(17);
    for (int trial = 0; trial < 10; ++trial) {
        const nn::EncoderSpec spec{{3 + rng.below(4), 2 + rng.below(3)}, 3, 1 + rng.below(3), {6, 4}, 1};
        const FeatureBlock x = random_block(6, spec.cardinalities, spec.num_numerical, rng);
        const auto y = random_labels(6, rng);
        const nn::Encoder enc = guarded_encoder(spec, x, rng);
        EXPECT_LT(nn::grad_check(enc, x, y, 1e-5), 1e-4) << "trial " << trial;
    }
}

TEST(GradCheck, DetectsCorruptedGradient) {
    const nn::EncoderSpec spec{{4}, 3, 2, {5}, 1};
    Rng rng(6);
    const FeatureBlock x = random_block(6, spec.cardinalities, 2, rng);
    const auto y = random_labels(6, rng);
    const nn::Encoder enc = guarded_encoder(spec, x, rng);
    const double err = nn::grad_check(enc, x, y, 1e-5, [](std::vector<double>& g) {
        // largest entry doubled so the fault is not hidden by the floor
        auto it = std::max_element(g.begin(), g.end(), [](double a, double b) { return std::abs(a) < std::abs(b); });
        *it *= 2.0;
    });
    EXPECT_GT(err, 1e-1);
}

TEST(Bce, ZeroLogitPositiveLabel) {
    const double logit[] = {0.0};
    const int label[] = {1};
    const auto r = nn::bce_with_logits(logit, label);
    EXPECT_NEAR(r.loss, std::numbers::ln2, 1e-15);
    EXPECT_NEAR(r.grad[0], -0.5, 1e-15);
}

TEST(Bce, SaturatedCorrectPrediction) {
    const double logit[] = {30.0};
    const int label[] = {1};
    const auto r = nn::bce_with_logits(logit, label);
    EXPECT_LT(r.loss, 1e-12);
    EXPECT_LT(std::abs(r.grad[0]), 1e-12);
}

TEST(Bce, MatchesDirectFormula) {
    const double logits[] = {0.2, -0.4};
    const int labels[] = {1, 0};
    const auto r = nn::bce_with_logits(logits, labels);
    const double s0 = 1 / (1 + std::exp(-0.2));
    const double s1 = 1 / (1 + std::exp(0.4));
    EXPECT_NEAR(r.loss, -(std::log(s0) + std::log(1 - s1)) / 2, 1e-15);
    EXPECT_NEAR(r.grad[0], (s0 - 1) / 2, 1e-15);
    EXPECT_NEAR(r.grad[1], s1 / 2, 1e-15);
}

TEST(Bce, PermutationInvariant) {
    Rng rng(2);
    std::vector<double> logits(9);
    for (double& l : logits) l = rng.uniform(-3, 3);
    const auto labels = random_labels(9, rng);
    const auto perm = permutation(9, rng);
    std::vector<double> pl;
    std::vector<int> py;
    for (auto i : perm) {
        pl.push_back(logits[i]);
        py.push_back(labels[i]);
    }
    const auto a = nn::bce_with_logits(logits, labels);
    const auto b = nn::bce_with_logits(pl, py);
    EXPECT_NEAR(a.loss, b.loss, 1e-15);
    for (std::size_t i = 0; i < perm.size(); ++i) EXPECT_EQ(b.grad[i], a.grad[perm[i]]);
}

TEST(Bce, EmptyBatchIsAnError) {
    EXPECT_THROW(nn::bce_with_logits({}, {}), TrainingError);
}

TEST(Adam, ZeroGradientLeavesParametersAndCountsStep) {
    std::vector<double> p = {1.0, -2.0};
    const std::vector<double> g = {0.0, 0.0};
    nn::Optimizer opt({nn::OptimizerKind::adam, 0.01});
    std::span<double> ps[] = {p};
    std::span<const double> gs[] = {g};
    opt.step(ps, gs);
    EXPECT_EQ(p, (std::vector<double>{1.0, -2.0}));
    EXPECT_EQ(opt.steps(), 1u);
}

TEST(Adam, FirstStepMovesByLearningRate) {
    std::vector<double> p = {1.0};
    const std::vector<double> g = {0.5};
    nn::Optimizer opt({nn::OptimizerKind::adam, 0.01});
    std::span<double> ps[] = {p};
    std::span<const double> gs[] = {g};
    opt.step(ps, gs);
    EXPECT_NEAR(p[0], 0.99, 1e-9);
}

TEST(Adam, TwoStepsMatchHandUnrolledRecurrence) {
    const double lr = 0.05, b1 = 0.9, b2 = 0.999, eps = 1e-8;
    std::vector<double> p = {0.3};
    const std::vector<double> g = {-1.7};
    nn::Optimizer opt({nn::OptimizerKind::adam, lr, b1, b2, eps});
    std::span<double> ps[] = {p};
    std::span<const double> gs[] = {g};
    double x = 0.3, m = 0, v = 0;
    for (int t = 1; t <= 2; ++t) {
        opt.step(ps, gs);
        m = b1 * m + (1 - b1) * g[0];
        v = b2 * v + (1 - b2) * g[0] * g[0];
        x -= lr * (m / (1 - std::pow(b1, t))) / (std::sqrt(v / (1 - std::pow(b2, t))) + eps);
        EXPECT_DOUBLE_EQ(p[0], x);
    }
}

TEST(Adam, NonFiniteGradientFailsFast) {
    std::vector<double> p = {1.0};
    const std::vector<double> g = {NAN};
    nn::Optimizer opt;
    std::span<double> ps[] = {p};
    std::span<const double> gs[] = {g};
    EXPECT_THROW(opt.step(ps, gs), TrainingError);
    EXPECT_EQ(p[0], 1.0);
    EXPECT_EQ(opt.steps(), 0u);
}

TEST(Sgd, PlainGradientStep) {
    std::vector<double> p = {1.0, 2.0};
    const std::vector<double> g = {0.5, -1.0};
    nn::Optimizer opt({nn::OptimizerKind::sgd, 0.1});
    std::span<double> ps[] = {p};
    std::span<const double> gs[] = {g};
    opt.step(ps, gs);
    EXPECT_DOUBLE_EQ(p[0], 1.0 - 0.1 * 0.5);
    EXPECT_DOUBLE_EQ(p[1], 2.0 + 0.1);
}

TEST(Checkpoint, BitExactRoundTrip) {
    const nn::EncoderSpec spec{{6, 2}, 4, 3, {7}, 5};
    Rng rng(31);
    nn::Encoder enc = nn::make_encoder(spec, rng);
    enc.mlp.layers[0].weights(0, 0) = 0.1 + 0.2;  // not representable in short decimal
    enc.mlp.layers[0].bias[1] = -1e-300;
    Checkpoint ckpt;
    ckpt.tags["party"] = "2";
    append_tensors(ckpt, enc, "encoder.");
    const Checkpoint back = parse_checkpoint(serialize_checkpoint(ckpt));
    EXPECT_EQ(back, ckpt);
    nn::Encoder loaded = nn::make_encoder(spec, rng);
    load_tensors(back, loaded, "encoder.");
    EXPECT_EQ(loaded, enc);
}

TEST(Checkpoint, MissingTensorIsReported) {
    const nn::EncoderSpec spec{{3}, 2, 0, {}, 2};
    Rng rng(1);
    nn::Encoder enc = nn::make_encoder(spec, rng);
    Checkpoint empty;
    EXPECT_THROW(load_tensors(empty, enc, "encoder."), DataError);
}

TEST(Wire, EncodeDecodeRoundTrip) {
    WireMessage m;
    m.round = 77;
    m.direction = Direction::downstream;
    m.party = 3;
    m.kind = MessageKind::gradient;
    m.values = Matrix::from_rows({{1.5, -0.0}, {1e-310, 3.0}});
    const auto bytes = encode_wire(m);
    EXPECT_EQ(bytes.size(), 4u + 1 + 1 + 1 + 4 + 4 + 4 * 8);
    EXPECT_EQ(decode_wire(bytes), m);
}
