#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <sstream>

#include "nflow/flow_head.hpp"
#include "test_support.hpp"

namespace nflow {
namespace {

using testing::random_slice;

MlpWeights random_weights(std::mt19937_64 &rng, std::uint32_t dim, std::uint32_t hidden, double scale = 0.5) {
    EncoderConfig cfg;
    cfg.dim = dim;
    auto w = MlpWeights::zeros(generate_bases(cfg), hidden);
    std::normal_distribution<double> n(0.0, scale);
    for (auto *v : {&w.w1, &w.b1, &w.w2, &w.b2}) {
        for (double &x : *v) {
            x = n(rng);
        }
    }
    return w;
}

std::vector<double> random_features(std::mt19937_64 &rng, std::size_t n) {
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    std::vector<double> f(n);
    for (double &x : f) {
        x = u(rng);
    }
    return f;
}

TEST(EmbedToFeatures, Layout) {
    Embedding<double> ones{{{1, 0}, {1, 0}}, 1};
    EXPECT_EQ(embed_to_features(ones), (std::vector<double>{1, 1, 0, 0}));
    Embedding<float> is{{{0, 1}, {0, 1}}, 1};
    EXPECT_EQ(embed_to_features(is), (std::vector<double>{0, 0, 1, 1}));
    Embedding<double> z{{{0.25, 0.5}, {-1, 2}}, 3};
    auto conj = z;
    for (auto &v : conj.values) {
        v = std::conj(v);
    }
    const auto a = embed_to_features(z);
    const auto b = embed_to_features(conj);
    EXPECT_EQ(a[0], b[0]);
    EXPECT_EQ(a[1], b[1]);
    EXPECT_EQ(a[2], -b[2]);
    EXPECT_EQ(a[3], -b[3]);
}

TEST(MlpForward, BiasPassthrough) {
    EncoderConfig cfg;
    cfg.dim = 4;
    auto w = MlpWeights::zeros(generate_bases(cfg), 8);
    w.b2 = {0.5, -0.25};
    std::mt19937_64 rng(1);
    for (int i = 0; i < 5; ++i) {
        EXPECT_EQ(mlp_forward(w, random_features(rng, 8)), (FlowVector{0.5, -0.25}));
    }
    EXPECT_THROW(mlp_forward(w, std::vector<double>(7)), DimensionMismatch);
}

TEST(MlpForward, DeadUnitsGiveBias) {
    std::mt19937_64 rng(2);
    auto w = random_weights(rng, 3, 6);
    for (double &x : w.w1) {
        x = -std::abs(x);
    }
    std::fill(w.b1.begin(), w.b1.end(), 0.0);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::vector<double> f(6);
    for (double &x : f) {
        x = u(rng);
    }
    const auto out = mlp_forward(w, f);
    EXPECT_EQ(out.x, w.b2[0]);
    EXPECT_EQ(out.y, w.b2[1]);
}

double max_rel(const std::vector<double> &a, const std::vector<double> &b) {
    double num = 0.0;
    double den = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        num = std::max(num, std::abs(a[i] - b[i]));
        den = std::max(den, std::abs(b[i]));
    }
    return num / std::max(den, 1e-12);
}

TEST(MlpForward, InputGradientMatchesFiniteDifferences) {
    std::mt19937_64 rng(3);
    const double h = 1e-5;
    for (int trial = 0; trial < 20; ++trial) {
        const auto w = random_weights(rng, 5, 12);
        auto f = random_features(rng, 10);
        const auto grad = mlp_input_gradient(w, f);
        std::array<std::vector<double>, 2> fd{std::vector<double>(10), std::vector<double>(10)};
        for (std::size_t i = 0; i < f.size(); ++i) {
            const double keep = f[i];
            f[i] = keep + h;
            const auto plus = mlp_forward(w, f);
            f[i] = keep - h;
            const auto minus = mlp_forward(w, f);
            f[i] = keep;
            fd[0][i] = (plus.x - minus.x) / (2 * h);
            fd[1][i] = (plus.y - minus.y) / (2 * h);
        }
        EXPECT_LT(max_rel(grad[0], fd[0]), 1e-4);
        EXPECT_LT(max_rel(grad[1], fd[1]), 1e-4);
    }
}

TEST(FlowLoss, ZeroOnConstraintCircle) {
    const FlowLoss loss{0.1, 0.0, 1e-8};
    const FlowVector u{3.0, -4.0};
    EXPECT_EQ(loss.sample(u, u, nullptr), 0.0);
    EXPECT_EQ(loss.sample({0, 0}, u, nullptr), 0.0);
    // n = (u + R90 u)/2 lies on the circle with diameter u.
    EXPECT_NEAR(loss.sample({(3.0 + 4.0) / 2, (-4.0 + 3.0) / 2}, u, nullptr), 0.0, 1e-30);
    const FlowLoss margin{0.1, 1.0, 1e-8};
    EXPECT_NEAR(margin.sample({0, 0}, u, nullptr), 0.1, 1e-15);
}

TEST(FlowLoss, ParameterGradientsMatchFiniteDifferences) {
    std::mt19937_64 rng(4);
    const double h = 1e-5;
    for (int trial = 0; trial < 10; ++trial) {
        auto w = random_weights(rng, 3, 5);
        std::vector<TrainingSample> samples;
        std::normal_distribution<double> n(0.0, 1.0);
        for (int i = 0; i < 6; ++i) {
            samples.push_back({random_features(rng, 6), {n(rng), n(rng)}});
        }
        std::vector<const TrainingSample *> batch;
        for (const auto &s : samples) {
            batch.push_back(&s);
        }
        const FlowLoss loss{0.1, 0.8, 1e-8};
        auto g = MlpGradients::zeros_like(w);
        batch_loss(w, batch, loss, &g, 1 + trial % 3);
        auto check = [&](std::vector<double> &param, const std::vector<double> &analytic) {
            std::vector<double> fd(param.size());
            for (std::size_t i = 0; i < param.size(); ++i) {
                const double keep = param[i];
                param[i] = keep + h;
                const double lp = batch_loss(w, batch, loss, nullptr);
                param[i] = keep - h;
                const double lm = batch_loss(w, batch, loss, nullptr);
                param[i] = keep;
                fd[i] = (lp - lm) / (2 * h);
            }
            EXPECT_LT(max_rel(analytic, fd), 1e-4);
        };
        check(w.w1, g.w1);
        check(w.b1, g.b1);
        check(w.w2, g.w2);
        check(w.b2, g.b2);
    }
}

TEST(Weights, BinaryRoundTripAndErrors) {
    std::mt19937_64 rng(5);
    auto w = random_weights(rng, 4, 3);
    w.round_to_storage();
    std::stringstream buf;
    write_weights(buf, w);
    const std::size_t bases_bytes = 16 + 3 * 4 * 8;
    const std::size_t params = 3 * 8 + 3 + 2 * 3 + 2;
    EXPECT_EQ(buf.str().size(), 4 + 4 + 4 + 4 + 1 + 1 + bases_bytes + 4 * params);
    const auto back = read_weights(buf);
    EXPECT_EQ(back.w1, w.w1);
    EXPECT_EQ(back.b2, w.b2);
    EXPECT_EQ(back.bases, w.bases);
    EXPECT_EQ(back.hidden, 3u);

    std::string bytes = buf.str();
    std::string bad_act = bytes;
    bad_act[16] = 7;
    std::istringstream s1(bad_act);
    EXPECT_THROW(read_weights(s1), ParseError);
    std::istringstream s2(bytes.substr(0, bytes.size() - 1));
    EXPECT_THROW(read_weights(s2), ParseError);

    w.w1[0] = std::nan("");
    EXPECT_THROW(w.validate(), std::invalid_argument);
}

TEST(PredictFlows, ExamplesAndErrors) {
    EncoderConfig cfg;
    cfg.dim = 8;
    cfg.delta_x = cfg.delta_y = 2;
    auto w = MlpWeights::zeros(generate_bases(cfg), 4);
    w.b2 = {1.0, 0.0};
    const EventSlice one({{0.0, 1, 1, {}}}, 0.0, cfg.window(), {4, 4});
    const std::vector<std::size_t> q{0, 0, 3};
    const auto r = predict_flows(one, q, cfg, w);
    ASSERT_EQ(r.predictions.size(), 2u);
    EXPECT_EQ(r.predictions[0].nx, 1.0);
    EXPECT_EQ(r.predictions[0].ny, 0.0);
    EXPECT_EQ(r.predictions[1].event_index, 0u);
    ASSERT_EQ(r.failures.size(), 1u);
    EXPECT_EQ(r.failures[0].event_index, 3u);

    EncoderConfig other = cfg;
    other.dim = 16;
    EXPECT_THROW(predict_flows(one, q, other, w), DimensionMismatch);
}

TEST(PredictFlows, SamePixelDifferentTimesDiffer) {
    std::mt19937_64 rng(6);
    EncoderConfig cfg;
    cfg.dim = 16;
    cfg.delta_x = cfg.delta_y = 2;
    auto w = random_weights(rng, 16, 16);
    w.bases = generate_bases(cfg);
    const EventSlice s({{0.0, 2, 2, {}}, {cfg.delta_t, 2, 2, {}}}, 0.0, cfg.window(), {5, 5});
    const std::vector<std::size_t> q{0, 1};
    const auto r = predict_flows(s, q, cfg, w);
    ASSERT_EQ(r.predictions.size(), 2u);
    EXPECT_TRUE(r.predictions[0].nx != r.predictions[1].nx || r.predictions[0].ny != r.predictions[1].ny);
}

TEST(PredictFlows, UsesEmbeddedBases) {
    std::mt19937_64 rng(7);
    EncoderConfig cfg;
    cfg.dim = 8;
    cfg.delta_x = cfg.delta_y = 2;
    auto w = random_weights(rng, 8, 8);
    // Bases unrelated to the seeds in cfg.
    w.bases.t = box_muller_normals(99, 8, 25.0);
    const auto slice = random_slice(rng, 40, {8, 8}, cfg.window());
    const std::vector<std::size_t> q{3};
    const auto r = predict_flows(slice, q, cfg, w);
    const auto emb = oracle_encode(slice, slice[3], cfg, w.bases);
    const auto want = mlp_forward(w, embed_to_features(emb));
    ASSERT_EQ(r.predictions.size(), 1u);
    EXPECT_NEAR(r.predictions[0].nx, want.x, 1e-3 * (1 + std::abs(want.x)));
    EXPECT_NEAR(r.predictions[0].ny, want.y, 1e-3 * (1 + std::abs(want.y)));
}

TEST(PredictFlows, DependsOnlyOnNeighbourhood) {
    std::mt19937_64 rng(8);
    EncoderConfig cfg;
    cfg.dim = 16;
    cfg.delta_x = cfg.delta_y = 2;
    cfg.precision = Precision::f64;
    auto w = random_weights(rng, 16, 16);
    w.bases = generate_bases(cfg);
    const auto slice = random_slice(rng, 200, {20, 20}, cfg.window());
    const std::size_t qi = 17;
    const Event q = slice[qi];
    std::vector<Event> pruned;
    std::size_t new_index = 0;
    for (std::size_t i = 0; i < slice.size(); ++i) {
        const Event &e = slice[i];
        if (std::abs(e.x - q.x) <= 2 && std::abs(e.y - q.y) <= 2) {
            if (i == qi) {
                new_index = pruned.size();
            }
            pruned.push_back(e);
        }
    }
    const EventSlice small(pruned, 0.0, cfg.window(), slice.geometry());
    const std::vector<std::size_t> a{qi};
    const std::vector<std::size_t> b{new_index};
    const auto full = predict_flows(slice, a, cfg, w);
    const auto part = predict_flows(small, b, cfg, w);
    EXPECT_NEAR(full.predictions[0].nx, part.predictions[0].nx, 1e-6);
    EXPECT_NEAR(full.predictions[0].ny, part.predictions[0].ny, 1e-6);
}

TEST(TrainHead, ConstantFlowFitByBias) {
    EncoderConfig cfg;
    cfg.dim = 4;
    const auto bases = generate_bases(cfg);
    const FlowVector u{120.0, -50.0};
    std::vector<TrainingSample> data(64, {std::vector<double>{0.3, -0.1, 0.7, 0.2, 0.0, 0.5, -0.4, 0.1}, u});
    TrainParams p;
    p.hidden = 8;
    p.epochs = 300;
    p.batch_size = 16;
    p.learning_rate = 1e-2;
    TrainReport report;
    const auto w = train_head(data, bases, p, &report);
    const auto n = mlp_forward(w, data[0].features);
    const double resid = std::abs(n.x * (u.x - n.x) + n.y * (u.y - n.y)) / std::hypot(u.x, u.y);
    EXPECT_LT(resid, 1e-3);
    EXPECT_GT(std::hypot(n.x, n.y), 0.05 * std::hypot(u.x, u.y) * 0.99);
    EXPECT_EQ(report.validation_loss.size(), 300u);
    EXPECT_LE(report.best_validation_loss, report.validation_loss.front());
}

TEST(TrainHead, ZeroHeadWithoutMarginStaysDegenerate) {
    EncoderConfig cfg;
    cfg.dim = 2;
    std::mt19937_64 rng(9);
    std::vector<TrainingSample> data;
    for (int i = 0; i < 20; ++i) {
        data.push_back({random_features(rng, 4), {10.0 + i, -3.0}});
    }
    TrainParams p;
    p.hidden = 4;
    p.epochs = 5;
    p.lambda = 0.0;
    p.zero_init = true;
    TrainReport report;
    const auto w = train_head(data, generate_bases(cfg), p, &report);
    EXPECT_EQ(report.best_validation_loss, 0.0);
    const auto n = mlp_forward(w, data[0].features);
    EXPECT_EQ(n.x, 0.0);
    EXPECT_EQ(n.y, 0.0);
}

TEST(TrainHead, RejectsBadInput) {
    EncoderConfig cfg;
    cfg.dim = 2;
    const auto bases = generate_bases(cfg);
    EXPECT_THROW(train_head({}, bases, {}), std::invalid_argument);
    std::vector<TrainingSample> bad{{std::vector<double>(4, 0.0), {std::nan(""), 0.0}}};
    EXPECT_THROW(train_head(bad, bases, {}), std::invalid_argument);
    std::vector<TrainingSample> wrong{{std::vector<double>(3, 0.0), {1.0, 0.0}}};
    EXPECT_THROW(train_head(wrong, bases, {}), DimensionMismatch);
    std::vector<TrainingSample> huge{{std::vector<double>(4, 1e300), {1.0, 0.0}},
                                     {std::vector<double>(4, 1e300), {1.0, 0.0}}};
    TrainParams p;
    p.epochs = 3;
    EXPECT_THROW(train_head(huge, bases, p), TrainingDiverged);
}

} // namespace
} // namespace nflow
