#include <gtest/gtest.h>

#include <cmath>
#include <map>

#include "vflhlp/config.hpp"
#include "vflhlp/experiment.hpp"
#include "vflhlp/metrics.hpp"

using namespace vflhlp;

namespace {

/// O(n^2) Mann-Whitney count over every (positive, negative) pair.
double pairwise_auc(const std::vector<double>& s, const std::vector<int>& y) {
    std::size_t twice = 0, pos = 0, neg = 0;
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (y[i] == 1) ++pos; else ++neg;
        if (y[i] != 1) continue;
        for (std::size_t j = 0; j < s.size(); ++j) {
            if (y[j] != 0) continue;
            if (s[i] > s[j]) twice += 2;
            else if (s[i] == s[j]) twice += 1;
        }
    }
    return static_cast<double>(twice) / (2.0 * static_cast<double>(pos) * static_cast<double>(neg));
}

struct Instance {
    std::vector<double> scores;
    std::vector<int> labels;
};

/// Scores on a coarse grid so that ties are common.
Instance random_instance(Rng& rng, bool ties) {
    const std::size_t n = 2 + rng.below(499);
    Instance in;
    in.labels.resize(n);
    in.scores.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        in.labels[i] = rng.uniform() < 0.3 ? 1 : 0;
        in.scores[i] = ties ? std::floor(rng.uniform(0, 8)) / 8 : rng.uniform(-3, 3);
    }
    in.labels[0] = 0;
    in.labels[1] = 1;
    return in;
}

RunConfig tiny_grid_config() {
    RunConfig cfg = preset("standard");
    cfg.dataset.synthetic.pool = 1200;
    cfg.dataset.synthetic.validation = 100;
    cfg.dataset.synthetic.test = 400;
    cfg.partition.local_count = 400;
    cfg.partition.aligned_counts = {20, 40};
    cfg.partition.seeds = {1, 2};
    cfg.pretrain.ssl.epochs = 1;
    cfg.pretrain.supervised.epochs = 1;
    cfg.downstream.modes = {TrainMode::vanilla_vfl, TrainMode::vflhlp};
    cfg.downstream.train.epochs = 2;
    return cfg;
}

}  // namespace

TEST(Auc, PerfectRanking) {
    EXPECT_EQ(auc(std::vector<double>{0.9, 0.1}, std::vector<int>{1, 0}), 1.0);
}

TEST(Auc, AllTiesGiveOneHalf) {
    EXPECT_EQ(auc(std::vector<double>(6, 0.4), std::vector<int>{1, 0, 1, 0, 0, 1}), 0.5);
}

TEST(Auc, FourPointExample) {
    const std::vector<double> s{0.8, 0.7, 0.6, 0.5};
    const std::vector<int> y{1, 0, 1, 0};
    EXPECT_EQ(pairwise_auc(s, y), 0.75);
    EXPECT_EQ(auc(s, y), 0.75);
}

TEST(Auc, MatchesPairwiseOracleExactly) {
    Rng rng(1);
    for (int t = 0; t < 100; ++t) {
        const Instance in = random_instance(rng, t % 2 == 0);
        EXPECT_EQ(auc(in.scores, in.labels), pairwise_auc(in.scores, in.labels)) << "instance " << t;
    }
}

TEST(Auc, InvariantUnderStrictlyIncreasingTransform) {
    Rng rng(2);
    for (int t = 0; t < 20; ++t) {
        const Instance in = random_instance(rng, t % 2 == 0);
        std::vector<double> f(in.scores.size());
        for (std::size_t i = 0; i < f.size(); ++i) f[i] = std::exp(3 * in.scores[i]) + 7;
        EXPECT_EQ(auc(in.scores, in.labels), auc(f, in.labels));
    }
}

TEST(Auc, NegatedScoresAreComplementaryWithoutTies) {
    Rng rng(3);
    for (int t = 0; t < 20; ++t) {
        const Instance in = random_instance(rng, false);
        std::vector<double> neg(in.scores.size());
        for (std::size_t i = 0; i < neg.size(); ++i) neg[i] = -in.scores[i];
        EXPECT_NEAR(auc(in.scores, in.labels) + auc(neg, in.labels), 1.0, 1e-15);
    }
}

TEST(Auc, SingleClassIsUndefined) {
    EXPECT_THROW(auc(std::vector<double>{0.1, 0.2}, std::vector<int>{1, 1}), UndefinedMetric);
    EXPECT_THROW(auc(std::vector<double>{0.1}, std::vector<int>{0}), UndefinedMetric);
}

TEST(Auc, MalformedInputIsRejected) {
    EXPECT_THROW(auc(std::vector<double>{0.1}, std::vector<int>{1, 0}), SchemaError);
    EXPECT_THROW(auc(std::vector<double>{0.1, 0.2}, std::vector<int>{2, 0}), SchemaError);
    EXPECT_THROW(auc(std::vector<double>{std::nan(""), 0.2}, std::vector<int>{1, 0}), SchemaError);
}

TEST(MeanStd, SampleStandardDeviation) {
    const MeanStd m = mean_std(std::vector<double>{2, 4, 4, 4, 5, 5, 7, 9});
    EXPECT_DOUBLE_EQ(m.mean, 5.0);
    EXPECT_DOUBLE_EQ(m.std, std::sqrt(32.0 / 7.0));
    EXPECT_EQ(m.count, 8u);
    EXPECT_EQ(mean_std(std::vector<double>{0.7}).std, 0.0);
    EXPECT_EQ(mean_std(std::vector<double>{}).count, 0u);
}

TEST(EvaluateMode, RandomWeightsScoreNearChance) {
    RunConfig cfg = preset("standard");
    cfg.dataset.synthetic.pool = 1500;
    cfg.partition.local_count = 500;
    cfg.partition.aligned_counts = {50};
    cfg.downstream.train.epochs = 0;
    const PreparedData data = prepare_data(cfg);
    const auto specs = encoder_specs(data.schema, cfg.model);
    double total = 0;
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
        const VerticalDataset ds = partition_cell(data, cfg, 50, seed);
        DownstreamConfig dc = cfg.downstream.train;
        dc.seed = seed;
        const DownstreamResult r = train_downstream(ds, TrainMode::vanilla_vfl, specs, {}, dc);
        total += evaluate_mode(r, *ds.test);
    }
    EXPECT_NEAR(total / 5, 0.5, 0.05);
}

TEST(EvaluateMode, BayesScoresBoundTrainedModels) {
    RunConfig cfg = tiny_grid_config();
    const PreparedData data = prepare_data(cfg);
    ASSERT_TRUE(data.oracle_test_auc.has_value());
    const auto outcomes = run_grid(data, cfg);
    for (const auto& o : outcomes) {
        for (const auto& c : o.cells) EXPECT_LE(c.test_auc, *data.oracle_test_auc);
    }
    EXPECT_EQ(summarize(outcomes, cfg, data.oracle_test_auc).oracle_auc, data.oracle_test_auc);
}

TEST(Grid, SingleCell) {
    RunConfig cfg = tiny_grid_config();
    cfg.downstream.modes = {TrainMode::vanilla_vfl};
    cfg.partition.aligned_counts = {20};
    cfg.partition.seeds = {3};
    const PreparedData data = prepare_data(cfg);
    const auto outcomes = run_grid(data, cfg);
    ASSERT_EQ(outcomes.size(), 1u);
    ASSERT_EQ(outcomes[0].cells.size(), 1u);
    const ResultTable t = summarize(outcomes, cfg);
    ASSERT_EQ(t.rows.size(), 1u);
    ASSERT_EQ(t.rows[0].columns.size(), 1u);
    EXPECT_EQ(t.rows[0].columns[0].count, 1u);
    EXPECT_EQ(t.rows[0].columns[0].mean, outcomes[0].cells[0].test_auc);
    EXPECT_FALSE(t.delta.has_value());
}

TEST(Grid, DeltaMatchesIndependentAggregation) {
    const RunConfig cfg = tiny_grid_config();
    const PreparedData data = prepare_data(cfg);
    const auto outcomes = run_grid(data, cfg);
    const ResultTable t = summarize(outcomes, cfg);
    ASSERT_TRUE(t.delta.has_value());

    // second pass: plain sums keyed by (mode, aligned)
    std::map<std::pair<TrainMode, std::size_t>, std::pair<double, int>> sums;
    for (const auto& o : outcomes) {
        for (const auto& c : o.cells) {
            auto& [s, n] = sums[{c.mode, c.aligned}];
            s += c.test_auc;
            ++n;
        }
    }
    for (std::size_t i = 0; i < cfg.partition.aligned_counts.size(); ++i) {
        const std::size_t a = cfg.partition.aligned_counts[i];
        const auto [hs, hn] = sums[{TrainMode::vflhlp, a}];
        const auto [vs, vn] = sums[{TrainMode::vanilla_vfl, a}];
        EXPECT_EQ(hn, 2);
        EXPECT_EQ(vn, 2);
        EXPECT_NEAR((*t.delta)[i], hs / hn - vs / vn, 1e-15);
    }
}

TEST(Grid, RerunIsBitIdentical) {
    const RunConfig cfg = tiny_grid_config();
    const PreparedData data = prepare_data(cfg);
    const auto a = run_grid(data, cfg);
    const auto b = run_grid(data, cfg);
    EXPECT_EQ(format_cells_csv(a, false), format_cells_csv(b, false));
}

TEST(Grid, ThreadCountDoesNotChangeResults) {
    RunConfig cfg = tiny_grid_config();
    const PreparedData data = prepare_data(cfg);
    const auto serial = run_grid(data, cfg);
    cfg.threads = 2;
    EXPECT_EQ(format_cells_csv(serial, false), format_cells_csv(run_grid(data, cfg), false));
}

TEST(Grid, FailingCellIsRecordedAsMissing) {
    RunConfig cfg = tiny_grid_config();
    cfg.downstream.train.optimizer = nn::OptimizerKind::sgd;
    cfg.downstream.train.server_lr = 1e300;
    cfg.downstream.modes = {TrainMode::vanilla_vfl, TrainMode::local_a};
    const PreparedData data = prepare_data(cfg);
    const auto outcomes = run_grid(data, cfg);
    std::size_t failed = 0, fine = 0;
    for (const auto& o : outcomes) {
        for (const auto& c : o.cells) {
            if (c.mode == TrainMode::vanilla_vfl) {
                EXPECT_FALSE(c.ok());
                EXPECT_TRUE(std::isnan(c.test_auc));
                ++failed;
            } else {
                EXPECT_TRUE(c.ok()) << c.failure;
                ++fine;
            }
        }
    }
    EXPECT_EQ(failed, 4u);
    EXPECT_EQ(fine, 4u);
    const ResultTable t = summarize(outcomes, cfg);
    EXPECT_EQ(t.find("vanilla_vfl")->columns[0].count, 0u);
    EXPECT_EQ(t.find("local_a")->columns[0].count, 2u);
    EXPECT_NE(format_markdown(t).find("missing"), std::string::npos);
    EXPECT_NE(format_cells_csv(outcomes, false).find("non-finite"), std::string::npos);
}

TEST(Format, MarkdownHasOneRowPerModelAndDelta) {
    ResultTable t;
    t.aligned_counts = {50, 100};
    t.seed_count = 2;
    t.rows.push_back({"vanilla_vfl", TrainMode::vanilla_vfl, 0.0, {{0.6, 0.01, 2}, {0.65, 0.02, 2}}});
    t.rows.push_back({"vflhlp", TrainMode::vflhlp, 1.0, {{0.7, 0.011, 2}, {0.7, 0.0, 1}}});
    t.delta = std::vector<double>{0.1, 0.05};
    const std::string md = format_markdown(t);
    EXPECT_NE(md.find("| vanilla_vfl | 0.600 ± 0.010 | 0.650 ± 0.020 |"), std::string::npos) << md;
    EXPECT_NE(md.find("| vflhlp | 0.700 ± 0.011 | 0.700 ± 0.000 (n=1) |"), std::string::npos) << md;
    EXPECT_NE(md.find("| delta vflhlp | +0.100 | +0.050 |"), std::string::npos) << md;
}
