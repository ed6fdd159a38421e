#include <cmath>
#include <random>
#include <sstream>

#include <gtest/gtest.h>

#include "l0sign/gradcheck.hpp"
#include "l0sign/train.hpp"

using namespace l0sign;

namespace {

ModelConfig tiny_config(std::size_t vocab) {
    ModelConfig c;
    c.vocab_size = vocab;
    c.edge_dim = 4;
    c.embed_dim = 4;
    c.hidden = 5;
    return c;
}

ModelParams random_params(const ModelConfig& cfg, std::uint64_t seed, double scale) {
    ModelParams p(cfg);
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> n(0.0, scale);
    for (std::size_t i = 0; i < p.store().count(); ++i) {
        for (double& v : p.store().value(i).values()) v = n(rng);
    }
    return p;
}

Instance random_instance(std::size_t vocab, std::size_t k, std::mt19937_64& rng) {
    std::vector<FeatureId> pool(vocab);
    std::iota(pool.begin(), pool.end(), FeatureId{0});
    std::shuffle(pool.begin(), pool.end(), rng);
    std::uniform_real_distribution<double> val(0.5, 1.5);
    std::vector<std::pair<FeatureId, double>> e;
    for (std::size_t i = 0; i < k; ++i) e.emplace_back(pool[i], val(rng));
    return make_instance(e, int(rng() % 2));
}

Splits small_synthetic(std::uint64_t seed, std::size_t n = 1200) {
    SyntheticSpec s;
    s.n_samples = n;
    s.planted_pairs = draw_planted_pairs(20, 5, seed);
    s.seed = seed;
    return split(generate_synthetic(s), {0.7, 0.15, 0.15, seed});
}

} // namespace

TEST(Loss, LogisticAtZeroAndGradient) {
    EXPECT_NEAR(logistic_loss(0.0, 1), std::log(2.0), 1e-15);
    EXPECT_NEAR(logistic_loss(0.0, 0), 0.6931, 1e-4);
    EXPECT_NEAR(logistic_loss(800.0, 0), 800.0, 1e-9);
    EXPECT_NEAR(logistic_loss(800.0, 1), 0.0, 1e-300);
    const double h = 1e-6;
    for (double s : {-3.0, -0.2, 0.0, 1.7}) {
        for (int y : {0, 1}) {
            EXPECT_NEAR(logistic_loss_grad(s, y), (logistic_loss(s + h, y) - logistic_loss(s - h, y)) / (2 * h), 1e-8);
        }
    }
}

TEST(Risk, LossOnlyAtZeroScore) {
    auto cfg = tiny_config(8);
    ModelParams p(cfg);  // all zero: every score is 0
    Dataset ds;
    ds.vocab_size = 8;
    std::mt19937_64 rng(1);
    for (int i = 0; i < 6; ++i) ds.instances.push_back(random_instance(8, 3, rng));
    std::vector<const Instance*> batch;
    std::vector<std::uint64_t> ids;
    for (std::size_t i = 0; i < ds.size(); ++i) {
        batch.push_back(&ds.instances[i]);
        ids.push_back(i);
    }
    TrainConfig tc;
    tc.lambda1 = tc.lambda2 = 0.0;
    EXPECT_NEAR(risk(batch, ids, p, tc, 0, false).risk, std::log(2.0), 1e-15);
}

TEST(Risk, L0TermMatchesDirectSummation) {
    const auto cfg = tiny_config(10);
    const auto p = random_params(cfg, 3, 0.8);
    std::mt19937_64 rng(4);
    std::vector<Instance> insts;
    for (int i = 0; i < 7; ++i) insts.push_back(random_instance(10, 2 + i % 4, rng));
    std::vector<const Instance*> batch;
    std::vector<std::uint64_t> ids;
    for (std::size_t i = 0; i < insts.size(); ++i) {
        batch.push_back(&insts[i]);
        ids.push_back(i);
    }
    TrainConfig tc;
    tc.lambda1 = 1.0;
    tc.lambda2 = 0.0;
    ModelParams work = p;
    const auto t = risk(batch, ids, work, tc, 0, false);

    double direct = 0.0;
    for (const auto& inst : insts) {
        for (std::size_t a = 0; a < inst.size(); ++a) {
            for (std::size_t b = a; b < inst.size(); ++b) {
                const double la = edge_logit(inst.nodes[a], inst.nodes[b], p);
                direct += 1.0 / (1.0 + std::exp(-(la + (2.0 / 3.0) * std::log(11.0))));
            }
        }
    }
    direct /= double(insts.size());
    EXPECT_NEAR(t.risk - t.loss, direct, 1e-12);
    EXPECT_NEAR(t.l0, direct, 1e-12);
}

TEST(Risk, ZeroInteractionsHaveNoL2Penalty) {
    auto p = random_params(tiny_config(8), 5, 1.0);
    p[kInterW2].fill(0.0);
    p[kInterB2].fill(0.0);
    std::mt19937_64 rng(6);
    const Instance inst = random_instance(8, 4, rng);
    const Instance* batch[] = {&inst};
    const std::uint64_t ids[] = {0};
    TrainConfig tc;
    tc.lambda2 = 1.0;
    EXPECT_EQ(risk(batch, ids, p, tc, 0, false).l2, 0.0);
}

// ---------------------------------------------------------------------------
// Gradient checks (central differences, frozen gate noise)

TEST(GradCheck, ZeroParameters) {
    ModelParams p(tiny_config(6));
    std::mt19937_64 rng(7);
    const auto inst = random_instance(6, 3, rng);
    TrainConfig tc;
    tc.lambda1 = tc.lambda2 = 0.0;
    EXPECT_EQ(grad_check(p, inst, tc).max_relative_error, 0.0);
}

TEST(GradCheck, LinearOnlyModelIsExact) {
    auto cfg = tiny_config(8);
    cfg.activation = Activation::identity;
    cfg.combine = PairCombine::sum;
    cfg.aggregation = Aggregation::neighbor_count;
    std::mt19937_64 rng(8);
    TrainConfig tc;
    tc.lambda1 = tc.lambda2 = 0.0;
    tc.mode = TrainMode::sign_complete;
    for (int trial = 0; trial < 5; ++trial) {
        const auto p = random_params(cfg, 20 + trial, 0.5);
        const auto inst = random_instance(8, 2 + trial % 4, rng);
        EXPECT_LE(grad_check(p, inst, tc).max_relative_error, 1e-8) << trial;
    }
}

TEST(GradCheck, FullModelAllModes) {
    std::mt19937_64 rng(9);
    for (const auto agg : {Aggregation::soft_degree, Aggregation::neighbor_count}) {
        auto cfg = tiny_config(12);
        cfg.aggregation = agg;
        for (int trial = 0; trial < 6; ++trial) {
            const auto p = random_params(cfg, 40 + trial, 0.6);
            const auto inst = random_instance(12, 2 + trial % 5, rng);
            TrainConfig tc;
            tc.lambda1 = 0.05;
            tc.lambda2 = 0.01;
            tc.seed = 100 + trial;
            const auto r = grad_check(p, inst, tc);
            EXPECT_LE(r.max_relative_error, 1e-4) << r.worst_param << "[" << r.worst_index << "]";
            EXPECT_LE(r.max_abs_error, 1e-7) << r.worst_param << "[" << r.worst_index << "]";
            EXPECT_EQ(r.checked, p.store().scalar_count());
        }
    }
}

// ---------------------------------------------------------------------------
// Adagrad

TEST(Adagrad, ZeroGradientLeavesParametersUnchanged) {
    ParamStore s;
    s.add("w", Matrix(2, 2, {1, 2, 3, 4}));
    const auto before = s.value(0);
    Adagrad opt(0.05);
    for (int i = 0; i < 5; ++i) opt.step(s);
    EXPECT_EQ(s.value(0), before);
}

TEST(Adagrad, ConstantGradientClosedForm) {
    // acc_t = t g^2, so w_t = w_0 - lr * sign(g) * sum_{s<=t} 1/sqrt(s)
    ParamStore s;
    s.add("w", Matrix(1, 1, 0.3));
    Adagrad opt(0.05, 0.0);
    const double g = -2.5;
    double harmonic = 0.0;
    for (int t = 1; t <= 50; ++t) {
        s.grad(0)(0, 0) = g;
        opt.step(s);
        harmonic += 1.0 / std::sqrt(double(t));
        EXPECT_NEAR(s.value(0)(0, 0), 0.3 + 0.05 * harmonic, 1e-12) << t;
    }
}

TEST(Adagrad, DependsOnlyOnSummedGradients) {
    // two batch compositions producing the same summed gradient
    ParamStore a, b;
    a.add("w", Matrix(1, 3, {1, 1, 1}));
    b.add("w", Matrix(1, 3, {1, 1, 1}));
    ParamStore part1 = a, part2 = a;
    part1.grad(0) = Matrix(1, 3, {0.5, -1, 2});
    part2.grad(0) = Matrix(1, 3, {0.25, 3, -1});
    a.accumulate_grad(part1);
    a.accumulate_grad(part2);
    b.grad(0) = Matrix(1, 3, {0.75, 2, 1});
    Adagrad oa(0.1), ob(0.1);
    oa.step(a);
    ob.step(b);
    EXPECT_EQ(a.value(0), b.value(0));
}

TEST(Adagrad, FrozenParametersStayPut) {
    ParamStore s;
    s.add("a", Matrix(1, 1, 1.0));
    s.add("b", Matrix(1, 1, 1.0));
    s.grad(0)(0, 0) = s.grad(1)(0, 0) = 1.0;
    Adagrad opt(0.1);
    opt.step(s, {true, false});
    EXPECT_EQ(s.value(0)(0, 0), 1.0);
    EXPECT_NE(s.value(1)(0, 0), 1.0);
}

// ---------------------------------------------------------------------------
// fit

TEST(Fit, DeterministicForFixedSeed) {
    const auto sp = small_synthetic(3, 600);
    ModelConfig mc;
    mc.vocab_size = 20;
    TrainConfig tc;
    tc.epochs = 4;
    tc.batch_size = 128;
    tc.seed = 3;
    const auto a = fit(sp.train, sp.valid, ModelParams::initialize(mc, 3), tc);
    const auto b = fit(sp.train, sp.valid, ModelParams::initialize(mc, 3), tc);
    std::ostringstream la, lb;
    write_training_log(la, a.records);
    write_training_log(lb, b.records);
    EXPECT_EQ(la.str(), lb.str());
    EXPECT_TRUE(a.params == b.params);
    EXPECT_EQ(a.records.size(), 5u);
}

TEST(Fit, RiskDropsDuringFirstEpoch) {
    const auto sp = small_synthetic(4, 5000);
    ModelConfig mc;
    mc.vocab_size = 20;
    TrainConfig tc;
    tc.epochs = 1;
    tc.seed = 4;
    const auto r = fit(sp.train, sp.valid, ModelParams::initialize(mc, 4), tc);
    std::vector<const Instance*> all;
    std::vector<std::uint64_t> ids;
    for (std::size_t i = 0; i < sp.train.size(); ++i) {
        all.push_back(&sp.train.instances[i]);
        ids.push_back(i);
    }
    ModelParams before = ModelParams::initialize(mc, 4);
    ModelParams after = r.params;
    const double start = risk(all, ids, before, tc, 1, false).risk;
    const double end = risk(all, ids, after, tc, 1, false).risk;
    EXPECT_LT(end, start);
}

TEST(Fit, HugeL0PenaltyClosesEveryGate) {
    const auto sp = small_synthetic(5);
    ModelConfig mc;
    mc.vocab_size = 20;
    TrainConfig tc;
    tc.lambda1 = 10.0;
    tc.epochs = 15;
    tc.batch_size = 128;
    tc.seed = 5;
    const auto r = fit(sp.train, sp.valid, ModelParams::initialize(mc, 5), tc);
    EXPECT_LE(r.records.back().open_gate_fraction, 0.01);
    EXPECT_NEAR(r.records.back().valid_auc, 0.5, 0.05);
}

TEST(Fit, CompleteGraphKeepsEveryGateOpen) {
    const auto sp = small_synthetic(6, 600);
    ModelConfig mc;
    mc.vocab_size = 20;
    TrainConfig tc;
    tc.mode = TrainMode::sign_complete;
    tc.lambda1 = 0.0;
    tc.epochs = 3;
    const auto init = ModelParams::initialize(mc, 6);
    const auto r = fit(sp.train, sp.valid, init, tc);
    for (const auto& rec : r.records) EXPECT_EQ(rec.open_gate_fraction, 1.0);
    for (std::size_t id = 0; id < kParamCount; ++id) {
        if (is_edge_param(id)) {
            EXPECT_EQ(r.params[ParamId(id)], init[ParamId(id)]);
        }
    }
}

TEST(Fit, AlgorithmLiteralEmbeddingsAreAggregates) {
    const auto sp = small_synthetic(7, 600);
    ModelConfig mc;
    mc.vocab_size = 20;
    TrainConfig tc;
    tc.embedding_update = EmbeddingUpdate::algorithm_literal;
    tc.epochs = 2;
    tc.batch_size = 64;
    const auto init = ModelParams::initialize(mc, 7);
    const auto r = fit(sp.train, sp.valid, init, tc);
    EXPECT_FALSE(r.params[kEmbedding] == init[kEmbedding]);
    for (const auto& rec : r.records) EXPECT_TRUE(std::isfinite(rec.valid_auc));
}

TEST(Fit, SelectionPrefersSteadyEpochs) {
    std::vector<EpochRecord> recs;
    for (double f : {1.0, 0.8, 0.6, 0.595, 0.594, 0.597, 0.3}) recs.push_back({recs.size(), 0, 0.5, 0.5, f});
    EXPECT_FALSE(detail::steady_at(recs, 3, 3, 0.01));
    EXPECT_FALSE(detail::steady_at(recs, 4, 3, 0.01));
    EXPECT_TRUE(detail::steady_at(recs, 5, 3, 0.01));
    EXPECT_FALSE(detail::steady_at(recs, 6, 3, 0.01));
}

TEST(TrainingLog, CsvRoundTrip) {
    const std::vector<EpochRecord> recs{{0, 0.7123, 0.5, 0.49, 1.0}, {1, 0.1 + 0.2, 0.6666666666666666, 0.61, 0.3}};
    std::stringstream ss;
    write_training_log(ss, recs);
    const auto back = read_training_log(ss);
    ASSERT_EQ(back.size(), 2u);
    EXPECT_EQ(back[1].train_risk, 0.1 + 0.2);
    EXPECT_EQ(back[1].valid_auc, 0.6666666666666666);
    std::stringstream bad("epoch,risk\n");
    EXPECT_THROW(read_training_log(bad), Error);
}

// ---------------------------------------------------------------------------
// Full-size synthetic runs with the default configuration

namespace {

struct DefaultRun {
    Splits sp;
    FitResult fit;
};

DefaultRun default_run(double lambda1, std::size_t epochs = 60) {
    const std::uint64_t seed = 11;
    SyntheticSpec s;
    s.planted_pairs = draw_planted_pairs(20, 5, seed);
    s.seed = seed;
    DefaultRun r{split(generate_synthetic(s), {0.7, 0.15, 0.15, seed}), {}};
    ModelConfig mc;
    mc.vocab_size = 20;
    TrainConfig tc;
    tc.lambda1 = lambda1;
    tc.epochs = epochs;
    tc.seed = seed;
    r.fit = fit(r.sp.train, r.sp.valid, ModelParams::initialize(mc, seed), tc);
    return r;
}

} // namespace

TEST(Fit, GatesSparsifyWhileValidationAucRises) {
    const auto r = default_run(TrainConfig{}.lambda1);
    const auto& recs = r.fit.records;
    EXPECT_GE(recs.front().open_gate_fraction, 0.95);
    EXPECT_LE(recs.back().open_gate_fraction, 0.5);
    EXPECT_GT(recs.at(r.fit.selected_epoch).valid_auc, recs.front().valid_auc);
    EXPECT_GT(recs.at(r.fit.selected_epoch).valid_auc, recs.at(1).valid_auc);
}

TEST(Fit, LargerL0PenaltyNeverOpensMoreGates) {
    std::vector<double> finals;
    for (double l1 : {1e-4, 1e-3, 1e-2, 1e-1}) finals.push_back(default_run(l1, 30).fit.records.back().open_gate_fraction);
    int inversions = 0;
    for (std::size_t i = 1; i < finals.size(); ++i) {
        if (finals[i] > finals[i - 1]) {
            ++inversions;
            EXPECT_LE(finals[i] - finals[i - 1], 0.02) << "lambda1 index " << i;
        }
    }
    EXPECT_LE(inversions, 1);
}
