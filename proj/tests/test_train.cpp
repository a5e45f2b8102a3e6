#include <gtest/gtest.h>

#include <atomic>
#include <cmath>
#include <filesystem>
#include <numeric>
#include <random>
#include <set>
#include <sstream>

#include "mbcr/archive.hpp"
#include "mbcr/parallel.hpp"
#include "mbcr/synth.hpp"
#include "mbcr/train.hpp"

using namespace mbcr;

namespace {

Dataset mini_data(std::size_t n, std::uint64_t seed = 11) {
    SynthConfig sc;
    sc.seed = seed;
    sc.n_records = n;
    sc.sample_rate_hz = 50;
    return preprocess(generate(sc), PreprocessConfig::profile("mini")).data;
}

std::vector<std::size_t> all(const Dataset& d) {
    std::vector<std::size_t> idx(d.size());
    std::iota(idx.begin(), idx.end(), 0);
    return idx;
}

TrainConfig quick(std::size_t epochs = 3) {
    TrainConfig tc;
    tc.epochs = epochs;
    tc.seed = 5;
    tc.batch_size = 8;
    return tc;
}

}  // namespace

TEST(Adam, BiasCorrectedUnitStep) {
    Parameter p("p", Parameter::Kind::dense_bias, Shape{1}, 1);
    p.grad = {1.0};
    AdamState st;
    std::vector<Parameter*> ps{&p};
    adam_step(ps, st, 0.1, 0.9, 0.999, 1e-8);
    EXPECT_NEAR(p.value[0], -0.1, 1e-8);
    EXPECT_EQ(st.step, 1u);
}

TEST(Adam, ZeroGradientAndDeterminism) {
    auto run = [](std::vector<double> grads) {
        Parameter p("p", Parameter::Kind::dense_weight, Shape{3}, 1);
        p.value.data = {0.5, -1.0, 2.0};
        AdamState st;
        std::vector<Parameter*> ps{&p};
        for (int i = 0; i < 5; ++i) {
            p.grad = grads;
            adam_step(ps, st, 0.01, 0.9, 0.999, 1e-8);
        }
        return p.value.data;
    };
    EXPECT_EQ(run({0, 0, 0}), (std::vector<double>{0.5, -1.0, 2.0}));
    EXPECT_EQ(run({0.3, -2, 1e-3}), run({0.3, -2, 1e-3}));
}

TEST(Sgd, Step) {
    Parameter p("p", Parameter::Kind::dense_weight, Shape{2}, 1);
    p.value.data = {1.0, 2.0};
    p.grad = {0.5, -1.0};
    std::vector<Parameter*> ps{&p};
    sgd_step(ps, 0.1);
    EXPECT_DOUBLE_EQ(p.value[0], 0.95);
    EXPECT_DOUBLE_EQ(p.value[1], 2.1);
}

TEST(Metrics, Examples) {
    Metrics m{4, 4, 1, 1};
    EXPECT_DOUBLE_EQ(m.acc(), 0.8);
    EXPECT_DOUBLE_EQ(m.se(), 0.8);
    const std::vector<int> y{1, 0, 1, 0};
    Metrics perfect = Metrics::from(y, y);
    EXPECT_EQ(perfect.acc(), 1.0);
    EXPECT_EQ(perfect.se(), 1.0);
    const std::vector<int> negatives{0, 0, 0}, preds{0, 1, 0};
    Metrics none = Metrics::from(preds, negatives);
    EXPECT_TRUE(std::isnan(none.se()));
    EXPECT_DOUBLE_EQ(none.acc(), 2.0 / 3.0);
    EXPECT_THROW(Metrics::from(preds, y), Error);
}

TEST(Metrics, BruteForceRecount) {
    std::mt19937_64 rng(1);
    for (int trial = 0; trial < 1000; ++trial) {
        const std::size_t n = 1 + rng() % 50;
        const bool no_positives = trial % 10 == 0;
        std::vector<int> p(n), y(n);
        for (std::size_t i = 0; i < n; ++i) {
            p[i] = static_cast<int>(rng() % 2);
            y[i] = no_positives ? 0 : static_cast<int>(rng() % 2);
        }
        Metrics m = Metrics::from(p, y);
        double correct = 0, pos = 0, hit = 0;
        for (std::size_t i = 0; i < n; ++i) {
            correct += p[i] == y[i];
            pos += y[i];
            hit += y[i] && p[i];
        }
        EXPECT_DOUBLE_EQ(m.acc(), correct / static_cast<double>(n));
        if (pos == 0) EXPECT_TRUE(std::isnan(m.se()));
        else EXPECT_DOUBLE_EQ(m.se(), hit / pos);
        EXPECT_EQ(m.total(), n);
    }
}

TEST(Predict, TieGoesToNormal) {
    const std::vector<double> tie{0.5, 0.5}, ab{0.4, 0.6}, no{0.7, 0.3};
    EXPECT_EQ(predicted_class(tie), 0);
    EXPECT_EQ(predicted_class(ab), 1);
    EXPECT_EQ(predicted_class(no), 0);
}

TEST(TrainConfig, Validation) {
    TrainConfig tc;
    EXPECT_NO_THROW(tc.validate());
    tc.batch_size = 0;
    EXPECT_THROW(tc.validate(), Error);
    tc = TrainConfig{};
    tc.learning_rate = -1;
    EXPECT_THROW(tc.validate(), Error);
    tc = TrainConfig{};
    tc.lead = 3;
    EXPECT_EQ(tc.model_spec().variant, Variant::SingleLead);
    EXPECT_EQ(tc.model_spec().n_leads, 1u);
    EXPECT_EQ(parse_optimizer("sgd"), Optimizer::sgd);
}

TEST(Train, ZeroLearningRateLeavesParameters) {
    Dataset d = mini_data(16);
    TrainConfig tc = quick(2);
    tc.learning_rate = 0.0;
    Model m = Model::build(tc.model_spec(), 1);
    std::vector<Tensor> before;
    for (Parameter* p : m.parameters()) before.push_back(p->value);
    train(m, d, all(d), tc);
    auto ps = m.parameters();
    for (std::size_t i = 0; i < ps.size(); ++i) EXPECT_EQ(ps[i]->value, before[i]) << ps[i]->name;
}

TEST(Train, LossFiniteDecreasingAndReproducible) {
    Dataset d = mini_data(32);
    TrainConfig tc = quick(8);
    auto run = [&] {
        Model m = Model::build(tc.model_spec(), tc.seed);
        auto r = train(m, d, all(d), tc);
        return std::make_pair(r.loss_trace, evaluate(m, d, all(d), std::nullopt));
    };
    auto [trace, metrics] = run();
    ASSERT_EQ(trace.size(), 8u);
    for (double l : trace) EXPECT_TRUE(std::isfinite(l));
    EXPECT_LT(trace.back(), trace.front());
    auto [trace2, metrics2] = run();
    EXPECT_EQ(trace, trace2);
    EXPECT_EQ(metrics, metrics2);
}

TEST(Train, SingleLeadAndSgd) {
    Dataset d = mini_data(16);
    TrainConfig tc = quick(1);
    tc.lead = 2;
    tc.optimizer = Optimizer::sgd;
    tc.learning_rate = 0.01;
    Model m = Model::build(tc.model_spec(), 1);
    EXPECT_NO_THROW(train(m, d, all(d), tc));
    EXPECT_EQ(evaluate(m, d, all(d), tc.lead).total(), 16u);
    // A multi-lead model fed single-lead batches is a shape error.
    Model fused = Model::build(ModelSpec::mini(Variant::L), 1);
    EXPECT_THROW(train(fused, d, all(d), tc), Error);
}

TEST(Evaluate, EmptyTestSet) {
    Dataset d = mini_data(4);
    Model m = Model::build(ModelSpec::mini(Variant::L), 1);
    EXPECT_THROW(evaluate(m, d, {}, std::nullopt), Error);
}

TEST(Crossval, NoLeaksAndMeans) {
    Dataset d = mini_data(40);
    TrainConfig tc = quick(1);
    tc.n_folds = 2;
    CrossvalResult r = crossval(d, tc);
    ASSERT_EQ(r.folds.size(), 2u);
    double acc = 0;
    for (std::size_t f = 0; f < 2; ++f) {
        auto [tr, te] = fold_split(d, r.plan, f);
        std::set<std::string> train_ids;
        for (auto i : tr) train_ids.insert(d.ids[i]);
        for (auto i : te) EXPECT_EQ(train_ids.count(d.ids[i]), 0u);
        EXPECT_EQ(r.folds[f].n_test, te.size());
        EXPECT_EQ(r.folds[f].n_train, tr.size());
        acc += r.folds[f].metrics.acc();
    }
    EXPECT_NEAR(r.mean_acc, acc / 2.0, 1e-12);
    const std::string table = format_crossval_table(std::span(&r, 1));
    EXPECT_NE(table.find("Fold-1"), std::string::npos);
    EXPECT_NE(table.find("Fold-2"), std::string::npos);
    EXPECT_NE(table.find("Average"), std::string::npos);
    EXPECT_NE(table.find("MBCRNet-L"), std::string::npos);
}

TEST(Crossval, FoldSplitRejectsDuplicateIds) {
    Dataset d = mini_data(20);
    std::vector<LabeledId> ids;
    for (std::size_t i = 0; i < d.size(); ++i) ids.push_back({d.ids[i], d.labels[i]});
    FoldPlan plan = make_folds(ids, 1, 2);
    EXPECT_NO_THROW(fold_split(d, plan, 0));
    d.ids.push_back(plan.fold_ids(0).front());
    d.inputs.push_back(d.inputs.front());
    d.labels.push_back(0);
    EXPECT_THROW(fold_split(d, plan, 0), Error);
    EXPECT_THROW(fold_split(d, plan, 2), Error);
}

TEST(Ablation, SingleLeadModelsTakeOneRow) {
    Dataset d = mini_data(40);
    TrainConfig tc = quick(1);
    tc.n_folds = 2;
    AblationResult r = lead_ablation(d, tc);
    ASSERT_EQ(r.single_lead.size(), 8u);
    EXPECT_EQ(r.single_lead[6].first, "V5");
    EXPECT_EQ(r.fused.total(), r.single_lead[0].second.total());
    EXPECT_NE(format_ablation_table(r).find("V6"), std::string::npos);
}

TEST(Checkpoint, RoundTripBitExact) {
    Dataset d = mini_data(16);
    TrainConfig tc = quick(2);
    Model m = Model::build(tc.model_spec(), 3);
    train(m, d, all(d), tc);
    std::stringstream ss;
    to_archive(m).write(ss);
    Model back = from_archive(TensorArchive::read(ss, "mem"));
    EXPECT_EQ(back.spec(), m.spec());
    auto a = m.parameters(), b = back.parameters();
    for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(a[i]->value, b[i]->value);
    auto sa = m.running_stats(), sb = back.running_stats();
    for (std::size_t i = 0; i < sa.size(); ++i) EXPECT_EQ(sa[i].stats->running_var, sb[i].stats->running_var);
    EXPECT_EQ(evaluate(back, d, all(d), std::nullopt), evaluate(m, d, all(d), std::nullopt));
}

TEST(Archive, CorruptInputsAreNamed) {
    auto err = [](const std::string& bytes) {
        std::istringstream is(bytes);
        try {
            TensorArchive::read(is, "f.mbcr");
        } catch (const Error& e) {
            return std::string(e.what());
        }
        return std::string();
    };
    EXPECT_EQ(err("NOPE"), "bad magic in 'f.mbcr'");
    EXPECT_NE(err(std::string("MBCR\x02\0\0\0", 8)).find("unsupported format version 2"), std::string::npos);
    TensorArchive a;
    a.meta = "k=v\n";
    a.tensors.push_back({"t", Tensor(Shape{2, 2}, 1.5)});
    std::stringstream ss;
    a.write(ss);
    const std::string full = ss.str();
    EXPECT_NE(err(full.substr(0, full.size() - 3)).find("truncated"), std::string::npos);
    std::istringstream ok(full);
    TensorArchive back = TensorArchive::read(ok, "x");
    EXPECT_EQ(back.meta, a.meta);
    EXPECT_EQ(back.at("t"), a.tensors[0].second);
    EXPECT_EQ(full.substr(0, 4), "MBCR");
    EXPECT_THROW(load_checkpoint("/nonexistent/model.mbcr"), Error);
}

TEST(Parallel, EveryIndexOnceAndErrorsPropagate) {
    std::vector<std::atomic<int>> hits(100);
    parallel_for(100, [&](std::size_t i) { hits[i]++; });
    for (auto& h : hits) EXPECT_EQ(h.load(), 1);
    EXPECT_THROW(parallel_for(10, [](std::size_t i) {
                     if (i == 7) throw Error("boom");
                 }),
                 Error);
    EXPECT_GE(worker_threads(), 1u);
    EXPECT_NE(derive_seed(1, 1), derive_seed(1, 2));
    EXPECT_EQ(derive_seed(9, 4), derive_seed(9, 4));
}
