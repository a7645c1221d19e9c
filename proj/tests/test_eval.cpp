#include <algorithm>
#include <cmath>
#include <numeric>
#include <unordered_set>

#include <gtest/gtest.h>

#include "helpers.hpp"
#include "knnkge/eval.hpp"
#include "knnkge/rng.hpp"
#include "knnkge/toy.hpp"

using namespace knnkge;
using knnkge::testing::TempDir;

namespace {

struct Fixture {
    KnowledgeGraph graph;
    DatasetSplit split;
    Vocabulary vocab;
    EncoderModel model;
    KnowledgeStore store;

    Fixture() {
        const char* labels[] = {"apple", "pea", "oak", "jay", "mote", "fern"};
        const char* descs[] = {"a red round fruit", "a small green thing",
                               "a tall old tree",   "a fast blue bird",
                               "a speck of dust",   "a quiet green plant"};
        for (int i = 0; i < 6; ++i) {
            graph.intern_entity(labels[i]);
            graph.descriptions[i] = descs[i];
        }
        graph.intern_relation("likes");
        graph.intern_relation("near");
        graph.triples = {{0, 0, 1}, {1, 1, 2}, {2, 0, 3}, {3, 1, 4}, {4, 0, 0},
                         {5, 0, 1}, {5, 1, 2}, {0, 1, 5}, {2, 1, 5}, {1, 0, 3}};
        split.mode = SplitMode::Transductive;
        split.train.assign(graph.triples.begin(), graph.triples.begin() + 7);
        split.valid = {graph.triples[7]};
        split.test = {graph.triples[8], graph.triples[9]};

        vocab = build_vocabulary(graph, 1, 16);
        expand_entity_vocabulary(vocab, graph.entity_labels);

        ModelConfig mc;
        mc.dim = 8;
        mc.layers = 1;
        mc.heads = 2;
        mc.max_len = 16;
        mc.vocab_size = vocab.size();
        mc.entity_offset = vocab.entity_offset();
        model = EncoderModel::init(mc, {0, 1, 2, 3, 4, 5}, 51);
        store = build_store(model, graph, split.train, vocab);
    }
};

}  // namespace

TEST(Interpolate, LambdaZeroIsBitwiseMem) {
    const std::vector<double> mem = {0.7, 0.2, 0.1};
    const std::vector<std::pair<uint32_t, double>> knn = {{0, 0.3}, {2, 0.5}, {1, 0.2}};
    const InterpolatedDistribution d = interpolate(knn, mem, 0.0);
    ASSERT_EQ(d.probs.size(), 3u);
    for (size_t e = 0; e < 3; ++e) EXPECT_EQ(d.probs[e], mem[e]);
}

TEST(Interpolate, LambdaOneIsBitwisePaddedKnn) {
    const std::vector<double> mem = {0.7, 0.2, 0.1, 0.0};
    const std::vector<std::pair<uint32_t, double>> knn = {{2, 0.6}, {0, 0.4}};
    const InterpolatedDistribution d = interpolate(knn, mem, 1.0);
    EXPECT_EQ(d.probs[0], 0.4);
    EXPECT_EQ(d.probs[1], 0.0);
    EXPECT_EQ(d.probs[2], 0.6);
    EXPECT_EQ(d.probs[3], 0.0);
}

TEST(Interpolate, WorkedHalfAndHalfExample) {
    // mem {a:0.7 b:0.3 c:0} with neighbors {b:0.5 c:0.3 a:0.2} at lambda 0.5
    const std::vector<double> mem = {0.7, 0.3, 0.0};
    const std::vector<std::pair<uint32_t, double>> knn = {{1, 0.5}, {2, 0.3}, {0, 0.2}};
    const InterpolatedDistribution d = interpolate(knn, mem, 0.5);
    EXPECT_EQ(d.probs[0], 0.5 * 0.7 + 0.5 * 0.2);
    EXPECT_EQ(d.probs[1], 0.5 * 0.3 + 0.5 * 0.5);
    EXPECT_EQ(d.probs[2], 0.5 * 0.0 + 0.5 * 0.3);
    EXPECT_DOUBLE_EQ(d.probs[0], 0.45);
    EXPECT_DOUBLE_EQ(d.probs[1], 0.40);
    EXPECT_DOUBLE_EQ(d.probs[2], 0.15);
    EXPECT_NEAR(d.probs[0] + d.probs[1] + d.probs[2], 1.0, 1e-15);
}

TEST(Interpolate, MixturesStayNormalized) {
    Rng rng(3);
    for (int round = 0; round < 200; ++round) {
        const size_t n = 2 + rng.below(30);
        std::vector<double> mem(n, 0.0);
        double sum = 0.0;
        for (double& v : mem) {
            v = rng.uniform();
            sum += v;
        }
        for (double& v : mem) v /= sum;

        std::vector<uint32_t> support(n);
        std::iota(support.begin(), support.end(), 0);
        Rng shuffler(round);
        shuffler.shuffle(support);
        support.resize(1 + rng.below(n));
        std::vector<std::pair<uint32_t, double>> knn;
        double ksum = 0.0;
        for (uint32_t e : support) {
            knn.emplace_back(e, rng.uniform() + 1e-9);
            ksum += knn.back().second;
        }
        for (auto& [e, p] : knn) p /= ksum;

        const double lambda = rng.uniform();
        const InterpolatedDistribution d = interpolate(knn, mem, lambda);
        double total = 0.0;
        for (double p : d.probs) {
            EXPECT_GE(p, 0.0);
            total += p;
        }
        EXPECT_NEAR(total, 1.0, 1e-12);
    }
}

TEST(Interpolate, Validates) {
    const std::vector<double> mem = {1.0};
    EXPECT_THROW(interpolate({{0, 1.0}}, mem, -0.1), Error);
    EXPECT_THROW(interpolate({{0, 1.0}}, mem, 1.1), Error);
    EXPECT_THROW(interpolate({{5, 1.0}}, mem, 0.5), Error);
}

TEST(Rank, AveragesOverTies) {
    EXPECT_EQ(rank_entities({0.4, 0.4, 0.2}, 0, {}), 1.5);
    EXPECT_EQ(rank_entities({0.4, 0.4, 0.2}, 1, {}), 1.5);
    EXPECT_EQ(rank_entities({0.4, 0.4, 0.2}, 2, {}), 3.0);
    EXPECT_EQ(rank_entities({0.5, 0.3, 0.3, 0.1}, 1, {}), 2.5);
    EXPECT_EQ(rank_entities({0.5, 0.3, 0.3, 0.1}, 0, {}), 1.0);
    EXPECT_EQ(rank_entities({0.5, 0.3, 0.3, 0.1}, 3, {}), 4.0);
    EXPECT_EQ(rank_entities({0.25, 0.25, 0.25, 0.25}, 2, {}), 2.5);
}

TEST(Rank, FilterRemovesCompetitors) {
    // the known-true higher-probability entity 0 is dropped from the ranking
    EXPECT_EQ(rank_entities({0.5, 0.3, 0.2}, 1, {0}), 1.0);
    EXPECT_EQ(rank_entities({0.5, 0.3, 0.3, 0.1}, 2, {1}), 2.0);
    EXPECT_THROW(rank_entities({0.5, 0.5}, 0, {0}), Error);
    EXPECT_THROW(rank_entities({0.5, 0.5}, 7, {}), Error);
}

TEST(Metrics, SummarizeMatchesHandComputation) {
    const std::vector<double> ranks = {1.0, 2.0, 10.5};
    const Metrics m = summarize_ranks(ranks);
    EXPECT_EQ(m.count, 3u);
    EXPECT_EQ(m.hits1, 1.0 / 3.0);
    EXPECT_EQ(m.hits3, 2.0 / 3.0);
    EXPECT_EQ(m.hits10, 2.0 / 3.0);
    EXPECT_EQ(m.mr, (1.0 + 2.0 + 10.5) / 3.0);
    EXPECT_EQ(m.mrr, (1.0 / 1.0 + 1.0 / 2.0 + 1.0 / 10.5) / 3.0);

    const Metrics empty = summarize_ranks({});
    EXPECT_EQ(empty.count, 0u);
    EXPECT_EQ(empty.mrr, 0.0);
}

TEST(Metrics, RankAndSummaryMatchOracleOnRandomCases) {
    Rng rng(99);
    for (int round = 0; round < 100; ++round) {
        const size_t n_entities = 2 + rng.below(19);
        const size_t n_queries = 1 + rng.below(10);
        std::vector<double> ranks;
        for (size_t q = 0; q < n_queries; ++q) {
            std::vector<double> probs(n_entities);
            for (double& p : probs) p = static_cast<double>(rng.below(5)) * 0.125;
            const uint32_t gold = static_cast<uint32_t>(rng.below(n_entities));
            std::unordered_set<uint32_t> filter;
            for (size_t i = 0; i < n_entities / 4; ++i) {
                const uint32_t e = static_cast<uint32_t>(rng.below(n_entities));
                if (e != gold) filter.insert(e);
            }

            // independent oracle over the definition
            double better = 0.0, equal = 0.0;
            for (uint32_t e = 0; e < n_entities; ++e) {
                if (e == gold || filter.count(e)) continue;
                better += probs[e] > probs[gold];
                equal += probs[e] == probs[gold];
            }
            const double want = 1.0 + better + equal / 2.0;
            const double got = rank_entities(probs, gold, filter);
            ASSERT_EQ(got, want);
            ranks.push_back(got);
        }
        const Metrics m = summarize_ranks(ranks);
        double h1 = 0, h3 = 0, h10 = 0, mr = 0, mrr = 0;
        for (double r : ranks) {
            h1 += r <= 1.0;
            h3 += r <= 3.0;
            h10 += r <= 10.0;
            mr += r;
            mrr += 1.0 / r;
        }
        const double n = static_cast<double>(ranks.size());
        ASSERT_EQ(m.hits1, h1 / n);
        ASSERT_EQ(m.hits3, h3 / n);
        ASSERT_EQ(m.hits10, h10 / n);
        ASSERT_EQ(m.mr, mr / n);
        ASSERT_EQ(m.mrr, mrr / n);
        ASSERT_LE(m.hits1, m.hits3);
        ASSERT_LE(m.hits3, m.hits10);
    }
}

TEST(Evaluate, InstanceLayoutAndBounds) {
    const Fixture fx;
    EvalConfig cfg;
    cfg.lambda = 0.2;
    cfg.k = 8;
    const MetricsReport r = evaluate(fx.model, fx.store, fx.graph, fx.split, fx.vocab, cfg);
    ASSERT_EQ(r.instances.size(), 4u);
    EXPECT_EQ(r.aggregate.count, 4u);
    EXPECT_EQ(r.head.count, 2u);
    EXPECT_EQ(r.tail.count, 2u);
    EXPECT_EQ(r.instances[0].direction, QueryDirection::Tail);
    EXPECT_EQ(r.instances[1].direction, QueryDirection::Head);
    EXPECT_EQ(r.instances[0].gold, fx.split.test[0].tail);
    EXPECT_EQ(r.instances[1].gold, fx.split.test[0].head);
    for (const RankingResult& inst : r.instances) {
        EXPECT_GE(inst.rank, 1.0);
        EXPECT_LE(inst.rank, 6.0);
    }
    EXPECT_LE(r.aggregate.hits1, r.aggregate.hits3);
    EXPECT_LE(r.aggregate.hits3, r.aggregate.hits10);
    EXPECT_GE(r.aggregate.mr, 1.0);
    EXPECT_LE(r.aggregate.mrr, 1.0);

    EvalConfig tails_only = cfg;
    tails_only.eval_heads = false;
    const MetricsReport t =
        evaluate(fx.model, fx.store, fx.graph, fx.split, fx.vocab, tails_only);
    EXPECT_EQ(t.instances.size(), 2u);
    EXPECT_EQ(t.head.count, 0u);
    EXPECT_EQ(t.aggregate.count, 2u);
}

TEST(Evaluate, FilteredNeverRanksWorseThanRaw) {
    const Fixture fx;
    EvalConfig cfg;
    cfg.lambda = 0.3;
    cfg.k = 16;
    cfg.filtered = true;
    const MetricsReport f = evaluate(fx.model, fx.store, fx.graph, fx.split, fx.vocab, cfg);
    cfg.filtered = false;
    const MetricsReport raw = evaluate(fx.model, fx.store, fx.graph, fx.split, fx.vocab, cfg);
    ASSERT_EQ(f.instances.size(), raw.instances.size());
    for (size_t i = 0; i < f.instances.size(); ++i)
        EXPECT_LE(f.instances[i].rank, raw.instances[i].rank);
}

TEST(Evaluate, LambdaZeroIgnoresTheStore) {
    const Fixture fx;
    EvalConfig cfg;
    cfg.lambda = 0.0;
    const MetricsReport with = evaluate(fx.model, fx.store, fx.graph, fx.split, fx.vocab, cfg);
    KnowledgeStore empty;
    empty.dim = fx.model.config.dim;
    const MetricsReport without =
        evaluate(fx.model, empty, fx.graph, fx.split, fx.vocab, cfg);
    ASSERT_EQ(with.instances.size(), without.instances.size());
    for (size_t i = 0; i < with.instances.size(); ++i)
        EXPECT_EQ(with.instances[i].rank, without.instances[i].rank);

    cfg.lambda = 0.2;
    EXPECT_THROW(evaluate(fx.model, empty, fx.graph, fx.split, fx.vocab, cfg), Error);
}

TEST(Evaluate, StoreDimMismatchFails) {
    const Fixture fx;
    KnowledgeStore wrong;
    wrong.dim = fx.model.config.dim + 8;
    StoreEntry e;
    e.key.assign(wrong.dim, 0.0);
    wrong.entries.push_back(e);
    EvalConfig cfg;
    EXPECT_THROW(evaluate(fx.model, wrong, fx.graph, fx.split, fx.vocab, cfg), Error);
}

TEST(Sweep, GridMatchesPointEvaluations) {
    const Fixture fx;
    EvalConfig base;
    base.filtered = true;
    const std::vector<double> lambdas = {0.0, 0.2, 1.0};
    const std::vector<uint32_t> ks = {1, 2, 4};
    const auto cells =
        sweep(fx.model, fx.store, fx.graph, fx.split, fx.vocab, lambdas, ks, base);
    ASSERT_EQ(cells.size(), 9u);

    for (const SweepCell& c : cells) {
        EvalConfig cfg = base;
        cfg.lambda = c.lambda;
        cfg.k = c.k;
        const MetricsReport direct =
            evaluate(fx.model, fx.store, fx.graph, fx.split, fx.vocab, cfg);
        EXPECT_EQ(c.aggregate.mrr, direct.aggregate.mrr)
            << "lambda " << c.lambda << " k " << c.k;
        EXPECT_EQ(c.aggregate.hits1, direct.aggregate.hits1);
        EXPECT_EQ(c.head.mr, direct.head.mr);
        EXPECT_EQ(c.tail.mr, direct.tail.mr);
    }

    // at lambda 0 the k axis is inert
    const SweepCell& a = cells[0];
    const SweepCell& b = cells[1];
    const SweepCell& c0 = cells[2];
    EXPECT_EQ(a.lambda, 0.0);
    EXPECT_EQ(a.aggregate.mrr, b.aggregate.mrr);
    EXPECT_EQ(a.aggregate.mrr, c0.aggregate.mrr);

    EXPECT_THROW(sweep(fx.model, fx.store, fx.graph, fx.split, fx.vocab, {}, ks, base), Error);
    EXPECT_THROW(sweep(fx.model, fx.store, fx.graph, fx.split, fx.vocab, {0.5}, {0}, base),
                 Error);
    EXPECT_THROW(sweep(fx.model, fx.store, fx.graph, fx.split, fx.vocab, {1.5}, ks, base),
                 Error);
}

TEST(Buckets, PartitionInstancesByGoldFrequency) {
    const Fixture fx;
    EvalConfig cfg;
    cfg.lambda = 0.2;
    cfg.k = 8;
    const MetricsReport r = evaluate(fx.model, fx.store, fx.graph, fx.split, fx.vocab, cfg);
    const FrequencyTable table = entity_frequency(fx.graph, fx.split, {0, 3, 5});
    const auto buckets = bucket_report(r, table);

    uint64_t total = 0;
    for (const BucketMetrics& b : buckets) {
        EXPECT_GT(b.metrics.count, 0u);
        total += b.metrics.count;
    }
    EXPECT_EQ(total, r.instances.size());

    // oracle: recompute one bucket's mean rank by hand
    for (const BucketMetrics& b : buckets) {
        std::vector<double> ranks;
        for (const RankingResult& inst : r.instances)
            if (table.bucket_label(table.bucket_of(table.counts[inst.gold])) == b.label)
                ranks.push_back(inst.rank);
        const Metrics m = summarize_ranks(ranks);
        EXPECT_EQ(m.count, b.metrics.count);
        EXPECT_EQ(m.mrr, b.metrics.mrr);
        EXPECT_EQ(m.mr, b.metrics.mr);
    }
}

TEST(Explain, RecomputesTheInterpolation) {
    const Fixture fx;
    EvalConfig cfg;
    cfg.lambda = 0.4;
    cfg.k = 6;
    const Triple q{0, 1, 0};  // (apple, near, ?)
    const Explanation ex =
        explain_query(fx.model, fx.store, fx.graph, fx.vocab, q, QueryDirection::Tail, cfg, 4);
    EXPECT_EQ(ex.lambda, 0.4);
    EXPECT_EQ(ex.k, 6u);
    ASSERT_LE(ex.neighbors.size(), 6u);
    ASSERT_FALSE(ex.mem_top.empty());
    ASSERT_FALSE(ex.interpolated_top.empty());
    ASSERT_LE(ex.mem_top.size(), 4u);

    // rebuild the same distributions directly
    const EncodedSequence seq = build_tail_query(fx.vocab, 0, fx.graph.descriptions[0], 1,
                                                 fx.graph.relation_labels[1]);
    const std::vector<double> anchor = fx.model.encode(seq);
    const auto hits = dedupe_per_entity(knn_search(fx.store, anchor, 6));
    const InterpolatedDistribution d =
        interpolate(knn_distribution(hits), fx.model.mem_distribution(seq), 0.4);

    for (size_t i = 1; i < ex.interpolated_top.size(); ++i)
        EXPECT_GE(ex.interpolated_top[i - 1].probability, ex.interpolated_top[i].probability);
    const double best = *std::max_element(d.probs.begin(), d.probs.end());
    EXPECT_EQ(ex.interpolated_top[0].probability, best);
    for (const ExplainEntry& e : ex.interpolated_top)
        EXPECT_EQ(e.probability, d.probs[e.entity]);
    for (const ExplainEntry& e : ex.mem_top) EXPECT_EQ(e.probability, d.mem[e.entity]);
    for (const NeighborInfo& n : ex.neighbors) {
        ASSERT_LT(n.entry, fx.store.entries.size());
        EXPECT_EQ(fx.store.entries[n.entry].value, n.entity);
    }
}

TEST(Inductive, UnseenGoldIsUnreachableAtLambdaZeroOnly) {
    Fixture fx;
    // make "fern" (entity 5) unseen: strip it from training and the head
    fx.split.train.assign(fx.graph.triples.begin(), fx.graph.triples.begin() + 5);
    fx.split.valid.clear();
    fx.split.test = {{5, 0, 1}, {0, 1, 5}};
    fx.split.mode = SplitMode::Inductive;
    fx.model.set_candidates({0, 1, 2, 3, 4});
    fx.store = build_store(fx.model, fx.graph, fx.split.train, fx.vocab);

    EvalConfig cfg;
    cfg.lambda = 0.0;
    cfg.k = 64;
    const MetricsReport zero =
        evaluate(fx.model, fx.store, fx.graph, fx.split, fx.vocab, cfg);

    // fern is gold for the head query of the first test triple and the tail
    // query of the second; with zero parametric mass every unfiltered
    // candidate outranks it. The head query filters out the known-true head
    // "apple" of (apple, likes, pea), the tail query filters nothing.
    ASSERT_EQ(zero.instances[1].gold, 5u);
    ASSERT_EQ(zero.instances[2].gold, 5u);
    EXPECT_EQ(zero.instances[1].rank, 5.0);
    EXPECT_EQ(zero.instances[2].rank, 6.0);

    // a store entry voting for fern is enough to reach it at lambda 1
    KnowledgeStore only_fern;
    only_fern.dim = fx.model.config.dim;
    StoreEntry entry;
    entry.key = fx.model.encode(build_description_input(fx.vocab, 5, fx.graph.descriptions[5]));
    entry.value = 5;
    only_fern.entries.push_back(entry);
    only_fern.description_entries = 1;
    cfg.lambda = 1.0;
    const MetricsReport one =
        evaluate(fx.model, only_fern, fx.graph, fx.split, fx.vocab, cfg);
    EXPECT_EQ(one.instances[1].rank, 1.0);
    EXPECT_EQ(one.instances[2].rank, 1.0);
}
