#include <algorithm>
#include <cmath>

#include <gtest/gtest.h>

#include "helpers.hpp"
#include "knnkge/encoder.hpp"
#include "knnkge/rng.hpp"
#include "knnkge/store.hpp"
#include "knnkge/text.hpp"

using namespace knnkge;
using knnkge::testing::TempDir;

namespace {

struct Fixture {
    KnowledgeGraph graph;
    Vocabulary vocab;
    EncoderModel model;

    Fixture() {
        const char* labels[] = {"apple", "pea", "oak", "jay", "mote"};
        const char* descs[] = {"a red round fruit", "a small green thing",
                               "a tall old tree", "a fast blue bird", ""};
        for (int i = 0; i < 5; ++i) {
            graph.intern_entity(labels[i]);
            graph.descriptions[i] = descs[i];
        }
        graph.intern_relation("likes");
        graph.intern_relation("near");
        graph.triples = {{0, 0, 1}, {1, 1, 2}, {2, 0, 3}, {3, 1, 4}, {4, 0, 0}};
        vocab = build_vocabulary(graph, 1, 16);
        expand_entity_vocabulary(vocab, graph.entity_labels);

        ModelConfig mc;
        mc.dim = 8;
        mc.layers = 1;
        mc.heads = 2;
        mc.max_len = 16;
        mc.vocab_size = vocab.size();
        mc.entity_offset = vocab.entity_offset();
        model = EncoderModel::init(mc, {0, 1, 2, 3, 4}, 41);
    }
};

KnowledgeStore random_store(size_t n, uint32_t dim, uint32_t num_entities, uint64_t seed) {
    KnowledgeStore store;
    store.dim = dim;
    Rng rng(seed);
    for (size_t i = 0; i < n; ++i) {
        StoreEntry e;
        e.key.resize(dim);
        for (double& v : e.key) v = rng.gaussian();
        e.value = static_cast<uint32_t>(rng.below(num_entities));
        e.provenance = i % 3 == 0 ? Provenance::Description : Provenance::Triple;
        e.slot = i % 3 == 0 ? MaskSlot::None : (i % 3 == 1 ? MaskSlot::Tail : MaskSlot::Head);
        e.source = static_cast<uint32_t>(i);
        store.entries.push_back(std::move(e));
        (i % 3 == 0 ? store.description_entries : store.triple_entries) += 1;
    }
    return store;
}

// mirror of the search contract, written directly from its definition
std::vector<NeighborHit> brute_force(const KnowledgeStore& store,
                                     const std::vector<double>& anchor, size_t k) {
    std::vector<NeighborHit> all;
    for (size_t i = 0; i < store.entries.size(); ++i) {
        double sq = 0.0;
        for (uint32_t j = 0; j < store.dim; ++j) {
            const double d = anchor[j] - store.entries[i].key[j];
            sq += d * d;
        }
        all.push_back({store.entries[i].value, std::sqrt(sq), i});
    }
    std::sort(all.begin(), all.end(), [](const NeighborHit& a, const NeighborHit& b) {
        if (a.distance != b.distance) return a.distance < b.distance;
        return a.entry < b.entry;
    });
    if (all.size() > k) all.resize(k);
    return all;
}

}  // namespace

TEST(BuildStore, CountsAndLayout) {
    const Fixture fx;
    const KnowledgeStore store = build_store(fx.model, fx.graph, fx.graph.triples, fx.vocab);
    EXPECT_EQ(store.dim, 8u);
    EXPECT_EQ(store.description_entries, 4u);
    EXPECT_EQ(store.triple_entries, 10u);
    EXPECT_EQ(store.skipped_descriptions, 1u);
    ASSERT_EQ(store.entries.size(), 14u);

    // description block first, in entity order, keyed to the entity itself
    for (uint32_t i = 0; i < 4; ++i) {
        EXPECT_EQ(store.entries[i].provenance, Provenance::Description);
        EXPECT_EQ(store.entries[i].value, i);
        EXPECT_EQ(store.entries[i].source, i);
        EXPECT_EQ(store.entries[i].slot, MaskSlot::None);
        EXPECT_EQ(store.entries[i].key.size(), 8u);
    }
    // then tail/head pairs per train triple
    for (size_t t = 0; t < 5; ++t) {
        const StoreEntry& tail = store.entries[4 + 2 * t];
        const StoreEntry& head = store.entries[4 + 2 * t + 1];
        EXPECT_EQ(tail.slot, MaskSlot::Tail);
        EXPECT_EQ(tail.value, fx.graph.triples[t].tail);
        EXPECT_EQ(tail.source, t);
        EXPECT_EQ(tail.provenance, Provenance::Triple);
        EXPECT_EQ(head.slot, MaskSlot::Head);
        EXPECT_EQ(head.value, fx.graph.triples[t].head);
        EXPECT_EQ(head.source, t);
    }

    // keys are reproducible encodings
    const std::vector<double> again = fx.model.encode(
        build_description_input(fx.vocab, 0, fx.graph.descriptions[0]));
    EXPECT_EQ(store.entries[0].key, again);
}

TEST(BuildStore, SourceSelectionFilters) {
    const Fixture fx;
    const KnowledgeStore d =
        build_store(fx.model, fx.graph, fx.graph.triples, fx.vocab, StoreSources::Descriptions);
    EXPECT_EQ(d.entries.size(), 4u);
    EXPECT_EQ(d.triple_entries, 0u);
    const KnowledgeStore t =
        build_store(fx.model, fx.graph, fx.graph.triples, fx.vocab, StoreSources::Triples);
    EXPECT_EQ(t.entries.size(), 10u);
    EXPECT_EQ(t.description_entries, 0u);
}

TEST(BuildStore, FiftyDescriptionsTwoHundredTripleEntries) {
    KnowledgeGraph g;
    for (int i = 0; i < 50; ++i) {
        g.intern_entity("e" + std::to_string(i));
        g.descriptions[i] = "entity number " + std::to_string(i);
    }
    g.intern_relation("r");
    Rng rng(9);
    std::unordered_set<Triple, TripleHash> seen;
    while (g.triples.size() < 100) {
        Triple t{static_cast<uint32_t>(rng.below(50)), 0, static_cast<uint32_t>(rng.below(50))};
        if (seen.insert(t).second) g.triples.push_back(t);
    }
    Vocabulary vocab = build_vocabulary(g, 1, 16);
    expand_entity_vocabulary(vocab, g.entity_labels);
    ModelConfig mc;
    mc.dim = 8;
    mc.layers = 1;
    mc.heads = 2;
    mc.max_len = 16;
    mc.vocab_size = vocab.size();
    mc.entity_offset = vocab.entity_offset();
    std::vector<uint32_t> all(50);
    for (uint32_t e = 0; e < 50; ++e) all[e] = e;
    const EncoderModel m = EncoderModel::init(mc, all, 2);

    const KnowledgeStore store = build_store(m, g, g.triples, vocab);
    EXPECT_EQ(store.description_entries, 50u);
    EXPECT_EQ(store.triple_entries, 200u);
    EXPECT_EQ(store.entries.size(), 250u);
}

TEST(Search, MatchesBruteForceExactly) {
    const KnowledgeStore store = random_store(200, 8, 20, 77);
    Rng rng(78);
    for (int q = 0; q < 20; ++q) {
        std::vector<double> anchor(8);
        for (double& v : anchor) v = rng.gaussian();
        for (size_t k : {size_t{1}, size_t{7}, size_t{64}, size_t{500}}) {
            const auto got = knn_search(store, anchor, k);
            const auto want = brute_force(store, anchor, k);
            ASSERT_EQ(got.size(), want.size());
            for (size_t i = 0; i < got.size(); ++i) {
                EXPECT_EQ(got[i].entry, want[i].entry);
                EXPECT_EQ(got[i].entity, want[i].entity);
                EXPECT_EQ(got[i].distance, want[i].distance);
            }
        }
    }
}

TEST(Search, TiesBreakByEntryIndex) {
    KnowledgeStore store;
    store.dim = 2;
    for (uint32_t i = 0; i < 5; ++i) {
        StoreEntry e;
        e.key = {1.0, 2.0};  // all identical
        e.value = 10 + i;
        e.source = i;
        store.entries.push_back(e);
    }
    const auto hits = knn_search(store, {0.0, 0.0}, 5);
    ASSERT_EQ(hits.size(), 5u);
    for (size_t i = 0; i < 5; ++i) {
        EXPECT_EQ(hits[i].entry, i);
        EXPECT_EQ(hits[i].distance, hits[0].distance);
    }
}

TEST(Search, ValidatesArguments) {
    const KnowledgeStore store = random_store(10, 4, 5, 1);
    const std::vector<double> anchor(4, 0.0);
    EXPECT_THROW(knn_search(store, anchor, 0), Error);
    EXPECT_THROW(knn_search(store, {0.0, 0.0}, 3), Error);
    KnowledgeStore empty;
    empty.dim = 4;
    EXPECT_THROW(knn_search(empty, anchor, 3), Error);
    EXPECT_EQ(knn_search(store, anchor, 99).size(), 10u);
}

TEST(Dedupe, KeepsNearestEntryPerEntity) {
    std::vector<NeighborHit> hits = {
        {7, 0.5, 0}, {3, 0.6, 4}, {7, 0.7, 2}, {9, 0.7, 3}, {3, 0.9, 1}};
    const auto out = dedupe_per_entity(hits);
    ASSERT_EQ(out.size(), 3u);
    EXPECT_EQ(out[0].entity, 7u);
    EXPECT_EQ(out[0].entry, 0u);
    EXPECT_EQ(out[1].entity, 3u);
    EXPECT_EQ(out[1].entry, 4u);
    EXPECT_EQ(out[2].entity, 9u);

    std::vector<NeighborHit> unsorted = {{1, 0.9, 0}, {2, 0.1, 1}};
    EXPECT_THROW(dedupe_per_entity(unsorted), Error);
}

TEST(Dedupe, AgreesWithBruteForceOnRandomLists) {
    Rng rng(5);
    for (int round = 0; round < 1000; ++round) {
        std::vector<NeighborHit> hits;
        const size_t n = 1 + rng.below(30);
        double d = 0.0;
        for (size_t i = 0; i < n; ++i) {
            d += static_cast<double>(rng.below(3)) * 0.25;  // non-decreasing, with ties
            hits.push_back({static_cast<uint32_t>(rng.below(8)), d, i});
        }
        const auto got = dedupe_per_entity(hits);

        // oracle: min distance per entity, order of first appearance
        std::vector<NeighborHit> want;
        std::unordered_set<uint32_t> taken;
        for (const NeighborHit& h : hits)
            if (taken.insert(h.entity).second) want.push_back(h);
        ASSERT_EQ(got.size(), want.size());
        for (size_t i = 0; i < got.size(); ++i) {
            ASSERT_EQ(got[i].entity, want[i].entity);
            ASSERT_EQ(got[i].entry, want[i].entry);
            ASSERT_EQ(got[i].distance, want[i].distance);
        }
    }
}

TEST(Distribution, ArithmeticOnTwoHits) {
    const std::vector<NeighborHit> hits = {{4, 0.0, 0}, {9, 1.0, 1}};
    const auto probs = knn_distribution(hits);
    ASSERT_EQ(probs.size(), 2u);
    EXPECT_EQ(probs[0].first, 4u);
    EXPECT_EQ(probs[1].first, 9u);
    const double ea = std::exp(0.0), eb = std::exp(-1.0);
    EXPECT_EQ(probs[0].second, ea / (ea + eb));
    EXPECT_EQ(probs[1].second, eb / (ea + eb));
    EXPECT_NEAR(probs[0].second, 0.7310585786300049, 1e-15);
    EXPECT_NEAR(probs[1].second, 0.2689414213699951, 1e-15);
}

TEST(Distribution, ShiftInvariantAndNormalized) {
    Rng rng(6);
    for (int round = 0; round < 100; ++round) {
        std::vector<NeighborHit> hits;
        double d = rng.uniform() * 5.0;
        const size_t n = 1 + rng.below(20);
        for (size_t i = 0; i < n; ++i) {
            hits.push_back({static_cast<uint32_t>(i), d, i});
            d += rng.uniform();
        }
        const auto base = knn_distribution(hits);
        double sum = 0.0;
        for (const auto& [e, p] : base) sum += p;
        EXPECT_NEAR(sum, 1.0, 1e-12);
        for (size_t i = 1; i < base.size(); ++i)
            EXPECT_LE(base[i].second, base[i - 1].second + 1e-15);

        std::vector<NeighborHit> shifted = hits;
        for (NeighborHit& h : shifted) h.distance += 100.0;
        const auto moved = knn_distribution(shifted);
        for (size_t i = 0; i < base.size(); ++i)
            EXPECT_NEAR(base[i].second, moved[i].second, 1e-12);
    }
}

TEST(Distribution, RejectsBadInput) {
    EXPECT_THROW(knn_distribution({}), Error);
    const std::vector<NeighborHit> dup = {{4, 0.0, 0}, {4, 1.0, 1}};
    EXPECT_THROW(knn_distribution(dup), Error);
}

TEST(Serialization, BinaryRoundTripIsBitExact) {
    TempDir dir;
    const Fixture fx;
    const KnowledgeStore store = build_store(fx.model, fx.graph, fx.graph.triples, fx.vocab);
    save_store(store, dir.file("s.bin"));
    const KnowledgeStore r = load_store(dir.file("s.bin"));
    EXPECT_EQ(r.dim, store.dim);
    EXPECT_EQ(r.description_entries, store.description_entries);
    EXPECT_EQ(r.triple_entries, store.triple_entries);
    ASSERT_EQ(r.entries.size(), store.entries.size());
    for (size_t i = 0; i < store.entries.size(); ++i) {
        EXPECT_EQ(r.entries[i].value, store.entries[i].value);
        EXPECT_EQ(r.entries[i].provenance, store.entries[i].provenance);
        EXPECT_EQ(r.entries[i].source, store.entries[i].source);
        EXPECT_EQ(r.entries[i].slot, store.entries[i].slot);
        ASSERT_EQ(r.entries[i].key, store.entries[i].key);
    }
}

TEST(Serialization, TextRoundTripStaysWithinTolerance) {
    TempDir dir;
    const KnowledgeStore store = random_store(60, 8, 10, 12);
    save_store_text(store, dir.file("s.txt"));
    const KnowledgeStore r = load_store(dir.file("s.txt"));
    EXPECT_EQ(r.dim, store.dim);
    ASSERT_EQ(r.entries.size(), store.entries.size());
    for (size_t i = 0; i < store.entries.size(); ++i) {
        EXPECT_EQ(r.entries[i].value, store.entries[i].value);
        EXPECT_EQ(r.entries[i].provenance, store.entries[i].provenance);
        EXPECT_EQ(r.entries[i].slot, store.entries[i].slot);
        for (uint32_t j = 0; j < store.dim; ++j)
            ASSERT_NEAR(r.entries[i].key[j], store.entries[i].key[j], 1e-12);
    }
}

TEST(Serialization, EmptyStoreRoundTrips) {
    TempDir dir;
    KnowledgeStore store;
    store.dim = 4;
    save_store(store, dir.file("e.bin"));
    const KnowledgeStore r = load_store(dir.file("e.bin"));
    EXPECT_EQ(r.dim, 4u);
    EXPECT_TRUE(r.entries.empty());
}

TEST(Serialization, RejectsDamage) {
    const KnowledgeStore store = random_store(5, 4, 3, 2);
    const std::string bytes = render_store(store);

    EXPECT_THROW(parse_store("WRONG v1 dim=4 n=0\n"), Error);
    EXPECT_THROW(parse_store(bytes.substr(0, bytes.size() - 3)), Error);
    EXPECT_THROW(parse_store(bytes + "zz"), Error);
    try {
        parse_store(bytes.substr(0, bytes.size() - 3));
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::Format);
    }

    const std::string text = render_store_text(store);
    const size_t tab = text.rfind('\t');
    EXPECT_THROW(parse_store(text.substr(0, tab)), Error);
}
