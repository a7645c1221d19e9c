#pragma once
// Interpolated link-prediction inference and the evaluation protocol:
// filtered average-over-ties ranking, Hits@{1,3,10}, MR, MRR, per-direction
// and per-frequency-bucket breakdowns, grid sweeps, and query explanations.

#include <algorithm>
#include <cstdint>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <utility>
#include <vector>

#include "knnkge/encoder.hpp"
#include "knnkge/error.hpp"
#include "knnkge/kg.hpp"
#include "knnkge/store.hpp"
#include "knnkge/text.hpp"

namespace knnkge {

enum class QueryDirection : uint8_t { Head, Tail };

inline const char* to_string(QueryDirection d) {
    return d == QueryDirection::Head ? "head" : "tail";
}

struct EvalConfig {
    double lambda = 0.2;
    uint32_t k = 64;
    bool filtered = true;
    bool eval_heads = true;
    bool eval_tails = true;

    void validate() const {
        if (!(lambda >= 0.0 && lambda <= 1.0))
            fail(ErrorKind::Argument, "lambda must lie in [0, 1]");
        if (k < 1) fail(ErrorKind::Argument, "k must be >= 1");
        if (!eval_heads && !eval_tails)
            fail(ErrorKind::Argument, "at least one query direction must be enabled");
    }
};

struct InterpolatedDistribution {
    std::vector<double> probs;                      // dense over all entities
    std::vector<double> mem;                        // the parametric component
    std::vector<std::pair<uint32_t, double>> knn;   // the retrieved component
};

// p(e) = lambda * p_knn(e) + (1 - lambda) * p_mem(e), with p_knn zero off its
// support. At lambda 0 the result is bitwise equal to p_mem, at lambda 1 to
// the padded p_knn.
inline InterpolatedDistribution interpolate(
    const std::vector<std::pair<uint32_t, double>>& p_knn, std::vector<double> p_mem,
    double lambda) {
    if (!(lambda >= 0.0 && lambda <= 1.0))
        fail(ErrorKind::Argument, "lambda must lie in [0, 1]");
    InterpolatedDistribution out;
    out.probs.assign(p_mem.size(), 0.0);
    const double keep = 1.0 - lambda;
    for (size_t e = 0; e < p_mem.size(); ++e) out.probs[e] = keep * p_mem[e];
    for (const auto& [entity, p] : p_knn) {
        if (entity >= p_mem.size())
            fail(ErrorKind::Argument, "neighbor entity beyond the entity count");
        out.probs[entity] += lambda * p;
    }
    out.mem = std::move(p_mem);
    out.knn = p_knn;
    return out;
}

struct RankingResult {
    Triple query{0, 0, 0};
    QueryDirection direction = QueryDirection::Tail;
    uint32_t gold = 0;
    double rank = 1.0;  // average-over-ties, so halves are possible
    bool filtered = true;
};

// rank = 1 + #{better} + #{equal, not gold}/2 over the unfiltered candidates.
inline double rank_entities(const std::vector<double>& probs, uint32_t gold,
                            const std::unordered_set<uint32_t>& filter_out) {
    if (gold >= probs.size()) fail(ErrorKind::Argument, "gold entity out of range");
    if (filter_out.count(gold))
        fail(ErrorKind::Argument, "gold entity must not be filtered out");
    const double pg = probs[gold];
    size_t better = 0, equal = 0;
    for (uint32_t e = 0; e < probs.size(); ++e) {
        if (e == gold || filter_out.count(e)) continue;
        if (probs[e] > pg)
            ++better;
        else if (probs[e] == pg)
            ++equal;
    }
    return 1.0 + static_cast<double>(better) + static_cast<double>(equal) / 2.0;
}

struct Metrics {
    double hits1 = 0.0, hits3 = 0.0, hits10 = 0.0;
    double mr = 0.0, mrr = 0.0;
    uint64_t count = 0;
};

// Plain means in instance order; empty input yields a zeroed record.
inline Metrics summarize_ranks(const std::vector<double>& ranks) {
    Metrics m;
    m.count = ranks.size();
    if (ranks.empty()) return m;
    for (double r : ranks) {
        m.hits1 += r <= 1.0 ? 1.0 : 0.0;
        m.hits3 += r <= 3.0 ? 1.0 : 0.0;
        m.hits10 += r <= 10.0 ? 1.0 : 0.0;
        m.mr += r;
        m.mrr += 1.0 / r;
    }
    const double n = static_cast<double>(ranks.size());
    m.hits1 /= n;
    m.hits3 /= n;
    m.hits10 /= n;
    m.mr /= n;
    m.mrr /= n;
    return m;
}

struct MetricsReport {
    Metrics aggregate, head, tail;
    std::vector<RankingResult> instances;
    EvalConfig config;
};

namespace detail {

// Known-true answers per query side, over train + valid + test, for filtering.
struct FilterIndex {
    std::unordered_map<uint64_t, std::vector<uint32_t>> tails_of;  // (head, rel) -> tails
    std::unordered_map<uint64_t, std::vector<uint32_t>> heads_of;  // (tail, rel) -> heads

    static uint64_t key(uint32_t entity, uint32_t relation) {
        return (static_cast<uint64_t>(entity) << 32) | relation;
    }

    explicit FilterIndex(const DatasetSplit& split) {
        for (const std::vector<Triple>* part : {&split.train, &split.valid, &split.test}) {
            for (const Triple& t : *part) {
                tails_of[key(t.head, t.relation)].push_back(t.tail);
                heads_of[key(t.tail, t.relation)].push_back(t.head);
            }
        }
    }

    std::unordered_set<uint32_t> filter_for(const Triple& t, QueryDirection dir,
                                            uint32_t gold) const {
        std::unordered_set<uint32_t> out;
        const auto& index = dir == QueryDirection::Tail ? tails_of : heads_of;
        const uint64_t at = dir == QueryDirection::Tail ? key(t.head, t.relation)
                                                        : key(t.tail, t.relation);
        auto it = index.find(at);
        if (it != index.end())
            for (uint32_t e : it->second)
                if (e != gold) out.insert(e);
        return out;
    }
};

}  // namespace detail

// Everything about one query instance that does not depend on (lambda, k):
// the parametric distribution, the k_max nearest raw hits, and the filter.
// Because raw hits ascend by (distance, entry), the first j of them equal a
// search with k = j, which lets sweeps reuse one retrieval pass.
struct PreparedQuery {
    Triple triple{0, 0, 0};
    QueryDirection direction = QueryDirection::Tail;
    uint32_t gold = 0;
    std::vector<double> mem;
    std::vector<NeighborHit> hits;
    std::unordered_set<uint32_t> filter;
};

inline std::vector<PreparedQuery> prepare_queries(const EncoderModel& model,
                                                  const KnowledgeStore& store,
                                                  const KnowledgeGraph& graph,
                                                  const DatasetSplit& split,
                                                  const Vocabulary& vocab, uint32_t k_max,
                                                  bool filtered, bool eval_heads,
                                                  bool eval_tails) {
    if (!store.entries.empty() && store.dim != model.config.dim)
        fail(ErrorKind::Config, "store dim " + std::to_string(store.dim) +
                                    " does not match model dim " +
                                    std::to_string(model.config.dim));
    const detail::FilterIndex index(split);
    std::vector<PreparedQuery> out;
    out.reserve(split.test.size() * 2);
    for (const Triple& t : split.test) {
        for (QueryDirection dir : {QueryDirection::Tail, QueryDirection::Head}) {
            if (dir == QueryDirection::Tail && !eval_tails) continue;
            if (dir == QueryDirection::Head && !eval_heads) continue;
            const EncodedSequence seq =
                dir == QueryDirection::Tail
                    ? build_tail_query(vocab, t.head, graph.descriptions[t.head], t.relation,
                                       graph.relation_labels[t.relation])
                    : build_head_query(vocab, t.relation, graph.relation_labels[t.relation],
                                       t.tail, graph.descriptions[t.tail]);
            PreparedQuery q;
            q.triple = t;
            q.direction = dir;
            q.gold = dir == QueryDirection::Tail ? t.tail : t.head;
            const std::vector<double> anchor = model.encode(seq);
            const std::vector<double> probs = model.candidate_probs(anchor.data());
            q.mem.assign(model.config.num_entities(), 0.0);
            for (size_t c = 0; c < probs.size(); ++c)
                q.mem[model.mem_candidates[c]] = probs[c];
            if (!store.entries.empty()) q.hits = knn_search(store, anchor, k_max);
            if (filtered) q.filter = index.filter_for(t, dir, q.gold);
            out.push_back(std::move(q));
        }
    }
    return out;
}

// Scores one prepared query at a given (lambda, k); k is clamped to the
// prepared hit count.
inline InterpolatedDistribution score_query(const PreparedQuery& q, double lambda,
                                            uint32_t k) {
    if (q.hits.empty()) {
        if (lambda > 0.0)
            fail(ErrorKind::Config, "lambda > 0 requires a non-empty knowledge store");
        InterpolatedDistribution d;
        d.probs = q.mem;
        d.mem = q.mem;
        return d;
    }
    const size_t keep = std::min<size_t>(k, q.hits.size());
    const std::vector<NeighborHit> window(q.hits.begin(),
                                          q.hits.begin() + static_cast<ptrdiff_t>(keep));
    return interpolate(knn_distribution(dedupe_per_entity(window)), q.mem, lambda);
}

namespace detail {

inline MetricsReport report_from(const std::vector<PreparedQuery>& queries,
                                 const EvalConfig& cfg) {
    MetricsReport report;
    report.config = cfg;
    std::vector<double> all, head, tail;
    for (const PreparedQuery& q : queries) {
        const InterpolatedDistribution dist = score_query(q, cfg.lambda, cfg.k);
        RankingResult r;
        r.query = q.triple;
        r.direction = q.direction;
        r.gold = q.gold;
        r.filtered = cfg.filtered;
        r.rank = rank_entities(dist.probs, q.gold, q.filter);
        all.push_back(r.rank);
        (q.direction == QueryDirection::Head ? head : tail).push_back(r.rank);
        report.instances.push_back(r);
    }
    report.aggregate = summarize_ranks(all);
    report.head = summarize_ranks(head);
    report.tail = summarize_ranks(tail);
    return report;
}

}  // namespace detail

inline MetricsReport evaluate(const EncoderModel& model, const KnowledgeStore& store,
                              const KnowledgeGraph& graph, const DatasetSplit& split,
                              const Vocabulary& vocab, const EvalConfig& cfg) {
    cfg.validate();
    const std::vector<PreparedQuery> queries = prepare_queries(
        model, store, graph, split, vocab, cfg.k, cfg.filtered, cfg.eval_heads, cfg.eval_tails);
    return detail::report_from(queries, cfg);
}

struct SweepCell {
    double lambda = 0.0;
    uint32_t k = 1;
    Metrics aggregate, head, tail;
};

// One evaluation per (lambda, k) cell, sharing anchors, parametric
// distributions and one retrieval pass at max(ks) across the grid.
inline std::vector<SweepCell> sweep(const EncoderModel& model, const KnowledgeStore& store,
                                    const KnowledgeGraph& graph, const DatasetSplit& split,
                                    const Vocabulary& vocab, const std::vector<double>& lambdas,
                                    const std::vector<uint32_t>& ks, const EvalConfig& base) {
    if (lambdas.empty() || ks.empty())
        fail(ErrorKind::Argument, "sweep needs at least one lambda and one k");
    for (double l : lambdas)
        if (!(l >= 0.0 && l <= 1.0)) fail(ErrorKind::Argument, "lambda must lie in [0, 1]");
    for (uint32_t k : ks)
        if (k < 1) fail(ErrorKind::Argument, "k must be >= 1");

    const uint32_t k_max = *std::max_element(ks.begin(), ks.end());
    const std::vector<PreparedQuery> queries = prepare_queries(
        model, store, graph, split, vocab, k_max, base.filtered, base.eval_heads,
        base.eval_tails);
    std::vector<SweepCell> cells;
    for (double lambda : lambdas) {
        for (uint32_t k : ks) {
            EvalConfig cfg = base;
            cfg.lambda = lambda;
            cfg.k = k;
            const MetricsReport r = detail::report_from(queries, cfg);
            cells.push_back({lambda, k, r.aggregate, r.head, r.tail});
        }
    }
    return cells;
}

struct BucketMetrics {
    std::string label;
    uint64_t lower = 0;  // inclusive train-count bound of the bucket
    Metrics metrics;
};

// Buckets every instance by its gold entity's train frequency. Buckets with
// no instances are omitted rather than reported as zeros.
inline std::vector<BucketMetrics> bucket_report(const MetricsReport& report,
                                                const FrequencyTable& table) {
    std::vector<std::vector<double>> ranks(table.boundaries.size());
    for (const RankingResult& r : report.instances) {
        const size_t b = table.bucket_of(table.counts[r.gold]);
        ranks[b].push_back(r.rank);
    }
    std::vector<BucketMetrics> out;
    for (size_t b = 0; b < ranks.size(); ++b) {
        if (ranks[b].empty()) continue;
        out.push_back({table.bucket_label(b), table.boundaries[b], summarize_ranks(ranks[b])});
    }
    return out;
}

struct ExplainEntry {
    uint32_t entity = 0;
    double probability = 0.0;
};

struct NeighborInfo {
    uint32_t entity = 0;
    double distance = 0.0;
    Provenance provenance = Provenance::Description;
    uint32_t source = 0;
    MaskSlot slot = MaskSlot::None;
    size_t entry = 0;
};

struct Explanation {
    Triple query{0, 0, 0};
    QueryDirection direction = QueryDirection::Tail;
    double lambda = 0.0;
    uint32_t k = 1;
    std::vector<ExplainEntry> mem_top, knn_top, interpolated_top;
    std::vector<NeighborInfo> neighbors;  // deduped hits in retrieval order
};

namespace detail {

inline std::vector<ExplainEntry> top_entities(const std::vector<double>& probs, size_t n) {
    std::vector<uint32_t> order(probs.size());
    for (uint32_t e = 0; e < probs.size(); ++e) order[e] = e;
    const size_t keep = std::min(n, order.size());
    std::partial_sort(order.begin(), order.begin() + static_cast<ptrdiff_t>(keep), order.end(),
                      [&probs](uint32_t a, uint32_t b) {
                          if (probs[a] != probs[b]) return probs[a] > probs[b];
                          return a < b;
                      });
    std::vector<ExplainEntry> out;
    for (size_t i = 0; i < keep; ++i) out.push_back({order[i], probs[order[i]]});
    return out;
}

}  // namespace detail

inline Explanation explain_query(const EncoderModel& model, const KnowledgeStore& store,
                                 const KnowledgeGraph& graph, const Vocabulary& vocab,
                                 const Triple& query, QueryDirection direction,
                                 const EvalConfig& cfg, size_t top_n) {
    cfg.validate();
    if (top_n < 1) fail(ErrorKind::Argument, "top_n must be >= 1");
    if (!store.entries.empty() && store.dim != model.config.dim)
        fail(ErrorKind::Config, "store dim does not match model dim");

    const EncodedSequence seq =
        direction == QueryDirection::Tail
            ? build_tail_query(vocab, query.head, graph.descriptions[query.head],
                               query.relation, graph.relation_labels[query.relation])
            : build_head_query(vocab, query.relation, graph.relation_labels[query.relation],
                               query.tail, graph.descriptions[query.tail]);

    PreparedQuery q;
    q.triple = query;
    q.direction = direction;
    const std::vector<double> anchor = model.encode(seq);
    const std::vector<double> probs = model.candidate_probs(anchor.data());
    q.mem.assign(model.config.num_entities(), 0.0);
    for (size_t c = 0; c < probs.size(); ++c) q.mem[model.mem_candidates[c]] = probs[c];
    if (!store.entries.empty()) q.hits = knn_search(store, anchor, cfg.k);

    Explanation ex;
    ex.query = query;
    ex.direction = direction;
    ex.lambda = cfg.lambda;
    ex.k = cfg.k;
    const InterpolatedDistribution dist = score_query(q, cfg.lambda, cfg.k);
    ex.mem_top = detail::top_entities(dist.mem, top_n);
    ex.interpolated_top = detail::top_entities(dist.probs, top_n);

    std::vector<double> knn_dense(q.mem.size(), 0.0);
    for (const auto& [entity, p] : dist.knn) knn_dense[entity] = p;
    ex.knn_top = detail::top_entities(knn_dense, top_n);

    if (!q.hits.empty()) {
        for (const NeighborHit& h : dedupe_per_entity(q.hits)) {
            const StoreEntry& e = store.entries[h.entry];
            ex.neighbors.push_back({h.entity, h.distance, e.provenance, e.source, e.slot,
                                    h.entry});
        }
    }
    return ex;
}

}  // namespace knnkge
