#pragma once
// Knowledge graphs with entity descriptions: loading from TSV, seeded
// transductive/inductive splits, training subsampling, and entity frequency
// profiles over the training triples.

#include <algorithm>
#include <cstdint>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "knnkge/error.hpp"
#include "knnkge/io.hpp"
#include "knnkge/rng.hpp"

namespace knnkge {

struct Triple {
    uint32_t head = 0;
    uint32_t relation = 0;
    uint32_t tail = 0;

    bool operator==(const Triple& other) const = default;
};

struct TripleHash {
    size_t operator()(const Triple& t) const noexcept {
        uint64_t x = (static_cast<uint64_t>(t.head) << 40) ^
                     (static_cast<uint64_t>(t.relation) << 20) ^ t.tail;
        x ^= x >> 33;
        x *= 0xff51afd7ed558ccdull;
        x ^= x >> 33;
        return static_cast<size_t>(x);
    }
};

// G = (entities, relations, triples, descriptions). Ids are dense and assigned
// in first-appearance order. Immutable after construction.
struct KnowledgeGraph {
    std::vector<std::string> entity_labels;    // id -> label
    std::vector<std::string> relation_labels;  // id -> label
    std::unordered_map<std::string, uint32_t> entity_ids;
    std::unordered_map<std::string, uint32_t> relation_ids;
    std::vector<Triple> triples;
    std::vector<std::string> descriptions;  // one per entity, possibly empty

    // warning tallies from loading
    uint32_t missing_description_count = 0;
    uint32_t duplicate_triple_count = 0;

    uint32_t num_entities() const { return static_cast<uint32_t>(entity_labels.size()); }
    uint32_t num_relations() const { return static_cast<uint32_t>(relation_labels.size()); }

    uint32_t entity(const std::string& label) const {
        auto it = entity_ids.find(label);
        if (it == entity_ids.end()) fail(ErrorKind::Lookup, "unknown entity: " + label);
        return it->second;
    }

    uint32_t relation(const std::string& label) const {
        auto it = relation_ids.find(label);
        if (it == relation_ids.end()) fail(ErrorKind::Lookup, "unknown relation: " + label);
        return it->second;
    }

    uint32_t intern_entity(const std::string& label) {
        auto it = entity_ids.find(label);
        if (it != entity_ids.end()) return it->second;
        const uint32_t id = num_entities();
        entity_ids.emplace(label, id);
        entity_labels.push_back(label);
        descriptions.emplace_back();
        return id;
    }

    uint32_t intern_relation(const std::string& label) {
        auto it = relation_ids.find(label);
        if (it != relation_ids.end()) return it->second;
        const uint32_t id = num_relations();
        relation_ids.emplace(label, id);
        relation_labels.push_back(label);
        return id;
    }
};

enum class SplitMode { Transductive, Inductive };

inline const char* to_string(SplitMode mode) {
    return mode == SplitMode::Transductive ? "transductive" : "inductive";
}

struct DatasetSplit {
    SplitMode mode = SplitMode::Transductive;
    std::vector<Triple> train;
    std::vector<Triple> valid;
    std::vector<Triple> test;
};

struct SplitFractions {
    double train = 0.8;
    double valid = 0.1;
    double test = 0.1;
};

namespace detail {

inline void parse_triple_lines(const std::string& path, KnowledgeGraph& graph,
                               std::vector<Triple>& out, uint32_t& dup_count,
                               std::unordered_set<Triple, TripleHash>& seen) {
    const std::string text = read_file(path);
    const auto lines = split_lines(text);
    for (size_t i = 0; i < lines.size(); ++i) {
        if (lines[i].empty()) continue;
        const auto fields = split_on(lines[i], '\t');
        if (fields.size() != 3)
            fail(ErrorKind::Parse, path + ":" + std::to_string(i + 1) +
                                       ": expected 3 tab-separated fields, got " +
                                       std::to_string(fields.size()));
        if (fields[0].empty() || fields[1].empty() || fields[2].empty())
            fail(ErrorKind::Parse,
                 path + ":" + std::to_string(i + 1) + ": empty label");
        Triple t;
        t.head = graph.intern_entity(fields[0]);
        t.relation = graph.intern_relation(fields[1]);
        t.tail = graph.intern_entity(fields[2]);
        if (!seen.insert(t).second) {
            ++dup_count;
            continue;
        }
        out.push_back(t);
    }
}

inline void parse_description_file(const std::string& path, KnowledgeGraph& graph) {
    const std::string text = read_file(path);
    const auto lines = split_lines(text);
    std::unordered_set<uint32_t> described;
    for (size_t i = 0; i < lines.size(); ++i) {
        if (lines[i].empty()) continue;
        const auto fields = split_on(lines[i], '\t');
        if (fields.size() != 2)
            fail(ErrorKind::Parse, path + ":" + std::to_string(i + 1) +
                                       ": expected 2 tab-separated fields, got " +
                                       std::to_string(fields.size()));
        if (fields[0].empty())
            fail(ErrorKind::Parse, path + ":" + std::to_string(i + 1) + ": empty entity label");
        // entities described but absent from the triples are kept; they can
        // still enter the knowledge store via their description
        const uint32_t id = graph.intern_entity(fields[0]);
        if (!described.insert(id).second)
            fail(ErrorKind::Conflict, path + ":" + std::to_string(i + 1) +
                                          ": duplicate description for entity '" + fields[0] + "'");
        graph.descriptions[id] = fields[1];
    }
    for (uint32_t e = 0; e < graph.num_entities(); ++e)
        if (graph.descriptions[e].empty() && !described.count(e))
            ++graph.missing_description_count;
}

// Moves any triple in `list` whose head or tail is absent from `covered` into
// `train`, updating coverage as it goes. Coverage only grows, so one ordered
// pass suffices.
inline void repair_coverage(std::vector<Triple>& list, std::vector<Triple>& train,
                            std::unordered_set<uint32_t>& covered) {
    std::vector<Triple> kept;
    kept.reserve(list.size());
    for (const Triple& t : list) {
        if (covered.count(t.head) && covered.count(t.tail)) {
            kept.push_back(t);
        } else {
            train.push_back(t);
            covered.insert(t.head);
            covered.insert(t.tail);
        }
    }
    list = std::move(kept);
}

}  // namespace detail

// Loads a graph from a TSV triples file (head<TAB>relation<TAB>tail) and a
// descriptions file (entity<TAB>text). Exact duplicate triples collapse with a
// warning count; entities without a description row get empty text.
inline KnowledgeGraph load_graph(const std::string& triples_path,
                                 const std::string& descriptions_path) {
    KnowledgeGraph graph;
    std::unordered_set<Triple, TripleHash> seen;
    detail::parse_triple_lines(triples_path, graph, graph.triples,
                               graph.duplicate_triple_count, seen);
    if (graph.triples.empty())
        fail(ErrorKind::Parse, triples_path + ": empty graph");
    detail::parse_description_file(descriptions_path, graph);
    return graph;
}

// Loads pre-made split files sharing one descriptions file. Ids are assigned
// in first-appearance order scanning train, valid, test. A triple repeated
// within one file collapses with a warning; a triple appearing in two
// different files is a conflict. The mode is inferred from entity coverage.
inline std::pair<KnowledgeGraph, DatasetSplit> load_premade_split(
    const std::string& train_path, const std::string& valid_path,
    const std::string& test_path, const std::string& descriptions_path) {
    KnowledgeGraph graph;
    DatasetSplit split;
    std::unordered_set<Triple, TripleHash> earlier;
    const struct {
        const std::string* path;
        std::vector<Triple>* list;
    } parts[] = {{&train_path, &split.train}, {&valid_path, &split.valid}, {&test_path, &split.test}};
    for (const auto& part : parts) {
        std::unordered_set<Triple, TripleHash> local;
        detail::parse_triple_lines(*part.path, graph, *part.list,
                                   graph.duplicate_triple_count, local);
        for (const Triple& t : *part.list)
            if (earlier.count(t))
                fail(ErrorKind::Conflict,
                     *part.path + ": triple already present in another split file");
        earlier.insert(local.begin(), local.end());
    }

    graph.triples.reserve(earlier.size());
    for (const auto& list : {split.train, split.valid, split.test})
        graph.triples.insert(graph.triples.end(), list.begin(), list.end());
    if (graph.triples.empty()) fail(ErrorKind::Parse, train_path + ": empty graph");
    detail::parse_description_file(descriptions_path, graph);

    std::unordered_set<uint32_t> covered;
    for (const Triple& t : split.train) {
        covered.insert(t.head);
        covered.insert(t.tail);
    }
    split.mode = SplitMode::Transductive;
    for (const auto& list : {split.valid, split.test})
        for (const Triple& t : list)
            if (!covered.count(t.head) || !covered.count(t.tail))
                split.mode = SplitMode::Inductive;
    return {std::move(graph), std::move(split)};
}

// Seeded split generation. Transductive mode guarantees every valid/test
// entity occurs in at least one train triple by moving uncovered triples back
// into train. Inductive mode holds out a seeded entity subset sized by the
// test fraction and routes all their triples to test.
inline DatasetSplit make_split(const KnowledgeGraph& graph, SplitFractions fractions,
                               SplitMode mode, uint64_t seed) {
    if (!(fractions.train > 0.0) || !(fractions.valid > 0.0) || !(fractions.test > 0.0))
        fail(ErrorKind::Argument, "split fractions must be positive");
    const double sum = fractions.train + fractions.valid + fractions.test;
    if (std::abs(sum - 1.0) > 1e-9)
        fail(ErrorKind::Argument, "split fractions must sum to 1");
    if (graph.triples.empty()) fail(ErrorKind::Argument, "cannot split an empty graph");

    const size_t n = graph.triples.size();
    Rng rng(seed);
    DatasetSplit split;
    split.mode = mode;

    if (mode == SplitMode::Transductive) {
        std::vector<size_t> order(n);
        for (size_t i = 0; i < n; ++i) order[i] = i;
        rng.shuffle(order);
        size_t n_train = static_cast<size_t>(std::llround(fractions.train * static_cast<double>(n)));
        size_t n_valid = static_cast<size_t>(std::llround(fractions.valid * static_cast<double>(n)));
        n_train = std::min(n_train, n);
        n_valid = std::min(n_valid, n - n_train);
        for (size_t i = 0; i < n; ++i) {
            const Triple& t = graph.triples[order[i]];
            if (i < n_train)
                split.train.push_back(t);
            else if (i < n_train + n_valid)
                split.valid.push_back(t);
            else
                split.test.push_back(t);
        }
        std::unordered_set<uint32_t> covered;
        for (const Triple& t : split.train) {
            covered.insert(t.head);
            covered.insert(t.tail);
        }
        detail::repair_coverage(split.valid, split.train, covered);
        detail::repair_coverage(split.test, split.train, covered);
        return split;
    }

    // inductive: hold out round(test fraction * |active entities|) entities
    std::vector<uint32_t> active;
    {
        std::vector<char> seen(graph.num_entities(), 0);
        for (const Triple& t : graph.triples) {
            seen[t.head] = 1;
            seen[t.tail] = 1;
        }
        for (uint32_t e = 0; e < graph.num_entities(); ++e)
            if (seen[e]) active.push_back(e);
    }
    rng.shuffle(active);
    const size_t target =
        std::max<size_t>(1, static_cast<size_t>(std::llround(
                                fractions.test * static_cast<double>(active.size()))));

    std::vector<char> held(graph.num_entities(), 0);
    std::vector<char> routed(n, 0);
    size_t routed_count = 0;
    size_t held_count = 0;
    for (uint32_t e : active) {
        if (held_count == target) break;
        size_t would_route = 0;
        for (size_t i = 0; i < n; ++i)
            if (!routed[i] && (graph.triples[i].head == e || graph.triples[i].tail == e))
                ++would_route;
        if (would_route == 0) continue;                       // entity already fully routed
        if (n - routed_count - would_route == 0) continue;    // would empty the train side
        for (size_t i = 0; i < n; ++i)
            if (!routed[i] && (graph.triples[i].head == e || graph.triples[i].tail == e))
                routed[i] = 1;
        routed_count += would_route;
        held[e] = 1;
        ++held_count;
    }
    if (held_count == 0)
        fail(ErrorKind::Infeasible, "inductive split infeasible: no entity can be held out");

    for (size_t i = 0; i < n; ++i)
        if (routed[i]) split.test.push_back(graph.triples[i]);

    std::vector<size_t> rest;
    for (size_t i = 0; i < n; ++i)
        if (!routed[i]) rest.push_back(i);
    rng.shuffle(rest);
    size_t n_valid = static_cast<size_t>(std::llround(fractions.valid * static_cast<double>(n)));
    if (n_valid >= rest.size()) n_valid = rest.size() - 1;
    for (size_t i = 0; i < rest.size(); ++i) {
        const Triple& t = graph.triples[rest[i]];
        if (i < n_valid)
            split.valid.push_back(t);
        else
            split.train.push_back(t);
    }
    std::unordered_set<uint32_t> covered;
    for (const Triple& t : split.train) {
        covered.insert(t.head);
        covered.insert(t.tail);
    }
    detail::repair_coverage(split.valid, split.train, covered);
    return split;
}

// Returns the entity ids held out by an inductive split: entities that occur
// in test triples but in no train triple.
inline std::vector<uint32_t> heldout_entities(const KnowledgeGraph& graph,
                                              const DatasetSplit& split) {
    std::vector<char> in_train(graph.num_entities(), 0);
    for (const Triple& t : split.train) {
        in_train[t.head] = 1;
        in_train[t.tail] = 1;
    }
    std::vector<char> flagged(graph.num_entities(), 0);
    std::vector<uint32_t> out;
    for (const Triple& t : split.test)
        for (uint32_t e : {t.head, t.tail})
            if (!in_train[e] && !flagged[e]) {
                flagged[e] = 1;
                out.push_back(e);
            }
    std::sort(out.begin(), out.end());
    return out;
}

// Keeps a seeded uniform subset of round(fraction * |train|) training triples,
// preserving their original relative order. Valid and test are untouched.
inline DatasetSplit subsample_training(const DatasetSplit& split, double fraction,
                                       uint64_t seed) {
    if (!(fraction > 0.0) || fraction > 1.0)
        fail(ErrorKind::Argument, "subsample fraction must be in (0, 1]");
    if (fraction == 1.0) return split;
    DatasetSplit out = split;
    const size_t n = split.train.size();
    const size_t keep =
        static_cast<size_t>(std::llround(fraction * static_cast<double>(n)));
    std::vector<size_t> order(n);
    for (size_t i = 0; i < n; ++i) order[i] = i;
    Rng rng(seed);
    rng.shuffle(order);
    order.resize(keep);
    std::sort(order.begin(), order.end());
    out.train.clear();
    out.train.reserve(keep);
    for (size_t i : order) out.train.push_back(split.train[i]);
    return out;
}

// Per-entity occurrence counts over train triples, with half-open frequency
// buckets [b_i, b_{i+1}) partitioning [0, inf).
struct FrequencyTable {
    std::vector<uint64_t> counts;      // per entity id
    std::vector<uint64_t> boundaries;  // ascending, first element 0

    size_t num_buckets() const { return boundaries.size(); }

    size_t bucket_of(uint64_t count) const {
        size_t b = 0;
        while (b + 1 < boundaries.size() && count >= boundaries[b + 1]) ++b;
        return b;
    }

    std::string bucket_label(size_t b) const {
        if (b + 1 < boundaries.size())
            return "[" + std::to_string(boundaries[b]) + "," +
                   std::to_string(boundaries[b + 1]) + ")";
        return ">=" + std::to_string(boundaries[b]);
    }
};

inline FrequencyTable entity_frequency(const KnowledgeGraph& graph,
                                       const DatasetSplit& split,
                                       const std::vector<uint64_t>& boundaries) {
    if (boundaries.empty()) fail(ErrorKind::Argument, "bucket boundaries must be non-empty");
    if (boundaries.front() != 0)
        fail(ErrorKind::Argument, "bucket boundaries must start at 0");
    for (size_t i = 1; i < boundaries.size(); ++i)
        if (boundaries[i] <= boundaries[i - 1])
            fail(ErrorKind::Argument, "bucket boundaries must be strictly ascending");
    FrequencyTable table;
    table.boundaries = boundaries;
    table.counts.assign(graph.num_entities(), 0);
    for (const Triple& t : split.train) {
        ++table.counts[t.head];
        ++table.counts[t.tail];
    }
    return table;
}

// ---- split persistence (three triple files + shared descriptions) ----

inline std::string render_triples(const KnowledgeGraph& graph,
                                  const std::vector<Triple>& triples) {
    std::string out;
    for (const Triple& t : triples) {
        out += graph.entity_labels[t.head];
        out += '\t';
        out += graph.relation_labels[t.relation];
        out += '\t';
        out += graph.entity_labels[t.tail];
        out += '\n';
    }
    return out;
}

inline std::string render_descriptions(const KnowledgeGraph& graph) {
    std::string out;
    for (uint32_t e = 0; e < graph.num_entities(); ++e) {
        out += graph.entity_labels[e];
        out += '\t';
        out += graph.descriptions[e];
        out += '\n';
    }
    return out;
}

}  // namespace knnkge
