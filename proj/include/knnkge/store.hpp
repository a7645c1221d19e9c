#pragma once
// Explicit entity memory. Keys are anchor embeddings of masked inputs, values
// are entity ids. Retrieval is exact k-nearest-neighbor under Euclidean
// distance with deterministic tie-breaking by entry index.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <sstream>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "knnkge/encoder.hpp"
#include "knnkge/error.hpp"
#include "knnkge/io.hpp"
#include "knnkge/kg.hpp"
#include "knnkge/text.hpp"

namespace knnkge {

enum class Provenance : uint8_t { Description, Triple };
enum class MaskSlot : uint8_t { None, Tail, Head };

inline char provenance_code(Provenance p) { return p == Provenance::Description ? 'D' : 'T'; }
inline char slot_code(MaskSlot s) {
    return s == MaskSlot::None ? '-' : (s == MaskSlot::Tail ? 'T' : 'H');
}

struct StoreEntry {
    std::vector<double> key;
    uint32_t value = 0;  // entity id this entry votes for
    Provenance provenance = Provenance::Description;
    uint32_t source = 0;  // entity id for descriptions, train-triple index otherwise
    MaskSlot slot = MaskSlot::None;
};

struct NeighborHit {
    uint32_t entity = 0;
    double distance = 0.0;
    size_t entry = 0;  // index into the store's entry list
};

struct KnowledgeStore {
    uint32_t dim = 0;
    std::vector<StoreEntry> entries;
    uint32_t description_entries = 0;
    uint32_t triple_entries = 0;
    uint32_t skipped_descriptions = 0;  // entities with empty text, not representable here
};

enum class StoreSources : uint8_t { Both, Descriptions, Triples };

// One entry per described entity, in entity-id order. Held-out entities are
// included on purpose: their description keys are the only way retrieval can
// reach them.
inline std::vector<StoreEntry> build_store_descriptions(const EncoderModel& model,
                                                        const KnowledgeGraph& graph,
                                                        const Vocabulary& vocab,
                                                        uint32_t* skipped = nullptr) {
    std::vector<StoreEntry> out;
    uint32_t skip_count = 0;
    for (uint32_t e = 0; e < graph.num_entities(); ++e) {
        if (graph.descriptions[e].empty()) {
            ++skip_count;
            continue;
        }
        StoreEntry entry;
        entry.key = model.encode(build_description_input(vocab, e, graph.descriptions[e]));
        entry.value = e;
        entry.provenance = Provenance::Description;
        entry.source = e;
        entry.slot = MaskSlot::None;
        out.push_back(std::move(entry));
    }
    if (skipped) *skipped = skip_count;
    return out;
}

// Two entries per train triple, tail slot first: the masked-tail query keyed
// to the tail entity and the masked-head query keyed to the head entity.
inline std::vector<StoreEntry> build_store_triples(const EncoderModel& model,
                                                   const KnowledgeGraph& graph,
                                                   const std::vector<Triple>& train,
                                                   const Vocabulary& vocab) {
    std::vector<StoreEntry> out;
    out.reserve(train.size() * 2);
    for (size_t i = 0; i < train.size(); ++i) {
        const Triple& t = train[i];
        StoreEntry tail;
        tail.key = model.encode(build_tail_query(vocab, t.head, graph.descriptions[t.head],
                                                 t.relation, graph.relation_labels[t.relation]));
        tail.value = t.tail;
        tail.provenance = Provenance::Triple;
        tail.source = static_cast<uint32_t>(i);
        tail.slot = MaskSlot::Tail;
        out.push_back(std::move(tail));

        StoreEntry head;
        head.key = model.encode(build_head_query(vocab, t.relation,
                                                 graph.relation_labels[t.relation], t.tail,
                                                 graph.descriptions[t.tail]));
        head.value = t.head;
        head.provenance = Provenance::Triple;
        head.source = static_cast<uint32_t>(i);
        head.slot = MaskSlot::Head;
        out.push_back(std::move(head));
    }
    return out;
}

inline KnowledgeStore build_store(const EncoderModel& model, const KnowledgeGraph& graph,
                                  const std::vector<Triple>& train, const Vocabulary& vocab,
                                  StoreSources sources = StoreSources::Both) {
    KnowledgeStore store;
    store.dim = model.config.dim;
    if (sources != StoreSources::Triples) {
        std::vector<StoreEntry> desc =
            build_store_descriptions(model, graph, vocab, &store.skipped_descriptions);
        store.description_entries = static_cast<uint32_t>(desc.size());
        store.entries.insert(store.entries.end(), std::make_move_iterator(desc.begin()),
                             std::make_move_iterator(desc.end()));
    }
    if (sources != StoreSources::Descriptions) {
        std::vector<StoreEntry> trip = build_store_triples(model, graph, train, vocab);
        store.triple_entries = static_cast<uint32_t>(trip.size());
        store.entries.insert(store.entries.end(), std::make_move_iterator(trip.begin()),
                             std::make_move_iterator(trip.end()));
    }
    return store;
}

// Exact linear scan. Results ascend by (distance, entry index), so the first
// j hits for any j <= k equal a fresh search with k = j.
inline std::vector<NeighborHit> knn_search(const KnowledgeStore& store,
                                           const std::vector<double>& anchor, size_t k) {
    if (k < 1) fail(ErrorKind::Argument, "k must be >= 1");
    if (store.entries.empty()) fail(ErrorKind::Argument, "cannot search an empty store");
    if (anchor.size() != store.dim)
        fail(ErrorKind::Argument, "anchor dimension " + std::to_string(anchor.size()) +
                                      " does not match store dim " + std::to_string(store.dim));
    std::vector<NeighborHit> hits;
    hits.reserve(store.entries.size());
    for (size_t i = 0; i < store.entries.size(); ++i) {
        const StoreEntry& e = store.entries[i];
        double sq = 0.0;
        for (uint32_t j = 0; j < store.dim; ++j) {
            const double diff = anchor[j] - e.key[j];
            sq += diff * diff;
        }
        hits.push_back({e.value, std::sqrt(sq), i});
    }
    const size_t keep = std::min(k, hits.size());
    std::partial_sort(hits.begin(), hits.begin() + static_cast<ptrdiff_t>(keep), hits.end(),
                      [](const NeighborHit& a, const NeighborHit& b) {
                          if (a.distance != b.distance) return a.distance < b.distance;
                          return a.entry < b.entry;
                      });
    hits.resize(keep);
    return hits;
}

// Keeps the first (nearest) hit per entity; input must already be sorted.
inline std::vector<NeighborHit> dedupe_per_entity(const std::vector<NeighborHit>& hits) {
    for (size_t i = 1; i < hits.size(); ++i) {
        const bool ordered = hits[i - 1].distance < hits[i].distance ||
                             (hits[i - 1].distance == hits[i].distance &&
                              hits[i - 1].entry < hits[i].entry);
        if (!ordered) fail(ErrorKind::Argument, "hits must be sorted by distance before dedup");
    }
    std::vector<NeighborHit> out;
    std::unordered_set<uint32_t> seen;
    for (const NeighborHit& h : hits)
        if (seen.insert(h.entity).second) out.push_back(h);
    return out;
}

// p(e) proportional to exp(-distance), computed with shifted exponentials.
// Pairs keep the hit order (ascending distance).
inline std::vector<std::pair<uint32_t, double>> knn_distribution(
    const std::vector<NeighborHit>& hits) {
    if (hits.empty())
        fail(ErrorKind::Argument, "cannot form a neighbor distribution from zero hits");
    std::unordered_set<uint32_t> seen;
    for (const NeighborHit& h : hits)
        if (!seen.insert(h.entity).second)
            fail(ErrorKind::Argument, "neighbor distribution requires deduplicated hits");
    const double shift = hits.front().distance;  // smallest, hits are sorted
    std::vector<std::pair<uint32_t, double>> probs;
    probs.reserve(hits.size());
    double denom = 0.0;
    for (const NeighborHit& h : hits) {
        const double w = std::exp(shift - h.distance);
        probs.emplace_back(h.entity, w);
        denom += w;
    }
    for (auto& [entity, p] : probs) p /= denom;
    return probs;
}

// ---- serialization ----
// Binary: header line, then per entry value u32, provenance byte, source u32,
// slot byte, key as 64-bit little-endian floats. The text variant holds the
// same fields tab-separated with %.17g keys, loadable for debugging.

inline std::string render_store(const KnowledgeStore& store) {
    std::string out = "KNNKGE-STORE v1 dim=" + std::to_string(store.dim) +
                      " n=" + std::to_string(store.entries.size()) + "\n";
    for (const StoreEntry& e : store.entries) {
        put_u32_le(out, e.value);
        out.push_back(provenance_code(e.provenance));
        put_u32_le(out, e.source);
        out.push_back(slot_code(e.slot));
        for (double v : e.key) put_f64_le(out, v);
    }
    return out;
}

inline std::string render_store_text(const KnowledgeStore& store) {
    std::string out = "KNNKGE-STORE-TEXT v1 dim=" + std::to_string(store.dim) +
                      " n=" + std::to_string(store.entries.size()) + "\n";
    char buf[32];
    for (const StoreEntry& e : store.entries) {
        out += std::to_string(e.value);
        out.push_back('\t');
        out.push_back(provenance_code(e.provenance));
        out.push_back('\t');
        out += std::to_string(e.source);
        out.push_back('\t');
        out.push_back(slot_code(e.slot));
        out.push_back('\t');
        for (uint32_t j = 0; j < store.dim; ++j) {
            if (j) out.push_back(' ');
            std::snprintf(buf, sizeof(buf), "%.17g", e.key[j]);
            out += buf;
        }
        out.push_back('\n');
    }
    return out;
}

namespace detail {

inline Provenance parse_provenance(char c) {
    if (c == 'D') return Provenance::Description;
    if (c == 'T') return Provenance::Triple;
    fail(ErrorKind::Format, std::string("store file: bad provenance code '") + c + "'");
}

inline MaskSlot parse_slot(char c) {
    if (c == '-') return MaskSlot::None;
    if (c == 'T') return MaskSlot::Tail;
    if (c == 'H') return MaskSlot::Head;
    fail(ErrorKind::Format, std::string("store file: bad slot code '") + c + "'");
}

inline void parse_store_header(const std::string& line, const char* magic, uint32_t& dim,
                               uint64_t& count) {
    unsigned d = 0;
    unsigned long long n = 0;
    const std::string fmt = std::string(magic) + " v1 dim=%u n=%llu";
    if (std::sscanf(line.c_str(), fmt.c_str(), &d, &n) != 2)
        fail(ErrorKind::Format, "store file: unrecognized header");
    if (d == 0) fail(ErrorKind::Format, "store file: zero dimension");
    dim = d;
    count = n;
}

}  // namespace detail

inline KnowledgeStore parse_store(const std::string& bytes) {
    const size_t nl = bytes.find('\n');
    if (nl == std::string::npos) fail(ErrorKind::Format, "store file: missing header line");
    const std::string header = bytes.substr(0, nl);
    KnowledgeStore store;
    uint64_t count = 0;

    if (header.rfind("KNNKGE-STORE-TEXT", 0) == 0) {
        detail::parse_store_header(header, "KNNKGE-STORE-TEXT", store.dim, count);
        const auto lines = split_lines(bytes);
        if (lines.size() != count + 1)
            fail(ErrorKind::Format, "store file: expected " + std::to_string(count) +
                                        " records, found " + std::to_string(lines.size() - 1));
        for (size_t i = 1; i < lines.size(); ++i) {
            const auto fields = split_on(lines[i], '\t');
            if (fields.size() != 5)
                fail(ErrorKind::Format, "store file: record " + std::to_string(i) +
                                            " has " + std::to_string(fields.size()) + " fields");
            StoreEntry e;
            e.value = static_cast<uint32_t>(std::stoul(fields[0]));
            if (fields[1].size() != 1 || fields[3].size() != 1)
                fail(ErrorKind::Format, "store file: bad code field in record " +
                                            std::to_string(i));
            e.provenance = detail::parse_provenance(fields[1][0]);
            e.source = static_cast<uint32_t>(std::stoul(fields[2]));
            e.slot = detail::parse_slot(fields[3][0]);
            std::istringstream vec(fields[4]);
            e.key.resize(store.dim);
            for (uint32_t j = 0; j < store.dim; ++j)
                if (!(vec >> e.key[j]))
                    fail(ErrorKind::Format,
                         "store file: short key vector in record " + std::to_string(i));
            store.entries.push_back(std::move(e));
        }
    } else {
        detail::parse_store_header(header, "KNNKGE-STORE", store.dim, count);
        ByteReader reader(std::string_view(bytes).substr(nl + 1), "store file");
        store.entries.reserve(count);
        for (uint64_t i = 0; i < count; ++i) {
            StoreEntry e;
            e.value = reader.u32();
            e.provenance = detail::parse_provenance(static_cast<char>(reader.byte()));
            e.source = reader.u32();
            e.slot = detail::parse_slot(static_cast<char>(reader.byte()));
            e.key.resize(store.dim);
            for (uint32_t j = 0; j < store.dim; ++j) e.key[j] = reader.f64();
            store.entries.push_back(std::move(e));
        }
        if (!reader.at_end())
            fail(ErrorKind::Format, "store file: trailing bytes after last record");
    }

    for (const StoreEntry& e : store.entries) {
        if (e.provenance == Provenance::Description)
            ++store.description_entries;
        else
            ++store.triple_entries;
    }
    return store;
}

inline void save_store(const KnowledgeStore& store, const std::string& path) {
    write_file_atomic(path, render_store(store));
}

inline void save_store_text(const KnowledgeStore& store, const std::string& path) {
    write_file_atomic(path, render_store_text(store));
}

inline KnowledgeStore load_store(const std::string& path) {
    return parse_store(read_file(path));
}

}  // namespace knnkge
