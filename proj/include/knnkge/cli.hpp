#pragma once
// Command-line driver. Wires ingestion, the two training stages, store
// construction, evaluation, sweeps and reports into seeded reproducible runs.
// Config precedence: flags > config file > built-in defaults; every report
// embeds the fully resolved configuration. run_cli is callable in-process.

#include <array>
#include <cstdio>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"

#include "knnkge/encoder.hpp"
#include "knnkge/error.hpp"
#include "knnkge/eval.hpp"
#include "knnkge/io.hpp"
#include "knnkge/kg.hpp"
#include "knnkge/store.hpp"
#include "knnkge/text.hpp"
#include "knnkge/toy.hpp"

namespace knnkge {

struct ConfigKey {
    const char* key;
    const char* fallback;
    const char* help;
};

inline const std::vector<ConfigKey>& config_schema() {
    static const std::vector<ConfigKey> schema = {
        {"seed", "4", "master seed for splits, init, training and the toy generator"},
        {"out.dir", "out", "directory for all artifacts and reports"},
        {"data.triples", "", "whole-graph triples TSV (ingest will split it)"},
        {"data.descriptions", "", "entity descriptions TSV"},
        {"data.train", "", "pre-made train triples (with data.valid/data.test)"},
        {"data.valid", "", "pre-made validation triples"},
        {"data.test", "", "pre-made test triples"},
        {"split.mode", "transductive", "transductive | inductive"},
        {"split.train", "0.8", "train fraction for generated splits"},
        {"split.valid", "0.1", "validation fraction"},
        {"split.test", "0.1", "test fraction"},
        {"vocab.min_freq", "1", "words below this corpus frequency map to UNK"},
        {"model.dim", "64", "hidden width (multiple of model.heads, >= 8)"},
        {"model.layers", "2", "encoder blocks"},
        {"model.heads", "2", "attention heads"},
        {"model.max_len", "64", "maximum sequence length"},
        {"train.stage", "both", "expansion | mem | both"},
        {"train.skip_expansion", "false", "let the mem stage start from scratch"},
        {"train.expansion.lr", "0.5", "expansion learning rate"},
        {"train.expansion.epochs", "200", "expansion epochs"},
        {"train.expansion.batch", "0", "expansion batch size (0 = full batch)"},
        {"train.mem.lr", "0.05", "mem learning rate"},
        {"train.mem.epochs", "20", "mem epochs"},
        {"train.mem.batch", "16", "mem batch size (0 = full batch)"},
        {"store.sources", "both", "both | descriptions | triples"},
        {"eval.lambda", "0.2", "interpolation weight of the neighbor distribution"},
        {"eval.k", "64", "neighbors retrieved per query"},
        {"eval.filtered", "true", "filter known-true answers before ranking"},
        {"eval.directions", "both", "both | head | tail"},
        {"eval.no_store", "false", "evaluate the parametric model alone (lambda 0)"},
        {"bucket.boundaries", "0,5,20,50", "train-frequency bucket boundaries"},
        {"sweep.lambdas", "0,0.1,0.2,0.3,0.4,0.5,0.6,0.7,0.8,0.9,1", "lambda grid"},
        {"sweep.ks", "1,2,4,8,16,32,64", "k grid"},
        {"subsample.fractions", "0.3,0.5,0.7,1.0", "train fractions to retrain on"},
        {"explain.top", "5", "entities listed per distribution in explanations"},
        {"query.head", "", "head entity label, or ? for the masked slot"},
        {"query.relation", "", "relation label of the query"},
        {"query.tail", "", "tail entity label, or ? for the masked slot"},
        {"dump.k", "20", "neighbors written by dump-embeddings"},
    };
    return schema;
}

inline const std::map<std::string, std::string>& flag_aliases() {
    static const std::map<std::string, std::string> aliases = {
        {"out", "out.dir"},           {"mode", "split.mode"},
        {"triples", "data.triples"},  {"descriptions", "data.descriptions"},
        {"train", "data.train"},      {"valid", "data.valid"},
        {"test", "data.test"},        {"lambda", "eval.lambda"},
        {"k", "eval.k"},              {"filtered", "eval.filtered"},
        {"directions", "eval.directions"}, {"sources", "store.sources"},
        {"stage", "train.stage"},     {"lambdas", "sweep.lambdas"},
        {"ks", "sweep.ks"},           {"fractions", "subsample.fractions"},
        {"top", "explain.top"},       {"head", "query.head"},
        {"relation", "query.relation"}, {"tail", "query.tail"},
        {"dump-k", "dump.k"},         {"min-freq", "vocab.min_freq"},
        {"dim", "model.dim"},         {"layers", "model.layers"},
        {"heads", "model.heads"},     {"max-len", "model.max_len"},
    };
    return aliases;
}

// flags that take no value
inline const std::map<std::string, std::pair<std::string, std::string>>& bare_flags() {
    static const std::map<std::string, std::pair<std::string, std::string>> flags = {
        {"skip-expansion", {"train.skip_expansion", "true"}},
        {"no-store", {"eval.no_store", "true"}},
        {"raw", {"eval.filtered", "false"}},
    };
    return flags;
}

class RunConfig {
public:
    RunConfig() {
        for (const ConfigKey& k : config_schema()) values_[k.key] = k.fallback;
    }

    void set(const std::string& key, const std::string& value) {
        if (!values_.count(key)) fail(ErrorKind::Config, "unknown config key: " + key);
        values_[key] = value;
    }

    const std::string& str(const std::string& key) const {
        auto it = values_.find(key);
        if (it == values_.end()) fail(ErrorKind::Config, "unknown config key: " + key);
        return it->second;
    }

    int64_t integer(const std::string& key) const {
        try {
            size_t pos = 0;
            const int64_t v = std::stoll(str(key), &pos);
            if (pos != str(key).size()) throw std::invalid_argument(key);
            return v;
        } catch (const std::exception&) {
            fail(ErrorKind::Config, key + ": expected an integer, got '" + str(key) + "'");
        }
    }

    uint32_t u32(const std::string& key) const {
        const int64_t v = integer(key);
        if (v < 0 || v > UINT32_MAX)
            fail(ErrorKind::Config, key + ": value out of range");
        return static_cast<uint32_t>(v);
    }

    double real(const std::string& key) const {
        try {
            size_t pos = 0;
            const double v = std::stod(str(key), &pos);
            if (pos != str(key).size()) throw std::invalid_argument(key);
            return v;
        } catch (const std::exception&) {
            fail(ErrorKind::Config, key + ": expected a number, got '" + str(key) + "'");
        }
    }

    bool boolean(const std::string& key) const {
        const std::string& v = str(key);
        if (v == "true" || v == "1") return true;
        if (v == "false" || v == "0") return false;
        fail(ErrorKind::Config, key + ": expected true or false, got '" + v + "'");
    }

    std::vector<double> real_list(const std::string& key) const {
        std::vector<double> out;
        for (const std::string& item : split_on(str(key), ',')) {
            try {
                out.push_back(std::stod(item));
            } catch (const std::exception&) {
                fail(ErrorKind::Config, key + ": bad list element '" + item + "'");
            }
        }
        return out;
    }

    std::vector<uint32_t> u32_list(const std::string& key) const {
        std::vector<uint32_t> out;
        for (const std::string& item : split_on(str(key), ',')) {
            try {
                out.push_back(static_cast<uint32_t>(std::stoul(item)));
            } catch (const std::exception&) {
                fail(ErrorKind::Config, key + ": bad list element '" + item + "'");
            }
        }
        return out;
    }

    std::vector<uint64_t> u64_list(const std::string& key) const {
        std::vector<uint64_t> out;
        for (const std::string& item : split_on(str(key), ',')) {
            try {
                out.push_back(std::stoull(item));
            } catch (const std::exception&) {
                fail(ErrorKind::Config, key + ": bad list element '" + item + "'");
            }
        }
        return out;
    }

    const std::map<std::string, std::string>& values() const { return values_; }

private:
    std::map<std::string, std::string> values_;
};

namespace detail {

inline std::string trim(const std::string& s) {
    size_t a = 0, b = s.size();
    while (a < b && std::isspace(static_cast<unsigned char>(s[a]))) ++a;
    while (b > a && std::isspace(static_cast<unsigned char>(s[b - 1]))) --b;
    return s.substr(a, b - a);
}

inline void load_config_file(RunConfig& cfg, const std::string& path) {
    for (const std::string& raw : split_lines(read_file(path))) {
        const std::string line = trim(raw);
        if (line.empty() || line[0] == '#') continue;
        const size_t eq = line.find('=');
        if (eq == std::string::npos)
            fail(ErrorKind::Config, path + ": expected key=value, got '" + line + "'");
        cfg.set(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
    }
}

}  // namespace detail

// ---- shared pieces ----

namespace detail {

inline std::string artifact(const RunConfig& cfg, const char* name) {
    return cfg.str("out.dir") + "/" + name;
}

inline std::pair<KnowledgeGraph, DatasetSplit> load_pipeline(const RunConfig& cfg) {
    return load_premade_split(artifact(cfg, "train.txt"), artifact(cfg, "valid.txt"),
                              artifact(cfg, "test.txt"), artifact(cfg, "descriptions.txt"));
}

inline std::vector<uint32_t> train_candidates(const DatasetSplit& split,
                                              uint32_t num_entities) {
    std::vector<char> seen(num_entities, 0);
    for (const Triple& t : split.train) {
        seen[t.head] = 1;
        seen[t.tail] = 1;
    }
    std::vector<uint32_t> out;
    for (uint32_t e = 0; e < num_entities; ++e)
        if (seen[e]) out.push_back(e);
    return out;
}

inline Vocabulary pipeline_vocabulary(const RunConfig& cfg, const KnowledgeGraph& graph) {
    Vocabulary vocab =
        build_vocabulary(graph, cfg.u32("vocab.min_freq"), cfg.u32("model.max_len"));
    expand_entity_vocabulary(vocab, graph.entity_labels);
    return vocab;
}

inline void check_vocab_matches(const EncoderModel& model, const Vocabulary& vocab) {
    if (vocab.size() != model.config.vocab_size ||
        vocab.entity_offset() != model.config.entity_offset)
        fail(ErrorKind::Config,
             "vocabulary does not match the checkpoint (rebuilt from different data?)");
}

inline StoreSources parse_sources(const RunConfig& cfg) {
    const std::string& s = cfg.str("store.sources");
    if (s == "both") return StoreSources::Both;
    if (s == "descriptions") return StoreSources::Descriptions;
    if (s == "triples") return StoreSources::Triples;
    fail(ErrorKind::Config, "store.sources must be both, descriptions or triples");
}

inline EvalConfig parse_eval_config(const RunConfig& cfg) {
    EvalConfig ec;
    ec.lambda = cfg.real("eval.lambda");
    ec.k = cfg.u32("eval.k");
    ec.filtered = cfg.boolean("eval.filtered");
    const std::string& dirs = cfg.str("eval.directions");
    if (dirs == "both") {
        ec.eval_heads = ec.eval_tails = true;
    } else if (dirs == "head") {
        ec.eval_heads = true;
        ec.eval_tails = false;
    } else if (dirs == "tail") {
        ec.eval_heads = false;
        ec.eval_tails = true;
    } else {
        fail(ErrorKind::Config, "eval.directions must be both, head or tail");
    }
    ec.validate();
    return ec;
}

inline nlohmann::json to_json(const Metrics& m) {
    nlohmann::json j;
    j["hits1"] = m.hits1;
    j["hits3"] = m.hits3;
    j["hits10"] = m.hits10;
    j["mr"] = m.mr;
    j["mrr"] = m.mrr;
    j["count"] = m.count;
    return j;
}

inline nlohmann::json config_json(const RunConfig& cfg) {
    nlohmann::json j;
    for (const auto& [key, value] : cfg.values()) j[key] = value;
    return j;
}

inline void write_report(const RunConfig& cfg, const char* name, const nlohmann::json& j) {
    write_file_atomic(detail::artifact(cfg, name), j.dump(2) + "\n");
}

inline void print_metrics_row(const char* scope, const Metrics& m) {
    std::printf("%-10s %8.4f %8.4f %8.4f %10.2f %8.4f %8llu\n", scope, m.hits1, m.hits3,
                m.hits10, m.mr, m.mrr, static_cast<unsigned long long>(m.count));
}

inline void print_metrics_table(const MetricsReport& r) {
    std::printf("%-10s %8s %8s %8s %10s %8s %8s\n", "scope", "hits@1", "hits@3", "hits@10",
                "mr", "mrr", "queries");
    print_metrics_row("aggregate", r.aggregate);
    print_metrics_row("head", r.head);
    print_metrics_row("tail", r.tail);
}

struct LoadedRun {
    KnowledgeGraph graph;
    DatasetSplit split;
    Vocabulary vocab;
    EncoderModel model;
};

inline LoadedRun load_run(const RunConfig& cfg) {
    LoadedRun run;
    std::tie(run.graph, run.split) = load_pipeline(cfg);
    run.model = load_model(artifact(cfg, "model.ckpt"));
    run.vocab = load_vocabulary(artifact(cfg, "vocab.txt"), run.model.config.max_len);
    check_vocab_matches(run.model, run.vocab);
    return run;
}

inline KnowledgeStore load_run_store(const RunConfig& cfg, const EncoderModel& model) {
    if (cfg.boolean("eval.no_store")) {
        KnowledgeStore empty;
        empty.dim = model.config.dim;
        return empty;
    }
    return load_store(artifact(cfg, "store.bin"));
}

// Query parsing shared by explain and dump-embeddings: exactly one of
// query.head / query.tail must be "?".
struct ParsedQuerySpec {
    Triple triple{0, 0, 0};
    QueryDirection direction = QueryDirection::Tail;
};

inline ParsedQuerySpec parse_query(const RunConfig& cfg, const KnowledgeGraph& graph) {
    const std::string& h = cfg.str("query.head");
    const std::string& r = cfg.str("query.relation");
    const std::string& t = cfg.str("query.tail");
    if (r.empty() || r == "?")
        fail(ErrorKind::Argument, "query.relation must name a relation");
    const bool head_masked = h == "?";
    const bool tail_masked = t == "?";
    if (head_masked == tail_masked)
        fail(ErrorKind::Argument, "exactly one of query.head and query.tail must be ?");
    ParsedQuerySpec q;
    q.triple.relation = graph.relation(r);
    if (head_masked) {
        q.direction = QueryDirection::Head;
        q.triple.tail = graph.entity(t);
    } else {
        q.direction = QueryDirection::Tail;
        q.triple.head = graph.entity(h);
    }
    return q;
}

}  // namespace detail

// ---- commands ----

inline int cmd_make_toy(const RunConfig& cfg) {
    const KnowledgeGraph graph = make_toy_graph(cfg.integer("seed"));
    write_file_atomic(detail::artifact(cfg, "triples.tsv"),
                      render_triples(graph, graph.triples));
    write_file_atomic(detail::artifact(cfg, "descriptions.tsv"), render_descriptions(graph));
    std::printf("%u entities, %u relations, %zu triples\n", graph.num_entities(),
                graph.num_relations(), graph.triples.size());
    return 0;
}

inline int cmd_ingest(const RunConfig& cfg) {
    const bool premade = !cfg.str("data.train").empty();
    if (premade && !cfg.str("data.triples").empty())
        fail(ErrorKind::Argument, "give either data.triples or data.train/valid/test");

    KnowledgeGraph graph;
    DatasetSplit split;
    if (premade) {
        std::tie(graph, split) =
            load_premade_split(cfg.str("data.train"), cfg.str("data.valid"),
                               cfg.str("data.test"), cfg.str("data.descriptions"));
    } else {
        if (cfg.str("data.triples").empty())
            fail(ErrorKind::Argument, "ingest needs data.triples or data.train/valid/test");
        graph = load_graph(cfg.str("data.triples"), cfg.str("data.descriptions"));
        SplitFractions fractions{cfg.real("split.train"), cfg.real("split.valid"),
                                 cfg.real("split.test")};
        const std::string& mode = cfg.str("split.mode");
        if (mode != "transductive" && mode != "inductive")
            fail(ErrorKind::Config, "split.mode must be transductive or inductive");
        split = make_split(graph, fractions,
                           mode == "inductive" ? SplitMode::Inductive
                                               : SplitMode::Transductive,
                           cfg.integer("seed"));
    }

    write_file_atomic(detail::artifact(cfg, "train.txt"), render_triples(graph, split.train));
    write_file_atomic(detail::artifact(cfg, "valid.txt"), render_triples(graph, split.valid));
    write_file_atomic(detail::artifact(cfg, "test.txt"), render_triples(graph, split.test));
    write_file_atomic(detail::artifact(cfg, "descriptions.txt"), render_descriptions(graph));

    nlohmann::json j;
    j["config"] = detail::config_json(cfg);
    j["entities"] = graph.num_entities();
    j["relations"] = graph.num_relations();
    j["triples"] = graph.triples.size();
    j["train"] = split.train.size();
    j["valid"] = split.valid.size();
    j["test"] = split.test.size();
    j["mode"] = to_string(split.mode);
    j["duplicate_triples"] = graph.duplicate_triple_count;
    j["missing_descriptions"] = graph.missing_description_count;
    j["heldout_entities"] = heldout_entities(graph, split).size();
    detail::write_report(cfg, "ingest.json", j);

    std::printf("%u entities, %u relations, %zu triples\n", graph.num_entities(),
                graph.num_relations(), graph.triples.size());
    std::printf("split %s: %zu train, %zu valid, %zu test\n", to_string(split.mode),
                split.train.size(), split.valid.size(), split.test.size());
    if (graph.duplicate_triple_count)
        std::printf("warning: %u duplicate triples collapsed\n",
                    graph.duplicate_triple_count);
    if (graph.missing_description_count)
        std::printf("warning: %u entities without descriptions\n",
                    graph.missing_description_count);
    return 0;
}

inline int cmd_train(const RunConfig& cfg) {
    auto [graph, split] = detail::load_pipeline(cfg);
    const Vocabulary vocab = detail::pipeline_vocabulary(cfg, graph);
    save_vocabulary(vocab, detail::artifact(cfg, "vocab.txt"));

    const std::string& stage = cfg.str("train.stage");
    if (stage != "expansion" && stage != "mem" && stage != "both")
        fail(ErrorKind::Config, "train.stage must be expansion, mem or both");

    ModelConfig mc;
    mc.dim = cfg.u32("model.dim");
    mc.layers = cfg.u32("model.layers");
    mc.heads = cfg.u32("model.heads");
    mc.max_len = cfg.u32("model.max_len");
    mc.vocab_size = vocab.size();
    mc.entity_offset = vocab.entity_offset();

    nlohmann::json j;
    j["config"] = detail::config_json(cfg);

    EncoderModel model;
    if (stage == "mem" && !cfg.boolean("train.skip_expansion")) {
        try {
            model = load_model(detail::artifact(cfg, "expansion.ckpt"));
        } catch (const Error& e) {
            if (e.kind() != ErrorKind::Io) throw;
            fail(ErrorKind::State,
                 "mem stage needs an expansion checkpoint; run the expansion stage first "
                 "or pass --skip-expansion");
        }
        detail::check_vocab_matches(model, vocab);
    } else {
        model = EncoderModel::init(
            mc, detail::train_candidates(split, graph.num_entities()), cfg.integer("seed"));
    }

    if (stage == "expansion" || stage == "both") {
        TrainConfig tc;
        tc.stage = TrainStage::Expansion;
        tc.lr = cfg.real("train.expansion.lr");
        tc.epochs = cfg.u32("train.expansion.epochs");
        tc.batch_size = cfg.u32("train.expansion.batch");
        tc.seed = cfg.integer("seed");
        const TrainLog log = train_expansion(model, graph, vocab, tc);
        save_model(model, detail::artifact(cfg, "expansion.ckpt"));
        j["expansion_losses"] = log.epoch_losses;
        std::printf("expansion: %u epochs, loss %.6f -> %.6f\n", tc.epochs,
                    log.epoch_losses.front(), log.epoch_losses.back());
    }
    if (stage == "mem" || stage == "both") {
        TrainConfig tc;
        tc.stage = TrainStage::Mem;
        tc.lr = cfg.real("train.mem.lr");
        tc.epochs = cfg.u32("train.mem.epochs");
        tc.batch_size = cfg.u32("train.mem.batch");
        tc.seed = cfg.integer("seed");
        const TrainLog log = train_mem(model, graph, split, vocab, tc);
        save_model(model, detail::artifact(cfg, "model.ckpt"));
        j["mem_losses"] = log.epoch_losses;
        std::printf("mem: %u epochs, loss %.6f -> %.6f\n", tc.epochs,
                    log.epoch_losses.front(), log.epoch_losses.back());
    }
    detail::write_report(cfg, "train.json", j);
    return 0;
}

inline int cmd_build_store(const RunConfig& cfg) {
    detail::LoadedRun run = detail::load_run(cfg);
    const KnowledgeStore store = build_store(run.model, run.graph, run.split.train,
                                             run.vocab, detail::parse_sources(cfg));
    save_store(store, detail::artifact(cfg, "store.bin"));

    nlohmann::json j;
    j["config"] = detail::config_json(cfg);
    j["dim"] = store.dim;
    j["description_entries"] = store.description_entries;
    j["triple_entries"] = store.triple_entries;
    j["skipped_empty_descriptions"] = store.skipped_descriptions;
    detail::write_report(cfg, "store.json", j);

    std::printf("%u description entries, %u triple entries\n", store.description_entries,
                store.triple_entries);
    if (store.skipped_descriptions)
        std::printf("warning: %u entities had empty descriptions\n",
                    store.skipped_descriptions);
    return 0;
}

inline int cmd_eval(const RunConfig& cfg) {
    detail::LoadedRun run = detail::load_run(cfg);
    const KnowledgeStore store = detail::load_run_store(cfg, run.model);
    const EvalConfig ec = detail::parse_eval_config(cfg);
    const MetricsReport report =
        evaluate(run.model, store, run.graph, run.split, run.vocab, ec);

    nlohmann::json j;
    j["config"] = detail::config_json(cfg);
    j["results"]["aggregate"] = detail::to_json(report.aggregate);
    j["results"]["head"] = detail::to_json(report.head);
    j["results"]["tail"] = detail::to_json(report.tail);
    detail::write_report(cfg, "eval.json", j);
    detail::print_metrics_table(report);
    return 0;
}

inline int cmd_sweep(const RunConfig& cfg) {
    detail::LoadedRun run = detail::load_run(cfg);
    const KnowledgeStore store = detail::load_run_store(cfg, run.model);
    const EvalConfig base = detail::parse_eval_config(cfg);
    const std::vector<SweepCell> cells =
        sweep(run.model, store, run.graph, run.split, run.vocab,
              cfg.real_list("sweep.lambdas"), cfg.u32_list("sweep.ks"), base);

    nlohmann::json j;
    j["config"] = detail::config_json(cfg);
    j["cells"] = nlohmann::json::array();
    for (const SweepCell& c : cells) {
        nlohmann::json cell;
        cell["lambda"] = c.lambda;
        cell["k"] = c.k;
        cell["aggregate"] = detail::to_json(c.aggregate);
        cell["head"] = detail::to_json(c.head);
        cell["tail"] = detail::to_json(c.tail);
        j["cells"].push_back(cell);
    }
    detail::write_report(cfg, "sweep.json", j);
    std::printf("%zu sweep cells written\n", cells.size());
    return 0;
}

inline int cmd_bucket(const RunConfig& cfg) {
    detail::LoadedRun run = detail::load_run(cfg);
    const KnowledgeStore store = detail::load_run_store(cfg, run.model);
    const EvalConfig ec = detail::parse_eval_config(cfg);
    const MetricsReport report =
        evaluate(run.model, store, run.graph, run.split, run.vocab, ec);
    const FrequencyTable table =
        entity_frequency(run.graph, run.split, cfg.u64_list("bucket.boundaries"));
    const std::vector<BucketMetrics> buckets = bucket_report(report, table);

    nlohmann::json j;
    j["config"] = detail::config_json(cfg);
    j["aggregate"] = detail::to_json(report.aggregate);
    j["buckets"] = nlohmann::json::array();
    for (const BucketMetrics& b : buckets) {
        nlohmann::json jb;
        jb["label"] = b.label;
        jb["lower"] = b.lower;
        jb["metrics"] = detail::to_json(b.metrics);
        j["buckets"].push_back(jb);
    }
    detail::write_report(cfg, "bucket.json", j);

    std::printf("%-10s %8s %8s %8s %10s %8s %8s\n", "bucket", "hits@1", "hits@3", "hits@10",
                "mr", "mrr", "queries");
    for (const BucketMetrics& b : buckets)
        detail::print_metrics_row(b.label.c_str(), b.metrics);
    return 0;
}

inline int cmd_explain(const RunConfig& cfg) {
    detail::LoadedRun run = detail::load_run(cfg);
    const KnowledgeStore store = detail::load_run_store(cfg, run.model);
    const EvalConfig ec = detail::parse_eval_config(cfg);
    const detail::ParsedQuerySpec q = detail::parse_query(cfg, run.graph);
    const Explanation ex = explain_query(run.model, store, run.graph, run.vocab, q.triple,
                                         q.direction, ec, cfg.u32("explain.top"));

    auto entries_json = [&](const std::vector<ExplainEntry>& entries) {
        nlohmann::json arr = nlohmann::json::array();
        for (const ExplainEntry& e : entries) {
            nlohmann::json je;
            je["entity"] = run.graph.entity_labels[e.entity];
            je["p"] = e.probability;
            arr.push_back(je);
        }
        return arr;
    };

    nlohmann::json j;
    j["config"] = detail::config_json(cfg);
    j["direction"] = to_string(q.direction);
    j["relation"] = run.graph.relation_labels[q.triple.relation];
    j["given"] = run.graph.entity_labels[q.direction == QueryDirection::Tail
                                             ? q.triple.head
                                             : q.triple.tail];
    j["mem_top"] = entries_json(ex.mem_top);
    j["knn_top"] = entries_json(ex.knn_top);
    j["interpolated_top"] = entries_json(ex.interpolated_top);
    j["neighbors"] = nlohmann::json::array();
    for (const NeighborInfo& n : ex.neighbors) {
        nlohmann::json jn;
        jn["entity"] = run.graph.entity_labels[n.entity];
        jn["distance"] = n.distance;
        jn["provenance"] = std::string(1, provenance_code(n.provenance));
        jn["slot"] = std::string(1, slot_code(n.slot));
        jn["source"] = n.source;
        j["neighbors"].push_back(jn);
    }
    detail::write_report(cfg, "explain.json", j);

    std::printf("%-24s %10s | %-24s %10s | %-24s %10s\n", "mem", "p", "knn", "p",
                "interpolated", "p");
    const size_t rows = std::max({ex.mem_top.size(), ex.knn_top.size(),
                                  ex.interpolated_top.size()});
    for (size_t i = 0; i < rows; ++i) {
        auto cell = [&](const std::vector<ExplainEntry>& v) {
            return i < v.size()
                       ? std::make_pair(run.graph.entity_labels[v[i].entity], v[i].probability)
                       : std::make_pair(std::string("-"), 0.0);
        };
        const auto [ml, mp] = cell(ex.mem_top);
        const auto [kl, kp] = cell(ex.knn_top);
        const auto [il, ip] = cell(ex.interpolated_top);
        std::printf("%-24s %10.4f | %-24s %10.4f | %-24s %10.4f\n", ml.c_str(), mp,
                    kl.c_str(), kp, il.c_str(), ip);
    }
    return 0;
}

inline int cmd_subsample_eval(const RunConfig& cfg) {
    auto [graph, split] = detail::load_pipeline(cfg);
    const Vocabulary vocab = detail::pipeline_vocabulary(cfg, graph);
    const EvalConfig ec = detail::parse_eval_config(cfg);

    nlohmann::json j;
    j["config"] = detail::config_json(cfg);
    j["runs"] = nlohmann::json::array();
    for (double fraction : cfg.real_list("subsample.fractions")) {
        const DatasetSplit part = subsample_training(split, fraction, cfg.integer("seed"));

        ModelConfig mc;
        mc.dim = cfg.u32("model.dim");
        mc.layers = cfg.u32("model.layers");
        mc.heads = cfg.u32("model.heads");
        mc.max_len = cfg.u32("model.max_len");
        mc.vocab_size = vocab.size();
        mc.entity_offset = vocab.entity_offset();
        EncoderModel model = EncoderModel::init(
            mc, detail::train_candidates(part, graph.num_entities()), cfg.integer("seed"));

        TrainConfig expansion;
        expansion.stage = TrainStage::Expansion;
        expansion.lr = cfg.real("train.expansion.lr");
        expansion.epochs = cfg.u32("train.expansion.epochs");
        expansion.batch_size = cfg.u32("train.expansion.batch");
        expansion.seed = cfg.integer("seed");
        train_expansion(model, graph, vocab, expansion);

        TrainConfig mem;
        mem.stage = TrainStage::Mem;
        mem.lr = cfg.real("train.mem.lr");
        mem.epochs = cfg.u32("train.mem.epochs");
        mem.batch_size = cfg.u32("train.mem.batch");
        mem.seed = cfg.integer("seed");
        train_mem(model, graph, part, vocab, mem);

        const KnowledgeStore store =
            build_store(model, graph, part.train, vocab, detail::parse_sources(cfg));
        const MetricsReport report = evaluate(model, store, graph, part, vocab, ec);

        nlohmann::json run;
        run["fraction"] = fraction;
        run["train_triples"] = part.train.size();
        run["aggregate"] = detail::to_json(report.aggregate);
        run["head"] = detail::to_json(report.head);
        run["tail"] = detail::to_json(report.tail);
        j["runs"].push_back(run);
        std::printf("fraction %.2f: %zu train triples, mrr %.4f\n", fraction,
                    part.train.size(), report.aggregate.mrr);
    }
    detail::write_report(cfg, "subsample.json", j);
    return 0;
}

inline int cmd_dump_embeddings(const RunConfig& cfg) {
    detail::LoadedRun run = detail::load_run(cfg);
    const KnowledgeStore store = load_store(detail::artifact(cfg, "store.bin"));
    const detail::ParsedQuerySpec q = detail::parse_query(cfg, run.graph);
    const uint32_t k = cfg.u32("dump.k");
    if (k < 1) fail(ErrorKind::Argument, "dump.k must be >= 1");

    const EncodedSequence seq =
        q.direction == QueryDirection::Tail
            ? build_tail_query(run.vocab, q.triple.head,
                               run.graph.descriptions[q.triple.head], q.triple.relation,
                               run.graph.relation_labels[q.triple.relation])
            : build_head_query(run.vocab, q.triple.relation,
                               run.graph.relation_labels[q.triple.relation], q.triple.tail,
                               run.graph.descriptions[q.triple.tail]);
    const std::vector<double> anchor = run.model.encode(seq);

    // search the whole store so the k nearest distinct entities survive dedup
    std::vector<NeighborHit> hits =
        dedupe_per_entity(knn_search(store, anchor, store.entries.size()));
    if (hits.size() > k) hits.resize(k);

    std::string out;
    char buf[32];
    auto append_vector = [&](const std::vector<double>& v) {
        for (size_t i = 0; i < v.size(); ++i) {
            if (i) out.push_back(' ');
            std::snprintf(buf, sizeof(buf), "%.17g", v[i]);
            out += buf;
        }
        out.push_back('\n');
    };
    out += "anchor\t-\t0\t-\t";
    append_vector(anchor);
    for (const NeighborHit& h : hits) {
        const StoreEntry& e = store.entries[h.entry];
        out += "neighbor\t" + run.graph.entity_labels[h.entity] + "\t";
        std::snprintf(buf, sizeof(buf), "%.17g", h.distance);
        out += buf;
        out += "\t";
        out.push_back(provenance_code(e.provenance));
        out += "\t";
        append_vector(e.key);
    }
    write_file_atomic(detail::artifact(cfg, "embeddings.txt"), out);
    std::printf("%zu rows written (anchor + %zu neighbors)\n", hits.size() + 1, hits.size());
    return 0;
}

// ---- dispatch ----

inline void print_usage() {
    std::printf(
        "usage: knnkge <command> [--config FILE] [--key value | --key=value ...]\n"
        "\n"
        "commands:\n"
        "  make-toy         write the bundled synthetic graph to out.dir\n"
        "  ingest           load triples + descriptions, build or load a split\n"
        "  train            run entity-expansion then masked-entity training\n"
        "  build-store      encode descriptions and train triples into the store\n"
        "  eval             interpolated link-prediction metrics on the test split\n"
        "  sweep            metrics over a (lambda, k) grid\n"
        "  bucket           metrics per gold-entity train-frequency bucket\n"
        "  explain          top entities by mem / knn / interpolated for one query\n"
        "  subsample-eval   retrain on train subsets and evaluate each\n"
        "  dump-embeddings  write a query anchor and its nearest store keys\n"
        "\n"
        "config keys (flags override file values override defaults):\n");
    for (const ConfigKey& k : config_schema())
        std::printf("  %-24s default %-12s %s\n", k.key,
                    k.fallback[0] ? k.fallback : "(empty)", k.help);
    std::printf("\nbare flags: --skip-expansion, --no-store, --raw, --help\n");
}

inline int run_cli(const std::vector<std::string>& args) {
    try {
        if (args.empty()) {
            print_usage();
            return 1;
        }
        if (args[0] == "--help" || args[0] == "help") {
            print_usage();
            return 0;
        }
        const std::string command = args[0];

        // two passes so --config applies below explicit flags regardless of order
        std::string config_path;
        std::vector<std::pair<std::string, std::string>> overrides;
        for (size_t i = 1; i < args.size(); ++i) {
            std::string arg = args[i];
            if (arg == "--help") {
                print_usage();
                return 0;
            }
            if (arg.rfind("--", 0) != 0)
                fail(ErrorKind::Argument, "unexpected argument: " + arg);
            arg = arg.substr(2);
            std::string value;
            bool has_value = false;
            const size_t eq = arg.find('=');
            if (eq != std::string::npos) {
                value = arg.substr(eq + 1);
                arg = arg.substr(0, eq);
                has_value = true;
            }
            if (auto bare = bare_flags().find(arg); bare != bare_flags().end()) {
                if (has_value)
                    fail(ErrorKind::Argument, "--" + arg + " takes no value");
                overrides.push_back(bare->second);
                continue;
            }
            if (!has_value) {
                if (i + 1 >= args.size())
                    fail(ErrorKind::Argument, "--" + arg + " needs a value");
                value = args[++i];
            }
            if (arg == "config") {
                config_path = value;
                continue;
            }
            auto alias = flag_aliases().find(arg);
            overrides.emplace_back(alias != flag_aliases().end() ? alias->second : arg,
                                   value);
        }

        RunConfig cfg;
        if (!config_path.empty()) detail::load_config_file(cfg, config_path);
        for (const auto& [key, value] : overrides) cfg.set(key, value);

        if (command == "make-toy") return cmd_make_toy(cfg);
        if (command == "ingest") return cmd_ingest(cfg);
        if (command == "train") return cmd_train(cfg);
        if (command == "build-store") return cmd_build_store(cfg);
        if (command == "eval") return cmd_eval(cfg);
        if (command == "sweep") return cmd_sweep(cfg);
        if (command == "bucket") return cmd_bucket(cfg);
        if (command == "explain") return cmd_explain(cfg);
        if (command == "subsample-eval") return cmd_subsample_eval(cfg);
        if (command == "dump-embeddings") return cmd_dump_embeddings(cfg);
        fail(ErrorKind::Argument, "unknown command: " + command);
    } catch (const Error& e) {
        std::fprintf(stderr, "error: %s: %s\n", to_string(e.kind()), e.what());
        return 1;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
}

}  // namespace knnkge
