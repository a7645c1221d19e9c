#pragma once
// Token vocabulary and the masked-query input templates. The vocabulary is
// word-level (lowercased, split on whitespace and punctuation) over relation
// labels and entity descriptions, extended by one special token per entity.

#include <algorithm>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "knnkge/error.hpp"
#include "knnkge/io.hpp"
#include "knnkge/kg.hpp"

namespace knnkge {

enum class SequenceKind : uint8_t {
    TailQuery,         // (e, r, ?)
    HeadQuery,         // (?, r, e)
    DescriptionInput,  // prompt + description
    StoreTripleInput,  // reserved for store-side tagging
};

struct EncodedSequence {
    std::vector<uint32_t> ids;
    size_t mask_position = 0;
    std::optional<uint32_t> target;  // entity id used as supervision, not input
    SequenceKind kind = SequenceKind::TailQuery;
};

class Vocabulary {
public:
    // fixed special-token ids
    static constexpr uint32_t kPad = 0;
    static constexpr uint32_t kUnk = 1;
    static constexpr uint32_t kCls = 2;
    static constexpr uint32_t kSep = 3;
    static constexpr uint32_t kMask = 4;
    static constexpr uint32_t kNumSpecials = 5;

    Vocabulary() = default;

    uint32_t size() const { return static_cast<uint32_t>(tokens_.size()); }
    uint32_t max_len() const { return max_len_; }
    bool expanded() const { return expanded_; }
    uint32_t entity_offset() const {
        if (!expanded_) fail(ErrorKind::State, "vocabulary has no entity tokens yet");
        return entity_offset_;
    }
    uint32_t num_entity_tokens() const { return size() - entity_offset(); }

    uint32_t entity_token(uint32_t entity_id) const {
        if (entity_offset() + entity_id >= size())
            fail(ErrorKind::Argument, "entity id out of range: " + std::to_string(entity_id));
        return entity_offset_ + entity_id;
    }

    const std::string& token_text(uint32_t id) const { return tokens_.at(id); }

    uint32_t base_token(const std::string& word) const {
        auto it = base_ids_.find(word);
        return it == base_ids_.end() ? kUnk : it->second;
    }

    // words are maximal runs of non-separator bytes; separators are ASCII
    // whitespace and punctuation; A-Z lowercased, other bytes kept as-is
    static std::vector<std::string> split_words(const std::string& text) {
        std::vector<std::string> words;
        std::string current;
        for (unsigned char c : text) {
            const bool sep = c < 0x80 && (std::isspace(c) || std::ispunct(c));
            if (sep) {
                if (!current.empty()) words.push_back(std::move(current)), current.clear();
            } else {
                current.push_back(c >= 'A' && c <= 'Z' ? static_cast<char>(c - 'A' + 'a')
                                                       : static_cast<char>(c));
            }
        }
        if (!current.empty()) words.push_back(std::move(current));
        return words;
    }

    // base-vocabulary token ids for a text; never emits entity or special tokens
    std::vector<uint32_t> tokenize(const std::string& text) const {
        std::vector<uint32_t> ids;
        for (const std::string& w : split_words(text)) ids.push_back(base_token(w));
        return ids;
    }

    friend Vocabulary build_vocabulary(const KnowledgeGraph&, uint32_t, uint32_t);
    friend void expand_entity_vocabulary(Vocabulary&, const std::vector<std::string>&);
    friend std::string render_vocabulary(const Vocabulary&);
    friend Vocabulary parse_vocabulary(const std::string&, uint32_t);

private:
    std::vector<std::string> tokens_;
    std::unordered_map<std::string, uint32_t> base_ids_;
    uint32_t entity_offset_ = 0;
    bool expanded_ = false;
    uint32_t max_len_ = 64;
};

// The description-input prompt, rendered as fixed words around the mask.
inline const std::vector<std::string>& prompt_words() {
    static const std::vector<std::string> words = {"the", "entity", "is"};
    return words;
}

// Builds the base vocabulary from relation labels and entity descriptions.
// Words below min_freq map to UNK. The prompt words are always retained so
// description inputs render without UNK. Token order: specials, then words by
// (frequency desc, lexicographic asc).
inline Vocabulary build_vocabulary(const KnowledgeGraph& graph, uint32_t min_freq,
                                   uint32_t max_len) {
    if (min_freq < 1) fail(ErrorKind::Argument, "min_freq must be >= 1");
    if (max_len < 8) fail(ErrorKind::Argument, "max_len must be >= 8");
    std::map<std::string, uint64_t> counts;  // ordered map keeps ties deterministic
    for (const std::string& label : graph.relation_labels)
        for (const std::string& w : Vocabulary::split_words(label)) ++counts[w];
    for (const std::string& d : graph.descriptions)
        for (const std::string& w : Vocabulary::split_words(d)) ++counts[w];
    for (const std::string& w : prompt_words())
        counts[w] = std::max(counts[w], static_cast<uint64_t>(min_freq));

    std::vector<std::pair<std::string, uint64_t>> kept;
    for (const auto& [word, count] : counts)
        if (count >= min_freq) kept.emplace_back(word, count);
    std::sort(kept.begin(), kept.end(), [](const auto& a, const auto& b) {
        if (a.second != b.second) return a.second > b.second;
        return a.first < b.first;
    });

    Vocabulary vocab;
    vocab.max_len_ = max_len;
    vocab.tokens_ = {"[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]"};
    for (const auto& [word, count] : kept) {
        vocab.base_ids_.emplace(word, vocab.size());
        vocab.tokens_.push_back(word);
    }
    return vocab;
}

// Appends one token per entity as a contiguous block and records the offset.
inline void expand_entity_vocabulary(Vocabulary& vocab,
                                     const std::vector<std::string>& entity_labels) {
    if (vocab.expanded_)
        fail(ErrorKind::State, "entity vocabulary already expanded");
    vocab.entity_offset_ = vocab.size();
    vocab.expanded_ = true;
    for (const std::string& label : entity_labels) vocab.tokens_.push_back(label);
}

// ---- input templates ----

namespace detail {

inline void require_expanded(const Vocabulary& vocab) {
    if (!vocab.expanded()) fail(ErrorKind::State, "vocabulary has no entity tokens yet");
}

// Shared fit rule: description tokens are dropped from the right first, then
// relation tokens from the right; the six fixed slots must fit.
inline void fit_query(const Vocabulary& vocab, std::vector<uint32_t>& rel_toks,
                      std::vector<uint32_t>& desc_toks) {
    constexpr size_t fixed = 6;  // CLS, entity, MASK, 3x SEP
    if (vocab.max_len() < fixed)
        fail(ErrorKind::Argument, "max_len too small for query template");
    const size_t budget = vocab.max_len() - fixed;
    if (rel_toks.size() > budget) {
        rel_toks.resize(budget);
        desc_toks.clear();
        return;
    }
    const size_t desc_budget = budget - rel_toks.size();
    if (desc_toks.size() > desc_budget) desc_toks.resize(desc_budget);
}

}  // namespace detail

// [CLS] <e_i> d [SEP] r_j [SEP] [MASK] [SEP], mask in the tail slot
inline EncodedSequence build_tail_query(const Vocabulary& vocab, uint32_t head_entity,
                                        const std::string& head_description,
                                        uint32_t relation_id,
                                        const std::string& relation_label) {
    detail::require_expanded(vocab);
    (void)relation_id;
    std::vector<uint32_t> rel = vocab.tokenize(relation_label);
    std::vector<uint32_t> desc = vocab.tokenize(head_description);
    detail::fit_query(vocab, rel, desc);

    EncodedSequence seq;
    seq.kind = SequenceKind::TailQuery;
    seq.ids.push_back(Vocabulary::kCls);
    seq.ids.push_back(vocab.entity_token(head_entity));
    seq.ids.insert(seq.ids.end(), desc.begin(), desc.end());
    seq.ids.push_back(Vocabulary::kSep);
    seq.ids.insert(seq.ids.end(), rel.begin(), rel.end());
    seq.ids.push_back(Vocabulary::kSep);
    seq.mask_position = seq.ids.size();
    seq.ids.push_back(Vocabulary::kMask);
    seq.ids.push_back(Vocabulary::kSep);
    return seq;
}

// [CLS] [MASK] [SEP] r_j [SEP] <e_k> d [SEP], mirror template, mask at 1
inline EncodedSequence build_head_query(const Vocabulary& vocab, uint32_t relation_id,
                                        const std::string& relation_label,
                                        uint32_t tail_entity,
                                        const std::string& tail_description) {
    detail::require_expanded(vocab);
    (void)relation_id;
    std::vector<uint32_t> rel = vocab.tokenize(relation_label);
    std::vector<uint32_t> desc = vocab.tokenize(tail_description);
    detail::fit_query(vocab, rel, desc);

    EncodedSequence seq;
    seq.kind = SequenceKind::HeadQuery;
    seq.ids.push_back(Vocabulary::kCls);
    seq.mask_position = 1;
    seq.ids.push_back(Vocabulary::kMask);
    seq.ids.push_back(Vocabulary::kSep);
    seq.ids.insert(seq.ids.end(), rel.begin(), rel.end());
    seq.ids.push_back(Vocabulary::kSep);
    seq.ids.push_back(vocab.entity_token(tail_entity));
    seq.ids.insert(seq.ids.end(), desc.begin(), desc.end());
    seq.ids.push_back(Vocabulary::kSep);
    return seq;
}

// [CLS] the entity [MASK] is [SEP] d [SEP]; the entity id is the target only
inline EncodedSequence build_description_input(const Vocabulary& vocab, uint32_t entity_id,
                                               const std::string& description) {
    detail::require_expanded(vocab);
    const size_t fixed = 4 + prompt_words().size();  // CLS, MASK, 2x SEP, prompt
    if (vocab.max_len() < fixed)
        fail(ErrorKind::Argument, "max_len too small for description template");
    std::vector<uint32_t> desc = vocab.tokenize(description);
    const size_t budget = vocab.max_len() - fixed;
    if (desc.size() > budget) desc.resize(budget);

    EncodedSequence seq;
    seq.kind = SequenceKind::DescriptionInput;
    seq.target = entity_id;
    seq.ids.push_back(Vocabulary::kCls);
    seq.ids.push_back(vocab.base_token(prompt_words()[0]));
    seq.ids.push_back(vocab.base_token(prompt_words()[1]));
    seq.mask_position = seq.ids.size();
    seq.ids.push_back(Vocabulary::kMask);
    seq.ids.push_back(vocab.base_token(prompt_words()[2]));
    seq.ids.push_back(Vocabulary::kSep);
    seq.ids.insert(seq.ids.end(), desc.begin(), desc.end());
    seq.ids.push_back(Vocabulary::kSep);
    return seq;
}

// ---- serialization: header line "#entity_offset=<n>", one token per line ----

inline std::string render_vocabulary(const Vocabulary& vocab) {
    std::string out = "#entity_offset=" +
                      std::to_string(vocab.expanded_ ? vocab.entity_offset_ : vocab.size()) + "\n";
    for (const std::string& t : vocab.tokens_) {
        out += t;
        out += '\n';
    }
    return out;
}

inline Vocabulary parse_vocabulary(const std::string& text, uint32_t max_len) {
    const auto lines = split_lines(text);
    if (lines.empty() || lines[0].rfind("#entity_offset=", 0) != 0)
        fail(ErrorKind::Format, "vocabulary file: missing #entity_offset header");
    Vocabulary vocab;
    vocab.max_len_ = max_len;
    vocab.entity_offset_ = static_cast<uint32_t>(std::stoul(lines[0].substr(15)));
    vocab.expanded_ = true;
    for (size_t i = 1; i < lines.size(); ++i) vocab.tokens_.push_back(lines[i]);
    if (vocab.tokens_.size() < Vocabulary::kNumSpecials ||
        vocab.tokens_[0] != "[PAD]" || vocab.tokens_[1] != "[UNK]" ||
        vocab.tokens_[2] != "[CLS]" || vocab.tokens_[3] != "[SEP]" ||
        vocab.tokens_[4] != "[MASK]")
        fail(ErrorKind::Format, "vocabulary file: special tokens missing or reordered");
    if (vocab.entity_offset_ > vocab.tokens_.size())
        fail(ErrorKind::Format, "vocabulary file: entity_offset beyond token count");
    for (uint32_t id = Vocabulary::kNumSpecials; id < vocab.entity_offset_; ++id)
        vocab.base_ids_.emplace(vocab.tokens_[id], id);
    return vocab;
}

inline void save_vocabulary(const Vocabulary& vocab, const std::string& path) {
    write_file_atomic(path, render_vocabulary(vocab));
}

inline Vocabulary load_vocabulary(const std::string& path, uint32_t max_len) {
    return parse_vocabulary(read_file(path), max_len);
}

}  // namespace knnkge
