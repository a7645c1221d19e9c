#pragma once
// Small from-scratch contextual encoder with a masked-entity head.
//
// All parameters live in one flat vector<double> so checkpoints, gradient
// checks and finite-difference probes can address them uniformly. Layout,
// in order:
//   token embeddings        vocab_size x dim   (row-major)
//   positional embeddings   max_len x dim
//   embedding LayerNorm     gamma[dim], beta[dim]
//   per block (layers times):
//     Wq[dim x dim], bq[dim], Wk, bk, Wv, bv, Wo, bo
//     LayerNorm1 gamma, beta          (after attention residual)
//     W1[dim x ffn], b1[ffn], W2[ffn x dim], b2[dim]
//     LayerNorm2 gamma, beta          (after feed-forward residual)
//
// The entity head is tied: row of the token embedding matrix at
// entity_offset + e scores entity e. Blocks are post-norm; linears use the
// y = x W + b convention with row-major W[in x out].

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <string>
#include <vector>

#include "knnkge/error.hpp"
#include "knnkge/io.hpp"
#include "knnkge/kg.hpp"
#include "knnkge/rng.hpp"
#include "knnkge/text.hpp"

namespace knnkge {

struct ModelConfig {
    uint32_t dim = 64;
    uint32_t layers = 2;
    uint32_t heads = 2;
    uint32_t max_len = 64;
    uint32_t vocab_size = 0;
    uint32_t entity_offset = 0;

    uint32_t ffn_hidden() const { return 4 * dim; }
    uint32_t num_entities() const { return vocab_size - entity_offset; }

    void validate() const {
        if (dim < 8) fail(ErrorKind::Config, "model dim must be >= 8");
        if (layers < 1) fail(ErrorKind::Config, "model needs at least one block");
        if (heads < 1 || dim % heads != 0)
            fail(ErrorKind::Config, "heads must divide dim");
        if (max_len < 8) fail(ErrorKind::Config, "max_len must be >= 8");
        if (entity_offset < Vocabulary::kNumSpecials || entity_offset > vocab_size)
            fail(ErrorKind::Config, "entity_offset out of range");
    }
};

enum class TrainStage : uint8_t { Expansion, Mem };

struct TrainConfig {
    TrainStage stage = TrainStage::Expansion;
    double lr = 0.1;
    uint32_t epochs = 100;
    uint32_t batch_size = 0;  // 0 = full batch
    uint64_t seed = 0;

    void validate() const {
        if (!(lr > 0.0) || !std::isfinite(lr))
            fail(ErrorKind::Config, "learning rate must be positive");
        if (epochs < 1) fail(ErrorKind::Config, "epochs must be >= 1");
    }
};

struct TrainLog {
    std::vector<double> epoch_losses;
};

struct ParamLayout {
    struct Block {
        size_t wq, bq, wk, bk, wv, bv, wo, bo;
        size_t ln1_g, ln1_b;
        size_t w1, b1, w2, b2;
        size_t ln2_g, ln2_b;
    };

    size_t token_emb = 0;
    size_t pos_emb = 0;
    size_t ln0_g = 0, ln0_b = 0;
    std::vector<Block> blocks;
    size_t total = 0;

    ParamLayout() = default;
    explicit ParamLayout(const ModelConfig& cfg) {
        const size_t d = cfg.dim, f = cfg.ffn_hidden();
        size_t off = 0;
        auto take = [&off](size_t n) { size_t at = off; off += n; return at; };
        token_emb = take(static_cast<size_t>(cfg.vocab_size) * d);
        pos_emb = take(static_cast<size_t>(cfg.max_len) * d);
        ln0_g = take(d);
        ln0_b = take(d);
        blocks.resize(cfg.layers);
        for (Block& b : blocks) {
            b.wq = take(d * d); b.bq = take(d);
            b.wk = take(d * d); b.bk = take(d);
            b.wv = take(d * d); b.bv = take(d);
            b.wo = take(d * d); b.bo = take(d);
            b.ln1_g = take(d); b.ln1_b = take(d);
            b.w1 = take(d * f); b.b1 = take(f);
            b.w2 = take(f * d); b.b2 = take(d);
            b.ln2_g = take(d); b.ln2_b = take(d);
        }
        total = off;
    }
};

namespace detail {

constexpr double kLnEps = 1e-5;
constexpr double kInvSqrt2 = 0.70710678118654752440;
constexpr double kInvSqrt2Pi = 0.39894228040143267794;

inline double gelu(double x) { return 0.5 * x * (1.0 + std::erf(x * kInvSqrt2)); }

inline double gelu_grad(double x) {
    const double cdf = 0.5 * (1.0 + std::erf(x * kInvSqrt2));
    const double pdf = std::exp(-0.5 * x * x) * kInvSqrt2Pi;
    return cdf + x * pdf;
}

// y[T x out] = x[T x in] W[in x out] + b[out]
inline void linear_forward(const double* x, const double* w, const double* b, double* y,
                           size_t t_len, size_t in, size_t out) {
    for (size_t t = 0; t < t_len; ++t) {
        double* yt = y + t * out;
        for (size_t o = 0; o < out; ++o) yt[o] = b[o];
        const double* xt = x + t * in;
        for (size_t i = 0; i < in; ++i) {
            const double xi = xt[i];
            const double* wi = w + i * out;
            for (size_t o = 0; o < out; ++o) yt[o] += xi * wi[o];
        }
    }
}

// accumulates dx += dy Wᵀ, dw += xᵀ dy, db += Σ_t dy
inline void linear_backward(const double* x, const double* w, const double* dy, double* dx,
                            double* dw, double* db, size_t t_len, size_t in, size_t out) {
    for (size_t t = 0; t < t_len; ++t) {
        const double* dyt = dy + t * out;
        const double* xt = x + t * in;
        double* dxt = dx + t * in;
        for (size_t i = 0; i < in; ++i) {
            const double* wi = w + i * out;
            double s = 0.0;
            for (size_t o = 0; o < out; ++o) s += dyt[o] * wi[o];
            dxt[i] += s;
            const double xi = xt[i];
            double* dwi = dw + i * out;
            for (size_t o = 0; o < out; ++o) dwi[o] += xi * dyt[o];
        }
        for (size_t o = 0; o < out; ++o) db[o] += dyt[o];
    }
}

inline void layernorm_forward(const double* x, const double* gamma, const double* beta,
                              double* y, double* mean, double* rstd, size_t t_len, size_t n) {
    for (size_t t = 0; t < t_len; ++t) {
        const double* xt = x + t * n;
        double m = 0.0;
        for (size_t i = 0; i < n; ++i) m += xt[i];
        m /= static_cast<double>(n);
        double v = 0.0;
        for (size_t i = 0; i < n; ++i) {
            const double c = xt[i] - m;
            v += c * c;
        }
        v /= static_cast<double>(n);
        const double r = 1.0 / std::sqrt(v + kLnEps);
        mean[t] = m;
        rstd[t] = r;
        double* yt = y + t * n;
        for (size_t i = 0; i < n; ++i) yt[i] = gamma[i] * (xt[i] - m) * r + beta[i];
    }
}

// accumulates dx += ..., dgamma += ..., dbeta += ...
inline void layernorm_backward(const double* x, const double* gamma, const double* mean,
                               const double* rstd, const double* dy, double* dx,
                               double* dgamma, double* dbeta, size_t t_len, size_t n) {
    std::vector<double> dxhat(n);
    for (size_t t = 0; t < t_len; ++t) {
        const double* xt = x + t * n;
        const double* dyt = dy + t * n;
        const double m = mean[t], r = rstd[t];
        double a = 0.0, b = 0.0;
        for (size_t i = 0; i < n; ++i) {
            const double xhat = (xt[i] - m) * r;
            dbeta[i] += dyt[i];
            dgamma[i] += dyt[i] * xhat;
            dxhat[i] = dyt[i] * gamma[i];
            a += dxhat[i];
            b += dxhat[i] * xhat;
        }
        a /= static_cast<double>(n);
        b /= static_cast<double>(n);
        double* dxt = dx + t * n;
        for (size_t i = 0; i < n; ++i)
            dxt[i] += r * (dxhat[i] - a - (xt[i] - m) * r * b);
    }
}

}  // namespace detail

// Every intermediate needed by the backward pass, kept per sequence.
struct ForwardCache {
    std::vector<uint32_t> ids;
    std::vector<double> x0;                  // embedding sums before LayerNorm
    std::vector<double> h0;                  // after embedding LayerNorm
    std::vector<double> ln0_mean, ln0_rstd;  // per position
    struct BlockCache {
        std::vector<double> q, k, v;             // T x dim
        std::vector<double> probs;               // heads x T x T
        std::vector<double> concat;              // T x dim, attention context
        std::vector<double> res1;                // input + attention output
        std::vector<double> h1;                  // after LayerNorm1
        std::vector<double> ln1_mean, ln1_rstd;
        std::vector<double> ffn_pre, ffn_act;    // T x ffn
        std::vector<double> res2;                // h1 + ffn output
        std::vector<double> h2;                  // after LayerNorm2
        std::vector<double> ln2_mean, ln2_rstd;
    };
    std::vector<BlockCache> blocks;

    size_t length() const { return ids.size(); }
    const std::vector<double>& final_hidden() const { return blocks.back().h2; }
};

class EncoderModel {
public:
    ModelConfig config;
    std::vector<double> params;
    std::vector<uint32_t> mem_candidates;  // ascending entity ids scored by the head

    EncoderModel() = default;

    static EncoderModel init(const ModelConfig& cfg, std::vector<uint32_t> candidates,
                             uint64_t seed) {
        cfg.validate();
        EncoderModel m;
        m.config = cfg;
        m.layout_ = ParamLayout(cfg);
        m.set_candidates(std::move(candidates));
        m.params.assign(m.layout_.total, 0.0);
        Rng rng(seed);
        auto fill_gaussian = [&](size_t at, size_t n) {
            for (size_t i = 0; i < n; ++i) m.params[at + i] = rng.gaussian() * 0.02;
        };
        auto fill_ones = [&](size_t at, size_t n) {
            std::fill_n(m.params.begin() + static_cast<ptrdiff_t>(at), n, 1.0);
        };
        const size_t d = cfg.dim, f = cfg.ffn_hidden();
        fill_gaussian(m.layout_.token_emb, static_cast<size_t>(cfg.vocab_size) * d);
        fill_gaussian(m.layout_.pos_emb, static_cast<size_t>(cfg.max_len) * d);
        fill_ones(m.layout_.ln0_g, d);
        for (const ParamLayout::Block& b : m.layout_.blocks) {
            fill_gaussian(b.wq, d * d);
            fill_gaussian(b.wk, d * d);
            fill_gaussian(b.wv, d * d);
            fill_gaussian(b.wo, d * d);
            fill_ones(b.ln1_g, d);
            fill_gaussian(b.w1, d * f);
            fill_gaussian(b.w2, f * d);
            fill_ones(b.ln2_g, d);
        }
        return m;
    }

    const ParamLayout& layout() const { return layout_; }
    size_t num_params() const { return layout_.total; }

    bool is_candidate(uint32_t entity) const {
        return entity < candidate_index_.size() && candidate_index_[entity] >= 0;
    }
    int32_t candidate_index(uint32_t entity) const {
        return entity < candidate_index_.size() ? candidate_index_[entity] : -1;
    }

    size_t entity_row(uint32_t entity) const {
        return layout_.token_emb +
               (static_cast<size_t>(config.entity_offset) + entity) * config.dim;
    }

    ForwardCache forward(const std::vector<uint32_t>& ids) const {
        const size_t t_len = ids.size();
        if (t_len == 0) fail(ErrorKind::Argument, "cannot encode an empty sequence");
        if (t_len > config.max_len)
            fail(ErrorKind::Argument, "sequence length " + std::to_string(t_len) +
                                          " exceeds max_len " + std::to_string(config.max_len));
        for (uint32_t id : ids)
            if (id >= config.vocab_size)
                fail(ErrorKind::Argument, "token id out of range: " + std::to_string(id));

        const size_t d = config.dim, f = config.ffn_hidden(), nh = config.heads;
        const size_t hd = d / nh;
        const double scale = 1.0 / std::sqrt(static_cast<double>(hd));
        const double* p = params.data();

        ForwardCache fc;
        fc.ids = ids;
        fc.x0.resize(t_len * d);
        for (size_t t = 0; t < t_len; ++t) {
            const double* tok = p + layout_.token_emb + static_cast<size_t>(ids[t]) * d;
            const double* pos = p + layout_.pos_emb + t * d;
            for (size_t i = 0; i < d; ++i) fc.x0[t * d + i] = tok[i] + pos[i];
        }
        fc.h0.resize(t_len * d);
        fc.ln0_mean.resize(t_len);
        fc.ln0_rstd.resize(t_len);
        detail::layernorm_forward(fc.x0.data(), p + layout_.ln0_g, p + layout_.ln0_b,
                                  fc.h0.data(), fc.ln0_mean.data(), fc.ln0_rstd.data(),
                                  t_len, d);

        fc.blocks.resize(config.layers);
        const double* h_in = fc.h0.data();
        for (uint32_t l = 0; l < config.layers; ++l) {
            const ParamLayout::Block& pb = layout_.blocks[l];
            ForwardCache::BlockCache& bc = fc.blocks[l];
            bc.q.resize(t_len * d);
            bc.k.resize(t_len * d);
            bc.v.resize(t_len * d);
            detail::linear_forward(h_in, p + pb.wq, p + pb.bq, bc.q.data(), t_len, d, d);
            detail::linear_forward(h_in, p + pb.wk, p + pb.bk, bc.k.data(), t_len, d, d);
            detail::linear_forward(h_in, p + pb.wv, p + pb.bv, bc.v.data(), t_len, d, d);

            bc.probs.assign(nh * t_len * t_len, 0.0);
            bc.concat.assign(t_len * d, 0.0);
            std::vector<double> scores(t_len);
            for (size_t h = 0; h < nh; ++h) {
                const size_t ho = h * hd;
                for (size_t t = 0; t < t_len; ++t) {
                    const double* qt = bc.q.data() + t * d + ho;
                    double mx = -std::numeric_limits<double>::infinity();
                    for (size_t s = 0; s < t_len; ++s) {
                        const double* ks = bc.k.data() + s * d + ho;
                        double dot = 0.0;
                        for (size_t j = 0; j < hd; ++j) dot += qt[j] * ks[j];
                        scores[s] = dot * scale;
                        mx = std::max(mx, scores[s]);
                    }
                    double denom = 0.0;
                    double* prow = bc.probs.data() + (h * t_len + t) * t_len;
                    for (size_t s = 0; s < t_len; ++s) {
                        prow[s] = std::exp(scores[s] - mx);
                        denom += prow[s];
                    }
                    double* ct = bc.concat.data() + t * d + ho;
                    for (size_t s = 0; s < t_len; ++s) {
                        prow[s] /= denom;
                        const double* vs = bc.v.data() + s * d + ho;
                        for (size_t j = 0; j < hd; ++j) ct[j] += prow[s] * vs[j];
                    }
                }
            }

            bc.res1.resize(t_len * d);
            detail::linear_forward(bc.concat.data(), p + pb.wo, p + pb.bo, bc.res1.data(),
                                   t_len, d, d);
            for (size_t i = 0; i < t_len * d; ++i) bc.res1[i] += h_in[i];
            bc.h1.resize(t_len * d);
            bc.ln1_mean.resize(t_len);
            bc.ln1_rstd.resize(t_len);
            detail::layernorm_forward(bc.res1.data(), p + pb.ln1_g, p + pb.ln1_b,
                                      bc.h1.data(), bc.ln1_mean.data(), bc.ln1_rstd.data(),
                                      t_len, d);

            bc.ffn_pre.resize(t_len * f);
            detail::linear_forward(bc.h1.data(), p + pb.w1, p + pb.b1, bc.ffn_pre.data(),
                                   t_len, d, f);
            bc.ffn_act.resize(t_len * f);
            for (size_t i = 0; i < t_len * f; ++i) bc.ffn_act[i] = detail::gelu(bc.ffn_pre[i]);
            bc.res2.resize(t_len * d);
            detail::linear_forward(bc.ffn_act.data(), p + pb.w2, p + pb.b2, bc.res2.data(),
                                   t_len, f, d);
            for (size_t i = 0; i < t_len * d; ++i) bc.res2[i] += bc.h1[i];
            bc.h2.resize(t_len * d);
            bc.ln2_mean.resize(t_len);
            bc.ln2_rstd.resize(t_len);
            detail::layernorm_forward(bc.res2.data(), p + pb.ln2_g, p + pb.ln2_b,
                                      bc.h2.data(), bc.ln2_mean.data(), bc.ln2_rstd.data(),
                                      t_len, d);
            h_in = bc.h2.data();
        }
        return fc;
    }

    // Backpropagates d_hidden (T x dim gradient at the final block output) into
    // grad, which must have num_params() entries and is accumulated into.
    void backward(const ForwardCache& fc, std::vector<double> d_hidden,
                  std::vector<double>& grad) const {
        const size_t t_len = fc.length();
        const size_t d = config.dim, f = config.ffn_hidden(), nh = config.heads;
        const size_t hd = d / nh;
        const double scale = 1.0 / std::sqrt(static_cast<double>(hd));
        const double* p = params.data();
        double* g = grad.data();

        std::vector<double> dres(t_len * d), dcat(t_len * d), dq(t_len * d), dk(t_len * d),
            dv(t_len * d), dact(t_len * f), dpre(t_len * f), dh_in(t_len * d);
        std::vector<double> dprow(t_len);
        for (uint32_t l = config.layers; l-- > 0;) {
            const ParamLayout::Block& pb = layout_.blocks[l];
            const ForwardCache::BlockCache& bc = fc.blocks[l];
            const double* h_in = l == 0 ? fc.h0.data() : fc.blocks[l - 1].h2.data();

            std::fill(dres.begin(), dres.end(), 0.0);
            detail::layernorm_backward(bc.res2.data(), p + pb.ln2_g, bc.ln2_mean.data(),
                                       bc.ln2_rstd.data(), d_hidden.data(), dres.data(),
                                       g + pb.ln2_g, g + pb.ln2_b, t_len, d);

            // feed-forward branch; dres also flows to h1 via the residual
            std::fill(dact.begin(), dact.end(), 0.0);
            detail::linear_backward(bc.ffn_act.data(), p + pb.w2, dres.data(), dact.data(),
                                    g + pb.w2, g + pb.b2, t_len, f, d);
            for (size_t i = 0; i < t_len * f; ++i)
                dpre[i] = dact[i] * detail::gelu_grad(bc.ffn_pre[i]);
            std::vector<double>& dh1 = d_hidden;  // reuse as the h1 gradient
            dh1 = dres;
            detail::linear_backward(bc.h1.data(), p + pb.w1, dpre.data(), dh1.data(),
                                    g + pb.w1, g + pb.b1, t_len, d, f);

            std::fill(dres.begin(), dres.end(), 0.0);
            detail::layernorm_backward(bc.res1.data(), p + pb.ln1_g, bc.ln1_mean.data(),
                                       bc.ln1_rstd.data(), dh1.data(), dres.data(),
                                       g + pb.ln1_g, g + pb.ln1_b, t_len, d);

            // attention branch
            dh_in = dres;  // residual path
            std::fill(dcat.begin(), dcat.end(), 0.0);
            detail::linear_backward(bc.concat.data(), p + pb.wo, dres.data(), dcat.data(),
                                    g + pb.wo, g + pb.bo, t_len, d, d);
            std::fill(dq.begin(), dq.end(), 0.0);
            std::fill(dk.begin(), dk.end(), 0.0);
            std::fill(dv.begin(), dv.end(), 0.0);
            for (size_t h = 0; h < nh; ++h) {
                const size_t ho = h * hd;
                for (size_t t = 0; t < t_len; ++t) {
                    const double* prow = bc.probs.data() + (h * t_len + t) * t_len;
                    const double* dct = dcat.data() + t * d + ho;
                    double dot = 0.0;
                    for (size_t s = 0; s < t_len; ++s) {
                        const double* vs = bc.v.data() + s * d + ho;
                        double dp = 0.0;
                        for (size_t j = 0; j < hd; ++j) {
                            dp += dct[j] * vs[j];
                            dv[s * d + ho + j] += prow[s] * dct[j];
                        }
                        dprow[s] = dp;
                        dot += prow[s] * dp;
                    }
                    const double* qt = bc.q.data() + t * d + ho;
                    for (size_t s = 0; s < t_len; ++s) {
                        const double ds = prow[s] * (dprow[s] - dot) * scale;
                        const double* ks = bc.k.data() + s * d + ho;
                        for (size_t j = 0; j < hd; ++j) {
                            dq[t * d + ho + j] += ds * ks[j];
                            dk[s * d + ho + j] += ds * qt[j];
                        }
                    }
                }
            }
            detail::linear_backward(h_in, p + pb.wq, dq.data(), dh_in.data(), g + pb.wq,
                                    g + pb.bq, t_len, d, d);
            detail::linear_backward(h_in, p + pb.wk, dk.data(), dh_in.data(), g + pb.wk,
                                    g + pb.bk, t_len, d, d);
            detail::linear_backward(h_in, p + pb.wv, dv.data(), dh_in.data(), g + pb.wv,
                                    g + pb.bv, t_len, d, d);
            d_hidden = dh_in;
        }

        std::fill(dres.begin(), dres.end(), 0.0);
        detail::layernorm_backward(fc.x0.data(), p + layout_.ln0_g, fc.ln0_mean.data(),
                                   fc.ln0_rstd.data(), d_hidden.data(), dres.data(),
                                   g + layout_.ln0_g, g + layout_.ln0_b, t_len, d);
        for (size_t t = 0; t < t_len; ++t) {
            double* tok = g + layout_.token_emb + static_cast<size_t>(fc.ids[t]) * d;
            double* pos = g + layout_.pos_emb + t * d;
            for (size_t i = 0; i < d; ++i) {
                tok[i] += dres[t * d + i];
                pos[i] += dres[t * d + i];
            }
        }
    }

    std::vector<double> encode(const EncodedSequence& seq) const {
        check_mask(seq);
        ForwardCache fc = forward(seq.ids);
        const double* h = fc.final_hidden().data() + seq.mask_position * config.dim;
        return std::vector<double>(h, h + config.dim);
    }

    // softmax over the candidate set; indexes follow mem_candidates order
    std::vector<double> candidate_probs(const double* anchor) const {
        const size_t n = mem_candidates.size();
        std::vector<double> out(n);
        for (size_t c = 0; c < n; ++c) {
            const double* row = params.data() + entity_row(mem_candidates[c]);
            double dot = 0.0;
            for (uint32_t j = 0; j < config.dim; ++j) dot += anchor[j] * row[j];
            out[c] = dot;
        }
        const double mx = *std::max_element(out.begin(), out.end());
        double denom = 0.0;
        for (double& z : out) {
            z = std::exp(z - mx);
            denom += z;
        }
        for (double& z : out) z /= denom;
        return out;
    }

    // Dense distribution over all entities; entities outside the candidate set
    // (unseen in training) get exactly zero.
    std::vector<double> mem_distribution(const EncodedSequence& seq) const {
        const std::vector<double> anchor = encode(seq);
        const std::vector<double> probs = candidate_probs(anchor.data());
        std::vector<double> dense(config.num_entities(), 0.0);
        for (size_t c = 0; c < probs.size(); ++c) dense[mem_candidates[c]] = probs[c];
        return dense;
    }

    double expansion_loss(const std::vector<EncodedSequence>& batch) const {
        double total = 0.0;
        for (const EncodedSequence& seq : batch) {
            check_expansion_example(seq);
            const std::vector<double> anchor = encode(seq);
            total += example_loss(anchor.data(), *seq.target);
        }
        return total / static_cast<double>(batch.size());
    }

    // Gradient with respect to the expansion stage's trainable set: only the
    // entity-token rows receive gradient, the frozen backbone stays zero.
    double expansion_loss_grad(const std::vector<EncodedSequence>& batch,
                               std::vector<double>& grad) const {
        grad.assign(num_params(), 0.0);
        double total = 0.0;
        for (const EncodedSequence& seq : batch) {
            check_expansion_example(seq);
            const std::vector<double> anchor = encode(seq);
            total += head_backward(anchor.data(), *seq.target, grad, nullptr);
        }
        const double inv = 1.0 / static_cast<double>(batch.size());
        for (double& v : grad) v *= inv;
        return total * inv;
    }

    double mem_loss(const std::vector<EncodedSequence>& batch) const {
        double total = 0.0;
        for (const EncodedSequence& seq : batch) {
            check_mem_example(seq);
            const std::vector<double> anchor = encode(seq);
            total += example_loss(anchor.data(), *seq.target);
        }
        return total / static_cast<double>(batch.size());
    }

    double mem_loss_grad(const std::vector<EncodedSequence>& batch,
                         std::vector<double>& grad) const {
        grad.assign(num_params(), 0.0);
        double total = 0.0;
        for (const EncodedSequence& seq : batch) total += mem_example_grad(seq, grad);
        const double inv = 1.0 / static_cast<double>(batch.size());
        for (double& v : grad) v *= inv;
        return total * inv;
    }

    // Single-example loss with full backpropagation, accumulated unscaled.
    double mem_example_grad(const EncodedSequence& seq, std::vector<double>& grad) const {
        check_mem_example(seq);
        ForwardCache fc = forward(seq.ids);
        const size_t t_len = fc.length();
        const double* anchor = fc.final_hidden().data() + seq.mask_position * config.dim;
        std::vector<double> d_anchor(config.dim, 0.0);
        const double loss = head_backward(anchor, *seq.target, grad, d_anchor.data());
        std::vector<double> d_hidden(t_len * config.dim, 0.0);
        std::copy(d_anchor.begin(), d_anchor.end(),
                  d_hidden.begin() + static_cast<ptrdiff_t>(seq.mask_position * config.dim));
        backward(fc, std::move(d_hidden), grad);
        return loss;
    }

    void set_candidates(std::vector<uint32_t> candidates) {
        if (candidates.empty())
            fail(ErrorKind::Argument, "the entity head needs at least one candidate");
        for (size_t i = 1; i < candidates.size(); ++i)
            if (candidates[i] <= candidates[i - 1])
                fail(ErrorKind::Argument, "candidate ids must be ascending and unique");
        if (candidates.back() >= config.num_entities())
            fail(ErrorKind::Argument, "candidate id beyond entity count");
        mem_candidates = std::move(candidates);
        candidate_index_.assign(config.num_entities(), -1);
        for (size_t c = 0; c < mem_candidates.size(); ++c)
            candidate_index_[mem_candidates[c]] = static_cast<int32_t>(c);
    }

private:
    ParamLayout layout_;
    std::vector<int32_t> candidate_index_;

    static void check_mask(const EncodedSequence& seq) {
        if (seq.mask_position >= seq.ids.size() ||
            seq.ids[seq.mask_position] != Vocabulary::kMask)
            fail(ErrorKind::Argument, "mask_position does not point at a MASK token");
    }

    void check_expansion_example(const EncodedSequence& seq) const {
        if (seq.kind != SequenceKind::DescriptionInput)
            fail(ErrorKind::Argument, "expansion batch expects description inputs");
        check_target(seq);
    }

    void check_mem_example(const EncodedSequence& seq) const {
        if (seq.kind != SequenceKind::TailQuery && seq.kind != SequenceKind::HeadQuery)
            fail(ErrorKind::Argument, "mem batch expects head or tail queries");
        check_target(seq);
    }

    void check_target(const EncodedSequence& seq) const {
        if (!seq.target) fail(ErrorKind::Argument, "training sequence without a target");
        if (!is_candidate(*seq.target))
            fail(ErrorKind::Argument,
                 "target entity " + std::to_string(*seq.target) + " is not a head candidate");
    }

    double example_loss(const double* anchor, uint32_t target) const {
        const std::vector<double> probs = candidate_probs(anchor);
        return -std::log(probs[static_cast<size_t>(candidate_index(target))]);
    }

    // Cross-entropy at the head: accumulates entity-row gradients into grad
    // and, when d_anchor is given, the gradient with respect to the anchor.
    double head_backward(const double* anchor, uint32_t target, std::vector<double>& grad,
                         double* d_anchor) const {
        const std::vector<double> probs = candidate_probs(anchor);
        const size_t tc = static_cast<size_t>(candidate_index(target));
        for (size_t c = 0; c < probs.size(); ++c) {
            const double dz = probs[c] - (c == tc ? 1.0 : 0.0);
            const double* row = params.data() + entity_row(mem_candidates[c]);
            double* drow = grad.data() + entity_row(mem_candidates[c]);
            for (uint32_t j = 0; j < config.dim; ++j) {
                drow[j] += dz * anchor[j];
                if (d_anchor) d_anchor[j] += dz * row[j];
            }
        }
        return -std::log(probs[tc]);
    }
};

// ---- training stages ----

namespace detail {

inline std::vector<EncodedSequence> mem_sequences(const KnowledgeGraph& graph,
                                                  const std::vector<Triple>& triples,
                                                  const Vocabulary& vocab) {
    std::vector<EncodedSequence> seqs;
    seqs.reserve(triples.size() * 2);
    for (const Triple& t : triples) {
        EncodedSequence tail = build_tail_query(vocab, t.head, graph.descriptions[t.head],
                                                t.relation, graph.relation_labels[t.relation]);
        tail.target = t.tail;
        seqs.push_back(std::move(tail));
        EncodedSequence head = build_head_query(vocab, t.relation,
                                                graph.relation_labels[t.relation], t.tail,
                                                graph.descriptions[t.tail]);
        head.target = t.head;
        seqs.push_back(std::move(head));
    }
    return seqs;
}

}  // namespace detail

// Fits the entity-token embeddings from descriptions with the backbone frozen.
// Entity rows are freshly drawn from the seeded initializer, then trained by
// gradient descent; every non-entity parameter is left bit-identical. The
// anchors never depend on entity rows (description inputs carry no entity
// tokens), so they are computed once up front.
inline TrainLog train_expansion(EncoderModel& model, const KnowledgeGraph& graph,
                                const Vocabulary& vocab, const TrainConfig& cfg) {
    cfg.validate();
    if (cfg.stage != TrainStage::Expansion)
        fail(ErrorKind::Argument, "train_expansion requires the expansion stage");

    Rng rng(cfg.seed);
    const uint32_t dim = model.config.dim;
    for (uint32_t e = 0; e < model.config.num_entities(); ++e) {
        double* row = model.params.data() + model.entity_row(e);
        for (uint32_t j = 0; j < dim; ++j) row[j] = rng.gaussian() * 0.02;
    }

    std::vector<double> anchors;  // n x dim
    std::vector<size_t> targets;  // candidate indexes
    for (uint32_t e : model.mem_candidates) {
        if (graph.descriptions[e].empty()) continue;
        const EncodedSequence seq = build_description_input(vocab, e, graph.descriptions[e]);
        const std::vector<double> a = model.encode(seq);
        anchors.insert(anchors.end(), a.begin(), a.end());
        targets.push_back(static_cast<size_t>(model.candidate_index(e)));
    }
    const size_t n = targets.size();
    if (n == 0) fail(ErrorKind::Training, "no described entities to fit in expansion");

    const size_t c_count = model.mem_candidates.size();
    std::vector<double> row_grad(c_count * dim);
    std::vector<size_t> order(n);
    for (size_t i = 0; i < n; ++i) order[i] = i;
    const size_t batch = cfg.batch_size == 0 ? n : std::min<size_t>(cfg.batch_size, n);

    TrainLog log;
    for (uint32_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        if (cfg.batch_size != 0) rng.shuffle(order);
        double epoch_loss = 0.0;
        for (size_t start = 0; start < n; start += batch) {
            const size_t stop = std::min(n, start + batch);
            std::fill(row_grad.begin(), row_grad.end(), 0.0);
            double batch_loss = 0.0;
            for (size_t i = start; i < stop; ++i) {
                const size_t ex = order[i];
                const double* anchor = anchors.data() + ex * dim;
                const std::vector<double> probs = model.candidate_probs(anchor);
                batch_loss += -std::log(probs[targets[ex]]);
                for (size_t c = 0; c < c_count; ++c) {
                    const double dz = probs[c] - (c == targets[ex] ? 1.0 : 0.0);
                    double* g = row_grad.data() + c * dim;
                    for (uint32_t j = 0; j < dim; ++j) g[j] += dz * anchor[j];
                }
            }
            if (!std::isfinite(batch_loss))
                fail(ErrorKind::Training,
                     "expansion loss diverged at epoch " + std::to_string(epoch));
            epoch_loss += batch_loss;
            const double step = cfg.lr / static_cast<double>(stop - start);
            for (size_t c = 0; c < c_count; ++c) {
                double* row = model.params.data() + model.entity_row(model.mem_candidates[c]);
                const double* g = row_grad.data() + c * dim;
                for (uint32_t j = 0; j < dim; ++j) row[j] -= step * g[j];
            }
        }
        log.epoch_losses.push_back(epoch_loss / static_cast<double>(n));
    }
    return log;
}

// Trains all parameters on masked head and tail queries, two per train triple,
// by seeded mini-batch gradient descent.
inline TrainLog train_mem(EncoderModel& model, const KnowledgeGraph& graph,
                          const DatasetSplit& split, const Vocabulary& vocab,
                          const TrainConfig& cfg) {
    cfg.validate();
    if (cfg.stage != TrainStage::Mem)
        fail(ErrorKind::Argument, "train_mem requires the mem stage");
    if (split.train.empty()) fail(ErrorKind::Training, "no train triples for the mem stage");

    const std::vector<EncodedSequence> seqs = detail::mem_sequences(graph, split.train, vocab);
    const size_t n = seqs.size();
    const size_t batch = cfg.batch_size == 0 ? n : std::min<size_t>(cfg.batch_size, n);

    Rng rng(cfg.seed);
    std::vector<size_t> order(n);
    for (size_t i = 0; i < n; ++i) order[i] = i;
    std::vector<double> grad(model.num_params());

    TrainLog log;
    for (uint32_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        rng.shuffle(order);
        double epoch_loss = 0.0;
        for (size_t start = 0; start < n; start += batch) {
            const size_t stop = std::min(n, start + batch);
            std::fill(grad.begin(), grad.end(), 0.0);
            double batch_loss = 0.0;
            for (size_t i = start; i < stop; ++i)
                batch_loss += model.mem_example_grad(seqs[order[i]], grad);
            if (!std::isfinite(batch_loss))
                fail(ErrorKind::Training, "mem loss diverged at epoch " + std::to_string(epoch));
            epoch_loss += batch_loss;
            const double step = cfg.lr / static_cast<double>(stop - start);
            for (size_t i = 0; i < grad.size(); ++i) model.params[i] -= step * grad[i];
        }
        log.epoch_losses.push_back(epoch_loss / static_cast<double>(n));
    }
    return log;
}

// ---- checkpoint serialization: header line, candidate list, parameters ----

inline std::string render_model(const EncoderModel& model) {
    char header[160];
    std::snprintf(header, sizeof(header),
                  "KNNKGE-MODEL v1 dim=%u layers=%u heads=%u max_len=%u vocab=%u "
                  "entity_offset=%u\n",
                  model.config.dim, model.config.layers, model.config.heads,
                  model.config.max_len, model.config.vocab_size, model.config.entity_offset);
    std::string out(header);
    put_u32_le(out, static_cast<uint32_t>(model.mem_candidates.size()));
    for (uint32_t e : model.mem_candidates) put_u32_le(out, e);
    put_u64_le(out, model.num_params());
    for (double v : model.params) put_f64_le(out, v);
    return out;
}

inline EncoderModel parse_model(const std::string& bytes) {
    const size_t nl = bytes.find('\n');
    if (nl == std::string::npos)
        fail(ErrorKind::Format, "model checkpoint: missing header line");
    ModelConfig cfg;
    if (std::sscanf(bytes.substr(0, nl).c_str(),
                    "KNNKGE-MODEL v1 dim=%u layers=%u heads=%u max_len=%u vocab=%u "
                    "entity_offset=%u",
                    &cfg.dim, &cfg.layers, &cfg.heads, &cfg.max_len, &cfg.vocab_size,
                    &cfg.entity_offset) != 6)
        fail(ErrorKind::Format, "model checkpoint: unrecognized header");
    cfg.validate();

    ByteReader reader(std::string_view(bytes).substr(nl + 1), "model checkpoint");
    const uint32_t n_cand = reader.u32();
    std::vector<uint32_t> candidates(n_cand);
    for (uint32_t i = 0; i < n_cand; ++i) candidates[i] = reader.u32();
    const uint64_t n_params = reader.u64();
    if (n_params != ParamLayout(cfg).total)
        fail(ErrorKind::Format, "model checkpoint: parameter count does not match header");

    EncoderModel model = EncoderModel::init(cfg, std::move(candidates), 0);
    for (size_t i = 0; i < model.params.size(); ++i) model.params[i] = reader.f64();
    if (!reader.at_end())
        fail(ErrorKind::Format, "model checkpoint: trailing bytes after parameters");
    return model;
}

inline void save_model(const EncoderModel& model, const std::string& path) {
    write_file_atomic(path, render_model(model));
}

inline EncoderModel load_model(const std::string& path) {
    return parse_model(read_file(path));
}

}  // namespace knnkge
