#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "glosstr/errors.hpp"
#include "glosstr/layers.hpp"
#include "glosstr/sals.hpp"
#include "glosstr/tokenizer.hpp"

namespace glosstr {

using nn::Index;
using nn::Mat;

enum class Architecture { encoder_decoder, decoder_only };

inline std::string_view to_string(Architecture a) {
    return a == Architecture::encoder_decoder ? "encoder_decoder" : "decoder_only";
}

inline Architecture parse_architecture(std::string_view s) {
    if (s == "encoder_decoder")
        return Architecture::encoder_decoder;
    if (s == "decoder_only")
        return Architecture::decoder_only;
    throw ConfigError("unknown architecture '" + std::string(s) + "' (expected encoder_decoder or decoder_only)");
}

/// Desk-scale defaults: d=128, 4 heads, 2+2 layers, FFN 256, dropout 0.1.
struct ModelConfig {
    Architecture architecture = Architecture::encoder_decoder;
    Index dim = 128;
    Index heads = 4;
    Index encoder_layers = 2;
    Index decoder_layers = 2;
    Index ffn_dim = 256;
    Index max_positions = 128;
    Index vocab_size = 0;
    double dropout = 0.1;
    bool tie_embeddings = true;
    std::uint64_t seed = 1;

    void validate() const {
        if (dim <= 0 || heads <= 0 || dim % heads != 0)
            throw ConfigError("model dim must be a positive multiple of heads");
        if (vocab_size <= static_cast<Index>(kNumSpecials))
            throw ConfigError("vocab_size must exceed the special tokens");
        if (decoder_layers < 1 || encoder_layers < 0 || ffn_dim <= 0 || max_positions <= 1)
            throw ConfigError("invalid layer, ffn or position configuration");
        if (architecture == Architecture::encoder_decoder && encoder_layers < 1)
            throw ConfigError("encoder-decoder models need at least one encoder layer");
        if (!(dropout >= 0.0 && dropout < 1.0))
            throw ConfigError("dropout must lie in [0, 1)");
    }
};

inline nlohmann::json to_json(const ModelConfig &c) {
    return {{"architecture", to_string(c.architecture)},
            {"dim", c.dim},
            {"heads", c.heads},
            {"encoder_layers", c.encoder_layers},
            {"decoder_layers", c.decoder_layers},
            {"ffn_dim", c.ffn_dim},
            {"max_positions", c.max_positions},
            {"vocab_size", c.vocab_size},
            {"dropout", c.dropout},
            {"tie_embeddings", c.tie_embeddings},
            {"seed", c.seed}};
}

inline ModelConfig model_config_from_json(const nlohmann::json &j) {
    ModelConfig c;
    c.architecture = parse_architecture(j.at("architecture").get<std::string>());
    c.dim = j.at("dim");
    c.heads = j.at("heads");
    c.encoder_layers = j.at("encoder_layers");
    c.decoder_layers = j.at("decoder_layers");
    c.ffn_dim = j.at("ffn_dim");
    c.max_positions = j.at("max_positions");
    c.vocab_size = j.at("vocab_size");
    c.dropout = j.at("dropout");
    c.tie_embeddings = j.at("tie_embeddings");
    c.seed = j.at("seed");
    return c;
}

/// One training sequence pair. `tgt_in` starts with BOS; `tgt_out` is `tgt_in` shifted left and ends with EOS.
struct Example {
    std::vector<TokenId> src;
    std::vector<TokenId> tgt_in;
    std::vector<TokenId> tgt_out;
    std::vector<bool> first_subword; ///< per tgt_out position
};

inline std::vector<bool> valid_mask(const std::vector<TokenId> &ids) {
    std::vector<bool> m(ids.size());
    for (std::size_t i = 0; i < ids.size(); ++i)
        m[i] = ids[i] != kPad;
    return m;
}

/// Incremental decoding cache: per-layer self-attention keys/values plus the fixed cross-attention memory.
template <class T>
struct DecodeState {
    std::vector<Mat<T>> self_k, self_v;
    std::shared_ptr<const std::vector<Mat<T>>> cross_k, cross_v;
    std::vector<bool> src_valid;
    Index position = 0;
};

namespace detail {

template <class T>
struct SelfBlock {
    nn::LayerNorm<T> ln1, ln2;
    nn::MultiHeadAttention<T> attn;
    nn::FeedForward<T> ffn;

    struct Cache {
        typename nn::LayerNorm<T>::Cache ln1, ln2;
        typename nn::MultiHeadAttention<T>::Cache attn;
        typename nn::FeedForward<T>::Cache ffn;
        Mat<T> drop1, drop2;
    };

    void init(nn::ParameterSet<T> &p, const std::string &name, const ModelConfig &c, std::mt19937_64 &rng) {
        ln1.init(p, name + ".ln1", c.dim);
        attn.init(p, name + ".attn", c.dim, c.heads, rng);
        ln2.init(p, name + ".ln2", c.dim);
        ffn.init(p, name + ".ffn", c.dim, c.ffn_dim, rng);
    }

    Mat<T> forward(const nn::ParameterSet<T> &p, Mat<T> x, const std::vector<bool> &valid, bool causal, double rate,
                   std::mt19937_64 *rng, Cache *c) const {
        Mat<T> h = ln1.forward(p, x, c ? &c->ln1 : nullptr);
        Mat<T> a = attn.forward(p, h, h, valid, causal, c ? &c->attn : nullptr);
        Mat<T> m1 = nn::dropout_mask<T>(a.rows(), a.cols(), rate, rng);
        nn::apply_mask(a, m1);
        x += a;
        Mat<T> f = ffn.forward(p, ln2.forward(p, x, c ? &c->ln2 : nullptr), c ? &c->ffn : nullptr);
        Mat<T> m2 = nn::dropout_mask<T>(f.rows(), f.cols(), rate, rng);
        nn::apply_mask(f, m2);
        x += f;
        if (c) {
            c->drop1 = std::move(m1);
            c->drop2 = std::move(m2);
        }
        return x;
    }

    Mat<T> backward(const nn::ParameterSet<T> &p, nn::GradSet<T> &g, const Cache &c, Mat<T> dx) const {
        Mat<T> df = dx;
        nn::apply_mask(df, c.drop2);
        dx += ln2.backward(p, g, c.ln2, ffn.backward(p, g, c.ffn, df));
        Mat<T> da = dx;
        nn::apply_mask(da, c.drop1);
        auto [dq, dkv] = attn.backward(p, g, c.attn, da);
        dq += dkv;
        dx += ln1.backward(p, g, c.ln1, dq);
        return dx;
    }

    /// One new position through the block, appending its key/value to the cache.
    Mat<T> step(const nn::ParameterSet<T> &p, Mat<T> x, Mat<T> &keys, Mat<T> &values) const {
        Mat<T> h = ln1.forward(p, x);
        append_kv(p, attn, h, keys, values);
        Mat<T> q = attn.q.forward(p, h);
        x += attn.o.forward(p, attn.attend(q, keys, values, {}, false, 0, nullptr));
        x += ffn.forward(p, ln2.forward(p, x));
        return x;
    }

    template <class F>
    void for_each_linear(F &&f) {
        attn.for_each_linear(f);
        ffn.for_each_linear(f);
    }

    static void append_kv(const nn::ParameterSet<T> &p, const nn::MultiHeadAttention<T> &a, const Mat<T> &h,
                          Mat<T> &keys, Mat<T> &values) {
        Mat<T> k = a.k.forward(p, h);
        Mat<T> v = a.v.forward(p, h);
        keys.conservativeResize(keys.rows() + 1, a.dim);
        values.conservativeResize(values.rows() + 1, a.dim);
        keys.row(keys.rows() - 1) = k.row(0);
        values.row(values.rows() - 1) = v.row(0);
    }
};

template <class T>
struct CrossBlock {
    nn::LayerNorm<T> ln1, ln2, ln3;
    nn::MultiHeadAttention<T> self_attn, cross_attn;
    nn::FeedForward<T> ffn;

    struct Cache {
        typename nn::LayerNorm<T>::Cache ln1, ln2, ln3;
        typename nn::MultiHeadAttention<T>::Cache self_attn, cross_attn;
        typename nn::FeedForward<T>::Cache ffn;
        Mat<T> drop1, drop2, drop3;
    };

    void init(nn::ParameterSet<T> &p, const std::string &name, const ModelConfig &c, std::mt19937_64 &rng) {
        ln1.init(p, name + ".ln1", c.dim);
        self_attn.init(p, name + ".self_attn", c.dim, c.heads, rng);
        ln2.init(p, name + ".ln2", c.dim);
        cross_attn.init(p, name + ".cross_attn", c.dim, c.heads, rng);
        ln3.init(p, name + ".ln3", c.dim);
        ffn.init(p, name + ".ffn", c.dim, c.ffn_dim, rng);
    }

    Mat<T> forward(const nn::ParameterSet<T> &p, Mat<T> y, const Mat<T> &memory, const std::vector<bool> &tgt_valid,
                   const std::vector<bool> &src_valid, double rate, std::mt19937_64 *rng, Cache *c) const {
        Mat<T> h = ln1.forward(p, y, c ? &c->ln1 : nullptr);
        Mat<T> a = self_attn.forward(p, h, h, tgt_valid, true, c ? &c->self_attn : nullptr);
        Mat<T> m1 = nn::dropout_mask<T>(a.rows(), a.cols(), rate, rng);
        nn::apply_mask(a, m1);
        y += a;
        Mat<T> h2 = ln2.forward(p, y, c ? &c->ln2 : nullptr);
        Mat<T> x = cross_attn.forward(p, h2, memory, src_valid, false, c ? &c->cross_attn : nullptr);
        Mat<T> m2 = nn::dropout_mask<T>(x.rows(), x.cols(), rate, rng);
        nn::apply_mask(x, m2);
        y += x;
        Mat<T> f = ffn.forward(p, ln3.forward(p, y, c ? &c->ln3 : nullptr), c ? &c->ffn : nullptr);
        Mat<T> m3 = nn::dropout_mask<T>(f.rows(), f.cols(), rate, rng);
        nn::apply_mask(f, m3);
        y += f;
        if (c) {
            c->drop1 = std::move(m1);
            c->drop2 = std::move(m2);
            c->drop3 = std::move(m3);
        }
        return y;
    }

    /// Returns d y and accumulates the gradient of the encoder memory into `dmemory`.
    Mat<T> backward(const nn::ParameterSet<T> &p, nn::GradSet<T> &g, const Cache &c, Mat<T> dy,
                    Mat<T> &dmemory) const {
        Mat<T> df = dy;
        nn::apply_mask(df, c.drop3);
        dy += ln3.backward(p, g, c.ln3, ffn.backward(p, g, c.ffn, df));
        Mat<T> dx = dy;
        nn::apply_mask(dx, c.drop2);
        auto [dq2, dmem] = cross_attn.backward(p, g, c.cross_attn, dx);
        dmemory += dmem;
        dy += ln2.backward(p, g, c.ln2, dq2);
        Mat<T> da = dy;
        nn::apply_mask(da, c.drop1);
        auto [dq, dkv] = self_attn.backward(p, g, c.self_attn, da);
        dq += dkv;
        dy += ln1.backward(p, g, c.ln1, dq);
        return dy;
    }

    Mat<T> step(const nn::ParameterSet<T> &p, Mat<T> y, Mat<T> &keys, Mat<T> &values, const Mat<T> &mem_k,
                const Mat<T> &mem_v, const std::vector<bool> &src_valid) const {
        Mat<T> h = ln1.forward(p, y);
        SelfBlock<T>::append_kv(p, self_attn, h, keys, values);
        y += self_attn.o.forward(p, self_attn.attend(self_attn.q.forward(p, h), keys, values, {}, false, 0, nullptr));
        Mat<T> q = cross_attn.q.forward(p, ln2.forward(p, y));
        y += cross_attn.o.forward(p, cross_attn.attend(q, mem_k, mem_v, src_valid, false, 0, nullptr));
        y += ffn.forward(p, ln3.forward(p, y));
        return y;
    }

    template <class F>
    void for_each_linear(F &&f) {
        self_attn.for_each_linear(f);
        cross_attn.for_each_linear(f);
        ffn.for_each_linear(f);
    }
};

} // namespace detail

/// Shared pieces of both architectures: token embedding, output projection, parameters.
template <class T>
class TransformerBase {
  public:
    using Scalar = T;

    const ModelConfig &config() const { return config_; }
    nn::ParameterSet<T> &params() { return params_; }
    const nn::ParameterSet<T> &params() const { return params_; }
    Index vocab_size() const { return config_.vocab_size; }

    template <class F>
    void for_each_linear(F &&f) {
        if (!config_.tie_embeddings)
            f(out_proj_);
    }

  protected:
    explicit TransformerBase(const ModelConfig &c) : config_(c) { c.validate(); }

    void init_embeddings(std::mt19937_64 &rng) {
        embed_ = params_.add("embed.tokens", config_.vocab_size, config_.dim, false);
        nn::fill_uniform(params_.value(embed_), static_cast<T>(1.0 / std::sqrt(static_cast<double>(config_.dim))),
                         rng);
        pe_ = nn::sinusoidal_positions<T>(config_.max_positions, config_.dim);
    }

    void init_output(std::mt19937_64 &rng) {
        if (config_.tie_embeddings)
            out_bias_ = params_.add("output.bias", 1, config_.vocab_size, false);
        else
            out_proj_.init(params_, "output", config_.dim, config_.vocab_size, rng);
    }

    void check_ids(const std::vector<TokenId> &ids) const {
        for (TokenId id : ids)
            if (id < 0 || id >= config_.vocab_size)
                throw DomainError("token id " + std::to_string(id) + " outside vocabulary of size " +
                                  std::to_string(config_.vocab_size));
    }
    void check_length(std::size_t n, const char *what) const {
        if (static_cast<Index>(n) > config_.max_positions)
            throw DomainError(std::string(what) + " length " + std::to_string(n) + " exceeds max positions " +
                              std::to_string(config_.max_positions));
    }

    T embed_scale() const { return static_cast<T>(std::sqrt(static_cast<double>(config_.dim))); }

    Mat<T> embed(const std::vector<TokenId> &ids, Index offset) const {
        Mat<T> x(static_cast<Index>(ids.size()), config_.dim);
        const T s = embed_scale();
        for (std::size_t i = 0; i < ids.size(); ++i)
            x.row(i) = params_.value(embed_).row(ids[i]) * s + pe_.row(offset + static_cast<Index>(i));
        return x;
    }

    /// Embedding where padding does not advance the position counter.
    Mat<T> embed_skipping_pad(const std::vector<TokenId> &ids, const std::vector<bool> &valid) const {
        Mat<T> x(static_cast<Index>(ids.size()), config_.dim);
        const T s = embed_scale();
        Index pos = 0;
        for (std::size_t i = 0; i < ids.size(); ++i) {
            x.row(i) = params_.value(embed_).row(ids[i]) * s + pe_.row(std::min(pos, config_.max_positions - 1));
            if (valid[i])
                ++pos;
        }
        return x;
    }

    void embed_backward(nn::GradSet<T> &g, const std::vector<TokenId> &ids, const Mat<T> &dx) const {
        if (!params_.trainable(embed_))
            return;
        const T s = embed_scale();
        for (std::size_t i = 0; i < ids.size(); ++i)
            g[embed_].row(ids[i]) += dx.row(i) * s;
    }

    Mat<T> project(const Mat<T> &h, typename nn::Linear<T>::Cache *c) const {
        if (!config_.tie_embeddings)
            return out_proj_.forward(params_, h, c);
        Mat<T> logits = h * params_.value(embed_).transpose();
        logits.rowwise() += params_.value(out_bias_).row(0);
        return logits;
    }

    Mat<T> project_backward(nn::GradSet<T> &g, const Mat<T> &h, const typename nn::Linear<T>::Cache &c,
                            const Mat<T> &dlogits) const {
        if (!config_.tie_embeddings)
            return out_proj_.backward(params_, g, c, dlogits);
        if (params_.trainable(embed_))
            g[embed_].noalias() += dlogits.transpose() * h;
        if (params_.trainable(out_bias_))
            g[out_bias_] += dlogits.colwise().sum();
        return dlogits * params_.value(embed_);
    }

    /// Cross-entropy against the given label rows; fills `dlogits` (scaled) when requested.
    double score_rows(const Mat<T> &logits, const std::vector<TokenId> &targets, std::span<const LabelRow> labels,
                      Mat<T> *dlogits, T scale) const {
        if (labels.size() != targets.size())
            throw DomainError("one label row per target position is required");
        double loss = 0;
        if (dlogits)
            *dlogits = Mat<T>::Zero(logits.rows(), logits.cols());
        const auto v = static_cast<std::size_t>(logits.cols());
        for (std::size_t t = 0; t < targets.size(); ++t) {
            if (targets[t] == kPad)
                continue;
            std::span<const T> row(logits.data() + t * v, v);
            std::span<T> grad = dlogits ? std::span<T>(dlogits->data() + t * v, v) : std::span<T>();
            loss += soft_cross_entropy<T>(row, labels[t], grad, scale);
        }
        if (!std::isfinite(loss))
            throw NumericError("non-finite loss");
        return loss;
    }

    ModelConfig config_;
    nn::ParameterSet<T> params_;
    std::size_t embed_ = 0, out_bias_ = 0;
    nn::Linear<T> out_proj_;
    Mat<T> pe_;
};

/// Pre-layer-norm encoder-decoder transformer with analytic gradients.
template <class T>
class Seq2SeqModel : public TransformerBase<T> {
    using Base = TransformerBase<T>;

  public:
    static constexpr Architecture kArchitecture = Architecture::encoder_decoder;

    explicit Seq2SeqModel(ModelConfig c) : Base(c) {
        if (c.architecture != kArchitecture)
            throw ConfigError("Seq2SeqModel requires architecture=encoder_decoder");
        std::mt19937_64 rng(c.seed);
        this->init_embeddings(rng);
        encoder_.resize(c.encoder_layers);
        for (Index l = 0; l < c.encoder_layers; ++l)
            encoder_[l].init(this->params_, "encoder." + std::to_string(l), c, rng);
        enc_norm_.init(this->params_, "encoder.final_norm", c.dim);
        decoder_.resize(c.decoder_layers);
        for (Index l = 0; l < c.decoder_layers; ++l)
            decoder_[l].init(this->params_, "decoder." + std::to_string(l), c, rng);
        dec_norm_.init(this->params_, "decoder.final_norm", c.dim);
        this->init_output(rng);
    }

    /// Logits (|tgt| x V) with explicit validity masks; no dropout.
    Mat<T> logits(const std::vector<TokenId> &src, const std::vector<bool> &src_valid, const std::vector<TokenId> &tgt,
                  const std::vector<bool> &tgt_valid) const {
        return run(src, src_valid, tgt, tgt_valid, nullptr, nullptr);
    }
    Mat<T> logits(const std::vector<TokenId> &src, const std::vector<TokenId> &tgt) const {
        return logits(src, valid_mask(src), tgt, valid_mask(tgt));
    }

    /// Sum of per-position soft cross-entropies. Gradients (times `scale`) are added into `grads` when given.
    double loss_and_grad(const Example &ex, std::span<const LabelRow> labels, nn::GradSet<T> *grads, T scale,
                         std::mt19937_64 *rng) const {
        Caches c;
        Mat<T> logits = run(ex.src, valid_mask(ex.src), ex.tgt_in, valid_mask(ex.tgt_in), rng, grads ? &c : nullptr);
        Mat<T> dlogits;
        double loss = this->score_rows(logits, ex.tgt_out, labels, grads ? &dlogits : nullptr, scale);
        if (!grads)
            return loss;
        auto &g = *grads;
        const auto &p = this->params_;
        Mat<T> dy = dec_norm_.backward(p, g, c.dec_norm, this->project_backward(g, c.hidden, c.out, dlogits));
        Mat<T> dmem = Mat<T>::Zero(c.memory.rows(), c.memory.cols());
        for (auto l = static_cast<Index>(decoder_.size()) - 1; l >= 0; --l)
            dy = decoder_[l].backward(p, g, c.dec[l], dy, dmem);
        nn::apply_mask(dy, c.drop_tgt);
        this->embed_backward(g, ex.tgt_in, dy);
        Mat<T> dx = enc_norm_.backward(p, g, c.enc_norm, dmem);
        for (auto l = static_cast<Index>(encoder_.size()) - 1; l >= 0; --l)
            dx = encoder_[l].backward(p, g, c.enc[l], dx);
        nn::apply_mask(dx, c.drop_src);
        this->embed_backward(g, ex.src, dx);
        return loss;
    }

    DecodeState<T> start(const std::vector<TokenId> &src) const {
        DecodeState<T> s;
        s.src_valid = valid_mask(src);
        Mat<T> memory = encode(src, s.src_valid, nullptr, nullptr);
        auto ks = std::make_shared<std::vector<Mat<T>>>();
        auto vs = std::make_shared<std::vector<Mat<T>>>();
        for (const auto &layer : decoder_) {
            ks->push_back(layer.cross_attn.k.forward(this->params_, memory));
            vs->push_back(layer.cross_attn.v.forward(this->params_, memory));
        }
        s.cross_k = std::move(ks);
        s.cross_v = std::move(vs);
        s.self_k.assign(decoder_.size(), Mat<T>(0, this->config_.dim));
        s.self_v.assign(decoder_.size(), Mat<T>(0, this->config_.dim));
        return s;
    }

    /// Feeds one token and returns next-token logits (1 x V).
    Mat<T> step(DecodeState<T> &s, TokenId token) const {
        this->check_ids({token});
        if (s.position >= this->config_.max_positions)
            throw DomainError("decoding past max positions");
        Mat<T> y = this->embed({token}, s.position);
        for (std::size_t l = 0; l < decoder_.size(); ++l)
            y = decoder_[l].step(this->params_, y, s.self_k[l], s.self_v[l], (*s.cross_k)[l], (*s.cross_v)[l],
                                 s.src_valid);
        ++s.position;
        return this->project(dec_norm_.forward(this->params_, y), nullptr);
    }

    template <class F>
    void for_each_linear(F &&f) {
        for (auto &l : encoder_)
            l.for_each_linear(f);
        for (auto &l : decoder_)
            l.for_each_linear(f);
        Base::for_each_linear(f);
    }

  private:
    struct Caches {
        std::vector<typename detail::SelfBlock<T>::Cache> enc;
        std::vector<typename detail::CrossBlock<T>::Cache> dec;
        typename nn::LayerNorm<T>::Cache enc_norm, dec_norm;
        typename nn::Linear<T>::Cache out;
        Mat<T> drop_src, drop_tgt, memory, hidden;
    };

    Mat<T> encode(const std::vector<TokenId> &src, const std::vector<bool> &src_valid, std::mt19937_64 *rng,
                  Caches *c) const {
        this->check_ids(src);
        this->check_length(src.size(), "source");
        if (src.empty())
            throw DomainError("empty source sequence");
        const double rate = rng ? this->config_.dropout : 0.0;
        Mat<T> x = this->embed(src, 0);
        Mat<T> m = nn::dropout_mask<T>(x.rows(), x.cols(), rate, rng);
        nn::apply_mask(x, m);
        if (c) {
            c->drop_src = std::move(m);
            c->enc.resize(encoder_.size());
        }
        for (std::size_t l = 0; l < encoder_.size(); ++l)
            x = encoder_[l].forward(this->params_, std::move(x), src_valid, false, rate, rng, c ? &c->enc[l] : nullptr);
        return enc_norm_.forward(this->params_, x, c ? &c->enc_norm : nullptr);
    }

    Mat<T> run(const std::vector<TokenId> &src, const std::vector<bool> &src_valid, const std::vector<TokenId> &tgt,
               const std::vector<bool> &tgt_valid, std::mt19937_64 *rng, Caches *c) const {
        if (src_valid.size() != src.size() || tgt_valid.size() != tgt.size())
            throw DomainError("mask length differs from sequence length");
        this->check_ids(tgt);
        this->check_length(tgt.size(), "target");
        Mat<T> memory = encode(src, src_valid, rng, c);
        const double rate = rng ? this->config_.dropout : 0.0;
        Mat<T> y = this->embed(tgt, 0);
        Mat<T> m = nn::dropout_mask<T>(y.rows(), y.cols(), rate, rng);
        nn::apply_mask(y, m);
        if (c) {
            c->drop_tgt = std::move(m);
            c->dec.resize(decoder_.size());
        }
        for (std::size_t l = 0; l < decoder_.size(); ++l)
            y = decoder_[l].forward(this->params_, std::move(y), memory, tgt_valid, src_valid, rate, rng,
                                    c ? &c->dec[l] : nullptr);
        Mat<T> h = dec_norm_.forward(this->params_, y, c ? &c->dec_norm : nullptr);
        Mat<T> out = this->project(h, c ? &c->out : nullptr);
        if (c) {
            c->memory = std::move(memory);
            c->hidden = std::move(h);
        }
        return out;
    }

    std::vector<detail::SelfBlock<T>> encoder_;
    std::vector<detail::CrossBlock<T>> decoder_;
    nn::LayerNorm<T> enc_norm_, dec_norm_;
};

/// Single causal stack over "source tokens, BOS, target tokens". BOS separates the two segments
/// and only positions from the separator onward contribute to the loss.
template <class T>
class DecoderOnlyModel : public TransformerBase<T> {
    using Base = TransformerBase<T>;

  public:
    static constexpr Architecture kArchitecture = Architecture::decoder_only;
    static constexpr TokenId kSeparator = kBos;

    explicit DecoderOnlyModel(ModelConfig c) : Base(c) {
        if (c.architecture != kArchitecture)
            throw ConfigError("DecoderOnlyModel requires architecture=decoder_only");
        std::mt19937_64 rng(c.seed);
        this->init_embeddings(rng);
        blocks_.resize(c.decoder_layers);
        for (Index l = 0; l < c.decoder_layers; ++l)
            blocks_[l].init(this->params_, "decoder." + std::to_string(l), c, rng);
        norm_.init(this->params_, "decoder.final_norm", c.dim);
        this->init_output(rng);
    }

    /// Logits for the target segment only (|tgt| x V).
    Mat<T> logits(const std::vector<TokenId> &src, const std::vector<bool> &src_valid, const std::vector<TokenId> &tgt,
                  const std::vector<bool> &tgt_valid) const {
        return run(src, src_valid, tgt, tgt_valid, nullptr, nullptr);
    }
    Mat<T> logits(const std::vector<TokenId> &src, const std::vector<TokenId> &tgt) const {
        return logits(src, valid_mask(src), tgt, valid_mask(tgt));
    }

    double loss_and_grad(const Example &ex, std::span<const LabelRow> labels, nn::GradSet<T> *grads, T scale,
                         std::mt19937_64 *rng) const {
        if (ex.tgt_in.empty() || ex.tgt_in.front() != kSeparator)
            throw DomainError("decoder-only targets must start with the separator token");
        Caches c;
        Mat<T> logits = run(ex.src, valid_mask(ex.src), ex.tgt_in, valid_mask(ex.tgt_in), rng, grads ? &c : nullptr);
        Mat<T> dlogits;
        double loss = this->score_rows(logits, ex.tgt_out, labels, grads ? &dlogits : nullptr, scale);
        if (!grads)
            return loss;
        auto &g = *grads;
        const auto &p = this->params_;
        const Index n_src = static_cast<Index>(ex.src.size());
        Mat<T> dh_tgt = this->project_backward(g, c.hidden_tgt, c.out, dlogits);
        Mat<T> dh = Mat<T>::Zero(n_src + dh_tgt.rows(), this->config_.dim);
        dh.bottomRows(dh_tgt.rows()) = dh_tgt;
        Mat<T> dx = norm_.backward(p, g, c.norm, dh);
        for (auto l = static_cast<Index>(blocks_.size()) - 1; l >= 0; --l)
            dx = blocks_[l].backward(p, g, c.blocks[l], dx);
        nn::apply_mask(dx, c.drop);
        this->embed_backward(g, c.sequence, dx);
        return loss;
    }

    DecodeState<T> start(const std::vector<TokenId> &src) const {
        DecodeState<T> s;
        s.self_k.assign(blocks_.size(), Mat<T>(0, this->config_.dim));
        s.self_v.assign(blocks_.size(), Mat<T>(0, this->config_.dim));
        for (TokenId id : src)
            if (id != kPad)
                step(s, id);
        return s;
    }

    Mat<T> step(DecodeState<T> &s, TokenId token) const {
        this->check_ids({token});
        if (s.position >= this->config_.max_positions)
            throw DomainError("decoding past max positions");
        Mat<T> x = this->embed({token}, s.position);
        for (std::size_t l = 0; l < blocks_.size(); ++l)
            x = blocks_[l].step(this->params_, x, s.self_k[l], s.self_v[l]);
        ++s.position;
        return this->project(norm_.forward(this->params_, x), nullptr);
    }

    template <class F>
    void for_each_linear(F &&f) {
        for (auto &b : blocks_)
            b.for_each_linear(f);
        Base::for_each_linear(f);
    }

  private:
    struct Caches {
        std::vector<typename detail::SelfBlock<T>::Cache> blocks;
        typename nn::LayerNorm<T>::Cache norm;
        typename nn::Linear<T>::Cache out;
        Mat<T> drop, hidden_tgt;
        std::vector<TokenId> sequence;
    };

    Mat<T> run(const std::vector<TokenId> &src, const std::vector<bool> &src_valid, const std::vector<TokenId> &tgt,
               const std::vector<bool> &tgt_valid, std::mt19937_64 *rng, Caches *c) const {
        if (src_valid.size() != src.size() || tgt_valid.size() != tgt.size())
            throw DomainError("mask length differs from sequence length");
        std::vector<TokenId> seq(src);
        seq.insert(seq.end(), tgt.begin(), tgt.end());
        std::vector<bool> valid(src_valid);
        valid.insert(valid.end(), tgt_valid.begin(), tgt_valid.end());
        this->check_ids(seq);
        this->check_length(seq.size(), "source+target");
        const double rate = rng ? this->config_.dropout : 0.0;
        Mat<T> x = this->embed_skipping_pad(seq, valid);
        Mat<T> m = nn::dropout_mask<T>(x.rows(), x.cols(), rate, rng);
        nn::apply_mask(x, m);
        if (c) {
            c->drop = std::move(m);
            c->blocks.resize(blocks_.size());
        }
        for (std::size_t l = 0; l < blocks_.size(); ++l)
            x = blocks_[l].forward(this->params_, std::move(x), valid, true, rate, rng, c ? &c->blocks[l] : nullptr);
        Mat<T> h = norm_.forward(this->params_, x, c ? &c->norm : nullptr);
        Mat<T> h_tgt = h.bottomRows(static_cast<Index>(tgt.size()));
        Mat<T> out = this->project(h_tgt, c ? &c->out : nullptr);
        if (c) {
            c->hidden_tgt = std::move(h_tgt);
            c->sequence = std::move(seq);
        }
        return out;
    }

    std::vector<detail::SelfBlock<T>> blocks_;
    nn::LayerNorm<T> norm_;
};

/// Selects linear layers by name; the default adapts every linear layer.
using LayerSelector = std::function<bool(const std::string &)>;

inline bool all_linear_layers(const std::string &) { return true; }

/// Adds low-rank adapters (A random, B zero) to the selected layers and freezes every base tensor.
/// Returns the number of trainable parameters afterwards.
template <class Model>
std::size_t attach_lora(Model &model, Index rank, double alpha, const LayerSelector &select = all_linear_layers,
                        std::uint64_t seed = 7) {
    if (rank < 1)
        throw ConfigError("LoRA rank must be >= 1");
    auto &p = model.params();
    std::mt19937_64 rng(seed);
    std::size_t selected = 0;
    model.for_each_linear([&](auto &lin) {
        if (select(lin.name)) {
            lin.attach_lora(p, rank, alpha, rng);
            ++selected;
        }
    });
    if (selected == 0)
        throw ConfigError("LoRA layer selector matched no linear layer");
    for (std::size_t i = 0; i < p.size(); ++i)
        p.set_trainable(i, p.info(i).lora);
    return p.count(true);
}

/// Names and shapes of adapted layers, for adapter containers and parameter accounting.
template <class Model>
std::vector<std::string> adapted_layers(Model &model) {
    std::vector<std::string> out;
    model.for_each_linear([&](auto &lin) {
        if (lin.has_lora)
            out.push_back(lin.name);
    });
    return out;
}

} // namespace glosstr
