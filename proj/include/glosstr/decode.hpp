#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#include "glosstr/errors.hpp"
#include "glosstr/model.hpp"

namespace glosstr {

/// Beam 5, max length 100, length penalty 1.0 by default.
struct DecodeConfig {
    std::size_t beam_size = 5;
    std::size_t max_length = 100;
    double length_penalty = 1.0;

    void validate() const {
        if (beam_size < 1)
            throw ConfigError("beam size must be >= 1");
        if (max_length < 1)
            throw ConfigError("max length must be >= 1");
        if (length_penalty < 0)
            throw ConfigError("length penalty must be >= 0");
    }
};

struct Hypothesis {
    std::vector<TokenId> tokens; ///< generated tokens, EOS included when produced
    double log_prob = 0.0;
    double score = -std::numeric_limits<double>::infinity();
    bool finished = false;
};

/// Length-normalized score: log P / |y|^penalty.
inline double normalized_score(double log_prob, std::size_t length, double penalty) {
    return log_prob / std::pow(static_cast<double>(std::max<std::size_t>(length, 1)), penalty);
}

template <class T>
std::vector<double> log_softmax(const Mat<T> &logits) {
    std::vector<double> out(static_cast<std::size_t>(logits.cols()));
    double mx = -std::numeric_limits<double>::infinity();
    for (Index k = 0; k < logits.cols(); ++k)
        mx = std::max(mx, static_cast<double>(logits(0, k)));
    double z = 0;
    for (Index k = 0; k < logits.cols(); ++k)
        z += std::exp(static_cast<double>(logits(0, k)) - mx);
    const double lz = mx + std::log(z);
    for (Index k = 0; k < logits.cols(); ++k)
        out[k] = static_cast<double>(logits(0, k)) - lz;
    return out;
}

/// Argmax decoding (lowest token id wins ties).
template <class Model>
Hypothesis greedy_decode(const Model &model, const std::vector<TokenId> &src, const DecodeConfig &cfg) {
    auto state = model.start(src);
    Hypothesis h;
    TokenId prev = kBos;
    while (h.tokens.size() < cfg.max_length) {
        auto lp = log_softmax(model.step(state, prev));
        TokenId best = 0;
        for (std::size_t k = 1; k < lp.size(); ++k)
            if (lp[k] > lp[static_cast<std::size_t>(best)])
                best = static_cast<TokenId>(k);
        h.tokens.push_back(best);
        h.log_prob += lp[static_cast<std::size_t>(best)];
        prev = best;
        if (best == kEos) {
            h.finished = true;
            break;
        }
    }
    h.score = normalized_score(h.log_prob, h.tokens.size(), cfg.length_penalty);
    return h;
}

/// Beam search over cumulative log-probabilities; the best finished (or capped) hypothesis
/// by normalized score is returned. The greedy path is always a candidate, so the result
/// never scores below greedy decoding.
template <class Model>
Hypothesis beam_search(const Model &model, const std::vector<TokenId> &src, const DecodeConfig &cfg) {
    cfg.validate();
    if (cfg.beam_size == 1)
        return greedy_decode(model, src, cfg);

    using State = decltype(model.start(src));
    struct Live {
        Hypothesis hyp;
        State state;
    };
    std::vector<Live> beam;
    beam.push_back({Hypothesis{}, model.start(src)});
    std::vector<Hypothesis> done;

    while (!beam.empty()) {
        struct Cand {
            std::size_t parent;
            TokenId token;
            double log_prob;
        };
        std::vector<Cand> cands;
        for (std::size_t b = 0; b < beam.size(); ++b) {
            TokenId prev = beam[b].hyp.tokens.empty() ? kBos : beam[b].hyp.tokens.back();
            auto lp = log_softmax(model.step(beam[b].state, prev));
            for (std::size_t k = 0; k < lp.size(); ++k)
                cands.push_back({b, static_cast<TokenId>(k), beam[b].hyp.log_prob + lp[k]});
        }
        const std::size_t keep = std::min(cfg.beam_size, cands.size());
        std::partial_sort(cands.begin(), cands.begin() + static_cast<std::ptrdiff_t>(keep), cands.end(),
                          [](const Cand &a, const Cand &b) {
                              if (a.log_prob != b.log_prob)
                                  return a.log_prob > b.log_prob;
                              if (a.parent != b.parent)
                                  return a.parent < b.parent;
                              return a.token < b.token;
                          });
        std::vector<Live> next;
        for (std::size_t i = 0; i < keep; ++i) {
            const auto &c = cands[i];
            Hypothesis h = beam[c.parent].hyp;
            h.tokens.push_back(c.token);
            h.log_prob = c.log_prob;
            if (c.token == kEos || h.tokens.size() >= cfg.max_length) {
                h.finished = c.token == kEos;
                h.score = normalized_score(h.log_prob, h.tokens.size(), cfg.length_penalty);
                done.push_back(std::move(h));
            } else {
                next.push_back({std::move(h), beam[c.parent].state});
            }
        }
        // Stop once beam_size hypotheses have ended.
        if (done.size() >= cfg.beam_size)
            break;
        beam = std::move(next);
    }

    Hypothesis best = greedy_decode(model, src, cfg);
    for (auto &h : done)
        if (h.score > best.score)
            best = h;
    return best;
}

/// Strips the trailing EOS for detokenization.
inline std::vector<TokenId> strip_eos(std::vector<TokenId> ids) {
    if (!ids.empty() && ids.back() == kEos)
        ids.pop_back();
    return ids;
}

} // namespace glosstr
