#pragma once

#include <cmath>
#include <map>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "glosstr/corpus.hpp"
#include "glosstr/embeddings.hpp"
#include "glosstr/engine.hpp"
#include "glosstr/model.hpp"
#include "glosstr/sals.hpp"
#include "glosstr/tokenizer.hpp"
#include "glosstr/errors.hpp"
#include "glosstr/text.hpp"

namespace glosstr {

/// Deterministic gloss <-> text toy task: each gloss is the text's words reversed and uppercased.
/// Words come in synonym clusters whose embeddings sit close together.
struct ToyConfig {
    std::size_t train_pairs = 1000;
    std::size_t dev_pairs = 60;
    std::size_t test_pairs = 60;
    std::size_t clusters = 18;
    std::size_t cluster_size = 2;
    std::size_t min_words = 3;
    std::size_t max_words = 7;
    std::size_t embedding_dim = 32;
    double embedding_noise = 0.9; ///< larger noise, lower within-cluster cosine
    std::uint64_t seed = 11;
};

struct ToyTask {
    CorpusSplit train, dev, test;
    std::vector<std::vector<std::string>> clusters; ///< clusters[c][0] is the canonical member
    WordEmbeddingTable embeddings;
};

inline std::vector<std::string> make_toy_words(std::size_t n, std::mt19937_64 &rng) {
    static const std::string consonants = "bdfgklmnprstvz";
    static const std::string vowels = "aeiou";
    std::set<std::string> seen;
    std::vector<std::string> out;
    std::uniform_int_distribution<std::size_t> pick_c(0, consonants.size() - 1), pick_v(0, vowels.size() - 1),
        syllables(2, 3);
    while (out.size() < n) {
        std::string w;
        for (std::size_t s = syllables(rng); s > 0; --s) {
            w += consonants[pick_c(rng)];
            w += vowels[pick_v(rng)];
        }
        if (seen.insert(w).second)
            out.push_back(w);
    }
    return out;
}

inline std::string upper_ascii(std::string s) {
    for (auto &c : s)
        if (c >= 'a' && c <= 'z')
            c = static_cast<char>(c - 'a' + 'A');
    return s;
}

/// Gloss form of a text: words reversed and uppercased.
inline std::string toy_gloss(const std::string &text) {
    auto words = split_whitespace(text);
    std::string out;
    for (auto it = words.rbegin(); it != words.rend(); ++it) {
        if (!out.empty())
            out += ' ';
        out += upper_ascii(*it);
    }
    return out;
}

inline ToyTask make_toy_task(const ToyConfig &cfg = {}) {
    if (cfg.clusters == 0 || cfg.cluster_size == 0 || cfg.min_words == 0 || cfg.max_words < cfg.min_words)
        throw ConfigError("invalid toy task configuration");
    std::mt19937_64 rng(cfg.seed);
    const auto words = make_toy_words(cfg.clusters * cfg.cluster_size, rng);
    ToyTask task;
    task.embeddings = WordEmbeddingTable(cfg.embedding_dim);
    std::normal_distribution<double> gauss(0.0, 1.0);
    auto unit = [&](std::vector<double> v) {
        double n = 0;
        for (double x : v)
            n += x * x;
        for (double &x : v)
            x /= std::sqrt(n);
        return v;
    };
    for (std::size_t c = 0; c < cfg.clusters; ++c) {
        std::vector<double> center(cfg.embedding_dim);
        for (double &x : center)
            x = gauss(rng);
        center = unit(center);
        std::vector<std::string> members;
        for (std::size_t k = 0; k < cfg.cluster_size; ++k) {
            const auto &w = words[c * cfg.cluster_size + k];
            std::vector<double> v(cfg.embedding_dim);
            for (std::size_t d = 0; d < v.size(); ++d)
                v[d] = center[d] + cfg.embedding_noise * gauss(rng) / std::sqrt(static_cast<double>(v.size()));
            task.embeddings.add(w, unit(v));
            members.push_back(w);
        }
        task.clusters.push_back(std::move(members));
    }

    std::uniform_int_distribution<std::size_t> length(cfg.min_words, cfg.max_words), word(0, words.size() - 1);
    auto sample = [&](SplitName name, std::size_t n) {
        std::vector<ParallelPair> pairs;
        for (std::size_t i = 0; i < n; ++i) {
            std::vector<std::string> ws;
            for (std::size_t k = length(rng); k > 0; --k)
                ws.push_back(words[word(rng)]);
            const auto text = join(ws);
            pairs.push_back(make_pair(std::string(to_string(name)) + "-" + std::to_string(i), toy_gloss(text), text));
        }
        return CorpusSplit(name, std::move(pairs));
    };
    task.train = sample(SplitName::train, cfg.train_pairs);
    task.dev = sample(SplitName::dev, cfg.dev_pairs);
    task.test = sample(SplitName::test, cfg.test_pairs);
    return task;
}

/// Small model sized for the toy task on one CPU core.
inline ModelConfig toy_model_config(Index vocab_size) {
    ModelConfig c;
    c.dim = 64;
    c.ffn_dim = 128;
    c.vocab_size = vocab_size;
    return c;
}

inline TrainConfig toy_train_config() {
    TrainConfig c;
    c.epochs = 30;
    c.batch_tokens = 64;
    c.learning_rate = 2e-3;
    c.warmup_steps = 100;
    return c;
}

/// One BPE model over both sides of the training split.
inline BpeModel train_shared_tokenizer(const CorpusSplit &train, std::size_t vocab_size) {
    std::vector<std::string> sentences;
    for (const auto &p : train) {
        sentences.push_back(p.gloss_string());
        sentences.push_back(p.text);
    }
    return BpeModel::train(sentences, vocab_size);
}

/// Label plan over the text side of `train`.
inline SoftLabelPlan build_label_plan(const CorpusSplit &train, const BpeModel &tok,
                                      const WordEmbeddingTable &embeddings, const SmoothingConfig &cfg) {
    auto index = build_similarity_index(embeddings, target_words(train), cfg.lambda);
    std::vector<std::string> texts;
    for (const auto &p : train)
        texts.push_back(p.text);
    return SoftLabelPlan::build(index, tok, texts, cfg);
}

/// Bilingual corpora for a synthetic pivot language. Every member of a synonym cluster maps to
/// one pivot word ("q" + canonical member); the way back yields the canonical member.
struct PivotCorpora {
    CorpusSplit to_pivot_train, to_pivot_dev;
    CorpusSplit from_pivot_train, from_pivot_dev;
};

inline std::string pivot_word(const std::string &canonical) { return "q" + canonical; }

inline PivotCorpora make_pivot_corpora(const ToyTask &task) {
    std::map<std::string, std::string> to_pivot, canonical;
    for (const auto &c : task.clusters)
        for (const auto &w : c) {
            to_pivot[w] = pivot_word(c.front());
            canonical[w] = c.front();
        }
    auto build = [&](const CorpusSplit &src, SplitName name, bool forward) {
        std::vector<ParallelPair> pairs;
        for (const auto &p : src) {
            std::vector<std::string> piv, canon;
            for (const auto &w : split_whitespace(p.text)) {
                piv.push_back(to_pivot.at(w));
                canon.push_back(canonical.at(w));
            }
            if (forward)
                pairs.push_back(make_pair(p.id, p.text, join(piv)));
            else
                pairs.push_back(make_pair(p.id, join(piv), join(canon)));
        }
        return CorpusSplit(name, std::move(pairs));
    };
    return {build(task.train, SplitName::train, true), build(task.dev, SplitName::dev, true),
            build(task.train, SplitName::train, false), build(task.dev, SplitName::dev, false)};
}

} // namespace glosstr
