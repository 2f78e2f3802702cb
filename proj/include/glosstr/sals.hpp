#pragma once

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <map>
#include <span>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include "glosstr/embeddings.hpp"
#include "glosstr/errors.hpp"
#include "glosstr/tokenizer.hpp"

namespace glosstr {

enum class SmoothingMode { sals, uniform_target, conventional, one_hot };
enum class NBasis { target_vocab_size, full_vocab_size };

inline std::string_view to_string(SmoothingMode m) {
    switch (m) {
    case SmoothingMode::sals:
        return "sals";
    case SmoothingMode::uniform_target:
        return "uniform_target";
    case SmoothingMode::conventional:
        return "conventional";
    case SmoothingMode::one_hot:
        return "one_hot";
    }
    return "sals";
}

inline SmoothingMode parse_smoothing_mode(std::string_view s) {
    for (auto m : {SmoothingMode::sals, SmoothingMode::uniform_target, SmoothingMode::conventional,
                   SmoothingMode::one_hot})
        if (s == to_string(m))
            return m;
    throw ConfigError("unknown smoothing mode '" + std::string(s) +
                      "' (expected sals, uniform_target, conventional or one_hot)");
}

inline std::string_view to_string(NBasis b) {
    return b == NBasis::target_vocab_size ? "target_vocab_size" : "full_vocab_size";
}

inline NBasis parse_n_basis(std::string_view s) {
    if (s == "target_vocab_size")
        return NBasis::target_vocab_size;
    if (s == "full_vocab_size")
        return NBasis::full_vocab_size;
    throw ConfigError("unknown n_basis '" + std::string(s) + "' (expected target_vocab_size or full_vocab_size)");
}

struct SmoothingConfig {
    double lambda = 0.6;
    double beta = 0.1;
    SmoothingMode mode = SmoothingMode::sals;
    NBasis n_basis = NBasis::target_vocab_size;

    void validate() const {
        if (!(lambda > 0.0 && lambda <= 1.0))
            throw ConfigError("lambda must lie in (0, 1]");
        if (!(beta >= 0.0 && beta < 1.0))
            throw ConfigError("beta must lie in [0, 1)");
    }
};

struct LabelMass {
    std::size_t id;
    double mass;
    bool operator==(const LabelMass &) const = default;
};

using SparseRow = std::vector<LabelMass>;

/// A label distribution over token ids: `base` on every support entry (scaled by its
/// multiplicity) plus sparse `peaks` on top. Rows of the plan share their support vector.
struct LabelRow {
    double base = 0.0;
    const SparseRow *support = nullptr;
    SparseRow peaks;

    /// Adds the distribution into `dense` (which must be zeroed by the caller).
    template <class T>
    void expand(std::span<T> dense) const {
        if (support && base != 0.0) {
            for (const auto &s : *support) {
                if (s.id >= dense.size())
                    throw DomainError("label mass on id " + std::to_string(s.id) + " beyond vocabulary");
                dense[s.id] += static_cast<T>(base * s.mass);
            }
        }
        for (const auto &p : peaks) {
            if (p.id >= dense.size())
                throw DomainError("label mass on id " + std::to_string(p.id) + " beyond vocabulary");
            dense[p.id] += static_cast<T>(p.mass);
        }
    }

    /// Merged, id-sorted (token, mass) list without zero entries.
    SparseRow to_sparse() const {
        std::map<std::size_t, double> acc;
        if (support && base != 0.0)
            for (const auto &s : *support)
                acc[s.id] += base * s.mass;
        for (const auto &p : peaks)
            acc[p.id] += p.mass;
        SparseRow out;
        for (const auto &[id, m] : acc)
            if (m != 0.0)
                out.push_back({id, m});
        return out;
    }

    double total() const {
        double t = 0;
        if (support)
            for (const auto &s : *support)
                t += base * s.mass;
        for (const auto &p : peaks)
            t += p.mass;
        return t;
    }
};

inline LabelRow one_hot_row(std::size_t gold) { return LabelRow{0.0, nullptr, {{gold, 1.0}}}; }

namespace detail {

/// Unnormalized semantically aware weights of one target word, kept in factored form:
/// every target word carries `other` except the listed specials (self and qualifying neighbors).
struct WordWeights {
    double other = 0.0;
    std::vector<LabelMass> specials; // word index, raw weight
    double total = 0.0;
};

inline WordWeights word_weights(std::size_t i, const SimilarityIndex &index, double beta, double basis,
                                bool use_neighbors) {
    WordWeights w;
    w.other = beta / basis;
    w.specials.push_back({i, 1.0});
    if (use_neighbors)
        for (const auto &n : index.neighbors(i))
            if (n.similarity >= index.lambda())
                w.specials.push_back({n.word, n.similarity});
    const double n_other = static_cast<double>(index.size() - w.specials.size());
    w.total = n_other * w.other;
    for (const auto &s : w.specials)
        w.total += s.mass;
    return w;
}

inline double basis_size(const SmoothingConfig &config, std::size_t target_size, std::size_t full_vocab_size) {
    if (config.n_basis == NBasis::full_vocab_size) {
        if (full_vocab_size == 0)
            throw ConfigError("n_basis=full_vocab_size needs the tokenizer vocabulary size");
        return static_cast<double>(full_vocab_size);
    }
    return static_cast<double>(target_size);
}

} // namespace detail

/// Normalized semantically aware distribution of `word` over the target vocabulary (one entry per word).
inline SparseRow build_sals_row(const std::string &word, const SimilarityIndex &index, const SmoothingConfig &config,
                                std::size_t full_vocab_size = 0) {
    config.validate();
    if (!index.contains(word))
        throw LookupError("'" + word + "' is not in the target vocabulary");
    const std::size_t i = index.position(word);
    const bool neighbors = config.mode != SmoothingMode::uniform_target;
    auto w = detail::word_weights(i, index, config.beta, detail::basis_size(config, index.size(), full_vocab_size),
                                  neighbors);
    SparseRow row(index.size());
    for (std::size_t j = 0; j < row.size(); ++j)
        row[j] = {j, w.other};
    for (const auto &s : w.specials)
        row[s.id].mass = s.mass;
    for (auto &e : row)
        e.mass /= w.total;
    return row;
}

/// Precomputed label rows for one (tokenizer, target vocabulary, smoothing config) triple.
class SoftLabelPlan {
  public:
    static constexpr std::string_view kMagic = "glosstr-sals v1";

    SoftLabelPlan() = default;

    /// `first_tokens[i]` is the first subword id of target word i; `observed` lists the ids
    /// seen on the target side of the training data (EOS included by the caller).
    static SoftLabelPlan build(const SimilarityIndex &index, const std::vector<TokenId> &first_tokens,
                               std::vector<TokenId> observed, std::size_t vocab_size, const SmoothingConfig &config) {
        config.validate();
        if (first_tokens.size() != index.size())
            throw DomainError("first-token map does not match the target vocabulary");
        SoftLabelPlan plan;
        plan.config_ = config;
        plan.vocab_size_ = vocab_size;
        plan.target_size_ = index.size();

        std::map<std::size_t, double> multiplicity;
        std::map<std::size_t, std::vector<std::size_t>> groups;
        for (std::size_t i = 0; i < first_tokens.size(); ++i) {
            auto t = static_cast<std::size_t>(first_tokens[i]);
            if (t >= vocab_size)
                throw DomainError("first token id beyond vocabulary");
            multiplicity[t] += 1.0;
            groups[t].push_back(i);
        }
        for (const auto &[t, c] : multiplicity)
            plan.support_.push_back({t, c});

        std::sort(observed.begin(), observed.end());
        observed.erase(std::unique(observed.begin(), observed.end()), observed.end());
        for (TokenId t : observed) {
            if (t < 0 || static_cast<std::size_t>(t) >= vocab_size)
                throw DomainError("observed token id beyond vocabulary");
            plan.observed_.push_back({static_cast<std::size_t>(t), 1.0});
        }

        const double basis = detail::basis_size(config, index.size(), vocab_size);
        const bool neighbors = config.mode == SmoothingMode::sals || config.mode == SmoothingMode::conventional;
        for (const auto &[tok, members] : groups) {
            // Collision groups average the member words' rows.
            const double share = 1.0 / static_cast<double>(members.size());
            StoredRow row;
            for (std::size_t i : members) {
                auto w = detail::word_weights(i, index, config.beta, basis, neighbors);
                row.base += share * w.other / w.total;
                for (const auto &s : w.specials)
                    row.peaks.push_back(
                        {static_cast<std::size_t>(first_tokens[s.id]), share * (s.mass - w.other) / w.total});
            }
            plan.rows_.emplace(tok, std::move(row));
        }
        return plan;
    }

    /// Convenience builder: first tokens come from the tokenizer; observed tokens from target sentences.
    static SoftLabelPlan build(const SimilarityIndex &index, const BpeModel &tokenizer,
                               const std::vector<std::string> &target_sentences, const SmoothingConfig &config) {
        std::vector<TokenId> first;
        first.reserve(index.size());
        for (const auto &w : index.target_words())
            first.push_back(tokenizer.first_token_of(w));
        std::vector<TokenId> observed{kEos};
        for (const auto &s : target_sentences)
            for (TokenId id : tokenizer.encode(s).ids)
                observed.push_back(id);
        return build(index, first, std::move(observed), tokenizer.vocab_size(), config);
    }

    const SmoothingConfig &config() const { return config_; }
    std::size_t vocab_size() const { return vocab_size_; }
    std::size_t target_size() const { return target_size_; }
    const SparseRow &first_token_support() const { return support_; }
    const SparseRow &observed_tokens() const { return observed_; }
    bool is_target_first_token(TokenId t) const { return rows_.count(static_cast<std::size_t>(t)) != 0; }

    /// Label distribution for one gold token, given whether it begins a word.
    LabelRow row_for_position(TokenId gold, bool is_first_subword) const {
        if (gold < 0 || static_cast<std::size_t>(gold) >= vocab_size_)
            throw DomainError("gold token id " + std::to_string(gold) + " out of vocabulary range");
        const auto g = static_cast<std::size_t>(gold);
        if (config_.mode == SmoothingMode::one_hot)
            return one_hot_row(g);
        if (is_first_subword) {
            auto it = rows_.find(g);
            if (it != rows_.end()) {
                const StoredRow &r = it->second;
                if (config_.mode == SmoothingMode::conventional) {
                    LabelRow row{config_.beta * r.base, &support_, {}};
                    row.peaks.reserve(r.peaks.size() + 1);
                    row.peaks.push_back({g, 1.0 - config_.beta});
                    for (const auto &p : r.peaks)
                        row.peaks.push_back({p.id, config_.beta * p.mass});
                    return row;
                }
                return LabelRow{r.base, &support_, r.peaks};
            }
        }
        if (observed_.empty())
            return one_hot_row(g);
        // Uniform smoothing over the observed target-side tokens.
        return LabelRow{config_.beta / static_cast<double>(observed_.size()), &observed_, {{g, 1.0 - config_.beta}}};
    }

    void save(const std::string &path) const {
        std::ofstream out(path, std::ios::binary);
        if (!out)
            throw FormatError("cannot write label plan: " + path);
        out << std::setprecision(17);
        out << kMagic << '\n';
        out << "config lambda=" << config_.lambda << " beta=" << config_.beta << " mode=" << to_string(config_.mode)
            << " n_basis=" << to_string(config_.n_basis) << " vocab_size=" << vocab_size_
            << " target_size=" << target_size_ << '\n';
        out << "support " << support_.size() << '\n';
        for (const auto &s : support_)
            out << s.id << '\t' << s.mass << '\n';
        out << "observed " << observed_.size() << '\n';
        for (const auto &s : observed_)
            out << s.id << '\n';
        out << "rows " << rows_.size() << '\n';
        for (const auto &[tok, r] : rows_) {
            out << tok << '\t' << r.base;
            for (const auto &p : r.peaks)
                out << '\t' << p.id << ':' << p.mass;
            out << '\n';
        }
    }

    static SoftLabelPlan load(const std::string &path) {
        auto lines = read_lines(path);
        std::size_t n = 0;
        auto next = [&]() -> const std::string & {
            if (n >= lines.size())
                throw FormatError("truncated label plan " + path, n + 1);
            return lines[n++];
        };
        auto count_after = [&](std::string_view key) -> std::size_t {
            auto parts = split_whitespace(next());
            if (parts.size() != 2 || parts[0] != key)
                throw FormatError("expected '" + std::string(key) + " <count>'", n);
            return std::stoull(parts[1]);
        };
        if (next() != kMagic)
            throw FormatError("not a label plan file: " + path, 1);
        SoftLabelPlan plan;
        auto cfg = split_whitespace(next());
        if (cfg.empty() || cfg[0] != "config")
            throw FormatError("missing config line", n);
        for (std::size_t k = 1; k < cfg.size(); ++k) {
            auto eq = cfg[k].find('=');
            if (eq == std::string::npos)
                throw FormatError("bad config entry '" + cfg[k] + "'", n);
            auto key = cfg[k].substr(0, eq);
            auto val = cfg[k].substr(eq + 1);
            if (key == "lambda")
                plan.config_.lambda = std::stod(val);
            else if (key == "beta")
                plan.config_.beta = std::stod(val);
            else if (key == "mode")
                plan.config_.mode = parse_smoothing_mode(val);
            else if (key == "n_basis")
                plan.config_.n_basis = parse_n_basis(val);
            else if (key == "vocab_size")
                plan.vocab_size_ = std::stoull(val);
            else if (key == "target_size")
                plan.target_size_ = std::stoull(val);
        }
        for (std::size_t k = count_after("support"); k > 0; --k) {
            auto f = split(next(), '\t');
            if (f.size() != 2)
                throw FormatError("bad support line", n);
            plan.support_.push_back({std::stoull(f[0]), std::stod(f[1])});
        }
        for (std::size_t k = count_after("observed"); k > 0; --k)
            plan.observed_.push_back({std::stoull(next()), 1.0});
        for (std::size_t k = count_after("rows"); k > 0; --k) {
            auto f = split(next(), '\t');
            if (f.size() < 2)
                throw FormatError("bad row line", n);
            StoredRow row;
            row.base = std::stod(f[1]);
            for (std::size_t j = 2; j < f.size(); ++j) {
                auto colon = f[j].find(':');
                if (colon == std::string::npos)
                    throw FormatError("bad row entry '" + f[j] + "'", n);
                row.peaks.push_back({std::stoull(f[j].substr(0, colon)), std::stod(f[j].substr(colon + 1))});
            }
            plan.rows_.emplace(std::stoull(f[0]), std::move(row));
        }
        return plan;
    }

  private:
    struct StoredRow {
        double base = 0.0;
        SparseRow peaks;
    };

    SmoothingConfig config_;
    std::size_t vocab_size_ = 0;
    std::size_t target_size_ = 0;
    SparseRow support_;
    SparseRow observed_;
    std::map<std::size_t, StoredRow> rows_;
};

/// Free-function form of SoftLabelPlan::row_for_position.
inline LabelRow label_row_for_position(TokenId gold, bool is_first_subword, const SoftLabelPlan &plan) {
    return plan.row_for_position(gold, is_first_subword);
}

/// -sum_k p_k log softmax(logits)_k. When `grad` is non-empty it receives softmax - p, times `grad_scale`.
template <class T>
double soft_cross_entropy(std::span<const T> logits, const LabelRow &label, std::span<T> grad = {},
                          T grad_scale = T(1)) {
    const std::size_t v = logits.size();
    std::vector<double> p(v, 0.0);
    label.expand(std::span<double>(p));
    double mx = -INFINITY;
    for (T x : logits) {
        if (!std::isfinite(static_cast<double>(x)))
            throw NumericError("non-finite logit");
        mx = std::max(mx, static_cast<double>(x));
    }
    double z = 0;
    for (T x : logits)
        z += std::exp(static_cast<double>(x) - mx);
    const double log_z = mx + std::log(z);
    double loss = 0;
    for (std::size_t k = 0; k < v; ++k)
        if (p[k] != 0.0)
            loss -= p[k] * (static_cast<double>(logits[k]) - log_z);
    if (!grad.empty()) {
        for (std::size_t k = 0; k < v; ++k)
            grad[k] = static_cast<T>((std::exp(static_cast<double>(logits[k]) - log_z) - p[k]) *
                                     static_cast<double>(grad_scale));
    }
    return loss;
}

template <class T>
double soft_cross_entropy(const std::vector<T> &logits, const LabelRow &label) {
    return soft_cross_entropy<T>(std::span<const T>(logits), label);
}

} // namespace glosstr
