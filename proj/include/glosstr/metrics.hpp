#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <iomanip>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include <nlohmann/json.hpp>

#include "glosstr/corpus.hpp"
#include "glosstr/errors.hpp"
#include "glosstr/text.hpp"

namespace glosstr {

namespace detail {

using NgramCounts = std::unordered_map<std::string, std::size_t>;

inline NgramCounts ngrams(const std::vector<std::string> &toks, std::size_t n, std::string_view sep = "\x1f") {
    NgramCounts out;
    if (toks.size() < n)
        return out;
    for (std::size_t i = 0; i + n <= toks.size(); ++i) {
        std::string key = toks[i];
        for (std::size_t k = 1; k < n; ++k) {
            key += sep;
            key += toks[i + k];
        }
        ++out[key];
    }
    return out;
}

inline std::size_t clipped_matches(const NgramCounts &hyp, const NgramCounts &ref) {
    std::size_t m = 0;
    for (const auto &[g, c] : hyp) {
        auto it = ref.find(g);
        if (it != ref.end())
            m += std::min(c, it->second);
    }
    return m;
}

inline void check_corpus(std::size_t hyps, std::size_t refs) {
    if (hyps != refs)
        throw DomainError("hypothesis and reference counts differ (" + std::to_string(hyps) + " vs " +
                          std::to_string(refs) + ")");
    if (hyps == 0)
        throw DomainError("empty evaluation corpus");
}

} // namespace detail

struct BleuStats {
    std::array<std::size_t, 4> matches{};
    std::array<std::size_t, 4> totals{};
    std::size_t hyp_length = 0;
    std::size_t ref_length = 0;
};

inline BleuStats bleu_stats(const std::vector<std::string> &hyps, const std::vector<std::string> &refs) {
    detail::check_corpus(hyps.size(), refs.size());
    BleuStats s;
    for (std::size_t i = 0; i < hyps.size(); ++i) {
        auto h = split_whitespace(hyps[i]);
        auto r = split_whitespace(refs[i]);
        s.hyp_length += h.size();
        s.ref_length += r.size();
        for (std::size_t n = 1; n <= 4; ++n) {
            s.matches[n - 1] += detail::clipped_matches(detail::ngrams(h, n), detail::ngrams(r, n));
            s.totals[n - 1] += h.size() >= n ? h.size() - n + 1 : 0;
        }
    }
    return s;
}

/// Corpus BLEU with orders 1..n, uniform weights, brevity penalty, no smoothing. Range [0, 100].
inline double bleu_from_stats(const BleuStats &s, std::size_t n) {
    if (n < 1 || n > 4)
        throw DomainError("BLEU order must be in 1..4");
    if (s.hyp_length == 0)
        return 0.0;
    double log_sum = 0;
    for (std::size_t k = 0; k < n; ++k) {
        if (s.matches[k] == 0 || s.totals[k] == 0)
            return 0.0;
        log_sum += std::log(static_cast<double>(s.matches[k]) / static_cast<double>(s.totals[k]));
    }
    const double bp =
        std::exp(std::min(0.0, 1.0 - static_cast<double>(s.ref_length) / static_cast<double>(s.hyp_length)));
    return 100.0 * bp * std::exp(log_sum / static_cast<double>(n));
}

inline double bleu_n(const std::vector<std::string> &hyps, const std::vector<std::string> &refs, std::size_t n) {
    return bleu_from_stats(bleu_stats(hyps, refs), n);
}

inline std::size_t lcs_length(const std::vector<std::string> &a, const std::vector<std::string> &b) {
    std::vector<std::size_t> prev(b.size() + 1, 0), cur(b.size() + 1, 0);
    for (std::size_t i = 1; i <= a.size(); ++i) {
        for (std::size_t j = 1; j <= b.size(); ++j)
            cur[j] = a[i - 1] == b[j - 1] ? prev[j - 1] + 1 : std::max(prev[j], cur[j - 1]);
        std::swap(prev, cur);
    }
    return prev[b.size()];
}

inline constexpr double kRougeBeta = 1.2;

/// Sentence-averaged ROUGE-L F-measure (recall weight 1.2), times 100.
inline double rouge_l(const std::vector<std::string> &hyps, const std::vector<std::string> &refs,
                      double beta = kRougeBeta) {
    detail::check_corpus(hyps.size(), refs.size());
    double total = 0;
    for (std::size_t i = 0; i < hyps.size(); ++i) {
        auto h = split_whitespace(hyps[i]);
        auto r = split_whitespace(refs[i]);
        if (h.empty() || r.empty()) {
            total += h.empty() && r.empty() ? 1.0 : 0.0;
            continue;
        }
        const double lcs = static_cast<double>(lcs_length(h, r));
        if (lcs == 0)
            continue;
        const double p = lcs / static_cast<double>(h.size());
        const double rec = lcs / static_cast<double>(r.size());
        const double b2 = beta * beta;
        total += (1 + b2) * p * rec / (rec + b2 * p);
    }
    return 100.0 * total / static_cast<double>(hyps.size());
}

inline constexpr std::size_t kChrfCharOrder = 6;
inline constexpr std::size_t kChrfWordOrder = 2;
inline constexpr double kChrfBeta = 2.0;

/// chrF++: character 1..6-grams (whitespace removed) and word 1..2-grams, corpus-level
/// statistics, F-beta (beta = 2) per order averaged over the orders present on either side.
inline double chrf_pp(const std::vector<std::string> &hyps, const std::vector<std::string> &refs) {
    detail::check_corpus(hyps.size(), refs.size());
    constexpr std::size_t orders = kChrfCharOrder + kChrfWordOrder;
    std::array<double, orders> match{}, hyp_tot{}, ref_tot{};
    auto chars_of = [](const std::string &s) {
        std::vector<std::string> out;
        for (auto &c : utf8_chars(s))
            if (!(c.size() == 1 && is_space(c[0])))
                out.push_back(std::move(c));
        return out;
    };
    auto accumulate = [&](std::size_t slot, const detail::NgramCounts &h, const detail::NgramCounts &r) {
        match[slot] += static_cast<double>(detail::clipped_matches(h, r));
        for (const auto &[g, c] : h)
            hyp_tot[slot] += static_cast<double>(c);
        for (const auto &[g, c] : r)
            ref_tot[slot] += static_cast<double>(c);
    };
    for (std::size_t i = 0; i < hyps.size(); ++i) {
        auto hc = chars_of(hyps[i]);
        auto rc = chars_of(refs[i]);
        for (std::size_t n = 1; n <= kChrfCharOrder; ++n)
            accumulate(n - 1, detail::ngrams(hc, n, ""), detail::ngrams(rc, n, ""));
        auto hw = split_whitespace(hyps[i]);
        auto rw = split_whitespace(refs[i]);
        for (std::size_t n = 1; n <= kChrfWordOrder; ++n)
            accumulate(kChrfCharOrder + n - 1, detail::ngrams(hw, n), detail::ngrams(rw, n));
    }
    const double b2 = kChrfBeta * kChrfBeta;
    double sum = 0;
    std::size_t counted = 0;
    for (std::size_t k = 0; k < orders; ++k) {
        if (hyp_tot[k] == 0 && ref_tot[k] == 0)
            continue;
        ++counted;
        const double p = hyp_tot[k] > 0 ? match[k] / hyp_tot[k] : 0.0;
        const double r = ref_tot[k] > 0 ? match[k] / ref_tot[k] : 0.0;
        if (p > 0 || r > 0)
            sum += (1 + b2) * p * r / (b2 * p + r);
    }
    return counted ? 100.0 * sum / static_cast<double>(counted) : 100.0;
}

struct LengthRatio {
    double ratio = 0.0;
    std::size_t out_total = 0;
    std::size_t ref_total = 0;
};

inline LengthRatio length_ratio_from_totals(std::size_t out_total, std::size_t ref_total) {
    if (ref_total == 0)
        throw DomainError("length ratio needs a nonempty reference side");
    return {static_cast<double>(out_total) / static_cast<double>(ref_total), out_total, ref_total};
}

inline LengthRatio length_ratio(const std::vector<std::string> &hyps, const std::vector<std::string> &refs) {
    std::size_t out = 0, ref = 0;
    for (const auto &h : hyps)
        out += split_whitespace(h).size();
    for (const auto &r : refs)
        ref += split_whitespace(r).size();
    return length_ratio_from_totals(out, ref);
}

struct EvalReport {
    double bleu1 = 0, bleu2 = 0, bleu3 = 0, bleu4 = 0;
    double rouge_l = 0;
    double chrf_pp = 0;
    double length_ratio = 0;
    std::size_t ref_tokens = 0;
    std::size_t out_tokens = 0;

    /// Flat "key value" lines.
    std::string to_text() const {
        std::ostringstream os;
        os << std::fixed << std::setprecision(2);
        os << "bleu1 " << bleu1 << "\nbleu2 " << bleu2 << "\nbleu3 " << bleu3 << "\nbleu4 " << bleu4
           << "\nrouge_l " << rouge_l << "\nchrf_pp " << chrf_pp << '\n';
        os << std::setprecision(4) << "length_ratio " << length_ratio << '\n';
        os << "ref_tokens " << ref_tokens << "\nout_tokens " << out_tokens << '\n';
        return os.str();
    }

    nlohmann::json to_json() const {
        return {{"bleu1", bleu1},     {"bleu2", bleu2},           {"bleu3", bleu3},
                {"bleu4", bleu4},     {"rouge_l", rouge_l},       {"chrf_pp", chrf_pp},
                {"length_ratio", length_ratio}, {"ref_tokens", ref_tokens}, {"out_tokens", out_tokens}};
    }
};

inline EvalReport evaluate(const std::vector<std::string> &hyps, const std::vector<std::string> &refs) {
    auto s = bleu_stats(hyps, refs);
    EvalReport r;
    r.bleu1 = bleu_from_stats(s, 1);
    r.bleu2 = bleu_from_stats(s, 2);
    r.bleu3 = bleu_from_stats(s, 3);
    r.bleu4 = bleu_from_stats(s, 4);
    r.rouge_l = rouge_l(hyps, refs);
    r.chrf_pp = chrf_pp(hyps, refs);
    r.out_tokens = s.hyp_length;
    r.ref_tokens = s.ref_length;
    r.length_ratio = s.ref_length ? static_cast<double>(s.hyp_length) / static_cast<double>(s.ref_length) : 0.0;
    return r;
}

struct BucketScore {
    std::string bucket;
    std::size_t items = 0; ///< word tokens in references (word table) or sentences (length table)
    std::size_t hyp_count = 0;
    std::size_t matches = 0;
    double precision = 0, recall = 0, fmeasure = 0;
};

/// Training-frequency bucket labels: 0, 1, 2-4, 5-9, 10-99, 100-999, 1000+.
inline const std::vector<std::string> &frequency_bucket_labels() {
    static const std::vector<std::string> labels{"0", "1", "2-4", "5-9", "10-99", "100-999", "1000+"};
    return labels;
}

inline std::size_t frequency_bucket(std::size_t freq) {
    if (freq == 0)
        return 0;
    if (freq == 1)
        return 1;
    if (freq < 5)
        return 2;
    if (freq < 10)
        return 3;
    if (freq < 100)
        return 4;
    if (freq < 1000)
        return 5;
    return 6;
}

/// Bag-of-words F-measure per training-frequency bucket of the word. Every bucket is listed.
inline std::vector<BucketScore> word_fmeasure_buckets(const std::vector<std::string> &hyps,
                                                      const std::vector<std::string> &refs, const CorpusSplit &train) {
    detail::check_corpus(hyps.size(), refs.size());
    std::unordered_map<std::string, std::size_t> freq;
    for (const auto &p : train)
        for (const auto &w : split_whitespace(p.text))
            ++freq[w];
    const auto &labels = frequency_bucket_labels();
    std::vector<BucketScore> out(labels.size());
    for (std::size_t b = 0; b < labels.size(); ++b)
        out[b].bucket = labels[b];
    auto bucket_of = [&](const std::string &w) {
        auto it = freq.find(w);
        return frequency_bucket(it == freq.end() ? 0 : it->second);
    };
    for (std::size_t i = 0; i < hyps.size(); ++i) {
        auto h = detail::ngrams(split_whitespace(hyps[i]), 1);
        auto r = detail::ngrams(split_whitespace(refs[i]), 1);
        for (const auto &[w, c] : r) {
            auto &b = out[bucket_of(w)];
            b.items += c;
            auto it = h.find(w);
            if (it != h.end())
                b.matches += std::min(c, it->second);
        }
        for (const auto &[w, c] : h)
            out[bucket_of(w)].hyp_count += c;
    }
    for (auto &b : out) {
        b.precision = b.hyp_count ? static_cast<double>(b.matches) / static_cast<double>(b.hyp_count) : 0.0;
        b.recall = b.items ? static_cast<double>(b.matches) / static_cast<double>(b.items) : 0.0;
        b.fmeasure = b.precision + b.recall > 0 ? 2 * b.precision * b.recall / (b.precision + b.recall) : 0.0;
    }
    return out;
}

inline const std::vector<std::string> &length_bucket_labels() {
    static const std::vector<std::string> labels{"<10", "10-19", "20-29", "30+"};
    return labels;
}

/// Mean sentence-level unigram F-measure, bucketed by reference length in tokens.
inline std::vector<BucketScore> sentence_fmeasure_by_length(const std::vector<std::string> &hyps,
                                                            const std::vector<std::string> &refs) {
    detail::check_corpus(hyps.size(), refs.size());
    const auto &labels = length_bucket_labels();
    std::vector<BucketScore> out(labels.size());
    std::vector<double> sums(labels.size(), 0.0);
    for (std::size_t b = 0; b < labels.size(); ++b)
        out[b].bucket = labels[b];
    for (std::size_t i = 0; i < hyps.size(); ++i) {
        auto hw = split_whitespace(hyps[i]);
        auto rw = split_whitespace(refs[i]);
        std::size_t b = std::min<std::size_t>(rw.size() / 10, 3);
        std::size_t m = detail::clipped_matches(detail::ngrams(hw, 1), detail::ngrams(rw, 1));
        double f = 0;
        if (hw.empty() && rw.empty())
            f = 1;
        else if (m > 0) {
            double p = static_cast<double>(m) / static_cast<double>(hw.size());
            double r = static_cast<double>(m) / static_cast<double>(rw.size());
            f = 2 * p * r / (p + r);
        }
        out[b].items += 1;
        out[b].hyp_count += hw.size();
        out[b].matches += m;
        sums[b] += f;
    }
    for (std::size_t b = 0; b < out.size(); ++b)
        out[b].fmeasure = out[b].items ? sums[b] / static_cast<double>(out[b].items) : 0.0;
    return out;
}

/// TSV with a header row.
inline std::string bucket_table_tsv(const std::vector<BucketScore> &rows) {
    std::ostringstream os;
    os << "bucket\titems\thyp_count\tmatches\tprecision\trecall\tfmeasure\n" << std::fixed << std::setprecision(4);
    for (const auto &r : rows)
        os << r.bucket << '\t' << r.items << '\t' << r.hyp_count << '\t' << r.matches << '\t' << r.precision << '\t'
           << r.recall << '\t' << r.fmeasure << '\n';
    return os.str();
}

} // namespace glosstr
