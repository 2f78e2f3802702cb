#pragma once

#include <cstdint>
#include <fstream>
#include <map>
#include <set>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "glosstr/errors.hpp"
#include "glosstr/text.hpp"

namespace glosstr {

using TokenId = std::int32_t;

inline constexpr TokenId kPad = 0;
inline constexpr TokenId kBos = 1;
inline constexpr TokenId kEos = 2;
inline constexpr TokenId kUnk = 3;
inline constexpr std::size_t kNumSpecials = 4;

/// Prefix carried by every token that continues a word (U+2581). Never part of the alphabet.
inline constexpr std::string_view kContinuation = "\xE2\x96\x81";

struct TokenizedSequence {
    std::vector<TokenId> ids;
    std::vector<bool> first_subword;
    std::vector<std::size_t> source_words;

    std::size_t size() const { return ids.size(); }
};

/// Byte-pair-encoding model over UTF-8 code points with word-start tracking.
class BpeModel {
  public:
    static constexpr std::string_view kMagic = "glosstr-bpe v1";

    BpeModel() { init_specials(); }

    std::size_t vocab_size() const { return tokens_.size(); }
    const std::vector<std::pair<std::string, std::string>> &merges() const { return merges_; }
    const std::string &token(TokenId id) const {
        if (id < 0 || static_cast<std::size_t>(id) >= tokens_.size())
            throw LookupError("token id " + std::to_string(id) + " out of range");
        return tokens_[id];
    }
    bool has_token(const std::string &t) const { return vocab_.count(t) != 0; }
    TokenId id_of(const std::string &t) const {
        auto it = vocab_.find(t);
        return it == vocab_.end() ? kUnk : it->second;
    }
    /// True when the token string marks the continuation of a word.
    static bool is_continuation(std::string_view tok) { return tok.substr(0, kContinuation.size()) == kContinuation; }
    bool is_special(TokenId id) const { return id >= 0 && static_cast<std::size_t>(id) < kNumSpecials; }

    /// Learns merges from whitespace-separated words of the given sentences.
    static BpeModel train(const std::vector<std::string> &sentences, std::size_t vocab_size) {
        std::map<std::string, std::size_t> word_freq;
        for (const auto &s : sentences)
            for (auto &w : split_whitespace(s))
                ++word_freq[w];
        if (word_freq.empty())
            throw ConfigError("cannot train a tokenizer on an empty corpus");

        std::set<std::string> alphabet;
        std::vector<std::pair<std::vector<std::string>, std::size_t>> words;
        for (const auto &[w, f] : word_freq) {
            auto chars = utf8_chars(w);
            for (auto &c : chars)
                if (c != kContinuation)
                    alphabet.insert(c);
            words.emplace_back(std::move(chars), f);
        }

        BpeModel model;
        const std::size_t base = kNumSpecials + 2 * alphabet.size();
        if (vocab_size < base)
            throw ConfigError("vocab_size " + std::to_string(vocab_size) + " is below the " + std::to_string(base) +
                              " base symbols (4 specials + 2 forms of " + std::to_string(alphabet.size()) +
                              " characters)");
        for (const auto &c : alphabet)
            model.add_both_forms(c);

        while (true) {
            std::map<std::pair<std::string, std::string>, std::size_t> counts;
            for (const auto &[syms, f] : words)
                for (std::size_t i = 0; i + 1 < syms.size(); ++i)
                    if (syms[i] != kContinuation && syms[i + 1] != kContinuation)
                        counts[{syms[i], syms[i + 1]}] += f;
            if (counts.empty())
                break;
            const std::pair<std::string, std::string> *best = nullptr;
            std::size_t best_count = 0;
            std::string best_concat;
            for (const auto &[pair, c] : counts) {
                std::string concat = pair.first + pair.second;
                if (!best || c > best_count || (c == best_count && concat < best_concat)) {
                    best = &pair;
                    best_count = c;
                    best_concat = std::move(concat);
                }
            }
            std::size_t needed = (model.has_token(best_concat) ? 0 : 1) +
                                 (model.has_token(std::string(kContinuation) + best_concat) ? 0 : 1);
            if (model.vocab_size() + needed > vocab_size)
                break;
            auto pair = *best;
            model.merge_rank_.emplace(pair, model.merges_.size());
            model.merges_.push_back(pair);
            model.add_both_forms(best_concat);
            for (auto &entry : words)
                apply_merge(entry.first, pair);
        }
        return model;
    }

    TokenizedSequence encode(std::string_view text) const {
        TokenizedSequence seq;
        auto words = split_whitespace(text);
        for (std::size_t w = 0; w < words.size(); ++w) {
            auto pieces = segment(words[w]);
            for (std::size_t k = 0; k < pieces.size(); ++k) {
                TokenId id = kUnk;
                if (pieces[k] != kUnkSymbol) {
                    auto it = vocab_.find(k == 0 ? pieces[k] : std::string(kContinuation) + pieces[k]);
                    if (it != vocab_.end())
                        id = it->second;
                }
                seq.ids.push_back(id);
                seq.first_subword.push_back(k == 0);
                seq.source_words.push_back(w);
            }
        }
        return seq;
    }

    /// Inverse of encode up to whitespace; PAD/BOS/EOS are dropped.
    std::string decode(const std::vector<TokenId> &ids) const {
        std::string out;
        for (TokenId id : ids) {
            const std::string &tok = token(id);
            if (id == kPad || id == kBos || id == kEos)
                continue;
            if (id != kUnk && is_continuation(tok)) {
                out += tok.substr(kContinuation.size());
            } else {
                if (!out.empty())
                    out.push_back(' ');
                out += tok;
            }
        }
        return out;
    }

    TokenId first_token_of(std::string_view word) const {
        auto seq = encode(word);
        return seq.ids.empty() ? kUnk : seq.ids.front();
    }

    std::uint64_t checksum() const {
        Fnv1a h;
        for (const auto &t : tokens_) {
            h.update(t);
            h.update("\n");
        }
        return h.digest();
    }

    void save(const std::string &path) const {
        std::ofstream out(path, std::ios::binary);
        if (!out)
            throw FormatError("cannot write tokenizer: " + path);
        out << kMagic << '\n';
        out << "specials " << kNumSpecials << '\n';
        for (std::size_t i = 0; i < kNumSpecials; ++i)
            out << tokens_[i] << '\t' << i << '\n';
        out << "merges " << merges_.size() << '\n';
        for (const auto &[a, b] : merges_)
            out << a << ' ' << b << '\n';
        out << "vocab " << tokens_.size() << '\n';
        for (std::size_t i = 0; i < tokens_.size(); ++i)
            out << tokens_[i] << '\t' << i << '\n';
    }

    static BpeModel load(const std::string &path) {
        auto lines = read_lines(path);
        std::size_t n = 0;
        auto next = [&]() -> const std::string & {
            if (n >= lines.size())
                throw FormatError("truncated tokenizer file " + path, n + 1);
            return lines[n++];
        };
        auto count_after = [&](std::string_view key) {
            const auto &line = next();
            auto parts = split_whitespace(line);
            if (parts.size() != 2 || parts[0] != key)
                throw FormatError("expected '" + std::string(key) + " <count>'", n);
            try {
                return static_cast<std::size_t>(std::stoull(parts[1]));
            } catch (const std::exception &) {
                throw FormatError("bad count in '" + line + "'", n);
            }
        };
        if (next() != kMagic)
            throw FormatError("not a glosstr tokenizer file (bad header): " + path, 1);
        if (count_after("specials") != kNumSpecials)
            throw FormatError("unexpected special-token count", n);
        for (std::size_t i = 0; i < kNumSpecials; ++i)
            next();
        BpeModel model;
        model.tokens_.clear();
        model.vocab_.clear();
        std::size_t num_merges = count_after("merges");
        for (std::size_t i = 0; i < num_merges; ++i) {
            auto parts = split(next(), ' ');
            if (parts.size() != 2)
                throw FormatError("merge line must hold two symbols", n);
            model.merge_rank_.emplace(std::make_pair(parts[0], parts[1]), model.merges_.size());
            model.merges_.emplace_back(parts[0], parts[1]);
        }
        std::size_t v = count_after("vocab");
        for (std::size_t i = 0; i < v; ++i) {
            auto parts = split(next(), '\t');
            if (parts.size() != 2 || parts[1] != std::to_string(i))
                throw FormatError("vocab lines must be 'token TAB id' with dense ids", n);
            model.vocab_.emplace(parts[0], static_cast<TokenId>(i));
            model.tokens_.push_back(parts[0]);
        }
        if (model.tokens_.size() < kNumSpecials || model.tokens_[kPad] != "<pad>" || model.tokens_[kBos] != "<s>" ||
            model.tokens_[kEos] != "</s>" || model.tokens_[kUnk] != "<unk>")
            throw FormatError("special tokens must occupy ids 0..3");
        return model;
    }

  private:
    static constexpr std::string_view kUnkSymbol = "<unk>";

    void init_specials() {
        for (const char *s : {"<pad>", "<s>", "</s>", "<unk>"}) {
            vocab_.emplace(s, static_cast<TokenId>(tokens_.size()));
            tokens_.emplace_back(s);
        }
    }

    void add_token(const std::string &t) {
        if (vocab_.emplace(t, static_cast<TokenId>(tokens_.size())).second)
            tokens_.push_back(t);
    }
    void add_both_forms(const std::string &t) {
        add_token(t);
        add_token(std::string(kContinuation) + t);
    }

    static void apply_merge(std::vector<std::string> &syms, const std::pair<std::string, std::string> &pair) {
        std::vector<std::string> out;
        out.reserve(syms.size());
        for (std::size_t i = 0; i < syms.size(); ++i) {
            if (i + 1 < syms.size() && syms[i] == pair.first && syms[i + 1] == pair.second) {
                out.push_back(syms[i] + syms[i + 1]);
                ++i;
            } else {
                out.push_back(std::move(syms[i]));
            }
        }
        syms = std::move(out);
    }

    /// Splits one word into merged pieces (without continuation prefixes).
    std::vector<std::string> segment(std::string_view word) const {
        auto syms = utf8_chars(word);
        for (auto &s : syms)
            if (s == kContinuation || !vocab_.count(s))
                s = std::string(kUnkSymbol);
        while (syms.size() > 1) {
            std::size_t best_rank = SIZE_MAX;
            std::size_t best_at = 0;
            for (std::size_t i = 0; i + 1 < syms.size(); ++i) {
                auto it = merge_rank_.find({syms[i], syms[i + 1]});
                if (it != merge_rank_.end() && it->second < best_rank) {
                    best_rank = it->second;
                    best_at = i;
                }
            }
            if (best_rank == SIZE_MAX)
                break;
            auto pair = std::make_pair(syms[best_at], syms[best_at + 1]);
            apply_merge(syms, pair);
        }
        return syms;
    }

    std::vector<std::string> tokens_;
    std::unordered_map<std::string, TokenId> vocab_;
    std::vector<std::pair<std::string, std::string>> merges_;
    std::map<std::pair<std::string, std::string>, std::size_t> merge_rank_;
};

} // namespace glosstr
