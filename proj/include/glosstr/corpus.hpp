#pragma once

#include <algorithm>
#include <fstream>
#include <set>
#include <string>
#include <string_view>
#include <unordered_set>
#include <utility>
#include <vector>

#include "glosstr/errors.hpp"
#include "glosstr/text.hpp"

namespace glosstr {

enum class Origin { gold, silver_paraphrase, silver_backtranslation };

inline std::string_view to_string(Origin o) {
    switch (o) {
    case Origin::gold:
        return "gold";
    case Origin::silver_paraphrase:
        return "silver_paraphrase";
    case Origin::silver_backtranslation:
        return "silver_backtranslation";
    }
    return "gold";
}

inline Origin parse_origin(std::string_view s, std::size_t line = 0) {
    if (s == "gold")
        return Origin::gold;
    if (s == "silver_paraphrase")
        return Origin::silver_paraphrase;
    if (s == "silver_backtranslation")
        return Origin::silver_backtranslation;
    throw FormatError("unknown origin '" + std::string(s) + "'", line);
}

/// One gloss sequence with its spoken-language sentence.
struct ParallelPair {
    std::string id;
    std::vector<std::string> gloss;
    std::string text;
    Origin origin = Origin::gold;

    std::string gloss_string() const { return join(gloss); }

    bool same_content(const ParallelPair &o) const { return gloss == o.gloss && text == o.text; }
    bool operator==(const ParallelPair &) const = default;
};

/// Builds a pair from raw fields: gloss whitespace-collapsed (case kept), text normalized.
inline ParallelPair make_pair(std::string id, std::string_view gloss, std::string_view text,
                              Origin origin = Origin::gold, std::size_t line = 0) {
    ParallelPair p{std::move(id), split_whitespace(gloss), normalize_text(text), origin};
    if (p.gloss.empty())
        throw FormatError("empty gloss sequence", line);
    if (p.text.empty())
        throw FormatError("empty text", line);
    return p;
}

enum class SplitName { train, dev, test };

inline std::string_view to_string(SplitName s) {
    switch (s) {
    case SplitName::train:
        return "train";
    case SplitName::dev:
        return "dev";
    case SplitName::test:
        return "test";
    }
    return "train";
}

inline SplitName parse_split_name(std::string_view s) {
    if (s == "train")
        return SplitName::train;
    if (s == "dev")
        return SplitName::dev;
    if (s == "test")
        return SplitName::test;
    throw ConfigError("unknown split name '" + std::string(s) + "' (expected train, dev or test)");
}

/// An immutable, validated list of pairs. Ids are unique; dev/test hold gold pairs only.
class CorpusSplit {
  public:
    CorpusSplit() = default;
    CorpusSplit(SplitName name, std::vector<ParallelPair> pairs) : name_(name), pairs_(std::move(pairs)) {
        std::unordered_set<std::string> ids;
        for (const auto &p : pairs_) {
            if (!ids.insert(p.id).second)
                throw FormatError("duplicate pair id '" + p.id + "' in " + std::string(to_string(name_)));
            if (name_ != SplitName::train && p.origin != Origin::gold)
                throw FormatError("silver pair '" + p.id + "' not allowed in " + std::string(to_string(name_)));
            if (p.gloss.empty() || p.text.empty())
                throw FormatError("pair '" + p.id + "' has an empty side");
        }
    }

    SplitName name() const { return name_; }
    const std::vector<ParallelPair> &pairs() const { return pairs_; }
    std::size_t size() const { return pairs_.size(); }
    bool empty() const { return pairs_.empty(); }
    const ParallelPair &operator[](std::size_t i) const { return pairs_[i]; }
    auto begin() const { return pairs_.begin(); }
    auto end() const { return pairs_.end(); }

  private:
    SplitName name_ = SplitName::train;
    std::vector<ParallelPair> pairs_;
};

/// Reads a PHOENIX-2014T style annotation file ('|'-delimited, header row).
inline CorpusSplit load_phoenix(const std::string &path, SplitName split) {
    auto lines = read_lines(path);
    if (lines.empty())
        throw EmptyCorpusError("empty annotation file: " + path);
    auto header = glosstr::split(lines[0], '|');
    auto column = [&](std::string_view name) -> std::ptrdiff_t {
        auto it = std::find(header.begin(), header.end(), name);
        return it == header.end() ? -1 : it - header.begin();
    };
    const auto orth = column("orth");
    const auto translation = column("translation");
    const auto name = column("name");
    if (orth < 0)
        throw FormatError("missing column 'orth' in " + path, 1);
    if (translation < 0)
        throw FormatError("missing column 'translation' in " + path, 1);

    std::vector<ParallelPair> pairs;
    for (std::size_t i = 1; i < lines.size(); ++i) {
        if (collapse_whitespace(lines[i]).empty())
            continue;
        auto fields = glosstr::split(lines[i], '|');
        if (fields.size() != header.size())
            throw FormatError("expected " + std::to_string(header.size()) + " fields, found " +
                                  std::to_string(fields.size()),
                              i + 1);
        std::string id = name >= 0 ? collapse_whitespace(fields[name])
                                   : std::string(to_string(split)) + "-" + std::to_string(pairs.size());
        pairs.push_back(make_pair(std::move(id), fields[orth], fields[translation], Origin::gold, i + 1));
    }
    if (pairs.empty())
        throw EmptyCorpusError("no data rows in " + path);
    return CorpusSplit(split, std::move(pairs));
}

/// Reads "gloss TAB text [TAB origin [TAB id]]" lines. Missing ids become "<split>-<row>".
inline CorpusSplit load_tsv(const std::string &path, SplitName split = SplitName::train) {
    auto lines = read_lines(path);
    std::vector<ParallelPair> pairs;
    for (std::size_t i = 0; i < lines.size(); ++i) {
        if (collapse_whitespace(lines[i]).empty())
            continue;
        auto fields = glosstr::split(lines[i], '\t');
        if (fields.size() < 2)
            throw FormatError("expected a tab between gloss and text", i + 1);
        if (fields.size() > 4)
            throw FormatError("too many tab-separated fields", i + 1);
        Origin origin = fields.size() >= 3 ? parse_origin(fields[2], i + 1) : Origin::gold;
        std::string id = fields.size() == 4 ? fields[3] : std::string(to_string(split)) + "-" + std::to_string(pairs.size());
        pairs.push_back(make_pair(std::move(id), fields[0], fields[1], origin, i + 1));
    }
    return CorpusSplit(split, std::move(pairs));
}

inline void save_tsv(const CorpusSplit &split, const std::string &path) {
    std::ofstream out(path, std::ios::binary);
    if (!out)
        throw FormatError("cannot write file: " + path);
    for (const auto &p : split)
        out << p.gloss_string() << '\t' << p.text << '\t' << to_string(p.origin) << '\t' << p.id << '\n';
}

struct VocabStats {
    std::size_t glosses = 0;
    std::size_t words = 0;
    bool operator==(const VocabStats &) const = default;
};

inline VocabStats vocab_stats(const CorpusSplit &split) {
    std::set<std::string> glosses, words;
    for (const auto &p : split) {
        glosses.insert(p.gloss.begin(), p.gloss.end());
        for (auto &w : split_whitespace(p.text))
            words.insert(std::move(w));
    }
    return {glosses.size(), words.size()};
}

/// Distinct spoken-text words of a split, in first-occurrence order.
inline std::vector<std::string> target_words(const CorpusSplit &split) {
    std::vector<std::string> out;
    std::unordered_set<std::string> seen;
    for (const auto &p : split)
        for (auto &w : split_whitespace(p.text))
            if (seen.insert(w).second)
                out.push_back(std::move(w));
    return out;
}

/// Appends silver pairs to the training split, dropping exact (gloss, text) duplicates.
inline CorpusSplit merge_silver(const CorpusSplit &gold_train, const std::vector<ParallelPair> &silver) {
    if (gold_train.name() != SplitName::train)
        throw ConfigError("silver pairs may only be merged into the train split");
    std::vector<ParallelPair> merged = gold_train.pairs();
    std::set<std::pair<std::string, std::string>> seen;
    std::unordered_set<std::string> ids;
    for (const auto &p : merged) {
        seen.emplace(p.gloss_string(), p.text);
        ids.insert(p.id);
    }
    for (const auto &s : silver) {
        if (s.origin == Origin::gold)
            throw FormatError("silver pair '" + s.id + "' is marked gold");
        if (!seen.emplace(s.gloss_string(), s.text).second)
            continue;
        std::string id = s.id;
        for (int k = 1; ids.count(id); ++k)
            id = s.id + "#" + std::to_string(k);
        ids.insert(id);
        merged.push_back(s);
        merged.back().id = std::move(id);
    }
    return CorpusSplit(SplitName::train, std::move(merged));
}

/// Exchanges gloss and text (text becomes the source sequence, gloss the target sentence).
inline CorpusSplit swap_sides(const CorpusSplit &split) {
    std::vector<ParallelPair> out;
    out.reserve(split.size());
    for (const auto &p : split)
        out.push_back({p.id, split_whitespace(p.text), p.gloss_string(), p.origin});
    return CorpusSplit(split.name(), std::move(out));
}

} // namespace glosstr
