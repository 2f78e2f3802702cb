#pragma once

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "glosstr/errors.hpp"
#include "glosstr/text.hpp"

namespace glosstr {

/// Word vectors of a common dimension, keyed by surface form.
class WordEmbeddingTable {
  public:
    explicit WordEmbeddingTable(std::size_t dim = 0) : dim_(dim) {}

    std::size_t dim() const { return dim_; }
    std::size_t size() const { return words_.size(); }
    bool contains(const std::string &w) const { return index_.count(w) != 0; }

    /// Inserts a vector; returns false (and keeps the old one) when the word exists.
    bool add(const std::string &word, std::vector<double> v) {
        if (v.size() != dim_)
            throw DomainError("vector for '" + word + "' has dim " + std::to_string(v.size()) + ", expected " +
                              std::to_string(dim_));
        if (!index_.emplace(word, words_.size()).second)
            return false;
        words_.push_back(word);
        vectors_.push_back(std::move(v));
        return true;
    }

    const std::vector<double> &vector(const std::string &w) const {
        auto it = index_.find(w);
        if (it == index_.end())
            throw LookupError("no embedding for word '" + w + "'");
        return vectors_[it->second];
    }
    const std::vector<std::string> &words() const { return words_; }

  private:
    std::size_t dim_;
    std::vector<std::string> words_;
    std::vector<std::vector<double>> vectors_;
    std::unordered_map<std::string, std::size_t> index_;
};

/// Reads the text vector format: header "count dim", then "word f1 ... f_dim" per line.
inline WordEmbeddingTable load_vectors(const std::string &path) {
    std::ifstream in(path, std::ios::binary);
    if (!in)
        throw FormatError("cannot open vector file: " + path);
    std::string line;
    if (!std::getline(in, line))
        throw FormatError("empty vector file: " + path, 1);
    auto header = split_whitespace(line);
    std::size_t count = 0, dim = 0;
    try {
        if (header.size() != 2)
            throw std::invalid_argument("header");
        count = std::stoull(header[0]);
        dim = std::stoull(header[1]);
    } catch (const std::exception &) {
        throw FormatError("vector file header must be 'count dim'", 1);
    }
    if (dim == 0)
        throw FormatError("vector dimension must be positive", 1);

    WordEmbeddingTable table(dim);
    std::size_t lineno = 1, rows = 0;
    while (rows < count && std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r')
            line.pop_back();
        auto fields = split(collapse_whitespace(line), ' ');
        if (fields.size() == 1 && fields[0].empty())
            continue;
        if (fields.size() != dim + 1)
            throw FormatError("expected " + std::to_string(dim) + " floats, found " + std::to_string(fields.size() - 1),
                              lineno);
        std::vector<double> v(dim);
        for (std::size_t k = 0; k < dim; ++k) {
            const auto &f = fields[k + 1];
            auto [ptr, ec] = std::from_chars(f.data(), f.data() + f.size(), v[k]);
            if (ec != std::errc() || ptr != f.data() + f.size())
                throw FormatError("bad float '" + f + "'", lineno);
        }
        table.add(fields[0], std::move(v));
        ++rows;
    }
    return table;
}

/// Writes the format read by load_vectors, at full double precision.
inline void save_vectors(const WordEmbeddingTable &table, const std::string &path) {
    std::ofstream out(path, std::ios::binary);
    if (!out)
        throw FormatError("cannot write vector file: " + path);
    out << std::setprecision(17) << table.size() << ' ' << table.dim() << '\n';
    for (const auto &w : table.words()) {
        out << w;
        for (double x : table.vector(w))
            out << ' ' << x;
        out << '\n';
    }
}

inline double cosine(const std::vector<double> &a, const std::vector<double> &b) {
    if (a.size() != b.size())
        throw DomainError("cosine of vectors with different dimensions");
    double dot = 0, na = 0, nb = 0;
    for (std::size_t k = 0; k < a.size(); ++k) {
        dot += a[k] * b[k];
        na += a[k] * a[k];
        nb += b[k] * b[k];
    }
    if (na == 0 || nb == 0)
        throw DomainError("cosine similarity of a zero vector");
    return std::clamp(dot / (std::sqrt(na) * std::sqrt(nb)), -1.0, 1.0);
}

/// Cosine similarity of two words' embeddings.
inline double cosine(const WordEmbeddingTable &table, const std::string &wi, const std::string &wj) {
    return cosine(table.vector(wi), table.vector(wj));
}

struct Neighbor {
    std::size_t word; ///< index into SimilarityIndex::target_words()
    double similarity;
    bool operator==(const Neighbor &) const = default;
};

inline std::uint64_t vocabulary_checksum(const std::vector<std::string> &words) {
    Fnv1a h;
    for (const auto &w : words) {
        h.update(w);
        h.update("\n");
    }
    return h.digest();
}

/// Thresholded pairwise cosine neighbors over the target vocabulary (self-pairs excluded).
class SimilarityIndex {
  public:
    static constexpr std::string_view kMagic = "# glosstr-simindex v1";

    SimilarityIndex() = default;
    SimilarityIndex(std::vector<std::string> target_words, double lambda)
        : target_words_(std::move(target_words)), neighbors_(target_words_.size()), lambda_(lambda) {
        if (target_words_.empty())
            throw DomainError("empty target vocabulary");
        if (!(lambda > 0.0 && lambda <= 1.0))
            throw DomainError("lambda must lie in (0, 1]");
        for (std::size_t i = 0; i < target_words_.size(); ++i)
            if (!position_.emplace(target_words_[i], i).second)
                throw DomainError("duplicate target word '" + target_words_[i] + "'");
    }

    /// An index with the given vocabulary and no neighbors at all.
    static SimilarityIndex empty(std::vector<std::string> target_words, double lambda = 1.0) {
        return SimilarityIndex(std::move(target_words), lambda);
    }

    const std::vector<std::string> &target_words() const { return target_words_; }
    std::size_t size() const { return target_words_.size(); }
    double lambda() const { return lambda_; }
    const std::vector<Neighbor> &neighbors(std::size_t i) const { return neighbors_.at(i); }
    std::size_t position(const std::string &w) const {
        auto it = position_.find(w);
        if (it == position_.end())
            throw LookupError("'" + w + "' is not in the target vocabulary");
        return it->second;
    }
    bool contains(const std::string &w) const { return position_.count(w) != 0; }
    std::uint64_t checksum() const { return vocabulary_checksum(target_words_); }

    /// Adds the symmetric pair (i, j). Used by the builder and by the loader.
    void link(std::size_t i, std::size_t j, double sim) {
        if (i == j)
            throw DomainError("self-pairs are not stored");
        neighbors_.at(i).push_back({j, sim});
        neighbors_.at(j).push_back({i, sim});
    }
    void sort_neighbors() {
        for (auto &row : neighbors_)
            std::sort(row.begin(), row.end(), [](const Neighbor &a, const Neighbor &b) { return a.word < b.word; });
    }

    void save(const std::string &path) const {
        std::ofstream out(path, std::ios::binary);
        if (!out)
            throw FormatError("cannot write similarity index: " + path);
        out << kMagic << "\tlambda=" << std::setprecision(17) << lambda_ << "\tvocab_size=" << target_words_.size()
            << "\tvocab_checksum=" << hex64(checksum()) << '\n';
        for (std::size_t i = 0; i < neighbors_.size(); ++i)
            for (const auto &n : neighbors_[i])
                if (i < n.word)
                    out << target_words_[i] << '\t' << target_words_[n.word] << '\t' << n.similarity << '\n';
    }

    /// Loads triples saved by save(); the caller supplies the target vocabulary, verified by checksum.
    static SimilarityIndex load(const std::string &path, std::vector<std::string> target_words) {
        auto lines = read_lines(path);
        if (lines.empty() || lines[0].rfind(kMagic, 0) != 0)
            throw FormatError("not a similarity index file: " + path, 1);
        double lambda = 0;
        std::string checksum;
        for (const auto &field : split(lines[0], '\t')) {
            if (field.rfind("lambda=", 0) == 0)
                lambda = std::stod(field.substr(7));
            else if (field.rfind("vocab_checksum=", 0) == 0)
                checksum = field.substr(15);
        }
        SimilarityIndex index(std::move(target_words), lambda);
        if (checksum != hex64(index.checksum()))
            throw FormatError("similarity index was built for a different target vocabulary", 1);
        for (std::size_t n = 1; n < lines.size(); ++n) {
            if (lines[n].empty())
                continue;
            auto f = split(lines[n], '\t');
            if (f.size() != 3)
                throw FormatError("expected word_i TAB word_j TAB similarity", n + 1);
            double sim = 0;
            try {
                sim = std::stod(f[2]);
            } catch (const std::exception &) {
                throw FormatError("bad similarity '" + f[2] + "'", n + 1);
            }
            index.link(index.position(f[0]), index.position(f[1]), sim);
        }
        index.sort_neighbors();
        return index;
    }

  private:
    std::vector<std::string> target_words_;
    std::vector<std::vector<Neighbor>> neighbors_;
    std::unordered_map<std::string, std::size_t> position_;
    double lambda_ = 1.0;
};

/// Exact pairwise construction. Target words without a (nonzero) vector get no neighbors.
inline SimilarityIndex build_similarity_index(const WordEmbeddingTable &table,
                                              const std::vector<std::string> &target_words, double lambda) {
    SimilarityIndex index(target_words, lambda);
    const std::size_t n = target_words.size();
    std::vector<const std::vector<double> *> vec(n, nullptr);
    std::vector<double> norm(n, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        if (!table.contains(target_words[i]))
            continue;
        const auto &v = table.vector(target_words[i]);
        double s = 0;
        for (double x : v)
            s += x * x;
        if (s > 0) {
            vec[i] = &v;
            norm[i] = std::sqrt(s);
        }
    }
    for (std::size_t i = 0; i < n; ++i) {
        if (!vec[i])
            continue;
        for (std::size_t j = i + 1; j < n; ++j) {
            if (!vec[j])
                continue;
            double dot = 0;
            const auto &a = *vec[i];
            const auto &b = *vec[j];
            for (std::size_t k = 0; k < a.size(); ++k)
                dot += a[k] * b[k];
            double sim = std::clamp(dot / (norm[i] * norm[j]), -1.0, 1.0);
            if (sim >= lambda)
                index.link(i, j, sim);
        }
    }
    index.sort_neighbors();
    return index;
}

} // namespace glosstr
