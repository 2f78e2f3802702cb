#include <cmath>
#include <functional>
#include <algorithm>
#include <map>
#include <random>

#include <gtest/gtest.h>

#include "glosstr/metrics.hpp"
#include "oracles.hpp"

using namespace glosstr;

namespace {

using namespace glosstr::testing;

Corpus random_corpus(std::mt19937_64 &rng, std::size_t n, std::size_t max_len) {
    static const Gram vocab{"a", "b", "c", "d", "e", "ab", "ba", "cde"};
    std::uniform_int_distribution<std::size_t> len(1, max_len), w(0, vocab.size() - 1);
    Corpus out;
    for (std::size_t i = 0; i < n; ++i) {
        Gram g;
        for (std::size_t k = len(rng); k > 0; --k)
            g.push_back(vocab[w(rng)]);
        out.push_back(join(g));
    }
    return out;
}

} // namespace

TEST(Bleu, HandExample) {
    Corpus h{"regen am montag"}, r{"regen am dienstag"};
    EXPECT_NEAR(bleu_n(h, r, 1), 66.67, 0.01);
    EXPECT_NEAR(bleu_n(h, r, 2), 57.74, 0.01);
    EXPECT_EQ(bleu_n(h, r, 3), 0.0);
}

TEST(Bleu, IdenticalIsExactly100) {
    Corpus c{"es regnet heute im ganzen land", "morgen scheint die sonne wieder"};
    for (std::size_t n = 1; n <= 4; ++n)
        EXPECT_EQ(bleu_n(c, c, n), 100.0);
    EXPECT_EQ(bleu_n({""}, {"regen"}, 1), 0.0);
}

TEST(Bleu, Errors) {
    EXPECT_THROW(bleu_n({}, {}, 1), DomainError);
    EXPECT_THROW(bleu_n({"a"}, {"a", "b"}, 1), DomainError);
    EXPECT_THROW(bleu_n({"a"}, {"a"}, 5), DomainError);
}

TEST(Metrics, MatchOracleOnMicroCorpora) {
    for (const auto &[h, r] : micro_corpora()) {
        for (std::size_t n = 1; n <= 4; ++n)
            EXPECT_NEAR(bleu_n(h, r, n), oracle_bleu(h, r, n), 1e-6);
        EXPECT_NEAR(rouge_l(h, r), oracle_rouge(h, r), 1e-6);
        EXPECT_NEAR(chrf_pp(h, r), oracle_chrf(h, r), 1e-6);
    }
}

TEST(Metrics, MatchOracleOnRandomCorpora) {
    std::mt19937_64 rng(77);
    for (int trial = 0; trial < 30; ++trial) {
        auto h = random_corpus(rng, 4, 9), r = random_corpus(rng, 4, 9);
        for (std::size_t n = 1; n <= 4; ++n)
            EXPECT_NEAR(bleu_n(h, r, n), oracle_bleu(h, r, n), 1e-6);
        EXPECT_NEAR(rouge_l(h, r), oracle_rouge(h, r), 1e-6);
        EXPECT_NEAR(chrf_pp(h, r), oracle_chrf(h, r), 1e-6);
    }
}

TEST(Metrics, BleuPermutationInvariant) {
    std::mt19937_64 rng(4);
    auto h = random_corpus(rng, 8, 7), r = random_corpus(rng, 8, 7);
    auto h2 = h, r2 = r;
    std::reverse(h2.begin(), h2.end());
    std::reverse(r2.begin(), r2.end());
    for (std::size_t n = 1; n <= 4; ++n)
        EXPECT_DOUBLE_EQ(bleu_n(h, r, n), bleu_n(h2, r2, n));
}

TEST(Metrics, BleuOrderedWhenPrecisionsAre) {
    std::mt19937_64 rng(5);
    int premise_held = 0;
    for (int trial = 0; trial < 60; ++trial) {
        auto h = random_corpus(rng, 5, 10), r = random_corpus(rng, 5, 10);
        std::vector<double> prec;
        for (std::size_t k = 1; k <= 4; ++k) {
            std::size_t m = 0, t = 0;
            for (std::size_t i = 0; i < h.size(); ++i) {
                auto hb = bag(split_whitespace(h[i]), k);
                m += overlap(hb, bag(split_whitespace(r[i]), k));
                t += total(hb);
            }
            prec.push_back(t ? double(m) / double(t) : 0);
        }
        if (!std::is_sorted(prec.rbegin(), prec.rend()))
            continue;
        ++premise_held;
        for (std::size_t n = 2; n <= 4; ++n)
            EXPECT_LE(bleu_n(h, r, n), bleu_n(h, r, n - 1) + 1e-9);
    }
    EXPECT_GT(premise_held, 10);
}

TEST(Rouge, HandAndTrivialCases) {
    EXPECT_EQ(lcs_length(split_whitespace("a b c d"), split_whitespace("a c d")), 3u);
    const double p = 3.0 / 4, r = 1.0, b2 = 1.44;
    EXPECT_NEAR(rouge_l({"a b c d"}, {"a c d"}), 100 * (1 + b2) * p * r / (r + b2 * p), 1e-9);
    EXPECT_EQ(rouge_l({"x y"}, {"a b"}), 0.0);
    Corpus c{"eins zwei", "drei"};
    EXPECT_EQ(rouge_l(c, c), 100.0);
}

TEST(Chrf, TrivialAndBoundedCases) {
    Corpus c{"die sonne scheint", "m\xC3\xB6glicherweise nebel"};
    EXPECT_EQ(chrf_pp(c, c), 100.0);
    EXPECT_EQ(chrf_pp({""}, {"regen"}), 0.0);
    // one shared character unigram: char-1 P = 1, R = 1/25; seven orders present (no word bigrams)
    const double r = 1.0 / 25, one = 5 * 1.0 * r / (4 * 1.0 + r);
    const double got = chrf_pp({"a"}, {"abcdefghijklmnopqrstuvwxy"});
    EXPECT_NEAR(got, 100 * one / 7, 1e-9);
    EXPECT_LT(got, 2.0);
}

TEST(LengthRatio, PaperTotals) {
    auto lr = length_ratio_from_totals(8296, 8458);
    EXPECT_NEAR(lr.ratio, 0.9808, 1e-4);
    EXPECT_EQ(length_ratio({"a b"}, {"c d"}).ratio, 1.0);
    EXPECT_EQ(length_ratio({}, {"c d"}).ratio, 0.0);
}

TEST(EvalReport, ConsistentFields) {
    Corpus h{"es regnet im norden", "sonne"}, r{"es regnet im s\xC3\xBC"
                                                  "den",
                                                  "die sonne scheint"};
    auto rep = evaluate(h, r);
    EXPECT_DOUBLE_EQ(rep.bleu2, bleu_n(h, r, 2));
    EXPECT_EQ(rep.out_tokens, 5u);
    EXPECT_EQ(rep.ref_tokens, 7u);
    EXPECT_DOUBLE_EQ(rep.length_ratio, 5.0 / 7.0);
    for (double v : {rep.bleu1, rep.bleu2, rep.bleu3, rep.bleu4, rep.rouge_l, rep.chrf_pp}) {
        EXPECT_GE(v, 0.0);
        EXPECT_LE(v, 100.0);
    }
    EXPECT_NE(rep.to_text().find("bleu4 "), std::string::npos);
    EXPECT_EQ(rep.to_json().at("out_tokens"), 5);
}

TEST(Buckets, WordFrequencyHandTable) {
    CorpusSplit train(SplitName::train, {make_pair("1", "A", "regen regen sonne"), make_pair("2", "B", "regen wind")});
    // frequencies: regen 3 (2-4), sonne 1, wind 1, others 0
    Corpus h{"regen sonne schnee", "wind wind", "hagel"};
    Corpus r{"regen regen sonne", "wind", "nebel"};
    auto t = word_fmeasure_buckets(h, r, train);
    ASSERT_EQ(t.size(), 7u);
    // bucket "1": refs sonne, wind = 2 items; hyp sonne, wind, wind = 3; matches 2
    EXPECT_EQ(t[1].items, 2u);
    EXPECT_EQ(t[1].hyp_count, 3u);
    EXPECT_EQ(t[1].matches, 2u);
    EXPECT_NEAR(t[1].fmeasure, 2 * (2.0 / 3) * 1.0 / (2.0 / 3 + 1.0), 1e-12);
    // bucket "2-4": regen x2 in refs, x1 in hyps
    EXPECT_EQ(t[2].items, 2u);
    EXPECT_EQ(t[2].matches, 1u);
    EXPECT_NEAR(t[2].recall, 0.5, 1e-12);
    // bucket "0": nebel in refs, schnee + hagel in hyps, nothing matches
    EXPECT_EQ(t[0].items, 1u);
    EXPECT_EQ(t[0].hyp_count, 2u);
    EXPECT_EQ(t[0].recall, 0.0);

    auto same = word_fmeasure_buckets(r, r, train);
    for (const auto &b : same)
        if (b.items)
            EXPECT_EQ(b.fmeasure, 1.0);
}

TEST(Buckets, SentenceLengthTable) {
    std::string ten = "a b c d e f g h i j", three = "x y z";
    Corpus r{three, ten, three};
    Corpus h{three, "a b c d e", ""};
    auto t = sentence_fmeasure_by_length(h, r);
    ASSERT_EQ(t.size(), 4u);
    EXPECT_EQ(t[0].items, 2u);
    EXPECT_NEAR(t[0].fmeasure, 0.5, 1e-12);
    const double p = 1.0, rec = 0.5;
    EXPECT_NEAR(t[1].fmeasure, 2 * p * rec / (p + rec), 1e-12);
    EXPECT_EQ(t[2].items, 0u);
    auto same = sentence_fmeasure_by_length(r, r);
    EXPECT_EQ(same[0].fmeasure, 1.0);
    EXPECT_EQ(same[1].fmeasure, 1.0);
    auto empty = sentence_fmeasure_by_length({"", ""}, {three, ten});
    EXPECT_EQ(empty[0].fmeasure, 0.0);
    EXPECT_NE(bucket_table_tsv(t).find("10-19\t1\t"), std::string::npos);
}
