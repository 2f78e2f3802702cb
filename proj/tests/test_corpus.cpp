#include <algorithm>
#include <cmath>
#include <random>

#include <gtest/gtest.h>

#include "glosstr/config.hpp"
#include "glosstr/corpus.hpp"
#include "glosstr/embeddings.hpp"
#include "glosstr/tokenizer.hpp"
#include "test_util.hpp"

using namespace glosstr;
using glosstr::testing::TempDir;
using glosstr::testing::write_file;

namespace {

CorpusSplit two_pairs() {
    return CorpusSplit(SplitName::train, {make_pair("a", "REGEN MORGEN", "morgen regnet es"),
                                          make_pair("b", "SONNE", "die sonne scheint")});
}

const char *kPhoenixHeader = "name|video|start|end|speaker|orth|translation\n";

} // namespace

TEST(Text, NormalizeCollapsesAndLowercases) {
    EXPECT_EQ(normalize_text("  Morgen   REGNET\tes. "), "morgen regnet es.");
    EXPECT_EQ(normalize_text("\xC3\x84RGER \xC3\x9C"
                             "BER"),
              "\xC3\xA4rger \xC3\xBC"
              "ber");
    EXPECT_EQ(collapse_whitespace(" A  B "), "A B");
}

TEST(Text, Utf8CharsSplitsCodePoints) {
    auto c = utf8_chars("a\xC3\xA4\xE2\x96\x81");
    ASSERT_EQ(c.size(), 3u);
    EXPECT_EQ(c[1], "\xC3\xA4");
}

TEST(Corpus, TsvParsesSingleLine) {
    TempDir dir;
    auto split = load_tsv(write_file(dir.file("a.tsv"), "REGEN MORGEN\tmorgen regnet es\n"));
    ASSERT_EQ(split.size(), 1u);
    EXPECT_EQ(split[0].gloss, (std::vector<std::string>{"REGEN", "MORGEN"}));
    EXPECT_EQ(split[0].text, "morgen regnet es");
    EXPECT_EQ(split[0].origin, Origin::gold);
}

TEST(Corpus, TsvThirdColumnSetsOrigin) {
    TempDir dir;
    auto split = load_tsv(write_file(dir.file("a.tsv"), "REGEN\tregen\tsilver_backtranslation\n"));
    EXPECT_EQ(split[0].origin, Origin::silver_backtranslation);
}

TEST(Corpus, TsvMissingTabReportsLine) {
    TempDir dir;
    write_file(dir.file("a.tsv"), "A\ta\nB b\n");
    try {
        load_tsv(dir.file("a.tsv"));
        FAIL();
    } catch (const FormatError &e) {
        EXPECT_EQ(e.line(), 2u);
    }
}

TEST(Corpus, TsvRoundTripIsIdentity) {
    TempDir dir;
    std::vector<ParallelPair> pairs{make_pair("x1", "A B", "eins zwei"),
                                    make_pair("x2", "C", "drei", Origin::silver_paraphrase),
                                    make_pair("x3", "D E F", "vier f\xC3\xBCnf.", Origin::silver_backtranslation)};
    CorpusSplit split(SplitName::train, pairs);
    save_tsv(split, dir.file("s.tsv"));
    auto back = load_tsv(dir.file("s.tsv"));
    EXPECT_EQ(back.pairs(), split.pairs());
}

TEST(Corpus, DevRejectsSilver) {
    EXPECT_THROW(CorpusSplit(SplitName::dev, {make_pair("a", "A", "a", Origin::silver_paraphrase)}), FormatError);
    EXPECT_THROW(CorpusSplit(SplitName::train, {make_pair("a", "A", "a"), make_pair("a", "B", "b")}), FormatError);
}

TEST(Corpus, PhoenixParsesColumns) {
    TempDir dir;
    write_file(dir.file("p.csv"), std::string(kPhoenixHeader) +
                                      "s1|s1/1/*.png|-1|-1|Signer01|REGEN  MORGEN|Morgen  regnet es .\n"
                                      "\n"
                                      "s2|s2/1/*.png|-1|-1|Signer02|SONNE|Die Sonne scheint .\n");
    auto split = load_phoenix(dir.file("p.csv"), SplitName::dev);
    ASSERT_EQ(split.size(), 2u);
    EXPECT_EQ(split[0].id, "s1");
    EXPECT_EQ(split[0].gloss_string(), "REGEN MORGEN");
    EXPECT_EQ(split[0].text, "morgen regnet es .");
    EXPECT_EQ(split.name(), SplitName::dev);
}

TEST(Corpus, PhoenixErrors) {
    TempDir dir;
    write_file(dir.file("h.csv"), kPhoenixHeader);
    EXPECT_THROW(load_phoenix(dir.file("h.csv"), SplitName::train), EmptyCorpusError);

    write_file(dir.file("m.csv"), "name|orth\ns|A\n");
    try {
        load_phoenix(dir.file("m.csv"), SplitName::train);
        FAIL();
    } catch (const FormatError &e) {
        EXPECT_NE(std::string(e.what()).find("translation"), std::string::npos);
    }

    write_file(dir.file("b.csv"), std::string(kPhoenixHeader) + "s1|v|-1|-1|S|A|a\ns2|v|-1|S|A|a\n");
    try {
        load_phoenix(dir.file("b.csv"), SplitName::train);
        FAIL();
    } catch (const FormatError &e) {
        EXPECT_EQ(e.line(), 3u);
    }
}

TEST(Corpus, VocabStatsHandCount) {
    EXPECT_EQ(vocab_stats(two_pairs()), (VocabStats{3, 6}));
    EXPECT_EQ(vocab_stats(CorpusSplit()), (VocabStats{0, 0}));
}

TEST(Corpus, VocabStatsOrderAndDuplicateInvariant) {
    auto base = two_pairs();
    std::vector<ParallelPair> shuffled{base[1], base[0], base[0]};
    shuffled[2].id = "c";
    EXPECT_EQ(vocab_stats(CorpusSplit(SplitName::train, shuffled)), vocab_stats(base));
}

TEST(Corpus, MergeSilverDedupAndIdempotence) {
    auto gold = two_pairs();
    std::vector<ParallelPair> silver{
        make_pair("bt:a", "REGEN", "morgen regnet es", Origin::silver_backtranslation),
        make_pair("bt:dup", "REGEN MORGEN", "morgen regnet es", Origin::silver_backtranslation),
        make_pair("a", "SONNE HEUTE", "die sonne scheint", Origin::silver_backtranslation)};
    auto merged = merge_silver(gold, silver);
    EXPECT_EQ(merged.size(), gold.size() + silver.size() - 1);
    EXPECT_EQ(merged[3].id, "a#1");
    EXPECT_EQ(merge_silver(merged, silver).pairs(), merged.pairs());
    EXPECT_EQ(merge_silver(gold, {}).pairs(), gold.pairs());
    EXPECT_THROW(merge_silver(gold, {make_pair("g", "X", "x")}), FormatError);
    EXPECT_THROW(merge_silver(CorpusSplit(SplitName::dev, {}), silver), ConfigError);
}

TEST(Corpus, SwapSidesExchangesPairForPair) {
    auto s = swap_sides(two_pairs());
    EXPECT_EQ(s[0].gloss_string(), "morgen regnet es");
    EXPECT_EQ(s[0].text, "REGEN MORGEN");
    EXPECT_EQ(s[1].id, "b");
}

// Counts adjacent symbol pairs over words with multiplicity.
TEST(Tokenizer, FirstMergeIsMostFrequentPair) {
    auto m = BpeModel::train({"aaab", "aab"}, 10);
    ASSERT_FALSE(m.merges().empty());
    std::map<std::pair<std::string, std::string>, int> counts;
    for (std::string w : {"aaab", "aab"})
        for (std::size_t i = 0; i + 1 < w.size(); ++i)
            ++counts[{w.substr(i, 1), w.substr(i + 1, 1)}];
    auto best = std::max_element(counts.begin(), counts.end(),
                                 [](const auto &a, const auto &b) { return a.second < b.second; });
    EXPECT_EQ(best->first, (std::pair<std::string, std::string>{"a", "a"}));
    EXPECT_EQ(m.merges().front(), best->first);
    EXPECT_LE(m.vocab_size(), 10u);
}

TEST(Tokenizer, BudgetErrors) {
    EXPECT_THROW(BpeModel::train({}, 100), Error);
    // two distinct characters: 4 specials + 2 forms each
    const std::size_t base = 4 + 2 * 2;
    EXPECT_THROW(BpeModel::train({"ab"}, base - 1), ConfigError);
    auto m = BpeModel::train({"abab ab"}, base);
    EXPECT_TRUE(m.merges().empty());
    EXPECT_EQ(m.vocab_size(), base);
}

TEST(Tokenizer, SpecialsAndDenseIds) {
    auto m = BpeModel::train({"hallo welt"}, 40);
    EXPECT_EQ(m.id_of(m.token(kPad)), kPad);
    EXPECT_EQ(m.id_of(m.token(kEos)), kEos);
    for (std::size_t i = 0; i < m.vocab_size(); ++i)
        EXPECT_EQ(m.id_of(m.token(static_cast<TokenId>(i))), static_cast<TokenId>(i));
    for (const auto &[a, b] : m.merges())
        EXPECT_TRUE(m.has_token(a + (BpeModel::is_continuation(b) ? b.substr(kContinuation.size()) : b)) ||
                    m.has_token(std::string(kContinuation) + a + b));
    EXPECT_EQ(m.decode({kBos, kEos}), "");
    EXPECT_THROW(m.decode({static_cast<TokenId>(m.vocab_size())}), LookupError);
}

TEST(Tokenizer, RoundTripAndFlags) {
    std::vector<std::string> corpus{"morgen regnet es", "heute regnet es nicht", "die sonne scheint morgen",
                                    "regen und sonne im wechsel", "es bleibt trocken"};
    auto m = BpeModel::train(corpus, 60);
    for (const auto &s : corpus) {
        auto seq = m.encode(s);
        EXPECT_EQ(m.decode(seq.ids), s);
        ASSERT_EQ(seq.first_subword.size(), seq.ids.size());
        ASSERT_EQ(seq.source_words.size(), seq.ids.size());
        EXPECT_EQ(static_cast<std::size_t>(std::count(seq.first_subword.begin(), seq.first_subword.end(), true)),
                  split_whitespace(s).size());
        for (std::size_t k = 0; k < seq.size(); ++k)
            EXPECT_EQ(seq.first_subword[k], k == 0 || seq.source_words[k] != seq.source_words[k - 1]);
    }
}

TEST(Tokenizer, TwoPieceWordFlags) {
    // Budget chosen so that "regnet" ends up as two pieces; the segmentation is inspected first.
    std::vector<std::string> corpus{"morgen regnet", "morgen", "morgen", "regen", "net"};
    BpeModel m;
    for (std::size_t v = 20; v < 80; ++v) {
        auto cand = BpeModel::train(corpus, v);
        if (cand.encode("regnet").size() == 2 && cand.encode("morgen").size() == 1) {
            m = cand;
            break;
        }
    }
    ASSERT_EQ(m.encode("regnet").size(), 2u);
    auto seq = m.encode("morgen regnet");
    EXPECT_EQ(seq.first_subword, (std::vector<bool>{true, true, false}));
    EXPECT_EQ(m.first_token_of("regnet"), m.encode("regnet").ids[0]);
}

TEST(Tokenizer, UnknownCharactersBecomeUnk) {
    auto m = BpeModel::train({"abc"}, 30);
    auto seq = m.encode("abz \xE2\x96\x81");
    EXPECT_EQ(seq.ids.back(), kUnk);
    EXPECT_NE(std::find(seq.ids.begin(), seq.ids.end(), kUnk), seq.ids.end());
}

TEST(Tokenizer, SharedPrefixCollides) {
    std::vector<std::string> corpus{"sonne sonnig sonne sonnig sonne"};
    auto m = BpeModel::train(corpus, 24);
    auto a = m.encode("sonne"), b = m.encode("sonnig");
    if (a.ids[0] == b.ids[0])
        EXPECT_EQ(m.first_token_of("sonne"), m.first_token_of("sonnig"));
    else
        EXPECT_NE(m.first_token_of("sonne"), m.first_token_of("sonnig"));
}

TEST(Tokenizer, DeterministicAndSerializable) {
    std::vector<std::string> corpus{"das wetter morgen", "WETTER MORGEN", "regen am abend", "REGEN ABEND"};
    auto a = BpeModel::train(corpus, 70), b = BpeModel::train(corpus, 70);
    EXPECT_EQ(a.merges(), b.merges());
    TempDir dir;
    a.save(dir.file("bpe.txt"));
    auto c = BpeModel::load(dir.file("bpe.txt"));
    EXPECT_EQ(c.checksum(), a.checksum());
    EXPECT_EQ(c.merges(), a.merges());
    for (const auto &s : corpus)
        EXPECT_EQ(c.encode(s).ids, a.encode(s).ids);
}

TEST(Embeddings, LoadVectors) {
    TempDir dir;
    auto t = load_vectors(write_file(dir.file("v.txt"), "2 3\nsonne 1 0 0\nregen 0 1 0.5\nsonne 9 9 9\n"));
    EXPECT_EQ(t.size(), 2u);
    EXPECT_EQ(t.dim(), 3u);
    EXPECT_DOUBLE_EQ(t.vector("regen")[2], 0.5);

    auto dup = load_vectors(write_file(dir.file("d.txt"), "3 2\nsonne 1 0\nsonne 0 1\nregen 0 1\n"));
    EXPECT_EQ(dup.vector("sonne")[0], 1.0);

    write_file(dir.file("bad.txt"), "2 3\nsonne 1 0 0\nregen 0 1\n");
    try {
        load_vectors(dir.file("bad.txt"));
        FAIL();
    } catch (const FormatError &e) {
        EXPECT_EQ(e.line(), 3u);
    }
    EXPECT_THROW(load_vectors(write_file(dir.file("h.txt"), "x\n")), FormatError);
}

TEST(Embeddings, SaveLoadRoundTrip) {
    TempDir dir;
    WordEmbeddingTable t(3);
    t.add("sonne", {0.1, -2.5, 1.0 / 3.0});
    t.add("regen", {1e-9, 0, 7});
    save_vectors(t, dir.file("rt.txt"));
    auto back = load_vectors(dir.file("rt.txt"));
    ASSERT_EQ(back.size(), 2u);
    EXPECT_EQ(back.vector("sonne"), t.vector("sonne"));
    EXPECT_EQ(back.vector("regen"), t.vector("regen"));
}

TEST(Embeddings, CosineExamples) {
    EXPECT_NEAR(cosine({1, 0}, {1, 0}), 1.0, 1e-12);
    EXPECT_NEAR(cosine({1, 0}, {0, 1}), 0.0, 1e-12);
    EXPECT_NEAR(cosine({1, 0}, {0.8, 0.6}), 0.8, 1e-12);
    EXPECT_THROW(cosine({0, 0}, {1, 0}), DomainError);
    WordEmbeddingTable t(2);
    t.add("a", {1, 0});
    EXPECT_THROW(cosine(t, "a", "b"), LookupError);
}

TEST(Embeddings, CosineSymmetricAndScaleInvariant) {
    std::mt19937_64 rng(3);
    std::normal_distribution<double> g;
    for (int trial = 0; trial < 100; ++trial) {
        std::vector<double> a(7), b(7);
        for (auto &x : a)
            x = g(rng);
        for (auto &x : b)
            x = g(rng);
        auto scaled = a;
        for (auto &x : scaled)
            x *= 3.7;
        EXPECT_NEAR(cosine(a, b), cosine(b, a), 1e-12);
        EXPECT_NEAR(cosine(scaled, b), cosine(a, b), 1e-6);
        EXPECT_NEAR(cosine(a, a), 1.0, 1e-6);
    }
}

TEST(Embeddings, IndexHandExample) {
    WordEmbeddingTable t(2);
    t.add("sonne", {1, 0});
    t.add("sonnig", {0.8, 0.6});
    t.add("regen", {0, 1});
    auto idx = build_similarity_index(t, {"sonne", "sonnig", "regen"}, 0.6);
    ASSERT_EQ(idx.neighbors(0).size(), 1u);
    EXPECT_EQ(idx.neighbors(0)[0].word, 1u);
    EXPECT_NEAR(idx.neighbors(0)[0].similarity, 0.8, 1e-12);
    // cos(regen, sonnig) is exactly 0.6, which the >= rule keeps.
    ASSERT_EQ(idx.neighbors(2).size(), 1u);
    EXPECT_EQ(idx.neighbors(2)[0].word, 1u);
    EXPECT_NEAR(idx.neighbors(2)[0].similarity, 0.6, 1e-12);
    auto above = build_similarity_index(t, {"sonne", "sonnig", "regen"}, 0.61);
    EXPECT_TRUE(above.neighbors(2).empty());
    auto strict = build_similarity_index(t, {"sonne", "sonnig", "regen"}, 1.0);
    for (std::size_t i = 0; i < 3; ++i)
        EXPECT_TRUE(strict.neighbors(i).empty());
    EXPECT_THROW(build_similarity_index(t, {}, 0.6), DomainError);
}

TEST(Embeddings, IndexSymmetricRangeAndNested) {
    std::mt19937_64 rng(9);
    std::normal_distribution<double> g;
    WordEmbeddingTable t(4);
    std::vector<std::string> words;
    for (int i = 0; i < 60; ++i) {
        words.push_back("w" + std::to_string(i));
        t.add(words.back(), {g(rng), g(rng), g(rng), g(rng)});
    }
    words.push_back("missing");
    auto lo = build_similarity_index(t, words, 0.5), hi = build_similarity_index(t, words, 0.8);
    for (std::size_t i = 0; i < words.size(); ++i) {
        for (const auto &n : lo.neighbors(i)) {
            EXPECT_GE(n.similarity, 0.5);
            EXPECT_LE(n.similarity, 1.0);
            EXPECT_NE(n.word, i);
            const auto &back = lo.neighbors(n.word);
            EXPECT_NE(std::find(back.begin(), back.end(), Neighbor{i, n.similarity}), back.end());
        }
        for (const auto &n : hi.neighbors(i)) {
            const auto &l = lo.neighbors(i);
            EXPECT_NE(std::find(l.begin(), l.end(), n), l.end());
        }
        // brute force: all and only pairs at or above the threshold
        if (i + 1 < words.size())
            for (std::size_t j = 0; j + 1 < words.size(); ++j) {
                if (j == i)
                    continue;
                const bool expect = cosine(t, words[i], words[j]) >= 0.5;
                const auto &l = lo.neighbors(i);
                const bool found = std::any_of(l.begin(), l.end(), [&](const Neighbor &n) { return n.word == j; });
                EXPECT_EQ(found, expect);
            }
    }
    EXPECT_TRUE(lo.neighbors(words.size() - 1).empty());
}

TEST(Embeddings, IndexSerializationChecksVocabulary) {
    WordEmbeddingTable t(2);
    t.add("sonne", {1, 0});
    t.add("sonnig", {0.8, 0.6});
    t.add("regen", {0, 1});
    std::vector<std::string> words{"sonne", "sonnig", "regen"};
    auto idx = build_similarity_index(t, words, 0.6);
    TempDir dir;
    idx.save(dir.file("idx.tsv"));
    auto back = SimilarityIndex::load(dir.file("idx.tsv"), words);
    EXPECT_EQ(back.lambda(), 0.6);
    for (std::size_t i = 0; i < 3; ++i)
        EXPECT_EQ(back.neighbors(i), idx.neighbors(i));
    EXPECT_THROW(SimilarityIndex::load(dir.file("idx.tsv"), {"sonne", "regen", "sonnig"}), FormatError);
}

TEST(Config, ParsesKeysAndRejectsUnknown) {
    RunConfig c;
    apply_config_text(c, "# comment\nepochs = 3\nsmoothing = one_hot\nlambda=0.7 # trailing\nlora = true\n");
    EXPECT_EQ(c.train.epochs, 3u);
    EXPECT_EQ(c.train.smoothing.mode, SmoothingMode::one_hot);
    EXPECT_DOUBLE_EQ(c.train.smoothing.lambda, 0.7);
    EXPECT_TRUE(c.train.lora);
    try {
        apply_config_text(c, "epoch = 3\n");
        FAIL();
    } catch (const ConfigError &e) {
        std::string msg = e.what();
        EXPECT_NE(msg.find("epoch"), std::string::npos);
        EXPECT_NE(msg.find("batch_tokens"), std::string::npos);
    }
    EXPECT_THROW(apply_config_text(c, "epochs = many\n"), ConfigError);
    EXPECT_THROW(apply_config_text(c, "just words\n"), ConfigError);
}

TEST(Config, TextRoundTrip) {
    RunConfig c;
    c.train.learning_rate = 0.00123;
    c.model.architecture = Architecture::decoder_only;
    c.train_path = "data/train.tsv";
    RunConfig d;
    apply_config_text(d, to_config_text(c));
    EXPECT_EQ(to_json(d), to_json(c));
}
