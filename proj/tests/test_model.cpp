#include <cmath>
#include <random>

#include <gtest/gtest.h>

#include "glosstr/checkpoint.hpp"
#include "glosstr/decode.hpp"
#include "glosstr/gradcheck.hpp"
#include "glosstr/model.hpp"
#include "test_util.hpp"

using namespace glosstr;

namespace {

ModelConfig tiny_config(Architecture a = Architecture::encoder_decoder) {
    ModelConfig c;
    c.architecture = a;
    c.dim = 8;
    c.heads = 2;
    c.encoder_layers = 1;
    c.decoder_layers = 1;
    c.ffn_dim = 12;
    c.max_positions = 24;
    c.vocab_size = 20;
    c.dropout = 0.0;
    c.seed = 3;
    return c;
}

std::vector<TokenId> random_ids(std::mt19937_64 &rng, std::size_t n, TokenId vocab) {
    std::uniform_int_distribution<TokenId> d(kNumSpecials, vocab - 1);
    std::vector<TokenId> out(n);
    for (auto &x : out)
        x = d(rng);
    return out;
}

Example random_example(std::mt19937_64 &rng, TokenId vocab, std::size_t src_len, std::size_t tgt_len) {
    Example ex;
    ex.src = random_ids(rng, src_len, vocab);
    ex.src.push_back(kEos);
    auto body = random_ids(rng, tgt_len, vocab);
    ex.tgt_in.push_back(kBos);
    ex.tgt_in.insert(ex.tgt_in.end(), body.begin(), body.end());
    ex.tgt_out = body;
    ex.tgt_out.push_back(kEos);
    for (std::size_t i = 0; i < ex.tgt_out.size(); ++i)
        ex.first_subword.push_back(i % 2 == 0 && i + 1 < ex.tgt_out.size());
    return ex;
}

// SALS-like plan over target words whose first tokens are 4..9.
SoftLabelPlan tiny_plan(std::size_t vocab) {
    SimilarityIndex idx({"a", "b", "c", "d", "e", "f"}, 0.6);
    idx.link(0, 1, 0.8);
    idx.link(2, 3, 0.65);
    idx.link(0, 4, 0.7);
    std::vector<TokenId> observed;
    for (TokenId t = kEos; t < static_cast<TokenId>(vocab); ++t)
        if (t != kUnk)
            observed.push_back(t);
    return SoftLabelPlan::build(idx, {4, 5, 6, 7, 8, 9}, observed, vocab, SmoothingConfig{});
}

std::vector<LabelledExample> labelled_batch(std::mt19937_64 &rng, const SoftLabelPlan &plan, TokenId vocab, int n) {
    std::vector<LabelledExample> batch;
    for (int i = 0; i < n; ++i) {
        LabelledExample le;
        le.example = random_example(rng, vocab, 3 + i, 4 + i % 2);
        for (std::size_t t = 0; t < le.example.tgt_out.size(); ++t)
            le.labels.push_back(plan.row_for_position(le.example.tgt_out[t], le.example.first_subword[t]));
        batch.push_back(std::move(le));
    }
    return batch;
}

template <class Model>
void expect_same(const Mat<typename Model::Scalar> &a, const Mat<typename Model::Scalar> &b, double tol) {
    ASSERT_EQ(a.rows(), b.rows());
    ASSERT_EQ(a.cols(), b.cols());
    EXPECT_LE((a - b).cwiseAbs().maxCoeff(), tol);
}

template <class Model>
class ModelTest : public ::testing::Test {};

using Models = ::testing::Types<Seq2SeqModel<double>, DecoderOnlyModel<double>>;
TYPED_TEST_SUITE(ModelTest, Models);

template <class Model>
Model make_tiny() {
    return Model(tiny_config(Model::kArchitecture));
}

} // namespace

TYPED_TEST(ModelTest, LogitShape) {
    auto model = make_tiny<TypeParam>();
    std::mt19937_64 rng(1);
    auto ex = random_example(rng, 20, 4, 6);
    auto logits = model.logits(ex.src, ex.tgt_in);
    EXPECT_EQ(logits.rows(), 7);
    EXPECT_EQ(logits.cols(), 20);
}

TYPED_TEST(ModelTest, Causality) {
    auto model = make_tiny<TypeParam>();
    std::mt19937_64 rng(2);
    auto ex = random_example(rng, 20, 5, 7);
    auto base = model.logits(ex.src, ex.tgt_in);
    for (std::size_t t = 1; t < ex.tgt_in.size(); ++t) {
        auto changed = ex.tgt_in;
        changed[t] = changed[t] == 10 ? 11 : 10;
        auto logits = model.logits(ex.src, changed);
        for (Index r = 0; r < static_cast<Index>(t); ++r)
            EXPECT_EQ(logits.row(r), base.row(r)) << "position " << t << " leaked into row " << r;
        EXPECT_GT((logits.row(t) - base.row(t)).cwiseAbs().maxCoeff(), 0.0);
    }
}

TYPED_TEST(ModelTest, SourcePaddingIsInert) {
    auto model = make_tiny<TypeParam>();
    std::mt19937_64 rng(3);
    auto ex = random_example(rng, 20, 5, 4);
    auto base = model.logits(ex.src, ex.tgt_in);
    auto padded = ex.src;
    padded.insert(padded.end(), 3, kPad);
    expect_same<TypeParam>(model.logits(padded, ex.tgt_in), base, 1e-5);
}

TYPED_TEST(ModelTest, TargetPaddingIsInert) {
    auto model = make_tiny<TypeParam>();
    std::mt19937_64 rng(4);
    auto ex = random_example(rng, 20, 5, 4);
    auto base = model.logits(ex.src, ex.tgt_in);
    auto padded = ex.tgt_in;
    padded.insert(padded.end(), 2, kPad);
    auto logits = model.logits(ex.src, padded);
    expect_same<TypeParam>(Mat<double>(logits.topRows(base.rows())), base, 1e-12);
}

TYPED_TEST(ModelTest, LengthAndIdOverflow) {
    auto model = make_tiny<TypeParam>();
    std::vector<TokenId> ok{5, kEos};
    EXPECT_THROW(model.logits(std::vector<TokenId>(30, 5), std::vector<TokenId>{kBos}), DomainError);
    EXPECT_THROW(model.logits(ok, std::vector<TokenId>{kBos, 20}), DomainError);
}

TYPED_TEST(ModelTest, GradientMatchesFiniteDifferences) {
    auto model = make_tiny<TypeParam>();
    ASSERT_LE(model.params().count(true), 20000u);
    std::mt19937_64 rng(5);
    auto plan = tiny_plan(20);
    auto batch = labelled_batch(rng, plan, 20, 2);
    auto report = grad_check(model, batch, 1e-5);
    EXPECT_EQ(report.checked, model.params().count(true));
    EXPECT_LT(report.max_relative_error, 1e-4) << report.worst_parameter << "[" << report.worst_index << "]";
}

TYPED_TEST(ModelTest, IncrementalStepsMatchFullForward) {
    auto model = make_tiny<TypeParam>();
    std::mt19937_64 rng(6);
    auto ex = random_example(rng, 20, 4, 5);
    auto full = model.logits(ex.src, ex.tgt_in);
    auto state = model.start(ex.src);
    for (std::size_t t = 0; t < ex.tgt_in.size(); ++t) {
        auto row = model.step(state, ex.tgt_in[t]);
        EXPECT_LE((row.row(0) - full.row(static_cast<Index>(t))).cwiseAbs().maxCoeff(), 1e-10);
    }
}

TYPED_TEST(ModelTest, AllPadTargetHasZeroLossAndGradient) {
    auto model = make_tiny<TypeParam>();
    Example ex;
    ex.src = {5, 6, kEos};
    ex.tgt_in = {kBos, kPad, kPad};
    ex.tgt_out = {kPad, kPad, kPad};
    ex.first_subword = {false, false, false};
    std::vector<LabelRow> rows(3, one_hot_row(kPad));
    auto grads = model.params().zeros_like();
    EXPECT_EQ(model.loss_and_grad(ex, rows, &grads, 1.0, nullptr), 0.0);
    for (const auto &g : grads)
        EXPECT_EQ(g.cwiseAbs().maxCoeff(), 0.0);
}

TYPED_TEST(ModelTest, OneHotGradientEqualsCrossEntropyGradient) {
    auto model = make_tiny<TypeParam>();
    std::mt19937_64 rng(7);
    auto ex = random_example(rng, 20, 4, 3);
    std::vector<LabelRow> rows;
    for (TokenId t : ex.tgt_out)
        rows.push_back(one_hot_row(static_cast<std::size_t>(t)));
    auto logits = model.logits(ex.src, ex.tgt_in);
    // conventional cross entropy on the logits: softmax - onehot
    double ce = 0;
    Mat<double> dlogits(logits.rows(), logits.cols());
    for (Index r = 0; r < logits.rows(); ++r) {
        const double mx = logits.row(r).maxCoeff();
        const double lz = mx + std::log((logits.row(r).array() - mx).exp().sum());
        ce -= logits(r, ex.tgt_out[r]) - lz;
        dlogits.row(r) = (logits.row(r).array() - lz).exp();
        dlogits(r, ex.tgt_out[r]) -= 1.0;
    }
    auto grads = model.params().zeros_like();
    EXPECT_NEAR(model.loss_and_grad(ex, rows, &grads, 1.0, nullptr), ce, 1e-10);
    // output bias gradient is the column sum of dlogits
    const auto bias = model.params().find("output.bias");
    EXPECT_LE((grads[bias].row(0) - dlogits.colwise().sum()).cwiseAbs().maxCoeff(), 1e-10);
}

TYPED_TEST(ModelTest, LoraIdentityAtInitAndFreeze) {
    auto model = make_tiny<TypeParam>();
    std::mt19937_64 rng(8);
    auto ex = random_example(rng, 20, 4, 4);
    auto base_logits = model.logits(ex.src, ex.tgt_in);
    const auto before = model.params().checksum(false);
    attach_lora(model, 2, 4.0);
    EXPECT_EQ(model.logits(ex.src, ex.tgt_in), base_logits);
    EXPECT_EQ(model.params().checksum(false), before);
    for (std::size_t i = 0; i < model.params().size(); ++i)
        EXPECT_EQ(model.params().trainable(i), model.params().info(i).lora);
    auto grads = model.params().zeros_like();
    std::vector<LabelRow> rows;
    for (TokenId t : ex.tgt_out)
        rows.push_back(one_hot_row(static_cast<std::size_t>(t)));
    model.loss_and_grad(ex, rows, &grads, 1.0, nullptr);
    for (std::size_t i = 0; i < model.params().size(); ++i)
        if (!model.params().trainable(i))
            EXPECT_EQ(grads[i].cwiseAbs().maxCoeff(), 0.0) << model.params().info(i).name;
}

TYPED_TEST(ModelTest, LoraGradientMatchesFiniteDifferences) {
    auto model = make_tiny<TypeParam>();
    attach_lora(model, 2, 4.0);
    // move B off zero so that A receives gradient
    std::mt19937_64 rng(9);
    std::uniform_real_distribution<double> u(-0.3, 0.3);
    auto &p = model.params();
    for (std::size_t i = 0; i < p.size(); ++i)
        if (p.info(i).lora)
            for (Index k = 0; k < p.value(i).size(); ++k)
                p.value(i).data()[k] = u(rng);
    auto plan = tiny_plan(20);
    auto batch = labelled_batch(rng, plan, 20, 2);
    auto report = grad_check(model, batch, 1e-5);
    EXPECT_LT(report.max_relative_error, 1e-4) << report.worst_parameter;
}

TEST(Lora, TrainableCountFormula) {
    ModelConfig c;
    c.vocab_size = 500;
    Seq2SeqModel<float> model(c);
    std::size_t expect = 0;
    model.for_each_linear([&](auto &lin) { expect += static_cast<std::size_t>(16 * (lin.in + lin.out)); });
    EXPECT_EQ(attach_lora(model, 16, 32.0), expect);
}

TEST(Lora, TwoSquareLayers) {
    ModelConfig c = tiny_config();
    c.dim = 64;
    c.heads = 4;
    c.ffn_dim = 64;
    Seq2SeqModel<float> model(c);
    auto n = attach_lora(model, 16, 32.0, [](const std::string &name) {
        return name == "encoder.0.attn.q" || name == "encoder.0.attn.k";
    });
    EXPECT_EQ(n, 2u * 16u * (64u + 64u));
    EXPECT_EQ(n, 4096u);
}

TEST(Lora, Errors) {
    Seq2SeqModel<float> model(tiny_config());
    EXPECT_THROW(attach_lora(model, 9, 16.0), ConfigError);
    Seq2SeqModel<float> other(tiny_config());
    EXPECT_THROW(attach_lora(other, 0, 16.0), ConfigError);
    EXPECT_THROW(attach_lora(other, 2, 4.0, [](const std::string &) { return false; }), ConfigError);
}

TEST(GradCheck, CapAndEmptySelection) {
    Seq2SeqModel<double> model(tiny_config());
    std::mt19937_64 rng(1);
    auto batch = labelled_batch(rng, tiny_plan(20), 20, 1);
    EXPECT_THROW(grad_check(model, batch, 1e-5, {}, 10), ConfigError);
    auto report = grad_check(model, batch, 1e-5, [](const std::string &) { return false; });
    EXPECT_EQ(report.checked, 0u);
}

TEST(Model, ConfigValidation) {
    auto c = tiny_config();
    c.heads = 3;
    EXPECT_THROW(Seq2SeqModel<float>{c}, ConfigError);
    EXPECT_THROW(DecoderOnlyModel<float>{tiny_config()}, ConfigError);
    c = tiny_config();
    c.dropout = 1.0;
    EXPECT_THROW(Seq2SeqModel<float>{c}, ConfigError);
}

TEST(Model, DropoutIsSeededAndOffWithoutGenerator) {
    auto c = tiny_config();
    c.dropout = 0.3;
    Seq2SeqModel<double> model(c);
    std::mt19937_64 rng(1);
    auto ex = random_example(rng, 20, 4, 4);
    std::vector<LabelRow> rows;
    for (TokenId t : ex.tgt_out)
        rows.push_back(one_hot_row(static_cast<std::size_t>(t)));
    std::mt19937_64 a(5), b(5);
    const double la = model.loss_and_grad(ex, rows, nullptr, 1.0, &a);
    const double lb = model.loss_and_grad(ex, rows, nullptr, 1.0, &b);
    EXPECT_EQ(la, lb);
    const double clean1 = model.loss_and_grad(ex, rows, nullptr, 1.0, nullptr);
    const double clean2 = model.loss_and_grad(ex, rows, nullptr, 1.0, nullptr);
    EXPECT_EQ(clean1, clean2);
    EXPECT_NE(la, clean1);
}

TEST(Checkpoint, RoundTripAndAdapter) {
    glosstr::testing::TempDir dir;
    Seq2SeqModel<float> model(tiny_config());
    std::mt19937_64 rng(2);
    auto ex = random_example(rng, 20, 4, 4);
    save_checkpoint(model, dir.file("m.ckpt"), {{"step", 7}});
    nlohmann::json meta;
    auto back = load_checkpoint<Seq2SeqModel<float>>(dir.file("m.ckpt"), &meta);
    EXPECT_EQ(meta.at("step"), 7);
    EXPECT_EQ(back.logits(ex.src, ex.tgt_in), model.logits(ex.src, ex.tgt_in));
    EXPECT_EQ(back.params().checksum(), model.params().checksum());
    EXPECT_THROW(load_checkpoint<DecoderOnlyModel<float>>(dir.file("m.ckpt")), FormatError);

    attach_lora(model, 2, 4.0);
    auto &p = model.params();
    for (std::size_t i = 0; i < p.size(); ++i)
        if (p.info(i).lora)
            p.value(i).setConstant(0.01f);
    save_adapter(model, dir.file("a.lora"), 4.0);
    auto reloaded = load_checkpoint<Seq2SeqModel<float>>(dir.file("m.ckpt"));
    load_adapter(reloaded, dir.file("a.lora"));
    EXPECT_EQ(reloaded.logits(ex.src, ex.tgt_in), model.logits(ex.src, ex.tgt_in));

    auto c = tiny_config();
    c.seed = 99;
    Seq2SeqModel<float> stranger(c);
    EXPECT_THROW(load_adapter(stranger, dir.file("a.lora")), FormatError);
    glosstr::testing::write_file(dir.file("junk"), "not a checkpoint");
    EXPECT_THROW(load_checkpoint<Seq2SeqModel<float>>(dir.file("junk")), FormatError);
}

TEST(Decode, BeamOneEqualsGreedy) {
    std::mt19937_64 rng(11);
    for (int trial = 0; trial < 20; ++trial) {
        auto c = tiny_config(trial % 2 ? Architecture::decoder_only : Architecture::encoder_decoder);
        c.seed = static_cast<std::uint64_t>(trial);
        c.max_positions = 64;
        DecodeConfig one;
        one.beam_size = 1;
        one.max_length = 20;
        auto src = random_ids(rng, 4, 20);
        src.push_back(kEos);
        if (c.architecture == Architecture::encoder_decoder) {
            Seq2SeqModel<float> m(c);
            EXPECT_EQ(beam_search(m, src, one).tokens, greedy_decode(m, src, one).tokens);
        } else {
            DecoderOnlyModel<float> m(c);
            EXPECT_EQ(beam_search(m, src, one).tokens, greedy_decode(m, src, one).tokens);
        }
    }
}

TEST(Decode, BeamNeverBelowGreedyAndRespectsCap) {
    std::mt19937_64 rng(12);
    for (int trial = 0; trial < 20; ++trial) {
        auto c = tiny_config();
        c.seed = static_cast<std::uint64_t>(100 + trial);
        c.max_positions = 32;
        Seq2SeqModel<float> m(c);
        DecodeConfig five;
        five.max_length = 12;
        auto src = random_ids(rng, 5, 20);
        src.push_back(kEos);
        auto g = greedy_decode(m, src, five);
        auto b = beam_search(m, src, five);
        EXPECT_GE(b.score, g.score);
        EXPECT_LE(b.tokens.size(), five.max_length);
        EXPECT_TRUE(b.finished ? b.tokens.back() == kEos : b.tokens.size() == five.max_length);
    }
}

TEST(Decode, ScoreIsLengthNormalized) {
    EXPECT_DOUBLE_EQ(normalized_score(-6.0, 3, 1.0), -2.0);
    EXPECT_DOUBLE_EQ(normalized_score(-6.0, 4, 0.0), -6.0);
    DecodeConfig bad;
    bad.beam_size = 0;
    EXPECT_THROW(bad.validate(), ConfigError);
}
