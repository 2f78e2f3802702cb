// glosstr command-line tool: data preparation, training, decoding, evaluation and augmentation.
//
// Exit codes: 0 success, 1 usage/config error, 2 data/format error, 3 numeric failure.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "glosstr/glosstr.hpp"

#ifndef GLOSSTR_VERSION
#define GLOSSTR_VERSION "dev"
#endif

namespace fs = std::filesystem;
using namespace glosstr;

namespace {

enum Exit { kOk = 0, kUsage = 1, kData = 2, kNumeric = 3 };

/// Options shared by every subcommand: a config file, one flag per config key, output style.
struct Common {
    std::string config_file;
    std::map<std::string, std::string> overrides;
    bool json_lines = false;
};

void add_common(CLI::App *sub, Common &common) {
    sub->add_option("--config", common.config_file, "key = value configuration file");
    sub->add_flag("--json-lines", common.json_lines, "machine-readable records on stdout");
    for (const auto &key : config_keys())
        sub->add_option("--" + key, common.overrides[key], "overrides config key '" + key + "'");
}

RunConfig resolve_config(const Common &common) {
    RunConfig c = common.config_file.empty() ? RunConfig{} : load_run_config(common.config_file);
    for (const auto &[k, v] : common.overrides)
        if (!v.empty())
            set_config_value(c, k, v);
    c.train.validate();
    return c;
}

/// A run of one subcommand: resolved config, output directory and manifest.
class Run {
  public:
    Run(std::string command, const Common &common) : cfg(resolve_config(common)), json(common.json_lines) {
        manifest_.command = std::move(command);
        manifest_.config = to_json(cfg);
        manifest_.seed = cfg.train.seed;
        manifest_.tool_version = GLOSSTR_VERSION;
        fs::create_directories(cfg.output_dir);
        out_dir_ = fs::weakly_canonical(cfg.output_dir);
    }

    /// Path of an output file inside the output directory; relative names only.
    std::string output(const std::string &name) {
        fs::path p = fs::weakly_canonical(out_dir_ / name);
        auto rel = p.lexically_relative(out_dir_);
        if (rel.empty() || *rel.begin() == "..")
            throw ConfigError("output '" + name + "' lies outside output_dir " + out_dir_.string());
        manifest_.outputs.push_back(p.string());
        return p.string();
    }

    void input(const std::string &path) {
        if (path.empty())
            return;
        if (!fs::exists(path))
            throw FormatError("input file not found: " + path);
        manifest_.add_input(path);
    }

    std::string require(const std::string &value, const std::string &key) const {
        if (value.empty())
            throw ConfigError("missing required setting '" + key + "'");
        return value;
    }

    /// Writes the manifest; call after declaring inputs and outputs, before doing work.
    void start() {
        std::ofstream out(out_dir_ / (manifest_.command + ".manifest.json"), std::ios::binary);
        if (!out)
            throw FormatError("cannot write manifest in " + out_dir_.string());
        out << manifest_.to_json().dump(2) << '\n';
    }

    /// Prints a report either as `key value` lines or as one JSON record.
    void report(const nlohmann::json &record) const {
        if (json) {
            std::cout << record.dump() << std::endl;
            return;
        }
        for (const auto &[k, v] : record.items())
            std::cout << k << ' ' << (v.is_string() ? v.get<std::string>() : v.dump()) << '\n';
        std::cout.flush();
    }

    RunConfig cfg;
    bool json;

  private:
    RunManifest manifest_;
    fs::path out_dir_;
};

std::vector<std::string> read_nonempty_lines(const std::string &path) {
    auto lines = read_lines(path);
    for (auto &l : lines)
        l = collapse_whitespace(l);
    return lines;
}

CorpusSplit load_split(const std::string &path, SplitName name) {
    auto split = load_tsv(path, name);
    if (split.empty())
        throw EmptyCorpusError("no pairs in " + path);
    return split;
}

/// Runs `fn` with a float model of the configured architecture.
template <class F>
void with_model(const ModelConfig &mc, F &&fn) {
    if (mc.architecture == Architecture::encoder_decoder) {
        Seq2SeqModel<float> m(mc);
        fn(m);
    } else {
        DecoderOnlyModel<float> m(mc);
        fn(m);
    }
}

/// Runs `fn` with the model stored in a checkpoint (plus an optional adapter).
template <class F>
void with_checkpoint(const std::string &path, const std::string &adapter, F &&fn) {
    auto meta = read_checkpoint_metadata(path);
    auto arch = model_config_from_json(meta.at("config")).architecture;
    auto run = [&](auto model) {
        if (!adapter.empty())
            load_adapter(model, adapter);
        fn(model);
    };
    if (arch == Architecture::encoder_decoder)
        run(load_checkpoint<Seq2SeqModel<float>>(path));
    else
        run(load_checkpoint<DecoderOnlyModel<float>>(path));
}

/// Label plan from, in order of preference: a saved plan, a saved similarity index, embeddings.
SoftLabelPlan resolve_plan(const RunConfig &c, const CorpusSplit &train, const BpeModel &tok) {
    const auto &sc = c.train.smoothing;
    if (!c.plan_path.empty()) {
        auto plan = SoftLabelPlan::load(c.plan_path);
        if (plan.config().mode != sc.mode)
            throw ConfigError("plan file was built for smoothing = " + std::string(to_string(plan.config().mode)));
        return plan;
    }
    std::vector<std::string> texts;
    for (const auto &p : train)
        texts.push_back(p.text);
    auto words = target_words(train);
    const bool needs_neighbors = sc.mode == SmoothingMode::sals || sc.mode == SmoothingMode::conventional;
    if (!c.sim_index_path.empty())
        return SoftLabelPlan::build(SimilarityIndex::load(c.sim_index_path, words), tok, texts, sc);
    if (!c.embeddings_path.empty())
        return SoftLabelPlan::build(build_similarity_index(load_vectors(c.embeddings_path), words, sc.lambda), tok,
                                    texts, sc);
    if (needs_neighbors)
        throw ConfigError("smoothing = " + std::string(to_string(sc.mode)) +
                          " needs one of plan, sim_index or embeddings");
    return SoftLabelPlan::build(SimilarityIndex(words, sc.lambda), tok, texts, sc);
}

std::string checkpoint_dir(Run &run) {
    return run.output(run.cfg.train.checkpoint_dir.empty() ? "checkpoints" : run.cfg.train.checkpoint_dir);
}

void print_epoch(const Run &run, const EpochLog &e) {
    if (run.json) {
        std::cout << e.to_json().dump() << std::endl;
        return;
    }
    std::cout << "epoch " << e.epoch << " step " << e.step << " loss " << e.train_loss << " dev_loss " << e.dev_loss
              << " bleu1 " << e.dev.bleu1 << " bleu4 " << e.dev.bleu4 << " rouge_l " << e.dev.rouge_l << " chrf_pp "
              << e.dev.chrf_pp << std::endl;
}

// ---- subcommands ----

int cmd_ingest(const Common &common, const std::string &format) {
    Run run("ingest", common);
    const auto &c = run.cfg;
    struct Item {
        std::string path;
        SplitName name;
    };
    std::vector<Item> items{{c.train_path, SplitName::train}, {c.dev_path, SplitName::dev}, {c.test_path, SplitName::test}};
    std::vector<Item> present;
    for (const auto &it : items)
        if (!it.path.empty()) {
            run.input(it.path);
            present.push_back(it);
        }
    if (present.empty())
        throw ConfigError("ingest needs at least one of train, dev or test");
    std::vector<std::string> outs;
    for (const auto &it : present)
        outs.push_back(run.output(std::string(to_string(it.name)) + ".tsv"));
    run.start();

    nlohmann::json rec;
    for (std::size_t i = 0; i < present.size(); ++i) {
        const auto &it = present[i];
        const bool phoenix = format == "phoenix" || (format == "auto" && fs::path(it.path).extension() == ".csv");
        auto split = phoenix ? load_phoenix(it.path, it.name) : load_tsv(it.path, it.name);
        save_tsv(split, outs[i]);
        const std::string n(to_string(it.name));
        rec[n + "_pairs"] = split.size();
        if (it.name == SplitName::train) {
            auto stats = vocab_stats(split);
            rec["train_gloss_vocab"] = stats.glosses;
            rec["train_word_vocab"] = stats.words;
        }
    }
    run.report(rec);
    return kOk;
}

int cmd_train_tokenizer(const Common &common) {
    Run run("train-tokenizer", common);
    const auto train_path = run.require(run.cfg.train_path, "train");
    run.input(train_path);
    const auto out = run.output("tokenizer.bpe");
    run.start();
    auto tok = train_shared_tokenizer(load_split(train_path, SplitName::train), run.cfg.bpe_vocab_size);
    tok.save(out);
    run.report({{"vocab_size", tok.vocab_size()}, {"merges", tok.merges().size()}, {"tokenizer", out}});
    return kOk;
}

int cmd_build_sim(const Common &common) {
    Run run("build-sim", common);
    const auto &c = run.cfg;
    const auto train_path = run.require(c.train_path, "train");
    const auto emb_path = run.require(c.embeddings_path, "embeddings");
    run.input(train_path);
    run.input(emb_path);
    run.input(c.tokenizer_path);
    const auto index_out = run.output("sim_index.tsv");
    const auto plan_out = c.tokenizer_path.empty() ? std::string() : run.output("label_plan.txt");
    run.start();

    auto train = load_split(train_path, SplitName::train);
    auto words = target_words(train);
    auto index = build_similarity_index(load_vectors(emb_path), words, c.train.smoothing.lambda);
    index.save(index_out);
    std::size_t links = 0;
    for (std::size_t i = 0; i < index.size(); ++i)
        links += index.neighbors(i).size();
    nlohmann::json rec{{"target_words", words.size()}, {"links", links / 2}, {"sim_index", index_out}};
    if (!plan_out.empty()) {
        std::vector<std::string> texts;
        for (const auto &p : train)
            texts.push_back(p.text);
        SoftLabelPlan::build(index, BpeModel::load(c.tokenizer_path), texts, c.train.smoothing).save(plan_out);
        rec["plan"] = plan_out;
    }
    run.report(rec);
    return kOk;
}

int cmd_train(const Common &common, const std::string &init) {
    Run run("train", common);
    auto &c = run.cfg;
    const auto train_path = run.require(c.train_path, "train");
    const auto dev_path = run.require(c.dev_path, "dev");
    const auto tok_path = run.require(c.tokenizer_path, "tokenizer");
    for (const auto &p : {train_path, dev_path, tok_path, c.plan_path, c.sim_index_path, c.embeddings_path, init})
        run.input(p);
    c.train.checkpoint_dir = checkpoint_dir(run);
    run.start();

    auto train_split = load_split(train_path, SplitName::train);
    auto dev = load_split(dev_path, SplitName::dev);
    auto tok = BpeModel::load(tok_path);
    auto plan = resolve_plan(c, train_split, tok);
    auto body = [&](auto &model) {
        if (c.train.lora)
            attach_lora(model, c.train.lora_rank, c.train.lora_alpha);
        auto result = train(model, tok, plan, train_split, dev, c.train, [&](const EpochLog &e) { print_epoch(run, e); });
        run.report({{"best_epoch", result.best_epoch},
                    {"best_bleu4", result.best_bleu4},
                    {"steps", result.steps},
                    {"dropped_examples", result.dropped_examples},
                    {"checkpoint", c.train.checkpoint_dir + "/best.ckpt"}});
    };
    if (!init.empty()) {
        with_checkpoint(init, "", body);
    } else {
        c.model.vocab_size = static_cast<Index>(tok.vocab_size());
        with_model(c.model, body);
    }
    return kOk;
}

int cmd_translate(const Common &common, const std::string &ckpt, const std::string &adapter,
                  const std::string &input, const std::string &output) {
    Run run("translate", common);
    const auto &c = run.cfg;
    const auto tok_path = run.require(c.tokenizer_path, "tokenizer");
    run.require(ckpt, "--checkpoint");
    run.require(input, "--input");
    for (const auto &p : {tok_path, ckpt, adapter, input})
        run.input(p);
    const auto out = run.output(output);
    run.start();

    auto tok = BpeModel::load(tok_path);
    auto sources = read_nonempty_lines(input);
    with_checkpoint(ckpt, adapter, [&](auto &model) {
        auto hyps = translate(model, tok, sources, c.train.decode, c.train.threads);
        std::ofstream f(out, std::ios::binary);
        for (const auto &h : hyps)
            f << h << '\n';
    });
    run.report({{"sentences", sources.size()}, {"output", out}});
    return kOk;
}

int cmd_evaluate(const Common &common, const std::string &hyp, const std::string &ref) {
    Run run("evaluate", common);
    run.require(hyp, "--hyp");
    run.require(ref, "--ref");
    run.input(hyp);
    run.input(ref);
    const auto out = run.output("report.txt");
    run.start();
    auto report = evaluate(read_nonempty_lines(hyp), read_nonempty_lines(ref));
    std::ofstream(out, std::ios::binary) << report.to_text();
    run.report(report.to_json());
    return kOk;
}

int cmd_analyze(const Common &common, const std::string &hyp, const std::string &ref) {
    Run run("analyze", common);
    const auto train_path = run.require(run.cfg.train_path, "train");
    run.require(hyp, "--hyp");
    run.require(ref, "--ref");
    for (const auto &p : {train_path, hyp, ref})
        run.input(p);
    const auto freq_out = run.output("frequency_buckets.tsv");
    const auto len_out = run.output("length_buckets.tsv");
    run.start();
    auto hyps = read_nonempty_lines(hyp), refs = read_nonempty_lines(ref);
    auto train = load_split(train_path, SplitName::train);
    std::ofstream(freq_out, std::ios::binary) << bucket_table_tsv(word_fmeasure_buckets(hyps, refs, train));
    std::ofstream(len_out, std::ios::binary) << bucket_table_tsv(sentence_fmeasure_by_length(hyps, refs));
    auto lr = length_ratio(hyps, refs);
    run.report({{"length_ratio", lr.ratio},
                {"out_tokens", lr.out_total},
                {"ref_tokens", lr.ref_total},
                {"frequency_buckets", freq_out},
                {"length_buckets", len_out}});
    return kOk;
}

void write_silver(Run &run, const CorpusSplit &gold, const std::vector<ParallelPair> &silver,
                  const std::string &silver_out, const std::string &merged_out, const AugmentReport &rep) {
    save_tsv(CorpusSplit(SplitName::train, silver), silver_out);
    auto merged = merge_silver(gold, silver);
    save_tsv(merged, merged_out);
    nlohmann::json errors = rep.errors;
    run.report({{"attempted", rep.attempted},
                {"emitted", rep.emitted},
                {"unchanged", rep.unchanged},
                {"empty", rep.empty},
                {"duplicates", rep.duplicates},
                {"failures", rep.failures},
                {"errors", errors},
                {"merged_pairs", merged.size()},
                {"silver", silver_out},
                {"merged", merged_out}});
}

int cmd_augment_bt(const Common &common, const std::string &reverse_ckpt) {
    Run run("augment-backtranslate", common);
    auto &c = run.cfg;
    const auto train_path = run.require(c.train_path, "train");
    const auto tok_path = run.require(c.tokenizer_path, "tokenizer");
    for (const auto &p : {train_path, tok_path, reverse_ckpt, c.dev_path})
        run.input(p);
    const auto silver_out = run.output("silver_backtranslation.tsv");
    const auto merged_out = run.output("train_merged.tsv");
    if (reverse_ckpt.empty())
        c.train.checkpoint_dir = run.output("reverse");
    run.start();

    auto gold = load_split(train_path, SplitName::train);
    auto tok = BpeModel::load(tok_path);
    auto generate = [&](auto &model) {
        AugmentReport rep;
        auto silver = back_translate_augment(gold, model, tok, c.train.decode, &rep, c.train.threads);
        write_silver(run, gold, silver, silver_out, merged_out, rep);
    };
    if (!reverse_ckpt.empty()) {
        with_checkpoint(reverse_ckpt, "", generate);
        return kOk;
    }
    // No reverse checkpoint: train one on the swapped corpus. Glosses have no embeddings, so
    // the reverse model uses uniform target smoothing.
    auto dev = load_split(run.require(c.dev_path, "dev"), SplitName::dev);
    auto rev_train = swap_sides(gold);
    SmoothingConfig sc = c.train.smoothing;
    if (sc.mode == SmoothingMode::sals || sc.mode == SmoothingMode::conventional)
        sc.mode = SmoothingMode::uniform_target;
    std::vector<std::string> glosses;
    for (const auto &p : rev_train)
        glosses.push_back(p.text);
    auto plan = SoftLabelPlan::build(SimilarityIndex(target_words(rev_train), sc.lambda), tok, glosses, sc);
    c.model.vocab_size = static_cast<Index>(tok.vocab_size());
    with_model(c.model, [&](auto &model) {
        train_reverse_model(model, tok, plan, gold, dev, c.train);
        generate(model);
    });
    return kOk;
}

int cmd_augment_para(const Common &common, const std::string &fwd, const std::string &bwd,
                     const std::string &pivot_tok) {
    Run run("augment-paraphrase", common);
    const auto &c = run.cfg;
    const auto train_path = run.require(c.train_path, "train");
    for (const auto &p : {train_path, fwd, bwd, pivot_tok})
        run.input(p);
    const bool self_pivot = !fwd.empty() || !bwd.empty();
    if (self_pivot && (fwd.empty() || bwd.empty() || pivot_tok.empty()))
        throw ConfigError("a self pivot needs --pivot-forward, --pivot-backward and --pivot-tokenizer");
    if (!self_pivot && c.pivot_command.empty())
        throw ConfigError("set pivot_command or give self-pivot checkpoints");
    const auto silver_out = run.output("silver_paraphrase.tsv");
    const auto merged_out = run.output("train_merged.tsv");
    run.start();

    auto gold = load_split(train_path, SplitName::train);
    AugmentReport rep;
    std::vector<ParallelPair> silver;
    if (self_pivot) {
        auto tok = BpeModel::load(pivot_tok);
        DecodeConfig dc = c.train.decode;
        with_checkpoint(fwd, "", [&](auto &forward) {
            with_checkpoint(bwd, "", [&](auto &backward) {
                SelfPivot pivot(
                    c.source_tag, [&](const std::string &t) { return translate(forward, tok, {t}, dc).front(); },
                    [&](const std::string &t) { return translate(backward, tok, {t}, dc).front(); });
                silver = paraphrase_augment(gold, pivot, c.source_tag, c.pivot_tag, &rep, c.train.threads);
            });
        });
    } else {
        ExternalCommandPivot pivot(c.pivot_command, c.pivot_timeout);
        silver = paraphrase_augment(gold, pivot, c.source_tag, c.pivot_tag, &rep, c.train.threads);
    }
    write_silver(run, gold, silver, silver_out, merged_out, rep);
    return kOk;
}

/// Gradient check of the full smoothed loss in double precision on a small synthetic batch.
int cmd_gradcheck(const Common &common, bool full_model) {
    Run run("gradcheck", common);
    const auto &c = run.cfg;
    run.start();

    ToyConfig tc;
    tc.train_pairs = 40;
    tc.clusters = 6;
    tc.max_words = 4;
    tc.seed = c.train.seed;
    auto task = make_toy_task(tc);
    auto tok = train_shared_tokenizer(task.train, 100);
    auto plan = build_label_plan(task.train, tok, task.embeddings, c.train.smoothing);

    ModelConfig mc = c.model;
    if (!full_model) {
        mc.dim = 8;
        mc.heads = 2;
        mc.encoder_layers = 1;
        mc.decoder_layers = 1;
        mc.ffn_dim = 12;
        mc.max_positions = 32;
    }
    mc.vocab_size = static_cast<Index>(tok.vocab_size());
    mc.dropout = 0.0;
    auto check = [&](auto model) {
        if (c.train.lora)
            attach_lora(model, c.train.lora_rank, c.train.lora_alpha);
        std::vector<LabelledExample> batch;
        for (auto &ex : make_examples(task.train, tok, model)) {
            if (batch.size() == 2)
                break;
            auto rows = label_rows(ex, plan);
            batch.push_back({std::move(ex), std::move(rows)});
        }
        auto rep = grad_check(model, batch, c.gradcheck_eps);
        run.report({{"parameters", model.params().count(true)},
                    {"checked", rep.checked},
                    {"max_relative_error", rep.max_relative_error},
                    {"worst_parameter", rep.worst_parameter},
                    {"tolerance", c.gradcheck_tolerance}});
        if (!(rep.max_relative_error < c.gradcheck_tolerance))
            throw NumericError("gradient check failed: max relative error " + std::to_string(rep.max_relative_error));
    };
    if (mc.architecture == Architecture::encoder_decoder)
        check(Seq2SeqModel<double>(mc));
    else
        check(DecoderOnlyModel<double>(mc));
    return kOk;
}

int cmd_make_toy(const Common &common, std::size_t pairs) {
    Run run("make-toy", common);
    const auto train_out = run.output("train.tsv"), dev_out = run.output("dev.tsv"), test_out = run.output("test.tsv");
    const auto vec_out = run.output("vectors.txt");
    run.start();
    ToyConfig tc;
    tc.train_pairs = pairs;
    tc.seed = run.cfg.train.seed;
    auto task = make_toy_task(tc);
    save_tsv(task.train, train_out);
    save_tsv(task.dev, dev_out);
    save_tsv(task.test, test_out);
    save_vectors(task.embeddings, vec_out);
    run.report({{"train_pairs", task.train.size()},
                {"dev_pairs", task.dev.size()},
                {"test_pairs", task.test.size()},
                {"embeddings", vec_out}});
    return kOk;
}

} // namespace

int main(int argc, char **argv) {
    CLI::App app{"glosstr: gloss-to-text translation toolkit"};
    app.set_version_flag("--version", GLOSSTR_VERSION);
    app.require_subcommand(1);

    Common common;
    std::string format = "auto", init, ckpt, adapter, input, output = "translations.txt", hyp, ref;
    std::string pivot_fwd, pivot_bwd, pivot_tok;
    bool full_model = false;
    std::size_t toy_pairs = 1000;

    auto *ingest = app.add_subcommand("ingest", "normalize corpora into TSV splits");
    ingest->add_option("--format", format, "tsv, phoenix or auto (by extension)")
        ->check(CLI::IsMember({"auto", "tsv", "phoenix"}));
    auto *tokenizer = app.add_subcommand("train-tokenizer", "learn the shared BPE model");
    auto *sim = app.add_subcommand("build-sim", "similarity index and label plan from word vectors");
    auto *trainer = app.add_subcommand("train", "train a translation model");
    trainer->add_option("--init", init, "start from this checkpoint");
    auto *translator = app.add_subcommand("translate", "decode gloss lines");
    translator->add_option("--checkpoint", ckpt, "model checkpoint");
    translator->add_option("--adapter", adapter, "LoRA adapter for the checkpoint");
    translator->add_option("--input", input, "one gloss sequence per line");
    translator->add_option("--output", output, "file name inside output_dir");
    auto *evaluator = app.add_subcommand("evaluate", "BLEU-1..4, ROUGE-L, chrF++ and length ratio");
    auto *analyzer = app.add_subcommand("analyze", "bucketed F-measure tables");
    for (auto *s : {evaluator, analyzer}) {
        s->add_option("--hyp", hyp, "hypothesis lines");
        s->add_option("--ref", ref, "reference lines");
    }
    auto *bt = app.add_subcommand("augment-backtranslate", "silver glosses from a reverse model");
    bt->add_option("--checkpoint", ckpt, "reverse (text -> gloss) model; trained when omitted");
    auto *para = app.add_subcommand("augment-paraphrase", "silver texts from a pivot round trip");
    para->add_option("--pivot-forward", pivot_fwd, "source -> pivot checkpoint (self pivot)");
    para->add_option("--pivot-backward", pivot_bwd, "pivot -> source checkpoint (self pivot)");
    para->add_option("--pivot-tokenizer", pivot_tok, "tokenizer of the self-pivot models");
    auto *gradcheck = app.add_subcommand("gradcheck", "finite-difference check of the training loss");
    gradcheck->add_flag("--full-model", full_model, "use the configured model size instead of the tiny preset");
    auto *toy = app.add_subcommand("make-toy", "write the synthetic gloss/text task");
    toy->add_option("--pairs", toy_pairs, "training pairs");

    for (auto *s : {ingest, tokenizer, sim, trainer, translator, evaluator, analyzer, bt, para, gradcheck, toy})
        add_common(s, common);

    try {
        app.parse(argc, argv);
    } catch (const CLI::Success &e) {
        return app.exit(e);
    } catch (const CLI::ParseError &e) {
        app.exit(e);
        return kUsage;
    }

    try {
        if (ingest->parsed())
            return cmd_ingest(common, format);
        if (tokenizer->parsed())
            return cmd_train_tokenizer(common);
        if (sim->parsed())
            return cmd_build_sim(common);
        if (trainer->parsed())
            return cmd_train(common, init);
        if (translator->parsed())
            return cmd_translate(common, ckpt, adapter, input, output);
        if (evaluator->parsed())
            return cmd_evaluate(common, hyp, ref);
        if (analyzer->parsed())
            return cmd_analyze(common, hyp, ref);
        if (bt->parsed())
            return cmd_augment_bt(common, ckpt);
        if (para->parsed())
            return cmd_augment_para(common, pivot_fwd, pivot_bwd, pivot_tok);
        if (gradcheck->parsed())
            return cmd_gradcheck(common, full_model);
        if (toy->parsed())
            return cmd_make_toy(common, toy_pairs);
    } catch (const ConfigError &e) {
        std::cerr << "error: " << e.what() << '\n';
        return kUsage;
    } catch (const NumericError &e) {
        std::cerr << "error: " << e.what() << '\n';
        return kNumeric;
    } catch (const std::exception &e) {
        std::cerr << "error: " << e.what() << '\n';
        return kData;
    }
    return kUsage;
}
