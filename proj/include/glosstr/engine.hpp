#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "glosstr/checkpoint.hpp"
#include "glosstr/corpus.hpp"
#include "glosstr/decode.hpp"
#include "glosstr/errors.hpp"
#include "glosstr/metrics.hpp"
#include "glosstr/model.hpp"
#include "glosstr/parallel.hpp"
#include "glosstr/sals.hpp"
#include "glosstr/tokenizer.hpp"

namespace glosstr {

struct TrainConfig {
    std::size_t epochs = 30;
    std::size_t batch_tokens = 1024; ///< source + target tokens per optimizer step
    double learning_rate = 5e-4;
    std::size_t warmup_steps = 4000;
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.998;
    double adam_eps = 1e-8;
    double weight_decay = 0.01;
    double clip_norm = 1.0; ///< global gradient-norm clip; 0 disables
    std::uint64_t seed = 1;
    SmoothingConfig smoothing;
    bool lora = false;
    Index lora_rank = 16;
    double lora_alpha = 32.0;
    std::string checkpoint_dir; ///< empty: keep the best weights in memory only
    std::size_t threads = 1;
    DecodeConfig decode; ///< used for dev BLEU each epoch

    void validate() const {
        if (batch_tokens == 0)
            throw ConfigError("batch_tokens must be positive");
        if (!(learning_rate > 0))
            throw ConfigError("learning_rate must be positive");
        if (!(adam_beta1 > 0 && adam_beta1 < 1) || !(adam_beta2 > 0 && adam_beta2 < 1))
            throw ConfigError("AdamW betas must lie in (0, 1)");
        if (lora && lora_rank < 1)
            throw ConfigError("lora_rank must be >= 1");
        smoothing.validate();
        decode.validate();
    }
};

/// Linear warmup to the peak rate, then inverse square-root decay.
inline double learning_rate_at(std::size_t step, double peak, std::size_t warmup) {
    const double s = static_cast<double>(std::max<std::size_t>(step, 1));
    if (warmup == 0)
        return peak;
    const double w = static_cast<double>(warmup);
    return peak * std::min(s / w, std::sqrt(w / s));
}

/// Decoupled-weight-decay Adam over the trainable tensors of a parameter set.
template <class T>
class AdamW {
  public:
    AdamW(const nn::ParameterSet<T> &p, double beta1, double beta2, double eps, double weight_decay)
        : beta1_(beta1), beta2_(beta2), eps_(eps), weight_decay_(weight_decay), m_(p.zeros_like()),
          v_(p.zeros_like()) {}

    void step(nn::ParameterSet<T> &p, const nn::GradSet<T> &g, double lr) {
        ++t_;
        const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
        const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
        for (std::size_t i = 0; i < p.size(); ++i) {
            if (!p.trainable(i))
                continue;
            auto &w = p.value(i);
            auto &m = m_[i];
            auto &v = v_[i];
            m = static_cast<T>(beta1_) * m + static_cast<T>(1 - beta1_) * g[i];
            v.array() = static_cast<T>(beta2_) * v.array() + static_cast<T>(1 - beta2_) * g[i].array().square();
            if (p.info(i).decay && weight_decay_ > 0)
                w *= static_cast<T>(1.0 - lr * weight_decay_);
            w.array() -= static_cast<T>(lr) * (m.array() / static_cast<T>(c1)) /
                         ((v.array() / static_cast<T>(c2)).sqrt() + static_cast<T>(eps_));
        }
    }

    std::size_t steps() const { return t_; }

  private:
    double beta1_, beta2_, eps_, weight_decay_;
    std::size_t t_ = 0;
    nn::GradSet<T> m_, v_;
};

/// Tokenizes gloss -> text pairs. Pairs that would exceed the model's positions are dropped.
template <class Model>
std::vector<Example> make_examples(const CorpusSplit &split, const BpeModel &tok, const Model &model,
                                   std::size_t *dropped = nullptr) {
    std::vector<Example> out;
    const auto max_pos = static_cast<std::size_t>(model.config().max_positions);
    std::size_t skipped = 0;
    for (const auto &p : split) {
        Example ex;
        ex.src = tok.encode(p.gloss_string()).ids;
        ex.src.push_back(kEos);
        auto tgt = tok.encode(p.text);
        ex.tgt_in.push_back(kBos);
        ex.tgt_in.insert(ex.tgt_in.end(), tgt.ids.begin(), tgt.ids.end());
        ex.tgt_out = tgt.ids;
        ex.tgt_out.push_back(kEos);
        ex.first_subword = tgt.first_subword;
        ex.first_subword.push_back(false);
        const bool fits = Model::kArchitecture == Architecture::decoder_only
                              ? ex.src.size() + ex.tgt_in.size() <= max_pos
                              : ex.src.size() <= max_pos && ex.tgt_in.size() <= max_pos;
        if (!fits) {
            ++skipped;
            continue;
        }
        out.push_back(std::move(ex));
    }
    if (dropped)
        *dropped = skipped;
    return out;
}

inline std::vector<LabelRow> label_rows(const Example &ex, const SoftLabelPlan &plan) {
    std::vector<LabelRow> rows;
    rows.reserve(ex.tgt_out.size());
    for (std::size_t t = 0; t < ex.tgt_out.size(); ++t)
        rows.push_back(plan.row_for_position(ex.tgt_out[t], ex.first_subword[t]));
    return rows;
}

inline std::vector<LabelRow> one_hot_rows(const Example &ex) {
    std::vector<LabelRow> rows;
    for (TokenId t : ex.tgt_out)
        rows.push_back(one_hot_row(static_cast<std::size_t>(t)));
    return rows;
}

/// Length-bucketed batches under a token budget, shuffled with the given generator.
inline std::vector<std::vector<std::size_t>> make_batches(const std::vector<std::size_t> &lengths,
                                                          std::size_t budget, std::mt19937_64 &rng) {
    std::vector<std::size_t> order(lengths.size());
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng);
    const std::size_t pool = std::max<std::size_t>(64, order.size() / 4);
    for (std::size_t lo = 0; lo < order.size(); lo += pool) {
        auto hi = std::min(order.size(), lo + pool);
        std::stable_sort(order.begin() + static_cast<std::ptrdiff_t>(lo),
                         order.begin() + static_cast<std::ptrdiff_t>(hi),
                         [&](std::size_t a, std::size_t b) { return lengths[a] < lengths[b]; });
    }
    std::vector<std::vector<std::size_t>> batches;
    std::vector<std::size_t> cur;
    std::size_t used = 0;
    for (std::size_t i : order) {
        if (!cur.empty() && used + lengths[i] > budget) {
            batches.push_back(std::move(cur));
            cur.clear();
            used = 0;
        }
        cur.push_back(i);
        used += lengths[i];
    }
    if (!cur.empty())
        batches.push_back(std::move(cur));
    std::shuffle(batches.begin(), batches.end(), rng);
    return batches;
}

/// Translates each source string; output order follows input order.
template <class Model>
std::vector<std::string> translate(const Model &model, const BpeModel &tok, const std::vector<std::string> &sources,
                                   const DecodeConfig &cfg, std::size_t threads = 1) {
    std::vector<std::string> out(sources.size());
    parallel_for(sources.size(), threads, [&](std::size_t i) {
        auto src = tok.encode(sources[i]).ids;
        src.push_back(kEos);
        const auto cap = static_cast<std::size_t>(model.config().max_positions);
        if (src.size() > cap) {
            src.resize(cap);
            src.back() = kEos;
        }
        DecodeConfig c = cfg;
        c.max_length = std::min<std::size_t>(c.max_length, cap - 1);
        out[i] = tok.decode(strip_eos(beam_search(model, src, c).tokens));
    });
    return out;
}

struct EpochLog {
    std::size_t epoch = 0;
    std::size_t step = 0;
    double train_loss = 0;
    double dev_loss = 0;
    EvalReport dev;

    nlohmann::json to_json() const {
        auto j = dev.to_json();
        j["epoch"] = epoch;
        j["step"] = step;
        j["loss"] = train_loss;
        j["dev_loss"] = dev_loss;
        return j;
    }
};

struct TrainResult {
    std::vector<EpochLog> log;
    std::size_t best_epoch = 0; ///< 0 when no epoch ran
    double best_bleu4 = -1;
    std::size_t steps = 0;
    std::size_t dropped_examples = 0;
};

/// Token-averaged one-hot loss over examples (dropout off).
template <class Model>
double evaluation_loss(const Model &model, const std::vector<Example> &examples, std::size_t threads = 1) {
    std::vector<double> losses(examples.size());
    std::vector<std::size_t> counts(examples.size());
    parallel_for(examples.size(), threads, [&](std::size_t i) {
        auto rows = one_hot_rows(examples[i]);
        losses[i] = model.loss_and_grad(examples[i], rows, nullptr, typename Model::Scalar(1), nullptr);
        counts[i] = examples[i].tgt_out.size();
    });
    double total = std::accumulate(losses.begin(), losses.end(), 0.0);
    auto n = std::accumulate(counts.begin(), counts.end(), std::size_t{0});
    return n ? total / static_cast<double>(n) : 0.0;
}

/// Trains with AdamW under the given label plan, evaluating dev BLEU each epoch and
/// keeping the best-BLEU-4 weights, ties broken by dev loss (restored into `model` on return).
template <class Model>
TrainResult train(Model &model, const BpeModel &tok, const SoftLabelPlan &plan, const CorpusSplit &train_split,
                  const CorpusSplit &dev_split, const TrainConfig &cfg,
                  const std::function<void(const EpochLog &)> &on_epoch = {}) {
    using T = typename Model::Scalar;
    cfg.validate();
    TrainResult result;
    if (cfg.epochs == 0)
        return result;
    if (train_split.empty() || dev_split.empty())
        throw ConfigError("training needs non-empty train and dev splits");
    if (plan.vocab_size() != static_cast<std::size_t>(model.vocab_size()))
        throw ConfigError("label plan and model disagree on vocabulary size");

    auto examples = make_examples(train_split, tok, model, &result.dropped_examples);
    auto dev_examples = make_examples(dev_split, tok, model);
    if (examples.empty())
        throw ConfigError("no training example fits the model's max positions");
    std::vector<std::vector<LabelRow>> labels;
    labels.reserve(examples.size());
    std::vector<std::size_t> lengths;
    for (const auto &ex : examples) {
        labels.push_back(label_rows(ex, plan));
        lengths.push_back(ex.src.size() + ex.tgt_in.size());
    }
    std::vector<std::string> dev_src, dev_ref;
    for (const auto &p : dev_split) {
        dev_src.push_back(p.gloss_string());
        dev_ref.push_back(p.text);
    }

    if (!cfg.checkpoint_dir.empty())
        std::filesystem::create_directories(cfg.checkpoint_dir);
    std::ofstream log_file;
    if (!cfg.checkpoint_dir.empty())
        log_file.open(cfg.checkpoint_dir + "/train_log.jsonl");

    auto &params = model.params();
    AdamW<T> opt(params, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps, cfg.weight_decay);
    std::vector<nn::Mat<T>> best;
    for (std::size_t i = 0; i < params.size(); ++i)
        best.push_back(params.value(i));
    std::mt19937_64 shuffle_rng(cfg.seed);
    const std::size_t shards = std::max<std::size_t>(1, cfg.threads);

    auto restore_best = [&] {
        for (std::size_t i = 0; i < params.size(); ++i)
            params.value(i) = best[i];
    };

    std::size_t step = 0;
    double best_dev_loss = std::numeric_limits<double>::infinity();
    for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
        auto batches = make_batches(lengths, cfg.batch_tokens, shuffle_rng);
        double epoch_loss = 0;
        std::size_t epoch_tokens = 0;
        for (std::size_t b = 0; b < batches.size(); ++b) {
            const auto &batch = batches[b];
            ++step;
            std::size_t tokens = 0;
            for (std::size_t i : batch)
                tokens += examples[i].tgt_out.size();
            const T scale = T(1) / static_cast<T>(tokens);
            std::vector<nn::GradSet<T>> grads(std::min(shards, batch.size()));
            std::vector<double> shard_loss(grads.size(), 0.0);
            double loss = 0;
            try {
                parallel_for(grads.size(), cfg.threads, [&](std::size_t s) {
                    grads[s] = params.zeros_like();
                    const std::size_t lo = batch.size() * s / grads.size();
                    const std::size_t hi = batch.size() * (s + 1) / grads.size();
                    for (std::size_t k = lo; k < hi; ++k) {
                        const std::size_t i = batch[k];
                        std::seed_seq seq{cfg.seed, static_cast<std::uint64_t>(step), static_cast<std::uint64_t>(i)};
                        std::mt19937_64 rng(seq);
                        shard_loss[s] += model.loss_and_grad(examples[i], labels[i], &grads[s], scale, &rng);
                    }
                });
                loss = std::accumulate(shard_loss.begin(), shard_loss.end(), 0.0);
            } catch (const NumericError &e) {
                restore_best();
                throw NumericError(std::string(e.what()) + " in batch " + std::to_string(b) + " of epoch " +
                                   std::to_string(epoch) + "; best weights restored");
            }
            if (!std::isfinite(loss)) {
                restore_best();
                throw NumericError("non-finite loss in batch " + std::to_string(b) + " of epoch " +
                                   std::to_string(epoch) + "; best weights restored");
            }
            for (std::size_t s = 1; s < grads.size(); ++s)
                for (std::size_t i = 0; i < params.size(); ++i)
                    grads[0][i] += grads[s][i];
            auto &g = grads[0];
            if (cfg.clip_norm > 0) {
                double sq = 0;
                for (std::size_t i = 0; i < params.size(); ++i)
                    if (params.trainable(i))
                        sq += static_cast<double>(g[i].squaredNorm());
                const double norm = std::sqrt(sq);
                if (!std::isfinite(norm)) {
                    restore_best();
                    throw NumericError("non-finite gradient in batch " + std::to_string(b) + " of epoch " +
                                       std::to_string(epoch) + "; best weights restored");
                }
                if (norm > cfg.clip_norm)
                    for (auto &m : g)
                        m *= static_cast<T>(cfg.clip_norm / norm);
            }
            opt.step(params, g, learning_rate_at(step, cfg.learning_rate, cfg.warmup_steps));
            epoch_loss += loss;
            epoch_tokens += tokens;
        }
        if (!params.all_finite()) {
            restore_best();
            throw NumericError("parameters diverged in epoch " + std::to_string(epoch) + "; best weights restored");
        }

        EpochLog rec;
        rec.epoch = epoch;
        rec.step = step;
        rec.train_loss = epoch_loss / static_cast<double>(std::max<std::size_t>(epoch_tokens, 1));
        rec.dev_loss = evaluation_loss(model, dev_examples, cfg.threads);
        rec.dev = evaluate(translate(model, tok, dev_src, cfg.decode, cfg.threads), dev_ref);
        result.log.push_back(rec);
        if (log_file)
            log_file << rec.to_json().dump() << '\n' << std::flush;
        // BLEU-4 ties go to the lower dev loss
        if (rec.dev.bleu4 > result.best_bleu4 || (rec.dev.bleu4 == result.best_bleu4 && rec.dev_loss < best_dev_loss)) {
            result.best_bleu4 = rec.dev.bleu4;
            best_dev_loss = rec.dev_loss;
            result.best_epoch = epoch;
            for (std::size_t i = 0; i < params.size(); ++i)
                best[i] = params.value(i);
            if (!cfg.checkpoint_dir.empty()) {
                nlohmann::json meta{{"vocab_checksum", hex64(tok.checksum())},
                                    {"step", step},
                                    {"epoch", epoch},
                                    {"metrics", rec.to_json()},
                                    {"smoothing", std::string(to_string(plan.config().mode))}};
                save_checkpoint(model, cfg.checkpoint_dir + "/best.ckpt", meta);
                if (cfg.lora)
                    save_adapter(model, cfg.checkpoint_dir + "/best.adapter", cfg.lora_alpha);
            }
        }
        if (on_epoch)
            on_epoch(rec);
    }
    restore_best();
    result.steps = step;
    return result;
}

} // namespace glosstr
