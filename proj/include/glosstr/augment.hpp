#pragma once

#include <chrono>
#include <csignal>
#include <functional>
#include <memory>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include <fcntl.h>
#include <poll.h>
#include <sys/wait.h>
#include <unistd.h>

#include "glosstr/corpus.hpp"
#include "glosstr/decode.hpp"
#include "glosstr/engine.hpp"
#include "glosstr/errors.hpp"
#include "glosstr/parallel.hpp"
#include "glosstr/text.hpp"

namespace glosstr {

class PivotTranslator {
  public:
    virtual ~PivotTranslator() = default;
    virtual std::string translate(const std::string &text, const std::string &source_tag,
                                  const std::string &pivot_tag) = 0;
};

class IdentityPivot final : public PivotTranslator {
  public:
    std::string translate(const std::string &text, const std::string &, const std::string &) override { return text; }
};

/// Wraps a plain function, handy for tests and ad-hoc pivots.
class FunctionPivot final : public PivotTranslator {
  public:
    using Fn = std::function<std::string(const std::string &, const std::string &, const std::string &)>;
    explicit FunctionPivot(Fn fn) : fn_(std::move(fn)) {}
    std::string translate(const std::string &text, const std::string &s, const std::string &p) override {
        return fn_(text, s, p);
    }

  private:
    Fn fn_;
};

/// Two one-way translators: `forward` maps source -> pivot, `backward` maps pivot -> source.
class SelfPivot final : public PivotTranslator {
  public:
    using Fn = std::function<std::string(const std::string &)>;
    SelfPivot(std::string source_tag, Fn forward, Fn backward)
        : source_tag_(std::move(source_tag)), forward_(std::move(forward)), backward_(std::move(backward)) {}

    std::string translate(const std::string &text, const std::string &source_tag, const std::string &) override {
        return source_tag == source_tag_ ? forward_(text) : backward_(text);
    }

  private:
    std::string source_tag_;
    Fn forward_, backward_;
};

inline std::string replace_all(std::string s, const std::string &from, const std::string &to) {
    for (std::size_t pos = 0; (pos = s.find(from, pos)) != std::string::npos; pos += to.size())
        s.replace(pos, from.size(), to);
    return s;
}

/// Runs `/bin/sh -c <template>` per call with {src} and {pivot} substituted. The text goes to
/// stdin as one line and the first stdout line is the translation.
class ExternalCommandPivot final : public PivotTranslator {
  public:
    explicit ExternalCommandPivot(std::string command_template, double timeout_seconds = 30.0)
        : template_(std::move(command_template)), timeout_(timeout_seconds) {
        if (template_.empty())
            throw ConfigError("pivot command is empty");
    }

    std::string translate(const std::string &text, const std::string &source_tag,
                          const std::string &pivot_tag) override {
        const std::string cmd = replace_all(replace_all(template_, "{src}", source_tag), "{pivot}", pivot_tag);
        int in[2], out[2];
        if (pipe(in) != 0)
            throw Error("pipe failed");
        if (pipe(out) != 0) {
            close(in[0]);
            close(in[1]);
            throw Error("pipe failed");
        }
        const pid_t pid = fork();
        if (pid < 0)
            throw Error("fork failed");
        if (pid == 0) {
            dup2(in[0], STDIN_FILENO);
            dup2(out[1], STDOUT_FILENO);
            close(in[0]);
            close(in[1]);
            close(out[0]);
            close(out[1]);
            execl("/bin/sh", "sh", "-c", cmd.c_str(), static_cast<char *>(nullptr));
            _exit(127);
        }
        close(in[0]);
        close(out[1]);
        const std::string payload = text + "\n";
        std::signal(SIGPIPE, SIG_IGN);
        [[maybe_unused]] auto written = write(in[1], payload.data(), payload.size());
        close(in[1]);

        std::string reply;
        const auto deadline = std::chrono::steady_clock::now() + std::chrono::duration<double>(timeout_);
        bool timed_out = false;
        char buf[4096];
        for (;;) {
            const auto left = std::chrono::duration_cast<std::chrono::milliseconds>(deadline -
                                                                                   std::chrono::steady_clock::now());
            if (left.count() <= 0) {
                timed_out = true;
                break;
            }
            pollfd pfd{out[0], POLLIN, 0};
            const int r = poll(&pfd, 1, static_cast<int>(left.count()));
            if (r == 0) {
                timed_out = true;
                break;
            }
            if (r < 0)
                continue;
            const auto n = read(out[0], buf, sizeof buf);
            if (n <= 0)
                break;
            reply.append(buf, static_cast<std::size_t>(n));
        }
        close(out[0]);
        if (timed_out)
            kill(pid, SIGKILL);
        int status = 0;
        waitpid(pid, &status, 0);
        if (timed_out)
            throw Error("pivot command timed out: " + cmd);
        if (!WIFEXITED(status) || WEXITSTATUS(status) != 0)
            throw Error("pivot command failed: " + cmd);
        if (auto nl = reply.find('\n'); nl != std::string::npos)
            reply.resize(nl);
        if (!reply.empty() && reply.back() == '\r')
            reply.pop_back();
        return reply;
    }

  private:
    std::string template_;
    double timeout_;
};

struct AugmentReport {
    std::size_t attempted = 0;
    std::size_t emitted = 0;
    std::size_t unchanged = 0;  ///< output equal to the original side
    std::size_t empty = 0;      ///< empty output, dropped
    std::size_t duplicates = 0; ///< exact duplicates of an earlier silver pair
    std::size_t failures = 0;
    std::vector<std::string> errors; ///< "<id>: <message>" per failed pair
};

namespace detail {

inline void keep_unique(std::vector<ParallelPair> &pairs, AugmentReport &report) {
    std::set<std::pair<std::string, std::string>> seen;
    std::vector<ParallelPair> out;
    for (auto &p : pairs) {
        if (!seen.emplace(p.gloss_string(), p.text).second) {
            ++report.duplicates;
            continue;
        }
        out.push_back(std::move(p));
    }
    pairs = std::move(out);
}

} // namespace detail

/// `reverse` maps each text to a generated gloss string. A silver pair is emitted when the
/// generated gloss differs from the original one.
inline std::vector<ParallelPair>
back_translate_augment(const CorpusSplit &gold, const std::function<std::string(const std::string &)> &reverse,
                       AugmentReport *report = nullptr, std::size_t threads = 1) {
    AugmentReport local;
    AugmentReport &r = report ? *report : local;
    r = {};
    std::vector<std::string> generated(gold.size());
    parallel_for(gold.size(), threads, [&](std::size_t i) { generated[i] = collapse_whitespace(reverse(gold[i].text)); });
    std::vector<ParallelPair> silver;
    for (std::size_t i = 0; i < gold.size(); ++i) {
        ++r.attempted;
        const auto &p = gold[i];
        if (generated[i].empty()) {
            ++r.empty;
            continue;
        }
        if (generated[i] == p.gloss_string()) {
            ++r.unchanged;
            continue;
        }
        silver.push_back({"bt:" + p.id, split_whitespace(generated[i]), p.text, Origin::silver_backtranslation});
    }
    detail::keep_unique(silver, r);
    r.emitted = silver.size();
    return silver;
}

/// Back-translation through a trained text -> gloss model.
template <class Model>
std::vector<ParallelPair> back_translate_augment(const CorpusSplit &gold, const Model &reverse_model,
                                                 const BpeModel &tok, const DecodeConfig &cfg,
                                                 AugmentReport *report = nullptr, std::size_t threads = 1) {
    std::vector<std::string> texts;
    for (const auto &p : gold)
        texts.push_back(p.text);
    auto glosses = translate(reverse_model, tok, texts, cfg, threads);
    std::size_t k = 0;
    return back_translate_augment(
        gold, [&](const std::string &) { return glosses[k++]; }, report, 1);
}

/// Round-trips each text through the pivot language. Per-pair failures are recorded; more
/// than half failing aborts the run.
inline std::vector<ParallelPair> paraphrase_augment(const CorpusSplit &gold, PivotTranslator &pivot,
                                                    const std::string &source_tag, const std::string &pivot_tag,
                                                    AugmentReport *report = nullptr, std::size_t threads = 1) {
    AugmentReport local;
    AugmentReport &r = report ? *report : local;
    r = {};
    std::vector<std::string> outputs(gold.size());
    std::vector<std::string> errors(gold.size());
    std::vector<char> failed(gold.size(), 0);
    parallel_for(gold.size(), threads, [&](std::size_t i) {
        try {
            outputs[i] = normalize_text(
                pivot.translate(pivot.translate(gold[i].text, source_tag, pivot_tag), pivot_tag, source_tag));
        } catch (const std::exception &e) {
            failed[i] = 1;
            errors[i] = gold[i].id + ": " + e.what();
        }
    });
    std::vector<ParallelPair> silver;
    for (std::size_t i = 0; i < gold.size(); ++i) {
        ++r.attempted;
        const auto &p = gold[i];
        if (failed[i]) {
            ++r.failures;
            r.errors.push_back(errors[i]);
            continue;
        }
        if (outputs[i].empty()) {
            ++r.empty;
            continue;
        }
        if (outputs[i] == p.text) {
            ++r.unchanged;
            continue;
        }
        silver.push_back({"para:" + p.id, p.gloss, outputs[i], Origin::silver_paraphrase});
    }
    if (2 * r.failures > r.attempted)
        throw Error("paraphrasing aborted: " + std::to_string(r.failures) + " of " + std::to_string(r.attempted) +
                    " pivot calls failed");
    detail::keep_unique(silver, r);
    r.emitted = silver.size();
    return silver;
}

/// Trains `model` as a text -> gloss translator. `plan` must be built over the gloss side.
template <class Model>
TrainResult train_reverse_model(Model &model, const BpeModel &tok, const SoftLabelPlan &plan,
                                const CorpusSplit &gold_train, const CorpusSplit &dev, const TrainConfig &cfg) {
    return train(model, tok, plan, swap_sides(gold_train), swap_sides(dev), cfg);
}

} // namespace glosstr
