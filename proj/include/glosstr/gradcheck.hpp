#pragma once

#include <cmath>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "glosstr/errors.hpp"
#include "glosstr/model.hpp"

namespace glosstr {

struct GradCheckReport {
    std::size_t checked = 0;
    double max_relative_error = 0.0;
    std::string worst_parameter;
    Index worst_index = -1;
    double worst_analytic = 0.0;
    double worst_numeric = 0.0;
};

/// Labelled batch used by the gradient check: one label row per target position of each example.
struct LabelledExample {
    Example example;
    std::vector<LabelRow> labels;
};

/// Token-averaged loss over the batch; gradients added into `grads` when given.
template <class Model>
double batch_loss(const Model &model, const std::vector<LabelledExample> &batch,
                  nn::GradSet<typename Model::Scalar> *grads) {
    using T = typename Model::Scalar;
    std::size_t tokens = 0;
    for (const auto &b : batch)
        for (TokenId t : b.example.tgt_out)
            tokens += t != kPad;
    if (tokens == 0)
        return 0.0;
    const T scale = T(1) / static_cast<T>(tokens);
    double loss = 0;
    for (const auto &b : batch)
        loss += model.loss_and_grad(b.example, std::span<const LabelRow>(b.labels), grads, scale, nullptr);
    return loss / static_cast<double>(tokens);
}

/// Relative error |a - n| / max(|a|, |n|, floor); the floor keeps vanishing coordinates on an absolute scale.
inline double relative_error(double analytic, double numeric, double floor = 1e-6) {
    return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
}

inline constexpr std::size_t kGradCheckParameterCap = 50000;

/// Central differences on every trainable coordinate (optionally filtered by parameter name).
template <class Model>
GradCheckReport grad_check(Model &model, const std::vector<LabelledExample> &batch, double epsilon = 1e-5,
                           const std::function<bool(const std::string &)> &select = {},
                           std::size_t parameter_cap = kGradCheckParameterCap) {
    auto &p = model.params();
    std::vector<std::size_t> chosen;
    std::size_t total = 0;
    for (std::size_t i = 0; i < p.size(); ++i) {
        if (!p.trainable(i) || (select && !select(p.info(i).name)))
            continue;
        chosen.push_back(i);
        total += static_cast<std::size_t>(p.value(i).size());
    }
    if (total > parameter_cap)
        throw ConfigError("gradient check over " + std::to_string(total) + " parameters exceeds the cap of " +
                          std::to_string(parameter_cap) + "; use a smaller model configuration");

    GradCheckReport report;
    if (chosen.empty())
        return report;
    auto grads = p.zeros_like();
    batch_loss(model, batch, &grads);
    using T = typename Model::Scalar;
    for (std::size_t i : chosen) {
        auto &v = p.value(i);
        for (Index k = 0; k < v.size(); ++k) {
            const T saved = v.data()[k];
            v.data()[k] = saved + static_cast<T>(epsilon);
            const double up = batch_loss(model, batch, nullptr);
            v.data()[k] = saved - static_cast<T>(epsilon);
            const double down = batch_loss(model, batch, nullptr);
            v.data()[k] = saved;
            const double numeric = (up - down) / (2 * epsilon);
            const double analytic = static_cast<double>(grads[i].data()[k]);
            const double err = relative_error(analytic, numeric);
            ++report.checked;
            if (err > report.max_relative_error || report.worst_index < 0) {
                report.max_relative_error = err;
                report.worst_parameter = p.info(i).name;
                report.worst_index = k;
                report.worst_analytic = analytic;
                report.worst_numeric = numeric;
            }
        }
    }
    return report;
}

} // namespace glosstr
