#pragma once

#include <cstddef>
#include <span>
#include <string>

#include <nlohmann/json.hpp>

#include "mhgnn/error.hpp"

namespace mhgnn {

/// Binary classification metrics with hate (label 1) as the positive class.
struct Metrics {
    std::size_t tp = 0;
    std::size_t fp = 0;
    std::size_t tn = 0;
    std::size_t fn = 0;
    double accuracy = 0.0;
    double precision = 0.0;
    double recall = 0.0;
    double f1 = 0.0;
    // Set when the matching denominator was zero and the value was defined as 0.
    bool precision_undefined = false;
    bool recall_undefined = false;

    [[nodiscard]] std::size_t total() const { return tp + fp + tn + fn; }

    [[nodiscard]] nlohmann::ordered_json to_json() const {
        nlohmann::ordered_json j;
        j["accuracy"] = accuracy;
        j["f1"] = f1;
        j["precision"] = precision;
        j["recall"] = recall;
        j["tp"] = tp;
        j["fp"] = fp;
        j["tn"] = tn;
        j["fn"] = fn;
        return j;
    }
};

inline Metrics metrics_from_counts(std::size_t tp, std::size_t fp, std::size_t tn, std::size_t fn) {
    Metrics m{tp, fp, tn, fn};
    const double total = static_cast<double>(m.total());
    m.accuracy = total > 0 ? static_cast<double>(tp + tn) / total : 0.0;
    if (tp + fp > 0)
        m.precision = static_cast<double>(tp) / static_cast<double>(tp + fp);
    else
        m.precision_undefined = true;
    if (tp + fn > 0)
        m.recall = static_cast<double>(tp) / static_cast<double>(tp + fn);
    else
        m.recall_undefined = true;
    m.f1 = m.precision + m.recall > 0 ? 2.0 * m.precision * m.recall / (m.precision + m.recall) : 0.0;
    return m;
}

inline Metrics compute_metrics(std::span<const int> predicted, std::span<const int> labels) {
    if (predicted.size() != labels.size())
        throw ConfigError("metrics: " + std::to_string(predicted.size()) + " predictions for " +
                          std::to_string(labels.size()) + " labels");
    if (labels.empty()) throw ConfigError("metrics: empty split");
    std::size_t tp = 0, fp = 0, tn = 0, fn = 0;
    for (std::size_t i = 0; i < labels.size(); ++i) {
        const bool p = predicted[i] == 1;
        const bool y = labels[i] == 1;
        tp += p && y;
        fp += p && !y;
        tn += !p && !y;
        fn += !p && y;
    }
    return metrics_from_counts(tp, fp, tn, fn);
}

/// Arithmetic mean of the four rates; counts are summed.
inline Metrics mean_metrics(std::span<const Metrics> rows) {
    Metrics out;
    if (rows.empty()) return out;
    for (const auto& m : rows) {
        out.tp += m.tp;
        out.fp += m.fp;
        out.tn += m.tn;
        out.fn += m.fn;
        out.accuracy += m.accuracy;
        out.precision += m.precision;
        out.recall += m.recall;
        out.f1 += m.f1;
        out.precision_undefined = out.precision_undefined || m.precision_undefined;
        out.recall_undefined = out.recall_undefined || m.recall_undefined;
    }
    const double n = static_cast<double>(rows.size());
    out.accuracy /= n;
    out.precision /= n;
    out.recall /= n;
    out.f1 /= n;
    return out;
}

}  // namespace mhgnn
