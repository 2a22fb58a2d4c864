#pragma once

// Loss, training loop with early stopping, evaluation, stratified splits,
// cross-validation and the ablation harness.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <iomanip>
#include <numeric>
#include <optional>
#include <random>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "mhgnn/error.hpp"
#include "mhgnn/feature_io.hpp"
#include "mhgnn/metrics.hpp"
#include "mhgnn/model.hpp"
#include "mhgnn/optim.hpp"
#include "mhgnn/seed.hpp"

namespace mhgnn {

inline constexpr double kProbabilityFloor = 1e-12;

/// -sum_c h_c log(max(h_hat_c, 1e-12)) scaled by `weight`; returns [1, 1].
template <typename T>
Tensor<T> cross_entropy(const Tensor<T>& probs, std::array<T, 2> one_hot, T weight = T(1)) {
    if (probs.rows() != 1 || probs.cols() != 2)
        throw ShapeError("cross_entropy: probabilities must be [1, 2], got " + to_string(probs.shape()));
    const bool valid = (one_hot[0] == T(1) && one_hot[1] == T(0)) || (one_hot[0] == T(0) && one_hot[1] == T(1));
    if (!valid) throw ConfigError("cross_entropy: target is not one-hot");
    auto logp = ops::log(probs, static_cast<T>(kProbabilityFloor));
    auto picked = ops::row_sum(ops::mul(logp, Tensor<T>({1, 2}, {one_hot[0], one_hot[1]})), 1);
    return ops::scale(picked, -weight);
}

template <typename T>
Tensor<T> cross_entropy(const Tensor<T>& probs, int label, T weight = T(1)) {
    if (label != 0 && label != 1) throw ConfigError("cross_entropy: label must be 0 or 1");
    return cross_entropy(probs, label == 1 ? std::array<T, 2>{T(0), T(1)} : std::array<T, 2>{T(1), T(0)}, weight);
}

struct Sample {
    std::string video_id;
    int label = 0;
    SegmentFeatures features;
};

using Dataset = std::vector<Sample>;

/// Loads every manifest entry. Raw widths come from `expected`, or from the
/// first feature file, and must agree across the dataset.
inline Dataset load_dataset(const DatasetManifest& manifest, std::optional<FeatureWidths> expected = std::nullopt) {
    if (manifest.entries.empty()) throw DataError("dataset: manifest is empty");
    if (!expected) expected = peek_feature_widths(manifest.resolve(manifest.entries.front()));
    Dataset ds;
    ds.reserve(manifest.entries.size());
    for (const auto& e : manifest.entries)
        ds.push_back({e.video_id, e.label, read_features(manifest.resolve(e), expected)});
    return ds;
}

inline std::vector<int> labels_of(const Dataset& ds) {
    std::vector<int> y;
    y.reserve(ds.size());
    for (const auto& s : ds) y.push_back(s.label);
    return y;
}

struct TrainConfig {
    double learning_rate = 1e-3;
    std::size_t batch_size = 8;
    std::size_t max_epochs = 100;
    std::size_t patience = 10;
    std::uint64_t seed = 0;
    OptimizerKind optimizer = OptimizerKind::adam;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double adam_eps = 1e-8;
    double split_train = 0.70;
    double split_val = 0.10;
    double split_test = 0.20;
    /// Inverse-frequency class weights in the loss; off keeps the plain loss.
    bool class_weighting = false;

    void validate() const {
        if (batch_size == 0) throw ConfigError("train: batch_size must be at least 1");
        if (max_epochs == 0) throw ConfigError("train: max_epochs must be at least 1");
        if (!(learning_rate >= 0.0)) throw ConfigError("train: learning_rate must be non-negative");
        if (split_train <= 0.0 || split_val < 0.0 || split_test < 0.0)
            throw ConfigError("train: split fractions must be non-negative with a positive train share");
        if (std::abs(split_train + split_val + split_test - 1.0) > 1e-9)
            throw ConfigError("train: split fractions must sum to 1");
    }

    [[nodiscard]] nlohmann::ordered_json to_json() const {
        nlohmann::ordered_json j;
        j["learning_rate"] = learning_rate;
        j["batch_size"] = batch_size;
        j["max_epochs"] = max_epochs;
        j["patience"] = patience;
        j["seed"] = seed;
        j["optimizer"] = to_string(optimizer);
        j["beta1"] = beta1;
        j["beta2"] = beta2;
        j["adam_eps"] = adam_eps;
        j["split_train"] = split_train;
        j["split_val"] = split_val;
        j["split_test"] = split_test;
        j["class_weighting"] = class_weighting;
        return j;
    }
};

/// k disjoint folds; each class is shuffled and dealt round-robin so every
/// fold holds floor or ceil of its proportional share of each class.
inline std::vector<std::vector<std::size_t>> stratified_kfold(std::span<const int> labels, std::size_t k,
                                                              std::uint64_t seed) {
    if (k < 2) throw ConfigError("stratified_kfold: k must be at least 2");
    std::array<std::vector<std::size_t>, 2> by_class;
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (labels[i] != 0 && labels[i] != 1) throw DataError("stratified_kfold: label outside {0, 1}");
        by_class[labels[i]].push_back(i);
    }
    for (int c = 0; c < 2; ++c)
        if (by_class[c].size() < k)
            throw ConfigError("stratified_kfold: class " + std::to_string(c) + " has " +
                              std::to_string(by_class[c].size()) + " samples, fewer than k=" + std::to_string(k));
    std::mt19937_64 rng(seed);
    std::vector<std::vector<std::size_t>> folds(k);
    std::size_t next = 0;
    for (auto& members : by_class) {
        std::shuffle(members.begin(), members.end(), rng);
        for (auto i : members) folds[next++ % k].push_back(i);
    }
    for (auto& f : folds) std::sort(f.begin(), f.end());
    return folds;
}

struct Split {
    std::vector<std::size_t> train;
    std::vector<std::size_t> val;
    std::vector<std::size_t> test;
};

/// Per-class shuffled split of `indices` by the given fractions (test and
/// validation counts rounded per class, the rest trains).
inline Split stratified_split(std::span<const int> labels, std::span<const std::size_t> indices, double val_fraction,
                              double test_fraction, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    Split s;
    for (int c = 0; c < 2; ++c) {
        std::vector<std::size_t> members;
        for (auto i : indices)
            if (labels[i] == c) members.push_back(i);
        std::shuffle(members.begin(), members.end(), rng);
        const double n = static_cast<double>(members.size());
        const auto n_test = static_cast<std::size_t>(std::lround(n * test_fraction));
        const auto n_val = std::min(members.size() - n_test, static_cast<std::size_t>(std::lround(n * val_fraction)));
        for (std::size_t j = 0; j < members.size(); ++j) {
            if (j < n_test)
                s.test.push_back(members[j]);
            else if (j < n_test + n_val)
                s.val.push_back(members[j]);
            else
                s.train.push_back(members[j]);
        }
    }
    for (auto* v : {&s.train, &s.val, &s.test}) std::sort(v->begin(), v->end());
    return s;
}

struct EpochRecord {
    std::size_t epoch = 0;
    double train_loss = 0.0;
    double val_loss = 0.0;
    Metrics val;
    bool improved = false;
};

struct TrainResult {
    /// Parameters of the best validation epoch.
    ModelParams<float> params;
    std::vector<EpochRecord> history;
    std::size_t best_epoch = 0;
    double best_val_f1 = 0.0;
};

struct EvalResult {
    Metrics metrics;
    double mean_loss = 0.0;
    std::vector<int> predicted;
    std::vector<ForwardOutput> outputs;
};

inline EvalResult evaluate(const ModelParams<float>& params, const ModelConfig& config, const Dataset& ds,
                           std::span<const std::size_t> indices) {
    if (indices.empty()) throw ConfigError("evaluate: empty split");
    EvalResult r;
    std::vector<int> labels;
    double loss = 0.0;
    for (auto i : indices) {
        auto t = forward_tensors(ds[i].features, params, config);
        loss += static_cast<double>(cross_entropy(t.probs, ds[i].label).item());
        r.outputs.push_back(to_output(t, config.n_segments));
        r.predicted.push_back(r.outputs.back().predicted_label());
        labels.push_back(ds[i].label);
    }
    r.mean_loss = loss / static_cast<double>(indices.size());
    r.metrics = compute_metrics(r.predicted, labels);
    return r;
}

inline std::array<float, 2> class_weights(const Dataset& ds, std::span<const std::size_t> train, bool enabled) {
    if (!enabled) return {1.0f, 1.0f};
    std::array<double, 2> count{0, 0};
    for (auto i : train) count[ds[i].label] += 1;
    const double n = count[0] + count[1];
    return {static_cast<float>(n / (2.0 * count[0])), static_cast<float>(n / (2.0 * count[1]))};
}

/// Mini-batch training on `train`, model selection on `val`.
///
/// An epoch improves when validation F1 rises, or ties with a lower
/// validation loss. Training stops once more than `patience` consecutive
/// epochs fail to improve; the best epoch's parameters are returned.
inline TrainResult fit(const Dataset& ds, std::span<const std::size_t> train, std::span<const std::size_t> val,
                       const ModelConfig& config, const TrainConfig& tc) {
    config.validate();
    tc.validate();
    if (train.empty()) throw DataError("train: empty training split");
    if (val.empty()) throw DataError("train: empty validation split");
    std::array<std::size_t, 2> count{0, 0};
    for (auto i : train) ++count[ds[i].label == 1 ? 1 : 0];
    if (count[0] == 0 || count[1] == 0) throw DataError("train: training split holds a single class");
    for (auto i : train)
        if (ds[i].features.n_segments != config.n_segments)
            throw DataError("train: video '" + ds[i].video_id + "' has " + std::to_string(ds[i].features.n_segments) +
                            " segments, model expects " + std::to_string(config.n_segments));

    auto params = init_params<float>(config, derive_seed(tc.seed, 1));
    auto optimizer = make_optimizer(tc.optimizer, tc.learning_rate, tc.beta1, tc.beta2, tc.adam_eps);
    const auto weights = class_weights(ds, train, tc.class_weighting);
    std::mt19937_64 shuffle_rng(derive_seed(tc.seed, 2));
    std::mt19937_64 dropout_rng(derive_seed(tc.seed, 3));
    ForwardOptions fopts;
    if (config.dropout > 0.0) fopts.dropout_rng = &dropout_rng;

    TrainResult result;
    result.params = params.clone();
    double best_f1 = -1.0;
    double best_loss = std::numeric_limits<double>::infinity();
    std::size_t since_best = 0;
    std::vector<std::size_t> order(train.begin(), train.end());

    for (std::size_t epoch = 0; epoch < tc.max_epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), shuffle_rng);
        double epoch_loss = 0.0;
        for (std::size_t start = 0; start < order.size(); start += tc.batch_size) {
            const std::size_t end = std::min(order.size(), start + tc.batch_size);
            std::vector<std::vector<double>> grads(params.size());
            for (std::size_t p = 0; p < params.size(); ++p) grads[p].assign(params.tensors()[p].size(), 0.0);
            for (std::size_t b = start; b < end; ++b) {
                const auto& sample = ds[order[b]];
                auto t = forward_tensors(sample.features, params, config, fopts);
                auto loss = cross_entropy(t.probs, sample.label, weights[sample.label]);
                const double lv = static_cast<double>(loss.item());
                if (!std::isfinite(lv))
                    throw NumericError("train: loss diverged (non-finite) at epoch " + std::to_string(epoch) +
                                       " on video '" + sample.video_id + "'");
                epoch_loss += lv;
                auto g = gradients(loss, params.tensors());
                for (std::size_t p = 0; p < params.size(); ++p)
                    for (std::size_t j = 0; j < g.values[p].size(); ++j) grads[p][j] += g.values[p][j];
            }
            const double inv = 1.0 / static_cast<double>(end - start);
            for (auto& gp : grads)
                for (auto& x : gp) x *= inv;
            optimizer->step(params, grads);
        }

        EpochRecord rec;
        rec.epoch = epoch;
        rec.train_loss = epoch_loss / static_cast<double>(order.size());
        const auto ev = evaluate(params, config, ds, val);
        rec.val_loss = ev.mean_loss;
        rec.val = ev.metrics;
        if (!std::isfinite(rec.val_loss)) throw NumericError("train: validation loss is non-finite");
        rec.improved = rec.val.f1 > best_f1 || (rec.val.f1 == best_f1 && rec.val_loss < best_loss);
        result.history.push_back(rec);
        if (rec.improved) {
            best_f1 = rec.val.f1;
            best_loss = rec.val_loss;
            result.best_epoch = epoch;
            result.best_val_f1 = best_f1;
            result.params = params.clone();
            since_best = 0;
        } else if (++since_best > tc.patience) {
            break;
        }
    }
    return result;
}

struct TrainRun {
    TrainResult trained;
    Split split;
    EvalResult test;
};

/// Stratified train/val/test split by the configured fractions, then fit and test.
inline TrainRun train(const Dataset& ds, const ModelConfig& config, const TrainConfig& tc) {
    tc.validate();
    if (ds.empty()) throw DataError("train: empty dataset");
    const auto labels = labels_of(ds);
    std::vector<std::size_t> all(ds.size());
    std::iota(all.begin(), all.end(), std::size_t{0});
    TrainRun run;
    run.split = stratified_split(labels, all, tc.split_val, tc.split_test, derive_seed(tc.seed, 100));
    run.trained = fit(ds, run.split.train, run.split.val, config, tc);
    if (!run.split.test.empty()) run.test = evaluate(run.trained.params, config, ds, run.split.test);
    return run;
}

struct FoldResult {
    std::size_t repeat = 0;
    std::size_t fold = 0;
    Metrics test;
    std::size_t epochs = 0;
    std::size_t best_epoch = 0;
};

struct CvReport {
    std::vector<FoldResult> folds;
    Metrics mean;

    [[nodiscard]] nlohmann::ordered_json to_json() const {
        nlohmann::ordered_json j;
        j["per_fold"] = nlohmann::ordered_json::array();
        for (const auto& f : folds) {
            auto row = f.test.to_json();
            row["repeat"] = f.repeat;
            row["fold"] = f.fold;
            row["epochs"] = f.epochs;
            row["best_epoch"] = f.best_epoch;
            j["per_fold"].push_back(row);
        }
        j["mean"] = mean.to_json();
        return j;
    }
};

/// cross_validation: stratified k folds, each fold the test set once, the
/// rest split train/val in the configured train:val proportion.
/// holdout: a fresh stratified train/val/test split per repeat.
/// Both average test metrics over all runs.
struct EvalProtocol {
    enum class Kind { cross_validation, holdout };
    Kind kind = Kind::cross_validation;
    std::size_t folds = 5;
    std::size_t repeats = 1;
};

inline std::string_view to_string(EvalProtocol::Kind k) {
    return k == EvalProtocol::Kind::cross_validation ? "cv" : "holdout";
}
inline EvalProtocol::Kind parse_protocol(std::string_view s) {
    if (s == "cv") return EvalProtocol::Kind::cross_validation;
    if (s == "holdout") return EvalProtocol::Kind::holdout;
    throw ConfigError("unknown protocol '" + std::string(s) + "' (cv | holdout)");
}

inline CvReport run_cv(const Dataset& ds, const ModelConfig& config, const TrainConfig& tc, std::size_t k = 5,
                       std::size_t repeats = 1) {
    if (k < 2) throw ConfigError("run_cv: k must be at least 2");
    if (repeats == 0) throw ConfigError("run_cv: repeats must be at least 1");
    tc.validate();
    const auto labels = labels_of(ds);
    const double val_share = tc.split_val / (tc.split_train + tc.split_val);
    CvReport report;
    std::vector<Metrics> rows;
    for (std::size_t r = 0; r < repeats; ++r) {
        const auto folds = stratified_kfold(labels, k, derive_seed(tc.seed, 200, r));
        for (std::size_t f = 0; f < k; ++f) {
            std::vector<std::size_t> rest;
            for (std::size_t g = 0; g < k; ++g)
                if (g != f) rest.insert(rest.end(), folds[g].begin(), folds[g].end());
            std::sort(rest.begin(), rest.end());
            const auto split = stratified_split(labels, rest, val_share, 0.0, derive_seed(tc.seed, 300 + r, f));
            TrainConfig run_tc = tc;
            run_tc.seed = derive_seed(tc.seed, 400 + r, f);
            const auto trained = fit(ds, split.train, split.val, config, run_tc);
            FoldResult fr{r, f, evaluate(trained.params, config, ds, folds[f]).metrics, trained.history.size(),
                          trained.best_epoch};
            rows.push_back(fr.test);
            report.folds.push_back(fr);
        }
    }
    report.mean = mean_metrics(rows);
    return report;
}

inline CvReport run_holdout(const Dataset& ds, const ModelConfig& config, const TrainConfig& tc,
                            std::size_t repeats = 1) {
    if (repeats == 0) throw ConfigError("run_holdout: repeats must be at least 1");
    tc.validate();
    if (tc.split_test <= 0.0) throw ConfigError("run_holdout: test fraction must be positive");
    const auto labels = labels_of(ds);
    std::vector<std::size_t> all(ds.size());
    std::iota(all.begin(), all.end(), std::size_t{0});
    CvReport report;
    std::vector<Metrics> rows;
    for (std::size_t r = 0; r < repeats; ++r) {
        const auto split = stratified_split(labels, all, tc.split_val, tc.split_test, derive_seed(tc.seed, 500, r));
        TrainConfig run_tc = tc;
        run_tc.seed = derive_seed(tc.seed, 600, r);
        const auto trained = fit(ds, split.train, split.val, config, run_tc);
        FoldResult fr{r, 0, evaluate(trained.params, config, ds, split.test).metrics, trained.history.size(),
                      trained.best_epoch};
        rows.push_back(fr.test);
        report.folds.push_back(fr);
    }
    report.mean = mean_metrics(rows);
    return report;
}

inline CvReport run_protocol(const Dataset& ds, const ModelConfig& config, const TrainConfig& tc,
                             const EvalProtocol& protocol) {
    return protocol.kind == EvalProtocol::Kind::cross_validation ? run_cv(ds, config, tc, protocol.folds, protocol.repeats)
                                                                 : run_holdout(ds, config, tc, protocol.repeats);
}

struct AblationRow {
    std::string label;
    Ablation variant = Ablation::full;
    CvReport report;
};

inline constexpr std::array<std::pair<Ablation, std::string_view>, 4> kAblationRows = {{
    {Ablation::no_graph, "No Graph"},
    {Ablation::instance_only, "Only Instance Graph"},
    {Ablation::weight_only, "Only Weight Graph"},
    {Ablation::full, "Full Model"},
}};

/// Every variant under the same protocol and seeds, hence the same folds.
inline std::vector<AblationRow> run_ablation(const Dataset& ds, const ModelConfig& base, const TrainConfig& tc,
                                             const EvalProtocol& protocol) {
    std::vector<AblationRow> rows;
    for (const auto& [variant, label] : kAblationRows) {
        ModelConfig c = base;
        c.ablation = variant;
        rows.push_back({std::string(label), variant, run_protocol(ds, c, tc, protocol)});
    }
    return rows;
}

/// Aligned text table: Model | Accuracy | F1-score | Precision | Recall, three decimals.
inline std::string format_metrics_table(std::span<const std::pair<std::string, Metrics>> rows) {
    std::size_t width = 5;
    for (const auto& [label, _] : rows) width = std::max(width, label.size());
    std::ostringstream os;
    os << std::left << std::setw(static_cast<int>(width)) << "Model" << "  Accuracy  F1-score  Precision  Recall\n";
    os << std::fixed << std::setprecision(3);
    for (const auto& [label, m] : rows) {
        os << std::left << std::setw(static_cast<int>(width)) << label << "  " << std::setw(8) << m.accuracy << "  "
           << std::setw(8) << m.f1 << "  " << std::setw(9) << m.precision << "  " << m.recall << '\n';
    }
    return os.str();
}

inline std::string format_cv_table(const CvReport& report, const std::string& mean_label = "Mean") {
    std::vector<std::pair<std::string, Metrics>> rows;
    for (const auto& f : report.folds)
        rows.emplace_back((report.folds.size() > 1 || f.repeat > 0 ? "Run " + std::to_string(f.repeat + 1) + "/Fold " +
                                                                         std::to_string(f.fold + 1)
                                                                   : std::string("Run 1")),
                          f.test);
    rows.emplace_back(mean_label, report.mean);
    return format_metrics_table(rows);
}

inline std::string format_ablation_table(std::span<const AblationRow> rows) {
    std::vector<std::pair<std::string, Metrics>> table;
    for (const auto& r : rows) table.emplace_back(r.label, r.report.mean);
    return format_metrics_table(table);
}

inline nlohmann::ordered_json ablation_json(std::span<const AblationRow> rows) {
    nlohmann::ordered_json j = nlohmann::ordered_json::array();
    for (const auto& r : rows) {
        nlohmann::ordered_json row;
        row["model"] = r.label;
        row["ablation"] = to_string(r.variant);
        auto rep = r.report.to_json();
        row["per_fold"] = rep["per_fold"];
        row["mean"] = rep["mean"];
        j.push_back(row);
    }
    return j;
}

}  // namespace mhgnn
