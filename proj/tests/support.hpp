#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "mhgnn/mhgnn.hpp"

namespace testing_support {

using namespace mhgnn;

inline Tensor<double> random_tensor(Shape s, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0,
                                    bool requires_grad = true) {
    std::uniform_real_distribution<double> u(lo, hi);
    std::vector<double> v(s.size());
    for (auto& x : v) x = u(rng);
    return Tensor<double>(s, std::move(v), requires_grad);
}

struct GradCheck {
    double max_rel_error = 0.0;
    std::string worst;
};

/// Central finite differences of a scalar function of leaf tensors against
/// the analytic gradients. Relative error uses max(|a|, |n|, floor).
inline GradCheck check_gradients(const std::function<Tensor<double>()>& loss_fn, std::vector<Tensor<double>> params,
                                 const std::vector<std::string>& names = {}, double h = 1e-5, double floor = 1e-6) {
    auto loss = loss_fn();
    auto g = gradients(loss, std::span<const Tensor<double>>(params));
    GradCheck out;
    for (std::size_t p = 0; p < params.size(); ++p) {
        auto values = params[p].leaf_values();
        for (std::size_t j = 0; j < values.size(); ++j) {
            const double saved = values[j];
            values[j] = saved + h;
            const double up = loss_fn().item();
            values[j] = saved - h;
            const double down = loss_fn().item();
            values[j] = saved;
            const double numeric = (up - down) / (2.0 * h);
            const double analytic = g.values[p][j];
            const double denom = std::max({std::abs(numeric), std::abs(analytic), floor});
            const double rel = std::abs(numeric - analytic) / denom;
            if (rel > out.max_rel_error) {
                out.max_rel_error = rel;
                out.worst = (p < names.size() ? names[p] : "param " + std::to_string(p)) + "[" + std::to_string(j) +
                            "] analytic " + std::to_string(analytic) + " numeric " + std::to_string(numeric);
            }
        }
    }
    return out;
}

/// N=4, K=2, D=6, one GNN layer, small raw widths.
inline ModelConfig tiny_config(GnnKind kind = GnnKind::attention) {
    ModelConfig c;
    c.n_segments = 4;
    c.n_instances = 2;
    c.d = 6;
    c.gnn_kind = kind;
    c.gnn_layers = 1;
    c.gnn_hidden = 6;
    c.weight_head_hidden = 5;
    c.classifier_hidden = 7;
    c.raw_widths = {5, 3, 4};
    return c;
}

/// Config sized for the synthetic planted datasets.
inline ModelConfig synthetic_config(const SynthSpec& spec) {
    ModelConfig c;
    c.n_segments = spec.n_segments;
    c.n_instances = spec.n_instances;
    c.d = 16;
    c.gnn_hidden = 16;
    c.weight_head_hidden = 16;
    c.classifier_hidden = 16;
    c.raw_widths = spec.widths;
    return c;
}

inline SegmentFeatures random_features(std::size_t n, FeatureWidths w, std::mt19937_64& rng, double scale = 1.0) {
    std::normal_distribution<float> g(0.0f, static_cast<float>(scale));
    SegmentFeatures f;
    f.n_segments = n;
    f.widths = w;
    for (auto m : kModalities) {
        auto& b = f.block(m);
        b.resize(n * w.of(m));
        for (auto& x : b) x = g(rng);
    }
    return f;
}

/// Mean-difference linear probe on per-video mean raw features, scored by
/// stratified k-fold: classify by the sign of (x - midpoint) . (mu1 - mu0).
inline double linear_probe_accuracy(const Dataset& ds, std::size_t k, std::uint64_t seed) {
    const auto labels = labels_of(ds);
    std::vector<std::vector<double>> x;
    for (const auto& s : ds) {
        std::vector<double> v;
        for (auto m : kModalities) {
            const auto w = s.features.widths.of(m);
            const auto& b = s.features.block(m);
            std::vector<double> mean(w, 0.0);
            for (std::size_t r = 0; r < s.features.n_segments; ++r)
                for (std::size_t c = 0; c < w; ++c) mean[c] += b[r * w + c];
            for (auto& e : mean) v.push_back(e / static_cast<double>(s.features.n_segments));
        }
        x.push_back(std::move(v));
    }
    const auto folds = stratified_kfold(labels, k, seed);
    std::size_t correct = 0;
    for (std::size_t f = 0; f < k; ++f) {
        std::vector<bool> held(ds.size(), false);
        for (auto i : folds[f]) held[i] = true;
        const std::size_t dim = x.front().size();
        std::vector<double> mu[2] = {std::vector<double>(dim, 0.0), std::vector<double>(dim, 0.0)};
        double cnt[2] = {0, 0};
        for (std::size_t i = 0; i < ds.size(); ++i) {
            if (held[i]) continue;
            for (std::size_t c = 0; c < dim; ++c) mu[labels[i]][c] += x[i][c];
            cnt[labels[i]] += 1;
        }
        for (int c = 0; c < 2; ++c)
            for (auto& e : mu[c]) e /= cnt[c];
        for (auto i : folds[f]) {
            double score = 0.0;
            for (std::size_t c = 0; c < dim; ++c) score += (x[i][c] - 0.5 * (mu[0][c] + mu[1][c])) * (mu[1][c] - mu[0][c]);
            correct += (score > 0 ? 1 : 0) == labels[i];
        }
    }
    return static_cast<double>(correct) / static_cast<double>(ds.size());
}

/// Independent O((3N)^2) scan over node pairs. rows[m][s] is the feature
/// vector of modality m at segment s; returns (u, v, kind) with u < v.
inline std::vector<Edge> oracle_graph_edges(const std::vector<std::vector<std::vector<double>>>& rows, double epsilon) {
    const std::size_t n = rows[0].size();
    auto dist = [](const std::vector<double>& a, const std::vector<double>& b) {
        double dot = 0, na = 0, nb = 0;
        for (std::size_t i = 0; i < a.size(); ++i) {
            dot += a[i] * b[i];
            na += a[i] * a[i];
            nb += b[i] * b[i];
        }
        if (na == 0 || nb == 0) return 1.0;
        // sqrt(na) * sqrt(nb) keeps collinear 1-wide rows at exactly 0 or 2.
        return std::min(2.0, std::max(0.0, 1.0 - dot / (std::sqrt(na) * std::sqrt(nb))));
    };
    std::vector<Edge> out;
    for (std::size_t u = 0; u < 3 * n; ++u)
        for (std::size_t v = u + 1; v < 3 * n; ++v) {
            const std::size_t mu = u / n, mv = v / n, su = u % n, sv = v % n;
            if (mu == mv && sv == su + 1)
                out.push_back({u, v, EdgeKind::temporal});
            else if (mu == mv && dist(rows[mu][su], rows[mv][sv]) < epsilon)
                out.push_back({u, v, EdgeKind::epsilon});
            else if (mu != mv && su == sv)
                out.push_back({u, v, EdgeKind::intermodal});
        }
    return out;
}

/// Scratch directory removed on destruction.
class TempDir {
public:
    explicit TempDir(const std::string& tag) {
        std::random_device rd;
        path_ = std::filesystem::temp_directory_path() / ("mhgnn_" + tag + "_" + std::to_string(rd()));
        std::filesystem::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;
    [[nodiscard]] const std::filesystem::path& path() const { return path_; }

private:
    std::filesystem::path path_;
};

}  // namespace testing_support
