#pragma once

// Dual-stream graph model.
//
//   raw segment features --projection--> P_v, P_a, P_t            [N, D] each
//   weight graph (3N nodes) --weight GNN--> node scores --softmax per modality--> alpha_hat
//   alpha_i = 1/3 * sum over segments of instance i of (alpha_hat_v + alpha_hat_a + alpha_hat_t)
//   K instance subgraphs --shared instance GNN--> per-modality mean --concat--> f_i [1, 3D]
//   f = sum_i alpha_i f_i  --MLP + softmax--> h_hat = [p(non-hate), p(hate)]

#include <array>
#include <cmath>
#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "mhgnn/error.hpp"
#include "mhgnn/feature_io.hpp"
#include "mhgnn/graph.hpp"
#include "mhgnn/segmentation.hpp"
#include "mhgnn/tensor.hpp"

namespace mhgnn {

enum class GnnKind { conv, attention };
enum class ProjectionKind { lstm, mlp };
enum class Ablation { full, no_graph, instance_only, weight_only };

inline std::string_view to_string(GnnKind k) { return k == GnnKind::conv ? "degree-normalized-conv" : "attention"; }
inline std::string_view to_string(ProjectionKind k) { return k == ProjectionKind::lstm ? "lstm" : "mlp"; }
inline std::string_view to_string(Ablation a) {
    switch (a) {
        case Ablation::full: return "full";
        case Ablation::no_graph: return "no_graph";
        case Ablation::instance_only: return "instance_only";
        case Ablation::weight_only: return "weight_only";
    }
    return "?";
}

inline GnnKind parse_gnn_kind(std::string_view s) {
    if (s == "degree-normalized-conv" || s == "conv") return GnnKind::conv;
    if (s == "attention") return GnnKind::attention;
    throw ConfigError("unknown gnn_kind '" + std::string(s) + "' (degree-normalized-conv | attention)");
}
inline ProjectionKind parse_projection_kind(std::string_view s) {
    if (s == "lstm") return ProjectionKind::lstm;
    if (s == "mlp") return ProjectionKind::mlp;
    throw ConfigError("unknown projection kind '" + std::string(s) + "' (lstm | mlp)");
}
inline Ablation parse_ablation(std::string_view s) {
    for (auto a : {Ablation::full, Ablation::no_graph, Ablation::instance_only, Ablation::weight_only})
        if (to_string(a) == s) return a;
    throw ConfigError("unknown ablation '" + std::string(s) + "' (full | no_graph | instance_only | weight_only)");
}

struct ModelConfig {
    std::size_t n_segments = 20;
    std::size_t n_instances = 10;
    std::size_t d = 128;
    double epsilon = 0.4;
    GnnKind gnn_kind = GnnKind::attention;
    std::size_t gnn_layers = 2;
    std::size_t gnn_hidden = 128;
    std::size_t weight_head_hidden = 64;
    std::size_t classifier_hidden = 128;
    ProjectionKind projection_visual_audio = ProjectionKind::lstm;
    ProjectionKind projection_text = ProjectionKind::mlp;
    Ablation ablation = Ablation::full;
    /// Dropout on the classification feature during training; 0 disables.
    double dropout = 0.0;
    double attention_slope = 0.2;
    FeatureWidths raw_widths = kDefaultWidths;

    void validate() const {
        if (n_segments == 0) throw ConfigError("model: n_segments must be positive");
        if (n_instances == 0 || n_segments % n_instances != 0)
            throw ConfigError("model: n_instances (" + std::to_string(n_instances) + ") must divide n_segments (" +
                              std::to_string(n_segments) + ")");
        if (d == 0) throw ConfigError("model: d must be positive");
        if (gnn_layers == 0) throw ConfigError("model: gnn_layers must be at least 1");
        if (gnn_hidden == 0 || weight_head_hidden == 0 || classifier_hidden == 0)
            throw ConfigError("model: hidden widths must be positive");
        if (!(epsilon >= 0.0)) throw ConfigError("model: epsilon must be non-negative");
        if (projection_text != ProjectionKind::mlp) throw ConfigError("model: text projection must be mlp");
        if (!(dropout >= 0.0 && dropout < 1.0)) throw ConfigError("model: dropout must be in [0, 1)");
        if (raw_widths.visual == 0 || raw_widths.audio == 0 || raw_widths.text == 0)
            throw ConfigError("model: raw widths must be positive");
    }

    [[nodiscard]] bool uses_weight_graph() const { return ablation == Ablation::full || ablation == Ablation::weight_only; }
    [[nodiscard]] bool uses_instance_graph() const {
        return ablation == Ablation::full || ablation == Ablation::instance_only;
    }

    [[nodiscard]] nlohmann::ordered_json to_json() const {
        nlohmann::ordered_json j;
        j["n_segments"] = n_segments;
        j["n_instances"] = n_instances;
        j["d"] = d;
        j["epsilon"] = epsilon;
        j["gnn_kind"] = to_string(gnn_kind);
        j["gnn_layers"] = gnn_layers;
        j["gnn_hidden"] = gnn_hidden;
        j["weight_head_hidden"] = weight_head_hidden;
        j["classifier_hidden"] = classifier_hidden;
        j["projection_visual_audio"] = to_string(projection_visual_audio);
        j["projection_text"] = to_string(projection_text);
        j["ablation"] = to_string(ablation);
        j["dropout"] = dropout;
        j["attention_slope"] = attention_slope;
        j["raw_visual"] = raw_widths.visual;
        j["raw_audio"] = raw_widths.audio;
        j["raw_text"] = raw_widths.text;
        return j;
    }

    static ModelConfig from_json(const nlohmann::json& j) {
        ModelConfig c;
        try {
            for (const auto& [key, value] : j.items()) {
                if (key == "n_segments") c.n_segments = value.get<std::size_t>();
                else if (key == "n_instances") c.n_instances = value.get<std::size_t>();
                else if (key == "d") c.d = value.get<std::size_t>();
                else if (key == "epsilon") c.epsilon = value.get<double>();
                else if (key == "gnn_kind") c.gnn_kind = parse_gnn_kind(value.get<std::string>());
                else if (key == "gnn_layers") c.gnn_layers = value.get<std::size_t>();
                else if (key == "gnn_hidden") c.gnn_hidden = value.get<std::size_t>();
                else if (key == "weight_head_hidden") c.weight_head_hidden = value.get<std::size_t>();
                else if (key == "classifier_hidden") c.classifier_hidden = value.get<std::size_t>();
                else if (key == "projection_visual_audio") c.projection_visual_audio = parse_projection_kind(value.get<std::string>());
                else if (key == "projection_text") c.projection_text = parse_projection_kind(value.get<std::string>());
                else if (key == "ablation") c.ablation = parse_ablation(value.get<std::string>());
                else if (key == "dropout") c.dropout = value.get<double>();
                else if (key == "attention_slope") c.attention_slope = value.get<double>();
                else if (key == "raw_visual") c.raw_widths.visual = value.get<std::uint32_t>();
                else if (key == "raw_audio") c.raw_widths.audio = value.get<std::uint32_t>();
                else if (key == "raw_text") c.raw_widths.text = value.get<std::uint32_t>();
                else throw ConfigError("model: unknown key '" + key + "'");
            }
        } catch (const nlohmann::json::exception& e) {
            throw ConfigError(std::string("model: bad value: ") + e.what());
        }
        c.validate();
        return c;
    }
};

/// Named trainable tensors, in a fixed order.
template <typename T>
class ModelParams {
public:
    void add(std::string name, Tensor<T> t) {
        if (index_.contains(name)) throw ConfigError("params: duplicate name '" + name + "'");
        index_.emplace(name, tensors_.size());
        names_.push_back(std::move(name));
        tensors_.push_back(std::move(t));
    }

    [[nodiscard]] const Tensor<T>& operator[](std::string_view name) const {
        auto it = index_.find(std::string(name));
        if (it == index_.end()) throw ConfigError("params: no tensor named '" + std::string(name) + "'");
        return tensors_[it->second];
    }
    [[nodiscard]] bool contains(std::string_view name) const { return index_.contains(std::string(name)); }

    [[nodiscard]] std::span<const Tensor<T>> tensors() const { return tensors_; }
    [[nodiscard]] std::span<Tensor<T>> tensors() { return tensors_; }
    [[nodiscard]] const std::vector<std::string>& names() const { return names_; }
    [[nodiscard]] std::size_t size() const { return tensors_.size(); }

    [[nodiscard]] std::size_t scalar_count() const {
        std::size_t n = 0;
        for (const auto& t : tensors_) n += t.size();
        return n;
    }

    /// Deep copy into fresh leaves of another scalar type.
    template <typename U>
    [[nodiscard]] ModelParams<U> cast() const {
        ModelParams<U> out;
        for (std::size_t i = 0; i < tensors_.size(); ++i) out.add(names_[i], tensors_[i].template cast<U>(true));
        return out;
    }

    [[nodiscard]] ModelParams clone() const { return cast<T>(); }

private:
    std::vector<std::string> names_;
    std::vector<Tensor<T>> tensors_;
    std::unordered_map<std::string, std::size_t> index_;
};

/// Name and shape of every parameter the configuration uses.
inline std::vector<std::pair<std::string, Shape>> parameter_layout(const ModelConfig& c) {
    std::vector<std::pair<std::string, Shape>> out;
    const std::size_t D = c.d;
    auto linear = [&](const std::string& prefix, std::size_t in, std::size_t width) {
        out.push_back({prefix + ".w", {in, width}});
        out.push_back({prefix + ".b", {1, width}});
    };
    auto projection = [&](Modality m, ProjectionKind kind) {
        const std::string p = "proj." + std::string(modality_name(m));
        const std::size_t in = c.raw_widths.of(m);
        if (kind == ProjectionKind::lstm) {
            for (const char* g : {"i", "f", "g", "o"}) {
                out.push_back({p + ".lstm.w_" + g, {in, D}});
                out.push_back({p + ".lstm.u_" + g, {D, D}});
                out.push_back({p + ".lstm.b_" + g, {1, D}});
            }
        } else {
            linear(p + ".mlp.l1", in, D);
            linear(p + ".mlp.l2", D, D);
        }
    };
    projection(Modality::visual, c.projection_visual_audio);
    projection(Modality::audio, c.projection_visual_audio);
    projection(Modality::text, c.projection_text);

    auto gnn = [&](const std::string& prefix) {
        for (std::size_t l = 0; l < c.gnn_layers; ++l) {
            const std::size_t in = l == 0 ? D : c.gnn_hidden;
            const std::size_t width = l + 1 == c.gnn_layers ? D : c.gnn_hidden;
            const std::string p = prefix + ".l" + std::to_string(l);
            out.push_back({p + ".w", {in, width}});
            if (c.gnn_kind == GnnKind::attention) out.push_back({p + ".att", {2 * width, 1}});
        }
    };
    if (c.uses_weight_graph()) {
        gnn("gnn.weight");
        linear("head.l1", D, c.weight_head_hidden);
        linear("head.l2", c.weight_head_hidden, 1);
    }
    if (c.uses_instance_graph()) gnn("gnn.instance");
    linear("cls.l1", 3 * D, c.classifier_hidden);
    linear("cls.l2", c.classifier_hidden, 2);
    return out;
}

/// Glorot-uniform weights, zero biases (LSTM forget-gate bias 1).
template <typename T>
ModelParams<T> init_params(const ModelConfig& config, std::uint64_t seed) {
    config.validate();
    std::mt19937_64 rng(seed);
    ModelParams<T> params;
    for (const auto& [name, shape] : parameter_layout(config)) {
        std::vector<T> v(shape.size(), T(0));
        const bool bias = name.ends_with(".b") || name.find(".lstm.b_") != std::string::npos;
        if (!bias) {
            const double limit = std::sqrt(6.0 / static_cast<double>(shape.rows + shape.cols));
            std::uniform_real_distribution<double> dist(-limit, limit);
            for (auto& x : v) x = static_cast<T>(dist(rng));
        } else if (name.ends_with(".lstm.b_f")) {
            std::fill(v.begin(), v.end(), T(1));
        }
        params.add(name, Tensor<T>(shape, std::move(v), true));
    }
    return params;
}

namespace layers {

template <typename T>
Tensor<T> linear(const Tensor<T>& x, const ModelParams<T>& p, const std::string& prefix) {
    return ops::add(ops::matmul(x, p[prefix + ".w"]), p[prefix + ".b"]);
}

/// Single-layer LSTM over the rows of x ([N, in]); returns every step's
/// hidden state stacked as [N, D].
template <typename T>
Tensor<T> lstm(const Tensor<T>& x, const ModelParams<T>& p, const std::string& prefix) {
    const std::size_t n = x.rows();
    const auto& u_i = p[prefix + ".u_i"];
    const std::size_t D = u_i.rows();
    // Input contributions for all steps at once.
    std::array<Tensor<T>, 4> xw;
    const char* gates[] = {"i", "f", "g", "o"};
    for (int g = 0; g < 4; ++g)
        xw[g] = ops::add(ops::matmul(x, p[prefix + ".w_" + gates[g]]), p[prefix + ".b_" + gates[g]]);

    Tensor<T> h = Tensor<T>::zeros({1, D});
    Tensor<T> c = Tensor<T>::zeros({1, D});
    std::vector<Tensor<T>> outputs;
    outputs.reserve(n);
    for (std::size_t t = 0; t < n; ++t) {
        std::array<Tensor<T>, 4> pre;
        for (int g = 0; g < 4; ++g)
            pre[g] = ops::add(ops::gather_rows(xw[g], {t}), ops::matmul(h, p[prefix + ".u_" + gates[g]]));
        auto i = ops::sigmoid(pre[0]);
        auto f = ops::sigmoid(pre[1]);
        auto g = ops::tanh(pre[2]);
        auto o = ops::sigmoid(pre[3]);
        c = ops::add(ops::mul(f, c), ops::mul(i, g));
        h = ops::mul(o, ops::tanh(c));
        outputs.push_back(h);
    }
    return ops::concat(std::span<const Tensor<T>>(outputs), 0);
}

/// Two tanh layers applied to each row independently.
template <typename T>
Tensor<T> mlp_projection(const Tensor<T>& x, const ModelParams<T>& p, const std::string& prefix) {
    return ops::tanh(linear(ops::tanh(linear(x, p, prefix + ".l1")), p, prefix + ".l2"));
}

}  // namespace layers

template <typename T>
Tensor<T> raw_tensor(const SegmentFeatures& video, Modality m) {
    const auto& block = video.block(m);
    return Tensor<T>({video.n_segments, video.widths.of(m)}, std::vector<T>(block.begin(), block.end()));
}

/// Projected [N, D] features for visual, audio and text, in that order.
template <typename T>
std::array<Tensor<T>, 3> project_segments(const SegmentFeatures& video, const ModelParams<T>& params,
                                          const ModelConfig& config) {
    std::array<Tensor<T>, 3> out;
    for (auto m : kModalities) {
        if (video.widths.of(m) != config.raw_widths.of(m))
            throw ShapeError("project_segments: " + std::string(modality_name(m)) + " width " +
                             std::to_string(video.widths.of(m)) + ", expected " +
                             std::to_string(config.raw_widths.of(m)));
        const auto kind = m == Modality::text ? config.projection_text : config.projection_visual_audio;
        const std::string prefix = "proj." + std::string(modality_name(m));
        auto x = raw_tensor<T>(video, m);
        out[static_cast<std::size_t>(m)] = kind == ProjectionKind::lstm ? layers::lstm(x, params, prefix + ".lstm")
                                                                        : layers::mlp_projection(x, params, prefix + ".mlp");
    }
    return out;
}

/// Directed message-passing lists: a self loop per node, then both
/// directions of every undirected edge.
struct MessageEdges {
    std::size_t n_nodes = 0;
    std::vector<std::size_t> src;
    std::vector<std::size_t> dst;
    std::vector<std::size_t> degree;  // including the self loop
};

template <typename T>
MessageEdges message_edges(const VideoGraph<T>& g) {
    MessageEdges m;
    m.n_nodes = g.nodes.size();
    m.degree.assign(m.n_nodes, 1);
    for (std::size_t i = 0; i < m.n_nodes; ++i) {
        m.src.push_back(i);
        m.dst.push_back(i);
    }
    for (const auto& e : g.edges) {
        m.src.push_back(e.u);
        m.dst.push_back(e.v);
        m.src.push_back(e.v);
        m.dst.push_back(e.u);
        ++m.degree[e.u];
        ++m.degree[e.v];
    }
    return m;
}

/// Attention coefficients of every GNN layer, aligned with MessageEdges order.
struct AttentionTrace {
    std::vector<std::vector<double>> per_layer;
};

/// Message passing over `graph` with the layer stack stored under `prefix`.
/// conv:      H' = act(A_hat H W), A_hat = D^-1/2 (A + I) D^-1/2
/// attention: H'_u = act(sum_v att_uv W h_v), att = softmax over N(u) of
///            leaky_relu(a^T [W h_u || W h_v])
/// act is relu between layers and identity after the last one.
template <typename T>
Tensor<T> gnn_forward(const Tensor<T>& h, const MessageEdges& edges, const ModelParams<T>& params,
                      const std::string& prefix, const ModelConfig& config, AttentionTrace* trace = nullptr) {
    if (h.rows() != edges.n_nodes)
        throw ShapeError("gnn_forward: " + std::to_string(h.rows()) + " node rows for a graph of " +
                         std::to_string(edges.n_nodes) + " nodes");
    Tensor<T> x = h;
    for (std::size_t l = 0; l < config.gnn_layers; ++l) {
        const std::string p = prefix + ".l" + std::to_string(l);
        const auto& w = params[p + ".w"];
        if (x.cols() != w.rows())
            throw ShapeError("gnn_forward: layer " + std::to_string(l) + " expects width " + std::to_string(w.rows()) +
                             ", got " + std::to_string(x.cols()));
        auto xw = ops::matmul(x, w);
        auto messages = ops::gather_rows(xw, edges.src);
        Tensor<T> coef;
        if (config.gnn_kind == GnnKind::conv) {
            std::vector<T> norm(edges.src.size());
            for (std::size_t k = 0; k < norm.size(); ++k)
                norm[k] = T(1) / std::sqrt(static_cast<T>(edges.degree[edges.src[k]] * edges.degree[edges.dst[k]]));
            const std::size_t n_msg = norm.size();
            coef = Tensor<T>({n_msg, 1}, std::move(norm));
        } else {
            const std::size_t width = w.cols();
            const auto& att = params[p + ".att"];
            std::vector<std::size_t> first(width), second(width);
            for (std::size_t i = 0; i < width; ++i) {
                first[i] = i;
                second[i] = width + i;
            }
            auto score_dst = ops::matmul(xw, ops::gather_rows(att, first));
            auto score_src = ops::matmul(xw, ops::gather_rows(att, second));
            auto e = ops::leaky_relu(
                ops::add(ops::gather_rows(score_dst, edges.dst), ops::gather_rows(score_src, edges.src)),
                static_cast<T>(config.attention_slope));
            coef = ops::segment_softmax(e, edges.dst, edges.n_nodes);
            if (trace) trace->per_layer.emplace_back(coef.values().begin(), coef.values().end());
        }
        x = ops::scatter_add_rows(ops::mul(messages, coef), edges.dst, edges.n_nodes);
        if (l + 1 < config.gnn_layers) x = ops::relu(x);
    }
    return x;
}

/// Softmax of a [3N, 1] score column within each modality block.
template <typename T>
Tensor<T> modality_softmax(const Tensor<T>& scores, std::size_t n_segments) {
    std::vector<std::size_t> block_of(3 * n_segments);
    for (std::size_t i = 0; i < block_of.size(); ++i) block_of[i] = i / n_segments;
    return ops::segment_softmax(scores, std::move(block_of), 3);
}

/// Importance weights alpha_hat, [3N, 1] in modality-major order: weight-head
/// MLP scores, softmax-normalised within each modality's N nodes.
template <typename T>
Tensor<T> node_importance(const Tensor<T>& weight_graph_reps, const ModelParams<T>& params, std::size_t n_segments) {
    if (weight_graph_reps.rows() != 3 * n_segments)
        throw ShapeError("node_importance: expected " + std::to_string(3 * n_segments) + " node rows, got " +
                         std::to_string(weight_graph_reps.rows()));
    auto scores = layers::linear(ops::relu(layers::linear(weight_graph_reps, params, "head.l1")), params, "head.l2");
    return modality_softmax(scores, n_segments);
}

/// alpha_i = 1/3 * sum_{l in omega_i} (alpha_hat_v[l] + alpha_hat_a[l] + alpha_hat_t[l]); returns [K, 1].
template <typename T>
Tensor<T> instance_weights(const Tensor<T>& alpha_hat, const InstancePartition& partition) {
    const std::size_t n = partition.n_segments;
    if (alpha_hat.rows() != 3 * n || alpha_hat.cols() != 1)
        throw ShapeError("instance_weights: alpha_hat must be [" + std::to_string(3 * n) + ", 1], got " +
                         to_string(alpha_hat.shape()));
    std::vector<std::size_t> target(3 * n);
    for (std::size_t i = 0; i < target.size(); ++i) target[i] = partition.instance_of(i % n);
    return ops::scale(ops::scatter_add_rows(alpha_hat, std::move(target), partition.k), T(1) / T(3));
}

/// Per-modality mean of each subgraph's node representations, concatenated
/// visual|audio|text; returns [K, 3D].
template <typename T>
Tensor<T> instance_features(std::span<const Tensor<T>> subgraph_reps, const InstancePartition& partition) {
    if (subgraph_reps.size() != partition.k)
        throw ShapeError("instance_features: " + std::to_string(subgraph_reps.size()) + " subgraphs for " +
                         std::to_string(partition.k) + " instances");
    const std::size_t m = partition.segments_per_instance();
    std::vector<Tensor<T>> rows;
    rows.reserve(partition.k);
    for (const auto& reps : subgraph_reps) {
        if (reps.rows() != 3 * m)
            throw ShapeError("instance_features: subgraph has " + std::to_string(reps.rows()) + " nodes, expected " +
                             std::to_string(3 * m));
        std::array<Tensor<T>, 3> means;
        for (std::size_t mod = 0; mod < 3; ++mod) {
            std::vector<std::size_t> idx(m);
            for (std::size_t s = 0; s < m; ++s) idx[s] = mod * m + s;
            means[mod] = ops::row_mean(ops::gather_rows(reps, std::move(idx)), 0);
        }
        rows.push_back(ops::concat(std::span<const Tensor<T>>(means), 1));
    }
    return ops::concat(std::span<const Tensor<T>>(rows), 0);
}

/// f = sum_i alpha_i f_i for alpha [K, 1], features [K, 3D]; returns [1, 3D].
template <typename T>
Tensor<T> aggregate(const Tensor<T>& alpha, const Tensor<T>& features) {
    if (alpha.cols() != 1 || alpha.rows() != features.rows())
        throw ShapeError("aggregate: alpha " + to_string(alpha.shape()) + " does not match features " +
                         to_string(features.shape()));
    return ops::matmul(ops::transpose(alpha), features);
}

/// Class probabilities [1, 2] = softmax(MLP(f)).
template <typename T>
Tensor<T> classify(const Tensor<T>& f, const ModelParams<T>& params) {
    auto hidden = ops::relu(layers::linear(f, params, "cls.l1"));
    return ops::softmax(layers::linear(hidden, params, "cls.l2"), 1);
}

template <typename T>
struct ForwardTensors {
    Tensor<T> probs;        // [1, 2]
    Tensor<T> alpha;        // [K, 1]
    Tensor<T> alpha_hat;    // [3N, 1], modality-major
    Tensor<T> f_instances;  // [K, 3D]; undefined when the variant has no instance graph
    Tensor<T> feature;      // [1, 3D]
    std::array<Tensor<T>, 3> projected;
    std::size_t zero_norm_pairs = 0;
};

struct ForwardOptions {
    /// Source of dropout masks; dropout is applied only when set.
    std::mt19937_64* dropout_rng = nullptr;
};

template <typename T>
ProjectedViews<T> views_of(const std::array<Tensor<T>, 3>& projected) {
    ProjectedViews<T> v;
    for (std::size_t m = 0; m < 3; ++m) v.by_modality[m] = {projected[m].values(), projected[m].rows(), projected[m].cols()};
    return v;
}

/// Full differentiable forward pass, including the ablation variants.
template <typename T>
ForwardTensors<T> forward_tensors(const SegmentFeatures& video, const ModelParams<T>& params, const ModelConfig& config,
                                  const ForwardOptions& options = {}) {
    if (video.n_segments != config.n_segments)
        throw ShapeError("forward: video has " + std::to_string(video.n_segments) + " segments, model expects " +
                         std::to_string(config.n_segments));
    const std::size_t N = config.n_segments;
    const std::size_t K = config.n_instances;
    const auto partition = instance_partition(N, K);

    ForwardTensors<T> out;
    out.projected = project_segments(video, params, config);
    const auto views = views_of(out.projected);
    const auto all_nodes = ops::concat(std::span<const Tensor<T>>(out.projected), 0);

    if (config.uses_weight_graph()) {
        const auto graph = build_weight_graph(views, config.epsilon);
        out.zero_norm_pairs += graph.zero_norm_pairs;
        auto reps = gnn_forward(all_nodes, message_edges(graph), params, "gnn.weight", config);
        out.alpha_hat = node_importance(reps, params, N);
        out.alpha = instance_weights(out.alpha_hat, partition);
        if (config.ablation == Ablation::weight_only) {
            std::array<Tensor<T>, 3> pooled;
            for (std::size_t m = 0; m < 3; ++m) {
                std::vector<std::size_t> idx(N);
                for (std::size_t s = 0; s < N; ++s) idx[s] = m * N + s;
                auto w = ops::gather_rows(out.alpha_hat, idx);
                pooled[m] = ops::matmul(ops::transpose(w), ops::gather_rows(reps, idx));
            }
            out.feature = ops::concat(std::span<const Tensor<T>>(pooled), 1);
        }
    } else {
        out.alpha_hat = Tensor<T>::full({3 * N, 1}, T(1) / static_cast<T>(N));
        out.alpha = Tensor<T>::full({K, 1}, T(1) / static_cast<T>(K));
    }

    if (config.uses_instance_graph()) {
        const auto subgraphs = build_instance_subgraphs(views, partition, config.epsilon);
        std::vector<Tensor<T>> reps;
        reps.reserve(K);
        for (std::size_t i = 0; i < K; ++i) {
            out.zero_norm_pairs += subgraphs[i].zero_norm_pairs;
            std::vector<std::size_t> rows;
            for (std::size_t m = 0; m < 3; ++m)
                for (std::size_t s : partition.omega[i]) rows.push_back(m * N + s);
            auto nodes = ops::gather_rows(all_nodes, std::move(rows));
            reps.push_back(gnn_forward(nodes, message_edges(subgraphs[i]), params, "gnn.instance", config));
        }
        out.f_instances = instance_features(std::span<const Tensor<T>>(reps), partition);
        out.feature = config.ablation == Ablation::full ? aggregate(out.alpha, out.f_instances)
                                                        : ops::row_mean(out.f_instances, 0);
    }

    if (config.ablation == Ablation::no_graph) {
        std::array<Tensor<T>, 3> means;
        for (std::size_t m = 0; m < 3; ++m) means[m] = ops::row_mean(out.projected[m], 0);
        out.feature = ops::concat(std::span<const Tensor<T>>(means), 1);
    }

    Tensor<T> f = out.feature;
    if (options.dropout_rng && config.dropout > 0.0) {
        std::bernoulli_distribution keep(1.0 - config.dropout);
        std::vector<T> mask(f.size());
        for (auto& x : mask) x = keep(*options.dropout_rng) ? T(1) / static_cast<T>(1.0 - config.dropout) : T(0);
        f = ops::mul(f, Tensor<T>(f.shape(), std::move(mask)));
    }
    out.probs = classify(f, params);
    return out;
}

/// Plain-value view of a forward pass.
struct ForwardOutput {
    std::array<double, 2> h_hat{};
    std::vector<double> alpha;
    std::array<std::vector<double>, 3> alpha_hat;
    std::vector<std::vector<double>> f_instances;
    std::size_t zero_norm_pairs = 0;

    [[nodiscard]] int predicted_label() const { return h_hat[1] > h_hat[0] ? 1 : 0; }
    [[nodiscard]] std::size_t argmax_alpha() const {
        return static_cast<std::size_t>(std::max_element(alpha.begin(), alpha.end()) - alpha.begin());
    }
};

template <typename T>
ForwardOutput to_output(const ForwardTensors<T>& t, std::size_t n_segments) {
    ForwardOutput o;
    o.h_hat = {static_cast<double>(t.probs(0, 0)), static_cast<double>(t.probs(0, 1))};
    o.alpha.assign(t.alpha.values().begin(), t.alpha.values().end());
    for (std::size_t m = 0; m < 3; ++m)
        for (std::size_t s = 0; s < n_segments; ++s) o.alpha_hat[m].push_back(static_cast<double>(t.alpha_hat(m * n_segments + s, 0)));
    if (t.f_instances.defined())
        for (std::size_t i = 0; i < t.f_instances.rows(); ++i) {
            std::vector<double> row;
            for (std::size_t c = 0; c < t.f_instances.cols(); ++c) row.push_back(static_cast<double>(t.f_instances(i, c)));
            o.f_instances.push_back(std::move(row));
        }
    o.zero_norm_pairs = t.zero_norm_pairs;
    return o;
}

template <typename T>
ForwardOutput forward(const SegmentFeatures& video, const ModelParams<T>& params, const ModelConfig& config) {
    return to_output(forward_tensors(video, params, config), config.n_segments);
}

}  // namespace mhgnn
