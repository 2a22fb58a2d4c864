#pragma once

// Weight graph and instance subgraphs over modality-segment nodes.
//
// Node layout inside any graph is modality-major: all visual nodes, then all
// audio nodes, then all text nodes, each block in segment order. Edges are
// stored once per unordered pair with u < v.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <ostream>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "mhgnn/error.hpp"
#include "mhgnn/segmentation.hpp"

namespace mhgnn {

enum class Modality { visual = 0, audio = 1, text = 2 };

inline constexpr std::array<Modality, 3> kModalities = {Modality::visual, Modality::audio, Modality::text};

inline std::string_view modality_name(Modality m) {
    switch (m) {
        case Modality::visual: return "visual";
        case Modality::audio: return "audio";
        case Modality::text: return "text";
    }
    return "?";
}

enum class EdgeKind { temporal, epsilon, intermodal };

inline std::string_view edge_kind_name(EdgeKind k) {
    switch (k) {
        case EdgeKind::temporal: return "temporal";
        case EdgeKind::epsilon: return "epsilon";
        case EdgeKind::intermodal: return "intermodal";
    }
    return "?";
}

struct Edge {
    std::size_t u = 0;
    std::size_t v = 0;
    EdgeKind kind = EdgeKind::temporal;

    friend bool operator==(const Edge&, const Edge&) = default;
};

inline bool edge_less(const Edge& a, const Edge& b) { return a.u != b.u ? a.u < b.u : a.v < b.v; }

/// Non-owning row-major matrix view.
template <typename T>
struct MatrixView {
    std::span<const T> data;
    std::size_t rows = 0;
    std::size_t cols = 0;

    [[nodiscard]] std::span<const T> row(std::size_t r) const { return data.subspan(r * cols, cols); }
};

struct CosineDistance {
    double value = 0.0;
    /// Either vector had zero norm; value is then 1 by convention.
    bool zero_norm = false;
};

/// 1 - u.v / (|u| |v|), clamped to [0, 2].
template <typename T>
CosineDistance cosine_distance(std::span<const T> u, std::span<const T> v) {
    if (u.size() != v.size())
        throw ShapeError("cosine_distance: lengths " + std::to_string(u.size()) + " and " + std::to_string(v.size()));
    double dot = 0.0, nu = 0.0, nv = 0.0;
    for (std::size_t i = 0; i < u.size(); ++i) {
        dot += static_cast<double>(u[i]) * static_cast<double>(v[i]);
        nu += static_cast<double>(u[i]) * static_cast<double>(u[i]);
        nv += static_cast<double>(v[i]) * static_cast<double>(v[i]);
    }
    if (nu == 0.0 || nv == 0.0) return {1.0, true};
    const double d = 1.0 - dot / (std::sqrt(nu) * std::sqrt(nv));
    return {std::clamp(d, 0.0, 2.0), false};
}

struct ModalityEdges {
    std::vector<Edge> edges;
    /// Pairs evaluated with a zero-norm operand.
    std::size_t zero_norm_pairs = 0;
};

/// Temporal chain 0-1-..-(n-1) plus epsilon edges (distance < epsilon) among
/// the rows of one modality. Indices are row indices.
template <typename T>
ModalityEdges build_modality_edges(MatrixView<T> features, double epsilon) {
    ModalityEdges out;
    const std::size_t n = features.rows;
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = i + 1; j < n; ++j) {
            if (j == i + 1) {
                out.edges.push_back({i, j, EdgeKind::temporal});
                continue;
            }
            const auto d = cosine_distance(features.row(i), features.row(j));
            out.zero_norm_pairs += d.zero_norm ? 1 : 0;
            if (d.value < epsilon) out.edges.push_back({i, j, EdgeKind::epsilon});
        }
    return out;
}

/// For each timestamp t: visual_t-audio_t, visual_t-text_t, audio_t-text_t,
/// in modality-major node indexing over n segments.
inline std::vector<Edge> build_intermodal_edges(std::size_t n) {
    std::vector<Edge> edges;
    edges.reserve(3 * n);
    for (std::size_t t = 0; t < n; ++t) {
        edges.push_back({t, n + t, EdgeKind::intermodal});
        edges.push_back({t, 2 * n + t, EdgeKind::intermodal});
        edges.push_back({n + t, 2 * n + t, EdgeKind::intermodal});
    }
    return edges;
}

template <typename T>
struct GraphNode {
    Modality modality = Modality::visual;
    std::size_t segment_index = 0;
    std::vector<T> representation;
};

template <typename T>
struct VideoGraph {
    /// Segments per modality; the graph has 3 * segments nodes.
    std::size_t segments = 0;
    std::vector<GraphNode<T>> nodes;
    std::vector<Edge> edges;
    std::size_t zero_norm_pairs = 0;

    [[nodiscard]] std::size_t node_index(Modality m, std::size_t local_segment) const {
        return static_cast<std::size_t>(m) * segments + local_segment;
    }

    [[nodiscard]] std::size_t count(EdgeKind k) const {
        return static_cast<std::size_t>(
            std::count_if(edges.begin(), edges.end(), [k](const Edge& e) { return e.kind == k; }));
    }
};

/// Projected features of the three modalities, each [N, D].
template <typename T>
struct ProjectedViews {
    std::array<MatrixView<T>, 3> by_modality;

    [[nodiscard]] const MatrixView<T>& operator[](Modality m) const { return by_modality[static_cast<std::size_t>(m)]; }
};

namespace detail {

template <typename T>
VideoGraph<T> build_graph_over(const ProjectedViews<T>& views, std::span<const std::size_t> segments,
                               double epsilon) {
    const std::size_t n = segments.size();
    const std::size_t d = views[Modality::visual].cols;
    for (auto m : kModalities) {
        if (views[m].cols != d)
            throw ShapeError("graph: " + std::string(modality_name(m)) + " width " + std::to_string(views[m].cols) +
                             " differs from visual width " + std::to_string(d));
        if (views[m].rows != views[Modality::visual].rows)
            throw ShapeError("graph: " + std::string(modality_name(m)) + " has " + std::to_string(views[m].rows) +
                             " segments, visual has " + std::to_string(views[Modality::visual].rows));
    }

    VideoGraph<T> g;
    g.segments = n;
    g.nodes.reserve(3 * n);
    for (auto m : kModalities)
        for (std::size_t s : segments) {
            auto row = views[m].row(s);
            g.nodes.push_back({m, s, std::vector<T>(row.begin(), row.end())});
        }

    std::vector<T> buffer(n * d);
    for (auto m : kModalities) {
        for (std::size_t i = 0; i < n; ++i) {
            auto row = views[m].row(segments[i]);
            std::copy(row.begin(), row.end(), buffer.begin() + static_cast<std::ptrdiff_t>(i * d));
        }
        auto local = build_modality_edges(MatrixView<T>{buffer, n, d}, epsilon);
        g.zero_norm_pairs += local.zero_norm_pairs;
        const std::size_t base = static_cast<std::size_t>(m) * n;
        for (const auto& e : local.edges) g.edges.push_back({base + e.u, base + e.v, e.kind});
    }
    auto inter = build_intermodal_edges(n);
    g.edges.insert(g.edges.end(), inter.begin(), inter.end());
    std::sort(g.edges.begin(), g.edges.end(), edge_less);
    return g;
}

}  // namespace detail

/// 3N nodes; per-modality temporal and epsilon edges plus intermodal edges.
template <typename T>
VideoGraph<T> build_weight_graph(const ProjectedViews<T>& views, double epsilon) {
    const std::size_t n = views[Modality::visual].rows;
    if (n == 0) throw ShapeError("build_weight_graph: no segments");
    std::vector<std::size_t> all(n);
    for (std::size_t i = 0; i < n; ++i) all[i] = i;
    return detail::build_graph_over(views, all, epsilon);
}

/// One graph per instance, built the same way over that instance's segments only.
template <typename T>
std::vector<VideoGraph<T>> build_instance_subgraphs(const ProjectedViews<T>& views, const InstancePartition& partition,
                                                    double epsilon) {
    if (partition.n_segments != views[Modality::visual].rows)
        throw ShapeError("build_instance_subgraphs: partition covers " + std::to_string(partition.n_segments) +
                         " segments, features have " + std::to_string(views[Modality::visual].rows));
    std::vector<VideoGraph<T>> out;
    out.reserve(partition.k);
    for (const auto& omega : partition.omega) out.push_back(detail::build_graph_over(views, omega, epsilon));
    return out;
}

/// Debug export: one `src dst kind` line per edge.
template <typename T>
void write_edge_list(const VideoGraph<T>& g, std::ostream& os) {
    for (const auto& e : g.edges) os << e.u << ' ' << e.v << ' ' << edge_kind_name(e.kind) << '\n';
}

}  // namespace mhgnn
