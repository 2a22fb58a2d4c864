#pragma once

// Interval arithmetic over a video timeline: equal segments, transcript
// sentence assignment, and the consecutive instance partition.
//
// All intervals are half-open [start, end).

#include <algorithm>
#include <cstddef>
#include <string>
#include <vector>

#include "mhgnn/error.hpp"

namespace mhgnn {

struct Interval {
    double start = 0.0;
    double end = 0.0;

    [[nodiscard]] double length() const { return end - start; }
    friend bool operator==(const Interval&, const Interval&) = default;
};

/// Positive-measure overlap; touching endpoints do not count.
inline bool overlaps(const Interval& a, const Interval& b) {
    return std::max(a.start, b.start) < std::min(a.end, b.end);
}

struct SegmentLayout {
    std::size_t n_segments = 0;
    std::vector<Interval> boundaries;
};

inline SegmentLayout segment_boundaries(double duration_s, std::size_t n) {
    if (!(duration_s > 0.0)) throw ConfigError("segment_boundaries: duration must be positive");
    if (n == 0) throw ConfigError("segment_boundaries: segment count must be positive");
    SegmentLayout layout{n, {}};
    layout.boundaries.reserve(n);
    const double nd = static_cast<double>(n);
    for (std::size_t i = 0; i < n; ++i) {
        // Endpoints from the same formula so neighbours share them exactly.
        const double start = duration_s * static_cast<double>(i) / nd;
        const double end = i + 1 == n ? duration_s : duration_s * static_cast<double>(i + 1) / nd;
        layout.boundaries.push_back({start, end});
    }
    return layout;
}

/// For each segment, the indices (ascending) of the sentences overlapping it.
inline std::vector<std::vector<std::size_t>> assign_sentences(const std::vector<Interval>& sentences,
                                                              const SegmentLayout& layout) {
    std::vector<std::vector<std::size_t>> out(layout.boundaries.size());
    for (std::size_t j = 0; j < sentences.size(); ++j) {
        if (sentences[j].start > sentences[j].end)
            throw ConfigError("assign_sentences: sentence " + std::to_string(j) + " ends before it starts");
        for (std::size_t i = 0; i < layout.boundaries.size(); ++i)
            if (overlaps(sentences[j], layout.boundaries[i])) out[i].push_back(j);
    }
    return out;
}

/// K consecutive, equal-sized groups of segment indices.
struct InstancePartition {
    std::size_t n_segments = 0;
    std::size_t k = 0;
    std::vector<std::vector<std::size_t>> omega;

    [[nodiscard]] std::size_t segments_per_instance() const { return k == 0 ? 0 : n_segments / k; }
    [[nodiscard]] std::size_t instance_of(std::size_t segment) const { return segment / segments_per_instance(); }
};

inline InstancePartition instance_partition(std::size_t n, std::size_t k) {
    if (n == 0) throw ConfigError("instance_partition: segment count must be positive");
    if (k == 0) throw ConfigError("instance_partition: instance count must be positive");
    if (n % k != 0)
        throw ConfigError("instance_partition: " + std::to_string(k) + " instances do not divide " +
                          std::to_string(n) + " segments");
    InstancePartition p{n, k, std::vector<std::vector<std::size_t>>(k)};
    const std::size_t m = n / k;
    for (std::size_t i = 0; i < k; ++i)
        for (std::size_t s = 0; s < m; ++s) p.omega[i].push_back(i * m + s);
    return p;
}

}  // namespace mhgnn
