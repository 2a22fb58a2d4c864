#pragma once

// MHG1 per-video feature container and the JSON Lines dataset manifest.
//
// MHG1 layout, all integers little-endian u32:
//   "MHG1" | version=1 | N | d_visual | d_audio | d_text | n_spans
//   | f32 visual[N*d_visual] | f32 audio[N*d_audio] | f32 text[N*d_text]
//   | n_spans x (f64 start_s, f64 end_s)
// The file length must match the header exactly.

#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include <nlohmann/json.hpp>

#include "mhgnn/error.hpp"
#include "mhgnn/graph.hpp"
#include "mhgnn/segmentation.hpp"

namespace mhgnn {

inline constexpr std::uint32_t kFeatureFormatVersion = 1;
inline constexpr std::string_view kFeatureMagic = "MHG1";
inline constexpr std::size_t kFeatureHeaderBytes = 4 + 6 * 4;

struct FeatureWidths {
    std::uint32_t visual = 768;
    std::uint32_t audio = 40;
    std::uint32_t text = 768;

    [[nodiscard]] std::uint32_t of(Modality m) const {
        switch (m) {
            case Modality::visual: return visual;
            case Modality::audio: return audio;
            case Modality::text: return text;
        }
        return 0;
    }
    friend bool operator==(const FeatureWidths&, const FeatureWidths&) = default;
};

/// ViT / MFCC / BERT widths.
inline constexpr FeatureWidths kDefaultWidths{768, 40, 768};

struct SegmentFeatures {
    std::size_t n_segments = 0;
    FeatureWidths widths = kDefaultWidths;
    std::vector<float> visual;
    std::vector<float> audio;
    std::vector<float> text;
    std::vector<Interval> sentence_spans;

    [[nodiscard]] const std::vector<float>& block(Modality m) const {
        switch (m) {
            case Modality::visual: return visual;
            case Modality::audio: return audio;
            case Modality::text: return text;
        }
        return visual;
    }
    [[nodiscard]] std::vector<float>& block(Modality m) {
        return const_cast<std::vector<float>&>(std::as_const(*this).block(m));
    }
    [[nodiscard]] MatrixView<float> view(Modality m) const { return {block(m), n_segments, widths.of(m)}; }

    /// Throws DataError naming the first violated constraint.
    void validate(const std::optional<FeatureWidths>& expected = std::nullopt) const {
        if (n_segments == 0) throw DataError("features: zero segments");
        for (auto m : kModalities) {
            const auto name = std::string(modality_name(m));
            if (widths.of(m) == 0) throw DataError("features: " + name + " width is zero");
            if (expected && expected->of(m) != widths.of(m))
                throw DataError("features: " + name + " width " + std::to_string(widths.of(m)) + ", expected " +
                                std::to_string(expected->of(m)));
            if (block(m).size() != n_segments * widths.of(m))
                throw DataError("features: " + name + " block has " + std::to_string(block(m).size()) +
                                " values, expected " + std::to_string(n_segments * widths.of(m)));
            for (float x : block(m))
                if (!std::isfinite(x)) throw DataError("features: non-finite value in " + name + " block");
        }
        for (const auto& s : sentence_spans)
            if (!std::isfinite(s.start) || !std::isfinite(s.end) || s.start > s.end)
                throw DataError("features: invalid sentence span");
    }
};

namespace detail {

inline void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

inline void put_u64(std::vector<std::uint8_t>& out, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

inline void put_f32(std::vector<std::uint8_t>& out, float v) { put_u32(out, std::bit_cast<std::uint32_t>(v)); }
inline void put_f64(std::vector<std::uint8_t>& out, double v) { put_u64(out, std::bit_cast<std::uint64_t>(v)); }

/// Bounds-checked little-endian reader over a byte buffer.
class ByteReader {
public:
    ByteReader(std::span<const std::uint8_t> bytes, std::string origin) : bytes_(bytes), origin_(std::move(origin)) {}

    std::uint32_t u32() {
        need(4);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(bytes_[pos_ + i]) << (8 * i);
        pos_ += 4;
        return v;
    }
    std::uint64_t u64() {
        need(8);
        std::uint64_t v = 0;
        for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(bytes_[pos_ + i]) << (8 * i);
        pos_ += 8;
        return v;
    }
    float f32() { return std::bit_cast<float>(u32()); }
    double f64() { return std::bit_cast<double>(u64()); }
    std::string str(std::size_t n) {
        need(n);
        std::string s(reinterpret_cast<const char*>(bytes_.data() + pos_), n);
        pos_ += n;
        return s;
    }
    [[nodiscard]] std::size_t position() const { return pos_; }
    [[nodiscard]] std::size_t remaining() const { return bytes_.size() - pos_; }
    [[noreturn]] void fail(const std::string& what) const { throw DataError(origin_ + ": " + what); }

private:
    void need(std::size_t n) const {
        if (bytes_.size() - pos_ < n) fail("truncated at byte " + std::to_string(pos_));
    }
    std::span<const std::uint8_t> bytes_;
    std::string origin_;
    std::size_t pos_ = 0;
};

inline std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError(path.string() + ": cannot open");
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    if (in.bad()) throw DataError(path.string() + ": read failed");
    return bytes;
}

inline void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError(path.string() + ": cannot open for writing");
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw DataError(path.string() + ": write failed");
}

}  // namespace detail

inline std::vector<std::uint8_t> encode_features(const SegmentFeatures& f) {
    f.validate();
    std::vector<std::uint8_t> out;
    out.reserve(kFeatureHeaderBytes + 4 * (f.visual.size() + f.audio.size() + f.text.size()) +
                16 * f.sentence_spans.size());
    for (char c : kFeatureMagic) out.push_back(static_cast<std::uint8_t>(c));
    detail::put_u32(out, kFeatureFormatVersion);
    detail::put_u32(out, static_cast<std::uint32_t>(f.n_segments));
    detail::put_u32(out, f.widths.visual);
    detail::put_u32(out, f.widths.audio);
    detail::put_u32(out, f.widths.text);
    detail::put_u32(out, static_cast<std::uint32_t>(f.sentence_spans.size()));
    for (auto m : kModalities)
        for (float x : f.block(m)) detail::put_f32(out, x);
    for (const auto& s : f.sentence_spans) {
        detail::put_f64(out, s.start);
        detail::put_f64(out, s.end);
    }
    return out;
}

/// Parses and fully validates an MHG1 buffer. `expected` pins the raw widths.
inline SegmentFeatures decode_features(std::span<const std::uint8_t> bytes,
                                       const std::optional<FeatureWidths>& expected = std::nullopt,
                                       const std::string& origin = "MHG1") {
    detail::ByteReader r(bytes, origin);
    if (r.str(4) != kFeatureMagic) r.fail("bad magic, not an MHG1 feature file");
    const auto version = r.u32();
    if (version != kFeatureFormatVersion)
        r.fail("unsupported version " + std::to_string(version) + ", expected " + std::to_string(kFeatureFormatVersion));
    SegmentFeatures f;
    f.n_segments = r.u32();
    f.widths.visual = r.u32();
    f.widths.audio = r.u32();
    f.widths.text = r.u32();
    const std::uint64_t n_spans = r.u32();
    if (f.n_segments == 0) r.fail("zero segments");
    for (auto m : kModalities) {
        if (f.widths.of(m) == 0) r.fail(std::string(modality_name(m)) + " width is zero");
        if (expected && expected->of(m) != f.widths.of(m))
            r.fail("dimension mismatch: " + std::string(modality_name(m)) + " width " + std::to_string(f.widths.of(m)) +
                   ", expected " + std::to_string(expected->of(m)));
    }
    const std::uint64_t n = f.n_segments;
    // 128-bit so corrupted header fields cannot wrap around to a plausible size.
    const unsigned __int128 payload =
        static_cast<unsigned __int128>(4 * n) * (std::uint64_t{f.widths.visual} + f.widths.audio + f.widths.text) +
        16 * n_spans;
    if (payload != r.remaining())
        r.fail("payload is " + std::to_string(r.remaining()) + " bytes, header fields N=" + std::to_string(n) +
               " widths " + std::to_string(f.widths.visual) + "/" + std::to_string(f.widths.audio) + "/" +
               std::to_string(f.widths.text) + " spans " + std::to_string(n_spans) + " disagree");
    for (auto m : kModalities) {
        auto& block = f.block(m);
        block.resize(n * f.widths.of(m));
        for (auto& x : block) x = r.f32();
    }
    f.sentence_spans.resize(n_spans);
    for (auto& s : f.sentence_spans) {
        s.start = r.f64();
        s.end = r.f64();
    }
    try {
        f.validate(expected);
    } catch (const DataError& e) {
        r.fail(e.what());
    }
    return f;
}

inline void write_features(const SegmentFeatures& features, const std::filesystem::path& path) {
    try {
        features.validate();
    } catch (const DataError& e) {
        throw DataError(path.string() + ": refusing to write: " + e.what());
    }
    detail::write_file(path, encode_features(features));
}

inline SegmentFeatures read_features(const std::filesystem::path& path,
                                     const std::optional<FeatureWidths>& expected = std::nullopt) {
    return decode_features(detail::read_file(path), expected, path.string());
}

/// Widths from the header alone; the rest of the file is not checked.
inline FeatureWidths peek_feature_widths(const std::filesystem::path& path) {
    auto bytes = detail::read_file(path);
    const auto header = std::span<const std::uint8_t>(bytes).first(std::min(bytes.size(), kFeatureHeaderBytes));
    detail::ByteReader r(header, path.string());
    if (r.str(4) != kFeatureMagic) r.fail("bad magic, not an MHG1 feature file");
    r.u32();
    r.u32();
    FeatureWidths w;
    w.visual = r.u32();
    w.audio = r.u32();
    w.text = r.u32();
    return w;
}

struct ManifestEntry {
    std::string video_id;
    int label = 0;
    std::string feature_path;
    double duration_s = 0.0;
    std::optional<int> fold;
};

struct DatasetManifest {
    /// Directory relative feature paths are resolved against.
    std::filesystem::path base_dir;
    std::vector<ManifestEntry> entries;

    [[nodiscard]] const ManifestEntry& find(std::string_view video_id) const {
        for (const auto& e : entries)
            if (e.video_id == video_id) return e;
        throw DataError("manifest: unknown video_id '" + std::string(video_id) + "'");
    }

    [[nodiscard]] std::filesystem::path resolve(const ManifestEntry& e) const {
        std::filesystem::path p(e.feature_path);
        return p.is_absolute() ? p : base_dir / p;
    }

    /// (non-hate, hate) counts.
    [[nodiscard]] std::pair<std::size_t, std::size_t> class_counts() const {
        std::size_t pos = 0;
        for (const auto& e : entries) pos += e.label == 1 ? 1 : 0;
        return {entries.size() - pos, pos};
    }
};

/// Parses manifest lines without touching feature files.
inline DatasetManifest parse_manifest(std::istream& in, const std::filesystem::path& base_dir,
                                      const std::string& origin = "manifest") {
    DatasetManifest m{base_dir, {}};
    std::unordered_map<std::string, std::size_t> seen;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        const std::string where = origin + ":" + std::to_string(line_no) + ": ";
        ManifestEntry e;
        try {
            auto j = nlohmann::json::parse(line);
            if (!j.is_object()) throw DataError(where + "expected a JSON object");
            e.video_id = j.at("video_id").get<std::string>();
            const auto& label = j.at("label");
            if (!label.is_number_integer()) throw DataError(where + "label must be 0 or 1");
            e.label = label.get<int>();
            e.feature_path = j.at("feature_path").get<std::string>();
            e.duration_s = j.at("duration_s").get<double>();
            if (j.contains("fold") && !j.at("fold").is_null()) e.fold = j.at("fold").get<int>();
        } catch (const nlohmann::json::exception& ex) {
            throw DataError(where + "malformed entry: " + ex.what());
        }
        if (e.video_id.empty()) throw DataError(where + "empty video_id");
        if (e.label != 0 && e.label != 1)
            throw DataError(where + "label " + std::to_string(e.label) + " is not 0 (non-hate) or 1 (hate)");
        if (!(e.duration_s > 0.0) || !std::isfinite(e.duration_s)) throw DataError(where + "duration_s must be positive");
        if (auto [it, fresh] = seen.emplace(e.video_id, line_no); !fresh)
            throw DataError(where + "duplicate video_id '" + e.video_id + "' (first on line " +
                            std::to_string(it->second) + ")");
        m.entries.push_back(std::move(e));
    }
    return m;
}

/// Parses a manifest file and checks every feature file exists.
inline DatasetManifest load_manifest(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw DataError(path.string() + ": cannot open manifest");
    auto m = parse_manifest(in, path.parent_path(), path.string());
    for (const auto& e : m.entries)
        if (!std::filesystem::is_regular_file(m.resolve(e)))
            throw DataError(path.string() + ": feature file for '" + e.video_id + "' not found: " +
                            m.resolve(e).string());
    return m;
}

inline void write_manifest(const DatasetManifest& m, const std::filesystem::path& path) {
    std::ostringstream os;
    for (const auto& e : m.entries) {
        nlohmann::ordered_json j;
        j["video_id"] = e.video_id;
        j["label"] = e.label;
        j["feature_path"] = e.feature_path;
        j["duration_s"] = e.duration_s;
        if (e.fold) j["fold"] = *e.fold;
        os << j.dump() << '\n';
    }
    const auto s = os.str();
    detail::write_file(path, std::span(reinterpret_cast<const std::uint8_t*>(s.data()), s.size()));
}

inline SegmentFeatures load_video_features(const DatasetManifest& manifest, std::string_view video_id,
                                           const std::optional<FeatureWidths>& expected = std::nullopt) {
    return read_features(manifest.resolve(manifest.find(video_id)), expected);
}

}  // namespace mhgnn
