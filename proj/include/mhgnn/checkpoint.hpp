#pragma once

// MHGC model checkpoint.
//
//   "MHGC" | u32 version=1 | u32 config_len | config JSON (UTF-8)
//   | u32 n_records | n_records x (u32 name_len | name | u32 rank | rank x u32 dim | f32 data)
//   | u64 FNV-1a of every preceding byte
//
// Integers and floats are little-endian. Records must match the layout the
// stored configuration implies, name for name and shape for shape.

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "mhgnn/error.hpp"
#include "mhgnn/feature_io.hpp"
#include "mhgnn/model.hpp"

namespace mhgnn {

inline constexpr std::uint32_t kCheckpointVersion = 1;

inline std::uint64_t fnv1a64(std::span<const std::uint8_t> bytes) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (auto b : bytes) {
        h ^= b;
        h *= 0x100000001b3ULL;
    }
    return h;
}

struct Checkpoint {
    ModelConfig config;
    ModelParams<float> params;
};

inline std::vector<std::uint8_t> encode_checkpoint(const ModelConfig& config, const ModelParams<float>& params) {
    config.validate();
    const auto layout = parameter_layout(config);
    if (layout.size() != params.size()) throw ConfigError("checkpoint: parameter set does not match configuration");
    std::vector<std::uint8_t> out{'M', 'H', 'G', 'C'};
    detail::put_u32(out, kCheckpointVersion);
    const std::string cfg = config.to_json().dump();
    detail::put_u32(out, static_cast<std::uint32_t>(cfg.size()));
    out.insert(out.end(), cfg.begin(), cfg.end());
    detail::put_u32(out, static_cast<std::uint32_t>(params.size()));
    for (std::size_t i = 0; i < params.size(); ++i) {
        const auto& name = params.names()[i];
        const auto& t = params.tensors()[i];
        if (name != layout[i].first || t.shape() != layout[i].second)
            throw ConfigError("checkpoint: parameter '" + name + "' does not match configuration layout");
        detail::put_u32(out, static_cast<std::uint32_t>(name.size()));
        out.insert(out.end(), name.begin(), name.end());
        detail::put_u32(out, 2);
        detail::put_u32(out, static_cast<std::uint32_t>(t.rows()));
        detail::put_u32(out, static_cast<std::uint32_t>(t.cols()));
        for (float x : t.values()) detail::put_f32(out, x);
    }
    detail::put_u64(out, fnv1a64(out));
    return out;
}

inline Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes, const std::string& origin = "MHGC") {
    if (bytes.size() < 8) throw DataError(origin + ": truncated checkpoint");
    detail::ByteReader tail(bytes.subspan(bytes.size() - 8), origin);
    if (tail.u64() != fnv1a64(bytes.first(bytes.size() - 8)))
        throw DataError(origin + ": checksum mismatch, checkpoint is corrupt");

    detail::ByteReader r(bytes.first(bytes.size() - 8), origin);
    if (r.str(4) != "MHGC") r.fail("bad magic, not an MHGC checkpoint");
    const auto version = r.u32();
    if (version != kCheckpointVersion) r.fail("unsupported checkpoint version " + std::to_string(version));
    const auto cfg_len = r.u32();
    if (cfg_len > r.remaining()) r.fail("config length exceeds file");
    Checkpoint ck;
    try {
        ck.config = ModelConfig::from_json(nlohmann::json::parse(r.str(cfg_len)));
    } catch (const nlohmann::json::exception& e) {
        r.fail(std::string("bad config snapshot: ") + e.what());
    } catch (const ConfigError& e) {
        r.fail(std::string("bad config snapshot: ") + e.what());
    }
    const auto layout = parameter_layout(ck.config);
    const auto n_records = r.u32();
    if (n_records != layout.size())
        r.fail(std::to_string(n_records) + " records, configuration implies " + std::to_string(layout.size()));
    for (const auto& [expected_name, expected_shape] : layout) {
        const auto name_len = r.u32();
        if (name_len > r.remaining()) r.fail("record name length exceeds file");
        auto name = r.str(name_len);
        if (name != expected_name) r.fail("record '" + name + "' where '" + expected_name + "' was expected");
        const auto rank = r.u32();
        if (rank != 2) r.fail("record '" + name + "' has rank " + std::to_string(rank));
        Shape s;
        s.rows = r.u32();
        s.cols = r.u32();
        if (s != expected_shape)
            r.fail("record '" + name + "' has shape " + to_string(s) + ", expected " + to_string(expected_shape));
        std::vector<float> v(s.size());
        for (auto& x : v) {
            x = r.f32();
            if (!std::isfinite(x)) r.fail("record '" + name + "' holds a non-finite value");
        }
        ck.params.add(std::move(name), Tensor<float>(s, std::move(v), true));
    }
    if (r.remaining() != 0) r.fail(std::to_string(r.remaining()) + " trailing bytes");
    return ck;
}

inline void save_checkpoint(const std::filesystem::path& path, const ModelConfig& config,
                            const ModelParams<float>& params) {
    detail::write_file(path, encode_checkpoint(config, params));
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
    return decode_checkpoint(detail::read_file(path), path.string());
}

}  // namespace mhgnn
