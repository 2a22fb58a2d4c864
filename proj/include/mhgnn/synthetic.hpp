#pragma once

// Planted-signal datasets in MHG1 format.
//
// Every raw value is background noise N(0, noise_std^2). In a hateful video,
// the segments of `hateful_instance_count` randomly chosen instances also get
// signal_strength * s_m added in each carrier modality m, where s_m is one
// unit vector per modality fixed for the whole dataset.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <iomanip>
#include <numeric>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "mhgnn/error.hpp"
#include "mhgnn/feature_io.hpp"
#include "mhgnn/seed.hpp"
#include "mhgnn/training.hpp"

namespace mhgnn {

struct SynthSpec {
    std::size_t n_videos = 200;
    std::size_t n_segments = 12;
    std::size_t n_instances = 4;
    double hate_ratio = 0.4;
    std::size_t hateful_instance_count = 1;
    double signal_strength = 2.0;
    double noise_std = 1.0;
    std::array<bool, 3> carriers{true, true, true};
    std::uint64_t seed = 0;
    /// Raw widths of the generated blocks; small so the signal is learnable at desk scale.
    FeatureWidths widths{16, 16, 16};
    double segment_duration_s = 2.0;

    void validate() const {
        if (n_videos < 2) throw ConfigError("synth: n_videos must be at least 2");
        if (n_segments == 0 || n_instances == 0 || n_segments % n_instances != 0)
            throw ConfigError("synth: n_instances must divide n_segments");
        if (!(hate_ratio > 0.0 && hate_ratio < 1.0)) throw ConfigError("synth: hate_ratio must be in (0, 1)");
        if (hateful_instance_count < 1 || hateful_instance_count > n_instances)
            throw ConfigError("synth: hateful_instance_count must be in [1, n_instances]");
        if (!(signal_strength >= 0.0) || !(noise_std >= 0.0))
            throw ConfigError("synth: signal_strength and noise_std must be non-negative");
        if (widths.visual == 0 || widths.audio == 0 || widths.text == 0)
            throw ConfigError("synth: widths must be positive");
        if (!(segment_duration_s > 0.0)) throw ConfigError("synth: segment duration must be positive");
        const auto n_hate = hate_count();
        if (n_hate == 0 || n_hate == n_videos) throw ConfigError("synth: hate_ratio leaves a class empty");
    }

    [[nodiscard]] std::size_t hate_count() const {
        return static_cast<std::size_t>(std::lround(hate_ratio * static_cast<double>(n_videos)));
    }
};

inline std::array<bool, 3> parse_carriers(const std::string& csv) {
    std::array<bool, 3> out{false, false, false};
    std::stringstream ss(csv);
    std::string item;
    while (std::getline(ss, item, ',')) {
        bool found = false;
        for (auto m : kModalities)
            if (item == modality_name(m)) {
                out[static_cast<std::size_t>(m)] = true;
                found = true;
            }
        if (!found) throw ConfigError("synth: unknown carrier modality '" + item + "'");
    }
    return out;
}

struct PlantedRecord {
    std::string video_id;
    int label = 0;
    std::vector<std::size_t> planted_instances;
};

struct SynthData {
    Dataset samples;
    std::vector<PlantedRecord> planted;
    std::array<std::vector<double>, 3> signatures;
};

inline std::string synth_video_id(std::size_t i) {
    std::ostringstream os;
    os << "synth_" << std::setw(4) << std::setfill('0') << i;
    return os.str();
}

/// In-memory generation; identical spec and seed give identical data.
inline SynthData generate_samples(const SynthSpec& spec) {
    spec.validate();
    SynthData out;
    std::mt19937_64 rng(derive_seed(spec.seed, 11));
    std::normal_distribution<double> unit(0.0, 1.0);
    for (auto m : kModalities) {
        auto& s = out.signatures[static_cast<std::size_t>(m)];
        s.resize(spec.widths.of(m));
        double norm = 0.0;
        do {
            for (auto& x : s) x = unit(rng);
            norm = std::sqrt(std::inner_product(s.begin(), s.end(), s.begin(), 0.0));
        } while (norm == 0.0);
        for (auto& x : s) x /= norm;
    }

    std::vector<int> labels(spec.n_videos, 0);
    std::fill_n(labels.begin(), spec.hate_count(), 1);
    std::shuffle(labels.begin(), labels.end(), rng);

    const std::size_t per_instance = spec.n_segments / spec.n_instances;
    for (std::size_t v = 0; v < spec.n_videos; ++v) {
        std::mt19937_64 vr(derive_seed(spec.seed, 12, v));
        std::normal_distribution<double> noise(0.0, 1.0);
        Sample sample;
        sample.video_id = synth_video_id(v);
        sample.label = labels[v];
        auto& f = sample.features;
        f.n_segments = spec.n_segments;
        f.widths = spec.widths;
        for (auto m : kModalities) {
            auto& block = f.block(m);
            block.resize(spec.n_segments * spec.widths.of(m));
            for (auto& x : block) x = static_cast<float>(spec.noise_std * noise(vr));
        }
        PlantedRecord rec{sample.video_id, sample.label, {}};
        if (sample.label == 1) {
            std::vector<std::size_t> instances(spec.n_instances);
            std::iota(instances.begin(), instances.end(), std::size_t{0});
            std::shuffle(instances.begin(), instances.end(), vr);
            rec.planted_instances.assign(instances.begin(),
                                         instances.begin() + static_cast<std::ptrdiff_t>(spec.hateful_instance_count));
            std::sort(rec.planted_instances.begin(), rec.planted_instances.end());
            for (auto m : kModalities) {
                if (!spec.carriers[static_cast<std::size_t>(m)]) continue;
                const auto& sig = out.signatures[static_cast<std::size_t>(m)];
                const std::size_t w = spec.widths.of(m);
                auto& block = f.block(m);
                for (auto inst : rec.planted_instances)
                    for (std::size_t s = inst * per_instance; s < (inst + 1) * per_instance; ++s)
                        for (std::size_t c = 0; c < w; ++c)
                            block[s * w + c] += static_cast<float>(spec.signal_strength * sig[c]);
            }
        }
        out.samples.push_back(std::move(sample));
        out.planted.push_back(std::move(rec));
    }
    return out;
}

struct SynthPaths {
    std::filesystem::path manifest;
    std::filesystem::path planted;
    std::filesystem::path features_dir;
};

inline SynthPaths synth_paths(const std::filesystem::path& out_dir) {
    return {out_dir / "manifest.jsonl", out_dir / "planted.jsonl", out_dir / "features"};
}

/// Writes manifest.jsonl, planted.jsonl and features/<video_id>.mhg under out_dir.
inline SynthData generate_dataset(const SynthSpec& spec, const std::filesystem::path& out_dir) {
    auto data = generate_samples(spec);
    const auto paths = synth_paths(out_dir);
    std::error_code ec;
    std::filesystem::create_directories(paths.features_dir, ec);
    if (ec) throw DataError(paths.features_dir.string() + ": cannot create directory: " + ec.message());

    DatasetManifest manifest{out_dir, {}};
    std::ostringstream planted;
    for (std::size_t i = 0; i < data.samples.size(); ++i) {
        const auto& s = data.samples[i];
        const std::string rel = "features/" + s.video_id + ".mhg";
        write_features(s.features, out_dir / rel);
        manifest.entries.push_back(
            {s.video_id, s.label, rel, spec.segment_duration_s * static_cast<double>(spec.n_segments), std::nullopt});
        nlohmann::ordered_json j;
        j["video_id"] = s.video_id;
        j["planted_instances"] = data.planted[i].planted_instances;
        planted << j.dump() << '\n';
    }
    write_manifest(manifest, paths.manifest);
    const auto text = planted.str();
    detail::write_file(paths.planted, std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
    return data;
}

/// video_id -> planted instance indices, from a planted.jsonl sidecar.
inline std::vector<PlantedRecord> load_planted(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw DataError(path.string() + ": cannot open planted sidecar");
    std::vector<PlantedRecord> out;
    std::string line;
    std::size_t n = 0;
    while (std::getline(in, line)) {
        ++n;
        if (line.empty()) continue;
        try {
            auto j = nlohmann::json::parse(line);
            PlantedRecord r;
            r.video_id = j.at("video_id").get<std::string>();
            r.planted_instances = j.at("planted_instances").get<std::vector<std::size_t>>();
            r.label = r.planted_instances.empty() ? 0 : 1;
            out.push_back(std::move(r));
        } catch (const nlohmann::json::exception& e) {
            throw DataError(path.string() + ":" + std::to_string(n) + ": " + e.what());
        }
    }
    return out;
}

}  // namespace mhgnn
