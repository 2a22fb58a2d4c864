#include <gtest/gtest.h>

#include <fstream>
#include <numeric>

#include "support.hpp"

using namespace mhgnn;
using testing_support::linear_probe_accuracy;
using testing_support::TempDir;

namespace {

std::vector<std::uint8_t> slurp(const std::filesystem::path& p) { return detail::read_file(p); }

SynthSpec small(std::uint64_t seed) {
    SynthSpec s;
    s.n_videos = 20;
    s.seed = seed;
    return s;
}

// Mean projection of a segment range onto the modality signature.
double projection(const SegmentFeatures& f, Modality m, const std::vector<double>& sig, std::size_t s0,
                  std::size_t s1) {
    const auto w = f.widths.of(m);
    double acc = 0.0;
    for (std::size_t s = s0; s < s1; ++s)
        for (std::size_t c = 0; c < w; ++c) acc += f.block(m)[s * w + c] * sig[c];
    return acc / static_cast<double>(s1 - s0);
}

}  // namespace

TEST(Synthetic, SameSeedIsByteIdentical) {
    TempDir a("syn_a"), b("syn_b"), c("syn_c");
    generate_dataset(small(5), a.path());
    generate_dataset(small(5), b.path());
    generate_dataset(small(6), c.path());
    std::size_t files = 0;
    bool any_differs = false;
    for (const auto& e : std::filesystem::recursive_directory_iterator(a.path())) {
        if (!e.is_regular_file()) continue;
        const auto rel = std::filesystem::relative(e.path(), a.path());
        EXPECT_EQ(slurp(e.path()), slurp(b.path() / rel)) << rel;
        any_differs |= slurp(e.path()) != slurp(c.path() / rel);
        ++files;
    }
    EXPECT_EQ(files, 22u);
    EXPECT_TRUE(any_differs);
}

TEST(Synthetic, OutputPassesValidation) {
    TempDir dir("syn_valid");
    auto spec = small(1);
    generate_dataset(spec, dir.path());
    const auto paths = synth_paths(dir.path());
    auto manifest = load_manifest(paths.manifest);
    ASSERT_EQ(manifest.entries.size(), 20u);
    EXPECT_EQ(manifest.class_counts(), (std::pair<std::size_t, std::size_t>{12, 8}));
    EXPECT_DOUBLE_EQ(manifest.entries[0].duration_s, 24.0);
    auto ds = load_dataset(manifest, spec.widths);
    for (const auto& s : ds) {
        EXPECT_EQ(s.features.n_segments, 12u);
        EXPECT_NO_THROW(s.features.validate(spec.widths));
    }
    auto planted = load_planted(paths.planted);
    ASSERT_EQ(planted.size(), 20u);
    for (std::size_t i = 0; i < 20; ++i) {
        EXPECT_EQ(planted[i].video_id, manifest.entries[i].video_id);
        EXPECT_EQ(planted[i].label, manifest.entries[i].label);
        for (auto k : planted[i].planted_instances) EXPECT_LT(k, spec.n_instances);
    }
}

TEST(Synthetic, SignalSitsInPlantedInstances) {
    SynthSpec spec;
    spec.n_videos = 60;
    spec.seed = 3;
    spec.carriers = parse_carriers("text");
    auto data = generate_samples(spec);
    const std::size_t per = spec.n_segments / spec.n_instances;
    std::size_t hateful = 0;
    for (std::size_t v = 0; v < data.samples.size(); ++v) {
        const auto& f = data.samples[v].features;
        const auto& rec = data.planted[v];
        if (rec.label == 0) {
            EXPECT_TRUE(rec.planted_instances.empty());
            continue;
        }
        ++hateful;
        ASSERT_EQ(rec.planted_instances.size(), 1u);
        const auto k = rec.planted_instances[0];
        // Signature projection of planted segments is strength + N(0, 1/sqrt(per)).
        EXPECT_NEAR(projection(f, Modality::text, data.signatures[2], k * per, (k + 1) * per), 2.0, 2.5);
        EXPECT_NEAR(projection(f, Modality::visual, data.signatures[0], k * per, (k + 1) * per), 0.0, 2.5);
    }
    EXPECT_EQ(hateful, 24u);
    for (const auto& sig : data.signatures)
        EXPECT_NEAR(std::inner_product(sig.begin(), sig.end(), sig.begin(), 0.0), 1.0, 1e-12);

    // Exact oracle: planted video minus its background equals strength * signature.
    auto quiet = spec;
    quiet.noise_std = 0.0;
    auto clean = generate_samples(quiet);
    for (std::size_t v = 0; v < clean.samples.size(); ++v) {
        const auto& f = clean.samples[v].features;
        for (std::size_t s = 0; s < spec.n_segments; ++s) {
            const bool planted = clean.planted[v].label == 1 && s / per == clean.planted[v].planted_instances[0];
            for (std::size_t c = 0; c < 16; ++c) {
                EXPECT_EQ(f.visual[s * 16 + c], 0.0f);
                EXPECT_FLOAT_EQ(f.text[s * 16 + c], planted ? static_cast<float>(2.0 * clean.signatures[2][c]) : 0.0f);
            }
        }
    }
}

TEST(Synthetic, EveryInstancePlanted) {
    SynthSpec spec;
    spec.n_videos = 10;
    spec.hateful_instance_count = spec.n_instances;
    for (const auto& r : generate_samples(spec).planted)
        if (r.label == 1) {
            EXPECT_EQ(r.planted_instances, (std::vector<std::size_t>{0, 1, 2, 3}));
        }
}

TEST(Synthetic, LinearProbeFindsSignal) {
    SynthSpec spec;  // 200 videos, N=12, K=4, ratio 0.4, one instance, strength 2, noise 1
    double total = 0.0;
    int passing = 0;
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        spec.seed = seed;
        const double acc = linear_probe_accuracy(generate_samples(spec).samples, 5, seed);
        EXPECT_GE(acc, 0.85) << seed;
        total += acc;
        passing += acc >= 0.9;
    }
    EXPECT_GE(total / 5.0, 0.9);
    EXPECT_GE(passing, 3);
}

TEST(Synthetic, NoSignalIsChance) {
    SynthSpec spec;
    spec.signal_strength = 0.0;
    double probe = 0.0, model = 0.0;
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        spec.seed = seed;
        auto ds = generate_samples(spec).samples;
        probe += linear_probe_accuracy(ds, 5, seed);
        auto cfg = testing_support::synthetic_config(spec);
        TrainConfig tc;
        tc.learning_rate = 3e-3;
        tc.max_epochs = 6;
        tc.patience = 2;
        tc.seed = seed;
        model += train(ds, cfg, tc).test.metrics.accuracy;
    }
    EXPECT_NEAR(probe / 5.0, 0.5, 0.1);
    EXPECT_NEAR(model / 5.0, 0.5, 0.1 + 1e-9);
}

TEST(Synthetic, SpecValidation) {
    SynthSpec s;
    s.hate_ratio = 1.0;
    EXPECT_THROW(s.validate(), ConfigError);
    s = {};
    s.n_instances = 5;
    EXPECT_THROW(s.validate(), ConfigError);
    s = {};
    s.hateful_instance_count = 0;
    EXPECT_THROW(s.validate(), ConfigError);
    s = {};
    s.n_videos = 3;
    s.hate_ratio = 0.1;
    EXPECT_THROW(s.validate(), ConfigError);
    EXPECT_THROW((void)parse_carriers("visual,smell"), ConfigError);
    EXPECT_EQ(parse_carriers("audio,visual"), (std::array<bool, 3>{true, true, false}));
    EXPECT_EQ(synth_video_id(7), "synth_0007");
}
