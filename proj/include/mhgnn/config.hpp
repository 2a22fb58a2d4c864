#pragma once

// Run configuration: one flat namespace of dotted keys covering data paths,
// model, training, evaluation protocol and synthetic-data settings.
//
// Precedence is defaults < JSON config file < command-line flags.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "mhgnn/error.hpp"
#include "mhgnn/model.hpp"
#include "mhgnn/synthetic.hpp"
#include "mhgnn/training.hpp"

namespace mhgnn {

struct RunConfig {
    std::filesystem::path manifest;
    std::filesystem::path checkpoint;
    std::filesystem::path features;
    std::string video_id;
    std::filesystem::path out = "out";
    std::uint64_t seed = 0;
    ModelConfig model;
    TrainConfig train;
    EvalProtocol protocol;
    SynthSpec synth;

    /// Cross-field checks that do not need the dataset.
    void validate() const {
        model.validate();
        train.validate();
        synth.validate();
        if (protocol.folds < 2) throw ConfigError("protocol.folds must be at least 2");
        if (protocol.repeats == 0) throw ConfigError("protocol.repeats must be at least 1");
    }
};

enum class ValueKind { integer, real, boolean, string };

struct ConfigKey {
    std::string_view name;
    ValueKind kind;
    std::string_view help;
    std::function<void(RunConfig&, const nlohmann::json&)> set;
    std::function<nlohmann::json(const RunConfig&)> get;
};

namespace detail {

template <typename Field>
ConfigKey key(std::string_view name, ValueKind kind, std::string_view help, Field field) {
    return {name, kind, help,
            [field](RunConfig& c, const nlohmann::json& v) { field(c) = v.get<std::remove_reference_t<decltype(field(c))>>(); },
            [field](const RunConfig& c) { return nlohmann::json(field(const_cast<RunConfig&>(c))); }};
}

inline ConfigKey path_key(std::string_view name, std::string_view help,
                          std::filesystem::path& (*field)(RunConfig&)) {
    return {name, ValueKind::string, help,
            [field](RunConfig& c, const nlohmann::json& v) { field(c) = v.get<std::string>(); },
            [field](const RunConfig& c) { return nlohmann::json(field(const_cast<RunConfig&>(c)).string()); }};
}

template <typename Parse, typename ToString, typename Field>
ConfigKey enum_key(std::string_view name, std::string_view help, Parse parse, ToString str, Field field) {
    return {name, ValueKind::string, help,
            [parse, field](RunConfig& c, const nlohmann::json& v) { field(c) = parse(v.get<std::string>()); },
            [str, field](const RunConfig& c) { return nlohmann::json(std::string(str(field(const_cast<RunConfig&>(c))))); }};
}

inline std::string carriers_string(const std::array<bool, 3>& carriers) {
    std::string s;
    for (auto m : kModalities)
        if (carriers[static_cast<std::size_t>(m)]) s += (s.empty() ? "" : ",") + std::string(modality_name(m));
    return s;
}

}  // namespace detail

inline const std::vector<ConfigKey>& config_keys() {
    using detail::enum_key;
    using detail::key;
    using detail::path_key;
    using V = ValueKind;
    static const std::vector<ConfigKey> keys = {
        path_key("data.manifest", "dataset manifest (JSONL)", [](RunConfig& c) -> std::filesystem::path& { return c.manifest; }),
        path_key("data.checkpoint", "model checkpoint (MHGC)", [](RunConfig& c) -> std::filesystem::path& { return c.checkpoint; }),
        path_key("data.features", "single feature file (MHG1) for predict/explain",
                 [](RunConfig& c) -> std::filesystem::path& { return c.features; }),
        key("data.video_id", V::string, "manifest entry for predict/explain", [](RunConfig& c) -> std::string& { return c.video_id; }),
        path_key("out", "output directory", [](RunConfig& c) -> std::filesystem::path& { return c.out; }),
        key("seed", V::integer, "master seed", [](RunConfig& c) -> std::uint64_t& { return c.seed; }),

        key("model.n_segments", V::integer, "segments per video (N)", [](RunConfig& c) -> std::size_t& { return c.model.n_segments; }),
        key("model.n_instances", V::integer, "instances per video (K)", [](RunConfig& c) -> std::size_t& { return c.model.n_instances; }),
        key("model.d", V::integer, "node width (D)", [](RunConfig& c) -> std::size_t& { return c.model.d; }),
        key("model.epsilon", V::real, "cosine-distance threshold", [](RunConfig& c) -> double& { return c.model.epsilon; }),
        enum_key("model.gnn_kind", "conv | attention", parse_gnn_kind, [](GnnKind k) { return to_string(k); },
                 [](RunConfig& c) -> GnnKind& { return c.model.gnn_kind; }),
        key("model.gnn_layers", V::integer, "GNN layers", [](RunConfig& c) -> std::size_t& { return c.model.gnn_layers; }),
        key("model.gnn_hidden", V::integer, "GNN hidden width", [](RunConfig& c) -> std::size_t& { return c.model.gnn_hidden; }),
        key("model.weight_head_hidden", V::integer, "weight head hidden width",
            [](RunConfig& c) -> std::size_t& { return c.model.weight_head_hidden; }),
        key("model.classifier_hidden", V::integer, "classifier hidden width",
            [](RunConfig& c) -> std::size_t& { return c.model.classifier_hidden; }),
        enum_key("model.projection_visual_audio", "lstm | mlp", parse_projection_kind,
                 [](ProjectionKind k) { return to_string(k); },
                 [](RunConfig& c) -> ProjectionKind& { return c.model.projection_visual_audio; }),
        enum_key("model.projection_text", "mlp", parse_projection_kind, [](ProjectionKind k) { return to_string(k); },
                 [](RunConfig& c) -> ProjectionKind& { return c.model.projection_text; }),
        enum_key("model.ablation", "full | no_graph | instance_only | weight_only", parse_ablation,
                 [](Ablation a) { return to_string(a); }, [](RunConfig& c) -> Ablation& { return c.model.ablation; }),
        key("model.dropout", V::real, "dropout on the classification feature", [](RunConfig& c) -> double& { return c.model.dropout; }),
        key("model.attention_slope", V::real, "leaky-relu slope in attention scores",
            [](RunConfig& c) -> double& { return c.model.attention_slope; }),

        key("train.learning_rate", V::real, "step size", [](RunConfig& c) -> double& { return c.train.learning_rate; }),
        key("train.batch_size", V::integer, "videos per step", [](RunConfig& c) -> std::size_t& { return c.train.batch_size; }),
        key("train.max_epochs", V::integer, "epoch cap", [](RunConfig& c) -> std::size_t& { return c.train.max_epochs; }),
        key("train.patience", V::integer, "early-stopping patience", [](RunConfig& c) -> std::size_t& { return c.train.patience; }),
        enum_key("train.optimizer", "adam | sgd", parse_optimizer, [](OptimizerKind k) { return to_string(k); },
                 [](RunConfig& c) -> OptimizerKind& { return c.train.optimizer; }),
        key("train.beta1", V::real, "Adam beta1", [](RunConfig& c) -> double& { return c.train.beta1; }),
        key("train.beta2", V::real, "Adam beta2", [](RunConfig& c) -> double& { return c.train.beta2; }),
        key("train.adam_eps", V::real, "Adam epsilon", [](RunConfig& c) -> double& { return c.train.adam_eps; }),
        key("train.split_train", V::real, "train fraction", [](RunConfig& c) -> double& { return c.train.split_train; }),
        key("train.split_val", V::real, "validation fraction", [](RunConfig& c) -> double& { return c.train.split_val; }),
        key("train.split_test", V::real, "test fraction", [](RunConfig& c) -> double& { return c.train.split_test; }),
        key("train.class_weighting", V::boolean, "inverse-frequency loss weights",
            [](RunConfig& c) -> bool& { return c.train.class_weighting; }),

        enum_key("protocol.kind", "cv | holdout", parse_protocol, [](EvalProtocol::Kind k) { return to_string(k); },
                 [](RunConfig& c) -> EvalProtocol::Kind& { return c.protocol.kind; }),
        key("protocol.folds", V::integer, "folds for cv", [](RunConfig& c) -> std::size_t& { return c.protocol.folds; }),
        key("protocol.repeats", V::integer, "repeated runs", [](RunConfig& c) -> std::size_t& { return c.protocol.repeats; }),

        key("synth.n_videos", V::integer, "videos to generate", [](RunConfig& c) -> std::size_t& { return c.synth.n_videos; }),
        key("synth.n_segments", V::integer, "segments per video", [](RunConfig& c) -> std::size_t& { return c.synth.n_segments; }),
        key("synth.n_instances", V::integer, "instances per video", [](RunConfig& c) -> std::size_t& { return c.synth.n_instances; }),
        key("synth.hate_ratio", V::real, "fraction of hateful videos", [](RunConfig& c) -> double& { return c.synth.hate_ratio; }),
        key("synth.hateful_instance_count", V::integer, "planted instances per hateful video",
            [](RunConfig& c) -> std::size_t& { return c.synth.hateful_instance_count; }),
        key("synth.signal_strength", V::real, "signature magnitude", [](RunConfig& c) -> double& { return c.synth.signal_strength; }),
        key("synth.noise_std", V::real, "background noise std", [](RunConfig& c) -> double& { return c.synth.noise_std; }),
        {"synth.carriers", ValueKind::string, "comma-separated carrier modalities",
         [](RunConfig& c, const nlohmann::json& v) { c.synth.carriers = parse_carriers(v.get<std::string>()); },
         [](const RunConfig& c) { return nlohmann::json(detail::carriers_string(c.synth.carriers)); }},
        key("synth.width_visual", V::integer, "raw visual width", [](RunConfig& c) -> std::uint32_t& { return c.synth.widths.visual; }),
        key("synth.width_audio", V::integer, "raw audio width", [](RunConfig& c) -> std::uint32_t& { return c.synth.widths.audio; }),
        key("synth.width_text", V::integer, "raw text width", [](RunConfig& c) -> std::uint32_t& { return c.synth.widths.text; }),
        key("synth.segment_duration_s", V::real, "seconds per segment",
            [](RunConfig& c) -> double& { return c.synth.segment_duration_s; }),
    };
    return keys;
}

inline const ConfigKey* find_config_key(std::string_view name) {
    for (const auto& k : config_keys())
        if (k.name == name) return &k;
    return nullptr;
}

/// Converts a flag's text to the key's JSON type.
inline nlohmann::json parse_flag_value(const ConfigKey& key, const std::string& text) {
    try {
        switch (key.kind) {
            case ValueKind::integer: {
                std::size_t pos = 0;
                if (!text.empty() && text[0] == '-') throw std::invalid_argument("negative");
                const auto v = std::stoull(text, &pos);
                if (pos != text.size()) throw std::invalid_argument("trailing characters");
                return v;
            }
            case ValueKind::real: {
                std::size_t pos = 0;
                const auto v = std::stod(text, &pos);
                if (pos != text.size()) throw std::invalid_argument("trailing characters");
                return v;
            }
            case ValueKind::boolean:
                if (text == "true" || text == "1") return true;
                if (text == "false" || text == "0") return false;
                throw std::invalid_argument("expected true or false");
            case ValueKind::string:
                return text;
        }
    } catch (const std::exception&) {
        throw ConfigError("--" + std::string(key.name) + ": cannot parse '" + text + "'");
    }
    return nullptr;
}

inline void set_config_value(RunConfig& c, std::string_view name, const nlohmann::json& value) {
    const auto* k = find_config_key(name);
    if (!k) throw ConfigError("unknown config key '" + std::string(name) + "'");
    const bool ok = (k->kind == ValueKind::integer && value.is_number_unsigned()) ||
                    (k->kind == ValueKind::integer && value.is_number_integer() && value.get<std::int64_t>() >= 0) ||
                    (k->kind == ValueKind::real && value.is_number()) ||
                    (k->kind == ValueKind::boolean && value.is_boolean()) ||
                    (k->kind == ValueKind::string && value.is_string());
    if (!ok) throw ConfigError("config key '" + std::string(name) + "' has the wrong type (" + value.type_name() + ")");
    try {
        k->set(c, value);
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError("config key '" + std::string(name) + "': " + e.what());
    }
}

/// Applies a flat JSON object of dotted keys; any unknown key is an error.
inline void apply_config_json(RunConfig& c, const nlohmann::json& j, const std::string& origin = "config") {
    if (!j.is_object()) throw ConfigError(origin + ": top level must be a JSON object");
    for (const auto& [name, value] : j.items()) {
        try {
            set_config_value(c, name, value);
        } catch (const ConfigError& e) {
            throw ConfigError(origin + ": " + e.what());
        }
    }
}

inline void apply_config_file(RunConfig& c, const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError(path.string() + ": cannot open config file");
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(path.string() + ": " + e.what());
    }
    apply_config_json(c, j, path.string());
}

inline nlohmann::ordered_json config_to_json(const RunConfig& c) {
    nlohmann::ordered_json j;
    for (const auto& k : config_keys()) j[std::string(k.name)] = k.get(c);
    return j;
}

}  // namespace mhgnn
