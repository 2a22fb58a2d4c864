// mhgnn command-line tool.
//
// Exit codes: 0 success, 1 usage or config error, 2 data error,
// 3 runtime or numeric failure.

#include <cstdio>
#include <filesystem>
#include <iomanip>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "mhgnn/mhgnn.hpp"

namespace fs = std::filesystem;
using namespace mhgnn;

namespace {

enum Exit { kOk = 0, kUsage = 1, kData = 2, kRuntime = 3 };

void write_text(const fs::path& path, const std::string& text) {
    detail::write_file(path, std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

void write_json(const fs::path& path, const nlohmann::ordered_json& j) { write_text(path, j.dump(2) + "\n"); }

void ensure_out(const RunConfig& cfg) {
    std::error_code ec;
    fs::create_directories(cfg.out, ec);
    if (ec || !fs::is_directory(cfg.out))
        throw DataError(cfg.out.string() + ": cannot create output directory" + (ec ? ": " + ec.message() : ""));
}

void require_path(const fs::path& p, const char* key) {
    if (p.empty()) throw ConfigError(std::string("missing --") + key);
    if (!fs::exists(p)) throw DataError(p.string() + ": no such file (" + key + ")");
}

/// Loads the manifest and every feature file, and fits the model's raw
/// widths to the data. Segment counts must match the configured N.
Dataset load_checked(RunConfig& cfg) {
    require_path(cfg.manifest, "data.manifest");
    const auto manifest = load_manifest(cfg.manifest);
    auto ds = load_dataset(manifest);
    for (const auto& s : ds)
        if (s.features.n_segments != cfg.model.n_segments)
            throw DataError("video '" + s.video_id + "' has " + std::to_string(s.features.n_segments) +
                            " segments, model.n_segments is " + std::to_string(cfg.model.n_segments));
    cfg.model.raw_widths = ds.front().features.widths;
    cfg.model.validate();
    return ds;
}

TrainConfig train_config(const RunConfig& cfg) {
    auto tc = cfg.train;
    tc.seed = cfg.seed;
    return tc;
}

int cmd_synth(RunConfig& cfg) {
    auto spec = cfg.synth;
    spec.seed = cfg.seed;
    spec.validate();
    if (fs::exists(cfg.out) && !fs::is_directory(cfg.out))
        throw DataError(cfg.out.string() + ": exists and is not a directory");
    const auto data = generate_dataset(spec, cfg.out);
    std::size_t hate = 0;
    for (const auto& s : data.samples) hate += s.label == 1;
    const auto paths = synth_paths(cfg.out);
    std::cout << "wrote " << data.samples.size() << " videos (" << hate << " hateful) to " << cfg.out.string() << "\n"
              << "manifest: " << paths.manifest.string() << "\nplanted:  " << paths.planted.string() << "\n";
    return kOk;
}

int cmd_train(RunConfig& cfg) {
    auto ds = load_checked(cfg);
    ensure_out(cfg);
    const auto run = train(ds, cfg.model, train_config(cfg));
    const auto ckpt = cfg.out / "model.mhgc";
    save_checkpoint(ckpt, cfg.model, run.trained.params);

    nlohmann::ordered_json report;
    report["config"] = config_to_json(cfg);
    report["split"] = {{"train", run.split.train.size()}, {"val", run.split.val.size()}, {"test", run.split.test.size()}};
    report["best_epoch"] = run.trained.best_epoch;
    report["history"] = nlohmann::ordered_json::array();
    for (const auto& h : run.trained.history)
        report["history"].push_back({{"epoch", h.epoch},
                                     {"train_loss", h.train_loss},
                                     {"val_loss", h.val_loss},
                                     {"val_f1", h.val.f1},
                                     {"improved", h.improved}});
    std::string table;
    if (!run.split.test.empty()) {
        report["test"] = run.test.metrics.to_json();
        const std::vector<std::pair<std::string, Metrics>> rows{{"Test", run.test.metrics}};
        table = format_metrics_table(rows);
    }
    write_json(cfg.out / "train_report.json", report);
    std::ostringstream text;
    text << "epochs " << run.trained.history.size() << ", best epoch " << run.trained.best_epoch << " (val F1 "
         << std::fixed << std::setprecision(3) << run.trained.best_val_f1 << ")\n"
         << table;
    write_text(cfg.out / "train_report.txt", text.str());
    std::cout << text.str() << "checkpoint: " << ckpt.string() << "\n";
    return kOk;
}

int cmd_cv(RunConfig& cfg) {
    auto ds = load_checked(cfg);
    ensure_out(cfg);
    const auto report = run_protocol(ds, cfg.model, train_config(cfg), cfg.protocol);
    auto j = report.to_json();
    j["protocol"] = {{"kind", to_string(cfg.protocol.kind)}, {"folds", cfg.protocol.folds}, {"repeats", cfg.protocol.repeats}};
    write_json(cfg.out / "cv_report.json", j);
    const auto table = format_cv_table(report);
    write_text(cfg.out / "cv_report.txt", table);
    std::cout << table;
    return kOk;
}

int cmd_ablation(RunConfig& cfg) {
    auto ds = load_checked(cfg);
    ensure_out(cfg);
    const auto rows = run_ablation(ds, cfg.model, train_config(cfg), cfg.protocol);
    nlohmann::ordered_json j;
    j["protocol"] = {{"kind", to_string(cfg.protocol.kind)}, {"folds", cfg.protocol.folds}, {"repeats", cfg.protocol.repeats}};
    j["rows"] = ablation_json(rows);
    write_json(cfg.out / "ablation_report.json", j);
    const auto table = format_ablation_table(rows);
    write_text(cfg.out / "ablation_report.txt", table);
    std::cout << table;
    return kOk;
}

Checkpoint load_model(const RunConfig& cfg) {
    require_path(cfg.checkpoint, "data.checkpoint");
    return load_checkpoint(cfg.checkpoint);
}

int cmd_evaluate(RunConfig& cfg) {
    const auto ck = load_model(cfg);
    require_path(cfg.manifest, "data.manifest");
    const auto ds = load_dataset(load_manifest(cfg.manifest), ck.config.raw_widths);
    for (const auto& s : ds)
        if (s.features.n_segments != ck.config.n_segments)
            throw DataError("video '" + s.video_id + "' has " + std::to_string(s.features.n_segments) +
                            " segments, checkpoint expects " + std::to_string(ck.config.n_segments));
    ensure_out(cfg);
    std::vector<std::size_t> all(ds.size());
    std::iota(all.begin(), all.end(), std::size_t{0});
    const auto ev = evaluate(ck.params, ck.config, ds, all);
    auto j = ev.metrics.to_json();
    j["mean_loss"] = ev.mean_loss;
    write_json(cfg.out / "evaluate_report.json", j);
    const std::vector<std::pair<std::string, Metrics>> rows{{"Model", ev.metrics}};
    const auto table = format_metrics_table(rows);
    write_text(cfg.out / "evaluate_report.txt", table);
    std::cout << table;
    return kOk;
}

struct NamedVideo {
    std::string video_id;
    SegmentFeatures features;
};

/// data.features names one file; otherwise data.manifest, narrowed by data.video_id if set.
std::vector<NamedVideo> select_videos(const RunConfig& cfg, const ModelConfig& model) {
    std::vector<NamedVideo> out;
    if (!cfg.features.empty()) {
        require_path(cfg.features, "data.features");
        out.push_back({cfg.video_id.empty() ? cfg.features.stem().string() : cfg.video_id,
                       read_features(cfg.features, model.raw_widths)});
    } else {
        if (cfg.manifest.empty()) throw ConfigError("need --data.features or --data.manifest");
        require_path(cfg.manifest, "data.manifest");
        const auto manifest = load_manifest(cfg.manifest);
        if (!cfg.video_id.empty()) {
            out.push_back({cfg.video_id, load_video_features(manifest, cfg.video_id, model.raw_widths)});
        } else {
            for (const auto& e : manifest.entries) out.push_back({e.video_id, read_features(manifest.resolve(e), model.raw_widths)});
        }
    }
    for (const auto& v : out)
        if (v.features.n_segments != model.n_segments)
            throw DataError("video '" + v.video_id + "' has " + std::to_string(v.features.n_segments) +
                            " segments, checkpoint expects " + std::to_string(model.n_segments));
    return out;
}

const char* label_name(int label) { return label == 1 ? "hate" : "non-hate"; }

int cmd_predict(RunConfig& cfg) {
    const auto ck = load_model(cfg);
    const auto videos = select_videos(cfg, ck.config);
    ensure_out(cfg);
    nlohmann::ordered_json all = nlohmann::ordered_json::array();
    std::cout << std::fixed << std::setprecision(4);
    for (const auto& v : videos) {
        const auto o = forward(v.features, ck.params, ck.config);
        std::cout << v.video_id << "  " << label_name(o.predicted_label()) << "  h_hat=[" << o.h_hat[0] << ", "
                  << o.h_hat[1] << "]\n";
        all.push_back({{"video_id", v.video_id},
                       {"predicted", label_name(o.predicted_label())},
                       {"label", o.predicted_label()},
                       {"h_hat", o.h_hat}});
    }
    write_json(cfg.out / "predictions.json", all);
    return kOk;
}

int cmd_explain(RunConfig& cfg) {
    const auto ck = load_model(cfg);
    const auto videos = select_videos(cfg, ck.config);
    ensure_out(cfg);
    nlohmann::ordered_json all = nlohmann::ordered_json::array();
    std::cout << std::fixed << std::setprecision(4);
    for (const auto& v : videos) {
        const auto o = forward(v.features, ck.params, ck.config);
        const auto top = o.argmax_alpha();
        std::cout << v.video_id << "  predicted " << label_name(o.predicted_label()) << " (h_hat=[" << o.h_hat[0]
                  << ", " << o.h_hat[1] << "])\n";
        for (std::size_t i = 0; i < o.alpha.size(); ++i)
            std::cout << "  instance " << std::setw(2) << i + 1 << "  alpha=" << o.alpha[i] << (i == top ? "  *" : "")
                      << "\n";
        all.push_back({{"video_id", v.video_id},
                       {"alpha", o.alpha},
                       {"argmax", top},
                       {"predicted", label_name(o.predicted_label())},
                       {"h_hat", o.h_hat}});
    }
    write_json(cfg.out / "explain.json", videos.size() == 1 ? all.front() : all);
    return kOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Hateful video classifier over instance and weight graphs"};
    app.require_subcommand(1, 1);
    app.fallthrough();

    std::string config_path;
    app.add_option("--config", config_path, "JSON config file with flat dotted keys");
    std::map<std::string, std::string> flags;
    for (const auto& k : config_keys()) {
        const std::string name(k.name);
        app.add_option("--" + name, flags[name], std::string(k.help));
    }

    struct Command {
        const char* name;
        const char* help;
        int (*run)(RunConfig&);
    };
    const Command commands[] = {
        {"synth", "generate a planted-signal synthetic dataset into --out", cmd_synth},
        {"train", "train on a 70/10/20 stratified split and write a checkpoint", cmd_train},
        {"cv", "stratified k-fold cross-validation (or repeated holdout)", cmd_cv},
        {"ablation", "No Graph / Only Instance Graph / Only Weight Graph / Full Model", cmd_ablation},
        {"evaluate", "score a checkpoint on every video of a manifest", cmd_evaluate},
        {"predict", "label and probabilities for one or more videos", cmd_predict},
        {"explain", "instance weights for one or more videos", cmd_explain},
    };
    for (const auto& c : commands) app.add_subcommand(c.name, c.help);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kOk : kUsage;
    }

    try {
        RunConfig cfg;
        if (!config_path.empty()) apply_config_file(cfg, config_path);
        for (const auto& k : config_keys()) {
            const std::string name(k.name);
            if (app.count("--" + name) > 0) set_config_value(cfg, name, parse_flag_value(k, flags[name]));
        }
        cfg.validate();
        for (const auto& c : commands)
            if (app.got_subcommand(c.name)) return c.run(cfg);
        return kUsage;
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kUsage;
    } catch (const DataError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return kData;
    } catch (const NumericError& e) {
        std::cerr << "numeric error: " << e.what() << "\n";
        return kRuntime;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kRuntime;
    }
}
