// Acceptance gate: one PASS/FAIL line per criterion, non-zero exit on any FAIL.

#include <chrono>
#include <cstdio>
#include <functional>
#include <random>
#include <set>
#include <sstream>

#include "support.hpp"

using namespace mhgnn;
using namespace testing_support;

namespace {

struct Outcome {
    bool pass = false;
    std::string detail;
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
    return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string fmt(const char* f, auto... args) {
    char buf[512];
    std::snprintf(buf, sizeof buf, f, args...);
    return buf;
}

// 1. Full-model analytic gradients against central differences.
Outcome autodiff() {
    const auto t0 = Clock::now();
    std::mt19937_64 rng(101);
    std::ostringstream detail;
    bool pass = true;
    for (auto kind : {GnnKind::conv, GnnKind::attention}) {
        auto cfg = tiny_config(kind);
        auto params = init_params<double>(cfg, 7);
        std::uniform_real_distribution<double> u(-0.3, 0.3);
        for (std::size_t i = 0; i < params.size(); ++i)
            if (params.names()[i].find(".b") != std::string::npos)
                for (auto& x : params.tensors()[i].leaf_values()) x = u(rng);
        auto video = random_features(cfg.n_segments, cfg.raw_widths, rng);
        auto loss = [&] { return cross_entropy(forward_tensors(video, params, cfg).probs, 1); };
        std::vector<Tensor<double>> ps(params.tensors().begin(), params.tensors().end());
        const auto r = check_gradients(loss, ps, params.names(), 1e-5);
        pass = pass && r.max_rel_error < 1e-4;
        detail << to_string(kind) << " max rel err " << fmt("%.2e", r.max_rel_error) << "; ";
    }
    const double secs = seconds_since(t0);
    pass = pass && secs < 60.0;
    detail << fmt("%.1fs", secs);
    return {pass, detail.str()};
}

// 2. Normalisation contracts over random forwards.
Outcome normalisation() {
    std::mt19937_64 rng(202);
    const std::array<Ablation, 4> variants{Ablation::full, Ablation::no_graph, Ablation::instance_only,
                                           Ablation::weight_only};
    std::size_t violations = 0;
    double worst = 0.0;
    auto check = [&](double sum) {
        const double err = std::abs(sum - 1.0);
        worst = std::max(worst, err);
        violations += err > 1e-6;
    };
    for (int trial = 0; trial < 1000; ++trial) {
        auto cfg = tiny_config(trial % 2 ? GnnKind::conv : GnnKind::attention);
        const std::size_t shapes[][2] = {{4, 2}, {6, 3}, {8, 4}, {4, 4}, {5, 1}};
        cfg.n_segments = shapes[trial % 5][0];
        cfg.n_instances = shapes[trial % 5][1];
        cfg.ablation = variants[(trial / 2) % 4];
        cfg.epsilon = std::uniform_real_distribution<double>(0.0, 2.0)(rng);
        auto params = init_params<float>(cfg, static_cast<std::uint64_t>(trial));
        const double scale = std::uniform_real_distribution<double>(0.1, 5.0)(rng);
        const auto o = forward(random_features(cfg.n_segments, cfg.raw_widths, rng, scale), params, cfg);
        for (const auto& m : o.alpha_hat) {
            double s = 0.0;
            for (double v : m) s += v;
            check(s);
        }
        double a = 0.0;
        for (double v : o.alpha) a += v;
        check(a);
        check(o.h_hat[0] + o.h_hat[1]);
    }
    return {violations == 0, fmt("1000 forwards, %zu violations, worst |sum-1| %.2e", violations, worst)};
}

// 3. Graph construction against brute force, plus epsilon monotonicity.
Outcome graph_oracle() {
    std::mt19937_64 rng(303);
    std::normal_distribution<double> g;
    const std::vector<double> eps{0.0, 0.2, 0.4, 1.0, 2.0};
    std::size_t mismatches = 0, monotone_breaks = 0;
    for (int trial = 0; trial < 200; ++trial) {
        const std::size_t n = 1 + rng() % 16, d = 1 + rng() % 8;
        std::array<std::vector<double>, 3> data;
        std::vector<std::vector<std::vector<double>>> rows(3);
        for (std::size_t m = 0; m < 3; ++m) {
            data[m].resize(n * d);
            for (auto& x : data[m]) x = g(rng);
            for (std::size_t s = 0; s < n; ++s)
                rows[m].emplace_back(data[m].begin() + static_cast<std::ptrdiff_t>(s * d),
                                     data[m].begin() + static_cast<std::ptrdiff_t>((s + 1) * d));
        }
        ProjectedViews<double> views;
        for (std::size_t m = 0; m < 3; ++m) views.by_modality[m] = {data[m], n, d};
        std::set<std::pair<std::size_t, std::size_t>> prev;
        for (double e : eps) {
            const auto graph = build_weight_graph(views, e);
            mismatches += graph.edges != oracle_graph_edges(rows, e);
            std::set<std::pair<std::size_t, std::size_t>> cur;
            for (const auto& ed : graph.edges) cur.emplace(ed.u, ed.v);
            monotone_breaks += !std::includes(cur.begin(), cur.end(), prev.begin(), prev.end());
            prev = std::move(cur);
        }
    }
    return {mismatches == 0 && monotone_breaks == 0,
            fmt("200 feature sets x 5 eps: %zu edge-set mismatches, %zu monotonicity breaks", mismatches,
                monotone_breaks)};
}

// 4. Metrics against an independent confusion matrix, exact equality.
Outcome metrics_oracle() {
    std::mt19937_64 rng(404);
    std::size_t mismatches = 0;
    for (int trial = 0; trial < 500; ++trial) {
        const std::size_t n = 1 + rng() % 100;
        std::vector<int> p(n), y(n);
        for (std::size_t i = 0; i < n; ++i) {
            p[i] = static_cast<int>(rng() % 2);
            y[i] = static_cast<int>(rng() % 2);
        }
        std::size_t cm[2][2] = {{0, 0}, {0, 0}};  // [truth][prediction]
        for (std::size_t i = 0; i < n; ++i) ++cm[y[i]][p[i]];
        const double tp = cm[1][1], fp = cm[0][1], tn = cm[0][0], fn = cm[1][0];
        const double acc = (tp + tn) / static_cast<double>(n);
        const double prec = tp + fp > 0 ? tp / (tp + fp) : 0.0;
        const double rec = tp + fn > 0 ? tp / (tp + fn) : 0.0;
        const double f1 = prec + rec > 0 ? 2 * prec * rec / (prec + rec) : 0.0;
        const auto m = compute_metrics(p, y);
        mismatches += m.accuracy != acc || m.precision != prec || m.recall != rec || m.f1 != f1 ||
                      m.tp != cm[1][1] || m.fp != cm[0][1] || m.tn != cm[0][0] || m.fn != cm[1][0];
    }
    return {mismatches == 0, fmt("500 vectors, %zu mismatches (positive class = hate)", mismatches)};
}

// 5. Eight videos, tiny config: mean CE below 0.01 within 500 epochs, reproducibly.
Outcome overfit() {
    const auto t0 = Clock::now();
    SynthSpec spec;
    spec.n_videos = 8;
    spec.n_segments = 4;
    spec.n_instances = 2;
    spec.widths = {5, 3, 4};
    spec.seed = 5;
    const auto ds = generate_samples(spec).samples;
    const auto cfg = tiny_config();
    TrainConfig tc;
    tc.learning_rate = 1e-2;
    tc.batch_size = 8;
    tc.max_epochs = 500;
    tc.patience = 500;
    tc.seed = 5;
    std::vector<std::size_t> all(ds.size());
    std::iota(all.begin(), all.end(), std::size_t{0});
    const auto a = fit(ds, all, all, cfg, tc);
    const auto b = fit(ds, all, all, cfg, tc);
    const double loss = evaluate(a.params, cfg, ds, all).mean_loss;
    std::size_t first_below = 0;
    while (first_below < a.history.size() && a.history[first_below].val_loss >= 0.01) ++first_below;
    bool same = a.history.size() == b.history.size();
    for (std::size_t e = 0; same && e < a.history.size(); ++e)
        same = a.history[e].train_loss == b.history[e].train_loss && a.history[e].val_loss == b.history[e].val_loss;
    same = same && encode_checkpoint(cfg, a.params) == encode_checkpoint(cfg, b.params);
    return {loss < 0.01 && first_below < 500 && same,
            fmt("mean CE %.2e (first < 0.01 at epoch %zu), repeat run %s; %.1fs", loss, first_below + 1,
                same ? "bit-identical" : "DIFFERS", seconds_since(t0))};
}

SynthSpec sparse_spec(std::uint64_t seed) {
    SynthSpec s;  // n_videos 200, N 12, K 4, ratio 0.4, one instance, strength 2, noise 1
    s.seed = seed;
    return s;
}

ModelConfig sparse_model(const SynthSpec& spec) { return synthetic_config(spec); }

TrainConfig sparse_training(std::uint64_t seed) {
    TrainConfig tc;
    tc.learning_rate = 1e-2;
    tc.batch_size = 16;
    tc.max_epochs = 80;
    tc.patience = 15;
    tc.seed = seed;
    return tc;
}

// 6. Sparse-hate end to end: accuracy and explanation against the sidecar.
Outcome sparse_hate() {
    int passing = 0;
    std::ostringstream detail;
    double slowest = 0.0;
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        const auto t0 = Clock::now();
        const auto spec = sparse_spec(seed);
        const auto data = generate_samples(spec);
        const double probe = linear_probe_accuracy(data.samples, 5, seed);
        const auto cfg = sparse_model(spec);
        const auto run = train(data.samples, cfg, sparse_training(seed));
        std::size_t hits = 0, eligible = 0;
        for (std::size_t j = 0; j < run.split.test.size(); ++j) {
            const auto idx = run.split.test[j];
            if (data.samples[idx].label != 1 || run.test.predicted[j] != 1) continue;
            ++eligible;
            const auto top = run.test.outputs[j].argmax_alpha();
            const auto& planted = data.planted[idx].planted_instances;
            hits += std::find(planted.begin(), planted.end(), top) != planted.end();
        }
        const double acc = run.test.metrics.accuracy;
        const double hit_rate = eligible ? static_cast<double>(hits) / static_cast<double>(eligible) : 0.0;
        const double secs = seconds_since(t0);
        slowest = std::max(slowest, secs);
        const bool ok = probe >= 0.9 && acc >= 0.9 && hit_rate >= 0.8 && secs <= 600.0;
        passing += ok;
        detail << fmt("seed %llu: probe %.3f acc %.3f argmax-hit %zu/%zu %s (%.0fs); ",
                      static_cast<unsigned long long>(seed), probe, acc, hits, eligible, ok ? "ok" : "miss", secs);
    }
    detail << passing << "/5 seeds pass";
    return {passing >= 3, detail.str()};
}

// 7. Ablation ordering on the same data with shared folds and seeds.
Outcome ablation_ordering() {
    int ordered = 0;
    bool labels_ok = true;
    std::ostringstream detail;
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        const auto spec = sparse_spec(seed);
        const auto data = generate_samples(spec);
        EvalProtocol proto;  // 5-fold stratified CV
        auto tc = sparse_training(seed);
        const auto rows = run_ablation(data.samples, sparse_model(spec), tc, proto);
        const auto table = format_ablation_table(rows);
        for (const char* label : {"No Graph", "Only Instance Graph", "Only Weight Graph", "Full Model"})
            labels_ok = labels_ok && table.find(label) != std::string::npos;
        double full = 0.0, none = 0.0;
        for (const auto& r : rows) {
            if (r.variant == Ablation::full) full = r.report.mean.accuracy;
            if (r.variant == Ablation::no_graph) none = r.report.mean.accuracy;
        }
        ordered += full >= none;
        detail << fmt("seed %llu: full %.3f vs no_graph %.3f; ", static_cast<unsigned long long>(seed), full, none);
    }
    detail << ordered << "/5 ordered, row labels " << (labels_ok ? "present" : "MISSING");
    return {ordered >= 4 && labels_ok, detail.str()};
}

// 8. Stratified folds on 652/431 labels.
Outcome stratification() {
    std::vector<int> y(652, 0);
    y.resize(652 + 431, 1);
    const auto folds = stratified_kfold(y, 5, 8);
    bool ok = folds.size() == 5;
    std::ostringstream detail;
    for (const auto& f : folds) {
        double pos = 0;
        for (auto i : f) pos += y[i];
        const double neg = static_cast<double>(f.size()) - pos;
        ok = ok && std::abs(neg - 652.0 / 5) <= 1.0 && std::abs(pos - 431.0 / 5) <= 1.0;
        detail << fmt("%.0f/%.0f ", neg, pos);
    }
    detail << "(neg/pos per fold; shares 130.4/86.2)";
    return {ok, detail.str()};
}

// 9. Byte-identical round trips and header fuzzing for both formats.
Outcome formats() {
    std::mt19937_64 rng(909);
    TempDir dir("acceptance_formats");
    std::size_t roundtrip_fail = 0, accepted_fuzz = 0, fuzzed = 0;
    for (int trial = 0; trial < 20; ++trial) {
        const std::size_t n = 1 + rng() % 20;
        auto f = random_features(n, {static_cast<std::uint32_t>(1 + rng() % 64), static_cast<std::uint32_t>(1 + rng() % 40),
                                     static_cast<std::uint32_t>(1 + rng() % 64)},
                                 rng);
        for (std::size_t s = 0; s < rng() % 5; ++s) f.sentence_spans.push_back({0.5 * s, 0.5 * s + 0.4});
        const auto path = dir.path() / "f.mhg";
        write_features(f, path);
        const auto bytes = detail::read_file(path);
        write_features(read_features(path), dir.path() / "g.mhg");
        roundtrip_fail += bytes != detail::read_file(dir.path() / "g.mhg");
        for (std::size_t pos = 0; pos < kFeatureHeaderBytes; ++pos) {
            auto bad = bytes;
            bad[pos] = static_cast<std::uint8_t>(bad[pos] + 1 + rng() % 255);
            ++fuzzed;
            try {
                (void)decode_features(bad);
                ++accepted_fuzz;
            } catch (const DataError&) {
            }
        }
    }
    for (auto kind : {GnnKind::conv, GnnKind::attention}) {
        auto cfg = tiny_config(kind);
        const auto params = init_params<float>(cfg, 3);
        const auto path = dir.path() / "m.mhgc";
        save_checkpoint(path, cfg, params);
        const auto bytes = detail::read_file(path);
        const auto ck = load_checkpoint(path);
        save_checkpoint(dir.path() / "n.mhgc", ck.config, ck.params);
        roundtrip_fail += bytes != detail::read_file(dir.path() / "n.mhgc");
        for (std::size_t pos = 0; pos < 64; ++pos) {
            auto bad = bytes;
            bad[pos] = static_cast<std::uint8_t>(bad[pos] + 1 + rng() % 255);
            ++fuzzed;
            try {
                (void)decode_checkpoint(bad);
                ++accepted_fuzz;
            } catch (const DataError&) {
            }
        }
    }
    return {roundtrip_fail == 0 && accepted_fuzz == 0,
            fmt("%zu round-trip differences, %zu/%zu fuzzed headers accepted", roundtrip_fail, accepted_fuzz, fuzzed)};
}

}  // namespace

int main(int argc, char** argv) {
    const std::vector<std::pair<const char*, std::function<Outcome()>>> criteria{
        {"autodiff correctness", autodiff},     {"normalization invariants", normalisation},
        {"graph construction oracle", graph_oracle}, {"metrics oracle", metrics_oracle},
        {"overfit sanity", overfit},            {"sparse-hate end-to-end", sparse_hate},
        {"ablation ordering", ablation_ordering}, {"stratification", stratification},
        {"format round-trips", formats},
    };
    // Optional argument: comma-free list of criterion numbers to run, e.g. "1259".
    const std::string only = argc > 1 ? argv[1] : "";
    int failed = 0;
    for (std::size_t i = 0; i < criteria.size(); ++i) {
        if (!only.empty() && only.find(static_cast<char>('1' + i)) == std::string::npos) continue;
        Outcome o;
        try {
            o = criteria[i].second();
        } catch (const std::exception& e) {
            o = {false, std::string("exception: ") + e.what()};
        }
        failed += !o.pass;
        std::printf("[%s] %zu. %s: %s\n", o.pass ? "PASS" : "FAIL", i + 1, criteria[i].first, o.detail.c_str());
        std::fflush(stdout);
    }
    return failed == 0 ? 0 : 1;
}
