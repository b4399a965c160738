#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <map>
#include <optional>
#include <string>

#include <openssl/evp.h>

#include "CLI11.hpp"
#include "mtdrl/experiment.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace mtdrl;

namespace {

constexpr int kExitData = 2;
constexpr int kExitUsage = 64;

std::string sha256_hex(std::string_view bytes) {
    unsigned char digest[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    if (EVP_Digest(bytes.data(), bytes.size(), digest, &len, EVP_sha256(), nullptr) != 1)
        throw Error("SHA-256 computation failed");
    static constexpr char hex[] = "0123456789abcdef";
    std::string out;
    for (unsigned int i = 0; i < len; ++i) {
        out += hex[digest[i] >> 4];
        out += hex[digest[i] & 0xf];
    }
    return out;
}

json parse_json_file(const std::string& path) {
    const auto text = read_text_file(path);
    try {
        return json::parse(text);
    } catch (const json::parse_error& e) {
        throw DataError(path + ": " + e.what());
    }
}

// Collects a command's outputs; nothing is written until commit().
class Outputs {
public:
    void add(const fs::path& path, std::string content) { files_.emplace_back(path, std::move(content)); }

    void input(const std::string& path) {
        if (!path.empty()) inputs_[path] = sha256_hex(read_text_file(path));
    }

    void commit(const std::string& command, json config, std::optional<std::uint64_t> seed, const fs::path& manifest,
                json summary = json::object()) {
        json artifacts = json::object();
        for (const auto& [path, content] : files_) artifacts[path.filename().string()] = sha256_hex(content);
        json m = {
            {"command", command},
            {"config", std::move(config)},
            {"inputs", inputs_},
            {"artifacts", artifacts},
            {"summary", std::move(summary)},
            {"versions", {{"mtdrl", std::string(kVersion)}, {"format_version", kFormatVersion}, {"compiler", __VERSION__}}},
        };
        m["seed"] = seed ? json(*seed) : json(nullptr);
        add(manifest, m.dump(2) + "\n");
        for (const auto& [path, content] : files_) {
            if (path.has_parent_path()) fs::create_directories(path.parent_path());
            const auto tmp = fs::path(path.string() + ".tmp");
            write_text_file(tmp, content);
            fs::rename(tmp, path);
        }
    }

private:
    std::vector<std::pair<fs::path, std::string>> files_;
    std::map<std::string, std::string> inputs_;
};

fs::path manifest_for(const std::string& out) { return fs::path(out + ".manifest.json"); }

// Options shared by the commands driven by a RunConfig.
struct RunFlags {
    std::string config;
    std::uint64_t seed = 1;
    std::string schema;
    std::string world;
    bool default_world = false;
    std::size_t episodes = 0;
    std::size_t samples = 0;
    std::vector<std::string> exclude;
    std::vector<std::string> overlap;

    CLI::Option* seed_opt = nullptr;
    CLI::Option* schema_opt = nullptr;
    CLI::Option* world_opt = nullptr;
    CLI::Option* episodes_opt = nullptr;
    CLI::Option* samples_opt = nullptr;
    CLI::Option* exclude_opt = nullptr;

    void attach(CLI::App* cmd, bool with_episodes, bool with_samples) {
        cmd->add_option("--config", config, "Run config or manifest JSON");
        seed_opt = cmd->add_option("--seed", seed, "Master seed");
        schema_opt = cmd->add_option("--schema", schema, "Schema JSON (or dataset CSV whose header is used)");
        world_opt = cmd->add_option("--world", world, "World JSON");
        cmd->add_flag("--default-world", default_world, "Use the built-in synthetic world");
        exclude_opt = cmd->add_option("--exclude", exclude, "Attacks to leave out of the default world");
        cmd->add_option("--overlap", overlap, "Attack overlap knob, e.g. beurk=0.05");
        if (with_episodes) episodes_opt = cmd->add_option("--episodes", episodes, "Training episodes M");
        if (with_samples) samples_opt = cmd->add_option("--samples", samples, "Evaluation samples per behavior");
    }

    RunConfig resolve() const {
        RunConfig c = config.empty() ? RunConfig{} : run_config_from_json(parse_json_file(config));
        if (seed_opt->count()) c.seed = seed;
        if (schema_opt->count()) c.schema_path = schema;
        if (world_opt->count() && default_world) throw UsageError("--world and --default-world are exclusive");
        if (world_opt->count()) c.world.path = world;
        if (default_world) c.world.path.clear();
        if (exclude_opt->count()) c.world.options.exclude = exclude;
        for (const auto& kv : overlap) {
            const auto eq = kv.find('=');
            const auto v = eq == std::string::npos ? std::nullopt : detail::parse_real(kv.substr(eq + 1));
            if (!v) throw UsageError("--overlap expects name=value, got '" + kv + "'");
            c.world.options.overlap[kv.substr(0, eq)] = *v;
        }
        if (episodes_opt && episodes_opt->count()) c.agent.max_episodes = episodes;
        if (samples_opt && samples_opt->count()) c.eval_samples = samples;
        return run_config_from_json(to_json(c));
    }
};

// parse-perf ------------------------------------------------------------------

struct ParsePerf {
    std::string input, schema, out, missing = "drop";
    double window = 5.0;

    int run() const {
        if (missing != "drop" && missing != "zero") throw UsageError("--missing must be 'drop' or 'zero'");
        if (!(window > 0.0)) throw UsageError("window length must be positive");
        Outputs o;
        o.input(input);
        const auto samples = parse_perf_intervals(read_text_file(input));
        FeatureSchema fs_schema;
        if (!schema.empty()) {
            o.input(schema);
            RunConfig c;
            c.schema_path = schema;
            fs_schema = resolve_schema(c);
        } else {
            std::vector<std::string> names;
            for (const auto& s : samples)
                if (std::find(names.begin(), names.end(), s.event) == names.end()) names.push_back(s.event);
            if (names.empty()) throw DataError("no samples");
            fs_schema = FeatureSchema::from_names(names);
        }
        const auto w = window_aggregate(samples, fs_schema, window,
                                        missing == "zero" ? MissingPolicy::ZeroFill : MissingPolicy::Drop);
        if (w.rows.empty()) throw DataError("every window was dropped: no complete window in the input");
        const Dataset d{fs_schema, w.rows};
        json dropped = json::array();
        for (const auto& dw : w.dropped) dropped.push_back({{"window", dw.index}, {"missing", dw.missing_events}});
        o.add(out, dataset_to_csv(d));
        o.commit("parse-perf",
                 {{"input", input}, {"schema", schema}, {"window", window}, {"missing", missing}},
                 std::nullopt, manifest_for(out),
                 {{"rows", w.rows.size()}, {"window_index", w.window_index}, {"dropped", dropped}});
        std::cout << "wrote " << w.rows.size() << " windows (" << w.dropped.size() << " dropped) to " << out << '\n';
        return 0;
    }
};

// feature-select ----------------------------------------------------------------

struct FeatureSelect {
    std::string input, out;
    SelectionConfig cfg;

    int run() const {
        Outputs o;
        o.input(input);
        const auto data = load_dataset(input);
        const auto sel = select_features(data, cfg);
        json removed = json::array();
        for (const auto& r : sel.removed)
            removed.push_back({{"name", r.name}, {"reason", r.reason}, {"detail", r.detail}});
        o.add(out, to_json(sel.schema).dump(2) + "\n");
        o.commit("feature-select",
                 {{"input", input},
                  {"corr", cfg.corr_threshold},
                  {"instability_factor", cfg.instability_factor},
                  {"min_rows_per_third", cfg.min_rows_per_third}},
                 std::nullopt, manifest_for(out), {{"kept", sel.schema.names}, {"removed", removed}});
        std::cout << "kept " << sel.schema.size() << " of " << data.schema.size() << " features\n";
        for (const auto& r : sel.removed) std::cout << "  removed " << r.name << " (" << r.reason << ")\n";
        return 0;
    }
};

// make-world ------------------------------------------------------------------

struct MakeWorld {
    RunFlags flags;
    std::string out;

    int run() const {
        auto c = flags.resolve();
        if (!c.world.path.empty()) throw UsageError("make-world generates the default world; drop --world");
        Outputs o;
        o.input(c.schema_path);
        const auto schema = resolve_schema(c);
        const auto world = resolve_world(c, schema);
        o.add(out, to_json(world).dump(2) + "\n");
        o.commit("make-world", to_json(c), c.seed, manifest_for(out), {{"profiles", world.profiles().size()}});
        std::cout << "wrote " << world.profiles().size() << " behavior profiles to " << out << '\n';
        return 0;
    }
};

// ad-train / ad-eval --------------------------------------------------------------

struct AdTrain {
    RunFlags flags;
    std::string data, out;
    CLI::Option* data_opt = nullptr;

    int run() const {
        auto c = flags.resolve();
        if (data_opt->count()) c.normal_data_path = data;
        Outputs o;
        o.input(c.schema_path);
        o.input(c.world.path);
        o.input(c.normal_data_path);
        const auto schema = resolve_schema(c);
        const auto world = resolve_world(c, schema);
        const auto run = fit_detector(resolve_normal_data(c, world, schema), c.detector, c.seed);
        std::string loss = "epoch,train_mse\n";
        for (std::size_t e = 0; e < run.loss_trace.size(); ++e)
            loss += std::to_string(e + 1) + ',' + detail::format_real(run.loss_trace[e]) + '\n';
        o.add(out, to_json(run.model).dump() + "\n");
        o.add(fs::path(out).replace_extension(".loss.csv"), loss);
        o.commit("ad-train", to_json(c), c.seed, manifest_for(out),
                 {{"tau", *run.model.threshold()},
                  {"initial_loss", run.initial_loss},
                  {"final_loss", run.loss_trace.back()},
                  {"train_rows", run.outliers.retained.size()},
                  {"outliers_dropped", run.outliers.dropped.size()},
                  {"heldout_rows", run.heldout.size()}});
        std::cout << "threshold " << *run.model.threshold() << ", train MSE " << run.initial_loss << " -> "
                  << run.loss_trace.back() << '\n';
        return 0;
    }
};

// Labeled recordings: one <label>.csv per reachable behavior label.
DatasetEnv load_dataset_env(const std::string& dir, const FeatureSchema& schema, Outputs& o) {
    const auto map = default_mitigation_map();
    std::map<std::string, std::vector<Fingerprint>> data;
    for (const auto& label : map.reachable_labels()) {
        const auto path = (fs::path(dir) / (label + ".csv")).string();
        if (!fs::exists(path)) throw DataError("no recorded dataset for label '" + label + "' (" + path + ")");
        o.input(path);
        data[label] = project(load_dataset(path), schema).rows;
    }
    return DatasetEnv(std::move(data), map);
}

struct AdEval {
    RunFlags flags;
    std::string model, datasets, out;

    int run() const {
        auto c = flags.resolve();
        Outputs o;
        o.input(model);
        const auto detector = autoencoder_from_json(parse_json_file(model));
        if (!detector.calibrated()) throw DataError(model + ": detector has no threshold");
        auto rng = evaluation_rng(c.seed);
        AccuracyTable table;
        if (!datasets.empty()) {
            const auto env = load_dataset_env(datasets, detector.schema(), o);
            table = evaluate_detector(env, detector, c.eval_samples, rng);
        } else {
            o.input(c.schema_path);
            o.input(c.world.path);
            const auto world = resolve_world(c, detector.schema());
            table = evaluate_detector(world, detector, c.eval_samples, rng);
        }
        const fs::path dir(out);
        o.add(dir / "detector_table.csv", to_csv(table));
        o.add(dir / "detector_table.txt", to_text(table));
        auto cfg = to_json(c);
        cfg["model"] = model;
        cfg["datasets"] = datasets;
        o.commit("ad-eval", cfg, c.seed, dir / "manifest.json");
        std::cout << to_text(table);
        return 0;
    }
};

// train / eval ------------------------------------------------------------------

struct Train {
    RunFlags flags;
    std::string out;
    bool quiet = false;

    int run() const {
        const auto c = flags.resolve();
        Outputs o;
        o.input(c.schema_path);
        o.input(c.world.path);
        o.input(c.normal_data_path);
        const auto report_every = std::max<std::size_t>(1, c.agent.max_episodes / 10);
        auto sink = [&](const EpisodeRecord& r, double ma) {
            if (!quiet && (r.index + 1) % report_every == 0)
                std::cout << "episode " << r.index + 1 << "  moving avg " << ma << "  epsilon " << r.epsilon << '\n';
        };
        const auto run = run_training(c, sink);
        const fs::path dir(out);
        o.add(dir / "metrics.csv", metrics_csv(run.metrics));
        o.add(dir / "checkpoint.json", run.agent.to_json().dump() + "\n");
        o.add(dir / "detector.json", to_json(run.detector.model).dump() + "\n");
        o.add(dir / "world.json", to_json(run.world).dump() + "\n");
        o.add(dir / "schema.json", to_json(run.schema).dump(2) + "\n");
        std::size_t failed = 0, triggered = 0, mitigated = 0;
        for (const auto& r : run.metrics.episodes) {
            failed += r.failed;
            triggered += !r.skipped;
            mitigated += r.mitigated;
        }
        o.commit("train", to_json(c), c.seed, dir / "manifest.json",
                 {{"episodes", run.metrics.episodes.size()},
                  {"triggered_episodes", triggered},
                  {"mitigated_episodes", mitigated},
                  {"failed_episodes", failed},
                  {"prefill_transitions", run.metrics.prefill_transitions},
                  {"learn_updates", run.metrics.learn_updates},
                  {"final_epsilon", run.agent.epsilon()},
                  {"final_moving_average", run.metrics.moving_average.back()},
                  {"tau", *run.detector.model.threshold()}});
        std::cout << "final moving avg " << run.metrics.moving_average.back() << ", " << run.metrics.learn_updates
                  << " learning updates, epsilon " << run.agent.epsilon() << '\n';
        return 0;
    }
};

struct Eval {
    RunFlags flags;
    std::string run_dir, checkpoint, detector, datasets, out;

    int run() const {
        auto c = flags.resolve();
        std::string ckpt = checkpoint, det = detector;
        if (!run_dir.empty()) {
            if (ckpt.empty()) ckpt = (fs::path(run_dir) / "checkpoint.json").string();
            if (det.empty()) det = (fs::path(run_dir) / "detector.json").string();
            if (c.world.path.empty() && !flags.default_world && datasets.empty())
                c.world.path = (fs::path(run_dir) / "world.json").string();
        }
        if (ckpt.empty() || det.empty()) throw UsageError("eval needs --checkpoint and --detector, or --run");
        Outputs o;
        o.input(ckpt);
        o.input(det);
        const auto agent = DqnAgent::from_json(parse_json_file(ckpt));
        const auto model = autoencoder_from_json(parse_json_file(det));
        if (agent.state_size() != model.schema().size())
            throw DataError("checkpoint input size does not match the detector schema");
        const auto policy = greedy_policy(agent, model.norm_stats());
        auto rng = evaluation_rng(c.seed);
        AccuracyTable table;
        if (!datasets.empty()) {
            table = evaluate_policy(load_dataset_env(datasets, model.schema(), o), policy, c.eval_samples, rng);
        } else {
            o.input(c.world.path);
            table = evaluate_policy(resolve_world(c, model.schema()), policy, c.eval_samples, rng);
        }
        const fs::path dir(out);
        o.add(dir / "policy_table.csv", to_csv(table));
        o.add(dir / "policy_table.txt", to_text(table));
        auto cfg = to_json(c);
        cfg["checkpoint"] = ckpt;
        cfg["detector_model"] = det;
        cfg["datasets"] = datasets;
        o.commit("eval", cfg, c.seed, dir / "manifest.json");
        std::cout << to_text(table);
        return 0;
    }
};

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Reinforcement-learning lab for selecting moving-target-defense techniques"};
    app.require_subcommand(1);
    app.set_version_flag("--version", std::string(kVersion));

    ParsePerf pp;
    auto* c_pp = app.add_subcommand("parse-perf", "Aggregate `perf stat -I -x,` output into a dataset CSV");
    c_pp->add_option("--input", pp.input)->required();
    c_pp->add_option("--schema", pp.schema, "Schema JSON fixing the feature order (default: order of appearance)");
    c_pp->add_option("--window", pp.window, "Window length in seconds")->capture_default_str();
    c_pp->add_option("--missing", pp.missing, "drop | zero")->capture_default_str();
    c_pp->add_option("--out", pp.out)->required();

    FeatureSelect fsel;
    auto* c_fs = app.add_subcommand("feature-select", "Remove constant, unstable and correlated features");
    c_fs->add_option("--input", fsel.input, "Dataset CSV")->required();
    c_fs->add_option("--corr", fsel.cfg.corr_threshold, "Absolute correlation threshold")->capture_default_str();
    c_fs->add_option("--instability", fsel.cfg.instability_factor, "CV ratio across thirds")->capture_default_str();
    c_fs->add_option("--out", fsel.out, "Output schema JSON")->required();

    MakeWorld mw;
    auto* c_mw = app.add_subcommand("make-world", "Write the default synthetic world as JSON");
    mw.flags.attach(c_mw, false, false);
    c_mw->add_option("--out", mw.out)->required();

    AdTrain adt;
    auto* c_adt = app.add_subcommand("ad-train", "Train and calibrate the anomaly detector");
    adt.flags.attach(c_adt, false, false);
    adt.data_opt = c_adt->add_option("--data", adt.data, "Normal-behavior dataset CSV (default: sample the world)");
    c_adt->add_option("--out", adt.out, "Output detector JSON")->required();

    AdEval ade;
    auto* c_ade = app.add_subcommand("ad-eval", "Detector accuracy per behavior and afterstate");
    ade.flags.attach(c_ade, false, true);
    c_ade->add_option("--model", ade.model, "Detector JSON")->required();
    c_ade->add_option("--datasets", ade.datasets, "Directory of <label>.csv recordings (instead of a world)");
    c_ade->add_option("--out", ade.out, "Output directory")->required();

    Train tr;
    auto* c_tr = app.add_subcommand("train", "Train detector and agent in the closed loop");
    tr.flags.attach(c_tr, true, false);
    c_tr->add_option("--out", tr.out, "Output directory")->required();
    c_tr->add_flag("--quiet", tr.quiet, "No progress lines");

    Eval ev;
    auto* c_ev = app.add_subcommand("eval", "Greedy policy accuracy per behavior and afterstate");
    ev.flags.attach(c_ev, false, true);
    c_ev->add_option("--run", ev.run_dir, "Training output directory");
    c_ev->add_option("--checkpoint", ev.checkpoint, "Agent checkpoint JSON");
    c_ev->add_option("--detector", ev.detector, "Detector JSON");
    c_ev->add_option("--datasets", ev.datasets, "Directory of <label>.csv recordings (instead of a world)");
    c_ev->add_option("--out", ev.out, "Output directory")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForVersion& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kExitUsage;
    }

    try {
        if (*c_pp) return pp.run();
        if (*c_fs) return fsel.run();
        if (*c_mw) return mw.run();
        if (*c_adt) return adt.run();
        if (*c_ade) return ade.run();
        if (*c_tr) return tr.run();
        if (*c_ev) return ev.run();
    } catch (const UsageError& e) {
        std::cerr << "usage error: " << e.what() << '\n';
        return kExitUsage;
    } catch (const DataError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitData;
    } catch (const fs::filesystem_error& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitData;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return kExitUsage;
}
