#pragma once

#include <filesystem>
#include <optional>
#include <string>

#include "mtdrl/orchestrator.hpp"

namespace mtdrl {

inline constexpr std::string_view kVersion = "1.0.0";

struct WorldSpec {
    std::string path;  // empty: generate the default synthetic world
    WorldOptions options;
};

// Everything a training run depends on. All randomness derives from `seed`.
struct RunConfig {
    std::uint64_t seed = 1;
    std::string schema_path;          // empty: built-in 46-event schema
    WorldSpec world;
    std::string normal_data_path;      // empty: sample normal behavior from the world
    std::size_t normal_samples = 5760;  // 8 h of 5 s windows
    AutoencoderConfig detector;
    AgentConfig agent;
    std::size_t eval_samples = 2000;

    void validate() const {
        agent.validate();
        if (normal_samples < detector.batch_size) throw UsageError("normal_samples must be at least the detector batch size");
        if (eval_samples == 0) throw UsageError("eval_samples must be positive");
        if (agent.max_episodes == 0) throw UsageError("episodes must be positive");
    }
};

inline nlohmann::json to_json(const WorldOptions& o) {
    return {{"attack_prob", o.attack_prob}, {"separation", o.separation}, {"afterstate_offset", o.afterstate_offset},
            {"overlap", o.overlap},         {"exclude", o.exclude}};
}

inline WorldOptions world_options_from_json(const nlohmann::json& j, WorldOptions o = {}) {
    try {
        o.attack_prob = j.value("attack_prob", o.attack_prob);
        o.separation = j.value("separation", o.separation);
        o.afterstate_offset = j.value("afterstate_offset", o.afterstate_offset);
        o.overlap = j.value("overlap", o.overlap);
        o.exclude = j.value("exclude", o.exclude);
    } catch (const nlohmann::json::exception& e) {
        throw DataError(std::string("world options: ") + e.what());
    }
    for (const auto& [name, knob] : o.overlap)
        if (!(knob >= 0.0 && knob <= 1.0)) throw UsageError("overlap knob for '" + name + "' must lie in [0, 1]");
    return o;
}

inline nlohmann::json to_json(const RunConfig& c) {
    return {
        {"seed", c.seed},
        {"schema_path", c.schema_path},
        {"world", {{"path", c.world.path}, {"options", to_json(c.world.options)}}},
        {"normal_data_path", c.normal_data_path},
        {"normal_samples", c.normal_samples},
        {"detector", to_json(c.detector)},
        {"agent", to_json(c.agent)},
        {"eval_samples", c.eval_samples},
    };
}

// Accepts a plain config or a run manifest (whose "config" key holds one).
// Missing keys keep their defaults.
inline RunConfig run_config_from_json(const nlohmann::json& doc) {
    const auto& j = doc.contains("config") && doc.at("config").is_object() ? doc.at("config") : doc;
    if (!j.is_object()) throw DataError("config must be a JSON object");
    RunConfig c;
    try {
        c.seed = j.value("seed", c.seed);
        c.schema_path = j.value("schema_path", c.schema_path);
        if (j.contains("world")) {
            const auto& w = j.at("world");
            c.world.path = w.value("path", c.world.path);
            if (w.contains("options")) c.world.options = world_options_from_json(w.at("options"));
        }
        c.normal_data_path = j.value("normal_data_path", c.normal_data_path);
        c.normal_samples = j.value("normal_samples", c.normal_samples);
        if (j.contains("detector")) c.detector = autoencoder_config_from_json(j.at("detector"));
        if (j.contains("agent")) c.agent = agent_config_from_json(j.at("agent"));
        c.eval_samples = j.value("eval_samples", c.eval_samples);
    } catch (const nlohmann::json::exception& e) {
        throw DataError(std::string("config: ") + e.what());
    }
    c.validate();
    return c;
}

inline FeatureSchema resolve_schema(const RunConfig& c) {
    if (c.schema_path.empty()) return default_schema();
    const auto text = read_text_file(c.schema_path);
    if (c.schema_path.ends_with(".json")) {
        try {
            return schema_from_json(nlohmann::json::parse(text));
        } catch (const nlohmann::json::parse_error& e) {
            throw DataError(c.schema_path + ": " + e.what());
        }
    }
    return dataset_from_csv(text.substr(0, text.find('\n'))).schema;
}

inline SimWorld resolve_world(const RunConfig& c, const FeatureSchema& schema) {
    if (c.world.path.empty()) return default_world(schema, c.seed, c.world.options);
    SimWorld w = [&] {
        try {
            return world_from_json(nlohmann::json::parse(read_text_file(c.world.path)));
        } catch (const nlohmann::json::parse_error& e) {
            throw DataError(c.world.path + ": " + e.what());
        }
    }();
    if (w.dimension() != schema.size())
        throw DataError("world dimension " + std::to_string(w.dimension()) + " does not match schema size " +
                        std::to_string(schema.size()));
    return w;
}

// Simulated normal-behavior recording used to fit the detector.
inline Dataset synthesize_normal(const SimWorld& world, const FeatureSchema& schema, std::size_t n, std::uint64_t seed) {
    auto rng = substream(seed, "normal-data");
    Dataset d{schema, {}};
    d.rows.reserve(n);
    for (std::size_t i = 0; i < n; ++i) d.rows.push_back(world.observe(kNormalLabel, rng).fingerprint);
    return d;
}

// Trains the autoencoder and calibrates its threshold on the held-out split.
inline AutoencoderTraining fit_detector(const Dataset& normal, AutoencoderConfig cfg, std::uint64_t seed) {
    cfg.seed = seed;
    auto run = train_autoencoder(normal, cfg);
    calibrate_threshold(run.model, run.heldout, cfg.threshold_sigmas);
    return run;
}

// Recorded normal data when configured, simulated otherwise.
inline Dataset resolve_normal_data(const RunConfig& c, const SimWorld& world, const FeatureSchema& schema) {
    if (c.normal_data_path.empty()) return synthesize_normal(world, schema, c.normal_samples, c.seed);
    return project(load_dataset(c.normal_data_path), schema);
}

struct TrainingRun {
    FeatureSchema schema;
    SimWorld world;
    AutoencoderTraining detector;
    DqnAgent agent;
    RunMetrics metrics;
};

inline TrainingRun run_training(const RunConfig& c, const EpisodeSink& sink = {}) {
    c.validate();
    auto schema = resolve_schema(c);
    auto world = resolve_world(c, schema);
    auto detector = fit_detector(resolve_normal_data(c, world, schema), c.detector, c.seed);
    auto init = substream(c.seed, "agent-init");
    DqnAgent agent(schema.size(), c.agent, init);
    auto rngs = LoopRngs::from_seed(c.seed);
    const LoopConfig loop{c.agent.max_steps, c.agent.gamma, 100};
    auto metrics = train(world, detector.model, agent, c.agent.max_episodes, c.agent.replay_init, loop, rngs, sink);
    return {std::move(schema), std::move(world), std::move(detector), std::move(agent), std::move(metrics)};
}

inline Rng evaluation_rng(std::uint64_t seed) { return substream(seed, "eval"); }

}  // namespace mtdrl
