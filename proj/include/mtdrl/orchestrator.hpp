#pragma once

#include <chrono>
#include <concepts>
#include <cstdint>
#include <deque>
#include <functional>
#include <iomanip>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "mtdrl/action.hpp"
#include "mtdrl/agent.hpp"
#include "mtdrl/detector.hpp"
#include "mtdrl/env.hpp"
#include "mtdrl/error.hpp"
#include "mtdrl/ingest.hpp"
#include "mtdrl/random.hpp"

namespace mtdrl {

template <class D>
concept RewardDetector = requires(const D& d, const Fingerprint& fp) {
    { d.classify(fp) } -> std::same_as<Verdict>;
    { d.normalize(fp) } -> std::same_as<Fingerprint>;
};

template <class A>
concept LearningAgent = requires(A& a, const A& ca, const Fingerprint& s, Rng& rng, Transition t) {
    { ca.select_action(s, rng) } -> std::same_as<Action>;
    { ca.random_action(rng) } -> std::same_as<Action>;
    a.remember(std::move(t));
    { ca.ready() } -> std::convertible_to<bool>;
    a.learn_step(rng);
    { ca.epsilon() } -> std::convertible_to<double>;
    { ca.memory().size() } -> std::convertible_to<std::size_t>;
};

struct StepRecord {
    std::string label;  // true behavior the action was deployed against
    Action action = Action::IpShuffling;
    int reward = -1;
};

struct EpisodeRecord {
    std::size_t index = 0;
    std::string start_label;
    std::vector<StepRecord> steps;
    int total_reward = 0;
    double discounted_return = 0.0;
    bool mitigated = false;
    double epsilon = 1.0;  // at episode start
    bool skipped = false;  // initial state judged normal: agent not triggered
    bool failed = false;
    std::string error;
};

struct LoopConfig {
    std::size_t max_steps = 10;
    double gamma = 0.1;
    std::size_t moving_average_window = 100;
};

// Generators for the online loop, one per consumer.
struct LoopRngs {
    Rng env;
    Rng exploration;
    Rng replay;

    static LoopRngs from_seed(std::uint64_t seed) {
        return {substream(seed, "env"), substream(seed, "exploration"), substream(seed, "replay")};
    }
};

enum class EpisodeMode {
    Learn,    // epsilon-greedy actions, one learning update per step once memory is ready
    Prefill,  // uniform random actions, no learning, stop once memory holds `prefill_target`
};

// monitor -> detector gate -> action -> afterstate -> reward -> transition
// -> learning update, until the reward is +1 or max_steps is reached.
template <RewardDetector Detector, LearningAgent Agent>
EpisodeRecord run_episode(const Environment& env, const Detector& detector, Agent& agent, const LoopConfig& cfg,
                          LoopRngs& rngs, EpisodeMode mode = EpisodeMode::Learn, std::size_t prefill_target = 0,
                          std::uint64_t* learn_updates = nullptr) {
    EpisodeRecord rec;
    rec.epsilon = agent.epsilon();
    auto obs = env.reset(rngs.env);
    rec.start_label = obs.true_label;
    try {
        if (detector.classify(obs.fingerprint).label == Label::Normal) {
            rec.skipped = true;
            return rec;
        }
        std::string label = std::move(obs.true_label);
        auto state = detector.normalize(obs.fingerprint);
        std::vector<int> rewards;
        for (std::size_t t = 0; t < cfg.max_steps; ++t) {
            if (mode == EpisodeMode::Prefill && agent.memory().size() >= prefill_target) break;
            const Action a = mode == EpisodeMode::Prefill ? agent.random_action(rngs.exploration)
                                                          : agent.select_action(state, rngs.exploration);
            auto next = env.deploy(label, a, rngs.env);
            const int r = reward_of(detector.classify(next.fingerprint));
            auto next_state = detector.normalize(next.fingerprint);
            agent.remember(Transition{state, a, r, next_state, r == +1});
            rec.steps.push_back({label, a, r});
            rewards.push_back(r);
            if (mode == EpisodeMode::Learn && agent.ready()) {
                agent.learn_step(rngs.replay);
                if (learn_updates) ++*learn_updates;
            }
            if (r == +1) {
                rec.mitigated = true;
                break;
            }
            state = std::move(next_state);
            label = std::move(next.true_label);
        }
        rec.total_reward = std::accumulate(rewards.begin(), rewards.end(), 0);
        rec.discounted_return = episode_return(rewards, cfg.gamma);
    } catch (const Error& e) {
        rec.failed = true;
        rec.mitigated = false;
        rec.error = e.what();
    }
    return rec;
}

struct RunMetrics {
    std::vector<EpisodeRecord> episodes;
    std::vector<double> moving_average;  // parallel to episodes
    std::size_t prefill_transitions = 0;
    std::uint64_t learn_updates = 0;
    std::uint64_t transitions_pushed = 0;  // after pre-fill
    double wall_seconds = 0.0;
};

// Mean total reward over the last `window` episodes in which the agent acted;
// skipped episodes carry the previous value.
class MovingAverage {
public:
    explicit MovingAverage(std::size_t window) : window_(window) {}

    double add(const EpisodeRecord& r) {
        if (!r.skipped) {
            recent_.push_back(r.total_reward);
            sum_ += r.total_reward;
            if (recent_.size() > window_) {
                sum_ -= recent_.front();
                recent_.pop_front();
            }
        }
        return recent_.empty() ? 0.0 : static_cast<double>(sum_) / static_cast<double>(recent_.size());
    }

private:
    std::size_t window_;
    std::deque<int> recent_;
    long long sum_ = 0;
};

inline std::string metrics_csv_header() {
    return "index,start_label,steps,total_reward,discounted_return,mitigated,epsilon,moving_avg\n";
}

inline std::string metrics_csv_row(const EpisodeRecord& r, double moving_avg) {
    std::string s = std::to_string(r.index) + ',' + r.start_label + ',' + std::to_string(r.steps.size()) + ',' +
                    std::to_string(r.total_reward) + ',' + detail::format_real(r.discounted_return) + ',' +
                    (r.mitigated ? "1" : "0") + ',' + detail::format_real(r.epsilon) + ',' +
                    detail::format_real(moving_avg) + '\n';
    return s;
}

inline std::string metrics_csv(const RunMetrics& m) {
    std::string out = metrics_csv_header();
    for (std::size_t i = 0; i < m.episodes.size(); ++i) out += metrics_csv_row(m.episodes[i], m.moving_average[i]);
    return out;
}

using EpisodeSink = std::function<void(const EpisodeRecord&, double moving_avg)>;

// Pre-fills replay memory with random-policy transitions, then runs
// `episodes` learning episodes.
template <RewardDetector Detector, LearningAgent Agent>
RunMetrics train(const Environment& env, const Detector& detector, Agent& agent, std::size_t episodes,
                 std::size_t replay_init, const LoopConfig& cfg, LoopRngs& rngs, const EpisodeSink& sink = {}) {
    if (episodes == 0) throw UsageError("training needs at least one episode");
    const auto t0 = std::chrono::steady_clock::now();
    RunMetrics m;
    std::size_t attempts = 0;
    const std::size_t max_attempts = 1000 * std::max<std::size_t>(replay_init, 1);
    while (agent.memory().size() < replay_init) {
        if (++attempts > max_attempts)
            throw DataError("replay pre-fill stalled: the detector never flags an abnormal state");
        run_episode(env, detector, agent, cfg, rngs, EpisodeMode::Prefill, replay_init);
    }
    m.prefill_transitions = agent.memory().size();

    MovingAverage avg(cfg.moving_average_window);
    for (std::size_t e = 0; e < episodes; ++e) {
        auto rec = run_episode(env, detector, agent, cfg, rngs, EpisodeMode::Learn, 0, &m.learn_updates);
        rec.index = e;
        m.transitions_pushed += rec.steps.size();
        const double ma = avg.add(rec);
        if (sink) sink(rec, ma);
        m.episodes.push_back(std::move(rec));
        m.moving_average.push_back(ma);
    }
    m.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return m;
}

// Accuracy tables ---------------------------------------------------------------

struct AccuracyRow {
    std::string behavior;
    double accuracy = 0.0;
    std::string target;
    std::size_t samples = 0;
};

struct AccuracyTable {
    std::string title;
    std::vector<AccuracyRow> rows;

    const AccuracyRow& row(std::string_view behavior) const {
        for (const auto& r : rows)
            if (r.behavior == behavior) return r;
        throw DataError("accuracy table has no row '" + std::string(behavior) + "'");
    }
};

inline std::string to_csv(const AccuracyTable& t) {
    std::string out = "behavior,accuracy,target,samples\n";
    for (const auto& r : t.rows)
        out += r.behavior + ',' + detail::format_real(r.accuracy) + ",\"" + r.target + "\"," +
               std::to_string(r.samples) + '\n';
    return out;
}

inline std::string to_text(const AccuracyTable& t) {
    std::size_t width = 8;
    for (const auto& r : t.rows) width = std::max(width, r.behavior.size());
    std::ostringstream ss;
    ss << t.title << '\n';
    ss << std::left << std::setw(static_cast<int>(width) + 2) << "Behavior" << std::setw(10) << "Accuracy"
       << "Target\n";
    ss << std::string(width + 2 + 10 + 30, '=') << '\n';
    for (const auto& r : t.rows) {
        std::ostringstream pct;
        pct << std::fixed << std::setprecision(2) << 100.0 * r.accuracy << '%';
        ss << std::left << std::setw(static_cast<int>(width) + 2) << r.behavior << std::setw(10) << pct.str()
           << r.target << '\n';
    }
    return ss.str();
}

inline std::string describe(const ActionSet& s) {
    std::string out;
    for (auto a : kAllActions)
        if (contains(s, a)) out += (out.empty() ? "" : ", ") + std::string(to_string(a));
    return out;
}

using Policy = std::function<Action(const Fingerprint& raw)>;

// Greedy choice of the online network on a raw fingerprint.
inline Policy greedy_policy(const DqnAgent& agent, const NormStats& stats) {
    return [&agent, &stats](const Fingerprint& raw) { return agent.greedy(normalize(raw, stats)); };
}

// For every attack and wrong-MTD afterstate: fraction of `n` sampled states
// on which the policy picks an action that mitigates the base attack.
inline AccuracyTable evaluate_policy(const Environment& env, const Policy& policy, std::size_t n, Rng& rng) {
    if (n == 0) throw UsageError("evaluation needs at least one sample per behavior");
    AccuracyTable t{"Agent accuracy for states and afterstates", {}};
    const auto& map = env.mitigation();
    for (const auto& label : map.abnormal_labels()) {
        const auto& target = map.of(base_attack(label));
        std::size_t hits = 0;
        for (std::size_t i = 0; i < n; ++i)
            if (contains(target, policy(env.observe(label, rng).fingerprint))) ++hits;
        t.rows.push_back({label, static_cast<double>(hits) / static_cast<double>(n), describe(target), n});
    }
    return t;
}

// Normal behavior, every attack, and every attack+MTD combination: fraction
// of verdicts matching the expected state (Normal after a correct MTD).
template <RewardDetector Detector>
AccuracyTable evaluate_detector(const Environment& env, const Detector& detector, std::size_t n, Rng& rng) {
    if (n == 0) throw UsageError("evaluation needs at least one sample per behavior");
    AccuracyTable t{"Detector accuracy for states and afterstates", {}};
    auto measure = [&](const std::string& behavior, Label expected, auto&& draw) {
        std::size_t hits = 0;
        for (std::size_t i = 0; i < n; ++i)
            if (detector.classify(draw().fingerprint).label == expected) ++hits;
        t.rows.push_back({behavior, static_cast<double>(hits) / static_cast<double>(n),
                          expected == Label::Normal ? "Normal" : "Abnormal", n});
    };
    measure(std::string(kNormalLabel), Label::Normal, [&] { return env.observe(kNormalLabel, rng); });
    const auto& map = env.mitigation();
    for (const auto& attack : map.attacks) {
        measure(attack, Label::Abnormal, [&] { return env.observe(attack, rng); });
        for (auto a : kAllActions) {
            const auto expected = contains(map.of(attack), a) ? Label::Normal : Label::Abnormal;
            measure(afterstate_label(attack, a), expected, [&] { return env.deploy(attack, a, rng); });
        }
    }
    return t;
}

// Hand-built Q-network encoding the world's mitigation map: one first-layer
// unit per attack fires when the (denormalized) state projects beyond half
// the attack's distance along its direction, and each unit votes for that
// attack's mitigating actions.
inline nn::Mlp oracle_network(const SimWorld& world, const NormStats& stats,
                              std::vector<std::size_t> hidden = {60, 30}) {
    const auto dim = world.dimension();
    const auto& map = world.mitigation();
    if (hidden.size() != 2 || hidden[0] < map.attacks.size() || hidden[1] < map.attacks.size())
        throw UsageError("oracle network needs two hidden layers with one unit per attack");
    if (stats.size() != dim) throw DataError("statistics do not match the world dimension");
    nn::Mlp net({dim, hidden[0], hidden[1], kActionCount});
    auto& p = net.mutable_parameters();
    const auto& normal = world.profile(kNormalLabel).mean;
    for (std::size_t k = 0; k < map.attacks.size(); ++k) {
        const auto& mean = world.profile(map.attacks[k]).mean;
        double dist = 0.0;
        for (std::size_t i = 0; i < dim; ++i) dist += (mean[i] - normal[i]) * (mean[i] - normal[i]);
        dist = std::sqrt(dist);
        if (dist == 0.0) continue;
        double bias = 0.0;
        for (std::size_t i = 0; i < dim; ++i) {
            const double u = (mean[i] - normal[i]) / dist;
            p[0].w(k, i) = u * stats.stddev[i];
            bias += u * (stats.mean[i] - normal[i]);
        }
        p[0].biases[k] = bias - dist / 2.0;
        p[1].w(k, k) = 1.0;
        for (auto a : kAllActions)
            if (contains(map.mitigating[k], a)) p[2].w(index_of(a), k) = 1.0;
    }
    return net;
}

}  // namespace mtdrl
