#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "mtdrl/action.hpp"
#include "mtdrl/error.hpp"
#include "mtdrl/fingerprint.hpp"
#include "mtdrl/random.hpp"

namespace mtdrl {

inline constexpr std::string_view kNormalLabel = "normal";

// Label of the device behavior after deploying `action` against `attack`.
inline std::string afterstate_label(std::string_view attack, Action action) {
    return std::string(attack) + "+" + std::string(to_string(action));
}

inline std::string base_attack(std::string_view label) { return std::string(label.substr(0, label.find('+'))); }

struct BehaviorProfile {
    std::string label;
    std::vector<double> mean;
    std::vector<double> stddev;
    ActionSet mitigating;  // empty for normal and afterstate profiles
};

// Independent Gaussian draw per feature.
inline Fingerprint sample_fingerprint(const BehaviorProfile& p, Rng& rng) {
    Fingerprint fp(p.mean.size());
    for (std::size_t i = 0; i < fp.size(); ++i) {
        if (p.stddev[i] == 0.0) {
            fp[i] = p.mean[i];
            continue;
        }
        std::normal_distribution<double> dist(p.mean[i], p.stddev[i]);
        const double v = dist(rng);
        fp[i] = std::clamp(v, -std::numeric_limits<double>::max(), std::numeric_limits<double>::max());
    }
    return fp;
}

struct EnvObservation {
    Fingerprint fingerprint;
    // Ground truth for the simulator and for evaluation only; agents and
    // detectors are handed the fingerprint alone.
    std::string true_label;
};

// Which MTD techniques neutralise which attack.
struct MitigationMap {
    std::vector<std::string> attacks;  // canonical order
    std::vector<ActionSet> mitigating;

    void add(std::string attack, ActionSet actions) {
        if (actions.none()) throw DataError("attack '" + attack + "' has no mitigating action");
        if (attack.empty() || attack.find('+') != std::string::npos || attack == kNormalLabel)
            throw DataError("invalid attack label '" + attack + "'");
        if (find(attack) != attacks.size()) throw DataError("duplicate attack '" + attack + "'");
        attacks.push_back(std::move(attack));
        mitigating.push_back(actions);
    }

    std::size_t find(std::string_view attack) const {
        return static_cast<std::size_t>(std::find(attacks.begin(), attacks.end(), attack) - attacks.begin());
    }

    bool is_attack(std::string_view label) const { return find(label) != attacks.size(); }

    const ActionSet& of(std::string_view attack) const {
        const auto i = find(attack);
        if (i == attacks.size()) throw DataError("unknown attack '" + std::string(attack) + "'");
        return mitigating[i];
    }

    // Every label the environment can emit: normal, attacks, and the
    // afterstates of each wrong action.
    std::vector<std::string> reachable_labels() const {
        std::vector<std::string> out{std::string(kNormalLabel)};
        for (std::size_t i = 0; i < attacks.size(); ++i) {
            out.push_back(attacks[i]);
            for (auto a : kAllActions)
                if (!contains(mitigating[i], a)) out.push_back(afterstate_label(attacks[i], a));
        }
        return out;
    }

    // Attack and wrong-MTD afterstate labels, the rows of a policy evaluation.
    std::vector<std::string> abnormal_labels() const {
        auto all = reachable_labels();
        all.erase(all.begin());
        return all;
    }

    // A correct MTD restores normal behavior; a wrong one leaves the base
    // attack active with that MTD's side effects (MTDs do not stack).
    std::string next_label(std::string_view label, Action action) const {
        if (label == kNormalLabel) throw DataError("cannot step from normal behavior");
        const auto base = base_attack(label);
        const auto& set = of(base);
        if (label != base) {
            const auto applied = label.substr(base.size() + 1);
            const auto prior = parse_action(applied);
            if (contains(set, prior)) throw DataError("label '" + std::string(label) + "' is not reachable");
        }
        return contains(set, action) ? std::string(kNormalLabel) : afterstate_label(base, action);
    }
};

inline MitigationMap default_mitigation_map() {
    MitigationMap m;
    m.add("the_tick", action_set({Action::IpShuffling}));
    m.add("backdoor_jakoritar", action_set({Action::IpShuffling}));
    m.add("backdoor_dataleak", action_set({Action::IpShuffling}));
    m.add("beurk", action_set({Action::LibrarySanitation}));
    m.add("bdvl", action_set({Action::LibrarySanitation}));
    m.add("ransomware_poc", action_set({Action::RansomwareTrap, Action::FileRandomization}));
    return m;
}

// Common reset/step contract; implementations differ only in how a
// fingerprint is produced for a label.
class Environment {
public:
    Environment(MitigationMap map, double attack_prob) : map_(std::move(map)), attack_prob_(attack_prob) {
        if (!(attack_prob_ >= 0.0 && attack_prob_ <= 1.0)) throw UsageError("attack probability must lie in [0, 1]");
        if (map_.attacks.empty() && attack_prob_ > 0.0) throw DataError("environment has no attacks");
    }
    virtual ~Environment() = default;

    virtual EnvObservation observe(std::string_view label, Rng& rng) const = 0;
    virtual std::size_t dimension() const = 0;

    const MitigationMap& mitigation() const { return map_; }
    double attack_prob() const { return attack_prob_; }

    // Normal with probability 1 - attack_prob, otherwise a uniformly chosen attack.
    EnvObservation reset(Rng& rng) const {
        std::uniform_real_distribution<double> coin(0.0, 1.0);
        if (map_.attacks.empty() || !(coin(rng) < attack_prob_)) return observe(kNormalLabel, rng);
        std::uniform_int_distribution<std::size_t> pick(0, map_.attacks.size() - 1);
        return observe(map_.attacks[pick(rng)], rng);
    }

    // Afterstate of deploying `action` while the device is in `label`; the
    // label must be an attack or an attack+MTD afterstate.
    EnvObservation step(std::string_view label, Action action, Rng& rng) const {
        return observe(map_.next_label(label, action), rng);
    }

    // Like step, but an MTD deployed on a healthy device leaves it normal.
    // Used by the closed loop, where a false alarm can trigger a deployment.
    EnvObservation deploy(std::string_view label, Action action, Rng& rng) const {
        if (label == kNormalLabel) return observe(kNormalLabel, rng);
        return step(label, action, rng);
    }

private:
    MitigationMap map_;
    double attack_prob_;
};

// Generative environment: one diagonal Gaussian per behavior label.
class SimWorld : public Environment {
public:
    SimWorld(std::vector<BehaviorProfile> profiles, double attack_prob, std::uint64_t seed,
             std::string schema_ref = {})
        : Environment(derive_map(profiles), attack_prob),
          seed_(seed),
          schema_ref_(std::move(schema_ref)),
          profiles_(std::move(profiles)) {
        for (std::size_t i = 0; i < profiles_.size(); ++i) index_.emplace(profiles_[i].label, i);
        if (index_.size() != profiles_.size()) throw DataError("world has duplicate profile labels");
        if (!index_.count(std::string(kNormalLabel))) throw DataError("world lacks a 'normal' profile");
        const auto dim = profiles_.front().mean.size();
        for (const auto& p : profiles_) {
            if (p.mean.size() != dim || p.stddev.size() != dim)
                throw DataError("profile '" + p.label + "' has inconsistent dimension");
            for (std::size_t i = 0; i < dim; ++i)
                if (!std::isfinite(p.mean[i]) || !(p.stddev[i] >= 0.0) || !std::isfinite(p.stddev[i]))
                    throw DataError("profile '" + p.label + "' has invalid mean/std at feature " + std::to_string(i));
        }
        for (const auto& label : mitigation().reachable_labels())
            if (!index_.count(label)) throw DataError("world lacks profile '" + label + "'");
    }

    std::size_t dimension() const override { return profiles_.front().mean.size(); }
    std::uint64_t seed() const { return seed_; }
    const std::string& schema_ref() const { return schema_ref_; }
    const std::vector<BehaviorProfile>& profiles() const { return profiles_; }

    const BehaviorProfile& profile(std::string_view label) const {
        auto it = index_.find(std::string(label));
        if (it == index_.end()) throw DataError("unknown behavior label '" + std::string(label) + "'");
        return profiles_[it->second];
    }

    EnvObservation observe(std::string_view label, Rng& rng) const override {
        const auto& p = profile(label);
        return {sample_fingerprint(p, rng), p.label};
    }

private:
    static MitigationMap derive_map(const std::vector<BehaviorProfile>& profiles) {
        if (profiles.empty()) throw DataError("world has no profiles");
        MitigationMap m;
        for (const auto& p : profiles) {
            if (p.label == kNormalLabel) {
                if (p.mitigating.any()) throw DataError("normal profile cannot list mitigating actions");
            } else if (p.label.find('+') == std::string::npos) {
                m.add(p.label, p.mitigating);
            } else if (p.mitigating.any()) {
                throw DataError("afterstate profile '" + p.label + "' cannot list mitigating actions");
            }
        }
        return m;
    }

    std::uint64_t seed_;
    std::string schema_ref_;
    std::vector<BehaviorProfile> profiles_;
    std::map<std::string, std::size_t> index_;
};

struct WorldOptions {
    double attack_prob = 0.2;
    // Distance from the normal mean to each attack mean, in standard deviations.
    double separation = 12.0;
    // Afterstate offset from its attack mean, as a fraction of that attack's distance.
    double afterstate_offset = 0.25;
    // Per-attack scaling of the attack distance; unlisted attacks use 1.0.
    std::map<std::string, double> overlap{{"beurk", 0.05}};
    std::vector<std::string> exclude;
};

namespace detail {

inline std::vector<double> random_unit(std::size_t dim, Rng& rng) {
    std::normal_distribution<double> g(0.0, 1.0);
    std::vector<double> v(dim);
    double norm = 0.0;
    for (auto& x : v) {
        x = g(rng);
        norm += x * x;
    }
    norm = std::sqrt(norm);
    for (auto& x : v) x /= norm;
    return v;
}

}  // namespace detail

// Normal behavior ~ N(0, I); each attack sits at an orthogonal direction,
// `separation * overlap` away; wrong-MTD afterstates are small seeded offsets
// of their attack.
inline SimWorld default_world(const FeatureSchema& schema, std::uint64_t seed, const WorldOptions& opt = {}) {
    const auto dim = schema.size();
    MitigationMap full = default_mitigation_map();
    MitigationMap map;
    for (std::size_t i = 0; i < full.attacks.size(); ++i)
        if (std::find(opt.exclude.begin(), opt.exclude.end(), full.attacks[i]) == opt.exclude.end())
            map.add(full.attacks[i], full.mitigating[i]);
    for (const auto& [name, knob] : opt.overlap) {
        if (!(knob >= 0.0 && knob <= 1.0)) throw UsageError("overlap knob for '" + name + "' must lie in [0, 1]");
        if (!full.is_attack(name)) throw UsageError("overlap knob given for unknown attack '" + name + "'");
    }
    if (dim < full.attacks.size()) throw UsageError("schema too small for the default world");

    auto rng = substream(seed, "world");
    // Gram-Schmidt over seeded directions, one per attack of the full map so
    // excluding an attack leaves the others unchanged.
    std::vector<std::vector<double>> dirs;
    for (std::size_t k = 0; k < full.attacks.size(); ++k) {
        auto v = detail::random_unit(dim, rng);
        for (const auto& d : dirs) {
            double dot = 0.0;
            for (std::size_t i = 0; i < dim; ++i) dot += v[i] * d[i];
            for (std::size_t i = 0; i < dim; ++i) v[i] -= dot * d[i];
        }
        double norm = 0.0;
        for (auto x : v) norm += x * x;
        norm = std::sqrt(norm);
        for (auto& x : v) x /= norm;
        dirs.push_back(std::move(v));
    }

    std::vector<BehaviorProfile> profiles;
    profiles.push_back({std::string(kNormalLabel), std::vector<double>(dim, 0.0), std::vector<double>(dim, 1.0), {}});
    for (std::size_t k = 0; k < full.attacks.size(); ++k) {
        const auto& name = full.attacks[k];
        auto it = opt.overlap.find(name);
        const double knob = it == opt.overlap.end() ? 1.0 : it->second;
        const double dist = knob * opt.separation;
        std::vector<double> mean(dim);
        for (std::size_t i = 0; i < dim; ++i) mean[i] = dist * dirs[k][i];
        std::vector<BehaviorProfile> afterstates;
        for (auto a : kAllActions) {
            auto offset = detail::random_unit(dim, rng);
            if (contains(full.mitigating[k], a)) continue;
            std::vector<double> m2(dim);
            for (std::size_t i = 0; i < dim; ++i) m2[i] = mean[i] + opt.afterstate_offset * dist * offset[i];
            afterstates.push_back({afterstate_label(name, a), std::move(m2), std::vector<double>(dim, 1.0), {}});
        }
        if (!map.is_attack(name)) continue;
        profiles.push_back({name, std::move(mean), std::vector<double>(dim, 1.0), full.mitigating[k]});
        for (auto& p : afterstates) profiles.push_back(std::move(p));
    }
    return SimWorld(std::move(profiles), opt.attack_prob, seed);
}

// Replays recorded fingerprints: each observation is a uniformly drawn row
// of the dataset recorded for that label.
class DatasetEnv : public Environment {
public:
    DatasetEnv(std::map<std::string, std::vector<Fingerprint>> datasets, MitigationMap map, double attack_prob = 0.2)
        : Environment(std::move(map), attack_prob), data_(std::move(datasets)) {
        std::size_t dim = 0;
        for (const auto& label : mitigation().reachable_labels()) {
            auto it = data_.find(label);
            if (it == data_.end() || it->second.empty()) throw DataError("no recorded dataset for label '" + label + "'");
            for (const auto& row : it->second) {
                if (dim == 0) dim = row.size();
                if (row.size() != dim || dim == 0) throw DataError("dataset for '" + label + "' has inconsistent width");
            }
        }
        dim_ = dim;
    }

    std::size_t dimension() const override { return dim_; }

    EnvObservation observe(std::string_view label, Rng& rng) const override {
        auto it = data_.find(std::string(label));
        if (it == data_.end()) throw DataError("no recorded dataset for label '" + std::string(label) + "'");
        std::uniform_int_distribution<std::size_t> pick(0, it->second.size() - 1);
        return {it->second[pick(rng)], it->first};
    }

private:
    std::map<std::string, std::vector<Fingerprint>> data_;
    std::size_t dim_ = 0;
};

// JSON ------------------------------------------------------------------------

inline nlohmann::json to_json(const SimWorld& w) {
    nlohmann::json profiles = nlohmann::json::array();
    for (const auto& p : w.profiles()) {
        nlohmann::json actions = nlohmann::json::array();
        for (auto a : kAllActions)
            if (contains(p.mitigating, a)) actions.push_back(std::string(to_string(a)));
        profiles.push_back({{"label", p.label}, {"mean", p.mean}, {"std", p.stddev}, {"mitigating_actions", actions}});
    }
    return {{"format_version", kFormatVersion}, {"schema_ref", w.schema_ref()}, {"profiles", profiles},
            {"attack_prob", w.attack_prob()}, {"seed", w.seed()}};
}

inline SimWorld world_from_json(const nlohmann::json& j) {
    try {
        check_format_version(j, "world");
        std::vector<BehaviorProfile> profiles;
        for (const auto& p : j.at("profiles")) {
            BehaviorProfile bp;
            bp.label = p.at("label").get<std::string>();
            bp.mean = p.at("mean").get<std::vector<double>>();
            bp.stddev = p.at("std").get<std::vector<double>>();
            for (const auto& a : p.at("mitigating_actions")) bp.mitigating.set(index_of(parse_action(a.get<std::string>())));
            profiles.push_back(std::move(bp));
        }
        return SimWorld(std::move(profiles), j.at("attack_prob").get<double>(), j.at("seed").get<std::uint64_t>(),
                        j.value("schema_ref", std::string{}));
    } catch (const nlohmann::json::exception& e) {
        throw DataError(std::string("world: ") + e.what());
    }
}

}  // namespace mtdrl
