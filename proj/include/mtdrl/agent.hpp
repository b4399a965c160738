#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numeric>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "mtdrl/action.hpp"
#include "mtdrl/error.hpp"
#include "mtdrl/fingerprint.hpp"
#include "mtdrl/neural.hpp"
#include "mtdrl/random.hpp"

namespace mtdrl {

struct Transition {
    Fingerprint state;       // normalized
    Action action = Action::IpShuffling;
    int reward = -1;
    Fingerprint next_state;  // normalized
    bool terminal = false;   // set exactly when reward == +1
};

// Bounded FIFO of transitions; pushing at capacity evicts the oldest.
class ReplayMemory {
public:
    explicit ReplayMemory(std::size_t capacity = 500) : capacity_(capacity) {
        if (capacity_ == 0) throw UsageError("replay capacity must be positive");
        buffer_.reserve(capacity_);
    }

    void push(Transition t) {
        if (buffer_.size() < capacity_) {
            buffer_.push_back(std::move(t));
        } else {
            buffer_[cursor_] = std::move(t);
            cursor_ = (cursor_ + 1) % capacity_;
        }
    }

    std::size_t size() const { return buffer_.size(); }
    std::size_t capacity() const { return capacity_; }
    bool empty() const { return buffer_.empty(); }

    // i = 0 is the oldest stored transition.
    const Transition& oldest(std::size_t i) const {
        if (i >= buffer_.size()) throw DataError("replay index out of range");
        return buffer_[(cursor_ + i) % buffer_.size()];
    }

    // Uniform sample without replacement within the batch.
    std::vector<const Transition*> sample(std::size_t batch_size, Rng& rng) const {
        if (batch_size == 0) throw UsageError("batch size must be positive");
        if (buffer_.size() < batch_size)
            throw DataError("replay memory holds " + std::to_string(buffer_.size()) + " transitions, batch needs " +
                            std::to_string(batch_size));
        std::vector<std::size_t> idx(buffer_.size());
        std::iota(idx.begin(), idx.end(), std::size_t{0});
        std::vector<const Transition*> out;
        out.reserve(batch_size);
        for (std::size_t i = 0; i < batch_size; ++i) {
            std::uniform_int_distribution<std::size_t> pick(i, idx.size() - 1);
            std::swap(idx[i], idx[pick(rng)]);
            out.push_back(&buffer_[idx[i]]);
        }
        return out;
    }

private:
    std::size_t capacity_;
    std::vector<Transition> buffer_;
    std::size_t cursor_ = 0;
};

// Linear decay per learning update, floored.
struct ExplorationSchedule {
    double start = 1.0;
    double decay = 1e-4;
    double minimum = 0.01;

    double at(std::uint64_t updates) const {
        return std::max(minimum, start - static_cast<double>(updates) * decay);
    }
};

struct AgentConfig {
    double gamma = 0.1;
    std::size_t batch_size = 100;
    std::size_t replay_capacity = 500;
    std::size_t replay_init = 100;
    std::size_t update_freq = 100;
    std::size_t max_episodes = 10000;
    std::size_t max_steps = 10;
    double learning_rate = 1e-4;
    std::vector<std::size_t> hidden_layers{60, 30};
    ExplorationSchedule exploration;

    void validate() const {
        if (!(gamma >= 0.0 && gamma < 1.0)) throw UsageError("gamma must lie in [0, 1)");
        if (batch_size == 0 || batch_size > replay_capacity)
            throw UsageError("batch size must be in [1, replay capacity]");
        if (replay_init < batch_size || replay_init > replay_capacity)
            throw UsageError("replay pre-fill must be in [batch size, replay capacity]");
        if (update_freq == 0) throw UsageError("target update frequency must be positive");
        if (max_steps == 0) throw UsageError("max steps per episode must be positive");
        if (!(learning_rate > 0.0)) throw UsageError("learning rate must be positive");
        const auto& e = exploration;
        if (!(e.minimum >= 0.0 && e.minimum <= e.start && e.start <= 1.0 && e.decay >= 0.0))
            throw UsageError("exploration schedule must satisfy 0 <= minimum <= start <= 1, decay >= 0");
    }
};

// Greedy choice; ties go to the lowest index.
inline Action argmax_action(std::span<const double> q) {
    if (q.size() != kActionCount) throw DataError("expected " + std::to_string(kActionCount) + " Q-values");
    std::size_t best = 0;
    for (std::size_t i = 0; i < q.size(); ++i) {
        if (!std::isfinite(q[i])) throw DataError("non-finite Q-value for action " + std::to_string(i));
        if (q[i] > q[best]) best = i;
    }
    return action_from_index(best);
}

// sum_k gamma^k * rewards[k]
template <class R>
double episode_return(std::span<const R> rewards, double gamma) {
    double g = 0.0;
    double w = 1.0;
    for (auto r : rewards) {
        g += w * static_cast<double>(r);
        w *= gamma;
    }
    return g;
}

inline double episode_return(const std::vector<int>& rewards, double gamma) {
    return episode_return(std::span<const int>(rewards), gamma);
}

struct LearnReport {
    double loss = 0.0;
    double epsilon = 1.0;
    bool synced = false;
};

// Deep Q-learning with experience replay and a periodically synchronized
// target network.
class DqnAgent {
public:
    DqnAgent(std::size_t state_dim, AgentConfig cfg, Rng& init_rng)
        : DqnAgent(make_net(state_dim, cfg, init_rng), cfg) {}

    DqnAgent(nn::Mlp online, AgentConfig cfg)
        : cfg_(std::move(cfg)),
          online_(std::move(online)),
          target_(online_),
          opt_(nn::Adam::Settings{cfg_.learning_rate}),
          memory_(cfg_.replay_capacity) {
        cfg_.validate();
        if (online_.output_size() != kActionCount) throw DataError("Q-network must have one output per action");
        epsilon_ = cfg_.exploration.at(0);
    }

    const AgentConfig& config() const { return cfg_; }
    const nn::Mlp& online() const { return online_; }
    const nn::Mlp& target() const { return target_; }
    nn::Mlp& mutable_online() { return online_; }
    nn::Mlp& mutable_target() { return target_; }
    ReplayMemory& memory() { return memory_; }
    const ReplayMemory& memory() const { return memory_; }
    double epsilon() const { return epsilon_; }
    double gamma() const { return cfg_.gamma; }
    std::uint64_t update_count() const { return updates_; }
    std::size_t state_size() const { return online_.input_size(); }
    const nn::Adam& optimizer() const { return opt_; }

    std::vector<double> q_values(const Fingerprint& state) const { return online_.predict(state); }

    Action greedy(const Fingerprint& state) const { return argmax_action(online_.predict(state)); }

    // Uniform random action with probability epsilon, greedy otherwise.
    Action select_action(const Fingerprint& state, Rng& rng) const {
        if (state.size() != state_size()) throw DataError("state dimension does not match the Q-network");
        std::uniform_real_distribution<double> coin(0.0, 1.0);
        if (coin(rng) < epsilon_) {
            std::uniform_int_distribution<std::size_t> pick(0, kActionCount - 1);
            return action_from_index(pick(rng));
        }
        return greedy(state);
    }

    Action random_action(Rng& rng) const {
        std::uniform_int_distribution<std::size_t> pick(0, kActionCount - 1);
        return action_from_index(pick(rng));
    }

    void remember(Transition t) {
        if (t.state.size() != state_size() || t.next_state.size() != state_size())
            throw DataError("transition state dimension does not match the Q-network");
        memory_.push(std::move(t));
    }

    bool ready() const { return memory_.size() >= cfg_.batch_size; }

    // y = r for terminal transitions, r + gamma * max_a Q_target(s', a) otherwise.
    std::vector<double> td_targets(std::span<const Transition* const> batch) const {
        if (batch.empty()) throw DataError("empty batch");
        std::vector<double> y;
        y.reserve(batch.size());
        for (const auto* t : batch) {
            double v = static_cast<double>(t->reward);
            if (!t->terminal) {
                const auto q = target_.predict(t->next_state);
                v += cfg_.gamma * *std::max_element(q.begin(), q.end());
            }
            y.push_back(v);
        }
        return y;
    }

    std::vector<double> td_targets(std::span<const Transition> batch) const {
        std::vector<const Transition*> ptrs;
        for (const auto& t : batch) ptrs.push_back(&t);
        return td_targets(std::span<const Transition* const>(ptrs));
    }

    // One Adam step on (y - Q(s, a))^2 over a replayed batch; only the taken
    // action's output receives gradient.
    LearnReport learn_step(Rng& rng) {
        const auto batch = memory_.sample(cfg_.batch_size, rng);
        const auto y = td_targets(std::span<const Transition* const>(batch));

        auto grads = nn::zeros_like(online_.parameters());
        nn::ForwardCache cache;
        std::vector<double> loss_grad(kActionCount);
        const double inv = 1.0 / static_cast<double>(batch.size());
        double loss = 0.0;
        for (std::size_t j = 0; j < batch.size(); ++j) {
            online_.forward(batch[j]->state, cache);
            const auto a = index_of(batch[j]->action);
            const double err = cache.output()[a] - y[j];
            loss += err * err;
            std::fill(loss_grad.begin(), loss_grad.end(), 0.0);
            loss_grad[a] = 2.0 * err * inv;
            online_.backward_accumulate(cache, loss_grad, grads);
        }
        opt_.step(online_, grads);

        ++updates_;
        epsilon_ = cfg_.exploration.at(updates_);
        LearnReport report{loss * inv, epsilon_, false};
        if (updates_ % cfg_.update_freq == 0) {
            target_ = online_;
            report.synced = true;
        }
        return report;
    }

    // Checkpoint: networks, optimizer, exploration state and config. Replay
    // memory is not persisted.
    nlohmann::json to_json() const;
    static DqnAgent from_json(const nlohmann::json& j);

private:
    static nn::Mlp make_net(std::size_t state_dim, const AgentConfig& cfg, Rng& rng) {
        std::vector<std::size_t> sizes{state_dim};
        sizes.insert(sizes.end(), cfg.hidden_layers.begin(), cfg.hidden_layers.end());
        sizes.push_back(kActionCount);
        return nn::Mlp(sizes, rng);
    }

    AgentConfig cfg_;
    nn::Mlp online_;
    nn::Mlp target_;
    nn::Adam opt_;
    ReplayMemory memory_;
    double epsilon_ = 1.0;
    std::uint64_t updates_ = 0;
};

inline nlohmann::json to_json(const AgentConfig& c) {
    return {
        {"gamma", c.gamma},
        {"batch_size", c.batch_size},
        {"replay_capacity", c.replay_capacity},
        {"replay_init", c.replay_init},
        {"update_freq", c.update_freq},
        {"max_episodes", c.max_episodes},
        {"max_steps", c.max_steps},
        {"learning_rate", c.learning_rate},
        {"hidden_layers", c.hidden_layers},
        {"epsilon_start", c.exploration.start},
        {"epsilon_decay", c.exploration.decay},
        {"epsilon_min", c.exploration.minimum},
    };
}

// Missing keys keep their defaults.
inline AgentConfig agent_config_from_json(const nlohmann::json& j, AgentConfig c = {}) {
    try {
        c.gamma = j.value("gamma", c.gamma);
        c.batch_size = j.value("batch_size", c.batch_size);
        c.replay_capacity = j.value("replay_capacity", c.replay_capacity);
        c.replay_init = j.value("replay_init", c.replay_init);
        c.update_freq = j.value("update_freq", c.update_freq);
        c.max_episodes = j.value("max_episodes", c.max_episodes);
        c.max_steps = j.value("max_steps", c.max_steps);
        c.learning_rate = j.value("learning_rate", c.learning_rate);
        c.hidden_layers = j.value("hidden_layers", c.hidden_layers);
        c.exploration.start = j.value("epsilon_start", c.exploration.start);
        c.exploration.decay = j.value("epsilon_decay", c.exploration.decay);
        c.exploration.minimum = j.value("epsilon_min", c.exploration.minimum);
    } catch (const nlohmann::json::exception& e) {
        throw DataError(std::string("agent config: ") + e.what());
    }
    c.validate();
    return c;
}

inline nlohmann::json DqnAgent::to_json() const {
    const auto& s = opt_.settings();
    nlohmann::json opt = {
        {"kind", "adam"},
        {"learning_rate", s.learning_rate},
        {"beta1", s.beta1},
        {"beta2", s.beta2},
        {"epsilon", s.epsilon},
        {"t", opt_.step_count()},
    };
    if (opt_.step_count() > 0) {
        opt["m"] = nn::parameters_to_json(opt_.first_moment());
        opt["v"] = nn::parameters_to_json(opt_.second_moment());
    }
    return {
        {"format_version", kFormatVersion},
        {"online", nn::to_json(online_)},
        {"target", nn::to_json(target_)},
        {"optimizer", opt},
        {"epsilon", epsilon_},
        {"update_counter", updates_},
        {"config", mtdrl::to_json(cfg_)},
    };
}

inline DqnAgent DqnAgent::from_json(const nlohmann::json& j) {
    try {
        check_format_version(j, "agent checkpoint");
        DqnAgent agent(nn::mlp_from_json(j.at("online")), agent_config_from_json(j.at("config")));
        agent.target_ = nn::mlp_from_json(j.at("target"));
        if (agent.target_.layer_sizes() != agent.online_.layer_sizes())
            throw DataError("agent checkpoint: online and target topologies differ");
        const auto& opt = j.at("optimizer");
        agent.opt_ = nn::Adam(nn::Adam::Settings{opt.at("learning_rate").get<double>(), opt.at("beta1").get<double>(),
                                                 opt.at("beta2").get<double>(), opt.at("epsilon").get<double>()});
        const auto t = opt.at("t").get<std::int64_t>();
        if (t > 0) {
            auto m = nn::parameters_from_json(opt.at("m"));
            auto v = nn::parameters_from_json(opt.at("v"));
            nn::check_same_shape(m, agent.online_.parameters(), "agent checkpoint optimizer");
            agent.opt_.restore(t, std::move(m), std::move(v));
        }
        agent.updates_ = j.at("update_counter").get<std::uint64_t>();
        agent.epsilon_ = j.at("epsilon").get<double>();
        return agent;
    } catch (const nlohmann::json::exception& e) {
        throw DataError(std::string("agent checkpoint: ") + e.what());
    }
}

}  // namespace mtdrl
