#pragma once

#include <array>
#include <cmath>
#include <random>

#include "mtdrl/agent.hpp"

namespace mtdrl::fixtures {

// Deterministic 2-state, 2-action MDP. Q-heads 2 and 3 alias actions 0 and 1.
struct TwoStateMdp {
    // From s0: a0 mitigates (+1, terminal), a1 fails (-1) and moves to s1.
    // From s1: a0 fails (-1) and stays in s1, a1 mitigates (+1, terminal).
    std::array<std::array<int, 2>, 2> reward{{{+1, -1}, {-1, +1}}};
    std::array<std::array<int, 2>, 2> next{{{0, 1}, {1, 1}}};

    static std::size_t base(std::size_t head) { return head % 2; }
    bool terminal(std::size_t s, std::size_t a) const { return reward[s][a] == +1; }

    static Fingerprint one_hot(std::size_t s) { return s == 0 ? Fingerprint{1.0, 0.0} : Fingerprint{0.0, 1.0}; }

    std::array<std::array<double, 2>, 2> value_iteration(double gamma, int sweeps = 200) const {
        std::array<std::array<double, 2>, 2> q{};
        for (int it = 0; it < sweeps; ++it) {
            auto nq = q;
            for (std::size_t s = 0; s < 2; ++s)
                for (std::size_t a = 0; a < 2; ++a) {
                    const auto n = static_cast<std::size_t>(next[s][a]);
                    nq[s][a] = reward[s][a] + (terminal(s, a) ? 0.0 : gamma * std::max(q[n][0], q[n][1]));
                }
            q = nq;
        }
        return q;
    }
};

inline AgentConfig tabular_config() {
    AgentConfig cfg;
    cfg.hidden_layers = {16};
    cfg.learning_rate = 1e-3;
    cfg.batch_size = 32;
    cfg.replay_init = 32;
    cfg.exploration = {1.0, 1e-4, 0.1};
    return cfg;
}

struct TabularResult {
    double max_error = 0.0;
    std::uint64_t updates = 0;
};

// Runs epsilon-greedy episodes on the MDP doing one learn_step per transition.
inline TabularResult train_tabular(std::uint64_t seed, std::uint64_t max_updates = 20000) {
    TwoStateMdp mdp;
    auto init = substream(seed, "tabular-init");
    auto act = substream(seed, "tabular-act");
    auto replay = substream(seed, "tabular-replay");
    DqnAgent agent(2, tabular_config(), init);
    std::uniform_int_distribution<std::size_t> start(0, 1);
    while (agent.update_count() < max_updates) {
        std::size_t s = start(act);
        for (int t = 0; t < 10 && agent.update_count() < max_updates; ++t) {
            const auto head = index_of(agent.select_action(TwoStateMdp::one_hot(s), act));
            const auto a = TwoStateMdp::base(head);
            const auto n = static_cast<std::size_t>(mdp.next[s][a]);
            const bool done = mdp.terminal(s, a);
            agent.remember({TwoStateMdp::one_hot(s), action_from_index(head), mdp.reward[s][a], TwoStateMdp::one_hot(n),
                            done});
            if (agent.ready()) agent.learn_step(replay);
            if (done) break;
            s = n;
        }
    }
    const auto qstar = mdp.value_iteration(agent.gamma());
    TabularResult r{0.0, agent.update_count()};
    for (std::size_t s = 0; s < 2; ++s) {
        const auto q = agent.q_values(TwoStateMdp::one_hot(s));
        for (std::size_t h = 0; h < kActionCount; ++h)
            r.max_error = std::max(r.max_error, std::abs(q[h] - qstar[s][TwoStateMdp::base(h)]));
    }
    return r;
}

}  // namespace mtdrl::fixtures
