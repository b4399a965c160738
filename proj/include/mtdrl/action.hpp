#pragma once

#include <array>
#include <bitset>
#include <cstddef>
#include <cstdint>
#include <string>
#include <string_view>

#include "mtdrl/error.hpp"

namespace mtdrl {

// The four MTD techniques. Indices are fixed: they address Q-network outputs.
enum class Action : std::uint8_t {
    IpShuffling = 0,
    RansomwareTrap = 1,
    FileRandomization = 2,
    LibrarySanitation = 3,
};

inline constexpr std::size_t kActionCount = 4;

inline constexpr std::array<Action, kActionCount> kAllActions = {
    Action::IpShuffling, Action::RansomwareTrap, Action::FileRandomization, Action::LibrarySanitation};

inline constexpr std::array<std::string_view, kActionCount> kActionNames = {
    "ip_shuffling", "ransomware_trap", "file_randomization", "library_sanitation"};

using ActionSet = std::bitset<kActionCount>;

inline constexpr std::size_t index_of(Action a) { return static_cast<std::size_t>(a); }

inline Action action_from_index(std::size_t i) {
    if (i >= kActionCount) throw DataError("action index " + std::to_string(i) + " out of range");
    return static_cast<Action>(i);
}

inline std::string_view to_string(Action a) { return kActionNames[index_of(a)]; }

inline Action parse_action(std::string_view name) {
    for (std::size_t i = 0; i < kActionCount; ++i)
        if (kActionNames[i] == name) return static_cast<Action>(i);
    throw DataError("unknown action '" + std::string(name) + "'");
}

inline ActionSet action_set(std::initializer_list<Action> actions) {
    ActionSet s;
    for (auto a : actions) s.set(index_of(a));
    return s;
}

inline bool contains(const ActionSet& s, Action a) { return s.test(index_of(a)); }

}  // namespace mtdrl
