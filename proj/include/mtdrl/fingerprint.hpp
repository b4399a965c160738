#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_set>
#include <vector>

#include <json.hpp>

#include "mtdrl/error.hpp"

namespace mtdrl {

// One observation window: event counts (raw) or z-scores (normalized), in
// schema order.
using Fingerprint = std::vector<double>;

enum class Family {
    SystemCalls,
    Cpu,
    DeviceDrivers,
    Scheduler,
    Network,
    FileSystem,
    VirtualMemory,
    RandomNumbers,
};

inline constexpr std::array<std::string_view, 8> kFamilyNames = {
    "system_calls", "cpu",        "device_drivers", "scheduler",
    "network",      "file_system", "virtual_memory", "random_numbers",
};

inline std::string_view to_string(Family f) { return kFamilyNames[static_cast<std::size_t>(f)]; }

inline Family parse_family(std::string_view name) {
    for (std::size_t i = 0; i < kFamilyNames.size(); ++i)
        if (kFamilyNames[i] == name) return static_cast<Family>(i);
    throw DataError("unknown behavioral family '" + std::string(name) + "'");
}

// Maps an event identifier to its family from the tracepoint subsystem
// prefix. Bare software counters with no subsystem count as CPU events.
inline Family infer_family(std::string_view event) {
    const auto colon = event.find(':');
    const std::string_view subsystem = colon == std::string_view::npos ? event : event.substr(0, colon);
    struct Prefix {
        std::string_view name;
        Family family;
    };
    static constexpr Prefix table[] = {
        {"raw_syscalls", Family::SystemCalls}, {"syscalls", Family::SystemCalls},
        {"irq", Family::DeviceDrivers},        {"gpio", Family::DeviceDrivers},
        {"mmc", Family::DeviceDrivers},        {"spi", Family::DeviceDrivers},
        {"i2c", Family::DeviceDrivers},        {"usb", Family::DeviceDrivers},
        {"sched", Family::Scheduler},          {"net", Family::Network},
        {"skb", Family::Network},              {"sock", Family::Network},
        {"tcp", Family::Network},              {"udp", Family::Network},
        {"napi", Family::Network},             {"block", Family::FileSystem},
        {"ext4", Family::FileSystem},          {"filemap", Family::FileSystem},
        {"writeback", Family::FileSystem},     {"jbd2", Family::FileSystem},
        {"kmem", Family::VirtualMemory},       {"vmscan", Family::VirtualMemory},
        {"page-faults", Family::VirtualMemory}, {"minor-faults", Family::VirtualMemory},
        {"major-faults", Family::VirtualMemory}, {"faults", Family::VirtualMemory},
        {"random", Family::RandomNumbers},
    };
    for (const auto& p : table)
        if (p.name == subsystem) return p.family;
    return Family::Cpu;
}

struct FeatureSchema {
    std::vector<std::string> names;
    std::vector<Family> families;

    FeatureSchema() = default;
    FeatureSchema(std::vector<std::string> n, std::vector<Family> f) : names(std::move(n)), families(std::move(f)) {
        validate();
    }

    static FeatureSchema from_names(std::vector<std::string> n) {
        std::vector<Family> f;
        f.reserve(n.size());
        for (const auto& name : n) f.push_back(infer_family(name));
        return FeatureSchema(std::move(n), std::move(f));
    }

    std::size_t size() const { return names.size(); }

    std::optional<std::size_t> index_of(std::string_view name) const {
        for (std::size_t i = 0; i < names.size(); ++i)
            if (names[i] == name) return i;
        return std::nullopt;
    }

    void validate() const {
        if (names.size() != families.size())
            throw DataError("schema has " + std::to_string(names.size()) + " names but " +
                            std::to_string(families.size()) + " family tags");
        std::unordered_set<std::string_view> seen;
        for (const auto& n : names) {
            if (n.empty()) throw DataError("schema contains an empty feature name");
            if (n.find_first_of(",\r\n\"") != std::string::npos)
                throw DataError("feature name '" + n + "' contains a CSV delimiter");
            if (!seen.insert(n).second) throw DataError("duplicate feature name '" + n + "'");
        }
    }

    FeatureSchema subset(std::span<const std::size_t> kept) const {
        FeatureSchema out;
        for (auto i : kept) {
            out.names.push_back(names.at(i));
            out.families.push_back(families.at(i));
        }
        return out;
    }

    bool operator==(const FeatureSchema&) const = default;
};

// A fixed 46-event schema spread over the eight behavioral families. Used
// when no recorded schema is supplied.
inline FeatureSchema default_schema() {
    return FeatureSchema::from_names({
        "raw_syscalls:sys_enter", "raw_syscalls:sys_exit", "syscalls:sys_enter_read",
        "syscalls:sys_enter_write", "syscalls:sys_enter_openat", "syscalls:sys_enter_close",
        "syscalls:sys_enter_futex", "syscalls:sys_enter_poll",
        "cs", "migrations", "power:cpu_idle", "timer:hrtimer_start", "timer:timer_start",
        "workqueue:workqueue_execute_start",
        "irq:irq_handler_entry", "irq:softirq_entry", "gpio:gpio_value", "mmc:mmc_request_start",
        "spi:spi_message_start",
        "sched:sched_switch", "sched:sched_wakeup", "sched:sched_process_fork",
        "sched:sched_process_exec", "sched:sched_process_exit", "sched:sched_stat_runtime",
        "net:net_dev_queue", "net:netif_receive_skb", "skb:kfree_skb", "skb:consume_skb",
        "sock:inet_sock_set_state", "udp:udp_fail_queue_rcv_skb",
        "block:block_rq_issue", "block:block_rq_complete", "ext4:ext4_da_write_begin",
        "filemap:mm_filemap_add_to_page_cache", "writeback:writeback_pages_written",
        "writeback:writeback_dirty_inode",
        "kmem:kmalloc", "kmem:kfree", "kmem:mm_page_alloc", "kmem:mm_page_free", "page-faults",
        "vmscan:mm_vmscan_kswapd_wake",
        "random:get_random_bytes", "random:urandom_read", "random:mix_pool_bytes",
    });
}

struct Dataset {
    FeatureSchema schema;
    std::vector<Fingerprint> rows;

    void validate() const {
        schema.validate();
        for (std::size_t r = 0; r < rows.size(); ++r)
            if (rows[r].size() != schema.size())
                throw DataError("row " + std::to_string(r) + " has " + std::to_string(rows[r].size()) +
                                " values, schema has " + std::to_string(schema.size()));
    }
};

struct NormStats {
    std::vector<double> mean;
    std::vector<double> stddev;

    std::size_t size() const { return mean.size(); }
    bool operator==(const NormStats&) const = default;
};

namespace detail {

inline void check_finite_rows(std::span<const Fingerprint> rows, std::size_t width) {
    for (std::size_t r = 0; r < rows.size(); ++r) {
        if (rows[r].size() != width)
            throw DataError("row " + std::to_string(r) + " has " + std::to_string(rows[r].size()) +
                            " values, expected " + std::to_string(width));
        for (std::size_t j = 0; j < width; ++j)
            if (!std::isfinite(rows[r][j]))
                throw DataError("non-finite value at row " + std::to_string(r) + ", feature " + std::to_string(j));
    }
}

// Mean and sample standard deviation of column j.
inline std::pair<double, double> column_moments(std::span<const Fingerprint> rows, std::size_t j) {
    const auto n = rows.size();
    double mean = 0.0;
    for (const auto& row : rows) mean += row[j];
    mean /= static_cast<double>(n);
    if (n < 2) return {mean, 0.0};
    double ss = 0.0;
    for (const auto& row : rows) {
        const double d = row[j] - mean;
        ss += d * d;
    }
    return {mean, std::sqrt(ss / static_cast<double>(n - 1))};
}

}  // namespace detail

inline NormStats fit_norm_stats(std::span<const Fingerprint> rows) {
    if (rows.empty()) throw DataError("cannot fit normalization statistics on an empty dataset");
    const auto width = rows.front().size();
    detail::check_finite_rows(rows, width);
    NormStats stats;
    stats.mean.resize(width);
    stats.stddev.resize(width);
    for (std::size_t j = 0; j < width; ++j) {
        auto [m, s] = detail::column_moments(rows, j);
        stats.mean[j] = m;
        stats.stddev[j] = s;
    }
    return stats;
}

// Zero-variance features carry no information and map to 0.
inline Fingerprint normalize(const Fingerprint& fp, const NormStats& stats) {
    if (fp.size() != stats.size())
        throw DataError("fingerprint has " + std::to_string(fp.size()) + " features, statistics have " +
                        std::to_string(stats.size()));
    Fingerprint out(fp.size());
    for (std::size_t i = 0; i < fp.size(); ++i)
        out[i] = stats.stddev[i] > 0.0 ? (fp[i] - stats.mean[i]) / stats.stddev[i] : 0.0;
    return out;
}

inline std::vector<Fingerprint> normalize_all(std::span<const Fingerprint> rows, const NormStats& stats) {
    std::vector<Fingerprint> out;
    out.reserve(rows.size());
    for (const auto& r : rows) out.push_back(normalize(r, stats));
    return out;
}

struct OutlierReport {
    std::vector<std::size_t> retained;  // input indices, ascending
    std::vector<std::size_t> dropped;
};

struct OutlierResult {
    std::vector<Fingerprint> rows;
    OutlierReport report;
};

// Drops every normalized row with |z| > z_max in any feature.
inline OutlierResult remove_outliers(std::span<const Fingerprint> normalized, double z_max = 3.0) {
    if (!(z_max > 0.0)) throw UsageError("z_max must be positive");
    OutlierResult out;
    for (std::size_t r = 0; r < normalized.size(); ++r) {
        const auto& row = normalized[r];
        const bool outlier = std::any_of(row.begin(), row.end(), [&](double z) { return !(std::abs(z) <= z_max); });
        if (outlier) {
            out.report.dropped.push_back(r);
        } else {
            out.report.retained.push_back(r);
            out.rows.push_back(row);
        }
    }
    if (!normalized.empty() && out.rows.empty())
        throw DataError("outlier removal dropped all " + std::to_string(normalized.size()) +
                        " rows; z_max is mis-calibrated");
    return out;
}

struct SelectionConfig {
    double corr_threshold = 0.9;
    // A feature is unstable when the coefficient of variation of its best and
    // worst dataset third differ by more than this factor.
    double instability_factor = 5.0;
    // The instability test needs this many rows in each third.
    std::size_t min_rows_per_third = 10;
};

struct FeatureRemoval {
    std::size_t index;
    std::string name;
    std::string reason;  // "constant", "unstable" or "correlated"
    std::string detail;
};

struct SelectionResult {
    FeatureSchema schema;
    std::vector<std::size_t> kept;
    std::vector<FeatureRemoval> removed;
};

inline double pearson(std::span<const Fingerprint> rows, std::size_t a, std::size_t b) {
    const auto [ma, sa] = detail::column_moments(rows, a);
    const auto [mb, sb] = detail::column_moments(rows, b);
    double cov = 0.0;
    for (const auto& row : rows) cov += (row[a] - ma) * (row[b] - mb);
    cov /= static_cast<double>(rows.size() - 1);
    return cov / (sa * sb);
}

namespace detail {

inline std::optional<std::string> instability(std::span<const Fingerprint> rows, std::size_t j,
                                              const SelectionConfig& cfg) {
    const std::size_t third = rows.size() / 3;
    if (third < std::max<std::size_t>(cfg.min_rows_per_third, 2)) return std::nullopt;
    std::array<double, 3> cv{};
    for (std::size_t k = 0; k < 3; ++k) {
        auto [m, s] = column_moments(rows.subspan(k * third, third), j);
        if (s == 0.0)
            cv[k] = 0.0;
        else if (m == 0.0)
            cv[k] = INFINITY;
        else
            cv[k] = s / std::abs(m);
    }
    const auto [lo, hi] = std::minmax_element(cv.begin(), cv.end());
    const bool unstable = (*hi > 0.0 && *lo == 0.0) || *hi / *lo > cfg.instability_factor || std::isinf(*hi);
    if (!unstable) return std::nullopt;
    return "coefficient of variation per third: " + std::to_string(cv[0]) + ", " + std::to_string(cv[1]) + ", " +
           std::to_string(cv[2]);
}

}  // namespace detail

// Prunes constant, unstable and highly correlated features. For a correlated
// pair the earlier-indexed feature is kept.
inline SelectionResult select_features(const Dataset& data, const SelectionConfig& cfg = {}) {
    if (!(cfg.corr_threshold > 0.0 && cfg.corr_threshold < 1.0))
        throw UsageError("correlation threshold must lie in (0, 1)");
    if (!(cfg.instability_factor > 1.0)) throw UsageError("instability factor must exceed 1");
    data.validate();
    if (data.rows.size() < 2) throw DataError("feature selection needs at least 2 rows");
    const std::span<const Fingerprint> rows(data.rows);
    detail::check_finite_rows(rows, data.schema.size());

    SelectionResult out;
    std::vector<std::size_t> candidates;
    for (std::size_t j = 0; j < data.schema.size(); ++j) {
        const double first = rows.front()[j];
        const bool constant = std::all_of(rows.begin(), rows.end(), [&](const Fingerprint& r) { return r[j] == first; });
        if (constant) {
            out.removed.push_back({j, data.schema.names[j], "constant", "value " + std::to_string(first)});
        } else if (auto why = detail::instability(rows, j, cfg)) {
            out.removed.push_back({j, data.schema.names[j], "unstable", *why});
        } else {
            candidates.push_back(j);
        }
    }
    for (auto j : candidates) {
        bool dropped = false;
        for (auto i : out.kept) {
            const double r = pearson(rows, i, j);
            if (std::abs(r) > cfg.corr_threshold) {
                out.removed.push_back({j, data.schema.names[j], "correlated",
                                       "|r| = " + std::to_string(std::abs(r)) + " with " + data.schema.names[i]});
                dropped = true;
                break;
            }
        }
        if (!dropped) out.kept.push_back(j);
    }
    std::sort(out.removed.begin(), out.removed.end(),
              [](const FeatureRemoval& a, const FeatureRemoval& b) { return a.index < b.index; });
    out.schema = data.schema.subset(out.kept);
    return out;
}

// Re-expresses a dataset under a (reduced) schema by feature name.
inline Dataset project(const Dataset& data, const FeatureSchema& target) {
    std::vector<std::size_t> columns;
    for (const auto& name : target.names) {
        auto idx = data.schema.index_of(name);
        if (!idx) throw DataError("dataset lacks feature '" + name + "'");
        columns.push_back(*idx);
    }
    Dataset out{target, {}};
    out.rows.reserve(data.rows.size());
    for (const auto& row : data.rows) {
        Fingerprint fp;
        fp.reserve(columns.size());
        for (auto c : columns) fp.push_back(row.at(c));
        out.rows.push_back(std::move(fp));
    }
    return out;
}

// JSON persistence ---------------------------------------------------------

inline constexpr int kFormatVersion = 1;

inline void check_format_version(const nlohmann::json& j, std::string_view what) {
    if (!j.contains("format_version") || j.at("format_version") != kFormatVersion)
        throw DataError(std::string(what) + ": unsupported or missing format_version");
}

inline nlohmann::json to_json(const FeatureSchema& s) {
    nlohmann::json fams = nlohmann::json::array();
    for (auto f : s.families) fams.push_back(std::string(to_string(f)));
    return {{"format_version", kFormatVersion}, {"names", s.names}, {"families", fams}};
}

inline FeatureSchema schema_from_json(const nlohmann::json& j) {
    try {
        check_format_version(j, "schema");
        auto names = j.at("names").get<std::vector<std::string>>();
        if (!j.contains("families")) return FeatureSchema::from_names(std::move(names));
        std::vector<Family> fams;
        for (const auto& f : j.at("families")) fams.push_back(parse_family(f.get<std::string>()));
        return FeatureSchema(std::move(names), std::move(fams));
    } catch (const nlohmann::json::exception& e) {
        throw DataError(std::string("schema: ") + e.what());
    }
}

inline nlohmann::json to_json(const NormStats& s) {
    return {{"format_version", kFormatVersion}, {"mean", s.mean}, {"stddev", s.stddev}};
}

inline NormStats norm_stats_from_json(const nlohmann::json& j) {
    try {
        check_format_version(j, "norm_stats");
        NormStats s{j.at("mean").get<std::vector<double>>(), j.at("stddev").get<std::vector<double>>()};
        if (s.mean.size() != s.stddev.size()) throw DataError("norm_stats: mean/stddev length mismatch");
        for (double sd : s.stddev)
            if (!(sd >= 0.0)) throw DataError("norm_stats: negative standard deviation");
        return s;
    } catch (const nlohmann::json::exception& e) {
        throw DataError(std::string("norm_stats: ") + e.what());
    }
}

}  // namespace mtdrl
