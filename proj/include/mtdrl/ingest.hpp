#pragma once

#include <charconv>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <system_error>
#include <vector>

#include "mtdrl/error.hpp"
#include "mtdrl/fingerprint.hpp"

namespace mtdrl {

struct EventSample {
    double timestamp = 0.0;             // seconds since the profiler started
    std::string event;
    std::optional<double> count;        // nullopt for "<not counted>"

    bool operator==(const EventSample&) const = default;
};

namespace detail {

inline std::string_view trim(std::string_view s) {
    while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
    while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
    return s;
}

inline std::optional<double> parse_real(std::string_view s) {
    s = trim(s);
    if (s.empty()) return std::nullopt;
    double v = 0.0;
    const auto* end = s.data() + s.size();
    auto [ptr, ec] = std::from_chars(s.data(), end, v);
    if (ec != std::errc() || ptr != end || !std::isfinite(v)) return std::nullopt;
    return v;
}

inline std::vector<std::string_view> split(std::string_view line, char sep) {
    std::vector<std::string_view> out;
    std::size_t start = 0;
    for (;;) {
        auto pos = line.find(sep, start);
        if (pos == std::string_view::npos) {
            out.push_back(line.substr(start));
            return out;
        }
        out.push_back(line.substr(start, pos - start));
        start = pos + 1;
    }
}

inline std::string format_real(double v) {
    char buf[64];
    auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
    if (ec != std::errc()) throw Error("cannot format value");
    return std::string(buf, ptr);
}

inline std::string where(std::size_t line_no) { return "line " + std::to_string(line_no) + ": "; }

}  // namespace detail

// Parses the machine-readable interval output of `perf stat -I <ms> -x,`:
//   <time>,<count>,<unit>,<event>[,<run-time>,<pct>[,<metric>,<metric-unit>]]
// Lines starting with '#' and blank lines are skipped.
inline std::vector<EventSample> parse_perf_intervals(std::string_view text) {
    std::vector<EventSample> out;
    std::map<std::string, double, std::less<>> last_time;
    std::size_t line_no = 0;
    std::size_t pos = 0;
    while (pos <= text.size()) {
        auto nl = text.find('\n', pos);
        if (nl == std::string_view::npos) nl = text.size();
        auto line = detail::trim(text.substr(pos, nl - pos));
        pos = nl + 1;
        ++line_no;
        if (line.empty() || line.front() == '#') {
            if (nl == text.size()) break;
            continue;
        }
        const auto fields = detail::split(line, ',');
        if (fields.size() < 4 || fields.size() > 8)
            throw DataError(detail::where(line_no) + "unknown field count " + std::to_string(fields.size()));
        EventSample s;
        auto t = detail::parse_real(fields[0]);
        if (!t || *t < 0.0) throw DataError(detail::where(line_no) + "malformed timestamp");
        s.timestamp = *t;
        const auto count_field = detail::trim(fields[1]);
        if (count_field == "<not counted>" || count_field == "<not supported>") {
            s.count = std::nullopt;
        } else {
            auto c = detail::parse_real(count_field);
            if (!c || *c < 0.0) throw DataError(detail::where(line_no) + "malformed count '" + std::string(count_field) + "'");
            s.count = *c;
        }
        s.event = std::string(detail::trim(fields[3]));
        if (s.event.empty()) throw DataError(detail::where(line_no) + "missing event name");
        auto [it, inserted] = last_time.try_emplace(s.event, s.timestamp);
        if (!inserted) {
            if (s.timestamp < it->second)
                throw DataError(detail::where(line_no) + "timestamp goes backwards for " + s.event);
            it->second = s.timestamp;
        }
        out.push_back(std::move(s));
        if (nl == text.size()) break;
    }
    return out;
}

enum class MissingPolicy { Drop, ZeroFill };

struct DroppedWindow {
    std::int64_t index;
    std::vector<std::string> missing_events;
};

struct WindowedSeries {
    std::vector<Fingerprint> rows;
    std::vector<std::int64_t> window_index;  // parallel to rows
    std::vector<DroppedWindow> dropped;
};

// Sums counts per event over half-open windows [k*w, (k+1)*w). A window in
// which some schema event is absent or reported as not counted is dropped
// (or zero-filled under MissingPolicy::ZeroFill).
inline WindowedSeries window_aggregate(const std::vector<EventSample>& samples, const FeatureSchema& schema,
                                       double window_s = 5.0, MissingPolicy policy = MissingPolicy::Drop) {
    if (!(window_s > 0.0) || !std::isfinite(window_s)) throw UsageError("window length must be positive");
    if (samples.empty()) throw DataError("no samples");

    struct Cell {
        double sum = 0.0;
        bool counted = false;
        bool missing = false;
    };
    std::map<std::int64_t, std::vector<Cell>> windows;
    std::vector<bool> observed(schema.size(), false);
    for (const auto& s : samples) {
        auto idx = schema.index_of(s.event);
        if (!idx) continue;
        observed[*idx] = true;
        const auto k = static_cast<std::int64_t>(std::floor(s.timestamp / window_s));
        auto& cells = windows[k];
        if (cells.empty()) cells.resize(schema.size());
        auto& cell = cells[*idx];
        if (s.count) {
            cell.sum += *s.count;
            cell.counted = true;
        } else {
            cell.missing = true;
        }
    }
    std::string absent;
    for (std::size_t j = 0; j < schema.size(); ++j)
        if (!observed[j]) absent += (absent.empty() ? "" : ", ") + schema.names[j];
    if (!absent.empty()) throw DataError("schema events never observed: " + absent);

    WindowedSeries out;
    const auto first = windows.begin()->first;
    const auto last = windows.rbegin()->first;
    for (auto k = first; k <= last; ++k) {
        auto it = windows.find(k);
        Fingerprint fp(schema.size(), 0.0);
        std::vector<std::string> missing;
        for (std::size_t j = 0; j < schema.size(); ++j) {
            if (it == windows.end() || !it->second[j].counted || it->second[j].missing)
                missing.push_back(schema.names[j]);
            else
                fp[j] = it->second[j].sum;
        }
        if (!missing.empty() && policy == MissingPolicy::Drop) {
            out.dropped.push_back({k, std::move(missing)});
            continue;
        }
        out.rows.push_back(std::move(fp));
        out.window_index.push_back(k);
    }
    return out;
}

// Dataset CSV ----------------------------------------------------------------

inline std::string dataset_to_csv(const Dataset& data) {
    data.validate();
    std::string out;
    for (std::size_t j = 0; j < data.schema.size(); ++j) {
        if (j) out += ',';
        out += data.schema.names[j];
    }
    out += '\n';
    for (const auto& row : data.rows) {
        for (std::size_t j = 0; j < row.size(); ++j) {
            if (j) out += ',';
            out += detail::format_real(row[j]);
        }
        out += '\n';
    }
    return out;
}

inline Dataset dataset_from_csv(std::string_view text) {
    std::vector<std::string_view> lines;
    std::size_t pos = 0;
    while (pos < text.size()) {
        auto nl = text.find('\n', pos);
        if (nl == std::string_view::npos) nl = text.size();
        lines.push_back(text.substr(pos, nl - pos));
        pos = nl + 1;
    }
    if (lines.empty() || detail::trim(lines.front()).empty()) throw DataError("dataset has no header row");
    std::vector<std::string> names;
    for (auto f : detail::split(detail::trim(lines.front()), ','))
        names.emplace_back(detail::trim(f));
    Dataset data;
    data.schema = FeatureSchema::from_names(std::move(names));
    const auto width = data.schema.size();
    for (std::size_t r = 1; r < lines.size(); ++r) {
        auto line = detail::trim(lines[r]);
        if (line.empty()) {
            if (r + 1 == lines.size()) break;
            throw DataError("row " + std::to_string(r - 1) + " (line " + std::to_string(r + 1) + "): empty row");
        }
        auto cells = detail::split(line, ',');
        if (cells.size() != width)
            throw DataError("row " + std::to_string(r - 1) + " (line " + std::to_string(r + 1) + "): ragged row with " +
                            std::to_string(cells.size()) + " cells, header has " + std::to_string(width));
        Fingerprint fp;
        fp.reserve(width);
        for (std::size_t j = 0; j < width; ++j) {
            auto v = detail::parse_real(cells[j]);
            if (!v)
                throw DataError("row " + std::to_string(r - 1) + " (line " + std::to_string(r + 1) + "), column '" +
                                data.schema.names[j] + "': non-numeric cell '" + std::string(cells[j]) + "'");
            fp.push_back(*v);
        }
        data.rows.push_back(std::move(fp));
    }
    return data;
}

inline std::string read_text_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

inline void write_text_file(const std::filesystem::path& path, std::string_view text) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot write " + path.string());
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    if (!out) throw DataError("failed writing " + path.string());
}

inline Dataset load_dataset(const std::filesystem::path& path) {
    try {
        return dataset_from_csv(read_text_file(path));
    } catch (const DataError& e) {
        throw DataError(path.string() + ": " + e.what());
    }
}

inline void save_dataset(const std::filesystem::path& path, const Dataset& data) {
    write_text_file(path, dataset_to_csv(data));
}

}  // namespace mtdrl
