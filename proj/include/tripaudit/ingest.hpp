#pragma once

#include <array>
#include <cctype>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "tripaudit/common.hpp"
#include "tripaudit/csv.hpp"

namespace tripaudit {

// One ride after canonicalization. Tract IDs are 11-digit GEOID strings,
// empty when absent. Timestamps keep the source text (15-minute granularity
// upstream) next to a parsed epoch; nothing downstream consumes them.
struct TripRecord {
    std::string trip_id;
    std::string start_time;
    std::string end_time;
    std::int64_t start_epoch = 0;
    std::int64_t end_epoch = 0;
    std::int64_t seconds = 0;
    double miles = 0.0;
    std::string pickup_tract;
    std::string dropoff_tract;
    double fare = 0.0;
    bool shared = false;

    double fare_per_mile() const { return fare / miles; }
    double seconds_per_mile() const { return static_cast<double>(seconds) / miles; }
};

struct AttributeEstimate {
    double value = 0.0;  // fraction in [0, 1]
    double moe = 0.0;    // nonnegative margin of error
};

struct TractProfile {
    std::string geoid;
    double area_m2 = 0.0;
    // Insertion-ordered by header appearance is not required; keep sorted map
    // so downstream column iteration is deterministic.
    std::map<std::string, AttributeEstimate> attributes;
};

enum class DropReason { shared, missing, nonpositive_miles, nonpositive_seconds, malformed };

struct IngestStats {
    std::uint64_t rows_read = 0;
    std::uint64_t retained = 0;
    std::uint64_t dropped_shared = 0;
    std::uint64_t dropped_missing = 0;
    std::uint64_t dropped_nonpositive_miles = 0;
    std::uint64_t dropped_nonpositive_seconds = 0;
    std::uint64_t dropped_malformed = 0;

    std::uint64_t dropped_total() const {
        return dropped_shared + dropped_missing + dropped_nonpositive_miles +
               dropped_nonpositive_seconds + dropped_malformed;
    }

    void count(DropReason reason) {
        switch (reason) {
            case DropReason::shared: ++dropped_shared; break;
            case DropReason::missing: ++dropped_missing; break;
            case DropReason::nonpositive_miles: ++dropped_nonpositive_miles; break;
            case DropReason::nonpositive_seconds: ++dropped_nonpositive_seconds; break;
            case DropReason::malformed: ++dropped_malformed; break;
        }
    }

    nlohmann::ordered_json to_json() const {
        return nlohmann::ordered_json{
            {"rows_read", rows_read},
            {"retained", retained},
            {"dropped",
             {{"shared", dropped_shared},
              {"missing", dropped_missing},
              {"nonpositive_miles", dropped_nonpositive_miles},
              {"nonpositive_seconds", dropped_nonpositive_seconds},
              {"malformed", dropped_malformed}}}};
    }
};

enum class TripMode { ridehailing, taxi };
enum class FareColumn { base, total };

namespace detail {

inline std::string lower(std::string_view s) {
    std::string out(s);
    for (char& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    return out;
}

inline std::string trim(std::string_view s) {
    std::size_t b = 0, e = s.size();
    while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
    while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
    return std::string(s.substr(b, e - b));
}

inline bool parse_double(std::string_view s, double& out) {
    const char* begin = s.data();
    const char* end = s.data() + s.size();
    auto [ptr, ec] = std::from_chars(begin, end, out);
    return ec == std::errc() && ptr == end;
}

inline bool parse_int64(std::string_view s, std::int64_t& out) {
    const char* begin = s.data();
    const char* end = s.data() + s.size();
    auto [ptr, ec] = std::from_chars(begin, end, out);
    return ec == std::errc() && ptr == end;
}

// Accepted: true/false, y/n, 1/0 (case-insensitive).
inline std::optional<bool> parse_bool(std::string_view raw) {
    std::string s = lower(trim(raw));
    if (s == "true" || s == "y" || s == "1" || s == "yes" || s == "t") return true;
    if (s == "false" || s == "n" || s == "0" || s == "no" || s == "f") return false;
    return std::nullopt;
}

inline bool is_geoid(std::string_view s) {
    if (s.size() != 11) return false;
    for (char c : s) {
        if (!std::isdigit(static_cast<unsigned char>(c))) return false;
    }
    return true;
}

inline bool leap_year(int y) { return (y % 4 == 0 && y % 100 != 0) || y % 400 == 0; }

inline std::int64_t days_from_civil(int y, int m, int d) {
    // Howard Hinnant's algorithm, days since 1970-01-01.
    y -= m <= 2;
    int era = (y >= 0 ? y : y - 399) / 400;
    unsigned yoe = static_cast<unsigned>(y - era * 400);
    unsigned doy = static_cast<unsigned>((153 * (m + (m > 2 ? -3 : 9)) + 2) / 5 + d - 1);
    unsigned doe = yoe * 365 + yoe / 4 - yoe / 100 + doy;
    return static_cast<std::int64_t>(era) * 146097 + static_cast<std::int64_t>(doe) - 719468;
}

// Accepts "YYYY-MM-DD HH:MM[:SS]" (also with 'T') and the Chicago portal
// form "MM/DD/YYYY HH:MM:SS AM". Returns epoch seconds (no time zone).
inline std::optional<std::int64_t> parse_timestamp(std::string_view raw) {
    std::string s = trim(raw);
    if (s.empty()) return std::nullopt;

    auto digits = [&](std::size_t pos, std::size_t n, int& out) -> bool {
        if (pos + n > s.size()) return false;
        int v = 0;
        for (std::size_t i = 0; i < n; ++i) {
            char c = s[pos + i];
            if (!std::isdigit(static_cast<unsigned char>(c))) return false;
            v = v * 10 + (c - '0');
        }
        out = v;
        return true;
    };

    int year = 0, month = 0, day = 0, hour = 0, minute = 0, second = 0;
    std::size_t rest = 0;
    bool twelve_hour = false;

    if (s.size() >= 10 && s[4] == '-' && s[7] == '-') {
        if (!digits(0, 4, year) || !digits(5, 2, month) || !digits(8, 2, day)) return std::nullopt;
        rest = 10;
    } else if (s.size() >= 10 && s[2] == '/' && s[5] == '/') {
        if (!digits(0, 2, month) || !digits(3, 2, day) || !digits(6, 4, year)) return std::nullopt;
        rest = 10;
        twelve_hour = true;
    } else {
        return std::nullopt;
    }

    if (rest < s.size()) {
        char sep = s[rest];
        if (sep != ' ' && sep != 'T') return std::nullopt;
        ++rest;
        if (!digits(rest, 2, hour) || rest + 2 >= s.size() || s[rest + 2] != ':' ||
            !digits(rest + 3, 2, minute)) {
            return std::nullopt;
        }
        rest += 5;
        if (rest < s.size() && s[rest] == ':') {
            if (!digits(rest + 1, 2, second)) return std::nullopt;
            rest += 3;
        }
        std::string tail = lower(trim(s.substr(rest)));
        if (tail == "am") {
            if (hour == 12) hour = 0;
        } else if (tail == "pm") {
            if (hour != 12) hour += 12;
        } else if (!tail.empty()) {
            return std::nullopt;
        } else if (twelve_hour && hour > 23) {
            return std::nullopt;
        }
    }

    if (month < 1 || month > 12 || day < 1 || day > 31 || hour > 23 || minute > 59 ||
        second > 60) {
        return std::nullopt;
    }
    static const int mdays[] = {31, 28, 31, 30, 31, 30, 31, 31, 30, 31, 30, 31};
    int dmax = mdays[month - 1] + ((month == 2 && leap_year(year)) ? 1 : 0);
    if (day > dmax) return std::nullopt;

    return days_from_civil(year, month, day) * 86400 + hour * 3600 + minute * 60 + second;
}

}  // namespace detail

// Canonical trip columns and their Chicago TNP / taxi portal header names.
// Resolution order per canonical column: user mapping, canonical name itself,
// portal default. `trip_total` backs the --fare-column total switch; `shared`
// is optional in taxi mode (the taxi portal has no shared-ride column).
struct ColumnMapping {
    std::map<std::string, std::string> overrides;  // canonical -> actual header

    static ColumnMapping load(const std::filesystem::path& path) {
        std::ifstream in(path);
        if (!in) throw InputError("ingest: cannot open mapping file: " + path.string());
        nlohmann::json j;
        try {
            in >> j;
        } catch (const nlohmann::json::exception& e) {
            throw InputError("ingest: mapping file is not valid JSON: " + std::string(e.what()));
        }
        if (!j.is_object()) throw InputError("ingest: mapping file must be a JSON object");
        ColumnMapping m;
        for (auto& [key, value] : j.items()) {
            if (!value.is_string()) {
                throw InputError("ingest: mapping value for '" + key + "' must be a string");
            }
            m.overrides[key] = value.get<std::string>();
        }
        return m;
    }
};

inline const std::map<std::string, std::string>& chicago_default_headers() {
    static const std::map<std::string, std::string> defaults = {
        {"trip_id", "Trip ID"},
        {"start_time", "Trip Start Timestamp"},
        {"end_time", "Trip End Timestamp"},
        {"seconds", "Trip Seconds"},
        {"miles", "Trip Miles"},
        {"pickup_tract", "Pickup Census Tract"},
        {"dropoff_tract", "Dropoff Census Tract"},
        {"fare", "Fare"},
        {"trip_total", "Trip Total"},
        {"shared", "Shared Trip Authorized"},
    };
    return defaults;
}

struct TripReadOptions {
    TripMode mode = TripMode::ridehailing;
    FareColumn fare_column = FareColumn::base;
    std::uint64_t malformed_tolerance = 0;
    char delimiter = ',';
};

struct RowIssue {
    DropReason reason;
    std::string detail;
};

// Streaming reader over a trips file: resolves the header once, then yields
// one canonical TripRecord per data row. Rows that fail filters are reported
// through `issue` instead. Memory use is independent of row count.
class TripReader {
  public:
    TripReader(const std::filesystem::path& path, const ColumnMapping& mapping,
               const TripReadOptions& options)
        : file_(path), reader_(file_, options.delimiter), options_(options), path_(path) {
        if (!file_) throw InputError("ingest: cannot open trips file: " + path.string());
        std::vector<std::string> header;
        if (!reader_.next(header)) throw InputError("ingest: empty trips file: " + path.string());
        resolve_header(header, mapping);
    }

    // Returns false at end of file. On true, exactly one of `record` /
    // `issue` is set: a retained record or a counted drop.
    bool next(std::optional<TripRecord>& record, std::optional<RowIssue>& issue) {
        record.reset();
        issue.reset();
        if (!reader_.next(fields_)) return false;
        ++rows_read_;

        auto malformed = [&](const std::string& what) {
            ++malformed_seen_;
            if (malformed_seen_ > options_.malformed_tolerance) {
                throw InputError("ingest: malformed row " + std::to_string(rows_read_) + " in " +
                                 path_.string() + ": " + what);
            }
            issue = RowIssue{DropReason::malformed, what};
            return true;
        };

        if (fields_.size() != header_width_) {
            malformed("expected " + std::to_string(header_width_) + " columns, got " +
                      std::to_string(fields_.size()));
            return true;
        }

        TripRecord rec;
        // Precedence when several problems coexist: malformed, shared,
        // missing, nonpositive miles, nonpositive seconds.
        std::string shared_raw = field(col_shared_);
        bool shared = false;
        if (col_shared_ >= 0 && !detail::trim(shared_raw).empty()) {
            auto parsed = detail::parse_bool(shared_raw);
            if (!parsed) {
                malformed("unrecognized boolean '" + shared_raw + "'");
                return true;
            }
            shared = *parsed;
        }

        std::string miles_raw = detail::trim(field(col_miles_));
        std::string seconds_raw = detail::trim(field(col_seconds_));
        std::string fare_raw = detail::trim(field(fare_col_index()));
        std::string pickup = detail::trim(field(col_pickup_));
        std::string dropoff = detail::trim(field(col_dropoff_));
        std::string start_raw = detail::trim(field(col_start_));
        std::string end_raw = detail::trim(field(col_end_));
        std::string id = detail::trim(field(col_id_));

        double miles = 0.0;
        std::int64_t seconds = 0;
        double fare = 0.0;
        if (!miles_raw.empty() && !detail::parse_double(miles_raw, miles)) {
            malformed("unparseable miles '" + miles_raw + "'");
            return true;
        }
        if (!seconds_raw.empty() && !detail::parse_int64(seconds_raw, seconds)) {
            // Portal exports sometimes carry fractional seconds; accept and truncate.
            double s = 0.0;
            if (!detail::parse_double(seconds_raw, s)) {
                malformed("unparseable seconds '" + seconds_raw + "'");
                return true;
            }
            seconds = static_cast<std::int64_t>(s);
        }
        if (!fare_raw.empty()) {
            std::string cleaned = fare_raw;
            if (!cleaned.empty() && cleaned.front() == '$') cleaned.erase(0, 1);
            if (!detail::parse_double(cleaned, fare)) {
                malformed("unparseable fare '" + fare_raw + "'");
                return true;
            }
            if (fare < 0.0) {
                malformed("negative fare '" + fare_raw + "'");
                return true;
            }
        }
        if (!pickup.empty() && !detail::is_geoid(pickup)) {
            malformed("pickup tract '" + pickup + "' is not an 11-digit GEOID");
            return true;
        }
        if (!dropoff.empty() && !detail::is_geoid(dropoff)) {
            malformed("dropoff tract '" + dropoff + "' is not an 11-digit GEOID");
            return true;
        }
        std::optional<std::int64_t> start_epoch, end_epoch;
        if (!start_raw.empty()) {
            start_epoch = detail::parse_timestamp(start_raw);
            if (!start_epoch) {
                malformed("unparseable timestamp '" + start_raw + "'");
                return true;
            }
        }
        if (!end_raw.empty()) {
            end_epoch = detail::parse_timestamp(end_raw);
            if (!end_epoch) {
                malformed("unparseable timestamp '" + end_raw + "'");
                return true;
            }
        }

        if (shared) {
            issue = RowIssue{DropReason::shared, ""};
            return true;
        }
        if (id.empty() || start_raw.empty() || end_raw.empty() || miles_raw.empty() ||
            seconds_raw.empty() || fare_raw.empty() || pickup.empty() || dropoff.empty()) {
            issue = RowIssue{DropReason::missing, ""};
            return true;
        }
        if (miles <= 0.0) {
            issue = RowIssue{DropReason::nonpositive_miles, ""};
            return true;
        }
        if (seconds <= 0) {
            issue = RowIssue{DropReason::nonpositive_seconds, ""};
            return true;
        }

        rec.trip_id = std::move(id);
        rec.start_time = std::move(start_raw);
        rec.end_time = std::move(end_raw);
        rec.start_epoch = *start_epoch;
        rec.end_epoch = *end_epoch;
        rec.seconds = seconds;
        rec.miles = miles;
        rec.pickup_tract = std::move(pickup);
        rec.dropoff_tract = std::move(dropoff);
        rec.fare = fare;
        rec.shared = false;
        record = std::move(rec);
        return true;
    }

    std::uint64_t rows_read() const { return rows_read_; }

  private:
    void resolve_header(const std::vector<std::string>& header, const ColumnMapping& mapping) {
        header_width_ = header.size();
        std::map<std::string, int> index;
        for (std::size_t i = 0; i < header.size(); ++i) {
            index[detail::lower(detail::trim(header[i]))] = static_cast<int>(i);
        }
        auto resolve = [&](const std::string& canonical) -> int {
            auto it = mapping.overrides.find(canonical);
            if (it != mapping.overrides.end()) {
                auto found = index.find(detail::lower(it->second));
                if (found == index.end()) {
                    throw InputError("ingest: mapped column '" + it->second + "' for '" +
                                     canonical + "' not present in header");
                }
                return found->second;
            }
            auto direct = index.find(canonical);
            if (direct != index.end()) return direct->second;
            auto def = chicago_default_headers().find(canonical);
            if (def != chicago_default_headers().end()) {
                auto found = index.find(detail::lower(def->second));
                if (found != index.end()) return found->second;
            }
            return -1;
        };
        auto require = [&](const std::string& canonical) {
            int idx = resolve(canonical);
            if (idx < 0) {
                throw InputError("ingest: cannot resolve required column '" + canonical +
                                 "' from header");
            }
            return idx;
        };
        col_id_ = require("trip_id");
        col_start_ = require("start_time");
        col_end_ = require("end_time");
        col_seconds_ = require("seconds");
        col_miles_ = require("miles");
        col_pickup_ = require("pickup_tract");
        col_dropoff_ = require("dropoff_tract");
        col_fare_ = require("fare");
        col_trip_total_ = resolve("trip_total");
        if (options_.fare_column == FareColumn::total && col_trip_total_ < 0) {
            throw InputError("ingest: cannot resolve required column 'trip_total' from header");
        }
        col_shared_ = resolve("shared");
        if (col_shared_ < 0 && options_.mode == TripMode::ridehailing) {
            throw InputError("ingest: cannot resolve required column 'shared' from header");
        }
    }

    int fare_col_index() const {
        return options_.fare_column == FareColumn::total ? col_trip_total_ : col_fare_;
    }

    std::string field(int idx) const {
        if (idx < 0 || static_cast<std::size_t>(idx) >= fields_.size()) return "";
        return fields_[static_cast<std::size_t>(idx)];
    }

    std::ifstream file_;
    CsvReader reader_;
    TripReadOptions options_;
    std::filesystem::path path_;
    std::vector<std::string> fields_;
    std::size_t header_width_ = 0;
    std::uint64_t rows_read_ = 0;
    std::uint64_t malformed_seen_ = 0;
    int col_id_ = -1, col_start_ = -1, col_end_ = -1, col_seconds_ = -1, col_miles_ = -1;
    int col_pickup_ = -1, col_dropoff_ = -1, col_fare_ = -1, col_trip_total_ = -1,
        col_shared_ = -1;
};

// Re-applies the load filters to an already canonical record; nullopt means
// the record passes. load output re-fed through this is unchanged.
inline std::optional<DropReason> filter_record(const TripRecord& rec) {
    if (rec.shared) return DropReason::shared;
    if (rec.trip_id.empty() || rec.start_time.empty() || rec.end_time.empty() ||
        rec.pickup_tract.empty() || rec.dropoff_tract.empty()) {
        return DropReason::missing;
    }
    if (rec.miles <= 0.0) return DropReason::nonpositive_miles;
    if (rec.seconds <= 0) return DropReason::nonpositive_seconds;
    return std::nullopt;
}

// Streams the file through `sink`; the canonical entry point for inputs too
// large to hold in memory.
inline IngestStats for_each_trip(const std::filesystem::path& path, const ColumnMapping& mapping,
                                 const TripReadOptions& options,
                                 const std::function<void(const TripRecord&)>& sink) {
    TripReader reader(path, mapping, options);
    IngestStats stats;
    std::optional<TripRecord> record;
    std::optional<RowIssue> issue;
    while (reader.next(record, issue)) {
        ++stats.rows_read;
        if (record) {
            ++stats.retained;
            sink(*record);
        } else if (issue) {
            stats.count(issue->reason);
        }
    }
    return stats;
}

inline std::pair<std::vector<TripRecord>, IngestStats> load_trips(
    const std::filesystem::path& path, const ColumnMapping& mapping = {},
    const TripReadOptions& options = {}) {
    std::vector<TripRecord> out;
    IngestStats stats =
        for_each_trip(path, mapping, options, [&](const TripRecord& r) { out.push_back(r); });
    return {std::move(out), stats};
}

inline const std::vector<std::string>& canonical_trip_header() {
    static const std::vector<std::string> header = {
        "trip_id", "start_time",   "end_time",      "seconds", "miles",
        "pickup_tract", "dropoff_tract", "fare",    "shared"};
    return header;
}

inline void write_trip_row(std::ostream& out, const TripRecord& r) {
    std::vector<std::string> row = {
        r.trip_id,
        r.start_time,
        r.end_time,
        std::to_string(r.seconds),
        format_double(r.miles),
        r.pickup_tract,
        r.dropoff_tract,
        format_double(r.fare),
        r.shared ? "true" : "false",
    };
    write_csv_row(out, row);
}

inline void write_trips_csv(std::ostream& out, std::span<const TripRecord> records) {
    write_csv_row(out, canonical_trip_header());
    for (const auto& r : records) write_trip_row(out, r);
}

// Tract files: geoid, area_m2, then repeated <attr>,<attr>_moe pairs.
inline std::vector<TractProfile> load_tracts(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw InputError("ingest: cannot open tracts file: " + path.string());
    CsvReader reader(in);
    std::vector<std::string> header;
    if (!reader.next(header)) throw InputError("ingest: empty tracts file: " + path.string());

    for (auto& h : header) h = detail::trim(h);
    if (header.size() < 2 || detail::lower(header[0]) != "geoid" ||
        detail::lower(header[1]) != "area_m2") {
        throw InputError("ingest: tracts header must start with geoid,area_m2");
    }
    std::vector<std::string> attr_names;
    for (std::size_t i = 2; i < header.size(); i += 2) {
        if (i + 1 >= header.size() || header[i + 1] != header[i] + "_moe") {
            throw InputError("ingest: tract column '" + header[i] +
                             "' is not followed by its '" + header[i] + "_moe' pair");
        }
        attr_names.push_back(header[i]);
    }

    std::vector<TractProfile> out;
    std::map<std::string, std::size_t> seen;
    std::vector<std::string> fields;
    while (reader.next(fields)) {
        std::size_t row = reader.record_number();
        if (fields.size() != header.size()) {
            throw InputError("ingest: tracts row " + std::to_string(row) + " has " +
                             std::to_string(fields.size()) + " columns, expected " +
                             std::to_string(header.size()));
        }
        TractProfile profile;
        profile.geoid = detail::trim(fields[0]);
        if (!detail::is_geoid(profile.geoid)) {
            throw InputError("ingest: tracts row " + std::to_string(row) + ": geoid '" +
                             profile.geoid + "' is not an 11-digit GEOID");
        }
        if (seen.count(profile.geoid)) {
            throw InputError("ingest: duplicate geoid " + profile.geoid + " at row " +
                             std::to_string(row));
        }
        if (!detail::parse_double(detail::trim(fields[1]), profile.area_m2) ||
            profile.area_m2 <= 0.0) {
            throw InputError("ingest: tracts row " + std::to_string(row) +
                             ": area_m2 must be a positive number");
        }
        for (std::size_t a = 0; a < attr_names.size(); ++a) {
            AttributeEstimate est;
            std::string vraw = detail::trim(fields[2 + 2 * a]);
            std::string mraw = detail::trim(fields[3 + 2 * a]);
            if (!detail::parse_double(vraw, est.value) || !detail::parse_double(mraw, est.moe)) {
                throw InputError("ingest: tracts row " + std::to_string(row) + ": attribute '" +
                                 attr_names[a] + "' has unparseable value/moe");
            }
            if (est.value < 0.0 || est.value > 1.0) {
                throw InputError("ingest: tracts row " + std::to_string(row) + ": attribute '" +
                                 attr_names[a] + "' value " + format_double(est.value) +
                                 " outside [0,1]");
            }
            if (est.moe < 0.0) {
                throw InputError("ingest: tracts row " + std::to_string(row) + ": attribute '" +
                                 attr_names[a] + "' has negative margin of error");
            }
            profile.attributes[attr_names[a]] = est;
        }
        seen[profile.geoid] = row;
        out.push_back(std::move(profile));
    }
    return out;
}

inline void write_tracts_csv(std::ostream& out, std::span<const TractProfile> tracts,
                             std::span<const std::string> attr_names) {
    std::vector<std::string> header = {"geoid", "area_m2"};
    for (const auto& a : attr_names) {
        header.push_back(a);
        header.push_back(a + "_moe");
    }
    write_csv_row(out, header);
    for (const auto& t : tracts) {
        std::vector<std::string> row = {t.geoid, format_double(t.area_m2)};
        for (const auto& a : attr_names) {
            auto it = t.attributes.find(a);
            if (it == t.attributes.end()) {
                throw InputError("ingest: tract " + t.geoid + " missing attribute '" + a + "'");
            }
            row.push_back(format_double(it->second.value));
            row.push_back(format_double(it->second.moe));
        }
        write_csv_row(out, row);
    }
}

}  // namespace tripaudit
