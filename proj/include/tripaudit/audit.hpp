#pragma once

#include <algorithm>
#include <cstdint>
#include <map>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "tripaudit/aggregate.hpp"
#include "tripaudit/common.hpp"
#include "tripaudit/effects.hpp"
#include "tripaudit/parallel.hpp"

namespace tripaudit {

inline std::vector<std::string> default_audit_attributes() {
    return {"pickup_density",   "dropoff_density", "pct_nonwhite",
            "pct_over_40",      "pct_hs_or_less",  "pct_below_poverty",
            "pct_noncitizen",   "pct_below_median_house"};
}

inline std::vector<std::string> default_audit_outcomes() {
    return {"fare_per_mile", "seconds_per_mile", "pickup_density", "dropoff_density"};
}

struct AuditConfig {
    std::vector<std::string> attributes = default_audit_attributes();
    std::vector<std::string> outcomes = default_audit_outcomes();
    std::vector<Endpoint> endpoints = {Endpoint::pickup, Endpoint::dropoff};
    std::vector<EstimateVariant> variants = {EstimateVariant::point};
    GridSpec grid;
    int min_group = 2;
    int iterations = 1000;
    std::uint64_t seed = 42;
    VarianceForm variance_form = VarianceForm::paper;
    PermutationScheme perm_scheme;
    bool allow_single_point = false;
    int threads = 0;  // runtime knob only; never serialized

    // Provenance carried into the report verbatim.
    std::map<std::string, std::string> input_digests;
    nlohmann::ordered_json row_accounting = nlohmann::ordered_json::object();

    void validate() const {
        if (attributes.empty() || outcomes.empty() || endpoints.empty() || variants.empty()) {
            throw ConfigError("audit: attributes, outcomes, endpoints, variants must be non-empty");
        }
        if (iterations < 1) throw ConfigError("audit: iterations must be >= 1");
        if (min_group < 1) throw ConfigError("audit: min_group must be >= 1");
    }

    SweepConfig sweep_config() const {
        return SweepConfig{grid, min_group, variance_form, allow_single_point};
    }
};

struct AuditCell {
    EstimateVariant variant = EstimateVariant::point;
    Endpoint endpoint = Endpoint::pickup;
    std::string attribute;
    std::string outcome;
    bool skipped = false;
    std::string skip_reason;
    double ces = 0.0;
    double p = 0.0;
    std::size_t n_tracts = 0;
    std::string curve_id;
    EffectCurve curve;  // stored so every cell is recomputable from its curve
};

inline std::string cell_id(EstimateVariant variant, Endpoint endpoint,
                           const std::string& attribute, const std::string& outcome) {
    return to_string(variant) + "/" + to_string(endpoint) + "/" + attribute + "/" + outcome;
}

struct AuditReport {
    AuditConfig config;
    std::vector<AuditCell> cells;
};

// Deterministic per-cell seed: a pure function of the run seed and the cell
// coordinates, so a cell computed in isolation matches the full run.
inline std::uint64_t cell_seed(std::uint64_t run_seed, const std::string& id) {
    return derive_seed(run_seed, fnv1a64(id));
}

// One attribute x outcome cell on one table: sweep, combine, test.
inline AuditCell audit_cell(const TractTable& table, const std::string& attribute,
                            const std::string& outcome, const AuditConfig& config) {
    AuditCell cell;
    cell.variant = table.variant;
    cell.endpoint = table.endpoint;
    cell.attribute = attribute;
    cell.outcome = outcome;
    cell.curve_id = cell_id(table.variant, table.endpoint, attribute, outcome);
    cell.n_tracts = table.size();

    if (attribute == outcome) {
        cell.skipped = true;
        cell.skip_reason = "attribute equals outcome";
        return cell;
    }

    std::span<const double> x = table.attribute(attribute);
    std::span<const double> y = table.outcome(outcome);
    SweepConfig sweep_cfg = config.sweep_config();
    std::uint64_t seed = cell_seed(config.seed, cell.curve_id);

    try {
        std::vector<double> grid = make_grid(x, config.grid);
        EffectCurve curve = sweep(x, y, grid, sweep_cfg);
        curve.attribute = attribute;
        curve.outcome = outcome;
        curve.endpoint = table.endpoint;
        curve.variant = table.variant;
        curve.perm_scheme = config.perm_scheme;
        curve.iterations = config.iterations;
        curve.seed = seed;
        curve.p_value = permutation_test(x, y, grid, sweep_cfg, config.perm_scheme,
                                         config.iterations, seed, /*threads=*/1);
        cell.ces = curve.ces;
        cell.p = *curve.p_value;
        cell.curve = std::move(curve);
    } catch (const DegeneracyError& e) {
        cell.skipped = true;
        cell.skip_reason = e.what();
    }
    return cell;
}

// Full study: every variant x endpoint x attribute x outcome combination
// over the supplied tables. Cells are independent and run on a work pool;
// the report order is always (variant, endpoint, attribute, outcome).
inline AuditReport run_audit(std::span<const TractTable> tables, const AuditConfig& config) {
    config.validate();

    auto find_table = [&](Endpoint e, EstimateVariant v) -> const TractTable& {
        for (const auto& t : tables) {
            if (t.endpoint == e && t.variant == v) return t;
        }
        throw ConfigError("audit: missing table for " + to_string(e) + "/" + to_string(v));
    };

    struct Task {
        const TractTable* table;
        std::string attribute;
        std::string outcome;
    };
    std::vector<Task> tasks;
    for (EstimateVariant v : config.variants) {
        for (Endpoint e : config.endpoints) {
            const TractTable& table = find_table(e, v);
            for (const auto& attribute : config.attributes) {
                table.attribute(attribute);  // unknown names fail before any work runs
                for (const auto& outcome : config.outcomes) {
                    table.outcome(outcome);
                    tasks.push_back(Task{&table, attribute, outcome});
                }
            }
        }
    }

    AuditReport report;
    report.config = config;
    report.cells.resize(tasks.size());
    parallel_for(
        tasks.size(),
        [&](std::size_t i) {
            report.cells[i] =
                audit_cell(*tasks[i].table, tasks[i].attribute, tasks[i].outcome, config);
        },
        config.threads);
    return report;
}

inline nlohmann::ordered_json config_to_json(const AuditConfig& config) {
    std::vector<std::string> endpoints, variants;
    for (Endpoint e : config.endpoints) endpoints.push_back(to_string(e));
    for (EstimateVariant v : config.variants) variants.push_back(to_string(v));
    nlohmann::ordered_json j;
    j["attributes"] = config.attributes;
    j["outcomes"] = config.outcomes;
    j["endpoints"] = endpoints;
    j["variants"] = variants;
    j["grid"] = config.grid.to_json();
    j["min_group"] = config.min_group;
    j["iterations"] = config.iterations;
    j["seed"] = config.seed;
    j["variance_form"] = to_string(config.variance_form);
    j["perm_scheme"] = config.perm_scheme.to_string();
    j["p_comparison"] = "absolute-magnitude";  // p counts |ces_i| > |ces_obs|
    j["allow_single_point"] = config.allow_single_point;
    return j;
}

inline AuditConfig config_from_json(const nlohmann::json& j) {
    AuditConfig c;
    c.attributes = j.at("attributes").get<std::vector<std::string>>();
    c.outcomes = j.at("outcomes").get<std::vector<std::string>>();
    c.endpoints.clear();
    for (const auto& e : j.at("endpoints")) c.endpoints.push_back(parse_endpoint(e.get<std::string>()));
    c.variants.clear();
    for (const auto& v : j.at("variants")) c.variants.push_back(parse_variant(v.get<std::string>()));
    c.grid = GridSpec::from_json(j.at("grid"));
    c.min_group = j.at("min_group").get<int>();
    c.iterations = j.at("iterations").get<int>();
    c.seed = j.at("seed").get<std::uint64_t>();
    c.variance_form = parse_variance_form(j.at("variance_form").get<std::string>());
    c.perm_scheme = PermutationScheme::parse(j.at("perm_scheme").get<std::string>());
    c.allow_single_point = j.value("allow_single_point", false);
    return c;
}

inline nlohmann::ordered_json report_to_json(const AuditReport& report) {
    nlohmann::ordered_json j;
    j["metadata"] = {{"config", config_to_json(report.config)},
                     {"inputs", report.config.input_digests},
                     {"rows", report.config.row_accounting}};

    nlohmann::ordered_json cells = nlohmann::ordered_json::array();
    nlohmann::ordered_json curves = nlohmann::ordered_json::object();
    nlohmann::ordered_json raw_series = nlohmann::ordered_json::object();
    for (const auto& cell : report.cells) {
        nlohmann::ordered_json cj;
        cj["variant"] = to_string(cell.variant);
        cj["endpoint"] = to_string(cell.endpoint);
        cj["attribute"] = cell.attribute;
        cj["outcome"] = cell.outcome;
        if (cell.skipped) {
            cj["skipped"] = true;
            cj["reason"] = cell.skip_reason;
        } else {
            cj["ces"] = cell.ces;
            cj["p"] = cell.p;
            cj["n_tracts"] = cell.n_tracts;
            cj["curve"] = cell.curve_id;
            curves[cell.curve_id] = curve_to_json(cell.curve);
            nlohmann::ordered_json series = nlohmann::ordered_json::array();
            for (const auto& p : cell.curve.points) {
                series.push_back(
                    {{"t", p.t}, {"mean_below", p.mean_below}, {"mean_above", p.mean_above}});
            }
            raw_series[cell.curve_id] = std::move(series);
        }
        cells.push_back(std::move(cj));
    }
    j["cells"] = std::move(cells);
    j["curves"] = std::move(curves);
    j["raw_series"] = std::move(raw_series);
    return j;
}

inline AuditReport report_from_json(const nlohmann::json& j) {
    AuditReport report;
    const auto& meta = j.at("metadata");
    report.config = config_from_json(meta.at("config"));
    if (meta.contains("inputs")) {
        for (auto& [k, v] : meta.at("inputs").items()) {
            report.config.input_digests[k] = v.get<std::string>();
        }
    }
    if (meta.contains("rows")) report.config.row_accounting = meta.at("rows");

    const auto& curves = j.at("curves");
    const auto& raw = j.contains("raw_series") ? j.at("raw_series") : nlohmann::json::object();
    for (const auto& cj : j.at("cells")) {
        AuditCell cell;
        cell.variant = parse_variant(cj.at("variant").get<std::string>());
        cell.endpoint = parse_endpoint(cj.at("endpoint").get<std::string>());
        cell.attribute = cj.at("attribute").get<std::string>();
        cell.outcome = cj.at("outcome").get<std::string>();
        cell.curve_id = cell_id(cell.variant, cell.endpoint, cell.attribute, cell.outcome);
        if (cj.value("skipped", false)) {
            cell.skipped = true;
            cell.skip_reason = cj.value("reason", "");
        } else {
            cell.ces = cj.at("ces").get<double>();
            cell.p = cj.at("p").get<double>();
            cell.n_tracts = cj.at("n_tracts").get<std::size_t>();
            cell.curve = curve_from_json(curves.at(cell.curve_id));
            if (raw.contains(cell.curve_id)) {
                const auto& series = raw.at(cell.curve_id);
                for (std::size_t i = 0; i < cell.curve.points.size() && i < series.size(); ++i) {
                    cell.curve.points[i].mean_below = series[i].at("mean_below").get<double>();
                    cell.curve.points[i].mean_above = series[i].at("mean_above").get<double>();
                }
            }
        }
        report.cells.push_back(std::move(cell));
    }
    return report;
}

inline std::string format_p(double p, int iterations) {
    if (p == 0.0 && iterations > 0) {
        return "<" + format_double(1.0 / iterations);
    }
    return format_fixed(p, 6);
}

// Delimited-text rendering shaped like the study's summary tables: one block
// per variant x outcome, rows per attribute, pickup/dropoff columns.
inline void render_table(const AuditReport& report, std::ostream& out) {
    auto find_cell = [&](EstimateVariant v, Endpoint e, const std::string& a,
                         const std::string& o) -> const AuditCell* {
        for (const auto& c : report.cells) {
            if (c.variant == v && c.endpoint == e && c.attribute == a && c.outcome == o) {
                return &c;
            }
        }
        return nullptr;
    };

    bool has_pickup = std::find(report.config.endpoints.begin(), report.config.endpoints.end(),
                                Endpoint::pickup) != report.config.endpoints.end();
    bool has_dropoff = std::find(report.config.endpoints.begin(), report.config.endpoints.end(),
                                 Endpoint::dropoff) != report.config.endpoints.end();

    for (EstimateVariant v : report.config.variants) {
        for (const auto& outcome : report.config.outcomes) {
            out << "# outcome=" << outcome << " variant=" << to_string(v) << "\n";
            out << "attribute";
            if (has_pickup) out << "\tpickup_ces\tpickup_p";
            if (has_dropoff) out << "\tdropoff_ces\tdropoff_p";
            out << "\n";
            for (const auto& attribute : report.config.attributes) {
                out << attribute;
                for (Endpoint e : {Endpoint::pickup, Endpoint::dropoff}) {
                    if ((e == Endpoint::pickup && !has_pickup) ||
                        (e == Endpoint::dropoff && !has_dropoff)) {
                        continue;
                    }
                    const AuditCell* cell = find_cell(v, e, attribute, outcome);
                    if (!cell || cell->skipped) {
                        out << "\t-\t-";
                    } else {
                        out << "\t" << format_fixed(cell->ces, 6) << "\t"
                            << format_p(cell->p, report.config.iterations);
                    }
                }
                out << "\n";
            }
            out << "\n";
        }
    }
}

struct ComparisonRow {
    std::string id;
    bool skipped_a = false, skipped_b = false;
    double ces_a = 0.0, ces_b = 0.0;
    double p_a = 0.0, p_b = 0.0;
    double delta_ces = 0.0;  // b - a
    double delta_p = 0.0;
};

// Cell-by-cell comparison of two reports over the same grid of cells.
inline std::vector<ComparisonRow> compare_modes(const AuditReport& a, const AuditReport& b) {
    if (a.cells.size() != b.cells.size()) {
        throw ConfigError("compare: reports have different cell counts");
    }
    std::vector<ComparisonRow> rows;
    for (std::size_t i = 0; i < a.cells.size(); ++i) {
        const AuditCell& ca = a.cells[i];
        const AuditCell& cb = b.cells[i];
        if (ca.curve_id != cb.curve_id) {
            throw ConfigError("compare: mismatched grids (" + ca.curve_id + " vs " +
                              cb.curve_id + ")");
        }
        ComparisonRow row;
        row.id = ca.curve_id;
        row.skipped_a = ca.skipped;
        row.skipped_b = cb.skipped;
        if (!ca.skipped) {
            row.ces_a = ca.ces;
            row.p_a = ca.p;
        }
        if (!cb.skipped) {
            row.ces_b = cb.ces;
            row.p_b = cb.p;
        }
        if (!ca.skipped && !cb.skipped) {
            row.delta_ces = cb.ces - ca.ces;
            row.delta_p = cb.p - ca.p;
        }
        rows.push_back(std::move(row));
    }
    return rows;
}

inline void render_comparison(std::span<const ComparisonRow> rows, std::ostream& out) {
    out << "cell\tces_a\tp_a\tces_b\tp_b\tdelta_ces\tdelta_p\n";
    for (const auto& r : rows) {
        out << r.id << "\t";
        if (r.skipped_a) {
            out << "-\t-\t";
        } else {
            out << format_fixed(r.ces_a, 6) << "\t" << format_fixed(r.p_a, 6) << "\t";
        }
        if (r.skipped_b) {
            out << "-\t-\t";
        } else {
            out << format_fixed(r.ces_b, 6) << "\t" << format_fixed(r.p_b, 6) << "\t";
        }
        if (r.skipped_a || r.skipped_b) {
            out << "-\t-\n";
        } else {
            out << format_fixed(r.delta_ces, 6) << "\t" << format_fixed(r.delta_p, 6) << "\n";
        }
    }
}

}  // namespace tripaudit
