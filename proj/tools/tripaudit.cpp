// tripaudit: measure disparate impact of trip pricing across census tracts.
//
// Pipeline subcommands: synth -> ingest -> filter-outliers -> aggregate ->
// audit -> chart / compare. Flat files in, flat files out; all randomness
// hangs off --seed.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "tripaudit/aggregate.hpp"
#include "tripaudit/audit.hpp"
#include "tripaudit/chart.hpp"
#include "tripaudit/common.hpp"
#include "tripaudit/effects.hpp"
#include "tripaudit/gmm.hpp"
#include "tripaudit/ingest.hpp"
#include "tripaudit/parallel.hpp"
#include "tripaudit/synth.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using nlohmann::ordered_json;

namespace {

json g_config;  // from --config; flags always win

// Pull --config out of argv before CLI11 sees anything, so config values can
// act as option defaults.
void preload_config(int argc, char** argv) {
    for (int i = 1; i < argc - 1; ++i) {
        std::string arg = argv[i];
        if (arg == "--config") {
            std::ifstream in(argv[i + 1]);
            if (!in) {
                throw tripaudit::InputError(std::string("cannot open config file: ") +
                                            argv[i + 1]);
            }
            try {
                in >> g_config;
            } catch (const json::exception& e) {
                throw tripaudit::InputError("config file is not valid JSON: " +
                                            std::string(e.what()));
            }
            if (!g_config.is_object()) {
                throw tripaudit::InputError("config file must hold a JSON object");
            }
            return;
        }
    }
}

template <typename T>
T cfg(const std::string& subcommand, const std::string& key, T fallback) {
    if (g_config.contains(subcommand) && g_config[subcommand].is_object() &&
        g_config[subcommand].contains(key)) {
        return g_config[subcommand][key].get<T>();
    }
    if (g_config.contains(key)) return g_config[key].get<T>();
    return fallback;
}

// Inputs resolve against TRIPAUDIT_DATA_DIR when not found as given.
fs::path resolve_input(const std::string& p) {
    fs::path path(p);
    if (fs::exists(path) || path.is_absolute()) return path;
    const char* dir = std::getenv("TRIPAUDIT_DATA_DIR");
    if (dir && *dir) {
        fs::path alt = fs::path(dir) / path;
        if (fs::exists(alt)) return alt;
    }
    return path;
}

std::vector<std::string> split_list(const std::string& s) {
    std::vector<std::string> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ',')) {
        if (!item.empty()) out.push_back(item);
    }
    return out;
}

struct OutStream {
    // "-" means stdout.
    explicit OutStream(const std::string& path) {
        if (path == "-") {
            out = &std::cout;
        } else {
            file.open(path);
            if (!file) throw tripaudit::InputError("cannot write output file: " + path);
            out = &file;
        }
    }
    std::ostream& stream() { return *out; }
    std::ofstream file;
    std::ostream* out = nullptr;
};

struct GlobalArgs {
    std::uint64_t seed = 42;
    bool seed_given = false;
    int threads = 0;
    std::string config_path;  // consumed by preload_config; declared so CLI11 accepts it
};

void add_global_options(CLI::App* cmd, GlobalArgs& g) {
    g.seed = cfg<std::uint64_t>(cmd->get_name(), "seed", 42);
    g.threads = cfg<int>(cmd->get_name(), "threads", 0);
    auto* seed_opt = cmd->add_option("--seed", g.seed, "RNG seed (printed at startup)");
    cmd->add_option("--threads", g.threads, "max worker threads (0 = auto)");
    cmd->add_option("--config", g.config_path, "JSON config file; explicit flags win");
    cmd->parse_complete_callback([&g, seed_opt]() {
        g.seed_given = seed_opt->count() > 0;
        if (g.threads > 0) tripaudit::thread_limit() = g.threads;
        std::cerr << "seed: " << g.seed << "\n";
    });
}

struct IngestArgs {
    std::string trips, mapping, out = "-", stats;
    std::string mode = "ridehailing";
    std::string fare_column = "fare";
    std::uint64_t malformed_tolerance = 0;
};

tripaudit::TripReadOptions make_read_options(const IngestArgs& a) {
    tripaudit::TripReadOptions opts;
    opts.mode = a.mode == "taxi" ? tripaudit::TripMode::taxi : tripaudit::TripMode::ridehailing;
    opts.fare_column = a.fare_column == "total" ? tripaudit::FareColumn::total
                                                : tripaudit::FareColumn::base;
    opts.malformed_tolerance = a.malformed_tolerance;
    return opts;
}

void add_ingest_options(CLI::App* cmd, IngestArgs& a) {
    cmd->add_option("--trips", a.trips, "trips file (delimited text)")->required();
    cmd->add_option("--mapping", a.mapping, "JSON column-name mapping file");
    cmd->add_option("--mode", a.mode, "dataset flavor")
        ->check(CLI::IsMember({"ridehailing", "taxi"}));
    cmd->add_option("--fare-column", a.fare_column,
                    "which fare to carry: base fare or trip total")
        ->check(CLI::IsMember({"fare", "total"}));
    cmd->add_option("--malformed-tolerance", a.malformed_tolerance,
                    "malformed rows to drop before failing hard");
}

tripaudit::ColumnMapping load_mapping(const std::string& path) {
    if (path.empty()) return {};
    return tripaudit::ColumnMapping::load(resolve_input(path));
}

int cmd_ingest(const IngestArgs& a) {
    OutStream out(a.out);
    tripaudit::write_csv_row(out.stream(), tripaudit::canonical_trip_header());
    tripaudit::IngestStats stats = tripaudit::for_each_trip(
        resolve_input(a.trips), load_mapping(a.mapping), make_read_options(a),
        [&](const tripaudit::TripRecord& r) { tripaudit::write_trip_row(out.stream(), r); });
    ordered_json sj = stats.to_json();
    if (!a.stats.empty()) {
        std::ofstream f(a.stats);
        if (!f) throw tripaudit::InputError("cannot write stats file: " + a.stats);
        f << sj.dump(2) << "\n";
    } else {
        (a.out == "-" ? std::cerr : std::cout) << sj.dump(2) << "\n";
    }
    return 0;
}

int cmd_filter_outliers(const IngestArgs& ingest_args, const std::string& column, int k,
                        double tol, int max_iter, const std::string& out_path,
                        const std::string& model_path, const GlobalArgs& g) {
    auto feature = [&](const tripaudit::TripRecord& r) {
        if (column == "fare") return r.fare;
        if (column == "seconds_per_mile") return r.seconds_per_mile();
        return r.fare_per_mile();
    };

    fs::path trips = resolve_input(ingest_args.trips);
    tripaudit::ColumnMapping mapping = load_mapping(ingest_args.mapping);
    tripaudit::TripReadOptions opts = make_read_options(ingest_args);

    std::vector<double> values;
    tripaudit::for_each_trip(trips, mapping, opts, [&](const tripaudit::TripRecord& r) {
        values.push_back(feature(r));
    });

    tripaudit::GmmOptions gmm_opts;
    gmm_opts.tol = tol;
    gmm_opts.max_iter = max_iter;
    gmm_opts.seed = g.seed;
    tripaudit::GmmModel model = tripaudit::fit_gmm(values, k, gmm_opts);
    tripaudit::AnomalyFlags flags = tripaudit::flag_anomalies(model, values);
    if (flags.warning) std::cerr << "warning: " << *flags.warning << "\n";

    OutStream out(out_path);
    tripaudit::write_csv_row(out.stream(), tripaudit::canonical_trip_header());
    std::size_t index = 0;
    tripaudit::for_each_trip(trips, mapping, opts, [&](const tripaudit::TripRecord& r) {
        if (!flags.mask[index++]) tripaudit::write_trip_row(out.stream(), r);
    });

    ordered_json mj = model.to_json();
    mj["feature"] = column;
    mj["decisions"] = {{"initialization", "means at 25th/99th percentiles, equal weights, "
                                          "population variance"},
                       {"anomalous_component", "larger mean"},
                       {"convergence", "mean log-likelihood delta < tol"}};
    mj["rows_examined"] = values.size();
    mj["rows_removed"] = flags.flagged;
    mj["rows_retained"] = values.size() - flags.flagged;
    if (flags.warning) mj["warning"] = *flags.warning;
    if (!model_path.empty()) {
        std::ofstream f(model_path);
        if (!f) throw tripaudit::InputError("cannot write model file: " + model_path);
        f << mj.dump(2) << "\n";
    } else {
        (out_path == "-" ? std::cerr : std::cout) << mj.dump(2) << "\n";
    }
    std::cerr << "removed " << flags.flagged << " of " << values.size() << " rows\n";
    return 0;
}

int cmd_aggregate(const IngestArgs& ingest_args, const std::string& tracts_path,
                  const std::string& endpoint_name, const std::string& out_path) {
    std::vector<tripaudit::TractProfile> tracts =
        tripaudit::load_tracts(resolve_input(tracts_path));
    tripaudit::TractAccumulator acc(tracts);
    tripaudit::IngestStats stats =
        tripaudit::for_each_trip(resolve_input(ingest_args.trips),
                                 load_mapping(ingest_args.mapping), make_read_options(ingest_args),
                                 [&](const tripaudit::TripRecord& r) { acc.add(r); });

    tripaudit::Endpoint endpoint = tripaudit::parse_endpoint(endpoint_name);
    std::vector<tripaudit::TractAggregate> aggregates = acc.finish(endpoint);

    OutStream out(out_path);
    out.stream() << "geoid\tn_trips\tmean_fare_per_mile\tmean_seconds_per_mile\t"
                    "pickup_density\tdropoff_density\n";
    for (const auto& agg : aggregates) {
        std::int64_t n = endpoint == tripaudit::Endpoint::pickup ? agg.n_pickups : agg.n_dropoffs;
        out.stream() << agg.geoid << "\t" << n << "\t";
        if (n > 0) {
            out.stream() << tripaudit::format_double(agg.mean_fare_per_mile) << "\t"
                         << tripaudit::format_double(agg.mean_seconds_per_mile);
        } else {
            out.stream() << "-\t-";
        }
        out.stream() << "\t" << tripaudit::format_double(agg.pickup_density) << "\t"
                     << tripaudit::format_double(agg.dropoff_density) << "\n";
    }

    ordered_json meta;
    meta["ingest"] = stats.to_json();
    meta["unknown_pickup_geoid"] = acc.stats().unknown_pickup_geoid;
    meta["unknown_dropoff_geoid"] = acc.stats().unknown_dropoff_geoid;
    std::cerr << meta.dump(2) << "\n";
    return 0;
}

struct AuditArgs {
    IngestArgs ingest;
    std::string tracts;
    std::string out;
    std::string table;
    std::string attributes, outcomes, endpoints = "pickup,dropoff", variants = "point";
    std::string grid = "percentile:99";
    int min_group = 2;
    int iterations = 1000;
    std::string variance_form = "paper";
    std::string perm_scheme = "permute";
    bool allow_single_point = false;
};

int cmd_audit(const AuditArgs& a, const GlobalArgs& g) {
    fs::path trips_path = resolve_input(a.ingest.trips);
    fs::path tracts_path = resolve_input(a.tracts);

    std::vector<tripaudit::TractProfile> tracts = tripaudit::load_tracts(tracts_path);
    tripaudit::TractAccumulator acc(tracts);
    tripaudit::IngestStats stats = tripaudit::for_each_trip(
        trips_path, load_mapping(a.ingest.mapping), make_read_options(a.ingest),
        [&](const tripaudit::TripRecord& r) { acc.add(r); });

    tripaudit::AuditConfig config;
    if (!a.attributes.empty()) config.attributes = split_list(a.attributes);
    if (!a.outcomes.empty()) config.outcomes = split_list(a.outcomes);
    config.endpoints.clear();
    for (const auto& e : split_list(a.endpoints)) {
        config.endpoints.push_back(tripaudit::parse_endpoint(e));
    }
    config.variants.clear();
    for (const auto& v : split_list(a.variants)) {
        config.variants.push_back(tripaudit::parse_variant(v));
    }
    config.grid = tripaudit::GridSpec::parse(a.grid);
    config.min_group = a.min_group;
    config.iterations = a.iterations;
    config.seed = g.seed;
    config.variance_form = tripaudit::parse_variance_form(a.variance_form);
    config.perm_scheme = tripaudit::PermutationScheme::parse(a.perm_scheme);
    config.allow_single_point = a.allow_single_point;
    config.threads = g.threads;
    config.input_digests["trips"] = tripaudit::file_digest(trips_path);
    config.input_digests["tracts"] = tripaudit::file_digest(tracts_path);
    ordered_json rows;
    rows["ingest"] = stats.to_json();
    rows["unknown_pickup_geoid"] = acc.stats().unknown_pickup_geoid;
    rows["unknown_dropoff_geoid"] = acc.stats().unknown_dropoff_geoid;
    config.row_accounting = rows;

    std::vector<tripaudit::TractTable> tables;
    for (tripaudit::EstimateVariant v : config.variants) {
        for (tripaudit::Endpoint e : config.endpoints) {
            tables.push_back(tripaudit::build_table(acc.finish(e), tracts, e, v));
        }
    }
    tripaudit::AuditReport report = tripaudit::run_audit(tables, config);

    OutStream out(a.out.empty() ? "-" : a.out);
    out.stream() << tripaudit::report_to_json(report).dump(2) << "\n";
    if (!a.table.empty()) {
        OutStream tout(a.table);
        tripaudit::render_table(report, tout.stream());
    }
    return 0;
}

int cmd_chart(const std::string& report_path, const std::string& cell, const std::string& out,
              const std::string& svg, bool raw) {
    std::ifstream in(resolve_input(report_path));
    if (!in) throw tripaudit::InputError("cannot open report: " + report_path);
    json rj;
    try {
        in >> rj;
    } catch (const json::exception& e) {
        throw tripaudit::InputError("report is not valid JSON: " + std::string(e.what()));
    }
    tripaudit::AuditReport report = tripaudit::report_from_json(rj);

    const tripaudit::AuditCell* found = nullptr;
    for (const auto& c : report.cells) {
        if (c.curve_id == cell) {
            found = &c;
            break;
        }
    }
    if (!found) throw tripaudit::ConfigError("chart: no cell '" + cell + "' in report");
    if (found->skipped) {
        throw tripaudit::DegeneracyError("chart: cell '" + cell +
                                         "' was skipped: " + found->skip_reason);
    }

    tripaudit::ChartSeries series = tripaudit::make_series(found->curve, raw);
    OutStream os(out);
    tripaudit::write_series_csv(os.stream(), series);
    if (!svg.empty()) {
        std::ofstream sf(svg);
        if (!sf) throw tripaudit::InputError("cannot write svg: " + svg);
        tripaudit::write_series_svg(sf, series);
    }
    return 0;
}

int cmd_synth(const std::string& spec_path, const std::string& out_dir, const GlobalArgs& g) {
    tripaudit::SynthSpec spec;
    if (!spec_path.empty()) {
        std::ifstream in(resolve_input(spec_path));
        if (!in) throw tripaudit::InputError("cannot open synth spec: " + spec_path);
        json sj;
        try {
            in >> sj;
        } catch (const json::exception& e) {
            throw tripaudit::InputError("synth spec is not valid JSON: " + std::string(e.what()));
        }
        spec = tripaudit::SynthSpec::from_json(sj);
    }
    if (g.seed_given || spec_path.empty()) spec.seed = g.seed;
    tripaudit::SynthOutput result = tripaudit::generate(spec, out_dir);
    std::cerr << "wrote " << result.trips_path.string() << ", " << result.tracts_path.string()
              << ", " << result.truth_path.string() << "\n";
    return 0;
}

int cmd_compare(const std::string& a_path, const std::string& b_path, const std::string& out) {
    auto load = [](const std::string& p) {
        std::ifstream in(resolve_input(p));
        if (!in) throw tripaudit::InputError("cannot open report: " + p);
        json j;
        try {
            in >> j;
        } catch (const json::exception& e) {
            throw tripaudit::InputError("report is not valid JSON: " + std::string(e.what()));
        }
        return tripaudit::report_from_json(j);
    };
    tripaudit::AuditReport a = load(a_path);
    tripaudit::AuditReport b = load(b_path);
    std::vector<tripaudit::ComparisonRow> rows = tripaudit::compare_modes(a, b);
    OutStream os(out);
    tripaudit::render_comparison(rows, os.stream());
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    try {
        preload_config(argc, argv);

        CLI::App app{"tripaudit: disparate-impact auditing for trip pricing data"};
        app.require_subcommand(1);

        GlobalArgs g_ingest_args, g_filter, g_aggregate, g_audit, g_chart, g_synth, g_compare;

        auto* ingest_cmd = app.add_subcommand("ingest", "parse, validate, and filter a trips file");
        IngestArgs ingest_args;
        add_ingest_options(ingest_cmd, ingest_args);
        ingest_cmd->add_option("--out", ingest_args.out, "filtered trips output ('-' = stdout)");
        ingest_cmd->add_option("--stats", ingest_args.stats, "write ingest stats JSON here");
        add_global_options(ingest_cmd, g_ingest_args);

        auto* filter_cmd =
            app.add_subcommand("filter-outliers", "drop anomalously priced trips via a 2-component "
                                                  "Gaussian mixture");
        IngestArgs filter_ingest;
        add_ingest_options(filter_cmd, filter_ingest);
        std::string filter_column = cfg<std::string>("filter-outliers", "column", "fare_per_mile");
        int filter_k = cfg<int>("filter-outliers", "k", 2);
        double filter_tol = cfg<double>("filter-outliers", "tol", 1e-6);
        int filter_max_iter = cfg<int>("filter-outliers", "max-iter", 200);
        std::string filter_out = "-", filter_model;
        filter_cmd->add_option("--column", filter_column, "feature to cluster")
            ->check(CLI::IsMember({"fare_per_mile", "fare", "seconds_per_mile"}));
        filter_cmd->add_option("--k", filter_k, "mixture components");
        filter_cmd->add_option("--tol", filter_tol, "EM convergence tolerance (mean ll)");
        filter_cmd->add_option("--max-iter", filter_max_iter, "EM iteration cap");
        filter_cmd->add_option("--out", filter_out, "filtered trips output ('-' = stdout)");
        filter_cmd->add_option("--model", filter_model, "write fitted model JSON here");
        add_global_options(filter_cmd, g_filter);

        auto* agg_cmd =
            app.add_subcommand("aggregate", "reduce trips to per-tract outcome statistics");
        IngestArgs agg_ingest;
        add_ingest_options(agg_cmd, agg_ingest);
        std::string agg_tracts, agg_endpoint = "pickup", agg_out = "-";
        agg_cmd->add_option("--tracts", agg_tracts, "tract profiles file")->required();
        agg_cmd->add_option("--endpoint", agg_endpoint, "which trip endpoint keys the means")
            ->check(CLI::IsMember({"pickup", "dropoff"}));
        agg_cmd->add_option("--out", agg_out, "per-tract table output ('-' = stdout)");
        add_global_options(agg_cmd, g_aggregate);

        auto* audit_cmd = app.add_subcommand(
            "audit", "run the full effect-size study and emit the report");
        AuditArgs audit_args;
        audit_args.endpoints = cfg<std::string>("audit", "endpoints", "pickup,dropoff");
        audit_args.variants = cfg<std::string>("audit", "variants", "point");
        audit_args.grid = cfg<std::string>("audit", "grid", "percentile:99");
        audit_args.min_group = cfg<int>("audit", "min-group", 2);
        audit_args.iterations = cfg<int>("audit", "iterations", 1000);
        audit_args.variance_form = cfg<std::string>("audit", "variance-form", "paper");
        audit_args.perm_scheme = cfg<std::string>("audit", "perm-scheme", "permute");
        add_ingest_options(audit_cmd, audit_args.ingest);
        audit_cmd->add_option("--tracts", audit_args.tracts, "tract profiles file")->required();
        audit_cmd->add_option("--out", audit_args.out, "report JSON path ('-' = stdout)");
        audit_cmd->add_option("--table", audit_args.table, "also render the summary table here");
        audit_cmd->add_option("--attributes", audit_args.attributes,
                              "comma list (default: demographic set + densities)");
        audit_cmd->add_option("--outcomes", audit_args.outcomes,
                              "comma list (default: fare/seconds per mile + densities)");
        audit_cmd->add_option("--endpoints", audit_args.endpoints, "comma list");
        audit_cmd->add_option("--variants", audit_args.variants,
                              "comma list from {min,point,max}");
        audit_cmd->add_option("--grid", audit_args.grid,
                              "percentile:N | distinct | explicit t1,t2,...");
        audit_cmd->add_option("--min-group", audit_args.min_group,
                              "smallest group size kept in a sweep");
        audit_cmd->add_option("--iterations", audit_args.iterations, "permutation iterations");
        audit_cmd->add_option("--variance-form", audit_args.variance_form,
                              "within-threshold variance form")
            ->check(CLI::IsMember({"paper", "squared"}));
        audit_cmd->add_option("--perm-scheme", audit_args.perm_scheme,
                              "permute | subset:<fraction>");
        audit_cmd->add_flag("--allow-single-point", audit_args.allow_single_point,
                            "permit single-threshold curves");
        add_global_options(audit_cmd, g_audit);

        auto* chart_cmd =
            app.add_subcommand("chart", "emit chart series for one cell of a report");
        std::string chart_report, chart_cell, chart_out = "-", chart_svg;
        bool chart_raw = false;
        chart_cmd->add_option("--report", chart_report, "audit report JSON")->required();
        chart_cmd
            ->add_option("--cell", chart_cell, "variant/endpoint/attribute/outcome identifier")
            ->required();
        chart_cmd->add_option("--out", chart_out, "series output ('-' = stdout)");
        chart_cmd->add_option("--svg", chart_svg, "also render a static SVG line chart here");
        chart_cmd->add_flag("--raw", chart_raw, "include raw below/above group means");
        add_global_options(chart_cmd, g_chart);

        auto* synth_cmd =
            app.add_subcommand("synth", "generate a synthetic city with known injected bias");
        std::string synth_spec, synth_out;
        synth_cmd->add_option("--spec", synth_spec, "synth spec JSON");
        synth_cmd->add_option("--out", synth_out, "output directory")->required();
        add_global_options(synth_cmd, g_synth);

        auto* compare_cmd =
            app.add_subcommand("compare", "side-by-side comparison of two audit reports");
        std::string cmp_a, cmp_b, cmp_out = "-";
        compare_cmd->add_option("--a", cmp_a, "first report JSON")->required();
        compare_cmd->add_option("--b", cmp_b, "second report JSON")->required();
        compare_cmd->add_option("--out", cmp_out, "comparison table output ('-' = stdout)");
        add_global_options(compare_cmd, g_compare);

        try {
            app.parse(argc, argv);
        } catch (const CLI::CallForHelp& e) {
            return app.exit(e);
        } catch (const CLI::CallForAllHelp& e) {
            return app.exit(e);
        } catch (const CLI::ParseError& e) {
            std::cerr << "error: usage: " << e.what() << "\n";
            return 2;
        }

        if (ingest_cmd->parsed()) return cmd_ingest(ingest_args);
        if (filter_cmd->parsed()) {
            return cmd_filter_outliers(filter_ingest, filter_column, filter_k, filter_tol,
                                       filter_max_iter, filter_out, filter_model, g_filter);
        }
        if (agg_cmd->parsed()) return cmd_aggregate(agg_ingest, agg_tracts, agg_endpoint, agg_out);
        if (audit_cmd->parsed()) return cmd_audit(audit_args, g_audit);
        if (chart_cmd->parsed()) {
            return cmd_chart(chart_report, chart_cell, chart_out, chart_svg, chart_raw);
        }
        if (synth_cmd->parsed()) return cmd_synth(synth_spec, synth_out, g_synth);
        if (compare_cmd->parsed()) return cmd_compare(cmp_a, cmp_b, cmp_out);
        return 2;
    } catch (const tripaudit::ConfigError& e) {
        std::cerr << "error: usage: " << e.what() << "\n";
        return 2;
    } catch (const tripaudit::InputError& e) {
        std::cerr << "error: input: " << e.what() << "\n";
        return 3;
    } catch (const tripaudit::DegeneracyError& e) {
        std::cerr << "error: degeneracy: " << e.what() << "\n";
        return 4;
    } catch (const std::exception& e) {
        std::cerr << "error: internal: " << e.what() << "\n";
        return 5;
    }
}
