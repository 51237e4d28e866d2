#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "tripaudit/common.hpp"
#include "tripaudit/parallel.hpp"
#include "tripaudit/rng.hpp"

namespace tripaudit {

// One threshold of a sweep: Cohen's d for the x < t versus x >= t split.
struct EffectPoint {
    double t = 0.0;
    double d = 0.0;
    std::size_t n_below = 0;
    std::size_t n_above = 0;
    double var_t = 0.0;
    double w = 0.0;  // filled once the sweep's between-threshold variance is known
    // Raw group means, kept for the raw-difference chart series; not part of
    // the curve's serialized schema.
    double mean_below = 0.0;
    double mean_above = 0.0;
};

// var_t's printed form is linear in d; the conventional meta-analysis form
// squares it. Both are available, selected per run.
enum class VarianceForm { paper, squared };

inline std::string to_string(VarianceForm f) {
    return f == VarianceForm::paper ? "paper" : "squared";
}
inline VarianceForm parse_variance_form(std::string_view s) {
    if (s == "paper") return VarianceForm::paper;
    if (s == "squared") return VarianceForm::squared;
    throw ConfigError("unknown variance form '" + std::string(s) +
                      "' (expected paper or squared)");
}

struct GridSpec {
    enum class Kind { percentile, distinct_values, explicit_list };
    Kind kind = Kind::percentile;
    int count = 99;               // percentile mode
    std::vector<double> values;   // explicit_list mode

    static GridSpec percentiles(int count = 99) { return {Kind::percentile, count, {}}; }
    static GridSpec distinct() { return {Kind::distinct_values, 0, {}}; }
    static GridSpec explicit_values(std::vector<double> v) {
        return {Kind::explicit_list, 0, std::move(v)};
    }

    // "percentile:99" | "distinct" | comma list of numbers
    static GridSpec parse(std::string_view s) {
        if (s == "distinct") return distinct();
        if (s.rfind("percentile", 0) == 0) {
            int count = 99;
            auto colon = s.find(':');
            if (colon != std::string_view::npos) {
                count = std::atoi(std::string(s.substr(colon + 1)).c_str());
            }
            if (count < 1) throw ConfigError("grid percentile count must be >= 1");
            return percentiles(count);
        }
        std::vector<double> vals;
        std::size_t pos = 0;
        while (pos <= s.size()) {
            auto comma = s.find(',', pos);
            std::string tok(s.substr(pos, comma == std::string_view::npos ? s.size() - pos
                                                                          : comma - pos));
            if (tok.empty()) throw ConfigError("bad grid spec '" + std::string(s) + "'");
            char* end = nullptr;
            double v = std::strtod(tok.c_str(), &end);
            if (end != tok.c_str() + tok.size()) {
                throw ConfigError("bad grid spec '" + std::string(s) + "'");
            }
            vals.push_back(v);
            if (comma == std::string_view::npos) break;
            pos = comma + 1;
        }
        return explicit_values(std::move(vals));
    }

    nlohmann::ordered_json to_json() const {
        switch (kind) {
            case Kind::percentile:
                return {{"kind", "percentile"}, {"count", count}};
            case Kind::distinct_values:
                return {{"kind", "distinct"}};
            default:
                return {{"kind", "explicit"}, {"values", values}};
        }
    }
    static GridSpec from_json(const nlohmann::json& j) {
        std::string kind = j.at("kind").get<std::string>();
        if (kind == "percentile") return percentiles(j.at("count").get<int>());
        if (kind == "distinct") return distinct();
        return explicit_values(j.at("values").get<std::vector<double>>());
    }
};

struct PermutationScheme {
    enum class Kind { permute, subset };
    Kind kind = Kind::permute;
    double fraction = 0.5;  // subset mode

    // "permute" | "subset:<fraction>"
    static PermutationScheme parse(std::string_view s) {
        if (s == "permute") return {};
        if (s.rfind("subset:", 0) == 0) {
            double f = std::strtod(std::string(s.substr(7)).c_str(), nullptr);
            if (!(f > 0.0 && f <= 1.0)) {
                throw ConfigError("subset fraction must be in (0,1], got '" + std::string(s) +
                                  "'");
            }
            return {Kind::subset, f};
        }
        throw ConfigError("unknown permutation scheme '" + std::string(s) + "'");
    }
    std::string to_string() const {
        if (kind == Kind::permute) return "permute";
        return "subset:" + format_double(fraction);
    }
};

struct SweepConfig {
    GridSpec grid;
    int min_group = 2;
    VarianceForm variance_form = VarianceForm::paper;
    // Permits single-threshold curves (between-variance pinned to 0); off by
    // default because one point cannot estimate a between-threshold variance.
    bool allow_single_point = false;
};

struct EffectCurve {
    std::string attribute;
    std::string outcome;
    Endpoint endpoint = Endpoint::pickup;
    EstimateVariant variant = EstimateVariant::point;
    std::vector<EffectPoint> points;
    double between_var = 0.0;
    double ces = 0.0;
    std::optional<double> p_value;
    // Echo of how the curve was produced.
    SweepConfig config;
    PermutationScheme perm_scheme;
    int iterations = 0;
    std::uint64_t seed = 0;
};

inline double within_threshold_variance(double d, std::size_t n_below, std::size_t n_above,
                                        VarianceForm form) {
    double nb = static_cast<double>(n_below);
    double na = static_cast<double>(n_above);
    double n = nb + na;
    double numerator = form == VarianceForm::paper ? d : d * d;
    return (n / (nb * na) + numerator / (2.0 * (n - 2.0))) * (n / (n - 2.0));
}

// Cohen's d at threshold t: below group is x < t, above group is x >= t, the
// denominator is the population standard deviation of the full outcome
// vector. Returns nullopt when either side is smaller than min_group.
inline std::optional<EffectPoint> cohen_d(std::span<const double> x, std::span<const double> y,
                                          double t, int min_group = 2,
                                          VarianceForm form = VarianceForm::paper) {
    if (x.size() != y.size()) throw std::invalid_argument("cohen_d: size mismatch");
    if (x.size() < 3) throw std::invalid_argument("cohen_d: need at least 3 observations");
    if (min_group < 1) throw std::invalid_argument("cohen_d: min_group must be >= 1");

    double sd = population_stddev(y);
    if (sd == 0.0) throw DegeneracyError("effects: constant outcome");

    Neumaier below_sum, above_sum;
    std::size_t n_below = 0, n_above = 0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        if (x[i] < t) {
            below_sum.add(y[i]);
            ++n_below;
        } else {
            above_sum.add(y[i]);
            ++n_above;
        }
    }
    if (n_below < static_cast<std::size_t>(min_group) ||
        n_above < static_cast<std::size_t>(min_group)) {
        return std::nullopt;
    }

    EffectPoint p;
    p.t = t;
    p.n_below = n_below;
    p.n_above = n_above;
    p.mean_below = below_sum.value() / static_cast<double>(n_below);
    p.mean_above = above_sum.value() / static_cast<double>(n_above);
    p.d = (p.mean_below - p.mean_above) / sd;
    p.var_t = within_threshold_variance(p.d, n_below, n_above, form);
    return p;
}

// Threshold grid over observed attribute values. Percentile mode spaces
// ranks evenly across the 1st..99th percentiles; duplicates from tied data
// are removed so the grid is strictly increasing.
inline std::vector<double> make_grid(std::span<const double> x, const GridSpec& spec) {
    if (x.empty()) throw std::invalid_argument("make_grid: empty attribute vector");
    std::vector<double> sorted(x.begin(), x.end());
    std::sort(sorted.begin(), sorted.end());

    std::vector<double> grid;
    switch (spec.kind) {
        case GridSpec::Kind::percentile: {
            int count = spec.count;
            if (count < 1) throw ConfigError("grid percentile count must be >= 1");
            for (int j = 0; j < count; ++j) {
                double p = count == 1
                               ? 50.0
                               : 1.0 + 98.0 * static_cast<double>(j) / (count - 1);
                grid.push_back(percentile_sorted(sorted, p));
            }
            break;
        }
        case GridSpec::Kind::distinct_values: {
            for (double v : sorted) {
                if (grid.empty() || v > grid.back()) grid.push_back(v);
            }
            break;
        }
        case GridSpec::Kind::explicit_list:
            grid = spec.values;
            break;
    }
    grid.erase(std::unique(grid.begin(), grid.end()), grid.end());
    return grid;
}

namespace detail {

// Sort-once layout for repeated sweeps over the same attribute vector: the
// split position for each retained threshold is independent of how the
// outcome is paired, so permutation iterations only re-evaluate prefix sums.
struct SweepPlan {
    std::size_t n = 0;
    std::vector<std::size_t> order;      // ascending-x permutation of input indices
    std::vector<double> thresholds;      // retained grid thresholds
    std::vector<std::size_t> splits;     // per retained threshold: |{x < t}|
};

inline SweepPlan make_sweep_plan(std::span<const double> x, std::span<const double> grid,
                                 int min_group) {
    SweepPlan plan;
    plan.n = x.size();
    plan.order.resize(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) plan.order[i] = i;
    std::sort(plan.order.begin(), plan.order.end(), [&](std::size_t a, std::size_t b) {
        if (x[a] != x[b]) return x[a] < x[b];
        return a < b;
    });
    std::vector<double> x_sorted(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) x_sorted[i] = x[plan.order[i]];

    auto min_g = static_cast<std::size_t>(min_group);
    for (double t : grid) {
        std::size_t split = static_cast<std::size_t>(
            std::lower_bound(x_sorted.begin(), x_sorted.end(), t) - x_sorted.begin());
        if (split >= min_g && plan.n - split >= min_g) {
            plan.thresholds.push_back(t);
            plan.splits.push_back(split);
        }
    }
    return plan;
}

struct SweepEvaluation {
    std::vector<EffectPoint> points;
    double between_var = 0.0;
    double ces = 0.0;
};

// Evaluates the swept curve for one pairing. `y_by_x` is the outcome vector
// laid out in ascending-x order.
inline SweepEvaluation evaluate_sweep(const SweepPlan& plan, std::span<const double> y_by_x,
                                      const SweepConfig& config, bool want_points) {
    const std::size_t n = plan.n;
    double sd = population_stddev(y_by_x);
    if (sd == 0.0) throw DegeneracyError("effects: constant outcome");

    // Prefix/suffix sums with carried compensation keep both group means
    // independent of each other's rounding.
    std::vector<double> prefix(n + 1), suffix(n + 1);
    {
        Neumaier acc;
        prefix[0] = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            acc.add(y_by_x[i]);
            prefix[i + 1] = acc.value();
        }
        Neumaier acc2;
        suffix[n] = 0.0;
        for (std::size_t i = n; i > 0; --i) {
            acc2.add(y_by_x[i - 1]);
            suffix[i - 1] = acc2.value();
        }
    }

    SweepEvaluation eval;
    const std::size_t n_points = plan.thresholds.size();
    if (n_points == 0) {
        throw DegeneracyError("effects: degenerate sweep, no threshold leaves both groups >= min_group");
    }
    if (n_points == 1 && !config.allow_single_point) {
        throw DegeneracyError(
            "effects: degenerate sweep, single valid threshold (between-variance undefined)");
    }

    std::vector<double> ds(n_points);
    eval.points.reserve(want_points ? n_points : 0);
    for (std::size_t p = 0; p < n_points; ++p) {
        std::size_t k = plan.splits[p];
        double mean_below = prefix[k] / static_cast<double>(k);
        double mean_above = suffix[k] / static_cast<double>(n - k);
        double d = (mean_below - mean_above) / sd;
        ds[p] = d;
        if (want_points) {
            EffectPoint pt;
            pt.t = plan.thresholds[p];
            pt.d = d;
            pt.n_below = k;
            pt.n_above = n - k;
            pt.var_t = within_threshold_variance(d, k, n - k, config.variance_form);
            pt.mean_below = mean_below;
            pt.mean_above = mean_above;
            eval.points.push_back(pt);
        }
    }

    // between-threshold variance: population variance of the d sequence
    double d_mean = mean(ds);
    Neumaier var_acc;
    for (double d : ds) {
        double dev = d - d_mean;
        var_acc.add(dev * dev);
    }
    eval.between_var = var_acc.value() / static_cast<double>(n_points);

    Neumaier num, den;
    for (std::size_t p = 0; p < n_points; ++p) {
        double var_t = want_points ? eval.points[p].var_t
                                   : within_threshold_variance(ds[p], plan.splits[p],
                                                               n - plan.splits[p],
                                                               config.variance_form);
        double denom = eval.between_var + var_t;
        if (!(denom > 0.0)) {
            throw std::logic_error("effects: nonpositive weight denominator");
        }
        double w = 1.0 / denom;
        if (want_points) eval.points[p].w = w;
        num.add(ds[p] * w);
        den.add(w);
    }
    eval.ces = num.value() / den.value();
    return eval;
}

inline std::vector<double> reorder(std::span<const double> v,
                                   const std::vector<std::size_t>& order) {
    std::vector<double> out(v.size());
    for (std::size_t i = 0; i < order.size(); ++i) out[i] = v[order[i]];
    return out;
}

}  // namespace detail

// Weighted random-effects combination of already-computed effect points:
// w = 1/(between_var + var_t) with between_var the population variance of
// the d values; returns (ces, between_var).
inline std::pair<double, double> combined_effect(std::span<const EffectPoint> points) {
    if (points.empty()) throw std::invalid_argument("combined_effect: no points");
    std::vector<double> ds(points.size());
    for (std::size_t i = 0; i < points.size(); ++i) ds[i] = points[i].d;
    double between_var = points.size() == 1 ? 0.0 : population_variance(ds);

    Neumaier num, den;
    for (const auto& p : points) {
        double denom = between_var + p.var_t;
        if (!(denom > 0.0)) throw std::logic_error("combined_effect: nonpositive weight");
        double w = 1.0 / denom;
        num.add(p.d * w);
        den.add(w);
    }
    return {num.value() / den.value(), between_var};
}

// Full threshold sweep of Cohen's d over `grid`, combined per the
// random-effects weighting. Labels and permutation fields of the returned
// curve are left for the caller.
inline EffectCurve sweep(std::span<const double> x, std::span<const double> y,
                         std::span<const double> grid, const SweepConfig& config = {}) {
    if (x.size() != y.size()) throw std::invalid_argument("sweep: size mismatch");
    if (x.size() < 3) throw std::invalid_argument("sweep: need at least 3 observations");
    if (config.min_group < 1) throw std::invalid_argument("sweep: min_group must be >= 1");
    if (grid.empty()) throw DegeneracyError("effects: degenerate sweep, empty grid");
    auto [min_it, max_it] = std::minmax_element(x.begin(), x.end());
    for (std::size_t i = 0; i < grid.size(); ++i) {
        if (i > 0 && grid[i] <= grid[i - 1]) {
            throw std::invalid_argument("sweep: grid must be strictly increasing");
        }
        if (grid[i] < *min_it || grid[i] > *max_it) {
            throw std::invalid_argument("sweep: grid threshold outside observed range");
        }
    }

    detail::SweepPlan plan = detail::make_sweep_plan(x, grid, config.min_group);
    std::vector<double> y_by_x = detail::reorder(y, plan.order);
    detail::SweepEvaluation eval = detail::evaluate_sweep(plan, y_by_x, config, true);

    EffectCurve curve;
    curve.points = std::move(eval.points);
    curve.between_var = eval.between_var;
    curve.ces = eval.ces;
    curve.config = config;
    return curve;
}

// Permutation significance of a combined effect size: the fraction of
// re-paired samples whose |ces| exceeds the observed |ces|. Iteration i draws
// from an RNG stream derived from (seed, i), so the result does not depend on
// thread count.
inline double permutation_test(std::span<const double> x, std::span<const double> y,
                               std::span<const double> grid, const SweepConfig& config,
                               const PermutationScheme& scheme, int iterations,
                               std::uint64_t seed, int threads = 1) {
    if (iterations < 1) throw std::invalid_argument("permutation_test: iterations must be >= 1");
    EffectCurve observed = sweep(x, y, grid, config);
    const double obs_abs = std::abs(observed.ces);
    const std::size_t n = x.size();

    detail::SweepPlan plan = detail::make_sweep_plan(x, grid, config.min_group);
    std::vector<double> y_by_x = detail::reorder(y, plan.order);

    std::vector<double> exceed(static_cast<std::size_t>(iterations), 0.0);
    constexpr int kRetryCap = 64;

    parallel_for(
        static_cast<std::size_t>(iterations),
        [&](std::size_t i) {
            Rng rng = Rng::for_index(seed, i);
            if (scheme.kind == PermutationScheme::Kind::permute) {
                std::vector<double> ys = y_by_x;
                rng.shuffle(ys);
                detail::SweepEvaluation eval = detail::evaluate_sweep(plan, ys, config, false);
                exceed[i] = std::abs(eval.ces) > obs_abs ? 1.0 : 0.0;
                return;
            }
            // subset scheme: subsample pairs, shuffle outcomes within the
            // subsample, sweep the same grid; thresholds that no longer split
            // the subsample drop out. Degenerate draws are re-drawn.
            std::size_t m = static_cast<std::size_t>(
                std::llround(scheme.fraction * static_cast<double>(n)));
            m = std::clamp<std::size_t>(m, std::max<std::size_t>(3, 2 * config.min_group), n);
            for (int attempt = 0; attempt < kRetryCap; ++attempt) {
                auto idx = rng.sample_indices(n, m);
                std::vector<double> xs(m), ys(m);
                for (std::size_t j = 0; j < m; ++j) {
                    xs[j] = x[idx[j]];
                    ys[j] = y[idx[j]];
                }
                rng.shuffle(ys);
                try {
                    detail::SweepPlan sub_plan =
                        detail::make_sweep_plan(xs, grid, config.min_group);
                    std::vector<double> ys_by_x = detail::reorder(ys, sub_plan.order);
                    detail::SweepEvaluation eval =
                        detail::evaluate_sweep(sub_plan, ys_by_x, config, false);
                    exceed[i] = std::abs(eval.ces) > obs_abs ? 1.0 : 0.0;
                    return;
                } catch (const DegeneracyError&) {
                    continue;
                }
            }
            throw DegeneracyError(
                "effects: permutation iteration kept drawing degenerate subsets (retry cap)");
        },
        threads);

    double count = 0.0;
    for (double e : exceed) count += e;
    return count / static_cast<double>(iterations);
}

struct PearsonResult {
    double r = 0.0;
    double p = 1.0;
};

// Product-moment correlation with permutation significance (shuffle b).
inline PearsonResult pearson(std::span<const double> a, std::span<const double> b,
                             int iterations = 1000, std::uint64_t seed = 42, int threads = 1) {
    if (a.size() != b.size()) throw std::invalid_argument("pearson: size mismatch");
    if (a.size() < 3) throw std::invalid_argument("pearson: need at least 3 observations");
    if (iterations < 1) throw std::invalid_argument("pearson: iterations must be >= 1");

    const double n = static_cast<double>(a.size());
    double mean_a = mean(a);
    double mean_b = mean(b);
    double sd_a = population_stddev(a);
    double sd_b = population_stddev(b);
    if (sd_a == 0.0 || sd_b == 0.0) throw DegeneracyError("effects: constant vector");

    auto corr = [&](std::span<const double> bb) {
        Neumaier cov;
        for (std::size_t i = 0; i < a.size(); ++i) {
            cov.add((a[i] - mean_a) * (bb[i] - mean_b));
        }
        return std::clamp(cov.value() / n / (sd_a * sd_b), -1.0, 1.0);
    };

    PearsonResult result;
    result.r = corr(b);
    const double obs_abs = std::abs(result.r);

    std::vector<double> exceed(static_cast<std::size_t>(iterations), 0.0);
    parallel_for(
        static_cast<std::size_t>(iterations),
        [&](std::size_t i) {
            Rng rng = Rng::for_index(seed, i);
            std::vector<double> shuffled(b.begin(), b.end());
            rng.shuffle(shuffled);
            exceed[i] = std::abs(corr(shuffled)) > obs_abs ? 1.0 : 0.0;
        },
        threads);
    double count = 0.0;
    for (double e : exceed) count += e;
    result.p = count / static_cast<double>(iterations);
    return result;
}

inline nlohmann::ordered_json curve_to_json(const EffectCurve& curve) {
    nlohmann::ordered_json points = nlohmann::ordered_json::array();
    for (const auto& p : curve.points) {
        points.push_back({{"t", p.t},
                          {"d", p.d},
                          {"n_below", p.n_below},
                          {"n_above", p.n_above},
                          {"var_t", p.var_t},
                          {"w", p.w}});
    }
    nlohmann::ordered_json j;
    j["attribute"] = curve.attribute;
    j["outcome"] = curve.outcome;
    j["endpoint"] = to_string(curve.endpoint);
    j["variant"] = to_string(curve.variant);
    j["points"] = std::move(points);
    j["between_var"] = curve.between_var;
    j["ces"] = curve.ces;
    if (curve.p_value) {
        j["p_value"] = *curve.p_value;
    } else {
        j["p_value"] = nullptr;
    }
    j["config"] = {{"grid", curve.config.grid.to_json()},
                   {"min_group", curve.config.min_group},
                   {"variance_form", to_string(curve.config.variance_form)},
                   {"perm_scheme", curve.perm_scheme.to_string()},
                   {"iterations", curve.iterations},
                   {"seed", curve.seed}};
    return j;
}

inline EffectCurve curve_from_json(const nlohmann::json& j) {
    EffectCurve curve;
    curve.attribute = j.at("attribute").get<std::string>();
    curve.outcome = j.at("outcome").get<std::string>();
    curve.endpoint = parse_endpoint(j.at("endpoint").get<std::string>());
    curve.variant = parse_variant(j.at("variant").get<std::string>());
    for (const auto& pj : j.at("points")) {
        EffectPoint p;
        p.t = pj.at("t").get<double>();
        p.d = pj.at("d").get<double>();
        p.n_below = pj.at("n_below").get<std::size_t>();
        p.n_above = pj.at("n_above").get<std::size_t>();
        p.var_t = pj.at("var_t").get<double>();
        p.w = pj.at("w").get<double>();
        curve.points.push_back(p);
    }
    curve.between_var = j.at("between_var").get<double>();
    curve.ces = j.at("ces").get<double>();
    if (j.contains("p_value") && !j.at("p_value").is_null()) {
        curve.p_value = j.at("p_value").get<double>();
    }
    const auto& cj = j.at("config");
    curve.config.grid = GridSpec::from_json(cj.at("grid"));
    curve.config.min_group = cj.at("min_group").get<int>();
    curve.config.variance_form = parse_variance_form(cj.at("variance_form").get<std::string>());
    curve.perm_scheme = PermutationScheme::parse(cj.at("perm_scheme").get<std::string>());
    curve.iterations = cj.at("iterations").get<int>();
    curve.seed = cj.at("seed").get<std::uint64_t>();
    return curve;
}

}  // namespace tripaudit
