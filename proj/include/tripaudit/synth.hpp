#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "tripaudit/common.hpp"
#include "tripaudit/ingest.hpp"
#include "tripaudit/rng.hpp"

namespace tripaudit {

// One synthetic demographic attribute: Beta-distributed per tract, with an
// optional mix weight toward a shared per-tract latent so attributes can be
// made mutually correlated.
struct AttributeGen {
    double alpha = 2.0;
    double beta = 2.0;
    double mix = 0.0;   // 0 = independent, 1 = fully the shared latent
    double moe = 0.02;  // reported margin of error
};

// Ground-truth city generator. Fares follow
//   fare = miles * (base_rate + sum slope_a * attr_a(pickup tract) + noise)
// so the direction of every injected effect is unambiguous.
struct SynthSpec {
    int n_tracts = 100;
    std::uint64_t seed = 42;
    std::map<std::string, AttributeGen> attributes = default_attributes();

    std::string trips_family = "poisson";  // poisson | fixed
    double trips_per_tract = 200.0;

    double base_rate = 2.5;  // USD per mile
    std::map<std::string, double> slopes;
    double noise_sd = 0.5;

    double anomaly_rate = 0.0;
    double anomaly_multiplier = 100.0;
    double shared_rate = 0.0;
    double missing_rate = 0.0;

    double area_log_mean = std::log(2.0e6);
    double area_log_sd = 0.35;
    double miles_log_mean = std::log(3.0);
    double miles_log_sd = 0.5;
    double seconds_per_mile_log_mean = std::log(150.0);
    double seconds_per_mile_log_sd = 0.25;

    static std::map<std::string, AttributeGen> default_attributes() {
        return {
            {"pct_nonwhite", {2.0, 2.0, 0.3, 0.02}},
            {"pct_over_40", {4.0, 4.0, 0.0, 0.02}},
            {"pct_hs_or_less", {2.0, 3.0, 0.3, 0.02}},
            {"pct_below_poverty", {2.0, 5.0, 0.3, 0.02}},
            {"pct_noncitizen", {1.5, 6.0, 0.0, 0.02}},
            {"pct_below_median_house", {3.0, 3.0, 0.0, 0.02}},
        };
    }

    void validate() const {
        if (n_tracts < 3) throw ConfigError("synth: n_tracts must be >= 3");
        if (!(noise_sd > 0.0)) throw ConfigError("synth: noise scale must be positive");
        if (base_rate < 0.0) throw ConfigError("synth: base rate must be nonnegative");
        if (anomaly_rate < 0.0 || anomaly_rate > 1.0 || shared_rate < 0.0 || shared_rate > 1.0 ||
            missing_rate < 0.0 || missing_rate > 1.0) {
            throw ConfigError("synth: rates must lie in [0,1]");
        }
        if (attributes.empty()) throw ConfigError("synth: at least one attribute required");
        if (trips_family != "poisson" && trips_family != "fixed") {
            throw ConfigError("synth: trips_family must be poisson or fixed");
        }
        for (const auto& [name, _] : slopes) {
            if (!attributes.count(name)) {
                throw ConfigError("synth: slope on unknown attribute '" + name + "'");
            }
        }
    }

    nlohmann::ordered_json to_json() const {
        nlohmann::ordered_json attrs;
        for (const auto& [name, g] : attributes) {
            attrs[name] = {{"alpha", g.alpha}, {"beta", g.beta}, {"mix", g.mix}, {"moe", g.moe}};
        }
        nlohmann::ordered_json j;
        j["n_tracts"] = n_tracts;
        j["seed"] = seed;
        j["attributes"] = attrs;
        j["trips_family"] = trips_family;
        j["trips_per_tract"] = trips_per_tract;
        j["base_rate"] = base_rate;
        j["slopes"] = slopes;
        j["noise_sd"] = noise_sd;
        j["anomaly_rate"] = anomaly_rate;
        j["anomaly_multiplier"] = anomaly_multiplier;
        j["shared_rate"] = shared_rate;
        j["missing_rate"] = missing_rate;
        return j;
    }

    static SynthSpec from_json(const nlohmann::json& j) {
        SynthSpec s;
        s.n_tracts = j.value("n_tracts", s.n_tracts);
        s.seed = j.value("seed", s.seed);
        if (j.contains("attributes")) {
            s.attributes.clear();
            for (auto& [name, g] : j.at("attributes").items()) {
                AttributeGen gen;
                gen.alpha = g.value("alpha", 2.0);
                gen.beta = g.value("beta", 2.0);
                gen.mix = g.value("mix", 0.0);
                gen.moe = g.value("moe", 0.02);
                s.attributes[name] = gen;
            }
        }
        s.trips_family = j.value("trips_family", s.trips_family);
        s.trips_per_tract = j.value("trips_per_tract", s.trips_per_tract);
        s.base_rate = j.value("base_rate", s.base_rate);
        if (j.contains("slopes")) {
            for (auto& [name, v] : j.at("slopes").items()) s.slopes[name] = v.get<double>();
        }
        s.noise_sd = j.value("noise_sd", s.noise_sd);
        s.anomaly_rate = j.value("anomaly_rate", s.anomaly_rate);
        s.anomaly_multiplier = j.value("anomaly_multiplier", s.anomaly_multiplier);
        s.shared_rate = j.value("shared_rate", s.shared_rate);
        s.missing_rate = j.value("missing_rate", s.missing_rate);
        return s;
    }
};

struct SynthCity {
    std::vector<TractProfile> tracts;
    std::vector<TripRecord> trips;
    std::vector<std::string> anomalous_trip_ids;
    std::uint64_t n_shared = 0;
    std::uint64_t n_missing = 0;
};

namespace detail {

inline std::string synth_geoid(int index) {
    // 17031 prefix + zero-padded 6-digit sequence = a well-formed 11-digit id
    std::string suffix = std::to_string(index + 1);
    return "17031" + std::string(6 - suffix.size(), '0') + suffix;
}

inline std::string synth_timestamp(std::int64_t minutes_since_base) {
    // Fixed early-2019 week, quantized to 15 minutes like the source data.
    std::int64_t quarter = (minutes_since_base / 15) * 15;
    std::int64_t day = quarter / 1440;
    std::int64_t hour = (quarter % 1440) / 60;
    std::int64_t minute = quarter % 60;
    char buf[32];
    std::snprintf(buf, sizeof(buf), "2019-01-%02d %02d:%02d:00", static_cast<int>(7 + day % 21),
                  static_cast<int>(hour), static_cast<int>(minute));
    return buf;
}

}  // namespace detail

inline SynthCity generate_city(const SynthSpec& spec) {
    spec.validate();
    Rng rng(spec.seed);
    SynthCity city;

    std::vector<double> shared_latent(static_cast<std::size_t>(spec.n_tracts));
    for (auto& v : shared_latent) v = rng.beta(2.0, 2.0);

    city.tracts.resize(static_cast<std::size_t>(spec.n_tracts));
    for (int i = 0; i < spec.n_tracts; ++i) {
        auto iu = static_cast<std::size_t>(i);
        TractProfile& t = city.tracts[iu];
        t.geoid = detail::synth_geoid(i);
        t.area_m2 = rng.lognormal(spec.area_log_mean, spec.area_log_sd);
        for (const auto& [name, gen] : spec.attributes) {
            double own = rng.beta(gen.alpha, gen.beta);
            double value = clamp01((1.0 - gen.mix) * own + gen.mix * shared_latent[iu]);
            t.attributes[name] = AttributeEstimate{value, gen.moe};
        }
    }

    std::uint64_t trip_counter = 0;
    for (int i = 0; i < spec.n_tracts; ++i) {
        auto iu = static_cast<std::size_t>(i);
        const TractProfile& pickup = city.tracts[iu];
        std::uint64_t n_trips = spec.trips_family == "fixed"
                                    ? static_cast<std::uint64_t>(spec.trips_per_tract)
                                    : rng.poisson(spec.trips_per_tract);
        double rate_base = spec.base_rate;
        for (const auto& [name, slope] : spec.slopes) {
            rate_base += slope * pickup.attributes.at(name).value;
        }
        for (std::uint64_t k = 0; k < n_trips; ++k) {
            TripRecord trip;
            trip.trip_id = "T" + std::to_string(++trip_counter);
            std::int64_t start_min = static_cast<std::int64_t>(rng.below(21 * 1440));
            trip.miles = rng.lognormal(spec.miles_log_mean, spec.miles_log_sd);
            double secs_per_mile =
                rng.lognormal(spec.seconds_per_mile_log_mean, spec.seconds_per_mile_log_sd);
            trip.seconds = std::max<std::int64_t>(
                1, static_cast<std::int64_t>(std::llround(trip.miles * secs_per_mile)));
            trip.start_time = detail::synth_timestamp(start_min);
            trip.end_time = detail::synth_timestamp(start_min + trip.seconds / 60 + 15);
            trip.pickup_tract = pickup.geoid;
            trip.dropoff_tract =
                city.tracts[static_cast<std::size_t>(rng.below(
                                static_cast<std::uint64_t>(spec.n_tracts)))]
                    .geoid;

            double rate = rate_base + rng.normal(0.0, spec.noise_sd);
            rate = std::max(rate, 0.01);
            trip.fare = trip.miles * rate;
            if (spec.anomaly_rate > 0.0 && rng.uniform01() < spec.anomaly_rate) {
                trip.fare *= spec.anomaly_multiplier;
                city.anomalous_trip_ids.push_back(trip.trip_id);
            }
            trip.shared = spec.shared_rate > 0.0 && rng.uniform01() < spec.shared_rate;
            if (trip.shared) ++city.n_shared;
            if (spec.missing_rate > 0.0 && rng.uniform01() < spec.missing_rate) {
                trip.dropoff_tract.clear();
                ++city.n_missing;
            }
            city.trips.push_back(std::move(trip));
        }
    }
    return city;
}

struct SynthOutput {
    std::filesystem::path trips_path;
    std::filesystem::path tracts_path;
    std::filesystem::path truth_path;
};

// Writes trips.csv / tracts.csv in the ingest formats plus truth.json with
// the injected ground truth.
inline SynthOutput generate(const SynthSpec& spec, const std::filesystem::path& out_dir) {
    SynthCity city = generate_city(spec);
    std::filesystem::create_directories(out_dir);

    SynthOutput out;
    out.trips_path = out_dir / "trips.csv";
    out.tracts_path = out_dir / "tracts.csv";
    out.truth_path = out_dir / "truth.json";

    {
        std::ofstream f(out.trips_path);
        if (!f) throw InputError("synth: cannot write " + out.trips_path.string());
        write_trips_csv(f, city.trips);
    }
    {
        std::vector<std::string> attr_names;
        for (const auto& [name, _] : spec.attributes) attr_names.push_back(name);
        std::ofstream f(out.tracts_path);
        if (!f) throw InputError("synth: cannot write " + out.tracts_path.string());
        write_tracts_csv(f, city.tracts, attr_names);
    }
    {
        nlohmann::ordered_json truth;
        truth["spec"] = spec.to_json();
        truth["n_trips"] = city.trips.size();
        truth["n_tracts"] = spec.n_tracts;
        truth["n_shared"] = city.n_shared;
        truth["n_missing_dropoff"] = city.n_missing;
        truth["anomalous_trip_ids"] = city.anomalous_trip_ids;
        std::ofstream f(out.truth_path);
        if (!f) throw InputError("synth: cannot write " + out.truth_path.string());
        f << truth.dump(2) << "\n";
    }
    return out;
}

}  // namespace tripaudit
