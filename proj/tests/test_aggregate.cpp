#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <vector>

#include "oracle.hpp"
#include "tripaudit/aggregate.hpp"
#include "tripaudit/rng.hpp"

using namespace tripaudit;

namespace {

TripRecord make_trip(const std::string& id, const std::string& pickup,
                     const std::string& dropoff, double miles, std::int64_t seconds,
                     double fare) {
    TripRecord t;
    t.trip_id = id;
    t.start_time = "2019-01-07 08:00:00";
    t.end_time = "2019-01-07 08:30:00";
    t.miles = miles;
    t.seconds = seconds;
    t.fare = fare;
    t.pickup_tract = pickup;
    t.dropoff_tract = dropoff;
    return t;
}

std::string test_geoid(int index) {
    std::string suffix = std::to_string(index + 1);
    return "17031" + std::string(6 - suffix.size(), '0') + suffix;
}

TractProfile make_tract(const std::string& geoid, double area,
                        double nonwhite = 0.5, double moe = 0.05) {
    TractProfile t;
    t.geoid = geoid;
    t.area_m2 = area;
    t.attributes["pct_nonwhite"] = {nonwhite, moe};
    return t;
}

}  // namespace

TEST_CASE("single trip aggregates to its own ratios") {
    std::vector<TractProfile> tracts = {make_tract("17031000001", 2e6)};
    std::vector<TripRecord> trips = {
        make_trip("a", "17031000001", "17031000001", 4.0, 600, 10.0)};
    auto [aggs, stats] = aggregate_trips(trips, tracts, Endpoint::pickup);
    REQUIRE(aggs.size() == 1);
    REQUIRE(aggs[0].mean_fare_per_mile == 2.5);
    REQUIRE(aggs[0].mean_seconds_per_mile == 150.0);
    REQUIRE(aggs[0].pickup_density == 5e-7);
    REQUIRE(aggs[0].n_pickups == 1);
    REQUIRE(stats.trips_seen == 1);
}

TEST_CASE("mean of per-trip ratios, not ratio of sums") {
    std::vector<TractProfile> tracts = {make_tract("17031000001", 1e6)};
    std::vector<TripRecord> trips = {
        make_trip("a", "17031000001", "17031000001", 1.0, 100, 2.0),   // 2 per mile
        make_trip("b", "17031000001", "17031000001", 2.0, 100, 8.0)};  // 4 per mile
    auto [aggs, stats] = aggregate_trips(trips, tracts, Endpoint::pickup);
    REQUIRE(aggs[0].mean_fare_per_mile == 3.0);  // (2+4)/2, not 10/3
}

TEST_CASE("unknown geoids are counted per endpoint and excluded") {
    std::vector<TractProfile> tracts = {make_tract("17031000001", 1e6)};
    std::vector<TripRecord> trips = {
        make_trip("a", "17031000001", "99999999999", 1.0, 100, 2.0),
        make_trip("b", "99999999999", "17031000001", 1.0, 100, 2.0)};
    auto [aggs, stats] = aggregate_trips(trips, tracts, Endpoint::pickup);
    REQUIRE(stats.unknown_dropoff_geoid == 1);
    REQUIRE(stats.unknown_pickup_geoid == 1);
    REQUIRE(aggs[0].n_pickups == 1);
    REQUIRE(aggs[0].n_dropoffs == 1);
}

TEST_CASE("five-tract fixture equals the naive two-pass oracle") {
    Rng rng(314);
    std::vector<TractProfile> tracts;
    for (int i = 0; i < 5; ++i) {
        tracts.push_back(make_tract(test_geoid(i), rng.uniform(5e5, 5e6)));
    }
    std::vector<TripRecord> trips;
    std::vector<oracle::NaiveTrip> naive_trips;
    for (int i = 0; i < 400; ++i) {
        const auto& pu = tracts[static_cast<std::size_t>(rng.below(5))];
        const auto& doff = tracts[static_cast<std::size_t>(rng.below(5))];
        double miles = rng.uniform(0.5, 12.0);
        double fare = rng.uniform(2.0, 40.0);
        auto seconds = static_cast<std::int64_t>(rng.uniform(60.0, 3600.0));
        trips.push_back(make_trip("t" + std::to_string(i), pu.geoid, doff.geoid, miles, seconds,
                                  fare));
        naive_trips.push_back(
            {pu.geoid, doff.geoid, fare, miles, static_cast<double>(seconds)});
    }

    for (Endpoint endpoint : {Endpoint::pickup, Endpoint::dropoff}) {
        auto [aggs, stats] = aggregate_trips(trips, tracts, endpoint);
        auto expected = oracle::naive_aggregate(naive_trips, endpoint == Endpoint::pickup);
        for (const auto& agg : aggs) {
            auto it = expected.find(agg.geoid);
            std::int64_t n = endpoint == Endpoint::pickup ? agg.n_pickups : agg.n_dropoffs;
            if (it == expected.end()) {
                REQUIRE(n == 0);
                continue;
            }
            REQUIRE(static_cast<std::size_t>(n) == it->second.n);
            REQUIRE(agg.mean_fare_per_mile ==
                    Catch::Approx(it->second.mean_fare_per_mile).epsilon(1e-12));
            REQUIRE(agg.mean_seconds_per_mile ==
                    Catch::Approx(it->second.mean_seconds_per_mile).epsilon(1e-12));
        }
    }
}

TEST_CASE("dyadic fixture matches the oracle bit for bit") {
    std::vector<TractProfile> tracts = {make_tract("17031000001", 1048576.0)};
    std::vector<TripRecord> trips;
    std::vector<oracle::NaiveTrip> naive_trips;
    for (int i = 0; i < 64; ++i) {
        double miles = 2.0;
        double fare = 0.25 * (i % 8);
        trips.push_back(make_trip("t" + std::to_string(i), "17031000001", "17031000001", miles,
                                  128, fare));
        naive_trips.push_back({"17031000001", "17031000001", fare, miles, 128.0});
    }
    auto [aggs, stats] = aggregate_trips(trips, tracts, Endpoint::pickup);
    auto expected = oracle::naive_aggregate(naive_trips, true);
    REQUIRE(aggs[0].mean_fare_per_mile == expected.at("17031000001").mean_fare_per_mile);
    REQUIRE(aggs[0].mean_seconds_per_mile == expected.at("17031000001").mean_seconds_per_mile);
}

TEST_CASE("pickup counts are conserved and order does not matter") {
    Rng rng(99);
    std::vector<TractProfile> tracts;
    for (int i = 0; i < 8; ++i) {
        tracts.push_back(make_tract(test_geoid(i), rng.uniform(1e5, 1e7)));
    }
    std::vector<TripRecord> trips;
    for (int i = 0; i < 1000; ++i) {
        trips.push_back(make_trip("t" + std::to_string(i),
                                  tracts[static_cast<std::size_t>(rng.below(8))].geoid,
                                  tracts[static_cast<std::size_t>(rng.below(8))].geoid,
                                  rng.uniform(0.5, 10.0), 600, rng.uniform(1.0, 30.0)));
    }
    auto [aggs, stats] = aggregate_trips(trips, tracts, Endpoint::pickup);
    std::int64_t total_pickups = 0, total_dropoffs = 0;
    for (const auto& a : aggs) {
        total_pickups += a.n_pickups;
        total_dropoffs += a.n_dropoffs;
    }
    REQUIRE(total_pickups == 1000);
    REQUIRE(total_dropoffs == 1000);

    std::vector<TripRecord> shuffled = trips;
    Rng shuffler(7);
    shuffler.shuffle(shuffled);
    auto [aggs2, stats2] = aggregate_trips(shuffled, tracts, Endpoint::pickup);
    REQUIRE(aggs.size() == aggs2.size());
    for (std::size_t i = 0; i < aggs.size(); ++i) {
        REQUIRE(aggs[i].geoid == aggs2[i].geoid);
        REQUIRE(aggs[i].n_pickups == aggs2[i].n_pickups);
        if (aggs[i].n_pickups > 0) {
            REQUIRE(aggs[i].mean_fare_per_mile == aggs2[i].mean_fare_per_mile);
            REQUIRE(aggs[i].mean_seconds_per_mile == aggs2[i].mean_seconds_per_mile);
        }
    }
}

TEST_CASE("estimate variants bracket the point value") {
    AttributeEstimate est{0.95, 0.02};
    REQUIRE(apply_variant(est, EstimateVariant::min_est) == 0.93);
    REQUIRE(apply_variant(est, EstimateVariant::point) == 0.95);
    REQUIRE(apply_variant(est, EstimateVariant::max_est) == 0.97);

    AttributeEstimate wide{0.05, 0.10};  // margin larger than the value
    REQUIRE(apply_variant(wide, EstimateVariant::min_est) == 0.0);
    REQUIRE(apply_variant(wide, EstimateVariant::max_est) ==
            Catch::Approx(0.15).epsilon(1e-15));
}

TEST_CASE("build_table applies estimate variants with clamping") {
    std::vector<TractProfile> tracts = {
        make_tract("17031000001", 1e6, 0.95, 0.10),
        make_tract("17031000002", 1e6, 0.50, 0.05),
        make_tract("17031000003", 1e6, 0.05, 0.10),
    };
    std::vector<TripRecord> trips;
    for (const auto& t : tracts) {
        trips.push_back(make_trip("x" + t.geoid, t.geoid, t.geoid, 2.0, 600, 5.0));
    }
    auto [aggs, stats] = aggregate_trips(trips, tracts, Endpoint::pickup);

    TractTable point = build_table(aggs, tracts, Endpoint::pickup, EstimateVariant::point);
    TractTable min_t = build_table(aggs, tracts, Endpoint::pickup, EstimateVariant::min_est);
    TractTable max_t = build_table(aggs, tracts, Endpoint::pickup, EstimateVariant::max_est);

    auto point_vals = point.attribute("pct_nonwhite");
    auto min_vals = min_t.attribute("pct_nonwhite");
    auto max_vals = max_t.attribute("pct_nonwhite");
    REQUIRE(point_vals[0] == 0.95);
    REQUIRE(max_vals[0] == 1.0);   // 0.95 + 0.10 clamps
    REQUIRE(min_vals[2] == 0.0);   // 0.05 - 0.10 clamps
    for (std::size_t i = 0; i < point.size(); ++i) {
        REQUIRE(min_vals[i] <= point_vals[i]);
        REQUIRE(point_vals[i] <= max_vals[i]);
    }

    // densities are exposed on both sides of the table
    REQUIRE_NOTHROW(point.attribute("pickup_density"));
    REQUIRE_NOTHROW(point.attribute("dropoff_density"));
    REQUIRE_NOTHROW(point.outcome("pickup_density"));
    REQUIRE_NOTHROW(point.outcome("fare_per_mile"));
    REQUIRE_THROWS_AS(point.attribute("no_such_column"), ConfigError);
}

TEST_CASE("tracts without trips at the endpoint are excluded and counted") {
    std::vector<TractProfile> tracts = {
        make_tract("17031000001", 1e6), make_tract("17031000002", 1e6),
        make_tract("17031000003", 1e6), make_tract("17031000004", 1e6)};
    std::vector<TripRecord> trips = {
        make_trip("a", "17031000001", "17031000002", 1.0, 60, 2.0),
        make_trip("b", "17031000002", "17031000003", 1.0, 60, 2.0),
        make_trip("c", "17031000003", "17031000001", 1.0, 60, 2.0)};
    auto [aggs, stats] = aggregate_trips(trips, tracts, Endpoint::pickup);
    TractTable table = build_table(aggs, tracts, Endpoint::pickup, EstimateVariant::point);
    REQUIRE(table.size() == 3);
    REQUIRE(table.excluded_zero_trips == 1);
}

TEST_CASE("fewer than three joined tracts is a degeneracy error") {
    std::vector<TractProfile> tracts = {make_tract("17031000001", 1e6),
                                        make_tract("17031000002", 1e6),
                                        make_tract("17031000003", 1e6)};
    std::vector<TripRecord> trips = {
        make_trip("a", "17031000001", "17031000002", 1.0, 60, 2.0),
        make_trip("b", "17031000002", "17031000001", 1.0, 60, 2.0)};
    auto [aggs, stats] = aggregate_trips(trips, tracts, Endpoint::pickup);
    REQUIRE_THROWS_AS(build_table(aggs, tracts, Endpoint::pickup, EstimateVariant::point),
                      DegeneracyError);
}
