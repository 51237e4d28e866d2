#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "tripaudit/common.hpp"
#include "tripaudit/ingest.hpp"

namespace tripaudit {

// Per-tract reduction of the trip stream. Means are over per-trip ratios
// (fare/miles, seconds/miles) for trips whose given endpoint lies in the
// tract; densities are total counts over tract area.
struct TractAggregate {
    std::string geoid;
    double mean_fare_per_mile = std::numeric_limits<double>::quiet_NaN();
    double mean_seconds_per_mile = std::numeric_limits<double>::quiet_NaN();
    double pickup_density = 0.0;
    double dropoff_density = 0.0;
    std::int64_t n_pickups = 0;
    std::int64_t n_dropoffs = 0;
};

struct AggregateStats {
    std::uint64_t trips_seen = 0;
    std::uint64_t unknown_pickup_geoid = 0;
    std::uint64_t unknown_dropoff_geoid = 0;
};

// Streaming accumulator: add() one filtered trip at a time, then project a
// per-endpoint aggregate table. Single forward pass, so results are a pure
// function of the trip multiset (compensated sums keep the accumulation
// insensitive to trip order).
class TractAccumulator {
  public:
    explicit TractAccumulator(std::span<const TractProfile> tracts) {
        cells_.resize(tracts.size());
        for (std::size_t i = 0; i < tracts.size(); ++i) {
            cells_[i].geoid = tracts[i].geoid;
            cells_[i].area_m2 = tracts[i].area_m2;
            index_.emplace(tracts[i].geoid, i);
        }
    }

    void add(const TripRecord& trip) {
        ++stats_.trips_seen;
        double fare_per_mile = trip.fare_per_mile();
        double seconds_per_mile = trip.seconds_per_mile();

        auto pickup = index_.find(trip.pickup_tract);
        if (pickup == index_.end()) {
            ++stats_.unknown_pickup_geoid;
        } else {
            Cell& c = cells_[pickup->second];
            ++c.n_pickups;
            c.pickup_fare.add(fare_per_mile);
            c.pickup_seconds.add(seconds_per_mile);
        }

        auto dropoff = index_.find(trip.dropoff_tract);
        if (dropoff == index_.end()) {
            ++stats_.unknown_dropoff_geoid;
        } else {
            Cell& c = cells_[dropoff->second];
            ++c.n_dropoffs;
            c.dropoff_fare.add(fare_per_mile);
            c.dropoff_seconds.add(seconds_per_mile);
        }
    }

    // One aggregate per known tract, in tract-file order. Means for tracts
    // with no trips at the endpoint are NaN and carry zero counts.
    std::vector<TractAggregate> finish(Endpoint endpoint) const {
        std::vector<TractAggregate> out;
        out.reserve(cells_.size());
        for (const Cell& c : cells_) {
            TractAggregate agg;
            agg.geoid = c.geoid;
            agg.n_pickups = c.n_pickups;
            agg.n_dropoffs = c.n_dropoffs;
            agg.pickup_density = static_cast<double>(c.n_pickups) / c.area_m2;
            agg.dropoff_density = static_cast<double>(c.n_dropoffs) / c.area_m2;
            if (endpoint == Endpoint::pickup && c.n_pickups > 0) {
                agg.mean_fare_per_mile = c.pickup_fare.value() / static_cast<double>(c.n_pickups);
                agg.mean_seconds_per_mile =
                    c.pickup_seconds.value() / static_cast<double>(c.n_pickups);
            } else if (endpoint == Endpoint::dropoff && c.n_dropoffs > 0) {
                agg.mean_fare_per_mile =
                    c.dropoff_fare.value() / static_cast<double>(c.n_dropoffs);
                agg.mean_seconds_per_mile =
                    c.dropoff_seconds.value() / static_cast<double>(c.n_dropoffs);
            }
            out.push_back(std::move(agg));
        }
        return out;
    }

    const AggregateStats& stats() const { return stats_; }

  private:
    struct Cell {
        std::string geoid;
        double area_m2 = 0.0;
        std::int64_t n_pickups = 0;
        std::int64_t n_dropoffs = 0;
        Neumaier pickup_fare, pickup_seconds;
        Neumaier dropoff_fare, dropoff_seconds;
    };
    std::vector<Cell> cells_;
    std::unordered_map<std::string, std::size_t> index_;
    AggregateStats stats_;
};

inline std::pair<std::vector<TractAggregate>, AggregateStats> aggregate_trips(
    std::span<const TripRecord> trips, std::span<const TractProfile> tracts, Endpoint endpoint) {
    TractAccumulator acc(tracts);
    for (const auto& t : trips) acc.add(t);
    return {acc.finish(endpoint), acc.stats()};
}

// Aligned per-tract columns for one endpoint role and one ACS estimate
// variant. Attribute columns hold the demographic fractions (shifted by
// -moe/+moe for the min/max variants, clamped to [0,1]) plus both trip
// densities; outcome columns hold the aggregated ride statistics.
struct TractTable {
    Endpoint endpoint = Endpoint::pickup;
    EstimateVariant variant = EstimateVariant::point;
    std::vector<std::string> geoids;
    std::map<std::string, std::vector<double>> attribute_columns;
    std::map<std::string, std::vector<double>> outcome_columns;
    std::size_t excluded_zero_trips = 0;

    std::size_t size() const { return geoids.size(); }

    std::span<const double> attribute(const std::string& name) const {
        auto it = attribute_columns.find(name);
        if (it == attribute_columns.end()) {
            throw ConfigError("aggregate: unknown attribute '" + name + "'");
        }
        return it->second;
    }
    std::span<const double> outcome(const std::string& name) const {
        auto it = outcome_columns.find(name);
        if (it == outcome_columns.end()) {
            throw ConfigError("aggregate: unknown outcome '" + name + "'");
        }
        return it->second;
    }
};

inline double apply_variant(const AttributeEstimate& est, EstimateVariant variant) {
    switch (variant) {
        case EstimateVariant::min_est: return clamp01(est.value - est.moe);
        case EstimateVariant::max_est: return clamp01(est.value + est.moe);
        default: return est.value;
    }
}

// Joins aggregates with tract profiles into the aligned table for one
// endpoint. Tracts with zero trips at that endpoint are excluded and
// counted; fewer than 3 surviving tracts is an error since no effect size
// is defined there.
inline TractTable build_table(std::span<const TractAggregate> aggregates,
                              std::span<const TractProfile> tracts, Endpoint endpoint,
                              EstimateVariant variant) {
    std::unordered_map<std::string, const TractProfile*> profiles;
    for (const auto& t : tracts) profiles.emplace(t.geoid, &t);

    TractTable table;
    table.endpoint = endpoint;
    table.variant = variant;

    for (const auto& agg : aggregates) {
        auto pit = profiles.find(agg.geoid);
        if (pit == profiles.end()) continue;  // aggregates always derive from known tracts
        std::int64_t count = endpoint == Endpoint::pickup ? agg.n_pickups : agg.n_dropoffs;
        if (count <= 0) {
            ++table.excluded_zero_trips;
            continue;
        }
        table.geoids.push_back(agg.geoid);
        for (const auto& [name, est] : pit->second->attributes) {
            table.attribute_columns[name].push_back(apply_variant(est, variant));
        }
        table.attribute_columns["pickup_density"].push_back(agg.pickup_density);
        table.attribute_columns["dropoff_density"].push_back(agg.dropoff_density);
        table.outcome_columns["fare_per_mile"].push_back(agg.mean_fare_per_mile);
        table.outcome_columns["seconds_per_mile"].push_back(agg.mean_seconds_per_mile);
        table.outcome_columns["pickup_density"].push_back(agg.pickup_density);
        table.outcome_columns["dropoff_density"].push_back(agg.dropoff_density);
    }

    if (table.geoids.size() < 3) {
        throw DegeneracyError("aggregate: only " + std::to_string(table.geoids.size()) +
                              " tracts joined for " + to_string(endpoint) +
                              "; effect sizes undefined below 3");
    }
    return table;
}

}  // namespace tripaudit
