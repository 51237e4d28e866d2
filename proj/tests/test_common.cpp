#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <vector>

#include "tripaudit/common.hpp"
#include "tripaudit/parallel.hpp"
#include "tripaudit/rng.hpp"

using namespace tripaudit;

TEST_CASE("compensated sum matches extended precision") {
    Rng rng(7);
    std::vector<double> values;
    long double exact = 0.0L;
    for (int i = 0; i < 20000; ++i) {
        double v = rng.uniform(-1e6, 1e6) + rng.uniform01();
        values.push_back(v);
        exact += static_cast<long double>(v);
    }
    double got = compensated_sum(values);
    REQUIRE(got == Catch::Approx(static_cast<double>(exact)).epsilon(1e-14));
}

TEST_CASE("population variance and stddev") {
    std::vector<double> v = {10, 20, 30, 40};
    REQUIRE(mean(v) == 25.0);
    REQUIRE(population_variance(v) == 125.0);
    REQUIRE(population_stddev(v) == Catch::Approx(11.180339887498949).epsilon(1e-15));
}

TEST_CASE("percentile interpolation") {
    std::vector<double> v = {1, 2, 3, 4, 5};
    REQUIRE(percentile_sorted(v, 0) == 1.0);
    REQUIRE(percentile_sorted(v, 100) == 5.0);
    REQUIRE(percentile_sorted(v, 50) == 3.0);
    REQUIRE(percentile_sorted(v, 25) == 2.0);
    REQUIRE(percentile_sorted(v, 10) == Catch::Approx(1.4));
}

TEST_CASE("format_double round trips") {
    for (double v : {0.1, -1.7888543819998317, 3.0, 1e-7, 123456.789}) {
        REQUIRE(std::stod(format_double(v)) == v);
    }
}

TEST_CASE("endpoint and variant parsing") {
    REQUIRE(parse_endpoint("pickup") == Endpoint::pickup);
    REQUIRE(parse_endpoint("dropoff") == Endpoint::dropoff);
    REQUIRE_THROWS_AS(parse_endpoint("sideways"), ConfigError);
    REQUIRE(to_string(parse_variant("point")) == "point");
    REQUIRE(parse_variant("min") == EstimateVariant::min_est);
    REQUIRE_THROWS_AS(parse_variant("median"), ConfigError);
}

TEST_CASE("rng streams are reproducible and index-separable") {
    Rng a(42), b(42);
    for (int i = 0; i < 100; ++i) REQUIRE(a.next_u64() == b.next_u64());

    Rng s0 = Rng::for_index(42, 0);
    Rng s1 = Rng::for_index(42, 1);
    REQUIRE(s0.next_u64() != s1.next_u64());

    // stream for an index does not depend on other streams having been drawn
    Rng fresh = Rng::for_index(42, 1);
    Rng again = Rng::for_index(42, 1);
    for (int i = 0; i < 10; ++i) REQUIRE(fresh.next_u64() == again.next_u64());
}

TEST_CASE("rng variates look sane") {
    Rng rng(11);
    double sum = 0.0, sumsq = 0.0;
    const int n = 200000;
    for (int i = 0; i < n; ++i) {
        double v = rng.normal(2.0, 3.0);
        sum += v;
        sumsq += v * v;
    }
    double m = sum / n;
    double sd = std::sqrt(sumsq / n - m * m);
    REQUIRE(m == Catch::Approx(2.0).margin(0.05));
    REQUIRE(sd == Catch::Approx(3.0).margin(0.05));

    for (int i = 0; i < 1000; ++i) {
        double u = rng.uniform01();
        REQUIRE(u >= 0.0);
        REQUIRE(u < 1.0);
        double bv = rng.beta(2.0, 5.0);
        REQUIRE(bv >= 0.0);
        REQUIRE(bv <= 1.0);
    }

    double lam = 0.0;
    for (int i = 0; i < 20000; ++i) lam += static_cast<double>(rng.poisson(7.5));
    REQUIRE(lam / 20000 == Catch::Approx(7.5).margin(0.15));
}

TEST_CASE("shuffle is a permutation") {
    Rng rng(3);
    std::vector<int> v(50);
    for (int i = 0; i < 50; ++i) v[static_cast<std::size_t>(i)] = i;
    auto original = v;
    rng.shuffle(v);
    REQUIRE(v != original);
    std::sort(v.begin(), v.end());
    REQUIRE(v == original);
}

TEST_CASE("parallel_for covers all slots for any thread count") {
    const std::size_t n = 997;
    for (int threads : {1, 2, 3, 8}) {
        std::vector<int> hits(n, 0);
        parallel_for(n, [&](std::size_t i) { hits[i] += 1; }, threads);
        REQUIRE(std::count(hits.begin(), hits.end(), 1) == static_cast<long>(n));
    }
}

TEST_CASE("parallel_for propagates exceptions") {
    REQUIRE_THROWS_AS(
        parallel_for(100, [](std::size_t i) {
            if (i == 57) throw std::runtime_error("boom");
        }, 4),
        std::runtime_error);
}

TEST_CASE("fnv digest is stable") {
    REQUIRE(fnv1a64("") == 0xcbf29ce484222325ull);
    REQUIRE(fnv1a64("a") == 0xaf63dc4c8601ec8cull);
    REQUIRE(hex64(0xdeadbeefull) == "00000000deadbeef");
}
