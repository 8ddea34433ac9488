#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "physiowave/wavelets.hpp"

using namespace pwv::wavelets;

static const char* kAll[] = {"haar", "db4", "db6", "sym4", "sym5", "coif3", "coif5", "bior4.4"};

TEST_CASE("orthogonal families: sum sqrt(2), unit l2 norm, shift-2 orthogonality") {
    for (const char* name : kAll) {
        TapPair f = family(name);
        INFO(name);
        double s = 0;
        for (double v : f.lo) s += v;
        REQUIRE(s == Catch::Approx(std::sqrt(2.0)).margin(1e-12));
        if (!f.orthogonal) continue;
        double n2 = 0;
        for (double v : f.lo) n2 += v * v;
        REQUIRE(n2 == Catch::Approx(1.0).margin(1e-12));
        for (std::size_t m = 1; m < f.lo.size() / 2; ++m) {
            double dot = 0;
            for (std::size_t n = 0; n + 2 * m < f.lo.size(); ++n) dot += f.lo[n] * f.lo[n + 2 * m];
            REQUIRE(std::fabs(dot) < 1e-12);
        }
    }
}

TEST_CASE("highpass filters reject DC") {
    for (const char* name : kAll) {
        TapPair f = family(name);
        double s = 0;
        for (double v : f.hi) s += v;
        INFO(name);
        REQUIRE(std::fabs(s) < 1e-12);
    }
}

TEST_CASE("highpass is orthogonal to lowpass for orthogonal families") {
    for (const char* name : kAll) {
        TapPair f = family(name);
        if (!f.orthogonal) continue;
        double dot = 0;
        for (std::size_t n = 0; n < f.lo.size(); ++n) dot += f.lo[n] * f.hi[n];
        INFO(name);
        REQUIRE(std::fabs(dot) < 1e-12);
    }
}

TEST_CASE("unknown family is rejected") {
    REQUIRE_THROWS_AS(family("db5"), pwv::ConfigError);
}

TEST_CASE("resample_taps identity grid leaves taps unchanged") {
    TapPair f = family("db4");
    auto r = resample_taps(f.lo, f.lo.size());
    for (std::size_t i = 0; i < r.size(); ++i) REQUIRE(std::fabs(r[i] - f.lo[i]) <= 1e-12);
}

TEST_CASE("resample_taps spreads the Haar pair with preserved L1 norm") {
    auto r = resample_taps({0.70710678118654752, 0.70710678118654752}, 4);
    REQUIRE(r.size() == 4);
    for (double v : r) REQUIRE(v == Catch::Approx(0.35355339059327376).margin(1e-10));
    double l1 = 0;
    for (double v : r) l1 += std::fabs(v);
    REQUIRE(l1 == Catch::Approx(1.4142135623730951).margin(1e-10));
}

TEST_CASE("resample_taps preserves L1 norm for every family and K") {
    for (const char* name : kAll) {
        TapPair f = family(name);
        for (std::size_t K : {4, 16, 24, 33}) {
            auto r = resample_taps(f.lo, K);
            double lin = 0, lout = 0;
            for (double v : f.lo) lin += std::fabs(v);
            for (double v : r) lout += std::fabs(v);
            INFO(name << " K=" << K);
            REQUIRE(lout == Catch::Approx(lin).margin(1e-10));
        }
    }
}

TEST_CASE("resample_taps rejects degenerate requests") {
    REQUIRE_THROWS_AS(resample_taps({}, 4), pwv::ShapeError);
    REQUIRE_THROWS_AS(resample_taps({1.0, 1.0}, 1), pwv::ShapeError);
}
