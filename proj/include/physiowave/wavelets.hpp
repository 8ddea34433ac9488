#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "physiowave/errors.hpp"

// Decomposition filter tables. Orthogonal families were produced by spectral
// factorization of the maximally-flat halfband polynomial (minimum-phase
// roots for db, least-asymmetric root grouping for sym), coiflets by
// Gauss-Newton on the moment + orthogonality equations, and bior4.4 from the
// 9/7 factorization of the degree-8 halfband. Frozen after cross-checking
// sum(h_lo) = sqrt(2), ||h_lo||_2 = 1 (orthogonal families), shift-2
// orthogonality and vanishing moments at 1e-12; the unit suite re-asserts
// the normalization conditions.

namespace pwv::wavelets {

inline constexpr double khaar_lo[2] = {
    0.70710678118654752, 0.70710678118654752};
inline constexpr double khaar_hi[2] = {
    0.70710678118654752, -0.70710678118654752};

inline constexpr double kdb4_lo[8] = {
    -0.010597401785069032, 0.0328830116668852, 0.030841381835560764, -0.18703481171909308,
    -0.027983769416859854, 0.63088076792985891, 0.71484657055291565, 0.2303778133088965};
inline constexpr double kdb4_hi[8] = {
    0.2303778133088965, -0.71484657055291565, 0.63088076792985891, 0.027983769416859854,
    -0.18703481171909308, -0.030841381835560764, 0.0328830116668852, 0.010597401785069032};

inline constexpr double kdb6_lo[12] = {
    -0.0010773010853084796, 0.0047772575109455106, 0.00055384220116149614, -0.03158203931748603,
    0.027522865530305729, 0.097501605587323049, -0.12976686756726194, -0.22626469396543982,
    0.31525035170919763, 0.75113390802109535, 0.49462389039845309, 0.11154074335010946};
inline constexpr double kdb6_hi[12] = {
    0.11154074335010946, -0.49462389039845309, 0.75113390802109535, -0.31525035170919763,
    -0.22626469396543982, 0.12976686756726194, 0.097501605587323049, -0.027522865530305729,
    -0.03158203931748603, -0.00055384220116149614, 0.0047772575109455106, 0.0010773010853084796};

inline constexpr double ksym4_lo[8] = {
    0.032223100604051468, -0.012603967262031304, -0.099219543576633533, 0.29785779560530605,
    0.80373875180513208, 0.49761866763277499, -0.029635527646002492, -0.075765714789502213};
inline constexpr double ksym4_hi[8] = {
    -0.075765714789502213, 0.029635527646002492, 0.49761866763277499, -0.80373875180513208,
    0.29785779560530605, 0.099219543576633533, -0.012603967262031304, -0.032223100604051468};

inline constexpr double ksym5_lo[10] = {
    0.027333068344998769, 0.029519490925706261, -0.039134249302313844, 0.1993975339768556,
    0.72340769040404079, 0.63397896345679206, 0.016602105764510848, -0.17532808990805622,
    -0.021101834024689041, 0.019538882735249827};
inline constexpr double ksym5_hi[10] = {
    0.019538882735249827, 0.021101834024689041, -0.17532808990805622, -0.016602105764510848,
    0.63397896345679206, -0.72340769040404079, 0.1993975339768556, 0.039134249302313844,
    0.029519490925706261, -0.027333068344998769};

inline constexpr double kcoif3_lo[18] = {
    -3.4599773197272774e-5, -7.0983302506379006e-5, 0.00046621695982040287, 0.0011175187708306302,
    -0.002574517688136797, -0.0090079761367306239, 0.015880544863669451, 0.034555027573297733,
    -0.082301927106299818, -0.071799821619154834, 0.42848347637736998, 0.79377722262608717,
    0.4051769024091182, -0.061123390002972541, -0.065771911281469367, 0.023452696142077166,
    0.0077825964256727458, -0.0037935128643808017};
inline constexpr double kcoif3_hi[18] = {
    -0.0037935128643808017, -0.0077825964256727458, 0.023452696142077166, 0.065771911281469367,
    -0.061123390002972541, -0.4051769024091182, 0.79377722262608717, -0.42848347637736998,
    -0.071799821619154834, 0.082301927106299818, 0.034555027573297733, -0.015880544863669451,
    -0.0090079761367306239, 0.002574517688136797, 0.0011175187708306302, -0.00046621695982040287,
    -7.0983302506379006e-5, 3.4599773197272774e-5};

inline constexpr double kcoif5_lo[30] = {
    -9.6040101127678921e-8, -1.6237995172048335e-7, 2.0612203985788782e-6, 3.7007277113394795e-6,
    -2.1270221672515614e-5, -4.1219861924265502e-5, 0.00014035632812373243, 0.00030185794166824475,
    -0.00063755892612588111, -0.0016616273039298788, 0.0024315754425382885, 0.0067615202206204168,
    -0.009159507338676163, -0.019758391600965465, 0.032674799467057351, 0.041287530472117831,
    -0.10556315130733723, -0.062037751574981951, 0.43798230665916332, 0.77429362286032745,
    0.42157126673075435, -0.052046670253554757, -0.091921588060086083, 0.028169744270532352,
    0.023408322118927783, -0.010131584846900275, -0.0041593126275786397, 0.0021782943778456948,
    0.00035857774116175769, -0.000212081862067494};
inline constexpr double kcoif5_hi[30] = {
    -0.000212081862067494, -0.00035857774116175769, 0.0021782943778456948, 0.0041593126275786397,
    -0.010131584846900275, -0.023408322118927783, 0.028169744270532352, 0.091921588060086083,
    -0.052046670253554757, -0.42157126673075435, 0.77429362286032745, -0.43798230665916332,
    -0.062037751574981951, 0.10556315130733723, 0.041287530472117831, -0.032674799467057351,
    -0.019758391600965465, 0.009159507338676163, 0.0067615202206204168, -0.0024315754425382885,
    -0.0016616273039298788, 0.00063755892612588111, 0.00030185794166824475, -0.00014035632812373243,
    -4.1219861924265502e-5, 2.1270221672515614e-5, 3.7007277113394795e-6, -2.0612203985788782e-6,
    -1.6237995172048335e-7, 9.6040101127678921e-8};

// CDF 9/7 analysis pair (biorthogonal; only sum(h_lo) = sqrt(2) applies).
inline constexpr double kbior4_4_lo[9] = {
    0.037828455506995461, -0.023849465019380002, -0.11062440441842341, 0.37740285561265376,
    0.85269867900940342, 0.37740285561265376, -0.11062440441842341, -0.023849465019380002,
    0.037828455506995461};
inline constexpr double kbior4_4_hi[7] = {
    -0.064538882628938439, 0.040689417609558437, 0.4180922732222122, -0.7884856164056644,
    0.4180922732222122, 0.040689417609558437, -0.064538882628938439};

struct TapPair {
    std::string name;
    std::vector<double> lo;
    std::vector<double> hi;
    bool orthogonal = true;
};

inline TapPair family(const std::string& name) {
    auto mk = [&](const double* lo, std::size_t nl, const double* hi, std::size_t nh, bool orth) {
        return TapPair{name, std::vector<double>(lo, lo + nl), std::vector<double>(hi, hi + nh), orth};
    };
    if (name == "haar") return mk(khaar_lo, 2, khaar_hi, 2, true);
    if (name == "db4") return mk(kdb4_lo, 8, kdb4_hi, 8, true);
    if (name == "db6") return mk(kdb6_lo, 12, kdb6_hi, 12, true);
    if (name == "sym4") return mk(ksym4_lo, 8, ksym4_hi, 8, true);
    if (name == "sym5") return mk(ksym5_lo, 10, ksym5_hi, 10, true);
    if (name == "coif3") return mk(kcoif3_lo, 18, kcoif3_hi, 18, true);
    if (name == "coif5") return mk(kcoif5_lo, 30, kcoif5_hi, 30, true);
    if (name == "bior4.4") return mk(kbior4_4_lo, 9, kbior4_4_hi, 7, false);
    throw ConfigError("unknown wavelet basis '" + name + "'");
}

// Linear interpolation onto K points over the normalized index grid,
// rescaled so the L1 norm of the input is preserved.
inline std::vector<double> resample_taps(const std::vector<double>& h, std::size_t K) {
    if (h.size() < 2 || K < 2) throw ShapeError("resample_taps: need at least 2 taps");
    std::size_t k0 = h.size();
    std::vector<double> out(K);
    if (K == k0) {
        out = h;
    } else {
        for (std::size_t v = 0; v < K; ++v) {
            double pos = static_cast<double>(v) * static_cast<double>(k0 - 1) / static_cast<double>(K - 1);
            std::size_t i = static_cast<std::size_t>(pos);
            if (i >= k0 - 1) {
                out[v] = h[k0 - 1];
            } else {
                double frac = pos - static_cast<double>(i);
                out[v] = h[i] * (1.0 - frac) + h[i + 1] * frac;
            }
        }
    }
    double l1_in = 0.0, l1_out = 0.0;
    for (double x : h) l1_in += std::fabs(x);
    for (double x : out) l1_out += std::fabs(x);
    if (l1_out == 0.0) throw NumericError("resample_taps: degenerate filter");
    double s = l1_in / l1_out;
    for (double& x : out) x *= s;
    return out;
}

}  // namespace pwv::wavelets
