#pragma once

#include <algorithm>
#include <complex>
#include <numeric>
#include <vector>

#include "physiowave/ops.hpp"

// Frequency-guided masking over multi-band patches plus token embedding.
// Scores are computed per row on detached values; the binary plan then
// drives the differentiable embedding path.

namespace pwv {

template <typename T>
struct PatchGrid {
    std::size_t rows = 0;    // R = (L+1)C
    std::size_t npatch = 0;  // N = floor(T/w)
    std::size_t width = 0;   // w
    Tensor<T> patches;       // [R*N, w], detached copies of the map

    const T* patch(std::size_t r, std::size_t n) const { return &patches.data[(r * npatch + n) * width]; }
};

template <typename T>
PatchGrid<T> patchify(const Tensor<T>& spec, std::size_t w) {
    if (spec.ndim() != 2 || w < 2) throw ShapeError("patchify: need 2-d map and w >= 2");
    if (w > spec.shape[1]) throw ShapeError("patchify: patch wider than the time axis");
    PatchGrid<T> grid;
    grid.rows = spec.shape[0];
    grid.npatch = spec.shape[1] / w;
    grid.width = w;
    grid.patches = Tensor<T>({grid.rows * grid.npatch, w});
    for (std::size_t r = 0; r < grid.rows; ++r)
        for (std::size_t n = 0; n < grid.npatch; ++n)
            std::copy(&spec.data[r * spec.shape[1] + n * w], &spec.data[r * spec.shape[1] + (n + 1) * w],
                      &grid.patches.data[(r * grid.npatch + n) * w]);
    return grid;
}

namespace detail {

// Iterative radix-2 FFT; callers fall back to the direct DFT for other sizes.
inline void fft_pow2(std::vector<std::complex<double>>& a) {
    std::size_t n = a.size();
    for (std::size_t i = 1, j = 0; i < n; ++i) {
        std::size_t bit = n >> 1;
        for (; j & bit; bit >>= 1) j ^= bit;
        j ^= bit;
        if (i < j) std::swap(a[i], a[j]);
    }
    for (std::size_t len = 2; len <= n; len <<= 1) {
        double ang = -2.0 * M_PI / static_cast<double>(len);
        std::complex<double> wl(std::cos(ang), std::sin(ang));
        for (std::size_t i = 0; i < n; i += len) {
            std::complex<double> w(1.0);
            for (std::size_t j = 0; j < len / 2; ++j) {
                auto u = a[i + j], v = a[i + j + len / 2] * w;
                a[i + j] = u + v;
                a[i + j + len / 2] = u - v;
                w *= wl;
            }
        }
    }
}

}  // namespace detail

// e = sum_k |F_k| over all w unnormalized DFT bins of the patch.
template <typename T>
double spectral_energy(const T* patch, std::size_t w) {
    std::vector<std::complex<double>> f(w);
    for (std::size_t i = 0; i < w; ++i) f[i] = static_cast<double>(patch[i]);
    if ((w & (w - 1)) == 0) {
        detail::fft_pow2(f);
    } else {
        std::vector<std::complex<double>> out(w);
        for (std::size_t k = 0; k < w; ++k) {
            std::complex<double> acc(0.0);
            for (std::size_t i = 0; i < w; ++i) {
                double ang = -2.0 * M_PI * static_cast<double>(k * i) / static_cast<double>(w);
                acc += f[i] * std::complex<double>(std::cos(ang), std::sin(ang));
            }
            out[k] = acc;
        }
        f = std::move(out);
    }
    double e = 0;
    for (const auto& v : f) e += std::abs(v);
    return e;
}

template <typename T>
std::vector<double> grid_energies(const PatchGrid<T>& grid) {
    std::vector<double> e(grid.rows * grid.npatch);
    for (std::size_t r = 0; r < grid.rows; ++r)
        for (std::size_t n = 0; n < grid.npatch; ++n)
            e[r * grid.npatch + n] = spectral_energy(grid.patch(r, n), grid.width);
    return e;
}

struct MaskPlan {
    std::size_t rows = 0;
    std::size_t npatch = 0;
    double mask_ratio = 0;
    double alpha_blend = 0;
    std::uint64_t seed = 0;
    std::vector<double> energy;       // raw e, row-major
    std::vector<double> norm_energy;  // per-row min-max normalized
    std::vector<double> noise;        // z ~ U(0,1)
    std::vector<double> score;        // s = alpha*e + (1-alpha)*z
    std::vector<std::size_t> order;   // per-row ascending argsort of s
    std::vector<std::uint8_t> keep;   // m, 1 = keep

    std::size_t masked_in_row(std::size_t r) const {
        std::size_t m = 0;
        for (std::size_t n = 0; n < npatch; ++n) m += keep[r * npatch + n] == 0;
        return m;
    }
    std::size_t masked_total() const {
        std::size_t m = 0;
        for (auto k : keep) m += k == 0;
        return m;
    }
};

// Per row: min-max normalize e, blend with uniform noise, keep the
// floor((1-rho)N) lowest blended scores (stable ascending sort, index
// tie-break), mask the rest. Noise streams are forked per (seed, row).
inline MaskPlan blend_and_select(const std::vector<double>& energies, std::size_t rows,
                                 std::size_t npatch, double rho, double alpha_blend,
                                 std::uint64_t seed) {
    if (energies.size() != rows * npatch) throw ShapeError("blend_and_select: energy size mismatch");
    if (rho < 0.0 || rho >= 1.0) throw ConfigError("blend_and_select: need 0 <= rho < 1");
    if (alpha_blend < 0.0 || alpha_blend > 1.0) throw ConfigError("blend_and_select: need 0 <= alpha <= 1");
    MaskPlan plan;
    plan.rows = rows;
    plan.npatch = npatch;
    plan.mask_ratio = rho;
    plan.alpha_blend = alpha_blend;
    plan.seed = seed;
    plan.energy = energies;
    plan.norm_energy.resize(rows * npatch);
    plan.noise.resize(rows * npatch);
    plan.score.resize(rows * npatch);
    plan.order.resize(rows * npatch);
    plan.keep.assign(rows * npatch, 1);

    std::size_t keep_count = static_cast<std::size_t>((1.0 - rho) * static_cast<double>(npatch));
    Rng base(seed);
    for (std::size_t r = 0; r < rows; ++r) {
        const double* e = &energies[r * npatch];
        double lo = *std::min_element(e, e + npatch);
        double hi = *std::max_element(e, e + npatch);
        Rng stream = base.fork(r);
        for (std::size_t n = 0; n < npatch; ++n) {
            double en = (hi > lo) ? (e[n] - lo) / (hi - lo) : 0.0;
            double z = stream.uniform();
            plan.norm_energy[r * npatch + n] = en;
            plan.noise[r * npatch + n] = z;
            plan.score[r * npatch + n] = alpha_blend * en + (1.0 - alpha_blend) * z;
        }
        std::size_t* idx = &plan.order[r * npatch];
        std::iota(idx, idx + npatch, std::size_t(0));
        std::stable_sort(idx, idx + npatch, [&](std::size_t a, std::size_t b) {
            return plan.score[r * npatch + a] < plan.score[r * npatch + b];
        });
        for (std::size_t j = keep_count; j < npatch; ++j) plan.keep[r * npatch + idx[j]] = 0;
    }
    return plan;
}

// ------------------------------------------------------------ tokenizer

template <typename T>
struct TokenizerState {
    std::size_t width = 0;   // w
    std::size_t dim = 0;     // D
    std::size_t max_tokens = 2048;
    Parameter<T> proj_w, proj_b, mask_token, row_embed;
};

template <typename T>
TokenizerState<T> make_tokenizer(std::size_t w, std::size_t dim, std::size_t rows,
                                 std::size_t max_tokens, Rng& rng) {
    TokenizerState<T> st;
    st.width = w;
    st.dim = dim;
    st.max_tokens = max_tokens;
    st.proj_w = Parameter<T>("tokenizer.proj_w", detail::xavier<T>({w, dim}, rng));
    st.proj_b = Parameter<T>("tokenizer.proj_b", Tensor<T>({dim}));
    Tensor<T> mask({dim});
    for (auto& v : mask.data) v = T(rng.normal() * 0.02);
    st.mask_token = Parameter<T>("tokenizer.mask_token", std::move(mask));
    Tensor<T> rows_t({rows, dim});
    for (auto& v : rows_t.data) v = T(rng.normal() * 0.02);
    st.row_embed = Parameter<T>("tokenizer.row_embed", std::move(rows_t));
    return st;
}

// Fixed sinusoid: even components sin(pos / 10000^(2j/D)), odd components
// the matching cos.
template <typename T>
Tensor<T> positional_sinusoid(std::size_t dim, std::size_t pos) {
    Tensor<T> out({dim});
    for (std::size_t j = 0; j + 1 < dim; j += 2) {
        double rate = std::pow(10000.0, -static_cast<double>(j) / static_cast<double>(dim));
        double angle = static_cast<double>(pos) * rate;
        out[j] = T(std::sin(angle));
        out[j + 1] = T(std::cos(angle));
    }
    return out;
}

template <typename T>
struct TokenSeq {
    Var<T> tokens;                  // [(R*N), D]
    std::vector<double> positions;  // temporal patch index per token (rope)
    std::size_t rows = 0, npatch = 0, dim = 0;
};

// Patch projection with a shared affine, masked-token substitution, fixed
// temporal sinusoid, and a learnable row identity so subband rows sharing a
// temporal slot stay distinguishable.
template <typename T>
TokenSeq<T> embed_tokens(TokenizerState<T>& st, const Var<T>& grid_patches, const MaskPlan& plan) {
    std::size_t count = plan.rows * plan.npatch;
    if (grid_patches.value().shape != std::vector<std::size_t>{count, st.width})
        throw ShapeError("embed_tokens: patch matrix does not match the plan");
    if (count > st.max_tokens)
        throw ShapeError("embed_tokens: token count " + std::to_string(count) + " exceeds the cap " +
                         std::to_string(st.max_tokens));
    if (st.row_embed.value().shape[0] != plan.rows) throw ShapeError("embed_tokens: row embedding mismatch");

    auto projected = affine(grid_patches, st.proj_w.var, st.proj_b.var);

    Tensor<T> keep_m({count, st.dim}), drop_m({count, st.dim});
    for (std::size_t i = 0; i < count; ++i)
        for (std::size_t j = 0; j < st.dim; ++j) {
            keep_m.at(i, j) = plan.keep[i] ? T(1) : T(0);
            drop_m.at(i, j) = plan.keep[i] ? T(0) : T(1);
        }
    auto tokens = add(mul(projected, Var<T>::constant(std::move(keep_m))),
                      mul(bcast_row(st.mask_token.var, count), Var<T>::constant(std::move(drop_m))));

    Tensor<T> sinus({count, st.dim});
    for (std::size_t n = 0; n < plan.npatch; ++n) {
        auto pe = positional_sinusoid<T>(st.dim, n);
        for (std::size_t r = 0; r < plan.rows; ++r)
            std::copy(pe.data.begin(), pe.data.end(), &sinus.data[(r * plan.npatch + n) * st.dim]);
    }
    tokens = add(tokens, Var<T>::constant(std::move(sinus)));
    tokens = add(tokens, repeat_rows(st.row_embed.var, plan.npatch));

    TokenSeq<T> seq;
    seq.tokens = tokens;
    seq.rows = plan.rows;
    seq.npatch = plan.npatch;
    seq.dim = st.dim;
    seq.positions.resize(count);
    for (std::size_t i = 0; i < count; ++i) seq.positions[i] = static_cast<double>(i % plan.npatch);
    return seq;
}

}  // namespace pwv
