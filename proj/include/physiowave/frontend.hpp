#pragma once

#include <string>
#include <vector>

#include "physiowave/ops.hpp"
#include "physiowave/wavelets.hpp"

// Learnable wavelet decomposition: candidate-bank selection, L-level
// analysis with per-channel soft gating, cross-scale fusion, and assembly
// of the (L+1)C x T multi-band map.

namespace pwv {

struct FrontendConfig {
    std::size_t channels = 16;
    std::size_t levels = 3;
    std::size_t kernel = 16;
    std::vector<std::string> bases = {"db4", "bior4.4", "sym5", "coif5"};
    std::size_t default_basis = 0;
    std::size_t selector_hidden = 64;
    std::size_t caffn_segment = 16;
    std::size_t caffn_kernel = 3;
    // test hooks: pin every gate to 1 / skip the caffn conv pair
    bool force_gate_one = false;
    bool caffn_identity = false;

    std::size_t caffn_heads() const {
        std::size_t rows = 2 * channels;
        if (rows % 4 == 0) return 4;
        return rows % 2 == 0 ? 2 : 1;
    }
};

// Per-level gate head: learnable-query attention pooling over time for a
// per-channel context, then a pointwise affine over [local, context].
template <typename T>
struct GateHead {
    Parameter<T> attn_w, val_w, val_b, mix_local, mix_ctx, mix_b;
};

template <typename T>
struct CaffnBlock {
    Parameter<T> pw_w, pw_b;  // channel aggregation 2C -> 2C
    Parameter<T> dw_k;        // depthwise temporal taps
    Parameter<T> beta;        // cross-scale fusion weight, starts at 0
};

template <typename T>
struct FrontendState {
    FrontendConfig cfg;

    // candidate bank (resampled to the unified kernel length)
    Tensor<T> cand_lo, cand_hi;        // [M, K] constants
    std::vector<T> default_lo, default_hi;  // resampled default pair
    Parameter<T> depth_lo, depth_hi;   // per-channel learnable taps [C, K]

    Parameter<T> sel_w1, sel_b1, sel_w2, sel_b2;

    std::vector<GateHead<T>> gates;    // levels 1..L-1
    std::vector<CaffnBlock<T>> caffn;  // levels 1..L

    std::vector<Parameter<T>*> parameters() {
        std::vector<Parameter<T>*> out{&depth_lo, &depth_hi, &sel_w1, &sel_b1, &sel_w2, &sel_b2};
        for (auto& g : gates)
            for (auto* p : {&g.attn_w, &g.val_w, &g.val_b, &g.mix_local, &g.mix_ctx, &g.mix_b})
                out.push_back(p);
        for (auto& c : caffn)
            for (auto* p : {&c.pw_w, &c.pw_b, &c.dw_k, &c.beta}) out.push_back(p);
        return out;
    }
};

// Copies the resampled default candidate into every channel's depthwise
// taps; before any optimizer step the effective filters equal the default.
template <typename T>
void init_depthwise(FrontendState<T>& st) {
    const auto& cfg = st.cfg;
    if (cfg.default_basis >= cfg.bases.size()) throw ConfigError("default wavelet index out of range");
    for (std::size_t c = 0; c < cfg.channels; ++c)
        for (std::size_t u = 0; u < cfg.kernel; ++u) {
            st.depth_lo.value().at(c, u) = st.default_lo[u];
            st.depth_hi.value().at(c, u) = st.default_hi[u];
        }
}

template <typename T>
FrontendState<T> make_frontend(const FrontendConfig& cfg, Rng& rng) {
    if (cfg.bases.empty()) throw ConfigError("frontend: need at least one wavelet basis");
    if (cfg.levels < 1) throw ConfigError("frontend: need at least one level");
    FrontendState<T> st;
    st.cfg = cfg;
    std::size_t m = cfg.bases.size(), k = cfg.kernel, c = cfg.channels;

    st.cand_lo = Tensor<T>({m, k});
    st.cand_hi = Tensor<T>({m, k});
    for (std::size_t w = 0; w < m; ++w) {
        auto fam = wavelets::family(cfg.bases[w]);
        auto lo = wavelets::resample_taps(fam.lo, k);
        auto hi = wavelets::resample_taps(fam.hi, k);
        for (std::size_t u = 0; u < k; ++u) {
            st.cand_lo.at(w, u) = T(lo[u]);
            st.cand_hi.at(w, u) = T(hi[u]);
        }
    }
    st.default_lo.resize(k);
    st.default_hi.resize(k);
    for (std::size_t u = 0; u < k; ++u) {
        st.default_lo[u] = st.cand_lo.at(cfg.default_basis, u);
        st.default_hi[u] = st.cand_hi.at(cfg.default_basis, u);
    }

    st.depth_lo = Parameter<T>("frontend.depth_lo", Tensor<T>({c, k}));
    st.depth_hi = Parameter<T>("frontend.depth_hi", Tensor<T>({c, k}));
    init_depthwise(st);

    st.sel_w1 = Parameter<T>("frontend.sel_w1", detail::xavier<T>({c, cfg.selector_hidden}, rng));
    st.sel_b1 = Parameter<T>("frontend.sel_b1", Tensor<T>({cfg.selector_hidden}));
    st.sel_w2 = Parameter<T>("frontend.sel_w2", Tensor<T>({cfg.selector_hidden, m}));  // zero: alpha uniform
    st.sel_b2 = Parameter<T>("frontend.sel_b2", Tensor<T>({m}));

    for (std::size_t l = 0; l + 1 < cfg.levels; ++l) {
        std::string tag = "frontend.gate" + std::to_string(l + 1) + ".";
        GateHead<T> g;
        g.attn_w = Parameter<T>(tag + "attn_w", Tensor<T>({1}, {T(0.1)}));
        g.val_w = Parameter<T>(tag + "val_w", Tensor<T>({1}, {T(1)}));
        g.val_b = Parameter<T>(tag + "val_b", Tensor<T>({1}));
        g.mix_local = Parameter<T>(tag + "mix_local", Tensor<T>({1}, {T(1)}));
        g.mix_ctx = Parameter<T>(tag + "mix_ctx", Tensor<T>({1}, {T(1)}));
        g.mix_b = Parameter<T>(tag + "mix_b", Tensor<T>({1}, {T(2)}));  // start near the current level
        st.gates.push_back(std::move(g));
    }

    for (std::size_t l = 0; l < cfg.levels; ++l) {
        std::string tag = "frontend.caffn" + std::to_string(l + 1) + ".";
        CaffnBlock<T> blk;
        Tensor<T> eye({2 * c, 2 * c});
        for (std::size_t i = 0; i < 2 * c; ++i) eye.at(i, i) = T(1);
        blk.pw_w = Parameter<T>(tag + "pw_w", std::move(eye));
        blk.pw_b = Parameter<T>(tag + "pw_b", Tensor<T>({2 * c}));
        Tensor<T> delta({2 * c, cfg.caffn_kernel});
        for (std::size_t i = 0; i < 2 * c; ++i) delta.at(i, cfg.caffn_kernel / 2) = T(1);
        blk.dw_k = Parameter<T>(tag + "dw_k", std::move(delta));
        blk.beta = Parameter<T>(tag + "beta", Tensor<T>({1}));
        st.caffn.push_back(std::move(blk));
    }
    return st;
}

// alpha = softmax(MLP(mean over time of x)); the zero final layer makes the
// initial mixture uniform.
template <typename T>
Var<T> select_alpha(FrontendState<T>& st, const Var<T>& x) {
    auto pooled = reshape(rows_mean(x), {1, st.cfg.channels});
    auto hidden = gelu(affine(pooled, st.sel_w1.var, st.sel_b1.var));
    auto scores = affine(hidden, st.sel_w2.var, st.sel_b2.var);
    return reshape(softmax(scores), {st.cfg.bases.size()});
}

// Effective per-channel filters: depthwise taps plus the deviation of the
// convex bank mixture from the default taps (equal to the depthwise taps
// when alpha is still uniform over a single candidate, and exactly the
// default pair right after initialization).
template <typename T>
std::pair<Var<T>, Var<T>> combine_filters(FrontendState<T>& st, const Var<T>& alpha) {
    std::size_t m = st.cfg.bases.size(), k = st.cfg.kernel, c = st.cfg.channels;
    auto arow = reshape(alpha, {1, m});
    Tensor<T> def_lo({c, k}), def_hi({c, k});
    for (std::size_t i = 0; i < c; ++i)
        for (std::size_t u = 0; u < k; ++u) {
            def_lo.at(i, u) = st.default_lo[u];
            def_hi.at(i, u) = st.default_hi[u];
        }
    auto mix_lo = bcast_row(reshape(matmul(arow, Var<T>::constant(st.cand_lo)), {k}), c);
    auto mix_hi = bcast_row(reshape(matmul(arow, Var<T>::constant(st.cand_hi)), {k}), c);
    auto eff_lo = add(st.depth_lo.var, sub(mix_lo, Var<T>::constant(def_lo)));
    auto eff_hi = add(st.depth_hi.var, sub(mix_hi, Var<T>::constant(def_hi)));
    return {eff_lo, eff_hi};
}

// One analysis stage: filter and decimate both subbands (Eq-style
// correlation at stride 2 with right zero padding).
template <typename T>
std::pair<Var<T>, Var<T>> analysis_level(const Var<T>& a_in, const Var<T>& k_lo, const Var<T>& k_hi) {
    return {conv1d_depthwise_down2(a_in, k_lo), conv1d_depthwise_down2(a_in, k_hi)};
}

// Per-channel gate G in (0,1): softmax attention pooling over time with a
// learnable query builds the context, a pointwise affine mixes it with the
// local value.
template <typename T>
Var<T> gate_values(FrontendState<T>& st, std::size_t level_idx, const Var<T>& a_level) {
    if (st.cfg.force_gate_one)
        return Var<T>::constant(Tensor<T>(a_level.value().shape, std::vector<T>(a_level.value().size(), T(1))));
    GateHead<T>& g = st.gates[level_idx];
    std::size_t t_len = a_level.value().shape[1];
    auto weights = softmax(scale_var(a_level, g.attn_w.var));
    auto values = shift_var(scale_var(a_level, g.val_w.var), g.val_b.var);
    auto context = rows_sum(mul(weights, values));
    auto mixed = add(scale_var(a_level, g.mix_local.var),
                     scale_var(bcast_col(context, t_len), g.mix_ctx.var));
    return sigmoid(shift_var(mixed, g.mix_b.var));
}

// hat = G (.) current + (1 - G) (.) upsampled deeper band.
template <typename T>
std::pair<Var<T>, Var<T>> gate_blend(const Var<T>& a_l, const Var<T>& d_l, const Var<T>& a_next,
                                     const Var<T>& d_next, const Var<T>& gate) {
    if (a_next.value().shape[1] * 2 != a_l.value().shape[1])
        throw ShapeError("gate_blend: deeper level must have half the length");
    auto keep = gate;
    auto pull = one_minus(gate);
    auto a_hat = add(mul(keep, a_l), mul(pull, upsample_nearest2(a_next)));
    auto d_hat = add(mul(keep, d_l), mul(pull, upsample_nearest2(d_next)));
    return {a_hat, d_hat};
}

// CAFFN: pointwise channel aggregation + depthwise temporal convolution
// (both initialized to the identity), then cross-scale attention over
// segment-pooled summaries of shallower refined maps weighted by beta.
// Returns the refined map and appends its summary for deeper levels.
template <typename T>
Var<T> caffn_fuse(FrontendState<T>& st, std::size_t level_idx, const Var<T>& pair,
                  std::vector<Var<T>>& shallower_summaries) {
    const auto& cfg = st.cfg;
    CaffnBlock<T>& blk = st.caffn[level_idx];
    std::size_t t_len = pair.value().shape[1];
    if (t_len % cfg.caffn_segment != 0) throw ShapeError("caffn: length not divisible by segment");

    Var<T> u = pair;
    if (!cfg.caffn_identity) {
        auto mixed = add(matmul(blk.pw_w.var, pair), bcast_col(blk.pw_b.var, t_len));
        u = conv1d_depthwise_same(mixed, blk.dw_k.var);
    }

    auto summary = transpose(segment_mean(u, cfg.caffn_segment));  // [T/seg, 2C]
    Var<T> kv = shallower_summaries.empty() ? summary : concat_rows(shallower_summaries);
    auto attended = attention(summary, kv, kv, cfg.caffn_heads());
    auto up = repeat_cols(transpose(attended), cfg.caffn_segment);
    auto y = add(u, scale_var(up, blk.beta.var));
    shallower_summaries.push_back(transpose(segment_mean(y, cfg.caffn_segment)));
    return y;
}

// Rows ordered d(1)...d(L), a(L); every input must already sit at length T.
template <typename T>
Var<T> assemble_spec(const std::vector<Var<T>>& refined, std::size_t channels) {
    std::vector<Var<T>> rows;
    for (const auto& y : refined) rows.push_back(slice_rows(y, channels, 2 * channels));
    rows.push_back(slice_rows(refined.back(), 0, channels));
    return concat_rows(rows);
}

// Forward-pass snapshots used by tests and the inspect command.
template <typename T>
struct FrontendTrace {
    Tensor<T> alpha;
    std::vector<Tensor<T>> a_dec, d_dec;  // decimated analysis bands per level
    std::vector<Tensor<T>> gate;          // per blended level
};

template <typename T>
Var<T> frontend_forward(FrontendState<T>& st, const Tensor<T>& x, FrontendTrace<T>* trace = nullptr) {
    const auto& cfg = st.cfg;
    if (x.ndim() != 2 || x.shape[0] != cfg.channels) throw ShapeError("frontend: input must be [C,T]");
    std::size_t t_len = x.shape[1];
    if (t_len % (std::size_t(1) << cfg.levels) != 0)
        throw ShapeError("frontend: T must be divisible by 2^levels");

    auto xin = Var<T>::constant(x);
    auto alpha = select_alpha(st, xin);
    auto [k_lo, k_hi] = combine_filters(st, alpha);
    if (trace) trace->alpha = alpha.value();

    std::vector<Var<T>> a(cfg.levels + 1), d(cfg.levels + 1);
    a[0] = xin;
    for (std::size_t l = 1; l <= cfg.levels; ++l) {
        auto [al, dl] = analysis_level(a[l - 1], k_lo, k_hi);
        a[l] = al;
        d[l] = dl;
        if (trace) {
            trace->a_dec.push_back(al.value());
            trace->d_dec.push_back(dl.value());
        }
    }

    std::vector<Var<T>> refined;
    std::vector<Var<T>> summaries;
    for (std::size_t l = 1; l <= cfg.levels; ++l) {
        Var<T> a_hat = a[l], d_hat = d[l];
        if (l < cfg.levels) {
            auto gate = gate_values(st, l - 1, a[l]);
            if (trace) trace->gate.push_back(gate.value());
            auto blended = gate_blend(a[l], d[l], a[l + 1], d[l + 1], gate);
            a_hat = blended.first;
            d_hat = blended.second;
        }
        auto pair = concat_rows<T>({a_hat, d_hat});
        std::size_t factor = std::size_t(1) << l;
        auto full = repeat_cols(pair, factor);
        refined.push_back(caffn_fuse(st, l - 1, full, summaries));
    }
    return assemble_spec(refined, cfg.channels);
}

}  // namespace pwv
