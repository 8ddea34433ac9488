#pragma once

#include <string>
#include <vector>

#include "physiowave/masking.hpp"

// Pre-norm Transformer encoder with rotary attention, a shallow vanilla
// decoder, and the masked patch reconstruction objective.

namespace pwv {

struct EncoderConfig {
    std::size_t dim = 256;
    std::size_t layers = 6;
    std::size_t heads = 8;
    double mlp_ratio = 4.0;
    double drop_path = 0.10;
    std::size_t dec_dim = 256;
    std::size_t dec_layers = 8;
    std::size_t dec_heads = 8;

    std::size_t mlp_dim() const { return static_cast<std::size_t>(mlp_ratio * static_cast<double>(dim)); }

    static EncoderConfig preset(const std::string& name) {
        EncoderConfig cfg;
        if (name == "small") {
            cfg.dim = 256; cfg.layers = 6; cfg.heads = 8;
        } else if (name == "base") {
            cfg.dim = 384; cfg.layers = 8; cfg.heads = 12;
        } else if (name == "large") {
            cfg.dim = 512; cfg.layers = 12; cfg.heads = 16;
        } else {
            throw ConfigError("unknown size preset '" + name + "' (small|base|large)");
        }
        return cfg;
    }
};

template <typename T>
struct TransformerBlock {
    Parameter<T> ln1_g, ln1_b;
    Parameter<T> wq, bq, wk, bk, wv, bv, wo, bo;
    Parameter<T> ln2_g, ln2_b;
    Parameter<T> w1, b1, w2, b2;

    std::vector<Parameter<T>*> parameters() {
        return {&ln1_g, &ln1_b, &wq, &bq, &wk, &bk, &wv, &bv, &wo, &bo,
                &ln2_g, &ln2_b, &w1, &b1, &w2, &b2};
    }
};

template <typename T>
struct ModelState {
    EncoderConfig cfg;
    std::vector<TransformerBlock<T>> encoder;
    Parameter<T> enc_ln_g, enc_ln_b;
    Parameter<T> dec_proj_w, dec_proj_b;
    std::vector<TransformerBlock<T>> decoder;
    Parameter<T> dec_ln_g, dec_ln_b;
    Parameter<T> head_w, head_b;  // dec_dim -> patch width

    std::vector<Parameter<T>*> parameters() {
        std::vector<Parameter<T>*> out;
        for (auto& b : encoder)
            for (auto* p : b.parameters()) out.push_back(p);
        for (auto* p : {&enc_ln_g, &enc_ln_b, &dec_proj_w, &dec_proj_b}) out.push_back(p);
        for (auto& b : decoder)
            for (auto* p : b.parameters()) out.push_back(p);
        for (auto* p : {&dec_ln_g, &dec_ln_b, &head_w, &head_b}) out.push_back(p);
        return out;
    }

    std::size_t encoder_parameter_count() {
        std::size_t n = 0;
        for (auto& b : encoder)
            for (auto* p : b.parameters()) n += p->size();
        return n + enc_ln_g.size() + enc_ln_b.size();
    }
};

namespace detail {

template <typename T>
TransformerBlock<T> make_block(const std::string& tag, std::size_t dim, std::size_t mlp, Rng& rng) {
    TransformerBlock<T> b;
    auto ones = [&](const std::string& n) {
        Tensor<T> t({dim});
        t.fill(T(1));
        return Parameter<T>(tag + n, std::move(t));
    };
    b.ln1_g = ones("ln1_g");
    b.ln1_b = Parameter<T>(tag + "ln1_b", Tensor<T>({dim}));
    b.wq = Parameter<T>(tag + "wq", xavier<T>({dim, dim}, rng));
    b.bq = Parameter<T>(tag + "bq", Tensor<T>({dim}));
    b.wk = Parameter<T>(tag + "wk", xavier<T>({dim, dim}, rng));
    b.bk = Parameter<T>(tag + "bk", Tensor<T>({dim}));
    b.wv = Parameter<T>(tag + "wv", xavier<T>({dim, dim}, rng));
    b.bv = Parameter<T>(tag + "bv", Tensor<T>({dim}));
    b.wo = Parameter<T>(tag + "wo", xavier<T>({dim, dim}, rng));
    b.bo = Parameter<T>(tag + "bo", Tensor<T>({dim}));
    b.ln2_g = ones("ln2_g");
    b.ln2_b = Parameter<T>(tag + "ln2_b", Tensor<T>({dim}));
    b.w1 = Parameter<T>(tag + "w1", xavier<T>({dim, mlp}, rng));
    b.b1 = Parameter<T>(tag + "b1", Tensor<T>({mlp}));
    b.w2 = Parameter<T>(tag + "w2", xavier<T>({mlp, dim}, rng));
    b.b2 = Parameter<T>(tag + "b2", Tensor<T>({dim}));
    return b;
}

}  // namespace detail

template <typename T>
ModelState<T> make_model(const EncoderConfig& cfg, std::size_t patch_width, Rng& rng) {
    if (cfg.dim % cfg.heads != 0 || (cfg.dim / cfg.heads) % 2 != 0)
        throw ConfigError("model: dim/heads must be an even per-head width");
    if (cfg.dec_dim % cfg.dec_heads != 0) throw ConfigError("model: decoder dim not divisible by heads");
    ModelState<T> st;
    st.cfg = cfg;
    for (std::size_t i = 0; i < cfg.layers; ++i)
        st.encoder.push_back(detail::make_block<T>("encoder." + std::to_string(i) + ".", cfg.dim,
                                                   cfg.mlp_dim(), rng));
    Tensor<T> g({cfg.dim});
    g.fill(T(1));
    st.enc_ln_g = Parameter<T>("encoder.ln_g", std::move(g));
    st.enc_ln_b = Parameter<T>("encoder.ln_b", Tensor<T>({cfg.dim}));
    st.dec_proj_w = Parameter<T>("decoder.proj_w", detail::xavier<T>({cfg.dim, cfg.dec_dim}, rng));
    st.dec_proj_b = Parameter<T>("decoder.proj_b", Tensor<T>({cfg.dec_dim}));
    std::size_t dec_mlp = static_cast<std::size_t>(cfg.mlp_ratio * static_cast<double>(cfg.dec_dim));
    for (std::size_t i = 0; i < cfg.dec_layers; ++i)
        st.decoder.push_back(detail::make_block<T>("decoder." + std::to_string(i) + ".", cfg.dec_dim,
                                                   dec_mlp, rng));
    Tensor<T> g2({cfg.dec_dim});
    g2.fill(T(1));
    st.dec_ln_g = Parameter<T>("decoder.ln_g", std::move(g2));
    st.dec_ln_b = Parameter<T>("decoder.ln_b", Tensor<T>({cfg.dec_dim}));
    st.head_w = Parameter<T>("decoder.head_w", detail::xavier<T>({cfg.dec_dim, patch_width}, rng));
    st.head_b = Parameter<T>("decoder.head_b", Tensor<T>({patch_width}));
    return st;
}

// Stochastic depth on a residual branch: dropped with probability `rate`
// during training, otherwise rescaled to keep the expectation.
template <typename T>
Var<T> drop_path(const Var<T>& branch, double rate, bool train, Rng* rng) {
    if (!train || rate <= 0.0) return branch;
    if (rng == nullptr) throw ConfigError("drop_path: training needs an rng");
    if (rng->uniform() < rate) return scale(branch, T(0));
    return scale(branch, T(1.0 / (1.0 - rate)));
}

template <typename T>
Var<T> block_forward(TransformerBlock<T>& blk, const Var<T>& x, std::size_t heads, bool rope,
                     const std::vector<double>& positions, double dp_rate, bool train, Rng* rng) {
    auto h = layer_norm(x, blk.ln1_g.var, blk.ln1_b.var);
    auto q = affine(h, blk.wq.var, blk.bq.var);
    auto k = affine(h, blk.wk.var, blk.bk.var);
    auto v = affine(h, blk.wv.var, blk.bv.var);
    auto att = affine(attention(q, k, v, heads, rope, positions, positions), blk.wo.var, blk.bo.var);
    auto x1 = add(x, drop_path(att, dp_rate, train, rng));
    auto m = layer_norm(x1, blk.ln2_g.var, blk.ln2_b.var);
    auto mlp = affine(gelu(affine(m, blk.w1.var, blk.b1.var)), blk.w2.var, blk.b2.var);
    return add(x1, drop_path(mlp, dp_rate, train, rng));
}

// The complete token sequence (masked tokens included) passes through the
// pre-norm stack; drop-path rates rise linearly across layers.
template <typename T>
Var<T> encoder_forward(ModelState<T>& st, const Var<T>& tokens, const std::vector<double>& positions,
                       bool train = false, Rng* rng = nullptr) {
    const auto& cfg = st.cfg;
    auto x = tokens;
    for (std::size_t i = 0; i < cfg.layers; ++i) {
        double rate = cfg.layers > 1
                          ? cfg.drop_path * static_cast<double>(i) / static_cast<double>(cfg.layers - 1)
                          : 0.0;
        x = block_forward(st.encoder[i], x, cfg.heads, true, positions, rate, train, rng);
    }
    return layer_norm(x, st.enc_ln_g.var, st.enc_ln_b.var);
}

// Width projection, vanilla blocks (no rotary term), linear head back to
// patch samples.
template <typename T>
Var<T> decoder_forward(ModelState<T>& st, const Var<T>& latents, bool train = false, Rng* rng = nullptr) {
    const auto& cfg = st.cfg;
    auto x = affine(latents, st.dec_proj_w.var, st.dec_proj_b.var);
    std::vector<double> no_positions;
    for (std::size_t i = 0; i < cfg.dec_layers; ++i) {
        double rate = cfg.dec_layers > 1
                          ? cfg.drop_path * static_cast<double>(i) / static_cast<double>(cfg.dec_layers - 1)
                          : 0.0;
        x = block_forward(st.decoder[i], x, cfg.dec_heads, false, no_positions, rate, train, rng);
    }
    x = layer_norm(x, st.dec_ln_g.var, st.dec_ln_b.var);
    return affine(x, st.head_w.var, st.head_b.var);
}

// Mean Smooth-L1 over only the masked patches; unmasked reconstructions do
// not touch the value or the gradient.
template <typename T>
Var<T> pretrain_loss(const Var<T>& recon, const PatchGrid<T>& grid, const MaskPlan& plan) {
    std::vector<std::uint8_t> masked(plan.keep.size());
    for (std::size_t i = 0; i < masked.size(); ++i) masked[i] = plan.keep[i] ? 0 : 1;
    return smooth_l1_masked_rows(recon, grid.patches, masked);
}

}  // namespace pwv
