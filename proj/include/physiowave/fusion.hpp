#pragma once

#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "physiowave/model.hpp"

// Downstream heads: mean-pool + two-layer MLP classification and
// multimodal logit fusion with softmax-constrained learnable weights.

namespace pwv {

struct HeadConfig {
    std::size_t dim = 64;
    std::size_t hidden = 0;  // 0 -> 2*dim
    std::size_t classes = 2;

    std::size_t hidden_dim() const { return hidden ? hidden : 2 * dim; }
};

template <typename T>
struct ClassifierHead {
    HeadConfig cfg;
    Parameter<T> w1, b1, w2, b2;

    std::vector<Parameter<T>*> parameters() { return {&w1, &b1, &w2, &b2}; }
};

template <typename T>
ClassifierHead<T> make_head(const HeadConfig& cfg, Rng& rng, const std::string& tag = "head.") {
    if (cfg.classes < 2) throw ConfigError("head: need at least two classes");
    ClassifierHead<T> h;
    h.cfg = cfg;
    h.w1 = Parameter<T>(tag + "w1", detail::xavier<T>({cfg.dim, cfg.hidden_dim()}, rng));
    h.b1 = Parameter<T>(tag + "b1", Tensor<T>({cfg.hidden_dim()}));
    h.w2 = Parameter<T>(tag + "w2", detail::xavier<T>({cfg.hidden_dim(), cfg.classes}, rng));
    h.b2 = Parameter<T>(tag + "b2", Tensor<T>({cfg.classes}));
    return h;
}

// Mean over tokens, then the lightweight two-layer MLP. Returns [1, n].
template <typename T>
Var<T> pool_and_classify(ClassifierHead<T>& head, const Var<T>& latents) {
    if (latents.value().ndim() != 2 || latents.value().shape[0] == 0)
        throw ShapeError("pool_and_classify: need a non-empty token matrix");
    if (latents.value().shape[1] != head.cfg.dim) throw ShapeError("pool_and_classify: width mismatch");
    auto pooled = reshape(cols_mean(latents), {1, head.cfg.dim});
    auto hidden = gelu(affine(pooled, head.w1.var, head.b1.var));
    return affine(hidden, head.w2.var, head.b2.var);
}

template <typename T>
struct FusionState {
    std::vector<std::string> modalities;
    Parameter<T> fusion_logits;  // one scalar per modality; alpha = softmax

    explicit FusionState(std::vector<std::string> names)
        : modalities(std::move(names)),
          fusion_logits("fusion.logits", Tensor<T>({modalities.size()})) {
        if (modalities.empty()) throw ConfigError("fusion: need at least one modality");
    }

    Var<T> alpha() { return softmax(fusion_logits.var); }

    Tensor<T> alpha_value() {
        auto a = softmax(Var<T>::constant(fusion_logits.value()));
        return a.value();
    }
};

// z_fused = sum_m alpha_m z_m; every z_m is [B, n].
template <typename T>
Var<T> fuse_logits(FusionState<T>& fusion, const std::vector<Var<T>>& per_modality) {
    if (per_modality.size() != fusion.modalities.size())
        throw ShapeError("fuse_logits: modality count mismatch");
    auto a = fusion.alpha();
    Var<T> fused;
    for (std::size_t m = 0; m < per_modality.size(); ++m) {
        if (!per_modality[m].value().same_shape(per_modality[0].value()))
            throw ShapeError("fuse_logits: logit shapes differ across modalities");
        auto am = reshape(slice_rows(reshape(a, {per_modality.size(), 1}), m, m + 1), {1});
        auto term = scale_var(per_modality[m], am);
        fused = m == 0 ? term : add(fused, term);
    }
    return fused;
}

// One probe objective evaluation: cross-entropy on the fused logits.
// Encoder latents arrive detached, so gradients can only reach the heads
// and the fusion logits by construction.
template <typename T>
Var<T> probe_loss(FusionState<T>& fusion, const std::vector<Var<T>>& per_modality,
                  const std::vector<int>& labels, double smoothing = 0.0) {
    return cross_entropy(fuse_logits(fusion, per_modality), labels, smoothing);
}

// External-logit modality: CSV of "sample_id, z_0 ... z_{n-1}" rows.
template <typename T>
std::vector<std::vector<T>> read_external_logits(const std::string& path, std::size_t classes) {
    std::ifstream f(path);
    if (!f) throw DataError("external logits: cannot open '" + path + "'");
    std::vector<std::vector<T>> rows;
    std::string line;
    bool first = true;
    while (std::getline(f, line)) {
        if (line.empty()) continue;
        if (first && line.find("sample_id") != std::string::npos) {
            first = false;
            continue;  // header row
        }
        first = false;
        std::stringstream ss(line);
        std::string cell;
        std::vector<T> vals;
        while (std::getline(ss, cell, ',')) vals.push_back(T(std::stod(cell)));
        if (vals.size() != classes + 1)
            throw DataError("external logits: row with " + std::to_string(vals.size()) +
                            " cells, expected sample_id plus " + std::to_string(classes));
        std::size_t id = static_cast<std::size_t>(vals[0]);
        if (rows.size() <= id) rows.resize(id + 1);
        rows[id] = std::vector<T>(vals.begin() + 1, vals.end());
    }
    return rows;
}

}  // namespace pwv
