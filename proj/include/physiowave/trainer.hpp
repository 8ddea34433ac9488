#pragma once

#include <algorithm>
#include <fstream>
#include <numeric>
#include <string>
#include <vector>

#include "physiowave/checkpoint.hpp"
#include "physiowave/config.hpp"
#include "physiowave/frontend.hpp"
#include "physiowave/fusion.hpp"
#include "physiowave/signal.hpp"

// Optimization: decoupled-weight-decay Adam with bias correction, linear
// warmup plus cosine decay, global-norm clipping, and the pretraining /
// fine-tuning / probe loops.

namespace pwv {

// ------------------------------------------------------------- schedule

struct Schedule {
    double warmup_epochs = 10;
    double total_epochs = 50;
    double lr_start = 5e-7;
    double lr_peak = 5e-5;
    double lr_floor = 1e-6;
};

inline double lr_at(double epoch, const Schedule& s) {
    if (epoch < 0) throw ConfigError("lr_at: negative epoch");
    if (s.warmup_epochs > 0 && epoch < s.warmup_epochs)
        return s.lr_start + (s.lr_peak - s.lr_start) * (epoch / s.warmup_epochs);
    double span = s.total_epochs - s.warmup_epochs;
    double frac = span > 0 ? std::min(1.0, (epoch - s.warmup_epochs) / span) : 1.0;
    return s.lr_floor + (s.lr_peak - s.lr_floor) * 0.5 * (1.0 + std::cos(M_PI * frac));
}

// ------------------------------------------------------------ optimizer

template <typename T>
struct OptimState {
    double beta1 = 0.9;
    double beta2 = 0.98;
    double weight_decay = 0.01;
    double eps = 1e-8;
    std::size_t step = 0;
    std::vector<Parameter<T>*> params;
    std::vector<Tensor<T>> m, v;
    std::vector<double> lr_scale;  // layer-wise multiplier, default 1

    explicit OptimState(std::vector<Parameter<T>*> ps) : params(std::move(ps)) {
        for (auto* p : params) {
            m.emplace_back(p->value().shape);
            v.emplace_back(p->value().shape);
            lr_scale.push_back(1.0);
        }
    }
};

template <typename T>
void adamw_step(OptimState<T>& opt, double lr) {
    opt.step += 1;
    double bc1 = 1.0 - std::pow(opt.beta1, static_cast<double>(opt.step));
    double bc2 = 1.0 - std::pow(opt.beta2, static_cast<double>(opt.step));
    for (std::size_t k = 0; k < opt.params.size(); ++k) {
        Parameter<T>* p = opt.params[k];
        if (!p->trainable) continue;
        if (!p->grad().all_finite())
            throw NumericError("adamw: non-finite gradient in '" + p->name + "'");
        double lrk = lr * opt.lr_scale[k];
        for (std::size_t i = 0; i < p->size(); ++i) {
            double g = static_cast<double>(p->grad()[i]);
            double mi = opt.beta1 * static_cast<double>(opt.m[k][i]) + (1.0 - opt.beta1) * g;
            double vi = opt.beta2 * static_cast<double>(opt.v[k][i]) + (1.0 - opt.beta2) * g * g;
            opt.m[k][i] = T(mi);
            opt.v[k][i] = T(vi);
            double update = (mi / bc1) / (std::sqrt(vi / bc2) + opt.eps);
            double w = static_cast<double>(p->value()[i]);
            p->value()[i] = T(w - lrk * update - lrk * opt.weight_decay * w);
        }
    }
}

// Scales all gradients by max_norm/norm when the global L2 norm exceeds
// max_norm; returns the applied scale.
template <typename T>
double clip_global_norm(const std::vector<Parameter<T>*>& params, double max_norm) {
    double sq = 0;
    for (auto* p : params) {
        if (!p->trainable) continue;
        for (std::size_t i = 0; i < p->size(); ++i) {
            double g = static_cast<double>(p->grad()[i]);
            sq += g * g;
        }
    }
    double norm = std::sqrt(sq);
    if (norm <= max_norm || norm == 0.0) return 1.0;
    double scale = max_norm / norm;
    for (auto* p : params) {
        if (!p->trainable) continue;
        for (std::size_t i = 0; i < p->size(); ++i) p->grad()[i] = T(p->grad()[i] * scale);
    }
    return scale;
}

// -------------------------------------------------------------- pipeline

// Frontend + tokenizer + encoder/decoder bundled behind one parameter list.
template <typename T>
struct Pipeline {
    FrontendState<T> frontend;
    TokenizerState<T> tokenizer;
    ModelState<T> model;
    std::size_t channels = 0, window = 0, patch_width = 0, rows = 0, npatch = 0;
    double mask_ratio = 0.7, importance_ratio = 0.6;

    std::vector<Parameter<T>*> parameters() {
        auto out = frontend.parameters();
        for (auto* p : {&tokenizer.proj_w, &tokenizer.proj_b, &tokenizer.mask_token, &tokenizer.row_embed})
            out.push_back(p);
        for (auto* p : model.parameters()) out.push_back(p);
        return out;
    }
};

template <typename T>
Pipeline<T> make_pipeline(const RunConfig& cfg, Rng& rng) {
    Pipeline<T> pipe;
    FrontendConfig fc;
    fc.channels = static_cast<std::size_t>(cfg.count("channels"));
    fc.levels = static_cast<std::size_t>(cfg.count("wavelet_levels"));
    fc.kernel = static_cast<std::size_t>(cfg.count("wavelet_kernel"));
    fc.bases = cfg.list("wavelet_bases");
    std::string def = cfg.str("default_basis");
    fc.default_basis = 0;
    if (!def.empty()) {
        auto it = std::find(fc.bases.begin(), fc.bases.end(), def);
        if (it == fc.bases.end()) throw ConfigError("default_basis '" + def + "' not in wavelet_bases");
        fc.default_basis = static_cast<std::size_t>(it - fc.bases.begin());
    }
    fc.selector_hidden = static_cast<std::size_t>(cfg.count("selector_hidden"));
    fc.caffn_segment = static_cast<std::size_t>(cfg.count("caffn_segment"));
    fc.caffn_kernel = static_cast<std::size_t>(cfg.count("caffn_kernel"));
    pipe.frontend = make_frontend<T>(fc, rng);

    EncoderConfig mc;
    std::string preset = cfg.str("size_preset");
    if (preset != "custom") mc = EncoderConfig::preset(preset);
    else {
        mc.dim = static_cast<std::size_t>(cfg.count("embed_dim"));
        mc.layers = static_cast<std::size_t>(cfg.count("encoder_layers"));
        mc.heads = static_cast<std::size_t>(cfg.count("attention_heads"));
        mc.dec_dim = static_cast<std::size_t>(cfg.count("decoder_dim"));
        mc.dec_layers = static_cast<std::size_t>(cfg.count("decoder_layers"));
        mc.dec_heads = static_cast<std::size_t>(cfg.count("decoder_heads"));
    }
    mc.mlp_ratio = cfg.num("mlp_ratio");
    mc.drop_path = cfg.num("drop_path");

    pipe.channels = fc.channels;
    pipe.window = static_cast<std::size_t>(cfg.count("window"));
    pipe.patch_width = static_cast<std::size_t>(cfg.count("patch_width"));
    pipe.rows = (fc.levels + 1) * fc.channels;
    pipe.npatch = pipe.window / pipe.patch_width;
    pipe.mask_ratio = cfg.num("mask_ratio");
    pipe.importance_ratio = cfg.num("importance_ratio");
    if (cfg.flag("ablate_fgm")) pipe.importance_ratio = 0.0;

    pipe.tokenizer = make_tokenizer<T>(pipe.patch_width, mc.dim, pipe.rows,
                                       static_cast<std::size_t>(cfg.count("max_tokens")), rng);
    pipe.model = make_model<T>(mc, pipe.patch_width, rng);
    return pipe;
}

template <typename T>
Tensor<T> window_tensor(const WindowBatch& batch, std::size_t b) {
    Tensor<T> x({batch.channels, batch.window});
    const double* src = batch.window_ptr(b);
    for (std::size_t i = 0; i < x.size(); ++i) x[i] = T(src[i]);
    return x;
}

template <typename T>
struct MaskedForward {
    Var<T> loss;
    Var<T> recon;
    MaskPlan plan;
    PatchGrid<T> grid;
};

// Full masked-reconstruction pass for one window.
template <typename T>
MaskedForward<T> masked_forward(Pipeline<T>& pipe, const Tensor<T>& x, std::uint64_t mask_seed,
                                bool train = false, Rng* droppath = nullptr,
                                FrontendTrace<T>* trace = nullptr) {
    MaskedForward<T> out;
    auto spec = frontend_forward(pipe.frontend, x, trace);
    out.grid = patchify(spec.value(), pipe.patch_width);
    out.plan = blend_and_select(grid_energies(out.grid), pipe.rows, pipe.npatch, pipe.mask_ratio,
                                pipe.importance_ratio, mask_seed);
    auto seq = embed_tokens(pipe.tokenizer, patchify_rows(spec, pipe.patch_width), out.plan);
    auto lat = encoder_forward(pipe.model, seq.tokens, seq.positions, train, droppath);
    out.recon = decoder_forward(pipe.model, lat, train, droppath);
    out.loss = pretrain_loss(out.recon, out.grid, out.plan);
    return out;
}

// Unmasked classification pass: full token sequence, mean pool, MLP head.
template <typename T>
Var<T> classify_forward(Pipeline<T>& pipe, ClassifierHead<T>& head, const Tensor<T>& x,
                        bool train = false, Rng* droppath = nullptr) {
    auto spec = frontend_forward(pipe.frontend, x);
    auto grid = patchify(spec.value(), pipe.patch_width);
    MaskPlan plan = blend_and_select(grid_energies(grid), pipe.rows, pipe.npatch, 0.0, 1.0, 0);
    auto seq = embed_tokens(pipe.tokenizer, patchify_rows(spec, pipe.patch_width), plan);
    auto lat = encoder_forward(pipe.model, seq.tokens, seq.positions, train, droppath);
    return pool_and_classify(head, lat);
}

// --------------------------------------------------------------- metrics

struct MetricsRow {
    std::size_t step = 0;
    double epoch = 0;
    double lr = 0;
    double loss = 0;
    double val_acc = -1;  // < 0 means absent
};

class MetricsWriter {
public:
    MetricsWriter() = default;
    MetricsWriter(const std::string& path, const std::string& config_echo, bool with_val) {
        if (path.empty()) return;
        file_.open(path);
        if (!file_) throw DataError("metrics: cannot open '" + path + "'");
        std::istringstream is(config_echo);
        std::string line;
        while (std::getline(is, line)) file_ << "# " << line << "\n";
        file_ << (with_val ? "step,epoch,lr,loss,val_acc\n" : "step,epoch,lr,loss\n");
        with_val_ = with_val;
    }

    void append(const MetricsRow& row) {
        rows.push_back(row);
        if (!file_) return;
        file_ << row.step << "," << row.epoch << "," << row.lr << "," << row.loss;
        if (with_val_) file_ << "," << (row.val_acc >= 0 ? std::to_string(row.val_acc) : "");
        file_ << "\n";
        file_.flush();
    }

    std::vector<MetricsRow> rows;

private:
    std::ofstream file_;
    bool with_val_ = false;
};

// --------------------------------------------------------------- loops

template <typename T>
struct PretrainResult {
    std::vector<MetricsRow> rows;
    std::size_t steps = 0;
};

// Per optimizer step: masked forward/backward over the (accumulated)
// batch, clip, AdamW at the fractional-epoch learning rate. Deterministic
// under a fixed seed.
template <typename T>
PretrainResult<T> pretrain_loop(Pipeline<T>& pipe, const WindowBatch& corpus, const RunConfig& cfg,
                                const std::string& metrics_path = "",
                                const std::string& ckpt_path = "") {
    if (corpus.count == 0) throw DataError("pretrain: corpus is empty");
    std::size_t batch = static_cast<std::size_t>(cfg.count("batch"));
    std::size_t accum = std::max<long>(1, cfg.count("accum_batches"));
    std::size_t epochs = static_cast<std::size_t>(cfg.count("epochs"));
    std::size_t max_steps = static_cast<std::size_t>(cfg.count("steps"));
    std::uint64_t seed = static_cast<std::uint64_t>(cfg.count("seed"));

    Schedule sched;
    sched.warmup_epochs = cfg.num("warmup_epochs");
    sched.total_epochs = static_cast<double>(epochs);
    sched.lr_start = cfg.num("lr_start");
    sched.lr_peak = cfg.num("lr_peak");
    sched.lr_floor = cfg.num("lr_floor");
    double clip = cfg.num("clip_norm");

    auto params = pipe.parameters();
    OptimState<T> opt(params);
    opt.beta1 = cfg.num("beta1");
    opt.beta2 = cfg.num("beta2");
    opt.weight_decay = cfg.num("weight_decay");

    MetricsWriter metrics(metrics_path, cfg.echo(), false);
    Rng order_rng(Rng(seed).fork(1).next_u64());
    Rng drop_rng(Rng(seed).fork(2).next_u64());
    std::vector<std::size_t> order(corpus.count);
    std::iota(order.begin(), order.end(), std::size_t(0));

    std::size_t per_step = batch * accum;
    std::size_t steps_per_epoch = std::max<std::size_t>(1, corpus.count / per_step);
    std::size_t step = 0;
    bool done = false;
    for (std::size_t epoch = 0; epoch < epochs && !done; ++epoch) {
        for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[order_rng.below(i)]);
        for (std::size_t s = 0; s < steps_per_epoch && !done; ++s) {
            for (auto* p : params) p->zero_grad();
            double loss_acc = 0;
            for (std::size_t j = 0; j < per_step; ++j) {
                std::size_t idx = order[(s * per_step + j) % corpus.count];
                auto x = window_tensor<T>(corpus, idx);
                std::uint64_t mask_seed = Rng(seed).fork(3 + step).fork(j).next_u64();
                auto fwd = masked_forward(pipe, x, mask_seed, true, &drop_rng);
                auto scaled = scale(fwd.loss, T(1.0 / static_cast<double>(per_step)));
                backward(scaled);
                loss_acc += static_cast<double>(fwd.loss.item()) / static_cast<double>(per_step);
            }
            clip_global_norm(params, clip);
            double epoch_frac = static_cast<double>(step) / static_cast<double>(steps_per_epoch);
            double lr = lr_at(epoch_frac, sched);
            adamw_step(opt, lr);
            for (auto* p : params)
                if (!p->value().all_finite())
                    throw NumericError("pretrain: parameter '" + p->name + "' went non-finite");
            ++step;
            metrics.append({step, epoch_frac, lr, loss_acc, -1});
            if (max_steps > 0 && step >= max_steps) done = true;
        }
    }
    if (!ckpt_path.empty()) checkpoint_write<T>(ckpt_path, params, cfg.echo(), step);
    return {metrics.rows, step};
}

template <typename T>
double evaluate_accuracy(Pipeline<T>& pipe, ClassifierHead<T>& head, const WindowBatch& corpus,
                         const std::vector<int>& labels, const std::vector<std::size_t>& subset) {
    std::size_t correct = 0;
    for (std::size_t idx : subset) {
        auto logits = classify_forward(pipe, head, window_tensor<T>(corpus, idx));
        const auto& row = logits.value();
        std::size_t best = 0;
        for (std::size_t j = 1; j < row.size(); ++j)
            if (row[j] > row[best]) best = j;
        correct += static_cast<int>(best) == labels[idx];
    }
    return subset.empty() ? 0.0 : static_cast<double>(correct) / static_cast<double>(subset.size());
}

template <typename T>
struct FinetuneResult {
    std::vector<MetricsRow> rows;
    double best_val_acc = 0;
    std::size_t epochs_run = 0;
};

// End-to-end fine-tuning at a fraction of the pretraining rate with
// layer-wise decay, label smoothing, and early stopping on validation
// loss. The decoder stays out of the graph and the optimizer.
template <typename T>
FinetuneResult<T> finetune_loop(Pipeline<T>& pipe, ClassifierHead<T>& head, const WindowBatch& corpus,
                                const std::vector<int>& labels, const RunConfig& cfg,
                                const std::string& metrics_path = "",
                                const std::string& ckpt_path = "") {
    if (labels.size() != corpus.count) throw DataError("finetune: label count mismatch");
    std::size_t classes = static_cast<std::size_t>(cfg.count("classes"));
    for (int l : labels)
        if (l < 0 || static_cast<std::size_t>(l) >= classes)
            throw DataError("finetune: label out of range");
    if (classes < 2) throw ConfigError("finetune: need at least two classes");

    std::uint64_t seed = static_cast<std::uint64_t>(cfg.count("seed"));
    std::size_t batch = static_cast<std::size_t>(cfg.count("batch"));
    std::size_t epochs = static_cast<std::size_t>(cfg.count("finetune_epochs"));
    std::size_t patience = static_cast<std::size_t>(cfg.count("early_stop_patience"));
    double smoothing = cfg.num("label_smoothing");
    double layer_decay = cfg.num("layer_decay");
    double clip = cfg.num("clip_norm");

    Schedule sched;
    sched.warmup_epochs = cfg.num("finetune_warmup_epochs");
    sched.total_epochs = static_cast<double>(epochs);
    sched.lr_peak = cfg.num("lr_peak") * cfg.num("finetune_lr_scale");
    sched.lr_start = cfg.num("lr_start");
    sched.lr_floor = std::min(cfg.num("lr_floor"), sched.lr_peak);

    // parameter groups for layer-wise decay: frontend/tokenizer lowest,
    // encoder blocks by depth, final norm and head highest
    std::vector<Parameter<T>*> params;
    std::vector<std::size_t> group;
    auto push = [&](const std::vector<Parameter<T>*>& ps, std::size_t g) {
        for (auto* p : ps) {
            params.push_back(p);
            group.push_back(g);
        }
    };
    push(pipe.frontend.parameters(), 0);
    push({&pipe.tokenizer.proj_w, &pipe.tokenizer.proj_b, &pipe.tokenizer.mask_token,
          &pipe.tokenizer.row_embed}, 0);
    for (std::size_t i = 0; i < pipe.model.encoder.size(); ++i)
        push(pipe.model.encoder[i].parameters(), i + 1);
    std::size_t top = pipe.model.encoder.size() + 1;
    push({&pipe.model.enc_ln_g, &pipe.model.enc_ln_b}, top);
    push(head.parameters(), top);

    OptimState<T> opt(params);
    opt.beta1 = cfg.num("beta1");
    opt.beta2 = cfg.num("beta2");
    opt.weight_decay = cfg.num("weight_decay");
    for (std::size_t k = 0; k < params.size(); ++k)
        opt.lr_scale[k] = std::pow(layer_decay, static_cast<double>(top - group[k]));

    // seeded train/validation split
    Rng split_rng(Rng(seed).fork(11).next_u64());
    std::vector<std::size_t> idx(corpus.count);
    std::iota(idx.begin(), idx.end(), std::size_t(0));
    for (std::size_t i = idx.size(); i > 1; --i) std::swap(idx[i - 1], idx[split_rng.below(i)]);
    std::size_t val_n = std::max<std::size_t>(1, static_cast<std::size_t>(
        cfg.num("val_fraction") * static_cast<double>(corpus.count)));
    std::vector<std::size_t> val(idx.begin(), idx.begin() + val_n);
    std::vector<std::size_t> train(idx.begin() + val_n, idx.end());
    if (train.empty()) throw DataError("finetune: empty training split");

    MetricsWriter metrics(metrics_path, cfg.echo(), true);
    Rng order_rng(Rng(seed).fork(12).next_u64());
    Rng drop_rng(Rng(seed).fork(13).next_u64());

    double best_val_loss = 1e300;
    double best_val_acc = 0;
    std::size_t since_best = 0, step = 0;
    std::size_t steps_per_epoch = std::max<std::size_t>(1, train.size() / batch);
    FinetuneResult<T> result;
    for (std::size_t epoch = 0; epoch < epochs; ++epoch) {
        for (std::size_t i = train.size(); i > 1; --i)
            std::swap(train[i - 1], train[order_rng.below(i)]);
        for (std::size_t s = 0; s < steps_per_epoch; ++s) {
            for (auto* p : params) p->zero_grad();
            std::vector<Var<T>> logit_rows;
            std::vector<int> batch_labels;
            for (std::size_t j = 0; j < batch; ++j) {
                std::size_t w = train[(s * batch + j) % train.size()];
                logit_rows.push_back(
                    classify_forward(pipe, head, window_tensor<T>(corpus, w), true, &drop_rng));
                batch_labels.push_back(labels[w]);
            }
            auto loss = cross_entropy(concat_rows(logit_rows), batch_labels, smoothing);
            backward(loss);
            clip_global_norm(params, clip);
            double epoch_frac = static_cast<double>(step) / static_cast<double>(steps_per_epoch);
            double lr = lr_at(epoch_frac, sched);
            adamw_step(opt, lr);
            ++step;
            metrics.append({step, epoch_frac, lr, static_cast<double>(loss.item()), -1});
        }
        // validation pass: loss for early stopping, accuracy for reporting
        double val_loss = 0;
        for (std::size_t w : val) {
            auto logits = classify_forward(pipe, head, window_tensor<T>(corpus, w));
            val_loss += static_cast<double>(cross_entropy(logits, {labels[w]}, 0.0).item());
        }
        val_loss /= static_cast<double>(val.size());
        double val_acc = evaluate_accuracy(pipe, head, corpus, labels, val);
        metrics.append({step, static_cast<double>(epoch + 1), 0.0, val_loss, val_acc});
        result.epochs_run = epoch + 1;
        if (val_loss < best_val_loss) {
            best_val_loss = val_loss;
            best_val_acc = val_acc;
            since_best = 0;
            if (!ckpt_path.empty()) {
                auto all = pipe.parameters();
                for (auto* p : head.parameters()) all.push_back(p);
                checkpoint_write<T>(ckpt_path, all, cfg.echo(), step);
            }
        } else if (++since_best > patience) {
            break;
        }
    }
    result.rows = metrics.rows;
    result.best_val_acc = best_val_acc;
    return result;
}

// Linear probing for fusion: frozen encoders produce detached latents once;
// only the per-modality heads and the fusion logits receive updates.
template <typename T>
struct ProbeResult {
    double train_loss = 0;
    Tensor<T> alpha;
};

template <typename T>
ProbeResult<T> probe_loop(FusionState<T>& fusion, std::vector<ClassifierHead<T>>& heads,
                          const std::vector<Tensor<T>>& pooled,  // [modality][sample, dim] or logits
                          const std::vector<std::vector<std::vector<T>>>& external,
                          const std::vector<int>& labels, const RunConfig& cfg,
                          const std::vector<Parameter<T>*>& frozen) {
    std::size_t classes = static_cast<std::size_t>(cfg.count("classes"));
    std::size_t epochs = static_cast<std::size_t>(cfg.count("fuse_epochs"));
    double lr = cfg.num("fuse_lr");
    std::size_t n = labels.size();

    std::vector<Parameter<T>*> params{&fusion.fusion_logits};
    for (auto& h : heads)
        for (auto* p : h.parameters()) params.push_back(p);
    OptimState<T> opt(params);
    opt.weight_decay = 0.0;

    std::vector<Tensor<T>> frozen_before;
    for (auto* p : frozen) frozen_before.push_back(p->value());

    double last_loss = 0;
    for (std::size_t epoch = 0; epoch < epochs; ++epoch) {
        for (auto* p : params) p->zero_grad();
        std::size_t h_idx = 0;
        std::vector<Var<T>> per_modality;
        for (std::size_t m = 0; m < fusion.modalities.size(); ++m) {
            if (fusion.modalities[m].rfind("ext:", 0) == 0) {
                std::size_t e = m - h_idx;
                Tensor<T> z({n, classes});
                for (std::size_t i = 0; i < n; ++i)
                    for (std::size_t j = 0; j < classes; ++j) z.at(i, j) = external[e][i][j];
                per_modality.push_back(Var<T>::constant(std::move(z)));
            } else {
                std::vector<Var<T>> rows;
                for (std::size_t i = 0; i < n; ++i) {
                    Tensor<T> lat({1, heads[h_idx].cfg.dim});
                    for (std::size_t j = 0; j < lat.size(); ++j) lat[j] = pooled[h_idx].at(i, j);
                    rows.push_back(pool_and_classify(heads[h_idx], Var<T>::constant(std::move(lat))));
                }
                per_modality.push_back(concat_rows(rows));
                ++h_idx;
            }
        }
        auto loss = probe_loss(fusion, per_modality, labels, 0.0);
        backward(loss);
        last_loss = static_cast<double>(loss.item());
        adamw_step(opt, lr);
    }

    for (std::size_t i = 0; i < frozen.size(); ++i)
        if (frozen[i]->value().data != frozen_before[i].data)
            throw NumericError("probe: frozen parameter '" + frozen[i]->name + "' changed");
    return {last_loss, fusion.alpha_value()};
}

}  // namespace pwv
