#pragma once

#include <filesystem>
#include <iostream>
#include <memory>
#include <string>
#include <vector>

#include "physiowave/container.hpp"
#include "physiowave/synth.hpp"
#include "physiowave/trainer.hpp"

// Command implementations behind the CLI: corpus synthesis, preprocessing,
// pretraining, fine-tuning, fusion probing, and artifact inspection.

namespace pwv {

inline void cmd_synth(const RunConfig& cfg, const std::string& out) {
    auto corpus = synth_corpus(synth_spec_from(cfg));
    container_write(corpus.windows, out);
    write_labels(corpus.labels, out + ".labels.csv");
    std::cout << "synth: " << corpus.windows.count << " windows (" << corpus.windows.channels << "x"
              << corpus.windows.window << " @ " << corpus.windows.fs << " Hz) -> " << out << "\n";
}

// Appendix-style chain: band-pass, notch, resample, channel padding,
// windowing, z-score.
inline WindowBatch preprocess_record(const SignalRecord& rec, const RunConfig& cfg) {
    SignalRecord cur = bandpass(rec, cfg.num("bandpass_lo"), cfg.num("bandpass_hi"));
    if (cfg.flag("notch")) cur = notch50(cur);
    double fs_target = cfg.num("fs");
    if (fs_target > cur.fs) cur = resample(cur, fs_target);
    cur = pad_channels(cur, static_cast<std::size_t>(cfg.count("channels")));
    auto win = slide_windows(cur, static_cast<std::size_t>(cfg.count("window")),
                             static_cast<std::size_t>(cfg.count("step")));
    win.modality = modality_from(cfg.str("modality"));
    return zscore(win);
}

inline void cmd_preprocess(const RunConfig& cfg, const std::string& in, const std::string& out) {
    SignalRecord rec;
    Modality modality = modality_from(cfg.str("modality"));
    if (in.size() > 4 && in.substr(in.size() - 4) == ".csv") {
        rec = read_csv_record(in, modality);
    } else if (in.size() > 4 && in.substr(in.size() - 4) == ".raw") {
        rec = read_raw_record(in);
    } else {
        throw DataError("preprocess: input must be a .csv or .raw recording");
    }
    auto win = preprocess_record(rec, cfg);
    container_write(win, out);
    std::cout << "preprocess: " << rec.channels << "x" << rec.samples << " @ " << rec.fs << " Hz -> "
              << win.count << " windows -> " << out << "\n";
}

template <typename T>
void cmd_pretrain(const RunConfig& cfg, const std::string& out_prefix) {
    std::string corpus_path = cfg.str("corpus");
    if (corpus_path.empty()) throw ConfigError("pretrain: config key 'corpus' is required");
    auto corpus = container_read(corpus_path);
    Rng rng(static_cast<std::uint64_t>(cfg.count("seed")));
    auto pipe = make_pipeline<T>(cfg, rng);
    auto result = pretrain_loop(pipe, corpus, cfg, out_prefix + ".metrics.csv", out_prefix + ".ckpt");
    std::cout << "pretrain: " << result.steps << " steps, final loss "
              << (result.rows.empty() ? 0.0 : result.rows.back().loss) << " -> " << out_prefix
              << ".ckpt\n";
}

template <typename T>
void cmd_finetune(const RunConfig& cfg, const std::string& from, bool no_pretrain,
                  const std::string& out_prefix) {
    std::string corpus_path = cfg.str("corpus");
    if (corpus_path.empty()) throw ConfigError("finetune: config key 'corpus' is required");
    auto corpus = container_read(corpus_path);
    std::string labels_path = cfg.str("labels");
    if (labels_path.empty()) labels_path = corpus_path + ".labels.csv";
    auto labels = read_labels(labels_path);

    Rng rng(static_cast<std::uint64_t>(cfg.count("seed")));
    auto pipe = make_pipeline<T>(cfg, rng);
    if (!no_pretrain) {
        if (from.empty()) throw ConfigError("finetune: --from checkpoint required (or --no-pretrain)");
        auto params = pipe.parameters();
        checkpoint_read<T>(from, params);
    }
    HeadConfig hc;
    hc.dim = pipe.model.cfg.dim;
    hc.hidden = static_cast<std::size_t>(cfg.count("head_hidden"));
    hc.classes = static_cast<std::size_t>(cfg.count("classes"));
    auto head = make_head<T>(hc, rng);
    auto result = finetune_loop(pipe, head, corpus, labels, cfg, out_prefix + ".metrics.csv",
                                out_prefix + ".ckpt");
    std::cout << "finetune: " << result.epochs_run << " epochs, best val acc " << result.best_val_acc
              << " -> " << out_prefix << ".ckpt\n";
}

// "name:corpus.pwv:checkpoint.ckpt" for frozen trained branches or
// "ext:logits.csv" for an external logit source.
struct ModalitySource {
    std::string name;
    bool external = false;
    std::string corpus;      // trained branches
    std::string checkpoint;  // trained branches
    std::string logits_csv;  // external branches
};

inline std::vector<ModalitySource> parse_modalities(const std::string& spec) {
    std::vector<ModalitySource> out;
    std::stringstream ss(spec);
    std::string entry;
    while (std::getline(ss, entry, ',')) {
        if (entry.empty()) continue;
        ModalitySource src;
        if (entry.rfind("ext:", 0) == 0) {
            src.external = true;
            src.name = entry;
            src.logits_csv = entry.substr(4);
        } else {
            auto c1 = entry.find(':');
            auto c2 = c1 == std::string::npos ? std::string::npos : entry.find(':', c1 + 1);
            if (c2 == std::string::npos)
                throw ConfigError("fuse: modality '" + entry + "' must be name:corpus:checkpoint");
            src.name = entry.substr(0, c1);
            src.corpus = entry.substr(c1 + 1, c2 - c1 - 1);
            src.checkpoint = entry.substr(c2 + 1);
        }
        out.push_back(src);
    }
    if (out.empty()) throw ConfigError("fuse: no modalities given");
    return out;
}

// Frozen-encoder mean-pooled latents for every window of a corpus.
template <typename T>
Tensor<T> pooled_latents(Pipeline<T>& pipe, const WindowBatch& corpus) {
    Tensor<T> out({corpus.count, pipe.model.cfg.dim});
    for (std::size_t b = 0; b < corpus.count; ++b) {
        auto x = window_tensor<T>(corpus, b);
        auto spec = frontend_forward(pipe.frontend, x);
        auto grid = patchify(spec.value(), pipe.patch_width);
        MaskPlan plan = blend_and_select(grid_energies(grid), pipe.rows, pipe.npatch, 0.0, 1.0, 0);
        auto seq = embed_tokens(pipe.tokenizer, patchify_rows(spec, pipe.patch_width), plan);
        auto lat = encoder_forward(pipe.model, seq.tokens, seq.positions);
        auto pooled = cols_mean(lat);
        for (std::size_t j = 0; j < pipe.model.cfg.dim; ++j) out.at(b, j) = pooled.value()[j];
    }
    return out;
}

template <typename T>
struct FuseOutcome {
    Tensor<T> alpha;
    std::vector<std::string> names;
    double train_loss = 0;
    double train_acc = 0;
};

template <typename T>
FuseOutcome<T> run_fusion(const RunConfig& cfg, const std::vector<ModalitySource>& sources) {
    std::size_t classes = static_cast<std::size_t>(cfg.count("classes"));
    Rng rng(static_cast<std::uint64_t>(cfg.count("seed")));

    std::vector<std::string> names;
    std::vector<ClassifierHead<T>> heads;
    std::vector<Tensor<T>> pooled;
    std::vector<std::vector<std::vector<T>>> external;
    std::vector<Parameter<T>*> frozen;
    std::vector<std::unique_ptr<Pipeline<T>>> pipes;
    std::vector<int> labels;
    std::size_t samples = 0;

    for (const auto& src : sources) {
        names.push_back(src.name);
        if (src.external) {
            external.push_back(read_external_logits<T>(src.logits_csv, classes));
            if (samples == 0) samples = external.back().size();
            if (external.back().size() != samples)
                throw DataError("fuse: sample count mismatch in '" + src.logits_csv + "'");
            continue;
        }
        auto corpus = container_read(src.corpus);
        if (samples == 0) samples = corpus.count;
        if (corpus.count != samples) throw DataError("fuse: corpus size mismatch for '" + src.name + "'");
        if (labels.empty()) {
            std::string labels_path = cfg.str("labels");
            if (labels_path.empty()) labels_path = src.corpus + ".labels.csv";
            labels = read_labels(labels_path);
        }
        // rebuild the branch from its checkpoint's own config echo
        auto branch_cfg = RunConfig::from_string(checkpoint_header(src.checkpoint).config_echo);
        Rng brng(static_cast<std::uint64_t>(branch_cfg.count("seed")));
        auto pipe = std::make_unique<Pipeline<T>>(make_pipeline<T>(branch_cfg, brng));
        auto params = pipe->parameters();
        checkpoint_read<T>(src.checkpoint, params);
        for (auto* p : params) {
            p->trainable = false;
            frozen.push_back(p);
        }
        pooled.push_back(pooled_latents(*pipe, corpus));
        HeadConfig hc;
        hc.dim = pipe->model.cfg.dim;
        hc.classes = classes;
        heads.push_back(make_head<T>(hc, rng, "fusion." + src.name + "."));
        pipes.push_back(std::move(pipe));
    }
    if (labels.empty()) {
        std::string labels_path = cfg.str("labels");
        if (labels_path.empty()) throw ConfigError("fuse: external-only fusion needs a 'labels' file");
        labels = read_labels(labels_path);
    }
    if (labels.size() != samples) throw DataError("fuse: label count does not match sample count");

    FusionState<T> fusion(names);
    auto result = probe_loop(fusion, heads, pooled, external, labels, cfg, frozen);

    // training-set accuracy of the fused prediction
    std::size_t correct = 0;
    {
        std::vector<Var<T>> per_mod;
        std::size_t h_idx = 0, e_idx = 0;
        for (const auto& src : sources) {
            if (src.external) {
                Tensor<T> z({samples, classes});
                for (std::size_t i = 0; i < samples; ++i)
                    for (std::size_t j = 0; j < classes; ++j) z.at(i, j) = external[e_idx][i][j];
                per_mod.push_back(Var<T>::constant(std::move(z)));
                ++e_idx;
            } else {
                std::vector<Var<T>> rows;
                for (std::size_t i = 0; i < samples; ++i) {
                    Tensor<T> lat({1, heads[h_idx].cfg.dim});
                    for (std::size_t j = 0; j < lat.size(); ++j) lat[j] = pooled[h_idx].at(i, j);
                    rows.push_back(pool_and_classify(heads[h_idx], Var<T>::constant(std::move(lat))));
                }
                per_mod.push_back(concat_rows(rows));
                ++h_idx;
            }
        }
        auto fused = fuse_logits(fusion, per_mod);
        for (std::size_t i = 0; i < samples; ++i) {
            std::size_t best = 0;
            for (std::size_t j = 1; j < classes; ++j)
                if (fused.value().at(i, j) > fused.value().at(i, best)) best = j;
            correct += static_cast<int>(best) == labels[i];
        }
    }

    FuseOutcome<T> out;
    out.alpha = result.alpha;
    out.names = names;
    out.train_loss = result.train_loss;
    out.train_acc = static_cast<double>(correct) / static_cast<double>(samples);
    return out;
}

template <typename T>
void cmd_fuse(const RunConfig& cfg, const std::string& modalities_flag, const std::string& out_prefix) {
    std::string spec = modalities_flag.empty() ? cfg.str("modalities") : modalities_flag;
    auto sources = parse_modalities(spec);
    auto outcome = run_fusion<T>(cfg, sources);
    std::ofstream report(out_prefix + ".alpha.csv");
    if (!report) throw DataError("fuse: cannot write '" + out_prefix + ".alpha.csv'");
    report << "modality,alpha\n";
    for (std::size_t m = 0; m < outcome.names.size(); ++m)
        report << outcome.names[m] << "," << outcome.alpha[m] << "\n";
    std::cout << "fuse: train loss " << outcome.train_loss << ", train acc " << outcome.train_acc
              << ", alpha ->";
    for (std::size_t m = 0; m < outcome.names.size(); ++m)
        std::cout << " " << outcome.names[m] << "=" << outcome.alpha[m];
    std::cout << "\n";
}

// Plot-ready CSV bundle: reconstruction vs target over masked patches, the
// mask plan, the multi-band map, and the selector mixture.
template <typename T>
void cmd_inspect(const RunConfig& cfg, const std::string& from, const std::string& corpus_path,
                 const std::string& out_dir, std::size_t window_index) {
    auto corpus = container_read(corpus_path);
    if (window_index >= corpus.count) throw DataError("inspect: window index out of range");
    Rng rng(static_cast<std::uint64_t>(cfg.count("seed")));
    auto pipe = make_pipeline<T>(cfg, rng);
    if (!from.empty()) {
        auto params = pipe.parameters();
        checkpoint_read<T>(from, params);
    }
    std::filesystem::create_directories(out_dir);

    auto x = window_tensor<T>(corpus, window_index);
    FrontendTrace<T> trace;
    auto fwd = masked_forward(pipe, x, static_cast<std::uint64_t>(cfg.count("seed")), false, nullptr,
                              &trace);

    {
        std::ofstream f(out_dir + "/recon.csv");
        f << "row,patch,offset,target,recon\n";
        for (std::size_t r = 0; r < fwd.plan.rows; ++r)
            for (std::size_t n = 0; n < fwd.plan.npatch; ++n) {
                if (fwd.plan.keep[r * fwd.plan.npatch + n]) continue;
                for (std::size_t u = 0; u < pipe.patch_width; ++u)
                    f << r << "," << n << "," << u << "," << fwd.grid.patch(r, n)[u] << ","
                      << fwd.recon.value().at(r * fwd.plan.npatch + n, u) << "\n";
            }
    }
    {
        std::ofstream f(out_dir + "/maskplan.csv");
        f << "row,patch,energy,score,keep\n";
        for (std::size_t r = 0; r < fwd.plan.rows; ++r)
            for (std::size_t n = 0; n < fwd.plan.npatch; ++n) {
                std::size_t i = r * fwd.plan.npatch + n;
                f << r << "," << n << "," << fwd.plan.energy[i] << "," << fwd.plan.score[i] << ","
                  << static_cast<int>(fwd.plan.keep[i]) << "\n";
            }
    }
    {
        // re-assembled map: reconstruction inside masked patches, original
        // values carried through unchanged elsewhere
        std::ofstream f(out_dir + "/assembled.csv");
        f << "row,t,value,masked\n";
        for (std::size_t r = 0; r < fwd.plan.rows; ++r)
            for (std::size_t n = 0; n < fwd.plan.npatch; ++n) {
                bool masked = fwd.plan.keep[r * fwd.plan.npatch + n] == 0;
                for (std::size_t u = 0; u < pipe.patch_width; ++u) {
                    double v = masked ? fwd.recon.value().at(r * fwd.plan.npatch + n, u)
                                      : fwd.grid.patch(r, n)[u];
                    f << r << "," << n * pipe.patch_width + u << "," << v << "," << masked << "\n";
                }
            }
    }
    {
        std::ofstream f(out_dir + "/spec.csv");
        f << "row,t,value\n";
        for (std::size_t r = 0; r < fwd.plan.rows; ++r)
            for (std::size_t n = 0; n < fwd.plan.npatch; ++n)
                for (std::size_t u = 0; u < pipe.patch_width; ++u)
                    f << r << "," << n * pipe.patch_width + u << "," << fwd.grid.patch(r, n)[u] << "\n";
    }
    {
        std::ofstream f(out_dir + "/alpha.csv");
        f << "basis,alpha\n";
        for (std::size_t m = 0; m < pipe.frontend.cfg.bases.size(); ++m)
            f << pipe.frontend.cfg.bases[m] << "," << trace.alpha[m] << "\n";
    }
    std::cout << "inspect: window " << window_index << ", " << fwd.plan.masked_total() << "/"
              << fwd.plan.rows * fwd.plan.npatch << " patches masked, loss " << fwd.loss.item()
              << " -> " << out_dir << "\n";
}

}  // namespace pwv
