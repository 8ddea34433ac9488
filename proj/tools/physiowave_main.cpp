// physiowave: learnable wavelet decomposition + frequency-guided masked
// pretraining for multi-channel physiological signals.
//
// Subcommands: synth, preprocess, pretrain, finetune, fuse, inspect.
// Exit codes: 0 success, 2 config error, 3 data error, 4 numeric failure.

#include <CLI11.hpp>

#include <iostream>

#include "physiowave/commands.hpp"

namespace {

struct GlobalArgs {
    std::string config_path;
    long seed = -1;
    int threads = 1;
    bool f64 = false;
};

pwv::RunConfig load_config(const GlobalArgs& g) {
    pwv::RunConfig cfg =
        g.config_path.empty() ? pwv::RunConfig() : pwv::RunConfig::from_file(g.config_path);
    if (g.seed >= 0) cfg.set("seed", std::to_string(g.seed));
    return cfg;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"wavelet-front-end masked pretraining pipeline for biosignals"};
    app.require_subcommand(1);

    GlobalArgs g;
    app.add_option("--config", g.config_path, "key=value configuration file");
    app.add_option("--seed", g.seed, "override the config seed");
    app.add_option("--threads", g.threads, "worker threads for the kernel loops");
    app.add_flag("--f64", g.f64, "run in 64-bit precision (default 32-bit)");

    std::string out, in, from, corpus, modalities;
    std::size_t window_index = 0;
    bool ablate_fgm = false, no_pretrain = false;

    auto* synth = app.add_subcommand("synth", "generate a labeled synthetic corpus");
    synth->add_option("--out", out, "output container path")->required();

    auto* preprocess = app.add_subcommand("preprocess", "filter, window, and normalize a recording");
    preprocess->add_option("--in", in, "input recording (.csv or .raw)")->required();
    preprocess->add_option("--out", out, "output container path")->required();

    auto* pretrain = app.add_subcommand("pretrain", "masked-reconstruction pretraining");
    pretrain->add_option("--out", out, "artifact prefix (ckpt + metrics)")->required();
    pretrain->add_flag("--ablate-fgm", ablate_fgm, "pure random masking arm (importance ratio 0)");

    auto* finetune = app.add_subcommand("finetune", "supervised fine-tuning with a classifier head");
    finetune->add_option("--from", from, "pretraining checkpoint");
    finetune->add_flag("--no-pretrain", no_pretrain, "train from random initialization");
    finetune->add_option("--out", out, "artifact prefix (ckpt + metrics)")->required();

    auto* fuse = app.add_subcommand("fuse", "train heads + fusion weights over frozen encoders");
    fuse->add_option("--modalities", modalities,
                     "name:corpus:ckpt[,...] and/or ext:logits.csv (defaults to config)");
    fuse->add_option("--out", out, "artifact prefix (alpha report)")->required();

    auto* inspect = app.add_subcommand("inspect", "dump plot-ready CSV bundles for one window");
    inspect->add_option("--from", from, "checkpoint to load (optional)");
    inspect->add_option("--corpus", corpus, "input container")->required();
    inspect->add_option("--out", out, "output directory")->required();
    inspect->add_option("--window", window_index, "window index (default 0)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    try {
        pwv::kernel::threads = g.threads;
        auto cfg = load_config(g);
        if (ablate_fgm) cfg.set("ablate_fgm", "1");

        if (synth->parsed()) {
            pwv::cmd_synth(cfg, out);
        } else if (preprocess->parsed()) {
            pwv::cmd_preprocess(cfg, in, out);
        } else if (pretrain->parsed()) {
            if (g.f64) pwv::cmd_pretrain<double>(cfg, out);
            else pwv::cmd_pretrain<float>(cfg, out);
        } else if (finetune->parsed()) {
            if (g.f64) pwv::cmd_finetune<double>(cfg, from, no_pretrain, out);
            else pwv::cmd_finetune<float>(cfg, from, no_pretrain, out);
        } else if (fuse->parsed()) {
            if (g.f64) pwv::cmd_fuse<double>(cfg, modalities, out);
            else pwv::cmd_fuse<float>(cfg, modalities, out);
        } else if (inspect->parsed()) {
            if (g.f64) pwv::cmd_inspect<double>(cfg, from, corpus, out, window_index);
            else pwv::cmd_inspect<float>(cfg, from, corpus, out, window_index);
        }
    } catch (const pwv::ConfigError& e) {
        std::cerr << e.what() << "\n";
        return 2;
    } catch (const pwv::NumericError& e) {
        std::cerr << e.what() << "\n";
        return 4;
    } catch (const pwv::DataError& e) {
        std::cerr << e.what() << "\n";
        return 3;
    } catch (const pwv::ShapeError& e) {
        std::cerr << e.what() << "\n";
        return 3;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
