#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "physiowave/commands.hpp"

using namespace pwv;
namespace fs = std::filesystem;

namespace {

std::string cli() { return PWV_CLI_PATH; }

int run(const std::string& args) {
    std::string cmd = cli() + " " + args + " > /dev/null 2>&1";
    int status = std::system(cmd.c_str());
    return WEXITSTATUS(status);
}

fs::path workdir() {
    auto dir = fs::temp_directory_path() / "pwv_cli_tests";
    fs::create_directories(dir);
    return dir;
}

std::string tiny_cfg_text(int seed = 7) {
    std::ostringstream os;
    os << "modality = synth\nchannels = 2\nwindow = 256\nfs = 500\n"
       << "wavelet_levels = 2\nwavelet_kernel = 4\nwavelet_bases = haar,db4\n"
       << "patch_width = 64\nembed_dim = 16\nencoder_layers = 1\nattention_heads = 2\n"
       << "decoder_dim = 16\ndecoder_layers = 1\ndecoder_heads = 2\n"
       << "batch = 2\nepochs = 2\nsteps = 4\nwarmup_epochs = 1\nlr_peak = 1e-3\n"
       << "synth_classes = 2\nsynth_bands = 30:10:2,90:15:3\nsynth_windows_per_class = 6\n"
       << "classes = 2\nfinetune_epochs = 1\nval_fraction = 0.25\nseed = " << seed << "\n";
    return os.str();
}

std::string write_cfg(const std::string& name, const std::string& text) {
    auto p = (workdir() / name).string();
    std::ofstream f(p);
    f << text;
    return p;
}

std::string slurp(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    return std::string((std::istreambuf_iterator<char>(f)), {});
}

}  // namespace

TEST_CASE("synth is deterministic and honors the emg preset geometry") {
    auto cfg = write_cfg("synth.cfg", tiny_cfg_text());
    auto out1 = (workdir() / "a.pwv").string();
    auto out2 = (workdir() / "b.pwv").string();
    REQUIRE(run("--config " + cfg + " synth --out " + out1) == 0);
    REQUIRE(run("--config " + cfg + " synth --out " + out2) == 0);
    REQUIRE(slurp(out1) == slurp(out2));

    auto batch = container_read(out1);
    REQUIRE(batch.count == 12);  // 2 classes x 6 windows
    REQUIRE(read_labels(out1 + ".labels.csv").size() == 12);

    auto emg_cfg = write_cfg("emg_synth.cfg",
                             "modality = emg\nsynth_classes = 2\nsynth_windows_per_class = 2\n"
                             "synth_bands = 60:20:2,200:40:3\n");
    auto out3 = (workdir() / "emg.pwv").string();
    REQUIRE(run("--config " + emg_cfg + " synth --out " + out3) == 0);
    auto emg = container_read(out3);
    REQUIRE(emg.channels == 16);
    REQUIRE(emg.window == 1024);
    REQUIRE(emg.fs == 2000.0);
    REQUIRE(emg.modality == Modality::emg);
}

TEST_CASE("preprocess applies the ecg preset chain end to end") {
    // 3-lead, 250 Hz recording: upsampled to 500 Hz, padded to 12 leads
    auto rec_path = (workdir() / "rec.csv").string();
    {
        std::ofstream f(rec_path);
        f << "fs=250\n";
        for (int t = 0; t < 2048; ++t) {
            double v = std::sin(2 * M_PI * 8.0 * t / 250.0);
            f << v << "," << 0.5 * v << "," << -v << "\n";
        }
    }
    auto cfg = write_cfg("ecg.cfg", "modality = ecg\n");
    auto out = (workdir() / "ecg.pwv").string();
    REQUIRE(run("--config " + cfg + " preprocess --in " + rec_path + " --out " + out) == 0);
    auto batch = container_read(out);
    REQUIRE(batch.channels == 12);
    REQUIRE(batch.window == 1024);
    REQUIRE(batch.fs == 500.0);
    // 2048 samples at 250 Hz -> 4096 at 500 Hz -> (4096-1024)/512+1 windows
    REQUIRE(batch.count == 7);
}

TEST_CASE("preprocessing an already-conformant recording is near-transparent") {
    // One pass over raw content vs. a second pass over the already-filtered
    // recording; away from the record ends (filter memory) the chain must be
    // close to the identity for in-band content.
    RunConfig cfg = RunConfig::from_string("modality = emg\n");
    SignalRecord rec;
    rec.modality = Modality::emg;
    rec.channels = 16;
    rec.samples = 8192;
    rec.fs = 2000;
    rec.data.resize(16 * 8192);
    Rng rng(3);
    for (std::size_t c = 0; c < 16; ++c) {
        // 110..200 Hz: clear of both the notch skirt and the band edges
        double f1 = 110 + 6 * static_cast<double>(c);
        for (std::size_t t = 0; t < 8192; ++t)
            rec.at(c, t) = std::sin(2 * M_PI * f1 * t / 2000.0) +
                           0.5 * std::sin(2 * M_PI * 160.0 * t / 2000.0 + c) +
                           0.002 * rng.normal();
    }
    SignalRecord conformant = notch50(bandpass(rec, 20, 450));  // the first pass, unwindowed
    auto once = preprocess_record(rec, cfg);
    auto twice = preprocess_record(conformant, cfg);
    REQUIRE(once.count == twice.count);

    double diff = 0, ref = 0;
    for (std::size_t b = 1; b + 1 < once.count; ++b)  // interior windows only
        for (std::size_t i = 0; i < 16 * 1024; ++i) {
            double d = twice.window_ptr(b)[i] - once.window_ptr(b)[i];
            diff += d * d;
            ref += once.window_ptr(b)[i] * once.window_ptr(b)[i];
        }
    REQUIRE(std::sqrt(diff / ref) < 1e-3);
}

TEST_CASE("pretrain, finetune, fuse, inspect round the full pipeline") {
    auto cfg = write_cfg("run.cfg", tiny_cfg_text());
    auto corpus = (workdir() / "train.pwv").string();
    REQUIRE(run("--config " + cfg + " synth --out " + corpus) == 0);

    auto cfg_with_corpus = write_cfg("run2.cfg", tiny_cfg_text() + "corpus = " + corpus + "\n");
    auto pre = (workdir() / "pre").string();
    REQUIRE(run("--config " + cfg_with_corpus + " pretrain --out " + pre) == 0);
    REQUIRE(fs::exists(pre + ".ckpt"));
    REQUIRE(fs::exists(pre + ".metrics.csv"));

    // metrics carry the config echo and the csv header
    auto metrics = slurp(pre + ".metrics.csv");
    REQUIRE(metrics.find("# modality=synth") != std::string::npos);
    REQUIRE(metrics.find("step,epoch,lr,loss") != std::string::npos);

    // ablation arm runs the same entry point
    auto pre_ablate = (workdir() / "pre_ab").string();
    REQUIRE(run("--config " + cfg_with_corpus + " pretrain --ablate-fgm --out " + pre_ablate) == 0);

    auto ft = (workdir() / "ft").string();
    REQUIRE(run("--config " + cfg_with_corpus + " finetune --from " + pre + ".ckpt --out " + ft) == 0);
    REQUIRE(fs::exists(ft + ".ckpt"));
    auto ft2 = (workdir() / "ft2").string();
    REQUIRE(run("--config " + cfg_with_corpus + " finetune --no-pretrain --out " + ft2) == 0);

    // external logits for a second modality
    auto ext = (workdir() / "ext.csv").string();
    {
        std::ofstream f(ext);
        f << "sample_id,z_0,z_1\n";
        auto labels = read_labels(corpus + ".labels.csv");
        for (std::size_t i = 0; i < labels.size(); ++i)
            f << i << "," << (labels[i] == 0 ? 2.0 : -2.0) << "," << (labels[i] == 1 ? 2.0 : -2.0)
              << "\n";
    }
    auto fusep = (workdir() / "fuse").string();
    REQUIRE(run("--config " + cfg_with_corpus + " fuse --modalities synth:" + corpus + ":" + pre +
                ".ckpt,ext:" + ext + " --out " + fusep) == 0);
    REQUIRE(fs::exists(fusep + ".alpha.csv"));
    auto report = slurp(fusep + ".alpha.csv");
    REQUIRE(report.find("modality,alpha") != std::string::npos);

    auto insp = (workdir() / "inspect_out").string();
    REQUIRE(run("--config " + cfg_with_corpus + " inspect --from " + pre + ".ckpt --corpus " + corpus +
                " --out " + insp) == 0);
    for (const char* name : {"recon.csv", "maskplan.csv", "spec.csv", "alpha.csv", "assembled.csv"})
        REQUIRE(fs::exists(fs::path(insp) / name));

    // reconstruction rows = masked patches x width; mask fraction ~ rho
    std::size_t recon_rows = 0;
    {
        std::ifstream f(fs::path(insp) / "recon.csv");
        std::string line;
        std::getline(f, line);
        while (std::getline(f, line)) ++recon_rows;
    }
    std::size_t masked = 0, total = 0;
    {
        std::ifstream f(fs::path(insp) / "maskplan.csv");
        std::string line;
        std::getline(f, line);
        while (std::getline(f, line)) {
            ++total;
            if (line.size() >= 2 && line[line.size() - 1] == '0') ++masked;
        }
    }
    REQUIRE(recon_rows == masked * 64);
    // rho = 0.70 with N = 4 per row: masked fraction within one patch per row
    double frac = static_cast<double>(masked) / static_cast<double>(total);
    REQUIRE(std::fabs(frac - 0.70) <= 0.25 + 1e-12);
}

TEST_CASE("exit codes distinguish config and data failures") {
    auto bad_cfg = write_cfg("bad.cfg", "not_a_real_key = 3\n");
    REQUIRE(run("--config " + bad_cfg + " synth --out /tmp/ignored.pwv") == 2);

    auto cfg = write_cfg("ok.cfg", tiny_cfg_text() + "corpus = /nonexistent/corpus.pwv\n");
    auto out = (workdir() / "x").string();
    REQUIRE(run("--config " + cfg + " pretrain --out " + out) == 3);

    REQUIRE(run("synth") == 2);  // missing required --out
}
