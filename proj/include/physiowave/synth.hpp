#pragma once

#include <string>
#include <vector>

#include "physiowave/config.hpp"
#include "physiowave/rng.hpp"
#include "physiowave/signal.hpp"

// Deterministic synthetic corpora: spectrally separated classes built from
// band-limited noise plus transient tone bursts, with optional mains
// interference. The desk-scale stand-in for labeled recordings.

namespace pwv {

struct BandRecipe {
    double center_hz = 40;
    double bandwidth_hz = 10;
    double burst_rate = 2;  // bursts per second
};

struct SynthSpec {
    Modality modality = Modality::synth;
    std::size_t channels = 4;
    double fs = 500;
    std::size_t window = 1024;
    std::vector<BandRecipe> classes;
    std::size_t windows_per_class = 200;
    double noise_floor = 0.1;
    double line_hz = 0;  // 0 disables the interference tone
    std::uint64_t seed = 42;
};

inline SynthSpec synth_spec_from(const RunConfig& cfg) {
    SynthSpec spec;
    spec.modality = modality_from(cfg.str("modality"));
    spec.channels = static_cast<std::size_t>(cfg.count("channels"));
    spec.fs = cfg.num("fs");
    spec.window = static_cast<std::size_t>(cfg.count("window"));
    spec.windows_per_class = static_cast<std::size_t>(cfg.count("synth_windows_per_class"));
    spec.noise_floor = cfg.num("synth_noise");
    spec.line_hz = cfg.num("synth_line_hz");
    spec.seed = static_cast<std::uint64_t>(cfg.count("seed"));
    auto bands = cfg.list("synth_bands");
    std::size_t n_classes = static_cast<std::size_t>(cfg.count("synth_classes"));
    if (bands.size() != n_classes)
        throw ConfigError("synth_bands must list one center:bandwidth:burst recipe per class");
    for (const auto& b : bands) {
        BandRecipe r;
        if (std::sscanf(b.c_str(), "%lf:%lf:%lf", &r.center_hz, &r.bandwidth_hz, &r.burst_rate) != 3)
            throw ConfigError("bad synth band recipe '" + b + "'");
        if (r.center_hz - r.bandwidth_hz / 2 <= 0 || r.center_hz + r.bandwidth_hz / 2 >= spec.fs / 2)
            throw ConfigError("synth band '" + b + "' falls outside (0, fs/2)");
        spec.classes.push_back(r);
    }
    return spec;
}

struct SynthCorpus {
    WindowBatch windows;
    std::vector<int> labels;
};

// One window: band-limited noise in the class band, gaussian-windowed tone
// bursts, optional mains tone, white noise floor; z-scored per channel.
inline SynthCorpus synth_corpus(const SynthSpec& spec) {
    if (spec.classes.empty()) throw ConfigError("synth: need at least one class recipe");
    SynthCorpus out;
    out.windows.modality = spec.modality;
    out.windows.channels = spec.channels;
    out.windows.window = spec.window;
    out.windows.step = spec.window;
    out.windows.fs = spec.fs;
    out.windows.count = spec.classes.size() * spec.windows_per_class;
    out.windows.data.resize(out.windows.count * spec.channels * spec.window);
    out.labels.resize(out.windows.count);

    std::size_t b = 0;
    for (std::size_t cls = 0; cls < spec.classes.size(); ++cls) {
        const BandRecipe& recipe = spec.classes[cls];
        auto cascade = butter_bandpass(recipe.center_hz - recipe.bandwidth_hz / 2,
                                       recipe.center_hz + recipe.bandwidth_hz / 2, spec.fs);
        for (std::size_t k = 0; k < spec.windows_per_class; ++k, ++b) {
            out.labels[b] = static_cast<int>(cls);
            Rng rng = Rng(spec.seed).fork(cls * 1000003 + k);
            double* win = out.windows.window_ptr(b);
            for (std::size_t c = 0; c < spec.channels; ++c) {
                double* x = win + c * spec.window;
                std::vector<double> band(spec.window);
                for (auto& v : band) v = rng.normal();
                filtfilt(band, cascade, std::min<std::size_t>(spec.window - 1, 256));

                std::size_t bursts = static_cast<std::size_t>(
                    std::llround(recipe.burst_rate * static_cast<double>(spec.window) / spec.fs));
                for (std::size_t t = 0; t < spec.window; ++t) x[t] = band[t];
                for (std::size_t j = 0; j < bursts; ++j) {
                    double center = rng.uniform(0.1, 0.9) * static_cast<double>(spec.window);
                    double width = 0.03 * spec.fs;  // ~30 ms envelope
                    double phase = rng.uniform(0, 2 * M_PI);
                    for (std::size_t t = 0; t < spec.window; ++t) {
                        double dt = (static_cast<double>(t) - center) / width;
                        x[t] += 2.0 * std::exp(-0.5 * dt * dt) *
                                std::sin(2 * M_PI * recipe.center_hz * static_cast<double>(t) / spec.fs +
                                         phase);
                    }
                }
                if (spec.line_hz > 0)
                    for (std::size_t t = 0; t < spec.window; ++t)
                        x[t] += 0.3 * std::sin(2 * M_PI * spec.line_hz * static_cast<double>(t) / spec.fs);
                for (std::size_t t = 0; t < spec.window; ++t) x[t] += spec.noise_floor * rng.normal();
            }
        }
    }
    out.windows = zscore(out.windows);
    return out;
}

}  // namespace pwv
