#pragma once

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstdint>
#include <vector>

#include "physiowave/errors.hpp"

namespace pwv {

enum class Modality : std::uint8_t { ecg = 0, emg = 1, synth = 2 };

inline const char* modality_name(Modality m) {
    switch (m) {
        case Modality::ecg: return "ecg";
        case Modality::emg: return "emg";
        default: return "synth";
    }
}

inline Modality modality_from(const std::string& s) {
    if (s == "ecg") return Modality::ecg;
    if (s == "emg") return Modality::emg;
    if (s == "synth") return Modality::synth;
    throw ConfigError("unknown modality '" + s + "'");
}

// Raw multi-channel recording, row-major C x T.
struct SignalRecord {
    Modality modality = Modality::synth;
    std::size_t channels = 0;
    std::size_t samples = 0;
    double fs = 0;
    std::vector<double> data;

    double& at(std::size_t c, std::size_t t) { return data[c * samples + t]; }
    double at(std::size_t c, std::size_t t) const { return data[c * samples + t]; }

    void validate() const {
        if (fs <= 0) throw DataError("record: fs must be positive");
        if (channels < 1) throw DataError("record: need at least one channel");
        if (data.size() != channels * samples) throw DataError("record: data length mismatch");
    }
};

// Fixed-length windows, row-major B x C x T.
struct WindowBatch {
    Modality modality = Modality::synth;
    std::size_t count = 0;
    std::size_t channels = 0;
    std::size_t window = 0;
    std::size_t step = 0;
    double fs = 0;
    std::vector<double> data;

    double* window_ptr(std::size_t b) { return &data[b * channels * window]; }
    const double* window_ptr(std::size_t b) const { return &data[b * channels * window]; }
};

// ------------------------------------------------------------- filters

struct Biquad {
    double b0, b1, b2, a1, a2;
};

namespace detail {

inline std::complex<double> biquad_response(const Biquad& q, double omega) {
    std::complex<double> z = std::polar(1.0, omega);
    std::complex<double> z2 = z * z;
    return (q.b0 * z2 + q.b1 * z + q.b2) / (z2 + q.a1 * z + q.a2);
}

// One pass of a direct-form-II-transposed cascade. State starts at the
// steady-state response to the first sample, which removes step transients
// at the boundaries.
inline void run_cascade(std::vector<double>& x, const std::vector<Biquad>& cascade) {
    for (const Biquad& q : cascade) {
        double g0 = (q.b0 + q.b1 + q.b2) / (1.0 + q.a1 + q.a2);
        double z1 = (g0 - q.b0) * x.front();
        double z2 = (q.b2 - q.a2 * g0) * x.front();
        for (double& v : x) {
            double y = q.b0 * v + z1;
            z1 = q.b1 * v - q.a1 * y + z2;
            z2 = q.b2 * v - q.a2 * y;
            v = y;
        }
    }
}

}  // namespace detail

// Butterworth band-pass of analog prototype order 4 (8 poles, 4 biquads),
// bilinear transform with prewarped edges, per-section gain pinned at the
// geometric center frequency.
inline std::vector<Biquad> butter_bandpass(double lo, double hi, double fs) {
    if (!(lo > 0) || !(hi > lo) || !(hi < fs / 2)) throw ConfigError("bandpass: need 0 < lo < hi < fs/2");
    const int order = 4;
    double wl = std::tan(M_PI * lo / fs);
    double wh = std::tan(M_PI * hi / fs);
    double w0sq = wl * wh;
    double bw = wh - wl;

    std::vector<Biquad> cascade;
    double wc = 2.0 * std::atan(std::sqrt(w0sq));
    for (int k = 1; k <= order; ++k) {
        double ang = M_PI * (2.0 * k + order - 1.0) / (2.0 * order);
        std::complex<double> p(std::cos(ang), std::sin(ang));
        if (p.imag() < 0) continue;  // one of each conjugate pair; partner added below
        // lowpass-to-bandpass: s^2 - p*bw*s + w0^2 = 0
        std::complex<double> pb = p * bw;
        std::complex<double> disc = std::sqrt(pb * pb - 4.0 * w0sq);
        for (std::complex<double> s : {(pb + disc) / 2.0, (pb - disc) / 2.0}) {
            std::complex<double> zp = (1.0 + s) / (1.0 - s);  // bilinear
            Biquad q{1.0, 0.0, -1.0, -2.0 * zp.real(), std::norm(zp)};
            double g = std::abs(detail::biquad_response(q, wc));
            q.b0 /= g;
            q.b1 /= g;
            q.b2 /= g;
            cascade.push_back(q);
        }
    }
    return cascade;
}

// Second-order IIR notch (unit gain at DC and Nyquist, zero at f0).
inline Biquad notch_biquad(double f0, double quality, double fs) {
    double w0 = 2.0 * M_PI * f0 / fs;
    double alpha = std::sin(w0) / (2.0 * quality);
    double c = std::cos(w0);
    double a0 = 1.0 + alpha;
    return Biquad{1.0 / a0, -2.0 * c / a0, 1.0 / a0, -2.0 * c / a0, (1.0 - alpha) / a0};
}

// Zero-phase filtering: odd-reflection padding, forward pass, backward pass.
inline void filtfilt(std::vector<double>& x, const std::vector<Biquad>& cascade, std::size_t pad) {
    std::size_t n = x.size();
    if (n < 2) return;
    pad = std::min(pad, n - 1);
    std::vector<double> ext;
    ext.reserve(n + 2 * pad);
    for (std::size_t i = 0; i < pad; ++i) ext.push_back(2.0 * x[0] - x[pad - i]);
    ext.insert(ext.end(), x.begin(), x.end());
    for (std::size_t i = 0; i < pad; ++i) ext.push_back(2.0 * x[n - 1] - x[n - 2 - i]);

    detail::run_cascade(ext, cascade);
    std::reverse(ext.begin(), ext.end());
    detail::run_cascade(ext, cascade);
    std::reverse(ext.begin(), ext.end());
    std::copy(ext.begin() + pad, ext.begin() + pad + n, x.begin());
}

inline SignalRecord bandpass(const SignalRecord& rec, double lo, double hi) {
    rec.validate();
    auto cascade = butter_bandpass(lo, hi, rec.fs);
    std::size_t pad = static_cast<std::size_t>(std::ceil(3.0 * rec.fs / lo));
    SignalRecord out = rec;
    std::vector<double> chan(rec.samples);
    for (std::size_t c = 0; c < rec.channels; ++c) {
        std::copy(&rec.data[c * rec.samples], &rec.data[(c + 1) * rec.samples], chan.begin());
        filtfilt(chan, cascade, pad);
        std::copy(chan.begin(), chan.end(), &out.data[c * rec.samples]);
    }
    return out;
}

inline SignalRecord notch50(const SignalRecord& rec) {
    rec.validate();
    if (rec.fs <= 100) throw ConfigError("notch50: fs must exceed 100 Hz");
    const double quality = 30.0;
    std::vector<Biquad> cascade{notch_biquad(50.0, quality, rec.fs)};
    std::size_t pad = static_cast<std::size_t>(std::ceil(3.0 * rec.fs * quality / (M_PI * 50.0)));
    SignalRecord out = rec;
    std::vector<double> chan(rec.samples);
    for (std::size_t c = 0; c < rec.channels; ++c) {
        std::copy(&rec.data[c * rec.samples], &rec.data[(c + 1) * rec.samples], chan.begin());
        filtfilt(chan, cascade, pad);
        std::copy(chan.begin(), chan.end(), &out.data[c * rec.samples]);
    }
    return out;
}

// --------------------------------------------------------- resampling etc.

// Linear-interpolation upsampling; the corpora are only ever raised to the
// target rate, never decimated.
inline SignalRecord resample(const SignalRecord& rec, double fs_target) {
    rec.validate();
    if (fs_target < rec.fs) throw ConfigError("resample: downsampling not supported");
    if (fs_target == rec.fs) return rec;
    std::size_t n_out = static_cast<std::size_t>(std::llround(
        static_cast<double>(rec.samples) * fs_target / rec.fs));
    SignalRecord out;
    out.modality = rec.modality;
    out.channels = rec.channels;
    out.samples = n_out;
    out.fs = fs_target;
    out.data.resize(rec.channels * n_out);
    double ratio = rec.fs / fs_target;
    for (std::size_t c = 0; c < rec.channels; ++c)
        for (std::size_t j = 0; j < n_out; ++j) {
            double pos = static_cast<double>(j) * ratio;
            std::size_t i = static_cast<std::size_t>(pos);
            if (i >= rec.samples - 1) {
                out.at(c, j) = rec.at(c, rec.samples - 1);
            } else {
                double frac = pos - static_cast<double>(i);
                out.at(c, j) = rec.at(c, i) * (1.0 - frac) + rec.at(c, i + 1) * frac;
            }
        }
    return out;
}

inline SignalRecord pad_channels(const SignalRecord& rec, std::size_t c_target) {
    rec.validate();
    if (rec.channels > c_target) throw DataError("pad_channels: record has more channels than target");
    if (rec.channels == c_target) return rec;
    SignalRecord out = rec;
    out.channels = c_target;
    out.data.resize(c_target * rec.samples, 0.0);
    return out;
}

// count = floor((T_raw - T)/step) + 1; short recordings yield one
// zero-padded window.
inline WindowBatch slide_windows(const SignalRecord& rec, std::size_t window, std::size_t step) {
    rec.validate();
    if (window == 0) throw ConfigError("slide_windows: window must be positive");
    if (step == 0) throw ConfigError("slide_windows: step must be positive");
    WindowBatch out;
    out.modality = rec.modality;
    out.channels = rec.channels;
    out.window = window;
    out.step = step;
    out.fs = rec.fs;
    if (rec.samples >= window) {
        out.count = (rec.samples - window) / step + 1;
        out.data.resize(out.count * rec.channels * window);
        for (std::size_t b = 0; b < out.count; ++b)
            for (std::size_t c = 0; c < rec.channels; ++c)
                std::copy(&rec.data[c * rec.samples + b * step],
                          &rec.data[c * rec.samples + b * step + window],
                          out.window_ptr(b) + c * window);
    } else {
        out.count = 1;
        out.data.assign(rec.channels * window, 0.0);
        for (std::size_t c = 0; c < rec.channels; ++c)
            std::copy(&rec.data[c * rec.samples], &rec.data[(c + 1) * rec.samples],
                      out.window_ptr(0) + c * window);
    }
    return out;
}

// Per-window per-channel standardization; channels with vanishing spread
// map to zeros rather than dividing by eps.
inline WindowBatch zscore(const WindowBatch& win) {
    if (win.window < 2) throw ConfigError("zscore: window must be >= 2");
    WindowBatch out = win;
    const double eps = 1e-8;
    for (std::size_t b = 0; b < win.count; ++b)
        for (std::size_t c = 0; c < win.channels; ++c) {
            double* x = out.window_ptr(b) + c * win.window;
            double mean = 0;
            for (std::size_t t = 0; t < win.window; ++t) mean += x[t];
            mean /= static_cast<double>(win.window);
            double var = 0;
            for (std::size_t t = 0; t < win.window; ++t) var += (x[t] - mean) * (x[t] - mean);
            double sd = std::sqrt(var / static_cast<double>(win.window));
            if (sd < eps) {
                for (std::size_t t = 0; t < win.window; ++t) x[t] = 0.0;
            } else {
                for (std::size_t t = 0; t < win.window; ++t) x[t] = (x[t] - mean) / sd;
            }
        }
    return out;
}

}  // namespace pwv
