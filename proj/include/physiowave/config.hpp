#pragma once

#include <algorithm>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "physiowave/errors.hpp"

// Plain-text key=value run configuration. Unknown keys are rejected (all of
// them reported at once); the fully resolved set is echoed into metrics and
// checkpoint headers so any run can be reproduced from its artifacts.

namespace pwv {

class RunConfig {
public:
    RunConfig() = default;

    static const std::map<std::string, std::string>& defaults() {
        static const std::map<std::string, std::string> kDefaults = {
            // data geometry and corpora
            {"modality", "synth"},
            {"channels", "4"},
            {"fs", "500"},
            {"window", "1024"},
            {"step", "512"},
            {"corpus", ""},
            {"labels", ""},
            {"val_fraction", "0.2"},
            // preprocessing
            {"bandpass_lo", "0.5"},
            {"bandpass_hi", "40"},
            {"notch", "1"},
            // wavelet front-end
            {"wavelet_bases", "haar,db4"},
            {"wavelet_kernel", "8"},
            {"wavelet_levels", "2"},
            {"default_basis", ""},
            {"selector_hidden", "64"},
            {"caffn_segment", "16"},
            {"caffn_kernel", "3"},
            // masking / tokenizer
            {"patch_width", "64"},
            {"mask_ratio", "0.70"},
            {"importance_ratio", "0.60"},
            {"max_tokens", "2048"},
            // model
            {"size_preset", "custom"},
            {"embed_dim", "64"},
            {"encoder_layers", "2"},
            {"attention_heads", "4"},
            {"mlp_ratio", "4.0"},
            {"drop_path", "0.10"},
            {"decoder_dim", "64"},
            {"decoder_layers", "2"},
            {"decoder_heads", "4"},
            // optimization (paper setup; desk runs override batch/steps)
            {"batch", "8"},
            {"accum_batches", "1"},
            {"epochs", "50"},
            {"warmup_epochs", "10"},
            {"lr_start", "5e-7"},
            {"lr_peak", "5e-5"},
            {"lr_floor", "1e-6"},
            {"weight_decay", "0.01"},
            {"beta1", "0.9"},
            {"beta2", "0.98"},
            {"clip_norm", "3"},
            {"steps", "0"},
            {"seed", "42"},
            {"ablate_fgm", "0"},
            // fine-tuning head and schedule
            {"classes", "3"},
            {"head_hidden", "0"},
            {"label_smoothing", "0.10"},
            {"layer_decay", "0.90"},
            {"finetune_lr_scale", "0.1"},
            {"finetune_epochs", "50"},
            {"finetune_warmup_epochs", "5"},
            {"early_stop_patience", "5"},
            // fusion
            {"modalities", ""},
            {"fuse_epochs", "30"},
            {"fuse_lr", "0.05"},
            // synthetic corpus
            {"synth_classes", "3"},
            {"synth_windows_per_class", "200"},
            {"synth_bands", "40:10:2,120:20:3,220:30:4"},
            {"synth_noise", "0.1"},
            {"synth_line_hz", "0"},
        };
        return kDefaults;
    }

    static RunConfig from_file(const std::string& path) {
        std::ifstream f(path);
        if (!f) throw ConfigError("cannot open config file '" + path + "'");
        std::stringstream ss;
        ss << f.rdbuf();
        return from_string(ss.str());
    }

    static RunConfig from_string(const std::string& text) {
        RunConfig cfg;
        std::istringstream is(text);
        std::string line;
        std::vector<std::string> bad;
        while (std::getline(is, line)) {
            auto hash = line.find('#');
            if (hash != std::string::npos) line = line.substr(0, hash);
            auto first = line.find_first_not_of(" \t\r");
            if (first == std::string::npos) continue;
            auto eq = line.find('=');
            if (eq == std::string::npos) {
                bad.push_back(line.substr(first));
                continue;
            }
            auto trim = [](std::string s) {
                auto a = s.find_first_not_of(" \t\r");
                auto b = s.find_last_not_of(" \t\r");
                return a == std::string::npos ? std::string() : s.substr(a, b - a + 1);
            };
            std::string key = trim(line.substr(0, eq));
            std::string val = trim(line.substr(eq + 1));
            if (!defaults().count(key)) {
                bad.push_back(key);
                continue;
            }
            cfg.explicit_[key] = val;
        }
        if (!bad.empty()) {
            std::string msg = "unknown config keys:";
            for (const auto& k : bad) msg += " '" + k + "'";
            throw ConfigError(msg);
        }
        return cfg;
    }

    void set(const std::string& key, const std::string& value) {
        if (!defaults().count(key)) throw ConfigError("unknown config key '" + key + "'");
        explicit_[key] = value;
    }

    bool is_explicit(const std::string& key) const { return explicit_.count(key) != 0; }

    std::string str(const std::string& key) const {
        auto it = explicit_.find(key);
        if (it != explicit_.end()) return it->second;
        auto pit = preset_resolved().find(key);
        if (pit != preset_resolved().end()) return pit->second;
        auto dit = defaults().find(key);
        if (dit == defaults().end()) throw ConfigError("unknown config key '" + key + "'");
        return dit->second;
    }

    double num(const std::string& key) const {
        try {
            return std::stod(str(key));
        } catch (const std::exception&) {
            throw ConfigError("key '" + key + "' is not numeric: '" + str(key) + "'");
        }
    }

    long count(const std::string& key) const {
        double v = num(key);
        if (v < 0 || v != static_cast<double>(static_cast<long>(v)))
            throw ConfigError("key '" + key + "' must be a non-negative integer");
        return static_cast<long>(v);
    }

    bool flag(const std::string& key) const {
        std::string v = str(key);
        return v == "1" || v == "true" || v == "yes";
    }

    std::vector<std::string> list(const std::string& key) const {
        std::vector<std::string> out;
        std::stringstream ss(str(key));
        std::string item;
        while (std::getline(ss, item, ','))
            if (!item.empty()) out.push_back(item);
        return out;
    }

    // Every effective key=value, sorted; embedded in all artifacts.
    std::string echo() const {
        std::string out;
        for (const auto& [key, def] : defaults()) {
            out += key;
            out += "=";
            out += str(key);
            out += "\n";
        }
        return out;
    }

private:
    // Modality and size presets fill anything the file left implicit.
    const std::map<std::string, std::string>& preset_resolved() const {
        if (!preset_cache_.has_value()) {
            std::map<std::string, std::string> p;
            auto raw = [&](const std::string& k) {
                auto it = explicit_.find(k);
                return it != explicit_.end() ? it->second : defaults().at(k);
            };
            std::string modality = raw("modality");
            if (modality == "ecg") {
                p["channels"] = "12";
                p["fs"] = "500";
                p["wavelet_levels"] = "4";
                p["wavelet_kernel"] = "24";
                p["wavelet_bases"] = "sym4,sym5,db6,coif3,bior4.4";
                p["default_basis"] = "sym4";
                p["bandpass_lo"] = "0.5";
                p["bandpass_hi"] = "40";
            } else if (modality == "emg") {
                p["channels"] = "16";
                p["fs"] = "2000";
                p["wavelet_levels"] = "3";
                p["wavelet_kernel"] = "16";
                p["wavelet_bases"] = "db4,bior4.4,sym5,coif5";
                p["default_basis"] = "db4";
                p["bandpass_lo"] = "20";
                p["bandpass_hi"] = "450";
            }
            std::string size = raw("size_preset");
            if (size == "small" || size == "base" || size == "large") {
                p["embed_dim"] = size == "small" ? "256" : size == "base" ? "384" : "512";
                p["encoder_layers"] = size == "small" ? "6" : size == "base" ? "8" : "12";
                p["attention_heads"] = size == "small" ? "8" : size == "base" ? "12" : "16";
                p["decoder_dim"] = "256";
                p["decoder_layers"] = "8";
                p["decoder_heads"] = "8";
            } else if (size != "custom") {
                throw ConfigError("size_preset must be small|base|large|custom");
            }
            preset_cache_ = std::move(p);
        }
        return *preset_cache_;
    }

    std::map<std::string, std::string> explicit_;
    mutable std::optional<std::map<std::string, std::string>> preset_cache_;
};

}  // namespace pwv
