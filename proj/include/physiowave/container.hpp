#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "physiowave/binio.hpp"
#include "physiowave/signal.hpp"

// PWV1 container: magic "PWV1", u16 version, u8 modality, u32 C, u32 T,
// f32 fs, u64 window count, u8 dtype (0 = f32), then windows as
// little-endian f32 in B,C,T order.

namespace pwv {

inline constexpr char kContainerMagic[4] = {'P', 'W', 'V', '1'};
inline constexpr std::uint16_t kContainerVersion = 1;

inline void container_write(const WindowBatch& win, const std::string& path) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw DataError("container: cannot open '" + path + "' for writing");
    f.write(kContainerMagic, 4);
    detail::put<std::uint16_t>(f, kContainerVersion);
    detail::put<std::uint8_t>(f, static_cast<std::uint8_t>(win.modality));
    detail::put<std::uint32_t>(f, static_cast<std::uint32_t>(win.channels));
    detail::put<std::uint32_t>(f, static_cast<std::uint32_t>(win.window));
    detail::put<float>(f, static_cast<float>(win.fs));
    detail::put<std::uint64_t>(f, static_cast<std::uint64_t>(win.count));
    detail::put<std::uint8_t>(f, 0);  // dtype f32
    std::vector<float> buf(win.data.size());
    for (std::size_t i = 0; i < buf.size(); ++i) buf[i] = static_cast<float>(win.data[i]);
    f.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size() * 4));
    if (!f) throw DataError("container: short write to '" + path + "'");
}

inline WindowBatch container_read(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw DataError("container: cannot open '" + path + "'");
    char magic[4];
    f.read(magic, 4);
    if (!f || std::memcmp(magic, kContainerMagic, 4) != 0)
        throw DataError("container: bad magic in '" + path + "'");
    auto version = detail::get<std::uint16_t>(f, "version");
    if (version != kContainerVersion)
        throw DataError("container: version mismatch (" + std::to_string(version) + ")");
    WindowBatch win;
    win.modality = static_cast<Modality>(detail::get<std::uint8_t>(f, "modality"));
    win.channels = detail::get<std::uint32_t>(f, "channels");
    win.window = detail::get<std::uint32_t>(f, "window");
    win.fs = detail::get<float>(f, "fs");
    win.count = detail::get<std::uint64_t>(f, "count");
    auto dtype = detail::get<std::uint8_t>(f, "dtype");
    if (dtype != 0) throw DataError("container: unsupported dtype code");
    std::size_t n = win.count * win.channels * win.window;
    std::vector<float> buf(n);
    f.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(n * 4));
    if (static_cast<std::size_t>(f.gcount()) != n * 4)
        throw DataError("container: truncated payload in '" + path + "'");
    win.data.assign(buf.begin(), buf.end());
    return win;
}

// ------------------------------------------------------------ ingestion

// CSV recording: header row "fs=<Hz>", then one channel per column.
inline SignalRecord read_csv_record(const std::string& path, Modality modality) {
    std::ifstream f(path);
    if (!f) throw DataError("csv: cannot open '" + path + "'");
    std::string line;
    if (!std::getline(f, line)) throw DataError("csv: empty file '" + path + "'");
    if (line.rfind("fs=", 0) != 0) throw DataError("csv: first row must be 'fs=<Hz>'");
    SignalRecord rec;
    rec.modality = modality;
    rec.fs = std::stod(line.substr(3));
    std::vector<std::vector<double>> cols;
    while (std::getline(f, line)) {
        if (line.empty()) continue;
        std::stringstream ss(line);
        std::string cell;
        std::size_t c = 0;
        while (std::getline(ss, cell, ',')) {
            if (cols.size() <= c) cols.emplace_back();
            cols[c].push_back(std::stod(cell));
            ++c;
        }
    }
    if (cols.empty()) throw DataError("csv: no samples in '" + path + "'");
    rec.channels = cols.size();
    rec.samples = cols[0].size();
    for (const auto& col : cols)
        if (col.size() != rec.samples) throw DataError("csv: ragged columns in '" + path + "'");
    rec.data.resize(rec.channels * rec.samples);
    for (std::size_t c = 0; c < rec.channels; ++c)
        for (std::size_t t = 0; t < rec.samples; ++t) rec.at(c, t) = cols[c][t];
    rec.validate();
    return rec;
}

// Raw little-endian f32 stream with a "<path>.meta" sidecar of key=value
// lines: channels, fs, modality.
inline SignalRecord read_raw_record(const std::string& path) {
    std::ifstream meta(path + ".meta");
    if (!meta) throw DataError("raw: missing sidecar '" + path + ".meta'");
    SignalRecord rec;
    rec.channels = 0;
    std::string line;
    while (std::getline(meta, line)) {
        auto eq = line.find('=');
        if (eq == std::string::npos) continue;
        std::string key = line.substr(0, eq), val = line.substr(eq + 1);
        if (key == "channels") rec.channels = std::stoul(val);
        else if (key == "fs") rec.fs = std::stod(val);
        else if (key == "modality") rec.modality = modality_from(val);
        else throw DataError("raw: unknown sidecar key '" + key + "'");
    }
    std::ifstream f(path, std::ios::binary);
    if (!f) throw DataError("raw: cannot open '" + path + "'");
    f.seekg(0, std::ios::end);
    std::size_t bytes = static_cast<std::size_t>(f.tellg());
    f.seekg(0);
    if (rec.channels == 0 || bytes % (4 * rec.channels) != 0)
        throw DataError("raw: size not divisible by channel count");
    std::size_t n = bytes / 4;
    std::vector<float> buf(n);
    f.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(bytes));
    if (!f) throw DataError("raw: short read");
    rec.samples = n / rec.channels;
    rec.data.assign(buf.begin(), buf.end());
    rec.validate();
    return rec;
}

// ----------------------------------------------------------- labels CSV

inline void write_labels(const std::vector<int>& labels, const std::string& path) {
    std::ofstream f(path);
    if (!f) throw DataError("labels: cannot open '" + path + "' for writing");
    f << "window,label\n";
    for (std::size_t i = 0; i < labels.size(); ++i) f << i << "," << labels[i] << "\n";
}

inline std::vector<int> read_labels(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw DataError("labels: cannot open '" + path + "'");
    std::string line;
    std::getline(f, line);  // header
    std::vector<int> labels;
    while (std::getline(f, line)) {
        if (line.empty()) continue;
        auto comma = line.find(',');
        if (comma == std::string::npos) throw DataError("labels: malformed row '" + line + "'");
        labels.push_back(std::stoi(line.substr(comma + 1)));
    }
    return labels;
}

}  // namespace pwv
