#pragma once

#include <cstring>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "physiowave/autodiff.hpp"
#include "physiowave/binio.hpp"

// Checkpoint file: magic "PWC1", u16 version, u64 step, u32 config length +
// config echo text, u32 parameter count, then per parameter: u16 name
// length + name, u8 ndim, u32 dims, little-endian f32 payload.

namespace pwv {

inline constexpr char kCheckpointMagic[4] = {'P', 'W', 'C', '1'};
inline constexpr std::uint16_t kCheckpointVersion = 1;

template <typename T>
void checkpoint_write(const std::string& path, const std::vector<Parameter<T>*>& params,
                      const std::string& config_echo, std::uint64_t step) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw DataError("checkpoint: cannot open '" + path + "' for writing");
    f.write(kCheckpointMagic, 4);
    detail::put<std::uint16_t>(f, kCheckpointVersion);
    detail::put<std::uint64_t>(f, step);
    detail::put<std::uint32_t>(f, static_cast<std::uint32_t>(config_echo.size()));
    f.write(config_echo.data(), static_cast<std::streamsize>(config_echo.size()));
    detail::put<std::uint32_t>(f, static_cast<std::uint32_t>(params.size()));
    for (const auto* p : params) {
        detail::put<std::uint16_t>(f, static_cast<std::uint16_t>(p->name.size()));
        f.write(p->name.data(), static_cast<std::streamsize>(p->name.size()));
        const Tensor<T>& t = p->var.value();
        detail::put<std::uint8_t>(f, static_cast<std::uint8_t>(t.ndim()));
        for (std::size_t d : t.shape) detail::put<std::uint32_t>(f, static_cast<std::uint32_t>(d));
        std::vector<float> buf(t.size());
        for (std::size_t i = 0; i < buf.size(); ++i) buf[i] = static_cast<float>(t.data[i]);
        f.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size() * 4));
    }
    if (!f) throw DataError("checkpoint: short write to '" + path + "'");
}

struct CheckpointInfo {
    std::uint64_t step = 0;
    std::string config_echo;
};

// Header-only read: the embedded config echo without touching parameters.
inline CheckpointInfo checkpoint_header(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw DataError("checkpoint: cannot open '" + path + "'");
    char magic[4];
    f.read(magic, 4);
    if (!f || std::memcmp(magic, kCheckpointMagic, 4) != 0)
        throw DataError("checkpoint: bad magic in '" + path + "'");
    if (detail::get<std::uint16_t>(f, "version") != kCheckpointVersion)
        throw DataError("checkpoint: version mismatch");
    CheckpointInfo info;
    info.step = detail::get<std::uint64_t>(f, "step");
    auto len = detail::get<std::uint32_t>(f, "config length");
    info.config_echo.resize(len);
    f.read(info.config_echo.data(), len);
    if (!f) throw DataError("checkpoint: truncated config echo in '" + path + "'");
    return info;
}

// Loads parameters by name into the supplied set; every stored blob must
// match an existing parameter of identical shape, and vice versa.
template <typename T>
CheckpointInfo checkpoint_read(const std::string& path, const std::vector<Parameter<T>*>& params) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw DataError("checkpoint: cannot open '" + path + "'");
    char magic[4];
    f.read(magic, 4);
    if (!f || std::memcmp(magic, kCheckpointMagic, 4) != 0)
        throw DataError("checkpoint: bad magic in '" + path + "'");
    if (detail::get<std::uint16_t>(f, "version") != kCheckpointVersion)
        throw DataError("checkpoint: version mismatch");
    CheckpointInfo info;
    info.step = detail::get<std::uint64_t>(f, "step");
    auto cfg_len = detail::get<std::uint32_t>(f, "config length");
    info.config_echo.resize(cfg_len);
    f.read(info.config_echo.data(), cfg_len);
    if (!f) throw DataError("checkpoint: truncated config echo");

    std::map<std::string, Parameter<T>*> by_name;
    for (auto* p : params) by_name[p->name] = p;
    auto count = detail::get<std::uint32_t>(f, "parameter count");
    if (count != params.size())
        throw DataError("checkpoint: holds " + std::to_string(count) + " parameters, model has " +
                        std::to_string(params.size()));
    for (std::uint32_t i = 0; i < count; ++i) {
        auto name_len = detail::get<std::uint16_t>(f, "name length");
        std::string name(name_len, '\0');
        f.read(name.data(), name_len);
        auto it = by_name.find(name);
        if (it == by_name.end()) throw DataError("checkpoint: unexpected parameter '" + name + "'");
        auto ndim = detail::get<std::uint8_t>(f, "ndim");
        std::vector<std::size_t> shape(ndim);
        for (auto& d : shape) d = detail::get<std::uint32_t>(f, "dim");
        Tensor<T>& t = it->second->var.value();
        if (shape != t.shape) throw DataError("checkpoint: shape mismatch for '" + name + "'");
        std::vector<float> buf(t.size());
        f.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size() * 4));
        if (static_cast<std::size_t>(f.gcount()) != buf.size() * 4)
            throw DataError("checkpoint: truncated payload for '" + name + "'");
        for (std::size_t j = 0; j < buf.size(); ++j) t.data[j] = T(buf[j]);
    }
    return info;
}

}  // namespace pwv
