#pragma once

#include <cstdint>
#include <fstream>
#include <string>

#include "physiowave/errors.hpp"

namespace pwv::detail {

template <typename U>
void put(std::ofstream& f, U v) {
    f.write(reinterpret_cast<const char*>(&v), sizeof(U));
}

template <typename U>
U get(std::ifstream& f, const char* what) {
    U v{};
    f.read(reinterpret_cast<char*>(&v), sizeof(U));
    if (!f) throw DataError(std::string("container: truncated ") + what);
    return v;
}

}  // namespace pwv::detail
