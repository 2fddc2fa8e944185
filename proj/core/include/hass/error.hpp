// Copyright (c) 2026 the hass authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdio>
#include <stdexcept>
#include <string>

namespace hass {

// error taxonomy, mapped to process exit codes by the cli:
//   ParamError/ShapeError/CapacityError -> 2 (bad usage or config)
//   DataError/FormatError               -> 3 (bad input data or files)
//   NumericError                        -> 4 (nan/inf or diverged computation)
//   anything else                       -> 1
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct ParamError    : Error { using Error::Error; };
struct ShapeError    : Error { using Error::Error; };
struct CapacityError : Error { using Error::Error; };
struct StateError    : Error { using Error::Error; };
struct DataError     : Error { using Error::Error; };
struct FormatError   : Error { using Error::Error; };
struct NumericError  : Error { using Error::Error; };

// printf-style message helper (gcc 11 has no std::format)
template <typename... Args>
inline std::string strfmt(const char * fmt, Args... args) {
    const int n = std::snprintf(nullptr, 0, fmt, args...);
    std::string s(n > 0 ? (size_t) n : 0, '\0');
    if (n > 0) {
        std::snprintf(s.data(), (size_t) n + 1, fmt, args...);
    }
    return s;
}

inline std::string strfmt(const char * fmt) { return std::string(fmt); }

} // namespace hass
