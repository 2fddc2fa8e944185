// Copyright (c) 2026 the hass authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "hass/error.hpp"

#include <cstdint>
#include <vector>

namespace hass {

// boolean attention mask, true = query row may attend to key column
struct Mask {
    int n_query = 0;
    int n_key   = 0;
    std::vector<uint8_t> allow;

    Mask() = default;
    Mask(int q, int k, bool init = false) : n_query(q), n_key(k), allow((size_t) q * k, init ? 1 : 0) {
        if (q < 0 || k < 0) {
            throw ParamError(strfmt("Mask: negative dims %d x %d", q, k));
        }
    }

    bool at(int i, int j) const { return allow[(size_t) i * n_key + j] != 0; }
    void set(int i, int j, bool v = true) { allow[(size_t) i * n_key + j] = v ? 1 : 0; }

    bool row_any(int i) const {
        const uint8_t * row = allow.data() + (size_t) i * n_key;
        for (int j = 0; j < n_key; ++j) {
            if (row[j]) {
                return true;
            }
        }
        return false;
    }

    static Mask causal(int s) {
        Mask m(s, s);
        for (int i = 0; i < s; ++i) {
            for (int j = 0; j <= i; ++j) {
                m.set(i, j);
            }
        }
        return m;
    }

    // n_new query rows appended after n_prefix cached keys: full prefix visibility
    // plus causal structure among the new rows
    static Mask decode(int n_new, int n_prefix) {
        Mask m(n_new, n_prefix + n_new);
        for (int i = 0; i < n_new; ++i) {
            for (int j = 0; j <= n_prefix + i; ++j) {
                m.set(i, j);
            }
        }
        return m;
    }
};

} // namespace hass
