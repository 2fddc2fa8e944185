// Copyright (c) 2026 the hass authors
// SPDX-License-Identifier: Apache-2.0

// small fips 180-4 sha-256, enough to pin corpus/artifact content hashes.
// no openssl dependency for a toy project.

#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string>

namespace hass {

struct Sha256 {
    Sha256();
    void update(std::span<const uint8_t> data);
    void update(const std::string & s);
    std::array<uint8_t, 32> finish();

  private:
    void compress(const uint8_t * block);

    uint32_t h_[8];
    uint8_t buf_[64];
    size_t buf_len_ = 0;
    uint64_t total_ = 0;
    bool done_ = false;
};

// hex digest of a whole buffer / string
std::string sha256_hex(std::span<const uint8_t> data);
std::string sha256_hex(const std::string & s);

} // namespace hass
