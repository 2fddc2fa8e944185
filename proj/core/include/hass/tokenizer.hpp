// Copyright (c) 2026 the hass authors
// SPDX-License-Identifier: Apache-2.0

// character-level tokenizer. keeps the tokenizer out of the experimental
// surface: ids are unicode codepoints ranked by corpus frequency (ties to the
// lower codepoint), capped at 511 characters; rarer characters map to an
// unknown symbol. one end-of-text control id is appended after unk.

#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

namespace hass {

struct Tokenizer {
    // text symbols (characters + unk) are capped at 512 total
    static constexpr int max_text_symbols = 512;

    std::vector<uint32_t> symbols; // codepoint of id i, in rank order
    int unk_id = -1;
    int eot_id = -1;

    // counts codepoints in utf-8 text; DataError on malformed input
    static Tokenizer build(const std::string & text);

    int vocab_size() const { return eot_id + 1; }

    // unknown characters become unk_id; never emits eot_id
    std::vector<int> encode(const std::string & text) const;
    // unk renders as U+FFFD, eot renders as nothing
    std::string decode(std::span<const int> ids) const;

    // deterministic serialization (sorted keys, fixed layout)
    std::string to_json() const;
    static Tokenizer from_json(const std::string & j);
    void save(const std::string & path) const;
    static Tokenizer load(const std::string & path);

  private:
    mutable std::unordered_map<uint32_t, int> lut_; // lazy codepoint -> id
    void build_lut() const;
};

// strict utf-8 codepoint iteration, shared with corpus stats
std::vector<uint32_t> utf8_decode(const std::string & text);
void utf8_append(std::string & out, uint32_t cp);

} // namespace hass
