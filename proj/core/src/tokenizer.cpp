// Copyright (c) 2026 the hass authors
// SPDX-License-Identifier: Apache-2.0

#include "hass/tokenizer.hpp"

#include "hass/error.hpp"

#include <json.hpp>

#include <algorithm>
#include <fstream>
#include <map>

namespace hass {

std::vector<uint32_t> utf8_decode(const std::string & text) {
    std::vector<uint32_t> out;
    out.reserve(text.size());
    const auto * p = (const uint8_t *) text.data();
    const size_t n = text.size();
    size_t i = 0;
    while (i < n) {
        const uint8_t b = p[i];
        uint32_t cp = 0;
        int extra = 0;
        if (b < 0x80) {
            cp = b;
        } else if ((b & 0xe0) == 0xc0) {
            cp = b & 0x1f;
            extra = 1;
        } else if ((b & 0xf0) == 0xe0) {
            cp = b & 0x0f;
            extra = 2;
        } else if ((b & 0xf8) == 0xf0) {
            cp = b & 0x07;
            extra = 3;
        } else {
            throw DataError(strfmt("utf-8: invalid lead byte 0x%02x at offset %zu", b, i));
        }
        if (extra > 0 && i + (size_t) extra >= n) {
            throw DataError(strfmt("utf-8: truncated sequence at offset %zu", i));
        }
        for (int k = 1; k <= extra; ++k) {
            if ((p[i + k] & 0xc0) != 0x80) {
                throw DataError(strfmt("utf-8: bad continuation byte at offset %zu", i + k));
            }
            cp = (cp << 6) | (p[i + k] & 0x3f);
        }
        // reject overlong encodings and surrogates so round-trips are unique
        if ((extra == 1 && cp < 0x80) || (extra == 2 && cp < 0x800) || (extra == 3 && cp < 0x10000) ||
            (cp >= 0xd800 && cp <= 0xdfff) || cp > 0x10ffff) {
            throw DataError(strfmt("utf-8: invalid codepoint at offset %zu", i));
        }
        out.push_back(cp);
        i += 1 + extra;
    }
    return out;
}

void utf8_append(std::string & out, uint32_t cp) {
    if (cp < 0x80) {
        out += (char) cp;
    } else if (cp < 0x800) {
        out += (char) (0xc0 | (cp >> 6));
        out += (char) (0x80 | (cp & 0x3f));
    } else if (cp < 0x10000) {
        out += (char) (0xe0 | (cp >> 12));
        out += (char) (0x80 | ((cp >> 6) & 0x3f));
        out += (char) (0x80 | (cp & 0x3f));
    } else if (cp <= 0x10ffff) {
        out += (char) (0xf0 | (cp >> 18));
        out += (char) (0x80 | ((cp >> 12) & 0x3f));
        out += (char) (0x80 | ((cp >> 6) & 0x3f));
        out += (char) (0x80 | (cp & 0x3f));
    } else {
        throw ParamError("utf-8: codepoint out of range");
    }
}

Tokenizer Tokenizer::build(const std::string & text) {
    if (text.empty()) {
        throw DataError("tokenizer: empty corpus");
    }
    std::map<uint32_t, uint64_t> counts;
    for (uint32_t cp : utf8_decode(text)) {
        counts[cp]++;
    }
    std::vector<std::pair<uint32_t, uint64_t>> ranked(counts.begin(), counts.end());
    std::stable_sort(ranked.begin(), ranked.end(), [](const auto & a, const auto & b) {
        if (a.second != b.second) {
            return a.second > b.second;
        }
        return a.first < b.first;
    });

    Tokenizer t;
    const size_t keep = std::min(ranked.size(), (size_t) (max_text_symbols - 1));
    t.symbols.reserve(keep);
    for (size_t i = 0; i < keep; ++i) {
        t.symbols.push_back(ranked[i].first);
    }
    t.unk_id = (int) t.symbols.size();
    t.eot_id = t.unk_id + 1;
    return t;
}

void Tokenizer::build_lut() const {
    if (!lut_.empty() || symbols.empty()) {
        return;
    }
    lut_.reserve(symbols.size());
    for (size_t i = 0; i < symbols.size(); ++i) {
        lut_.emplace(symbols[i], (int) i);
    }
}

std::vector<int> Tokenizer::encode(const std::string & text) const {
    if (unk_id < 0) {
        throw StateError("tokenizer: not built");
    }
    build_lut();
    std::vector<int> out;
    const auto cps = utf8_decode(text);
    out.reserve(cps.size());
    for (uint32_t cp : cps) {
        const auto it = lut_.find(cp);
        out.push_back(it == lut_.end() ? unk_id : it->second);
    }
    return out;
}

std::string Tokenizer::decode(std::span<const int> ids) const {
    if (unk_id < 0) {
        throw StateError("tokenizer: not built");
    }
    std::string out;
    for (int id : ids) {
        if (id < 0 || id > eot_id) {
            throw ParamError(strfmt("tokenizer: id %d out of range", id));
        }
        if (id == eot_id) {
            continue;
        }
        utf8_append(out, id == unk_id ? 0xfffd : symbols[id]);
    }
    return out;
}

std::string Tokenizer::to_json() const {
    nlohmann::json j;
    j["version"] = 1;
    j["symbols"] = symbols;
    j["unk_id"] = unk_id;
    j["eot_id"] = eot_id;
    return j.dump(2) + "\n";
}

Tokenizer Tokenizer::from_json(const std::string & s) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(s);
    } catch (const nlohmann::json::exception & e) {
        throw FormatError(strfmt("tokenizer: bad json: %s", e.what()));
    }
    if (!j.contains("version") || j["version"] != 1) {
        throw FormatError("tokenizer: unsupported vocabulary version");
    }
    Tokenizer t;
    try {
        t.symbols = j.at("symbols").get<std::vector<uint32_t>>();
        t.unk_id = j.at("unk_id").get<int>();
        t.eot_id = j.at("eot_id").get<int>();
    } catch (const nlohmann::json::exception & e) {
        throw FormatError(strfmt("tokenizer: bad vocabulary fields: %s", e.what()));
    }
    if (t.unk_id != (int) t.symbols.size() || t.eot_id != t.unk_id + 1 ||
        (int) t.symbols.size() > max_text_symbols - 1) {
        throw FormatError("tokenizer: inconsistent vocabulary layout");
    }
    return t;
}

void Tokenizer::save(const std::string & path) const {
    std::ofstream f(path, std::ios::binary);
    if (!f) {
        throw DataError(strfmt("tokenizer: cannot write '%s'", path.c_str()));
    }
    f << to_json();
    if (!f) {
        throw DataError(strfmt("tokenizer: write failed for '%s'", path.c_str()));
    }
}

Tokenizer Tokenizer::load(const std::string & path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) {
        throw DataError(strfmt("tokenizer: cannot read '%s'", path.c_str()));
    }
    std::string s((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    return from_json(s);
}

} // namespace hass
