// Copyright (c) 2026 the hass authors
// SPDX-License-Identifier: Apache-2.0

#include "hass/checkpoint.hpp"

#include <json.hpp>

#include <cstring>
#include <fstream>
#include <set>

namespace hass {

using json = nlohmann::json;

static json config_to_json(const ModelConfig & c) {
    json j;
    j["vocab_size"]   = c.vocab_size;
    j["d_model"]      = c.d_model;
    j["n_layers"]     = c.n_layers;
    j["n_heads"]      = c.n_heads;
    j["d_ff"]         = c.d_ff;
    j["max_seq_len"]  = c.max_seq_len;
    j["rms_norm_eps"] = c.rms_norm_eps;
    return j;
}

static ModelConfig config_from_json(const json & j) {
    static const std::set<std::string> known = {
        "vocab_size", "d_model", "n_layers", "n_heads", "d_ff", "max_seq_len", "rms_norm_eps",
    };
    for (auto it = j.begin(); it != j.end(); ++it) {
        if (!known.count(it.key())) {
            throw FormatError(strfmt("checkpoint: unknown config key '%s'", it.key().c_str()));
        }
    }
    ModelConfig c;
    c.vocab_size   = j.at("vocab_size").get<int>();
    c.d_model      = j.at("d_model").get<int>();
    c.n_layers     = j.at("n_layers").get<int>();
    c.n_heads      = j.at("n_heads").get<int>();
    c.d_ff         = j.at("d_ff").get<int>();
    c.max_seq_len  = j.at("max_seq_len").get<int>();
    c.rms_norm_eps = j.at("rms_norm_eps").get<double>();
    return c;
}

const Tensor * Checkpoint::find_tensor(const std::string & name) const {
    for (const auto & [n, t] : tensors) {
        if (n == name) {
            return &t;
        }
    }
    return nullptr;
}

const std::vector<int32_t> * Checkpoint::find_ints(const std::string & name) const {
    for (const auto & [n, v] : ints) {
        if (n == name) {
            return &v;
        }
    }
    return nullptr;
}

static void append_le32(std::string & out, uint32_t v) {
    for (int i = 0; i < 4; ++i) {
        out.push_back((char) ((v >> (8 * i)) & 0xff));
    }
}

static void append_le64(std::string & out, uint64_t v) {
    for (int i = 0; i < 8; ++i) {
        out.push_back((char) ((v >> (8 * i)) & 0xff));
    }
}

static uint64_t read_le(const std::string & s, size_t off, int nbytes) {
    uint64_t v = 0;
    for (int i = 0; i < nbytes; ++i) {
        v |= (uint64_t) (uint8_t) s[off + i] << (8 * i);
    }
    return v;
}

void save_checkpoint(const Checkpoint & c, const std::string & path) {
    if (c.kind.empty()) {
        throw ParamError("checkpoint: kind must be set before saving");
    }
    std::set<std::string> seen;
    for (const auto & [name, t] : c.tensors) {
        if (!seen.insert("t:" + name).second) {
            throw ParamError(strfmt("checkpoint: duplicate tensor '%s'", name.c_str()));
        }
        (void) t.values(); // throws on undefined tensors before any bytes hit disk
    }
    for (const auto & [name, v] : c.ints) {
        (void) v;
        if (!seen.insert("i:" + name).second) {
            throw ParamError(strfmt("checkpoint: duplicate int array '%s'", name.c_str()));
        }
    }

    // payload plus directory; offsets are relative to the payload start.
    // x86 is little-endian so value bytes can be copied straight through.
    std::string payload;
    json dir_t = json::array();
    for (const auto & [name, t] : c.tensors) {
        json e;
        e["name"]   = name;
        e["shape"]  = t.shape();
        e["offset"] = (uint64_t) payload.size();
        auto vals   = t.values();
        size_t nb   = vals.size() * sizeof(float);
        size_t pos  = payload.size();
        payload.resize(pos + nb);
        std::memcpy(payload.data() + pos, vals.data(), nb);
        dir_t.push_back(std::move(e));
    }
    json dir_i = json::array();
    for (const auto & [name, v] : c.ints) {
        json e;
        e["name"]   = name;
        e["count"]  = (uint64_t) v.size();
        e["offset"] = (uint64_t) payload.size();
        size_t nb   = v.size() * sizeof(int32_t);
        size_t pos  = payload.size();
        payload.resize(pos + nb);
        std::memcpy(payload.data() + pos, v.data(), nb);
        dir_i.push_back(std::move(e));
    }

    json header;
    header["kind"]          = c.kind;
    header["config"]        = config_to_json(c.config);
    header["tensors"]       = std::move(dir_t);
    header["ints"]          = std::move(dir_i);
    header["meta"]          = c.meta;
    header["payload_bytes"] = (uint64_t) payload.size();
    const std::string htext = header.dump(); // sorted keys, stable float repr

    std::string out;
    out.reserve(16 + htext.size() + payload.size());
    out += "HASS";
    append_le32(out, k_checkpoint_version);
    append_le64(out, (uint64_t) htext.size());
    out += htext;
    out += payload;

    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) {
        throw DataError(strfmt("checkpoint: cannot open '%s' for writing", path.c_str()));
    }
    f.write(out.data(), (std::streamsize) out.size());
    f.flush();
    if (!f) {
        throw DataError(strfmt("checkpoint: short write to '%s'", path.c_str()));
    }
}

Checkpoint load_checkpoint(const std::string & path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) {
        throw DataError(strfmt("checkpoint: cannot open '%s'", path.c_str()));
    }
    std::string raw((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    if (raw.size() < 16) {
        throw FormatError(strfmt("checkpoint: '%s' is truncated (no header)", path.c_str()));
    }
    if (raw.compare(0, 4, "HASS") != 0) {
        throw FormatError(strfmt("checkpoint: '%s' has bad magic", path.c_str()));
    }
    const uint32_t version = (uint32_t) read_le(raw, 4, 4);
    if (version != k_checkpoint_version) {
        throw FormatError(strfmt("checkpoint: '%s' has unsupported version %u", path.c_str(), version));
    }
    const uint64_t hlen = read_le(raw, 8, 8);
    if (16 + hlen > raw.size()) {
        throw FormatError(strfmt("checkpoint: '%s' is truncated inside the header", path.c_str()));
    }

    Checkpoint c;
    const size_t pstart = 16 + (size_t) hlen;
    const size_t pbytes = raw.size() - pstart;
    try {
        const json header = json::parse(raw.substr(16, (size_t) hlen));
        c.kind   = header.at("kind").get<std::string>();
        c.config = config_from_json(header.at("config"));
        for (auto it = header.at("meta").begin(); it != header.at("meta").end(); ++it) {
            c.meta[it.key()] = it.value().get<std::string>();
        }
        if (header.at("payload_bytes").get<uint64_t>() != pbytes) {
            throw FormatError(strfmt("checkpoint: '%s' is truncated (payload %zu bytes, header says %llu)",
                                     path.c_str(), pbytes,
                                     (unsigned long long) header.at("payload_bytes").get<uint64_t>()));
        }
        for (const auto & e : header.at("tensors")) {
            const std::string name = e.at("name").get<std::string>();
            const Shape shape      = e.at("shape").get<Shape>();
            const uint64_t offset  = e.at("offset").get<uint64_t>();
            for (int d : shape) {
                if (d <= 0) {
                    throw FormatError(strfmt("checkpoint: tensor '%s' has bad shape", name.c_str()));
                }
            }
            const uint64_t n = (uint64_t) shape_numel(shape);
            if (offset + n * sizeof(float) > pbytes) {
                throw FormatError(strfmt("checkpoint: tensor '%s' runs past the payload", name.c_str()));
            }
            std::vector<float> vals(n);
            std::memcpy(vals.data(), raw.data() + pstart + offset, n * sizeof(float));
            c.tensors.emplace_back(name, Tensor::from_values(shape, std::move(vals)));
        }
        for (const auto & e : header.at("ints")) {
            const std::string name = e.at("name").get<std::string>();
            const uint64_t count   = e.at("count").get<uint64_t>();
            const uint64_t offset  = e.at("offset").get<uint64_t>();
            if (offset + count * sizeof(int32_t) > pbytes) {
                throw FormatError(strfmt("checkpoint: int array '%s' runs past the payload", name.c_str()));
            }
            std::vector<int32_t> vals(count);
            std::memcpy(vals.data(), raw.data() + pstart + offset, count * sizeof(int32_t));
            c.ints.emplace_back(name, std::move(vals));
        }
    } catch (const json::exception & e) {
        throw FormatError(strfmt("checkpoint: '%s' has a malformed header: %s", path.c_str(), e.what()));
    }
    return c;
}

// copy every named parameter out of / into a model. load is strict: the file
// must carry exactly the parameters the freshly built model expects.
template <typename Model>
static void params_to_checkpoint(Model & m, Checkpoint & c) {
    for (auto & [name, t] : m.named_params()) {
        c.tensors.emplace_back(name, t->detach());
    }
}

template <typename Model>
static void params_from_checkpoint(const Checkpoint & c, Model & m, size_t expect) {
    if (c.tensors.size() != expect) {
        throw FormatError(strfmt("checkpoint: expected %zu tensors, found %zu", expect, c.tensors.size()));
    }
    for (auto & [name, t] : m.named_params()) {
        const Tensor * src = c.find_tensor(name);
        if (!src) {
            throw FormatError(strfmt("checkpoint: missing tensor '%s'", name.c_str()));
        }
        if (src->shape() != t->shape()) {
            throw FormatError(strfmt("checkpoint: tensor '%s' has shape %s, model wants %s", name.c_str(),
                                     shape_str(src->shape()).c_str(), shape_str(t->shape()).c_str()));
        }
        auto dst = t->values_mut();
        auto vs  = src->values();
        std::copy(vs.begin(), vs.end(), dst.begin());
    }
}

Checkpoint checkpoint_from_target(TargetModel & m) {
    Checkpoint c;
    c.kind   = "target";
    c.config = m.cfg;
    params_to_checkpoint(m, c);
    return c;
}

TargetModel target_from_checkpoint(const Checkpoint & c) {
    if (c.kind != "target") {
        throw FormatError(strfmt("checkpoint: kind '%s' is not a target model", c.kind.c_str()));
    }
    try {
        c.config.validate();
    } catch (const Error & e) {
        throw FormatError(strfmt("checkpoint: bad target config: %s", e.what()));
    }
    TargetModel m;
    Rng rng(0);
    m.init(c.config, rng);
    params_from_checkpoint(c, m, m.named_params().size());
    return m;
}

Checkpoint checkpoint_from_draft(DraftHead & d) {
    Checkpoint c;
    c.kind   = "draft";
    c.config = d.cfg;
    params_to_checkpoint(d, c);
    return c;
}

DraftHead draft_from_checkpoint(const Checkpoint & c, const TargetModel & target) {
    if (c.kind != "draft") {
        throw FormatError(strfmt("checkpoint: kind '%s' is not a draft head", c.kind.c_str()));
    }
    if (c.config.vocab_size != target.cfg.vocab_size || c.config.d_model != target.cfg.d_model ||
        c.config.n_heads != target.cfg.n_heads || c.config.d_ff != target.cfg.d_ff) {
        throw FormatError(strfmt("checkpoint: draft head (vocab %d, d_model %d) does not match "
                                 "target (vocab %d, d_model %d)",
                                 c.config.vocab_size, c.config.d_model, target.cfg.vocab_size,
                                 target.cfg.d_model));
    }
    DraftHead d;
    Rng rng(0);
    d.init(target, rng);
    params_from_checkpoint(c, d, d.named_params().size());
    return d;
}

} // namespace hass
