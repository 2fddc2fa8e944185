// Copyright (c) 2026 the hass authors
// SPDX-License-Identifier: Apache-2.0
//
// single-file checkpoint container used for model weights and prepared
// datasets. layout:
//
//   bytes 0..3    magic "HASS"
//   bytes 4..7    format version, u32 little-endian
//   bytes 8..15   header length H, u64 little-endian
//   bytes 16..    header, H bytes of JSON (kind, config echo, tensor/int
//                 directory with payload offsets, free-form string meta)
//   rest          payload: f32 tensors and i32 arrays, little-endian, in
//                 directory order
//
// saving the result of a load produces byte-identical output; loaders reject
// bad magic, unknown versions and truncated files without constructing a
// partial model.

#pragma once

#include "hass/model.hpp"

#include <cstdint>
#include <map>
#include <string>
#include <utility>
#include <vector>

namespace hass {

inline constexpr uint32_t k_checkpoint_version = 1;

struct Checkpoint {
    std::string kind; // "target", "draft" or "dataset"
    ModelConfig config;
    std::vector<std::pair<std::string, Tensor>> tensors;
    std::vector<std::pair<std::string, std::vector<int32_t>>> ints;
    std::map<std::string, std::string> meta;

    const Tensor * find_tensor(const std::string & name) const;
    const std::vector<int32_t> * find_ints(const std::string & name) const;
};

void save_checkpoint(const Checkpoint & c, const std::string & path);
Checkpoint load_checkpoint(const std::string & path);

Checkpoint checkpoint_from_target(TargetModel & m);
TargetModel target_from_checkpoint(const Checkpoint & c);

// the draft head aliases the target's embedding, final norm and lm matrices,
// so only the fusion and block weights are stored; loading therefore needs
// the target the head will run against, and a vocab or width mismatch
// between the two is a FormatError.
Checkpoint checkpoint_from_draft(DraftHead & d);
DraftHead draft_from_checkpoint(const Checkpoint & c, const TargetModel & target);

} // namespace hass
