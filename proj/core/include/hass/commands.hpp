// Copyright (c) 2026 the hass authors
// SPDX-License-Identifier: Apache-2.0
//
// the command layer behind the cli binary. each cmd_* is a whole run:
// validate config, do the work, write every artifact under cfg.out_dir
// (config.json with the fully-resolved settings, checkpoints, metrics.jsonl,
// report.json). kept out of tools/ so tests can drive runs in-process and
// assert on the same files external tooling would read.
//
// configs are flat json objects whose kebab-case keys mirror the cli flags;
// unknown keys are rejected per subcommand. a run is reproducible from its
// resolved config alone: `hass <sub> --config <out>/config.json` redoes it.

#pragma once

#include "hass/engine.hpp"
#include "hass/training.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace hass {

struct RunConfig {
    // paths
    std::string out_dir;
    std::string corpus;       // prepare: utf-8 text input
    std::string dataset;      // prepared token cache (prepare output)
    std::string vocab;        // tokenizer json
    std::string target_path;  // target model checkpoint, key "target"
    std::string draft_path;   // draft head checkpoint, key "draft"
    std::string prompts_file; // bench: optional text prompts, one per line

    uint64_t seed = 0;

    // target architecture; vocab_size always comes from the prepared dataset
    int d_model     = 64;
    int n_layers    = 2;
    int n_heads     = 4;
    int d_ff        = 128;
    int max_seq_len = 512;

    // target pretraining
    int target_epochs   = 2;
    double target_lr    = 1e-3;
    int target_batch    = 8;
    int target_window   = 96;
    double val_fraction = 0.1; // held-out tail of the token stream

    // draft training (mirrors TrainConfig) plus dataset windowing
    TrainConfig train;
    int window          = 96;
    int stride          = 48;
    int support         = 64; // stored distribution entries per row
    int max_windows     = 0;  // 0 = every window
    int self_prompt_len = 32; // self-generated mode: corpus tokens kept per window

    // bench
    std::vector<std::string> methods = {"vanilla", "chain", "tree"};
    std::vector<double> temperatures = {0.0, 1.0};
    int num_prompts = 20;
    int prompt_len  = 32;
    int gen_len     = 64;
    std::vector<int> sweep_align_steps; // non-empty: retrain per step count, bench each
    std::vector<int> sweep_k;           // with sweep_w: retrain per (K, weight) cell
    std::vector<double> sweep_w;

    // decoding
    std::string prompt;
    std::string method = "chain";
    int max_new_tokens = 64;
    int draft_len      = 6;
    int tree_budget    = 60;
    int tree_depth     = 6;
    int tree_branch    = 10;
    double temperature = 1.0;
    double top_p       = 1.0;
    int top_k_filter   = 0;
    bool trace         = false;
};

// kebab-case keys accepted by a subcommand; ParamError for unknown subcommands
const std::vector<std::string> & config_keys(const std::string & subcommand);

// merge a json object into cfg; unknown or out-of-scope keys are ParamErrors
void apply_config_json(RunConfig & cfg, const std::string & json_text, const std::string & subcommand);
RunConfig run_config_from_file(const std::string & path, const std::string & subcommand);

// resolved config (the subcommand's keys only), stable key order, 2-space indent
std::string run_config_to_json(const RunConfig & cfg, const std::string & subcommand);

int cmd_prepare(const RunConfig & cfg);
int cmd_train_target(const RunConfig & cfg);
int cmd_train_draft(const RunConfig & cfg);
int cmd_bench(const RunConfig & cfg);
int cmd_generate(const RunConfig & cfg);

// exit-code policy shared by the cli and tests: 0 ok, 2 config/parameter,
// 3 data/format, 4 numerical abort, 1 anything else
int exit_code_for(const std::exception & e);

} // namespace hass
