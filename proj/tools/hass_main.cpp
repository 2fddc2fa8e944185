// Copyright (c) 2026 the hass authors
// SPDX-License-Identifier: Apache-2.0
//
// cli wrapper over the command layer. a json config (--config) is applied
// first, explicit flags override it, and the resolved result is written to
// <out-dir>/config.json by the command itself. exit codes: 0 ok, 2 bad
// config/parameters, 3 data/format problems, 4 numerical abort, 1 otherwise.

#include "hass/commands.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <functional>
#include <string>

using namespace hass;

int main(int argc, char ** argv) {
    const std::string sub = argc > 1 ? argv[1] : "";
    std::string config_path;
    for (int i = 2; i < argc; ++i) {
        const std::string a = argv[i];
        if (a == "--config" && i + 1 < argc) {
            config_path = argv[i + 1];
        } else if (a.rfind("--config=", 0) == 0) {
            config_path = a.substr(9);
        }
    }

    RunConfig cfg;
    if (!config_path.empty()) {
        try {
            cfg = run_config_from_file(config_path, sub);
        } catch (const std::exception & e) {
            std::fprintf(stderr, "error: %s\n", e.what());
            return exit_code_for(e);
        }
    }

    CLI::App app{"speculative decoding workbench: data prep, training, benchmarks, generation"};
    app.require_subcommand(1);
    std::string data_mode = to_string(cfg.train.data_mode);
    std::function<int(const RunConfig &)> action;

    auto add_common = [&](CLI::App * c) {
        c->add_option("--config", config_path, "json config file; explicit flags override it");
        c->add_option("--out-dir", cfg.out_dir, "directory for config.json, checkpoints, metrics");
        c->add_option("--seed", cfg.seed, "root seed; every rng stream derives from it");
    };
    auto add_draft_train = [&](CLI::App * c) {
        c->add_option("--align-steps", cfg.train.align_steps, "alignment forwards per window (n)");
        c->add_option("--topk-k", cfg.train.top_k, "top-k distillation K");
        c->add_option("--topk-weight", cfg.train.top_k_weight, "top-k loss coefficient w");
        c->add_option("--cls-weight", cfg.train.cls_weight, "soft cross-entropy coefficient");
        c->add_option("--reg-weight", cfg.train.reg_weight, "feature regression coefficient");
        c->add_option("--smooth-l1-beta", cfg.train.smooth_l1_beta, "smooth-l1 transition point");
        c->add_option("--lr", cfg.train.lr, "adamw learning rate");
        c->add_option("--batch-size", cfg.train.batch_size, "windows per optimizer step");
        c->add_option("--epochs", cfg.train.epochs, "passes over the window set");
        c->add_option("--data-mode", data_mode, "fixed | self-generated");
        c->add_option("--detach-between-steps", cfg.train.detach_between_steps,
                      "isolate each alignment forward's graph (true/false)");
        c->add_option("--train-embedding", cfg.train.train_embedding,
                      "unfreeze the shared embedding (true/false)");
        c->add_option("--weight-decay", cfg.train.weight_decay, "adamw decoupled weight decay");
        c->add_option("--grad-clip", cfg.train.max_grad_norm, "global grad-norm clip; 0 = off");
        c->add_option("--window", cfg.window, "tokens per training window");
        c->add_option("--stride", cfg.stride, "window start distance");
        c->add_option("--support", cfg.support, "stored distribution entries per row");
        c->add_option("--max-windows", cfg.max_windows, "cap on training windows; 0 = all");
        c->add_option("--self-prompt-len", cfg.self_prompt_len,
                      "self-generated mode: corpus tokens kept per window");
        c->add_option("--val-fraction", cfg.val_fraction, "held-out tail fraction");
    };
    auto add_decode = [&](CLI::App * c) {
        c->add_option("--draft-len", cfg.draft_len, "chain: tokens drafted per cycle");
        c->add_option("--tree-budget", cfg.tree_budget, "tree: nodes kept per cycle (incl. root)");
        c->add_option("--tree-depth", cfg.tree_depth, "tree: maximum draft depth");
        c->add_option("--tree-branch", cfg.tree_branch, "tree: children expanded per node");
        c->add_option("--top-p", cfg.top_p, "nucleus filter mass");
        c->add_option("--top-k-filter", cfg.top_k_filter, "sampling top-k filter; 0 = off");
    };

    CLI::App * pr = app.add_subcommand("prepare", "tokenize a corpus into a reusable dataset");
    add_common(pr);
    pr->add_option("--corpus", cfg.corpus, "utf-8 text file, at least 100 KiB");
    pr->callback([&] { action = cmd_prepare; });

    CLI::App * tt = app.add_subcommand("train-target", "pretrain the target model");
    add_common(tt);
    tt->add_option("--dataset", cfg.dataset, "prepared dataset (prepare output)");
    tt->add_option("--d-model", cfg.d_model, "model width");
    tt->add_option("--n-layers", cfg.n_layers, "decoder blocks");
    tt->add_option("--n-heads", cfg.n_heads, "attention heads");
    tt->add_option("--d-ff", cfg.d_ff, "feed-forward width");
    tt->add_option("--max-seq-len", cfg.max_seq_len, "kv-cache capacity");
    tt->add_option("--target-epochs", cfg.target_epochs, "training epochs; 0 = save the init");
    tt->add_option("--target-lr", cfg.target_lr, "adamw learning rate");
    tt->add_option("--target-batch", cfg.target_batch, "windows per optimizer step");
    tt->add_option("--target-window", cfg.target_window, "tokens per training window");
    tt->add_option("--val-fraction", cfg.val_fraction, "held-out tail fraction");
    tt->callback([&] { action = cmd_train_target; });

    CLI::App * td = app.add_subcommand("train-draft", "train a draft head against a target");
    add_common(td);
    td->add_option("--dataset", cfg.dataset, "prepared dataset (prepare output)");
    td->add_option("--target", cfg.target_path, "target checkpoint");
    add_draft_train(td);
    td->callback([&] { action = cmd_train_draft; });

    CLI::App * be = app.add_subcommand("bench", "measure methods over held-out prompts");
    add_common(be);
    be->add_option("--dataset", cfg.dataset, "prepared dataset (prompt source)");
    be->add_option("--target", cfg.target_path, "target checkpoint");
    be->add_option("--draft", cfg.draft_path, "draft head checkpoint");
    be->add_option("--vocab", cfg.vocab, "tokenizer json (needed with --prompts-file)");
    be->add_option("--methods", cfg.methods, "vanilla,chain,tree")->delimiter(',');
    be->add_option("--temperatures", cfg.temperatures, "sampling temperatures")->delimiter(',');
    be->add_option("--num-prompts", cfg.num_prompts, "held-out prompts to draw");
    be->add_option("--prompt-len", cfg.prompt_len, "tokens per held-out prompt");
    be->add_option("--gen-len", cfg.gen_len, "tokens generated per prompt");
    be->add_option("--prompts-file", cfg.prompts_file, "text prompts, one per line");
    be->add_option("--sweep-align-steps", cfg.sweep_align_steps,
                   "retrain per alignment step count and bench each")
        ->delimiter(',');
    be->add_option("--sweep-k", cfg.sweep_k, "grid sweep over top-k values")->delimiter(',');
    be->add_option("--sweep-w", cfg.sweep_w, "grid sweep over top-k weights")->delimiter(',');
    add_decode(be);
    add_draft_train(be);
    be->callback([&] { action = cmd_bench; });

    CLI::App * ge = app.add_subcommand("generate", "decode a continuation of a prompt");
    add_common(ge);
    ge->add_option("--target", cfg.target_path, "target checkpoint");
    ge->add_option("--draft", cfg.draft_path, "draft head checkpoint");
    ge->add_option("--vocab", cfg.vocab, "tokenizer json");
    ge->add_option("--prompt", cfg.prompt, "prompt text");
    ge->add_option("--method", cfg.method, "vanilla | chain | tree");
    ge->add_option("--max-new-tokens", cfg.max_new_tokens, "generation budget");
    ge->add_option("--temperature", cfg.temperature, "sampling temperature; 0 = greedy");
    add_decode(ge);
    ge->add_flag("--trace", cfg.trace, "per-cycle accept/reject lines on stderr");
    ge->callback([&] { action = cmd_generate; });

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp & e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp & e) {
        return app.exit(e);
    } catch (const CLI::ParseError & e) {
        app.exit(e);
        return 2;
    }

    try {
        cfg.train.data_mode = data_mode_from_string(data_mode);
        return action(cfg);
    } catch (const std::exception & e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return exit_code_for(e);
    }
}
