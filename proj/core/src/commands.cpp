// Copyright (c) 2026 the hass authors
// SPDX-License-Identifier: Apache-2.0

#include "hass/commands.hpp"

#include "hass/checkpoint.hpp"
#include "hass/optim.hpp"
#include "hass/sha256.hpp"
#include "hass/tokenizer.hpp"

#include <json.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <numeric>
#include <set>

namespace hass {

using json = nlohmann::json;
namespace fs = std::filesystem;

// ---- config registry ----
// one row per kebab-case key; getters/setters go through member pointers so
// the json side and the struct can never drift apart.

namespace {

struct KeyDef {
    const char * name;
    json (*get)(const RunConfig &);
    void (*set)(RunConfig &, const json &);
};

template <auto M> json get_m(const RunConfig & c) {
    return json(c.*M);
}
template <auto M> void set_m(RunConfig & c, const json & v) {
    c.*M = v.get<std::decay_t<decltype(c.*M)>>();
}
template <auto M> json get_t(const RunConfig & c) {
    return json(c.train.*M);
}
template <auto M> void set_t(RunConfig & c, const json & v) {
    c.train.*M = v.get<std::decay_t<decltype(c.train.*M)>>();
}
template <auto M> KeyDef key_m(const char * name) {
    return {name, &get_m<M>, &set_m<M>};
}
template <auto M> KeyDef key_t(const char * name) {
    return {name, &get_t<M>, &set_t<M>};
}

const std::vector<KeyDef> & registry() {
    static const std::vector<KeyDef> keys = {
        key_m<&RunConfig::out_dir>("out-dir"),
        key_m<&RunConfig::corpus>("corpus"),
        key_m<&RunConfig::dataset>("dataset"),
        key_m<&RunConfig::vocab>("vocab"),
        key_m<&RunConfig::target_path>("target"),
        key_m<&RunConfig::draft_path>("draft"),
        key_m<&RunConfig::prompts_file>("prompts-file"),
        key_m<&RunConfig::seed>("seed"),

        key_m<&RunConfig::d_model>("d-model"),
        key_m<&RunConfig::n_layers>("n-layers"),
        key_m<&RunConfig::n_heads>("n-heads"),
        key_m<&RunConfig::d_ff>("d-ff"),
        key_m<&RunConfig::max_seq_len>("max-seq-len"),

        key_m<&RunConfig::target_epochs>("target-epochs"),
        key_m<&RunConfig::target_lr>("target-lr"),
        key_m<&RunConfig::target_batch>("target-batch"),
        key_m<&RunConfig::target_window>("target-window"),
        key_m<&RunConfig::val_fraction>("val-fraction"),

        key_t<&TrainConfig::align_steps>("align-steps"),
        key_t<&TrainConfig::top_k>("topk-k"),
        key_t<&TrainConfig::top_k_weight>("topk-weight"),
        key_t<&TrainConfig::cls_weight>("cls-weight"),
        key_t<&TrainConfig::reg_weight>("reg-weight"),
        key_t<&TrainConfig::smooth_l1_beta>("smooth-l1-beta"),
        key_t<&TrainConfig::lr>("lr"),
        key_t<&TrainConfig::batch_size>("batch-size"),
        key_t<&TrainConfig::epochs>("epochs"),
        key_t<&TrainConfig::detach_between_steps>("detach-between-steps"),
        key_t<&TrainConfig::train_embedding>("train-embedding"),
        key_t<&TrainConfig::weight_decay>("weight-decay"),
        key_t<&TrainConfig::max_grad_norm>("grad-clip"),
        {"data-mode",
         [](const RunConfig & c) { return json(std::string(to_string(c.train.data_mode))); },
         [](RunConfig & c, const json & v) { c.train.data_mode = data_mode_from_string(v.get<std::string>()); }},

        key_m<&RunConfig::window>("window"),
        key_m<&RunConfig::stride>("stride"),
        key_m<&RunConfig::support>("support"),
        key_m<&RunConfig::max_windows>("max-windows"),
        key_m<&RunConfig::self_prompt_len>("self-prompt-len"),

        key_m<&RunConfig::methods>("methods"),
        key_m<&RunConfig::temperatures>("temperatures"),
        key_m<&RunConfig::num_prompts>("num-prompts"),
        key_m<&RunConfig::prompt_len>("prompt-len"),
        key_m<&RunConfig::gen_len>("gen-len"),
        key_m<&RunConfig::sweep_align_steps>("sweep-align-steps"),
        key_m<&RunConfig::sweep_k>("sweep-k"),
        key_m<&RunConfig::sweep_w>("sweep-w"),

        key_m<&RunConfig::prompt>("prompt"),
        key_m<&RunConfig::method>("method"),
        key_m<&RunConfig::max_new_tokens>("max-new-tokens"),
        key_m<&RunConfig::draft_len>("draft-len"),
        key_m<&RunConfig::tree_budget>("tree-budget"),
        key_m<&RunConfig::tree_depth>("tree-depth"),
        key_m<&RunConfig::tree_branch>("tree-branch"),
        key_m<&RunConfig::temperature>("temperature"),
        key_m<&RunConfig::top_p>("top-p"),
        key_m<&RunConfig::top_k_filter>("top-k-filter"),
        key_m<&RunConfig::trace>("trace"),
    };
    return keys;
}

const KeyDef & find_key(const std::string & name) {
    for (const auto & k : registry()) {
        if (name == k.name) {
            return k;
        }
    }
    throw ParamError(strfmt("config: key '%s' is not in the registry", name.c_str()));
}

const std::vector<std::string> draft_train_keys = {
    "align-steps", "topk-k", "topk-weight", "cls-weight", "reg-weight", "smooth-l1-beta",
    "lr", "batch-size", "epochs", "data-mode", "detach-between-steps", "train-embedding",
    "weight-decay", "grad-clip", "window", "stride", "support", "max-windows", "self-prompt-len",
};

std::vector<std::string> cat(std::initializer_list<std::vector<std::string>> parts) {
    std::vector<std::string> out;
    for (const auto & p : parts) {
        out.insert(out.end(), p.begin(), p.end());
    }
    return out;
}

} // namespace

const std::vector<std::string> & config_keys(const std::string & subcommand) {
    static const std::map<std::string, std::vector<std::string>> sets = {
        {"prepare", {"corpus", "out-dir"}},
        {"train-target",
         {"dataset", "out-dir", "seed", "d-model", "n-layers", "n-heads", "d-ff", "max-seq-len",
          "target-epochs", "target-lr", "target-batch", "target-window", "val-fraction"}},
        {"train-draft",
         cat({{"dataset", "target", "out-dir", "seed", "val-fraction"}, draft_train_keys})},
        {"bench",
         cat({{"dataset", "target", "draft", "vocab", "out-dir", "seed", "val-fraction", "methods",
               "temperatures", "num-prompts", "prompt-len", "gen-len", "prompts-file", "draft-len",
               "tree-budget", "tree-depth", "tree-branch", "top-p", "top-k-filter",
               "sweep-align-steps", "sweep-k", "sweep-w"},
              draft_train_keys})},
        {"generate",
         {"target", "draft", "vocab", "out-dir", "seed", "prompt", "method", "max-new-tokens",
          "draft-len", "tree-budget", "tree-depth", "tree-branch", "temperature", "top-p",
          "top-k-filter", "trace"}},
    };
    const auto it = sets.find(subcommand);
    if (it == sets.end()) {
        throw ParamError(strfmt("config: unknown subcommand '%s'", subcommand.c_str()));
    }
    return it->second;
}

void apply_config_json(RunConfig & cfg, const std::string & json_text, const std::string & subcommand) {
    json j;
    try {
        j = json::parse(json_text);
    } catch (const json::exception & e) {
        throw ParamError(strfmt("config: not valid json: %s", e.what()));
    }
    if (!j.is_object()) {
        throw ParamError("config: top level must be a json object");
    }
    const auto & keys = config_keys(subcommand);
    for (auto it = j.begin(); it != j.end(); ++it) {
        if (it.key() == "subcommand") {
            if (it.value() != subcommand) {
                throw ParamError(strfmt("config: file is for subcommand '%s', not '%s'",
                                        it.value().dump().c_str(), subcommand.c_str()));
            }
            continue;
        }
        if (std::find(keys.begin(), keys.end(), it.key()) == keys.end()) {
            throw ParamError(strfmt("config: unknown key '%s' for subcommand '%s'",
                                    it.key().c_str(), subcommand.c_str()));
        }
        try {
            find_key(it.key()).set(cfg, it.value());
        } catch (const json::exception & e) {
            throw ParamError(strfmt("config: bad value for '%s': %s", it.key().c_str(), e.what()));
        }
    }
}

RunConfig run_config_from_file(const std::string & path, const std::string & subcommand) {
    std::ifstream f(path, std::ios::binary);
    if (!f) {
        throw DataError(strfmt("config: cannot read '%s'", path.c_str()));
    }
    std::string text((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    RunConfig cfg;
    apply_config_json(cfg, text, subcommand);
    return cfg;
}

std::string run_config_to_json(const RunConfig & cfg, const std::string & subcommand) {
    json j;
    j["subcommand"] = subcommand;
    for (const auto & name : config_keys(subcommand)) {
        j[name] = find_key(name).get(cfg);
    }
    return j.dump(2) + "\n";
}

// ---- shared plumbing ----

namespace {

double wall_now_ms() {
    return (double) std::chrono::duration_cast<std::chrono::nanoseconds>(
               std::chrono::steady_clock::now().time_since_epoch())
               .count() *
           1e-6;
}

std::string slurp_file(const std::string & path, const char * what) {
    std::ifstream f(path, std::ios::binary);
    if (!f) {
        throw DataError(strfmt("%s: cannot read '%s'", what, path.c_str()));
    }
    return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

void write_file(const std::string & path, const std::string & content) {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) {
        throw DataError(strfmt("cannot write '%s'", path.c_str()));
    }
    f << content;
    f.flush();
    if (!f) {
        throw DataError(strfmt("short write to '%s'", path.c_str()));
    }
}

// every run starts by materializing out_dir and its resolved config
void begin_run(const RunConfig & cfg, const std::string & subcommand) {
    if (cfg.out_dir.empty()) {
        throw ParamError(strfmt("%s: --out-dir is required", subcommand.c_str()));
    }
    std::error_code ec;
    fs::create_directories(cfg.out_dir, ec);
    if (ec) {
        throw DataError(strfmt("cannot create out dir '%s': %s", cfg.out_dir.c_str(),
                               ec.message().c_str()));
    }
    write_file((fs::path(cfg.out_dir) / "config.json").string(),
               run_config_to_json(cfg, subcommand));
}

struct MetricsLog {
    std::ofstream f;

    explicit MetricsLog(const RunConfig & cfg) {
        const std::string path = (fs::path(cfg.out_dir) / "metrics.jsonl").string();
        f.open(path, std::ios::binary | std::ios::trunc);
        if (!f) {
            throw DataError(strfmt("cannot write '%s'", path.c_str()));
        }
    }

    void line(const json & j) {
        f << j.dump() << "\n";
        f.flush();
    }
};

struct LoadedDataset {
    std::vector<int> tokens;
    int vocab_size = 0;
    std::map<std::string, std::string> meta;
};

LoadedDataset load_dataset(const std::string & path, const char * who) {
    if (path.empty()) {
        throw ParamError(strfmt("%s: --dataset is required", who));
    }
    Checkpoint c = load_checkpoint(path);
    if (c.kind != "dataset") {
        throw FormatError(strfmt("%s: '%s' is a '%s' checkpoint, not a prepared dataset", who,
                                 path.c_str(), c.kind.c_str()));
    }
    const auto * t = c.find_ints("tokens");
    if (!t) {
        throw FormatError(strfmt("%s: '%s' has no token stream", who, path.c_str()));
    }
    LoadedDataset out;
    out.vocab_size = c.config.vocab_size;
    out.meta       = c.meta;
    out.tokens.reserve(t->size());
    for (int32_t v : *t) {
        if (v < 0 || v >= out.vocab_size) {
            throw FormatError(strfmt("%s: token %d outside vocab of %d", who, v, out.vocab_size));
        }
        out.tokens.push_back((int) v);
    }
    if (out.tokens.size() < 2) {
        throw FormatError(strfmt("%s: token stream too short", who));
    }
    return out;
}

TargetModel load_target(const std::string & path, const char * who) {
    if (path.empty()) {
        throw ParamError(strfmt("%s: --target is required", who));
    }
    return target_from_checkpoint(load_checkpoint(path));
}

// first tokens stay for training; the tail is held out for validation,
// bench prompts and alpha measurements
size_t train_split(size_t n, double val_fraction) {
    if (val_fraction < 0.0 || val_fraction >= 1.0) {
        throw ParamError("val-fraction must be in [0, 1)");
    }
    const size_t n_val = (size_t) ((double) n * val_fraction);
    return n - n_val;
}

void shuffle_ints(std::vector<size_t> & v, Rng & rng) {
    for (size_t i = v.size(); i > 1; --i) {
        std::swap(v[i - 1], v[rng.below((uint32_t) i)]);
    }
}

} // namespace

int exit_code_for(const std::exception & e) {
    if (dynamic_cast<const ParamError *>(&e) || dynamic_cast<const ShapeError *>(&e) ||
        dynamic_cast<const CapacityError *>(&e)) {
        return 2;
    }
    if (dynamic_cast<const DataError *>(&e) || dynamic_cast<const FormatError *>(&e)) {
        return 3;
    }
    if (dynamic_cast<const NumericError *>(&e)) {
        return 4;
    }
    return 1;
}

// ---- prepare ----

int cmd_prepare(const RunConfig & cfg) {
    if (cfg.corpus.empty()) {
        throw ParamError("prepare: --corpus is required");
    }
    const std::string text = slurp_file(cfg.corpus, "prepare");
    if (text.size() < 100 * 1024) {
        throw DataError(strfmt("prepare: corpus '%s' is %zu bytes; need at least 100 KiB",
                               cfg.corpus.c_str(), text.size()));
    }
    const Tokenizer tok        = Tokenizer::build(text);
    const std::vector<int> ids = tok.encode(text);

    begin_run(cfg, "prepare");
    const std::string vocab_json = tok.to_json();
    write_file((fs::path(cfg.out_dir) / "vocab.json").string(), vocab_json);

    Checkpoint ds;
    ds.kind               = "dataset";
    ds.config.vocab_size  = tok.vocab_size();
    ds.meta["corpus_sha256"] = sha256_hex(text);
    ds.meta["corpus_bytes"]  = strfmt("%zu", text.size());
    ds.meta["vocab_sha256"]  = sha256_hex(vocab_json);
    std::vector<int32_t> toks32(ids.begin(), ids.end());
    ds.ints.emplace_back("tokens", std::move(toks32));
    save_checkpoint(ds, (fs::path(cfg.out_dir) / "dataset.bin").string());

    std::printf("prepared %zu tokens, vocab %d (%zu chars + unk + eot)\n", ids.size(),
                tok.vocab_size(), tok.symbols.size());
    std::printf("corpus sha256 %s\n", ds.meta["corpus_sha256"].c_str());
    return 0;
}

// ---- train-target ----

namespace {

// mean next-token cross-entropy of one window; toks has W+1 entries
Tensor window_ce(const TargetModel & model, std::span<const int> toks) {
    const int w    = (int) toks.size() - 1;
    KvCache cache = model.make_cache();
    auto out      = model.forward(toks.first(w), cache);
    Tensor probs  = softmax(out.logits);
    std::vector<int> idx(w);
    std::vector<float> ones(w, 1.0f);
    for (int r = 0; r < w; ++r) {
        idx[r] = toks[r + 1];
    }
    Tensor rows = soft_ce_rows(probs, std::span<const int>(idx), std::span<const float>(ones), 1,
                               1e-9f);
    std::vector<int> all(w);
    std::iota(all.begin(), all.end(), 0);
    return mean_select(rows, all);
}

double eval_ppl(const TargetModel & model, const std::vector<int> & tokens, size_t begin,
                size_t end, int window) {
    NoGradGuard ng;
    double total = 0;
    int count    = 0;
    for (size_t s = begin; s + window + 1 <= end; s += window) {
        total += (double) window_ce(model, std::span<const int>(tokens).subspan(s, window + 1)).item();
        count += 1;
    }
    if (count == 0) { // tail shorter than one window: clamp a single window to the end
        const size_t w = std::min((size_t) window + 1, end - begin);
        if (w < 2) {
            throw DataError("train-target: validation split has fewer than 2 tokens");
        }
        total = (double) window_ce(model, std::span<const int>(tokens).subspan(end - w, w)).item();
        count = 1;
    }
    return std::exp(total / count);
}

} // namespace

int cmd_train_target(const RunConfig & cfg) {
    const LoadedDataset ds = load_dataset(cfg.dataset, "train-target");

    ModelConfig mc;
    mc.vocab_size  = ds.vocab_size;
    mc.d_model     = cfg.d_model;
    mc.n_layers    = cfg.n_layers;
    mc.n_heads     = cfg.n_heads;
    mc.d_ff        = cfg.d_ff;
    mc.max_seq_len = cfg.max_seq_len;
    mc.validate();
    const int w = cfg.target_window;
    if (w < 2 || w >= mc.max_seq_len) {
        throw ParamError(strfmt("train-target: target-window %d must be in [2, max-seq-len)", w));
    }
    if (cfg.target_epochs < 0 || cfg.target_batch < 1 || !(cfg.target_lr > 0)) {
        throw ParamError("train-target: epochs must be >= 0, batch >= 1, lr > 0");
    }

    begin_run(cfg, "train-target");
    MetricsLog log(cfg);

    TargetModel model;
    Rng init_rng(mix_seed(cfg.seed, 0x7a12));
    model.init(mc, init_rng);
    model.set_trainable(true);

    const size_t train_n = train_split(ds.tokens.size(), cfg.val_fraction);
    std::vector<size_t> starts;
    for (size_t s = 0; s + w + 1 <= train_n; s += w) {
        starts.push_back(s);
    }
    if (starts.empty()) {
        throw DataError("train-target: training split smaller than one window");
    }

    std::vector<Tensor *> params;
    for (auto & [name, t] : model.named_params()) {
        params.push_back(t);
    }
    AdamWConfig oc;
    oc.lr = cfg.target_lr;
    AdamW opt(params, oc);
    Rng order_rng(mix_seed(cfg.seed, 0x0bde));

    double val_ppl = 0.0;
    for (int epoch = 1; epoch <= cfg.target_epochs; ++epoch) {
        const double t0 = wall_now_ms();
        shuffle_ints(starts, order_rng);
        double ep_loss = 0;
        int ep_batches = 0;
        for (size_t b = 0; b < starts.size(); b += cfg.target_batch) {
            const size_t bsz = std::min((size_t) cfg.target_batch, starts.size() - b);
            opt.zero_grad();
            Tensor total;
            for (size_t i = 0; i < bsz; ++i) {
                Tensor l = window_ce(model, std::span<const int>(ds.tokens).subspan(starts[b + i], w + 1));
                total    = total.defined() ? add(total, l) : l;
            }
            Tensor loss      = scale(total, 1.0f / (float) bsz);
            const float lval = loss.item();
            if (!std::isfinite(lval)) {
                throw NumericError(strfmt("train-target: loss diverged (%.3g) at epoch %d batch %zu",
                                          (double) lval, epoch, b / cfg.target_batch));
            }
            backward(loss);
            opt.step();
            ep_loss += lval;
            ep_batches += 1;
        }
        val_ppl = eval_ppl(model, ds.tokens, train_n, ds.tokens.size(), w);
        const double train_loss = ep_loss / ep_batches;
        log.line({{"kind", "target_epoch"},
                  {"epoch", epoch},
                  {"train_loss", train_loss},
                  {"val_ppl", val_ppl},
                  {"windows", starts.size()},
                  {"wall_ms", wall_now_ms() - t0}});
        std::printf("epoch %d/%d: train loss %.4f, val ppl %.3f\n", epoch, cfg.target_epochs,
                    train_loss, val_ppl);
    }
    if (cfg.target_epochs == 0) {
        val_ppl = eval_ppl(model, ds.tokens, train_n, ds.tokens.size(), w);
        log.line({{"kind", "target_epoch"}, {"epoch", 0}, {"val_ppl", val_ppl}});
        std::printf("no training epochs; initialized model val ppl %.3f\n", val_ppl);
    }

    Checkpoint ck = checkpoint_from_target(model);
    ck.meta       = ds.meta; // carry corpus provenance forward
    ck.meta["val_ppl"] = strfmt("%.6f", val_ppl);
    ck.meta["epochs"]  = strfmt("%d", cfg.target_epochs);
    save_checkpoint(ck, (fs::path(cfg.out_dir) / "target.bin").string());
    std::printf("saved target (%lld params), final val ppl %.3f\n",
                (long long) model.param_count(), val_ppl);
    return 0;
}

// ---- train-draft ----

namespace {

std::vector<TrainingExample> build_training_windows(const RunConfig & cfg, const TrainConfig & tc,
                                                    const TargetModel & target,
                                                    const std::vector<int> & tokens) {
    if (cfg.window < 2 || cfg.stride < 1 || cfg.support < 1) {
        throw ParamError("draft dataset: window >= 2, stride >= 1, support >= 1");
    }
    size_t train_n = train_split(tokens.size(), cfg.val_fraction);
    if (cfg.max_windows > 0) {
        const size_t cap = (size_t) cfg.window + (size_t) cfg.stride * (cfg.max_windows - 1);
        train_n          = std::min(train_n, cap);
    }
    if (train_n < (size_t) cfg.window + 1) {
        throw DataError("draft dataset: training split smaller than one window");
    }
    DatasetOptions opts;
    opts.window     = cfg.window;
    opts.stride     = cfg.stride;
    opts.support    = std::min(cfg.support, target.cfg.vocab_size);
    opts.prompt_len = cfg.self_prompt_len;
    Rng rng(mix_seed(cfg.seed, 0xb11d));
    return build_dataset(tc.data_mode, std::span<const int>(tokens).first(train_n), target, rng,
                         opts);
}

DraftHead train_one_draft(const RunConfig & cfg, const TrainConfig & tc, const TargetModel & target,
                          const std::vector<TrainingExample> & examples, MetricsLog * log,
                          const char * kind, const json & tags) {
    DraftHead head;
    Rng head_rng(mix_seed(cfg.seed, 0xd4a3));
    head.init(target, head_rng);
    train_draft(tc, examples, head, [&](int epoch, const EpochStats & s) {
        if (!std::isfinite(s.total)) {
            throw NumericError(strfmt("draft training: loss diverged at epoch %d", epoch));
        }
        if (log) {
            json j = {{"kind", kind},          {"epoch", epoch + 1},   {"loss", s.total},
                      {"reg", s.reg},          {"cls", s.cls},     {"top_k", s.top_k},
                      {"per_forward", s.per_forward}, {"examples", s.examples}};
            for (auto it = tags.begin(); it != tags.end(); ++it) {
                j[it.key()] = it.value();
            }
            log->line(j);
        }
        std::printf("%s epoch %d: loss %.4f (reg %.4f, cls %.4f, top-k %.4f)\n", kind, epoch + 1,
                    s.total, s.reg, s.cls, s.top_k);
    });
    return head;
}

} // namespace

int cmd_train_draft(const RunConfig & cfg) {
    const LoadedDataset ds   = load_dataset(cfg.dataset, "train-draft");
    const TargetModel target = load_target(cfg.target_path, "train-draft");
    if (target.cfg.vocab_size != ds.vocab_size) {
        throw FormatError(strfmt("train-draft: target vocab %d != dataset vocab %d",
                                 target.cfg.vocab_size, ds.vocab_size));
    }
    TrainConfig tc = cfg.train;
    tc.seed        = cfg.seed;
    tc.validate(target.cfg.vocab_size);

    begin_run(cfg, "train-draft");
    MetricsLog log(cfg);

    const auto examples = build_training_windows(cfg, tc, target, ds.tokens);
    std::printf("built %zu training windows (window %d, stride %d, %s)\n", examples.size(),
                cfg.window, cfg.stride, to_string(tc.data_mode));
    DraftHead head = train_one_draft(cfg, tc, target, examples, &log, "draft_epoch", json::object());

    Checkpoint ck            = checkpoint_from_draft(head);
    ck.meta["align_steps"]   = strfmt("%d", tc.align_steps);
    ck.meta["top_k"]         = strfmt("%d", tc.top_k);
    ck.meta["top_k_weight"]  = strfmt("%g", tc.top_k_weight);
    ck.meta["data_mode"]     = to_string(tc.data_mode);
    ck.meta["epochs"]        = strfmt("%d", tc.epochs);
    save_checkpoint(ck, (fs::path(cfg.out_dir) / "draft.bin").string());
    std::printf("saved draft head (%lld params)\n", (long long) head.param_count());
    return 0;
}

// ---- bench ----

namespace {

std::vector<std::vector<int>> heldout_prompts(const std::vector<int> & tokens, double val_fraction,
                                              int num_prompts, int prompt_len) {
    if (num_prompts < 1 || prompt_len < 2) {
        throw ParamError("bench: num-prompts >= 1 and prompt-len >= 2 required");
    }
    const size_t train_n = train_split(tokens.size(), val_fraction);
    const size_t n_val   = tokens.size() - train_n;
    if (n_val < (size_t) prompt_len + (size_t) num_prompts) {
        throw ParamError(strfmt("bench: held-out tail (%zu tokens) too small for %d prompts of %d",
                                n_val, num_prompts, prompt_len));
    }
    const size_t span = n_val - prompt_len;
    std::vector<std::vector<int>> prompts;
    prompts.reserve(num_prompts);
    for (int i = 0; i < num_prompts; ++i) {
        const size_t start = train_n + span * (size_t) i / (size_t) num_prompts;
        prompts.emplace_back(tokens.begin() + start, tokens.begin() + start + prompt_len);
    }
    return prompts;
}

std::vector<std::vector<int>> file_prompts(const std::string & path, const Tokenizer & tok) {
    const std::string text = slurp_file(path, "bench");
    std::vector<std::vector<int>> prompts;
    size_t lineno = 0, pos = 0;
    while (pos <= text.size()) {
        const size_t nl        = text.find('\n', pos);
        const std::string line = text.substr(pos, nl == std::string::npos ? nl : nl - pos);
        pos                    = nl == std::string::npos ? text.size() + 1 : nl + 1;
        lineno += 1;
        if (line.empty()) {
            continue;
        }
        auto ids = tok.encode(line);
        if (ids.size() < 2) {
            throw DataError(strfmt("bench: prompt line %zu has fewer than 2 tokens", lineno));
        }
        prompts.push_back(std::move(ids));
    }
    if (prompts.empty()) {
        throw DataError(strfmt("bench: no prompts in '%s'", path.c_str()));
    }
    return prompts;
}

struct CellResult {
    json row;
    double tokens_per_sec = 0;
    double wall_ms        = 0;
};

// one (drafter, method, temperature) cell over every prompt. seeds depend on
// (temperature index, prompt index) only, so different methods and drafters
// see identical sampling streams and budgets.
CellResult run_cell(const TargetModel & target, const DraftHead & head, const RunConfig & cfg,
                    DecodeMethod method, size_t temp_idx, double temp,
                    const std::vector<std::vector<int>> & prompts, MetricsLog & log,
                    const char * kind, const json & tags) {
    GenerateOptions opts;
    opts.method         = method;
    opts.max_new_tokens = cfg.gen_len;
    opts.draft_len      = cfg.draft_len;
    opts.tree_budget    = cfg.tree_budget;
    opts.tree_depth     = cfg.tree_depth;
    opts.tree_branch    = cfg.tree_branch;
    opts.eot_token      = -1; // fixed budget: every run emits exactly gen_len tokens
    opts.sampling.temperature  = temp;
    opts.sampling.top_p        = cfg.top_p;
    opts.sampling.top_k_filter = cfg.top_k_filter;
    opts.validate();

    std::vector<CycleMetrics> pool;
    long total_tokens = 0, total_cycles = 0;
    double wall = 0;
    for (size_t i = 0; i < prompts.size(); ++i) {
        opts.sampling.seed = mix_seed(mix_seed(cfg.seed, 0xbe4c + temp_idx), (uint64_t) i);
        Engine e(target, head, opts);
        e.reset(prompts[i]);
        e.run();
        const RunReport r = e.report();
        json jrun         = {{"kind", kind},
                             {"method", to_string(method)},
                             {"temperature", temp},
                             {"prompt", i},
                             {"seed", r.seed},
                             {"prompt_tokens", r.prompt_tokens},
                             {"total_tokens", r.total_tokens},
                             {"num_cycles", r.num_cycles},
                             {"tau", r.tau},
                             {"alpha", r.alpha},
                             {"wall_ms", r.wall_ms},
                             {"tokens_per_sec", r.tokens_per_sec}};
        for (auto it = tags.begin(); it != tags.end(); ++it) {
            jrun[it.key()] = it.value();
        }
        log.line(jrun);
        total_tokens += r.total_tokens;
        total_cycles += r.num_cycles;
        wall += r.wall_ms;
        pool.insert(pool.end(), e.cycles().begin(), e.cycles().end());
    }
    const int max_step =
        method == DecodeMethod::chain ? cfg.draft_len : (method == DecodeMethod::tree ? cfg.tree_depth : 0);

    CellResult out;
    out.wall_ms        = wall;
    out.tokens_per_sec = wall > 0 ? 1000.0 * (double) total_tokens / wall : 0.0;
    out.row            = {{"method", to_string(method)},
                          {"temperature", temp},
                          {"tau", (double) total_tokens / (double) total_cycles},
                          {"alpha", compute_alpha(pool, max_step)},
                          {"total_tokens", total_tokens},
                          {"num_cycles", total_cycles},
                          {"num_prompts", prompts.size()},
                          {"wall_ms", wall},
                          {"tokens_per_sec", out.tokens_per_sec},
                          {"speedup", 0.0}};
    for (auto it = tags.begin(); it != tags.end(); ++it) {
        out.row[it.key()] = it.value();
    }
    return out;
}

void print_row(const json & row) {
    const auto alpha = row["alpha"].get<std::vector<double>>();
    std::string astr;
    for (double a : alpha) {
        astr += strfmt("%s%.3f", astr.empty() ? "" : " ", a);
    }
    std::printf("%-8s T=%-4.2f tau %-6.3f tok/s %-8.1f speedup %-6.3f alpha [%s]\n",
                row["method"].get<std::string>().c_str(), row["temperature"].get<double>(),
                row["tau"].get<double>(), row["tokens_per_sec"].get<double>(),
                row["speedup"].get<double>(), astr.c_str());
}

} // namespace

int cmd_bench(const RunConfig & cfg) {
    if (cfg.methods.empty() || cfg.temperatures.empty()) {
        throw ParamError("bench: methods and temperatures must be non-empty");
    }
    std::vector<DecodeMethod> methods;
    for (const auto & m : cfg.methods) {
        methods.push_back(decode_method_from_string(m));
    }
    for (double t : cfg.temperatures) {
        if (t < 0) {
            throw ParamError("bench: temperatures must be >= 0");
        }
    }
    if (cfg.gen_len < 1) {
        throw ParamError("bench: gen-len must be >= 1");
    }
    const bool sweeping = !cfg.sweep_align_steps.empty() || (!cfg.sweep_k.empty() && !cfg.sweep_w.empty());
    const bool need_draft =
        sweeping || std::any_of(methods.begin(), methods.end(),
                                [](DecodeMethod m) { return m != DecodeMethod::vanilla; });

    const LoadedDataset ds   = load_dataset(cfg.dataset, "bench");
    const TargetModel target = load_target(cfg.target_path, "bench");
    if (target.cfg.vocab_size != ds.vocab_size) {
        throw FormatError(strfmt("bench: target vocab %d != dataset vocab %d", target.cfg.vocab_size,
                                 ds.vocab_size));
    }

    DraftHead head;
    if (!cfg.draft_path.empty()) {
        head = draft_from_checkpoint(load_checkpoint(cfg.draft_path), target);
    } else if (need_draft && !sweeping) {
        throw ParamError("bench: --draft is required for speculative methods");
    } else {
        Rng r(0);
        head.init(target, r); // placeholder; vanilla runs ignore the drafter
    }

    std::vector<std::vector<int>> prompts;
    if (!cfg.prompts_file.empty()) {
        if (cfg.vocab.empty()) {
            throw ParamError("bench: --vocab is required with --prompts-file");
        }
        prompts = file_prompts(cfg.prompts_file, Tokenizer::load(cfg.vocab));
    } else {
        prompts = heldout_prompts(ds.tokens, cfg.val_fraction, cfg.num_prompts, cfg.prompt_len);
    }

    begin_run(cfg, "bench");
    MetricsLog log(cfg);

    json report;
    report["prompts"] = {{"count", prompts.size()},
                         {"gen_len", cfg.gen_len},
                         {"source", cfg.prompts_file.empty() ? "held-out" : cfg.prompts_file.c_str()}};
    report["seed"]    = cfg.seed;

    // main grid: methods x temperatures with the supplied drafter
    std::vector<json> rows;
    std::map<size_t, double> vanilla_tps; // temp idx -> tokens/sec
    for (size_t ti = 0; ti < cfg.temperatures.size(); ++ti) {
        for (DecodeMethod m : methods) {
            CellResult cell = run_cell(target, head, cfg, m, ti, cfg.temperatures[ti], prompts, log,
                                       "run", json::object());
            if (m == DecodeMethod::vanilla) {
                vanilla_tps[ti] = cell.tokens_per_sec;
            }
            rows.push_back(std::move(cell.row));
        }
    }
    for (size_t ti = 0, r = 0; ti < cfg.temperatures.size(); ++ti) {
        for (size_t mi = 0; mi < methods.size(); ++mi, ++r) {
            if (vanilla_tps.count(ti) && vanilla_tps[ti] > 0) {
                rows[r]["speedup"] = rows[r]["tokens_per_sec"].get<double>() / vanilla_tps[ti];
            }
            print_row(rows[r]);
        }
    }
    report["rows"] = rows;

    // sweeps retrain a drafter per cell on the same windows, same seed
    if (sweeping) {
        const auto examples = build_training_windows(cfg, cfg.train, target, ds.tokens);
        std::printf("sweep: %zu training windows per cell\n", examples.size());

        auto sweep_cell = [&](const TrainConfig & tc, const json & tags) {
            DraftHead cell_head =
                train_one_draft(cfg, tc, target, examples, &log, "sweep_train", tags);
            for (size_t ti = 0; ti < cfg.temperatures.size(); ++ti) {
                for (DecodeMethod m : methods) {
                    if (m == DecodeMethod::vanilla) {
                        continue; // no drafter involved; main grid covers it
                    }
                    CellResult cell = run_cell(target, cell_head, cfg, m, ti, cfg.temperatures[ti],
                                               prompts, log, "sweep_run", tags);
                    if (vanilla_tps.count(ti) && vanilla_tps[ti] > 0) {
                        cell.row["speedup"] = cell.tokens_per_sec / vanilla_tps[ti];
                    }
                    print_row(cell.row);
                    report["sweep"].push_back(cell.row);
                }
            }
        };

        for (int n : cfg.sweep_align_steps) {
            TrainConfig tc = cfg.train;
            tc.seed        = cfg.seed;
            tc.align_steps = n;
            tc.validate(target.cfg.vocab_size);
            sweep_cell(tc, {{"align_steps", n}});
        }
        if (!cfg.sweep_k.empty() && !cfg.sweep_w.empty()) {
            for (int k : cfg.sweep_k) {
                for (double w : cfg.sweep_w) {
                    TrainConfig tc   = cfg.train;
                    tc.seed          = cfg.seed;
                    tc.top_k         = k;
                    tc.top_k_weight  = w;
                    tc.validate(target.cfg.vocab_size);
                    sweep_cell(tc, {{"topk_k", k}, {"topk_weight", w}});
                }
            }
        }
    }

    write_file((fs::path(cfg.out_dir) / "report.json").string(), report.dump(2) + "\n");
    return 0;
}

// ---- generate ----

int cmd_generate(const RunConfig & cfg) {
    if (cfg.vocab.empty()) {
        throw ParamError("generate: --vocab is required");
    }
    if (cfg.prompt.empty()) {
        throw ParamError("generate: --prompt must not be empty");
    }
    const DecodeMethod method = decode_method_from_string(cfg.method);
    const Tokenizer tok       = Tokenizer::load(cfg.vocab);
    const TargetModel target  = load_target(cfg.target_path, "generate");
    if (target.cfg.vocab_size != tok.vocab_size()) {
        throw FormatError(strfmt("generate: target vocab %d != tokenizer vocab %d",
                                 target.cfg.vocab_size, tok.vocab_size()));
    }
    DraftHead head;
    if (method != DecodeMethod::vanilla) {
        if (cfg.draft_path.empty()) {
            throw ParamError("generate: --draft is required unless --method vanilla");
        }
        head = draft_from_checkpoint(load_checkpoint(cfg.draft_path), target);
    } else {
        Rng r(0);
        head.init(target, r);
    }

    GenerateOptions opts;
    opts.method                = method;
    opts.max_new_tokens        = cfg.max_new_tokens;
    opts.draft_len             = cfg.draft_len;
    opts.tree_budget           = cfg.tree_budget;
    opts.tree_depth            = cfg.tree_depth;
    opts.tree_branch           = cfg.tree_branch;
    opts.eot_token             = tok.eot_id;
    opts.sampling.temperature  = cfg.temperature;
    opts.sampling.top_p        = cfg.top_p;
    opts.sampling.top_k_filter = cfg.top_k_filter;
    opts.sampling.seed         = cfg.seed;
    opts.validate();

    begin_run(cfg, "generate");

    Engine e(target, head, opts);
    e.reset(tok.encode(cfg.prompt));
    while (!e.done()) {
        const CycleMetrics cm = e.step();
        if (cfg.trace) {
            const int reached  = std::accumulate(cm.step_reached.begin(), cm.step_reached.end(), 0);
            const int accepted = std::accumulate(cm.step_accepted.begin(), cm.step_accepted.end(), 0);
            std::fprintf(stderr, "cycle %d: +%d tokens (depth reached %d, accepted %d)\n", cm.cycle,
                         cm.tokens_generated, reached, accepted);
        }
    }
    const RunReport r = e.report();

    json jr = {{"method", r.method},
               {"prompt_tokens", r.prompt_tokens},
               {"total_tokens", r.total_tokens},
               {"num_cycles", r.num_cycles},
               {"tau", r.tau},
               {"alpha", r.alpha},
               {"wall_ms", r.wall_ms},
               {"tokens_per_sec", r.tokens_per_sec},
               {"seed", r.seed}};
    write_file((fs::path(cfg.out_dir) / "report.json").string(), jr.dump(2) + "\n");

    std::printf("%s\n", tok.decode(e.generated()).c_str());
    return 0;
}

} // namespace hass
