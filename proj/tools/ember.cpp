/*
 * Copyright (c) 2026 The Ember Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

// Command-line front end. Subcommands map onto the library pipeline:
//   synth -> filter -> pretrain -> mine-init -> finetune /
//   finetune-sequential -> eval -> export-curves, plus gradcheck.
//
// Exit codes: 0 success, 1 validation error (arguments, missing inputs,
// bad config, busy output dir), 2 runtime error.

#include <CLI11.hpp>

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "ember/data.hpp"
#include "ember/errors.hpp"
#include "ember/evaluator.hpp"
#include "ember/gradcheck.hpp"
#include "ember/kernels.hpp"
#include "ember/miner.hpp"
#include "ember/rng.hpp"
#include "ember/trainer.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct ValidationError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

std::uint64_t fnv1a64_file(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw ValidationError("cannot open input: " + path.string());
    }
    std::uint64_t h = 1469598103934665603ULL;
    char buf[1 << 16];
    while (in.read(buf, sizeof buf) || in.gcount() > 0) {
        for (std::streamsize i = 0; i < in.gcount(); ++i) {
            h ^= static_cast<unsigned char>(buf[i]);
            h *= 1099511628211ULL;
        }
    }
    return h;
}

std::string hex64(std::uint64_t x) {
    char buf[19];
    std::snprintf(buf, sizeof buf, "%016llx",
                  static_cast<unsigned long long>(x));
    return buf;
}

/// One invocation at a time per output directory.
class OutputLock {
public:
    explicit OutputLock(const fs::path& out_dir)
        : lock_path_(out_dir / ".ember.lock") {
        std::error_code ec;
        fs::create_directories(out_dir, ec);
        if (ec) {
            throw ValidationError("cannot create output dir: " +
                                  out_dir.string());
        }
        if (fs::exists(lock_path_)) {
            throw ValidationError(
                "output directory is locked by another invocation: " +
                lock_path_.string());
        }
        std::ofstream lock(lock_path_);
        if (!lock) {
            throw ValidationError("cannot create lock file: " +
                                  lock_path_.string());
        }
        lock << "locked\n";
    }

    ~OutputLock() {
        std::error_code ec;
        fs::remove(lock_path_, ec);
    }

    OutputLock(const OutputLock&) = delete;
    OutputLock& operator=(const OutputLock&) = delete;

private:
    fs::path lock_path_;
};

struct CommonOpts {
    std::string config_path;
    std::string out_dir;
    std::int64_t seed_override = -1;
    bool strict = false;
};

void add_common(CLI::App* cmd, CommonOpts& opts) {
    cmd->add_option("--config", opts.config_path,
                    "JSON config (TrainConfig field names)");
    cmd->add_option("--out", opts.out_dir, "output directory")->required();
    cmd->add_option("--seed", opts.seed_override,
                    "seed override (wins over the config)");
    cmd->add_flag("--strict", opts.strict,
                  "reject unknown fields in JSONL inputs");
}

void require_inputs(const std::vector<std::string>& paths) {
    for (const auto& p : paths) {
        if (!p.empty() && !fs::exists(p)) {
            throw ValidationError("input does not exist: " + p);
        }
    }
}

/// Runs the pre-work phase (config parsing, checkpoint headers); any
/// failure there is a validation error, exit code 1.
template <typename Fn>
auto validated(Fn&& fn) -> decltype(fn()) {
    try {
        return fn();
    } catch (const ValidationError&) {
        throw;
    } catch (const std::exception& e) {
        throw ValidationError(e.what());
    }
}

ember::trainer::TrainConfig resolve_config(const CommonOpts& opts) {
    ember::trainer::TrainConfig cfg;
    if (!opts.config_path.empty()) {
        cfg = ember::trainer::load_config(opts.config_path);
    }
    if (opts.seed_override >= 0) {
        cfg.seed = static_cast<std::uint64_t>(opts.seed_override);
    }
    ember::trainer::validate_config(cfg);
    return cfg;
}

ember::trainer::TrainConfig resolve_config_over_checkpoint(
    const CommonOpts& opts, const ember::trainer::TrainConfig& base) {
    ember::trainer::TrainConfig cfg = base;
    if (!opts.config_path.empty()) {
        std::ifstream in(opts.config_path);
        if (!in) {
            throw ValidationError("cannot open config: " + opts.config_path);
        }
        std::stringstream buffer;
        buffer << in.rdbuf();
        cfg = ember::trainer::apply_config_overlay(base, buffer.str());
    }
    // Parameter shapes are intrinsic to the checkpoint.
    if (cfg.encoder.tokenizer.vocab_size !=
            base.encoder.tokenizer.vocab_size ||
        cfg.encoder.d_model != base.encoder.d_model ||
        cfg.encoder.output_dim != base.encoder.output_dim) {
        throw ValidationError(
            "config encoder shape disagrees with the checkpoint");
    }
    if (opts.seed_override >= 0) {
        cfg.seed = static_cast<std::uint64_t>(opts.seed_override);
    }
    ember::trainer::validate_config(cfg);
    return cfg;
}

void write_manifest(const CommonOpts& opts, const std::string& subcommand,
                    const ember::trainer::TrainConfig& cfg,
                    const std::vector<std::string>& inputs) {
    json manifest;
    manifest["subcommand"] = subcommand;
    manifest["seed"] = cfg.seed;
    manifest["config"] =
        json::parse(ember::trainer::config_to_json_text(cfg));
    json digests = json::object();
    for (const auto& p : inputs) {
        if (!p.empty()) {
            digests[p] = "fnv1a64:" + hex64(fnv1a64_file(p));
        }
    }
    manifest["inputs"] = digests;
    std::ofstream out(fs::path(opts.out_dir) / "run_manifest.json");
    out << manifest.dump(2) << '\n';
}

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) {
        throw ember::IoError("cannot write " + path.string());
    }
    out << text;
    if (!text.empty() && text.back() != '\n') {
        out << '\n';
    }
}

// ---------------------------------------------------------------------
// subcommands

struct SynthOpts {
    CommonOpts common;
    std::size_t clusters = 64;
    std::size_t per_cluster = 64;
    std::size_t vocab = 2048;
};

int run_synth(const SynthOpts& opts) {
    const auto cfg = validated([&] { return resolve_config(opts.common); });
    OutputLock lock(opts.common.out_dir);
    const auto out = ember::data::synth_corpus(cfg.seed, opts.clusters,
                                               opts.per_cluster, opts.vocab);
    const fs::path dir(opts.common.out_dir);
    ember::data::write_pairs(out.pairs, dir / "pairs.jsonl");
    ember::data::write_retrieval(out.retrieval, dir / "retrieval.jsonl");
    ember::data::write_sts(out.sts, dir / "sts.jsonl");
    ember::data::write_classification(out.classification,
                                      dir / "classification.jsonl");
    ember::data::write_corpus(out.corpus, dir / "corpus.jsonl");
    write_manifest(opts.common, "synth", cfg, {});
    std::cout << "synth: " << out.corpus.size() << " passages, "
              << out.retrieval.size() << " retrieval queries, "
              << out.pairs.size() << " pairs, " << out.sts.size()
              << " sts pairs\n";
    return 0;
}

struct FilterOpts {
    CommonOpts common;
    std::string pairs_path;
    double threshold = 0.4;
};

int run_filter(const FilterOpts& opts) {
    const auto cfg = validated([&] { return resolve_config(opts.common); });
    require_inputs({opts.pairs_path});
    OutputLock lock(opts.common.out_dir);
    const auto pairs =
        ember::data::load_pairs(opts.pairs_path, opts.common.strict);
    const auto [kept, report] = ember::data::filter_pairs(
        pairs, ember::data::jaccard_score, opts.threshold);
    const fs::path dir(opts.common.out_dir);
    ember::data::write_pairs(kept, dir / "kept_pairs.jsonl");
    json rj{{"input_count", report.input_count},
            {"kept_count", report.kept_count},
            {"dropped_count", report.dropped_count},
            {"threshold", report.threshold},
            {"histogram", report.histogram}};
    write_text(dir / "filter_report.json", rj.dump(2));
    write_manifest(opts.common, "filter", cfg, {opts.pairs_path});
    std::cout << "filter: kept " << report.kept_count << " of "
              << report.input_count << " pairs at threshold "
              << opts.threshold << "\n";
    return 0;
}

struct PretrainOpts {
    CommonOpts common;
    std::string pairs_path;
};

int run_pretrain(const PretrainOpts& opts) {
    const auto cfg = validated([&] { return resolve_config(opts.common); });
    require_inputs({opts.pairs_path});
    OutputLock lock(opts.common.out_dir);
    const auto pairs =
        ember::data::load_pairs(opts.pairs_path, opts.common.strict);
    auto params = ember::init_params(cfg.encoder,
                                     ember::mix_seed(cfg.seed, 0xE0));
    const auto metrics = ember::trainer::pretrain_loop(cfg, pairs, params);
    const fs::path dir(opts.common.out_dir);
    ember::trainer::write_metrics_csv(metrics, dir / "metrics.csv");
    ember::trainer::save_checkpoint(params, cfg, dir / "checkpoint.bin");
    write_manifest(opts.common, "pretrain", cfg, {opts.pairs_path});
    std::cout << "pretrain: " << metrics.size() << " steps, final loss "
              << (metrics.empty() ? 0.0 : metrics.back().loss_total) << "\n";
    return 0;
}

struct MineInitOpts {
    CommonOpts common;
    std::string retrieval_path;
    std::string corpus_path;
    std::string checkpoint_path;
};

int run_mine_init(const MineInitOpts& opts) {
    require_inputs(
        {opts.retrieval_path, opts.corpus_path, opts.checkpoint_path});
    const auto ckpt = validated(
        [&] { return ember::trainer::load_checkpoint(opts.checkpoint_path); });
    const auto cfg = validated(
        [&] { return resolve_config_over_checkpoint(opts.common, ckpt.config); });
    OutputLock lock(opts.common.out_dir);
    const auto records =
        ember::data::load_retrieval(opts.retrieval_path, opts.common.strict);
    const auto corpus =
        ember::data::load_corpus(opts.corpus_path, opts.common.strict);
    const auto dataset = ember::miner::initial_mine(ckpt.params, records,
                                                    corpus, cfg.n_neg,
                                                    cfg.miner);
    const fs::path dir(opts.common.out_dir);
    ember::miner::save_mined(dataset, dir / "mined.jsonl");
    write_manifest(opts.common, "mine-init", cfg,
                   {opts.retrieval_path, opts.corpus_path,
                    opts.checkpoint_path});
    std::cout << "mine-init: installed " << cfg.n_neg << " negatives for "
              << dataset.size() << " examples\n";
    return 0;
}

struct FinetuneOpts {
    CommonOpts common;
    std::string mined_path;
    std::string sts_path;
    std::string corpus_path;
    std::string checkpoint_path;
    bool trace = false;
    bool sequential = false;
};

int run_finetune(const FinetuneOpts& opts) {
    require_inputs({opts.mined_path, opts.sts_path, opts.corpus_path,
                    opts.checkpoint_path});
    const auto ckpt = validated(
        [&] { return ember::trainer::load_checkpoint(opts.checkpoint_path); });
    const auto cfg = validated(
        [&] { return resolve_config_over_checkpoint(opts.common, ckpt.config); });
    OutputLock lock(opts.common.out_dir);
    auto dataset = ember::miner::load_mined(opts.mined_path);
    const auto sts =
        ember::data::load_sts(opts.sts_path, opts.common.strict);
    const auto corpus =
        ember::data::load_corpus(opts.corpus_path, opts.common.strict);
    auto params = ckpt.params;

    const fs::path dir(opts.common.out_dir);
    if (opts.sequential) {
        const auto metrics = ember::trainer::sequential_baseline_loop(
            cfg, dataset, sts, corpus, params);
        ember::trainer::write_metrics_csv(metrics, dir / "metrics.csv");
        ember::trainer::save_checkpoint(params, cfg, dir / "checkpoint.bin");
        write_manifest(opts.common, "finetune-sequential", cfg,
                       {opts.mined_path, opts.sts_path, opts.corpus_path,
                        opts.checkpoint_path});
        std::cout << "finetune-sequential: " << metrics.size() << " steps\n";
        return 0;
    }

    std::ofstream trace_file;
    ember::trainer::TraceSink sink;
    if (opts.trace) {
        trace_file.open(dir / "trace.jsonl", std::ios::trunc);
        sink = [&trace_file](std::size_t step, std::size_t worker,
                             const std::vector<double>& partials) {
            trace_file << json{{"step", step},
                               {"worker_id", worker},
                               {"per_query_logsumexp", partials}}
                              .dump()
                       << '\n';
        };
    }
    const auto result = ember::trainer::finetune_loop(cfg, dataset, sts,
                                                      corpus, params, sink);
    ember::trainer::write_metrics_csv(result.metrics, dir / "metrics.csv");
    ember::miner::save_mined(dataset, dir / "mined_final.jsonl");
    std::filesystem::remove(dir / "mining_ledger.jsonl");
    ember::miner::append_ledger(result.ledger, dir / "mining_ledger.jsonl");
    ember::trainer::save_checkpoint(params, cfg, dir / "checkpoint.bin");
    write_manifest(opts.common, "finetune", cfg,
                   {opts.mined_path, opts.sts_path, opts.corpus_path,
                    opts.checkpoint_path});
    std::size_t replaced = 0;
    for (const auto& e : result.ledger) {
        replaced += e.replaced ? 1 : 0;
    }
    std::cout << "finetune: " << result.metrics.size() << " steps, "
              << replaced << " negative-set replacements\n";
    return 0;
}

struct EvalOpts {
    CommonOpts common;
    std::string checkpoint_path;
    std::string retrieval_path;
    std::string corpus_path;
    std::string sts_path;
    std::size_t k = 10;
};

int run_eval(const EvalOpts& opts) {
    require_inputs({opts.checkpoint_path, opts.retrieval_path,
                    opts.corpus_path, opts.sts_path});
    const auto ckpt = validated(
        [&] { return ember::trainer::load_checkpoint(opts.checkpoint_path); });
    const auto cfg = validated(
        [&] { return resolve_config_over_checkpoint(opts.common, ckpt.config); });
    OutputLock lock(opts.common.out_dir);
    const auto records =
        ember::data::load_retrieval(opts.retrieval_path, opts.common.strict);
    const auto corpus =
        ember::data::load_corpus(opts.corpus_path, opts.common.strict);

    std::unordered_map<std::string, std::size_t> by_text;
    for (std::size_t i = 0; i < corpus.size(); ++i) {
        by_text.emplace(corpus.texts[i], corpus.ids[i]);
    }
    std::vector<std::string> queries;
    std::vector<std::size_t> gold_ids;
    for (const auto& r : records) {
        const auto it = by_text.find(r.positive);
        if (it == by_text.end()) {
            throw ember::GoldMissing("eval: positive not in corpus: " +
                                     r.positive);
        }
        queries.push_back(r.query);
        gold_ids.push_back(it->second);
    }

    std::vector<ember::evaluator::EvalResult> results;
    ember::evaluator::EvalResult full;
    full.metric = "recall_at_k";
    full.value = ember::evaluator::recall_at_k(queries, gold_ids, corpus,
                                               ckpt.params, opts.k);
    full.k = opts.k;
    results.push_back(full);
    for (auto& r : ember::evaluator::mrl_sweep(queries, gold_ids, corpus,
                                               ckpt.params,
                                               cfg.encoder.mrl_dims,
                                               opts.k)) {
        results.push_back(std::move(r));
    }
    if (!opts.sts_path.empty()) {
        const auto sts =
            ember::data::load_sts(opts.sts_path, opts.common.strict);
        const auto predicted =
            ember::evaluator::predict_sts_cosines(sts, ckpt.params);
        std::vector<double> labels;
        labels.reserve(sts.size());
        for (const auto& r : sts) {
            labels.push_back(r.score);
        }
        ember::evaluator::EvalResult sp;
        sp.metric = "spearman";
        sp.value = ember::evaluator::spearman(predicted, labels);
        results.push_back(sp);
    }
    const fs::path dir(opts.common.out_dir);
    write_text(dir / "eval.json",
               ember::evaluator::results_to_json_text(results));
    write_manifest(opts.common, "eval", cfg,
                   {opts.checkpoint_path, opts.retrieval_path,
                    opts.corpus_path, opts.sts_path});
    for (const auto& r : results) {
        std::cout << r.metric;
        if (r.dim) {
            std::cout << "[dim=" << *r.dim << "]";
        }
        std::cout << " = " << r.value << "\n";
    }
    return 0;
}

struct ExportOpts {
    CommonOpts common;
    std::string metrics_path;
    std::string ledger_path;
    std::string seq_metrics_path;
};

int run_export_curves(const ExportOpts& opts) {
    const auto cfg = validated([&] { return resolve_config(opts.common); });
    require_inputs(
        {opts.metrics_path, opts.ledger_path, opts.seq_metrics_path});
    OutputLock lock(opts.common.out_dir);
    const auto metrics = ember::trainer::read_metrics_csv(opts.metrics_path);

    // Replacement flags come from the ledger; a missing or empty ledger
    // yields all-zero flags.
    std::unordered_map<std::size_t, bool> replaced_at;
    if (!opts.ledger_path.empty()) {
        for (const auto& e : ember::miner::load_ledger(opts.ledger_path)) {
            if (e.replaced) {
                replaced_at[e.step] = true;
            }
        }
    }

    const fs::path dir(opts.common.out_dir);
    {
        std::ofstream fig2(dir / "fig2_scores.csv", std::ios::trunc);
        fig2 << "step,pos_score_mean,neg_score_mean,replaced\n";
        char buf[256];
        for (const auto& m : metrics) {
            std::snprintf(buf, sizeof buf, "%zu,%.17g,%.17g,%d\n", m.step,
                          m.pos_score_mean, m.neg_score_mean,
                          replaced_at.contains(m.step) ? 1 : 0);
            fig2 << buf;
        }
    }

    ember::trainer::RunMetrics seq;
    if (!opts.seq_metrics_path.empty()) {
        seq = ember::trainer::read_metrics_csv(opts.seq_metrics_path);
    }
    {
        std::ofstream fig5(dir / "fig5_losses.csv", std::ios::trunc);
        fig5 << "step,cbb_loss,sequential_retri_loss,sequential_sts_loss\n";
        char buf[256];
        for (std::size_t i = 0; i < metrics.size(); ++i) {
            if (i < seq.size()) {
                std::snprintf(buf, sizeof buf, "%zu,%.17g,%.17g,%.17g\n",
                              metrics[i].step, metrics[i].loss_total,
                              seq[i].loss_retri, seq[i].loss_sts);
            } else {
                std::snprintf(buf, sizeof buf, "%zu,%.17g,,\n",
                              metrics[i].step, metrics[i].loss_total);
            }
            fig5 << buf;
        }
    }
    write_manifest(opts.common, "export-curves", cfg,
                   {opts.metrics_path, opts.ledger_path,
                    opts.seq_metrics_path});
    std::cout << "export-curves: " << metrics.size() << " rows\n";
    return 0;
}

struct GradcheckOpts {
    CommonOpts common;
    std::size_t seeds = 20;
};

int run_gradcheck(const GradcheckOpts& opts) {
    const auto cfg = validated([&] { return resolve_config(opts.common); });
    OutputLock lock(opts.common.out_dir);
    const auto results = ember::gradcheck::run_full_suite(opts.seeds, 1e-5,
                                                          1e-4);
    json arr = json::array();
    bool all_passed = true;
    for (const auto& r : results) {
        std::printf("%-28s max rel err %.3e over %zu seeds  [%s]\n",
                    r.name.c_str(), r.max_relative_error, r.seeds,
                    r.passed ? "ok" : "FAIL");
        arr.push_back(json{{"name", r.name},
                           {"max_relative_error", r.max_relative_error},
                           {"seeds", r.seeds},
                           {"passed", r.passed}});
        all_passed = all_passed && r.passed;
    }
    write_text(fs::path(opts.common.out_dir) / "gradcheck.json",
               arr.dump(2));
    write_manifest(opts.common, "gradcheck", cfg, {});
    if (!all_passed) {
        throw ember::Error("gradient certification failed");
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"contrastive embedding training engine"};
    app.require_subcommand(1);
    app.set_help_all_flag("--help-all");

    SynthOpts synth_opts;
    auto* synth = app.add_subcommand(
        "synth", "generate the deterministic synthetic corpus");
    add_common(synth, synth_opts.common);
    synth->add_option("--clusters", synth_opts.clusters, "cluster count");
    synth->add_option("--per-cluster", synth_opts.per_cluster,
                      "passages per cluster");
    synth->add_option("--vocab", synth_opts.vocab, "content token universe");

    FilterOpts filter_opts;
    auto* filter = app.add_subcommand(
        "filter", "score pairs and drop those below the threshold");
    add_common(filter, filter_opts.common);
    filter->add_option("--pairs", filter_opts.pairs_path, "pair JSONL")
        ->required();
    filter->add_option("--threshold", filter_opts.threshold,
                       "keep scores >= threshold");

    PretrainOpts pretrain_opts;
    auto* pretrain = app.add_subcommand(
        "pretrain", "in-batch InfoNCE pretraining from fresh parameters");
    add_common(pretrain, pretrain_opts.common);
    pretrain->add_option("--pairs", pretrain_opts.pairs_path, "pair JSONL")
        ->required();

    MineInitOpts mine_opts;
    auto* mine = app.add_subcommand(
        "mine-init", "initial hard-negative installation (i = 1)");
    add_common(mine, mine_opts.common);
    mine->add_option("--retrieval", mine_opts.retrieval_path,
                     "retrieval JSONL")
        ->required();
    mine->add_option("--corpus", mine_opts.corpus_path, "corpus JSONL")
        ->required();
    mine->add_option("--checkpoint", mine_opts.checkpoint_path,
                     "encoder checkpoint")
        ->required();

    FinetuneOpts ft_opts;
    auto* finetune = app.add_subcommand(
        "finetune",
        "combined-loss fine-tuning with dynamic hard-negative mining");
    add_common(finetune, ft_opts.common);
    finetune->add_option("--mined", ft_opts.mined_path, "mined JSONL")
        ->required();
    finetune->add_option("--sts", ft_opts.sts_path, "sts JSONL")->required();
    finetune->add_option("--corpus", ft_opts.corpus_path, "corpus JSONL")
        ->required();
    finetune
        ->add_option("--checkpoint", ft_opts.checkpoint_path,
                     "starting checkpoint")
        ->required();
    finetune->add_flag("--trace", ft_opts.trace,
                       "write per-aggregation trace.jsonl");

    FinetuneOpts seq_opts;
    seq_opts.sequential = true;
    auto* seq = app.add_subcommand(
        "finetune-sequential",
        "baseline: one randomly chosen task per update");
    add_common(seq, seq_opts.common);
    seq->add_option("--mined", seq_opts.mined_path, "mined JSONL")
        ->required();
    seq->add_option("--sts", seq_opts.sts_path, "sts JSONL")->required();
    seq->add_option("--corpus", seq_opts.corpus_path, "corpus JSONL")
        ->required();
    seq->add_option("--checkpoint", seq_opts.checkpoint_path,
                    "starting checkpoint")
        ->required();

    EvalOpts eval_opts;
    auto* evalc = app.add_subcommand(
        "eval", "recall@k, MRL dimension sweep and STS Spearman");
    add_common(evalc, eval_opts.common);
    evalc
        ->add_option("--checkpoint", eval_opts.checkpoint_path,
                     "checkpoint to evaluate")
        ->required();
    evalc
        ->add_option("--retrieval", eval_opts.retrieval_path,
                     "retrieval JSONL (positives resolve gold ids)")
        ->required();
    evalc->add_option("--corpus", eval_opts.corpus_path, "corpus JSONL")
        ->required();
    evalc->add_option("--sts", eval_opts.sts_path,
                      "sts JSONL for Spearman (optional)");
    evalc->add_option("--k", eval_opts.k, "recall cutoff");

    ExportOpts export_opts;
    auto* exportc = app.add_subcommand(
        "export-curves", "emit figure-reproduction CSV files");
    add_common(exportc, export_opts.common);
    exportc
        ->add_option("--metrics", export_opts.metrics_path,
                     "metrics.csv of the combined-loss run")
        ->required();
    exportc->add_option("--ledger", export_opts.ledger_path,
                        "mining ledger JSONL (optional)");
    exportc->add_option("--seq-metrics", export_opts.seq_metrics_path,
                        "metrics.csv of the sequential baseline (optional)");

    GradcheckOpts grad_opts;
    auto* grad = app.add_subcommand(
        "gradcheck", "certify analytic gradients against finite differences");
    add_common(grad, grad_opts.common);
    grad->add_option("--seeds", grad_opts.seeds, "random seeds per case");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? 0 : 1;
    }

    try {
        if (*synth) return run_synth(synth_opts);
        if (*filter) return run_filter(filter_opts);
        if (*pretrain) return run_pretrain(pretrain_opts);
        if (*mine) return run_mine_init(mine_opts);
        if (*finetune) return run_finetune(ft_opts);
        if (*seq) return run_finetune(seq_opts);
        if (*evalc) return run_eval(eval_opts);
        if (*exportc) return run_export_curves(export_opts);
        if (*grad) return run_gradcheck(grad_opts);
    } catch (const ValidationError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return 1;
}
