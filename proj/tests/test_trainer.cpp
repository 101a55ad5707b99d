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

#include <doctest.h>

#include <cmath>
#include <fstream>

#include "ember/miner.hpp"
#include "ember/trainer.hpp"
#include "test_support.hpp"

using namespace ember;
using namespace ember::trainer;

namespace {

TrainConfig tiny_train_config() {
    TrainConfig cfg;
    cfg.encoder.tokenizer.vocab_size = 256;
    cfg.encoder.d_model = 8;
    cfg.encoder.output_dim = 16;
    cfg.encoder.mrl_dims = {4, 16};
    cfg.n_workers = 2;
    cfg.n_neg = 4;
    cfg.retrieval_batch = 2;
    cfg.sts_batch = 4;
    cfg.pretrain_batch = 4;
    cfg.lr = 0.01;
    cfg.tau = 0.5;
    return cfg;
}

// Tiny but trainable world shared by the loop tests.
struct LoopFixture {
    TrainConfig cfg = tiny_train_config();
    data::SynthOutput synth = data::synth_corpus(21, 4, 16, 128);
    EncoderParams params;
    std::vector<miner::RetrievalExample> dataset;

    explicit LoopFixture(std::size_t steps) {
        cfg.total_steps = steps;
        params = init_params(cfg.encoder, 5);
        miner::MinerConfig install = cfg.miner;
        dataset = miner::initial_mine(params, synth.retrieval, synth.corpus,
                                      cfg.n_neg, install);
    }
};

bool metrics_equal(const RunMetrics& a, const RunMetrics& b) {
    if (a.size() != b.size()) {
        return false;
    }
    for (std::size_t i = 0; i < a.size(); ++i) {
        if (a[i].step != b[i].step || a[i].loss_total != b[i].loss_total ||
            a[i].loss_retri != b[i].loss_retri ||
            a[i].loss_sts != b[i].loss_sts || a[i].lr != b[i].lr ||
            a[i].pos_score_mean != b[i].pos_score_mean ||
            a[i].neg_score_mean != b[i].neg_score_mean ||
            a[i].replacements != b[i].replacements) {
            return false;
        }
    }
    return true;
}

}  // namespace

TEST_CASE("warmup_lr ramp") {
    TrainConfig cfg = tiny_train_config();
    cfg.lr = 1e-5;
    cfg.warmup_ratio = 0.05;
    cfg.total_steps = 2000;  // warmup over 100 steps
    CHECK(warmup_lr(0, cfg) == 0.0);
    CHECK(warmup_lr(100, cfg) == 1e-5);   // ramp end equals the constant
    CHECK(warmup_lr(50, cfg) == doctest::Approx(5e-6).epsilon(1e-12));
    CHECK(warmup_lr(99, cfg) < 1e-5);
    CHECK(warmup_lr(1500, cfg) == 1e-5);
}

TEST_CASE("optimizer_step decoupled decay identities") {
    TrainConfig cfg = tiny_train_config();
    auto params = init_params(cfg.encoder, 9);
    auto grads = make_grads(cfg.encoder);  // all zero
    auto state = make_optimizer_state(cfg.encoder);

    SUBCASE("zero grads, zero decay: parameters unchanged") {
        const auto before = params.embedding_table.values;
        optimizer_step(params, grads, state, 1e-5, 0.0);
        CHECK(params.embedding_table.values == before);
    }

    SUBCASE("zero grads: pure decay by exactly (1 - lr wd) per step") {
        auto expected = params.embedding_table.values;
        const double decay = 1.0 - 1e-5 * 0.001;
        for (int step = 0; step < 5; ++step) {
            optimizer_step(params, grads, state, 1e-5, 0.001);
            for (auto& x : expected) {
                x *= decay;
            }
        }
        CHECK(params.embedding_table.values == expected);
    }

    SUBCASE("non-finite gradients are rejected") {
        grads.projection.values[3] = std::nan("");
        CHECK_THROWS_AS(optimizer_step(params, grads, state, 1e-5, 0.0),
                        NonFiniteGradient);
    }
}

TEST_CASE("optimizer_step moves against the gradient") {
    TrainConfig cfg = tiny_train_config();
    auto params = init_params(cfg.encoder, 10);
    auto grads = make_grads(cfg.encoder);
    auto state = make_optimizer_state(cfg.encoder);
    grads.projection.values[0] = 1.0;
    const double before = params.projection.values[0];
    optimizer_step(params, grads, state, 1e-3, 0.0);
    CHECK(params.projection.values[0] < before);
}

TEST_CASE("mrl one-hot full-dimension weight equals the plain loss") {
    Rng rng(11);
    losses::PairBatch batch;
    batch.queries = test::random_vectors(rng, 3, 16);
    batch.positives = test::random_vectors(rng, 3, 16);
    const auto loss_fn = [](const losses::PairBatch& b) {
        return losses::info_nce_in_batch(b, 0.5);
    };
    const std::vector<std::size_t> dims{4, 16};
    const std::vector<double> one_hot{0.0, 1.0};
    const auto wrapped = mrl_pair_loss(loss_fn, batch, dims, one_hot);
    const auto plain = loss_fn(batch);
    CHECK(wrapped.value == plain.value);  // exact
    for (std::size_t i = 0; i < 3; ++i) {
        CHECK(wrapped.grad_queries[i] == plain.grad_queries[i]);
        CHECK(wrapped.grad_positives[i] == plain.grad_positives[i]);
    }

    const std::vector<std::size_t> single{16};
    const std::vector<double> w1{1.0};
    CHECK(mrl_pair_loss(loss_fn, batch, single, w1).value == plain.value);
}

TEST_CASE("mrl_pair_loss gradients pass the finite-difference oracle") {
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        Rng rng(400 + seed);
        const std::size_t m = 2;
        const std::size_t dim = 8;
        losses::PairBatch batch;
        batch.queries = test::random_vectors(rng, m, dim);
        batch.positives = test::random_vectors(rng, m, dim);
        const std::vector<std::size_t> dims{3, 8};
        const std::vector<double> weights{0.5, 0.5};
        const auto loss_fn = [](const losses::PairBatch& b) {
            return losses::info_nce_in_batch(b, 0.5);
        };
        const auto out = mrl_pair_loss(loss_fn, batch, dims, weights);
        std::vector<DenseVector> grads = out.grad_queries;
        grads.insert(grads.end(), out.grad_positives.begin(),
                     out.grad_positives.end());
        std::vector<DenseVector> inputs = batch.queries;
        inputs.insert(inputs.end(), batch.positives.begin(),
                      batch.positives.end());
        const auto numeric = finite_diff_grad(
            [&](const DenseVector& flat) {
                const auto all = test::unflatten(flat, 2 * m, dim);
                losses::PairBatch b;
                b.queries.assign(all.begin(), all.begin() + m);
                b.positives.assign(all.begin() + m, all.end());
                return mrl_pair_loss(loss_fn, b, dims, weights).value;
            },
            test::flatten(inputs), 1e-5);
        CHECK(check_gradient(test::flatten(grads), numeric, 1e-4).passed);
    }
}

TEST_CASE("mrl argument validation") {
    Rng rng(12);
    losses::PairBatch batch;
    batch.queries = test::random_vectors(rng, 2, 8);
    batch.positives = test::random_vectors(rng, 2, 8);
    const auto loss_fn = [](const losses::PairBatch& b) {
        return losses::info_nce_in_batch(b, 1.0);
    };
    const std::vector<std::size_t> dims{3, 8};
    CHECK_THROWS_AS(
        mrl_pair_loss(loss_fn, batch, dims, std::vector<double>{1.0}),
        InvalidDim);
    CHECK_THROWS_AS(mrl_pair_loss(loss_fn, batch, dims,
                                  std::vector<double>{0.0, 0.0}),
                    InvalidDim);
    CHECK_THROWS_AS(mrl_pair_loss(loss_fn, batch,
                                  std::vector<std::size_t>{3, 9},
                                  std::vector<double>{0.5, 0.5}),
                    InvalidDim);
}

TEST_CASE("config json round trip and validation") {
    TrainConfig cfg = tiny_train_config();
    cfg.seed = 77;
    cfg.cbb_norm = losses::CbbNorm::negatives;
    const auto text = config_to_json_text(cfg);
    const auto back = config_from_json_text(text);
    CHECK(back.seed == 77);
    CHECK(back.cbb_norm == losses::CbbNorm::negatives);
    CHECK(back.encoder.mrl_dims == cfg.encoder.mrl_dims);
    CHECK(back.lr == cfg.lr);
    CHECK(back.miner.ratio == cfg.miner.ratio);

    CHECK_THROWS_AS(config_from_json_text("{\"lr\": -1}"), SchemaViolation);
    CHECK_THROWS_AS(config_from_json_text("{\"mrl_dims\": [16, 8]}"),
                    SchemaViolation);
    CHECK_THROWS_AS(config_from_json_text("{\"mrl_dims\": [16, 64]}"),
                    SchemaViolation);  // must end at output_dim (128)
    CHECK_THROWS_AS(config_from_json_text("not json"), ParseError);
    CHECK_THROWS_AS(config_from_json_text("{\"cbb_norm\": \"bogus\"}"),
                    SchemaViolation);

    // overlay keeps base values for absent fields
    TrainConfig base = tiny_train_config();
    base.tau = 0.25;
    const auto overlaid = apply_config_overlay(base, "{\"lr\": 0.5}");
    CHECK(overlaid.lr == 0.5);
    CHECK(overlaid.tau == 0.25);
}

TEST_CASE("pretrain_loop basics") {
    TrainConfig cfg = tiny_train_config();
    cfg.total_steps = 0;
    const auto synth = data::synth_corpus(31, 4, 8, 128);
    auto params = init_params(cfg.encoder, 3);
    const auto before = params.embedding_table.values;
    const auto metrics = pretrain_loop(cfg, synth.pairs, params);
    CHECK(metrics.empty());
    CHECK(params.embedding_table.values == before);  // 0 steps: unchanged

    CHECK_THROWS_AS(pretrain_loop(cfg, {}, params), EmptyInput);
}

TEST_CASE("pretrain step-0 loss is near ln(batch) in the uniform regime") {
    // Unstructured random-token pairs at tau=1: similarities are nearly
    // uniform, so the first loss is about ln(pretrain_batch).
    TrainConfig cfg = tiny_train_config();
    cfg.total_steps = 1;
    cfg.tau = 1.0;
    cfg.pretrain_batch = 8;
    Rng rng(51);
    std::vector<data::PairRecord> pairs;
    for (int i = 0; i < 64; ++i) {
        auto word = [&] { return "w" + std::to_string(rng.uniform_int(5000)); };
        std::string q = word();
        std::string p = word();
        for (int k = 0; k < 5; ++k) {
            q += " " + word();
            p += " " + word();
        }
        pairs.push_back(data::PairRecord{q, p, {}});
    }
    for (std::uint64_t seed : {1ull, 2ull, 3ull}) {
        auto params = init_params(cfg.encoder, seed);
        const auto metrics = pretrain_loop(cfg, pairs, params);
        REQUIRE(metrics.size() == 1);
        const double expected = std::log(8.0);
        CHECK(std::abs(metrics[0].loss_total - expected) / expected < 0.2);
    }
}

TEST_CASE("pretrain determinism") {
    TrainConfig cfg = tiny_train_config();
    cfg.total_steps = 12;
    const auto synth = data::synth_corpus(33, 4, 8, 128);
    auto p1 = init_params(cfg.encoder, 3);
    auto p2 = init_params(cfg.encoder, 3);
    const auto m1 = pretrain_loop(cfg, synth.pairs, p1);
    const auto m2 = pretrain_loop(cfg, synth.pairs, p2);
    CHECK(metrics_equal(m1, m2));
    CHECK(p1.embedding_table.values == p2.embedding_table.values);
    CHECK(p1.projection.values == p2.projection.values);
}

TEST_CASE("finetune_loop contracts") {
    SUBCASE("mining disabled yields an empty ledger") {
        LoopFixture fx(8);
        fx.cfg.miner.check_interval = 1000;  // beyond total_steps
        auto result = finetune_loop(fx.cfg, fx.dataset, fx.synth.sts,
                                    fx.synth.corpus, fx.params);
        CHECK(result.ledger.empty());
        CHECK(result.metrics.size() == 8);
        CHECK(result.updates == 8);
        for (const auto& m : result.metrics) {
            CHECK(m.replacements == 0);
            CHECK(std::isfinite(m.loss_total));
            CHECK(m.loss_total >= 0.0);
        }
    }

    SUBCASE("one update per cycle even when mining runs") {
        LoopFixture fx(6);
        fx.cfg.miner.check_interval = 2;  // passes at steps 2 and 4
        auto result = finetune_loop(fx.cfg, fx.dataset, fx.synth.sts,
                                    fx.synth.corpus, fx.params);
        CHECK(result.updates == 6);
        CHECK_FALSE(result.ledger.empty());
    }

    SUBCASE("N=1, beta=0 reduces to explicit-negative InfoNCE fine-tuning") {
        LoopFixture fx(5);
        fx.cfg.n_workers = 1;
        fx.cfg.beta = 0.0;
        auto result = finetune_loop(fx.cfg, fx.dataset, fx.synth.sts,
                                    fx.synth.corpus, fx.params);
        for (const auto& m : result.metrics) {
            CHECK(m.loss_total == m.loss_retri);
        }
    }

    SUBCASE("determinism across reruns") {
        LoopFixture a(10);
        a.cfg.miner.check_interval = 4;
        auto pa = a.params;
        auto da = a.dataset;
        const auto ra =
            finetune_loop(a.cfg, da, a.synth.sts, a.synth.corpus, pa);
        auto pb = a.params;
        auto db = a.dataset;
        const auto rb =
            finetune_loop(a.cfg, db, a.synth.sts, a.synth.corpus, pb);
        CHECK(metrics_equal(ra.metrics, rb.metrics));
        CHECK(pa.embedding_table.values == pb.embedding_table.values);
        CHECK(ra.ledger.size() == rb.ledger.size());
    }

    SUBCASE("missing negatives are rejected") {
        LoopFixture fx(3);
        fx.dataset[0].mining.installed_negative_ids.clear();
        CHECK_THROWS_AS(finetune_loop(fx.cfg, fx.dataset, fx.synth.sts,
                                      fx.synth.corpus, fx.params),
                        EmptyNegatives);
    }

    SUBCASE("n_neg must split across workers") {
        LoopFixture fx(3);
        // valid config (3 % 3 == 0) but the mined dataset carries 4
        // negatives per example
        fx.cfg.n_workers = 3;
        fx.cfg.n_neg = 3;
        CHECK_THROWS_AS(finetune_loop(fx.cfg, fx.dataset, fx.synth.sts,
                                      fx.synth.corpus, fx.params),
                        IndivisibleCount);
    }
}

TEST_CASE("finetune trace records one line per worker plus the sts worker") {
    LoopFixture fx(2);
    std::vector<std::tuple<std::size_t, std::size_t, std::size_t>> records;
    const TraceSink sink = [&](std::size_t step, std::size_t worker,
                               const std::vector<double>& partials) {
        records.emplace_back(step, worker, partials.size());
    };
    finetune_loop(fx.cfg, fx.dataset, fx.synth.sts, fx.synth.corpus,
                  fx.params, sink);
    // per step: n_workers retrieval partials + 1 sts pseudo-worker
    REQUIRE(records.size() == 2 * (fx.cfg.n_workers + 1));
    CHECK(std::get<1>(records[fx.cfg.n_workers]) == fx.cfg.n_workers);
    CHECK(std::get<2>(records[0]) == fx.cfg.retrieval_batch);
    CHECK(std::get<2>(records[fx.cfg.n_workers]) == 1);  // cosent value
}

TEST_CASE("sequential baseline determinism and task probabilities") {
    LoopFixture fx(30);
    fx.cfg.lr = 0.05;

    SUBCASE("deterministic given the seed") {
        auto p1 = fx.params;
        auto d1 = fx.dataset;
        const auto m1 = sequential_baseline_loop(fx.cfg, d1, fx.synth.sts,
                                                 fx.synth.corpus, p1);
        auto p2 = fx.params;
        auto d2 = fx.dataset;
        const auto m2 = sequential_baseline_loop(fx.cfg, d2, fx.synth.sts,
                                                 fx.synth.corpus, p2);
        CHECK(metrics_equal(m1, m2));
        CHECK(p1.projection.values == p2.projection.values);
    }

    SUBCASE("probability one on sts trains CoSENT alone") {
        fx.cfg.sts_task_prob = 1.0;
        auto p = fx.params;
        auto d = fx.dataset;
        const auto metrics = sequential_baseline_loop(fx.cfg, d, fx.synth.sts,
                                                      fx.synth.corpus, p);
        CHECK(metrics.back().loss_sts < metrics.front().loss_sts);
    }

    SUBCASE("probability zero on sts trains retrieval alone") {
        fx.cfg.sts_task_prob = 0.0;
        auto p = fx.params;
        auto d = fx.dataset;
        const auto metrics = sequential_baseline_loop(fx.cfg, d, fx.synth.sts,
                                                      fx.synth.corpus, p);
        CHECK(metrics.back().loss_retri < metrics.front().loss_retri);
    }
}

TEST_CASE("checkpoint round trip is bit exact") {
    TrainConfig cfg = tiny_train_config();
    cfg.seed = 1234;
    auto params = init_params(cfg.encoder, 99);
    const auto dir = test::fresh_dir("checkpoint");
    const auto path = dir / "ckpt.bin";
    save_checkpoint(params, cfg, path);
    const auto loaded = load_checkpoint(path);
    CHECK(loaded.params.embedding_table.values ==
          params.embedding_table.values);
    CHECK(loaded.params.projection.values == params.projection.values);
    CHECK(loaded.config.seed == 1234);
    CHECK(loaded.config.encoder.output_dim == cfg.encoder.output_dim);

    // byte-identical when saved twice
    save_checkpoint(params, cfg, dir / "ckpt2.bin");
    std::ifstream a(path, std::ios::binary);
    std::ifstream b(dir / "ckpt2.bin", std::ios::binary);
    const std::string bytes_a((std::istreambuf_iterator<char>(a)),
                              std::istreambuf_iterator<char>());
    const std::string bytes_b((std::istreambuf_iterator<char>(b)),
                              std::istreambuf_iterator<char>());
    CHECK(bytes_a == bytes_b);
}

TEST_CASE("checkpoint corruption is detected, never silent") {
    TrainConfig cfg = tiny_train_config();
    auto params = init_params(cfg.encoder, 7);
    const auto dir = test::fresh_dir("checkpoint_bad");
    const auto path = dir / "ckpt.bin";
    save_checkpoint(params, cfg, path);

    // truncate
    std::ifstream in(path, std::ios::binary);
    std::string bytes((std::istreambuf_iterator<char>(in)),
                      std::istreambuf_iterator<char>());
    in.close();
    {
        std::ofstream out(dir / "trunc.bin", std::ios::binary);
        out.write(bytes.data(),
                  static_cast<std::streamsize>(bytes.size() / 2));
    }
    CHECK_THROWS_AS(load_checkpoint(dir / "trunc.bin"), ShapeMismatch);

    // bump the version field (bytes 8..11)
    {
        auto bumped = bytes;
        bumped[8] = 9;
        std::ofstream out(dir / "ver.bin", std::ios::binary);
        out.write(bumped.data(), static_cast<std::streamsize>(bumped.size()));
    }
    CHECK_THROWS_AS(load_checkpoint(dir / "ver.bin"), VersionMismatch);

    // break the magic
    {
        auto broken = bytes;
        broken[0] = 'X';
        std::ofstream out(dir / "magic.bin", std::ios::binary);
        out.write(broken.data(), static_cast<std::streamsize>(broken.size()));
    }
    CHECK_THROWS_AS(load_checkpoint(dir / "magic.bin"), IoError);

    CHECK_THROWS_AS(load_checkpoint(dir / "missing.bin"), IoError);
}

TEST_CASE("metrics csv round trip") {
    RunMetrics metrics;
    for (std::size_t s = 0; s < 5; ++s) {
        StepMetrics m;
        m.step = s;
        m.loss_total = 1.0 / (1.0 + static_cast<double>(s));
        m.loss_retri = 0.5 * m.loss_total;
        m.loss_sts = 0.1 + static_cast<double>(s);
        m.lr = 1e-5 * static_cast<double>(s);
        m.pos_score_mean = 0.9;
        m.neg_score_mean = -0.1;
        m.replacements = s % 2;
        metrics.push_back(m);
    }
    const auto path = test::fresh_dir("metrics") / "metrics.csv";
    write_metrics_csv(metrics, path);
    const auto back = read_metrics_csv(path);
    REQUIRE(back.size() == metrics.size());
    for (std::size_t i = 0; i < metrics.size(); ++i) {
        CHECK(back[i].loss_total == metrics[i].loss_total);  // %.17g exact
        CHECK(back[i].lr == metrics[i].lr);
        CHECK(back[i].replacements == metrics[i].replacements);
    }

    std::ofstream bad(path, std::ios::trunc);
    bad << "step,wrong,header\n";
    bad.close();
    CHECK_THROWS_AS(read_metrics_csv(path), MissingColumn);
}
