#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "doctest.h"
#include "seednorm/checkpoint.hpp"
#include "seednorm/train.hpp"

using namespace seednorm;

namespace {

ModelConfig tiny_config(NormKind kind) {
    ModelConfig c;
    c.layers = 2;
    c.hidden = 16;
    c.attn_heads = 2;
    c.vocab = 8;
    c.context = 8;
    c.norm = kind;
    return c;
}

TaskSpec tiny_task() {
    TaskSpec t;
    t.batch = 4;
    t.length = 8;
    t.vocab = 8;
    return t;
}

TrainConfig short_run(std::size_t steps) {
    TrainConfig t;
    t.steps = steps;
    t.warmup = 5;
    return t;
}

std::vector<double> losses(const LossCurve& c) {
    std::vector<double> out;
    for (const auto& r : c.records) out.push_back(r.loss);
    return out;
}

std::filesystem::path temp_file(const std::string& name) {
    return std::filesystem::temp_directory_path() / name;
}

}  // namespace

TEST_CASE("adamw_step") {
    SUBCASE("first step on a scalar moves by lr") {
        Vector w{1.0};
        const Vector g{1.0};
        OptimizerState s = make_optimizer_state({{"w", 1, 1, TensorRole::gamma}}, DecayPolicy{});
        AdamWConfig h;
        h.lr = 0.1;
        h.weight_decay = 0.0;
        const std::vector<std::span<double>> p{w};
        const std::vector<std::span<const double>> gs{g};
        adamw_step(s, p, gs, h);
        // Bias-corrected moments are exactly g and g^2, so the step is lr / (1 + eps).
        CHECK(w[0] == doctest::Approx(1.0 - 0.1 / (1.0 + 1e-8)).epsilon(1e-15));
        CHECK(w[0] == doctest::Approx(0.9).epsilon(1e-8));
        CHECK(s.step == 1);
        CHECK(s.last_lr == 0.1);
    }

    SUBCASE("decay-only step shrinks alpha and beta, leaves gamma") {
        Vector alpha{2.0, -1.0}, beta{0.5, 0.25}, gamma{1.0, 3.0};
        const Vector zero{0.0, 0.0};
        OptimizerState s = make_optimizer_state({{"a", 1, 2, TensorRole::alpha},
                                                 {"b", 1, 2, TensorRole::beta},
                                                 {"g", 1, 2, TensorRole::gamma}},
                                                DecayPolicy{});
        AdamWConfig h;
        h.lr = 0.01;
        h.weight_decay = 0.1;
        const std::vector<std::span<double>> p{alpha, beta, gamma};
        const std::vector<std::span<const double>> gs{zero, zero, zero};
        adamw_step(s, p, gs, h);
        CHECK(alpha == Vector{2.0 * 0.999, -1.0 * 0.999});
        CHECK(beta == Vector{0.5 * 0.999, 0.25 * 0.999});
        CHECK(gamma == Vector{1.0, 3.0});
    }

    SUBCASE("flipping the mask removes decay from alpha and beta") {
        DecayPolicy off;
        off.alpha = false;
        off.beta = false;
        const auto layout = parameter_layout(tiny_config(NormKind::seednorm));
        const auto on_state = make_optimizer_state(layout, DecayPolicy{});
        const auto off_state = make_optimizer_state(layout, off);
        for (std::size_t t = 0; t < layout.size(); ++t) {
            const bool dyn = layout[t].role == TensorRole::alpha || layout[t].role == TensorRole::beta;
            CHECK(on_state.decay[t] == (dyn || layout[t].role == TensorRole::matrix));
            CHECK(off_state.decay[t] == (layout[t].role == TensorRole::matrix));
        }
    }

    SUBCASE("non-finite gradients are rejected before any update") {
        Vector w{1.0, 2.0};
        const Vector g{0.5, NAN};
        OptimizerState s = make_optimizer_state({{"w", 1, 2, TensorRole::matrix}}, DecayPolicy{});
        const std::vector<std::span<double>> p{w};
        const std::vector<std::span<const double>> gs{g};
        CHECK_THROWS_AS(adamw_step(s, p, gs, AdamWConfig{}), std::invalid_argument);
        CHECK(w == Vector{1.0, 2.0});
        CHECK(s.step == 0);
    }

    SUBCASE("shape mismatch") {
        Vector w{1.0};
        const Vector g{1.0, 2.0};
        OptimizerState s = make_optimizer_state({{"w", 1, 1, TensorRole::matrix}}, DecayPolicy{});
        const std::vector<std::span<double>> p{w};
        const std::vector<std::span<const double>> gs{g};
        CHECK_THROWS_AS(adamw_step(s, p, gs, AdamWConfig{}), DimensionError);
    }
}

TEST_CASE("clip_grad_norm") {
    Vector a{3.0, 0.0}, b{4.0};
    const std::vector<std::span<double>> g{a, b};

    SUBCASE("above the threshold the norm becomes the threshold") {
        CHECK(clip_grad_norm(g, 1.0) == 5.0);
        const std::vector<std::span<const double>> cg(g.begin(), g.end());
        CHECK(global_norm(cg) == doctest::Approx(1.0).epsilon(1e-15));
        CHECK(a[0] / b[0] == doctest::Approx(0.75).epsilon(1e-15));
        CHECK(a[1] == 0.0);
    }

    SUBCASE("below the threshold nothing changes") {
        CHECK(clip_grad_norm(g, 10.0) == 5.0);
        CHECK(a == Vector{3.0, 0.0});
        CHECK(b == Vector{4.0});
    }

    SUBCASE("non-positive threshold disables clipping") {
        clip_grad_norm(g, 0.0);
        CHECK(b == Vector{4.0});
    }
}

TEST_CASE("schedule and smoothing") {
    TrainConfig t;
    t.adam.lr = 1e-3;
    t.warmup = 50;
    CHECK(learning_rate_at(t, 0) == doctest::Approx(2e-5));
    CHECK(learning_rate_at(t, 24) == doctest::Approx(5e-4));
    CHECK(learning_rate_at(t, 49) == 1e-3);
    CHECK(learning_rate_at(t, 500) == 1e-3);
    t.warmup = 0;
    CHECK(learning_rate_at(t, 0) == 1e-3);

    LossCurve c;
    c.records = {{1, 2.0, 0, 0}, {2, 1.0, 0, 0}, {3, 1.0, 0, 0}};
    const auto e = ema_series(c, 0.9);
    CHECK(e[0] == 2.0);
    CHECK(e[1] == doctest::Approx(1.9));
    CHECK(e[2] == doctest::Approx(1.81));
    CHECK(ema_series(LossCurve{}, 0.99).empty());
}

TEST_CASE("copy and text tasks") {
    SUBCASE("copy sequences repeat their first half after the separator") {
        Rng rng(0);
        const Batch b = BatchSource(tiny_task()).next(rng);
        for (std::size_t s = 0; s < b.batch; ++s) {
            const auto* in = &b.inputs[s * 8];
            const auto* tg = &b.targets[s * 8];
            const auto* mask = &b.loss_mask[s * 8];
            CHECK(in[4] == kSeparatorToken);
            for (std::size_t i = 0; i < 4; ++i) {
                CHECK(in[i] >= 1);
                CHECK(in[i] < 8);
                CHECK(mask[i] == 0);
                CHECK(mask[4 + i] == 1);
                CHECK(tg[4 + i] == in[i]);
            }
            for (std::size_t i = 0; i + 1 < 8; ++i) CHECK(tg[i] == in[i + 1]);
        }
    }

    SUBCASE("odd lengths are rejected") {
        TaskSpec t = tiny_task();
        t.length = 7;
        CHECK_THROWS_AS(BatchSource{t}, std::invalid_argument);
    }

    SUBCASE("text windows are shifted byte streams") {
        const auto path = temp_file("seednorm_text_task.txt");
        {
            std::ofstream out(path);
            out << "the quick brown fox jumps over the lazy dog";
        }
        TaskSpec t;
        t.kind = TaskKind::text;
        t.text_path = path.string();
        t.batch = 2;
        t.length = 6;
        const BatchSource src(t);
        CHECK(src.vocab() == 256);
        Rng rng(1);
        const Batch b = src.next(rng);
        for (std::size_t i = 0; i + 1 < 6; ++i) CHECK(b.targets[i] == b.inputs[i + 1]);
        for (auto m : b.loss_mask) CHECK(m == 1);
        std::filesystem::remove(path);
        t.text_path = path.string();
        CHECK_THROWS_AS(BatchSource{t}, std::invalid_argument);
    }
}

TEST_CASE("train_run") {
    SUBCASE("zero steps give an empty curve") {
        Rng rng(0);
        CHECK(train_run(tiny_config(NormKind::seednorm), short_run(0), tiny_task(), rng).empty());
    }

    SUBCASE("equal seeds give bitwise-equal curves") {
        Rng a(3), b(3);
        const auto ca = train_run(tiny_config(NormKind::seednorm), short_run(15), tiny_task(), a);
        const auto cb = train_run(tiny_config(NormKind::seednorm), short_run(15), tiny_task(), b);
        CHECK(losses(ca) == losses(cb));
        for (std::size_t i = 0; i < ca.size(); ++i) CHECK(ca.records[i].step == i + 1);
    }

    SUBCASE("lr = 0 with a replayed batch keeps the loss constant") {
        TrainConfig t = short_run(10);
        t.adam.lr = 0.0;
        t.replay_batch = true;
        Rng rng(4);
        const auto c = train_run(tiny_config(NormKind::mh_seednorm), t, tiny_task(), rng);
        for (const auto& r : c.records) CHECK(r.loss == c.records[0].loss);
    }

    SUBCASE("training lowers the loss") {
        Rng rng(5);
        const auto c = train_run(tiny_config(NormKind::seednorm), short_run(60), tiny_task(), rng);
        const auto e = ema_series(c, 0.9);
        CHECK(e.back() < e.front());
    }

    SUBCASE("seednorm with beta frozen at 0 follows the rmsnorm trajectory bitwise") {
        TrainConfig t = short_run(20);
        t.freeze_beta = true;
        t.decay.alpha = false;
        Rng a(6), b(6);
        const auto dyn = train_run(tiny_config(NormKind::seednorm), t, tiny_task(), a);
        const auto rms = train_run(tiny_config(NormKind::rmsnorm), t, tiny_task(), b);
        CHECK(losses(dyn) == losses(rms));
        for (std::size_t i = 0; i < dyn.size(); ++i) {
            CHECK(dyn.records[i].grad_norm == rms.records[i].grad_norm);
        }
    }

    SUBCASE("the decay-mask ablation changes the run") {
        TrainConfig with = short_run(30);
        TrainConfig without = with;
        without.decay.alpha = false;
        without.decay.beta = false;
        Rng a(7), b(7);
        const auto cw = train_run(tiny_config(NormKind::seednorm), with, tiny_task(), a);
        const auto co = train_run(tiny_config(NormKind::seednorm), without, tiny_task(), b);
        CHECK(cw.records[0].loss == co.records[0].loss);
        CHECK(losses(cw) != losses(co));
    }

    SUBCASE("task must fit the model") {
        TaskSpec t = tiny_task();
        t.vocab = 9;
        Rng rng(0);
        CHECK_THROWS_AS(train_run(tiny_config(NormKind::seednorm), short_run(1), t, rng),
                        std::invalid_argument);
        t = tiny_task();
        t.length = 10;
        CHECK_THROWS_AS(train_run(tiny_config(NormKind::seednorm), short_run(1), t, rng),
                        std::invalid_argument);
    }
}

TEST_CASE("non-finite values abort with the offending step and stage") {
    const TrainConfig t = short_run(5);
    Rng rng(8);
    TrainSession s = start_session(tiny_config(NormKind::seednorm), t, rng);
    const BatchSource src(tiny_task());
    train_steps(s, t, src, 3);
    s.model.blocks[1].wq(0, 0) = INFINITY;
    try {
        train_steps(s, t, src, 2);
        FAIL("expected TrainingAborted");
    } catch (const TrainingAborted& e) {
        CHECK(e.step() == 4);
        CHECK(e.stage() == "block 1 q_norm");
        CHECK(e.partial().size() == 3);
        CHECK(std::string(e.what()).find("step 4") != std::string::npos);
    }
}

TEST_CASE("checkpoints") {
    const TrainConfig t = short_run(10);
    const BatchSource src(tiny_task());

    SUBCASE("save and load round-trip exactly, and training resumes identically") {
        Rng a(9), b(9);
        TrainSession full = start_session(tiny_config(NormKind::seednorm), t, a);
        train_steps(full, t, src, 10);

        TrainSession half = start_session(tiny_config(NormKind::seednorm), t, b);
        train_steps(half, t, src, 5);
        const auto path = temp_file("seednorm_checkpoint_test.json");
        save_checkpoint(half, path.string());
        TrainSession loaded = load_checkpoint(path.string());
        std::filesystem::remove(path);

        CHECK(checkpoint_to_json(loaded) == checkpoint_to_json(half));
        train_steps(loaded, t, src, 5);
        CHECK(losses(loaded.curve) == losses(full.curve));
        const auto va = tensor_views(std::as_const(loaded.model));
        const auto vb = tensor_views(std::as_const(full.model));
        for (std::size_t i = 0; i < va.size(); ++i) CHECK(std::ranges::equal(va[i], vb[i]));
    }

    SUBCASE("field order is fixed") {
        Rng rng(0);
        const TrainSession s = start_session(tiny_config(NormKind::dyt), t, rng);
        const auto j = checkpoint_to_json(s);
        std::vector<std::string> keys;
        for (const auto& [k, v] : j.items()) keys.push_back(k);
        CHECK(keys == std::vector<std::string>{"format", "version", "model_config", "optimizer",
                                               "data_rng", "curve", "tensors"});
        CHECK(j["tensors"][0]["name"] == "tok_emb");
    }

    SUBCASE("malformed blobs are rejected") {
        Rng rng(0);
        const TrainSession s = start_session(tiny_config(NormKind::rmsnorm), t, rng);
        auto j = checkpoint_to_json(s);
        j["model_config"]["colour"] = "blue";
        CHECK_THROWS_AS(checkpoint_from_json(j), std::invalid_argument);
        j = checkpoint_to_json(s);
        j["tensors"][3]["data"].erase(0);
        CHECK_THROWS_AS(checkpoint_from_json(j), std::invalid_argument);
        j = checkpoint_to_json(s);
        j["format"] = "other";
        CHECK_THROWS_AS(checkpoint_from_json(j), std::invalid_argument);
        CHECK_THROWS_AS(load_checkpoint("/nonexistent/seednorm.json"), std::invalid_argument);
    }
}
