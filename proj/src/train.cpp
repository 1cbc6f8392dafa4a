#include "seednorm/train.hpp"

#include <algorithm>
#include <chrono>

namespace seednorm {

double learning_rate_at(const TrainConfig& cfg, std::size_t step_index) {
    if (cfg.warmup == 0 || step_index >= cfg.warmup) return cfg.adam.lr;
    return cfg.adam.lr * static_cast<double>(step_index + 1) / static_cast<double>(cfg.warmup);
}

std::vector<double> ema_series(const LossCurve& curve, double coefficient) {
    std::vector<double> out;
    out.reserve(curve.size());
    for (const auto& r : curve.records) {
        out.push_back(out.empty() ? r.loss : coefficient * out.back() + (1.0 - coefficient) * r.loss);
    }
    return out;
}

TrainingAborted::TrainingAborted(std::uint64_t step, std::string stage, LossCurve partial)
    : std::runtime_error("training aborted at step " + std::to_string(step) +
                         ": non-finite values first appeared in " + stage),
      step_(step),
      stage_(std::move(stage)),
      partial_(std::move(partial)) {}

TrainSession start_session(const ModelConfig& cfg, const TrainConfig& train, Rng& rng) {
    Rng init_rng = rng.split();
    TrainSession s{.model = {},
                   .layout = parameter_layout(cfg),
                   .optimizer = {},
                   .data_rng = rng.split(),
                   .curve = {}};
    s.model = build_model(cfg, init_rng);
    s.optimizer = make_optimizer_state(s.layout, train.decay);
    return s;
}

void train_steps(TrainSession& session, const TrainConfig& train, const BatchSource& source,
                 std::size_t steps) {
    const ModelConfig& cfg = session.model.cfg;
    if (source.vocab() > cfg.vocab) {
        throw std::invalid_argument("train: task vocabulary exceeds the model's");
    }
    if (source.spec().length > cfg.context) {
        throw std::invalid_argument("train: task length exceeds the model context");
    }
    const auto start = std::chrono::steady_clock::now();
    const double time_offset = session.curve.empty() ? 0.0 : session.curve.records.back().wall_time;

    Model grads;
    for (std::size_t n = 0; n < steps; ++n) {
        const std::uint64_t index = session.optimizer.step;
        const std::uint64_t step = index + 1;
        Rng replay(session.data_rng.seed());
        const Batch batch = source.next(train.replay_batch ? replay : session.data_rng);

        const LossResult r = loss_and_gradients(session.model, batch, grads);
        if (!r.first_nonfinite.empty()) throw TrainingAborted(step, r.first_nonfinite, session.curve);

        auto g = tensor_views(grads);
        if (train.freeze_beta) {
            for (std::size_t t = 0; t < g.size(); ++t) {
                if (session.layout[t].role == TensorRole::beta) std::ranges::fill(g[t], 0.0);
            }
        }
        const double norm = clip_grad_norm(g, train.grad_clip);

        AdamWConfig hyper = train.adam;
        hyper.lr = learning_rate_at(train, index);
        const std::vector<std::span<const double>> cg(g.begin(), g.end());
        adamw_step(session.optimizer, tensor_views(session.model), cg, hyper);

        const std::chrono::duration<double> elapsed = std::chrono::steady_clock::now() - start;
        session.curve.records.push_back({step, r.loss, norm, time_offset + elapsed.count()});
    }
}

LossCurve train_run(const ModelConfig& cfg, const TrainConfig& train, const TaskSpec& task,
                    Rng& rng) {
    const BatchSource source(task);
    TrainSession s = start_session(cfg, train, rng);
    train_steps(s, train, source, train.steps);
    return std::move(s.curve);
}

}  // namespace seednorm
