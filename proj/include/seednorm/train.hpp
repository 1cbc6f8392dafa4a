#pragma once

// Training loop: forward, manual backward, global-norm clipping, AdamW with a
// linear warmup. Single-threaded; equal seeds give bitwise-equal curves.

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "seednorm/model.hpp"
#include "seednorm/optimizer.hpp"
#include "seednorm/task.hpp"

namespace seednorm {

struct TrainConfig {
    std::size_t steps = 1000;
    AdamWConfig adam;
    /// Linear ramp from lr / warmup to lr over this many steps, then constant.
    std::size_t warmup = 50;
    /// Global-norm threshold; <= 0 disables clipping.
    double grad_clip = 1.0;
    /// EMA coefficient used when reporting smoothed losses.
    double ema = 0.99;
    DecayPolicy decay;
    /// Zero every beta gradient, keeping beta at its initial value.
    bool freeze_beta = false;
    /// Feed the same batch at every step.
    bool replay_batch = false;
};

/// Learning rate for the 0-based step index.
double learning_rate_at(const TrainConfig& cfg, std::size_t step_index);

struct LossRecord {
    std::uint64_t step = 0;
    double loss = 0.0;
    /// Global gradient norm before clipping.
    double grad_norm = 0.0;
    /// Seconds since the session started.
    double wall_time = 0.0;
};

struct LossCurve {
    std::vector<LossRecord> records;

    bool empty() const noexcept { return records.empty(); }
    std::size_t size() const noexcept { return records.size(); }
};

/// ema_0 = loss_0, ema_t = c * ema_{t-1} + (1 - c) * loss_t.
std::vector<double> ema_series(const LossCurve& curve, double coefficient);

/// Raised when the loss or any activation goes non-finite. `stage` names the
/// first offending stage, `partial` holds the records before the failure.
class TrainingAborted : public std::runtime_error {
public:
    TrainingAborted(std::uint64_t step, std::string stage, LossCurve partial);

    std::uint64_t step() const noexcept { return step_; }
    const std::string& stage() const noexcept { return stage_; }
    const LossCurve& partial() const noexcept { return partial_; }

private:
    std::uint64_t step_;
    std::string stage_;
    LossCurve partial_;
};

/// Everything needed to continue a run: parameters, moments, data stream and
/// the curve so far.
struct TrainSession {
    Model model;
    std::vector<TensorInfo> layout;
    OptimizerState optimizer;
    Rng data_rng;
    LossCurve curve;
};

/// Splits `rng` into an initialization stream and a data stream (in that
/// order) and builds the model.
TrainSession start_session(const ModelConfig& cfg, const TrainConfig& train, Rng& rng);

/// Runs `steps` more updates. Throws TrainingAborted on non-finite values and
/// std::invalid_argument when the task does not fit the model.
void train_steps(TrainSession& session, const TrainConfig& train, const BatchSource& source,
                 std::size_t steps);

/// start_session + train_steps(train.steps).
LossCurve train_run(const ModelConfig& cfg, const TrainConfig& train, const TaskSpec& task,
                    Rng& rng);

}  // namespace seednorm
