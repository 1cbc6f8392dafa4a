#pragma once

// JSON checkpoints. Top-level fields, in order:
//
//   format        "seednorm-checkpoint"
//   version       1
//   model_config  every ModelConfig field
//   optimizer     {"step", "last_lr"}
//   data_rng      {"seed", "counter"} as decimal strings (64-bit exact)
//   curve         [[step, loss, grad_norm, wall_time], ...]
//   tensors       one object per parameter_layout entry, in layout order:
//                 {"name", "role", "rows", "cols", "decay", "data", "m", "v"}
//
// Doubles are written with round-trip precision, so save/load is lossless.

#include <string>

#include "json.hpp"
#include "seednorm/train.hpp"

namespace seednorm {

nlohmann::ordered_json model_config_to_json(const ModelConfig& cfg);
/// Rejects unknown and missing keys.
ModelConfig model_config_from_json(const nlohmann::ordered_json& j);

nlohmann::ordered_json checkpoint_to_json(const TrainSession& session);
/// Throws std::invalid_argument on a malformed or inconsistent blob.
TrainSession checkpoint_from_json(const nlohmann::ordered_json& j);

void save_checkpoint(const TrainSession& session, const std::string& path);
TrainSession load_checkpoint(const std::string& path);

}  // namespace seednorm
