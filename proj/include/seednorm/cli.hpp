#pragma once

// Command-line front end: gradcheck, probe, train, compare, cost.
//
// Exit codes: 0 every check passed, 1 a check failed or training aborted,
// 2 usage or configuration error.

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "seednorm/train.hpp"

namespace seednorm {

inline constexpr int kExitPass = 0;
inline constexpr int kExitCheckFailed = 1;
inline constexpr int kExitUsage = 2;

enum class OutputFormat { json, csv };

struct GradcheckArgs {
    /// Norm names; mh_seednorm expands to one variant per entry of heads.
    std::vector<std::string> variants{"rmsnorm", "dyt", "seednorm", "mh_seednorm"};
    std::vector<std::size_t> heads{2, 4};
    std::vector<std::size_t> dims{2, 4, 8, 16, 64};
    std::size_t trials = 100;
    double tolerance = 1e-5;
    double step = 1e-5;
};

struct ProbeArgs {
    /// scale_insensitivity, dyt_rmsnorm_ode, dot_variance, cost.
    std::vector<std::string> names;
    std::vector<std::size_t> dims{64};
    /// Norm heads (scale_insensitivity) or dot-product split (dot_variance).
    std::vector<std::size_t> heads{1};
    std::size_t samples = 100'000;
    double sigma = 1.0;
    std::string distribution = "normal";
    double c = 1.0;
    std::size_t grid_points = 101;
    double grid_range = 10.0;
    std::vector<double> k_values{0.001, 1000.0};
    std::size_t trials = 32;
    bool beta_zero = false;
    std::size_t layers = 1;
    std::size_t attn_heads = 1;
};

struct TrainArgs {
    ModelConfig model;
    TaskSpec task;
    TrainConfig train;
    /// Norm variant of a train run; compare uses variant_a and variant_b.
    std::string variant = "seednorm";
    std::string variant_a;
    std::string variant_b;
    /// Remove weight decay from alpha and beta.
    bool no_dynamic_decay = false;
    /// Include wall-clock seconds (makes output non-deterministic).
    bool wall_time = false;
    std::string save_checkpoint;
    std::string resume;
};

struct CostArgs {
    std::size_t layers = 16;
    std::size_t hidden = 2048;
    std::size_t heads = 16;
    /// Also build both models and compare parameter counts.
    bool enumerate = false;
};

struct RunConfig {
    std::string command;
    std::uint64_t seed = 0;
    std::string output;
    OutputFormat format = OutputFormat::json;
    GradcheckArgs gradcheck;
    ProbeArgs probe;
    TrainArgs train;
    CostArgs cost;
};

/// Executes an already-parsed configuration, writing the report to `out`
/// (or to cfg.output when set) and diagnostics to `err`.
int run_command(const RunConfig& cfg, std::ostream& out, std::ostream& err);

/// Parses argv (flags > config file > SEEDNORM_SEED > defaults) and runs.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace seednorm
