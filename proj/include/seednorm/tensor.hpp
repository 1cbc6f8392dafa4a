#pragma once

// Minimal dense 2-D kernel layer: row-major matrices, per-channel vectors,
// reductions and a counter-based random generator. Everything is double.

#include <cstddef>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace seednorm {

/// Thrown whenever operand shapes disagree.
class DimensionError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

using Vector = std::vector<double>;

/// Row-major N x D block, one row per token.
class Matrix {
public:
    Matrix() = default;
    Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
        : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
    Matrix(std::size_t rows, std::size_t cols, std::vector<double> data);

    static Matrix from_rows(const std::vector<std::vector<double>>& rows);

    std::size_t rows() const noexcept { return rows_; }
    std::size_t cols() const noexcept { return cols_; }
    std::size_t size() const noexcept { return data_.size(); }
    bool empty() const noexcept { return data_.empty(); }

    double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
    double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

    std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
    std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

    std::vector<double>& data() noexcept { return data_; }
    const std::vector<double>& data() const noexcept { return data_; }

    /// Same storage viewed with a different row length; rows*cols must match.
    Matrix reshaped(std::size_t rows, std::size_t cols) const;

    bool same_shape(const Matrix& other) const noexcept {
        return rows_ == other.rows_ && cols_ == other.cols_;
    }
    bool all_finite() const noexcept;

    friend bool operator==(const Matrix&, const Matrix&) = default;

private:
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<double> data_;
};

double dot(std::span<const double> a, std::span<const double> b);

/// sqrt(mean(x^2) + eps); eps sits under the radical.
double row_rms(std::span<const double> x_row, double eps);

Matrix scaled(const Matrix& x, double k);

inline constexpr double kDefaultEps = 1e-6;

/// SplitMix64 run in counter mode: draw i of a stream with seed s is
/// mix64(s + (i + 1) * 0x9E3779B97F4A7C15). The integer stream is identical on
/// every platform; any draw can be addressed directly through at().
class Rng {
public:
    explicit Rng(std::uint64_t seed = 0) noexcept : seed_(seed) {}
    /// Resumes a stream at a given draw index.
    Rng(std::uint64_t seed, std::uint64_t counter) noexcept : seed_(seed), counter_(counter) {}

    static std::uint64_t mix64(std::uint64_t z) noexcept;
    static std::uint64_t at(std::uint64_t seed, std::uint64_t counter) noexcept;
    /// Uniform double in [0, 1) with 53 random bits.
    static double uniform_at(std::uint64_t seed, std::uint64_t counter) noexcept;

    std::uint64_t seed() const noexcept { return seed_; }
    std::uint64_t counter() const noexcept { return counter_; }

    std::uint64_t next_u64() noexcept { return at(seed_, counter_++); }
    double uniform() noexcept;
    double uniform(double lo, double hi) noexcept { return lo + (hi - lo) * uniform(); }
    /// Box-Muller; consumes two integer draws per normal.
    double normal(double mean = 0.0, double stddev = 1.0) noexcept;
    /// Independent child stream keyed off this one.
    Rng split() noexcept { return Rng(next_u64()); }

    Vector normal_vector(std::size_t n, double mean = 0.0, double stddev = 1.0);
    Matrix normal_matrix(std::size_t rows, std::size_t cols, double mean = 0.0,
                         double stddev = 1.0);

private:
    std::uint64_t seed_;
    std::uint64_t counter_ = 0;
};

}  // namespace seednorm
