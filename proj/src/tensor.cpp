#include "seednorm/tensor.hpp"

#include <cmath>
#include <numbers>

namespace seednorm {

Matrix::Matrix(std::size_t rows, std::size_t cols, std::vector<double> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
    if (data_.size() != rows_ * cols_) {
        throw DimensionError("matrix data length " + std::to_string(data_.size()) +
                             " does not match " + std::to_string(rows_) + "x" +
                             std::to_string(cols_));
    }
}

Matrix Matrix::from_rows(const std::vector<std::vector<double>>& rows) {
    if (rows.empty()) return {};
    const std::size_t cols = rows.front().size();
    std::vector<double> data;
    data.reserve(rows.size() * cols);
    for (const auto& r : rows) {
        if (r.size() != cols) throw DimensionError("ragged rows in Matrix::from_rows");
        data.insert(data.end(), r.begin(), r.end());
    }
    return Matrix(rows.size(), cols, std::move(data));
}

Matrix Matrix::reshaped(std::size_t rows, std::size_t cols) const {
    if (rows * cols != data_.size()) throw DimensionError("reshape changes element count");
    return Matrix(rows, cols, data_);
}

bool Matrix::all_finite() const noexcept {
    for (double v : data_) {
        if (!std::isfinite(v)) return false;
    }
    return true;
}

double dot(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size()) {
        throw DimensionError("dot: length " + std::to_string(a.size()) + " vs " +
                             std::to_string(b.size()));
    }
    double acc = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) acc += a[i] * b[i];
    return acc;
}

double row_rms(std::span<const double> x_row, double eps) {
    if (x_row.empty()) throw DimensionError("row_rms: empty row");
    if (eps < 0.0) throw std::invalid_argument("row_rms: eps must be non-negative");
    double sq = 0.0;
    for (double v : x_row) sq += v * v;
    return std::sqrt(sq / static_cast<double>(x_row.size()) + eps);
}

Matrix scaled(const Matrix& x, double k) {
    Matrix out = x;
    for (double& v : out.data()) v *= k;
    return out;
}

std::uint64_t Rng::mix64(std::uint64_t z) noexcept {
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

std::uint64_t Rng::at(std::uint64_t seed, std::uint64_t counter) noexcept {
    return mix64(seed + (counter + 1) * 0x9E3779B97F4A7C15ULL);
}

double Rng::uniform_at(std::uint64_t seed, std::uint64_t counter) noexcept {
    return static_cast<double>(at(seed, counter) >> 11) * 0x1.0p-53;
}

double Rng::uniform() noexcept {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

double Rng::normal(double mean, double stddev) noexcept {
    const double u1 = 1.0 - uniform();  // (0, 1]
    const double u2 = uniform();
    const double radius = std::sqrt(-2.0 * std::log(u1));
    return mean + stddev * radius * std::cos(2.0 * std::numbers::pi * u2);
}

Vector Rng::normal_vector(std::size_t n, double mean, double stddev) {
    Vector v(n);
    for (double& e : v) e = normal(mean, stddev);
    return v;
}

Matrix Rng::normal_matrix(std::size_t rows, std::size_t cols, double mean, double stddev) {
    Matrix m(rows, cols);
    for (double& e : m.data()) e = normal(mean, stddev);
    return m;
}

}  // namespace seednorm
