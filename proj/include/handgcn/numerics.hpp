#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <span>
#include <vector>

namespace handgcn {

/// Dense row-major matrix of doubles. Vectors are 1×n matrices.
class Matrix {
public:
    Matrix() = default;
    Matrix(std::size_t rows, std::size_t cols, double fill = 0.0);
    Matrix(std::size_t rows, std::size_t cols, std::vector<double> data);
    Matrix(std::initializer_list<std::initializer_list<double>> rows);

    static Matrix identity(std::size_t n);

    std::size_t rows() const { return rows_; }
    std::size_t cols() const { return cols_; }
    std::size_t size() const { return data_.size(); }
    bool empty() const { return data_.empty(); }
    bool same_shape(const Matrix& other) const { return rows_ == other.rows_ && cols_ == other.cols_; }

    double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
    double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }
    double& operator[](std::size_t i) { return data_[i]; }
    double operator[](std::size_t i) const { return data_[i]; }

    std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
    std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }
    std::span<double> data() { return data_; }
    std::span<const double> data() const { return data_; }

    void fill(double value);
    /// Same storage, new shape; rows*cols must be preserved.
    Matrix reshaped(std::size_t rows, std::size_t cols) const&;
    Matrix reshaped(std::size_t rows, std::size_t cols) &&;

    Matrix& operator+=(const Matrix& other);
    Matrix& operator-=(const Matrix& other);
    Matrix& operator*=(double scale);

    bool all_finite() const;

    /// Exact element-wise comparison (bit-level for finite values).
    friend bool operator==(const Matrix&, const Matrix&) = default;

private:
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<double> data_;
};

Matrix operator+(Matrix a, const Matrix& b);
Matrix operator-(Matrix a, const Matrix& b);
Matrix operator*(Matrix a, double s);

/// C = A·B with C[i][j] accumulated over t = 0..k-1 in increasing order.
Matrix matmul(const Matrix& a, const Matrix& b);
/// Aᵀ·B without materializing the transpose.
Matrix matmul_tn(const Matrix& a, const Matrix& b);
/// A·Bᵀ without materializing the transpose.
Matrix matmul_nt(const Matrix& a, const Matrix& b);
Matrix transpose(const Matrix& a);
Matrix hadamard(const Matrix& a, const Matrix& b);
/// Adds the 1×cols row vector `bias` to every row of `m`.
void add_row_vector(Matrix& m, const Matrix& bias);
/// 1×cols sums over rows.
Matrix column_sums(const Matrix& m);
double frobenius_norm(const Matrix& m);

Matrix leaky_relu(const Matrix& x, double alpha);
/// Derivative of leaky_relu: 1 where x >= 0 (including exactly 0), alpha elsewhere.
Matrix leaky_relu_grad(const Matrix& x, double alpha);

/// Numerically stable log-softmax of a single vector.
std::vector<double> log_softmax(std::span<const double> v);
/// Row-wise log_softmax.
Matrix log_softmax_rows(const Matrix& logits);

/// xoshiro256** seeded through splitmix64.
///
/// The generator state is four 64-bit words filled by four successive splitmix64
/// outputs starting from `seed`. next_u64 is the reference xoshiro256** step
/// (rotl(s1 * 5, 7) * 9, then the shift/xor/rotl(45) state update).
/// Uniform doubles take the top 53 bits: (x >> 11) * 2^-53, so a given seed
/// yields the same integer and uniform sequences on every platform.
class RngStream {
public:
    explicit RngStream(std::uint64_t seed);

    std::uint64_t seed() const { return seed_; }
    std::uint64_t next_u64();
    /// Uniform in [0, 1).
    double uniform();
    double uniform(double lo, double hi);
    /// Unbiased integer in [0, n); n > 0.
    std::uint64_t below(std::uint64_t n);
    bool bernoulli(double p) { return uniform() < p; }
    /// Standard normal via Box-Muller (one variate per call; uses libm log/cos).
    double normal();

    template <typename T>
    void shuffle(std::vector<T>& items) {
        for (std::size_t i = items.size(); i > 1; --i) {
            const std::size_t j = static_cast<std::size_t>(below(i));
            std::swap(items[i - 1], items[j]);
        }
    }

private:
    std::uint64_t seed_;
    std::uint64_t state_[4];
};

/// Mixes a base seed with stream tags into an independent seed (splitmix64 finalizer chain).
std::uint64_t derive_seed(std::uint64_t base, std::uint64_t tag, std::uint64_t index = 0);

/// Glorot uniform: entries i.i.d. in [-sqrt(6/(fan_in+fan_out)), +sqrt(6/(fan_in+fan_out))].
Matrix xavier_uniform(std::size_t fan_in, std::size_t fan_out, RngStream& rng);

/// Central differences (f(θ+εe_ij) - f(θ-εe_ij)) / 2ε for every entry of θ.
Matrix finite_diff_grad(const std::function<double(const Matrix&)>& f, const Matrix& theta,
                        double eps);

/// max over entries of |a-b| / max(|a|, |b|, floor).
double max_relative_error(const Matrix& a, const Matrix& b, double floor = 1e-8);

} // namespace handgcn
