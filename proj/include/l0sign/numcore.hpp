#pragma once

// Dense numeric core: row-major matrices, plain vectors, the forward
// primitives the model is built from, and their backward rules.

#include <cassert>
#include <cmath>
#include <cstddef>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace l0sign {

class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

using Vector = std::vector<double>;

class Matrix {
public:
    Matrix() = default;
    Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
        : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
    Matrix(std::size_t rows, std::size_t cols, std::vector<double> values)
        : rows_(rows), cols_(cols), data_(std::move(values)) {
        if (data_.size() != rows_ * cols_) {
            throw Error("Matrix: " + std::to_string(data_.size()) + " values for shape " +
                        shape_string());
        }
    }

    static Matrix identity(std::size_t n) {
        Matrix m(n, n);
        for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
        return m;
    }

    std::size_t rows() const noexcept { return rows_; }
    std::size_t cols() const noexcept { return cols_; }
    std::size_t size() const noexcept { return data_.size(); }

    double& operator()(std::size_t r, std::size_t c) noexcept {
        assert(r < rows_ && c < cols_);
        return data_[r * cols_ + c];
    }
    double operator()(std::size_t r, std::size_t c) const noexcept {
        assert(r < rows_ && c < cols_);
        return data_[r * cols_ + c];
    }

    std::span<double> row(std::size_t r) noexcept { return {data_.data() + r * cols_, cols_}; }
    std::span<const double> row(std::size_t r) const noexcept {
        return {data_.data() + r * cols_, cols_};
    }

    std::span<double> values() noexcept { return data_; }
    std::span<const double> values() const noexcept { return data_; }

    void fill(double v) noexcept { std::fill(data_.begin(), data_.end(), v); }

    std::string shape_string() const {
        return "(" + std::to_string(rows_) + "x" + std::to_string(cols_) + ")";
    }

    bool operator==(const Matrix&) const = default;

private:
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<double> data_;
};

namespace detail {

inline void check_finite([[maybe_unused]] std::span<const double> v,
                         [[maybe_unused]] const char* where) {
#ifndef NDEBUG
    for (double x : v) {
        if (!std::isfinite(x)) throw Error(std::string(where) + ": non-finite value");
    }
#endif
}

inline void require_same_length(std::size_t a, std::size_t b, const char* op) {
    if (a != b) {
        throw Error(std::string(op) + ": length mismatch " + std::to_string(a) + " vs " +
                    std::to_string(b));
    }
}

} // namespace detail

// ---------------------------------------------------------------------------
// Forward primitives

/// Returns W x + b.
inline Vector linear(const Matrix& W, std::span<const double> x, std::span<const double> b) {
    if (W.cols() != x.size() || W.rows() != b.size()) {
        throw Error("linear: W " + W.shape_string() + ", x (" + std::to_string(x.size()) +
                    "), b (" + std::to_string(b.size()) + ")");
    }
    Vector out(b.begin(), b.end());
    for (std::size_t r = 0; r < W.rows(); ++r) {
        const auto w = W.row(r);
        double acc = 0.0;
        for (std::size_t c = 0; c < x.size(); ++c) acc += w[c] * x[c];
        out[r] += acc;
    }
    detail::check_finite(out, "linear");
    return out;
}

inline Vector elementwise_product(std::span<const double> a, std::span<const double> b) {
    detail::require_same_length(a.size(), b.size(), "elementwise_product");
    Vector out(a.size());
    for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] * b[i];
    return out;
}

inline Vector relu(std::span<const double> x) {
    Vector out(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] > 0.0 ? x[i] : 0.0;
    return out;
}

inline double sigmoid(double x) noexcept {
    if (x > 30.0) return 1.0 / (1.0 + std::exp(-x));
    if (x < -30.0) {
        const double e = std::exp(x);
        return e / (1.0 + e);
    }
    return 1.0 / (1.0 + std::exp(-x));
}

inline Vector sigmoid(std::span<const double> x) {
    Vector out(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) out[i] = sigmoid(x[i]);
    return out;
}

/// Element-wise mean of a non-empty set of equal-length vectors. Uses a
/// running mean, so the mean of n copies of v is exactly v.
inline Vector reduce_mean(std::span<const Vector> vs) {
    if (vs.empty()) throw Error("reduce_mean: empty set");
    Vector out(vs.front().begin(), vs.front().end());
    for (std::size_t n = 1; n < vs.size(); ++n) {
        detail::require_same_length(out.size(), vs[n].size(), "reduce_mean");
        for (std::size_t i = 0; i < out.size(); ++i) out[i] += (vs[n][i] - out[i]) / double(n + 1);
    }
    return out;
}

inline double dot(std::span<const double> a, std::span<const double> b) {
    detail::require_same_length(a.size(), b.size(), "dot");
    double acc = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) acc += a[i] * b[i];
    return acc;
}

// ---------------------------------------------------------------------------
// Backward rules. Each takes the values recorded by its forward call and
// the upstream gradient, and accumulates into the supplied gradient buffers.

/// Gradient of linear(W, x, b): dW += g xᵀ, db += g, returns dx = Wᵀ g.
inline Vector linear_backward(const Matrix& W, std::span<const double> x,
                              std::span<const double> upstream, Matrix& dW, Vector& db) {
    if (upstream.size() != W.rows() || x.size() != W.cols() || dW.rows() != W.rows() ||
        dW.cols() != W.cols() || db.size() != W.rows()) {
        throw Error("linear_backward: shape mismatch for W " + W.shape_string());
    }
    Vector dx(W.cols(), 0.0);
    for (std::size_t r = 0; r < W.rows(); ++r) {
        const double g = upstream[r];
        if (g == 0.0) continue;
        db[r] += g;
        auto dw = dW.row(r);
        const auto w = W.row(r);
        for (std::size_t c = 0; c < W.cols(); ++c) {
            dw[c] += g * x[c];
            dx[c] += g * w[c];
        }
    }
    return dx;
}

/// d/da (a⊙b) applied to upstream: g ⊙ b.
inline Vector elementwise_product_backward(std::span<const double> other,
                                           std::span<const double> upstream) {
    return elementwise_product(upstream, other);
}

/// ReLU backward; the subgradient at exactly 0 is 0.
inline Vector relu_backward(std::span<const double> pre_activation,
                            std::span<const double> upstream) {
    detail::require_same_length(pre_activation.size(), upstream.size(), "relu_backward");
    Vector out(upstream.size());
    for (std::size_t i = 0; i < upstream.size(); ++i) {
        out[i] = pre_activation[i] > 0.0 ? upstream[i] : 0.0;
    }
    return out;
}

inline double sigmoid_backward(double output, double upstream) noexcept {
    return upstream * output * (1.0 - output);
}

/// Each input of reduce_mean over n vectors receives upstream / n.
inline Vector reduce_mean_backward(std::size_t n, std::span<const double> upstream) {
    if (n == 0) throw Error("reduce_mean_backward: empty set");
    Vector out(upstream.begin(), upstream.end());
    for (double& x : out) x /= static_cast<double>(n);
    return out;
}

// ---------------------------------------------------------------------------
// ParamStore: named tensors with same-shaped gradient accumulators.

struct NamedTensor {
    std::string name;
    Matrix value;
};

class ParamStore {
public:
    void add(std::string name, Matrix value) {
        for (const auto& t : params_) {
            if (t.name == name) throw Error("ParamStore: duplicate parameter '" + name + "'");
        }
        grads_.push_back({name, Matrix(value.rows(), value.cols())});
        params_.push_back({std::move(name), std::move(value)});
    }

    std::size_t count() const noexcept { return params_.size(); }

    std::size_t scalar_count() const noexcept {
        std::size_t n = 0;
        for (const auto& t : params_) n += t.value.size();
        return n;
    }

    const NamedTensor& param(std::size_t i) const { return params_.at(i); }
    Matrix& value(std::size_t i) { return params_.at(i).value; }
    const Matrix& value(std::size_t i) const { return params_.at(i).value; }
    Matrix& grad(std::size_t i) { return grads_.at(i).value; }
    const Matrix& grad(std::size_t i) const { return grads_.at(i).value; }

    std::size_t index_of(std::string_view name) const {
        for (std::size_t i = 0; i < params_.size(); ++i) {
            if (params_[i].name == name) return i;
        }
        throw Error("ParamStore: unknown parameter '" + std::string(name) + "'");
    }

    void zero_grad() noexcept {
        for (auto& g : grads_) g.value.fill(0.0);
    }

    /// Adds another store's gradients (same layout) into this one.
    void accumulate_grad(const ParamStore& other, double scale = 1.0) {
        if (other.count() != count()) throw Error("ParamStore: layout mismatch");
        for (std::size_t i = 0; i < grads_.size(); ++i) {
            auto dst = grads_[i].value.values();
            auto src = other.grads_[i].value.values();
            detail::require_same_length(dst.size(), src.size(), "accumulate_grad");
            for (std::size_t k = 0; k < dst.size(); ++k) dst[k] += scale * src[k];
        }
    }

    bool operator==(const ParamStore& o) const {
        if (count() != o.count()) return false;
        for (std::size_t i = 0; i < count(); ++i) {
            if (params_[i].name != o.params_[i].name || params_[i].value != o.params_[i].value) {
                return false;
            }
        }
        return true;
    }

private:
    std::vector<NamedTensor> params_;
    std::vector<NamedTensor> grads_;
};

} // namespace l0sign
