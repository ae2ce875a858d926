#pragma once

#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "flare/errors.hpp"

namespace flare {

using Vec = std::vector<double>;

// Dense row-major matrix of 64-bit floats. Vectors are stored as n x 1.
class Matrix {
public:
    Matrix() = default;
    Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
        : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

    static Matrix zeros_like(const Matrix& other) { return Matrix(other.rows_, other.cols_); }

    std::size_t rows() const { return rows_; }
    std::size_t cols() const { return cols_; }
    std::size_t size() const { return data_.size(); }

    double& operator()(std::size_t i, std::size_t j) { return data_[i * cols_ + j]; }
    double operator()(std::size_t i, std::size_t j) const { return data_[i * cols_ + j]; }

    Vec& data() { return data_; }
    const Vec& data() const { return data_; }

    bool same_shape(const Matrix& other) const {
        return rows_ == other.rows_ && cols_ == other.cols_;
    }

    void fill(double v) { data_.assign(data_.size(), v); }

private:
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    Vec data_;
};

inline bool all_finite(const Vec& v) {
    for (double x : v)
        if (!std::isfinite(x)) return false;
    return true;
}

inline void ensure_finite(const Vec& v, const std::string& who) {
    if (!all_finite(v)) throw ShapeError(who + ": non-finite value");
}

// y = W x
inline Vec matvec(const Matrix& w, const Vec& x, const char* who) {
    if (x.size() != w.cols())
        throw ShapeError(std::string(who) + ": expected input of dim " +
                         std::to_string(w.cols()) + ", got " + std::to_string(x.size()));
    Vec y(w.rows(), 0.0);
    for (std::size_t i = 0; i < w.rows(); ++i) {
        double acc = 0.0;
        for (std::size_t j = 0; j < w.cols(); ++j) acc += w(i, j) * x[j];
        y[i] = acc;
    }
    return y;
}

// y = W^T x
inline Vec matvec_transposed(const Matrix& w, const Vec& x, const char* who) {
    if (x.size() != w.rows())
        throw ShapeError(std::string(who) + ": expected input of dim " +
                         std::to_string(w.rows()) + ", got " + std::to_string(x.size()));
    Vec y(w.cols(), 0.0);
    for (std::size_t i = 0; i < w.rows(); ++i) {
        const double xi = x[i];
        for (std::size_t j = 0; j < w.cols(); ++j) y[j] += w(i, j) * xi;
    }
    return y;
}

// acc += u v^T
inline void add_outer(Matrix& acc, const Vec& u, const Vec& v) {
    if (acc.rows() != u.size() || acc.cols() != v.size())
        throw ShapeError("add_outer: accumulator shape mismatch");
    for (std::size_t i = 0; i < u.size(); ++i) {
        const double ui = u[i];
        for (std::size_t j = 0; j < v.size(); ++j) acc(i, j) += ui * v[j];
    }
}

inline void axpy(Vec& y, double a, const Vec& x) {
    if (y.size() != x.size()) throw ShapeError("axpy: dim mismatch");
    for (std::size_t i = 0; i < x.size(); ++i) y[i] += a * x[i];
}

inline Vec concat(const Vec& a, const Vec& b) {
    Vec out;
    out.reserve(a.size() + b.size());
    out.insert(out.end(), a.begin(), a.end());
    out.insert(out.end(), b.begin(), b.end());
    return out;
}

}  // namespace flare
