#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <numeric>
#include <string>
#include <vector>

#include "stsk/errors.hpp"
#include "stsk/rng.hpp"

namespace stsk {

// Dense row-major tensor of doubles. Carrier for every feature map, token
// sequence and parameter in the library. Rank is dynamic; most call sites use
// rank 1..3.
class Tensor {
public:
    Tensor() = default;

    explicit Tensor(std::vector<std::size_t> shape, double fill = 0.0)
        : shape_(std::move(shape)), data_(count(shape_), fill) {}

    static Tensor row(std::initializer_list<double> vals) {
        Tensor t({1, vals.size()});
        std::copy(vals.begin(), vals.end(), t.data_.begin());
        return t;
    }

    static Tensor vec(std::initializer_list<double> vals) {
        Tensor t({vals.size()});
        std::copy(vals.begin(), vals.end(), t.data_.begin());
        return t;
    }

    const std::vector<std::size_t>& shape() const { return shape_; }
    std::size_t rank() const { return shape_.size(); }
    std::size_t numel() const { return data_.size(); }
    std::size_t dim(std::size_t i) const { return shape_.at(i); }

    // rank-2 helpers
    std::size_t rows() const { return shape_.at(0); }
    std::size_t cols() const { return shape_.at(1); }

    double* data() { return data_.data(); }
    const double* data() const { return data_.data(); }
    std::vector<double>& raw() { return data_; }
    const std::vector<double>& raw() const { return data_; }

    double& operator[](std::size_t i) { return data_[i]; }
    double operator[](std::size_t i) const { return data_[i]; }

    double& operator()(std::size_t i, std::size_t j) { return data_[i * shape_[1] + j]; }
    double operator()(std::size_t i, std::size_t j) const { return data_[i * shape_[1] + j]; }

    double& operator()(std::size_t i, std::size_t j, std::size_t k) {
        return data_[(i * shape_[1] + j) * shape_[2] + k];
    }
    double operator()(std::size_t i, std::size_t j, std::size_t k) const {
        return data_[(i * shape_[1] + j) * shape_[2] + k];
    }

    void reshape(std::vector<std::size_t> shape) {
        if (count(shape) != data_.size()) throw ShapeError("reshape changes element count");
        shape_ = std::move(shape);
    }

    bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

    bool all_finite() const {
        for (double v : data_)
            if (!std::isfinite(v)) return false;
        return true;
    }

    void fill(double v) { std::fill(data_.begin(), data_.end(), v); }

    static std::size_t count(const std::vector<std::size_t>& s) {
        std::size_t n = 1;
        for (auto d : s) n *= d;
        return n;
    }

private:
    std::vector<std::size_t> shape_;
    std::vector<double> data_;
};

inline std::string shape_str(const Tensor& t) {
    std::string s = "[";
    for (std::size_t i = 0; i < t.rank(); ++i)
        s += (i ? "x" : "") + std::to_string(t.shape()[i]);
    return s + "]";
}

// C = A(m,k) * B(k,n)
inline Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.rank() != 2 || b.rank() != 2 || a.cols() != b.rows())
        throw ShapeError("matmul " + shape_str(a) + " * " + shape_str(b));
    const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
    Tensor c({m, n});
    for (std::size_t i = 0; i < m; ++i) {
        const double* ai = a.data() + i * k;
        double* ci = c.data() + i * n;
        for (std::size_t p = 0; p < k; ++p) {
            const double av = ai[p];
            if (av == 0.0) continue;
            const double* bp = b.data() + p * n;
            for (std::size_t j = 0; j < n; ++j) ci[j] += av * bp[j];
        }
    }
    return c;
}

inline Tensor transpose(const Tensor& a) {
    if (a.rank() != 2) throw ShapeError("transpose needs rank 2");
    Tensor t({a.cols(), a.rows()});
    for (std::size_t i = 0; i < a.rows(); ++i)
        for (std::size_t j = 0; j < a.cols(); ++j) t(j, i) = a(i, j);
    return t;
}

inline Tensor identity(std::size_t n) {
    Tensor t({n, n});
    for (std::size_t i = 0; i < n; ++i) t(i, i) = 1.0;
    return t;
}

inline Tensor operator+(const Tensor& a, const Tensor& b) {
    if (!a.same_shape(b)) throw ShapeError("add " + shape_str(a) + " + " + shape_str(b));
    Tensor c = a;
    for (std::size_t i = 0; i < c.numel(); ++i) c[i] += b[i];
    return c;
}

inline Tensor operator-(const Tensor& a, const Tensor& b) {
    if (!a.same_shape(b)) throw ShapeError("sub " + shape_str(a) + " - " + shape_str(b));
    Tensor c = a;
    for (std::size_t i = 0; i < c.numel(); ++i) c[i] -= b[i];
    return c;
}

inline Tensor operator*(double s, const Tensor& a) {
    Tensor c = a;
    for (std::size_t i = 0; i < c.numel(); ++i) c[i] *= s;
    return c;
}

inline double frob_norm(const Tensor& a) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.numel(); ++i) s += a[i] * a[i];
    return std::sqrt(s);
}

inline double max_abs_diff(const Tensor& a, const Tensor& b) {
    if (!a.same_shape(b)) throw ShapeError("max_abs_diff shape mismatch");
    double m = 0.0;
    for (std::size_t i = 0; i < a.numel(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
    return m;
}

// Solve A x = b by partial-pivot LU; A is n x n, b is n x m. Sizes here are
// tiny (SSM state dims), so no blocking.
inline Tensor solve(Tensor a, Tensor b) {
    if (a.rank() != 2 || a.rows() != a.cols() || b.rows() != a.rows())
        throw ShapeError("solve " + shape_str(a) + " \\ " + shape_str(b));
    const std::size_t n = a.rows(), m = b.cols();
    for (std::size_t col = 0; col < n; ++col) {
        std::size_t piv = col;
        for (std::size_t r = col + 1; r < n; ++r)
            if (std::abs(a(r, col)) > std::abs(a(piv, col))) piv = r;
        if (std::abs(a(piv, col)) < 1e-300) throw InvalidParamError("singular matrix in solve");
        if (piv != col) {
            for (std::size_t j = 0; j < n; ++j) std::swap(a(col, j), a(piv, j));
            for (std::size_t j = 0; j < m; ++j) std::swap(b(col, j), b(piv, j));
        }
        const double d = a(col, col);
        for (std::size_t r = col + 1; r < n; ++r) {
            const double f = a(r, col) / d;
            if (f == 0.0) continue;
            for (std::size_t j = col; j < n; ++j) a(r, j) -= f * a(col, j);
            for (std::size_t j = 0; j < m; ++j) b(r, j) -= f * b(col, j);
        }
    }
    for (std::size_t ri = n; ri-- > 0;) {
        for (std::size_t j = 0; j < m; ++j) {
            double s = b(ri, j);
            for (std::size_t c = ri + 1; c < n; ++c) s -= a(ri, c) * b(c, j);
            b(ri, j) = s / a(ri, ri);
        }
    }
    return b;
}

// Matrix exponential by scaling-and-squaring over a Taylor core. State
// matrices here are small (N <= 16), so the plain series with enough scaling
// reaches double accuracy.
inline Tensor expm(const Tensor& a) {
    if (a.rank() != 2 || a.rows() != a.cols()) throw ShapeError("expm needs square matrix");
    const std::size_t n = a.rows();
    double nrm = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        double r = 0.0;
        for (std::size_t j = 0; j < n; ++j) r += std::abs(a(i, j));
        nrm = std::max(nrm, r);
    }
    int s = 0;
    while (nrm > 0.5) {
        nrm *= 0.5;
        ++s;
    }
    Tensor x = std::ldexp(1.0, -s) * a;
    Tensor acc = identity(n);
    Tensor term = identity(n);
    for (int k = 1; k <= 24; ++k) {
        term = matmul(term, x);
        for (std::size_t i = 0; i < term.numel(); ++i) term[i] /= static_cast<double>(k);
        acc = acc + term;
        if (frob_norm(term) < 1e-18 * (1.0 + frob_norm(acc))) break;
    }
    for (int i = 0; i < s; ++i) acc = matmul(acc, acc);
    return acc;
}

inline Tensor random_normal(std::vector<std::size_t> shape, Rng& rng, double stddev = 1.0) {
    Tensor t(std::move(shape));
    for (std::size_t i = 0; i < t.numel(); ++i) t[i] = rng.normal(0.0, stddev);
    return t;
}

}  // namespace stsk
