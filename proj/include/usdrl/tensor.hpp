#pragma once

#include <algorithm>
#include <cassert>
#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

namespace usdrl {

/// Dense row-major 2-D matrix. The whole compute core works on these;
/// higher-rank skeleton arrays are flattened before they reach it.
template <class Real>
class Mat {
public:
    Mat() = default;
    Mat(std::size_t rows, std::size_t cols, Real fill = Real(0))
        : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

    static Mat from(std::size_t rows, std::size_t cols, std::vector<Real> data) {
        if (data.size() != rows * cols)
            throw std::invalid_argument("Mat::from: data size does not match shape");
        Mat m;
        m.rows_ = rows;
        m.cols_ = cols;
        m.data_ = std::move(data);
        return m;
    }

    std::size_t rows() const { return rows_; }
    std::size_t cols() const { return cols_; }
    std::size_t size() const { return data_.size(); }
    bool empty() const { return data_.empty(); }

    Real& operator()(std::size_t r, std::size_t c) {
        assert(r < rows_ && c < cols_);
        return data_[r * cols_ + c];
    }
    Real operator()(std::size_t r, std::size_t c) const {
        assert(r < rows_ && c < cols_);
        return data_[r * cols_ + c];
    }
    Real& operator[](std::size_t i) { return data_[i]; }
    Real operator[](std::size_t i) const { return data_[i]; }

    Real* data() { return data_.data(); }
    const Real* data() const { return data_.data(); }
    std::vector<Real>& vec() { return data_; }
    const std::vector<Real>& vec() const { return data_; }

    bool same_shape(const Mat& o) const { return rows_ == o.rows_ && cols_ == o.cols_; }

    void fill(Real v) { std::fill(data_.begin(), data_.end(), v); }

    Mat transposed() const {
        Mat t(cols_, rows_);
        for (std::size_t r = 0; r < rows_; ++r)
            for (std::size_t c = 0; c < cols_; ++c)
                t(c, r) = (*this)(r, c);
        return t;
    }

    bool all_finite() const {
        for (Real v : data_)
            if (!std::isfinite(static_cast<double>(v))) return false;
        return true;
    }

    template <class Other>
    Mat<Other> cast() const {
        Mat<Other> out(rows_, cols_);
        for (std::size_t i = 0; i < data_.size(); ++i) out[i] = static_cast<Other>(data_[i]);
        return out;
    }

private:
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<Real> data_;
};

/// C = A * B, cache-friendly i-k-j loop. Sizes here are small (<= a few
/// thousand per side) so a blocked kernel is not worth the complexity.
template <class Real>
void matmul_into(Mat<Real>& c, const Mat<Real>& a, const Mat<Real>& b, bool accumulate = false) {
    if (a.cols() != b.rows())
        throw std::invalid_argument("matmul: inner dimensions disagree");
    if (c.rows() != a.rows() || c.cols() != b.cols()) c = Mat<Real>(a.rows(), b.cols());
    if (!accumulate) c.fill(Real(0));
    const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
    const Real* pa = a.data();
    const Real* pb = b.data();
    Real* pc = c.data();
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t l = 0; l < k; ++l) {
            const Real av = pa[i * k + l];
            if (av == Real(0)) continue;
            const Real* brow = pb + l * n;
            Real* crow = pc + i * n;
            for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

template <class Real>
Mat<Real> matmul(const Mat<Real>& a, const Mat<Real>& b) {
    Mat<Real> c;
    matmul_into(c, a, b);
    return c;
}

template <class Real>
Real max_abs_diff(const Mat<Real>& a, const Mat<Real>& b) {
    if (!a.same_shape(b)) throw std::invalid_argument("max_abs_diff: shape mismatch");
    Real m = 0;
    for (std::size_t i = 0; i < a.size(); ++i)
        m = std::max(m, static_cast<Real>(std::abs(static_cast<double>(a[i] - b[i]))));
    return m;
}

}  // namespace usdrl
