#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace prodrec {

/// Dense row-major matrix; rows are the embedding vectors.
template <class Real>
class Matrix {
public:
    Matrix() = default;
    Matrix(std::size_t rows, std::size_t cols, Real fill = Real(0)) : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

    std::size_t rows() const noexcept { return rows_; }
    std::size_t cols() const noexcept { return cols_; }

    std::span<Real> row(std::size_t i) { return {data_.data() + i * cols_, cols_}; }
    std::span<const Real> row(std::size_t i) const { return {data_.data() + i * cols_, cols_}; }

    Real& operator()(std::size_t i, std::size_t j) { return data_[i * cols_ + j]; }
    Real operator()(std::size_t i, std::size_t j) const { return data_[i * cols_ + j]; }

    std::span<Real> values() { return data_; }
    std::span<const Real> values() const { return data_; }

    friend bool operator==(const Matrix&, const Matrix&) = default;

private:
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<Real> data_;
};

template <class A, class B>
double dot(std::span<A> a, std::span<B> b) {
    double s = 0;
    for (std::size_t i = 0; i < a.size(); ++i) s += static_cast<double>(a[i]) * static_cast<double>(b[i]);
    return s;
}

}  // namespace prodrec
