#pragma once

// Negative-sampling update kernels shared by every embedding trainer.
//
// Each kernel performs one stochastic ascent step on
//     J = log s(h . o_pos) + sum_k log s(-h . o_neg_k)
// where s is the logistic function, h is a (possibly averaged) input vector
// and o_* are rows of an output matrix. The step applied to every parameter
// is lr * dJ/dparam at the pre-step parameters, provided the positive and
// negative rows are distinct (a repeated row sees its own earlier update).
// The kernels are templated on the scalar so tests can run them in double.

#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

#include "prodrec/matrix.hpp"

namespace prodrec::detail {

inline double sigmoid(double x) {
    if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
    double e = std::exp(x);
    return e / (1.0 + e);
}

/// log(sigmoid(x)) without overflow.
inline double log_sigmoid(double x) { return x >= 0 ? -std::log1p(std::exp(-x)) : x - std::log1p(std::exp(x)); }

/// Core step. Accumulates lr * dJ/dh into `hidden_grad` and updates the
/// output rows in place. Returns J at the pre-step parameters.
template <class Real>
double sgns_step(std::span<const Real> hidden, std::span<Real> hidden_grad, Matrix<Real>& output,
                 std::uint32_t positive, std::span<const std::uint32_t> negatives, double lr) {
    double objective = 0;
    auto apply = [&](std::uint32_t target, double label) {
        auto out = output.row(target);
        double f = dot(hidden, std::span<const Real>(out));
        objective += label > 0 ? log_sigmoid(f) : log_sigmoid(-f);
        double g = lr * (label - sigmoid(f));
        const std::size_t dim = hidden.size();
        for (std::size_t d = 0; d < dim; ++d) hidden_grad[d] += static_cast<Real>(g * out[d]);
        for (std::size_t d = 0; d < dim; ++d) out[d] += static_cast<Real>(g * hidden[d]);
    };
    apply(positive, 1.0);
    for (auto n : negatives) apply(n, 0.0);
    return objective;
}

/// Skip-gram pair: input row `center` predicts output row `target`.
template <class Real>
double pair_update(Matrix<Real>& input, Matrix<Real>& output, std::uint32_t center, std::uint32_t target,
                   std::span<const std::uint32_t> negatives, double lr, std::vector<Real>& grad) {
    grad.assign(input.cols(), Real(0));
    auto h = input.row(center);
    double j = sgns_step<Real>(std::span<const Real>(h), grad, output, target, negatives, lr);
    for (std::size_t d = 0; d < h.size(); ++d) h[d] += grad[d];
    return j;
}

/// Averaged context: mean of one row of `user_input` and the listed rows of
/// `input` predicts output row `target`. The averaged gradient is shared
/// equally by every participant.
template <class Real>
double context_update(Matrix<Real>& user_input, std::uint32_t user, Matrix<Real>& input,
                      std::span<const std::uint32_t> context, Matrix<Real>& output, std::uint32_t target,
                      std::span<const std::uint32_t> negatives, double lr, std::vector<Real>& hidden,
                      std::vector<Real>& grad) {
    const std::size_t dim = input.cols();
    const double n = static_cast<double>(context.size() + 1);
    hidden.assign(dim, Real(0));
    grad.assign(dim, Real(0));
    auto u = user_input.row(user);
    for (std::size_t d = 0; d < dim; ++d) hidden[d] += u[d];
    for (auto p : context) {
        auto v = input.row(p);
        for (std::size_t d = 0; d < dim; ++d) hidden[d] += v[d];
    }
    for (auto& x : hidden) x = static_cast<Real>(x / n);
    double j = sgns_step<Real>(std::span<const Real>(hidden), grad, output, target, negatives, lr);
    for (std::size_t d = 0; d < dim; ++d) u[d] += static_cast<Real>(grad[d] / n);
    for (auto p : context) {
        auto v = input.row(p);
        for (std::size_t d = 0; d < dim; ++d) v[d] += static_cast<Real>(grad[d] / n);
    }
    return j;
}

/// Mean of the listed rows of `input` predicts row `target` of `output`.
template <class Real>
double mean_update(Matrix<Real>& input, std::span<const std::uint32_t> members, Matrix<Real>& output,
                   std::uint32_t target, std::span<const std::uint32_t> negatives, double lr,
                   std::vector<Real>& hidden, std::vector<Real>& grad) {
    const std::size_t dim = input.cols();
    const double n = static_cast<double>(members.size());
    hidden.assign(dim, Real(0));
    grad.assign(dim, Real(0));
    for (auto p : members) {
        auto v = input.row(p);
        for (std::size_t d = 0; d < dim; ++d) hidden[d] += v[d];
    }
    for (auto& x : hidden) x = static_cast<Real>(x / n);
    double j = sgns_step<Real>(std::span<const Real>(hidden), grad, output, target, negatives, lr);
    for (auto p : members) {
        auto v = input.row(p);
        for (std::size_t d = 0; d < dim; ++d) v[d] += static_cast<Real>(grad[d] / n);
    }
    return j;
}

}  // namespace prodrec::detail
