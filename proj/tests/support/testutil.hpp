#pragma once

#include <cmath>
#include <functional>
#include <vector>

#include "tilesemi/rng.hpp"
#include "tilesemi/tensor.hpp"

namespace tilesemi::testutil {

// Membership map built through a per-pixel normalized exponential, so the
// simplex invariants hold by construction.
template <class T>
Tensor<T> softmax_membership(const Tensor<T>& logits) {
    Tensor<T> out(logits.shape());
    const std::int64_t n = logits.dim(0), k = logits.dim(1), hw = logits.dim(2) * logits.dim(3);
    for (std::int64_t b = 0; b < n; ++b) {
        const T* lb = logits.data() + b * k * hw;
        T* ob = out.data() + b * k * hw;
        for (std::int64_t i = 0; i < hw; ++i) {
            double zmax = -1e300;
            for (std::int64_t c = 0; c < k; ++c) zmax = std::max(zmax, static_cast<double>(lb[c * hw + i]));
            double den = 0.0;
            for (std::int64_t c = 0; c < k; ++c) den += std::exp(static_cast<double>(lb[c * hw + i]) - zmax);
            for (std::int64_t c = 0; c < k; ++c)
                ob[c * hw + i] = static_cast<T>(std::exp(static_cast<double>(lb[c * hw + i]) - zmax) / den);
        }
    }
    return out;
}

template <class T>
Tensor<T> random_membership(std::vector<std::int64_t> shape, Rng& rng, double spread = 2.0) {
    Tensor<T> logits(std::move(shape));
    for (std::int64_t i = 0; i < logits.numel(); ++i)
        logits[i] = static_cast<T>(rng.normal() * spread);
    return softmax_membership(logits);
}

// Central finite differences of a scalar function of one tensor argument.
inline void finite_difference_gradient(const std::function<double(const Tensor<double>&)>& f,
                                       const Tensor<double>& x, Tensor<double>& grad,
                                       double h = 1e-6) {
    grad = Tensor<double>(x.shape());
    Tensor<double> probe = x;
    for (std::int64_t i = 0; i < x.numel(); ++i) {
        const double orig = probe[i];
        probe[i] = orig + h;
        const double fp = f(probe);
        probe[i] = orig - h;
        const double fm = f(probe);
        probe[i] = orig;
        grad[i] = (fp - fm) / (2.0 * h);
    }
}

inline double max_relative_gradient_error(const Tensor<double>& analytic,
                                          const Tensor<double>& numeric) {
    double worst = 0.0;
    for (std::int64_t i = 0; i < analytic.numel(); ++i) {
        const double denom = std::max(std::abs(numeric[i]), 1e-6);
        worst = std::max(worst, std::abs(analytic[i] - numeric[i]) / denom);
    }
    return worst;
}

}  // namespace tilesemi::testutil
