// Central finite-difference gradient oracle, independent of the tape's
// backward path: it only re-evaluates the forward value under perturbation.
#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "klal/tensor.hpp"

namespace klal::testing {

// Relative error with an absolute floor so near-zero gradients compare sanely.
inline double rel_err(double a, double b, double floor_ = 1e-3) {
    return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor_});
}

// Compares analytic gradients (already accumulated in each param's grad())
// against central differences of `loss_value`, which must recompute the loss
// from the params' current data. Returns the max relative error over all
// checked elements. `sample_per_param` > 0 probes a random subset.
template <class T>
double max_grad_rel_err_vs_fd(const std::vector<TensorT<T>*>& params,
                              const std::function<double()>& loss_value,
                              double h = 1e-5, int sample_per_param = 0,
                              Rng* rng = nullptr) {
    double worst = 0.0;
    for (TensorT<T>* p : params) {
        const auto& g = p->grad();
        std::vector<int64_t> idx;
        if (sample_per_param > 0 && rng && p->numel() > sample_per_param) {
            for (int s = 0; s < sample_per_param; ++s)
                idx.push_back(rng->uniform_int(0, p->numel() - 1));
        } else {
            idx.resize(static_cast<size_t>(p->numel()));
            for (int64_t i = 0; i < p->numel(); ++i) idx[static_cast<size_t>(i)] = i;
        }
        for (int64_t i : idx) {
            const T saved = p->at(i);
            p->at(i) = saved + static_cast<T>(h);
            const double up = loss_value();
            p->at(i) = saved - static_cast<T>(h);
            const double down = loss_value();
            p->at(i) = saved;
            const double fd = (up - down) / (2.0 * h);
            worst = std::max(worst, rel_err(static_cast<double>(g[static_cast<size_t>(i)]), fd));
        }
    }
    return worst;
}

}  // namespace klal::testing
