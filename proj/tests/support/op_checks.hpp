// One finite-difference gradient check per autograd op, shared by the unit
// tests and the acceptance suite. Each entry builds a random instance,
// accumulates analytic gradients, and returns the max relative error against
// the central-difference oracle.
#pragma once

#include <functional>
#include <string>
#include <vector>

#include "klal/tensor.hpp"
#include "support/finite_diff.hpp"

namespace klal::testing {

inline Tensor rand_tensor(Rng& rng, std::vector<int64_t> shape, double lo = -1.0,
                          double hi = 1.0, bool requires_grad = true) {
    Tensor t(std::move(shape));
    for (auto& x : t.data()) x = rng.uniform(lo, hi);
    t.set_requires_grad(requires_grad);
    return t;
}

inline std::vector<double> rand_weights(Rng& rng, int64_t n) {
    std::vector<double> w(static_cast<size_t>(n));
    for (auto& x : w) x = rng.uniform(-1.0, 1.0);
    return w;
}

struct OpGradCheck {
    std::string name;
    std::function<double(Rng&)> max_err;
};

// Wraps "build op output, project to scalar with fixed weights" for a set of
// differentiable leaves.
template <class BuildFn>
double check_through_weighted_sum(Rng& rng, std::vector<Tensor*> leaves, BuildFn&& build) {
    int64_t out_numel;
    {
        Graph g;
        out_numel = build(g).numel();
    }
    const auto w = rand_weights(rng, out_numel);
    const auto loss = [&]() -> double {
        Graph g;
        return g.weighted_sum(build(g), w).at(0);
    };
    {
        Graph g;
        g.backward(g.weighted_sum(build(g), w));
    }
    return max_grad_rel_err_vs_fd<double>(leaves, loss);
}

inline std::vector<OpGradCheck> autograd_op_checks() {
    std::vector<OpGradCheck> checks;
    auto dim = [](Rng& rng) { return rng.uniform_int(2, 6); };

    checks.push_back({"matmul", [dim](Rng& rng) {
        const int64_t m = dim(rng), k = dim(rng), n = dim(rng);
        Tensor a = rand_tensor(rng, {m, k});
        Tensor b = rand_tensor(rng, {k, n});
        return check_through_weighted_sum(rng, {&a, &b}, [&](Graph& g) -> Tensor& {
            return g.matmul(a, b);
        });
    }});
    checks.push_back({"transpose", [dim](Rng& rng) {
        Tensor a = rand_tensor(rng, {dim(rng), dim(rng)});
        return check_through_weighted_sum(rng, {&a}, [&](Graph& g) -> Tensor& {
            return g.transpose(a);
        });
    }});
    checks.push_back({"reshape", [dim](Rng& rng) {
        const int64_t m = dim(rng), n = dim(rng);
        Tensor a = rand_tensor(rng, {m, n});
        return check_through_weighted_sum(rng, {&a}, [&](Graph& g) -> Tensor& {
            return g.reshape(a, {n * m});
        });
    }});
    checks.push_back({"add", [dim](Rng& rng) {
        const int64_t m = dim(rng), n = dim(rng);
        Tensor a = rand_tensor(rng, {m, n});
        Tensor b = rand_tensor(rng, {m, n});
        return check_through_weighted_sum(rng, {&a, &b}, [&](Graph& g) -> Tensor& {
            return g.add(a, b);
        });
    }});
    checks.push_back({"add_bias", [dim](Rng& rng) {
        const int64_t m = dim(rng), n = dim(rng);
        Tensor a = rand_tensor(rng, {m, n});
        Tensor b = rand_tensor(rng, {n});
        return check_through_weighted_sum(rng, {&a, &b}, [&](Graph& g) -> Tensor& {
            return g.add_bias(a, b);
        });
    }});
    checks.push_back({"scale", [dim](Rng& rng) {
        Tensor a = rand_tensor(rng, {dim(rng), dim(rng)});
        const double s = rng.uniform(-2.0, 2.0);
        return check_through_weighted_sum(rng, {&a}, [&](Graph& g) -> Tensor& {
            return g.scale(a, s);
        });
    }});
    checks.push_back({"concat_rows", [dim](Rng& rng) {
        const int64_t n = dim(rng);
        Tensor a = rand_tensor(rng, {dim(rng), n});
        Tensor b = rand_tensor(rng, {dim(rng), n});
        Tensor c = rand_tensor(rng, {dim(rng), n});
        return check_through_weighted_sum(rng, {&a, &b, &c}, [&](Graph& g) -> Tensor& {
            return g.concat_rows({&a, &b, &c});
        });
    }});
    checks.push_back({"concat_cols", [dim](Rng& rng) {
        const int64_t m = dim(rng);
        Tensor a = rand_tensor(rng, {m, dim(rng)});
        Tensor b = rand_tensor(rng, {m, dim(rng)});
        return check_through_weighted_sum(rng, {&a, &b}, [&](Graph& g) -> Tensor& {
            return g.concat_cols({&a, &b});
        });
    }});
    checks.push_back({"slice_rows", [dim](Rng& rng) {
        const int64_t m = dim(rng) + 2, n = dim(rng);
        Tensor a = rand_tensor(rng, {m, n});
        const int64_t r0 = rng.uniform_int(0, m - 2);
        const int64_t len = rng.uniform_int(1, m - r0 - 1);
        return check_through_weighted_sum(rng, {&a}, [&](Graph& g) -> Tensor& {
            return g.slice_rows(a, r0, len);
        });
    }});
    checks.push_back({"slice_cols", [dim](Rng& rng) {
        const int64_t m = dim(rng), n = dim(rng) + 2;
        Tensor a = rand_tensor(rng, {m, n});
        const int64_t c0 = rng.uniform_int(0, n - 2);
        const int64_t len = rng.uniform_int(1, n - c0 - 1);
        return check_through_weighted_sum(rng, {&a}, [&](Graph& g) -> Tensor& {
            return g.slice_cols(a, c0, len);
        });
    }});
    checks.push_back({"softmax_rows", [dim](Rng& rng) {
        Tensor a = rand_tensor(rng, {dim(rng), dim(rng)}, -3.0, 3.0);
        return check_through_weighted_sum(rng, {&a}, [&](Graph& g) -> Tensor& {
            return g.softmax_rows(a);
        });
    }});
    checks.push_back({"causal_softmax", [dim](Rng& rng) {
        const int64_t n = dim(rng);
        Tensor a = rand_tensor(rng, {n, n}, -3.0, 3.0);
        return check_through_weighted_sum(rng, {&a}, [&](Graph& g) -> Tensor& {
            return g.causal_softmax(a);
        });
    }});
    checks.push_back({"renormalize_rows", [dim](Rng& rng) {
        Tensor a = rand_tensor(rng, {dim(rng), dim(rng)}, 0.05, 1.0);
        return check_through_weighted_sum(rng, {&a}, [&](Graph& g) -> Tensor& {
            return g.renormalize_rows(a);
        });
    }});
    checks.push_back({"layer_norm", [dim](Rng& rng) {
        const int64_t m = dim(rng), n = dim(rng) + 2;
        Tensor x = rand_tensor(rng, {m, n});
        Tensor gain = rand_tensor(rng, {n}, 0.5, 1.5);
        Tensor bias = rand_tensor(rng, {n}, -0.5, 0.5);
        return check_through_weighted_sum(rng, {&x, &gain, &bias}, [&](Graph& g) -> Tensor& {
            return g.layer_norm(x, gain, bias, 1e-5);
        });
    }});
    checks.push_back({"gelu", [dim](Rng& rng) {
        Tensor a = rand_tensor(rng, {dim(rng), dim(rng)}, -3.0, 3.0);
        return check_through_weighted_sum(rng, {&a}, [&](Graph& g) -> Tensor& {
            return g.gelu(a);
        });
    }});
    checks.push_back({"embedding_lookup", [dim](Rng& rng) {
        const int64_t v = dim(rng) + 2, d = dim(rng);
        Tensor table = rand_tensor(rng, {v, d});
        std::vector<int> ids(static_cast<size_t>(dim(rng)));
        for (auto& id : ids) id = static_cast<int>(rng.uniform_int(0, v - 1));
        return check_through_weighted_sum(rng, {&table}, [&](Graph& g) -> Tensor& {
            return g.embedding_lookup(table, ids);
        });
    }});
    checks.push_back({"kl_divergence", [dim](Rng& rng) {
        const int64_t n = dim(rng) + 2;
        Tensor p = rand_tensor(rng, {n}, 0.05, 1.0, false);
        double ps = 0;
        for (double x : p.data()) ps += x;
        for (auto& x : p.data()) x /= ps;
        Tensor q = rand_tensor(rng, {n}, 0.05, 1.0);
        double qs = 0;
        for (double x : q.data()) qs += x;
        for (auto& x : q.data()) x /= qs;
        const auto loss = [&]() -> double {
            Graph g;
            return g.kl_divergence(p, q).at(0);
        };
        {
            Graph g;
            g.backward(g.kl_divergence(p, q));
        }
        return max_grad_rel_err_vs_fd<double>({&q}, loss);
    }});
    checks.push_back({"cross_entropy_logits", [dim](Rng& rng) {
        const int64_t rows = dim(rng), v = dim(rng) + 2;
        Tensor logits = rand_tensor(rng, {rows, v}, -2.0, 2.0);
        std::vector<int> targets(static_cast<size_t>(rows));
        std::vector<uint8_t> active(static_cast<size_t>(rows));
        bool any = false;
        for (int64_t i = 0; i < rows; ++i) {
            targets[static_cast<size_t>(i)] = static_cast<int>(rng.uniform_int(0, v - 1));
            active[static_cast<size_t>(i)] = rng.coin() ? 1 : 0;
            any |= active[static_cast<size_t>(i)] != 0;
        }
        if (!any) active[0] = 1;
        const auto loss = [&]() -> double {
            Graph g;
            return g.cross_entropy_logits(logits, targets, active).at(0);
        };
        {
            Graph g;
            g.backward(g.cross_entropy_logits(logits, targets, active));
        }
        return max_grad_rel_err_vs_fd<double>({&logits}, loss);
    }});
    checks.push_back({"sum_all", [dim](Rng& rng) {
        Tensor a = rand_tensor(rng, {dim(rng), dim(rng)});
        const auto loss = [&]() -> double {
            Graph g;
            return g.sum_all(a).at(0);
        };
        {
            Graph g;
            g.backward(g.sum_all(a));
        }
        return max_grad_rel_err_vs_fd<double>({&a}, loss);
    }});
    checks.push_back({"weighted_sum", [dim](Rng& rng) {
        Tensor a = rand_tensor(rng, {dim(rng), dim(rng)});
        const auto w = rand_weights(rng, a.numel());
        const auto loss = [&]() -> double {
            Graph g;
            return g.weighted_sum(a, w).at(0);
        };
        {
            Graph g;
            g.backward(g.weighted_sum(a, w));
        }
        return max_grad_rel_err_vs_fd<double>({&a}, loss);
    }});
    return checks;
}

}  // namespace klal::testing
