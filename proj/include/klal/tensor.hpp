// Dense tensor with reverse-mode autodiff on a per-use tape, plus the AdamW
// optimizer. Scalar type is templated; double is the default everywhere and
// float is available where speed matters more than gradient-check headroom.
//
// Threading contract: a Graph is confined to one worker. Parameter tensors
// may be shared read-only across workers during forward/backward_local; the
// leaf-gradient merge is the single-writer step.
#pragma once

#include <atomic>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <deque>
#include <functional>
#include <limits>
#include <memory>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include "klal/common.hpp"

namespace klal {

inline std::string shape_to_string(const std::vector<int64_t>& shape) {
    std::string s = "[";
    for (size_t i = 0; i < shape.size(); ++i) {
        if (i) s += ",";
        s += std::to_string(shape[i]);
    }
    return s + "]";
}

template <class T>
bool all_finite(const std::vector<T>& v) {
    for (const T x : v)
        if (!std::isfinite(static_cast<double>(x))) return false;
    return true;
}

inline std::atomic<uint64_t>& tensor_id_counter() {
    static std::atomic<uint64_t> counter{1};
    return counter;
}

template <class T>
class TensorT {
public:
    TensorT() : id_(tensor_id_counter()++) {}

    explicit TensorT(std::vector<int64_t> shape, T fill = T(0), bool requires_grad = false)
        : shape_(std::move(shape)), requires_grad_(requires_grad), id_(tensor_id_counter()++) {
        data_.assign(static_cast<size_t>(compute_numel(shape_)), fill);
    }

    static TensorT from_data(std::vector<int64_t> shape, std::vector<T> data,
                             bool requires_grad = false) {
        TensorT t;
        if (compute_numel(shape) != static_cast<int64_t>(data.size()))
            throw std::invalid_argument("Tensor: data length " + std::to_string(data.size()) +
                                        " does not match shape " + shape_to_string(shape));
        t.shape_ = std::move(shape);
        t.data_ = std::move(data);
        t.requires_grad_ = requires_grad;
        return t;
    }

    // Copies are independent leaves: fresh identity, gradient state not shared.
    TensorT(const TensorT& other)
        : shape_(other.shape_), data_(other.data_), requires_grad_(other.requires_grad_),
          id_(tensor_id_counter()++) {
        if (other.grad_) grad_ = std::make_shared<std::vector<T>>(*other.grad_);
    }
    TensorT& operator=(const TensorT& other) {
        if (this != &other) {
            shape_ = other.shape_;
            data_ = other.data_;
            requires_grad_ = other.requires_grad_;
            grad_ = other.grad_ ? std::make_shared<std::vector<T>>(*other.grad_) : nullptr;
            id_ = tensor_id_counter()++;
        }
        return *this;
    }
    TensorT(TensorT&&) noexcept = default;
    TensorT& operator=(TensorT&&) noexcept = default;

    const std::vector<int64_t>& shape() const { return shape_; }
    int64_t ndim() const { return static_cast<int64_t>(shape_.size()); }
    int64_t numel() const { return static_cast<int64_t>(data_.size()); }
    int64_t rows() const { return ndim() == 2 ? shape_[0] : (ndim() == 1 ? 1 : bad_2d()); }
    int64_t cols() const { return ndim() == 2 ? shape_[1] : (ndim() == 1 ? shape_[0] : bad_2d()); }

    std::vector<T>& data() { return data_; }
    const std::vector<T>& data() const { return data_; }
    T& at(int64_t i) { return data_[static_cast<size_t>(i)]; }
    T at(int64_t i) const { return data_[static_cast<size_t>(i)]; }
    T& at(int64_t r, int64_t c) { return data_[static_cast<size_t>(r * cols() + c)]; }
    T at(int64_t r, int64_t c) const { return data_[static_cast<size_t>(r * cols() + c)]; }

    bool requires_grad() const { return requires_grad_; }
    void set_requires_grad(bool v) { requires_grad_ = v; }
    uint64_t id() const { return id_; }

    bool has_grad() const { return grad_ != nullptr; }
    // Lazily allocated, zero-filled.
    std::vector<T>& grad() const {
        if (!grad_) grad_ = std::make_shared<std::vector<T>>(data_.size(), T(0));
        return *grad_;
    }
    void zero_grad() const {
        if (grad_) std::fill(grad_->begin(), grad_->end(), T(0));
    }
    // Single-writer accumulation; gradient is metadata, hence const.
    void accumulate_grad(const std::vector<T>& delta) const {
        auto& g = grad();
        if (g.size() != delta.size())
            throw std::invalid_argument("accumulate_grad: size mismatch");
        for (size_t i = 0; i < g.size(); ++i) g[i] += delta[i];
    }

    void fill_normal(Rng& rng, T sigma) {
        for (auto& x : data_) x = static_cast<T>(rng.normal(0.0, static_cast<double>(sigma)));
    }

    static int64_t compute_numel(const std::vector<int64_t>& shape) {
        int64_t n = 1;
        for (int64_t e : shape) {
            if (e <= 0) throw std::invalid_argument("Tensor: non-positive extent in " +
                                                    shape_to_string(shape));
            n *= e;
        }
        return n;
    }

private:
    int64_t bad_2d() const {
        throw std::logic_error("Tensor: 2-D access on shape " + shape_to_string(shape_));
    }

    std::vector<int64_t> shape_;
    std::vector<T> data_;
    bool requires_grad_ = false;
    mutable std::shared_ptr<std::vector<T>> grad_;
    uint64_t id_ = 0;
};

using Tensor = TensorT<double>;
using Tensor32 = TensorT<float>;

// ---------------------------------------------------------------------------
// matmul kernels. std::fma keeps FMA throughput with -ffp-contract=off.

template <class T>
void mm_nn(const T* a, const T* b, T* c, int64_t m, int64_t k, int64_t n) {
    for (int64_t i = 0; i < m; ++i) {
        T* cr = c + i * n;
        std::memset(cr, 0, static_cast<size_t>(n) * sizeof(T));
        const T* ar = a + i * k;
        for (int64_t p = 0; p < k; ++p) {
            const T s = ar[p];
            const T* br = b + p * n;
            for (int64_t j = 0; j < n; ++j) cr[j] = std::fma(s, br[j], cr[j]);
        }
    }
}

// c[m×n] += a[m×k] · b[n×k]^T
template <class T>
void mm_nt_acc(const T* a, const T* b, T* c, int64_t m, int64_t k, int64_t n) {
    for (int64_t i = 0; i < m; ++i) {
        const T* ar = a + i * k;
        T* cr = c + i * n;
        for (int64_t j = 0; j < n; ++j) {
            const T* br = b + j * k;
            T acc = T(0);
            for (int64_t p = 0; p < k; ++p) acc = std::fma(ar[p], br[p], acc);
            cr[j] += acc;
        }
    }
}

// c[k×n] += a[m×k]^T · b[m×n]
template <class T>
void mm_tn_acc(const T* a, const T* b, T* c, int64_t m, int64_t k, int64_t n) {
    for (int64_t p = 0; p < m; ++p) {
        const T* ar = a + p * k;
        const T* br = b + p * n;
        for (int64_t i = 0; i < k; ++i) {
            const T s = ar[i];
            T* cr = c + i * n;
            for (int64_t j = 0; j < n; ++j) cr[j] = std::fma(s, br[j], cr[j]);
        }
    }
}

// ---------------------------------------------------------------------------
// Define-by-run tape.

template <class T>
class GraphT {
public:
    using Tensor = TensorT<T>;

    GraphT() = default;
    GraphT(const GraphT&) = delete;
    GraphT& operator=(const GraphT&) = delete;

    // Graph-owned constant leaf (inputs, targets, masks rendered as data).
    Tensor& constant(std::vector<int64_t> shape, std::vector<T> data) {
        owned_.push_back(Tensor::from_data(std::move(shape), std::move(data), false));
        Tensor& t = owned_.back();
        node_of(t);
        return t;
    }

    Tensor& matmul(const Tensor& a, const Tensor& b) {
        require_2d(a, "matmul");
        require_2d(b, "matmul");
        if (a.cols() != b.rows())
            throw std::invalid_argument("matmul: shape mismatch " + shape_to_string(a.shape()) +
                                        " x " + shape_to_string(b.shape()));
        const int64_t m = a.rows(), k = a.cols(), n = b.cols();
        const int na = node_of(a), nb = node_of(b);
        Tensor& out = new_result({m, n});
        mm_nn(a.data().data(), b.data().data(), out.data().data(), m, k, n);
        finish_node({na, nb}, out, [na, nb, m, k, n](GraphT& g, int self) {
            const auto& gc = g.grads_[self];
            const auto& av = g.nodes_[na].value->data();
            const auto& bv = g.nodes_[nb].value->data();
            mm_nt_acc(gc.data(), bv.data(), g.grads_[na].data(), m, n, k);   // dA += dC·B^T
            mm_tn_acc(av.data(), gc.data(), g.grads_[nb].data(), m, k, n);   // dB += A^T·dC
        });
        return out;
    }

    Tensor& transpose(const Tensor& a) {
        require_2d(a, "transpose");
        const int64_t m = a.rows(), n = a.cols();
        const int na = node_of(a);
        Tensor& out = new_result({n, m});
        for (int64_t i = 0; i < m; ++i)
            for (int64_t j = 0; j < n; ++j) out.at(j, i) = a.at(i, j);
        finish_node({na}, out, [na, m, n](GraphT& g, int self) {
            const auto& gc = g.grads_[self];
            auto& ga = g.grads_[na];
            for (int64_t j = 0; j < n; ++j)
                for (int64_t i = 0; i < m; ++i) ga[i * n + j] += gc[j * m + i];
        });
        return out;
    }

    Tensor& reshape(const Tensor& a, std::vector<int64_t> shape) {
        if (Tensor::compute_numel(shape) != a.numel())
            throw std::invalid_argument("reshape: cannot view " + shape_to_string(a.shape()) +
                                        " as " + shape_to_string(shape));
        const int na = node_of(a);
        Tensor& out = new_result(std::move(shape));
        out.data() = a.data();
        finish_node({na}, out, [na](GraphT& g, int self) {
            const auto& gc = g.grads_[self];
            auto& ga = g.grads_[na];
            for (size_t i = 0; i < gc.size(); ++i) ga[i] += gc[i];
        });
        return out;
    }

    Tensor& add(const Tensor& a, const Tensor& b) {
        if (a.shape() != b.shape())
            throw std::invalid_argument("add: shape mismatch " + shape_to_string(a.shape()) +
                                        " vs " + shape_to_string(b.shape()));
        const int na = node_of(a), nb = node_of(b);
        Tensor& out = new_result(a.shape());
        for (int64_t i = 0; i < a.numel(); ++i) out.at(i) = a.at(i) + b.at(i);
        finish_node({na, nb}, out, [na, nb](GraphT& g, int self) {
            const auto& gc = g.grads_[self];
            auto& ga = g.grads_[na];
            auto& gb = g.grads_[nb];
            for (size_t i = 0; i < gc.size(); ++i) {
                ga[i] += gc[i];
                gb[i] += gc[i];
            }
        });
        return out;
    }

    // Row-broadcast add: a[m×n] + bias[n].
    Tensor& add_bias(const Tensor& a, const Tensor& bias) {
        require_2d(a, "add_bias");
        if (bias.numel() != a.cols())
            throw std::invalid_argument("add_bias: bias length " + std::to_string(bias.numel()) +
                                        " vs row width " + std::to_string(a.cols()));
        const int64_t m = a.rows(), n = a.cols();
        const int na = node_of(a), nb = node_of(bias);
        Tensor& out = new_result({m, n});
        for (int64_t i = 0; i < m; ++i)
            for (int64_t j = 0; j < n; ++j) out.at(i, j) = a.at(i, j) + bias.at(j);
        finish_node({na, nb}, out, [na, nb, m, n](GraphT& g, int self) {
            const auto& gc = g.grads_[self];
            auto& ga = g.grads_[na];
            auto& gb = g.grads_[nb];
            for (int64_t i = 0; i < m; ++i)
                for (int64_t j = 0; j < n; ++j) {
                    ga[i * n + j] += gc[i * n + j];
                    gb[j] += gc[i * n + j];
                }
        });
        return out;
    }

    Tensor& scale(const Tensor& a, T s) {
        const int na = node_of(a);
        Tensor& out = new_result(a.shape());
        for (int64_t i = 0; i < a.numel(); ++i) out.at(i) = s * a.at(i);
        finish_node({na}, out, [na, s](GraphT& g, int self) {
            const auto& gc = g.grads_[self];
            auto& ga = g.grads_[na];
            for (size_t i = 0; i < gc.size(); ++i) ga[i] += s * gc[i];
        });
        return out;
    }

    Tensor& concat_rows(const std::vector<const Tensor*>& parts) {
        if (parts.empty()) throw std::invalid_argument("concat_rows: no inputs");
        const int64_t n = parts[0]->cols();
        int64_t m = 0;
        std::vector<int> in;
        for (const Tensor* p : parts) {
            require_2d(*p, "concat_rows");
            if (p->cols() != n)
                throw std::invalid_argument("concat_rows: column mismatch " +
                                            shape_to_string(p->shape()));
            m += p->rows();
            in.push_back(node_of(*p));
        }
        Tensor& out = new_result({m, n});
        int64_t r = 0;
        for (const Tensor* p : parts) {
            std::memcpy(out.data().data() + r * n, p->data().data(),
                        static_cast<size_t>(p->numel()) * sizeof(T));
            r += p->rows();
        }
        finish_node(in, out, [in, n](GraphT& g, int self) {
            const auto& gc = g.grads_[self];
            int64_t r = 0;
            for (int idx : in) {
                auto& gi = g.grads_[idx];
                for (size_t i = 0; i < gi.size(); ++i) gi[i] += gc[static_cast<size_t>(r * n) + i];
                r += g.nodes_[idx].value->rows();
            }
        });
        return out;
    }

    Tensor& concat_cols(const std::vector<const Tensor*>& parts) {
        if (parts.empty()) throw std::invalid_argument("concat_cols: no inputs");
        const int64_t m = parts[0]->rows();
        int64_t n = 0;
        std::vector<int> in;
        for (const Tensor* p : parts) {
            require_2d(*p, "concat_cols");
            if (p->rows() != m)
                throw std::invalid_argument("concat_cols: row mismatch " +
                                            shape_to_string(p->shape()));
            n += p->cols();
            in.push_back(node_of(*p));
        }
        Tensor& out = new_result({m, n});
        int64_t c0 = 0;
        for (const Tensor* p : parts) {
            for (int64_t i = 0; i < m; ++i)
                std::memcpy(out.data().data() + i * n + c0, p->data().data() + i * p->cols(),
                            static_cast<size_t>(p->cols()) * sizeof(T));
            c0 += p->cols();
        }
        finish_node(in, out, [in, m, n](GraphT& g, int self) {
            const auto& gc = g.grads_[self];
            int64_t c0 = 0;
            for (int idx : in) {
                const int64_t w = g.nodes_[idx].value->cols();
                auto& gi = g.grads_[idx];
                for (int64_t i = 0; i < m; ++i)
                    for (int64_t j = 0; j < w; ++j) gi[i * w + j] += gc[i * n + c0 + j];
                c0 += w;
            }
        });
        return out;
    }

    Tensor& slice_rows(const Tensor& a, int64_t r0, int64_t len) {
        require_2d(a, "slice_rows");
        if (r0 < 0 || len <= 0 || r0 + len > a.rows())
            throw std::invalid_argument("slice_rows: [" + std::to_string(r0) + "," +
                                        std::to_string(r0 + len) + ") out of " +
                                        shape_to_string(a.shape()));
        const int64_t n = a.cols();
        const int na = node_of(a);
        Tensor& out = new_result({len, n});
        std::memcpy(out.data().data(), a.data().data() + r0 * n,
                    static_cast<size_t>(len * n) * sizeof(T));
        finish_node({na}, out, [na, r0, n](GraphT& g, int self) {
            const auto& gc = g.grads_[self];
            auto& ga = g.grads_[na];
            for (size_t i = 0; i < gc.size(); ++i) ga[static_cast<size_t>(r0 * n) + i] += gc[i];
        });
        return out;
    }

    Tensor& slice_cols(const Tensor& a, int64_t c0, int64_t len) {
        require_2d(a, "slice_cols");
        if (c0 < 0 || len <= 0 || c0 + len > a.cols())
            throw std::invalid_argument("slice_cols: [" + std::to_string(c0) + "," +
                                        std::to_string(c0 + len) + ") out of " +
                                        shape_to_string(a.shape()));
        const int64_t m = a.rows(), n = a.cols();
        const int na = node_of(a);
        Tensor& out = new_result({m, len});
        for (int64_t i = 0; i < m; ++i)
            std::memcpy(out.data().data() + i * len, a.data().data() + i * n + c0,
                        static_cast<size_t>(len) * sizeof(T));
        finish_node({na}, out, [na, c0, m, n, len](GraphT& g, int self) {
            const auto& gc = g.grads_[self];
            auto& ga = g.grads_[na];
            for (int64_t i = 0; i < m; ++i)
                for (int64_t j = 0; j < len; ++j) ga[i * n + c0 + j] += gc[i * len + j];
        });
        return out;
    }

    // Row-wise softmax with per-row max subtraction.
    Tensor& softmax_rows(const Tensor& a) {
        require_2d(a, "softmax_rows");
        const int64_t m = a.rows(), n = a.cols();
        const int na = node_of(a);
        Tensor& out = new_result({m, n});
        for (int64_t i = 0; i < m; ++i)
            softmax_fill(a.data().data() + i * n, out.data().data() + i * n, n);
        finish_node({na}, out, [na, m, n](GraphT& g, int self) {
            const auto& gc = g.grads_[self];
            const auto& y = g.nodes_[self].value->data();
            auto& ga = g.grads_[na];
            for (int64_t i = 0; i < m; ++i) {
                T dot = T(0);
                for (int64_t j = 0; j < n; ++j) dot += gc[i * n + j] * y[i * n + j];
                for (int64_t j = 0; j < n; ++j)
                    ga[i * n + j] += y[i * n + j] * (gc[i * n + j] - dot);
            }
        });
        return out;
    }

    // Softmax over the lower triangle of a square score matrix; entries above
    // the diagonal are exactly zero.
    Tensor& causal_softmax(const Tensor& a) {
        require_2d(a, "causal_softmax");
        if (a.rows() != a.cols())
            throw std::invalid_argument("causal_softmax: non-square " +
                                        shape_to_string(a.shape()));
        const int64_t n = a.rows();
        const int na = node_of(a);
        Tensor& out = new_result({n, n});
        for (int64_t i = 0; i < n; ++i) {
            softmax_fill(a.data().data() + i * n, out.data().data() + i * n, i + 1);
            for (int64_t j = i + 1; j < n; ++j) out.at(i, j) = T(0);
        }
        finish_node({na}, out, [na, n](GraphT& g, int self) {
            const auto& gc = g.grads_[self];
            const auto& y = g.nodes_[self].value->data();
            auto& ga = g.grads_[na];
            for (int64_t i = 0; i < n; ++i) {
                T dot = T(0);
                for (int64_t j = 0; j <= i; ++j) dot += gc[i * n + j] * y[i * n + j];
                for (int64_t j = 0; j <= i; ++j)
                    ga[i * n + j] += y[i * n + j] * (gc[i * n + j] - dot);
            }
        });
        return out;
    }

    // Divide each row by its sum. Rows must carry strictly positive mass.
    Tensor& renormalize_rows(const Tensor& a) {
        require_2d(a, "renormalize_rows");
        const int64_t m = a.rows(), n = a.cols();
        const int na = node_of(a);
        Tensor& out = new_result({m, n});
        std::vector<T> sums(static_cast<size_t>(m));
        for (int64_t i = 0; i < m; ++i) {
            T s = T(0);
            for (int64_t j = 0; j < n; ++j) s += a.at(i, j);
            if (!(s > T(0)) || !std::isfinite(static_cast<double>(s)))
                throw std::runtime_error("renormalize_rows: row " + std::to_string(i) +
                                         " has non-positive mass");
            sums[static_cast<size_t>(i)] = s;
            for (int64_t j = 0; j < n; ++j) out.at(i, j) = a.at(i, j) / s;
        }
        finish_node({na}, out, [na, m, n, sums](GraphT& g, int self) {
            const auto& gc = g.grads_[self];
            const auto& y = g.nodes_[self].value->data();
            auto& ga = g.grads_[na];
            for (int64_t i = 0; i < m; ++i) {
                T dot = T(0);
                for (int64_t j = 0; j < n; ++j) dot += gc[i * n + j] * y[i * n + j];
                const T inv = T(1) / sums[static_cast<size_t>(i)];
                for (int64_t j = 0; j < n; ++j) ga[i * n + j] += (gc[i * n + j] - dot) * inv;
            }
        });
        return out;
    }

    // Per-row normalization with learned gain/bias.
    Tensor& layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, T eps) {
        require_2d(x, "layer_norm");
        const int64_t m = x.rows(), n = x.cols();
        if (gain.numel() != n || bias.numel() != n)
            throw std::invalid_argument("layer_norm: gain/bias length vs width " +
                                        std::to_string(n));
        const int nx = node_of(x), ng = node_of(gain), nb = node_of(bias);
        Tensor& out = new_result({m, n});
        std::vector<T> mean(static_cast<size_t>(m)), inv_sd(static_cast<size_t>(m));
        for (int64_t i = 0; i < m; ++i) {
            T mu = T(0);
            for (int64_t j = 0; j < n; ++j) mu += x.at(i, j);
            mu /= static_cast<T>(n);
            T var = T(0);
            for (int64_t j = 0; j < n; ++j) {
                const T d = x.at(i, j) - mu;
                var += d * d;
            }
            var /= static_cast<T>(n);
            const T inv = T(1) / std::sqrt(var + eps);
            mean[static_cast<size_t>(i)] = mu;
            inv_sd[static_cast<size_t>(i)] = inv;
            for (int64_t j = 0; j < n; ++j)
                out.at(i, j) = gain.at(j) * ((x.at(i, j) - mu) * inv) + bias.at(j);
        }
        finish_node({nx, ng, nb}, out,
                    [nx, ng, nb, m, n, mean, inv_sd](GraphT& g, int self) {
            const auto& gc = g.grads_[self];
            const auto& xv = g.nodes_[nx].value->data();
            const auto& gv = g.nodes_[ng].value->data();
            auto& gx = g.grads_[nx];
            auto& gg = g.grads_[ng];
            auto& gb = g.grads_[nb];
            for (int64_t i = 0; i < m; ++i) {
                const T mu = mean[static_cast<size_t>(i)];
                const T inv = inv_sd[static_cast<size_t>(i)];
                T sum_dxhat = T(0), sum_dxhat_xhat = T(0);
                for (int64_t j = 0; j < n; ++j) {
                    const T xhat = (xv[i * n + j] - mu) * inv;
                    const T dxhat = gc[i * n + j] * gv[static_cast<size_t>(j)];
                    sum_dxhat += dxhat;
                    sum_dxhat_xhat += dxhat * xhat;
                    gg[static_cast<size_t>(j)] += gc[i * n + j] * xhat;
                    gb[static_cast<size_t>(j)] += gc[i * n + j];
                }
                const T invn = T(1) / static_cast<T>(n);
                for (int64_t j = 0; j < n; ++j) {
                    const T xhat = (xv[i * n + j] - mu) * inv;
                    const T dxhat = gc[i * n + j] * gv[static_cast<size_t>(j)];
                    gx[i * n + j] +=
                        inv * (dxhat - invn * sum_dxhat - xhat * invn * sum_dxhat_xhat);
                }
            }
        });
        return out;
    }

    // Exact (erf-based) GELU.
    Tensor& gelu(const Tensor& a) {
        const int na = node_of(a);
        Tensor& out = new_result(a.shape());
        for (int64_t i = 0; i < a.numel(); ++i) {
            const T x = a.at(i);
            out.at(i) = T(0.5) * x * (T(1) + std::erf(x * T(M_SQRT1_2)));
        }
        finish_node({na}, out, [na](GraphT& g, int self) {
            const auto& gc = g.grads_[self];
            const auto& xv = g.nodes_[na].value->data();
            auto& ga = g.grads_[na];
            constexpr double inv_sqrt_2pi = 0.3989422804014327;
            for (size_t i = 0; i < gc.size(); ++i) {
                const T x = xv[i];
                const T cdf = T(0.5) * (T(1) + std::erf(x * T(M_SQRT1_2)));
                const T pdf = static_cast<T>(inv_sqrt_2pi) *
                              std::exp(T(-0.5) * x * x);
                ga[i] += gc[i] * (cdf + x * pdf);
            }
        });
        return out;
    }

    // Gather rows of an embedding table; backward scatter-adds.
    Tensor& embedding_lookup(const Tensor& table, const std::vector<int>& ids) {
        require_2d(table, "embedding_lookup");
        if (ids.empty()) throw std::invalid_argument("embedding_lookup: no ids");
        const int64_t v = table.rows(), d = table.cols();
        for (int id : ids)
            if (id < 0 || id >= v)
                throw std::invalid_argument("embedding_lookup: id " + std::to_string(id) +
                                            " outside table of " + std::to_string(v));
        const int nt = node_of(table);
        Tensor& out = new_result({static_cast<int64_t>(ids.size()), d});
        for (size_t r = 0; r < ids.size(); ++r)
            std::memcpy(out.data().data() + static_cast<int64_t>(r) * d,
                        table.data().data() + static_cast<int64_t>(ids[r]) * d,
                        static_cast<size_t>(d) * sizeof(T));
        finish_node({nt}, out, [nt, ids, d](GraphT& g, int self) {
            const auto& gc = g.grads_[self];
            auto& gt = g.grads_[nt];
            for (size_t r = 0; r < ids.size(); ++r)
                for (int64_t j = 0; j < d; ++j)
                    gt[static_cast<int64_t>(ids[r]) * d + j] += gc[static_cast<int64_t>(r) * d + j];
        });
        return out;
    }

    // KL(p ‖ q) over flattened tensors. p is a constant target: terms with
    // p_i = 0 contribute exactly zero and no gradient flows into p. q is
    // clamped below before the log.
    static constexpr double kKlClampQ = 1e-12;

    Tensor& kl_divergence(const Tensor& p, const Tensor& q) {
        if (p.numel() != q.numel())
            throw std::invalid_argument("kl_divergence: length mismatch " +
                                        std::to_string(p.numel()) + " vs " +
                                        std::to_string(q.numel()));
        for (int64_t i = 0; i < p.numel(); ++i)
            if (p.at(i) < T(0))
                throw std::invalid_argument("kl_divergence: negative target mass");
        const int np = node_of(p), nq = node_of(q);
        Tensor& out = new_result({1});
        T acc = T(0);
        for (int64_t i = 0; i < p.numel(); ++i) {
            const T pi = p.at(i);
            if (pi > T(0)) {
                const T qc = std::max(q.at(i), static_cast<T>(kKlClampQ));
                acc += pi * (std::log(pi) - std::log(qc));
            }
        }
        out.at(0) = acc;
        finish_node({np, nq}, out, [np, nq](GraphT& g, int self) {
            const T gout = g.grads_[self][0];
            const auto& pv = g.nodes_[np].value->data();
            const auto& qv = g.nodes_[nq].value->data();
            auto& gq = g.grads_[nq];
            for (size_t i = 0; i < pv.size(); ++i) {
                if (pv[i] > T(0) && qv[i] >= static_cast<T>(kKlClampQ))
                    gq[i] -= gout * pv[i] / qv[i];
            }
        });
        return out;
    }

    // Mean over active rows of -log softmax(logits)[row, target].
    Tensor& cross_entropy_logits(const Tensor& logits, const std::vector<int>& targets,
                                 const std::vector<uint8_t>& active) {
        require_2d(logits, "cross_entropy_logits");
        const int64_t rows = logits.rows(), v = logits.cols();
        if (static_cast<int64_t>(targets.size()) != rows ||
            static_cast<int64_t>(active.size()) != rows)
            throw std::invalid_argument("cross_entropy_logits: targets/mask length vs " +
                                        std::to_string(rows) + " rows");
        int64_t m = 0;
        for (int64_t i = 0; i < rows; ++i) {
            if (!active[static_cast<size_t>(i)]) continue;
            ++m;
            if (targets[static_cast<size_t>(i)] < 0 || targets[static_cast<size_t>(i)] >= v)
                throw std::invalid_argument("cross_entropy_logits: target id " +
                                            std::to_string(targets[static_cast<size_t>(i)]) +
                                            " outside vocab " + std::to_string(v));
        }
        if (m == 0) throw std::invalid_argument("cross_entropy_logits: all positions masked");
        const int nl = node_of(logits);
        Tensor& out = new_result({1});
        T acc = T(0);
        for (int64_t i = 0; i < rows; ++i) {
            if (!active[static_cast<size_t>(i)]) continue;
            const T* row = logits.data().data() + i * v;
            T mx = row[0];
            for (int64_t j = 1; j < v; ++j) mx = std::max(mx, row[j]);
            T z = T(0);
            for (int64_t j = 0; j < v; ++j) z += std::exp(row[j] - mx);
            acc += std::log(z) + mx - row[targets[static_cast<size_t>(i)]];
        }
        out.at(0) = acc / static_cast<T>(m);
        finish_node({nl}, out, [nl, targets, active, rows, v, m](GraphT& g, int self) {
            const T gout = g.grads_[self][0] / static_cast<T>(m);
            const auto& x = g.nodes_[nl].value->data();
            auto& gx = g.grads_[nl];
            for (int64_t i = 0; i < rows; ++i) {
                if (!active[static_cast<size_t>(i)]) continue;
                const T* row = &x[static_cast<size_t>(i * v)];
                T mx = row[0];
                for (int64_t j = 1; j < v; ++j) mx = std::max(mx, row[j]);
                T z = T(0);
                for (int64_t j = 0; j < v; ++j) z += std::exp(row[j] - mx);
                for (int64_t j = 0; j < v; ++j) {
                    T p = std::exp(row[j] - mx) / z;
                    if (j == targets[static_cast<size_t>(i)]) p -= T(1);
                    gx[i * v + j] += gout * p;
                }
            }
        });
        return out;
    }

    Tensor& sum_all(const Tensor& a) {
        const int na = node_of(a);
        Tensor& out = new_result({1});
        T acc = T(0);
        for (int64_t i = 0; i < a.numel(); ++i) acc += a.at(i);
        out.at(0) = acc;
        finish_node({na}, out, [na](GraphT& g, int self) {
            const T gout = g.grads_[self][0];
            auto& ga = g.grads_[na];
            for (auto& x : ga) x += gout;
        });
        return out;
    }

    // Elementwise mean over same-shape tensors. Each element's addends are
    // summed in ascending value order, so the result is invariant to the
    // order of the inputs down to the last bit.
    Tensor& mean_stack(const std::vector<const Tensor*>& parts) {
        if (parts.empty()) throw std::invalid_argument("mean_stack: no inputs");
        std::vector<int> in;
        for (const Tensor* p : parts) {
            if (p->shape() != parts[0]->shape())
                throw std::invalid_argument("mean_stack: shape mismatch " +
                                            shape_to_string(p->shape()) + " vs " +
                                            shape_to_string(parts[0]->shape()));
            in.push_back(node_of(*p));
        }
        const T inv = T(1) / static_cast<T>(parts.size());
        Tensor& out = new_result(parts[0]->shape());
        std::vector<T> vals(parts.size());
        for (int64_t i = 0; i < out.numel(); ++i) {
            for (size_t k = 0; k < parts.size(); ++k) vals[k] = parts[k]->at(i);
            std::sort(vals.begin(), vals.end());
            T acc = T(0);
            for (const T v : vals) acc += v;
            out.at(i) = acc * inv;
        }
        finish_node(in, out, [in, inv](GraphT& g, int self) {
            const auto& gc = g.grads_[self];
            for (int idx : in) {
                auto& gi = g.grads_[idx];
                for (size_t i = 0; i < gc.size(); ++i) gi[i] += inv * gc[i];
            }
        });
        return out;
    }

    // Fixed-weight projection to a scalar.
    Tensor& weighted_sum(const Tensor& a, std::vector<T> weights) {
        if (static_cast<int64_t>(weights.size()) != a.numel())
            throw std::invalid_argument("weighted_sum: weight length mismatch");
        const int na = node_of(a);
        Tensor& out = new_result({1});
        T acc = T(0);
        for (int64_t i = 0; i < a.numel(); ++i) acc += weights[static_cast<size_t>(i)] * a.at(i);
        out.at(0) = acc;
        finish_node({na}, out, [na, weights](GraphT& g, int self) {
            const T gout = g.grads_[self][0];
            auto& ga = g.grads_[na];
            for (size_t i = 0; i < ga.size(); ++i) ga[i] += gout * weights[i];
        });
        return out;
    }

    // Reverse pass from a scalar loss over the subgraph that reaches it, then
    // merge leaf gradients. Calling twice on one graph is an error.
    void backward(const Tensor& loss) {
        backward_local(loss);
        merge_leaf_grads();
    }

    void backward_local(const Tensor& loss) {
        if (backward_done_)
            throw std::runtime_error("backward: already ran on this graph");
        if (loss.numel() != 1)
            throw std::invalid_argument("backward: loss must be scalar, got " +
                                        shape_to_string(loss.shape()));
        const auto it = index_.find(loss.id());
        if (it == index_.end())
            throw std::invalid_argument("backward: loss tensor is not part of this graph");
        const int root = it->second;

        reachable_.assign(nodes_.size(), 0);
        std::vector<int> stack{root};
        reachable_[static_cast<size_t>(root)] = 1;
        while (!stack.empty()) {
            const int cur = stack.back();
            stack.pop_back();
            for (int in : nodes_[static_cast<size_t>(cur)].inputs) {
                if (!reachable_[static_cast<size_t>(in)]) {
                    reachable_[static_cast<size_t>(in)] = 1;
                    stack.push_back(in);
                }
            }
        }

        grads_.assign(nodes_.size(), {});
        for (size_t i = 0; i < nodes_.size(); ++i)
            if (reachable_[i])
                grads_[i].assign(static_cast<size_t>(nodes_[i].value->numel()), T(0));
        grads_[static_cast<size_t>(root)][0] = T(1);

        for (int i = static_cast<int>(nodes_.size()) - 1; i >= 0; --i)
            if (reachable_[static_cast<size_t>(i)] && nodes_[static_cast<size_t>(i)].backward_fn)
                nodes_[static_cast<size_t>(i)].backward_fn(*this, i);
        backward_done_ = true;
    }

    // Accumulate computed leaf gradients into the leaf tensors. The caller
    // serializes this across graphs (single writer).
    void merge_leaf_grads() {
        if (!backward_done_)
            throw std::runtime_error("merge_leaf_grads: no backward pass on this graph");
        if (merged_) throw std::runtime_error("merge_leaf_grads: already merged");
        for (size_t i = 0; i < nodes_.size(); ++i) {
            const Node& nd = nodes_[i];
            if (nd.leaf && reachable_[i] && nd.value->requires_grad())
                nd.value->accumulate_grad(grads_[i]);
        }
        merged_ = true;
    }

    // Local gradient of any tensor used in this graph (after backward);
    // nullptr when the tensor is unknown or unreached.
    const std::vector<T>* local_grad(const TensorT<T>& t) const {
        const auto it = index_.find(t.id());
        if (it == index_.end()) return nullptr;
        if (!backward_done_ || !reachable_[static_cast<size_t>(it->second)]) return nullptr;
        return &grads_[static_cast<size_t>(it->second)];
    }

    size_t num_nodes() const { return nodes_.size(); }

private:
    // Minimal type-erased backward callable (std::function trips GCC 11 on
    // local lambda types inside class-template members).
    class BackFn {
        struct Base {
            virtual void run(GraphT&, int) = 0;
            virtual ~Base() = default;
        };
        template <class F>
        struct Impl final : Base {
            F f;
            explicit Impl(F g) : f(std::move(g)) {}
            void run(GraphT& g, int i) override { f(g, i); }
        };
        std::unique_ptr<Base> impl_;

    public:
        BackFn() = default;
        template <class F>
        BackFn(F f) : impl_(std::make_unique<Impl<F>>(std::move(f))) {}  // NOLINT
        explicit operator bool() const { return impl_ != nullptr; }
        void operator()(GraphT& g, int i) const { impl_->run(g, i); }
    };

    struct Node {
        std::vector<int> inputs;
        const Tensor* value = nullptr;
        BackFn backward_fn;
        bool leaf = false;
    };

    static void require_2d(const Tensor& t, const char* op) {
        if (t.ndim() != 2)
            throw std::invalid_argument(std::string(op) + ": expected 2-D tensor, got " +
                                        shape_to_string(t.shape()));
    }

    static void softmax_fill(const T* in, T* out, int64_t n) {
        T mx = in[0];
        for (int64_t j = 1; j < n; ++j) mx = std::max(mx, in[j]);
        T z = T(0);
        for (int64_t j = 0; j < n; ++j) {
            out[j] = std::exp(in[j] - mx);
            z += out[j];
        }
        for (int64_t j = 0; j < n; ++j) out[j] /= z;
    }

    int node_of(const Tensor& t) {
        const auto it = index_.find(t.id());
        if (it != index_.end()) return it->second;
        if (backward_done_)
            throw std::runtime_error("graph: op added after backward");
        Node nd;
        nd.value = &t;
        nd.leaf = true;
        nodes_.push_back(std::move(nd));
        const int idx = static_cast<int>(nodes_.size()) - 1;
        index_.emplace(t.id(), idx);
        return idx;
    }

    Tensor& new_result(std::vector<int64_t> shape) {
        owned_.emplace_back(std::move(shape));
        return owned_.back();
    }

    template <class F>
    void finish_node(std::vector<int> inputs, Tensor& out, F back) {
        if (backward_done_)
            throw std::runtime_error("graph: op added after backward");
        Node nd;
        nd.inputs = std::move(inputs);
        nd.value = &out;
        nd.backward_fn = BackFn(std::move(back));
        nodes_.push_back(std::move(nd));
        index_.emplace(out.id(), static_cast<int>(nodes_.size()) - 1);
    }

    std::deque<Tensor> owned_;
    std::vector<Node> nodes_;
    std::unordered_map<uint64_t, int> index_;
    std::vector<std::vector<T>> grads_;
    std::vector<char> reachable_;
    bool backward_done_ = false;
    bool merged_ = false;
};

using Graph = GraphT<double>;
using Graph32 = GraphT<float>;

template <class T>
void backward(const TensorT<T>& loss, GraphT<T>& graph) {
    graph.backward(loss);
}

// ---------------------------------------------------------------------------
// AdamW with decoupled weight decay and bias-corrected moments.

template <class T>
struct AdamWConfigT {
    T lr = T(1e-3);
    T beta1 = T(0.9);
    T beta2 = T(0.999);
    T eps = T(1e-8);
    T weight_decay = T(0);
};

using AdamWConfig = AdamWConfigT<double>;

template <class T>
class AdamWT {
public:
    void add_param(TensorT<T>* p, bool decay = true) {
        slots_.push_back({p, std::vector<T>(static_cast<size_t>(p->numel()), T(0)),
                          std::vector<T>(static_cast<size_t>(p->numel()), T(0)), decay});
    }

    // One update over all registered params. If any gradient is non-finite
    // the step is rejected: nothing is touched and the counter advances.
    bool step(const AdamWConfigT<T>& hp) {
        for (const Slot& s : slots_)
            if (s.p->has_grad() && !all_finite(s.p->grad())) {
                ++rejected_;
                return false;
            }
        ++t_;
        const T bc1 = T(1) - std::pow(hp.beta1, static_cast<T>(t_));
        const T bc2 = T(1) - std::pow(hp.beta2, static_cast<T>(t_));
        for (Slot& s : slots_) {
            auto& p = s.p->data();
            const auto& g = s.p->grad();
            const T wd = s.decay ? hp.weight_decay : T(0);
            for (size_t i = 0; i < p.size(); ++i) {
                const T gi = g[i];
                s.m[i] = hp.beta1 * s.m[i] + (T(1) - hp.beta1) * gi;
                s.v[i] = hp.beta2 * s.v[i] + (T(1) - hp.beta2) * gi * gi;
                const T mhat = s.m[i] / bc1;
                const T vhat = s.v[i] / bc2;
                p[i] -= hp.lr * (mhat / (std::sqrt(vhat) + hp.eps) + wd * p[i]);
            }
        }
        return true;
    }

    void zero_grads() {
        for (Slot& s : slots_) s.p->zero_grad();
    }

    int64_t steps_taken() const { return t_; }
    int64_t rejected_steps() const { return rejected_; }
    size_t num_params() const { return slots_.size(); }

private:
    struct Slot {
        TensorT<T>* p;
        std::vector<T> m, v;
        bool decay;
    };
    std::vector<Slot> slots_;
    int64_t t_ = 0;
    int64_t rejected_ = 0;
};

using AdamW = AdamWT<double>;

}  // namespace klal
