#pragma once

// Tensor substrate: n-d arrays with reverse-mode autodiff, plus the
// deterministic RNG used everywhere. Training paths instantiate float,
// gradient-check paths instantiate double.

#include <algorithm>
#include <cassert>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <functional>
#include <memory>
#include <numeric>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

namespace deimv2 {

using Shape = std::vector<int>;

inline int64_t numel(const Shape& s) {
    int64_t n = 1;
    for (int e : s) n *= e;
    return n;
}

inline std::string shape_str(const Shape& s) {
    std::string r = "[";
    for (size_t i = 0; i < s.size(); ++i) r += (i ? "," : "") + std::to_string(s[i]);
    return r + "]";
}

inline void check(bool cond, const std::string& msg) {
    if (!cond) throw std::runtime_error(msg);
}

// splitmix64-based RNG; portable and stable across platforms.
class Rng {
public:
    explicit Rng(uint64_t seed = 0) : state_(seed) {}

    uint64_t next_u64() {
        uint64_t z = (state_ += 0x9e3779b97f4a7c15ULL);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }
    // uniform in [0,1)
    double uniform() { return double(next_u64() >> 11) * 0x1.0p-53; }
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
    int uniform_int(int lo, int hi) {  // inclusive bounds
        return lo + int(next_u64() % uint64_t(hi - lo + 1));
    }
    double normal() {
        double u1 = uniform(), u2 = uniform();
        if (u1 < 1e-300) u1 = 1e-300;
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
    }
    uint64_t state() const { return state_; }
    void set_state(uint64_t s) { state_ = s; }

private:
    uint64_t state_;
};

// stable hash combine for per-sample seeds
inline uint64_t hash_mix(uint64_t a, uint64_t b) {
    uint64_t z = a + 0x9e3779b97f4a7c15ULL + (b << 6) + (b >> 2);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}
inline uint64_t sample_seed(uint64_t global_seed, int epoch, int sample_index) {
    return hash_mix(hash_mix(global_seed, uint64_t(epoch) + 1), uint64_t(sample_index) + 1);
}

template <typename T>
struct Node {
    Shape shape;
    std::vector<T> val;
    std::vector<T> grad;   // allocated lazily, same size as val
    bool requires_grad = false;
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void(Node&)> backward;  // accumulate this->grad into parents
    const char* op = "leaf";

    void ensure_grad() {
        if (grad.size() != val.size()) grad.assign(val.size(), T(0));
    }
    bool is_leaf() const { return parents.empty(); }
};

template <typename T>
class TensorT {
public:
    TensorT() = default;
    explicit TensorT(std::shared_ptr<Node<T>> n) : n_(std::move(n)) {}

    static TensorT zeros(const Shape& s, bool requires_grad = false) {
        return filled(s, T(0), requires_grad);
    }
    static TensorT filled(const Shape& s, T v, bool requires_grad = false) {
        auto n = std::make_shared<Node<T>>();
        n->shape = s;
        n->val.assign(size_t(numel(s)), v);
        n->requires_grad = requires_grad;
        return TensorT(std::move(n));
    }
    static TensorT from(const Shape& s, std::vector<T> data, bool requires_grad = false) {
        check(int64_t(data.size()) == numel(s), "tensor data size " + std::to_string(data.size()) +
              " does not match shape " + shape_str(s));
        auto n = std::make_shared<Node<T>>();
        n->shape = s;
        n->val = std::move(data);
        n->requires_grad = requires_grad;
        return TensorT(std::move(n));
    }
    static TensorT scalar(T v) { return filled({1}, v); }

    bool defined() const { return n_ != nullptr; }
    const Shape& shape() const { return n_->shape; }
    int dim(int i) const { return n_->shape[size_t(i)]; }
    int ndim() const { return int(n_->shape.size()); }
    int64_t size() const { return int64_t(n_->val.size()); }
    std::vector<T>& data() { return n_->val; }
    const std::vector<T>& data() const { return n_->val; }
    std::vector<T>& grad() { n_->ensure_grad(); return n_->grad; }
    bool requires_grad() const { return n_->requires_grad; }
    T item() const { check(size() == 1, "item() on non-scalar"); return n_->val[0]; }
    std::shared_ptr<Node<T>> node() const { return n_; }

    // value copy with no graph history
    TensorT detach() const {
        auto n = std::make_shared<Node<T>>();
        n->shape = n_->shape;
        n->val = n_->val;
        n->requires_grad = false;
        return TensorT(std::move(n));
    }

private:
    std::shared_ptr<Node<T>> n_;
};

using Tensor = TensorT<float>;

namespace detail {

template <typename T>
std::shared_ptr<Node<T>> make_op(const char* op, const Shape& shape,
                                 std::vector<std::shared_ptr<Node<T>>> parents) {
    auto n = std::make_shared<Node<T>>();
    n->shape = shape;
    n->val.resize(size_t(numel(shape)));
    n->op = op;
    bool rg = false;
    for (auto& p : parents) rg = rg || p->requires_grad;
    n->requires_grad = rg;
    n->parents = std::move(parents);
    return n;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// backward pass: reverse topological order, each node visited exactly once.
// Gradients of leaf nodes accumulate across calls (running twice doubles
// them); interior gradients are freshly zeroed per call.
template <typename T>
void backward(const TensorT<T>& loss) {
    check(loss.size() == 1, "backward requires a scalar loss");
    std::vector<Node<T>*> order;
    std::vector<std::pair<Node<T>*, size_t>> stack;
    // iterative DFS post-order
    enum : uint8_t { kOpen = 1, kDone = 2 };
    std::unordered_map<Node<T>*, uint8_t> mark;
    stack.push_back({loss.node().get(), 0});
    while (!stack.empty()) {
        auto& [n, i] = stack.back();
        if (i == 0) {
            auto& m = mark[n];
            if (m) { stack.pop_back(); continue; }
            m = kOpen;
        }
        if (i < n->parents.size()) {
            Node<T>* p = n->parents[i].get();
            ++i;
            if (!mark[p]) stack.push_back({p, 0});
        } else {
            mark[n] = kDone;
            order.push_back(n);
            stack.pop_back();
        }
    }
    for (Node<T>* n : order) {
        if (!n->is_leaf()) n->grad.assign(n->val.size(), T(0));
        else n->ensure_grad();
    }
    loss.node()->grad[0] += T(1);
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node<T>* n = *it;
        if (n->backward && n->requires_grad) n->backward(*n);
    }
}

// ---------------------------------------------------------------------------
// elementwise ops

template <typename T>
TensorT<T> add(const TensorT<T>& a, const TensorT<T>& b) {
    check(a.shape() == b.shape(), "add: shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    auto n = detail::make_op<T>("add", a.shape(), {a.node(), b.node()});
    const auto& av = a.data(); const auto& bv = b.data();
    for (size_t i = 0; i < n->val.size(); ++i) n->val[i] = av[i] + bv[i];
    if (n->requires_grad) n->backward = [](Node<T>& s) {
        for (int k = 0; k < 2; ++k) if (s.parents[size_t(k)]->requires_grad) {
            auto& p = *s.parents[size_t(k)]; p.ensure_grad();
            for (size_t i = 0; i < s.grad.size(); ++i) p.grad[i] += s.grad[i];
        }
    };
    return TensorT<T>(n);
}

template <typename T>
TensorT<T> sub(const TensorT<T>& a, const TensorT<T>& b) {
    check(a.shape() == b.shape(), "sub: shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    auto n = detail::make_op<T>("sub", a.shape(), {a.node(), b.node()});
    const auto& av = a.data(); const auto& bv = b.data();
    for (size_t i = 0; i < n->val.size(); ++i) n->val[i] = av[i] - bv[i];
    if (n->requires_grad) n->backward = [](Node<T>& s) {
        if (s.parents[0]->requires_grad) {
            auto& p = *s.parents[0]; p.ensure_grad();
            for (size_t i = 0; i < s.grad.size(); ++i) p.grad[i] += s.grad[i];
        }
        if (s.parents[1]->requires_grad) {
            auto& p = *s.parents[1]; p.ensure_grad();
            for (size_t i = 0; i < s.grad.size(); ++i) p.grad[i] -= s.grad[i];
        }
    };
    return TensorT<T>(n);
}

template <typename T>
TensorT<T> mul(const TensorT<T>& a, const TensorT<T>& b) {
    check(a.shape() == b.shape(), "mul: shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    auto n = detail::make_op<T>("mul", a.shape(), {a.node(), b.node()});
    const auto& av = a.data(); const auto& bv = b.data();
    for (size_t i = 0; i < n->val.size(); ++i) n->val[i] = av[i] * bv[i];
    if (n->requires_grad) n->backward = [](Node<T>& s) {
        auto& a = *s.parents[0]; auto& b = *s.parents[1];
        if (a.requires_grad) {
            a.ensure_grad();
            for (size_t i = 0; i < s.grad.size(); ++i) a.grad[i] += s.grad[i] * b.val[i];
        }
        if (b.requires_grad) {
            b.ensure_grad();
            for (size_t i = 0; i < s.grad.size(); ++i) b.grad[i] += s.grad[i] * a.val[i];
        }
    };
    return TensorT<T>(n);
}

// elementwise minimum / maximum; ties route the gradient to the first operand
template <typename T>
TensorT<T> min_e(const TensorT<T>& a, const TensorT<T>& b) {
    check(a.shape() == b.shape(), "min_e: shape mismatch");
    auto n = detail::make_op<T>("min", a.shape(), {a.node(), b.node()});
    for (size_t i = 0; i < n->val.size(); ++i) n->val[i] = std::min(a.data()[i], b.data()[i]);
    if (n->requires_grad) n->backward = [](Node<T>& s) {
        auto& a = *s.parents[0]; auto& b = *s.parents[1];
        if (a.requires_grad) a.ensure_grad();
        if (b.requires_grad) b.ensure_grad();
        for (size_t i = 0; i < s.grad.size(); ++i) {
            if (a.val[i] <= b.val[i]) { if (a.requires_grad) a.grad[i] += s.grad[i]; }
            else                      { if (b.requires_grad) b.grad[i] += s.grad[i]; }
        }
    };
    return TensorT<T>(n);
}

template <typename T>
TensorT<T> max_e(const TensorT<T>& a, const TensorT<T>& b) {
    check(a.shape() == b.shape(), "max_e: shape mismatch");
    auto n = detail::make_op<T>("max", a.shape(), {a.node(), b.node()});
    for (size_t i = 0; i < n->val.size(); ++i) n->val[i] = std::max(a.data()[i], b.data()[i]);
    if (n->requires_grad) n->backward = [](Node<T>& s) {
        auto& a = *s.parents[0]; auto& b = *s.parents[1];
        if (a.requires_grad) a.ensure_grad();
        if (b.requires_grad) b.ensure_grad();
        for (size_t i = 0; i < s.grad.size(); ++i) {
            if (a.val[i] >= b.val[i]) { if (a.requires_grad) a.grad[i] += s.grad[i]; }
            else                      { if (b.requires_grad) b.grad[i] += s.grad[i]; }
        }
    };
    return TensorT<T>(n);
}

template <typename T, typename FwdFn, typename DFn>
TensorT<T> unary_op(const char* name, const TensorT<T>& a, FwdFn f, DFn dfdx) {
    auto n = detail::make_op<T>(name, a.shape(), {a.node()});
    const auto& av = a.data();
    for (size_t i = 0; i < n->val.size(); ++i) n->val[i] = f(av[i]);
    if (n->requires_grad) n->backward = [dfdx](Node<T>& s) {
        auto& p = *s.parents[0];
        if (!p.requires_grad) return;
        p.ensure_grad();
        for (size_t i = 0; i < s.grad.size(); ++i) p.grad[i] += s.grad[i] * dfdx(p.val[i], s.val[i]);
    };
    return TensorT<T>(n);
}

template <typename T> TensorT<T> neg(const TensorT<T>& a) {
    return unary_op<T>("neg", a, [](T x) { return -x; }, [](T, T) { return T(-1); });
}
template <typename T> TensorT<T> exp_e(const TensorT<T>& a) {
    return unary_op<T>("exp", a, [](T x) { return std::exp(x); }, [](T, T y) { return y; });
}
template <typename T> TensorT<T> log_e(const TensorT<T>& a) {
    return unary_op<T>("log", a, [](T x) { return std::log(x); }, [](T x, T) { return T(1) / x; });
}
template <typename T> TensorT<T> sqrt_e(const TensorT<T>& a) {
    return unary_op<T>("sqrt", a, [](T x) { return std::sqrt(x); },
                       [](T, T y) { return T(0.5) / (y > T(0) ? y : T(1e-12)); });
}
template <typename T> TensorT<T> sigmoid(const TensorT<T>& a) {
    return unary_op<T>("sigmoid", a,
        [](T x) { return x >= T(0) ? T(1) / (T(1) + std::exp(-x)) : std::exp(x) / (T(1) + std::exp(x)); },
        [](T, T y) { return y * (T(1) - y); });
}
template <typename T> TensorT<T> silu(const TensorT<T>& a) {  // x * sigmoid(x), a.k.a. swish
    return unary_op<T>("silu", a,
        [](T x) { T s = x >= T(0) ? T(1) / (T(1) + std::exp(-x)) : std::exp(x) / (T(1) + std::exp(x)); return x * s; },
        [](T x, T) {
            T s = x >= T(0) ? T(1) / (T(1) + std::exp(-x)) : std::exp(x) / (T(1) + std::exp(x));
            return s * (T(1) + x * (T(1) - s));
        });
}
template <typename T> TensorT<T> gelu(const TensorT<T>& a) {  // tanh approximation
    return unary_op<T>("gelu", a,
        [](T x) {
            T c = T(0.7978845608028654);  // sqrt(2/pi)
            T t = std::tanh(c * (x + T(0.044715) * x * x * x));
            return T(0.5) * x * (T(1) + t);
        },
        [](T x, T) {
            T c = T(0.7978845608028654);
            T u = c * (x + T(0.044715) * x * x * x);
            T t = std::tanh(u);
            T du = c * (T(1) + T(0.134145) * x * x);
            return T(0.5) * (T(1) + t) + T(0.5) * x * (T(1) - t * t) * du;
        });
}
template <typename T> TensorT<T> softplus(const TensorT<T>& a) {  // log(1 + e^x), overflow-safe
    return unary_op<T>("softplus", a,
        [](T x) { return std::log1p(std::exp(-std::abs(x))) + std::max(x, T(0)); },
        [](T x, T) { return x >= T(0) ? T(1) / (T(1) + std::exp(-x)) : std::exp(x) / (T(1) + std::exp(x)); });
}
template <typename T> TensorT<T> pow_scalar(const TensorT<T>& a, T p) {
    return unary_op<T>("pow", a, [p](T x) { return std::pow(x, p); },
                       [p](T x, T) { return x > T(0) ? p * std::pow(x, p - T(1)) : T(0); });
}
template <typename T> TensorT<T> add_scalar(const TensorT<T>& a, T c) {
    return unary_op<T>("adds", a, [c](T x) { return x + c; }, [](T, T) { return T(1); });
}
template <typename T> TensorT<T> mul_scalar(const TensorT<T>& a, T c) {
    return unary_op<T>("muls", a, [c](T x) { return x * c; }, [c](T, T) { return c; });
}
template <typename T> TensorT<T> abs_e(const TensorT<T>& a) {
    return unary_op<T>("abs", a, [](T x) { return std::abs(x); },
                       [](T x, T) { return x > T(0) ? T(1) : (x < T(0) ? T(-1) : T(0)); });
}
// gradient passes through inside the interval, zero outside
template <typename T> TensorT<T> clamp(const TensorT<T>& a, T lo, T hi) {
    return unary_op<T>("clamp", a, [lo, hi](T x) { return std::min(hi, std::max(lo, x)); },
                       [lo, hi](T x, T) { return (x >= lo && x <= hi) ? T(1) : T(0); });
}

// multiply row r of x[N,d] by constant w[r] (weights carry no gradient)
template <typename T>
TensorT<T> scale_rows_const(const TensorT<T>& x, const std::vector<T>& w) {
    check(x.ndim() == 2 && int(w.size()) == x.dim(0), "scale_rows_const: bad weights");
    auto n = detail::make_op<T>("scale_rows", x.shape(), {x.node()});
    int N = x.dim(0), d = x.dim(1);
    for (int r = 0; r < N; ++r)
        for (int c = 0; c < d; ++c) n->val[size_t(r * d + c)] = x.data()[size_t(r * d + c)] * w[size_t(r)];
    if (n->requires_grad) n->backward = [w, d](Node<T>& s) {
        auto& p = *s.parents[0];
        if (!p.requires_grad) return;
        p.ensure_grad();
        int N = s.shape[0];
        for (int r = 0; r < N; ++r)
            for (int c = 0; c < d; ++c) p.grad[size_t(r * d + c)] += s.grad[size_t(r * d + c)] * w[size_t(r)];
    };
    return TensorT<T>(n);
}

// ---------------------------------------------------------------------------
// reductions and shape ops

template <typename T>
TensorT<T> sum_all(const TensorT<T>& a) {
    auto n = detail::make_op<T>("sum", {1}, {a.node()});
    T s = 0;
    for (T v : a.data()) s += v;
    n->val[0] = s;
    if (n->requires_grad) n->backward = [](Node<T>& s) {
        auto& p = *s.parents[0];
        if (!p.requires_grad) return;
        p.ensure_grad();
        for (size_t i = 0; i < p.grad.size(); ++i) p.grad[i] += s.grad[0];
    };
    return TensorT<T>(n);
}

template <typename T>
TensorT<T> mean_all(const TensorT<T>& a) {
    return mul_scalar(sum_all(a), T(1) / T(a.size()));
}

template <typename T>
TensorT<T> reshape(const TensorT<T>& a, const Shape& s) {
    check(numel(s) == a.size(), "reshape: element count mismatch " + shape_str(a.shape()) + " -> " + shape_str(s));
    auto n = detail::make_op<T>("reshape", s, {a.node()});
    n->val = a.data();
    if (n->requires_grad) n->backward = [](Node<T>& s) {
        auto& p = *s.parents[0];
        if (!p.requires_grad) return;
        p.ensure_grad();
        for (size_t i = 0; i < s.grad.size(); ++i) p.grad[i] += s.grad[i];
    };
    return TensorT<T>(n);
}

// concatenate along axis 0; trailing dims must agree
template <typename T>
TensorT<T> concat0(const std::vector<TensorT<T>>& xs) {
    check(!xs.empty(), "concat0: empty input");
    Shape s = xs[0].shape();
    int64_t rest = numel(s) / s[0];
    int total = 0;
    std::vector<std::shared_ptr<Node<T>>> parents;
    for (auto& x : xs) {
        check(numel(x.shape()) / x.shape()[0] == rest, "concat0: trailing dims mismatch");
        total += x.shape()[0];
        parents.push_back(x.node());
    }
    s[0] = total;
    auto n = detail::make_op<T>("concat0", s, std::move(parents));
    size_t off = 0;
    for (auto& x : xs) {
        std::copy(x.data().begin(), x.data().end(), n->val.begin() + long(off));
        off += x.data().size();
    }
    if (n->requires_grad) n->backward = [](Node<T>& s) {
        size_t off = 0;
        for (auto& pp : s.parents) {
            auto& p = *pp;
            if (p.requires_grad) {
                p.ensure_grad();
                for (size_t i = 0; i < p.val.size(); ++i) p.grad[i] += s.grad[off + i];
            }
            off += p.val.size();
        }
    };
    return TensorT<T>(n);
}

// rows [from, to) of a 2-d (or n-d, axis 0) tensor
template <typename T>
TensorT<T> slice0(const TensorT<T>& x, int from, int to) {
    check(from >= 0 && to <= x.shape()[0] && from < to, "slice0: bad range");
    Shape s = x.shape();
    s[0] = to - from;
    int64_t rest = numel(x.shape()) / x.shape()[0];
    auto n = detail::make_op<T>("slice0", s, {x.node()});
    std::copy(x.data().begin() + from * rest, x.data().begin() + to * rest, n->val.begin());
    if (n->requires_grad) n->backward = [from, rest](Node<T>& s) {
        auto& p = *s.parents[0];
        if (!p.requires_grad) return;
        p.ensure_grad();
        for (size_t i = 0; i < s.grad.size(); ++i) p.grad[size_t(from * rest) + i] += s.grad[i];
    };
    return TensorT<T>(n);
}

// gather rows of x[N,...] by index; backward scatter-adds
template <typename T>
TensorT<T> gather0(const TensorT<T>& x, const std::vector<int>& idx) {
    Shape s = x.shape();
    int64_t rest = numel(s) / s[0];
    for (int i : idx) check(i >= 0 && i < s[0], "gather0: index out of range");
    s[0] = int(idx.size());
    auto n = detail::make_op<T>("gather0", s, {x.node()});
    for (size_t r = 0; r < idx.size(); ++r)
        std::copy(x.data().begin() + idx[r] * rest, x.data().begin() + (idx[r] + 1) * rest,
                  n->val.begin() + int64_t(r) * rest);
    if (n->requires_grad) n->backward = [idx, rest](Node<T>& s) {
        auto& p = *s.parents[0];
        if (!p.requires_grad) return;
        p.ensure_grad();
        for (size_t r = 0; r < idx.size(); ++r)
            for (int64_t c = 0; c < rest; ++c)
                p.grad[size_t(idx[r] * rest + c)] += s.grad[size_t(int64_t(r) * rest + c)];
    };
    return TensorT<T>(n);
}

// columns [c0, c1) of x[N,d]
template <typename T>
TensorT<T> slice_cols(const TensorT<T>& x, int c0, int c1) {
    check(x.ndim() == 2 && c0 >= 0 && c1 <= x.dim(1) && c0 < c1, "slice_cols: bad range");
    int N = x.dim(0), d = x.dim(1), w = c1 - c0;
    auto n = detail::make_op<T>("slice_cols", {N, w}, {x.node()});
    for (int r = 0; r < N; ++r)
        std::copy(x.data().begin() + size_t(r) * d + c0, x.data().begin() + size_t(r) * d + c1,
                  n->val.begin() + size_t(r) * w);
    if (n->requires_grad) n->backward = [c0, d, w](Node<T>& s) {
        auto& p = *s.parents[0];
        if (!p.requires_grad) return;
        p.ensure_grad();
        int N = s.shape[0];
        for (int r = 0; r < N; ++r)
            for (int c = 0; c < w; ++c)
                p.grad[size_t(r) * d + c0 + c] += s.grad[size_t(r) * w + c];
    };
    return TensorT<T>(n);
}

// concatenate 2-d tensors along columns
template <typename T>
TensorT<T> concat_cols(const std::vector<TensorT<T>>& xs) {
    check(!xs.empty(), "concat_cols: empty input");
    int N = xs[0].dim(0), total = 0;
    std::vector<std::shared_ptr<Node<T>>> parents;
    for (auto& x : xs) {
        check(x.ndim() == 2 && x.dim(0) == N, "concat_cols: row count mismatch");
        total += x.dim(1);
        parents.push_back(x.node());
    }
    auto n = detail::make_op<T>("concat_cols", {N, total}, std::move(parents));
    int off = 0;
    for (auto& x : xs) {
        int d = x.dim(1);
        for (int r = 0; r < N; ++r)
            std::copy(x.data().begin() + size_t(r) * d, x.data().begin() + size_t(r + 1) * d,
                      n->val.begin() + size_t(r) * total + off);
        off += d;
    }
    if (n->requires_grad) n->backward = [total](Node<T>& s) {
        int N = s.shape[0], off = 0;
        for (auto& pp : s.parents) {
            auto& p = *pp;
            int d = p.shape[1];
            if (p.requires_grad) {
                p.ensure_grad();
                for (int r = 0; r < N; ++r)
                    for (int c = 0; c < d; ++c)
                        p.grad[size_t(r) * d + c] += s.grad[size_t(r) * total + off + c];
            }
            off += d;
        }
    };
    return TensorT<T>(n);
}

// y[r,c] = x[r,c] * w[r], w differentiable
template <typename T>
TensorT<T> mul_colvec(const TensorT<T>& x, const TensorT<T>& w) {
    check(x.ndim() == 2 && w.ndim() == 1 && w.dim(0) == x.dim(0), "mul_colvec: shape mismatch");
    int N = x.dim(0), d = x.dim(1);
    auto n = detail::make_op<T>("mul_colvec", x.shape(), {x.node(), w.node()});
    for (int r = 0; r < N; ++r)
        for (int c = 0; c < d; ++c)
            n->val[size_t(r) * d + c] = x.data()[size_t(r) * d + c] * w.data()[size_t(r)];
    if (n->requires_grad) n->backward = [N, d](Node<T>& s) {
        auto& x = *s.parents[0]; auto& w = *s.parents[1];
        if (x.requires_grad) {
            x.ensure_grad();
            for (int r = 0; r < N; ++r)
                for (int c = 0; c < d; ++c) x.grad[size_t(r) * d + c] += s.grad[size_t(r) * d + c] * w.val[size_t(r)];
        }
        if (w.requires_grad) {
            w.ensure_grad();
            for (int r = 0; r < N; ++r) {
                T acc = 0;
                for (int c = 0; c < d; ++c) acc += s.grad[size_t(r) * d + c] * x.val[size_t(r) * d + c];
                w.grad[size_t(r)] += acc;
            }
        }
    };
    return TensorT<T>(n);
}

// elementwise x * c and x + c with a constant (no gradient to c)
template <typename T>
TensorT<T> mul_const(const TensorT<T>& x, std::vector<T> c) {
    check(int64_t(c.size()) == x.size(), "mul_const: size mismatch");
    auto n = detail::make_op<T>("mul_const", x.shape(), {x.node()});
    for (size_t i = 0; i < n->val.size(); ++i) n->val[i] = x.data()[i] * c[i];
    if (n->requires_grad) n->backward = [c = std::move(c)](Node<T>& s) {
        auto& p = *s.parents[0];
        if (!p.requires_grad) return;
        p.ensure_grad();
        for (size_t i = 0; i < s.grad.size(); ++i) p.grad[i] += s.grad[i] * c[i];
    };
    return TensorT<T>(n);
}
template <typename T>
TensorT<T> add_const(const TensorT<T>& x, std::vector<T> c) {
    check(int64_t(c.size()) == x.size(), "add_const: size mismatch");
    auto n = detail::make_op<T>("add_const", x.shape(), {x.node()});
    for (size_t i = 0; i < n->val.size(); ++i) n->val[i] = x.data()[i] + c[i];
    if (n->requires_grad) n->backward = [](Node<T>& s) {
        auto& p = *s.parents[0];
        if (!p.requires_grad) return;
        p.ensure_grad();
        for (size_t i = 0; i < s.grad.size(); ++i) p.grad[i] += s.grad[i];
    };
    return TensorT<T>(n);
}

// sum consecutive groups of g rows: [N*g, d] -> [N, d]
template <typename T>
TensorT<T> sum_row_groups(const TensorT<T>& x, int g) {
    check(x.ndim() == 2 && x.dim(0) % g == 0, "sum_row_groups: rows not divisible");
    int N = x.dim(0) / g, d = x.dim(1);
    auto n = detail::make_op<T>("sum_groups", {N, d}, {x.node()});
    std::fill(n->val.begin(), n->val.end(), T(0));
    for (int r = 0; r < N; ++r)
        for (int k = 0; k < g; ++k)
            for (int c = 0; c < d; ++c)
                n->val[size_t(r) * d + c] += x.data()[(size_t(r) * g + k) * d + c];
    if (n->requires_grad) n->backward = [N, g, d](Node<T>& s) {
        auto& p = *s.parents[0];
        if (!p.requires_grad) return;
        p.ensure_grad();
        for (int r = 0; r < N; ++r)
            for (int k = 0; k < g; ++k)
                for (int c = 0; c < d; ++c)
                    p.grad[(size_t(r) * g + k) * d + c] += s.grad[size_t(r) * d + c];
    };
    return TensorT<T>(n);
}

// ---------------------------------------------------------------------------
// matmul / linear

template <typename T>
TensorT<T> matmul(const TensorT<T>& a, const TensorT<T>& b) {
    check(a.ndim() == 2 && b.ndim() == 2, "matmul: need 2-d operands");
    check(a.dim(1) == b.dim(0), "matmul: inner extents disagree " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
    int M = a.dim(0), K = a.dim(1), N = b.dim(1);
    auto n = detail::make_op<T>("matmul", {M, N}, {a.node(), b.node()});
    const T* A = a.data().data();
    const T* B = b.data().data();
    T* C = n->val.data();
    std::fill(C, C + size_t(M) * size_t(N), T(0));
#pragma omp parallel for schedule(static) if (int64_t(M) * N * K > 262144)
    for (int i = 0; i < M; ++i) {
        for (int k = 0; k < K; ++k) {
            T av = A[size_t(i) * K + k];
            const T* brow = B + size_t(k) * N;
            T* crow = C + size_t(i) * N;
            for (int j = 0; j < N; ++j) crow[j] += av * brow[j];
        }
    }
    if (n->requires_grad) n->backward = [M, K, N](Node<T>& s) {
        auto& a = *s.parents[0]; auto& b = *s.parents[1];
        const T* G = s.grad.data();
        if (a.requires_grad) {  // dA = G * B^T
            a.ensure_grad();
            const T* B = b.val.data();
            T* dA = a.grad.data();
#pragma omp parallel for schedule(static) if (int64_t(M) * N * K > 262144)
            for (int i = 0; i < M; ++i)
                for (int j = 0; j < N; ++j) {
                    T g = G[size_t(i) * N + j];
                    const T* brow = B + size_t(0) * N;
                    (void)brow;
                    for (int k = 0; k < K; ++k) dA[size_t(i) * K + k] += g * B[size_t(k) * N + j];
                }
        }
        if (b.requires_grad) {  // dB = A^T * G
            b.ensure_grad();
            const T* A = a.val.data();
            T* dB = b.grad.data();
#pragma omp parallel for schedule(static) if (int64_t(M) * N * K > 262144)
            for (int k = 0; k < K; ++k)
                for (int i = 0; i < M; ++i) {
                    T av = A[size_t(i) * K + k];
                    const T* grow = G + size_t(i) * N;
                    T* brow = dB + size_t(k) * N;
                    for (int j = 0; j < N; ++j) brow[j] += av * grow[j];
                }
        }
    };
    return TensorT<T>(n);
}

// y[N,d] = x[N,d] + b[d]
template <typename T>
TensorT<T> add_rowvec(const TensorT<T>& x, const TensorT<T>& b) {
    check(x.ndim() == 2 && b.ndim() == 1 && b.dim(0) == x.dim(1), "add_rowvec: shape mismatch");
    auto n = detail::make_op<T>("addrv", x.shape(), {x.node(), b.node()});
    int N = x.dim(0), d = x.dim(1);
    for (int r = 0; r < N; ++r)
        for (int c = 0; c < d; ++c)
            n->val[size_t(r * d + c)] = x.data()[size_t(r * d + c)] + b.data()[size_t(c)];
    if (n->requires_grad) n->backward = [N, d](Node<T>& s) {
        auto& x = *s.parents[0]; auto& b = *s.parents[1];
        if (x.requires_grad) {
            x.ensure_grad();
            for (size_t i = 0; i < s.grad.size(); ++i) x.grad[i] += s.grad[i];
        }
        if (b.requires_grad) {
            b.ensure_grad();
            for (int r = 0; r < N; ++r)
                for (int c = 0; c < d; ++c) b.grad[size_t(c)] += s.grad[size_t(r * d + c)];
        }
    };
    return TensorT<T>(n);
}

// y = x W (+ b);  x:[N,d_in]  W:[d_in,d_out]  b:[d_out]
template <typename T>
TensorT<T> linear(const TensorT<T>& x, const TensorT<T>& W, const TensorT<T>* b = nullptr) {
    check(x.ndim() == 2 && W.ndim() == 2, "linear: need 2-d x and W");
    check(x.dim(1) == W.dim(0), "linear: shape mismatch " + shape_str(x.shape()) + " x " + shape_str(W.shape()));
    auto y = matmul(x, W);
    if (b) y = add_rowvec(y, *b);
    return y;
}

template <typename T>
TensorT<T> transpose2d(const TensorT<T>& a) {
    check(a.ndim() == 2, "transpose2d: need 2-d");
    int M = a.dim(0), N = a.dim(1);
    auto n = detail::make_op<T>("transpose", {N, M}, {a.node()});
    for (int i = 0; i < M; ++i)
        for (int j = 0; j < N; ++j) n->val[size_t(j) * M + i] = a.data()[size_t(i) * N + j];
    if (n->requires_grad) n->backward = [M, N](Node<T>& s) {
        auto& p = *s.parents[0];
        if (!p.requires_grad) return;
        p.ensure_grad();
        for (int i = 0; i < M; ++i)
            for (int j = 0; j < N; ++j) p.grad[size_t(i) * N + j] += s.grad[size_t(j) * M + i];
    };
    return TensorT<T>(n);
}

// ---------------------------------------------------------------------------
// softmax over the last axis, max-subtracted for stability
template <typename T>
TensorT<T> softmax(const TensorT<T>& x) {
    check(x.ndim() >= 1, "softmax: need at least 1-d");
    int d = x.shape().back();
    check(d >= 1, "softmax: empty axis");
    int64_t rows = x.size() / d;
    auto n = detail::make_op<T>("softmax", x.shape(), {x.node()});
    for (int64_t r = 0; r < rows; ++r) {
        const T* in = x.data().data() + r * d;
        T* out = n->val.data() + r * d;
        T mx = in[0];
        for (int i = 1; i < d; ++i) mx = std::max(mx, in[i]);
        T s = 0;
        for (int i = 0; i < d; ++i) { out[i] = std::exp(in[i] - mx); s += out[i]; }
        T inv = T(1) / s;
        for (int i = 0; i < d; ++i) out[i] *= inv;
    }
    if (n->requires_grad) n->backward = [d, rows](Node<T>& s) {
        auto& p = *s.parents[0];
        if (!p.requires_grad) return;
        p.ensure_grad();
        for (int64_t r = 0; r < rows; ++r) {
            const T* y = s.val.data() + r * d;
            const T* g = s.grad.data() + r * d;
            T* dx = p.grad.data() + r * d;
            T dot = 0;
            for (int i = 0; i < d; ++i) dot += y[i] * g[i];
            for (int i = 0; i < d; ++i) dx[i] += y[i] * (g[i] - dot);
        }
    };
    return TensorT<T>(n);
}

// y = gain * x / sqrt(mean(x^2) + eps), over the last axis; no mean subtraction
template <typename T>
TensorT<T> rms_norm(const TensorT<T>& x, const TensorT<T>& gain, T eps = T(1e-6)) {
    int d = x.shape().back();
    check(gain.ndim() == 1 && gain.dim(0) == d, "rms_norm: gain must be [last_dim]");
    int64_t rows = x.size() / d;
    auto n = detail::make_op<T>("rmsnorm", x.shape(), {x.node(), gain.node()});
    for (int64_t r = 0; r < rows; ++r) {
        const T* in = x.data().data() + r * d;
        T* out = n->val.data() + r * d;
        T ms = 0;
        for (int i = 0; i < d; ++i) ms += in[i] * in[i];
        ms = ms / T(d) + eps;
        T inv = T(1) / std::sqrt(ms);
        for (int i = 0; i < d; ++i) out[i] = gain.data()[size_t(i)] * in[i] * inv;
    }
    if (n->requires_grad) n->backward = [d, rows, eps](Node<T>& s) {
        auto& x = *s.parents[0]; auto& g = *s.parents[1];
        if (x.requires_grad) x.ensure_grad();
        if (g.requires_grad) g.ensure_grad();
        for (int64_t r = 0; r < rows; ++r) {
            const T* in = x.val.data() + r * d;
            const T* go = s.grad.data() + r * d;
            T ms = 0;
            for (int i = 0; i < d; ++i) ms += in[i] * in[i];
            ms = ms / T(d) + eps;
            T inv = T(1) / std::sqrt(ms);
            if (g.requires_grad)
                for (int i = 0; i < d; ++i) g.grad[size_t(i)] += go[i] * in[i] * inv;
            if (x.requires_grad) {
                T dot = 0;  // sum_j go_j * gain_j * x_j
                for (int j = 0; j < d; ++j) dot += go[j] * g.val[size_t(j)] * in[j];
                T inv3 = inv * inv * inv / T(d);
                for (int i = 0; i < d; ++i)
                    x.grad[size_t(r * d + i)] += g.val[size_t(i)] * go[i] * inv - in[i] * inv3 * dot;
            }
        }
    };
    return TensorT<T>(n);
}

// y = gain * (x - mean) / sqrt(var + eps) + bias, over the last axis
template <typename T>
TensorT<T> layer_norm(const TensorT<T>& x, const TensorT<T>& gain, const TensorT<T>& bias, T eps = T(1e-5)) {
    int d = x.shape().back();
    check(gain.ndim() == 1 && gain.dim(0) == d && bias.ndim() == 1 && bias.dim(0) == d,
          "layer_norm: gain/bias must be [last_dim]");
    int64_t rows = x.size() / d;
    auto n = detail::make_op<T>("layernorm", x.shape(), {x.node(), gain.node(), bias.node()});
    for (int64_t r = 0; r < rows; ++r) {
        const T* in = x.data().data() + r * d;
        T* out = n->val.data() + r * d;
        T mu = 0;
        for (int i = 0; i < d; ++i) mu += in[i];
        mu /= T(d);
        T var = 0;
        for (int i = 0; i < d; ++i) { T c = in[i] - mu; var += c * c; }
        var /= T(d);
        T inv = T(1) / std::sqrt(var + eps);
        for (int i = 0; i < d; ++i)
            out[i] = gain.data()[size_t(i)] * (in[i] - mu) * inv + bias.data()[size_t(i)];
    }
    if (n->requires_grad) n->backward = [d, rows, eps](Node<T>& s) {
        auto& x = *s.parents[0]; auto& g = *s.parents[1]; auto& b = *s.parents[2];
        if (x.requires_grad) x.ensure_grad();
        if (g.requires_grad) g.ensure_grad();
        if (b.requires_grad) b.ensure_grad();
        for (int64_t r = 0; r < rows; ++r) {
            const T* in = x.val.data() + r * d;
            const T* go = s.grad.data() + r * d;
            T mu = 0;
            for (int i = 0; i < d; ++i) mu += in[i];
            mu /= T(d);
            T var = 0;
            for (int i = 0; i < d; ++i) { T c = in[i] - mu; var += c * c; }
            var /= T(d);
            T inv = T(1) / std::sqrt(var + eps);
            if (b.requires_grad)
                for (int i = 0; i < d; ++i) b.grad[size_t(i)] += go[i];
            if (g.requires_grad)
                for (int i = 0; i < d; ++i) g.grad[size_t(i)] += go[i] * (in[i] - mu) * inv;
            if (x.requires_grad) {
                T sum_g = 0, sum_gx = 0;
                for (int i = 0; i < d; ++i) {
                    T gg = go[i] * g.val[size_t(i)];
                    sum_g += gg;
                    sum_gx += gg * (in[i] - mu) * inv;
                }
                for (int i = 0; i < d; ++i) {
                    T gg = go[i] * g.val[size_t(i)];
                    T xn = (in[i] - mu) * inv;
                    x.grad[size_t(r * d + i)] += inv * (gg - sum_g / T(d) - xn * sum_gx / T(d));
                }
            }
        }
    };
    return TensorT<T>(n);
}

// SwiGLU feed-forward: (swish(x Wg) . (x Wv)) Wo  -- composed from primitives
template <typename T>
TensorT<T> swiglu_ffn(const TensorT<T>& x, const TensorT<T>& Wg, const TensorT<T>& Wv, const TensorT<T>& Wo) {
    auto g = silu(matmul(x, Wg));
    auto v = matmul(x, Wv);
    return matmul(mul(g, v), Wo);
}

// ---------------------------------------------------------------------------
// conv2d over a single image [C,H,W]; kernel [Cout, Cin/groups, k, k]
template <typename T>
TensorT<T> conv2d(const TensorT<T>& x, const TensorT<T>& w, const TensorT<T>* b,
                  int stride, int pad, int groups = 1) {
    check(x.ndim() == 3, "conv2d: input must be [C,H,W], got " + shape_str(x.shape()));
    check(w.ndim() == 4, "conv2d: weight must be [Cout,Cin/g,k,k]");
    int Cin = x.dim(0), H = x.dim(1), W = x.dim(2);
    int Cout = w.dim(0), Cg = w.dim(1), k = w.dim(2);
    check(w.dim(3) == k, "conv2d: non-square kernel");
    check(Cin % groups == 0 && Cout % groups == 0, "conv2d: channels not divisible by groups");
    check(Cin / groups == Cg, "conv2d: weight in-channels " + std::to_string(Cg) +
          " != input channels/groups " + std::to_string(Cin / groups));
    int Ho = (H + 2 * pad - k) / stride + 1;
    int Wo = (W + 2 * pad - k) / stride + 1;
    check(Ho >= 1 && Wo >= 1, "conv2d: output would be empty");
    std::vector<std::shared_ptr<Node<T>>> parents = {x.node(), w.node()};
    if (b) {
        check(b->ndim() == 1 && b->dim(0) == Cout, "conv2d: bias must be [Cout]");
        parents.push_back(b->node());
    }
    auto n = detail::make_op<T>("conv2d", {Cout, Ho, Wo}, std::move(parents));
    const T* X = x.data().data();
    const T* Wt = w.data().data();
    T* Y = n->val.data();
    int cpg_out = Cout / groups;
#pragma omp parallel for schedule(static) if (int64_t(Cout) * Ho * Wo * Cg * k * k > 131072)
    for (int co = 0; co < Cout; ++co) {
        int g = co / cpg_out;
        T bias = b ? b->data()[size_t(co)] : T(0);
        for (int oy = 0; oy < Ho; ++oy) {
            for (int ox = 0; ox < Wo; ++ox) {
                T acc = bias;
                for (int cg = 0; cg < Cg; ++cg) {
                    int ci = g * Cg + cg;
                    const T* xc = X + (size_t(ci) * H) * W;
                    const T* wc = Wt + ((size_t(co) * Cg + cg) * k) * k;
                    for (int ky = 0; ky < k; ++ky) {
                        int iy = oy * stride + ky - pad;
                        if (iy < 0 || iy >= H) continue;
                        for (int kx = 0; kx < k; ++kx) {
                            int ix = ox * stride + kx - pad;
                            if (ix < 0 || ix >= W) continue;
                            acc += xc[size_t(iy) * W + ix] * wc[size_t(ky) * k + kx];
                        }
                    }
                }
                Y[(size_t(co) * Ho + oy) * Wo + ox] = acc;
            }
        }
    }
    if (n->requires_grad) n->backward = [stride, pad, groups, H, W, k, Cg, cpg_out, Ho, Wo, has_b = b != nullptr](Node<T>& s) {
        auto& x = *s.parents[0]; auto& w = *s.parents[1];
        int Cout = s.shape[0];
        const T* G = s.grad.data();
        if (has_b && s.parents[2]->requires_grad) {
            auto& b = *s.parents[2];
            b.ensure_grad();
            for (int co = 0; co < Cout; ++co) {
                T acc = 0;
                for (int i = 0; i < Ho * Wo; ++i) acc += G[size_t(co) * Ho * Wo + i];
                b.grad[size_t(co)] += acc;
            }
        }
        if (w.requires_grad) {
            w.ensure_grad();
            T* dW = w.grad.data();
            const T* X = x.val.data();
#pragma omp parallel for schedule(static) if (int64_t(Cout) * Cg * k * k * Ho * Wo > 131072)
            for (int co = 0; co < Cout; ++co) {
                int g = co / cpg_out;
                for (int cg = 0; cg < Cg; ++cg) {
                    int ci = g * Cg + cg;
                    const T* xc = X + (size_t(ci) * H) * W;
                    for (int ky = 0; ky < k; ++ky)
                        for (int kx = 0; kx < k; ++kx) {
                            T acc = 0;
                            for (int oy = 0; oy < Ho; ++oy) {
                                int iy = oy * stride + ky - pad;
                                if (iy < 0 || iy >= H) continue;
                                for (int ox = 0; ox < Wo; ++ox) {
                                    int ix = ox * stride + kx - pad;
                                    if (ix < 0 || ix >= W) continue;
                                    acc += xc[size_t(iy) * W + ix] * G[(size_t(co) * Ho + oy) * Wo + ox];
                                }
                            }
                            dW[((size_t(co) * Cg + cg) * k + ky) * k + kx] += acc;
                        }
                }
            }
        }
        if (x.requires_grad) {
            x.ensure_grad();
            T* dX = x.grad.data();
            const T* Wt = w.val.data();
            int Cin = x.shape[0];
            int cpg_in = Cin / groups;
#pragma omp parallel for schedule(static) if (int64_t(Cin) * H * W * k * k > 131072)
            for (int ci = 0; ci < Cin; ++ci) {
                int g = ci / cpg_in;
                int cg = ci % cpg_in;
                T* dxc = dX + (size_t(ci) * H) * W;
                for (int co = g * cpg_out; co < (g + 1) * cpg_out; ++co) {
                    const T* wc = Wt + ((size_t(co) * cpg_in + cg) * k) * k;
                    const T* gc = G + size_t(co) * Ho * Wo;
                    for (int oy = 0; oy < Ho; ++oy)
                        for (int ox = 0; ox < Wo; ++ox) {
                            T gv = gc[size_t(oy) * Wo + ox];
                            if (gv == T(0)) continue;
                            for (int ky = 0; ky < k; ++ky) {
                                int iy = oy * stride + ky - pad;
                                if (iy < 0 || iy >= H) continue;
                                for (int kx = 0; kx < k; ++kx) {
                                    int ix = ox * stride + kx - pad;
                                    if (ix < 0 || ix >= W) continue;
                                    dxc[size_t(iy) * W + ix] += gv * wc[size_t(ky) * k + kx];
                                }
                            }
                        }
                }
            }
        }
    };
    return TensorT<T>(n);
}

// ---------------------------------------------------------------------------
// bilinear resize of [C,H,W] with half-pixel centers and edge clamping;
// exact identity when the size is unchanged
template <typename T>
TensorT<T> bilinear_resize(const TensorT<T>& x, int H2, int W2) {
    check(x.ndim() == 3, "bilinear_resize: input must be [C,H,W]");
    check(H2 >= 1 && W2 >= 1, "bilinear_resize: bad target size");
    int C = x.dim(0), H = x.dim(1), W = x.dim(2);
    if (H2 == H && W2 == W) {
        auto n = detail::make_op<T>("resize_id", x.shape(), {x.node()});
        n->val = x.data();
        if (n->requires_grad) n->backward = [](Node<T>& s) {
            auto& p = *s.parents[0];
            if (!p.requires_grad) return;
            p.ensure_grad();
            for (size_t i = 0; i < s.grad.size(); ++i) p.grad[i] += s.grad[i];
        };
        return TensorT<T>(n);
    }
    auto n = detail::make_op<T>("resize", {C, H2, W2}, {x.node()});
    T sy = T(H) / T(H2), sx = T(W) / T(W2);
    // precompute sample taps
    std::vector<int> y0(size_t{size_t(H2)}), x0(size_t{size_t(W2)});
    std::vector<T> wy(y0.size()), wx(x0.size());
    for (int oy = 0; oy < H2; ++oy) {
        T fy = (T(oy) + T(0.5)) * sy - T(0.5);
        T cy = std::clamp(fy, T(0), T(H - 1));
        y0[size_t(oy)] = std::min(int(std::floor(cy)), H - 1);
        wy[size_t(oy)] = cy - T(y0[size_t(oy)]);
    }
    for (int ox = 0; ox < W2; ++ox) {
        T fx = (T(ox) + T(0.5)) * sx - T(0.5);
        T cx = std::clamp(fx, T(0), T(W - 1));
        x0[size_t(ox)] = std::min(int(std::floor(cx)), W - 1);
        wx[size_t(ox)] = cx - T(x0[size_t(ox)]);
    }
    const T* X = x.data().data();
    T* Y = n->val.data();
    for (int c = 0; c < C; ++c) {
        const T* xc = X + (size_t(c) * H) * W;
        for (int oy = 0; oy < H2; ++oy) {
            int iy = y0[size_t(oy)], iy1 = std::min(iy + 1, H - 1);
            T ay = wy[size_t(oy)];
            for (int ox = 0; ox < W2; ++ox) {
                int ix = x0[size_t(ox)], ix1 = std::min(ix + 1, W - 1);
                T ax = wx[size_t(ox)];
                T v00 = xc[size_t(iy) * W + ix], v01 = xc[size_t(iy) * W + ix1];
                T v10 = xc[size_t(iy1) * W + ix], v11 = xc[size_t(iy1) * W + ix1];
                Y[(size_t(c) * H2 + oy) * W2 + ox] =
                    (T(1) - ay) * ((T(1) - ax) * v00 + ax * v01) + ay * ((T(1) - ax) * v10 + ax * v11);
            }
        }
    }
    if (n->requires_grad) n->backward = [C, H, W, H2, W2, y0, x0, wy, wx](Node<T>& s) {
        auto& p = *s.parents[0];
        if (!p.requires_grad) return;
        p.ensure_grad();
        T* dX = p.grad.data();
        const T* G = s.grad.data();
        for (int c = 0; c < C; ++c) {
            T* dxc = dX + (size_t(c) * H) * W;
            for (int oy = 0; oy < H2; ++oy) {
                int iy = y0[size_t(oy)], iy1 = std::min(iy + 1, H - 1);
                T ay = wy[size_t(oy)];
                for (int ox = 0; ox < W2; ++ox) {
                    int ix = x0[size_t(ox)], ix1 = std::min(ix + 1, W - 1);
                    T ax = wx[size_t(ox)];
                    T g = G[(size_t(c) * H2 + oy) * W2 + ox];
                    dxc[size_t(iy) * W + ix] += g * (T(1) - ay) * (T(1) - ax);
                    dxc[size_t(iy) * W + ix1] += g * (T(1) - ay) * ax;
                    dxc[size_t(iy1) * W + ix] += g * ay * (T(1) - ax);
                    dxc[size_t(iy1) * W + ix1] += g * ay * ax;
                }
            }
        }
    };
    return TensorT<T>(n);
}

// sample feature map [C,H,W] at P normalized (x,y) points (half-pixel centers,
// edge clamped); output [P,C]. Gradients flow to both the map and the points.
template <typename T>
TensorT<T> sample_points(const TensorT<T>& fmap, const TensorT<T>& pts) {
    check(fmap.ndim() == 3, "sample_points: map must be [C,H,W]");
    check(pts.ndim() == 2 && pts.dim(1) == 2, "sample_points: points must be [P,2]");
    int C = fmap.dim(0), H = fmap.dim(1), W = fmap.dim(2);
    int P = pts.dim(0);
    auto n = detail::make_op<T>("sample", {P, C}, {fmap.node(), pts.node()});
    const T* X = fmap.data().data();
    const T* Q = pts.data().data();
    T* Y = n->val.data();
    for (int p = 0; p < P; ++p) {
        T fx = Q[size_t(p) * 2 + 0] * T(W) - T(0.5);
        T fy = Q[size_t(p) * 2 + 1] * T(H) - T(0.5);
        T cx = std::clamp(fx, T(0), T(W - 1));
        T cy = std::clamp(fy, T(0), T(H - 1));
        int ix = std::min(int(std::floor(cx)), W - 1), iy = std::min(int(std::floor(cy)), H - 1);
        int ix1 = std::min(ix + 1, W - 1), iy1 = std::min(iy + 1, H - 1);
        T ax = cx - T(ix), ay = cy - T(iy);
        for (int c = 0; c < C; ++c) {
            const T* xc = X + (size_t(c) * H) * W;
            T v00 = xc[size_t(iy) * W + ix], v01 = xc[size_t(iy) * W + ix1];
            T v10 = xc[size_t(iy1) * W + ix], v11 = xc[size_t(iy1) * W + ix1];
            Y[size_t(p) * C + c] = (T(1) - ay) * ((T(1) - ax) * v00 + ax * v01) +
                                   ay * ((T(1) - ax) * v10 + ax * v11);
        }
    }
    if (n->requires_grad) n->backward = [C, H, W, P](Node<T>& s) {
        auto& f = *s.parents[0]; auto& q = *s.parents[1];
        if (f.requires_grad) f.ensure_grad();
        if (q.requires_grad) q.ensure_grad();
        const T* X = f.val.data();
        const T* Q = q.val.data();
        const T* G = s.grad.data();
        for (int p = 0; p < P; ++p) {
            T fx = Q[size_t(p) * 2 + 0] * T(W) - T(0.5);
            T fy = Q[size_t(p) * 2 + 1] * T(H) - T(0.5);
            bool inx = fx > T(0) && fx < T(W - 1);   // clamped => zero positional grad
            bool iny = fy > T(0) && fy < T(H - 1);
            T cx = std::clamp(fx, T(0), T(W - 1));
            T cy = std::clamp(fy, T(0), T(H - 1));
            int ix = std::min(int(std::floor(cx)), W - 1), iy = std::min(int(std::floor(cy)), H - 1);
            int ix1 = std::min(ix + 1, W - 1), iy1 = std::min(iy + 1, H - 1);
            T ax = cx - T(ix), ay = cy - T(iy);
            T gx = 0, gy = 0;
            for (int c = 0; c < C; ++c) {
                T g = G[size_t(p) * C + c];
                if (g == T(0)) continue;
                const T* xc = X + (size_t(c) * H) * W;
                T v00 = xc[size_t(iy) * W + ix], v01 = xc[size_t(iy) * W + ix1];
                T v10 = xc[size_t(iy1) * W + ix], v11 = xc[size_t(iy1) * W + ix1];
                if (f.requires_grad) {
                    T* dxc = f.grad.data() + (size_t(c) * H) * W;
                    dxc[size_t(iy) * W + ix] += g * (T(1) - ay) * (T(1) - ax);
                    dxc[size_t(iy) * W + ix1] += g * (T(1) - ay) * ax;
                    dxc[size_t(iy1) * W + ix] += g * ay * (T(1) - ax);
                    dxc[size_t(iy1) * W + ix1] += g * ay * ax;
                }
                gx += g * ((T(1) - ay) * (v01 - v00) + ay * (v11 - v10));
                gy += g * ((T(1) - ax) * (v10 - v00) + ax * (v11 - v01));
            }
            if (q.requires_grad) {
                if (inx) q.grad[size_t(p) * 2 + 0] += gx * T(W);
                if (iny) q.grad[size_t(p) * 2 + 1] += gy * T(H);
            }
        }
    };
    return TensorT<T>(n);
}

// ---------------------------------------------------------------------------
// finite-difference oracle: central differences on a 64-bit copy of x.
// f maps a tensor to a scalar tensor. Returns max relative error vs backward().
template <typename T>
double finite_diff_check(const std::function<TensorT<T>(const TensorT<T>&)>& f,
                         TensorT<T> x, T eps = T(1e-5)) {
    x.node()->requires_grad = true;
    auto loss = f(x);
    backward(loss);
    std::vector<T> analytic = x.grad();
    double max_rel = 0;
    for (size_t i = 0; i < x.data().size(); ++i) {
        T keep = x.data()[i];
        x.data()[i] = keep + eps;
        T fp = f(x).item();
        x.data()[i] = keep - eps;
        T fm = f(x).item();
        x.data()[i] = keep;
        double num = (double(fp) - double(fm)) / (2.0 * double(eps));
        double den = std::max({std::abs(num), std::abs(double(analytic[i])), 1e-8});
        max_rel = std::max(max_rel, std::abs(num - double(analytic[i])) / den);
    }
    return max_rel;
}

}  // namespace deimv2
