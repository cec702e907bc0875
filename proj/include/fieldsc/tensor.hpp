#pragma once

// Reverse-mode automatic differentiation on dense row-major float32 tensors.
//
// The graph is define-by-run: a Tape records one node per operation while the
// forward pass executes, backward() sweeps the nodes once in reverse order and
// returns gradients for the watched leaves, then the tape is cleared. Ops on
// tensors that do not require gradients skip recording entirely, so the same
// code path doubles as a plain (inference) evaluator.
//
// Tapes are single-threaded; independent tapes may live on distinct threads.

#include <cmath>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "fieldsc/error.hpp"
#include "fieldsc/log.hpp"

namespace fieldsc::ad {

using Shape = std::vector<int>;

inline std::size_t shape_numel(const Shape& s) {
    std::size_t n = 1;
    for (int e : s) {
        if (e < 0) throw ShapeError("negative extent in shape");
        n *= static_cast<std::size_t>(e);
    }
    return n;
}

inline std::string shape_str(const Shape& s) {
    std::string r = "[";
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (i) r += ",";
        r += std::to_string(s[i]);
    }
    return r + "]";
}

class Tape;

class Tensor {
public:
    Tensor() = default;

    // Constant (untracked) tensor taking ownership of the values.
    Tensor(Shape shape, std::vector<float> values)
        : data_(std::make_shared<std::vector<float>>(std::move(values))),
          shape_(std::move(shape)) {
        if (data_->size() != shape_numel(shape_))
            throw ShapeError("value count " + std::to_string(data_->size()) +
                             " does not match shape " + shape_str(shape_));
    }

    static Tensor zeros(Shape shape) {
        std::size_t n = shape_numel(shape);
        return Tensor(std::move(shape), std::vector<float>(n, 0.0f));
    }

    static Tensor full(Shape shape, float v) {
        std::size_t n = shape_numel(shape);
        return Tensor(std::move(shape), std::vector<float>(n, v));
    }

    static Tensor scalar(float v) { return Tensor(Shape{}, std::vector<float>{v}); }

    // Constant view sharing storage with src under a different shape.
    static Tensor share(const Tensor& src, Shape new_shape) {
        if (!src.defined()) throw ShapeError("share: undefined tensor");
        if (shape_numel(new_shape) != src.size())
            throw ShapeError("share: size mismatch " + shape_str(src.shape()) + " -> " +
                             shape_str(new_shape));
        Tensor out;
        out.data_ = src.data_;
        out.shape_ = std::move(new_shape);
        return out;
    }

    bool defined() const { return static_cast<bool>(data_); }
    const Shape& shape() const { return shape_; }
    int rank() const { return static_cast<int>(shape_.size()); }
    int extent(int axis) const { return shape_.at(static_cast<std::size_t>(axis)); }
    std::size_t size() const { return data_ ? data_->size() : 0; }

    const std::vector<float>& values() const {
        if (!data_) throw ShapeError("reading values of an undefined tensor");
        return *data_;
    }
    // In-place access is reserved for leaf/state tensors (optimizer updates,
    // buffer loads); tensors already recorded on a tape must not be mutated.
    std::vector<float>& mutable_values() {
        if (!data_) throw ShapeError("mutating values of an undefined tensor");
        return *data_;
    }

    float item() const {
        if (size() != 1) throw ShapeError("item() on tensor of size " + std::to_string(size()));
        return (*data_)[0];
    }

    bool requires_grad() const { return requires_grad_; }
    Tape* tape() const { return tape_; }
    int node() const { return node_; }

private:
    friend class Tape;
    std::shared_ptr<std::vector<float>> data_;
    Shape shape_;
    Tape* tape_ = nullptr;
    int node_ = -1;
    bool requires_grad_ = false;
};

// Gradients returned by Tape::backward, keyed by the watched leaf nodes.
struct Gradients {
    std::unordered_map<int, std::vector<float>> by_node;

    const std::vector<float>& at(const Tensor& leaf) const {
        auto it = leaf.node() >= 0 ? by_node.find(leaf.node()) : by_node.end();
        if (it == by_node.end())
            throw ShapeError("no gradient recorded for this tensor (not a watched leaf?)");
        return it->second;
    }
    bool contains(const Tensor& leaf) const {
        return leaf.node() >= 0 && by_node.count(leaf.node()) > 0;
    }
};

class Tape {
public:
    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    // Registers a leaf whose gradient should be reported by backward().
    // The returned tensor shares storage with the argument.
    Tensor watch(const Tensor& t) {
        Tensor out = t;
        out.tape_ = this;
        out.requires_grad_ = true;
        out.node_ = add_node({}, nullptr, t.size(), /*leaf=*/true);
        return out;
    }

    // Used by ops: registers an interior node with its pullback.
    Tensor track(Shape shape, std::vector<float> values,
                 std::function<void(Tape&, int)> backward) {
        Tensor out(std::move(shape), std::move(values));
        out.tape_ = this;
        out.requires_grad_ = true;
        out.node_ = add_node({}, std::move(backward), out.size(), /*leaf=*/false);
        return out;
    }

    // Same but sharing storage with an existing tensor (reshape-style nodes).
    Tensor track_view(const Tensor& src, Shape shape,
                      std::function<void(Tape&, int)> backward) {
        Tensor out;
        out.data_ = src.data_;
        out.shape_ = std::move(shape);
        out.tape_ = this;
        out.requires_grad_ = true;
        out.node_ = add_node({}, std::move(backward), out.size(), /*leaf=*/false);
        return out;
    }

    // For pullbacks that need the op's own output: track first with an empty
    // pullback, then install one that may capture the tracked tensor.
    void set_backward(const Tensor& t, std::function<void(Tape&, int)> backward) {
        if (t.tape() != this || t.node() < 0)
            throw ShapeError("set_backward: tensor does not live on this tape");
        nodes_.at(static_cast<std::size_t>(t.node())).back = std::move(backward);
    }

    std::size_t node_count() const { return nodes_.size(); }

    // Gradient buffer accessors used by pullbacks during the sweep.
    const std::vector<float>* grad_of(int node) const {
        if (node < 0 || static_cast<std::size_t>(node) >= grads_.size()) return nullptr;
        return grads_[static_cast<std::size_t>(node)].empty()
                   ? nullptr
                   : &grads_[static_cast<std::size_t>(node)];
    }
    std::vector<float>& grad_accum(int node, std::size_t n) {
        auto& g = grads_.at(static_cast<std::size_t>(node));
        if (g.empty()) g.assign(n, 0.0f);
        return g;
    }

    // Runs reverse accumulation from a scalar loss, returns leaf gradients
    // (zero-filled for leaves the loss does not depend on) and clears the
    // tape. Each node's pullback runs at most once.
    Gradients backward(const Tensor& loss) {
        if (loss.tape() != this || loss.node() < 0)
            throw ShapeError("backward: loss does not live on this tape");
        if (loss.size() != 1)
            throw ShapeError("backward: loss must be scalar, got shape " + shape_str(loss.shape()));
        if (static_cast<std::size_t>(loss.node()) >= nodes_.size())
            throw ShapeError("backward: tape was already cleared");

        grads_.assign(nodes_.size(), {});
        grads_[static_cast<std::size_t>(loss.node())] = {1.0f};
        for (int i = loss.node(); i >= 0; --i) {
            if (grads_[static_cast<std::size_t>(i)].empty()) continue;
            auto& node = nodes_[static_cast<std::size_t>(i)];
            if (node.back) node.back(*this, i);
        }

        Gradients out;
        for (std::size_t i = 0; i < nodes_.size(); ++i) {
            if (!nodes_[i].leaf) continue;
            if (!grads_[i].empty())
                out.by_node.emplace(static_cast<int>(i), std::move(grads_[i]));
            else
                out.by_node.emplace(static_cast<int>(i),
                                    std::vector<float>(nodes_[i].out_size, 0.0f));
        }
        clear();
        return out;
    }

    void clear() {
        nodes_.clear();
        grads_.clear();
    }

private:
    struct Node {
        std::vector<int> inputs;  // informational; pullbacks capture what they need
        std::function<void(Tape&, int)> back;
        std::size_t out_size = 0;
        bool leaf = false;
    };

    int add_node(std::vector<int> inputs, std::function<void(Tape&, int)> back,
                 std::size_t out_size, bool leaf) {
        nodes_.push_back(Node{std::move(inputs), std::move(back), out_size, leaf});
        return static_cast<int>(nodes_.size()) - 1;
    }

    std::vector<Node> nodes_;
    std::vector<std::vector<float>> grads_;
};

// ---------------------------------------------------------------------------
// Broadcasting (numpy-style, right-aligned; an extent of 1 stretches).

namespace detail {

struct BcastPlan {
    Shape out;
    std::vector<std::size_t> stride_a, stride_b;
    std::size_t n = 0;
    bool same = false;
};

inline std::vector<std::size_t> row_major_strides(const Shape& s) {
    std::vector<std::size_t> st(s.size(), 0);
    std::size_t acc = 1;
    for (int d = static_cast<int>(s.size()) - 1; d >= 0; --d) {
        st[static_cast<std::size_t>(d)] = acc;
        acc *= static_cast<std::size_t>(s[static_cast<std::size_t>(d)]);
    }
    return st;
}

inline BcastPlan make_bcast(const Shape& a, const Shape& b, const char* op) {
    BcastPlan p;
    if (a == b) {
        p.out = a;
        p.n = shape_numel(a);
        p.same = true;
        return p;
    }
    int ra = static_cast<int>(a.size()), rb = static_cast<int>(b.size());
    int rank = ra > rb ? ra : rb;
    p.out.resize(static_cast<std::size_t>(rank));
    for (int d = 0; d < rank; ++d) {
        int da = d - (rank - ra), db = d - (rank - rb);
        int ea = da >= 0 ? a[static_cast<std::size_t>(da)] : 1;
        int eb = db >= 0 ? b[static_cast<std::size_t>(db)] : 1;
        if (ea != eb && ea != 1 && eb != 1)
            throw ShapeError(std::string(op) + ": shapes " + shape_str(a) + " and " +
                             shape_str(b) + " are not broadcastable");
        p.out[static_cast<std::size_t>(d)] = ea == 1 ? eb : ea;
    }
    auto sa = row_major_strides(a), sb = row_major_strides(b);
    p.stride_a.assign(static_cast<std::size_t>(rank), 0);
    p.stride_b.assign(static_cast<std::size_t>(rank), 0);
    for (int d = 0; d < rank; ++d) {
        int da = d - (rank - ra), db = d - (rank - rb);
        if (da >= 0 && a[static_cast<std::size_t>(da)] != 1)
            p.stride_a[static_cast<std::size_t>(d)] = sa[static_cast<std::size_t>(da)];
        if (db >= 0 && b[static_cast<std::size_t>(db)] != 1)
            p.stride_b[static_cast<std::size_t>(d)] = sb[static_cast<std::size_t>(db)];
    }
    p.n = shape_numel(p.out);
    return p;
}

template <class F>
void bcast_for_each(const BcastPlan& p, F&& f) {
    if (p.same) {
        for (std::size_t i = 0; i < p.n; ++i) f(i, i, i);
        return;
    }
    int rank = static_cast<int>(p.out.size());
    if (rank == 0 || p.n == 0) {
        if (p.n == 1) f(0, 0, 0);
        return;
    }
    std::vector<int> idx(static_cast<std::size_t>(rank), 0);
    std::size_t oa = 0, ob = 0;
    for (std::size_t i = 0; i < p.n; ++i) {
        f(i, oa, ob);
        for (int d = rank - 1; d >= 0; --d) {
            auto du = static_cast<std::size_t>(d);
            ++idx[du];
            oa += p.stride_a[du];
            ob += p.stride_b[du];
            if (idx[du] < p.out[du]) break;
            oa -= p.stride_a[du] * static_cast<std::size_t>(p.out[du]);
            ob -= p.stride_b[du] * static_cast<std::size_t>(p.out[du]);
            idx[du] = 0;
        }
    }
}

inline Tape* pick_tape(std::initializer_list<const Tensor*> ts, const char* op) {
    Tape* t = nullptr;
    for (const Tensor* x : ts) {
        if (!x->defined()) throw ShapeError(std::string(op) + ": undefined tensor argument");
        if (!x->tape()) continue;
        if (t && t != x->tape())
            throw ShapeError(std::string(op) + ": arguments live on different tapes");
        t = x->tape();
    }
    return t;
}

inline bool any_grad(std::initializer_list<const Tensor*> ts) {
    for (const Tensor* x : ts)
        if (x->requires_grad()) return true;
    return false;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise maps.

enum class UnaryKind { exp, log, neg, relu, softplus, abs, sqrt };
enum class BinaryKind { add, sub, mul, div, min, max };

namespace detail {

inline float softplus_f(float x) {
    if (x > 20.0f) return x;
    if (x < -20.0f) return std::exp(x);
    return std::log1p(std::exp(x));
}
inline float sigmoid_f(float x) { return 1.0f / (1.0f + std::exp(-x)); }

}  // namespace detail

inline Tensor map_unary(const Tensor& x, UnaryKind kind) {
    Tape* tape = detail::pick_tape({&x}, "map_unary");
    const auto& v = x.values();
    std::vector<float> out(v.size());
    switch (kind) {
        case UnaryKind::exp:
            for (std::size_t i = 0; i < v.size(); ++i) out[i] = std::exp(v[i]);
            break;
        case UnaryKind::log:
            for (std::size_t i = 0; i < v.size(); ++i) {
                if (v[i] <= 0.0f) throw DomainError("log: nonpositive input " + std::to_string(v[i]));
                out[i] = std::log(v[i]);
            }
            break;
        case UnaryKind::neg:
            for (std::size_t i = 0; i < v.size(); ++i) out[i] = -v[i];
            break;
        case UnaryKind::relu:
            for (std::size_t i = 0; i < v.size(); ++i) out[i] = v[i] > 0.0f ? v[i] : 0.0f;
            break;
        case UnaryKind::softplus:
            for (std::size_t i = 0; i < v.size(); ++i) out[i] = detail::softplus_f(v[i]);
            break;
        case UnaryKind::abs:
            for (std::size_t i = 0; i < v.size(); ++i) out[i] = std::fabs(v[i]);
            break;
        case UnaryKind::sqrt:
            for (std::size_t i = 0; i < v.size(); ++i) {
                if (v[i] <= 0.0f) throw DomainError("sqrt: nonpositive input " + std::to_string(v[i]));
                out[i] = std::sqrt(v[i]);
            }
            break;
    }
    if (!tape || !x.requires_grad()) return Tensor(x.shape(), std::move(out));

    Tensor result = tape->track(x.shape(), std::move(out), nullptr);
    tape->set_backward(result, [x, result, kind](Tape& tp, int self) {
        const auto* g = tp.grad_of(self);
        if (!g) return;
        auto& gx = tp.grad_accum(x.node(), x.size());
        const auto& xv = x.values();
        const auto& ov = result.values();
        for (std::size_t i = 0; i < gx.size(); ++i) {
            float d = 0.0f;
            switch (kind) {
                case UnaryKind::exp: d = ov[i]; break;
                case UnaryKind::log: d = 1.0f / xv[i]; break;
                case UnaryKind::neg: d = -1.0f; break;
                case UnaryKind::relu: d = xv[i] > 0.0f ? 1.0f : 0.0f; break;
                case UnaryKind::softplus: d = detail::sigmoid_f(xv[i]); break;
                case UnaryKind::abs:
                    d = xv[i] > 0.0f ? 1.0f : (xv[i] < 0.0f ? -1.0f : 0.0f);
                    break;
                case UnaryKind::sqrt: d = 0.5f / ov[i]; break;
            }
            gx[i] += (*g)[i] * d;
        }
    });
    return result;
}

inline Tensor map_binary(const Tensor& a, const Tensor& b, BinaryKind kind) {
    Tape* tape = detail::pick_tape({&a, &b}, "map_binary");
    auto plan = detail::make_bcast(a.shape(), b.shape(), "map_binary");
    const auto& va = a.values();
    const auto& vb = b.values();
    std::vector<float> out(plan.n);
    detail::bcast_for_each(plan, [&](std::size_t i, std::size_t ia, std::size_t ib) {
        float x = va[ia], y = vb[ib];
        switch (kind) {
            case BinaryKind::add: out[i] = x + y; break;
            case BinaryKind::sub: out[i] = x - y; break;
            case BinaryKind::mul: out[i] = x * y; break;
            case BinaryKind::div:
                if (y == 0.0f) throw DomainError("div: division by zero");
                out[i] = x / y;
                break;
            case BinaryKind::min: out[i] = x <= y ? x : y; break;  // tie -> first
            case BinaryKind::max: out[i] = x >= y ? x : y; break;  // tie -> first
        }
    });
    if (!tape || !detail::any_grad({&a, &b})) return Tensor(plan.out, std::move(out));

    return tape->track(plan.out, std::move(out), [a, b, plan, kind](Tape& tp, int self) {
        const auto* g = tp.grad_of(self);
        if (!g) return;
        const auto& va = a.values();
        const auto& vb = b.values();
        std::vector<float>* ga = a.requires_grad() ? &tp.grad_accum(a.node(), a.size()) : nullptr;
        std::vector<float>* gb = b.requires_grad() ? &tp.grad_accum(b.node(), b.size()) : nullptr;
        detail::bcast_for_each(plan, [&](std::size_t i, std::size_t ia, std::size_t ib) {
            float gi = (*g)[i];
            switch (kind) {
                case BinaryKind::add:
                    if (ga) (*ga)[ia] += gi;
                    if (gb) (*gb)[ib] += gi;
                    break;
                case BinaryKind::sub:
                    if (ga) (*ga)[ia] += gi;
                    if (gb) (*gb)[ib] -= gi;
                    break;
                case BinaryKind::mul:
                    if (ga) (*ga)[ia] += gi * vb[ib];
                    if (gb) (*gb)[ib] += gi * va[ia];
                    break;
                case BinaryKind::div:
                    if (ga) (*ga)[ia] += gi / vb[ib];
                    if (gb) (*gb)[ib] -= gi * va[ia] / (vb[ib] * vb[ib]);
                    break;
                case BinaryKind::min:
                    if (va[ia] <= vb[ib]) {
                        if (ga) (*ga)[ia] += gi;
                    } else if (gb) {
                        (*gb)[ib] += gi;
                    }
                    break;
                case BinaryKind::max:
                    if (va[ia] >= vb[ib]) {
                        if (ga) (*ga)[ia] += gi;
                    } else if (gb) {
                        (*gb)[ib] += gi;
                    }
                    break;
            }
        });
    });
}

inline Tensor exp(const Tensor& x) { return map_unary(x, UnaryKind::exp); }
inline Tensor log(const Tensor& x) { return map_unary(x, UnaryKind::log); }
inline Tensor neg(const Tensor& x) { return map_unary(x, UnaryKind::neg); }
inline Tensor relu(const Tensor& x) { return map_unary(x, UnaryKind::relu); }
inline Tensor softplus(const Tensor& x) { return map_unary(x, UnaryKind::softplus); }
inline Tensor abs(const Tensor& x) { return map_unary(x, UnaryKind::abs); }
inline Tensor sqrt(const Tensor& x) { return map_unary(x, UnaryKind::sqrt); }

inline Tensor add(const Tensor& a, const Tensor& b) { return map_binary(a, b, BinaryKind::add); }
inline Tensor sub(const Tensor& a, const Tensor& b) { return map_binary(a, b, BinaryKind::sub); }
inline Tensor mul(const Tensor& a, const Tensor& b) { return map_binary(a, b, BinaryKind::mul); }
inline Tensor div(const Tensor& a, const Tensor& b) { return map_binary(a, b, BinaryKind::div); }
inline Tensor min(const Tensor& a, const Tensor& b) { return map_binary(a, b, BinaryKind::min); }
inline Tensor max(const Tensor& a, const Tensor& b) { return map_binary(a, b, BinaryKind::max); }

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
inline Tensor operator/(const Tensor& a, const Tensor& b) { return div(a, b); }

inline Tensor scale(const Tensor& x, float c) { return mul(x, Tensor::scalar(c)); }
inline Tensor add_const(const Tensor& x, float c) { return add(x, Tensor::scalar(c)); }

// ---------------------------------------------------------------------------
// Matrix multiply (2-D only; everything in the pipeline batches into 2-D).

inline Tensor matmul(const Tensor& a, const Tensor& b) {
    Tape* tape = detail::pick_tape({&a, &b}, "matmul");
    if (a.rank() != 2 || b.rank() != 2)
        throw ShapeError("matmul: need rank-2 operands, got " + shape_str(a.shape()) + " x " +
                         shape_str(b.shape()));
    int m = a.extent(0), k = a.extent(1), k2 = b.extent(0), n = b.extent(1);
    if (k != k2)
        throw ShapeError("matmul: inner extents differ, " + shape_str(a.shape()) + " x " +
                         shape_str(b.shape()));
    const float* A = a.values().data();
    const float* B = b.values().data();
    std::vector<float> out(static_cast<std::size_t>(m) * static_cast<std::size_t>(n), 0.0f);
    for (int i = 0; i < m; ++i) {
        float* orow = out.data() + static_cast<std::size_t>(i) * n;
        const float* arow = A + static_cast<std::size_t>(i) * k;
        for (int kk = 0; kk < k; ++kk) {
            float av = arow[kk];
            const float* brow = B + static_cast<std::size_t>(kk) * n;
            for (int j = 0; j < n; ++j) orow[j] += av * brow[j];
        }
    }
    Shape out_shape{m, n};
    if (!tape || !detail::any_grad({&a, &b})) return Tensor(std::move(out_shape), std::move(out));

    return tape->track(std::move(out_shape), std::move(out), [a, b, m, k, n](Tape& tp, int self) {
        const auto* g = tp.grad_of(self);
        if (!g) return;
        const float* G = g->data();
        if (a.requires_grad()) {
            auto& ga = tp.grad_accum(a.node(), a.size());
            const float* B = b.values().data();
            for (int i = 0; i < m; ++i) {
                float* garow = ga.data() + static_cast<std::size_t>(i) * k;
                const float* grow = G + static_cast<std::size_t>(i) * n;
                for (int kk = 0; kk < k; ++kk) {
                    const float* brow = B + static_cast<std::size_t>(kk) * n;
                    float acc = 0.0f;
                    for (int j = 0; j < n; ++j) acc += grow[j] * brow[j];
                    garow[kk] += acc;
                }
            }
        }
        if (b.requires_grad()) {
            auto& gb = tp.grad_accum(b.node(), b.size());
            const float* A = a.values().data();
            for (int i = 0; i < m; ++i) {
                const float* arow = A + static_cast<std::size_t>(i) * k;
                const float* grow = G + static_cast<std::size_t>(i) * n;
                for (int kk = 0; kk < k; ++kk) {
                    float av = arow[kk];
                    float* gbrow = gb.data() + static_cast<std::size_t>(kk) * n;
                    for (int j = 0; j < n; ++j) gbrow[j] += av * grow[j];
                }
            }
        }
    });
}

// ---------------------------------------------------------------------------
// Reductions.

enum class ReduceKind { sum, mean, min };

namespace detail {
inline Shape reduced_shape(const Shape& s, std::optional<int> axis, bool keepdim) {
    if (!axis) {
        if (!keepdim) return Shape{};
        return Shape(s.size(), 1);
    }
    Shape out;
    for (int d = 0; d < static_cast<int>(s.size()); ++d) {
        if (d == *axis) {
            if (keepdim) out.push_back(1);
        } else {
            out.push_back(s[static_cast<std::size_t>(d)]);
        }
    }
    return out;
}
}  // namespace detail

inline Tensor reduce(const Tensor& x, ReduceKind kind, std::optional<int> axis = std::nullopt,
                     bool keepdim = false) {
    Tape* tape = detail::pick_tape({&x}, "reduce");
    if (axis && (*axis < 0 || *axis >= x.rank()))
        throw ShapeError("reduce: axis " + std::to_string(*axis) + " out of range for " +
                         shape_str(x.shape()));
    if (x.size() == 0) throw ShapeError("reduce: empty tensor");

    const auto& v = x.values();
    std::size_t outer = 1, nred = v.size(), inner = 1;
    if (axis) {
        for (int d = 0; d < *axis; ++d) outer *= static_cast<std::size_t>(x.extent(d));
        nred = static_cast<std::size_t>(x.extent(*axis));
        for (int d = *axis + 1; d < x.rank(); ++d) inner *= static_cast<std::size_t>(x.extent(d));
    }
    std::size_t nout = outer * inner;
    std::vector<float> out(nout, 0.0f);
    auto argmin = std::make_shared<std::vector<std::size_t>>();
    if (kind == ReduceKind::min) argmin->assign(nout, 0);

    for (std::size_t o = 0; o < outer; ++o) {
        for (std::size_t in = 0; in < inner; ++in) {
            std::size_t oi = o * inner + in;
            if (kind == ReduceKind::min) {
                float best = v[o * nred * inner + in];
                std::size_t besti = 0;
                for (std::size_t r = 1; r < nred; ++r) {
                    float cand = v[(o * nred + r) * inner + in];
                    if (cand < best) {  // strict: ties keep the first index
                        best = cand;
                        besti = r;
                    }
                }
                out[oi] = best;
                (*argmin)[oi] = besti;
            } else {
                float acc = 0.0f;
                for (std::size_t r = 0; r < nred; ++r) acc += v[(o * nred + r) * inner + in];
                out[oi] = kind == ReduceKind::mean ? acc / static_cast<float>(nred) : acc;
            }
        }
    }
    Shape out_shape = detail::reduced_shape(x.shape(), axis, keepdim);
    if (!tape || !x.requires_grad()) return Tensor(std::move(out_shape), std::move(out));

    return tape->track(std::move(out_shape), std::move(out),
                       [x, kind, outer, nred, inner, argmin](Tape& tp, int self) {
                           const auto* g = tp.grad_of(self);
                           if (!g) return;
                           auto& gx = tp.grad_accum(x.node(), x.size());
                           for (std::size_t o = 0; o < outer; ++o) {
                               for (std::size_t in = 0; in < inner; ++in) {
                                   std::size_t oi = o * inner + in;
                                   float gi = (*g)[oi];
                                   switch (kind) {
                                       case ReduceKind::sum:
                                           for (std::size_t r = 0; r < nred; ++r)
                                               gx[(o * nred + r) * inner + in] += gi;
                                           break;
                                       case ReduceKind::mean:
                                           for (std::size_t r = 0; r < nred; ++r)
                                               gx[(o * nred + r) * inner + in] +=
                                                   gi / static_cast<float>(nred);
                                           break;
                                       case ReduceKind::min:
                                           gx[(o * nred + (*argmin)[oi]) * inner + in] += gi;
                                           break;
                                   }
                               }
                           }
                       });
}

inline Tensor sum(const Tensor& x, std::optional<int> axis = std::nullopt, bool keepdim = false) {
    return reduce(x, ReduceKind::sum, axis, keepdim);
}
inline Tensor mean(const Tensor& x, std::optional<int> axis = std::nullopt, bool keepdim = false) {
    return reduce(x, ReduceKind::mean, axis, keepdim);
}
inline Tensor reduce_min(const Tensor& x, std::optional<int> axis = std::nullopt,
                         bool keepdim = false) {
    return reduce(x, ReduceKind::min, axis, keepdim);
}

// ---------------------------------------------------------------------------
// Softmax along an axis, stabilized by the per-slice max (the shift is a
// constant as far as the gradient is concerned).

inline Tensor softmax(const Tensor& x, int axis) {
    Tape* tape = detail::pick_tape({&x}, "softmax");
    if (axis < 0 || axis >= x.rank())
        throw ShapeError("softmax: axis " + std::to_string(axis) + " out of range for " +
                         shape_str(x.shape()));
    const auto& v = x.values();
    std::size_t outer = 1, n = static_cast<std::size_t>(x.extent(axis)), inner = 1;
    for (int d = 0; d < axis; ++d) outer *= static_cast<std::size_t>(x.extent(d));
    for (int d = axis + 1; d < x.rank(); ++d) inner *= static_cast<std::size_t>(x.extent(d));

    std::vector<float> out(v.size());
    for (std::size_t o = 0; o < outer; ++o) {
        for (std::size_t in = 0; in < inner; ++in) {
            float m = v[o * n * inner + in];
            for (std::size_t r = 1; r < n; ++r)
                m = std::max(m, v[(o * n + r) * inner + in]);
            float s = 0.0f;
            for (std::size_t r = 0; r < n; ++r) {
                float e = std::exp(v[(o * n + r) * inner + in] - m);
                out[(o * n + r) * inner + in] = e;
                s += e;
            }
            for (std::size_t r = 0; r < n; ++r) out[(o * n + r) * inner + in] /= s;
        }
    }
    if (!tape || !x.requires_grad()) return Tensor(x.shape(), std::move(out));

    Tensor result = tape->track(x.shape(), std::move(out), nullptr);
    tape->set_backward(result, [x, result, outer, n, inner](Tape& tp, int self) {
        const auto* g = tp.grad_of(self);
        if (!g) return;
        auto& gx = tp.grad_accum(x.node(), x.size());
        const auto& y = result.values();
        for (std::size_t o = 0; o < outer; ++o) {
            for (std::size_t in = 0; in < inner; ++in) {
                float dot = 0.0f;
                for (std::size_t r = 0; r < n; ++r) {
                    std::size_t idx = (o * n + r) * inner + in;
                    dot += (*g)[idx] * y[idx];
                }
                for (std::size_t r = 0; r < n; ++r) {
                    std::size_t idx = (o * n + r) * inner + in;
                    gx[idx] += y[idx] * ((*g)[idx] - dot);
                }
            }
        }
    });
    return result;
}

// ---------------------------------------------------------------------------
// Structural ops: reshape / permute / slice / concat.

inline Tensor reshape(const Tensor& x, Shape new_shape) {
    Tape* tape = detail::pick_tape({&x}, "reshape");
    // One extent may be -1 and is inferred.
    std::size_t known = 1;
    int infer = -1;
    for (int d = 0; d < static_cast<int>(new_shape.size()); ++d) {
        int e = new_shape[static_cast<std::size_t>(d)];
        if (e == -1) {
            if (infer >= 0) throw ShapeError("reshape: more than one -1 extent");
            infer = d;
        } else if (e < 0) {
            throw ShapeError("reshape: negative extent");
        } else {
            known *= static_cast<std::size_t>(e);
        }
    }
    if (infer >= 0) {
        if (known == 0 || x.size() % known != 0)
            throw ShapeError("reshape: cannot infer extent for " + shape_str(new_shape));
        new_shape[static_cast<std::size_t>(infer)] = static_cast<int>(x.size() / known);
    }
    if (shape_numel(new_shape) != x.size())
        throw ShapeError("reshape: size mismatch " + shape_str(x.shape()) + " -> " +
                         shape_str(new_shape));
    if (!tape || !x.requires_grad()) return Tensor::share(x, std::move(new_shape));
    return tape->track_view(x, std::move(new_shape), [x](Tape& tp, int self) {
        const auto* g = tp.grad_of(self);
        if (!g) return;
        auto& gx = tp.grad_accum(x.node(), x.size());
        for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += (*g)[i];
    });
}

inline Tensor permute(const Tensor& x, const std::vector<int>& perm) {
    Tape* tape = detail::pick_tape({&x}, "permute");
    int rank = x.rank();
    if (static_cast<int>(perm.size()) != rank) throw ShapeError("permute: perm rank mismatch");
    std::vector<bool> seen(static_cast<std::size_t>(rank), false);
    Shape out_shape(static_cast<std::size_t>(rank));
    for (int d = 0; d < rank; ++d) {
        int p = perm[static_cast<std::size_t>(d)];
        if (p < 0 || p >= rank || seen[static_cast<std::size_t>(p)])
            throw ShapeError("permute: invalid permutation");
        seen[static_cast<std::size_t>(p)] = true;
        out_shape[static_cast<std::size_t>(d)] = x.extent(p);
    }
    auto src_strides = detail::row_major_strides(x.shape());
    // Stride of the source, ordered by output dims.
    std::vector<std::size_t> stride(static_cast<std::size_t>(rank));
    for (int d = 0; d < rank; ++d)
        stride[static_cast<std::size_t>(d)] = src_strides[static_cast<std::size_t>(perm[static_cast<std::size_t>(d)])];

    const auto& v = x.values();
    std::vector<float> out(v.size());
    std::vector<int> idx(static_cast<std::size_t>(rank), 0);
    std::size_t off = 0;
    for (std::size_t i = 0; i < out.size(); ++i) {
        out[i] = v[off];
        for (int d = rank - 1; d >= 0; --d) {
            auto du = static_cast<std::size_t>(d);
            ++idx[du];
            off += stride[du];
            if (idx[du] < out_shape[du]) break;
            off -= stride[du] * static_cast<std::size_t>(out_shape[du]);
            idx[du] = 0;
        }
    }
    if (!tape || !x.requires_grad()) return Tensor(std::move(out_shape), std::move(out));

    return tape->track(out_shape, std::move(out), [x, out_shape, stride, rank](Tape& tp, int self) {
        const auto* g = tp.grad_of(self);
        if (!g) return;
        auto& gx = tp.grad_accum(x.node(), x.size());
        std::vector<int> idx(static_cast<std::size_t>(rank), 0);
        std::size_t off = 0;
        for (std::size_t i = 0; i < g->size(); ++i) {
            gx[off] += (*g)[i];
            for (int d = rank - 1; d >= 0; --d) {
                auto du = static_cast<std::size_t>(d);
                ++idx[du];
                off += stride[du];
                if (idx[du] < out_shape[du]) break;
                off -= stride[du] * static_cast<std::size_t>(out_shape[du]);
                idx[du] = 0;
            }
        }
    });
}

namespace detail {
// Copies (or accumulates) a hyper-rectangle between row-major buffers.
template <bool Accumulate>
void copy_region(const float* src, const Shape& src_shape, const std::vector<int>& src_start,
                 float* dst, const Shape& dst_shape, const std::vector<int>& dst_start,
                 const Shape& region) {
    auto ss = row_major_strides(src_shape);
    auto ds = row_major_strides(dst_shape);
    int rank = static_cast<int>(region.size());
    std::size_t n = shape_numel(region);
    std::vector<int> idx(static_cast<std::size_t>(rank), 0);
    std::size_t soff = 0, doff = 0;
    for (int d = 0; d < rank; ++d) {
        soff += ss[static_cast<std::size_t>(d)] * static_cast<std::size_t>(src_start[static_cast<std::size_t>(d)]);
        doff += ds[static_cast<std::size_t>(d)] * static_cast<std::size_t>(dst_start[static_cast<std::size_t>(d)]);
    }
    for (std::size_t i = 0; i < n; ++i) {
        if constexpr (Accumulate)
            dst[doff] += src[soff];
        else
            dst[doff] = src[soff];
        for (int d = rank - 1; d >= 0; --d) {
            auto du = static_cast<std::size_t>(d);
            ++idx[du];
            soff += ss[du];
            doff += ds[du];
            if (idx[du] < region[du]) break;
            soff -= ss[du] * static_cast<std::size_t>(region[du]);
            doff -= ds[du] * static_cast<std::size_t>(region[du]);
            idx[du] = 0;
        }
    }
}
}  // namespace detail

inline Tensor slice(const Tensor& x, const std::vector<int>& starts, const Shape& sizes) {
    Tape* tape = detail::pick_tape({&x}, "slice");
    int rank = x.rank();
    if (static_cast<int>(starts.size()) != rank || static_cast<int>(sizes.size()) != rank)
        throw ShapeError("slice: starts/sizes rank mismatch");
    for (int d = 0; d < rank; ++d) {
        auto du = static_cast<std::size_t>(d);
        if (starts[du] < 0 || sizes[du] <= 0 || starts[du] + sizes[du] > x.extent(d))
            throw ShapeError("slice: region out of bounds on axis " + std::to_string(d));
    }
    std::vector<float> out(shape_numel(sizes));
    std::vector<int> zeros(static_cast<std::size_t>(rank), 0);
    detail::copy_region<false>(x.values().data(), x.shape(), starts, out.data(), sizes, zeros,
                               sizes);
    if (!tape || !x.requires_grad()) return Tensor(sizes, std::move(out));

    return tape->track(sizes, std::move(out), [x, starts, sizes, zeros](Tape& tp, int self) {
        const auto* g = tp.grad_of(self);
        if (!g) return;
        auto& gx = tp.grad_accum(x.node(), x.size());
        detail::copy_region<true>(g->data(), sizes, zeros, gx.data(), x.shape(), starts, sizes);
    });
}

inline Tensor concat(const Tensor& a, const Tensor& b, int axis) {
    Tape* tape = detail::pick_tape({&a, &b}, "concat");
    if (a.rank() != b.rank()) throw ShapeError("concat: rank mismatch");
    int rank = a.rank();
    if (axis < 0 || axis >= rank) throw ShapeError("concat: axis out of range");
    for (int d = 0; d < rank; ++d)
        if (d != axis && a.extent(d) != b.extent(d))
            throw ShapeError("concat: shapes " + shape_str(a.shape()) + " and " +
                             shape_str(b.shape()) + " differ off-axis");
    Shape out_shape = a.shape();
    out_shape[static_cast<std::size_t>(axis)] += b.extent(axis);
    std::vector<float> out(shape_numel(out_shape));
    std::vector<int> zeros(static_cast<std::size_t>(rank), 0);
    std::vector<int> boff(static_cast<std::size_t>(rank), 0);
    boff[static_cast<std::size_t>(axis)] = a.extent(axis);
    detail::copy_region<false>(a.values().data(), a.shape(), zeros, out.data(), out_shape, zeros,
                               a.shape());
    detail::copy_region<false>(b.values().data(), b.shape(), zeros, out.data(), out_shape, boff,
                               b.shape());
    if (!tape || !detail::any_grad({&a, &b})) return Tensor(std::move(out_shape), std::move(out));

    return tape->track(out_shape, std::move(out),
                       [a, b, out_shape, zeros, boff](Tape& tp, int self) {
                           const auto* g = tp.grad_of(self);
                           if (!g) return;
                           if (a.requires_grad()) {
                               auto& ga = tp.grad_accum(a.node(), a.size());
                               detail::copy_region<true>(g->data(), out_shape, zeros, ga.data(),
                                                         a.shape(), zeros, a.shape());
                           }
                           if (b.requires_grad()) {
                               auto& gb = tp.grad_accum(b.node(), b.size());
                               detail::copy_region<true>(g->data(), out_shape, boff, gb.data(),
                                                         b.shape(), zeros, b.shape());
                           }
                       });
}

// ---------------------------------------------------------------------------
// Exclusive prefix sum along the last axis (used for transmittance).

inline Tensor cumsum_exclusive(const Tensor& x) {
    Tape* tape = detail::pick_tape({&x}, "cumsum_exclusive");
    if (x.rank() < 1) throw ShapeError("cumsum_exclusive: need rank >= 1");
    std::size_t n = static_cast<std::size_t>(x.extent(x.rank() - 1));
    std::size_t rows = x.size() / n;
    const auto& v = x.values();
    std::vector<float> out(v.size());
    for (std::size_t r = 0; r < rows; ++r) {
        float acc = 0.0f;
        for (std::size_t j = 0; j < n; ++j) {
            out[r * n + j] = acc;
            acc += v[r * n + j];
        }
    }
    if (!tape || !x.requires_grad()) return Tensor(x.shape(), std::move(out));

    return tape->track(x.shape(), std::move(out), [x, rows, n](Tape& tp, int self) {
        const auto* g = tp.grad_of(self);
        if (!g) return;
        auto& gx = tp.grad_accum(x.node(), x.size());
        for (std::size_t r = 0; r < rows; ++r) {
            float acc = 0.0f;
            for (std::size_t j = n; j-- > 0;) {
                gx[r * n + j] += acc;  // out[j'] depends on x[j] only for j' > j
                acc += (*g)[r * n + j];
            }
        }
    });
}

// ---------------------------------------------------------------------------
// Gathers.

inline Tensor gather_rows(const Tensor& x, const std::vector<int>& idx) {
    Tape* tape = detail::pick_tape({&x}, "gather_rows");
    if (x.rank() != 2) throw ShapeError("gather_rows: need rank-2 input");
    int nrows = x.extent(0), cols = x.extent(1);
    for (int i : idx)
        if (i < 0 || i >= nrows) throw ShapeError("gather_rows: row index out of range");
    std::vector<float> out(idx.size() * static_cast<std::size_t>(cols));
    const float* src = x.values().data();
    for (std::size_t r = 0; r < idx.size(); ++r)
        std::copy(src + static_cast<std::size_t>(idx[r]) * cols,
                  src + static_cast<std::size_t>(idx[r] + 1) * cols,
                  out.data() + r * static_cast<std::size_t>(cols));
    Shape out_shape{static_cast<int>(idx.size()), cols};
    if (!tape || !x.requires_grad()) return Tensor(std::move(out_shape), std::move(out));

    auto idx_copy = std::make_shared<std::vector<int>>(idx);
    return tape->track(std::move(out_shape), std::move(out),
                       [x, idx_copy, cols](Tape& tp, int self) {
                           const auto* g = tp.grad_of(self);
                           if (!g) return;
                           auto& gx = tp.grad_accum(x.node(), x.size());
                           for (std::size_t r = 0; r < idx_copy->size(); ++r) {
                               const float* grow = g->data() + r * static_cast<std::size_t>(cols);
                               float* dst = gx.data() +
                                            static_cast<std::size_t>((*idx_copy)[r]) * cols;
                               for (int c = 0; c < cols; ++c) dst[c] += grow[c];
                           }
                       });
}

// Bilinear sampling of a [H*W, C] grid at continuous pixel coordinates; pixel
// (i, j) is centered at (i + 0.5, j + 0.5). Coordinates outside the image
// clamp to the border; the clamp count is reported per call at debug level.
inline Tensor bilinear_rows(const Tensor& grid, int height, int width,
                            const std::vector<float>& uv) {
    Tape* tape = detail::pick_tape({&grid}, "bilinear_rows");
    if (grid.rank() != 2 || grid.extent(0) != height * width)
        throw ShapeError("bilinear_rows: grid must be [H*W, C]");
    if (uv.size() % 2 != 0) throw ShapeError("bilinear_rows: uv must hold (u, v) pairs");
    int cols = grid.extent(1);
    std::size_t n = uv.size() / 2;

    struct Corner {
        std::size_t row[4];
        float w[4];
    };
    auto corners = std::make_shared<std::vector<Corner>>(n);
    std::size_t clamped = 0;
    for (std::size_t q = 0; q < n; ++q) {
        float u = uv[2 * q], v = uv[2 * q + 1];
        if (u < 0.5f || u > static_cast<float>(width) - 0.5f || v < 0.5f ||
            v > static_cast<float>(height) - 0.5f)
            ++clamped;
        float s = u - 0.5f, t = v - 0.5f;
        float fs = std::floor(s), ft = std::floor(t);
        float fx = s - fs, fy = t - ft;
        int x0 = static_cast<int>(fs), y0 = static_cast<int>(ft);
        auto cx = [&](int x) { return x < 0 ? 0 : (x >= width ? width - 1 : x); };
        auto cy = [&](int y) { return y < 0 ? 0 : (y >= height ? height - 1 : y); };
        int x0c = cx(x0), x1c = cx(x0 + 1), y0c = cy(y0), y1c = cy(y0 + 1);
        Corner& c = (*corners)[q];
        c.row[0] = static_cast<std::size_t>(y0c) * width + x0c;
        c.row[1] = static_cast<std::size_t>(y0c) * width + x1c;
        c.row[2] = static_cast<std::size_t>(y1c) * width + x0c;
        c.row[3] = static_cast<std::size_t>(y1c) * width + x1c;
        c.w[0] = (1.0f - fx) * (1.0f - fy);
        c.w[1] = fx * (1.0f - fy);
        c.w[2] = (1.0f - fx) * fy;
        c.w[3] = fx * fy;
    }
    if (clamped > 0)
        log::debug("bilinear_rows: ", clamped, " of ", n, " samples clamped to border");

    const float* src = grid.values().data();
    std::vector<float> out(n * static_cast<std::size_t>(cols), 0.0f);
    for (std::size_t q = 0; q < n; ++q) {
        const Corner& c = (*corners)[q];
        float* orow = out.data() + q * static_cast<std::size_t>(cols);
        for (int k = 0; k < 4; ++k) {
            const float* grow = src + c.row[k] * static_cast<std::size_t>(cols);
            float w = c.w[k];
            if (w == 0.0f) continue;
            for (int cc = 0; cc < cols; ++cc) orow[cc] += w * grow[cc];
        }
    }
    Shape out_shape{static_cast<int>(n), cols};
    if (!tape || !grid.requires_grad()) return Tensor(std::move(out_shape), std::move(out));

    return tape->track(std::move(out_shape), std::move(out),
                       [grid, corners, cols](Tape& tp, int self) {
                           const auto* g = tp.grad_of(self);
                           if (!g) return;
                           auto& gg = tp.grad_accum(grid.node(), grid.size());
                           for (std::size_t q = 0; q < corners->size(); ++q) {
                               const Corner& c = (*corners)[q];
                               const float* grow = g->data() + q * static_cast<std::size_t>(cols);
                               for (int k = 0; k < 4; ++k) {
                                   float w = c.w[k];
                                   if (w == 0.0f) continue;
                                   float* dst = gg.data() + c.row[k] * static_cast<std::size_t>(cols);
                                   for (int cc = 0; cc < cols; ++cc) dst[cc] += w * grow[cc];
                               }
                           }
                       });
}

// Mean over all valid 3x3 windows of the trailing two axes.
inline Tensor box3_valid(const Tensor& x) {
    Tape* tape = detail::pick_tape({&x}, "box3_valid");
    if (x.rank() < 2) throw ShapeError("box3_valid: need rank >= 2");
    int h = x.extent(x.rank() - 2), w = x.extent(x.rank() - 1);
    if (h < 3 || w < 3) throw ShapeError("box3_valid: trailing extents must be >= 3");
    std::size_t planes = x.size() / (static_cast<std::size_t>(h) * w);
    int oh = h - 2, ow = w - 2;
    Shape out_shape = x.shape();
    out_shape[out_shape.size() - 2] = oh;
    out_shape[out_shape.size() - 1] = ow;

    const auto& v = x.values();
    std::vector<float> out(planes * static_cast<std::size_t>(oh) * ow);
    for (std::size_t p = 0; p < planes; ++p) {
        const float* src = v.data() + p * static_cast<std::size_t>(h) * w;
        float* dst = out.data() + p * static_cast<std::size_t>(oh) * ow;
        for (int i = 0; i < oh; ++i) {
            for (int j = 0; j < ow; ++j) {
                float acc = 0.0f;
                for (int di = 0; di < 3; ++di)
                    for (int dj = 0; dj < 3; ++dj)
                        acc += src[static_cast<std::size_t>(i + di) * w + (j + dj)];
                dst[static_cast<std::size_t>(i) * ow + j] = acc / 9.0f;
            }
        }
    }
    if (!tape || !x.requires_grad()) return Tensor(std::move(out_shape), std::move(out));

    return tape->track(std::move(out_shape), std::move(out),
                       [x, planes, h, w, oh, ow](Tape& tp, int self) {
                           const auto* g = tp.grad_of(self);
                           if (!g) return;
                           auto& gx = tp.grad_accum(x.node(), x.size());
                           for (std::size_t p = 0; p < planes; ++p) {
                               const float* gsrc = g->data() + p * static_cast<std::size_t>(oh) * ow;
                               float* dst = gx.data() + p * static_cast<std::size_t>(h) * w;
                               for (int i = 0; i < oh; ++i) {
                                   for (int j = 0; j < ow; ++j) {
                                       float gi = gsrc[static_cast<std::size_t>(i) * ow + j] / 9.0f;
                                       for (int di = 0; di < 3; ++di)
                                           for (int dj = 0; dj < 3; ++dj)
                                               dst[static_cast<std::size_t>(i + di) * w + (j + dj)] += gi;
                                   }
                               }
                           }
                       });
}

// ---------------------------------------------------------------------------
// Detach and small conveniences.

// Untracked view of x sharing its storage.
inline Tensor detach(const Tensor& x) {
    if (!x.defined()) return Tensor();
    return Tensor::share(x, x.shape());
}

// x @ w + b for x:[N,K], w:[K,M], b:[M].
inline Tensor affine(const Tensor& x, const Tensor& w, const Tensor& b) {
    return add(matmul(x, w), b);
}

// Cosine similarity of two vectors, clamped to [-1, 1]. A pair of zero
// vectors yields 0 (logged); a single zero vector also yields 0 by the
// limit convention. The tiny additive guard keeps sqrt off exact zero.
inline Tensor cosine_similarity(const Tensor& a, const Tensor& b) {
    if (a.rank() != 1 || b.rank() != 1 || a.extent(0) != b.extent(0))
        throw ShapeError("cosine_similarity: need equal-length vectors, got " +
                         shape_str(a.shape()) + " and " + shape_str(b.shape()));
    double na2 = 0.0, nb2 = 0.0;
    for (float x : a.values()) na2 += static_cast<double>(x) * x;
    for (float x : b.values()) nb2 += static_cast<double>(x) * x;
    if (na2 == 0.0 && nb2 == 0.0) {
        log::warn("cosine_similarity: both vectors are zero, returning 0");
        return Tensor::scalar(0.0f);
    }
    if (na2 == 0.0 || nb2 == 0.0) return Tensor::scalar(0.0f);

    Tensor dot = sum(mul(a, b));
    Tensor den = sqrt(add_const(mul(sum(mul(a, a)), sum(mul(b, b))), 1e-30f));
    Tensor cos = div(dot, den);
    return min(max(cos, Tensor::scalar(-1.0f)), Tensor::scalar(1.0f));
}

}  // namespace fieldsc::ad
