#pragma once

// Double-precision reference implementations used as test oracles, plus the
// central finite-difference harness. Everything here is written as plain
// loops over explicit multi-indices, deliberately independent of the library
// kernels it checks. Gradients are estimated by perturbing double inputs and
// evaluating these references (64-bit shadow evaluation); the analytic side
// comes from the float32 tape.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "fieldsc/tensor.hpp"

namespace refs {

struct DArr {
    std::vector<int> shape;
    std::vector<double> v;

    DArr() = default;
    DArr(std::vector<int> s, std::vector<double> vals) : shape(std::move(s)), v(std::move(vals)) {}

    static DArr zeros(std::vector<int> s) {
        std::size_t n = 1;
        for (int e : s) n *= static_cast<std::size_t>(e);
        return DArr(std::move(s), std::vector<double>(n, 0.0));
    }

    static DArr from(const fieldsc::ad::Tensor& t) {
        DArr out;
        out.shape = t.shape();
        out.v.assign(t.values().begin(), t.values().end());
        return out;
    }

    fieldsc::ad::Tensor to_tensor() const {
        std::vector<float> f(v.size());
        for (std::size_t i = 0; i < v.size(); ++i) f[i] = static_cast<float>(v[i]);
        return fieldsc::ad::Tensor(shape, std::move(f));
    }

    std::size_t size() const { return v.size(); }
    int rank() const { return static_cast<int>(shape.size()); }
};

inline std::size_t numel(const std::vector<int>& s) {
    std::size_t n = 1;
    for (int e : s) n *= static_cast<std::size_t>(e);
    return n;
}

inline std::vector<int> unravel(std::size_t lin, const std::vector<int>& shape) {
    std::vector<int> idx(shape.size(), 0);
    for (int d = static_cast<int>(shape.size()) - 1; d >= 0; --d) {
        auto e = static_cast<std::size_t>(shape[static_cast<std::size_t>(d)]);
        idx[static_cast<std::size_t>(d)] = static_cast<int>(lin % e);
        lin /= e;
    }
    return idx;
}

inline std::size_t ravel(const std::vector<int>& idx, const std::vector<int>& shape) {
    std::size_t lin = 0;
    for (std::size_t d = 0; d < shape.size(); ++d)
        lin = lin * static_cast<std::size_t>(shape[d]) + static_cast<std::size_t>(idx[d]);
    return lin;
}

// Right-aligned broadcast: maps an output multi-index onto an operand.
inline std::size_t bindex(const std::vector<int>& out_idx, const std::vector<int>& shape) {
    std::size_t off = out_idx.size() - shape.size();
    std::size_t lin = 0;
    for (std::size_t d = 0; d < shape.size(); ++d) {
        int i = out_idx[off + d];
        if (shape[d] == 1) i = 0;
        lin = lin * static_cast<std::size_t>(shape[d]) + static_cast<std::size_t>(i);
    }
    return lin;
}

inline std::vector<int> bshape(const std::vector<int>& a, const std::vector<int>& b) {
    std::size_t rank = std::max(a.size(), b.size());
    std::vector<int> out(rank, 1);
    for (std::size_t d = 0; d < rank; ++d) {
        int ea = d >= rank - a.size() ? a[d - (rank - a.size())] : 1;
        int eb = d >= rank - b.size() ? b[d - (rank - b.size())] : 1;
        out[d] = ea == 1 ? eb : ea;
    }
    return out;
}

// ---------------------------------------------------------------------------
// Elementwise references.

enum class BinKind { add, sub, mul, div, min, max };
enum class UnKind { exp, log, neg, relu, softplus, abs, sqrt };

inline DArr dbinary(const DArr& a, const DArr& b, BinKind kind) {
    DArr out = DArr::zeros(bshape(a.shape, b.shape));
    for (std::size_t i = 0; i < out.size(); ++i) {
        auto idx = unravel(i, out.shape);
        double x = a.v[bindex(idx, a.shape)];
        double y = b.v[bindex(idx, b.shape)];
        switch (kind) {
            case BinKind::add: out.v[i] = x + y; break;
            case BinKind::sub: out.v[i] = x - y; break;
            case BinKind::mul: out.v[i] = x * y; break;
            case BinKind::div: out.v[i] = x / y; break;
            case BinKind::min: out.v[i] = x <= y ? x : y; break;
            case BinKind::max: out.v[i] = x >= y ? x : y; break;
        }
    }
    return out;
}

inline DArr dunary(const DArr& a, UnKind kind) {
    DArr out = a;
    for (auto& x : out.v) {
        switch (kind) {
            case UnKind::exp: x = std::exp(x); break;
            case UnKind::log: x = std::log(x); break;
            case UnKind::neg: x = -x; break;
            case UnKind::relu: x = x > 0.0 ? x : 0.0; break;
            case UnKind::softplus: x = x > 30.0 ? x : std::log1p(std::exp(x)); break;
            case UnKind::abs: x = std::fabs(x); break;
            case UnKind::sqrt: x = std::sqrt(x); break;
        }
    }
    return out;
}

inline DArr dadd(const DArr& a, const DArr& b) { return dbinary(a, b, BinKind::add); }
inline DArr dsub(const DArr& a, const DArr& b) { return dbinary(a, b, BinKind::sub); }
inline DArr dmul(const DArr& a, const DArr& b) { return dbinary(a, b, BinKind::mul); }
inline DArr ddiv(const DArr& a, const DArr& b) { return dbinary(a, b, BinKind::div); }
inline DArr dmin(const DArr& a, const DArr& b) { return dbinary(a, b, BinKind::min); }
inline DArr dmax(const DArr& a, const DArr& b) { return dbinary(a, b, BinKind::max); }

inline DArr dscale(const DArr& a, double c) {
    DArr out = a;
    for (auto& x : out.v) x *= c;
    return out;
}

inline DArr dmatmul(const DArr& a, const DArr& b) {
    int m = a.shape[0], k = a.shape[1], n = b.shape[1];
    DArr out = DArr::zeros({m, n});
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j) {
            double acc = 0.0;
            for (int t = 0; t < k; ++t)
                acc += a.v[static_cast<std::size_t>(i) * k + t] *
                       b.v[static_cast<std::size_t>(t) * n + j];
            out.v[static_cast<std::size_t>(i) * n + j] = acc;
        }
    return out;
}

enum class RedKind { sum, mean, min };

inline DArr dreduce(const DArr& a, RedKind kind, std::optional<int> axis = std::nullopt,
                    bool keepdim = false) {
    std::vector<int> out_shape;
    if (!axis) {
        out_shape = keepdim ? std::vector<int>(a.shape.size(), 1) : std::vector<int>{};
    } else {
        for (int d = 0; d < a.rank(); ++d) {
            if (d == *axis) {
                if (keepdim) out_shape.push_back(1);
            } else {
                out_shape.push_back(a.shape[static_cast<std::size_t>(d)]);
            }
        }
    }
    DArr out = DArr::zeros(out_shape);
    std::vector<bool> started(out.size(), false);
    std::vector<std::size_t> counts(out.size(), 0);
    for (std::size_t i = 0; i < a.size(); ++i) {
        auto idx = unravel(i, a.shape);
        std::vector<int> oidx;
        for (int d = 0; d < a.rank(); ++d) {
            if (axis && d == *axis) {
                if (keepdim) oidx.push_back(0);
            } else if (!axis) {
                if (keepdim) oidx.push_back(0);
            } else {
                oidx.push_back(idx[static_cast<std::size_t>(d)]);
            }
        }
        if (!axis && !keepdim) oidx.clear();
        std::size_t oi = out_shape.empty() ? 0 : ravel(oidx, out_shape);
        switch (kind) {
            case RedKind::sum:
            case RedKind::mean:
                out.v[oi] += a.v[i];
                break;
            case RedKind::min:
                if (!started[oi] || a.v[i] < out.v[oi]) out.v[oi] = a.v[i];
                break;
        }
        started[oi] = true;
        counts[oi] += 1;
    }
    if (kind == RedKind::mean)
        for (std::size_t i = 0; i < out.size(); ++i) out.v[i] /= static_cast<double>(counts[i]);
    return out;
}

inline DArr dsoftmax(const DArr& a, int axis) {
    DArr out = a;
    std::size_t outer = 1, n = static_cast<std::size_t>(a.shape[static_cast<std::size_t>(axis)]),
                inner = 1;
    for (int d = 0; d < axis; ++d) outer *= static_cast<std::size_t>(a.shape[static_cast<std::size_t>(d)]);
    for (int d = axis + 1; d < a.rank(); ++d)
        inner *= static_cast<std::size_t>(a.shape[static_cast<std::size_t>(d)]);
    for (std::size_t o = 0; o < outer; ++o)
        for (std::size_t in = 0; in < inner; ++in) {
            double m = -1e300;
            for (std::size_t r = 0; r < n; ++r) m = std::max(m, a.v[(o * n + r) * inner + in]);
            double s = 0.0;
            for (std::size_t r = 0; r < n; ++r) {
                double e = std::exp(a.v[(o * n + r) * inner + in] - m);
                out.v[(o * n + r) * inner + in] = e;
                s += e;
            }
            for (std::size_t r = 0; r < n; ++r) out.v[(o * n + r) * inner + in] /= s;
        }
    return out;
}

inline DArr dcumsum_excl(const DArr& a) {
    DArr out = a;
    std::size_t n = static_cast<std::size_t>(a.shape.back());
    std::size_t rows = a.size() / n;
    for (std::size_t r = 0; r < rows; ++r) {
        double acc = 0.0;
        for (std::size_t j = 0; j < n; ++j) {
            out.v[r * n + j] = acc;
            acc += a.v[r * n + j];
        }
    }
    return out;
}

inline DArr dbox3(const DArr& a) {
    int h = a.shape[a.shape.size() - 2], w = a.shape.back();
    int oh = h - 2, ow = w - 2;
    std::vector<int> oshape = a.shape;
    oshape[oshape.size() - 2] = oh;
    oshape.back() = ow;
    DArr out = DArr::zeros(oshape);
    std::size_t planes = a.size() / (static_cast<std::size_t>(h) * w);
    for (std::size_t p = 0; p < planes; ++p)
        for (int i = 0; i < oh; ++i)
            for (int j = 0; j < ow; ++j) {
                double acc = 0.0;
                for (int di = 0; di < 3; ++di)
                    for (int dj = 0; dj < 3; ++dj)
                        acc += a.v[p * h * w + static_cast<std::size_t>(i + di) * w + (j + dj)];
                out.v[p * oh * ow + static_cast<std::size_t>(i) * ow + j] = acc / 9.0;
            }
    return out;
}

inline DArr dbilinear(const DArr& grid, int height, int width, const std::vector<double>& uv) {
    int cols = grid.shape[1];
    std::size_t n = uv.size() / 2;
    DArr out = DArr::zeros({static_cast<int>(n), cols});
    auto clampi = [](int x, int lo, int hi) { return x < lo ? lo : (x > hi ? hi : x); };
    for (std::size_t q = 0; q < n; ++q) {
        double s = uv[2 * q] - 0.5, t = uv[2 * q + 1] - 0.5;
        int x0 = static_cast<int>(std::floor(s)), y0 = static_cast<int>(std::floor(t));
        double fx = s - x0, fy = t - y0;
        int x0c = clampi(x0, 0, width - 1), x1c = clampi(x0 + 1, 0, width - 1);
        int y0c = clampi(y0, 0, height - 1), y1c = clampi(y0 + 1, 0, height - 1);
        for (int c = 0; c < cols; ++c) {
            double v00 = grid.v[(static_cast<std::size_t>(y0c) * width + x0c) * cols + c];
            double v01 = grid.v[(static_cast<std::size_t>(y0c) * width + x1c) * cols + c];
            double v10 = grid.v[(static_cast<std::size_t>(y1c) * width + x0c) * cols + c];
            double v11 = grid.v[(static_cast<std::size_t>(y1c) * width + x1c) * cols + c];
            out.v[q * cols + c] = (1 - fx) * (1 - fy) * v00 + fx * (1 - fy) * v01 +
                                  (1 - fx) * fy * v10 + fx * fy * v11;
        }
    }
    return out;
}

inline DArr dgather_rows(const DArr& a, const std::vector<int>& idx) {
    int cols = a.shape[1];
    DArr out = DArr::zeros({static_cast<int>(idx.size()), cols});
    for (std::size_t r = 0; r < idx.size(); ++r)
        for (int c = 0; c < cols; ++c)
            out.v[r * cols + c] = a.v[static_cast<std::size_t>(idx[r]) * cols + c];
    return out;
}

inline double dcosine(const DArr& a, const DArr& b) {
    double dot = 0.0, na = 0.0, nb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        dot += a.v[i] * b.v[i];
        na += a.v[i] * a.v[i];
        nb += b.v[i] * b.v[i];
    }
    if (na == 0.0 || nb == 0.0) return 0.0;
    double c = dot / std::sqrt(na * nb);
    return std::clamp(c, -1.0, 1.0);
}

// ---------------------------------------------------------------------------
// Finite-difference harness.

using RefFn = std::function<double(const std::vector<DArr>&)>;

// Central differences with h = 1e-3 on double copies of the inputs.
inline std::vector<std::vector<double>> fd_grads(const RefFn& f, std::vector<DArr> inputs,
                                                 double h = 1e-3) {
    std::vector<std::vector<double>> grads(inputs.size());
    for (std::size_t p = 0; p < inputs.size(); ++p) {
        grads[p].resize(inputs[p].size());
        for (std::size_t i = 0; i < inputs[p].size(); ++i) {
            double keep = inputs[p].v[i];
            inputs[p].v[i] = keep + h;
            double fp = f(inputs);
            inputs[p].v[i] = keep - h;
            double fm = f(inputs);
            inputs[p].v[i] = keep;
            grads[p][i] = (fp - fm) / (2.0 * h);
        }
    }
    return grads;
}

struct GradDiff {
    std::size_t param = 0, index = 0;
    double analytic = 0.0, fd = 0.0, err = 0.0;
};

// Worst violation of |analytic - fd| <= rel * max(|analytic|, |fd|) + floor,
// or nullopt when every entry passes.
inline std::optional<GradDiff> max_violation(
    const std::vector<std::vector<float>>& analytic,
    const std::vector<std::vector<double>>& fd, double rel = 1e-4, double floor = 1e-6) {
    std::optional<GradDiff> worst;
    for (std::size_t p = 0; p < analytic.size(); ++p) {
        for (std::size_t i = 0; i < analytic[p].size(); ++i) {
            double a = analytic[p][i], b = fd[p][i];
            double tol = rel * std::max(std::fabs(a), std::fabs(b)) + floor;
            double err = std::fabs(a - b) - tol;
            if (err > 0.0 && (!worst || err > worst->err))
                worst = GradDiff{p, i, a, b, err};
        }
    }
    return worst;
}

// Builds the f32 graph over watched copies of `inputs`, runs backward, and
// compares every input gradient against finite differences of `ref`.
using GraphFn = std::function<fieldsc::ad::Tensor(std::vector<fieldsc::ad::Tensor>&)>;

inline std::optional<GradDiff> check_gradients(const GraphFn& build, const RefFn& ref,
                                               const std::vector<DArr>& inputs,
                                               double rel = 1e-4, double floor = 1e-6,
                                               double h = 1e-3) {
    fieldsc::ad::Tape tape;
    std::vector<fieldsc::ad::Tensor> watched;
    watched.reserve(inputs.size());
    for (const auto& in : inputs) watched.push_back(tape.watch(in.to_tensor()));
    fieldsc::ad::Tensor loss = build(watched);
    auto grads = tape.backward(loss);

    std::vector<std::vector<float>> analytic;
    analytic.reserve(inputs.size());
    for (const auto& w : watched) analytic.push_back(grads.at(w));
    return max_violation(analytic, fd_grads(ref, inputs, h), rel, floor);
}

}  // namespace refs
