// The trainable feature field. An image is turned into per-pixel embeddings
// by a small windowed perceptron; 3D queries project into the input view,
// interpolate an embedding, and decode density plus a low-dimensional feature
// through a second perceptron conditioned on a positional encoding. A single
// affine map lifts low-dimensional features to the target width.
#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "fieldsc/error.hpp"
#include "fieldsc/geometry.hpp"
#include "fieldsc/random.hpp"
#include "fieldsc/tensor.hpp"

namespace fieldsc::field {

using ad::Tensor;

struct FieldConfig {
    int embed_dim = 32;   // width of the per-pixel embedding E
    int field_dim = 8;    // low-dim feature width produced by the decoder
    int target_dim = 16;  // width of the distillation targets (after up-projection)
    int hidden = 32;      // hidden width shared by encoder and decoder
    int pe_octaves = 4;
    int window = 9;       // encoder receptive field, odd
    int patch = 8;        // target-feature stride p

    int pe_dim() const { return 3 + 6 * pe_octaves; }

    void validate(int width, int height) const {
        if (window < 1 || window % 2 == 0)
            throw ConfigError("field: window must be odd and positive");
        if (field_dim > target_dim)
            throw ConfigError("field: field_dim must not exceed target_dim");
        if (embed_dim < 1 || field_dim < 1 || target_dim < 1 || hidden < 1)
            throw ConfigError("field: dimensions must be positive");
        if (pe_octaves < 0) throw ConfigError("field: pe_octaves must be >= 0");
        if (patch < 1 || width % patch != 0 || height % patch != 0)
            throw ConfigError("field: patch size must divide image width and height");
    }
};

// All trainable state. Parameter tensors are plain (untracked) storage; a
// training step watches them on a tape via watched().
struct FieldParams {
    Tensor enc_w1, enc_b1, enc_w2, enc_b2;  // window patch -> hidden -> D_E
    Tensor phi_w1, phi_b1, phi_w2, phi_b2;  // (D_E + pe) -> hidden -> 1 + field_dim
    Tensor up_w, up_b;                      // field_dim -> target_dim
    Tensor down_logits;                     // p*p kernel logits for the downsampler
    Tensor f_bar;                           // constant feature decomposition [D, H/p, W/p]

    static FieldParams init(const FieldConfig& cfg, int width, int height, Rng& rng) {
        cfg.validate(width, height);
        auto dense = [&rng](int rows, int cols) {
            Tensor t = Tensor::zeros({rows, cols});
            float scale = std::sqrt(2.0f / static_cast<float>(rows));
            for (auto& x : t.mutable_values()) x = static_cast<float>(rng.normal()) * scale;
            return t;
        };
        FieldParams p;
        int enc_in = cfg.window * cfg.window * 3;
        p.enc_w1 = dense(enc_in, cfg.hidden);
        p.enc_b1 = Tensor::zeros({cfg.hidden});
        p.enc_w2 = dense(cfg.hidden, cfg.embed_dim);
        p.enc_b2 = Tensor::zeros({cfg.embed_dim});
        p.phi_w1 = dense(cfg.embed_dim + cfg.pe_dim(), cfg.hidden);
        p.phi_b1 = Tensor::zeros({cfg.hidden});
        p.phi_w2 = dense(cfg.hidden, 1 + cfg.field_dim);
        p.phi_b2 = Tensor::zeros({1 + cfg.field_dim});
        p.up_w = dense(cfg.field_dim, cfg.target_dim);
        p.up_b = Tensor::zeros({cfg.target_dim});
        p.down_logits = Tensor::zeros({cfg.patch * cfg.patch});
        p.f_bar = Tensor::zeros({cfg.target_dim, height / cfg.patch, width / cfg.patch});
        return p;
    }

    std::vector<std::pair<std::string, Tensor*>> named() {
        return {{"enc_w1", &enc_w1}, {"enc_b1", &enc_b1}, {"enc_w2", &enc_w2},
                {"enc_b2", &enc_b2}, {"phi_w1", &phi_w1}, {"phi_b1", &phi_b1},
                {"phi_w2", &phi_w2}, {"phi_b2", &phi_b2}, {"up_w", &up_w},
                {"up_b", &up_b},     {"down_logits", &down_logits}, {"f_bar", &f_bar}};
    }

    std::vector<Tensor*> all() {
        std::vector<Tensor*> out;
        for (auto& [name, t] : named()) out.push_back(t);
        return out;
    }

    // Copy whose tensors live on the given tape so gradients reach them. The
    // copy shares no storage; callers pull updated values via the original
    // tensors passed to the optimizer.
    FieldParams watched(ad::Tape& tape) const {
        FieldParams w = *this;
        for (auto& [name, t] : w.named()) *t = tape.watch(*t);
        return w;
    }
};

// ---------------------------------------------------------------------------
// Encoder

// Rearranges a [3,H,W] image into one row per pixel holding its window x
// window neighborhood (edge replicated), ordered (dy, dx, channel). The
// result is constant input data, never differentiated.
inline Tensor im2col_window(const Tensor& image, int window) {
    if (image.rank() != 3 || image.extent(0) != 3)
        throw ShapeError("im2col_window: expected image of shape [3,H,W]");
    if (window < 1 || window % 2 == 0) throw ShapeError("im2col_window: window must be odd");
    int h = image.extent(1), w = image.extent(2);
    int r = window / 2;
    std::vector<float> rows(static_cast<std::size_t>(h) * w * window * window * 3);
    const auto& src = image.values();
    std::size_t plane = static_cast<std::size_t>(h) * w;
    std::size_t out = 0;
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            for (int dy = -r; dy <= r; ++dy) {
                int yy = std::min(std::max(y + dy, 0), h - 1);
                for (int dx = -r; dx <= r; ++dx) {
                    int xx = std::min(std::max(x + dx, 0), w - 1);
                    std::size_t px = static_cast<std::size_t>(yy) * w + xx;
                    rows[out++] = src[px];
                    rows[out++] = src[plane + px];
                    rows[out++] = src[2 * plane + px];
                }
            }
    return Tensor({h * w, window * window * 3}, std::move(rows));
}

// Per-pixel embeddings as rows [H*W, D_E]; this is the layout every other
// stage consumes.
inline Tensor encode_image_rows(const Tensor& image, const FieldConfig& cfg,
                                const FieldParams& params) {
    Tensor patches = im2col_window(image, cfg.window);
    Tensor hiddenv = ad::softplus(ad::affine(patches, params.enc_w1, params.enc_b1));
    return ad::affine(hiddenv, params.enc_w2, params.enc_b2);
}

// Spec-shaped view of the same embeddings: [D_E, H, W].
inline Tensor encode_image(const Tensor& image, const FieldConfig& cfg,
                           const FieldParams& params) {
    int h = image.extent(1), w = image.extent(2);
    Tensor rows = encode_image_rows(image, cfg, params);
    return ad::permute(ad::reshape(rows, {h, w, cfg.embed_dim}), {2, 0, 1});
}

// Bilinear lookup of embeddings at continuous pixel positions (x,y pairs).
inline Tensor interpolate_rows(const Tensor& e_rows, int h, int w,
                               const std::vector<float>& uv) {
    return ad::bilinear_rows(e_rows, h, w, uv);
}

// Single-query variant over a [D_E,H,W] embedding map.
inline Tensor interpolate_embedding(const Tensor& e, float u, float v) {
    if (e.rank() != 3) throw ShapeError("interpolate_embedding: expected [D_E,H,W]");
    int d = e.extent(0), h = e.extent(1), w = e.extent(2);
    Tensor rows = ad::reshape(ad::permute(e, {1, 2, 0}), {h * w, d});
    return ad::reshape(ad::bilinear_rows(rows, h, w, {u, v}), {d});
}

// ---------------------------------------------------------------------------
// Positional encoding

// gamma(u, d): raw (u_x, u_y, 1/d) followed, octave by octave, by the sines
// then cosines of all three values at frequency 2^k * pi. u is normalized to
// [0,1]^2 by the caller. Pure data, so this returns raw floats.
inline void positional_encoding_into(float ux, float uy, float d, int octaves, float* out) {
    if (d <= 0.0f) throw DomainError("positional_encoding: distance must be positive");
    float inv_d = 1.0f / d;
    out[0] = ux;
    out[1] = uy;
    out[2] = inv_d;
    float base[3] = {ux, uy, inv_d};
    float* cursor = out + 3;
    for (int k = 0; k < octaves; ++k) {
        float freq = std::ldexp(static_cast<float>(M_PI), k);
        for (float b : base) *cursor++ = std::sin(freq * b);
        for (float b : base) *cursor++ = std::cos(freq * b);
    }
}

inline std::vector<float> positional_encoding(float ux, float uy, float d, int octaves) {
    if (octaves < 0) throw DomainError("positional_encoding: octaves must be >= 0");
    std::vector<float> out(static_cast<std::size_t>(3 + 6 * octaves));
    positional_encoding_into(ux, uy, d, octaves, out.data());
    return out;
}

// ---------------------------------------------------------------------------
// Decoder

struct Decoded {
    Tensor sigma;     // [N], nonnegative
    Tensor feat_low;  // [N, field_dim]
};

// Batched decoder over interpolated embeddings [N,D_E] and their positional
// encodings [N,pe_dim]. Density goes through softplus; features stay linear.
inline Decoded decode_rows(const Tensor& e_interp, const Tensor& pe, const FieldConfig& cfg,
                           const FieldParams& params) {
    Tensor x = ad::concat(e_interp, pe, 1);
    Tensor hiddenv = ad::softplus(ad::affine(x, params.phi_w1, params.phi_b1));
    Tensor out = ad::affine(hiddenv, params.phi_w2, params.phi_b2);
    int n = out.extent(0);
    Decoded dec;
    dec.sigma = ad::reshape(ad::softplus(ad::slice(out, {0, 0}, {n, 1})), {n});
    dec.feat_low = ad::slice(out, {0, 1}, {n, cfg.field_dim});
    return dec;
}

// One point, spec-style: embedding vector, normalized pixel, range.
inline Decoded decode_point(const Tensor& e_u, float ux, float uy, float d,
                            const FieldConfig& cfg, const FieldParams& params) {
    if (e_u.rank() != 1) throw ShapeError("decode_point: embedding must be a vector");
    Tensor e_row = ad::reshape(e_u, {1, e_u.extent(0)});
    Tensor pe({1, cfg.pe_dim()}, positional_encoding(ux, uy, d, cfg.pe_octaves));
    return decode_rows(e_row, pe, cfg, params);
}

inline Tensor up_project(const Tensor& f_low, const FieldParams& params) {
    return ad::affine(f_low, params.up_w, params.up_b);
}

// ---------------------------------------------------------------------------
// Full query path

struct QueryResult {
    Tensor sigma;                     // [N]
    Tensor feat_low;                  // [N, field_dim]
    std::vector<std::uint8_t> valid;  // 1 where the point fell inside the input frustum
};

// Projects world points into the input view, interpolates embeddings
// (border-clamped), and decodes. Off-frustum points still produce clamped
// values but are flagged invalid; consumers must honor the flag.
inline QueryResult query_field_low(const Tensor& e_rows, const std::vector<geo::Vec3>& points,
                                   const geo::Pose& input_pose, const geo::Intrinsics& k,
                                   const FieldConfig& cfg, const FieldParams& params) {
    std::size_t n = points.size();
    if (n == 0) throw ShapeError("query_field: empty point batch");
    std::vector<float> uv(2 * n);
    std::vector<float> pe(n * static_cast<std::size_t>(cfg.pe_dim()));
    std::vector<std::uint8_t> valid(n, 0);
    geo::Vec3 center = input_pose.center();
    float wf = static_cast<float>(k.width), hf = static_cast<float>(k.height);
    for (std::size_t i = 0; i < n; ++i) {
        geo::Projection pr = geo::project(points[i], input_pose, k);
        valid[i] = geo::in_image(pr, k) ? 1 : 0;
        float u = pr.in_front ? std::min(std::max(pr.u, 0.0f), wf) : 0.0f;
        float v = pr.in_front ? std::min(std::max(pr.v, 0.0f), hf) : 0.0f;
        uv[2 * i] = u;
        uv[2 * i + 1] = v;
        float range = geo::norm(points[i] - center);
        if (range <= 1e-6f) {
            valid[i] = 0;
            range = 1e-6f;
        }
        positional_encoding_into(u / wf, v / hf, range, cfg.pe_octaves,
                                 pe.data() + i * static_cast<std::size_t>(cfg.pe_dim()));
    }
    Tensor e_interp = ad::bilinear_rows(e_rows, k.height, k.width, uv);
    Tensor pe_t({static_cast<int>(n), cfg.pe_dim()}, std::move(pe));
    Decoded dec = decode_rows(e_interp, pe_t, cfg, params);
    return QueryResult{dec.sigma, dec.feat_low, std::move(valid)};
}

struct QueryFull {
    Tensor sigma;                     // [N]
    Tensor feat;                      // [N, target_dim]
    std::vector<std::uint8_t> valid;
};

inline QueryFull query_field(const Tensor& e_rows, const std::vector<geo::Vec3>& points,
                             const geo::Pose& input_pose, const geo::Intrinsics& k,
                             const FieldConfig& cfg, const FieldParams& params) {
    QueryResult low = query_field_low(e_rows, points, input_pose, k, cfg, params);
    return QueryFull{low.sigma, up_project(low.feat_low, params), std::move(low.valid)};
}

}  // namespace fieldsc::field
