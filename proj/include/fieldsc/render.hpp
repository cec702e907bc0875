// Probabilistic volume rendering along camera rays. Densities come from the
// feature field; alphas, visibilities, and composite values follow the
// standard emission-absorption model. Colors are not predicted: they are
// sampled from other views at the 3D sample points and blended with the same
// weights, so the photometric loss trains geometry only.
#pragma once

#include <cstdint>
#include <vector>

#include "fieldsc/field.hpp"
#include "fieldsc/geometry.hpp"
#include "fieldsc/tensor.hpp"

namespace fieldsc::render {

using ad::Tensor;

struct RenderConfig {
    int samples = 16;  // L points per ray
    float near = 0.5f;
    float far = 25.0f;
    // Exact expected-distance compositing by default; when true, depth is
    // divided by accumulated opacity (alternative convention, off unless
    // explicitly requested).
    bool normalize_depth_by_opacity = false;

    void validate() const {
        if (samples < 2) throw ConfigError("render: need at least two samples per ray");
        if (!(near > 0.0f) || !(far > near)) throw ConfigError("render: need 0 < near < far");
    }
};

struct View {
    Tensor image;  // [3,H,W], values in [0,1]
    geo::Pose pose;
    geo::Intrinsics k;
};

// ---------------------------------------------------------------------------
// Core quantities

struct AlphaResult {
    Tensor alpha;  // [N,L]: 1 - exp(-sigma*delta)
    Tensor vis;    // [N,L]: probability the ray reaches sample i
};

// sigma [N,L] (or [L]), delta broadcastable against it. Visibility uses the
// identity prod_{j<i}(1-alpha_j) = exp(-sum_{j<i} sigma_j delta_j), which
// keeps the backward pass to elementwise ops and a cumulative sum.
inline AlphaResult compute_alphas(const Tensor& sigma, const Tensor& delta) {
    for (float s : sigma.values())
        if (s < 0.0f) throw DomainError("compute_alphas: sigma must be nonnegative");
    for (float d : delta.values())
        if (d <= 0.0f) throw DomainError("compute_alphas: delta must be positive");
    Tensor optical = ad::mul(sigma, delta);
    Tensor alpha = ad::sub(Tensor::scalar(1.0f), ad::exp(ad::neg(optical)));
    Tensor vis = ad::exp(ad::neg(ad::cumsum_exclusive(optical)));
    return {alpha, vis};
}

// Blend per-sample values with weights. weights [N,L]; values either [N,L]
// (scalar per sample, result [N]) or [N,L,C] (result [N,C]).
inline Tensor composite(const Tensor& weights, const Tensor& values) {
    if (weights.rank() != 2) throw ShapeError("composite: weights must be [N,L]");
    if (values.rank() == 2) {
        if (values.shape() != weights.shape())
            throw ShapeError("composite: scalar values must match weight shape");
        return ad::sum(ad::mul(weights, values), 1);
    }
    if (values.rank() == 3) {
        if (values.extent(0) != weights.extent(0) || values.extent(1) != weights.extent(1))
            throw ShapeError("composite: value batch/sample dims must match weights");
        Tensor w3 = ad::reshape(weights, {weights.extent(0), weights.extent(1), 1});
        return ad::sum(ad::mul(w3, values), 1);
    }
    throw ShapeError("composite: values must be rank 2 or 3");
}

// ---------------------------------------------------------------------------
// Color sampling from source views

struct ColorSamples {
    Tensor colors;                    // [N,3] constants, zero where invalid
    std::vector<std::uint8_t> valid;  // in front of the source camera and on its image
};

inline ColorSamples sample_color_from_source(const std::vector<geo::Vec3>& points,
                                             const View& src) {
    int h = src.k.height, w = src.k.width;
    std::size_t plane = static_cast<std::size_t>(h) * w;
    const auto& img = src.image.values();
    std::size_t n = points.size();
    std::vector<float> colors(n * 3, 0.0f);
    std::vector<std::uint8_t> valid(n, 0);
    for (std::size_t i = 0; i < n; ++i) {
        geo::Projection pr = geo::project(points[i], src.pose, src.k);
        if (!geo::in_image(pr, src.k)) continue;
        valid[i] = 1;
        // Bilinear fetch with the shared pixel-center convention.
        float fx = pr.u - 0.5f, fy = pr.v - 0.5f;
        int x0 = static_cast<int>(std::floor(fx)), y0 = static_cast<int>(std::floor(fy));
        float ax = fx - static_cast<float>(x0), ay = fy - static_cast<float>(y0);
        int x1 = std::min(std::max(x0 + 1, 0), w - 1), y1 = std::min(std::max(y0 + 1, 0), h - 1);
        x0 = std::min(std::max(x0, 0), w - 1);
        y0 = std::min(std::max(y0, 0), h - 1);
        for (int c = 0; c < 3; ++c) {
            const float* ch = img.data() + static_cast<std::size_t>(c) * plane;
            float top = (1 - ax) * ch[static_cast<std::size_t>(y0) * w + x0] +
                        ax * ch[static_cast<std::size_t>(y0) * w + x1];
            float bot = (1 - ax) * ch[static_cast<std::size_t>(y1) * w + x0] +
                        ax * ch[static_cast<std::size_t>(y1) * w + x1];
            colors[i * 3 + c] = (1 - ay) * top + ay * bot;
        }
    }
    return {Tensor({static_cast<int>(n), 3}, std::move(colors)), std::move(valid)};
}

// ---------------------------------------------------------------------------
// Ray batches

struct RayBatch {
    std::vector<geo::Vec3> points;  // P*L sample positions, ray-major
    std::vector<float> dist;        // L shared distances (range along the ray)
    std::vector<float> delta;       // L segment lengths
    std::vector<geo::Vec3> origins;
    std::vector<geo::Vec3> dirs;    // unit
    int pixels = 0;
    int samples = 0;
};

// Casts one ray per (u,v) pair through the given camera and places L
// inverse-spaced samples on each.
inline RayBatch make_rays(const std::vector<float>& pixel_uv, const geo::Pose& pose,
                          const geo::Intrinsics& k, const RenderConfig& cfg) {
    cfg.validate();
    if (pixel_uv.empty() || pixel_uv.size() % 2 != 0)
        throw ShapeError("make_rays: pixel list must hold (u,v) pairs");
    RayBatch rb;
    rb.pixels = static_cast<int>(pixel_uv.size() / 2);
    rb.samples = cfg.samples;
    rb.dist = geo::sample_distances_inverse(cfg.near, cfg.far, cfg.samples);
    rb.delta = geo::segment_lengths(rb.dist);
    rb.points.reserve(static_cast<std::size_t>(rb.pixels) * cfg.samples);
    rb.origins.reserve(static_cast<std::size_t>(rb.pixels));
    rb.dirs.reserve(static_cast<std::size_t>(rb.pixels));
    for (int p = 0; p < rb.pixels; ++p) {
        geo::Ray ray = geo::ray_for_pixel(pixel_uv[2 * p], pixel_uv[2 * p + 1], pose, k);
        rb.origins.push_back(ray.origin);
        rb.dirs.push_back(ray.dir);
        for (float d : rb.dist) rb.points.push_back(ray.origin + d * ray.dir);
    }
    return rb;
}

// ---------------------------------------------------------------------------
// Full per-pixel rendering

struct PixelRender {
    Tensor depth;     // [P] expected range
    Tensor feat_low;  // [P, field_dim] composited low-dim features
    Tensor opacity;   // [P] accumulated opacity
    Tensor weights;   // [P, L]
    std::vector<Tensor> colors;                    // per source view, [P,3]
    std::vector<std::vector<std::uint8_t>> color_valid;  // per source, per pixel
    std::vector<std::uint8_t> pixel_valid;  // >= 1 sample inside the input frustum
};

// FieldFn: vector<Vec3> -> field::QueryResult. Templated so tests can render
// analytic densities (e.g. an opaque slab) without a trained field.
template <class FieldFn>
PixelRender render_rays(const RayBatch& rb, FieldFn&& query, const std::vector<View>& sources,
                        const RenderConfig& cfg) {
    field::QueryResult q = query(rb.points);
    int p = rb.pixels, l = rb.samples;
    Tensor sigma = ad::reshape(q.sigma, {p, l});
    Tensor feat = ad::reshape(q.feat_low, {p, l, q.feat_low.extent(1)});
    Tensor delta(ad::Shape{l}, rb.delta);

    AlphaResult av = compute_alphas(sigma, delta);
    Tensor w = ad::mul(av.alpha, av.vis);
    Tensor opacity = ad::sum(w, 1);

    Tensor dist(ad::Shape{l}, rb.dist);
    Tensor depth = ad::sum(ad::mul(w, dist), 1);
    if (cfg.normalize_depth_by_opacity)
        depth = ad::div(depth, ad::max(opacity, Tensor::full({p}, 1e-6f)));

    PixelRender out;
    out.depth = depth;
    out.feat_low = composite(w, feat);
    out.opacity = opacity;
    out.weights = w;

    out.pixel_valid.assign(static_cast<std::size_t>(p), 0);
    for (int i = 0; i < p; ++i)
        for (int j = 0; j < l; ++j)
            if (q.valid[static_cast<std::size_t>(i) * l + j]) {
                out.pixel_valid[static_cast<std::size_t>(i)] = 1;
                break;
            }

    for (const View& src : sources) {
        ColorSamples cs = sample_color_from_source(rb.points, src);
        out.colors.push_back(composite(w, ad::reshape(cs.colors, {p, l, 3})));
        std::vector<std::uint8_t> cv(static_cast<std::size_t>(p), 0);
        for (int i = 0; i < p; ++i)
            for (int j = 0; j < l; ++j)
                if (cs.valid[static_cast<std::size_t>(i) * l + j]) {
                    cv[static_cast<std::size_t>(i)] = 1;
                    break;
                }
        out.color_valid.push_back(std::move(cv));
    }
    return out;
}

// Convenience wrapper: rays from `target`, field conditioned on the input
// view whose embeddings are `e_rows`.
inline PixelRender render_pixels(const std::vector<float>& pixel_uv, const geo::Pose& target_pose,
                                 const geo::Intrinsics& target_k, const Tensor& e_rows,
                                 const geo::Pose& input_pose, const geo::Intrinsics& input_k,
                                 const std::vector<View>& sources, const field::FieldConfig& fcfg,
                                 const field::FieldParams& fparams, const RenderConfig& cfg) {
    RayBatch rb = make_rays(pixel_uv, target_pose, target_k, cfg);
    return render_rays(
        rb,
        [&](const std::vector<geo::Vec3>& pts) {
            return field::query_field_low(e_rows, pts, input_pose, input_k, fcfg, fparams);
        },
        sources, cfg);
}

// ---------------------------------------------------------------------------
// Surface extraction

struct SurfacePoints {
    std::vector<geo::Vec3> points;    // H*W entries, row-major
    std::vector<float> depth;         // expected range per pixel
    std::vector<std::uint8_t> valid;  // accumulated opacity >= 0.5
};

// Renders every pixel of `view` and unprojects the expected depth. The 0.5
// opacity threshold mirrors the occupancy convention used for voxels.
template <class FieldFn>
SurfacePoints expected_surface_points_fn(const geo::Pose& pose, const geo::Intrinsics& k,
                                         FieldFn&& query, const RenderConfig& cfg) {
    std::vector<float> uv;
    uv.reserve(static_cast<std::size_t>(k.width) * k.height * 2);
    for (int y = 0; y < k.height; ++y)
        for (int x = 0; x < k.width; ++x) {
            uv.push_back(static_cast<float>(x) + 0.5f);
            uv.push_back(static_cast<float>(y) + 0.5f);
        }
    RayBatch rb = make_rays(uv, pose, k, cfg);
    PixelRender pr = render_rays(rb, query, {}, cfg);

    SurfacePoints sp;
    std::size_t n = static_cast<std::size_t>(rb.pixels);
    sp.points.resize(n);
    sp.depth.resize(n);
    sp.valid.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        float d = pr.depth.values()[i];
        sp.depth[i] = d;
        sp.points[i] = rb.origins[i] + d * rb.dirs[i];
        sp.valid[i] = (pr.opacity.values()[i] >= 0.5f && pr.pixel_valid[i]) ? 1 : 0;
    }
    return sp;
}

inline SurfacePoints expected_surface_points(const geo::Pose& pose, const geo::Intrinsics& k,
                                             const Tensor& e_rows, const geo::Pose& input_pose,
                                             const geo::Intrinsics& input_k,
                                             const field::FieldConfig& fcfg,
                                             const field::FieldParams& fparams,
                                             const RenderConfig& cfg) {
    return expected_surface_points_fn(
        pose, k,
        [&](const std::vector<geo::Vec3>& pts) {
            return field::query_field_low(e_rows, pts, input_pose, input_k, fcfg, fparams);
        },
        cfg);
}

}  // namespace fieldsc::render
