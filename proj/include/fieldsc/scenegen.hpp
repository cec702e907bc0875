// Procedural multi-view scenes with exact ground truth. A scene is a ground
// plane plus axis-aligned boxes (buildings, vehicles) and spheres (tree
// canopies) in a y-down world (ground at y = 0, "up" is -y). Views are
// rendered by analytic raycasting under a fixed directional light, so
// reprojected colors agree exactly between views and the photometric loss
// has a zero-residual optimum. Target features are built from well-separated
// class prototypes plus noise and a per-view constant offset.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "fieldsc/error.hpp"
#include "fieldsc/geometry.hpp"
#include "fieldsc/random.hpp"
#include "fieldsc/tensor.hpp"
#include "fieldsc/voxel.hpp"

namespace fieldsc::scene {

using ad::Tensor;

constexpr int kGround = 0;
constexpr int kBuilding = 1;
constexpr int kVehicle = 2;
constexpr int kVegetation = 3;
constexpr int kBackground = 4;
constexpr int kNumClasses = 5;

inline const char* class_name(int id) {
    switch (id) {
        case kGround: return "ground";
        case kBuilding: return "building";
        case kVehicle: return "vehicle";
        case kVegetation: return "vegetation";
        case kBackground: return "background";
        default: throw DomainError("class_name: unknown class id " + std::to_string(id));
    }
}

struct SceneConfig {
    int buildings = 3;
    int vehicles = 2;
    int trees = 3;
    int width = 64, height = 48;
    int views = 4;
    float focal = 40.0f;
    float z_far = 20.0f;
    int feature_dim = 16;
    int patch = 8;
    float noise_scale = 0.05f;
    float offset_scale = 0.3f;

    void validate() const {
        if (buildings < 0 || vehicles < 0 || trees < 0)
            throw ConfigError("scene: primitive counts must be nonnegative");
        if (width < 1 || height < 1 || views < 1)
            throw ConfigError("scene: need positive image size and view count");
        if (focal <= 0.0f || z_far <= 0.0f) throw ConfigError("scene: focal/z_far must be positive");
        if (patch < 1 || width % patch != 0 || height % patch != 0)
            throw ConfigError("scene: patch size must divide the image size");
        if (feature_dim < 1) throw ConfigError("scene: feature dim must be positive");
        if (noise_scale < 0.0f || offset_scale < 0.0f)
            throw ConfigError("scene: noise/offset scales must be nonnegative");
    }
};

struct Box {
    geo::Vec3 lo, hi;  // component-wise bounds, lo <= hi
    int cls = kBuilding;
    geo::Vec3 albedo;
};

struct Sphere {
    geo::Vec3 center;
    float radius = 1.0f;
    int cls = kVegetation;
    geo::Vec3 albedo;
};

struct SceneSpec {
    std::uint64_t seed = 0;
    float z_far = 20.0f;
    geo::Vec3 ground_albedo, background_albedo;
    std::vector<Box> boxes;
    std::vector<Sphere> spheres;
    std::vector<geo::Pose> poses;
    geo::Intrinsics k;
};

namespace detail {

// Overlap test on the ground footprint with a small clearance so objects
// never touch. Heights always overlap (everything stands on the ground).
inline bool footprints_collide(const Box& a, const Box& b, float gap = 0.1f) {
    return a.lo.x - gap < b.hi.x && b.lo.x - gap < a.hi.x && a.lo.z - gap < b.hi.z &&
           b.lo.z - gap < a.hi.z;
}

}  // namespace detail

// Deterministic scene synthesis. Buildings and vehicles are rejection-placed
// so their footprints stay disjoint; tree canopies may interpenetrate.
inline SceneSpec generate_scene(std::uint64_t seed, const SceneConfig& cfg) {
    cfg.validate();
    Rng rng(seed);
    SceneSpec spec;
    spec.seed = seed;
    spec.z_far = cfg.z_far;
    spec.ground_albedo = {static_cast<float>(rng.uniform(0.30, 0.45)),
                          static_cast<float>(rng.uniform(0.30, 0.45)),
                          static_cast<float>(rng.uniform(0.25, 0.40))};
    spec.background_albedo = {static_cast<float>(rng.uniform(0.40, 0.55)),
                              static_cast<float>(rng.uniform(0.55, 0.70)),
                              static_cast<float>(rng.uniform(0.75, 0.95))};

    auto place_box = [&](float min_w, float max_w, float min_h, float max_h, float min_d,
                         float max_d, float span_x, float near_z, float far_z, int cls,
                         geo::Vec3 albedo) {
        for (int attempt = 0; attempt < 1000; ++attempt) {
            float w = static_cast<float>(rng.uniform(min_w, max_w));
            float h = static_cast<float>(rng.uniform(min_h, max_h));
            float d = static_cast<float>(rng.uniform(min_d, max_d));
            float cx = static_cast<float>(rng.uniform(-span_x, span_x));
            float cz = static_cast<float>(rng.uniform(near_z, far_z));
            Box b{{cx - 0.5f * w, -h, cz - 0.5f * d}, {cx + 0.5f * w, 0.0f, cz + 0.5f * d}, cls,
                  albedo};
            bool blocked = false;
            for (const Box& other : spec.boxes)
                if (detail::footprints_collide(b, other)) blocked = true;
            if (!blocked) {
                spec.boxes.push_back(b);
                return;
            }
        }
        throw DomainError("generate_scene: could not place a " + std::string(class_name(cls)) +
                          " after 1000 tries; lower the primitive counts");
    };

    for (int i = 0; i < cfg.buildings; ++i) {
        float gray = static_cast<float>(rng.uniform(0.45, 0.70));
        place_box(1.0f, 3.0f, 1.5f, 4.0f, 1.0f, 3.0f, 6.0f, 5.0f, 14.0f, kBuilding,
                  {gray, gray, static_cast<float>(rng.uniform(0.40, 0.65))});
    }
    for (int i = 0; i < cfg.vehicles; ++i) {
        geo::Vec3 albedo{static_cast<float>(rng.uniform(0.10, 0.30)),
                         static_cast<float>(rng.uniform(0.10, 0.30)),
                         static_cast<float>(rng.uniform(0.10, 0.30))};
        int hot = static_cast<int>(rng.uniform_int(3));
        float strong = static_cast<float>(rng.uniform(0.60, 0.90));
        (hot == 0 ? albedo.x : hot == 1 ? albedo.y : albedo.z) = strong;
        place_box(0.7f, 1.0f, 0.6f, 0.9f, 1.4f, 2.2f, 4.5f, 3.0f, 11.0f, kVehicle, albedo);
    }
    for (int i = 0; i < cfg.trees; ++i) {
        Sphere s;
        s.radius = static_cast<float>(rng.uniform(0.5, 1.0));
        s.center = {static_cast<float>(rng.uniform(-6.0, 6.0)),
                    -(s.radius + static_cast<float>(rng.uniform(0.8, 1.8))),
                    static_cast<float>(rng.uniform(4.0, 14.0))};
        s.cls = kVegetation;
        s.albedo = {static_cast<float>(rng.uniform(0.10, 0.25)),
                    static_cast<float>(rng.uniform(0.45, 0.70)),
                    static_cast<float>(rng.uniform(0.10, 0.25))};
        spec.spheres.push_back(s);
    }

    // Forward-plus-lateral trajectory, camera 1.2 m above the ground, with a
    // slight outward yaw so later views see new geometry.
    for (int i = 0; i < cfg.views; ++i)
        spec.poses.push_back(geo::Pose::translate_yaw(
            {0.25f * static_cast<float>(i), -1.2f, 0.7f * static_cast<float>(i)},
            0.05f * static_cast<float>(i)));
    spec.k = geo::Intrinsics{cfg.focal, cfg.focal, 0.5f * static_cast<float>(cfg.width),
                             0.5f * static_cast<float>(cfg.height), cfg.width, cfg.height};
    return spec;
}

struct Hit {
    float range = 0.0f;  // distance along the (unit) ray; z_far for background
    int cls = kBackground;
    geo::Vec3 albedo;
    geo::Vec3 normal;  // unit, oriented toward the ray origin; zero for background
    bool background = true;
    // which surface: -1 background, -2 ground plane, i for boxes[i],
    // boxes.size()+i for spheres[i]
    int prim = -1;
};

constexpr int kPrimGround = -2;

// Nearest analytic intersection among the ground plane, boxes and spheres.
// Anything at or beyond z_far (including misses) is background.
inline Hit raycast(const SceneSpec& spec, const geo::Ray& ray) {
    if (std::fabs(geo::norm(ray.dir) - 1.0f) > 1e-3f)
        throw DomainError("raycast: ray direction must be unit length");
    constexpr float kEps = 1e-4f;
    Hit hit;
    hit.range = spec.z_far;
    hit.albedo = spec.background_albedo;

    auto accept = [&](float t, int cls, geo::Vec3 albedo, geo::Vec3 n, int prim) {
        if (t <= kEps || t >= hit.range) return;
        hit.range = t;
        hit.cls = cls;
        hit.albedo = albedo;
        hit.normal = geo::dot(n, ray.dir) > 0.0f ? -1.0f * n : n;
        hit.background = false;
        hit.prim = prim;
    };

    if (std::fabs(ray.dir.y) > 1e-12f) {
        float t = -ray.origin.y / ray.dir.y;
        accept(t, kGround, spec.ground_albedo, {0.0f, -1.0f, 0.0f}, kPrimGround);
    }

    for (std::size_t bi = 0; bi < spec.boxes.size(); ++bi) {
        const Box& b = spec.boxes[bi];
        float t_enter = -1e30f, t_exit = 1e30f;
        int enter_axis = -1;
        float enter_sign = 0.0f;
        const float o[3] = {ray.origin.x, ray.origin.y, ray.origin.z};
        const float d[3] = {ray.dir.x, ray.dir.y, ray.dir.z};
        const float lo[3] = {b.lo.x, b.lo.y, b.lo.z};
        const float hi[3] = {b.hi.x, b.hi.y, b.hi.z};
        bool miss = false;
        for (int a = 0; a < 3 && !miss; ++a) {
            if (std::fabs(d[a]) < 1e-12f) {
                if (o[a] < lo[a] || o[a] > hi[a]) miss = true;
                continue;
            }
            float inv = 1.0f / d[a];
            float t0 = (lo[a] - o[a]) * inv, t1 = (hi[a] - o[a]) * inv;
            float sign = -1.0f;  // entering through the lo face
            if (t0 > t1) {
                std::swap(t0, t1);
                sign = 1.0f;
            }
            if (t0 > t_enter) {
                t_enter = t0;
                enter_axis = a;
                enter_sign = sign;
            }
            t_exit = std::min(t_exit, t1);
        }
        if (miss || t_enter > t_exit || t_exit <= kEps) continue;
        geo::Vec3 n{0, 0, 0};
        if (t_enter > kEps && enter_axis >= 0) {
            (enter_axis == 0 ? n.x : enter_axis == 1 ? n.y : n.z) = enter_sign;
            accept(t_enter, b.cls, b.albedo, n, static_cast<int>(bi));
        } else {
            // Origin inside the box: exit hit; accept() flips the normal.
            accept(t_exit, b.cls, b.albedo, {0.0f, -1.0f, 0.0f}, static_cast<int>(bi));
        }
    }

    for (std::size_t si = 0; si < spec.spheres.size(); ++si) {
        const Sphere& s = spec.spheres[si];
        geo::Vec3 oc = ray.origin - s.center;
        float bq = geo::dot(oc, ray.dir);
        float disc = bq * bq - (geo::dot(oc, oc) - s.radius * s.radius);
        if (disc < 0.0f) continue;
        float root = std::sqrt(disc);
        float t = -bq - root;
        if (t <= kEps) t = -bq + root;
        if (t <= kEps) continue;
        geo::Vec3 p = ray.origin + t * ray.dir;
        accept(t, s.cls, s.albedo, (1.0f / s.radius) * (p - s.center),
               static_cast<int>(spec.boxes.size() + si));
    }
    return hit;
}

struct GtView {
    Tensor image;  // [3,H,W] in [0,1]
    Tensor depth;  // [H,W] range along the pixel ray; z_far for background
    Tensor sem;    // [H,W] class ids stored as floats
};

// Per-pixel raycast with Lambertian shading under a fixed directional light
// (view independent by construction). Background pixels keep their albedo
// unshaded, like an emissive sky.
inline GtView render_gt_view(const SceneSpec& spec, const geo::Pose& pose,
                             const geo::Intrinsics& k) {
    const geo::Vec3 to_light = geo::normalized({0.35f, -0.85f, -0.40f});
    GtView out;
    out.image = Tensor::zeros({3, k.height, k.width});
    out.depth = Tensor::zeros({k.height, k.width});
    out.sem = Tensor::zeros({k.height, k.width});
    std::size_t plane = static_cast<std::size_t>(k.height) * static_cast<std::size_t>(k.width);
    for (int y = 0; y < k.height; ++y)
        for (int x = 0; x < k.width; ++x) {
            geo::Ray ray = geo::ray_for_pixel(static_cast<float>(x) + 0.5f,
                                              static_cast<float>(y) + 0.5f, pose, k);
            Hit h = raycast(spec, ray);
            float shade =
                h.background ? 1.0f : 0.25f + 0.75f * std::max(0.0f, geo::dot(h.normal, to_light));
            std::size_t px = static_cast<std::size_t>(y) * k.width + x;
            out.image.mutable_values()[px] = h.albedo.x * shade;
            out.image.mutable_values()[plane + px] = h.albedo.y * shade;
            out.image.mutable_values()[2 * plane + px] = h.albedo.z * shade;
            out.depth.mutable_values()[px] = h.range;
            out.sem.mutable_values()[px] = static_cast<float>(h.cls);
        }
    return out;
}

struct Prototypes {
    Tensor vectors;  // [C, D], unit rows
    float noise_scale = 0.05f;
};

// Random unit prototypes redrawn until every pairwise cosine is at most 0.3.
inline Prototypes make_prototypes(int classes, int dim, float noise_scale, Rng& rng) {
    if (classes < 1 || dim < 1) throw ConfigError("make_prototypes: need positive sizes");
    if (noise_scale < 0.0f) throw ConfigError("make_prototypes: negative noise scale");
    for (int attempt = 0; attempt < 1000; ++attempt) {
        Tensor v = Tensor::zeros({classes, dim});
        for (int c = 0; c < classes; ++c) {
            double n2 = 0.0;
            std::vector<double> row(static_cast<std::size_t>(dim));
            for (auto& x : row) {
                x = rng.normal();
                n2 += x * x;
            }
            if (n2 < 1e-12) {
                --c;
                continue;
            }
            double inv = 1.0 / std::sqrt(n2);
            for (int i = 0; i < dim; ++i)
                v.mutable_values()[static_cast<std::size_t>(c) * dim + i] =
                    static_cast<float>(row[static_cast<std::size_t>(i)] * inv);
        }
        bool separated = true;
        for (int a = 0; a < classes && separated; ++a)
            for (int b = a + 1; b < classes && separated; ++b) {
                double cos = 0.0;
                for (int i = 0; i < dim; ++i)
                    cos += static_cast<double>(v.values()[static_cast<std::size_t>(a) * dim + i]) *
                           v.values()[static_cast<std::size_t>(b) * dim + i];
                if (cos > 0.3) separated = false;
            }
        if (separated) return Prototypes{v, noise_scale};
    }
    throw DomainError("make_prototypes: could not separate prototypes (dim too small?)");
}

inline Tensor make_view_offset(int dim, float scale, Rng& rng) {
    Tensor o = Tensor::zeros({dim});
    for (auto& x : o.mutable_values()) x = static_cast<float>(rng.normal()) * scale;
    return o;
}

// Target features: per p x p patch, take the majority ground-truth class
// (ties toward the smaller id), then prototype + gaussian noise + the
// per-view offset, renormalized to unit length. Output is [D, H/p, W/p].
inline Tensor make_target_features(const Tensor& sem, const Prototypes& protos, int p,
                                   const Tensor& offset, Rng& rng) {
    if (sem.rank() != 2) throw ShapeError("make_target_features: semantics must be [H,W]");
    int h = sem.extent(0), w = sem.extent(1);
    if (p < 1 || h % p != 0 || w % p != 0)
        throw ShapeError("make_target_features: patch size must divide the semantic map");
    int classes = protos.vectors.extent(0), dim = protos.vectors.extent(1);
    if (offset.rank() != 1 || offset.extent(0) != dim)
        throw ShapeError("make_target_features: offset dim mismatch");
    int hp = h / p, wp = w / p;
    Tensor out = Tensor::zeros({dim, hp, wp});
    std::vector<int> votes(static_cast<std::size_t>(classes));
    for (int py = 0; py < hp; ++py)
        for (int px = 0; px < wp; ++px) {
            std::fill(votes.begin(), votes.end(), 0);
            for (int dy = 0; dy < p; ++dy)
                for (int dx = 0; dx < p; ++dx) {
                    float id = sem.values()[static_cast<std::size_t>(py * p + dy) * w + px * p + dx];
                    int c = static_cast<int>(std::lround(id));
                    if (c < 0 || c >= classes)
                        throw DomainError("make_target_features: class id out of range");
                    ++votes[static_cast<std::size_t>(c)];
                }
            int best = 0;
            for (int c = 1; c < classes; ++c)
                if (votes[static_cast<std::size_t>(c)] > votes[static_cast<std::size_t>(best)])
                    best = c;

            std::vector<double> f(static_cast<std::size_t>(dim));
            double n2 = 0.0;
            for (int i = 0; i < dim; ++i) {
                double val = protos.vectors.values()[static_cast<std::size_t>(best) * dim + i] +
                             protos.noise_scale * rng.normal() +
                             offset.values()[static_cast<std::size_t>(i)];
                f[static_cast<std::size_t>(i)] = val;
                n2 += val * val;
            }
            double inv = n2 > 1e-20 ? 1.0 / std::sqrt(n2) : 0.0;
            for (int i = 0; i < dim; ++i)
                out.mutable_values()[(static_cast<std::size_t>(i) * hp + py) * wp + px] =
                    static_cast<float>(f[static_cast<std::size_t>(i)] * inv);
        }
    return out;
}

// Ground-truth occupancy: a voxel is occupied when its center lies inside a
// primitive, or within half a voxel of the ground plane. Boxes take
// precedence over spheres, solids over ground.
inline vox::VoxelGrid make_voxel_gt(const SceneSpec& spec, const vox::GridConfig& grid) {
    vox::VoxelGrid g = vox::VoxelGrid::empty(grid);
    for (int ix = 0; ix < grid.nx; ++ix)
        for (int iy = 0; iy < grid.ny; ++iy)
            for (int iz = 0; iz < grid.nz; ++iz) {
                geo::Vec3 c = grid.center(ix, iy, iz);
                int cls = -1;
                for (const Box& b : spec.boxes)
                    if (c.x >= b.lo.x && c.x <= b.hi.x && c.y >= b.lo.y && c.y <= b.hi.y &&
                        c.z >= b.lo.z && c.z <= b.hi.z) {
                        cls = b.cls;
                        break;
                    }
                if (cls < 0)
                    for (std::size_t si = 0; si < spec.spheres.size(); ++si) {
        const Sphere& s = spec.spheres[si];
                        geo::Vec3 d = c - s.center;
                        if (geo::dot(d, d) <= s.radius * s.radius) {
                            cls = s.cls;
                            break;
                        }
                    }
                if (cls < 0 && std::fabs(c.y) <= 0.5f * grid.voxel_size) cls = kGround;
                if (cls >= 0) {
                    std::size_t i = grid.index(ix, iy, iz);
                    g.occupied[i] = 1;
                    g.cls[i] = cls;
                }
            }
    return g;
}

// Exact correspondence from view A into view B: walk each pixel ray of A to
// its ground-truth range, project the 3D point into B, and compare ranges
// against B's depth at the nearest pixel. Channels: (u_B, v_B, visible).
inline Tensor gt_correspondence(const SceneSpec& spec, const GtView& a, const geo::Pose& pose_a,
                                const geo::Pose& pose_b, const geo::Intrinsics& k) {
    int h = k.height, w = k.width;
    if (a.depth.shape() != ad::Shape{h, w})
        throw ShapeError("gt_correspondence: depth map does not match the intrinsics");
    Tensor out = Tensor::zeros({3, h, w});
    std::size_t plane = static_cast<std::size_t>(h) * static_cast<std::size_t>(w);
    geo::Vec3 center_b = pose_b.center();
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            std::size_t px = static_cast<std::size_t>(y) * w + x;
            geo::Ray ray = geo::ray_for_pixel(static_cast<float>(x) + 0.5f,
                                              static_cast<float>(y) + 0.5f, pose_a, k);
            geo::Vec3 point = ray.origin + a.depth.values()[px] * ray.dir;
            geo::Projection proj = geo::project(point, pose_b, k);
            out.mutable_values()[px] = proj.u;
            out.mutable_values()[plane + px] = proj.v;
            if (!geo::in_image(proj, k)) continue;
            // B's ground-truth range through the exact projected location: a
            // per-pixel depth lookup would add half-pixel quantization error
            // far above the tolerance, so raycast the analytic scene instead.
            geo::Vec3 delta = point - center_b;
            float dist = geo::norm(delta);
            if (dist < 1e-5f) continue;
            float range_b = raycast(spec, geo::Ray{center_b, (1.0f / dist) * delta}).range;
            if (std::fabs(dist - range_b) <= 1e-3f * dist)
                out.mutable_values()[2 * plane + px] = 1.0f;
        }
    return out;
}

struct ViewData {
    Tensor image, feat, depth, sem;
    geo::Pose pose;
};

struct SceneSample {
    std::uint64_t seed = 0;
    geo::Intrinsics k;
    std::vector<ViewData> views;
    vox::VoxelGrid vox_gt;
    std::vector<Tensor> corr;  // ordered view pairs, see corr_index
};

inline int corr_index(int a, int b, int views) {
    if (a == b || a < 0 || b < 0 || a >= views || b >= views)
        throw DomainError("corr_index: need two distinct views");
    return a * (views - 1) + (b < a ? b : b - 1);
}

// Full dataset entry for one scene: rendered views, target features with
// per-view offsets, voxel ground truth, and all pairwise correspondences.
inline SceneSample make_scene_sample(std::uint64_t seed, const SceneConfig& cfg,
                                     const Prototypes& protos, const vox::GridConfig& grid) {
    if (protos.vectors.extent(0) < kNumClasses)
        throw ConfigError("make_scene_sample: prototypes must cover every class");
    SceneSpec spec = generate_scene(seed, cfg);
    Rng rng(seed);
    SceneSample out;
    out.seed = seed;
    out.k = spec.k;
    std::vector<GtView> gts;
    for (int v = 0; v < cfg.views; ++v) {
        GtView gt = render_gt_view(spec, spec.poses[static_cast<std::size_t>(v)], spec.k);
        Rng offset_rng = rng.fork(100 + static_cast<std::uint64_t>(v));
        Rng noise_rng = rng.fork(200 + static_cast<std::uint64_t>(v));
        Tensor offset = make_view_offset(cfg.feature_dim, cfg.offset_scale, offset_rng);
        Tensor feat = make_target_features(gt.sem, protos, cfg.patch, offset, noise_rng);
        out.views.push_back(
            ViewData{gt.image, feat, gt.depth, gt.sem, spec.poses[static_cast<std::size_t>(v)]});
        gts.push_back(std::move(gt));
    }
    out.vox_gt = make_voxel_gt(spec, grid);
    out.corr.resize(static_cast<std::size_t>(cfg.views) * (cfg.views - 1));
    for (int a = 0; a < cfg.views; ++a)
        for (int b = 0; b < cfg.views; ++b) {
            if (a == b) continue;
            out.corr[static_cast<std::size_t>(corr_index(a, b, cfg.views))] = gt_correspondence(
                spec, gts[static_cast<std::size_t>(a)], spec.poses[static_cast<std::size_t>(a)],
                spec.poses[static_cast<std::size_t>(b)], spec.k);
        }
    return out;
}

}  // namespace fieldsc::scene
