#pragma once

// Pinhole camera geometry. Conventions:
//   - camera frame: x right, y down, z forward (optical axis)
//   - Pose holds the camera-to-world transform (rigid)
//   - pixel (i, j) covers [i, i+1) x [j, j+1); its center is (i+0.5, j+0.5)
//   - "depth" in projections is camera z; ray sampling and depth maps use
//     range (Euclidean distance along the ray), which callers convert via the
//     unit ray direction

#include <cmath>
#include <vector>

#include "fieldsc/error.hpp"

namespace fieldsc::geo {

struct Vec3 {
    float x = 0.0f, y = 0.0f, z = 0.0f;
};

inline Vec3 operator+(Vec3 a, Vec3 b) { return {a.x + b.x, a.y + b.y, a.z + b.z}; }
inline Vec3 operator-(Vec3 a, Vec3 b) { return {a.x - b.x, a.y - b.y, a.z - b.z}; }
inline Vec3 operator*(float s, Vec3 a) { return {s * a.x, s * a.y, s * a.z}; }
inline Vec3 operator*(Vec3 a, float s) { return s * a; }
inline float dot(Vec3 a, Vec3 b) { return a.x * b.x + a.y * b.y + a.z * b.z; }
inline Vec3 cross(Vec3 a, Vec3 b) {
    return {a.y * b.z - a.z * b.y, a.z * b.x - a.x * b.z, a.x * b.y - a.y * b.x};
}
inline float norm(Vec3 a) { return std::sqrt(dot(a, a)); }
inline Vec3 normalized(Vec3 a) {
    float n = norm(a);
    if (n == 0.0f) throw DomainError("normalized: zero vector");
    return {a.x / n, a.y / n, a.z / n};
}

// Row-major 4x4 matrix.
struct Mat4 {
    float m[16] = {1, 0, 0, 0, 0, 1, 0, 0, 0, 0, 1, 0, 0, 0, 0, 1};

    static Mat4 identity() { return Mat4{}; }

    float& at(int r, int c) { return m[r * 4 + c]; }
    float at(int r, int c) const { return m[r * 4 + c]; }
};

inline Mat4 matmul(const Mat4& a, const Mat4& b) {
    Mat4 out;
    for (int r = 0; r < 4; ++r)
        for (int c = 0; c < 4; ++c) {
            float acc = 0.0f;
            for (int k = 0; k < 4; ++k) acc += a.at(r, k) * b.at(k, c);
            out.at(r, c) = acc;
        }
    return out;
}

// Camera-to-world transform. Assumed rigid: the inverse transposes the
// rotation block instead of running a general 4x4 inversion.
struct Pose {
    Mat4 cam_to_world;

    Vec3 cam_to_world_point(Vec3 p) const {
        const Mat4& t = cam_to_world;
        return {t.at(0, 0) * p.x + t.at(0, 1) * p.y + t.at(0, 2) * p.z + t.at(0, 3),
                t.at(1, 0) * p.x + t.at(1, 1) * p.y + t.at(1, 2) * p.z + t.at(1, 3),
                t.at(2, 0) * p.x + t.at(2, 1) * p.y + t.at(2, 2) * p.z + t.at(2, 3)};
    }

    Vec3 world_to_cam_point(Vec3 p) const {
        const Mat4& t = cam_to_world;
        float dx = p.x - t.at(0, 3), dy = p.y - t.at(1, 3), dz = p.z - t.at(2, 3);
        return {t.at(0, 0) * dx + t.at(1, 0) * dy + t.at(2, 0) * dz,
                t.at(0, 1) * dx + t.at(1, 1) * dy + t.at(2, 1) * dz,
                t.at(0, 2) * dx + t.at(1, 2) * dy + t.at(2, 2) * dz};
    }

    Vec3 cam_to_world_dir(Vec3 d) const {
        const Mat4& t = cam_to_world;
        return {t.at(0, 0) * d.x + t.at(0, 1) * d.y + t.at(0, 2) * d.z,
                t.at(1, 0) * d.x + t.at(1, 1) * d.y + t.at(1, 2) * d.z,
                t.at(2, 0) * d.x + t.at(2, 1) * d.y + t.at(2, 2) * d.z};
    }

    Vec3 center() const {
        return {cam_to_world.at(0, 3), cam_to_world.at(1, 3), cam_to_world.at(2, 3)};
    }

    Pose compose(const Pose& rhs) const { return Pose{matmul(cam_to_world, rhs.cam_to_world)}; }

    Pose inverse() const {
        Pose out;
        Mat4& inv = out.cam_to_world;
        const Mat4& t = cam_to_world;
        for (int r = 0; r < 3; ++r)
            for (int c = 0; c < 3; ++c) inv.at(r, c) = t.at(c, r);
        Vec3 ct = center();
        inv.at(0, 3) = -(inv.at(0, 0) * ct.x + inv.at(0, 1) * ct.y + inv.at(0, 2) * ct.z);
        inv.at(1, 3) = -(inv.at(1, 0) * ct.x + inv.at(1, 1) * ct.y + inv.at(1, 2) * ct.z);
        inv.at(2, 3) = -(inv.at(2, 0) * ct.x + inv.at(2, 1) * ct.y + inv.at(2, 2) * ct.z);
        return out;
    }

    // Translation plus yaw around the camera's vertical (y) axis. Convenient
    // for building forward-moving trajectories.
    static Pose translate_yaw(Vec3 t, float yaw_rad) {
        Pose p;
        float c = std::cos(yaw_rad), s = std::sin(yaw_rad);
        Mat4& m = p.cam_to_world;
        m.at(0, 0) = c;
        m.at(0, 2) = s;
        m.at(2, 0) = -s;
        m.at(2, 2) = c;
        m.at(0, 3) = t.x;
        m.at(1, 3) = t.y;
        m.at(2, 3) = t.z;
        return p;
    }
};

struct Intrinsics {
    float fx = 0.0f, fy = 0.0f, cx = 0.0f, cy = 0.0f;
    int width = 0, height = 0;
};

struct Ray {
    Vec3 origin;
    Vec3 dir;  // unit length
};

struct Projection {
    float u = 0.0f, v = 0.0f;
    float z = 0.0f;       // camera-frame depth (not range)
    bool in_front = false;
};

inline Projection project(Vec3 world, const Pose& pose, const Intrinsics& k) {
    Vec3 c = pose.world_to_cam_point(world);
    Projection out;
    out.z = c.z;
    out.in_front = c.z > 0.0f;
    if (out.in_front) {
        out.u = k.fx * (c.x / c.z) + k.cx;
        out.v = k.fy * (c.y / c.z) + k.cy;
    }
    return out;
}

// True when the projection falls inside the image rectangle.
inline bool in_image(const Projection& p, const Intrinsics& k) {
    return p.in_front && p.u >= 0.0f && p.u <= static_cast<float>(k.width) && p.v >= 0.0f &&
           p.v <= static_cast<float>(k.height);
}

inline Vec3 unproject(float u, float v, float z, const Pose& pose, const Intrinsics& k) {
    if (z <= 0.0f) throw DomainError("unproject: depth must be positive");
    Vec3 cam{(u - k.cx) / k.fx * z, (v - k.cy) / k.fy * z, z};
    return pose.cam_to_world_point(cam);
}

inline Ray ray_for_pixel(float u, float v, const Pose& pose, const Intrinsics& k) {
    Vec3 cam_dir{(u - k.cx) / k.fx, (v - k.cy) / k.fy, 1.0f};
    Vec3 world_dir = pose.cam_to_world_dir(cam_dir);
    return Ray{pose.center(), normalized(world_dir)};
}

// L ray distances whose reciprocals are equally spaced over
// [1/far, 1/near], inclusive of both endpoints. Distances are range along
// the (unit) ray, strictly increasing from near to far.
inline std::vector<float> sample_distances_inverse(float near, float far, int count) {
    if (near <= 0.0f || far <= near)
        throw DomainError("sample_distances_inverse: need 0 < near < far");
    if (count < 2) throw DomainError("sample_distances_inverse: need at least two samples");
    std::vector<float> d(static_cast<std::size_t>(count));
    double inv_near = 1.0 / static_cast<double>(near);
    double inv_far = 1.0 / static_cast<double>(far);
    for (int i = 0; i < count; ++i) {
        double t = static_cast<double>(i) / static_cast<double>(count - 1);
        d[static_cast<std::size_t>(i)] =
            static_cast<float>(1.0 / (inv_near + (inv_far - inv_near) * t));
    }
    d.front() = near;
    d.back() = far;
    return d;
}

// Segment lengths between consecutive samples; the last segment reuses the
// one before it so every sample carries a length.
inline std::vector<float> segment_lengths(const std::vector<float>& distances) {
    if (distances.size() < 2) throw DomainError("segment_lengths: need at least two distances");
    std::vector<float> delta(distances.size());
    for (std::size_t i = 0; i + 1 < distances.size(); ++i) {
        delta[i] = distances[i + 1] - distances[i];
        if (delta[i] <= 0.0f) throw DomainError("segment_lengths: distances must increase");
    }
    delta.back() = delta[delta.size() - 2];
    return delta;
}

}  // namespace fieldsc::geo
