// Visualization exports: 16-bit PGM depth maps, PPM images of the first
// three principal feature components, and ASCII PLY point clouds with class
// colors. Everything here is plain float math on detached values.
#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "fieldsc/error.hpp"
#include "fieldsc/geometry.hpp"
#include "fieldsc/tensor.hpp"

namespace fieldsc::viz {

using ad::Tensor;

// ---------------------------------------------------------------------------
// 16-bit PGM (depth)

// Maps [near, far] linearly onto [0, 65535]; out-of-range depths clamp.
inline std::vector<std::uint16_t> quantize_depth(const std::vector<float>& depth, float near,
                                                 float far) {
    if (!(near < far)) throw DomainError("quantize_depth: need near < far");
    std::vector<std::uint16_t> out(depth.size());
    float span = far - near;
    for (std::size_t i = 0; i < depth.size(); ++i) {
        float t = (std::clamp(depth[i], near, far) - near) / span;
        out[i] = static_cast<std::uint16_t>(std::lround(t * 65535.0f));
    }
    return out;
}

inline float dequantize_depth(std::uint16_t v, float near, float far) {
    return near + (far - near) * (static_cast<float>(v) / 65535.0f);
}

inline void write_pgm16(std::ostream& os, const std::vector<std::uint16_t>& pixels, int width,
                        int height) {
    if (width < 1 || height < 1 ||
        pixels.size() != static_cast<std::size_t>(width) * static_cast<std::size_t>(height))
        throw ShapeError("write_pgm16: pixel count does not match the image size");
    os << "P5\n" << width << " " << height << "\n65535\n";
    for (std::uint16_t v : pixels) {
        // Netpbm stores 16-bit samples most significant byte first.
        char hi = static_cast<char>(v >> 8), lo = static_cast<char>(v & 0xff);
        os.write(&hi, 1);
        os.write(&lo, 1);
    }
    if (!os) throw IoError("write_pgm16: write failed");
}

inline void write_depth_pgm(const std::filesystem::path& path, const std::vector<float>& depth,
                            int width, int height, float near, float far) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw IoError("write_depth_pgm: cannot open " + path.string());
    write_pgm16(os, quantize_depth(depth, near, far), width, height);
}

struct Pgm16 {
    int width = 0, height = 0;
    std::vector<std::uint16_t> pixels;
};

namespace detail {
// Next whitespace-delimited token, skipping '#' comment lines.
inline std::string pnm_token(std::istream& is) {
    std::string tok;
    char c;
    while (is.get(c)) {
        if (c == '#') {
            while (is.get(c) && c != '\n') {
            }
            continue;
        }
        if (std::isspace(static_cast<unsigned char>(c))) {
            if (!tok.empty()) return tok;
            continue;
        }
        tok.push_back(c);
    }
    if (tok.empty()) throw IoError("pgm: truncated header");
    return tok;
}
}  // namespace detail

inline Pgm16 read_pgm16(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("read_pgm16: cannot open " + path.string());
    if (detail::pnm_token(is) != "P5") throw IoError("read_pgm16: not a binary PGM");
    Pgm16 img;
    img.width = std::stoi(detail::pnm_token(is));
    img.height = std::stoi(detail::pnm_token(is));
    if (detail::pnm_token(is) != "65535") throw IoError("read_pgm16: expected a 16-bit PGM");
    if (img.width < 1 || img.height < 1) throw IoError("read_pgm16: bad image size");
    img.pixels.resize(static_cast<std::size_t>(img.width) * img.height);
    for (auto& v : img.pixels) {
        char hi, lo;
        if (!is.get(hi) || !is.get(lo)) throw IoError("read_pgm16: truncated pixel data");
        v = static_cast<std::uint16_t>((static_cast<std::uint8_t>(hi) << 8) |
                                       static_cast<std::uint8_t>(lo));
    }
    return img;
}

// ---------------------------------------------------------------------------
// Jacobi eigendecomposition (symmetric, double)

struct EigenResult {
    std::vector<double> values;   // descending
    std::vector<double> vectors;  // row-major [n,n], column j belongs to values[j]
};

// Cyclic Jacobi rotations; plenty for the small covariance matrices here.
inline EigenResult eigen_symmetric(std::vector<double> a, int n) {
    if (n < 1 || a.size() != static_cast<std::size_t>(n) * n)
        throw ShapeError("eigen_symmetric: matrix must be n*n");
    auto at = [&](std::vector<double>& m, int i, int j) -> double& {
        return m[static_cast<std::size_t>(i) * n + j];
    };
    std::vector<double> v(static_cast<std::size_t>(n) * n, 0.0);
    for (int i = 0; i < n; ++i) at(v, i, i) = 1.0;

    for (int sweep = 0; sweep < 100; ++sweep) {
        double off = 0.0;
        for (int i = 0; i < n; ++i)
            for (int j = i + 1; j < n; ++j) off += at(a, i, j) * at(a, i, j);
        if (off < 1e-24) break;
        for (int p = 0; p < n - 1; ++p)
            for (int q = p + 1; q < n; ++q) {
                double apq = at(a, p, q);
                if (std::fabs(apq) < 1e-300) continue;
                double theta = (at(a, q, q) - at(a, p, p)) / (2.0 * apq);
                double t = (theta >= 0 ? 1.0 : -1.0) /
                           (std::fabs(theta) + std::sqrt(theta * theta + 1.0));
                double c = 1.0 / std::sqrt(t * t + 1.0), s = t * c;
                for (int i = 0; i < n; ++i) {
                    double aip = at(a, i, p), aiq = at(a, i, q);
                    at(a, i, p) = c * aip - s * aiq;
                    at(a, i, q) = s * aip + c * aiq;
                }
                for (int i = 0; i < n; ++i) {
                    double api = at(a, p, i), aqi = at(a, q, i);
                    at(a, p, i) = c * api - s * aqi;
                    at(a, q, i) = s * api + c * aqi;
                }
                for (int i = 0; i < n; ++i) {
                    double vip = at(v, i, p), viq = at(v, i, q);
                    at(v, i, p) = c * vip - s * viq;
                    at(v, i, q) = s * vip + c * viq;
                }
            }
    }

    std::vector<int> order(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) order[static_cast<std::size_t>(i)] = i;
    std::stable_sort(order.begin(), order.end(),
                     [&](int x, int y) { return at(a, x, x) > at(a, y, y); });
    EigenResult res;
    res.values.resize(static_cast<std::size_t>(n));
    res.vectors.assign(static_cast<std::size_t>(n) * n, 0.0);
    for (int j = 0; j < n; ++j) {
        int src = order[static_cast<std::size_t>(j)];
        res.values[static_cast<std::size_t>(j)] = at(a, src, src);
        for (int i = 0; i < n; ++i)
            res.vectors[static_cast<std::size_t>(i) * n + j] = at(v, i, src);
    }
    return res;
}

// ---------------------------------------------------------------------------
// Feature PCA image

// Projects [D,H,W] features onto their first three principal components and
// min-max scales each component to [0,255]. Sign convention: within each
// component, the first loading with magnitude above 1e-12 is made positive,
// so the image does not flip between runs that only differ in eigensolver
// rounding. D < 3 pads the missing channels with zeros.
inline std::vector<std::uint8_t> feature_pca_rgb(const Tensor& feats) {
    if (feats.rank() != 3) throw ShapeError("feature_pca_rgb: expected [D,H,W]");
    int d = feats.extent(0), h = feats.extent(1), w = feats.extent(2);
    std::size_t n = static_cast<std::size_t>(h) * w;
    const auto& vals = feats.values();

    std::vector<double> mean(static_cast<std::size_t>(d), 0.0);
    for (int c = 0; c < d; ++c) {
        for (std::size_t i = 0; i < n; ++i) mean[static_cast<std::size_t>(c)] += vals[c * n + i];
        mean[static_cast<std::size_t>(c)] /= static_cast<double>(n);
    }
    std::vector<double> cov(static_cast<std::size_t>(d) * d, 0.0);
    for (int a = 0; a < d; ++a)
        for (int b = a; b < d; ++b) {
            double acc = 0.0;
            for (std::size_t i = 0; i < n; ++i)
                acc += (vals[a * n + i] - mean[static_cast<std::size_t>(a)]) *
                       (vals[b * n + i] - mean[static_cast<std::size_t>(b)]);
            cov[static_cast<std::size_t>(a) * d + b] = cov[static_cast<std::size_t>(b) * d + a] =
                acc / static_cast<double>(n);
        }

    EigenResult eig = eigen_symmetric(cov, d);
    int comps = std::min(3, d);
    for (int j = 0; j < comps; ++j) {
        for (int i = 0; i < d; ++i) {
            double load = eig.vectors[static_cast<std::size_t>(i) * d + j];
            if (std::fabs(load) > 1e-12) {
                if (load < 0.0)
                    for (int r = 0; r < d; ++r)
                        eig.vectors[static_cast<std::size_t>(r) * d + j] *= -1.0;
                break;
            }
        }
    }

    std::vector<std::uint8_t> rgb(n * 3, 0);
    for (int j = 0; j < comps; ++j) {
        std::vector<double> proj(n, 0.0);
        double lo = 0.0, hi = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            double acc = 0.0;
            for (int c = 0; c < d; ++c)
                acc += (vals[c * n + i] - mean[static_cast<std::size_t>(c)]) *
                       eig.vectors[static_cast<std::size_t>(c) * d + j];
            proj[i] = acc;
            lo = i == 0 ? acc : std::min(lo, acc);
            hi = i == 0 ? acc : std::max(hi, acc);
        }
        double span = hi - lo;
        for (std::size_t i = 0; i < n; ++i) {
            double t = span > 1e-30 ? (proj[i] - lo) / span : 0.0;
            rgb[i * 3 + static_cast<std::size_t>(j)] =
                static_cast<std::uint8_t>(std::lround(t * 255.0));
        }
    }
    return rgb;
}

inline void write_ppm(std::ostream& os, const std::vector<std::uint8_t>& rgb, int width,
                      int height) {
    if (rgb.size() != static_cast<std::size_t>(width) * height * 3)
        throw ShapeError("write_ppm: pixel count does not match the image size");
    os << "P6\n" << width << " " << height << "\n255\n";
    os.write(reinterpret_cast<const char*>(rgb.data()), static_cast<std::streamsize>(rgb.size()));
    if (!os) throw IoError("write_ppm: write failed");
}

inline void write_feature_ppm(const std::filesystem::path& path, const Tensor& feats) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw IoError("write_feature_ppm: cannot open " + path.string());
    write_ppm(os, feature_pca_rgb(feats), feats.extent(2), feats.extent(1));
}

// ---------------------------------------------------------------------------
// ASCII PLY point cloud

struct PlyVertex {
    geo::Vec3 p;
    std::uint8_t r = 0, g = 0, b = 0;
};

inline std::array<std::uint8_t, 3> class_color(int cls) {
    switch (cls) {
        case 0: return {128, 128, 128};  // ground
        case 1: return {204, 102, 0};    // building
        case 2: return {0, 92, 230};     // vehicle
        case 3: return {34, 139, 34};    // vegetation
        case 4: return {135, 206, 235};  // background / sky
        default: return {255, 0, 255};
    }
}

inline void write_ply(std::ostream& os, const std::vector<PlyVertex>& verts) {
    os << "ply\nformat ascii 1.0\n";
    os << "element vertex " << verts.size() << "\n";
    os << "property float x\nproperty float y\nproperty float z\n";
    os << "property uchar red\nproperty uchar green\nproperty uchar blue\n";
    os << "end_header\n";
    os.precision(7);
    for (const PlyVertex& v : verts)
        os << v.p.x << " " << v.p.y << " " << v.p.z << " " << int(v.r) << " " << int(v.g) << " "
           << int(v.b) << "\n";
    if (!os) throw IoError("write_ply: write failed");
}

inline void write_ply(const std::filesystem::path& path, const std::vector<PlyVertex>& verts) {
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw IoError("write_ply: cannot open " + path.string());
    write_ply(os, verts);
}

}  // namespace fieldsc::viz
