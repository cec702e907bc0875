// Axis-aligned semantic occupancy grids, shared between ground-truth
// generation and prediction aggregation. The grid is described by its
// minimum corner, a cubic voxel edge length, and integer extents; voxel
// (ix, iy, iz) spans origin + [i, i+1) * size on each axis.
#pragma once

#include <cstdint>
#include <vector>

#include "fieldsc/error.hpp"
#include "fieldsc/geometry.hpp"

namespace fieldsc::vox {

struct GridConfig {
    geo::Vec3 origin{-6.4f, -3.0f, 0.0f};
    float voxel_size = 0.4f;
    int nx = 32, ny = 8, nz = 32;

    void validate() const {
        if (voxel_size <= 0.0f) throw ConfigError("voxel grid: size must be positive");
        if (nx < 1 || ny < 1 || nz < 1) throw ConfigError("voxel grid: extents must be positive");
    }

    std::size_t count() const {
        return static_cast<std::size_t>(nx) * static_cast<std::size_t>(ny) *
               static_cast<std::size_t>(nz);
    }

    std::size_t index(int ix, int iy, int iz) const {
        return (static_cast<std::size_t>(ix) * static_cast<std::size_t>(ny) +
                static_cast<std::size_t>(iy)) *
                   static_cast<std::size_t>(nz) +
               static_cast<std::size_t>(iz);
    }

    geo::Vec3 center(int ix, int iy, int iz) const {
        return {origin.x + (static_cast<float>(ix) + 0.5f) * voxel_size,
                origin.y + (static_cast<float>(iy) + 0.5f) * voxel_size,
                origin.z + (static_cast<float>(iz) + 0.5f) * voxel_size};
    }

    bool same_layout(const GridConfig& o) const {
        return origin.x == o.origin.x && origin.y == o.origin.y && origin.z == o.origin.z &&
               voxel_size == o.voxel_size && nx == o.nx && ny == o.ny && nz == o.nz;
    }
};

struct VoxelGrid {
    GridConfig cfg;
    std::vector<std::uint8_t> occupied;  // 0/1 per voxel
    std::vector<std::int32_t> cls;       // class id, meaningful where occupied
    std::vector<std::uint8_t> observed;  // 0 = outside the source frustum, excluded from metrics

    static VoxelGrid empty(const GridConfig& cfg) {
        cfg.validate();
        VoxelGrid g;
        g.cfg = cfg;
        g.occupied.assign(cfg.count(), 0);
        g.cls.assign(cfg.count(), -1);
        g.observed.assign(cfg.count(), 1);
        return g;
    }
};

}  // namespace fieldsc::vox
