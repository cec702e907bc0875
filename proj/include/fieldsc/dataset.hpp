// Dataset directory layout and round-trip I/O. A dataset is a manifest plus
// one subdirectory per scene holding .tnsr tensors:
//
//   manifest.json                      scene list, class names, intrinsics,
//                                      poses (written last, so a complete
//                                      manifest implies a complete dataset)
//   scene_0000/image_#.tnsr            [3,H,W] rgb
//   scene_0000/feat_#.tnsr             [D,H/p,W/p] target features
//   scene_0000/depth_#.tnsr            [H,W] range along the pixel ray
//   scene_0000/sem_#.tnsr              [H,W] class ids as floats
//   scene_0000/voxgt.tnsr              [2,nx,ny,nz] occupancy + class
//   scene_0000/voxgt_meta.json         grid origin/size/extents
//   scene_0000/corr_a_b.tnsr           [3,H,W] correspondence per view pair
//
// Reading back what was written reproduces every tensor bit for bit.
#pragma once

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "fieldsc/error.hpp"
#include "fieldsc/scenegen.hpp"
#include "fieldsc/tnsr_io.hpp"
#include "fieldsc/voxel.hpp"

namespace fieldsc::data {

using nlohmann::json;

struct Dataset {
    std::vector<std::string> class_names;
    std::vector<scene::SceneSample> scenes;
};

namespace detail {

inline json pose_to_json(const geo::Pose& p) {
    json a = json::array();
    for (float v : p.cam_to_world.m) a.push_back(v);
    return a;
}

inline geo::Pose pose_from_json(const json& a) {
    if (!a.is_array() || a.size() != 16)
        throw IoError("dataset: pose must be a 16-element row-major array");
    geo::Pose p;
    for (int i = 0; i < 16; ++i) p.cam_to_world.m[i] = a[static_cast<std::size_t>(i)].get<float>();
    return p;
}

inline void write_json_file(const std::filesystem::path& path, const json& j) {
    std::ofstream os(path);
    if (!os) throw IoError("dataset: cannot open " + path.string() + " for writing");
    os << j.dump(2) << "\n";
    if (!os) throw IoError("dataset: write failed for " + path.string());
}

inline json read_json_file(const std::filesystem::path& path) {
    std::ifstream is(path);
    if (!is) throw IoError("dataset: cannot open " + path.string());
    try {
        return json::parse(is);
    } catch (const json::exception& e) {
        throw IoError("dataset: malformed JSON in " + path.string() + ": " + e.what());
    }
}

inline std::string scene_dir_name(std::size_t i) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "scene_%04zu", i);
    return buf;
}

// Occupancy and class ids packed into one float tensor for the .tnsr format.
inline ad::Tensor voxgt_to_tensor(const vox::VoxelGrid& g) {
    ad::Tensor t = ad::Tensor::zeros({2, g.cfg.nx, g.cfg.ny, g.cfg.nz});
    std::size_t n = g.cfg.count();
    for (std::size_t i = 0; i < n; ++i) {
        t.mutable_values()[i] = static_cast<float>(g.occupied[i]);
        t.mutable_values()[n + i] = static_cast<float>(g.cls[i]);
    }
    return t;
}

inline vox::VoxelGrid voxgt_from_tensor(const ad::Tensor& t, const vox::GridConfig& cfg) {
    if (t.rank() != 4 || t.extent(0) != 2 || t.extent(1) != cfg.nx || t.extent(2) != cfg.ny ||
        t.extent(3) != cfg.nz)
        throw IoError("dataset: voxel tensor does not match its meta file");
    vox::VoxelGrid g = vox::VoxelGrid::empty(cfg);
    std::size_t n = cfg.count();
    for (std::size_t i = 0; i < n; ++i) {
        g.occupied[i] = t.values()[i] > 0.5f ? 1 : 0;
        g.cls[i] = static_cast<std::int32_t>(std::lround(t.values()[n + i]));
    }
    return g;
}

}  // namespace detail

inline void write_dataset(const Dataset& ds, const std::filesystem::path& dir) {
    namespace fs = std::filesystem;
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw IoError("dataset: cannot create " + dir.string() + ": " + ec.message());

    json scenes = json::array();
    for (std::size_t si = 0; si < ds.scenes.size(); ++si) {
        const scene::SceneSample& s = ds.scenes[si];
        std::string sub = detail::scene_dir_name(si);
        fs::create_directories(dir / sub, ec);
        if (ec) throw IoError("dataset: cannot create scene directory: " + ec.message());

        json views = json::array();
        for (std::size_t v = 0; v < s.views.size(); ++v) {
            const scene::ViewData& vd = s.views[v];
            std::string tag = std::to_string(v);
            io::write_tnsr(dir / sub / ("image_" + tag + ".tnsr"), vd.image);
            io::write_tnsr(dir / sub / ("feat_" + tag + ".tnsr"), vd.feat);
            io::write_tnsr(dir / sub / ("depth_" + tag + ".tnsr"), vd.depth);
            io::write_tnsr(dir / sub / ("sem_" + tag + ".tnsr"), vd.sem);
            views.push_back({{"image", "image_" + tag + ".tnsr"},
                             {"feat", "feat_" + tag + ".tnsr"},
                             {"depth", "depth_" + tag + ".tnsr"},
                             {"sem", "sem_" + tag + ".tnsr"},
                             {"pose", detail::pose_to_json(vd.pose)}});
        }

        io::write_tnsr(dir / sub / "voxgt.tnsr", detail::voxgt_to_tensor(s.vox_gt));
        const vox::GridConfig& g = s.vox_gt.cfg;
        detail::write_json_file(dir / sub / "voxgt_meta.json",
                                {{"origin", {g.origin.x, g.origin.y, g.origin.z}},
                                 {"voxel_size", g.voxel_size},
                                 {"extents", {g.nx, g.ny, g.nz}}});

        int n_views = static_cast<int>(s.views.size());
        json corrs = json::array();
        for (int a = 0; a < n_views; ++a)
            for (int b = 0; b < n_views; ++b) {
                if (a == b) continue;
                std::string name =
                    "corr_" + std::to_string(a) + "_" + std::to_string(b) + ".tnsr";
                io::write_tnsr(
                    dir / sub / name,
                    s.corr.at(static_cast<std::size_t>(scene::corr_index(a, b, n_views))));
                corrs.push_back({{"a", a}, {"b", b}, {"file", name}});
            }

        scenes.push_back({{"seed", s.seed},
                          {"dir", sub},
                          {"intrinsics",
                           {{"fx", s.k.fx},
                            {"fy", s.k.fy},
                            {"cx", s.k.cx},
                            {"cy", s.k.cy},
                            {"width", s.k.width},
                            {"height", s.k.height}}},
                          {"views", views},
                          {"voxgt", "voxgt.tnsr"},
                          {"voxgt_meta", "voxgt_meta.json"},
                          {"correspondences", corrs}});
    }

    json manifest = {{"format", "fieldsc-dataset"},
                     {"version", 1},
                     {"class_names", ds.class_names},
                     {"scenes", scenes}};
    detail::write_json_file(dir / "manifest.json", manifest);
}

inline Dataset read_dataset(const std::filesystem::path& dir) {
    json manifest = detail::read_json_file(dir / "manifest.json");
    Dataset ds;
    try {
        if (manifest.at("format").get<std::string>() != "fieldsc-dataset")
            throw IoError("dataset: " + (dir / "manifest.json").string() +
                          " is not a dataset manifest");
        ds.class_names = manifest.at("class_names").get<std::vector<std::string>>();

        for (const json& sj : manifest.at("scenes")) {
            scene::SceneSample s;
            s.seed = sj.at("seed").get<std::uint64_t>();
            std::filesystem::path sub = dir / sj.at("dir").get<std::string>();
            const json& kj = sj.at("intrinsics");
            s.k = geo::Intrinsics{kj.at("fx").get<float>(),    kj.at("fy").get<float>(),
                                  kj.at("cx").get<float>(),    kj.at("cy").get<float>(),
                                  kj.at("width").get<int>(),   kj.at("height").get<int>()};

            for (const json& vj : sj.at("views")) {
                scene::ViewData vd;
                vd.image = io::read_tnsr(sub / vj.at("image").get<std::string>());
                vd.feat = io::read_tnsr(sub / vj.at("feat").get<std::string>());
                vd.depth = io::read_tnsr(sub / vj.at("depth").get<std::string>());
                vd.sem = io::read_tnsr(sub / vj.at("sem").get<std::string>());
                vd.pose = detail::pose_from_json(vj.at("pose"));
                s.views.push_back(std::move(vd));
            }

            json meta = detail::read_json_file(sub / sj.at("voxgt_meta").get<std::string>());
            vox::GridConfig gc;
            gc.origin = {meta.at("origin").at(0).get<float>(), meta.at("origin").at(1).get<float>(),
                         meta.at("origin").at(2).get<float>()};
            gc.voxel_size = meta.at("voxel_size").get<float>();
            gc.nx = meta.at("extents").at(0).get<int>();
            gc.ny = meta.at("extents").at(1).get<int>();
            gc.nz = meta.at("extents").at(2).get<int>();
            s.vox_gt = detail::voxgt_from_tensor(
                io::read_tnsr(sub / sj.at("voxgt").get<std::string>()), gc);

            int n_views = static_cast<int>(s.views.size());
            std::size_t n_pairs =
                static_cast<std::size_t>(n_views) * static_cast<std::size_t>(n_views - 1);
            s.corr.resize(n_pairs);
            std::vector<bool> seen(n_pairs, false);
            for (const json& cj : sj.at("correspondences")) {
                int a = cj.at("a").get<int>(), b = cj.at("b").get<int>();
                std::size_t idx = static_cast<std::size_t>(scene::corr_index(a, b, n_views));
                if (seen[idx])
                    throw IoError("dataset: duplicate correspondence entry in manifest");
                seen[idx] = true;
                s.corr[idx] = io::read_tnsr(sub / cj.at("file").get<std::string>());
            }
            for (bool b : seen)
                if (!b) throw IoError("dataset: manifest is missing a correspondence pair");

            ds.scenes.push_back(std::move(s));
        }
    } catch (const json::exception& e) {
        throw IoError("dataset: manifest field error: " + std::string(e.what()));
    }
    return ds;
}

}  // namespace fieldsc::data
