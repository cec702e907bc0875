#include <catch2/catch_amalgamated.hpp>

#include <filesystem>
#include <fstream>
#include <set>

#include <nlohmann/json.hpp>

#include "fieldsc/dataset.hpp"

using fieldsc::IoError;
using fieldsc::Rng;
namespace data = fieldsc::data;
namespace sc = fieldsc::scene;
namespace vox = fieldsc::vox;
namespace fs = std::filesystem;

namespace {

// unique scratch directory per test run, removed on destruction
struct TempDir {
    fs::path path;
    TempDir() {
        path = fs::temp_directory_path() /
               ("fieldsc_test_" + std::to_string(Catch::rngSeed()) + "_" +
                std::to_string(counter++));
        fs::create_directories(path);
    }
    ~TempDir() {
        std::error_code ec;
        fs::remove_all(path, ec);
    }
    static inline int counter = 0;
};

data::Dataset tiny_dataset() {
    sc::SceneConfig cfg;
    cfg.width = 16;
    cfg.height = 8;
    cfg.patch = 4;
    cfg.feature_dim = 6;
    cfg.views = 2;
    cfg.buildings = 1;
    cfg.vehicles = 1;
    cfg.trees = 1;
    cfg.focal = 10.0f;
    vox::GridConfig grid;
    grid.nx = 8;
    grid.ny = 4;
    grid.nz = 8;
    grid.origin = {-1.6f, -1.4f, 0.0f};
    Rng rng(77);
    sc::Prototypes protos = sc::make_prototypes(sc::kNumClasses, cfg.feature_dim, 0.02f, rng);

    data::Dataset ds;
    for (int c = 0; c < sc::kNumClasses; ++c) ds.class_names.push_back(sc::class_name(c));
    ds.scenes.push_back(sc::make_scene_sample(5, cfg, protos, grid));
    ds.scenes.push_back(sc::make_scene_sample(6, cfg, protos, grid));
    return ds;
}

}  // namespace

TEST_CASE("dataset round trip") {
    data::Dataset ds = tiny_dataset();

    SECTION("written datasets read back bit-identically") {
        TempDir tmp;
        data::write_dataset(ds, tmp.path);
        data::Dataset back = data::read_dataset(tmp.path);

        REQUIRE(back.class_names == ds.class_names);
        REQUIRE(back.scenes.size() == ds.scenes.size());
        for (std::size_t s = 0; s < ds.scenes.size(); ++s) {
            const sc::SceneSample& a = ds.scenes[s];
            const sc::SceneSample& b = back.scenes[s];
            REQUIRE(a.seed == b.seed);
            REQUIRE(a.k.fx == b.k.fx);
            REQUIRE(a.k.cx == b.k.cx);
            REQUIRE(a.k.width == b.k.width);
            REQUIRE(a.views.size() == b.views.size());
            for (std::size_t v = 0; v < a.views.size(); ++v) {
                REQUIRE(a.views[v].image.values() == b.views[v].image.values());
                REQUIRE(a.views[v].feat.values() == b.views[v].feat.values());
                REQUIRE(a.views[v].depth.values() == b.views[v].depth.values());
                REQUIRE(a.views[v].sem.values() == b.views[v].sem.values());
                for (int i = 0; i < 16; ++i)
                    REQUIRE(a.views[v].pose.cam_to_world.m[i] ==
                            b.views[v].pose.cam_to_world.m[i]);
            }
            REQUIRE(a.vox_gt.occupied == b.vox_gt.occupied);
            REQUIRE(a.vox_gt.cls == b.vox_gt.cls);
            REQUIRE(a.vox_gt.cfg.same_layout(b.vox_gt.cfg));
            REQUIRE(a.corr.size() == b.corr.size());
            for (std::size_t c = 0; c < a.corr.size(); ++c)
                REQUIRE(a.corr[c].values() == b.corr[c].values());
        }
    }

    SECTION("the manifest lists every view exactly once") {
        TempDir tmp;
        data::write_dataset(ds, tmp.path);
        std::ifstream in(tmp.path / "manifest.json");
        nlohmann::json j = nlohmann::json::parse(in);
        REQUIRE(j.at("format") == "fieldsc-dataset");
        REQUIRE(j.at("scenes").size() == 2);
        std::set<std::string> files;
        for (const auto& scene : j.at("scenes")) {
            REQUIRE(scene.at("views").size() == 2);
            for (const auto& view : scene.at("views")) {
                std::string rel = std::string(scene.at("dir")) + "/" +
                                  std::string(view.at("image"));
                REQUIRE(files.insert(rel).second);  // no duplicates
                REQUIRE(fs::exists(tmp.path / rel));
            }
        }
        REQUIRE(files.size() == 4);
    }

    SECTION("a corrupted tensor file surfaces as an i/o error") {
        TempDir tmp;
        data::write_dataset(ds, tmp.path);
        fs::path victim = tmp.path / "scene_0000" / "image_0.tnsr";
        REQUIRE(fs::exists(victim));
        {
            std::fstream f(victim, std::ios::in | std::ios::out | std::ios::binary);
            f.write("JUNK", 4);  // clobber the magic
        }
        REQUIRE_THROWS_AS(data::read_dataset(tmp.path), IoError);
    }

    SECTION("a missing manifest surfaces as an i/o error") {
        TempDir tmp;
        REQUIRE_THROWS_AS(data::read_dataset(tmp.path), IoError);
    }

    SECTION("duplicate correspondence entries are rejected") {
        TempDir tmp;
        data::write_dataset(ds, tmp.path);
        fs::path mpath = tmp.path / "manifest.json";
        nlohmann::json j;
        {
            std::ifstream in(mpath);
            j = nlohmann::json::parse(in);
        }
        auto& corrs = j.at("scenes").at(0).at("correspondences");
        corrs.push_back(corrs.at(0));
        {
            std::ofstream out(mpath);
            out << j.dump(2);
        }
        REQUIRE_THROWS_AS(data::read_dataset(tmp.path), IoError);
    }

    SECTION("an unknown format string is rejected") {
        TempDir tmp;
        data::write_dataset(ds, tmp.path);
        fs::path mpath = tmp.path / "manifest.json";
        nlohmann::json j;
        {
            std::ifstream in(mpath);
            j = nlohmann::json::parse(in);
        }
        j["format"] = "something-else";
        {
            std::ofstream out(mpath);
            out << j.dump(2);
        }
        REQUIRE_THROWS_AS(data::read_dataset(tmp.path), IoError);
    }
}
