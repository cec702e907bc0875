#include <catch2/catch_amalgamated.hpp>

#include <cstring>
#include <filesystem>
#include <fstream>

#include "fieldsc/config.hpp"

namespace cfg = fieldsc::cfg;
using fieldsc::ConfigError;
using fieldsc::IoError;

TEST_CASE("config text round trip") {
    SECTION("resolved text reparses to the identical configuration") {
        cfg::RunConfig base;
        base.lr = 0.0003f;  // not exactly representable, exercises float formatting
        base.lambda_s = 1e-3f;
        base.seed = 123456789012345ull;
        std::string text = cfg::resolved(base);
        cfg::RunConfig back = cfg::parse_config_text(text);
        REQUIRE(cfg::resolved(back) == text);
        REQUIRE(back.lr == base.lr);
        REQUIRE(back.lambda_s == base.lambda_s);
        REQUIRE(back.seed == base.seed);
    }

    SECTION("defaults match the documented schedule") {
        cfg::RunConfig c;
        REQUIRE(c.scenes == 64);
        REQUIRE(c.train_steps == 2000);
        REQUIRE(c.distill_steps == 500);
        REQUIRE(c.image_width == 64);
        REQUIRE(c.image_height == 48);
        REQUIRE(c.views == 4);
        REQUIRE(c.feature_dim == 16);
        REQUIRE(c.window == 9);
        REQUIRE(c.voxel_size == 0.4f);
        REQUIRE(c.grid_nx == 32);
        REQUIRE(c.grid_nz == 32);
        REQUIRE(c.lr == 1e-4f);
        REQUIRE(c.patches_per_image == 32);
        REQUIRE_NOTHROW(cfg::validate(c));
    }

    SECTION("every key in the resolved dump can be set from text") {
        // ensures no field is serialized under a name apply_override rejects
        cfg::RunConfig c;
        std::istringstream lines(cfg::resolved(c));
        std::string line;
        int keys = 0;
        while (std::getline(lines, line)) {
            auto eq = line.find('=');
            REQUIRE(eq != std::string::npos);
            REQUIRE_NOTHROW(cfg::apply_override(c, line.substr(0, eq), line.substr(eq + 1)));
            ++keys;
        }
        REQUIRE(keys > 50);
    }
}

TEST_CASE("config parsing") {
    SECTION("overrides, comments, and later-wins") {
        std::string text =
            "# a comment line\n"
            "train_steps = 5\n"
            "\n"
            "lr=0.5   # trailing comment\n"
            "train_steps=7\n";
        cfg::RunConfig c = cfg::parse_config_text(text);
        REQUIRE(c.train_steps == 7);
        REQUIRE(c.lr == 0.5f);
        REQUIRE(c.scenes == 64);  // untouched default
    }

    SECTION("unknown keys are rejected") {
        REQUIRE_THROWS_AS(cfg::parse_config_text("train_stepz=5\n"), ConfigError);
        cfg::RunConfig c;
        REQUIRE_THROWS_AS(cfg::apply_override(c, "nope", "1"), ConfigError);
    }

    SECTION("malformed values are rejected with the key named") {
        REQUIRE_THROWS_WITH(cfg::parse_config_text("train_steps=five\n"),
                            Catch::Matchers::ContainsSubstring("train_steps"));
        REQUIRE_THROWS_AS(cfg::parse_config_text("lr=abc\n"), ConfigError);
        REQUIRE_THROWS_AS(cfg::parse_config_text("train_parallel=maybe\n"), ConfigError);
        REQUIRE_THROWS_AS(cfg::parse_config_text("seed=-3\n"), ConfigError);
        REQUIRE_THROWS_AS(cfg::parse_config_text("just a line\n"), ConfigError);
    }

    SECTION("file loading") {
        namespace fs = std::filesystem;
        fs::path p = fs::temp_directory_path() /
                     ("fieldsc_cfg_" + std::to_string(Catch::rngSeed()) + ".cfg");
        {
            std::ofstream os(p);
            os << "scenes=3\nholdout=1\n";
        }
        cfg::RunConfig c = cfg::load_config(p);
        REQUIRE(c.scenes == 3);
        REQUIRE(c.holdout == 1);
        fs::remove(p);
        REQUIRE_THROWS_AS(cfg::load_config(p), IoError);
    }
}

TEST_CASE("config adapters") {
    cfg::RunConfig c;
    c.feature_dim = 12;
    c.patch = 4;
    c.image_width = 16;
    c.image_height = 12;
    c.eval_bands = "2.0,4.0";

    SECTION("module configs mirror the flat keys") {
        auto f = cfg::field_config(c);
        REQUIRE(f.target_dim == 12);
        REQUIRE(f.patch == 4);
        auto s = cfg::scene_config(c);
        REQUIRE(s.feature_dim == 12);
        REQUIRE(s.width == 16);
        auto g = cfg::grid_config(c);
        REQUIRE(g.origin.x == c.grid_origin_x);
        REQUIRE(g.nx == c.grid_nx);
        auto a = cfg::aggregate_config(c);
        REQUIRE(a.occ_threshold == c.occ_threshold);
        auto w = cfg::loss_weights(c);
        REQUIRE(w.lambda_f == c.lambda_f);
        auto d = cfg::distill_weights(c);
        REQUIRE(d.k == c.knn_k);
    }

    SECTION("bands are cumulative from zero") {
        auto bands = cfg::eval_bands(c);
        REQUIRE(bands.size() == 2);
        REQUIRE(bands[0].lo == 0.0f);
        REQUIRE(bands[0].hi == 2.0f);
        REQUIRE(bands[1].lo == 0.0f);
        REQUIRE(bands[1].hi == 4.0f);
    }

    SECTION("band edge validation") {
        c.eval_bands = "4.0,2.0";
        REQUIRE_THROWS_AS(cfg::eval_bands(c), ConfigError);
        c.eval_bands = "-1";
        REQUIRE_THROWS_AS(cfg::eval_bands(c), ConfigError);
        c.eval_bands = "";
        REQUIRE_THROWS_AS(cfg::eval_bands(c), ConfigError);
        c.eval_bands = "1.0,junk";
        REQUIRE_THROWS_AS(cfg::eval_bands(c), ConfigError);
    }
}

TEST_CASE("config validation") {
    SECTION("cross-field checks") {
        cfg::RunConfig c;
        c.holdout = c.scenes + 1;
        REQUIRE_THROWS_AS(cfg::validate(c), ConfigError);

        c = {};
        c.distill_k = c.feature_dim;
        REQUIRE_THROWS_AS(cfg::validate(c), ConfigError);

        c = {};
        c.patch = 7;  // does not divide 64x48
        REQUIRE_THROWS_AS(cfg::validate(c), ConfigError);

        c = {};
        c.lr = 0.0f;
        REQUIRE_THROWS_AS(cfg::validate(c), ConfigError);

        c = {};
        c.threads = 0;
        REQUIRE_THROWS_AS(cfg::validate(c), ConfigError);

        c = {};
        c.lambda_p = -1.0f;
        REQUIRE_THROWS_AS(cfg::validate(c), ConfigError);

        c = {};
        c.distill_sampling = "random";
        REQUIRE_THROWS_AS(cfg::validate(c), ConfigError);
        c.distill_sampling = "crop2d";
        REQUIRE_NOTHROW(cfg::validate(c));
    }

    SECTION("ablation switches parse and round trip") {
        cfg::RunConfig c;
        REQUIRE(c.fbar_enabled);
        REQUIRE(c.distill_sampling == "3d");

        c = cfg::parse_config_text("fbar_enabled=false\ndistill_sampling=crop2d\n");
        REQUIRE(!c.fbar_enabled);
        REQUIRE(c.distill_sampling == "crop2d");

        cfg::RunConfig back = cfg::parse_config_text(cfg::resolved(c));
        REQUIRE(!back.fbar_enabled);
        REQUIRE(back.distill_sampling == "crop2d");
    }
}
