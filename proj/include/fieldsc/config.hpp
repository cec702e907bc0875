// Run configuration: one flat key=value file drives every pipeline stage.
// All keys have defaults, unknown keys are rejected, and resolved() prints
// the complete effective configuration so each run can log what it used.
#pragma once

#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "fieldsc/distill.hpp"
#include "fieldsc/error.hpp"
#include "fieldsc/eval.hpp"
#include "fieldsc/field.hpp"
#include "fieldsc/losses.hpp"
#include "fieldsc/render.hpp"
#include "fieldsc/scenegen.hpp"
#include "fieldsc/voxel.hpp"

namespace fieldsc::cfg {

struct RunConfig {
    // dataset
    std::uint64_t seed = 1;
    int scenes = 64;
    int holdout = 8;  // trailing scenes reserved for evaluation
    int views = 4;
    int image_width = 64;
    int image_height = 48;
    float focal = 40.0f;
    float z_far = 20.0f;
    int buildings = 3;
    int vehicles = 2;
    int trees = 3;
    int feature_dim = 16;  // target feature width D, shared with the field
    int patch = 8;         // feature stride p, shared with the downsampler
    float feature_noise = 0.05f;
    float feature_offset = 0.3f;

    // field
    int embed_dim = 16;
    int field_dim = 8;
    int hidden = 24;
    int pe_octaves = 4;
    int window = 9;

    // rendering
    int ray_samples = 16;
    float near = 0.5f;
    float far = 25.0f;
    bool normalize_depth_by_opacity = false;

    // loss weights
    float lambda_p = 1.0f;
    float lambda_s = 0.001f;
    float lambda_f = 0.2f;
    float lambda_fs = 0.25f;
    float lambda_l1 = 0.85f;
    float lambda_ssim = 0.15f;

    // training
    int train_steps = 2000;
    float lr = 1e-4f;
    float adam_beta1 = 0.9f;
    float adam_beta2 = 0.999f;
    float adam_eps = 1e-8f;
    int patches_per_image = 32;
    int checkpoint_every = 500;
    bool train_parallel = false;  // parallel constant precompute per step
    bool fbar_enabled = true;     // learned constant feature map; off zeroes and freezes it

    // distillation
    int distill_steps = 500;
    float distill_lr = 1e-3f;
    int distill_k = 8;     // distilled feature width K
    int head_hidden = 32;
    int centers_per_step = 4;
    int neighborhood_n = 32;
    float neighborhood_radius = 0.5f;
    float sigma_min = 0.5f;
    int buffer_capacity = 256;
    int knn_k = 4;
    float lambda_self = 0.08f;
    float lambda_knn = 0.43f;
    float lambda_rand = 0.67f;
    float b_self = 0.44f;
    float b_knn = 0.18f;
    float b_rand = 0.87f;
    int clusters = 5;
    std::string distill_sampling = "3d";  // "3d" neighborhoods or "crop2d" image crops

    // voxel grid
    float grid_origin_x = -6.4f;
    float grid_origin_y = -3.0f;
    float grid_origin_z = 0.0f;
    float voxel_size = 0.4f;
    int grid_nx = 32;
    int grid_ny = 8;
    int grid_nz = 32;

    // evaluation
    int samples_per_voxel = 2;
    float occ_threshold = 0.5f;
    float eval_far = 20.0f;
    std::string eval_bands = "3.2,6.4,12.8";  // cumulative range edges from the camera

    int threads = 1;

    template <class Self, class F>
    static void visit_fields(Self& c, F&& f) {
        f("seed", c.seed);
        f("scenes", c.scenes);
        f("holdout", c.holdout);
        f("views", c.views);
        f("image_width", c.image_width);
        f("image_height", c.image_height);
        f("focal", c.focal);
        f("z_far", c.z_far);
        f("buildings", c.buildings);
        f("vehicles", c.vehicles);
        f("trees", c.trees);
        f("feature_dim", c.feature_dim);
        f("patch", c.patch);
        f("feature_noise", c.feature_noise);
        f("feature_offset", c.feature_offset);
        f("embed_dim", c.embed_dim);
        f("field_dim", c.field_dim);
        f("hidden", c.hidden);
        f("pe_octaves", c.pe_octaves);
        f("window", c.window);
        f("ray_samples", c.ray_samples);
        f("near", c.near);
        f("far", c.far);
        f("normalize_depth_by_opacity", c.normalize_depth_by_opacity);
        f("lambda_p", c.lambda_p);
        f("lambda_s", c.lambda_s);
        f("lambda_f", c.lambda_f);
        f("lambda_fs", c.lambda_fs);
        f("lambda_l1", c.lambda_l1);
        f("lambda_ssim", c.lambda_ssim);
        f("train_steps", c.train_steps);
        f("lr", c.lr);
        f("adam_beta1", c.adam_beta1);
        f("adam_beta2", c.adam_beta2);
        f("adam_eps", c.adam_eps);
        f("patches_per_image", c.patches_per_image);
        f("checkpoint_every", c.checkpoint_every);
        f("train_parallel", c.train_parallel);
        f("fbar_enabled", c.fbar_enabled);
        f("distill_steps", c.distill_steps);
        f("distill_lr", c.distill_lr);
        f("distill_k", c.distill_k);
        f("head_hidden", c.head_hidden);
        f("centers_per_step", c.centers_per_step);
        f("neighborhood_n", c.neighborhood_n);
        f("neighborhood_radius", c.neighborhood_radius);
        f("sigma_min", c.sigma_min);
        f("buffer_capacity", c.buffer_capacity);
        f("knn_k", c.knn_k);
        f("lambda_self", c.lambda_self);
        f("lambda_knn", c.lambda_knn);
        f("lambda_rand", c.lambda_rand);
        f("b_self", c.b_self);
        f("b_knn", c.b_knn);
        f("b_rand", c.b_rand);
        f("clusters", c.clusters);
        f("distill_sampling", c.distill_sampling);
        f("grid_origin_x", c.grid_origin_x);
        f("grid_origin_y", c.grid_origin_y);
        f("grid_origin_z", c.grid_origin_z);
        f("voxel_size", c.voxel_size);
        f("grid_nx", c.grid_nx);
        f("grid_ny", c.grid_ny);
        f("grid_nz", c.grid_nz);
        f("samples_per_voxel", c.samples_per_voxel);
        f("occ_threshold", c.occ_threshold);
        f("eval_far", c.eval_far);
        f("eval_bands", c.eval_bands);
        f("threads", c.threads);
    }
};

namespace detail {

inline std::string trim(const std::string& s) {
    std::size_t a = s.find_first_not_of(" \t\r");
    if (a == std::string::npos) return "";
    std::size_t b = s.find_last_not_of(" \t\r");
    return s.substr(a, b - a + 1);
}

inline void parse_value(const std::string& key, const std::string& text, int& out) {
    char* end = nullptr;
    long v = std::strtol(text.c_str(), &end, 10);
    if (end == text.c_str() || *end != '\0')
        throw ConfigError("config: key '" + key + "' expects an integer, got '" + text + "'");
    out = static_cast<int>(v);
}

inline void parse_value(const std::string& key, const std::string& text, std::uint64_t& out) {
    char* end = nullptr;
    unsigned long long v = std::strtoull(text.c_str(), &end, 10);
    if (end == text.c_str() || *end != '\0' || text.find('-') != std::string::npos)
        throw ConfigError("config: key '" + key + "' expects a nonnegative integer, got '" +
                          text + "'");
    out = v;
}

inline void parse_value(const std::string& key, const std::string& text, float& out) {
    char* end = nullptr;
    float v = std::strtof(text.c_str(), &end);
    if (end == text.c_str() || *end != '\0')
        throw ConfigError("config: key '" + key + "' expects a number, got '" + text + "'");
    out = v;
}

inline void parse_value(const std::string& key, const std::string& text, bool& out) {
    if (text == "true" || text == "1")
        out = true;
    else if (text == "false" || text == "0")
        out = false;
    else
        throw ConfigError("config: key '" + key + "' expects true/false, got '" + text + "'");
}

inline void parse_value(const std::string&, const std::string& text, std::string& out) {
    out = text;
}

inline std::string format_value(int v) { return std::to_string(v); }
inline std::string format_value(std::uint64_t v) { return std::to_string(v); }
inline std::string format_value(bool v) { return v ? "true" : "false"; }
inline std::string format_value(const std::string& v) { return v; }

inline std::string format_value(float v) {
    // max_digits10 keeps the round trip through text bit-exact
    std::ostringstream os;
    os.precision(9);
    os << v;
    return os.str();
}

}  // namespace detail

// Applies one key=value override in place. Unknown keys are an error: a
// typoed key silently falling back to its default would be worse.
inline void apply_override(RunConfig& c, const std::string& key, const std::string& value) {
    bool matched = false;
    RunConfig::visit_fields(c, [&](const char* name, auto& member) {
        if (!matched && key == name) {
            detail::parse_value(key, value, member);
            matched = true;
        }
    });
    if (!matched) throw ConfigError("config: unknown key '" + key + "'");
}

// key=value per line; '#' starts a comment; blank lines skipped; later
// assignments win.
inline RunConfig parse_config_text(const std::string& text, RunConfig base = {}) {
    std::istringstream is(text);
    std::string line;
    int lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        std::size_t hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        line = detail::trim(line);
        if (line.empty()) continue;
        std::size_t eq = line.find('=');
        if (eq == std::string::npos)
            throw ConfigError("config: line " + std::to_string(lineno) +
                              " is not key=value: '" + line + "'");
        apply_override(base, detail::trim(line.substr(0, eq)),
                       detail::trim(line.substr(eq + 1)));
    }
    return base;
}

inline RunConfig load_config(const std::filesystem::path& path, RunConfig base = {}) {
    std::ifstream is(path);
    if (!is) throw IoError("config: cannot open " + path.string());
    std::ostringstream buf;
    buf << is.rdbuf();
    return parse_config_text(buf.str(), base);
}

// The complete effective configuration, one key=value per line in
// declaration order. Reparsing it reproduces the struct exactly.
inline std::string resolved(const RunConfig& c) {
    std::ostringstream os;
    RunConfig::visit_fields(c, [&](const char* name, const auto& member) {
        os << name << "=" << detail::format_value(member) << "\n";
    });
    return os.str();
}

// ---------------------------------------------------------------------------
// Adapters into the per-module config structs

inline scene::SceneConfig scene_config(const RunConfig& c) {
    scene::SceneConfig s;
    s.buildings = c.buildings;
    s.vehicles = c.vehicles;
    s.trees = c.trees;
    s.width = c.image_width;
    s.height = c.image_height;
    s.views = c.views;
    s.focal = c.focal;
    s.z_far = c.z_far;
    s.feature_dim = c.feature_dim;
    s.patch = c.patch;
    s.noise_scale = c.feature_noise;
    s.offset_scale = c.feature_offset;
    return s;
}

inline field::FieldConfig field_config(const RunConfig& c) {
    field::FieldConfig f;
    f.embed_dim = c.embed_dim;
    f.field_dim = c.field_dim;
    f.target_dim = c.feature_dim;
    f.hidden = c.hidden;
    f.pe_octaves = c.pe_octaves;
    f.window = c.window;
    f.patch = c.patch;
    return f;
}

inline render::RenderConfig render_config(const RunConfig& c) {
    render::RenderConfig r;
    r.samples = c.ray_samples;
    r.near = c.near;
    r.far = c.far;
    r.normalize_depth_by_opacity = c.normalize_depth_by_opacity;
    return r;
}

inline losses::LossWeights loss_weights(const RunConfig& c) {
    losses::LossWeights w;
    w.lambda_p = c.lambda_p;
    w.lambda_s = c.lambda_s;
    w.lambda_f = c.lambda_f;
    w.lambda_fs = c.lambda_fs;
    w.lambda_l1 = c.lambda_l1;
    w.lambda_ssim = c.lambda_ssim;
    return w;
}

inline distill::DistillWeights distill_weights(const RunConfig& c) {
    distill::DistillWeights w;
    w.lambda_self = c.lambda_self;
    w.lambda_knn = c.lambda_knn;
    w.lambda_rand = c.lambda_rand;
    w.b_self = c.b_self;
    w.b_knn = c.b_knn;
    w.b_rand = c.b_rand;
    w.k = c.knn_k;
    return w;
}

inline vox::GridConfig grid_config(const RunConfig& c) {
    vox::GridConfig g;
    g.origin = {c.grid_origin_x, c.grid_origin_y, c.grid_origin_z};
    g.voxel_size = c.voxel_size;
    g.nx = c.grid_nx;
    g.ny = c.grid_ny;
    g.nz = c.grid_nz;
    return g;
}

inline eval::AggregateConfig aggregate_config(const RunConfig& c) {
    eval::AggregateConfig a;
    a.samples_per_voxel = c.samples_per_voxel;
    a.occ_threshold = c.occ_threshold;
    a.far = c.eval_far;
    return a;
}

// Cumulative range bands [0, edge) from the comma-separated edge list.
inline std::vector<eval::RangeBand> eval_bands(const RunConfig& c) {
    std::vector<eval::RangeBand> bands;
    std::istringstream is(c.eval_bands);
    std::string tok;
    while (std::getline(is, tok, ',')) {
        tok = detail::trim(tok);
        if (tok.empty()) continue;
        float edge = 0.0f;
        detail::parse_value("eval_bands", tok, edge);
        if (edge <= 0.0f) throw ConfigError("config: eval_bands edges must be positive");
        if (!bands.empty() && edge <= bands.back().hi)
            throw ConfigError("config: eval_bands edges must be strictly increasing");
        bands.push_back({0.0f, edge});
    }
    if (bands.empty()) throw ConfigError("config: eval_bands must list at least one edge");
    return bands;
}

// Cross-field sanity plus the per-module validations.
inline void validate(const RunConfig& c) {
    if (c.scenes < 0) throw ConfigError("config: scenes must be nonnegative");
    if (c.holdout < 0 || c.holdout > c.scenes)
        throw ConfigError("config: holdout must lie in [0, scenes]");
    if (c.train_steps < 0 || c.distill_steps < 0)
        throw ConfigError("config: step counts must be nonnegative");
    if (c.lr <= 0.0f || c.distill_lr <= 0.0f)
        throw ConfigError("config: learning rates must be positive");
    if (c.patches_per_image < 1) throw ConfigError("config: patches_per_image must be positive");
    if (c.checkpoint_every < 1) throw ConfigError("config: checkpoint_every must be positive");
    if (c.centers_per_step < 1 || c.neighborhood_n < 1 || c.buffer_capacity < 1)
        throw ConfigError("config: distillation batch sizes must be positive");
    if (c.neighborhood_radius <= 0.0f)
        throw ConfigError("config: neighborhood_radius must be positive");
    if (c.clusters < 1) throw ConfigError("config: clusters must be positive");
    if (c.threads < 1) throw ConfigError("config: threads must be positive");
    scene_config(c).validate();
    field_config(c).validate(c.image_width, c.image_height);
    render_config(c).validate();
    loss_weights(c).validate();
    distill_weights(c).validate();
    grid_config(c).validate();
    aggregate_config(c).validate();
    eval_bands(c);
    if (c.distill_k >= c.feature_dim)
        throw ConfigError("config: distill_k must be smaller than feature_dim");
    if (c.distill_sampling != "3d" && c.distill_sampling != "crop2d")
        throw ConfigError("config: distill_sampling must be 3d or crop2d");
}

}  // namespace fieldsc::cfg
