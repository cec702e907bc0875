// Pipeline drivers behind the CLI verbs: dataset generation, field training,
// distillation, evaluation, and rendering exports. The in-memory functions
// (build_dataset, train_field, distill_field, eval_*) do the work; the cmd_*
// wrappers add directory handling, checkpoints, and report files.
#pragma once

#include <atomic>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <mutex>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <tuple>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "fieldsc/adam.hpp"
#include "fieldsc/checkpoint.hpp"
#include "fieldsc/config.hpp"
#include "fieldsc/dataset.hpp"
#include "fieldsc/distill.hpp"
#include "fieldsc/error.hpp"
#include "fieldsc/eval.hpp"
#include "fieldsc/export.hpp"
#include "fieldsc/field.hpp"
#include "fieldsc/log.hpp"
#include "fieldsc/losses.hpp"
#include "fieldsc/random.hpp"
#include "fieldsc/render.hpp"
#include "fieldsc/scenegen.hpp"
#include "fieldsc/tensor.hpp"

namespace fieldsc::pipe {

using ad::Tensor;
namespace fs = std::filesystem;

// Seed-stream tags so the stages never share a random sequence.
namespace tag {
constexpr std::uint64_t dataset = 0xd5;
constexpr std::uint64_t train = 0x7a;
constexpr std::uint64_t distill = 0xd1;
}  // namespace tag

// ---------------------------------------------------------------------------
// Worker pool: runs fn(0..n-1) on up to `threads` threads. Each index owns
// its output slot, so results are identical to the serial order.

template <class F>
void parallel_for(int n, int threads, F&& fn) {
    if (threads <= 1 || n <= 1) {
        for (int i = 0; i < n; ++i) fn(i);
        return;
    }
    std::atomic<int> next{0};
    std::exception_ptr failure;
    std::mutex failure_mutex;
    auto worker = [&] {
        for (int i = next.fetch_add(1); i < n; i = next.fetch_add(1)) {
            try {
                fn(i);
            } catch (...) {
                std::lock_guard<std::mutex> lock(failure_mutex);
                if (!failure) failure = std::current_exception();
            }
        }
    };
    std::vector<std::thread> pool;
    int workers = std::min(threads, n);
    pool.reserve(static_cast<std::size_t>(workers));
    for (int t = 0; t < workers; ++t) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
    if (failure) std::rethrow_exception(failure);
}

// ---------------------------------------------------------------------------
// Checkpoint packing

inline ckpt::Checkpoint pack_field(const cfg::RunConfig& c, field::FieldParams& p,
                                   std::uint64_t step) {
    ckpt::Checkpoint out;
    out.config_echo = cfg::resolved(c);
    out.step = step;
    for (auto& [name, t] : p.named()) out.add("field/" + name, *t);
    return out;
}

inline field::FieldParams unpack_field(const ckpt::Checkpoint& c, const cfg::RunConfig& rc) {
    Rng dummy(0);
    field::FieldParams p =
        field::FieldParams::init(cfg::field_config(rc), rc.image_width, rc.image_height, dummy);
    for (auto& [name, t] : p.named()) {
        const Tensor& stored = c.get("field/" + name);
        if (stored.shape() != t->shape())
            throw IoError("checkpoint: entry field/" + name +
                          " does not match the configured field dimensions");
        *t = stored;
    }
    return p;
}

inline ckpt::Checkpoint pack_distill(const cfg::RunConfig& c, distill::SegHead& head,
                                     const distill::ClusterCenters& centers, std::uint64_t step) {
    ckpt::Checkpoint out;
    out.config_echo = cfg::resolved(c);
    out.step = step;
    for (auto& [name, t] : head.named()) out.add("distill/" + name, *t);
    out.add("distill/centers_theta", centers.theta);
    Tensor counts = Tensor::zeros({centers.count()});
    for (int i = 0; i < centers.count(); ++i)
        counts.mutable_values()[static_cast<std::size_t>(i)] =
            static_cast<float>(centers.counts[static_cast<std::size_t>(i)]);
    out.add("distill/centers_counts", counts);
    return out;
}

inline std::pair<distill::SegHead, distill::ClusterCenters> unpack_distill(
    const ckpt::Checkpoint& c, const cfg::RunConfig& rc) {
    Rng dummy(0);
    distill::SegHead head =
        distill::SegHead::init(rc.feature_dim, rc.head_hidden, rc.distill_k, dummy);
    for (auto& [name, t] : head.named()) {
        const Tensor& stored = c.get("distill/" + name);
        if (stored.shape() != t->shape())
            throw IoError("checkpoint: entry distill/" + name +
                          " does not match the configured head dimensions");
        *t = stored;
    }
    distill::ClusterCenters centers;
    centers.theta = c.get("distill/centers_theta");
    if (centers.theta.rank() != 2 || centers.theta.extent(0) != rc.distill_k)
        throw IoError("checkpoint: cluster centers do not match the configured distilled width");
    const Tensor& counts = c.get("distill/centers_counts");
    if (counts.rank() != 1 || counts.extent(0) != centers.theta.extent(1))
        throw IoError("checkpoint: cluster count vector does not match the centers");
    for (float v : counts.values())
        centers.counts.push_back(static_cast<std::int64_t>(std::llround(v)));
    return {std::move(head), std::move(centers)};
}

// ---------------------------------------------------------------------------
// Dataset generation

inline data::Dataset build_dataset(const cfg::RunConfig& c) {
    cfg::validate(c);
    data::Dataset ds;
    for (int i = 0; i < scene::kNumClasses; ++i) ds.class_names.push_back(scene::class_name(i));
    scene::SceneConfig sc = cfg::scene_config(c);
    vox::GridConfig grid = cfg::grid_config(c);
    Rng root = Rng(c.seed).fork(tag::dataset);
    scene::Prototypes protos =
        scene::make_prototypes(scene::kNumClasses, c.feature_dim, c.feature_noise, root);
    ds.scenes.resize(static_cast<std::size_t>(c.scenes));
    // Per-scene seeds come from the root stream up front so the worker pool
    // cannot perturb them.
    std::vector<std::uint64_t> seeds(static_cast<std::size_t>(c.scenes));
    for (std::size_t i = 0; i < seeds.size(); ++i)
        seeds[i] = root.fork(i + 1).uniform_int(std::uint64_t{1} << 62) + 1;
    parallel_for(c.scenes, c.threads, [&](int i) {
        ds.scenes[static_cast<std::size_t>(i)] =
            scene::make_scene_sample(seeds[static_cast<std::size_t>(i)], sc, protos, grid);
    });
    return ds;
}

// ---------------------------------------------------------------------------
// Training

struct StepRecord {
    int step = 0;  // 1-based
    losses::LossReport report;
};

struct TrainOutput {
    field::FieldParams params;
    std::vector<StepRecord> history;
};

inline void write_train_csv(std::ostream& os, const std::vector<StepRecord>& rows) {
    os << "step,L_p,L_s,L_f,L_fs,total\n";
    os.precision(7);
    for (const StepRecord& r : rows)
        os << r.step << "," << r.report.photometric << "," << r.report.smoothness << ","
           << r.report.feature << "," << r.report.feat_smooth << "," << r.report.total << "\n";
}

namespace detail {

// Pixel-center (u,v) list for the p x p block of grid cell (gx, gy).
inline void patch_pixels(std::vector<float>& uv, int gx, int gy, int p) {
    for (int dy = 0; dy < p; ++dy)
        for (int dx = 0; dx < p; ++dx) {
            uv.push_back(static_cast<float>(gx * p + dx) + 0.5f);
            uv.push_back(static_cast<float>(gy * p + dy) + 0.5f);
        }
}

// Gathers the ground-truth rgb block for each sampled cell: [B,3,p,p].
inline Tensor gather_image_patches(const Tensor& image, const std::vector<int>& cells, int wp,
                                   int p) {
    int h = image.extent(1), w = image.extent(2);
    int b = static_cast<int>(cells.size());
    Tensor out = Tensor::zeros({b, 3, p, p});
    const auto& src = image.values();
    auto& dst = out.mutable_values();
    std::size_t plane = static_cast<std::size_t>(h) * w;
    for (int i = 0; i < b; ++i) {
        int gx = cells[static_cast<std::size_t>(i)] % wp;
        int gy = cells[static_cast<std::size_t>(i)] / wp;
        for (int ch = 0; ch < 3; ++ch)
            for (int dy = 0; dy < p; ++dy)
                for (int dx = 0; dx < p; ++dx)
                    dst[((static_cast<std::size_t>(i) * 3 + ch) * p + dy) * p + dx] =
                        src[ch * plane + static_cast<std::size_t>(gy * p + dy) * w +
                            static_cast<std::size_t>(gx * p + dx)];
    }
    return out;
}

// Target feature vectors for the sampled cells: [B,D], constants.
inline Tensor gather_feature_cells(const Tensor& feat, const std::vector<int>& cells) {
    int d = feat.extent(0);
    std::size_t n_cells = static_cast<std::size_t>(feat.extent(1)) * feat.extent(2);
    int b = static_cast<int>(cells.size());
    Tensor out = Tensor::zeros({b, d});
    for (int i = 0; i < b; ++i)
        for (int ch = 0; ch < d; ++ch)
            out.mutable_values()[static_cast<std::size_t>(i) * d + ch] =
                feat.values()[ch * n_cells + static_cast<std::size_t>(cells[
                    static_cast<std::size_t>(i)])];
    return out;
}

// All pixels of one target patch valid under a per-pixel mask.
inline std::vector<std::uint8_t> patch_validity(const std::vector<std::uint8_t>& pixel_ok, int b,
                                                int per_patch) {
    std::vector<std::uint8_t> out(static_cast<std::size_t>(b), 1);
    for (int i = 0; i < b; ++i)
        for (int j = 0; j < per_patch; ++j)
            if (!pixel_ok[static_cast<std::size_t>(i) * per_patch + j]) {
                out[static_cast<std::size_t>(i)] = 0;
                break;
            }
    return out;
}

struct BatchPlan {
    int scene = 0;
    std::vector<int> targets;                // view ids rendered this step
    std::vector<int> sources;                // view ids colors are sampled from
    std::vector<std::vector<int>> cells;     // per target: sampled feature cells
};

// Random source/target split (view 0 always conditions the field and stays a
// source) plus the per-target aligned cell sample.
inline BatchPlan plan_step(const cfg::RunConfig& c, int train_scenes, Rng& rng) {
    BatchPlan plan;
    plan.scene = static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(train_scenes)));
    while (plan.targets.empty()) {
        plan.targets.clear();
        plan.sources.assign(1, 0);
        for (int v = 1; v < c.views; ++v)
            (rng.uniform() < 0.5 ? plan.targets : plan.sources).push_back(v);
    }
    int wp = c.image_width / c.patch, hp = c.image_height / c.patch;
    for (std::size_t t = 0; t < plan.targets.size(); ++t) {
        std::vector<int> cells(static_cast<std::size_t>(c.patches_per_image));
        for (auto& cell : cells)
            cell = static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(wp * hp)));
        plan.cells.push_back(std::move(cells));
    }
    return plan;
}

}  // namespace detail

// Per-step diagnostics dumped when the loss leaves the finite range.
inline nlohmann::json describe_batch(const detail::BatchPlan& plan, std::uint64_t scene_seed,
                                     int step, const losses::LossReport& report) {
    nlohmann::json j;
    j["step"] = step;
    j["scene_index"] = plan.scene;
    j["scene_seed"] = scene_seed;
    j["target_views"] = plan.targets;
    j["source_views"] = plan.sources;
    j["cells"] = plan.cells;
    j["L_p"] = report.photometric;
    j["L_s"] = report.smoothness;
    j["L_f"] = report.feature;
    j["L_fs"] = report.feat_smooth;
    j["total"] = report.total;
    return j;
}

// Trains the field on the non-held-out scenes. `on_checkpoint` fires every
// checkpoint_every steps with the current parameters (the final state is
// returned, not fired). A non-finite loss writes a batch dump into dump_dir
// (when nonempty) and aborts.
inline TrainOutput train_field(const cfg::RunConfig& c, const data::Dataset& ds,
                               const std::function<void(int, field::FieldParams&)>& on_checkpoint
                               = {},
                               const fs::path& dump_dir = {}) {
    cfg::validate(c);
    int train_scenes = static_cast<int>(ds.scenes.size()) - c.holdout;
    if (c.train_steps > 0 && train_scenes < 1)
        throw ConfigError("train: no scenes left after the holdout split");

    field::FieldConfig fcfg = cfg::field_config(c);
    render::RenderConfig rcfg = cfg::render_config(c);
    losses::LossWeights weights = cfg::loss_weights(c);
    Rng rng = Rng(c.seed).fork(tag::train);

    TrainOutput out;
    out.params = field::FieldParams::init(fcfg, c.image_width, c.image_height, rng);
    if (!c.fbar_enabled)
        for (auto& x : out.params.f_bar.mutable_values()) x = 0.0f;
    ad::AdamState adam;
    ad::AdamConfig acfg;
    acfg.beta1 = c.adam_beta1;
    acfg.beta2 = c.adam_beta2;
    acfg.eps = c.adam_eps;

    int p = c.patch, per_patch = p * p;
    int wp = c.image_width / p;

    for (int step = 0; step < c.train_steps; ++step) {
        acfg.lr = step >= c.train_steps / 2 ? c.lr * 0.1f : c.lr;
        detail::BatchPlan plan = detail::plan_step(c, train_scenes, rng);
        const scene::SceneSample& sample = ds.scenes[static_cast<std::size_t>(plan.scene)];
        const scene::ViewData& input = sample.views[0];

        // Constant per-target data can be prepared before any tape work.
        std::vector<Tensor> gt_patches(plan.targets.size()), gt_cells(plan.targets.size());
        std::vector<std::vector<float>> uv(plan.targets.size());
        parallel_for(static_cast<int>(plan.targets.size()),
                     c.train_parallel ? c.threads : 1, [&](int t) {
                         const auto& cells = plan.cells[static_cast<std::size_t>(t)];
                         const scene::ViewData& view =
                             sample.views[static_cast<std::size_t>(
                                 plan.targets[static_cast<std::size_t>(t)])];
                         gt_patches[static_cast<std::size_t>(t)] =
                             detail::gather_image_patches(view.image, cells, wp, p);
                         gt_cells[static_cast<std::size_t>(t)] =
                             detail::gather_feature_cells(view.feat, cells);
                         uv[static_cast<std::size_t>(t)].reserve(cells.size() * 2 *
                                                                 static_cast<std::size_t>(
                                                                     per_patch));
                         for (int cell : cells)
                             detail::patch_pixels(uv[static_cast<std::size_t>(t)], cell % wp,
                                                  cell / wp, p);
                     });

        std::vector<render::View> sources;
        for (int s : plan.sources)
            sources.push_back({sample.views[static_cast<std::size_t>(s)].image,
                               sample.views[static_cast<std::size_t>(s)].pose, sample.k});

        ad::Tape tape;
        field::FieldParams wp_params = out.params.watched(tape);
        Tensor e_rows = field::encode_image_rows(input.image, fcfg, wp_params);
        Tensor kernel = losses::downsample_kernel(wp_params.down_logits, p);
        Tensor kernel_b = ad::reshape(kernel, {1, per_patch, 1});
        Tensor fbar_rows = ad::permute(
            ad::reshape(wp_params.f_bar,
                        {fcfg.target_dim, wp * (c.image_height / p)}),
            {1, 0});

        losses::LossTerms terms;
        bool first = true;
        float inv_targets = 1.0f / static_cast<float>(plan.targets.size());
        for (std::size_t t = 0; t < plan.targets.size(); ++t) {
            int b = c.patches_per_image;
            const scene::ViewData& view =
                sample.views[static_cast<std::size_t>(plan.targets[t])];
            render::PixelRender pr =
                render::render_pixels(uv[t], view.pose, sample.k, e_rows, input.pose, sample.k,
                                      sources, fcfg, wp_params, rcfg);

            // photometric: one [B,3,p,p] reconstruction per source view
            std::vector<Tensor> recon;
            std::vector<std::vector<std::uint8_t>> valid;
            for (std::size_t s = 0; s < sources.size(); ++s) {
                recon.push_back(ad::permute(ad::reshape(pr.colors[s], {b, p, p, 3}),
                                            {0, 3, 1, 2}));
                valid.push_back(detail::patch_validity(pr.color_valid[s], b, per_patch));
            }
            Tensor l_p = losses::photometric_loss(gt_patches[t], recon, valid, weights).loss;

            // depth smoothness on normalized inverse depth
            Tensor depth = ad::add(ad::reshape(pr.depth, {b, p, p}), Tensor::scalar(1e-6f));
            Tensor disp = losses::normalize_inverse_depth_batch(depth);
            Tensor l_s = losses::edge_aware_smoothness_batch(
                ad::reshape(disp, {b, 1, p, p}), gt_patches[t]);

            // feature reconstruction: learned p*p pooling to one cell per
            // patch, plus the per-cell constant decomposition
            Tensor up = field::up_project(pr.feat_low, wp_params);  // [B*p*p, D]
            Tensor up_b = ad::reshape(up, {b, per_patch, fcfg.target_dim});
            Tensor pooled = ad::sum(ad::mul(up_b, kernel_b), 1);  // [B,D]
            Tensor pred_rows = ad::add(pooled, ad::gather_rows(fbar_rows, plan.cells[t]));
            Tensor l_f = losses::feature_loss_rows(gt_cells[t], pred_rows);

            // feature smoothness at pixel level
            Tensor feat_img = ad::permute(
                ad::reshape(up, {b, p, p, fcfg.target_dim}), {0, 3, 1, 2});
            Tensor l_fs = losses::edge_aware_smoothness_batch(feat_img, gt_patches[t]);

            if (first) {
                terms = {l_p, l_s, l_f, l_fs};
                first = false;
            } else {
                terms.photometric = ad::add(terms.photometric, l_p);
                terms.smoothness = ad::add(terms.smoothness, l_s);
                terms.feature = ad::add(terms.feature, l_f);
                terms.feat_smooth = ad::add(terms.feat_smooth, l_fs);
            }
        }
        if (plan.targets.size() > 1) {
            terms.photometric = ad::scale(terms.photometric, inv_targets);
            terms.smoothness = ad::scale(terms.smoothness, inv_targets);
            terms.feature = ad::scale(terms.feature, inv_targets);
            terms.feat_smooth = ad::scale(terms.feat_smooth, inv_targets);
        }

        losses::LossReport report;
        Tensor total = losses::total_loss(terms, weights, &report);
        if (!std::isfinite(report.total)) {
            nlohmann::json dump = describe_batch(plan, sample.seed, step + 1, report);
            if (!dump_dir.empty()) {
                fs::create_directories(dump_dir);
                fs::path dump_path =
                    dump_dir / ("dump_step_" + std::to_string(step + 1) + ".json");
                std::ofstream os(dump_path);
                os << dump.dump(2) << "\n";
                log::error("train: non-finite loss, batch dump at ", dump_path.string());
            }
            throw DomainError("train: non-finite loss at step " + std::to_string(step + 1) +
                              ": " + dump.dump());
        }

        ad::Gradients grads = tape.backward(total);
        std::vector<std::pair<std::string, Tensor*>> named = out.params.named();
        std::vector<std::pair<std::string, Tensor*>> watched = wp_params.named();
        std::vector<Tensor*> params;
        std::vector<const std::vector<float>*> gptrs;
        for (std::size_t i = 0; i < named.size(); ++i) {
            // a disabled constant map stays frozen at zero
            if (!c.fbar_enabled && named[i].first == "f_bar") continue;
            params.push_back(named[i].second);
            gptrs.push_back(&grads.at(*watched[i].second));
        }
        ad::adam_step(params, gptrs, adam, acfg);

        out.history.push_back({step + 1, report});
        if (on_checkpoint && (step + 1) % c.checkpoint_every == 0 &&
            step + 1 < c.train_steps)
            on_checkpoint(step + 1, out.params);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Distillation

struct DistillStepRecord {
    int step = 0;
    distill::DistillReport report;
    float total = 0.0f;
};

struct DistillOutput {
    distill::SegHead head;
    distill::ClusterCenters centers;
    std::vector<DistillStepRecord> history;
    std::size_t buffer_entries = 0;  // final FIFO occupancy
    int skipped_centers = 0;         // centers whose neighborhood left the frustum
};

inline void write_distill_csv(std::ostream& os, const std::vector<DistillStepRecord>& rows) {
    os << "step,L_self,L_knn,L_rand,total\n";
    os.precision(7);
    for (const DistillStepRecord& r : rows)
        os << r.step << "," << r.report.self_term << "," << r.report.knn_term << ","
           << r.report.rand_term << "," << r.total << "\n";
}

namespace detail {

// Frozen-field context reused across distillation steps for one scene.
struct SceneContext {
    Tensor e_rows;
    render::SurfacePoints surface;
};

}  // namespace detail

// Distills the frozen field into the segmentation head and cluster centers.
// Features never propagate gradients back into the field parameters.
inline DistillOutput distill_field(const cfg::RunConfig& c, const data::Dataset& ds,
                                   const field::FieldParams& params) {
    cfg::validate(c);
    int train_scenes = static_cast<int>(ds.scenes.size()) - c.holdout;
    if (train_scenes < 1) throw ConfigError("distill: no scenes left after the holdout split");

    field::FieldConfig fcfg = cfg::field_config(c);
    render::RenderConfig rcfg = cfg::render_config(c);
    distill::DistillWeights weights = cfg::distill_weights(c);
    Rng rng = Rng(c.seed).fork(tag::distill);

    DistillOutput out;
    out.head = distill::SegHead::init(c.feature_dim, c.head_hidden, c.distill_k, rng);
    distill::FeatureBuffer buffer(static_cast<std::size_t>(c.buffer_capacity));
    ad::AdamState adam;
    ad::AdamConfig acfg;
    acfg.lr = c.distill_lr;
    acfg.beta1 = c.adam_beta1;
    acfg.beta2 = c.adam_beta2;
    acfg.eps = c.adam_eps;

    std::map<int, detail::SceneContext> contexts;
    auto context = [&](int scene) -> detail::SceneContext& {
        auto it = contexts.find(scene);
        if (it != contexts.end()) return it->second;
        const scene::SceneSample& sample = ds.scenes[static_cast<std::size_t>(scene)];
        detail::SceneContext ctx;
        ctx.e_rows = field::encode_image_rows(sample.views[0].image, fcfg, params);
        ctx.surface = render::expected_surface_points(sample.views[0].pose, sample.k, ctx.e_rows,
                                                      sample.views[0].pose, sample.k, fcfg,
                                                      params, rcfg);
        return contexts.emplace(scene, std::move(ctx)).first->second;
    };

    auto density_fn = [&](int scene) {
        return [&, scene](const std::vector<geo::Vec3>& pts) {
            const detail::SceneContext& ctx = contexts.at(scene);
            const scene::SceneSample& sample = ds.scenes[static_cast<std::size_t>(scene)];
            field::QueryResult q = field::query_field_low(ctx.e_rows, pts, sample.views[0].pose,
                                                          sample.k, fcfg, params);
            std::vector<float> sig(q.sigma.values());
            for (std::size_t i = 0; i < sig.size(); ++i)
                if (!q.valid[i]) sig[i] = 0.0f;
            return sig;
        };
    };

    auto batch_at = [&](int scene, geo::Vec3 center, Rng& r) {
        const detail::SceneContext& ctx = contexts.at(scene);
        const scene::SceneSample& sample = ds.scenes[static_cast<std::size_t>(scene)];
        std::vector<geo::Vec3> pts =
            distill::sample_neighborhood(center, density_fn(scene), c.neighborhood_n,
                                         c.neighborhood_radius, c.sigma_min, r);
        return distill::build_feature_batch(pts, ctx.e_rows, sample.views[0].pose, sample.k,
                                            fcfg, params, scene, center);
    };

    // Flat 2D alternative: both members of a pair come from half-size crops
    // (corners + center) of the input view's visible surface instead of 3D
    // neighborhoods.
    bool crops = c.distill_sampling == "crop2d";
    auto crop_batch = [&](int scene, Rng& r) {
        const detail::SceneContext& ctx = contexts.at(scene);
        const scene::SceneSample& sample = ds.scenes[static_cast<std::size_t>(scene)];
        int w = sample.k.width, h = sample.k.height;
        int cw = w / 2, ch = h / 2;
        const int corners[5][2] = {
            {0, 0}, {w - cw, 0}, {0, h - ch}, {w - cw, h - ch}, {(w - cw) / 2, (h - ch) / 2}};

        std::vector<std::size_t> inside;
        for (int attempt = 0; attempt < 8 && inside.empty(); ++attempt) {
            const int* at = corners[r.uniform_int(5)];
            for (int y = at[1]; y < at[1] + ch; ++y)
                for (int x = at[0]; x < at[0] + cw; ++x) {
                    std::size_t i = static_cast<std::size_t>(y) * w + x;
                    if (ctx.surface.valid[i]) inside.push_back(i);
                }
        }
        if (inside.empty())  // nothing visible in any crop: fall back to the full view
            for (std::size_t i = 0; i < ctx.surface.valid.size(); ++i)
                if (ctx.surface.valid[i]) inside.push_back(i);
        if (inside.empty()) throw DomainError("distill: no visible surface to crop");

        std::vector<geo::Vec3> pts;
        geo::Vec3 mean{0, 0, 0};
        for (int i = 0; i < c.neighborhood_n; ++i) {
            geo::Vec3 pt = ctx.surface.points[inside[r.uniform_int(inside.size())]];
            pts.push_back(pt);
            mean = mean + pt;
        }
        mean = mean * (1.0f / static_cast<float>(c.neighborhood_n));
        return distill::build_feature_batch(pts, ctx.e_rows, sample.views[0].pose, sample.k,
                                            fcfg, params, scene, mean);
    };
    auto draw_pair = [&](int scene, geo::Vec3 center, Rng& r) {
        std::pair<distill::FeatureBatch, distill::FeatureBatch> pair;
        if (crops) {
            pair.first = crop_batch(scene, r);
            pair.second = crop_batch(scene, r);
        } else {
            pair.first = batch_at(scene, center, r);
            pair.second = batch_at(scene, center, r);
        }
        return pair;
    };

    // Cluster centers start from one warm-up batch under the fresh head, so
    // a zero-step run still produces a usable (if untrained) checkpoint.
    {
        detail::SceneContext& ctx = context(0);
        Rng warm = rng.fork(0x11);
        std::vector<geo::Vec3> centers_pts = distill::sample_center_points(
            ctx.surface.points, ctx.surface.depth, ctx.surface.valid,
            std::max(c.clusters, c.centers_per_step), warm);
        std::vector<Tensor> feats;
        for (geo::Vec3 pt : centers_pts)
            feats.push_back(crops ? crop_batch(0, warm).features
                                  : batch_at(0, pt, warm).features);
        Tensor all = feats[0];
        for (std::size_t i = 1; i < feats.size(); ++i) all = ad::concat(all, feats[i], 1);
        Tensor z = ad::permute(
            distill::detail::normalize_rows(out.head.apply(ad::permute(all, {1, 0}))), {1, 0});
        out.centers = distill::init_centers(z, c.clusters, warm);
    }

    for (int step = 0; step < c.distill_steps; ++step) {
        int scene = static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(train_scenes)));
        detail::SceneContext& ctx = context(scene);
        std::vector<geo::Vec3> centers_pts(static_cast<std::size_t>(c.centers_per_step));
        if (!crops)
            centers_pts = distill::sample_center_points(
                ctx.surface.points, ctx.surface.depth, ctx.surface.valid, c.centers_per_step,
                rng);

        distill::DistillReport step_report;
        float step_total = 0.0f;
        int used = 0;
        for (geo::Vec3 center : centers_pts) {
            distill::FeatureBatch fx, fx_self;
            try {
                std::tie(fx, fx_self) = draw_pair(scene, center, rng);
            } catch (const DomainError&) {
                // The neighborhood strayed outside the input frustum; drop this
                // center rather than aborting a long run.
                ++out.skipped_centers;
                continue;
            }
            std::optional<distill::FeatureBatch> knn, random;
            if (buffer.size() >= static_cast<std::size_t>(weights.k))
                knn = distill::buffer_lookup(buffer, fx, distill::LookupMode::knn, weights.k,
                                             rng);
            if (buffer.size() > 0)
                random =
                    distill::buffer_lookup(buffer, fx, distill::LookupMode::random, 0, rng);

            ad::Tape tape;
            distill::SegHead watched = out.head.watched(tape);
            distill::DistillReport report;
            Tensor loss = distill::distillation_loss(fx, fx_self, knn, random, watched, weights,
                                                     &report);
            float total = loss.item();
            if (!std::isfinite(total))
                throw DomainError("distill: non-finite loss at step " +
                                  std::to_string(step + 1));
            ad::Gradients grads = tape.backward(loss);
            std::vector<Tensor*> hp = out.head.all();
            std::vector<Tensor*> wp = watched.all();
            std::vector<const std::vector<float>*> gptrs;
            for (Tensor* w : wp) gptrs.push_back(&grads.at(*w));
            ad::adam_step(hp, gptrs, adam, acfg);

            // k-means on the freshly distilled features, then archive the batch
            Tensor z = ad::permute(
                distill::detail::normalize_rows(
                    out.head.apply(ad::permute(fx.features, {1, 0}))),
                {1, 0});
            distill::kmeans_update(out.centers, z);
            buffer.push(std::move(fx));

            step_report.self_term += report.self_term;
            step_report.knn_term += report.knn_term;
            step_report.rand_term += report.rand_term;
            step_report.knn_present = step_report.knn_present || report.knn_present;
            step_report.rand_present = step_report.rand_present || report.rand_present;
            step_total += total;
            ++used;
        }
        float inv = used > 0 ? 1.0f / static_cast<float>(used) : 0.0f;
        step_report.self_term *= inv;
        step_report.knn_term *= inv;
        step_report.rand_term *= inv;
        out.history.push_back({step + 1, step_report, step_total * inv});
    }
    out.buffer_entries = buffer.size();
    return out;
}

// ---------------------------------------------------------------------------
// Evaluation over the held-out split

inline std::vector<int> holdout_indices(const cfg::RunConfig& c, const data::Dataset& ds) {
    if (c.holdout < 1) throw ConfigError("eval: the held-out split is empty");
    if (static_cast<int>(ds.scenes.size()) < c.holdout)
        throw ConfigError("eval: dataset has fewer scenes than the holdout");
    std::vector<int> idx;
    for (int i = static_cast<int>(ds.scenes.size()) - c.holdout;
         i < static_cast<int>(ds.scenes.size()); ++i)
        idx.push_back(i);
    return idx;
}

struct SscEval {
    eval::SSCReport report;                 // merged over the split
    std::vector<eval::SSCReport> per_scene; // one entry per held-out scene
    std::vector<int> matching;
};

inline SscEval eval_ssc(const cfg::RunConfig& c, const data::Dataset& ds,
                        const field::FieldParams& params, const distill::SegHead& head,
                        const distill::ClusterCenters& centers) {
    cfg::validate(c);
    std::vector<int> split = holdout_indices(c, ds);
    field::FieldConfig fcfg = cfg::field_config(c);
    vox::GridConfig grid = cfg::grid_config(c);
    eval::AggregateConfig agg = cfg::aggregate_config(c);
    std::vector<eval::RangeBand> bands = cfg::eval_bands(c);
    int classes = std::max(c.clusters, scene::kNumClasses);

    std::vector<vox::VoxelGrid> preds(split.size());
    std::vector<Tensor> e_rows(split.size());
    parallel_for(static_cast<int>(split.size()), c.threads, [&](int i) {
        const scene::SceneSample& sample =
            ds.scenes[static_cast<std::size_t>(split[static_cast<std::size_t>(i)])];
        e_rows[static_cast<std::size_t>(i)] =
            field::encode_image_rows(sample.views[0].image, fcfg, params);
        eval::VolumeSampler sampler =
            eval::make_field_sampler(e_rows[static_cast<std::size_t>(i)], sample.views[0].pose,
                                     sample.k, fcfg, params, head, centers);
        preds[static_cast<std::size_t>(i)] = eval::aggregate_voxels(
            sampler, c.clusters, sample.views[0].pose, sample.k, grid, agg);
    });

    // One global matching from overlap pooled across the split.
    std::vector<int> pooled_pred, pooled_gt;
    for (std::size_t i = 0; i < split.size(); ++i) {
        const vox::VoxelGrid& gt = ds.scenes[static_cast<std::size_t>(split[i])].vox_gt;
        const vox::VoxelGrid& pd = preds[i];
        for (std::size_t v = 0; v < pd.occupied.size(); ++v)
            if (pd.occupied[v] && gt.occupied[v] && pd.observed[v] && gt.observed[v]) {
                pooled_pred.push_back(pd.cls[v]);
                pooled_gt.push_back(gt.cls[v]);
            }
    }
    SscEval out;
    out.matching = eval::match_by_overlap(eval::overlap_counts(pooled_pred, pooled_gt, classes));

    for (std::size_t i = 0; i < split.size(); ++i) {
        const scene::SceneSample& sample = ds.scenes[static_cast<std::size_t>(split[i])];
        out.per_scene.push_back(eval::ssc_metrics(preds[i], sample.vox_gt, out.matching, bands,
                                                  sample.views[0].pose.center()));
        out.report = i == 0 ? out.per_scene.back() : eval::merge(out.report, out.per_scene.back());
    }
    return out;
}

inline eval::Seg2dReport eval_seg2d(const cfg::RunConfig& c, const data::Dataset& ds,
                                    const field::FieldParams& params,
                                    const distill::SegHead& head,
                                    const distill::ClusterCenters& centers) {
    cfg::validate(c);
    std::vector<int> split = holdout_indices(c, ds);
    field::FieldConfig fcfg = cfg::field_config(c);
    render::RenderConfig rcfg = cfg::render_config(c);
    int classes = std::max(c.clusters, scene::kNumClasses);

    // Predicted and ground-truth ids across every held-out view, flattened.
    std::vector<std::vector<float>> pred_ids(split.size()), gt_ids(split.size());
    parallel_for(static_cast<int>(split.size()), c.threads, [&](int i) {
        const scene::SceneSample& sample =
            ds.scenes[static_cast<std::size_t>(split[static_cast<std::size_t>(i)])];
        Tensor e = field::encode_image_rows(sample.views[0].image, fcfg, params);
        for (const scene::ViewData& view : sample.views) {
            std::vector<float> uv;
            uv.reserve(static_cast<std::size_t>(sample.k.width) * sample.k.height * 2);
            for (int y = 0; y < sample.k.height; ++y)
                for (int x = 0; x < sample.k.width; ++x) {
                    uv.push_back(static_cast<float>(x) + 0.5f);
                    uv.push_back(static_cast<float>(y) + 0.5f);
                }
            render::PixelRender pr = render::render_pixels(
                uv, view.pose, sample.k, e, sample.views[0].pose, sample.k, {}, fcfg, params,
                rcfg);
            Tensor rows = ad::detach(field::up_project(pr.feat_low, params));
            Tensor probs = distill::probe_rows(rows, head, centers);
            int n = probs.extent(0), k = probs.extent(1);
            for (int px = 0; px < n; ++px) {
                int best = 0;
                for (int cl = 1; cl < k; ++cl)
                    if (probs.values()[static_cast<std::size_t>(px) * k + cl] >
                        probs.values()[static_cast<std::size_t>(px) * k + best])
                        best = cl;
                pred_ids[static_cast<std::size_t>(i)].push_back(static_cast<float>(best));
            }
            for (float s : view.sem.values())
                gt_ids[static_cast<std::size_t>(i)].push_back(s);
        }
    });

    std::vector<float> pred_all, gt_all;
    for (std::size_t i = 0; i < split.size(); ++i) {
        pred_all.insert(pred_all.end(), pred_ids[i].begin(), pred_ids[i].end());
        gt_all.insert(gt_all.end(), gt_ids[i].begin(), gt_ids[i].end());
    }
    int total = static_cast<int>(pred_all.size());
    Tensor pred({total}, std::move(pred_all));
    Tensor gt({total}, std::move(gt_all));

    std::vector<int> pred_int, gt_int;
    for (float v : pred.values()) pred_int.push_back(static_cast<int>(std::lround(v)));
    for (float v : gt.values()) gt_int.push_back(static_cast<int>(std::lround(v)));
    std::vector<int> matching =
        eval::match_by_overlap(eval::overlap_counts(pred_int, gt_int, classes));
    return eval::seg2d_metrics(pred, gt, matching);
}

struct MvcEval {
    eval::MvcReport field_row;   // rendered feature maps
    eval::MvcReport target_row;  // raw 2D target features
    long long pairs = 0;
};

inline MvcEval eval_mvc(const cfg::RunConfig& c, const data::Dataset& ds,
                        const field::FieldParams& params) {
    cfg::validate(c);
    std::vector<int> split = holdout_indices(c, ds);
    field::FieldConfig fcfg = cfg::field_config(c);
    render::RenderConfig rcfg = cfg::render_config(c);

    struct Accum {
        double l1 = 0, l2 = 0, cos = 0;
        long long pixels = 0;
        long long pairs = 0;
        void take(const std::optional<eval::MvcReport>& r) {
            if (!r || r->pixels == 0) return;
            double n = static_cast<double>(r->pixels);
            l1 += r->l1 * n;
            l2 += r->l2 * n;
            cos += r->cos * n;
            pixels += r->pixels;
            ++pairs;
        }
        eval::MvcReport report() const {
            eval::MvcReport r;
            r.pixels = pixels;
            double n = pixels > 0 ? static_cast<double>(pixels) : 1.0;
            r.l1 = l1 / n;
            r.l2 = l2 / n;
            r.cos = pixels > 0 ? cos / n : 0.0;
            return r;
        }
    };
    std::vector<Accum> field_acc(split.size()), target_acc(split.size());

    parallel_for(static_cast<int>(split.size()), c.threads, [&](int i) {
        const scene::SceneSample& sample =
            ds.scenes[static_cast<std::size_t>(split[static_cast<std::size_t>(i)])];
        Tensor e = field::encode_image_rows(sample.views[0].image, fcfg, params);
        int h = sample.k.height, w = sample.k.width, d = fcfg.target_dim;
        int views = static_cast<int>(sample.views.size());

        // one rendered feature image per view, conditioned on view 0
        std::vector<Tensor> rendered;
        for (const scene::ViewData& view : sample.views) {
            std::vector<float> uv;
            uv.reserve(static_cast<std::size_t>(w) * h * 2);
            for (int y = 0; y < h; ++y)
                for (int x = 0; x < w; ++x) {
                    uv.push_back(static_cast<float>(x) + 0.5f);
                    uv.push_back(static_cast<float>(y) + 0.5f);
                }
            render::PixelRender pr = render::render_pixels(
                uv, view.pose, sample.k, e, sample.views[0].pose, sample.k, {}, fcfg, params,
                rcfg);
            Tensor rows = ad::detach(field::up_project(pr.feat_low, params));  // [H*W, D]
            rendered.push_back(ad::permute(ad::reshape(rows, {h, w, d}), {2, 0, 1}));
        }

        for (int a = 0; a < views; ++a)
            for (int b = 0; b < views; ++b) {
                if (a == b) continue;
                const Tensor& corr = sample.corr[static_cast<std::size_t>(
                    scene::corr_index(a, b, views))];
                field_acc[static_cast<std::size_t>(i)].take(eval::mvc_metrics(
                    rendered[static_cast<std::size_t>(a)], rendered[static_cast<std::size_t>(b)],
                    corr));
                target_acc[static_cast<std::size_t>(i)].take(eval::mvc_metrics(
                    sample.views[static_cast<std::size_t>(a)].feat,
                    sample.views[static_cast<std::size_t>(b)].feat, corr));
            }
    });

    Accum field_total, target_total;
    for (std::size_t i = 0; i < split.size(); ++i) {
        field_total.l1 += field_acc[i].l1;
        field_total.l2 += field_acc[i].l2;
        field_total.cos += field_acc[i].cos;
        field_total.pixels += field_acc[i].pixels;
        field_total.pairs += field_acc[i].pairs;
        target_total.l1 += target_acc[i].l1;
        target_total.l2 += target_acc[i].l2;
        target_total.cos += target_acc[i].cos;
        target_total.pixels += target_acc[i].pixels;
        target_total.pairs += target_acc[i].pairs;
    }
    MvcEval out;
    out.field_row = field_total.report();
    out.target_row = target_total.report();
    out.pairs = field_total.pairs;
    return out;
}

// ---------------------------------------------------------------------------
// Rendering exports

// Depth PGM, feature PCA PPM, and a surface point cloud for one (scene,
// view). Class colors need the distilled head; without one the cloud is
// uniform gray.
inline void render_view_exports(const cfg::RunConfig& c, const data::Dataset& ds,
                                const field::FieldParams& params,
                                const distill::SegHead* head,
                                const distill::ClusterCenters* centers, int scene, int view,
                                const fs::path& out_dir) {
    cfg::validate(c);
    if (scene < 0 || scene >= static_cast<int>(ds.scenes.size()))
        throw DomainError("render: scene index out of range");
    const scene::SceneSample& sample = ds.scenes[static_cast<std::size_t>(scene)];
    if (view < 0 || view >= static_cast<int>(sample.views.size()))
        throw DomainError("render: view index out of range");

    field::FieldConfig fcfg = cfg::field_config(c);
    render::RenderConfig rcfg = cfg::render_config(c);
    Tensor e = field::encode_image_rows(sample.views[0].image, fcfg, params);
    const geo::Pose& pose = sample.views[static_cast<std::size_t>(view)].pose;

    render::SurfacePoints surf = render::expected_surface_points(
        pose, sample.k, e, sample.views[0].pose, sample.k, fcfg, params, rcfg);

    std::ostringstream stem;
    stem << "scene" << scene << "_view" << view;
    fs::create_directories(out_dir);
    viz::write_depth_pgm(out_dir / (stem.str() + "_depth.pgm"), surf.depth, sample.k.width,
                         sample.k.height, rcfg.near, rcfg.far);

    std::vector<float> uv;
    for (int y = 0; y < sample.k.height; ++y)
        for (int x = 0; x < sample.k.width; ++x) {
            uv.push_back(static_cast<float>(x) + 0.5f);
            uv.push_back(static_cast<float>(y) + 0.5f);
        }
    render::PixelRender pr = render::render_pixels(uv, pose, sample.k, e, sample.views[0].pose,
                                                   sample.k, {}, fcfg, params, rcfg);
    Tensor rows = ad::detach(field::up_project(pr.feat_low, params));
    Tensor feat_img = ad::permute(
        ad::reshape(rows, {sample.k.height, sample.k.width, fcfg.target_dim}), {2, 0, 1});
    viz::write_feature_ppm(out_dir / (stem.str() + "_featpca.ppm"), feat_img);

    std::vector<viz::PlyVertex> verts;
    std::optional<Tensor> probs;
    if (head && centers) probs = distill::probe_rows(rows, *head, *centers);
    for (std::size_t i = 0; i < surf.points.size(); ++i) {
        if (!surf.valid[i]) continue;
        viz::PlyVertex v;
        v.p = surf.points[i];
        if (probs) {
            int k = probs->extent(1), best = 0;
            for (int cl = 1; cl < k; ++cl)
                if (probs->values()[i * static_cast<std::size_t>(k) + cl] >
                    probs->values()[i * static_cast<std::size_t>(k) + best])
                    best = cl;
            auto rgbv = viz::class_color(best);
            v.r = rgbv[0];
            v.g = rgbv[1];
            v.b = rgbv[2];
        } else {
            v.r = v.g = v.b = 160;
        }
        verts.push_back(v);
    }
    viz::write_ply(out_dir / (stem.str() + "_surface.ply"), verts);
}

// ---------------------------------------------------------------------------
// Directory-level commands

namespace detail {

inline void prepare_out_dir(const fs::path& out, bool force) {
    if (fs::exists(out)) {
        if (!force)
            throw IoError("output path " + out.string() + " exists; pass --force to replace it");
        fs::remove_all(out);
    }
    fs::create_directories(out);
}

inline void log_config(const cfg::RunConfig& c, const fs::path& out) {
    std::string text = cfg::resolved(c);
    log::info("resolved configuration:\n", text);
    std::ofstream os(out / "config_resolved.cfg");
    if (!os) throw IoError("cannot write " + (out / "config_resolved.cfg").string());
    os << text;
}

}  // namespace detail

inline void cmd_generate(const cfg::RunConfig& c, const fs::path& out, bool force) {
    cfg::validate(c);
    detail::prepare_out_dir(out, force);
    detail::log_config(c, out);
    data::Dataset ds = build_dataset(c);
    data::write_dataset(ds, out);
    log::info("generate: wrote ", ds.scenes.size(), " scenes to ", out.string());
}

inline void cmd_train(const cfg::RunConfig& c, const fs::path& dataset_dir, const fs::path& out,
                      bool force) {
    cfg::validate(c);
    data::Dataset ds = data::read_dataset(dataset_dir);
    detail::prepare_out_dir(out, force);
    detail::log_config(c, out);

    auto on_checkpoint = [&](int step, field::FieldParams& p) {
        char name[64];
        std::snprintf(name, sizeof(name), "field_step_%06d.ckpt", step);
        ckpt::save_checkpoint(out / name, pack_field(c, p, static_cast<std::uint64_t>(step)));
        log::info("train: checkpoint at step ", step);
    };
    TrainOutput trained = train_field(c, ds, on_checkpoint, out);

    std::ofstream csv(out / "train_log.csv");
    if (!csv) throw IoError("cannot write " + (out / "train_log.csv").string());
    write_train_csv(csv, trained.history);
    ckpt::save_checkpoint(out / "field.ckpt",
                          pack_field(c, trained.params,
                                     static_cast<std::uint64_t>(c.train_steps)));
    log::info("train: finished ", c.train_steps, " steps");
}

inline void cmd_distill(const cfg::RunConfig& c, const fs::path& dataset_dir,
                        const fs::path& field_ckpt, const fs::path& out, bool force) {
    cfg::validate(c);
    data::Dataset ds = data::read_dataset(dataset_dir);
    field::FieldParams params = unpack_field(ckpt::load_checkpoint(field_ckpt), c);
    detail::prepare_out_dir(out, force);
    detail::log_config(c, out);

    DistillOutput distilled = distill_field(c, ds, params);
    std::ofstream csv(out / "distill_log.csv");
    if (!csv) throw IoError("cannot write " + (out / "distill_log.csv").string());
    write_distill_csv(csv, distilled.history);
    ckpt::save_checkpoint(out / "distill.ckpt",
                          pack_distill(c, distilled.head, distilled.centers,
                                       static_cast<std::uint64_t>(c.distill_steps)));
    log::info("distill: finished ", c.distill_steps, " steps");
}

inline nlohmann::json cmd_eval(const cfg::RunConfig& c, const fs::path& dataset_dir,
                               const fs::path& field_ckpt, const fs::path& distill_ckpt,
                               const std::string& task, const fs::path& out, bool force) {
    cfg::validate(c);
    data::Dataset ds = data::read_dataset(dataset_dir);
    field::FieldParams params = unpack_field(ckpt::load_checkpoint(field_ckpt), c);
    detail::prepare_out_dir(out, force);
    detail::log_config(c, out);

    nlohmann::json j;
    j["task"] = task;
    j["holdout_scenes"] = c.holdout;
    if (task == "ssc") {
        auto [head, centers] = unpack_distill(ckpt::load_checkpoint(distill_ckpt), c);
        SscEval r = eval_ssc(c, ds, params, head, centers);
        j["matching"] = r.matching;
        j["report"] = eval::to_json(r.report);
        std::ofstream csv(out / "eval_ssc.csv");
        if (!csv) throw IoError("cannot write eval_ssc.csv");
        eval::write_ssc_csv(r.report, csv);
    } else if (task == "seg2d") {
        auto [head, centers] = unpack_distill(ckpt::load_checkpoint(distill_ckpt), c);
        eval::Seg2dReport r = eval_seg2d(c, ds, params, head, centers);
        j["report"] = eval::to_json(r);
        std::ofstream csv(out / "eval_seg2d.csv");
        if (!csv) throw IoError("cannot write eval_seg2d.csv");
        csv << "accuracy,miou,pixels\n"
            << r.accuracy << "," << r.miou << "," << r.pixels << "\n";
    } else if (task == "mvc") {
        MvcEval r = eval_mvc(c, ds, params);
        j["pairs"] = r.pairs;
        j["field"] = eval::to_json(r.field_row);
        j["targets"] = eval::to_json(r.target_row);
        std::ofstream csv(out / "eval_mvc.csv");
        if (!csv) throw IoError("cannot write eval_mvc.csv");
        csv << "method,l1,l2,cos,pixels\n";
        csv << "field," << r.field_row.l1 << "," << r.field_row.l2 << "," << r.field_row.cos
            << "," << r.field_row.pixels << "\n";
        csv << "targets," << r.target_row.l1 << "," << r.target_row.l2 << ","
            << r.target_row.cos << "," << r.target_row.pixels << "\n";
    } else {
        throw ConfigError("eval: unknown task '" + task + "' (expected ssc, seg2d, or mvc)");
    }

    std::ofstream js(out / ("eval_" + task + ".json"));
    if (!js) throw IoError("cannot write the evaluation JSON");
    js << j.dump(2) << "\n";
    return j;
}

inline void cmd_render(const cfg::RunConfig& c, const fs::path& dataset_dir,
                       const fs::path& field_ckpt, const fs::path& distill_ckpt, int scene,
                       int view, const fs::path& out, bool force) {
    cfg::validate(c);
    data::Dataset ds = data::read_dataset(dataset_dir);
    field::FieldParams params = unpack_field(ckpt::load_checkpoint(field_ckpt), c);
    std::optional<std::pair<distill::SegHead, distill::ClusterCenters>> distilled;
    if (!distill_ckpt.empty())
        distilled = unpack_distill(ckpt::load_checkpoint(distill_ckpt), c);
    detail::prepare_out_dir(out, force);
    detail::log_config(c, out);
    render_view_exports(c, ds, params, distilled ? &distilled->first : nullptr,
                        distilled ? &distilled->second : nullptr, scene, view, out);
    log::info("render: exports written to ", out.string());
}

}  // namespace fieldsc::pipe
