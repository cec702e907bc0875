// Pipeline driver: dataset generation, field training, distillation,
// evaluation, and rendering exports, all steered by one flat config.
//
//   fieldsc generate --out runs/data --set scenes=8
//   fieldsc train    --dataset runs/data --out runs/train
//   fieldsc distill  --dataset runs/data --field runs/train/field.ckpt --out runs/distill
//   fieldsc eval     --task ssc --dataset runs/data --field runs/train/field.ckpt
//                    --distill runs/distill/distill.ckpt --out runs/eval
//   fieldsc render   --dataset runs/data --field runs/train/field.ckpt
//                    --scene 0 --view 1 --out runs/render
//
// Set FIELDSC_LOG=info (or debug) for progress output.

#include <cstdint>
#include <exception>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "fieldsc/pipeline.hpp"

namespace {

namespace cfg = fieldsc::cfg;
namespace pipe = fieldsc::pipe;

struct CommonArgs {
    std::string config_path;
    std::vector<std::string> overrides;
    std::optional<std::uint64_t> seed;
    std::optional<int> threads;
    std::string out;
    bool force = false;
};

void add_common(CLI::App* cmd, CommonArgs& a) {
    cmd->add_option("--config", a.config_path, "config file (key=value lines)")
        ->check(CLI::ExistingFile);
    cmd->add_option("--set", a.overrides, "override one config key, e.g. --set train_steps=100")
        ->type_name("KEY=VALUE");
    cmd->add_option("--seed", a.seed, "root random seed (overrides the config)");
    cmd->add_option("--threads", a.threads, "worker threads for scene-parallel stages");
    cmd->add_option("--out", a.out, "output directory")->required();
    cmd->add_flag("--force", a.force, "replace the output directory if it exists");
}

// defaults -> config file -> --set pairs -> dedicated flags, last one wins
cfg::RunConfig resolve_config(const CommonArgs& a) {
    cfg::RunConfig c;
    if (!a.config_path.empty()) c = cfg::load_config(a.config_path);
    for (const std::string& kv : a.overrides) {
        std::size_t eq = kv.find('=');
        if (eq == std::string::npos)
            throw fieldsc::ConfigError("--set expects KEY=VALUE, got '" + kv + "'");
        cfg::apply_override(c, kv.substr(0, eq), kv.substr(eq + 1));
    }
    if (a.seed) c.seed = *a.seed;
    if (a.threads) c.threads = *a.threads;
    cfg::validate(c);
    return c;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"unsupervised 3D feature fields from single images"};
    app.require_subcommand(1);
    app.set_version_flag("--version", std::string(fieldsc::ckpt::build_id()));

    CommonArgs gen_args;
    CLI::App* gen = app.add_subcommand("generate", "synthesize a dataset of scenes");
    add_common(gen, gen_args);

    CommonArgs train_args;
    std::string train_dataset;
    CLI::App* train = app.add_subcommand("train", "fit the feature field");
    add_common(train, train_args);
    train->add_option("--dataset", train_dataset, "dataset directory")->required();

    CommonArgs distill_args;
    std::string distill_dataset, distill_field;
    CLI::App* dist = app.add_subcommand("distill", "fit the segmentation head and clusters");
    add_common(dist, distill_args);
    dist->add_option("--dataset", distill_dataset, "dataset directory")->required();
    dist->add_option("--field", distill_field, "trained field checkpoint")->required();

    CommonArgs eval_args;
    std::string eval_dataset, eval_field, eval_distill, eval_task;
    CLI::App* ev = app.add_subcommand("eval", "score the held-out split");
    add_common(ev, eval_args);
    ev->add_option("--dataset", eval_dataset, "dataset directory")->required();
    ev->add_option("--field", eval_field, "trained field checkpoint")->required();
    ev->add_option("--distill", eval_distill, "distilled head checkpoint (ssc and seg2d)");
    ev->add_option("--task", eval_task, "one of ssc, seg2d, mvc")->required();

    CommonArgs render_args;
    std::string render_dataset, render_field, render_distill;
    int render_scene = 0, render_view = 0;
    CLI::App* ren = app.add_subcommand("render", "export depth, feature, and cloud images");
    add_common(ren, render_args);
    ren->add_option("--dataset", render_dataset, "dataset directory")->required();
    ren->add_option("--field", render_field, "trained field checkpoint")->required();
    ren->add_option("--distill", render_distill, "distilled head checkpoint for class colors");
    ren->add_option("--scene", render_scene, "scene index")->required();
    ren->add_option("--view", render_view, "view index within the scene")->required();

    CLI11_PARSE(app, argc, argv);

    try {
        if (gen->parsed()) {
            pipe::cmd_generate(resolve_config(gen_args), gen_args.out, gen_args.force);
        } else if (train->parsed()) {
            pipe::cmd_train(resolve_config(train_args), train_dataset, train_args.out,
                            train_args.force);
        } else if (dist->parsed()) {
            pipe::cmd_distill(resolve_config(distill_args), distill_dataset, distill_field,
                              distill_args.out, distill_args.force);
        } else if (ev->parsed()) {
            if (eval_task != "mvc" && eval_distill.empty())
                throw fieldsc::ConfigError("eval: --distill is required for task " + eval_task);
            pipe::cmd_eval(resolve_config(eval_args), eval_dataset, eval_field, eval_distill,
                           eval_task, eval_args.out, eval_args.force);
        } else if (ren->parsed()) {
            pipe::cmd_render(resolve_config(render_args), render_dataset, render_field,
                             render_distill, render_scene, render_view, render_args.out,
                             render_args.force);
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
