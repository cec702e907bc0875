// Reproduction driver. Each suite gets a timestamped directory under --out
// (default results/) holding the summary table plus the raw per-run CSVs it
// was computed from.
//
//   bench ablation --config configs/smoke.cfg
//   bench mvc --config configs/smoke.cfg --noise 0.05 --noise 0.2

#include <cstdint>
#include <ctime>
#include <exception>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "fieldsc/bench.hpp"

namespace {

namespace bench = fieldsc::bench;
namespace cfg = fieldsc::cfg;
namespace fs = std::filesystem;

std::string timestamp() {
    std::time_t now = std::time(nullptr);
    std::tm tm{};
    localtime_r(&now, &tm);
    char buf[32];
    std::strftime(buf, sizeof(buf), "%Y%m%d-%H%M%S", &tm);
    return buf;
}

struct SuiteArgs {
    std::string config_path;
    std::vector<std::string> overrides;
    std::optional<std::uint64_t> seed;
    std::optional<int> threads;
    std::string out = "results";
    std::string label;
};

void add_suite_options(CLI::App* cmd, SuiteArgs& a) {
    // last occurrence wins so wrapper scripts can preset these and still be overridden
    auto last = CLI::MultiOptionPolicy::TakeLast;
    cmd->add_option("--config", a.config_path, "config file (key=value lines)")
        ->check(CLI::ExistingFile)
        ->multi_option_policy(last);
    cmd->add_option("--set", a.overrides, "override one config key")->type_name("KEY=VALUE");
    cmd->add_option("--seed", a.seed, "root random seed (overrides the config)")
        ->multi_option_policy(last);
    cmd->add_option("--threads", a.threads, "worker threads for scene-parallel stages")
        ->multi_option_policy(last);
    cmd->add_option("--out", a.out, "results root directory")->multi_option_policy(last);
    cmd->add_option("--label", a.label, "subdirectory name (default: timestamp-suite)")
        ->multi_option_policy(last);
}

cfg::RunConfig resolve_config(const SuiteArgs& a) {
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

fs::path suite_dir(const SuiteArgs& a, const char* suite) {
    std::string name = a.label.empty() ? timestamp() + "-" + suite : a.label;
    return fs::path(a.out) / name;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"reproduction suites: ablation table and multi-view consistency"};
    app.require_subcommand(1);

    SuiteArgs abl_args;
    CLI::App* abl = app.add_subcommand("ablation", "full model vs five ablations");
    add_suite_options(abl, abl_args);

    SuiteArgs mvc_args;
    std::vector<float> noise_scales;
    CLI::App* mvc = app.add_subcommand("mvc", "rendered field vs raw targets across views");
    add_suite_options(mvc, mvc_args);
    mvc->add_option("--noise", noise_scales,
                    "target-feature noise scales to sweep (repeatable)");

    CLI11_PARSE(app, argc, argv);

    try {
        if (abl->parsed()) {
            fs::path dir = suite_dir(abl_args, "ablation");
            std::vector<bench::AblationRow> rows =
                bench::run_ablation_suite(resolve_config(abl_args), dir);
            std::cout << "variant            mIoU    delta vs full\n";
            for (const bench::AblationRow& r : rows) {
                std::printf("%-18s %-7.4f %+.4f\n", r.variant.c_str(), r.miou, -r.delta);
            }
            std::cout << "table written to " << (dir / "ablation.md").string() << "\n";
        } else if (mvc->parsed()) {
            fs::path dir = suite_dir(mvc_args, "mvc");
            std::vector<bench::MvcRow> rows =
                bench::run_mvc_suite(resolve_config(mvc_args), noise_scales, dir);
            std::cout << "noise   method   L1       L2       cos\n";
            for (const bench::MvcRow& r : rows)
                std::printf("%-7.3f %-8s %-8.4f %-8.4f %.4f\n", r.noise_scale,
                            r.method.c_str(), r.l1, r.l2, r.cos);
            std::cout << "table written to " << (dir / "mvc.md").string() << "\n";
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
