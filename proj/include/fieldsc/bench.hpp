// Reproduction suites behind the bench tool. run_ablation_suite retrains the
// model with individual pieces removed and tabulates the mIoU cost of each;
// run_mvc_suite compares rendered-field feature consistency against the raw
// 2D targets across view pairs. Both write CSV plus markdown into their
// output directory and return the rows for programmatic use.
#pragma once

#include <filesystem>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <string>
#include <vector>

#include "fieldsc/pipeline.hpp"

namespace fieldsc::bench {

namespace fs = std::filesystem;

struct AblationRow {
    std::string variant;
    double miou = 0.0;       // widest-band mean IoU
    double full_miou = 0.0;  // same metric for the unablated model
    double delta = 0.0;      // full_miou - miou
};

struct MvcRow {
    float noise_scale = 0.0f;
    std::string method;  // "field" or "targets"
    double l1 = 0.0, l2 = 0.0, cos = 0.0;
    long long pixels = 0;
};

inline double headline_miou(const eval::SSCReport& r) {
    if (r.counts.empty()) throw DomainError("bench: report has no bands");
    return eval::mean_iou(r.counts.back());
}

namespace detail {

inline std::ofstream open_csv(const fs::path& p) {
    std::ofstream os(p);
    if (!os) throw IoError("cannot write " + p.string());
    os << std::setprecision(17);
    return os;
}

}  // namespace detail

// Trains the full model and five ablations on one shared dataset and seed:
// feature-smoothness weight zeroed, constant feature map disabled,
// distillation skipped, kNN correlation term zeroed, and 2D crop sampling in
// place of 3D neighborhoods. Ablations that only change distillation reuse
// the full model's field instead of retraining it.
inline std::vector<AblationRow> run_ablation_suite(const cfg::RunConfig& c, const fs::path& out) {
    cfg::validate(c);
    fs::create_directories(out);
    data::Dataset ds = pipe::build_dataset(c);

    struct Variant {
        const char* name;
        cfg::RunConfig cfg;
        bool own_field;  // false: evaluate on the full model's field
    };
    std::vector<Variant> variants;
    variants.push_back({"full", c, true});
    {
        cfg::RunConfig v = c;
        v.lambda_fs = 0.0f;
        variants.push_back({"no_feat_smooth", v, true});
    }
    {
        cfg::RunConfig v = c;
        v.fbar_enabled = false;
        variants.push_back({"no_fbar", v, true});
    }
    {
        cfg::RunConfig v = c;
        v.distill_steps = 0;
        variants.push_back({"no_distill", v, false});
    }
    {
        cfg::RunConfig v = c;
        v.lambda_knn = 0.0f;
        variants.push_back({"no_knn", v, false});
    }
    {
        cfg::RunConfig v = c;
        v.distill_sampling = "crop2d";
        variants.push_back({"crop2d_sampling", v, false});
    }

    field::FieldParams full_field;
    std::vector<AblationRow> rows;
    for (const Variant& v : variants) {
        fs::path run_dir = out / "runs" / v.name;
        fs::create_directories(run_dir);
        log::info("ablation: running variant ", v.name);

        pipe::TrainOutput trained;
        if (v.own_field) {
            trained = pipe::train_field(v.cfg, ds);
            std::ofstream csv = detail::open_csv(run_dir / "train_log.csv");
            pipe::write_train_csv(csv, trained.history);
        }
        if (std::string(v.name) == "full") full_field = trained.params;
        const field::FieldParams& params = v.own_field ? trained.params : full_field;

        pipe::DistillOutput distilled = pipe::distill_field(v.cfg, ds, params);
        {
            std::ofstream csv = detail::open_csv(run_dir / "distill_log.csv");
            pipe::write_distill_csv(csv, distilled.history);
        }
        pipe::SscEval ssc = pipe::eval_ssc(v.cfg, ds, params, distilled.head, distilled.centers);
        {
            std::ofstream csv = detail::open_csv(run_dir / "eval_ssc.csv");
            eval::write_ssc_csv(ssc.report, csv);
        }

        AblationRow row;
        row.variant = v.name;
        row.miou = headline_miou(ssc.report);
        rows.push_back(row);
    }

    double full = rows.front().miou;
    for (AblationRow& r : rows) {
        r.full_miou = full;
        r.delta = full - r.miou;
    }

    {
        std::ofstream csv = detail::open_csv(out / "ablation.csv");
        csv << "variant,miou,full_miou,delta_vs_full\n";
        for (const AblationRow& r : rows)
            csv << r.variant << ',' << r.miou << ',' << r.full_miou << ',' << r.delta << '\n';
    }
    {
        std::ofstream md(out / "ablation.md");
        if (!md) throw IoError("cannot write ablation.md");
        md << "# Ablation study\n\n"
           << "Widest-band mean IoU on the held-out split; every variant shares the\n"
           << "dataset and seed of the full model.\n\n"
           << "| variant | mIoU | full mIoU | delta |\n"
           << "|---|---|---|---|\n";
        md << std::setprecision(4);
        for (const AblationRow& r : rows)
            md << "| " << r.variant << " | " << r.miou << " | " << r.full_miou << " | "
               << r.delta << " |\n";
    }
    return rows;
}

// One trained model per noise scale; two table rows per scale comparing the
// rendered field against the raw per-view targets it was fitted to.
inline std::vector<MvcRow> run_mvc_suite(const cfg::RunConfig& base,
                                         std::vector<float> noise_scales, const fs::path& out) {
    if (noise_scales.empty()) noise_scales.push_back(base.feature_noise);
    fs::create_directories(out);

    std::vector<MvcRow> rows;
    for (float noise : noise_scales) {
        cfg::RunConfig c = base;
        c.feature_noise = noise;
        cfg::validate(c);
        log::info("mvc suite: noise scale ", noise);

        std::ostringstream tagname;
        tagname << "noise_" << noise;
        fs::path run_dir = out / "runs" / tagname.str();
        fs::create_directories(run_dir);

        data::Dataset ds = pipe::build_dataset(c);
        pipe::TrainOutput trained = pipe::train_field(c, ds);
        {
            std::ofstream csv = detail::open_csv(run_dir / "train_log.csv");
            pipe::write_train_csv(csv, trained.history);
        }
        pipe::MvcEval r = pipe::eval_mvc(c, ds, trained.params);
        rows.push_back({noise, "field", r.field_row.l1, r.field_row.l2, r.field_row.cos,
                        r.field_row.pixels});
        rows.push_back({noise, "targets", r.target_row.l1, r.target_row.l2, r.target_row.cos,
                        r.target_row.pixels});
    }

    {
        std::ofstream csv = detail::open_csv(out / "mvc.csv");
        csv << "noise_scale,method,l1,l2,cos,pixels\n";
        for (const MvcRow& r : rows)
            csv << r.noise_scale << ',' << r.method << ',' << r.l1 << ',' << r.l2 << ','
                << r.cos << ',' << r.pixels << '\n';
    }
    {
        std::ofstream md(out / "mvc.md");
        if (!md) throw IoError("cannot write mvc.md");
        md << "# Multi-view feature consistency\n\n"
           << "Held-out view pairs, occlusion-aware correspondences. Higher cos and\n"
           << "lower L1/L2 mean the representation agrees with itself across views.\n\n"
           << "| noise | method | L1 | L2 | cos |\n"
           << "|---|---|---|---|---|\n";
        md << std::setprecision(4);
        for (const MvcRow& r : rows)
            md << "| " << r.noise_scale << " | " << r.method << " | " << r.l1 << " | " << r.l2
               << " | " << r.cos << " |\n";
    }
    return rows;
}

}  // namespace fieldsc::bench
