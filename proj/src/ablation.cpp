#include "s2neck/ablation.hpp"

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <stdexcept>

#include "s2neck/checkpoint.hpp"

namespace fs = std::filesystem;

namespace s2neck {

namespace {

struct Variant {
    std::string name;
    DetectorConfig cfg;
};

std::vector<Variant> make_variants(const std::string& axis, const DetectorConfig& base) {
    std::vector<Variant> out;
    if (axis == "concat-position") {
        DetectorConfig off = base;
        off.use_s2 = false;
        out.push_back({"baseline", off});
        for (const std::set<int>& targets :
             {std::set<int>{3}, std::set<int>{3, 4}, std::set<int>{3, 4, 5}}) {
            DetectorConfig v = base;
            v.use_s2 = true;
            v.s2_targets = targets;
            std::string name = "P3";
            if (targets.count(4)) name += "-P4";
            if (targets.count(5)) name += "-P5";
            out.push_back({name + "+S2", v});
        }
    } else if (axis == "neck") {
        DetectorConfig pan = base;
        pan.neck = "pan";
        pan.use_s2 = false;
        out.push_back({"PAN", pan});
        DetectorConfig fpn_s2 = base;
        fpn_s2.neck = "fpn";
        fpn_s2.use_s2 = true;
        out.push_back({"FPN+S2", fpn_s2});
        DetectorConfig pan_s2 = base;
        pan_s2.neck = "pan";
        pan_s2.use_s2 = true;
        out.push_back({"PAN+S2", pan_s2});
    } else {
        throw std::invalid_argument("run_ablation: unsupported axis '" + axis + "'");
    }
    return out;
}

double mean_of(const std::vector<double>& v) {
    double s = 0;
    for (double x : v) s += x;
    return v.empty() ? -1.0 : s / static_cast<double>(v.size());
}

}  // namespace

std::vector<AblationRow> run_ablation(const AblationConfig& cfg, const Dataset& train_set,
                                      const Dataset& val_set, const std::string& out_dir) {
    if (cfg.seeds.empty()) throw std::invalid_argument("run_ablation: no seeds");
    const std::vector<Variant> variants = make_variants(cfg.axis, cfg.base);
    fs::create_directories(out_dir);

    std::vector<AblationRow> rows;
    auto save_partial = [&] {
        write_ablation_csv((fs::path(out_dir) / "ablation.csv").string(), rows);
    };

    for (const auto& variant : variants) {
        for (uint64_t seed : cfg.seeds) {
            const std::string run_name = variant.name + "_seed" + std::to_string(seed);
            const fs::path run_dir = fs::path(out_dir) / run_name;
            try {
                Detector model(variant.cfg, seed);
                TrainResult tr = train(model, train_set, cfg.schedule, seed);
                fs::create_directories(run_dir);
                write_train_csv((run_dir / "train_log.csv").string(), tr.log);
                write_batch_log((run_dir / "batches.txt").string(), tr.batch_ids);
                save_checkpoint((run_dir / "checkpoint").string(), model.params(),
                                model.buffers(), "");
                std::vector<DetectionSet> dets =
                    predict_all(model, val_set, cfg.score_threshold, cfg.nms_iou);
                std::vector<GroundTruthSet> gts;
                for (const auto& ex : val_set.examples) gts.push_back(ex.gt);
                EvalReport rep = evaluate_ap(
                    dets, gts, static_cast<int>(variant.cfg.head.num_classes));
                std::ofstream((run_dir / "report.json").string()) << rep.to_json() << "\n";
                rows.push_back({variant.name, std::to_string(seed), rep});
            } catch (const std::exception& e) {
                save_partial();
                throw std::runtime_error("run_ablation: variant '" + run_name +
                                         "' failed: " + e.what());
            }
        }
    }

    // seed-averaged aggregate rows, in the order the variants were declared
    for (const auto& variant : variants) {
        std::vector<double> ap, ap_s, ap_m, ap_l;
        for (const auto& r : rows)
            if (r.variant == variant.name && r.seed != "mean") {
                ap.push_back(r.report.ap);
                ap_s.push_back(r.report.ap_s);
                ap_m.push_back(r.report.ap_m);
                ap_l.push_back(r.report.ap_l);
            }
        EvalReport agg;
        agg.ap = mean_of(ap);
        agg.ap_s = mean_of(ap_s);
        agg.ap_m = mean_of(ap_m);
        agg.ap_l = mean_of(ap_l);
        rows.push_back({variant.name, "mean", agg});
    }

    // the neck table carries the headline small-object comparison
    if (cfg.axis == "neck") {
        const AblationRow *pan = nullptr, *pan_s2 = nullptr;
        for (const auto& r : rows)
            if (r.seed == "mean") {
                if (r.variant == "PAN") pan = &r;
                if (r.variant == "PAN+S2") pan_s2 = &r;
            }
        if (pan && pan_s2) {
            EvalReport d;
            d.ap = pan_s2->report.ap - pan->report.ap;
            d.ap_s = pan_s2->report.ap_s - pan->report.ap_s;
            d.ap_m = pan_s2->report.ap_m - pan->report.ap_m;
            d.ap_l = pan_s2->report.ap_l - pan->report.ap_l;
            rows.push_back({"PAN+S2-PAN", "delta", d});
        }
    }

    write_ablation_csv((fs::path(out_dir) / "ablation.csv").string(), rows);
    write_ablation_svg((fs::path(out_dir) / "ablation.svg").string(), rows);
    return rows;
}

void write_ablation_csv(const std::string& path, const std::vector<AblationRow>& rows) {
    std::ofstream f(path);
    if (!f) throw std::runtime_error("write_ablation_csv: cannot open " + path);
    f << "variant,seed,AP,AP_S,AP_M,AP_L\n";
    char buf[256];
    for (const auto& r : rows) {
        std::snprintf(buf, sizeof(buf), "%s,%s,%.6f,%.6f,%.6f,%.6f\n", r.variant.c_str(),
                      r.seed.c_str(), r.report.ap, r.report.ap_s, r.report.ap_m, r.report.ap_l);
        f << buf;
    }
}

void write_ablation_svg(const std::string& path, const std::vector<AblationRow>& rows) {
    std::vector<const AblationRow*> agg;
    for (const auto& r : rows)
        if (r.seed == "mean") agg.push_back(&r);
    const int W = 120 + static_cast<int>(agg.size()) * 90, H = 320, M = 50;
    std::ofstream f(path);
    if (!f) throw std::runtime_error("write_ablation_svg: cannot open " + path);
    f << "<svg xmlns='http://www.w3.org/2000/svg' width='" << W << "' height='" << H << "'>\n";
    f << "<rect width='100%' height='100%' fill='white'/>\n";
    f << "<line x1='" << M << "' y1='" << H - M << "' x2='" << W - 20 << "' y2='" << H - M
      << "' stroke='black'/>\n";
    f << "<text x='10' y='20' font-size='12'>seed-mean AP by variant</text>\n";
    for (size_t i = 0; i < agg.size(); ++i) {
        const double ap = std::max(0.0, agg[i]->report.ap);
        const double bh = ap * (H - 2 * M);
        const double x = M + 10 + static_cast<double>(i) * 90;
        f << "<rect x='" << x << "' y='" << (H - M) - bh << "' width='60' height='" << bh
          << "' fill='#1f77b4'/>\n";
        f << "<text x='" << x << "' y='" << H - M + 16 << "' font-size='10'>" << agg[i]->variant
          << "</text>\n";
        char buf[32];
        std::snprintf(buf, sizeof(buf), "%.3f", agg[i]->report.ap);
        f << "<text x='" << x + 10 << "' y='" << (H - M) - bh - 6 << "' font-size='10'>" << buf
          << "</text>\n";
    }
    f << "</svg>\n";
}

}  // namespace s2neck
