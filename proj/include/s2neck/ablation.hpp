#pragma once

#include <string>
#include <vector>

#include "s2neck/detector.hpp"

namespace s2neck {

struct AblationConfig {
    std::string axis;  // "concat-position" or "neck"
    DetectorConfig base;
    TrainSchedule schedule;
    std::vector<uint64_t> seeds = {1, 2, 3};
    double score_threshold = 0.1;
    double nms_iou = 0.5;
};

struct AblationRow {
    std::string variant;
    std::string seed;  // a number, "mean", or "delta"
    EvalReport report;
};

// Trains and evaluates every (variant, seed) cell with a shared schedule and
// identical data order, then appends seed-averaged aggregate rows. Writes
// ablation.csv, an SVG bar chart, and per-run logs under out_dir; a failing
// variant aborts after saving the rows finished so far.
std::vector<AblationRow> run_ablation(const AblationConfig& cfg, const Dataset& train_set,
                                      const Dataset& val_set, const std::string& out_dir);

void write_ablation_csv(const std::string& path, const std::vector<AblationRow>& rows);
void write_ablation_svg(const std::string& path, const std::vector<AblationRow>& rows);

}  // namespace s2neck
