#pragma once

#include <functional>
#include <map>
#include <string>
#include <vector>

#include "s2neck/data.hpp"
#include "s2neck/nn.hpp"

namespace s2neck {

struct Detection {
    int class_id = 0;
    Box box;
    double score = 0;
};

struct DetectionSet {
    int64_t image_id = 0;
    std::vector<Detection> dets;
};

struct BucketThresholds {
    double small_area = 64.0;
    double medium_area = 256.0;
};

// -1 entries are "no ground truth in this slice" sentinels, excluded from means.
struct EvalReport {
    double ap = -1, ap50 = -1, ap75 = -1;
    double ap_s = -1, ap_m = -1, ap_l = -1;
    std::vector<double> per_class_ap;
    int64_t count_small = 0, count_medium = 0, count_large = 0;

    std::string to_json() const;
};

std::vector<double> coco_iou_thresholds();  // .50:.05:.95

double compute_iou(const Box& a, const Box& b);

EvalReport evaluate_ap(const std::vector<DetectionSet>& dets,
                       const std::vector<GroundTruthSet>& gts, int num_classes,
                       const std::vector<double>& iou_thresholds = coco_iou_thresholds(),
                       const BucketThresholds& buckets = {});

struct ParamBreakdown {
    int64_t total = 0;
    std::map<std::string, int64_t> by_module;  // keyed by the first path component
};

ParamBreakdown count_params(const ParamList& params);

struct BenchResult {
    double median_ms_per_image = 0;
    double p95_ms_per_image = 0;
    int64_t batch = 0;
    int iterations = 0;
};

// forward() runs one batch; warmup runs are timed out of the statistics.
BenchResult bench_runtime(const std::function<void()>& forward, int64_t batch, int iterations,
                          int warmup = 2);

// Standalone SVG precision-recall plot, one polyline per (label, curve) pair.
void write_pr_svg(const std::string& path,
                  const std::vector<std::pair<std::string, std::vector<std::pair<double, double>>>>&
                      curves);

}  // namespace s2neck
