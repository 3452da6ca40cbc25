#pragma once

#include <optional>
#include <set>
#include <string>

#include "s2neck/data.hpp"
#include "s2neck/eval.hpp"
#include "s2neck/neck.hpp"

namespace s2neck {

struct BackboneConfig {
    int64_t stem = 8;                              // stride-2 stem width
    std::vector<int64_t> stages = {16, 24, 32, 40};  // stride-2 each; last 3 exported
};

struct HeadConfig {
    int64_t width = 16;
    int64_t num_classes = 3;
};

struct DetectorConfig {
    BackboneConfig backbone;
    std::string neck = "pan";  // "pan" or "fpn"
    int64_t neck_width = 16;
    bool use_s2 = true;
    S2Config s2;
    std::set<int> s2_targets = {3};  // pyramid levels that get the concat
    HeadConfig head;
    // sqrt-area level cuts. At 128x128 the toy objects top out near 40px, so
    // the defaults keep small+medium work on the stride-8 grid and leave the
    // coarsest level effectively unassigned; localization on the 4x4 grid is
    // too coarse to hit the COCO-style AP band.
    std::vector<double> assign_thresholds = {16, 100};
    double leaky = 0.1;
};

struct HeadOutputs {
    struct Level {
        Var obj;  // B x 1 x H x W
        Var cls;  // B x K x H x W
        Var box;  // B x 4 x H x W: tx, ty, tw, th
    };
    std::vector<Level> levels;
    std::vector<int> strides;
};

struct Target {
    int level = 0;  // index into head levels
    int64_t row = 0, col = 0;
    int class_id = 0;
    Box box;
};

class Detector {
public:
    Detector(const DetectorConfig& cfg, uint64_t seed);

    HeadOutputs forward(const Tensor& images, bool training);
    ParamList params();
    BufferList buffers();
    std::vector<int> strides() const { return {8, 16, 32}; }

    DetectorConfig cfg;
    Conv2dLayer stem;
    BatchNormLayer stem_bn;
    std::vector<Conv2dLayer> stages;
    std::vector<BatchNormLayer> stage_bn;
    std::optional<FpnNeck> fpn;
    std::optional<PanNeck> pan;
    std::optional<S2Module> s2;
    std::optional<Conv2dLayer> adapter;  // two-stage 1x1, 2C -> C
    struct Head {
        Conv2dLayer trunk, obj, cls, box;
        BatchNormLayer trunk_bn;
    };
    std::vector<Head> heads;
};

std::vector<Target> assign_targets(const GroundTruthSet& gts, const std::vector<int>& strides,
                                   const std::vector<double>& sqrt_area_thresholds);

struct LossWeights {
    double obj = 1.0, cls = 1.0, box = 2.0;
    // per-cell weight on positive cells inside the objectness BCE; the mean is
    // normalized by total weight, so uniform logits still cost exactly ln 2
    double obj_pos = 16.0;
};

struct LossParts {
    Var total;
    double obj = 0, cls = 0, box = 0;
    int64_t positives = 0;
    bool missing_positives = false;  // positive terms contributed 0
};

// targets_per_image[i] holds the assignments for batch item i.
LossParts compute_loss(const HeadOutputs& outputs,
                       const std::vector<std::vector<Target>>& targets_per_image,
                       const LossWeights& weights);

struct TrainSchedule {
    int64_t iterations = 3000;
    int64_t batch = 8;
    double lr = 0.2, momentum = 0.9, weight_decay = 5e-4;
    double clip_norm = 1.0;  // global gradient-norm clip; <= 0 disables
    LossWeights weights;
};

struct LogRow {
    int64_t iter = 0;
    double lr = 0, total = 0, obj = 0, cls = 0, box = 0, wallclock_ms = 0;
};

struct TrainResult {
    std::vector<LogRow> log;
    std::vector<std::vector<int64_t>> batch_ids;  // per iteration
};

// Deterministic minibatch SGD; logs one row per iteration. A non-finite loss
// aborts with the offending batch ids in the exception message.
TrainResult train(Detector& model, const Dataset& data, const TrainSchedule& schedule,
                  uint64_t seed);

void write_train_csv(const std::string& path, const std::vector<LogRow>& log);
void write_batch_log(const std::string& path, const std::vector<std::vector<int64_t>>& batches);

// Greedy per-class suppression; input order is irrelevant, ties broken by box
// position for determinism.
std::vector<Detection> greedy_nms(std::vector<Detection> dets, double nms_iou);

DetectionSet predict(Detector& model, const LoadedExample& example, double score_threshold,
                     double nms_iou);

// predict() over a whole split; convenience for eval and ablations.
std::vector<DetectionSet> predict_all(Detector& model, const Dataset& data,
                                      double score_threshold, double nms_iou);

}  // namespace s2neck
