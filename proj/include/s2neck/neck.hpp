#pragma once

#include <set>

#include "s2neck/nn.hpp"

namespace s2neck {

// Ordered pyramid levels P3..PL, highest resolution first, uniform width.
struct PyramidFeatures {
    std::vector<Var> levels;
    int first_level = 3;
    int64_t width = 0;

    const Var& level(int i) const { return levels.at(static_cast<size_t>(i - first_level)); }
    int last_level() const { return first_level + static_cast<int>(levels.size()) - 1; }
};

// 4D stack (per batch item) of pyramid maps resized to the basis level.
struct GeneralView {
    Var tensor;  // B x C x L x H x W
    int basis_level = 3;
};

struct S2Config {
    int64_t kernel_l = 3, kernel_h = 3, kernel_w = 3;
    int64_t out_channels = 0;  // 0 -> pyramid width
    double bn_eps = 1e-5;
    double bn_momentum = 0.1;
    double leaky_slope = 0.1;
    bool two_stage_adapter = false;
    int basis_level = 3;
};

enum class FuseMode { OneStage, TwoStage };

// Top-down pyramid: 1x1 laterals to a uniform width, nearest 2x upsample +
// add, 3x3 smoothing per level.
class FpnNeck {
public:
    FpnNeck() = default;
    FpnNeck(const std::vector<int64_t>& in_channels, int64_t width, int first_level, Rng& rng);

    PyramidFeatures forward(const std::vector<Var>& backbone_feats) const;
    void collect(const std::string& prefix, ParamList& out) const;

    std::vector<Conv2dLayer> laterals;
    std::vector<Conv2dLayer> smooth;
    int first_level_ = 3;
    int64_t width_ = 0;
};

// FPN followed by a bottom-up pass: stride-2 conv of each level added into
// the next, then a smoothing conv. The lowest level passes through unchanged.
class PanNeck {
public:
    PanNeck() = default;
    PanNeck(const std::vector<int64_t>& in_channels, int64_t width, int first_level, Rng& rng);

    PyramidFeatures forward(const std::vector<Var>& backbone_feats) const;
    void collect(const std::string& prefix, ParamList& out) const;

    FpnNeck fpn;
    std::vector<Conv2dLayer> down;     // one per upward transition
    std::vector<Conv2dLayer> smooth2;  // one per level above the first
};

GeneralView build_general_view(const PyramidFeatures& pyramid, int basis_level);

// 3D conv block (conv3d -> 3D batch norm -> leaky ReLU) followed by average
// pooling over the level axis; output matches the basis level's B x C x H x W.
class S2Module {
public:
    S2Module() = default;
    S2Module(int64_t in_channels, const S2Config& cfg, Rng& rng);

    Var forward(const GeneralView& view, bool training);
    void collect(const std::string& prefix, ParamList& out, BufferList* buffers = nullptr);

    S2Config cfg;
    Conv3dLayer conv;
    BatchNormLayer bn;
};

// One-stage: channel concat (p3 first), 2C channels. Two-stage: concat then
// the 1x1 adapter back down to C channels.
Var fuse_s2(const Var& p3, const Var& s2_feature, FuseMode mode, const Conv2dLayer* adapter);

// Resize the S2 feature onto each target level and concat; other levels pass
// through untouched.
PyramidFeatures attach_s2_to_levels(const PyramidFeatures& pyramid, const Var& s2_feature,
                                    const std::set<int>& targets);

}  // namespace s2neck
