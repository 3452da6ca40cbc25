#include "s2neck/neck.hpp"

#include <stdexcept>

namespace s2neck {

namespace {
int64_t half_up(int64_t v) { return (v + 1) / 2; }

void check_halving(const std::vector<Var>& feats) {
    for (size_t i = 0; i + 1 < feats.size(); ++i) {
        const Tensor& a = feats[i]->value;
        const Tensor& b = feats[i + 1]->value;
        if (b.dim(2) != half_up(a.dim(2)) || b.dim(3) != half_up(a.dim(3)))
            throw std::invalid_argument("neck: backbone feature strides must double per level (" +
                                        a.shape_str() + " -> " + b.shape_str() + ")");
    }
}
}  // namespace

FpnNeck::FpnNeck(const std::vector<int64_t>& in_channels, int64_t width, int first_level, Rng& rng)
    : first_level_(first_level), width_(width) {
    for (int64_t cin : in_channels) {
        laterals.emplace_back(cin, width, 1, 1, 0, rng);
        smooth.emplace_back(width, width, 3, 1, 1, rng);
    }
}

PyramidFeatures FpnNeck::forward(const std::vector<Var>& backbone_feats) const {
    if (backbone_feats.size() != laterals.size())
        throw std::invalid_argument("fpn: feature count mismatch");
    check_halving(backbone_feats);
    const size_t n = backbone_feats.size();
    std::vector<Var> merged(n);
    for (size_t i = 0; i < n; ++i) merged[i] = laterals[i].forward(backbone_feats[i]);
    for (size_t i = n - 1; i-- > 0;) {
        const Tensor& lo = merged[i]->value;
        Var up = resize2d(merged[i + 1], lo.dim(2), lo.dim(3), kernels::ResizeMode::Nearest);
        merged[i] = add(merged[i], up);
    }
    PyramidFeatures out;
    out.first_level = first_level_;
    out.width = width_;
    for (size_t i = 0; i < n; ++i) out.levels.push_back(smooth[i].forward(merged[i]));
    return out;
}

void FpnNeck::collect(const std::string& prefix, ParamList& out) const {
    for (size_t i = 0; i < laterals.size(); ++i) {
        const std::string lvl = std::to_string(first_level_ + static_cast<int>(i));
        laterals[i].collect(prefix + ".lateral" + lvl, out);
        smooth[i].collect(prefix + ".smooth" + lvl, out);
    }
}

PanNeck::PanNeck(const std::vector<int64_t>& in_channels, int64_t width, int first_level, Rng& rng)
    : fpn(in_channels, width, first_level, rng) {
    for (size_t i = 0; i + 1 < in_channels.size(); ++i) {
        down.emplace_back(width, width, 3, 2, 1, rng);
        smooth2.emplace_back(width, width, 3, 1, 1, rng);
    }
}

PyramidFeatures PanNeck::forward(const std::vector<Var>& backbone_feats) const {
    PyramidFeatures p = fpn.forward(backbone_feats);
    PyramidFeatures out;
    out.first_level = p.first_level;
    out.width = p.width;
    out.levels.resize(p.levels.size());
    out.levels[0] = p.levels[0];
    for (size_t i = 0; i + 1 < p.levels.size(); ++i) {
        Var descended = down[i].forward(out.levels[i]);
        out.levels[i + 1] = smooth2[i].forward(add(descended, p.levels[i + 1]));
    }
    return out;
}

void PanNeck::collect(const std::string& prefix, ParamList& out) const {
    fpn.collect(prefix + ".fpn", out);
    for (size_t i = 0; i < down.size(); ++i) {
        const std::string lvl = std::to_string(fpn.first_level_ + static_cast<int>(i) + 1);
        down[i].collect(prefix + ".down" + lvl, out);
        smooth2[i].collect(prefix + ".smooth" + lvl, out);
    }
}

GeneralView build_general_view(const PyramidFeatures& pyramid, int basis_level) {
    if (pyramid.levels.empty()) throw std::invalid_argument("build_general_view: empty pyramid");
    if (basis_level < pyramid.first_level || basis_level > pyramid.last_level())
        throw std::invalid_argument("build_general_view: basis level not in pyramid");
    const Tensor& basis = pyramid.level(basis_level)->value;
    const int64_t H = basis.dim(2), W = basis.dim(3);
    std::vector<Var> resized;
    resized.reserve(pyramid.levels.size());
    for (const Var& lvl : pyramid.levels) {
        if (lvl->value.dim(2) == H && lvl->value.dim(3) == W)
            resized.push_back(lvl);
        else
            resized.push_back(resize2d(lvl, H, W, kernels::ResizeMode::Bilinear));
    }
    return GeneralView{stack_levels(resized), basis_level};
}

S2Module::S2Module(int64_t in_channels, const S2Config& cfg_, Rng& rng) : cfg(cfg_) {
    if (cfg.kernel_l % 2 == 0 || cfg.kernel_h % 2 == 0 || cfg.kernel_w % 2 == 0)
        throw std::invalid_argument("s2: kernel dims must be odd");
    const int64_t cout = cfg.out_channels > 0 ? cfg.out_channels : in_channels;
    kernels::Conv3dSpec spec;
    spec.pad_l = static_cast<int>(cfg.kernel_l / 2);
    spec.pad_h = static_cast<int>(cfg.kernel_h / 2);
    spec.pad_w = static_cast<int>(cfg.kernel_w / 2);
    conv = Conv3dLayer(in_channels, cout, cfg.kernel_l, cfg.kernel_h, cfg.kernel_w, spec, rng);
    bn = BatchNormLayer(cout, cfg.bn_eps, cfg.bn_momentum);
}

Var S2Module::forward(const GeneralView& view, bool training) {
    Var y = conv.forward(view.tensor);
    y = bn.forward(y, training);
    y = leaky_relu(y, cfg.leaky_slope);
    return avgpool_levels(y);
}

void S2Module::collect(const std::string& prefix, ParamList& out, BufferList* buffers) {
    conv.collect(prefix + ".conv", out);
    bn.collect(prefix + ".bn", out, buffers);
}

Var fuse_s2(const Var& p3, const Var& s2_feature, FuseMode mode, const Conv2dLayer* adapter) {
    Var cat = concat_channels(p3, s2_feature);
    if (mode == FuseMode::OneStage) return cat;
    if (!adapter) throw std::invalid_argument("fuse_s2: two-stage mode needs the 1x1 adapter");
    return adapter->forward(cat);
}

PyramidFeatures attach_s2_to_levels(const PyramidFeatures& pyramid, const Var& s2_feature,
                                    const std::set<int>& targets) {
    if (targets.empty()) throw std::invalid_argument("attach_s2_to_levels: empty target set");
    for (int t : targets)
        if (t < pyramid.first_level || t > pyramid.last_level())
            throw std::invalid_argument("attach_s2_to_levels: level " + std::to_string(t) +
                                        " not in pyramid");
    PyramidFeatures out;
    out.first_level = pyramid.first_level;
    out.width = pyramid.width;
    for (size_t i = 0; i < pyramid.levels.size(); ++i) {
        const int lvl = pyramid.first_level + static_cast<int>(i);
        const Var& p = pyramid.levels[i];
        if (!targets.count(lvl)) {
            out.levels.push_back(p);
            continue;
        }
        const int64_t H = p->value.dim(2), W = p->value.dim(3);
        Var s2 = s2_feature;
        if (s2->value.dim(2) != H || s2->value.dim(3) != W)
            s2 = resize2d(s2, H, W, kernels::ResizeMode::Bilinear);
        out.levels.push_back(concat_channels(p, s2));
    }
    return out;
}

}  // namespace s2neck
