#include "s2neck/detector.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <stdexcept>
#include <tuple>

namespace s2neck {

namespace {

double sigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }

double bce_logits(double z, double t) {
    return std::max(z, 0.0) - z * t + std::log1p(std::exp(-std::abs(z)));
}

}  // namespace

Detector::Detector(const DetectorConfig& cfg_, uint64_t seed) : cfg(cfg_) {
    if (cfg.backbone.stages.size() != 4)
        throw std::invalid_argument("detector: backbone needs 4 stride-2 stages after the stem");
    Rng rng(seed);
    stem = Conv2dLayer(3, cfg.backbone.stem, 3, 2, 1, rng);
    stem_bn = BatchNormLayer(cfg.backbone.stem);
    int64_t cin = cfg.backbone.stem;
    for (int64_t w : cfg.backbone.stages) {
        stages.emplace_back(cin, w, 3, 2, 1, rng);
        stage_bn.emplace_back(w);
        cin = w;
    }
    const std::vector<int64_t> exported(cfg.backbone.stages.end() - 3, cfg.backbone.stages.end());
    if (cfg.neck == "pan")
        pan.emplace(exported, cfg.neck_width, 3, rng);
    else if (cfg.neck == "fpn")
        fpn.emplace(exported, cfg.neck_width, 3, rng);
    else
        throw std::invalid_argument("detector: unknown neck '" + cfg.neck + "'");
    if (cfg.use_s2) {
        s2.emplace(cfg.neck_width, cfg.s2, rng);
        if (cfg.s2.two_stage_adapter)
            adapter.emplace(2 * cfg.neck_width, cfg.neck_width, 1, 1, 0, rng);
    }
    for (int lvl = 3; lvl <= 5; ++lvl) {
        const bool cat = cfg.use_s2 && !cfg.s2.two_stage_adapter && cfg.s2_targets.count(lvl);
        const int64_t hcin = cat ? 2 * cfg.neck_width : cfg.neck_width;
        Head h;
        h.trunk = Conv2dLayer(hcin, cfg.head.width, 3, 1, 1, rng);
        h.trunk_bn = BatchNormLayer(cfg.head.width);
        h.obj = Conv2dLayer(cfg.head.width, 1, 1, 1, 0, rng);
        h.cls = Conv2dLayer(cfg.head.width, cfg.head.num_classes, 1, 1, 0, rng);
        h.box = Conv2dLayer(cfg.head.width, 4, 1, 1, 0, rng);
        h.obj.bias->value.fill(-2.0);  // low objectness prior speeds early training
        heads.push_back(std::move(h));
    }
}

HeadOutputs Detector::forward(const Tensor& images, bool training) {
    if (images.dim(2) % 32 != 0 || images.dim(3) % 32 != 0)
        throw std::invalid_argument("detector: input size must be divisible by 32");
    Var x = constant(images);
    x = leaky_relu(stem_bn.forward(stem.forward(x), training), cfg.leaky);
    std::vector<Var> feats;
    for (size_t i = 0; i < stages.size(); ++i) {
        x = leaky_relu(stage_bn[i].forward(stages[i].forward(x), training), cfg.leaky);
        if (i >= 1) feats.push_back(x);
    }
    PyramidFeatures p = pan ? pan->forward(feats) : fpn->forward(feats);
    if (s2) {
        Var feat = s2->forward(build_general_view(p, cfg.s2.basis_level), training);
        p = attach_s2_to_levels(p, feat, cfg.s2_targets);
        if (adapter)
            for (int lvl : cfg.s2_targets)
                p.levels[static_cast<size_t>(lvl - p.first_level)] =
                    adapter->forward(p.level(lvl));
    }
    HeadOutputs out;
    out.strides = strides();
    for (size_t i = 0; i < heads.size(); ++i) {
        Var t = leaky_relu(
            heads[i].trunk_bn.forward(heads[i].trunk.forward(p.levels[i]), training),
            cfg.leaky);
        out.levels.push_back({heads[i].obj.forward(t), heads[i].cls.forward(t),
                              heads[i].box.forward(t)});
    }
    return out;
}

ParamList Detector::params() {
    ParamList out;
    stem.collect("backbone.stem", out);
    stem_bn.collect("backbone.stem.bn", out);
    for (size_t i = 0; i < stages.size(); ++i) {
        const std::string p = "backbone.stage" + std::to_string(i + 1);
        stages[i].collect(p, out);
        stage_bn[i].collect(p + ".bn", out);
    }
    if (pan) pan->collect("neck", out);
    if (fpn) fpn->collect("neck", out);
    if (s2) s2->collect("s2", out);
    if (adapter) adapter->collect("s2.adapter", out);
    for (size_t i = 0; i < heads.size(); ++i) {
        const std::string p = "head.p" + std::to_string(3 + i);
        heads[i].trunk.collect(p + ".trunk", out);
        heads[i].trunk_bn.collect(p + ".trunk.bn", out);
        heads[i].obj.collect(p + ".obj", out);
        heads[i].cls.collect(p + ".cls", out);
        heads[i].box.collect(p + ".box", out);
    }
    return out;
}

BufferList Detector::buffers() {
    BufferList out;
    ParamList scratch;
    stem_bn.collect("backbone.stem.bn", scratch, &out);
    for (size_t i = 0; i < stage_bn.size(); ++i)
        stage_bn[i].collect("backbone.stage" + std::to_string(i + 1) + ".bn", scratch, &out);
    if (s2) s2->collect("s2", scratch, &out);
    for (size_t i = 0; i < heads.size(); ++i)
        heads[i].trunk_bn.collect("head.p" + std::to_string(3 + i) + ".trunk.bn", scratch,
                                  &out);
    return out;
}

std::vector<Target> assign_targets(const GroundTruthSet& gts, const std::vector<int>& strides,
                                   const std::vector<double>& sqrt_area_thresholds) {
    if (sqrt_area_thresholds.size() + 1 != strides.size())
        throw std::invalid_argument("assign_targets: need one threshold fewer than levels");
    for (size_t i = 1; i < sqrt_area_thresholds.size(); ++i)
        if (sqrt_area_thresholds[i] <= sqrt_area_thresholds[i - 1])
            throw std::invalid_argument("assign_targets: thresholds must ascend");
    std::vector<Target> out;
    for (const auto& o : gts.objects) {
        if (o.box.area() <= 0)
            throw std::invalid_argument("assign_targets: zero-area box");
        const double sq = std::sqrt(o.box.area());
        int level = static_cast<int>(sqrt_area_thresholds.size());
        for (size_t t = 0; t < sqrt_area_thresholds.size(); ++t)
            if (sq < sqrt_area_thresholds[t]) {  // half-open: boundary goes up a level
                level = static_cast<int>(t);
                break;
            }
        const double cx = o.box.x + o.box.w / 2, cy = o.box.y + o.box.h / 2;
        const int s = strides[static_cast<size_t>(level)];
        out.push_back({level, static_cast<int64_t>(cy / s), static_cast<int64_t>(cx / s),
                       o.class_id, o.box});
    }
    return out;
}

LossParts compute_loss(const HeadOutputs& outputs,
                       const std::vector<std::vector<Target>>& targets_per_image,
                       const LossWeights& weights) {
    const size_t L = outputs.levels.size();
    const int64_t B = outputs.levels[0].obj->value.dim(0);
    const int64_t K = outputs.levels[0].cls->value.dim(1);
    if (static_cast<int64_t>(targets_per_image.size()) != B)
        throw std::invalid_argument("compute_loss: batch size mismatch");

    // positives indexed per level; first object wins a contested cell
    struct Pos {
        int64_t b, row, col;
        int class_id;
        Box box;
    };
    std::vector<std::vector<Pos>> pos(L);
    for (int64_t b = 0; b < B; ++b) {
        for (const auto& t : targets_per_image[static_cast<size_t>(b)]) {
            const auto& lvl = outputs.levels[static_cast<size_t>(t.level)];
            const int64_t H = lvl.obj->value.dim(2), W = lvl.obj->value.dim(3);
            const int64_t r = std::min(t.row, H - 1), c = std::min(t.col, W - 1);
            bool taken = false;
            for (const auto& p : pos[static_cast<size_t>(t.level)])
                if (p.b == b && p.row == r && p.col == c) taken = true;
            if (!taken) pos[static_cast<size_t>(t.level)].push_back({b, r, c, t.class_id, t.box});
        }
    }
    int64_t P = 0, N = 0;
    for (size_t l = 0; l < L; ++l) {
        P += static_cast<int64_t>(pos[l].size());
        N += B * outputs.levels[l].obj->value.dim(2) * outputs.levels[l].obj->value.dim(3);
    }
    const double wsum = static_cast<double>(N - P) + weights.obj_pos * static_cast<double>(P);

    double obj_sum = 0, cls_sum = 0, box_sum = 0;
    std::vector<Tensor> gobj(L), gcls(L), gbox(L);  // d(part)/d(logits), unweighted
    for (size_t l = 0; l < L; ++l) {
        const auto& lvl = outputs.levels[l];
        const Tensor& zo = lvl.obj->value;
        const Tensor& zc = lvl.cls->value;
        const Tensor& zb = lvl.box->value;
        const int64_t H = zo.dim(2), W = zo.dim(3);
        gobj[l] = Tensor(zo.shape());
        gcls[l] = Tensor(zc.shape());
        gbox[l] = Tensor(zb.shape());

        // objectness: mean BCE over every cell of every level
        Tensor tgt({B, 1, H, W});
        for (const auto& p : pos[l]) tgt.at4(p.b, 0, p.row, p.col) = 1.0;
        for (int64_t i = 0; i < zo.numel(); ++i) {
            const double cw = tgt[i] > 0 ? weights.obj_pos : 1.0;
            obj_sum += cw * bce_logits(zo[i], tgt[i]);
            gobj[l][i] = cw * (sigmoid(zo[i]) - tgt[i]) / wsum;
        }

        const int s = outputs.strides[l];
        for (const auto& p : pos[l]) {
            // classification: softmax cross-entropy at the positive cell
            double zmax = -1e300;
            for (int64_t k = 0; k < K; ++k) zmax = std::max(zmax, zc.at4(p.b, k, p.row, p.col));
            double lse = 0;
            for (int64_t k = 0; k < K; ++k)
                lse += std::exp(zc.at4(p.b, k, p.row, p.col) - zmax);
            lse = zmax + std::log(lse);
            cls_sum += lse - zc.at4(p.b, p.class_id, p.row, p.col);
            for (int64_t k = 0; k < K; ++k) {
                const double soft = std::exp(zc.at4(p.b, k, p.row, p.col) - lse);
                gcls[l].at4(p.b, k, p.row, p.col) +=
                    (soft - (k == p.class_id ? 1.0 : 0.0)) / static_cast<double>(P);
            }

            // box: 1 - IoU of the decoded box against the target, analytic grad
            const double tx = zb.at4(p.b, 0, p.row, p.col), ty = zb.at4(p.b, 1, p.row, p.col);
            const double tw = zb.at4(p.b, 2, p.row, p.col), th = zb.at4(p.b, 3, p.row, p.col);
            const double sx = sigmoid(tx), sy = sigmoid(ty);
            const double cx = (static_cast<double>(p.col) + sx) * s;
            const double cy = (static_cast<double>(p.row) + sy) * s;
            // size logits clamped so a transient blowup stays finite (flat
            // outside the clamp, like the disjoint-box case)
            const double w = std::exp(std::clamp(tw, -8.0, 8.0)) * s;
            const double h = std::exp(std::clamp(th, -8.0, 8.0)) * s;
            const double dw_live = (tw > -8.0 && tw < 8.0) ? 1.0 : 0.0;
            const double dh_live = (th > -8.0 && th < 8.0) ? 1.0 : 0.0;
            const double px1 = cx - w / 2, px2 = cx + w / 2;
            const double py1 = cy - h / 2, py2 = cy + h / 2;
            const double gx1 = p.box.x, gx2 = p.box.x + p.box.w;
            const double gy1 = p.box.y, gy2 = p.box.y + p.box.h;
            const double iw = std::min(px2, gx2) - std::max(px1, gx1);
            const double ih = std::min(py2, gy2) - std::max(py1, gy1);
            if (iw > 0 && ih > 0) {
                const double I = iw * ih, Ap = w * h, Ag = p.box.area();
                const double U = Ap + Ag - I;
                box_sum += 1.0 - I / U;
                const double rx = px2 < gx2 ? 1.0 : 0.0, lx = px1 > gx1 ? 1.0 : 0.0;
                const double ry = py2 < gy2 ? 1.0 : 0.0, ly = py1 > gy1 ? 1.0 : 0.0;
                const double dI_dcx = ih * (rx - lx), dI_dw = ih * 0.5 * (rx + lx);
                const double dI_dcy = iw * (ry - ly), dI_dh = iw * 0.5 * (ry + ly);
                auto diou = [&](double dI, double dAp) {
                    const double dU = dAp - dI;
                    return (dI * U - I * dU) / (U * U);
                };
                const double gcx = -diou(dI_dcx, 0.0), gcy = -diou(dI_dcy, 0.0);
                const double gw = -diou(dI_dw, h), gh = -diou(dI_dh, w);
                gbox[l].at4(p.b, 0, p.row, p.col) +=
                    gcx * s * sx * (1 - sx) / static_cast<double>(P);
                gbox[l].at4(p.b, 1, p.row, p.col) +=
                    gcy * s * sy * (1 - sy) / static_cast<double>(P);
                gbox[l].at4(p.b, 2, p.row, p.col) += gw * w * dw_live / static_cast<double>(P);
                gbox[l].at4(p.b, 3, p.row, p.col) += gh * h * dh_live / static_cast<double>(P);
            } else {
                box_sum += 1.0;  // disjoint boxes: flat region, zero gradient
            }
        }
    }

    LossParts parts;
    parts.positives = P;
    parts.missing_positives = (P == 0);
    parts.obj = obj_sum / wsum;
    parts.cls = P > 0 ? cls_sum / static_cast<double>(P) : 0.0;
    parts.box = P > 0 ? box_sum / static_cast<double>(P) : 0.0;
    const double total =
        weights.obj * parts.obj + weights.cls * parts.cls + weights.box * parts.box;

    std::vector<Var> parents;
    for (size_t l = 0; l < L; ++l) {
        parents.push_back(outputs.levels[l].obj);
        parents.push_back(outputs.levels[l].cls);
        parents.push_back(outputs.levels[l].box);
    }
    const double wo = weights.obj, wc = weights.cls, wb = weights.box;
    parts.total = make_node(
        Tensor({1}, std::vector<double>{total}), parents,
        [L, wo, wc, wb, gobj = std::move(gobj), gcls = std::move(gcls),
         gbox = std::move(gbox)](Node& self) {
            const double g = self.grad[0];
            for (size_t l = 0; l < L; ++l) {
                Node& no = *self.parents[3 * l];
                Node& nc = *self.parents[3 * l + 1];
                Node& nb = *self.parents[3 * l + 2];
                if (no.requires_grad) {
                    Tensor& t = no.ensure_grad();
                    for (int64_t i = 0; i < t.numel(); ++i) t[i] += g * wo * gobj[l][i];
                }
                if (nc.requires_grad) {
                    Tensor& t = nc.ensure_grad();
                    for (int64_t i = 0; i < t.numel(); ++i) t[i] += g * wc * gcls[l][i];
                }
                if (nb.requires_grad) {
                    Tensor& t = nb.ensure_grad();
                    for (int64_t i = 0; i < t.numel(); ++i) t[i] += g * wb * gbox[l][i];
                }
            }
        });
    return parts;
}

TrainResult train(Detector& model, const Dataset& data, const TrainSchedule& schedule,
                  uint64_t seed) {
    if (data.examples.empty()) throw std::invalid_argument("train: empty dataset");
    const int64_t S = data.manifest.image_size;
    ParamList plist = model.params();
    SgdOptimizer opt(param_vars(plist), schedule.lr, schedule.momentum, schedule.weight_decay);

    Rng batch_rng = Rng(seed).fork(0xBA7C);
    std::vector<int64_t> perm;
    size_t cursor = 0;
    auto next_index = [&]() {
        if (cursor >= perm.size()) {
            perm.resize(data.examples.size());
            std::iota(perm.begin(), perm.end(), 0);
            for (int64_t i = static_cast<int64_t>(perm.size()) - 1; i > 0; --i)
                std::swap(perm[static_cast<size_t>(i)],
                          perm[static_cast<size_t>(batch_rng.uniform_int(0, i))]);
            cursor = 0;
        }
        return perm[cursor++];
    };

    TrainResult result;
    const auto strides = model.strides();
    for (int64_t iter = 0; iter < schedule.iterations; ++iter) {
        const auto t0 = std::chrono::steady_clock::now();
        double lr = schedule.lr;
        if (iter >= schedule.iterations * 5 / 6)
            lr *= 0.01;
        else if (iter >= schedule.iterations * 2 / 3)
            lr *= 0.1;
        // short linear warmup guards the raw random init against blowup
        const int64_t warmup = std::max<int64_t>(1, schedule.iterations / 20);
        if (iter < warmup) lr *= static_cast<double>(iter + 1) / static_cast<double>(warmup);
        opt.set_lr(lr);

        std::vector<int64_t> ids;
        Tensor images({schedule.batch, 3, S, S});
        std::vector<std::vector<Target>> targets;
        for (int64_t b = 0; b < schedule.batch; ++b) {
            const auto& ex = data.examples[static_cast<size_t>(next_index())];
            ids.push_back(ex.image_id);
            Tensor one = ex.image(S);
            std::copy(one.data(), one.data() + one.numel(),
                      images.data() + b * 3 * S * S);
            targets.push_back(
                assign_targets(ex.gt, strides, model.cfg.assign_thresholds));
        }

        LossParts loss;
        try {
            HeadOutputs out = model.forward(images, true);
            loss = compute_loss(out, targets, schedule.weights);
            if (!std::isfinite(loss.total->value[0]))
                throw std::runtime_error("non-finite total loss");
        } catch (const std::runtime_error& e) {
            // non-finite activations surface here; name the offending batch
            std::string msg = "train: aborted at iter " + std::to_string(iter) + " (" + e.what() +
                              "); batch ids:";
            for (int64_t id : ids) msg += " " + std::to_string(id);
            throw std::runtime_error(msg);
        }
        backward(loss.total);
        if (schedule.clip_norm > 0) {
            double sq = 0;
            for (const auto& p : plist)
                for (int64_t i = 0; i < p.var->grad.numel(); ++i)
                    sq += p.var->grad[i] * p.var->grad[i];
            const double norm = std::sqrt(sq);
            if (norm > schedule.clip_norm) {
                const double f = schedule.clip_norm / norm;
                for (const auto& p : plist)
                    for (int64_t i = 0; i < p.var->grad.numel(); ++i) p.var->grad[i] *= f;
            }
        }
        opt.step();
        opt.zero_grad();

        const auto t1 = std::chrono::steady_clock::now();
        result.log.push_back({iter, lr, loss.total->value[0], loss.obj, loss.cls, loss.box,
                              std::chrono::duration<double, std::milli>(t1 - t0).count()});
        result.batch_ids.push_back(std::move(ids));
    }
    return result;
}

void write_train_csv(const std::string& path, const std::vector<LogRow>& log) {
    std::ofstream f(path);
    if (!f) throw std::runtime_error("write_train_csv: cannot open " + path);
    f << "iter,lr,loss_total,loss_obj,loss_cls,loss_box,wallclock_ms\n";
    char buf[256];
    for (const auto& r : log) {
        std::snprintf(buf, sizeof(buf), "%lld,%.17g,%.17g,%.17g,%.17g,%.17g,%.3f\n",
                      static_cast<long long>(r.iter), r.lr, r.total, r.obj, r.cls, r.box,
                      r.wallclock_ms);
        f << buf;
    }
}

void write_batch_log(const std::string& path, const std::vector<std::vector<int64_t>>& batches) {
    std::ofstream f(path);
    if (!f) throw std::runtime_error("write_batch_log: cannot open " + path);
    for (size_t i = 0; i < batches.size(); ++i) {
        f << i << ":";
        for (size_t k = 0; k < batches[i].size(); ++k)
            f << (k ? "," : "") << batches[i][k];
        f << "\n";
    }
}

DetectionSet predict(Detector& model, const LoadedExample& example, double score_threshold,
                     double nms_iou) {
    const int64_t S = static_cast<int64_t>(std::sqrt(example.pixels.size() / 3));
    HeadOutputs out = model.forward(example.image(S), false);
    const int64_t K = out.levels[0].cls->value.dim(1);

    std::vector<std::vector<Detection>> per_class(static_cast<size_t>(K));
    for (size_t l = 0; l < out.levels.size(); ++l) {
        const Tensor& zo = out.levels[l].obj->value;
        const Tensor& zc = out.levels[l].cls->value;
        const Tensor& zb = out.levels[l].box->value;
        const int64_t H = zo.dim(2), W = zo.dim(3);
        const int s = out.strides[l];
        for (int64_t r = 0; r < H; ++r)
            for (int64_t c = 0; c < W; ++c) {
                const double pobj = sigmoid(zo.at4(0, 0, r, c));
                if (pobj < score_threshold) continue;
                double zmax = -1e300;
                for (int64_t k = 0; k < K; ++k) zmax = std::max(zmax, zc.at4(0, k, r, c));
                double denom = 0;
                for (int64_t k = 0; k < K; ++k) denom += std::exp(zc.at4(0, k, r, c) - zmax);
                int64_t best = 0;
                double bestp = -1;
                for (int64_t k = 0; k < K; ++k) {
                    const double pk = std::exp(zc.at4(0, k, r, c) - zmax) / denom;
                    if (pk > bestp) {
                        bestp = pk;
                        best = k;
                    }
                }
                const double score = pobj * bestp;
                if (score < score_threshold) continue;
                const double cx = (static_cast<double>(c) + sigmoid(zb.at4(0, 0, r, c))) * s;
                const double cy = (static_cast<double>(r) + sigmoid(zb.at4(0, 1, r, c))) * s;
                const double w = std::exp(std::clamp(zb.at4(0, 2, r, c), -8.0, 8.0)) * s;
                const double h = std::exp(std::clamp(zb.at4(0, 3, r, c), -8.0, 8.0)) * s;
                per_class[static_cast<size_t>(best)].push_back(
                    {static_cast<int>(best), Box{cx - w / 2, cy - h / 2, w, h}, score});
            }
    }

    DetectionSet ds;
    ds.image_id = example.image_id;
    for (auto& cands : per_class)
        for (auto& d : greedy_nms(std::move(cands), nms_iou)) ds.dets.push_back(std::move(d));
    return ds;
}

std::vector<Detection> greedy_nms(std::vector<Detection> dets, double nms_iou) {
    std::sort(dets.begin(), dets.end(), [](const Detection& a, const Detection& b) {
        if (a.score != b.score) return a.score > b.score;
        return std::tie(a.box.x, a.box.y) < std::tie(b.box.x, b.box.y);
    });
    std::vector<Detection> kept;
    for (const auto& d : dets) {
        bool suppressed = false;
        for (const auto& k : kept)
            if (compute_iou(d.box, k.box) >= nms_iou) suppressed = true;
        if (!suppressed) kept.push_back(d);
    }
    return kept;
}

std::vector<DetectionSet> predict_all(Detector& model, const Dataset& data,
                                      double score_threshold, double nms_iou) {
    std::vector<DetectionSet> out;
    out.reserve(data.examples.size());
    for (const auto& ex : data.examples)
        out.push_back(predict(model, ex, score_threshold, nms_iou));
    return out;
}

}  // namespace s2neck
