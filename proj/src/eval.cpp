#include "s2neck/eval.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <limits>
#include <nlohmann/json.hpp>
#include <stdexcept>

namespace s2neck {

std::vector<double> coco_iou_thresholds() {
    std::vector<double> t;
    for (int i = 0; i < 10; ++i) t.push_back(0.50 + 0.05 * i);
    return t;
}

double compute_iou(const Box& a, const Box& b) {
    const double ix = std::max(0.0, std::min(a.x + a.w, b.x + b.w) - std::max(a.x, b.x));
    const double iy = std::max(0.0, std::min(a.y + a.h, b.y + b.h) - std::max(a.y, b.y));
    const double inter = ix * iy;
    const double uni = a.area() + b.area() - inter;
    if (uni <= 0) throw std::invalid_argument("compute_iou: zero-area union");
    return inter / uni;
}

namespace {

struct FlatDet {
    size_t image = 0;   // index into the per-image GT table
    int64_t order = 0;  // original position, tie-breaker for equal scores
    double score = 0;
    Box box;
};

struct ClassData {
    std::vector<std::vector<Box>> gts;  // per image
    std::vector<FlatDet> dets;
};

bool in_bucket(double area, double lo, double hi) { return area >= lo && area < hi; }

// AP for one class at one IoU threshold over one GT area bucket [lo, hi).
// COCO conventions: detections matched to out-of-bucket GTs are ignored, as
// are unmatched detections whose own area is out of bucket.
double ap_one(const ClassData& cd, double thr, double lo, double hi) {
    int64_t npos = 0;
    for (const auto& img : cd.gts)
        for (const auto& g : img)
            if (in_bucket(g.area(), lo, hi)) ++npos;
    if (npos == 0) return -1.0;

    std::vector<FlatDet> dets = cd.dets;
    std::sort(dets.begin(), dets.end(), [](const FlatDet& a, const FlatDet& b) {
        if (a.score != b.score) return a.score > b.score;
        if (a.image != b.image) return a.image < b.image;
        return a.order < b.order;
    });

    std::vector<std::vector<char>> matched(cd.gts.size());
    for (size_t i = 0; i < cd.gts.size(); ++i) matched[i].assign(cd.gts[i].size(), 0);

    std::vector<char> is_tp;  // over counted (non-ignored) detections, in score order
    is_tp.reserve(dets.size());
    for (const auto& d : dets) {
        const auto& gts = cd.gts[d.image];
        int best_in = -1, best_ig = -1;
        double iou_in = -1, iou_ig = -1;  // ties go to the earliest GT
        for (size_t g = 0; g < gts.size(); ++g) {
            if (matched[d.image][g]) continue;
            const double iou = compute_iou(d.box, gts[g]);
            if (iou < thr) continue;
            if (in_bucket(gts[g].area(), lo, hi)) {
                if (iou > iou_in) {
                    iou_in = iou;
                    best_in = static_cast<int>(g);
                }
            } else if (iou > iou_ig) {
                iou_ig = iou;
                best_ig = static_cast<int>(g);
            }
        }
        if (best_in >= 0) {
            matched[d.image][static_cast<size_t>(best_in)] = 1;
            is_tp.push_back(1);
        } else if (best_ig >= 0) {
            matched[d.image][static_cast<size_t>(best_ig)] = 1;  // ignored match
        } else if (in_bucket(d.box.area(), lo, hi)) {
            is_tp.push_back(0);  // counted false positive
        }  // else: unmatched out-of-bucket detection, ignored
    }

    // precision as a function of recall, then 101-point interpolation
    std::vector<double> recall, precision;
    int64_t tp = 0, fp = 0;
    for (char t : is_tp) {
        (t ? tp : fp)++;
        recall.push_back(static_cast<double>(tp) / static_cast<double>(npos));
        precision.push_back(static_cast<double>(tp) / static_cast<double>(tp + fp));
    }
    double ap = 0;
    for (int i = 0; i <= 100; ++i) {
        const double r = i / 100.0;
        double best = 0;
        for (size_t k = 0; k < recall.size(); ++k)
            if (recall[k] >= r) best = std::max(best, precision[k]);
        ap += best;
    }
    return ap / 101.0;
}

double mean_or_sentinel(const std::vector<double>& vals) {
    double sum = 0;
    int64_t n = 0;
    for (double v : vals)
        if (v >= 0) {
            sum += v;
            ++n;
        }
    return n > 0 ? sum / static_cast<double>(n) : -1.0;
}

}  // namespace

EvalReport evaluate_ap(const std::vector<DetectionSet>& dets,
                       const std::vector<GroundTruthSet>& gts, int num_classes,
                       const std::vector<double>& iou_thresholds,
                       const BucketThresholds& buckets) {
    // shared image-id universe: index images by GT order, detections by id
    std::vector<int64_t> image_ids;
    std::map<int64_t, size_t> image_index;
    for (const auto& g : gts) {
        image_index[g.image_id] = image_ids.size();
        image_ids.push_back(g.image_id);
    }

    std::vector<ClassData> classes(static_cast<size_t>(num_classes));
    for (auto& c : classes) c.gts.resize(image_ids.size());
    for (const auto& g : gts)
        for (const auto& o : g.objects)
            classes.at(static_cast<size_t>(o.class_id))
                .gts[image_index.at(g.image_id)]
                .push_back(o.box);
    for (const auto& ds : dets) {
        auto it = image_index.find(ds.image_id);
        if (it == image_index.end())
            throw std::invalid_argument("evaluate_ap: detection image id " +
                                        std::to_string(ds.image_id) + " has no ground truth set");
        int64_t order = 0;
        for (const auto& d : ds.dets) {
            if (!std::isfinite(d.score))
                throw std::invalid_argument("evaluate_ap: non-finite score");
            classes.at(static_cast<size_t>(d.class_id))
                .dets.push_back({it->second, order++, d.score, d.box});
        }
    }

    const double inf = std::numeric_limits<double>::infinity();
    const double s = buckets.small_area, m = buckets.medium_area;
    struct Range {
        double lo, hi;
    };
    const Range all{0, inf}, rs{0, s}, rm{s, m}, rl{m, inf};

    EvalReport rep;
    std::vector<double> ap_all, ap_50, ap_75, ap_small, ap_med, ap_large;
    rep.per_class_ap.assign(static_cast<size_t>(num_classes), -1.0);
    for (int c = 0; c < num_classes; ++c) {
        std::vector<double> cls_all;
        for (double thr : iou_thresholds) {
            const double a = ap_one(classes[static_cast<size_t>(c)], thr, all.lo, all.hi);
            cls_all.push_back(a);
            ap_all.push_back(a);
            if (std::abs(thr - 0.50) < 1e-12) ap_50.push_back(a);
            if (std::abs(thr - 0.75) < 1e-12) ap_75.push_back(a);
            ap_small.push_back(ap_one(classes[static_cast<size_t>(c)], thr, rs.lo, rs.hi));
            ap_med.push_back(ap_one(classes[static_cast<size_t>(c)], thr, rm.lo, rm.hi));
            ap_large.push_back(ap_one(classes[static_cast<size_t>(c)], thr, rl.lo, rl.hi));
        }
        rep.per_class_ap[static_cast<size_t>(c)] = mean_or_sentinel(cls_all);
    }
    rep.ap = mean_or_sentinel(ap_all);
    rep.ap50 = mean_or_sentinel(ap_50);
    rep.ap75 = mean_or_sentinel(ap_75);
    rep.ap_s = mean_or_sentinel(ap_small);
    rep.ap_m = mean_or_sentinel(ap_med);
    rep.ap_l = mean_or_sentinel(ap_large);

    for (const auto& g : gts)
        for (const auto& o : g.objects) {
            const double a = o.box.area();
            (a < s ? rep.count_small : a < m ? rep.count_medium : rep.count_large)++;
        }
    return rep;
}

std::string EvalReport::to_json() const {
    nlohmann::json j{{"AP", ap},
                     {"AP50", ap50},
                     {"AP75", ap75},
                     {"AP_S", ap_s},
                     {"AP_M", ap_m},
                     {"AP_L", ap_l},
                     {"per_class_AP", per_class_ap},
                     {"gt_counts",
                      {{"small", count_small}, {"medium", count_medium}, {"large", count_large}}}};
    return j.dump(2);
}

ParamBreakdown count_params(const ParamList& params) {
    ParamBreakdown out;
    for (const auto& p : params) {
        const int64_t n = p.var->value.numel();
        out.total += n;
        out.by_module[p.name.substr(0, p.name.find('.'))] += n;
    }
    return out;
}

BenchResult bench_runtime(const std::function<void()>& forward, int64_t batch, int iterations,
                          int warmup) {
    using clock = std::chrono::steady_clock;
    for (int i = 0; i < warmup; ++i) forward();
    std::vector<double> per_image;
    for (int i = 0; i < iterations; ++i) {
        const auto t0 = clock::now();
        forward();
        const auto t1 = clock::now();
        per_image.push_back(std::chrono::duration<double, std::milli>(t1 - t0).count() /
                            static_cast<double>(batch));
    }
    std::sort(per_image.begin(), per_image.end());
    BenchResult r;
    r.batch = batch;
    r.iterations = iterations;
    r.median_ms_per_image = per_image[per_image.size() / 2];
    const size_t p95 = std::min(per_image.size() - 1,
                                static_cast<size_t>(std::ceil(0.95 * per_image.size())) - 1);
    r.p95_ms_per_image = per_image[p95];
    return r;
}

void write_pr_svg(const std::string& path,
                  const std::vector<std::pair<std::string, std::vector<std::pair<double, double>>>>&
                      curves) {
    const int W = 440, H = 440, M = 40;  // canvas and margin
    const char* colors[] = {"#d62728", "#1f77b4", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"};
    std::ofstream f(path);
    if (!f) throw std::runtime_error("write_pr_svg: cannot open " + path);
    f << "<svg xmlns='http://www.w3.org/2000/svg' width='" << W << "' height='" << H << "'>\n";
    f << "<rect width='100%' height='100%' fill='white'/>\n";
    f << "<line x1='" << M << "' y1='" << H - M << "' x2='" << W - M << "' y2='" << H - M
      << "' stroke='black'/>\n";
    f << "<line x1='" << M << "' y1='" << M << "' x2='" << M << "' y2='" << H - M
      << "' stroke='black'/>\n";
    f << "<text x='" << W / 2 << "' y='" << H - 8 << "' font-size='12'>recall</text>\n";
    f << "<text x='8' y='" << H / 2 << "' font-size='12' transform='rotate(-90 12 " << H / 2
      << ")'>precision</text>\n";
    size_t ci = 0;
    for (const auto& [label, pts] : curves) {
        const char* color = colors[ci % 6];
        f << "<polyline fill='none' stroke='" << color << "' points='";
        for (const auto& [r, p] : pts)
            f << M + r * (W - 2 * M) << "," << (H - M) - p * (H - 2 * M) << " ";
        f << "'/>\n";
        f << "<text x='" << W - M - 120 << "' y='" << M + 14 * (ci + 1) << "' font-size='11' fill='"
          << color << "'>" << label << "</text>\n";
        ++ci;
    }
    f << "</svg>\n";
}

}  // namespace s2neck
