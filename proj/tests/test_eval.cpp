#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <tuple>

#include "s2neck/eval.hpp"
#include "s2neck/neck.hpp"

using namespace s2neck;

namespace {

// Brute-force reference: flat per-(class, threshold, bucket) evaluation with
// explicit TP flags and a right-to-left precision envelope. Written separately
// from the library evaluator on purpose.
struct RefInstance {
    std::vector<DetectionSet> dets;
    std::vector<GroundTruthSet> gts;
};

double ref_iou(const Box& a, const Box& b) {
    const double x1 = std::max(a.x, b.x), y1 = std::max(a.y, b.y);
    const double x2 = std::min(a.x + a.w, b.x + b.w), y2 = std::min(a.y + a.h, b.y + b.h);
    const double inter = std::max(0.0, x2 - x1) * std::max(0.0, y2 - y1);
    return inter / (a.area() + b.area() - inter);
}

double ref_ap_single(const RefInstance& inst, int cls, double thr, double lo, double hi) {
    // gather GTs per image for this class
    struct G {
        Box box;
        bool used = false;
    };
    std::map<int64_t, std::vector<G>> gts;
    int64_t npos = 0;
    for (const auto& s : inst.gts)
        for (const auto& o : s.objects)
            if (o.class_id == cls) {
                gts[s.image_id].push_back({o.box});
                if (o.box.area() >= lo && o.box.area() < hi) ++npos;
            }
    if (npos == 0) return -1.0;

    struct D {
        int64_t image;
        int64_t order;
        double score;
        Box box;
    };
    std::vector<D> dets;
    for (const auto& s : inst.dets) {
        int64_t k = 0;
        for (const auto& d : s.dets)
            if (d.class_id == cls) dets.push_back({s.image_id, k++, d.score, d.box});
    }
    std::stable_sort(dets.begin(), dets.end(), [](const D& a, const D& b) {
        return std::tie(b.score, a.image, a.order) < std::tie(a.score, b.image, b.order);
    });

    std::vector<int> flags;  // 1 TP, 0 FP (ignored detections omitted)
    for (const auto& d : dets) {
        auto& cand = gts[d.image];
        double best_iou_counted = -1, best_iou_ignored = -1;
        int pick_counted = -1, pick_ignored = -1;
        for (size_t g = 0; g < cand.size(); ++g) {
            if (cand[g].used) continue;
            const double iou = ref_iou(d.box, cand[g].box);
            if (iou < thr) continue;
            const bool counted = cand[g].box.area() >= lo && cand[g].box.area() < hi;
            if (counted && iou > best_iou_counted) {
                best_iou_counted = iou;
                pick_counted = static_cast<int>(g);
            }
            if (!counted && iou > best_iou_ignored) {
                best_iou_ignored = iou;
                pick_ignored = static_cast<int>(g);
            }
        }
        if (pick_counted >= 0) {
            cand[static_cast<size_t>(pick_counted)].used = true;
            flags.push_back(1);
        } else if (pick_ignored >= 0) {
            cand[static_cast<size_t>(pick_ignored)].used = true;
        } else if (d.box.area() >= lo && d.box.area() < hi) {
            flags.push_back(0);
        }
    }

    std::vector<double> prec, rec;
    int tp = 0, fp = 0;
    for (int f : flags) {
        f ? ++tp : ++fp;
        prec.push_back(double(tp) / double(tp + fp));
        rec.push_back(double(tp) / double(npos));
    }
    for (size_t i = prec.size(); i-- > 1;) prec[i - 1] = std::max(prec[i - 1], prec[i]);
    double ap = 0;
    for (int i = 0; i <= 100; ++i) {
        const double r = i / 100.0;
        const auto it = std::lower_bound(rec.begin(), rec.end(), r);
        if (it != rec.end()) ap += prec[static_cast<size_t>(it - rec.begin())];
    }
    return ap / 101.0;
}

EvalReport ref_evaluate(const RefInstance& inst, int num_classes, const BucketThresholds& b) {
    const double inf = std::numeric_limits<double>::infinity();
    auto mean = [](const std::vector<double>& v) {
        double s = 0;
        int n = 0;
        for (double x : v)
            if (x >= 0) {
                s += x;
                ++n;
            }
        return n ? s / n : -1.0;
    };
    EvalReport r;
    std::vector<double> all, a50, a75, as, am, al;
    r.per_class_ap.assign(static_cast<size_t>(num_classes), -1.0);
    for (int c = 0; c < num_classes; ++c) {
        std::vector<double> cls;
        for (double thr : coco_iou_thresholds()) {
            const double a = ref_ap_single(inst, c, thr, 0, inf);
            cls.push_back(a);
            all.push_back(a);
            if (thr == 0.50) a50.push_back(a);
            if (thr == 0.75) a75.push_back(a);
            as.push_back(ref_ap_single(inst, c, thr, 0, b.small_area));
            am.push_back(ref_ap_single(inst, c, thr, b.small_area, b.medium_area));
            al.push_back(ref_ap_single(inst, c, thr, b.medium_area, inf));
        }
        r.per_class_ap[static_cast<size_t>(c)] = mean(cls);
    }
    r.ap = mean(all);
    r.ap50 = mean(a50);
    r.ap75 = mean(a75);
    r.ap_s = mean(as);
    r.ap_m = mean(am);
    r.ap_l = mean(al);
    return r;
}

void check_reports_equal(const EvalReport& a, const EvalReport& b) {
    CHECK(a.ap == doctest::Approx(b.ap).epsilon(1e-12));
    CHECK(a.ap50 == doctest::Approx(b.ap50).epsilon(1e-12));
    CHECK(a.ap75 == doctest::Approx(b.ap75).epsilon(1e-12));
    CHECK(a.ap_s == doctest::Approx(b.ap_s).epsilon(1e-12));
    CHECK(a.ap_m == doctest::Approx(b.ap_m).epsilon(1e-12));
    CHECK(a.ap_l == doctest::Approx(b.ap_l).epsilon(1e-12));
}

RefInstance random_instance(Rng& rng, const BucketThresholds& b) {
    RefInstance inst;
    const int64_t images = rng.uniform_int(1, 5);
    for (int64_t i = 0; i < images; ++i) {
        GroundTruthSet g;
        g.image_id = i;
        const int64_t ngt = rng.uniform_int(0, 6);
        for (int64_t k = 0; k < ngt; ++k) {
            Box box{double(rng.uniform_int(0, 24)), double(rng.uniform_int(0, 24)),
                    double(rng.uniform_int(2, 12)), double(rng.uniform_int(2, 12))};
            g.objects.push_back({static_cast<int>(rng.uniform_int(0, 2)), box});
        }
        inst.gts.push_back(g);
        DetectionSet d;
        d.image_id = i;
        const int64_t nd = rng.uniform_int(0, 8);
        for (int64_t k = 0; k < nd; ++k) {
            Box box{double(rng.uniform_int(0, 24)), double(rng.uniform_int(0, 24)),
                    double(rng.uniform_int(2, 12)), double(rng.uniform_int(2, 12))};
            // sometimes perturb a GT box instead, so matches actually occur
            if (!g.objects.empty() && rng.uniform() < 0.6) {
                const auto& src = g.objects[static_cast<size_t>(
                    rng.uniform_int(0, static_cast<int64_t>(g.objects.size()) - 1))];
                box = src.box;
                box.x += rng.uniform_int(-2, 2);
                box.y += rng.uniform_int(-2, 2);
            }
            d.dets.push_back({static_cast<int>(rng.uniform_int(0, 2)), box,
                              std::round(rng.uniform() * 20) / 20.0});
        }
        inst.dets.push_back(d);
    }
    (void)b;
    return inst;
}

}  // namespace

TEST_CASE("compute_iou hand cases") {
    Box a{0, 0, 2, 2};
    CHECK(compute_iou(a, a) == 1.0);
    CHECK(compute_iou(a, Box{10, 10, 2, 2}) == 0.0);
    CHECK(compute_iou(a, Box{1, 0, 2, 2}) == doctest::Approx(2.0 / 6.0).epsilon(1e-12));
    CHECK_THROWS(compute_iou(Box{0, 0, 0, 0}, Box{5, 5, 0, 0}));
}

TEST_CASE("perfect single detection gives AP 1.0 at every threshold") {
    GroundTruthSet g;
    g.image_id = 0;
    g.objects.push_back({1, Box{10, 10, 20, 20}});
    DetectionSet d;
    d.image_id = 0;
    d.dets.push_back({1, Box{10, 10, 20, 20}, 0.8});
    EvalReport r = evaluate_ap({d}, {g}, 3);
    CHECK(r.ap == 1.0);
    CHECK(r.ap50 == 1.0);
    CHECK(r.ap75 == 1.0);
    CHECK(r.per_class_ap[1] == 1.0);
    CHECK(r.per_class_ap[0] == -1.0);  // no GT for the other classes
}

TEST_CASE("TP/FP score swap halves AP50") {
    GroundTruthSet g;
    g.image_id = 0;
    g.objects.push_back({0, Box{0, 0, 20, 20}});
    Box tp_box{0, 0, 20, 22};  // IoU 20*20/(20*22) ~= 0.909
    Box fp_box{60, 60, 20, 20};

    DetectionSet hi_tp;
    hi_tp.image_id = 0;
    hi_tp.dets.push_back({0, tp_box, 0.9});
    hi_tp.dets.push_back({0, fp_box, 0.8});
    CHECK(evaluate_ap({hi_tp}, {g}, 1).ap50 == 1.0);

    DetectionSet hi_fp;
    hi_fp.image_id = 0;
    hi_fp.dets.push_back({0, tp_box, 0.8});
    hi_fp.dets.push_back({0, fp_box, 0.9});
    CHECK(evaluate_ap({hi_fp}, {g}, 1).ap50 == doctest::Approx(0.5).epsilon(1e-12));
}

TEST_CASE("GT of area 36 lands in the small bucket denominator") {
    GroundTruthSet g;
    g.image_id = 0;
    g.objects.push_back({0, Box{5, 5, 6, 6}});
    EvalReport r = evaluate_ap({}, {g}, 1);
    CHECK(r.count_small == 1);
    CHECK(r.ap_s == 0.0);   // GT exists, nothing detected
    CHECK(r.ap_m == -1.0);  // empty bucket sentinel
    CHECK(r.ap_l == -1.0);
}

TEST_CASE("bucket counts partition the ground truth") {
    Rng rng(100);
    BucketThresholds b;
    for (int trial = 0; trial < 20; ++trial) {
        RefInstance inst = random_instance(rng, b);
        int64_t total = 0;
        for (const auto& g : inst.gts) total += static_cast<int64_t>(g.objects.size());
        EvalReport r = evaluate_ap(inst.dets, inst.gts, 3, coco_iou_thresholds(), b);
        CHECK(r.count_small + r.count_medium + r.count_large == total);
    }
}

TEST_CASE("evaluator equals the brute-force reference on random instances") {
    Rng rng(2024);
    BucketThresholds b;
    b.small_area = 36;
    b.medium_area = 100;
    for (int trial = 0; trial < 150; ++trial) {
        RefInstance inst = random_instance(rng, b);
        EvalReport got = evaluate_ap(inst.dets, inst.gts, 3, coco_iou_thresholds(), b);
        EvalReport want = ref_evaluate(inst, 3, b);
        check_reports_equal(got, want);
    }
}

TEST_CASE("AP is monotone under low-scored false positives") {
    Rng rng(31);
    BucketThresholds b;
    for (int trial = 0; trial < 40; ++trial) {
        RefInstance inst = random_instance(rng, b);
        bool any_gt = false;
        for (const auto& g : inst.gts) any_gt |= !g.objects.empty();
        if (!any_gt || inst.dets.empty()) continue;
        EvalReport base = evaluate_ap(inst.dets, inst.gts, 3, coco_iou_thresholds(), b);
        // append an in-bucket FP below every existing score
        RefInstance worse = inst;
        worse.dets[0].dets.push_back({static_cast<int>(rng.uniform_int(0, 2)),
                                      Box{200, 200, 8, 8}, 1e-6});
        EvalReport degraded = evaluate_ap(worse.dets, worse.gts, 3, coco_iou_thresholds(), b);
        if (base.ap >= 0) CHECK(degraded.ap <= base.ap + 1e-12);
    }
}

TEST_CASE("count_params closed form for the s2 block") {
    Rng rng(5);
    S2Config cfg;
    S2Module s2(16, cfg, rng);
    ParamList params;
    s2.collect("s2", params);
    ParamBreakdown pb = count_params(params);
    CHECK(pb.total == 3 * 3 * 3 * 16 * 16 + 16 + 2 * 16);  // 6960
    CHECK(pb.by_module.at("s2") == 6960);
    CHECK(count_params({}).total == 0);
}

TEST_CASE("bench_runtime reports stable medians and batch accounting") {
    Rng rng(6);
    Tensor x = rng.normal_tensor({1, 4, 16, 16});
    Tensor w = rng.normal_tensor({4, 4, 3, 3});
    auto fwd = [&] { kernels::conv2d(x, w, nullptr, {1, 1}); };
    BenchResult a = bench_runtime(fwd, 4, 20);
    BenchResult b2 = bench_runtime(fwd, 4, 20);
    CHECK(a.batch == 4);
    CHECK(a.iterations == 20);
    CHECK(a.median_ms_per_image > 0);
    CHECK(a.p95_ms_per_image >= a.median_ms_per_image);
    // informational stability bound; generous to tolerate scheduler noise
    CHECK(std::abs(a.median_ms_per_image - b2.median_ms_per_image) <
          0.5 * std::max(a.median_ms_per_image, b2.median_ms_per_image) + 0.01);
}
