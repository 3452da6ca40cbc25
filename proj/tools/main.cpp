#include <CLI11.hpp>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <nlohmann/json.hpp>

#include "s2neck/ablation.hpp"
#include "s2neck/checkpoint.hpp"
#include "s2neck/detector.hpp"
#include "s2neck/scalespace.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;
using namespace s2neck;

namespace {

json default_config() {
    return json{{"seed", 1},
                {"data.path", ""},
                {"out.dir", "runs/out"},
                {"backbone.stem", 8},
                {"backbone.stages", {16, 24, 32, 40}},
                {"neck.type", "pan"},
                {"neck.width", 16},
                {"s2.enabled", true},
                {"s2.kernel", {3, 3, 3}},
                {"s2.targets", {3}},
                {"s2.two_stage", false},
                {"head.width", 16},
                {"head.classes", 3},
                {"assign.thresholds", {16.0, 100.0}},
                {"train.iterations", 3000},
                {"train.batch", 8},
                {"train.lr", 0.2},
                {"train.momentum", 0.9},
                {"train.weight_decay", 5e-4},
                {"train.clip_norm", 1.0},
                {"train.w_obj", 1.0},
                {"train.w_cls", 1.0},
                {"train.w_box", 2.0},
                {"train.obj_pos", 16.0},
                {"eval.score_threshold", 0.1},
                {"eval.nms_iou", 0.5},
                {"gen.train_count", 2000},
                {"gen.val_count", 500},
                {"gen.image_size", 128},
                {"gen.p_small", 0.6},
                {"gen.p_medium", 0.25},
                {"gen.p_large", 0.15},
                {"ablate.axis", "neck"},
                {"ablate.seeds", {1, 2, 3}}};
}

// Common options shared by model-running subcommands. Precedence:
// defaults < --config file < individual flags / --set overrides.
struct ConfigCli {
    std::string config_file;
    std::vector<std::string> sets;
    std::string out, data, s2, neck;
    int64_t seed = -1, iters = -1, batch = -1;
    double lr = -1;

    void attach(CLI::App* cmd) {
        cmd->add_option("--config", config_file, "JSON config file with flat dotted keys");
        cmd->add_option("--set", sets, "override: key=JSON-value (repeatable)");
        cmd->add_option("--out", out, "output directory");
        cmd->add_option("--data", data, "dataset directory");
        cmd->add_option("--s2", s2, "on|off: toggle the scale-sequence module");
        cmd->add_option("--neck", neck, "pan|fpn");
        cmd->add_option("--seed", seed, "master seed");
        cmd->add_option("--iters", iters, "training iterations");
        cmd->add_option("--batch", batch, "batch size");
        cmd->add_option("--lr", lr, "base learning rate");
    }

    json resolve() const {
        json cfg = default_config();
        if (!config_file.empty()) {
            std::ifstream f(config_file);
            if (!f) throw CLI::ValidationError("cannot open config file " + config_file);
            const json file = json::parse(f);
            for (auto it = file.begin(); it != file.end(); ++it) {
                if (!cfg.contains(it.key()))
                    throw CLI::ValidationError("unknown config key '" + it.key() + "'");
                cfg[it.key()] = it.value();
            }
        }
        for (const std::string& s : sets) {
            const auto eq = s.find('=');
            if (eq == std::string::npos) throw CLI::ValidationError("--set expects key=value");
            const std::string key = s.substr(0, eq);
            if (!cfg.contains(key)) throw CLI::ValidationError("unknown config key '" + key + "'");
            cfg[key] = json::parse(s.substr(eq + 1));
        }
        if (!out.empty()) cfg["out.dir"] = out;
        if (!data.empty()) cfg["data.path"] = data;
        if (seed >= 0) cfg["seed"] = seed;
        if (iters >= 0) cfg["train.iterations"] = iters;
        if (batch >= 0) cfg["train.batch"] = batch;
        if (lr >= 0) cfg["train.lr"] = lr;
        if (!s2.empty()) {
            if (s2 != "on" && s2 != "off") throw CLI::ValidationError("--s2 expects on|off");
            cfg["s2.enabled"] = (s2 == "on");
        }
        if (!neck.empty()) cfg["neck.type"] = neck;
        return cfg;
    }
};

DetectorConfig detector_config(const json& cfg) {
    DetectorConfig d;
    d.backbone.stem = cfg.at("backbone.stem").get<int64_t>();
    d.backbone.stages = cfg.at("backbone.stages").get<std::vector<int64_t>>();
    d.neck = cfg.at("neck.type").get<std::string>();
    d.neck_width = cfg.at("neck.width").get<int64_t>();
    d.use_s2 = cfg.at("s2.enabled").get<bool>();
    const auto kernel = cfg.at("s2.kernel").get<std::vector<int64_t>>();
    if (kernel.size() != 3) throw std::runtime_error("s2.kernel expects 3 entries");
    d.s2.kernel_l = kernel[0];
    d.s2.kernel_h = kernel[1];
    d.s2.kernel_w = kernel[2];
    d.s2.two_stage_adapter = cfg.at("s2.two_stage").get<bool>();
    const auto targets = cfg.at("s2.targets").get<std::vector<int>>();
    d.s2_targets = std::set<int>(targets.begin(), targets.end());
    d.head.width = cfg.at("head.width").get<int64_t>();
    d.head.num_classes = cfg.at("head.classes").get<int64_t>();
    d.assign_thresholds = cfg.at("assign.thresholds").get<std::vector<double>>();
    return d;
}

TrainSchedule train_schedule(const json& cfg) {
    TrainSchedule s;
    s.iterations = cfg.at("train.iterations").get<int64_t>();
    s.batch = cfg.at("train.batch").get<int64_t>();
    s.lr = cfg.at("train.lr").get<double>();
    s.momentum = cfg.at("train.momentum").get<double>();
    s.weight_decay = cfg.at("train.weight_decay").get<double>();
    s.clip_norm = cfg.at("train.clip_norm").get<double>();
    s.weights.obj = cfg.at("train.w_obj").get<double>();
    s.weights.cls = cfg.at("train.w_cls").get<double>();
    s.weights.box = cfg.at("train.w_box").get<double>();
    s.weights.obj_pos = cfg.at("train.obj_pos").get<double>();
    return s;
}

void echo_config(const json& cfg, const std::string& out_dir) {
    fs::create_directories(out_dir);
    std::ofstream f(fs::path(out_dir) / "config.json");
    f << cfg.dump(2) << "\n";
    std::cout << cfg.dump(2) << "\n";
}

int threads_from_env() {
    // determinism cap: kernels run single-threaded, env can only confirm that
    const char* env = std::getenv("S2NECK_THREADS");
    if (!env) return 1;
    const int v = std::atoi(env);
    if (v < 1) throw std::runtime_error("S2NECK_THREADS must be a positive integer");
    return 1;  // current kernels are single-threaded regardless of the cap
}

Dataset load_split(const json& cfg, const std::string& split) {
    const std::string path = cfg.at("data.path").get<std::string>();
    if (path.empty()) throw std::runtime_error("data.path not set (use --data)");
    return load_dataset(path, split);
}

int cmd_gen_data(const json& cfg) {
    DatasetManifest m;
    m.image_size = cfg.at("gen.image_size").get<int64_t>();
    m.train_count = cfg.at("gen.train_count").get<int64_t>();
    m.val_count = cfg.at("gen.val_count").get<int64_t>();
    m.p_small = cfg.at("gen.p_small").get<double>();
    m.p_medium = cfg.at("gen.p_medium").get<double>();
    m.p_large = cfg.at("gen.p_large").get<double>();
    m.seed = cfg.at("seed").get<uint64_t>();
    const std::string out = cfg.at("out.dir").get<std::string>();
    generate_dataset(m, out);
    std::cout << "dataset written to " << out << "\n";
    return 0;
}

int cmd_train(const json& cfg) {
    const std::string out = cfg.at("out.dir").get<std::string>();
    Dataset data = load_split(cfg, "train");
    Detector model(detector_config(cfg), cfg.at("seed").get<uint64_t>());
    TrainResult r = train(model, data, train_schedule(cfg), cfg.at("seed").get<uint64_t>());
    fs::create_directories(out);
    write_train_csv((fs::path(out) / "train_log.csv").string(), r.log);
    write_batch_log((fs::path(out) / "batches.txt").string(), r.batch_ids);
    save_checkpoint((fs::path(out) / "checkpoint").string(), model.params(), model.buffers(),
                    cfg.dump());
    std::cout << "final loss " << r.log.back().total << "\n";
    return 0;
}

int cmd_eval(const json& cfg, const std::string& checkpoint_dir, const std::string& split) {
    const std::string out = cfg.at("out.dir").get<std::string>();
    const json ck_cfg = json::parse(checkpoint_config(checkpoint_dir));
    Detector model(detector_config(ck_cfg), ck_cfg.at("seed").get<uint64_t>());
    load_checkpoint(checkpoint_dir, model.params(), model.buffers());
    Dataset data = load_split(cfg, split);
    std::vector<DetectionSet> dets = predict_all(model, data,
                                                 cfg.at("eval.score_threshold").get<double>(),
                                                 cfg.at("eval.nms_iou").get<double>());
    std::vector<GroundTruthSet> gts;
    for (const auto& ex : data.examples) gts.push_back(ex.gt);
    EvalReport rep = evaluate_ap(dets, gts, static_cast<int>(model.cfg.head.num_classes));
    fs::create_directories(out);
    std::ofstream((fs::path(out) / "report.json").string()) << rep.to_json() << "\n";
    std::cout << rep.to_json() << "\n";
    return 0;
}

int cmd_ablate(const json& cfg) {
    const std::string out = cfg.at("out.dir").get<std::string>();
    AblationConfig ab;
    ab.axis = cfg.at("ablate.axis").get<std::string>();
    ab.base = detector_config(cfg);
    ab.schedule = train_schedule(cfg);
    ab.seeds = cfg.at("ablate.seeds").get<std::vector<uint64_t>>();
    ab.score_threshold = cfg.at("eval.score_threshold").get<double>();
    ab.nms_iou = cfg.at("eval.nms_iou").get<double>();
    Dataset train_set = load_split(cfg, "train");
    Dataset val_set = load_split(cfg, "val");
    run_ablation(ab, train_set, val_set, out);
    std::cout << "ablation table written to " << (fs::path(out) / "ablation.csv").string()
              << "\n";
    return 0;
}

int cmd_bench(const json& cfg) {
    const std::string out = cfg.at("out.dir").get<std::string>();
    fs::create_directories(out);
    const uint64_t seed = cfg.at("seed").get<uint64_t>();
    Rng rng(seed);
    const int64_t S = cfg.at("gen.image_size").get<int64_t>();

    std::ofstream csv(fs::path(out) / "bench.csv");
    csv << "model,batch,median_ms_per_image,p95_ms_per_image\n";
    for (const bool with_s2 : {false, true}) {
        json variant = cfg;
        variant["s2.enabled"] = with_s2;
        Detector model(detector_config(variant), seed);
        for (const int64_t batch : {int64_t{1}, int64_t{8}}) {
            Tensor images = rng.uniform_tensor({batch, 3, S, S}, 0, 1);
            BenchResult r = bench_runtime([&] { model.forward(images, false); }, batch, 10);
            const std::string name = with_s2 ? "pan_s2" : "pan";
            char buf[160];
            std::snprintf(buf, sizeof(buf), "%s,%lld,%.4f,%.4f\n", name.c_str(),
                          static_cast<long long>(batch), r.median_ms_per_image,
                          r.p95_ms_per_image);
            csv << buf;
            std::cout << buf;
        }
    }
    return 0;
}

int cmd_scalespace(const json& cfg, const std::string& input, std::vector<double> sigmas) {
    const std::string out = cfg.at("out.dir").get<std::string>();
    fs::create_directories(out);
    if (sigmas.empty()) sigmas = {0.8, 1.2, 1.6, 2.4, 3.2};
    Tensor base;
    if (!input.empty()) {
        int64_t w = 0, h = 0;
        const auto rgb = read_ppm(input, w, h);
        base = Tensor({h, w});
        for (int64_t i = 0; i < w * h; ++i)
            base[i] = (rgb[static_cast<size_t>(3 * i)] + rgb[static_cast<size_t>(3 * i + 1)] +
                       rgb[static_cast<size_t>(3 * i + 2)]) /
                      (3.0 * 255.0);
    } else {
        Rng rng(cfg.at("seed").get<uint64_t>());
        base = rng.uniform_tensor({64, 64}, 0, 1);
    }
    ScaleSpace ss = build_scale_space(base, sigmas);
    for (size_t i = 0; i < ss.slices.size(); ++i) {
        char name[64];
        std::snprintf(name, sizeof(name), "sigma_%.3f.pgm", ss.sigmas[i]);
        write_pgm((fs::path(out) / name).string(), ss.slices[i]);
    }
    std::cout << "wrote " << ss.slices.size() << " slices to " << out << "\n";
    return 0;
}

int cmd_gradcheck(const json& cfg, const std::string& module) {
    const uint64_t seed = cfg.at("seed").get<uint64_t>();
    Rng rng(seed);
    double err = 0;
    if (module == "s2") {
        S2Config scfg;
        S2Module s2(2, scfg, rng);
        err = grad_check(
            [&s2](const std::vector<Var>& v) {
                PyramidFeatures pyr;
                pyr.first_level = 3;
                pyr.width = 2;
                pyr.levels = {v[0], v[1], v[2]};
                Var feat = s2.forward(build_general_view(pyr, 3), true);
                Var fused = fuse_s2(v[0], feat, FuseMode::OneStage, nullptr);
                return sum_all(mul(fused, fused));
            },
            {rng.normal_tensor({1, 2, 4, 4}), rng.normal_tensor({1, 2, 2, 2}),
             rng.normal_tensor({1, 2, 1, 1})});
    } else if (module == "conv2d") {
        Tensor w = rng.normal_tensor({2, 3, 3, 3});
        err = grad_check(
            [&](const std::vector<Var>& v) {
                return sum_all(mul(conv2d(v[0], v[1], nullptr, {1, 1}),
                                   conv2d(v[0], v[1], nullptr, {1, 1})));
            },
            {rng.normal_tensor({1, 3, 5, 5}), w});
    } else if (module == "conv3d") {
        err = grad_check(
            [&](const std::vector<Var>& v) {
                kernels::Conv3dSpec spec;
                spec.pad_l = spec.pad_h = spec.pad_w = 1;
                Var y = conv3d(v[0], v[1], nullptr, spec);
                return sum_all(mul(y, y));
            },
            {rng.normal_tensor({1, 2, 3, 4, 4}), rng.normal_tensor({2, 2, 3, 3, 3})});
    } else {
        throw CLI::ValidationError("--module expects s2|conv2d|conv3d");
    }
    std::cout << "max rel-err " << err << "\n";
    if (err >= 1e-4) {
        std::cerr << "gradcheck failed (>= 1e-4)\n";
        return 2;
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"scale-sequence feature detection toolkit"};
    app.require_subcommand(1);

    ConfigCli gen_cfg, train_cfg, eval_cfg, ablate_cfg, bench_cfg, ss_cfg, gc_cfg;
    std::string eval_checkpoint, eval_split = "val", ss_input, gc_module = "s2";
    std::vector<double> ss_sigmas;
    int ablate_seed_count = 0;

    auto* gen = app.add_subcommand("gen-data", "generate the synthetic dataset");
    gen_cfg.attach(gen);
    gen->add_option("--train", [&](auto v) { gen_cfg.sets.push_back("gen.train_count=" + v[0]); return true; }, "train image count");
    gen->add_option("--val", [&](auto v) { gen_cfg.sets.push_back("gen.val_count=" + v[0]); return true; }, "val image count");

    auto* tr = app.add_subcommand("train", "train a detector");
    train_cfg.attach(tr);

    auto* ev = app.add_subcommand("eval", "evaluate a checkpoint");
    eval_cfg.attach(ev);
    ev->add_option("--checkpoint", eval_checkpoint, "checkpoint directory")->required();
    ev->add_option("--split", eval_split, "train|val|all");

    auto* ab = app.add_subcommand("ablate", "run an ablation table");
    ablate_cfg.attach(ab);
    ab->add_option("--axis", [&](auto v) { ablate_cfg.sets.push_back("ablate.axis=\"" + v[0] + "\""); return true; }, "concat-position|neck");
    ab->add_option("--seeds", ablate_seed_count, "number of seeds (1..N)");

    auto* be = app.add_subcommand("bench", "forward-pass runtime with/without s2");
    bench_cfg.attach(be);

    auto* ss = app.add_subcommand("scalespace", "write gaussian scale-space slices");
    ss_cfg.attach(ss);
    ss->add_option("--input", ss_input, "PPM image (grayscale via channel mean)");
    ss->add_option("--sigmas", ss_sigmas, "sigma list");

    auto* gc = app.add_subcommand("gradcheck", "finite-difference gradient check");
    gc_cfg.attach(gc);
    gc->add_option("--module", gc_module, "s2|conv2d|conv3d");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 1;
    }

    try {
        threads_from_env();
        if (ablate_seed_count > 0) {
            std::string list = "[";
            for (int i = 1; i <= ablate_seed_count; ++i)
                list += (i > 1 ? "," : "") + std::to_string(i);
            ablate_cfg.sets.push_back("ablate.seeds=" + list + "]");
        }
        ConfigCli* active = nullptr;
        if (gen->parsed()) active = &gen_cfg;
        if (tr->parsed()) active = &train_cfg;
        if (ev->parsed()) active = &eval_cfg;
        if (ab->parsed()) active = &ablate_cfg;
        if (be->parsed()) active = &bench_cfg;
        if (ss->parsed()) active = &ss_cfg;
        if (gc->parsed()) active = &gc_cfg;
        json cfg = active->resolve();
        cfg["format_version"] = 1;  // provenance stamp, not a settable key
        echo_config(cfg, cfg.at("out.dir").get<std::string>());

        if (gen->parsed()) return cmd_gen_data(cfg);
        if (tr->parsed()) return cmd_train(cfg);
        if (ev->parsed()) return cmd_eval(cfg, eval_checkpoint, eval_split);
        if (ab->parsed()) return cmd_ablate(cfg);
        if (be->parsed()) return cmd_bench(cfg);
        if (ss->parsed()) return cmd_scalespace(cfg, ss_input, ss_sigmas);
        if (gc->parsed()) return cmd_gradcheck(cfg, gc_module);
        return 1;
    } catch (const CLI::ValidationError& e) {
        std::cerr << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
}
