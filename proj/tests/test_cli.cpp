#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <nlohmann/json.hpp>
#include <sstream>
#include <string>
#include <vector>

#include "s2neck/detector.hpp"
#include "s2neck/eval.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;
using namespace s2neck;

namespace {

const std::string kCli = S2NECK_CLI_PATH;

int run(const std::string& args) {
    const std::string cmd = kCli + " " + args + " >/dev/null 2>&1";
    const int status = std::system(cmd.c_str());
    return WEXITSTATUS(status);
}

fs::path work_dir() {
    static fs::path dir = [] {
        fs::path d = fs::temp_directory_path() / "s2neck_cli_test";
        fs::remove_all(d);
        fs::create_directories(d);
        return d;
    }();
    return dir;
}

std::string read_file(const fs::path& p) {
    std::ifstream f(p, std::ios::binary);
    REQUIRE(f.good());
    std::ostringstream ss;
    ss << f.rdbuf();
    return ss.str();
}

// train_log.csv with the wallclock_ms column removed, so two runs of the same
// configuration can be compared for bitwise-equal losses
std::string csv_without_wallclock(const fs::path& p) {
    std::ifstream f(p);
    REQUIRE(f.good());
    std::string line, out;
    while (std::getline(f, line)) {
        const auto comma = line.rfind(',');
        REQUIRE(comma != std::string::npos);
        out += line.substr(0, comma) + "\n";
    }
    return out;
}

const std::string kTinyModel =
    " --set backbone.stem=4 --set \"backbone.stages=[8,12,16,16]\""
    " --set neck.width=8 --set head.width=8";

std::string data_dir() {
    static std::string dir = [] {
        const fs::path d = work_dir() / "data";
        REQUIRE(run("gen-data --out " + d.string() +
                    " --seed 7 --set gen.train_count=16 --set gen.val_count=6"
                    " --set gen.image_size=64") == 0);
        return d.string();
    }();
    return dir;
}

int64_t manifest_scalar_count(const fs::path& checkpoint) {
    const json m = json::parse(std::ifstream(checkpoint / "manifest.json"));
    int64_t total = 0;
    for (const auto& e : m.at("entries")) {
        int64_t n = 1;
        for (int64_t d : e.at("shape").get<std::vector<int64_t>>()) n *= d;
        total += n;
    }
    return total;
}

}  // namespace

TEST_CASE("help and usage exit codes") {
    CHECK(run("--help") == 0);
    for (const std::string sub :
         {"gen-data", "train", "eval", "ablate", "bench", "scalespace", "gradcheck"})
        CHECK(run(sub + " --help") == 0);
    CHECK(run("") == 1);                      // missing subcommand
    CHECK(run("no-such-command") == 1);       // unknown subcommand
    CHECK(run("train --no-such-flag") == 1);  // unknown flag
    CHECK(run("train --set nonsense") == 1);  // malformed override
    CHECK(run("train --set no.such.key=1") == 1);
    CHECK(run("train --out " + (work_dir() / "nodata").string()) == 2);  // missing data
    CHECK(run("eval --checkpoint " + (work_dir() / "missing").string() + " --data " +
              data_dir() + " --out " + (work_dir() / "e_missing").string()) == 2);
}

TEST_CASE("gradcheck subcommand stays under 1e-4") {
    for (const std::string mod : {"s2", "conv2d", "conv3d"})
        CHECK(run("gradcheck --module " + mod + " --seed 5 --out " +
                  (work_dir() / ("gc_" + mod)).string()) == 0);
    CHECK(run("gradcheck --module bogus --out " + (work_dir() / "gc_bad").string()) == 1);
}

TEST_CASE("config precedence: defaults < file < flags, echoed into the run dir") {
    const fs::path cfg_file = work_dir() / "base.json";
    std::ofstream(cfg_file) << json{{"train.lr", 0.07},
                                    {"train.iterations", 3},
                                    {"train.batch", 2},
                                    {"neck.width", 8},
                                    {"head.width", 8},
                                    {"backbone.stem", 4},
                                    {"backbone.stages", {8, 12, 16, 16}}}
                                   .dump();
    const fs::path out = work_dir() / "prec";
    REQUIRE(run("train --config " + cfg_file.string() + " --data " + data_dir() + " --out " +
                out.string() + " --lr 0.02 --seed 9") == 0);
    const json echoed = json::parse(std::ifstream(out / "config.json"));
    CHECK(echoed.at("train.lr").get<double>() == 0.02);         // flag beats file
    CHECK(echoed.at("train.iterations").get<int>() == 3);       // file beats default
    CHECK(echoed.at("train.batch").get<int>() == 2);
    CHECK(echoed.at("train.momentum").get<double>() == 0.9);    // untouched default
    CHECK(echoed.at("seed").get<int>() == 9);
    // the echoed config is exactly what the checkpoint carries
    const json ck = json::parse(std::ifstream(out / "checkpoint" / "manifest.json"));
    CHECK(ck.at("config") == echoed);
}

TEST_CASE("re-running the same train command is byte-identical except wallclock") {
    const std::string base = "train --data " + data_dir() + " --seed 3 --iters 4 --batch 2" +
                             kTinyModel;
    const fs::path a = work_dir() / "rep_a", b = work_dir() / "rep_b";
    REQUIRE(run(base + " --out " + a.string()) == 0);
    REQUIRE(run(base + " --out " + b.string()) == 0);
    CHECK(read_file(a / "checkpoint" / "params.bin") == read_file(b / "checkpoint" / "params.bin"));
    CHECK(read_file(a / "batches.txt") == read_file(b / "batches.txt"));
    CHECK(csv_without_wallclock(a / "train_log.csv") ==
          csv_without_wallclock(b / "train_log.csv"));
    json cfg_a = json::parse(std::ifstream(a / "config.json"));
    json cfg_b = json::parse(std::ifstream(b / "config.json"));
    cfg_a.erase("out.dir");
    cfg_b.erase("out.dir");
    CHECK(cfg_a == cfg_b);
}

TEST_CASE("--s2 off removes exactly the s2 parameters from the checkpoint") {
    const std::string base = "train --data " + data_dir() + " --seed 2 --iters 2 --batch 2" +
                             kTinyModel;
    const fs::path on = work_dir() / "s2_on", off = work_dir() / "s2_off";
    REQUIRE(run(base + " --s2 on --out " + on.string()) == 0);
    REQUIRE(run(base + " --s2 off --out " + off.string()) == 0);

    const json m_on = json::parse(std::ifstream(on / "checkpoint" / "manifest.json"));
    const json m_off = json::parse(std::ifstream(off / "checkpoint" / "manifest.json"));
    bool on_has_s2 = false;
    for (const auto& e : m_on.at("entries"))
        if (e.at("name").get<std::string>().rfind("s2.", 0) == 0) on_has_s2 = true;
    CHECK(on_has_s2);
    for (const auto& e : m_off.at("entries"))
        CHECK(e.at("name").get<std::string>().rfind("s2.", 0) != 0);

    // the count delta matches what the library reports for the same two configs
    DetectorConfig dc;
    dc.backbone.stem = 4;
    dc.backbone.stages = {8, 12, 16, 16};
    dc.neck_width = 8;
    dc.head.width = 8;
    dc.use_s2 = true;
    Detector with(dc, 2);
    dc.use_s2 = false;
    Detector without(dc, 2);
    int64_t want_delta = count_params(with.params()).total -
                         count_params(without.params()).total;
    for (const auto& b : with.buffers()) want_delta += b.tensor->numel();
    for (const auto& b : without.buffers()) want_delta -= b.tensor->numel();
    CHECK(manifest_scalar_count(on / "checkpoint") - manifest_scalar_count(off / "checkpoint") ==
          want_delta);
}

TEST_CASE("eval reads back a trained checkpoint and writes a report") {
    const fs::path t = work_dir() / "ev_train", e = work_dir() / "ev_out";
    REQUIRE(run("train --data " + data_dir() + " --seed 4 --iters 2 --batch 2" + kTinyModel +
                " --out " + t.string()) == 0);
    REQUIRE(run("eval --checkpoint " + (t / "checkpoint").string() + " --data " + data_dir() +
                " --split val --out " + e.string()) == 0);
    const json rep = json::parse(std::ifstream(e / "report.json"));
    for (const std::string key : {"AP", "AP50", "AP75", "AP_S", "AP_M", "AP_L"})
        CHECK(rep.contains(key));
    CHECK(rep.at("gt_counts").at("small").get<int>() +
              rep.at("gt_counts").at("medium").get<int>() +
              rep.at("gt_counts").at("large").get<int>() >
          0);
}

TEST_CASE("ablate writes the expected table shape for both axes") {
    const std::string sched = " --iters 2 --batch 2 --seeds 1" + kTinyModel;
    const fs::path n = work_dir() / "ab_neck", c = work_dir() / "ab_concat";
    REQUIRE(run("ablate --axis neck --data " + data_dir() + " --out " + n.string() + sched) == 0);
    REQUIRE(run("ablate --axis concat-position --data " + data_dir() + " --out " + c.string() +
                sched) == 0);

    auto first_col = [](const fs::path& p) {
        std::ifstream f(p);
        std::string line;
        std::vector<std::string> out;
        while (std::getline(f, line)) out.push_back(line.substr(0, line.find(',')));
        return out;
    };
    CHECK(first_col(n / "ablation.csv") ==
          std::vector<std::string>{"variant", "PAN", "FPN+S2", "PAN+S2", "PAN", "FPN+S2",
                                   "PAN+S2", "PAN+S2-PAN"});
    CHECK(first_col(c / "ablation.csv") ==
          std::vector<std::string>{"variant", "baseline", "P3+S2", "P3-P4+S2", "P3-P4-P5+S2",
                                   "baseline", "P3+S2", "P3-P4+S2", "P3-P4-P5+S2"});
    // every variant sees the identical batch schedule
    const std::string ref = read_file(n / "PAN_seed1" / "batches.txt");
    CHECK(read_file(n / "FPN+S2_seed1" / "batches.txt") == ref);
    CHECK(read_file(n / "PAN+S2_seed1" / "batches.txt") == ref);
}

TEST_CASE("scalespace and bench produce their artifacts") {
    const fs::path s = work_dir() / "ss";
    REQUIRE(run("scalespace --out " + s.string() + " --seed 1 --sigmas 0.8 --sigmas 1.6") == 0);
    CHECK(fs::exists(s / "sigma_0.800.pgm"));
    CHECK(fs::exists(s / "sigma_1.600.pgm"));

    const fs::path b = work_dir() / "bench";
    REQUIRE(run("bench --out " + b.string() + " --set gen.image_size=64" + kTinyModel) == 0);
    std::ifstream f(b / "bench.csv");
    std::string line;
    int rows = 0;
    while (std::getline(f, line)) ++rows;
    CHECK(rows == 5);  // header + {pan, pan_s2} x {batch 1, 8}
}
