#include "s2neck/data.hpp"

#include <zlib.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <nlohmann/json.hpp>
#include <stdexcept>

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace s2neck {

void DatasetManifest::validate() const {
    if (image_size < 32) throw std::invalid_argument("manifest: image_size too small");
    if (train_count < 0 || val_count < 0 || total_count() == 0)
        throw std::invalid_argument("manifest: bad counts");
    if (class_names.size() != 3) throw std::invalid_argument("manifest: expected 3 classes");
    if (std::abs(p_small + p_medium + p_large - 1.0) > 1e-9)
        throw std::invalid_argument("manifest: scale-mix proportions must sum to 1");
    if (p_small < 0 || p_medium < 0 || p_large < 0)
        throw std::invalid_argument("manifest: negative proportion");
    if (!(small_area < medium_area)) throw std::invalid_argument("manifest: bucket thresholds");
    if (min_objects < 1 || max_objects < min_objects)
        throw std::invalid_argument("manifest: object count range");
}

Tensor LoadedExample::image(int64_t size) const {
    Tensor t({1, 3, size, size});
    const int64_t hw = size * size;
    for (int64_t y = 0; y < size; ++y)
        for (int64_t x = 0; x < size; ++x)
            for (int64_t c = 0; c < 3; ++c)
                t[c * hw + y * size + x] =
                    pixels[static_cast<size_t>((y * size + x) * 3 + c)] / 255.0;
    return t;
}

void write_ppm(const std::string& path, const std::vector<uint8_t>& rgb, int64_t w, int64_t h) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("write_ppm: cannot open " + path);
    f << "P6\n" << w << " " << h << "\n255\n";
    f.write(reinterpret_cast<const char*>(rgb.data()), static_cast<std::streamsize>(rgb.size()));
    if (!f) throw std::runtime_error("write_ppm: write failed for " + path);
}

std::vector<uint8_t> read_ppm(const std::string& path, int64_t& w, int64_t& h) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("read_ppm: cannot open " + path);
    std::string magic;
    int64_t maxval = 0;
    f >> magic >> w >> h >> maxval;
    if (magic != "P6" || w <= 0 || h <= 0 || maxval != 255)
        throw std::runtime_error("read_ppm: bad header in " + path);
    f.get();  // single whitespace after the header
    std::vector<uint8_t> rgb(static_cast<size_t>(w * h * 3));
    f.read(reinterpret_cast<char*>(rgb.data()), static_cast<std::streamsize>(rgb.size()));
    if (f.gcount() != static_cast<std::streamsize>(rgb.size()))
        throw std::runtime_error("read_ppm: truncated pixel data in " + path);
    return rgb;
}

uint32_t crc32_file(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("crc32_file: cannot open " + path);
    uint32_t crc = static_cast<uint32_t>(::crc32(0L, Z_NULL, 0));
    char buf[1 << 16];
    while (f.read(buf, sizeof(buf)) || f.gcount() > 0)
        crc = static_cast<uint32_t>(
            ::crc32(crc, reinterpret_cast<const Bytef*>(buf), static_cast<uInt>(f.gcount())));
    return crc;
}

namespace {

constexpr int kFormatVersion = 1;

// Low-amplitude value noise: random lattice every 16 px, bilinear in between.
std::vector<double> value_noise(Rng& rng, int64_t size, double amplitude) {
    const int64_t step = 16;
    const int64_t n = size / step + 2;
    std::vector<double> lattice(static_cast<size_t>(n * n));
    for (auto& v : lattice) v = rng.uniform(-amplitude, amplitude);
    std::vector<double> out(static_cast<size_t>(size * size));
    for (int64_t y = 0; y < size; ++y) {
        const int64_t gy = y / step;
        const double fy = static_cast<double>(y % step) / step;
        for (int64_t x = 0; x < size; ++x) {
            const int64_t gx = x / step;
            const double fx = static_cast<double>(x % step) / step;
            const double a = lattice[static_cast<size_t>(gy * n + gx)];
            const double b = lattice[static_cast<size_t>(gy * n + gx + 1)];
            const double c = lattice[static_cast<size_t>((gy + 1) * n + gx)];
            const double d = lattice[static_cast<size_t>((gy + 1) * n + gx + 1)];
            out[static_cast<size_t>(y * size + x)] =
                (a * (1 - fx) + b * fx) * (1 - fy) + (c * (1 - fx) + d * fx) * fy;
        }
    }
    return out;
}

// Coverage fraction of pixel (px, py) by the shape, 3x3 supersampled.
double coverage(int class_id, const Box& b, int64_t px, int64_t py) {
    int hits = 0;
    for (int sy = 0; sy < 3; ++sy)
        for (int sx = 0; sx < 3; ++sx) {
            const double x = px + (sx + 0.5) / 3.0;
            const double y = py + (sy + 0.5) / 3.0;
            const double u = x - b.x, v = y - b.y;
            if (u < 0 || v < 0 || u > b.w || v > b.h) continue;
            bool in = false;
            switch (class_id) {
                case 0: {  // circle
                    const double dx = u - b.w / 2, dy = v - b.h / 2;
                    in = dx * dx + dy * dy <= (b.w / 2) * (b.h / 2);
                    break;
                }
                case 1:  // square
                    in = true;
                    break;
                case 2: {  // triangle: apex top-center, base at the bottom edge
                    const double half = (v / b.h) * (b.w / 2);
                    in = std::abs(u - b.w / 2) <= half;
                    break;
                }
                default: break;
            }
            if (in) ++hits;
        }
    return hits / 9.0;
}

// Intersection over the smaller box's area; unlike IoU this also catches a
// small box swallowed by a much larger one (which a later draw would occlude).
double box_overlap(const Box& a, const Box& b) {
    const double ix = std::max(0.0, std::min(a.x + a.w, b.x + b.w) - std::max(a.x, b.x));
    const double iy = std::max(0.0, std::min(a.y + a.h, b.y + b.h) - std::max(a.y, b.y));
    const double denom = std::min(a.area(), b.area());
    return denom > 0 ? ix * iy / denom : 0.0;
}

struct RenderedImage {
    std::vector<uint8_t> pixels;
    GroundTruthSet gt;
};

RenderedImage render_image(const DatasetManifest& m, int64_t image_id, Rng rng) {
    const int64_t S = m.image_size;
    RenderedImage out;
    out.gt.image_id = image_id;

    // textured background
    std::vector<double> base(3);
    for (auto& c : base) c = rng.uniform(100.0, 150.0);
    std::vector<double> noise = value_noise(rng, S, 20.0);
    out.pixels.resize(static_cast<size_t>(S * S * 3));
    for (int64_t i = 0; i < S * S; ++i)
        for (int64_t c = 0; c < 3; ++c)
            out.pixels[static_cast<size_t>(i * 3 + c)] = static_cast<uint8_t>(
                std::clamp(base[static_cast<size_t>(c)] + noise[static_cast<size_t>(i)], 0.0, 255.0));

    const int64_t count = rng.uniform_int(m.min_objects, m.max_objects);
    for (int64_t obj = 0; obj < count; ++obj) {
        // size bucket per configured mix; side ranges keep areas strictly in-bucket
        const double u = rng.uniform();
        int64_t side;
        if (u < m.p_small)
            side = rng.uniform_int(5, 7);
        else if (u < m.p_small + m.p_medium)
            side = rng.uniform_int(9, 15);
        else
            side = rng.uniform_int(18, 40);

        Box box;
        box.w = box.h = static_cast<double>(side);
        bool placed = false;
        for (int attempt = 0; attempt < 25 && !placed; ++attempt) {
            box.x = static_cast<double>(rng.uniform_int(1, S - side - 1));
            box.y = static_cast<double>(rng.uniform_int(1, S - side - 1));
            placed = true;
            for (const auto& prev : out.gt.objects)
                if (box_overlap(box, prev.box) > 0.15) placed = false;
        }
        if (!placed) continue;  // crowded image: drop the object

        const int class_id = static_cast<int>(rng.uniform_int(0, 2));
        // strong-contrast color: all channels dark or all bright vs the mid-gray background
        const bool bright = rng.uniform() < 0.5;
        double color[3];
        for (auto& c : color) c = bright ? rng.uniform(215.0, 255.0) : rng.uniform(0.0, 40.0);

        const int64_t x0 = static_cast<int64_t>(box.x), y0 = static_cast<int64_t>(box.y);
        for (int64_t py = y0; py < y0 + side; ++py)
            for (int64_t px = x0; px < x0 + side; ++px) {
                const double a = coverage(class_id, box, px, py);
                if (a <= 0) continue;
                for (int64_t c = 0; c < 3; ++c) {
                    auto& p = out.pixels[static_cast<size_t>((py * S + px) * 3 + c)];
                    p = static_cast<uint8_t>(
                        std::clamp((1 - a) * p + a * color[static_cast<size_t>(c)], 0.0, 255.0));
                }
            }
        out.gt.objects.push_back({class_id, box});
    }
    return out;
}

json manifest_to_json(const DatasetManifest& m) {
    return json{{"format_version", kFormatVersion},
                {"image_size", m.image_size},
                {"train_count", m.train_count},
                {"val_count", m.val_count},
                {"class_names", m.class_names},
                {"proportions", {{"small", m.p_small}, {"medium", m.p_medium}, {"large", m.p_large}}},
                {"seed", m.seed},
                {"bucket_thresholds", {{"small_area", m.small_area}, {"medium_area", m.medium_area}}},
                {"min_objects", m.min_objects},
                {"max_objects", m.max_objects}};
}

DatasetManifest manifest_from_json(const json& j) {
    if (j.at("format_version").get<int>() != kFormatVersion)
        throw std::runtime_error("load_dataset: incompatible manifest format version");
    DatasetManifest m;
    m.image_size = j.at("image_size").get<int64_t>();
    m.train_count = j.at("train_count").get<int64_t>();
    m.val_count = j.at("val_count").get<int64_t>();
    m.class_names = j.at("class_names").get<std::vector<std::string>>();
    m.p_small = j.at("proportions").at("small").get<double>();
    m.p_medium = j.at("proportions").at("medium").get<double>();
    m.p_large = j.at("proportions").at("large").get<double>();
    m.seed = j.at("seed").get<uint64_t>();
    m.small_area = j.at("bucket_thresholds").at("small_area").get<double>();
    m.medium_area = j.at("bucket_thresholds").at("medium_area").get<double>();
    m.min_objects = j.at("min_objects").get<int64_t>();
    m.max_objects = j.at("max_objects").get<int64_t>();
    return m;
}

}  // namespace

void generate_dataset(const DatasetManifest& manifest, const std::string& out_dir) {
    manifest.validate();
    fs::create_directories(fs::path(out_dir) / "images");

    Rng root(manifest.seed);
    std::ofstream ann(fs::path(out_dir) / "annotations.jsonl");
    if (!ann) throw std::runtime_error("generate_dataset: cannot write annotations.jsonl");
    json checksums = json::object();
    for (int64_t id = 0; id < manifest.total_count(); ++id) {
        RenderedImage img = render_image(manifest, id, root.fork(static_cast<uint64_t>(id)));
        const std::string name = std::to_string(id) + ".ppm";
        const std::string path = (fs::path(out_dir) / "images" / name).string();
        write_ppm(path, img.pixels, manifest.image_size, manifest.image_size);
        checksums[name] = crc32_file(path);
        for (const auto& o : img.gt.objects) {
            json line{{"image_id", id},
                      {"class", o.class_id},
                      {"x", static_cast<int64_t>(o.box.x)},
                      {"y", static_cast<int64_t>(o.box.y)},
                      {"w", static_cast<int64_t>(o.box.w)},
                      {"h", static_cast<int64_t>(o.box.h)}};
            ann << line.dump() << "\n";
        }
    }
    if (!ann) throw std::runtime_error("generate_dataset: annotation write failed");
    ann.close();

    json mj = manifest_to_json(manifest);
    mj["checksums"] = std::move(checksums);
    std::ofstream mf(fs::path(out_dir) / "manifest.json");
    if (!mf) throw std::runtime_error("generate_dataset: cannot write manifest.json");
    mf << mj.dump(2) << "\n";
}

Dataset load_dataset(const std::string& path, const std::string& split) {
    std::ifstream mf(fs::path(path) / "manifest.json");
    if (!mf) throw std::runtime_error("load_dataset: missing manifest.json in " + path);
    json mj = json::parse(mf);
    Dataset ds;
    ds.manifest = manifest_from_json(mj);
    const json& checksums = mj.at("checksums");

    int64_t lo = 0, hi = ds.manifest.total_count();
    if (split == "train")
        hi = ds.manifest.train_count;
    else if (split == "val")
        lo = ds.manifest.train_count;
    else if (split != "all")
        throw std::invalid_argument("load_dataset: unknown split '" + split + "'");

    // annotations grouped by image id
    std::vector<std::vector<Annotation>> by_image(static_cast<size_t>(ds.manifest.total_count()));
    std::ifstream ann(fs::path(path) / "annotations.jsonl");
    if (!ann) throw std::runtime_error("load_dataset: missing annotations.jsonl");
    const double S = static_cast<double>(ds.manifest.image_size);
    std::string line;
    while (std::getline(ann, line)) {
        if (line.empty()) continue;
        json j = json::parse(line);
        const int64_t id = j.at("image_id").get<int64_t>();
        Annotation a;
        a.class_id = j.at("class").get<int>();
        a.box = {j.at("x").get<double>(), j.at("y").get<double>(), j.at("w").get<double>(),
                 j.at("h").get<double>()};
        if (a.class_id < 0 || a.class_id >= static_cast<int>(ds.manifest.class_names.size()))
            throw std::runtime_error("load_dataset: bad class id for image " + std::to_string(id));
        if (a.box.w < 2 || a.box.h < 2 || a.box.x < 0 || a.box.y < 0 ||
            a.box.x + a.box.w > S || a.box.y + a.box.h > S)
            throw std::runtime_error("load_dataset: out-of-bounds box for image " +
                                     std::to_string(id));
        by_image.at(static_cast<size_t>(id)).push_back(a);
    }

    for (int64_t id = lo; id < hi; ++id) {
        const std::string name = std::to_string(id) + ".ppm";
        const std::string file = (fs::path(path) / "images" / name).string();
        const auto expect = checksums.at(name).get<uint32_t>();
        if (crc32_file(file) != expect)
            throw std::runtime_error("load_dataset: checksum mismatch for " + file);
        LoadedExample ex;
        ex.image_id = id;
        int64_t w = 0, h = 0;
        ex.pixels = read_ppm(file, w, h);
        if (w != ds.manifest.image_size || h != ds.manifest.image_size)
            throw std::runtime_error("load_dataset: wrong image size in " + file);
        ex.gt.image_id = id;
        ex.gt.objects = by_image.at(static_cast<size_t>(id));
        ds.examples.push_back(std::move(ex));
    }
    return ds;
}

}  // namespace s2neck
