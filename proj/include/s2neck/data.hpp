#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "s2neck/tensor.hpp"

namespace s2neck {

struct Box {
    double x = 0, y = 0, w = 0, h = 0;  // top-left origin, pixel units
    double area() const { return w * h; }
};

struct Annotation {
    int class_id = 0;
    Box box;
};

struct GroundTruthSet {
    int64_t image_id = 0;
    std::vector<Annotation> objects;
};

struct DatasetManifest {
    int64_t image_size = 128;
    int64_t train_count = 2000;
    int64_t val_count = 500;
    std::vector<std::string> class_names = {"circle", "square", "triangle"};
    double p_small = 0.6, p_medium = 0.25, p_large = 0.15;
    uint64_t seed = 0;
    double small_area = 64.0;   // area < small_area  -> small bucket
    double medium_area = 256.0; // area < medium_area -> medium bucket
    int64_t min_objects = 1, max_objects = 6;

    void validate() const;
    int64_t total_count() const { return train_count + val_count; }
};

// One decoded image plus its annotations; pixels stay u8 until batched.
struct LoadedExample {
    int64_t image_id = 0;
    std::vector<uint8_t> pixels;  // interleaved RGB, row-major
    GroundTruthSet gt;

    // 1 x 3 x S x S, values in [0, 1]
    Tensor image(int64_t size) const;
};

struct Dataset {
    DatasetManifest manifest;
    std::vector<LoadedExample> examples;
};

// Renders images/{id}.ppm, annotations.jsonl, manifest.json under out_dir.
// Image ids [0, train_count) are the train split, the rest the val split.
void generate_dataset(const DatasetManifest& manifest, const std::string& out_dir);

// split: "train", "val", or "all"; verifies checksums and annotation bounds.
Dataset load_dataset(const std::string& path, const std::string& split = "all");

void write_ppm(const std::string& path, const std::vector<uint8_t>& rgb, int64_t w, int64_t h);
std::vector<uint8_t> read_ppm(const std::string& path, int64_t& w, int64_t& h);
uint32_t crc32_file(const std::string& path);

}  // namespace s2neck
