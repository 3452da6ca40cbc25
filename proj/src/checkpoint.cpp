#include "s2neck/checkpoint.hpp"

#include <filesystem>
#include <fstream>
#include <nlohmann/json.hpp>
#include <stdexcept>

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace s2neck {

namespace {

constexpr int kCheckpointVersion = 1;

json entry_list(const ParamList& params, const BufferList& buffers) {
    json entries = json::array();
    for (const auto& p : params)
        entries.push_back({{"name", p.name}, {"shape", p.var->value.shape()}});
    for (const auto& b : buffers)
        entries.push_back({{"name", b.name}, {"shape", b.tensor->shape()}});
    return entries;
}

}  // namespace

void save_checkpoint(const std::string& dir, const ParamList& params, const BufferList& buffers,
                     const std::string& config_echo_json) {
    fs::create_directories(dir);
    std::ofstream bin(fs::path(dir) / "params.bin", std::ios::binary);
    if (!bin) throw std::runtime_error("save_checkpoint: cannot write params.bin in " + dir);
    for (const auto& p : params) write_tensor(bin, p.var->value);
    for (const auto& b : buffers) write_tensor(bin, *b.tensor);
    if (!bin) throw std::runtime_error("save_checkpoint: write failed in " + dir);

    json manifest{{"format_version", kCheckpointVersion},
                  {"entries", entry_list(params, buffers)},
                  {"config", config_echo_json.empty() ? json(nullptr)
                                                      : json::parse(config_echo_json)}};
    std::ofstream mf(fs::path(dir) / "manifest.json");
    if (!mf) throw std::runtime_error("save_checkpoint: cannot write manifest.json in " + dir);
    mf << manifest.dump(2) << "\n";
}

void load_checkpoint(const std::string& dir, const ParamList& params, const BufferList& buffers) {
    std::ifstream mf(fs::path(dir) / "manifest.json");
    if (!mf) throw std::runtime_error("load_checkpoint: missing manifest.json in " + dir);
    json manifest = json::parse(mf);
    if (manifest.at("format_version").get<int>() != kCheckpointVersion)
        throw std::runtime_error("load_checkpoint: incompatible format version");
    const json want = entry_list(params, buffers);
    if (manifest.at("entries") != want)
        throw std::runtime_error("load_checkpoint: entry names/shapes do not match the model");

    std::ifstream bin(fs::path(dir) / "params.bin", std::ios::binary);
    if (!bin) throw std::runtime_error("load_checkpoint: missing params.bin in " + dir);
    for (const auto& p : params) {
        Tensor t = read_tensor(bin);
        if (t.shape() != p.var->value.shape())
            throw std::runtime_error("load_checkpoint: shape mismatch for " + p.name);
        p.var->value = std::move(t);
    }
    for (const auto& b : buffers) {
        Tensor t = read_tensor(bin);
        if (t.shape() != b.tensor->shape())
            throw std::runtime_error("load_checkpoint: shape mismatch for " + b.name);
        *b.tensor = std::move(t);
    }
}

std::string checkpoint_config(const std::string& dir) {
    std::ifstream mf(fs::path(dir) / "manifest.json");
    if (!mf) throw std::runtime_error("checkpoint_config: missing manifest.json in " + dir);
    json manifest = json::parse(mf);
    return manifest.at("config").dump();
}

}  // namespace s2neck
