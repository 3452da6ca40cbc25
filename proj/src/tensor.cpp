#include "s2neck/tensor.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstring>
#include <istream>
#include <ostream>
#include <sstream>
#include <stdexcept>

namespace s2neck {

namespace {
std::atomic<bool> g_checked{true};
}

void set_checked_mode(bool on) { g_checked.store(on); }
bool checked_mode() { return g_checked.load(); }

const char* axis_name(Axis a) {
    switch (a) {
        case Axis::Batch: return "batch";
        case Axis::Channel: return "channel";
        case Axis::Level: return "level";
        case Axis::Height: return "height";
        case Axis::Width: return "width";
    }
    return "?";
}

std::vector<Axis> Tensor::canonical_roles(size_t rank) {
    switch (rank) {
        case 1: return {Axis::Width};
        case 2: return {Axis::Height, Axis::Width};
        case 3: return {Axis::Channel, Axis::Height, Axis::Width};
        case 4: return {Axis::Batch, Axis::Channel, Axis::Height, Axis::Width};
        case 5: return {Axis::Batch, Axis::Channel, Axis::Level, Axis::Height, Axis::Width};
        default:
            throw std::invalid_argument("tensor rank must be between 1 and 5, got " + std::to_string(rank));
    }
}

static int64_t checked_numel(const std::vector<int64_t>& shape) {
    if (shape.empty() || shape.size() > 5)
        throw std::invalid_argument("tensor rank must be between 1 and 5");
    int64_t n = 1;
    for (int64_t d : shape) {
        if (d <= 0) throw std::invalid_argument("tensor dims must be positive");
        n *= d;
    }
    return n;
}

static void check_roles(const std::vector<int64_t>& shape, const std::vector<Axis>& roles) {
    if (roles.size() != shape.size())
        throw std::invalid_argument("axis role count must match rank");
    for (size_t i = 0; i < roles.size(); ++i)
        for (size_t j = i + 1; j < roles.size(); ++j)
            if (roles[i] == roles[j])
                throw std::invalid_argument(std::string("duplicate axis role: ") + axis_name(roles[i]));
}

Tensor::Tensor(std::vector<int64_t> shape, std::vector<Axis> roles)
    : shape_(std::move(shape)), roles_(std::move(roles)) {
    int64_t n = checked_numel(shape_);
    check_roles(shape_, roles_);
    data_.assign(static_cast<size_t>(n), 0.0);
}

Tensor::Tensor(std::vector<int64_t> shape, std::vector<Axis> roles, std::vector<double> data)
    : shape_(std::move(shape)), roles_(std::move(roles)), data_(std::move(data)) {
    int64_t n = checked_numel(shape_);
    check_roles(shape_, roles_);
    if (static_cast<int64_t>(data_.size()) != n)
        throw std::invalid_argument("data size " + std::to_string(data_.size()) +
                                    " does not match shape " + shape_str());
    if (checked_mode()) check_finite("Tensor construction");
}

Tensor::Tensor(std::vector<int64_t> shape)
    : Tensor(shape, canonical_roles(shape.size())) {}

Tensor::Tensor(std::vector<int64_t> shape, std::vector<double> data)
    : Tensor(shape, canonical_roles(shape.size()), std::move(data)) {}

Tensor Tensor::zeros(std::vector<int64_t> shape) { return Tensor(std::move(shape)); }

Tensor Tensor::full(std::vector<int64_t> shape, double value) {
    Tensor t(std::move(shape));
    t.fill(value);
    return t;
}

Tensor Tensor::zeros_like(const Tensor& other) {
    return Tensor(other.shape_, other.roles_);
}

int64_t Tensor::numel() const {
    int64_t n = 1;
    for (int64_t d : shape_) n *= d;
    return shape_.empty() ? 0 : n;
}

int Tensor::axis_of(Axis role) const {
    for (size_t i = 0; i < roles_.size(); ++i)
        if (roles_[i] == role) return static_cast<int>(i);
    return -1;
}

void Tensor::fill(double v) { std::fill(data_.begin(), data_.end(), v); }

void Tensor::check_finite(const char* context) const {
    for (double v : data_)
        if (!std::isfinite(v))
            throw std::runtime_error(std::string(context) + ": non-finite value in tensor " + shape_str());
}

std::string Tensor::shape_str() const {
    std::ostringstream os;
    os << "[";
    for (size_t i = 0; i < shape_.size(); ++i) os << (i ? "x" : "") << shape_[i];
    os << "]";
    return os.str();
}

// ---------------------------------------------------------------------------
// Serialization. Host is assumed little-endian (asserted by magic round-trip
// in tests); fields are written as raw bytes.

static const char kMagic[8] = {'S', '2', 'T', 'E', 'N', 'S', 'O', 'R'};

void write_tensor(std::ostream& os, const Tensor& t) {
    os.write(kMagic, 8);
    uint16_t version = kTensorFormatVersion;
    os.write(reinterpret_cast<const char*>(&version), 2);
    uint8_t rank = static_cast<uint8_t>(t.rank());
    os.write(reinterpret_cast<const char*>(&rank), 1);
    for (int64_t d : t.shape()) {
        uint64_t u = static_cast<uint64_t>(d);
        os.write(reinterpret_cast<const char*>(&u), 8);
    }
    for (Axis a : t.roles()) {
        uint8_t r = static_cast<uint8_t>(a);
        os.write(reinterpret_cast<const char*>(&r), 1);
    }
    os.write(reinterpret_cast<const char*>(t.data()), static_cast<std::streamsize>(t.numel() * 8));
    if (!os) throw std::runtime_error("tensor write failed");
}

Tensor read_tensor(std::istream& is) {
    char magic[8];
    is.read(magic, 8);
    if (!is || std::memcmp(magic, kMagic, 8) != 0)
        throw std::runtime_error("bad tensor magic (expected S2TENSOR)");
    uint16_t version = 0;
    is.read(reinterpret_cast<char*>(&version), 2);
    if (version != kTensorFormatVersion)
        throw std::runtime_error("unsupported tensor format version " + std::to_string(version));
    uint8_t rank = 0;
    is.read(reinterpret_cast<char*>(&rank), 1);
    if (rank < 1 || rank > 5) throw std::runtime_error("bad tensor rank");
    std::vector<int64_t> shape(rank);
    for (auto& d : shape) {
        uint64_t u = 0;
        is.read(reinterpret_cast<char*>(&u), 8);
        d = static_cast<int64_t>(u);
    }
    std::vector<Axis> roles(rank);
    for (auto& a : roles) {
        uint8_t r = 0;
        is.read(reinterpret_cast<char*>(&r), 1);
        if (r > 4) throw std::runtime_error("bad axis role byte");
        a = static_cast<Axis>(r);
    }
    int64_t n = checked_numel(shape);
    std::vector<double> data(static_cast<size_t>(n));
    is.read(reinterpret_cast<char*>(data.data()), static_cast<std::streamsize>(n * 8));
    if (!is) throw std::runtime_error("truncated tensor payload");
    return Tensor(std::move(shape), std::move(roles), std::move(data));
}

// ---------------------------------------------------------------------------
// Rng

uint64_t splitmix64(uint64_t x) {
    x += 0x9E3779B97F4A7C15ull;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
    return x ^ (x >> 31);
}

Rng::Rng(uint64_t seed) : seed_(seed), eng_(seed) {}

uint64_t Rng::next_u64() { return eng_(); }

double Rng::uniform() {
    // 53 mantissa bits from the top of the draw; exact on all platforms.
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

double Rng::uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

double Rng::normal() {
    double u1 = uniform();
    double u2 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
}

int64_t Rng::uniform_int(int64_t lo, int64_t hi) {
    if (hi < lo) throw std::invalid_argument("uniform_int: empty range");
    uint64_t span = static_cast<uint64_t>(hi - lo) + 1;
    return lo + static_cast<int64_t>(next_u64() % span);
}

Rng Rng::fork(uint64_t stream) const {
    return Rng(splitmix64(seed_ ^ splitmix64(stream)));
}

Tensor Rng::uniform_tensor(std::vector<int64_t> shape, double lo, double hi) {
    Tensor t(std::move(shape));
    for (int64_t i = 0; i < t.numel(); ++i) t[i] = uniform(lo, hi);
    return t;
}

Tensor Rng::normal_tensor(std::vector<int64_t> shape) {
    Tensor t(std::move(shape));
    for (int64_t i = 0; i < t.numel(); ++i) t[i] = normal();
    return t;
}

}  // namespace s2neck
