#pragma once

#include <cstdint>
#include <iosfwd>
#include <random>
#include <string>
#include <vector>

namespace s2neck {

// Axis role tags. A tensor assigns exactly one role per axis and roles are
// unique within a tensor.
enum class Axis : uint8_t { Batch = 0, Channel = 1, Level = 2, Height = 3, Width = 4 };

const char* axis_name(Axis a);

// When checked mode is on (default), tensor construction from external data
// rejects NaN/Inf values. Shape validation is always on.
void set_checked_mode(bool on);
bool checked_mode();

// Dense row-major double tensor, up to 5 axes.
class Tensor {
public:
    Tensor() = default;
    Tensor(std::vector<int64_t> shape, std::vector<Axis> roles);
    Tensor(std::vector<int64_t> shape, std::vector<Axis> roles, std::vector<double> data);

    // Shape-only constructors use the canonical role set for the rank:
    // rank 1: (W), rank 2: (H,W), rank 3: (C,H,W), rank 4: (B,C,H,W),
    // rank 5: (B,C,L,H,W).
    explicit Tensor(std::vector<int64_t> shape);
    Tensor(std::vector<int64_t> shape, std::vector<double> data);

    static Tensor zeros(std::vector<int64_t> shape);
    static Tensor full(std::vector<int64_t> shape, double value);
    static Tensor zeros_like(const Tensor& other);

    static std::vector<Axis> canonical_roles(size_t rank);

    int64_t rank() const { return static_cast<int64_t>(shape_.size()); }
    const std::vector<int64_t>& shape() const { return shape_; }
    const std::vector<Axis>& roles() const { return roles_; }
    int64_t dim(int i) const { return shape_[static_cast<size_t>(i)]; }
    int64_t numel() const;
    bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }

    // Index of the axis carrying a role, or -1 if absent.
    int axis_of(Axis role) const;

    double* data() { return data_.data(); }
    const double* data() const { return data_.data(); }
    std::vector<double>& values() { return data_; }
    const std::vector<double>& values() const { return data_; }

    double& operator[](int64_t i) { return data_[static_cast<size_t>(i)]; }
    double operator[](int64_t i) const { return data_[static_cast<size_t>(i)]; }

    // Row-major flat offsets.
    int64_t idx2(int64_t y, int64_t x) const { return y * shape_[1] + x; }
    int64_t idx4(int64_t b, int64_t c, int64_t y, int64_t x) const {
        return ((b * shape_[1] + c) * shape_[2] + y) * shape_[3] + x;
    }
    int64_t idx5(int64_t b, int64_t c, int64_t l, int64_t y, int64_t x) const {
        return (((b * shape_[1] + c) * shape_[2] + l) * shape_[3] + y) * shape_[4] + x;
    }

    double& at2(int64_t y, int64_t x) { return data_[static_cast<size_t>(idx2(y, x))]; }
    double at2(int64_t y, int64_t x) const { return data_[static_cast<size_t>(idx2(y, x))]; }
    double& at4(int64_t b, int64_t c, int64_t y, int64_t x) { return data_[static_cast<size_t>(idx4(b, c, y, x))]; }
    double at4(int64_t b, int64_t c, int64_t y, int64_t x) const { return data_[static_cast<size_t>(idx4(b, c, y, x))]; }
    double& at5(int64_t b, int64_t c, int64_t l, int64_t y, int64_t x) { return data_[static_cast<size_t>(idx5(b, c, l, y, x))]; }
    double at5(int64_t b, int64_t c, int64_t l, int64_t y, int64_t x) const { return data_[static_cast<size_t>(idx5(b, c, l, y, x))]; }

    void fill(double v);
    void check_finite(const char* context) const;

    std::string shape_str() const;

private:
    std::vector<int64_t> shape_;
    std::vector<Axis> roles_;
    std::vector<double> data_;
};

// Binary tensor serialization: magic "S2TENSOR", u16 version, u8 rank,
// shape as u64 list, one role byte per axis, then little-endian f64 payload.
void write_tensor(std::ostream& os, const Tensor& t);
Tensor read_tensor(std::istream& is);

constexpr uint16_t kTensorFormatVersion = 1;

// Deterministic seeded PRNG. Engine is mt19937_64 (bit-exact across
// platforms); all distributions are derived here from raw 64-bit draws, so
// streams are identical everywhere for a given seed.
class Rng {
public:
    explicit Rng(uint64_t seed);

    uint64_t next_u64();
    double uniform();                    // [0, 1)
    double uniform(double lo, double hi);
    double normal();                     // standard normal, Box-Muller
    int64_t uniform_int(int64_t lo, int64_t hi);  // inclusive range

    // Independent substream, e.g. per-image generators keyed by id.
    Rng fork(uint64_t stream) const;

    uint64_t seed() const { return seed_; }

    Tensor uniform_tensor(std::vector<int64_t> shape, double lo, double hi);
    Tensor normal_tensor(std::vector<int64_t> shape);

private:
    uint64_t seed_;
    std::mt19937_64 eng_;
};

uint64_t splitmix64(uint64_t x);

}  // namespace s2neck
