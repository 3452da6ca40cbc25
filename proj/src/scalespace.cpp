#include "s2neck/scalespace.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <stdexcept>

namespace s2neck {

namespace {

std::vector<double> gaussian_taps_1d(double sigma, int radius) {
    std::vector<double> taps(static_cast<size_t>(2 * radius + 1));
    double sum = 0.0;
    for (int i = -radius; i <= radius; ++i) {
        double v = std::exp(-(static_cast<double>(i) * i) / (2.0 * sigma * sigma));
        taps[static_cast<size_t>(i + radius)] = v;
        sum += v;
    }
    for (double& t : taps) t /= sum;
    return taps;
}

int64_t reflect(int64_t i, int64_t n) {
    while (i < 0 || i >= n) {
        if (i < 0) i = -1 - i;
        if (i >= n) i = 2 * n - 1 - i;
    }
    return i;
}

int default_radius(double sigma) { return static_cast<int>(std::ceil(3.0 * sigma)); }

}  // namespace

Tensor gaussian_kernel(double sigma, int radius, bool normalized) {
    if (sigma <= 0.0) throw std::invalid_argument("gaussian_kernel: sigma must be positive");
    if (radius < 0) radius = default_radius(sigma);
    const int64_t n = 2 * radius + 1;
    Tensor k({n, n});
    double sum = 0.0;
    const double norm = 1.0 / (2.0 * M_PI * sigma * sigma);
    for (int y = -radius; y <= radius; ++y)
        for (int x = -radius; x <= radius; ++x) {
            double v = norm * std::exp(-(static_cast<double>(x) * x + static_cast<double>(y) * y) /
                                       (2.0 * sigma * sigma));
            k.at2(y + radius, x + radius) = v;
            sum += v;
        }
    if (normalized)
        for (int64_t i = 0; i < k.numel(); ++i) k[i] /= sum;
    return k;
}

Tensor gaussian_blur(const Tensor& image, double sigma) {
    if (sigma <= 0.0) throw std::invalid_argument("gaussian_blur: sigma must be positive");
    const bool rank4 = image.rank() == 4;
    if (rank4 && (image.dim(0) != 1 || image.dim(1) != 1))
        throw std::invalid_argument("gaussian_blur: rank-4 input must be 1x1xHxW");
    if (!rank4 && image.rank() != 2) throw std::invalid_argument("gaussian_blur expects HxW or 1x1xHxW");
    const int64_t H = rank4 ? image.dim(2) : image.dim(0);
    const int64_t W = rank4 ? image.dim(3) : image.dim(1);

    const int radius = default_radius(sigma);
    // The sampled 2D Gaussian factors exactly into the outer product of the
    // normalized 1D taps, so separable passes match the 2D kernel bit-for-bit
    // up to summation order.
    const std::vector<double> taps = gaussian_taps_1d(sigma, radius);

    Tensor tmp({H, W}), out({H, W});
    const double* src = image.data();
    for (int64_t y = 0; y < H; ++y)
        for (int64_t x = 0; x < W; ++x) {
            double acc = 0.0;
            for (int t = -radius; t <= radius; ++t)
                acc += taps[static_cast<size_t>(t + radius)] * src[y * W + reflect(x + t, W)];
            tmp.at2(y, x) = acc;
        }
    for (int64_t y = 0; y < H; ++y)
        for (int64_t x = 0; x < W; ++x) {
            double acc = 0.0;
            for (int t = -radius; t <= radius; ++t)
                acc += taps[static_cast<size_t>(t + radius)] * tmp.at2(reflect(y + t, H), x);
            out.at2(y, x) = acc;
        }
    if (rank4) return Tensor({1, 1, H, W}, out.values());
    return out;
}

ScaleSpace build_scale_space(const Tensor& image, const std::vector<double>& sigmas) {
    if (sigmas.empty()) throw std::invalid_argument("build_scale_space: empty sigma list");
    for (size_t i = 0; i + 1 < sigmas.size(); ++i)
        if (sigmas[i + 1] <= sigmas[i])
            throw std::invalid_argument("build_scale_space: sigmas must be strictly increasing");
    ScaleSpace ss;
    ss.base = image;
    ss.sigmas = sigmas;
    for (double s : sigmas) ss.slices.push_back(gaussian_blur(image, s));
    return ss;
}

void write_pgm(const std::string& path, const Tensor& image, double lo, double hi) {
    if (image.rank() != 2) throw std::invalid_argument("write_pgm expects an HxW tensor");
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("cannot open " + path + " for writing");
    const int64_t H = image.dim(0), W = image.dim(1);
    os << "P5\n" << W << " " << H << "\n255\n";
    const double span = hi > lo ? hi - lo : 1.0;
    for (int64_t i = 0; i < image.numel(); ++i) {
        double v = (image[i] - lo) / span * 255.0;
        unsigned char b = static_cast<unsigned char>(std::clamp(v, 0.0, 255.0));
        os.write(reinterpret_cast<const char*>(&b), 1);
    }
    if (!os) throw std::runtime_error("write failed: " + path);
}

}  // namespace s2neck
