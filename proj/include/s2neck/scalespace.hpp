#pragma once

#include <string>
#include <vector>

#include "s2neck/tensor.hpp"

namespace s2neck {

// Family of blurred copies of one image, all at the base resolution, with
// strictly increasing scale parameters.
struct ScaleSpace {
    Tensor base;                 // H x W grayscale
    std::vector<double> sigmas;  // ascending
    std::vector<Tensor> slices;  // one per sigma, base resolution
};

// Samples the 2D Gaussian on the integer grid [-radius, radius]^2. With
// normalized=true (default) the kernel is rescaled to sum exactly 1.
// radius < 0 selects ceil(3*sigma).
Tensor gaussian_kernel(double sigma, int radius = -1, bool normalized = true);

// True convolution with the sampled Gaussian, symmetric (edge-inclusive)
// reflected boundary. Separable implementation; accepts rank-2 (H x W) or
// rank-4 (1 x 1 x H x W) images and preserves rank and resolution.
Tensor gaussian_blur(const Tensor& image, double sigma);

ScaleSpace build_scale_space(const Tensor& image, const std::vector<double>& sigmas);

// 8-bit binary PGM (P5), values linearly mapped from [lo, hi] and clamped.
void write_pgm(const std::string& path, const Tensor& image, double lo = 0.0, double hi = 1.0);

}  // namespace s2neck
