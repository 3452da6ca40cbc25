#include "s2neck/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace s2neck::kernels {

namespace {

int64_t out_dim(int64_t in, int64_t k, int64_t stride, int64_t pad, const char* axis) {
    int64_t num = in + 2 * pad - k;
    if (num < 0)
        throw std::invalid_argument(std::string("kernel larger than padded input on ") + axis + " axis");
    int64_t out = num / stride + 1;
    if (out <= 0) throw std::invalid_argument(std::string("non-positive output size on ") + axis + " axis");
    return out;
}

}  // namespace

Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor* bias, const Conv2dSpec& spec) {
    if (x.rank() != 4 || w.rank() != 4) throw std::invalid_argument("conv2d expects 4D input and weight");
    if (x.dim(1) != w.dim(1))
        throw std::invalid_argument("conv2d channel mismatch: input " + std::to_string(x.dim(1)) +
                                    " vs weight " + std::to_string(w.dim(1)));
    if (spec.pad < 0 || spec.stride < 1) throw std::invalid_argument("conv2d: bad stride/padding");
    const int64_t B = x.dim(0), Cin = x.dim(1), H = x.dim(2), W = x.dim(3);
    const int64_t Cout = w.dim(0), kh = w.dim(2), kw = w.dim(3);
    const int64_t s = spec.stride, p = spec.pad;
    const int64_t Ho = out_dim(H, kh, s, p, "height");
    const int64_t Wo = out_dim(W, kw, s, p, "width");
    if (bias && bias->numel() != Cout) throw std::invalid_argument("conv2d: bias size mismatch");

    Tensor y({B, Cout, Ho, Wo});
    const double* xd = x.data();
    const double* wd = w.data();
    double* yd = y.data();
    for (int64_t b = 0; b < B; ++b) {
        for (int64_t co = 0; co < Cout; ++co) {
            double* yp = yd + (b * Cout + co) * Ho * Wo;
            const double bv = bias ? (*bias)[co] : 0.0;
            std::fill(yp, yp + Ho * Wo, bv);
            for (int64_t ci = 0; ci < Cin; ++ci) {
                const double* xp = xd + (b * Cin + ci) * H * W;
                const double* wp = wd + ((co * Cin + ci) * kh) * kw;
                for (int64_t ky = 0; ky < kh; ++ky) {
                    for (int64_t kx = 0; kx < kw; ++kx) {
                        const double wv = wp[ky * kw + kx];
                        if (wv == 0.0) continue;
                        for (int64_t oy = 0; oy < Ho; ++oy) {
                            const int64_t iy = oy * s - p + ky;
                            if (iy < 0 || iy >= H) continue;
                            // valid ox range for this kx
                            int64_t ox0 = 0, ox1 = Wo;  // [ox0, ox1)
                            // need 0 <= ox*s - p + kx < W
                            while (ox0 < Wo && ox0 * s - p + kx < 0) ++ox0;
                            while (ox1 > ox0 && (ox1 - 1) * s - p + kx >= W) --ox1;
                            const double* xrow = xp + iy * W - p + kx;
                            double* yrow = yp + oy * Wo;
                            if (s == 1) {
                                for (int64_t ox = ox0; ox < ox1; ++ox) yrow[ox] += wv * xrow[ox];
                            } else {
                                for (int64_t ox = ox0; ox < ox1; ++ox) yrow[ox] += wv * xrow[ox * s];
                            }
                        }
                    }
                }
            }
        }
    }
    return y;
}

void conv2d_backward(const Tensor& x, const Tensor& w, const Conv2dSpec& spec, const Tensor& gy,
                     Tensor* gx, Tensor* gw, Tensor* gb) {
    const int64_t B = x.dim(0), Cin = x.dim(1), H = x.dim(2), W = x.dim(3);
    const int64_t Cout = w.dim(0), kh = w.dim(2), kw = w.dim(3);
    const int64_t s = spec.stride, p = spec.pad;
    const int64_t Ho = gy.dim(2), Wo = gy.dim(3);
    const double* xd = x.data();
    const double* wd = w.data();
    const double* gyd = gy.data();

    if (gb) {
        for (int64_t b = 0; b < B; ++b)
            for (int64_t co = 0; co < Cout; ++co) {
                const double* gp = gyd + (b * Cout + co) * Ho * Wo;
                double acc = 0.0;
                for (int64_t i = 0; i < Ho * Wo; ++i) acc += gp[i];
                (*gb)[co] += acc;
            }
    }
    for (int64_t b = 0; b < B; ++b) {
        for (int64_t co = 0; co < Cout; ++co) {
            const double* gp = gyd + (b * Cout + co) * Ho * Wo;
            for (int64_t ci = 0; ci < Cin; ++ci) {
                const double* xp = xd + (b * Cin + ci) * H * W;
                double* gxp = gx ? gx->data() + (b * Cin + ci) * H * W : nullptr;
                for (int64_t ky = 0; ky < kh; ++ky) {
                    for (int64_t kx = 0; kx < kw; ++kx) {
                        const double wv = wd[((co * Cin + ci) * kh + ky) * kw + kx];
                        double wacc = 0.0;
                        for (int64_t oy = 0; oy < Ho; ++oy) {
                            const int64_t iy = oy * s - p + ky;
                            if (iy < 0 || iy >= H) continue;
                            int64_t ox0 = 0, ox1 = Wo;
                            while (ox0 < Wo && ox0 * s - p + kx < 0) ++ox0;
                            while (ox1 > ox0 && (ox1 - 1) * s - p + kx >= W) --ox1;
                            const double* grow = gp + oy * Wo;
                            const double* xrow = xp + iy * W - p + kx;
                            if (gw) {
                                if (s == 1)
                                    for (int64_t ox = ox0; ox < ox1; ++ox) wacc += grow[ox] * xrow[ox];
                                else
                                    for (int64_t ox = ox0; ox < ox1; ++ox) wacc += grow[ox] * xrow[ox * s];
                            }
                            if (gxp && wv != 0.0) {
                                double* gxrow = gxp + iy * W - p + kx;
                                if (s == 1)
                                    for (int64_t ox = ox0; ox < ox1; ++ox) gxrow[ox] += wv * grow[ox];
                                else
                                    for (int64_t ox = ox0; ox < ox1; ++ox) gxrow[ox * s] += wv * grow[ox];
                            }
                        }
                        if (gw) (*gw)[((co * Cin + ci) * kh + ky) * kw + kx] += wacc;
                    }
                }
            }
        }
    }
}

Tensor conv3d(const Tensor& x, const Tensor& w, const Tensor* bias, const Conv3dSpec& spec) {
    if (x.rank() != 5 || w.rank() != 5) throw std::invalid_argument("conv3d expects 5D input and weight");
    if (x.dim(1) != w.dim(1)) throw std::invalid_argument("conv3d channel mismatch");
    const int64_t B = x.dim(0), Cin = x.dim(1), L = x.dim(2), H = x.dim(3), W = x.dim(4);
    const int64_t Cout = w.dim(0), kl = w.dim(2), kh = w.dim(3), kw = w.dim(4);
    const int64_t Lo = out_dim(L, kl, spec.stride_l, spec.pad_l, "level");
    const int64_t Ho = out_dim(H, kh, spec.stride_h, spec.pad_h, "height");
    const int64_t Wo = out_dim(W, kw, spec.stride_w, spec.pad_w, "width");
    if (bias && bias->numel() != Cout) throw std::invalid_argument("conv3d: bias size mismatch");

    Tensor y({B, Cout, Lo, Ho, Wo});
    const double* xd = x.data();
    const double* wd = w.data();
    for (int64_t b = 0; b < B; ++b) {
        for (int64_t co = 0; co < Cout; ++co) {
            double* yp = y.data() + (b * Cout + co) * Lo * Ho * Wo;
            const double bv = bias ? (*bias)[co] : 0.0;
            std::fill(yp, yp + Lo * Ho * Wo, bv);
            for (int64_t ci = 0; ci < Cin; ++ci) {
                const double* xp = xd + (b * Cin + ci) * L * H * W;
                for (int64_t klv = 0; klv < kl; ++klv)
                    for (int64_t ky = 0; ky < kh; ++ky)
                        for (int64_t kx = 0; kx < kw; ++kx) {
                            const double wv = wd[(((co * Cin + ci) * kl + klv) * kh + ky) * kw + kx];
                            if (wv == 0.0) continue;
                            for (int64_t ol = 0; ol < Lo; ++ol) {
                                const int64_t il = ol * spec.stride_l - spec.pad_l + klv;
                                if (il < 0 || il >= L) continue;
                                for (int64_t oy = 0; oy < Ho; ++oy) {
                                    const int64_t iy = oy * spec.stride_h - spec.pad_h + ky;
                                    if (iy < 0 || iy >= H) continue;
                                    double* yrow = yp + (ol * Ho + oy) * Wo;
                                    const double* xrow = xp + (il * H + iy) * W;
                                    for (int64_t ox = 0; ox < Wo; ++ox) {
                                        const int64_t ix = ox * spec.stride_w - spec.pad_w + kx;
                                        if (ix < 0 || ix >= W) continue;
                                        yrow[ox] += wv * xrow[ix];
                                    }
                                }
                            }
                        }
            }
        }
    }
    return y;
}

void conv3d_backward(const Tensor& x, const Tensor& w, const Conv3dSpec& spec, const Tensor& gy,
                     Tensor* gx, Tensor* gw, Tensor* gb) {
    const int64_t B = x.dim(0), Cin = x.dim(1), L = x.dim(2), H = x.dim(3), W = x.dim(4);
    const int64_t Cout = w.dim(0), kl = w.dim(2), kh = w.dim(3), kw = w.dim(4);
    const int64_t Lo = gy.dim(2), Ho = gy.dim(3), Wo = gy.dim(4);
    const double* xd = x.data();
    const double* wd = w.data();
    const double* gyd = gy.data();

    if (gb) {
        for (int64_t b = 0; b < B; ++b)
            for (int64_t co = 0; co < Cout; ++co) {
                const double* gp = gyd + (b * Cout + co) * Lo * Ho * Wo;
                double acc = 0.0;
                for (int64_t i = 0; i < Lo * Ho * Wo; ++i) acc += gp[i];
                (*gb)[co] += acc;
            }
    }
    for (int64_t b = 0; b < B; ++b) {
        for (int64_t co = 0; co < Cout; ++co) {
            const double* gp = gyd + (b * Cout + co) * Lo * Ho * Wo;
            for (int64_t ci = 0; ci < Cin; ++ci) {
                const double* xp = xd + (b * Cin + ci) * L * H * W;
                double* gxp = gx ? gx->data() + (b * Cin + ci) * L * H * W : nullptr;
                for (int64_t klv = 0; klv < kl; ++klv)
                    for (int64_t ky = 0; ky < kh; ++ky)
                        for (int64_t kx = 0; kx < kw; ++kx) {
                            const double wv = wd[(((co * Cin + ci) * kl + klv) * kh + ky) * kw + kx];
                            double wacc = 0.0;
                            for (int64_t ol = 0; ol < Lo; ++ol) {
                                const int64_t il = ol * spec.stride_l - spec.pad_l + klv;
                                if (il < 0 || il >= L) continue;
                                for (int64_t oy = 0; oy < Ho; ++oy) {
                                    const int64_t iy = oy * spec.stride_h - spec.pad_h + ky;
                                    if (iy < 0 || iy >= H) continue;
                                    const double* grow = gp + (ol * Ho + oy) * Wo;
                                    const double* xrow = xp + (il * H + iy) * W;
                                    double* gxrow = gxp ? gxp + (il * H + iy) * W : nullptr;
                                    for (int64_t ox = 0; ox < Wo; ++ox) {
                                        const int64_t ix = ox * spec.stride_w - spec.pad_w + kx;
                                        if (ix < 0 || ix >= W) continue;
                                        if (gw) wacc += grow[ox] * xrow[ix];
                                        if (gxrow && wv != 0.0) gxrow[ix] += wv * grow[ox];
                                    }
                                }
                            }
                            if (gw) (*gw)[(((co * Cin + ci) * kl + klv) * kh + ky) * kw + kx] += wacc;
                        }
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Batch norm. Channel axis is axis 1 for every rank we handle (3/4/5).

namespace {
void bn_extents(const Tensor& x, int64_t& outer, int64_t& C, int64_t& inner) {
    if (x.rank() < 2) throw std::invalid_argument("batch_norm expects a channel axis");
    outer = x.dim(0);
    C = x.dim(1);
    inner = 1;
    for (int i = 2; i < x.rank(); ++i) inner *= x.dim(i);
}
}  // namespace

Tensor batch_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, Tensor& running_mean,
                  Tensor& running_var, double eps, double momentum, bool training,
                  BatchNormSaved* saved) {
    if (eps <= 0.0) throw std::invalid_argument("batch_norm: eps must be positive");
    int64_t B, C, inner;
    bn_extents(x, B, C, inner);
    if (gamma.numel() != C || beta.numel() != C) throw std::invalid_argument("batch_norm: affine size mismatch");
    const int64_t m = B * inner;
    if (m == 0) throw std::invalid_argument("batch_norm: zero-size batch");

    Tensor mean({C}), var({C});
    if (training) {
        for (int64_t b = 0; b < B; ++b)
            for (int64_t c = 0; c < C; ++c) {
                const double* p = x.data() + (b * C + c) * inner;
                double acc = 0.0;
                for (int64_t i = 0; i < inner; ++i) acc += p[i];
                mean[c] += acc;
            }
        for (int64_t c = 0; c < C; ++c) mean[c] /= static_cast<double>(m);
        for (int64_t b = 0; b < B; ++b)
            for (int64_t c = 0; c < C; ++c) {
                const double* p = x.data() + (b * C + c) * inner;
                double acc = 0.0;
                for (int64_t i = 0; i < inner; ++i) {
                    const double d = p[i] - mean[c];
                    acc += d * d;
                }
                var[c] += acc;
            }
        for (int64_t c = 0; c < C; ++c) var[c] /= static_cast<double>(m);
        for (int64_t c = 0; c < C; ++c) {
            running_mean[c] = (1.0 - momentum) * running_mean[c] + momentum * mean[c];
            running_var[c] = (1.0 - momentum) * running_var[c] + momentum * var[c];
        }
    } else {
        mean = running_mean;
        var = running_var;
    }

    Tensor y(x.shape(), x.roles());
    Tensor inv_std({C});
    for (int64_t c = 0; c < C; ++c) inv_std[c] = 1.0 / std::sqrt(var[c] + eps);
    Tensor xhat(x.shape(), x.roles());
    for (int64_t b = 0; b < B; ++b)
        for (int64_t c = 0; c < C; ++c) {
            const double* p = x.data() + (b * C + c) * inner;
            double* xh = xhat.data() + (b * C + c) * inner;
            double* yp = y.data() + (b * C + c) * inner;
            const double mu = mean[c], is = inv_std[c], g = gamma[c], bt = beta[c];
            for (int64_t i = 0; i < inner; ++i) {
                xh[i] = (p[i] - mu) * is;
                yp[i] = g * xh[i] + bt;
            }
        }
    if (saved) {
        saved->mean = std::move(mean);
        saved->inv_std = std::move(inv_std);
        saved->xhat = std::move(xhat);
    }
    return y;
}

void batch_norm_backward(const Tensor& gamma, const BatchNormSaved& saved, bool training,
                         const Tensor& gy, Tensor* gx, Tensor* ggamma, Tensor* gbeta) {
    int64_t B, C, inner;
    bn_extents(gy, B, C, inner);
    const int64_t m = B * inner;
    const Tensor& xhat = saved.xhat;

    Tensor sum_gy({C}), sum_gy_xhat({C});
    for (int64_t b = 0; b < B; ++b)
        for (int64_t c = 0; c < C; ++c) {
            const double* g = gy.data() + (b * C + c) * inner;
            const double* xh = xhat.data() + (b * C + c) * inner;
            double a = 0.0, axh = 0.0;
            for (int64_t i = 0; i < inner; ++i) {
                a += g[i];
                axh += g[i] * xh[i];
            }
            sum_gy[c] += a;
            sum_gy_xhat[c] += axh;
        }
    if (gbeta)
        for (int64_t c = 0; c < C; ++c) (*gbeta)[c] += sum_gy[c];
    if (ggamma)
        for (int64_t c = 0; c < C; ++c) (*ggamma)[c] += sum_gy_xhat[c];
    if (!gx) return;

    for (int64_t b = 0; b < B; ++b)
        for (int64_t c = 0; c < C; ++c) {
            const double* g = gy.data() + (b * C + c) * inner;
            const double* xh = xhat.data() + (b * C + c) * inner;
            double* gp = gx->data() + (b * C + c) * inner;
            const double k = gamma[c] * saved.inv_std[c];
            if (training) {
                const double mg = sum_gy[c] / static_cast<double>(m);
                const double mgx = sum_gy_xhat[c] / static_cast<double>(m);
                for (int64_t i = 0; i < inner; ++i) gp[i] += k * (g[i] - mg - xh[i] * mgx);
            } else {
                for (int64_t i = 0; i < inner; ++i) gp[i] += k * g[i];
            }
        }
}

Tensor leaky_relu(const Tensor& x, double slope) {
    if (slope <= 0.0 || slope >= 1.0) throw std::invalid_argument("leaky_relu: slope must be in (0,1)");
    Tensor y(x.shape(), x.roles());
    for (int64_t i = 0; i < x.numel(); ++i) y[i] = x[i] >= 0.0 ? x[i] : slope * x[i];
    return y;
}

void leaky_relu_backward(const Tensor& x, double slope, const Tensor& gy, Tensor* gx) {
    for (int64_t i = 0; i < x.numel(); ++i) (*gx)[i] += gy[i] * (x[i] >= 0.0 ? 1.0 : slope);
}

// ---------------------------------------------------------------------------
// Resize, half-pixel centers.

namespace {
struct Lerp {
    int64_t i0, i1;
    double w0, w1;
};
Lerp lerp_coeff(int64_t out_i, int64_t in_n, int64_t out_n) {
    const double scale = static_cast<double>(in_n) / static_cast<double>(out_n);
    double src = (static_cast<double>(out_i) + 0.5) * scale - 0.5;
    if (src < 0.0) src = 0.0;
    if (src > static_cast<double>(in_n - 1)) src = static_cast<double>(in_n - 1);
    const int64_t i0 = static_cast<int64_t>(std::floor(src));
    const int64_t i1 = std::min(i0 + 1, in_n - 1);
    const double w1 = src - static_cast<double>(i0);
    return {i0, i1, 1.0 - w1, w1};
}
int64_t nearest_index(int64_t out_i, int64_t in_n, int64_t out_n) {
    const double scale = static_cast<double>(in_n) / static_cast<double>(out_n);
    int64_t i = static_cast<int64_t>(std::floor((static_cast<double>(out_i) + 0.5) * scale));
    return std::clamp<int64_t>(i, 0, in_n - 1);
}
}  // namespace

Tensor resize2d(const Tensor& x, int64_t out_h, int64_t out_w, ResizeMode mode) {
    if (x.rank() != 4) throw std::invalid_argument("resize2d expects 4D input");
    if (out_h < 1 || out_w < 1) throw std::invalid_argument("resize2d: target dims must be >= 1");
    const int64_t B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    Tensor y({B, C, out_h, out_w});
    std::vector<Lerp> ly(static_cast<size_t>(out_h)), lx(static_cast<size_t>(out_w));
    std::vector<int64_t> ny(static_cast<size_t>(out_h)), nx(static_cast<size_t>(out_w));
    if (mode == ResizeMode::Bilinear) {
        for (int64_t i = 0; i < out_h; ++i) ly[static_cast<size_t>(i)] = lerp_coeff(i, H, out_h);
        for (int64_t i = 0; i < out_w; ++i) lx[static_cast<size_t>(i)] = lerp_coeff(i, W, out_w);
    } else {
        for (int64_t i = 0; i < out_h; ++i) ny[static_cast<size_t>(i)] = nearest_index(i, H, out_h);
        for (int64_t i = 0; i < out_w; ++i) nx[static_cast<size_t>(i)] = nearest_index(i, W, out_w);
    }
    for (int64_t b = 0; b < B; ++b)
        for (int64_t c = 0; c < C; ++c) {
            const double* xp = x.data() + (b * C + c) * H * W;
            double* yp = y.data() + (b * C + c) * out_h * out_w;
            for (int64_t oy = 0; oy < out_h; ++oy)
                for (int64_t ox = 0; ox < out_w; ++ox) {
                    if (mode == ResizeMode::Bilinear) {
                        const Lerp& a = ly[static_cast<size_t>(oy)];
                        const Lerp& bx = lx[static_cast<size_t>(ox)];
                        yp[oy * out_w + ox] = a.w0 * (bx.w0 * xp[a.i0 * W + bx.i0] + bx.w1 * xp[a.i0 * W + bx.i1]) +
                                              a.w1 * (bx.w0 * xp[a.i1 * W + bx.i0] + bx.w1 * xp[a.i1 * W + bx.i1]);
                    } else {
                        yp[oy * out_w + ox] = xp[ny[static_cast<size_t>(oy)] * W + nx[static_cast<size_t>(ox)]];
                    }
                }
        }
    return y;
}

void resize2d_backward(const Tensor& x, int64_t out_h, int64_t out_w, ResizeMode mode,
                       const Tensor& gy, Tensor* gx) {
    const int64_t B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    for (int64_t b = 0; b < B; ++b)
        for (int64_t c = 0; c < C; ++c) {
            const double* gp = gy.data() + (b * C + c) * out_h * out_w;
            double* gxp = gx->data() + (b * C + c) * H * W;
            for (int64_t oy = 0; oy < out_h; ++oy)
                for (int64_t ox = 0; ox < out_w; ++ox) {
                    const double g = gp[oy * out_w + ox];
                    if (mode == ResizeMode::Bilinear) {
                        const Lerp a = lerp_coeff(oy, H, out_h);
                        const Lerp bx = lerp_coeff(ox, W, out_w);
                        gxp[a.i0 * W + bx.i0] += a.w0 * bx.w0 * g;
                        gxp[a.i0 * W + bx.i1] += a.w0 * bx.w1 * g;
                        gxp[a.i1 * W + bx.i0] += a.w1 * bx.w0 * g;
                        gxp[a.i1 * W + bx.i1] += a.w1 * bx.w1 * g;
                    } else {
                        gxp[nearest_index(oy, H, out_h) * W + nearest_index(ox, W, out_w)] += g;
                    }
                }
        }
}

Tensor stack_levels(const std::vector<Tensor>& maps) {
    if (maps.empty()) throw std::invalid_argument("stack_levels: empty level list");
    const Tensor& first = maps.front();
    if (first.rank() != 4) throw std::invalid_argument("stack_levels expects 4D maps");
    for (const Tensor& t : maps)
        if (!t.same_shape(first))
            throw std::invalid_argument("stack_levels: shape mismatch " + t.shape_str() + " vs " + first.shape_str());
    const int64_t B = first.dim(0), C = first.dim(1), H = first.dim(2), W = first.dim(3);
    const int64_t L = static_cast<int64_t>(maps.size());
    Tensor y({B, C, L, H, W});
    for (int64_t b = 0; b < B; ++b)
        for (int64_t c = 0; c < C; ++c)
            for (int64_t l = 0; l < L; ++l) {
                const double* src = maps[static_cast<size_t>(l)].data() + (b * C + c) * H * W;
                double* dst = y.data() + ((b * C + c) * L + l) * H * W;
                std::copy(src, src + H * W, dst);
            }
    return y;
}

Tensor concat_channels(const Tensor& a, const Tensor& b) {
    if (a.rank() != 4 || b.rank() != 4) throw std::invalid_argument("concat_channels expects 4D tensors");
    if (a.dim(0) != b.dim(0) || a.dim(2) != b.dim(2) || a.dim(3) != b.dim(3))
        throw std::invalid_argument("concat_channels: non-channel axes mismatch " + a.shape_str() + " vs " +
                                    b.shape_str());
    const int64_t B = a.dim(0), Ca = a.dim(1), Cb = b.dim(1), H = a.dim(2), W = a.dim(3);
    Tensor y({B, Ca + Cb, H, W});
    for (int64_t bi = 0; bi < B; ++bi) {
        std::copy(a.data() + bi * Ca * H * W, a.data() + (bi + 1) * Ca * H * W,
                  y.data() + bi * (Ca + Cb) * H * W);
        std::copy(b.data() + bi * Cb * H * W, b.data() + (bi + 1) * Cb * H * W,
                  y.data() + (bi * (Ca + Cb) + Ca) * H * W);
    }
    return y;
}

Tensor avgpool_levels(const Tensor& x) {
    if (x.rank() != 5) throw std::invalid_argument("avgpool_levels expects 5D input");
    const int64_t B = x.dim(0), C = x.dim(1), L = x.dim(2), H = x.dim(3), W = x.dim(4);
    Tensor y({B, C, H, W});
    const double inv = 1.0 / static_cast<double>(L);
    for (int64_t b = 0; b < B; ++b)
        for (int64_t c = 0; c < C; ++c) {
            double* yp = y.data() + (b * C + c) * H * W;
            for (int64_t l = 0; l < L; ++l) {
                const double* xp = x.data() + ((b * C + c) * L + l) * H * W;
                for (int64_t i = 0; i < H * W; ++i) yp[i] += xp[i];
            }
            for (int64_t i = 0; i < H * W; ++i) yp[i] *= inv;
        }
    return y;
}

void avgpool_levels_backward(const Tensor& x, const Tensor& gy, Tensor* gx) {
    const int64_t B = x.dim(0), C = x.dim(1), L = x.dim(2), H = x.dim(3), W = x.dim(4);
    const double inv = 1.0 / static_cast<double>(L);
    for (int64_t b = 0; b < B; ++b)
        for (int64_t c = 0; c < C; ++c) {
            const double* gp = gy.data() + (b * C + c) * H * W;
            for (int64_t l = 0; l < L; ++l) {
                double* gxp = gx->data() + ((b * C + c) * L + l) * H * W;
                for (int64_t i = 0; i < H * W; ++i) gxp[i] += gp[i] * inv;
            }
        }
}

}  // namespace s2neck::kernels
