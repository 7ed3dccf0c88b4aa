#pragma once

// Border crop, bilinear resize to the model resolution, channel-wise
// normalization, and the geometric training augmentations
// (rotate -> flips -> random resized crop; no intensity transforms).

#include <array>
#include <cmath>
#include <numbers>
#include <vector>

#include "usfmae/errors.hpp"
#include "usfmae/image.hpp"
#include "usfmae/rng.hpp"
#include "usfmae/tensor.hpp"

namespace usfmae {

struct PreprocessConfig {
    int crop_top = 0;  // metadata band height is device-dependent, hence configurable
    int crop_bottom = 0;
    int crop_left = 0;
    int crop_right = 0;
    int target_size = 224;
    std::array<float, 3> mean = {0.485f, 0.456f, 0.406f};
    std::array<float, 3> stddev = {0.229f, 0.224f, 0.225f};
};

namespace detail {

// half-pixel-center mapping; identity when sizes match
inline void bilinear_resize_plane(const std::vector<float>& src, int sw, int sh, std::vector<float>& dst, int dw,
                                  int dh) {
    dst.resize(static_cast<size_t>(dw) * dh);
    const double sx = static_cast<double>(sw) / dw;
    const double sy = static_cast<double>(sh) / dh;
    for (int y = 0; y < dh; ++y) {
        const double fy = (y + 0.5) * sy - 0.5;
        int y0 = static_cast<int>(std::floor(fy));
        const double wy = fy - y0;
        const int y1 = std::min(y0 + 1, sh - 1);
        y0 = std::max(y0, 0);
        for (int x = 0; x < dw; ++x) {
            const double fx = (x + 0.5) * sx - 0.5;
            int x0 = static_cast<int>(std::floor(fx));
            const double wx = fx - x0;
            const int x1 = std::min(x0 + 1, sw - 1);
            x0 = std::max(x0, 0);
            const double top = src[static_cast<size_t>(y0) * sw + x0] * (1.0 - wx) +
                               src[static_cast<size_t>(y0) * sw + x1] * wx;
            const double bot = src[static_cast<size_t>(y1) * sw + x0] * (1.0 - wx) +
                               src[static_cast<size_t>(y1) * sw + x1] * wx;
            dst[static_cast<size_t>(y) * dw + x] = static_cast<float>(top * (1.0 - wy) + bot * wy);
        }
    }
}

// bilinear sample with zero fill outside the plane
inline float sample_zero(const std::vector<float>& plane, int w, int h, double x, double y) {
    const int x0 = static_cast<int>(std::floor(x));
    const int y0 = static_cast<int>(std::floor(y));
    const double wx = x - x0, wy = y - y0;
    auto px = [&](int xi, int yi) -> double {
        if (xi < 0 || yi < 0 || xi >= w || yi >= h) return 0.0;
        return plane[static_cast<size_t>(yi) * w + xi];
    };
    const double top = px(x0, y0) * (1.0 - wx) + px(x0 + 1, y0) * wx;
    const double bot = px(x0, y0 + 1) * (1.0 - wx) + px(x0 + 1, y0 + 1) * wx;
    return static_cast<float>(top * (1.0 - wy) + bot * wy);
}

}  // namespace detail

// ImageRecord -> normalized [3, S, S]; grayscale replicated to 3 channels
inline Tensor<float> preprocess(const ImageRecord& img, const PreprocessConfig& cfg) {
    const int cw = img.width - cfg.crop_left - cfg.crop_right;
    const int ch = img.height - cfg.crop_top - cfg.crop_bottom;
    if (cw <= 0 || ch <= 0)
        throw ConfigError("border crop (" + std::to_string(cfg.crop_top) + "," + std::to_string(cfg.crop_bottom) +
                          "," + std::to_string(cfg.crop_left) + "," + std::to_string(cfg.crop_right) +
                          ") exceeds image " + std::to_string(img.width) + "x" + std::to_string(img.height));
    const int S = cfg.target_size;
    std::vector<float> out(static_cast<size_t>(3) * S * S);
    std::vector<float> plane(static_cast<size_t>(cw) * ch);
    std::vector<float> resized;
    for (int c = 0; c < 3; ++c) {
        const int src_c = (img.channels == 3) ? c : 0;
        for (int y = 0; y < ch; ++y)
            for (int x = 0; x < cw; ++x)
                plane[static_cast<size_t>(y) * cw + x] =
                    static_cast<float>(img.at(y + cfg.crop_top, x + cfg.crop_left, src_c));
        detail::bilinear_resize_plane(plane, cw, ch, resized, S, S);
        for (size_t i = 0; i < resized.size(); ++i)
            out[static_cast<size_t>(c) * S * S + i] = (resized[i] / 255.0f - cfg.mean[c]) / cfg.stddev[c];
    }
    return Tensor<float>::from_data({3, S, S}, std::move(out));
}

struct AugmentParams {
    double angle_deg = 0.0;  // U[0, 90]
    bool hflip = false;      // each p = 0.5
    bool vflip = false;
    double area_scale = 1.0;  // U[0.5, 2.0]; > 1 zooms out with zero padding
    double offset_x = 0.5;    // window placement in [0,1] of the feasible range
    double offset_y = 0.5;
};

// draw order: angle, hflip, vflip, scale, offsets
inline AugmentParams sample_augment_params(Rng& rng) {
    AugmentParams p;
    p.angle_deg = rng.uniform(0.0, 90.0);
    p.hflip = rng.bernoulli(0.5);
    p.vflip = rng.bernoulli(0.5);
    p.area_scale = rng.uniform(0.5, 2.0);
    p.offset_x = rng.uniform();
    p.offset_y = rng.uniform();
    return p;
}

inline Tensor<float> augment_with_params(const Tensor<float>& t, const AugmentParams& prm) {
    if (t.ndim() != 3 || t.dim(0) != 3 || t.dim(1) != t.dim(2))
        throw ConfigError("augment expects [3,S,S], got " + shape_str(t.shape()));
    const int S = t.dim(1);
    const size_t plane_n = static_cast<size_t>(S) * S;
    std::vector<float> work(t.data());

    // rotation about the image center, zero fill
    if (prm.angle_deg != 0.0) {
        const double a = prm.angle_deg * std::numbers::pi / 180.0;
        const double ca = std::cos(a), sa = std::sin(a);
        const double cx = (S - 1) * 0.5;
        std::vector<float> rot(work.size());
        for (int c = 0; c < 3; ++c) {
            std::vector<float> plane(work.begin() + c * plane_n, work.begin() + (c + 1) * plane_n);
            for (int y = 0; y < S; ++y)
                for (int x = 0; x < S; ++x) {
                    const double dx = x - cx, dy = y - cx;
                    const double sx = cx + ca * dx + sa * dy;  // inverse rotation
                    const double sy = cx - sa * dx + ca * dy;
                    rot[c * plane_n + static_cast<size_t>(y) * S + x] = detail::sample_zero(plane, S, S, sx, sy);
                }
        }
        work = std::move(rot);
    }

    if (prm.hflip) {
        for (int c = 0; c < 3; ++c)
            for (int y = 0; y < S; ++y)
                for (int x = 0; x < S / 2; ++x)
                    std::swap(work[c * plane_n + static_cast<size_t>(y) * S + x],
                              work[c * plane_n + static_cast<size_t>(y) * S + (S - 1 - x)]);
    }
    if (prm.vflip) {
        for (int c = 0; c < 3; ++c)
            for (int y = 0; y < S / 2; ++y)
                for (int x = 0; x < S; ++x)
                    std::swap(work[c * plane_n + static_cast<size_t>(y) * S + x],
                              work[c * plane_n + static_cast<size_t>(S - 1 - y) * S + x]);
    }

    // random resized crop, aspect ratio 1; window side S*sqrt(s), resized
    // back to S; for s > 1 the window overhangs and reads zeros
    if (prm.area_scale != 1.0 || prm.offset_x != 0.5 || prm.offset_y != 0.5) {
        const double side = S * std::sqrt(prm.area_scale);
        const double lo = std::min(0.0, S - side);
        const double hi = std::max(0.0, S - side);
        const double ox = lo + (hi - lo) * prm.offset_x;
        const double oy = lo + (hi - lo) * prm.offset_y;
        const double step = side / S;
        std::vector<float> cropped(work.size());
        for (int c = 0; c < 3; ++c) {
            std::vector<float> plane(work.begin() + c * plane_n, work.begin() + (c + 1) * plane_n);
            for (int y = 0; y < S; ++y)
                for (int x = 0; x < S; ++x) {
                    const double sx = ox + (x + 0.5) * step - 0.5;
                    const double sy = oy + (y + 0.5) * step - 0.5;
                    cropped[c * plane_n + static_cast<size_t>(y) * S + x] =
                        detail::sample_zero(plane, S, S, sx, sy);
                }
        }
        work = std::move(cropped);
    }

    return Tensor<float>::from_data(t.shape(), std::move(work));
}

// training-split images only; validation/test stay untouched
inline Tensor<float> augment(const Tensor<float>& t, Rng& rng) {
    return augment_with_params(t, sample_augment_params(rng));
}

}  // namespace usfmae
