#ifndef NFLOW_RENDER_HPP
#define NFLOW_RENDER_HPP

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <numbers>
#include <ostream>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "nflow/events.hpp"
#include "nflow/metrics.hpp"

namespace nflow {

struct RgbImage {
    CameraGeometry geometry;
    std::vector<std::uint8_t> rgb;

    [[nodiscard]] std::array<std::uint8_t, 3> at(std::int32_t x, std::int32_t y) const {
        const std::size_t i = 3 * (static_cast<std::size_t>(y) * static_cast<std::size_t>(geometry.width) +
                                   static_cast<std::size_t>(x));
        return {rgb[i], rgb[i + 1], rgb[i + 2]};
    }
};

struct RenderInfo {
    double max_magnitude = 0.0;
    std::size_t colored_pixels = 0;
    std::size_t predictions = 0;
};

/// HSV with V = 1 to 8-bit RGB; hue in degrees.
inline std::array<std::uint8_t, 3> hsv_to_rgb(double hue, double sat) {
    const double h = std::fmod(std::fmod(hue, 360.0) + 360.0, 360.0) / 60.0;
    const double c = sat;
    const double x = c * (1.0 - std::abs(std::fmod(h, 2.0) - 1.0));
    double r = 0.0;
    double g = 0.0;
    double b = 0.0;
    switch (static_cast<int>(h)) {
    case 0:
        r = c, g = x;
        break;
    case 1:
        r = x, g = c;
        break;
    case 2:
        g = c, b = x;
        break;
    case 3:
        g = x, b = c;
        break;
    case 4:
        r = x, b = c;
        break;
    default:
        r = c, b = x;
        break;
    }
    const double m = 1.0 - sat;
    auto q = [](double v) { return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0)); };
    return {q(r + m), q(g + m), q(b + m)};
}

/// Hue = direction atan2(ny, nx) in image coordinates (y down), saturation =
/// magnitude / per-image max, value = 1. Several predictions at one pixel
/// are averaged; pixels without predictions stay black.
inline RgbImage render_flow(std::span<const PixelFlow> preds, CameraGeometry geometry, RenderInfo *info = nullptr) {
    if (!geometry.valid()) {
        throw std::invalid_argument("render_flow: invalid geometry");
    }
    const std::size_t n = geometry.pixels();
    std::vector<double> sx(n, 0.0);
    std::vector<double> sy(n, 0.0);
    std::vector<std::uint32_t> count(n, 0);
    for (const auto &p : preds) {
        if (!geometry.contains(p.x, p.y)) {
            throw std::out_of_range("render_flow: prediction at (" + std::to_string(p.x) + "," +
                                    std::to_string(p.y) + ") outside the image");
        }
        const std::size_t i = static_cast<std::size_t>(p.y) * static_cast<std::size_t>(geometry.width) +
                              static_cast<std::size_t>(p.x);
        sx[i] += p.n_hat.x;
        sy[i] += p.n_hat.y;
        ++count[i];
    }
    RenderInfo local;
    local.predictions = preds.size();
    for (std::size_t i = 0; i < n; ++i) {
        if (count[i] != 0) {
            sx[i] /= count[i];
            sy[i] /= count[i];
            local.max_magnitude = std::max(local.max_magnitude, std::hypot(sx[i], sy[i]));
        }
    }
    RgbImage img{geometry, std::vector<std::uint8_t>(3 * n, 0)};
    for (std::size_t i = 0; i < n; ++i) {
        if (count[i] == 0) {
            continue;
        }
        ++local.colored_pixels;
        const double mag = std::hypot(sx[i], sy[i]);
        const double sat = local.max_magnitude > 0.0 ? mag / local.max_magnitude : 0.0;
        const double hue = std::atan2(sy[i], sx[i]) * 180.0 / std::numbers::pi;
        const auto c = hsv_to_rgb(hue, sat);
        std::copy(c.begin(), c.end(), img.rgb.begin() + static_cast<std::ptrdiff_t>(3 * i));
    }
    if (info != nullptr) {
        *info = local;
    }
    return img;
}

inline void write_ppm(std::ostream &os, const RgbImage &img) {
    os << "P6\n" << img.geometry.width << " " << img.geometry.height << "\n255\n";
    os.write(reinterpret_cast<const char *>(img.rgb.data()), static_cast<std::streamsize>(img.rgb.size()));
}

inline void save_ppm(const std::string &path, const RgbImage &img) {
    std::ofstream os(path, std::ios::binary);
    if (!os) {
        throw std::runtime_error("cannot write image: " + path);
    }
    write_ppm(os, img);
}

inline void write_render_sidecar(std::ostream &os, const RenderInfo &info) {
    os.precision(17);
    os << "hue=atan2(ny,nx) degrees, 0=+x (red), 90=+y (image down)\n"
       << "saturation=|n|/max_magnitude\n"
       << "value=1; pixels without predictions are black\n"
       << "max_magnitude=" << info.max_magnitude << " px/s\n"
       << "colored_pixels=" << info.colored_pixels << "\n"
       << "predictions=" << info.predictions << "\n";
}

} // namespace nflow

#endif // NFLOW_RENDER_HPP
