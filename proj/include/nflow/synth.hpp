#ifndef NFLOW_SYNTH_HPP
#define NFLOW_SYNTH_HPP

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <stdexcept>
#include <string>
#include <string_view>

#include "nflow/events.hpp"
#include "nflow/metrics.hpp"
#include "nflow/random.hpp"

namespace nflow {

enum class Scene { uniform_noise, translating_edge, rotating_bar };

inline Scene parse_scene(std::string_view s) {
    if (s == "uniform_noise") {
        return Scene::uniform_noise;
    }
    if (s == "translating_edge") {
        return Scene::translating_edge;
    }
    if (s == "rotating_bar") {
        return Scene::rotating_bar;
    }
    throw std::invalid_argument("unknown scene '" + std::string(s) +
                                "' (expected uniform_noise, translating_edge or rotating_bar)");
}

inline const char *scene_name(Scene s) {
    switch (s) {
    case Scene::uniform_noise:
        return "uniform_noise";
    case Scene::translating_edge:
        return "translating_edge";
    case Scene::rotating_bar:
        return "rotating_bar";
    }
    return "?";
}

struct SceneParams {
    std::uint64_t seed = 0;
    /// Slice length in seconds.
    double window = 0.032;
    /// Edge velocity in pixels/second (translating_edge).
    FlowVector velocity{100.0, 0.0};
    /// Direction of the edge normal in radians (translating_edge).
    double edge_angle = 0.0;
    /// Signed offset of the edge from the image centre along its normal at
    /// mid-window, in pixels.
    double edge_offset = 0.0;
    /// Radians/second about the image centre (rotating_bar).
    double angular_velocity = 3.0;
    /// Standard deviation of positional jitter before rounding, pixels.
    double jitter = 0.3;
    /// Fraction of events replaced by uniform background noise.
    double noise_fraction = 0.0;
};

struct Workload {
    EventSlice slice;
    FlowField gt;
};

namespace detail {

class SceneRng {
  public:
    explicit SceneRng(std::uint64_t seed) : gen_(seed) {}
    double uniform(double lo, double hi) { return lo + (hi - lo) * gen_.uniform(); }
    double normal() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        const double u1 = (static_cast<double>(gen_.next() >> 11) + 1.0) * 0x1.0p-53;
        const double u2 = static_cast<double>(gen_.next() >> 11) * 0x1.0p-53;
        const double r = std::sqrt(-2.0 * std::log(u1));
        spare_ = r * std::sin(2.0 * std::numbers::pi * u2);
        has_spare_ = true;
        return r * std::cos(2.0 * std::numbers::pi * u2);
    }
    std::uint64_t next() { return gen_.next(); }

  private:
    SplitMix64 gen_;
    double spare_ = 0.0;
    bool has_spare_ = false;
};

} // namespace detail

/// Synthetic slice starting at t=0 plus a GT flow map valid exactly at
/// pixels where scene (non-noise) events fired. Deterministic per seed.
inline Workload synth_workload(std::size_t n_events, CameraGeometry geometry, Scene scene,
                               const SceneParams &p = {}) {
    if (!geometry.valid()) {
        throw std::invalid_argument("synth_workload: invalid geometry");
    }
    if (!(p.window > 0.0)) {
        throw std::invalid_argument("synth_workload: window must be > 0");
    }
    detail::SceneRng rng(p.seed);
    FlowField gt(geometry);
    std::vector<Event> events;
    events.reserve(n_events);
    const double cx = 0.5 * (geometry.width - 1);
    const double cy = 0.5 * (geometry.height - 1);
    const double reach = 0.5 * std::hypot(geometry.width, geometry.height) + 2.0;

    auto noise_event = [&] {
        const double t = rng.uniform(0.0, p.window);
        const auto x = static_cast<std::int32_t>(rng.next() % static_cast<std::uint64_t>(geometry.width));
        const auto y = static_cast<std::int32_t>(rng.next() % static_cast<std::uint64_t>(geometry.height));
        return Event{t, x, y, static_cast<std::int8_t>((rng.next() & 1) != 0 ? 1 : -1)};
    };

    for (std::size_t i = 0; i < n_events; ++i) {
        if (scene == Scene::uniform_noise || (p.noise_fraction > 0.0 && rng.uniform(0.0, 1.0) < p.noise_fraction)) {
            events.push_back(noise_event());
            continue;
        }
        // Rejection-sample a point on the moving curve that lands in frame.
        for (int attempt = 0;; ++attempt) {
            if (attempt == 1000) {
                throw std::invalid_argument("synth_workload: scene never intersects the image");
            }
            const double t = rng.uniform(0.0, p.window);
            double px = 0.0;
            double py = 0.0;
            FlowVector u;
            std::int8_t pol = 1;
            if (scene == Scene::translating_edge) {
                const double nx = std::cos(p.edge_angle);
                const double ny = std::sin(p.edge_angle);
                const double speed = p.velocity.x * nx + p.velocity.y * ny;
                const double along = p.edge_offset + speed * (t - 0.5 * p.window);
                const double tangent = rng.uniform(-reach, reach);
                px = cx + along * nx - tangent * ny;
                py = cy + along * ny + tangent * nx;
                u = p.velocity;
                pol = speed >= 0.0 ? 1 : -1;
            } else {
                const double theta = p.angular_velocity * t;
                const double r = rng.uniform(-reach, reach);
                px = cx + r * std::cos(theta);
                py = cy + r * std::sin(theta);
                pol = r >= 0.0 ? 1 : -1;
            }
            px += p.jitter * rng.normal();
            py += p.jitter * rng.normal();
            const auto x = static_cast<std::int32_t>(std::lround(px));
            const auto y = static_cast<std::int32_t>(std::lround(py));
            if (!geometry.contains(x, y)) {
                continue;
            }
            if (scene == Scene::rotating_bar) {
                u = {-p.angular_velocity * (y - cy), p.angular_velocity * (x - cx)};
            }
            gt.set(x, y, u);
            events.push_back({t, x, y, pol});
            break;
        }
    }
    std::stable_sort(events.begin(), events.end(), [](const Event &a, const Event &b) { return a.t < b.t; });
    return {EventSlice(std::move(events), 0.0, p.window, geometry), std::move(gt)};
}

} // namespace nflow

#endif // NFLOW_SYNTH_HPP
