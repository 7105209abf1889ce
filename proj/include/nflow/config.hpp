#ifndef NFLOW_CONFIG_HPP
#define NFLOW_CONFIG_HPP

#include <algorithm>
#include <charconv>
#include <cstdint>
#include <fstream>
#include <map>
#include <numeric>
#include <optional>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "nflow/encoder.hpp"
#include "nflow/events.hpp"
#include "nflow/random.hpp"

namespace nflow {

/// Invalid or inconsistent run configuration.
class ConfigError : public std::invalid_argument {
  public:
    using std::invalid_argument::invalid_argument;
};

struct Preset {
    std::string_view name;
    CameraGeometry geometry;
    double delta_t;
    std::int32_t delta;
    std::uint32_t dim;
};

inline constexpr Preset kPresets[] = {
    {"640x480_32ms_C64_k8", {640, 480}, 0.016, 8, 64},
    {"640x480_32ms_C64_k10", {640, 480}, 0.016, 10, 64},
    {"640x480_24ms_C64_k8", {640, 480}, 0.012, 8, 64},
    {"640x480_24ms_C64_k10", {640, 480}, 0.012, 10, 64},
};

inline const Preset &find_preset(std::string_view name) {
    for (const auto &p : kPresets) {
        if (p.name == name) {
            return p;
        }
    }
    std::string known;
    for (const auto &p : kPresets) {
        known += (known.empty() ? "" : ", ") + std::string(p.name);
    }
    throw ConfigError("unknown preset '" + std::string(name) + "' (known: " + known + ")");
}

inline EncoderConfig preset_config(std::string_view name) {
    const auto &p = find_preset(name);
    EncoderConfig cfg;
    cfg.delta_t = p.delta_t;
    cfg.delta_x = p.delta;
    cfg.delta_y = p.delta;
    cfg.dim = p.dim;
    return cfg;
}

/// Which events of a slice are queried.
struct QueryPolicy {
    enum class Kind { all, every, random } kind = Kind::all;
    std::size_t param = 1;

    static QueryPolicy parse(std::string_view s) {
        auto number = [&](std::string_view digits) {
            std::size_t v = 0;
            const auto [ptr, ec] = std::from_chars(digits.data(), digits.data() + digits.size(), v);
            if (ec != std::errc{} || ptr != digits.data() + digits.size() || v == 0) {
                throw ConfigError("query policy '" + std::string(s) + "': expected a positive integer");
            }
            return v;
        };
        if (s == "all") {
            return {};
        }
        if (s.starts_with("every:")) {
            return {Kind::every, number(s.substr(6))};
        }
        if (s.starts_with("random:")) {
            return {Kind::random, number(s.substr(7))};
        }
        throw ConfigError("query policy '" + std::string(s) + "': expected all, every:k or random:m");
    }

    [[nodiscard]] std::string str() const {
        switch (kind) {
        case Kind::all:
            return "all";
        case Kind::every:
            return "every:" + std::to_string(param);
        case Kind::random:
            return "random:" + std::to_string(param);
        }
        return "all";
    }

    /// Ascending indices into a slice of n events. random:m draws m distinct
    /// indices from a generator seeded by (seed, slice_index).
    [[nodiscard]] std::vector<std::size_t> select(std::size_t n, std::size_t slice_index,
                                                  std::uint64_t seed = 0) const {
        std::vector<std::size_t> out;
        if (kind == Kind::all || (kind == Kind::random && param >= n)) {
            out.resize(n);
            std::iota(out.begin(), out.end(), std::size_t{0});
            return out;
        }
        if (kind == Kind::every) {
            for (std::size_t i = 0; i < n; i += param) {
                out.push_back(i);
            }
            return out;
        }
        // Partial Fisher-Yates.
        SplitMix64 rng(seed ^ (0x9e3779b97f4a7c15ULL * (static_cast<std::uint64_t>(slice_index) + 1)));
        std::vector<std::size_t> idx(n);
        std::iota(idx.begin(), idx.end(), std::size_t{0});
        for (std::size_t i = 0; i < param; ++i) {
            const std::size_t j = i + static_cast<std::size_t>(rng.next() % (n - i));
            std::swap(idx[i], idx[j]);
        }
        out.assign(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(param));
        std::sort(out.begin(), out.end());
        return out;
    }
};

using KeyValues = std::map<std::string, std::string>;

/// key=value lines; '#' starts a comment; blank lines are skipped.
inline KeyValues parse_key_values(std::istream &in) {
    KeyValues kv;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        const auto hash = line.find('#');
        std::string_view body = detail::trim(std::string_view(line).substr(0, hash));
        if (body.empty()) {
            continue;
        }
        const auto eq = body.find('=');
        if (eq == std::string_view::npos) {
            throw ParseError("config line " + std::to_string(line_no) + ": expected key=value", line_no);
        }
        const auto key = detail::trim(body.substr(0, eq));
        if (key.empty()) {
            throw ParseError("config line " + std::to_string(line_no) + ": empty key", line_no);
        }
        kv[std::string(key)] = std::string(detail::trim(body.substr(eq + 1)));
    }
    return kv;
}

inline KeyValues load_key_values(const std::string &path) {
    std::ifstream in(path);
    if (!in) {
        throw std::runtime_error("cannot open config file: " + path);
    }
    return parse_key_values(in);
}

struct RunConfig {
    std::optional<std::string> preset;
    EncoderConfig encoder;
    /// Zero means "from the preset or the event file".
    CameraGeometry geometry{0, 0};
    std::string events;
    std::optional<EventFormat> format;
    std::string weights;
    std::string gt;
    std::string pred;
    std::string out;
    QueryPolicy queries;
    std::uint64_t query_seed = 0;
    /// Defaults to the slice length 2*delta_t (non-overlapping slices).
    std::optional<double> stride;
    /// Defaults to the first event's timestamp.
    std::optional<double> t0;
    unsigned threads = 1;

    [[nodiscard]] double resolved_stride() const { return stride.value_or(encoder.window()); }
};

namespace detail {

inline double parse_double(const std::string &key, const std::string &v) {
    try {
        std::size_t used = 0;
        const double d = std::stod(v, &used);
        if (used != v.size()) {
            throw std::invalid_argument(v);
        }
        return d;
    } catch (const std::exception &) {
        throw ConfigError(key + ": expected a number, got '" + v + "'");
    }
}

template <typename Int> Int parse_int(const std::string &key, const std::string &v) {
    Int out{};
    const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc{} || ptr != v.data() + v.size()) {
        throw ConfigError(key + ": expected an integer, got '" + v + "'");
    }
    return out;
}

inline Precision parse_precision(const std::string &v) {
    if (v == "f32") {
        return Precision::f32;
    }
    if (v == "f64") {
        return Precision::f64;
    }
    throw ConfigError("precision: expected f32 or f64, got '" + v + "'");
}

inline EventFormat parse_format(const std::string &v) {
    if (v == "csv") {
        return EventFormat::csv;
    }
    if (v == "binary" || v == "bin") {
        return EventFormat::binary;
    }
    throw ConfigError("format: expected csv or binary, got '" + v + "'");
}

} // namespace detail

inline constexpr std::string_view kEncoderKeys[] = {"delta_t", "delta_x", "delta_y", "dim", "sigma2", "seeds"};

/// Resolves merged key/values (file first, flags layered on top). The
/// encoder comes from exactly one of `preset` or explicit encoder keys;
/// commands that never encode may pass require_encoder = false.
inline RunConfig resolve_config(const KeyValues &kv, bool require_encoder = true) {
    static const std::vector<std::string_view> known = {
        "preset", "delta_t", "delta_x", "delta_y", "dim", "sigma2", "seeds", "precision", "width", "height",
        "events", "format", "weights", "gt", "pred", "out", "queries", "query_seed", "stride", "t0", "threads"};
    for (const auto &[k, v] : kv) {
        if (std::find(known.begin(), known.end(), k) == known.end()) {
            throw ConfigError("unknown config key '" + k + "'");
        }
    }
    auto get = [&](std::string_view k) -> const std::string * {
        const auto it = kv.find(std::string(k));
        return it == kv.end() ? nullptr : &it->second;
    };
    RunConfig rc;
    std::vector<std::string> explicit_keys;
    for (auto k : kEncoderKeys) {
        if (get(k) != nullptr) {
            explicit_keys.emplace_back(k);
        }
    }
    if (const auto *p = get("preset")) {
        if (!explicit_keys.empty()) {
            throw ConfigError("preset '" + *p + "' cannot be combined with explicit encoder key '" +
                              explicit_keys.front() + "'");
        }
        rc.preset = *p;
        rc.encoder = preset_config(*p);
        rc.geometry = find_preset(*p).geometry;
    } else if (!explicit_keys.empty() || require_encoder) {
        if (explicit_keys.empty()) {
            throw ConfigError("no encoder configuration: give a preset or delta_t, delta_x and dim");
        }
        for (auto k : {"delta_t", "delta_x", "dim"}) {
            if (get(k) == nullptr) {
                throw ConfigError(std::string("explicit encoder configuration is missing '") + k + "'");
            }
        }
        rc.encoder.delta_t = detail::parse_double("delta_t", *get("delta_t"));
        rc.encoder.delta_x = detail::parse_int<std::int32_t>("delta_x", *get("delta_x"));
        rc.encoder.delta_y = get("delta_y") != nullptr ? detail::parse_int<std::int32_t>("delta_y", *get("delta_y"))
                                                       : rc.encoder.delta_x;
        rc.encoder.dim = detail::parse_int<std::uint32_t>("dim", *get("dim"));
        if (const auto *v = get("sigma2")) {
            rc.encoder.sigma2 = detail::parse_double("sigma2", *v);
        }
        if (const auto *v = get("seeds")) {
            const auto parts = detail::split_fields(*v);
            if (parts.size() != 3) {
                throw ConfigError("seeds: expected three comma-separated integers");
            }
            for (std::size_t i = 0; i < 3; ++i) {
                rc.encoder.seeds[i] = detail::parse_int<std::uint64_t>("seeds", std::string(detail::trim(parts[i])));
            }
        }
    }
    if (const auto *v = get("precision")) {
        rc.encoder.precision = detail::parse_precision(*v);
    }
    try {
        rc.encoder.validate();
    } catch (const std::invalid_argument &e) {
        throw ConfigError(e.what());
    }
    if (const auto *v = get("width")) {
        rc.geometry.width = detail::parse_int<std::int32_t>("width", *v);
    }
    if (const auto *v = get("height")) {
        rc.geometry.height = detail::parse_int<std::int32_t>("height", *v);
    }
    if (const auto *v = get("format")) {
        rc.format = detail::parse_format(*v);
    }
    for (auto [key, field] : {std::pair{"events", &rc.events}, std::pair{"weights", &rc.weights},
                              std::pair{"gt", &rc.gt}, std::pair{"pred", &rc.pred}, std::pair{"out", &rc.out}}) {
        if (const auto *v = get(key)) {
            *field = *v;
        }
    }
    if (const auto *v = get("queries")) {
        rc.queries = QueryPolicy::parse(*v);
    }
    if (const auto *v = get("query_seed")) {
        rc.query_seed = detail::parse_int<std::uint64_t>("query_seed", *v);
    }
    if (const auto *v = get("stride")) {
        rc.stride = detail::parse_double("stride", *v);
        if (!(*rc.stride > 0.0)) {
            throw ConfigError("stride must be > 0");
        }
    }
    if (const auto *v = get("t0")) {
        rc.t0 = detail::parse_double("t0", *v);
    }
    if (const auto *v = get("threads")) {
        rc.threads = detail::parse_int<unsigned>("threads", *v);
    }
    return rc;
}

/// Shortest decimal text that reads back to the same double.
inline std::string format_double(double v) {
    char buf[32];
    const auto [end, ec] = std::to_chars(buf, buf + sizeof(buf), v);
    return ec == std::errc{} ? std::string(buf, end) : std::to_string(v);
}

inline std::string precision_name(Precision p) { return p == Precision::f64 ? "f64" : "f32"; }

/// Fully resolved configuration as '# key=value' lines.
inline void echo_config(std::ostream &os, const RunConfig &rc, std::string_view prefix = "# ") {
    const auto &e = rc.encoder;
    std::ostringstream body;
    if (rc.preset) {
        body << "preset=" << *rc.preset << "\n";
    }
    body << "delta_t=" << format_double(e.delta_t) << "\n"
         << "delta_x=" << e.delta_x << "\n"
         << "delta_y=" << e.delta_y << "\n"
         << "dim=" << e.dim << "\n"
         << "sigma2=" << format_double(e.sigma2) << "\n"
         << "seeds=" << e.seeds[0] << "," << e.seeds[1] << "," << e.seeds[2] << "\n"
         << "precision=" << precision_name(e.precision) << "\n"
         << "width=" << rc.geometry.width << "\n"
         << "height=" << rc.geometry.height << "\n"
         << "queries=" << rc.queries.str() << "\n"
         << "query_seed=" << rc.query_seed << "\n"
         << "stride=" << format_double(rc.resolved_stride()) << "\n";
    if (rc.t0) {
        body << "t0=" << format_double(*rc.t0) << "\n";
    }
    body << "threads=" << rc.threads << "\n";
    for (auto [key, v] : {std::pair{"events", &rc.events}, std::pair{"weights", &rc.weights},
                          std::pair{"gt", &rc.gt}, std::pair{"pred", &rc.pred}, std::pair{"out", &rc.out}}) {
        if (!v->empty()) {
            body << key << "=" << *v << "\n";
        }
    }
    std::istringstream lines(body.str());
    std::string line;
    while (std::getline(lines, line)) {
        os << prefix << line << "\n";
    }
}

} // namespace nflow

#endif // NFLOW_CONFIG_HPP
