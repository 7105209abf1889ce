#ifndef NFLOW_EVENTS_HPP
#define NFLOW_EVENTS_HPP

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "nflow/binary_io.hpp"

namespace nflow {

struct CameraGeometry {
    std::int32_t width = 0;
    std::int32_t height = 0;

    [[nodiscard]] bool valid() const noexcept { return width >= 1 && height >= 1; }
    [[nodiscard]] bool contains(std::int32_t x, std::int32_t y) const noexcept {
        return x >= 0 && y >= 0 && x < width && y < height;
    }
    [[nodiscard]] std::size_t pixels() const noexcept {
        return static_cast<std::size_t>(width) * static_cast<std::size_t>(height);
    }
    friend bool operator==(const CameraGeometry &, const CameraGeometry &) = default;
};

/// One camera event. Time is in seconds; polarity is carried through I/O but
/// never read by the encoder.
struct Event {
    double t = 0.0;
    std::int32_t x = 0;
    std::int32_t y = 0;
    std::optional<std::int8_t> polarity;

    friend bool operator==(const Event &, const Event &) = default;
};

struct EventStream {
    std::vector<Event> events;
    CameraGeometry geometry;
};

/// Events of one time window [t_start, t_start + window]. Immutable once
/// built; the constructor enforces ordering, window membership and geometry.
class EventSlice {
  public:
    EventSlice() = default;

    EventSlice(std::vector<Event> events, double t_start, double window,
               CameraGeometry geometry)
        : events_(std::move(events)), t_start_(t_start), window_(window),
          geometry_(geometry) {
        if (!geometry_.valid()) {
            throw std::invalid_argument("EventSlice: geometry must be at least 1x1");
        }
        if (!(window_ > 0.0) || !std::isfinite(window_) || !std::isfinite(t_start_)) {
            throw std::invalid_argument("EventSlice: window must be finite and positive");
        }
        const double t_end = t_start_ + window_;
        for (std::size_t i = 0; i < events_.size(); ++i) {
            const Event &e = events_[i];
            if (!(e.t >= t_start_ && e.t <= t_end)) {
                throw std::invalid_argument("EventSlice: event " + std::to_string(i) +
                                            " outside the time window");
            }
            if (i > 0 && e.t < events_[i - 1].t) {
                throw std::invalid_argument("EventSlice: events not sorted at index " +
                                            std::to_string(i));
            }
            if (!geometry_.contains(e.x, e.y)) {
                throw std::invalid_argument("EventSlice: event " + std::to_string(i) +
                                            " outside camera geometry");
            }
        }
    }

    /// Convenience: a slice starting at the first event's time.
    static EventSlice from_events(std::vector<Event> events, double window,
                                  CameraGeometry geometry) {
        std::stable_sort(events.begin(), events.end(),
                         [](const Event &a, const Event &b) { return a.t < b.t; });
        const double start = events.empty() ? 0.0 : events.front().t;
        return EventSlice(std::move(events), start, window, geometry);
    }

    [[nodiscard]] const std::vector<Event> &events() const noexcept { return events_; }
    [[nodiscard]] std::size_t size() const noexcept { return events_.size(); }
    [[nodiscard]] bool empty() const noexcept { return events_.empty(); }
    [[nodiscard]] const Event &operator[](std::size_t i) const { return events_[i]; }
    [[nodiscard]] double t_start() const noexcept { return t_start_; }
    [[nodiscard]] double window() const noexcept { return window_; }
    [[nodiscard]] const CameraGeometry &geometry() const noexcept { return geometry_; }

  private:
    std::vector<Event> events_;
    double t_start_ = 0.0;
    double window_ = 1.0;
    CameraGeometry geometry_{1, 1};
};

enum class EventFormat { csv, binary };

namespace detail {

inline std::string_view trim(std::string_view s) {
    const auto first = s.find_first_not_of(" \t\r");
    if (first == std::string_view::npos) {
        return {};
    }
    const auto last = s.find_last_not_of(" \t\r");
    return s.substr(first, last - first + 1);
}

inline std::vector<std::string_view> split_fields(std::string_view line, char sep = ',') {
    std::vector<std::string_view> out;
    std::size_t pos = 0;
    while (true) {
        const auto next = line.find(sep, pos);
        out.push_back(trim(line.substr(pos, next == std::string_view::npos ? next : next - pos)));
        if (next == std::string_view::npos) {
            break;
        }
        pos = next + 1;
    }
    return out;
}

template <typename T> std::optional<T> parse_number(std::string_view s) {
    if (!s.empty() && s.front() == '+') {
        s.remove_prefix(1);
    }
    T value{};
    const auto *end = s.data() + s.size();
    auto [ptr, ec] = std::from_chars(s.data(), end, value);
    if (ec != std::errc() || ptr != end || s.empty()) {
        return std::nullopt;
    }
    return value;
}

} // namespace detail

/// Parses `t,x,y[,p]` lines. A first line whose leading field is not numeric
/// is treated as a header. Blank lines and `#` comments are skipped.
inline EventStream parse_events_csv(std::istream &in, CameraGeometry geometry) {
    if (!geometry.valid()) {
        throw std::invalid_argument("CSV events need a declared camera geometry");
    }
    EventStream stream;
    stream.geometry = geometry;
    std::string line;
    std::uint64_t line_no = 0;
    bool first_content = true;
    while (std::getline(in, line)) {
        ++line_no;
        const auto body = detail::trim(line);
        if (body.empty() || body.front() == '#') {
            continue;
        }
        const auto fields = detail::split_fields(body);
        if (first_content) {
            first_content = false;
            if (!detail::parse_number<double>(fields[0])) {
                continue; // header
            }
        }
        if (fields.size() != 3 && fields.size() != 4) {
            throw ParseError("line " + std::to_string(line_no) + ": expected 3 or 4 fields, got " +
                                 std::to_string(fields.size()),
                             line_no);
        }
        const auto t = detail::parse_number<double>(fields[0]);
        const auto x = detail::parse_number<std::int32_t>(fields[1]);
        const auto y = detail::parse_number<std::int32_t>(fields[2]);
        if (!t || !x || !y) {
            throw ParseError("line " + std::to_string(line_no) + ": malformed t,x,y", line_no);
        }
        if (!std::isfinite(*t) || *t < 0.0) {
            throw ParseError("line " + std::to_string(line_no) + ": timestamp must be finite and >= 0",
                             line_no);
        }
        if (*x < 0 || *x >= geometry.width) {
            throw ParseError("line " + std::to_string(line_no) + ": x=" + std::to_string(*x) +
                                 " violates 0 <= x < W=" + std::to_string(geometry.width),
                             line_no);
        }
        if (*y < 0 || *y >= geometry.height) {
            throw ParseError("line " + std::to_string(line_no) + ": y=" + std::to_string(*y) +
                                 " violates 0 <= y < H=" + std::to_string(geometry.height),
                             line_no);
        }
        Event e{*t, *x, *y, std::nullopt};
        if (fields.size() == 4) {
            const auto p = detail::parse_number<int>(fields[3]);
            if (!p || (*p != 0 && *p != 1 && *p != -1)) {
                throw ParseError("line " + std::to_string(line_no) + ": polarity must be 0, 1, -1 or +1",
                                 line_no);
            }
            e.polarity = static_cast<std::int8_t>(*p);
        }
        stream.events.push_back(e);
    }
    return stream;
}

inline constexpr std::string_view kEventMagic = "EVN1";
inline constexpr std::size_t kEventRecordBytes = 17;

/// `EVN1`, u32 W, u32 H, then packed 17-byte records (f64 t, i32 x, i32 y, i8 p).
inline EventStream parse_events_binary(std::istream &in) {
    le::Reader r(in);
    r.expect_magic(kEventMagic);
    EventStream stream;
    stream.geometry.width = static_cast<std::int32_t>(r.u32("width"));
    stream.geometry.height = static_cast<std::int32_t>(r.u32("height"));
    if (!stream.geometry.valid()) {
        throw ParseError("binary events: geometry must be at least 1x1", r.offset());
    }
    std::size_t index = 0;
    while (!r.at_end()) {
        const auto record_offset = r.offset();
        Event e;
        e.t = r.f64("t");
        e.x = r.i32("x");
        e.y = r.i32("y");
        e.polarity = r.i8("polarity");
        if (!std::isfinite(e.t) || e.t < 0.0) {
            throw ParseError("record " + std::to_string(index) + " (byte " +
                                 std::to_string(record_offset) + "): invalid timestamp",
                             record_offset);
        }
        if (!stream.geometry.contains(e.x, e.y)) {
            throw ParseError("record " + std::to_string(index) + " (byte " +
                                 std::to_string(record_offset) + "): pixel (" + std::to_string(e.x) +
                                 "," + std::to_string(e.y) + ") outside " +
                                 std::to_string(stream.geometry.width) + "x" +
                                 std::to_string(stream.geometry.height),
                             record_offset);
        }
        stream.events.push_back(e);
        ++index;
    }
    return stream;
}

inline void write_events_binary(std::ostream &os, const EventStream &stream) {
    le::put_magic(os, kEventMagic);
    le::put_u32(os, static_cast<std::uint32_t>(stream.geometry.width));
    le::put_u32(os, static_cast<std::uint32_t>(stream.geometry.height));
    for (const Event &e : stream.events) {
        le::put_f64(os, e.t);
        le::put_i32(os, e.x);
        le::put_i32(os, e.y);
        le::put_i8(os, e.polarity.value_or(0));
    }
}

inline void write_events_csv(std::ostream &os, const std::vector<Event> &events) {
    os.precision(17);
    for (const Event &e : events) {
        os << e.t << ',' << e.x << ',' << e.y;
        if (e.polarity) {
            os << ',' << static_cast<int>(*e.polarity);
        }
        os << '\n';
    }
}

/// Loads an event file. `geometry` is required for CSV and ignored for the
/// binary format, which carries its own.
inline EventStream load_events(const std::string &path, EventFormat format,
                               CameraGeometry geometry = {}) {
    std::ifstream in(path, format == EventFormat::binary ? std::ios::binary : std::ios::in);
    if (!in) {
        throw std::runtime_error("cannot open event file: " + path);
    }
    return format == EventFormat::csv ? parse_events_csv(in, geometry) : parse_events_binary(in);
}

/// Cuts a stream into windows [t0 + i*stride, t0 + i*stride + 2*delta_t).
/// Events before t0 are dropped; slices past the last event are not emitted.
inline std::vector<EventSlice> slice_stream(EventStream stream, double delta_t, double stride,
                                            double t0) {
    if (!(delta_t > 0.0) || !(stride > 0.0) || !std::isfinite(delta_t) || !std::isfinite(stride) ||
        !std::isfinite(t0)) {
        throw std::invalid_argument("slice_stream: delta_t and stride must be finite and positive");
    }
    auto &events = stream.events;
    if (!std::is_sorted(events.begin(), events.end(),
                        [](const Event &a, const Event &b) { return a.t < b.t; })) {
        std::stable_sort(events.begin(), events.end(),
                         [](const Event &a, const Event &b) { return a.t < b.t; });
    }
    std::vector<EventSlice> slices;
    if (events.empty() || events.back().t < t0) {
        return slices;
    }
    const double window = 2.0 * delta_t;
    // end_i is written so that stride == window makes end_i == start_{i+1}
    // bit-for-bit, giving an exact partition.
    const double end_offset = window / stride;
    const double t_last = events.back().t;
    auto by_time = [](const Event &e, double t) { return e.t < t; };
    for (std::size_t i = 0;; ++i) {
        const double di = static_cast<double>(i);
        const double start = t0 + di * stride;
        if (start > t_last) {
            break;
        }
        const double end = t0 + (di + end_offset) * stride;
        auto first = std::lower_bound(events.begin(), events.end(), start, by_time);
        auto last = std::lower_bound(first, events.end(), end, by_time);
        slices.emplace_back(std::vector<Event>(first, last), start, window, stream.geometry);
    }
    return slices;
}

/// Shifts timestamps to slice-local time (t - t_start) and sets t_start = 0.
inline EventSlice rebase_slice(const EventSlice &slice) {
    if (slice.t_start() == 0.0) {
        return slice;
    }
    std::vector<Event> events = slice.events();
    const double origin = slice.t_start();
    for (Event &e : events) {
        e.t -= origin;
    }
    return EventSlice(std::move(events), 0.0, slice.window(), slice.geometry());
}

} // namespace nflow

#endif // NFLOW_EVENTS_HPP
