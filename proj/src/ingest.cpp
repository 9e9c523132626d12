#include "tgraph/ingest.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <map>
#include <ostream>
#include <set>
#include <stdexcept>
#include <tuple>
#include <unordered_map>

#include "text_util.hpp"

namespace tgraph::ingest {

namespace {

enum class Schema { pixel_frames, metric_seconds };

std::optional<double> frame_rate_comment(std::string_view comment) {
  // "# frame_rate: 50" or "# frame_rate = 50"
  auto body = text::trim(comment.substr(1));
  constexpr std::string_view key = "frame_rate";
  if (body.substr(0, key.size()) != key) return std::nullopt;
  body = text::trim(body.substr(key.size()));
  if (body.empty() || (body.front() != ':' && body.front() != '=')) return std::nullopt;
  double v = 0.0;
  if (!text::parse_double(body.substr(1), v)) {
    throw DataError("unreadable frame_rate declaration: '" + std::string(comment) + "'");
  }
  return v;
}

struct RawRow {
  TrackId id;
  std::int64_t frame;  // pixel schema only
  double t;            // metric schema only
  double x;
  double y;
};

}  // namespace

std::vector<Trajectory> parse_trajectories(std::istream& source, const Calibration& cal,
                                           std::optional<double> frame_rate_hz) {
  if (!(cal.meters_per_pixel > 0.0) || !std::isfinite(cal.meters_per_pixel)) {
    throw DataError("meters_per_pixel must be positive");
  }
  std::optional<Schema> schema;
  std::optional<double> declared_rate;
  std::vector<RawRow> rows;

  std::string line;
  std::size_t line_no = 0;
  while (std::getline(source, line)) {
    ++line_no;
    const auto s = text::trim(line);
    if (s.empty()) continue;
    if (s.front() == '#') {
      if (auto r = frame_rate_comment(s)) declared_rate = r;
      continue;
    }
    const auto fields = text::split(s, ',');
    if (!schema) {
      if (fields.size() == 4 && fields[0] == "frame" && fields[1] == "track_id" &&
          fields[2] == "x_px" && fields[3] == "y_px") {
        schema = Schema::pixel_frames;
      } else if (fields.size() == 4 && fields[0] == "t" && fields[1] == "track_id" &&
                 fields[2] == "x_m" && fields[3] == "y_m") {
        schema = Schema::metric_seconds;
      } else {
        throw text::line_error("unrecognized trajectory header", line_no, s);
      }
      continue;
    }
    if (fields.size() != 4) throw text::line_error("expected 4 fields", line_no, s);
    RawRow row{};
    if (!text::parse_int(fields[1], row.id)) {
      throw text::line_error("malformed track_id", line_no, s);
    }
    if (*schema == Schema::pixel_frames) {
      if (!text::parse_int(fields[0], row.frame) || row.frame < 0) {
        throw text::line_error("malformed frame index", line_no, s);
      }
    } else {
      if (!text::parse_double(fields[0], row.t) || !std::isfinite(row.t) || row.t < 0.0) {
        throw text::line_error("malformed time", line_no, s);
      }
    }
    if (!text::parse_double(fields[2], row.x) || !text::parse_double(fields[3], row.y)) {
      throw text::line_error("malformed coordinate", line_no, s);
    }
    if (!std::isfinite(row.x) || !std::isfinite(row.y)) {
      throw text::line_error("non-finite coordinate", line_no, s);
    }
    rows.push_back(row);
  }
  if (!schema) throw DataError("trajectory file has no header");

  double scale = 1.0;
  double fps = 0.0;
  if (*schema == Schema::pixel_frames) {
    const auto rate = frame_rate_hz ? frame_rate_hz : declared_rate;
    if (!rate) throw DataError("pixel trajectory file needs a frame rate");
    if (!(*rate > 0.0) || !std::isfinite(*rate)) {
      throw DataError("frame rate must be positive, got " + text::format_double(*rate));
    }
    fps = *rate;
    scale = cal.meters_per_pixel;
  }

  // Keyed by frame index (pixel schema) or by time (metric schema), so a
  // repeated (track, instant) row overwrites the earlier one.
  std::map<TrackId, std::map<double, TrackPoint>> grouped;
  for (const auto& r : rows) {
    TrackPoint p;
    p.track_id = r.id;
    p.t = *schema == Schema::pixel_frames ? static_cast<double>(r.frame) / fps : r.t;
    p.x = r.x * scale;
    p.y = r.y * scale;
    grouped[r.id][p.t] = p;
  }

  std::vector<Trajectory> out;
  out.reserve(grouped.size());
  for (auto& [id, pts] : grouped) {
    Trajectory tr;
    tr.track_id = id;
    tr.points.reserve(pts.size());
    for (auto& [t, p] : pts) tr.points.push_back(p);
    out.push_back(std::move(tr));
  }
  return out;
}

void write_trajectories(std::ostream& out, const std::vector<Trajectory>& tracks) {
  out << "t,track_id,x_m,y_m\n";
  for (const auto& tr : tracks) {
    for (const auto& p : tr.points) {
      out << text::format_double(p.t) << ',' << p.track_id << ',' << text::format_double(p.x)
          << ',' << text::format_double(p.y) << '\n';
    }
  }
}

// ---------------------------------------------------------------------------

namespace {

double cross(const Vec2& o, const Vec2& a, const Vec2& b) {
  return (a.x - o.x) * (b.y - o.y) - (a.y - o.y) * (b.x - o.x);
}

bool within_box(const Vec2& p, const Vec2& a, const Vec2& b) {
  return std::min(a.x, b.x) <= p.x && p.x <= std::max(a.x, b.x) && std::min(a.y, b.y) <= p.y &&
         p.y <= std::max(a.y, b.y);
}

bool on_segment(const Vec2& p, const Vec2& a, const Vec2& b) {
  return cross(a, b, p) == 0.0 && within_box(p, a, b);
}

int sign(double v) { return (v > 0.0) - (v < 0.0); }

bool segments_intersect(const Vec2& a, const Vec2& b, const Vec2& c, const Vec2& d) {
  const int d1 = sign(cross(c, d, a));
  const int d2 = sign(cross(c, d, b));
  const int d3 = sign(cross(a, b, c));
  const int d4 = sign(cross(a, b, d));
  if (d1 * d2 < 0 && d3 * d4 < 0) return true;
  return (d1 == 0 && within_box(a, c, d)) || (d2 == 0 && within_box(b, c, d)) ||
         (d3 == 0 && within_box(c, a, b)) || (d4 == 0 && within_box(d, a, b));
}

}  // namespace

void validate_region(const RegionSpec& r) {
  const auto& poly = r.polygon;
  const std::size_t n = poly.size();
  if (n < 3) throw DataError("region '" + r.region_id + "' needs at least 3 vertices");
  if (r.direction_code < 1 || r.direction_code > 4) {
    throw DataError("region '" + r.region_id + "' has direction code outside 1..4");
  }
  for (const auto& v : poly) {
    if (!std::isfinite(v.x) || !std::isfinite(v.y)) {
      throw DataError("region '" + r.region_id + "' has a non-finite vertex");
    }
  }
  double area2 = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const auto& a = poly[i];
    const auto& b = poly[(i + 1) % n];
    if (a == b) throw DataError("region '" + r.region_id + "' repeats a vertex");
    area2 += a.x * b.y - b.x * a.y;
  }
  if (area2 == 0.0) throw DataError("region '" + r.region_id + "' is degenerate");
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      const bool adjacent = j == i + 1 || (i == 0 && j == n - 1);
      if (adjacent) continue;
      if (segments_intersect(poly[i], poly[(i + 1) % n], poly[j], poly[(j + 1) % n])) {
        throw DataError("region '" + r.region_id + "' polygon self-intersects");
      }
    }
  }
}

bool point_in_region(const Vec2& p, const RegionSpec& r) {
  const auto& poly = r.polygon;
  const std::size_t n = poly.size();
  for (std::size_t i = 0; i < n; ++i) {
    if (on_segment(p, poly[i], poly[(i + 1) % n])) return true;
  }
  bool inside = false;
  for (std::size_t i = 0, j = n - 1; i < n; j = i++) {
    const auto& a = poly[i];
    const auto& b = poly[j];
    if ((a.y > p.y) != (b.y > p.y)) {
      const double x_cross = (b.x - a.x) * (p.y - a.y) / (b.y - a.y) + a.x;
      if (p.x < x_cross) inside = !inside;
    }
  }
  return inside;
}

RegionFile parse_regions(std::istream& source) {
  RegionFile file;
  std::set<std::string> seen;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(source, line)) {
    ++line_no;
    const auto s = text::trim(line);
    if (s.empty() || s.front() == '#') continue;
    const auto fields = text::split(s, ';');
    if (fields.size() != 5) throw text::line_error("expected 5 ';'-separated fields", line_no, s);

    RegionSpec r;
    r.region_id = std::string(fields[0]);
    if (r.region_id.empty()) throw text::line_error("empty region_id", line_no, s);
    std::int64_t dir = 0;
    if (!text::parse_int(fields[1], dir)) throw text::line_error("malformed direction", line_no, s);
    r.direction_code = static_cast<int>(dir);
    if (fields[2].size() != 1) throw text::line_error("malformed state code", line_no, s);
    try {
      r.state = parse_state(fields[2]);
    } catch (const DataError&) {
      throw text::line_error("unknown state code", line_no, s);
    }
    double mpp = 0.0;
    if (!text::parse_double(fields[3], mpp) || !(mpp > 0.0) || !std::isfinite(mpp)) {
      throw text::line_error("meters_per_pixel must be positive", line_no, s);
    }
    if (file.meters_per_pixel && *file.meters_per_pixel != mpp) {
      throw text::line_error("meters_per_pixel differs from earlier records", line_no, s);
    }
    file.meters_per_pixel = mpp;
    for (const auto vertex : text::split(fields[4], ',')) {
      const auto xy = text::split(vertex, ' ');
      Vec2 v;
      if (xy.size() != 2 || !text::parse_double(xy[0], v.x) || !text::parse_double(xy[1], v.y)) {
        throw text::line_error("malformed vertex", line_no, s);
      }
      r.polygon.push_back({v.x * mpp, v.y * mpp});
    }
    try {
      validate_region(r);
    } catch (const DataError& e) {
      throw text::line_error(e.what(), line_no, s);
    }
    if (!seen.insert(r.region_id).second) {
      throw text::line_error("duplicate region_id", line_no, s);
    }
    file.regions.push_back(std::move(r));
  }
  return file;
}

void write_regions(std::ostream& out, const std::vector<RegionSpec>& regions,
                   double meters_per_pixel) {
  out << "# region_id;direction_code;state_code;meters_per_pixel;polygon (pixels)\n";
  for (const auto& r : regions) {
    out << r.region_id << ';' << r.direction_code << ';' << state_code(r.state) << ';'
        << text::format_double(meters_per_pixel) << ';';
    for (std::size_t i = 0; i < r.polygon.size(); ++i) {
      if (i) out << ',';
      out << text::format_double(r.polygon[i].x / meters_per_pixel) << ' '
          << text::format_double(r.polygon[i].y / meters_per_pixel);
    }
    out << '\n';
  }
}

std::vector<StateAnnotation> parse_annotations(std::istream& source) {
  std::vector<StateAnnotation> out;
  std::string line;
  std::size_t line_no = 0;
  bool first = true;
  while (std::getline(source, line)) {
    ++line_no;
    const auto s = text::trim(line);
    if (s.empty() || s.front() == '#') continue;
    const auto fields = text::split(s, ',');
    if (first && !fields.empty() && fields[0] == "region_id") {
      first = false;
      continue;
    }
    first = false;
    if (fields.size() != 4) throw text::line_error("expected 4 fields", line_no, s);
    StateAnnotation a;
    a.region_id = std::string(fields[0]);
    if (!text::parse_double(fields[1], a.start_s) || !text::parse_double(fields[2], a.end_s) ||
        !std::isfinite(a.start_s) || !std::isfinite(a.end_s)) {
      throw text::line_error("malformed time", line_no, s);
    }
    if (!(a.start_s < a.end_s)) throw text::line_error("start_s must precede end_s", line_no, s);
    try {
      a.label = parse_state(fields[3]);
    } catch (const DataError&) {
      throw text::line_error("unknown label", line_no, s);
    }
    out.push_back(std::move(a));
  }
  return out;
}

void write_annotations(std::ostream& out, const std::vector<StateAnnotation>& annotations) {
  out << "region_id,start_s,end_s,label\n";
  for (const auto& a : annotations) {
    out << a.region_id << ',' << text::format_double(a.start_s) << ','
        << text::format_double(a.end_s) << ',' << state_name(a.label) << '\n';
  }
}

// ---------------------------------------------------------------------------

namespace {

// Slack when mapping times onto the k / rate grid.
constexpr double kGridSlack = 1e-9;

TrackPoint position_at(const std::vector<TrackPoint>& pts, double t, ResampleMode mode) {
  const auto it = std::upper_bound(pts.begin(), pts.end(), t,
                                   [](double v, const TrackPoint& p) { return v < p.t; });
  if (it == pts.begin()) return pts.front();
  const auto i = static_cast<std::size_t>(it - pts.begin()) - 1;
  if (i + 1 == pts.size()) return pts.back();
  const auto& a = pts[i];
  const auto& b = pts[i + 1];
  if (mode == ResampleMode::nearest) return (t - a.t) <= (b.t - t) ? a : b;
  const double alpha = (t - a.t) / (b.t - a.t);
  TrackPoint p = a;
  p.x = a.x + alpha * (b.x - a.x);
  p.y = a.y + alpha * (b.y - a.y);
  return p;
}

}  // namespace

Trajectory resample(const Trajectory& track, double rate_hz, ResampleMode mode) {
  if (!(rate_hz > 0.0) || !std::isfinite(rate_hz)) {
    throw std::invalid_argument("resample rate must be positive");
  }
  if (track.points.empty()) throw std::invalid_argument("cannot resample an empty track");
  const auto& pts = track.points;
  const double t0 = pts.front().t;
  const double t1 = pts.back().t;
  const auto k_lo = static_cast<std::int64_t>(std::ceil(t0 * rate_hz - kGridSlack));
  const auto k_hi = static_cast<std::int64_t>(std::floor(t1 * rate_hz + kGridSlack));
  if (k_lo > k_hi) return track;

  Trajectory out;
  out.track_id = track.track_id;
  out.points.reserve(static_cast<std::size_t>(k_hi - k_lo + 1));
  for (auto k = k_lo; k <= k_hi; ++k) {
    const double t = static_cast<double>(k) / rate_hz;
    TrackPoint p = position_at(pts, std::clamp(t, t0, t1), mode);
    p.track_id = track.track_id;
    p.t = t;
    out.points.push_back(p);
  }
  return out;
}

namespace {

struct GridPoint {
  std::int64_t k;
  double x;
  double y;
};

struct GridTrack {
  TrackId id;
  std::vector<GridPoint> points;  // ascending k
};

}  // namespace

std::vector<RawSequence> extract_sequences(const std::vector<Trajectory>& tracks,
                                           const std::vector<RegionSpec>& regions,
                                           const std::vector<StateAnnotation>& annotations,
                                           const ExtractOptions& opts) {
  if (!(opts.rate_hz > 0.0) || !std::isfinite(opts.rate_hz)) {
    throw std::invalid_argument("sample rate must be positive");
  }
  std::unordered_map<std::string, const RegionSpec*> by_id;
  for (const auto& r : regions) by_id[r.region_id] = &r;
  for (const auto& a : annotations) {
    if (!by_id.count(a.region_id)) {
      throw DataError("annotation references unknown region '" + a.region_id + "'");
    }
  }

  // Points that do not land on the sampling grid (tracks too short to
  // contain a grid instant) are not part of any frame.
  std::vector<GridTrack> grid;
  grid.reserve(tracks.size());
  for (const auto& tr : tracks) {
    if (tr.points.empty()) continue;
    const auto rs = resample(tr, opts.rate_hz, opts.mode);
    GridTrack g{tr.track_id, {}};
    for (const auto& p : rs.points) {
      const double kf = p.t * opts.rate_hz;
      const auto k = std::llround(kf);
      if (std::abs(kf - static_cast<double>(k)) > 1e-6) continue;
      g.points.push_back({k, p.x, p.y});
    }
    if (!g.points.empty()) grid.push_back(std::move(g));
  }

  std::vector<const StateAnnotation*> order;
  for (const auto& a : annotations) order.push_back(&a);
  std::stable_sort(order.begin(), order.end(), [](const auto* a, const auto* b) {
    return std::tie(a->region_id, a->start_s) < std::tie(b->region_id, b->start_s);
  });

  std::vector<RawSequence> out;
  for (const auto* a : order) {
    const RegionSpec& region = *by_id.at(a->region_id);
    const auto k_first = static_cast<std::int64_t>(std::ceil(a->start_s * opts.rate_hz - kGridSlack));
    const auto k_last = static_cast<std::int64_t>(std::floor(a->end_s * opts.rate_hz + kGridSlack));

    std::map<std::int64_t, std::vector<UserPosition>> by_k;
    std::set<TrackId> ids;
    for (const auto& g : grid) {
      auto it = std::lower_bound(g.points.begin(), g.points.end(), k_first,
                                 [](const GridPoint& p, std::int64_t k) { return p.k < k; });
      for (; it != g.points.end() && it->k <= k_last; ++it) {
        const double t = static_cast<double>(it->k) / opts.rate_hz;
        if (t < a->start_s || t > a->end_s) continue;
        if (!point_in_region({it->x, it->y}, region)) continue;
        by_k[it->k].push_back({g.id, it->x, it->y});
        ids.insert(g.id);
      }
    }
    if (by_k.empty() || ids.size() < opts.min_users) continue;

    RawSequence seq;
    seq.region_id = a->region_id;
    seq.label = a->label;
    seq.unique_user_count = ids.size();
    // Uniform grid between the first and last occupied instants; instants
    // with nobody inside the region become empty frames.
    const auto k0 = by_k.begin()->first;
    const auto k1 = by_k.rbegin()->first;
    for (auto k = k0; k <= k1; ++k) {
      Frame f;
      f.t = static_cast<double>(k) / opts.rate_hz;
      if (auto it = by_k.find(k); it != by_k.end()) {
        f.users = std::move(it->second);
        std::sort(f.users.begin(), f.users.end(),
                  [](const auto& l, const auto& r) { return l.track_id < r.track_id; });
      }
      seq.frames.push_back(std::move(f));
    }
    out.push_back(std::move(seq));
  }
  return out;
}

}  // namespace tgraph::ingest
