#pragma once

#include <array>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "tgraph/common.hpp"

namespace tgraph::ingest {

using TrackId = std::int64_t;

struct TrackPoint {
  TrackId track_id = 0;
  double t = 0.0;  // seconds
  double x = 0.0;  // meters
  double y = 0.0;  // meters

  friend bool operator==(const TrackPoint&, const TrackPoint&) = default;
};

// One road user's path; points strictly increasing in t.
struct Trajectory {
  TrackId track_id = 0;
  std::vector<TrackPoint> points;

  friend bool operator==(const Trajectory&, const Trajectory&) = default;
};

struct Calibration {
  double meters_per_pixel = 1.0;
};

struct Vec2 {
  double x = 0.0;
  double y = 0.0;

  friend bool operator==(const Vec2&, const Vec2&) = default;
};

struct RegionSpec {
  std::string region_id;
  std::vector<Vec2> polygon;  // meters
  int direction_code = 1;     // 1..4
  TrafficState state = TrafficState::neutral;
};

struct StateAnnotation {
  std::string region_id;
  double start_s = 0.0;
  double end_s = 0.0;
  TrafficState label = TrafficState::neutral;
};

struct UserPosition {
  TrackId track_id = 0;
  double x = 0.0;
  double y = 0.0;

  friend bool operator==(const UserPosition&, const UserPosition&) = default;
};

struct Frame {
  double t = 0.0;
  std::vector<UserPosition> users;  // ascending track_id

  friend bool operator==(const Frame&, const Frame&) = default;
};

// Road users of one spatio-temporal region on a uniform time grid.
struct RawSequence {
  std::string region_id;
  TrafficState label = TrafficState::neutral;
  std::vector<Frame> frames;
  std::size_t unique_user_count = 0;

  friend bool operator==(const RawSequence&, const RawSequence&) = default;
};

enum class ResampleMode { linear, nearest };

// --- trajectory CSV -------------------------------------------------------

// Reads either `frame,track_id,x_px,y_px` (pixel coordinates, needs a frame
// rate from the argument or a `# frame_rate: <hz>` comment) or
// `t,track_id,x_m,y_m` (already in meters; calibration ignored).
// Output is sorted by track_id; duplicate (track_id, t) rows keep the last.
std::vector<Trajectory> parse_trajectories(std::istream& source, const Calibration& cal,
                                           std::optional<double> frame_rate_hz = std::nullopt);

// Writes the metric `t,track_id,x_m,y_m` schema with round-trip precision.
void write_trajectories(std::ostream& out, const std::vector<Trajectory>& tracks);

// --- regions ----------------------------------------------------------------

// Throws DataError on fewer than three vertices, a self-intersecting
// polygon or out-of-range codes.
void validate_region(const RegionSpec& r);

// Even-odd membership; points on an edge or vertex count as inside.
bool point_in_region(const Vec2& p, const RegionSpec& r);

// Region file: one record per non-comment line,
//   region_id;direction_code;state_code;meters_per_pixel;x1 y1,x2 y2,...
// Vertices are in pixels and are scaled to meters with meters_per_pixel.
struct RegionFile {
  std::vector<RegionSpec> regions;
  std::optional<double> meters_per_pixel;  // shared scale, if any record exists
};
RegionFile parse_regions(std::istream& source);
void write_regions(std::ostream& out, const std::vector<RegionSpec>& regions,
                   double meters_per_pixel = 1.0);

// --- annotations ----------------------------------------------------------

// CSV `region_id,start_s,end_s,label`; header line optional.
std::vector<StateAnnotation> parse_annotations(std::istream& source);
void write_annotations(std::ostream& out, const std::vector<StateAnnotation>& annotations);

// --- transformations --------------------------------------------------------

// Samples the track at k / rate_hz for every k inside its time range; a track
// whose range contains no grid instant is returned unchanged.
Trajectory resample(const Trajectory& track, double rate_hz,
                    ResampleMode mode = ResampleMode::linear);

struct ExtractOptions {
  double rate_hz = 5.0;
  std::size_t min_users = 20;
  ResampleMode mode = ResampleMode::linear;
};

// One sequence per annotation that keeps at least min_users distinct users,
// ordered by (region_id, start_s).
std::vector<RawSequence> extract_sequences(const std::vector<Trajectory>& tracks,
                                           const std::vector<RegionSpec>& regions,
                                           const std::vector<StateAnnotation>& annotations,
                                           const ExtractOptions& opts = {});

}  // namespace tgraph::ingest
