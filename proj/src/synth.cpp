#include "tgraph/synth.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <map>
#include <string>
#include <numbers>
#include <stdexcept>

namespace tgraph::synth {

using ingest::Frame;
using ingest::RawSequence;
using ingest::UserPosition;
using ingest::Vec2;

void SynthConfig::validate() const {
  const auto ordered = [](double lo, double hi) { return lo > 0.0 && lo <= hi && std::isfinite(hi); };
  if (min_users < 2 || max_users < min_users) throw std::invalid_argument("user range must satisfy 2 <= min <= max");
  if (!(duration_s > 0.0) || !(rate_hz > 0.0)) throw std::invalid_argument("duration and rate must be positive");
  if (frame_count() < 2) throw std::invalid_argument("duration * rate must give at least 2 frames");
  if (!(approach_length_m > 0.0) || !(road_width_m > 0.0) || !(pack_diameter_m > 0.0)) {
    throw std::invalid_argument("geometry sizes must be positive");
  }
  if (!ordered(min_speed_mps, max_speed_mps)) throw std::invalid_argument("speed range must be positive");
  if (!ordered(min_final_contraction, max_final_contraction) || max_final_contraction >= 1.0) {
    throw std::invalid_argument("contraction range must lie in (0, 1)");
  }
  if (!ordered(min_final_expansion, max_final_expansion) || min_final_expansion <= 1.0) {
    throw std::invalid_argument("expansion range must exceed 1");
  }
  if (!(noise_sigma_m >= 0.0)) throw std::invalid_argument("noise sigma must be non-negative");
}

std::size_t SynthConfig::frame_count() const {
  return static_cast<std::size_t>(std::llround(duration_s * rate_hz));
}

namespace {

struct Motion {
  // position(k) = anchor + (start - anchor) * scale(k) + drift * t_k
  std::vector<Vec2> start;
  Vec2 anchor;
  double final_scale = 1.0;
  Vec2 drift_velocity;
};

double uniform(std::mt19937_64& rng, double lo, double hi) {
  return std::uniform_real_distribution<double>(lo, hi)(rng);
}

Motion clumping_motion(int n, const SynthConfig& cfg, std::mt19937_64& rng) {
  Motion m;
  m.anchor = cfg.stop_line;
  const double half_w = cfg.road_width_m / 2.0;
  m.start.reserve(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    // The first two users sit at the two ends of the approach so that at
    // least one pair is far apart at the start and close at the end.
    double back = uniform(rng, 0.0, cfg.approach_length_m);
    if (i == 0) back = 0.0;
    if (i == 1) back = cfg.approach_length_m;
    m.start.push_back({cfg.stop_line.x - back, cfg.stop_line.y + uniform(rng, -half_w, half_w)});
  }
  m.final_scale = uniform(rng, cfg.min_final_contraction, cfg.max_final_contraction);
  return m;
}

Motion neutral_motion(int n, const SynthConfig& cfg, std::mt19937_64& rng) {
  Motion m;
  const double length = uniform(rng, cfg.pack_diameter_m, cfg.approach_length_m);
  const double half_w = cfg.road_width_m / 2.0;
  for (int i = 0; i < n; ++i) {
    m.start.push_back({cfg.stop_line.x - uniform(rng, 0.0, length), cfg.stop_line.y + uniform(rng, -half_w, half_w)});
  }
  m.anchor = cfg.stop_line;
  const double speed = uniform(rng, cfg.min_speed_mps, cfg.max_speed_mps);
  const double heading = uniform(rng, -std::numbers::pi, std::numbers::pi);
  m.drift_velocity = {speed * std::cos(heading), speed * std::sin(heading)};
  return m;
}

Motion unclumping_motion(int n, const SynthConfig& cfg, std::mt19937_64& rng) {
  Motion m;
  m.anchor = cfg.stop_line;
  const double radius = cfg.pack_diameter_m / 2.0;
  // The first two users start 8 m apart (for the default 15 m pack), inside
  // the 10 m interaction range, and end at least 24 m apart.
  const double pair_half_gap = radius * 8.0 / 15.0;
  for (int i = 0; i < n; ++i) {
    Vec2 offset;
    if (i == 0) {
      offset = {-pair_half_gap, 0.0};
    } else if (i == 1) {
      offset = {pair_half_gap, 0.0};
    } else {
      const double r = radius * std::sqrt(uniform(rng, 0.0, 1.0));
      const double a = uniform(rng, -std::numbers::pi, std::numbers::pi);
      offset = {r * std::cos(a), r * std::sin(a)};
    }
    m.start.push_back({cfg.stop_line.x + offset.x, cfg.stop_line.y + offset.y});
  }
  m.final_scale = uniform(rng, cfg.min_final_expansion, cfg.max_final_expansion);
  const double speed = uniform(rng, cfg.min_speed_mps, cfg.max_speed_mps);
  m.drift_velocity = {speed, 0.0};
  return m;
}

RawSequence realize(TrafficState label, const Motion& m, const SynthConfig& cfg, std::mt19937_64& rng,
                    std::int64_t first_frame, ingest::TrackId id_base) {
  const std::size_t frames = cfg.frame_count();
  std::normal_distribution<double> jitter(0.0, cfg.noise_sigma_m > 0.0 ? cfg.noise_sigma_m : 1.0);
  RawSequence seq;
  seq.region_id = "synthetic";
  seq.label = label;
  seq.unique_user_count = m.start.size();
  seq.frames.reserve(frames);
  for (std::size_t k = 0; k < frames; ++k) {
    const double progress = static_cast<double>(k) / static_cast<double>(frames - 1);
    const double scale = 1.0 + (m.final_scale - 1.0) * progress;
    const double elapsed = static_cast<double>(k) / cfg.rate_hz;
    Frame f;
    f.t = static_cast<double>(first_frame + static_cast<std::int64_t>(k)) / cfg.rate_hz;
    f.users.reserve(m.start.size());
    for (std::size_t i = 0; i < m.start.size(); ++i) {
      UserPosition u;
      u.track_id = id_base + static_cast<ingest::TrackId>(i);
      u.x = m.anchor.x + (m.start[i].x - m.anchor.x) * scale + m.drift_velocity.x * elapsed;
      u.y = m.anchor.y + (m.start[i].y - m.anchor.y) * scale + m.drift_velocity.y * elapsed;
      if (cfg.noise_sigma_m > 0.0) {
        u.x += jitter(rng);
        u.y += jitter(rng);
      }
      f.users.push_back(u);
    }
    seq.frames.push_back(std::move(f));
  }
  return seq;
}

RawSequence generate_at(TrafficState label, const SynthConfig& cfg, std::mt19937_64& rng, std::int64_t first_frame,
                        ingest::TrackId id_base) {
  cfg.validate();
  const int n = std::uniform_int_distribution<int>(cfg.min_users, cfg.max_users)(rng);
  Motion m;
  switch (label) {
    case TrafficState::clumping: m = clumping_motion(n, cfg, rng); break;
    case TrafficState::neutral: m = neutral_motion(n, cfg, rng); break;
    case TrafficState::unclumping: m = unclumping_motion(n, cfg, rng); break;
  }
  return realize(label, m, cfg, rng, first_frame, id_base);
}

std::string region_name(std::size_t index, TrafficState label) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "s%06zu-%d%c", index, static_cast<int>(index % 4) + 1, state_code(label));
  return buf;
}

}  // namespace

RawSequence generate(TrafficState label, const SynthConfig& cfg, std::mt19937_64& rng) {
  return generate_at(label, cfg, rng, 0, 0);
}

std::vector<RawSequence> generate_dataset(const std::array<std::size_t, 3>& counts, const SynthConfig& cfg,
                                          std::uint64_t seed) {
  cfg.validate();
  const auto stride = static_cast<std::int64_t>(cfg.frame_count()) + 10;
  std::vector<RawSequence> out;
  std::size_t index = 0;
  for (int c = 0; c < kNumStates; ++c) {
    const auto label = state_from_index(c);
    for (std::size_t j = 0; j < counts[static_cast<std::size_t>(c)]; ++j, ++index) {
      std::mt19937_64 rng(derive_seed(seed, index));
      auto seq = generate_at(label, cfg, rng, static_cast<std::int64_t>(index) * stride,
                             static_cast<ingest::TrackId>(index) * 1000);
      seq.region_id = region_name(index, label);
      out.push_back(std::move(seq));
    }
  }
  return out;
}

SynthFiles to_files(const std::vector<RawSequence>& sequences) {
  SynthFiles files;
  for (std::size_t s = 0; s < sequences.size(); ++s) {
    const auto& seq = sequences[s];
    if (seq.frames.empty()) continue;
    double x0 = std::numeric_limits<double>::infinity(), y0 = x0;
    double x1 = -x0, y1 = -x0;
    std::map<ingest::TrackId, ingest::Trajectory> tracks;
    for (const auto& f : seq.frames) {
      for (const auto& u : f.users) {
        x0 = std::min(x0, u.x);
        x1 = std::max(x1, u.x);
        y0 = std::min(y0, u.y);
        y1 = std::max(y1, u.y);
        auto& tr = tracks[u.track_id];
        tr.track_id = u.track_id;
        tr.points.push_back({u.track_id, f.t, u.x, u.y});
      }
    }
    for (auto& [id, tr] : tracks) files.tracks.push_back(std::move(tr));

    ingest::RegionSpec region;
    region.region_id = seq.region_id;
    region.state = seq.label;
    region.direction_code = static_cast<int>(s % 4) + 1;
    constexpr double margin = 1.0;
    region.polygon = {{x0 - margin, y0 - margin}, {x1 + margin, y0 - margin}, {x1 + margin, y1 + margin},
                      {x0 - margin, y1 + margin}};
    files.regions.push_back(std::move(region));
    files.annotations.push_back({seq.region_id, seq.frames.front().t, seq.frames.back().t, seq.label});
  }
  return files;
}

}  // namespace tgraph::synth
