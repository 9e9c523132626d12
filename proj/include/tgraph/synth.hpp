#pragma once

#include <array>
#include <cstdint>
#include <random>
#include <vector>

#include "tgraph/ingest.hpp"

namespace tgraph::synth {

// Desk-scale stand-in for annotated intersection footage. Each class is
// realized by simple constant-rate kinematics:
//   clumping   - users spread over the approach contract toward the stop line
//   neutral    - rigid common drift, relative offsets fixed
//   unclumping - a packed group expands radially while drifting away
struct SynthConfig {
  int min_users = 20;
  int max_users = 60;
  double duration_s = 10.0;
  double rate_hz = 5.0;
  ingest::Vec2 stop_line{0.0, 0.0};
  double approach_length_m = 60.0;
  double road_width_m = 8.0;
  double pack_diameter_m = 15.0;
  // Common drift speed range (neutral and unclumping groups).
  double min_speed_mps = 2.0;
  double max_speed_mps = 8.0;
  // Clumping: final spread as a fraction of the initial one.
  double min_final_contraction = 0.05;
  double max_final_contraction = 0.15;
  // Unclumping: final spread as a multiple of the initial one.
  double min_final_expansion = 3.0;
  double max_final_expansion = 6.0;
  double noise_sigma_m = 0.0;

  void validate() const;
  std::size_t frame_count() const;
};

// One sequence with times k / rate_hz for k = 0..frame_count-1 and track ids
// 0..n-1; region_id is "synthetic".
ingest::RawSequence generate(TrafficState label, const SynthConfig& cfg, std::mt19937_64& rng);

// counts are indexed by class (neutral, clumping, unclumping); sequences come
// out class-major. Sequence i gets region "sNNNNNN-<dir><code>", track ids
// starting at i*1000 and its own non-overlapping time window, so the set can
// be written to disk and recovered exactly by the ingest path.
std::vector<ingest::RawSequence> generate_dataset(const std::array<std::size_t, 3>& counts,
                                                  const SynthConfig& cfg, std::uint64_t seed);

struct SynthFiles {
  std::vector<ingest::Trajectory> tracks;
  std::vector<ingest::RegionSpec> regions;
  std::vector<ingest::StateAnnotation> annotations;
};

// Trajectories, one bounding-box region and one annotation per sequence.
SynthFiles to_files(const std::vector<ingest::RawSequence>& sequences);

}  // namespace tgraph::synth
