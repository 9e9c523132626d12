#pragma once

#include <cstddef>
#include <iosfwd>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "tgraph/graph.hpp"

namespace tgraph::features {

using FeatureVector = std::vector<double>;

inline constexpr std::size_t kDefaultFrames = 50;
inline constexpr std::size_t kGridCells = 7;
inline constexpr std::size_t kDefaultFeatureDim = kGridCells * kGridCells * 3;  // 147

// A (T x F) sample ready for the temporal networks.
struct FeatureSequence {
  std::string region_id;
  TrafficState label = TrafficState::neutral;
  std::size_t steps = 0;     // T
  std::size_t dim = 0;       // F
  std::vector<double> data;  // T*F row-major: data[t*F + f]

  std::span<const double> step(std::size_t t) const { return {data.data() + t * dim, dim}; }

  friend bool operator==(const FeatureSequence&, const FeatureSequence&) = default;
};

// Maps one adjacency image to a fixed-length vector.
class FeatureExtractor {
 public:
  virtual ~FeatureExtractor() = default;
  virtual std::size_t dim() const = 0;
  virtual FeatureVector extract(const graph::AdjacencyImage& img) const = 0;
};

// Splits the image into a 7x7 grid of equal blocks and emits (mean, max,
// nonzero fraction) per block, blocks row-major and channels innermost.
class PooledGridExtractor final : public FeatureExtractor {
 public:
  std::size_t dim() const override { return kDefaultFeatureDim; }
  FeatureVector extract(const graph::AdjacencyImage& img) const override;
};

FeatureVector extract_features(const graph::AdjacencyImage& img);

// Evenly spaced subsampling (both endpoints kept) when longer than T,
// repeat-last padding when shorter.
std::vector<FeatureVector> normalize_length(std::span<const FeatureVector> seq, std::size_t T);

struct PipelineConfig {
  double mu_m = graph::kDefaultMuMeters;
  std::size_t canvas = graph::kDefaultCanvas;
  std::size_t image_size = graph::kDefaultImageSize;
  std::size_t frames = kDefaultFrames;
};

// adjacency -> render -> extract -> normalize for one raw sequence.
FeatureSequence build_feature_sequence(const ingest::RawSequence& seq, const PipelineConfig& cfg,
                                       const FeatureExtractor& extractor);
FeatureSequence build_feature_sequence(const ingest::RawSequence& seq,
                                       const PipelineConfig& cfg = {});

// Binary tensor file: "TGFT" magic, version, count, T, F (u32 LE), then per
// sample a label byte, region_id length (u32) and bytes, T*F f64 LE values.
void write_tensor_file(std::ostream& out, std::span<const FeatureSequence> samples);
void write_tensor_file(std::ostream& out, std::span<const FeatureSequence> samples,
                       std::size_t steps, std::size_t dim);
std::vector<FeatureSequence> read_tensor_file(std::istream& in);

struct TensorHeader {
  std::uint32_t count = 0;
  std::uint32_t steps = 0;
  std::uint32_t dim = 0;
};
TensorHeader read_tensor_header(std::istream& in);

}  // namespace tgraph::features
