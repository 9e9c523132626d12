#include "tgraph/features.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "binary_io.hpp"

namespace tgraph::features {

FeatureVector PooledGridExtractor::extract(const graph::AdjacencyImage& img) const {
  const std::size_t side = img.side;
  if (side == 0 || side % kGridCells != 0) {
    throw std::invalid_argument("image side " + std::to_string(side) + " is not divisible by 7");
  }
  const std::size_t block = side / kGridCells;
  const double cells = static_cast<double>(block * block);
  FeatureVector out;
  out.reserve(kDefaultFeatureDim);
  for (std::size_t br = 0; br < kGridCells; ++br) {
    for (std::size_t bc = 0; bc < kGridCells; ++bc) {
      double sum = 0.0;
      double mx = 0.0;
      std::size_t nonzero = 0;
      for (std::size_t r = br * block; r < (br + 1) * block; ++r) {
        for (std::size_t c = bc * block; c < (bc + 1) * block; ++c) {
          const double v = img(r, c);
          sum += v;
          mx = std::max(mx, v);
          if (v != 0.0) ++nonzero;
        }
      }
      out.push_back(std::min(sum / cells, 1.0));
      out.push_back(mx);
      out.push_back(static_cast<double>(nonzero) / cells);
    }
  }
  return out;
}

FeatureVector extract_features(const graph::AdjacencyImage& img) {
  return PooledGridExtractor{}.extract(img);
}

std::vector<FeatureVector> normalize_length(std::span<const FeatureVector> seq, std::size_t T) {
  if (seq.empty()) throw std::invalid_argument("cannot normalize an empty sequence");
  if (T == 0) throw std::invalid_argument("target length must be positive");
  const std::size_t len = seq.size();
  std::vector<FeatureVector> out;
  out.reserve(T);
  if (len > T) {
    if (T == 1) {
      out.push_back(seq.front());
      return out;
    }
    // round(i * (len-1) / (T-1)), halves rounded up, in exact integer arithmetic
    const std::size_t num = len - 1;
    const std::size_t den = T - 1;
    for (std::size_t i = 0; i < T; ++i) out.push_back(seq[(2 * i * num + den) / (2 * den)]);
    return out;
  }
  out.assign(seq.begin(), seq.end());
  while (out.size() < T) out.push_back(seq.back());
  return out;
}

FeatureSequence build_feature_sequence(const ingest::RawSequence& seq, const PipelineConfig& cfg,
                                       const FeatureExtractor& extractor) {
  if (seq.frames.empty()) throw DataError("sequence '" + seq.region_id + "' has no frames");
  const auto adj = graph::build_sequence(seq, cfg.mu_m);
  std::vector<FeatureVector> per_frame;
  per_frame.reserve(adj.mats.size());
  for (const auto& m : adj.mats) {
    per_frame.push_back(
        extractor.extract(graph::render_image(m, adj.layout, cfg.canvas, cfg.image_size)));
  }
  const auto fixed = normalize_length(per_frame, cfg.frames);

  FeatureSequence fs;
  fs.region_id = seq.region_id;
  fs.label = seq.label;
  fs.steps = cfg.frames;
  fs.dim = extractor.dim();
  fs.data.reserve(fs.steps * fs.dim);
  for (const auto& v : fixed) {
    if (v.size() != fs.dim) throw std::logic_error("extractor returned wrong dimension");
    fs.data.insert(fs.data.end(), v.begin(), v.end());
  }
  return fs;
}

FeatureSequence build_feature_sequence(const ingest::RawSequence& seq, const PipelineConfig& cfg) {
  return build_feature_sequence(seq, cfg, PooledGridExtractor{});
}

namespace {
constexpr std::uint32_t kTensorMagic = 0x54464754;  // bytes "TGFT"
constexpr std::uint32_t kTensorVersion = 1;
}  // namespace

void write_tensor_file(std::ostream& out, std::span<const FeatureSequence> samples,
                       std::size_t steps, std::size_t dim) {
  binary::put_u32(out, kTensorMagic);
  binary::put_u32(out, kTensorVersion);
  binary::put_u32(out, static_cast<std::uint32_t>(samples.size()));
  binary::put_u32(out, static_cast<std::uint32_t>(steps));
  binary::put_u32(out, static_cast<std::uint32_t>(dim));
  for (const auto& s : samples) {
    if (s.steps != steps || s.dim != dim || s.data.size() != steps * dim) {
      throw std::invalid_argument("sample '" + s.region_id + "' does not match the tensor shape");
    }
    binary::put_u8(out, static_cast<std::uint8_t>(index_of(s.label)));
    binary::put_u32(out, static_cast<std::uint32_t>(s.region_id.size()));
    out.write(s.region_id.data(), static_cast<std::streamsize>(s.region_id.size()));
    for (double v : s.data) binary::put_f64(out, v);
  }
}

void write_tensor_file(std::ostream& out, std::span<const FeatureSequence> samples) {
  if (samples.empty()) {
    write_tensor_file(out, samples, kDefaultFrames, kDefaultFeatureDim);
  } else {
    write_tensor_file(out, samples, samples.front().steps, samples.front().dim);
  }
}

TensorHeader read_tensor_header(std::istream& in) {
  if (binary::get_u32(in) != kTensorMagic) throw DataError("not a feature tensor file");
  if (const auto v = binary::get_u32(in); v != kTensorVersion) {
    throw DataError("unsupported tensor file version " + std::to_string(v));
  }
  TensorHeader h;
  h.count = binary::get_u32(in);
  h.steps = binary::get_u32(in);
  h.dim = binary::get_u32(in);
  return h;
}

std::vector<FeatureSequence> read_tensor_file(std::istream& in) {
  const auto h = read_tensor_header(in);
  std::vector<FeatureSequence> out;
  out.reserve(h.count);
  for (std::uint32_t i = 0; i < h.count; ++i) {
    FeatureSequence s;
    s.label = state_from_index(binary::get_u8(in));
    s.region_id = binary::get_bytes(in, binary::get_u32(in));
    s.steps = h.steps;
    s.dim = h.dim;
    s.data.resize(static_cast<std::size_t>(h.steps) * h.dim);
    for (auto& v : s.data) {
      v = binary::get_f64(in);
      if (!std::isfinite(v)) throw DataError("non-finite value in tensor file");
    }
    out.push_back(std::move(s));
  }
  binary::expect_end(in);
  return out;
}

}  // namespace tgraph::features
