#pragma once

#include <cstddef>
#include <iosfwd>
#include <span>
#include <unordered_map>
#include <vector>

#include "tgraph/ingest.hpp"

namespace tgraph::graph {

using ingest::TrackId;
using ingest::UserPosition;

// Weighted traffic graph of one time step.
struct AdjacencyMatrix {
  std::vector<TrackId> ids;  // ascending; row/column i belongs to ids[i]
  std::vector<double> w;     // n*n row-major

  std::size_t size() const { return ids.size(); }
  double operator()(std::size_t i, std::size_t j) const { return w[i * ids.size() + j]; }
};

// Fixed row/column placement of every user seen in one sequence: users are
// placed in order of first appearance, ties broken by ascending track_id.
class SlotLayout {
 public:
  SlotLayout() = default;
  explicit SlotLayout(const std::vector<ingest::Frame>& frames);

  std::size_t slot(TrackId id) const;  // throws DataError for unknown ids
  std::size_t size() const { return order_.size(); }
  const std::vector<TrackId>& order() const { return order_; }

 private:
  std::vector<TrackId> order_;
  std::unordered_map<TrackId, std::size_t> slot_of_;
};

struct AdjacencySequence {
  std::string region_id;
  TrafficState label = TrafficState::neutral;
  std::vector<AdjacencyMatrix> mats;  // one per frame
  SlotLayout layout;
};

struct AdjacencyImage {
  std::size_t side = 0;
  std::vector<double> pixels;  // side*side row-major, values in [0, 1]

  double operator()(std::size_t r, std::size_t c) const { return pixels[r * side + c]; }
};

inline constexpr double kDefaultMuMeters = 10.0;
inline constexpr std::size_t kDefaultCanvas = 110;
inline constexpr std::size_t kDefaultImageSize = 56;

// w[i][j] = exp(-d_ij) when d_ij < mu_m and i != j, otherwise 0; d in meters.
AdjacencyMatrix build_adjacency(std::span<const UserPosition> frame, double mu_m = kDefaultMuMeters);

AdjacencySequence build_sequence(const ingest::RawSequence& seq, double mu_m = kDefaultMuMeters);

// Fraction of strictly positive off-diagonal entries; 0 for fewer than two users.
double density(const AdjacencyMatrix& m);

// Places w on a canvas_n x canvas_n zero canvas (rows in ascending id order,
// or by `layout` when given) and area-averages it down to out_size x out_size.
AdjacencyImage render_image(const AdjacencyMatrix& m, std::size_t canvas_n, std::size_t out_size);
AdjacencyImage render_image(const AdjacencyMatrix& m, const SlotLayout& layout, std::size_t canvas_n,
                            std::size_t out_size);

// Plain-text graymap (P2, maxval 255); each value is clamped to [0, 1] and
// written as round(255 * v).
void write_pgm(std::ostream& out, std::size_t rows, std::size_t cols, std::span<const double> values);

}  // namespace tgraph::graph
