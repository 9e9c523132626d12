#include "tgraph/graph.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <ostream>
#include <stdexcept>
#include <string>

namespace tgraph::graph {

SlotLayout::SlotLayout(const std::vector<ingest::Frame>& frames) {
  for (const auto& f : frames) {
    std::vector<TrackId> fresh;
    for (const auto& u : f.users) {
      if (!slot_of_.count(u.track_id)) fresh.push_back(u.track_id);
    }
    std::sort(fresh.begin(), fresh.end());
    fresh.erase(std::unique(fresh.begin(), fresh.end()), fresh.end());
    for (auto id : fresh) {
      slot_of_.emplace(id, order_.size());
      order_.push_back(id);
    }
  }
}

std::size_t SlotLayout::slot(TrackId id) const {
  const auto it = slot_of_.find(id);
  if (it == slot_of_.end()) throw DataError("track " + std::to_string(id) + " has no slot");
  return it->second;
}

AdjacencyMatrix build_adjacency(std::span<const UserPosition> frame, double mu_m) {
  if (!(mu_m > 0.0)) throw std::invalid_argument("mu must be positive");
  std::vector<UserPosition> users(frame.begin(), frame.end());
  std::sort(users.begin(), users.end(),
            [](const auto& a, const auto& b) { return a.track_id < b.track_id; });
  for (std::size_t i = 1; i < users.size(); ++i) {
    if (users[i].track_id == users[i - 1].track_id) {
      throw DataError("duplicate track " + std::to_string(users[i].track_id) + " in frame");
    }
  }

  const std::size_t n = users.size();
  AdjacencyMatrix m;
  m.ids.reserve(n);
  for (const auto& u : users) m.ids.push_back(u.track_id);
  m.w.assign(n * n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      const double dx = users[i].x - users[j].x;
      const double dy = users[i].y - users[j].y;
      const double d = std::sqrt(dx * dx + dy * dy);
      if (d < mu_m) {
        const double wij = std::exp(-d);
        m.w[i * n + j] = wij;
        m.w[j * n + i] = wij;
      }
    }
  }
  return m;
}

AdjacencySequence build_sequence(const ingest::RawSequence& seq, double mu_m) {
  AdjacencySequence out;
  out.region_id = seq.region_id;
  out.label = seq.label;
  out.layout = SlotLayout(seq.frames);
  out.mats.reserve(seq.frames.size());
  for (const auto& f : seq.frames) out.mats.push_back(build_adjacency(f.users, mu_m));
  return out;
}

double density(const AdjacencyMatrix& m) {
  const std::size_t n = m.size();
  if (n < 2) return 0.0;
  std::size_t nnz = 0;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      if (i != j && m.w[i * n + j] > 0.0) ++nnz;
    }
  }
  return static_cast<double>(nnz) / static_cast<double>(n * (n - 1));
}

namespace {

struct Tap {
  std::size_t src;
  double weight;
};

// Area-averaging taps: output cell i spans [i*canvas, (i+1)*canvas) and
// source cell a spans [a*out, (a+1)*out), both in units of 1/(canvas*out).
std::vector<std::vector<Tap>> area_taps(std::size_t canvas_n, std::size_t out_size) {
  std::vector<std::vector<Tap>> taps(out_size);
  for (std::size_t i = 0; i < out_size; ++i) {
    const std::size_t lo = i * canvas_n;
    const std::size_t hi = (i + 1) * canvas_n;
    for (std::size_t a = lo / out_size; a < canvas_n && a * out_size < hi; ++a) {
      const std::size_t s_lo = std::max(lo, a * out_size);
      const std::size_t s_hi = std::min(hi, (a + 1) * out_size);
      if (s_hi > s_lo) {
        taps[i].push_back({a, static_cast<double>(s_hi - s_lo) / static_cast<double>(canvas_n)});
      }
    }
  }
  return taps;
}

AdjacencyImage render_with_slots(const AdjacencyMatrix& m, std::span<const std::size_t> slot,
                                 std::size_t canvas_n, std::size_t out_size) {
  if (out_size < 1) throw std::invalid_argument("image size must be at least 1");
  const std::size_t n = m.size();
  for (auto s : slot) {
    if (s >= canvas_n) {
      throw DataError("sequence needs " + std::to_string(s + 1) + " adjacency slots, canvas holds " +
                      std::to_string(canvas_n));
    }
  }
  std::vector<double> canvas(canvas_n * canvas_n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) canvas[slot[i] * canvas_n + slot[j]] = m.w[i * n + j];
  }

  const auto taps = area_taps(canvas_n, out_size);
  // Separable: average columns first, then rows.
  std::vector<double> tmp(canvas_n * out_size, 0.0);
  for (std::size_t r = 0; r < canvas_n; ++r) {
    for (std::size_t c = 0; c < out_size; ++c) {
      double acc = 0.0;
      for (const auto& t : taps[c]) acc += t.weight * canvas[r * canvas_n + t.src];
      tmp[r * out_size + c] = acc;
    }
  }
  AdjacencyImage img;
  img.side = out_size;
  img.pixels.assign(out_size * out_size, 0.0);
  for (std::size_t r = 0; r < out_size; ++r) {
    for (std::size_t c = 0; c < out_size; ++c) {
      double acc = 0.0;
      for (const auto& t : taps[r]) acc += t.weight * tmp[t.src * out_size + c];
      img.pixels[r * out_size + c] = std::clamp(acc, 0.0, 1.0);
    }
  }
  return img;
}

}  // namespace

AdjacencyImage render_image(const AdjacencyMatrix& m, std::size_t canvas_n, std::size_t out_size) {
  std::vector<std::size_t> slot(m.size());
  std::iota(slot.begin(), slot.end(), std::size_t{0});
  return render_with_slots(m, slot, canvas_n, out_size);
}

AdjacencyImage render_image(const AdjacencyMatrix& m, const SlotLayout& layout, std::size_t canvas_n,
                            std::size_t out_size) {
  std::vector<std::size_t> slot;
  slot.reserve(m.size());
  for (auto id : m.ids) slot.push_back(layout.slot(id));
  return render_with_slots(m, slot, canvas_n, out_size);
}

void write_pgm(std::ostream& out, std::size_t rows, std::size_t cols, std::span<const double> values) {
  if (values.size() != rows * cols) throw std::invalid_argument("pgm size mismatch");
  out << "P2\n" << cols << ' ' << rows << "\n255\n";
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) {
      const double v = std::clamp(values[r * cols + c], 0.0, 1.0);
      if (c) out << ' ';
      out << static_cast<int>(std::lround(255.0 * v));
    }
    out << '\n';
  }
}

}  // namespace tgraph::graph
