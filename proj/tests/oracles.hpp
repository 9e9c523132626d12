#pragma once

// Independent reference implementations used by the unit tests and the
// acceptance runner. Everything here is written as plain scalar loops so it
// shares no code path with the library.

#include <algorithm>
#include <cmath>
#include <random>
#include <vector>

#include "tgraph/features.hpp"
#include "tgraph/graph.hpp"
#include "tgraph/neural.hpp"

namespace oracle {

using tgraph::neural::MatrixXd;
using tgraph::neural::VectorXd;

inline std::vector<double> adjacency(std::vector<tgraph::ingest::UserPosition> frame, double mu) {
  std::sort(frame.begin(), frame.end(), [](const auto& a, const auto& b) { return a.track_id < b.track_id; });
  const std::size_t n = frame.size();
  std::vector<double> w(n * n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      if (i == j) continue;
      const double dx = frame[i].x - frame[j].x;
      const double dy = frame[i].y - frame[j].y;
      const double d = std::sqrt(dx * dx + dy * dy);
      if (d < mu) w[i * n + j] = std::exp(-d);
    }
  }
  return w;
}

inline double sigmoid(double v) { return 1.0 / (1.0 + std::exp(-v)); }

// sum_k m(r, k) * v(k), one term at a time.
inline double dot_row(const MatrixXd& m, int r, const VectorXd& v) {
  double s = 0.0;
  for (int k = 0; k < v.size(); ++k) s += m(r, k) * v(k);
  return s;
}

inline VectorXd gru(const VectorXd& x, const VectorXd& h, const tgraph::neural::RecurrentLayer& l) {
  const auto& gz = l.gates[0];
  const auto& gr = l.gates[1];
  const auto& gh = l.gates[2];
  const int H = static_cast<int>(h.size());
  VectorXd out(H);
  for (int j = 0; j < H; ++j) {
    const double z = sigmoid(dot_row(gz.w, j, x) + dot_row(gz.u, j, h) + gz.b(j, 0));
    const double r = sigmoid(dot_row(gr.w, j, x) + dot_row(gr.u, j, h) + gr.b(j, 0));
    const double cand = std::tanh(dot_row(gh.w, j, x) + r * dot_row(gh.u, j, h) + gh.b(j, 0));
    out(j) = z * cand + (1.0 - z) * h(j);
  }
  return out;
}

inline tgraph::neural::LstmState lstm(const VectorXd& x, const tgraph::neural::LstmState& s,
                                      const tgraph::neural::RecurrentLayer& l) {
  const int H = static_cast<int>(s.h.size());
  tgraph::neural::LstmState out{VectorXd(H), VectorXd(H)};
  for (int j = 0; j < H; ++j) {
    double pre[4];
    for (int g = 0; g < 4; ++g) {
      const auto& gate = l.gates[static_cast<std::size_t>(g)];
      pre[g] = dot_row(gate.w, j, x) + dot_row(gate.u, j, s.h) + gate.b(j, 0);
    }
    const double i = sigmoid(pre[0]);
    const double f = sigmoid(pre[1]);
    const double g = std::tanh(pre[2]);
    const double o = sigmoid(pre[3]);
    out.c(j) = f * s.c(j) + i * g;
    out.h(j) = o * std::tanh(out.c(j));
  }
  return out;
}

inline VectorXd rnn(const VectorXd& x, const VectorXd& h, const tgraph::neural::RecurrentLayer& l) {
  const auto& g = l.gates[0];
  VectorXd out(h.size());
  for (int j = 0; j < h.size(); ++j) out(j) = std::tanh(dot_row(g.w, j, x) + dot_row(g.u, j, h) + g.b(j, 0));
  return out;
}

// Returns (context, alpha) for hs given as one H-vector per step.
inline std::pair<VectorXd, VectorXd> attention(const std::vector<VectorXd>& hs,
                                               const tgraph::neural::AttentionParams& p) {
  const int T = static_cast<int>(hs.size());
  const int A = static_cast<int>(p.w.rows());
  std::vector<double> score(static_cast<std::size_t>(T));
  for (int t = 0; t < T; ++t) {
    double s = 0.0;
    for (int a = 0; a < A; ++a) s += p.v(a, 0) * std::tanh(dot_row(p.w, a, hs[static_cast<std::size_t>(t)]));
    score[static_cast<std::size_t>(t)] = s;
  }
  const double top = *std::max_element(score.begin(), score.end());
  double z = 0.0;
  for (double s : score) z += std::exp(s - top);
  VectorXd alpha(T);
  VectorXd ctx = VectorXd::Zero(hs.front().size());
  for (int t = 0; t < T; ++t) {
    alpha(t) = std::exp(score[static_cast<std::size_t>(t)] - top) / z;
    ctx += alpha(t) * hs[static_cast<std::size_t>(t)];
  }
  return {ctx, alpha};
}

// Inference-mode forward pass composed from the scalar step oracles.
inline VectorXd forward(const tgraph::neural::TemporalModel& m, const tgraph::features::FeatureSequence& fs) {
  using tgraph::neural::CellType;
  std::vector<VectorXd> seq;
  for (std::size_t t = 0; t < fs.steps; ++t) {
    const auto s = fs.step(t);
    seq.emplace_back(Eigen::Map<const VectorXd>(s.data(), static_cast<Eigen::Index>(s.size())));
  }
  for (const auto& layer : m.params.layers) {
    const int H = layer.units();
    std::vector<VectorXd> next;
    tgraph::neural::LstmState st{VectorXd::Zero(H), VectorXd::Zero(H)};
    for (const auto& x : seq) {
      switch (layer.cell) {
        case CellType::gru: st.h = gru(x, st.h, layer); break;
        case CellType::lstm: st = lstm(x, st, layer); break;
        case CellType::rnn: st.h = rnn(x, st.h, layer); break;
      }
      next.push_back(st.h);
    }
    seq = std::move(next);
  }
  VectorXd feat = m.params.attention ? attention(seq, *m.params.attention).first : seq.back();
  if (m.params.hidden) {
    const auto& d = *m.params.hidden;
    VectorXd y(d.w.rows());
    for (int r = 0; r < d.w.rows(); ++r) y(r) = std::max(0.0, dot_row(d.w, r, feat) + d.b(r, 0));
    feat = y;
  }
  const auto& o = m.params.output;
  std::vector<double> logits(static_cast<std::size_t>(o.w.rows()));
  for (int r = 0; r < o.w.rows(); ++r) logits[static_cast<std::size_t>(r)] = dot_row(o.w, r, feat) + o.b(r, 0);
  const double top = *std::max_element(logits.begin(), logits.end());
  double z = 0.0;
  for (double l : logits) z += std::exp(l - top);
  VectorXd p(o.w.rows());
  for (int r = 0; r < o.w.rows(); ++r) p(r) = std::exp(logits[static_cast<std::size_t>(r)] - top) / z;
  return p;
}

// --- generators -----------------------------------------------------------------

inline tgraph::features::FeatureSequence random_sequence(std::mt19937_64& rng, std::size_t T, std::size_t F,
                                                         tgraph::TrafficState label) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  tgraph::features::FeatureSequence fs;
  fs.region_id = "r";
  fs.label = label;
  fs.steps = T;
  fs.dim = F;
  fs.data.resize(T * F);
  for (auto& v : fs.data) v = u(rng);
  return fs;
}

// Random parameters of moderate scale, biases included, so every gate is in
// its non-saturated range.
inline tgraph::neural::TemporalModel random_model(const tgraph::neural::TemporalModelConfig& cfg,
                                                  std::uint64_t seed, double scale = 0.5) {
  auto m = tgraph::neural::TemporalModel::zeros(cfg);
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-scale, scale);
  m.params.for_each([&](const std::string&, MatrixXd& t) {
    for (Eigen::Index i = 0; i < t.size(); ++i) t.data()[i] = u(rng);
  });
  return m;
}

// Loss of the inference forward pass evaluated entirely in long double, with
// entry `idx` (column-major) of `target` shifted by `delta`. Used as the
// finite-difference oracle: its rounding noise sits far below the size of
// the smallest gradients being checked.
inline long double loss_ext(const tgraph::neural::TemporalModel& m, const tgraph::features::FeatureSequence& fs,
                            const MatrixXd* target, Eigen::Index idx, long double delta) {
  using tgraph::neural::CellType;
  using L = long double;
  using Vec = std::vector<L>;
  const auto get = [&](const MatrixXd& t, Eigen::Index r, Eigen::Index c) -> L {
    L v = t(r, c);
    if (&t == target && c * t.rows() + r == idx) v += delta;
    return v;
  };
  const auto dot = [&](const MatrixXd& t, Eigen::Index r, const Vec& v) {
    L s = 0;
    for (std::size_t k = 0; k < v.size(); ++k) s += get(t, r, static_cast<Eigen::Index>(k)) * v[k];
    return s;
  };
  const auto sig = [](L v) { return 1.0L / (1.0L + std::exp(-v)); };

  std::vector<Vec> seq;
  for (std::size_t t = 0; t < fs.steps; ++t) {
    const auto st = fs.step(t);
    seq.emplace_back(st.begin(), st.end());
  }
  for (const auto& layer : m.params.layers) {
    const auto H = static_cast<std::size_t>(layer.units());
    Vec h(H, 0.0L), c(H, 0.0L);
    std::vector<Vec> next;
    for (const auto& x : seq) {
      Vec nh(H), nc(H);
      for (std::size_t j = 0; j < H; ++j) {
        const auto r = static_cast<Eigen::Index>(j);
        const auto pre = [&](std::size_t g) {
          const auto& gate = layer.gates[g];
          return dot(gate.w, r, x) + dot(gate.u, r, h) + get(gate.b, r, 0);
        };
        switch (layer.cell) {
          case CellType::gru: {
            const auto& gh = layer.gates[2];
            const L z = sig(pre(0));
            const L rr = sig(pre(1));
            const L cand = std::tanh(dot(gh.w, r, x) + rr * dot(gh.u, r, h) + get(gh.b, r, 0));
            nh[j] = z * cand + (1.0L - z) * h[j];
            break;
          }
          case CellType::lstm: {
            nc[j] = sig(pre(1)) * c[j] + sig(pre(0)) * std::tanh(pre(2));
            nh[j] = sig(pre(3)) * std::tanh(nc[j]);
            break;
          }
          case CellType::rnn: nh[j] = std::tanh(pre(0)); break;
        }
      }
      h = nh;
      c = nc;
      next.push_back(h);
    }
    seq = std::move(next);
  }
  Vec feat = seq.back();
  if (const auto& a = m.params.attention) {
    std::vector<L> score;
    for (const auto& ht : seq) {
      L s = 0;
      for (Eigen::Index r = 0; r < a->w.rows(); ++r) s += get(a->v, r, 0) * std::tanh(dot(a->w, r, ht));
      score.push_back(s);
    }
    const L top = *std::max_element(score.begin(), score.end());
    L z = 0;
    for (L s : score) z += std::exp(s - top);
    feat.assign(seq.front().size(), 0.0L);
    for (std::size_t t = 0; t < seq.size(); ++t) {
      for (std::size_t j = 0; j < feat.size(); ++j) feat[j] += std::exp(score[t] - top) / z * seq[t][j];
    }
  }
  if (const auto& d = m.params.hidden) {
    Vec y(static_cast<std::size_t>(d->w.rows()));
    for (Eigen::Index r = 0; r < d->w.rows(); ++r) {
      y[static_cast<std::size_t>(r)] = std::max(0.0L, dot(d->w, r, feat) + get(d->b, r, 0));
    }
    feat = y;
  }
  const auto& o = m.params.output;
  Vec logits;
  for (Eigen::Index r = 0; r < o.w.rows(); ++r) logits.push_back(dot(o.w, r, feat) + get(o.b, r, 0));
  const L top = *std::max_element(logits.begin(), logits.end());
  L z = 0;
  for (L l : logits) z += std::exp(l - top);
  const auto label = static_cast<std::size_t>(tgraph::index_of(fs.label));
  return -(logits[label] - top - std::log(z));
}

struct GradientCheck {
  double max_rel_error = 0.0;
  std::size_t checked = 0;
};

// Compares backward() against central differences (step h) of the loss for
// every parameter entry; relative error uses an absolute floor of `floor`.
inline GradientCheck check_gradients(const tgraph::neural::TemporalModel& model,
                                     const tgraph::features::FeatureSequence& fs, double h = 1e-5,
                                     double floor = 1e-8) {
  const auto analytic = tgraph::neural::backward(model, fs, tgraph::index_of(fs.label));
  std::vector<const MatrixXd*> grads;
  analytic.for_each([&](const std::string&, const MatrixXd& g) { grads.push_back(&g); });

  GradientCheck out;
  std::size_t k = 0;
  model.params.for_each([&](const std::string&, const MatrixXd& p) {
    const MatrixXd& g = *grads[k++];
    for (Eigen::Index i = 0; i < p.size(); ++i) {
      const long double up = loss_ext(model, fs, &p, i, h);
      const long double down = loss_ext(model, fs, &p, i, -h);
      const double numeric = static_cast<double>((up - down) / (2.0L * h));
      const double a = g.data()[i];
      const double rel = std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), floor});
      out.max_rel_error = std::max(out.max_rel_error, rel);
      ++out.checked;
    }
  });
  return out;
}

}  // namespace oracle
