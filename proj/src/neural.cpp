#include "tgraph/neural.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <ostream>
#include <stdexcept>

#include "binary_io.hpp"
#include "text_util.hpp"

namespace tgraph::neural {

std::string_view cell_name(CellType c) {
  switch (c) {
    case CellType::gru: return "gru";
    case CellType::lstm: return "lstm";
    case CellType::rnn: return "rnn";
  }
  return "?";
}

void TemporalModelConfig::validate() const {
  if (layer_sizes[0] < 1 || layer_sizes[1] < 1) throw std::invalid_argument("layer sizes must be positive");
  if (dense_units < 0) throw std::invalid_argument("dense units must be non-negative");
  if (num_classes != kNumStates) throw std::invalid_argument("models classify exactly 3 states");
  if (input_dim < 1) throw std::invalid_argument("input dimension must be positive");
}

void TrainConfig::validate() const {
  if (!(learning_rate >= 0.0 && learning_rate < 1.0)) throw std::invalid_argument("learning rate must be in [0, 1)");
  if (epochs < 0) throw std::invalid_argument("epochs must be non-negative");
  if (batch_size < 1) throw std::invalid_argument("batch size must be positive");
  if (!(recurrent_dropout >= 0.0 && recurrent_dropout < 1.0)) {
    throw std::invalid_argument("recurrent dropout must be in [0, 1)");
  }
  if (!(beta1 > 0.0 && beta1 < 1.0 && beta2 > 0.0 && beta2 < 1.0 && epsilon > 0.0)) {
    throw std::invalid_argument("invalid Adam constants");
  }
}

namespace {

int gate_count(CellType c) {
  switch (c) {
    case CellType::gru: return 3;
    case CellType::lstm: return 4;
    case CellType::rnn: return 1;
  }
  return 0;
}

const char* gate_suffix(CellType c, std::size_t g) {
  static constexpr const char* gru[] = {"z", "r", "h"};
  static constexpr const char* lstm[] = {"i", "f", "c", "o"};
  switch (c) {
    case CellType::gru: return gru[g];
    case CellType::lstm: return lstm[g];
    case CellType::rnn: return "h";
  }
  return "?";
}

template <typename Params, typename F>
void visit_params(Params& p, F&& f) {
  for (std::size_t l = 0; l < p.layers.size(); ++l) {
    auto& layer = p.layers[l];
    const std::string prefix = "layer" + std::to_string(l + 1) + ".";
    for (std::size_t g = 0; g < layer.gates.size(); ++g) {
      f(prefix + "W_" + gate_suffix(layer.cell, g), layer.gates[g].w);
    }
    for (std::size_t g = 0; g < layer.gates.size(); ++g) {
      f(prefix + "U_" + gate_suffix(layer.cell, g), layer.gates[g].u);
    }
    for (std::size_t g = 0; g < layer.gates.size(); ++g) {
      f(prefix + "b_" + gate_suffix(layer.cell, g), layer.gates[g].b);
    }
  }
  if (p.attention) {
    f(std::string("attention.W"), p.attention->w);
    f(std::string("attention.v"), p.attention->v);
  }
  if (p.hidden) {
    f(std::string("dense.W"), p.hidden->w);
    f(std::string("dense.b"), p.hidden->b);
  }
  f(std::string("output.W"), p.output.w);
  f(std::string("output.b"), p.output.b);
}

std::vector<MatrixXd*> tensors(Parameters& p) {
  std::vector<MatrixXd*> out;
  visit_params(p, [&](const std::string&, MatrixXd& m) { out.push_back(&m); });
  return out;
}

std::vector<const MatrixXd*> tensors(const Parameters& p) {
  std::vector<const MatrixXd*> out;
  visit_params(p, [&](const std::string&, const MatrixXd& m) { out.push_back(&m); });
  return out;
}

}  // namespace

void Parameters::for_each(const std::function<void(const std::string&, MatrixXd&)>& f) {
  visit_params(*this, f);
}

void Parameters::for_each(const std::function<void(const std::string&, const MatrixXd&)>& f) const {
  visit_params(*this, f);
}

Parameters Parameters::zeros_like() const {
  Parameters z = *this;
  z.for_each([](const std::string&, MatrixXd& m) { m.setZero(); });
  return z;
}

std::size_t Parameters::count() const {
  std::size_t n = 0;
  for_each([&](const std::string&, const MatrixXd& m) { n += static_cast<std::size_t>(m.size()); });
  return n;
}

bool Parameters::all_finite() const {
  bool ok = true;
  for_each([&](const std::string&, const MatrixXd& m) { ok = ok && m.allFinite(); });
  return ok;
}

// ---------------------------------------------------------------------------

namespace {

MatrixXd glorot(int rows, int cols, Rng& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(rows + cols));
  std::uniform_real_distribution<double> dist(-limit, limit);
  MatrixXd m(rows, cols);
  for (int c = 0; c < cols; ++c) {
    for (int r = 0; r < rows; ++r) m(r, c) = dist(rng);
  }
  return m;
}

MatrixXd orthogonal(int n, Rng& rng) {
  std::normal_distribution<double> dist(0.0, 1.0);
  MatrixXd a(n, n);
  for (int c = 0; c < n; ++c) {
    for (int r = 0; r < n; ++r) a(r, c) = dist(rng);
  }
  Eigen::HouseholderQR<MatrixXd> qr(a);
  MatrixXd q = qr.householderQ();
  const MatrixXd& r = qr.matrixQR();
  for (int i = 0; i < n; ++i) {
    if (r(i, i) < 0.0) q.col(i) = -q.col(i);
  }
  return q;
}

Parameters shaped(const TemporalModelConfig& cfg) {
  cfg.validate();
  Parameters p;
  for (int l = 0; l < 2; ++l) {
    const int d = l == 0 ? cfg.input_dim : cfg.layer_sizes[0];
    const int h = cfg.layer_sizes[l];
    auto& layer = p.layers[l];
    layer.cell = cfg.cell;
    layer.gates.resize(static_cast<std::size_t>(gate_count(cfg.cell)));
    for (auto& g : layer.gates) {
      g.w = MatrixXd::Zero(h, d);
      g.u = MatrixXd::Zero(h, h);
      g.b = MatrixXd::Zero(h, 1);
    }
  }
  const int top = cfg.layer_sizes[1];
  if (cfg.attention) p.attention = AttentionParams{MatrixXd::Zero(top, top), MatrixXd::Zero(top, 1)};
  int head_in = top;
  if (cfg.dense_units > 0) {
    p.hidden = DenseParams{MatrixXd::Zero(cfg.dense_units, top), MatrixXd::Zero(cfg.dense_units, 1)};
    head_in = cfg.dense_units;
  }
  p.output = DenseParams{MatrixXd::Zero(cfg.num_classes, head_in), MatrixXd::Zero(cfg.num_classes, 1)};
  return p;
}

}  // namespace

TemporalModel TemporalModel::zeros(const TemporalModelConfig& config) {
  return TemporalModel{config, shaped(config)};
}

TemporalModel TemporalModel::initialize(const TemporalModelConfig& config, std::uint64_t seed) {
  TemporalModel m{config, shaped(config)};
  Rng rng(seed);
  for (auto& layer : m.params.layers) {
    for (auto& g : layer.gates) g.w = glorot(static_cast<int>(g.w.rows()), static_cast<int>(g.w.cols()), rng);
    for (auto& g : layer.gates) g.u = orthogonal(static_cast<int>(g.u.rows()), rng);
    if (layer.cell == CellType::lstm) layer.gates[1].b.setOnes();
  }
  if (auto& a = m.params.attention) {
    a->w = glorot(static_cast<int>(a->w.rows()), static_cast<int>(a->w.cols()), rng);
    a->v = glorot(static_cast<int>(a->v.rows()), 1, rng);
  }
  if (auto& d = m.params.hidden) d->w = glorot(static_cast<int>(d->w.rows()), static_cast<int>(d->w.cols()), rng);
  auto& o = m.params.output;
  o.w = glorot(static_cast<int>(o.w.rows()), static_cast<int>(o.w.cols()), rng);
  return m;
}

// ---------------------------------------------------------------------------

double sigmoid(double v) {
  if (v >= 0.0) return 1.0 / (1.0 + std::exp(-v));
  const double e = std::exp(v);
  return e / (1.0 + e);
}

namespace {

MatrixXd sigm(const MatrixXd& a) { return a.unaryExpr([](double v) { return sigmoid(v); }); }
MatrixXd tanh_of(const MatrixXd& a) { return a.array().tanh().matrix(); }

void check_step_shapes(const VectorXd& x, const VectorXd& h, const RecurrentLayer& layer, CellType want) {
  if (layer.cell != want) throw std::invalid_argument("layer has a different cell type");
  if (x.size() != layer.input_dim() || h.size() != layer.units()) {
    throw std::invalid_argument("step input shape mismatch");
  }
}

}  // namespace

VectorXd gru_step(const VectorXd& x, const VectorXd& h_prev, const RecurrentLayer& layer) {
  check_step_shapes(x, h_prev, layer, CellType::gru);
  const auto& gz = layer.gates[0];
  const auto& gr = layer.gates[1];
  const auto& gh = layer.gates[2];
  const VectorXd z = sigm(gz.w * x + gz.u * h_prev + gz.b);
  const VectorXd r = sigm(gr.w * x + gr.u * h_prev + gr.b);
  const VectorXd hc = tanh_of(gh.w * x + r.cwiseProduct(gh.u * h_prev) + gh.b);
  return z.cwiseProduct(hc) + (VectorXd::Ones(z.size()) - z).cwiseProduct(h_prev);
}

LstmState lstm_step(const VectorXd& x, const LstmState& prev, const RecurrentLayer& layer) {
  check_step_shapes(x, prev.h, layer, CellType::lstm);
  if (prev.c.size() != prev.h.size()) throw std::invalid_argument("cell state shape mismatch");
  const auto pre = [&](std::size_t g) -> VectorXd {
    const auto& gate = layer.gates[g];
    return gate.w * x + gate.u * prev.h + gate.b;
  };
  const VectorXd i = sigm(pre(0));
  const VectorXd f = sigm(pre(1));
  const VectorXd g = tanh_of(pre(2));
  const VectorXd o = sigm(pre(3));
  LstmState next;
  next.c = f.cwiseProduct(prev.c) + i.cwiseProduct(g);
  next.h = o.cwiseProduct(tanh_of(next.c));
  return next;
}

VectorXd rnn_step(const VectorXd& x, const VectorXd& h_prev, const RecurrentLayer& layer) {
  check_step_shapes(x, h_prev, layer, CellType::rnn);
  const auto& g = layer.gates[0];
  return tanh_of(g.w * x + g.u * h_prev + g.b);
}

VectorXd softmax(const VectorXd& logits) {
  const VectorXd e = (logits.array() - logits.maxCoeff()).exp().matrix();
  return e / e.sum();
}

AttentionResult attention(const MatrixXd& hs, const AttentionParams& p) {
  if (hs.cols() < 1) throw std::invalid_argument("attention needs at least one step");
  if (hs.rows() != p.w.cols()) throw std::invalid_argument("attention shape mismatch");
  const MatrixXd scores = p.v.transpose() * tanh_of(p.w * hs);  // 1 x T
  AttentionResult out;
  out.alpha = softmax(scores.transpose());
  out.context = hs * out.alpha;
  return out;
}

// ---------------------------------------------------------------------------
// Batched forward/backward. A batch of B sequences of length T is laid out
// as a D x (T*B) matrix whose column t*B + b holds step t of sequence b.

namespace {

struct LayerTrace {
  const MatrixXd* input = nullptr;  // D x TB
  MatrixXd out;                     // h_t, H x TB
  MatrixXd hm;                      // masked h_{t-1}, H x TB
  std::vector<MatrixXd> act;        // gate activations, H x TB each
  MatrixXd uh;                      // GRU: U_h hm
  MatrixXd c;                       // LSTM: c_t
  MatrixXd tanh_c;                  // LSTM: tanh(c_t)
  MatrixXd mask;                    // H x B keep-mask (scaled); empty when off
};

struct HeadTrace {
  MatrixXd feat;    // recurrent summary, H2 x B
  MatrixXd ua;      // attention: tanh(W_a h_t), A x TB
  MatrixXd alpha;   // attention weights, T x B
  MatrixXd z;       // dense pre-activation
  MatrixXd y;       // head input
  MatrixXd probs;   // C x B
};

struct Trace {
  int steps = 0;
  int batch = 0;
  MatrixXd x;
  std::array<LayerTrace, 2> layers;
  HeadTrace head;
};

void forward_layer(const RecurrentLayer& layer, const MatrixXd& x, int T, int B, LayerTrace& tr) {
  const int H = layer.units();
  const Eigen::Index TB = static_cast<Eigen::Index>(T) * B;
  tr.input = &x;
  tr.out.resize(H, TB);
  tr.hm.resize(H, TB);
  const std::size_t ng = layer.gates.size();
  std::vector<MatrixXd> pre(ng);
  for (std::size_t g = 0; g < ng; ++g) {
    pre[g] = layer.gates[g].w * x;
    pre[g].colwise() += layer.gates[g].b.col(0);
  }
  tr.act.assign(ng, MatrixXd(H, TB));
  if (layer.cell == CellType::gru) tr.uh.resize(H, TB);
  if (layer.cell == CellType::lstm) {
    tr.c.resize(H, TB);
    tr.tanh_c.resize(H, TB);
  }

  const MatrixXd zero = MatrixXd::Zero(H, B);
  for (int t = 0; t < T; ++t) {
    const Eigen::Index col = static_cast<Eigen::Index>(t) * B;
    const MatrixXd hp = t == 0 ? zero : MatrixXd(tr.out.middleCols(col - B, B));
    const MatrixXd hm = tr.mask.size() ? MatrixXd(hp.cwiseProduct(tr.mask)) : hp;
    tr.hm.middleCols(col, B) = hm;
    switch (layer.cell) {
      case CellType::gru: {
        const MatrixXd z = sigm(pre[0].middleCols(col, B) + layer.gates[0].u * hm);
        const MatrixXd r = sigm(pre[1].middleCols(col, B) + layer.gates[1].u * hm);
        const MatrixXd uh = layer.gates[2].u * hm;
        const MatrixXd hc = tanh_of(pre[2].middleCols(col, B) + r.cwiseProduct(uh));
        tr.act[0].middleCols(col, B) = z;
        tr.act[1].middleCols(col, B) = r;
        tr.act[2].middleCols(col, B) = hc;
        tr.uh.middleCols(col, B) = uh;
        tr.out.middleCols(col, B) = (z.array() * hc.array() + (1.0 - z.array()) * hp.array()).matrix();
        break;
      }
      case CellType::lstm: {
        const MatrixXd cp = t == 0 ? zero : MatrixXd(tr.c.middleCols(col - B, B));
        const MatrixXd i = sigm(pre[0].middleCols(col, B) + layer.gates[0].u * hm);
        const MatrixXd f = sigm(pre[1].middleCols(col, B) + layer.gates[1].u * hm);
        const MatrixXd g = tanh_of(pre[2].middleCols(col, B) + layer.gates[2].u * hm);
        const MatrixXd o = sigm(pre[3].middleCols(col, B) + layer.gates[3].u * hm);
        const MatrixXd c = (f.array() * cp.array() + i.array() * g.array()).matrix();
        const MatrixXd tc = tanh_of(c);
        tr.act[0].middleCols(col, B) = i;
        tr.act[1].middleCols(col, B) = f;
        tr.act[2].middleCols(col, B) = g;
        tr.act[3].middleCols(col, B) = o;
        tr.c.middleCols(col, B) = c;
        tr.tanh_c.middleCols(col, B) = tc;
        tr.out.middleCols(col, B) = o.cwiseProduct(tc);
        break;
      }
      case CellType::rnn: {
        const MatrixXd h = tanh_of(pre[0].middleCols(col, B) + layer.gates[0].u * hm);
        tr.act[0].middleCols(col, B) = h;
        tr.out.middleCols(col, B) = h;
        break;
      }
    }
  }
}

// Accumulates parameter gradients into `grad` and returns dL/dx (D x TB)
// when want_dx is set.
MatrixXd backward_layer(const RecurrentLayer& layer, const LayerTrace& tr, const MatrixXd& d_out, int T, int B,
                        RecurrentLayer& grad, bool want_dx) {
  const int H = layer.units();
  const Eigen::Index TB = static_cast<Eigen::Index>(T) * B;
  const std::size_t ng = layer.gates.size();
  std::vector<MatrixXd> da(ng, MatrixXd(H, TB));  // d(pre-activation), input side
  MatrixXd duh;
  if (layer.cell == CellType::gru) duh.resize(H, TB);

  const MatrixXd zero = MatrixXd::Zero(H, B);
  MatrixXd dh_carry = zero;
  MatrixXd dc_carry = zero;
  for (int t = T - 1; t >= 0; --t) {
    const Eigen::Index col = static_cast<Eigen::Index>(t) * B;
    const MatrixXd dh = d_out.middleCols(col, B) + dh_carry;
    MatrixXd dh_prev = zero;
    MatrixXd dhm;
    switch (layer.cell) {
      case CellType::gru: {
        const auto z = tr.act[0].middleCols(col, B).array();
        const auto r = tr.act[1].middleCols(col, B).array();
        const auto hc = tr.act[2].middleCols(col, B).array();
        const auto uh = tr.uh.middleCols(col, B).array();
        const MatrixXd hp = t == 0 ? zero : MatrixXd(tr.out.middleCols(col - B, B));
        const auto dha = dh.array();
        const Eigen::ArrayXXd dah = dha * z * (1.0 - hc.square());
        const Eigen::ArrayXXd dr = dah * uh;
        da[0].middleCols(col, B) = (dha * (hc - hp.array()) * z * (1.0 - z)).matrix();
        da[1].middleCols(col, B) = (dr * r * (1.0 - r)).matrix();
        da[2].middleCols(col, B) = dah.matrix();
        duh.middleCols(col, B) = (dah * r).matrix();
        dh_prev = (dha * (1.0 - z)).matrix();
        dhm = layer.gates[0].u.transpose() * da[0].middleCols(col, B) +
              layer.gates[1].u.transpose() * da[1].middleCols(col, B) +
              layer.gates[2].u.transpose() * duh.middleCols(col, B);
        break;
      }
      case CellType::lstm: {
        const auto i = tr.act[0].middleCols(col, B).array();
        const auto f = tr.act[1].middleCols(col, B).array();
        const auto g = tr.act[2].middleCols(col, B).array();
        const auto o = tr.act[3].middleCols(col, B).array();
        const auto tc = tr.tanh_c.middleCols(col, B).array();
        const MatrixXd cp = t == 0 ? zero : MatrixXd(tr.c.middleCols(col - B, B));
        const Eigen::ArrayXXd dc = dc_carry.array() + dh.array() * o * (1.0 - tc.square());
        da[0].middleCols(col, B) = (dc * g * i * (1.0 - i)).matrix();
        da[1].middleCols(col, B) = (dc * cp.array() * f * (1.0 - f)).matrix();
        da[2].middleCols(col, B) = (dc * i * (1.0 - g.square())).matrix();
        da[3].middleCols(col, B) = (dh.array() * tc * o * (1.0 - o)).matrix();
        dc_carry = (dc * f).matrix();
        dhm = layer.gates[0].u.transpose() * da[0].middleCols(col, B);
        for (std::size_t q = 1; q < 4; ++q) dhm += layer.gates[q].u.transpose() * da[q].middleCols(col, B);
        break;
      }
      case CellType::rnn: {
        const auto h = tr.act[0].middleCols(col, B).array();
        da[0].middleCols(col, B) = (dh.array() * (1.0 - h.square())).matrix();
        dhm = layer.gates[0].u.transpose() * da[0].middleCols(col, B);
        break;
      }
    }
    dh_carry = tr.mask.size() ? MatrixXd(dh_prev + dhm.cwiseProduct(tr.mask)) : MatrixXd(dh_prev + dhm);
  }

  const MatrixXd& x = *tr.input;
  for (std::size_t g = 0; g < ng; ++g) {
    grad.gates[g].w.noalias() += da[g] * x.transpose();
    grad.gates[g].b += da[g].rowwise().sum();
    const MatrixXd& du_src = (layer.cell == CellType::gru && g == 2) ? duh : da[g];
    grad.gates[g].u.noalias() += du_src * tr.hm.transpose();
  }
  MatrixXd dx;
  if (want_dx) {
    dx = layer.gates[0].w.transpose() * da[0];
    for (std::size_t g = 1; g < ng; ++g) dx.noalias() += layer.gates[g].w.transpose() * da[g];
  }
  return dx;
}

MatrixXd column_softmax(const MatrixXd& logits) {
  MatrixXd p(logits.rows(), logits.cols());
  for (Eigen::Index b = 0; b < logits.cols(); ++b) p.col(b) = softmax(logits.col(b));
  return p;
}

void forward_head(const Parameters& p, const LayerTrace& top, int T, int B, HeadTrace& ht) {
  const MatrixXd& hs = top.out;
  if (p.attention) {
    ht.ua = tanh_of(p.attention->w * hs);
    const MatrixXd s = p.attention->v.transpose() * ht.ua;  // 1 x TB
    MatrixXd scores(T, B);
    for (int t = 0; t < T; ++t) scores.row(t) = s.middleCols(static_cast<Eigen::Index>(t) * B, B);
    ht.alpha.resize(T, B);
    for (int b = 0; b < B; ++b) ht.alpha.col(b) = softmax(scores.col(b));
    ht.feat = MatrixXd::Zero(hs.rows(), B);
    for (int t = 0; t < T; ++t) {
      ht.feat.array() += hs.middleCols(static_cast<Eigen::Index>(t) * B, B).array().rowwise() *
                         ht.alpha.row(t).array();
    }
  } else {
    ht.feat = hs.middleCols(static_cast<Eigen::Index>(T - 1) * B, B);
  }
  if (p.hidden) {
    ht.z = p.hidden->w * ht.feat;
    ht.z.colwise() += p.hidden->b.col(0);
    ht.y = ht.z.cwiseMax(0.0);
  } else {
    ht.y = ht.feat;
  }
  MatrixXd logits = p.output.w * ht.y;
  logits.colwise() += p.output.b.col(0);
  ht.probs = column_softmax(logits);
}

// Returns dL/d(top layer outputs), H2 x TB.
MatrixXd backward_head(const Parameters& p, const LayerTrace& top, const HeadTrace& ht, const MatrixXd& dlogits,
                       int T, int B, Parameters& grad) {
  grad.output.w.noalias() += dlogits * ht.y.transpose();
  grad.output.b += dlogits.rowwise().sum();
  MatrixXd dfeat = p.output.w.transpose() * dlogits;
  if (p.hidden) {
    const MatrixXd dz = (ht.z.array() > 0.0).select(dfeat.array(), 0.0).matrix();
    grad.hidden->w.noalias() += dz * ht.feat.transpose();
    grad.hidden->b += dz.rowwise().sum();
    dfeat = p.hidden->w.transpose() * dz;
  }
  const MatrixXd& hs = top.out;
  MatrixXd dhs = MatrixXd::Zero(hs.rows(), hs.cols());
  if (p.attention) {
    MatrixXd dalpha(T, B);
    for (int t = 0; t < T; ++t) {
      dalpha.row(t) =
          (dfeat.array() * hs.middleCols(static_cast<Eigen::Index>(t) * B, B).array()).colwise().sum();
    }
    const Eigen::RowVectorXd mean = (ht.alpha.array() * dalpha.array()).colwise().sum();
    const MatrixXd ds = (ht.alpha.array() * (dalpha.array().rowwise() - mean.array())).matrix();  // T x B
    MatrixXd dua(ht.ua.rows(), ht.ua.cols());
    Eigen::RowVectorXd ds_flat(static_cast<Eigen::Index>(T) * B);
    for (int t = 0; t < T; ++t) {
      const Eigen::Index col = static_cast<Eigen::Index>(t) * B;
      dhs.middleCols(col, B) = (dfeat.array().rowwise() * ht.alpha.row(t).array()).matrix();
      ds_flat.segment(col, B) = ds.row(t);
      dua.middleCols(col, B) =
          ((p.attention->v * ds.row(t)).array() * (1.0 - ht.ua.middleCols(col, B).array().square())).matrix();
    }
    grad.attention->v.noalias() += ht.ua * ds_flat.transpose();
    grad.attention->w.noalias() += dua * hs.transpose();
    dhs.noalias() += p.attention->w.transpose() * dua;
  } else {
    dhs.middleCols(static_cast<Eigen::Index>(T - 1) * B, B) = dfeat;
  }
  return dhs;
}

MatrixXd draw_mask(int units, int batch, double drop, Rng& rng) {
  const double keep = 1.0 - drop;
  std::bernoulli_distribution bern(keep);
  MatrixXd m(units, batch);
  for (int b = 0; b < batch; ++b) {
    for (int h = 0; h < units; ++h) m(h, b) = bern(rng) ? 1.0 / keep : 0.0;
  }
  return m;
}

void run_forward(const TemporalModel& model, std::span<const features::FeatureSequence* const> batch,
                 double dropout, Rng* rng, Trace& tr) {
  if (batch.empty()) throw std::invalid_argument("empty batch");
  const int T = static_cast<int>(batch.front()->steps);
  const int B = static_cast<int>(batch.size());
  const int D = model.config.input_dim;
  if (T < 1) throw std::invalid_argument("sequence has no steps");
  for (const auto* fs : batch) {
    if (static_cast<int>(fs->steps) != T || static_cast<int>(fs->dim) != D ||
        fs->data.size() != fs->steps * fs->dim) {
      throw std::invalid_argument("feature sequence shape does not match the model input");
    }
  }
  tr.steps = T;
  tr.batch = B;
  tr.x.resize(D, static_cast<Eigen::Index>(T) * B);
  for (int b = 0; b < B; ++b) {
    for (int t = 0; t < T; ++t) {
      const auto step = batch[b]->step(t);
      tr.x.col(static_cast<Eigen::Index>(t) * B + b) = Eigen::Map<const VectorXd>(step.data(), D);
    }
  }
  for (int l = 0; l < 2; ++l) {
    tr.layers[l].mask = (dropout > 0.0 && rng) ? draw_mask(model.params.layers[l].units(), B, dropout, *rng)
                                               : MatrixXd();
  }
  forward_layer(model.params.layers[0], tr.x, T, B, tr.layers[0]);
  forward_layer(model.params.layers[1], tr.layers[0].out, T, B, tr.layers[1]);
  forward_head(model.params, tr.layers[1], T, B, tr.head);
}

Parameters run_backward(const TemporalModel& model, const Trace& tr, const MatrixXd& dlogits) {
  Parameters grad = model.params.zeros_like();
  const int T = tr.steps;
  const int B = tr.batch;
  const MatrixXd dtop = backward_head(model.params, tr.layers[1], tr.head, dlogits, T, B, grad);
  const MatrixXd dmid =
      backward_layer(model.params.layers[1], tr.layers[1], dtop, T, B, grad.layers[1], true);
  backward_layer(model.params.layers[0], tr.layers[0], dmid, T, B, grad.layers[0], false);
  return grad;
}

constexpr double kProbFloor = 1e-12;

}  // namespace

VectorXd forward(const TemporalModel& model, const features::FeatureSequence& fs) {
  Trace tr;
  const features::FeatureSequence* one[] = {&fs};
  run_forward(model, one, 0.0, nullptr, tr);
  return tr.head.probs.col(0);
}

VectorXd forward(const TemporalModel& model, const features::FeatureSequence& fs, bool train_mode,
                 double recurrent_dropout, Rng& rng) {
  Trace tr;
  const features::FeatureSequence* one[] = {&fs};
  run_forward(model, one, train_mode ? recurrent_dropout : 0.0, &rng, tr);
  return tr.head.probs.col(0);
}

int predict(const TemporalModel& model, const features::FeatureSequence& fs) {
  const VectorXd p = forward(model, fs);
  int best = 0;
  for (int c = 1; c < p.size(); ++c) {
    if (p(c) > p(best)) best = c;
  }
  return best;
}

double loss(const VectorXd& probs, int label) {
  if (label < 0 || label >= probs.size()) throw std::invalid_argument("label out of range");
  return -std::log(std::max(probs(label), kProbFloor));
}

BatchGradient batch_gradient(const TemporalModel& model,
                             std::span<const features::FeatureSequence* const> batch, double recurrent_dropout,
                             Rng& rng) {
  Trace tr;
  run_forward(model, batch, recurrent_dropout, &rng, tr);
  const int B = tr.batch;
  MatrixXd dlogits = tr.head.probs;
  double total = 0.0;
  for (int b = 0; b < B; ++b) {
    const int label = index_of(batch[b]->label);
    total += -std::log(std::max(tr.head.probs(label, b), kProbFloor));
    dlogits(label, b) -= 1.0;
  }
  dlogits /= static_cast<double>(B);
  BatchGradient out;
  out.mean_loss = total / static_cast<double>(B);
  out.grad = run_backward(model, tr, dlogits);
  return out;
}

Parameters backward(const TemporalModel& model, const features::FeatureSequence& fs, int label) {
  Trace tr;
  const features::FeatureSequence* one[] = {&fs};
  run_forward(model, one, 0.0, nullptr, tr);
  MatrixXd dlogits = tr.head.probs;
  dlogits(label, 0) -= 1.0;
  return run_backward(model, tr, dlogits);
}

// ---------------------------------------------------------------------------

AdamState AdamState::for_params(const Parameters& p) { return AdamState{p.zeros_like(), p.zeros_like()}; }

void adam_step(Parameters& params, const Parameters& grads, AdamState& state, long step, const TrainConfig& tc) {
  if (step < 1) throw std::invalid_argument("Adam step index is 1-based");
  const auto p = tensors(params);
  const auto g = tensors(grads);
  const auto m = tensors(state.m);
  const auto v = tensors(state.v);
  if (p.size() != g.size() || p.size() != m.size() || p.size() != v.size()) {
    throw std::invalid_argument("parameter sets differ in structure");
  }
  const double c1 = 1.0 - std::pow(tc.beta1, static_cast<double>(step));
  const double c2 = 1.0 - std::pow(tc.beta2, static_cast<double>(step));
  for (std::size_t k = 0; k < p.size(); ++k) {
    auto mk = m[k]->array();
    auto vk = v[k]->array();
    const auto gk = g[k]->array();
    mk = tc.beta1 * mk + (1.0 - tc.beta1) * gk;
    vk = tc.beta2 * vk + (1.0 - tc.beta2) * gk.square();
    p[k]->array() -= tc.learning_rate * (mk / c1) / ((vk / c2).sqrt() + tc.epsilon);
  }
}

double accuracy(const TemporalModel& model, std::span<const features::FeatureSequence> samples) {
  if (samples.empty()) return std::numeric_limits<double>::quiet_NaN();
  std::size_t hits = 0;
  for (const auto& s : samples) {
    if (predict(model, s) == index_of(s.label)) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(samples.size());
}

TrainResult train(const TemporalModel& initial, std::span<const features::FeatureSequence> train_set,
                  const TrainConfig& tc, std::span<const features::FeatureSequence> validation,
                  const EpochCallback& on_epoch) {
  tc.validate();
  if (train_set.empty()) throw DataError("training set is empty");

  TrainResult res{initial, {}, 0};
  TemporalModel model = initial;
  AdamState state = AdamState::for_params(model.params);
  Rng shuffle_rng(derive_seed(tc.seed, "shuffle"));
  Rng dropout_rng(derive_seed(tc.seed, "dropout"));
  const std::size_t n = train_set.size();
  const auto bs = static_cast<std::size_t>(tc.batch_size);
  double best_acc = -1.0;
  long step = 0;

  std::vector<std::size_t> order(n);
  std::vector<const features::FeatureSequence*> batch;
  for (int epoch = 1; epoch <= tc.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    double total = 0.0;
    for (std::size_t start = 0; start < n; start += bs) {
      batch.clear();
      for (std::size_t k = start; k < std::min(n, start + bs); ++k) batch.push_back(&train_set[order[k]]);
      auto bg = batch_gradient(model, batch, tc.recurrent_dropout, dropout_rng);
      if (!std::isfinite(bg.mean_loss) || !bg.grad.all_finite()) {
        throw NumericError("non-finite loss in epoch " + std::to_string(epoch));
      }
      total += bg.mean_loss * static_cast<double>(batch.size());
      adam_step(model.params, bg.grad, state, ++step, tc);
    }
    EpochRecord rec{epoch, total / static_cast<double>(n), accuracy(model, validation)};
    if (!validation.empty() && rec.val_acc > best_acc) {
      best_acc = rec.val_acc;
      res.model = model;
      res.best_epoch = epoch;
    }
    res.log.push_back(rec);
    if (on_epoch) on_epoch(rec);
  }
  if (validation.empty() && tc.epochs > 0) {
    res.model = model;
    res.best_epoch = tc.epochs;
  }
  return res;
}

// ---------------------------------------------------------------------------

namespace {
constexpr std::uint32_t kCheckpointMagic = 0x4b434754;  // bytes "TGCK"
constexpr std::uint32_t kCheckpointVersion = 1;
}  // namespace

void save_checkpoint(std::ostream& out, const TemporalModel& model) {
  const auto& c = model.config;
  binary::put_u32(out, kCheckpointMagic);
  binary::put_u32(out, kCheckpointVersion);
  binary::put_u8(out, static_cast<std::uint8_t>(c.cell));
  binary::put_u32(out, static_cast<std::uint32_t>(c.layer_sizes[0]));
  binary::put_u32(out, static_cast<std::uint32_t>(c.layer_sizes[1]));
  binary::put_u8(out, c.attention ? 1 : 0);
  binary::put_u32(out, static_cast<std::uint32_t>(c.dense_units));
  binary::put_u32(out, static_cast<std::uint32_t>(c.num_classes));
  binary::put_u32(out, static_cast<std::uint32_t>(c.input_dim));
  const auto ts = tensors(model.params);
  binary::put_u32(out, static_cast<std::uint32_t>(ts.size()));
  for (const auto* m : ts) {
    binary::put_u32(out, static_cast<std::uint32_t>(m->rows()));
    binary::put_u32(out, static_cast<std::uint32_t>(m->cols()));
    // row-major, matching the (rows, cols) header
    for (Eigen::Index r = 0; r < m->rows(); ++r) {
      for (Eigen::Index col = 0; col < m->cols(); ++col) binary::put_f64(out, (*m)(r, col));
    }
  }
}

TemporalModel load_checkpoint(std::istream& in) {
  if (binary::get_u32(in) != kCheckpointMagic) throw DataError("not a model checkpoint");
  if (const auto v = binary::get_u32(in); v != kCheckpointVersion) {
    throw DataError("unsupported checkpoint version " + std::to_string(v));
  }
  TemporalModelConfig c;
  const auto cell = binary::get_u8(in);
  if (cell > 2) throw DataError("checkpoint has unknown cell type");
  c.cell = static_cast<CellType>(cell);
  c.layer_sizes[0] = static_cast<int>(binary::get_u32(in));
  c.layer_sizes[1] = static_cast<int>(binary::get_u32(in));
  c.attention = binary::get_u8(in) != 0;
  c.dense_units = static_cast<int>(binary::get_u32(in));
  c.num_classes = static_cast<int>(binary::get_u32(in));
  c.input_dim = static_cast<int>(binary::get_u32(in));
  try {
    c.validate();
  } catch (const std::invalid_argument& e) {
    throw DataError(std::string("checkpoint config invalid: ") + e.what());
  }
  TemporalModel model = TemporalModel::zeros(c);
  const auto ts = tensors(model.params);
  if (binary::get_u32(in) != ts.size()) throw DataError("checkpoint tensor count mismatch");
  for (auto* m : ts) {
    const auto rows = binary::get_u32(in);
    const auto cols = binary::get_u32(in);
    if (rows != m->rows() || cols != m->cols()) throw DataError("checkpoint tensor shape mismatch");
    for (Eigen::Index r = 0; r < m->rows(); ++r) {
      for (Eigen::Index col = 0; col < m->cols(); ++col) (*m)(r, col) = binary::get_f64(in);
    }
  }
  binary::expect_end(in);
  if (!model.params.all_finite()) throw DataError("checkpoint contains non-finite parameters");
  return model;
}

void write_training_log(std::ostream& out, const std::vector<EpochRecord>& log) {
  out << "epoch,train_loss,val_acc\n";
  for (const auto& r : log) {
    out << r.epoch << ',' << text::format_double(r.train_loss) << ','
        << (std::isnan(r.val_acc) ? std::string("nan") : text::format_double(r.val_acc)) << '\n';
  }
}

}  // namespace tgraph::neural
