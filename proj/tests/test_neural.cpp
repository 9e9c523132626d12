#include <doctest.h>

#include <cmath>
#include <random>
#include <sstream>

#include "oracles.hpp"
#include "tgraph/neural.hpp"

using namespace tgraph;
using namespace tgraph::neural;

namespace {

RecurrentLayer random_layer(CellType cell, int D, int H, std::mt19937_64& rng, double scale = 0.8) {
  TemporalModelConfig cfg;
  cfg.cell = cell;
  cfg.input_dim = D;
  cfg.layer_sizes = {H, H};
  auto layer = TemporalModel::zeros(cfg).params.layers[0];
  std::uniform_real_distribution<double> u(-scale, scale);
  for (auto& g : layer.gates) {
    for (MatrixXd* m : {&g.w, &g.u, &g.b}) {
      for (Eigen::Index i = 0; i < m->size(); ++i) m->data()[i] = u(rng);
    }
  }
  return layer;
}

VectorXd random_vec(int n, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  VectorXd v(n);
  for (int i = 0; i < n; ++i) v(i) = u(rng);
  return v;
}

TemporalModelConfig tiny(CellType cell, bool attn, int dense = -1) {
  TemporalModelConfig c;
  c.cell = cell;
  c.layer_sizes = {3, 2};
  c.attention = attn;
  c.dense_units = dense >= 0 ? dense : (attn ? 4 : 0);
  c.input_dim = 5;
  return c;
}

double max_abs_diff(const VectorXd& a, const VectorXd& b) { return (a - b).cwiseAbs().maxCoeff(); }

}  // namespace

TEST_CASE("gru_step closed forms") {
  std::mt19937_64 rng(1);
  TemporalModelConfig cfg;
  cfg.input_dim = 3;
  cfg.layer_sizes = {4, 4};
  const auto zero = TemporalModel::zeros(cfg).params.layers[0];
  const VectorXd h = random_vec(4, rng);
  CHECK(max_abs_diff(gru_step(random_vec(3, rng), h, zero), 0.5 * h) == 0.0);

  auto only_w = zero;
  std::uniform_real_distribution<double> u(-1, 1);
  for (auto& g : only_w.gates) {
    for (Eigen::Index i = 0; i < g.w.size(); ++i) g.w.data()[i] = u(rng);
  }
  const VectorXd x = random_vec(3, rng);
  VectorXd expect(4);
  for (int j = 0; j < 4; ++j) {
    expect(j) = oracle::sigmoid(only_w.gates[0].w.row(j).dot(x)) * std::tanh(only_w.gates[2].w.row(j).dot(x));
  }
  CHECK(max_abs_diff(gru_step(x, VectorXd::Zero(4), only_w), expect) < 1e-15);
  CHECK_THROWS_AS(gru_step(random_vec(2, rng), h, zero), std::invalid_argument);
}

TEST_CASE("cell steps match scalar oracles") {
  std::mt19937_64 rng(2);
  for (int trial = 0; trial < 100; ++trial) {
    const int D = 1 + trial % 6, H = 1 + (trial * 7) % 5;
    const VectorXd x = random_vec(D, rng);
    const VectorXd h = random_vec(H, rng);
    const auto g = random_layer(CellType::gru, D, H, rng);
    CHECK(max_abs_diff(gru_step(x, h, g), oracle::gru(x, h, g)) < 1e-12);
    const auto r = random_layer(CellType::rnn, D, H, rng);
    CHECK(max_abs_diff(rnn_step(x, h, r), oracle::rnn(x, h, r)) < 1e-12);
    const auto l = random_layer(CellType::lstm, D, H, rng);
    const LstmState s{h, random_vec(H, rng)};
    const auto got = lstm_step(x, s, l);
    const auto want = oracle::lstm(x, s, l);
    CHECK(max_abs_diff(got.h, want.h) < 1e-12);
    CHECK(max_abs_diff(got.c, want.c) < 1e-12);
  }
}

TEST_CASE("gru update gate closing pins the state") {
  std::mt19937_64 rng(3);
  auto layer = random_layer(CellType::gru, 3, 4, rng);
  const VectorXd x = random_vec(3, rng);
  const VectorXd h = random_vec(4, rng);
  double prev = std::numeric_limits<double>::infinity();
  for (double bias = 0.0; bias >= -40.0; bias -= 4.0) {
    layer.gates[0].b.setConstant(bias);
    const double gap = max_abs_diff(gru_step(x, h, layer), h);
    CHECK(gap < prev);
    prev = gap;
  }
  CHECK(prev < 1e-15);
}

TEST_CASE("lstm and rnn closed forms") {
  std::mt19937_64 rng(4);
  TemporalModelConfig cfg;
  cfg.cell = CellType::lstm;
  cfg.input_dim = 3;
  cfg.layer_sizes = {2, 2};
  auto l = TemporalModel::zeros(cfg).params.layers[0];
  const VectorXd x = random_vec(3, rng);
  const auto zero = lstm_step(x, {VectorXd::Zero(2), VectorXd::Zero(2)}, l);
  CHECK(zero.h.isZero(0.0));
  CHECK(zero.c.isZero(0.0));

  l.gates[0].b.setConstant(-1e3);  // input gate shut
  l.gates[1].b.setConstant(1e3);   // forget gate open
  const LstmState s{random_vec(2, rng), random_vec(2, rng)};
  CHECK(lstm_step(x, s, l).c == s.c);

  cfg.cell = CellType::rnn;
  auto r = TemporalModel::zeros(cfg).params.layers[0];
  CHECK(rnn_step(x, random_vec(2, rng), r).isZero(0.0));
  r = random_layer(CellType::rnn, 3, 2, rng);
  r.gates[0].u.setZero();
  CHECK(rnn_step(x, random_vec(2, rng), r) == rnn_step(x, random_vec(2, rng), r));
}

TEST_CASE("attention") {
  std::mt19937_64 rng(5);
  AttentionParams p{MatrixXd::Random(4, 3), MatrixXd::Random(4, 1)};
  const VectorXd h1 = random_vec(3, rng);
  const auto one = attention(MatrixXd(h1), p);
  CHECK(one.alpha.size() == 1);
  CHECK(one.alpha(0) == 1.0);
  CHECK(one.context == h1);

  MatrixXd same(3, 6);
  for (int t = 0; t < 6; ++t) same.col(t) = h1;
  CHECK(max_abs_diff(attention(same, p).context, h1) < 1e-15);

  for (int trial = 0; trial < 20; ++trial) {
    const int T = 1 + trial % 9;
    MatrixXd hs(3, T);
    std::vector<VectorXd> cols;
    for (int t = 0; t < T; ++t) {
      cols.push_back(random_vec(3, rng));
      hs.col(t) = cols.back();
    }
    const auto got = attention(hs, p);
    const auto [ctx, alpha] = oracle::attention(cols, p);
    CHECK(max_abs_diff(got.alpha, alpha) < 1e-12);
    CHECK(max_abs_diff(got.context, ctx) < 1e-12);
    CHECK(std::abs(got.alpha.sum() - 1.0) < 1e-12);
  }
}

TEST_CASE("softmax and loss") {
  std::mt19937_64 rng(6);
  for (int trial = 0; trial < 50; ++trial) {
    const VectorXd l = 10.0 * random_vec(3, rng);
    const VectorXd p = softmax(l);
    CHECK(std::abs(p.sum() - 1.0) < 1e-12);
    const VectorXd shifted = softmax((l.array() + 123.0).matrix());
    CHECK(max_abs_diff(p, shifted) < 1e-12);
    const int label = trial % 3;
    CHECK(loss(p, label) == doctest::Approx(-std::log(p(label))).epsilon(1e-14));
  }
  CHECK(loss(VectorXd::Unit(3, 1), 1) == 0.0);
  CHECK(loss(VectorXd::Constant(3, 1.0 / 3.0), 0) == doctest::Approx(std::log(3.0)));
  CHECK(loss(VectorXd::Unit(3, 1), 0) == doctest::Approx(-std::log(1e-12)));
  CHECK_THROWS_AS(loss(VectorXd::Unit(3, 1), 3), std::invalid_argument);
}

TEST_CASE("forward pass") {
  std::mt19937_64 rng(7);
  const auto fs = oracle::random_sequence(rng, 4, 5, TrafficState::neutral);
  for (auto cell : {CellType::gru, CellType::lstm, CellType::rnn}) {
    for (bool attn : {false, true}) {
      const auto cfg = tiny(cell, attn);
      const auto zero = TemporalModel::zeros(cfg);
      const VectorXd p0 = forward(zero, fs);
      CHECK(max_abs_diff(p0, VectorXd::Constant(3, 1.0 / 3.0)) < 1e-15);
      for (std::uint64_t seed = 0; seed < 5; ++seed) {
        const auto m = oracle::random_model(cfg, seed * 31 + 1);
        const VectorXd p = forward(m, fs);
        CHECK(max_abs_diff(p, oracle::forward(m, fs)) < 1e-12);
        CHECK(std::abs(p.sum() - 1.0) < 1e-12);
        CHECK((p.array() > 0.0).all());
        auto copy = fs;
        CHECK(forward(m, copy) == p);
        Rng r(seed);
        CHECK(forward(m, fs, true, 0.0, r) == p);
      }
    }
  }
}

TEST_CASE("recurrent dropout only acts in train mode") {
  std::mt19937_64 rng(8);
  const auto fs = oracle::random_sequence(rng, 6, 5, TrafficState::clumping);
  const auto m = oracle::random_model(tiny(CellType::gru, true), 9);
  Rng a(1), b(1), c(2);
  const VectorXd inf = forward(m, fs);
  CHECK(forward(m, fs, false, 0.6, a) == inf);
  const VectorXd t1 = forward(m, fs, true, 0.6, b);
  const VectorXd t2 = forward(m, fs, true, 0.6, c);
  CHECK(std::abs(t1.sum() - 1.0) < 1e-12);
  CHECK(max_abs_diff(t1, inf) > 0.0);
  CHECK(max_abs_diff(t1, t2) > 0.0);
}

TEST_CASE("backward closed forms") {
  const auto cfg = tiny(CellType::gru, false);
  const auto zero = TemporalModel::zeros(cfg);
  features::FeatureSequence fs{"z", TrafficState::unclumping, 4, 5, std::vector<double>(20, 0.0)};
  const auto g = backward(zero, fs, index_of(fs.label));
  CHECK(g.output.b(0, 0) == doctest::Approx(1.0 / 3.0));
  CHECK(g.output.b(1, 0) == doctest::Approx(1.0 / 3.0));
  CHECK(g.output.b(2, 0) == doctest::Approx(1.0 / 3.0 - 1.0));
  for (const auto& layer : g.layers) {
    for (const auto& gate : layer.gates) {
      CHECK(gate.w.isZero(0.0));
      CHECK(gate.u.isZero(0.0));
    }
  }
  CHECK_FALSE(g.attention.has_value());

  // A dead ReLU layer cuts every path below it.
  std::mt19937_64 rng(9);
  auto m = oracle::random_model(tiny(CellType::lstm, true), 10);
  m.params.hidden->b.setConstant(-100.0);
  const auto x = oracle::random_sequence(rng, 4, 5, TrafficState::neutral);
  const auto gd = backward(m, x, 0);
  CHECK(gd.hidden->w.isZero(0.0));
  CHECK(gd.attention->w.isZero(0.0));
  CHECK(gd.attention->v.isZero(0.0));
  for (const auto& layer : gd.layers) {
    for (const auto& gate : layer.gates) CHECK(gate.w.isZero(0.0));
  }
  CHECK_FALSE(gd.output.b.isZero(0.0));
}

TEST_CASE("gradients match central differences") {
  std::mt19937_64 rng(10);
  for (auto cell : {CellType::gru, CellType::lstm, CellType::rnn}) {
    for (bool attn : {false, true}) {
      for (int dense : {0, 4}) {
        if (attn && dense == 0) continue;
        for (std::uint64_t seed = 0; seed < 10; ++seed) {
          const auto m = oracle::random_model(tiny(cell, attn, dense), 100 + seed);
          const auto fs = oracle::random_sequence(rng, 4, 5, state_from_index(static_cast<int>(seed % 3)));
          const auto r = oracle::check_gradients(m, fs);
          CAPTURE(cell_name(cell));
          CAPTURE(attn);
          CAPTURE(dense);
          CHECK(r.max_rel_error < 1e-4);
        }
      }
    }
  }
}

TEST_CASE("batch gradient is the mean of per-sample gradients") {
  std::mt19937_64 rng(11);
  const auto m = oracle::random_model(tiny(CellType::gru, true), 12);
  std::vector<features::FeatureSequence> data;
  for (int i = 0; i < 5; ++i) data.push_back(oracle::random_sequence(rng, 4, 5, state_from_index(i % 3)));
  std::vector<const features::FeatureSequence*> batch;
  for (const auto& d : data) batch.push_back(&d);
  Rng r(0);
  const auto bg = batch_gradient(m, batch, 0.0, r);

  auto sum = m.params.zeros_like();
  double mean_loss = 0.0;
  for (const auto& d : data) {
    const auto g = backward(m, d, index_of(d.label));
    std::vector<const MatrixXd*> gs;
    g.for_each([&](const std::string&, const MatrixXd& t) { gs.push_back(&t); });
    std::size_t k = 0;
    sum.for_each([&](const std::string&, MatrixXd& t) { t += *gs[k++] / 5.0; });
    mean_loss += loss(forward(m, d), index_of(d.label)) / 5.0;
  }
  CHECK(bg.mean_loss == doctest::Approx(mean_loss).epsilon(1e-12));
  std::vector<const MatrixXd*> want;
  sum.for_each([&](const std::string&, const MatrixXd& t) { want.push_back(&t); });
  std::size_t k = 0;
  bg.grad.for_each([&](const std::string& name, const MatrixXd& t) {
    CAPTURE(name);
    CHECK((t - *want[k++]).cwiseAbs().maxCoeff() < 1e-12);
  });

  // Inference of one sequence does not depend on its batch mates.
  for (const auto& d : data) {
    const features::FeatureSequence* one[] = {&d};
    Rng r1(0);
    CHECK(batch_gradient(m, one, 0.0, r1).mean_loss == doctest::Approx(loss(forward(m, d), index_of(d.label))));
  }
}

TEST_CASE("adam") {
  TrainConfig tc;
  TemporalModelConfig cfg = tiny(CellType::rnn, false);
  auto m = oracle::random_model(cfg, 13);
  const auto before = m.params;
  auto state = AdamState::for_params(m.params);
  adam_step(m.params, m.params.zeros_like(), state, 1, tc);
  std::vector<const MatrixXd*> b;
  before.for_each([&](const std::string&, const MatrixXd& t) { b.push_back(&t); });
  std::size_t k = 0;
  m.params.for_each([&](const std::string&, const MatrixXd& t) { CHECK(t == *b[k++]); });

  // Single scalar parameter seen through the output bias: g = 1 at t = 1.
  auto grads = m.params.zeros_like();
  grads.output.b(0, 0) = 1.0;
  const double p0 = m.params.output.b(0, 0);
  adam_step(m.params, grads, state, 1, tc);
  const double first = p0 - m.params.output.b(0, 0);
  CHECK(first == doctest::Approx(tc.learning_rate / (1.0 + tc.epsilon)).epsilon(1e-12));

  // Second identical gradient against a hand-rolled two-step recursion.
  adam_step(m.params, grads, state, 2, tc);
  double mo = 0, vo = 0, p = p0;
  for (int t = 1; t <= 2; ++t) {
    mo = tc.beta1 * mo + (1 - tc.beta1) * 1.0;
    vo = tc.beta2 * vo + (1 - tc.beta2) * 1.0;
    const double mh = mo / (1 - std::pow(tc.beta1, t));
    const double vh = vo / (1 - std::pow(tc.beta2, t));
    p -= tc.learning_rate * mh / (std::sqrt(vh) + tc.epsilon);
  }
  CHECK(m.params.output.b(0, 0) == doctest::Approx(p).epsilon(1e-14));
  CHECK_THROWS_AS(adam_step(m.params, grads, state, 0, tc), std::invalid_argument);
}

TEST_CASE("initialization") {
  for (auto cell : {CellType::gru, CellType::lstm, CellType::rnn}) {
    TemporalModelConfig cfg;
    cfg.cell = cell;
    cfg.layer_sizes = {20, 10};
    cfg.attention = true;
    cfg.dense_units = 30;
    const auto m = TemporalModel::initialize(cfg, 42);
    CHECK(m.params.count() > 0);
    for (std::size_t li = 0; li < 2; ++li) {
      const auto& layer = m.params.layers[li];
      for (std::size_t gi = 0; gi < layer.gates.size(); ++gi) {
        const auto& g = layer.gates[gi];
        const int H = static_cast<int>(g.u.rows());
        CHECK((g.u.transpose() * g.u - MatrixXd::Identity(H, H)).cwiseAbs().maxCoeff() < 1e-12);
        const double lim = std::sqrt(6.0 / static_cast<double>(g.w.rows() + g.w.cols()));
        CHECK(g.w.cwiseAbs().maxCoeff() <= lim);
        const double bias = (cell == CellType::lstm && gi == 1) ? 1.0 : 0.0;
        CHECK((g.b.array() == bias).all());
      }
    }
    const auto again = TemporalModel::initialize(cfg, 42);
    CHECK(again.params.layers[1].gates[0].u == m.params.layers[1].gates[0].u);
    const auto other = TemporalModel::initialize(cfg, 43);
    CHECK(other.params.layers[1].gates[0].u != m.params.layers[1].gates[0].u);
  }
}

TEST_CASE("training") {
  std::mt19937_64 rng(14);
  std::vector<features::FeatureSequence> data;
  for (int i = 0; i < 12; ++i) data.push_back(oracle::random_sequence(rng, 4, 5, state_from_index(i % 3)));
  const auto init = TemporalModel::initialize(tiny(CellType::gru, true), 15);
  TrainConfig tc;
  tc.epochs = 3;
  tc.batch_size = 5;
  tc.seed = 7;

  SUBCASE("lr 0 leaves parameters alone") {
    auto t0 = tc;
    t0.learning_rate = 0.0;
    const auto res = train(init, data, t0, {});
    std::vector<const MatrixXd*> a;
    init.params.for_each([&](const std::string&, const MatrixXd& t) { a.push_back(&t); });
    std::size_t k = 0;
    res.model.params.for_each([&](const std::string&, const MatrixXd& t) { CHECK(t == *a[k++]); });
  }
  SUBCASE("one step on one sample lowers its loss") {
    auto t1 = tc;
    t1.epochs = 1;
    t1.recurrent_dropout = 0.0;
    const std::vector<features::FeatureSequence> one = {data[0]};
    const auto res = train(init, one, t1, {});
    const int y = index_of(data[0].label);
    CHECK(loss(forward(res.model, data[0]), y) < loss(forward(init, data[0]), y));
  }
  SUBCASE("same seed, same log") {
    const std::vector<features::FeatureSequence> val(data.begin(), data.begin() + 3);
    const auto a = train(init, data, tc, val);
    const auto b = train(init, data, tc, val);
    REQUIRE(a.log.size() == 3);
    std::ostringstream la, lb;
    write_training_log(la, a.log);
    write_training_log(lb, b.log);
    CHECK(la.str() == lb.str());
    std::ostringstream ca, cb;
    save_checkpoint(ca, a.model);
    save_checkpoint(cb, b.model);
    CHECK(ca.str() == cb.str());
    CHECK(a.best_epoch >= 1);
  }
  SUBCASE("no validation set logs NaN and keeps the last epoch") {
    const auto res = train(init, data, tc, {});
    CHECK(std::isnan(res.log.back().val_acc));
    CHECK(res.best_epoch == 3);
  }
  SUBCASE("zero epochs returns the initial model") {
    auto t0 = tc;
    t0.epochs = 0;
    const auto res = train(init, data, t0, data);
    CHECK(res.log.empty());
    CHECK(res.best_epoch == 0);
  }
  SUBCASE("errors") {
    CHECK_THROWS_AS(train(init, {}, tc, {}), DataError);
    auto bad = data;
    bad[2].data[3] = std::nan("");
    CHECK_THROWS_AS(train(init, bad, tc, {}), NumericError);
    auto neg = tc;
    neg.batch_size = 0;
    CHECK_THROWS_AS(train(init, data, neg, {}), std::invalid_argument);
  }
}

TEST_CASE("checkpoints round-trip") {
  for (auto cell : {CellType::gru, CellType::lstm, CellType::rnn}) {
    for (bool attn : {false, true}) {
      const auto m = oracle::random_model(tiny(cell, attn), 16);
      std::stringstream io;
      save_checkpoint(io, m);
      const std::string bytes = io.str();
      std::istringstream in(bytes);
      const auto back = load_checkpoint(in);
      CHECK(back.config == m.config);
      std::ostringstream again;
      save_checkpoint(again, back);
      CHECK(again.str() == bytes);
      std::istringstream cut(bytes.substr(0, bytes.size() / 2));
      CHECK_THROWS_AS(load_checkpoint(cut), DataError);
    }
  }
}
