#pragma once

// Recurrent sequence classifiers (GRU / LSTM / vanilla RNN, two stacked
// layers, optional additive attention and ReLU dense layer, softmax head)
// with hand-written backpropagation through time and Adam.

#include <Eigen/Dense>
#include <array>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "tgraph/features.hpp"

namespace tgraph::neural {

using Eigen::MatrixXd;
using Eigen::VectorXd;
using Rng = std::mt19937_64;

enum class CellType : std::uint8_t { gru = 0, lstm = 1, rnn = 2 };

std::string_view cell_name(CellType c);

struct TemporalModelConfig {
  CellType cell = CellType::gru;
  std::array<int, 2> layer_sizes{100, 50};
  bool attention = false;
  int dense_units = 0;  // 0: softmax directly on the recurrent summary
  int num_classes = kNumStates;
  int input_dim = static_cast<int>(features::kDefaultFeatureDim);

  void validate() const;
  friend bool operator==(const TemporalModelConfig&, const TemporalModelConfig&) = default;
};

struct TrainConfig {
  double learning_rate = 0.001;
  int epochs = 300;
  int batch_size = 32;
  double recurrent_dropout = 0.6;  // probability of dropping a unit
  std::uint64_t seed = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;

  void validate() const;
};

// Input kernel w (H x D), recurrent kernel u (H x H) and bias b (H x 1) of
// one gate. Gate order: GRU {update z, reset r, candidate h}; LSTM {input,
// forget, cell, output}; RNN {h}.
struct Gate {
  MatrixXd w;
  MatrixXd u;
  MatrixXd b;
};

struct RecurrentLayer {
  CellType cell = CellType::gru;
  std::vector<Gate> gates;

  int units() const { return static_cast<int>(gates.front().u.rows()); }
  int input_dim() const { return static_cast<int>(gates.front().w.cols()); }
};

// score_t = v' tanh(w h_t)
struct AttentionParams {
  MatrixXd w;  // A x H
  MatrixXd v;  // A x 1
};

struct DenseParams {
  MatrixXd w;  // out x in
  MatrixXd b;  // out x 1
};

// Every trainable tensor of a model; also used for gradients and Adam moments.
struct Parameters {
  std::array<RecurrentLayer, 2> layers;
  std::optional<AttentionParams> attention;
  std::optional<DenseParams> hidden;
  DenseParams output;

  // Visits tensors in declaration order: per layer all input kernels, all
  // recurrent kernels, all biases; then attention (w, v), hidden, output.
  void for_each(const std::function<void(const std::string&, MatrixXd&)>& f);
  void for_each(const std::function<void(const std::string&, const MatrixXd&)>& f) const;

  Parameters zeros_like() const;
  std::size_t count() const;
  bool all_finite() const;
};

struct TemporalModel {
  TemporalModelConfig config;
  Parameters params;

  // Glorot-uniform input kernels, orthogonal recurrent kernels, zero biases
  // (LSTM forget bias 1).
  static TemporalModel initialize(const TemporalModelConfig& config, std::uint64_t seed);
  // Same shapes, every value zero.
  static TemporalModel zeros(const TemporalModelConfig& config);
};

// --- single steps -----------------------------------------------------------

double sigmoid(double v);

VectorXd gru_step(const VectorXd& x, const VectorXd& h_prev, const RecurrentLayer& layer);

struct LstmState {
  VectorXd h;
  VectorXd c;
};
LstmState lstm_step(const VectorXd& x, const LstmState& prev, const RecurrentLayer& layer);

VectorXd rnn_step(const VectorXd& x, const VectorXd& h_prev, const RecurrentLayer& layer);

struct AttentionResult {
  VectorXd context;
  VectorXd alpha;  // one weight per step, sums to 1
};
// hs is H x T, one column per step.
AttentionResult attention(const MatrixXd& hs, const AttentionParams& p);

VectorXd softmax(const VectorXd& logits);

// --- whole model ----------------------------------------------------------

// Inference: no dropout, deterministic.
VectorXd forward(const TemporalModel& model, const features::FeatureSequence& fs);
// train_mode draws one recurrent keep-mask per layer for this sequence.
VectorXd forward(const TemporalModel& model, const features::FeatureSequence& fs, bool train_mode,
                 double recurrent_dropout, Rng& rng);

int predict(const TemporalModel& model, const features::FeatureSequence& fs);

// Cross-entropy with the probability floored at 1e-12.
double loss(const VectorXd& probs, int label);

// Exact gradient of loss(forward(model, fs), label) in inference mode.
Parameters backward(const TemporalModel& model, const features::FeatureSequence& fs, int label);

struct BatchGradient {
  double mean_loss = 0.0;
  Parameters grad;  // gradient of the mean loss
};
// Mean loss and its gradient over a batch; recurrent_dropout > 0 draws
// per-sequence masks from rng.
BatchGradient batch_gradient(const TemporalModel& model,
                             std::span<const features::FeatureSequence* const> batch,
                             double recurrent_dropout, Rng& rng);

// --- optimization -----------------------------------------------------------

struct AdamState {
  Parameters m;
  Parameters v;

  static AdamState for_params(const Parameters& p);
};

// One Adam update with bias correction; step is 1-based.
void adam_step(Parameters& params, const Parameters& grads, AdamState& state, long step,
               const TrainConfig& tc);

struct EpochRecord {
  int epoch = 0;
  double train_loss = 0.0;
  double val_acc = 0.0;  // NaN when no validation set was given
};

struct TrainResult {
  TemporalModel model;  // parameters of the best validation epoch
  std::vector<EpochRecord> log;
  int best_epoch = 0;  // 0 when the initial parameters were kept
};

using EpochCallback = std::function<void(const EpochRecord&)>;

// Seeded per-epoch shuffling, mini-batches (last partial batch kept), Adam.
// Throws NumericError on a non-finite loss.
TrainResult train(const TemporalModel& initial, std::span<const features::FeatureSequence> train_set,
                  const TrainConfig& tc, std::span<const features::FeatureSequence> validation,
                  const EpochCallback& on_epoch = {});

double accuracy(const TemporalModel& model, std::span<const features::FeatureSequence> samples);

// --- persistence --------------------------------------------------------------

void save_checkpoint(std::ostream& out, const TemporalModel& model);
TemporalModel load_checkpoint(std::istream& in);

void write_training_log(std::ostream& out, const std::vector<EpochRecord>& log);

}  // namespace tgraph::neural
