#pragma once

#include <array>
#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "tgraph/neural.hpp"

namespace tgraph::harness {

using features::FeatureSequence;

struct SplitSpec {
  double train_frac = 0.70;
  double val_frac = 0.10;
  double test_frac = 0.20;
  std::uint64_t seed = 0;

  void validate() const;
};

struct SplitSizes {
  std::size_t train = 0;
  std::size_t val = 0;
  std::size_t test = 0;
};

// test = round(n * test_frac), val = ceil(n * val_frac), train = the rest.
SplitSizes split_sizes(std::size_t n, const SplitSpec& spec);

struct SplitIndices {
  std::vector<std::size_t> train;
  std::vector<std::size_t> val;
  std::vector<std::size_t> test;
};

// Seeded shuffle and contiguous partition of 0..n-1.
SplitIndices split_indices(std::size_t n, const SplitSpec& spec);
// Same, applied independently within each stratum (items with equal keys);
// strata are processed in order of first appearance.
SplitIndices split_indices(std::span<const std::string> strata, const SplitSpec& spec);

struct DatasetSplit {
  std::vector<FeatureSequence> train;
  std::vector<FeatureSequence> val;
  std::vector<FeatureSequence> test;
};
DatasetSplit split(std::span<const FeatureSequence> dataset, const SplitSpec& spec);

// Rows are true labels, columns predictions, both in (N, C, U) order.
struct ConfusionMatrix {
  std::array<std::array<std::size_t, kNumStates>, kNumStates> counts{};

  void add(int truth, int predicted);
  std::size_t row_sum(int truth) const;
  std::size_t trace() const;
  std::size_t total() const;
};

struct EvalReport {
  std::array<double, kNumStates> per_class{};  // NaN for a class absent from the test set
  double total = 0.0;
  ConfusionMatrix confusion;
};

EvalReport evaluate_predictions(std::span<const int> truth, std::span<const int> predicted);
EvalReport evaluate(const neural::TemporalModel& model, std::span<const FeatureSequence> test);

struct VariantSpec {
  std::string name;
  neural::TemporalModelConfig config;
};

// The seven comparison networks, in reporting order.
const std::vector<std::string>& table_variants();

// Parses names such as "GRU(100,50)" or "LSTM-A(100,50)" (spaces ignored).
// "-A" adds attention followed by a 30-unit ReLU layer; GRU(100,50) also
// carries the 30-unit layer. Throws std::invalid_argument otherwise.
VariantSpec variant_from_name(std::string_view name, int input_dim = static_cast<int>(features::kDefaultFeatureDim));

struct VariantResult {
  std::string name;
  EvalReport report;
  int best_epoch = 0;
};

// Trains every variant on the same split with the same seeds.
std::vector<VariantResult> run_variants(std::span<const FeatureSequence> dataset,
                                        std::span<const std::string> variants, const neural::TrainConfig& tc,
                                        const SplitSpec& spec);

struct Site {
  std::string name;
  std::vector<FeatureSequence> samples;
};

struct LeaveOneOutResult {
  std::vector<std::string> sites;
  // reports[i][j]: trained on site i, tested on site j's test portion
  std::vector<std::vector<EvalReport>> reports;
};

// For each site: train on its own train/val split only, evaluate on every
// site's test portion. Throws DataError for an empty site and logic_error if
// a test sequence id appears among the training ids.
LeaveOneOutResult leave_one_out(std::span<const Site> sites, const VariantSpec& variant,
                                const neural::TrainConfig& tc, const SplitSpec& spec);

// --- reports ------------------------------------------------------------------

void write_results_csv(std::ostream& out, std::span<const VariantResult> rows);
void write_confusion_csv(std::ostream& out, const ConfusionMatrix& cm);
// Row-normalized heat image, `cell` pixels per matrix entry.
void write_confusion_pgm(std::ostream& out, const ConfusionMatrix& cm, std::size_t cell = 32);
void write_loo_accuracy_csv(std::ostream& out, const LeaveOneOutResult& r);

}  // namespace tgraph::harness
