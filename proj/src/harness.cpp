#include "tgraph/harness.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>
#include <ostream>
#include <regex>
#include <set>
#include <stdexcept>

#include "text_util.hpp"

namespace tgraph::harness {

void SplitSpec::validate() const {
  const auto in_unit = [](double f) { return f >= 0.0 && f <= 1.0; };
  if (!in_unit(train_frac) || !in_unit(val_frac) || !in_unit(test_frac) ||
      std::abs(train_frac + val_frac + test_frac - 1.0) > 1e-9) {
    throw std::invalid_argument("split fractions must be in [0, 1] and sum to 1");
  }
}

SplitSizes split_sizes(std::size_t n, const SplitSpec& spec) {
  spec.validate();
  const double nd = static_cast<double>(n);
  SplitSizes s;
  s.test = std::min(n, static_cast<std::size_t>(std::llround(nd * spec.test_frac)));
  // The slack keeps products such as 30 * 0.1 = 3.0000000000000004 at 3.
  s.val = std::min(n - s.test, static_cast<std::size_t>(std::ceil(nd * spec.val_frac - 1e-9)));
  s.train = n - s.test - s.val;
  return s;
}

namespace {

void partition(std::vector<std::size_t> items, const SplitSpec& spec, std::uint64_t stream_seed,
               SplitIndices& out) {
  neural::Rng rng(stream_seed);
  std::shuffle(items.begin(), items.end(), rng);
  const auto sz = split_sizes(items.size(), spec);
  const auto b = items.begin();
  const auto tr_end = b + static_cast<std::ptrdiff_t>(sz.train);
  const auto va_end = tr_end + static_cast<std::ptrdiff_t>(sz.val);
  out.train.insert(out.train.end(), b, tr_end);
  out.val.insert(out.val.end(), tr_end, va_end);
  out.test.insert(out.test.end(), va_end, items.end());
}

}  // namespace

SplitIndices split_indices(std::size_t n, const SplitSpec& spec) {
  std::vector<std::size_t> all(n);
  std::iota(all.begin(), all.end(), std::size_t{0});
  SplitIndices out;
  partition(std::move(all), spec, derive_seed(spec.seed, "split"), out);
  return out;
}

SplitIndices split_indices(std::span<const std::string> strata, const SplitSpec& spec) {
  std::vector<std::string> order;
  std::map<std::string, std::vector<std::size_t>> members;
  for (std::size_t i = 0; i < strata.size(); ++i) {
    auto& m = members[strata[i]];
    if (m.empty()) order.push_back(strata[i]);
    m.push_back(i);
  }
  SplitIndices out;
  for (const auto& key : order) {
    partition(members[key], spec, derive_seed(spec.seed, "split:" + key), out);
  }
  return out;
}

DatasetSplit split(std::span<const FeatureSequence> dataset, const SplitSpec& spec) {
  const auto idx = split_indices(dataset.size(), spec);
  DatasetSplit out;
  for (auto i : idx.train) out.train.push_back(dataset[i]);
  for (auto i : idx.val) out.val.push_back(dataset[i]);
  for (auto i : idx.test) out.test.push_back(dataset[i]);
  return out;
}

// ---------------------------------------------------------------------------

void ConfusionMatrix::add(int truth, int predicted) {
  if (truth < 0 || truth >= kNumStates || predicted < 0 || predicted >= kNumStates) {
    throw std::invalid_argument("class index out of range");
  }
  ++counts[static_cast<std::size_t>(truth)][static_cast<std::size_t>(predicted)];
}

std::size_t ConfusionMatrix::row_sum(int truth) const {
  const auto& row = counts.at(static_cast<std::size_t>(truth));
  return std::accumulate(row.begin(), row.end(), std::size_t{0});
}

std::size_t ConfusionMatrix::trace() const {
  std::size_t t = 0;
  for (std::size_t i = 0; i < counts.size(); ++i) t += counts[i][i];
  return t;
}

std::size_t ConfusionMatrix::total() const {
  std::size_t t = 0;
  for (int i = 0; i < kNumStates; ++i) t += row_sum(i);
  return t;
}

EvalReport evaluate_predictions(std::span<const int> truth, std::span<const int> predicted) {
  if (truth.size() != predicted.size()) throw std::invalid_argument("truth/prediction length mismatch");
  EvalReport r;
  for (std::size_t i = 0; i < truth.size(); ++i) r.confusion.add(truth[i], predicted[i]);
  constexpr double nan = std::numeric_limits<double>::quiet_NaN();
  for (int c = 0; c < kNumStates; ++c) {
    const auto row = r.confusion.row_sum(c);
    r.per_class[static_cast<std::size_t>(c)] =
        row ? static_cast<double>(r.confusion.counts[static_cast<std::size_t>(c)][static_cast<std::size_t>(c)]) /
                  static_cast<double>(row)
            : nan;
  }
  const auto total = r.confusion.total();
  r.total = total ? static_cast<double>(r.confusion.trace()) / static_cast<double>(total) : nan;
  return r;
}

EvalReport evaluate(const neural::TemporalModel& model, std::span<const FeatureSequence> test) {
  std::vector<int> truth;
  std::vector<int> pred;
  truth.reserve(test.size());
  pred.reserve(test.size());
  for (const auto& s : test) {
    truth.push_back(index_of(s.label));
    pred.push_back(neural::predict(model, s));
  }
  return evaluate_predictions(truth, pred);
}

// ---------------------------------------------------------------------------

const std::vector<std::string>& table_variants() {
  static const std::vector<std::string> names = {"GRU(100,50)",    "GRU(50,25)",  "GRU-A(100,50)", "LSTM(100,50)",
                                                 "LSTM-A(100,50)", "RNN(100,50)", "RNN-A(100,50)"};
  return names;
}

VariantSpec variant_from_name(std::string_view name, int input_dim) {
  std::string compact;
  for (char c : name) {
    if (!std::isspace(static_cast<unsigned char>(c))) compact.push_back(static_cast<char>(std::toupper(c)));
  }
  static const std::regex pattern(R"(^(GRU|LSTM|RNN)(-A)?\((\d{1,5}),(\d{1,5})\)$)");
  std::smatch m;
  if (!std::regex_match(compact, m, pattern)) {
    throw std::invalid_argument("unknown variant '" + std::string(name) + "'");
  }
  VariantSpec v;
  v.name = compact;
  auto& c = v.config;
  const auto cell = m[1].str();
  c.cell = cell == "GRU" ? neural::CellType::gru : cell == "LSTM" ? neural::CellType::lstm : neural::CellType::rnn;
  c.attention = m[2].matched;
  c.layer_sizes = {std::stoi(m[3].str()), std::stoi(m[4].str())};
  c.input_dim = input_dim;
  const bool dense_row = c.cell == neural::CellType::gru && !c.attention && c.layer_sizes == std::array<int, 2>{100, 50};
  c.dense_units = (c.attention || dense_row) ? 30 : 0;
  c.validate();
  return v;
}

std::vector<VariantResult> run_variants(std::span<const FeatureSequence> dataset,
                                        std::span<const std::string> variants, const neural::TrainConfig& tc,
                                        const SplitSpec& spec) {
  if (dataset.empty()) throw DataError("dataset is empty");
  const auto parts = split(dataset, spec);
  const int dim = static_cast<int>(dataset.front().dim);
  std::vector<VariantResult> rows;
  for (const auto& name : variants) {
    const auto v = variant_from_name(name, dim);
    const auto init = neural::TemporalModel::initialize(v.config, derive_seed(tc.seed, "init"));
    const auto trained = neural::train(init, parts.train, tc, parts.val);
    rows.push_back({v.name, evaluate(trained.model, parts.test), trained.best_epoch});
  }
  return rows;
}

LeaveOneOutResult leave_one_out(std::span<const Site> sites, const VariantSpec& variant,
                                const neural::TrainConfig& tc, const SplitSpec& spec) {
  LeaveOneOutResult out;
  std::vector<DatasetSplit> parts;
  std::vector<SplitIndices> idx;
  for (const auto& s : sites) {
    if (s.samples.empty()) throw DataError("site '" + s.name + "' has no sequences");
    out.sites.push_back(s.name);
    idx.push_back(split_indices(s.samples.size(), spec));
    DatasetSplit p;
    for (auto i : idx.back().train) p.train.push_back(s.samples[i]);
    for (auto i : idx.back().val) p.val.push_back(s.samples[i]);
    for (auto i : idx.back().test) p.test.push_back(s.samples[i]);
    parts.push_back(std::move(p));
  }
  const auto uid = [&](std::size_t site, std::size_t i) { return sites[site].name + "#" + std::to_string(i); };

  for (std::size_t i = 0; i < sites.size(); ++i) {
    std::set<std::string> train_ids;
    for (auto k : idx[i].train) train_ids.insert(uid(i, k));
    for (auto k : idx[i].val) train_ids.insert(uid(i, k));
    for (std::size_t j = 0; j < sites.size(); ++j) {
      for (auto k : idx[j].test) {
        if (train_ids.count(uid(j, k))) {
          throw std::logic_error("test sequence " + uid(j, k) + " leaked into training data");
        }
      }
    }
    const auto init = neural::TemporalModel::initialize(variant.config, derive_seed(tc.seed, "init"));
    const auto trained = neural::train(init, parts[i].train, tc, parts[i].val);
    std::vector<EvalReport> row;
    for (std::size_t j = 0; j < sites.size(); ++j) row.push_back(evaluate(trained.model, parts[j].test));
    out.reports.push_back(std::move(row));
  }
  return out;
}

// ---------------------------------------------------------------------------

namespace {
std::string percent(double v) { return std::isnan(v) ? "nan" : text::format_fixed(100.0 * v, 2); }
constexpr const char* kShort[] = {"N", "C", "U"};
}  // namespace

void write_results_csv(std::ostream& out, std::span<const VariantResult> rows) {
  out << "variant,neutral,clumping,unclumping,total\n";
  for (const auto& r : rows) {
    out << r.name;
    for (double v : r.report.per_class) out << ',' << percent(v);
    out << ',' << percent(r.report.total) << '\n';
  }
}

void write_confusion_csv(std::ostream& out, const ConfusionMatrix& cm) {
  out << "true\\predicted,N,C,U\n";
  for (int r = 0; r < kNumStates; ++r) {
    out << kShort[r];
    for (int c = 0; c < kNumStates; ++c) out << ',' << cm.counts[static_cast<std::size_t>(r)][static_cast<std::size_t>(c)];
    out << '\n';
  }
}

void write_confusion_pgm(std::ostream& out, const ConfusionMatrix& cm, std::size_t cell) {
  const std::size_t side = kNumStates * cell;
  std::vector<double> px(side * side, 0.0);
  for (int r = 0; r < kNumStates; ++r) {
    const auto row = cm.row_sum(r);
    for (int c = 0; c < kNumStates; ++c) {
      const double v = row ? static_cast<double>(cm.counts[static_cast<std::size_t>(r)][static_cast<std::size_t>(c)]) /
                                 static_cast<double>(row)
                           : 0.0;
      for (std::size_t y = 0; y < cell; ++y) {
        for (std::size_t x = 0; x < cell; ++x) {
          px[(static_cast<std::size_t>(r) * cell + y) * side + static_cast<std::size_t>(c) * cell + x] = v;
        }
      }
    }
  }
  graph::write_pgm(out, side, side, px);
}

void write_loo_accuracy_csv(std::ostream& out, const LeaveOneOutResult& r) {
  out << "trained_on";
  for (const auto& s : r.sites) out << ',' << s;
  out << '\n';
  for (std::size_t i = 0; i < r.sites.size(); ++i) {
    out << r.sites[i];
    for (const auto& rep : r.reports[i]) out << ',' << percent(rep.total);
    out << '\n';
  }
}

}  // namespace tgraph::harness
