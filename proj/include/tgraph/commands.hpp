#pragma once

// Pipeline commands behind the `tgraph` executable. Every command writes its
// outputs plus a manifest.json (config snapshot, input and output SHA-256
// digests, tool version) into its output directory.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "tgraph/features.hpp"
#include "tgraph/neural.hpp"

namespace tgraph::cli {

namespace fs = std::filesystem;

inline constexpr const char* kToolVersion = "0.1.0";
inline constexpr const char* kManifestName = "manifest.json";

struct SynthOptions {
  std::size_t per_class = 5;
  std::uint64_t seed = 1;
  double noise = 0.0;
  int min_users = 20;
  int max_users = 60;
  double duration = 10.0;
  double rate = 5.0;
  fs::path out = "synth_out";
};

struct BuildOptions {
  fs::path in;  // directory holding trajectories.csv, regions.txt, annotations.csv
  double mu = 10.0;
  double rate = 5.0;
  std::size_t min_users = 20;
  std::size_t frames = 50;
  std::size_t canvas = 110;
  std::size_t img = 56;
  std::string resample = "linear";  // or "nearest"
  std::optional<double> frame_rate;  // pixel-schema trajectories only
  fs::path out = "build_out";
};

struct TrainOptions {
  fs::path data;  // features.bin
  std::string variant = "GRU-A(100,50)";
  double lr = 0.001;
  int epochs = 300;
  int batch = 32;
  double dropout = 0.6;
  std::uint64_t seed = 1;
  bool verbose = false;
  fs::path out = "train_out";
};

struct EvalOptions {
  fs::path model;  // model.ckpt
  fs::path data;
  std::string split = "test";  // "test" (same seeded split as training) or "all"
  std::uint64_t seed = 1;
  fs::path out = "eval_out";
};

struct LoioOptions {
  std::vector<fs::path> data;  // one tensor file per site
  std::vector<std::string> names;
  TrainOptions train;          // variant and hyperparameters; data/out unused
  fs::path out = "loio_out";
};

struct VariantsOptions {
  std::vector<std::string> variants;  // empty: all seven
  TrainOptions train;
  fs::path out = "variants_out";
};

struct DumpOptions {
  BuildOptions build;        // input files and ingest/graph settings
  std::size_t sequence = 0;  // index into the extracted sequences
  fs::path out = "dump_out";
};

void cmd_synth(const SynthOptions& o);
void cmd_build(const BuildOptions& o);
void cmd_train(const TrainOptions& o);
void cmd_eval(const EvalOptions& o);
void cmd_loio(const LoioOptions& o);
void cmd_variants(const VariantsOptions& o);
void cmd_dump_adjacency(const DumpOptions& o);

struct ReplayReport {
  std::vector<std::string> mismatched;  // output names whose digests differ
};
// Re-runs the command recorded in a manifest, writing into `out`, and
// compares output digests against the recorded ones.
ReplayReport cmd_replay(const fs::path& manifest, const fs::path& out);

// Hex SHA-256 of a file's bytes.
std::string file_digest(const fs::path& p);

// Reads a tensor file, verifying it against a sibling manifest.json when
// one records its digest.
std::vector<features::FeatureSequence> load_tensors(const fs::path& p);

}  // namespace tgraph::cli
