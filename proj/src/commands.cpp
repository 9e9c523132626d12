#include "tgraph/commands.hpp"

#include <openssl/evp.h>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <json.hpp>
#include <memory>
#include <sstream>
#include <stdexcept>

#include "tgraph/harness.hpp"
#include "tgraph/ingest.hpp"
#include "tgraph/synth.hpp"
#include "text_util.hpp"

namespace tgraph::cli {

using nlohmann::json;

// --- files and digests --------------------------------------------------------

std::string file_digest(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw DataError("cannot open " + p.string());
  std::unique_ptr<EVP_MD_CTX, decltype(&EVP_MD_CTX_free)> ctx(EVP_MD_CTX_new(), EVP_MD_CTX_free);
  if (!ctx || EVP_DigestInit_ex(ctx.get(), EVP_sha256(), nullptr) != 1) {
    throw std::runtime_error("SHA-256 unavailable");
  }
  std::array<char, 1 << 16> buf{};
  while (in) {
    in.read(buf.data(), static_cast<std::streamsize>(buf.size()));
    if (in.gcount() > 0) EVP_DigestUpdate(ctx.get(), buf.data(), static_cast<std::size_t>(in.gcount()));
  }
  std::array<unsigned char, EVP_MAX_MD_SIZE> md{};
  unsigned int len = 0;
  EVP_DigestFinal_ex(ctx.get(), md.data(), &len);
  std::string hex;
  char byte[3];
  for (unsigned int i = 0; i < len; ++i) {
    std::snprintf(byte, sizeof(byte), "%02x", md[i]);
    hex += byte;
  }
  return hex;
}

namespace {

std::ifstream open_in(const fs::path& p, bool binary = false) {
  std::ifstream in(p, binary ? std::ios::binary : std::ios::in);
  if (!in) throw DataError("cannot open " + p.string());
  return in;
}

std::ofstream open_out(const fs::path& p, bool binary = false) {
  std::ofstream out(p, binary ? (std::ios::binary | std::ios::trunc) : std::ios::trunc);
  if (!out) throw DataError("cannot write " + p.string());
  return out;
}

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw DataError("cannot create directory " + dir.string() + ": " + ec.message());
}

class Manifest {
 public:
  Manifest(std::string command, json config) {
    doc_["tool"] = "tgraph";
    doc_["version"] = kToolVersion;
    doc_["command"] = std::move(command);
    doc_["config"] = std::move(config);
    doc_["inputs"] = json::object();
    doc_["outputs"] = json::object();
  }
  void input(const fs::path& p) { doc_["inputs"][p.string()] = file_digest(p); }
  void output(const fs::path& dir, const std::string& name) { doc_["outputs"][name] = file_digest(dir / name); }
  void write(const fs::path& dir) const {
    auto out = open_out(dir / kManifestName);
    out << doc_.dump(2) << '\n';
  }

 private:
  json doc_;
};

json to_json(const SynthOptions& o) {
  return {{"per_class", o.per_class}, {"seed", o.seed},         {"noise", o.noise}, {"min_users", o.min_users},
          {"max_users", o.max_users}, {"duration", o.duration}, {"rate", o.rate}};
}

json to_json(const BuildOptions& o) {
  json j = {{"in", o.in.string()},    {"mu", o.mu},       {"rate", o.rate},          {"min_users", o.min_users},
            {"frames", o.frames},     {"canvas", o.canvas}, {"img", o.img},         {"resample", o.resample}};
  j["frame_rate"] = o.frame_rate ? json(*o.frame_rate) : json(nullptr);
  return j;
}

json train_params_json(const TrainOptions& o) {
  return {{"variant", o.variant}, {"lr", o.lr},           {"epochs", o.epochs},
          {"batch", o.batch},     {"dropout", o.dropout}, {"seed", o.seed}};
}

json to_json(const TrainOptions& o) {
  json j = train_params_json(o);
  j["data"] = o.data.string();
  return j;
}

json to_json(const EvalOptions& o) {
  return {{"model", o.model.string()}, {"data", o.data.string()}, {"split", o.split}, {"seed", o.seed}};
}

SynthOptions synth_from_json(const json& j) {
  SynthOptions o;
  o.per_class = j.at("per_class").get<std::size_t>();
  o.seed = j.at("seed").get<std::uint64_t>();
  o.noise = j.at("noise").get<double>();
  o.min_users = j.at("min_users").get<int>();
  o.max_users = j.at("max_users").get<int>();
  o.duration = j.at("duration").get<double>();
  o.rate = j.at("rate").get<double>();
  return o;
}

BuildOptions build_from_json(const json& j) {
  BuildOptions o;
  o.in = j.at("in").get<std::string>();
  o.mu = j.at("mu").get<double>();
  o.rate = j.at("rate").get<double>();
  o.min_users = j.at("min_users").get<std::size_t>();
  o.frames = j.at("frames").get<std::size_t>();
  o.canvas = j.at("canvas").get<std::size_t>();
  o.img = j.at("img").get<std::size_t>();
  o.resample = j.at("resample").get<std::string>();
  if (!j.at("frame_rate").is_null()) o.frame_rate = j.at("frame_rate").get<double>();
  return o;
}

TrainOptions train_from_json(const json& j) {
  TrainOptions o;
  if (j.contains("data")) o.data = j.at("data").get<std::string>();
  o.variant = j.at("variant").get<std::string>();
  o.lr = j.at("lr").get<double>();
  o.epochs = j.at("epochs").get<int>();
  o.batch = j.at("batch").get<int>();
  o.dropout = j.at("dropout").get<double>();
  o.seed = j.at("seed").get<std::uint64_t>();
  return o;
}

EvalOptions eval_from_json(const json& j) {
  EvalOptions o;
  o.model = j.at("model").get<std::string>();
  o.data = j.at("data").get<std::string>();
  o.split = j.at("split").get<std::string>();
  o.seed = j.at("seed").get<std::uint64_t>();
  return o;
}

neural::TrainConfig train_config(const TrainOptions& o) {
  neural::TrainConfig tc;
  tc.learning_rate = o.lr;
  tc.epochs = o.epochs;
  tc.batch_size = o.batch;
  tc.recurrent_dropout = o.dropout;
  tc.seed = o.seed;
  tc.validate();
  return tc;
}

harness::SplitSpec split_spec(std::uint64_t seed) {
  harness::SplitSpec s;
  s.seed = seed;
  return s;
}

ingest::ResampleMode resample_mode(const std::string& name) {
  if (name == "linear") return ingest::ResampleMode::linear;
  if (name == "nearest") return ingest::ResampleMode::nearest;
  throw std::invalid_argument("unknown resample mode '" + name + "'");
}

std::vector<ingest::RawSequence> ingest_inputs(const BuildOptions& o) {
  auto region_in = open_in(o.in / "regions.txt");
  const auto regions = ingest::parse_regions(region_in);
  ingest::Calibration cal;
  if (regions.meters_per_pixel) cal.meters_per_pixel = *regions.meters_per_pixel;
  auto traj_in = open_in(o.in / "trajectories.csv");
  const auto tracks = ingest::parse_trajectories(traj_in, cal, o.frame_rate);
  auto ann_in = open_in(o.in / "annotations.csv");
  const auto annotations = ingest::parse_annotations(ann_in);
  ingest::ExtractOptions ex;
  ex.rate_hz = o.rate;
  ex.min_users = o.min_users;
  ex.mode = resample_mode(o.resample);
  return ingest::extract_sequences(tracks, regions.regions, annotations, ex);
}

void input_digests(Manifest& m, const BuildOptions& o) {
  for (const char* name : {"trajectories.csv", "regions.txt", "annotations.csv"}) m.input(o.in / name);
}

void write_eval_outputs(const fs::path& dir, const std::string& name, const harness::EvalReport& rep, Manifest& m) {
  {
    auto out = open_out(dir / "report.csv");
    const harness::VariantResult row{name, rep, 0};
    harness::write_results_csv(out, std::span(&row, 1));
  }
  {
    auto out = open_out(dir / "confusion.csv");
    harness::write_confusion_csv(out, rep.confusion);
  }
  {
    auto out = open_out(dir / "confusion.pgm");
    harness::write_confusion_pgm(out, rep.confusion);
  }
  for (const char* f : {"report.csv", "confusion.csv", "confusion.pgm"}) m.output(dir, f);
}

void print_report(const std::string& name, const harness::EvalReport& rep) {
  const auto pct = [](double v) { return std::isnan(v) ? std::string("n/a") : text::format_fixed(100.0 * v, 2) + "%"; };
  std::cout << name << "  neutral " << pct(rep.per_class[0]) << "  clumping " << pct(rep.per_class[1])
            << "  unclumping " << pct(rep.per_class[2]) << "  total " << pct(rep.total) << "\n";
}

}  // namespace

std::vector<features::FeatureSequence> load_tensors(const fs::path& p) {
  const auto sibling = p.parent_path() / kManifestName;
  if (fs::exists(sibling)) {
    json doc;
    try {
      doc = json::parse(open_in(sibling));
    } catch (const json::exception& e) {
      throw DataError("unreadable manifest " + sibling.string() + ": " + e.what());
    }
    const auto name = p.filename().string();
    if (doc.contains("outputs") && doc["outputs"].contains(name)) {
      if (doc["outputs"][name].get<std::string>() != file_digest(p)) {
        throw DataError(p.string() + " does not match the digest recorded in " + sibling.string());
      }
    }
  }
  auto in = open_in(p, true);
  return features::read_tensor_file(in);
}

// --- commands -------------------------------------------------------------------

void cmd_synth(const SynthOptions& o) {
  synth::SynthConfig cfg;
  cfg.min_users = o.min_users;
  cfg.max_users = o.max_users;
  cfg.duration_s = o.duration;
  cfg.rate_hz = o.rate;
  cfg.noise_sigma_m = o.noise;
  const auto seqs = synth::generate_dataset({o.per_class, o.per_class, o.per_class}, cfg, o.seed);
  const auto files = synth::to_files(seqs);

  ensure_dir(o.out);
  {
    auto out = open_out(o.out / "trajectories.csv");
    ingest::write_trajectories(out, files.tracks);
  }
  {
    auto out = open_out(o.out / "regions.txt");
    ingest::write_regions(out, files.regions);
  }
  {
    auto out = open_out(o.out / "annotations.csv");
    ingest::write_annotations(out, files.annotations);
  }
  Manifest m("synth", to_json(o));
  for (const char* f : {"trajectories.csv", "regions.txt", "annotations.csv"}) m.output(o.out, f);
  m.write(o.out);
  std::cout << "wrote " << seqs.size() << " sequences to " << o.out.string() << '\n';
}

void cmd_build(const BuildOptions& o) {
  const auto seqs = ingest_inputs(o);
  features::PipelineConfig pc;
  pc.mu_m = o.mu;
  pc.canvas = o.canvas;
  pc.image_size = o.img;
  pc.frames = o.frames;
  const features::PooledGridExtractor extractor;
  std::vector<features::FeatureSequence> samples;
  samples.reserve(seqs.size());
  for (const auto& s : seqs) samples.push_back(features::build_feature_sequence(s, pc, extractor));

  ensure_dir(o.out);
  {
    auto out = open_out(o.out / "features.bin", true);
    features::write_tensor_file(out, samples, pc.frames, extractor.dim());
  }
  Manifest m("build", to_json(o));
  input_digests(m, o);
  m.output(o.out, "features.bin");
  m.write(o.out);
  std::cout << "built " << samples.size() << " sequences (T=" << pc.frames << ", F=" << extractor.dim() << ")\n";
}

void cmd_train(const TrainOptions& o) {
  const auto data = load_tensors(o.data);
  if (data.empty()) throw DataError(o.data.string() + " holds no sequences");
  const auto tc = train_config(o);
  const auto variant = harness::variant_from_name(o.variant, static_cast<int>(data.front().dim));
  const auto parts = harness::split(data, split_spec(o.seed));
  const auto init = neural::TemporalModel::initialize(variant.config, derive_seed(o.seed, "init"));
  neural::EpochCallback progress;
  if (o.verbose) {
    progress = [](const neural::EpochRecord& r) {
      std::cerr << "epoch " << r.epoch << " loss " << r.train_loss << " val_acc " << r.val_acc << '\n';
    };
  }
  const auto result = neural::train(init, parts.train, tc, parts.val, progress);
  const auto rep = harness::evaluate(result.model, parts.test);

  ensure_dir(o.out);
  {
    auto out = open_out(o.out / "model.ckpt", true);
    neural::save_checkpoint(out, result.model);
  }
  {
    auto out = open_out(o.out / "train_log.csv");
    neural::write_training_log(out, result.log);
  }
  Manifest m("train", to_json(o));
  m.input(o.data);
  m.output(o.out, "model.ckpt");
  m.output(o.out, "train_log.csv");
  write_eval_outputs(o.out, variant.name, rep, m);
  m.write(o.out);
  print_report(variant.name, rep);
}

void cmd_eval(const EvalOptions& o) {
  if (o.split != "test" && o.split != "all") throw std::invalid_argument("--split must be 'test' or 'all'");
  auto model_in = open_in(o.model, true);
  const auto model = neural::load_checkpoint(model_in);
  const auto data = load_tensors(o.data);
  harness::EvalReport rep;
  if (o.split == "all") {
    rep = harness::evaluate(model, data);
  } else {
    rep = harness::evaluate(model, harness::split(data, split_spec(o.seed)).test);
  }
  ensure_dir(o.out);
  Manifest m("eval", to_json(o));
  m.input(o.model);
  m.input(o.data);
  write_eval_outputs(o.out, "model", rep, m);
  m.write(o.out);
  print_report("model", rep);
}

void cmd_loio(const LoioOptions& o) {
  if (o.data.size() < 2) throw std::invalid_argument("leave-one-out needs at least two sites");
  if (!o.names.empty() && o.names.size() != o.data.size()) {
    throw std::invalid_argument("--names must match --data in length");
  }
  std::vector<harness::Site> sites;
  for (std::size_t i = 0; i < o.data.size(); ++i) {
    harness::Site s;
    s.name = o.names.empty() ? "site" + std::to_string(i + 1) : o.names[i];
    s.samples = load_tensors(o.data[i]);
    sites.push_back(std::move(s));
  }
  const int dim = sites.front().samples.empty() ? static_cast<int>(features::kDefaultFeatureDim)
                                                : static_cast<int>(sites.front().samples.front().dim);
  const auto variant = harness::variant_from_name(o.train.variant, dim);
  const auto tc = train_config(o.train);
  const auto result = harness::leave_one_out(sites, variant, tc, split_spec(o.train.seed));

  ensure_dir(o.out);
  json cfg = train_params_json(o.train);
  json data = json::array();
  for (const auto& p : o.data) data.push_back(p.string());
  cfg["data"] = data;
  cfg["names"] = result.sites;
  Manifest m("loio", cfg);
  for (const auto& p : o.data) m.input(p);
  {
    auto out = open_out(o.out / "loio_accuracy.csv");
    harness::write_loo_accuracy_csv(out, result);
  }
  m.output(o.out, "loio_accuracy.csv");
  for (std::size_t i = 0; i < result.sites.size(); ++i) {
    for (std::size_t j = 0; j < result.sites.size(); ++j) {
      const std::string stem = "confusion_" + result.sites[i] + "_on_" + result.sites[j];
      {
        auto out = open_out(o.out / (stem + ".csv"));
        harness::write_confusion_csv(out, result.reports[i][j].confusion);
      }
      {
        auto out = open_out(o.out / (stem + ".pgm"));
        harness::write_confusion_pgm(out, result.reports[i][j].confusion);
      }
      m.output(o.out, stem + ".csv");
      m.output(o.out, stem + ".pgm");
      print_report(result.sites[i] + "->" + result.sites[j], result.reports[i][j]);
    }
  }
  m.write(o.out);
}

void cmd_variants(const VariantsOptions& o) {
  const auto data = load_tensors(o.train.data);
  const auto names = o.variants.empty() ? harness::table_variants() : o.variants;
  for (const auto& n : names) harness::variant_from_name(n);  // reject unknown names before training
  const auto rows = harness::run_variants(data, names, train_config(o.train), split_spec(o.train.seed));
  ensure_dir(o.out);
  {
    auto out = open_out(o.out / "results.csv");
    harness::write_results_csv(out, rows);
  }
  json cfg = to_json(o.train);
  cfg["variants"] = names;
  Manifest m("variants", cfg);
  m.input(o.train.data);
  m.output(o.out, "results.csv");
  m.write(o.out);
  for (const auto& r : rows) print_report(r.name, r.report);
}

void cmd_dump_adjacency(const DumpOptions& o) {
  const auto seqs = ingest_inputs(o.build);
  if (o.sequence >= seqs.size()) {
    throw DataError("sequence index " + std::to_string(o.sequence) + " out of range (" +
                    std::to_string(seqs.size()) + " sequences)");
  }
  const auto adj = graph::build_sequence(seqs[o.sequence], o.build.mu);
  ensure_dir(o.out);
  json cfg = to_json(o.build);
  cfg["sequence"] = o.sequence;
  Manifest m("dump-adjacency", cfg);
  input_digests(m, o.build);
  // One slot per user of the sequence, so every frame image has the same size
  // and a user keeps its row across frames.
  const std::size_t side = std::max<std::size_t>(adj.layout.size(), 1);
  std::ostringstream density_csv;
  density_csv << "frame,t,users,density\n";
  for (std::size_t k = 0; k < adj.mats.size(); ++k) {
    const auto img = graph::render_image(adj.mats[k], adj.layout, side, side);
    char name[32];
    std::snprintf(name, sizeof(name), "frame_%04zu.pgm", k);
    {
      auto out = open_out(o.out / name);
      graph::write_pgm(out, side, side, img.pixels);
    }
    m.output(o.out, name);
    density_csv << k << ',' << seqs[o.sequence].frames[k].t << ',' << adj.mats[k].size() << ','
                << graph::density(adj.mats[k]) << '\n';
  }
  {
    auto out = open_out(o.out / "density.csv");
    out << density_csv.str();
  }
  m.output(o.out, "density.csv");
  m.write(o.out);
  std::cout << "wrote " << adj.mats.size() << " frames of " << adj.region_id << " (" << state_name(adj.label)
            << ")\n";
}

ReplayReport cmd_replay(const fs::path& manifest, const fs::path& out) {
  json doc;
  try {
    doc = json::parse(open_in(manifest));
  } catch (const json::exception& e) {
    throw DataError("unreadable manifest: " + std::string(e.what()));
  }
  const auto command = doc.at("command").get<std::string>();
  const auto& cfg = doc.at("config");
  for (const auto& [path, digest] : doc.at("inputs").items()) {
    if (file_digest(path) != digest.get<std::string>()) throw DataError("input " + path + " changed since the run");
  }
  try {
    if (command == "synth") {
      auto o = synth_from_json(cfg);
      o.out = out;
      cmd_synth(o);
    } else if (command == "build") {
      auto o = build_from_json(cfg);
      o.out = out;
      cmd_build(o);
    } else if (command == "train") {
      auto o = train_from_json(cfg);
      o.out = out;
      cmd_train(o);
    } else if (command == "eval") {
      auto o = eval_from_json(cfg);
      o.out = out;
      cmd_eval(o);
    } else if (command == "variants") {
      VariantsOptions o;
      o.train = train_from_json(cfg);
      o.variants = cfg.at("variants").get<std::vector<std::string>>();
      o.out = out;
      cmd_variants(o);
    } else if (command == "loio") {
      LoioOptions o;
      o.train = train_from_json(cfg);
      for (const auto& p : cfg.at("data")) o.data.emplace_back(p.get<std::string>());
      o.names = cfg.at("names").get<std::vector<std::string>>();
      o.out = out;
      cmd_loio(o);
    } else if (command == "dump-adjacency") {
      DumpOptions o;
      o.build = build_from_json(cfg);
      o.sequence = cfg.at("sequence").get<std::size_t>();
      o.out = out;
      cmd_dump_adjacency(o);
    } else {
      throw DataError("manifest records unknown command '" + command + "'");
    }
  } catch (const json::exception& e) {
    throw DataError("manifest config incomplete: " + std::string(e.what()));
  }
  ReplayReport rep;
  for (const auto& [name, digest] : doc.at("outputs").items()) {
    if (!fs::exists(out / name) || file_digest(out / name) != digest.get<std::string>()) {
      rep.mismatched.push_back(name);
    }
  }
  return rep;
}

}  // namespace tgraph::cli
