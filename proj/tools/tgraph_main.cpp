#include <CLI11.hpp>

#include <iostream>
#include <stdexcept>

#include "tgraph/commands.hpp"
#include "tgraph/common.hpp"

namespace {

using namespace tgraph::cli;

void add_build_flags(CLI::App* sub, BuildOptions& o) {
  sub->add_option("--in", o.in, "directory with trajectories.csv, regions.txt, annotations.csv")->required();
  sub->add_option("--mu", o.mu, "edge distance threshold in meters")->check(CLI::PositiveNumber);
  sub->add_option("--rate", o.rate, "resampling rate in Hz")->check(CLI::PositiveNumber);
  sub->add_option("--min-users", o.min_users, "minimum distinct users per sequence");
  sub->add_option("--resample", o.resample, "linear or nearest")->check(CLI::IsMember({"linear", "nearest"}));
  sub->add_option("--frame-rate", o.frame_rate, "video frame rate for frame-indexed trajectories")
      ->check(CLI::PositiveNumber);
}

void add_train_flags(CLI::App* sub, TrainOptions& o) {
  sub->add_option("--variant", o.variant, "network, e.g. GRU-A(100,50)");
  sub->add_option("--lr", o.lr, "Adam learning rate")->check(CLI::PositiveNumber);
  sub->add_option("--epochs", o.epochs)->check(CLI::NonNegativeNumber);
  sub->add_option("--batch", o.batch)->check(CLI::PositiveNumber);
  sub->add_option("--dropout", o.dropout, "recurrent dropout probability")->check(CLI::Range(0.0, 0.999));
  sub->add_option("--seed", o.seed);
  sub->add_flag("-v,--verbose", o.verbose, "print per-epoch progress");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Traffic state recognition from user-interaction graphs"};
  app.set_version_flag("--version", kToolVersion);
  app.require_subcommand(1);

  SynthOptions synth;
  auto* s = app.add_subcommand("synth", "generate a labelled synthetic dataset");
  s->add_option("--per-class", synth.per_class, "sequences per class");
  s->add_option("--seed", synth.seed);
  s->add_option("--noise", synth.noise, "position noise sigma in meters")->check(CLI::NonNegativeNumber);
  s->add_option("--min-users", synth.min_users);
  s->add_option("--max-users", synth.max_users);
  s->add_option("--duration", synth.duration, "seconds")->check(CLI::PositiveNumber);
  s->add_option("--rate", synth.rate, "Hz")->check(CLI::PositiveNumber);
  s->add_option("--out", synth.out);

  BuildOptions build;
  auto* b = app.add_subcommand("build", "turn trajectories into feature tensors");
  add_build_flags(b, build);
  b->add_option("--frames", build.frames, "steps per sequence")->check(CLI::PositiveNumber);
  b->add_option("--canvas", build.canvas, "adjacency canvas side")->check(CLI::PositiveNumber);
  b->add_option("--img", build.img, "image side after downsampling")->check(CLI::PositiveNumber);
  b->add_option("--out", build.out);

  TrainOptions train;
  auto* t = app.add_subcommand("train", "train and test one network");
  t->add_option("--data", train.data, "features.bin")->required();
  add_train_flags(t, train);
  t->add_option("--out", train.out);

  EvalOptions eval;
  auto* e = app.add_subcommand("eval", "evaluate a checkpoint");
  e->add_option("--model", eval.model, "model.ckpt")->required();
  e->add_option("--data", eval.data, "features.bin")->required();
  e->add_option("--split", eval.split, "test or all")->check(CLI::IsMember({"test", "all"}));
  e->add_option("--seed", eval.seed, "split seed used for training");
  e->add_option("--out", eval.out);

  LoioOptions loio;
  auto* l = app.add_subcommand("loio", "leave-one-intersection-out evaluation");
  l->add_option("--data", loio.data, "one features.bin per site")->required()->expected(2, -1);
  l->add_option("--names", loio.names, "site names");
  add_train_flags(l, loio.train);
  l->add_option("--out", loio.out);

  VariantsOptions variants;
  auto* v = app.add_subcommand("variants", "train and compare network variants");
  v->add_option("--data", variants.train.data, "features.bin")->required();
  v->add_option("--variants", variants.variants, "subset to run (default: all seven)");
  add_train_flags(v, variants.train);
  v->add_option("--out", variants.out);

  DumpOptions dump;
  auto* d = app.add_subcommand("dump-adjacency", "write per-frame adjacency images and densities");
  add_build_flags(d, dump.build);
  d->add_option("--sequence", dump.sequence, "index of the extracted sequence");
  d->add_option("--out", dump.out);

  std::string manifest;
  std::string replay_out = "replay_out";
  auto* r = app.add_subcommand("replay", "re-run a recorded command and compare output digests");
  r->add_option("manifest", manifest, "manifest.json")->required();
  r->add_option("--out", replay_out);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& err) {
    const int code = app.exit(err);
    return code == 0 ? 0 : 1;
  }

  try {
    if (*s) cmd_synth(synth);
    if (*b) cmd_build(build);
    if (*t) cmd_train(train);
    if (*e) cmd_eval(eval);
    if (*l) cmd_loio(loio);
    if (*v) cmd_variants(variants);
    if (*d) cmd_dump_adjacency(dump);
    if (*r) {
      const auto rep = cmd_replay(manifest, replay_out);
      if (!rep.mismatched.empty()) {
        for (const auto& name : rep.mismatched) std::cerr << "digest mismatch: " << name << '\n';
        return 2;
      }
      std::cout << "replay matches the recorded outputs\n";
    }
  } catch (const std::invalid_argument& ex) {
    std::cerr << "error: " << ex.what() << '\n';
    return 1;
  } catch (const tgraph::NumericError& ex) {
    std::cerr << "numeric error: " << ex.what() << '\n';
    return 3;
  } catch (const tgraph::DataError& ex) {
    std::cerr << "data error: " << ex.what() << '\n';
    return 2;
  } catch (const std::exception& ex) {
    std::cerr << "error: " << ex.what() << '\n';
    return 2;
  }
  return 0;
}
