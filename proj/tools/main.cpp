// sirst: synthesis, training, detection and evaluation front end.

#include <cstdio>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "sirst/commands.hpp"
#include "sirst/errors.hpp"

namespace {

struct Flags {
  std::string config;
  std::optional<long long> seed;
  std::string out;
  std::string variant;
  std::string detector;
  std::optional<double> d_thresh;
  bool force = false;
  std::optional<int> n;
  std::string scr;
  std::string dataset;
  std::string checkpoint;
  std::string resume;
  std::string images;
  std::string pred_masks;
  std::string thresholds;
  std::string inputs;
  std::string preset;
  std::vector<std::string> sets;
};

void add_common(CLI::App* cmd, Flags& f) {
  cmd->add_option("--config", f.config, "key=value config file");
  cmd->add_option("--preset", f.preset, "default or toy");
  cmd->add_option("--seed", f.seed, "global seed");
  cmd->add_option("--out", f.out, "output directory");
  cmd->add_flag("--force", f.force, "overwrite a non-empty output directory");
  cmd->add_option("--set", f.sets, "extra key=value override (repeatable)");
}

sirst::KeyValues overrides(const Flags& f) {
  sirst::KeyValues kv;
  for (const auto& s : f.sets) {
    const auto eq = s.find('=');
    if (eq == std::string::npos) throw sirst::ConfigError("--set expects key=value, got '" + s + "'");
    kv[s.substr(0, eq)] = s.substr(eq + 1);
  }
  auto put = [&](const char* key, const std::string& v) {
    if (!v.empty()) kv[key] = v;
  };
  put("preset", f.preset);
  if (f.seed) kv["seed"] = std::to_string(*f.seed);
  put("paths.out", f.out);
  put("net.variant", f.variant);
  put("eval.detector", f.detector);
  if (f.d_thresh) {
    std::ostringstream s;
    s.precision(17);
    s << *f.d_thresh;
    kv["eval.d_thresh"] = s.str();
  }
  if (f.n) kv["synth.n"] = std::to_string(*f.n);
  put("synth.scr", f.scr);
  put("paths.dataset", f.dataset);
  put("paths.checkpoint", f.checkpoint);
  put("paths.resume", f.resume);
  put("paths.images", f.images);
  put("paths.pred_masks", f.pred_masks);
  put("eval.roc_thresholds", f.thresholds);
  put("paths.inputs", f.inputs);
  return kv;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Infrared small target detection lab"};
  app.require_subcommand(1);
  Flags f;

  auto* synth = app.add_subcommand("synth", "generate a synthetic dataset");
  add_common(synth, f);
  synth->add_option("--n", f.n, "number of samples");
  synth->add_option("--scr", f.scr, "comma-separated SCR values");

  auto* train = app.add_subcommand("train", "train a network on a dataset's train split");
  add_common(train, f);
  train->add_option("--dataset", f.dataset, "dataset directory");
  train->add_option("--variant", f.variant, "full, no_dnim, left_to_right, top_to_bottom");
  train->add_option("--resume", f.resume, "checkpoint to continue from");

  auto* detect = app.add_subcommand("detect", "run a detector and write detections and overlays");
  auto* eval = app.add_subcommand("eval", "score predictions against ground truth");
  auto* roc = app.add_subcommand("roc", "sweep the segmentation threshold");
  for (auto* cmd : {detect, eval, roc}) {
    add_common(cmd, f);
    cmd->add_option("--dataset", f.dataset, "dataset directory");
    cmd->add_option("--checkpoint", f.checkpoint, "trained network");
    cmd->add_option("--detector", f.detector, "dnanet, tophat or maxmedian");
    cmd->add_option("--d-thresh", f.d_thresh, "maximum centroid deviation in pixels");
  }
  detect->add_option("--images", f.images, "PNG file or directory");
  eval->add_option("--pred-masks", f.pred_masks, "directory of predicted mask PNGs");
  roc->add_option("--thresholds", f.thresholds, "comma-separated thresholds");

  auto* report = app.add_subcommand("report", "summarise run directories");
  add_common(report, f);
  report->add_option("--inputs", f.inputs, "comma-separated run directories");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  try {
    const sirst::KeyValues file = f.config.empty() ? sirst::KeyValues{} : sirst::read_key_values(f.config);
    const auto rc = sirst::RunConfig::resolve(file, overrides(f));

    if (synth->parsed()) {
      const auto s = sirst::cmd_synth(rc, f.force);
      std::printf("images %d, targets %d, multi-target %.3f, SPIE-compliant %.4f, rejected %d\n", s.images,
                  s.targets, s.multi_target_fraction, s.spie_fraction, s.rejected_targets);
    } else if (train->parsed()) {
      const auto s = sirst::cmd_train(rc, f.force);
      std::printf("steps %lld, loss %.6f -> %.6f, checkpoint %s\n", static_cast<long long>(s.steps), s.first_loss,
                  s.last_loss, s.checkpoint.string().c_str());
    } else if (detect->parsed()) {
      std::printf("components %zu\n", sirst::cmd_detect(rc, f.force));
    } else if (eval->parsed()) {
      for (const auto& r : sirst::cmd_eval(rc, f.force))
        std::printf("d_thresh %g: IoU %.4f  Pd %.4f  Fa %.3e\n", r.d_thresh, r.iou, r.pd, r.fa);
    } else if (roc->parsed()) {
      for (const auto& p : sirst::cmd_roc(rc, f.force))
        std::printf("t %.3f: Pd %.4f  Fa %.3e\n", p.threshold, p.pd, p.fa);
    } else if (report->parsed()) {
      std::cout << sirst::cmd_report(rc, f.force);
    }
  } catch (const std::exception& e) {
    std::fprintf(stderr, "sirst: %s\n", e.what());
    return sirst::exit_code_for(e);
  }
  return 0;
}
