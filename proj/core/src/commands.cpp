#include "sirst/commands.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <sstream>

#include <json.hpp>

#include "sirst/errors.hpp"
#include "sirst/parallel.hpp"

namespace sirst {

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
  if (!out) throw IoError("short write to " + path.string());
}

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

fs::path required_path(const RunConfig& rc, const std::string& key, const char* flag) {
  const auto& v = rc.get(key);
  if (v.empty()) throw ConfigError(std::string("missing ") + flag + " (" + key + ")");
  return v;
}

std::string d_label(double d) {
  std::ostringstream s;
  s << d;
  return s.str();
}

Image overlay(const Image& raw, const DetectionSet& dets) {
  Image out(raw.height(), raw.width());
  for (std::size_t i = 0; i < raw.size(); ++i) out[i] = 0.6 * std::clamp(raw[i], 0.0, 1.0);
  for (const auto& c : dets.components) {
    for (const auto& p : c.pixels) out.at(p.row, p.col) = 1.0;
    auto [r0, c0, r1, c1] = c.bbox();
    r0 = std::max(0, r0 - 2);
    c0 = std::max(0, c0 - 2);
    r1 = std::min(raw.height() - 1, r1 + 2);
    c1 = std::min(raw.width() - 1, c1 + 2);
    for (int x = c0; x <= c1; ++x) out.at(r0, x) = out.at(r1, x) = 1.0;
    for (int y = r0; y <= r1; ++y) out.at(y, c0) = out.at(y, c1) = 1.0;
  }
  return out;
}

std::vector<BinaryMask> gt_masks(const std::vector<NamedImage>& images) {
  std::vector<BinaryMask> out;
  out.reserve(images.size());
  for (const auto& im : images) {
    if (im.mask.height() != im.image.height() || im.mask.width() != im.image.width())
      throw ConfigError("evaluation needs ground truth; set --dataset instead of image paths");
    out.push_back(im.mask);
  }
  return out;
}

}  // namespace

// ---------------------------------------------------------------------------
// Detector

Detector Detector::from_config(const RunConfig& rc) {
  const auto name = rc.detector();
  if (name == "dnanet") return dnanet(load_checkpoint(required_path(rc, "paths.checkpoint", "--checkpoint")), rc.threshold());
  return baseline(name, rc.filters());
}

Detector Detector::dnanet(Checkpoint ckpt, double threshold) {
  Detector d;
  d.name_ = "dnanet";
  d.ckpt_ = std::move(ckpt);
  d.threshold_ = threshold;
  return d;
}

Detector Detector::baseline(const std::string& name, const FilterConfig& filters) {
  if (!is_baseline(name)) throw ConfigError("unknown detector '" + name + "'");
  filters.validate();
  Detector d;
  d.name_ = name;
  d.filters_ = filters;
  return d;
}

Image Detector::score(const Image& raw) const {
  if (ckpt_) return Image::from_tensor(predict(prepare_input(raw), ckpt_->params, ckpt_->spec));
  Image r = run_baseline(name_, raw, filters_);
  const double peak = *std::max_element(r.pixels().begin(), r.pixels().end());
  if (peak > 0.0)
    for (double& v : r.pixels()) v /= peak;
  return r;
}

BinaryMask Detector::segment(const Image& score) const {
  if (ckpt_) return threshold_fixed(score, threshold_);
  return threshold_adaptive(score).mask;
}

// ---------------------------------------------------------------------------
// Inputs and outputs

std::vector<NamedImage> input_images(const RunConfig& rc) {
  std::vector<NamedImage> out;
  if (const auto& images = rc.get("paths.images"); !images.empty()) {
    std::vector<fs::path> files;
    if (fs::is_directory(images)) {
      for (const auto& e : fs::directory_iterator(images))
        if (e.is_regular_file() && e.path().extension() == ".png") files.push_back(e.path());
      std::sort(files.begin(), files.end());
    } else if (fs::exists(images)) {
      files.push_back(images);
    } else {
      throw IoError("no such image or directory: " + images);
    }
    for (const auto& f : files) out.push_back({f.stem().string(), read_png(f), {}});
    return out;
  }
  const fs::path root = required_path(rc, "paths.dataset", "--dataset or --images");
  for (auto& s : load_dataset(root, rc.get("eval.split")))
    out.push_back({sample_name(s.index), std::move(s.image), std::move(s.mask)});
  return out;
}

std::vector<Prediction> run_detector(const Detector& det, const std::vector<NamedImage>& images) {
  std::vector<Prediction> out(images.size());
  parallel_for(images.size(), [&](std::size_t i) {
    out[i].score = det.score(images[i].image);
    out[i].mask = det.segment(out[i].score);
    out[i].detections = label8(out[i].mask);
  });
  return out;
}

void prepare_output_dir(const fs::path& dir, bool force) {
  std::error_code ec;
  if (fs::exists(dir) && !fs::is_empty(dir)) {
    if (!force) throw IoError("'" + dir.string() + "' already exists; pass --force to overwrite");
    fs::remove_all(dir, ec);
    if (ec) throw IoError("cannot clear '" + dir.string() + "': " + ec.message());
  }
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create '" + dir.string() + "': " + ec.message());
}

void write_manifest(const fs::path& dir, const std::string& command, const RunConfig& rc,
                    const std::string& extra_json) {
  json m = json::parse(extra_json);
  m["command"] = command;
  m["seed"] = rc.seed();
  m["config"] = rc.values();
  write_text(dir / "config.txt", rc.to_text());
  write_text(dir / "manifest.json", m.dump(2) + "\n");
}

// ---------------------------------------------------------------------------
// Commands

DatasetStats cmd_synth(const RunConfig& rc, bool force) {
  const fs::path out = required_path(rc, "paths.out", "--out");
  const auto stats = synth_dataset(rc.synth_count(), rc.backgrounds(), rc.synth(), out, force, rc.to_text());
  write_text(out / "config.txt", rc.to_text());
  return stats;
}

TrainSummary cmd_train(const RunConfig& rc, bool force) {
  const fs::path out = required_path(rc, "paths.out", "--out");
  const fs::path data = required_path(rc, "paths.dataset", "--dataset");
  std::optional<Checkpoint> resume;
  if (const auto& r = rc.get("paths.resume"); !r.empty()) resume = load_checkpoint(r);

  std::vector<TrainSample> samples;
  for (auto& s : load_dataset(data, "train")) samples.push_back({s.index, std::move(s.image), std::move(s.mask)});

  prepare_output_dir(out, force);
  TrainConfig tc = rc.train();
  tc.out_dir = out;
  const auto result = train(samples, rc.network(), tc, std::move(resume));
  write_text(out / "loss.csv", loss_trace_csv(result.trace));

  TrainSummary summary;
  summary.steps = result.steps;
  if (!result.trace.empty()) {
    summary.first_loss = result.trace.front().loss;
    summary.last_loss = result.trace.back().loss;
  }
  summary.checkpoint = result.checkpoints.back();
  json extra{{"dataset", data.string()},
             {"samples", samples.size()},
             {"steps", result.steps},
             {"checkpoint", summary.checkpoint.filename().string()},
             {"parameters", result.params.scalar_count()}};
  write_manifest(out, "train", rc, extra.dump());
  return summary;
}

std::size_t cmd_detect(const RunConfig& rc, bool force) {
  const fs::path out = required_path(rc, "paths.out", "--out");
  const auto det = Detector::from_config(rc);
  const auto images = input_images(rc);
  prepare_output_dir(out, force);
  for (const char* sub : {"detections", "masks", "scores", "overlays"}) fs::create_directories(out / sub);
  const auto preds = run_detector(det, images);
  std::size_t total = 0;
  json index = json::array();
  for (std::size_t i = 0; i < images.size(); ++i) {
    const auto& name = images[i].name;
    write_text(out / "detections" / (name + ".json"), detections_to_json(preds[i].detections) + "\n");
    write_png8(out / "masks" / (name + ".png"), preds[i].mask.to_image());
    write_png16(out / "scores" / (name + ".png"), preds[i].score);
    write_png8(out / "overlays" / (name + ".png"), overlay(images[i].image, preds[i].detections));
    total += preds[i].detections.components.size();
    index.push_back({{"image", name}, {"detections", preds[i].detections.components.size()}});
  }
  json extra{{"detector", det.name()}, {"images", index}};
  write_manifest(out, "detect", rc, extra.dump());
  return total;
}

std::vector<MetricsReport> cmd_eval(const RunConfig& rc, bool force) {
  const fs::path out = required_path(rc, "paths.out", "--out");
  const auto images = input_images(rc);
  const auto gts = gt_masks(images);

  std::vector<BinaryMask> preds;
  std::string source;
  if (const auto& dir = rc.get("paths.pred_masks"); !dir.empty()) {
    source = "pred_masks:" + dir;
    for (const auto& im : images) {
      auto m = BinaryMask::from_image(read_png(fs::path(dir) / (im.name + ".png")));
      if (m.height() != im.image.height() || m.width() != im.image.width())
        throw InvalidShapeError("predicted mask " + im.name + " has the wrong size");
      preds.push_back(std::move(m));
    }
  } else {
    const auto det = Detector::from_config(rc);
    source = "detector:" + det.name();
    for (auto& p : run_detector(det, images)) preds.push_back(std::move(p.mask));
  }

  prepare_output_dir(out, force);
  fs::create_directories(out / "per_image");

  std::vector<double> ds{rc.d_thresh()};
  for (double d : rc.d_thresh_sweep())
    if (std::find(ds.begin(), ds.end(), d) == ds.end()) ds.push_back(d);

  std::vector<MetricsReport> reports;
  for (std::size_t k = 0; k < ds.size(); ++k) {
    std::vector<ImageCounts> counts(images.size());
    parallel_for(images.size(), [&](std::size_t i) { counts[i] = evaluate_image(preds[i], gts[i], ds[k]); });
    if (k == 0)
      for (std::size_t i = 0; i < images.size(); ++i)
        write_text(out / "per_image" / (images[i].name + ".json"), counts_to_json(counts[i], ds[k]) + "\n");
    reports.push_back(pool(counts, ds[k]));
    write_text(out / (k == 0 ? std::string("report.json") : "report_d" + d_label(ds[k]) + ".json"),
               report_to_json(reports.back()) + "\n");
  }
  json sweep = json::array();
  for (const auto& r : reports) sweep.push_back({{"d_thresh", r.d_thresh}, {"pd", r.pd}, {"fa", r.fa}});
  json extra{{"source", source}, {"images", images.size()}, {"sweep", sweep}};
  write_manifest(out, "eval", rc, extra.dump());
  return reports;
}

std::vector<RocPoint> cmd_roc(const RunConfig& rc, bool force) {
  const fs::path out = required_path(rc, "paths.out", "--out");
  const auto det = Detector::from_config(rc);
  const auto images = input_images(rc);
  const auto gts = gt_masks(images);
  std::vector<Image> scores(images.size());
  parallel_for(images.size(), [&](std::size_t i) { scores[i] = det.score(images[i].image); });
  const auto points = roc(scores, gts, rc.roc_thresholds(), rc.d_thresh());

  prepare_output_dir(out, force);
  write_text(out / "roc.csv", roc_to_csv(points));
  json pts = json::array();
  for (const auto& p : points) pts.push_back({{"threshold", p.threshold}, {"fa", p.fa}, {"pd", p.pd}});
  write_text(out / "roc.json",
             json{{"detector", det.name()}, {"d_thresh", rc.d_thresh()}, {"points", pts}}.dump(2) + "\n");
  write_manifest(out, "roc", rc, json{{"detector", det.name()}, {"images", images.size()}}.dump());
  return points;
}

std::string cmd_report(const RunConfig& rc, bool force) {
  const fs::path out = required_path(rc, "paths.out", "--out");
  const auto& inputs = rc.get("paths.inputs");
  if (inputs.empty()) throw ConfigError("missing --inputs (paths.inputs)");
  std::vector<fs::path> dirs;
  {
    std::stringstream ss(inputs);
    std::string item;
    while (std::getline(ss, item, ','))
      if (!item.empty()) dirs.emplace_back(item);
  }

  json runs = json::array();
  std::ostringstream md;
  md << "# Run report\n\n";
  md << std::setprecision(6);
  for (const auto& dir : dirs) {
    const json manifest = json::parse(read_text(dir / "manifest.json"));
    json run{{"dir", dir.string()}, {"command", manifest.value("command", "synth")}};
    md << "## " << dir.string() << " (" << run["command"].get<std::string>() << ")\n\n";
    if (fs::exists(dir / "stats.json")) {
      run["stats"] = json::parse(read_text(dir / "stats.json"));
      const auto& s = run["stats"];
      md << "- images: " << s.value("images", 0) << ", targets: " << s.value("targets", 0)
         << ", SPIE-compliant fraction: " << s.value("spie_fraction", 0.0) << "\n";
    }
    if (fs::exists(dir / "loss.csv")) {
      std::stringstream ss(read_text(dir / "loss.csv"));
      std::string line, first, last;
      std::getline(ss, line);
      while (std::getline(ss, line))
        if (!line.empty()) {
          if (first.empty()) first = line;
          last = line;
        }
      run["loss_first"] = first;
      run["loss_last"] = last;
      md << "- loss (step,lr,loss): first " << first << ", last " << last << "\n";
    }
    if (fs::exists(dir / "report.json")) {
      run["metrics"] = json::parse(read_text(dir / "report.json"));
      const auto& m = run["metrics"];
      md << "- IoU " << m.value("iou", 0.0) << ", Pd " << m.value("pd", 0.0) << ", Fa " << m.value("fa", 0.0)
         << " (d_thresh " << m.value("d_thresh", 0.0) << ")\n";
      if (manifest.contains("sweep"))
        for (const auto& p : manifest["sweep"])
          md << "  - d_thresh " << p["d_thresh"].get<double>() << ": Pd " << p["pd"].get<double>() << ", Fa "
             << p["fa"].get<double>() << "\n";
    }
    if (fs::exists(dir / "roc.json")) {
      run["roc"] = json::parse(read_text(dir / "roc.json"));
      md << "\n| threshold | Fa | Pd |\n|---|---|---|\n";
      for (const auto& p : run["roc"]["points"])
        md << "| " << p["threshold"].get<double>() << " | " << p["fa"].get<double>() << " | "
           << p["pd"].get<double>() << " |\n";
    }
    md << "\n";
    runs.push_back(run);
  }
  prepare_output_dir(out, force);
  write_text(out / "report.json", json{{"runs", runs}}.dump(2) + "\n");
  write_text(out / "report.md", md.str());
  write_manifest(out, "report", rc, json{{"runs", dirs.size()}}.dump());
  return md.str();
}

int exit_code_for(const std::exception& e) {
  if (const auto* err = dynamic_cast<const Error*>(&e)) {
    switch (err->kind()) {
      case ErrorKind::Config: return 2;
      case ErrorKind::Io: return 3;
      case ErrorKind::Numeric: return 4;
      default: return 1;
    }
  }
  if (dynamic_cast<const fs::filesystem_error*>(&e)) return 3;
  return 1;
}

}  // namespace sirst
