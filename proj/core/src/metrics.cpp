#include "sirst/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

#include <json.hpp>

#include "sirst/errors.hpp"

namespace sirst {

double iou(const BinaryMask& pred, const BinaryMask& gt) {
  if (pred.height() != gt.height() || pred.width() != gt.width())
    throw InvalidInputError("iou: mask extents differ");
  std::size_t inter = 0, uni = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    inter += pred[i] && gt[i];
    uni += pred[i] || gt[i];
  }
  if (uni == 0) return 1.0;
  return static_cast<double>(inter) / static_cast<double>(uni);
}

MatchResult match_targets(const DetectionSet& pred, const DetectionSet& gt, double d_thresh) {
  struct Candidate {
    double dev;
    int g;
    int p;
  };
  std::vector<Candidate> cands;
  for (std::size_t g = 0; g < gt.components.size(); ++g)
    for (std::size_t p = 0; p < pred.components.size(); ++p) {
      const auto& a = gt.components[g];
      const auto& b = pred.components[p];
      const double dev = std::hypot(a.centroid_row - b.centroid_row, a.centroid_col - b.centroid_col);
      if (dev < d_thresh) cands.push_back({dev, static_cast<int>(g), b.id});
    }
  std::sort(cands.begin(), cands.end(), [](const Candidate& x, const Candidate& y) {
    if (x.dev != y.dev) return x.dev < y.dev;
    if (x.g != y.g) return x.g < y.g;
    return x.p < y.p;
  });

  MatchResult r;
  r.d_thresh = d_thresh;
  std::vector<bool> gt_used(gt.components.size(), false);
  std::vector<int> pred_ids;
  for (const auto& c : pred.components) pred_ids.push_back(c.id);
  std::vector<bool> pred_used(pred.components.size(), false);
  auto pred_slot = [&](int id) {
    return static_cast<std::size_t>(std::find(pred_ids.begin(), pred_ids.end(), id) - pred_ids.begin());
  };
  for (const auto& c : cands) {
    const std::size_t ps = pred_slot(c.p);
    if (gt_used[static_cast<std::size_t>(c.g)] || pred_used[ps]) continue;
    gt_used[static_cast<std::size_t>(c.g)] = true;
    pred_used[ps] = true;
    r.pairs.push_back({c.g, c.p, c.dev});
  }
  for (std::size_t g = 0; g < gt_used.size(); ++g)
    if (!gt_used[g]) r.unmatched_gt.push_back(static_cast<int>(g));
  for (std::size_t p = 0; p < pred_used.size(); ++p)
    if (!pred_used[p]) r.unmatched_pred.push_back(pred_ids[p]);
  return r;
}

PdValue pd(const MatchResult& match, int t_all) {
  if (t_all < static_cast<int>(match.pairs.size()))
    throw InvalidInputError("pd: t_all smaller than the number of matched targets");
  if (t_all == 0) {
    if (match.unmatched_pred.empty()) return {1.0, true};
    return {std::numeric_limits<double>::quiet_NaN(), false};
  }
  return {static_cast<double>(match.pairs.size()) / t_all, true};
}

double fa(const DetectionSet& pred, const MatchResult& match, int height, int width) {
  std::size_t p_false = 0;
  for (int id : match.unmatched_pred)
    for (const auto& c : pred.components)
      if (c.id == id) p_false += c.pixels.size();
  return static_cast<double>(p_false) / (static_cast<double>(height) * width);
}

ImageCounts& ImageCounts::operator+=(const ImageCounts& o) {
  inter += o.inter;
  uni += o.uni;
  t_correct += o.t_correct;
  t_all += o.t_all;
  p_false += o.p_false;
  p_all += o.p_all;
  n_pred += o.n_pred;
  return *this;
}

ImageCounts evaluate_image(const BinaryMask& pred, const BinaryMask& gt, double d_thresh) {
  if (pred.height() != gt.height() || pred.width() != gt.width())
    throw InvalidInputError("evaluate_image: mask extents differ");
  ImageCounts c;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    c.inter += pred[i] && gt[i];
    c.uni += pred[i] || gt[i];
  }
  const auto ps = label8(pred);
  const auto gs = label8(gt);
  const auto m = match_targets(ps, gs, d_thresh);
  c.t_correct = m.pairs.size();
  c.t_all = gs.components.size();
  for (int id : m.unmatched_pred) c.p_false += ps.components[static_cast<std::size_t>(id)].pixels.size();
  c.p_all = pred.size();
  c.n_pred = ps.components.size();
  return c;
}

MetricsReport pool(const std::vector<ImageCounts>& per_image, double d_thresh) {
  MetricsReport r;
  r.d_thresh = d_thresh;
  r.images = per_image.size();
  for (const auto& c : per_image) r.counts += c;
  r.iou = r.counts.uni ? static_cast<double>(r.counts.inter) / static_cast<double>(r.counts.uni) : 1.0;
  if (r.counts.t_all) {
    r.pd = static_cast<double>(r.counts.t_correct) / static_cast<double>(r.counts.t_all);
  } else {
    r.pd_defined = r.counts.n_pred == 0;
    r.pd = r.pd_defined ? 1.0 : std::numeric_limits<double>::quiet_NaN();
  }
  r.fa = r.counts.p_all ? static_cast<double>(r.counts.p_false) / static_cast<double>(r.counts.p_all) : 0.0;
  return r;
}

MetricsReport evaluate(const std::vector<BinaryMask>& preds, const std::vector<BinaryMask>& gts, double d_thresh) {
  if (preds.size() != gts.size()) throw InvalidInputError("evaluate: prediction and ground-truth counts differ");
  std::vector<ImageCounts> counts;
  counts.reserve(preds.size());
  for (std::size_t i = 0; i < preds.size(); ++i) counts.push_back(evaluate_image(preds[i], gts[i], d_thresh));
  return pool(counts, d_thresh);
}

std::vector<RocPoint> roc(const std::vector<Image>& prob_maps, const std::vector<BinaryMask>& gt_masks,
                          const std::vector<double>& thresholds, double d_thresh) {
  if (prob_maps.size() != gt_masks.size()) throw InvalidInputError("roc: map and mask lists are misaligned");
  if (!std::is_sorted(thresholds.begin(), thresholds.end())) throw InvalidInputError("roc: thresholds must be sorted");
  for (std::size_t i = 0; i < prob_maps.size(); ++i)
    if (prob_maps[i].height() != gt_masks[i].height() || prob_maps[i].width() != gt_masks[i].width())
      throw InvalidInputError("roc: map " + std::to_string(i) + " extents differ from its mask");
  std::vector<RocPoint> out;
  for (double t : thresholds) {
    std::vector<ImageCounts> counts;
    for (std::size_t i = 0; i < prob_maps.size(); ++i)
      counts.push_back(evaluate_image(threshold_fixed(prob_maps[i], t), gt_masks[i], d_thresh));
    const auto r = pool(counts, d_thresh);
    out.push_back({t, r.fa, r.pd});
  }
  return out;
}

namespace {

nlohmann::json counts_json(const ImageCounts& c) {
  return {{"inter", c.inter},         {"union", c.uni},   {"t_correct", c.t_correct}, {"t_all", c.t_all},
          {"p_false", c.p_false},     {"p_all", c.p_all}, {"n_pred", c.n_pred}};
}

}  // namespace

std::string report_to_json(const MetricsReport& r) {
  nlohmann::json j;
  j["iou"] = r.iou;
  j["pd"] = r.pd_defined ? nlohmann::json(r.pd) : nlohmann::json(nullptr);
  j["pd_defined"] = r.pd_defined;
  j["fa"] = r.fa;
  j["d_thresh"] = r.d_thresh;
  j["images"] = r.images;
  j["counts"] = counts_json(r.counts);
  j["roc"] = nlohmann::json::array();
  for (const auto& p : r.roc_points) j["roc"].push_back({{"threshold", p.threshold}, {"fa", p.fa}, {"pd", p.pd}});
  return j.dump(2);
}

std::string counts_to_json(const ImageCounts& c, double d_thresh) {
  auto j = counts_json(c);
  j["d_thresh"] = d_thresh;
  return j.dump(2);
}

ImageCounts counts_from_json(const std::string& text) {
  try {
    const auto j = nlohmann::json::parse(text);
    ImageCounts c;
    c.inter = j.at("inter").get<std::size_t>();
    c.uni = j.at("union").get<std::size_t>();
    c.t_correct = j.at("t_correct").get<std::size_t>();
    c.t_all = j.at("t_all").get<std::size_t>();
    c.p_false = j.at("p_false").get<std::size_t>();
    c.p_all = j.at("p_all").get<std::size_t>();
    c.n_pred = j.at("n_pred").get<std::size_t>();
    return c;
  } catch (const nlohmann::json::exception& e) {
    throw InvalidInputError(std::string("malformed counts JSON: ") + e.what());
  }
}

std::string roc_to_csv(const std::vector<RocPoint>& points) {
  std::ostringstream os;
  os.precision(17);
  os << "threshold,fa,pd\n";
  for (const auto& p : points) os << p.threshold << ',' << p.fa << ',' << p.pd << '\n';
  return os.str();
}

}  // namespace sirst
