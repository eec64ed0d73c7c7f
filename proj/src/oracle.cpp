#include "vla/oracle.hpp"

#include <algorithm>
#include <map>
#include <set>
#include <sstream>

#include "vla/error.hpp"
#include "vla/geometry.hpp"
#include "vla/rng.hpp"

namespace vla {

using nlohmann::json;

void OracleConfig::validate() const {
  auto rate = [](double v, const char* name) {
    if (!(v >= 0.0 && v <= 1.0)) throw ConfigError(std::string("oracle.") + name + " must be in [0,1]");
  };
  rate(alpha, "alpha");
  rate(beta, "beta");
  rate(gamma, "gamma");
  if (!(match_iou > 0.0 && match_iou <= 1.0)) throw ConfigError("oracle.match_iou must be in (0,1]");
}

OracleConfig OracleConfig::from_json(const json& j, std::uint64_t seed) {
  OracleConfig c;
  c.seed = seed;
  if (!j.is_null()) {
    if (!j.is_object()) throw ConfigError("oracle must be an object");
    c.match_iou = j.value("match_iou", c.match_iou);
    c.alpha = j.value("alpha", c.alpha);
    c.beta = j.value("beta", c.beta);
    c.gamma = j.value("gamma", c.gamma);
  }
  c.validate();
  return c;
}

json OracleConfig::to_json() const {
  return {{"match_iou", match_iou}, {"alpha", alpha}, {"beta", beta}, {"gamma", gamma}};
}

bool same_label(std::string_view a, std::string_view b) {
  return to_lower_ascii(trim(a)) == to_lower_ascii(trim(b));
}

std::string gt_label(const GroundTruthObject& gt, const CategoryMap& cats) {
  const Category* c = cats.find(gt.category_id);
  return c ? c->name : std::string{};
}

std::vector<std::optional<std::size_t>> match_detections(
    const std::vector<Detection>& dets, const std::vector<GroundTruthObject>& gts,
    double threshold) {
  struct Pair {
    double iou;
    DetId det_id;
    std::size_t det;
    std::size_t gt;
  };
  std::vector<Pair> pairs;
  for (std::size_t d = 0; d < dets.size(); ++d) {
    for (std::size_t g = 0; g < gts.size(); ++g) {
      if (gts[g].iscrowd) continue;
      const double v = iou(dets[d].box, gts[g].box);
      if (v >= threshold) pairs.push_back({v, dets[d].id, d, g});
    }
  }
  std::sort(pairs.begin(), pairs.end(), [](const Pair& a, const Pair& b) {
    if (a.iou != b.iou) return a.iou > b.iou;
    if (a.det_id != b.det_id) return a.det_id < b.det_id;
    return a.gt < b.gt;
  });
  std::vector<std::optional<std::size_t>> out(dets.size());
  std::vector<bool> gt_used(gts.size(), false);
  for (const auto& p : pairs) {
    if (out[p.det] || gt_used[p.gt]) continue;
    out[p.det] = p.gt;
    gt_used[p.gt] = true;
  }
  return out;
}

std::optional<std::size_t> best_region_match(const BoundingBox& region,
                                             const std::vector<GroundTruthObject>& gts,
                                             double threshold) {
  std::optional<std::size_t> best;
  double best_iou = 0.0;
  for (std::size_t g = 0; g < gts.size(); ++g) {
    if (gts[g].iscrowd) continue;
    const double v = iou(region, gts[g].box);
    if (v >= threshold && (!best || v > best_iou)) {
      best = g;
      best_iou = v;
    }
  }
  return best;
}

std::vector<Verdict> oracle_review(const SceneRecord* scene, const std::vector<Detection>& dets,
                                   const CategoryMap& cats, const OracleConfig& cfg) {
  if (!scene) throw OracleUnavailableError("oracle review needs ground truth for the image");
  const auto matches = match_detections(dets, scene->ground_truth, cfg.match_iou);
  std::vector<Verdict> out;
  out.reserve(dets.size());
  for (std::size_t k = 0; k < dets.size(); ++k) {
    const Detection& d = dets[k];
    Verdict v{d.id, Judgment::reasonable, std::nullopt, ""};
    const double u = keyed_uniform(cfg.seed, scene->image_id, d.id, "review");
    if (!matches[k]) {
      if (u < cfg.alpha) {
        v.judgment = Judgment::unreasonable;
        v.rationale = "no ground-truth object overlaps this box";
      }
    } else {
      const std::string truth = gt_label(scene->ground_truth[*matches[k]], cats);
      if (!same_label(truth, d.label)) {
        if (u < cfg.alpha) {
          v.judgment = Judgment::unreasonable;
          v.suspected_label = truth;
          v.rationale = "the object is likely the " + truth;
        }
      } else if (u < cfg.beta) {
        v.judgment = Judgment::unreasonable;
        v.rationale = "false flag";
      }
    }
    if (v.judgment == Judgment::reasonable) v.rationale = "consistent with the scene";
    out.push_back(std::move(v));
  }
  return out;
}

ClassifyResult oracle_classify(const SceneRecord* scene, const ClassificationRequest& req,
                               const CategoryMap& cats, const OracleConfig& cfg) {
  if (!scene) throw OracleUnavailableError("oracle classifier needs ground truth for the image");
  const ClassifyResult abstain{"unknown", 0.0};
  auto m = best_region_match(req.region, scene->ground_truth, cfg.match_iou);
  if (!m) return abstain;
  const std::string truth = gt_label(scene->ground_truth[*m], cats);

  std::optional<std::string> truth_candidate;
  std::vector<std::string> wrong;
  for (const auto& c : req.candidates) {
    if (same_label(c, truth)) {
      truth_candidate = c;
    } else {
      wrong.push_back(c);
    }
  }
  const double u = keyed_uniform(cfg.seed, req.image_id, req.det_id, "classify");
  if (u < cfg.gamma) {
    if (truth_candidate) return {*truth_candidate, 1.0};
    return abstain;
  }
  if (wrong.empty()) return abstain;
  const double pick = keyed_uniform(cfg.seed, req.image_id, req.det_id, "classify-pick");
  const auto idx = std::min(wrong.size() - 1, static_cast<std::size_t>(pick * static_cast<double>(wrong.size())));
  return {wrong[idx], 0.5};
}

std::string oracle_caption(const SceneRecord& scene, const CategoryMap& cats) {
  std::map<std::string, int> counts;
  for (const auto& g : scene.ground_truth) counts[gt_label(g, cats)]++;
  if (counts.empty()) return "The image shows an empty scene.";
  std::ostringstream os;
  os << "The image shows ";
  std::size_t k = 0;
  for (const auto& [label, n] : counts) {
    if (k > 0) os << (k + 1 == counts.size() ? " and " : ", ");
    if (n == 1) {
      const bool vowel = !label.empty() && std::string_view("aeiou").find(label[0]) != std::string_view::npos;
      os << (vowel ? "an " : "a ") << label;
    } else {
      os << n << " " << label << " objects";
    }
    ++k;
  }
  os << ".";
  return os.str();
}

json NoiseRecord::to_json() const {
  return {{"image_id", image_id}, {"det_id", det_id}, {"old_label", old_label}, {"new_label", new_label}};
}

std::vector<NoiseRecord> inject_label_noise(std::vector<SceneRecord>& scenes, double rate,
                                            std::uint64_t seed, const CategoryMap& cats,
                                            double match_iou) {
  if (!(rate >= 0.0 && rate <= 1.0)) throw ValidationError("noise rate must be in [0,1]");
  const auto vocab = cats.scoring_vocabulary();
  std::vector<NoiseRecord> manifest;
  for (auto& s : scenes) {
    const auto matches = match_detections(s.raw_detections, s.ground_truth, match_iou);
    for (std::size_t k = 0; k < s.raw_detections.size(); ++k) {
      Detection& d = s.raw_detections[k];
      if (!matches[k] || !same_label(gt_label(s.ground_truth[*matches[k]], cats), d.label)) continue;
      if (!(keyed_uniform(seed, s.image_id, d.id, "noise") < rate)) continue;
      std::vector<std::string> others;
      for (const auto& v : vocab) {
        if (!same_label(v, d.label)) others.push_back(v);
      }
      if (others.empty()) continue;
      const double pick = keyed_uniform(seed, s.image_id, d.id, "noise-pick");
      const auto idx = std::min(others.size() - 1, static_cast<std::size_t>(pick * static_cast<double>(others.size())));
      manifest.push_back({s.image_id, d.id, d.label, others[idx]});
      d.label = others[idx];
      if (!d.history.empty()) d.history.front().note = d.label;
    }
  }
  return manifest;
}

std::string render_noise_manifest(const std::vector<NoiseRecord>& manifest) {
  std::string out;
  for (const auto& r : manifest) out += r.to_json().dump() + "\n";
  return out;
}

namespace {

json chat_response(const std::string& content) {
  return {{"choices", json::array({{{"index", 0}, {"message", {{"role", "assistant"}, {"content", content}}}}})}};
}

}  // namespace

std::string OracleLinguisticAgent::chat(const ChatMessage& msg, const CallContext& ctx) {
  std::string reply;
  if (ctx.purpose == "caption") {
    if (!ctx.scene) throw OracleUnavailableError("oracle caption needs ground truth for the image");
    reply = oracle_caption(*ctx.scene, cats_);
  } else if (ctx.purpose == "review") {
    if (!ctx.dets) throw OracleUnavailableError("oracle review needs the reviewed detections");
    const auto verdicts = oracle_review(ctx.scene, *ctx.dets, cats_, cfg_);
    reply = ctx.format == ResponseFormat::structured_json ? render_verdicts_json(verdicts)
                                                          : render_verdicts_free_text(verdicts, *ctx.dets);
  } else {
    throw ProtocolError("oracle linguistic agent cannot serve purpose '" + ctx.purpose + "'");
  }
  AgentEnvelope env;
  env.role = AgentRole::linguistic;
  env.request_id = ctx.request_id;
  env.transport = "mock";
  env.endpoint = "mock:oracle";
  env.purpose = ctx.purpose;
  if (ctx.purpose == "review") env.format = std::string(to_string(ctx.format));
  env.request = HttpChatAgent::make_request("oracle", msg, ctx.request_id);
  env.response = chat_response(reply);
  ctx.record(std::move(env));
  return reply;
}

ClassifyResult OracleClassifierAgent::classify(const ClassificationRequest& req,
                                               const CallContext& ctx) {
  const auto r = oracle_classify(ctx.scene, req, cats_, cfg_);
  AgentEnvelope env;
  env.role = AgentRole::classifier;
  env.request_id = ctx.request_id;
  env.transport = "mock";
  env.endpoint = "mock:oracle";
  env.purpose = "classify";
  env.request = classification_request_json(req);
  env.response = {{"label", r.label}, {"confidence", r.confidence}};
  ctx.record(std::move(env));
  return r;
}

}  // namespace vla
