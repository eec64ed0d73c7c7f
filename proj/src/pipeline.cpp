#include "vla/pipeline.hpp"

#include <algorithm>
#include <fstream>
#include <mutex>
#include <set>
#include <sstream>
#include <thread>

#include "vla/error.hpp"
#include "vla/rng.hpp"

namespace vla {

using nlohmann::json;

namespace {

constexpr std::pair<UncorrectablePolicy, std::string_view> kPolicies[] = {
    {UncorrectablePolicy::retain_original, "retain-original"},
    {UncorrectablePolicy::drop, "drop"},
};

constexpr std::pair<ProtocolFallback, std::string_view> kFallbacks[] = {
    {ProtocolFallback::free_text, "free-text"},
    {ProtocolFallback::all_reasonable, "all-reasonable"},
    {ProtocolFallback::fail_image, "fail-image"},
};

template <typename E, std::size_t N>
E enum_field(const json& j, const char* key, const std::pair<E, std::string_view> (&table)[N], E dflt) {
  if (!j.contains(key)) return dflt;
  if (!j[key].is_string()) throw ConfigError(std::string(key) + " must be a string");
  const auto s = j[key].get<std::string>();
  std::string allowed;
  for (const auto& [v, name] : table) {
    if (name == s) return v;
    allowed += (allowed.empty() ? "" : ", ") + std::string(name);
  }
  throw ConfigError(std::string(key) + ": '" + s + "' is not one of " + allowed);
}

const json& object_field(const json& j, const char* key, const std::string& path) {
  static const json empty = json::object();
  if (!j.contains(key)) return empty;
  if (!j[key].is_object()) throw ConfigError(path + " must be an object");
  return j[key];
}

void check_keys(const json& j, const std::string& path, std::initializer_list<const char*> known) {
  for (const auto& [k, v] : j.items()) {
    if (std::none_of(known.begin(), known.end(), [&](const char* n) { return k == n; })) {
      throw ConfigError((path.empty() ? "" : path + ".") + k + ": unknown field");
    }
  }
}

std::string string_field(const json& j, const char* key, const std::string& path, std::string dflt = {}) {
  if (!j.contains(key)) return dflt;
  if (!j[key].is_string()) throw ConfigError(path + "." + key + " must be a string");
  return j[key].get<std::string>();
}

json verdict_json(const Verdict& v) {
  return {{"det_id", v.det_id},
          {"judgment", std::string(to_string(v.judgment))},
          {"suspected_label", v.suspected_label ? json(*v.suspected_label) : json(nullptr)},
          {"rationale", v.rationale}};
}

Verdict verdict_from_json(const json& j) {
  Verdict v;
  v.det_id = j.at("det_id").get<DetId>();
  auto jd = judgment_from_string(j.at("judgment").get<std::string>());
  if (!jd) throw ValidationError("bad judgment in audit record");
  v.judgment = *jd;
  if (j.contains("suspected_label") && j["suspected_label"].is_string()) {
    v.suspected_label = j["suspected_label"].get<std::string>();
  }
  v.rationale = j.value("rationale", std::string{});
  return v;
}

void flatten(const json& j, const std::string& prefix, std::map<std::string, std::string>& out) {
  if (j.is_object()) {
    for (const auto& [k, v] : j.items()) flatten(v, prefix.empty() ? k : prefix + "." + k, out);
  } else {
    out[prefix] = j.dump();
  }
}

bool agent_failure(const std::exception& e) {
  return dynamic_cast<const AgentUnavailableError*>(&e) || dynamic_cast<const ProtocolError*>(&e) ||
         dynamic_cast<const OracleUnavailableError*>(&e);
}

std::string request_id(ImageId image, const std::string& what) { return std::to_string(image) + "/" + what; }

}  // namespace

std::string_view to_string(UncorrectablePolicy p) {
  for (const auto& [v, n] : kPolicies) {
    if (v == p) return n;
  }
  return "?";
}

std::string_view to_string(ProtocolFallback f) {
  for (const auto& [v, n] : kFallbacks) {
    if (v == f) return n;
  }
  return "?";
}

// ---- config --------------------------------------------------------------------------------

RunConfig RunConfig::from_json(const json& j) {
  if (!j.is_object()) throw ConfigError("config must be a JSON object");
  check_keys(j, "", {"seed", "response_format", "uncorrectable_policy", "protocol_fallback", "parallelism",
                     "abort_on_agent_failure", "parse_mode", "include_scores_in_prompt", "paths", "agents",
                     "oracle", "prompts"});
  RunConfig c;
  if (j.contains("seed") && !j["seed"].is_null()) {
    if (!j["seed"].is_number_unsigned()) throw ConfigError("seed must be a non-negative integer");
    c.seed = j["seed"].get<std::uint64_t>();
  }
  if (j.contains("response_format")) {
    auto f = j["response_format"].is_string()
                 ? response_format_from_string(j["response_format"].get<std::string>())
                 : std::nullopt;
    if (!f) throw ConfigError("response_format must be structured-json or free-text");
    c.response_format = *f;
  }
  c.uncorrectable_policy = enum_field(j, "uncorrectable_policy", kPolicies, c.uncorrectable_policy);
  c.protocol_fallback = enum_field(j, "protocol_fallback", kFallbacks, c.protocol_fallback);
  if (j.contains("parallelism")) {
    if (!j["parallelism"].is_number_integer()) throw ConfigError("parallelism must be an integer");
    c.parallelism = j["parallelism"].get<int>();
  }
  if (j.contains("abort_on_agent_failure")) {
    if (!j["abort_on_agent_failure"].is_boolean()) throw ConfigError("abort_on_agent_failure must be a boolean");
    c.abort_on_agent_failure = j["abort_on_agent_failure"].get<bool>();
  }
  if (j.contains("parse_mode")) {
    const auto m = j["parse_mode"].is_string() ? j["parse_mode"].get<std::string>() : "";
    if (m == "strict") {
      c.parse_mode = ParseMode::strict;
    } else if (m == "lenient") {
      c.parse_mode = ParseMode::lenient;
    } else {
      throw ConfigError("parse_mode must be strict or lenient");
    }
  }

  const json& paths = object_field(j, "paths", "paths");
  check_keys(paths, "paths", {"annotations", "results", "audit_log", "transcript", "summary", "checkpoint", "captions"});
  c.paths.annotations = string_field(paths, "annotations", "paths");
  c.paths.results = string_field(paths, "results", "paths");
  c.paths.audit_log = string_field(paths, "audit_log", "paths");
  c.paths.transcript = string_field(paths, "transcript", "paths");
  c.paths.summary = string_field(paths, "summary", "paths");
  c.paths.checkpoint = string_field(paths, "checkpoint", "paths");
  c.paths.captions = string_field(paths, "captions", "paths");

  const json& agents = object_field(j, "agents", "agents");
  check_keys(agents, "agents", {"detector", "linguistic", "classifier"});
  for (auto role : {AgentRole::detector, AgentRole::linguistic, AgentRole::classifier}) {
    const std::string name(to_string(role));
    const std::string path = "agents." + name;
    if (!agents.contains(name)) throw ConfigError(path + ": missing endpoint");
    auto ep = AgentEndpointConfig::from_json(role, agents[name], path);
    if (role == AgentRole::detector) c.detector = std::move(ep);
    if (role == AgentRole::linguistic) c.linguistic = std::move(ep);
    if (role == AgentRole::classifier) c.classifier = std::move(ep);
  }

  c.oracle = OracleConfig::from_json(j.value("oracle", json()), c.seed.value_or(0));

  const json& prompts = object_field(j, "prompts", "prompts");
  check_keys(prompts, "prompts", {"caption_instruction", "caption_prefix", "review_intro",
                                  "structured_directive", "free_text_directive"});
  c.prompts.caption_instruction = string_field(prompts, "caption_instruction", "prompts", c.prompts.caption_instruction);
  c.prompts.caption_prefix = string_field(prompts, "caption_prefix", "prompts", c.prompts.caption_prefix);
  c.prompts.review_intro = string_field(prompts, "review_intro", "prompts", c.prompts.review_intro);
  c.prompts.structured_directive = string_field(prompts, "structured_directive", "prompts", c.prompts.structured_directive);
  c.prompts.free_text_directive = string_field(prompts, "free_text_directive", "prompts", c.prompts.free_text_directive);
  if (j.contains("include_scores_in_prompt")) {
    if (!j["include_scores_in_prompt"].is_boolean()) throw ConfigError("include_scores_in_prompt must be a boolean");
    c.prompts.include_scores = j["include_scores_in_prompt"].get<bool>();
  }
  c.validate();
  return c;
}

RunConfig RunConfig::load(const std::filesystem::path& path) {
  std::string text;
  try {
    text = read_text_file(path);
  } catch (const IoError& e) {
    throw ConfigError(std::string("cannot read config: ") + e.what());
  }
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ParseError("malformed config " + path.string() + ": " + e.what(), e.byte);
  }
  return from_json(j);
}

void RunConfig::validate() const {
  if (parallelism < 1) throw ConfigError("parallelism must be >= 1");
  if (paths.annotations.empty()) throw ConfigError("paths.annotations is required");
  detector.validate("agents.detector");
  linguistic.validate("agents.linguistic");
  classifier.validate("agents.classifier");
  oracle.validate();
}

bool RunConfig::uses_mock() const {
  return detector.transport == TransportKind::mock || linguistic.transport == TransportKind::mock ||
         classifier.transport == TransportKind::mock;
}

json RunConfig::canonical_json() const {
  json j;
  j["seed"] = seed ? json(*seed) : json(nullptr);
  j["response_format"] = std::string(to_string(response_format));
  j["uncorrectable_policy"] = std::string(to_string(uncorrectable_policy));
  j["protocol_fallback"] = std::string(to_string(protocol_fallback));
  j["abort_on_agent_failure"] = abort_on_agent_failure;
  j["parse_mode"] = parse_mode == ParseMode::strict ? "strict" : "lenient";
  j["include_scores_in_prompt"] = prompts.include_scores;
  j["paths"] = {{"annotations", paths.annotations}, {"results", paths.results},
                {"audit_log", paths.audit_log},     {"transcript", paths.transcript},
                {"summary", paths.summary},         {"checkpoint", paths.checkpoint},
                {"captions", paths.captions}};
  j["agents"] = {{"detector", detector.to_json()}, {"linguistic", linguistic.to_json()},
                 {"classifier", classifier.to_json()}};
  j["oracle"] = oracle.to_json();
  j["prompts"] = {{"caption_instruction", prompts.caption_instruction},
                  {"caption_prefix", prompts.caption_prefix},
                  {"review_intro", prompts.review_intro},
                  {"structured_directive", prompts.structured_directive},
                  {"free_text_directive", prompts.free_text_directive}};
  return j;
}

std::string RunConfig::hash() const {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(hash_string(canonical_json().dump())));
  return buf;
}

std::vector<std::string> config_diff(const json& before, const json& after) {
  std::map<std::string, std::string> a, b;
  flatten(before, "", a);
  flatten(after, "", b);
  std::set<std::string> keys;
  for (const auto& [k, v] : a) keys.insert(k);
  for (const auto& [k, v] : b) keys.insert(k);
  std::vector<std::string> out;
  for (const auto& k : keys) {
    const auto ia = a.find(k);
    const auto ib = b.find(k);
    const std::string va = ia == a.end() ? "(absent)" : ia->second;
    const std::string vb = ib == b.end() ? "(absent)" : ib->second;
    if (va != vb) out.push_back(k + ": " + va + " -> " + vb);
  }
  return out;
}

void use_mock_agents(RunConfig& cfg, const std::string& detections_path) {
  const std::string path = detections_path.empty() ? cfg.detector.path : detections_path;
  cfg.detector = AgentEndpointConfig{};
  cfg.detector.role = AgentRole::detector;
  cfg.detector.transport = TransportKind::mock;
  cfg.detector.path = path;
  for (auto* ep : {&cfg.linguistic, &cfg.classifier}) {
    const AgentRole role = ep == &cfg.linguistic ? AgentRole::linguistic : AgentRole::classifier;
    *ep = AgentEndpointConfig{};
    ep->role = role;
    ep->transport = TransportKind::mock;
  }
  cfg.detector.validate("agents.detector");
}

// ---- records -------------------------------------------------------------------------------

json AuditRecord::to_json() const {
  json j;
  j["image_id"] = image_id;
  j["det_id"] = det_id;
  j["box"] = json::array({box.x1, box.y1, box.x2, box.y2});
  j["original"] = {{"label", original_label}, {"score", original_score}};
  j["verdict"] = verdict_json(verdict);
  j["classifier"] = classifier ? json{{"label", classifier->label}, {"confidence", classifier->confidence}}
                               : json(nullptr);
  if (!classifier_error.empty()) j["classifier_error"] = classifier_error;
  j["correction"] = correction.empty() ? json(nullptr) : json(correction);
  j["final"] = {{"label", final_label}, {"score", final_score}};
  j["disposition"] = std::string(to_string(disposition));
  return j;
}

AuditRecord AuditRecord::from_json(const json& j) {
  AuditRecord r;
  r.image_id = j.at("image_id").get<ImageId>();
  r.det_id = j.at("det_id").get<DetId>();
  const auto& b = j.at("box");
  r.box = BoundingBox::make(b.at(0).get<double>(), b.at(1).get<double>(), b.at(2).get<double>(),
                            b.at(3).get<double>());
  r.original_label = j.at("original").at("label").get<std::string>();
  r.original_score = j.at("original").at("score").get<double>();
  r.verdict = verdict_from_json(j.at("verdict"));
  if (j.contains("classifier") && j["classifier"].is_object()) {
    r.classifier = ClassifyResult{j["classifier"].at("label").get<std::string>(),
                                  j["classifier"].at("confidence").get<double>()};
  }
  r.classifier_error = j.value("classifier_error", std::string{});
  if (j.contains("correction") && j["correction"].is_string()) r.correction = j["correction"].get<std::string>();
  r.final_label = j.at("final").at("label").get<std::string>();
  r.final_score = j.at("final").at("score").get<double>();
  auto d = disposition_from_string(j.at("disposition").get<std::string>());
  if (!d) throw ValidationError("bad disposition in audit record");
  r.disposition = *d;
  return r;
}

json ImageOutcome::to_json() const {
  json audit_j = json::array();
  for (const auto& r : audit) audit_j.push_back(r.to_json());
  json env_j = json::array();
  for (const auto& e : envelopes) env_j.push_back(e.to_json());
  json j{{"image_id", image_id},
         {"detections", detections},
         {"caption", caption},
         {"caption_source", caption_source},
         {"protocol_fallback", protocol_fallback},
         {"audit_records", audit_j},
         {"envelopes", env_j}};
  if (failed) {
    j["failed"] = true;
    j["error"] = error;
  }
  return j;
}

ImageOutcome ImageOutcome::from_json(const json& j) {
  ImageOutcome o;
  o.image_id = j.at("image_id").get<ImageId>();
  o.detections = j.at("detections").get<std::size_t>();
  o.caption = j.value("caption", std::string{});
  o.caption_source = j.value("caption_source", std::string{});
  o.protocol_fallback = j.value("protocol_fallback", false);
  o.failed = j.value("failed", false);
  o.error = j.value("error", std::string{});
  for (const auto& r : j.at("audit_records")) o.audit.push_back(AuditRecord::from_json(r));
  for (const auto& e : j.at("envelopes")) o.envelopes.push_back(AgentEnvelope::from_json(e));
  return o;
}

json RunSummary::to_json() const {
  auto ap = [](const std::optional<EvalReport>& r) -> json {
    if (!r) return nullptr;
    auto v = [](const std::optional<double>& x) { return x ? json(*x) : json(nullptr); };
    return {{"ap_50_95", v(r->ap_50_95)}, {"ap_50", v(r->ap_50)},         {"ap_75", v(r->ap_75)},
            {"ap_small", v(r->ap_small)}, {"ap_medium", v(r->ap_medium)}, {"ap_large", v(r->ap_large)},
            {"images", r->images}};
  };
  json failed_j = json::array();
  for (const auto& [id, err] : failed) failed_j.push_back({{"image_id", id}, {"error", err}});
  json j;
  j["config_hash"] = config_hash;
  j["images"] = images;
  j["completed"] = completed;
  j["detections"] = detections;
  j["flagged"] = flagged;
  j["relabeled"] = relabeled;
  j["retained_after_flag"] = retained_after_flag;
  j["dropped"] = dropped;
  j["excluded"] = excluded;
  j["protocol_fallbacks"] = protocol_fallbacks;
  j["caption_sources"] = caption_sources;
  j["failed"] = failed_j;
  j["correction"] = {{"ed", correction.ed},
                     {"cd", correction.cd},
                     {"cr", correction.cr() ? json(*correction.cr()) : json(nullptr)},
                     {"cr_display", correction.ed ? json(correction.cr_display()) : json(nullptr)},
                     {"match_iou", correction.match_iou}};
  j["ap_before"] = ap(ap_before);
  j["ap_after"] = ap(ap_after);
  j["interrupted"] = interrupted;
  return j;
}

// ---- agents --------------------------------------------------------------------------------

Agents make_agents(const RunConfig& cfg, const AnnotationSet& data) {
  if (cfg.uses_mock() && !cfg.seed) throw ConfigError("seed: required for runs with mock agents");
  OracleConfig oc = cfg.oracle;
  oc.seed = cfg.seed.value_or(0);
  Agents a;

  switch (cfg.detector.transport) {
    case TransportKind::file:
    case TransportKind::mock:
      a.detector = std::make_unique<FileDetector>(cfg.detector, data.categories, data.scenes);
      break;
    case TransportKind::http_vision:
      a.detector = std::make_unique<HttpVisionDetector>(cfg.detector, data.categories);
      break;
    default:
      throw ConfigError("agents.detector.transport unsupported");
  }

  if (cfg.linguistic.transport == TransportKind::http_chat) {
    a.linguistic = std::make_unique<HttpChatAgent>(cfg.linguistic);
  } else if (cfg.linguistic.mock.kind == "scripted") {
    a.linguistic = std::make_unique<ScriptedLinguisticAgent>(cfg.linguistic.mock.script);
  } else {
    a.linguistic = std::make_unique<OracleLinguisticAgent>(data.categories, oc);
  }

  if (cfg.classifier.transport == TransportKind::http_vision) {
    a.classifier = std::make_unique<HttpVisionClassifier>(cfg.classifier);
  } else if (cfg.classifier.mock.kind == "scripted") {
    a.classifier = std::make_unique<ScriptedClassifierAgent>(cfg.classifier.mock.script);
  } else {
    a.classifier = std::make_unique<OracleClassifierAgent>(data.categories, oc);
  }
  return a;
}

std::map<ImageId, std::string> load_captions(const std::filesystem::path& path) {
  const std::string text = read_text_file(path);
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ParseError("malformed captions file: " + std::string(e.what()), e.byte);
  }
  std::map<ImageId, std::string> out;
  if (j.is_object()) {
    for (const auto& [k, v] : j.items()) {
      if (!v.is_string()) throw ValidationError("captions file: caption for image " + k + " must be a string");
      try {
        out[std::stoll(k)] = v.get<std::string>();
      } catch (const std::exception&) {
        throw ValidationError("captions file: '" + k + "' is not an image id");
      }
    }
  } else if (j.is_array()) {
    for (const auto& e : j) {
      if (!e.is_object() || !e.contains("image_id") || !e.contains("caption") || !e["caption"].is_string()) {
        throw ValidationError("captions file: entries must be {image_id, caption}");
      }
      out[e["image_id"].get<ImageId>()] = e["caption"].get<std::string>();
    }
  } else {
    throw ValidationError("captions file must be an object or an array");
  }
  return out;
}

// ---- one image -----------------------------------------------------------------------------

ImageOutcome process_image(const SceneRecord& scene, const RunConfig& cfg, const CategoryMap& cats,
                           Agents& agents, const std::map<ImageId, std::string>& captions) {
  ImageOutcome out;
  out.image_id = scene.image_id;
  auto ctx_for = [&](const std::string& what, const std::string& purpose) {
    CallContext c;
    c.request_id = request_id(scene.image_id, what);
    c.purpose = purpose;
    c.scene = &scene;
    c.format = cfg.response_format;
    c.transcript = &out.envelopes;
    return c;
  };

  std::vector<Detection> dets;
  std::vector<Verdict> verdicts;
  try {
    // Stage 1: detections and caption.
    dets = agents.detector->detect(scene, ctx_for("detect", "detect"));
    for (auto& d : dets) {
      if (d.history.empty()) d.record(Stage::detect, d.label, std::string(to_string(cfg.detector.transport)));
    }
    out.detections = dets.size();

    if (auto it = captions.find(scene.image_id); it != captions.end()) {
      out.caption = it->second;
      out.caption_source = "captions-file";
    } else {
      ChatMessage msg{build_caption_request(scene, cfg.prompts), scene.image_url};
      out.caption = agents.linguistic->chat(msg, ctx_for("caption", "caption"));
      out.caption_source = !scene.image_url.empty() ? "image-url" : !scene.file_name.empty() ? "file-name" : "none";
    }

    // Stage 2: review.
    if (!dets.empty()) {
      const auto prompt = build_review_prompt(out.caption, dets, cfg.response_format, cfg.prompts);
      auto ctx = ctx_for("review", "review");
      ctx.dets = &dets;
      const std::string reply = agents.linguistic->chat({prompt.text, ""}, ctx);
      try {
        verdicts = parse_verdicts(reply, dets, cfg.response_format, &cats);
      } catch (const ProtocolError&) {
        if (cfg.response_format != ResponseFormat::structured_json ||
            cfg.protocol_fallback == ProtocolFallback::fail_image) {
          throw;
        }
        out.protocol_fallback = true;
        if (cfg.protocol_fallback == ProtocolFallback::free_text) {
          verdicts = parse_free_text_verdicts(reply, dets, &cats);
        } else {
          verdicts.clear();
          for (const auto& d : dets) verdicts.push_back({d.id, Judgment::reasonable, std::nullopt, ""});
        }
      }
    }
  } catch (const std::exception& e) {
    if (cfg.abort_on_agent_failure || !agent_failure(e)) throw;
    out.failed = true;
    out.error = e.what();
    out.audit.clear();
    return out;
  }

  // Stage 3: targeted correction of flagged detections.
  const auto vocab = cats.scoring_vocabulary();
  for (std::size_t k = 0; k < dets.size(); ++k) {
    const Detection& d = dets[k];
    AuditRecord r;
    r.image_id = scene.image_id;
    r.det_id = d.id;
    r.box = d.box;
    r.original_label = d.label;
    r.original_score = d.score;
    r.verdict = verdicts[k];
    r.final_label = d.label;
    r.final_score = d.score;
    r.disposition = Disposition::kept;

    if (r.verdict.judgment == Judgment::unreasonable) {
      const auto req = build_classification_request(scene, d, vocab, r.verdict.suspected_label);
      std::optional<ClassifyResult> res;
      try {
        auto c = agents.classifier->classify(req, ctx_for("classify/" + std::to_string(d.id), "classify"));
        check_classification(c, req);
        res = c;
      } catch (const std::exception& e) {
        if (cfg.abort_on_agent_failure || !agent_failure(e)) throw;
        r.classifier_error = e.what();
      }
      r.classifier = res;
      if (res && !res->abstained() && same_label(res->label, d.label)) {
        r.correction = "overridden";
      } else if (res && !res->abstained()) {
        r.correction = "relabeled";
        r.final_label = cats.canonical(res->label).value_or(trim(res->label));
        r.final_score = res->confidence;
        r.disposition = Disposition::relabeled;
      } else if (cfg.uncorrectable_policy == UncorrectablePolicy::drop) {
        r.correction = "uncorrectable-dropped";
        r.disposition = Disposition::dropped;
      } else {
        r.correction = "uncorrectable-retained";
      }
    }
    if (r.disposition != Disposition::dropped && !cats.is_scored(r.final_label)) {
      r.disposition = Disposition::excluded_from_export;
    }
    out.audit.push_back(std::move(r));
  }
  return out;
}

void apply_outcome(SceneRecord& scene, const ImageOutcome& o) {
  scene.caption = o.caption;
  scene.raw_detections.clear();
  scene.corrected.clear();
  scene.dispositions.clear();
  scene.verdicts.clear();
  for (const auto& r : o.audit) {
    Detection raw;
    raw.id = r.det_id;
    raw.image_id = r.image_id;
    raw.box = r.box;
    raw.label = r.original_label;
    raw.score = r.original_score;
    raw.record(Stage::detect, r.original_label, "detector");

    Detection fin = raw;
    fin.label = r.final_label;
    fin.score = r.final_score;
    fin.record(Stage::review, std::string(to_string(r.verdict.judgment)), "linguistic");
    if (r.final_label != r.original_label) fin.record(Stage::correct, r.original_label + " -> " + r.final_label, "classifier");
    fin.record(Stage::export_, std::string(to_string(r.disposition)), "pipeline");

    scene.raw_detections.push_back(std::move(raw));
    scene.corrected.push_back(std::move(fin));
    scene.dispositions.push_back(r.disposition);
    scene.verdicts.push_back(r.verdict);
  }
}

// ---- run -----------------------------------------------------------------------------------

namespace {

struct Checkpoint {
  std::string config_hash;
  json config;
  std::map<ImageId, ImageOutcome> done;
};

// Lines that fail to parse (a write cut short by a kill) are ignored.
Checkpoint read_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint " + path.string());
  Checkpoint cp;
  std::string line;
  bool header = true;
  while (std::getline(in, line)) {
    json j = json::parse(line, nullptr, false);
    if (j.is_discarded() || !j.is_object()) continue;
    if (header) {
      if (!j.contains("config_hash")) throw ValidationError("checkpoint " + path.string() + " lacks a header");
      cp.config_hash = j["config_hash"].get<std::string>();
      cp.config = j.value("config", json());
      header = false;
      continue;
    }
    try {
      auto o = ImageOutcome::from_json(j);
      if (o.complete()) cp.done[o.image_id] = std::move(o);
    } catch (const std::exception&) {
    }
  }
  if (header) throw ValidationError("checkpoint " + path.string() + " lacks a header");
  return cp;
}

std::string render_jsonl(const std::vector<json>& rows) {
  std::string s;
  for (const auto& r : rows) s += r.dump() + "\n";
  return s;
}

void write_artifacts(const RunConfig& cfg, const std::vector<const ImageOutcome*>& done) {
  if (!cfg.paths.audit_log.empty()) {
    std::vector<json> rows;
    for (const auto* o : done) {
      std::vector<const AuditRecord*> rs;
      for (const auto& r : o->audit) rs.push_back(&r);
      std::stable_sort(rs.begin(), rs.end(), [](auto* a, auto* b) { return a->det_id < b->det_id; });
      for (const auto* r : rs) rows.push_back(r->to_json());
    }
    write_text_file(cfg.paths.audit_log, render_jsonl(rows));
  }
  if (!cfg.paths.transcript.empty()) {
    std::vector<json> rows;
    for (const auto* o : done) {
      for (const auto& e : o->envelopes) rows.push_back(e.to_json());
    }
    write_text_file(cfg.paths.transcript, render_jsonl(rows));
  }
}

RunResult execute(const RunConfig& cfg, const AnnotationSet& data, Agents& agents, const RunOptions& opts) {
  const std::string hash = cfg.hash();
  std::map<ImageId, std::string> captions;
  if (!cfg.paths.captions.empty()) captions = load_captions(cfg.paths.captions);

  std::map<ImageId, ImageOutcome> resumed;
  if (opts.resume) {
    if (cfg.paths.checkpoint.empty()) throw ConfigError("paths.checkpoint: required to resume");
    if (std::filesystem::exists(cfg.paths.checkpoint)) {
      auto cp = read_checkpoint(cfg.paths.checkpoint);
      if (cp.config_hash != hash) {
        std::string msg = "checkpoint was written under a different config; changed fields:";
        for (const auto& d : config_diff(cp.config, cfg.canonical_json())) msg += "\n  " + d;
        throw ConfigError(msg);
      }
      resumed = std::move(cp.done);
    }
  }

  // Fresh checkpoint: header plus the outcomes carried over.
  std::unique_ptr<std::ofstream> cp_out;
  std::mutex cp_mutex;
  if (!cfg.paths.checkpoint.empty()) {
    const std::filesystem::path p(cfg.paths.checkpoint);
    if (p.has_parent_path()) std::filesystem::create_directories(p.parent_path());
    std::string head = json{{"config_hash", hash}, {"config", cfg.canonical_json()}}.dump() + "\n";
    for (const auto& s : data.scenes) {
      if (auto it = resumed.find(s.image_id); it != resumed.end()) head += it->second.to_json().dump() + "\n";
    }
    write_text_file(p, head);
    cp_out = std::make_unique<std::ofstream>(p, std::ios::binary | std::ios::app);
    if (!*cp_out) throw IoError("cannot append to checkpoint " + p.string());
  }

  std::vector<std::optional<ImageOutcome>> outcomes(data.scenes.size());
  std::vector<std::size_t> todo;
  for (std::size_t i = 0; i < data.scenes.size(); ++i) {
    if (auto it = resumed.find(data.scenes[i].image_id); it != resumed.end()) {
      outcomes[i] = std::move(it->second);
    } else {
      todo.push_back(i);
    }
  }

  std::atomic<std::size_t> next{0};
  std::atomic<std::size_t> finished{0};
  std::atomic<bool> halted{false};
  std::exception_ptr fatal;
  std::mutex fatal_mutex;
  auto stop_requested = [&] {
    if (halted.load()) return true;
    if (opts.stop && opts.stop->load()) return true;
    if (opts.stop_after && finished.load() >= *opts.stop_after) return true;
    return false;
  };

  auto worker = [&] {
    for (;;) {
      if (stop_requested()) {
        halted = true;
        return;
      }
      const std::size_t n = next.fetch_add(1);
      if (n >= todo.size()) return;
      const std::size_t i = todo[n];
      try {
        auto o = process_image(data.scenes[i], cfg, data.categories, agents, captions);
        if (cp_out && !o.failed) {
          std::lock_guard lock(cp_mutex);
          *cp_out << o.to_json().dump() << "\n";
          cp_out->flush();
        }
        outcomes[i] = std::move(o);
        ++finished;
      } catch (...) {
        std::lock_guard lock(fatal_mutex);
        if (!fatal) fatal = std::current_exception();
        halted = true;
        return;
      }
    }
  };

  const auto threads = static_cast<std::size_t>(std::max(1, cfg.parallelism));
  if (threads == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < std::min(threads, std::max<std::size_t>(1, todo.size())); ++t) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
  }
  if (cp_out) cp_out->close();
  if (fatal) std::rethrow_exception(fatal);

  RunResult result;
  RunSummary& sum = result.summary;
  sum.config_hash = hash;
  sum.images = data.scenes.size();
  sum.resumed = data.scenes.size() - todo.size();
  sum.correction.match_iou = cfg.oracle.match_iou;

  std::vector<const ImageOutcome*> done;
  std::vector<SceneRecord> completed;
  for (std::size_t i = 0; i < data.scenes.size(); ++i) {
    if (!outcomes[i]) {
      sum.interrupted = true;
      continue;
    }
    const ImageOutcome& o = *outcomes[i];
    if (o.failed) {
      sum.failed.emplace_back(o.image_id, o.error);
      continue;
    }
    done.push_back(&o);
    SceneRecord s = data.scenes[i];
    apply_outcome(s, o);
    completed.push_back(std::move(s));

    ++sum.completed;
    sum.detections += o.audit.size();
    if (o.protocol_fallback) ++sum.protocol_fallbacks;
    ++sum.caption_sources[o.caption_source];
    for (const auto& r : o.audit) {
      if (r.verdict.judgment == Judgment::unreasonable) {
        ++sum.flagged;
        if (r.correction == "relabeled") {
          ++sum.relabeled;
        } else if (r.disposition == Disposition::dropped) {
          ++sum.dropped;
        } else {
          ++sum.retained_after_flag;
        }
      }
      if (r.disposition == Disposition::excluded_from_export) ++sum.excluded;
    }
  }

  write_artifacts(cfg, done);
  for (const auto& o : outcomes) {
    if (o) result.outcomes.push_back(*o);
  }
  if (sum.interrupted) {
    result.scenes = std::move(completed);
    return result;
  }

  sum.correction = correction_metrics(completed, data.categories, cfg.oracle.match_iou);
  sum.ap_before = evaluate_coco(completed, data.categories, DetectionSet::raw);
  sum.ap_after = evaluate_coco(completed, data.categories, DetectionSet::final_);

  if (!cfg.paths.results.empty()) write_coco_results(completed, cfg.paths.results, data.categories);
  if (!cfg.paths.summary.empty()) write_text_file(cfg.paths.summary, sum.to_json().dump(2) + "\n");
  result.scenes = std::move(completed);
  return result;
}

}  // namespace

RunResult run_pipeline(const RunConfig& cfg, const AnnotationSet& data, Agents& agents, const RunOptions& opts) {
  cfg.validate();
  return execute(cfg, data, agents, opts);
}

RunResult run_pipeline(const RunConfig& cfg, const RunOptions& opts) {
  cfg.validate();
  LoadStats stats;
  AnnotationSet data = load_coco_annotations(cfg.paths.annotations, cfg.parse_mode, &stats);
  Agents agents = make_agents(cfg, data);
  return execute(cfg, data, agents, opts);
}

RunResult resume_run(const RunConfig& cfg, const RunOptions& opts) {
  RunOptions o = opts;
  o.resume = true;
  return run_pipeline(cfg, o);
}

}  // namespace vla
