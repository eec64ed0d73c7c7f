#include "vla/gateway.hpp"

#include <cctype>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <thread>

#include "vla/coco_io.hpp"
#include "vla/error.hpp"

namespace vla {

using nlohmann::json;

namespace {

constexpr std::pair<AgentRole, std::string_view> kRoles[] = {
    {AgentRole::detector, "detector"},
    {AgentRole::linguistic, "linguistic"},
    {AgentRole::classifier, "classifier"},
};

constexpr std::pair<TransportKind, std::string_view> kTransports[] = {
    {TransportKind::http_chat, "http-chat"},
    {TransportKind::http_vision, "http-vision"},
    {TransportKind::file, "file"},
    {TransportKind::mock, "mock"},
};

std::int64_t now_ms() {
  using namespace std::chrono;
  return duration_cast<milliseconds>(system_clock::now().time_since_epoch()).count();
}

std::uint64_t fnv1a(std::string_view s, std::uint64_t h = 1469598103934665603ull) {
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

}  // namespace

std::string_view to_string(AgentRole r) {
  for (const auto& [v, n] : kRoles) {
    if (v == r) return n;
  }
  return "?";
}

std::optional<AgentRole> agent_role_from_string(std::string_view s) {
  for (const auto& [v, n] : kRoles) {
    if (n == s) return v;
  }
  return std::nullopt;
}

std::string_view to_string(TransportKind t) {
  for (const auto& [v, n] : kTransports) {
    if (v == t) return n;
  }
  return "?";
}

std::optional<TransportKind> transport_from_string(std::string_view s) {
  for (const auto& [v, n] : kTransports) {
    if (n == s) return v;
  }
  return std::nullopt;
}

std::string default_credential_env(AgentRole role) {
  std::string r(to_string(role));
  for (auto& c : r) c = static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
  return "VLA_" + r + "_API_KEY";
}

void AgentEndpointConfig::validate(const std::string& p) const {
  const bool http = transport == TransportKind::http_chat || transport == TransportKind::http_vision;
  if (http && base_url.empty()) throw ConfigError(p + ".base_url is required for " + std::string(to_string(transport)));
  if (transport == TransportKind::file && path.empty()) throw ConfigError(p + ".path is required for the file transport");
  if (transport == TransportKind::http_chat && role != AgentRole::linguistic) {
    throw ConfigError(p + ".transport http-chat is only valid for the linguistic agent");
  }
  if (transport == TransportKind::http_vision && role == AgentRole::linguistic) {
    throw ConfigError(p + ".transport http-vision is not valid for the linguistic agent");
  }
  if (transport == TransportKind::file && role != AgentRole::detector) {
    throw ConfigError(p + ".transport file is only valid for the detector");
  }
  if (transport == TransportKind::mock && role == AgentRole::detector) {
    // The mock detector is the file-backed one.
    if (path.empty()) throw ConfigError(p + ".path is required for the mock (file-backed) detector");
  }
  if (!(timeout_s > 0.0)) throw ConfigError(p + ".timeout_s must be positive");
  if (max_retries < 0) throw ConfigError(p + ".max_retries must be >= 0");
  if (max_concurrent < 1 || max_concurrent > 1024) throw ConfigError(p + ".max_concurrent must be in [1, 1024]");
  if (mock.kind != "oracle" && mock.kind != "scripted") throw ConfigError(p + ".mock.kind must be oracle or scripted");
}

AgentEndpointConfig AgentEndpointConfig::from_json(AgentRole role, const json& j,
                                                   const std::string& p) {
  if (!j.is_object()) throw ConfigError(p + " must be an object");
  AgentEndpointConfig c;
  c.role = role;
  auto str = [&](const char* key, std::string& out) {
    if (!j.contains(key)) return;
    if (!j[key].is_string()) throw ConfigError(p + "." + key + " must be a string");
    out = j[key].get<std::string>();
  };
  std::string transport;
  str("transport", transport);
  if (transport.empty()) throw ConfigError(p + ".transport is required");
  auto t = transport_from_string(transport);
  if (!t) throw ConfigError(p + ".transport '" + transport + "' is not one of http-chat, http-vision, file, mock");
  c.transport = *t;
  str("base_url", c.base_url);
  str("path", c.path);
  str("model", c.model);
  str("auth_header", c.auth_header);
  str("auth_prefix", c.auth_prefix);
  const bool http = c.transport == TransportKind::http_chat || c.transport == TransportKind::http_vision;
  if (http) c.api_key_env = default_credential_env(role);
  if (j.contains("api_key_env")) {
    if (j["api_key_env"].is_null()) {
      c.api_key_env.clear();
    } else {
      str("api_key_env", c.api_key_env);
    }
  }
  auto num = [&](const char* key, auto& out) {
    if (!j.contains(key)) return;
    if (!j[key].is_number()) throw ConfigError(p + "." + key + " must be a number");
    out = j[key].get<std::remove_reference_t<decltype(out)>>();
  };
  num("timeout_s", c.timeout_s);
  num("max_retries", c.max_retries);
  num("max_concurrent", c.max_concurrent);
  num("backoff_base_s", c.backoff_base_s);
  num("backoff_factor", c.backoff_factor);
  if (j.contains("mock")) {
    const auto& m = j["mock"];
    if (!m.is_object()) throw ConfigError(p + ".mock must be an object");
    c.mock.kind = m.value("kind", std::string("oracle"));
    if (m.contains("script")) {
      if (!m["script"].is_array()) throw ConfigError(p + ".mock.script must be an array of strings");
      for (const auto& s : m["script"]) {
        if (!s.is_string()) throw ConfigError(p + ".mock.script must be an array of strings");
        c.mock.script.push_back(s.get<std::string>());
      }
    }
  }
  c.validate(p);
  return c;
}

json AgentEndpointConfig::to_json() const {
  json j;
  j["transport"] = std::string(to_string(transport));
  if (!base_url.empty()) j["base_url"] = base_url;
  if (!path.empty()) j["path"] = path;
  if (!model.empty()) j["model"] = model;
  j["timeout_s"] = timeout_s;
  j["max_retries"] = max_retries;
  j["api_key_env"] = api_key_env.empty() ? json(nullptr) : json(api_key_env);
  j["auth_header"] = auth_header;
  j["auth_prefix"] = auth_prefix;
  j["max_concurrent"] = max_concurrent;
  j["backoff_base_s"] = backoff_base_s;
  j["backoff_factor"] = backoff_factor;
  j["mock"] = {{"kind", mock.kind}, {"script", mock.script}};
  return j;
}

json AgentEnvelope::to_json() const {
  json j;
  j["role"] = std::string(to_string(role));
  j["request_id"] = request_id;
  j["attempt"] = attempt;
  j["transport"] = transport;
  j["endpoint"] = endpoint;
  j["purpose"] = purpose;
  if (!format.empty()) j["format"] = format;
  j["payload"] = {{"request", request}, {"response", response}};
  j["status"] = status;
  if (!error.empty()) j["error"] = error;
  j["timing"] = {{"request_ms", request_ms}, {"response_ms", response_ms}};
  return j;
}

AgentEnvelope AgentEnvelope::from_json(const json& j) {
  AgentEnvelope e;
  auto role = agent_role_from_string(j.at("role").get<std::string>());
  if (!role) throw ValidationError("unknown role '" + j.at("role").get<std::string>() + "'");
  e.role = *role;
  e.request_id = j.at("request_id").get<std::string>();
  e.attempt = j.at("attempt").get<int>();
  e.transport = j.value("transport", std::string{});
  e.endpoint = j.value("endpoint", std::string{});
  e.purpose = j.value("purpose", std::string{});
  e.format = j.value("format", std::string{});
  const auto& payload = j.at("payload");
  e.request = payload.value("request", json());
  e.response = payload.value("response", json());
  e.status = j.value("status", std::string("ok"));
  e.error = j.value("error", std::string{});
  if (j.contains("timing")) {
    e.request_ms = j["timing"].value("request_ms", std::int64_t{0});
    e.response_ms = j["timing"].value("response_ms", std::int64_t{0});
  }
  return e;
}

void check_classification(const ClassifyResult& r, const ClassificationRequest& req) {
  if (!(r.confidence >= 0.0 && r.confidence <= 1.0)) {
    throw ProtocolError("classifier confidence " + std::to_string(r.confidence) + " outside [0,1]");
  }
  if (r.abstained()) return;
  const auto key = to_lower_ascii(trim(r.label));
  for (const auto& c : req.candidates) {
    if (to_lower_ascii(trim(c)) == key) return;
  }
  throw ProtocolError("classifier returned label '" + r.label + "' outside the candidate set");
}

bool is_transient_status(int status) noexcept {
  return status == 0 || status == 408 || status == 429 || (status >= 500 && status <= 599);
}

Sleeper default_sleeper() {
  return [](double s) {
    if (s > 0) std::this_thread::sleep_for(std::chrono::duration<double>(s));
  };
}

double backoff_delay(const AgentEndpointConfig& cfg, const std::string& request_id, int attempt) {
  const auto h = fnv1a(std::to_string(attempt), fnv1a(request_id));
  const double jitter = 0.25 * static_cast<double>(h >> 11) * 0x1.0p-53;
  return cfg.backoff_base_s * std::pow(cfg.backoff_factor, attempt - 1) * (1.0 + jitter);
}

std::string resolve_credential(const AgentEndpointConfig& cfg) {
  if (cfg.api_key_env.empty()) return {};
  const char* v = std::getenv(cfg.api_key_env.c_str());
  if (!v || !*v) {
    throw CredentialError("missing credentials for the " + std::string(to_string(cfg.role)) +
                          " agent: environment variable " + cfg.api_key_env + " is not set");
  }
  return v;
}

HttpEndpoint::HttpEndpoint(AgentEndpointConfig cfg, std::unique_ptr<HttpPoster> poster,
                           Sleeper sleeper)
    : cfg_(std::move(cfg)),
      poster_(poster ? std::move(poster) : make_http_poster(cfg_.base_url)),
      sleep_(sleeper ? std::move(sleeper) : default_sleeper()),
      credential_(resolve_credential(cfg_)),
      slots_(cfg_.max_concurrent) {}

json HttpEndpoint::call(const std::string& path, const json& request, const CallContext& ctx) {
  HttpHeaders headers{{"Content-Type", "application/json"}};
  if (!credential_.empty()) headers.emplace(cfg_.auth_header, cfg_.auth_prefix + credential_);
  const std::string body = request.dump();
  const std::string endpoint = endpoint_name(path);

  for (int attempt = 1;; ++attempt) {
    AgentEnvelope env;
    env.role = cfg_.role;
    env.request_id = ctx.request_id;
    env.attempt = attempt;
    env.transport = std::string(to_string(cfg_.transport));
    env.endpoint = endpoint;
    env.purpose = ctx.purpose;
    if (ctx.purpose == "review") env.format = std::string(to_string(ctx.format));
    env.request = request;

    slots_.acquire();
    env.request_ms = now_ms();
    HttpResult res;
    try {
      res = poster_->post(path, body, headers, cfg_.timeout_s);
    } catch (...) {
      slots_.release();
      throw;
    }
    env.response_ms = now_ms();
    slots_.release();

    const bool ok = res.status >= 200 && res.status < 300;
    json parsed = json::parse(res.body, nullptr, false);
    if (ok && !parsed.is_discarded()) {
      env.response = parsed;
      ctx.record(env);
      return parsed;
    }

    env.status = "error";
    if (res.status == 0) {
      env.error = res.error.empty() ? "transport failure" : res.error;
    } else {
      env.error = "HTTP " + std::to_string(res.status);
      env.response = parsed.is_discarded() ? json(res.body) : parsed;
    }
    if (ok) env.error = "response body is not JSON";
    ctx.record(env);

    if (ok) throw ProtocolError(endpoint + ": response body is not JSON", res.body);
    if (res.status == 401 || res.status == 403) {
      throw CredentialError(endpoint + ": authentication failed (HTTP " + std::to_string(res.status) + ")");
    }
    if (!is_transient_status(res.status)) {
      throw ProtocolError(endpoint + ": HTTP " + std::to_string(res.status) + " " + res.body, res.body);
    }
    if (attempt > cfg_.max_retries) {
      throw AgentUnavailableError(endpoint + " unavailable after " + std::to_string(attempt) +
                                  " attempt(s): " + env.error);
    }
    sleep_(backoff_delay(cfg_, ctx.request_id, attempt));
  }
}

// ---- file detector -------------------------------------------------------------------------

FileDetector::FileDetector(const AgentEndpointConfig& cfg, const CategoryMap& cats,
                           const std::vector<SceneRecord>& scenes)
    : path_(cfg.path), transport_(to_string(cfg.transport)), cats_(cats) {
  for (auto& d : load_coco_results(cfg.path, cats, &scenes)) {
    by_image_[d.image_id].push_back(std::move(d));
  }
}

std::vector<Detection> FileDetector::detect(const SceneRecord& scene, const CallContext& ctx) {
  std::vector<Detection> out;
  if (auto it = by_image_.find(scene.image_id); it != by_image_.end()) out = it->second;
  AgentEnvelope env;
  env.role = AgentRole::detector;
  env.request_id = ctx.request_id;
  env.transport = transport_;
  env.endpoint = "file:" + path_;
  env.purpose = "detect";
  env.request = detect_request_json(scene);
  env.response = json::parse(render_detections(out, cats_));
  ctx.record(std::move(env));
  return out;
}

json detect_request_json(const SceneRecord& scene) {
  json j{{"image_id", scene.image_id}, {"width", scene.width}, {"height", scene.height}};
  if (!scene.file_name.empty()) j["file_name"] = scene.file_name;
  if (!scene.image_url.empty()) j["image_url"] = scene.image_url;
  return j;
}

HttpVisionDetector::HttpVisionDetector(AgentEndpointConfig cfg, const CategoryMap& cats,
                                       std::unique_ptr<HttpPoster> poster, Sleeper sleeper)
    : http_(std::move(cfg), std::move(poster), std::move(sleeper)), cats_(cats) {}

std::vector<Detection> HttpVisionDetector::detect(const SceneRecord& scene, const CallContext& ctx) {
  const json body = http_.call("/detect", detect_request_json(scene), ctx);
  std::vector<Detection> out;
  try {
    // Same schema as a results file; reuse its validation.
    std::vector<SceneRecord> one{SceneRecord{}};
    one[0].image_id = scene.image_id;
    one[0].width = scene.width;
    one[0].height = scene.height;
    out = parse_coco_results(body.dump(), cats_, &one);
  } catch (const Error& e) {
    throw ProtocolError(http_.endpoint_name("/detect") + ": " + e.what(), body.dump());
  }
  return out;
}

// ---- chat ----------------------------------------------------------------------------------

json HttpChatAgent::make_request(const std::string& model, const ChatMessage& msg,
                                 const std::string& request_id) {
  json content;
  if (msg.image_url.empty()) {
    content = msg.text;
  } else {
    content = json::array({{{"type", "text"}, {"text", msg.text}},
                           {{"type", "image_url"}, {"image_url", {{"url", msg.image_url}}}}});
  }
  return {{"model", model},
          {"messages", json::array({{{"role", "user"}, {"content", content}}})},
          {"temperature", 0},
          {"user", request_id}};
}

HttpChatAgent::HttpChatAgent(AgentEndpointConfig cfg, std::unique_ptr<HttpPoster> poster,
                             Sleeper sleeper)
    : http_(std::move(cfg), std::move(poster), std::move(sleeper)) {}

std::string HttpChatAgent::chat(const ChatMessage& msg, const CallContext& ctx) {
  const json body = http_.call("/v1/chat/completions",
                               make_request(http_.config().model, msg, ctx.request_id), ctx);
  try {
    const auto& content = body.at("choices").at(0).at("message").at("content");
    if (content.is_string()) return content.get<std::string>();
  } catch (const json::exception&) {
  }
  throw ProtocolError(http_.endpoint_name("/v1/chat/completions") +
                          ": response lacks choices[0].message.content",
                      body.dump());
}

// ---- classify ------------------------------------------------------------------------------

json classification_request_json(const ClassificationRequest& req) {
  json j{{"image_id", req.image_id},
         {"det_id", req.det_id},
         {"region", json::array({req.region.x1, req.region.y1, req.region.x2, req.region.y2})},
         {"candidates", req.candidates}};
  if (!req.file_name.empty()) j["file_name"] = req.file_name;
  if (!req.image_url.empty()) j["image_url"] = req.image_url;
  return j;
}

ClassificationRequest classification_request_from_json(const json& j) {
  ClassificationRequest r;
  r.image_id = j.at("image_id").get<ImageId>();
  r.det_id = j.value("det_id", DetId{0});
  const auto& reg = j.at("region");
  if (!reg.is_array() || reg.size() != 4) throw ValidationError("region must be [x1, y1, x2, y2]");
  r.region = BoundingBox::make(reg[0].get<double>(), reg[1].get<double>(), reg[2].get<double>(),
                               reg[3].get<double>());
  r.candidates = j.at("candidates").get<std::vector<std::string>>();
  r.file_name = j.value("file_name", std::string{});
  r.image_url = j.value("image_url", std::string{});
  return r;
}

HttpVisionClassifier::HttpVisionClassifier(AgentEndpointConfig cfg,
                                           std::unique_ptr<HttpPoster> poster, Sleeper sleeper)
    : http_(std::move(cfg), std::move(poster), std::move(sleeper)) {}

ClassifyResult HttpVisionClassifier::classify(const ClassificationRequest& req,
                                              const CallContext& ctx) {
  const json body = http_.call("/classify", classification_request_json(req), ctx);
  ClassifyResult r;
  if (!body.is_object() || !body.contains("label") || !body["label"].is_string() ||
      !body.contains("confidence") || !body["confidence"].is_number()) {
    throw ProtocolError(http_.endpoint_name("/classify") + ": expected {label, confidence}", body.dump());
  }
  r.label = body["label"].get<std::string>();
  r.confidence = body["confidence"].get<double>();
  check_classification(r, req);
  return r;
}

// ---- scripted mocks ------------------------------------------------------------------------

ScriptedLinguisticAgent::ScriptedLinguisticAgent(std::vector<std::string> script)
    : script_(std::move(script)) {
  if (script_.empty()) throw ConfigError("scripted linguistic mock needs at least one reply");
}

std::string ScriptedLinguisticAgent::chat(const ChatMessage& msg, const CallContext& ctx) {
  const std::string& reply = script_[next_.fetch_add(1) % script_.size()];
  AgentEnvelope env;
  env.role = AgentRole::linguistic;
  env.request_id = ctx.request_id;
  env.transport = "mock";
  env.endpoint = "mock:scripted";
  env.purpose = ctx.purpose;
  if (ctx.purpose == "review") env.format = std::string(to_string(ctx.format));
  env.request = HttpChatAgent::make_request("mock", msg, ctx.request_id);
  env.response = {{"choices", json::array({{{"message", {{"role", "assistant"}, {"content", reply}}}}})}};
  ctx.record(std::move(env));
  return reply;
}

ScriptedClassifierAgent::ScriptedClassifierAgent(std::vector<std::string> script)
    : script_(std::move(script)) {}

ClassifyResult ScriptedClassifierAgent::classify(const ClassificationRequest& req,
                                                 const CallContext& ctx) {
  ClassifyResult r{"unknown", 0.0};
  for (const auto& s : script_) {
    for (const auto& c : req.candidates) {
      if (to_lower_ascii(c) == to_lower_ascii(s)) {
        r = {c, 1.0};
        break;
      }
    }
    if (!r.abstained()) break;
  }
  if (r.abstained() && !req.candidates.empty()) r = {req.candidates.front(), 1.0};
  AgentEnvelope env;
  env.role = AgentRole::classifier;
  env.request_id = ctx.request_id;
  env.transport = "mock";
  env.endpoint = "mock:scripted";
  env.purpose = "classify";
  env.request = classification_request_json(req);
  env.response = {{"label", r.label}, {"confidence", r.confidence}};
  ctx.record(std::move(env));
  return r;
}

}  // namespace vla
