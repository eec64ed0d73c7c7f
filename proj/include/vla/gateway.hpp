#pragma once

#include <atomic>
#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <semaphore>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "vla/category_map.hpp"
#include "vla/prompt.hpp"
#include "vla/types.hpp"

namespace vla {

enum class AgentRole { detector, linguistic, classifier };
enum class TransportKind { http_chat, http_vision, file, mock };

std::string_view to_string(AgentRole r);
std::optional<AgentRole> agent_role_from_string(std::string_view s);
std::string_view to_string(TransportKind t);
std::optional<TransportKind> transport_from_string(std::string_view s);

/// "VLA_LINGUISTIC_API_KEY" etc.
std::string default_credential_env(AgentRole role);

struct MockSettings {
  std::string kind = "oracle";  // "oracle" | "scripted"
  std::vector<std::string> script;
};

struct AgentEndpointConfig {
  AgentRole role = AgentRole::detector;
  TransportKind transport = TransportKind::mock;
  std::string base_url;
  std::string path;  // file transport
  std::string model;
  double timeout_s = 60.0;
  int max_retries = 3;
  std::string api_key_env;  // empty: no credential is sent
  std::string auth_header = "Authorization";
  std::string auth_prefix = "Bearer ";
  int max_concurrent = 4;
  double backoff_base_s = 1.0;
  double backoff_factor = 2.0;
  MockSettings mock;

  /// Throws ConfigError naming the offending field, e.g. "agents.detector.base_url".
  void validate(const std::string& field_prefix) const;

  static AgentEndpointConfig from_json(AgentRole role, const nlohmann::json& j,
                                       const std::string& field_prefix);
  nlohmann::json to_json() const;
};

/// One attempt of one agent call, as recorded in the transcript.
struct AgentEnvelope {
  AgentRole role = AgentRole::detector;
  std::string request_id;
  int attempt = 1;
  std::string transport;
  std::string endpoint;
  std::string purpose;  // detect | caption | review | classify
  std::string format;   // response format for review calls
  nlohmann::json request;
  nlohmann::json response;  // null when the attempt failed
  std::string status = "ok";
  std::string error;
  std::int64_t request_ms = 0;
  std::int64_t response_ms = 0;

  nlohmann::json to_json() const;
  static AgentEnvelope from_json(const nlohmann::json& j);
};

/// Per-call context. `scene` and `dets` are visible only to in-process agents; network
/// transports see what goes on the wire.
struct CallContext {
  std::string request_id;
  std::string purpose;
  const SceneRecord* scene = nullptr;
  const std::vector<Detection>* dets = nullptr;
  ResponseFormat format = ResponseFormat::structured_json;
  std::vector<AgentEnvelope>* transcript = nullptr;

  void record(AgentEnvelope env) const {
    if (transcript) transcript->push_back(std::move(env));
  }
};

struct ChatMessage {
  std::string text;
  std::string image_url;  // sent as an image_url content part when set
};

struct ClassifyResult {
  std::string label;
  double confidence = 0.0;

  /// The classifier declined to pick: ("unknown", 0.0).
  bool abstained() const noexcept { return label == "unknown" && confidence == 0.0; }
};

/// Throws ProtocolError unless the label is a candidate (or an abstention) and the
/// confidence lies in [0,1].
void check_classification(const ClassifyResult& r, const ClassificationRequest& req);

class DetectorAgent {
 public:
  virtual ~DetectorAgent() = default;
  virtual std::vector<Detection> detect(const SceneRecord& scene, const CallContext& ctx) = 0;
};

class LinguisticAgent {
 public:
  virtual ~LinguisticAgent() = default;
  virtual std::string chat(const ChatMessage& msg, const CallContext& ctx) = 0;
};

class ClassifierAgent {
 public:
  virtual ~ClassifierAgent() = default;
  virtual ClassifyResult classify(const ClassificationRequest& req, const CallContext& ctx) = 0;
};

// ---- HTTP plumbing -------------------------------------------------------------------------

struct HttpResult {
  int status = 0;  // 0: no HTTP response (connect failure, timeout)
  std::string body;
  std::string error;
};

using HttpHeaders = std::multimap<std::string, std::string>;

class HttpPoster {
 public:
  virtual ~HttpPoster() = default;
  virtual HttpResult post(const std::string& path, const std::string& body,
                          const HttpHeaders& headers, double timeout_s) = 0;
};

/// cpp-httplib backed poster. `base_url` is "scheme://host[:port][/prefix]".
std::unique_ptr<HttpPoster> make_http_poster(const std::string& base_url);

/// Timeouts, connection failures, 408, 429 and 5xx are retried.
bool is_transient_status(int status) noexcept;

using Sleeper = std::function<void(double seconds)>;
Sleeper default_sleeper();

/// Delay before retry number `attempt` (1-based): base * factor^(attempt-1) * (1 + jitter),
/// jitter in [0, 0.25) derived from the request id so transcripts stay reproducible.
double backoff_delay(const AgentEndpointConfig& cfg, const std::string& request_id, int attempt);

/// Shared retry loop for the HTTP transports. Records one envelope per attempt, bounds
/// in-flight requests with the endpoint's concurrency cap, and returns the parsed 2xx body.
class HttpEndpoint {
 public:
  HttpEndpoint(AgentEndpointConfig cfg, std::unique_ptr<HttpPoster> poster, Sleeper sleeper);

  nlohmann::json call(const std::string& path, const nlohmann::json& request,
                      const CallContext& ctx);
  const AgentEndpointConfig& config() const noexcept { return cfg_; }
  std::string endpoint_name(const std::string& path) const { return cfg_.base_url + path; }

 private:
  AgentEndpointConfig cfg_;
  std::unique_ptr<HttpPoster> poster_;
  Sleeper sleep_;
  std::string credential_;
  std::counting_semaphore<1024> slots_;
};

/// Resolves the configured credential. Throws CredentialError naming the variable when it is
/// configured but unset.
std::string resolve_credential(const AgentEndpointConfig& cfg);

// ---- Transports ----------------------------------------------------------------------------

/// Serves precomputed detections from a COCO results file.
class FileDetector : public DetectorAgent {
 public:
  FileDetector(const AgentEndpointConfig& cfg, const CategoryMap& cats,
               const std::vector<SceneRecord>& scenes);
  std::vector<Detection> detect(const SceneRecord& scene, const CallContext& ctx) override;

 private:
  std::string path_;
  std::string transport_;
  const CategoryMap& cats_;
  std::map<ImageId, std::vector<Detection>> by_image_;
};

class HttpVisionDetector : public DetectorAgent {
 public:
  HttpVisionDetector(AgentEndpointConfig cfg, const CategoryMap& cats,
                     std::unique_ptr<HttpPoster> poster = nullptr, Sleeper sleeper = nullptr);
  std::vector<Detection> detect(const SceneRecord& scene, const CallContext& ctx) override;

 private:
  HttpEndpoint http_;
  const CategoryMap& cats_;
};

/// Chat-completions client: POST <base>/v1/chat/completions, temperature 0, single turn.
class HttpChatAgent : public LinguisticAgent {
 public:
  explicit HttpChatAgent(AgentEndpointConfig cfg, std::unique_ptr<HttpPoster> poster = nullptr,
                         Sleeper sleeper = nullptr);
  std::string chat(const ChatMessage& msg, const CallContext& ctx) override;

  static nlohmann::json make_request(const std::string& model, const ChatMessage& msg,
                                     const std::string& request_id);

 private:
  HttpEndpoint http_;
};

class HttpVisionClassifier : public ClassifierAgent {
 public:
  explicit HttpVisionClassifier(AgentEndpointConfig cfg,
                                std::unique_ptr<HttpPoster> poster = nullptr,
                                Sleeper sleeper = nullptr);
  ClassifyResult classify(const ClassificationRequest& req, const CallContext& ctx) override;

 private:
  HttpEndpoint http_;
};

/// Replies with the scripted texts in order, cycling.
class ScriptedLinguisticAgent : public LinguisticAgent {
 public:
  explicit ScriptedLinguisticAgent(std::vector<std::string> script);
  std::string chat(const ChatMessage& msg, const CallContext& ctx) override;

 private:
  std::vector<std::string> script_;
  std::atomic<std::size_t> next_{0};
};

/// Answers with the first scripted label that is a candidate (first candidate otherwise),
/// confidence 1.0.
class ScriptedClassifierAgent : public ClassifierAgent {
 public:
  explicit ScriptedClassifierAgent(std::vector<std::string> script);
  ClassifyResult classify(const ClassificationRequest& req, const CallContext& ctx) override;

 private:
  std::vector<std::string> script_;
};

// Wire helpers shared with the mock server and the protocol validator.
nlohmann::json classification_request_json(const ClassificationRequest& req);
ClassificationRequest classification_request_from_json(const nlohmann::json& j);
nlohmann::json detect_request_json(const SceneRecord& scene);

}  // namespace vla
