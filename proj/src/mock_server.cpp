#include "vla/mock_server.hpp"

#include <chrono>

#include <httplib.h>
#include <nlohmann/json.hpp>

#include "vla/error.hpp"
#include "vla/gateway.hpp"
#include "vla/prompt.hpp"

namespace vla {

using nlohmann::json;

namespace {

std::string error_body(const std::string& msg) { return json{{"error", msg}}.dump(); }

std::string chat_text(const json& req) {
  const auto& content = req.at("messages").at(0).at("content");
  if (content.is_string()) return content.get<std::string>();
  std::string text;
  for (const auto& part : content) {
    if (part.value("type", "") == "text") text += part.value("text", "");
  }
  return text;
}

}  // namespace

MockServer::MockServer(AnnotationSet data, std::vector<Detection> detections, OracleConfig cfg)
    : data_(std::move(data)), cfg_(cfg) {
  for (std::size_t i = 0; i < data_.scenes.size(); ++i) scene_index_[data_.scenes[i].image_id] = i;
  for (auto& d : detections) dets_[d.image_id].push_back(std::move(d));
}

MockServer::~MockServer() { stop(); }

const SceneRecord* MockServer::scene(ImageId id) const {
  auto it = scene_index_.find(id);
  return it == scene_index_.end() ? nullptr : &data_.scenes[it->second];
}

void MockServer::require_key(std::string key) { key_ = std::move(key); }

void MockServer::set_detect_body(std::string body) {
  std::lock_guard lock(mutex_);
  detect_body_ = std::move(body);
}

void MockServer::inject_failures(const std::string& path, int count, int status, int delay_ms) {
  std::lock_guard lock(mutex_);
  faults_[path] = {count, status, delay_ms};
}

std::size_t MockServer::request_count(const std::string& path) const {
  std::lock_guard lock(mutex_);
  auto it = counts_.find(path);
  return it == counts_.end() ? 0 : it->second;
}

bool MockServer::take_fault(const std::string& path, Fault& out) {
  std::lock_guard lock(mutex_);
  ++counts_[path];
  auto it = faults_.find(path);
  if (it == faults_.end() || it->second.remaining <= 0) return false;
  --it->second.remaining;
  out = it->second;
  return true;
}

std::string MockServer::handle_chat(const std::string& body, int& status) {
  json req = json::parse(body, nullptr, false);
  if (req.is_discarded() || !req.is_object() || !req.contains("messages")) {
    status = 400;
    return error_body("expected a chat-completions request");
  }
  const std::string user = req.value("user", "");
  const auto slash = user.find('/');
  ImageId image = 0;
  try {
    image = std::stoll(user.substr(0, slash));
  } catch (const std::exception&) {
    status = 400;
    return error_body("the 'user' field must carry the request id '<image_id>/<purpose>'");
  }
  const SceneRecord* s = scene(image);
  if (!s) {
    status = 404;
    return error_body("unknown image " + std::to_string(image));
  }
  const std::string purpose = slash == std::string::npos ? "" : user.substr(slash + 1);
  std::string text;
  try {
    text = chat_text(req);
  } catch (const json::exception&) {
    status = 400;
    return error_body("messages[0].content must be a string or a list of parts");
  }

  std::string reply;
  if (purpose == "caption") {
    reply = oracle_caption(*s, data_.categories);
  } else if (purpose == "review") {
    const auto lines = parse_prompt_detection_lines(text);
    const bool structured = text.find("[det_id ") != std::string::npos;
    // Prefer the detections we know, so boxes are exact and ids match the pipeline's.
    std::vector<Detection> dets;
    const auto known = dets_.find(image);
    const bool use_known = known != dets_.end() && known->second.size() == lines.size() &&
                           std::equal(lines.begin(), lines.end(), known->second.begin(),
                                      [](const DetectionLine& l, const Detection& d) {
                                        return same_label(l.label, d.label);
                                      });
    if (use_known) {
      dets = known->second;
    } else {
      for (const auto& l : lines) {
        Detection d;
        d.id = l.det_id;
        d.image_id = image;
        d.label = l.label;
        d.box = {static_cast<double>(l.x1), static_cast<double>(l.y1), static_cast<double>(l.x2),
                 static_cast<double>(l.y2)};
        dets.push_back(std::move(d));
      }
    }
    const auto verdicts = oracle_review(s, dets, data_.categories, cfg_);
    reply = structured ? render_verdicts_json(verdicts) : render_verdicts_free_text(verdicts, dets);
  } else {
    status = 400;
    return error_body("unknown purpose '" + purpose + "'");
  }
  status = 200;
  return json{{"id", "mock-" + user},
              {"object", "chat.completion"},
              {"model", req.value("model", "mock")},
              {"choices", json::array({{{"index", 0},
                                        {"message", {{"role", "assistant"}, {"content", reply}}},
                                        {"finish_reason", "stop"}}})}}
      .dump();
}

std::string MockServer::handle_detect(const std::string& body, int& status) {
  json req = json::parse(body, nullptr, false);
  if (req.is_discarded() || !req.is_object() || !req.contains("image_id") || !req["image_id"].is_number_integer()) {
    status = 400;
    return error_body("expected {image_id, width, height}");
  }
  {
    std::lock_guard lock(mutex_);
    if (!detect_body_.empty()) {
      status = 200;
      return detect_body_;
    }
  }
  const ImageId image = req["image_id"].get<ImageId>();
  if (!scene(image)) {
    status = 404;
    return error_body("unknown image " + std::to_string(image));
  }
  status = 200;
  auto it = dets_.find(image);
  return render_detections(it == dets_.end() ? std::vector<Detection>{} : it->second, data_.categories);
}

std::string MockServer::handle_classify(const std::string& body, int& status) {
  ClassificationRequest req;
  try {
    req = classification_request_from_json(json::parse(body));
  } catch (const std::exception& e) {
    status = 400;
    return error_body(std::string("bad classification request: ") + e.what());
  }
  const SceneRecord* s = scene(req.image_id);
  if (!s) {
    status = 404;
    return error_body("unknown image " + std::to_string(req.image_id));
  }
  const auto r = oracle_classify(s, req, data_.categories, cfg_);
  status = 200;
  return json{{"label", r.label}, {"confidence", r.confidence}}.dump();
}

int MockServer::start(const std::string& host, int port) {
  server_ = std::make_unique<httplib::Server>();
  host_ = host;

  auto wrap = [this](const std::string& path, auto handler) {
    return [this, path, handler](const httplib::Request& req, httplib::Response& res) {
      Fault f;
      if (take_fault(path, f)) {
        if (f.delay_ms > 0) std::this_thread::sleep_for(std::chrono::milliseconds(f.delay_ms));
        if (f.status != 0) {
          res.status = f.status;
          res.set_content(error_body("injected failure"), "application/json");
          return;
        }
      }
      if (!key_.empty() && req.get_header_value("Authorization") != "Bearer " + key_) {
        res.status = 401;
        res.set_content(error_body("invalid credentials"), "application/json");
        return;
      }
      int status = 500;
      std::string out;
      try {
        out = (this->*handler)(req.body, status);
      } catch (const std::exception& e) {
        status = 500;
        out = error_body(e.what());
      }
      res.status = status;
      res.set_content(out, "application/json");
    };
  };

  server_->Post("/v1/chat/completions", wrap("/v1/chat/completions", &MockServer::handle_chat));
  server_->Post("/detect", wrap("/detect", &MockServer::handle_detect));
  server_->Post("/classify", wrap("/classify", &MockServer::handle_classify));
  server_->Get("/healthz", [](const httplib::Request&, httplib::Response& res) {
    res.set_content(R"({"status":"ok"})", "application/json");
  });

  if (port == 0) {
    port_ = server_->bind_to_any_port(host);
  } else {
    port_ = server_->bind_to_port(host, port) ? port : -1;
  }
  if (port_ < 0) throw IoError("cannot bind " + host + ":" + std::to_string(port));
  thread_ = std::thread([this] { server_->listen_after_bind(); });
  server_->wait_until_ready();
  return port_;
}

void MockServer::wait() {
  if (thread_.joinable()) thread_.join();
}

void MockServer::stop() {
  if (server_) server_->stop();
  if (thread_.joinable()) thread_.join();
}

std::string MockServer::base_url() const { return "http://" + host_ + ":" + std::to_string(port_); }

}  // namespace vla
