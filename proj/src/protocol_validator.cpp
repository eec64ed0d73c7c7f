#include "vla/protocol_validator.hpp"

#include <set>
#include <sstream>

#include "vla/coco_io.hpp"
#include "vla/error.hpp"
#include "vla/prompt.hpp"

namespace vla {

using nlohmann::json;

namespace {

using Problems = std::vector<std::string>;

bool is_int(const json& j, const char* key) { return j.contains(key) && j[key].is_number_integer(); }
bool is_num(const json& j, const char* key) { return j.contains(key) && j[key].is_number(); }
bool is_str(const json& j, const char* key) { return j.contains(key) && j[key].is_string(); }

void check_detect(const json& req, const json& resp, bool ok, Problems& p) {
  if (!req.is_object() || !is_int(req, "image_id")) p.push_back("detector request: image_id must be an integer");
  if (req.is_object() && (!is_num(req, "width") || !is_num(req, "height"))) {
    p.push_back("detector request: width and height must be numbers");
  }
  if (!ok) return;
  if (!resp.is_array()) {
    p.push_back("detector response: expected an array in the COCO results schema");
    return;
  }
  for (std::size_t k = 0; k < resp.size(); ++k) {
    const auto& r = resp[k];
    const std::string ctx = "detector response[" + std::to_string(k) + "]: ";
    if (!r.is_object()) {
      p.push_back(ctx + "not an object");
      continue;
    }
    if (!is_int(r, "image_id")) p.push_back(ctx + "image_id must be an integer");
    if (!is_int(r, "category_id")) p.push_back(ctx + "category_id must be an integer");
    if (!r.contains("bbox") || !r["bbox"].is_array() || r["bbox"].size() != 4) {
      p.push_back(ctx + "bbox must be [x, y, w, h]");
    } else {
      for (const auto& v : r["bbox"]) {
        if (!v.is_number()) p.push_back(ctx + "bbox entries must be numbers");
      }
      if (r["bbox"][2].is_number() && r["bbox"][3].is_number() &&
          (r["bbox"][2].get<double>() < 0 || r["bbox"][3].get<double>() < 0)) {
        p.push_back(ctx + "bbox width and height must be >= 0");
      }
    }
    if (!is_num(r, "score") || r["score"].get<double>() < 0.0 || r["score"].get<double>() > 1.0) {
      p.push_back(ctx + "score must be a number in [0,1]");
    }
  }
}

std::string request_text(const json& req) {
  const auto& content = req.at("messages").at(0).at("content");
  if (content.is_string()) return content.get<std::string>();
  std::string text;
  for (const auto& part : content) {
    if (part.is_object() && part.value("type", "") == "text") text += part.value("text", "");
  }
  return text;
}

void check_chat(const json& env, const json& req, const json& resp, bool ok, Problems& p) {
  if (!req.is_object() || !is_str(req, "model")) p.push_back("linguistic request: model must be a string");
  if (!req.is_object() || !req.contains("messages") || !req["messages"].is_array() || req["messages"].empty()) {
    p.push_back("linguistic request: messages must be a non-empty array");
    return;
  }
  const auto& m = req["messages"][0];
  if (!m.is_object() || m.value("role", "") != "user") p.push_back("linguistic request: messages[0].role must be 'user'");
  if (!m.is_object() || !m.contains("content") || !(m["content"].is_string() || m["content"].is_array())) {
    p.push_back("linguistic request: messages[0].content must be a string or a list of parts");
    return;
  }
  if (!req.contains("temperature") || !req["temperature"].is_number() || req["temperature"].get<double>() != 0.0) {
    p.push_back("linguistic request: temperature must be 0");
  }
  if (!ok) return;
  std::string content;
  try {
    const auto& c = resp.at("choices").at(0).at("message").at("content");
    if (!c.is_string()) throw std::runtime_error("content");
    content = c.get<std::string>();
  } catch (const std::exception&) {
    p.push_back("linguistic response: choices[0].message.content must be a string");
    return;
  }
  if (env.value("purpose", "") == "review" && env.value("format", "") == "structured-json") {
    std::vector<Detection> dets;
    for (const auto& l : parse_prompt_detection_lines(request_text(req))) {
      Detection d;
      d.id = l.det_id;
      d.label = l.label;
      dets.push_back(std::move(d));
    }
    try {
      parse_structured_verdicts(content, dets);
    } catch (const ProtocolError& e) {
      p.push_back(std::string("linguistic review: ") + e.what());
    }
  }
}

void check_classify(const json& req, const json& resp, bool ok, Problems& p) {
  std::set<std::string> candidates;
  if (!req.is_object() || !is_int(req, "image_id")) p.push_back("classifier request: image_id must be an integer");
  if (!req.is_object() || !req.contains("region") || !req["region"].is_array() || req["region"].size() != 4) {
    p.push_back("classifier request: region must be [x1, y1, x2, y2]");
  } else {
    const auto& r = req["region"];
    bool nums = true;
    for (const auto& v : r) nums = nums && v.is_number();
    if (!nums) {
      p.push_back("classifier request: region entries must be numbers");
    } else if (r[0].get<double>() > r[2].get<double>() || r[1].get<double>() > r[3].get<double>()) {
      p.push_back("classifier request: region corners out of order");
    }
  }
  if (!req.is_object() || !req.contains("candidates") || !req["candidates"].is_array() || req["candidates"].empty()) {
    p.push_back("classifier request: candidates must be a non-empty array of strings");
  } else {
    for (const auto& c : req["candidates"]) {
      if (!c.is_string()) {
        p.push_back("classifier request: candidates must be strings");
        break;
      }
      candidates.insert(to_lower_ascii(trim(c.get<std::string>())));
    }
  }
  if (!ok) return;
  if (!resp.is_object() || !is_str(resp, "label") || !is_num(resp, "confidence")) {
    p.push_back("classifier response: expected {label, confidence}");
    return;
  }
  const double conf = resp["confidence"].get<double>();
  if (conf < 0.0 || conf > 1.0) p.push_back("classifier response: confidence must be in [0,1]");
  const auto label = resp["label"].get<std::string>();
  const bool abstain = label == "unknown" && conf == 0.0;
  if (!abstain && !candidates.empty() && !candidates.count(to_lower_ascii(trim(label)))) {
    p.push_back("classifier response: label '" + label + "' is not a candidate");
  }
}

}  // namespace

std::vector<std::string> validate_envelope(const json& env) {
  Problems p;
  if (!env.is_object()) return {"envelope is not a JSON object"};
  const std::string role = is_str(env, "role") ? env["role"].get<std::string>() : "";
  if (role != "detector" && role != "linguistic" && role != "classifier") {
    p.push_back("role must be detector, linguistic or classifier");
  }
  if (!is_str(env, "request_id") || env["request_id"].get<std::string>().empty()) {
    p.push_back("request_id must be a non-empty string");
  }
  if (!is_int(env, "attempt") || env["attempt"].get<std::int64_t>() < 1) p.push_back("attempt must be an integer >= 1");
  const std::string status = is_str(env, "status") ? env["status"].get<std::string>() : "";
  if (status != "ok" && status != "error") p.push_back("status must be ok or error");
  if (!env.contains("timing") || !env["timing"].is_object() || !is_int(env["timing"], "request_ms") ||
      !is_int(env["timing"], "response_ms")) {
    p.push_back("timing must carry integer request_ms and response_ms");
  }
  if (!env.contains("payload") || !env["payload"].is_object() || !env["payload"].contains("request")) {
    p.push_back("payload must carry request and response");
    return p;
  }
  const json& req = env["payload"]["request"];
  const json resp = env["payload"].value("response", json());
  const bool ok = status == "ok";
  try {
    if (role == "detector") check_detect(req, resp, ok, p);
    if (role == "linguistic") check_chat(env, req, resp, ok, p);
    if (role == "classifier") check_classify(req, resp, ok, p);
  } catch (const json::exception& e) {
    p.push_back(std::string("malformed payload: ") + e.what());
  }
  return p;
}

ProtocolReport validate_transcript(const std::string& text) {
  ProtocolReport rep;
  std::istringstream in(text);
  std::string line;
  std::size_t n = 0;
  std::set<std::pair<std::string, std::int64_t>> seen;
  while (std::getline(in, line)) {
    ++n;
    if (line.empty()) continue;
    ++rep.records;
    json j = json::parse(line, nullptr, false);
    if (j.is_discarded()) {
      const bool last = in.peek() == std::char_traits<char>::eof();
      rep.violations.push_back({n, last ? "not valid JSON (truncated final line?)" : "not valid JSON"});
      continue;
    }
    for (auto& msg : validate_envelope(j)) rep.violations.push_back({n, std::move(msg)});
    if (j.is_object() && is_str(j, "request_id") && is_int(j, "attempt")) {
      if (!seen.insert({j["request_id"].get<std::string>(), j["attempt"].get<std::int64_t>()}).second) {
        rep.violations.push_back({n, "duplicate request_id/attempt " + j["request_id"].get<std::string>()});
      }
    }
  }
  return rep;
}

ProtocolReport validate_transcript_file(const std::filesystem::path& path) {
  return validate_transcript(read_text_file(path));
}

std::string ProtocolReport::render() const {
  std::ostringstream os;
  for (const auto& v : violations) os << "record " << v.record << ": " << v.message << "\n";
  os << records << " record(s), " << violations.size() << " violation(s)\n";
  return os.str();
}

}  // namespace vla
