#include "vla/prompt.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <map>
#include <regex>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

#include "vla/error.hpp"

namespace vla {

using nlohmann::json;

std::string_view to_string(ResponseFormat f) {
  return f == ResponseFormat::structured_json ? "structured-json" : "free-text";
}

std::optional<ResponseFormat> response_format_from_string(std::string_view s) {
  if (s == "structured-json") return ResponseFormat::structured_json;
  if (s == "free-text") return ResponseFormat::free_text;
  return std::nullopt;
}

long long render_coordinate(double v) noexcept { return std::llround(v); }

std::string format_detection_line(std::string_view label, const BoundingBox& box) {
  std::ostringstream os;
  os << display_label(label) << ", coordinates: (" << render_coordinate(box.x1) << ", "
     << render_coordinate(box.y1) << "), (" << render_coordinate(box.x2) << ", "
     << render_coordinate(box.y2) << ")";
  return os.str();
}

std::string build_caption_request(const SceneRecord& scene, const PromptTemplates& t) {
  std::ostringstream os;
  os << t.caption_instruction << "\n";
  if (!scene.image_url.empty()) {
    os << "Image: " << scene.image_url;
  } else if (!scene.file_name.empty()) {
    os << "Image: " << scene.file_name;
  } else {
    os << "Image";
  }
  os << " (image_id " << scene.image_id << ", " << scene.width << "x" << scene.height << ")";
  return os.str();
}

ReviewPrompt build_review_prompt(const std::string& caption, const std::vector<Detection>& dets,
                                 ResponseFormat format, const PromptTemplates& t) {
  if (dets.empty()) throw EmptyInputError("review prompt needs at least one detection");
  ReviewPrompt p;
  p.caption = caption;
  p.format = format;

  std::ostringstream os;
  if (!caption.empty()) os << t.caption_prefix << caption << "\n";
  os << t.review_intro << "\n";
  for (const auto& d : dets) {
    DetectionLine line{d.id,
                       d.label,
                       render_coordinate(d.box.x1),
                       render_coordinate(d.box.y1),
                       render_coordinate(d.box.x2),
                       render_coordinate(d.box.y2),
                       std::nullopt};
    os << "- ";
    if (format == ResponseFormat::structured_json) os << "[det_id " << d.id << "] ";
    os << format_detection_line(d.label, d.box);
    if (t.include_scores) {
      char buf[32];
      std::snprintf(buf, sizeof buf, "%.2f", d.score);
      os << ", confidence: " << buf;
      line.score = d.score;
    }
    os << "\n";
    p.lines.push_back(std::move(line));
  }
  os << kReviewQuestion;
  const std::string& directive =
      format == ResponseFormat::structured_json ? t.structured_directive : t.free_text_directive;
  if (!directive.empty()) os << "\n\n" << directive;
  p.text = os.str();
  return p;
}

namespace {

// Models like to wrap JSON in markdown fences or add a sentence around it.
std::optional<json> extract_json(const std::string& response) {
  std::string s = trim(response);
  if (s.starts_with("```")) {
    auto nl = s.find('\n');
    auto end = s.rfind("```");
    if (nl != std::string::npos && end != std::string::npos && end > nl) {
      s = trim(std::string_view(s).substr(nl + 1, end - nl - 1));
    }
  }
  auto j = json::parse(s, nullptr, false);
  if (!j.is_discarded()) return j;
  auto open = s.find_first_of("[{");
  auto close = s.find_last_of("]}");
  if (open != std::string::npos && close != std::string::npos && close > open) {
    j = json::parse(s.substr(open, close - open + 1), nullptr, false);
    if (!j.is_discarded()) return j;
  }
  return std::nullopt;
}

std::vector<Verdict> default_verdicts(const std::vector<Detection>& dets) {
  std::vector<Verdict> out;
  out.reserve(dets.size());
  for (const auto& d : dets) out.push_back({d.id, Judgment::reasonable, std::nullopt, ""});
  return out;
}

bool is_word_char(char c) { return std::isalnum(static_cast<unsigned char>(c)) != 0; }

// True when `text` ends with `word` on a word boundary. Both already lower-case.
bool ends_with_word(std::string_view text, std::string_view word) {
  if (word.empty() || text.size() < word.size()) return false;
  if (text.substr(text.size() - word.size()) != word) return false;
  return text.size() == word.size() || !is_word_char(text[text.size() - word.size() - 1]);
}

std::string strip_edges(std::string_view s) {
  auto keep = [](char c) { return is_word_char(c); };
  while (!s.empty() && !keep(s.front())) s.remove_prefix(1);
  while (!s.empty() && !keep(s.back())) s.remove_suffix(1);
  return std::string(s);
}

std::optional<std::string> suspected_from_tail(std::string_view tail, const CategoryMap* vocab) {
  static const std::regex likely(R"(likely\s+(?:the|an|a)\s+([A-Za-z][A-Za-z0-9 '\-]*))",
                                 std::regex::icase);
  std::match_results<std::string_view::const_iterator> m;
  if (!std::regex_search(tail.begin(), tail.end(), m, likely)) return std::nullopt;
  const std::string phrase = trim(m[1].str());
  if (vocab) {
    // Longest vocabulary entry that the phrase starts with.
    const std::string lower = to_lower_ascii(phrase);
    std::optional<std::string> best;
    for (const auto& c : vocab->all()) {
      const std::string name = to_lower_ascii(c.name);
      if (lower.starts_with(name) && (lower.size() == name.size() || !is_word_char(lower[name.size()]))) {
        if (!best || name.size() > best->size()) best = c.name;
      }
    }
    if (best) return best;
  }
  auto sp = phrase.find(' ');
  auto word = strip_edges(phrase.substr(0, sp));
  if (word.empty()) return std::nullopt;
  return to_lower_ascii(word);
}

}  // namespace

std::vector<Verdict> parse_structured_verdicts(const std::string& response,
                                               const std::vector<Detection>& dets) {
  auto parsed = extract_json(response);
  if (!parsed) throw ProtocolError("response is not valid JSON", response);
  json arr = *parsed;
  if (arr.is_object() && arr.contains("verdicts")) arr = arr["verdicts"];
  if (!arr.is_array()) throw ProtocolError("expected a JSON array of verdicts", response);

  std::map<DetId, std::size_t> index;
  for (std::size_t k = 0; k < dets.size(); ++k) index.emplace(dets[k].id, k);

  auto out = default_verdicts(dets);
  std::set<DetId> seen;
  for (std::size_t k = 0; k < arr.size(); ++k) {
    const auto& v = arr[k];
    const auto ctx = "verdict " + std::to_string(k);
    if (!v.is_object()) throw ProtocolError(ctx + " is not an object", response);
    if (!v.contains("det_id") || !v["det_id"].is_number_integer()) {
      throw ProtocolError(ctx + ": det_id must be an integer", response);
    }
    const DetId id = v["det_id"].get<DetId>();
    auto it = index.find(id);
    if (it == index.end()) throw ProtocolError(ctx + ": unknown det_id " + std::to_string(id), response);
    if (!seen.insert(id).second) {
      throw ProtocolError(ctx + ": duplicate det_id " + std::to_string(id), response);
    }
    if (!v.contains("judgment") || !v["judgment"].is_string()) {
      throw ProtocolError(ctx + ": judgment must be a string", response);
    }
    auto j = judgment_from_string(v["judgment"].get<std::string>());
    if (!j) {
      throw ProtocolError(ctx + ": judgment '" + v["judgment"].get<std::string>() +
                              "' is not reasonable|unreasonable",
                          response);
    }
    Verdict& out_v = out[it->second];
    out_v.judgment = *j;
    if (v.contains("suspected_label") && !v["suspected_label"].is_null()) {
      if (!v["suspected_label"].is_string()) {
        throw ProtocolError(ctx + ": suspected_label must be a string or null", response);
      }
      auto s = v["suspected_label"].get<std::string>();
      if (*j == Judgment::unreasonable && !s.empty()) out_v.suspected_label = std::move(s);
    }
    if (v.contains("rationale") && !v["rationale"].is_null()) {
      if (!v["rationale"].is_string()) throw ProtocolError(ctx + ": rationale must be a string", response);
      out_v.rationale = v["rationale"].get<std::string>();
    }
  }
  return out;
}

std::vector<Verdict> parse_free_text_verdicts(const std::string& response,
                                              const std::vector<Detection>& dets,
                                              const CategoryMap* vocabulary) {
  static const std::regex clause(
      R"(\bdetection\s+is\s+(not\s+reasonable|unreasonable|reasonable)\b)", std::regex::icase);
  static const std::regex terminator(R"([.!?\n])");

  auto out = default_verdicts(dets);
  std::vector<bool> assigned(dets.size(), false);
  std::vector<std::string> labels;
  for (const auto& d : dets) labels.push_back(to_lower_ascii(d.label));

  std::vector<std::smatch> matches;
  for (auto it = std::sregex_iterator(response.begin(), response.end(), clause);
       it != std::sregex_iterator(); ++it) {
    matches.push_back(*it);
  }

  std::size_t region_start = 0;
  for (std::size_t k = 0; k < matches.size(); ++k) {
    const auto& m = matches[k];
    const auto start = static_cast<std::size_t>(m.position(0));
    const auto end = start + static_cast<std::size_t>(m.length(0));
    const auto next_start = k + 1 < matches.size() ? static_cast<std::size_t>(matches[k + 1].position(0))
                                                   : response.size();
    // The tail runs to the end of the sentence, but never into the next clause.
    std::size_t tail_end = next_start;
    std::smatch t;
    const std::string after = response.substr(end, next_start - end);
    if (std::regex_search(after, t, terminator)) tail_end = end + static_cast<std::size_t>(t.position(0));

    const std::size_t sentence_start = region_start;
    const std::string subject = to_lower_ascii(strip_edges(
        std::string_view(response).substr(region_start, start - region_start)));
    region_start = tail_end;

    // Longest label that ends the subject phrase; among equal labels the first unassigned.
    std::optional<std::size_t> pick;
    std::size_t best_len = 0;
    for (std::size_t d = 0; d < dets.size(); ++d) {
      if (assigned[d] || !ends_with_word(subject, labels[d])) continue;
      if (!pick || labels[d].size() > best_len) {
        pick = d;
        best_len = labels[d].size();
      }
    }
    if (!pick) continue;
    assigned[*pick] = true;

    const std::string word = to_lower_ascii(m[1].str());
    Verdict& v = out[*pick];
    v.judgment = word == "reasonable" ? Judgment::reasonable : Judgment::unreasonable;
    const std::string_view tail = std::string_view(response).substr(end, tail_end - end);
    std::string_view sentence = std::string_view(response).substr(sentence_start, tail_end - sentence_start);
    while (!sentence.empty() && !is_word_char(sentence.front())) sentence.remove_prefix(1);
    v.rationale = trim(sentence);
    if (v.judgment == Judgment::unreasonable) v.suspected_label = suspected_from_tail(tail, vocabulary);
  }
  return out;
}

std::vector<Verdict> parse_verdicts(const std::string& response, const std::vector<Detection>& dets,
                                    ResponseFormat format, const CategoryMap* vocabulary) {
  if (format == ResponseFormat::structured_json) return parse_structured_verdicts(response, dets);
  return parse_free_text_verdicts(response, dets, vocabulary);
}

std::string render_verdicts_json(const std::vector<Verdict>& verdicts) {
  json arr = json::array();
  for (const auto& v : verdicts) {
    json o;
    o["det_id"] = v.det_id;
    o["judgment"] = std::string(to_string(v.judgment));
    o["suspected_label"] = v.suspected_label ? json(*v.suspected_label) : json(nullptr);
    o["rationale"] = v.rationale;
    arr.push_back(std::move(o));
  }
  return arr.dump();
}

std::string render_verdicts_free_text(const std::vector<Verdict>& verdicts,
                                      const std::vector<Detection>& dets) {
  std::map<DetId, const Detection*> by_id;
  for (const auto& d : dets) by_id.emplace(d.id, &d);
  std::ostringstream os;
  bool first = true;
  for (const auto& v : verdicts) {
    auto it = by_id.find(v.det_id);
    if (it == by_id.end()) continue;
    if (!first) os << "\n";
    first = false;
    os << display_label(it->second->label) << " detection is " << to_string(v.judgment);
    if (v.judgment == Judgment::unreasonable && v.suspected_label) {
      os << ", as the object is likely the " << *v.suspected_label;
    }
    os << ".";
  }
  return os.str();
}

std::vector<DetectionLine> parse_prompt_detection_lines(const std::string& prompt) {
  static const std::regex line(
      R"(^\s*-\s*(?:\[det_id\s+(-?\d+)\]\s*)?(.+?), coordinates: \((-?\d+), (-?\d+)\), \((-?\d+), (-?\d+)\)(?:, confidence: ([0-9.]+))?\s*$)");
  std::vector<DetectionLine> out;
  std::istringstream in(prompt);
  std::string text;
  DetId next = 1;
  while (std::getline(in, text)) {
    std::smatch m;
    if (!std::regex_match(text, m, line)) continue;
    DetectionLine d;
    d.det_id = m[1].matched ? std::stoll(m[1].str()) : next;
    ++next;
    d.label = m[2].str();
    d.x1 = std::stoll(m[3].str());
    d.y1 = std::stoll(m[4].str());
    d.x2 = std::stoll(m[5].str());
    d.y2 = std::stoll(m[6].str());
    if (m[7].matched) d.score = std::stod(m[7].str());
    out.push_back(std::move(d));
  }
  return out;
}

std::string ClassificationRequest::describe() const {
  std::ostringstream os;
  os << "Region (" << render_coordinate(region.x1) << ", " << render_coordinate(region.y1) << "), ("
     << render_coordinate(region.x2) << ", " << render_coordinate(region.y2)
     << "): choose one of [";
  for (std::size_t i = 0; i < candidates.size(); ++i) os << (i ? ", " : "") << candidates[i];
  os << "]";
  return os.str();
}

ClassificationRequest build_classification_request(const SceneRecord& scene, const Detection& det,
                                                   const std::vector<std::string>& vocabulary,
                                                   const std::optional<std::string>& suspected) {
  ClassificationRequest r;
  r.image_id = scene.image_id;
  r.det_id = det.id;
  r.file_name = scene.file_name;
  r.image_url = scene.image_url;
  r.region = det.box;
  std::set<std::string> keys;
  for (const auto& c : vocabulary) {
    if (keys.insert(to_lower_ascii(trim(c))).second) r.candidates.push_back(c);
  }
  if (suspected) {
    auto s = trim(*suspected);
    if (!s.empty() && keys.insert(to_lower_ascii(s)).second) r.candidates.push_back(s);
  }
  return r;
}

}  // namespace vla
