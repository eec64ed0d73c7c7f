#include <cstdio>
#include <sstream>

#include <nlohmann/json.hpp>

#include "vla/evaluator.hpp"

namespace vla {

using nlohmann::json;

namespace {

constexpr const char* kUndefinedCell = "—";

json opt_json(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

std::string full_precision(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string csv_value(const std::optional<double>& v) { return v ? full_precision(*v) : std::string{}; }

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

// Pads by code points so the em-dash placeholder lines up.
std::string pad_left(const std::string& s, std::size_t width) {
  std::size_t cps = 0;
  for (unsigned char c : s) cps += (c & 0xC0) != 0x80;
  return cps >= width ? s : std::string(width - cps, ' ') + s;
}

struct Metric {
  const char* key;
  const char* header;
  std::optional<double> EvalReport::*field;
};

constexpr Metric kMetrics[] = {
    {"ap_50_95", "AP50:95", &EvalReport::ap_50_95}, {"ap_50", "AP50", &EvalReport::ap_50},
    {"ap_75", "AP75", &EvalReport::ap_75},          {"ap_small", "APs", &EvalReport::ap_small},
    {"ap_medium", "APm", &EvalReport::ap_medium},   {"ap_large", "APl", &EvalReport::ap_large},
};

std::string matching_rule(double match_iou) {
  char buf[96];
  std::snprintf(buf, sizeof buf, "greedy one-to-one by IoU, IoU >= %.2f, crowd regions skipped", match_iou);
  return buf;
}

std::string render_text(const EvalReport* eval, const CorrectionReport* corr) {
  std::ostringstream os;
  if (eval) {
    for (const auto& m : kMetrics) os << pad_left(m.header, 9);
    os << "\n";
    for (const auto& m : kMetrics) os << pad_left(percent_cell(eval->*m.field), 9);
    os << "\n\n";
    os << "images " << eval->images << ", ground truth " << eval->counts[0].gt << " (small "
       << eval->counts[1].gt << ", medium " << eval->counts[2].gt << ", large " << eval->counts[3].gt
       << "), detections " << eval->counts[0].detections << "\n";
    if (!eval->per_category.empty()) {
      os << "\n" << pad_left("category", 20) << pad_left("AP", 8) << pad_left("AP50", 8)
         << pad_left("AP75", 8) << pad_left("GT", 8) << pad_left("dets", 8) << "\n";
      for (const auto& c : eval->per_category) {
        os << pad_left(c.name, 20) << pad_left(percent_cell(c.ap), 8) << pad_left(percent_cell(c.ap_50), 8)
           << pad_left(percent_cell(c.ap_75), 8) << pad_left(std::to_string(c.gt_count), 8)
           << pad_left(std::to_string(c.det_count), 8) << "\n";
      }
    }
  }
  if (corr) {
    if (eval) os << "\n";
    os << pad_left("ED", 8) << pad_left("CD", 8) << pad_left("CR", 8) << "\n";
    const std::string cr = corr->ed == 0 ? std::string(kUndefinedCell) : corr->cr_display() + "%";
    os << pad_left(std::to_string(corr->ed), 8) << pad_left(std::to_string(corr->cd), 8) << pad_left(cr, 8)
       << "\n";
    os << "matching: " << matching_rule(corr->match_iou) << "\n";
  }
  return os.str();
}

std::string render_json(const EvalReport* eval, const CorrectionReport* corr) {
  json j = json::object();
  if (eval) {
    json ap = json::object();
    for (const auto& m : kMetrics) ap[m.key] = opt_json(eval->*m.field);
    j["ap"] = ap;
    json per_t = json::array();
    for (const auto& v : eval->ap_per_threshold) per_t.push_back(opt_json(v));
    j["ap_per_threshold"] = per_t;
    json cats = json::array();
    for (const auto& c : eval->per_category) {
      cats.push_back({{"id", c.id}, {"name", c.name}, {"ap", opt_json(c.ap)}, {"ap_50", opt_json(c.ap_50)},
                      {"ap_75", opt_json(c.ap_75)}, {"gt", c.gt_count}, {"detections", c.det_count}});
    }
    j["per_category"] = cats;
    json counts = json::object();
    for (std::size_t a = 0; a < kAreaRanges.size(); ++a) {
      counts[std::string(to_string(kAreaRanges[a]))] = {{"gt", eval->counts[a].gt},
                                                          {"detections", eval->counts[a].detections}};
    }
    j["counts"] = counts;
    j["images"] = eval->images;
  }
  if (corr) {
    j["correction"] = {{"ed", corr->ed},
                       {"cd", corr->cd},
                       {"cr", opt_json(corr->cr())},
                       {"cr_display", corr->ed == 0 ? json(nullptr) : json(corr->cr_display())},
                       {"match_iou", corr->match_iou},
                       {"matching", matching_rule(corr->match_iou)}};
  }
  return j.dump(2) + "\n";
}

std::string render_csv(const EvalReport* eval, const CorrectionReport* corr) {
  std::ostringstream os;
  os << "section,key,value\n";
  if (eval) {
    for (const auto& m : kMetrics) os << "metric," << m.key << "," << csv_value(eval->*m.field) << "\n";
    const auto& th = coco_iou_thresholds();
    for (std::size_t t = 0; t < th.size(); ++t) {
      char key[16];
      std::snprintf(key, sizeof key, "ap_at_%.2f", th[t]);
      os << "threshold," << key << "," << csv_value(eval->ap_per_threshold[t]) << "\n";
    }
    for (const auto& c : eval->per_category) os << "category," << csv_field(c.name) << "," << csv_value(c.ap) << "\n";
    for (std::size_t a = 0; a < kAreaRanges.size(); ++a) {
      os << "count,gt_" << to_string(kAreaRanges[a]) << "," << eval->counts[a].gt << "\n";
      os << "count,detections_" << to_string(kAreaRanges[a]) << "," << eval->counts[a].detections << "\n";
    }
  }
  if (corr) {
    os << "correction,ed," << corr->ed << "\n";
    os << "correction,cd," << corr->cd << "\n";
    os << "correction,cr," << csv_value(corr->cr()) << "\n";
    os << "correction,match_iou," << full_precision(corr->match_iou) << "\n";
  }
  return os.str();
}

}  // namespace

std::string percent_cell(const std::optional<double>& v) {
  if (!v) return kUndefinedCell;
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.1f", *v * 100.0);
  return buf;
}

std::optional<ReportFormat> report_format_from_string(std::string_view s) {
  if (s == "text" || s == "text-table" || s == "table") return ReportFormat::text_table;
  if (s == "json") return ReportFormat::json;
  if (s == "csv") return ReportFormat::csv;
  return std::nullopt;
}

std::string render_report(const EvalReport* eval, const CorrectionReport* corr, ReportFormat format) {
  switch (format) {
    case ReportFormat::text_table: return render_text(eval, corr);
    case ReportFormat::json: return render_json(eval, corr);
    case ReportFormat::csv: return render_csv(eval, corr);
  }
  return {};
}

}  // namespace vla
