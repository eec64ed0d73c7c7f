#include "vla/coco_io.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <unordered_map>

#include <nlohmann/json.hpp>

#include "vla/error.hpp"

namespace vla {

using nlohmann::json;

namespace {

json parse_json(const std::string& text, const std::string& what) {
  try {
    return json::parse(text);
  } catch (const json::parse_error& e) {
    throw ParseError("malformed " + what + ": " + e.what(), e.byte);
  }
}

double number_field(const json& obj, const char* key, const std::string& ctx) {
  auto it = obj.find(key);
  if (it == obj.end() || !it->is_number()) {
    throw ValidationError(ctx + ": field '" + key + "' must be a number");
  }
  return it->get<double>();
}

std::int64_t int_field(const json& obj, const char* key, const std::string& ctx) {
  auto it = obj.find(key);
  if (it == obj.end() || !it->is_number_integer()) {
    throw ValidationError(ctx + ": field '" + key + "' must be an integer");
  }
  return it->get<std::int64_t>();
}

BoundingBox bbox_field(const json& obj, const std::string& ctx) {
  auto it = obj.find("bbox");
  if (it == obj.end() || !it->is_array() || it->size() != 4) {
    throw ValidationError(ctx + ": 'bbox' must be an array of 4 numbers");
  }
  for (const auto& v : *it) {
    if (!v.is_number()) throw ValidationError(ctx + ": 'bbox' must be an array of 4 numbers");
  }
  const auto& b = *it;
  try {
    return BoundingBox::from_xywh(b[0].get<double>(), b[1].get<double>(), b[2].get<double>(),
                                  b[3].get<double>());
  } catch (const ValidationError& e) {
    throw ValidationError(ctx + ": " + e.what());
  }
}

const json& array_field(const json& root, const char* key) {
  auto it = root.find(key);
  if (it == root.end() || !it->is_array()) {
    throw ValidationError(std::string("annotation file: '") + key + "' must be an array");
  }
  return *it;
}

void warn(LoadStats* stats, std::string msg) {
  if (stats) {
    ++stats->skipped;
    stats->warnings.push_back(std::move(msg));
  }
}

json box_json(const BoundingBox& b) {
  auto w = to_xywh(b);
  return json::array({w.x, w.y, w.w, w.h});
}

}  // namespace

DetId make_det_id(ImageId image, std::size_t ordinal) {
  if (ordinal == 0 || ordinal >= static_cast<std::size_t>(kDetIdStride)) {
    throw ValidationError("image " + std::to_string(image) + " has too many detections (" +
                          std::to_string(ordinal) + ")");
  }
  return image * kDetIdStride + static_cast<DetId>(ordinal);
}

AnnotationSet parse_coco_annotations(const std::string& text, ParseMode mode, LoadStats* stats) {
  const json root = parse_json(text, "annotation JSON");
  if (!root.is_object()) throw ValidationError("annotation file must be a JSON object");

  AnnotationSet out;
  for (const auto& c : array_field(root, "categories")) {
    const auto ctx = std::string("category");
    auto id = int_field(c, "id", ctx);
    auto name = c.value("name", std::string{});
    // "scored": false marks an annotated label outside the scoring vocabulary.
    out.categories.add(id, name, c.value("scored", true));
  }

  std::unordered_map<ImageId, std::size_t> index;
  for (const auto& img : array_field(root, "images")) {
    SceneRecord s;
    s.image_id = int_field(img, "id", "image");
    const auto ctx = "image " + std::to_string(s.image_id);
    s.width = static_cast<int>(int_field(img, "width", ctx));
    s.height = static_cast<int>(int_field(img, "height", ctx));
    s.file_name = img.value("file_name", std::string{});
    s.image_url = img.value("coco_url", std::string{});
    if (index.contains(s.image_id)) throw ValidationError("duplicate image id " + std::to_string(s.image_id));
    index.emplace(s.image_id, out.scenes.size());
    out.scenes.push_back(std::move(s));
  }

  for (const auto& a : array_field(root, "annotations")) {
    GroundTruthObject gt;
    gt.annotation_id = a.contains("id") ? int_field(a, "id", "annotation") : 0;
    const auto ctx = "annotation " + std::to_string(gt.annotation_id);
    gt.image_id = int_field(a, "image_id", ctx);
    gt.category_id = int_field(a, "category_id", ctx);
    gt.box = bbox_field(a, ctx);
    gt.iscrowd = a.value("iscrowd", 0) != 0;
    gt.area = a.contains("area") ? number_field(a, "area", ctx) : gt.box.area();

    if (!out.categories.contains(gt.category_id)) {
      throw ReferentialError(ctx + " references unknown category id " +
                             std::to_string(gt.category_id));
    }
    auto it = index.find(gt.image_id);
    if (it == index.end()) {
      throw ReferentialError(ctx + " references unknown image id " + std::to_string(gt.image_id));
    }
    if (!(gt.area > 0.0)) {
      if (mode == ParseMode::strict) throw ValidationError(ctx + " has non-positive area");
      if (stats) stats->warnings.push_back(ctx + " has non-positive area (kept)");
    }
    out.scenes[it->second].ground_truth.push_back(gt);
  }

  if (stats) {
    stats->images = out.scenes.size();
    stats->annotations = array_field(root, "annotations").size();
  }
  return out;
}

AnnotationSet load_coco_annotations(const std::filesystem::path& path, ParseMode mode,
                                    LoadStats* stats) {
  return parse_coco_annotations(read_text_file(path), mode, stats);
}

std::vector<Detection> parse_coco_results(const std::string& text, const CategoryMap& cats,
                                          const std::vector<SceneRecord>* scenes, ParseMode mode,
                                          LoadStats* stats) {
  const json root = parse_json(text, "results JSON");
  if (!root.is_array()) throw ValidationError("results file must be a JSON array");

  std::unordered_map<ImageId, const SceneRecord*> known;
  if (scenes) {
    for (const auto& s : *scenes) known.emplace(s.image_id, &s);
  }

  std::unordered_map<ImageId, std::size_t> ordinals;
  std::vector<Detection> out;
  out.reserve(root.size());
  for (std::size_t k = 0; k < root.size(); ++k) {
    const auto& r = root[k];
    const auto ctx = "result " + std::to_string(k);
    if (!r.is_object()) throw ValidationError(ctx + " is not an object");
    Detection d;
    d.image_id = int_field(r, "image_id", ctx);
    const auto cat_id = int_field(r, "category_id", ctx);
    d.box = bbox_field(r, ctx);
    d.score = number_field(r, "score", ctx);
    if (!(d.score >= 0.0 && d.score <= 1.0)) {
      throw ValidationError(ctx + ": score " + std::to_string(d.score) + " outside [0,1]");
    }
    const Category* cat = cats.find(cat_id);
    if (!cat) {
      if (mode == ParseMode::strict) {
        throw ReferentialError(ctx + " references unknown category id " + std::to_string(cat_id));
      }
      warn(stats, ctx + ": unknown category id " + std::to_string(cat_id) + " (skipped)");
      continue;
    }
    d.label = cat->name;
    if (scenes) {
      auto it = known.find(d.image_id);
      if (it == known.end()) {
        if (mode == ParseMode::strict) {
          throw ReferentialError(ctx + " references unknown image id " +
                                 std::to_string(d.image_id));
        }
        warn(stats, ctx + ": unknown image id " + std::to_string(d.image_id) + " (skipped)");
        continue;
      }
      const SceneRecord& s = *it->second;
      if (s.width > 0 && s.height > 0) {
        auto c = d.box.clamped(s.width, s.height);
        if (stats && !(c == d.box)) ++stats->clamped;
        d.box = c;
      }
    }
    d.id = make_det_id(d.image_id, ++ordinals[d.image_id]);
    d.record(Stage::detect, d.label, "detector");
    out.push_back(std::move(d));
  }
  if (stats) stats->detections = out.size();
  return out;
}

std::vector<Detection> load_coco_results(const std::filesystem::path& path, const CategoryMap& cats,
                                         const std::vector<SceneRecord>* scenes, ParseMode mode,
                                         LoadStats* stats) {
  return parse_coco_results(read_text_file(path), cats, scenes, mode, stats);
}

void attach_detections(std::vector<SceneRecord>& scenes, std::vector<Detection> dets,
                       LoadStats* stats) {
  std::unordered_map<ImageId, SceneRecord*> by_id;
  for (auto& s : scenes) by_id.emplace(s.image_id, &s);
  for (auto& d : dets) {
    auto it = by_id.find(d.image_id);
    if (it == by_id.end()) {
      throw ReferentialError("detection " + std::to_string(d.id) + " references unknown image id " +
                             std::to_string(d.image_id));
    }
    SceneRecord& s = *it->second;
    if (s.width > 0 && s.height > 0) {
      auto c = d.box.clamped(s.width, s.height);
      if (stats && !(c == d.box)) ++stats->clamped;
      d.box = c;
    }
    s.raw_detections.push_back(std::move(d));
  }
}

namespace {

struct ExportRow {
  ImageId image;
  DetId det;
  json value;
};

void collect_rows(const std::vector<Detection>& dets, const std::vector<Disposition>* disp,
                  const CategoryMap& cats, std::vector<ExportRow>& rows, ExportStats& st) {
  for (std::size_t i = 0; i < dets.size(); ++i) {
    const Detection& d = dets[i];
    if (disp && i < disp->size() && (*disp)[i] == Disposition::dropped) continue;
    const Category* c = cats.find(d.label);
    if (!c || !c->scored) {
      ++st.excluded;
      continue;
    }
    json r;
    r["image_id"] = d.image_id;
    r["category_id"] = c->id;
    r["bbox"] = box_json(d.box);
    r["score"] = d.score;
    rows.push_back({d.image_id, d.id, std::move(r)});
  }
}

std::string finish(std::vector<ExportRow>& rows, ExportStats& st, ExportStats* out) {
  std::stable_sort(rows.begin(), rows.end(), [](const ExportRow& a, const ExportRow& b) {
    return std::tie(a.image, a.det) < std::tie(b.image, b.det);
  });
  json arr = json::array();
  for (auto& r : rows) arr.push_back(std::move(r.value));
  st.written = rows.size();
  if (out) *out = st;
  return arr.dump() + "\n";
}

}  // namespace

std::string render_coco_results(const std::vector<SceneRecord>& scenes, const CategoryMap& cats,
                                ExportStats* stats) {
  std::vector<ExportRow> rows;
  ExportStats st;
  for (const auto& s : scenes) {
    if (s.corrected.empty()) {
      collect_rows(s.raw_detections, nullptr, cats, rows, st);
    } else {
      collect_rows(s.corrected, &s.dispositions, cats, rows, st);
    }
  }
  return finish(rows, st, stats);
}

std::string render_detections(const std::vector<Detection>& dets, const CategoryMap& cats,
                              ExportStats* stats) {
  std::vector<ExportRow> rows;
  ExportStats st;
  collect_rows(dets, nullptr, cats, rows, st);
  return finish(rows, st, stats);
}

ExportStats write_coco_results(const std::vector<SceneRecord>& scenes,
                               const std::filesystem::path& path, const CategoryMap& cats) {
  ExportStats st;
  write_text_file(path, render_coco_results(scenes, cats, &st));
  return st;
}

std::string render_coco_annotations(const std::vector<SceneRecord>& scenes,
                                    const CategoryMap& cats) {
  json root;
  root["images"] = json::array();
  root["annotations"] = json::array();
  root["categories"] = json::array();
  std::set<CategoryId> referenced;
  for (const auto& s : scenes)
    for (const auto& g : s.ground_truth) referenced.insert(g.category_id);
  for (const auto& c : cats.all()) {
    if (c.scored) {
      root["categories"].push_back({{"id", c.id}, {"name", c.name}});
    } else if (referenced.count(c.id)) {
      root["categories"].push_back({{"id", c.id}, {"name", c.name}, {"scored", false}});
    }
  }
  for (const auto& s : scenes) {
    json img{{"id", s.image_id}, {"width", s.width}, {"height", s.height}};
    if (!s.file_name.empty()) img["file_name"] = s.file_name;
    if (!s.image_url.empty()) img["coco_url"] = s.image_url;
    root["images"].push_back(std::move(img));
    for (const auto& g : s.ground_truth) {
      root["annotations"].push_back({{"id", g.annotation_id},
                                     {"image_id", g.image_id},
                                     {"category_id", g.category_id},
                                     {"bbox", box_json(g.box)},
                                     {"area", g.area},
                                     {"iscrowd", g.iscrowd ? 1 : 0}});
    }
  }
  return root.dump() + "\n";
}

std::string read_text_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text_file(const std::filesystem::path& path, const std::string& text) {
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + path.string());
    out << text;
    out.flush();
    if (!out) throw IoError("write failed for " + path.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw IoError("cannot write " + path.string() + ": " + ec.message());
}

}  // namespace vla
