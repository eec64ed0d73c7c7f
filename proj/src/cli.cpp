#include "vla/cli.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <map>
#include <sstream>
#include <thread>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "vla/coco_io.hpp"
#include "vla/error.hpp"
#include "vla/evaluator.hpp"
#include "vla/geometry.hpp"
#include "vla/mock_server.hpp"
#include "vla/oracle.hpp"
#include "vla/pipeline.hpp"
#include "vla/protocol_validator.hpp"
#include "vla/synth.hpp"

namespace vla {

using nlohmann::json;

std::atomic<bool>& stop_flag() {
  static std::atomic<bool> flag{false};
  return flag;
}

namespace {

struct RunArgs {
  std::string config;
  std::string agents = "config";
  std::optional<std::uint64_t> seed;
  std::optional<int> parallelism;
  std::string detections, results, audit_log, transcript, summary, checkpoint, captions;
  std::string response_format;
  bool resume = false;
  bool json_out = false;
};

struct EvalArgs {
  std::string annotations, results, format = "text", output;
  bool lenient = false;
};

struct CorrArgs {
  std::optional<std::int64_t> ed, cd;
  std::string annotations, audit_log, format = "text";
  double match_iou = 0.5;
};

struct IgArgs {
  std::string detections, relation_table;
  bool json_out = false;
};

struct ServeArgs {
  std::string annotations, detections, host = "127.0.0.1", key_env;
  int port = 8080;
  std::optional<std::uint64_t> seed;
  double alpha = 1.0, beta = 0.0, gamma = 1.0, match_iou = 0.5;
};

struct SynthArgs {
  std::size_t images = 10;
  int width = 640, height = 480;
  std::size_t min_objects = 1, max_objects = 6, categories = 10;
  std::string regime = "mixed", out_dir;
  std::optional<std::uint64_t> seed;
  double noise = 0.0;
};

void set_if(json& j, const char* key, const std::string& v) {
  if (!v.empty()) j[key] = v;
}

RunConfig build_run_config(const RunArgs& a) {
  std::string text;
  try {
    text = read_text_file(a.config);
  } catch (const IoError& e) {
    throw ConfigError(std::string("cannot read config: ") + e.what());
  }
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ParseError("malformed config " + a.config + ": " + e.what(), e.byte);
  }
  if (!j.is_object()) throw ConfigError("config must be a JSON object");
  if (a.seed) j["seed"] = *a.seed;
  if (a.parallelism) j["parallelism"] = *a.parallelism;
  set_if(j, "response_format", a.response_format);
  json& paths = j["paths"];
  if (paths.is_null()) paths = json::object();
  set_if(paths, "results", a.results);
  set_if(paths, "audit_log", a.audit_log);
  set_if(paths, "transcript", a.transcript);
  set_if(paths, "summary", a.summary);
  set_if(paths, "checkpoint", a.checkpoint);
  set_if(paths, "captions", a.captions);

  json& agents = j["agents"];
  if (agents.is_null()) agents = json::object();
  if (a.agents == "mock") {
    std::string det_path = a.detections;
    if (det_path.empty() && agents.contains("detector") && agents["detector"].is_object()) {
      det_path = agents["detector"].value("path", "");
    }
    agents["detector"] = {{"transport", "mock"}};
    if (!det_path.empty()) agents["detector"]["path"] = det_path;
    agents["linguistic"] = {{"transport", "mock"}};
    agents["classifier"] = {{"transport", "mock"}};
  } else if (!a.detections.empty()) {
    if (!agents.contains("detector") || !agents["detector"].is_object()) {
      throw ConfigError("agents.detector: missing endpoint");
    }
    agents["detector"]["path"] = a.detections;
  }
  return RunConfig::from_json(j);
}

void print_summary(const RunSummary& s, std::ostream& out) {
  out << "images " << s.completed << "/" << s.images << " completed";
  if (s.resumed) out << " (" << s.resumed << " from checkpoint)";
  out << "\ndetections " << s.detections << ", flagged " << s.flagged << ", relabeled " << s.relabeled
      << ", retained after flag " << s.retained_after_flag << ", dropped " << s.dropped << ", excluded "
      << s.excluded << "\n";
  if (s.protocol_fallbacks) out << "protocol fallbacks " << s.protocol_fallbacks << "\n";
  if (s.interrupted) {
    out << "interrupted: rerun with --resume to finish\n";
    return;
  }
  out << "ED " << s.correction.ed << ", CD " << s.correction.cd << ", CR "
      << (s.correction.ed ? s.correction.cr_display() + "%" : "—") << "\n";
  if (s.ap_before && s.ap_after) {
    out << "AP50:95 before " << percent_cell(s.ap_before->ap_50_95) << ", after "
        << percent_cell(s.ap_after->ap_50_95) << "\n";
  }
  for (const auto& [id, msg] : s.failed) out << "failed image " << id << ": " << msg << "\n";
}

int cmd_run(const RunArgs& a, bool verbose, std::ostream& out, std::ostream& err) {
  const RunConfig cfg = build_run_config(a);
  if (verbose) err << "config hash " << cfg.hash() << "\n";
  RunOptions opts;
  opts.resume = a.resume;
  opts.stop = &stop_flag();
  const RunResult r = run_pipeline(cfg, opts);
  if (a.json_out) {
    out << r.summary.to_json().dump(2) << "\n";
  } else {
    print_summary(r.summary, out);
  }
  return r.exit_code();
}

int cmd_evaluate(const EvalArgs& a, bool verbose, std::ostream& out, std::ostream& err) {
  auto fmt = report_format_from_string(a.format);
  if (!fmt) throw ConfigError("--format must be text, json or csv");
  const ParseMode mode = a.lenient ? ParseMode::lenient : ParseMode::strict;
  LoadStats stats;
  AnnotationSet data = load_coco_annotations(a.annotations, mode, &stats);
  auto dets = load_coco_results(a.results, data.categories, &data.scenes, mode, &stats);
  attach_detections(data.scenes, std::move(dets), &stats);
  if (verbose) {
    for (const auto& w : stats.warnings) err << "warning: " << w << "\n";
  }
  const EvalReport rep = evaluate_coco(data.scenes, data.categories, DetectionSet::raw);
  const std::string doc = render_report(&rep, nullptr, *fmt);
  if (a.output.empty()) {
    out << doc;
  } else {
    write_text_file(a.output, doc);
  }
  return 0;
}

int cmd_correction_report(const CorrArgs& a, std::ostream& out) {
  auto fmt = report_format_from_string(a.format);
  if (!fmt) throw ConfigError("--format must be text, json or csv");
  CorrectionReport rep;
  if (a.ed || a.cd) {
    if (!a.ed || !a.cd) throw ConfigError("--ed and --cd go together");
    rep = CorrectionReport::from_counts(*a.ed, *a.cd, a.match_iou);
  } else {
    if (a.annotations.empty() || a.audit_log.empty()) {
      throw ConfigError("give either --ed/--cd or --annotations with --audit-log");
    }
    AnnotationSet data = load_coco_annotations(a.annotations);
    std::map<ImageId, ImageOutcome> by_image;
    std::istringstream in(read_text_file(a.audit_log));
    std::string line;
    std::size_t n = 0;
    while (std::getline(in, line)) {
      ++n;
      if (line.empty()) continue;
      AuditRecord r;
      try {
        r = AuditRecord::from_json(json::parse(line));
      } catch (const std::exception& e) {
        throw ValidationError("audit log line " + std::to_string(n) + ": " + e.what());
      }
      auto& o = by_image[r.image_id];
      o.image_id = r.image_id;
      o.audit.push_back(std::move(r));
    }
    std::vector<SceneRecord> scenes;
    for (const auto& s : data.scenes) {
      auto it = by_image.find(s.image_id);
      if (it == by_image.end()) continue;
      SceneRecord copy = s;
      apply_outcome(copy, it->second);
      scenes.push_back(std::move(copy));
    }
    rep = correction_metrics(scenes, data.categories, a.match_iou);
  }
  out << render_report(nullptr, &rep, *fmt);
  return 0;
}

int cmd_analyze_ig(const IgArgs& a, std::ostream& out) {
  const json raw = [&] {
    try {
      return json::parse(read_text_file(a.detections));
    } catch (const json::parse_error& e) {
      throw ParseError("malformed detections file: " + std::string(e.what()), e.byte);
    }
  }();
  if (!raw.is_array()) throw ValidationError("detections file must be a COCO results array");
  CategoryMap cats;
  for (const auto& r : raw) {
    if (r.is_object() && r.contains("category_id") && r["category_id"].is_number_integer()) {
      const auto id = r["category_id"].get<CategoryId>();
      if (!cats.contains(id)) cats.add(id, "category " + std::to_string(id), true);
    }
  }
  std::map<ImageId, std::vector<Detection>> by_image;
  for (auto& d : parse_coco_results(raw.dump(), cats)) by_image[d.image_id].push_back(std::move(d));

  const json tables = [&] {
    try {
      return json::parse(read_text_file(a.relation_table));
    } catch (const json::parse_error& e) {
      throw ParseError("malformed relation table: " + std::string(e.what()), e.byte);
    }
  }();
  std::map<ImageId, std::string> table_text;
  if (tables.is_array()) {
    if (by_image.size() != 1) {
      throw ValidationError("a bare relation table needs exactly one image in the detections file; use "
                            "{\"<image_id>\": [...]} for several");
    }
    table_text[by_image.begin()->first] = tables.dump();
  } else if (tables.is_object()) {
    for (const auto& [k, v] : tables.items()) table_text[std::stoll(k)] = v.dump();
  } else {
    throw ValidationError("relation table must be an array or an object keyed by image id");
  }

  struct Row {
    ImageId image;
    std::size_t objects;
    double hw, hg, ig;
  };
  std::vector<Row> rows;
  for (const auto& [image, dets] : by_image) {
    auto it = table_text.find(image);
    if (it == table_text.end()) throw ValidationError("no relation table for image " + std::to_string(image));
    std::vector<double> probs;
    std::vector<BoundingBox> boxes;
    for (const auto& d : dets) {
      probs.push_back(d.score);
      boxes.push_back(d.box);
    }
    RelationTable table = [&] {
      try {
        return RelationTable::from_json(it->second, dets.size());
      } catch (const Error& e) {
        throw ValidationError("image " + std::to_string(image) + ": " + e.what());
      }
    }();
    const double hw = weighted_entropy(probs, boxes);
    const double hg = global_entropy(table);
    rows.push_back({image, dets.size(), hw, hg, information_gain(hw, hg)});
  }

  double shw = 0, shg = 0, sig = 0;
  for (const auto& r : rows) {
    shw += r.hw;
    shg += r.hg;
    sig += r.ig;
  }
  const double n = static_cast<double>(std::max<std::size_t>(1, rows.size()));
  if (a.json_out) {
    json j = json::object();
    json imgs = json::array();
    for (const auto& r : rows) {
      imgs.push_back({{"image_id", r.image}, {"objects", r.objects}, {"weighted_entropy", r.hw},
                      {"global_entropy", r.hg}, {"information_gain", r.ig}});
    }
    j["images"] = imgs;
    j["aggregate"] = {{"images", rows.size()},
                      {"weighted_entropy_sum", shw},
                      {"global_entropy_sum", shg},
                      {"information_gain_sum", sig},
                      {"information_gain_mean", sig / n}};
    out << j.dump(2) << "\n";
    return 0;
  }
  char buf[160];
  out << "image_id  objects      H_w(Y)     H(Y,R)          IG\n";
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "%8lld  %7zu  %10.4f %10.4f  %10.4f\n", static_cast<long long>(r.image),
                  r.objects, r.hw, r.hg, r.ig);
    out << buf;
  }
  std::snprintf(buf, sizeof buf, "     sum  %7s  %10.4f %10.4f  %10.4f\n", "", shw, shg, sig);
  out << buf;
  std::snprintf(buf, sizeof buf, "    mean  %7s  %10.4f %10.4f  %10.4f\n", "", shw / n, shg / n, sig / n);
  out << buf;
  return 0;
}

int cmd_serve_mock(const ServeArgs& a, std::ostream& out) {
  if (!a.seed) throw ConfigError("--seed is required for mock agents");
  AnnotationSet data = load_coco_annotations(a.annotations);
  std::vector<Detection> dets;
  if (!a.detections.empty()) dets = load_coco_results(a.detections, data.categories, &data.scenes);
  OracleConfig oc;
  oc.seed = *a.seed;
  oc.alpha = a.alpha;
  oc.beta = a.beta;
  oc.gamma = a.gamma;
  oc.match_iou = a.match_iou;
  oc.validate();
  MockServer server(std::move(data), std::move(dets), oc);
  if (!a.key_env.empty()) {
    AgentEndpointConfig ep;
    ep.role = AgentRole::linguistic;
    ep.api_key_env = a.key_env;
    server.require_key(resolve_credential(ep));
  }
  const int port = server.start(a.host, a.port);
  out << "listening on http://" << a.host << ":" << port << std::endl;
  while (!stop_flag().load()) std::this_thread::sleep_for(std::chrono::milliseconds(100));
  server.stop();
  return 0;
}

int cmd_validate(const std::string& path, std::ostream& out) {
  const ProtocolReport rep = validate_transcript_file(path);
  out << rep.render();
  return rep.ok() ? 0 : 2;
}

int cmd_synth(const SynthArgs& a, std::ostream& out) {
  if (!a.seed) throw ConfigError("--seed is required");
  SynthSpec spec;
  spec.image_count = a.images;
  spec.image_width = a.width;
  spec.image_height = a.height;
  spec.min_objects = a.min_objects;
  spec.max_objects = a.max_objects;
  spec.category_count = a.categories;
  spec.seed = *a.seed;
  auto regime = overlap_regime_from_string(a.regime);
  if (!regime) throw ConfigError("--regime must be disjoint, clustered or mixed");
  spec.regime = *regime;
  SynthScenes gen = generate_scenes(spec);

  namespace fs = std::filesystem;
  const fs::path dir(a.out_dir);
  fs::create_directories(dir);
  write_text_file(dir / "annotations.json", render_coco_annotations(gen.annotations.scenes, gen.annotations.categories));

  std::vector<SceneRecord> scenes = gen.annotations.scenes;
  attach_detections(scenes, gen.detections);
  std::vector<NoiseRecord> manifest;
  if (a.noise > 0.0) manifest = inject_label_noise(scenes, a.noise, *a.seed, gen.annotations.categories);
  std::vector<Detection> all;
  for (const auto& s : scenes) all.insert(all.end(), s.raw_detections.begin(), s.raw_detections.end());
  write_text_file(dir / "detections.json", render_detections(all, gen.annotations.categories));
  write_text_file(dir / "noise_manifest.jsonl", render_noise_manifest(manifest));

  json cfg{{"seed", *a.seed},
           {"paths",
            {{"annotations", (dir / "annotations.json").string()},
             {"results", (dir / "results.json").string()},
             {"audit_log", (dir / "audit.jsonl").string()},
             {"transcript", (dir / "transcript.jsonl").string()},
             {"summary", (dir / "summary.json").string()},
             {"checkpoint", (dir / "checkpoint.jsonl").string()}}},
           {"agents",
            {{"detector", {{"transport", "mock"}, {"path", (dir / "detections.json").string()}}},
             {"linguistic", {{"transport", "mock"}}},
             {"classifier", {{"transport", "mock"}}}}},
           {"oracle", {{"alpha", 1.0}, {"beta", 0.0}, {"gamma", 1.0}, {"match_iou", 0.5}}}};
  write_text_file(dir / "config.json", cfg.dump(2) + "\n");
  out << "wrote " << spec.image_count << " images, " << all.size() << " detections, " << manifest.size()
      << " injected label errors to " << dir.string() << "\n";
  return 0;
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Visual-linguistic agent pipeline: detect, review, correct, evaluate", "vla"};
  app.require_subcommand(1);
  bool verbose = false;
  app.add_flag("-v,--verbose", verbose, "Print warnings and progress to stderr");

  RunArgs run;
  auto* run_cmd = app.add_subcommand("run", "Run the three-stage pipeline");
  run_cmd->add_option("-c,--config", run.config, "Run config (JSON)")->required();
  run_cmd->add_option("--agents", run.agents, "Agent source: config or mock")->check(CLI::IsMember({"config", "mock"}));
  run_cmd->add_option("--seed", run.seed, "Seed (required with mock agents)");
  run_cmd->add_option("--parallelism", run.parallelism, "Worker threads")->check(CLI::PositiveNumber);
  run_cmd->add_option("--detections", run.detections, "Detections file for the file-backed detector");
  run_cmd->add_option("--results", run.results, "Output COCO results file");
  run_cmd->add_option("--audit-log", run.audit_log, "Output audit log (JSON lines)");
  run_cmd->add_option("--transcript", run.transcript, "Output agent transcript (JSON lines)");
  run_cmd->add_option("--summary", run.summary, "Output run summary (JSON)");
  run_cmd->add_option("--checkpoint", run.checkpoint, "Checkpoint file for resuming");
  run_cmd->add_option("--captions", run.captions, "Pre-supplied captions");
  run_cmd->add_option("--response-format", run.response_format, "structured-json or free-text")
      ->check(CLI::IsMember({"structured-json", "free-text"}));
  run_cmd->add_flag("--resume", run.resume, "Continue from the checkpoint");
  run_cmd->add_flag("--json", run.json_out, "Print the summary as JSON");

  EvalArgs ev;
  auto* eval_cmd = app.add_subcommand("evaluate", "COCO bbox evaluation of a results file");
  eval_cmd->add_option("--annotations", ev.annotations, "COCO annotation file")->required();
  eval_cmd->add_option("--results", ev.results, "COCO results file")->required();
  eval_cmd->add_option("--format", ev.format, "text, json or csv");
  eval_cmd->add_option("-o,--output", ev.output, "Write the report here instead of stdout");
  eval_cmd->add_flag("--lenient", ev.lenient, "Skip unknown images and categories instead of failing");

  CorrArgs corr;
  auto* corr_cmd = app.add_subcommand("correction-report", "Error detections, corrected detections, correction rate");
  corr_cmd->add_option("--ed", corr.ed, "Error detections (with --cd)");
  corr_cmd->add_option("--cd", corr.cd, "Corrected detections (with --ed)");
  corr_cmd->add_option("--annotations", corr.annotations, "COCO annotation file");
  corr_cmd->add_option("--audit-log", corr.audit_log, "Audit log of a run");
  corr_cmd->add_option("--match-iou", corr.match_iou, "IoU needed to match a ground-truth object");
  corr_cmd->add_option("--format", corr.format, "text, json or csv");

  IgArgs ig;
  auto* ig_cmd = app.add_subcommand("analyze-ig", "Weighted entropy, global entropy and information gain");
  ig_cmd->add_option("--detections", ig.detections, "COCO results file")->required();
  ig_cmd->add_option("--relation-table", ig.relation_table, "Joint label/relation distribution (JSON)")->required();
  ig_cmd->add_flag("--json", ig.json_out, "Machine-readable output");

  ServeArgs serve;
  auto* serve_cmd = app.add_subcommand("serve-mock", "Serve the oracle agents over HTTP");
  serve_cmd->add_option("--annotations", serve.annotations, "COCO annotation file")->required();
  serve_cmd->add_option("--detections", serve.detections, "Results file served by /detect");
  serve_cmd->add_option("--seed", serve.seed, "Oracle seed")->required();
  serve_cmd->add_option("--host", serve.host, "Bind address");
  serve_cmd->add_option("--port", serve.port, "Port (0 picks a free one)");
  serve_cmd->add_option("--alpha", serve.alpha, "P(flag | label error)");
  serve_cmd->add_option("--beta", serve.beta, "P(flag | correct label)");
  serve_cmd->add_option("--gamma", serve.gamma, "P(classifier returns the truth)");
  serve_cmd->add_option("--match-iou", serve.match_iou, "Oracle match threshold");
  serve_cmd->add_option("--require-key-env", serve.key_env, "Require a bearer token read from this variable");

  std::string transcript;
  auto* val_cmd = app.add_subcommand("validate-protocol", "Check a transcript against the agent schemas");
  val_cmd->add_option("transcript", transcript, "Transcript (JSON lines)")->required();

  SynthArgs syn;
  auto* syn_cmd = app.add_subcommand("synth", "Generate synthetic scenes with perfect or noisy detections");
  syn_cmd->add_option("--out-dir", syn.out_dir, "Output directory")->required();
  syn_cmd->add_option("--seed", syn.seed, "Seed")->required();
  syn_cmd->add_option("--images", syn.images, "Image count");
  syn_cmd->add_option("--width", syn.width, "Image width");
  syn_cmd->add_option("--height", syn.height, "Image height");
  syn_cmd->add_option("--min-objects", syn.min_objects, "Objects per image, lower bound");
  syn_cmd->add_option("--max-objects", syn.max_objects, "Objects per image, upper bound");
  syn_cmd->add_option("--categories", syn.categories, "Category count");
  syn_cmd->add_option("--regime", syn.regime, "disjoint, clustered or mixed");
  syn_cmd->add_option("--noise", syn.noise, "Label noise rate injected into the detections");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? 0 : 1;
  }

  try {
    if (*run_cmd) return cmd_run(run, verbose, out, err);
    if (*eval_cmd) return cmd_evaluate(ev, verbose, out, err);
    if (*corr_cmd) return cmd_correction_report(corr, out);
    if (*ig_cmd) return cmd_analyze_ig(ig, out);
    if (*serve_cmd) return cmd_serve_mock(serve, out);
    if (*val_cmd) return cmd_validate(transcript, out);
    if (*syn_cmd) return cmd_synth(syn, out);
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}

}  // namespace vla
