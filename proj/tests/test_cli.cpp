#include <gtest/gtest.h>

#include <signal.h>

#include <chrono>
#include <cmath>
#include <functional>
#include <thread>

#include <nlohmann/json.hpp>

#include "fixtures.hpp"
#include "vla/coco_io.hpp"

using nlohmann::json;

namespace {

void write_airplane_moon(const fx::TempDir& dir) {
  vla::write_text_file(dir / "annotations.json", fx::kAirplaneMoonAnnotations);
  vla::write_text_file(dir / "detections.json", fx::kAirplaneMoonDetections);
}

json airplane_moon_config(const fx::TempDir& dir) {
  write_airplane_moon(dir);
  return {{"seed", 7},
          {"paths",
           {{"annotations", (dir / "annotations.json").string()},
            {"audit_log", (dir / "audit.jsonl").string()},
            {"transcript", (dir / "transcript.jsonl").string()},
            {"results", (dir / "results.json").string()}}},
          {"agents",
           {{"detector", {{"transport", "file"}, {"path", (dir / "detections.json").string()}}},
            {"linguistic", {{"transport", "mock"}}},
            {"classifier", {{"transport", "mock"}}}}}};
}

void write_ig_inputs(const fx::TempDir& dir, const json& table) {
  vla::write_text_file(dir / "dets.json", R"([
    {"image_id": 3, "category_id": 1, "bbox": [0, 0, 10, 10], "score": 0.5},
    {"image_id": 3, "category_id": 2, "bbox": [50, 50, 10, 10], "score": 0.5}])");
  fx::write_json(dir / "table.json", table);
}

json uniform_table() {
  json t = json::array();
  for (auto [i, j] : {std::pair{0, 1}, {1, 0}})
    for (const char* rel : {"near", "far"}) t.push_back({{"i", i}, {"j", j}, {"label", "x"}, {"relation", rel}, {"p", 0.25}});
  return t;
}

bool wait_for(const std::function<bool()>& pred, double seconds) {
  const auto until = std::chrono::steady_clock::now() + std::chrono::duration<double>(seconds);
  while (std::chrono::steady_clock::now() < until) {
    if (pred()) return true;
    std::this_thread::sleep_for(std::chrono::milliseconds(2));
  }
  return pred();
}

}  // namespace

TEST(Cli, HelpListsSubcommands) {
  auto r = fx::run_cli({"--help"});
  EXPECT_EQ(r.code, 0);
  for (const char* sub : {"run", "evaluate", "correction-report", "analyze-ig", "serve-mock", "validate-protocol", "synth"})
    EXPECT_NE(r.out.find(sub), std::string::npos) << sub;
}

TEST(Cli, UsageErrorsExitOne) {
  EXPECT_EQ(fx::run_cli({}).code, 1);
  EXPECT_EQ(fx::run_cli({"frobnicate"}).code, 1);
  EXPECT_EQ(fx::run_cli({"evaluate", "--annotations", "a.json", "--results", "r.json", "--bogus"}).code, 1);
  EXPECT_EQ(fx::run_cli({"run"}).code, 1);
}

TEST(Cli, MissingDetectorNamesTheField) {
  fx::TempDir dir;
  auto cfg = airplane_moon_config(dir);
  cfg["agents"].erase("detector");
  fx::write_json(dir / "c.json", cfg);
  auto r = fx::run_cli({"run", "--config", (dir / "c.json").string()});
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.err.find("agents.detector"), std::string::npos) << r.err;
}

TEST(Cli, MissingConfigFileExitsOne) {
  auto r = fx::run_cli({"run", "--config", "/nonexistent/vla.json"});
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.err.find("config"), std::string::npos);
}

TEST(Cli, MockRunNeedsASeed) {
  fx::TempDir dir;
  auto cfg = airplane_moon_config(dir);
  cfg.erase("seed");
  fx::write_json(dir / "c.json", cfg);
  auto r = fx::run_cli({"run", "--config", (dir / "c.json").string()});
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.err.find("seed"), std::string::npos);
  r = fx::run_cli({"run", "--config", (dir / "c.json").string(), "--seed", "3"});
  EXPECT_EQ(r.code, 0) << r.err;
}

TEST(Cli, AirplaneMoonRunReportsTheCorrection) {
  fx::TempDir dir;
  fx::write_json(dir / "c.json", airplane_moon_config(dir));
  auto r = fx::run_cli({"run", "--config", (dir / "c.json").string()});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_NE(r.out.find("relabeled 1"), std::string::npos) << r.out;
  EXPECT_NE(r.out.find("ED 1, CD 1, CR 100.0%"), std::string::npos) << r.out;

  auto rep = fx::run_cli({"correction-report", "--annotations", (dir / "annotations.json").string(), "--audit-log",
                          (dir / "audit.jsonl").string()});
  EXPECT_EQ(rep.code, 0) << rep.err;
  EXPECT_NE(rep.out.find("100.0%"), std::string::npos) << rep.out;
}

TEST(Cli, RunIsDeterministicAndAgentsMockOverrides) {
  fx::TempDir dir;
  const auto cfg = fx::synth_bundle(dir.path(), 5, 25, 0.2);
  auto a = fx::run_cli({"run", "--config", cfg.string(), "--json"});
  const auto first = fx::slurp(dir / "summary.json");
  auto b = fx::run_cli({"run", "--config", cfg.string(), "--json", "--parallelism", "3"});
  ASSERT_EQ(a.code, 0) << a.err;
  EXPECT_EQ(a.out, b.out);
  EXPECT_EQ(first, fx::slurp(dir / "summary.json"));
  auto c = fx::run_cli({"run", "--config", cfg.string(), "--agents", "mock", "--seed", "9", "--json"});
  ASSERT_EQ(c.code, 0) << c.err;
  EXPECT_NE(json::parse(c.out)["config_hash"], json::parse(a.out)["config_hash"]);
}

TEST(Cli, EvaluateFormats) {
  fx::TempDir dir;
  write_airplane_moon(dir);
  const std::vector<std::string> base{"evaluate", "--annotations", (dir / "annotations.json").string(), "--results",
                                      (dir / "detections.json").string()};
  auto text = fx::run_cli(base);
  ASSERT_EQ(text.code, 0) << text.err;
  EXPECT_NE(text.out.find("AP50:95"), std::string::npos);
  EXPECT_NE(text.out.find("100.0"), std::string::npos);
  EXPECT_NE(text.out.find("—"), std::string::npos);  // no small objects

  auto args = base;
  args.insert(args.end(), {"--format", "json"});
  auto j = json::parse(fx::run_cli(args).out);
  EXPECT_EQ(j["ap"]["ap_50"], 1.0);
  EXPECT_TRUE(j["ap"]["ap_small"].is_null());

  args = base;
  args.insert(args.end(), {"--format", "csv", "-o", (dir / "r.csv").string()});
  EXPECT_EQ(fx::run_cli(args).code, 0);
  EXPECT_EQ(fx::slurp(dir / "r.csv").rfind("section,key,value\n", 0), 0u);

  args = base;
  args.insert(args.end(), {"--format", "yaml"});
  EXPECT_EQ(fx::run_cli(args).code, 1);
}

TEST(Cli, EvaluateUnknownImageStrictVersusLenient) {
  fx::TempDir dir;
  write_airplane_moon(dir);
  vla::write_text_file(dir / "extra.json", R"([{"image_id": 99, "category_id": 5, "bbox": [0,0,5,5], "score": 0.5}])");
  std::vector<std::string> args{"evaluate", "--annotations", (dir / "annotations.json").string(), "--results",
                                (dir / "extra.json").string()};
  auto strict = fx::run_cli(args);
  EXPECT_EQ(strict.code, 1);
  EXPECT_NE(strict.err.find("99"), std::string::npos);
  args.push_back("--lenient");
  EXPECT_EQ(fx::run_cli(args).code, 0);
}

TEST(Cli, CorrectionReportFromCounts) {
  auto r = fx::run_cli({"correction-report", "--ed", "1327", "--cd", "597"});
  ASSERT_EQ(r.code, 0);
  EXPECT_NE(r.out.find("44.9%"), std::string::npos) << r.out;
  EXPECT_NE(r.out.find("IoU >= 0.50"), std::string::npos);
  EXPECT_EQ(fx::run_cli({"correction-report", "--ed", "5", "--cd", "6"}).code, 1);
  EXPECT_EQ(fx::run_cli({"correction-report", "--ed", "5"}).code, 1);
  auto j = json::parse(fx::run_cli({"correction-report", "--ed", "1327", "--cd", "996", "--format", "json"}).out);
  EXPECT_EQ(j["correction"]["cr_display"], "75.0");
}

TEST(Cli, AnalyzeIgUniformTable) {
  fx::TempDir dir;
  write_ig_inputs(dir, uniform_table());
  const std::vector<std::string> args{"analyze-ig", "--detections", (dir / "dets.json").string(), "--relation-table",
                                      (dir / "table.json").string()};
  auto r = fx::run_cli(args);
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_NE(r.out.find("0.6931"), std::string::npos) << r.out;
  EXPECT_NE(r.out.find("1.3863"), std::string::npos);
  EXPECT_NE(r.out.find("-0.6931"), std::string::npos);
  EXPECT_EQ(fx::run_cli(args).out, r.out);

  auto jargs = args;
  jargs.push_back("--json");
  auto j = json::parse(fx::run_cli(jargs).out);
  EXPECT_NEAR(j["images"][0]["weighted_entropy"].get<double>(), std::log(2.0), 1e-12);
  EXPECT_NEAR(j["images"][0]["global_entropy"].get<double>(), std::log(4.0), 1e-12);
  EXPECT_NEAR(j["images"][0]["information_gain"].get<double>(), -std::log(2.0), 1e-12);
}

TEST(Cli, AnalyzeIgPointMassAndUnnormalized) {
  fx::TempDir dir;
  write_ig_inputs(dir, json::array({{{"i", 0}, {"j", 1}, {"label", "x"}, {"relation", "on"}, {"p", 1.0}}}));
  const std::vector<std::string> args{"analyze-ig", "--detections", (dir / "dets.json").string(), "--relation-table",
                                      (dir / "table.json").string(), "--json"};
  auto j = json::parse(fx::run_cli(args).out);
  EXPECT_EQ(j["images"][0]["global_entropy"].get<double>(), 0.0);

  auto t = uniform_table();
  t[0]["p"] = 0.15;
  write_ig_inputs(dir, t);
  auto r = fx::run_cli(args);
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.err.find("0.9"), std::string::npos) << r.err;
}

TEST(Cli, ValidateProtocolExitCodes) {
  fx::TempDir dir;
  const auto cfg = fx::synth_bundle(dir.path(), 6, 8, 0.3);
  ASSERT_EQ(fx::run_cli({"run", "--config", cfg.string()}).code, 0);
  auto ok = fx::run_cli({"validate-protocol", (dir / "transcript.jsonl").string()});
  EXPECT_EQ(ok.code, 0) << ok.out;
  EXPECT_NE(ok.out.find("0 violation(s)"), std::string::npos);

  auto text = fx::slurp(dir / "transcript.jsonl");
  text.resize(text.size() - 10);
  vla::write_text_file(dir / "cut.jsonl", text);
  auto bad = fx::run_cli({"validate-protocol", (dir / "cut.jsonl").string()});
  EXPECT_EQ(bad.code, 2);
  EXPECT_NE(bad.out.find("1 violation(s)"), std::string::npos) << bad.out;

  EXPECT_EQ(fx::run_cli({"validate-protocol", (dir / "missing.jsonl").string()}).code, 1);
}

TEST(Cli, SynthRequiresSeedAndValidRegime) {
  fx::TempDir dir;
  EXPECT_EQ(fx::run_cli({"synth", "--out-dir", dir.path().string()}).code, 1);
  EXPECT_EQ(fx::run_cli({"synth", "--out-dir", dir.path().string(), "--seed", "1", "--regime", "tangled"}).code, 1);
  auto r = fx::run_cli({"synth", "--out-dir", dir.path().string(), "--seed", "1", "--images", "4", "--noise", "0.5"});
  EXPECT_EQ(r.code, 0) << r.err;
  EXPECT_NE(r.out.find("wrote 4 images"), std::string::npos);
}

TEST(CliProcess, SigtermInterruptsThenResumeFinishes) {
  fx::TempDir dir;
  fx::synth_bundle(dir.path(), 40, 3000, 0.2);
  const auto cfg = (dir / "config.json").string();
  auto child = fx::spawn_cli({"run", "--config", cfg}, dir / "out.txt", dir / "err.txt");
  wait_for([&] { return fx::count_lines(dir / "checkpoint.jsonl") > 20; }, 30);
  fx::signal_child(child, SIGTERM);
  const int code = fx::wait_child(child);
  // A run that finished before the signal landed exits 0; an interrupted one exits 2.
  if (code == 2) {
    EXPECT_NE(fx::slurp(dir / "out.txt").find("interrupted"), std::string::npos);
    EXPECT_FALSE(fx::fs::exists(dir / "summary.json"));
  } else {
    EXPECT_EQ(code, 0);
  }
  auto resumed = fx::run_cli({"run", "--config", cfg, "--resume"});
  EXPECT_EQ(resumed.code, 0) << resumed.err;
  const auto after_resume = fx::slurp(dir / "summary.json");
  auto fresh = fx::run_cli({"run", "--config", cfg});
  EXPECT_EQ(fresh.code, 0);
  EXPECT_EQ(fx::slurp(dir / "summary.json"), after_resume);
}

TEST(CliProcess, ServeMockStopsOnSigterm) {
  fx::TempDir dir;
  write_airplane_moon(dir);
  auto child = fx::spawn_cli({"serve-mock", "--annotations", (dir / "annotations.json").string(), "--detections",
                              (dir / "detections.json").string(), "--seed", "1", "--port", "0"},
                             dir / "out.txt", dir / "err.txt");
  auto listening = [&] {
    return fx::fs::exists(dir / "out.txt") &&
           fx::slurp(dir / "out.txt").find("listening on http://127.0.0.1:") != std::string::npos;
  };
  ASSERT_TRUE(wait_for(listening, 20))
      << fx::slurp(dir / "err.txt");
  fx::signal_child(child, SIGTERM);
  EXPECT_EQ(fx::wait_child(child), 0);
}
