#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "vla/coco_io.hpp"
#include "vla/evaluator.hpp"
#include "vla/rng.hpp"

namespace fx {

namespace fs = std::filesystem;

// Scratch directory removed on destruction.
class TempDir {
 public:
  TempDir();
  ~TempDir();
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const fs::path& path() const { return path_; }
  fs::path operator/(const std::string& name) const { return path_ / name; }

 private:
  fs::path path_;
};

// The airplane-and-moon scene: airplane correctly detected, the moon detected as an orange.
// "moon" is annotated but outside the scoring vocabulary.
extern const char* const kAirplaneMoonAnnotations;
extern const char* const kAirplaneMoonDetections;
vla::AnnotationSet airplane_moon_data();
// Scene 1 of airplane_moon_data() with its detections attached.
vla::SceneRecord airplane_moon_scene(const vla::CategoryMap& cats);

struct MicroScene {
  vla::CategoryMap cats;
  std::vector<vla::EvalImage> images;
};

// At most 5 images, 10 detections per image, 4 scored categories; integer boxes so every
// IoU is one rounding of exact integers.
MicroScene random_micro_scene(vla::SplitMix64& rng);

std::string slurp(const fs::path& p);
nlohmann::json read_json(const fs::path& p);
void write_json(const fs::path& p, const nlohmann::json& j);

// Runs the CLI in-process; returns the exit code, captures both streams.
struct CliResult {
  int code = 0;
  std::string out;
  std::string err;
};
CliResult run_cli(const std::vector<std::string>& args);

// The built `vla` binary as a child process, stdout and stderr sent to files.
struct Child {
  int pid = -1;
};
Child spawn_cli(const std::vector<std::string>& args, const fs::path& out, const fs::path& err);
// Exit status, or -signal when the child was killed.
int wait_child(const Child& c);
void signal_child(const Child& c, int sig);
std::size_t count_lines(const fs::path& p);

// `vla synth` into `dir`; returns the config path.
fs::path synth_bundle(const fs::path& dir, std::uint64_t seed, std::size_t images, double noise);

}  // namespace fx
