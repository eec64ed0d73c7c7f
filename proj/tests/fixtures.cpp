#include "fixtures.hpp"

#include <fcntl.h>
#include <signal.h>
#include <sys/wait.h>
#include <unistd.h>

#include <atomic>
#include <cerrno>
#include <fstream>
#include <sstream>

#include "vla/cli.hpp"

namespace fx {

TempDir::TempDir() {
  static std::atomic<int> counter{0};
  path_ = fs::temp_directory_path() /
          ("vla-test-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
  fs::remove_all(path_);
  fs::create_directories(path_);
}

TempDir::~TempDir() {
  std::error_code ec;
  fs::remove_all(path_, ec);
}

const char* const kAirplaneMoonAnnotations = R"({
  "images": [{"id": 1, "width": 640, "height": 480, "file_name": "airplane_moon.jpg"}],
  "annotations": [
    {"id": 11, "image_id": 1, "category_id": 5, "bbox": [320, 49, 320, 101], "area": 32320, "iscrowd": 0},
    {"id": 12, "image_id": 1, "category_id": 1000, "bbox": [100, 350, 90, 130], "area": 11700, "iscrowd": 0}
  ],
  "categories": [
    {"id": 5, "name": "airplane"},
    {"id": 55, "name": "orange"},
    {"id": 1000, "name": "moon", "scored": false}
  ]
})";

const char* const kAirplaneMoonDetections = R"([
  {"image_id": 1, "category_id": 5, "bbox": [320, 49, 320, 101], "score": 0.9},
  {"image_id": 1, "category_id": 55, "bbox": [100, 350, 90, 130], "score": 0.8}
])";

vla::AnnotationSet airplane_moon_data() { return vla::parse_coco_annotations(kAirplaneMoonAnnotations); }

vla::SceneRecord airplane_moon_scene(const vla::CategoryMap& cats) {
  auto data = vla::parse_coco_annotations(kAirplaneMoonAnnotations);
  auto dets = vla::parse_coco_results(kAirplaneMoonDetections, cats, &data.scenes);
  vla::attach_detections(data.scenes, std::move(dets));
  return data.scenes.front();
}

MicroScene random_micro_scene(vla::SplitMix64& rng) {
  MicroScene m;
  const auto ncat = rng.integer(1, 4);
  for (int c = 1; c <= ncat; ++c) m.cats.add(c, "c" + std::to_string(c), true);
  m.cats.add(99, "extra", false);

  auto random_box = [&](int size) {
    const double w = static_cast<double>(rng.integer(2, 150));
    const double h = static_cast<double>(rng.integer(2, 150));
    const double x = static_cast<double>(rng.integer(0, size - 1));
    const double y = static_cast<double>(rng.integer(0, size - 1));
    return vla::BoundingBox{x, y, x + w, y + h};
  };

  const auto nimg = rng.integer(1, 5);
  std::int64_t ann = 1;
  for (int i = 0; i < nimg; ++i) {
    vla::EvalImage im;
    im.image_id = rng.integer(1, 50) * 10 + i;  // unsorted ids
    const auto ngt = rng.integer(0, 6);
    for (int g = 0; g < ngt; ++g) {
      vla::GroundTruthObject o;
      o.annotation_id = ann++;
      o.image_id = im.image_id;
      o.box = random_box(160);
      o.category_id = rng.integer(1, ncat);
      o.iscrowd = rng.uniform() < 0.1;
      // Annotation area is a mask area, not the box area; sometimes make them differ.
      o.area = rng.uniform() < 0.2 ? static_cast<double>(rng.integer(1, 12000)) : o.box.area();
      im.ground_truth.push_back(o);
    }
    const auto ndet = rng.integer(0, 10);
    for (int d = 0; d < ndet; ++d) {
      vla::Detection det;
      det.id = vla::make_det_id(im.image_id, static_cast<std::size_t>(d + 1));
      det.image_id = im.image_id;
      if (!im.ground_truth.empty() && rng.uniform() < 0.7) {
        const auto& g = im.ground_truth[rng.integer(0, static_cast<std::int64_t>(im.ground_truth.size()) - 1)];
        const double dx = static_cast<double>(rng.integer(-6, 6));
        const double dy = static_cast<double>(rng.integer(-6, 6));
        const double dw = static_cast<double>(rng.integer(-6, 6));
        det.box = {g.box.x1 + dx, g.box.y1 + dy, std::max(g.box.x1 + dx + 1, g.box.x2 + dx + dw),
                   g.box.y2 + dy};
        det.label = rng.uniform() < 0.8 ? "c" + std::to_string(g.category_id)
                                        : "c" + std::to_string(rng.integer(1, ncat));
      } else {
        det.box = random_box(160);
        det.label = "c" + std::to_string(rng.integer(1, ncat));
      }
      const double u = rng.uniform();
      if (u < 0.05) det.label = "extra";
      else if (u < 0.08) det.label = "unregistered";
      // Coarse scores so ties are common.
      det.score = static_cast<double>(rng.integer(1, 10)) / 10.0;
      im.detections.push_back(det);
    }
    m.images.push_back(std::move(im));
  }
  return m;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

nlohmann::json read_json(const fs::path& p) { return nlohmann::json::parse(slurp(p)); }

void write_json(const fs::path& p, const nlohmann::json& j) {
  std::ofstream(p, std::ios::binary) << j.dump(2) << "\n";
}

CliResult run_cli(const std::vector<std::string>& args) {
  std::vector<const char*> argv{"vla"};
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  CliResult r;
  r.code = vla::run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
  r.out = out.str();
  r.err = err.str();
  return r;
}

Child spawn_cli(const std::vector<std::string>& args, const fs::path& out, const fs::path& err) {
  std::vector<std::string> owned{VLA_CLI_PATH};
  owned.insert(owned.end(), args.begin(), args.end());
  std::vector<char*> argv;
  for (auto& a : owned) argv.push_back(a.data());
  argv.push_back(nullptr);
  const pid_t pid = ::fork();
  if (pid < 0) throw std::runtime_error("fork failed");
  if (pid == 0) {
    const int o = ::open(out.c_str(), O_WRONLY | O_CREAT | O_TRUNC, 0644);
    const int e = ::open(err.c_str(), O_WRONLY | O_CREAT | O_TRUNC, 0644);
    if (o < 0 || e < 0) ::_exit(127);
    ::dup2(o, 1);
    ::dup2(e, 2);
    ::execv(argv[0], argv.data());
    ::_exit(127);
  }
  return {pid};
}

int wait_child(const Child& c) {
  int status = 0;
  while (::waitpid(c.pid, &status, 0) < 0) {
    if (errno != EINTR) throw std::runtime_error("waitpid failed");
  }
  if (WIFEXITED(status)) return WEXITSTATUS(status);
  if (WIFSIGNALED(status)) return -WTERMSIG(status);
  return -1000;
}

void signal_child(const Child& c, int sig) { ::kill(c.pid, sig); }

std::size_t count_lines(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::size_t n = 0;
  for (std::string line; std::getline(in, line);) ++n;
  return n;
}

fs::path synth_bundle(const fs::path& dir, std::uint64_t seed, std::size_t images, double noise) {
  auto r = run_cli({"synth", "--out-dir", dir.string(), "--seed", std::to_string(seed), "--images",
                    std::to_string(images), "--noise", std::to_string(noise)});
  if (r.code != 0) throw std::runtime_error("synth failed: " + r.err);
  return dir / "config.json";
}

}  // namespace fx
