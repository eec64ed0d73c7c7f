#pragma once

#include <atomic>
#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "vla/coco_io.hpp"
#include "vla/evaluator.hpp"
#include "vla/gateway.hpp"
#include "vla/oracle.hpp"
#include "vla/prompt.hpp"
#include "vla/types.hpp"

namespace vla {

enum class UncorrectablePolicy { retain_original, drop };
// What to do when a structured review response cannot be parsed.
enum class ProtocolFallback { free_text, all_reasonable, fail_image };

std::string_view to_string(UncorrectablePolicy p);
std::string_view to_string(ProtocolFallback f);

struct RunPaths {
  std::string annotations;
  std::string results;
  std::string audit_log;
  std::string transcript;
  std::string summary;
  std::string checkpoint;  // empty: no resume support
  std::string captions;    // optional pre-supplied captions
};

struct RunConfig {
  std::optional<std::uint64_t> seed;
  ResponseFormat response_format = ResponseFormat::structured_json;
  UncorrectablePolicy uncorrectable_policy = UncorrectablePolicy::retain_original;
  ProtocolFallback protocol_fallback = ProtocolFallback::free_text;
  int parallelism = 1;
  bool abort_on_agent_failure = false;
  ParseMode parse_mode = ParseMode::strict;
  RunPaths paths;
  AgentEndpointConfig detector;
  AgentEndpointConfig linguistic;
  AgentEndpointConfig classifier;
  OracleConfig oracle;
  PromptTemplates prompts;

  /// Throws ConfigError with the offending field path ("agents.detector", "parallelism").
  static RunConfig from_json(const nlohmann::json& j);
  static RunConfig load(const std::filesystem::path& path);
  void validate() const;

  /// Canonical form; everything that can change outputs. Parallelism is left out.
  nlohmann::json canonical_json() const;
  std::string hash() const;

  bool uses_mock() const;
};

/// Field-level differences between two canonical configs, "seed: 7 -> 8".
std::vector<std::string> config_diff(const nlohmann::json& before, const nlohmann::json& after);

/// Points every agent at the in-process mocks: the file-backed detector over
/// `detections_path` (or the configured detector path) and oracle linguistic and classifier
/// agents.
void use_mock_agents(RunConfig& cfg, const std::string& detections_path = {});

struct AuditRecord {
  ImageId image_id = 0;
  DetId det_id = 0;
  BoundingBox box;
  std::string original_label;
  double original_score = 0.0;
  Verdict verdict;
  std::optional<ClassifyResult> classifier;
  std::string classifier_error;
  // relabeled | overridden | uncorrectable-retained | uncorrectable-dropped; empty when the
  // detection was not flagged.
  std::string correction;
  std::string final_label;
  double final_score = 0.0;
  Disposition disposition = Disposition::kept;

  nlohmann::json to_json() const;
  static AuditRecord from_json(const nlohmann::json& j);
};

/// Everything one image produced. Checkpoint entries are serialized outcomes.
struct ImageOutcome {
  ImageId image_id = 0;
  bool failed = false;
  std::string error;
  std::size_t detections = 0;
  std::string caption;
  std::string caption_source;  // captions-file | image-url | file-name | none
  bool protocol_fallback = false;
  std::vector<AuditRecord> audit;
  std::vector<AgentEnvelope> envelopes;

  nlohmann::json to_json() const;
  static ImageOutcome from_json(const nlohmann::json& j);
  /// A checkpointed outcome counts only if it is internally consistent.
  bool complete() const noexcept { return !failed && audit.size() == detections; }
};

struct RunSummary {
  std::string config_hash;
  std::size_t images = 0;
  std::size_t completed = 0;
  std::size_t resumed = 0;
  std::size_t detections = 0;
  std::size_t flagged = 0;
  std::size_t relabeled = 0;
  std::size_t retained_after_flag = 0;
  std::size_t dropped = 0;
  std::size_t excluded = 0;
  std::size_t protocol_fallbacks = 0;
  std::map<std::string, std::size_t> caption_sources;
  std::vector<std::pair<ImageId, std::string>> failed;
  CorrectionReport correction;
  std::optional<EvalReport> ap_before;
  std::optional<EvalReport> ap_after;
  bool interrupted = false;

  /// Stable document: no timestamps, no resume bookkeeping, keys sorted.
  nlohmann::json to_json() const;
};

struct RunResult {
  std::vector<SceneRecord> scenes;  // completed images, annotation order
  std::vector<ImageOutcome> outcomes;
  RunSummary summary;

  /// 0 ok, 2 when an image failed or the run was interrupted.
  int exit_code() const noexcept { return summary.interrupted || !summary.failed.empty() ? 2 : 0; }
};

struct Agents {
  std::unique_ptr<DetectorAgent> detector;
  std::unique_ptr<LinguisticAgent> linguistic;
  std::unique_ptr<ClassifierAgent> classifier;
};

/// Builds the three agents. Throws CredentialError when an HTTP agent's key is missing.
Agents make_agents(const RunConfig& cfg, const AnnotationSet& data);

struct RunOptions {
  bool resume = false;
  const std::atomic<bool>* stop = nullptr;  // checked between images
  // Test hook: behave as if stopped once this many images have completed in this process.
  std::optional<std::size_t> stop_after;
};

/// Stage 1-3 for one image. Agent failures mark the outcome failed; credential and config
/// errors propagate.
ImageOutcome process_image(const SceneRecord& scene, const RunConfig& cfg, const CategoryMap& cats,
                           Agents& agents, const std::map<ImageId, std::string>& captions);

/// Rebuilds the scene's detections, verdicts and dispositions from its audit records.
void apply_outcome(SceneRecord& scene, const ImageOutcome& outcome);

/// Runs the pipeline from the config's files and writes every artifact.
RunResult run_pipeline(const RunConfig& cfg, const RunOptions& opts = {});
/// Same inputs already loaded; agents supplied by the caller. The agents may refer to
/// `data.categories`, so `data` must outlive them.
RunResult run_pipeline(const RunConfig& cfg, const AnnotationSet& data, Agents& agents,
                       const RunOptions& opts = {});

/// Continues an interrupted run from its checkpoint. Refuses (ConfigError listing the changed
/// fields) when the checkpoint was written under a different config.
RunResult resume_run(const RunConfig& cfg, const RunOptions& opts = {});

/// {"<image_id>": "caption"} or [{"image_id": N, "caption": "..."}].
std::map<ImageId, std::string> load_captions(const std::filesystem::path& path);

}  // namespace vla
