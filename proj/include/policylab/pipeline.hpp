#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <ostream>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "policylab/config.hpp"

namespace policylab {

enum class Stage : std::uint8_t { Ingest, Propensity, Simulation, Cate, Deferral, Evaluation, Report };

const char* to_string(Stage s);
Stage stage_from_string(const std::string& s);

struct ArtifactEntry {
  std::string path;  // relative to the output directory, '/' separated
  std::uintmax_t bytes = 0;
  std::string fnv1a;
  std::string stage;
};

// Record of one run. Timings are kept in memory and logged but never
// serialized, so reruns of one config write identical manifests.
struct RunManifest {
  std::string config_hash;
  nlohmann::json config;
  std::map<std::string, std::uint64_t> seeds;
  std::vector<std::string> stages;  // completed, in order
  std::vector<ArtifactEntry> artifacts;
  std::vector<std::string> warnings;
  std::string status = "running";
  std::string failed_stage;
  std::string error;
  std::vector<std::pair<std::string, double>> timings;  // seconds per stage

  bool has_stage(const std::string& s) const;
  const ArtifactEntry* artifact(const std::string& path) const;

  nlohmann::json to_json() const;
  static RunManifest from_json(const nlohmann::json& j);
};

struct PipelineOptions {
  // Run only this stage and the stages it depends on. Unset runs every
  // stage the config enables, report included.
  std::optional<Stage> target;
  std::ostream* log = nullptr;
};

// Executes the enabled stages in order, writing artifacts and manifest.json
// under config.output_dir. On a stage failure the manifest is written with
// status "failed" and the error is rethrown.
RunManifest run_pipeline(const PipelineConfig& config, const PipelineOptions& options = {});

// Renders figures and report/index.md from the artifacts already in out_dir.
// A missing input becomes a placeholder entry plus a warning. Appends the
// report artifacts to the manifest and rewrites manifest.json.
void emit_report(const std::filesystem::path& out_dir, RunManifest& manifest);

RunManifest read_manifest(const std::filesystem::path& out_dir);
void write_manifest(const std::filesystem::path& out_dir, const RunManifest& manifest);

// Markdown checklist of the identification assumptions the user must confirm
// (via identification_acknowledged) before any estimation stage runs.
std::string identification_checklist();

// Registers and writes files under an output directory.
class ArtifactWriter {
 public:
  ArtifactWriter(std::filesystem::path root, RunManifest& manifest) : root_(std::move(root)), manifest_(manifest) {}

  void text(const std::string& rel, const std::string& content, const std::string& stage);
  void table(const std::string& rel, const Table& t, const std::string& stage);
  void json(const std::string& rel, const nlohmann::json& j, const std::string& stage);

  const std::filesystem::path& root() const { return root_; }

 private:
  std::filesystem::path root_;
  RunManifest& manifest_;
};

}  // namespace policylab
