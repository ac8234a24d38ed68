#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "policylab/cate.hpp"
#include "policylab/deferral.hpp"
#include "policylab/ingest.hpp"
#include "policylab/learners.hpp"
#include "policylab/policy_eval.hpp"
#include "policylab/propensity.hpp"
#include "policylab/simulation.hpp"

namespace policylab {

struct SyntheticSource {
  std::size_t n = 2000;
  std::size_t d = 20;
  std::uint64_t seed = 0;
  double propensity_strength = 1.0;
  SimulationSpec outcome{};
};

// Either a delimited file (path + schema) or a generated cohort.
struct DataConfig {
  std::string path;
  Schema schema;
  std::optional<SyntheticSource> synthetic;
};

struct PropensityConfig {
  std::string learner = "propensity-gbt";
  bool recalibrate = true;
  BoundsSpec bounds{};
  int histogram_bins = 20;
  double flag_threshold = 0.95;
};

struct CateConfig {
  std::vector<MetaKind> kinds{MetaKind::S, MetaKind::T, MetaKind::X};
  std::vector<std::string> learners{"ridge", "lasso", "gbt"};
  bool gate = true;
  std::string primary = "T-ridge";
  int calibration_segments = 5;
};

struct EvaluationConfig {
  std::vector<Estimator> estimators{Estimator::IPW, Estimator::DR};
  int bootstrap = 1000;
  double p_star_lambda = 1.0;
  double p_star_low = 0.01;
  double p_star_high = 0.99;
  std::string plug_in = "ridge";
  double rank_step = 0.02;
  std::vector<EnsembleMode> ensembles{EnsembleMode::Average, EnsembleMode::Majority, EnsembleMode::Consensus};
};

struct SimulationConfig {
  bool enabled = true;
  SimulationSpec spec{};
  int runs = 5;
  double eval_fraction = 0.5;
  std::vector<std::string> learners{"gbt", "ridge", "lasso"};  // T-learner menu
  std::string plug_in = "ridge";
  std::string primary = "T-ridge";
};

struct StageConfig {
  bool simulate_only = false;
  std::vector<std::string> skip;
};

// Whole-run configuration. Every field has a default and from_json rejects
// unknown keys at every level. to_json emits every effective value.
struct PipelineConfig {
  DataConfig data;
  std::array<double, 3> split_fractions = kDefaultSplitFractions;
  std::uint64_t split_seed = 0;
  std::map<std::string, LearnerSpec> learners;
  PropensityConfig propensity;
  CateConfig cate;
  UncertaintySpec uncertainty;
  DeferralMode deferral_mode = DeferralMode::Conservative;
  std::optional<Direction> direction;  // required: no default orientation
  double threshold = 0.0;
  EvaluationConfig evaluation;
  SimulationConfig simulation;
  StageConfig stages;
  bool identification_acknowledged = false;
  std::uint64_t seed = 0;
  unsigned threads = 0;
  std::string output_dir = "policylab-out";

  // Directory that relative data paths resolve against.
  std::filesystem::path base_dir;

  static PipelineConfig defaults();
  static PipelineConfig from_json(const nlohmann::json& j);
  nlohmann::json to_json() const;

  // Throws ConfigError on any inconsistency (unknown learner references,
  // direction unset, bad fractions, ...).
  void validate() const;

  const LearnerSpec& learner(const std::string& name) const;
  DecisionRule rule() const;
  std::filesystem::path data_path() const;
};

// Applies "a.b.c=value" to a config document. The value is parsed as JSON
// when possible and taken as a string otherwise.
void apply_override(nlohmann::json& doc, const std::string& assignment);

// Reads a config file, applies overrides in order, then parses and
// validates. The base directory is the file's parent.
PipelineConfig load_config(const std::filesystem::path& path, const std::vector<std::string>& overrides = {});

// 64-bit FNV-1a, rendered as 16 lowercase hex digits.
std::string fnv1a_hex(const std::string& bytes);
std::string config_hash(const PipelineConfig& config);

}  // namespace policylab
