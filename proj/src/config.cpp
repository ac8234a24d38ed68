#include "policylab/config.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

#include "policylab/error.hpp"

namespace policylab {

using json = nlohmann::json;

namespace {

// Reads keys of one config object and rejects whatever was not consumed.
class Section {
 public:
  Section(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j.is_object()) throw ConfigError("'" + path_ + "' must be an object");
  }

  template <typename T>
  void read(const char* key, T& out) {
    if (!j_.contains(key)) return;
    seen_.insert(key);
    try {
      out = j_.at(key).get<T>();
    } catch (const json::exception& e) {
      throw ConfigError("'" + where(key) + "': " + e.what());
    }
  }

  const json* child(const char* key) {
    if (!j_.contains(key)) return nullptr;
    seen_.insert(key);
    return &j_.at(key);
  }

  std::string where(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

  void finish() const {
    for (const auto& item : j_.items())
      if (!seen_.count(item.key())) throw ConfigError("unknown config key '" + where(item.key()) + "'");
  }

 private:
  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

template <typename E, typename Parse>
std::vector<E> enum_list(const json& j, const std::string& where, Parse parse) {
  if (!j.is_array()) throw ConfigError("'" + where + "' must be an array");
  std::vector<E> out;
  for (const auto& v : j) {
    if (!v.is_string()) throw ConfigError("'" + where + "' entries must be strings");
    out.push_back(parse(v.get<std::string>()));
  }
  return out;
}

SimulationSpec read_sim_spec(Section& s, SimulationSpec spec) {
  s.read("lambda", spec.lambda);
  s.read("effect", spec.effect);
  s.read("noise_factor", spec.noise_factor);
  s.read("propensity_l2", spec.propensity_l2);
  return spec;
}

std::map<std::string, LearnerSpec> default_learners() {
  std::map<std::string, LearnerSpec> m;
  m["ridge"] = {"ridge", LearnerType::Ridge};
  LearnerSpec lasso{"lasso", LearnerType::Lasso};
  lasso.lambda = 0.01;
  m["lasso"] = lasso;
  LearnerSpec gbt{"gbt", LearnerType::Gbt};
  gbt.gbt.n_trees = 100;
  gbt.gbt.min_samples_leaf = 10;
  m["gbt"] = gbt;
  m["mean"] = {"mean", LearnerType::Mean};
  LearnerSpec prop_gbt{"propensity-gbt", LearnerType::Gbt};
  prop_gbt.gbt.n_trees = 100;
  prop_gbt.gbt.min_samples_leaf = 10;
  m["propensity-gbt"] = prop_gbt;
  m["propensity-logistic"] = {"propensity-logistic", LearnerType::Logistic};
  return m;
}

json string_list(const std::vector<std::string>& v) { return json(v); }

}  // namespace

PipelineConfig PipelineConfig::defaults() {
  PipelineConfig c;
  c.learners = default_learners();
  return c;
}

PipelineConfig PipelineConfig::from_json(const json& j) {
  PipelineConfig c = defaults();
  Section root(j, "");

  if (const auto* d = root.child("data")) {
    Section s(*d, "data");
    s.read("path", c.data.path);
    s.read("treatment", c.data.schema.treatment);
    s.read("outcome", c.data.schema.outcome);
    s.read("covariates", c.data.schema.covariates);
    s.read("secondary_outcomes", c.data.schema.secondary_outcomes);
    if (const auto* id = s.child("id_column"); id && !id->is_null()) c.data.schema.id_column = id->get<std::string>();
    std::string delim(1, c.data.schema.delimiter);
    s.read("delimiter", delim);
    if (delim.size() != 1) throw ConfigError("'data.delimiter' must be a single character");
    c.data.schema.delimiter = delim[0];
    if (const auto* syn = s.child("synthetic"); syn && !syn->is_null()) {
      Section g(*syn, "data.synthetic");
      SyntheticSource src;
      g.read("n", src.n);
      g.read("d", src.d);
      g.read("seed", src.seed);
      g.read("propensity_strength", src.propensity_strength);
      if (const auto* o = g.child("outcome")) {
        Section os(*o, "data.synthetic.outcome");
        src.outcome = read_sim_spec(os, src.outcome);
        os.finish();
      }
      g.finish();
      c.data.synthetic = src;
    }
    s.finish();
  }

  if (const auto* sp = root.child("split")) {
    Section s(*sp, "split");
    std::vector<double> f(c.split_fractions.begin(), c.split_fractions.end());
    s.read("fractions", f);
    if (f.size() != 3) throw ConfigError("'split.fractions' must have three entries");
    std::copy(f.begin(), f.end(), c.split_fractions.begin());
    s.read("seed", c.split_seed);
    s.finish();
  }

  if (const auto* l = root.child("learners")) {
    if (!l->is_object()) throw ConfigError("'learners' must be an object");
    for (const auto& [name, spec] : l->items()) c.learners[name] = LearnerSpec::from_json(spec, name);
  }

  if (const auto* p = root.child("propensity")) {
    Section s(*p, "propensity");
    s.read("learner", c.propensity.learner);
    s.read("recalibrate", c.propensity.recalibrate);
    if (const auto* b = s.child("bounds")) c.propensity.bounds = BoundsSpec::from_json(*b);
    s.read("histogram_bins", c.propensity.histogram_bins);
    s.read("flag_threshold", c.propensity.flag_threshold);
    s.finish();
  }

  if (const auto* ct = root.child("cate")) {
    Section s(*ct, "cate");
    if (const auto* k = s.child("kinds")) c.cate.kinds = enum_list<MetaKind>(*k, "cate.kinds", meta_kind_from_string);
    s.read("learners", c.cate.learners);
    s.read("gate", c.cate.gate);
    s.read("primary", c.cate.primary);
    s.read("calibration_segments", c.cate.calibration_segments);
    s.finish();
  }

  if (const auto* u = root.child("uncertainty")) {
    Section s(*u, "uncertainty");
    s.read("alpha_stat", c.uncertainty.alpha_stat);
    s.read("lambda", c.uncertainty.lambda);
    s.read("bootstrap", c.uncertainty.bootstrap);
    s.finish();
  }

  if (const auto* d = root.child("deferral")) {
    Section s(*d, "deferral");
    std::string mode = to_string(c.deferral_mode);
    s.read("mode", mode);
    c.deferral_mode = deferral_mode_from_string(mode);
    s.finish();
  }

  if (const auto* d = root.child("decision")) {
    Section s(*d, "decision");
    if (const auto* dir = s.child("direction"); dir && !dir->is_null()) {
      if (!dir->is_string()) throw ConfigError("'decision.direction' must be a string");
      c.direction = direction_from_string(dir->get<std::string>());
    }
    s.read("threshold", c.threshold);
    s.finish();
  }

  if (const auto* e = root.child("evaluation")) {
    Section s(*e, "evaluation");
    if (const auto* est = s.child("estimators"))
      c.evaluation.estimators = enum_list<Estimator>(*est, "evaluation.estimators", estimator_from_string);
    s.read("bootstrap", c.evaluation.bootstrap);
    if (const auto* ps = s.child("p_star")) {
      Section p(*ps, "evaluation.p_star");
      p.read("lambda", c.evaluation.p_star_lambda);
      p.read("low", c.evaluation.p_star_low);
      p.read("high", c.evaluation.p_star_high);
      p.finish();
    }
    s.read("plug_in", c.evaluation.plug_in);
    s.read("rank_step", c.evaluation.rank_step);
    if (const auto* en = s.child("ensembles"))
      c.evaluation.ensembles = enum_list<EnsembleMode>(*en, "evaluation.ensembles", ensemble_mode_from_string);
    s.finish();
  }

  if (const auto* sim = root.child("simulation")) {
    Section s(*sim, "simulation");
    s.read("enabled", c.simulation.enabled);
    c.simulation.spec = read_sim_spec(s, c.simulation.spec);
    s.read("runs", c.simulation.runs);
    s.read("eval_fraction", c.simulation.eval_fraction);
    s.read("learners", c.simulation.learners);
    s.read("plug_in", c.simulation.plug_in);
    s.read("primary", c.simulation.primary);
    s.finish();
  }

  if (const auto* st = root.child("stages")) {
    Section s(*st, "stages");
    s.read("simulate_only", c.stages.simulate_only);
    s.read("skip", c.stages.skip);
    s.finish();
  }

  root.read("identification_acknowledged", c.identification_acknowledged);
  root.read("seed", c.seed);
  root.read("threads", c.threads);
  root.read("output_dir", c.output_dir);
  root.finish();
  return c;
}

json PipelineConfig::to_json() const {
  json data_j{{"path", data.path},
              {"treatment", data.schema.treatment},
              {"outcome", data.schema.outcome},
              {"covariates", string_list(data.schema.covariates)},
              {"secondary_outcomes", string_list(data.schema.secondary_outcomes)},
              {"id_column", data.schema.id_column ? json(*data.schema.id_column) : json(nullptr)},
              {"delimiter", std::string(1, data.schema.delimiter)},
              {"synthetic", nullptr}};
  if (data.synthetic) {
    const auto& s = *data.synthetic;
    data_j["synthetic"] = {{"n", s.n},
                           {"d", s.d},
                           {"seed", s.seed},
                           {"propensity_strength", s.propensity_strength},
                           {"outcome", s.outcome.to_json()}};
  }
  json learners_j = json::object();
  for (const auto& [name, spec] : learners) learners_j[name] = spec.to_json();
  json kinds = json::array();
  for (auto k : cate.kinds) kinds.push_back(to_string(k));
  json est = json::array();
  for (auto e : evaluation.estimators) est.push_back(to_string(e));
  json ens = json::array();
  for (auto m : evaluation.ensembles) ens.push_back(to_string(m));
  json sim = simulation.spec.to_json();
  sim["enabled"] = simulation.enabled;
  sim["runs"] = simulation.runs;
  sim["eval_fraction"] = simulation.eval_fraction;
  sim["learners"] = string_list(simulation.learners);
  sim["plug_in"] = simulation.plug_in;
  sim["primary"] = simulation.primary;

  return {{"data", data_j},
          {"split", {{"fractions", json(split_fractions)}, {"seed", split_seed}}},
          {"learners", learners_j},
          {"propensity",
           {{"learner", propensity.learner},
            {"recalibrate", propensity.recalibrate},
            {"bounds", propensity.bounds.to_json()},
            {"histogram_bins", propensity.histogram_bins},
            {"flag_threshold", propensity.flag_threshold}}},
          {"cate",
           {{"kinds", kinds},
            {"learners", string_list(cate.learners)},
            {"gate", cate.gate},
            {"primary", cate.primary},
            {"calibration_segments", cate.calibration_segments}}},
          {"uncertainty", uncertainty.to_json()},
          {"deferral", {{"mode", to_string(deferral_mode)}}},
          {"decision",
           {{"direction", direction ? json(to_string(*direction)) : json(nullptr)}, {"threshold", threshold}}},
          {"evaluation",
           {{"estimators", est},
            {"bootstrap", evaluation.bootstrap},
            {"p_star",
             {{"lambda", evaluation.p_star_lambda}, {"low", evaluation.p_star_low}, {"high", evaluation.p_star_high}}},
            {"plug_in", evaluation.plug_in},
            {"rank_step", evaluation.rank_step},
            {"ensembles", ens}}},
          {"simulation", sim},
          {"stages", {{"simulate_only", stages.simulate_only}, {"skip", string_list(stages.skip)}}},
          {"identification_acknowledged", identification_acknowledged},
          {"seed", seed},
          {"threads", threads},
          {"output_dir", output_dir}};
}

const LearnerSpec& PipelineConfig::learner(const std::string& name) const {
  const auto it = learners.find(name);
  if (it == learners.end()) throw ConfigError("unknown learner '" + name + "'");
  return it->second;
}

DecisionRule PipelineConfig::rule() const {
  if (!direction) throw ConfigError("'decision.direction' must be set to higher-better or lower-better");
  return {threshold, *direction};
}

std::filesystem::path PipelineConfig::data_path() const {
  std::filesystem::path p(data.path);
  if (p.is_relative() && !base_dir.empty()) p = base_dir / p;
  return p;
}

namespace {

const std::vector<std::string> kStageNames{"ingest", "propensity", "simulation", "cate", "deferral", "evaluation",
                                           "report"};

void require_regressor(const PipelineConfig& c, const std::string& name, const std::string& where) {
  const auto& l = c.learner(name);
  if (l.type == LearnerType::Logistic) throw ConfigError("'" + where + "': learner '" + name + "' is a classifier");
}

}  // namespace

void PipelineConfig::validate() const {
  if (data.synthetic) {
    if (!data.path.empty()) throw ConfigError("'data.path' and 'data.synthetic' are mutually exclusive");
    if (data.synthetic->n < 20 || data.synthetic->d < 1) throw ConfigError("'data.synthetic' needs n >= 20, d >= 1");
    data.synthetic->outcome.validate();
  } else {
    if (data.path.empty()) throw ConfigError("'data.path' (or 'data.synthetic') is required");
    if (data.schema.treatment.empty() || data.schema.outcome.empty())
      throw ConfigError("'data.treatment' and 'data.outcome' are required");
  }
  split_sizes(1000000, split_fractions);  // throws on bad fractions
  for (double f : split_fractions)
    if (!(f > 0.0)) throw ConfigError("every split fraction must be positive");
  rule();

  const auto& prop = learner(propensity.learner);
  if (prop.type != LearnerType::Logistic && prop.type != LearnerType::Gbt && prop.type != LearnerType::Mean)
    throw ConfigError("'propensity.learner' must name a classifier (logistic, gbt or mean)");
  if (propensity.histogram_bins < 1) throw ConfigError("'propensity.histogram_bins' must be >= 1");
  if (!(propensity.flag_threshold > 0.5 && propensity.flag_threshold <= 1.0))
    throw ConfigError("'propensity.flag_threshold' must lie in (0.5, 1]");

  if (cate.kinds.empty() || cate.learners.empty()) throw ConfigError("'cate.kinds' and 'cate.learners' must be non-empty");
  for (const auto& l : cate.learners) require_regressor(*this, l, "cate.learners");
  bool primary_found = false;
  for (auto k : cate.kinds)
    for (const auto& l : cate.learners) primary_found |= std::string(to_string(k)) + "-" + l == cate.primary;
  if (!primary_found) throw ConfigError("'cate.primary' (" + cate.primary + ") is not in the kinds x learners menu");
  if (cate.calibration_segments < 2) throw ConfigError("'cate.calibration_segments' must be >= 2");
  uncertainty.validate();

  if (evaluation.estimators.empty()) throw ConfigError("'evaluation.estimators' must be non-empty");
  if (evaluation.bootstrap < 1) throw ConfigError("'evaluation.bootstrap' must be >= 1");
  if (!(0.0 < evaluation.p_star_low && evaluation.p_star_low < evaluation.p_star_high && evaluation.p_star_high < 1.0))
    throw ConfigError("'evaluation.p_star' clip bounds must satisfy 0 < low < high < 1");
  require_regressor(*this, evaluation.plug_in, "evaluation.plug_in");
  if (!(evaluation.rank_step > 0.0 && evaluation.rank_step < 1.0))
    throw ConfigError("'evaluation.rank_step' must lie in (0, 1)");

  simulation.spec.validate();
  if (simulation.runs < 2) throw ConfigError("'simulation.runs' must be >= 2");
  if (!(simulation.eval_fraction > 0.0 && simulation.eval_fraction < 1.0))
    throw ConfigError("'simulation.eval_fraction' must lie in (0, 1)");
  if (simulation.learners.empty()) throw ConfigError("'simulation.learners' must be non-empty");
  for (const auto& l : simulation.learners) require_regressor(*this, l, "simulation.learners");
  require_regressor(*this, simulation.plug_in, "simulation.plug_in");
  if (simulation.primary.rfind("T-", 0) != 0 ||
      std::find(simulation.learners.begin(), simulation.learners.end(), simulation.primary.substr(2)) ==
          simulation.learners.end())
    throw ConfigError("'simulation.primary' must be T-<learner> for a learner in 'simulation.learners'");

  for (const auto& s : stages.skip) {
    if (std::find(kStageNames.begin(), kStageNames.end(), s) == kStageNames.end())
      throw ConfigError("'stages.skip': unknown stage '" + s + "'");
    if (s == "ingest") throw ConfigError("'stages.skip': the ingest stage cannot be skipped");
  }
  if (output_dir.empty()) throw ConfigError("'output_dir' must be non-empty");
}

void apply_override(json& doc, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) throw ConfigError("override '" + assignment + "' is not key=value");
  const std::string key = assignment.substr(0, eq);
  const std::string raw = assignment.substr(eq + 1);
  json value = json::parse(raw, nullptr, false);
  if (value.is_discarded()) value = raw;

  json* node = &doc;
  std::size_t start = 0;
  while (true) {
    const auto dot = key.find('.', start);
    const std::string part = key.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    if (part.empty()) throw ConfigError("override key '" + key + "' has an empty component");
    if (!node->is_object()) {
      if (!node->is_null()) throw ConfigError("override key '" + key + "' descends into a non-object");
      *node = json::object();
    }
    if (dot == std::string::npos) {
      (*node)[part] = value;
      return;
    }
    node = &(*node)[part];
    start = dot + 1;
  }
}

PipelineConfig load_config(const std::filesystem::path& path, const std::vector<std::string>& overrides) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot read config file " + path.string());
  json doc = json::parse(in, nullptr, false);
  if (doc.is_discarded()) throw ConfigError("config file " + path.string() + " is not valid JSON");
  for (const auto& o : overrides) apply_override(doc, o);
  auto c = PipelineConfig::from_json(doc);
  c.base_dir = path.parent_path();
  c.validate();
  return c;
}

std::string fnv1a_hex(const std::string& bytes) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char ch : bytes) {
    h ^= ch;
    h *= 0x100000001b3ull;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

std::string config_hash(const PipelineConfig& config) { return fnv1a_hex(config.to_json().dump()); }

}  // namespace policylab
