#include "policylab/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include "policylab/error.hpp"
#include "policylab/stats.hpp"

namespace policylab {

using json = nlohmann::json;
namespace fs = std::filesystem;

namespace {

const std::vector<std::pair<Stage, const char*>> kStages{
    {Stage::Ingest, "ingest"},     {Stage::Propensity, "propensity"}, {Stage::Simulation, "simulation"},
    {Stage::Cate, "cate"},         {Stage::Deferral, "deferral"},     {Stage::Evaluation, "evaluation"},
    {Stage::Report, "report"}};

// Hard prerequisites. Simulation uses propensity output when present but
// does not need it.
std::vector<Stage> prerequisites(Stage s) {
  switch (s) {
    case Stage::Ingest: return {};
    case Stage::Propensity: return {Stage::Ingest};
    case Stage::Simulation: return {Stage::Ingest};
    case Stage::Cate: return {Stage::Propensity};
    case Stage::Deferral: return {Stage::Cate};
    case Stage::Evaluation: return {Stage::Deferral};
    case Stage::Report: return {Stage::Ingest};
  }
  return {};
}

}  // namespace

const char* to_string(Stage s) {
  for (const auto& [stage, name] : kStages)
    if (stage == s) return name;
  return "?";
}

Stage stage_from_string(const std::string& s) {
  for (const auto& [stage, name] : kStages)
    if (s == name) return stage;
  throw ConfigError("unknown stage '" + s + "'");
}

// ---------------------------------------------------------------------------
// Manifest

bool RunManifest::has_stage(const std::string& s) const {
  return std::find(stages.begin(), stages.end(), s) != stages.end();
}

const ArtifactEntry* RunManifest::artifact(const std::string& path) const {
  for (const auto& a : artifacts)
    if (a.path == path) return &a;
  return nullptr;
}

json RunManifest::to_json() const {
  json arts = json::array();
  for (const auto& a : artifacts)
    arts.push_back({{"path", a.path}, {"bytes", a.bytes}, {"fnv1a", a.fnv1a}, {"stage", a.stage}});
  json j{{"config_hash", config_hash},
         {"config", config},
         {"seeds", seeds},
         {"stages", stages},
         {"artifacts", arts},
         {"warnings", warnings},
         {"status", status}};
  if (!failed_stage.empty()) {
    j["failed_stage"] = failed_stage;
    j["error"] = error;
  }
  return j;
}

RunManifest RunManifest::from_json(const json& j) {
  RunManifest m;
  try {
    m.config_hash = j.at("config_hash").get<std::string>();
    m.config = j.at("config");
    m.seeds = j.at("seeds").get<std::map<std::string, std::uint64_t>>();
    m.stages = j.at("stages").get<std::vector<std::string>>();
    for (const auto& a : j.at("artifacts"))
      m.artifacts.push_back({a.at("path").get<std::string>(), a.at("bytes").get<std::uintmax_t>(),
                             a.at("fnv1a").get<std::string>(), a.at("stage").get<std::string>()});
    m.warnings = j.at("warnings").get<std::vector<std::string>>();
    m.status = j.at("status").get<std::string>();
    if (j.contains("failed_stage")) {
      m.failed_stage = j.at("failed_stage").get<std::string>();
      m.error = j.value("error", std::string{});
    }
  } catch (const json::exception& e) {
    throw DataError(std::string("malformed manifest: ") + e.what());
  }
  return m;
}

RunManifest read_manifest(const fs::path& out_dir) {
  std::ifstream in(out_dir / "manifest.json", std::ios::binary);
  if (!in) throw DataError("no manifest.json in " + out_dir.string());
  const json j = json::parse(in, nullptr, false);
  if (j.is_discarded()) throw DataError("manifest.json in " + out_dir.string() + " is not valid JSON");
  return RunManifest::from_json(j);
}

void write_manifest(const fs::path& out_dir, const RunManifest& manifest) {
  fs::create_directories(out_dir);
  std::ofstream out(out_dir / "manifest.json", std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write " + (out_dir / "manifest.json").string());
  out << manifest.to_json().dump(2) << '\n';
}

// ---------------------------------------------------------------------------
// Artifact writer

void ArtifactWriter::text(const std::string& rel, const std::string& content, const std::string& stage) {
  const fs::path path = root_ / rel;
  fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write " + path.string());
  out << content;
  out.close();
  if (!out) throw DataError("failed writing " + path.string());
  ArtifactEntry entry{rel, content.size(), fnv1a_hex(content), stage};
  for (auto& a : manifest_.artifacts) {
    if (a.path == rel) {
      a = entry;
      return;
    }
  }
  manifest_.artifacts.push_back(std::move(entry));
}

void ArtifactWriter::table(const std::string& rel, const Table& t, const std::string& stage) {
  text(rel, t.to_csv(), stage);
}

void ArtifactWriter::json(const std::string& rel, const nlohmann::json& j, const std::string& stage) {
  text(rel, j.dump(2) + "\n", stage);
}

// ---------------------------------------------------------------------------

std::string identification_checklist() {
  return R"(# Identification checklist

Estimation stages run only after every item below has been reviewed and
`identification_acknowledged` is set to `true` in the configuration.
Nothing here can be verified from the data alone.

## Causal question

- [ ] The decision is binary (treatment 0 versus treatment 1) and both options
      were available for every patient in the cohort.
- [ ] The outcome is measured after the decision and its orientation
      (`decision.direction`) matches clinical preference.
- [ ] The time of decision is well defined and all covariates are recorded
      before it.

## Assumptions

- [ ] Consistency: the observed outcome equals the potential outcome under the
      treatment actually received.
- [ ] No interference: one patient's treatment does not change another's
      outcome.
- [ ] Conditional exchangeability: the covariates capture every common cause
      of treatment and outcome. Residual confounding is bounded by the
      sensitivity parameter `uncertainty.lambda`.
- [ ] Positivity: both treatments have nonzero probability for the patients
      recommendations will be made for. The overlap report and trimming
      bounds check the empirical side of this.

## Exit point

If any item cannot be defended, stop here: the estimated effects and policy
values would not carry a causal interpretation.
)";
}

// ---------------------------------------------------------------------------
// Stage implementations

namespace {

std::vector<std::size_t> where(const std::vector<std::size_t>& rows, const std::vector<bool>& keep) {
  std::vector<std::size_t> out;
  for (auto i : rows)
    if (keep[i]) out.push_back(i);
  return out;
}

Vector gather(const Vector& v, const std::vector<std::size_t>& rows) {
  Vector out(static_cast<Eigen::Index>(rows.size()));
  for (std::size_t k = 0; k < rows.size(); ++k) out(static_cast<Eigen::Index>(k)) = v(static_cast<Eigen::Index>(rows[k]));
  return out;
}

template <typename T>
std::vector<T> gather(const std::vector<T>& v, const std::vector<std::size_t>& rows) {
  std::vector<T> out;
  out.reserve(rows.size());
  for (auto i : rows) out.push_back(v[i]);
  return out;
}

std::string safe_name(const std::string& name) {
  std::string out;
  for (char c : name) out += (std::isalnum(static_cast<unsigned char>(c)) || c == '-' || c == '_') ? c : '_';
  return out;
}

double population_variance(const Vector& y) {
  if (y.size() == 0) return 0.0;
  return (y.array() - y.mean()).square().mean();
}

struct State {
  Dataset loaded;    // as read, with split labels
  Dataset imputed;   // original scale, missing cells filled
  Dataset data;      // standardized covariates
  std::vector<std::size_t> train, validation, test;

  std::optional<PropensityModel> propensity;
  Vector scores;               // all rows
  std::vector<bool> overlap;   // all rows

  std::vector<CateFitSpec> specs;
  std::vector<CateModel> models;
  std::vector<Vector> effects;  // test rows
  std::vector<CateIntervals> intervals;
  std::size_t primary = 0;
  std::optional<CateModel> plug_in;

  std::vector<DeferralResult> deferrals;
};

class Runner {
 public:
  Runner(const PipelineConfig& config, RunManifest& manifest, std::ostream* log)
      : cfg_(config), m_(manifest), out_(config.output_dir), w_(out_, manifest), log_(log) {
    const auto s = config.seed;
    m_.seeds = {{"split", config.split_seed},          {"propensity", derive_seed(s, 1)},
                {"cate", derive_seed(s, 2)},           {"intervals", derive_seed(s, 3)},
                {"evaluation", derive_seed(s, 4)},     {"simulation", derive_seed(s, 5)},
                {"baseline", derive_seed(s, 6)}};
  }

  void run(Stage s) {
    switch (s) {
      case Stage::Ingest: ingest(); break;
      case Stage::Propensity: propensity(); break;
      case Stage::Simulation: simulation(); break;
      case Stage::Cate: cate(); break;
      case Stage::Deferral: deferral(); break;
      case Stage::Evaluation: evaluation(); break;
      case Stage::Report: break;  // handled by the caller
    }
  }

  ArtifactWriter& writer() { return w_; }

 private:
  void warn(const std::string& msg) {
    m_.warnings.push_back(msg);
    if (log_) *log_ << "warning: " << msg << '\n';
  }

  std::uint64_t seed(const char* name) const { return m_.seeds.at(name); }

  void ingest() {
    Dataset loaded;
    if (cfg_.data.synthetic) {
      const auto& g = *cfg_.data.synthetic;
      loaded = synthetic_dataset(g.n, g.d, g.seed, g.propensity_strength, g.outcome);
    } else {
      loaded = load_table(cfg_.data_path(), cfg_.data.schema);
    }
    st_.loaded = split(loaded, cfg_.split_fractions, cfg_.split_seed);
    auto imp = impute_and_flag(st_.loaded);
    st_.imputed = imp.data;
    st_.data = standardize(imp.data, imp.stats);
    st_.train = st_.data.indices(Split::Train);
    st_.validation = st_.data.indices(Split::Validation);
    st_.test = st_.data.indices(Split::Test);
    if (st_.train.empty() || st_.validation.empty() || st_.test.empty())
      throw DataError("every split needs at least one row");

    w_.table("ingest/summary.csv", summarize(st_.loaded, st_.loaded.treatment, {"T=0", "T=1"}).to_table(), "ingest");

    json columns = json::array();
    for (const auto& c : st_.data.columns) columns.push_back({{"name", c.name}, {"kind", to_string(c.kind)}});
    w_.json("ingest/imputation.json",
            {{"columns", imp.stats.names},
             {"median", imp.stats.median},
             {"mean", imp.stats.mean},
             {"sd", imp.stats.sd},
             {"indicator_columns", imp.stats.indicator_columns},
             {"model_columns", columns}},
            "ingest");

    Table splits;
    splits.header = {"row_id", "split", "treatment"};
    for (std::size_t i = 0; i < st_.data.rows(); ++i)
      splits.rows.push_back({st_.data.row_ids[i], to_string(st_.data.split[i]), std::to_string(st_.data.treatment[i])});
    w_.table("ingest/splits.csv", splits, "ingest");

    std::size_t treated = 0;
    for (int t : st_.data.treatment) treated += static_cast<std::size_t>(t);
    w_.json("ingest/dataset.json",
            {{"rows", st_.data.rows()},
             {"covariates", st_.loaded.cols()},
             {"model_columns", st_.data.cols()},
             {"treated", treated},
             {"had_missing", st_.loaded.has_missing()},
             {"splits", {{"train", st_.train.size()}, {"validation", st_.validation.size()}, {"test", st_.test.size()}}},
             {"source", cfg_.data.synthetic ? "synthetic" : "file"}},
            "ingest");
  }

  void propensity() {
    PropensityOptions po;
    po.learner = cfg_.learner(cfg_.propensity.learner);
    po.recalibrate = cfg_.propensity.recalibrate;
    po.bounds = cfg_.propensity.bounds;
    auto model = fit_propensity(st_.data.subset(st_.train), st_.data.subset(st_.validation), po, seed("propensity"));
    st_.scores = model.score(st_.data.covariates);
    st_.overlap = overlap_mask(stats::view(st_.scores), model.bounds);

    const Vector e_train = gather(st_.scores, st_.train);
    const auto t_train = gather(st_.data.treatment, st_.train);
    auto report = overlap_report(stats::view(e_train), t_train, model.bounds, cfg_.propensity.histogram_bins,
                                 cfg_.propensity.flag_threshold);
    // Flag on the held-out calibration AUROC; training AUROC of a flexible
    // classifier mostly measures overfitting.
    const auto train_auroc = report.auroc;
    report.auroc = model.fit_metrics.auroc;
    report.flag = report.auroc && *report.auroc >= cfg_.propensity.flag_threshold;
    if (report.flag)
      warn("possible lack of overlap: held-out AUROC of the propensity model is " + fmt_fixed(*report.auroc, 3) +
           " (threshold " + fmt_num(cfg_.propensity.flag_threshold) + ")");

    json mj = model.to_json();
    mj["fit_metrics"] = to_json(model.fit_metrics);
    w_.json("propensity/model.json", mj, "propensity");
    json oj = report.to_json();
    oj["train_auroc"] = train_auroc ? json(*train_auroc) : json(nullptr);
    w_.json("propensity/overlap.json", oj, "propensity");
    w_.table("propensity/histogram.csv", report.histogram_table(), "propensity");

    Table scores;
    scores.header = {"row_id", "split", "treatment", "score", "in_overlap"};
    for (std::size_t i = 0; i < st_.data.rows(); ++i)
      scores.rows.push_back({st_.data.row_ids[i], to_string(st_.data.split[i]), std::to_string(st_.data.treatment[i]),
                             fmt_num(st_.scores(static_cast<Eigen::Index>(i))), st_.overlap[i] ? "1" : "0"});
    w_.table("propensity/scores.csv", scores, "propensity");

    Table trim;
    trim.header = {"split", "treatment", "rows", "inside", "outside"};
    for (Split s : {Split::Train, Split::Validation, Split::Test}) {
      for (int arm = 0; arm < 2; ++arm) {
        std::size_t rows = 0, inside = 0;
        for (std::size_t i = 0; i < st_.data.rows(); ++i) {
          if (st_.data.split[i] != s || st_.data.treatment[i] != arm) continue;
          ++rows;
          inside += st_.overlap[i] ? 1 : 0;
        }
        trim.rows.push_back({to_string(s), std::to_string(arm), std::to_string(rows), std::to_string(inside),
                             std::to_string(rows - inside)});
      }
    }
    w_.table("propensity/trimming.csv", trim, "propensity");
    st_.propensity = std::move(model);
  }

  void simulation() {
    std::vector<std::size_t> rows(st_.data.rows());
    for (std::size_t i = 0; i < rows.size(); ++i) rows[i] = i;
    if (st_.propensity) rows = where(rows, st_.overlap);
    const Dataset sub = st_.data.subset(rows);

    StudyConfig sc;
    sc.sim = cfg_.simulation.spec;
    sc.runs = cfg_.simulation.runs;
    sc.eval_fraction = cfg_.simulation.eval_fraction;
    for (const auto& l : cfg_.simulation.learners) sc.menu.push_back(CateFitSpec{MetaKind::T, cfg_.learner(l), std::nullopt});
    sc.ensembles = cfg_.evaluation.ensembles;
    sc.estimators = cfg_.evaluation.estimators;
    sc.p_star_lambda = cfg_.evaluation.p_star_lambda;
    sc.p_star_low = cfg_.evaluation.p_star_low;
    sc.p_star_high = cfg_.evaluation.p_star_high;
    sc.plug_in = cfg_.learner(cfg_.simulation.plug_in);
    sc.primary = cfg_.simulation.primary;
    sc.seed = seed("simulation");
    sc.threads = cfg_.threads;
    const auto report = run_study(sub.covariates, sub.treatment, sc);

    if (report.failures > 0) warn("simulation: " + std::to_string(report.failures) + " run(s) failed");
    for (const auto& c : report.checks)
      if (!c.passed) warn("simulation check '" + c.name + "' failed");

    json j = report.to_json();
    j["rows"] = rows.size();
    w_.json("simulation/study.json", j, "simulation");
    w_.table("simulation/table.csv", report.summary_table(), "simulation");
    w_.table("simulation/values.csv", report.numeric_table(), "simulation");
    w_.table("simulation/scatter.csv", report.scatter_table(), "simulation");
  }

  // Held-out error of each learner per arm; a learner whose error reaches
  // the arm's outcome variance is dropped from the menu.
  std::vector<std::string> gate(const Dataset& tr, const Dataset& va) {
    Table t;
    t.header = {"learner", "arm", "train_rows", "validation_rows", "mse", "variance", "excluded"};
    std::vector<std::string> kept;
    for (std::size_t li = 0; li < cfg_.cate.learners.size(); ++li) {
      const auto& name = cfg_.cate.learners[li];
      bool excluded = false;
      for (int arm = 0; arm < 2; ++arm) {
        std::vector<std::size_t> ta, vb;
        for (std::size_t i = 0; i < tr.rows(); ++i)
          if (tr.treatment[i] == arm) ta.push_back(i);
        for (std::size_t i = 0; i < va.rows(); ++i)
          if (va.treatment[i] == arm) vb.push_back(i);
        if (ta.size() < 2 || vb.size() < 2) {
          warn("component gate: too few rows to assess learner '" + name + "' on arm " + std::to_string(arm));
          t.rows.push_back({name, std::to_string(arm), std::to_string(ta.size()), std::to_string(vb.size()), "", "", "0"});
          continue;
        }
        const Dataset a = tr.subset(ta), b = va.subset(vb);
        const auto model =
            cfg_.learner(name).fit_regressor(a.covariates, a.outcome, derive_seed(seed("cate"), 1000 + 2 * li + arm));
        const double mse = (model->predict(b.covariates) - b.outcome).squaredNorm() / static_cast<double>(vb.size());
        const double var = population_variance(b.outcome);
        const bool bad = mse >= var;
        excluded |= bad;
        t.rows.push_back({name, std::to_string(arm), std::to_string(ta.size()), std::to_string(vb.size()), fmt_num(mse),
                          fmt_num(var), bad ? "1" : "0"});
      }
      if (excluded && cfg_.cate.gate) {
        warn("component gate: learner '" + name + "' excluded (held-out MSE >= outcome variance)");
      } else {
        if (excluded) warn("component gate disabled: learner '" + name + "' kept despite held-out MSE >= variance");
        kept.push_back(name);
      }
    }
    w_.table("cate/gate.csv", t, "cate");
    return kept;
  }

  void cate() {
    const auto train_o = where(st_.train, st_.overlap);
    const auto val_o = where(st_.validation, st_.overlap);
    if (train_o.empty()) throw EstimationError("no training rows inside the overlap interval");
    const Dataset tr = st_.data.subset(train_o);
    const Dataset va = st_.data.subset(val_o);
    const Dataset te = st_.data.subset(st_.test);

    const auto kept = gate(tr, va);
    if (kept.empty()) throw EstimationError("component gate excluded every learner");

    const PropensityModel* prop = &*st_.propensity;
    for (auto kind : cfg_.cate.kinds)
      for (const auto& l : kept) st_.specs.push_back(CateFitSpec{kind, cfg_.learner(l), std::nullopt});

    std::vector<std::string> names;
    for (std::size_t k = 0; k < st_.specs.size(); ++k) {
      const auto& spec = st_.specs[k];
      names.push_back(spec.name());
      auto model = fit_meta_learner(spec, tr.covariates, tr.treatment, tr.outcome, prop, derive_seed(seed("cate"), k));
      Vector effect = model.predict(te.covariates);
      Matrix draws;
      if (cfg_.uncertainty.alpha_stat > 0.0)
        draws = bootstrap_cate(spec, tr.covariates, tr.treatment, tr.outcome, prop, te.covariates,
                               cfg_.uncertainty.bootstrap, derive_seed(seed("intervals"), k), cfg_.threads);
      st_.intervals.push_back(cate_intervals(effect, cfg_.uncertainty.alpha_stat > 0.0 ? &draws : nullptr,
                                             model.residuals, cfg_.uncertainty));
      st_.models.push_back(std::move(model));
      st_.effects.push_back(std::move(effect));
    }

    const auto it = std::find(names.begin(), names.end(), cfg_.cate.primary);
    if (it == names.end()) {
      st_.primary = 0;
      warn("primary model '" + cfg_.cate.primary + "' was excluded; falling back to '" + names.front() + "'");
    } else {
      st_.primary = static_cast<std::size_t>(it - names.begin());
    }

    // Outcome plug-in on all training rows, shared with evaluation.
    const Dataset train_all = st_.data.subset(st_.train);
    st_.plug_in = fit_meta_learner(CateFitSpec{MetaKind::T, cfg_.learner(cfg_.evaluation.plug_in), std::nullopt},
                                   train_all.covariates, train_all.treatment, train_all.outcome, nullptr,
                                   derive_seed(seed("evaluation"), 0));

    Table effects;
    effects.header = {"row_id", "treatment", "outcome", "in_overlap"};
    effects.header.insert(effects.header.end(), names.begin(), names.end());
    for (std::size_t r = 0; r < st_.test.size(); ++r) {
      const auto i = st_.test[r];
      std::vector<std::string> row{st_.data.row_ids[i], std::to_string(st_.data.treatment[i]),
                                   fmt_num(st_.data.outcome(static_cast<Eigen::Index>(i))), st_.overlap[i] ? "1" : "0"};
      for (const auto& e : st_.effects) row.push_back(fmt_num(e(static_cast<Eigen::Index>(r))));
      effects.rows.push_back(std::move(row));
    }
    w_.table("cate/effects.csv", effects, "cate");

    // Calibration on test rows inside overlap.
    std::vector<std::size_t> local;
    for (std::size_t r = 0; r < st_.test.size(); ++r)
      if (st_.overlap[st_.test[r]]) local.push_back(r);
    const Dataset te_o = te.subset(local);
    const Vector e_o = gather(gather(st_.scores, st_.test), local);
    const Vector mu0 = st_.plug_in->predict_outcome(te_o.covariates, 0);
    const Vector mu1 = st_.plug_in->predict_outcome(te_o.covariates, 1);

    for (std::size_t k = 0; k < names.size(); ++k) {
      const auto file = safe_name(names[k]);
      w_.json("cate/models/" + file + ".json", st_.models[k].to_json(), "cate");
      const auto& iv = st_.intervals[k];
      Table t;
      t.header = {"row_id", "lower", "point", "upper", "excludes_zero"};
      for (std::size_t r = 0; r < iv.size(); ++r) {
        const auto rr = static_cast<Eigen::Index>(r);
        t.rows.push_back({st_.data.row_ids[st_.test[r]], fmt_num(iv.lower(rr)), fmt_num(iv.point(rr)),
                          fmt_num(iv.upper(rr)), iv.excludes_zero(r) ? "1" : "0"});
      }
      w_.table("cate/intervals/" + file + ".csv", t, "cate");
      if (local.size() >= static_cast<std::size_t>(cfg_.cate.calibration_segments)) {
        const auto segs = cate_calibration_curve(gather(st_.effects[k], local), te_o.outcome, te_o.treatment, e_o, mu0,
                                                 mu1, cfg_.cate.calibration_segments);
        w_.table("cate/calibration/" + file + ".csv", calibration_table(segs), "cate");
      }
    }
    if (local.size() < static_cast<std::size_t>(cfg_.cate.calibration_segments))
      warn("cate: too few test rows inside overlap for calibration curves");

    const auto diag = cate_diagnostics(names, st_.effects);
    w_.table("cate/correlation_pearson.csv", diag.correlation_table(diag.pearson), "cate");
    w_.table("cate/correlation_kendall.csv", diag.correlation_table(diag.kendall), "cate");
    w_.table("cate/correlation_spearman.csv", diag.correlation_table(diag.spearman), "cate");
    w_.table("cate/ate.csv", diag.ate_table(), "cate");
    json dj = diag.to_json();
    dj["primary"] = names[st_.primary];
    dj["training_rows"] = train_o.size();
    dj["test_rows"] = st_.test.size();
    w_.json("cate/diagnostics.json", dj, "cate");
  }

  void deferral() {
    const Vector e_test = gather(st_.scores, st_.test);
    const DeferralRule rule{st_.propensity->bounds, cfg_.deferral_mode};
    const auto inclusive = apply_deferral({st_.propensity->bounds, DeferralMode::Inclusive}, e_test, nullptr);
    const auto test_ids = gather(st_.data.row_ids, st_.test);
    const double n = static_cast<double>(st_.test.size());

    Table summary;
    summary.header = {"model", "mode", "rows", "deferred", "overlap", "uncertainty", "rate", "inclusive_deferred",
                      "inclusive_rate"};
    for (std::size_t k = 0; k < st_.models.size(); ++k) {
      auto res = apply_deferral(rule, e_test, &st_.intervals[k]);
      const auto& name = st_.models[k].name;
      w_.table("deferral/" + safe_name(name) + ".csv", res.to_table(test_ids), "deferral");
      summary.rows.push_back({name, to_string(cfg_.deferral_mode), std::to_string(st_.test.size()),
                              std::to_string(res.count()), std::to_string(res.count(DeferReason::Overlap)),
                              std::to_string(res.count(DeferReason::Uncertainty)),
                              fmt_num(static_cast<double>(res.count()) / n), std::to_string(inclusive.count()),
                              fmt_num(static_cast<double>(inclusive.count()) / n)});
      st_.deferrals.push_back(std::move(res));
    }
    w_.table("deferral/summary.csv", summary, "deferral");

    const auto flags = st_.deferrals[st_.primary].deferred();
    const auto deferred = static_cast<std::size_t>(std::count(flags.begin(), flags.end(), true));
    if (deferred == 0 || deferred == flags.size()) {
      warn("deferral: cannot characterize the deferred subpopulation of '" + st_.models[st_.primary].name +
           "' (all rows in one group)");
      return;
    }
    const auto ch = characterize_subpop(flags, st_.imputed.subset(st_.test));
    w_.table("deferral/characterization.csv", ch.coefficient_table(), "deferral");
    w_.table("deferral/characterization_summary.csv", ch.summary.to_table(), "deferral");
    json cj = ch.to_json();
    cj["model"] = st_.models[st_.primary].name;
    w_.json("deferral/characterization.json", cj, "deferral");
  }

  void evaluation() {
    const auto rule = cfg_.rule();
    const Dataset te = st_.data.subset(st_.test);
    const Vector p_all = fit_p_star(st_.data.covariates, st_.data.treatment, cfg_.evaluation.p_star_lambda,
                                    cfg_.evaluation.p_star_low, cfg_.evaluation.p_star_high);
    EvaluationData ed;
    ed.y = te.outcome;
    ed.t = te.treatment;
    ed.p_star = gather(p_all, st_.test);
    ed.mu0 = st_.plug_in->predict_outcome(te.covariates, 0);
    ed.mu1 = st_.plug_in->predict_outcome(te.covariates, 1);
    ed.plug_in = st_.plug_in->name;
    const Vector e_test = gather(st_.scores, st_.test);
    const auto overlap_test = gather(st_.overlap, st_.test);

    std::vector<Policy> policies;
    std::set<std::string> families;
    for (std::size_t k = 0; k < st_.models.size(); ++k) {
      const auto& name = st_.models[k].name;
      const auto family = st_.specs[k].learner.family();
      families.insert(family);
      policies.push_back(build_policy(name, st_.effects[k], rule, nullptr, PolicySource::CateModel, family));
      const auto flags = st_.deferrals[k].deferred();
      policies.push_back(build_policy(name + "+defer", st_.effects[k], rule, &flags, PolicySource::CateModel, family));
    }
    const std::string ens_family = families.size() == 1 ? *families.begin() : std::string{};
    for (auto mode : cfg_.evaluation.ensembles) {
      const auto ens = ensemble_cate(st_.effects, mode, rule);
      const std::string name = std::string("Ensemble-") + to_string(mode);
      policies.push_back(build_policy(name, ens.effect, rule, &ens.defer, PolicySource::Ensemble, ens_family));
      std::vector<bool> flags = ens.defer;
      for (std::size_t i = 0; i < flags.size(); ++i) flags[i] = flags[i] || !overlap_test[i];
      policies.push_back(build_policy(name + "+defer", ens.effect, rule, &flags, PolicySource::Ensemble, ens_family));
    }
    for (auto& b : baselines(te.treatment, e_test, seed("baseline"))) policies.push_back(std::move(b));

    const auto plug_family = cfg_.learner(cfg_.evaluation.plug_in).family();
    Table pt;
    pt.header = {"policy", "source", "family", "rows", "treat0", "treat1", "defer", "treated_fraction", "congeniality_risk"};
    std::vector<std::string> congenial;
    for (const auto& p : policies) {
      const bool risk = congeniality_risk(p, plug_family);
      if (risk) congenial.push_back(p.name);
      pt.rows.push_back({p.name, to_string(p.source), p.family, std::to_string(p.size()),
                         std::to_string(p.count(Action::Treat0)), std::to_string(p.count(Action::Treat1)),
                         std::to_string(p.count(Action::Defer)), fmt_num(p.treated_fraction()), risk ? "1" : "0"});
    }
    w_.table("evaluation/policies.csv", pt, "evaluation");
    if (!congenial.empty()) {
      std::string list;
      for (const auto& c : congenial) list += (list.empty() ? "" : ", ") + c;
      warn("congeniality: DR plug-in family '" + plug_family + "' also defines " + list +
           "; their DR values may be optimistic");
    }

    const auto tour = bootstrap_tournament(policies, ed, cfg_.evaluation.estimators, cfg_.evaluation.bootstrap,
                                           seed("evaluation"), rule.direction, cfg_.threads);
    for (std::size_t e = 0; e < tour.estimators.size(); ++e) {
      const std::string est = to_string(tour.estimators[e]);
      w_.table("evaluation/values_" + est + ".csv", tour.value_table(e), "evaluation");
      w_.table("evaluation/wins_" + est + ".csv", tour.wins_table(e), "evaluation");
      w_.table("evaluation/distribution_" + est + ".csv", tour.distribution_table(e), "evaluation");
    }
    w_.json("evaluation/tournament.json", tour.to_json(), "evaluation");

    const auto& primary = st_.models[st_.primary];
    for (auto est : cfg_.evaluation.estimators) {
      const auto curve = rank_curve(
          st_.effects[st_.primary], rule, [&](const Policy& p) { return policy_value(p, ed, est); },
          cfg_.evaluation.rank_step);
      w_.table(std::string("evaluation/rank_curve_") + to_string(est) + ".csv", rank_curve_table(curve), "evaluation");
    }
    const auto flags = st_.deferrals[st_.primary].deferred();
    const auto pd = build_policy(primary.name + "+defer", st_.effects[st_.primary], rule, &flags);
    json tree = outcome_tree(pd, te.outcome, te.treatment).to_json();
    w_.json("evaluation/outcome_tree.json", {{"policy", pd.name}, {"tree", tree}}, "evaluation");
  }

  const PipelineConfig& cfg_;
  RunManifest& m_;
  fs::path out_;
  ArtifactWriter w_;
  std::ostream* log_;
  State st_;
};

std::vector<Stage> plan(const PipelineConfig& cfg, const std::optional<Stage>& target, std::vector<std::string>& notes) {
  std::set<Stage> skipped;
  for (const auto& s : cfg.stages.skip) skipped.insert(stage_from_string(s));
  if (!cfg.simulation.enabled) skipped.insert(Stage::Simulation);
  if (cfg.stages.simulate_only) {
    if (!cfg.simulation.enabled) throw ConfigError("'stages.simulate_only' needs 'simulation.enabled'");
    for (auto s : {Stage::Propensity, Stage::Cate, Stage::Deferral, Stage::Evaluation}) skipped.insert(s);
  }

  std::set<Stage> wanted;
  if (target) {
    std::vector<Stage> todo{*target};
    while (!todo.empty()) {
      const Stage s = todo.back();
      todo.pop_back();
      if (skipped.count(s))
        throw ConfigError(std::string("stage '") + to_string(s) + "' is required but skipped by configuration");
      if (!wanted.insert(s).second) continue;
      for (auto p : prerequisites(s)) todo.push_back(p);
    }
  } else {
    for (const auto& [s, name] : kStages) {
      if (skipped.count(s)) continue;
      bool ok = true;
      for (auto p : prerequisites(s)) ok &= wanted.count(p) > 0;
      if (!ok) {
        notes.push_back(std::string("stage '") + name + "' skipped: a prerequisite stage is skipped");
        continue;
      }
      wanted.insert(s);
    }
  }
  std::vector<Stage> order;
  for (const auto& [s, _] : kStages)
    if (wanted.count(s)) order.push_back(s);
  return order;
}

}  // namespace

namespace detail {
void render_report(const fs::path& out_dir, RunManifest& manifest);
}

RunManifest run_pipeline(const PipelineConfig& config, const PipelineOptions& options) {
  config.validate();
  RunManifest manifest;
  manifest.config = config.to_json();
  manifest.config_hash = config_hash(config);
  const fs::path out(config.output_dir);
  fs::create_directories(out);

  std::vector<std::string> notes;
  const auto stages = plan(config, options.target, notes);
  Runner runner(config, manifest, options.log);
  for (auto& n : notes) manifest.warnings.push_back(std::move(n));

  runner.writer().text("identification/checklist.md", identification_checklist(), "identification");
  const bool estimation = std::any_of(stages.begin(), stages.end(), [](Stage s) { return s != Stage::Ingest; });
  if (estimation && !config.identification_acknowledged) {
    manifest.status = "failed";
    manifest.failed_stage = "identification";
    manifest.error = "identification checklist not acknowledged";
    write_manifest(out, manifest);
    throw ConfigError("review " + (out / "identification/checklist.md").string() +
                      " and set identification_acknowledged=true before running estimation stages");
  }

  for (Stage s : stages) {
    const auto start = std::chrono::steady_clock::now();
    try {
      if (s == Stage::Report)
        detail::render_report(out, manifest);
      else
        runner.run(s);
    } catch (const std::exception& e) {
      manifest.status = "failed";
      manifest.failed_stage = to_string(s);
      manifest.error = e.what();
      write_manifest(out, manifest);
      throw;
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    manifest.stages.push_back(to_string(s));
    manifest.timings.emplace_back(to_string(s), secs);
    if (options.log) *options.log << "stage " << to_string(s) << " finished in " << fmt_fixed(secs, 2) << " s\n";
  }
  manifest.status = "complete";
  write_manifest(out, manifest);
  return manifest;
}

void emit_report(const fs::path& out_dir, RunManifest& manifest) {
  detail::render_report(out_dir, manifest);
  if (!manifest.has_stage("report")) manifest.stages.push_back("report");
  write_manifest(out_dir, manifest);
}

}  // namespace policylab
