#include <algorithm>
#include <cmath>
#include <limits>
#include <fstream>
#include <map>
#include <sstream>

#include "policylab/error.hpp"
#include "policylab/figures.hpp"
#include "policylab/pipeline.hpp"

namespace policylab {

using json = nlohmann::json;
namespace fs = std::filesystem;

namespace {

struct StepInfo {
  const char* prefix;
  const char* heading;
  const char* text;
};

const StepInfo kSteps[] = {
    {"identification/", "Identification",
     "Causal question and assumptions to confirm before estimation. Not automated."},
    {"ingest/", "Data preparation",
     "Cohort loading, train/validation/test split, median imputation with missingness indicators and "
     "standardization from training statistics."},
    {"propensity/", "Propensity and overlap",
     "Treatment-assignment model, overlap bounds, score histograms by arm before and after trimming."},
    {"simulation/", "Simulation study",
     "Semi-synthetic outcomes on the observed covariates and treatments; estimated versus true policy values."},
    {"cate/", "Effect estimation",
     "Component gate, meta-learner fits, effect estimates with statistical and sensitivity intervals, "
     "agreement between models and calibration by effect segment."},
    {"deferral/", "Deferral",
     "Rows left to the clinician (outside overlap or with an interval containing zero) and a description of "
     "who they are."},
    {"evaluation/", "Policy evaluation",
     "Policies, IPW and DR value estimates, bootstrap win counts, rank curve and outcome tree."},
    {"report/", "Figures", "Rendered from the tables above."},
};

std::string describe(const std::string& path) {
  static const std::vector<std::pair<std::string, std::string>> kFiles{
      {"identification/checklist.md", "assumption checklist"},
      {"ingest/summary.csv", "descriptive statistics by arm"},
      {"ingest/imputation.json", "imputation and scaling statistics"},
      {"ingest/splits.csv", "split assignment per row"},
      {"ingest/dataset.json", "cohort dimensions"},
      {"propensity/model.json", "fitted propensity model and calibration metrics"},
      {"propensity/overlap.json", "overlap bounds, AUROC and lack-of-overlap flag"},
      {"propensity/histogram.csv", "score histogram by arm"},
      {"propensity/scores.csv", "score and overlap membership per row"},
      {"propensity/trimming.csv", "rows kept and trimmed by split and arm"},
      {"simulation/study.json", "study configuration, runs and checks"},
      {"simulation/table.csv", "policy values, mean (SEM) over runs"},
      {"simulation/values.csv", "policy values, numeric"},
      {"simulation/scatter.csv", "estimate versus true value per run"},
      {"cate/gate.csv", "held-out error versus outcome variance per learner and arm"},
      {"cate/effects.csv", "effect estimates on test rows"},
      {"cate/ate.csv", "average effect per model"},
      {"cate/diagnostics.json", "model agreement summary"},
      {"cate/correlation_pearson.csv", "Pearson correlation between models"},
      {"cate/correlation_kendall.csv", "Kendall correlation between models"},
      {"cate/correlation_spearman.csv", "Spearman correlation between models"},
      {"cate/models/", "fitted meta-learner"},
      {"cate/intervals/", "effect intervals"},
      {"cate/calibration/", "AIPW effect by estimated-effect segment"},
      {"deferral/summary.csv", "deferral counts per model and reason"},
      {"deferral/characterization.csv", "sparse logistic model of the deferral flag"},
      {"deferral/characterization_summary.csv", "recommended versus deferred rows"},
      {"deferral/characterization.json", "deferral characterization"},
      {"deferral/", "deferral decision per row"},
      {"evaluation/policies.csv", "actions per policy and congeniality flag"},
      {"evaluation/values_", "policy values with bootstrap summary"},
      {"evaluation/wins_", "pairwise bootstrap wins (row beats column)"},
      {"evaluation/distribution_", "bootstrap values per round"},
      {"evaluation/tournament.json", "tournament results"},
      {"evaluation/rank_curve_", "value by fraction treated for the primary model"},
      {"evaluation/outcome_tree.json", "outcome means by arm and agreement"},
      {"report/", "figure"},
  };
  for (const auto& [key, text] : kFiles)
    if (path == key || ((key.back() == '/' || key.back() == '_') && path.rfind(key, 0) == 0)) return text;
  return "";
}

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

double to_double(const std::string& s) {
  if (s.empty()) return std::numeric_limits<double>::quiet_NaN();
  try {
    return std::stod(s);
  } catch (const std::exception&) {
    throw DataError("non-numeric field '" + s + "' in report input");
  }
}

OutcomeNode node_from_json(const json& j) {
  OutcomeNode n;
  n.label = j.at("label").get<std::string>();
  n.n = j.at("n").get<std::size_t>();
  if (!j.at("mean").is_null()) n.mean = j.at("mean").get<double>();
  if (!j.at("sem").is_null()) n.sem = j.at("sem").get<double>();
  if (j.contains("children"))
    for (const auto& c : j.at("children")) n.children.push_back(node_from_json(c));
  return n;
}

struct Figure {
  std::string path;
  std::string title;
  std::string stage;
  std::string reason;  // set when the figure could not be drawn
};

class ReportBuilder {
 public:
  ReportBuilder(const fs::path& out, RunManifest& m) : out_(out), m_(m), w_(out, m) {}

  void build() {
    std::vector<std::string> estimators;
    try {
      for (const auto& e : m_.config.at("evaluation").at("estimators")) estimators.push_back(e.get<std::string>());
    } catch (const json::exception&) {
      estimators = {"IPW", "DR"};
    }

    figure("report/propensity_histogram.svg", "Propensity scores by arm", "propensity",
           {"propensity/histogram.csv", "propensity/overlap.json"}, [&] { return propensity(false); });
    figure("report/propensity_trimmed.svg", "Propensity scores inside overlap", "propensity",
           {"propensity/histogram.csv", "propensity/overlap.json"}, [&] { return propensity(true); });
    figure("report/simulation_scatter.svg", "Estimated versus true policy value", "simulation",
           {"simulation/scatter.csv"}, [&] { return simulation(); });
    for (const auto& e : estimators) {
      figure("report/boxplot_" + e + ".svg", e + " bootstrap values", "evaluation",
             {"evaluation/distribution_" + e + ".csv"}, [&] { return boxplot(e); });
      figure("report/rank_curve_" + e + ".svg", e + " rank curve", "evaluation", {"evaluation/rank_curve_" + e + ".csv"},
             [&] { return rank(e); });
    }
    figure("report/outcome_tree.svg", "Outcome tree", "evaluation", {"evaluation/outcome_tree.json"},
           [&] { return tree(); });
    index();
  }

 private:
  template <typename Draw>
  void figure(const std::string& path, const std::string& title, const std::string& stage,
              const std::vector<std::string>& inputs, Draw draw) {
    Figure f{path, title, stage, {}};
    for (const auto& in : inputs) {
      if (!m_.artifact(in) || !fs::exists(out_ / in)) {
        f.reason = "missing " + in;
        break;
      }
    }
    if (f.reason.empty()) {
      try {
        w_.text(path, draw(), "report");
      } catch (const std::exception& e) {
        f.reason = e.what();
      }
    }
    // Inputs of a stage that did not run are expected to be absent.
    if (!f.reason.empty() && m_.has_stage(stage)) warn("report: " + path + " not drawn (" + f.reason + ")");
    if (!f.reason.empty() && !m_.has_stage(stage)) f.reason = "stage '" + stage + "' did not run";
    figures_.push_back(std::move(f));
  }

  void warn(const std::string& msg) {
    if (std::find(m_.warnings.begin(), m_.warnings.end(), msg) == m_.warnings.end()) m_.warnings.push_back(msg);
  }

  Table csv(const std::string& rel) const { return Table::read_csv(out_ / rel); }

  std::string propensity(bool trimmed) {
    const auto t = csv("propensity/histogram.csv");
    const auto overlap = json::parse(read_file(out_ / "propensity/overlap.json"));
    const auto lo = t.column("bin_low"), hi = t.column("bin_high"), arm = t.column("treatment");
    const auto count = t.column(trimmed ? "count_after" : "count_before");
    std::vector<double> edges;
    std::array<std::vector<double>, 2> counts;
    for (const auto& r : t.rows) {
      const int a = std::stoi(r[arm]);
      if (a < 0 || a > 1) throw DataError("treatment outside {0,1} in histogram");
      if (a == 0) {
        if (edges.empty()) edges.push_back(to_double(r[lo]));
        edges.push_back(to_double(r[hi]));
      }
      counts[static_cast<std::size_t>(a)].push_back(to_double(r[count]));
    }
    const auto bounds = overlap.at("bounds").get<std::vector<double>>();
    return figures::histogram(trimmed ? "Propensity scores inside overlap" : "Propensity scores by arm", edges,
                              {{"T=0", counts[0]}, {"T=1", counts[1]}}, bounds);
  }

  std::string simulation() {
    const auto t = csv("simulation/scatter.csv");
    const auto est = t.column("estimator"), e = t.column("estimate"), v = t.column("true_value");
    std::vector<figures::Series> series;
    for (const auto& r : t.rows) {
      auto it = std::find_if(series.begin(), series.end(), [&](const auto& s) { return s.label == r[est]; });
      if (it == series.end()) {
        series.push_back({r[est], {}, {}});
        it = series.end() - 1;
      }
      it->x.push_back(to_double(r[v]));
      it->y.push_back(to_double(r[e]));
    }
    return figures::scatter("Estimated versus true policy value", "true value", "estimate", series, true);
  }

  std::string boxplot(const std::string& est) {
    const auto t = csv("evaluation/distribution_" + est + ".csv");
    const auto p = t.column("policy"), v = t.column("value");
    std::vector<std::pair<std::string, std::vector<double>>> groups;
    for (const auto& r : t.rows) {
      auto it = std::find_if(groups.begin(), groups.end(), [&](const auto& g) { return g.first == r[p]; });
      if (it == groups.end()) {
        groups.push_back({r[p], {}});
        it = groups.end() - 1;
      }
      it->second.push_back(to_double(r[v]));
    }
    std::vector<std::pair<std::string, figures::BoxStats>> boxes;
    for (auto& [name, values] : groups) boxes.emplace_back(name, figures::box_stats(values));
    return figures::boxplot(est + " policy values over bootstrap rounds", "value", boxes);
  }

  std::string rank(const std::string& est) {
    const auto t = csv("evaluation/rank_curve_" + est + ".csv");
    const auto f = t.column("treated_fraction"), v = t.column("value");
    figures::Series s{"primary model", {}, {}};
    for (const auto& r : t.rows) {
      s.x.push_back(to_double(r[f]));
      s.y.push_back(to_double(r[v]));
    }
    // The curve runs from q = 0 (everyone treated) to q = 1 (nobody treated).
    std::vector<figures::PointLabel> labels;
    if (!s.x.empty() && s.x.front() == 1.0 && !std::isnan(s.y.front()))
      labels.push_back({s.x.front(), s.y.front(), "Treat-all-1"});
    if (!s.x.empty() && s.x.back() == 0.0 && !std::isnan(s.y.back()))
      labels.push_back({s.x.back(), s.y.back(), "Treat-all-0"});
    return figures::line_chart(est + " value by fraction treated", "fraction treated", "policy value", {s}, labels,
                               std::make_pair(0.0, 1.0));
  }

  std::string tree() {
    const auto j = json::parse(read_file(out_ / "evaluation/outcome_tree.json"));
    return figures::tree("Outcome tree: " + j.at("policy").get<std::string>(), node_from_json(j.at("tree")));
  }

  void index() {
    std::ostringstream md;
    md << "# Run report\n\n";
    md << "Configuration hash `" << m_.config_hash << "`.\n";
    md << "Stages: ";
    for (std::size_t i = 0; i < m_.stages.size(); ++i) md << (i ? ", " : "") << m_.stages[i];
    md << (m_.stages.empty() ? "none" : "") << ".\n";

    for (const auto& step : kSteps) {
      const std::string prefix = step.prefix;
      std::vector<const ArtifactEntry*> files;
      for (const auto& a : m_.artifacts)
        if (a.path.rfind(prefix, 0) == 0 && a.path != "report/index.md") files.push_back(&a);
      const bool figures_step = prefix == "report/";
      if (files.empty() && !figures_step) continue;
      md << "\n## " << step.heading << "\n\n" << step.text << "\n\n";
      if (figures_step) {
        for (const auto& f : figures_) {
          if (f.reason.empty())
            md << "- [" << f.title << "](" << f.path.substr(prefix.size()) << ")\n";
          else
            md << "- " << f.title << ": not available (" << f.reason << ")\n";
        }
        continue;
      }
      for (const auto* a : files) {
        const auto d = describe(a->path);
        md << "- [" << a->path << "](../" << a->path << ")" << (d.empty() ? "" : ": " + d) << "\n";
      }
    }

    md << "\n## Warnings\n\n";
    if (m_.warnings.empty()) md << "None.\n";
    for (const auto& w : m_.warnings) md << "- " << w << "\n";
    w_.text("report/index.md", md.str(), "report");
  }

  fs::path out_;
  RunManifest& m_;
  ArtifactWriter w_;
  std::vector<Figure> figures_;
};

}  // namespace

namespace detail {

void render_report(const fs::path& out_dir, RunManifest& manifest) { ReportBuilder(out_dir, manifest).build(); }

}  // namespace detail

}  // namespace policylab
