#include <functional>
#include <iostream>
#include <optional>
#include <string>
#include <tuple>
#include <vector>

#include <CLI11.hpp>

#include "policylab/config.hpp"
#include "policylab/error.hpp"
#include "policylab/pipeline.hpp"

using namespace policylab;

namespace {

struct Common {
  std::string config;
  std::vector<std::string> sets;
  std::string out;
  std::optional<unsigned> threads;
};

void add_common(CLI::App* cmd, Common& c, bool config_required = true) {
  auto* opt = cmd->add_option("-c,--config", c.config, "JSON configuration file");
  if (config_required) opt->required();
  cmd->add_option("-s,--set", c.sets, "override one key, e.g. --set uncertainty.lambda=1.1 (repeatable)");
  cmd->add_option("-o,--out", c.out, "output directory (overrides output_dir)");
  cmd->add_option("-j,--threads", c.threads, "worker threads (0 = all cores)");
}

PipelineConfig load(const Common& c) {
  auto overrides = c.sets;
  if (!c.out.empty()) overrides.push_back("output_dir=\"" + c.out + "\"");
  if (c.threads) overrides.push_back("threads=" + std::to_string(*c.threads));
  return load_config(c.config, overrides);
}

int run(const std::function<void()>& body) {
  try {
    body();
    return 0;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 2;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "stage failure: " << e.what() << '\n';
    return 4;
  }
}

void print_summary(const RunManifest& m, const std::string& out) {
  std::cout << "status: " << m.status << "\nstages:";
  for (const auto& s : m.stages) std::cout << ' ' << s;
  std::cout << "\nartifacts: " << m.artifacts.size() << " in " << out << "\nconfig hash: " << m.config_hash << '\n';
  for (const auto& w : m.warnings) std::cout << "warning: " << w << '\n';
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"policylab: treatment-policy learning from observational data"};
  app.require_subcommand(1);

  Common common;
  std::function<int()> action;

  auto* validate = app.add_subcommand("validate-config", "parse and validate a configuration, print the effective values");
  add_common(validate, common);
  validate->callback([&] {
    action = [&] {
      return run([&] {
        const auto cfg = load(common);
        std::cout << cfg.to_json().dump(2) << "\nconfig hash: " << config_hash(cfg) << '\n';
      });
    };
  });

  const std::vector<std::tuple<const char*, const char*, std::optional<Stage>>> stage_commands{
      {"ingest", "load, split, impute and standardize the cohort", Stage::Ingest},
      {"simulate", "run the semi-synthetic simulation study", Stage::Simulation},
      {"fit-propensity", "fit the propensity model and write the overlap report", Stage::Propensity},
      {"fit-cate", "gate learners and fit the effect models with intervals", Stage::Cate},
      {"defer", "apply the deferral rule to every effect model", Stage::Deferral},
      {"evaluate", "build policies and estimate their values", Stage::Evaluation},
      {"all", "run every enabled stage and render the report", std::nullopt},
  };
  for (const auto& [name, help, target] : stage_commands) {
    auto* cmd = app.add_subcommand(name, help);
    add_common(cmd, common);
    cmd->callback([&, target = target] {
      action = [&, target] {
        return run([&] {
          const auto cfg = load(common);
          PipelineOptions opts;
          opts.target = target;
          opts.log = &std::cerr;
          const auto m = run_pipeline(cfg, opts);
          print_summary(m, cfg.output_dir);
        });
      };
    });
  }

  auto* report = app.add_subcommand("report", "render figures and the index from an existing output directory");
  add_common(report, common, false);
  report->callback([&] {
    action = [&] {
      return run([&] {
        std::string out = common.out;
        if (out.empty()) {
          if (common.config.empty()) throw ConfigError("report needs --out or --config");
          out = load(common).output_dir;
        }
        auto m = read_manifest(out);
        emit_report(out, m);
        print_summary(m, out);
      });
    };
  });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }
  return action ? action() : 2;
}
