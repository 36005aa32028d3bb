// synseg: phantom-corpus generation, auto-configured planning, training,
// prediction, evaluation, and report rendering for volumetric segmentation.
//
// Exit codes: 0 success, 1 runtime failure, 2 usage error.

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "synseg/pipeline.hpp"

namespace {

using nlohmann::json;

constexpr int kExitOk = 0;
constexpr int kExitRuntime = 1;
constexpr int kExitUsage = 2;

synseg::Vec3i parse_grid(const std::string& s) {
  synseg::Vec3i g;
  char sep1 = 0, sep2 = 0;
  if (std::sscanf(s.c_str(), "%d%c%d%c%d", &g[0], &sep1, &g[1], &sep2, &g[2]) != 5 ||
      sep1 != 'x' || sep2 != 'x')
    throw synseg::InvalidArgument("grid must look like 32x32x16, got '" + s + "'");
  return g;
}

std::optional<synseg::Split> parse_split(const std::string& s) {
  if (s == "all") return std::nullopt;
  return synseg::split_from_string(s);
}

json load_config_file(const std::string& path) {
  if (path.empty()) return json::object();
  return synseg::pipeline::read_json_file(path);
}

// flag > config file > default: config values only land on options the user
// did not pass. Unknown config keys are usage errors.
void apply_config(CLI::App* cmd, const json& cfg) {
  for (const auto& [key, value] : cfg.items()) {
    CLI::Option* opt = cmd->get_option_no_throw("--" + key);
    if (!opt) throw synseg::InvalidArgument("unknown config key: " + key);
    if (opt->count() > 0) continue;
    std::string text;
    if (value.is_string())
      text = value.get<std::string>();
    else
      text = value.dump();
    opt->add_result(text);
    opt->run_callback();
  }
}

json flags_to_json(const CLI::App* cmd) {
  json j;
  j["command"] = cmd->get_name();
  for (const CLI::Option* opt : cmd->get_options()) {
    const std::string name = opt->get_lnames().empty() ? "" : opt->get_lnames()[0];
    if (name.empty() || name == "help" || name == "config") continue;
    const auto& results = opt->results();
    if (results.empty()) continue;
    if (results.size() == 1)
      j[name] = results[0];
    else
      j[name] = results;
  }
  return j;
}

struct CommandArgs {
  // phantom
  int n = 10;
  std::string grid = "32x32x16";
  double severity = 0.0;
  double noise = 0.05;
  std::uint64_t seed = 0;
  double grid_jitter = 0.0;
  // shared paths
  std::string out;
  std::string config;
  std::string manifest;
  std::string fingerprint;
  std::string plan;
  std::string checkpoint;
  std::string pred;
  std::string split = "test";
  bool binarize = false;
  bool use_default = false;
  double budget_gb = 8.0;
  double safety_factor = 0.85;
  double threshold = 0.5;
  // train overrides
  std::string train_config_path;
  std::vector<std::string> reports;
  std::vector<std::string> names;
};

int run_phantom(const CommandArgs& a, const json& resolved) {
  synseg::pipeline::PhantomArgs pa;
  pa.n = a.n;
  pa.spec.grid_shape = parse_grid(a.grid);
  pa.spec.severity = a.severity;
  pa.spec.noise_sigma = a.noise;
  pa.spec.seed = a.seed;
  pa.grid_jitter = a.grid_jitter;
  pa.out_dir = a.out;
  synseg::pipeline::run_phantom(pa, resolved);
  std::cout << "wrote " << a.n << " cases + manifest.json under " << a.out << "\n";
  return kExitOk;
}

int run_fingerprint(const CommandArgs& a, const json& resolved) {
  const auto fp = synseg::pipeline::run_fingerprint(a.manifest, a.out, resolved, a.binarize);
  std::cout << "fingerprint: median_shape " << synseg::shape_str(fp.median_shape) << ", "
            << fp.n_cases << " training cases -> " << a.out << "\n";
  return kExitOk;
}

int run_plan(const CommandArgs& a, const json& resolved) {
  synseg::MemoryBudget budget = synseg::MemoryBudget::from_gigabytes(a.budget_gb, a.safety_factor);
  const auto plan = synseg::pipeline::run_plan(a.fingerprint, budget, a.use_default, a.out, resolved);
  std::cout << "plan: " << synseg::to_string(plan.variant) << ", patch "
            << synseg::shape_str(plan.patch_size) << ", batch " << plan.batch_size << ", "
            << plan.n_stages << " stages -> " << a.out << "\n";
  return kExitOk;
}

int run_train(const CommandArgs& a, const synseg::TrainConfig& cfg, const json& resolved) {
  const auto out = synseg::pipeline::run_train(a.manifest, a.plan, cfg, a.out, resolved, a.binarize);
  std::cout << "trained " << out.result.epochs_run << " epochs, best val Dice "
            << out.result.best_val_dice << " (epoch " << out.result.best_epoch << ")\n"
            << "checkpoint: " << out.checkpoint_path << "\n";
  return kExitOk;
}

int run_predict(const CommandArgs& a, const json&) {
  const synseg::Model model = synseg::load_checkpoint(a.checkpoint);
  const synseg::DatasetManifest manifest = synseg::load_manifest(a.manifest);
  const auto ids = synseg::pipeline::run_predict(model, manifest, parse_split(a.split), a.out, a.threshold);
  std::cout << "predicted " << ids.size() << " cases -> " << a.out << "\n";
  return kExitOk;
}

int run_evaluate(const CommandArgs& a, const json& resolved) {
  const auto report =
      synseg::pipeline::run_evaluate(a.pred, a.manifest, parse_split(a.split), a.out, resolved);
  std::cout << "evaluated " << report.n_cases << " cases, mean Dice " << report.aggregate.dice
            << " -> " << a.out << "\n";
  return kExitOk;
}

int run_report(const CommandArgs& a, const json&) {
  if (a.names.size() != a.reports.size())
    throw synseg::InvalidArgument("--names must match --reports in count");
  std::vector<synseg::ReportRow> rows;
  for (std::size_t i = 0; i < a.reports.size(); ++i) {
    rows.push_back({a.names[i],
                    synseg::report_from_json(synseg::pipeline::read_json_file(a.reports[i]))});
  }
  const std::string table = synseg::render_table(rows);
  std::cout << table;
  if (!a.out.empty()) {
    std::error_code ec;
    std::filesystem::create_directories(a.out, ec);
    const std::string txt_path = (std::filesystem::path(a.out) / "report_table.txt").string();
    const std::string csv_path = (std::filesystem::path(a.out) / "report_table.csv").string();
    synseg::detail::write_file_bytes(txt_path, table.data(), table.size());
    const std::string csv = synseg::render_csv(rows);
    synseg::detail::write_file_bytes(csv_path, csv.data(), csv.size());
    std::cout << "wrote " << txt_path << " and " << csv_path << "\n";
  }
  return kExitOk;
}

int run_zeroshot(const CommandArgs& a, const json& resolved) {
  const auto report = synseg::pipeline::run_zeroshot(a.checkpoint, a.manifest, parse_split(a.split),
                                                     a.out, resolved);
  std::cout << "zero-shot report (" << report.n_cases << " cases, mean Dice "
            << report.aggregate.dice << ") -> " << a.out << "\n";
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"synergistic-latent 3D segmentation pipeline"};
  app.require_subcommand(1);

  CommandArgs a;

  CLI::App* phantom = app.add_subcommand("phantom", "generate a synthetic phantom corpus");
  phantom->add_option("--n", a.n, "number of cases (>= 3)");
  phantom->add_option("--grid", a.grid, "grid shape XxYxZ");
  phantom->add_option("--severity", a.severity, "boundary nodularity in [0,1]");
  phantom->add_option("--noise", a.noise, "Gaussian noise sigma");
  phantom->add_option("--seed", a.seed, "corpus seed");
  phantom->add_option("--grid-jitter", a.grid_jitter, "per-case grid size jitter fraction");
  phantom->add_option("--out", a.out, "output directory")->required();
  phantom->add_option("--config", a.config, "JSON config file");

  CLI::App* fingerprint = app.add_subcommand("fingerprint", "compute the dataset fingerprint");
  fingerprint->add_option("--manifest", a.manifest, "manifest JSON")->required();
  fingerprint->add_option("--out", a.out, "output fingerprint.json")->required();
  fingerprint->add_flag("--binarize", a.binarize, "threshold mask values > 0.5 to 1");
  fingerprint->add_option("--config", a.config, "JSON config file");

  CLI::App* plan = app.add_subcommand("plan", "derive a training plan from a fingerprint");
  plan->add_option("--fingerprint", a.fingerprint, "fingerprint JSON")->required();
  plan->add_option("--budget-gb", a.budget_gb, "memory budget in GiB");
  plan->add_option("--safety-factor", a.safety_factor, "budget safety factor in (0,1]");
  plan->add_flag("--default", a.use_default, "emit the fixed default plan (no auto-configuration)");
  plan->add_option("--out", a.out, "output plan.json")->required();
  plan->add_option("--config", a.config, "JSON config file");

  CLI::App* train = app.add_subcommand("train", "train a model");
  train->add_option("--manifest", a.manifest, "manifest JSON")->required();
  train->add_option("--plan", a.plan, "plan JSON")->required();
  train->add_option("--out", a.out, "output directory")->required();
  train->add_option("--config", a.train_config_path, "train config JSON");
  train->add_flag("--binarize", a.binarize, "threshold mask values > 0.5 to 1");
  double lr_flag = -1.0;
  int max_epochs_flag = -1, patience_flag = -1, steps_flag = -1, threads_flag = -1;
  std::int64_t seed_flag = -1;
  train->add_option("--lr", lr_flag, "initial learning rate");
  train->add_option("--max-epochs", max_epochs_flag, "maximum epochs");
  train->add_option("--patience", patience_flag, "early stopping patience");
  train->add_option("--steps-per-epoch", steps_flag, "optimizer steps per epoch");
  train->add_option("--threads", threads_flag, "worker threads (0 = auto)");
  train->add_option("--seed", seed_flag, "training seed");

  CLI::App* predict = app.add_subcommand("predict", "run sliding-window inference");
  predict->add_option("--checkpoint", a.checkpoint, "checkpoint file")->required();
  predict->add_option("--manifest", a.manifest, "manifest JSON")->required();
  predict->add_option("--split", a.split, "train|val|test|all");
  predict->add_option("--threshold", a.threshold, "mask threshold");
  predict->add_option("--out", a.out, "output directory")->required();
  predict->add_option("--config", a.config, "JSON config file");

  CLI::App* evaluate = app.add_subcommand("evaluate", "score predictions against ground truth");
  evaluate->add_option("--pred", a.pred, "prediction directory")->required();
  evaluate->add_option("--manifest", a.manifest, "manifest JSON")->required();
  evaluate->add_option("--split", a.split, "train|val|test|all");
  evaluate->add_option("--out", a.out, "output report.json")->required();
  evaluate->add_option("--config", a.config, "JSON config file");

  CLI::App* report = app.add_subcommand("report", "render a comparison table from reports");
  report->add_option("--reports", a.reports, "report JSON files")->required();
  report->add_option("--names", a.names, "method names, one per report")->required();
  report->add_option("--out", a.out, "output directory for table files");
  report->add_option("--config", a.config, "JSON config file");

  CLI::App* zeroshot = app.add_subcommand("zeroshot", "predict + evaluate on a foreign manifest");
  zeroshot->add_option("--checkpoint", a.checkpoint, "checkpoint file")->required();
  zeroshot->add_option("--manifest", a.manifest, "foreign manifest JSON")->required();
  zeroshot->add_option("--split", a.split, "train|val|test|all");
  zeroshot->add_option("--out", a.out, "output directory")->required();
  zeroshot->add_option("--config", a.config, "JSON config file");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitUsage;
  }

  CLI::App* cmd = app.get_subcommands().front();
  try {
    if (cmd != train) apply_config(cmd, load_config_file(a.config));
    const json resolved = flags_to_json(cmd);

    if (cmd == phantom) return run_phantom(a, resolved);
    if (cmd == fingerprint) return run_fingerprint(a, resolved);
    if (cmd == plan) return run_plan(a, resolved);
    if (cmd == train) {
      synseg::TrainConfig cfg;
      if (!a.train_config_path.empty())
        cfg = synseg::train_config_from_json(
            synseg::pipeline::read_json_file(a.train_config_path));
      if (lr_flag > 0) cfg.lr_init = lr_flag;
      if (max_epochs_flag >= 0) cfg.max_epochs = max_epochs_flag;
      if (patience_flag >= 0) cfg.patience = patience_flag;
      if (steps_flag > 0) cfg.steps_per_epoch = steps_flag;
      if (threads_flag >= 0) cfg.threads = threads_flag;
      if (seed_flag >= 0) cfg.seed = static_cast<std::uint64_t>(seed_flag);
      // A shortened --max-epochs implies a clamped default patience.
      if (patience_flag < 0 && cfg.patience > cfg.max_epochs) cfg.patience = cfg.max_epochs;
      cfg.validate();
      json resolved_train = flags_to_json(cmd);
      resolved_train["train_config"] = synseg::train_config_to_json(cfg);
      return run_train(a, cfg, resolved_train);
    }
    if (cmd == predict) return run_predict(a, resolved);
    if (cmd == evaluate) return run_evaluate(a, resolved);
    if (cmd == report) return run_report(a, resolved);
    if (cmd == zeroshot) return run_zeroshot(a, resolved);
    std::cerr << "unknown command\n";
    return kExitUsage;
  } catch (const synseg::InvalidArgument& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const synseg::TooFewCases& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const synseg::DegenerateGrid& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const synseg::BudgetInfeasible& e) {
    std::cerr << "BudgetInfeasible: " << e.what() << "\n";
    return kExitRuntime;
  } catch (const synseg::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitRuntime;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
}
