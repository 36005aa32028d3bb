#ifndef SYNSEG_PIPELINE_HPP
#define SYNSEG_PIPELINE_HPP

#include <chrono>
#include <ctime>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "synseg/checkpoint.hpp"
#include "synseg/fingerprint.hpp"
#include "synseg/infer.hpp"
#include "synseg/metrics.hpp"
#include "synseg/phantom.hpp"
#include "synseg/plan.hpp"
#include "synseg/report.hpp"
#include "synseg/train.hpp"
#include "synseg/version.hpp"

// End-to-end workflows shared by the CLI and the acceptance suite. Every JSON
// artifact written here embeds {tool_version, resolved_config, input_hashes}
// plus an isolated generated_at timestamp, so reruns with identical inputs
// differ only in that one field.

namespace synseg {
namespace pipeline {

inline std::string file_hash_hex(const std::string& path) {
  const auto bytes = detail::read_file_bytes(path);
  return to_hex(fnv1a64(bytes.data(), bytes.size()));
}

inline std::string iso_timestamp() {
  const auto now = std::chrono::system_clock::now();
  const std::time_t t = std::chrono::system_clock::to_time_t(now);
  char buf[32];
  std::tm tm_utc{};
  gmtime_r(&t, &tm_utc);
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm_utc);
  return buf;
}

inline nlohmann::json make_provenance(const nlohmann::json& resolved_config,
                                      const std::vector<std::pair<std::string, std::string>>& inputs) {
  nlohmann::json p;
  p["tool_version"] = tool_version();
  p["resolved_config"] = resolved_config;
  p["input_hashes"] = nlohmann::json::object();
  for (const auto& [name, path] : inputs) p["input_hashes"][name] = file_hash_hex(path);
  return p;
}

// Artifact = payload + provenance + isolated timestamp.
inline void write_artifact(const std::string& path, nlohmann::json payload,
                           const nlohmann::json& provenance) {
  payload["provenance"] = provenance;
  payload["generated_at"] = iso_timestamp();
  const std::string text = payload.dump(2) + "\n";
  detail::write_file_bytes(path, text.data(), text.size());
}

inline nlohmann::json read_json_file(const std::string& path) {
  try {
    return nlohmann::json::parse(detail::read_file_bytes(path));
  } catch (const nlohmann::json::exception& e) {
    throw UnreadableFile(path + ": " + e.what());
  }
}

// --- phantom corpus -----------------------------------------------------------

struct PhantomArgs {
  int n = 10;
  PhantomSpec spec;
  double grid_jitter = 0.0;
  std::string out_dir;
};

inline DatasetManifest run_phantom(const PhantomArgs& a, const nlohmann::json& resolved_config) {
  DatasetManifest m = generate_corpus(a.n, a.spec, a.spec.seed, a.out_dir, a.grid_jitter);
  // Rewrite the manifest with provenance; case paths stay relative.
  DatasetManifest rel = m;
  for (auto& c : rel.cases) {
    c.volume_path = std::filesystem::path(c.volume_path).filename().string();
    c.mask_path = std::filesystem::path(c.mask_path).filename().string();
  }
  nlohmann::json payload = manifest_to_json(rel);
  write_artifact((std::filesystem::path(a.out_dir) / "manifest.json").string(), payload,
                 make_provenance(resolved_config, {}));
  return m;
}

// --- fingerprint / plan ---------------------------------------------------------

inline DatasetFingerprint run_fingerprint(const std::string& manifest_path, const std::string& out_path,
                                          const nlohmann::json& resolved_config, bool binarize = false) {
  const DatasetManifest manifest = load_manifest(manifest_path);
  const DatasetFingerprint fp = fingerprint_dataset(manifest, binarize);
  write_artifact(out_path, fingerprint_to_json(fp),
                 make_provenance(resolved_config, {{"manifest", manifest_path}}));
  return fp;
}

inline PlanConfig run_plan(const std::string& fingerprint_path, const MemoryBudget& budget,
                           bool use_default, const std::string& out_path,
                           const nlohmann::json& resolved_config) {
  const DatasetFingerprint fp = fingerprint_from_json(read_json_file(fingerprint_path));
  const PlanConfig plan = use_default ? default_plan(fp) : plan_configuration(fp, budget);
  write_artifact(out_path, plan_to_json(plan),
                 make_provenance(resolved_config, {{"fingerprint", fingerprint_path}}));
  return plan;
}

// --- training -------------------------------------------------------------------

// Minimal SVG line plot of training loss and validation Dice per epoch.
inline std::string render_training_curves_svg(const std::vector<EpochRecord>& records) {
  const int W = 720, H = 360, ml = 60, mr = 60, mt = 30, mb = 40;
  const int pw = W - ml - mr, ph = H - mt - mb;
  std::string svg = "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + std::to_string(W) +
                    "\" height=\"" + std::to_string(H) + "\">\n";
  svg += "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  if (!records.empty()) {
    double max_loss = 1e-9;
    for (const auto& r : records) max_loss = std::max(max_loss, r.train_loss);
    const double n = static_cast<double>(std::max<std::size_t>(records.size() - 1, 1));
    auto xpos = [&](std::size_t i) { return ml + pw * static_cast<double>(i) / n; };

    auto polyline = [&](const char* color, auto value) {
      std::string pts;
      for (std::size_t i = 0; i < records.size(); ++i) {
        const double v = value(records[i]);
        const double y = mt + ph * (1.0 - v);
        pts += std::to_string(xpos(i)) + "," + std::to_string(y) + " ";
      }
      return "<polyline fill=\"none\" stroke=\"" + std::string(color) +
             "\" stroke-width=\"1.5\" points=\"" + pts + "\"/>\n";
    };
    svg += polyline("#d62728", [&](const EpochRecord& r) { return r.train_loss / max_loss; });
    svg += polyline("#1f77b4", [&](const EpochRecord& r) { return std::clamp(r.val_dice, 0.0, 1.0); });
    svg += "<text x=\"" + std::to_string(ml) + "\" y=\"18\" font-size=\"12\" fill=\"#d62728\">train loss (scaled)</text>\n";
    svg += "<text x=\"" + std::to_string(ml + 160) + "\" y=\"18\" font-size=\"12\" fill=\"#1f77b4\">val Dice</text>\n";
  }
  svg += "<line x1=\"" + std::to_string(ml) + "\" y1=\"" + std::to_string(mt + ph) + "\" x2=\"" +
         std::to_string(ml + pw) + "\" y2=\"" + std::to_string(mt + ph) + "\" stroke=\"black\"/>\n";
  svg += "<line x1=\"" + std::to_string(ml) + "\" y1=\"" + std::to_string(mt) + "\" x2=\"" +
         std::to_string(ml) + "\" y2=\"" + std::to_string(mt + ph) + "\" stroke=\"black\"/>\n";
  svg += "<text x=\"" + std::to_string(ml + pw / 2) + "\" y=\"" + std::to_string(H - 12) +
         "\" font-size=\"12\">epoch</text>\n</svg>\n";
  return svg;
}

struct TrainOutputs {
  std::string checkpoint_path;
  std::string log_path;
  std::string plot_path;
  std::string summary_path;
  TrainResult result;
};

inline TrainOutputs run_train(const std::string& manifest_path, const std::string& plan_path,
                              const TrainConfig& cfg, const std::string& out_dir,
                              const nlohmann::json& resolved_config, bool binarize = false) {
  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  const DatasetManifest manifest = load_manifest(manifest_path);
  const PlanConfig plan = plan_from_json(read_json_file(plan_path));

  TrainOutputs out;
  out.log_path = (std::filesystem::path(out_dir) / "train_log.jsonl").string();
  out.checkpoint_path = (std::filesystem::path(out_dir) / "checkpoint.bin").string();
  out.plot_path = (std::filesystem::path(out_dir) / "training_curves.svg").string();
  out.summary_path = (std::filesystem::path(out_dir) / "train_summary.json").string();

  auto [model, result] = train(manifest, plan, cfg, out.log_path, binarize);
  out.result = result;
  save_checkpoint(out.checkpoint_path, model);

  const std::string svg = render_training_curves_svg(result.records);
  detail::write_file_bytes(out.plot_path, svg.data(), svg.size());

  nlohmann::json summary;
  summary["best_val_dice"] = result.best_val_dice;
  summary["best_epoch"] = result.best_epoch;
  summary["epochs_run"] = result.epochs_run;
  summary["val_dice_trace"] = result.val_dice_trace;
  write_artifact(out.summary_path, summary,
                 make_provenance(resolved_config,
                                 {{"manifest", manifest_path}, {"plan", plan_path}}));
  return out;
}

// --- prediction / evaluation -----------------------------------------------------

// Writes <id>_prob.raw3d (probabilities) and <id>.raw3d (postprocessed mask)
// for every case in the split (nullopt = all cases).
inline std::vector<std::string> run_predict(const Model& model, const DatasetManifest& manifest,
                                            const std::optional<Split>& split,
                                            const std::string& out_dir, double threshold = 0.5) {
  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  const std::vector<std::string> ids = split ? manifest.ids_in_split(*split) : manifest.all_ids();
  for (const auto& id : ids) {
    const auto& mc = manifest.case_by_id(id);
    const Volume vol = load_volume(mc.volume_path);
    const Volume prob = model.predict_volume(normalize_intensity(vol));
    const LabelMask mask = postprocess(prob, threshold);
    write_raw3d((std::filesystem::path(out_dir) / (id + "_prob.raw3d")).string(), prob);
    write_raw3d((std::filesystem::path(out_dir) / (id + ".raw3d")).string(), mask);
  }
  return ids;
}

inline MetricsReport run_evaluate(const std::string& pred_dir, const std::string& manifest_path,
                                  const std::optional<Split>& split, const std::string& out_path,
                                  const nlohmann::json& resolved_config,
                                  const std::string& label = "") {
  const DatasetManifest manifest = load_manifest(manifest_path);
  MetricsReport report = evaluate_dataset(pred_dir, manifest, split);
  report.label = label;
  write_artifact(out_path, report_to_json(report),
                 make_provenance(resolved_config, {{"manifest", manifest_path}}));
  return report;
}

// Zero-shot workflow: predict + evaluate on a foreign manifest, no
// fine-tuning; the report is labeled accordingly.
inline MetricsReport run_zeroshot(const std::string& checkpoint_path, const std::string& manifest_path,
                                  const std::optional<Split>& split, const std::string& out_dir,
                                  const nlohmann::json& resolved_config) {
  const Model model = load_checkpoint(checkpoint_path);
  const DatasetManifest manifest = load_manifest(manifest_path);
  const std::string pred_dir = (std::filesystem::path(out_dir) / "predictions").string();
  run_predict(model, manifest, split, pred_dir);
  MetricsReport report = evaluate_dataset(pred_dir, manifest, split);
  report.label = "zero-shot";
  write_artifact((std::filesystem::path(out_dir) / "report.json").string(), report_to_json(report),
                 make_provenance(resolved_config, {{"manifest", manifest_path},
                                                   {"checkpoint", checkpoint_path}}));
  return report;
}

}  // namespace pipeline
}  // namespace synseg

#endif
