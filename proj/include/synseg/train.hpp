#ifndef SYNSEG_TRAIN_HPP
#define SYNSEG_TRAIN_HPP

#include <atomic>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <limits>
#include <memory>
#include <string>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>

#include "synseg/checkpoint.hpp"
#include "synseg/infer.hpp"
#include "synseg/losses.hpp"
#include "synseg/manifest.hpp"
#include "synseg/metrics.hpp"
#include "synseg/network.hpp"
#include "synseg/optim.hpp"
#include "synseg/plan.hpp"
#include "synseg/sampling.hpp"
#include "synseg/volume_ops.hpp"

namespace synseg {

struct LossWeights {
  double bce = 1.0;
  double dice = 1.0;
  double vq = 1.0;
  double commit = 0.25;
};

struct TrainConfig {
  double lr_init = 1e-4;
  double lr_min = 1e-6;
  std::string optimizer = "adamw";
  double weight_decay = 1e-2;
  double clip_norm = 12.0;
  int max_epochs = 500;
  int patience = 50;
  std::string schedule = "cosine";  // "cosine" | "step"
  double step_factor = 0.001;       // per-period multiplier for the step schedule
  int step_period = 10;
  LossWeights loss_weights;
  std::uint64_t seed = 0;
  int steps_per_epoch = 10;
  bool reverse_attention = false;
  std::string codebook_update = "ema";  // "ema" | "gradient"
  double ema_decay = 0.99;
  int threads = 0;  // 0 = one per batch item, capped by hardware

  void validate() const {
    if (lr_init <= 0 || lr_min < 0) throw InvalidArgument("learning rates must be positive");
    if (max_epochs < 1) throw InvalidArgument("max_epochs must be >= 1");
    if (patience < 0 || patience > max_epochs)
      throw InvalidArgument("patience must be in [0, max_epochs]");
    if (steps_per_epoch < 1) throw InvalidArgument("steps_per_epoch must be >= 1");
    if (schedule != "cosine" && schedule != "step") throw InvalidArgument("unknown schedule");
    if (codebook_update != "ema" && codebook_update != "gradient")
      throw InvalidArgument("unknown codebook_update mode");
    if (loss_weights.bce < 0 || loss_weights.dice < 0 || loss_weights.vq < 0 || loss_weights.commit < 0)
      throw InvalidArgument("loss weights must be >= 0");
  }

  double lr_at(int epoch) const {
    return schedule == "cosine" ? cosine_lr(epoch, max_epochs, lr_init, lr_min)
                                : step_lr(epoch, step_period, lr_init, step_factor);
  }
};

inline nlohmann::json train_config_to_json(const TrainConfig& c) {
  nlohmann::json j;
  j["lr_init"] = c.lr_init;
  j["lr_min"] = c.lr_min;
  j["optimizer"] = c.optimizer;
  j["weight_decay"] = c.weight_decay;
  j["clip_norm"] = c.clip_norm;
  j["max_epochs"] = c.max_epochs;
  j["patience"] = c.patience;
  j["schedule"] = c.schedule;
  j["step_factor"] = c.step_factor;
  j["step_period"] = c.step_period;
  j["loss_weights"] = {{"bce", c.loss_weights.bce},
                       {"dice", c.loss_weights.dice},
                       {"vq", c.loss_weights.vq},
                       {"commit", c.loss_weights.commit}};
  j["seed"] = c.seed;
  j["steps_per_epoch"] = c.steps_per_epoch;
  j["reverse_attention"] = c.reverse_attention;
  j["codebook_update"] = c.codebook_update;
  j["ema_decay"] = c.ema_decay;
  j["threads"] = c.threads;
  return j;
}

// Strict parse: unknown keys are rejected so config-file typos fail loudly.
inline TrainConfig train_config_from_json(const nlohmann::json& j) {
  static const std::vector<std::string> known = {
      "lr_init",     "lr_min",         "optimizer", "weight_decay",      "clip_norm",
      "max_epochs",  "patience",       "schedule",  "step_factor",       "step_period",
      "loss_weights", "seed",          "steps_per_epoch", "reverse_attention", "codebook_update",
      "ema_decay",   "threads"};
  for (const auto& [key, _] : j.items()) {
    if (std::find(known.begin(), known.end(), key) == known.end())
      throw InvalidArgument("unknown train config key: " + key);
  }
  TrainConfig c;
  c.lr_init = j.value("lr_init", c.lr_init);
  c.lr_min = j.value("lr_min", c.lr_min);
  c.optimizer = j.value("optimizer", c.optimizer);
  c.weight_decay = j.value("weight_decay", c.weight_decay);
  c.clip_norm = j.value("clip_norm", c.clip_norm);
  c.max_epochs = j.value("max_epochs", c.max_epochs);
  c.patience = j.value("patience", c.patience);
  c.schedule = j.value("schedule", c.schedule);
  c.step_factor = j.value("step_factor", c.step_factor);
  c.step_period = j.value("step_period", c.step_period);
  if (j.contains("loss_weights")) {
    const auto& w = j.at("loss_weights");
    for (const auto& [key, _] : w.items())
      if (key != "bce" && key != "dice" && key != "vq" && key != "commit")
        throw InvalidArgument("unknown loss weight: " + key);
    c.loss_weights.bce = w.value("bce", c.loss_weights.bce);
    c.loss_weights.dice = w.value("dice", c.loss_weights.dice);
    c.loss_weights.vq = w.value("vq", c.loss_weights.vq);
    c.loss_weights.commit = w.value("commit", c.loss_weights.commit);
  }
  c.seed = j.value("seed", c.seed);
  c.steps_per_epoch = j.value("steps_per_epoch", c.steps_per_epoch);
  c.reverse_attention = j.value("reverse_attention", c.reverse_attention);
  c.codebook_update = j.value("codebook_update", c.codebook_update);
  c.ema_decay = j.value("ema_decay", c.ema_decay);
  c.threads = j.value("threads", c.threads);
  c.validate();
  return c;
}

struct EpochRecord {
  int epoch = 0;
  double train_loss = 0.0;
  double val_dice = 0.0;
  double lr = 0.0;
  double perplexity = 1.0;
  std::string phase;  // empty for single nets
};

struct TrainResult {
  double best_val_dice = 0.0;
  int best_epoch = -1;
  int epochs_run = 0;
  std::vector<double> val_dice_trace;
  std::vector<double> train_loss_trace;
  std::vector<EpochRecord> records;
};

namespace detail {

struct Snapshot {
  std::vector<float> params;
  std::vector<float> codebook;
  std::vector<float> usage;
};

inline Snapshot take_snapshot(const SynergyUNet<float>& net) {
  return {net.params().values(), net.codebook().embeddings, net.codebook().usage_ema};
}

inline void restore_snapshot(SynergyUNet<float>& net, const Snapshot& s) {
  net.params().values() = s.params;
  net.codebook().embeddings = s.codebook;
  net.codebook().usage_ema = s.usage;
}

// Runs workers over [0, count) with a fixed mapping; results land in
// caller-owned per-index buffers, so scheduling cannot change the outcome.
template <class Fn>
inline void parallel_for_slots(int count, int max_threads, Fn&& fn) {
  if (max_threads <= 1 || count <= 1) {
    for (int i = 0; i < count; ++i) fn(i);
    return;
  }
  std::vector<std::thread> pool;
  std::atomic<int> next{0};
  const int n_threads = std::min(count, max_threads);
  pool.reserve(static_cast<std::size_t>(n_threads));
  for (int t = 0; t < n_threads; ++t)
    pool.emplace_back([&]() {
      for (;;) {
        const int i = next.fetch_add(1);
        if (i >= count) return;
        fn(i);
      }
    });
  for (auto& th : pool) th.join();
}

}  // namespace detail

// One optimization phase over a single network. Validation runs a sliding
// window over full val volumes and scores hard Dice at threshold 0.5;
// the best-epoch snapshot is restored into the net before returning.
inline TrainResult train_single_net(SynergyUNet<float>& net, std::vector<TrainCase>& train_cases,
                                    const std::vector<TrainCase>& val_cases, const TrainConfig& cfg,
                                    Rng& rng, const std::string& phase,
                                    const std::function<void(const EpochRecord&)>& on_epoch) {
  cfg.validate();
  if (train_cases.empty()) throw NoTrainingCases();
  const PlanConfig& plan = net.plan();
  const int B = plan.batch_size;
  const bool ema_mode = cfg.codebook_update == "ema";
  const int hw = static_cast<int>(std::thread::hardware_concurrency());
  const int max_threads = cfg.threads > 0 ? cfg.threads : std::max(1, std::min(B, hw > 0 ? hw : 1));

  const std::size_t n_params = net.params().size();
  const std::size_t n_cb = net.codebook().embeddings.size();
  AdamW<float> opt(ema_mode ? n_params : n_params + n_cb);
  opt.weight_decay = cfg.weight_decay;

  std::vector<Workspace<float>> ws(static_cast<std::size_t>(B));
  std::vector<PatchSample> samples(static_cast<std::size_t>(B));
  std::vector<SynergyStats<float>> stats(static_cast<std::size_t>(B));
  std::vector<LossSums> sums(static_cast<std::size_t>(B));
  std::vector<std::vector<float>> slot_grads(static_cast<std::size_t>(B));
  std::vector<std::vector<float>> slot_cb_grads(static_cast<std::size_t>(B));
  std::vector<float> grad(n_params), cb_grad;
  std::vector<float> opt_params, opt_grads;
  if (!ema_mode) cb_grad.resize(n_cb);

  TrainResult result;
  result.best_val_dice = -1.0;
  detail::Snapshot best;
  Tensor5<float> last_z;
  int since_best = 0;

  const auto& validation_set = val_cases.empty() ? train_cases : val_cases;

  for (int epoch = 0; epoch < cfg.max_epochs; ++epoch) {
    const double lr = cfg.lr_at(epoch);
    double loss_acc = 0.0, perp_acc = 0.0;

    for (int step = 0; step < cfg.steps_per_epoch; ++step) {
      for (int s = 0; s < B; ++s) {
        const std::size_t ci = static_cast<std::size_t>(rng.uniform_below(train_cases.size()));
        samples[static_cast<std::size_t>(s)] = sample_patch(train_cases[ci], plan.patch_size, rng);
      }
      detail::parallel_for_slots(B, max_threads, [&](int s) {
        const auto si = static_cast<std::size_t>(s);
        stats[si] = net.forward(samples[si].input, ws[si]);
        sums[si] = accumulate_loss_sums(ws[si].logits, samples[si].target);
      });

      LossSums global;
      double vq_mean = 0.0, commit_mean = 0.0;
      VqBatchStats<float> vq_stats;
      vq_stats.reset(net.codebook().K, net.codebook().D);
      for (int s = 0; s < B; ++s) {
        const auto si = static_cast<std::size_t>(s);
        global = global + sums[si];
        vq_mean += stats[si].vq_loss / B;
        commit_mean += stats[si].commit_loss / B;
        vq_stats.accumulate(ws[si].bottleneck.z, ws[si].bottleneck.vq.indices);
      }
      const LossParts seg = loss_from_sums(global, cfg.loss_weights.bce, cfg.loss_weights.dice);
      const double total = seg.total + cfg.loss_weights.vq * vq_mean + cfg.loss_weights.commit * commit_mean;
      if (!std::isfinite(total))
        throw NonFiniteLoss("non-finite loss at epoch " + std::to_string(epoch) + " step " +
                            std::to_string(step) + " (bce=" + std::to_string(seg.bce) +
                            ", dice=" + std::to_string(seg.dice) + ", vq=" + std::to_string(vq_mean) + ")");
      loss_acc += total;
      perp_acc += detail::perplexity_from_counts(vq_stats.counts, vq_stats.total);

      detail::parallel_for_slots(B, max_threads, [&](int s) {
        const auto si = static_cast<std::size_t>(s);
        slot_grads[si].assign(n_params, 0.0f);
        if (!ema_mode) slot_cb_grads[si].assign(n_cb, 0.0f);
        Tensor5<float> d_logits;
        bce_dice_backward(ws[si].logits, samples[si].target, global, cfg.loss_weights.bce,
                          cfg.loss_weights.dice, d_logits);
        net.backward(d_logits, ws[si], slot_grads[si].data(),
                     ema_mode ? nullptr : slot_cb_grads[si].data(),
                     static_cast<float>(cfg.loss_weights.commit / B),
                     static_cast<float>(cfg.loss_weights.vq / B));
      });

      std::fill(grad.begin(), grad.end(), 0.0f);
      for (int s = 0; s < B; ++s)
        for (std::size_t i = 0; i < n_params; ++i) grad[i] += slot_grads[static_cast<std::size_t>(s)][i];
      if (!ema_mode) {
        std::fill(cb_grad.begin(), cb_grad.end(), 0.0f);
        for (int s = 0; s < B; ++s)
          for (std::size_t i = 0; i < n_cb; ++i) cb_grad[i] += slot_cb_grads[static_cast<std::size_t>(s)][i];
      }

      if (ema_mode) {
        clip_global_norm<float>({grad.data()}, {n_params}, cfg.clip_norm);
        opt.step(net.params().data(), grad.data(), n_params, lr);
        codebook_update(net.codebook(), vq_stats);
      } else {
        clip_global_norm<float>({grad.data(), cb_grad.data()}, {n_params, n_cb}, cfg.clip_norm);
        // Optimize net parameters and codebook as one concatenated vector.
        opt_params.assign(net.params().values().begin(), net.params().values().end());
        opt_params.insert(opt_params.end(), net.codebook().embeddings.begin(),
                          net.codebook().embeddings.end());
        opt_grads.assign(grad.begin(), grad.end());
        opt_grads.insert(opt_grads.end(), cb_grad.begin(), cb_grad.end());
        opt.step(opt_params.data(), opt_grads.data(), opt_params.size(), lr);
        std::copy(opt_params.begin(), opt_params.begin() + static_cast<std::ptrdiff_t>(n_params),
                  net.params().data());
        std::copy(opt_params.begin() + static_cast<std::ptrdiff_t>(n_params), opt_params.end(),
                  net.codebook().embeddings.begin());
        // usage still tracked for diagnostics
        for (int k = 0; k < net.codebook().K; ++k) {
          const double frac = vq_stats.total
                                  ? static_cast<double>(vq_stats.counts[static_cast<std::size_t>(k)]) /
                                        static_cast<double>(vq_stats.total)
                                  : 0.0;
          auto& u = net.codebook().usage_ema[static_cast<std::size_t>(k)];
          u = static_cast<float>(net.codebook().decay * u + (1.0 - net.codebook().decay) * frac);
        }
      }
      last_z = ws[0].bottleneck.z;
    }

    if (ema_mode && last_z.size() > 0) reseed_dead_codes(net.codebook(), last_z, rng);

    // Validation: mean hard Dice at 0.5 over full volumes.
    double val_dice = 0.0;
    {
      const PatchPredictor fn = Model::patch_fn(net);
      for (const auto& vc : validation_set) {
        std::vector<const Volume*> chans;
        for (const auto& ch : vc.channels) chans.push_back(&ch);
        const Volume prob = sliding_window_predict(chans, plan.patch_size, fn);
        LabelMask pred(prob.shape);
        pred.spacing = prob.spacing;
        for (std::size_t i = 0; i < prob.size(); ++i) pred.data[i] = prob.data[i] > 0.5f ? 1 : 0;
        val_dice += overlap_metrics(pred, vc.mask).dice;
      }
      val_dice /= static_cast<double>(validation_set.size());
    }

    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_loss = loss_acc / cfg.steps_per_epoch;
    rec.val_dice = val_dice;
    rec.lr = lr;
    rec.perplexity = perp_acc / cfg.steps_per_epoch;
    rec.phase = phase;
    if (on_epoch) on_epoch(rec);
    result.records.push_back(rec);
    result.val_dice_trace.push_back(val_dice);
    result.train_loss_trace.push_back(rec.train_loss);
    result.epochs_run = epoch + 1;

    if (val_dice > result.best_val_dice) {
      result.best_val_dice = val_dice;
      result.best_epoch = epoch;
      best = detail::take_snapshot(net);
      since_best = 0;
    } else {
      ++since_best;
      if (since_best > cfg.patience) break;
    }
  }

  if (result.best_epoch >= 0) detail::restore_snapshot(net, best);
  return result;
}

namespace detail {

inline TrainCase load_train_case(const ManifestCase& mc, bool binarize) {
  const LoadedCase lc = load_case(mc.volume_path, mc.mask_path, binarize);
  if (!lc.mask) throw NoTrainingCases("case lacks a mask: " + mc.id);
  TrainCase t;
  t.id = mc.id;
  t.channels.push_back(normalize_intensity(lc.volume));
  t.mask = *lc.mask;
  t.rebuild_fg_cache();
  return t;
}

inline TrainCase downsample_case(const TrainCase& c, const Vec3i& scale) {
  TrainCase out;
  out.id = c.id;
  Vec3i target;
  for (int a = 0; a < 3; ++a) target[a] = std::max(1, c.mask.shape[a] / std::max(1, scale[a]));
  for (const auto& ch : c.channels) out.channels.push_back(resample_to_shape(ch, target));
  out.mask = resample_to_shape(c.mask, target);
  out.rebuild_fg_cache();
  return out;
}

}  // namespace detail

// Full training workflow: loads cases, trains (two phases for cascades),
// writes a JSONL log, and returns the best model plus its result summary.
inline std::pair<Model, TrainResult> train(const DatasetManifest& manifest, const PlanConfig& plan,
                                           const TrainConfig& cfg, const std::string& log_path = "",
                                           bool binarize = false) {
  cfg.validate();
  plan.validate();

  std::vector<TrainCase> train_cases, val_cases;
  for (const auto& id : manifest.ids_in_split(Split::train))
    train_cases.push_back(detail::load_train_case(manifest.case_by_id(id), binarize));
  for (const auto& id : manifest.ids_in_split(Split::val))
    val_cases.push_back(detail::load_train_case(manifest.case_by_id(id), binarize));
  if (train_cases.empty()) throw NoTrainingCases();

  std::ofstream log;
  if (!log_path.empty()) {
    log.open(log_path, std::ios::trunc);
    if (!log) throw IOFailure("cannot open log: " + log_path);
  }
  auto on_epoch = [&](const EpochRecord& r) {
    if (!log.is_open()) return;
    nlohmann::json j;
    j["epoch"] = r.epoch;
    j["train_loss"] = r.train_loss;
    j["val_dice"] = r.val_dice;
    j["lr"] = r.lr;
    j["perplexity"] = r.perplexity;
    if (!r.phase.empty()) j["phase"] = r.phase;
    log << j.dump() << "\n";
    log.flush();
  };

  Model model = Model::build(plan, cfg.seed, cfg.reverse_attention, cfg.ema_decay);
  model.train_config_echo = train_config_to_json(cfg);
  Rng rng(cfg.seed);
  TrainResult result;

  if (plan.variant == Variant::cascade3d) {
    std::vector<TrainCase> low_train, low_val;
    for (const auto& c : train_cases) low_train.push_back(detail::downsample_case(c, plan.lowres_scale));
    for (const auto& c : val_cases) low_val.push_back(detail::downsample_case(c, plan.lowres_scale));
    train_single_net(*model.lowres, low_train, low_val, cfg, rng, "lowres", on_epoch);

    // Attach the upsampled low-resolution prediction as a second channel.
    const PatchPredictor low_fn = Model::patch_fn(*model.lowres);
    auto add_prior = [&](TrainCase& c, const TrainCase& low) {
      std::vector<const Volume*> chans;
      for (const auto& ch : low.channels) chans.push_back(&ch);
      const Volume low_prob = sliding_window_predict(chans, plan.patch_size, low_fn);
      c.channels.push_back(low_prob.shape == c.mask.shape ? low_prob
                                                          : resample_to_shape(low_prob, c.mask.shape));
    };
    for (std::size_t i = 0; i < train_cases.size(); ++i) add_prior(train_cases[i], low_train[i]);
    for (std::size_t i = 0; i < val_cases.size(); ++i) add_prior(val_cases[i], low_val[i]);

    result = train_single_net(*model.primary, train_cases, val_cases, cfg, rng, "fullres", on_epoch);
  } else if (plan.variant == Variant::lowres3d) {
    std::vector<TrainCase> low_train, low_val;
    for (const auto& c : train_cases) low_train.push_back(detail::downsample_case(c, plan.lowres_scale));
    for (const auto& c : val_cases) low_val.push_back(detail::downsample_case(c, plan.lowres_scale));
    result = train_single_net(*model.primary, low_train, low_val, cfg, rng, "", on_epoch);
  } else {
    result = train_single_net(*model.primary, train_cases, val_cases, cfg, rng, "", on_epoch);
  }

  model.epoch = result.best_epoch;
  model.best_val_dice = result.best_val_dice;
  return {std::move(model), std::move(result)};
}

}  // namespace synseg

#endif
