#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "synseg/infer.hpp"
#include "synseg/optim.hpp"
#include "synseg/phantom.hpp"
#include "synseg/sampling.hpp"
#include "synseg/train.hpp"
#include "test_util.hpp"

using namespace synseg;

namespace {

PlanConfig small_plan(Vec3i patch = {16, 16, 8}, int batch = 2) {
  PlanConfig plan;
  plan.patch_size = patch;
  plan.batch_size = batch;
  plan.n_stages = 2;
  plan.channels_per_stage = {4, 8};
  plan.pooling_per_axis_per_stage = {{1, 1, 1}};
  plan.codebook_size = 8;
  plan.latent_dim = 8;
  plan.attention_heads = 2;
  plan.validate();
  return plan;
}

TrainCase phantom_case(Vec3i grid, std::uint64_t seed) {
  PhantomSpec spec;
  spec.grid_shape = grid;
  spec.noise_sigma = 0.05;
  spec.seed = seed;
  auto [vol, mask] = generate_phantom(spec);
  TrainCase c;
  c.id = "p" + std::to_string(seed);
  c.channels.push_back(normalize_intensity(vol));
  c.mask = mask;
  c.rebuild_fg_cache();
  return c;
}

TrainConfig quick_config() {
  TrainConfig cfg;
  cfg.max_epochs = 3;
  cfg.patience = 3;
  cfg.steps_per_epoch = 2;
  cfg.lr_init = 1e-3;
  cfg.threads = 1;
  return cfg;
}

}  // namespace

TEST_CASE("cosine schedule endpoints and midpoint") {
  TrainConfig cfg;
  REQUIRE(cfg.lr_at(0) == Catch::Approx(1e-4));
  REQUIRE(cfg.lr_at(cfg.max_epochs) == Catch::Approx(1e-6));
  REQUIRE(cfg.lr_at(cfg.max_epochs / 2) == Catch::Approx((1e-4 + 1e-6) / 2.0));
}

TEST_CASE("step schedule multiplies every period") {
  TrainConfig cfg;
  cfg.schedule = "step";
  cfg.step_factor = 0.5;
  cfg.step_period = 10;
  REQUIRE(cfg.lr_at(0) == Catch::Approx(1e-4));
  REQUIRE(cfg.lr_at(9) == Catch::Approx(1e-4));
  REQUIRE(cfg.lr_at(10) == Catch::Approx(0.5e-4));
  REQUIRE(cfg.lr_at(25) == Catch::Approx(0.25e-4));
}

TEST_CASE("patch sampler honors the foreground/uniform split") {
  Rng rng(55);

  SECTION("all-background masks fall back to uniform sampling") {
    TrainCase c;
    c.channels.push_back(Volume({16, 16, 8}, 0.0f));
    c.mask = LabelMask({16, 16, 8});
    c.rebuild_fg_cache();
    for (int i = 0; i < 50; ++i) {
      const PatchSample s = sample_patch(c, {8, 8, 4}, rng);
      REQUIRE_FALSE(s.fg_centered);
    }
  }

  SECTION("whole-volume patch is the identity crop") {
    TrainCase c = phantom_case({16, 16, 8}, 1);
    const PatchSample s = sample_patch(c, {16, 16, 8}, rng);
    const float* p = s.input.plane(0, 0);
    for (int z = 0; z < 8; ++z)
      for (int y = 0; y < 16; ++y)
        for (int x = 0; x < 16; ++x) REQUIRE(*p++ == c.channels[0].at(x, y, z));
  }

  SECTION("foreground-centered fraction is 0.5 within 0.03 over 10^4 samples") {
    TrainCase c = phantom_case({16, 16, 8}, 2);
    int fg = 0;
    const int n = 10000;
    for (int i = 0; i < n; ++i) {
      const PatchSample s = sample_patch(c, {8, 8, 4}, rng);
      fg += s.fg_centered ? 1 : 0;
      if (s.fg_centered) {
        // the sampled window must contain foreground
        bool any = false;
        for (float t : s.target.v) any = any || t > 0;
        REQUIRE(any);
      }
    }
    REQUIRE(std::abs(fg / static_cast<double>(n) - 0.5) < 0.03);
  }

  SECTION("volumes smaller than the patch are mirror padded") {
    TrainCase c = phantom_case({8, 8, 8}, 3);
    const PatchSample s = sample_patch(c, {16, 16, 8}, rng);
    REQUIRE(s.input.x == 16);
    REQUIRE(s.input.y == 16);
    for (float v : s.input.v) REQUIRE(std::isfinite(v));
  }
}

TEST_CASE("postprocessing keeps only the largest component") {
  Volume prob({10, 4, 2}, 0.0f);
  // component A: 6 voxels, component B: 2 voxels, separated in x
  for (int x = 0; x < 3; ++x)
    for (int y = 0; y < 2; ++y) prob.at(x, y, 0) = 0.9f;
  prob.at(8, 0, 0) = 0.95f;
  prob.at(9, 0, 0) = 0.95f;

  const LabelMask m = postprocess(prob, 0.5);
  REQUIRE(m.foreground_count() == 6);
  REQUIRE(m.at(8, 0, 0) == 0);

  SECTION("all below threshold stays empty") {
    Volume low({4, 4, 4}, 0.2f);
    REQUIRE(postprocess(low, 0.5).foreground_count() == 0);
  }

  SECTION("idempotent on the induced mask") {
    Volume as_prob(m.shape);
    for (std::size_t i = 0; i < m.size(); ++i) as_prob.data[i] = m.data[i] ? 1.0f : 0.0f;
    const LabelMask again = postprocess(as_prob, 0.5);
    REQUIRE(again.data == m.data);
  }
}

TEST_CASE("sliding window blending") {
  SECTION("volume equal to one patch matches the direct forward within 1e-6") {
    const PlanConfig plan = small_plan();
    SynergyUNet<float> net(plan, 1, 4);
    Volume vol({16, 16, 8});
    Rng rng(5);
    for (auto& v : vol.data) v = static_cast<float>(rng.normal());

    const Volume prob = sliding_window_predict({&vol}, plan.patch_size, Model::patch_fn(net));

    Workspace<float> ws;
    net.forward(tensor_from_volume<float>(vol), ws);
    const float* lp = ws.logits.plane(0, 0);
    for (int z = 0; z < 8; ++z)
      for (int y = 0; y < 16; ++y)
        for (int x = 0; x < 16; ++x)
          REQUIRE(prob.at(x, y, z) ==
                  Catch::Approx(sigmoid(static_cast<double>(*lp++))).margin(1e-6));
  }

  SECTION("constant-output predictor gives a constant probability volume") {
    Volume vol({20, 18, 12});
    auto fn = [](const Tensor5<float>& in) {
      Tensor5<float> logits(1, 1, in.z, in.y, in.x);
      std::fill(logits.v.begin(), logits.v.end(), 1.5f);
      return logits;
    };
    const Volume prob = sliding_window_predict({&vol}, {8, 8, 8}, fn);
    for (float p : prob.data) REQUIRE(p == Catch::Approx(sigmoid(1.5)).margin(1e-6));
  }

  SECTION("weight accumulation matches a brute-force recount, everywhere positive") {
    const Vec3i shape{48, 48, 24}, patch{32, 32, 16};
    const auto weights = sliding_window_weights(shape, patch);

    // independent recount
    auto starts = [](int dim, int p) {
      std::vector<int> s;
      for (int v = 0;; v += p / 2) {
        if (v + p >= dim) {
          s.push_back(dim - p);
          break;
        }
        s.push_back(v);
      }
      return s;
    };
    auto gauss = [](int p, int i) {
      const double sigma = p / 8.0, c = (p - 1) / 2.0;
      return std::exp(-0.5 * ((i - c) / sigma) * ((i - c) / sigma));
    };
    std::vector<double> oracle(static_cast<std::size_t>(volume_of(shape)), 0.0);
    for (int tz : starts(shape[2], patch[2]))
      for (int ty : starts(shape[1], patch[1]))
        for (int tx : starts(shape[0], patch[0]))
          for (int z = 0; z < patch[2]; ++z)
            for (int y = 0; y < patch[1]; ++y)
              for (int x = 0; x < patch[0]; ++x)
                oracle[static_cast<std::size_t>(tx + x) +
                       static_cast<std::size_t>(shape[0]) *
                           ((ty + y) + static_cast<std::size_t>(shape[1]) * (tz + z))] +=
                    gauss(patch[0], x) * gauss(patch[1], y) * gauss(patch[2], z);

    REQUIRE(weights.size() == oracle.size());
    for (std::size_t i = 0; i < oracle.size(); ++i) {
      REQUIRE(weights[i] > 0.0);
      REQUIRE(weights[i] == Catch::Approx(oracle[i]).epsilon(1e-12));
    }
  }
}

TEST_CASE("training runs descend on an overfittable problem") {
  std::vector<TrainCase> cases = {phantom_case({16, 16, 8}, 7)};
  const PlanConfig plan = small_plan({16, 16, 8}, 2);
  TrainConfig cfg = quick_config();
  cfg.max_epochs = 10;
  cfg.patience = 10;
  cfg.steps_per_epoch = 5;

  SynergyUNet<float> net(plan, 1, 0);
  Rng rng(cfg.seed);
  const TrainResult r = train_single_net(net, cases, {}, cfg, rng, "", nullptr);
  REQUIRE(r.epochs_run == 10);
  REQUIRE(std::isfinite(r.train_loss_trace.front()));
  REQUIRE(r.train_loss_trace.back() < r.train_loss_trace.front());
}

TEST_CASE("zero loss weights with zero decay leave parameters untouched") {
  std::vector<TrainCase> cases = {phantom_case({16, 16, 8}, 8)};
  const PlanConfig plan = small_plan({16, 16, 8}, 1);
  TrainConfig cfg = quick_config();
  cfg.max_epochs = 1;
  cfg.patience = 1;
  cfg.loss_weights = {0.0, 0.0, 0.0, 0.0};
  cfg.weight_decay = 0.0;
  cfg.codebook_update = "gradient";  // EMA moves the codebook regardless of the loss

  SynergyUNet<float> net(plan, 1, 3);
  const auto params_before = net.params().values();
  const auto codebook_before = net.codebook().embeddings;
  Rng rng(cfg.seed);
  train_single_net(net, cases, {}, cfg, rng, "", nullptr);
  REQUIRE(net.params().values() == params_before);
  REQUIRE(net.codebook().embeddings == codebook_before);
}

TEST_CASE("patience 0 stops after the first non-improving epoch") {
  std::vector<TrainCase> cases = {phantom_case({16, 16, 8}, 9)};
  const PlanConfig plan = small_plan({16, 16, 8}, 1);
  TrainConfig cfg = quick_config();
  cfg.max_epochs = 20;
  cfg.patience = 0;
  cfg.lr_init = 1e-30;  // effectively frozen -> val dice cannot improve
  cfg.lr_min = 1e-32;

  SynergyUNet<float> net(plan, 1, 1);
  Rng rng(cfg.seed);
  const TrainResult r = train_single_net(net, cases, {}, cfg, rng, "", nullptr);
  REQUIRE(r.epochs_run == 2);  // epoch 0 sets the best, epoch 1 fails to beat it
  REQUIRE(r.best_epoch == 0);
}

TEST_CASE("best epoch carries the maximum of the validation trace") {
  std::vector<TrainCase> cases = {phantom_case({16, 16, 8}, 10), phantom_case({16, 16, 8}, 11)};
  std::vector<TrainCase> val = {phantom_case({16, 16, 8}, 12)};
  const PlanConfig plan = small_plan({16, 16, 8}, 2);
  TrainConfig cfg = quick_config();
  cfg.max_epochs = 5;
  cfg.patience = 5;

  SynergyUNet<float> net(plan, 1, 5);
  Rng rng(cfg.seed);
  const TrainResult r = train_single_net(net, cases, val, cfg, rng, "", nullptr);
  double max_dice = -1;
  for (double d : r.val_dice_trace) max_dice = std::max(max_dice, d);
  REQUIRE(r.best_val_dice == max_dice);
  REQUIRE(r.val_dice_trace[static_cast<std::size_t>(r.best_epoch)] == max_dice);
}

TEST_CASE("training is deterministic given the seed") {
  TempDir tmp("det");
  PhantomSpec spec;
  spec.grid_shape = {16, 16, 8};
  spec.noise_sigma = 0.05;
  const DatasetManifest manifest = generate_corpus(5, spec, 3, tmp.str());

  PlanConfig plan = small_plan({16, 16, 8}, 2);
  TrainConfig cfg = quick_config();
  cfg.seed = 42;
  cfg.threads = 2;  // per-sample threading must not break determinism

  auto [m1, r1] = train(manifest, plan, cfg);
  auto [m2, r2] = train(manifest, plan, cfg);
  REQUIRE(r1.val_dice_trace == r2.val_dice_trace);
  REQUIRE(r1.train_loss_trace == r2.train_loss_trace);
  REQUIRE(m1.primary->params().values() == m2.primary->params().values());
}

TEST_CASE("train writes a parseable jsonl log") {
  TempDir tmp("log");
  PhantomSpec spec;
  spec.grid_shape = {16, 16, 8};
  const DatasetManifest manifest = generate_corpus(4, spec, 5, tmp.str());
  PlanConfig plan = small_plan({16, 16, 8}, 1);
  TrainConfig cfg = quick_config();
  cfg.max_epochs = 2;
  cfg.patience = 2;

  const std::string log_path = tmp.str("log.jsonl");
  auto [model, result] = train(manifest, plan, cfg, log_path);

  std::ifstream f(log_path);
  std::string line;
  int lines = 0;
  while (std::getline(f, line)) {
    const auto j = nlohmann::json::parse(line);
    REQUIRE(j.contains("epoch"));
    REQUIRE(j.contains("train_loss"));
    REQUIRE(j.contains("val_dice"));
    REQUIRE(j.contains("lr"));
    REQUIRE(j.contains("perplexity"));
    ++lines;
  }
  REQUIRE(lines == result.epochs_run);
}

TEST_CASE("cascade training produces a two-net model that predicts full volumes") {
  TempDir tmp("casc");
  PhantomSpec spec;
  spec.grid_shape = {16, 16, 8};
  const DatasetManifest manifest = generate_corpus(4, spec, 6, tmp.str());

  PlanConfig plan = small_plan({8, 8, 8}, 1);
  plan.variant = Variant::cascade3d;
  plan.lowres_scale = {2, 2, 1};
  TrainConfig cfg = quick_config();
  cfg.max_epochs = 1;
  cfg.patience = 1;
  cfg.steps_per_epoch = 1;

  auto [model, result] = train(manifest, plan, cfg);
  REQUIRE(model.lowres != nullptr);
  REQUIRE(model.primary->in_channels() == 2);

  const Volume vol = normalize_intensity(load_volume(manifest.cases[0].volume_path));
  const Volume prob = model.predict_volume(vol);
  REQUIRE(prob.shape == vol.shape);
  for (float p : prob.data) {
    REQUIRE(p >= 0.0f);
    REQUIRE(p <= 1.0f);
  }
}

TEST_CASE("train config json round trip and strictness") {
  TrainConfig cfg;
  cfg.lr_init = 5e-4;
  cfg.patience = 7;
  cfg.loss_weights.commit = 0.5;
  const auto j = train_config_to_json(cfg);
  const TrainConfig back = train_config_from_json(j);
  REQUIRE(back.lr_init == 5e-4);
  REQUIRE(back.patience == 7);
  REQUIRE(back.loss_weights.commit == 0.5);

  nlohmann::json bad = j;
  bad["learning_rate"] = 0.1;  // typo'd key
  REQUIRE_THROWS_AS(train_config_from_json(bad), InvalidArgument);

  nlohmann::json bad_nested = j;
  bad_nested["loss_weights"]["bse"] = 1.0;
  REQUIRE_THROWS_AS(train_config_from_json(bad_nested), InvalidArgument);
}

TEST_CASE("gradient clipping caps the global norm") {
  std::vector<float> g = {3.0f, 4.0f};  // norm 5
  const double norm = clip_global_norm<float>({g.data()}, {2}, 1.0);
  REQUIRE(norm == Catch::Approx(5.0));
  REQUIRE(g[0] == Catch::Approx(0.6f));
  REQUIRE(g[1] == Catch::Approx(0.8f));
}
