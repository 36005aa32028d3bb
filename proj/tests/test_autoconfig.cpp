#include <catch2/catch_amalgamated.hpp>

#include "synseg/fingerprint.hpp"
#include "synseg/plan.hpp"
#include "synseg/raw3d.hpp"
#include "synseg/rng.hpp"
#include "test_util.hpp"

using namespace synseg;

namespace {

// Writes a constant-intensity case whose mask covers the lower half along z.
void write_case(const TempDir& tmp, DatasetManifest& m, const std::string& id, Vec3i shape,
                float value, Vec3d spacing = {1, 1, 1}) {
  Volume v(shape, value);
  v.spacing = spacing;
  LabelMask mask(shape);
  mask.spacing = spacing;
  for (int z = 0; z < shape[2] / 2; ++z)
    for (int y = 0; y < shape[1]; ++y)
      for (int x = 0; x < shape[0]; ++x) mask.at(x, y, z) = 1;
  write_raw3d(tmp.str(id + "_v.raw3d"), v);
  write_raw3d(tmp.str(id + "_m.raw3d"), mask);
  m.cases.push_back({id, tmp.str(id + "_v.raw3d"), tmp.str(id + "_m.raw3d")});
  m.split[id] = Split::train;
}

DatasetFingerprint fp_with_shape(Vec3i median) {
  DatasetFingerprint fp;
  fp.median_shape = median;
  fp.median_spacing = {1, 1, 1};
  fp.intensity_p0_5 = 0.0;
  fp.intensity_p99_5 = 1.0;
  fp.intensity_mean = 0.5;
  fp.intensity_std = 0.25;
  fp.foreground_fraction = 0.2;
  fp.n_cases = 5;
  return fp;
}

MemoryBudget bytes_budget(std::int64_t bytes) {
  MemoryBudget b;
  b.bytes_available = bytes;
  b.safety_factor = 1.0;
  return b;
}

}  // namespace

TEST_CASE("fingerprint of constant half-foreground cases") {
  TempDir tmp("fp1");
  DatasetManifest m;
  write_case(tmp, m, "a", {16, 16, 8}, 5.0f);
  write_case(tmp, m, "b", {16, 16, 8}, 5.0f);
  const DatasetFingerprint fp = fingerprint_dataset(m);
  REQUIRE(fp.intensity_mean == Catch::Approx(5.0));
  REQUIRE(fp.intensity_std == Catch::Approx(0.0).margin(1e-9));
  REQUIRE(fp.foreground_fraction == Catch::Approx(0.5));
  REQUIRE(fp.intensity_p0_5 == Catch::Approx(5.0));
  REQUIRE(fp.intensity_p99_5 == Catch::Approx(5.0));
  REQUIRE(fp.n_cases == 2);
}

TEST_CASE("fingerprint medians") {
  SECTION("identical shapes give that shape") {
    TempDir tmp("fp2");
    DatasetManifest m;
    for (int i = 0; i < 3; ++i) write_case(tmp, m, "c" + std::to_string(i), {32, 32, 16}, 1.0f);
    REQUIRE(fingerprint_dataset(m).median_shape == Vec3i{32, 32, 16});
  }

  SECTION("z dims {10,20,80} give median 20") {
    TempDir tmp("fp3");
    DatasetManifest m;
    write_case(tmp, m, "a", {16, 16, 10}, 1.0f);
    write_case(tmp, m, "b", {16, 16, 20}, 1.0f);
    write_case(tmp, m, "c", {16, 16, 80}, 1.0f);
    REQUIRE(fingerprint_dataset(m).median_shape[2] == 20);
  }
}

TEST_CASE("fingerprint error cases") {
  TempDir tmp("fp4");
  DatasetManifest empty;
  REQUIRE_THROWS_AS(fingerprint_dataset(empty), NoTrainingCases);

  DatasetManifest no_fg;
  Volume v({8, 8, 8}, 1.0f);
  LabelMask mask({8, 8, 8});  // all background
  write_raw3d(tmp.str("v.raw3d"), v);
  write_raw3d(tmp.str("m.raw3d"), mask);
  no_fg.cases.push_back({"a", tmp.str("v.raw3d"), tmp.str("m.raw3d")});
  no_fg.split["a"] = Split::train;
  REQUIRE_THROWS_AS(fingerprint_dataset(no_fg), NoForegroundVoxels);
}

TEST_CASE("planner picks full-resolution whole-volume patches when memory allows") {
  const auto plan = plan_configuration(fp_with_shape({32, 32, 16}), bytes_budget(8LL << 30));
  REQUIRE(plan.variant == Variant::fullres3d);
  REQUIRE(plan.patch_size == Vec3i{32, 32, 16});
  REQUIRE(plan.batch_size == 4);
  REQUIRE(plan.n_stages == 3);
  REQUIRE(plan.channels_per_stage == std::vector<int>{16, 32, 64});
}

TEST_CASE("budget pressure reduces batch first, then halves the longest axis (x wins ties)") {
  const DatasetFingerprint fp = fp_with_shape({64, 64, 32});
  // full patch (64,64,32), 4 stages -> 2,785,280 activations; estimate = that x4 x6 per item
  const double per_item = 4.0 * 2785280 * 6.0;

  auto plan = plan_configuration(fp, bytes_budget(static_cast<std::int64_t>(per_item * 4) + 1));
  REQUIRE(plan.batch_size == 4);
  REQUIRE(plan.patch_size == Vec3i{64, 64, 32});

  plan = plan_configuration(fp, bytes_budget(static_cast<std::int64_t>(per_item * 2) + 1));
  REQUIRE(plan.batch_size == 2);
  REQUIRE(plan.patch_size == Vec3i{64, 64, 32});

  plan = plan_configuration(fp, bytes_budget(static_cast<std::int64_t>(per_item) + 1));
  REQUIRE(plan.batch_size == 1);
  REQUIRE(plan.patch_size == Vec3i{64, 64, 32});

  // Below one full-patch item: halve x (ties x before y before z).
  plan = plan_configuration(fp, bytes_budget(static_cast<std::int64_t>(50e6)));
  REQUIRE(plan.batch_size == 1);
  REQUIRE(plan.patch_size == Vec3i{32, 64, 32});

  // Next squeeze halves the now-longest y axis.
  plan = plan_configuration(fp, bytes_budget(static_cast<std::int64_t>(20e6)));
  REQUIRE(plan.patch_size == Vec3i{32, 32, 32});
}

TEST_CASE("infeasible floor raises BudgetInfeasible") {
  REQUIRE_THROWS_AS(plan_configuration(fp_with_shape({32, 32, 16}), bytes_budget(100000)),
                    BudgetInfeasible);
}

TEST_CASE("cascade variant triggers below 25% patch coverage") {
  // Big median, small budget: patch shrinks far below median volume.
  const DatasetFingerprint fp = fp_with_shape({128, 128, 64});
  const auto plan = plan_configuration(fp, bytes_budget(static_cast<std::int64_t>(30e6)));
  const double coverage = static_cast<double>(volume_of(plan.patch_size)) /
                          static_cast<double>(volume_of(fp.median_shape));
  REQUIRE(coverage < 0.25);
  REQUIRE(plan.variant == Variant::cascade3d);
  REQUIRE(plan.lowres_scale == Vec3i{2, 2, 1});  // axes > 64 downsampled
}

TEST_CASE("memory estimate follows the analytic formula") {
  PlanConfig p;
  p.patch_size = {8, 8, 8};
  p.batch_size = 1;
  p.n_stages = 1;
  p.channels_per_stage = {16};
  p.codebook_size = 256;
  p.latent_dim = 64;
  p.attention_heads = 4;

  SECTION("single stage closed form") {
    REQUIRE(estimate_memory(p) == Catch::Approx(4.0 * 512 * 16 * 6));  // 196,608
  }

  SECTION("doubling batch doubles the estimate exactly") {
    const double one = estimate_memory(p);
    p.batch_size = 2;
    REQUIRE(estimate_memory(p) == Catch::Approx(2.0 * one));
  }

  SECTION("halving one patch axis halves the single-stage term") {
    const double full = estimate_memory(p);
    p.patch_size = {4, 8, 8};
    REQUIRE(estimate_memory(p) == Catch::Approx(full / 2.0));
  }
}

TEST_CASE("default plan is fingerprint-independent apart from median clipping") {
  SECTION("large median keeps the fixed constants") {
    const auto plan = default_plan(fp_with_shape({256, 256, 80}));
    REQUIRE(plan.variant == Variant::fullres3d);
    REQUIRE(plan.patch_size == Vec3i{128, 128, 64});
    REQUIRE(plan.batch_size == 2);
    REQUIRE(plan.n_stages == 5);
    REQUIRE(plan.channels_per_stage == std::vector<int>{16, 32, 64, 128, 256});
    REQUIRE(plan.codebook_size == 256);
    REQUIRE(plan.latent_dim == 64);
    REQUIRE(plan.attention_heads == 4);
  }

  SECTION("small median clips the patch") {
    const auto plan = default_plan(fp_with_shape({32, 32, 16}));
    REQUIRE(plan.patch_size == Vec3i{32, 32, 16});
  }

  SECTION("everything except median_shape is ignored") {
    Rng rng(12);
    for (int i = 0; i < 20; ++i) {
      DatasetFingerprint fa = fp_with_shape({48, 40, 24});
      DatasetFingerprint fb = fa;
      fb.intensity_mean = rng.normal(100, 20);
      fb.intensity_std = rng.uniform(0.1, 5.0);
      fb.intensity_p0_5 = -rng.uniform(0, 10);
      fb.intensity_p99_5 = fb.intensity_p0_5 + rng.uniform(0.1, 300.0);
      fb.foreground_fraction = rng.uniform(0.0, 1.0);
      fb.n_cases = static_cast<int>(rng.uniform_int(1, 500));
      fb.median_spacing = {rng.uniform(0.3, 3.0), rng.uniform(0.3, 3.0), rng.uniform(0.3, 3.0)};
      REQUIRE(plan_to_json(default_plan(fa)) == plan_to_json(default_plan(fb)));
    }
  }
}

TEST_CASE("planner properties over randomized fingerprints") {
  Rng rng(777);
  int emitted = 0;
  for (int trial = 0; trial < 60; ++trial) {
    DatasetFingerprint fp = fp_with_shape({static_cast<int>(rng.uniform_int(8, 160)),
                                           static_cast<int>(rng.uniform_int(8, 160)),
                                           static_cast<int>(rng.uniform_int(8, 120))});
    MemoryBudget budget;
    budget.bytes_available = static_cast<std::int64_t>(rng.uniform(1e6, 16e9));
    budget.safety_factor = rng.uniform(0.5, 1.0);
    PlanConfig plan;
    try {
      plan = plan_configuration(fp, budget);
    } catch (const BudgetInfeasible&) {
      continue;
    }
    ++emitted;

    // determinism: byte-identical JSON on rerun
    REQUIRE(plan_to_json(plan_configuration(fp, budget)).dump() == plan_to_json(plan).dump());

    // divisibility invariant
    const Vec3i prod = plan.pooling_product();
    for (int a = 0; a < 3; ++a) REQUIRE(plan.patch_size[a] % prod[a] == 0);

    // budget invariant
    REQUIRE(estimate_memory(plan) <= budget.effective_bytes());

    REQUIRE_NOTHROW(plan.validate());
  }
  REQUIRE(emitted > 20);
}

TEST_CASE("plan json round trip") {
  const auto plan = plan_configuration(fp_with_shape({40, 56, 24}), bytes_budget(1LL << 30));
  const auto j = plan_to_json(plan);
  const auto back = plan_from_json(j);
  REQUIRE(plan_to_json(back) == j);
}
