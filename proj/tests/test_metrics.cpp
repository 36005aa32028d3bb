#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "synseg/metrics.hpp"
#include "synseg/raw3d.hpp"
#include "synseg/rng.hpp"
#include "test_util.hpp"

using namespace synseg;

namespace {

// ---- independent brute-force oracles (no library internals) ----

struct OracleMetrics {
  double dice, iou, precision, recall;
};

OracleMetrics oracle_overlap(const LabelMask& pred, const LabelMask& gt) {
  double tp = 0, fp = 0, fn = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    if (pred.data[i] && gt.data[i]) ++tp;
    if (pred.data[i] && !gt.data[i]) ++fp;
    if (!pred.data[i] && gt.data[i]) ++fn;
  }
  OracleMetrics m{};
  if (tp + fp + fn == 0) {
    m.dice = m.iou = m.precision = m.recall = 1.0;
    return m;
  }
  m.dice = 2 * tp / (2 * tp + fp + fn);
  m.iou = tp / (tp + fp + fn);
  m.precision = tp + fp > 0 ? tp / (tp + fp) : 0.0;
  m.recall = tp + fn > 0 ? tp / (tp + fn) : 0.0;
  return m;
}

std::vector<Vec3i> oracle_boundary(const LabelMask& m) {
  std::vector<Vec3i> out;
  for (int z = 0; z < m.shape[2]; ++z)
    for (int y = 0; y < m.shape[1]; ++y)
      for (int x = 0; x < m.shape[0]; ++x) {
        if (!m.at(x, y, z)) continue;
        bool boundary = x == 0 || y == 0 || z == 0 || x == m.shape[0] - 1 || y == m.shape[1] - 1 ||
                        z == m.shape[2] - 1;
        if (!boundary)
          boundary = !m.at(x - 1, y, z) || !m.at(x + 1, y, z) || !m.at(x, y - 1, z) ||
                     !m.at(x, y + 1, z) || !m.at(x, y, z - 1) || !m.at(x, y, z + 1);
        if (boundary) out.push_back({x, y, z});
      }
  return out;
}

// exhaustive pairwise distances, no transform tricks
std::vector<double> oracle_directed(const std::vector<Vec3i>& from, const std::vector<Vec3i>& to,
                                    const Vec3d& sp) {
  std::vector<double> d;
  for (const auto& a : from) {
    double best = 1e300;
    for (const auto& b : to) {
      const double dx = (a[0] - b[0]) * sp[0];
      const double dy = (a[1] - b[1]) * sp[1];
      const double dz = (a[2] - b[2]) * sp[2];
      best = std::min(best, dx * dx + dy * dy + dz * dz);
    }
    d.push_back(std::sqrt(best));
  }
  return d;
}

double oracle_percentile(std::vector<double> v, double q) {
  std::sort(v.begin(), v.end());
  const double rank = q * static_cast<double>(v.size() - 1);
  const std::size_t lo = static_cast<std::size_t>(std::floor(rank));
  const std::size_t hi = std::min(lo + 1, v.size() - 1);
  return v[lo] + (rank - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

LabelMask random_mask(Vec3i shape, double p, Rng& rng, const Vec3d& spacing = {1, 1, 1}) {
  LabelMask m(shape);
  m.spacing = spacing;
  for (auto& v : m.data) v = rng.uniform() < p ? 1 : 0;
  return m;
}

LabelMask single_voxel_mask(Vec3i shape, Vec3i at, const Vec3d& spacing) {
  LabelMask m(shape);
  m.spacing = spacing;
  m.at(at[0], at[1], at[2]) = 1;
  return m;
}

}  // namespace

TEST_CASE("overlap metrics on hand examples") {
  SECTION("identical nonempty masks score 1 everywhere") {
    LabelMask a({4, 4, 4});
    a.at(1, 1, 1) = a.at(2, 1, 1) = 1;
    const auto m = overlap_metrics(a, a);
    REQUIRE(m.dice == 1.0);
    REQUIRE(m.iou == 1.0);
    REQUIRE(m.precision == 1.0);
    REQUIRE(m.recall == 1.0);
  }

  SECTION("disjoint nonempty masks score 0") {
    LabelMask a({4, 4, 4}), b({4, 4, 4});
    a.at(0, 0, 0) = 1;
    b.at(3, 3, 3) = 1;
    const auto m = overlap_metrics(a, b);
    REQUIRE(m.dice == 0.0);
    REQUIRE(m.iou == 0.0);
  }

  SECTION("pred {(0,0,0),(1,0,0)} vs gt {(0,0,0)}") {
    LabelMask pred({4, 4, 4}), gt({4, 4, 4});
    pred.at(0, 0, 0) = pred.at(1, 0, 0) = 1;
    gt.at(0, 0, 0) = 1;
    const auto m = overlap_metrics(pred, gt);
    REQUIRE(m.dice == Catch::Approx(2.0 / 3.0));
    REQUIRE(m.iou == Catch::Approx(0.5));
    REQUIRE(m.precision == Catch::Approx(0.5));
    REQUIRE(m.recall == 1.0);
  }

  SECTION("both empty convention") {
    LabelMask a({3, 3, 3}), b({3, 3, 3});
    const auto m = overlap_metrics(a, b);
    REQUIRE(m.dice == 1.0);
    REQUIRE(m.precision == 1.0);
  }

  SECTION("empty vs nonempty") {
    LabelMask empty({3, 3, 3}), full({3, 3, 3});
    full.at(1, 1, 1) = 1;
    const auto m = overlap_metrics(empty, full);
    REQUIRE(m.dice == 0.0);
    REQUIRE(m.precision == 0.0);
    REQUIRE(m.recall == 0.0);
  }

  SECTION("shape mismatch rejected") {
    LabelMask a({3, 3, 3}), b({3, 3, 2});
    REQUIRE_THROWS_AS(overlap_metrics(a, b), ShapeMismatch);
  }
}

TEST_CASE("surface distances on single-voxel masks") {
  SECTION("identical masks give all-zero distances") {
    LabelMask a({5, 5, 5});
    a.at(2, 2, 2) = a.at(3, 2, 2) = 1;
    const auto sd = surface_distances(a, a);
    for (double d : sd.d_pred_to_gt) REQUIRE(d == 0.0);
    for (double d : sd.d_gt_to_pred) REQUIRE(d == 0.0);
  }

  SECTION("unit spacing: voxels 3 apart have distance 3") {
    const auto pred = single_voxel_mask({6, 1, 1}, {0, 0, 0}, {1, 1, 1});
    const auto gt = single_voxel_mask({6, 1, 1}, {3, 0, 0}, {1, 1, 1});
    const auto sd = surface_distances(pred, gt);
    REQUIRE(sd.d_pred_to_gt == std::vector<double>{3.0});
    REQUIRE(sd.d_gt_to_pred == std::vector<double>{3.0});
  }

  SECTION("doubled x spacing doubles the distance") {
    const auto pred = single_voxel_mask({6, 1, 1}, {0, 0, 0}, {2, 1, 1});
    const auto gt = single_voxel_mask({6, 1, 1}, {3, 0, 0}, {2, 1, 1});
    const auto sd = surface_distances(pred, gt);
    REQUIRE(sd.d_pred_to_gt == std::vector<double>{6.0});
  }

  SECTION("empty masks raise EmptySurface") {
    LabelMask empty({4, 4, 4}), full({4, 4, 4});
    full.at(1, 1, 1) = 1;
    REQUIRE_THROWS_AS(surface_distances(empty, full), EmptySurface);
    REQUIRE_THROWS_AS(surface_distances(full, empty), EmptySurface);
  }
}

TEST_CASE("hd95 percentile semantics") {
  SECTION("all zeros") {
    SurfaceDistanceSet sd{{0, 0, 0}, {0, 0}};
    REQUIRE(hd95(sd) == 0.0);
  }

  SECTION("constant combined set") {
    SurfaceDistanceSet sd{{3.0}, {3.0}};
    REQUIRE(hd95(sd) == 3.0);
  }

  SECTION("1..100 gives the interpolated 95.05") {
    SurfaceDistanceSet sd;
    for (int i = 1; i <= 50; ++i) sd.d_pred_to_gt.push_back(i);
    for (int i = 51; i <= 100; ++i) sd.d_gt_to_pred.push_back(i);
    REQUIRE(hd95(sd) == Catch::Approx(95.05).margin(1e-12));
  }
}

TEST_CASE("assd arithmetic") {
  SECTION("identical masks") {
    LabelMask a({4, 4, 4});
    a.at(1, 1, 1) = 1;
    REQUIRE(assd(surface_distances(a, a)) == 0.0);
  }

  SECTION("single elements") {
    SurfaceDistanceSet sd{{3.0}, {3.0}};
    REQUIRE(assd(sd) == 3.0);
  }

  SECTION("sets {1,2} and {4}") {
    SurfaceDistanceSet sd{{1.0, 2.0}, {4.0}};
    REQUIRE(assd(sd) == Catch::Approx(7.0 / 3.0));
  }
}

TEST_CASE("metric symmetries") {
  Rng rng(17);
  for (int trial = 0; trial < 20; ++trial) {
    const auto a = random_mask({6, 6, 6}, 0.3, rng);
    const auto b = random_mask({6, 6, 6}, 0.3, rng);
    const auto mab = overlap_metrics(a, b);
    const auto mba = overlap_metrics(b, a);
    REQUIRE(mab.dice == mba.dice);
    REQUIRE(mab.iou == mba.iou);
    REQUIRE(mab.precision == mba.recall);
    REQUIRE(mab.recall == mba.precision);

    if (a.foreground_count() && b.foreground_count()) {
      const auto sab = surface_distances(a, b);
      const auto sba = surface_distances(b, a);
      REQUIRE(hd95(sab) == hd95(sba));
      REQUIRE(assd(sab) == assd(sba));
    }
  }
}

TEST_CASE("power-of-two spacing scaling is exact") {
  Rng rng(23);
  for (int trial = 0; trial < 10; ++trial) {
    auto a = random_mask({6, 6, 6}, 0.35, rng);
    auto b = random_mask({6, 6, 6}, 0.35, rng);
    if (!a.foreground_count() || !b.foreground_count()) continue;
    const auto base = surface_distances(a, b);
    const double h0 = hd95(base), a0 = assd(base);
    for (double s : {2.0, 0.5}) {
      auto a2 = a, b2 = b;
      for (int ax = 0; ax < 3; ++ax) {
        a2.spacing[ax] = a.spacing[ax] * s;
        b2.spacing[ax] = b.spacing[ax] * s;
      }
      const auto scaled = surface_distances(a2, b2);
      REQUIRE(hd95(scaled) == h0 * s);
      REQUIRE(assd(scaled) == a0 * s);
    }
  }
}

TEST_CASE("all six metrics match brute-force oracles on random 8^3 pairs") {
  Rng rng(31);
  int surface_cases = 0;
  for (int trial = 0; trial < 60; ++trial) {
    const Vec3d sp = {rng.uniform(0.5, 2.0), rng.uniform(0.5, 2.0), rng.uniform(0.5, 2.0)};
    const auto pred = random_mask({8, 8, 8}, rng.uniform(0.1, 0.5), rng, sp);
    const auto gt = random_mask({8, 8, 8}, rng.uniform(0.1, 0.5), rng, sp);

    const auto m = overlap_metrics(pred, gt);
    const auto om = oracle_overlap(pred, gt);
    REQUIRE(m.dice == Catch::Approx(om.dice).margin(1e-9));
    REQUIRE(m.iou == Catch::Approx(om.iou).margin(1e-9));
    REQUIRE(m.precision == Catch::Approx(om.precision).margin(1e-9));
    REQUIRE(m.recall == Catch::Approx(om.recall).margin(1e-9));

    if (!pred.foreground_count() || !gt.foreground_count()) continue;
    ++surface_cases;
    const auto sd = surface_distances(pred, gt);
    const auto bp = oracle_boundary(pred);
    const auto bg = oracle_boundary(gt);
    const auto d_pg = oracle_directed(bp, bg, sp);
    const auto d_gp = oracle_directed(bg, bp, sp);

    REQUIRE(sd.d_pred_to_gt.size() == d_pg.size());
    for (std::size_t i = 0; i < d_pg.size(); ++i)
      REQUIRE(sd.d_pred_to_gt[i] == Catch::Approx(d_pg[i]).margin(1e-9));

    std::vector<double> all = d_pg;
    all.insert(all.end(), d_gp.begin(), d_gp.end());
    REQUIRE(hd95(sd) == Catch::Approx(oracle_percentile(all, 0.95)).margin(1e-9));

    double sum = 0;
    for (double d : all) sum += d;
    REQUIRE(assd(sd) == Catch::Approx(sum / static_cast<double>(all.size())).margin(1e-9));
  }
  REQUIRE(surface_cases > 30);
}

TEST_CASE("dataset evaluation aggregates per-case metrics") {
  TempDir tmp("eval");
  DatasetManifest manifest;
  const Vec3i shape{8, 8, 4};

  // case a: dice 0.6 (gt 10 voxels, pred 10 voxels, 6 shared)
  // case b: dice 0.8 (8 shared)
  auto build = [&](const std::string& id, int shared) {
    LabelMask gt(shape), pred(shape);
    for (int x = 0; x < 10; ++x) gt.at(x % 8, x / 8, 1) = 1;
    for (int x = 0; x < shared; ++x) pred.at(x % 8, x / 8, 1) = 1;
    for (int x = 0; x < 10 - shared; ++x) pred.at(x % 8, x / 8 + 2, 2) = 1;
    Volume vol(shape, 1.0f);
    write_raw3d(tmp.str(id + "_v.raw3d"), vol);
    write_raw3d(tmp.str(id + "_m.raw3d"), gt);
    write_raw3d(tmp.str(id + ".raw3d"), pred);
    manifest.cases.push_back({id, tmp.str(id + "_v.raw3d"), tmp.str(id + "_m.raw3d")});
    manifest.split[id] = Split::test;
  };
  build("a", 6);
  build("b", 8);

  const MetricsReport report = evaluate_dataset(tmp.str(), manifest, Split::test);
  REQUIRE(report.n_cases == 2);
  REQUIRE(report.per_case.at("a").dice == Catch::Approx(0.6));
  REQUIRE(report.per_case.at("b").dice == Catch::Approx(0.8));
  REQUIRE(report.aggregate.dice == Catch::Approx(0.7));
  REQUIRE(report.excluded_cases.empty());

  SECTION("identity predictions give dice 1 and hd95 0") {
    TempDir tmp2("eval2");
    DatasetManifest m2;
    LabelMask gt(shape);
    gt.at(2, 2, 1) = gt.at(3, 2, 1) = 1;
    Volume vol(shape, 1.0f);
    write_raw3d(tmp2.str("c_v.raw3d"), vol);
    write_raw3d(tmp2.str("c_m.raw3d"), gt);
    write_raw3d(tmp2.str("c.raw3d"), gt);
    m2.cases.push_back({"c", tmp2.str("c_v.raw3d"), tmp2.str("c_m.raw3d")});
    m2.split["c"] = Split::test;
    const MetricsReport r = evaluate_dataset(tmp2.str(), m2, Split::test);
    REQUIRE(r.aggregate.dice == 1.0);
    REQUIRE(r.aggregate.hd95_mm.has_value());
    REQUIRE(*r.aggregate.hd95_mm == 0.0);
  }

  SECTION("empty prediction scores dice 0 and is excluded from distance means") {
    TempDir tmp3("eval3");
    DatasetManifest m3;
    LabelMask gt(shape), empty(shape);
    gt.at(2, 2, 1) = 1;
    Volume vol(shape, 1.0f);
    write_raw3d(tmp3.str("e_v.raw3d"), vol);
    write_raw3d(tmp3.str("e_m.raw3d"), gt);
    write_raw3d(tmp3.str("e.raw3d"), empty);
    m3.cases.push_back({"e", tmp3.str("e_v.raw3d"), tmp3.str("e_m.raw3d")});
    m3.split["e"] = Split::test;
    const MetricsReport r = evaluate_dataset(tmp3.str(), m3, Split::test);
    REQUIRE(r.per_case.at("e").dice == 0.0);
    REQUIRE_FALSE(r.per_case.at("e").hd95_mm.has_value());
    REQUIRE(r.excluded_cases == std::vector<std::string>{"e"});
    REQUIRE_FALSE(r.aggregate.hd95_mm.has_value());
  }

  SECTION("missing prediction raises MissingPrediction") {
    manifest.cases.push_back({"ghost", tmp.str("a_v.raw3d"), tmp.str("a_m.raw3d")});
    manifest.split["ghost"] = Split::test;
    REQUIRE_THROWS_AS(evaluate_dataset(tmp.str(), manifest, Split::test), MissingPrediction);
  }
}

TEST_CASE("report json round trip preserves nulls") {
  MetricsReport r;
  CaseMetrics cm;
  cm.dice = 0.5;
  cm.iou = 0.4;
  cm.precision = 0.6;
  cm.recall = 0.7;
  r.per_case["x"] = cm;  // no distances
  r.finalize_aggregate();
  const auto j = report_to_json(r);
  const MetricsReport back = report_from_json(j);
  REQUIRE(back.per_case.at("x").dice == 0.5);
  REQUIRE_FALSE(back.per_case.at("x").hd95_mm.has_value());
  REQUIRE(back.excluded_cases == std::vector<std::string>{"x"});
}
