#ifndef SYNSEG_METRICS_HPP
#define SYNSEG_METRICS_HPP

#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "synseg/common.hpp"
#include "synseg/manifest.hpp"
#include "synseg/volume.hpp"
#include "synseg/volume_io.hpp"

namespace synseg {

struct ConfusionCounts {
  std::size_t tp = 0, fp = 0, fn = 0, tn = 0;
};

struct OverlapMetrics {
  double dice = 0.0, iou = 0.0, precision = 0.0, recall = 0.0;
};

inline ConfusionCounts confusion_counts(const LabelMask& pred, const LabelMask& gt) {
  if (pred.shape != gt.shape) throw ShapeMismatch("pred/gt shapes differ");
  ConfusionCounts c;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const bool p = pred.data[i] != 0;
    const bool g = gt.data[i] != 0;
    if (p && g)
      ++c.tp;
    else if (p && !g)
      ++c.fp;
    else if (!p && g)
      ++c.fn;
    else
      ++c.tn;
  }
  return c;
}

// Both-empty convention: all four metrics are 1. An empty denominator facing a
// nonempty counterpart yields 0.
inline OverlapMetrics overlap_metrics(const LabelMask& pred, const LabelMask& gt) {
  const ConfusionCounts c = confusion_counts(pred, gt);
  OverlapMetrics m;
  const bool pred_empty = (c.tp + c.fp) == 0;
  const bool gt_empty = (c.tp + c.fn) == 0;
  if (pred_empty && gt_empty) {
    m.dice = m.iou = m.precision = m.recall = 1.0;
    return m;
  }
  const double tp = static_cast<double>(c.tp);
  m.dice = (2.0 * tp) / static_cast<double>(2 * c.tp + c.fp + c.fn);
  m.iou = c.tp + c.fp + c.fn == 0 ? 1.0 : tp / static_cast<double>(c.tp + c.fp + c.fn);
  m.precision = pred_empty ? 0.0 : tp / static_cast<double>(c.tp + c.fp);
  m.recall = gt_empty ? 0.0 : tp / static_cast<double>(c.tp + c.fn);
  return m;
}

// Boundary voxel: foreground with at least one of its 6 neighbors background,
// or lying on the volume edge.
inline std::vector<Vec3i> boundary_voxels(const LabelMask& m) {
  std::vector<Vec3i> out;
  const Vec3i s = m.shape;
  for (int z = 0; z < s[2]; ++z)
    for (int y = 0; y < s[1]; ++y)
      for (int x = 0; x < s[0]; ++x) {
        if (m.at(x, y, z) == 0) continue;
        const bool edge = x == 0 || y == 0 || z == 0 || x == s[0] - 1 || y == s[1] - 1 || z == s[2] - 1;
        bool bg_neighbor = edge;
        if (!bg_neighbor)
          bg_neighbor = m.at(x - 1, y, z) == 0 || m.at(x + 1, y, z) == 0 || m.at(x, y - 1, z) == 0 ||
                        m.at(x, y + 1, z) == 0 || m.at(x, y, z - 1) == 0 || m.at(x, y, z + 1) == 0;
        if (bg_neighbor) out.push_back({x, y, z});
      }
  return out;
}

namespace detail {

constexpr double kInf = std::numeric_limits<double>::infinity();

// 1D squared-distance transform over parabolas rooted at positions i*step
// (Felzenszwalb/Huttenlocher envelope), tolerating +inf entries.
inline void dt1d(std::vector<double>& f, double step, std::vector<double>& d, std::vector<int>& v,
                 std::vector<double>& zbuf) {
  const int n = static_cast<int>(f.size());
  d.assign(static_cast<std::size_t>(n), kInf);
  v.assign(static_cast<std::size_t>(n), 0);
  zbuf.assign(static_cast<std::size_t>(n) + 1, 0.0);

  int k = -1;
  for (int q = 0; q < n; ++q) {
    if (f[static_cast<std::size_t>(q)] == kInf) continue;
    const double xq = q * step;
    double s = 0.0;
    while (k >= 0) {
      const int p = v[static_cast<std::size_t>(k)];
      const double xp = p * step;
      s = ((f[static_cast<std::size_t>(q)] + xq * xq) - (f[static_cast<std::size_t>(p)] + xp * xp)) /
          (2.0 * xq - 2.0 * xp);
      if (s <= zbuf[static_cast<std::size_t>(k)])
        --k;
      else
        break;
    }
    ++k;
    v[static_cast<std::size_t>(k)] = q;
    zbuf[static_cast<std::size_t>(k)] = k == 0 ? -kInf : s;
    zbuf[static_cast<std::size_t>(k) + 1] = kInf;
  }
  if (k < 0) return;  // no finite parabola

  int j = 0;
  for (int q = 0; q < n; ++q) {
    const double xq = q * step;
    while (zbuf[static_cast<std::size_t>(j) + 1] < xq) ++j;
    const int p = v[static_cast<std::size_t>(j)];
    const double dx = xq - p * step;
    d[static_cast<std::size_t>(q)] = dx * dx + f[static_cast<std::size_t>(p)];
  }
}

// Exact anisotropic squared EDT to the given site set, over the whole grid.
inline std::vector<double> squared_edt(const Vec3i& shape, const Vec3d& spacing,
                                       const std::vector<Vec3i>& sites) {
  const int X = shape[0], Y = shape[1], Z = shape[2];
  std::vector<double> grid(static_cast<std::size_t>(volume_of(shape)), kInf);
  auto idx = [&](int x, int y, int z) {
    return static_cast<std::size_t>(x) + static_cast<std::size_t>(X) * (y + static_cast<std::size_t>(Y) * z);
  };
  for (const auto& s : sites) grid[idx(s[0], s[1], s[2])] = 0.0;

  std::vector<double> line, dist, zbuf;
  std::vector<int> v;

  // x pass
  line.resize(static_cast<std::size_t>(X));
  for (int z = 0; z < Z; ++z)
    for (int y = 0; y < Y; ++y) {
      for (int x = 0; x < X; ++x) line[static_cast<std::size_t>(x)] = grid[idx(x, y, z)];
      dt1d(line, spacing[0], dist, v, zbuf);
      for (int x = 0; x < X; ++x) grid[idx(x, y, z)] = dist[static_cast<std::size_t>(x)];
    }
  // y pass
  line.resize(static_cast<std::size_t>(Y));
  for (int z = 0; z < Z; ++z)
    for (int x = 0; x < X; ++x) {
      for (int y = 0; y < Y; ++y) line[static_cast<std::size_t>(y)] = grid[idx(x, y, z)];
      dt1d(line, spacing[1], dist, v, zbuf);
      for (int y = 0; y < Y; ++y) grid[idx(x, y, z)] = dist[static_cast<std::size_t>(y)];
    }
  // z pass
  line.resize(static_cast<std::size_t>(Z));
  for (int y = 0; y < Y; ++y)
    for (int x = 0; x < X; ++x) {
      for (int z = 0; z < Z; ++z) line[static_cast<std::size_t>(z)] = grid[idx(x, y, z)];
      dt1d(line, spacing[2], dist, v, zbuf);
      for (int z = 0; z < Z; ++z) grid[idx(x, y, z)] = dist[static_cast<std::size_t>(z)];
    }
  return grid;
}

}  // namespace detail

struct SurfaceDistanceSet {
  std::vector<double> d_pred_to_gt;  // mm, one per pred boundary voxel
  std::vector<double> d_gt_to_pred;  // mm, one per gt boundary voxel
};

// Spacing-aware Euclidean distances between boundary voxel centers.
inline SurfaceDistanceSet surface_distances(const LabelMask& pred, const LabelMask& gt) {
  if (pred.shape != gt.shape) throw ShapeMismatch("pred/gt shapes differ");
  if (pred.foreground_count() == 0 || gt.foreground_count() == 0)
    throw EmptySurface("surface distances need nonempty masks");

  const auto pred_boundary = boundary_voxels(pred);
  const auto gt_boundary = boundary_voxels(gt);
  const Vec3d spacing = gt.spacing;

  SurfaceDistanceSet sd;
  const auto to_gt = detail::squared_edt(pred.shape, spacing, gt_boundary);
  sd.d_pred_to_gt.reserve(pred_boundary.size());
  for (const auto& p : pred_boundary)
    sd.d_pred_to_gt.push_back(std::sqrt(to_gt[pred.index(p[0], p[1], p[2])]));

  const auto to_pred = detail::squared_edt(pred.shape, spacing, pred_boundary);
  sd.d_gt_to_pred.reserve(gt_boundary.size());
  for (const auto& p : gt_boundary)
    sd.d_gt_to_pred.push_back(std::sqrt(to_pred[gt.index(p[0], p[1], p[2])]));

  return sd;
}

// 95th percentile (linear interpolation) of both directed sets combined.
inline double hd95(const SurfaceDistanceSet& sd) {
  if (sd.d_pred_to_gt.empty() || sd.d_gt_to_pred.empty())
    throw EmptySurface("hd95 needs nonempty distance sets");
  std::vector<double> all = sd.d_pred_to_gt;
  all.insert(all.end(), sd.d_gt_to_pred.begin(), sd.d_gt_to_pred.end());
  return percentile_linear(std::move(all), 0.95);
}

inline double assd(const SurfaceDistanceSet& sd) {
  if (sd.d_pred_to_gt.empty() || sd.d_gt_to_pred.empty())
    throw EmptySurface("assd needs nonempty distance sets");
  // Per-direction partial sums keep the result bitwise symmetric in pred/gt.
  double sum_pg = 0.0, sum_gp = 0.0;
  for (double d : sd.d_pred_to_gt) sum_pg += d;
  for (double d : sd.d_gt_to_pred) sum_gp += d;
  return (sum_pg + sum_gp) / static_cast<double>(sd.d_pred_to_gt.size() + sd.d_gt_to_pred.size());
}

struct CaseMetrics {
  double dice = 0.0, iou = 0.0, precision = 0.0, recall = 0.0;
  std::optional<double> hd95_mm;
  std::optional<double> assd_mm;
};

inline CaseMetrics evaluate_case(const LabelMask& pred, const LabelMask& gt) {
  CaseMetrics cm;
  const OverlapMetrics om = overlap_metrics(pred, gt);
  cm.dice = om.dice;
  cm.iou = om.iou;
  cm.precision = om.precision;
  cm.recall = om.recall;
  if (pred.foreground_count() > 0 && gt.foreground_count() > 0) {
    const SurfaceDistanceSet sd = surface_distances(pred, gt);
    cm.hd95_mm = hd95(sd);
    cm.assd_mm = assd(sd);
  }
  return cm;
}

struct MetricsReport {
  std::map<std::string, CaseMetrics> per_case;
  CaseMetrics aggregate;  // unweighted means; distances over non-excluded cases
  int n_cases = 0;
  std::vector<std::string> excluded_cases;  // cases without surface distances
  std::string label;                        // e.g. "zero-shot"

  void finalize_aggregate() {
    n_cases = static_cast<int>(per_case.size());
    aggregate = CaseMetrics{};
    excluded_cases.clear();
    if (per_case.empty()) return;
    double hd_sum = 0.0, assd_sum = 0.0;
    int dist_n = 0;
    for (const auto& [id, cm] : per_case) {
      aggregate.dice += cm.dice;
      aggregate.iou += cm.iou;
      aggregate.precision += cm.precision;
      aggregate.recall += cm.recall;
      if (cm.hd95_mm && cm.assd_mm) {
        hd_sum += *cm.hd95_mm;
        assd_sum += *cm.assd_mm;
        ++dist_n;
      } else {
        excluded_cases.push_back(id);
      }
    }
    const double n = static_cast<double>(per_case.size());
    aggregate.dice /= n;
    aggregate.iou /= n;
    aggregate.precision /= n;
    aggregate.recall /= n;
    if (dist_n > 0) {
      aggregate.hd95_mm = hd_sum / dist_n;
      aggregate.assd_mm = assd_sum / dist_n;
    }
  }
};

namespace detail {

inline nlohmann::json case_metrics_to_json(const CaseMetrics& cm) {
  nlohmann::json j;
  j["dice"] = cm.dice;
  j["iou"] = cm.iou;
  j["precision"] = cm.precision;
  j["recall"] = cm.recall;
  j["hd95_mm"] = cm.hd95_mm ? nlohmann::json(*cm.hd95_mm) : nlohmann::json(nullptr);
  j["assd_mm"] = cm.assd_mm ? nlohmann::json(*cm.assd_mm) : nlohmann::json(nullptr);
  return j;
}

inline CaseMetrics case_metrics_from_json(const nlohmann::json& j) {
  CaseMetrics cm;
  cm.dice = j.at("dice").get<double>();
  cm.iou = j.at("iou").get<double>();
  cm.precision = j.at("precision").get<double>();
  cm.recall = j.at("recall").get<double>();
  if (j.contains("hd95_mm") && !j.at("hd95_mm").is_null()) cm.hd95_mm = j.at("hd95_mm").get<double>();
  if (j.contains("assd_mm") && !j.at("assd_mm").is_null()) cm.assd_mm = j.at("assd_mm").get<double>();
  return cm;
}

}  // namespace detail

inline nlohmann::json report_to_json(const MetricsReport& r) {
  nlohmann::json j;
  j["per_case"] = nlohmann::json::object();
  for (const auto& [id, cm] : r.per_case) j["per_case"][id] = detail::case_metrics_to_json(cm);
  j["aggregate"] = detail::case_metrics_to_json(r.aggregate);
  j["n_cases"] = r.n_cases;
  j["excluded_cases"] = r.excluded_cases;
  if (!r.label.empty()) j["label"] = r.label;
  return j;
}

inline MetricsReport report_from_json(const nlohmann::json& j) {
  MetricsReport r;
  try {
    for (const auto& [id, jc] : j.at("per_case").items())
      r.per_case[id] = detail::case_metrics_from_json(jc);
    r.aggregate = detail::case_metrics_from_json(j.at("aggregate"));
    r.n_cases = j.at("n_cases").get<int>();
    r.excluded_cases = j.at("excluded_cases").get<std::vector<std::string>>();
    if (j.contains("label")) r.label = j.at("label").get<std::string>();
  } catch (const nlohmann::json::exception& e) {
    throw UnreadableFile(std::string("bad report JSON: ") + e.what());
  }
  return r;
}

// Per-case metrics of stored predictions (<case_id>.raw3d under pred_dir)
// against the manifest's ground truth for the chosen split (empty = all).
inline MetricsReport evaluate_dataset(const std::string& pred_dir, const DatasetManifest& manifest,
                                      const std::optional<Split>& split, bool binarize = false) {
  std::vector<std::string> ids =
      split ? manifest.ids_in_split(*split) : manifest.all_ids();
  MetricsReport report;
  for (const auto& id : ids) {
    const auto& mc = manifest.case_by_id(id);
    if (mc.mask_path.empty()) throw InvalidArgument("case lacks ground truth: " + id);
    const std::string pred_path = (std::filesystem::path(pred_dir) / (id + ".raw3d")).string();
    if (!std::filesystem::exists(pred_path)) throw MissingPrediction(pred_path);
    const LabelMask pred = load_mask(pred_path, binarize);
    const LabelMask gt = load_mask(mc.mask_path, binarize);
    if (pred.shape != gt.shape) throw ShapeMismatch("prediction shape differs for case " + id);
    report.per_case[id] = evaluate_case(pred, gt);
  }
  report.finalize_aggregate();
  return report;
}

}  // namespace synseg

#endif
