#ifndef SYNSEG_FINGERPRINT_HPP
#define SYNSEG_FINGERPRINT_HPP

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "synseg/common.hpp"
#include "synseg/manifest.hpp"
#include "synseg/volume_io.hpp"

namespace synseg {

struct DatasetFingerprint {
  Vec3i median_shape{0, 0, 0};
  Vec3d median_spacing{1.0, 1.0, 1.0};
  double intensity_p0_5 = 0.0;
  double intensity_p99_5 = 0.0;
  double intensity_mean = 0.0;
  double intensity_std = 0.0;
  double foreground_fraction = 0.0;
  int n_cases = 0;

  void validate() const {
    if (median_shape[0] < 1 || median_shape[1] < 1 || median_shape[2] < 1)
      throw InvalidArgument("fingerprint median_shape degenerate");
    if (intensity_p0_5 > intensity_p99_5)
      throw InvalidArgument("fingerprint percentiles out of order");
    if (foreground_fraction < 0.0 || foreground_fraction > 1.0)
      throw InvalidArgument("foreground_fraction outside [0,1]");
  }
};

inline nlohmann::json fingerprint_to_json(const DatasetFingerprint& fp) {
  nlohmann::json j;
  j["median_shape"] = {fp.median_shape[0], fp.median_shape[1], fp.median_shape[2]};
  j["median_spacing"] = {fp.median_spacing[0], fp.median_spacing[1], fp.median_spacing[2]};
  j["intensity_p0_5"] = fp.intensity_p0_5;
  j["intensity_p99_5"] = fp.intensity_p99_5;
  j["intensity_mean"] = fp.intensity_mean;
  j["intensity_std"] = fp.intensity_std;
  j["foreground_fraction"] = fp.foreground_fraction;
  j["n_cases"] = fp.n_cases;
  return j;
}

inline DatasetFingerprint fingerprint_from_json(const nlohmann::json& j) {
  DatasetFingerprint fp;
  try {
    for (int a = 0; a < 3; ++a) {
      fp.median_shape[a] = j.at("median_shape").at(a).get<int>();
      fp.median_spacing[a] = j.at("median_spacing").at(a).get<double>();
    }
    fp.intensity_p0_5 = j.at("intensity_p0_5").get<double>();
    fp.intensity_p99_5 = j.at("intensity_p99_5").get<double>();
    fp.intensity_mean = j.at("intensity_mean").get<double>();
    fp.intensity_std = j.at("intensity_std").get<double>();
    fp.foreground_fraction = j.at("foreground_fraction").get<double>();
    fp.n_cases = j.at("n_cases").get<int>();
  } catch (const nlohmann::json::exception& e) {
    throw UnreadableFile(std::string("bad fingerprint JSON: ") + e.what());
  }
  fp.validate();
  return fp;
}

namespace detail {

// Lower median: element (n-1)/2 of the sorted sequence. Integer-stable.
template <class T>
inline T lower_median(std::vector<T> v) {
  std::sort(v.begin(), v.end());
  return v[(v.size() - 1) / 2];
}

}  // namespace detail

// Corpus statistics over the training split only. Intensity statistics are
// taken over foreground voxels; per case at most ~10k voxels are sampled with
// a deterministic stride so huge corpora stay cheap.
inline DatasetFingerprint fingerprint_dataset(const DatasetManifest& manifest, bool binarize = false) {
  const auto train_ids = manifest.ids_in_split(Split::train);
  if (train_ids.empty()) throw NoTrainingCases();

  std::vector<int> xs, ys, zs;
  std::vector<double> sx, sy, sz;
  std::vector<double> fg_samples;
  double sum = 0.0, sum_sq = 0.0;
  std::size_t fg_total = 0, vox_total = 0, fg_stat_count = 0;

  for (const auto& id : train_ids) {
    const auto& mc = manifest.case_by_id(id);
    if (mc.mask_path.empty()) throw NoTrainingCases("training case without mask: " + id);
    const LoadedCase c = load_case(mc.volume_path, mc.mask_path, binarize);
    const Volume& v = c.volume;
    const LabelMask& m = *c.mask;

    xs.push_back(v.shape[0]);
    ys.push_back(v.shape[1]);
    zs.push_back(v.shape[2]);
    sx.push_back(v.spacing[0]);
    sy.push_back(v.spacing[1]);
    sz.push_back(v.spacing[2]);

    const std::size_t fg_count = m.foreground_count();
    fg_total += fg_count;
    vox_total += v.size();
    if (fg_count == 0) continue;

    const std::size_t stride = std::max<std::size_t>(1, fg_count / 10000);
    std::size_t seen = 0;
    for (std::size_t i = 0; i < v.size(); ++i) {
      if (m.data[i] == 0) continue;
      if (seen++ % stride != 0) continue;
      const double x = v.data[i];
      fg_samples.push_back(x);
      sum += x;
      sum_sq += x * x;
      ++fg_stat_count;
    }
  }

  if (fg_total == 0) throw NoForegroundVoxels();

  DatasetFingerprint fp;
  fp.median_shape = {detail::lower_median(xs), detail::lower_median(ys), detail::lower_median(zs)};
  fp.median_spacing = {detail::lower_median(sx), detail::lower_median(sy), detail::lower_median(sz)};
  fp.intensity_mean = sum / static_cast<double>(fg_stat_count);
  const double var = std::max(0.0, sum_sq / static_cast<double>(fg_stat_count) -
                                       fp.intensity_mean * fp.intensity_mean);
  fp.intensity_std = std::sqrt(var);
  fp.intensity_p0_5 = percentile_linear(fg_samples, 0.005);
  fp.intensity_p99_5 = percentile_linear(fg_samples, 0.995);
  fp.foreground_fraction = static_cast<double>(fg_total) / static_cast<double>(vox_total);
  fp.n_cases = static_cast<int>(train_ids.size());
  fp.validate();
  return fp;
}

}  // namespace synseg

#endif
