#ifndef SYNSEG_PHANTOM_HPP
#define SYNSEG_PHANTOM_HPP

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "synseg/common.hpp"
#include "synseg/manifest.hpp"
#include "synseg/morphology.hpp"
#include "synseg/raw3d.hpp"
#include "synseg/rng.hpp"
#include "synseg/volume.hpp"

// Synthetic liver-like phantoms: a lobed ellipsoid whose boundary gets a
// severity-scaled sinusoidal perturbation (nodularity), plus Gaussian noise.
// Foreground mean 1.0, background mean 0.0.

namespace synseg {

struct PhantomSpec {
  Vec3i grid_shape{32, 32, 16};
  double severity = 0.0;     // boundary nodularity amplitude, in [0,1]
  double noise_sigma = 0.0;  // >= 0
  std::uint64_t seed = 0;

  void validate() const {
    if (grid_shape[0] < 8 || grid_shape[1] < 8 || grid_shape[2] < 8)
      throw DegenerateGrid("phantom grid must be >= 8 per axis, got " + shape_str(grid_shape));
    if (severity < 0.0 || severity > 1.0)
      throw InvalidArgument("severity must be in [0,1]");
    if (noise_sigma < 0.0) throw InvalidArgument("noise_sigma must be >= 0");
  }
};

inline std::pair<Volume, LabelMask> generate_phantom(const PhantomSpec& spec) {
  spec.validate();
  const Vec3i g = spec.grid_shape;
  Rng rng(spec.seed);

  // Geometry draws happen first so the mask is identical across noise levels.
  const double cx = (g[0] - 1) / 2.0 + rng.uniform(-0.04, 0.04) * g[0];
  const double cy = (g[1] - 1) / 2.0 + rng.uniform(-0.04, 0.04) * g[1];
  const double cz = (g[2] - 1) / 2.0 + rng.uniform(-0.04, 0.04) * g[2];
  const double rx = 0.33 * g[0] * (1.0 + rng.uniform(-0.08, 0.08));
  const double ry = 0.33 * g[1] * (1.0 + rng.uniform(-0.08, 0.08));
  const double rz = 0.33 * g[2] * (1.0 + rng.uniform(-0.08, 0.08));

  const double freq_a = static_cast<double>(rng.uniform_int(3, 5));
  const double freq_b = static_cast<double>(rng.uniform_int(2, 3));
  const double freq_c = static_cast<double>(rng.uniform_int(3, 5));
  const double ph1 = rng.uniform(0.0, 6.283185307179586);
  const double ph2 = rng.uniform(0.0, 6.283185307179586);
  const double ph3 = rng.uniform(0.0, 6.283185307179586);

  const double amplitude = spec.severity * 0.15;

  LabelMask mask(g);
  mask.spacing = {1.0, 1.0, 1.0};
  for (int z = 0; z < g[2]; ++z)
    for (int y = 0; y < g[1]; ++y)
      for (int x = 0; x < g[0]; ++x) {
        const double u = (x - cx) / rx;
        const double v = (y - cy) / ry;
        const double w = (z - cz) / rz;
        const double rho = std::sqrt(u * u + v * v + w * w);
        double limit = 1.0;
        if (amplitude > 0.0 && rho > 1e-12) {
          const double theta = std::atan2(v, u);
          const double phi = std::atan2(std::sqrt(u * u + v * v), w);
          const double bump = 0.5 * (std::sin(freq_a * theta + ph1) * std::cos(freq_b * phi + ph2) +
                                     std::sin(freq_c * phi + ph3));
          limit = 1.0 + amplitude * bump;
        }
        mask.at(x, y, z) = rho <= limit ? 1 : 0;
      }

  keep_largest_component(mask);

  Volume vol(g);
  vol.spacing = {1.0, 1.0, 1.0};
  vol.modality = "PHANTOM";
  for (std::size_t i = 0; i < vol.size(); ++i) {
    const double base = mask.data[i] ? 1.0 : 0.0;
    const double noise = spec.noise_sigma > 0.0 ? rng.normal(0.0, spec.noise_sigma) : 0.0;
    vol.data[i] = static_cast<float>(base + noise);
  }
  return {std::move(vol), std::move(mask)};
}

// Writes n phantom cases (RAW3D + sidecars) and a manifest.json with an
// 80:10:10 split under out_dir. grid_jitter > 0 varies per-case grid sizes by
// up to that fraction per axis.
inline DatasetManifest generate_corpus(int n, const PhantomSpec& spec_template, std::uint64_t seed,
                                       const std::string& out_dir, double grid_jitter = 0.0) {
  if (n < 3) throw TooFewCases("corpus needs n >= 3, got " + std::to_string(n));
  spec_template.validate();
  if (grid_jitter < 0.0 || grid_jitter > 0.5) throw InvalidArgument("grid_jitter must be in [0, 0.5]");

  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec) throw IOFailure("cannot create directory " + out_dir + ": " + ec.message());

  Rng corpus_rng(seed);
  DatasetManifest manifest;
  manifest.seed = seed;

  for (int i = 0; i < n; ++i) {
    PhantomSpec spec = spec_template;
    spec.seed = corpus_rng.next_u64();
    if (grid_jitter > 0.0) {
      for (int a = 0; a < 3; ++a) {
        const double f = 1.0 + corpus_rng.uniform(-grid_jitter, grid_jitter);
        spec.grid_shape[a] = std::max(8, static_cast<int>(std::lround(spec_template.grid_shape[a] * f)));
      }
    }
    auto [vol, mask] = generate_phantom(spec);

    char id[32];
    std::snprintf(id, sizeof(id), "case_%03d", i);
    const std::string vol_rel = std::string(id) + "_volume.raw3d";
    const std::string mask_rel = std::string(id) + "_mask.raw3d";
    write_raw3d((std::filesystem::path(out_dir) / vol_rel).string(), vol);
    write_raw3d((std::filesystem::path(out_dir) / mask_rel).string(), mask);
    manifest.cases.push_back({id, vol_rel, mask_rel});
  }

  manifest.split = make_split(manifest.all_ids(), SplitRatios{}, seed);
  save_manifest((std::filesystem::path(out_dir) / "manifest.json").string(), manifest);

  // Re-resolve paths relative to out_dir for the returned value.
  for (auto& c : manifest.cases) {
    c.volume_path = (std::filesystem::path(out_dir) / c.volume_path).string();
    c.mask_path = (std::filesystem::path(out_dir) / c.mask_path).string();
  }
  return manifest;
}

}  // namespace synseg

#endif
