#ifndef SYNSEG_PLAN_HPP
#define SYNSEG_PLAN_HPP

#include <algorithm>
#include <cstdint>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "synseg/common.hpp"
#include "synseg/fingerprint.hpp"

namespace synseg {

enum class Variant { fullres3d, lowres3d, cascade3d };

inline std::string to_string(Variant v) {
  switch (v) {
    case Variant::fullres3d: return "fullres3d";
    case Variant::lowres3d: return "lowres3d";
    default: return "cascade3d";
  }
}

inline Variant variant_from_string(const std::string& s) {
  if (s == "fullres3d") return Variant::fullres3d;
  if (s == "lowres3d") return Variant::lowres3d;
  if (s == "cascade3d") return Variant::cascade3d;
  throw InvalidArgument("unknown variant: " + s);
}

struct MemoryBudget {
  std::int64_t bytes_available = 0;
  double safety_factor = 1.0;

  void validate() const {
    if (bytes_available <= 0) throw InvalidArgument("budget bytes_available must be > 0");
    if (safety_factor <= 0.0 || safety_factor > 1.0)
      throw InvalidArgument("budget safety_factor must be in (0,1]");
  }
  double effective_bytes() const { return static_cast<double>(bytes_available) * safety_factor; }

  static MemoryBudget from_gigabytes(double gb, double safety = 0.85) {
    MemoryBudget b;
    b.bytes_available = static_cast<std::int64_t>(gb * 1024.0 * 1024.0 * 1024.0);
    b.safety_factor = safety;
    return b;
  }
};

struct PlanConfig {
  Variant variant = Variant::fullres3d;
  Vec3i patch_size{0, 0, 0};
  int batch_size = 1;
  int n_stages = 0;
  std::vector<int> channels_per_stage;
  std::vector<Vec3i> pooling_per_axis_per_stage;  // binary, one vector per transition
  Vec3i lowres_scale{1, 1, 1};
  int codebook_size = 256;  // K
  int latent_dim = 64;      // D
  int attention_heads = 4;

  Vec3i pooling_product() const {
    Vec3i p{1, 1, 1};
    for (const auto& s : pooling_per_axis_per_stage)
      for (int a = 0; a < 3; ++a) p[a] *= s[a] ? 2 : 1;
    return p;
  }

  // Spatial shape of stage s activations (stage 0 = full patch).
  Vec3i stage_shape(int stage) const {
    Vec3i shape = patch_size;
    for (int t = 0; t < stage; ++t)
      for (int a = 0; a < 3; ++a)
        if (pooling_per_axis_per_stage[static_cast<std::size_t>(t)][a]) shape[a] /= 2;
    return shape;
  }

  void validate() const {
    if (patch_size[0] < 1 || patch_size[1] < 1 || patch_size[2] < 1)
      throw InvalidArgument("plan patch_size degenerate");
    if (batch_size < 1) throw InvalidArgument("plan batch_size must be >= 1");
    if (n_stages < 1 || static_cast<std::size_t>(n_stages) != channels_per_stage.size())
      throw InvalidArgument("plan n_stages inconsistent with channels_per_stage");
    if (pooling_per_axis_per_stage.size() + 1 != static_cast<std::size_t>(n_stages))
      throw InvalidArgument("plan pooling schedule must have n_stages-1 entries");
    const Vec3i prod = pooling_product();
    for (int a = 0; a < 3; ++a)
      if (patch_size[a] % prod[a] != 0)
        throw InvalidArgument("patch axis " + std::to_string(a) + " not divisible by pooling product");
    for (std::size_t s = 1; s < channels_per_stage.size(); ++s)
      if (channels_per_stage[s] < channels_per_stage[s - 1])
        throw InvalidArgument("channels must be nondecreasing");
    if (latent_dim % attention_heads != 0)
      throw InvalidArgument("latent_dim must be divisible by attention_heads");
    if (codebook_size < 2) throw InvalidArgument("codebook_size must be >= 2");
  }
};

inline nlohmann::json plan_to_json(const PlanConfig& p) {
  nlohmann::json j;
  j["variant"] = to_string(p.variant);
  j["patch_size"] = {p.patch_size[0], p.patch_size[1], p.patch_size[2]};
  j["batch_size"] = p.batch_size;
  j["n_stages"] = p.n_stages;
  j["channels_per_stage"] = p.channels_per_stage;
  j["pooling_per_axis_per_stage"] = nlohmann::json::array();
  for (const auto& s : p.pooling_per_axis_per_stage)
    j["pooling_per_axis_per_stage"].push_back({s[0], s[1], s[2]});
  j["lowres_scale"] = {p.lowres_scale[0], p.lowres_scale[1], p.lowres_scale[2]};
  j["codebook_size"] = p.codebook_size;
  j["latent_dim"] = p.latent_dim;
  j["attention_heads"] = p.attention_heads;
  return j;
}

inline PlanConfig plan_from_json(const nlohmann::json& j) {
  PlanConfig p;
  try {
    p.variant = variant_from_string(j.at("variant").get<std::string>());
    for (int a = 0; a < 3; ++a) {
      p.patch_size[a] = j.at("patch_size").at(a).get<int>();
      p.lowres_scale[a] = j.at("lowres_scale").at(a).get<int>();
    }
    p.batch_size = j.at("batch_size").get<int>();
    p.n_stages = j.at("n_stages").get<int>();
    p.channels_per_stage = j.at("channels_per_stage").get<std::vector<int>>();
    for (const auto& js : j.at("pooling_per_axis_per_stage"))
      p.pooling_per_axis_per_stage.push_back({js.at(0).get<int>(), js.at(1).get<int>(), js.at(2).get<int>()});
    p.codebook_size = j.at("codebook_size").get<int>();
    p.latent_dim = j.at("latent_dim").get<int>();
    p.attention_heads = j.at("attention_heads").get<int>();
  } catch (const nlohmann::json::exception& e) {
    throw UnreadableFile(std::string("bad plan JSON: ") + e.what());
  }
  p.validate();
  return p;
}

// Analytic activation-memory estimate:
// 4 bytes x batch x sum over stages (activation voxels x channels) x 6,
// the factor 6 covering forward, backward and optimizer state.
inline double estimate_memory(const PlanConfig& p) {
  double activation = 0.0;
  for (int s = 0; s < p.n_stages; ++s) {
    const Vec3i shape = p.stage_shape(s);
    activation += static_cast<double>(volume_of(shape)) * p.channels_per_stage[static_cast<std::size_t>(s)];
  }
  return 4.0 * p.batch_size * activation * 6.0;
}

namespace detail {

constexpr int kMaxStages = 6;
constexpr int kMinAxis = 8;

// Per transition, pool an axis iff its extent is >= 8 and >= half the largest
// axis; stages stop when all axes are <= 8 or the stage cap is reached.
inline std::vector<Vec3i> derive_pooling(const Vec3i& patch, int max_stages) {
  std::vector<Vec3i> schedule;
  Vec3i extent = patch;
  while (static_cast<int>(schedule.size()) + 1 < max_stages) {
    const int largest = std::max({extent[0], extent[1], extent[2]});
    Vec3i pool{0, 0, 0};
    bool any = false;
    for (int a = 0; a < 3; ++a) {
      if (extent[a] >= kMinAxis && 2 * extent[a] >= largest) {
        pool[a] = 1;
        any = true;
      }
    }
    if (!any) break;
    for (int a = 0; a < 3; ++a)
      if (pool[a]) extent[a] /= 2;
    schedule.push_back(pool);
    if (extent[0] <= kMinAxis && extent[1] <= kMinAxis && extent[2] <= kMinAxis) break;
  }
  return schedule;
}

inline std::vector<int> derive_channels(int n_stages, int base = 16, int cap = 256) {
  std::vector<int> ch(static_cast<std::size_t>(n_stages));
  for (int s = 0; s < n_stages; ++s) ch[static_cast<std::size_t>(s)] = std::min(base << s, cap);
  return ch;
}

// Fixed point of (derive schedule, round patch down to pooling multiples).
// Patch is nonincreasing, so this terminates.
inline void settle_patch_and_schedule(Vec3i& patch, std::vector<Vec3i>& schedule, int max_stages) {
  for (;;) {
    schedule = derive_pooling(patch, max_stages);
    Vec3i prod{1, 1, 1};
    for (const auto& s : schedule)
      for (int a = 0; a < 3; ++a) prod[a] *= s[a] ? 2 : 1;
    Vec3i rounded;
    for (int a = 0; a < 3; ++a) rounded[a] = std::max(prod[a], patch[a] / prod[a] * prod[a]);
    if (rounded == patch) return;
    patch = rounded;
  }
}

inline void apply_stages(PlanConfig& p, const Vec3i& patch, const std::vector<Vec3i>& schedule) {
  p.patch_size = patch;
  p.pooling_per_axis_per_stage = schedule;
  p.n_stages = static_cast<int>(schedule.size()) + 1;
  p.channels_per_stage = derive_channels(p.n_stages);
}

}  // namespace detail

// Deterministic heuristic planner. Batch starts at 4 and is reduced to 2 then
// 1 before any patch shrinking; under further pressure the longest patch axis
// is halved (ties x before y before z). The cascade variant triggers when the
// final patch covers less than 25% of the median shape's voxels.
inline PlanConfig plan_configuration(const DatasetFingerprint& fp, const MemoryBudget& budget) {
  fp.validate();
  budget.validate();
  const double limit = budget.effective_bytes();

  PlanConfig plan;
  Vec3i patch = {std::max(detail::kMinAxis, fp.median_shape[0]),
                 std::max(detail::kMinAxis, fp.median_shape[1]),
                 std::max(detail::kMinAxis, fp.median_shape[2])};
  std::vector<Vec3i> schedule;
  detail::settle_patch_and_schedule(patch, schedule, detail::kMaxStages);
  detail::apply_stages(plan, patch, schedule);

  for (int batch : {4, 2, 1}) {
    plan.batch_size = batch;
    if (estimate_memory(plan) <= limit) break;
  }

  while (estimate_memory(plan) > limit) {
    // Halve the longest shrinkable axis; x wins ties over y over z.
    int axis = -1;
    for (int a = 0; a < 3; ++a) {
      if (patch[a] / 2 < detail::kMinAxis) continue;
      if (axis < 0 || patch[a] > patch[axis]) axis = a;
    }
    if (axis < 0)
      throw BudgetInfeasible("minimal plan exceeds budget of " + std::to_string(budget.bytes_available) + " bytes");
    patch[axis] /= 2;
    detail::settle_patch_and_schedule(patch, schedule, detail::kMaxStages);
    detail::apply_stages(plan, patch, schedule);
  }

  const double coverage = static_cast<double>(volume_of(plan.patch_size)) /
                          static_cast<double>(volume_of(fp.median_shape));
  plan.variant = coverage < 0.25 ? Variant::cascade3d : Variant::fullres3d;
  for (int a = 0; a < 3; ++a) plan.lowres_scale[a] = fp.median_shape[a] > 64 ? 2 : 1;

  plan.validate();
  return plan;
}

// Fixed default plan (the no-autoconfiguration ablation): constants
// independent of the fingerprint except that the patch is clipped to
// median_shape. The pooling schedule is re-derived for clipped patches so the
// divisibility invariant always holds; for large datasets it is the constant
// 5-stage plan with patch (128,128,64) and batch 2.
inline PlanConfig default_plan(const DatasetFingerprint& fp) {
  fp.validate();
  PlanConfig plan;
  Vec3i patch = {std::min(128, std::max(detail::kMinAxis, fp.median_shape[0])),
                 std::min(128, std::max(detail::kMinAxis, fp.median_shape[1])),
                 std::min(64, std::max(detail::kMinAxis, fp.median_shape[2]))};
  std::vector<Vec3i> schedule;
  detail::settle_patch_and_schedule(patch, schedule, 5);
  detail::apply_stages(plan, patch, schedule);
  plan.batch_size = 2;
  plan.variant = Variant::fullres3d;
  plan.lowres_scale = {1, 1, 1};
  plan.validate();
  return plan;
}

}  // namespace synseg

#endif
