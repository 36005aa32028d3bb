#ifndef SYNSEG_CHECKPOINT_HPP
#define SYNSEG_CHECKPOINT_HPP

#include <cstring>
#include <fstream>
#include <memory>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "synseg/infer.hpp"
#include "synseg/network.hpp"
#include "synseg/plan.hpp"
#include "synseg/raw3d.hpp"

namespace synseg {

// Trained model bundle: one net for fullres/lowres plans, two for cascades
// (the refinement net takes image + prior prediction as two channels).
struct Model {
  PlanConfig plan;
  bool reverse_attention = false;
  std::unique_ptr<SynergyUNet<float>> primary;
  std::unique_ptr<SynergyUNet<float>> lowres;  // cascade only
  int epoch = 0;
  double best_val_dice = 0.0;
  nlohmann::json train_config_echo = nlohmann::json::object();

  static Model build(const PlanConfig& plan, std::uint64_t seed, bool reverse_attention = false,
                     double codebook_decay = 0.99) {
    Model m;
    m.plan = plan;
    m.reverse_attention = reverse_attention;
    if (plan.variant == Variant::cascade3d) {
      m.lowres = std::make_unique<SynergyUNet<float>>(plan, 1, seed, reverse_attention, codebook_decay);
      m.primary = std::make_unique<SynergyUNet<float>>(plan, 2, seed + 1, reverse_attention, codebook_decay);
    } else {
      m.primary = std::make_unique<SynergyUNet<float>>(plan, 1, seed, reverse_attention, codebook_decay);
    }
    return m;
  }

  // Probability volume for an already intensity-normalized input volume.
  Volume predict_volume(const Volume& normalized) const {
    if (plan.variant == Variant::lowres3d) {
      Vec3i low_shape;
      for (int a = 0; a < 3; ++a)
        low_shape[a] = std::max(1, normalized.shape[a] / std::max(1, plan.lowres_scale[a]));
      const Volume low_vol =
          low_shape == normalized.shape ? normalized : resample_to_shape(normalized, low_shape);
      const Volume low_prob = sliding_window_predict({&low_vol}, plan.patch_size, patch_fn(*primary));
      return low_shape == normalized.shape ? low_prob : resample_to_shape(low_prob, normalized.shape);
    }
    if (plan.variant == Variant::cascade3d) {
      Vec3i low_shape;
      for (int a = 0; a < 3; ++a)
        low_shape[a] = std::max(1, normalized.shape[a] / std::max(1, plan.lowres_scale[a]));
      const Volume low_vol =
          low_shape == normalized.shape ? normalized : resample_to_shape(normalized, low_shape);
      const Volume low_prob = sliding_window_predict({&low_vol}, plan.patch_size, patch_fn(*lowres));
      const Volume prior =
          low_shape == normalized.shape ? low_prob : resample_to_shape(low_prob, normalized.shape);
      return sliding_window_predict({&normalized, &prior}, plan.patch_size, patch_fn(*primary));
    }
    return sliding_window_predict({&normalized}, plan.patch_size, patch_fn(*primary));
  }

  static PatchPredictor patch_fn(const SynergyUNet<float>& net) {
    auto ws = std::make_shared<Workspace<float>>();
    return [&net, ws](const Tensor5<float>& in) {
      net.forward(in, *ws);
      return ws->logits;
    };
  }
};

namespace detail {

struct BlobWriter {
  std::vector<float> data;
  std::size_t append(const float* src, std::size_t n) {
    const std::size_t off = data.size();
    data.insert(data.end(), src, src + n);
    return off;
  }
};

inline nlohmann::json net_to_json(const SynergyUNet<float>& net, BlobWriter& blob) {
  nlohmann::json j;
  j["in_channels"] = net.in_channels();
  j["params"] = nlohmann::json::array();
  for (const auto& e : net.params().entries()) {
    nlohmann::json je;
    je["name"] = e.name;
    je["count"] = e.count;
    j["params"].push_back(je);
  }
  j["params_offset"] = blob.append(net.params().data(), net.params().size());
  j["params_count"] = net.params().size();
  const auto& cb = net.codebook();
  j["codebook_offset"] = blob.append(cb.embeddings.data(), cb.embeddings.size());
  j["codebook_k"] = cb.K;
  j["codebook_d"] = cb.D;
  j["codebook_decay"] = cb.decay;
  j["usage_offset"] = blob.append(cb.usage_ema.data(), cb.usage_ema.size());
  return j;
}

inline void net_from_json(SynergyUNet<float>& net, const nlohmann::json& j,
                          const std::vector<float>& blob) {
  const auto off = j.at("params_offset").get<std::size_t>();
  const auto count = j.at("params_count").get<std::size_t>();
  if (count != net.params().size()) throw UnreadableFile("checkpoint parameter count mismatch");
  std::copy(blob.begin() + off, blob.begin() + off + count, net.params().data());
  auto& cb = net.codebook();
  const auto cb_off = j.at("codebook_offset").get<std::size_t>();
  std::copy(blob.begin() + cb_off, blob.begin() + cb_off + cb.embeddings.size(), cb.embeddings.begin());
  const auto usage_off = j.at("usage_offset").get<std::size_t>();
  std::copy(blob.begin() + usage_off, blob.begin() + usage_off + cb.usage_ema.size(),
            cb.usage_ema.begin());
}

constexpr char kCheckpointMagic[8] = {'S', 'S', 'E', 'G', 'C', 'K', 'P', '1'};

}  // namespace detail

inline void save_checkpoint(const std::string& path, const Model& model) {
  detail::BlobWriter blob;
  nlohmann::json j;
  j["format_version"] = 1;
  j["plan"] = plan_to_json(model.plan);
  j["reverse_attention"] = model.reverse_attention;
  j["epoch"] = model.epoch;
  j["best_val_dice"] = model.best_val_dice;
  j["train_config"] = model.train_config_echo;
  j["primary"] = detail::net_to_json(*model.primary, blob);
  if (model.lowres) j["lowres"] = detail::net_to_json(*model.lowres, blob);

  const std::string header = j.dump();
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IOFailure("cannot write checkpoint: " + path);
  f.write(detail::kCheckpointMagic, 8);
  const std::uint64_t len = header.size();
  f.write(reinterpret_cast<const char*>(&len), 8);
  f.write(header.data(), static_cast<std::streamsize>(header.size()));
  if (!detail::is_little_endian()) detail::byteswap32_buffer(blob.data.data(), blob.data.size());
  f.write(reinterpret_cast<const char*>(blob.data.data()),
          static_cast<std::streamsize>(blob.data.size() * 4));
  if (!f) throw IOFailure("short checkpoint write: " + path);
}

inline Model load_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw UnreadableFile("cannot open checkpoint: " + path);
  char magic[8];
  f.read(magic, 8);
  if (!f || std::memcmp(magic, detail::kCheckpointMagic, 8) != 0)
    throw UnreadableFile(path + ": not a checkpoint file");
  std::uint64_t len = 0;
  f.read(reinterpret_cast<char*>(&len), 8);
  std::string header(len, '\0');
  f.read(header.data(), static_cast<std::streamsize>(len));
  if (!f) throw UnreadableFile(path + ": truncated checkpoint header");

  nlohmann::json j;
  try {
    j = nlohmann::json::parse(header);
  } catch (const nlohmann::json::exception& e) {
    throw UnreadableFile(path + ": bad checkpoint header: " + e.what());
  }

  std::vector<float> blob;
  {
    std::vector<char> rest((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    blob.resize(rest.size() / 4);
    std::memcpy(blob.data(), rest.data(), blob.size() * 4);
    if (!detail::is_little_endian()) detail::byteswap32_buffer(blob.data(), blob.size());
  }

  Model m = Model::build(plan_from_json(j.at("plan")), 0, j.at("reverse_attention").get<bool>());
  m.epoch = j.at("epoch").get<int>();
  m.best_val_dice = j.at("best_val_dice").get<double>();
  m.train_config_echo = j.value("train_config", nlohmann::json::object());
  detail::net_from_json(*m.primary, j.at("primary"), blob);
  if (j.contains("lowres")) {
    if (!m.lowres) throw UnreadableFile(path + ": cascade checkpoint for non-cascade plan");
    detail::net_from_json(*m.lowres, j.at("lowres"), blob);
  }
  return m;
}

}  // namespace synseg

#endif
