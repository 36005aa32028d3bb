#ifndef SYNSEG_MANIFEST_HPP
#define SYNSEG_MANIFEST_HPP

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "synseg/common.hpp"
#include "synseg/raw3d.hpp"
#include "synseg/rng.hpp"

namespace synseg {

enum class Split { train, val, test };

inline std::string to_string(Split s) {
  switch (s) {
    case Split::train: return "train";
    case Split::val: return "val";
    default: return "test";
  }
}

inline Split split_from_string(const std::string& s) {
  if (s == "train") return Split::train;
  if (s == "val") return Split::val;
  if (s == "test") return Split::test;
  throw InvalidArgument("unknown split partition: " + s);
}

struct ManifestCase {
  std::string id;
  std::string volume_path;
  std::string mask_path;  // empty when the case has no mask
};

struct DatasetManifest {
  std::vector<ManifestCase> cases;
  std::map<std::string, Split> split;
  std::uint64_t seed = 0;

  const ManifestCase& case_by_id(const std::string& id) const {
    for (const auto& c : cases)
      if (c.id == id) return c;
    throw InvalidArgument("unknown case id: " + id);
  }

  std::vector<std::string> ids_in_split(Split s) const {
    std::vector<std::string> out;
    for (const auto& c : cases) {
      auto it = split.find(c.id);
      if (it != split.end() && it->second == s) out.push_back(c.id);
    }
    return out;
  }

  // Case ids of every case, manifest order.
  std::vector<std::string> all_ids() const {
    std::vector<std::string> out;
    for (const auto& c : cases) out.push_back(c.id);
    return out;
  }

  void validate() const {
    std::set<std::string> seen;
    for (const auto& c : cases) {
      if (!seen.insert(c.id).second) throw InvalidArgument("duplicate case id: " + c.id);
      if (split.find(c.id) == split.end())
        throw InvalidArgument("case missing from split: " + c.id);
    }
    for (const auto& [id, _] : split)
      if (seen.find(id) == seen.end()) throw InvalidArgument("split names unknown case: " + id);
  }
};

struct SplitRatios {
  double train = 0.8;
  double val = 0.1;
  double test = 0.1;
};

// Deterministic shuffled split. Partition sizes are the rounded ratio counts
// for val and test; the remainder goes to train.
inline std::map<std::string, Split> make_split(const std::vector<std::string>& ids,
                                               const SplitRatios& ratios, std::uint64_t seed) {
  if (ids.size() < 3) throw TooFewCases("need at least 3 cases, got " + std::to_string(ids.size()));
  const auto n = static_cast<double>(ids.size());
  const auto n_val = static_cast<std::size_t>(std::lround(n * ratios.val));
  const auto n_test = static_cast<std::size_t>(std::lround(n * ratios.test));
  if (n_val + n_test >= ids.size()) throw TooFewCases("split ratios leave no training cases");
  const std::size_t n_train = ids.size() - n_val - n_test;

  std::vector<std::string> order = ids;
  Rng rng(seed);
  rng.shuffle(order);

  std::map<std::string, Split> out;
  for (std::size_t i = 0; i < order.size(); ++i) {
    Split s = Split::train;
    if (i >= n_train && i < n_train + n_val)
      s = Split::val;
    else if (i >= n_train + n_val)
      s = Split::test;
    out[order[i]] = s;
  }
  return out;
}

inline nlohmann::json manifest_to_json(const DatasetManifest& m) {
  nlohmann::json j;
  j["cases"] = nlohmann::json::array();
  for (const auto& c : m.cases) {
    nlohmann::json jc;
    jc["id"] = c.id;
    jc["volume"] = c.volume_path;
    if (!c.mask_path.empty()) jc["mask"] = c.mask_path;
    j["cases"].push_back(jc);
  }
  j["split"] = nlohmann::json::object();
  for (const auto& [id, s] : m.split) j["split"][id] = to_string(s);
  j["seed"] = m.seed;
  return j;
}

inline DatasetManifest manifest_from_json(const nlohmann::json& j) {
  DatasetManifest m;
  try {
    for (const auto& jc : j.at("cases")) {
      ManifestCase c;
      c.id = jc.at("id").get<std::string>();
      c.volume_path = jc.at("volume").get<std::string>();
      if (jc.contains("mask")) c.mask_path = jc.at("mask").get<std::string>();
      m.cases.push_back(c);
    }
    for (const auto& [id, s] : j.at("split").items())
      m.split[id] = split_from_string(s.get<std::string>());
    m.seed = j.at("seed").get<std::uint64_t>();
  } catch (const nlohmann::json::exception& e) {
    throw UnreadableFile(std::string("bad manifest JSON: ") + e.what());
  }
  m.validate();
  return m;
}

// Loads a manifest and resolves relative case paths against its directory.
inline DatasetManifest load_manifest(const std::string& path) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(detail::read_file_bytes(path));
  } catch (const nlohmann::json::exception& e) {
    throw UnreadableFile(path + ": " + e.what());
  }
  DatasetManifest m = manifest_from_json(j);
  const auto dir = std::filesystem::path(path).parent_path();
  auto resolve = [&](std::string& p) {
    if (!p.empty() && std::filesystem::path(p).is_relative()) p = (dir / p).string();
  };
  for (auto& c : m.cases) {
    resolve(c.volume_path);
    resolve(c.mask_path);
  }
  return m;
}

inline void save_manifest(const std::string& path, const DatasetManifest& m) {
  const std::string text = manifest_to_json(m).dump(2) + "\n";
  detail::write_file_bytes(path, text.data(), text.size());
}

}  // namespace synseg

#endif
