#include <catch2/catch_amalgamated.hpp>

#include <zlib.h>

#include <cmath>
#include <cstring>
#include <fstream>

#include "synseg/manifest.hpp"
#include "synseg/nifti.hpp"
#include "synseg/rng.hpp"
#include "synseg/volume_io.hpp"
#include "synseg/volume_ops.hpp"
#include "test_util.hpp"

using namespace synseg;

TEST_CASE("raw3d round trip is bit exact") {
  TempDir tmp("raw3d");

  SECTION("constant volume") {
    Volume v({4, 4, 2}, 7.0f);
    v.spacing = {1, 1, 1};
    write_raw3d(tmp.str("c.raw3d"), v);
    const Volume r = read_raw3d_volume(tmp.str("c.raw3d"));
    REQUIRE(r.shape == Vec3i{4, 4, 2});
    REQUIRE(r.data.size() == 32);
    for (float x : r.data) REQUIRE(x == 7.0f);
  }

  SECTION("random volume survives save/load bit-identically") {
    Rng rng(3);
    Volume v({8, 8, 5});
    v.spacing = {0.7, 1.3, 2.5};
    v.origin = {1, -2, 3};
    for (auto& x : v.data) x = static_cast<float>(rng.normal());
    write_raw3d(tmp.str("r.raw3d"), v);
    const Volume r = read_raw3d_volume(tmp.str("r.raw3d"));
    REQUIRE(r.shape == v.shape);
    REQUIRE(r.spacing == v.spacing);
    REQUIRE(std::memcmp(r.data.data(), v.data.data(), v.data.size() * 4) == 0);
  }
}

TEST_CASE("mask loading enforces binary labels") {
  TempDir tmp("mask");
  Volume raw({3, 3, 1});
  raw.data = {0, 1, 0, 1, 2, 0, 1, 0, 0};  // a stray label 2
  write_raw3d(tmp.str("m.raw3d"), raw);
  // sidecar kind says volume; write mask kind explicitly
  LabelMask ok({3, 3, 1});
  write_raw3d(tmp.str("ok.raw3d"), ok);

  REQUIRE_THROWS_AS(read_raw3d_mask(tmp.str("m.raw3d")), NonBinaryLabels);

  SECTION("binarize thresholds > 0.5 instead of rejecting") {
    Volume soft({2, 2, 1});
    soft.data = {0.2f, 0.7f, 1.0f, 0.0f};
    write_raw3d(tmp.str("soft.raw3d"), soft);
    const LabelMask m = read_raw3d_mask(tmp.str("soft.raw3d"), true);
    REQUIRE(m.data == std::vector<std::uint8_t>{0, 1, 1, 0});
  }
}

TEST_CASE("load_case validates mask alignment") {
  TempDir tmp("case");
  Volume v({4, 4, 4}, 1.0f);
  write_raw3d(tmp.str("v.raw3d"), v);
  LabelMask wrong({4, 4, 3});
  write_raw3d(tmp.str("wrong.raw3d"), wrong);
  REQUIRE_THROWS_AS(load_case(tmp.str("v.raw3d"), tmp.str("wrong.raw3d")), ShapeMismatch);

  Volume nan_vol({2, 2, 2}, 0.0f);
  nan_vol.data[3] = std::numeric_limits<float>::quiet_NaN();
  // writer does not validate; loader must reject
  detail::write_raw3d_impl(tmp.str("nan.raw3d"), nan_vol.shape, nan_vol.spacing, nan_vol.origin,
                           "volume", nan_vol.data.data());
  REQUIRE_THROWS_AS(read_raw3d_volume(tmp.str("nan.raw3d")), UnreadableFile);
}

TEST_CASE("resampling") {
  SECTION("constant volume stays constant under downsampling") {
    Volume v({16, 16, 8}, 3.0f);
    const Volume r = resample_to_shape(v, {8, 8, 4});
    REQUIRE(r.shape == Vec3i{8, 8, 4});
    for (float x : r.data) REQUIRE(x == Catch::Approx(3.0f));
  }

  SECTION("identity resampling returns the input within 1e-6") {
    Rng rng(5);
    Volume v({9, 7, 5});
    for (auto& x : v.data) x = static_cast<float>(rng.normal());
    const Volume r = resample_to_shape(v, v.shape);
    for (std::size_t i = 0; i < v.size(); ++i)
      REQUIRE(std::abs(r.data[i] - v.data[i]) < 1e-6f);
  }

  SECTION("paper-scale resize rescales spacing by (2, 2, 1.5)") {
    Volume v({512, 512, 120}, 1.0f);
    v.spacing = {0.8, 0.8, 2.0};
    const Volume r = resample_to_shape(v, {256, 256, 80});
    REQUIRE(r.shape == Vec3i{256, 256, 80});
    REQUIRE(r.spacing[0] == Catch::Approx(0.8 * 2.0));
    REQUIRE(r.spacing[1] == Catch::Approx(0.8 * 2.0));
    REQUIRE(r.spacing[2] == Catch::Approx(2.0 * 1.5));
  }

  SECTION("masks never gain label values") {
    Rng rng(11);
    LabelMask m({10, 9, 6});
    for (auto& x : m.data) x = rng.uniform() < 0.4 ? 1 : 0;
    for (const Vec3i target : {Vec3i{5, 5, 3}, Vec3i{20, 17, 13}, Vec3i{10, 9, 6}}) {
      const LabelMask r = resample_to_shape(m, target);
      REQUIRE(r.shape == target);
      for (auto x : r.data) REQUIRE((x == 0 || x == 1));
    }
  }

  SECTION("degenerate target rejected") {
    Volume v({4, 4, 4});
    REQUIRE_THROWS_AS(resample_to_shape(v, Vec3i{0, 4, 4}), InvalidArgument);
  }
}

TEST_CASE("intensity normalization is a per-volume z-score") {
  SECTION("mean 10, std 2") {
    Rng rng(2);
    Volume v({12, 12, 6});
    for (auto& x : v.data) x = static_cast<float>(rng.normal(10.0, 2.0));
    const Volume n = normalize_intensity(v);
    double sum = 0, sq = 0;
    for (float x : n.data) {
      sum += x;
      sq += static_cast<double>(x) * x;
    }
    const double mean = sum / static_cast<double>(n.size());
    const double var = sq / static_cast<double>(n.size()) - mean * mean;
    REQUIRE(std::abs(mean) < 1e-4);
    REQUIRE(std::abs(std::sqrt(var) - 1.0) < 1e-4);
  }

  SECTION("constant volume maps to zeros") {
    Volume v({6, 6, 6}, 42.0f);
    const Volume n = normalize_intensity(v);
    for (float x : n.data) REQUIRE(x == 0.0f);
  }

  SECTION("equally frequent {1,2,3} map to population z-scores") {
    Volume v({3, 1, 1});
    v.data = {1.0f, 2.0f, 3.0f};
    const Volume n = normalize_intensity(v);
    REQUIRE(n.data[0] == Catch::Approx(-1.2247).margin(1e-3));
    REQUIRE(n.data[1] == Catch::Approx(0.0).margin(1e-3));
    REQUIRE(n.data[2] == Catch::Approx(1.2247).margin(1e-3));
  }
}

TEST_CASE("make_split sizes and determinism") {
  auto ids_of = [](int n) {
    std::vector<std::string> ids;
    for (int i = 0; i < n; ++i) ids.push_back("c" + std::to_string(i));
    return ids;
  };

  SECTION("10 ids -> (8,1,1)") {
    const auto split = make_split(ids_of(10), SplitRatios{}, 0);
    int tr = 0, va = 0, te = 0;
    for (const auto& [_, s] : split) {
      tr += s == Split::train;
      va += s == Split::val;
      te += s == Split::test;
    }
    REQUIRE(tr == 8);
    REQUIRE(va == 1);
    REQUIRE(te == 1);
  }

  SECTION("310 ids -> (248,31,31)") {
    const auto split = make_split(ids_of(310), SplitRatios{}, 7);
    int tr = 0, va = 0, te = 0;
    for (const auto& [_, s] : split) {
      tr += s == Split::train;
      va += s == Split::val;
      te += s == Split::test;
    }
    REQUIRE(tr == 248);
    REQUIRE(va == 31);
    REQUIRE(te == 31);
  }

  SECTION("pure function of (ids, ratios, seed)") {
    const auto a = make_split(ids_of(23), SplitRatios{}, 99);
    const auto b = make_split(ids_of(23), SplitRatios{}, 99);
    REQUIRE(a == b);
    const auto c = make_split(ids_of(23), SplitRatios{}, 100);
    REQUIRE(a != c);
  }

  SECTION("fewer than 3 cases rejected") {
    REQUIRE_THROWS_AS(make_split(ids_of(2), SplitRatios{}, 0), TooFewCases);
  }
}

namespace {

std::vector<char> make_nifti_bytes(int nx, int ny, int nz, const std::vector<float>& data,
                                   float sx, float sy, float sz) {
  nifti::Nifti1Header h{};
  h.sizeof_hdr = 348;
  h.dim[0] = 3;
  h.dim[1] = static_cast<std::int16_t>(nx);
  h.dim[2] = static_cast<std::int16_t>(ny);
  h.dim[3] = static_cast<std::int16_t>(nz);
  for (int i = 4; i < 8; ++i) h.dim[i] = 1;
  h.datatype = nifti::DT_FLOAT32;
  h.bitpix = 32;
  h.pixdim[1] = sx;
  h.pixdim[2] = sy;
  h.pixdim[3] = sz;
  h.vox_offset = 352.0f;
  h.scl_slope = 1.0f;
  std::memcpy(h.magic, "n+1", 4);
  std::vector<char> bytes(352 + data.size() * 4, 0);
  std::memcpy(bytes.data(), &h, sizeof(h));
  std::memcpy(bytes.data() + 352, data.data(), data.size() * 4);
  return bytes;
}

}  // namespace

TEST_CASE("nifti reader handles plain and gzip files") {
  TempDir tmp("nifti");
  std::vector<float> data(3 * 4 * 2);
  for (std::size_t i = 0; i < data.size(); ++i) data[i] = static_cast<float>(i) * 0.5f;
  const auto bytes = make_nifti_bytes(3, 4, 2, data, 0.9f, 1.1f, 2.5f);

  SECTION("plain .nii") {
    std::ofstream f(tmp.str("t.nii"), std::ios::binary);
    f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    f.close();
    const Volume v = load_volume(tmp.str("t.nii"));
    REQUIRE(v.shape == Vec3i{3, 4, 2});
    REQUIRE(v.spacing[0] == Catch::Approx(0.9));
    REQUIRE(v.spacing[2] == Catch::Approx(2.5));
    for (std::size_t i = 0; i < data.size(); ++i) REQUIRE(v.data[i] == data[i]);
  }

  SECTION(".nii.gz") {
    gzFile g = gzopen(tmp.str("t.nii.gz").c_str(), "wb");
    REQUIRE(g != nullptr);
    REQUIRE(gzwrite(g, bytes.data(), static_cast<unsigned>(bytes.size())) ==
            static_cast<int>(bytes.size()));
    gzclose(g);
    const Volume v = load_volume(tmp.str("t.nii.gz"));
    REQUIRE(v.shape == Vec3i{3, 4, 2});
    for (std::size_t i = 0; i < data.size(); ++i) REQUIRE(v.data[i] == data[i]);
  }

  SECTION("int16 with scaling applied") {
    nifti::Nifti1Header h{};
    h.sizeof_hdr = 348;
    h.dim[0] = 3;
    h.dim[1] = 2;
    h.dim[2] = 2;
    h.dim[3] = 1;
    h.datatype = nifti::DT_INT16;
    h.bitpix = 16;
    h.pixdim[1] = h.pixdim[2] = h.pixdim[3] = 1.0f;
    h.vox_offset = 352.0f;
    h.scl_slope = 0.5f;
    h.scl_inter = 10.0f;
    std::memcpy(h.magic, "n+1", 4);
    const std::int16_t vox[4] = {0, 2, 4, -6};
    std::vector<char> b(352 + 8, 0);
    std::memcpy(b.data(), &h, sizeof(h));
    std::memcpy(b.data() + 352, vox, 8);
    std::ofstream f(tmp.str("i16.nii"), std::ios::binary);
    f.write(b.data(), static_cast<std::streamsize>(b.size()));
    f.close();
    const Volume v = load_volume(tmp.str("i16.nii"));
    REQUIRE(v.data == std::vector<float>{10.0f, 11.0f, 12.0f, 7.0f});
  }

  SECTION("missing file") {
    REQUIRE_THROWS_AS(load_volume(tmp.str("nope.nii")), UnreadableFile);
  }
}

TEST_CASE("manifest json round trip") {
  TempDir tmp("manifest");
  DatasetManifest m;
  m.cases = {{"a", "a_vol.raw3d", "a_mask.raw3d"}, {"b", "b_vol.raw3d", ""}, {"c", "c.raw3d", "cm.raw3d"}};
  m.split = {{"a", Split::train}, {"b", Split::val}, {"c", Split::test}};
  m.seed = 17;
  save_manifest(tmp.str("manifest.json"), m);
  const DatasetManifest r = load_manifest(tmp.str("manifest.json"));
  REQUIRE(r.cases.size() == 3);
  REQUIRE(r.seed == 17);
  REQUIRE(r.split.at("b") == Split::val);
  // relative paths resolved against the manifest directory
  REQUIRE(r.cases[0].volume_path == tmp.str("a_vol.raw3d"));
  REQUIRE(r.cases[1].mask_path.empty());

  SECTION("duplicate ids rejected") {
    DatasetManifest bad = m;
    bad.cases.push_back({"a", "x.raw3d", ""});
    bad.split["a"] = Split::train;
    REQUIRE_THROWS_AS(bad.validate(), InvalidArgument);
  }

  SECTION("split must cover every case") {
    DatasetManifest bad = m;
    bad.split.erase("c");
    REQUIRE_THROWS_AS(bad.validate(), InvalidArgument);
  }
}
