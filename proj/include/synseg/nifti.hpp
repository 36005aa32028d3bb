#ifndef SYNSEG_NIFTI_HPP
#define SYNSEG_NIFTI_HPP

#include <zlib.h>

#include <cstdint>
#include <cstring>
#include <string>
#include <vector>

#include "synseg/common.hpp"
#include "synseg/raw3d.hpp"
#include "synseg/volume.hpp"

// Minimal NIfTI-1 reader: dimensions, pixdim spacing, and voxel data only.
// No orientation/affine handling. Handles .nii and .nii.gz, both endiannesses,
// and the common scalar datatypes, converting everything to float32.

namespace synseg {
namespace nifti {

#pragma pack(push, 1)
struct Nifti1Header {
  std::int32_t sizeof_hdr;
  char data_type[10];
  char db_name[18];
  std::int32_t extents;
  std::int16_t session_error;
  char regular;
  char dim_info;
  std::int16_t dim[8];
  float intent_p1, intent_p2, intent_p3;
  std::int16_t intent_code;
  std::int16_t datatype;
  std::int16_t bitpix;
  std::int16_t slice_start;
  float pixdim[8];
  float vox_offset;
  float scl_slope;
  float scl_inter;
  std::int16_t slice_end;
  char slice_code;
  char xyzt_units;
  float cal_max, cal_min;
  float slice_duration;
  float toffset;
  std::int32_t glmax, glmin;
  char descrip[80];
  char aux_file[24];
  std::int16_t qform_code, sform_code;
  float quatern_b, quatern_c, quatern_d;
  float qoffset_x, qoffset_y, qoffset_z;
  float srow_x[4], srow_y[4], srow_z[4];
  char intent_name[16];
  char magic[4];
};
#pragma pack(pop)

static_assert(sizeof(Nifti1Header) == 348, "NIfTI-1 header must be 348 bytes");

enum DataType : std::int16_t {
  DT_UINT8 = 2,
  DT_INT16 = 4,
  DT_INT32 = 8,
  DT_FLOAT32 = 16,
  DT_FLOAT64 = 64,
  DT_INT8 = 256,
  DT_UINT16 = 512,
  DT_UINT32 = 768,
};

namespace detail {

inline bool has_suffix(const std::string& s, const std::string& suf) {
  return s.size() >= suf.size() && s.compare(s.size() - suf.size(), suf.size(), suf) == 0;
}

// gz-transparent whole-file read; zlib's gzread also passes plain files through.
inline std::vector<char> read_possibly_gz(const std::string& path) {
  gzFile f = gzopen(path.c_str(), "rb");
  if (!f) throw UnreadableFile("cannot open: " + path);
  std::vector<char> out;
  char buf[1 << 16];
  int n;
  while ((n = gzread(f, buf, sizeof(buf))) > 0) out.insert(out.end(), buf, buf + n);
  const bool bad = n < 0;
  gzclose(f);
  if (bad) throw UnreadableFile("gzip decode failed: " + path);
  return out;
}

template <class T>
inline T swapped(T v) {
  unsigned char b[sizeof(T)];
  std::memcpy(b, &v, sizeof(T));
  for (std::size_t i = 0; i < sizeof(T) / 2; ++i) std::swap(b[i], b[sizeof(T) - 1 - i]);
  std::memcpy(&v, b, sizeof(T));
  return v;
}

inline void swap_header(Nifti1Header& h) {
  h.sizeof_hdr = swapped(h.sizeof_hdr);
  for (auto& d : h.dim) d = swapped(d);
  h.datatype = swapped(h.datatype);
  h.bitpix = swapped(h.bitpix);
  for (auto& p : h.pixdim) p = swapped(p);
  h.vox_offset = swapped(h.vox_offset);
  h.scl_slope = swapped(h.scl_slope);
  h.scl_inter = swapped(h.scl_inter);
}

template <class T>
inline void convert_voxels(const char* src, std::size_t n, bool swap, std::vector<float>& dst) {
  dst.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    T v;
    std::memcpy(&v, src + i * sizeof(T), sizeof(T));
    if (swap) v = swapped(v);
    dst[i] = static_cast<float>(v);
  }
}

}  // namespace detail

inline bool is_nifti_path(const std::string& path) {
  return detail::has_suffix(path, ".nii") || detail::has_suffix(path, ".nii.gz");
}

inline Volume read_nifti_volume(const std::string& path) {
  const auto bytes = detail::read_possibly_gz(path);
  if (bytes.size() < sizeof(Nifti1Header)) throw UnreadableFile(path + ": truncated NIfTI header");

  Nifti1Header h;
  std::memcpy(&h, bytes.data(), sizeof(h));
  bool swap = false;
  if (h.sizeof_hdr != 348) {
    detail::swap_header(h);
    swap = true;
    if (h.sizeof_hdr != 348) throw UnreadableFile(path + ": not a NIfTI-1 file");
  }
  if (std::strncmp(h.magic, "ni1", 3) == 0)
    throw UnreadableFile(path + ": two-file NIfTI (.hdr/.img) is not supported");
  if (std::strncmp(h.magic, "n+1", 3) != 0)
    throw UnreadableFile(path + ": missing NIfTI-1 magic");

  const int ndim = h.dim[0];
  if (ndim < 3 || ndim > 7) throw UnreadableFile(path + ": unsupported dim[0]=" + std::to_string(ndim));
  for (int a = 4; a <= ndim; ++a)
    if (h.dim[a] > 1) throw UnreadableFile(path + ": 4D+ volumes are not supported");

  Volume v;
  v.shape = {h.dim[1], h.dim[2], h.dim[3]};
  for (int a = 0; a < 3; ++a) {
    const float p = h.pixdim[a + 1];
    v.spacing[a] = p > 0.0f ? static_cast<double>(p) : 1.0;
  }

  const auto nvox = static_cast<std::size_t>(volume_of(v.shape));
  const auto offset = static_cast<std::size_t>(h.vox_offset);
  const std::size_t voxel_bytes = static_cast<std::size_t>(h.bitpix) / 8;
  if (offset < sizeof(Nifti1Header) || bytes.size() < offset + nvox * voxel_bytes)
    throw UnreadableFile(path + ": truncated voxel data");
  const char* src = bytes.data() + offset;

  switch (h.datatype) {
    case DT_UINT8:
      detail::convert_voxels<std::uint8_t>(src, nvox, false, v.data);
      break;
    case DT_INT8:
      detail::convert_voxels<std::int8_t>(src, nvox, false, v.data);
      break;
    case DT_INT16:
      detail::convert_voxels<std::int16_t>(src, nvox, swap, v.data);
      break;
    case DT_UINT16:
      detail::convert_voxels<std::uint16_t>(src, nvox, swap, v.data);
      break;
    case DT_INT32:
      detail::convert_voxels<std::int32_t>(src, nvox, swap, v.data);
      break;
    case DT_UINT32:
      detail::convert_voxels<std::uint32_t>(src, nvox, swap, v.data);
      break;
    case DT_FLOAT32:
      detail::convert_voxels<float>(src, nvox, swap, v.data);
      break;
    case DT_FLOAT64:
      detail::convert_voxels<double>(src, nvox, swap, v.data);
      break;
    default:
      throw UnreadableFile(path + ": unsupported datatype " + std::to_string(h.datatype));
  }

  if (h.scl_slope != 0.0f && !(h.scl_slope == 1.0f && h.scl_inter == 0.0f)) {
    for (auto& x : v.data) x = x * h.scl_slope + h.scl_inter;
  }

  v.validate();
  return v;
}

inline LabelMask read_nifti_mask(const std::string& path, bool binarize = false) {
  const Volume raw = read_nifti_volume(path);
  LabelMask m;
  m.shape = raw.shape;
  m.spacing = raw.spacing;
  m.origin = raw.origin;
  m.data.resize(raw.data.size());
  for (std::size_t i = 0; i < raw.data.size(); ++i) {
    const float x = raw.data[i];
    if (binarize) {
      m.data[i] = x > 0.5f ? 1 : 0;
    } else if (x == 0.0f) {
      m.data[i] = 0;
    } else if (x == 1.0f) {
      m.data[i] = 1;
    } else {
      throw NonBinaryLabels(path + ": mask value " + std::to_string(x) + " outside {0,1}");
    }
  }
  return m;
}

}  // namespace nifti
}  // namespace synseg

#endif
