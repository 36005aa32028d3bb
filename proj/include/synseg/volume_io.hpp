#ifndef SYNSEG_VOLUME_IO_HPP
#define SYNSEG_VOLUME_IO_HPP

#include <optional>
#include <string>

#include "synseg/nifti.hpp"
#include "synseg/raw3d.hpp"
#include "synseg/volume.hpp"

namespace synseg {

struct LoadedCase {
  Volume volume;
  std::optional<LabelMask> mask;
};

inline Volume load_volume(const std::string& path) {
  if (nifti::is_nifti_path(path)) return nifti::read_nifti_volume(path);
  return read_raw3d_volume(path);
}

inline LabelMask load_mask(const std::string& path, bool binarize = false) {
  if (nifti::is_nifti_path(path)) return nifti::read_nifti_mask(path, binarize);
  return read_raw3d_mask(path, binarize);
}

inline LoadedCase load_case(const std::string& volume_path,
                            const std::optional<std::string>& mask_path = std::nullopt,
                            bool binarize = false) {
  LoadedCase c;
  c.volume = load_volume(volume_path);
  if (mask_path && !mask_path->empty()) {
    c.mask = load_mask(*mask_path, binarize);
    c.mask->validate_against(c.volume);
  }
  return c;
}

inline void save_case(const std::string& volume_path, const Volume& v,
                      const std::optional<std::string>& mask_path = std::nullopt,
                      const LabelMask* mask = nullptr) {
  write_raw3d(volume_path, v);
  if (mask_path && mask) write_raw3d(*mask_path, *mask);
}

}  // namespace synseg

#endif
