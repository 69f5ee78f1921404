#pragma once

#include <cstdint>
#include <string>

#include "diffprior/grid.hpp"

namespace diffprior {

enum class NiftiDatatype : std::int16_t { uint8 = 2, int16 = 4, float32 = 16 };

/// Header fields this library reads and writes.
struct NiftiHeader {
  Dims dims{1, 1, 1};
  NiftiDatatype datatype = NiftiDatatype::float32;
  Vec3 pixdim{1.0, 1.0, 1.0};
  Affine sform = Affine::Identity();
  std::int16_t sform_code = 1;
  double scl_slope = 1.0;
  double scl_inter = 0.0;
  double vox_offset = 352.0;
  bool big_endian = false;
};

inline constexpr std::size_t kNiftiHeaderSize = 348;
inline constexpr std::size_t kNiftiVoxOffset = 352;

/// Parses a 348-byte header. Throws FormatError naming the offending field.
NiftiHeader parse_nifti_header(const std::string& bytes);

/// Reads a single-file NIfTI-1 volume (.nii, or gzip-compressed). Voxel values
/// are scaled by scl_slope / scl_inter when the slope is non-zero. The affine
/// comes from the sform when sform_code > 0, else from pixdim.
Volume read_nifti(const std::string& path);
NiftiHeader read_nifti_header(const std::string& path);

/// Writes little-endian NIfTI-1 with sform_code 1 and qform_code 0. Paths
/// ending in ".gz" are gzip-compressed. Integer types get a slope/intercept
/// that maps the volume's range onto the type's range.
void write_nifti(const Volume& vol, const std::string& path, NiftiDatatype type = NiftiDatatype::float32);

NiftiDatatype nifti_datatype_from_string(const std::string& name);

}  // namespace diffprior
