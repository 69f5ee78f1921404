#include "diffprior/nifti.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <limits>
#include <vector>

#include <zlib.h>

#include "diffprior/error.hpp"

namespace diffprior {

namespace {

bool ends_with(const std::string& s, const std::string& suffix) {
  return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path + "'");
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (bytes.size() >= 2 && static_cast<unsigned char>(bytes[0]) == 0x1f && static_cast<unsigned char>(bytes[1]) == 0x8b) {
    gzFile gz = gzopen(path.c_str(), "rb");
    if (!gz) throw IoError("cannot open '" + path + "'");
    std::string out;
    char buf[1 << 16];
    int n;
    while ((n = gzread(gz, buf, sizeof buf)) > 0) out.append(buf, static_cast<std::size_t>(n));
    const bool failed = n < 0;
    gzclose(gz);
    if (failed) throw FormatError("'" + path + "': corrupt gzip stream");
    return out;
  }
  return bytes;
}

void write_file(const std::string& path, const std::string& bytes) {
  if (ends_with(path, ".gz")) {
    gzFile gz = gzopen(path.c_str(), "wb");
    if (!gz) throw IoError("cannot write '" + path + "'");
    const int n = gzwrite(gz, bytes.data(), static_cast<unsigned>(bytes.size()));
    if (gzclose(gz) != Z_OK || n != static_cast<int>(bytes.size())) throw IoError("cannot write '" + path + "'");
    return;
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write '" + path + "'");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("cannot write '" + path + "'");
}

template <class T>
T load(const std::string& b, std::size_t offset, bool swap) {
  T v;
  std::memcpy(&v, b.data() + offset, sizeof(T));
  if (swap) {
    auto* p = reinterpret_cast<unsigned char*>(&v);
    std::reverse(p, p + sizeof(T));
  }
  return v;
}

template <class T>
void store(std::string& b, std::size_t offset, T v) {
  static_assert(std::endian::native == std::endian::little, "writer assumes a little-endian host");
  std::memcpy(b.data() + offset, &v, sizeof(T));
}

std::size_t bytes_per_voxel(NiftiDatatype t) {
  switch (t) {
    case NiftiDatatype::uint8: return 1;
    case NiftiDatatype::int16: return 2;
    case NiftiDatatype::float32: return 4;
  }
  return 0;
}

}  // namespace

NiftiDatatype nifti_datatype_from_string(const std::string& name) {
  if (name == "float32") return NiftiDatatype::float32;
  if (name == "int16") return NiftiDatatype::int16;
  if (name == "uint8") return NiftiDatatype::uint8;
  throw InvalidArgument("unsupported NIfTI datatype '" + name + "'");
}

NiftiHeader parse_nifti_header(const std::string& b) {
  if (b.size() < kNiftiHeaderSize) throw FormatError("NIfTI header truncated (sizeof_hdr)");
  NiftiHeader h;
  const auto size_le = load<std::int32_t>(b, 0, false);
  bool swap = false;
  if (size_le != 348) {
    if (load<std::int32_t>(b, 0, true) != 348) throw FormatError("NIfTI field sizeof_hdr is not 348");
    swap = true;
  }
  h.big_endian = (std::endian::native == std::endian::little) == swap;
  if (std::memcmp(b.data() + 344, "n+1\0", 4) != 0) throw FormatError("NIfTI field magic is not \"n+1\"");

  const auto ndim = load<std::int16_t>(b, 40, swap);
  if (ndim < 1 || ndim > 7) throw FormatError("NIfTI field dim[0] out of range");
  for (int a = 0; a < 3; ++a) {
    const std::int16_t n = a < ndim ? load<std::int16_t>(b, 42 + 2 * a, swap) : 1;
    if (n < 1) throw FormatError("NIfTI field dim[" + std::to_string(a + 1) + "] must be >= 1");
    h.dims[a] = static_cast<std::size_t>(n);
  }
  for (int a = 3; a < ndim; ++a)
    if (load<std::int16_t>(b, 42 + 2 * a, swap) > 1) throw FormatError("NIfTI field dim: only 3D volumes are supported");

  const auto dt = load<std::int16_t>(b, 70, swap);
  if (dt != 2 && dt != 4 && dt != 16) throw FormatError("NIfTI field datatype " + std::to_string(dt) + " is unsupported");
  h.datatype = static_cast<NiftiDatatype>(dt);
  const auto bitpix = load<std::int16_t>(b, 72, swap);
  if (static_cast<std::size_t>(bitpix) != 8 * bytes_per_voxel(h.datatype))
    throw FormatError("NIfTI field bitpix does not match datatype");

  for (int a = 0; a < 3; ++a) {
    const double p = std::abs(load<float>(b, 80 + 4 * a, swap));
    h.pixdim[a] = p > 0.0 ? p : 1.0;
  }
  h.vox_offset = load<float>(b, 108, swap);
  if (h.vox_offset < static_cast<double>(kNiftiHeaderSize)) throw FormatError("NIfTI field vox_offset is below 348");
  h.scl_slope = load<float>(b, 112, swap);
  h.scl_inter = load<float>(b, 116, swap);
  h.sform_code = load<std::int16_t>(b, 254, swap);
  h.sform = Affine::Identity();
  if (h.sform_code > 0) {
    for (int r = 0; r < 3; ++r)
      for (int c = 0; c < 4; ++c) h.sform(r, c) = load<float>(b, 280 + 16 * r + 4 * c, swap);
  } else {
    for (int a = 0; a < 3; ++a) h.sform(a, a) = h.pixdim[a];
  }
  return h;
}

NiftiHeader read_nifti_header(const std::string& path) { return parse_nifti_header(read_file(path)); }

Volume read_nifti(const std::string& path) {
  const std::string b = read_file(path);
  NiftiHeader h;
  try {
    h = parse_nifti_header(b);
  } catch (const FormatError& e) {
    throw FormatError("'" + path + "': " + e.what());
  }
  const bool swap = h.big_endian == (std::endian::native == std::endian::little);
  const std::size_t n = voxel_count(h.dims);
  const auto offset = static_cast<std::size_t>(h.vox_offset);
  const std::size_t bpv = bytes_per_voxel(h.datatype);
  if (b.size() < offset + n * bpv) throw FormatError("'" + path + "': NIfTI payload truncated");

  const bool scaled = h.scl_slope != 0.0 && std::isfinite(h.scl_slope);
  std::vector<double> v(n);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t at = offset + i * bpv;
    double raw = 0.0;
    switch (h.datatype) {
      case NiftiDatatype::uint8: raw = static_cast<unsigned char>(b[at]); break;
      case NiftiDatatype::int16: raw = load<std::int16_t>(b, at, swap); break;
      case NiftiDatatype::float32: raw = load<float>(b, at, swap); break;
    }
    v[i] = scaled ? raw * h.scl_slope + h.scl_inter : raw;
  }
  Geometry g{h.dims, h.pixdim, h.sform};
  try {
    return Volume(g, std::move(v));
  } catch (const Error& e) {
    throw FormatError("'" + path + "': " + e.what());
  }
}

void write_nifti(const Volume& vol, const std::string& path, NiftiDatatype type) {
  if (type != NiftiDatatype::uint8 && type != NiftiDatatype::int16 && type != NiftiDatatype::float32)
    throw InvalidArgument("unsupported NIfTI datatype");
  for (std::size_t n : vol.dims())
    if (n > static_cast<std::size_t>(std::numeric_limits<std::int16_t>::max()))
      throw InvalidArgument("volume too large for NIfTI-1 dims");
  const std::size_t n = vol.size();
  const std::size_t bpv = bytes_per_voxel(type);
  std::string b(kNiftiVoxOffset + n * bpv, '\0');

  store<std::int32_t>(b, 0, 348);
  store<std::int16_t>(b, 40, 3);
  for (int a = 0; a < 3; ++a) store<std::int16_t>(b, 42 + 2 * a, static_cast<std::int16_t>(vol.dims()[a]));
  for (int a = 3; a < 7; ++a) store<std::int16_t>(b, 42 + 2 * a, 1);
  store<std::int16_t>(b, 70, static_cast<std::int16_t>(type));
  store<std::int16_t>(b, 72, static_cast<std::int16_t>(8 * bpv));
  store<float>(b, 76, 1.0f);
  for (int a = 0; a < 3; ++a) store<float>(b, 80 + 4 * a, static_cast<float>(vol.spacing()[a]));
  store<float>(b, 108, static_cast<float>(kNiftiVoxOffset));
  b[123] = 2;  // xyzt_units: mm
  store<std::int16_t>(b, 252, 0);
  store<std::int16_t>(b, 254, 1);
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 4; ++c) store<float>(b, 280 + 16 * r + 4 * c, static_cast<float>(vol.affine()(r, c)));
  std::memcpy(b.data() + 344, "n+1\0", 4);

  const auto data = vol.data();
  double slope = 1.0, inter = 0.0;
  if (type != NiftiDatatype::float32) {
    const auto [lo, hi] = std::minmax_element(data.begin(), data.end());
    const double qmin = type == NiftiDatatype::uint8 ? 0.0 : -32767.0;
    const double qmax = type == NiftiDatatype::uint8 ? 255.0 : 32767.0;
    slope = *hi > *lo ? (*hi - *lo) / (qmax - qmin) : 1.0;
    inter = *lo - qmin * slope;
    // The header stores float32, so quantize against the stored values.
    slope = static_cast<float>(slope);
    inter = static_cast<float>(inter);
  }
  store<float>(b, 112, static_cast<float>(slope));
  store<float>(b, 116, static_cast<float>(inter));

  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t at = kNiftiVoxOffset + i * bpv;
    switch (type) {
      case NiftiDatatype::float32: store<float>(b, at, static_cast<float>(data[i])); break;
      case NiftiDatatype::int16: {
        const double q = std::clamp(std::round((data[i] - inter) / slope), -32768.0, 32767.0);
        store<std::int16_t>(b, at, static_cast<std::int16_t>(q));
        break;
      }
      case NiftiDatatype::uint8: {
        const double q = std::clamp(std::round((data[i] - inter) / slope), 0.0, 255.0);
        b[at] = static_cast<char>(static_cast<unsigned char>(q));
        break;
      }
    }
  }
  write_file(path, b);
}

}  // namespace diffprior
