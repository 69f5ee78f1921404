#include "doctest.h"

#include <algorithm>
#include <cstring>
#include <filesystem>
#include <fstream>

#include "diffprior/error.hpp"
#include "diffprior/nifti.hpp"
#include "helpers.hpp"

using namespace diffprior;

namespace {

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void dump(const std::string& path, const std::string& bytes) { std::ofstream(path, std::ios::binary) << bytes; }

template <class T>
void poke(std::string& b, std::size_t off, T v) {
  std::memcpy(b.data() + off, &v, sizeof(T));
}

Volume float_volume(const Dims& d, std::uint64_t seed) {
  Rng rng(seed);
  Geometry g{d, {0.5, 1.25, 2.0}, spacing_affine({0.5, 1.25, 2.0})};
  g.affine(0, 3) = -12.5;
  g.affine(1, 3) = 3.75;
  g.affine(0, 1) = 0.125;
  std::vector<double> x(g.size());
  for (auto& v : x) v = static_cast<float>(rng.normal());
  return Volume(g, x);
}

}  // namespace

TEST_CASE("float32 round trip is bit exact") {
  const auto dir = testutil::temp_dir("nifti_rt");
  const Volume v = float_volume({5, 4, 3}, 1);
  for (const std::string name : {"v.nii", "v.nii.gz"}) {
    const std::string path = (dir / name).string();
    write_nifti(v, path);
    const Volume back = read_nifti(path);
    CHECK(back.dims() == v.dims());
    CHECK(back.affine() == v.affine());
    CHECK(back.spacing() == v.spacing());
    CHECK(std::equal(back.data().begin(), back.data().end(), v.data().begin()));
  }
  CHECK(slurp((dir / "v.nii.gz").string()).substr(0, 2) == "\x1f\x8b");
}

TEST_CASE("header layout") {
  const auto dir = testutil::temp_dir("nifti_layout");
  const std::string path = (dir / "h.nii").string();
  write_nifti(float_volume({2, 3, 4}, 2), path);
  const std::string b = slurp(path);
  CHECK(b.size() == 352 + 96);
  std::int32_t size;
  std::memcpy(&size, b.data(), 4);
  CHECK(size == 348);
  CHECK(std::memcmp(b.data() + 344, "n+1\0", 4) == 0);
  float off;
  std::memcpy(&off, b.data() + 108, 4);
  CHECK(off == 352.0f);
  std::int16_t qform, sform;
  std::memcpy(&qform, b.data() + 252, 2);
  std::memcpy(&sform, b.data() + 254, 2);
  CHECK(qform == 0);
  CHECK(sform == 1);
  const auto h = read_nifti_header(path);
  CHECK(h.datatype == NiftiDatatype::float32);
  CHECK(h.dims == Dims{2, 3, 4});
}

TEST_CASE("slope and intercept are applied to stored integers") {
  const auto dir = testutil::temp_dir("nifti_scale");
  const std::string path = (dir / "i.nii").string();
  write_nifti(float_volume({2, 2, 2}, 3), path, NiftiDatatype::int16);
  std::string b = slurp(path);
  poke<float>(b, 112, 2.0f);
  poke<float>(b, 116, 1.0f);
  poke<std::int16_t>(b, 352, 3);
  dump(path, b);
  CHECK(read_nifti(path)[0] == 7.0);
}

TEST_CASE("integer types quantize within one step") {
  const auto dir = testutil::temp_dir("nifti_int");
  const Volume v = float_volume({6, 5, 4}, 4);
  const auto [lo, hi] = std::minmax_element(v.data().begin(), v.data().end());
  for (auto [type, levels] : {std::pair{NiftiDatatype::int16, 65534.0}, std::pair{NiftiDatatype::uint8, 255.0}}) {
    const std::string path = (dir / "q.nii").string();
    write_nifti(v, path, type);
    const Volume back = read_nifti(path);
    const double step = (*hi - *lo) / levels;
    for (std::size_t i = 0; i < v.size(); ++i) CHECK(std::abs(back[i] - v[i]) <= 0.5 * step * (1 + 1e-5));
  }
}

TEST_CASE("big-endian files are read") {
  const auto dir = testutil::temp_dir("nifti_be");
  const std::string path = (dir / "le.nii").string();
  const Volume v = float_volume({3, 2, 2}, 5);
  write_nifti(v, path);
  std::string b = slurp(path);
  auto swap = [&](std::size_t off, std::size_t width) { std::reverse(b.begin() + off, b.begin() + off + width); };
  swap(0, 4);
  for (int i = 0; i < 8; ++i) swap(40 + 2 * i, 2);
  swap(70, 2);
  swap(72, 2);
  for (int i = 0; i < 8; ++i) swap(76 + 4 * i, 4);
  swap(108, 4);
  swap(112, 4);
  swap(116, 4);
  swap(252, 2);
  swap(254, 2);
  for (int i = 0; i < 12; ++i) swap(280 + 4 * i, 4);
  for (std::size_t i = 0; i < v.size(); ++i) swap(352 + 4 * i, 4);
  const std::string be = (dir / "be.nii").string();
  dump(be, b);
  const Volume back = read_nifti(be);
  CHECK(std::equal(back.data().begin(), back.data().end(), v.data().begin()));
  CHECK(back.affine() == v.affine());
  CHECK(read_nifti_header(be).big_endian);
}

TEST_CASE("malformed files are format errors naming the field") {
  const auto dir = testutil::temp_dir("nifti_bad");
  const std::string good = (dir / "g.nii").string();
  write_nifti(float_volume({4, 4, 4}, 6), good);
  const std::string b = slurp(good);

  auto expect = [&](const std::string& bytes, const std::string& field) {
    const std::string p = (dir / "bad.nii").string();
    dump(p, bytes);
    try {
      read_nifti(p);
      FAIL("expected FormatError");
    } catch (const FormatError& e) {
      CHECK(std::string(e.what()).find(field) != std::string::npos);
    }
  };
  expect(b.substr(0, b.size() - 10), "truncated");
  expect(b.substr(0, 200), "sizeof_hdr");
  std::string magic = b;
  magic[345] = 'x';
  expect(magic, "magic");
  std::string dtype = b;
  poke<std::int16_t>(dtype, 70, 64);
  expect(dtype, "datatype");
  CHECK_THROWS_AS(read_nifti((dir / "missing.nii").string()), IoError);
  CHECK_THROWS_AS(write_nifti(float_volume({2, 2, 2}, 7), (dir / "x.nii").string(), static_cast<NiftiDatatype>(64)),
                  InvalidArgument);
  CHECK_THROWS_AS(nifti_datatype_from_string("float64"), InvalidArgument);
}

TEST_CASE("missing sform falls back to pixdim") {
  const auto dir = testutil::temp_dir("nifti_pixdim");
  const std::string path = (dir / "p.nii").string();
  write_nifti(float_volume({2, 2, 2}, 8), path);
  std::string b = slurp(path);
  poke<std::int16_t>(b, 254, 0);
  dump(path, b);
  const Volume v = read_nifti(path);
  CHECK(v.affine() == spacing_affine({0.5, 1.25, 2.0}));
}
