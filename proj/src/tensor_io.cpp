// SPDX-License-Identifier: Apache-2.0
#include <limits>

#include "binary_io.hpp"
#include "smatch/datasets.hpp"

namespace smatch {
namespace {
constexpr char kMagic[4] = {'S', 'M', 'T', 'F'};
constexpr std::uint32_t kVersion = 1;
}  // namespace

std::vector<unsigned char> encode_tensor(const Tensor& t) {
  for (std::size_t d : t.shape())
    if (d == 0) throw ContractError("SMTF cannot store the empty-dimension shape " + shape_string(t.shape()));
  if (t.ndim() > 255) throw ContractError("SMTF stores at most 255 dimensions");
  detail::ByteWriter w;
  w.bytes(kMagic, 4);
  w.u32(kVersion);
  w.u8(static_cast<std::uint8_t>(t.dtype()));
  w.u8(static_cast<std::uint8_t>(t.ndim()));
  for (std::size_t d : t.shape()) w.u64(d);
  if (t.dtype() == DType::f32)
    for (double v : t.values()) w.f32(static_cast<float>(v));
  else
    for (double v : t.values()) w.f64(v);
  return w.buffer();
}

Tensor decode_tensor(std::vector<unsigned char> bytes) {
  detail::ByteReader r(std::move(bytes));
  if (r.str(4, "magic") != std::string_view(kMagic, 4)) throw FormatError("bad SMTF magic", 0);
  if (const std::uint32_t v = r.u32("version"); v != kVersion)
    throw FormatError("unsupported SMTF version " + std::to_string(v), 4);
  const std::size_t at_dtype = r.offset();
  const std::uint8_t code = r.u8("dtype");
  if (code != 1 && code != 2) throw FormatError("unknown SMTF dtype code " + std::to_string(code), at_dtype);
  const DType dtype = static_cast<DType>(code);
  const std::uint8_t nd = r.u8("ndim");
  Shape shape(nd);
  std::uint64_t numel = 1;
  const std::uint64_t esize = dtype == DType::f32 ? 4 : 8;
  for (auto& d : shape) {
    const std::size_t at = r.offset();
    d = r.u64("dimension");
    if (d == 0) throw FormatError("zero dimension in SMTF header", at);
    if (numel > std::numeric_limits<std::uint64_t>::max() / esize / d)
      throw FormatError("SMTF shape overflows", at);
    numel *= d;
  }
  r.need(numel * esize, "tensor data");
  std::vector<double> v(numel);
  for (auto& e : v) e = dtype == DType::f32 ? double(r.f32("tensor data")) : r.f64("tensor data");
  if (r.remaining() != 0) throw FormatError("trailing bytes after SMTF data", r.offset());
  return Tensor(std::move(shape), std::move(v), dtype);
}

void write_tensor(const std::string& path, const Tensor& t) {
  const auto bytes = encode_tensor(t);
  detail::write_file_atomic(path, bytes.data(), bytes.size());
}

Tensor read_tensor(const std::string& path) { return decode_tensor(detail::read_file(path)); }

}  // namespace smatch
