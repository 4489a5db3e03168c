#include "mvw/mvt.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

static_assert(std::endian::native == std::endian::little,
              "MVT1 I/O assumes a little-endian host");
static_assert(sizeof(float) == 4);

namespace mvw {

namespace {

constexpr char kMagic[4] = {'M', 'V', 'T', '1'};
// Caps the element count so payload sizes stay well inside size_t/stream limits.
constexpr std::uint64_t kMaxNumel = 1ull << 31;

[[noreturn]] void fail(const std::filesystem::path& path, const std::string& what,
                       std::uint64_t byte_offset) {
  std::ostringstream os;
  os << path.string() << ": " << what << " (byte " << byte_offset << ")";
  throw FormatError(os.str());
}

}  // namespace

void writeTensor(const std::filesystem::path& path, const TensorData& tensor) {
  if (tensor.rank() > TensorData::kMaxRank)
    throw FormatError(path.string() + ": tensor rank " + std::to_string(tensor.rank()) +
                      " exceeds 5");
  std::uint64_t numel = 1;
  for (std::size_t i = 0; i < tensor.dims.size(); ++i) {
    numel *= tensor.dims[i];
    if (numel > kMaxNumel) fail(path, "dimension overflow", 5 + 4 * i);
  }
  if (numel != tensor.data.size())
    throw FormatError(path.string() + ": payload size does not match dims");

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot open for writing: " + path.string());
  out.write(kMagic, 4);
  const std::uint8_t rank = static_cast<std::uint8_t>(tensor.rank());
  out.write(reinterpret_cast<const char*>(&rank), 1);
  for (std::uint32_t d : tensor.dims)
    out.write(reinterpret_cast<const char*>(&d), 4);
  if (!tensor.data.empty())
    out.write(reinterpret_cast<const char*>(tensor.data.data()),
              static_cast<std::streamsize>(tensor.data.size() * 4));
  if (!out) throw DataError("write failed: " + path.string());
}

TensorData readTensor(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open: " + path.string());

  char magic[4] = {};
  in.read(magic, 4);
  if (in.gcount() != 4 || std::memcmp(magic, kMagic, 4) != 0)
    fail(path, "bad magic, expected \"MVT1\"", 0);

  std::uint8_t rank = 0;
  in.read(reinterpret_cast<char*>(&rank), 1);
  if (in.gcount() != 1) fail(path, "truncated header", 4);
  if (rank > TensorData::kMaxRank) fail(path, "rank exceeds 5", 4);

  TensorData t;
  t.dims.resize(rank);
  std::uint64_t numel = 1;
  for (int i = 0; i < rank; ++i) {
    const std::uint64_t off = 5 + 4 * static_cast<std::uint64_t>(i);
    in.read(reinterpret_cast<char*>(&t.dims[i]), 4);
    if (in.gcount() != 4) fail(path, "truncated dims", off);
    numel *= t.dims[i];
    if (numel > kMaxNumel) fail(path, "dimension overflow", off);
  }

  const std::uint64_t payload_off = 5 + 4 * static_cast<std::uint64_t>(rank);
  t.data.resize(numel);
  if (numel > 0) {
    in.read(reinterpret_cast<char*>(t.data.data()), static_cast<std::streamsize>(numel * 4));
    if (static_cast<std::uint64_t>(in.gcount()) != numel * 4)
      fail(path, "truncated payload", payload_off + static_cast<std::uint64_t>(in.gcount()));
  }
  // Trailing bytes mean the dims lie about the payload.
  char extra;
  in.read(&extra, 1);
  if (in.gcount() != 0) fail(path, "trailing bytes after payload", payload_off + numel * 4);
  return t;
}

}  // namespace mvw
