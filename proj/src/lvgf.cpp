#include "lavig/lvgf.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

namespace lavig::lvgf {

static_assert(std::endian::native == std::endian::little, "LVGF I/O assumes a little-endian host");

const char* failure_message(ParseFailure f) {
  switch (f) {
    case ParseFailure::bad_magic: return "bad magic";
    case ParseFailure::bad_version: return "unsupported version";
    case ParseFailure::truncated_header: return "truncated header";
    case ParseFailure::bad_rank: return "rank out of range";
    case ParseFailure::bad_dims: return "dimension mismatch";
    case ParseFailure::truncated_payload: return "truncated payload";
    case ParseFailure::trailing_bytes: return "trailing bytes after payload";
  }
  return "parse error";
}

ParseError::ParseError(ParseFailure kind, const std::string& context)
    : std::runtime_error(std::string(failure_message(kind)) + " (" + context + ")"), kind_(kind) {}

namespace {

void put_u32(std::vector<unsigned char>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<unsigned char>((v >> (8 * i)) & 0xFFu));
}

std::uint32_t get_u32(const unsigned char* p) {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

}  // namespace

std::vector<unsigned char> encode(const Tensor& t) {
  if (t.rank() < 1 || static_cast<std::uint32_t>(t.rank()) > kMaxRank)
    throw ShapeError("LVGF supports rank 1.." + std::to_string(kMaxRank) + ", got " + shape_str(t.shape()));
  for (auto d : t.shape())
    if (d <= 0 || d > 0xFFFFFFFFll) throw ShapeError("LVGF dims must be positive u32: " + shape_str(t.shape()));
  std::vector<unsigned char> out;
  out.reserve(12 + 4 * t.shape().size() + 4 * t.size());
  out.insert(out.end(), std::begin(kMagic), std::end(kMagic));
  put_u32(out, kVersion);
  put_u32(out, static_cast<std::uint32_t>(t.rank()));
  for (auto d : t.shape()) put_u32(out, static_cast<std::uint32_t>(d));
  const auto* raw = reinterpret_cast<const unsigned char*>(t.data());
  out.insert(out.end(), raw, raw + t.size() * sizeof(float));
  return out;
}

Tensor decode(const std::vector<unsigned char>& bytes, const std::string& context) {
  if (bytes.size() < 4) throw ParseError(ParseFailure::truncated_header, context);
  if (std::memcmp(bytes.data(), kMagic, 4) != 0) throw ParseError(ParseFailure::bad_magic, context);
  if (bytes.size() < 12) throw ParseError(ParseFailure::truncated_header, context);
  if (get_u32(bytes.data() + 4) != kVersion) throw ParseError(ParseFailure::bad_version, context);
  const std::uint32_t rank = get_u32(bytes.data() + 8);
  if (rank < 1 || rank > kMaxRank) throw ParseError(ParseFailure::bad_rank, context);
  const std::size_t header = 12 + 4 * static_cast<std::size_t>(rank);
  if (bytes.size() < header) throw ParseError(ParseFailure::truncated_header, context);
  Shape shape;
  std::uint64_t count = 1;
  for (std::uint32_t i = 0; i < rank; ++i) {
    const std::uint32_t d = get_u32(bytes.data() + 12 + 4 * i);
    if (d == 0) throw ParseError(ParseFailure::bad_dims, context);
    shape.push_back(d);
    count *= d;
    if (count > (std::uint64_t{1} << 40)) throw ParseError(ParseFailure::bad_dims, context);
  }
  const std::uint64_t need = header + count * sizeof(float);
  if (bytes.size() < need) throw ParseError(ParseFailure::truncated_payload, context);
  if (bytes.size() > need) throw ParseError(ParseFailure::trailing_bytes, context);
  std::vector<float> values(count);
  std::memcpy(values.data(), bytes.data() + header, count * sizeof(float));
  return Tensor(std::move(shape), std::move(values));
}

void save_tensor(const std::filesystem::path& path, const Tensor& t) {
  const auto bytes = encode(t);
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("cannot open for writing: " + path.string());
  os.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!os) throw std::runtime_error("write failed: " + path.string());
}

Tensor load_tensor(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open for reading: " + path.string());
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
  return decode(bytes, path.string());
}

}  // namespace lavig::lvgf
