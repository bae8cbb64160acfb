#include "plantid/serialize.hpp"

#include <array>
#include <bit>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>

namespace plantid {

namespace {

template <typename U>
void put_le(std::ostream& os, U value) {
  std::array<char, sizeof(U)> bytes{};
  for (std::size_t i = 0; i < sizeof(U); ++i) {
    bytes[i] = static_cast<char>((value >> (8 * i)) & 0xFF);
  }
  os.write(bytes.data(), bytes.size());
}

template <typename U>
U get_le(std::istream& is) {
  std::array<unsigned char, sizeof(U)> bytes{};
  is.read(reinterpret_cast<char*>(bytes.data()), bytes.size());
  if (is.gcount() != static_cast<std::streamsize>(bytes.size())) {
    throw FormatError("unexpected end of binary payload");
  }
  U value = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i) value |= static_cast<U>(bytes[i]) << (8 * i);
  return value;
}

constexpr std::uint64_t kMaxRank = 8;

}  // namespace

void write_u64(std::ostream& os, std::uint64_t value) { put_le(os, value); }

std::uint64_t read_u64(std::istream& is) { return get_le<std::uint64_t>(is); }

void write_tensor(std::ostream& os, const Tensor& tensor) {
  write_u64(os, tensor.rank());
  for (auto d : tensor.shape()) write_u64(os, d);
  for (float v : tensor.data()) put_le(os, std::bit_cast<std::uint32_t>(v));
  if (!os) throw std::runtime_error("failed writing tensor blob");
}

Tensor read_tensor(std::istream& is) {
  const auto rank = read_u64(is);
  if (rank == 0 || rank > kMaxRank) throw FormatError("tensor blob has invalid rank " + std::to_string(rank));
  Shape shape(rank);
  std::uint64_t total = 1;
  for (auto& d : shape) {
    d = read_u64(is);
    if (d == 0 || d > (std::uint64_t{1} << 32)) throw FormatError("tensor blob has invalid dimension");
    total *= d;
    if (total > (std::uint64_t{1} << 34)) throw FormatError("tensor blob too large");
  }
  std::vector<float> data(total);
  for (auto& v : data) v = std::bit_cast<float>(get_le<std::uint32_t>(is));
  return Tensor(std::move(shape), std::move(data));
}

void write_i32_array(std::ostream& os, std::span<const std::int32_t> values) {
  for (auto v : values) put_le(os, static_cast<std::uint32_t>(v));
}

std::vector<std::int32_t> read_i32_array(std::istream& is, std::size_t count) {
  std::vector<std::int32_t> out(count);
  for (auto& v : out) v = static_cast<std::int32_t>(get_le<std::uint32_t>(is));
  return out;
}

void write_header(std::ostream& os, const nlohmann::json& header) {
  os << header.dump() << '\n';
}

nlohmann::json read_header(std::istream& is) {
  std::string line;
  if (!std::getline(is, line)) throw FormatError("missing JSON header line");
  try {
    return nlohmann::json::parse(line);
  } catch (const nlohmann::json::parse_error& e) {
    throw FormatError(std::string("malformed JSON header: ") + e.what());
  }
}

void expect_format(const nlohmann::json& header, std::string_view format, int version) {
  if (!header.is_object() || header.value("format", std::string{}) != format) {
    throw FormatError("expected a " + std::string(format) + " file");
  }
  const int got = header.value("version", -1);
  if (got != version) {
    throw FormatError(std::string(format) + " version " + std::to_string(got) + " unsupported (expected " +
                      std::to_string(version) + ")");
  }
}

std::ofstream open_for_write(const std::filesystem::path& path) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("cannot open for writing: " + path.string());
  return os;
}

std::ifstream open_for_read(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::invalid_argument("cannot open file: " + path.string());
  return is;
}

}  // namespace plantid
