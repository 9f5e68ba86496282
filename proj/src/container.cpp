#include "gpo/container.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <vector>

namespace gpo::io {

static_assert(std::endian::native == std::endian::little,
              "container layout assumes a little-endian host");

namespace {

constexpr char kMagic[4] = {'G', 'P', 'O', 'T'};
constexpr uint32_t kVersion = 1;
constexpr uint8_t kDtypeF64 = 1;

void append(std::vector<char>& buf, const void* data, size_t len) {
  const char* bytes = static_cast<const char*>(data);
  buf.insert(buf.end(), bytes, bytes + len);
}

}  // namespace

void write_gpot(const std::string& path, const Tensor& t) {
  std::vector<char> buf;
  append(buf, kMagic, 4);
  append(buf, &kVersion, 4);
  buf.push_back(static_cast<char>(kDtypeF64));
  buf.push_back(static_cast<char>(t.shape.size()));
  for (int64_t e : t.shape) {
    const uint64_t dim = static_cast<uint64_t>(e);
    append(buf, &dim, 8);
  }
  append(buf, t.data.data(), t.data.size() * sizeof(double));
  const uint32_t crc = crc32(buf.data(), buf.size());
  append(buf, &crc, 4);

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path + " for writing");
  out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  if (!out) throw IoError("short write to " + path);
}

Tensor read_gpot(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  std::vector<char> buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  in.close();

  auto fail = [&](size_t offset, const std::string& what) {
    throw IoError(path + ": " + what + " at byte " + std::to_string(offset));
  };
  auto need = [&](size_t offset, size_t len, const char* what) {
    if (buf.size() < offset + len) fail(offset, std::string("truncated ") + what);
  };

  need(0, 10, "header");
  if (std::memcmp(buf.data(), kMagic, 4) != 0) fail(0, "bad magic");
  uint32_t version = 0;
  std::memcpy(&version, buf.data() + 4, 4);
  if (version != kVersion) fail(4, "unsupported version " + std::to_string(version));
  const uint8_t dtype = static_cast<uint8_t>(buf[8]);
  if (dtype != kDtypeF64) fail(8, "unsupported dtype code " + std::to_string(dtype));
  const uint8_t rank = static_cast<uint8_t>(buf[9]);
  if (rank == 0 || rank > 8) fail(9, "unsupported rank " + std::to_string(rank));

  size_t offset = 10;
  std::vector<int64_t> shape(rank);
  need(offset, 8ULL * rank, "extents");
  int64_t numel = 1;
  for (uint8_t a = 0; a < rank; ++a) {
    uint64_t dim = 0;
    std::memcpy(&dim, buf.data() + offset, 8);
    if (dim > (1ULL << 40)) fail(offset, "implausible extent " + std::to_string(dim));
    shape[a] = static_cast<int64_t>(dim);
    numel *= shape[a];
    offset += 8;
  }

  const size_t payload = static_cast<size_t>(numel) * sizeof(double);
  need(offset, payload, "payload");
  if (buf.size() != offset + payload + 4)
    fail(offset + payload,
         "expected a trailing checksum, file has " + std::to_string(buf.size()) + " bytes");

  uint32_t stored = 0;
  std::memcpy(&stored, buf.data() + offset + payload, 4);
  const uint32_t computed = crc32(buf.data(), offset + payload);
  if (stored != computed)
    throw IoError(path + ": checksum mismatch at byte " + std::to_string(offset + payload) +
                  " (stored " + std::to_string(stored) + ", computed " +
                  std::to_string(computed) + ")");

  Tensor t = Tensor::zeros(shape);
  std::memcpy(t.data.data(), buf.data() + offset, payload);
  return t;
}

void write_text(const std::string& path, const std::string& body) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot open " + path + " for writing");
  out << body;
  if (!out) throw IoError("short write to " + path);
}

std::string read_text(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path);
  return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

}  // namespace gpo::io
