#include "ndlab/checkpoint.hpp"

#include <cstdint>
#include <cstring>
#include <fstream>

#include "ndlab/errors.hpp"

namespace ndlab {

namespace {

constexpr char kMagic[8] = {'N', 'D', 'L', 'A', 'B', 'C', 'K', '1'};

void write_u64(std::ostream& out, std::uint64_t v) {
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
  out.write(reinterpret_cast<const char*>(b), 8);
}

std::uint64_t read_u64(std::istream& in, const std::string& path) {
  unsigned char b[8];
  if (!in.read(reinterpret_cast<char*>(b), 8))
    throw IoError(path + ": truncated checkpoint");
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  return v;
}

void write_doubles(std::ostream& out, const std::vector<double>& v) {
  for (double d : v) {
    std::uint64_t bits;
    std::memcpy(&bits, &d, 8);
    write_u64(out, bits);
  }
}

}  // namespace

void save_checkpoint(const std::string& path, const std::string& header,
                     const ParamStore& params) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open " + path + " for writing");
  out.write(kMagic, sizeof(kMagic));
  write_u64(out, header.size());
  out.write(header.data(), static_cast<std::streamsize>(header.size()));
  write_u64(out, params.size());
  for (const auto& e : params.entries()) {
    write_u64(out, e.name.size());
    out.write(e.name.data(), static_cast<std::streamsize>(e.name.size()));
    out.put(e.trainable ? 1 : 0);
    write_u64(out, static_cast<std::uint64_t>(e.value.rows));
    write_u64(out, static_cast<std::uint64_t>(e.value.cols));
    write_doubles(out, e.value.data);
  }
  if (!out) throw IoError("failed while writing " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path + " for reading");
  char magic[8];
  if (!in.read(magic, 8) || std::memcmp(magic, kMagic, 8) != 0)
    throw IoError(path + ": not a checkpoint file (bad magic)");
  Checkpoint ck;
  const std::uint64_t hlen = read_u64(in, path);
  ck.header.resize(hlen);
  if (hlen && !in.read(ck.header.data(), static_cast<std::streamsize>(hlen)))
    throw IoError(path + ": truncated checkpoint header");
  const std::uint64_t count = read_u64(in, path);
  for (std::uint64_t t = 0; t < count; ++t) {
    const std::uint64_t nlen = read_u64(in, path);
    std::string name(nlen, '\0');
    if (nlen && !in.read(name.data(), static_cast<std::streamsize>(nlen)))
      throw IoError(path + ": truncated tensor name");
    const int flag = in.get();
    if (flag != 0 && flag != 1) throw IoError(path + ": bad trainable flag");
    const auto rows = static_cast<int>(read_u64(in, path));
    const auto cols = static_cast<int>(read_u64(in, path));
    Mat value(rows, cols);
    for (auto& d : value.data) {
      const std::uint64_t bits = read_u64(in, path);
      std::memcpy(&d, &bits, 8);
    }
    ck.params.add(name, std::move(value), flag == 1);
  }
  return ck;
}

}  // namespace ndlab
