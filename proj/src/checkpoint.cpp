#include "voiceveil/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <stdexcept>

namespace veil::checkpoint {

namespace {

constexpr char kMagic[4] = {'V', 'V', 'C', 'P'};

void write_u32(std::ostream& s, uint32_t v) {
  s.write(reinterpret_cast<const char*>(&v), sizeof(v));
}

void write_u64(std::ostream& s, uint64_t v) {
  s.write(reinterpret_cast<const char*>(&v), sizeof(v));
}

void write_str(std::ostream& s, const std::string& v) {
  write_u32(s, static_cast<uint32_t>(v.size()));
  s.write(v.data(), static_cast<std::streamsize>(v.size()));
}

uint32_t read_u32(std::istream& s) {
  uint32_t v = 0;
  s.read(reinterpret_cast<char*>(&v), sizeof(v));
  return v;
}

uint64_t read_u64(std::istream& s) {
  uint64_t v = 0;
  s.read(reinterpret_cast<char*>(&v), sizeof(v));
  return v;
}

std::string read_str(std::istream& s) {
  const uint32_t n = read_u32(s);
  std::string v(n, '\0');
  s.read(v.data(), n);
  return v;
}

}  // namespace

void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("save_checkpoint: cannot open " + path);
  f.write(kMagic, 4);
  write_u32(f, ckpt.version);
  write_str(f, ckpt.component);
  write_str(f, ckpt.config.dump());
  write_u32(f, static_cast<uint32_t>(ckpt.arrays.size()));
  for (const auto& [name, m] : ckpt.arrays) {
    write_str(f, name);
    write_u64(f, static_cast<uint64_t>(m.rows()));
    write_u64(f, static_cast<uint64_t>(m.cols()));
    f.write(reinterpret_cast<const char*>(m.data()),
            static_cast<std::streamsize>(sizeof(double) * static_cast<size_t>(m.size())));
  }
  if (!f) throw std::runtime_error("save_checkpoint: write failed: " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("load_checkpoint: cannot open " + path);
  char magic[4];
  f.read(magic, 4);
  if (!f || std::memcmp(magic, kMagic, 4) != 0) {
    throw std::runtime_error("load_checkpoint: bad magic in " + path);
  }
  Checkpoint ckpt;
  ckpt.version = read_u32(f);
  if (ckpt.version != kSchemaVersion) {
    throw std::runtime_error("load_checkpoint: unsupported schema version " +
                             std::to_string(ckpt.version) + " in " + path);
  }
  ckpt.component = read_str(f);
  ckpt.config = nlohmann::json::parse(read_str(f));
  const uint32_t count = read_u32(f);
  for (uint32_t i = 0; i < count; ++i) {
    const std::string name = read_str(f);
    const uint64_t rows = read_u64(f), cols = read_u64(f);
    Mat m(static_cast<long>(rows), static_cast<long>(cols));
    f.read(reinterpret_cast<char*>(m.data()),
           static_cast<std::streamsize>(sizeof(double) * rows * cols));
    ckpt.arrays[name] = std::move(m);
  }
  if (!f) throw std::runtime_error("load_checkpoint: truncated file " + path);
  return ckpt;
}

}  // namespace veil::checkpoint
