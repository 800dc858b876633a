// checkpoint.cpp - binary checkpoint serialization

#include "qlstm/checkpoint.hpp"

#include <bit>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <vector>

namespace qlstm::train {

static_assert(std::endian::native == std::endian::little,
              "checkpoint format assumes a little-endian host");

namespace {

constexpr char kMagic[4] = {'Q', 'L', 'C', 'K'};

struct Writer {
  std::string buf;
  void raw(const void* p, std::size_t n) {
    buf.append(static_cast<const char*>(p), n);
  }
  void u32(std::uint32_t v) { raw(&v, 4); }
  void u64(std::uint64_t v) { raw(&v, 8); }
};

struct Reader {
  const char* p;
  const char* end;
  std::string path;
  void raw(void* out, std::size_t n) {
    if (static_cast<std::size_t>(end - p) < n)
      throw IoError(path + ": truncated checkpoint");
    std::memcpy(out, p, n);
    p += n;
  }
  std::uint32_t u32() {
    std::uint32_t v;
    raw(&v, 4);
    return v;
  }
  std::uint64_t u64() {
    std::uint64_t v;
    raw(&v, 8);
    return v;
  }
};

}  // namespace

std::uint32_t crc32_ieee(const void* data, std::size_t len, std::uint32_t seed) {
  static const auto table = [] {
    std::array<std::uint32_t, 256> t{};
    for (std::uint32_t i = 0; i < 256; ++i) {
      std::uint32_t c = i;
      for (int k = 0; k < 8; ++k) c = (c & 1) ? 0xedb88320u ^ (c >> 1) : c >> 1;
      t[i] = c;
    }
    return t;
  }();
  std::uint32_t crc = seed ^ 0xffffffffu;
  const auto* b = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < len; ++i) crc = table[(crc ^ b[i]) & 0xff] ^ (crc >> 8);
  return crc ^ 0xffffffffu;
}

void save_checkpoint(const Checkpoint& c, const std::string& path) {
  Writer w;
  w.raw(kMagic, 4);
  w.u32(c.version);
  w.u64(c.arch_hash);
  w.u32(c.epoch);
  w.u64(c.rng_state);
  w.u64(c.opt_steps);
  w.u32(static_cast<std::uint32_t>(c.tensors.size()));
  for (const auto& [name, t] : c.tensors) {
    w.u32(static_cast<std::uint32_t>(name.size()));
    w.raw(name.data(), name.size());
    w.u32(static_cast<std::uint32_t>(t.rank()));
    for (Index d : t.shape()) w.u64(static_cast<std::uint64_t>(d));
  }
  for (const auto& [name, t] : c.tensors)
    w.raw(t.data(), sizeof(float) * static_cast<std::size_t>(t.size()));
  w.u32(crc32_ieee(w.buf.data(), w.buf.size()));

  namespace fs = std::filesystem;
  fs::path target(path);
  if (target.has_parent_path()) fs::create_directories(target.parent_path());
  fs::path tmp = target;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write checkpoint: " + tmp.string());
    out.write(w.buf.data(), static_cast<std::streamsize>(w.buf.size()));
    if (!out) throw IoError("short write: " + tmp.string());
  }
  fs::rename(tmp, target);
}

Checkpoint load_checkpoint(const std::string& path,
                           std::optional<std::uint64_t> expect_hash,
                           bool allow_mismatch) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint: " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  std::string buf = ss.str();
  if (buf.size() < 4 + 4 + 8 + 4 + 8 + 8 + 4 + 4)
    throw IoError(path + ": truncated checkpoint");

  std::uint32_t file_crc;
  std::memcpy(&file_crc, buf.data() + buf.size() - 4, 4);
  if (crc32_ieee(buf.data(), buf.size() - 4) != file_crc)
    throw IoError(path + ": checksum mismatch (corrupt or truncated file)");

  Reader r{buf.data(), buf.data() + buf.size() - 4, path};
  char magic[4];
  r.raw(magic, 4);
  if (std::memcmp(magic, kMagic, 4) != 0)
    throw IoError(path + ": not a checkpoint file");
  Checkpoint c;
  c.version = r.u32();
  if (c.version != 1)
    throw IoError(path + ": unsupported checkpoint version " +
                  std::to_string(c.version));
  c.arch_hash = r.u64();
  c.epoch = r.u32();
  c.rng_state = r.u64();
  c.opt_steps = r.u64();
  if (expect_hash && *expect_hash != c.arch_hash && !allow_mismatch)
    throw ConfigError(path + ": model architecture hash mismatch (pass an explicit "
                             "override to load anyway)");
  const std::uint32_t count = r.u32();
  std::vector<std::pair<std::string, Shape>> dir;
  dir.reserve(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    std::uint32_t len = r.u32();
    std::string name(len, '\0');
    r.raw(name.data(), len);
    std::uint32_t ndim = r.u32();
    Shape shape(ndim);
    for (std::uint32_t d = 0; d < ndim; ++d)
      shape[d] = static_cast<Index>(r.u64());
    dir.emplace_back(std::move(name), std::move(shape));
  }
  for (auto& [name, shape] : dir) {
    Tensor<float> t(shape);
    r.raw(t.data(), sizeof(float) * static_cast<std::size_t>(t.size()));
    c.tensors.emplace(std::move(name), std::move(t));
  }
  if (r.p != r.end) throw IoError(path + ": trailing bytes in checkpoint");
  return c;
}

}  // namespace qlstm::train
