#include "vidseq/checkpoint.hpp"

#include <zlib.h>

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include "vidseq/error.hpp"

namespace vidseq {

static_assert(std::endian::native == std::endian::little, "container I/O assumes a little-endian host");

namespace {

constexpr char kMagic[4] = {'O', 'V', 'I', 'D'};

class Writer {
 public:
  template <typename T>
  void pod(T v) {
    const auto* p = reinterpret_cast<const std::uint8_t*>(&v);
    bytes.insert(bytes.end(), p, p + sizeof(T));
  }
  void raw(const void* data, std::size_t n) {
    const auto* p = static_cast<const std::uint8_t*>(data);
    bytes.insert(bytes.end(), p, p + n);
  }
  std::vector<std::uint8_t> bytes;
};

class Reader {
 public:
  Reader(const std::vector<std::uint8_t>& b, std::size_t limit) : bytes_(b), limit_(limit) {}
  template <typename T>
  T pod() {
    T v;
    raw(&v, sizeof(T));
    return v;
  }
  void raw(void* out, std::size_t n) {
    if (n > limit_ - pos_) throw FormatError("container truncated");
    std::memcpy(out, bytes_.data() + pos_, n);
    pos_ += n;
  }
  std::size_t remaining() const { return limit_ - pos_; }

 private:
  const std::vector<std::uint8_t>& bytes_;
  std::size_t limit_;
  std::size_t pos_ = 0;
};

std::uint32_t crc_of(const std::uint8_t* data, std::size_t n) {
  uLong crc = crc32(0L, Z_NULL, 0);
  // zlib takes uInt lengths
  while (n > 0) {
    const auto chunk = static_cast<uInt>(std::min<std::size_t>(n, 1u << 30));
    crc = crc32(crc, data, chunk);
    data += chunk;
    n -= chunk;
  }
  return static_cast<std::uint32_t>(crc);
}

}  // namespace

const TensorRecord& Container::tensor(const std::string& name) const {
  for (const auto& t : tensors)
    if (t.name == name) return t;
  throw FormatError("container has no tensor named " + name);
}

const std::string& Container::value(const std::string& key) const {
  auto it = config.find(key);
  if (it == config.end()) throw FormatError("container config has no key " + key);
  return it->second;
}

std::string encode_config(const std::map<std::string, std::string>& kv) {
  std::string out;
  for (const auto& [k, v] : kv) {
    if (k.find_first_of("=\n") != std::string::npos || v.find('\n') != std::string::npos) {
      throw FormatError("config key/value contains a reserved character: " + k);
    }
    out += k + "=" + v + "\n";
  }
  return out;
}

std::map<std::string, std::string> decode_config(const std::string& text) {
  std::map<std::string, std::string> kv;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw FormatError("config line without '=': " + line);
    auto trim = [](std::string s) {
      const auto b = s.find_first_not_of(" \t\r");
      const auto e = s.find_last_not_of(" \t\r");
      return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
    };
    kv[trim(line.substr(0, eq))] = trim(line.substr(eq + 1));
  }
  return kv;
}

std::vector<std::uint8_t> serialize(const Container& c) {
  Writer w;
  w.raw(kMagic, 4);
  w.pod<std::uint32_t>(kContainerVersion);
  const std::string cfg = encode_config(c.config);
  w.pod<std::uint64_t>(cfg.size());
  w.raw(cfg.data(), cfg.size());
  w.pod<std::uint64_t>(c.tensors.size());
  for (const auto& t : c.tensors) {
    w.pod<std::uint32_t>(static_cast<std::uint32_t>(t.name.size()));
    w.raw(t.name.data(), t.name.size());
    w.pod<std::uint8_t>(static_cast<std::uint8_t>(t.dtype()));
    w.pod<std::uint32_t>(static_cast<std::uint32_t>(t.shape.size()));
    for (auto d : t.shape) w.pod<std::uint64_t>(d);
    std::visit(
        [&](const auto& v) {
          if (v.size() != numel(t.shape)) throw DimensionError("tensor " + t.name + " length does not match shape");
          w.raw(v.data(), v.size() * sizeof(v[0]));
        },
        t.values);
  }
  w.pod<std::uint32_t>(crc_of(w.bytes.data(), w.bytes.size()));
  return std::move(w.bytes);
}

Container deserialize(const std::vector<std::uint8_t>& bytes) {
  if (bytes.size() < 4 + 4 + 8 + 8 + 4) throw FormatError("container too short");
  const std::size_t body = bytes.size() - 4;
  std::uint32_t stored;
  std::memcpy(&stored, bytes.data() + body, 4);
  if (stored != crc_of(bytes.data(), body)) throw FormatError("container checksum mismatch");
  Reader r(bytes, body);
  char magic[4];
  r.raw(magic, 4);
  if (std::memcmp(magic, kMagic, 4) != 0) throw FormatError("bad magic bytes");
  const auto version = r.pod<std::uint32_t>();
  if (version != kContainerVersion) throw FormatError("unsupported container version " + std::to_string(version));
  const auto cfg_len = r.pod<std::uint64_t>();
  if (cfg_len > r.remaining()) throw FormatError("container truncated");
  std::string cfg(cfg_len, '\0');
  r.raw(cfg.data(), cfg.size());
  Container c;
  c.config = decode_config(cfg);
  const auto count = r.pod<std::uint64_t>();
  for (std::uint64_t i = 0; i < count; ++i) {
    TensorRecord t;
    const auto name_len = r.pod<std::uint32_t>();
    if (name_len > r.remaining()) throw FormatError("container truncated");
    t.name.resize(name_len);
    r.raw(t.name.data(), name_len);
    const auto dtype = r.pod<std::uint8_t>();
    const auto rank = r.pod<std::uint32_t>();
    if (rank > 16) throw FormatError("tensor rank too large");
    for (std::uint32_t k = 0; k < rank; ++k) t.shape.push_back(r.pod<std::uint64_t>());
    const std::size_t n = numel(t.shape);
    if (dtype == static_cast<std::uint8_t>(DType::F32)) {
      if (n > r.remaining() / 4) throw FormatError("container truncated");
      std::vector<float> v(n);
      r.raw(v.data(), n * 4);
      t.values = std::move(v);
    } else if (dtype == static_cast<std::uint8_t>(DType::F64)) {
      if (n > r.remaining() / 8) throw FormatError("container truncated");
      std::vector<double> v(n);
      r.raw(v.data(), n * 8);
      t.values = std::move(v);
    } else {
      throw FormatError("unknown dtype tag " + std::to_string(dtype));
    }
    c.tensors.push_back(std::move(t));
  }
  if (r.remaining() != 0) throw FormatError("trailing bytes before checksum");
  return c;
}

void write_container(const std::filesystem::path& path, const Container& c) {
  const auto bytes = serialize(c);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw InputError("cannot open " + path.string() + " for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw InputError("failed writing " + path.string());
}

Container read_container(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return deserialize(bytes);
}

}  // namespace vidseq
