#include "stjla/checkpoint.hpp"

#include <array>
#include <bit>
#include <cstring>
#include <fstream>

namespace stjla {

namespace {

constexpr std::array<char, 8> kMagic = {'S', 'T', 'J', 'L', 'A', 'C', 'K', 'P'};
constexpr std::uint32_t kVersion = 1;

template <typename T>
T byteswap_if_big(T v) {
  if constexpr (std::endian::native == std::endian::little) {
    return v;
  } else {
    auto bytes = std::bit_cast<std::array<unsigned char, sizeof(T)>>(v);
    std::reverse(bytes.begin(), bytes.end());
    return std::bit_cast<T>(bytes);
  }
}

class Writer {
 public:
  explicit Writer(const std::filesystem::path& path) : out_(path, std::ios::binary | std::ios::trunc) {
    if (!out_) throw FormatError("cannot open '" + path.string() + "' for writing");
  }
  template <typename T>
  void put(T v) {
    v = byteswap_if_big(v);
    out_.write(reinterpret_cast<const char*>(&v), sizeof(T));
  }
  void put_string(const std::string& s) {
    put<std::uint32_t>(static_cast<std::uint32_t>(s.size()));
    out_.write(s.data(), static_cast<std::streamsize>(s.size()));
  }
  void put_doubles(const Vector& v) {
    for (Index i = 0; i < v.size(); ++i) put<double>(static_cast<double>(v[i]));
  }
  void finish(const std::filesystem::path& path) {
    out_.flush();
    if (!out_) throw FormatError("write to '" + path.string() + "' failed");
  }

 private:
  std::ofstream out_;
};

class Reader {
 public:
  explicit Reader(const std::filesystem::path& path) : path_(path), in_(path, std::ios::binary) {
    if (!in_) throw FormatError("cannot open checkpoint '" + path.string() + "'");
  }
  template <typename T>
  T get() {
    T v;
    in_.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!in_) throw FormatError("truncated checkpoint '" + path_.string() + "'");
    return byteswap_if_big(v);
  }
  std::string get_string() {
    const auto n = get<std::uint32_t>();
    std::string s(n, '\0');
    in_.read(s.data(), n);
    if (!in_) throw FormatError("truncated checkpoint '" + path_.string() + "'");
    return s;
  }
  Vector get_doubles(std::uint64_t n) {
    Vector v(static_cast<Index>(n));
    for (std::uint64_t i = 0; i < n; ++i) v[static_cast<Index>(i)] = static_cast<Scalar>(get<double>());
    return v;
  }
  void read_raw(char* dst, std::size_t n) {
    in_.read(dst, static_cast<std::streamsize>(n));
    if (!in_) throw FormatError("truncated checkpoint '" + path_.string() + "'");
  }

 private:
  std::filesystem::path path_;
  std::ifstream in_;
};

}  // namespace

const NamedArray* Checkpoint::find(const std::string& name) const {
  for (const NamedArray& a : arrays) {
    if (a.name == name) return &a;
  }
  return nullptr;
}

std::optional<std::string> Checkpoint::meta(const std::string& key) const {
  for (const auto& [k, v] : metadata) {
    if (k == key) return v;
  }
  return std::nullopt;
}

void write_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  // Write to a sibling temp file first so a crash never leaves a torn checkpoint.
  const std::filesystem::path tmp = path.string() + ".tmp";
  {
    Writer w(tmp);
    for (char c : kMagic) w.put<char>(c);
    w.put<std::uint32_t>(kVersion);
    w.put<std::uint32_t>(static_cast<std::uint32_t>(ckpt.metadata.size()));
    for (const auto& [k, v] : ckpt.metadata) {
      w.put_string(k);
      w.put_string(v);
    }
    w.put<std::uint32_t>(static_cast<std::uint32_t>(ckpt.arrays.size()));
    for (const NamedArray& a : ckpt.arrays) {
      if (element_count(a.shape) != a.data.size()) {
        throw FormatError("array '" + a.name + "' has inconsistent shape " + to_string(a.shape));
      }
      w.put_string(a.name);
      w.put<std::uint32_t>(static_cast<std::uint32_t>(a.shape.size()));
      for (Index d : a.shape) w.put<std::uint64_t>(static_cast<std::uint64_t>(d));
      w.put_doubles(a.data);
    }
    w.put<std::uint8_t>(ckpt.optimizer ? 1 : 0);
    if (ckpt.optimizer) {
      const AdamState& s = *ckpt.optimizer;
      w.put<std::uint64_t>(static_cast<std::uint64_t>(s.step));
      w.put<double>(s.beta1);
      w.put<double>(s.beta2);
      w.put<double>(s.eps);
      w.put<std::uint32_t>(static_cast<std::uint32_t>(s.m.size()));
      for (std::size_t i = 0; i < s.m.size(); ++i) {
        w.put<std::uint64_t>(static_cast<std::uint64_t>(s.m[i].size()));
        w.put_doubles(s.m[i]);
        w.put_doubles(s.v[i]);
      }
    }
    w.finish(tmp);
  }
  std::filesystem::rename(tmp, path);
}

Checkpoint read_checkpoint(const std::filesystem::path& path) {
  Reader r(path);
  std::array<char, 8> magic{};
  r.read_raw(magic.data(), magic.size());
  if (magic != kMagic) throw FormatError("'" + path.string() + "' is not a checkpoint file");
  const auto version = r.get<std::uint32_t>();
  if (version != kVersion) {
    throw FormatError("unsupported checkpoint version " + std::to_string(version));
  }
  Checkpoint ckpt;
  const auto n_meta = r.get<std::uint32_t>();
  for (std::uint32_t i = 0; i < n_meta; ++i) {
    std::string k = r.get_string();
    std::string v = r.get_string();
    ckpt.metadata.emplace_back(std::move(k), std::move(v));
  }
  const auto n_arrays = r.get<std::uint32_t>();
  for (std::uint32_t i = 0; i < n_arrays; ++i) {
    NamedArray a;
    a.name = r.get_string();
    const auto rank = r.get<std::uint32_t>();
    std::uint64_t n = 1;
    for (std::uint32_t d = 0; d < rank; ++d) {
      const auto dim = r.get<std::uint64_t>();
      a.shape.push_back(static_cast<Index>(dim));
      n *= dim;
    }
    a.data = r.get_doubles(n);
    ckpt.arrays.push_back(std::move(a));
  }
  if (r.get<std::uint8_t>() != 0) {
    AdamState s;
    s.step = static_cast<std::int64_t>(r.get<std::uint64_t>());
    s.beta1 = static_cast<Scalar>(r.get<double>());
    s.beta2 = static_cast<Scalar>(r.get<double>());
    s.eps = static_cast<Scalar>(r.get<double>());
    const auto count = r.get<std::uint32_t>();
    for (std::uint32_t i = 0; i < count; ++i) {
      const auto n = r.get<std::uint64_t>();
      s.m.push_back(r.get_doubles(n));
      s.v.push_back(r.get_doubles(n));
    }
    ckpt.optimizer = std::move(s);
  }
  return ckpt;
}

void append_parameters(Checkpoint& ckpt, const ParameterSet& params) {
  for (const Parameter& p : params.items()) ckpt.arrays.push_back({p.name, p.value.shape(), p.value.data()});
}

void load_parameters(const Checkpoint& ckpt, const ParameterSet& params) {
  for (const Parameter& p : params.items()) {
    const NamedArray* a = ckpt.find(p.name);
    if (!a) throw FormatError("checkpoint is missing parameter '" + p.name + "'");
    if (a->shape != p.value.shape()) {
      throw FormatError("parameter '" + p.name + "': expected shape " + to_string(p.value.shape()) + ", found " +
                        to_string(a->shape));
    }
    p.value.mutable_leaf_data() = a->data;
  }
}

}  // namespace stjla
