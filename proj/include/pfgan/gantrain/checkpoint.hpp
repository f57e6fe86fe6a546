#pragma once

#include <algorithm>
#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <istream>
#include <optional>
#include <ostream>
#include <string>
#include <type_traits>

#include "pfgan/diffmath.hpp"

// Binary checkpoint:
//   "PFCK" | u32 version=1 | u32 tensor count
//   per tensor: u16 name length, UTF-8 name, u8 rank, u32 dims[rank], f64 values
//   u8 optimizer flag; if 1: u64 step, f64 beta1, beta2, epsilon, then the
//   first and second moments of every tensor in order.
// All integers and floats little-endian.
namespace pfgan::train {

inline constexpr std::array<char, 4> kCheckpointMagic{'P', 'F', 'C', 'K'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  ParamSet params;
  std::optional<AdamState> optimizer;
};

namespace detail {

template <typename T>
void put(std::ostream& os, T v) {
  static_assert(std::is_trivially_copyable_v<T>);
  std::array<unsigned char, sizeof(T)> bytes;
  std::memcpy(bytes.data(), &v, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes.begin(), bytes.end());
  os.write(reinterpret_cast<const char*>(bytes.data()), sizeof(T));
}

class Reader {
 public:
  Reader(std::istream& is, std::string source) : is_(is), source_(std::move(source)) {}

  template <typename T>
  T get(const std::string& tensor) {
    std::array<unsigned char, sizeof(T)> bytes;
    if (!is_.read(reinterpret_cast<char*>(bytes.data()), sizeof(T))) truncated(tensor);
    if constexpr (std::endian::native == std::endian::big) std::reverse(bytes.begin(), bytes.end());
    T v;
    std::memcpy(&v, bytes.data(), sizeof(T));
    return v;
  }

  std::string bytes(std::size_t n, const std::string& tensor) {
    std::string s(n, '\0');
    if (n && !is_.read(s.data(), static_cast<std::streamsize>(n))) truncated(tensor);
    return s;
  }

  void values(Tensor& t, const std::string& tensor) {
    for (auto& v : t.values()) v = get<double>(tensor);
  }

  [[noreturn]] void truncated(const std::string& tensor) {
    throw TruncatedError(source_ + ": file truncated" +
                             (tensor.empty() ? std::string(" in header") : " in tensor '" + tensor + "'"),
                         tensor);
  }

  const std::string& source() const { return source_; }

 private:
  std::istream& is_;
  std::string source_;
};

}  // namespace detail

inline void write_checkpoint(std::ostream& os, const ParamSet& params, const AdamState* optimizer) {
  os.write(kCheckpointMagic.data(), kCheckpointMagic.size());
  detail::put<std::uint32_t>(os, kCheckpointVersion);
  detail::put<std::uint32_t>(os, static_cast<std::uint32_t>(params.size()));
  for (const auto& p : params) {
    if (p.name.size() > 0xFFFF) throw ConfigError("parameter name too long: " + p.name);
    detail::put<std::uint16_t>(os, static_cast<std::uint16_t>(p.name.size()));
    os.write(p.name.data(), static_cast<std::streamsize>(p.name.size()));
    detail::put<std::uint8_t>(os, static_cast<std::uint8_t>(p.value.rank()));
    for (auto d : p.value.shape()) detail::put<std::uint32_t>(os, static_cast<std::uint32_t>(d));
    for (double v : p.value.values()) detail::put<double>(os, v);
  }
  detail::put<std::uint8_t>(os, optimizer ? 1 : 0);
  if (optimizer) {
    if (optimizer->first_moment.size() != params.size() ||
        optimizer->second_moment.size() != params.size()) {
      throw ConfigError("write_checkpoint: optimizer state does not match parameters");
    }
    detail::put<std::uint64_t>(os, optimizer->step);
    detail::put<double>(os, optimizer->beta1);
    detail::put<double>(os, optimizer->beta2);
    detail::put<double>(os, optimizer->epsilon);
    for (std::size_t i = 0; i < params.size(); ++i) {
      for (double v : optimizer->first_moment[i].values()) detail::put<double>(os, v);
      for (double v : optimizer->second_moment[i].values()) detail::put<double>(os, v);
    }
  }
}

inline Checkpoint read_checkpoint(std::istream& is, const std::string& source = "<stream>") {
  detail::Reader rd(is, source);
  std::array<char, 4> magic{};
  if (!is.read(magic.data(), magic.size())) rd.truncated("");
  if (magic != kCheckpointMagic) throw BadMagicError(source + ": not a checkpoint (bad magic)");
  const auto version = rd.get<std::uint32_t>("");
  if (version != kCheckpointVersion) {
    throw VersionMismatchError(source + ": checkpoint version " + std::to_string(version) +
                               ", expected " + std::to_string(kCheckpointVersion));
  }
  const auto count = rd.get<std::uint32_t>("");
  Checkpoint ck;
  std::string last;
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto len = rd.get<std::uint16_t>(last);
    std::string name = rd.bytes(len, last);
    const auto rank = rd.get<std::uint8_t>(name);
    std::vector<std::size_t> shape(rank);
    std::size_t n = 1;
    for (auto& d : shape) {
      d = rd.get<std::uint32_t>(name);
      if (d == 0) throw IoError(source + ": tensor '" + name + "' has a zero dimension");
      n *= d;
      if (n > (std::size_t{1} << 28)) throw IoError(source + ": tensor '" + name + "' is implausibly large");
    }
    Tensor t(shape, std::vector<double>(n));
    rd.values(t, name);
    ck.params.add(name, std::move(t));
    last = name;
  }
  const auto flag = rd.get<std::uint8_t>("optimizer");
  if (flag > 1) throw IoError(source + ": bad optimizer flag");
  if (flag == 1) {
    AdamState st = AdamState::for_params(ck.params);
    st.step = rd.get<std::uint64_t>("optimizer");
    st.beta1 = rd.get<double>("optimizer");
    st.beta2 = rd.get<double>("optimizer");
    st.epsilon = rd.get<double>("optimizer");
    for (std::size_t i = 0; i < ck.params.size(); ++i) {
      rd.values(st.first_moment[i], "optimizer:" + ck.params[i].name);
      rd.values(st.second_moment[i], "optimizer:" + ck.params[i].name);
    }
    ck.optimizer = std::move(st);
  }
  return ck;
}

// Writes to a temporary file next to `path` and renames it into place.
inline void save_checkpoint(const ParamSet& params, const AdamState* optimizer,
                            const std::filesystem::path& path) {
  if (path.has_parent_path()) {
    std::error_code ec;
    std::filesystem::create_directories(path.parent_path(), ec);
  }
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    if (!os) throw IoError("cannot open " + tmp.string() + " for writing");
    write_checkpoint(os, params, optimizer);
    os.flush();
    if (!os) throw IoError("write failed: " + tmp.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw IoError("cannot move checkpoint into place at " + path.string() + ": " + ec.message());
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open checkpoint " + path.string());
  return read_checkpoint(is, path.string());
}

// Copies loaded values into a model's parameters; every name and shape must match.
inline void assign_params(ParamSet& target, const ParamSet& loaded) {
  for (auto& p : target) {
    const Param* src = loaded.find(p.name);
    if (!src) throw ConfigError("checkpoint lacks tensor '" + p.name + "'");
    if (src->value.rows() != p.value.rows() || src->value.cols() != p.value.cols()) {
      throw ConfigError("tensor '" + p.name + "' has shape " + src->value.shape_string() +
                        " in the checkpoint but " + p.value.shape_string() + " in the model");
    }
    p.value.values() = src->value.values();
  }
  if (loaded.size() != target.size()) {
    for (const auto& p : loaded)
      if (!target.find(p.name)) throw ConfigError("checkpoint has unexpected tensor '" + p.name + "'");
  }
}

}  // namespace pfgan::train
