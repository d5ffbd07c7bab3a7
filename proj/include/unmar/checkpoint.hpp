#ifndef UNMAR_CHECKPOINT_HPP
#define UNMAR_CHECKPOINT_HPP

#include <bit>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>

#include "unmar/adam.hpp"
#include "unmar/tensor.hpp"

namespace unmar {

static_assert(std::endian::native == std::endian::little,
              "checkpoint format assumes a little-endian host");

// Parameter container: magic "UNAE", version u16, count u32, then per entry
// name_len u16 + name bytes + rank u8 + dims (u32 each) + float32 payload.
inline constexpr uint16_t kCheckpointVersion = 1;

namespace detail {

template <typename T>
void put(std::ostream& os, T v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(std::istream& is, const char* what) {
  T v{};
  is.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!is) throw DataError(fmt::format("truncated stream while reading {}", what));
  return v;
}

}  // namespace detail

inline void write_checkpoint(const std::filesystem::path& path,
                             const NamedTensors& params) {
  namespace fs = std::filesystem;
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    if (!os) throw DataError(fmt::format("checkpoint: cannot open {} for write",
                                         tmp.string()));
    os.write("UNAE", 4);
    detail::put<uint16_t>(os, kCheckpointVersion);
    detail::put<uint32_t>(os, static_cast<uint32_t>(params.size()));
    for (const auto& [name, t] : params) {
      if (name.size() > 0xffff)
        throw DataError(fmt::format("checkpoint: parameter name too long: {}", name));
      detail::put<uint16_t>(os, static_cast<uint16_t>(name.size()));
      os.write(name.data(), static_cast<std::streamsize>(name.size()));
      detail::put<uint8_t>(os, static_cast<uint8_t>(t.rank()));
      for (int i = 0; i < t.rank(); ++i)
        detail::put<uint32_t>(os, static_cast<uint32_t>(t.dim(i)));
      os.write(reinterpret_cast<const char*>(t.data()),
               static_cast<std::streamsize>(t.numel() * sizeof(float)));
    }
    if (!os) throw DataError(fmt::format("checkpoint: write failed for {}", tmp.string()));
  }
  fs::rename(tmp, path);
}

inline NamedTensors read_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError(fmt::format("checkpoint: cannot open {}", path.string()));
  char magic[4];
  is.read(magic, 4);
  if (!is || std::string_view(magic, 4) != "UNAE")
    throw DataError(fmt::format("checkpoint: bad magic in {}", path.string()));
  auto version = detail::get<uint16_t>(is, "version");
  if (version != kCheckpointVersion)
    throw DataError(fmt::format("checkpoint: unsupported version {}", version));
  auto count = detail::get<uint32_t>(is, "count");
  NamedTensors out;
  out.reserve(count);
  for (uint32_t i = 0; i < count; ++i) {
    auto name_len = detail::get<uint16_t>(is, "name length");
    std::string name(name_len, '\0');
    is.read(name.data(), name_len);
    if (!is) throw DataError("checkpoint: truncated while reading name");
    auto rank = detail::get<uint8_t>(is, "rank");
    Shape shape(rank);
    for (int d = 0; d < rank; ++d) {
      auto v = detail::get<uint32_t>(is, "dim");
      if (v == 0) throw DataError(fmt::format("checkpoint: zero dim in '{}'", name));
      shape[d] = static_cast<int>(v);
    }
    std::vector<float> data(static_cast<size_t>(shape_numel(shape)));
    is.read(reinterpret_cast<char*>(data.data()),
            static_cast<std::streamsize>(data.size() * sizeof(float)));
    if (!is)
      throw DataError(fmt::format("checkpoint: truncated payload for '{}'", name));
    out.emplace_back(std::move(name), Tensor::from_data(std::move(shape), std::move(data)));
  }
  return out;
}

/// Copies values from `src` into same-named tensors of `dst`. Every dst
/// parameter must be present with an identical shape.
inline void load_named(NamedTensors& dst, const NamedTensors& src) {
  std::map<std::string, Tensor> by_name;
  for (const auto& [name, t] : src) by_name.emplace(name, t);
  for (auto& [name, t] : dst) {
    auto it = by_name.find(name);
    if (it == by_name.end())
      throw DataError(fmt::format("checkpoint: missing parameter '{}'", name));
    if (!same_shape(it->second.shape(), t.shape()))
      throw DataError(fmt::format("checkpoint: shape mismatch for '{}': {} vs {}",
                                  name, shape_str(it->second.shape()),
                                  shape_str(t.shape())));
    auto sv = it->second.values();
    std::copy(sv.begin(), sv.end(), t.values().begin());
  }
}

}  // namespace unmar

#endif  // UNMAR_CHECKPOINT_HPP
