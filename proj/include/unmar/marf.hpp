#ifndef UNMAR_MARF_HPP
#define UNMAR_MARF_HPP

#include <filesystem>
#include <fstream>

#include "unmar/checkpoint.hpp"
#include "unmar/image.hpp"

namespace unmar {

inline constexpr uint16_t kMarfVersion = 1;

/// MARF: minimal float raster. Header: magic "MARF", u16 version, u8 dtype
/// (0 = f32), u8 rank (2), u32 per-axis dims; payload row-major f32, little
/// endian. Write is atomic (temp file + rename).
inline void write_marf(const std::filesystem::path& path, const Image& img) {
  namespace fs = std::filesystem;
  if (img.h < 1 || img.w < 1)
    throw DataError(fmt::format("marf: refusing to write empty image to {}",
                                path.string()));
  for (float v : img.px)
    if (!std::isfinite(v))
      throw DataError(fmt::format("marf: non-finite pixel writing {}", path.string()));
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    if (!os)
      throw DataError(fmt::format("marf: cannot open {} for write", tmp.string()));
    os.write("MARF", 4);
    detail::put<uint16_t>(os, kMarfVersion);
    detail::put<uint8_t>(os, 0);  // dtype f32
    detail::put<uint8_t>(os, 2);  // rank
    detail::put<uint32_t>(os, static_cast<uint32_t>(img.h));
    detail::put<uint32_t>(os, static_cast<uint32_t>(img.w));
    os.write(reinterpret_cast<const char*>(img.px.data()),
             static_cast<std::streamsize>(img.px.size() * sizeof(float)));
    if (!os)
      throw DataError(fmt::format("marf: write failed for {}", tmp.string()));
  }
  fs::rename(tmp, path);
}

inline Image read_marf(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError(fmt::format("marf: cannot open {}", path.string()));
  auto want = [&](const char* what) {
    return fmt::format("marf: {} truncated reading {}", path.string(), what);
  };
  char magic[4];
  is.read(magic, 4);
  if (!is) throw DataError(want("magic"));
  if (std::string_view(magic, 4) != "MARF")
    throw DataError(fmt::format("marf: {} has bad magic '{}'", path.string(),
                                std::string(magic, 4)));
  const auto version = detail::get<uint16_t>(is, "version");
  if (version != kMarfVersion)
    throw DataError(fmt::format("marf: {} has unsupported version {}",
                                path.string(), version));
  const auto dtype = detail::get<uint8_t>(is, "dtype");
  if (dtype != 0)
    throw DataError(fmt::format("marf: {} has unknown dtype {}", path.string(),
                                dtype));
  const auto rank = detail::get<uint8_t>(is, "rank");
  if (rank != 2)
    throw DataError(fmt::format("marf: {} has rank {} (only 2 supported)",
                                path.string(), rank));
  const auto h = detail::get<uint32_t>(is, "dims");
  const auto w = detail::get<uint32_t>(is, "dims");
  if (h == 0 || w == 0)
    throw DataError(fmt::format("marf: {} has zero dim {}x{}", path.string(), h, w));
  if (h > (1u << 20) || w > (1u << 20))
    throw DataError(fmt::format("marf: {} dims {}x{} implausibly large",
                                path.string(), h, w));
  Image img(static_cast<int>(h), static_cast<int>(w));
  is.read(reinterpret_cast<char*>(img.px.data()),
          static_cast<std::streamsize>(img.px.size() * sizeof(float)));
  if (!is) throw DataError(want("payload"));
  return img;
}

}  // namespace unmar

#endif  // UNMAR_MARF_HPP
