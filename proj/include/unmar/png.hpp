#ifndef UNMAR_PNG_HPP
#define UNMAR_PNG_HPP

#include <filesystem>
#include <fstream>

#include <zlib.h>

#include "unmar/image.hpp"

namespace unmar {

/// 8-bit grayscale PNG export for eyeballing results. Lossy by design; the
/// pipeline never reads PNGs back.
inline void write_png(const std::filesystem::path& path, const Image& img) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw DataError(fmt::format("png: cannot open {} for write", path.string()));

  auto put_u32 = [](std::string& s, uint32_t v) {
    s.push_back(static_cast<char>(v >> 24));
    s.push_back(static_cast<char>(v >> 16));
    s.push_back(static_cast<char>(v >> 8));
    s.push_back(static_cast<char>(v));
  };
  auto chunk = [&](const char type[5], const std::string& data) {
    std::string out;
    put_u32(out, static_cast<uint32_t>(data.size()));
    out.append(type, 4);
    out.append(data);
    uint32_t crc = crc32(0L, Z_NULL, 0);
    crc = crc32(crc, reinterpret_cast<const Bytef*>(out.data() + 4),
                static_cast<uInt>(out.size() - 4));
    put_u32(out, crc);
    os.write(out.data(), static_cast<std::streamsize>(out.size()));
  };

  static const unsigned char sig[8] = {0x89, 'P', 'N', 'G', '\r', '\n', 0x1a, '\n'};
  os.write(reinterpret_cast<const char*>(sig), 8);

  std::string ihdr;
  put_u32(ihdr, static_cast<uint32_t>(img.w));
  put_u32(ihdr, static_cast<uint32_t>(img.h));
  ihdr.push_back(8);   // bit depth
  ihdr.push_back(0);   // grayscale
  ihdr.push_back(0);   // deflate
  ihdr.push_back(0);   // adaptive filtering
  ihdr.push_back(0);   // no interlace
  chunk("IHDR", ihdr);

  std::string raw;
  raw.reserve(static_cast<size_t>(img.h) * (img.w + 1));
  for (int r = 0; r < img.h; ++r) {
    raw.push_back(0);  // filter: none
    for (int c = 0; c < img.w; ++c) {
      const float v = std::clamp(img.at(r, c), 0.0f, 1.0f);
      raw.push_back(static_cast<char>(std::lround(v * 255.0f)));
    }
  }
  uLongf zlen = compressBound(static_cast<uLong>(raw.size()));
  std::string z(zlen, '\0');
  if (compress2(reinterpret_cast<Bytef*>(z.data()), &zlen,
                reinterpret_cast<const Bytef*>(raw.data()),
                static_cast<uLong>(raw.size()), 6) != Z_OK)
    throw DataError(fmt::format("png: deflate failed for {}", path.string()));
  z.resize(zlen);
  chunk("IDAT", z);
  chunk("IEND", "");
  if (!os) throw DataError(fmt::format("png: write failed for {}", path.string()));
}

}  // namespace unmar

#endif  // UNMAR_PNG_HPP
