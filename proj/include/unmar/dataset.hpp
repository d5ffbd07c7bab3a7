#ifndef UNMAR_DATASET_HPP
#define UNMAR_DATASET_HPP

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "unmar/kspace_sim.hpp"
#include "unmar/marf.hpp"

namespace unmar {

/// Keep a normalized slice only if it shows anatomy (mean above threshold).
inline bool filter_empty(const Image& img, double threshold = 0.02) {
  return image_mean(img) > threshold;
}

enum class CropStrategy { kGrid, kRandom };

struct CropOffset {
  int r = 0, c = 0;
};

/// Non-overlapping tiles, row-major, partial edges discarded.
inline std::vector<CropOffset> grid_offsets(int h, int w, int patch) {
  if (patch < 1 || h < patch || w < patch)
    throw DataError(fmt::format("crop: image {}x{} smaller than patch {}", h, w, patch));
  std::vector<CropOffset> offs;
  for (int r = 0; r + patch <= h; r += patch)
    for (int c = 0; c + patch <= w; c += patch) offs.push_back({r, c});
  return offs;
}

inline std::vector<CropOffset> random_offsets(int h, int w, int patch, int count,
                                              uint64_t seed) {
  if (patch < 1 || h < patch || w < patch)
    throw DataError(fmt::format("crop: image {}x{} smaller than patch {}", h, w, patch));
  if (count < 1) throw ConfigError("crop: random strategy needs count >= 1");
  Rng rng(derive_seed(seed, "crop"));
  std::vector<CropOffset> offs(count);
  for (CropOffset& o : offs) {
    o.r = static_cast<int>(rng.uniform_int(static_cast<uint64_t>(h - patch + 1)));
    o.c = static_cast<int>(rng.uniform_int(static_cast<uint64_t>(w - patch + 1)));
  }
  return offs;
}

inline Image crop(const Image& img, CropOffset off, int patch) {
  if (off.r < 0 || off.c < 0 || off.r + patch > img.h || off.c + patch > img.w)
    throw DataError(fmt::format("crop: offset ({},{}) + patch {} outside {}x{}",
                                off.r, off.c, patch, img.h, img.w));
  Image out(patch, patch);
  for (int r = 0; r < patch; ++r)
    for (int c = 0; c < patch; ++c) out.at(r, c) = img.at(off.r + r, off.c + c);
  return out;
}

inline std::vector<Image> crop_patches(const Image& img, int patch,
                                       CropStrategy strategy, int count,
                                       uint64_t seed) {
  const auto offs = strategy == CropStrategy::kGrid
                        ? grid_offsets(img.h, img.w, patch)
                        : random_offsets(img.h, img.w, patch, count, seed);
  std::vector<Image> out;
  out.reserve(offs.size());
  for (CropOffset o : offs) out.push_back(crop(img, o, patch));
  return out;
}

// ===== On-disk dataset =====

struct SplitFractions {
  double train = 0.8, val = 0.1, test = 0.1;

  void validate() const {
    if (train < 0 || val < 0 || test < 0 ||
        std::abs(train + val + test - 1.0) > 1e-6)
      throw ConfigError(fmt::format(
          "split fractions {}/{}/{} must be nonnegative and sum to 1", train,
          val, test));
  }
};

struct PairedSample {
  std::string id;
  Image corrupt, clean;
};

/// In-memory view of a dataset tree: unpaired training pools, paired
/// validation and test sets.
struct Dataset {
  std::vector<Image> train_free;
  std::vector<Image> train_corrupt;
  std::vector<PairedSample> val, test;
};

namespace detail {

inline std::vector<std::filesystem::path> list_marf(
    const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  std::vector<fs::path> files;
  if (!fs::is_directory(dir))
    throw DataError(fmt::format("dataset: {} is not a directory", dir.string()));
  for (const auto& e : fs::directory_iterator(dir))
    if (e.is_regular_file() && e.path().extension() == ".marf")
      files.push_back(e.path());
  std::sort(files.begin(), files.end());
  return files;
}

inline std::string file_hash_hex(const std::filesystem::path& p) {
  std::ifstream is(p, std::ios::binary);
  if (!is) throw DataError(fmt::format("dataset: cannot hash {}", p.string()));
  std::string bytes((std::istreambuf_iterator<char>(is)),
                    std::istreambuf_iterator<char>());
  return hash_hex(fnv1a(bytes.data(), bytes.size()));
}

}  // namespace detail

/// Splits clean images by identity into train/val/test, halves the train
/// images into a clean pool and a (simulated) corrupted pool, and writes the
/// tree as MARF files plus a manifest with content hashes. With patch > 0,
/// training images are grid-cropped and val/test pairs share crop
/// coordinates; patch 0 stores whole images.
inline nlohmann::json build_dataset(const std::vector<Image>& clean_images,
                                    const MotionSpec& spec,
                                    const SplitFractions& split, uint64_t seed,
                                    const std::filesystem::path& root,
                                    int patch = 0,
                                    double empty_threshold = 0.02) {
  namespace fs = std::filesystem;
  split.validate();

  std::vector<int> kept;
  for (int i = 0; i < static_cast<int>(clean_images.size()); ++i)
    if (filter_empty(clean_images[i], empty_threshold)) kept.push_back(i);
  if (kept.empty()) throw DataError("build_dataset: no non-empty images");

  const int n = static_cast<int>(kept.size());
  int n_val = static_cast<int>(split.val * n);
  int n_test = static_cast<int>(split.test * n);
  int n_train = n - n_val - n_test;
  if ((split.train > 0 && n_train < 2) || (split.val > 0 && n_val < 1) ||
      (split.test > 0 && n_test < 1))
    throw DataError(fmt::format(
        "build_dataset: {} usable images too few for split {}/{}/{}", n,
        split.train, split.val, split.test));

  Rng rng(derive_seed(seed, "split"));
  rng.shuffle(kept);
  const int n_free = (n_train + 1) / 2;

  for (const char* d : {"train_free", "train_corrupt", "val", "test"})
    fs::create_directories(root / d);

  auto corrupt_of = [&](int idx) {
    return simulate_motion(clean_images[idx], spec,
                           derive_seed(seed, "sim", static_cast<uint64_t>(idx)))
        .corrupted;
  };
  auto id_of = [&](int idx) { return fmt::format("i{:05d}", idx); };

  std::map<std::string, std::string> hashes;  // rel path -> fnv1a
  auto store = [&](const fs::path& rel, const Image& img) {
    write_marf(root / rel, img);
    hashes[rel.generic_string()] = detail::file_hash_hex(root / rel);
  };
  // Whole image or deterministic grid tiles under a shared id.
  auto store_tiled = [&](const std::string& dir, const std::string& id,
                         const std::string& kind, const Image& img) {
    const std::string suffix = kind.empty() ? "" : "." + kind;
    if (patch <= 0) {
      store(fs::path(dir) / (id + suffix + ".marf"), img);
      return;
    }
    const auto offs = grid_offsets(img.h, img.w, patch);
    for (size_t t = 0; t < offs.size(); ++t)
      store(fs::path(dir) / fmt::format("{}.p{:03d}{}.marf", id, t, suffix),
            crop(img, offs[t], patch));
  };

  int pos = 0;
  for (int i = 0; i < n_train; ++i, ++pos) {
    const int idx = kept[pos];
    if (i < n_free)
      store_tiled("train_free", id_of(idx), "", clean_images[idx]);
    else
      store_tiled("train_corrupt", id_of(idx), "", corrupt_of(idx));
  }
  for (const char* dir : {"val", "test"}) {
    const int count = std::string_view(dir) == "val" ? n_val : n_test;
    for (int i = 0; i < count; ++i, ++pos) {
      const int idx = kept[pos];
      store_tiled(dir, id_of(idx), "clean", clean_images[idx]);
      store_tiled(dir, id_of(idx), "corrupt", corrupt_of(idx));
    }
  }

  nlohmann::json manifest;
  manifest["format"] = "unmar-dataset";
  manifest["version"] = 1;
  manifest["seed"] = seed;
  manifest["patch"] = patch;
  manifest["empty_threshold"] = empty_threshold;
  manifest["motion"] = {{"eg_size", spec.eg_size},
                        {"ts_eg", spec.ts_eg},
                        {"corrupt_eg", spec.corrupt_eg},
                        {"angles_deg", spec.angles_deg}};
  manifest["images"] = {{"train_free", n_free},
                        {"train_corrupt", n_train - n_free},
                        {"val", n_val},
                        {"test", n_test}};
  nlohmann::json files = nlohmann::json::object();
  for (const auto& [rel, hash] : hashes) files[rel] = hash;
  manifest["files"] = files;

  {
    std::ofstream os(root / "manifest.json", std::ios::trunc);
    if (!os) throw DataError("build_dataset: cannot write manifest.json");
    os << manifest.dump(2) << "\n";
  }
  return manifest;
}

/// Reads a dataset tree back. Val/test pairs are matched by shared id; a
/// missing half of a pair is an error.
inline Dataset load_dataset(const std::filesystem::path& root) {
  namespace fs = std::filesystem;
  Dataset ds;
  for (const fs::path& p : detail::list_marf(root / "train_free"))
    ds.train_free.push_back(read_marf(p));
  for (const fs::path& p : detail::list_marf(root / "train_corrupt"))
    ds.train_corrupt.push_back(read_marf(p));
  for (const char* dir : {"val", "test"}) {
    std::map<std::string, PairedSample> pairs;
    for (const fs::path& p : detail::list_marf(root / dir)) {
      std::string stem = p.stem().string();  // "<id>.clean" | "<id>.corrupt"
      const auto dot = stem.rfind('.');
      if (dot == std::string::npos)
        throw DataError(fmt::format("dataset: unpaired file {}", p.string()));
      const std::string kind = stem.substr(dot + 1);
      const std::string id = stem.substr(0, dot);
      auto& pair = pairs[id];
      pair.id = id;
      if (kind == "clean")
        pair.clean = read_marf(p);
      else if (kind == "corrupt")
        pair.corrupt = read_marf(p);
      else
        throw DataError(fmt::format("dataset: unexpected file {}", p.string()));
    }
    auto& out = std::string_view(dir) == "val" ? ds.val : ds.test;
    for (auto& [id, pair] : pairs) {
      if (pair.clean.px.empty() || pair.corrupt.px.empty())
        throw DataError(fmt::format("dataset: {} sample '{}' missing its pair",
                                    dir, id));
      out.push_back(std::move(pair));
    }
  }
  if (ds.train_free.empty() || ds.train_corrupt.empty())
    throw DataError(fmt::format("dataset: empty training pool under {}",
                                root.string()));
  return ds;
}

}  // namespace unmar

#endif  // UNMAR_DATASET_HPP
