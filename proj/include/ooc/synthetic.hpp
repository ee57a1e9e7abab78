#pragma once

#include <array>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "ooc/manifest.hpp"

namespace ooc::synthetic {

// Toy image-caption corpus for desk-scale runs. Images are byte blobs whose
// value distribution depends on a scene topic; matching captions describe
// scenes, mismatching captions come from a disjoint pool of unrelated news
// phrasing. Labels are linearly separable in the caption trigram features.
struct Options {
  std::size_t n_train = 64;
  std::size_t n_val = 0;
  std::size_t n_test = 0;
  std::uint64_t seed = 1;
  std::size_t image_bytes = 96;
};

struct Corpus {
  SplitManifest manifest;
  // image_ref -> bytes
  std::map<std::string, Bytes> images;
};

namespace detail {
inline constexpr std::array<const char*, 6> kMatchSubjects = {
    "fishing boats", "a lighthouse", "sailors", "cargo cranes", "the ferry", "seagulls"};
inline constexpr std::array<const char*, 6> kMatchPlaces = {
    "in the harbor", "along the pier", "near the docks", "by the marina", "on the coast",
    "at the port"};
inline constexpr std::array<const char*, 6> kMismatchSubjects = {
    "lawmakers", "the minister", "striking workers", "central bankers", "the committee",
    "voters"};
inline constexpr std::array<const char*, 6> kMismatchPlaces = {
    "debate the budget", "announce new tariffs", "protest pension cuts",
    "raise interest rates", "approve the treaty", "elect a mayor"};
inline constexpr std::array<const char*, 4> kTimes = {"at dawn", "on Monday", "this week",
                                                      "after the storm"};
}  // namespace detail

inline Corpus generate(const Options& opt) {
  Corpus corpus;
  std::mt19937_64 rng(opt.seed);
  auto pick = [&](const auto& pool) {
    return std::string(pool[std::uniform_int_distribution<std::size_t>(0, pool.size() - 1)(rng)]);
  };
  std::uniform_int_distribution<int> topic_dist(0, 3);
  std::uniform_int_distribution<int> band_dist(0, 63);
  std::uniform_int_distribution<int> any_byte(0, 255);
  std::bernoulli_distribution in_band(0.8);

  std::size_t counter = 0;
  auto emit = [&](Partition partition, std::size_t count) {
    for (std::size_t i = 0; i < count; ++i, ++counter) {
      Sample s;
      s.id = "s" + std::to_string(counter);
      s.split = partition;
      s.label = i % 2 == 0 ? Label::Match : Label::Mismatch;
      const int topic = topic_dist(rng);
      Bytes image(opt.image_bytes);
      for (auto& b : image) {
        b = static_cast<std::uint8_t>(in_band(rng) ? topic * 64 + band_dist(rng) : any_byte(rng));
      }
      if (s.label == Label::Match) {
        s.caption = pick(detail::kMatchSubjects) + " " + pick(detail::kMatchPlaces) + " " +
                    pick(detail::kTimes) + ".";
      } else {
        s.caption = pick(detail::kMismatchSubjects) + " " + pick(detail::kMismatchPlaces) + " " +
                    pick(detail::kTimes) + ".";
      }
      s.caption[0] = static_cast<char>(std::toupper(static_cast<unsigned char>(s.caption[0])));
      s.image_ref = "images/" + s.id + ".bin";
      s.source = "synthetic";
      corpus.images.emplace(s.image_ref, std::move(image));
      corpus.manifest.partitions[partition].push_back(std::move(s));
    }
  };
  emit(Partition::Train, opt.n_train);
  emit(Partition::Val, opt.n_val);
  emit(Partition::Test, opt.n_test);
  return corpus;
}

// Writes images under dir/images and the manifest to dir/manifest.jsonl.
inline std::filesystem::path write(const Corpus& corpus, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir / "images");
  for (const auto& [ref, bytes] : corpus.images) {
    std::ofstream out(dir / ref, std::ios::binary | std::ios::trunc);
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw RuntimeFailure("cannot write " + (dir / ref).string());
  }
  const auto manifest_path = dir / "manifest.jsonl";
  ooc::detail::write_file_text(manifest_path.string(), serialize_manifest(corpus.manifest));
  return manifest_path;
}

// In-memory loader over the generated images.
inline ImageLoader memory_loader(const Corpus& corpus) {
  return [&corpus](const std::string& ref) {
    const auto it = corpus.images.find(ref);
    if (it == corpus.images.end()) throw DataError("no such image: " + ref);
    return it->second;
  };
}

}  // namespace ooc::synthetic
