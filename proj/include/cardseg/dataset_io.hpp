#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "cardseg/phantom.hpp"
#include "cardseg/types.hpp"

namespace cardseg::io {

// Lossless grayscale rasters: images as 16-bit PGM (P5, maxval 65535),
// masks as 8-bit PGM holding raw labels 0..3.
void write_image_pgm(const std::filesystem::path& path, const GrayImage& img);
GrayImage read_image_pgm(const std::filesystem::path& path);
void write_mask_pgm(const std::filesystem::path& path, const ClassMask& mask);
ClassMask read_mask_pgm(const std::filesystem::path& path);

/// One slice as loaded from a manifest.
struct SliceEntry {
  GrayImage image;
  std::optional<ClassMask> mask;
  DomainTag domain = DomainTag::Source;
  PhantomStyle style = PhantomStyle::StyleA;
  std::string split;  // "source" | "target" | "heldout" | "" for plain stacks
  uint64_t id = 0;
};

/// Reads a manifest (JSON: {"slices":[{"image":..,"mask":..,"domain":..},..]})
/// and loads every referenced slice. Paths are relative to the manifest's
/// directory. Dimension mismatches and bad label values fail with the
/// offending file named.
std::vector<SliceEntry> load_slice_stack(const std::filesystem::path& manifest_path);

/// Materializes a split under `dir` (images/, masks/, manifest.json).
void write_dataset(const std::filesystem::path& dir, const DatasetSplit& split);

/// Loads a split written by write_dataset (or a hand-built manifest using the
/// same split tags).
DatasetSplit read_dataset(const std::filesystem::path& dir);

}  // namespace cardseg::io
