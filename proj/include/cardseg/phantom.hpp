#pragma once

#include <atomic>
#include <cstdint>
#include <utility>
#include <vector>

#include "cardseg/types.hpp"

namespace cardseg {

/// Appearance styles. Geometry is shared (seed-determined); only intensity
/// rendering differs:
///   StyleA - bright blood pool, sharp edges (bSSFP-like), source modality 1
///   StyleB - lower contrast, noisier (T2-like), source modality 2
///   StyleC - globally shifted/enhanced intensity profile (LGE-like), target
enum class PhantomStyle : uint8_t { StyleA, StyleB, StyleC };

const char* to_string(PhantomStyle s);

struct PhantomSpec {
  int image_size = 96;
  // geometric parameters as fractions of image size
  std::pair<double, double> lv_radius_range{0.08, 0.11};
  std::pair<double, double> myo_thickness_range{0.05, 0.068};
  // RV disk radius as a fraction of the myocardial outer radius
  std::pair<double, double> rv_scale_range{0.70, 0.90};
  PhantomStyle domain_style = PhantomStyle::StyleA;
  double noise_sigma = 0.02;
  uint64_t seed = 0;

  void validate() const;
};

/// Mean intensity per class {bg, LV, RV, Myo} for a style; exposed so tests
/// can assert the cross-domain appearance gap.
const float* style_class_means(PhantomStyle s);

/// Circular LV pool inside a myocardial ring with an adjacent RV crescent.
/// Same seed => identical mask for every style.
std::pair<GrayImage, ClassMask> generate_phantom(const PhantomSpec& spec);

struct LabeledSlice {
  GrayImage image;
  ClassMask mask;
  DomainTag domain = DomainTag::Source;
  PhantomStyle style = PhantomStyle::StyleA;
  uint64_t id = 0;
};

/// No mask field: the trainer cannot read target labels even by accident.
struct UnlabeledSlice {
  GrayImage image;
  DomainTag domain = DomainTag::Target;
  PhantomStyle style = PhantomStyle::StyleC;
  uint64_t id = 0;
};

/// Evaluation-only labeled slices. Every mask access is counted so tests can
/// prove the training loop never touches them.
class HeldoutStore {
 public:
  void add(GrayImage img, ClassMask mask, uint64_t id) {
    images_.push_back(std::move(img));
    masks_.push_back(std::move(mask));
    ids_.push_back(id);
  }

  size_t size() const { return images_.size(); }
  const GrayImage& image(size_t i) const { return images_.at(i); }
  GrayImage& mutable_image(size_t i) { return images_.at(i); }
  uint64_t id(size_t i) const { return ids_.at(i); }

  const ClassMask& mask(size_t i) const {
    mask_reads_.fetch_add(1, std::memory_order_relaxed);
    return masks_.at(i);
  }

  /// Preprocessing-side geometry maintenance; not an evaluation read.
  ClassMask& mutable_mask(size_t i) { return masks_.at(i); }

  uint64_t mask_reads() const { return mask_reads_.load(std::memory_order_relaxed); }
  void reset_mask_reads() const { mask_reads_.store(0, std::memory_order_relaxed); }

 private:
  std::vector<GrayImage> images_;
  std::vector<ClassMask> masks_;
  std::vector<uint64_t> ids_;
  mutable std::atomic<uint64_t> mask_reads_{0};
};

struct DatasetSplit {
  std::vector<LabeledSlice> source_labeled;      // StyleA + StyleB mix
  std::vector<UnlabeledSlice> target_unlabeled;  // StyleC
  HeldoutStore target_heldout;                   // StyleC, evaluation only
};

/// Deterministic split: sample ids are globally unique, geometry/appearance
/// derived from (seed, id).
DatasetSplit make_splits(int n_source, int n_target, int n_heldout, uint64_t seed,
                         const PhantomSpec& base = PhantomSpec{});

}  // namespace cardseg
