#pragma once

#include <filesystem>
#include <vector>

#include "cardseg/phantom.hpp"
#include "cardseg/types.hpp"

namespace cardseg::prep {

/// Scale the shorter side to `target_size` (bilinear), then center-crop the
/// longer side. A same-size input passes through untouched.
GrayImage center_crop_resize(const GrayImage& img, int target_size);

/// Identical geometry with nearest-neighbor sampling, so no new labels can
/// appear.
ClassMask center_crop_resize(const ClassMask& mask, int target_size);

/// Intensity CDF over [0,1] on a uniform bin grid; the matching template.
struct HistogramReference {
  int bins = 256;
  std::vector<double> cumulative;  // cumulative[k] = P(I <= (k+1)/bins)

  void validate() const;

  /// Interpolated CDF value at intensity v.
  double cdf(double v) const;

  /// Inverse CDF: intensity at cumulative mass u (linear within bins).
  double quantile(double u) const;

  void save(const std::filesystem::path& path) const;
  static HistogramReference load(const std::filesystem::path& path);
};

/// CDF of the pooled pixel population of all given images.
HistogramReference build_reference(const std::vector<const GrayImage*>& images, int bins = 256);

/// Quantile mapping of img onto the reference. A constant image maps to the
/// reference median (the quantile map is undefined there).
GrayImage histogram_match(const GrayImage& img, const HistogramReference& ref);

/// Kolmogorov-Smirnov distance between the pixel population's empirical CDF
/// and a reference CDF, evaluated on the reference's bin grid.
double ks_distance(const std::vector<float>& pixels, const HistogramReference& ref);
double ks_distance(const std::vector<float>& a, const std::vector<float>& b, int bins = 256);

struct PreprocessOptions {
  int target_size = 96;
  bool match_histograms = true;
  int bins = 256;
};

/// Crop/resize every slice, build the reference from pooled source pixels,
/// and (optionally) match source, target, and heldout slices onto it.
HistogramReference preprocess_split(DatasetSplit& split, const PreprocessOptions& opt);

}  // namespace cardseg::prep
