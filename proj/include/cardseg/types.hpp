#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace cardseg {

/// Segmentation classes: 0=background, 1=LV blood pool, 2=RV, 3=myocardium.
constexpr int kNumClasses = 4;
constexpr int kMinImageSize = 16;

enum class DomainTag : uint8_t { Source, Target };

inline const char* to_string(DomainTag t) { return t == DomainTag::Source ? "source" : "target"; }

/// 2D grayscale slice, intensities in [0,1].
struct GrayImage {
  int height = 0;
  int width = 0;
  std::vector<float> pixels;  // row-major [height*width]
  std::optional<std::pair<float, float>> spacing_mm;

  GrayImage() = default;
  GrayImage(int h, int w) : height(h), width(w), pixels(static_cast<size_t>(h) * w, 0.0f) {
    check_dims(h, w);
  }

  static void check_dims(int h, int w) {
    if (h < kMinImageSize || w < kMinImageSize)
      throw std::invalid_argument("GrayImage: dimensions must be at least " +
                                  std::to_string(kMinImageSize) + ", got " + std::to_string(h) +
                                  "x" + std::to_string(w));
  }

  float& at(int r, int c) { return pixels[static_cast<size_t>(r) * width + c]; }
  float at(int r, int c) const { return pixels[static_cast<size_t>(r) * width + c]; }

  /// All pixels finite and inside [0,1].
  void validate() const {
    check_dims(height, width);
    if (pixels.size() != static_cast<size_t>(height) * width)
      throw std::invalid_argument("GrayImage: pixel buffer does not match dimensions");
    for (float v : pixels)
      if (!std::isfinite(v) || v < 0.0f || v > 1.0f)
        throw std::invalid_argument("GrayImage: pixel out of [0,1] or non-finite");
  }
};

/// Per-pixel integer class labels in {0..3}.
struct ClassMask {
  int height = 0;
  int width = 0;
  std::vector<uint8_t> labels;  // row-major

  ClassMask() = default;
  ClassMask(int h, int w) : height(h), width(w), labels(static_cast<size_t>(h) * w, 0) {}

  uint8_t& at(int r, int c) { return labels[static_cast<size_t>(r) * width + c]; }
  uint8_t at(int r, int c) const { return labels[static_cast<size_t>(r) * width + c]; }

  void validate() const {
    if (labels.size() != static_cast<size_t>(height) * width)
      throw std::invalid_argument("ClassMask: label buffer does not match dimensions");
    for (uint8_t v : labels)
      if (v >= kNumClasses)
        throw std::invalid_argument("ClassMask: label " + std::to_string(int(v)) +
                                    " outside {0.." + std::to_string(kNumClasses - 1) + "}");
  }

  bool operator==(const ClassMask& o) const {
    return height == o.height && width == o.width && labels == o.labels;
  }
};

/// [C,H,W] per-class probabilities from the sigmoid head. Channels need not
/// sum to one; decoding is per-pixel argmax.
struct ProbMap {
  int channels = 0;
  int height = 0;
  int width = 0;
  std::vector<double> probs;  // [c*H*W + r*W + col]

  ProbMap() = default;
  ProbMap(int c, int h, int w)
      : channels(c), height(h), width(w), probs(static_cast<size_t>(c) * h * w, 0.0) {}

  double& at(int c, int r, int col) {
    return probs[(static_cast<size_t>(c) * height + r) * width + col];
  }
  double at(int c, int r, int col) const {
    return probs[(static_cast<size_t>(c) * height + r) * width + col];
  }
};

/// The six weights of the full training objective.
struct LossWeights {
  double ce = 0.5;
  double jac = 0.5;
  double disc_feature = 1.0;   // weight on the feature discriminator loss
  double gen_feature = 0.05;   // weight on the feature generator-side loss
  double disc_mask = 1.0;      // weight on the mask discriminator loss
  double gen_mask = 0.005;     // weight on the mask generator-side loss

  void validate() const {
    for (double v : {ce, jac, disc_feature, gen_feature, disc_mask, gen_mask})
      if (!std::isfinite(v) || v < 0.0)
        throw std::invalid_argument("LossWeights: weights must be finite and non-negative");
  }
};

/// One-hot expansion of a mask: out[c,h,w] = 1 iff mask[h,w] == c.
/// Returned flat in [C,H,W] order.
std::vector<float> one_hot(const ClassMask& mask, int num_classes = kNumClasses);

/// Per-pixel argmax over channels; ties break toward the lower class index.
ClassMask argmax_decode(const ProbMap& p);

}  // namespace cardseg
