#include "cardseg/types.hpp"

namespace cardseg {

std::vector<float> one_hot(const ClassMask& mask, int num_classes) {
  const size_t plane = static_cast<size_t>(mask.height) * mask.width;
  for (uint8_t v : mask.labels)
    if (v >= num_classes)
      throw std::invalid_argument("one_hot: label " + std::to_string(int(v)) +
                                  " >= num_classes " + std::to_string(num_classes));
  std::vector<float> out(static_cast<size_t>(num_classes) * plane, 0.0f);
  for (size_t i = 0; i < plane; ++i) out[static_cast<size_t>(mask.labels[i]) * plane + i] = 1.0f;
  return out;
}

ClassMask argmax_decode(const ProbMap& p) {
  if (p.channels != kNumClasses)
    throw std::invalid_argument("argmax_decode: expected " + std::to_string(kNumClasses) +
                                " channels, got " + std::to_string(p.channels));
  for (double v : p.probs)
    if (std::isnan(v)) throw std::invalid_argument("argmax_decode: NaN probability");
  ClassMask m(p.height, p.width);
  const size_t plane = static_cast<size_t>(p.height) * p.width;
  for (size_t i = 0; i < plane; ++i) {
    int best = 0;
    double bv = p.probs[i];
    for (int c = 1; c < p.channels; ++c) {
      const double v = p.probs[static_cast<size_t>(c) * plane + i];
      if (v > bv) {  // strict: ties keep the lower index
        bv = v;
        best = c;
      }
    }
    m.labels[i] = static_cast<uint8_t>(best);
  }
  return m;
}

}  // namespace cardseg
