#include "cardseg/losses.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace cardseg::losses {

namespace {

void check_pair(const ProbMap& pred, const ClassMask& target, const char* what) {
  if (pred.height != target.height || pred.width != target.width)
    throw std::invalid_argument(std::string(what) + ": prediction " +
                                std::to_string(pred.height) + "x" + std::to_string(pred.width) +
                                " vs target " + std::to_string(target.height) + "x" +
                                std::to_string(target.width));
  if (pred.channels != kNumClasses)
    throw std::invalid_argument(std::string(what) + ": prediction must have " +
                                std::to_string(kNumClasses) + " channels");
  target.validate();
}

inline double softplus(double x) {
  return (x > 0.0 ? x : 0.0) + std::log1p(std::exp(-std::abs(x)));
}

}  // namespace

double cross_entropy(const ProbMap& pred, const ClassMask& target) {
  check_pair(pred, target, "cross_entropy");
  const size_t plane = static_cast<size_t>(pred.height) * pred.width;
  double acc = 0.0;
  for (size_t i = 0; i < plane; ++i) {
    const size_t c = target.labels[i];
    acc -= std::log(pred.probs[c * plane + i] + kEps);
  }
  return acc / static_cast<double>(plane);
}

std::vector<double> cross_entropy_grad(const ProbMap& pred, const ClassMask& target) {
  check_pair(pred, target, "cross_entropy_grad");
  const size_t plane = static_cast<size_t>(pred.height) * pred.width;
  std::vector<double> g(pred.probs.size(), 0.0);
  for (size_t i = 0; i < plane; ++i) {
    const size_t c = target.labels[i];
    g[c * plane + i] = -1.0 / ((pred.probs[c * plane + i] + kEps) * static_cast<double>(plane));
  }
  return g;
}

double jaccard_loss(const ProbMap& pred, const ClassMask& target) {
  check_pair(pred, target, "jaccard_loss");
  const size_t plane = static_cast<size_t>(pred.height) * pred.width;
  std::array<double, kNumClasses> sum{};
  std::array<int64_t, kNumClasses> pos{};
  for (size_t i = 0; i < plane; ++i) {
    const size_t c = target.labels[i];
    const double p = pred.probs[c * plane + i];
    sum[c] += p / (1.0 + p - p + kEps);  // y=1 at the true class: y+p-yp = 1
    ++pos[c];
  }
  double total = 0.0;
  int present = 0;
  for (int c = 0; c < kNumClasses; ++c)
    if (pos[static_cast<size_t>(c)] > 0) {
      total += sum[static_cast<size_t>(c)] / static_cast<double>(pos[static_cast<size_t>(c)]);
      ++present;
    }
  return present > 0 ? -total / present : 0.0;
}

std::vector<double> jaccard_loss_grad(const ProbMap& pred, const ClassMask& target) {
  check_pair(pred, target, "jaccard_loss_grad");
  const size_t plane = static_cast<size_t>(pred.height) * pred.width;
  std::array<int64_t, kNumClasses> pos{};
  for (size_t i = 0; i < plane; ++i) ++pos[target.labels[i]];
  int present = 0;
  for (int c = 0; c < kNumClasses; ++c)
    if (pos[static_cast<size_t>(c)] > 0) ++present;

  std::vector<double> g(pred.probs.size(), 0.0);
  if (present == 0) return g;
  for (size_t i = 0; i < plane; ++i) {
    const size_t c = target.labels[i];
    // d/dp [p / (1 + eps)]: the denominator is constant in p where y=1
    const double den = 1.0 + kEps;
    g[c * plane + i] =
        -1.0 / (den * static_cast<double>(present) * static_cast<double>(pos[c]));
  }
  return g;
}

std::array<double, kNumClasses> jaccard_per_class(const ProbMap& pred, const ClassMask& target) {
  check_pair(pred, target, "jaccard_per_class");
  const size_t plane = static_cast<size_t>(pred.height) * pred.width;
  std::array<double, kNumClasses> sum{};
  std::array<int64_t, kNumClasses> pos{};
  for (size_t i = 0; i < plane; ++i) {
    const size_t c = target.labels[i];
    const double p = pred.probs[c * plane + i];
    sum[c] += p / (1.0 + kEps);
    ++pos[c];
  }
  std::array<double, kNumClasses> out{};
  for (int c = 0; c < kNumClasses; ++c)
    out[static_cast<size_t>(c)] =
        pos[static_cast<size_t>(c)] > 0
            ? sum[static_cast<size_t>(c)] / static_cast<double>(pos[static_cast<size_t>(c)])
            : 0.0;
  return out;
}

double disc_loss(std::span<const double> scores_source, std::span<const double> scores_target) {
  if (scores_source.size() != scores_target.size())
    throw std::invalid_argument("disc_loss: score map size mismatch");
  if (scores_source.empty()) throw std::invalid_argument("disc_loss: empty score maps");
  double acc = 0.0;
  for (double s : scores_source) acc += softplus(-s);  // -log sig(s)
  for (double s : scores_target) acc += softplus(s);   // -log(1 - sig(s))
  return acc / static_cast<double>(scores_source.size());
}

double gen_adv_loss(std::span<const double> scores_target) {
  if (scores_target.empty()) throw std::invalid_argument("gen_adv_loss: empty score map");
  double acc = 0.0;
  for (double s : scores_target) acc += softplus(-s);
  return acc / static_cast<double>(scores_target.size());
}

double full_objective(const LossReport& c, const LossWeights& w) {
  w.validate();
  const std::pair<const char*, double> parts[] = {
      {"cross_entropy", c.ce},           {"jaccard", c.jac},
      {"adv_d_feature", c.adv_d_feature}, {"adv_g_feature", c.adv_g_feature},
      {"adv_d_mask", c.adv_d_mask},       {"adv_g_mask", c.adv_g_mask}};
  for (const auto& [name, v] : parts)
    if (std::isnan(v))
      throw std::invalid_argument("full_objective: component '" + std::string(name) + "' is NaN");
  return w.ce * c.ce + w.jac * c.jac + w.disc_feature * c.adv_d_feature +
         w.gen_feature * c.adv_g_feature + w.disc_mask * c.adv_d_mask +
         w.gen_mask * c.adv_g_mask;
}

}  // namespace cardseg::losses
