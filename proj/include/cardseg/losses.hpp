#pragma once

#include <array>
#include <span>
#include <vector>

#include "cardseg/types.hpp"

namespace cardseg::losses {

/// Shared epsilon for logs and denominators.
constexpr double kEps = 1e-7;

/// Mean over pixels of -sum_c y_c log(p_c + eps). Non-negative.
double cross_entropy(const ProbMap& pred, const ClassMask& target);
std::vector<double> cross_entropy_grad(const ProbMap& pred, const ClassMask& target);

/// Negated elementwise soft-Jaccard: terms y*p/(y + p - y*p + eps) averaged
/// over true positions per class, then over classes with true positions.
/// Value in [-1, 0].
double jaccard_loss(const ProbMap& pred, const ClassMask& target);
std::vector<double> jaccard_loss_grad(const ProbMap& pred, const ClassMask& target);

/// Per-class mean Jaccard term (0 for classes absent from the target).
std::array<double, kNumClasses> jaccard_per_class(const ProbMap& pred, const ClassMask& target);

/// Discriminator loss on raw logits: source scored real, target scored fake,
/// mean over patches of -log sig(s_src) - log(1 - sig(s_tgt)), in the
/// numerically stable softplus form.
double disc_loss(std::span<const double> scores_source, std::span<const double> scores_target);

/// Non-saturating generator loss: mean over patches of -log sig(s_target).
double gen_adv_loss(std::span<const double> scores_target);

struct LossReport {
  double ce = 0.0;
  double jac = 0.0;
  double adv_d_feature = 0.0;
  double adv_g_feature = 0.0;
  double adv_d_mask = 0.0;
  double adv_g_mask = 0.0;
  double total = 0.0;
  std::array<double, kNumClasses> jac_per_class{0.0, 0.0, 0.0, 0.0};
};

/// Weighted sum of the six components. Throws naming the offending component
/// if any input is NaN.
double full_objective(const LossReport& components, const LossWeights& w);

}  // namespace cardseg::losses
