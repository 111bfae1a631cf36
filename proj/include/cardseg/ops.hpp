#pragma once

#include <vector>

#include "cardseg/autodiff.hpp"

namespace cardseg::nn {

// Conv output extent for one axis.
inline int conv_out_size(int in, int k, int stride, int pad, int dil = 1) {
  return (in + 2 * pad - dil * (k - 1) - 1) / stride + 1;
}
inline int conv_transpose_out_size(int in, int k, int stride, int pad) {
  return (in - 1) * stride - 2 * pad + k;
}

/// x:[N,C,H,W]  w:[Co,C,k,k]  b:[Co] (undefined Var disables bias)
Var conv2d(const Var& x, const Var& w, const Var& b, int stride, int pad, int dilation = 1);

/// x:[N,C,H,W]  w:[C,Co,k,k]  b:[Co]
Var conv_transpose2d(const Var& x, const Var& w, const Var& b, int stride, int pad);

Var linear(const Var& x, const Var& w, const Var& b);  // x:[N,Ci] w:[Co,Ci] b:[Co]

Var maxpool2x2(const Var& x);
Var adaptive_avg_pool(const Var& x, int out_h, int out_w);
Var upsample_bilinear(const Var& x, int out_h, int out_w);
Var global_avg_pool(const Var& x);  // [N,C,H,W] -> [N,C]

Var relu(const Var& x);
Var leaky_relu(const Var& x, float slope);
/// Sigmoid with output clamped to [eps, 1-eps] so downstream logs stay finite.
Var sigmoid(const Var& x, float eps = 1e-7f);

Var add(const Var& a, const Var& b);
Var scale(const Var& x, float c);
Var mul_spatial(const Var& x, const Var& s);   // x:[N,C,H,W] * s:[N,1,H,W]
Var mul_channel(const Var& x, const Var& w);   // x:[N,C,H,W] * w:[N,C]

Var concat_channels(const std::vector<Var>& xs);
Var slice_channels(const Var& x, int c0, int c1);

/// mean over pixels of -sum_c y_c log(p_c + eps); y is a one-hot constant.
Var cross_entropy_loss(const Var& probs, const Tensor& onehot, float eps = 1e-7f);

/// Elementwise soft-Jaccard, averaged over true positions per class, then
/// over classes with true positions; negated (in [-1,0]).
Var jaccard_loss_node(const Var& probs, const Tensor& onehot, float eps = 1e-7f);

/// mean softplus(-s): non-saturating generator loss on logits.
Var gen_adv_loss_node(const Var& logits);

/// mean softplus(-s_real) + mean softplus(s_fake): discriminator loss on logits.
Var disc_loss_node(const Var& logits_real, const Var& logits_fake);

}  // namespace cardseg::nn
