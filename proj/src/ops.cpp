#include "cardseg/ops.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <cstring>

namespace cardseg::nn {

namespace {

using RowMat = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapC = Eigen::Map<const RowMat>;
using MapM = Eigen::Map<RowMat>;

// C[M,N] (+)= op(A) * op(B); row-major raw pointers.
void gemm(bool ta, bool tb, int64_t M, int64_t N, int64_t K, const float* A, const float* B,
          float* C, bool accumulate) {
  MapC a(A, ta ? K : M, ta ? M : K);
  MapC b(B, tb ? N : K, tb ? K : N);
  MapM c(C, M, N);
  if (!ta && !tb) {
    if (accumulate) c.noalias() += a * b; else c.noalias() = a * b;
  } else if (ta && !tb) {
    if (accumulate) c.noalias() += a.transpose() * b; else c.noalias() = a.transpose() * b;
  } else if (!ta && tb) {
    if (accumulate) c.noalias() += a * b.transpose(); else c.noalias() = a * b.transpose();
  } else {
    if (accumulate) c.noalias() += a.transpose() * b.transpose();
    else c.noalias() = a.transpose() * b.transpose();
  }
}

thread_local std::vector<float> g_col_scratch;
thread_local std::vector<float> g_col_scratch2;

float* scratch(std::vector<float>& buf, size_t n) {
  if (buf.size() < n) buf.resize(n);
  return buf.data();
}

// One image: x [C,H,W] -> col [C*k*k, Ho*Wo].
void im2col(const float* x, int C, int H, int W, int k, int stride, int pad, int dil, int Ho,
            int Wo, float* col) {
  for (int c = 0; c < C; ++c) {
    const float* xc = x + static_cast<int64_t>(c) * H * W;
    for (int ki = 0; ki < k; ++ki) {
      for (int kj = 0; kj < k; ++kj) {
        float* row = col + (static_cast<int64_t>(c) * k * k + ki * k + kj) *
                               (static_cast<int64_t>(Ho) * Wo);
        int koff_h = ki * dil - pad;
        int koff_w = kj * dil - pad;
        for (int oh = 0; oh < Ho; ++oh, row += Wo) {
          int ih = oh * stride + koff_h;
          if (ih < 0 || ih >= H) {
            std::memset(row, 0, sizeof(float) * static_cast<size_t>(Wo));
            continue;
          }
          const float* xr = xc + static_cast<int64_t>(ih) * W;
          // valid ow range: 0 <= ow*stride + koff_w < W
          int lo = koff_w < 0 ? (-koff_w + stride - 1) / stride : 0;
          int hi = (W - 1 - koff_w) / stride + 1;  // exclusive upper bound on ow
          if (hi > Wo) hi = Wo;
          if (lo > Wo) lo = Wo;
          if (hi < lo) hi = lo;
          for (int ow = 0; ow < lo; ++ow) row[ow] = 0.0f;
          if (stride == 1) {
            if (hi > lo) std::memcpy(row + lo, xr + lo + koff_w, sizeof(float) * (hi - lo));
          } else {
            for (int ow = lo; ow < hi; ++ow) row[ow] = xr[ow * stride + koff_w];
          }
          for (int ow = hi; ow < Wo; ++ow) row[ow] = 0.0f;
        }
      }
    }
  }
}

// Scatter-add of a col matrix back into an image (adjoint of im2col).
void col2im_add(const float* col, int C, int H, int W, int k, int stride, int pad, int dil,
                int Ho, int Wo, float* x) {
  for (int c = 0; c < C; ++c) {
    float* xc = x + static_cast<int64_t>(c) * H * W;
    for (int ki = 0; ki < k; ++ki) {
      for (int kj = 0; kj < k; ++kj) {
        const float* row = col + (static_cast<int64_t>(c) * k * k + ki * k + kj) *
                                     (static_cast<int64_t>(Ho) * Wo);
        int koff_h = ki * dil - pad;
        int koff_w = kj * dil - pad;
        for (int oh = 0; oh < Ho; ++oh, row += Wo) {
          int ih = oh * stride + koff_h;
          if (ih < 0 || ih >= H) continue;
          float* xr = xc + static_cast<int64_t>(ih) * W;
          int lo = koff_w < 0 ? (-koff_w + stride - 1) / stride : 0;
          int hi = (W - 1 - koff_w) / stride + 1;
          if (hi > Wo) hi = Wo;
          if (lo > Wo) lo = Wo;
          if (hi < lo) hi = lo;
          for (int ow = lo; ow < hi; ++ow) xr[ow * stride + koff_w] += row[ow];
        }
      }
    }
  }
}

void require_4d(const Var& x, const char* what) {
  if (!x.defined() || x.val().rank() != 4)
    throw std::invalid_argument(std::string(what) + ": expected a [N,C,H,W] tensor");
}

struct BilinearTap {
  int i0, i1;
  float f;  // weight of i1
};

std::vector<BilinearTap> bilinear_taps(int in, int out) {
  std::vector<BilinearTap> taps(static_cast<size_t>(out));
  double r = static_cast<double>(in) / out;
  for (int o = 0; o < out; ++o) {
    double src = (o + 0.5) * r - 0.5;
    if (src < 0.0) src = 0.0;
    int i0 = static_cast<int>(src);
    if (i0 > in - 1) i0 = in - 1;
    int i1 = i0 + 1 < in ? i0 + 1 : in - 1;
    taps[static_cast<size_t>(o)] = {i0, i1, static_cast<float>(src - i0)};
  }
  return taps;
}

}  // namespace

Var conv2d(const Var& x, const Var& w, const Var& b, int stride, int pad, int dilation) {
  require_4d(x, "conv2d");
  const auto& xs = x.shape();
  const auto& ws = w.shape();
  const int N = xs[0], C = xs[1], H = xs[2], W = xs[3];
  const int Co = ws[0], k = ws[2];
  if (ws[1] != C)
    throw std::invalid_argument("conv2d: weight expects " + std::to_string(ws[1]) +
                                " input channels, got " + std::to_string(C));
  const int Ho = conv_out_size(H, k, stride, pad, dilation);
  const int Wo = conv_out_size(W, k, stride, pad, dilation);
  if (Ho <= 0 || Wo <= 0) throw std::invalid_argument("conv2d: input too small for kernel");
  const int64_t ckk = static_cast<int64_t>(C) * k * k;
  const int64_t plane = static_cast<int64_t>(Ho) * Wo;

  Tensor y({N, Co, Ho, Wo});
  float* col = scratch(g_col_scratch, static_cast<size_t>(ckk * plane));
  for (int n = 0; n < N; ++n) {
    im2col(x.val().ptr() + static_cast<int64_t>(n) * C * H * W, C, H, W, k, stride, pad,
           dilation, Ho, Wo, col);
    gemm(false, false, Co, plane, ckk, w.val().ptr(), col,
         y.ptr() + static_cast<int64_t>(n) * Co * plane, false);
  }
  if (b.defined()) {
    for (int n = 0; n < N; ++n)
      for (int co = 0; co < Co; ++co) {
        float bv = b.val().at(co);
        float* yp = y.ptr() + (static_cast<int64_t>(n) * Co + co) * plane;
        for (int64_t i = 0; i < plane; ++i) yp[i] += bv;
      }
  }

  auto xn = x.node(); auto wn = w.node();
  auto bn = b.defined() ? b.node() : nullptr;
  int s = stride, p = pad, d = dilation;
  return make_op(std::move(y), {x, w, b}, [=](Node& self) {
    const float* dy = self.grad.ptr();
    const int64_t ckk2 = static_cast<int64_t>(C) * k * k;
    const int64_t pl = static_cast<int64_t>(Ho) * Wo;
    float* colb = scratch(g_col_scratch, static_cast<size_t>(ckk2 * pl));
    if (wn->requires_grad) {
      float* dw = wn->ensure_grad().ptr();
      for (int n = 0; n < N; ++n) {
        im2col(xn->value.ptr() + static_cast<int64_t>(n) * C * H * W, C, H, W, k, s, p, d, Ho,
               Wo, colb);
        gemm(false, true, Co, ckk2, pl, dy + static_cast<int64_t>(n) * Co * pl, colb, dw, true);
      }
    }
    if (xn->requires_grad) {
      float* dx = xn->ensure_grad().ptr();
      float* dcol = scratch(g_col_scratch2, static_cast<size_t>(ckk2 * pl));
      for (int n = 0; n < N; ++n) {
        gemm(true, false, ckk2, pl, Co, wn->value.ptr(), dy + static_cast<int64_t>(n) * Co * pl,
             dcol, false);
        col2im_add(dcol, C, H, W, k, s, p, d, Ho, Wo, dx + static_cast<int64_t>(n) * C * H * W);
      }
    }
    if (bn && bn->requires_grad) {
      float* db = bn->ensure_grad().ptr();
      for (int n = 0; n < N; ++n)
        for (int co = 0; co < Co; ++co) {
          const float* g = dy + (static_cast<int64_t>(n) * Co + co) * pl;
          double acc = 0.0;
          for (int64_t i = 0; i < pl; ++i) acc += g[i];
          db[co] += static_cast<float>(acc);
        }
    }
  });
}

Var conv_transpose2d(const Var& x, const Var& w, const Var& b, int stride, int pad) {
  require_4d(x, "conv_transpose2d");
  const auto& xs = x.shape();
  const auto& ws = w.shape();  // [Cin, Co, k, k]
  const int N = xs[0], C = xs[1], Hi = xs[2], Wi = xs[3];
  const int Co = ws[1], k = ws[2];
  if (ws[0] != C)
    throw std::invalid_argument("conv_transpose2d: weight expects " + std::to_string(ws[0]) +
                                " input channels, got " + std::to_string(C));
  const int Ho = conv_transpose_out_size(Hi, k, stride, pad);
  const int Wo = conv_transpose_out_size(Wi, k, stride, pad);
  const int64_t cokk = static_cast<int64_t>(Co) * k * k;
  const int64_t in_plane = static_cast<int64_t>(Hi) * Wi;

  Tensor y({N, Co, Ho, Wo});
  float* col = scratch(g_col_scratch, static_cast<size_t>(cokk * in_plane));
  for (int n = 0; n < N; ++n) {
    // col = w^T x_n, then scatter with the forward-conv geometry inverted
    gemm(true, false, cokk, in_plane, C, w.val().ptr(),
         x.val().ptr() + static_cast<int64_t>(n) * C * in_plane, col, false);
    col2im_add(col, Co, Ho, Wo, k, stride, pad, 1, Hi, Wi,
               y.ptr() + static_cast<int64_t>(n) * Co * Ho * Wo);
  }
  if (b.defined()) {
    const int64_t out_plane = static_cast<int64_t>(Ho) * Wo;
    for (int n = 0; n < N; ++n)
      for (int co = 0; co < Co; ++co) {
        float bv = b.val().at(co);
        float* yp = y.ptr() + (static_cast<int64_t>(n) * Co + co) * out_plane;
        for (int64_t i = 0; i < out_plane; ++i) yp[i] += bv;
      }
  }

  auto xn = x.node(); auto wn = w.node();
  auto bn = b.defined() ? b.node() : nullptr;
  int s = stride, p = pad;
  return make_op(std::move(y), {x, w, b}, [=](Node& self) {
    const float* dy = self.grad.ptr();
    const int64_t cokk2 = static_cast<int64_t>(Co) * k * k;
    const int64_t ipl = static_cast<int64_t>(Hi) * Wi;
    const int64_t opl = static_cast<int64_t>(Ho) * Wo;
    float* col_dy = scratch(g_col_scratch, static_cast<size_t>(cokk2 * ipl));
    for (int n = 0; n < N; ++n) {
      im2col(dy + static_cast<int64_t>(n) * Co * opl, Co, Ho, Wo, k, s, p, 1, Hi, Wi, col_dy);
      if (xn->requires_grad)
        gemm(false, false, C, ipl, cokk2, wn->value.ptr(), col_dy,
             xn->ensure_grad().ptr() + static_cast<int64_t>(n) * C * ipl, true);
      if (wn->requires_grad)
        gemm(false, true, C, cokk2, ipl, xn->value.ptr() + static_cast<int64_t>(n) * C * ipl,
             col_dy, wn->ensure_grad().ptr(), true);
    }
    if (bn && bn->requires_grad) {
      float* db = bn->ensure_grad().ptr();
      for (int n = 0; n < N; ++n)
        for (int co = 0; co < Co; ++co) {
          const float* g = dy + (static_cast<int64_t>(n) * Co + co) * opl;
          double acc = 0.0;
          for (int64_t i = 0; i < opl; ++i) acc += g[i];
          db[co] += static_cast<float>(acc);
        }
    }
  });
}

Var linear(const Var& x, const Var& w, const Var& b) {
  const auto& xs = x.shape();
  const auto& ws = w.shape();
  if (xs.size() != 2 || ws.size() != 2 || xs[1] != ws[1])
    throw std::invalid_argument("linear: shape mismatch");
  const int N = xs[0], Ci = xs[1], Co = ws[0];
  Tensor y({N, Co});
  gemm(false, true, N, Co, Ci, x.val().ptr(), w.val().ptr(), y.ptr(), false);
  if (b.defined())
    for (int n = 0; n < N; ++n)
      for (int c = 0; c < Co; ++c) y.at(static_cast<int64_t>(n) * Co + c) += b.val().at(c);

  auto xn = x.node(); auto wn = w.node();
  auto bn = b.defined() ? b.node() : nullptr;
  return make_op(std::move(y), {x, w, b}, [=](Node& self) {
    const float* dy = self.grad.ptr();
    if (xn->requires_grad)
      gemm(false, false, N, Ci, Co, dy, wn->value.ptr(), xn->ensure_grad().ptr(), true);
    if (wn->requires_grad)
      gemm(true, false, Co, Ci, N, dy, xn->value.ptr(), wn->ensure_grad().ptr(), true);
    if (bn && bn->requires_grad) {
      float* db = bn->ensure_grad().ptr();
      for (int n = 0; n < N; ++n)
        for (int c = 0; c < Co; ++c) db[c] += dy[static_cast<int64_t>(n) * Co + c];
    }
  });
}

Var maxpool2x2(const Var& x) {
  require_4d(x, "maxpool2x2");
  const auto& xs = x.shape();
  const int N = xs[0], C = xs[1], H = xs[2], W = xs[3];
  if (H % 2 != 0 || W % 2 != 0) throw std::invalid_argument("maxpool2x2: odd spatial size");
  const int Ho = H / 2, Wo = W / 2;
  Tensor y({N, C, Ho, Wo});
  auto idx = std::make_shared<std::vector<int32_t>>(static_cast<size_t>(y.numel()));
  const float* xp = x.val().ptr();
  float* yp = y.ptr();
  int64_t o = 0;
  for (int nc = 0; nc < N * C; ++nc) {
    const float* plane = xp + static_cast<int64_t>(nc) * H * W;
    for (int oh = 0; oh < Ho; ++oh)
      for (int ow = 0; ow < Wo; ++ow, ++o) {
        int base = (oh * 2) * W + ow * 2;
        int best = base;
        float bv = plane[base];
        if (plane[base + 1] > bv) { bv = plane[base + 1]; best = base + 1; }
        if (plane[base + W] > bv) { bv = plane[base + W]; best = base + W; }
        if (plane[base + W + 1] > bv) { bv = plane[base + W + 1]; best = base + W + 1; }
        yp[o] = bv;
        (*idx)[static_cast<size_t>(o)] = best;
      }
  }
  auto xn = x.node();
  return make_op(std::move(y), {x}, [=](Node& self) {
    if (!xn->requires_grad) return;
    float* dx = xn->ensure_grad().ptr();
    const float* dy = self.grad.ptr();
    int64_t oo = 0;
    const int64_t opl = static_cast<int64_t>(Ho) * Wo;
    for (int nc = 0; nc < N * C; ++nc) {
      float* dplane = dx + static_cast<int64_t>(nc) * H * W;
      for (int64_t i = 0; i < opl; ++i, ++oo) dplane[(*idx)[static_cast<size_t>(oo)]] += dy[oo];
    }
  });
}

Var adaptive_avg_pool(const Var& x, int out_h, int out_w) {
  require_4d(x, "adaptive_avg_pool");
  const auto& xs = x.shape();
  const int N = xs[0], C = xs[1], H = xs[2], W = xs[3];
  if (out_h > H || out_w > W)
    throw std::invalid_argument("adaptive_avg_pool: output larger than input");
  Tensor y({N, C, out_h, out_w});
  auto win = [](int o, int n_out, int n_in) {
    int lo = (o * n_in) / n_out;
    int hi = ((o + 1) * n_in + n_out - 1) / n_out;
    return std::pair<int, int>(lo, hi);
  };
  const float* xp = x.val().ptr();
  float* yp = y.ptr();
  int64_t o = 0;
  for (int nc = 0; nc < N * C; ++nc) {
    const float* plane = xp + static_cast<int64_t>(nc) * H * W;
    for (int oh = 0; oh < out_h; ++oh) {
      auto [h0, h1] = win(oh, out_h, H);
      for (int ow = 0; ow < out_w; ++ow, ++o) {
        auto [w0, w1] = win(ow, out_w, W);
        double acc = 0.0;
        for (int ih = h0; ih < h1; ++ih)
          for (int iw = w0; iw < w1; ++iw) acc += plane[ih * W + iw];
        yp[o] = static_cast<float>(acc / ((h1 - h0) * (w1 - w0)));
      }
    }
  }
  auto xn = x.node();
  return make_op(std::move(y), {x}, [=](Node& self) {
    if (!xn->requires_grad) return;
    float* dx = xn->ensure_grad().ptr();
    const float* dy = self.grad.ptr();
    auto win2 = [](int o2, int n_out, int n_in) {
      int lo = (o2 * n_in) / n_out;
      int hi = ((o2 + 1) * n_in + n_out - 1) / n_out;
      return std::pair<int, int>(lo, hi);
    };
    int64_t oo = 0;
    for (int nc = 0; nc < N * C; ++nc) {
      float* dplane = dx + static_cast<int64_t>(nc) * H * W;
      for (int oh = 0; oh < out_h; ++oh) {
        auto [h0, h1] = win2(oh, out_h, H);
        for (int ow = 0; ow < out_w; ++ow, ++oo) {
          auto [w0, w1] = win2(ow, out_w, W);
          float g = dy[oo] / ((h1 - h0) * (w1 - w0));
          for (int ih = h0; ih < h1; ++ih)
            for (int iw = w0; iw < w1; ++iw) dplane[ih * W + iw] += g;
        }
      }
    }
  });
}

Var upsample_bilinear(const Var& x, int out_h, int out_w) {
  require_4d(x, "upsample_bilinear");
  const auto& xs = x.shape();
  const int N = xs[0], C = xs[1], H = xs[2], W = xs[3];
  auto th = std::make_shared<std::vector<BilinearTap>>(bilinear_taps(H, out_h));
  auto tw = std::make_shared<std::vector<BilinearTap>>(bilinear_taps(W, out_w));
  Tensor y({N, C, out_h, out_w});
  const float* xp = x.val().ptr();
  float* yp = y.ptr();
  int64_t o = 0;
  for (int nc = 0; nc < N * C; ++nc) {
    const float* plane = xp + static_cast<int64_t>(nc) * H * W;
    for (int oh = 0; oh < out_h; ++oh) {
      const auto& h = (*th)[static_cast<size_t>(oh)];
      for (int ow = 0; ow < out_w; ++ow, ++o) {
        const auto& w = (*tw)[static_cast<size_t>(ow)];
        float v00 = plane[h.i0 * W + w.i0], v01 = plane[h.i0 * W + w.i1];
        float v10 = plane[h.i1 * W + w.i0], v11 = plane[h.i1 * W + w.i1];
        yp[o] = (1 - h.f) * ((1 - w.f) * v00 + w.f * v01) + h.f * ((1 - w.f) * v10 + w.f * v11);
      }
    }
  }
  auto xn = x.node();
  return make_op(std::move(y), {x}, [=](Node& self) {
    if (!xn->requires_grad) return;
    float* dx = xn->ensure_grad().ptr();
    const float* dy = self.grad.ptr();
    int64_t oo = 0;
    for (int nc = 0; nc < N * C; ++nc) {
      float* dplane = dx + static_cast<int64_t>(nc) * H * W;
      for (int oh = 0; oh < out_h; ++oh) {
        const auto& h = (*th)[static_cast<size_t>(oh)];
        for (int ow = 0; ow < out_w; ++ow, ++oo) {
          const auto& w = (*tw)[static_cast<size_t>(ow)];
          float g = dy[oo];
          dplane[h.i0 * W + w.i0] += (1 - h.f) * (1 - w.f) * g;
          dplane[h.i0 * W + w.i1] += (1 - h.f) * w.f * g;
          dplane[h.i1 * W + w.i0] += h.f * (1 - w.f) * g;
          dplane[h.i1 * W + w.i1] += h.f * w.f * g;
        }
      }
    }
  });
}

Var global_avg_pool(const Var& x) {
  require_4d(x, "global_avg_pool");
  const auto& xs = x.shape();
  const int N = xs[0], C = xs[1];
  const int64_t plane = static_cast<int64_t>(xs[2]) * xs[3];
  Tensor y({N, C});
  const float* xp = x.val().ptr();
  for (int nc = 0; nc < N * C; ++nc) {
    const float* p = xp + nc * plane;
    double acc = 0.0;
    for (int64_t i = 0; i < plane; ++i) acc += p[i];
    y.at(nc) = static_cast<float>(acc / static_cast<double>(plane));
  }
  auto xn = x.node();
  return make_op(std::move(y), {x}, [=](Node& self) {
    if (!xn->requires_grad) return;
    float* dx = xn->ensure_grad().ptr();
    const float* dy = self.grad.ptr();
    for (int nc = 0; nc < N * C; ++nc) {
      float g = dy[nc] / static_cast<float>(plane);
      float* p = dx + nc * plane;
      for (int64_t i = 0; i < plane; ++i) p[i] += g;
    }
  });
}

Var relu(const Var& x) {
  Tensor y = x.val();
  for (float& v : y.data) v = v > 0.0f ? v : 0.0f;
  auto xn = x.node();
  return make_op(std::move(y), {x}, [=](Node& self) {
    if (!xn->requires_grad) return;
    float* dx = xn->ensure_grad().ptr();
    const float* dy = self.grad.ptr();
    const float* xv = xn->value.ptr();
    const int64_t n = self.grad.numel();
    for (int64_t i = 0; i < n; ++i)
      if (xv[i] > 0.0f) dx[i] += dy[i];
  });
}

Var leaky_relu(const Var& x, float slope) {
  Tensor y = x.val();
  for (float& v : y.data) v = v > 0.0f ? v : slope * v;
  auto xn = x.node();
  return make_op(std::move(y), {x}, [=](Node& self) {
    if (!xn->requires_grad) return;
    float* dx = xn->ensure_grad().ptr();
    const float* dy = self.grad.ptr();
    const float* xv = xn->value.ptr();
    const int64_t n = self.grad.numel();
    for (int64_t i = 0; i < n; ++i) dx[i] += (xv[i] > 0.0f ? 1.0f : slope) * dy[i];
  });
}

Var sigmoid(const Var& x, float eps) {
  Tensor y = x.val();
  const float hi = 1.0f - eps;
  for (float& v : y.data) {
    float s = 1.0f / (1.0f + std::exp(-v));
    v = s < eps ? eps : (s > hi ? hi : s);
  }
  auto xn = x.node();
  return make_op(std::move(y), {x}, [=](Node& self) {
    if (!xn->requires_grad) return;
    float* dx = xn->ensure_grad().ptr();
    const float* dy = self.grad.ptr();
    const float* yv = self.value.ptr();
    const int64_t n = self.grad.numel();
    for (int64_t i = 0; i < n; ++i) dx[i] += yv[i] * (1.0f - yv[i]) * dy[i];
  });
}

Var add(const Var& a, const Var& b) {
  if (a.shape() != b.shape()) throw std::invalid_argument("add: shape mismatch");
  Tensor y = a.val();
  const float* bp = b.val().ptr();
  for (int64_t i = 0; i < y.numel(); ++i) y.at(i) += bp[i];
  auto an = a.node(); auto bn = b.node();
  return make_op(std::move(y), {a, b}, [=](Node& self) {
    const float* dy = self.grad.ptr();
    const int64_t n = self.grad.numel();
    if (an->requires_grad) {
      float* da = an->ensure_grad().ptr();
      for (int64_t i = 0; i < n; ++i) da[i] += dy[i];
    }
    if (bn->requires_grad) {
      float* db = bn->ensure_grad().ptr();
      for (int64_t i = 0; i < n; ++i) db[i] += dy[i];
    }
  });
}

Var scale(const Var& x, float c) {
  Tensor y = x.val();
  for (float& v : y.data) v *= c;
  auto xn = x.node();
  return make_op(std::move(y), {x}, [=](Node& self) {
    if (!xn->requires_grad) return;
    float* dx = xn->ensure_grad().ptr();
    const float* dy = self.grad.ptr();
    const int64_t n = self.grad.numel();
    for (int64_t i = 0; i < n; ++i) dx[i] += c * dy[i];
  });
}

Var mul_spatial(const Var& x, const Var& s) {
  require_4d(x, "mul_spatial");
  const auto& xs = x.shape();
  const int N = xs[0], C = xs[1];
  const int64_t plane = static_cast<int64_t>(xs[2]) * xs[3];
  check_shape(s.val(), {N, 1, xs[2], xs[3]}, "mul_spatial gate");
  Tensor y = x.val();
  const float* sp = s.val().ptr();
  for (int n = 0; n < N; ++n) {
    const float* sn = sp + n * plane;
    for (int c = 0; c < C; ++c) {
      float* yp = y.ptr() + (static_cast<int64_t>(n) * C + c) * plane;
      for (int64_t i = 0; i < plane; ++i) yp[i] *= sn[i];
    }
  }
  auto xn = x.node(); auto sn_ = s.node();
  return make_op(std::move(y), {x, s}, [=](Node& self) {
    const float* dy = self.grad.ptr();
    if (xn->requires_grad) {
      float* dx = xn->ensure_grad().ptr();
      const float* sv = sn_->value.ptr();
      for (int n = 0; n < N; ++n)
        for (int c = 0; c < C; ++c) {
          const int64_t off = (static_cast<int64_t>(n) * C + c) * plane;
          const float* g = dy + off;
          const float* sg = sv + n * plane;
          float* d = dx + off;
          for (int64_t i = 0; i < plane; ++i) d[i] += g[i] * sg[i];
        }
    }
    if (sn_->requires_grad) {
      float* ds = sn_->ensure_grad().ptr();
      const float* xv = xn->value.ptr();
      for (int n = 0; n < N; ++n) {
        float* d = ds + n * plane;
        for (int c = 0; c < C; ++c) {
          const int64_t off = (static_cast<int64_t>(n) * C + c) * plane;
          const float* g = dy + off;
          const float* xp = xv + off;
          for (int64_t i = 0; i < plane; ++i) d[i] += g[i] * xp[i];
        }
      }
    }
  });
}

Var mul_channel(const Var& x, const Var& w) {
  require_4d(x, "mul_channel");
  const auto& xs = x.shape();
  const int N = xs[0], C = xs[1];
  const int64_t plane = static_cast<int64_t>(xs[2]) * xs[3];
  check_shape(w.val(), {N, C}, "mul_channel weights");
  Tensor y = x.val();
  for (int nc = 0; nc < N * C; ++nc) {
    float wv = w.val().at(nc);
    float* yp = y.ptr() + nc * plane;
    for (int64_t i = 0; i < plane; ++i) yp[i] *= wv;
  }
  auto xn = x.node(); auto wn = w.node();
  return make_op(std::move(y), {x, w}, [=](Node& self) {
    const float* dy = self.grad.ptr();
    if (xn->requires_grad) {
      float* dx = xn->ensure_grad().ptr();
      for (int nc = 0; nc < N * C; ++nc) {
        float wv = wn->value.at(nc);
        const float* g = dy + nc * plane;
        float* d = dx + nc * plane;
        for (int64_t i = 0; i < plane; ++i) d[i] += wv * g[i];
      }
    }
    if (wn->requires_grad) {
      float* dw = wn->ensure_grad().ptr();
      const float* xv = xn->value.ptr();
      for (int nc = 0; nc < N * C; ++nc) {
        const float* g = dy + nc * plane;
        const float* xp = xv + nc * plane;
        double acc = 0.0;
        for (int64_t i = 0; i < plane; ++i) acc += static_cast<double>(g[i]) * xp[i];
        dw[nc] += static_cast<float>(acc);
      }
    }
  });
}

namespace {
Var make_op_vec(Tensor value, const std::vector<Var>& parents,
                std::function<void(Node&)> backward_fn) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  n->id = next_node_id();
  bool need = false;
  if (grad_enabled()) {
    for (const Var& p : parents) need = need || (p.defined() && p.node()->requires_grad);
  }
  if (need) {
    n->requires_grad = true;
    for (const Var& p : parents) n->parents.push_back(p.node());
    n->backward_fn = std::move(backward_fn);
  }
  return Var(std::move(n));
}
}  // namespace

Var concat_channels(const std::vector<Var>& xs) {
  if (xs.empty()) throw std::invalid_argument("concat_channels: empty input list");
  const auto& s0 = xs[0].shape();
  const int N = s0[0], H = s0[2], W = s0[3];
  int Ct = 0;
  for (const Var& v : xs) {
    const auto& s = v.shape();
    if (s.size() != 4 || s[0] != N || s[2] != H || s[3] != W)
      throw std::invalid_argument("concat_channels: incompatible shapes");
    Ct += s[1];
  }
  const int64_t plane = static_cast<int64_t>(H) * W;
  Tensor y({N, Ct, H, W});
  int coff = 0;
  for (const Var& v : xs) {
    const int C = v.shape()[1];
    for (int n = 0; n < N; ++n)
      std::memcpy(y.ptr() + (static_cast<int64_t>(n) * Ct + coff) * plane,
                  v.val().ptr() + static_cast<int64_t>(n) * C * plane,
                  sizeof(float) * static_cast<size_t>(C * plane));
    coff += C;
  }
  std::vector<std::shared_ptr<Node>> nodes;
  std::vector<int> chans;
  for (const Var& v : xs) { nodes.push_back(v.node()); chans.push_back(v.shape()[1]); }
  return make_op_vec(std::move(y), xs, [=](Node& self) {
    const float* dy = self.grad.ptr();
    int off = 0;
    for (size_t j = 0; j < nodes.size(); ++j) {
      const int C = chans[j];
      if (nodes[j]->requires_grad) {
        float* dx = nodes[j]->ensure_grad().ptr();
        for (int n = 0; n < N; ++n) {
          const float* g = dy + (static_cast<int64_t>(n) * Ct + off) * plane;
          float* d = dx + static_cast<int64_t>(n) * C * plane;
          for (int64_t i = 0; i < C * plane; ++i) d[i] += g[i];
        }
      }
      off += C;
    }
  });
}

Var slice_channels(const Var& x, int c0, int c1) {
  require_4d(x, "slice_channels");
  const auto& xs = x.shape();
  const int N = xs[0], C = xs[1], H = xs[2], W = xs[3];
  if (c0 < 0 || c1 > C || c0 >= c1) throw std::invalid_argument("slice_channels: bad range");
  const int Cs = c1 - c0;
  const int64_t plane = static_cast<int64_t>(H) * W;
  Tensor y({N, Cs, H, W});
  for (int n = 0; n < N; ++n)
    std::memcpy(y.ptr() + static_cast<int64_t>(n) * Cs * plane,
                x.val().ptr() + (static_cast<int64_t>(n) * C + c0) * plane,
                sizeof(float) * static_cast<size_t>(Cs * plane));
  auto xn = x.node();
  return make_op(std::move(y), {x}, [=](Node& self) {
    if (!xn->requires_grad) return;
    float* dx = xn->ensure_grad().ptr();
    const float* dy = self.grad.ptr();
    for (int n = 0; n < N; ++n) {
      float* d = dx + (static_cast<int64_t>(n) * C + c0) * plane;
      const float* g = dy + static_cast<int64_t>(n) * Cs * plane;
      for (int64_t i = 0; i < Cs * plane; ++i) d[i] += g[i];
    }
  });
}

Var cross_entropy_loss(const Var& probs, const Tensor& onehot, float eps) {
  if (probs.shape() != onehot.shape())
    throw std::invalid_argument("cross_entropy_loss: prediction/target shape mismatch");
  const auto& s = probs.shape();
  const int64_t pixels = static_cast<int64_t>(s[0]) * s[2] * s[3];
  const float* p = probs.val().ptr();
  const float* y = onehot.ptr();
  double acc = 0.0;
  const int64_t n = probs.val().numel();
  for (int64_t i = 0; i < n; ++i)
    if (y[i] != 0.0f) acc -= static_cast<double>(y[i]) * std::log(static_cast<double>(p[i]) + eps);
  Tensor out = Tensor::scalar(static_cast<float>(acc / static_cast<double>(pixels)));
  auto pn = probs.node();
  auto yh = std::make_shared<Tensor>(onehot);
  return make_op(std::move(out), {probs}, [=](Node& self) {
    if (!pn->requires_grad) return;
    float* dp = pn->ensure_grad().ptr();
    const float g = self.grad.at(0) / static_cast<float>(pixels);
    const float* pv = pn->value.ptr();
    const float* yv = yh->ptr();
    const int64_t m = pn->value.numel();
    for (int64_t i = 0; i < m; ++i)
      if (yv[i] != 0.0f) dp[i] -= g * yv[i] / (pv[i] + eps);
  });
}

Var jaccard_loss_node(const Var& probs, const Tensor& onehot, float eps) {
  if (probs.shape() != onehot.shape())
    throw std::invalid_argument("jaccard_loss: prediction/target shape mismatch");
  const auto& s = probs.shape();
  const int N = s[0], C = s[1];
  const int64_t plane = static_cast<int64_t>(s[2]) * s[3];
  const float* p = probs.val().ptr();
  const float* y = onehot.ptr();

  std::vector<double> class_sum(static_cast<size_t>(C), 0.0);
  std::vector<int64_t> class_pos(static_cast<size_t>(C), 0);
  for (int n = 0; n < N; ++n)
    for (int c = 0; c < C; ++c) {
      const int64_t off = (static_cast<int64_t>(n) * C + c) * plane;
      for (int64_t i = 0; i < plane; ++i) {
        const float yv = y[off + i];
        if (yv == 0.0f) continue;
        const double pv = p[off + i];
        class_sum[static_cast<size_t>(c)] += yv * pv / (yv + pv - yv * pv + eps);
        ++class_pos[static_cast<size_t>(c)];
      }
    }
  int present = 0;
  double total = 0.0;
  for (int c = 0; c < C; ++c)
    if (class_pos[static_cast<size_t>(c)] > 0) {
      total += class_sum[static_cast<size_t>(c)] / static_cast<double>(class_pos[static_cast<size_t>(c)]);
      ++present;
    }
  Tensor out = Tensor::scalar(present > 0 ? static_cast<float>(-total / present) : 0.0f);

  auto pn = probs.node();
  auto yh = std::make_shared<Tensor>(onehot);
  auto pos = std::make_shared<std::vector<int64_t>>(std::move(class_pos));
  return make_op(std::move(out), {probs}, [=, pres = present](Node& self) {
    if (!pn->requires_grad || pres == 0) return;
    float* dp = pn->ensure_grad().ptr();
    const float g = self.grad.at(0);
    const float* pv = pn->value.ptr();
    const float* yv = yh->ptr();
    for (int n = 0; n < N; ++n)
      for (int c = 0; c < C; ++c) {
        const int64_t cnt = (*pos)[static_cast<size_t>(c)];
        if (cnt == 0) continue;
        const double w = -static_cast<double>(g) / (static_cast<double>(pres) * static_cast<double>(cnt));
        const int64_t off = (static_cast<int64_t>(n) * C + c) * plane;
        for (int64_t i = 0; i < plane; ++i) {
          const float yy = yv[off + i];
          if (yy == 0.0f) continue;
          const double pp = pv[off + i];
          const double den = yy + pp - yy * pp + eps;
          const double dt = (yy * den - yy * pp * (1.0 - yy)) / (den * den);
          dp[off + i] += static_cast<float>(w * dt);
        }
      }
  });
}

namespace {
inline double softplus(double x) {
  return (x > 0 ? x : 0.0) + std::log1p(std::exp(-std::abs(x)));
}
inline double sigmoid_d(double x) { return 1.0 / (1.0 + std::exp(-x)); }
}  // namespace

Var gen_adv_loss_node(const Var& logits) {
  const float* s = logits.val().ptr();
  const int64_t m = logits.val().numel();
  double acc = 0.0;
  for (int64_t i = 0; i < m; ++i) acc += softplus(-static_cast<double>(s[i]));
  Tensor out = Tensor::scalar(static_cast<float>(acc / static_cast<double>(m)));
  auto ln = logits.node();
  return make_op(std::move(out), {logits}, [=](Node& self) {
    if (!ln->requires_grad) return;
    float* dl = ln->ensure_grad().ptr();
    const float g = self.grad.at(0) / static_cast<float>(m);
    const float* sv = ln->value.ptr();
    for (int64_t i = 0; i < m; ++i)
      dl[i] -= g * static_cast<float>(sigmoid_d(-static_cast<double>(sv[i])));
  });
}

Var disc_loss_node(const Var& logits_real, const Var& logits_fake) {
  if (logits_real.shape() != logits_fake.shape())
    throw std::invalid_argument("disc_loss: score map shape mismatch");
  const int64_t m = logits_real.val().numel();
  const float* sr = logits_real.val().ptr();
  const float* sf = logits_fake.val().ptr();
  double acc = 0.0;
  for (int64_t i = 0; i < m; ++i) acc += softplus(-static_cast<double>(sr[i]));
  for (int64_t i = 0; i < m; ++i) acc += softplus(static_cast<double>(sf[i]));
  Tensor out = Tensor::scalar(static_cast<float>(acc / static_cast<double>(m)));
  auto rn = logits_real.node();
  auto fn = logits_fake.node();
  return make_op(std::move(out), {logits_real, logits_fake}, [=](Node& self) {
    const float g = self.grad.at(0) / static_cast<float>(m);
    if (rn->requires_grad) {
      float* d = rn->ensure_grad().ptr();
      const float* sv = rn->value.ptr();
      for (int64_t i = 0; i < m; ++i)
        d[i] -= g * static_cast<float>(sigmoid_d(-static_cast<double>(sv[i])));
    }
    if (fn->requires_grad) {
      float* d = fn->ensure_grad().ptr();
      const float* sv = fn->value.ptr();
      for (int64_t i = 0; i < m; ++i)
        d[i] += g * static_cast<float>(sigmoid_d(static_cast<double>(sv[i])));
    }
  });
}

}  // namespace cardseg::nn
