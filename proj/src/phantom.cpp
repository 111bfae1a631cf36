#include "cardseg/phantom.hpp"

#include <cmath>

#include "cardseg/tensor.hpp"

namespace cardseg {

namespace {

constexpr double kPi = 3.14159265358979323846;
constexpr int kRetryCap = 16;
constexpr int kMinClassPixels = 10;

// Class mean intensities {bg, LV, RV, Myo}. Class ORDER (bg < Myo < RV < LV)
// is identical in all styles, so a monotone intensity remap can carry one
// style into another; the absolute levels are far apart (A vs C >= 0.24 per
// class), which is the manufactured domain gap.
constexpr float kMeans[3][4] = {
    {0.05f, 0.72f, 0.55f, 0.28f},  // StyleA
    {0.09f, 0.64f, 0.48f, 0.24f},  // StyleB
    {0.38f, 0.97f, 0.80f, 0.55f},  // StyleC
};
constexpr double kBlurSigma[3] = {0.6, 1.1, 0.9};
constexpr double kBiasAmp[3] = {0.04, 0.06, 0.07};
constexpr double kNoiseMult[3] = {0.75, 1.5, 1.0};

struct Geometry {
  double cx, cy;
  double r_lv, r_out;
  double rv_cx, rv_cy, r_rv;
};

Geometry sample_geometry(nn::Rng& rng, const PhantomSpec& spec) {
  const double L = spec.image_size;
  Geometry g;
  g.cx = L / 2.0 + rng.uniform(-0.035, 0.035) * L;
  g.cy = L / 2.0 + rng.uniform(-0.035, 0.035) * L;
  g.r_lv = rng.uniform(spec.lv_radius_range.first, spec.lv_radius_range.second) * L;
  const double t = rng.uniform(spec.myo_thickness_range.first, spec.myo_thickness_range.second) * L;
  g.r_out = g.r_lv + t;
  g.r_rv = rng.uniform(spec.rv_scale_range.first, spec.rv_scale_range.second) * g.r_out;
  const double theta = rng.uniform(150.0, 210.0) * kPi / 180.0;
  const double d = g.r_out + 0.5 * g.r_rv;
  g.rv_cx = g.cx + d * std::cos(theta);
  g.rv_cy = g.cy + d * std::sin(theta);
  return g;
}

bool geometry_ok(const Geometry& g, int L) {
  if (g.r_out - g.r_lv <= 2.0) return false;  // degenerate ring
  const double margin = 2.0;
  auto inside = [&](double x, double y, double r) {
    return x - r >= margin && x + r <= L - margin && y - r >= margin && y + r <= L - margin;
  };
  return inside(g.cx, g.cy, g.r_out) && inside(g.rv_cx, g.rv_cy, g.r_rv);
}

ClassMask rasterize(const Geometry& g, int L) {
  ClassMask m(L, L);
  for (int r = 0; r < L; ++r)
    for (int c = 0; c < L; ++c) {
      const double x = c + 0.5, y = r + 0.5;
      const double dh = std::hypot(x - g.cx, y - g.cy);
      uint8_t label = 0;
      if (dh <= g.r_lv) {
        label = 1;
      } else if (dh <= g.r_out) {
        label = 3;
      } else if (std::hypot(x - g.rv_cx, y - g.rv_cy) <= g.r_rv) {
        label = 2;
      }
      m.at(r, c) = label;
    }
  return m;
}

bool class_counts_ok(const ClassMask& m) {
  int counts[kNumClasses] = {0, 0, 0, 0};
  for (uint8_t v : m.labels) ++counts[v];
  for (int c = 0; c < kNumClasses; ++c)
    if (counts[c] < kMinClassPixels) return false;
  return true;
}

void gaussian_blur(std::vector<float>& img, int H, int W, double sigma) {
  if (sigma <= 0.0) return;
  const int rad = static_cast<int>(std::ceil(2.5 * sigma));
  std::vector<float> kernel(static_cast<size_t>(2 * rad + 1));
  double sum = 0.0;
  for (int i = -rad; i <= rad; ++i) {
    const double v = std::exp(-0.5 * i * i / (sigma * sigma));
    kernel[static_cast<size_t>(i + rad)] = static_cast<float>(v);
    sum += v;
  }
  for (float& v : kernel) v = static_cast<float>(v / sum);

  std::vector<float> tmp(img.size());
  for (int r = 0; r < H; ++r)
    for (int c = 0; c < W; ++c) {
      double acc = 0.0;
      for (int i = -rad; i <= rad; ++i) {
        int cc = std::clamp(c + i, 0, W - 1);
        acc += kernel[static_cast<size_t>(i + rad)] * img[static_cast<size_t>(r) * W + cc];
      }
      tmp[static_cast<size_t>(r) * W + c] = static_cast<float>(acc);
    }
  for (int r = 0; r < H; ++r)
    for (int c = 0; c < W; ++c) {
      double acc = 0.0;
      for (int i = -rad; i <= rad; ++i) {
        int rr = std::clamp(r + i, 0, H - 1);
        acc += kernel[static_cast<size_t>(i + rad)] * tmp[static_cast<size_t>(rr) * W + c];
      }
      img[static_cast<size_t>(r) * W + c] = static_cast<float>(acc);
    }
}

}  // namespace

const char* to_string(PhantomStyle s) {
  switch (s) {
    case PhantomStyle::StyleA: return "A";
    case PhantomStyle::StyleB: return "B";
    case PhantomStyle::StyleC: return "C";
  }
  return "?";
}

const float* style_class_means(PhantomStyle s) { return kMeans[static_cast<int>(s)]; }

void PhantomSpec::validate() const {
  if (image_size < kMinImageSize)
    throw std::invalid_argument("PhantomSpec: image_size must be >= " +
                                std::to_string(kMinImageSize));
  if (noise_sigma < 0.0) throw std::invalid_argument("PhantomSpec: noise_sigma must be >= 0");
  auto positive_range = [](std::pair<double, double> r) {
    return r.first > 0.0 && r.second >= r.first;
  };
  if (!positive_range(lv_radius_range) || !positive_range(myo_thickness_range) ||
      !positive_range(rv_scale_range))
    throw std::invalid_argument("PhantomSpec: geometric ranges must be positive and ordered");
  // worst-case reach of the RV disk from the jittered heart center must stay inside
  const double r_out_max = lv_radius_range.second + myo_thickness_range.second;
  const double reach = (r_out_max + 1.5 * rv_scale_range.second * r_out_max + 0.035) * image_size;
  if (reach > image_size / 2.0 - 2.0)
    throw std::invalid_argument("PhantomSpec: geometry can exceed image bounds");
}

std::pair<GrayImage, ClassMask> generate_phantom(const PhantomSpec& spec) {
  spec.validate();
  const int L = spec.image_size;
  const int si = static_cast<int>(spec.domain_style);

  // Geometry stream is style-independent: same seed -> same mask in every style.
  nn::Rng geo(nn::Rng::derive_seed(spec.seed, 0x47454Fu));
  Geometry g{};
  ClassMask mask;
  bool ok = false;
  for (int attempt = 0; attempt < kRetryCap && !ok; ++attempt) {
    g = sample_geometry(geo, spec);
    if (!geometry_ok(g, L)) continue;
    mask = rasterize(g, L);
    ok = class_counts_ok(mask);
  }
  if (!ok)
    throw std::runtime_error("generate_phantom: no valid geometry after " +
                             std::to_string(kRetryCap) + " attempts (seed " +
                             std::to_string(spec.seed) + ")");

  nn::Rng app(nn::Rng::derive_seed(spec.seed, 0x415050u + static_cast<uint64_t>(si)));
  float means[kNumClasses];
  for (int c = 0; c < kNumClasses; ++c)
    means[c] = kMeans[si][c] + static_cast<float>(app.uniform(-0.02, 0.02));

  GrayImage img(L, L);
  for (size_t i = 0; i < mask.labels.size(); ++i) img.pixels[i] = means[mask.labels[i]];
  gaussian_blur(img.pixels, L, L, kBlurSigma[si]);

  const double amp = kBiasAmp[si];
  const double ph1 = app.uniform(0.0, 2.0 * kPi);
  const double ph2 = app.uniform(0.0, 2.0 * kPi);
  const double sigma = spec.noise_sigma * kNoiseMult[si];
  for (int r = 0; r < L; ++r)
    for (int c = 0; c < L; ++c) {
      double v = img.at(r, c);
      v += amp * std::sin(kPi * (c + 0.5) / L + ph1) * std::sin(kPi * (r + 0.5) / L + ph2);
      if (sigma > 0.0) v += app.normal(0.0, sigma);
      img.at(r, c) = static_cast<float>(std::clamp(v, 0.0, 1.0));
    }
  return {std::move(img), std::move(mask)};
}

DatasetSplit make_splits(int n_source, int n_target, int n_heldout, uint64_t seed,
                         const PhantomSpec& base) {
  if (n_source < 1 || n_target < 1 || n_heldout < 1)
    throw std::invalid_argument("make_splits: all split sizes must be >= 1");
  DatasetSplit split;
  uint64_t id = 0;
  for (int i = 0; i < n_source; ++i, ++id) {
    PhantomSpec spec = base;
    spec.domain_style = (i % 2 == 0) ? PhantomStyle::StyleA : PhantomStyle::StyleB;
    spec.seed = nn::Rng::derive_seed(seed, id);
    auto [img, mask] = generate_phantom(spec);
    split.source_labeled.push_back(
        {std::move(img), std::move(mask), DomainTag::Source, spec.domain_style, id});
  }
  for (int i = 0; i < n_target; ++i, ++id) {
    PhantomSpec spec = base;
    spec.domain_style = PhantomStyle::StyleC;
    spec.seed = nn::Rng::derive_seed(seed, id);
    auto [img, mask] = generate_phantom(spec);
    (void)mask;  // target labels exist in the world but are withheld from training
    split.target_unlabeled.push_back({std::move(img), DomainTag::Target, spec.domain_style, id});
  }
  for (int i = 0; i < n_heldout; ++i, ++id) {
    PhantomSpec spec = base;
    spec.domain_style = PhantomStyle::StyleC;
    spec.seed = nn::Rng::derive_seed(seed, id);
    auto [img, mask] = generate_phantom(spec);
    split.target_heldout.add(std::move(img), std::move(mask), id);
  }
  return split;
}

}  // namespace cardseg
