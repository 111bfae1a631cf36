#include "cardseg/preprocess.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>

namespace cardseg::prep {

namespace {

struct ResizePlan {
  int h2, w2;    // scaled size (shorter side == target)
  int r0, c0;    // crop offset into the scaled grid
};

ResizePlan plan_geometry(int h, int w, int target) {
  if (target < 1) throw std::invalid_argument("center_crop_resize: target must be positive");
  ResizePlan p{};
  if (h <= w) {
    p.h2 = target;
    p.w2 = std::max(target, static_cast<int>(std::lround(static_cast<double>(w) * target / h)));
  } else {
    p.w2 = target;
    p.h2 = std::max(target, static_cast<int>(std::lround(static_cast<double>(h) * target / w)));
  }
  p.r0 = (p.h2 - target) / 2;
  p.c0 = (p.w2 - target) / 2;
  return p;
}

}  // namespace

GrayImage center_crop_resize(const GrayImage& img, int target_size) {
  GrayImage::check_dims(img.height, img.width);
  if (img.height == target_size && img.width == target_size) return img;
  const ResizePlan p = plan_geometry(img.height, img.width, target_size);
  GrayImage out(target_size, target_size);
  const double rh = static_cast<double>(img.height) / p.h2;
  const double rw = static_cast<double>(img.width) / p.w2;
  for (int r = 0; r < target_size; ++r) {
    double sr = (r + p.r0 + 0.5) * rh - 0.5;
    sr = std::max(0.0, sr);
    int r_lo = std::min(static_cast<int>(sr), img.height - 1);
    int r_hi = std::min(r_lo + 1, img.height - 1);
    double fr = sr - r_lo;
    for (int c = 0; c < target_size; ++c) {
      double sc = (c + p.c0 + 0.5) * rw - 0.5;
      sc = std::max(0.0, sc);
      int c_lo = std::min(static_cast<int>(sc), img.width - 1);
      int c_hi = std::min(c_lo + 1, img.width - 1);
      double fc = sc - c_lo;
      const double v = (1 - fr) * ((1 - fc) * img.at(r_lo, c_lo) + fc * img.at(r_lo, c_hi)) +
                       fr * ((1 - fc) * img.at(r_hi, c_lo) + fc * img.at(r_hi, c_hi));
      out.at(r, c) = static_cast<float>(std::clamp(v, 0.0, 1.0));
    }
  }
  return out;
}

ClassMask center_crop_resize(const ClassMask& mask, int target_size) {
  if (mask.height == target_size && mask.width == target_size) return mask;
  const ResizePlan p = plan_geometry(mask.height, mask.width, target_size);
  ClassMask out(target_size, target_size);
  for (int r = 0; r < target_size; ++r) {
    int sr = std::min(static_cast<int>((r + p.r0 + 0.5) * mask.height / p.h2), mask.height - 1);
    for (int c = 0; c < target_size; ++c) {
      int sc = std::min(static_cast<int>((c + p.c0 + 0.5) * mask.width / p.w2), mask.width - 1);
      out.at(r, c) = mask.at(sr, sc);
    }
  }
  return out;
}

void HistogramReference::validate() const {
  if (bins < 2 || cumulative.size() != static_cast<size_t>(bins))
    throw std::invalid_argument("HistogramReference: bad bin count");
  double prev = 0.0;
  for (double v : cumulative) {
    if (v < prev - 1e-12) throw std::invalid_argument("HistogramReference: CDF not monotone");
    prev = v;
  }
  if (std::abs(cumulative.back() - 1.0) > 1e-9)
    throw std::invalid_argument("HistogramReference: CDF does not end at 1");
}

double HistogramReference::cdf(double v) const {
  if (v <= 0.0) return 0.0;
  if (v >= 1.0) return 1.0;
  const double x = v * bins;
  const int k = std::min(static_cast<int>(x), bins - 1);
  const double lo = k == 0 ? 0.0 : cumulative[static_cast<size_t>(k) - 1];
  const double hi = cumulative[static_cast<size_t>(k)];
  return lo + (hi - lo) * (x - k);
}

double HistogramReference::quantile(double u) const {
  u = std::clamp(u, 0.0, 1.0);
  const auto it = std::lower_bound(cumulative.begin(), cumulative.end(), u);
  const int k = static_cast<int>(it - cumulative.begin());
  if (k >= bins) return 1.0;
  const double lo = k == 0 ? 0.0 : cumulative[static_cast<size_t>(k) - 1];
  const double hi = cumulative[static_cast<size_t>(k)];
  const double frac = hi > lo ? (u - lo) / (hi - lo) : 0.5;
  return (k + frac) / bins;
}

void HistogramReference::save(const std::filesystem::path& path) const {
  nlohmann::json j;
  j["bins"] = bins;
  std::vector<double> edges(static_cast<size_t>(bins) + 1);
  for (int k = 0; k <= bins; ++k) edges[static_cast<size_t>(k)] = static_cast<double>(k) / bins;
  j["edges"] = edges;
  j["cumulative"] = cumulative;
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot write " + path.string());
  f << j.dump(2) << '\n';
}

HistogramReference HistogramReference::load(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot open " + path.string());
  nlohmann::json j;
  f >> j;
  HistogramReference ref;
  ref.bins = j.at("bins").get<int>();
  ref.cumulative = j.at("cumulative").get<std::vector<double>>();
  ref.validate();
  return ref;
}

namespace {

HistogramReference cdf_of_pixels(const std::vector<const std::vector<float>*>& pools, int bins) {
  HistogramReference ref;
  ref.bins = bins;
  std::vector<int64_t> hist(static_cast<size_t>(bins), 0);
  int64_t total = 0;
  for (const auto* px : pools)
    for (float v : *px) {
      int k = std::min(static_cast<int>(v * bins), bins - 1);
      ++hist[static_cast<size_t>(std::max(0, k))];
      ++total;
    }
  if (total == 0) throw std::invalid_argument("histogram: empty pixel population");
  ref.cumulative.resize(static_cast<size_t>(bins));
  double acc = 0.0;
  for (int k = 0; k < bins; ++k) {
    acc += static_cast<double>(hist[static_cast<size_t>(k)]) / static_cast<double>(total);
    ref.cumulative[static_cast<size_t>(k)] = acc;
  }
  ref.cumulative.back() = 1.0;
  return ref;
}

}  // namespace

HistogramReference build_reference(const std::vector<const GrayImage*>& images, int bins) {
  if (images.empty()) throw std::invalid_argument("build_reference: empty image list");
  if (bins < 2) throw std::invalid_argument("build_reference: need at least 2 bins");
  std::vector<const std::vector<float>*> pools;
  pools.reserve(images.size());
  for (const GrayImage* im : images) pools.push_back(&im->pixels);
  return cdf_of_pixels(pools, bins);
}

GrayImage histogram_match(const GrayImage& img, const HistogramReference& ref) {
  ref.validate();
  const auto [mn, mx] = std::minmax_element(img.pixels.begin(), img.pixels.end());
  GrayImage out = img;
  if (*mn == *mx) {  // quantile map undefined; declared convention
    const float med = static_cast<float>(ref.quantile(0.5));
    std::fill(out.pixels.begin(), out.pixels.end(), med);
    return out;
  }
  const HistogramReference own = cdf_of_pixels({&img.pixels}, ref.bins);
  for (float& v : out.pixels)
    v = static_cast<float>(std::clamp(ref.quantile(own.cdf(v)), 0.0, 1.0));
  return out;
}

double ks_distance(const std::vector<float>& pixels, const HistogramReference& ref) {
  const HistogramReference emp = cdf_of_pixels({&pixels}, ref.bins);
  double d = 0.0;
  for (int k = 0; k < ref.bins; ++k)
    d = std::max(d, std::abs(emp.cumulative[static_cast<size_t>(k)] -
                             ref.cumulative[static_cast<size_t>(k)]));
  return d;
}

double ks_distance(const std::vector<float>& a, const std::vector<float>& b, int bins) {
  const HistogramReference ca = cdf_of_pixels({&a}, bins);
  const HistogramReference cb = cdf_of_pixels({&b}, bins);
  double d = 0.0;
  for (int k = 0; k < bins; ++k)
    d = std::max(d, std::abs(ca.cumulative[static_cast<size_t>(k)] -
                             cb.cumulative[static_cast<size_t>(k)]));
  return d;
}

HistogramReference preprocess_split(DatasetSplit& split, const PreprocessOptions& opt) {
  for (auto& s : split.source_labeled) {
    s.image = center_crop_resize(s.image, opt.target_size);
    s.mask = center_crop_resize(s.mask, opt.target_size);
  }
  for (auto& s : split.target_unlabeled) s.image = center_crop_resize(s.image, opt.target_size);
  for (size_t i = 0; i < split.target_heldout.size(); ++i) {
    split.target_heldout.mutable_image(i) =
        center_crop_resize(split.target_heldout.image(i), opt.target_size);
    split.target_heldout.mutable_mask(i) =
        center_crop_resize(split.target_heldout.mutable_mask(i), opt.target_size);
  }

  std::vector<const GrayImage*> source_images;
  for (const auto& s : split.source_labeled) source_images.push_back(&s.image);
  HistogramReference ref = build_reference(source_images, opt.bins);

  if (opt.match_histograms) {
    for (auto& s : split.source_labeled) s.image = histogram_match(s.image, ref);
    for (auto& s : split.target_unlabeled) s.image = histogram_match(s.image, ref);
    for (size_t i = 0; i < split.target_heldout.size(); ++i)
      split.target_heldout.mutable_image(i) =
          histogram_match(split.target_heldout.image(i), ref);
  }
  return ref;
}

}  // namespace cardseg::prep
