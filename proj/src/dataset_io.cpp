#include "cardseg/dataset_io.hpp"

#include <nlohmann/json.hpp>

#include <cmath>
#include <fstream>

namespace cardseg::io {

namespace fs = std::filesystem;

namespace {

void skip_pgm_junk(std::istream& in) {
  for (;;) {
    int ch = in.peek();
    if (ch == '#') {
      std::string line;
      std::getline(in, line);
    } else if (std::isspace(ch)) {
      in.get();
    } else {
      return;
    }
  }
}

struct PgmHeader {
  int width, height, maxval;
};

PgmHeader read_pgm_header(std::istream& in, const fs::path& path) {
  char m0 = 0, m1 = 0;
  in.get(m0);
  in.get(m1);
  if (m0 != 'P' || m1 != '5')
    throw std::runtime_error(path.string() + ": not a binary PGM (P5) file");
  PgmHeader h{};
  skip_pgm_junk(in);
  in >> h.width;
  skip_pgm_junk(in);
  in >> h.height;
  skip_pgm_junk(in);
  in >> h.maxval;
  in.get();  // single whitespace before payload
  if (!in || h.width <= 0 || h.height <= 0 || h.maxval <= 0 || h.maxval > 65535)
    throw std::runtime_error(path.string() + ": malformed PGM header");
  return h;
}

}  // namespace

void write_image_pgm(const fs::path& path, const GrayImage& img) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot write " + path.string());
  f << "P5\n" << img.width << ' ' << img.height << "\n65535\n";
  for (float v : img.pixels) {
    const int q = std::clamp(static_cast<int>(std::lround(v * 65535.0f)), 0, 65535);
    const unsigned char bytes[2] = {static_cast<unsigned char>(q >> 8),
                                    static_cast<unsigned char>(q & 0xff)};
    f.write(reinterpret_cast<const char*>(bytes), 2);
  }
  if (!f) throw std::runtime_error("write failed for " + path.string());
}

GrayImage read_image_pgm(const fs::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open " + path.string());
  const PgmHeader h = read_pgm_header(f, path);
  GrayImage img(h.height, h.width);
  const float scale = 1.0f / static_cast<float>(h.maxval);
  if (h.maxval > 255) {
    std::vector<unsigned char> buf(static_cast<size_t>(h.width) * h.height * 2);
    f.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
    if (!f) throw std::runtime_error(path.string() + ": truncated pixel data");
    for (size_t i = 0; i < img.pixels.size(); ++i)
      img.pixels[i] = scale * static_cast<float>((buf[2 * i] << 8) | buf[2 * i + 1]);
  } else {
    std::vector<unsigned char> buf(static_cast<size_t>(h.width) * h.height);
    f.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
    if (!f) throw std::runtime_error(path.string() + ": truncated pixel data");
    for (size_t i = 0; i < img.pixels.size(); ++i) img.pixels[i] = scale * buf[i];
  }
  return img;
}

void write_mask_pgm(const fs::path& path, const ClassMask& mask) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot write " + path.string());
  f << "P5\n" << mask.width << ' ' << mask.height << "\n255\n";
  f.write(reinterpret_cast<const char*>(mask.labels.data()),
          static_cast<std::streamsize>(mask.labels.size()));
  if (!f) throw std::runtime_error("write failed for " + path.string());
}

ClassMask read_mask_pgm(const fs::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open " + path.string());
  const PgmHeader h = read_pgm_header(f, path);
  if (h.maxval > 255) throw std::runtime_error(path.string() + ": mask PGM must be 8-bit");
  ClassMask mask(h.height, h.width);
  f.read(reinterpret_cast<char*>(mask.labels.data()),
         static_cast<std::streamsize>(mask.labels.size()));
  if (!f) throw std::runtime_error(path.string() + ": truncated mask data");
  for (uint8_t v : mask.labels)
    if (v >= kNumClasses)
      throw std::runtime_error(path.string() + ": mask label " + std::to_string(int(v)) +
                               " outside {0.." + std::to_string(kNumClasses - 1) + "}");
  return mask;
}

namespace {

PhantomStyle style_from_string(const std::string& s) {
  if (s == "A") return PhantomStyle::StyleA;
  if (s == "B") return PhantomStyle::StyleB;
  if (s == "C") return PhantomStyle::StyleC;
  throw std::runtime_error("unknown style tag '" + s + "' in manifest");
}

}  // namespace

std::vector<SliceEntry> load_slice_stack(const fs::path& manifest_path) {
  std::ifstream f(manifest_path);
  if (!f) throw std::runtime_error("cannot open manifest " + manifest_path.string());
  nlohmann::json j;
  f >> j;
  const fs::path base = manifest_path.parent_path();

  std::vector<SliceEntry> out;
  for (const auto& rec : j.at("slices")) {
    SliceEntry e;
    const fs::path img_path = base / rec.at("image").get<std::string>();
    e.image = read_image_pgm(img_path);
    e.image.validate();
    if (rec.contains("mask") && !rec.at("mask").is_null()) {
      const fs::path mask_path = base / rec.at("mask").get<std::string>();
      ClassMask m = read_mask_pgm(mask_path);
      if (m.height != e.image.height || m.width != e.image.width)
        throw std::runtime_error(mask_path.string() + ": mask dims " + std::to_string(m.height) +
                                 "x" + std::to_string(m.width) + " do not match image " +
                                 img_path.string());
      e.mask = std::move(m);
    }
    const std::string dom = rec.value("domain", "source");
    if (dom != "source" && dom != "target")
      throw std::runtime_error(manifest_path.string() + ": unknown domain tag '" + dom + "'");
    e.domain = dom == "source" ? DomainTag::Source : DomainTag::Target;
    if (rec.contains("style")) e.style = style_from_string(rec.at("style").get<std::string>());
    e.split = rec.value("split", std::string{});
    e.id = rec.value("id", static_cast<uint64_t>(out.size()));
    out.push_back(std::move(e));
  }
  return out;
}

void write_dataset(const fs::path& dir, const DatasetSplit& split) {
  fs::create_directories(dir / "images");
  fs::create_directories(dir / "masks");
  nlohmann::json slices = nlohmann::json::array();

  auto image_name = [](uint64_t id) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "images/%05llu.pgm", static_cast<unsigned long long>(id));
    return std::string(buf);
  };
  auto mask_name = [](uint64_t id) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "masks/%05llu.pgm", static_cast<unsigned long long>(id));
    return std::string(buf);
  };

  for (const auto& s : split.source_labeled) {
    write_image_pgm(dir / image_name(s.id), s.image);
    write_mask_pgm(dir / mask_name(s.id), s.mask);
    slices.push_back({{"image", image_name(s.id)},
                      {"mask", mask_name(s.id)},
                      {"domain", "source"},
                      {"style", to_string(s.style)},
                      {"split", "source"},
                      {"id", s.id}});
  }
  for (const auto& s : split.target_unlabeled) {
    write_image_pgm(dir / image_name(s.id), s.image);
    slices.push_back({{"image", image_name(s.id)},
                      {"domain", "target"},
                      {"style", to_string(s.style)},
                      {"split", "target"},
                      {"id", s.id}});
  }
  for (size_t i = 0; i < split.target_heldout.size(); ++i) {
    const uint64_t id = split.target_heldout.id(i);
    write_image_pgm(dir / image_name(id), split.target_heldout.image(i));
    write_mask_pgm(dir / mask_name(id), split.target_heldout.mask(i));
    slices.push_back({{"image", image_name(id)},
                      {"mask", mask_name(id)},
                      {"domain", "target"},
                      {"style", "C"},
                      {"split", "heldout"},
                      {"id", id}});
  }

  nlohmann::json manifest;
  manifest["slices"] = std::move(slices);
  std::ofstream f(dir / "manifest.json");
  if (!f) throw std::runtime_error("cannot write manifest under " + dir.string());
  f << manifest.dump(2) << '\n';
}

DatasetSplit read_dataset(const fs::path& dir) {
  auto entries = load_slice_stack(dir / "manifest.json");
  DatasetSplit split;
  for (auto& e : entries) {
    if (e.split == "source") {
      if (!e.mask)
        throw std::runtime_error("dataset " + dir.string() + ": source slice " +
                                 std::to_string(e.id) + " has no mask");
      split.source_labeled.push_back(
          {std::move(e.image), std::move(*e.mask), DomainTag::Source, e.style, e.id});
    } else if (e.split == "target") {
      split.target_unlabeled.push_back({std::move(e.image), DomainTag::Target, e.style, e.id});
    } else if (e.split == "heldout") {
      if (!e.mask)
        throw std::runtime_error("dataset " + dir.string() + ": heldout slice " +
                                 std::to_string(e.id) + " has no mask");
      split.target_heldout.add(std::move(e.image), std::move(*e.mask), e.id);
    } else {
      throw std::runtime_error("dataset " + dir.string() + ": slice " + std::to_string(e.id) +
                               " has unknown split tag '" + e.split + "'");
    }
  }
  if (split.source_labeled.empty())
    throw std::runtime_error("dataset " + dir.string() + ": no source slices");
  return split;
}

}  // namespace cardseg::io
