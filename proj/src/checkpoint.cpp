#include "cardseg/checkpoint.hpp"

#include <nlohmann/json.hpp>

#include <cstring>
#include <fstream>

namespace cardseg::nn {

namespace {
constexpr char kMagic[4] = {'C', 'S', 'A', 'R'};
constexpr uint32_t kVersion = 1;
}  // namespace

void TensorArchive::add(const std::string& name, Tensor t) {
  if (index_.count(name)) throw std::invalid_argument("TensorArchive: duplicate name " + name);
  index_[name] = entries_.size();
  entries_.emplace_back(name, std::move(t));
}

bool TensorArchive::has(const std::string& name) const { return index_.count(name) != 0; }

const Tensor& TensorArchive::get(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw std::out_of_range("TensorArchive: no tensor named " + name);
  return entries_[it->second].second;
}

void TensorArchive::save(const std::filesystem::path& path) const {
  nlohmann::json manifest;
  manifest["tensors"] = nlohmann::json::array();
  uint64_t offset = 0;
  for (const auto& [name, t] : entries_) {
    manifest["tensors"].push_back({{"name", name},
                                   {"dtype", "f32"},
                                   {"shape", t.shape},
                                   {"offset", offset},
                                   {"nbytes", t.numel() * sizeof(float)}});
    offset += static_cast<uint64_t>(t.numel()) * sizeof(float);
  }
  manifest["meta"] = meta;
  const std::string js = manifest.dump();

  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("TensorArchive: cannot open " + path.string() + " for write");
  f.write(kMagic, 4);
  uint32_t ver = kVersion;
  f.write(reinterpret_cast<const char*>(&ver), sizeof(ver));
  uint64_t jlen = js.size();
  f.write(reinterpret_cast<const char*>(&jlen), sizeof(jlen));
  f.write(js.data(), static_cast<std::streamsize>(js.size()));
  for (const auto& [name, t] : entries_)
    f.write(reinterpret_cast<const char*>(t.ptr()),
            static_cast<std::streamsize>(t.numel() * sizeof(float)));
  if (!f) throw std::runtime_error("TensorArchive: write failed for " + path.string());
}

TensorArchive TensorArchive::load(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("TensorArchive: cannot open " + path.string());
  char magic[4];
  f.read(magic, 4);
  if (!f || std::memcmp(magic, kMagic, 4) != 0)
    throw std::runtime_error("TensorArchive: " + path.string() + " is not a checkpoint archive");
  uint32_t ver = 0;
  f.read(reinterpret_cast<char*>(&ver), sizeof(ver));
  if (ver != kVersion)
    throw std::runtime_error("TensorArchive: unsupported version " + std::to_string(ver));
  uint64_t jlen = 0;
  f.read(reinterpret_cast<char*>(&jlen), sizeof(jlen));
  std::string js(jlen, '\0');
  f.read(js.data(), static_cast<std::streamsize>(jlen));
  if (!f) throw std::runtime_error("TensorArchive: truncated manifest in " + path.string());

  nlohmann::json manifest = nlohmann::json::parse(js);
  TensorArchive ar;
  ar.meta = manifest.value("meta", std::map<std::string, std::string>{});
  for (const auto& e : manifest.at("tensors")) {
    std::vector<int> shape = e.at("shape").get<std::vector<int>>();
    Tensor t(shape);
    f.read(reinterpret_cast<char*>(t.ptr()),
           static_cast<std::streamsize>(t.numel() * sizeof(float)));
    if (!f) throw std::runtime_error("TensorArchive: truncated payload in " + path.string());
    ar.add(e.at("name").get<std::string>(), std::move(t));
  }
  return ar;
}

}  // namespace cardseg::nn
