#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "lmfb/common.hpp"
#include "lmfb/tensor.hpp"

namespace lmfb {

// Named dense parameter tensors with a content-hash identity. Iteration
// order is insertion order, which fixes both the checkpoint layout and the
// optimizer update order.
class ParamStore {
 public:
  Tensor& add(const std::string& name, Tensor t) {
    if (index_.count(name)) throw UsageError("ParamStore::add: duplicate name " + name);
    index_[name] = entries_.size();
    entries_.push_back({name, std::move(t)});
    dirty_ = true;
    return entries_.back().tensor;
  }

  Tensor& at(const std::string& name) {
    auto it = index_.find(name);
    if (it == index_.end()) throw UsageError("ParamStore::at: unknown parameter " + name);
    return entries_[it->second].tensor;
  }

  const Tensor& at(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw UsageError("ParamStore::at: unknown parameter " + name);
    return entries_[it->second].tensor;
  }

  std::size_t count() const { return entries_.size(); }
  const std::string& name(std::size_t i) const { return entries_[i].name; }
  Tensor& tensor(std::size_t i) { return entries_[i].tensor; }
  const Tensor& tensor(std::size_t i) const { return entries_[i].tensor; }

  void zero_grads() {
    for (auto& e : entries_) e.tensor.zero_grad();
  }

  // Call after any in-place parameter update so checkpoint_id() re-hashes.
  void mark_dirty() { dirty_ = true; }

  // Content hash over (name, shape, values) of every tensor in order.
  const std::string& checkpoint_id() const {
    if (dirty_) {
      std::uint64_t h = 0xcbf29ce484222325ull;
      for (const auto& e : entries_) {
        h = fnv1a(e.name, h);
        for (std::size_t d : e.tensor.shape()) h = fnv1a(&d, sizeof(d), h);
        auto v = e.tensor.values();
        h = fnv1a(v.data(), v.size() * sizeof(double), h);
      }
      id_cache_ = hex64(h);
      dirty_ = false;
    }
    return id_cache_;
  }

  ParamStore deep_copy(bool requires_grad) const {
    ParamStore out;
    for (const auto& e : entries_) out.add(e.name, e.tensor.detached_copy(requires_grad));
    return out;
  }

  double grad_norm() const {
    double s = 0.0;
    for (const auto& e : entries_)
      if (e.tensor.requires_grad())
        for (double g : e.tensor.grad()) s += g * g;
    return std::sqrt(s);
  }

  void scale_grads(double c) {
    for (auto& e : entries_)
      if (e.tensor.requires_grad())
        for (double& g : e.tensor.grad()) g *= c;
  }

  // Checkpoint layout: <dir>/manifest.json (names, shapes, checkpoint_id)
  // plus <dir>/tensors.bin holding each tensor's values as raw
  // little-endian f64 in manifest order.
  void save(const std::filesystem::path& dir) const {
    static_assert(std::endian::native == std::endian::little,
                  "checkpoint writer assumes a little-endian host");
    std::filesystem::create_directories(dir);
    nlohmann::json manifest;
    manifest["checkpoint_id"] = checkpoint_id();
    manifest["tensors"] = nlohmann::json::array();
    std::ofstream bin(dir / "tensors.bin", std::ios::binary | std::ios::trunc);
    for (const auto& e : entries_) {
      manifest["tensors"].push_back({{"name", e.name}, {"shape", e.tensor.shape()}});
      auto v = e.tensor.values();
      bin.write(reinterpret_cast<const char*>(v.data()),
                static_cast<std::streamsize>(v.size() * sizeof(double)));
    }
    if (!bin) throw ConfigError("ParamStore::save: failed writing " + (dir / "tensors.bin").string());
    bin.close();
    std::ofstream mf(dir / "manifest.json", std::ios::trunc);
    mf << manifest.dump(2) << "\n";
  }

  // Loads into the existing layout, verifying names, shapes and checksum.
  void load(const std::filesystem::path& dir) {
    std::ifstream mf(dir / "manifest.json");
    if (!mf) throw ConfigError("checkpoint manifest not found: " + (dir / "manifest.json").string());
    nlohmann::json manifest = nlohmann::json::parse(mf);
    std::ifstream bin(dir / "tensors.bin", std::ios::binary);
    if (!bin) throw ConfigError("checkpoint tensors not found: " + (dir / "tensors.bin").string());
    const auto& tensors = manifest.at("tensors");
    if (tensors.size() != entries_.size())
      throw DataError("checkpoint load: tensor count mismatch");
    for (std::size_t i = 0; i < entries_.size(); ++i) {
      const auto& meta = tensors[i];
      if (meta.at("name").get<std::string>() != entries_[i].name)
        throw DataError("checkpoint load: name mismatch at " + entries_[i].name);
      Shape shape = meta.at("shape").get<Shape>();
      if (shape != entries_[i].tensor.shape())
        throw DataError("checkpoint load: shape mismatch at " + entries_[i].name);
      auto v = entries_[i].tensor.values();
      bin.read(reinterpret_cast<char*>(v.data()),
               static_cast<std::streamsize>(v.size() * sizeof(double)));
      if (!bin) throw DataError("checkpoint load: truncated tensors.bin");
    }
    dirty_ = true;
    if (checkpoint_id() != manifest.at("checkpoint_id").get<std::string>())
      throw DataError("checkpoint load: checksum mismatch");
  }

 private:
  struct Entry {
    std::string name;
    Tensor tensor;
  };
  std::vector<Entry> entries_;
  std::unordered_map<std::string, std::size_t> index_;
  mutable bool dirty_ = true;
  mutable std::string id_cache_;
};

}  // namespace lmfb
