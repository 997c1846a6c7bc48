#pragma once

#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "ugest/autodiff.hpp"
#include "ugest/rng.hpp"
#include "ugest/ugtn.hpp"

namespace ugest {

/// Named learnable tensors in a fixed insertion order.
///
/// `decay` marks weight matrices and kernels that take the L2 penalty;
/// biases and normalisation gains do not.
template <class T>
class ParamSet {
 public:
  struct Entry {
    std::string name;
    Tensor<T> value;
    bool decay;
  };

  Tensor<T>& add(std::string name, Tensor<T> value, bool decay) {
    if (index_.count(name)) throw ConfigError("duplicate parameter name: " + name);
    value.requires_grad = true;
    index_.emplace(name, entries_.size());
    entries_.push_back(Entry{std::move(name), std::move(value), decay});
    return entries_.back().value;
  }

  bool contains(const std::string& name) const { return index_.count(name) != 0; }
  Tensor<T>& operator[](const std::string& name) { return entries_.at(lookup(name)).value; }
  const Tensor<T>& operator[](const std::string& name) const { return entries_.at(lookup(name)).value; }

  std::vector<Entry>& entries() { return entries_; }
  const std::vector<Entry>& entries() const { return entries_; }
  std::size_t size() const { return entries_.size(); }

  std::size_t count() const {
    std::size_t n = 0;
    for (const auto& e : entries_) n += e.value.size();
    return n;
  }

  void zero_grad() {
    for (auto& e : entries_) e.value.zero_grad();
  }

  template <class U>
  ParamSet<U> cast() const {
    ParamSet<U> out;
    for (const auto& e : entries_) out.add(e.name, e.value.template cast<U>(), e.decay);
    return out;
  }

 private:
  std::size_t lookup(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw ConfigError("unknown parameter: " + name);
    return it->second;
  }

  std::vector<Entry> entries_;
  std::unordered_map<std::string, std::size_t> index_;
};

/// Binds parameters onto a tape on first use, so each parameter appears once.
template <class T>
class ParamBinder {
 public:
  ParamBinder(Tape<T>& tape, ParamSet<T>& params) : tape_(tape), params_(params) {}

  Var operator()(const std::string& name) {
    auto it = bound_.find(name);
    if (it != bound_.end()) return it->second;
    Var v = tape_.param(params_[name]);
    bound_.emplace(name, v);
    return v;
  }

  Tape<T>& tape() { return tape_; }
  ParamSet<T>& params() { return params_; }

 private:
  Tape<T>& tape_;
  ParamSet<T>& params_;
  std::unordered_map<std::string, Var> bound_;
};

/// uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)).
template <class T>
Tensor<T> init_uniform(Shape shape, std::size_t fan_in, Rng& rng) {
  Tensor<T> t(std::move(shape));
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  for (auto& v : t.data()) v = static_cast<T>(rng.uniform(-bound, bound));
  return t;
}

/// Checkpoint layout: <dir>/manifest.json plus one UGTN file per parameter.
/// `extra` is stored verbatim under "config".
template <class T>
void save_checkpoint(const std::filesystem::path& dir, const ParamSet<T>& params, const nlohmann::json& extra) {
  std::filesystem::create_directories(dir);
  nlohmann::ordered_json manifest;
  manifest["format"] = "ugest-checkpoint";
  manifest["version"] = 1;
  manifest["config"] = extra;
  nlohmann::ordered_json files = nlohmann::ordered_json::array();
  for (const auto& e : params.entries()) {
    const std::string file = e.name + ".ugtn";
    ugtn::save(dir / file, e.value);
    files.push_back({{"name", e.name}, {"file", file}, {"decay", e.decay}});
  }
  manifest["params"] = files;
  std::ofstream f(dir / "manifest.json", std::ios::trunc);
  if (!f) throw IoError("cannot write checkpoint manifest: " + (dir / "manifest.json").string());
  f << manifest.dump(2) << '\n';
}

struct LoadedCheckpoint {
  ParamSet<float> params;
  nlohmann::json config;
};

inline LoadedCheckpoint load_checkpoint(const std::filesystem::path& dir) {
  std::ifstream f(dir / "manifest.json");
  if (!f) throw IoError("cannot read checkpoint manifest: " + (dir / "manifest.json").string());
  nlohmann::json manifest;
  try {
    f >> manifest;
  } catch (const nlohmann::json::exception& e) {
    throw IoError("malformed checkpoint manifest " + (dir / "manifest.json").string() + ": " + e.what());
  }
  LoadedCheckpoint out;
  out.config = manifest.value("config", nlohmann::json::object());
  for (const auto& p : manifest.at("params")) {
    out.params.add(p.at("name").get<std::string>(), ugtn::load(dir / p.at("file").get<std::string>()),
                   p.value("decay", false));
  }
  return out;
}

}  // namespace ugest
