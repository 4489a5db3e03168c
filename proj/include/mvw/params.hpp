#pragma once

#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include <json.hpp>

#include "mvw/graph.hpp"
#include "mvw/mvt.hpp"
#include "mvw/rng.hpp"

namespace mvw {

/// Ordered collection of named parameters. Creation order is the canonical
/// order for flattening, optimizer state and checkpoints.
template <class S>
class ParamStore {
 public:
  Parameter<S>& create(const std::string& name, Eigen::Index rows, Eigen::Index cols) {
    if (by_name_.count(name)) throw ConfigError("duplicate parameter: " + name);
    auto p = std::make_unique<Parameter<S>>();
    p->name = name;
    p->value = Mat<S>::Zero(rows, cols);
    p->zeroGrad();
    by_name_[name] = params_.size();
    params_.push_back(std::move(p));
    return *params_.back();
  }

  Parameter<S>& at(const std::string& name) {
    auto it = by_name_.find(name);
    if (it == by_name_.end()) throw ConfigError("unknown parameter: " + name);
    return *params_[it->second];
  }
  const Parameter<S>& at(const std::string& name) const {
    return const_cast<ParamStore*>(this)->at(name);
  }
  bool has(const std::string& name) const { return by_name_.count(name) > 0; }

  std::size_t size() const { return params_.size(); }
  Parameter<S>& operator[](std::size_t i) { return *params_[i]; }
  const Parameter<S>& operator[](std::size_t i) const { return *params_[i]; }

  void zeroGrads() {
    for (auto& p : params_) p->zeroGrad();
  }

  Eigen::Index scalarCount() const {
    Eigen::Index n = 0;
    for (const auto& p : params_) n += p->value.size();
    return n;
  }

  Vec<S> flattenValues() const { return flatten([](const Parameter<S>& p) -> const Mat<S>& { return p.value; }); }
  Vec<S> flattenGrads() const { return flatten([](const Parameter<S>& p) -> const Mat<S>& { return p.grad; }); }

  void assignValues(const Vec<S>& flat) {
    Eigen::Index off = 0;
    for (auto& p : params_) {
      for (Eigen::Index r = 0; r < p->value.rows(); ++r)
        for (Eigen::Index c = 0; c < p->value.cols(); ++c) p->value(r, c) = flat(off++);
    }
    if (off != flat.size()) throw ConfigError("assignValues: size mismatch");
  }

  /// Copies values from src for every name present in both stores with the
  /// same shape; returns how many parameters were copied.
  int copyMatchingFrom(const ParamStore& src) {
    int copied = 0;
    for (auto& p : params_) {
      if (!src.has(p->name)) continue;
      const Parameter<S>& q = src.at(p->name);
      if (q.value.rows() != p->value.rows() || q.value.cols() != p->value.cols()) continue;
      p->value = q.value;
      ++copied;
    }
    return copied;
  }

  void saveCheckpoint(const std::filesystem::path& dir, const nlohmann::json& meta) const {
    std::filesystem::create_directories(dir);
    nlohmann::json manifest;
    manifest["format"] = "mvweak-checkpoint-v1";
    manifest["meta"] = meta;
    manifest["params"] = nlohmann::json::array();
    for (const auto& p : params_) {
      const std::string file = fileNameFor(p->name);
      writeTensor(dir / file, tensorFromMatrixT(p->value));
      manifest["params"].push_back({{"name", p->name},
                                    {"file", file},
                                    {"rows", p->value.rows()},
                                    {"cols", p->value.cols()}});
    }
    std::ofstream out(dir / "manifest.json", std::ios::trunc);
    if (!out) throw DataError("cannot write " + (dir / "manifest.json").string());
    out << manifest.dump(2) << "\n";
  }

  /// Loads values into an already-structured store; every parameter must be
  /// present in the manifest with a matching shape, and vice versa.
  nlohmann::json loadCheckpoint(const std::filesystem::path& dir) {
    std::ifstream in(dir / "manifest.json");
    if (!in) throw DataError("cannot open " + (dir / "manifest.json").string());
    nlohmann::json manifest;
    try {
      in >> manifest;
    } catch (const nlohmann::json::exception& e) {
      throw FormatError((dir / "manifest.json").string() + ": " + e.what());
    }
    if (manifest.value("format", "") != "mvweak-checkpoint-v1")
      throw FormatError((dir / "manifest.json").string() + ": unknown checkpoint format");
    std::map<std::string, nlohmann::json> listed;
    for (const auto& e : manifest.at("params")) listed[e.at("name").get<std::string>()] = e;
    if (listed.size() != params_.size())
      throw ConfigError("checkpoint has " + std::to_string(listed.size()) + " params, model expects " +
                        std::to_string(params_.size()));
    for (auto& p : params_) {
      auto it = listed.find(p->name);
      if (it == listed.end()) throw ConfigError("checkpoint missing parameter: " + p->name);
      const std::string file = it->second.at("file").template get<std::string>();
      const TensorData t = readTensor(dir / file);
      if (t.rank() != 2 || static_cast<Eigen::Index>(t.dims[0]) != p->value.rows() ||
          static_cast<Eigen::Index>(t.dims[1]) != p->value.cols())
        throw ConfigError("checkpoint shape mismatch for parameter: " + p->name);
      for (Eigen::Index r = 0; r < p->value.rows(); ++r)
        for (Eigen::Index c = 0; c < p->value.cols(); ++c)
          p->value(r, c) = static_cast<S>(t.data[static_cast<std::size_t>(r) * p->value.cols() + c]);
    }
    return manifest.at("meta");
  }

 private:
  template <class Get>
  Vec<S> flatten(Get get) const {
    Vec<S> flat(scalarCount());
    Eigen::Index off = 0;
    for (const auto& p : params_) {
      const Mat<S>& m = get(*p);
      for (Eigen::Index r = 0; r < m.rows(); ++r)
        for (Eigen::Index c = 0; c < m.cols(); ++c) flat(off++) = m(r, c);
    }
    return flat;
  }

  static TensorData tensorFromMatrixT(const Mat<S>& m) {
    TensorData t;
    t.dims = {static_cast<std::uint32_t>(m.rows()), static_cast<std::uint32_t>(m.cols())};
    t.data.resize(t.numel());
    for (Eigen::Index r = 0; r < m.rows(); ++r)
      for (Eigen::Index c = 0; c < m.cols(); ++c)
        t.data[static_cast<std::size_t>(r) * m.cols() + c] = static_cast<float>(m(r, c));
    return t;
  }

  static std::string fileNameFor(std::string name) {
    for (char& ch : name)
      if (ch == '.' || ch == '/') ch = '_';
    return name + ".mvt";
  }

  std::vector<std::unique_ptr<Parameter<S>>> params_;
  std::map<std::string, std::size_t> by_name_;
};

/// Uniform fan-in initialization: U(-sqrt(3/fan_in), +sqrt(3/fan_in)).
template <class S>
void initUniformFanIn(Parameter<S>& p, Eigen::Index fan_in, Rng& rng) {
  const double limit = std::sqrt(3.0 / static_cast<double>(fan_in));
  for (Eigen::Index r = 0; r < p.value.rows(); ++r)
    for (Eigen::Index c = 0; c < p.value.cols(); ++c)
      p.value(r, c) = static_cast<S>(rng.uniform(-limit, limit));
}

/// Small uniform init for embedding tables.
template <class S>
void initTable(Parameter<S>& p, Rng& rng) {
  for (Eigen::Index r = 0; r < p.value.rows(); ++r)
    for (Eigen::Index c = 0; c < p.value.cols(); ++c)
      p.value(r, c) = static_cast<S>(rng.uniform(-0.05, 0.05));
}

}  // namespace mvw
