#pragma once

#include <filesystem>
#include <string>
#include <unordered_map>
#include <vector>

#include <nlohmann/json.hpp>

#include "d2d/nn/array.hpp"

namespace d2d::nn {

struct Parameter {
  std::string name;
  Array value;
  Array grad;  // same shape, accumulated across backward passes
};

// Named parameter collection with SGD update and D2M1 serialization.
// Insertion order is the serialization order.
class ParamStore {
 public:
  Parameter& add(const std::string& name, std::vector<int> shape);
  bool has(const std::string& name) const { return index_.count(name) > 0; }
  Parameter& at(const std::string& name);
  const Parameter& at(const std::string& name) const;
  int index_of(const std::string& name) const;
  Parameter& by_index(int i) { return params_[size_t(i)]; }
  const Parameter& by_index(int i) const { return params_[size_t(i)]; }
  int count() const { return int(params_.size()); }
  long long total_size() const;

  // uniform(-bound, bound) init over every parameter, in insertion order
  void init_uniform(Rng& rng, float bound = 0.1f);

  void zero_grads();
  void scale_grads(double s);
  double grad_norm() const;

  // Rescales gradients to global norm <= clip (clip <= 0 disables), then
  // p -= lr * g. Non-finite gradients raise TrainError naming the parameter.
  void sgd_step(double lr, double clip);

  // D2M1: 4-byte magic, u32 little-endian header length, JSON header
  // {names, shapes, dtype, hyperparameters}, then f32 payload in name order.
  void save(const std::filesystem::path& file, const nlohmann::json& hyper) const;
  static ParamStore load(const std::filesystem::path& file, nlohmann::json* hyper = nullptr);

  void save_stream(std::ostream& out, const nlohmann::json& hyper) const;
  static ParamStore load_stream(std::istream& in, nlohmann::json* hyper,
                                const std::string& ctx);

 private:
  std::vector<Parameter> params_;
  std::unordered_map<std::string, int> index_;
};

}  // namespace d2d::nn
