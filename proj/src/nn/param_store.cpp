#include "d2d/nn/param_store.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>

namespace d2d::nn {

static_assert(std::endian::native == std::endian::little,
              "D2M1 serialization assumes a little-endian host");

namespace {
constexpr char kMagic[4] = {'D', '2', 'M', '1'};
}

Parameter& ParamStore::add(const std::string& name, std::vector<int> shape) {
  if (has(name)) throw ContractError(cat("duplicate parameter '", name, "'"));
  index_.emplace(name, int(params_.size()));
  params_.push_back({name, Array(shape), Array(shape)});
  return params_.back();
}

Parameter& ParamStore::at(const std::string& name) {
  return params_[size_t(index_of(name))];
}

const Parameter& ParamStore::at(const std::string& name) const {
  return params_[size_t(index_of(name))];
}

int ParamStore::index_of(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw ContractError(cat("unknown parameter '", name, "'"));
  return it->second;
}

long long ParamStore::total_size() const {
  long long n = 0;
  for (const auto& p : params_) n += p.value.numel();
  return n;
}

void ParamStore::init_uniform(Rng& rng, float bound) {
  for (auto& p : params_)
    for (float& x : p.value.data) x = rng.uniform(-bound, bound);
}

void ParamStore::zero_grads() {
  for (auto& p : params_) std::fill(p.grad.data.begin(), p.grad.data.end(), 0.0f);
}

void ParamStore::scale_grads(double s) {
  float fs = float(s);
  for (auto& p : params_)
    for (float& g : p.grad.data) g *= fs;
}

double ParamStore::grad_norm() const {
  double acc = 0.0;
  for (const auto& p : params_)
    for (float g : p.grad.data) acc += double(g) * double(g);
  return std::sqrt(acc);
}

void ParamStore::sgd_step(double lr, double clip) {
  for (const auto& p : params_)
    for (float g : p.grad.data)
      if (!std::isfinite(g))
        throw TrainError(cat("non-finite gradient in parameter '", p.name, "'"));
  double norm = grad_norm();
  double s = (clip > 0.0 && norm > clip) ? clip / norm : 1.0;
  float step = float(lr * s);
  for (auto& p : params_)
    for (size_t i = 0; i < p.value.data.size(); ++i)
      p.value.data[i] -= step * p.grad.data[i];
  zero_grads();
}

void ParamStore::save_stream(std::ostream& out, const nlohmann::json& hyper) const {
  nlohmann::json header;
  auto names = nlohmann::json::array();
  auto shapes = nlohmann::json::array();
  for (const auto& p : params_) {
    names.push_back(p.name);
    shapes.push_back(p.value.shape);
  }
  header["names"] = std::move(names);
  header["shapes"] = std::move(shapes);
  header["dtype"] = "f32";
  header["hyperparameters"] = hyper;
  std::string hs = header.dump();
  uint32_t len = uint32_t(hs.size());
  out.write(kMagic, 4);
  out.write(reinterpret_cast<const char*>(&len), 4);
  out.write(hs.data(), std::streamsize(hs.size()));
  for (const auto& p : params_)
    out.write(reinterpret_cast<const char*>(p.value.data.data()),
              std::streamsize(p.value.data.size() * 4));
}

ParamStore ParamStore::load_stream(std::istream& in, nlohmann::json* hyper,
                                   const std::string& ctx) {
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, kMagic, 4) != 0)
    throw ParseError(cat(ctx, ": bad magic, not a D2M1 model"));
  uint32_t len = 0;
  in.read(reinterpret_cast<char*>(&len), 4);
  if (!in || len == 0 || len > (1u << 28)) throw ParseError(cat(ctx, ": bad header length"));
  std::string hs(len, '\0');
  in.read(hs.data(), std::streamsize(len));
  if (!in) throw ParseError(cat(ctx, ": truncated header"));
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(hs);
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(cat(ctx, ": header JSON: ", e.what()));
  }
  if (header.value("dtype", "") != "f32")
    throw ParseError(cat(ctx, ": unsupported dtype"));
  const auto& names = header.at("names");
  const auto& shapes = header.at("shapes");
  if (names.size() != shapes.size()) throw ParseError(cat(ctx, ": names/shapes mismatch"));

  ParamStore store;
  for (size_t i = 0; i < names.size(); ++i) {
    auto shape = shapes[i].get<std::vector<int>>();
    Parameter& p = store.add(names[i].get<std::string>(), shape);
    in.read(reinterpret_cast<char*>(p.value.data.data()),
            std::streamsize(p.value.data.size() * 4));
    if (!in) throw ParseError(cat(ctx, ": truncated payload at '", p.name, "'"));
  }
  if (hyper) *hyper = header.value("hyperparameters", nlohmann::json::object());
  return store;
}

void ParamStore::save(const std::filesystem::path& file, const nlohmann::json& hyper) const {
  std::ofstream out(file, std::ios::binary);
  if (!out) throw ParseError(cat("cannot write ", file.string()));
  save_stream(out, hyper);
}

ParamStore ParamStore::load(const std::filesystem::path& file, nlohmann::json* hyper) {
  std::ifstream in(file, std::ios::binary);
  if (!in) throw ParseError(cat("cannot open ", file.string()));
  return load_stream(in, hyper, file.string());
}

}  // namespace d2d::nn
