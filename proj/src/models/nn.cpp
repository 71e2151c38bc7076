#include "balign/nn.hpp"

#include <cmath>

#include "balign/errors.hpp"

namespace balign::nn {

Var& ParamStore::add(const std::string& name, Tensor value) {
  if (index_.count(name)) throw UsageError("duplicate parameter name " + name);
  index_[name] = entries_.size();
  entries_.emplace_back(name, parameter(std::move(value)));
  return entries_.back().second;
}

const Var& ParamStore::get(const std::string& name) const {
  const auto it = index_.find(name);
  if (it == index_.end()) throw UsageError("no parameter named " + name);
  return entries_[it->second].second;
}

std::vector<Var> ParamStore::vars() const {
  std::vector<Var> out;
  for (const auto& [_, v] : entries_) out.push_back(v);
  return out;
}

std::size_t ParamStore::scalar_count() const {
  std::size_t n = 0;
  for (const auto& [_, v] : entries_) n += v.value().size();
  return n;
}

void ParamStore::zero_grad() {
  for (auto& [_, v] : entries_) v.zero_grad();
}

std::map<std::string, Tensor> ParamStore::snapshot() const {
  std::map<std::string, Tensor> out;
  for (const auto& [name, v] : entries_) out.emplace(name, v.value());
  return out;
}

void ParamStore::restore(const std::map<std::string, Tensor>& values) {
  for (auto& [name, v] : entries_) {
    const auto it = values.find(name);
    if (it == values.end()) throw ConfigError("checkpoint lacks parameter " + name);
    if (it->second.shape() != v.shape())
      throw ConfigError("parameter " + name + " has shape " + shape_str(it->second.shape()) + ", expected " +
                        shape_str(v.shape()));
    v.mutable_value() = it->second;
  }
}

nlohmann::json ParamStore::to_json() const {
  nlohmann::json j = nlohmann::json::object();
  for (const auto& [name, v] : entries_) j[name] = {{"shape", v.shape()}, {"data", v.value().storage()}};
  return j;
}

void ParamStore::load_json(const nlohmann::json& j) {
  std::map<std::string, Tensor> values;
  try {
    for (const auto& [name, entry] : j.items())
      values.emplace(name, Tensor(entry.at("shape").get<Shape>(), entry.at("data").get<std::vector<double>>()));
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("malformed parameter table: ") + e.what());
  } catch (const DimensionError& e) {
    throw ConfigError(std::string("malformed parameter table: ") + e.what());
  }
  restore(values);
}

Tensor Init::he(const Shape& shape, int fan_in, double gain) {
  std::normal_distribution<double> nd(0.0, gain * std::sqrt(2.0 / fan_in));
  Tensor t(shape);
  for (auto& v : t.storage()) v = nd(rng);
  return t;
}

Conv::Conv(ParamStore& ps, Init& init, const std::string& name, int in, int out, int k, int s, double gain)
    : stride(s), padding(k / 2) {
  weight = ps.add(name + ".w", init.he({out, in, k, k}, in * k * k, gain));
  bias = ps.add(name + ".b", Tensor({out}));
}

void Conv::zero() {
  weight.mutable_value().fill(0.0);
  bias.mutable_value().fill(0.0);
}

Residual::Residual(ParamStore& ps, Init& init, const std::string& name, int in, int out, int stride)
    : a(ps, init, name + ".a", in, out, 3, stride), b(ps, init, name + ".b", out, out, 3, 1, 0.5) {
  if (in != out || stride != 1) {
    has_skip = true;
    skip = Conv(ps, init, name + ".skip", in, out, 1, stride);
  }
}

Var Residual::operator()(const Var& x) const {
  const Var h = b(act(a(x)));
  return act(add(h, has_skip ? skip(x) : x));
}

Hourglass::Hourglass(ParamStore& ps, Init& init, const std::string& name, int channels, int d) : depth(d) {
  if (depth < 1) throw ConfigError("hourglass depth must be >= 1");
  for (int i = 0; i < depth; ++i) {
    const std::string p = name + ".l" + std::to_string(i);
    up.emplace_back(ps, init, p + ".up", channels, channels);
    down.emplace_back(ps, init, p + ".down", channels, channels);
  }
  bottom.emplace_back(ps, init, name + ".bottom", channels, channels);
}

Var Hourglass::level(const Var& x, int d) const {
  const Var skip = up[d](x);
  Var low = down[d](maxpool2(x));
  low = (d + 1 < depth) ? level(low, d + 1) : bottom[0](low);
  return scale(add(skip, upsample2(low)), 0.5);
}

}  // namespace balign::nn
