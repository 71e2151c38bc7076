#pragma once

#include <cstdint>
#include <map>
#include <random>
#include <string>
#include <vector>

#include <json.hpp>

#include "balign/autograd.hpp"

// Layer building blocks shared by the three networks.
namespace balign::nn {

// Named trainable tensors in registration order.
class ParamStore {
 public:
  Var& add(const std::string& name, Tensor value);
  const Var& get(const std::string& name) const;
  bool contains(const std::string& name) const { return index_.count(name) != 0; }

  std::vector<Var> vars() const;
  const std::vector<std::pair<std::string, Var>>& entries() const { return entries_; }
  std::size_t size() const { return entries_.size(); }
  std::size_t scalar_count() const;

  void zero_grad();
  // Deep copies of the current values.
  std::map<std::string, Tensor> snapshot() const;
  // Overwrites values by name; throws ConfigError on missing names or shape mismatch.
  void restore(const std::map<std::string, Tensor>& values);

  nlohmann::json to_json() const;
  void load_json(const nlohmann::json& j);

 private:
  std::vector<std::pair<std::string, Var>> entries_;
  std::map<std::string, std::size_t> index_;
};

// Network nonlinearity. Leaky so that no unit is ever exactly dead.
inline constexpr double kLeakySlope = 0.01;
inline Var act(const Var& x) { return leaky_relu(x, kLeakySlope); }

// He-normal weights, zero bias.
struct Init {
  std::mt19937_64 rng;
  explicit Init(std::uint64_t seed) : rng(seed) {}
  Tensor he(const Shape& shape, int fan_in, double gain = 1.0);
};

struct Conv {
  Var weight, bias;
  int stride = 1, padding = 0;

  Conv() = default;
  Conv(ParamStore& ps, Init& init, const std::string& name, int in, int out, int k, int stride = 1, double gain = 1.0);
  Var operator()(const Var& x) const { return conv2d(x, weight, bias, stride, padding); }
  void zero();
};

// act(conv3x3(act(conv3x3(x))) + skip(x)); the skip is a 1x1 conv when the
// channel count or stride changes.
struct Residual {
  Conv a, b, skip;
  bool has_skip = false;

  Residual() = default;
  Residual(ParamStore& ps, Init& init, const std::string& name, int in, int out, int stride = 1);
  Var operator()(const Var& x) const;
};

// Symmetric down/up network with skip connections; spatial size unchanged.
struct Hourglass {
  int depth = 1;
  std::vector<Residual> up, down, bottom;  // per level; bottom only at the last level

  Hourglass() = default;
  Hourglass(ParamStore& ps, Init& init, const std::string& name, int channels, int depth);
  Var operator()(const Var& x) const { return level(x, 0); }

 private:
  Var level(const Var& x, int d) const;
};

}  // namespace balign::nn
