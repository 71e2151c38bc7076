#include <algorithm>
#include <queue>

#include "balign/errors.hpp"
#include "balign/models.hpp"

namespace balign {

std::vector<MessageEdge> default_message_tree() {
  // 0 contour, 1/2 brows, 3 bridge, 4 nose, 5-8 eyelids, 9-12 lips
  return {{0, 1}, {0, 2}, {0, 3}, {3, 4}, {1, 5}, {5, 6}, {2, 7}, {7, 8}, {4, 9}, {9, 10}, {10, 11}, {11, 12}};
}

void validate_tree(const std::vector<MessageEdge>& edges, int nodes) {
  if (nodes < 1) throw ConfigError("message tree needs at least one node");
  if (static_cast<int>(edges.size()) != nodes - 1)
    throw ConfigError("message tree over " + std::to_string(nodes) + " branches needs " + std::to_string(nodes - 1) +
                      " edges, got " + std::to_string(edges.size()));
  std::vector<int> parent(nodes, -1);
  for (const auto& e : edges) {
    if (e.from < 0 || e.to < 0 || e.from >= nodes || e.to >= nodes || e.from == e.to)
      throw ConfigError("message tree edge " + std::to_string(e.from) + "->" + std::to_string(e.to) + " is invalid");
    if (parent[e.to] >= 0) throw ConfigError("branch " + std::to_string(e.to) + " has two parents in the message tree");
    parent[e.to] = e.from;
  }
  int root = -1;
  for (int i = 0; i < nodes; ++i)
    if (parent[i] < 0) {
      if (root >= 0) throw ConfigError("message tree has more than one root");
      root = i;
    }
  if (root < 0) throw ConfigError("message tree has no root");
  std::vector<char> seen(nodes, 0);
  std::vector<int> stack{root};
  seen[root] = 1;
  int reached = 0;
  while (!stack.empty()) {
    const int n = stack.back();
    stack.pop_back();
    ++reached;
    for (const auto& e : edges)
      if (e.from == n && !seen[e.to]) {
        seen[e.to] = 1;
        stack.push_back(e.to);
      }
  }
  if (reached != nodes) throw ConfigError("message tree does not span all branches");
}

void EstimatorConfig::validate() const {
  if (stacks < 1) throw ConfigError("estimator needs at least one stack");
  if (channels < 2 || group_channels < 1 || boundaries < 1) throw ConfigError("estimator widths must be positive");
  if (input_side < 16 || input_side % 4 != 0) throw ConfigError("estimator input side must be a multiple of 4, >= 16");
  if (hourglass_depth < 1 || (heatmap_side() >> hourglass_depth) < 1 || heatmap_side() % (1 << hourglass_depth) != 0)
    throw ConfigError("hourglass depth " + std::to_string(hourglass_depth) + " does not fit heatmap side " +
                      std::to_string(heatmap_side()));
  if (message_passing) validate_tree(tree, boundaries);
}

MessagePassing::MessagePassing(nn::ParamStore& ps, nn::Init& init, const std::string& name, int nodes,
                               int group_channels, std::vector<MessageEdge> tree, bool inter_level)
    : nodes_(nodes), tree_(std::move(tree)) {
  validate_tree(tree_, nodes_);
  std::vector<int> parent(nodes_, -1);
  for (const auto& e : tree_) parent[e.to] = e.from;
  const int root = static_cast<int>(std::find(parent.begin(), parent.end(), -1) - parent.begin());
  std::queue<int> q;
  q.push(root);
  while (!q.empty()) {
    const int n = q.front();
    q.pop();
    order_.push_back(n);
    for (const auto& e : tree_)
      if (e.from == n) q.push(e.to);
  }
  for (std::size_t i = 0; i < tree_.size(); ++i) {
    const std::string p = name + ".e" + std::to_string(tree_[i].from) + "_" + std::to_string(tree_[i].to);
    up_.emplace_back(ps, init, p + ".up", group_channels, group_channels, 3, 1, 0.5);
    down_.emplace_back(ps, init, p + ".down", group_channels, group_channels, 3, 1, 0.5);
  }
  if (inter_level)
    for (int k = 0; k < nodes_; ++k)
      inter_.emplace_back(ps, init, name + ".inter" + std::to_string(k), group_channels, group_channels, 1, 1, 0.5);
}

std::vector<Var> MessagePassing::operator()(std::vector<Var> groups, const std::vector<Var>* previous) const {
  if (static_cast<int>(groups.size()) != nodes_) throw DimensionError("message passing expects one group per branch");
  if (previous && !inter_.empty())
    for (int k = 0; k < nodes_; ++k) groups[k] = add(groups[k], inter_[k]((*previous)[k]));
  auto edge_into = [&](int child) {
    for (std::size_t i = 0; i < tree_.size(); ++i)
      if (tree_[i].to == child) return static_cast<int>(i);
    return -1;
  };
  // leaves to root
  for (auto it = order_.rbegin(); it != order_.rend(); ++it) {
    const int e = edge_into(*it);
    if (e < 0) continue;
    const int p = tree_[e].from;
    groups[p] = add(groups[p], up_[e](groups[*it]));
  }
  // root to leaves
  for (int n : order_) {
    const int e = edge_into(n);
    if (e < 0) continue;
    groups[n] = add(groups[n], down_[e](groups[tree_[e].from]));
  }
  return groups;
}

void MessagePassing::zero() {
  for (auto& c : up_) c.zero();
  for (auto& c : down_) c.zero();
  for (auto& c : inter_) c.zero();
}

Estimator::Estimator(const EstimatorConfig& config, std::uint64_t seed) : config_(config) {
  config_.validate();
  nn::Init init(seed);
  const int C = config_.channels, K = config_.boundaries, g = config_.group_channels;
  stem1_ = nn::Conv(params_, init, "stem1", 3, C / 2, 3, 2);
  stem2_ = nn::Conv(params_, init, "stem2", C / 2, C, 3, 2);
  for (int s = 0; s < config_.stacks; ++s) {
    const std::string p = "stack" + std::to_string(s);
    hourglass_.emplace_back(params_, init, p + ".hg", C, config_.hourglass_depth);
    to_branches_.emplace_back(params_, init, p + ".branches", C, K * g, 3);
    if (config_.message_passing)
      mp_.emplace_back(params_, init, p + ".mp", K, g, config_.tree, s > 0);
    heads_.emplace_back();
    for (int k = 0; k < K; ++k) {
      heads_[s].emplace_back(params_, init, p + ".head" + std::to_string(k), g, 1, 3, 1, 0.1);
      if (config_.zero_init_heads) {
        heads_[s][k].zero();
      } else {
        heads_[s][k].bias.mutable_value().fill(-2.0);
      }
    }
    if (s + 1 < config_.stacks) {
      remap_features_.emplace_back(params_, init, p + ".remap_f", C, C, 1);
      remap_maps_.emplace_back(params_, init, p + ".remap_m", K, C, 1);
    }
  }
}

std::vector<Var> Estimator::forward(const Var& images) const {
  const auto& sh = images.shape();
  if (sh.size() != 4 || sh[1] != 3 || sh[2] != config_.input_side || sh[3] != config_.input_side)
    throw DimensionError("estimator expects [N,3," + std::to_string(config_.input_side) + "," +
                         std::to_string(config_.input_side) + "], got " + shape_str(sh));
  const int K = config_.boundaries, g = config_.group_channels;
  Var x = nn::act(stem2_(nn::act(stem1_(images))));
  std::vector<Var> outputs, previous;
  for (int s = 0; s < config_.stacks; ++s) {
    const Var y = hourglass_[s](x);
    const Var branches = nn::act(to_branches_[s](y));
    std::vector<Var> groups;
    for (int k = 0; k < K; ++k) groups.push_back(slice_channels(branches, k * g, g));
    if (config_.message_passing) groups = mp_[s](std::move(groups), s > 0 ? &previous : nullptr);
    std::vector<Var> logits;
    for (int k = 0; k < K; ++k) logits.push_back(heads_[s][k](groups[k]));
    const Var maps = sigmoid(concat(logits));
    outputs.push_back(maps);
    if (s + 1 < config_.stacks) x = scale(add(add(x, remap_features_[s](y)), remap_maps_[s](maps)), 1.0 / 3.0);
    previous = std::move(groups);
  }
  return outputs;
}

}  // namespace balign
