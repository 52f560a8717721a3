#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "salnet/autodiff.hpp"
#include "salnet/core.hpp"
#include "salnet/femn.hpp"

namespace salnet {

// Similarity head: the query and support descriptors enter as the two
// channels of a K'xK' input. The 2-channel convolution is kept as one weight
// tensor per channel so per-descriptor halves can be cached across pairs.
struct RelationConfig {
  int conv_channels = 8;
  int conv_kernel = 3;
  int hidden = 8;
};

inline int relation_flat_size(const RelationConfig& cfg, int k_prime) {
  if (k_prime % 2) throw config_error("relation head needs an even descriptor size");
  int pooled = k_prime / 2;
  return cfg.conv_channels * pooled * pooled;
}

inline void init_relation_params(ParamStore& store, const RelationConfig& cfg, int k_prime,
                                 Rng& rng) {
  double bound = std::sqrt(6.0 / (2.0 * cfg.conv_kernel * cfg.conv_kernel));
  ParamTensor& wa = store.add("r.conv0.ws", {cfg.conv_channels, 1, cfg.conv_kernel, cfg.conv_kernel});
  for (double& v : wa.data) v = rng.uniform(-bound, bound);
  ParamTensor& wb = store.add("r.conv0.wq", {cfg.conv_channels, 1, cfg.conv_kernel, cfg.conv_kernel});
  for (double& v : wb.data) v = rng.uniform(-bound, bound);
  store.add("r.conv0.b", {cfg.conv_channels});

  int flat = relation_flat_size(cfg, k_prime);
  ParamTensor& w0 = store.add("r.fc0.w", {cfg.hidden, flat});
  double bound0 = std::sqrt(6.0 / static_cast<double>(flat));
  for (double& v : w0.data) v = rng.uniform(-bound0, bound0);
  store.add("r.fc0.b", {cfg.hidden});
  ParamTensor& w1 = store.add("r.fc1.w", {1, cfg.hidden});
  double bound1 = std::sqrt(6.0 / static_cast<double>(cfg.hidden));
  for (double& v : w1.data) v = rng.uniform(-bound1, bound1);
  store.add("r.fc1.b", {1});
}

// Support-side conv partial (carries the shared bias).
inline ValueId build_relate_support_half(Graph& g, ValueId desc) {
  return g.conv2d(desc, g.param("r.conv0.ws"), g.param("r.conv0.b"));
}

// Query-side conv partial (bias lives on the support half).
inline ValueId build_relate_query_half(Graph& g, ValueId desc) {
  return g.conv2d(desc, g.param("r.conv0.wq"), -1);
}

// From summed conv halves to the sigmoid relation score in (0,1).
inline ValueId build_relate_head(Graph& g, ValueId u_support, ValueId u_query) {
  ValueId act = g.maxpool2x2(g.relu(g.add(u_support, u_query)));
  ValueId flat = g.flatten(act);
  ValueId h = g.relu(g.add(g.matmul(g.param("r.fc0.w"), flat), g.param("r.fc0.b")));
  return g.sigmoid(g.add(g.matmul(g.param("r.fc1.w"), h), g.param("r.fc1.b")));
}

// One-off relation score for a descriptor pair.
inline double relate(const RelationDescriptor& support, const RelationDescriptor& query,
                     ParamStore& store) {
  if (support.k != query.k) throw config_error("relate: descriptor sizes differ");
  Graph g(&store);
  ValueId s_in = g.input({1, support.k, support.k}, "support_desc");
  ValueId q_in = g.input({1, query.k, query.k}, "query_desc");
  g.set_input(s_in, support.m);
  g.set_input(q_in, query.m);
  ValueId score = build_relate_head(g, build_relate_support_half(g, s_in),
                                    build_relate_query_half(g, q_in));
  g.forward();
  return g.scalar_value(score);
}

struct ScoredPair {
  double score = 0.0;
  double target = 0.0;  // delta(l_support - l_query)
};

// Eq.-style episodic MSE: flat mean over every (support slot, query) pair.
inline double episode_loss(const std::vector<ScoredPair>& pairs) {
  if (pairs.empty()) throw data_error("episode_loss: empty episode");
  double acc = 0.0;
  for (const auto& p : pairs) acc += (p.score - p.target) * (p.score - p.target);
  return acc / static_cast<double>(pairs.size());
}

// Per class, mean relate score over the class's pool entries; argmax wins,
// ties broken by the lowest class slot.
inline int classify(const std::vector<double>& scores, const std::vector<int>& pool_class_slots,
                    int n_way) {
  if (scores.empty() || scores.size() != pool_class_slots.size())
    throw config_error("classify: pool is empty or mislabeled");
  std::vector<double> sum(static_cast<std::size_t>(n_way), 0.0);
  std::vector<int> count(static_cast<std::size_t>(n_way), 0);
  for (std::size_t i = 0; i < scores.size(); ++i) {
    sum[static_cast<std::size_t>(pool_class_slots[i])] += scores[i];
    count[static_cast<std::size_t>(pool_class_slots[i])] += 1;
  }
  int best = -1;
  double best_mean = 0.0;
  for (int c = 0; c < n_way; ++c) {
    if (count[static_cast<std::size_t>(c)] == 0) continue;
    double mean = sum[static_cast<std::size_t>(c)] / count[static_cast<std::size_t>(c)];
    if (best < 0 || mean > best_mean) {
      best = c;
      best_mean = mean;
    }
  }
  if (best < 0) throw config_error("classify: no labeled pool entries");
  return best;
}

}  // namespace salnet
