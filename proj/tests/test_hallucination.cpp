#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <set>

#include "salnet/hallucination.hpp"

using namespace salnet;

namespace {

// brute-force counting oracle: pairs per image from the strategy definitions
long expected_intra_per_image(int /*n*/, int w, int d) { return static_cast<long>(d) * (w - 1); }
long expected_inter_per_image(int n, int w, int d) {
  return static_cast<long>(d) * (w - 1 + w * (n - 1));
}

Episode synthetic_episode(int n, int w) {
  Episode ep;
  ep.n_way = n;
  ep.w_shot = w;
  ep.q_per_class = 1;
  int idx = 0;
  for (int c = 0; c < n; ++c) {
    ep.class_ids.push_back(c);
    for (int s = 0; s < w; ++s) ep.support.push_back({idx++, c, s});
    ep.queries.push_back({idx++, c, 0});
  }
  return ep;
}

std::vector<double> radii_for(int d) {
  std::vector<double> r;
  for (int i = 0; i < d; ++i) r.push_back(1.0 + i);
  return r;
}

}  // namespace

TEST_CASE("intra and inter pair counts match the strategy formulas exhaustively") {
  for (int n = 2; n <= 10; ++n) {
    for (int w = 1; w <= 5; ++w) {
      Episode ep = synthetic_episode(n, w);
      for (int d : {1, 2}) {
        auto radii = radii_for(d);
        auto intra = enumerate_intra(ep, radii);
        auto inter = enumerate_inter(ep, radii);
        REQUIRE(static_cast<long>(intra.size()) == n * w * expected_intra_per_image(n, w, d));
        REQUIRE(static_cast<long>(inter.size()) == n * w * expected_inter_per_image(n, w, d));
        // per-image counts as well
        for (int i = 0; i < n * w; ++i) {
          long ci = 0, ce = 0;
          for (const auto& h : intra) ci += h.fg_support == i ? 1 : 0;
          for (const auto& h : inter) ce += h.fg_support == i ? 1 : 0;
          REQUIRE(ci == expected_intra_per_image(n, w, d));
          REQUIRE(ce == expected_inter_per_image(n, w, d));
        }
      }
    }
  }
}

TEST_CASE("one-shot intra hallucination is empty") {
  Episode ep = synthetic_episode(5, 1);
  REQUIRE(enumerate_intra(ep, radii_for(1)).empty());
  REQUIRE(enumerate_intra(ep, radii_for(2)).empty());
}

TEST_CASE("hallucinated samples never pair a support with itself and keep the fg class") {
  Episode ep = synthetic_episode(4, 3);
  for (const auto& h : enumerate_inter(ep, radii_for(2))) {
    REQUIRE(h.fg_support != h.bg_support);
    REQUIRE(h.class_slot == ep.support[static_cast<std::size_t>(h.fg_support)].class_slot);
    REQUIRE(h.prior_p == 1.0);  // priors disabled at enumeration time
  }
  for (const auto& h : enumerate_intra(ep, radii_for(1))) {
    REQUIRE(h.fg_support != h.bg_support);
    REQUIRE(ep.support[static_cast<std::size_t>(h.bg_support)].class_slot == h.class_slot);
  }
}

TEST_CASE("two-way one-shot inter pairs each image with the other class only") {
  Episode ep = synthetic_episode(2, 1);
  auto inter = enumerate_inter(ep, radii_for(1));
  REQUIRE(inter.size() == 2);
  for (const auto& h : inter) REQUIRE(h.fg_support != h.bg_support);
}

TEST_CASE("background distance is a squared euclidean norm") {
  FeatureMap a(1, 2), b(1, 2);
  a.data = {1.0, 0.0};
  b.data = {0.0, 1.0};
  REQUIRE(background_distance(a, b) == 2.0);
  REQUIRE(background_distance(a, a) == 0.0);
  REQUIRE(background_distance(a, b) == background_distance(b, a));
}

TEST_CASE("prior probability profile") {
  REQUIRE(prior_probability(0.0, 3.7) == 1.0);
  REQUIRE(prior_probability(123.0, 0.0) == 1.0);  // alpha = 0 flattens the profile
  REQUIRE(std::fabs(prior_probability(1.0, 1.0) - 0.5378828427399902) < 1e-9);

  // strictly decreasing on sorted distances for alpha > 0
  Rng rng(13);
  std::vector<double> ds(1000);
  for (double& d : ds) d = rng.uniform(0.0, 50.0);
  std::sort(ds.begin(), ds.end());
  double prev = prior_probability(ds[0], 1.0);
  for (std::size_t i = 1; i < ds.size(); ++i) {
    if (ds[i] == ds[i - 1]) continue;
    double p = prior_probability(ds[i], 1.0);
    REQUIRE(p < prev);
    REQUIRE(p > 0.0);
    REQUIRE(p <= 1.0);
    prev = p;
  }
}

TEST_CASE("soft prior scales the refined map and its Gram quadratically") {
  Rng rng(14);
  FeatureMap phi(3, 4);
  for (double& v : phi.data) v = rng.uniform(-1, 1);

  REQUIRE(apply_ssp(phi, 1.0).data == phi.data);  // bitwise no-op at p=1

  FeatureMap half = apply_ssp(phi, 0.5);
  for (std::size_t i = 0; i < phi.data.size(); ++i) REQUIRE(half.data[i] == 0.5 * phi.data[i]);
  // the pre-normalization Gram picks up p^2
  double g_full = 0.0, g_half = 0.0;
  for (int t = 0; t < 4; ++t) {
    g_full += phi.data[static_cast<std::size_t>(t)] * phi.data[static_cast<std::size_t>(t)];
    g_half += half.data[static_cast<std::size_t>(t)] * half.data[static_cast<std::size_t>(t)];
  }
  REQUIRE(std::fabs(g_half - 0.25 * g_full) < 1e-15);
}

TEST_CASE("hard prior keeps exactly the pairs above the threshold") {
  Episode ep = synthetic_episode(3, 2);
  auto pairs = enumerate_inter(ep, radii_for(1));
  // assign distances, then probabilities at alpha=1
  Rng rng(15);
  std::vector<double> dist(pairs.size());
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    dist[i] = rng.uniform(0.0, 4.0);
    pairs[i].prior_p = prior_probability(dist[i], 1.0);
  }

  auto all = apply_hsp(pairs, 0.0);
  REQUIRE(all.size() == pairs.size());  // p > 0 always

  for (double tau : {0.2, 0.5, 0.8}) {
    auto kept = apply_hsp(pairs, tau);
    std::size_t expected = 0;
    for (std::size_t i = 0; i < pairs.size(); ++i)
      if (prior_probability(dist[i], 1.0) > tau) ++expected;
    REQUIRE(kept.size() == expected);
  }

  // kept set shrinks monotonically in tau
  std::size_t prev = pairs.size() + 1;
  for (double tau : {0.0, 0.1, 0.3, 0.5, 0.7, 0.9, 0.99}) {
    std::size_t k = apply_hsp(pairs, tau).size();
    REQUIRE(k <= prev);
    prev = k;
  }

  // with tau just below 1, only zero-distance pairs survive
  pairs[0].prior_p = prior_probability(0.0, 1.0);
  auto survivors = apply_hsp(pairs, 1.0 - 1e-12);
  for (const auto& h : survivors) REQUIRE(h.prior_p == 1.0);
  REQUIRE_FALSE(survivors.empty());
}

TEST_CASE("trir omega basics") {
  FeatureMap a(1, 2), b(1, 2);
  a.data = {1.0, 0.0};
  b.data = {0.0, 1.0};
  // two images, each student (1,0) vs teacher (0,1): ||diff||^2 = 2 per image
  REQUIRE(trir_omega({a, a}, {b, b}) == 2.0);
  // identical maps give exactly zero
  REQUIRE(trir_omega({a, b}, {a, b}) == 0.0);
  // always nonnegative
  Rng rng(16);
  for (int trial = 0; trial < 20; ++trial) {
    FeatureMap s(2, 3), t(2, 3);
    for (double& v : s.data) v = rng.uniform(-1, 1);
    for (double& v : t.data) v = rng.uniform(-1, 1);
    REQUIRE(trir_omega({s}, {t}) >= 0.0);
  }
}
