#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "salnet/femn.hpp"
#include "salnet/saliency.hpp"

using namespace salnet;

namespace {

// test-only Jacobi eigensolver for small symmetric matrices
std::vector<double> jacobi_eigenvalues(std::vector<double> a, int n) {
  for (int sweep = 0; sweep < 100; ++sweep) {
    double off = 0.0;
    for (int i = 0; i < n; ++i)
      for (int j = i + 1; j < n; ++j) off += a[static_cast<std::size_t>(i) * n + j] * a[static_cast<std::size_t>(i) * n + j];
    if (off < 1e-24) break;
    for (int p = 0; p < n; ++p) {
      for (int q = p + 1; q < n; ++q) {
        double apq = a[static_cast<std::size_t>(p) * n + q];
        if (std::fabs(apq) < 1e-18) continue;
        double app = a[static_cast<std::size_t>(p) * n + p], aqq = a[static_cast<std::size_t>(q) * n + q];
        double theta = 0.5 * std::atan2(2.0 * apq, aqq - app);
        double c = std::cos(theta), s = std::sin(theta);
        for (int k = 0; k < n; ++k) {
          double akp = a[static_cast<std::size_t>(k) * n + p], akq = a[static_cast<std::size_t>(k) * n + q];
          a[static_cast<std::size_t>(k) * n + p] = c * akp - s * akq;
          a[static_cast<std::size_t>(k) * n + q] = s * akp + c * akq;
        }
        for (int k = 0; k < n; ++k) {
          double apk = a[static_cast<std::size_t>(p) * n + k], aqk = a[static_cast<std::size_t>(q) * n + k];
          a[static_cast<std::size_t>(p) * n + k] = c * apk - s * aqk;
          a[static_cast<std::size_t>(q) * n + k] = s * apk + c * aqk;
        }
      }
    }
  }
  std::vector<double> eig(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) eig[static_cast<std::size_t>(i)] = a[static_cast<std::size_t>(i) * n + i];
  return eig;
}

EncoderConfig tiny_encoder() {
  EncoderConfig cfg;
  cfg.f_blocks = {{4, 3, 1, true}, {4, 3, 1, true}};
  cfg.g_blocks = {{6, 3, 1, false}, {6, 3, 1, true}};
  cfg.sigma_pn = 1.0;
  return cfg;
}

}  // namespace

TEST_CASE("default encoder shape arithmetic") {
  EncoderConfig cfg = EncoderConfig::defaults();
  auto [k, z] = f_output_shape(cfg, 32);
  REQUIRE(z == 8);  // two stride-1 conv blocks with 2x2 pools: 32 -> 16 -> 8
  REQUIRE(k == 32);
  auto [kp, zp] = g_output_shape(cfg, 32);
  REQUIRE(kp == 64);  // K=32 feeds K'=64 under the default config
  REQUIRE(zp == 4);
}

TEST_CASE("zero image through zero-bias encoder gives a zero map") {
  EncoderConfig cfg = tiny_encoder();
  ParamStore store;
  Rng rng(5);
  init_femn_params(store, cfg, rng);
  Image zero(3, 16, 16);
  FeatureMap f = encode_f(zero, store, cfg);
  for (double v : f.data) REQUIRE(v == 0.0);
  FeatureMap g = encode_g(f, 4, store, cfg);
  for (double v : g.data) REQUIRE(v == 0.0);
}

TEST_CASE("identical images give identical maps") {
  EncoderConfig cfg = tiny_encoder();
  ParamStore store;
  Rng rng(6);
  init_femn_params(store, cfg, rng);
  Image img(3, 16, 16);
  for (double& v : img.data) v = rng.uniform();
  FeatureMap a = encode_f(img, store, cfg);
  FeatureMap b = encode_f(img, store, cfg);
  REQUIRE(a.data == b.data);
}

TEST_CASE("mix is a commutative elementwise sum with zero identity") {
  Rng rng(7);
  FeatureMap x(3, 8), y(3, 8), zero(3, 8);
  for (double& v : x.data) v = rng.uniform(-1, 1);
  for (double& v : y.data) v = rng.uniform(-1, 1);
  REQUIRE(mix(x, zero).data == x.data);
  REQUIRE(mix(x, y).data == mix(y, x).data);
}

TEST_CASE("mixing f(F) and f(B) under a full mask equals f(I) with zero biases") {
  EncoderConfig cfg = tiny_encoder();
  ParamStore store;
  Rng rng(8);
  init_femn_params(store, cfg, rng);
  Image img(3, 16, 16);
  for (double& v : img.data) v = rng.uniform();
  SaliencyMask ones(16, 16, MaskProvenance::oracle);
  std::fill(ones.values.begin(), ones.values.end(), 1.0);
  auto [fg, bg] = split(img, ones);
  FeatureMap ff = encode_f(fg, store, cfg);
  FeatureMap fb = encode_f(bg, store, cfg);
  FeatureMap mixed = mix(ff, fb);
  FeatureMap direct = encode_f(img, store, cfg);
  for (std::size_t i = 0; i < mixed.data.size(); ++i)
    REQUIRE(std::fabs(mixed.data[i] - direct.data[i]) < 1e-12);
}

TEST_CASE("sigmoid power normalization scalar behavior") {
  REQUIRE(sigmoid_pn_scalar(0.0, 1.0) == 0.0);
  // high-precision rational-form value at x=1, sigma=1
  REQUIRE(std::fabs(sigmoid_pn_scalar(1.0, 1.0) - 0.4621171572600098) < 1e-9);
  for (double x : {0.3, 1.7, 42.0}) {
    REQUIRE(sigmoid_pn_scalar(-x, 1.3) == -sigmoid_pn_scalar(x, 1.3));
    REQUIRE(std::fabs(sigmoid_pn_scalar(x, 1.3)) < 1.0);
  }
  REQUIRE(sigmoid_pn_scalar(1e9, 2.0) == 1.0);
  REQUIRE(sigmoid_pn_scalar(-1e9, 2.0) == -1.0);
}

TEST_CASE("second_order matches a brute-force Gram computation") {
  Rng rng(9);
  FeatureMap phi(2, 4);
  for (double& v : phi.data) v = rng.uniform(-1, 1);
  RelationDescriptor r = second_order(phi, 0.8);
  for (int i = 0; i < 2; ++i) {
    for (int j = 0; j < 2; ++j) {
      double gram = 0.0;
      for (int t = 0; t < 4; ++t)
        gram += phi.data[static_cast<std::size_t>(i) * 4 + t] * phi.data[static_cast<std::size_t>(j) * 4 + t];
      REQUIRE(std::fabs(r.at(i, j) - std::tanh(0.4 * gram)) < 1e-12);
    }
  }
}

TEST_CASE("second_order of a zero map is zero; single-row support pattern holds") {
  FeatureMap zero(3, 5);
  RelationDescriptor rz = second_order(zero, 1.0);
  for (double v : rz.m) REQUIRE(v == 0.0);

  FeatureMap single(3, 5);
  for (int t = 0; t < 5; ++t) single.data[5 + t] = 0.5 + 0.1 * t;  // row 1 only
  RelationDescriptor r = second_order(single, 1.0);
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) {
      if (i == 1 && j == 1)
        REQUIRE(r.at(i, j) != 0.0);
      else
        REQUIRE(r.at(i, j) == 0.0);
    }
}

TEST_CASE("descriptors are exactly symmetric and bounded") {
  Rng rng(10);
  for (int trial = 0; trial < 10; ++trial) {
    FeatureMap phi(6, 9);
    for (double& v : phi.data) v = rng.uniform(-2, 2);
    RelationDescriptor r = second_order(phi, 1.0);
    for (int i = 0; i < 6; ++i)
      for (int j = 0; j < 6; ++j) {
        REQUIRE(r.at(i, j) == r.at(j, i));  // bit equality
        REQUIRE(std::fabs(r.at(i, j)) < 1.0);
      }
  }
}

TEST_CASE("the Gram matrix is positive semidefinite") {
  Rng rng(11);
  for (int trial = 0; trial < 10; ++trial) {
    int k = 4 + static_cast<int>(rng.index(5));  // K' <= 8
    FeatureMap phi(k, 6);
    for (double& v : phi.data) v = rng.uniform(-1, 1);
    std::vector<double> gram(static_cast<std::size_t>(k) * k, 0.0);
    for (int i = 0; i < k; ++i)
      for (int j = 0; j < k; ++j)
        for (int t = 0; t < 6; ++t)
          gram[static_cast<std::size_t>(i) * k + j] +=
              phi.data[static_cast<std::size_t>(i) * 6 + t] * phi.data[static_cast<std::size_t>(j) * 6 + t];
    for (double ev : jacobi_eigenvalues(gram, k)) REQUIRE(ev >= -1e-9);
  }
}

TEST_CASE("gradient of the image-to-descriptor path passes finite differences") {
  EncoderConfig cfg;
  cfg.f_blocks = {{2, 3, 1, true}};
  cfg.g_blocks = {{3, 3, 1, true}};
  cfg.sigma_pn = 1.0;
  ParamStore store;
  Rng rng(12);
  init_femn_params(store, cfg, rng);
  // give the biases non-zero values so their gradients are informative
  for (auto& [name, p] : store.all())
    if (name.ends_with(".b"))
      for (double& v : p.data) v = rng.uniform(-0.1, 0.1);
  store.touch();

  Graph g(&store);
  ValueId img = g.input({3, 8, 8});
  std::vector<double> data(192);
  for (double& v : data) v = rng.uniform();
  g.set_input(img, data);
  ValueId fF = build_encode_f(g, img, cfg);
  ValueId phi = build_encode_g(g, fF, cfg);
  ValueId r = build_second_order(g, phi, cfg.sigma_pn);
  ValueId loss = g.mean_square(r);
  auto report = grad_check(g, loss, store,
                           {"f.conv0.w", "f.conv0.b", "g.conv0.w", "g.conv0.b"}, 1e-5, 1e-4);
  REQUIRE(report.pass);
}
