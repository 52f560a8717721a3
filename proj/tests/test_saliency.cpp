#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "salnet/dataset.hpp"
#include "salnet/saliency.hpp"

using namespace salnet;

namespace {

Image random_image(Rng& rng, int c, int h, int w) {
  Image img(c, h, w);
  for (double& v : img.data) v = rng.uniform();
  return img;
}

SaliencyMask mask_from(const std::vector<double>& v, int h, int w) {
  SaliencyMask m(h, w, MaskProvenance::oracle);
  m.values = v;
  return m;
}

}  // namespace

TEST_CASE("oracle mask returns the stored matte unchanged") {
  SyntheticConfig cfg;
  cfg.num_classes = 2;
  cfg.images_per_class = 1;
  cfg.seed = 9;
  Dataset ds = generate_synthetic(cfg);
  SaliencyMask m = oracle_mask(ds.images[0]);
  REQUIRE(m.values == ds.images[0].oracle_mask->values);

  LabeledImage all_fg;
  all_fg.image = Image(3, 8, 8);
  SaliencyMask ones(8, 8, MaskProvenance::oracle);
  std::fill(ones.values.begin(), ones.values.end(), 1.0);
  all_fg.oracle_mask = ones;
  REQUIRE(oracle_mask(all_fg).values == ones.values);

  SaliencyMask checker(8, 8, MaskProvenance::oracle);
  for (int y = 0; y < 8; ++y)
    for (int x = 0; x < 8; ++x) checker.at(y, x) = (x + y) % 2 ? 1.0 : 0.0;
  all_fg.oracle_mask = checker;
  REQUIRE(oracle_mask(all_fg).values == checker.values);

  LabeledImage no_mask;
  no_mask.image = Image(3, 8, 8);
  REQUIRE_THROWS_AS(oracle_mask(no_mask), Error);
}

TEST_CASE("heuristic mask is all-zero with a warning on uniform images") {
  Image img(3, 10, 10);
  for (double& v : img.data) v = 0.4;
  SaliencyMask m = heuristic_mask(img);
  REQUIRE(m.degenerate);
  for (double v : m.values) REQUIRE(v == 0.0);
}

TEST_CASE("heuristic mask peaks inside a bright disk on a dark background") {
  int M = 16;
  Image img(3, M, M);
  for (double& v : img.data) v = 0.1;
  double cx = 8.0, cy = 8.0, r = 4.0;
  for (int y = 0; y < M; ++y)
    for (int x = 0; x < M; ++x)
      if ((x + 0.5 - cx) * (x + 0.5 - cx) + (y + 0.5 - cy) * (y + 0.5 - cy) <= r * r)
        for (int c = 0; c < 3; ++c) img.at(c, y, x) = 0.95;
  SaliencyMask m = heuristic_mask(img);
  // maximum inside the disk
  double inner = m.at(8, 8);
  REQUIRE(inner == 1.0);
  // the border frame stays low
  for (int x = 0; x < M; ++x) {
    REQUIRE(m.at(0, x) <= 0.2);
    REQUIRE(m.at(M - 1, x) <= 0.2);
  }
  for (double v : m.values) {
    REQUIRE(v >= 0.0);
    REQUIRE(v <= 1.0);
  }
}

TEST_CASE("heuristic mask is invariant under color inversion") {
  Rng rng(15);
  Image img = random_image(rng, 3, 12, 12);
  Image inv = img;
  for (double& v : inv.data) v = 1.0 - v;
  SaliencyMask a = heuristic_mask(img);
  SaliencyMask b = heuristic_mask(inv);
  for (std::size_t i = 0; i < a.values.size(); ++i)
    REQUIRE(std::fabs(a.values[i] - b.values[i]) < 1e-12);
}

TEST_CASE("split follows the masking identities") {
  Rng rng(16);
  Image img = random_image(rng, 3, 9, 9);

  SaliencyMask ones(9, 9, MaskProvenance::oracle);
  std::fill(ones.values.begin(), ones.values.end(), 1.0);
  auto [f1, b1] = split(img, ones);
  REQUIRE(f1.data == img.data);
  for (double v : b1.data) REQUIRE(v == 0.0);

  SaliencyMask half(9, 9, MaskProvenance::oracle);
  std::fill(half.values.begin(), half.values.end(), 0.5);
  auto [f2, b2] = split(img, half);
  REQUIRE(f2.data == b2.data);
  for (std::size_t i = 0; i < img.data.size(); ++i) REQUIRE(f2.data[i] == 0.5 * img.data[i]);
}

TEST_CASE("split reconstructs the image exactly on random masks") {
  Rng rng(17);
  for (int trial = 0; trial < 100; ++trial) {
    Image img = random_image(rng, 3, 8, 8);
    SaliencyMask m(8, 8, MaskProvenance::oracle);
    for (double& v : m.values) v = rng.uniform();
    auto [fg, bg] = split(img, m);
    for (std::size_t i = 0; i < img.data.size(); ++i)
      REQUIRE(fg.data[i] + bg.data[i] == img.data[i]);
  }
}

TEST_CASE("split rejects mismatched shapes") {
  Image img(3, 8, 8);
  SaliencyMask m(4, 4, MaskProvenance::oracle);
  REQUIRE_THROWS_AS(split(img, m), Error);
}

TEST_CASE("dilate at radius zero binarizes and keeps binary masks fixed") {
  SaliencyMask m = mask_from({0, 1, 1, 0, 0, 1, 0, 0, 1, 0, 1, 1, 0, 0, 1, 1}, 4, 4);
  SaliencyMask d = dilate(m, 0.0, 0.5);
  REQUIRE(d.values == m.values);
}

TEST_CASE("dilating a single pixel strictly grows its support") {
  SaliencyMask m(9, 9, MaskProvenance::oracle);
  m.at(4, 4) = 1.0;
  SaliencyMask d = dilate(m, 2.0, 0.01);
  REQUIRE(d.at(4, 4) == 1.0);
  int count = 0;
  for (double v : d.values) count += v == 1.0 ? 1 : 0;
  REQUIRE(count > 1);  // superset of the original single pixel
  // footprint follows the truncated kernel: a pixel at distance 1 sees
  // exp(-1/8) ~= 0.88 > 0.01
  REQUIRE(d.at(4, 5) == 1.0);
}

TEST_CASE("dilating an all-ones mask leaves it all ones") {
  SaliencyMask m(6, 6, MaskProvenance::oracle);
  std::fill(m.values.begin(), m.values.end(), 1.0);
  for (double r : {0.5, 1.0, 3.0}) {
    SaliencyMask d = dilate(m, r, 0.5);
    for (double v : d.values) REQUIRE(v == 1.0);
  }
}

TEST_CASE("dilation is monotone in the radius on binary masks") {
  Rng rng(18);
  for (int trial = 0; trial < 10; ++trial) {
    SaliencyMask m(12, 12, MaskProvenance::oracle);
    for (double& v : m.values) v = rng.uniform() < 0.2 ? 1.0 : 0.0;
    std::vector<double> radii = {0.0, 0.5, 1.0, 1.7, 2.5, 4.0};
    SaliencyMask prev = dilate(m, radii[0], 0.5);
    for (std::size_t k = 1; k < radii.size(); ++k) {
      SaliencyMask cur = dilate(m, radii[k], 0.5);
      for (std::size_t i = 0; i < cur.values.size(); ++i)
        if (prev.values[i] == 1.0) REQUIRE(cur.values[i] == 1.0);
      prev = cur;
    }
  }
}

TEST_CASE("dilate validates its parameters") {
  SaliencyMask m(4, 4, MaskProvenance::oracle);
  REQUIRE_THROWS_AS(dilate(m, -1.0, 0.5), Error);
  REQUIRE_THROWS_AS(dilate(m, 1.0, 0.0), Error);
  REQUIRE_THROWS_AS(dilate(m, 1.0, 1.0), Error);
}
