#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "salnet/core.hpp"
#include "salnet/dataset.hpp"
#include "salnet/femn.hpp"

namespace salnet {

enum class Strategy { none, intra, inter };
enum class PriorMode { none, ssp, hsp };
enum class TrirMode { off, teacher_full_image, teacher_fgbg };

struct PriorConfig {
  PriorMode mode = PriorMode::none;
  double alpha = 1.0;  // probability profile slope
  double tau = 0.5;    // hard-prior threshold, used only in hsp mode
};

struct TrirConfig {
  TrirMode mode = TrirMode::off;
  double beta = 0.01;
  std::string teacher_checkpoint;
};

// A support descriptor hallucinated from a foreground and a donor background.
// The class label always follows the foreground source.
struct HallucinatedSample {
  int fg_support = 0;       // index into the episode's support list
  int bg_support = 0;       // donor support index
  int bg_variant = 0;       // index into the dilation radii list (0 when none)
  double bg_dilation_radius = 0.0;
  int class_slot = 0;
  double prior_p = 1.0;     // stays exactly 1 while priors are disabled
};

// Strategy I: foregrounds mix only with backgrounds of the other same-class
// supports; D variants per donor give D*(W-1) samples per image.
inline std::vector<HallucinatedSample> enumerate_intra(const Episode& ep,
                                                       const std::vector<double>& radii) {
  int variants = radii.empty() ? 1 : static_cast<int>(radii.size());
  std::vector<HallucinatedSample> out;
  for (std::size_t i = 0; i < ep.support.size(); ++i) {
    for (std::size_t j = 0; j < ep.support.size(); ++j) {
      if (i == j) continue;
      if (ep.support[j].class_slot != ep.support[i].class_slot) continue;
      for (int d = 0; d < variants; ++d) {
        HallucinatedSample h;
        h.fg_support = static_cast<int>(i);
        h.bg_support = static_cast<int>(j);
        h.bg_variant = d;
        h.bg_dilation_radius = radii.empty() ? 0.0 : radii[static_cast<std::size_t>(d)];
        h.class_slot = ep.support[i].class_slot;
        out.push_back(h);
      }
    }
  }
  return out;
}

// Strategy II: foregrounds mix with every other support background regardless
// of class; D*(W-1+W(N-1)) samples per image.
inline std::vector<HallucinatedSample> enumerate_inter(const Episode& ep,
                                                       const std::vector<double>& radii) {
  int variants = radii.empty() ? 1 : static_cast<int>(radii.size());
  std::vector<HallucinatedSample> out;
  for (std::size_t i = 0; i < ep.support.size(); ++i) {
    for (std::size_t j = 0; j < ep.support.size(); ++j) {
      if (i == j) continue;
      for (int d = 0; d < variants; ++d) {
        HallucinatedSample h;
        h.fg_support = static_cast<int>(i);
        h.bg_support = static_cast<int>(j);
        h.bg_variant = d;
        h.bg_dilation_radius = radii.empty() ? 0.0 : radii[static_cast<std::size_t>(d)];
        h.class_slot = ep.support[i].class_slot;
        out.push_back(h);
      }
    }
  }
  return out;
}

// d(B_a, B_b) = ||f(B_a) - f(B_b)||^2
inline double background_distance(const FeatureMap& a, const FeatureMap& b) {
  if (a.channels != b.channels || a.locations != b.locations)
    throw config_error("background_distance: feature map shapes differ");
  double acc = 0.0;
  for (std::size_t i = 0; i < a.data.size(); ++i) {
    double d = a.data[i] - b.data[i];
    acc += d * d;
  }
  return acc;
}

// p = 2 e^{-alpha d} / (1 + e^{-alpha d}); a sigmoid reflected along its
// y axis mapping distance 0 to probability 1.
inline double prior_probability(double d, double alpha) {
  if (d < 0.0) throw config_error("prior_probability: distance must be >= 0");
  if (alpha < 0.0) throw config_error("prior_probability: alpha must be >= 0");
  double e = std::exp(-alpha * d);
  return 2.0 * e / (1.0 + e);
}

// Soft similarity prior: g' = p * Phi on the refined map, pre-pooling.
inline FeatureMap apply_ssp(const FeatureMap& phi, double p) {
  if (!(p > 0.0 && p <= 1.0)) throw config_error("apply_ssp: p must lie in (0,1]");
  if (p == 1.0) return phi;
  FeatureMap out(phi.channels, phi.locations);
  for (std::size_t i = 0; i < phi.data.size(); ++i) out.data[i] = p * phi.data[i];
  return out;
}

// Hard similarity prior: keep pairs whose p exceeds tau, unweighted.
inline std::vector<HallucinatedSample> apply_hsp(const std::vector<HallucinatedSample>& pairs,
                                                 double tau) {
  if (!(tau >= 0.0 && tau < 1.0)) throw config_error("apply_hsp: tau must lie in [0,1)");
  std::vector<HallucinatedSample> kept;
  for (const auto& h : pairs)
    if (h.prior_p > tau) kept.push_back(h);
  return kept;
}

// TriR regularizer on real same-image pairs: mean over support images of the
// squared distance between student and frozen-teacher refined maps.
inline double trir_omega(const std::vector<FeatureMap>& student,
                         const std::vector<FeatureMap>& teacher) {
  if (student.empty() || student.size() != teacher.size())
    throw config_error("trir_omega: student/teacher map counts differ");
  double acc = 0.0;
  for (std::size_t i = 0; i < student.size(); ++i) {
    if (student[i].data.size() != teacher[i].data.size())
      throw config_error("trir_omega: map shapes differ");
    for (std::size_t t = 0; t < student[i].data.size(); ++t) {
      double d = student[i].data[t] - teacher[i].data[t];
      acc += d * d;
    }
  }
  return acc / static_cast<double>(student.size());
}

}  // namespace salnet
