#pragma once

#include <map>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "salnet/autodiff.hpp"
#include "salnet/core.hpp"
#include "salnet/dataset.hpp"
#include "salnet/femn.hpp"
#include "salnet/hallucination.hpp"
#include "salnet/relation.hpp"
#include "salnet/saliency.hpp"

namespace salnet {

struct PipelineConfig {
  EncoderConfig encoder = EncoderConfig::defaults();
  RelationConfig relation;
  SaliencyBackend backend = SaliencyBackend::oracle;
  Strategy strategy = Strategy::none;
  PriorConfig prior;
  TrirConfig trir;
  // donor-background dilation radii, declared at the M=32 reference scale and
  // scaled proportionally with the image size; empty = raw donor backgrounds
  std::vector<double> dilation_radii = {1.0, 2.5};
  double dilation_threshold = 0.5;
  bool whole_image = false;  // encode g(f(I)) and skip saliency entirely
  int image_size = 32;
  int image_channels = 3;
};

inline int dilation_variants(const PipelineConfig& cfg) {
  return cfg.dilation_radii.empty() ? 1 : static_cast<int>(cfg.dilation_radii.size());
}

struct EpisodeResult {
  double loss = 0.0;        // L, the episodic MSE
  double omega = 0.0;       // TriR term (0 when disabled)
  double loss_total = 0.0;  // L' = L + beta * omega
  double accuracy = 0.0;    // fraction of queries classified correctly
  int pool_size = 0;        // real + hallucinated support descriptors
};

// Runs one episode through saliency split, encoding, hallucination, priors,
// relation scoring and (optionally) the backward pass. Parameter updates are
// the caller's job.
class EpisodeProcessor {
 public:
  EpisodeProcessor(const PipelineConfig& cfg, ParamStore* student, ParamStore* teacher)
      : cfg_(cfg), student_(student), teacher_(teacher) {
    if (cfg_.whole_image && cfg_.strategy != Strategy::none)
      throw config_error("whole-image encoding cannot hallucinate foreground-background pairs");
    if (cfg_.trir.mode != TrirMode::off && teacher_ == nullptr)
      throw config_error("TriR needs a teacher parameter store");
    if (cfg_.trir.mode != TrirMode::off && cfg_.whole_image)
      throw config_error("TriR regularizes foreground-background encoding, not whole images");
    auto [k, z] = f_output_shape(cfg_.encoder, cfg_.image_size, cfg_.image_channels);
    feat_k_ = k;
    feat_z_ = z;
    auto [kp, zp] = g_output_shape(cfg_.encoder, cfg_.image_size, cfg_.image_channels);
    k_prime_ = kp;
    (void)zp;
  }

  EpisodeResult process(const Dataset& ds, const Episode& ep, bool train) {
    const int n_sup = static_cast<int>(ep.support.size());
    const int n_qry = static_cast<int>(ep.queries.size());
    const int M = cfg_.image_size;
    const double radius_scale = static_cast<double>(M) / 32.0;

    // -- saliency stage: per-image foreground/background planes
    std::vector<const LabeledImage*> sup_img(static_cast<std::size_t>(n_sup));
    std::vector<const LabeledImage*> qry_img(static_cast<std::size_t>(n_qry));
    for (int i = 0; i < n_sup; ++i)
      sup_img[static_cast<std::size_t>(i)] = &ds.images[static_cast<std::size_t>(ep.support[static_cast<std::size_t>(i)].image_index)];
    for (int q = 0; q < n_qry; ++q)
      qry_img[static_cast<std::size_t>(q)] = &ds.images[static_cast<std::size_t>(ep.queries[static_cast<std::size_t>(q)].image_index)];

    std::vector<Image> sup_fg, sup_bg, qry_fg, qry_bg;
    std::vector<std::vector<Image>> donor_bg;  // [support][variant]
    std::vector<HallucinatedSample> pairs;

    if (!cfg_.whole_image) {
      sup_fg.resize(static_cast<std::size_t>(n_sup));
      sup_bg.resize(static_cast<std::size_t>(n_sup));
      qry_fg.resize(static_cast<std::size_t>(n_qry));
      qry_bg.resize(static_cast<std::size_t>(n_qry));
      for (int i = 0; i < n_sup; ++i) {
        SaliencyMask m = compute_mask(*sup_img[static_cast<std::size_t>(i)], cfg_.backend);
        auto fb = split(sup_img[static_cast<std::size_t>(i)]->image, m);
        sup_fg[static_cast<std::size_t>(i)] = std::move(fb.first);
        sup_bg[static_cast<std::size_t>(i)] = std::move(fb.second);
        if (cfg_.strategy != Strategy::none && !cfg_.dilation_radii.empty()) {
          donor_bg.emplace_back();
          for (double r : cfg_.dilation_radii) {
            SaliencyMask dm = dilate(m, r * radius_scale, cfg_.dilation_threshold);
            donor_bg.back().push_back(split(sup_img[static_cast<std::size_t>(i)]->image, dm).second);
          }
        } else if (cfg_.strategy != Strategy::none) {
          donor_bg.emplace_back();
          donor_bg.back().push_back(sup_bg[static_cast<std::size_t>(i)]);
        }
      }
      for (int q = 0; q < n_qry; ++q) {
        SaliencyMask m = compute_mask(*qry_img[static_cast<std::size_t>(q)], cfg_.backend);
        auto fb = split(qry_img[static_cast<std::size_t>(q)]->image, m);
        qry_fg[static_cast<std::size_t>(q)] = std::move(fb.first);
        qry_bg[static_cast<std::size_t>(q)] = std::move(fb.second);
      }
      if (cfg_.strategy == Strategy::intra)
        pairs = enumerate_intra(ep, cfg_.dilation_radii);
      else if (cfg_.strategy == Strategy::inter)
        pairs = enumerate_inter(ep, cfg_.dilation_radii);
    }

    // -- f-encoder graph
    Graph gf(student_);
    Shape img_shape = {cfg_.image_channels, M, M};
    std::vector<ValueId> f_sup_fg(static_cast<std::size_t>(n_sup), -1),
        f_sup_bg(static_cast<std::size_t>(n_sup), -1);
    std::vector<ValueId> f_qry_fg(static_cast<std::size_t>(n_qry), -1),
        f_qry_bg(static_cast<std::size_t>(n_qry), -1);
    std::vector<std::vector<ValueId>> f_donor;
    std::vector<ValueId> in_nodes;  // parallel bookkeeping for backward transfer

    auto add_stream = [&](const Image& img) {
      ValueId in = gf.input(img_shape);
      gf.set_input(in, img.data);
      return build_encode_f(gf, in, cfg_.encoder);
    };

    if (cfg_.whole_image) {
      for (int i = 0; i < n_sup; ++i)
        f_sup_fg[static_cast<std::size_t>(i)] = add_stream(sup_img[static_cast<std::size_t>(i)]->image);
      for (int q = 0; q < n_qry; ++q)
        f_qry_fg[static_cast<std::size_t>(q)] = add_stream(qry_img[static_cast<std::size_t>(q)]->image);
    } else {
      for (int i = 0; i < n_sup; ++i) {
        f_sup_fg[static_cast<std::size_t>(i)] = add_stream(sup_fg[static_cast<std::size_t>(i)]);
        f_sup_bg[static_cast<std::size_t>(i)] = add_stream(sup_bg[static_cast<std::size_t>(i)]);
      }
      for (int q = 0; q < n_qry; ++q) {
        f_qry_fg[static_cast<std::size_t>(q)] = add_stream(qry_fg[static_cast<std::size_t>(q)]);
        f_qry_bg[static_cast<std::size_t>(q)] = add_stream(qry_bg[static_cast<std::size_t>(q)]);
      }
      if (cfg_.strategy != Strategy::none) {
        // encode only donor variants some pair actually uses
        f_donor.assign(static_cast<std::size_t>(n_sup),
                       std::vector<ValueId>(static_cast<std::size_t>(dilation_variants(cfg_)), -1));
        for (const auto& h : pairs) {
          ValueId& slot = f_donor[static_cast<std::size_t>(h.bg_support)][static_cast<std::size_t>(h.bg_variant)];
          if (slot < 0)
            slot = add_stream(donor_bg[static_cast<std::size_t>(h.bg_support)][static_cast<std::size_t>(h.bg_variant)]);
        }
      }
    }
    gf.forward();

    // -- similarity priors on donor backgrounds (Eq. 8-11)
    if (cfg_.strategy != Strategy::none && cfg_.prior.mode != PriorMode::none) {
      for (auto& h : pairs) {
        FeatureMap own(feat_k_, feat_z_ * feat_z_), donor(feat_k_, feat_z_ * feat_z_);
        own.data = gf.data(f_sup_bg[static_cast<std::size_t>(h.fg_support)]);
        donor.data = gf.data(f_donor[static_cast<std::size_t>(h.bg_support)][static_cast<std::size_t>(h.bg_variant)]);
        h.prior_p = prior_probability(background_distance(own, donor), cfg_.prior.alpha);
      }
      if (cfg_.prior.mode == PriorMode::hsp) pairs = apply_hsp(pairs, cfg_.prior.tau);
    }

    // -- teacher maps for TriR (frozen, forward only)
    std::vector<std::vector<double>> teacher_phi;
    if (cfg_.trir.mode != TrirMode::off) {
      // the regularizer is defined on real pairs that rebuild the image
      for (int i = 0; i < n_sup; ++i) {
        const Image& whole = sup_img[static_cast<std::size_t>(i)]->image;
        const Image& fgi = sup_fg[static_cast<std::size_t>(i)];
        const Image& bgi = sup_bg[static_cast<std::size_t>(i)];
        for (std::size_t t = 0; t < whole.data.size(); ++t)
          if (fgi.data[t] + bgi.data[t] != whole.data[t])
            throw numeric_error("TriR constraint violated: F+B does not rebuild image");
      }
      Graph gt(teacher_);
      std::vector<ValueId> phi_nodes;
      for (int i = 0; i < n_sup; ++i) {
        ValueId in_a = gt.input(img_shape);
        ValueId mixed;
        if (cfg_.trir.mode == TrirMode::teacher_full_image) {
          gt.set_input(in_a, sup_img[static_cast<std::size_t>(i)]->image.data);
          mixed = build_encode_f(gt, in_a, cfg_.encoder);
        } else {
          gt.set_input(in_a, sup_fg[static_cast<std::size_t>(i)].data);
          ValueId in_b = gt.input(img_shape);
          gt.set_input(in_b, sup_bg[static_cast<std::size_t>(i)].data);
          mixed = gt.add(build_encode_f(gt, in_a, cfg_.encoder),
                         build_encode_f(gt, in_b, cfg_.encoder));
        }
        phi_nodes.push_back(build_encode_g(gt, mixed, cfg_.encoder));
      }
      gt.forward();
      for (ValueId id : phi_nodes) teacher_phi.push_back(gt.data(id));
    }

    // -- g-encoder + descriptor + relate-half graph
    Graph gg(student_);
    Shape fshape = {feat_k_, feat_z_, feat_z_};
    struct PoolEntry {
      int class_slot;
      ValueId u_node;
    };
    std::vector<PoolEntry> pool;
    std::vector<ValueId> qry_u(static_cast<std::size_t>(n_qry), -1);
    std::vector<ValueId> qry_fg_in(static_cast<std::size_t>(n_qry), -1), qry_bg_in(static_cast<std::size_t>(n_qry), -1);
    std::vector<ValueId> sup_phi_nodes(static_cast<std::size_t>(n_sup), -1);

    auto feed = [&](ValueId src_f) {
      ValueId in = gg.input(fshape);
      gg.set_input(in, gf.data(src_f));
      return in;
    };

    // real supports
    std::vector<ValueId> sup_fg_in(static_cast<std::size_t>(n_sup)), sup_bg_in(static_cast<std::size_t>(n_sup), -1);
    for (int i = 0; i < n_sup; ++i) {
      ValueId a = feed(f_sup_fg[static_cast<std::size_t>(i)]);
      sup_fg_in[static_cast<std::size_t>(i)] = a;
      ValueId mixed = a;
      if (!cfg_.whole_image) {
        ValueId b = feed(f_sup_bg[static_cast<std::size_t>(i)]);
        sup_bg_in[static_cast<std::size_t>(i)] = b;
        mixed = gg.add(a, b);
      }
      ValueId phi = build_encode_g(gg, mixed, cfg_.encoder);
      sup_phi_nodes[static_cast<std::size_t>(i)] = phi;
      ValueId r = build_second_order(gg, phi, cfg_.encoder.sigma_pn);
      pool.push_back({ep.support[static_cast<std::size_t>(i)].class_slot,
                      build_relate_support_half(gg, r)});
    }

    // hallucinated supports
    std::map<std::pair<int, int>, ValueId> donor_in;
    for (const auto& h : pairs) {
      auto key = std::make_pair(h.bg_support, h.bg_variant);
      auto it = donor_in.find(key);
      ValueId b;
      if (it == donor_in.end()) {
        b = feed(f_donor[static_cast<std::size_t>(h.bg_support)][static_cast<std::size_t>(h.bg_variant)]);
        donor_in[key] = b;
      } else {
        b = it->second;
      }
      ValueId mixed = gg.add(sup_fg_in[static_cast<std::size_t>(h.fg_support)], b);
      ValueId phi = build_encode_g(gg, mixed, cfg_.encoder);
      if (cfg_.prior.mode == PriorMode::ssp && h.prior_p != 1.0) phi = gg.scale(phi, h.prior_p);
      ValueId r = build_second_order(gg, phi, cfg_.encoder.sigma_pn);
      pool.push_back({h.class_slot, build_relate_support_half(gg, r)});
    }

    // queries (always real)
    for (int q = 0; q < n_qry; ++q) {
      ValueId a = feed(f_qry_fg[static_cast<std::size_t>(q)]);
      qry_fg_in[static_cast<std::size_t>(q)] = a;
      ValueId mixed = a;
      if (!cfg_.whole_image) {
        ValueId b = feed(f_qry_bg[static_cast<std::size_t>(q)]);
        qry_bg_in[static_cast<std::size_t>(q)] = b;
        mixed = gg.add(a, b);
      }
      ValueId phi = build_encode_g(gg, mixed, cfg_.encoder);
      ValueId r = build_second_order(gg, phi, cfg_.encoder.sigma_pn);
      qry_u[static_cast<std::size_t>(q)] = build_relate_query_half(gg, r);
    }

    // TriR penalty node
    ValueId omega_node = -1;
    if (cfg_.trir.mode != TrirMode::off) {
      std::vector<ValueId> diffs;
      for (int i = 0; i < n_sup; ++i) {
        ValueId target = gg.constant(gg.shape(sup_phi_nodes[static_cast<std::size_t>(i)]),
                                     teacher_phi[static_cast<std::size_t>(i)]);
        diffs.push_back(gg.flatten(gg.add(sup_phi_nodes[static_cast<std::size_t>(i)], gg.scale(target, -1.0))));
      }
      ValueId cat = gg.concat(diffs);
      int per_map = gg.shape(cat)[0] / n_sup;
      omega_node = gg.scale(gg.mean_square(cat), static_cast<double>(per_map));
    }
    gg.forward();

    // -- pair scoring through the reused head graph
    ensure_pair_graph();
    const int pool_n = static_cast<int>(pool.size());
    std::vector<double> scores(static_cast<std::size_t>(pool_n) * n_qry);
    std::vector<double> targets(static_cast<std::size_t>(pool_n) * n_qry);
    std::vector<std::vector<double>> du_pool, du_qry;
    if (train) {
      du_pool.assign(static_cast<std::size_t>(pool_n), {});
      du_qry.assign(static_cast<std::size_t>(n_qry), {});
    }
    const std::size_t u_len = gg.data(pool[0].u_node).size();
    double total_pairs = static_cast<double>(pool_n) * n_qry;

    // the pair count is known up front, so each pair's loss adjoint can be
    // seeded during the same sweep that computes its score
    for (int s = 0; s < pool_n; ++s) {
      pair_graph_->set_input(pair_in_s_, gg.data(pool[static_cast<std::size_t>(s)].u_node));
      for (int q = 0; q < n_qry; ++q) {
        pair_graph_->set_input(pair_in_q_, gg.data(qry_u[static_cast<std::size_t>(q)]));
        pair_graph_->forward();
        double sc = pair_graph_->scalar_value(pair_score_);
        double tg = pool[static_cast<std::size_t>(s)].class_slot == ep.queries[static_cast<std::size_t>(q)].class_slot ? 1.0 : 0.0;
        scores[static_cast<std::size_t>(s) * n_qry + q] = sc;
        targets[static_cast<std::size_t>(s) * n_qry + q] = tg;
        if (train) {
          double seed = 2.0 * (sc - tg) / total_pairs;
          pair_graph_->backward(pair_score_, {seed});
          auto& dp = du_pool[static_cast<std::size_t>(s)];
          const auto& gs = pair_graph_->grad(pair_in_s_);
          if (dp.empty()) dp.assign(u_len, 0.0);
          for (std::size_t t = 0; t < u_len; ++t) dp[t] += gs[t];
          auto& dq = du_qry[static_cast<std::size_t>(q)];
          const auto& gq = pair_graph_->grad(pair_in_q_);
          if (dq.empty()) dq.assign(u_len, 0.0);
          for (std::size_t t = 0; t < u_len; ++t) dq[t] += gq[t];
        }
      }
    }

    // -- losses and episode accuracy
    EpisodeResult res;
    res.pool_size = pool_n;
    double acc_loss = 0.0;
    for (std::size_t i = 0; i < scores.size(); ++i) {
      double d = scores[i] - targets[i];
      acc_loss += d * d;
    }
    res.loss = acc_loss / total_pairs;
    if (omega_node >= 0) res.omega = gg.scalar_value(omega_node);
    res.loss_total = (cfg_.trir.mode != TrirMode::off && cfg_.trir.beta != 0.0)
                         ? res.loss + cfg_.trir.beta * res.omega
                         : res.loss;

    std::vector<int> pool_slots;
    pool_slots.reserve(pool.size());
    for (const auto& e : pool) pool_slots.push_back(e.class_slot);
    int correct = 0;
    std::vector<double> col(static_cast<std::size_t>(pool_n));
    for (int q = 0; q < n_qry; ++q) {
      for (int s = 0; s < pool_n; ++s) col[static_cast<std::size_t>(s)] = scores[static_cast<std::size_t>(s) * n_qry + q];
      if (classify(col, pool_slots, ep.n_way) == ep.queries[static_cast<std::size_t>(q)].class_slot) ++correct;
    }
    res.accuracy = n_qry > 0 ? static_cast<double>(correct) / n_qry : 0.0;

    if (!train) return res;

    // -- backward through the g graph, then the f graph
    std::vector<std::pair<ValueId, std::vector<double>>> g_seeds;
    for (int s = 0; s < pool_n; ++s)
      if (!du_pool[static_cast<std::size_t>(s)].empty())
        g_seeds.emplace_back(pool[static_cast<std::size_t>(s)].u_node, std::move(du_pool[static_cast<std::size_t>(s)]));
    for (int q = 0; q < n_qry; ++q)
      if (!du_qry[static_cast<std::size_t>(q)].empty())
        g_seeds.emplace_back(qry_u[static_cast<std::size_t>(q)], std::move(du_qry[static_cast<std::size_t>(q)]));
    if (omega_node >= 0 && cfg_.trir.beta != 0.0)
      g_seeds.emplace_back(omega_node, std::vector<double>{cfg_.trir.beta});
    gg.backward_multi(g_seeds);

    std::vector<std::pair<ValueId, std::vector<double>>> f_seeds;
    auto transfer = [&](ValueId gg_in, ValueId gf_out) {
      if (gg_in < 0) return;
      const auto& g = gg.grad(gg_in);
      bool any = false;
      for (double v : g)
        if (v != 0.0) { any = true; break; }
      if (any) f_seeds.emplace_back(gf_out, g);
    };
    for (int i = 0; i < n_sup; ++i) {
      transfer(sup_fg_in[static_cast<std::size_t>(i)], f_sup_fg[static_cast<std::size_t>(i)]);
      if (!cfg_.whole_image) transfer(sup_bg_in[static_cast<std::size_t>(i)], f_sup_bg[static_cast<std::size_t>(i)]);
    }
    for (const auto& [key, in_id] : donor_in)
      transfer(in_id, f_donor[static_cast<std::size_t>(key.first)][static_cast<std::size_t>(key.second)]);
    for (int q = 0; q < n_qry; ++q) {
      transfer(qry_fg_in[static_cast<std::size_t>(q)], f_qry_fg[static_cast<std::size_t>(q)]);
      if (!cfg_.whole_image) transfer(qry_bg_in[static_cast<std::size_t>(q)], f_qry_bg[static_cast<std::size_t>(q)]);
    }
    gf.backward_multi(f_seeds);

    return res;
  }

 private:
  void ensure_pair_graph() {
    if (pair_graph_) return;
    pair_graph_ = std::make_unique<Graph>(student_);
    Shape ushape = {cfg_.relation.conv_channels, k_prime_, k_prime_};
    pair_in_s_ = pair_graph_->input(ushape, "u_support");
    pair_in_q_ = pair_graph_->input(ushape, "u_query");
    pair_score_ = build_relate_head(*pair_graph_, pair_in_s_, pair_in_q_);
  }

  PipelineConfig cfg_;
  ParamStore* student_;
  ParamStore* teacher_;
  int feat_k_ = 0, feat_z_ = 0, k_prime_ = 0;
  std::unique_ptr<Graph> pair_graph_;
  ValueId pair_in_s_ = -1, pair_in_q_ = -1, pair_score_ = -1;
};

}  // namespace salnet
