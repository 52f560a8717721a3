#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "salnet/core.hpp"
#include "salnet/image.hpp"
#include "salnet/saliency.hpp"

namespace salnet {

enum class ImageSource { synthetic, file };

struct LabeledImage {
  Image image;  // 3xMxM in [0,1]
  int class_id = 0;
  std::optional<SaliencyMask> oracle_mask;
  ImageSource source = ImageSource::synthetic;
};

struct Dataset {
  std::vector<LabeledImage> images;
  std::vector<std::string> class_names;
  std::vector<std::vector<int>> by_class;
  int image_size = 0;

  int num_classes() const { return static_cast<int>(class_names.size()); }
};

// Returns the stored matte unchanged; the oracle stands in for a pretrained
// saliency detector when ground truth is available.
inline SaliencyMask oracle_mask(const LabeledImage& img) {
  if (!img.oracle_mask)
    throw data_error("image of class " + std::to_string(img.class_id) + " has no oracle mask");
  return *img.oracle_mask;
}

enum class SaliencyBackend { oracle, heuristic, file };

inline SaliencyMask compute_mask(const LabeledImage& img, SaliencyBackend backend) {
  switch (backend) {
    case SaliencyBackend::oracle:
      return oracle_mask(img);
    case SaliencyBackend::heuristic:
      return heuristic_mask(img.image);
    case SaliencyBackend::file: {
      if (!img.oracle_mask || img.source != ImageSource::file)
        throw data_error("file saliency backend requires masks loaded from disk");
      return *img.oracle_mask;
    }
  }
  throw config_error("unknown saliency backend");
}

struct SyntheticConfig {
  int num_classes = 15;
  int images_per_class = 20;
  int image_size = 32;
  int fg_shape_families = 0;    // 0 = all built-in families
  int bg_texture_families = 0;  // 0 = all built-in families
  uint64_t seed = 7;
  double fg_min_frac = 0.05;
  double fg_max_frac = 0.40;
};

namespace detail {

inline constexpr int kShapeFamilies = 16;
inline constexpr int kTextureFamilies = 8;

// Shape membership tests in a local frame with bounding radius ~1.
inline bool shape_inside(int family, double u, double v) {
  double rr = u * u + v * v;
  switch (family) {
    case 0:  // disk
      return rr <= 1.0;
    case 1:  // ring
      return rr <= 1.0 && rr >= 0.55 * 0.55;
    case 2:  // square
      return std::max(std::fabs(u), std::fabs(v)) <= 0.75;
    case 3: {  // equilateral triangle, one vertex up
      double a = v + 0.5;
      double b = -0.866025403784438646 * u - 0.5 * v + 0.5;
      double c = 0.866025403784438646 * u - 0.5 * v + 0.5;
      return a >= 0.0 && b >= 0.0 && c >= 0.0;
    }
    case 4:  // plus
      return (std::fabs(u) <= 0.3 && std::fabs(v) <= 1.0) ||
             (std::fabs(v) <= 0.3 && std::fabs(u) <= 1.0);
    case 5:  // bar
      return std::fabs(u) <= 1.0 && std::fabs(v) <= 0.28;
    case 6:  // 2:1 ellipse
      return u * u + 4.0 * v * v <= 1.0;
    case 7: {  // five-point star
      double rho = std::sqrt(rr);
      double phi = std::atan2(v, u);
      return rho <= 0.55 + 0.45 * std::cos(5.0 * phi);
    }
    case 8: {  // hollow square frame
      double m = std::max(std::fabs(u), std::fabs(v));
      return m <= 0.8 && m >= 0.5;
    }
    case 9:  // L
      return (u >= -0.8 && u <= -0.3 && std::fabs(v) <= 0.8) ||
             (std::fabs(u) <= 0.8 && v >= -0.8 && v <= -0.3);
    case 10:  // T
      return (std::fabs(u) <= 0.8 && v >= 0.4 && v <= 0.8) ||
             (std::fabs(u) <= 0.25 && v >= -0.8 && v <= 0.4);
    case 11: {  // dumbbell
      double d1 = (u - 0.55) * (u - 0.55) + v * v;
      double d2 = (u + 0.55) * (u + 0.55) + v * v;
      return d1 <= 0.45 * 0.45 || d2 <= 0.45 * 0.45 ||
             (std::fabs(u) <= 0.55 && std::fabs(v) <= 0.15);
    }
    case 12: {  // crescent
      double d2 = (u - 0.45) * (u - 0.45) + v * v;
      return rr <= 1.0 && d2 > 0.8 * 0.8;
    }
    case 13: {  // hexagon
      double m = std::max({std::fabs(u), std::fabs(0.5 * u + 0.866025403784438646 * v),
                           std::fabs(0.5 * u - 0.866025403784438646 * v)});
      return m <= 0.85;
    }
    case 14:  // thin rhombus
      return std::fabs(u) + std::fabs(v) / 0.45 <= 1.0;
    case 15:  // H
      return (std::fabs(v) <= 0.8 && std::fabs(u) >= 0.5 && std::fabs(u) <= 0.8) ||
             (std::fabs(u) <= 0.8 && std::fabs(v) <= 0.2);
  }
  return false;
}

struct ShapePose {
  int family = 0;
  double cx = 0.0, cy = 0.0, radius = 1.0, angle = 0.0;

  bool contains(double px, double py) const {
    double dx = px - cx, dy = py - cy;
    double ca = std::cos(angle), sa = std::sin(angle);
    double u = (ca * dx + sa * dy) / radius;
    double v = (-sa * dx + ca * dy) / radius;
    return shape_inside(family, u, v);
  }
};

inline int rasterize_count(const ShapePose& pose, int M) {
  int count = 0;
  for (int y = 0; y < M; ++y)
    for (int x = 0; x < M; ++x)
      if (pose.contains(x + 0.5, y + 0.5)) ++count;
  return count;
}

inline double quant255(double v) { return std::round(std::clamp(v, 0.0, 1.0) * 255.0) / 255.0; }

inline std::array<double, 3> random_color(Rng& rng, double lo = 0.08, double hi = 0.92) {
  return {quant255(rng.uniform(lo, hi)), quant255(rng.uniform(lo, hi)),
          quant255(rng.uniform(lo, hi))};
}

inline Image render_texture(int family, int M, Rng& rng) {
  Image img(3, M, M);
  auto c1 = random_color(rng);
  auto c2 = random_color(rng);
  switch (family) {
    case 0: {  // horizontal stripes
      int period = rng.range(4, 12);
      int phase = rng.range(0, period - 1);
      for (int y = 0; y < M; ++y) {
        bool on = ((y + phase) / (period / 2 > 0 ? period / 2 : 1)) % 2 == 0;
        for (int x = 0; x < M; ++x)
          for (int c = 0; c < 3; ++c) img.at(c, y, x) = on ? c1[c] : c2[c];
      }
      break;
    }
    case 1: {  // vertical stripes
      int period = rng.range(4, 12);
      int phase = rng.range(0, period - 1);
      for (int x = 0; x < M; ++x) {
        bool on = ((x + phase) / (period / 2 > 0 ? period / 2 : 1)) % 2 == 0;
        for (int y = 0; y < M; ++y)
          for (int c = 0; c < 3; ++c) img.at(c, y, x) = on ? c1[c] : c2[c];
      }
      break;
    }
    case 2: {  // diagonal stripes
      int period = rng.range(5, 14);
      int phase = rng.range(0, period - 1);
      for (int y = 0; y < M; ++y)
        for (int x = 0; x < M; ++x) {
          bool on = (((x + y + phase) % period) * 2) < period;
          for (int c = 0; c < 3; ++c) img.at(c, y, x) = on ? c1[c] : c2[c];
        }
      break;
    }
    case 3: {  // checkerboard
      int cell = rng.range(3, 8);
      for (int y = 0; y < M; ++y)
        for (int x = 0; x < M; ++x) {
          bool on = ((x / cell) + (y / cell)) % 2 == 0;
          for (int c = 0; c < 3; ++c) img.at(c, y, x) = on ? c1[c] : c2[c];
        }
      break;
    }
    case 4: {  // radial gradient
      double gx = rng.uniform(0.0, M), gy = rng.uniform(0.0, M);
      double maxd = std::sqrt(2.0) * M;
      for (int y = 0; y < M; ++y)
        for (int x = 0; x < M; ++x) {
          double t = std::sqrt((x - gx) * (x - gx) + (y - gy) * (y - gy)) / maxd;
          for (int c = 0; c < 3; ++c)
            img.at(c, y, x) = quant255(c1[c] * (1.0 - t) + c2[c] * t);
        }
      break;
    }
    case 5: {  // linear gradient
      double ang = rng.uniform(0.0, 2.0 * M_PI);
      double ca = std::cos(ang), sa = std::sin(ang);
      for (int y = 0; y < M; ++y)
        for (int x = 0; x < M; ++x) {
          double t = ((x * ca + y * sa) / M + 1.0) * 0.5;
          t = std::clamp(t, 0.0, 1.0);
          for (int c = 0; c < 3; ++c)
            img.at(c, y, x) = quant255(c1[c] * (1.0 - t) + c2[c] * t);
        }
      break;
    }
    case 6: {  // sinusoidal plaid
      double fx = rng.uniform(1.0, 4.0), fy = rng.uniform(1.0, 4.0);
      double px = rng.uniform(0.0, 1.0), py = rng.uniform(0.0, 1.0);
      for (int y = 0; y < M; ++y)
        for (int x = 0; x < M; ++x) {
          double t = 0.5 + 0.5 * std::sin(2.0 * M_PI * (fx * x / M + px)) *
                               std::sin(2.0 * M_PI * (fy * y / M + py));
          for (int c = 0; c < 3; ++c)
            img.at(c, y, x) = quant255(c1[c] * (1.0 - t) + c2[c] * t);
        }
      break;
    }
    default: {  // soft blobs
      int blobs = rng.range(3, 6);
      std::vector<std::array<double, 6>> bs;
      for (int b = 0; b < blobs; ++b) {
        auto col = random_color(rng);
        bs.push_back({rng.uniform(0.0, M), rng.uniform(0.0, M), rng.uniform(M / 6.0, M / 2.5),
                      col[0], col[1], col[2]});
      }
      for (int y = 0; y < M; ++y)
        for (int x = 0; x < M; ++x) {
          double r = c1[0], g = c1[1], bds = c1[2];
          for (auto& b : bs) {
            double w = std::exp(-((x - b[0]) * (x - b[0]) + (y - b[1]) * (y - b[1])) /
                                (2.0 * b[2] * b[2]));
            r = r * (1.0 - w) + b[3] * w;
            g = g * (1.0 - w) + b[4] * w;
            bds = bds * (1.0 - w) + b[5] * w;
          }
          img.at(0, y, x) = quant255(r);
          img.at(1, y, x) = quant255(g);
          img.at(2, y, x) = quant255(bds);
        }
      break;
    }
  }
  return img;
}

inline LabeledImage synthesize_image(int class_id, int index, const SyntheticConfig& cfg,
                                     const Rng& base) {
  int M = cfg.image_size;
  int fg_fams = cfg.fg_shape_families > 0 ? std::min(cfg.fg_shape_families, kShapeFamilies)
                                          : kShapeFamilies;
  int bg_fams = cfg.bg_texture_families > 0 ? std::min(cfg.bg_texture_families, kTextureFamilies)
                                            : kTextureFamilies;
  Rng rng = base.split(static_cast<uint64_t>(class_id) * 1000003ULL +
                       static_cast<uint64_t>(index) * 7919ULL + 17ULL);

  Image bg = render_texture(static_cast<int>(rng.index(static_cast<std::size_t>(bg_fams))), M, rng);

  // foreground color pushed away from the background's mean color
  std::array<double, 3> bg_mean = {0, 0, 0};
  for (int c = 0; c < 3; ++c) {
    double acc = 0.0;
    for (int y = 0; y < M; ++y)
      for (int x = 0; x < M; ++x) acc += bg.at(c, y, x);
    bg_mean[c] = acc / (static_cast<double>(M) * M);
  }
  std::array<double, 3> fg_color = {0, 0, 0};
  double best = -1.0;
  for (int attempt = 0; attempt < 32; ++attempt) {
    auto cand = random_color(rng);
    double d = 0.0;
    for (int c = 0; c < 3; ++c) d += (cand[c] - bg_mean[c]) * (cand[c] - bg_mean[c]);
    d = std::sqrt(d);
    if (d > best) {
      best = d;
      fg_color = cand;
    }
    if (best >= 0.45) break;
  }

  ShapePose pose;
  pose.family = class_id % fg_fams;
  int lo_count = static_cast<int>(std::ceil(cfg.fg_min_frac * M * M));
  int hi_count = static_cast<int>(std::floor(cfg.fg_max_frac * M * M));
  int count = 0;
  for (int attempt = 0; attempt < 40; ++attempt) {
    double frac = rng.uniform(cfg.fg_min_frac * 1.3, cfg.fg_max_frac * 0.8);
    int target = static_cast<int>(frac * M * M);
    pose.angle = rng.uniform(0.0, 2.0 * M_PI);
    double span = 0.30 * M;
    pose.cx = M / 2.0 + rng.uniform(-span / 2.0, span / 2.0);
    pose.cy = M / 2.0 + rng.uniform(-span / 2.0, span / 2.0);
    double lo = 1.5, hi = 0.46 * M;
    for (int it = 0; it < 24; ++it) {
      pose.radius = 0.5 * (lo + hi);
      count = rasterize_count(pose, M);
      if (count < target)
        lo = pose.radius;
      else
        hi = pose.radius;
    }
    if (count >= lo_count && count <= hi_count && count > 0) break;
  }
  if (count < lo_count || count > hi_count)
    throw config_error("synthetic generator could not satisfy foreground area bounds");

  LabeledImage out;
  out.class_id = class_id;
  out.source = ImageSource::synthetic;
  out.image = Image(3, M, M);
  SaliencyMask matte(M, M, MaskProvenance::oracle);
  for (int y = 0; y < M; ++y) {
    for (int x = 0; x < M; ++x) {
      bool inside = pose.contains(x + 0.5, y + 0.5);
      matte.at(y, x) = inside ? 1.0 : 0.0;
      double shade = 1.0 - 0.22 * (static_cast<double>(y) / M);
      for (int c = 0; c < 3; ++c)
        out.image.at(c, y, x) = inside ? quant255(fg_color[c] * shade) : bg.at(c, y, x);
    }
  }
  out.oracle_mask = std::move(matte);
  return out;
}

}  // namespace detail

// Synthetic few-shot corpus: class identity is the foreground shape family,
// backgrounds are textured independently of class, and the exact alpha matte
// is kept as the oracle saliency mask.
inline Dataset generate_synthetic(const SyntheticConfig& cfg) {
  if (cfg.num_classes < 2) throw config_error("generate_synthetic: num_classes must be >= 2");
  if (cfg.image_size < 16) throw config_error("generate_synthetic: image_size must be >= 16");
  if (cfg.images_per_class < 1)
    throw config_error("generate_synthetic: images_per_class must be >= 1");
  if (!(cfg.fg_min_frac > 0.0 && cfg.fg_min_frac < cfg.fg_max_frac && cfg.fg_max_frac < 1.0))
    throw config_error("generate_synthetic: foreground area bounds must satisfy 0 < lo < hi < 1");

  Dataset ds;
  ds.image_size = cfg.image_size;
  Rng base(cfg.seed);
  for (int c = 0; c < cfg.num_classes; ++c) {
    char name[32];
    std::snprintf(name, sizeof(name), "class_%03d", c);
    ds.class_names.emplace_back(name);
    ds.by_class.emplace_back();
    for (int i = 0; i < cfg.images_per_class; ++i) {
      ds.by_class.back().push_back(static_cast<int>(ds.images.size()));
      ds.images.push_back(detail::synthesize_image(c, i, cfg, base));
    }
  }
  return ds;
}

// Directory layout: <class_name>/<image>.ppm with optional sibling
// <image>.mask.pgm. Classes and files are taken in lexicographic order.
inline Dataset load_directory(const std::string& path, int image_size) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(path)) throw data_error("not a dataset directory: " + path);
  std::vector<std::string> class_dirs;
  for (const auto& e : fs::directory_iterator(path))
    if (e.is_directory()) class_dirs.push_back(e.path().filename().string());
  std::sort(class_dirs.begin(), class_dirs.end());
  if (class_dirs.empty()) throw data_error("no class directories under " + path);

  Dataset ds;
  ds.image_size = image_size;
  for (const std::string& cname : class_dirs) {
    int class_id = static_cast<int>(ds.class_names.size());
    ds.class_names.push_back(cname);
    ds.by_class.emplace_back();
    std::vector<std::string> files;
    for (const auto& e : fs::directory_iterator(fs::path(path) / cname)) {
      std::string f = e.path().filename().string();
      if (f.size() > 4 && f.substr(f.size() - 4) == ".ppm") files.push_back(f);
    }
    std::sort(files.begin(), files.end());
    if (files.empty()) throw data_error("empty class directory: " + cname);
    for (const std::string& f : files) {
      fs::path img_path = fs::path(path) / cname / f;
      LabeledImage li;
      li.class_id = class_id;
      li.source = ImageSource::file;
      li.image = resize_bilinear(read_ppm(img_path.string()), image_size, image_size);
      fs::path mask_path = img_path;
      mask_path.replace_extension("");
      mask_path += ".mask.pgm";
      if (fs::exists(mask_path)) {
        Image m = resize_bilinear(read_pgm(mask_path.string()), image_size, image_size);
        SaliencyMask mask(image_size, image_size, MaskProvenance::file);
        mask.values = m.data;
        for (double& v : mask.values) v = std::clamp(v, 0.0, 1.0);
        li.oracle_mask = std::move(mask);
      }
      ds.by_class[static_cast<std::size_t>(class_id)].push_back(static_cast<int>(ds.images.size()));
      ds.images.push_back(std::move(li));
    }
  }
  return ds;
}

// Writes the corpus back out in the load_directory layout.
inline void export_dataset(const Dataset& ds, const std::string& dir) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  for (int c = 0; c < ds.num_classes(); ++c) {
    fs::path cdir = fs::path(dir) / ds.class_names[static_cast<std::size_t>(c)];
    fs::create_directories(cdir);
    int k = 0;
    for (int idx : ds.by_class[static_cast<std::size_t>(c)]) {
      char stem[32];
      std::snprintf(stem, sizeof(stem), "img_%04d", k++);
      const LabeledImage& li = ds.images[static_cast<std::size_t>(idx)];
      write_ppm(li.image, (cdir / (std::string(stem) + ".ppm")).string());
      if (li.oracle_mask) {
        Image m(1, li.oracle_mask->height, li.oracle_mask->width);
        m.data = li.oracle_mask->values;
        write_pgm(m, (cdir / (std::string(stem) + ".mask.pgm")).string());
      }
    }
  }
}

struct EpisodeSlot {
  int image_index = 0;
  int class_slot = 0;
  int shot = 0;
};

struct Episode {
  int n_way = 0;
  int w_shot = 0;
  int q_per_class = 0;
  std::vector<int> class_ids;  // dataset class per class slot
  std::vector<EpisodeSlot> support;
  std::vector<EpisodeSlot> queries;
};

// Uniform class and image sampling without replacement within each class.
inline Episode sample_episode(const Dataset& ds, const std::vector<int>& class_pool, int n_way,
                              int w_shot, int q_per_class, Rng& rng) {
  if (static_cast<int>(class_pool.size()) < n_way)
    throw data_error("episode needs " + std::to_string(n_way) + " classes, pool has " +
                     std::to_string(class_pool.size()));
  Episode ep;
  ep.n_way = n_way;
  ep.w_shot = w_shot;
  ep.q_per_class = q_per_class;
  std::vector<int> chosen = rng.sample_without_replacement(static_cast<int>(class_pool.size()), n_way);
  for (int slot = 0; slot < n_way; ++slot) {
    int cls = class_pool[static_cast<std::size_t>(chosen[static_cast<std::size_t>(slot)])];
    ep.class_ids.push_back(cls);
    const std::vector<int>& members = ds.by_class[static_cast<std::size_t>(cls)];
    int need = w_shot + q_per_class;
    if (static_cast<int>(members.size()) < need)
      throw data_error("class " + ds.class_names[static_cast<std::size_t>(cls)] + " has " +
                       std::to_string(members.size()) + " images, episode needs " +
                       std::to_string(need));
    std::vector<int> picks = rng.sample_without_replacement(static_cast<int>(members.size()), need);
    for (int w = 0; w < w_shot; ++w)
      ep.support.push_back({members[static_cast<std::size_t>(picks[static_cast<std::size_t>(w)])], slot, w});
    for (int q = 0; q < q_per_class; ++q)
      ep.queries.push_back(
          {members[static_cast<std::size_t>(picks[static_cast<std::size_t>(w_shot + q)])], slot, 0});
  }
  return ep;
}

struct ClassSplit {
  std::vector<int> train, val, test;
};

// Disjoint class splits, either by explicit counts or by ratio triple.
inline ClassSplit split_classes(int num_classes, int train_count, int val_count, int test_count) {
  if (train_count < 1 || test_count < 1 || val_count < 0)
    throw config_error("class split needs at least one train and one test class");
  if (train_count + val_count + test_count > num_classes)
    throw config_error("class split asks for " +
                       std::to_string(train_count + val_count + test_count) + " classes, dataset has " +
                       std::to_string(num_classes));
  ClassSplit s;
  int c = 0;
  for (int i = 0; i < train_count; ++i) s.train.push_back(c++);
  for (int i = 0; i < val_count; ++i) s.val.push_back(c++);
  for (int i = 0; i < test_count; ++i) s.test.push_back(c++);
  return s;
}

inline ClassSplit split_classes_ratio(int num_classes, double train_ratio, double val_ratio,
                                      double test_ratio) {
  double sum = train_ratio + val_ratio + test_ratio;
  if (!(sum > 0.99 && sum < 1.01)) throw config_error("split ratios must sum to 1");
  int t = std::max(1, static_cast<int>(std::lround(train_ratio * num_classes)));
  int s = std::max(1, static_cast<int>(std::lround(test_ratio * num_classes)));
  int v = num_classes - t - s;
  if (v < 0) throw config_error("split ratios leave no room for validation classes");
  return split_classes(num_classes, t, v, s);
}

}  // namespace salnet
