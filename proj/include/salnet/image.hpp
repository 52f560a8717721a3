#pragma once

#include <algorithm>
#include <cmath>
#include <fstream>
#include <string>
#include <vector>

#include "salnet/core.hpp"

namespace salnet {

// Channel-major image, values in [0,1].
struct Image {
  int channels = 0;
  int height = 0;
  int width = 0;
  std::vector<double> data;

  Image() = default;
  Image(int c, int h, int w) : channels(c), height(h), width(w) {
    data.assign(static_cast<std::size_t>(c) * h * w, 0.0);
  }

  double& at(int c, int y, int x) {
    return data[(static_cast<std::size_t>(c) * height + y) * width + x];
  }
  double at(int c, int y, int x) const {
    return data[(static_cast<std::size_t>(c) * height + y) * width + x];
  }
  std::size_t numel() const { return data.size(); }
};

namespace detail {

inline void skip_pnm_space(std::istream& in) {
  for (;;) {
    int c = in.peek();
    if (c == '#') {
      std::string line;
      std::getline(in, line);
    } else if (c == ' ' || c == '\t' || c == '\r' || c == '\n') {
      in.get();
    } else {
      return;
    }
  }
}

inline int read_pnm_int(std::istream& in, const std::string& path) {
  skip_pnm_space(in);
  int v = -1;
  in >> v;
  if (!in || v < 0) throw data_error("malformed PNM header: " + path);
  return v;
}

}  // namespace detail

// Binary PPM (P6), maxval <= 255.
inline Image read_ppm(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw data_error("unreadable file: " + path);
  std::string magic(2, '\0');
  in.read(magic.data(), 2);
  if (magic != "P6") throw data_error("not a binary PPM (P6): " + path);
  int w = detail::read_pnm_int(in, path);
  int h = detail::read_pnm_int(in, path);
  int maxval = detail::read_pnm_int(in, path);
  if (maxval <= 0 || maxval > 255) throw data_error("unsupported PPM maxval: " + path);
  in.get();  // single whitespace before raster
  std::vector<unsigned char> raw(static_cast<std::size_t>(w) * h * 3);
  in.read(reinterpret_cast<char*>(raw.data()), static_cast<long>(raw.size()));
  if (!in) throw data_error("truncated PPM raster: " + path);
  Image img(3, h, w);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < 3; ++c)
        img.at(c, y, x) =
            static_cast<double>(raw[(static_cast<std::size_t>(y) * w + x) * 3 + c]) / maxval;
  return img;
}

inline void write_ppm(const Image& img, const std::string& path) {
  if (img.channels != 3) throw data_error("write_ppm expects 3 channels: " + path);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw data_error("cannot write: " + path);
  out << "P6\n" << img.width << " " << img.height << "\n255\n";
  std::vector<unsigned char> raw(static_cast<std::size_t>(img.width) * img.height * 3);
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x)
      for (int c = 0; c < 3; ++c) {
        double v = std::clamp(img.at(c, y, x), 0.0, 1.0);
        raw[(static_cast<std::size_t>(y) * img.width + x) * 3 + c] =
            static_cast<unsigned char>(std::lround(v * 255.0));
      }
  out.write(reinterpret_cast<const char*>(raw.data()), static_cast<long>(raw.size()));
}

// Binary PGM (P5), maxval <= 255; value/maxval is the stored relevance.
inline Image read_pgm(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw data_error("unreadable file: " + path);
  std::string magic(2, '\0');
  in.read(magic.data(), 2);
  if (magic != "P5") throw data_error("not a binary PGM (P5): " + path);
  int w = detail::read_pnm_int(in, path);
  int h = detail::read_pnm_int(in, path);
  int maxval = detail::read_pnm_int(in, path);
  if (maxval <= 0 || maxval > 255) throw data_error("unsupported PGM maxval: " + path);
  in.get();
  std::vector<unsigned char> raw(static_cast<std::size_t>(w) * h);
  in.read(reinterpret_cast<char*>(raw.data()), static_cast<long>(raw.size()));
  if (!in) throw data_error("truncated PGM raster: " + path);
  Image img(1, h, w);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      img.at(0, y, x) =
          static_cast<double>(raw[static_cast<std::size_t>(y) * w + x]) / maxval;
  return img;
}

inline void write_pgm(const Image& img, const std::string& path) {
  if (img.channels != 1) throw data_error("write_pgm expects 1 channel: " + path);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw data_error("cannot write: " + path);
  out << "P5\n" << img.width << " " << img.height << "\n255\n";
  std::vector<unsigned char> raw(static_cast<std::size_t>(img.width) * img.height);
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x) {
      double v = std::clamp(img.at(0, y, x), 0.0, 1.0);
      raw[static_cast<std::size_t>(y) * img.width + x] =
          static_cast<unsigned char>(std::lround(v * 255.0));
    }
  out.write(reinterpret_cast<const char*>(raw.data()), static_cast<long>(raw.size()));
}

// Center-aligned bilinear resampling; a no-op when sizes already match.
inline Image resize_bilinear(const Image& src, int out_h, int out_w) {
  if (src.height == out_h && src.width == out_w) return src;
  Image dst(src.channels, out_h, out_w);
  double sy = static_cast<double>(src.height) / out_h;
  double sx = static_cast<double>(src.width) / out_w;
  for (int c = 0; c < src.channels; ++c) {
    for (int y = 0; y < out_h; ++y) {
      double fy = (y + 0.5) * sy - 0.5;
      int y0 = static_cast<int>(std::floor(fy));
      double wy = fy - y0;
      int y0c = std::clamp(y0, 0, src.height - 1);
      int y1c = std::clamp(y0 + 1, 0, src.height - 1);
      for (int x = 0; x < out_w; ++x) {
        double fx = (x + 0.5) * sx - 0.5;
        int x0 = static_cast<int>(std::floor(fx));
        double wx = fx - x0;
        int x0c = std::clamp(x0, 0, src.width - 1);
        int x1c = std::clamp(x0 + 1, 0, src.width - 1);
        double top = src.at(c, y0c, x0c) * (1.0 - wx) + src.at(c, y0c, x1c) * wx;
        double bot = src.at(c, y1c, x0c) * (1.0 - wx) + src.at(c, y1c, x1c) * wx;
        dst.at(c, y, x) = std::clamp(top * (1.0 - wy) + bot * wy, 0.0, 1.0);
      }
    }
  }
  return dst;
}

}  // namespace salnet
