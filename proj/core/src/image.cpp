#include "dsr/image.h"

#include <zlib.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>

namespace dsr::img {

namespace {

constexpr double kCubicA = -0.5;

double cubic_keys(double t) {
  t = std::fabs(t);
  if (t <= 1.0) return ((kCubicA + 2.0) * t - (kCubicA + 3.0)) * t * t + 1.0;
  if (t < 2.0) return (((t - 5.0) * t + 8.0) * t - 4.0) * kCubicA;
  return 0.0;
}

struct Taps {
  std::vector<int> idx;     // ntaps per output index, clamped
  std::vector<double> wgt;  // matching weights
  int ntaps;
};

Taps make_taps(int in, int out, int ntaps) {
  Taps t;
  t.ntaps = ntaps;
  t.idx.resize(static_cast<size_t>(out) * ntaps);
  t.wgt.resize(static_cast<size_t>(out) * ntaps);
  const double scale = static_cast<double>(in) / out;
  for (int o = 0; o < out; ++o) {
    const double src = (o + 0.5) * scale - 0.5;
    const double fl = std::floor(src);
    const int base = static_cast<int>(fl) - (ntaps / 2 - 1);
    for (int j = 0; j < ntaps; ++j) {
      const int i = base + j;
      double w;
      if (ntaps == 4) {
        w = cubic_keys(src - i);
      } else {  // bilinear
        const double d = std::fabs(src - i);
        w = d < 1.0 ? 1.0 - d : 0.0;
      }
      t.idx[static_cast<size_t>(o) * ntaps + j] = std::clamp(i, 0, in - 1);
      t.wgt[static_cast<size_t>(o) * ntaps + j] = w;
    }
    if (ntaps == 4) {
      // pin the partition of unity so all-ones maps resample to exact ones
      double* w = &t.wgt[static_cast<size_t>(o) * ntaps];
      w[3] = 1.0 - (w[0] + w[1] + w[2]);
    }
  }
  return t;
}

// Resamples the W axis of [C,H,W] with precomputed taps.
Tensor resample_w(const Tensor& x, const Taps& t, int ow) {
  const int C = x.dim(0), H = x.dim(1), W = x.dim(2);
  Tensor out({C, H, ow});
  for (int c = 0; c < C; ++c)
    for (int h = 0; h < H; ++h) {
      const double* row = x.data() + (static_cast<int64_t>(c) * H + h) * W;
      double* orow = out.data() + (static_cast<int64_t>(c) * H + h) * ow;
      for (int o = 0; o < ow; ++o) {
        double acc = 0.0;
        for (int j = 0; j < t.ntaps; ++j)
          acc += t.wgt[static_cast<size_t>(o) * t.ntaps + j] *
                 row[t.idx[static_cast<size_t>(o) * t.ntaps + j]];
        orow[o] = acc;
      }
    }
  return out;
}

Tensor resample_h(const Tensor& x, const Taps& t, int oh) {
  const int C = x.dim(0), H = x.dim(1), W = x.dim(2);
  Tensor out({C, oh, W});
  for (int c = 0; c < C; ++c)
    for (int o = 0; o < oh; ++o) {
      double* orow = out.data() + (static_cast<int64_t>(c) * oh + o) * W;
      for (int j = 0; j < t.ntaps; ++j) {
        const double w = t.wgt[static_cast<size_t>(o) * t.ntaps + j];
        if (w == 0.0) continue;
        const double* row =
            x.data() + (static_cast<int64_t>(c) * H + t.idx[static_cast<size_t>(o) * t.ntaps + j]) * W;
        for (int i = 0; i < W; ++i) orow[i] += w * row[i];
      }
    }
  return out;
}

Tensor resample_w_adjoint(const Tensor& g, const Taps& t, int iw) {
  const int C = g.dim(0), H = g.dim(1), OW = g.dim(2);
  Tensor out({C, H, iw});
  for (int c = 0; c < C; ++c)
    for (int h = 0; h < H; ++h) {
      const double* grow = g.data() + (static_cast<int64_t>(c) * H + h) * OW;
      double* orow = out.data() + (static_cast<int64_t>(c) * H + h) * iw;
      for (int o = 0; o < OW; ++o)
        for (int j = 0; j < t.ntaps; ++j)
          orow[t.idx[static_cast<size_t>(o) * t.ntaps + j]] +=
              t.wgt[static_cast<size_t>(o) * t.ntaps + j] * grow[o];
    }
  return out;
}

Tensor resample_h_adjoint(const Tensor& g, const Taps& t, int ih) {
  const int C = g.dim(0), OH = g.dim(1), W = g.dim(2);
  Tensor out({C, ih, W});
  for (int c = 0; c < C; ++c)
    for (int o = 0; o < OH; ++o) {
      const double* grow = g.data() + (static_cast<int64_t>(c) * OH + o) * W;
      for (int j = 0; j < t.ntaps; ++j) {
        const double w = t.wgt[static_cast<size_t>(o) * t.ntaps + j];
        if (w == 0.0) continue;
        double* orow =
            out.data() +
            (static_cast<int64_t>(c) * ih + t.idx[static_cast<size_t>(o) * t.ntaps + j]) * W;
        for (int i = 0; i < W; ++i) orow[i] += w * grow[i];
      }
    }
  return out;
}

Tensor resize_impl(const Tensor& x, int oh, int ow, int ntaps) {
  if (x.rank() != 3) throw ShapeError("resize: expected CHW, got " + x.shape_str());
  if (oh <= 0 || ow <= 0) throw ShapeError("resize: non-positive target dims");
  Tensor tmp = resample_w(x, make_taps(x.dim(2), ow, ntaps), ow);
  return resample_h(tmp, make_taps(x.dim(1), oh, ntaps), oh);
}

Tensor resize_adjoint_impl(const Tensor& g, int ih, int iw, int ntaps) {
  // forward is W then H; adjoint reverses
  Tensor tmp = resample_h_adjoint(g, make_taps(ih, g.dim(1), ntaps), ih);
  return resample_w_adjoint(tmp, make_taps(iw, g.dim(2), ntaps), iw);
}

}  // namespace

Tensor bicubic_resize(const Tensor& x, int oh, int ow, bool clamp01) {
  Tensor out = resize_impl(x, oh, ow, 4);
  if (clamp01)
    for (int64_t i = 0; i < out.numel(); ++i) out[i] = std::clamp(out[i], 0.0, 1.0);
  return out;
}

Tensor bicubic_resize_adjoint(const Tensor& g, int ih, int iw) {
  return resize_adjoint_impl(g, ih, iw, 4);
}

Tensor bilinear_resize(const Tensor& x, int oh, int ow) { return resize_impl(x, oh, ow, 2); }

Tensor bilinear_resize_adjoint(const Tensor& g, int ih, int iw) {
  return resize_adjoint_impl(g, ih, iw, 2);
}

Tensor bicubic_resample(const Tensor& img, double scale, bool clamp01) {
  if (img.rank() != 3) throw ShapeError("bicubic_resample: expected CHW");
  if (scale <= 0.0) throw InvalidScale("scale must be positive");
  const double oh = img.dim(1) * scale;
  const double ow = img.dim(2) * scale;
  if (std::fabs(oh - std::round(oh)) > 1e-9 || std::fabs(ow - std::round(ow)) > 1e-9)
    throw InvalidScale("target dims " + std::to_string(oh) + "x" + std::to_string(ow) +
                       " not integral");
  return bicubic_resize(img, static_cast<int>(std::round(oh)),
                        static_cast<int>(std::round(ow)), clamp01);
}

Tensor luminance(const Tensor& rgb) {
  if (rgb.rank() != 3 || rgb.dim(0) != 3)
    throw ShapeError("luminance: expected [3,H,W], got " + rgb.shape_str());
  const int H = rgb.dim(1), W = rgb.dim(2);
  Tensor y({1, H, W});
  for (int h = 0; h < H; ++h)
    for (int w = 0; w < W; ++w)
      y.at(0, h, w) = 0.299 * rgb.at(0, h, w) + 0.587 * rgb.at(1, h, w) + 0.114 * rgb.at(2, h, w);
  return y;
}

Tensor quantize_u8_grid(const Tensor& img) {
  Tensor out = img;
  for (int64_t i = 0; i < out.numel(); ++i) {
    double v = std::clamp(out[i], 0.0, 1.0);
    out[i] = std::round(v * 255.0) / 255.0;
  }
  return out;
}

// ---- PNG ----

namespace {

void put_u32_be(std::vector<uint8_t>& v, uint32_t x) {
  v.push_back(static_cast<uint8_t>(x >> 24));
  v.push_back(static_cast<uint8_t>(x >> 16));
  v.push_back(static_cast<uint8_t>(x >> 8));
  v.push_back(static_cast<uint8_t>(x));
}

uint32_t read_u32_be(const uint8_t* p) {
  return (static_cast<uint32_t>(p[0]) << 24) | (static_cast<uint32_t>(p[1]) << 16) |
         (static_cast<uint32_t>(p[2]) << 8) | p[3];
}

void append_chunk(std::vector<uint8_t>& out, const char* tag,
                  const std::vector<uint8_t>& payload) {
  put_u32_be(out, static_cast<uint32_t>(payload.size()));
  size_t start = out.size();
  out.insert(out.end(), tag, tag + 4);
  out.insert(out.end(), payload.begin(), payload.end());
  uint32_t crc = crc32(0L, out.data() + start, static_cast<uInt>(out.size() - start));
  put_u32_be(out, crc);
}

}  // namespace

void write_png_rgb8(const std::string& path, const Tensor& img) {
  if (img.rank() != 3 || img.dim(0) != 3)
    throw ShapeError("write_png_rgb8: expected [3,H,W], got " + img.shape_str());
  const int H = img.dim(1), W = img.dim(2);

  // filter byte 0 + interleaved RGB per scanline
  std::vector<uint8_t> raw(static_cast<size_t>(H) * (1 + 3 * W));
  size_t pos = 0;
  for (int h = 0; h < H; ++h) {
    raw[pos++] = 0;
    for (int w = 0; w < W; ++w)
      for (int c = 0; c < 3; ++c) {
        double v = std::clamp(img.at(c, h, w), 0.0, 1.0);
        raw[pos++] = static_cast<uint8_t>(std::lround(v * 255.0));
      }
  }

  uLongf comp_cap = compressBound(static_cast<uLong>(raw.size()));
  std::vector<uint8_t> comp(comp_cap);
  if (compress2(comp.data(), &comp_cap, raw.data(), static_cast<uLong>(raw.size()), 6) != Z_OK)
    throw Error("png: zlib compression failed");
  comp.resize(comp_cap);

  std::vector<uint8_t> out;
  const uint8_t sig[8] = {137, 80, 78, 71, 13, 10, 26, 10};
  out.insert(out.end(), sig, sig + 8);
  std::vector<uint8_t> ihdr;
  put_u32_be(ihdr, static_cast<uint32_t>(W));
  put_u32_be(ihdr, static_cast<uint32_t>(H));
  ihdr.push_back(8);  // bit depth
  ihdr.push_back(2);  // truecolor
  ihdr.push_back(0);
  ihdr.push_back(0);
  ihdr.push_back(0);
  append_chunk(out, "IHDR", ihdr);
  append_chunk(out, "IDAT", comp);
  append_chunk(out, "IEND", {});

  std::ofstream f(path, std::ios::binary);
  if (!f) throw Error("png: cannot open " + path + " for writing");
  f.write(reinterpret_cast<const char*>(out.data()), static_cast<std::streamsize>(out.size()));
}

Tensor read_png_rgb8(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw Error("png: cannot open " + path);
  std::vector<uint8_t> buf((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  const uint8_t sig[8] = {137, 80, 78, 71, 13, 10, 26, 10};
  if (buf.size() < 8 || std::memcmp(buf.data(), sig, 8) != 0)
    throw Error("png: bad signature in " + path);

  int W = 0, H = 0;
  std::vector<uint8_t> idat;
  size_t pos = 8;
  while (pos + 8 <= buf.size()) {
    uint32_t len = read_u32_be(&buf[pos]);
    if (pos + 12 + len > buf.size()) throw Error("png: truncated chunk in " + path);
    const char* tag = reinterpret_cast<const char*>(&buf[pos + 4]);
    const uint8_t* data = &buf[pos + 8];
    if (std::memcmp(tag, "IHDR", 4) == 0) {
      W = static_cast<int>(read_u32_be(data));
      H = static_cast<int>(read_u32_be(data + 4));
      if (data[8] != 8 || data[9] != 2 || data[12] != 0)
        throw Error("png: unsupported format (need 8-bit RGB non-interlaced)");
    } else if (std::memcmp(tag, "IDAT", 4) == 0) {
      idat.insert(idat.end(), data, data + len);
    } else if (std::memcmp(tag, "IEND", 4) == 0) {
      break;
    }
    pos += 12 + len;
  }
  if (W <= 0 || H <= 0 || idat.empty()) throw Error("png: missing IHDR/IDAT in " + path);

  const size_t stride = 1 + 3 * static_cast<size_t>(W);
  std::vector<uint8_t> raw(static_cast<size_t>(H) * stride);
  uLongf raw_len = static_cast<uLongf>(raw.size());
  if (uncompress(raw.data(), &raw_len, idat.data(), static_cast<uLong>(idat.size())) != Z_OK ||
      raw_len != raw.size())
    throw Error("png: inflate failed for " + path);

  // de-filter (we write filter 0, but handle the standard set)
  const int bpp = 3;
  for (int h = 0; h < H; ++h) {
    uint8_t* row = &raw[static_cast<size_t>(h) * stride];
    const uint8_t ft = row[0];
    uint8_t* cur = row + 1;
    const uint8_t* prev = h > 0 ? &raw[static_cast<size_t>(h - 1) * stride] + 1 : nullptr;
    for (int i = 0; i < 3 * W; ++i) {
      const int a = i >= bpp ? cur[i - bpp] : 0;
      const int b = prev ? prev[i] : 0;
      const int c = (prev && i >= bpp) ? prev[i - bpp] : 0;
      int add = 0;
      switch (ft) {
        case 0: add = 0; break;
        case 1: add = a; break;
        case 2: add = b; break;
        case 3: add = (a + b) / 2; break;
        case 4: {
          const int p = a + b - c;
          const int pa = std::abs(p - a), pb = std::abs(p - b), pc = std::abs(p - c);
          add = (pa <= pb && pa <= pc) ? a : (pb <= pc ? b : c);
          break;
        }
        default: throw Error("png: unknown filter type");
      }
      cur[i] = static_cast<uint8_t>((cur[i] + add) & 0xff);
    }
  }

  Tensor img({3, H, W});
  for (int h = 0; h < H; ++h) {
    const uint8_t* row = &raw[static_cast<size_t>(h) * stride] + 1;
    for (int w = 0; w < W; ++w)
      for (int c = 0; c < 3; ++c) img.at(c, h, w) = row[3 * w + c] / 255.0;
  }
  return img;
}

void write_f32(const std::string& path, const Tensor& t) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw Error("f32: cannot open " + path + " for writing");
  std::vector<float> data(static_cast<size_t>(t.numel()));
  for (int64_t i = 0; i < t.numel(); ++i) data[static_cast<size_t>(i)] = static_cast<float>(t[i]);
  f.write(reinterpret_cast<const char*>(data.data()),
          static_cast<std::streamsize>(data.size() * sizeof(float)));
}

Tensor read_f32(const std::string& path, const std::vector<int>& shape) {
  Tensor t(shape);
  std::ifstream f(path, std::ios::binary);
  if (!f) throw Error("f32: cannot open " + path);
  std::vector<float> data(static_cast<size_t>(t.numel()));
  f.read(reinterpret_cast<char*>(data.data()),
         static_cast<std::streamsize>(data.size() * sizeof(float)));
  if (f.gcount() != static_cast<std::streamsize>(data.size() * sizeof(float)))
    throw Error("f32: short read from " + path);
  for (int64_t i = 0; i < t.numel(); ++i) t[i] = data[static_cast<size_t>(i)];
  return t;
}

uint32_t file_crc32(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw Error("crc32: cannot open " + path);
  uint32_t crc = crc32(0L, Z_NULL, 0);
  char buf[65536];
  while (f) {
    f.read(buf, sizeof(buf));
    std::streamsize got = f.gcount();
    if (got > 0) crc = crc32(crc, reinterpret_cast<const Bytef*>(buf), static_cast<uInt>(got));
  }
  return crc;
}

}  // namespace dsr::img
