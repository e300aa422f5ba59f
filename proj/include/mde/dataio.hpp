#pragma once

#include <png.h>

#include <algorithm>
#include <array>
#include <cmath>
#include <csetjmp>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "mde/common.hpp"
#include "mde/rng.hpp"
#include "mde/tensor.hpp"

namespace mde {

// Uniformly sized [3,H,W] images in [0,1] with a stable order.
struct ImageDataset {
  std::vector<Tensor<float>> images;
  std::vector<int> labels;  // empty when the source has none
  std::string source;
  int64_t height = 0;
  int64_t width = 0;

  void validate() const {
    MDE_CHECK(!images.empty(), ParameterError, "dataset '", source, "' is empty");
    for (size_t i = 0; i < images.size(); ++i) {
      MDE_CHECK((images[i].shape == Shape{3, height, width}), DimensionError, "dataset '", source,
                "' image ", i, " has shape ", shape_str(images[i].shape));
      for (int64_t k = 0; k < images[i].size(); ++k)
        MDE_CHECK(images[i][k] >= 0.0f && images[i][k] <= 1.0f, ParameterError, "dataset '",
                  source, "' image ", i, " has values outside [0,1]");
    }
    MDE_CHECK(labels.empty() || labels.size() == images.size(), DimensionError, "dataset '",
              source, "' has ", labels.size(), " labels for ", images.size(), " images");
  }
};

// ---- IDX (big-endian) ----

namespace detail {

inline std::string read_file_bytes(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  MDE_CHECK(f.good(), IoError, "cannot open '", path, "' for reading");
  std::string buf((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  MDE_CHECK(!f.bad(), IoError, "read failure on '", path, "'");
  return buf;
}

inline uint32_t idx_u32be(const std::string& buf, size_t pos, const char* what) {
  MDE_CHECK(pos + 4 <= buf.size(), ParseError, "IDX truncated at byte ", pos, " while reading ",
            what);
  uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v = (v << 8) | static_cast<uint8_t>(buf[pos + static_cast<size_t>(i)]);
  return v;
}

}  // namespace detail

inline ImageDataset load_idx(const std::string& images_path, const std::string& labels_path = "") {
  const std::string buf = detail::read_file_bytes(images_path);
  const uint32_t magic = detail::idx_u32be(buf, 0, "magic");
  MDE_CHECK(magic == 0x00000803u, ParseError, "IDX image magic mismatch at byte 0: got ", magic,
            ", expected 2051");
  const uint32_t count = detail::idx_u32be(buf, 4, "image count");
  const uint32_t rows = detail::idx_u32be(buf, 8, "rows");
  const uint32_t cols = detail::idx_u32be(buf, 12, "cols");
  MDE_CHECK(count >= 1 && rows >= 1 && cols >= 1, ParseError, "IDX declares an empty dataset");
  const size_t want = 16 + static_cast<size_t>(count) * rows * cols;
  MDE_CHECK(buf.size() == want, ParseError, "IDX image payload is ", buf.size(), " bytes at byte ",
            std::min(buf.size(), want), ", expected ", want,
            " from the declared dimensions");

  ImageDataset ds;
  ds.source = images_path;
  ds.height = rows;
  ds.width = cols;
  ds.images.reserve(count);
  size_t pos = 16;
  for (uint32_t n = 0; n < count; ++n) {
    auto img = Tensor<float>::zeros({3, rows, cols});
    for (uint32_t i = 0; i < rows * cols; ++i) {
      const float v = static_cast<float>(static_cast<uint8_t>(buf[pos + i])) / 255.0f;
      img[i] = v;
      img[rows * cols + i] = v;
      img[2 * static_cast<int64_t>(rows) * cols + i] = v;
    }
    pos += rows * cols;
    ds.images.push_back(std::move(img));
  }

  if (!labels_path.empty()) {
    const std::string lbuf = detail::read_file_bytes(labels_path);
    const uint32_t lmagic = detail::idx_u32be(lbuf, 0, "label magic");
    MDE_CHECK(lmagic == 0x00000801u, ParseError, "IDX label magic mismatch at byte 0: got ",
              lmagic, ", expected 2049");
    const uint32_t lcount = detail::idx_u32be(lbuf, 4, "label count");
    MDE_CHECK(lcount == count, ParseError, "IDX label count ", lcount, " does not match image count ",
              count);
    MDE_CHECK(lbuf.size() == 8 + static_cast<size_t>(lcount), ParseError, "IDX label payload is ",
              lbuf.size(), " bytes, expected ", 8 + static_cast<size_t>(lcount));
    ds.labels.reserve(lcount);
    for (uint32_t i = 0; i < lcount; ++i)
      ds.labels.push_back(static_cast<uint8_t>(lbuf[8 + static_cast<size_t>(i)]));
  }
  return ds;
}

// ---- resize ----

enum class ResizeMode { Nearest, Bilinear };

// Half-pixel-center sampling; resizing to the same size is the identity in
// both modes, and nearest never invents values.
template <typename S>
Tensor<S> resize(const Tensor<S>& img, int64_t out_h, int64_t out_w,
                 ResizeMode mode = ResizeMode::Bilinear) {
  MDE_CHECK(img.ndim() == 3, DimensionError, "resize expects [C,H,W], got ",
            shape_str(img.shape));
  MDE_CHECK(out_h >= 1 && out_w >= 1, ParameterError, "resize target must be at least 1x1");
  const int64_t C = img.dim(0), H = img.dim(1), W = img.dim(2);
  auto out = Tensor<S>::zeros({C, out_h, out_w});
  const double sy = static_cast<double>(H) / static_cast<double>(out_h);
  const double sx = static_cast<double>(W) / static_cast<double>(out_w);

  for (int64_t c = 0; c < C; ++c)
    for (int64_t y = 0; y < out_h; ++y)
      for (int64_t x = 0; x < out_w; ++x) {
        S value;
        if (mode == ResizeMode::Nearest) {
          const int64_t yi = std::min<int64_t>(
              H - 1, static_cast<int64_t>((static_cast<double>(y) + 0.5) * sy));
          const int64_t xi = std::min<int64_t>(
              W - 1, static_cast<int64_t>((static_cast<double>(x) + 0.5) * sx));
          value = img[(c * H + yi) * W + xi];
        } else {
          const double fy = (static_cast<double>(y) + 0.5) * sy - 0.5;
          const double fx = (static_cast<double>(x) + 0.5) * sx - 0.5;
          const double floor_y = std::floor(fy), floor_x = std::floor(fx);
          const double ty = fy - floor_y, tx = fx - floor_x;
          const int64_t y0 = std::clamp<int64_t>(static_cast<int64_t>(floor_y), 0, H - 1);
          const int64_t y1 = std::clamp<int64_t>(static_cast<int64_t>(floor_y) + 1, 0, H - 1);
          const int64_t x0 = std::clamp<int64_t>(static_cast<int64_t>(floor_x), 0, W - 1);
          const int64_t x1 = std::clamp<int64_t>(static_cast<int64_t>(floor_x) + 1, 0, W - 1);
          const double v00 = static_cast<double>(img[(c * H + y0) * W + x0]);
          const double v01 = static_cast<double>(img[(c * H + y0) * W + x1]);
          const double v10 = static_cast<double>(img[(c * H + y1) * W + x0]);
          const double v11 = static_cast<double>(img[(c * H + y1) * W + x1]);
          value = static_cast<S>((1 - ty) * ((1 - tx) * v00 + tx * v01) +
                                 ty * ((1 - tx) * v10 + tx * v11));
        }
        out[(c * out_h + y) * out_w + x] = value;
      }
  return out;
}

// ---- synthetic corpora ----

enum class SyntheticKind { Stripes, Blobs, Gradients };

inline SyntheticKind parse_synthetic_kind(const std::string& s) {
  if (s == "stripes") return SyntheticKind::Stripes;
  if (s == "blobs") return SyntheticKind::Blobs;
  if (s == "gradients") return SyntheticKind::Gradients;
  MDE_THROW(ParameterError, "unknown synthetic dataset kind '", s,
            "' (expected stripes, blobs, or gradients)");
}

namespace detail {

inline std::array<float, 3> random_color(Rng& rng) {
  return {static_cast<float>(rng.uniform()), static_cast<float>(rng.uniform()),
          static_cast<float>(rng.uniform())};
}

inline Tensor<float> synth_stripes(Rng& rng, int64_t size) {
  const auto c1 = random_color(rng), c2 = random_color(rng);
  const int64_t period = rng.uniform_int(2, 8);
  const bool vertical = rng.uniform_int(0, 1) == 1;
  const int64_t phase = rng.uniform_int(0, period - 1);
  auto img = Tensor<float>::zeros({3, size, size});
  for (int64_t y = 0; y < size; ++y)
    for (int64_t x = 0; x < size; ++x) {
      const int64_t k = ((vertical ? x : y) + phase) / period;
      const auto& c = (k % 2 == 0) ? c1 : c2;
      for (int64_t ch = 0; ch < 3; ++ch) img[(ch * size + y) * size + x] = c[static_cast<size_t>(ch)];
    }
  return img;
}

inline Tensor<float> synth_blob(Rng& rng, int64_t size) {
  const auto bg = random_color(rng), fg = random_color(rng);
  const double r = (0.15 + 0.2 * rng.uniform()) * static_cast<double>(size);
  const double cx = r + rng.uniform() * (static_cast<double>(size) - 2 * r);
  const double cy = r + rng.uniform() * (static_cast<double>(size) - 2 * r);
  auto img = Tensor<float>::zeros({3, size, size});
  for (int64_t y = 0; y < size; ++y)
    for (int64_t x = 0; x < size; ++x) {
      const double dx = static_cast<double>(x) - cx, dy = static_cast<double>(y) - cy;
      const bool inside = dx * dx + dy * dy <= r * r;
      const auto& c = inside ? fg : bg;
      for (int64_t ch = 0; ch < 3; ++ch) img[(ch * size + y) * size + x] = c[static_cast<size_t>(ch)];
    }
  return img;
}

inline Tensor<float> synth_gradient(Rng& rng, int64_t size) {
  const auto c1 = random_color(rng), c2 = random_color(rng);
  const int dir = rng.uniform_int(0, 2);  // 0 horizontal, 1 vertical, 2 diagonal
  auto img = Tensor<float>::zeros({3, size, size});
  const double denom = static_cast<double>(dir == 2 ? 2 * (size - 1) : size - 1);
  for (int64_t y = 0; y < size; ++y)
    for (int64_t x = 0; x < size; ++x) {
      const double along = dir == 0 ? static_cast<double>(x)
                          : dir == 1 ? static_cast<double>(y)
                                     : static_cast<double>(x + y);
      const double t = size == 1 ? 0.0 : along / denom;
      for (int64_t ch = 0; ch < 3; ++ch) {
        const auto i = static_cast<size_t>(ch);
        img[(ch * size + y) * size + x] = static_cast<float>((1 - t) * c1[i] + t * c2[i]);
      }
    }
  return img;
}

}  // namespace detail

inline ImageDataset synthetic_dataset(SyntheticKind kind, int64_t n, int64_t size, uint64_t seed) {
  MDE_CHECK(n >= 1, ParameterError, "synthetic_dataset: n must be >= 1");
  MDE_CHECK(size >= 2, ParameterError, "synthetic_dataset: size must be >= 2");
  Rng rng(seed);
  ImageDataset ds;
  ds.height = ds.width = size;
  ds.images.reserve(static_cast<size_t>(n));
  for (int64_t i = 0; i < n; ++i) {
    switch (kind) {
      case SyntheticKind::Stripes: ds.images.push_back(detail::synth_stripes(rng, size)); break;
      case SyntheticKind::Blobs: ds.images.push_back(detail::synth_blob(rng, size)); break;
      case SyntheticKind::Gradients: ds.images.push_back(detail::synth_gradient(rng, size)); break;
    }
  }
  switch (kind) {
    case SyntheticKind::Stripes: ds.source = "synthetic:stripes"; break;
    case SyntheticKind::Blobs: ds.source = "synthetic:blobs"; break;
    case SyntheticKind::Gradients: ds.source = "synthetic:gradients"; break;
  }
  ds.source += ":" + std::to_string(n) + "x" + std::to_string(size) + "@" + std::to_string(seed);
  return ds;
}

// ---- mean-fill oracle ----

// Per-channel mean over every pixel of the dataset: the fill value of the
// quality-floor baseline.
inline std::array<float, 3> channel_means(const std::vector<Tensor<float>>& images) {
  MDE_CHECK(!images.empty(), ParameterError, "channel_means: empty dataset");
  std::array<double, 3> acc{0.0, 0.0, 0.0};
  int64_t per_channel = 0;
  for (const auto& img : images) {
    MDE_CHECK(img.ndim() == 3 && img.dim(0) == 3, DimensionError,
              "channel_means expects [3,H,W] images");
    const int64_t plane = img.dim(1) * img.dim(2);
    for (int64_t c = 0; c < 3; ++c)
      for (int64_t i = 0; i < plane; ++i) acc[static_cast<size_t>(c)] += img[c * plane + i];
    per_channel += plane;
  }
  return {static_cast<float>(acc[0] / static_cast<double>(per_channel)),
          static_cast<float>(acc[1] / static_cast<double>(per_channel)),
          static_cast<float>(acc[2] / static_cast<double>(per_channel))};
}

// Keeps visible pixels and writes the dataset's channel mean into dropped
// ones. `mask` follows the masking convention: 1 visible, 0 dropped.
inline Tensor<float> mean_fill(const Tensor<float>& image, const Tensor<float>& mask,
                               const std::array<float, 3>& means) {
  MDE_CHECK(image.ndim() == 3 && image.dim(0) == 3, DimensionError,
            "mean_fill expects [3,H,W] images");
  MDE_CHECK(image.same_shape(mask), DimensionError, "mean_fill: mask shape ",
            shape_str(mask.shape), " does not match image ", shape_str(image.shape));
  Tensor<float> out = image;
  const int64_t plane = image.dim(1) * image.dim(2);
  for (int64_t c = 0; c < 3; ++c)
    for (int64_t i = 0; i < plane; ++i)
      if (mask[c * plane + i] == 0.0f) out[c * plane + i] = means[static_cast<size_t>(c)];
  return out;
}

// ---- PNG ----

namespace detail {

struct PngWriteCtx {
  std::string out;
};

inline void png_write_cb(png_structp png, png_bytep data, png_size_t len) {
  auto* ctx = static_cast<PngWriteCtx*>(png_get_io_ptr(png));
  ctx->out.append(reinterpret_cast<const char*>(data), len);
}

inline void png_flush_cb(png_structp) {}

struct PngReadCtx {
  const std::string* buf;
  size_t pos;
};

inline void png_read_cb(png_structp png, png_bytep data, png_size_t len) {
  auto* ctx = static_cast<PngReadCtx*>(png_get_io_ptr(png));
  if (ctx->pos + len > ctx->buf->size()) png_error(png, "unexpected end of PNG stream");
  std::memcpy(data, ctx->buf->data() + ctx->pos, len);
  ctx->pos += len;
}

inline uint8_t quantize_byte(float v) {
  const float clamped = std::clamp(v, 0.0f, 1.0f);
  return static_cast<uint8_t>(std::lround(clamped * 255.0f));
}

}  // namespace detail

inline void write_png(const Tensor<float>& image, const std::string& path) {
  MDE_CHECK(image.ndim() == 3 && image.dim(0) == 3, DimensionError,
            "write_png expects [3,H,W], got ", shape_str(image.shape));
  const int64_t H = image.dim(1), W = image.dim(2);

  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  MDE_CHECK(png != nullptr, IoError, "libpng writer initialization failed");
  png_infop info = png_create_info_struct(png);
  if (info == nullptr) {
    png_destroy_write_struct(&png, nullptr);
    MDE_THROW(IoError, "libpng info initialization failed");
  }

  detail::PngWriteCtx ctx;
  std::vector<uint8_t> row(static_cast<size_t>(W) * 3);
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    MDE_THROW(IoError, "libpng failed while encoding '", path, "'");
  }
  png_set_write_fn(png, &ctx, detail::png_write_cb, detail::png_flush_cb);
  png_set_IHDR(png, info, static_cast<png_uint_32>(W), static_cast<png_uint_32>(H), 8,
               PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
               PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  for (int64_t y = 0; y < H; ++y) {
    for (int64_t x = 0; x < W; ++x)
      for (int64_t c = 0; c < 3; ++c)
        row[static_cast<size_t>(x * 3 + c)] = detail::quantize_byte(image[(c * H + y) * W + x]);
    png_write_row(png, row.data());
  }
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);

  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  MDE_CHECK(f.good(), IoError, "cannot open '", path, "' for writing");
  f.write(ctx.out.data(), static_cast<std::streamsize>(ctx.out.size()));
  f.flush();
  MDE_CHECK(f.good(), IoError, "short write to '", path, "'");
}

inline Tensor<float> read_png(const std::string& path) {
  const std::string buf = detail::read_file_bytes(path);
  MDE_CHECK(buf.size() >= 8 && png_sig_cmp(reinterpret_cast<png_const_bytep>(buf.data()), 0, 8) == 0,
            ParseError, "'", path, "' is not a PNG file");

  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  MDE_CHECK(png != nullptr, IoError, "libpng reader initialization failed");
  png_infop info = png_create_info_struct(png);
  if (info == nullptr) {
    png_destroy_read_struct(&png, nullptr, nullptr);
    MDE_THROW(IoError, "libpng info initialization failed");
  }

  detail::PngReadCtx ctx{&buf, 0};
  std::vector<std::vector<uint8_t>> rows;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    MDE_THROW(ParseError, "malformed PNG '", path, "'");
  }
  png_set_read_fn(png, &ctx, detail::png_read_cb);
  png_read_info(png, info);

  png_set_expand(png);
  png_set_strip_16(png);
  png_set_strip_alpha(png);
  png_set_gray_to_rgb(png);
  png_read_update_info(png, info);

  const png_uint_32 W = png_get_image_width(png, info);
  const png_uint_32 H = png_get_image_height(png, info);
  const png_uint_32 stride = static_cast<png_uint_32>(png_get_rowbytes(png, info));
  if (stride != W * 3) {
    png_destroy_read_struct(&png, &info, nullptr);
    MDE_THROW(ParseError, "PNG '", path, "' did not decode to 8-bit RGB");
  }
  rows.assign(H, std::vector<uint8_t>(stride));
  for (png_uint_32 y = 0; y < H; ++y) png_read_row(png, rows[y].data(), nullptr);
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);

  auto out = Tensor<float>::zeros({3, static_cast<int64_t>(H), static_cast<int64_t>(W)});
  for (png_uint_32 y = 0; y < H; ++y)
    for (png_uint_32 x = 0; x < W; ++x)
      for (int64_t c = 0; c < 3; ++c)
        out[(c * H + y) * W + x] =
            static_cast<float>(rows[y][x * 3 + static_cast<png_uint_32>(c)]) / 255.0f;
  return out;
}

// Tiles same-shaped images row-major into a single [3, rows*H, cols*W] image;
// unused cells stay black.
inline Tensor<float> image_grid(const std::vector<Tensor<float>>& images, int64_t cols) {
  MDE_CHECK(!images.empty(), ParameterError, "image_grid: no images");
  MDE_CHECK(cols >= 1, ParameterError, "image_grid: cols must be >= 1");
  const Shape& sh = images[0].shape;
  MDE_CHECK(sh.size() == 3 && sh[0] == 3, DimensionError, "image_grid expects [3,H,W] images");
  for (const auto& img : images)
    MDE_CHECK(img.shape == sh, DimensionError, "image_grid: images must share one shape");
  const int64_t H = sh[1], W = sh[2];
  const int64_t n = static_cast<int64_t>(images.size());
  const int64_t rows = (n + cols - 1) / cols;
  auto canvas = Tensor<float>::zeros({3, rows * H, cols * W});
  for (int64_t i = 0; i < n; ++i) {
    const int64_t r = i / cols, cidx = i % cols;
    for (int64_t c = 0; c < 3; ++c)
      for (int64_t y = 0; y < H; ++y)
        for (int64_t x = 0; x < W; ++x)
          canvas[(c * rows * H + (r * H + y)) * (cols * W) + (cidx * W + x)] =
              images[static_cast<size_t>(i)][(c * H + y) * W + x];
  }
  return canvas;
}

inline void write_png_grid(const std::vector<Tensor<float>>& images, int64_t cols,
                           const std::string& path) {
  write_png(image_grid(images, cols), path);
}

// Plain-text manifest: one PNG path per line, # comments allowed. Relative
// paths resolve against the manifest's directory.
inline ImageDataset load_manifest(const std::string& manifest_path) {
  const std::string text = detail::read_file_bytes(manifest_path);
  std::string dir;
  const auto slash = manifest_path.find_last_of('/');
  if (slash != std::string::npos) dir = manifest_path.substr(0, slash + 1);

  ImageDataset ds;
  ds.source = manifest_path;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    const auto b = line.find_first_not_of(" \t\r");
    if (b == std::string::npos) continue;
    const auto e = line.find_last_not_of(" \t\r");
    std::string path = line.substr(b, e - b + 1);
    if (!path.empty() && path[0] != '/') path = dir + path;
    Tensor<float> img = read_png(path);
    if (ds.images.empty()) {
      ds.height = img.dim(1);
      ds.width = img.dim(2);
    }
    MDE_CHECK((img.shape == Shape{3, ds.height, ds.width}), DimensionError, "manifest image '",
              path, "' has shape ", shape_str(img.shape), ", expected [3,", ds.height, ",",
              ds.width, "]");
    ds.images.push_back(std::move(img));
  }
  MDE_CHECK(!ds.images.empty(), ParameterError, "manifest '", manifest_path,
            "' lists no images");
  return ds;
}

}  // namespace mde
