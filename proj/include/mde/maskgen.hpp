#pragma once

#include <array>
#include <cmath>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "mde/common.hpp"
#include "mde/rng.hpp"
#include "mde/tensor.hpp"

namespace mde {

// Completion tasks. Col carries the number of fully visible channels (1 or 2).
enum class Task { I, RI, Col, RE, REC };

inline std::string task_name(Task t, int col_k = 1) {
  switch (t) {
    case Task::I:
      return "i";
    case Task::RI:
      return "ri";
    case Task::Col:
      return "col" + std::to_string(col_k);
    case Task::RE:
      return "re";
    case Task::REC:
      return "rec";
  }
  MDE_THROW(ParameterError, "unknown task");
}

// Parses "i", "ri", "col1", "col2", "re", "rec". Returns task and col_k.
inline std::pair<Task, int> parse_task(const std::string& s) {
  if (s == "i") return {Task::I, 0};
  if (s == "ri") return {Task::RI, 0};
  if (s == "col1") return {Task::Col, 1};
  if (s == "col2") return {Task::Col, 2};
  if (s == "re") return {Task::RE, 0};
  if (s == "rec") return {Task::REC, 0};
  MDE_THROW(ParameterError, "unknown task '", s, "' (expected i|ri|col1|col2|re|rec)");
}

// Axis-aligned rectangle in pixel coordinates, attached to one color channel.
struct ChannelBox {
  int channel = 0;
  int64_t x = 0, y = 0, w = 1, h = 1;

  bool operator==(const ChannelBox& o) const {
    return channel == o.channel && x == o.x && y == o.y && w == o.w && h == o.h;
  }
};

// (x/W, y/H, (x+w)/W, (y+h)/H): lower-left and upper-right corners in [0,1].
struct NormalizedBox {
  double x0 = 0, y0 = 0, x1 = 0, y1 = 0;
};

inline NormalizedBox normalize_box(const ChannelBox& b, int64_t W, int64_t H) {
  MDE_CHECK(W >= 1 && H >= 1, ParameterError, "normalize_box: empty image");
  MDE_CHECK(b.w >= 1 && b.h >= 1 && b.x >= 0 && b.y >= 0 && b.x + b.w <= W && b.y + b.h <= H,
            ParameterError, "normalize_box: box outside image");
  return NormalizedBox{static_cast<double>(b.x) / W, static_cast<double>(b.y) / H,
                       static_cast<double>(b.x + b.w) / W, static_cast<double>(b.y + b.h) / H};
}

inline ChannelBox denormalize_box(const NormalizedBox& nb, int64_t W, int64_t H, int channel = 0) {
  ChannelBox b;
  b.channel = channel;
  b.x = static_cast<int64_t>(std::llround(nb.x0 * W));
  b.y = static_cast<int64_t>(std::llround(nb.y0 * H));
  b.w = static_cast<int64_t>(std::llround(nb.x1 * W)) - b.x;
  b.h = static_cast<int64_t>(std::llround(nb.y1 * H)) - b.y;
  return b;
}

// One sampled rectangle: height uniform on [S·H, H], width chosen so the area
// stays near S·W·H, position uniform among valid offsets.
namespace detail {

// Continuous part of the sampler, exposed for the distribution test.
inline double sample_box_height(Rng& rng, double S, int64_t H) {
  return rng.uniform(S * static_cast<double>(H), static_cast<double>(H));
}

inline ChannelBox sample_box(Rng& rng, double S, int64_t W, int64_t H, int channel) {
  ChannelBox b;
  b.channel = channel;
  const double hc = sample_box_height(rng, S, H);
  b.h = std::max<int64_t>(1, std::llround(hc));
  b.w = std::clamp<int64_t>(std::llround(S * static_cast<double>(W * H) / static_cast<double>(b.h)),
                            1, W);
  b.x = rng.uniform_int(0, W - b.w);
  b.y = rng.uniform_int(0, H - b.h);
  return b;
}

inline void check_ratio(double S, int64_t W, int64_t H) {
  MDE_CHECK(S > 0.0 && S < 1.0, ParameterError, "mask ratio must lie in (0,1), got ", S);
  MDE_CHECK(S * static_cast<double>(W * H) >= 1.0, ParameterError,
            "mask ratio ", S, " keeps less than one pixel of a ", W, "x", H, " image");
  MDE_CHECK(S * static_cast<double>(H) >= 1.0, ParameterError,
            "mask ratio ", S, " is too small for image height ", H);
}

// Fixed centered box of area close to S·W·H, used by RI (kept region) and I
// (dropped region).
inline ChannelBox centered_box(double S, int64_t W, int64_t H, int channel) {
  ChannelBox b;
  b.channel = channel;
  const double side = std::sqrt(S);
  b.w = std::clamp<int64_t>(std::llround(side * static_cast<double>(W)), 1, W);
  b.h = std::clamp<int64_t>(std::llround(side * static_cast<double>(H)), 1, H);
  b.x = (W - b.w) / 2;
  b.y = (H - b.h) / 2;
  return b;
}

}  // namespace detail

inline std::array<ChannelBox, 3> sample_rec_boxes(Rng& rng, double S, int64_t W, int64_t H) {
  MDE_CHECK(W >= 1 && H >= 1, ParameterError, "sample_rec_boxes: empty image");
  detail::check_ratio(S, W, H);
  return {detail::sample_box(rng, S, W, H, 0), detail::sample_box(rng, S, W, H, 1),
          detail::sample_box(rng, S, W, H, 2)};
}

// A batch of channel-wise binary masks: 1 marks visible pixels, 0 dropped.
// `boxes` records the rectangle that generated each channel mask: the visible
// region for RI/RE/REC, the dropped region for I and occlusion templates, the
// whole image (or a degenerate 1x1 stub) for Col channels.
struct MaskBatch {
  Task task = Task::RE;
  int col_k = 0;
  double ratio = 0.0;
  int64_t n = 0, height = 0, width = 0;
  std::vector<std::array<ChannelBox, 3>> boxes;
  Tensor<float> mask;  // [N,3,H,W], exactly 0 or 1
};

namespace detail {

inline void paint_box(Tensor<float>& mask, int64_t image, const ChannelBox& b, float value) {
  const int64_t H = mask.dim(2), W = mask.dim(3);
  for (int64_t i = b.y; i < b.y + b.h; ++i) {
    float* row = mask.data.data() + ((image * 3 + b.channel) * H + i) * W;
    for (int64_t j = b.x; j < b.x + b.w; ++j) row[j] = value;
  }
}

inline void fill_channel(Tensor<float>& mask, int64_t image, int channel, float value) {
  const int64_t plane = mask.dim(2) * mask.dim(3);
  float* p = mask.data.data() + (image * 3 + channel) * plane;
  std::fill(p, p + plane, value);
}

}  // namespace detail

inline MaskBatch make_mask(Task task, Rng& rng, double S, int64_t W, int64_t H, int64_t N,
                           int col_k = 0) {
  MDE_CHECK(W >= 1 && H >= 1, ParameterError, "make_mask: empty image");
  MDE_CHECK(N >= 1, ParameterError, "make_mask: batch size must be positive");

  MaskBatch mb;
  mb.task = task;
  mb.col_k = col_k;
  mb.ratio = S;
  mb.n = N;
  mb.height = H;
  mb.width = W;
  mb.boxes.resize(static_cast<size_t>(N));
  mb.mask = Tensor<float>::zeros({N, 3, H, W});

  switch (task) {
    case Task::RE: {
      detail::check_ratio(S, W, H);
      for (int64_t n = 0; n < N; ++n) {
        ChannelBox shared = detail::sample_box(rng, S, W, H, 0);
        for (int c = 0; c < 3; ++c) {
          ChannelBox b = shared;
          b.channel = c;
          mb.boxes[static_cast<size_t>(n)][static_cast<size_t>(c)] = b;
          detail::paint_box(mb.mask, n, b, 1.0f);
        }
      }
      break;
    }
    case Task::REC: {
      detail::check_ratio(S, W, H);
      for (int64_t n = 0; n < N; ++n) {
        auto boxes = sample_rec_boxes(rng, S, W, H);
        mb.boxes[static_cast<size_t>(n)] = boxes;
        for (const ChannelBox& b : boxes) detail::paint_box(mb.mask, n, b, 1.0f);
      }
      break;
    }
    case Task::RI:
    case Task::I: {
      detail::check_ratio(S, W, H);
      for (int64_t n = 0; n < N; ++n) {
        for (int c = 0; c < 3; ++c) {
          ChannelBox b = detail::centered_box(S, W, H, c);
          mb.boxes[static_cast<size_t>(n)][static_cast<size_t>(c)] = b;
          if (task == Task::RI) {
            detail::paint_box(mb.mask, n, b, 1.0f);
          } else {
            detail::fill_channel(mb.mask, n, c, 1.0f);
            detail::paint_box(mb.mask, n, b, 0.0f);
          }
        }
      }
      break;
    }
    case Task::Col: {
      MDE_CHECK(col_k == 1 || col_k == 2, ParameterError,
                "colorization keeps 1 or 2 visible channels, got ", col_k);
      for (int64_t n = 0; n < N; ++n) {
        // one uniform draw selects the distinguished channel: the visible one
        // for col1, the hidden one for col2
        const int pick = static_cast<int>(rng.uniform_int(0, 2));
        for (int c = 0; c < 3; ++c) {
          const bool visible = (col_k == 1) ? (c == pick) : (c != pick);
          ChannelBox b;
          b.channel = c;
          if (visible) {
            b.w = W;
            b.h = H;
            detail::fill_channel(mb.mask, n, c, 1.0f);
          }
          mb.boxes[static_cast<size_t>(n)][static_cast<size_t>(c)] = b;
        }
      }
      break;
    }
  }
  return mb;
}

// (dropped, corrupted): fraction of pixels masked in all three channels, and
// in at least one channel.
inline std::pair<double, double> corruption_stats(const MaskBatch& mb) {
  const int64_t N = mb.mask.dim(0), H = mb.mask.dim(2), W = mb.mask.dim(3);
  const int64_t plane = H * W;
  int64_t dropped = 0, corrupted = 0;
  for (int64_t n = 0; n < N; ++n) {
    const float* c0 = mb.mask.data.data() + (n * 3 + 0) * plane;
    const float* c1 = mb.mask.data.data() + (n * 3 + 1) * plane;
    const float* c2 = mb.mask.data.data() + (n * 3 + 2) * plane;
    for (int64_t i = 0; i < plane; ++i) {
      const int visible = (c0[i] != 0.0f) + (c1[i] != 0.0f) + (c2[i] != 0.0f);
      if (visible == 0) ++dropped;
      if (visible < 3) ++corrupted;
    }
  }
  const double total = static_cast<double>(N * plane);
  return {static_cast<double>(dropped) / total, static_cast<double>(corrupted) / total};
}

// Deterministic evaluation masks that drop one named face region.
inline MaskBatch occlusion_template(const std::string& name, int64_t W, int64_t H) {
  MDE_CHECK(W >= 8 && H >= 8, ParameterError, "occlusion templates need at least an 8x8 image");

  auto centered = [&](double cx, double cy, double w, double h) {
    ChannelBox b;
    b.w = std::clamp<int64_t>(std::llround(w), 1, W);
    b.h = std::clamp<int64_t>(std::llround(h), 1, H);
    b.x = std::clamp<int64_t>(std::llround(cx - w / 2.0), 0, W - b.w);
    b.y = std::clamp<int64_t>(std::llround(cy - h / 2.0), 0, H - b.h);
    return b;
  };

  ChannelBox region;
  const double Wd = static_cast<double>(W), Hd = static_cast<double>(H);
  if (name == "right_half") {
    region.x = W / 2;
    region.y = 0;
    region.w = W - W / 2;
    region.h = H;
  } else if (name == "left_half") {
    region.x = 0;
    region.y = 0;
    region.w = W / 2;
    region.h = H;
  } else if (name == "left_eye") {
    region = centered(Wd / 3.0, Hd / 3.0, Wd / 3.0, Hd / 6.0);
  } else if (name == "right_eye") {
    region = centered(2.0 * Wd / 3.0, Hd / 3.0, Wd / 3.0, Hd / 6.0);
  } else if (name == "both_eyes") {
    ChannelBox le = centered(Wd / 3.0, Hd / 3.0, Wd / 3.0, Hd / 6.0);
    ChannelBox re = centered(2.0 * Wd / 3.0, Hd / 3.0, Wd / 3.0, Hd / 6.0);
    region.x = std::min(le.x, re.x);
    region.y = std::min(le.y, re.y);
    region.w = std::max(le.x + le.w, re.x + re.w) - region.x;
    region.h = std::max(le.y + le.h, re.y + re.h) - region.y;
  } else if (name == "mouth") {
    region = centered(Wd / 2.0, 3.0 * Hd / 4.0, Wd / 2.0, Hd / 6.0);
  } else {
    MDE_THROW(ParameterError, "unknown occlusion template '", name, "'");
  }

  MaskBatch mb;
  mb.task = Task::I;  // template masks behave like inpainting masks
  mb.ratio = 1.0 - static_cast<double>(region.w * region.h) / (Wd * Hd);
  mb.n = 1;
  mb.height = H;
  mb.width = W;
  mb.boxes.resize(1);
  mb.mask = Tensor<float>::full({1, 3, H, W}, 1.0f);
  for (int c = 0; c < 3; ++c) {
    ChannelBox b = region;
    b.channel = c;
    mb.boxes[0][static_cast<size_t>(c)] = b;
    detail::paint_box(mb.mask, 0, b, 0.0f);
  }
  return mb;
}

// Text sidecar for one image's boxes: one "c x y w h" line per channel.
inline std::string box_sidecar_text(const std::array<ChannelBox, 3>& boxes) {
  std::ostringstream os;
  for (const ChannelBox& b : boxes)
    os << b.channel << ' ' << b.x << ' ' << b.y << ' ' << b.w << ' ' << b.h << '\n';
  return os.str();
}

inline std::array<ChannelBox, 3> parse_box_sidecar(const std::string& text) {
  std::istringstream is(text);
  std::array<ChannelBox, 3> out;
  bool seen[3] = {false, false, false};
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    ChannelBox b;
    ls >> b.channel >> b.x >> b.y >> b.w >> b.h;
    MDE_CHECK(!ls.fail(), ParseError, "malformed box sidecar line: '", line, "'");
    MDE_CHECK(b.channel >= 0 && b.channel < 3, ParseError, "box sidecar channel out of range: ",
              b.channel);
    out[static_cast<size_t>(b.channel)] = b;
    seen[b.channel] = true;
  }
  MDE_CHECK(seen[0] && seen[1] && seen[2], ParseError,
            "box sidecar must list all three channels");
  return out;
}

}  // namespace mde
