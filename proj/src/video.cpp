#include "vidseq/video.hpp"

#include <algorithm>
#include <cmath>

#include "vidseq/error.hpp"

namespace vidseq {

VideoClip VideoClip::blank(int frames, int height, int width, double fps) {
  if (frames < 1 || height < 1 || width < 1 || !(fps > 0)) throw DomainError("invalid clip geometry");
  VideoClip c;
  c.frames = frames;
  c.height = height;
  c.width = width;
  c.fps = fps;
  c.duration = frames / fps;
  c.pixels.assign(static_cast<std::size_t>(frames) * c.frame_size(), 0.0f);
  return c;
}

VideoClip VideoClip::frame_subset(const std::vector<int>& indices) const {
  VideoClip out = *this;
  out.frames = static_cast<int>(indices.size());
  out.pixels.clear();
  out.pixels.reserve(indices.size() * frame_size());
  for (int t : indices) {
    if (t < 0 || t >= frames) throw IndexError("frame index out of range");
    out.pixels.insert(out.pixels.end(), frame_data(t), frame_data(t) + frame_size());
  }
  return out;
}

VideoClip crop_resize(const VideoClip& clip, int frame, const BoundingBox& box, double context,
                      int out_h, int out_w) {
  if (frame < 0 || frame >= clip.frames) throw IndexError("crop frame out of range");
  const double side = std::max(2.0, context * std::max(box.width(), box.height()));
  const double x0 = box.center_x() - side / 2;
  const double y0 = box.center_y() - side / 2;
  VideoClip out = VideoClip::blank(1, out_h, out_w, clip.fps);
  out.duration = 1.0 / clip.fps;
  out.meta = clip.meta;
  auto sample = [&](double y, double x, int c) -> float {
    if (x < 0 || y < 0 || x > clip.width - 1 || y > clip.height - 1) return 0.0f;
    const int xi = std::min(static_cast<int>(x), clip.width - 2 < 0 ? 0 : clip.width - 2);
    const int yi = std::min(static_cast<int>(y), clip.height - 2 < 0 ? 0 : clip.height - 2);
    const double fx = x - xi, fy = y - yi;
    const int xj = std::min(xi + 1, clip.width - 1), yj = std::min(yi + 1, clip.height - 1);
    const double v = (1 - fy) * ((1 - fx) * clip.at(frame, yi, xi, c) + fx * clip.at(frame, yi, xj, c)) +
                     fy * ((1 - fx) * clip.at(frame, yj, xi, c) + fx * clip.at(frame, yj, xj, c));
    return static_cast<float>(v);
  };
  for (int y = 0; y < out_h; ++y) {
    for (int x = 0; x < out_w; ++x) {
      // pixel centers map to pixel centers
      const double sy = y0 + (y + 0.5) * side / out_h - 0.5;
      const double sx = x0 + (x + 0.5) * side / out_w - 0.5;
      for (int c = 0; c < 3; ++c) out.at(0, y, x, c) = sample(sy, sx, c);
    }
  }
  return out;
}

}  // namespace vidseq
