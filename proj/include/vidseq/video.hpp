#pragma once

#include <cstddef>
#include <map>
#include <string>
#include <vector>

#include "vidseq/types.hpp"

namespace vidseq {

// T x H x W x 3 frames with values in [0, 1].
struct VideoClip {
  int frames = 0;
  int height = 0;
  int width = 0;
  double duration = 0;  // seconds
  double fps = 0;
  std::vector<float> pixels;
  std::map<std::string, std::string> meta;

  static VideoClip blank(int frames, int height, int width, double fps);

  std::size_t frame_size() const { return static_cast<std::size_t>(height) * width * 3; }
  float& at(int t, int y, int x, int c) {
    return pixels[((static_cast<std::size_t>(t) * height + y) * width + x) * 3 + c];
  }
  float at(int t, int y, int x, int c) const {
    return pixels[((static_cast<std::size_t>(t) * height + y) * width + x) * 3 + c];
  }
  const float* frame_data(int t) const { return pixels.data() + static_cast<std::size_t>(t) * frame_size(); }

  VideoClip frame_subset(const std::vector<int>& indices) const;
  bool operator==(const VideoClip&) const = default;
};

// Square context crop around box (side = context * max(w, h)), resampled
// bilinearly to out_h x out_w. Regions outside the frame read as zero.
VideoClip crop_resize(const VideoClip& clip, int frame, const BoundingBox& box, double context,
                      int out_h, int out_w);

}  // namespace vidseq
