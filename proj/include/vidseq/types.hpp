#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <string_view>

namespace vidseq {

using TokenId = std::int32_t;

enum class TaskKind { AR, CC, ViQA, DVP, VOT };

inline constexpr std::array<TaskKind, 5> kAllTasks{TaskKind::AR, TaskKind::CC, TaskKind::ViQA,
                                                   TaskKind::DVP, TaskKind::VOT};

std::string_view task_name(TaskKind kind);
// Accepts "AR", "ar", "viqa", ...; throws ConfigError otherwise.
TaskKind parse_task(std::string_view name);

// Pixel-edge coordinates on an H x W frame.
struct BoundingBox {
  double x1 = 0, y1 = 0, x2 = 0, y2 = 0;

  double width() const { return x2 - x1; }
  double height() const { return y2 - y1; }
  double area() const { return width() * height(); }
  double center_x() const { return 0.5 * (x1 + x2); }
  double center_y() const { return 0.5 * (y1 + y2); }
  bool valid_in(double frame_width, double frame_height) const {
    return 0 <= x1 && x1 <= x2 && x2 <= frame_width && 0 <= y1 && y1 <= y2 && y2 <= frame_height;
  }
  bool operator==(const BoundingBox&) const = default;
};

struct TimeSpan {
  double start = 0;
  double duration = 0;

  double end() const { return start + duration; }
  bool valid_within(double video_duration) const {
    return start >= 0 && duration >= 0 && end() <= video_duration;
  }
  bool operator==(const TimeSpan&) const = default;
};

}  // namespace vidseq
