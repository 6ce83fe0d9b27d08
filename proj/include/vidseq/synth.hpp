#pragma once

// Synthetic moving-shape videos for every task. Generation is a pure
// function of (spec, task, index).

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "vidseq/codec.hpp"
#include "vidseq/video.hpp"
#include "vidseq/vocabulary.hpp"

namespace vidseq {

struct SynthSpec {
  std::uint64_t seed = 0;
  int width = 64;
  int height = 64;
  // AR / CC / ViQA clips
  int clip_frames = 16;
  double clip_fps = 8.0;
  // DVP videos are sampled at 1 fps
  int dvp_min_seconds = 24;
  int dvp_max_seconds = 40;
  int dvp_min_events = 1;
  int dvp_max_events = 3;
  int dvp_min_event_seconds = 4;
  // VOT sequences
  int vot_frames = 32;
  double vot_fps = 30.0;
  double vot_min_speed = 1.0;  // px / frame
  double vot_max_speed = 3.0;
  int min_size = 10;
  int max_size = 18;
  std::vector<std::string> shapes{"circle", "square", "triangle"};
  std::vector<std::string> colors{"red", "green", "blue", "yellow"};
  std::vector<std::string> motions{"left", "right", "up", "down"};

  void validate() const;
  std::map<std::string, std::string> to_map() const;
  static SynthSpec from_map(const std::map<std::string, std::string>& kv);
};

// Every word the generator can emit (labels, captions, questions, answers).
std::vector<std::string> synth_corpus(const SynthSpec& spec);

// Renders one filled shape into frame t; returns the tight pixel-edge box
// of the drawn pixels.
BoundingBox render_shape(VideoClip& clip, int t, const std::string& shape, const std::string& color,
                         double cx, double cy, double size);

TaskSample generate_sample(TaskKind kind, const SynthSpec& spec, std::uint64_t index);
// Samples [first, first + n). When vocab is given every emitted word must be
// in it, otherwise InputError.
std::vector<TaskSample> generate(TaskKind kind, const SynthSpec& spec, std::size_t n, std::uint64_t first = 0,
                                 const Vocabulary* vocab = nullptr);

// Two-frame tracking instance from a VOT sequence: frame 0 is the template
// crop around the box at template_index, frame 1 is the search frame.
// The box prompt is the box of the frame before the search frame.
TaskSample make_vot_pair(const TaskSample& sequence, int template_index, int search_index,
                         double context = 2.0);

}  // namespace vidseq
