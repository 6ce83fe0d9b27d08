#include "vidseq/synth.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <set>

#include "vidseq/error.hpp"

namespace vidseq {

namespace {

struct Rgb {
  float r, g, b;
};

Rgb color_of(const std::string& name) {
  if (name == "red") return {0.9f, 0.1f, 0.1f};
  if (name == "green") return {0.1f, 0.85f, 0.2f};
  if (name == "blue") return {0.15f, 0.3f, 0.95f};
  if (name == "yellow") return {0.95f, 0.9f, 0.1f};
  if (name == "white") return {0.95f, 0.95f, 0.95f};
  if (name == "purple") return {0.6f, 0.2f, 0.8f};
  throw DomainError("unknown color " + name);
}

bool inside_shape(const std::string& shape, double px, double py, double cx, double cy, double size) {
  const double h = size / 2;
  const double dx = px - cx, dy = py - cy;
  if (shape == "circle") return dx * dx + dy * dy <= h * h;
  if (shape == "square") return std::abs(dx) <= h && std::abs(dy) <= h;
  if (shape == "triangle") {
    // apex at the top, base at the bottom
    if (dy < -h || dy > h) return false;
    const double half_width = (dy + h) / 2;
    return std::abs(dx) <= half_width;
  }
  throw DomainError("unknown shape " + shape);
}

std::mt19937_64 rng_for(const SynthSpec& spec, TaskKind kind, std::uint64_t index) {
  std::seed_seq seq{static_cast<std::uint32_t>(spec.seed), static_cast<std::uint32_t>(spec.seed >> 32),
                    static_cast<std::uint32_t>(kind), static_cast<std::uint32_t>(index),
                    static_cast<std::uint32_t>(index >> 32)};
  return std::mt19937_64(seq);
}

template <typename Rng>
const std::string& pick(const std::vector<std::string>& v, Rng& rng) {
  std::uniform_int_distribution<std::size_t> d(0, v.size() - 1);
  return v[d(rng)];
}

template <typename Rng>
double uniform(Rng& rng, double lo, double hi) {
  return std::uniform_real_distribution<double>(lo, hi)(rng);
}

template <typename Rng>
int uniform_int(Rng& rng, int lo, int hi) {
  return std::uniform_int_distribution<int>(lo, hi)(rng);
}

struct Direction {
  double dx, dy;
};

Direction direction_of(const std::string& motion) {
  if (motion == "left") return {-1, 0};
  if (motion == "right") return {1, 0};
  if (motion == "up") return {0, -1};
  if (motion == "down") return {0, 1};
  throw DomainError("unknown motion " + motion);
}

std::string make_id(TaskKind kind, std::uint64_t index) {
  std::string name(task_name(kind));
  std::transform(name.begin(), name.end(), name.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  char buf[32];
  std::snprintf(buf, sizeof buf, "-%06llu", static_cast<unsigned long long>(index));
  return name + buf;
}

// Start/end centres for a straight move of `travel` pixels that stays inside the frame.
template <typename Rng>
std::pair<double, double> start_center(Rng& rng, const SynthSpec& spec, double size, Direction d, double travel) {
  const double margin = size / 2 + 1;
  auto range = [&](double extent, double delta) {
    double lo = margin, hi = extent - margin;
    if (delta < 0) lo -= delta;
    else hi -= delta;
    if (hi < lo) hi = lo;
    return std::pair(lo, hi);
  };
  auto [xlo, xhi] = range(spec.width, d.dx * travel);
  auto [ylo, yhi] = range(spec.height, d.dy * travel);
  return {uniform(rng, xlo, xhi), uniform(rng, ylo, yhi)};
}

}  // namespace

void SynthSpec::validate() const {
  if (width < 16 || height < 16) throw ConfigError("synth: frames must be at least 16x16");
  if (clip_frames < 1 || !(clip_fps > 0) || vot_frames < 2 || !(vot_fps > 0)) throw ConfigError("synth: bad frame counts");
  if (dvp_min_seconds < 2 || dvp_max_seconds < dvp_min_seconds) throw ConfigError("synth: bad DVP duration range");
  if (dvp_min_events < 1 || dvp_max_events < dvp_min_events) throw ConfigError("synth: bad DVP event range");
  if (dvp_min_event_seconds < 1 ||
      dvp_max_events * (dvp_min_event_seconds + 1) > dvp_min_seconds) {
    throw ConfigError("synth: DVP events cannot fit the shortest video");
  }
  if (min_size < 3 || max_size < min_size || max_size * 2 > std::min(width, height)) {
    throw ConfigError("synth: bad shape size range");
  }
  if (!(vot_min_speed >= 0) || vot_max_speed < vot_min_speed) throw ConfigError("synth: bad speed range");
  if (shapes.empty() || colors.empty() || motions.empty()) throw ConfigError("synth: empty word lists");
  for (const auto& c : colors) color_of(c);
  for (const auto& m : motions) direction_of(m);
  for (const auto& s : shapes) inside_shape(s, 0, 0, 0, 0, 1);
}

std::map<std::string, std::string> SynthSpec::to_map() const {
  auto join = [](const std::vector<std::string>& v) {
    std::string s;
    for (const auto& w : v) s += (s.empty() ? "" : ",") + w;
    return s;
  };
  return {{"synth.seed", std::to_string(seed)},
          {"synth.width", std::to_string(width)},
          {"synth.height", std::to_string(height)},
          {"synth.clip_frames", std::to_string(clip_frames)},
          {"synth.clip_fps", std::to_string(clip_fps)},
          {"synth.dvp_min_seconds", std::to_string(dvp_min_seconds)},
          {"synth.dvp_max_seconds", std::to_string(dvp_max_seconds)},
          {"synth.dvp_min_events", std::to_string(dvp_min_events)},
          {"synth.dvp_max_events", std::to_string(dvp_max_events)},
          {"synth.dvp_min_event_seconds", std::to_string(dvp_min_event_seconds)},
          {"synth.vot_frames", std::to_string(vot_frames)},
          {"synth.vot_fps", std::to_string(vot_fps)},
          {"synth.vot_min_speed", std::to_string(vot_min_speed)},
          {"synth.vot_max_speed", std::to_string(vot_max_speed)},
          {"synth.min_size", std::to_string(min_size)},
          {"synth.max_size", std::to_string(max_size)},
          {"synth.shapes", join(shapes)},
          {"synth.colors", join(colors)},
          {"synth.motions", join(motions)}};
}

SynthSpec SynthSpec::from_map(const std::map<std::string, std::string>& kv) {
  SynthSpec s;
  auto get = [&](const char* key) -> const std::string* {
    auto it = kv.find(std::string("synth.") + key);
    return it == kv.end() ? nullptr : &it->second;
  };
  auto split = [](const std::string& v) {
    std::vector<std::string> out;
    std::size_t b = 0;
    while (b <= v.size()) {
      const auto e = v.find(',', b);
      const auto w = v.substr(b, e == std::string::npos ? std::string::npos : e - b);
      if (!w.empty()) out.push_back(w);
      if (e == std::string::npos) break;
      b = e + 1;
    }
    return out;
  };
  try {
    if (auto v = get("seed")) s.seed = std::stoull(*v);
    if (auto v = get("width")) s.width = std::stoi(*v);
    if (auto v = get("height")) s.height = std::stoi(*v);
    if (auto v = get("clip_frames")) s.clip_frames = std::stoi(*v);
    if (auto v = get("clip_fps")) s.clip_fps = std::stod(*v);
    if (auto v = get("dvp_min_seconds")) s.dvp_min_seconds = std::stoi(*v);
    if (auto v = get("dvp_max_seconds")) s.dvp_max_seconds = std::stoi(*v);
    if (auto v = get("dvp_min_events")) s.dvp_min_events = std::stoi(*v);
    if (auto v = get("dvp_max_events")) s.dvp_max_events = std::stoi(*v);
    if (auto v = get("dvp_min_event_seconds")) s.dvp_min_event_seconds = std::stoi(*v);
    if (auto v = get("vot_frames")) s.vot_frames = std::stoi(*v);
    if (auto v = get("vot_fps")) s.vot_fps = std::stod(*v);
    if (auto v = get("vot_min_speed")) s.vot_min_speed = std::stod(*v);
    if (auto v = get("vot_max_speed")) s.vot_max_speed = std::stod(*v);
    if (auto v = get("min_size")) s.min_size = std::stoi(*v);
    if (auto v = get("max_size")) s.max_size = std::stoi(*v);
  } catch (const std::exception&) {
    throw ConfigError("synth: malformed numeric value");
  }
  if (auto v = get("shapes")) s.shapes = split(*v);
  if (auto v = get("colors")) s.colors = split(*v);
  if (auto v = get("motions")) s.motions = split(*v);
  s.validate();
  return s;
}

std::vector<std::string> synth_corpus(const SynthSpec& spec) {
  std::set<std::string> words{"a", "moving", "moves", "what", "color", "is", "the", "shape",
                              "which", "direction", "does", "move"};
  words.insert(spec.shapes.begin(), spec.shapes.end());
  words.insert(spec.colors.begin(), spec.colors.end());
  words.insert(spec.motions.begin(), spec.motions.end());
  return {words.begin(), words.end()};
}

BoundingBox render_shape(VideoClip& clip, int t, const std::string& shape, const std::string& color,
                         double cx, double cy, double size) {
  const Rgb rgb = color_of(color);
  int minx = clip.width, miny = clip.height, maxx = -1, maxy = -1;
  const int x0 = std::max(0, static_cast<int>(std::floor(cx - size)));
  const int x1 = std::min(clip.width - 1, static_cast<int>(std::ceil(cx + size)));
  const int y0 = std::max(0, static_cast<int>(std::floor(cy - size)));
  const int y1 = std::min(clip.height - 1, static_cast<int>(std::ceil(cy + size)));
  for (int y = y0; y <= y1; ++y) {
    for (int x = x0; x <= x1; ++x) {
      if (!inside_shape(shape, x + 0.5, y + 0.5, cx, cy, size)) continue;
      clip.at(t, y, x, 0) = rgb.r;
      clip.at(t, y, x, 1) = rgb.g;
      clip.at(t, y, x, 2) = rgb.b;
      minx = std::min(minx, x);
      miny = std::min(miny, y);
      maxx = std::max(maxx, x);
      maxy = std::max(maxy, y);
    }
  }
  if (maxx < 0) return {};
  return {static_cast<double>(minx), static_cast<double>(miny), static_cast<double>(maxx + 1),
          static_cast<double>(maxy + 1)};
}

TaskSample generate_sample(TaskKind kind, const SynthSpec& spec, std::uint64_t index) {
  auto rng = rng_for(spec, kind, index);
  TaskSample s;
  s.kind = kind;
  s.id = make_id(kind, index);

  switch (kind) {
    case TaskKind::AR:
    case TaskKind::CC:
    case TaskKind::ViQA: {
      const std::string shape = pick(spec.shapes, rng);
      const std::string color = pick(spec.colors, rng);
      const std::string motion = pick(spec.motions, rng);
      const double size = uniform_int(rng, spec.min_size, spec.max_size);
      const Direction d = direction_of(motion);
      const double speed = uniform(rng, 1.0, 2.0);
      const double travel = speed * (spec.clip_frames - 1);
      auto [cx, cy] = start_center(rng, spec, size, d, travel);
      s.clip = VideoClip::blank(spec.clip_frames, spec.height, spec.width, spec.clip_fps);
      for (int t = 0; t < spec.clip_frames; ++t) render_shape(s.clip, t, shape, color, cx + d.dx * speed * t, cy + d.dy * speed * t, size);
      s.clip.meta = {{"shape", shape}, {"color", color}, {"motion", motion}};
      if (kind == TaskKind::AR) {
        s.target = TextTarget{{shape, "moving", motion}};
      } else if (kind == TaskKind::CC) {
        s.target = TextTarget{{"a", color, shape, "moves", motion}};
      } else {
        const int q = uniform_int(rng, 0, 2);
        if (q == 0) {
          s.prompt_sentence = std::vector<std::string>{"what", "color", "is", "the", shape};
          s.target = TextTarget{{color}};
        } else if (q == 1) {
          s.prompt_sentence = std::vector<std::string>{"what", "shape", "is", "moving"};
          s.target = TextTarget{{shape}};
        } else {
          s.prompt_sentence = std::vector<std::string>{"which", "direction", "does", "the", shape, "move"};
          s.target = TextTarget{{motion}};
        }
      }
      break;
    }
    case TaskKind::DVP: {
      const int seconds = uniform_int(rng, spec.dvp_min_seconds, spec.dvp_max_seconds);
      const int k = uniform_int(rng, spec.dvp_min_events, spec.dvp_max_events);
      const int max_len = std::max(spec.dvp_min_event_seconds, seconds / k - 1);
      std::vector<int> lengths(static_cast<std::size_t>(k));
      int used = 0;
      for (auto& l : lengths) {
        l = uniform_int(rng, spec.dvp_min_event_seconds, max_len);
        used += l;
      }
      // distribute the slack into k + 1 gaps
      const int slack = seconds - used;
      std::vector<int> cuts(static_cast<std::size_t>(k));
      for (auto& c : cuts) c = uniform_int(rng, 0, slack);
      std::sort(cuts.begin(), cuts.end());
      s.clip = VideoClip::blank(seconds, spec.height, spec.width, 1.0);
      EventSet events;
      int cursor = 0;
      int prev_cut = 0;
      std::string meta;
      for (int e = 0; e < k; ++e) {
        cursor += cuts[static_cast<std::size_t>(e)] - prev_cut;
        prev_cut = cuts[static_cast<std::size_t>(e)];
        const int start = cursor;
        const int len = lengths[static_cast<std::size_t>(e)];
        cursor += len;
        const std::string shape = pick(spec.shapes, rng);
        const std::string color = pick(spec.colors, rng);
        const std::string motion = pick(spec.motions, rng);
        const double size = uniform_int(rng, spec.min_size, spec.max_size);
        const Direction d = direction_of(motion);
        const double travel = std::min<double>(spec.width, spec.height) / 2;
        const double speed = len > 1 ? travel / (len - 1) : 0.0;
        auto [cx, cy] = start_center(rng, spec, size, d, travel);
        for (int t = start; t < start + len; ++t) {
          const double step = t - start;
          render_shape(s.clip, t, shape, color, cx + d.dx * speed * step, cy + d.dy * speed * step, size);
        }
        events.push_back({TimeSpan{static_cast<double>(start), static_cast<double>(len)}, {color, shape, "moves", motion}});
      }
      s.target = std::move(events);
      break;
    }
    case TaskKind::VOT: {
      const std::string shape = pick(spec.shapes, rng);
      const std::string color = pick(spec.colors, rng);
      const double size = uniform_int(rng, spec.min_size, spec.max_size);
      const double speed = uniform(rng, spec.vot_min_speed, spec.vot_max_speed);
      const double angle = uniform(rng, 0.0, 2.0 * 3.14159265358979323846);
      double vx = speed * std::cos(angle), vy = speed * std::sin(angle);
      const double margin = size / 2 + 1;
      double cx = uniform(rng, margin, spec.width - margin);
      double cy = uniform(rng, margin, spec.height - margin);
      s.clip = VideoClip::blank(spec.vot_frames, spec.height, spec.width, spec.vot_fps);
      Trajectory boxes;
      for (int t = 0; t < spec.vot_frames; ++t) {
        boxes.push_back(render_shape(s.clip, t, shape, color, cx, cy, size));
        // linear motion, reflected at the frame border
        cx += vx;
        cy += vy;
        if (cx < margin) { cx = 2 * margin - cx; vx = -vx; }
        if (cx > spec.width - margin) { cx = 2 * (spec.width - margin) - cx; vx = -vx; }
        if (cy < margin) { cy = 2 * margin - cy; vy = -vy; }
        if (cy > spec.height - margin) { cy = 2 * (spec.height - margin) - cy; vy = -vy; }
      }
      s.clip.meta = {{"shape", shape}, {"color", color}, {"motion", "linear"}};
      s.prompt_box = boxes.front();
      s.target = std::move(boxes);
      break;
    }
  }
  return s;
}

std::vector<TaskSample> generate(TaskKind kind, const SynthSpec& spec, std::size_t n, std::uint64_t first,
                                 const Vocabulary* vocab) {
  spec.validate();
  if (n < 1) throw ConfigError("generate: n must be at least 1");
  std::vector<TaskSample> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    out.push_back(generate_sample(kind, spec, first + i));
    if (!vocab) continue;
    auto check = [&](const std::vector<std::string>& words) {
      for (const auto& w : words) {
        auto id = vocab->find(w);
        if (!id || vocab->kind(*id) != TokenKind::Word) throw InputError("generated word '" + w + "' is not in the vocabulary");
      }
    };
    const auto& s = out.back();
    if (s.prompt_sentence) check(*s.prompt_sentence);
    if (auto* text = std::get_if<TextTarget>(&s.target)) check(text->words);
    if (auto* events = std::get_if<EventSet>(&s.target))
      for (const auto& e : *events) check(e.words);
  }
  return out;
}

TaskSample make_vot_pair(const TaskSample& sequence, int template_index, int search_index, double context) {
  if (sequence.kind != TaskKind::VOT) throw InputError("make_vot_pair needs a VOT sequence");
  const auto& boxes = std::get<Trajectory>(sequence.target);
  const int n = static_cast<int>(boxes.size());
  if (template_index < 0 || search_index < 1 || template_index >= search_index || search_index >= n) {
    throw IndexError("make_vot_pair: need 0 <= template < search < frames");
  }
  const auto& clip = sequence.clip;
  VideoClip templ = crop_resize(clip, template_index, boxes[static_cast<std::size_t>(template_index)], context,
                                clip.height, clip.width);
  VideoClip pair = VideoClip::blank(2, clip.height, clip.width, clip.fps);
  std::copy(templ.pixels.begin(), templ.pixels.end(), pair.pixels.begin());
  std::copy(clip.frame_data(search_index), clip.frame_data(search_index) + clip.frame_size(),
            pair.pixels.begin() + static_cast<std::ptrdiff_t>(clip.frame_size()));
  pair.meta = clip.meta;
  TaskSample s;
  s.kind = TaskKind::VOT;
  s.id = sequence.id + "@" + std::to_string(template_index) + ":" + std::to_string(search_index);
  s.clip = std::move(pair);
  s.prompt_box = boxes[static_cast<std::size_t>(search_index - 1)];
  s.target = Trajectory{boxes[static_cast<std::size_t>(search_index - 1)], boxes[static_cast<std::size_t>(search_index)]};
  return s;
}

}  // namespace vidseq
