#include "vidseq/records.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

#include "json.hpp"
#include "vidseq/error.hpp"
#include "vidseq/metrics.hpp"

namespace vidseq {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

json box_json(const BoundingBox& b) { return json::array({b.x1, b.y1, b.x2, b.y2}); }

BoundingBox box_from(const json& j) {
  if (!j.is_array() || j.size() != 4) throw FormatError("box must be an array of four numbers");
  return {j[0].get<double>(), j[1].get<double>(), j[2].get<double>(), j[3].get<double>()};
}

json target_json(const GroundTruth& t) {
  json out = json::object();
  if (auto* text = std::get_if<TextTarget>(&t)) {
    out["words"] = text->words;
  } else if (auto* events = std::get_if<EventSet>(&t)) {
    json arr = json::array();
    for (const auto& e : *events) arr.push_back({{"start", e.span.start}, {"duration", e.span.duration}, {"words", e.words}});
    out["events"] = arr;
  } else {
    json arr = json::array();
    for (const auto& b : std::get<Trajectory>(t)) arr.push_back(box_json(b));
    out["boxes"] = arr;
  }
  return out;
}

GroundTruth target_from(const json& j, TaskKind kind) {
  switch (kind) {
    case TaskKind::AR:
    case TaskKind::CC:
    case TaskKind::ViQA:
      return TextTarget{j.at("words").get<std::vector<std::string>>()};
    case TaskKind::DVP: {
      EventSet events;
      for (const auto& e : j.at("events")) {
        events.push_back({TimeSpan{e.at("start").get<double>(), e.at("duration").get<double>()},
                          e.at("words").get<std::vector<std::string>>()});
      }
      return events;
    }
    case TaskKind::VOT: {
      Trajectory boxes;
      for (const auto& b : j.at("boxes")) boxes.push_back(box_from(b));
      return boxes;
    }
  }
  throw FormatError("unknown task");
}

std::vector<std::string> read_lines(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open " + path.string());
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty()) lines.push_back(line);
  }
  return lines;
}

void write_lines(const fs::path& path, const std::vector<std::string>& lines) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InputError("cannot write " + path.string());
  for (const auto& l : lines) out << l << '\n';
}

template <typename F>
auto parse_line(const std::string& what, F&& f) {
  try {
    return f();
  } catch (const json::exception& e) {
    throw FormatError(what + ": " + e.what());
  }
}

}  // namespace

Container clip_to_container(const VideoClip& clip) {
  Container c;
  char buf[64];
  c.config["clip.frames"] = std::to_string(clip.frames);
  c.config["clip.height"] = std::to_string(clip.height);
  c.config["clip.width"] = std::to_string(clip.width);
  std::snprintf(buf, sizeof buf, "%.17g", clip.fps);
  c.config["clip.fps"] = buf;
  std::snprintf(buf, sizeof buf, "%.17g", clip.duration);
  c.config["clip.duration"] = buf;
  for (const auto& [k, v] : clip.meta) c.config["meta." + k] = v;
  c.tensors.push_back({"pixels",
                       {static_cast<std::size_t>(clip.frames), static_cast<std::size_t>(clip.height),
                        static_cast<std::size_t>(clip.width), 3},
                       clip.pixels});
  return c;
}

VideoClip clip_from_container(const Container& c) {
  VideoClip clip;
  try {
    clip.frames = std::stoi(c.value("clip.frames"));
    clip.height = std::stoi(c.value("clip.height"));
    clip.width = std::stoi(c.value("clip.width"));
    clip.fps = std::stod(c.value("clip.fps"));
    clip.duration = std::stod(c.value("clip.duration"));
  } catch (const std::invalid_argument&) {
    throw FormatError("clip header has a malformed number");
  }
  for (const auto& [k, v] : c.config)
    if (k.rfind("meta.", 0) == 0) clip.meta[k.substr(5)] = v;
  const auto& t = c.tensor("pixels");
  clip.pixels = t.as<float>();
  if (clip.pixels.size() != static_cast<std::size_t>(clip.frames) * clip.frame_size()) {
    throw FormatError("clip pixel count does not match its header");
  }
  return clip;
}

std::string sample_to_json(const TaskSample& s, const std::string& clip_file) {
  json j;
  j["id"] = s.id;
  j["task"] = std::string(task_name(s.kind));
  j["clip"] = clip_file;
  j["frames"] = s.clip.frames;
  j["fps"] = s.clip.fps;
  j["duration"] = s.clip.duration;
  j["width"] = s.clip.width;
  j["height"] = s.clip.height;
  if (s.prompt_sentence) j["prompt_sentence"] = *s.prompt_sentence;
  if (s.prompt_box) j["prompt_box"] = box_json(*s.prompt_box);
  j["target"] = target_json(s.target);
  return j.dump();
}

TaskSample sample_from_json(const std::string& line, std::string* clip_file) {
  return parse_line("manifest record", [&] {
    const json j = json::parse(line);
    TaskSample s;
    s.id = j.at("id").get<std::string>();
    s.kind = parse_task(j.at("task").get<std::string>());
    s.clip.height = j.at("height").get<int>();
    s.clip.width = j.at("width").get<int>();
    s.clip.fps = j.at("fps").get<double>();
    s.clip.duration = j.at("duration").get<double>();
    if (j.contains("prompt_sentence")) s.prompt_sentence = j["prompt_sentence"].get<std::vector<std::string>>();
    if (j.contains("prompt_box")) s.prompt_box = box_from(j["prompt_box"]);
    s.target = target_from(j.at("target"), s.kind);
    if (clip_file) *clip_file = j.value("clip", "");
    return s;
  });
}

void write_dataset(const fs::path& dir, const std::vector<TaskSample>& samples) {
  fs::create_directories(dir / "clips");
  std::vector<std::string> lines;
  std::set<std::string> ids;
  for (const auto& s : samples) {
    s.validate();
    if (!ids.insert(s.id).second) throw InputError("duplicate sample id " + s.id);
    const std::string rel = "clips/" + s.id + ".ovc";
    write_container(dir / rel, clip_to_container(s.clip));
    lines.push_back(sample_to_json(s, rel));
  }
  write_lines(dir / kManifestName, lines);
}

std::vector<TaskSample> read_manifest(const fs::path& path, bool load_clips) {
  const fs::path manifest = fs::is_directory(path) ? path / kManifestName : path;
  const fs::path root = manifest.parent_path();
  std::vector<TaskSample> out;
  for (const auto& line : read_lines(manifest)) {
    std::string rel;
    TaskSample s = sample_from_json(line, &rel);
    if (load_clips) {
      if (rel.empty()) throw FormatError(s.id + ": record has no clip file");
      s.clip = clip_from_container(read_container(root / rel));
    }
    out.push_back(std::move(s));
  }
  if (out.empty()) throw InputError("dataset " + manifest.string() + " is empty");
  return out;
}

std::vector<TaskSample> read_dataset(const fs::path& dir, bool load_clips) { return read_manifest(dir, load_clips); }

std::string prediction_to_json(const PredictionRecord& r) {
  json j;
  j["id"] = r.id;
  j["task"] = std::string(task_name(r.kind));
  j["prediction"] = target_json(r.value);
  j["tokens"] = r.tokens;
  j["confidence"] = r.confidence;
  j["flags"] = r.flags;
  return j.dump();
}

PredictionRecord prediction_from_json(const std::string& line) {
  return parse_line("prediction record", [&] {
    const json j = json::parse(line);
    PredictionRecord r;
    r.id = j.at("id").get<std::string>();
    r.kind = parse_task(j.at("task").get<std::string>());
    r.value = target_from(j.at("prediction"), r.kind);
    r.tokens = j.value("tokens", std::vector<TokenId>{});
    r.confidence = j.value("confidence", 0.0);
    r.flags = j.value("flags", std::map<std::string, bool>{});
    return r;
  });
}

void write_predictions(const fs::path& path, const std::vector<PredictionRecord>& records) {
  std::vector<std::string> lines;
  for (const auto& r : records) lines.push_back(prediction_to_json(r));
  write_lines(path, lines);
}

std::vector<PredictionRecord> read_predictions(const fs::path& path) {
  std::vector<PredictionRecord> out;
  for (const auto& line : read_lines(path)) out.push_back(prediction_from_json(line));
  return out;
}

// --- evaluation -------------------------------------------------------------

namespace {

int clamped_bin(double v, double extent, int n) { return quantize_bin(std::clamp(v, 0.0, extent), extent, n); }

bool same_time_bins(const TimeSpan& a, const TimeSpan& b, double duration, int n) {
  return clamped_bin(a.start, duration, n) == clamped_bin(b.start, duration, n) &&
         clamped_bin(a.duration, duration, n) == clamped_bin(b.duration, duration, n);
}

bool same_box_bins(const BoundingBox& a, const BoundingBox& b, double w, double h, int n) {
  return clamped_bin(a.x1, w, n) == clamped_bin(b.x1, w, n) && clamped_bin(a.y1, h, n) == clamped_bin(b.y1, h, n) &&
         clamped_bin(a.x2, w, n) == clamped_bin(b.x2, w, n) && clamped_bin(a.y2, h, n) == clamped_bin(b.y2, h, n);
}

EventSet sorted_events(EventSet e) {
  std::stable_sort(e.begin(), e.end(), [](const Event& a, const Event& b) { return a.span.start < b.span.start; });
  return e;
}

}  // namespace

std::map<std::string, double> sample_metrics(const PredictionRecord& pred, const TaskSample& gt,
                                             const EvalOptions& options) {
  if (pred.kind != gt.kind) throw AlignmentError(gt.id + ": prediction task differs from ground truth");
  std::map<std::string, double> m;
  switch (gt.kind) {
    case TaskKind::AR:
    case TaskKind::ViQA:
    case TaskKind::CC: {
      const auto& p = std::get<TextTarget>(pred.value).words;
      const auto& g = std::get<TextTarget>(gt.target).words;
      const double exact = p == g ? 1.0 : 0.0;
      if (gt.kind == TaskKind::CC) {
        m["bleu4"] = bleu4(p, g);
        m["exact_match"] = exact;
      } else {
        m["accuracy"] = exact;
      }
      break;
    }
    case TaskKind::DVP: {
      const auto p = sorted_events(std::get<EventSet>(pred.value));
      const auto g = sorted_events(std::get<EventSet>(gt.target));
      const auto prf = dvp_localization_prf(p, g);
      for (std::size_t i = 0; i < prf.thresholds.size(); ++i) {
        char key[32];
        std::snprintf(key, sizeof key, "@%.1f", prf.thresholds[i]);
        m[std::string("precision") + key] = prf.precision[i];
        m[std::string("recall") + key] = prf.recall[i];
        m[std::string("f1") + key] = prf.f1[i];
      }
      m["precision"] = prf.mean_precision;
      m["recall"] = prf.mean_recall;
      m["f1"] = prf.mean_f1;
      const auto iou = segment_iou_matrix(p, g);
      double iou_sum = 0;
      for (auto [pi, gi] : greedy_match(iou, 0.0)) iou_sum += iou[pi][gi];
      m["mean_iou"] = g.empty() ? 0.0 : iou_sum / g.size();
      double bleu_sum = 0;
      for (auto [pi, gi] : greedy_match(iou, 0.5)) bleu_sum += bleu4(p[pi].words, g[gi].words);
      m["bleu4"] = g.empty() ? 0.0 : bleu_sum / g.size();
      bool exact = p.size() == g.size();
      for (std::size_t i = 0; exact && i < p.size(); ++i) {
        exact = p[i].words == g[i].words && same_time_bins(p[i].span, g[i].span, gt.clip.duration, options.n_time);
      }
      m["exact_match"] = exact ? 1.0 : 0.0;
      break;
    }
    case TaskKind::VOT: {
      const auto& p = std::get<Trajectory>(pred.value);
      const auto& g = std::get<Trajectory>(gt.target);
      if (p.size() != g.size()) throw AlignmentError(gt.id + ": trajectory length differs from ground truth");
      const auto t = tracking_metrics(p, g);
      m["success_auc"] = t.success_auc;
      m["precision"] = t.precision;
      m["normalized_precision"] = t.normalized_precision;
      std::size_t same = 0;
      for (std::size_t i = 0; i < g.size(); ++i)
        same += same_box_bins(p[i], g[i], gt.clip.width, gt.clip.height, options.n_box);
      m["exact_match"] = static_cast<double>(same) / g.size();
      break;
    }
  }
  return m;
}

EvalReport evaluate(const std::vector<PredictionRecord>& predictions, const std::vector<TaskSample>& ground_truth,
                    const EvalOptions& options) {
  std::map<std::string, const PredictionRecord*> by_id;
  for (const auto& p : predictions) {
    if (!by_id.emplace(p.id, &p).second) throw AlignmentError("duplicate prediction id " + p.id);
  }
  std::set<std::string> gt_ids;
  std::vector<const TaskSample*> order;
  for (const auto& g : ground_truth) {
    if (!gt_ids.insert(g.id).second) throw AlignmentError("duplicate ground-truth id " + g.id);
    if (!by_id.count(g.id)) throw AlignmentError("no prediction for " + g.id);
    order.push_back(&g);
  }
  for (const auto& p : predictions)
    if (!gt_ids.count(p.id)) throw AlignmentError("prediction " + p.id + " has no ground truth");
  // id order makes the sums independent of file order
  std::sort(order.begin(), order.end(), [](const TaskSample* a, const TaskSample* b) { return a->id < b->id; });

  EvalReport report;
  for (const TaskSample* g : order) {
    auto& tr = report.tasks[g->kind];
    ++tr.count;
    for (const auto& [k, v] : sample_metrics(*by_id.at(g->id), *g, options)) tr.metrics[k] += v;
  }
  for (auto& [kind, tr] : report.tasks)
    for (auto& [k, v] : tr.metrics) v /= static_cast<double>(tr.count);
  return report;
}

EvalReport evaluate_files(const fs::path& predictions, const fs::path& ground_truth, const EvalOptions& options) {
  return evaluate(read_predictions(predictions), read_manifest(ground_truth, false), options);
}

std::string EvalReport::to_json() const {
  json j = json::object();
  for (const auto& [kind, tr] : tasks) {
    json t;
    t["count"] = tr.count;
    t["metrics"] = tr.metrics;
    j[std::string(task_name(kind))] = t;
  }
  return j.dump(2);
}

std::string EvalReport::to_table() const {
  std::ostringstream os;
  char buf[128];
  for (const auto& [kind, tr] : tasks) {
    std::snprintf(buf, sizeof buf, "%-5s n=%zu\n", std::string(task_name(kind)).c_str(), tr.count);
    os << buf;
    for (const auto& [k, v] : tr.metrics) {
      std::snprintf(buf, sizeof buf, "  %-24s %.4f\n", k.c_str(), v);
      os << buf;
    }
  }
  return os.str();
}

bool EvalReport::operator==(const EvalReport& o) const {
  if (tasks.size() != o.tasks.size()) return false;
  for (const auto& [kind, tr] : tasks) {
    auto it = o.tasks.find(kind);
    if (it == o.tasks.end() || it->second.count != tr.count || it->second.metrics != tr.metrics) return false;
  }
  return true;
}

}  // namespace vidseq
