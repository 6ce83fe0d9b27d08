#pragma once

// On-disk records: dataset manifests (one JSON object per line plus one
// clip container per sample), prediction files, and evaluation reports.

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "vidseq/codec.hpp"
#include "vidseq/checkpoint.hpp"

namespace vidseq {

inline constexpr const char* kManifestName = "manifest.jsonl";
inline constexpr const char* kVocabularyName = "vocab.txt";

Container clip_to_container(const VideoClip& clip);
VideoClip clip_from_container(const Container& c);

// Manifest line for a sample; clip_file is relative to the dataset root.
std::string sample_to_json(const TaskSample& sample, const std::string& clip_file);
// Parses a manifest line. The clip is left with frames == 0 but its
// duration, fps and frame size are filled from the record.
TaskSample sample_from_json(const std::string& line, std::string* clip_file = nullptr);

// Writes manifest.jsonl and clips/<id>.ovc under dir.
void write_dataset(const std::filesystem::path& dir, const std::vector<TaskSample>& samples);
// Reads every sample of the manifest in file order, loading clips when asked.
std::vector<TaskSample> read_dataset(const std::filesystem::path& dir, bool load_clips = true);
// Accepts a dataset directory or a manifest file.
std::vector<TaskSample> read_manifest(const std::filesystem::path& path, bool load_clips = false);

struct PredictionRecord {
  std::string id;
  TaskKind kind = TaskKind::AR;
  GroundTruth value;
  std::vector<TokenId> tokens;
  double confidence = 0;
  std::map<std::string, bool> flags;  // empty, swapped, clipped, forced, degenerate
};

std::string prediction_to_json(const PredictionRecord& r);
PredictionRecord prediction_from_json(const std::string& line);
void write_predictions(const std::filesystem::path& path, const std::vector<PredictionRecord>& records);
std::vector<PredictionRecord> read_predictions(const std::filesystem::path& path);

struct EvalOptions {
  int n_time = 300;
  int n_box = 1000;
};

struct TaskReport {
  std::size_t count = 0;
  std::map<std::string, double> metrics;
};

struct EvalReport {
  std::map<TaskKind, TaskReport> tasks;

  std::string to_json() const;
  std::string to_table() const;
  bool operator==(const EvalReport& o) const;
};

// Per-sample metrics for one aligned pair (pred kind must match gt kind).
std::map<std::string, double> sample_metrics(const PredictionRecord& pred, const TaskSample& gt,
                                             const EvalOptions& options);
// Aligns by id (AlignmentError on any missing, extra or duplicate id) and
// averages the per-sample metrics of each task.
EvalReport evaluate(const std::vector<PredictionRecord>& predictions, const std::vector<TaskSample>& ground_truth,
                    const EvalOptions& options = {});
EvalReport evaluate_files(const std::filesystem::path& predictions, const std::filesystem::path& ground_truth,
                          const EvalOptions& options = {});

}  // namespace vidseq
