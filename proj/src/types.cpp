#include "vidseq/types.hpp"

#include <algorithm>
#include <cctype>

#include "vidseq/error.hpp"

namespace vidseq {

std::string_view task_name(TaskKind kind) {
  switch (kind) {
    case TaskKind::AR: return "AR";
    case TaskKind::CC: return "CC";
    case TaskKind::ViQA: return "ViQA";
    case TaskKind::DVP: return "DVP";
    case TaskKind::VOT: return "VOT";
  }
  return "?";
}

TaskKind parse_task(std::string_view name) {
  std::string lower(name);
  std::transform(lower.begin(), lower.end(), lower.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  if (lower == "ar") return TaskKind::AR;
  if (lower == "cc") return TaskKind::CC;
  if (lower == "viqa") return TaskKind::ViQA;
  if (lower == "dvp") return TaskKind::DVP;
  if (lower == "vot") return TaskKind::VOT;
  throw ConfigError("unknown task '" + std::string(name) + "'");
}

}  // namespace vidseq
