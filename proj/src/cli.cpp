#include "vidseq/cli.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <ostream>
#include <sstream>

#include "CLI11.hpp"
#include "vidseq/engine.hpp"
#include "vidseq/error.hpp"
#include "vidseq/records.hpp"
#include "vidseq/synth.hpp"

namespace vidseq {

namespace fs = std::filesystem;

namespace {

// Bad option values found before any work starts; reported as usage errors.
class UsageError : public Error {
 public:
  using Error::Error;
};

constexpr int kRecordsVersion = 1;

struct Options {
  std::vector<std::string> tasks;
  std::string mode = "separate";
  int steps = 1000;
  int batch = 8;
  double lr = 2e-3;
  std::uint64_t seed = 0;
  int beam = 4;
  int n_time = Vocabulary::kDefaultTimeTokens;
  int n_box = Vocabulary::kDefaultBoxTokens;
  int frames = 0;  // 0: command default
  double threshold = kTemplateThreshold;
  std::string out, checkpoint, dataset, id, path, config;
  int n = 32;
};

std::vector<TaskKind> parse_tasks(const std::vector<std::string>& names) {
  std::vector<TaskKind> tasks;
  for (const auto& name : names) {
    if (name == "all") {
      for (auto k : kAllTasks) tasks.push_back(k);
      continue;
    }
    try {
      tasks.push_back(parse_task(name));
    } catch (const ConfigError& e) {
      throw UsageError(e.what());
    }
  }
  std::sort(tasks.begin(), tasks.end());
  tasks.erase(std::unique(tasks.begin(), tasks.end()), tasks.end());
  return tasks;
}

std::string task_list(const std::vector<TaskKind>& tasks) {
  std::string s;
  for (auto t : tasks) s += (s.empty() ? "" : ",") + std::string(task_name(t));
  return s;
}

void require_positive(const char* flag, double v) {
  if (!(v > 0)) throw UsageError(std::string(flag) + " must be positive");
}

void require_file(const fs::path& p) {
  if (!fs::exists(p)) throw InputError("no such file or directory: " + p.string());
}

std::map<std::string, std::string> format_versions() {
  return {{"format.container", std::to_string(kContainerVersion)},
          {"format.records", std::to_string(kRecordsVersion)},
          {"format.vocabulary", "1"}};
}

void write_stamp(const fs::path& dir, const std::string& command, std::map<std::string, std::string> kv) {
  kv["command"] = command;
  for (auto& [k, v] : format_versions()) kv[k] = v;
  fs::create_directories(dir);
  std::ofstream f(dir / kStampName, std::ios::binary);
  if (!f) throw InputError("cannot write " + (dir / kStampName).string());
  f << encode_config(kv);
}

Vocabulary read_vocabulary(const fs::path& path) {
  require_file(path);
  std::ifstream f(path);
  return Vocabulary::read_manifest(f);
}

struct Loaded {
  Checkpoint ckpt;
  std::unique_ptr<Model<float>> model;
};

Loaded load_model(const fs::path& path) {
  require_file(path);
  Loaded l;
  l.ckpt = load_checkpoint(path);
  l.model = std::make_unique<Model<float>>(l.ckpt.config, 0);
  restore_parameters(*l.model, l.ckpt.container);
  return l;
}

std::vector<TaskSample> select(std::vector<TaskSample> samples, const std::vector<TaskKind>& tasks) {
  if (tasks.empty()) return samples;
  std::erase_if(samples, [&](const TaskSample& s) {
    return std::find(tasks.begin(), tasks.end(), s.kind) == tasks.end();
  });
  return samples;
}

// --- gen --------------------------------------------------------------------

int cmd_gen(const Options& o, std::ostream& out) {
  const auto tasks = o.tasks.empty() ? std::vector<TaskKind>(kAllTasks.begin(), kAllTasks.end()) : parse_tasks(o.tasks);
  require_positive("--n", o.n);
  require_positive("--n-time", o.n_time);
  require_positive("--n-box", o.n_box);
  SynthSpec spec;
  spec.seed = o.seed;
  if (o.frames) spec.clip_frames = o.frames;
  try {
    spec.validate();
  } catch (const ConfigError& e) {
    throw UsageError(e.what());
  }
  const fs::path dir = o.out;
  const auto vocab = Vocabulary::build(synth_corpus(spec), o.n_time, o.n_box);
  std::vector<TaskSample> samples;
  for (auto t : tasks) {
    auto part = generate(t, spec, static_cast<std::size_t>(o.n), 0, &vocab);
    samples.insert(samples.end(), std::make_move_iterator(part.begin()), std::make_move_iterator(part.end()));
  }
  write_dataset(dir, samples);
  {
    std::ofstream f(dir / kVocabularyName, std::ios::binary);
    vocab.write_manifest(f);
  }
  auto kv = spec.to_map();
  kv["gen.tasks"] = task_list(tasks);
  kv["gen.n"] = std::to_string(o.n);
  kv["vocab.n_time"] = std::to_string(o.n_time);
  kv["vocab.n_box"] = std::to_string(o.n_box);
  write_stamp(dir, "gen", kv);
  out << "wrote " << samples.size() << " samples (" << task_list(tasks) << ") to " << dir.string() << '\n';
  return 0;
}

// --- train ------------------------------------------------------------------

int cmd_train(const Options& o, std::ostream& out) {
  TrainConfig base;
  try {
    base.mode = parse_mode(o.mode);
  } catch (const ConfigError& e) {
    throw UsageError(e.what());
  }
  base.steps = o.steps;
  base.batch = o.batch;
  base.lr = o.lr;
  base.seed = o.seed;
  require_positive("--steps", o.steps);
  require_positive("--batch", o.batch);
  require_positive("--lr", o.lr);
  if (o.frames < 0) throw UsageError("--frames must be positive");
  auto tasks = parse_tasks(o.tasks);
  if (!o.checkpoint.empty() && base.mode == TrainMode::Separate && tasks.size() > 1) {
    throw UsageError("resuming a separate run takes exactly one --task");
  }

  const fs::path dataset = o.dataset;
  require_file(dataset / kManifestName);
  const auto samples = read_dataset(dataset);
  TaskData data;
  for (const auto& s : samples) data[s.kind].push_back(s);
  if (tasks.empty()) {
    for (const auto& [k, v] : data) tasks.push_back(k);
  }

  std::vector<std::vector<TaskKind>> runs;
  if (base.mode == TrainMode::Joint) {
    runs.push_back(tasks);
  } else {
    for (auto t : tasks) runs.push_back({t});
  }
  for (const auto& run_tasks : runs) {
    TrainConfig cfg = base;
    cfg.tasks = run_tasks;
    cfg.out_dir = o.out;
    if (runs.size() > 1) cfg.out_dir /= std::string(task_name(run_tasks.front()));
    try {
      cfg.validate();
    } catch (const ConfigError& e) {
      throw UsageError(e.what());
    }

    std::unique_ptr<Model<float>> model;
    Vocabulary vocab = Vocabulary::build({}, 2, 2);
    std::optional<Container> resume;
    if (!o.checkpoint.empty()) {
      auto l = load_model(o.checkpoint);
      vocab = l.ckpt.vocab;
      model = std::move(l.model);
      resume = std::move(l.ckpt.container);
    } else {
      vocab = read_vocabulary(dataset / kVocabularyName);
      ModelConfig mc;
      mc.fit(vocab);
      if (o.frames) {
        mc.frames = o.frames;
        mc.t_f = std::min(mc.t_f, o.frames);
      }
      try {
        mc.validate();
      } catch (const ConfigError& e) {
        throw UsageError(e.what());
      }
      model = std::make_unique<Model<float>>(mc, cfg.seed);
    }
    AdamW<float> optimizer(model->parameter_tensors(), optimizer_options(cfg));
    if (resume) restore_optimizer(optimizer, *model, *resume);

    const int every = std::max(1, cfg.steps / 10);
    run_training(cfg, data, *model, optimizer, vocab, [&](const LogEntry& e) {
      if ((e.step + 1) % every == 0 || e.step + 1 == cfg.steps) {
        out << "step " << e.step + 1 << "/" << cfg.steps << " task " << task_name(e.task) << " loss "
            << std::setprecision(6) << e.loss << '\n';
      }
    });
    auto kv = cfg.to_map();
    for (auto& [k, v] : model->config().to_map()) kv[k] = v;
    kv["train.dataset"] = o.dataset;
    kv["train.resume"] = o.checkpoint;
    write_stamp(cfg.out_dir, "train", kv);
    out << "checkpoint " << (cfg.out_dir / "checkpoint.ovid").string() << '\n';
  }
  return 0;
}

// --- eval / infer -----------------------------------------------------------

void check_decode_options(const Options& o) {
  require_positive("--beam", o.beam);
  if (!(o.threshold > 0 && o.threshold < 1)) throw UsageError("--threshold must lie in (0, 1)");
}

int cmd_eval(const Options& o, const CLI::App& app, std::ostream& out) {
  check_decode_options(o);
  const auto tasks = parse_tasks(o.tasks);
  require_file(o.checkpoint);
  require_file(fs::path(o.dataset) / kManifestName);
  auto l = load_model(o.checkpoint);
  EvalOptions eo;
  eo.n_time = app.count("--n-time") ? o.n_time : l.ckpt.vocab.n_time();
  eo.n_box = app.count("--n-box") ? o.n_box : l.ckpt.vocab.n_box();
  require_positive("--n-time", eo.n_time);
  require_positive("--n-box", eo.n_box);
  const auto samples = select(read_dataset(o.dataset), tasks);
  if (samples.empty()) throw InputError("no samples to evaluate");
  std::vector<PredictionRecord> preds;
  for (const auto& s : samples) preds.push_back(predict(*l.model, l.ckpt.vocab, s, o.beam, o.threshold));
  const auto report = evaluate(preds, samples, eo);
  out << report.to_table();
  if (!o.out.empty()) {
    const fs::path dir = o.out;
    fs::create_directories(dir);
    write_predictions(dir / "predictions.jsonl", preds);
    std::ofstream(dir / "report.json", std::ios::binary) << report.to_json() << '\n';
    write_stamp(dir, "eval",
                {{"eval.checkpoint", o.checkpoint},
                 {"eval.dataset", o.dataset},
                 {"eval.tasks", task_list(tasks)},
                 {"eval.beam", std::to_string(o.beam)},
                 {"eval.threshold", std::to_string(o.threshold)},
                 {"eval.n_time", std::to_string(eo.n_time)},
                 {"eval.n_box", std::to_string(eo.n_box)}});
  } else {
    out << report.to_json() << '\n';
  }
  return 0;
}

int cmd_infer(const Options& o, std::ostream& out) {
  check_decode_options(o);
  const auto tasks = parse_tasks(o.tasks);
  require_file(o.checkpoint);
  require_file(fs::path(o.dataset) / kManifestName);
  const auto index = select(read_manifest(o.dataset, false), tasks);
  auto it = std::find_if(index.begin(), index.end(), [&](const TaskSample& s) { return o.id.empty() || s.id == o.id; });
  if (it == index.end()) throw InputError(o.id.empty() ? "dataset has no matching sample" : "no sample with id " + o.id);
  const std::string id = it->id;
  const auto all = read_dataset(o.dataset);
  const auto& sample = *std::find_if(all.begin(), all.end(), [&](const TaskSample& s) { return s.id == id; });
  auto l = load_model(o.checkpoint);
  const auto rec = predict(*l.model, l.ckpt.vocab, sample, o.beam, o.threshold);
  out << prediction_to_json(rec) << '\n';
  out << "tokens:";
  for (TokenId t : rec.tokens) out << ' ' << l.ckpt.vocab.token(t);
  out << "\nconfidence: " << std::setprecision(6) << rec.confidence << '\n';
  if (!o.out.empty()) {
    write_predictions(fs::path(o.out) / "predictions.jsonl", {rec});
    write_stamp(o.out, "infer",
                {{"infer.checkpoint", o.checkpoint},
                 {"infer.dataset", o.dataset},
                 {"infer.id", id},
                 {"infer.beam", std::to_string(o.beam)},
                 {"infer.threshold", std::to_string(o.threshold)}});
  }
  return 0;
}

// --- inspect ----------------------------------------------------------------

void describe_vocabulary(const Vocabulary& v, std::ostream& out) {
  out << "vocabulary: " << v.size() << " tokens\n"
      << "  special [0, " << v.word_begin() << ")\n"
      << "  word    [" << v.word_begin() << ", " << v.time_begin() << ") " << v.n_words() << "\n"
      << "  time    [" << v.time_begin() << ", " << v.box_begin() << ") " << v.n_time() << "\n"
      << "  box     [" << v.box_begin() << ", " << v.size() << ") " << v.n_box() << "\n";
  out << "  words:";
  for (TokenId id = v.word_begin(); id < v.time_begin(); ++id) out << ' ' << v.token(id);
  out << '\n';
}

bool is_container(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  char magic[4] = {};
  f.read(magic, 4);
  return f && std::string(magic, 4) == "OVID";
}

int cmd_inspect(const Options& o, std::ostream& out) {
  fs::path target = !o.path.empty() ? fs::path(o.path) : !o.checkpoint.empty() ? fs::path(o.checkpoint) : fs::path(o.dataset);
  if (target.empty()) throw UsageError("inspect needs a path, --checkpoint or --dataset");
  require_file(target);
  if (fs::is_directory(target)) {
    const auto samples = read_manifest(target, false);
    std::map<TaskKind, std::size_t> counts;
    for (const auto& s : samples) ++counts[s.kind];
    out << "dataset: " << samples.size() << " samples\n";
    for (auto [k, n] : counts) out << "  " << task_name(k) << ' ' << n << '\n';
    if (fs::exists(target / kVocabularyName)) describe_vocabulary(read_vocabulary(target / kVocabularyName), out);
    return 0;
  }
  if (is_container(target)) {
    const auto c = read_container(target);
    std::size_t values = 0;
    for (const auto& t : c.tensors) values += t.shape.empty() ? 1 : numel(t.shape);
    out << "container: version " << kContainerVersion << ", " << c.tensors.size() << " tensors, " << values
        << " values\n";
    for (const auto& [k, v] : c.config) {
      if (k != "vocab.words") out << "  " << k << " = " << v << '\n';
    }
    if (c.config.count("model.vocab_size")) describe_vocabulary(checkpoint_from_container(c).vocab, out);
    return 0;
  }
  describe_vocabulary(read_vocabulary(target), out);
  return 0;
}

// Turns `key = value` lines of the --config file into `--key value`
// arguments placed right after the subcommand, skipping keys already given
// as flags so the command line wins.
std::vector<std::string> expand_config(const std::vector<std::string>& args) {
  auto it = std::find(args.begin(), args.end(), "--config");
  if (it == args.end() || it + 1 == args.end() || args.empty()) return args;
  const fs::path file = *(it + 1);
  require_file(file);
  std::ifstream f(file);
  std::vector<std::string> injected;
  std::string line;
  int lineno = 0;
  while (std::getline(f, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    const auto trim = [](std::string v) {
      const auto b = v.find_first_not_of(" \t\r");
      const auto e = v.find_last_not_of(" \t\r");
      return b == std::string::npos ? std::string() : v.substr(b, e - b + 1);
    };
    if (trim(line).empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw UsageError(file.string() + ":" + std::to_string(lineno) + ": expected key=value");
    }
    std::string key = trim(line.substr(0, eq));
    std::replace(key.begin(), key.end(), '_', '-');
    const std::string flag = "--" + key;
    if (flag == "--config") throw UsageError("--config cannot be nested");
    if (std::find(args.begin(), args.end(), flag) != args.end()) continue;
    injected.push_back(flag);
    injected.push_back(trim(line.substr(eq + 1)));
  }
  std::vector<std::string> out{args.front()};
  out.insert(out.end(), injected.begin(), injected.end());
  out.insert(out.end(), args.begin() + 1, args.end());
  return out;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"vidseq: synthetic video tasks as token sequences"};
  app.require_subcommand(1);
  Options o;

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", o.config, "flat key=value file; flags override it");
    sub->add_option("--task", o.tasks, "task(s): ar, cc, viqa, dvp, vot or all")->delimiter(',');
  };
  auto add_decode = [&](CLI::App* sub) {
    sub->add_option("--checkpoint", o.checkpoint, "checkpoint file")->required();
    sub->add_option("--dataset", o.dataset, "dataset directory")->required();
    sub->add_option("--beam", o.beam, "beam size")->capture_default_str();
    sub->add_option("--threshold", o.threshold, "template update threshold")->capture_default_str();
  };

  auto* gen = app.add_subcommand("gen", "write a synthetic dataset");
  add_common(gen);
  gen->add_option("--n", o.n, "samples per task")->capture_default_str();
  gen->add_option("--seed", o.seed, "generator seed")->capture_default_str();
  gen->add_option("--n-time", o.n_time, "time tokens")->capture_default_str();
  gen->add_option("--n-box", o.n_box, "box tokens")->capture_default_str();
  gen->add_option("--frames", o.frames, "frames per recognition/caption/QA clip");
  gen->add_option("--out", o.out, "output directory")->required();

  auto* train = app.add_subcommand("train", "train a model");
  add_common(train);
  train->add_option("--mode", o.mode, "separate or joint")->capture_default_str();
  train->add_option("--steps", o.steps, "total optimizer steps")->capture_default_str();
  train->add_option("--batch", o.batch, "batch size")->capture_default_str();
  train->add_option("--lr", o.lr, "peak learning rate")->capture_default_str();
  train->add_option("--seed", o.seed, "initialization and sampling seed")->capture_default_str();
  train->add_option("--frames", o.frames, "model input frames");
  train->add_option("--dataset", o.dataset, "dataset directory")->required();
  train->add_option("--checkpoint", o.checkpoint, "resume from this checkpoint");
  train->add_option("--out", o.out, "output directory")->required();

  auto* eval = app.add_subcommand("eval", "decode a dataset and score it");
  add_common(eval);
  add_decode(eval);
  eval->add_option("--n-time", o.n_time, "time bins for exact match (default: checkpoint vocabulary)");
  eval->add_option("--n-box", o.n_box, "box bins for exact match (default: checkpoint vocabulary)");
  eval->add_option("--out", o.out, "output directory for predictions and report");

  auto* infer = app.add_subcommand("infer", "decode one sample");
  add_common(infer);
  add_decode(infer);
  infer->add_option("--id", o.id, "sample id (default: first matching sample)");
  infer->add_option("--out", o.out, "output directory for the prediction");

  auto* inspect = app.add_subcommand("inspect", "describe a vocabulary, checkpoint or dataset");
  inspect->add_option("path", o.path, "file or directory");
  inspect->add_option("--checkpoint", o.checkpoint, "checkpoint file");
  inspect->add_option("--dataset", o.dataset, "dataset directory");

  std::vector<std::string> full;
  try {
    full = expand_config(args);
  } catch (const UsageError& e) {
    err << "usage error: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return 2;
  }
  try {
    std::vector<std::string> rev(full.rbegin(), full.rend());
    app.parse(rev);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? 0 : 1;
  }

  try {
    if (gen->parsed()) return cmd_gen(o, out);
    if (train->parsed()) return cmd_train(o, out);
    if (eval->parsed()) return cmd_eval(o, *eval, out);
    if (infer->parsed()) return cmd_infer(o, out);
    return cmd_inspect(o, out);
  } catch (const UsageError& e) {
    err << "usage error: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return 2;
  }
}

}  // namespace vidseq
