#pragma once

#include <atomic>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "advedge/checkpoint.hpp"
#include "advedge/dataset.hpp"
#include "advedge/metrics.hpp"
#include "advedge/mga.hpp"
#include "advedge/whitebox.hpp"

namespace advedge {

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Flat key=value experiment description; see parse_experiment_config for the
/// key list. Values accept plain decimals or fractions like 8/255.
struct ExperimentConfig {
  std::string dataset_path;            // png_dir format
  std::string dataset_format = "png_dir";
  std::string dataset_images;          // idx format
  std::string dataset_labels;          // idx format
  std::string source_checkpoint;
  std::string target_checkpoint;
  std::string output_dir;
  int eval_size = 100;
  float confidence = 0.60f;
  float accuracy_floor = 0.90f;
  std::uint32_t seed = 1;
  int workers = 1;
  std::string seeding = "whitebox";  // whitebox | random
  AttackConfig attack;
  MgaConfig mga;

  void validate() const {
    if (dataset_format != "png_dir" && dataset_format != "idx")
      throw ConfigError("config: dataset_format must be png_dir or idx");
    if (dataset_format == "png_dir" && dataset_path.empty())
      throw ConfigError("config: dataset_path is required for png_dir datasets");
    if (dataset_format == "idx" && (dataset_images.empty() || dataset_labels.empty()))
      throw ConfigError("config: dataset_images and dataset_labels are required for idx datasets");
    if (source_checkpoint.empty() || target_checkpoint.empty())
      throw ConfigError("config: source_checkpoint and target_checkpoint are required");
    if (output_dir.empty()) throw ConfigError("config: output_dir is required");
    if (eval_size < 0) throw ConfigError("config: eval_size must be >= 0");
    if (confidence < 0.0f || confidence > 1.0f) throw ConfigError("config: confidence must lie in [0,1]");
    if (accuracy_floor < 0.0f || accuracy_floor > 1.0f) throw ConfigError("config: accuracy_floor must lie in [0,1]");
    if (workers < 1) throw ConfigError("config: workers must be >= 1");
    if (seeding != "whitebox" && seeding != "random") throw ConfigError("config: seeding must be whitebox or random");
    attack.validate();
    mga.validate();
    if (attack.epsilon != mga.epsilon)
      throw ConfigError("config: the white-box and black-box stages must share one epsilon");
  }
};

namespace detail {

inline float parse_float_value(const std::string& key, const std::string& value) {
  const auto slash = value.find('/');
  try {
    if (slash != std::string::npos) {
      const float num = std::stof(value.substr(0, slash));
      const float den = std::stof(value.substr(slash + 1));
      if (den == 0.0f) throw ConfigError("config key '" + key + "': division by zero");
      return num / den;
    }
    return std::stof(value);
  } catch (const ConfigError&) {
    throw;
  } catch (const std::exception&) {
    throw ConfigError("config key '" + key + "': cannot parse number '" + value + "'");
  }
}

inline long parse_int_value(const std::string& key, const std::string& value) {
  try {
    std::size_t pos = 0;
    const long v = std::stol(value, &pos);
    if (pos != value.size()) throw std::invalid_argument("");
    return v;
  } catch (const std::exception&) {
    throw ConfigError("config key '" + key + "': cannot parse integer '" + value + "'");
  }
}

inline bool parse_bool_value(const std::string& key, const std::string& value) {
  if (value == "1" || value == "true" || value == "yes") return true;
  if (value == "0" || value == "false" || value == "no") return false;
  throw ConfigError("config key '" + key + "': cannot parse boolean '" + value + "'");
}

inline std::string trim(const std::string& s) {
  const auto a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  const auto b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

}  // namespace detail

inline ExperimentConfig parse_experiment_config(std::istream& in, const std::string& origin) {
  ExperimentConfig cfg;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string t = detail::trim(line);
    if (t.empty() || t[0] == '#') continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos)
      throw ConfigError(origin + ":" + std::to_string(lineno) + ": expected key=value, got '" + t + "'");
    const std::string key = detail::trim(t.substr(0, eq));
    const std::string value = detail::trim(t.substr(eq + 1));

    if (key == "dataset_path") cfg.dataset_path = value;
    else if (key == "dataset_format") cfg.dataset_format = value;
    else if (key == "dataset_images") cfg.dataset_images = value;
    else if (key == "dataset_labels") cfg.dataset_labels = value;
    else if (key == "source_checkpoint") cfg.source_checkpoint = value;
    else if (key == "target_checkpoint") cfg.target_checkpoint = value;
    else if (key == "output_dir") cfg.output_dir = value;
    else if (key == "eval_size") cfg.eval_size = static_cast<int>(detail::parse_int_value(key, value));
    else if (key == "confidence") cfg.confidence = detail::parse_float_value(key, value);
    else if (key == "accuracy_floor") cfg.accuracy_floor = detail::parse_float_value(key, value);
    else if (key == "seed") cfg.seed = static_cast<std::uint32_t>(detail::parse_int_value(key, value));
    else if (key == "workers") cfg.workers = static_cast<int>(detail::parse_int_value(key, value));
    else if (key == "seeding") cfg.seeding = value;
    else if (key == "epsilon") {
      cfg.attack.epsilon = detail::parse_float_value(key, value);
      cfg.mga.epsilon = cfg.attack.epsilon;
    } else if (key == "alpha") cfg.attack.alpha = detail::parse_float_value(key, value);
    else if (key == "iterations") cfg.attack.iterations = static_cast<int>(detail::parse_int_value(key, value));
    else if (key == "lambda") cfg.attack.lambda = detail::parse_float_value(key, value);
    else if (key == "mask_threshold") cfg.attack.mask_threshold = detail::parse_float_value(key, value);
    else if (key == "masked") cfg.attack.masked = detail::parse_bool_value(key, value);
    else if (key == "targeted_class") cfg.attack.targeted_class = static_cast<int>(detail::parse_int_value(key, value));
    else if (key == "population") cfg.mga.population_size = static_cast<int>(detail::parse_int_value(key, value));
    else if (key == "crossover") cfg.mga.crossover_rate = detail::parse_float_value(key, value);
    else if (key == "mutation_rate") cfg.mga.mutation_rate = detail::parse_float_value(key, value);
    else if (key == "mutation_scale") cfg.mga.mutation_scale = detail::parse_float_value(key, value);
    else if (key == "query_cap") cfg.mga.query_cap = static_cast<std::uint64_t>(detail::parse_int_value(key, value));
    else throw ConfigError(origin + ":" + std::to_string(lineno) + ": unknown config key '" + key + "'");
  }
  return cfg;
}

inline ExperimentConfig load_experiment_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file '" + path + "'");
  return parse_experiment_config(in, path);
}

/// Balanced evaluation-set selection: per class, uniformly sample among the
/// images the target classifies correctly with confidence above the filter,
/// one per class per round, until n images are chosen or the pools run dry.
/// Classes with no qualifying image are reported through `warnings`.
inline std::vector<std::size_t> select_evaluation_set(const LabeledDataset& data, const TrainedModel& target, int n,
                                                      float confidence, std::uint32_t seed,
                                                      std::vector<std::string>* warnings = nullptr) {
  const int k = target.spec.class_count;
  std::vector<std::vector<std::size_t>> pools(static_cast<std::size_t>(k));
  for (std::size_t i = 0; i < data.size(); ++i) {
    const int label = data.labels[i];
    if (label < 0 || label >= k)
      throw DatasetError("select_evaluation_set: label " + std::to_string(label) + " outside [0," + std::to_string(k) +
                         ")");
    const Tensor<float> probs = predict(target, data.images[i]);
    if (argmax(probs) == label && probs[label] > confidence) pools[static_cast<std::size_t>(label)].push_back(i);
  }
  for (int c = 0; c < k; ++c) {
    auto& pool = pools[static_cast<std::size_t>(c)];
    Rng rng(derive_seed(seed, 0x73656c65ULL ^ static_cast<std::uint64_t>(c)));
    for (std::size_t i = pool.size(); i > 1; --i) std::swap(pool[i - 1], pool[rng.below(static_cast<std::uint32_t>(i))]);
    if (pool.empty() && warnings)
      warnings->push_back("class " + std::to_string(c) + ": no image passes the confidence filter; class skipped");
  }
  // strict per-class quota: a class never contributes more than ceil(n/K),
  // even when other classes have nothing to offer
  const std::size_t quota = n <= 0 ? 0 : static_cast<std::size_t>((n + k - 1) / k);
  std::vector<std::size_t> chosen;
  for (std::size_t round = 0; round < quota && static_cast<int>(chosen.size()) < n; ++round) {
    for (int c = 0; c < k && static_cast<int>(chosen.size()) < n; ++c) {
      const auto& pool = pools[static_cast<std::size_t>(c)];
      if (round < pool.size()) chosen.push_back(pool[round]);
    }
  }
  return chosen;
}

struct ExperimentOutcome {
  std::vector<EvaluationRecord> records;
  std::vector<std::string> warnings;
  std::uint64_t total_queries = 0;
  std::uint64_t total_violations = 0;
  std::string per_image_csv;
  std::string summary_csv;
  std::string iou_csv;
};

namespace detail {

inline std::string fmt6(double v) {
  if (std::isnan(v)) return "nan";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

inline const char* kPerImageHeader = "image_id,y,success,queries,noise_rate,iou@0.1,iou@0.3,iou@0.5,iou@0.7,iou@0.9,adv_class";
inline const char* kSummaryHeader = "interpreter,source,target,success_rate,avg_queries,noise_mean,noise_std,total_queries";
inline const char* kIouHeader = "threshold,mean_iou";

inline std::string record_to_csv(const EvaluationRecord& r) {
  std::ostringstream os;
  os << r.image_id << ',' << r.y << ',' << (r.success ? 1 : 0) << ',' << r.queries_used << ',' << fmt6(r.noise_rate);
  for (float v : r.iou) os << ',' << fmt6(v);
  os << ',' << r.adversarial_class;
  return os.str();
}

inline std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      out.push_back(cur);
      cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  out.push_back(cur);
  return out;
}

inline EvaluationRecord record_from_csv(const std::string& line, const std::string& origin) {
  const std::vector<std::string> f = split_csv(line);
  if (f.size() != 11) throw ConfigError(origin + ": malformed per-image row '" + line + "'");
  EvaluationRecord r;
  r.image_id = f[0];
  r.y = static_cast<int>(parse_int_value("y", f[1]));
  r.success = parse_int_value("success", f[2]) != 0;
  r.queries_used = static_cast<std::uint64_t>(parse_int_value("queries", f[3]));
  r.noise_rate = parse_float_value("noise_rate", f[4]);
  for (std::size_t i = 0; i < r.iou.size(); ++i) r.iou[i] = parse_float_value("iou", f[5 + i]);
  r.adversarial_class = static_cast<int>(parse_int_value("adv_class", f[10]));
  return r;
}

}  // namespace detail

inline void write_per_image_csv(const std::string& path, const std::vector<EvaluationRecord>& records) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path + "' for writing");
  out << detail::kPerImageHeader << '\n';
  for (const auto& r : records) out << detail::record_to_csv(r) << '\n';
}

inline std::vector<EvaluationRecord> read_per_image_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open per-image CSV '" + path + "'");
  std::string line;
  if (!std::getline(in, line) || line != detail::kPerImageHeader)
    throw ConfigError("'" + path + "': missing or unexpected per-image CSV header");
  std::vector<EvaluationRecord> records;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    records.push_back(detail::record_from_csv(line, path));
  }
  return records;
}

/// Summary and IoU-sweep rows, derived purely from per-image records so the
/// standalone report command reproduces them byte for byte.
inline void write_aggregates(const std::string& summary_path, const std::string& iou_path,
                             const std::vector<EvaluationRecord>& records, const std::string& source_name,
                             const std::string& target_name) {
  std::ofstream sum(summary_path, std::ios::trunc);
  if (!sum) throw IoError("cannot open '" + summary_path + "' for writing");
  sum << detail::kSummaryHeader << '\n';
  std::ofstream iou_out(iou_path, std::ios::trunc);
  if (!iou_out) throw IoError("cannot open '" + iou_path + "' for writing");
  iou_out << detail::kIouHeader << '\n';
  if (records.empty()) return;

  const double sr = success_rate(records);
  const std::optional<double> aq = average_queries(records);
  double noise_sum = 0.0, noise_sq = 0.0;
  std::size_t n_success = 0;
  std::uint64_t total_queries = 0;
  for (const auto& r : records) {
    total_queries += r.queries_used;
    if (r.success) {
      noise_sum += static_cast<double>(r.noise_rate);
      noise_sq += static_cast<double>(r.noise_rate) * static_cast<double>(r.noise_rate);
      ++n_success;
    }
  }
  double noise_mean = std::numeric_limits<double>::quiet_NaN();
  double noise_std = std::numeric_limits<double>::quiet_NaN();
  if (n_success > 0) {
    noise_mean = noise_sum / static_cast<double>(n_success);
    noise_std = std::sqrt(std::max(0.0, noise_sq / static_cast<double>(n_success) - noise_mean * noise_mean));
  }
  sum << "CAM," << source_name << ',' << target_name << ',' << detail::fmt6(sr) << ','
      << detail::fmt6(aq ? *aq : std::numeric_limits<double>::quiet_NaN()) << ',' << detail::fmt6(noise_mean) << ','
      << detail::fmt6(noise_std) << ',' << total_queries << '\n';

  for (std::size_t t = 0; t < kIouThresholds.size(); ++t) {
    double acc = 0.0;
    for (const auto& r : records) acc += static_cast<double>(r.iou[t]);
    iou_out << detail::fmt6(kIouThresholds[t]) << ',' << detail::fmt6(acc / static_cast<double>(records.size()))
            << '\n';
  }
}

inline LabeledDataset load_dataset_for(const ExperimentConfig& cfg) {
  if (cfg.dataset_format == "png_dir") return load_png_dir(cfg.dataset_path);
  return load_idx(cfg.dataset_images, cfg.dataset_labels);
}

/// Full pipeline: filter the evaluation set on the target, then per image
/// compute the benign source map and edge mask, run the white-box stage,
/// run the black-box stage against a fresh capped oracle, score metrics with
/// the target-side interpreter and dump artifacts. Per-image failures are
/// recorded as warnings and skipped; the run itself never aborts mid-set.
inline ExperimentOutcome run_experiment(const ExperimentConfig& cfg) {
  namespace fs = std::filesystem;
  cfg.validate();
  const LabeledDataset data = load_dataset_for(cfg);
  const TrainedModel source = load_checkpoint(cfg.source_checkpoint);
  const TrainedModel target = load_checkpoint(cfg.target_checkpoint);
  source.spec.validate();
  target.spec.validate();
  if (target.meta.val_accuracy < cfg.accuracy_floor)
    throw ConfigError("target checkpoint '" + cfg.target_checkpoint + "' records validation accuracy " +
                      std::to_string(target.meta.val_accuracy) + ", below the floor " +
                      std::to_string(cfg.accuracy_floor));
  if (data.class_count > target.spec.class_count)
    throw ConfigError("dataset labels exceed the target model's class count");

  ExperimentOutcome outcome;
  const std::vector<std::size_t> chosen =
      select_evaluation_set(data, target, cfg.eval_size, cfg.confidence, cfg.seed, &outcome.warnings);

  fs::create_directories(cfg.output_dir);
  struct Slot {
    std::optional<EvaluationRecord> record;
    std::uint64_t violations = 0;
    std::string warning;
  };
  std::vector<Slot> slots(chosen.size());

  auto process = [&](std::size_t slot_idx) {
    Slot& slot = slots[slot_idx];
    const std::size_t idx = chosen[slot_idx];
    const Tensor<float>& x = data.images[idx];
    const int y = data.labels[idx];
    const std::string& id = data.ids[idx];
    try {
      MgaConfig mga_cfg = cfg.mga;
      mga_cfg.rng_seed = derive_seed(cfg.seed, 0xa77ac4ULL ^ static_cast<std::uint64_t>(slot_idx));

      AttackResult result;
      Tensor<float> mask;
      std::uint64_t violations = 0;
      QueryOracle oracle(target, mga_cfg.query_cap);
      if (cfg.seeding == "whitebox") {
        const AdversarialSeed seed = run_advedge(source, x, y, cfg.attack);
        violations += seed.invariant_violations;
        mask = seed.mask;
        result = run_mga(x, y, seed, oracle, mga_cfg);
      } else {
        if (cfg.attack.masked) {
          const AttributionMap benign_src = compute_cam(source, x, y);
          mask = edge_mask(sobel_edges(x), benign_src, cfg.attack.mask_threshold).n_w;
        } else {
          mask = Tensor<float>::full({x.dim(1), x.dim(2)}, 1.0f);
        }
        result = run_mga_random_init(x, y, mask, oracle, mga_cfg);
      }
      violations += result.invariant_violations;

      Tensor<float> delta = result.delta;
      if (delta.empty()) delta = Tensor<float>(x.shape());
      const Tensor<float> x_final = compose_clipped(x, delta);
      const AttributionMap map_benign = compute_cam(target, x, y);
      const AttributionMap map_adv = compute_cam(target, x_final, y);

      EvaluationRecord rec;
      rec.image_id = id;
      rec.y = y;
      rec.success = result.success;
      rec.queries_used = result.queries_used;
      rec.noise_rate = noise_rate(x, x_final, cfg.attack.epsilon);
      for (std::size_t t = 0; t < kIouThresholds.size(); ++t)
        rec.iou[t] = iou(map_benign, map_adv, kIouThresholds[t]);
      rec.adversarial_class = result.adversarial_class;
      slot.record = std::move(rec);
      slot.violations = violations;

      write_png((fs::path(cfg.output_dir) / (id + "_benign.png")).string(), x);
      write_png((fs::path(cfg.output_dir) / (id + "_adv.png")).string(), x_final);
      write_pgm((fs::path(cfg.output_dir) / (id + "_map_benign.pgm")).string(), map_benign.values);
      write_pgm((fs::path(cfg.output_dir) / (id + "_map_adv.pgm")).string(), map_adv.values);
    } catch (const std::exception& e) {
      slot.warning = "image '" + id + "' failed and was skipped: " + e.what();
    }
  };

  const int workers = std::max(1, std::min<int>(cfg.workers, static_cast<int>(chosen.size())));
  if (workers <= 1) {
    for (std::size_t i = 0; i < chosen.size(); ++i) process(i);
  } else {
    std::atomic<std::size_t> next{0};
    auto drain = [&] {
      for (;;) {
        const std::size_t i = next.fetch_add(1);
        if (i >= chosen.size()) break;
        process(i);
      }
    };
    std::vector<std::thread> pool;
    for (int i = 1; i < workers; ++i) pool.emplace_back(drain);
    drain();
    for (auto& t : pool) t.join();
  }

  for (auto& slot : slots) {
    if (!slot.warning.empty()) outcome.warnings.push_back(slot.warning);
    if (!slot.record) continue;
    outcome.total_queries += slot.record->queries_used;
    outcome.total_violations += slot.violations;
    outcome.records.push_back(std::move(*slot.record));
  }

  outcome.per_image_csv = (fs::path(cfg.output_dir) / "per_image.csv").string();
  outcome.summary_csv = (fs::path(cfg.output_dir) / "summary.csv").string();
  outcome.iou_csv = (fs::path(cfg.output_dir) / "iou_sweep.csv").string();
  write_per_image_csv(outcome.per_image_csv, outcome.records);
  {
    std::ofstream meta((fs::path(cfg.output_dir) / "run_meta.txt").string(), std::ios::trunc);
    meta << "interpreter=CAM\nsource=" << source.spec.name << "\ntarget=" << target.spec.name << "\n";
    if (!outcome.warnings.empty()) {
      std::ofstream warn((fs::path(cfg.output_dir) / "warnings.txt").string(), std::ios::trunc);
      for (const auto& w : outcome.warnings) warn << w << '\n';
    }
  }
  const std::vector<EvaluationRecord> reparsed = read_per_image_csv(outcome.per_image_csv);
  write_aggregates(outcome.summary_csv, outcome.iou_csv, reparsed, source.spec.name, target.spec.name);
  return outcome;
}

/// Rebuilds summary.csv and iou_sweep.csv from per_image.csv; pure
/// re-aggregation, no attacks.
inline void report_from_dir(const std::string& dir) {
  namespace fs = std::filesystem;
  const std::string meta_path = (fs::path(dir) / "run_meta.txt").string();
  std::ifstream meta(meta_path);
  if (!meta) throw IoError("cannot open '" + meta_path + "' (is this an attack output directory?)");
  std::string line, source_name, target_name;
  while (std::getline(meta, line)) {
    if (line.rfind("source=", 0) == 0) source_name = line.substr(7);
    if (line.rfind("target=", 0) == 0) target_name = line.substr(7);
  }
  const std::vector<EvaluationRecord> records =
      read_per_image_csv((fs::path(dir) / "per_image.csv").string());
  write_aggregates((fs::path(dir) / "summary.csv").string(), (fs::path(dir) / "iou_sweep.csv").string(), records,
                   source_name, target_name);
}

}  // namespace advedge
