#pragma once
// Experiment orchestration: deterministic CSV emission, binary checkpoints,
// run manifests, a worker pool capped by CONRADLAB_THREADS, and the five
// commands (train, eval, filter, baselines, ood) that tie the modules into
// reproducible end-to-end runs. Identical config + seed means byte-identical
// CSV outputs; only the manifest carries timestamps.

#include <atomic>
#include <charconv>
#include <cstdint>
#include <cstdlib>
#include <cstring>
#include <ctime>
#include <exception>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "json.hpp"

#include "conrad/baselines.hpp"
#include "conrad/calib.hpp"
#include "conrad/config.hpp"
#include "conrad/errors.hpp"
#include "conrad/grpo.hpp"
#include "conrad/triage.hpp"

namespace conrad {

inline unsigned thread_cap() {
  unsigned hw = std::thread::hardware_concurrency();
  if (hw == 0) hw = 1;
  const char* env = std::getenv("CONRADLAB_THREADS");
  if (env == nullptr || *env == '\0') return hw;
  unsigned requested = 0;
  const auto res = std::from_chars(env, env + std::strlen(env), requested);
  if (res.ec != std::errc{} || *res.ptr != '\0' || requested == 0)
    throw ConfigError("CONRADLAB_THREADS must be a positive integer");
  return requested < hw ? requested : hw;
}

// Runs fn(0..n-1) across up to thread_cap() workers. Callers must write
// results into per-index slots so the output order is thread-independent.
template <typename Fn>
inline void parallel_for(std::size_t n, Fn&& fn) {
  const std::size_t workers = std::min<std::size_t>(thread_cap(), n);
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::mutex error_mutex;
  auto work = [&]() {
    while (true) {
      const std::size_t i = next.fetch_add(1);
      if (i >= n) return;
      try {
        fn(i);
      } catch (...) {
        std::lock_guard<std::mutex> lock(error_mutex);
        if (!error) error = std::current_exception();
        return;
      }
    }
  };
  std::vector<std::thread> pool;
  pool.reserve(workers);
  for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(work);
  for (auto& t : pool) t.join();
  if (error) std::rethrow_exception(error);
}

namespace detail {

inline std::string csv_double(double v) {
  if (!std::isfinite(v)) throw NumericError("non-finite value in CSV output");
  return format_double(v);
}

inline void write_file(const std::filesystem::path& path,
                       const std::string& content) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw ConfigError("cannot open for writing: " + path.string());
  out.write(content.data(), static_cast<std::streamsize>(content.size()));
  if (!out) throw ConfigError("write failed: " + path.string());
}

inline std::string utc_timestamp() {
  const std::time_t now = std::time(nullptr);
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

inline std::string hash_hex(std::uint64_t h) {
  char buf[17];
  for (int i = 15; i >= 0; --i) {
    buf[i] = "0123456789abcdef"[h & 0xf];
    h >>= 4;
  }
  buf[16] = '\0';
  return buf;
}

}  // namespace detail

struct Checkpoint {
  std::uint32_t version = 1;
  Scenario scenario = Scenario::ReportLevel;
  std::uint64_t master_seed = 0;
  std::uint64_t training_hash = 0;
  std::uint64_t batches_completed = 0;
  PolicyParams params;
  PolicyParams reference;
};

namespace detail {

inline constexpr char kCheckpointMagic[8] = {'C', 'R', 'L', 'B',
                                             'C', 'K', 'P', 'T'};

template <typename T>
inline void write_pod(std::ofstream& out, const T& v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
inline void read_pod(std::ifstream& in, T& v, const std::string& path) {
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!in) throw MissingArtifactError("truncated checkpoint: " + path);
}

inline void write_params(std::ofstream& out, const PolicyParams& p) {
  const std::int32_t dims[4] = {p.shape.feature_dim, p.shape.num_findings,
                                p.shape.max_sentences, p.shape.hidden_dim};
  out.write(reinterpret_cast<const char*>(dims), sizeof(dims));
  const std::uint64_t n = p.values.size();
  write_pod(out, n);
  out.write(reinterpret_cast<const char*>(p.values.data()),
            static_cast<std::streamsize>(n * sizeof(double)));
}

inline PolicyParams read_params(std::ifstream& in, const std::string& path) {
  std::int32_t dims[4];
  in.read(reinterpret_cast<char*>(dims), sizeof(dims));
  if (!in) throw MissingArtifactError("truncated checkpoint: " + path);
  PolicyParams p;
  p.shape = PolicyShape{dims[0], dims[1], dims[2], dims[3]};
  std::uint64_t n = 0;
  read_pod(in, n, path);
  if (n != p.shape.param_count())
    throw MissingArtifactError("corrupt checkpoint: " + path);
  p.values.resize(n);
  in.read(reinterpret_cast<char*>(p.values.data()),
          static_cast<std::streamsize>(n * sizeof(double)));
  if (!in) throw MissingArtifactError("truncated checkpoint: " + path);
  return p;
}

}  // namespace detail

inline void save_checkpoint(const std::filesystem::path& path,
                            const Checkpoint& ck) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw ConfigError("cannot open for writing: " + path.string());
  out.write(detail::kCheckpointMagic, sizeof(detail::kCheckpointMagic));
  detail::write_pod(out, ck.version);
  const std::uint8_t scenario =
      ck.scenario == Scenario::ReportLevel ? 0 : 1;
  detail::write_pod(out, scenario);
  detail::write_pod(out, ck.master_seed);
  detail::write_pod(out, ck.training_hash);
  detail::write_pod(out, ck.batches_completed);
  detail::write_params(out, ck.params);
  detail::write_params(out, ck.reference);
  if (!out) throw ConfigError("write failed: " + path.string());
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw MissingArtifactError("checkpoint not found: " + path.string());
  char magic[8];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, detail::kCheckpointMagic, sizeof(magic)) != 0)
    throw MissingArtifactError("not a checkpoint file: " + path.string());
  Checkpoint ck;
  detail::read_pod(in, ck.version, path.string());
  if (ck.version != 1)
    throw MissingArtifactError("unsupported checkpoint version: " + path.string());
  std::uint8_t scenario = 0;
  detail::read_pod(in, scenario, path.string());
  ck.scenario = scenario == 0 ? Scenario::ReportLevel : Scenario::SentenceLevel;
  detail::read_pod(in, ck.master_seed, path.string());
  detail::read_pod(in, ck.training_hash, path.string());
  detail::read_pod(in, ck.batches_completed, path.string());
  ck.params = detail::read_params(in, path.string());
  ck.reference = detail::read_params(in, path.string());
  return ck;
}

struct EvalCollection {
  std::vector<EvalUnit> units;
  std::vector<CalibrationRecord> records;
  std::vector<SentenceEntry> sentences;      // sentence scenario only
  std::vector<StudySentenceSet> study_sets;  // sentence scenario only
  double mean_green = 0.0;
};

inline EvalCollection collect_eval(const PolicyParams& params,
                                   const EnvConfig& env,
                                   const PolicyConfig& pcfg,
                                   std::int64_t base_index, int n,
                                   std::uint64_t seed) {
  if (n < 1) throw std::invalid_argument("collect_eval: n must be >= 1");
  EvalCollection out;
  out.units.resize(n);
  parallel_for(static_cast<std::size_t>(n), [&](std::size_t i) {
    out.units[i] = sample_eval_unit(params, env, pcfg,
                                    base_index + static_cast<std::int64_t>(i),
                                    seed);
  });
  double green_sum = 0.0;
  for (const EvalUnit& unit : out.units) {
    append_records(unit, pcfg.scenario, out.records);
    green_sum += unit.targets.report_score;
    if (pcfg.scenario == Scenario::SentenceLevel) {
      StudySentenceSet set;
      set.study_id = unit.study.id;
      set.truth = unit.study.truth;
      for (std::size_t s = 0; s < unit.rollout.emitted_findings.size(); ++s) {
        const double conf = unit.rollout.confidence_tokens[s] / 10.0;
        out.sentences.push_back({conf, unit.targets.sentence_flags[s],
                                 unit.study.id, static_cast<int>(s)});
        set.findings.push_back(unit.rollout.emitted_findings[s]);
        set.confidences.push_back(conf);
      }
      out.study_sets.push_back(std::move(set));
    }
  }
  out.mean_green = green_sum / static_cast<double>(n);
  return out;
}

struct RunArtifacts {
  std::filesystem::path dir;
  std::vector<std::string> files;
};

enum class Command { Train, Eval, Filter, Baselines, Ood };

inline const char* command_name(Command c) {
  switch (c) {
    case Command::Train: return "train";
    case Command::Eval: return "eval";
    case Command::Filter: return "filter";
    case Command::Baselines: return "baselines";
    case Command::Ood: return "ood";
  }
  return "unknown";
}

struct RunOptions {
  std::filesystem::path out_dir;
  std::optional<std::filesystem::path> checkpoint;
};

namespace detail {

inline void write_manifest(const std::filesystem::path& dir, Command cmd,
                           const RunConfig& cfg,
                           const std::vector<std::string>& outputs) {
  nlohmann::json j;
  j["artifact"] = "conradlab";
  j["version"] = "0.1.0";
  j["command"] = command_name(cmd);
  j["config_hash"] = hash_hex(config_hash(cfg));
  j["training_hash"] = hash_hex(training_hash(cfg));
  j["master_seed"] = cfg.master_seed;
  j["created_utc"] = utc_timestamp();
  j["outputs"] = outputs;
  write_file(dir / "manifest.json", j.dump(2) + "\n");
}

inline std::filesystem::path prepare_dir(const RunOptions& opts) {
  if (opts.out_dir.empty()) throw ConfigError("output directory not set");
  std::error_code ec;
  std::filesystem::create_directories(opts.out_dir, ec);
  if (ec) throw ConfigError("cannot create output directory: " +
                            opts.out_dir.string());
  return opts.out_dir;
}

inline Checkpoint load_matching_checkpoint(const RunConfig& cfg,
                                           const RunOptions& opts) {
  if (!opts.checkpoint)
    throw MissingArtifactError("this command requires --checkpoint");
  Checkpoint ck = load_checkpoint(*opts.checkpoint);
  if (ck.training_hash != training_hash(cfg))
    throw ConfigError(
        "checkpoint was produced under a different training configuration "
        "or seed");
  return ck;
}

struct MetricRow {
  std::string method;
  std::size_t n_records = 0;
  double ece_value = 0.0;
  double corr_or_auroc = 0.0;
  double brier_value = 0.0;
  double mean_green = 0.0;
};

inline MetricRow metric_row(const std::string& method,
                            const std::vector<CalibrationRecord>& records,
                            Scenario scenario, double mean_green,
                            int num_bins) {
  MetricRow row;
  row.method = method;
  row.n_records = records.size();
  row.ece_value = ece(records, num_bins);
  row.corr_or_auroc =
      scenario == Scenario::ReportLevel ? pearson(records) : auroc(records);
  row.brier_value = brier(records);
  row.mean_green = mean_green;
  return row;
}

inline std::string metrics_csv(const std::vector<MetricRow>& rows) {
  std::string csv =
      "method,n_records,ece,correlation_or_auroc,brier,mean_oracle_score\n";
  for (const auto& r : rows) {
    csv += r.method + "," + std::to_string(r.n_records) + "," +
           csv_double(r.ece_value) + "," + csv_double(r.corr_or_auroc) + "," +
           csv_double(r.brier_value) + "," + csv_double(r.mean_green) + "\n";
  }
  return csv;
}

inline std::string reliability_csv(const std::vector<CalibrationRecord>& records,
                                   int num_bins) {
  std::string csv = "bin_lo,bin_hi,count,mean_conf,mean_target\n";
  for (const ReliabilityBin& bin : reliability_curve(records, num_bins)) {
    csv += csv_double(bin.lower) + "," + csv_double(bin.upper) + "," +
           std::to_string(bin.count) + ",";
    if (bin.count > 0)
      csv += csv_double(bin.mean_confidence) + "," + csv_double(bin.mean_target);
    else
      csv += ",";
    csv += "\n";
  }
  return csv;
}

inline std::string histogram_csv(const std::vector<CalibrationRecord>& records) {
  std::string csv = "level,count\n";
  const auto counts = confidence_histogram(records);
  for (std::size_t level = 0; level < counts.size(); ++level)
    csv += std::to_string(level) + "," + std::to_string(counts[level]) + "\n";
  return csv;
}

inline RunArtifacts run_train(const RunConfig& cfg, const RunOptions& opts) {
  const auto dir = prepare_dir(opts);
  const EnvConfig env = build_env(cfg);
  const PolicyConfig pcfg = build_policy(cfg);
  const TrainResult result =
      train(env, pcfg, cfg.reward, cfg.grpo, cfg.master_seed);

  Checkpoint ck;
  ck.scenario = pcfg.scenario;
  ck.master_seed = cfg.master_seed;
  ck.training_hash = training_hash(cfg);
  ck.batches_completed = static_cast<std::uint64_t>(result.batches_completed);
  ck.params = result.params;
  ck.reference = result.reference;
  save_checkpoint(dir / "checkpoint.bin", ck);

  std::string csv = "batch,mean_reward,mean_kl,clip_fraction,probe_ece\n";
  for (const BatchStats& row : result.history) {
    csv += std::to_string(row.batch) + "," + csv_double(row.mean_reward) + "," +
           csv_double(row.mean_kl) + "," + csv_double(row.clip_fraction) + ",";
    if (row.has_probe) csv += csv_double(row.probe_ece);
    csv += "\n";
  }
  write_file(dir / "history.csv", csv);

  RunArtifacts artifacts{dir, {"checkpoint.bin", "history.csv"}};
  write_manifest(dir, Command::Train, cfg, artifacts.files);
  return artifacts;
}

inline RunArtifacts run_eval_like(const RunConfig& cfg, const RunOptions& opts,
                                  Command cmd) {
  const auto dir = prepare_dir(opts);
  const Checkpoint ck = load_matching_checkpoint(cfg, opts);
  EnvConfig env = build_env(cfg);
  const PolicyConfig pcfg = build_policy(cfg);
  const bool ood = cmd == Command::Ood;
  if (ood) {
    const double per_coord =
        cfg.eval.ood_offset_norm / std::sqrt(static_cast<double>(env.feature_dim));
    env = shift_distribution(env, std::vector<double>(env.feature_dim, per_coord));
  }
  const PolicyParams untrained = init_policy(pcfg, env.feature_dim,
                                             env.num_findings, env.max_sentences);
  const std::uint64_t eval_seed =
      derive_seed(cfg.master_seed, stream_tag::kEvalRollout);
  const EvalCollection trained =
      collect_eval(ck.params, env, pcfg, kEvalStudyBase,
                   cfg.eval.num_eval_studies, derive_seed(eval_seed, 1));
  const EvalCollection base =
      collect_eval(untrained, env, pcfg, kEvalStudyBase,
                   cfg.eval.num_eval_studies, derive_seed(eval_seed, 2));

  const std::string prefix = ood ? "ood_" : "";
  std::vector<MetricRow> rows;
  rows.push_back(metric_row("trained", trained.records, pcfg.scenario,
                            trained.mean_green, cfg.eval.num_bins));
  rows.push_back(metric_row("untrained", base.records, pcfg.scenario,
                            base.mean_green, cfg.eval.num_bins));
  RunArtifacts artifacts{dir, {}};
  auto emit = [&](const std::string& name, const std::string& content) {
    write_file(dir / name, content);
    artifacts.files.push_back(name);
  };
  emit(prefix + "eval_calibration.csv", metrics_csv(rows));
  emit(prefix + "reliability_trained.csv",
       reliability_csv(trained.records, cfg.eval.num_bins));
  emit(prefix + "reliability_untrained.csv",
       reliability_csv(base.records, cfg.eval.num_bins));
  emit(prefix + "histogram_trained.csv", histogram_csv(trained.records));
  emit(prefix + "histogram_untrained.csv", histogram_csv(base.records));
  write_manifest(dir, cmd, cfg, artifacts.files);
  return artifacts;
}

inline RunArtifacts run_filter(const RunConfig& cfg, const RunOptions& opts) {
  const auto dir = prepare_dir(opts);
  const Checkpoint ck = load_matching_checkpoint(cfg, opts);
  if (ck.scenario != Scenario::SentenceLevel)
    throw ConfigError("filter requires a sentence-level checkpoint");
  const EnvConfig env = build_env(cfg);
  const PolicyConfig pcfg = build_policy(cfg);
  const std::uint64_t eval_seed =
      derive_seed(cfg.master_seed, stream_tag::kEvalRollout);
  const EvalCollection trained =
      collect_eval(ck.params, env, pcfg, kEvalStudyBase,
                   cfg.eval.num_eval_studies, derive_seed(eval_seed, 1));
  if (trained.sentences.empty())
    throw NumericError("filter: evaluation produced no sentences");

  std::string csv =
      "threshold,n_sentences,precision,coverage,"
      "mean_report_score_after_filtering\n";
  for (const FilterRow& row :
       risk_coverage_table(trained.sentences, cfg.eval.thresholds)) {
    csv += csv_double(row.threshold) + "," + std::to_string(row.retained_count) +
           ",";
    if (row.precision) csv += csv_double(*row.precision);
    csv += "," + csv_double(row.coverage) + "," +
           csv_double(mean_filtered_report_score(trained.study_sets,
                                                 row.threshold)) +
           "\n";
  }
  write_file(dir / "filter_table.csv", csv);
  RunArtifacts artifacts{dir, {"filter_table.csv"}};
  write_manifest(dir, Command::Filter, cfg, artifacts.files);
  return artifacts;
}

inline RunArtifacts run_baselines(const RunConfig& cfg, const RunOptions& opts) {
  const auto dir = prepare_dir(opts);
  const Checkpoint ck = load_matching_checkpoint(cfg, opts);
  if (ck.scenario != Scenario::ReportLevel)
    throw ConfigError("baselines requires a report-level checkpoint");
  if (cfg.grpo.num_studies < 10)
    throw ConfigError("baselines requires grpo.num_studies >= 10 to train the probe");
  const EnvConfig env = build_env(cfg);
  const PolicyConfig pcfg = build_policy(cfg);
  const PolicyParams untrained = init_policy(pcfg, env.feature_dim,
                                             env.num_findings, env.max_sentences);
  const int n = cfg.eval.num_eval_studies;

  // Shared evaluation rollouts of the untrained policy: every baseline pairs
  // its confidence with the same target scores.
  const std::uint64_t base_seed =
      derive_seed(cfg.master_seed, stream_tag::kBaselineRollout);
  std::vector<Study> studies(n);
  std::vector<Rollout> rollouts(n);
  std::vector<CorrectnessTargets> targets(n);
  std::vector<std::vector<double>> hidden(n);
  parallel_for(static_cast<std::size_t>(n), [&](std::size_t i) {
    studies[i] = sample_study(env, kEvalStudyBase + static_cast<std::int64_t>(i));
    Rng rng(derive_seed(base_seed, static_cast<std::uint64_t>(studies[i].id)));
    rollouts[i] = rollout(untrained, studies[i], pcfg, rng,
                          ConfidenceSampling::Greedy);
    targets[i] = make_targets(rollouts[i], studies[i]);
    hidden[i] = post_report_hidden(untrained, studies[i], rollouts[i]);
  });
  double green_sum = 0.0;
  for (const auto& t : targets) green_sum += t.report_score;
  const double base_green = green_sum / static_cast<double>(n);

  const PTrueHead head = make_p_true_head(pcfg.hidden_dim, cfg.master_seed);
  const std::uint64_t sc_seed =
      derive_seed(cfg.master_seed, stream_tag::kSelfConsistency);

  std::vector<CalibrationRecord> verbalize(n), seqprob(n), ptrue(n),
      selfcons(n);
  parallel_for(static_cast<std::size_t>(n), [&](std::size_t i) {
    const double target = targets[i].report_score;
    verbalize[i] = {rollouts[i].confidence_tokens.at(0) / 10.0, target};
    seqprob[i] = {sequence_probability(rollouts[i]), target};
    ptrue[i] = {p_true(untrained, studies[i], rollouts[i], head), target};
    const std::set<int> emitted(rollouts[i].emitted_findings.begin(),
                                rollouts[i].emitted_findings.end());
    selfcons[i] = {
        self_consistency(untrained, studies[i], emitted, pcfg,
                         cfg.eval.self_consistency_k,
                         derive_seed(sc_seed,
                                     static_cast<std::uint64_t>(studies[i].id))),
        target};
  });

  // Probe training data: untrained-policy rollouts over the training block.
  const int probe_n = cfg.grpo.num_studies;
  const std::uint64_t probe_seed =
      derive_seed(cfg.master_seed, stream_tag::kProbeData);
  std::vector<std::vector<double>> probe_states(probe_n);
  std::vector<double> probe_targets(probe_n);
  parallel_for(static_cast<std::size_t>(probe_n), [&](std::size_t i) {
    const Study study = sample_study(env, static_cast<std::int64_t>(i));
    Rng rng(derive_seed(probe_seed, static_cast<std::uint64_t>(i)));
    const Rollout r =
        rollout(untrained, study, pcfg, rng, ConfidenceSampling::Greedy);
    probe_states[i] = post_report_hidden(untrained, study, r);
    probe_targets[i] = make_targets(r, study).report_score;
  });
  std::vector<std::size_t> train_idx, val_idx;
  const std::size_t split = static_cast<std::size_t>(probe_n) * 4 / 5;
  for (std::size_t i = 0; i < static_cast<std::size_t>(probe_n); ++i)
    (i < split ? train_idx : val_idx).push_back(i);
  const ProbeModel probe = train_probe(probe_states, probe_targets, train_idx,
                                       val_idx, ProbeConfig{});
  std::vector<CalibrationRecord> probe_records(n);
  for (int i = 0; i < n; ++i)
    probe_records[i] = {probe_predict(probe, hidden[i]),
                        targets[i].report_score};

  const EvalCollection trained = collect_eval(
      ck.params, env, pcfg, kEvalStudyBase, n,
      derive_seed(derive_seed(cfg.master_seed, stream_tag::kEvalRollout), 1));

  std::vector<MetricRow> rows;
  rows.push_back(metric_row("verbalize_base", verbalize, pcfg.scenario,
                            base_green, cfg.eval.num_bins));
  rows.push_back(metric_row("sequence_probability", seqprob, pcfg.scenario,
                            base_green, cfg.eval.num_bins));
  rows.push_back(
      metric_row("p_true", ptrue, pcfg.scenario, base_green, cfg.eval.num_bins));
  rows.push_back(metric_row("self_consistency", selfcons, pcfg.scenario,
                            base_green, cfg.eval.num_bins));
  rows.push_back(metric_row("trained_probe", probe_records, pcfg.scenario,
                            base_green, cfg.eval.num_bins));
  rows.push_back(metric_row("trained_policy", trained.records, pcfg.scenario,
                            trained.mean_green, cfg.eval.num_bins));
  write_file(dir / "baselines.csv", metrics_csv(rows));
  RunArtifacts artifacts{dir, {"baselines.csv"}};
  write_manifest(dir, Command::Baselines, cfg, artifacts.files);
  return artifacts;
}

}  // namespace detail

inline RunArtifacts run_experiment(const RunConfig& cfg, Command cmd,
                                   const RunOptions& opts) {
  switch (cmd) {
    case Command::Train: return detail::run_train(cfg, opts);
    case Command::Eval: return detail::run_eval_like(cfg, opts, Command::Eval);
    case Command::Ood: return detail::run_eval_like(cfg, opts, Command::Ood);
    case Command::Filter: return detail::run_filter(cfg, opts);
    case Command::Baselines: return detail::run_baselines(cfg, opts);
  }
  throw ConfigError("unknown command");
}

}  // namespace conrad
