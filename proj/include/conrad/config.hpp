#pragma once
// Run configuration: a line-oriented key=value format with dotted section
// prefixes, full-line # comments, unknown-key rejection, and a canonical
// serializer such that parse(serialize(c)) == c. The env truth rule and the
// policy init seed are not stored; they derive from master_seed, so a config
// file plus a seed pins the entire experiment.

#include <charconv>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "conrad/env.hpp"
#include "conrad/errors.hpp"
#include "conrad/grpo.hpp"
#include "conrad/policy.hpp"
#include "conrad/reward.hpp"
#include "conrad/rng.hpp"

namespace conrad {

struct EnvSettings {
  int feature_dim = 16;
  int num_findings = 12;
  int max_sentences = 6;
  bool operator==(const EnvSettings&) const = default;
};

struct EvalSettings {
  int num_eval_studies = 1000;
  int num_bins = 10;
  std::vector<double> thresholds{0.0, 0.6, 0.8, 1.0};
  double ood_offset_norm = 2.0;
  int self_consistency_k = 10;
  bool operator==(const EvalSettings&) const = default;
};

struct RunConfig {
  EnvSettings env;
  PolicyConfig policy;
  RewardConfig reward;
  GrpoConfig grpo;
  EvalSettings eval;
  std::uint64_t master_seed = 1;
  std::string output_dir = "out";
};

inline bool operator==(const PolicyConfig& a, const PolicyConfig& b) {
  return a.hidden_dim == b.hidden_dim && a.scenario == b.scenario &&
         a.temperature == b.temperature && a.init_scale == b.init_scale &&
         a.seed == b.seed;
}

inline bool operator==(const RewardConfig& a, const RewardConfig& b) {
  return a.lambda == b.lambda && a.epsilon == b.epsilon &&
         a.format_penalty == b.format_penalty;
}

inline bool operator==(const GrpoConfig& a, const GrpoConfig& b) {
  return a.group_size == b.group_size && a.clip_range == b.clip_range &&
         a.kl_coeff == b.kl_coeff && a.learning_rate == b.learning_rate &&
         a.epochs_per_batch == b.epochs_per_batch && a.std_floor == b.std_floor &&
         a.num_studies == b.num_studies && a.probe_interval == b.probe_interval &&
         a.probe_size == b.probe_size && a.probe_min_delta == b.probe_min_delta &&
         a.probe_patience == b.probe_patience &&
         a.reference_refresh_interval == b.reference_refresh_interval;
}

inline bool operator==(const RunConfig& a, const RunConfig& b) {
  return a.env == b.env && a.policy == b.policy && a.reward == b.reward &&
         a.grpo == b.grpo && a.eval == b.eval && a.master_seed == b.master_seed &&
         a.output_dir == b.output_dir;
}

namespace detail {

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t' || s.front() == '\r'))
    s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r'))
    s.remove_suffix(1);
  return s;
}

inline std::string line_msg(int line, const std::string& msg) {
  return "line " + std::to_string(line) + ": " + msg;
}

template <typename T>
inline T parse_number(std::string_view value, int line, const std::string& key) {
  T out{};
  const char* first = value.data();
  const char* last = value.data() + value.size();
  const auto res = std::from_chars(first, last, out);
  if (res.ec != std::errc{} || res.ptr != last)
    throw ConfigError(line_msg(line, "invalid value for '" + key + "'"));
  return out;
}

inline std::vector<double> parse_double_list(std::string_view value, int line,
                                             const std::string& key) {
  std::vector<double> out;
  std::size_t start = 0;
  const std::string v(value);
  while (start <= v.size()) {
    const std::size_t comma = v.find(',', start);
    const std::string item(trim(std::string_view(v).substr(
        start, comma == std::string::npos ? std::string::npos : comma - start)));
    if (item.empty())
      throw ConfigError(line_msg(line, "empty element in '" + key + "'"));
    out.push_back(parse_number<double>(item, line, key));
    if (comma == std::string::npos) break;
    start = comma + 1;
  }
  return out;
}

inline std::string format_double(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

inline void require(bool ok, int line, const std::string& msg) {
  if (!ok) throw ConfigError(line_msg(line, msg));
}

}  // namespace detail

inline RunConfig parse_config(const std::string& text) {
  RunConfig cfg;
  bool num_studies_set = false;
  int line_no = 0;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    const std::size_t eol = text.find('\n', pos);
    std::string_view line(text.data() + pos,
                          (eol == std::string::npos ? text.size() : eol) - pos);
    pos = eol == std::string::npos ? text.size() + 1 : eol + 1;
    ++line_no;
    line = detail::trim(line);
    if (line.empty() || line.front() == '#') continue;
    const std::size_t eq = line.find('=');
    if (eq == std::string_view::npos)
      throw ConfigError(detail::line_msg(line_no, "expected key=value"));
    const std::string key(detail::trim(line.substr(0, eq)));
    const std::string_view value = detail::trim(line.substr(eq + 1));
    const int ln = line_no;
    using detail::parse_number;
    using detail::require;

    if (key == "env.feature_dim") {
      cfg.env.feature_dim = parse_number<int>(value, ln, key);
      require(cfg.env.feature_dim >= 1, ln, "env.feature_dim must be >= 1");
    } else if (key == "env.num_findings") {
      cfg.env.num_findings = parse_number<int>(value, ln, key);
      require(cfg.env.num_findings >= 2, ln, "env.num_findings must be >= 2");
    } else if (key == "env.max_sentences") {
      cfg.env.max_sentences = parse_number<int>(value, ln, key);
      require(cfg.env.max_sentences >= 1, ln, "env.max_sentences must be >= 1");
    } else if (key == "policy.hidden_dim") {
      cfg.policy.hidden_dim = parse_number<int>(value, ln, key);
      require(cfg.policy.hidden_dim >= 1, ln, "policy.hidden_dim must be >= 1");
    } else if (key == "policy.scenario") {
      if (value == "report") {
        cfg.policy.scenario = Scenario::ReportLevel;
      } else if (value == "sentence") {
        cfg.policy.scenario = Scenario::SentenceLevel;
      } else {
        throw ConfigError(
            detail::line_msg(ln, "policy.scenario must be 'report' or 'sentence'"));
      }
    } else if (key == "policy.temperature") {
      cfg.policy.temperature = parse_number<double>(value, ln, key);
      require(cfg.policy.temperature > 0.0, ln, "policy.temperature must be > 0");
    } else if (key == "policy.init_scale") {
      cfg.policy.init_scale = parse_number<double>(value, ln, key);
      require(cfg.policy.init_scale >= 0.0, ln, "policy.init_scale must be >= 0");
    } else if (key == "reward.lambda") {
      cfg.reward.lambda = parse_number<double>(value, ln, key);
      require(cfg.reward.lambda > 0.0, ln, "reward.lambda must be > 0");
    } else if (key == "reward.epsilon") {
      cfg.reward.epsilon = parse_number<double>(value, ln, key);
      require(cfg.reward.epsilon > 0.0 && cfg.reward.epsilon < 0.5, ln,
              "reward.epsilon must be in (0, 0.5)");
    } else if (key == "reward.format_penalty") {
      cfg.reward.format_penalty = parse_number<double>(value, ln, key);
      require(cfg.reward.format_penalty < 0.0, ln,
              "reward.format_penalty must be negative");
    } else if (key == "grpo.group_size") {
      cfg.grpo.group_size = parse_number<int>(value, ln, key);
      require(cfg.grpo.group_size >= 2, ln, "grpo.group_size must be >= 2");
    } else if (key == "grpo.clip_range") {
      cfg.grpo.clip_range = parse_number<double>(value, ln, key);
      require(cfg.grpo.clip_range > 0.0 && cfg.grpo.clip_range < 1.0, ln,
              "grpo.clip_range must be in (0, 1)");
    } else if (key == "grpo.kl_coeff") {
      cfg.grpo.kl_coeff = parse_number<double>(value, ln, key);
      require(cfg.grpo.kl_coeff >= 0.0, ln, "grpo.kl_coeff must be >= 0");
    } else if (key == "grpo.learning_rate") {
      cfg.grpo.learning_rate = parse_number<double>(value, ln, key);
      require(cfg.grpo.learning_rate > 0.0, ln, "grpo.learning_rate must be > 0");
    } else if (key == "grpo.epochs_per_batch") {
      cfg.grpo.epochs_per_batch = parse_number<int>(value, ln, key);
      require(cfg.grpo.epochs_per_batch >= 1, ln,
              "grpo.epochs_per_batch must be >= 1");
    } else if (key == "grpo.std_floor") {
      cfg.grpo.std_floor = parse_number<double>(value, ln, key);
      require(cfg.grpo.std_floor > 0.0, ln, "grpo.std_floor must be > 0");
    } else if (key == "grpo.num_studies") {
      cfg.grpo.num_studies = parse_number<int>(value, ln, key);
      require(cfg.grpo.num_studies >= 0, ln, "grpo.num_studies must be >= 0");
      num_studies_set = true;
    } else if (key == "grpo.probe_interval") {
      cfg.grpo.probe_interval = parse_number<int>(value, ln, key);
      require(cfg.grpo.probe_interval >= 1, ln, "grpo.probe_interval must be >= 1");
    } else if (key == "grpo.probe_size") {
      cfg.grpo.probe_size = parse_number<int>(value, ln, key);
      require(cfg.grpo.probe_size >= 1, ln, "grpo.probe_size must be >= 1");
    } else if (key == "grpo.probe_min_delta") {
      cfg.grpo.probe_min_delta = parse_number<double>(value, ln, key);
      require(cfg.grpo.probe_min_delta >= 0.0, ln,
              "grpo.probe_min_delta must be >= 0");
    } else if (key == "grpo.probe_patience") {
      cfg.grpo.probe_patience = parse_number<int>(value, ln, key);
      require(cfg.grpo.probe_patience >= 1, ln, "grpo.probe_patience must be >= 1");
    } else if (key == "grpo.reference_refresh_interval") {
      cfg.grpo.reference_refresh_interval = parse_number<int>(value, ln, key);
      require(cfg.grpo.reference_refresh_interval >= 0, ln,
              "grpo.reference_refresh_interval must be >= 0");
    } else if (key == "eval.num_eval_studies") {
      cfg.eval.num_eval_studies = parse_number<int>(value, ln, key);
      require(cfg.eval.num_eval_studies >= 1, ln,
              "eval.num_eval_studies must be >= 1");
    } else if (key == "eval.num_bins") {
      cfg.eval.num_bins = parse_number<int>(value, ln, key);
      require(cfg.eval.num_bins >= 1, ln, "eval.num_bins must be >= 1");
    } else if (key == "eval.thresholds") {
      cfg.eval.thresholds = detail::parse_double_list(value, ln, key);
      for (double t : cfg.eval.thresholds)
        require(t >= 0.0 && t <= 1.0, ln, "eval.thresholds must lie in [0, 1]");
    } else if (key == "eval.ood_offset_norm") {
      cfg.eval.ood_offset_norm = parse_number<double>(value, ln, key);
      require(cfg.eval.ood_offset_norm >= 0.0, ln,
              "eval.ood_offset_norm must be >= 0");
    } else if (key == "eval.self_consistency_k") {
      cfg.eval.self_consistency_k = parse_number<int>(value, ln, key);
      require(cfg.eval.self_consistency_k >= 1, ln,
              "eval.self_consistency_k must be >= 1");
    } else if (key == "master_seed") {
      cfg.master_seed = parse_number<std::uint64_t>(value, ln, key);
    } else if (key == "output_dir") {
      require(!value.empty(), ln, "output_dir must be nonempty");
      cfg.output_dir = std::string(value);
    } else {
      throw ConfigError(detail::line_msg(ln, "unknown key '" + key + "'"));
    }
  }
  if (!num_studies_set && cfg.policy.scenario == Scenario::SentenceLevel)
    cfg.grpo.num_studies = 1500;
  try {
    validate(cfg.reward);
    validate(cfg.grpo);
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  return cfg;
}

namespace detail {

inline std::string serialize_training_sections(const RunConfig& cfg) {
  using detail::format_double;
  std::string out;
  out += "env.feature_dim=" + std::to_string(cfg.env.feature_dim) + "\n";
  out += "env.num_findings=" + std::to_string(cfg.env.num_findings) + "\n";
  out += "env.max_sentences=" + std::to_string(cfg.env.max_sentences) + "\n";
  out += "policy.hidden_dim=" + std::to_string(cfg.policy.hidden_dim) + "\n";
  out += std::string("policy.scenario=") +
         (cfg.policy.scenario == Scenario::ReportLevel ? "report" : "sentence") +
         "\n";
  out += "policy.temperature=" + format_double(cfg.policy.temperature) + "\n";
  out += "policy.init_scale=" + format_double(cfg.policy.init_scale) + "\n";
  out += "reward.lambda=" + format_double(cfg.reward.lambda) + "\n";
  out += "reward.epsilon=" + format_double(cfg.reward.epsilon) + "\n";
  out += "reward.format_penalty=" + format_double(cfg.reward.format_penalty) + "\n";
  out += "grpo.group_size=" + std::to_string(cfg.grpo.group_size) + "\n";
  out += "grpo.clip_range=" + format_double(cfg.grpo.clip_range) + "\n";
  out += "grpo.kl_coeff=" + format_double(cfg.grpo.kl_coeff) + "\n";
  out += "grpo.learning_rate=" + format_double(cfg.grpo.learning_rate) + "\n";
  out += "grpo.epochs_per_batch=" + std::to_string(cfg.grpo.epochs_per_batch) + "\n";
  out += "grpo.std_floor=" + format_double(cfg.grpo.std_floor) + "\n";
  out += "grpo.num_studies=" + std::to_string(cfg.grpo.num_studies) + "\n";
  out += "grpo.probe_interval=" + std::to_string(cfg.grpo.probe_interval) + "\n";
  out += "grpo.probe_size=" + std::to_string(cfg.grpo.probe_size) + "\n";
  out += "grpo.probe_min_delta=" + format_double(cfg.grpo.probe_min_delta) + "\n";
  out += "grpo.probe_patience=" + std::to_string(cfg.grpo.probe_patience) + "\n";
  out += "grpo.reference_refresh_interval=" +
         std::to_string(cfg.grpo.reference_refresh_interval) + "\n";
  out += "master_seed=" + std::to_string(cfg.master_seed) + "\n";
  return out;
}

}  // namespace detail

inline std::string serialize_config(const RunConfig& cfg) {
  using detail::format_double;
  std::string out = detail::serialize_training_sections(cfg);
  out += "eval.num_eval_studies=" + std::to_string(cfg.eval.num_eval_studies) + "\n";
  out += "eval.num_bins=" + std::to_string(cfg.eval.num_bins) + "\n";
  out += "eval.thresholds=";
  for (std::size_t i = 0; i < cfg.eval.thresholds.size(); ++i) {
    if (i) out += ",";
    out += format_double(cfg.eval.thresholds[i]);
  }
  out += "\n";
  out += "eval.ood_offset_norm=" + format_double(cfg.eval.ood_offset_norm) + "\n";
  out += "eval.self_consistency_k=" + std::to_string(cfg.eval.self_consistency_k) +
         "\n";
  out += "output_dir=" + cfg.output_dir + "\n";
  return out;
}

inline std::uint64_t fnv1a64(std::string_view data) {
  std::uint64_t hash = 0xcbf29ce484222325ull;
  for (unsigned char c : data) {
    hash ^= c;
    hash *= 0x100000001b3ull;
  }
  return hash;
}

inline std::uint64_t config_hash(const RunConfig& cfg) {
  return fnv1a64(serialize_config(cfg));
}

// Hash over the sections that determine training: env, policy, reward, grpo
// and the master seed. Eval-only settings and the output path may vary
// between a checkpoint's producer and its consumers.
inline std::uint64_t training_hash(const RunConfig& cfg) {
  return fnv1a64(detail::serialize_training_sections(cfg));
}

inline EnvConfig build_env(const RunConfig& cfg) {
  return make_env_config(cfg.env.feature_dim, cfg.env.num_findings,
                         cfg.env.max_sentences,
                         derive_seed(cfg.master_seed, stream_tag::kEnvSeed));
}

inline PolicyConfig build_policy(const RunConfig& cfg) {
  PolicyConfig pcfg = cfg.policy;
  pcfg.seed = derive_seed(cfg.master_seed, stream_tag::kPolicySeed);
  return pcfg;
}

}  // namespace conrad
