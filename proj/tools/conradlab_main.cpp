// conradlab command-line driver. Subcommands: train, eval, filter,
// baselines, ood. Exit codes: 0 success, 2 config error, 3 missing
// artifact, 4 numeric failure.

#include <cstdint>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>

#include "CLI11.hpp"

#include "conrad/runio.hpp"

namespace {

struct CliState {
  std::string config_path;
  std::string out_dir;
  std::string checkpoint_path;
  std::uint64_t seed = 0;
  CLI::Option* seed_opt = nullptr;
};

void add_common_options(CLI::App* cmd, CliState& state) {
  cmd->add_option("--config", state.config_path, "path to a key=value config file");
  cmd->add_option("--out", state.out_dir, "output directory (default: config output_dir)");
  state.seed_opt = cmd->add_option("--seed", state.seed, "master seed override");
  cmd->add_option("--checkpoint", state.checkpoint_path, "path to a trained checkpoint");
}

std::string read_config_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw conrad::ConfigError("cannot read config file: " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

int run(conrad::Command cmd, const CliState& state) {
  conrad::RunConfig cfg = conrad::parse_config(
      state.config_path.empty() ? std::string() : read_config_file(state.config_path));
  if (state.seed_opt->count() > 0) cfg.master_seed = state.seed;
  if (!state.out_dir.empty()) cfg.output_dir = state.out_dir;
  conrad::RunOptions opts;
  opts.out_dir = cfg.output_dir;
  if (!state.checkpoint_path.empty()) opts.checkpoint = state.checkpoint_path;
  const conrad::RunArtifacts artifacts = conrad::run_experiment(cfg, cmd, opts);
  std::printf("%s: wrote %zu file(s) to %s\n", conrad::command_name(cmd),
              artifacts.files.size() + 1, artifacts.dir.string().c_str());
  return conrad::exit_code::kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"conradlab: RL calibration of verbalized confidence for synthetic reports"};
  app.require_subcommand(1);
  CliState state;
  CLI::App* train_cmd = app.add_subcommand("train", "train a policy with GRPO");
  CLI::App* eval_cmd =
      app.add_subcommand("eval", "calibration metrics for a trained checkpoint");
  CLI::App* filter_cmd =
      app.add_subcommand("filter", "confidence-threshold triage table");
  CLI::App* baselines_cmd =
      app.add_subcommand("baselines", "comparison confidence estimators");
  CLI::App* ood_cmd =
      app.add_subcommand("ood", "evaluate a checkpoint under covariate shift");
  for (CLI::App* cmd : {train_cmd, eval_cmd, filter_cmd, baselines_cmd, ood_cmd})
    add_common_options(cmd, state);

  CLI11_PARSE(app, argc, argv);

  conrad::Command cmd = conrad::Command::Train;
  if (eval_cmd->parsed()) cmd = conrad::Command::Eval;
  if (filter_cmd->parsed()) cmd = conrad::Command::Filter;
  if (baselines_cmd->parsed()) cmd = conrad::Command::Baselines;
  if (ood_cmd->parsed()) cmd = conrad::Command::Ood;

  try {
    return run(cmd, state);
  } catch (const conrad::ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return conrad::exit_code::kConfig;
  } catch (const conrad::MissingArtifactError& e) {
    std::fprintf(stderr, "missing artifact: %s\n", e.what());
    return conrad::exit_code::kMissingArtifact;
  } catch (const conrad::NumericError& e) {
    std::fprintf(stderr, "numeric failure: %s\n", e.what());
    return conrad::exit_code::kNumeric;
  } catch (const std::invalid_argument& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return conrad::exit_code::kConfig;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
}
