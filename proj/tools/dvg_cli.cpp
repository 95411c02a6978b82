// Command-line entry point for the deterministic value-gradient toolkit.
//
// Subcommands:
//   train       run one training configuration
//   experiment  run a multi-seed manifest and aggregate each arm
//   aggregate   median + central 75% band across seed curves
//   verify      closed-loop analysis catalogue vs finite-difference oracles
//   gradcheck   derivative and identity check suite
//   visitation  state-visitation histogram of a policy
//
// Exit codes: 0 success, 1 validation error, 2 check failure, 3 runtime
// failure.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "dvg/experiment.hpp"
#include "dvg/training.hpp"
#include "dvg/verify.hpp"
#include "dvg/version.hpp"

namespace {

constexpr int kOk = 0;
constexpr int kValidationError = 1;
constexpr int kCheckFailure = 2;
constexpr int kRuntimeFailure = 3;

void write_text_file(const std::string& path, const std::string& text) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot write " + path);
  f << text;
}

int cmd_train(const std::string& config_path, const std::string& out_dir,
              long long seed_override) {
  dvg::TrainConfig cfg = dvg::TrainConfig::from_file(config_path);
  if (seed_override >= 0)
    cfg.seed = static_cast<unsigned long long>(seed_override);
  dvg::RunLog log = dvg::train_run(cfg, out_dir);
  std::printf("trained %d episodes (%lld real steps) in %.1fs\n",
              static_cast<int>(log.episodes.size()),
              log.episodes.empty() ? 0LL : log.episodes.back().steps,
              log.wall_time_sec);
  if (!log.episodes.empty())
    std::printf("final return %.4f\n", log.episodes.back().ret);
  if (!out_dir.empty()) std::printf("run written to %s\n", out_dir.c_str());
  return kOk;
}

int cmd_experiment(const std::string& manifest_path, const std::string& out_dir,
                   int jobs) {
  dvg::ExperimentManifest manifest =
      dvg::ExperimentManifest::from_file(manifest_path);
  std::vector<dvg::RunOutcome> outcomes =
      dvg::run_experiment(manifest, out_dir, jobs);
  int failures = 0;
  for (const dvg::RunOutcome& oc : outcomes) {
    if (oc.ok) {
      std::printf("[ok]   %s seed %llu (%lld steps, final return %.4f)\n",
                  oc.name.c_str(), oc.seed, oc.steps, oc.final_return);
    } else {
      std::printf("[FAIL] %s seed %llu: %s\n", oc.name.c_str(), oc.seed,
                  oc.error.c_str());
      ++failures;
    }
  }
  // Aggregation runs after all workers have finished.
  namespace fs = std::filesystem;
  for (const dvg::ManifestRun& run : manifest.runs) {
    const std::string dir = (fs::path(out_dir) / run.name).string();
    try {
      dvg::AggregateCurve curve = dvg::aggregate_dir(dir);
      write_text_file((fs::path(dir) / "aggregate.csv").string(),
                      dvg::aggregate_csv(curve));
    } catch (const std::exception& e) {
      std::printf("aggregate %s: %s\n", run.name.c_str(), e.what());
      ++failures;
    }
  }
  std::printf("experiment: %zu runs, %d failed; index at %s/index.csv\n",
              outcomes.size(), failures, out_dir.c_str());
  return failures == 0 ? kOk : kRuntimeFailure;
}

int cmd_aggregate(const std::string& dir, std::string out_file) {
  dvg::AggregateCurve curve = dvg::aggregate_dir(dir);
  if (out_file.empty())
    out_file = (std::filesystem::path(dir) / "aggregate.csv").string();
  write_text_file(out_file, dvg::aggregate_csv(curve));
  std::printf("aggregated %zu grid points -> %s\n", curve.steps.size(),
              out_file.c_str());
  return kOk;
}

int cmd_verify(const std::string& csv_out) {
  dvg::VerifySuite suite = dvg::run_verify_suite();
  std::fputs(dvg::verify_report_text(suite).c_str(), stdout);
  if (!csv_out.empty()) write_text_file(csv_out, dvg::verify_report_csv(suite));
  return suite.passed ? kOk : kCheckFailure;
}

int cmd_gradcheck(unsigned long long seed) {
  std::vector<dvg::CheckResult> checks = dvg::run_gradchecks(seed);
  std::fputs(dvg::gradcheck_report_text(checks).c_str(), stdout);
  std::fputs(dvg::horizon_magnitude_table().c_str(), stdout);
  return dvg::all_passed(checks) ? kOk : kCheckFailure;
}

int cmd_visitation(const std::string& env_name, int period,
                   const std::string& checkpoint, int episodes, int bins,
                   int steps, unsigned long long seed,
                   const std::string& out_file) {
  auto env = dvg::make_env(env_name, period);
  dvg::Rng rng = dvg::make_rng(seed, 1);
  dvg::MlpActor actor;
  if (checkpoint.empty()) {
    dvg::Rng net_rng = dvg::make_rng(seed, 0);
    actor = dvg::MlpActor::standard(env->spec().state_dim,
                                    env->spec().action_dim,
                                    env->spec().action_bound, net_rng);
  } else {
    auto [net, role] = dvg::Mlp::load_file(checkpoint, "actor");
    actor = dvg::MlpActor(std::move(net));
    if (actor.state_dim() != env->spec().state_dim)
      throw dvg::ValidationError("checkpoint state dim does not match " +
                                 env_name);
  }
  dvg::VisitationReport rep =
      dvg::visitation_report(*env, actor, episodes, bins, rng, steps);
  const std::string csv = rep.to_csv();
  if (out_file.empty()) {
    std::fputs(csv.c_str(), stdout);
  } else {
    write_text_file(out_file, csv);
    std::printf("histogram written to %s\n", out_file.c_str());
  }
  std::printf("total visits %lld; top-decile bins hold %.1f%% of visits\n",
              rep.total, 100.0 * rep.top_decile_share());
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"deterministic value-gradient toolkit"};
  app.set_version_flag("--version", dvg::kVersion);
  app.require_subcommand(1);

  int rc = kOk;

  auto* train = app.add_subcommand("train", "run one training configuration");
  std::string train_config, train_out;
  long long train_seed = -1;
  train->add_option("--config", train_config, "key=value config file")
      ->required();
  train->add_option("--out", train_out, "output directory for the run log");
  train->add_option("--seed", train_seed, "override the config's seed");
  train->callback(
      [&] { rc = cmd_train(train_config, train_out, train_seed); });

  auto* exp = app.add_subcommand("experiment",
                                 "run a manifest of configs x seeds");
  std::string exp_manifest, exp_out;
  int exp_jobs = 1;
  exp->add_option("--manifest", exp_manifest, "manifest file")->required();
  exp->add_option("--out", exp_out, "output directory tree")->required();
  exp->add_option("--jobs", exp_jobs, "parallel workers")
      ->check(CLI::Range(1, 64));
  exp->callback([&] { rc = cmd_experiment(exp_manifest, exp_out, exp_jobs); });

  auto* agg = app.add_subcommand(
      "aggregate", "median and central 75% band across seed curves");
  std::string agg_dir, agg_out;
  agg->add_option("--dir", agg_dir, "directory holding seed_*/episodes.csv")
      ->required();
  agg->add_option("--out", agg_out, "output CSV (default <dir>/aggregate.csv)");
  agg->callback([&] { rc = cmd_aggregate(agg_dir, agg_out); });

  auto* ver = app.add_subcommand(
      "verify", "closed-loop analysis vs finite-difference oracles");
  std::string ver_csv;
  ver->add_option("--csv", ver_csv, "also write the per-case table as CSV");
  ver->callback([&] { rc = cmd_verify(ver_csv); });

  auto* gc = app.add_subcommand("gradcheck",
                                "derivative and identity check suite");
  unsigned long long gc_seed = 0;
  gc->add_option("--seed", gc_seed, "seed for the randomized checks");
  gc->callback([&] { rc = cmd_gradcheck(gc_seed); });

  auto* vis = app.add_subcommand("visitation",
                                 "state-visitation histogram of a policy");
  std::string vis_env = "integrator", vis_ckpt, vis_out;
  int vis_period = 3, vis_episodes = 10, vis_bins = 25, vis_steps = 0;
  unsigned long long vis_seed = 0;
  vis->add_option("--env", vis_env, "environment name");
  vis->add_option("--period", vis_period, "loopchain period")
      ->check(CLI::Range(2, 16));
  vis->add_option("--checkpoint", vis_ckpt,
                  "actor checkpoint (omit for a freshly initialized policy)");
  vis->add_option("--episodes", vis_episodes)->check(CLI::Range(0, 1000000));
  vis->add_option("--bins", vis_bins, "bins per state dimension")
      ->check(CLI::Range(1, 512));
  vis->add_option("--steps", vis_steps, "steps per episode (0 = env default)");
  vis->add_option("--seed", vis_seed, "seed for start-state sampling");
  vis->add_option("--out", vis_out, "output CSV (default stdout)");
  vis->callback([&] {
    rc = cmd_visitation(vis_env, vis_period, vis_ckpt, vis_episodes, vis_bins,
                        vis_steps, vis_seed, vis_out);
  });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kValidationError;
  } catch (const dvg::ValidationError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kValidationError;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kRuntimeFailure;
  }
  return rc;
}
