// octden: phantom-based OCT B-scan denoising pipeline.
// Subcommands: phantom | augment | train | denoise | eval | gradcheck | version

#include <omp.h>

#include <cstdio>
#include <exception>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "octdn/config.hpp"
#include "octdn/pipeline.hpp"
#include "octdn/version.hpp"

namespace {

// Remaining tokens of the form --section.key=value (or --key=value for global
// keys) are config overrides.
void apply_overrides(octdn::cfg::RunConfig& rc, const std::vector<std::string>& extras) {
  for (const std::string& raw : extras) {
    if (raw.rfind("--", 0) != 0)
      throw octdn::ConfigError("unexpected argument: '" + raw + "'");
    std::string body = raw.substr(2);
    size_t eq = body.find('=');
    if (eq == std::string::npos)
      throw octdn::ConfigError("override must look like --section.key=value: '" + raw + "'");
    rc.set(body.substr(0, eq), body.substr(eq + 1));
  }
}

int dispatch(const std::string& cmd, const octdn::cfg::RunConfig& rc) {
  using namespace octdn;
  if (cmd == "phantom") {
    pipe::PhantomRun run = pipe::run_phantom(rc);
    std::printf("phantom: %d scans (%d train / %d test) -> %s\n", run.scans, run.train, run.test,
                run.manifest_path.string().c_str());
  } else if (cmd == "augment") {
    pipe::AugmentRun run = pipe::run_augment(rc);
    std::printf("augment: %d train pairs, %d test pairs, noise sigma %.6g -> %s\n",
                run.train_pairs, run.test_pairs, run.sigma, run.manifest_path.string().c_str());
  } else if (cmd == "train") {
    train::TrainResult result = pipe::run_train(rc);
    double first = result.log.empty() ? 0.0 : result.log.front().loss;
    double last = result.log.empty() ? 0.0 : result.log.back().loss;
    std::printf("train: %lld steps, loss %.6g -> %.6g, checkpoint %s\n", result.steps, first,
                last, result.final_checkpoint.string().c_str());
  } else if (cmd == "denoise") {
    pipe::DenoiseRun run = pipe::run_denoise(rc);
    std::printf("denoise: %d scans, %.1f ms/scan on this CPU\n", run.scans, run.mean_ms);
  } else if (cmd == "eval") {
    pipe::EvalRun run = pipe::run_eval(rc);
    std::printf("eval: %zu rows -> %s\n", run.report.rows.size(),
                run.report_path.string().c_str());
    for (const char* kind : {"noisy", "denoised"}) {
      std::printf("  %-8s snr %.3f dB, mssim %.4f, cnr %.3f\n", kind,
                  metrics::aggregate_value(run.report, kind, "snr_db"),
                  metrics::aggregate_value(run.report, kind, "mssim"),
                  metrics::aggregate_value(run.report, kind, "cnr_all"));
    }
  } else if (cmd == "gradcheck") {
    train::GradCheckReport rep = pipe::run_gradcheck(rc);
    std::printf("gradcheck: %zu of %zu parameters, max relative error %.3g (tolerance %.3g), "
                "max abs error %.3g in the small-gradient regime: %s\n",
                rep.checked, rep.total, rep.max_rel_err, rep.tolerance, rep.max_abs_err_small,
                rep.pass ? "PASS" : "FAIL");
    if (!rep.pass) {
      if (!rep.worst_param.empty()) std::printf("  worst parameter: %s\n", rep.worst_param.c_str());
      return 3;
    }
  } else {
    throw octdn::ConfigError("unknown command: " + cmd);
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"OCT B-scan denoising pipeline"};
  app.require_subcommand(0, 1);
  app.allow_extras();

  std::string config_path, out_dir, seed_str, jobs_str;
  app.add_option("--config", config_path, "INI config file");
  app.add_option("--out", out_dir, "output directory");
  app.add_option("--seed", seed_str, "global RNG seed");
  app.add_option("--jobs", jobs_str, "worker threads (0 = hardware)");

  const std::vector<std::string> commands = {"phantom",  "augment",   "train",  "denoise",
                                             "eval",     "gradcheck", "version"};
  for (const std::string& c : commands) {
    CLI::App* sub = app.add_subcommand(c);
    sub->allow_extras();
    sub->fallthrough();
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 1;
  }

  try {
    if (app.get_subcommands().empty()) {
      std::fprintf(stderr, "usage: octden <%s> [--config file] [--out dir] [--seed n] "
                           "[--jobs n] [--section.key=value ...]\n",
                   "phantom|augment|train|denoise|eval|gradcheck|version");
      return 1;
    }
    CLI::App* sub = app.get_subcommands().front();
    std::string cmd = sub->get_name();
    if (cmd == "version") {
      std::printf("octden %s\n", octdn::kVersion);
      return 0;
    }

    octdn::cfg::RunConfig rc;
    if (!config_path.empty()) rc.load_file(config_path);
    if (!out_dir.empty()) rc.set("global.out", out_dir);
    if (!seed_str.empty()) rc.set("global.seed", seed_str);
    if (!jobs_str.empty()) rc.set("global.jobs", jobs_str);
    apply_overrides(rc, app.remaining(/*recurse=*/true));

    long long jobs = rc.integer("global", "jobs");
    if (jobs > 0) omp_set_num_threads(static_cast<int>(jobs));

    return dispatch(cmd, rc);
  } catch (const octdn::ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return 1;
  } catch (const octdn::DataError& e) {
    std::fprintf(stderr, "data error: %s\n", e.what());
    return 2;
  } catch (const octdn::NumericError& e) {
    std::fprintf(stderr, "numerical error: %s\n", e.what());
    return 3;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  }
}
