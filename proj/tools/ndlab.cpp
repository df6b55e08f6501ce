#include <cstdio>
#include <filesystem>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "ndlab/class_means.hpp"
#include "ndlab/datagen.hpp"
#include "ndlab/errors.hpp"
#include "ndlab/experiments.hpp"
#include "ndlab/svg_plot.hpp"
#include "ndlab/trainer.hpp"

namespace fs = std::filesystem;
using namespace ndlab;

namespace {

struct CommonOpts {
  std::string config_path;
  std::string out_dir;
  int jobs = 1;
  std::uint64_t seed = 0;
  std::vector<CLI::Option*> seed_opts;  // one per subcommand; only one can parse
  bool no_timing = false;

  bool seed_set() const {
    for (const CLI::Option* opt : seed_opts)
      if (opt->count() > 0) return true;
    return false;
  }
};

void add_common(CLI::App* cmd, CommonOpts& o) {
  cmd->add_option("--config", o.config_path, "Experiment config (JSON)")
      ->check(CLI::ExistingFile);
  cmd->add_option("--out", o.out_dir, "Output directory (overrides config out_dir)");
  cmd->add_option("--jobs", o.jobs, "Worker threads for multi-run commands")
      ->check(CLI::PositiveNumber);
  o.seed_opts.push_back(cmd->add_option("--seed", o.seed, "Seed override"));
  cmd->add_flag("--no-timing", o.no_timing,
                "Zero the seconds_per_iter column so reruns are byte-identical");
}

ExperimentConfig resolve_config(const CommonOpts& o) {
  ExperimentConfig cfg = o.config_path.empty() ? default_experiment_config()
                                               : load_experiment_config(o.config_path);
  if (!o.out_dir.empty()) cfg.out_dir = o.out_dir;
  if (o.no_timing) {
    cfg.teacher.train.record_timing = false;
    cfg.student.train.record_timing = false;
  }
  return cfg;
}

std::string out_file(const ExperimentConfig& cfg, const std::string& name) {
  fs::create_directories(cfg.out_dir);
  return (fs::path(cfg.out_dir) / name).string();
}

void ensure_parent(const std::string& path) {
  const fs::path parent = fs::path(path).parent_path();
  if (!parent.empty()) fs::create_directories(parent);
}

int run_gradcheck(bool inject_fault) {
  const auto checks = run_gradcheck_suite(inject_fault);
  bool all_ok = true;
  for (const auto& c : checks) {
    const bool ok = c.report.max_rel_error < 1e-5;
    all_ok = all_ok && ok;
    std::printf("%-4s %-16s max_rel_error=%.3e  worst=%s\n", ok ? "ok" : "FAIL",
                c.name.c_str(), c.report.max_rel_error, c.report.worst_param.c_str());
  }
  std::printf("%s (%zu checks)\n", all_ok ? "all gradients ok" : "GRADIENT CHECK FAILED",
              checks.size());
  return all_ok ? 0 : 1;
}

int run_gen_data(const CommonOpts& o) {
  ExperimentConfig cfg = resolve_config(o);
  if (cfg.data.from_csv)
    throw ConfigError("gen-data needs a mixture data config, not csv paths");
  if (o.seed_set()) cfg.data.mixture.seed = o.seed;
  const auto [train, test] = make_mixture(cfg.data.mixture);
  const std::string train_path = out_file(cfg, "train.csv");
  const std::string test_path = out_file(cfg, "test.csv");
  save_data_csv(train, train_path);
  save_data_csv(test, test_path);
  std::printf("wrote %s (%d rows) and %s (%d rows)\n", train_path.c_str(), train.n(),
              test_path.c_str(), test.n());
  return 0;
}

int run_train_teacher(const CommonOpts& o) {
  ExperimentConfig cfg = resolve_config(o);
  if (o.seed_set()) cfg.teacher.train.seed = o.seed;
  StudyContext ctx = prepare_study(cfg);
  save_model(out_file(ctx.cfg, "teacher.ckpt"), ctx.cfg.teacher.spec, ctx.teacher);
  write_metrics_csv(out_file(ctx.cfg, "teacher_metrics.csv"), ctx.teacher_history);
  save_class_means_csv(ctx.means, out_file(ctx.cfg, "class_means.csv"));
  const RunSummary s = summarize_run(ctx.teacher_history);
  std::printf("teacher test top1 %.4f; wrote teacher.ckpt, teacher_metrics.csv, "
              "class_means.csv in %s\n", s.top1, ctx.cfg.out_dir.c_str());
  return 0;
}

int run_distill(const CommonOpts& o) {
  ExperimentConfig cfg = resolve_config(o);
  StudyContext ctx = prepare_study(cfg);
  const std::uint64_t seed = o.seed_set() ? o.seed : ctx.cfg.student.train.seed;
  DistillResult res = run_distill_seed(ctx, ctx.cfg.distill, seed);
  save_model(out_file(ctx.cfg, "student.ckpt"), ctx.cfg.student.spec, res.student);
  write_metrics_csv(out_file(ctx.cfg, "student_metrics.csv"), res.history);
  const RunSummary s = summarize_run(res.history);
  std::printf("student test top1 %.4f mean_norm %.4f mean_angle_deg %.4f (seed %llu); "
              "wrote student.ckpt, student_metrics.csv in %s\n",
              s.top1, s.mean_norm, s.mean_angle_deg,
              static_cast<unsigned long long>(seed), ctx.cfg.out_dir.c_str());
  return 0;
}

int run_table_cmd(const CommonOpts& o, const std::string& name,
                  StudyTable (*fn)(const StudyContext&, int)) {
  ExperimentConfig cfg = resolve_config(o);
  StudyContext ctx = prepare_study(cfg);
  const StudyTable table = fn(ctx, o.jobs);
  const std::string path = out_file(ctx.cfg, name + ".csv");
  if (name == "ablation") write_ablation_csv(table, path);
  else if (name == "msweep") write_msweep_csv(table, path);
  else if (name == "sifn_sweep") write_sifn_sweep_csv(table, path);
  else write_trials_csv(table, path);
  for (const auto& s : table.summaries)
    std::printf("%-20s top1 %.4f +/- %.4f  mean_norm %.4f  mean_angle_deg %.4f\n",
                s.setting.c_str(), s.mean.top1, s.stddev.top1, s.mean.mean_norm,
                s.mean.mean_angle_deg);
  std::printf("wrote %s\n", path.c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"ndlab: desk-scale knowledge-distillation laboratory"};
  app.require_subcommand(1);

  CommonOpts o;
  bool inject_fault = false;
  std::vector<double> beta_grid{0.5, 1.0, 2.0, 4.0};
  std::vector<double> alpha_grid{0.5, 1.0, 2.0};
  std::vector<double> m_grid{-0.5, 0.0, 0.5};
  std::vector<double> r_grid{0.25, 0.5, 1.0, 2.0};
  std::string ckpt_path, data_path, out_csv, in_csv, out_svg;
  bool skip_header = false;

  CLI::App* gradcheck = app.add_subcommand(
      "gradcheck", "Finite-difference check of every loss and net primitive");
  gradcheck->add_flag("--inject-fault", inject_fault,
                      "Corrupt one analytic gradient (test hook; forces failure)");

  CLI::App* gen_data = app.add_subcommand("gen-data", "Generate the mixture dataset as CSV");
  add_common(gen_data, o);

  CLI::App* train_teacher_cmd =
      app.add_subcommand("train-teacher", "Train the teacher; save checkpoint + class means");
  add_common(train_teacher_cmd, o);

  CLI::App* distill_cmd =
      app.add_subcommand("distill", "Train teacher, then distill one student run");
  add_common(distill_cmd, o);

  CLI::App* ablation = app.add_subcommand(
      "ablation", "Run all supervision/regularizer settings over the seed list");
  add_common(ablation, o);

  CLI::App* sensitivity = app.add_subcommand(
      "sensitivity", "Two-stage sweep: beta at alpha=1, then alpha at the best beta");
  add_common(sensitivity, o);
  sensitivity->add_option("--beta-grid", beta_grid, "Stage-1 beta values")
      ->delimiter(',');
  sensitivity->add_option("--alpha-grid", alpha_grid, "Stage-2 alpha values")
      ->delimiter(',');

  CLI::App* msweep =
      app.add_subcommand("msweep", "Sweep the teacher-norm scaling factor m");
  add_common(msweep, o);
  msweep->add_option("--m-grid", m_grid, "m values (each > -1)")->delimiter(',');

  CLI::App* sifn_sweep =
      app.add_subcommand("sifn-sweep", "Sweep the norm-expansion step r");
  add_common(sifn_sweep, o);
  sifn_sweep->add_option("--r-grid", r_grid, "r values (each > 0)")->delimiter(',');

  CLI::App* trials =
      app.add_subcommand("trials", "Run the configured distillation per seed; mean +/- std");
  add_common(trials, o);

  CLI::App* dump =
      app.add_subcommand("dump", "Write eval-mode embeddings of a dataset as CSV");
  dump->add_option("--checkpoint", ckpt_path, "Model checkpoint")
      ->required()->check(CLI::ExistingFile);
  dump->add_option("--data", data_path, "Input data CSV (label,v_0,...)")
      ->required()->check(CLI::ExistingFile);
  dump->add_option("--out-csv", out_csv, "Output CSV path")->required();
  dump->add_flag("--header", skip_header, "Input CSV has a header row");

  CLI::App* plot = app.add_subcommand(
      "plot", "Render a 2D embedding dump as an SVG scatter with class-mean stars");
  plot->add_option("--in-csv", in_csv, "Dumped embedding CSV (label,dim_0,dim_1)")
      ->required()->check(CLI::ExistingFile);
  plot->add_option("--out-svg", out_svg, "Output SVG path")->required();
  plot->add_flag("--header", skip_header, "Input CSV has a header row");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (app.got_subcommand(gradcheck)) return run_gradcheck(inject_fault);
    if (app.got_subcommand(gen_data)) return run_gen_data(o);
    if (app.got_subcommand(train_teacher_cmd)) return run_train_teacher(o);
    if (app.got_subcommand(distill_cmd)) return run_distill(o);
    if (app.got_subcommand(ablation)) return run_table_cmd(o, "ablation", cmd_ablation);
    if (app.got_subcommand(msweep)) {
      ExperimentConfig cfg = resolve_config(o);
      StudyContext ctx = prepare_study(cfg);
      const StudyTable table = cmd_msweep(ctx, m_grid, o.jobs);
      const std::string path = out_file(ctx.cfg, "msweep.csv");
      write_msweep_csv(table, path);
      std::printf("wrote %s\n", path.c_str());
      return 0;
    }
    if (app.got_subcommand(sensitivity)) {
      ExperimentConfig cfg = resolve_config(o);
      StudyContext ctx = prepare_study(cfg);
      const SensitivityResult result = cmd_sensitivity(ctx, beta_grid, alpha_grid, o.jobs);
      const std::string path = out_file(ctx.cfg, "sensitivity.csv");
      write_sensitivity_csv(result, path);
      std::printf("best beta %g; wrote %s\n", result.best_beta, path.c_str());
      return 0;
    }
    if (app.got_subcommand(sifn_sweep)) {
      ExperimentConfig cfg = resolve_config(o);
      StudyContext ctx = prepare_study(cfg);
      const StudyTable table = cmd_sifn_sweep(ctx, r_grid, o.jobs);
      const std::string path = out_file(ctx.cfg, "sifn_sweep.csv");
      write_sifn_sweep_csv(table, path);
      std::printf("wrote %s\n", path.c_str());
      return 0;
    }
    if (app.got_subcommand(trials)) return run_table_cmd(o, "trials", cmd_trials);
    if (app.got_subcommand(dump)) {
      const LabeledData data = load_data_csv(data_path, skip_header);
      ensure_parent(out_csv);
      cmd_dump_embeddings(ckpt_path, data, out_csv);
      std::printf("wrote %s\n", out_csv.c_str());
      return 0;
    }
    if (app.got_subcommand(plot)) {
      const LabeledData data = load_data_csv(in_csv, skip_header);
      ensure_parent(out_svg);
      plot_scatter_svg(data, out_svg);
      std::printf("wrote %s\n", out_svg.c_str());
      return 0;
    }
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return 2;
  } catch (const ParamError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return 2;
  } catch (const DivergenceError& e) {
    std::fprintf(stderr, "divergence: %s\n", e.what());
    return 3;
  } catch (const IoError& e) {
    std::fprintf(stderr, "i/o error: %s\n", e.what());
    return 4;
  } catch (const NdError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
