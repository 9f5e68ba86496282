#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <iomanip>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "gpo/common.hpp"
#include "gpo/config.hpp"
#include "gpo/container.hpp"
#include "gpo/pde_data.hpp"
#include "gpo/pipeline.hpp"
#include "gpo/posterior.hpp"
#include "gpo/report.hpp"

namespace fs = std::filesystem;
using namespace gpo;
using ad::Tensor;

namespace {

void ensure_dir(const std::string& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError(dir + ": cannot create output directory (" + ec.message() + ")");
}

std::string join(const std::string& dir, const std::string& name) {
  return (fs::path(dir) / name).string();
}

// --data accepts either a dataset stem or a directory written by generate.
std::string resolve_stem(const std::string& path, const std::string& fallback) {
  if (fs::is_directory(path)) return join(path, fallback);
  return path;
}

void echo_config(const cfg::ExperimentConfig& config, const std::string& dir) {
  io::write_text(join(dir, "config.cfg"), cfg::config_text(config));
}

std::string percent(double fraction) {
  std::ostringstream out;
  out << std::fixed << std::setprecision(2) << 100.0 * fraction;
  return out.str();
}

std::string real(double v) {
  std::ostringstream out;
  out << std::setprecision(6) << v;
  return out.str();
}

// Plot abscissa matching the generator grids: nodes j/n on periodic domains,
// cell centers on dirichlet ones.
Vec plot_axis(const std::string& boundary, int64_t n) {
  const double shift = boundary == "dirichlet" ? 0.5 : 0.0;
  Vec x(n);
  for (int64_t j = 0; j < n; ++j) x[j] = (static_cast<double>(j) + shift) / static_cast<double>(n);
  return x;
}

// 1D view of a flattened field: identity in 1D, the middle grid row in 2D.
Vec transect(const Vec& field, const std::vector<int64_t>& extents) {
  if (extents.size() == 1) return field;
  const int64_t n1 = extents[1];
  return field.segment((extents[0] / 2) * n1, n1);
}

void write_overlays(const pipeline::EvalReport& rep, const pde::OperatorDataset& test,
                    const std::string& pde, const std::string& dir) {
  const std::vector<int64_t> extents = test.target_extents();
  const int64_t shown = std::min<int64_t>(3, rep.truth.rows());
  for (int64_t i = 0; i < shown; ++i) {
    report::LinePlot plot;
    plot.title = pde + " test sample " + std::to_string(i);
    Vec truth = transect(rep.truth.row(i).transpose(), extents);
    plot.x = plot_axis(test.boundary, truth.size());
    plot.series.push_back({"truth", "", truth});
    plot.series.push_back({"mean", "", transect(rep.pred.row(i).transpose(), extents)});
    if (rep.has_band) {
      plot.band_lower = transect(rep.lower.row(i).transpose(), extents);
      plot.band_upper = transect(rep.upper.row(i).transpose(), extents);
    }
    report::write_line_svg(join(dir, "overlay_" + std::to_string(i) + ".svg"), plot);
  }
}

struct GenerateArgs {
  std::string config_path, out_dir;
  uint64_t seed = 0;
  bool seed_set = false;
};

int run_generate(const GenerateArgs& a) {
  cfg::ExperimentConfig config = cfg::load_config(a.config_path);
  if (a.seed_set) config.data_seed = a.seed;
  config.validate();
  ensure_dir(a.out_dir);
  pde::OperatorDataset train =
      pde::make_dataset(config.pde, config.train_count, config.resolution, config.data_seed);
  pde::OperatorDataset test =
      pde::make_dataset(config.pde, config.test_count, config.resolution, config.data_seed + 1);
  pde::write_dataset(train, join(a.out_dir, "train"));
  pde::write_dataset(test, join(a.out_dir, "test"));
  echo_config(config, a.out_dir);
  std::cout << "wrote " << train.count() << " train and " << test.count() << " test " << config.pde
            << " samples at resolution " << config.resolution << " to " << a.out_dir << "\n";
  return 0;
}

struct TrainArgs {
  std::string config_path, data_path, out_dir;
  uint64_t seed = 0;
  bool seed_set = false;
};

int run_train(const TrainArgs& a) {
  cfg::ExperimentConfig config = cfg::load_config(a.config_path);
  if (a.seed_set) config.train_seed = a.seed;
  config.validate();
  pde::OperatorDataset train = pde::ingest_dataset(resolve_stem(a.data_path, "train"));
  pipeline::TrainedModel tm = pipeline::train_model(config, train);
  ensure_dir(a.out_dir);
  pipeline::save_model(tm, a.out_dir);
  report::write_trace_csv(join(a.out_dir, "trace.csv"), tm.init_losses, tm.trace);
  if (!tm.init_losses.empty()) {
    report::LinePlot plot;
    plot.title = "initialization objective";
    plot.x = Vec::LinSpaced(tm.init_losses.size(), 0, tm.init_losses.size() - 1);
    plot.series.push_back(
        {"nll", "", Eigen::Map<const Vec>(tm.init_losses.data(), tm.init_losses.size())});
    report::write_line_svg(join(a.out_dir, "init_loss.svg"), plot);
  }
  if (!tm.trace.empty()) {
    report::LinePlot plot;
    plot.title = "stochastic dual descent";
    Vec x(tm.trace.size()), y(tm.trace.size());
    for (size_t i = 0; i < tm.trace.size(); ++i) {
      x[i] = static_cast<double>(tm.trace[i].step);
      y[i] = tm.trace[i].primal_loss;
    }
    plot.x = x;
    plot.series.push_back({"primal loss", "", y});
    report::write_line_svg(join(a.out_dir, "descent_loss.svg"), plot);
  }
  std::cout << "trained " << config.pde << " model on " << train.count() << " samples";
  if (!tm.trace.empty()) std::cout << "; final primal loss " << real(tm.trace.back().primal_loss);
  std::cout << "; archive in " << a.out_dir << "\n";
  return 0;
}

struct EvaluateArgs {
  std::string model_dir, data_path, out_dir;
  int64_t samples = 64;
  double level = 0.95;
  int64_t superres = 0;
  uint64_t seed = 0;
};

int run_evaluate(const EvaluateArgs& a) {
  if (a.samples < 0) throw ValidationError("samples must be nonnegative");
  if (a.level <= 0.0 || a.level >= 1.0) throw ValidationError("level must lie in (0, 1)");
  if (a.superres < 0) throw ValidationError("superres must be nonnegative");
  pipeline::TrainedModel tm = pipeline::load_model(a.model_dir);
  pde::OperatorDataset test = pde::ingest_dataset(resolve_stem(a.data_path, "test"));
  pipeline::EvalOptions opt;
  opt.samples = a.samples;
  opt.level = a.level;
  opt.superres = a.superres;
  opt.seed = a.seed;
  pipeline::EvalReport rep = pipeline::evaluate_model(tm, test, opt);

  ensure_dir(a.out_dir);
  echo_config(tm.config, a.out_dir);
  std::vector<std::string> columns = {"sample", "rel_l2"};
  if (rep.has_super) columns.push_back("rel_l2_super");
  std::vector<std::vector<double>> rows;
  for (size_t i = 0; i < rep.per_sample.size(); ++i) {
    std::vector<double> row = {static_cast<double>(i), rep.per_sample[i]};
    if (rep.has_super) row.push_back(rep.per_sample_super[i]);
    rows.push_back(row);
  }
  report::write_csv(join(a.out_dir, "report.csv"), columns, rows);

  std::ostringstream head;
  head << "pde = " << test.pde << "\n";
  head << "test_count = " << test.count() << "\n";
  head << "samples = " << a.samples << "\n";
  head << "level = " << real(a.level) << "\n";
  head << "seed = " << a.seed << "\n";
  head << "relative_l2_mean = " << real(rep.native.mean) << "\n";
  head << "relative_l2_std = " << real(rep.native.stddev) << "\n";
  head << "# std is the sample standard deviation of per-sample relative L2 over the test set\n";
  if (rep.has_band) head << "coverage = " << real(rep.coverage) << "\n";
  if (rep.has_super) {
    head << "superres = " << a.superres << "\n";
    head << "relative_l2_super_mean = " << real(rep.super.mean) << "\n";
    head << "relative_l2_super_std = " << real(rep.super.stddev) << "\n";
  }
  io::write_text(join(a.out_dir, "report.txt"), head.str());
  write_overlays(rep, test, tm.config.pde, a.out_dir);

  std::cout << "relative L2 = " << percent(rep.native.mean) << "% +- "
            << percent(rep.native.stddev) << "% over " << test.count() << " samples\n";
  if (rep.has_band)
    std::cout << "coverage = " << percent(rep.coverage) << "% at level " << real(a.level) << "\n";
  if (rep.has_super)
    std::cout << "super-resolution " << a.superres << ": relative L2 = " << percent(rep.super.mean)
              << "% +- " << percent(rep.super.stddev) << "%\n";
  return 0;
}

struct SampleArgs {
  std::string model_dir, data_path, out_dir;
  int64_t index = 0;
  int64_t samples = 64;
  double level = 0.95;
  uint64_t seed = 0;
};

int run_sample(const SampleArgs& a) {
  if (a.samples < 2) throw ValidationError("samples must be at least 2");
  if (a.level <= 0.0 || a.level >= 1.0) throw ValidationError("level must lie in (0, 1)");
  pipeline::TrainedModel tm = pipeline::load_model(a.model_dir);
  pde::OperatorDataset ds = pde::ingest_dataset(resolve_stem(a.data_path, "test"));
  if (a.index < 0 || a.index >= ds.count())
    throw ValidationError("sample index " + std::to_string(a.index) + " outside the " +
                          std::to_string(ds.count()) + " dataset fields");

  const std::vector<int64_t> extents = ds.input_extents();
  std::vector<int64_t> shape = {1};
  shape.insert(shape.end(), extents.begin(), extents.end());
  shape.push_back(1);
  Tensor input(shape, pde::field_rows(ds.inputs).row(a.index).transpose());
  post::SampleSet ss = tm.sample(input, a.samples, a.seed);

  ensure_dir(a.out_dir);
  echo_config(tm.config, a.out_dir);
  const std::vector<int64_t> out_extents = ds.target_extents();
  std::vector<int64_t> stack_shape = {ss.sample_count};
  stack_shape.insert(stack_shape.end(), out_extents.begin(), out_extents.end());
  stack_shape.push_back(1);
  Tensor draws = Tensor::zeros(stack_shape);
  const int64_t field = ss.mean.cols();
  for (int64_t s = 0; s < ss.sample_count; ++s)
    draws.data.segment(s * field, field) = ss.draws[s].row(0).transpose();
  io::write_gpot(join(a.out_dir, "draws.gpot"), draws);
  io::write_gpot(join(a.out_dir, "mean.gpot"),
                 Tensor(std::vector<int64_t>(out_extents), ss.mean.row(0).transpose()));
  io::write_gpot(join(a.out_dir, "stddev.gpot"),
                 Tensor(std::vector<int64_t>(out_extents), ss.stddev.row(0).transpose()));

  report::LinePlot plot;
  plot.title = tm.config.pde + " posterior draws, test sample " + std::to_string(a.index);
  Vec truth = transect(pde::field_rows(ds.targets).row(a.index).transpose(), out_extents);
  plot.x = plot_axis(ds.boundary, truth.size());
  plot.series.push_back({"truth", "", truth});
  plot.series.push_back({"mean", "", transect(ss.mean.row(0).transpose(), out_extents)});
  const int64_t shown = std::min<int64_t>(3, ss.sample_count);
  for (int64_t s = 0; s < shown; ++s)
    plot.series.push_back(
        {"draw " + std::to_string(s), "", transect(ss.draws[s].row(0).transpose(), out_extents)});
  if (ss.sample_count >= 30) {
    post::ConfidenceBand band = post::confidence_band(ss, a.level);
    plot.band_lower = transect(band.lower.row(0).transpose(), out_extents);
    plot.band_upper = transect(band.upper.row(0).transpose(), out_extents);
  }
  report::write_line_svg(join(a.out_dir, "samples.svg"), plot);

  std::cout << "wrote " << ss.sample_count << " posterior draws for test sample " << a.index
            << " to " << a.out_dir << "\n";
  return 0;
}

struct SweepArgs {
  std::string config_path, axis, out_dir;
  std::vector<int64_t> values;
  int64_t seeds = 3;
  uint64_t seed = 0;
  bool seed_set = false;
};

int run_sweep(const SweepArgs& a) {
  if (a.seeds < 1) throw ValidationError("seeds must be at least 1");
  cfg::ExperimentConfig config = cfg::load_config(a.config_path);
  if (a.seed_set) config.train_seed = a.seed;
  config.validate();
  pde::OperatorDataset train =
      pde::make_dataset(config.pde, config.train_count, config.resolution, config.data_seed);
  pde::OperatorDataset test =
      pde::make_dataset(config.pde, config.test_count, config.resolution, config.data_seed + 1);
  pipeline::SweepResult res = pipeline::run_sweep(config, a.axis, a.values, a.seeds, train, test);

  ensure_dir(a.out_dir);
  echo_config(config, a.out_dir);
  report::write_sweep_csv(join(a.out_dir, "sweep.csv"), res.rows);

  report::LinePlot plot;
  plot.title = "relative L2 vs " + a.axis;
  plot.x = Eigen::Map<const Vec>(res.axis_values.data(), res.axis_values.size());
  plot.series.push_back(
      {"median", "", Eigen::Map<const Vec>(res.medians.data(), res.medians.size())});
  report::Scatter cells;
  cells.x = Vec(res.rows.size());
  cells.y = Vec(res.rows.size());
  bool positive = true;
  for (size_t i = 0; i < res.rows.size(); ++i) {
    cells.x[i] = res.rows[i].axis_value;
    cells.y[i] = res.rows[i].rel_l2;
    positive = positive && res.rows[i].rel_l2 > 0.0;
  }
  plot.points.push_back(cells);
  plot.log_y = positive;
  report::write_line_svg(join(a.out_dir, "sweep.svg"), plot);

  for (size_t i = 0; i < res.axis_values.size(); ++i)
    std::cout << a.axis << " = " << res.axis_values[i]
              << ": median relative L2 = " << percent(res.medians[i]) << "%\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"gaussian process operator benchmark driver"};
  app.require_subcommand(1);

  GenerateArgs gen;
  CLI::App* cmd_gen = app.add_subcommand("generate", "draw a train/test benchmark dataset");
  cmd_gen->add_option("--config", gen.config_path, "experiment config file")->required();
  cmd_gen->add_option("--out", gen.out_dir, "output directory")->required();
  CLI::Option* gen_seed = cmd_gen->add_option("--seed", gen.seed, "override the data seed");

  TrainArgs tr;
  CLI::App* cmd_train = app.add_subcommand("train", "fit a model and write its archive");
  cmd_train->add_option("--config", tr.config_path, "experiment config file")->required();
  cmd_train->add_option("--data", tr.data_path, "dataset stem or generate output directory")
      ->required();
  cmd_train->add_option("--out", tr.out_dir, "archive directory")->required();
  CLI::Option* train_seed = cmd_train->add_option("--seed", tr.seed, "override the train seed");

  EvaluateArgs ev;
  CLI::App* cmd_eval = app.add_subcommand("evaluate", "score a model on a test dataset");
  cmd_eval->add_option("--model", ev.model_dir, "model archive directory")->required();
  cmd_eval->add_option("--data", ev.data_path, "dataset stem or generate output directory")
      ->required();
  cmd_eval->add_option("--out", ev.out_dir, "report directory")->required();
  cmd_eval->add_option("--samples", ev.samples, "posterior draws for the band (0 skips)");
  cmd_eval->add_option("--level", ev.level, "confidence level");
  cmd_eval->add_option("--superres", ev.superres, "extra zero-shot pass at this resolution");
  cmd_eval->add_option("--seed", ev.seed, "sampling seed");

  SampleArgs sa;
  CLI::App* cmd_sample = app.add_subcommand("sample", "draw posterior fields for one input");
  cmd_sample->add_option("--model", sa.model_dir, "model archive directory")->required();
  cmd_sample->add_option("--data", sa.data_path, "dataset stem or generate output directory")
      ->required();
  cmd_sample->add_option("--out", sa.out_dir, "output directory")->required();
  cmd_sample->add_option("--index", sa.index, "dataset field to condition on");
  cmd_sample->add_option("--samples", sa.samples, "number of posterior draws");
  cmd_sample->add_option("--level", sa.level, "confidence level for the plot band");
  cmd_sample->add_option("--seed", sa.seed, "sampling seed");

  SweepArgs sw;
  CLI::App* cmd_sweep = app.add_subcommand("sweep", "repeat train/evaluate along one axis");
  cmd_sweep->add_option("--config", sw.config_path, "experiment config file")->required();
  cmd_sweep->add_option("--axis", sw.axis, "sweep axis: s_init or s_sdd")->required();
  cmd_sweep->add_option("--values", sw.values, "comma-separated axis values")
      ->required()
      ->delimiter(',');
  cmd_sweep->add_option("--seeds", sw.seeds, "seeds per value");
  cmd_sweep->add_option("--out", sw.out_dir, "output directory")->required();
  CLI::Option* sweep_seed = cmd_sweep->add_option("--seed", sw.seed, "override the train seed");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  gen.seed_set = gen_seed->count() > 0;
  tr.seed_set = train_seed->count() > 0;
  sw.seed_set = sweep_seed->count() > 0;

  try {
    if (cmd_gen->parsed()) return run_generate(gen);
    if (cmd_train->parsed()) return run_train(tr);
    if (cmd_eval->parsed()) return run_evaluate(ev);
    if (cmd_sample->parsed()) return run_sample(sa);
    if (cmd_sweep->parsed()) return run_sweep(sw);
  } catch (const ValidationError& e) {
    std::cerr << "validation error: " << e.what() << "\n";
    return 2;
  } catch (const NumericalError& e) {
    std::cerr << "numerical error: " << e.what() << "\n";
    return 3;
  } catch (const IoError& e) {
    std::cerr << "io error: " << e.what() << "\n";
    return 4;
  }
  return 0;
}
