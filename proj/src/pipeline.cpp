#include "gpo/pipeline.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <filesystem>
#include <map>
#include <sstream>

#include "gpo/container.hpp"
#include "gpo/exact_gp.hpp"

namespace gpo::pipeline {

Standardizer Standardizer::fit(const Tensor& inputs) {
  if (inputs.numel() < 1) throw ValidationError("standardizer needs at least one value");
  Standardizer s;
  double sum = 0.0;
  for (double v : inputs.data) sum += v;
  s.mean = sum / static_cast<double>(inputs.numel());
  double ss = 0.0;
  for (double v : inputs.data) ss += (v - s.mean) * (v - s.mean);
  s.scale = std::max(std::sqrt(ss / static_cast<double>(inputs.numel())), 1e-12);
  return s;
}

Tensor Standardizer::apply(const Tensor& inputs) const {
  Tensor out = inputs;
  for (double& v : out.data) v = (v - mean) / scale;
  return out;
}

namespace {

struct LinearTap {
  std::vector<int64_t> lo, hi;
  std::vector<double> w;  // weight of the hi neighbor
};

LinearTap axis_tap(int64_t from, int64_t to) {
  LinearTap tap;
  tap.lo.resize(to);
  tap.hi.resize(to);
  tap.w.resize(to);
  for (int64_t i = 0; i < to; ++i) {
    double x = (static_cast<double>(i) + 0.5) * static_cast<double>(from) /
                   static_cast<double>(to) -
               0.5;
    x = std::clamp(x, 0.0, static_cast<double>(from - 1));
    const int64_t lo = static_cast<int64_t>(std::floor(x));
    tap.lo[i] = lo;
    tap.hi[i] = std::min(lo + 1, from - 1);
    tap.w[i] = x - static_cast<double>(lo);
  }
  return tap;
}

int64_t extent_product(const std::vector<int64_t>& extents) {
  int64_t p = 1;
  for (int64_t e : extents) p *= e;
  return p;
}

Tensor rows_to_stack(const Mat& rows, const std::vector<int64_t>& extents) {
  std::vector<int64_t> shape;
  shape.push_back(rows.rows());
  shape.insert(shape.end(), extents.begin(), extents.end());
  shape.push_back(1);
  Tensor t = Tensor::zeros(shape);
  if (rows.size() > 0)
    Eigen::Map<RowMat>(t.data.data(), rows.rows(), rows.cols()) = rows;
  return t;
}

Mat tensor_to_mat(const Tensor& t) {
  if (t.rank() != 2) throw ValidationError("expected a rank-2 tensor");
  return Eigen::Map<const RowMat>(t.data.data(), t.shape[0], t.shape[1]);
}

Tensor mat_to_tensor(const Mat& m) {
  Tensor t = Tensor::zeros({m.rows(), m.cols()});
  Eigen::Map<RowMat>(t.data.data(), m.rows(), m.cols()) = m;
  return t;
}

}  // namespace

Mat resample_bilinear(const Mat& fields, const std::vector<int64_t>& from_extents,
                      const std::vector<int64_t>& to_extents) {
  if (from_extents.size() != to_extents.size() || from_extents.empty() ||
      from_extents.size() > 2)
    throw ValidationError("resample: extents must share rank 1 or 2");
  for (size_t a = 0; a < from_extents.size(); ++a)
    if (from_extents[a] < 1 || to_extents[a] < 1)
      throw ValidationError("resample: extents must be positive");
  if (fields.cols() != extent_product(from_extents))
    throw ValidationError("resample: fields have " + std::to_string(fields.cols()) +
                          " columns, the grid has " +
                          std::to_string(extent_product(from_extents)));
  if (from_extents == to_extents) return fields;

  if (from_extents.size() == 1) {
    const LinearTap tap = axis_tap(from_extents[0], to_extents[0]);
    Mat out(fields.rows(), to_extents[0]);
    for (int64_t i = 0; i < to_extents[0]; ++i)
      out.col(i) = (1.0 - tap.w[i]) * fields.col(tap.lo[i]) +
                   tap.w[i] * fields.col(tap.hi[i]);
    return out;
  }

  const int64_t fx = from_extents[0], fy = from_extents[1];
  const int64_t tx = to_extents[0], ty = to_extents[1];
  const LinearTap xt = axis_tap(fx, tx), yt = axis_tap(fy, ty);
  // Fast axis first, then the slow axis; both per field row.
  Mat mid(fields.rows(), fx * ty);
  for (int64_t x = 0; x < fx; ++x)
    for (int64_t y = 0; y < ty; ++y)
      mid.col(x * ty + y) = (1.0 - yt.w[y]) * fields.col(x * fy + yt.lo[y]) +
                            yt.w[y] * fields.col(x * fy + yt.hi[y]);
  Mat out(fields.rows(), tx * ty);
  for (int64_t x = 0; x < tx; ++x)
    for (int64_t y = 0; y < ty; ++y)
      out.col(x * ty + y) = (1.0 - xt.w[x]) * mid.col(xt.lo[x] * ty + y) +
                            xt.w[x] * mid.col(xt.hi[x] * ty + y);
  return out;
}

std::vector<int64_t> train_embed_extents(const cfg::ExperimentConfig& config,
                                         const std::vector<int64_t>& native) {
  const int64_t granularity = int64_t(1) << config.wno_levels;
  std::vector<int64_t> out = native;
  if (config.spatial_rank() == 1) {
    if (native.size() != 1 || native[0] % granularity != 0)
      throw ValidationError("training grid " + format_shape(native) +
                            " is not divisible by the decomposition granularity " +
                            std::to_string(granularity));
    return out;
  }
  for (int64_t& e : out) e = (e + granularity - 1) / granularity * granularity;
  return out;
}

std::vector<int64_t> probe_embed_extents(const wno::WnoConfig& arch,
                                         const std::vector<int64_t>& native) {
  const std::vector<int64_t> coarsest = arch.coarsest_shape();
  if (native.size() != coarsest.size())
    throw ValidationError("probe grid rank does not match the trained operator");
  std::vector<int64_t> out(native.size());
  for (size_t a = 0; a < native.size(); ++a) {
    int64_t target = coarsest[a];
    while (target < native[a]) target *= 2;
    if (arch.spatial_rank == 1 && target != native[a])
      throw ValidationError("probe resolution " + std::to_string(native[a]) +
                            " is inadmissible: must be the coarsest grid " +
                            std::to_string(coarsest[a]) + " times a power of two");
    out[a] = target;
  }
  return out;
}

Tensor TrainedModel::embed_inputs(const Tensor& raw, bool probe) const {
  if (raw.rank() != model.arch.spatial_rank + 2)
    throw ValidationError("inputs must be [count, extents..., 1] field stacks");
  if (raw.shape.back() != 1)
    throw ValidationError("inputs must have one channel");
  const std::vector<int64_t> native(raw.shape.begin() + 1, raw.shape.end() - 1);
  const std::vector<int64_t> target =
      probe ? probe_embed_extents(model.arch, native) : model.arch.train_extents;
  Tensor standardized = input_norm.apply(raw);
  if (native == target) return standardized;
  Mat rows = pde::field_rows(standardized);
  return rows_to_stack(resample_bilinear(rows, native, target), target);
}

Mat TrainedModel::predict(const Tensor& raw_inputs,
                          const std::vector<int64_t>& out_extents) const {
  const Tensor embedded = embed_inputs(raw_inputs, true);
  if (out_extents.empty() || out_extents == model.target_extents)
    return post::predict_mean(model, embedded);
  if (config.pde == "darcy") {
    // Dirichlet fields are not periodic; interpolate instead of zero-padding
    // the spectrum.
    Mat native = post::predict_mean(model, embedded);
    return resample_bilinear(native, model.target_extents, out_extents);
  }
  return post::predict_mean(model, embedded, out_extents);
}

post::SampleSet TrainedModel::sample(const Tensor& raw_inputs, int64_t sample_count,
                                     uint64_t seed) const {
  const Tensor embedded = embed_inputs(raw_inputs, true);
  sdd::SddConfig scfg = config.sdd_config(model.train_count());
  // The stacked correction solve carries sample_count * field columns, so a
  // bounded epoch budget keeps sampling tractable; the residual it reaches
  // is far below the posterior scale. Models fitted in the degenerate exact
  // mode keep the Cholesky oracle for the correction weights as well.
  const bool exact = config.s_init >= model.train_count();
  const int64_t epoch = (model.train_count() + scfg.batch - 1) / scfg.batch;
  scfg.steps = std::min<int64_t>(scfg.steps, 150 * epoch);
  return post::pathwise_sample(model, embedded, sample_count, seed, scfg, exact);
}

TrainedModel train_model(const cfg::ExperimentConfig& config,
                         const pde::OperatorDataset& train) {
  config.validate();
  train.validate();
  if (train.pde != config.pde)
    throw ValidationError("config expects " + config.pde + " data, the dataset holds " +
                          train.pde);
  const int64_t n = train.count();
  if (n < 1) throw ValidationError("training needs at least one sample");
  if (config.sdd_batch > n)
    throw ValidationError("sdd_batch " + std::to_string(config.sdd_batch) +
                          " exceeds the " + std::to_string(n) + " training samples");

  TrainedModel tm;
  tm.config = config;
  tm.input_norm = Standardizer::fit(train.inputs);

  wno::WnoConfig arch = config.wno_template();
  arch.train_extents = train_embed_extents(config, train.input_extents());
  arch.validate();

  Tensor embedded = tm.input_norm.apply(train.inputs);
  if (train.input_extents() != arch.train_extents)
    embedded = rows_to_stack(resample_bilinear(pde::field_rows(embedded),
                                               train.input_extents(), arch.train_extents),
                             arch.train_extents);
  const Mat targets = pde::field_rows(train.targets);

  Rng rng(config.train_seed);
  wno::WnoParams params = wno::WnoParams::init(arch, rng);
  kernel::KernelHyper hyper;
  const int64_t s_init = std::min<int64_t>(config.s_init, n);
  if (config.init_steps > 0) {
    gp::InitConfig icfg = config.init_config();
    icfg.subset = static_cast<int>(s_init);
    gp::InitResult init = gp::init_train(embedded, targets, arch, params, hyper,
                                         config.family(), icfg);
    params = init.params;
    hyper = init.hyper;
    init.loss_trace.resize(static_cast<size_t>(icfg.steps));
    tm.init_losses = std::move(init.loss_trace);
  }

  post::GpoModel& model = tm.model;
  model.arch = arch;
  model.params = params;
  model.family = config.family();
  model.hyper = hyper;
  model.cache = kernel::build_latent_cache(embedded, params, arch);
  model.targets = targets;
  model.target_extents = train.target_extents();
  model.config_digest = cfg::config_digest(config);
  model.train_seed = config.train_seed;

  const Mat gram = kernel::gram_full(model.cache, hyper, config.family());
  if (s_init == n) {
    // Degenerate mode: the init subset covered everything, so the exact
    // weights are available directly.
    model.weights = gp::cholesky_solve_oracle(gram, hyper.noise_variance(), targets);
  } else {
    sdd::SddResult solved = sdd::sdd_solve(sdd::DenseRows(gram), targets,
                                           hyper.noise_variance(), config.sdd_config(n));
    model.weights = std::move(solved.weights);
    tm.trace = std::move(solved.trace);
  }
  model.validate();
  return tm;
}

EvalReport evaluate_model(const TrainedModel& tm, const pde::OperatorDataset& test,
                          const EvalOptions& opt) {
  test.validate();
  if (test.pde != tm.config.pde)
    throw ValidationError("model was trained on " + tm.config.pde +
                          ", the test set holds " + test.pde);
  if (test.count() < 1) throw ValidationError("evaluation needs at least one test sample");
  if (opt.superres < 0 || opt.samples < 0)
    throw ValidationError("evaluation flags must be non-negative");

  EvalReport out;
  out.truth = pde::field_rows(test.targets);
  if (out.truth.cols() != tm.model.field_size())
    throw ValidationError("test targets have " + std::to_string(out.truth.cols()) +
                          " values per field, the model predicts " +
                          std::to_string(tm.model.field_size()));
  out.pred = tm.predict(test.inputs);
  for (int64_t i = 0; i < out.truth.rows(); ++i)
    out.per_sample.push_back(
        report::rel_l2(out.pred.row(i).transpose(), out.truth.row(i).transpose()));
  out.native = report::aggregate(out.per_sample);

  if (opt.samples > 0) {
    post::SampleSet samples = tm.sample(test.inputs, opt.samples, opt.seed);
    post::ConfidenceBand band = post::confidence_band(samples, opt.level);
    out.lower = std::move(band.lower);
    out.upper = std::move(band.upper);
    out.coverage = report::coverage_fraction(out.truth, out.lower, out.upper);
    out.has_band = true;
  }

  if (opt.superres > 0) {
    pde::OperatorDataset regen =
        pde::make_dataset(test.pde, test.count(), opt.superres, test.seed);
    const Mat truth_r = pde::field_rows(regen.targets);
    const Mat pred_r = tm.predict(regen.inputs, regen.target_extents());
    for (int64_t i = 0; i < truth_r.rows(); ++i)
      out.per_sample_super.push_back(
          report::rel_l2(pred_r.row(i).transpose(), truth_r.row(i).transpose()));
    out.super = report::aggregate(out.per_sample_super);
    out.has_super = true;
  }
  return out;
}

namespace {

std::string fmt_real(double v) {
  char buf[32];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

std::string fmt_extents(const std::vector<int64_t>& extents) {
  std::string out;
  for (size_t i = 0; i < extents.size(); ++i)
    out += (i ? " " : "") + std::to_string(extents[i]);
  return out;
}

std::map<std::string, std::string> parse_kv(const std::string& body) {
  std::map<std::string, std::string> out;
  std::istringstream in(body);
  std::string line;
  auto trim = [](std::string s) {
    const auto b = s.find_first_not_of(" \t");
    const auto e = s.find_last_not_of(" \t\r");
    return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
  };
  while (std::getline(in, line)) {
    const auto eq = line.find('=');
    if (eq == std::string::npos) continue;
    out[trim(line.substr(0, eq))] = trim(line.substr(eq + 1));
  }
  return out;
}

const std::string& manifest_get(const std::map<std::string, std::string>& kv,
                                const std::string& key, const std::string& path) {
  const auto it = kv.find(key);
  if (it == kv.end()) throw IoError(path + ": manifest is missing key '" + key + "'");
  return it->second;
}

template <typename T>
T manifest_number(const std::map<std::string, std::string>& kv, const std::string& key,
                  const std::string& path) {
  const std::string& text = manifest_get(kv, key, path);
  T out{};
  const auto r = std::from_chars(text.data(), text.data() + text.size(), out);
  if (r.ec != std::errc() || r.ptr != text.data() + text.size())
    throw IoError(path + ": manifest key '" + key + "' has a malformed value");
  return out;
}

std::vector<int64_t> manifest_extents(const std::map<std::string, std::string>& kv,
                                      const std::string& key, const std::string& path) {
  std::istringstream in(manifest_get(kv, key, path));
  std::vector<int64_t> out;
  int64_t v = 0;
  while (in >> v) out.push_back(v);
  if (out.empty()) throw IoError(path + ": manifest key '" + key + "' has no extents");
  return out;
}

}  // namespace

void save_model(const TrainedModel& tm, const std::string& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError(dir + ": cannot create archive directory: " + ec.message());

  io::write_text(dir + "/config.cfg", cfg::config_text(tm.config));

  const post::GpoModel& m = tm.model;
  std::ostringstream manifest;
  manifest << "format_version = 1\n";
  manifest << "pde = " << tm.config.pde << "\n";
  manifest << "kernel_family = " << kernel::family_name(m.family) << "\n";
  manifest << "log_lengthscale = " << fmt_real(m.hyper.log_lengthscale) << "\n";
  manifest << "log_process_variance = " << fmt_real(m.hyper.log_process_variance) << "\n";
  manifest << "log_noise_variance = " << fmt_real(m.hyper.log_noise_variance) << "\n";
  manifest << "input_mean = " << fmt_real(tm.input_norm.mean) << "\n";
  manifest << "input_scale = " << fmt_real(tm.input_norm.scale) << "\n";
  manifest << "train_extents = " << fmt_extents(m.arch.train_extents) << "\n";
  manifest << "target_extents = " << fmt_extents(m.target_extents) << "\n";
  manifest << "latent_extents = " << fmt_extents(m.cache.latent_extents) << "\n";
  manifest << "latent_channels = " << m.cache.latent_channels << "\n";
  manifest << "cache_fingerprint = " << m.cache.fingerprint << "\n";
  manifest << "config_digest = " << m.config_digest << "\n";
  manifest << "train_seed = " << m.train_seed << "\n";
  io::write_text(dir + "/manifest.txt", manifest.str());

  m.params.for_each([&](const std::string& name, const Tensor& t) {
    io::write_gpot(dir + "/param_" + name + ".gpot", t);
  });
  io::write_gpot(dir + "/features.gpot", mat_to_tensor(m.cache.features));
  Tensor sw = Tensor::zeros({m.cache.sqrt_weights.size()});
  for (int64_t i = 0; i < m.cache.sqrt_weights.size(); ++i)
    sw.data[static_cast<size_t>(i)] = m.cache.sqrt_weights[i];
  io::write_gpot(dir + "/sqrt_weights.gpot", sw);
  io::write_gpot(dir + "/weights.gpot", mat_to_tensor(m.weights));
  io::write_gpot(dir + "/targets.gpot", mat_to_tensor(m.targets));

  // Verification probe: a synthetic standardized field on the operator grid,
  // deterministic from the train seed, stored with its prediction.
  Rng probe_rng(m.train_seed ^ 0xABCD1234u);
  std::vector<int64_t> input_shape;
  input_shape.push_back(1);
  input_shape.insert(input_shape.end(), m.arch.train_extents.begin(),
                     m.arch.train_extents.end());
  input_shape.push_back(1);
  Tensor probe = Tensor::zeros(input_shape);
  for (double& v : probe.data) v = probe_rng.normal();
  io::write_gpot(dir + "/probe_input.gpot", probe);
  io::write_gpot(dir + "/probe_mean.gpot", mat_to_tensor(post::predict_mean(m, probe)));
}

TrainedModel load_model(const std::string& dir) {
  const std::string manifest_path = dir + "/manifest.txt";
  const auto kv = parse_kv(io::read_text(manifest_path));
  if (manifest_number<int64_t>(kv, "format_version", manifest_path) != 1)
    throw IoError(manifest_path + ": unsupported archive format version");

  TrainedModel tm;
  tm.config = cfg::load_config(dir + "/config.cfg");
  tm.input_norm.mean = manifest_number<double>(kv, "input_mean", manifest_path);
  tm.input_norm.scale = manifest_number<double>(kv, "input_scale", manifest_path);

  post::GpoModel& m = tm.model;
  m.arch = tm.config.wno_template();
  m.arch.train_extents = manifest_extents(kv, "train_extents", manifest_path);
  m.family = kernel::family_from_name(manifest_get(kv, "kernel_family", manifest_path));
  m.hyper.log_lengthscale = manifest_number<double>(kv, "log_lengthscale", manifest_path);
  m.hyper.log_process_variance =
      manifest_number<double>(kv, "log_process_variance", manifest_path);
  m.hyper.log_noise_variance =
      manifest_number<double>(kv, "log_noise_variance", manifest_path);

  Rng shape_rng(0);
  m.params = wno::WnoParams::init(m.arch, shape_rng);
  m.params.for_each_mut([&](const std::string& name, Tensor& t) {
    const std::string path = dir + "/param_" + name + ".gpot";
    Tensor loaded = io::read_gpot(path);
    if (loaded.shape != t.shape)
      throw IoError(path + ": tensor shape " + format_shape(loaded.shape) +
                    " does not match the architecture's " + format_shape(t.shape));
    t = std::move(loaded);
  });

  m.cache.features = tensor_to_mat(io::read_gpot(dir + "/features.gpot"));
  Tensor sw = io::read_gpot(dir + "/sqrt_weights.gpot");
  if (sw.rank() != 1) throw IoError(dir + "/sqrt_weights.gpot: expected a rank-1 tensor");
  m.cache.sqrt_weights =
      Eigen::Map<const Vec>(sw.data.data(), static_cast<int64_t>(sw.data.size()));
  m.cache.latent_extents = manifest_extents(kv, "latent_extents", manifest_path);
  m.cache.latent_channels =
      static_cast<int>(manifest_number<int64_t>(kv, "latent_channels", manifest_path));
  m.cache.fingerprint = manifest_number<uint64_t>(kv, "cache_fingerprint", manifest_path);
  m.weights = tensor_to_mat(io::read_gpot(dir + "/weights.gpot"));
  m.targets = tensor_to_mat(io::read_gpot(dir + "/targets.gpot"));
  m.target_extents = manifest_extents(kv, "target_extents", manifest_path);
  m.config_digest = manifest_number<uint64_t>(kv, "config_digest", manifest_path);
  m.train_seed = manifest_number<uint64_t>(kv, "train_seed", manifest_path);
  m.validate();

  const Tensor probe = io::read_gpot(dir + "/probe_input.gpot");
  const Mat want = tensor_to_mat(io::read_gpot(dir + "/probe_mean.gpot"));
  const Mat got = post::predict_mean(m, probe);
  if (got.rows() != want.rows() || got.cols() != want.cols() || got != want)
    throw IoError(dir + ": archive verification failed: the stored probe prediction "
                  "does not match the loaded model");
  return tm;
}

pde::OperatorDataset head_samples(const pde::OperatorDataset& ds, int64_t n) {
  if (n < 0 || n > ds.count())
    throw ValidationError("cannot take " + std::to_string(n) + " samples from " +
                          std::to_string(ds.count()));
  pde::OperatorDataset out = ds;
  auto cut = [&](Tensor& t) {
    const int64_t per = t.shape[0] > 0 ? t.numel() / t.shape[0] : 0;
    t.shape[0] = n;
    t.data.conservativeResize(n * per);
  };
  cut(out.inputs);
  cut(out.targets);
  return out;
}

SweepResult run_sweep(const cfg::ExperimentConfig& base, const std::string& axis,
                      const std::vector<int64_t>& values, int64_t seeds,
                      const pde::OperatorDataset& train,
                      const pde::OperatorDataset& test) {
  if (axis != "s_init" && axis != "s_sdd")
    throw ValidationError("sweep axis must be s_init or s_sdd, got '" + axis + "'");
  if (values.empty()) throw ValidationError("sweep needs at least one axis value");
  if (seeds < 1) throw ValidationError("sweep needs at least one seed");

  SweepResult out;
  for (int64_t value : values) {
    std::vector<double> errs;
    for (int64_t s = 0; s < seeds; ++s) {
      cfg::ExperimentConfig c = base;
      c.train_seed = base.train_seed + static_cast<uint64_t>(s);
      pde::OperatorDataset subset;
      const pde::OperatorDataset* ds = &train;
      if (axis == "s_init") {
        c.s_init = value;
      } else {
        subset = head_samples(train, value);
        ds = &subset;
        c.train_count = value;
        c.s_init = std::min<int64_t>(c.s_init, value);
        c.sdd_batch = std::min<int64_t>(c.sdd_batch, value);
      }
      c.validate();
      TrainedModel tm = train_model(c, *ds);
      EvalOptions opt;
      opt.samples = 0;
      opt.superres = 0;
      EvalReport report = evaluate_model(tm, test, opt);
      out.rows.push_back({static_cast<double>(value), c.train_seed, report.native.mean});
      errs.push_back(report.native.mean);
    }
    std::sort(errs.begin(), errs.end());
    const size_t mid = errs.size() / 2;
    out.axis_values.push_back(static_cast<double>(value));
    out.medians.push_back(errs.size() % 2 == 1 ? errs[mid]
                                               : 0.5 * (errs[mid - 1] + errs[mid]));
  }
  return out;
}

}  // namespace gpo::pipeline
