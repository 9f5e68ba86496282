#pragma once

#include <string>

#include "gpo/exact_gp.hpp"
#include "gpo/kernel.hpp"
#include "gpo/sdd.hpp"
#include "gpo/wno.hpp"

namespace gpo::cfg {

// One experiment, fully determined together with the seeds. The file format
// is flat `key = value` text with '#' comments; unknown or duplicate keys are
// rejected. Units: rates are per-step multipliers, level is a probability,
// superres is a grid resolution (0 disables the pass).
struct ExperimentConfig {
  std::string pde = "burgers";  // burgers | advection | darcy
  int64_t train_count = 300;
  int64_t test_count = 100;
  int64_t resolution = 128;
  int64_t s_init = 40;  // exact-inference subset for the init phase

  int64_t init_steps = 200;  // adam steps on the subset objective
  double init_rate = 1e-3;

  int64_t sdd_batch = 32;
  double sdd_rate = 0.1;  // raw dual-descent rate; the solver scales it by 1/N
  double sdd_momentum = 0.9;
  double sdd_averaging = 0.9;
  int64_t sdd_epochs = 400;  // one epoch covers ceil(N / batch) steps

  int64_t wno_levels = 4;
  std::string wno_basis = "db6";  // haar | db4 | db6
  int64_t wno_width = 32;
  int64_t wno_layers = 3;
  int64_t wno_latent = 16;

  std::string kernel_family = "matern52";  // matern52 | rbf

  uint64_t data_seed = 0;
  uint64_t train_seed = 0;

  int64_t samples = 64;   // posterior draws for bands
  double level = 0.95;    // band probability mass
  int64_t superres = 0;   // evaluation resolution above the native grid

  void validate() const;

  int spatial_rank() const { return pde == "darcy" ? 2 : 1; }
  kernel::KernelFamily family() const { return kernel::family_from_name(kernel_family); }
  // Builders for the module configs this experiment feeds. The operator
  // template leaves train_extents open; the pipeline pins them after any
  // embedding resample.
  wno::WnoConfig wno_template() const;
  gp::InitConfig init_config() const;
  sdd::SddConfig sdd_config(int64_t train_rows) const;
  int64_t sdd_steps(int64_t train_rows) const;
};

ExperimentConfig parse_config_text(const std::string& body);
ExperimentConfig load_config(const std::string& path);

// Canonical echo: one line per key in schema order; parses back to an equal
// config, so digests of the text identify the experiment.
std::string config_text(const ExperimentConfig& cfg);
uint64_t config_digest(const ExperimentConfig& cfg);

}  // namespace gpo::cfg
