#include "gpo/config.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <functional>
#include <set>
#include <sstream>

#include "gpo/wavelet.hpp"

namespace gpo::cfg {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  const auto e = s.find_last_not_of(" \t\r");
  return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
}

template <typename T>
T parse_number(const std::string& key, const std::string& value) {
  T out{};
  const char* first = value.data();
  const char* last = value.data() + value.size();
  std::from_chars_result r{};
  if constexpr (std::is_floating_point_v<T>)
    r = std::from_chars(first, last, out);
  else
    r = std::from_chars(first, last, out, 10);
  if (r.ec != std::errc() || r.ptr != last)
    throw ValidationError("config key '" + key + "': cannot parse number from '" +
                          value + "'");
  return out;
}

std::string format_real(double v) {
  char buf[32];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

struct KeyBinding {
  const char* name;
  std::function<void(ExperimentConfig&, const std::string&)> set;
  std::function<std::string(const ExperimentConfig&)> get;
};

const std::vector<KeyBinding>& bindings() {
  auto int_key = [](const char* name, int64_t ExperimentConfig::*field) {
    return KeyBinding{
        name,
        [name, field](ExperimentConfig& c, const std::string& v) {
          c.*field = parse_number<int64_t>(name, v);
        },
        [field](const ExperimentConfig& c) { return std::to_string(c.*field); }};
  };
  auto uint_key = [](const char* name, uint64_t ExperimentConfig::*field) {
    return KeyBinding{
        name,
        [name, field](ExperimentConfig& c, const std::string& v) {
          c.*field = parse_number<uint64_t>(name, v);
        },
        [field](const ExperimentConfig& c) { return std::to_string(c.*field); }};
  };
  auto real_key = [](const char* name, double ExperimentConfig::*field) {
    return KeyBinding{
        name,
        [name, field](ExperimentConfig& c, const std::string& v) {
          c.*field = parse_number<double>(name, v);
        },
        [field](const ExperimentConfig& c) { return format_real(c.*field); }};
  };
  auto text_key = [](const char* name, std::string ExperimentConfig::*field) {
    return KeyBinding{
        name,
        [field](ExperimentConfig& c, const std::string& v) { c.*field = v; },
        [field](const ExperimentConfig& c) { return c.*field; }};
  };
  static const std::vector<KeyBinding> table = {
      text_key("pde", &ExperimentConfig::pde),
      int_key("train_count", &ExperimentConfig::train_count),
      int_key("test_count", &ExperimentConfig::test_count),
      int_key("resolution", &ExperimentConfig::resolution),
      int_key("s_init", &ExperimentConfig::s_init),
      int_key("init_steps", &ExperimentConfig::init_steps),
      real_key("init_rate", &ExperimentConfig::init_rate),
      int_key("sdd_batch", &ExperimentConfig::sdd_batch),
      real_key("sdd_rate", &ExperimentConfig::sdd_rate),
      real_key("sdd_momentum", &ExperimentConfig::sdd_momentum),
      real_key("sdd_averaging", &ExperimentConfig::sdd_averaging),
      int_key("sdd_epochs", &ExperimentConfig::sdd_epochs),
      int_key("wno_levels", &ExperimentConfig::wno_levels),
      text_key("wno_basis", &ExperimentConfig::wno_basis),
      int_key("wno_width", &ExperimentConfig::wno_width),
      int_key("wno_layers", &ExperimentConfig::wno_layers),
      int_key("wno_latent", &ExperimentConfig::wno_latent),
      text_key("kernel_family", &ExperimentConfig::kernel_family),
      uint_key("data_seed", &ExperimentConfig::data_seed),
      uint_key("train_seed", &ExperimentConfig::train_seed),
      int_key("samples", &ExperimentConfig::samples),
      real_key("level", &ExperimentConfig::level),
      int_key("superres", &ExperimentConfig::superres),
  };
  return table;
}

}  // namespace

void ExperimentConfig::validate() const {
  if (pde != "burgers" && pde != "advection" && pde != "darcy")
    throw ValidationError("config: pde must be burgers, advection, or darcy, got '" +
                          pde + "'");
  if (train_count < 1 || test_count < 1)
    throw ValidationError("config: train_count and test_count must be at least 1");
  const int64_t min_res = pde == "burgers" ? 12 : pde == "darcy" ? 3 : 2;
  if (resolution < min_res)
    throw ValidationError("config: resolution for " + pde + " must be at least " +
                          std::to_string(min_res));
  if (s_init < 1 || s_init > train_count)
    throw ValidationError("config: s_init must lie in [1, train_count]");
  if (init_steps < 0) throw ValidationError("config: init_steps must be non-negative");
  if (!(init_rate > 0.0) || !std::isfinite(init_rate))
    throw ValidationError("config: init_rate must be positive");
  if (sdd_batch < 1 || sdd_batch > train_count)
    throw ValidationError("config: sdd_batch must lie in [1, train_count]");
  if (!(sdd_rate > 0.0) || !std::isfinite(sdd_rate))
    throw ValidationError("config: sdd_rate must be positive");
  if (!(sdd_momentum >= 0.0) || sdd_momentum >= 1.0)
    throw ValidationError("config: sdd_momentum must lie in [0, 1)");
  if (!(sdd_averaging > 0.0) || sdd_averaging > 1.0)
    throw ValidationError("config: sdd_averaging must lie in (0, 1]");
  if (sdd_epochs < 0) throw ValidationError("config: sdd_epochs must be non-negative");
  if (wno_levels < 1 || wno_levels > 16)
    throw ValidationError("config: wno_levels must lie in [1, 16]");
  ad::WaveletBasis::from_name(wno_basis);
  if (spatial_rank() == 1 && resolution % (int64_t(1) << wno_levels) != 0)
    throw ValidationError("config: resolution " + std::to_string(resolution) +
                          " is not divisible by 2^wno_levels");
  if (wno_width < 1 || wno_layers < 1 || wno_latent < 1)
    throw ValidationError("config: wno_width, wno_layers, and wno_latent must be positive");
  kernel::family_from_name(kernel_family);
  if (samples < 2) throw ValidationError("config: samples must be at least 2");
  if (!(level > 0.0) || !(level < 1.0))
    throw ValidationError("config: level must lie in (0, 1)");
  if (superres != 0 && superres < resolution)
    throw ValidationError("config: superres must be 0 or at least the native resolution");
}

wno::WnoConfig ExperimentConfig::wno_template() const {
  wno::WnoConfig w;
  w.spatial_rank = spatial_rank();
  w.in_channels = 1;
  w.with_coords = true;
  w.width = static_cast<int>(wno_width);
  w.layers = static_cast<int>(wno_layers);
  w.levels = static_cast<int>(wno_levels);
  w.basis = wno_basis;
  w.latent_channels = static_cast<int>(wno_latent);
  w.activation = wno::Activation::gelu;
  return w;
}

gp::InitConfig ExperimentConfig::init_config() const {
  gp::InitConfig icfg;
  icfg.subset = static_cast<int>(s_init);
  icfg.steps = static_cast<int>(init_steps);
  icfg.step_size = init_rate;
  icfg.seed = train_seed;
  return icfg;
}

int64_t ExperimentConfig::sdd_steps(int64_t train_rows) const {
  if (train_rows < 1) throw ValidationError("config: need at least one training row");
  return sdd_epochs * ((train_rows + sdd_batch - 1) / sdd_batch);
}

sdd::SddConfig ExperimentConfig::sdd_config(int64_t train_rows) const {
  sdd::SddConfig scfg;
  scfg.steps = sdd_steps(train_rows);
  scfg.batch = sdd_batch;
  scfg.step_size = sdd_rate;
  scfg.momentum = sdd_momentum;
  scfg.averaging = sdd_averaging;
  scfg.seed = train_seed;
  return scfg;
}

ExperimentConfig parse_config_text(const std::string& body) {
  ExperimentConfig out;
  std::set<std::string> seen;
  std::istringstream in(body);
  std::string line;
  int64_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ValidationError("config line " + std::to_string(lineno) +
                            ": expected 'key = value', got '" + line + "'");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    const KeyBinding* binding = nullptr;
    for (const KeyBinding& b : bindings())
      if (key == b.name) binding = &b;
    if (binding == nullptr)
      throw ValidationError("config line " + std::to_string(lineno) +
                            ": unknown key '" + key + "'");
    if (!seen.insert(key).second)
      throw ValidationError("config line " + std::to_string(lineno) +
                            ": duplicate key '" + key + "'");
    binding->set(out, value);
  }
  out.validate();
  return out;
}

ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError(path + ": cannot open config file");
  std::ostringstream body;
  body << in.rdbuf();
  return parse_config_text(body.str());
}

std::string config_text(const ExperimentConfig& cfg) {
  std::ostringstream out;
  for (const KeyBinding& b : bindings()) out << b.name << " = " << b.get(cfg) << "\n";
  return out.str();
}

uint64_t config_digest(const ExperimentConfig& cfg) {
  const std::string text = config_text(cfg);
  return fnv1a(text.data(), text.size());
}

}  // namespace gpo::cfg
