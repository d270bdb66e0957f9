#include "vaebo/config.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <filesystem>
#include <functional>
#include <limits>
#include <sstream>
#include <stdexcept>

#include "vaebo/error.hpp"
#include "vaebo/fileutil.hpp"
#include "vaebo/geometry.hpp"

namespace vaebo::config {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

}  // namespace

FlatConfig FlatConfig::parse(const std::string& text) {
  FlatConfig cfg;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw std::invalid_argument("config line " + std::to_string(lineno) + ": expected 'section.key = value'");
    const std::string key = trim(line.substr(0, eq));
    if (key.empty() || key.find('.') == std::string::npos || key.front() == '.' || key.back() == '.')
      throw std::invalid_argument("config line " + std::to_string(lineno) + ": key '" + key +
                                  "' is not of the form section.key");
    if (cfg.has(key)) throw std::invalid_argument("config line " + std::to_string(lineno) + ": duplicate key '" + key + "'");
    cfg.values_[key] = trim(line.substr(eq + 1));
  }
  return cfg;
}

FlatConfig FlatConfig::load(const std::string& path) { return parse(io::read_text(path)); }

void FlatConfig::set(const std::string& key, const std::string& value) { values_[key] = value; }

void FlatConfig::set_assignment(const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos) throw std::invalid_argument("override '" + assignment + "' is not key=value");
  set(trim(assignment.substr(0, eq)), trim(assignment.substr(eq + 1)));
}

std::string FlatConfig::to_text() const {
  std::string out;
  for (const auto& [k, v] : values_) out += k + " = " + v + "\n";
  return out;
}

namespace {

template <class T>
T parse_number(const std::string& key, const std::string& s) {
  T value{};
  const char* end = s.data() + s.size();
  if constexpr (std::is_floating_point_v<T>) {
    if (s == "inf") return std::numeric_limits<T>::infinity();
  }
  auto [ptr, ec] = std::from_chars(s.data(), end, value);
  if (ec != std::errc() || ptr != end) throw std::invalid_argument("config key '" + key + "': cannot parse '" + s + "'");
  return value;
}

std::string format(double v) {
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[32];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, ptr);
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::string item;
  std::istringstream in(s);
  while (std::getline(in, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

template <class T>
std::string join(const std::vector<T>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) out += ",";
    if constexpr (std::is_same_v<T, std::string>) out += v[i];
    else out += std::to_string(v[i]);
  }
  return out;
}

struct Field {
  std::string key;
  std::function<std::string()> get;
  std::function<void(const std::string&)> set;
};

template <class T>
Field num(const std::string& key, T& ref) {
  return {key,
          [&ref] {
            if constexpr (std::is_floating_point_v<T>) return format(ref);
            else return std::to_string(ref);
          },
          [&ref, key](const std::string& s) { ref = parse_number<T>(key, s); }};
}

Field str(const std::string& key, std::string& ref) {
  return {key, [&ref] { return ref; }, [&ref](const std::string& s) { ref = s; }};
}

template <class T>
Field list(const std::string& key, std::vector<T>& ref) {
  return {key, [&ref] { return join(ref); },
          [&ref, key](const std::string& s) {
            ref.clear();
            for (const auto& item : split_list(s)) {
              if constexpr (std::is_same_v<T, std::string>) ref.push_back(item);
              else ref.push_back(parse_number<T>(key, item));
            }
          }};
}

std::vector<Field> fields(RunConfig& c) {
  auto& bo = c.bo;
  return {
      num("run.seed", c.seed),
      str("run.out", c.out),
      num("run.jobs", c.jobs),
      num("mesh.width", c.mesh.width),
      num("mesh.height", c.mesh.height),
      str("mesh.import", c.mesh.import_path),
      num("mesh.segments", c.mesh.segments),
      num("sim.diffusion", c.diffusion),
      num("sim.c", c.ap.c),
      num("sim.eps0", c.ap.eps0),
      num("sim.mu1", c.ap.mu1),
      num("sim.mu2", c.ap.mu2),
      num("sim.dt", c.ap.dt),
      num("sim.n_steps", c.ap.n_steps),
      list("sim.stim_nodes", c.ap.stim_nodes),
      num("sim.stim_amplitude", c.ap.stim_amplitude),
      num("sim.stim_duration_steps", c.ap.stim_duration_steps),
      num("lead.n_leads", c.lead.n_leads),
      num("lead.height", c.lead.height),
      num("lead.jitter", c.lead.jitter),
      num("noise.snr_db", c.snr_db),
      num("datagen.count", c.datagen.count),
      num("datagen.size_min", c.datagen.size_min),
      num("datagen.size_max", c.datagen.size_max),
      num("datagen.random_fraction", c.datagen.random_fraction),
      num("datagen.theta_healthy", c.datagen.theta_healthy),
      num("datagen.theta_infarct", c.datagen.theta_infarct),
      list("vae.hidden", c.arch.hidden_dims),
      num("vae.latent_dim", c.arch.latent_dim),
      num("vae.epochs", c.train.epochs),
      num("vae.batch_size", c.train.batch_size),
      num("vae.learning_rate", c.train.adam.learning_rate),
      num("vae.beta1", c.train.adam.beta1),
      num("vae.beta2", c.train.adam.beta2),
      num("vae.adam_epsilon", c.train.adam.epsilon),
      str("prior.kind", c.prior.kind),
      num("prior.k", c.prior.k),
      num("prior.subsample", c.prior.subsample),
      num("prior.max_iters", c.prior.max_iters),
      num("bo.budget", bo.budget),
      num("bo.n_init", bo.n_init),
      num("bo.bound_low", bo.bound_low),
      num("bo.bound_high", bo.bound_high),
      {"bo.acquisition", [&bo] { return bayesopt::to_string(bo.acquisition); },
       [&bo](const std::string& s) { bo.acquisition = bayesopt::acquisition_from_string(s); }},
      num("bo.candidate_count", bo.candidate_count),
      num("bo.refine_steps", bo.refine_steps),
      num("bo.refit_every", bo.refit_every),
      num("bo.restarts", bo.hyper.n_restarts),
      num("bo.optimizer_max_iters", bo.hyper.max_evals),
      num("bo.jitter", bo.hyper.jitter),
      num("bo.length_scale_min", bo.hyper.bounds.length_low),
      num("bo.length_scale_max", bo.hyper.bounds.length_high),
      num("bo.amplitude_min", bo.hyper.bounds.amplitude_low),
      num("bo.amplitude_max", bo.hyper.bounds.amplitude_high),
      num("metrics.bins", c.metrics_bins),
      num("experiment.cases", c.experiment.cases),
      num("experiment.size_min", c.experiment.size_min),
      num("experiment.size_max", c.experiment.size_max),
      num("experiment.random_fraction", c.experiment.random_fraction),
      list("experiment.methods", c.experiment.methods),
  };
}

}  // namespace

RunConfig RunConfig::from_flat(const FlatConfig& flat) {
  RunConfig cfg;
  auto table = fields(cfg);
  for (const auto& [key, value] : flat.values()) {
    auto it = std::find_if(table.begin(), table.end(), [&](const Field& f) { return f.key == key; });
    if (it == table.end()) throw std::invalid_argument("unknown config key '" + key + "'");
    it->set(value);
  }
  return cfg;
}

FlatConfig RunConfig::to_flat() const {
  RunConfig copy = *this;
  FlatConfig flat;
  for (const auto& f : fields(copy)) flat.set(f.key, f.get());
  return flat;
}

bool is_method(const std::string& name) {
  if (name == "fs") return true;
  try {
    bayesopt::acquisition_from_string(name);
    return true;
  } catch (const std::invalid_argument&) {
    return false;
  }
}

namespace {

void require(bool ok, const std::string& what) {
  if (!ok) throw std::invalid_argument("invalid config: " + what);
}

bool in_unit(double v) { return v >= 0.0 && v <= 1.0; }

}  // namespace

void RunConfig::validate() const {
  require(jobs >= 1, "run.jobs must be at least 1");
  geometry::MeshGraph base = [&] {
    if (!mesh.import_path.empty()) {
      require(std::filesystem::exists(mesh.import_path), "mesh.import '" + mesh.import_path + "' does not exist");
      return geometry::load_mesh(mesh.import_path);
    }
    require(mesh.width >= 1 && mesh.height >= 1 && mesh.width * mesh.height >= 2, "mesh dimensions too small");
    return geometry::build_grid_mesh(mesh.width, mesh.height);
  }();
  require(mesh.segments >= 0, "mesh.segments must be non-negative");
  if (mesh.segments > 0) {
    require(base.grid().has_value(), "mesh.segments needs a grid mesh");
    require(base.grid()->width % mesh.segments == 0 && base.grid()->height % mesh.segments == 0,
            "mesh.segments must divide both grid dimensions");
    require(mesh.segments * mesh.segments <= 32, "at most 32 segments are supported");
  }
  require(diffusion > 0.0, "sim.diffusion must be positive");
  epsim::validate(ap, base, geometry::build_diffusion(base, diffusion));
  require(lead.n_leads >= 1, "lead.n_leads must be positive");
  require(lead.height > 0.0 && lead.jitter >= 0.0, "lead.height must be positive and lead.jitter non-negative");
  require(snr_db > 0.0, "noise.snr_db must be positive (inf disables noise)");

  require(datagen.count >= 1, "datagen.count must be positive");
  require(datagen.size_min > 0.0 && datagen.size_min <= datagen.size_max && datagen.size_max < 1.0,
          "datagen sizes must satisfy 0 < size_min <= size_max < 1");
  require(in_unit(datagen.random_fraction), "datagen.random_fraction must lie in [0, 1]");
  require(in_unit(datagen.theta_healthy) && in_unit(datagen.theta_infarct) &&
              datagen.theta_healthy < datagen.theta_infarct,
          "theta values must lie in [0, 1] with healthy < infarct");

  require(arch.latent_dim >= 1, "vae.latent_dim must be positive");
  require(!arch.hidden_dims.empty(), "vae.hidden needs at least one layer");
  for (int h : arch.hidden_dims) require(h >= 1, "vae.hidden widths must be positive");
  require(train.epochs >= 0 && train.batch_size >= 1, "vae.epochs must be >= 0 and vae.batch_size >= 1");
  require(train.adam.learning_rate > 0.0 && train.adam.epsilon > 0.0, "vae learning rate and epsilon must be positive");
  require(train.adam.beta1 >= 0.0 && train.adam.beta1 < 1.0 && train.adam.beta2 >= 0.0 && train.adam.beta2 < 1.0,
          "vae betas must lie in [0, 1)");

  require(prior.kind == "isotropic" || prior.kind == "post1" || prior.kind == "postk",
          "prior.kind must be isotropic, post1 or postk");
  require(prior.k >= 1 && prior.subsample >= prior.k && prior.max_iters >= 1,
          "prior.k >= 1, prior.subsample >= prior.k and prior.max_iters >= 1 required");
  require(prior.k <= datagen.count, "prior.k exceeds the dataset size");

  bo.validate();
  require(bo.hyper.max_evals >= 1 && bo.hyper.jitter > 0.0, "bo optimizer settings must be positive");
  require(bo.hyper.bounds.length_low > 0.0 && bo.hyper.bounds.length_low < bo.hyper.bounds.length_high &&
              bo.hyper.bounds.amplitude_low > 0.0 && bo.hyper.bounds.amplitude_low < bo.hyper.bounds.amplitude_high,
          "gp hyperparameter bounds must be positive with min < max");
  require(metrics_bins >= 2, "metrics.bins must be at least 2");

  require(experiment.cases >= 1, "experiment.cases must be positive");
  require(experiment.size_min > 0.0 && experiment.size_min <= experiment.size_max && experiment.size_max < 1.0,
          "experiment sizes must satisfy 0 < size_min <= size_max < 1");
  require(in_unit(experiment.random_fraction), "experiment.random_fraction must lie in [0, 1]");
  require(!experiment.methods.empty(), "experiment.methods is empty");
  for (const auto& m : experiment.methods) require(is_method(m), "unknown method '" + m + "'");
}

}  // namespace vaebo::config
