// Command-line front end: one subcommand per pipeline stage plus a sweep runner.

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "vaebo/config.hpp"
#include "vaebo/error.hpp"
#include "vaebo/fileutil.hpp"
#include "vaebo/pipeline.hpp"
#include "vaebo/seed.hpp"
#include "vaebo/span.hpp"

namespace fs = std::filesystem;
using namespace vaebo;

namespace {

class UsageError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct Globals {
  std::string config_path;
  std::vector<std::string> overrides;
  std::optional<std::uint64_t> seed;
  std::optional<int> jobs;
  std::optional<std::string> out;
};

// Per-command flags that map onto config keys.
struct KeyFlags {
  std::map<std::string, std::string> values;
  void bind(CLI::App* cmd, const std::string& flag, const std::string& key, const std::string& help) {
    cmd->add_option_function<std::string>(flag, [this, key](const std::string& v) { values[key] = v; }, help);
  }
};

config::RunConfig resolve(const Globals& g, const KeyFlags& flags) {
  config::FlatConfig flat = g.config_path.empty() ? config::FlatConfig{} : config::FlatConfig::load(g.config_path);
  for (const auto& a : g.overrides) flat.set_assignment(a);
  for (const auto& [k, v] : flags.values) flat.set(k, v);
  if (g.seed) flat.set("run.seed", std::to_string(*g.seed));
  if (g.jobs) flat.set("run.jobs", std::to_string(*g.jobs));
  if (g.out) flat.set("run.out", *g.out);
  auto cfg = config::RunConfig::from_flat(flat);
  cfg.validate();
  std::cerr << "# resolved config\n" << cfg.to_flat().to_text();
  fs::create_directories(cfg.out);
  return cfg;
}

std::string in_out(const config::RunConfig& cfg, const std::string& given, const std::string& name) {
  return given.empty() ? (fs::path(cfg.out) / name).string() : given;
}

std::string out_file(const config::RunConfig& cfg, const std::string& name) { return (fs::path(cfg.out) / name).string(); }

pipeline::ArtifactMeta meta_for(const std::string& kind, const std::string& fingerprint, std::uint64_t seed) {
  return {kind, fingerprint, seed, {}};
}

// Loads the mesh together with its fingerprint, checking the sidecar if present.
geometry::MeshGraph load_mesh_checked(const std::string& path) {
  auto mesh = geometry::load_mesh(path);
  if (fs::exists(pipeline::meta_path(path)))
    pipeline::check_fingerprint(pipeline::read_meta(path), mesh.fingerprint(), "mesh file " + path);
  return mesh;
}

vae::VaeModel load_vae_checked(const std::string& path, const std::string& fingerprint) {
  const auto meta = pipeline::read_meta(path);
  pipeline::check_fingerprint(meta, fingerprint, "weights file " + path);
  auto model = vae::load(path);
  if (meta.extra.count("scale_low") && meta.extra.count("scale_high"))
    model.scale = {meta.extra.at("scale_low"), meta.extra.at("scale_high")};
  return model;
}

datagen::Dataset load_dataset_checked(const std::string& path, const std::string& fingerprint) {
  pipeline::check_fingerprint(pipeline::read_meta(path), fingerprint, "dataset " + path);
  auto data = datagen::load_dataset(path);
  data.mesh_fingerprint = fingerprint;
  return data;
}

void save_theta(const Eigen::VectorXd& theta, const config::RunConfig& cfg, const std::string& path,
                const std::string& fingerprint, const std::string& kind) {
  datagen::Dataset d;
  d.fields = theta.transpose();
  d.theta_healthy = cfg.datagen.theta_healthy;
  d.theta_infarct = cfg.datagen.theta_infarct;
  datagen::save_dataset(d, path);
  pipeline::write_meta(path, meta_for(kind, fingerprint, cfg.seed));
}

int cmd_mesh(const config::RunConfig& cfg) {
  const auto mesh = pipeline::build_mesh(cfg);
  const auto path = out_file(cfg, "mesh.json");
  geometry::save_mesh(mesh, path);
  pipeline::write_meta(path, meta_for("mesh", mesh.fingerprint(), cfg.seed));
  std::printf("nodes %d edges %zu segments %d fingerprint %s\n", mesh.n_nodes(), mesh.edges().size(),
              mesh.n_segments(), mesh.fingerprint().c_str());
  std::printf("wrote %s\n", path.c_str());
  return 0;
}

int cmd_datagen(const config::RunConfig& cfg, const std::string& mesh_path) {
  const auto mesh = load_mesh_checked(in_out(cfg, mesh_path, "mesh.json"));
  const auto data = pipeline::build_dataset(cfg, mesh);
  if (auto problem = datagen::check_dataset(data, mesh); !problem.empty()) throw Error("dataset check failed: " + problem);
  const auto path = out_file(cfg, "dataset.bin");
  datagen::save_dataset(data, path);
  pipeline::write_meta(path, meta_for("dataset", mesh.fingerprint(), cfg.seed));
  std::printf("fields %d nodes %d\nwrote %s\n", data.size(), data.n_nodes(), path.c_str());
  return 0;
}

int cmd_train(const config::RunConfig& cfg, const std::string& dataset_path) {
  const auto dpath = in_out(cfg, dataset_path, "dataset.bin");
  const auto meta = pipeline::read_meta(dpath);
  const auto data = load_dataset_checked(dpath, meta.mesh_fingerprint);
  const auto model = pipeline::train_vae(cfg, data);
  const auto path = out_file(cfg, "vae.bin");
  vae::save(model, path);
  auto m = meta_for("vae", meta.mesh_fingerprint, cfg.seed);
  m.extra = {{"scale_low", model.scale.low}, {"scale_high", model.scale.high}};
  pipeline::write_meta(path, m);
  std::string log = "epoch,loss\n";
  for (std::size_t e = 0; e < model.info.loss_history.size(); ++e)
    log += std::to_string(e + 1) + "," + std::to_string(model.info.loss_history[e]) + "\n";
  io::write_atomic(out_file(cfg, "train_log.csv"), log);
  std::printf("epochs %d final_loss %.6f\nwrote %s\n", model.info.epochs, model.info.final_loss, path.c_str());
  return 0;
}

int cmd_prior(const config::RunConfig& cfg, const std::string& vae_path, const std::string& dataset_path) {
  const auto dpath = in_out(cfg, dataset_path, "dataset.bin");
  const auto fingerprint = pipeline::read_meta(dpath).mesh_fingerprint;
  const auto data = load_dataset_checked(dpath, fingerprint);
  const auto model = load_vae_checked(in_out(cfg, vae_path, "vae.bin"), fingerprint);
  const auto prior = pipeline::build_prior(cfg, model, data, cfg.prior.kind);
  const auto path = out_file(cfg, "prior.json");
  latentprior::save_prior(prior, path);
  pipeline::write_meta(path, meta_for("prior_" + cfg.prior.kind, fingerprint, cfg.seed));
  std::printf("prior %s components %d\nwrote %s\n", cfg.prior.kind.c_str(), prior.size(), path.c_str());
  return 0;
}

int cmd_simulate(const config::RunConfig& cfg, const std::string& mesh_path, const std::string& theta_path,
                 int theta_index, std::optional<int> case_index) {
  const auto mesh = load_mesh_checked(in_out(cfg, mesh_path, "mesh.json"));
  const auto forward = pipeline::build_forward(cfg, mesh);
  const auto fp = mesh.fingerprint();
  epsim::EcgTrace measured;
  if (case_index) {
    const auto phantom = pipeline::make_phantom(cfg, mesh, forward, *case_index);
    measured = phantom.measured;
    save_theta(phantom.truth, cfg, out_file(cfg, "truth.bin"), fp, "theta");
    io::write_atomic(out_file(cfg, "truth.pgm"), pipeline::image_to_pgm(pipeline::field_image(mesh, phantom.truth)));
    std::printf("case %d infarct fraction %.4f\n", *case_index, phantom.size_fraction);
  } else {
    if (theta_path.empty()) throw UsageError("simulate needs --theta or --case");
    pipeline::check_fingerprint(pipeline::read_meta(theta_path), fp, "theta file " + theta_path);
    const auto data = datagen::load_dataset(theta_path);
    if (theta_index < 0 || theta_index >= data.size()) throw UsageError("--index out of range");
    const Eigen::VectorXd theta = data.field(theta_index);
    measured = epsim::add_noise_snr(forward(as_span(theta)), cfg.snr_db, derive_seed(cfg.seed, "noise"));
  }
  const auto ecg_path = out_file(cfg, "ecg.csv");
  const auto lead_path = out_file(cfg, "lead.bin");
  epsim::save_ecg_csv(measured, ecg_path);
  pipeline::write_meta(ecg_path, meta_for("ecg", fp, cfg.seed));
  epsim::save_lead_field(forward.lead(), lead_path);
  pipeline::write_meta(lead_path, meta_for("lead_field", fp, cfg.seed));
  std::printf("leads %d steps %d\nwrote %s\nwrote %s\n", static_cast<int>(measured.y.rows()),
              static_cast<int>(measured.y.cols()), ecg_path.c_str(), lead_path.c_str());
  return 0;
}

struct EstimateArgs {
  std::string mesh, ecg, lead, vae, prior;
  std::optional<int> case_index;
};

int cmd_estimate(const config::RunConfig& cfg, const EstimateArgs& a, const std::string& method) {
  if (!config::is_method(method)) throw UsageError("unknown method '" + method + "'");
  const bool prior_needed = method == "ei_post1" || method == "ei_postk";
  if (prior_needed && a.prior.empty()) throw UsageError("method " + method + " requires --prior");
  const auto mesh = load_mesh_checked(in_out(cfg, a.mesh, "mesh.json"));
  const auto fp = mesh.fingerprint();
  const auto ecg_path = in_out(cfg, a.ecg, "ecg.csv");
  const auto lead_path = in_out(cfg, a.lead, "lead.bin");
  pipeline::check_fingerprint(pipeline::read_meta(ecg_path), fp, "signals " + ecg_path);
  pipeline::check_fingerprint(pipeline::read_meta(lead_path), fp, "lead field " + lead_path);
  const auto measured = epsim::load_ecg_csv(ecg_path);
  const auto forward = pipeline::build_forward(cfg, mesh, epsim::load_lead_field(lead_path));

  std::optional<vae::VaeModel> model;
  std::optional<latentprior::LatentPrior> prior;
  if (method != "fs") model = load_vae_checked(in_out(cfg, a.vae, "vae.bin"), fp);
  if (prior_needed) {
    pipeline::check_fingerprint(pipeline::read_meta(a.prior), fp, "prior " + a.prior);
    prior = latentprior::load_prior(a.prior);
  }
  const auto acq = method == "fs" ? bayesopt::Acquisition::ei : bayesopt::acquisition_from_string(method);
  std::string log;
  auto observer = [&](const bayesopt::BoRecord& r) { log += bayesopt::record_to_json_line(r, acq) + "\n"; };
  const auto res = pipeline::estimate(cfg, method, measured, forward, model ? &*model : nullptr,
                                      prior ? &*prior : nullptr, pipeline::bo_seed(cfg, a.case_index.value_or(0)),
                                      observer);
  io::write_atomic(out_file(cfg, "run_log.jsonl"), log);
  io::write_atomic(out_file(cfg, "result.json"), bayesopt::result_to_json(res));
  pipeline::write_meta(out_file(cfg, "result.json"), meta_for("bo_result", fp, cfg.seed));
  save_theta(res.best_theta, cfg, out_file(cfg, "best_theta.bin"), fp, "theta");
  io::write_atomic(out_file(cfg, "best_theta.pgm"), pipeline::image_to_pgm(pipeline::field_image(mesh, res.best_theta)));
  std::printf("method %s evaluations %d best_value %.6g\nwrote %s\n", method.c_str(), res.eval_count, res.best_value,
              out_file(cfg, "best_theta.bin").c_str());
  return 0;
}

int cmd_evaluate(const config::RunConfig& cfg, const std::string& truth_path, const std::string& est_path) {
  const auto tp = in_out(cfg, truth_path, "truth.bin");
  const auto ep = in_out(cfg, est_path, "best_theta.bin");
  const auto tmeta = pipeline::read_meta(tp);
  pipeline::check_fingerprint(pipeline::read_meta(ep), tmeta.mesh_fingerprint, "estimate " + ep);
  const auto truth = datagen::load_dataset(tp);
  const auto est = datagen::load_dataset(ep);
  if (truth.size() < 1 || est.size() < 1) throw Error("empty theta file");
  const Eigen::VectorXd t = truth.field(0), e = est.field(0);
  int code = 0;
  metrics::EvalReport report;
  try {
    report = metrics::evaluate(as_span(t), as_span(e), truth.theta_infarct, cfg.metrics_bins);
  } catch (const metrics::EvaluationError& err) {
    report = err.partial();
    std::fprintf(stderr, "error: %s\n", err.what());
    code = 1;
  }
  io::write_atomic(out_file(cfg, "report.json"), metrics::report_to_json(report));
  io::write_atomic(out_file(cfg, "report.csv"), metrics::report_csv_header() + metrics::report_csv_row(report));
  std::printf("dice %.6f rmse %.6f threshold %.6f\n", report.dice, report.rmse, report.threshold);
  return code;
}

int cmd_experiment(const config::RunConfig& cfg, const std::string& vae_path, const std::string& dataset_path) {
  const auto mesh = pipeline::build_mesh(cfg);
  const auto fp = mesh.fingerprint();
  bool need_vae = false;
  for (const auto& m : cfg.experiment.methods) need_vae |= m != "fs";
  std::optional<datagen::Dataset> data;
  std::optional<vae::VaeModel> model;
  if (need_vae) {
    if (!dataset_path.empty()) {
      data = load_dataset_checked(dataset_path, fp);
    } else {
      std::cerr << "generating " << cfg.datagen.count << " training fields\n";
      data = pipeline::build_dataset(cfg, mesh);
    }
    if (!vae_path.empty()) {
      model = load_vae_checked(vae_path, fp);
    } else {
      std::cerr << "training VAE for " << cfg.train.epochs << " epochs\n";
      model = pipeline::train_vae(cfg, *data);
    }
  }
  pipeline::ExperimentInputs inputs;
  inputs.model = model ? &*model : nullptr;
  for (const auto& m : cfg.experiment.methods) {
    if (m == "ei_post1") inputs.priors.emplace(m, pipeline::build_prior(cfg, *model, *data, "post1"));
    if (m == "ei_postk") inputs.priors.emplace(m, pipeline::build_prior(cfg, *model, *data, "postk"));
  }
  const auto result = pipeline::run_experiment(cfg, inputs, cfg.out, &std::cerr);
  for (const auto& m : cfg.experiment.methods)
    std::printf("%-14s median_dice %.4f median_rmse %.4f\n", m.c_str(), result.median_dice.at(m),
                result.median_rmse.at(m));
  std::printf("wrote %s\n", (fs::path(cfg.out) / "results.csv").string().c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Latent-space Bayesian optimisation of tissue excitability from surface signals"};
  app.require_subcommand(1);
  app.fallthrough();
  Globals g;
  KeyFlags flags;
  app.add_option("--config", g.config_path, "Flat section.key = value config file")->check(CLI::ExistingFile);
  app.add_option("--set", g.overrides, "Override a config key (key=value), repeatable");
  app.add_option_function<std::uint64_t>("--seed", [&](std::uint64_t v) { g.seed = v; }, "Global seed");
  app.add_option_function<int>("--jobs", [&](int v) { g.jobs = v; }, "Parallel sweep cases");
  app.add_option_function<std::string>("--out", [&](const std::string& v) { g.out = v; }, "Output directory");

  auto* mesh = app.add_subcommand("mesh", "Build or import a mesh");
  flags.bind(mesh, "--width", "mesh.width", "Grid width");
  flags.bind(mesh, "--height", "mesh.height", "Grid height");
  flags.bind(mesh, "--import", "mesh.import", "Import a mesh JSON file");
  flags.bind(mesh, "--segments", "mesh.segments", "Segments per axis (0: none)");

  std::string mesh_path, dataset_path, vae_path, theta_path, truth_path, est_path;
  int theta_index = 0;
  std::optional<int> case_index;
  EstimateArgs est;
  std::string method;

  auto* datagen_cmd = app.add_subcommand("datagen", "Generate the training set");
  datagen_cmd->add_option("--mesh", mesh_path, "Mesh file (default <out>/mesh.json)");
  flags.bind(datagen_cmd, "--count", "datagen.count", "Number of fields");

  auto* train = app.add_subcommand("train", "Train the VAE");
  train->add_option("--dataset", dataset_path, "Dataset (default <out>/dataset.bin)");
  flags.bind(train, "--epochs", "vae.epochs", "Training epochs");

  auto* prior = app.add_subcommand("prior", "Build a latent prior");
  prior->add_option("--vae", vae_path, "Weights (default <out>/vae.bin)");
  prior->add_option("--dataset", dataset_path, "Dataset (default <out>/dataset.bin)");
  flags.bind(prior, "--kind", "prior.kind", "isotropic | post1 | postk");
  flags.bind(prior, "--k", "prior.k", "Components for postk");

  auto* simulate = app.add_subcommand("simulate", "Simulate surface signals");
  simulate->add_option("--mesh", mesh_path, "Mesh file (default <out>/mesh.json)");
  simulate->add_option("--theta", theta_path, "Theta file (dataset format)");
  simulate->add_option("--index", theta_index, "Row of the theta file");
  simulate->add_option_function<int>("--case", [&](int v) { case_index = v; }, "Generate sweep phantom N instead");
  flags.bind(simulate, "--snr", "noise.snr_db", "Noise level in dB (inf: none)");

  auto* estimate = app.add_subcommand("estimate", "Run Bayesian optimisation");
  estimate->add_option("--mesh", est.mesh, "Mesh file (default <out>/mesh.json)");
  estimate->add_option("--ecg", est.ecg, "Signals CSV (default <out>/ecg.csv)");
  estimate->add_option("--lead", est.lead, "Lead field (default <out>/lead.bin)");
  estimate->add_option("--vae", est.vae, "Weights (default <out>/vae.bin)");
  estimate->add_option("--prior", est.prior, "Prior file (required for ei_post1 / ei_postk)");
  estimate->add_option("--acq,--method", method, "ei | ei_isotropic | ei_post1 | ei_postk | fs");
  estimate->add_option_function<int>("--case", [&](int v) { est.case_index = v; }, "Case index for the BO seed");
  flags.bind(estimate, "--budget", "bo.budget", "Objective evaluations");

  auto* evaluate = app.add_subcommand("evaluate", "Score an estimate");
  evaluate->add_option("--truth", truth_path, "True theta (default <out>/truth.bin)");
  evaluate->add_option("--estimate", est_path, "Estimated theta (default <out>/best_theta.bin)");

  auto* experiment = app.add_subcommand("experiment", "Seeded phantom sweep");
  experiment->add_option("--vae", vae_path, "Reuse trained weights");
  experiment->add_option("--dataset", dataset_path, "Reuse a dataset");
  flags.bind(experiment, "--cases", "experiment.cases", "Number of phantoms");
  flags.bind(experiment, "--methods", "experiment.methods", "Comma-separated methods");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  try {
    if (*estimate && method.empty()) throw UsageError("estimate requires --acq");
    const auto cfg = resolve(g, flags);
    if (*mesh) return cmd_mesh(cfg);
    if (*datagen_cmd) return cmd_datagen(cfg, mesh_path);
    if (*train) return cmd_train(cfg, dataset_path);
    if (*prior) return cmd_prior(cfg, vae_path, dataset_path);
    if (*simulate) return cmd_simulate(cfg, mesh_path, theta_path, theta_index, case_index);
    if (*estimate) return cmd_estimate(cfg, est, method);
    if (*evaluate) return cmd_evaluate(cfg, truth_path, est_path);
    if (*experiment) return cmd_experiment(cfg, vae_path, dataset_path);
  } catch (const std::invalid_argument& e) {
    std::fprintf(stderr, "usage error: %s\n", e.what());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
