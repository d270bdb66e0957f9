#include "vaebo/pipeline.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <sstream>
#include <stdexcept>
#include <thread>

#include <nlohmann/json.hpp>

#include "vaebo/error.hpp"
#include "vaebo/fileutil.hpp"
#include "vaebo/seed.hpp"
#include "vaebo/span.hpp"

namespace vaebo::pipeline {

namespace fs = std::filesystem;

std::string meta_path(const std::string& artifact) { return artifact + ".meta.json"; }

void write_meta(const std::string& artifact, const ArtifactMeta& meta) {
  nlohmann::json j{{"kind", meta.kind}, {"mesh_fingerprint", meta.mesh_fingerprint}, {"seed", meta.seed}};
  for (const auto& [k, v] : meta.extra) j["extra"][k] = v;
  io::write_atomic(meta_path(artifact), j.dump(1) + "\n");
}

ArtifactMeta read_meta(const std::string& artifact) {
  const std::string path = meta_path(artifact);
  if (!fs::exists(path)) throw CorruptFile("missing metadata sidecar " + path);
  try {
    const auto j = nlohmann::json::parse(io::read_text(path));
    ArtifactMeta m{j.at("kind").get<std::string>(), j.at("mesh_fingerprint").get<std::string>(),
                   j.at("seed").get<std::uint64_t>(), {}};
    if (j.contains("extra"))
      for (const auto& [k, v] : j.at("extra").items()) m.extra[k] = v.get<double>();
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw CorruptFile(path + ": " + e.what());
  }
}

void check_fingerprint(const ArtifactMeta& meta, const std::string& expected, const std::string& what) {
  if (meta.mesh_fingerprint != expected)
    throw FingerprintMismatch(what + " was produced for mesh " + meta.mesh_fingerprint + " but the mesh in use is " +
                              expected);
}

geometry::MeshGraph build_mesh(const config::RunConfig& cfg) {
  geometry::MeshGraph mesh = cfg.mesh.import_path.empty() ? geometry::build_grid_mesh(cfg.mesh.width, cfg.mesh.height)
                                                          : geometry::load_mesh(cfg.mesh.import_path);
  if (cfg.mesh.segments > 0) mesh = geometry::partition_segments(mesh, cfg.mesh.segments);
  return mesh;
}

epsim::ApParams ap_params(const config::RunConfig& cfg) { return cfg.ap; }

epsim::LeadField build_lead_field(const config::RunConfig& cfg, const geometry::MeshGraph& mesh) {
  return epsim::synth_lead_field(mesh, epsim::default_electrodes(mesh, cfg.lead.n_leads, cfg.lead.height),
                                 derive_seed(cfg.seed, "lead"), cfg.lead.jitter);
}

epsim::ForwardModel build_forward(const config::RunConfig& cfg, const geometry::MeshGraph& mesh,
                                  std::optional<epsim::LeadField> lead) {
  if (!lead) lead = build_lead_field(cfg, mesh);
  if (lead->h.cols() != mesh.n_nodes()) throw std::invalid_argument("lead field does not match the mesh");
  return epsim::ForwardModel(epsim::Simulator(mesh, cfg.diffusion, ap_params(cfg)), std::move(*lead));
}

datagen::Dataset build_dataset(const config::RunConfig& cfg, const geometry::MeshGraph& mesh) {
  datagen::DatasetConfig dc = cfg.datagen;
  dc.rng_seed = derive_seed(cfg.seed, "datagen");
  return datagen::make_dataset(mesh, dc);
}

vae::VaeModel train_vae(const config::RunConfig& cfg, const datagen::Dataset& data) {
  vae::VaeArch arch = cfg.arch;
  arch.input_dim = data.n_nodes();
  auto model = vae::VaeModel::initialized(arch, derive_seed(cfg.seed, "vae_init"));
  model.scale = {data.theta_healthy, data.theta_infarct};
  vae::TrainConfig tc = cfg.train;
  tc.rng_seed = derive_seed(cfg.seed, "vae_train");
  return vae::train(std::move(model), data.fields, tc);
}

latentprior::LatentPrior build_prior(const config::RunConfig& cfg, const vae::VaeModel& model,
                                     const datagen::Dataset& data, const std::string& kind) {
  if (kind == "isotropic") return latentprior::LatentPrior::isotropic(model.arch().latent_dim);
  const auto agg = latentprior::aggregate_posterior(model, data.fields);
  if (kind == "post1") return latentprior::moment_match_single(agg);
  if (kind == "postk") {
    const auto reduced = latentprior::subsample(agg, cfg.prior.subsample, derive_seed(cfg.seed, "prior_subsample"));
    return latentprior::reduce_kmeans(reduced, cfg.prior.k, cfg.prior.max_iters, derive_seed(cfg.seed, "prior_kmeans"))
        .prior;
  }
  throw std::invalid_argument("unknown prior kind '" + kind + "'");
}

Phantom make_phantom(const config::RunConfig& cfg, const geometry::MeshGraph& mesh,
                     const epsim::ForwardModel& forward, int index) {
  std::mt19937_64 rng(derive_seed(derive_seed(cfg.seed, "case"), static_cast<std::uint64_t>(index)));
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  Phantom p;
  p.index = index;
  p.size_fraction = cfg.experiment.size_min + unit(rng) * (cfg.experiment.size_max - cfg.experiment.size_min);
  datagen::InfarctSpec spec;
  spec.size_fraction = p.size_fraction;
  spec.mode = unit(rng) < cfg.experiment.random_fraction ? datagen::GrowthMode::random_growth
                                                          : datagen::GrowthMode::compact_growth;
  spec.rng_seed = rng();
  p.truth = datagen::make_field(mesh.n_nodes(), datagen::grow_infarct(mesh, spec), cfg.datagen.theta_healthy,
                                cfg.datagen.theta_infarct);
  const auto clean = forward(as_span(p.truth));
  p.measured = epsim::add_noise_snr(clean, cfg.snr_db,
                                    derive_seed(derive_seed(cfg.seed, "noise"), static_cast<std::uint64_t>(index)));
  return p;
}

std::uint64_t bo_seed(const config::RunConfig& cfg, int case_index) {
  return derive_seed(derive_seed(cfg.seed, "bo"), static_cast<std::uint64_t>(case_index));
}

bayesopt::BoResult estimate(const config::RunConfig& cfg, const std::string& method, const epsim::EcgTrace& measured,
                            const epsim::ForwardModel& forward, const vae::VaeModel* model,
                            const latentprior::LatentPrior* prior, std::uint64_t seed,
                            const bayesopt::Observer& observer) {
  bayesopt::BoConfig bo = cfg.bo;
  bo.rng_seed = seed;
  if (method == "fs") return bayesopt::run_fs_baseline(measured, forward, bo, observer);
  bo.acquisition = bayesopt::acquisition_from_string(method);
  if (!model) throw std::invalid_argument("method " + method + " needs a trained VAE");
  if (bayesopt::needs_prior(bo.acquisition) && !prior)
    throw std::invalid_argument("method " + method + " needs a prior file");
  return bayesopt::run_bo(measured, *model, prior, bo, forward, observer);
}

double median(std::vector<double> v) {
  v.erase(std::remove_if(v.begin(), v.end(), [](double x) { return std::isnan(x); }), v.end());
  if (v.empty()) return std::numeric_limits<double>::quiet_NaN();
  std::sort(v.begin(), v.end());
  const auto n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

namespace {

std::string fmt(double v) {
  if (std::isnan(v)) return "";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

std::string csv_escape(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c == '\n' ? ' ' : c;
  }
  return out + "\"";
}

std::string case_tag(int index) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "case%03d", index);
  return buf;
}

}  // namespace

std::string rows_to_csv(const std::vector<CaseRow>& rows) {
  std::string out = "case,method,size_fraction,dice,rmse,eval_count,best_value,wall_seconds,error\n";
  for (const auto& r : rows)
    out += std::to_string(r.case_index) + "," + r.method + "," + fmt(r.size_fraction) + "," + fmt(r.dice) + "," +
           fmt(r.rmse) + "," + std::to_string(r.eval_count) + "," + fmt(r.best_value) + "," + fmt(r.wall_seconds) +
           "," + csv_escape(r.error) + "\n";
  return out;
}

ExperimentResult run_experiment(const config::RunConfig& cfg, const ExperimentInputs& inputs,
                                const std::string& out_dir, std::ostream* log) {
  const auto mesh = build_mesh(cfg);
  const auto forward = build_forward(cfg, mesh);
  const auto& methods = cfg.experiment.methods;
  for (const auto& m : methods) {
    if (!config::is_method(m)) throw std::invalid_argument("unknown method '" + m + "'");
    if (m != "fs" && !inputs.model) throw std::invalid_argument("method " + m + " needs a trained VAE");
    if ((m == "ei_post1" || m == "ei_postk") && !inputs.priors.count(m))
      throw std::invalid_argument("method " + m + " needs a prior");
  }
  if (!out_dir.empty()) {
    fs::create_directories(fs::path(out_dir) / "images");
    fs::create_directories(fs::path(out_dir) / "logs");
  }

  const int n_cases = cfg.experiment.cases;
  const auto n_methods = methods.size();
  std::vector<CaseRow> rows(n_cases * n_methods);
  std::mutex log_mutex;
  auto say = [&](const std::string& line) {
    if (!log) return;
    std::lock_guard lock(log_mutex);
    *log << line << std::endl;
  };

  auto run_case = [&](int c) {
    std::optional<Phantom> phantom;
    try {
      phantom = make_phantom(cfg, mesh, forward, c);
      if (!out_dir.empty())
        io::write_atomic((fs::path(out_dir) / "images" / (case_tag(c) + "_truth.pgm")).string(),
                         image_to_pgm(field_image(mesh, phantom->truth)));
    } catch (const std::exception& e) {
      for (std::size_t k = 0; k < n_methods; ++k) {
        auto& row = rows[c * n_methods + k];
        row.case_index = c;
        row.method = methods[k];
        row.error = e.what();
      }
      say(case_tag(c) + ": phantom failed: " + e.what());
      return;
    }
    for (std::size_t k = 0; k < n_methods; ++k) {
      const auto& method = methods[k];
      auto& row = rows[c * n_methods + k];
      row.case_index = c;
      row.method = method;
      row.size_fraction = phantom->size_fraction;
      const auto t0 = std::chrono::steady_clock::now();
      try {
        const latentprior::LatentPrior* prior = nullptr;
        if (auto it = inputs.priors.find(method); it != inputs.priors.end()) prior = &it->second;
        std::string run_log;
        const auto acq = method == "fs" ? bayesopt::Acquisition::ei : bayesopt::acquisition_from_string(method);
        auto observer = [&](const bayesopt::BoRecord& r) { run_log += bayesopt::record_to_json_line(r, acq) + "\n"; };
        const auto res = estimate(cfg, method, phantom->measured, forward, inputs.model, prior, bo_seed(cfg, c), observer);
        row.eval_count = res.eval_count;
        row.best_value = res.best_value;
        if (!out_dir.empty()) {
          const std::string tag = case_tag(c) + "_" + method;
          io::write_atomic((fs::path(out_dir) / "logs" / (tag + ".jsonl")).string(), run_log);
          io::write_atomic((fs::path(out_dir) / "images" / (tag + ".pgm")).string(),
                           image_to_pgm(field_image(mesh, res.best_theta)));
        }
        try {
          const auto rep = metrics::evaluate(as_span(phantom->truth), as_span(res.best_theta),
                                             cfg.datagen.theta_infarct, cfg.metrics_bins);
          row.dice = rep.dice;
          row.rmse = rep.rmse;
        } catch (const metrics::EvaluationError& e) {
          row.rmse = e.partial().rmse;
          row.error = e.what();
        }
      } catch (const std::exception& e) {
        row.error = e.what();
      }
      row.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      say(case_tag(c) + " " + method + ": dice " + fmt(row.dice) + " rmse " + fmt(row.rmse) +
          (row.error.empty() ? "" : " error: " + row.error));
    }
  };

  std::atomic<int> next{0};
  auto worker = [&] {
    for (int c = next++; c < n_cases; c = next++) run_case(c);
  };
  const int n_threads = std::max(1, std::min(cfg.jobs, n_cases));
  if (n_threads == 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    for (int t = 0; t < n_threads; ++t) pool.emplace_back(worker);
  }

  ExperimentResult result;
  result.rows = std::move(rows);
  nlohmann::json summary = nlohmann::json::object();
  for (const auto& m : methods) {
    std::vector<double> d, r;
    for (const auto& row : result.rows)
      if (row.method == m) {
        d.push_back(row.dice);
        r.push_back(row.rmse);
      }
    result.median_dice[m] = median(d);
    result.median_rmse[m] = median(r);
    auto num = [](double v) { return std::isnan(v) ? nlohmann::json(nullptr) : nlohmann::json(v); };
    summary[m] = {{"median_dice", num(result.median_dice[m])}, {"median_rmse", num(result.median_rmse[m])}};
  }
  if (!out_dir.empty()) {
    io::write_atomic((fs::path(out_dir) / "results.csv").string(), rows_to_csv(result.rows));
    io::write_atomic((fs::path(out_dir) / "summary.json").string(), summary.dump(1) + "\n");
    io::write_atomic((fs::path(out_dir) / "config.txt").string(), cfg.to_flat().to_text());
  }
  return result;
}

std::string image_to_pgm(const Image& img) {
  if (img.width < 1 || img.height < 1 || static_cast<int>(img.values.size()) != img.width * img.height)
    throw std::invalid_argument("image dimensions do not match its values");
  std::string out = "P2\n" + std::to_string(img.width) + " " + std::to_string(img.height) + "\n255\n";
  for (int y = 0; y < img.height; ++y) {
    for (int x = 0; x < img.width; ++x) {
      const double v = std::clamp(img.values[y * img.width + x], 0.0, 1.0);
      out += (x ? " " : "") + std::to_string(static_cast<int>(std::lround(v * 255.0)));
    }
    out += "\n";
  }
  return out;
}

Image image_from_pgm(const std::string& text) {
  std::istringstream in(text);
  std::string magic;
  Image img;
  int maxval = 0;
  // Comments are not emitted by image_to_pgm and not accepted here.
  if (!(in >> magic) || magic != "P2") throw CorruptFile("not a P2 graymap");
  if (!(in >> img.width >> img.height >> maxval) || img.width < 1 || img.height < 1 || maxval < 1)
    throw CorruptFile("bad graymap header");
  img.values.resize(static_cast<std::size_t>(img.width) * img.height);
  for (auto& v : img.values) {
    int px;
    if (!(in >> px) || px < 0 || px > maxval) throw CorruptFile("bad or missing graymap pixel");
    v = static_cast<double>(px) / maxval;
  }
  return img;
}

Image field_image(const geometry::MeshGraph& mesh, const Eigen::VectorXd& field) {
  if (field.size() != mesh.n_nodes()) throw std::invalid_argument("field does not match the mesh");
  Image img;
  if (mesh.grid()) {
    img.width = mesh.grid()->width;
    img.height = mesh.grid()->height;
  } else {
    img.width = mesh.n_nodes();
    img.height = 1;
  }
  img.values.assign(field.data(), field.data() + field.size());
  return img;
}

}  // namespace vaebo::pipeline
