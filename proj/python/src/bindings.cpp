#include <pybind11/eigen.h>
#include <pybind11/functional.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "vaebo/bayesopt.hpp"
#include "vaebo/config.hpp"
#include "vaebo/datagen.hpp"
#include "vaebo/epsim.hpp"
#include "vaebo/error.hpp"
#include "vaebo/geometry.hpp"
#include "vaebo/gp.hpp"
#include "vaebo/latentprior.hpp"
#include "vaebo/metrics.hpp"
#include "vaebo/pipeline.hpp"
#include "vaebo/span.hpp"
#include "vaebo/vae.hpp"

namespace py = pybind11;
using namespace vaebo;

namespace {

std::span<const double> span_of(const Eigen::VectorXd& v) { return {v.data(), static_cast<std::size_t>(v.size())}; }

py::dict report_dict(const metrics::EvalReport& r) {
  py::dict d;
  d["rmse"] = r.rmse;
  d["dice"] = r.dice;
  d["threshold"] = r.threshold;
  d["true_set_size"] = r.true_set_size;
  d["est_set_size"] = r.est_set_size;
  return d;
}

py::dict result_dict(const bayesopt::BoResult& r) {
  py::list hist;
  for (const auto& rec : r.history) {
    py::dict h;
    h["iteration"] = rec.iteration;
    h["z"] = rec.z;
    h["value"] = rec.value;
    h["f_plus"] = rec.f_plus;
    h["acquisition_value"] = rec.acquisition_value;
    hist.append(h);
  }
  py::dict d;
  d["best_z"] = r.best_z;
  d["best_theta"] = r.best_theta;
  d["best_value"] = r.best_value;
  d["eval_count"] = r.eval_count;
  d["acquisition"] = r.acquisition;
  d["history"] = hist;
  return d;
}

}  // namespace

PYBIND11_MODULE(_vaebo, m) {
  m.doc() = "Latent-space Bayesian optimisation of tissue excitability";

  auto base = py::register_exception<Error>(m, "VaeboError", PyExc_RuntimeError);
  py::register_exception<UnstableIntegration>(m, "UnstableIntegration", base.ptr());
  py::register_exception<ConditioningError>(m, "ConditioningError", base.ptr());
  py::register_exception<CorruptFile>(m, "CorruptFile", base.ptr());
  py::register_exception<VersionMismatch>(m, "VersionMismatch", base.ptr());
  py::register_exception<NoThreshold>(m, "NoThreshold", base.ptr());
  py::register_exception<FingerprintMismatch>(m, "FingerprintMismatch", base.ptr());
  py::register_exception<NonFiniteLoss>(m, "NonFiniteLoss", base.ptr());

  // geometry
  py::class_<geometry::MeshGraph>(m, "Mesh")
      .def_property_readonly("n_nodes", &geometry::MeshGraph::n_nodes)
      .def_property_readonly("n_segments", &geometry::MeshGraph::n_segments)
      .def_property_readonly("segment_of", &geometry::MeshGraph::segment_of)
      .def_property_readonly("positions", &geometry::MeshGraph::positions)
      .def_property_readonly("edges", &geometry::MeshGraph::edges)
      .def("neighbors", &geometry::MeshGraph::neighbors)
      .def("fingerprint", &geometry::MeshGraph::fingerprint)
      .def("to_json", [](const geometry::MeshGraph& g) { return geometry::mesh_to_json_text(g); })
      .def_static("from_json", &geometry::mesh_from_json_text);
  m.def("build_grid_mesh", &geometry::build_grid_mesh, py::arg("width"), py::arg("height"));
  m.def("partition_segments", &geometry::partition_segments, py::arg("mesh"), py::arg("s_per_axis"));
  m.def("load_mesh", &geometry::load_mesh);
  m.def("save_mesh", &geometry::save_mesh);

  // epsim
  py::class_<epsim::ApParams>(m, "ApParams")
      .def(py::init<>())
      .def_readwrite("c", &epsim::ApParams::c)
      .def_readwrite("eps0", &epsim::ApParams::eps0)
      .def_readwrite("mu1", &epsim::ApParams::mu1)
      .def_readwrite("mu2", &epsim::ApParams::mu2)
      .def_readwrite("dt", &epsim::ApParams::dt)
      .def_readwrite("n_steps", &epsim::ApParams::n_steps)
      .def_readwrite("stim_nodes", &epsim::ApParams::stim_nodes)
      .def_readwrite("stim_amplitude", &epsim::ApParams::stim_amplitude)
      .def_readwrite("stim_duration_steps", &epsim::ApParams::stim_duration_steps);
  py::class_<epsim::ForwardModel>(m, "ForwardModel")
      .def(py::init([](const geometry::MeshGraph& mesh, double diffusion, const epsim::ApParams& params, int n_leads,
                       double height, std::uint64_t seed) {
             auto lead = epsim::synth_lead_field(mesh, epsim::default_electrodes(mesh, n_leads, height), seed);
             return epsim::ForwardModel(epsim::Simulator(mesh, diffusion, params), std::move(lead));
           }),
           py::arg("mesh"), py::arg("diffusion") = 1.5, py::arg("params") = epsim::ApParams{},
           py::arg("n_leads") = 120, py::arg("height") = 2.0, py::arg("seed") = 0)
      .def_property_readonly("n_nodes", &epsim::ForwardModel::n_nodes)
      .def_property_readonly("lead_field", [](const epsim::ForwardModel& f) { return f.lead().h; })
      .def(
          "potentials",
          [](const epsim::ForwardModel& f, const Eigen::VectorXd& theta) { return f.simulator().simulate(span_of(theta)).u; },
          py::arg("theta"))
      .def(
          "__call__", [](const epsim::ForwardModel& f, const Eigen::VectorXd& theta) { return f(span_of(theta)).y; },
          py::arg("theta"))
      .def(
          "mismatch",
          [](const epsim::ForwardModel& f, const Eigen::MatrixXd& measured, const Eigen::VectorXd& theta) {
            return epsim::objective_mismatch(epsim::EcgTrace{measured}, span_of(theta), f);
          },
          py::arg("measured"), py::arg("theta"));
  m.def(
      "add_noise_snr",
      [](const Eigen::MatrixXd& y, double snr_db, std::uint64_t seed) {
        return epsim::add_noise_snr(epsim::EcgTrace{y}, snr_db, seed).y;
      },
      py::arg("signals"), py::arg("snr_db"), py::arg("seed"));

  // datagen
  m.def(
      "make_dataset",
      [](const geometry::MeshGraph& mesh, int count, std::uint64_t seed, double size_min, double size_max,
         double random_fraction) {
        datagen::DatasetConfig c;
        c.count = count;
        c.rng_seed = seed;
        c.size_min = size_min;
        c.size_max = size_max;
        c.random_fraction = random_fraction;
        return datagen::make_dataset(mesh, c).fields;
      },
      py::arg("mesh"), py::arg("count"), py::arg("seed") = 0, py::arg("size_min") = 0.02, py::arg("size_max") = 0.40,
      py::arg("random_fraction") = 0.7);

  // vae
  py::class_<vae::VaeModel>(m, "VaeModel")
      .def(py::init([](int input_dim, std::vector<int> hidden, int latent_dim, std::uint64_t seed) {
             return vae::VaeModel::initialized(vae::VaeArch{input_dim, std::move(hidden), latent_dim}, seed);
           }),
           py::arg("input_dim") = 256, py::arg("hidden") = std::vector<int>{512, 512}, py::arg("latent_dim") = 2,
           py::arg("seed") = 0)
      .def_property(
          "scale", [](const vae::VaeModel& v) { return std::pair{v.scale.low, v.scale.high}; },
          [](vae::VaeModel& v, std::pair<double, double> s) { v.scale = {s.first, s.second}; })
      .def_property_readonly("loss_history", [](const vae::VaeModel& v) { return v.info.loss_history; })
      .def(
          "encode",
          [](const vae::VaeModel& v, const Eigen::VectorXd& field) {
            const auto p = v.encode(field);
            return std::pair{p.mean, p.log_var};
          },
          py::arg("field"))
      .def("decode", &vae::VaeModel::decode_mean, py::arg("z"))
      .def(
          "train",
          [](const vae::VaeModel& v, const Eigen::MatrixXd& data, int epochs, int batch_size, double learning_rate,
             std::uint64_t seed) {
            vae::TrainConfig c;
            c.epochs = epochs;
            c.batch_size = batch_size;
            c.adam.learning_rate = learning_rate;
            c.rng_seed = seed;
            py::gil_scoped_release release;
            return vae::train(v, data, c);
          },
          py::arg("data"), py::arg("epochs") = 50, py::arg("batch_size") = 100, py::arg("learning_rate") = 1e-3,
          py::arg("seed") = 0)
      .def("save", [](const vae::VaeModel& v, const std::string& path) { vae::save(v, path); })
      .def_static("load", &vae::load);

  // latentprior
  py::class_<latentprior::LatentPrior>(m, "LatentPrior")
      .def_property_readonly("kind", [](const latentprior::LatentPrior& p) { return latentprior::to_string(p.kind()); })
      .def_property_readonly("size", &latentprior::LatentPrior::size)
      .def_property_readonly("weights",
                             [](const latentprior::LatentPrior& p) {
                               std::vector<double> w;
                               for (const auto& c : p.components()) w.push_back(c.weight);
                               return w;
                             })
      .def_property_readonly("means",
                             [](const latentprior::LatentPrior& p) {
                               std::vector<Eigen::VectorXd> out;
                               for (const auto& c : p.components()) out.push_back(c.mean);
                               return out;
                             })
      .def_property_readonly("covariances",
                             [](const latentprior::LatentPrior& p) {
                               std::vector<Eigen::MatrixXd> out;
                               for (const auto& c : p.components()) out.push_back(c.cov);
                               return out;
                             })
      .def("epsilon", [](const latentprior::LatentPrior& p, const Eigen::VectorXd& z,
                         double f_plus) { return latentprior::epsilon_penalty(p, z, f_plus); })
      .def("to_json", [](const latentprior::LatentPrior& p) { return latentprior::prior_to_json_text(p); })
      .def_static("from_json", &latentprior::prior_from_json_text)
      .def_static("isotropic", &latentprior::LatentPrior::isotropic);
  m.def("aggregate_posterior", &latentprior::aggregate_posterior, py::arg("model"), py::arg("fields"));
  m.def("moment_match_single", &latentprior::moment_match_single);
  m.def(
      "reduce_kmeans",
      [](const latentprior::LatentPrior& p, int k, int max_iters, std::uint64_t seed) {
        auto r = latentprior::reduce_kmeans(p, k, max_iters, seed);
        return py::make_tuple(r.prior, r.assignment, r.objective);
      },
      py::arg("prior"), py::arg("k"), py::arg("max_iters") = 100, py::arg("seed") = 0);

  // gp
  py::class_<gp::GpState>(m, "GaussianProcess")
      .def(py::init([](const Eigen::MatrixXd& x, const Eigen::VectorXd& y, double amplitude,
                       const Eigen::VectorXd& length_scales) {
             gp::KernelParams k;
             k.amplitude = amplitude;
             k.length_scales = length_scales;
             return gp::GpState::fit(x, y, k);
           }),
           py::arg("x"), py::arg("y"), py::arg("amplitude"), py::arg("length_scales"))
      .def("predict",
           [](const gp::GpState& g, const Eigen::VectorXd& z) {
             const auto p = g.predict(z);
             return std::pair{p.mean, p.std};
           })
      .def("log_marginal_likelihood", &gp::GpState::log_marginal_likelihood)
      .def_property_readonly("jitter", &gp::GpState::jitter);
  m.def(
      "optimize_hyperparams",
      [](const Eigen::MatrixXd& x, const Eigen::VectorXd& y, int restarts, std::uint64_t seed) {
        gp::HyperOptConfig c;
        c.n_restarts = restarts;
        const auto k = gp::optimize_hyperparams(x, y, c, seed);
        return std::pair{k.amplitude, k.length_scales};
      },
      py::arg("x"), py::arg("y"), py::arg("restarts") = 8, py::arg("seed") = 0);

  // bayesopt
  m.def("expected_improvement", &bayesopt::expected_improvement, py::arg("mean"), py::arg("std"), py::arg("f_plus"));
  m.def("log_expected_improvement", &bayesopt::log_expected_improvement, py::arg("mean"), py::arg("std"),
        py::arg("f_plus"));
  m.def(
      "minimize_box",
      [](const std::function<double(const Eigen::VectorXd&)>& objective, int dim, int budget, int n_init, double low,
         double high, const std::string& acquisition, const latentprior::LatentPrior* prior, std::uint64_t seed,
         int candidate_count) {
        bayesopt::BoConfig c;
        c.budget = budget;
        c.n_init = n_init;
        c.bound_low = low;
        c.bound_high = high;
        c.acquisition = bayesopt::acquisition_from_string(acquisition);
        c.rng_seed = seed;
        c.candidate_count = candidate_count;
        return result_dict(bayesopt::run_bo_generic(objective, dim, prior, c));
      },
      py::arg("objective"), py::arg("dim"), py::arg("budget") = 105, py::arg("n_init") = 10, py::arg("low") = -4.0,
      py::arg("high") = 4.0, py::arg("acquisition") = "ei", py::arg("prior") = nullptr, py::arg("seed") = 0,
      py::arg("candidate_count") = 2048,
      "Maximise objective over the box [low, high]^dim.");

  // metrics
  m.def("rmse", [](const Eigen::VectorXd& t, const Eigen::VectorXd& e) { return metrics::rmse(span_of(t), span_of(e)); });
  m.def(
      "otsu_threshold", [](const Eigen::VectorXd& f, int bins) { return metrics::otsu_threshold(span_of(f), bins); },
      py::arg("field"), py::arg("bins") = metrics::kDefaultBins);
  m.def("dice", &metrics::dice);
  m.def(
      "evaluate",
      [](const Eigen::VectorXd& truth, const Eigen::VectorXd& est, double theta_infarct) {
        return report_dict(metrics::evaluate(span_of(truth), span_of(est), theta_infarct));
      },
      py::arg("truth"), py::arg("estimate"), py::arg("theta_infarct") = 0.5);

  // pipeline
  py::class_<config::RunConfig>(m, "RunConfig")
      .def(py::init<>())
      .def_static("from_text",
                  [](const std::string& text) { return config::RunConfig::from_flat(config::FlatConfig::parse(text)); })
      .def("to_text", [](const config::RunConfig& c) { return c.to_flat().to_text(); })
      .def("validate", &config::RunConfig::validate);
  m.def(
      "run_experiment",
      [](const config::RunConfig& cfg, const std::string& out_dir) {
        auto mesh = pipeline::build_mesh(cfg);
        py::gil_scoped_release release;
        auto data = pipeline::build_dataset(cfg, mesh);
        auto model = pipeline::train_vae(cfg, data);
        pipeline::ExperimentInputs inputs;
        inputs.model = &model;
        for (const auto& method : cfg.experiment.methods) {
          if (method == "ei_post1") inputs.priors.emplace(method, pipeline::build_prior(cfg, model, data, "post1"));
          if (method == "ei_postk") inputs.priors.emplace(method, pipeline::build_prior(cfg, model, data, "postk"));
        }
        auto r = pipeline::run_experiment(cfg, inputs, out_dir);
        py::gil_scoped_acquire acquire;
        py::dict d;
        d["csv"] = pipeline::rows_to_csv(r.rows);
        d["median_dice"] = r.median_dice;
        d["median_rmse"] = r.median_rmse;
        return d;
      },
      py::arg("config"), py::arg("out_dir") = "");
}
