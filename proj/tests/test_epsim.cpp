#include <doctest.h>

#include <random>

#include "support.hpp"
#include "vaebo/epsim.hpp"
#include "vaebo/error.hpp"
#include "vaebo/span.hpp"

using namespace vaebo;
using namespace vaebo::epsim;

namespace {

geometry::MeshGraph single_node() { return geometry::MeshGraph({{0, 0, 0}}, 2, {}); }

ForwardModel grid_model(int n_leads = 120) {
  const auto mesh = geometry::build_grid_mesh(16, 16);
  auto lead = synth_lead_field(mesh, default_electrodes(mesh, n_leads, 2.0), 1);
  return ForwardModel(Simulator(mesh, 1.5, ApParams{}), lead);
}

Eigen::VectorXd phantom() {
  Eigen::VectorXd t = Eigen::VectorXd::Constant(256, 0.15);
  for (int y = 6; y < 11; ++y)
    for (int x = 5; x < 10; ++x) t[y * 16 + x] = 0.5;
  return t;
}

}  // namespace

TEST_SUITE("epsim") {
  TEST_CASE("rest state stays at rest through the whole pipeline") {
    auto p = ApParams{};
    p.stim_amplitude = 0.0;
    const auto mesh = geometry::build_grid_mesh(16, 16);
    const ForwardModel model(Simulator(mesh, 1.5, p), synth_lead_field(mesh, default_electrodes(mesh, 16, 2.0), 0));
    const Eigen::VectorXd theta = Eigen::VectorXd::Constant(256, 0.15);
    const auto trace = model.simulator().simulate(as_span(theta));
    CHECK(trace.u.cwiseAbs().maxCoeff() == 0.0);
    CHECK(model(as_span(theta)).y.cwiseAbs().maxCoeff() == 0.0);
  }

  TEST_CASE("supra-threshold single cell fires like the reference integrator") {
    ApParams p;
    p.n_steps = 400;
    const Simulator sim(single_node(), 1.0, p);
    const Eigen::VectorXd theta = Eigen::VectorXd::Constant(1, 0.15);
    const auto trace = sim.simulate(as_span(theta));
    const auto ref = testing_support::reference_cell(0.15, p.c, p.eps0, p.mu1, p.mu2, p.stim_amplitude,
                                                     p.stim_duration_steps * p.dt, p.n_steps * p.dt, p.dt / 100, 100);
    const double peak = trace.u.maxCoeff();
    const double ref_peak = *std::max_element(ref.u.begin(), ref.u.end());
    CHECK(peak > 0.9);
    CHECK(ref_peak > 0.9);
    CHECK(std::abs(peak - ref_peak) < 0.1);
  }

  TEST_CASE("sub-threshold single cell decays like the reference integrator") {
    ApParams p;
    p.stim_duration_steps = 5;
    p.stim_amplitude = 0.05 / (p.stim_duration_steps * p.dt);  // leaves u = 0.05 < theta
    p.n_steps = 200;
    const Simulator sim(single_node(), 1.0, p);
    const Eigen::VectorXd theta = Eigen::VectorXd::Constant(1, 0.15);
    const auto trace = sim.simulate(as_span(theta));
    const auto ref = testing_support::reference_cell(0.15, p.c, p.eps0, p.mu1, p.mu2, p.stim_amplitude,
                                                     p.stim_duration_steps * p.dt, p.n_steps * p.dt, p.dt / 100, 100);
    const int start = p.stim_duration_steps - 1;
    CHECK(trace.u(0, start) == doctest::Approx(0.05).epsilon(0.1));
    for (int t = start + 1; t < p.n_steps; ++t) CHECK(trace.u(0, t) <= trace.u(0, t - 1));
    CHECK(trace.u(0, p.n_steps - 1) < 1e-3);
    CHECK(ref.u.back() < 1e-3);
    double worst = 0;
    for (int t = 0; t < p.n_steps; ++t) worst = std::max(worst, std::abs(trace.u(0, t) - ref.u[t]));
    CHECK(worst < 5e-3);
  }

  TEST_CASE("stability bound and inputs checked at construction") {
    const auto mesh = geometry::build_grid_mesh(4, 4);
    ApParams p;
    p.dt = 0.2;
    CHECK_THROWS_AS(Simulator(mesh, 1.0, p), std::invalid_argument);  // 0.2 * 1 * 4 >= 0.5
    p = ApParams{};
    p.stim_nodes = {16};
    CHECK_THROWS_AS(Simulator(mesh, 1.0, p), std::invalid_argument);
    p = ApParams{};
    p.n_steps = 0;
    CHECK_THROWS_AS(Simulator(mesh, 1.0, p), std::invalid_argument);
    const Simulator sim(mesh, 1.0, ApParams{});
    Eigen::VectorXd bad = Eigen::VectorXd::Constant(16, 0.15);
    bad[3] = 1.2;
    CHECK_THROWS_AS(sim.simulate(as_span(bad)), std::invalid_argument);
    CHECK_THROWS_AS(sim.simulate(as_span(Eigen::VectorXd::Constant(15, 0.15))), std::invalid_argument);
  }

  TEST_CASE("blow-up reports the step") {
    ApParams p;
    p.c = 5e4;
    p.stim_amplitude = 40.0;
    const Simulator sim(single_node(), 1.0, p);
    const Eigen::VectorXd theta = Eigen::VectorXd::Constant(1, 0.15);
    try {
      sim.simulate(as_span(theta));
      FAIL("expected UnstableIntegration");
    } catch (const UnstableIntegration& e) {
      CHECK(e.step() >= 0);
      CHECK(e.step() < p.n_steps);
    }
  }

  TEST_CASE("simulation is deterministic and bounded on the grid") {
    const auto model = grid_model();
    const auto t = phantom();
    const auto a = model.simulator().simulate(as_span(t));
    const auto b = model.simulator().simulate(as_span(t));
    CHECK(a.u == b.u);
    CHECK(a.u.maxCoeff() < 1.5);
    CHECK(a.u.minCoeff() > -0.5);
    CHECK(a.u.maxCoeff() > 0.9);
  }

  TEST_CASE("lead field construction") {
    const geometry::MeshGraph two({{0, 0, 0}, {2, 0, 0}}, 2, {{0, 1}});
    const auto sym = synth_lead_field(two, {{1, 0, 3}}, 0);
    CHECK(sym.h.cwiseAbs().maxCoeff() < 1e-15);
    const geometry::MeshGraph unit({{0, 0, 0}, {1, 0, 0}}, 2, {{0, 1}});
    const auto on_node = synth_lead_field(unit, {{0, 0, 0}}, 0);
    // Centered row of (1, 1/2).
    CHECK(on_node.h(0, 0) == doctest::Approx(0.25));
    CHECK(on_node.h(0, 1) == doctest::Approx(-0.25));
    CHECK_THROWS_AS(synth_lead_field(unit, {}, 0), std::invalid_argument);
    const auto mesh = geometry::build_grid_mesh(16, 16);
    const auto lead = synth_lead_field(mesh, default_electrodes(mesh, 120, 2.0), 3, 0.5);
    CHECK(lead.h.rows() == 120);
    CHECK(lead.h.rowwise().sum().cwiseAbs().maxCoeff() < 1e-12);
    for (int l = 0; l < 120; ++l) CHECK(lead.h.row(l).cwiseAbs().maxCoeff() > 0.0);
  }

  TEST_CASE("forward map is linear") {
    std::mt19937_64 rng(2);
    std::normal_distribution<double> g;
    LeadField lead{Eigen::MatrixXd(7, 12)};
    for (int i = 0; i < lead.h.size(); ++i) lead.h.data()[i] = g(rng);
    for (int trial = 0; trial < 20; ++trial) {
      PotentialTrace u1{Eigen::MatrixXd(12, 30), {}}, u2{Eigen::MatrixXd(12, 30), {}};
      for (int i = 0; i < u1.u.size(); ++i) {
        u1.u.data()[i] = g(rng);
        u2.u.data()[i] = g(rng);
      }
      const double a = g(rng), b = g(rng);
      PotentialTrace mix{a * u1.u + b * u2.u, {}};
      const Eigen::MatrixXd lhs = forward_ecg(lead, mix).y;
      const Eigen::MatrixXd rhs = a * forward_ecg(lead, u1).y + b * forward_ecg(lead, u2).y;
      CHECK((lhs - rhs).cwiseAbs().maxCoeff() < 1e-10);
    }
    PotentialTrace zero{Eigen::MatrixXd::Zero(12, 5), {}};
    CHECK(forward_ecg(lead, zero).y.cwiseAbs().maxCoeff() == 0.0);
    LeadField eye{Eigen::MatrixXd::Identity(12, 12)};
    CHECK(forward_ecg(eye, zero).y == zero.u);
    CHECK_THROWS_AS(forward_ecg(LeadField{Eigen::MatrixXd::Zero(3, 11)}, zero), std::invalid_argument);
  }

  TEST_CASE("noise at the requested SNR") {
    std::mt19937_64 rng(4);
    std::normal_distribution<double> g;
    EcgTrace y{Eigen::MatrixXd(120, 200)};
    for (int i = 0; i < y.y.size(); ++i) y.y.data()[i] = g(rng) + 0.3;
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
      const auto noisy = add_noise_snr(y, 20.0, seed);
      CHECK(std::abs(measured_snr_db(y, noisy) - 20.0) < 0.5);
    }
    CHECK(add_noise_snr(y, 20.0, 7).y == add_noise_snr(y, 20.0, 7).y);
    CHECK(add_noise_snr(y, kNoNoise, 7).y == y.y);
    CHECK_THROWS_AS(add_noise_snr(EcgTrace{Eigen::MatrixXd::Zero(3, 4)}, 20.0, 0), std::invalid_argument);
  }

  TEST_CASE("mismatch objective") {
    const auto model = grid_model();
    const auto truth = phantom();
    const auto measured = model(as_span(truth));
    CHECK(std::abs(objective_mismatch(measured, as_span(truth), model)) < 1e-9);
    Eigen::VectorXd flipped = (truth.array() == 0.5).select(Eigen::VectorXd::Constant(256, 0.15),
                                                          Eigen::VectorXd::Constant(256, 0.5));
    CHECK(objective_mismatch(measured, as_span(truth), model) > objective_mismatch(measured, as_span(flipped), model));
    std::mt19937_64 rng(8);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (int trial = 0; trial < 5; ++trial) {
      Eigen::VectorXd t(256);
      for (auto& v : t) v = 0.1 + 0.5 * u(rng);
      CHECK(objective_mismatch(measured, as_span(t), model) <= 0.0);
    }
  }

  TEST_CASE("signal and lead files round trip") {
    std::mt19937_64 rng(3);
    std::normal_distribution<double> g;
    EcgTrace y{Eigen::MatrixXd(4, 9)};
    for (int i = 0; i < y.y.size(); ++i) y.y.data()[i] = g(rng) * 1e-3;
    CHECK(ecg_from_csv(ecg_to_csv(y)).y == y.y);
    CHECK_THROWS_AS(ecg_from_csv("1,2\n3\n"), CorruptFile);
    LeadField lead{Eigen::MatrixXd(3, 5)};
    for (int i = 0; i < lead.h.size(); ++i) lead.h.data()[i] = g(rng);
    auto bytes = lead_field_to_bytes(lead);
    CHECK(lead_field_from_bytes(bytes).h == lead.h);
    bytes.resize(bytes.size() - 3);
    CHECK_THROWS_AS(lead_field_from_bytes(bytes), CorruptFile);
    auto bad = lead_field_to_bytes(lead);
    bad[0] = 'X';
    CHECK_THROWS_AS(lead_field_from_bytes(bad), CorruptFile);
  }
}
