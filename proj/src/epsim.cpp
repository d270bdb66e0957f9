#include "vaebo/epsim.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <random>
#include <sstream>
#include <stdexcept>

#include "vaebo/error.hpp"
#include "vaebo/fileutil.hpp"

namespace vaebo::epsim {

namespace {

int max_degree_of(const geometry::DiffusionOperator& diffusion) {
  const auto& L = diffusion.matrix();
  double worst = 0.0;
  for (int i = 0; i < L.rows(); ++i) worst = std::max(worst, -L.coeff(i, i));
  return static_cast<int>(std::lround(worst / diffusion.coefficient()));
}

void validate_params(const ApParams& p, int n_nodes, double d, int max_degree) {
  if (!(p.dt > 0.0) || !std::isfinite(p.dt)) throw std::invalid_argument("dt must be positive");
  if (p.n_steps < 1) throw std::invalid_argument("n_steps must be at least 1");
  if (p.stim_duration_steps < 1) throw std::invalid_argument("stim_duration_steps must be at least 1");
  if (p.stim_nodes.empty()) throw std::invalid_argument("stim_nodes must be non-empty");
  for (int s : p.stim_nodes)
    if (s < 0 || s >= n_nodes) throw std::invalid_argument("stimulus node " + std::to_string(s) + " out of range");
  const double bound = p.dt * d * max_degree;
  if (!(bound < 0.5))
    throw std::invalid_argument("explicit integration unstable: dt * d * max_degree = " + std::to_string(bound) +
                                " (must be < 0.5)");
}

}  // namespace

void validate(const ApParams& params, const geometry::MeshGraph& mesh, const geometry::DiffusionOperator& diffusion) {
  if (diffusion.size() != mesh.n_nodes()) throw std::invalid_argument("diffusion operator does not match mesh");
  validate_params(params, mesh.n_nodes(), diffusion.coefficient(), mesh.max_degree());
}

PotentialTrace simulate_ap(const geometry::DiffusionOperator& diffusion, const ApParams& p,
                           std::span<const double> theta) {
  const int n = diffusion.size();
  if (static_cast<int>(theta.size()) != n)
    throw std::invalid_argument("parameter field length " + std::to_string(theta.size()) + " != n_nodes " +
                                std::to_string(n));
  validate_params(p, n, diffusion.coefficient(), max_degree_of(diffusion));
  for (double t : theta)
    if (!std::isfinite(t) || t < 0.0 || t > 1.0) throw std::invalid_argument("parameter field entries must lie in [0, 1]");

  PotentialTrace out;
  out.u.resize(n, p.n_steps);
  Eigen::VectorXd u = Eigen::VectorXd::Zero(n);
  Eigen::VectorXd v = Eigen::VectorXd::Zero(n);
  Eigen::VectorXd lu(n);
  constexpr double kGuard = 1e-9;
  constexpr double kBlowUp = 1e6;

  for (int step = 0; step < p.n_steps; ++step) {
    lu.noalias() = diffusion.matrix() * u;
    const bool stim_on = step < p.stim_duration_steps;
    for (int i = 0; i < n; ++i) {
      const double ui = u[i];
      const double vi = v[i];
      const double th = theta[i];
      const double du = lu[i] - p.c * ui * (ui - th) * (ui - 1.0) - ui * vi;
      const double eps = p.eps0 + p.mu1 * vi / std::max(ui + p.mu2, kGuard);
      const double dv = eps * (-vi - p.c * ui * (ui - th - 1.0));
      u[i] = ui + p.dt * du;
      v[i] = vi + p.dt * dv;
    }
    if (stim_on && p.stim_amplitude != 0.0)
      for (int s : p.stim_nodes) u[s] += p.dt * p.stim_amplitude;
    for (int i = 0; i < n; ++i)
      if (!std::isfinite(u[i]) || !std::isfinite(v[i]) || std::abs(u[i]) > kBlowUp || std::abs(v[i]) > kBlowUp)
        throw UnstableIntegration(step, "state left the finite range at node " + std::to_string(i));
    out.u.col(step) = u;
  }
  out.v = std::move(v);
  return out;
}

Simulator::Simulator(geometry::MeshGraph mesh, double diffusion_coefficient, ApParams params)
    : mesh_(std::move(mesh)), diffusion_(geometry::build_diffusion(mesh_, diffusion_coefficient)),
      params_(std::move(params)) {
  validate(params_, mesh_, diffusion_);
}

PotentialTrace Simulator::simulate(std::span<const double> theta) const {
  return simulate_ap(diffusion_, params_, theta);
}

std::vector<geometry::Position> default_electrodes(const geometry::MeshGraph& mesh, int n_leads, double height) {
  if (n_leads < 1) throw std::invalid_argument("n_leads must be positive");
  geometry::Position lo = mesh.position(0), hi = mesh.position(0);
  for (const auto& p : mesh.positions())
    for (int k = 0; k < 3; ++k) {
      lo[k] = std::min(lo[k], p[k]);
      hi[k] = std::max(hi[k], p[k]);
    }
  const int cols = static_cast<int>(std::ceil(std::sqrt(static_cast<double>(n_leads))));
  const int rows = (n_leads + cols - 1) / cols;
  std::vector<geometry::Position> out;
  out.reserve(n_leads);
  for (int r = 0; r < rows && static_cast<int>(out.size()) < n_leads; ++r)
    for (int c = 0; c < cols && static_cast<int>(out.size()) < n_leads; ++c) {
      const double fx = cols == 1 ? 0.5 : static_cast<double>(c) / (cols - 1);
      const double fy = rows == 1 ? 0.5 : static_cast<double>(r) / (rows - 1);
      out.push_back({lo[0] + fx * (hi[0] - lo[0]), lo[1] + fy * (hi[1] - lo[1]), hi[2] + height});
    }
  return out;
}

LeadField synth_lead_field(const geometry::MeshGraph& mesh, const std::vector<geometry::Position>& electrodes,
                           std::uint64_t seed, double jitter) {
  if (electrodes.empty()) throw std::invalid_argument("electrode list is empty");
  if (jitter < 0.0) throw std::invalid_argument("jitter must be non-negative");
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> shake(-1.0, 1.0);
  const int n_leads = static_cast<int>(electrodes.size());
  const int n = mesh.n_nodes();
  LeadField lf;
  lf.h.resize(n_leads, n);
  for (int l = 0; l < n_leads; ++l) {
    auto e = electrodes[l];
    if (jitter > 0.0)
      for (auto& c : e) c += jitter * shake(rng);
    for (int i = 0; i < n; ++i) {
      const double r = mesh.distance_to(i, e);
      lf.h(l, i) = 1.0 / (r * r + 1.0);
    }
  }
  lf.h.colwise() -= lf.h.rowwise().mean();
  return lf;
}

EcgTrace forward_ecg(const LeadField& lead, const PotentialTrace& trace) {
  if (lead.h.cols() != trace.u.rows())
    throw std::invalid_argument("lead field has " + std::to_string(lead.h.cols()) + " columns but trace has " +
                                std::to_string(trace.u.rows()) + " nodes");
  return EcgTrace{lead.h * trace.u};
}

EcgTrace add_noise_snr(const EcgTrace& y, double snr_db, std::uint64_t seed) {
  if (snr_db == kNoNoise) return y;
  if (std::isnan(snr_db)) throw std::invalid_argument("snr_db is NaN");
  const double power = y.y.squaredNorm() / static_cast<double>(y.y.size());
  if (!(power > 0.0)) throw std::invalid_argument("signal power is zero; SNR is undefined");
  const double sigma = std::sqrt(power / std::pow(10.0, snr_db / 10.0));
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> noise(0.0, sigma);
  EcgTrace out = y;
  for (Eigen::Index j = 0; j < out.y.cols(); ++j)
    for (Eigen::Index i = 0; i < out.y.rows(); ++i) out.y(i, j) += noise(rng);
  return out;
}

double measured_snr_db(const EcgTrace& clean, const EcgTrace& noisy) {
  const double noise = (noisy.y - clean.y).squaredNorm();
  return 10.0 * std::log10(clean.y.squaredNorm() / noise);
}

ForwardModel::ForwardModel(Simulator simulator, LeadField lead) : sim_(std::move(simulator)), lead_(std::move(lead)) {
  if (lead_.h.cols() != sim_.mesh().n_nodes()) throw std::invalid_argument("lead field does not match mesh");
}

EcgTrace ForwardModel::operator()(std::span<const double> theta) const {
  return forward_ecg(lead_, sim_.simulate(theta));
}

double objective_mismatch(const EcgTrace& measured, std::span<const double> theta, const ForwardModel& model) {
  const EcgTrace predicted = model(theta);
  if (predicted.y.rows() != measured.y.rows() || predicted.y.cols() != measured.y.cols())
    throw std::invalid_argument("measured trace shape does not match the forward model");
  return -(measured.y - predicted.y).squaredNorm();
}

std::string ecg_to_csv(const EcgTrace& y) {
  std::string out;
  char buf[32];
  for (Eigen::Index t = 0; t < y.y.cols(); ++t) {
    for (Eigen::Index l = 0; l < y.y.rows(); ++l) {
      if (l) out += ',';
      std::snprintf(buf, sizeof buf, "%.17g", y.y(l, t));
      out += buf;
    }
    out += '\n';
  }
  return out;
}

EcgTrace ecg_from_csv(const std::string& text) {
  std::vector<std::vector<double>> rows;
  std::istringstream in(text);
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::vector<double> row;
    std::istringstream cells(line);
    std::string cell;
    while (std::getline(cells, cell, ',')) {
      try {
        std::size_t used = 0;
        row.push_back(std::stod(cell, &used));
      } catch (const std::exception&) {
        throw CorruptFile("ECG CSV line " + std::to_string(line_no) + ": bad number '" + cell + "'");
      }
    }
    if (!rows.empty() && row.size() != rows.front().size())
      throw CorruptFile("ECG CSV line " + std::to_string(line_no) + ": inconsistent column count");
    rows.push_back(std::move(row));
  }
  if (rows.empty()) throw CorruptFile("ECG CSV is empty");
  EcgTrace y;
  y.y.resize(static_cast<Eigen::Index>(rows.front().size()), static_cast<Eigen::Index>(rows.size()));
  for (std::size_t t = 0; t < rows.size(); ++t)
    for (std::size_t l = 0; l < rows[t].size(); ++l) y.y(l, t) = rows[t][l];
  return y;
}

void save_ecg_csv(const EcgTrace& y, const std::string& path) { io::write_atomic(path, ecg_to_csv(y)); }
EcgTrace load_ecg_csv(const std::string& path) { return ecg_from_csv(io::read_text(path)); }

std::vector<std::uint8_t> lead_field_to_bytes(const LeadField& lead) {
  io::ByteWriter w;
  w.raw("LEAD");
  w.u32(static_cast<std::uint32_t>(lead.h.rows()));
  w.u32(static_cast<std::uint32_t>(lead.h.cols()));
  for (Eigen::Index l = 0; l < lead.h.rows(); ++l)
    for (Eigen::Index i = 0; i < lead.h.cols(); ++i) w.f64(lead.h(l, i));
  return w.bytes();
}

LeadField lead_field_from_bytes(const std::vector<std::uint8_t>& bytes) {
  io::ByteReader r(bytes, "lead field");
  if (r.raw(4) != "LEAD") throw CorruptFile("lead field: bad magic");
  const auto rows = r.u32();
  const auto cols = r.u32();
  if (static_cast<std::uint64_t>(rows) * cols * 8 != r.remaining())
    throw CorruptFile("lead field: payload size does not match header");
  LeadField lf;
  lf.h.resize(rows, cols);
  for (std::uint32_t l = 0; l < rows; ++l)
    for (std::uint32_t i = 0; i < cols; ++i) lf.h(l, i) = r.f64();
  return lf;
}

void save_lead_field(const LeadField& lead, const std::string& path) {
  io::write_atomic(path, lead_field_to_bytes(lead));
}

LeadField load_lead_field(const std::string& path) { return lead_field_from_bytes(io::read_bytes(path)); }

}  // namespace vaebo::epsim
