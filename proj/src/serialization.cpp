#include <cmath>
#include <fstream>
#include <limits>
#include <stdexcept>
#include <system_error>

#include "r2r/io.hpp"
#include "r2r/rto.hpp"

namespace r2r {

using nlohmann::json;

void write_atomic(const std::filesystem::path& path, const std::string& content) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + tmp.string());
    out << content;
    out.flush();
    if (!out) throw std::runtime_error("write failed: " + tmp.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw std::runtime_error("cannot rename " + tmp.string() + ": " + ec.message());
}

namespace {

json vec(const Eigen::VectorXd& v) {
  json a = json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(v[i]);
  return a;
}

json mat(const Eigen::Matrix2d& m) {
  return json::array({json::array({m(0, 0), m(0, 1)}), json::array({m(1, 0), m(1, 1)})});
}

// JSON has no infinity; non-finite values become null.
json num(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

json belief_json(const GaussianBelief& b) {
  return {{"mean", vec(b.mean)}, {"covariance", mat(b.covariance)}, {"regularized", b.regularized}};
}

json gradients_json(const ProcessGradients& g) {
  return {{"phi", g.phi},
          {"g", g.g},
          {"grad_phi", vec(g.grad_phi)},
          {"grad_g", vec(g.grad_g)},
          {"backward_used", g.backward_used}};
}

json kkt_json(const KKTReport& r) {
  return {{"grad_phi_model", vec(r.grad_phi_model)},
          {"grad_phi_plant", vec(r.grad_phi_plant)},
          {"grad_g_model", vec(r.grad_g_model)},
          {"grad_g_plant", vec(r.grad_g_plant)},
          {"phi_plant", r.phi_plant},
          {"g_plant", r.g_plant},
          {"mu", r.mu},
          {"constraint_active", r.constraint_active},
          {"hessian_phi_fd", mat(r.hessian_phi_fd)},
          {"hessian_pd", r.hessian_pd},
          {"stationarity_residual", r.stationarity_residual},
          {"c1_gap", r.c1_gap}};
}

}  // namespace

json to_json(const FitResult& f) {
  return {{"theta_hat", vec(f.theta_hat)},
          {"sse", f.sse},
          {"covariance", mat(f.belief.covariance)},
          {"regularized", f.belief.regularized},
          {"n_evals", f.n_evals},
          {"converged", f.converged},
          {"residuals", vec(f.residuals)}};
}

json to_json(const CorrectionLedger& l) {
  json history = json::array();
  for (const auto& e : l.history) {
    history.push_back({{"k", e.k}, {"dtheta", vec(e.dtheta)}, {"c", vec(e.c)}});
  }
  return {{"sample_grid", l.sample_grid}, {"C", vec(l.C)}, {"history", history}};
}

json to_json(const RunResult& r) {
  json records = json::array();
  for (const auto& it : r.records) {
    records.push_back({{"k", it.k},
                       {"u", vec(it.u)},
                       {"u_next", vec(it.u_next)},
                       {"theta_prev", vec(it.theta_prev)},
                       {"theta_iden", vec(it.theta_iden)},
                       {"theta_prime", vec(it.theta_prime)},
                       {"dtheta_iden", vec(it.dtheta_iden)},
                       {"dtheta_corr", vec(it.dtheta_corr)},
                       {"sse_prior", it.sse_prior},
                       {"sse", it.sse},
                       {"sse_corrected", it.sse_corrected},
                       {"kl_iden", num(it.kl_iden)},
                       {"kl_corr", num(it.kl_corr)},
                       {"plant_phi", it.plant_phi},
                       {"plant_phi_true", it.plant_phi_true},
                       {"model_phi", it.model_phi},
                       {"max_truncation", it.max_truncation},
                       {"mismatch", it.mismatch},
                       {"mismatch_at_zero", it.mismatch_at_zero},
                       {"plant_gradients", gradients_json(it.plant_gradients)},
                       {"modifiers",
                        {{"lambda_phi", vec(it.modifiers.lambda_phi)},
                         {"lambda_g", vec(it.modifiers.lambda_g)},
                         {"eps_g", it.modifiers.eps_g}}},
                       {"belief_iden", belief_json(it.belief_iden)},
                       {"belief_prime", belief_json(it.belief_prime)},
                       {"kkt", kkt_json(it.kkt)},
                       {"flags", it.flags}});
  }
  json out = {{"algorithm", to_string(r.algorithm)},
              {"scenario", r.scenario},
              {"seed", r.seed},
              {"termination", to_string(r.termination)},
              {"failure", r.failure},
              {"iterations", r.records.size()},
              {"config", r.config},
              {"records", records}};
  if (r.ledger) out["ledger"] = to_json(*r.ledger);
  return out;
}

}  // namespace r2r
