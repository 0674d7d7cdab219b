#include "comanip/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "comanip/linalg.hpp"

namespace comanip {

Mat3 apparent_stiffness(double c, const Vec3& lambda, const Vec3& a_hat)
{
    return Mat3((-c * lambda.cwiseProduct(a_hat)).asDiagonal());
}

Mat3 apparent_damping(double c, const Vec3& lambda, const Vec3& residual, const Vec3& grad_c)
{
    return Mat3((c * lambda).asDiagonal()) + lambda.cwiseProduct(residual) * grad_c.transpose();
}

void ConfidenceGradient::update(const Vec3& residual, double dt, double c_unclipped)
{
    if (c_unclipped <= 0.0 || c_unclipped >= 1.0) {
        grad_.setZero();
        return;
    }
    const double e = residual.norm();
    if (e > 0.0) grad_ -= dt * residual / e;
}

// ---------------------------------------------------------------------------

namespace {

struct EnergyTerms {
    Vec3 e_p;
    Vec3 phi;
    Vec3 k_p;  // diagonal stiffness
    Vec3 k_o;
};

EnergyTerms terms(const EnergyInputs& in, const ImpedanceGains& gains)
{
    EnergyTerms t;
    t.e_p = in.mask.pos.cwiseProduct(in.x.p - in.estimate.pos.attractor);
    t.phi = in.mask.rot.cwiseProduct(omega_between(in.x.q, in.estimate.rot.attractor, 1.0));
    t.k_p = -in.c_p * gains.lambda_p.cwiseProduct(in.estimate.pos.a_diag);
    t.k_o = -0.5 * in.c_o * gains.lambda_o.cwiseProduct(in.estimate.rot.a_diag);
    if ((t.k_p.array() < 0.0).any() || (t.k_o.array() < 0.0).any()) {
        throw std::invalid_argument("energy_audit: stiffness is not positive semidefinite");
    }
    return t;
}

}  // namespace

double storage_potential(const EnergyInputs& in, const ImpedanceGains& gains)
{
    const EnergyTerms t = terms(in, gains);
    return 0.5 * t.e_p.dot(t.k_p.cwiseProduct(t.e_p)) + 0.5 * t.phi.dot(t.k_o.cwiseProduct(t.phi));
}

EnergyLedger energy_audit(const EnergyInputs& in, const ImpedanceGains& gains)
{
    if (!is_spd(in.M)) throw std::invalid_argument("energy_audit: mass matrix is not SPD");
    const EnergyTerms t = terms(in, gains);

    const Vec3 v = in.mask.pos.cwiseProduct(in.v.head<3>());
    const Vec3 w = in.mask.rot.cwiseProduct(in.v.tail<3>());
    const double ed_p = v.dot(gains.lambda_p.cwiseProduct(v));
    const double ed_o = w.dot(gains.lambda_o.cwiseProduct(w));
    const double ep_p = t.e_p.dot(gains.lambda_p.cwiseProduct(in.estimate.pos.a_diag).cwiseProduct(t.e_p));
    const double ep_o = 0.5 * t.phi.dot(gains.lambda_o.cwiseProduct(in.estimate.rot.a_diag).cwiseProduct(t.phi));

    EnergyLedger l;
    l.W = 0.5 * in.v.dot(in.M * in.v) + 0.5 * t.e_p.dot(t.k_p.cwiseProduct(t.e_p)) +
          0.5 * t.phi.dot(t.k_o.cwiseProduct(t.phi));
    l.E_d = ed_p + ed_o;
    l.E_p = ep_p + ep_o;
    l.input_power = in.v.dot(in.u_h);
    l.W_dot = l.input_power - in.c_p * ed_p - in.c_o * ed_o - 0.5 * in.c_dot_p * ep_p - 0.5 * in.c_dot_o * ep_o;
    l.passivity_margin = l.input_power - l.W_dot;
    return l;
}

// ---------------------------------------------------------------------------

std::string to_string(TrialStatus s)
{
    switch (s) {
    case TrialStatus::completed: return "completed";
    case TrialStatus::timeout: return "timeout";
    case TrialStatus::fault: return "fault";
    }
    return "fault";
}

TrialStatus trial_status_from_string(const std::string& s)
{
    if (s == "completed") return TrialStatus::completed;
    if (s == "timeout") return TrialStatus::timeout;
    if (s == "fault") return TrialStatus::fault;
    throw std::invalid_argument("unknown trial status '" + s + "'");
}

bool CompletionThresholds::satisfied(const Pose& x, const Twist& v, const Pose& goal) const
{
    return (x.p - goal.p).norm() <= pos && x.q.angle_to(goal.q) <= rot && v.norm() < vel;
}

nlohmann::json TrialMetrics::to_json() const
{
    return {{"completion_time", completion_time}, {"lin_impulse", lin_impulse}, {"ang_impulse", ang_impulse},
            {"avg_force", avg_force},             {"avg_torque", avg_torque},   {"status", to_string(status)}};
}

TrialMetrics TrialMetrics::from_json(const nlohmann::json& j)
{
    TrialMetrics m;
    m.completion_time = j.at("completion_time").get<double>();
    m.lin_impulse = j.at("lin_impulse").get<double>();
    m.ang_impulse = j.at("ang_impulse").get<double>();
    m.avg_force = j.at("avg_force").get<double>();
    m.avg_torque = j.at("avg_torque").get<double>();
    m.status = trial_status_from_string(j.at("status").get<std::string>());
    return m;
}

TrialMetrics compute_metrics(const std::vector<TickRecord>& log, const Pose& goal, const CompletionThresholds& th,
                             double horizon)
{
    TrialMetrics m;
    std::size_t end = log.size();
    for (std::size_t i = 0; i < log.size(); ++i) {
        if (th.satisfied(log[i].x, log[i].v, goal)) {
            end = i;
            break;
        }
    }
    double window = 0.0;
    for (std::size_t i = 0; i < end; ++i) {
        m.lin_impulse += log[i].u_h.head<3>().norm() * log[i].dt;
        m.ang_impulse += log[i].u_h.tail<3>().norm() * log[i].dt;
        window += log[i].dt;
    }
    if (end < log.size()) {
        m.status = TrialStatus::completed;
        m.completion_time = log[end].t;
    } else {
        m.status = TrialStatus::timeout;
        m.completion_time = horizon;
    }
    if (window > 0.0) {
        m.avg_force = m.lin_impulse / window;
        m.avg_torque = m.ang_impulse / window;
    }
    return m;
}

// ---------------------------------------------------------------------------

double quantile(std::vector<double> values, double p)
{
    if (values.empty()) throw std::invalid_argument("quantile of an empty sample");
    std::sort(values.begin(), values.end());
    const double pos = std::clamp(p, 0.0, 1.0) * static_cast<double>(values.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const std::size_t hi = std::min(lo + 1, values.size() - 1);
    return values[lo] + (pos - static_cast<double>(lo)) * (values[hi] - values[lo]);
}

QuantileRow quantile_row(const std::vector<double>& values)
{
    QuantileRow r;
    r.n = values.size();
    if (values.empty()) return r;
    r.q1 = quantile(values, 0.25);
    r.median = quantile(values, 0.5);
    r.q3 = quantile(values, 0.75);
    const double iqr = r.q3 - r.q1;
    const double lo = r.q1 - 1.5 * iqr;
    const double hi = r.q3 + 1.5 * iqr;
    r.min = r.q3;
    r.max = r.q1;
    std::vector<double> sorted = values;
    std::sort(sorted.begin(), sorted.end());
    for (double v : sorted) {
        if (v < lo || v > hi) {
            r.outliers.push_back(v);
        } else {
            r.min = std::min(r.min, v);
            r.max = std::max(r.max, v);
        }
    }
    return r;
}

}  // namespace comanip
