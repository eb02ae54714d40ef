#pragma once

#include "cfqp/common.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <functional>
#include <sstream>
#include <vector>

namespace cfqp::ode {

/// Constants of the four-state cardiovascular model.
///
/// Units are normalised so that pressures are in 100 mmHg and stroke volume in
/// 0.1 mL. Only between-class and between-dose behaviour is relied upon
/// downstream.
struct CvParams {
    double c_a = 4000.0;
    double c_v = 111000.0;
    double r_tpr_min = 5.335e-4;
    double r_tpr_max = 2.134e-3;
    double r_tpr_mod = 0.0;
    double f_hr_min = 2.0 / 3.0;
    double f_hr_max = 3.0;
    double tau_baro = 20.0;
    double k_width = 18.38;
    double p_a_set = 0.70;

    // Centre of the initial-state distribution used by the generator.
    double sv_init = 700.0;
    double p_a_init = 0.765;
    double p_v_init = 0.07;
    double s_init = 0.3;
    // Per-sample spread around that centre: relative for sv and p_v, absolute
    // for p_a and s.
    double sv_spread = 0.15;
    double p_a_spread = 0.005;
    double p_v_spread = 0.3;
    double s_spread = 0.1;

    void validate() const;
    double resistance(double s) const { return s * (r_tpr_max - r_tpr_min) + r_tpr_min + r_tpr_mod; }
    double heart_rate(double s) const { return s * (f_hr_max - f_hr_min) + f_hr_min; }
};

void to_json(nlohmann::json& j, const CvParams& p);
void from_json(const nlohmann::json& j, CvParams& p);

/// Model state: stroke volume, arterial and venous pressure, baroreflex tone.
struct CvState {
    double sv = 0.0;
    double p_a = 0.0;
    double p_v = 0.0;
    double s = 0.0;

    friend CvState operator+(const CvState& a, const CvState& b) {
        return {a.sv + b.sv, a.p_a + b.p_a, a.p_v + b.p_v, a.s + b.s};
    }
    friend CvState operator*(double k, const CvState& a) { return {k * a.sv, k * a.p_a, k * a.p_v, k * a.s}; }
    friend CvState operator*(const CvState& a, double k) { return k * a; }
};

inline bool is_finite(const CvState& s) {
    return std::isfinite(s.sv) && std::isfinite(s.p_a) && std::isfinite(s.p_v) && std::isfinite(s.s);
}

template <typename Derived>
bool is_finite(const Eigen::MatrixBase<Derived>& v) {
    return v.allFinite();
}

using FluidInput = std::function<double(double)>;

/// Right-hand side of the cardiovascular ODE. Throws NumericError naming the
/// first term that evaluates to a non-finite value.
CvState cv_derivative(const CvState& state, double t, const FluidInput& input, const CvParams& p);

/// Clamp the baroreflex tone into [0, 1].
inline CvState clamp_tone(CvState s) {
    s.s = std::clamp(s.s, 0.0, 1.0);
    return s;
}

/// Fixed point of the unforced system for a given stroke volume and venous
/// pressure (dP_a/dt = dS/dt = 0).
CvState cv_equilibrium(const CvParams& p, double sv, double p_v);

struct NoProjection {
    template <typename State>
    State operator()(State s) const {
        return s;
    }
};

/// Classical fourth-order Runge-Kutta with a fixed step. Returns the state at
/// t0, t0 + interval, ..., t1. `project` is applied after every step.
template <typename State, typename Deriv, typename Project = NoProjection>
std::vector<State> rk4_integrate(Deriv&& f, State y0, double t0, double t1, double dt, double interval = 1.0,
                                 Project&& project = {}) {
    if (!(dt > 0.0) || !(interval > 0.0) || !(t1 >= t0)) throw ConfigError("rk4_integrate: invalid time grid");
    const double steps_real = interval / dt;
    const auto steps = static_cast<long>(std::llround(steps_real));
    if (steps < 1 || std::abs(steps_real - static_cast<double>(steps)) > 1e-9 * steps_real)
        throw ConfigError("rk4_integrate: dt must divide the sampling interval");
    const double samples_real = (t1 - t0) / interval;
    const auto samples = static_cast<long>(std::llround(samples_real));
    if (std::abs(samples_real - static_cast<double>(samples)) > 1e-9 * std::max(1.0, samples_real))
        throw ConfigError("rk4_integrate: sampling interval must divide [t0, t1]");

    std::vector<State> out;
    out.reserve(static_cast<std::size_t>(samples) + 1);
    out.push_back(y0);
    State y = y0;
    for (long i = 0; i < samples; ++i) {
        const double base = t0 + static_cast<double>(i) * interval;
        for (long j = 0; j < steps; ++j) {
            // Recompute t from integer counters so step boundaries land exactly on the grid.
            const double t = base + static_cast<double>(j) * dt;
            const State k1 = f(y, t);
            const State k2 = f(y + (0.5 * dt) * k1, t + 0.5 * dt);
            const State k3 = f(y + (0.5 * dt) * k2, t + 0.5 * dt);
            const State k4 = f(y + dt * k3, t + dt);
            y = project(y + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4));
            if (!is_finite(y)) {
                std::ostringstream msg;
                msg << "rk4_integrate: non-finite state at t=" << (t + dt);
                throw NumericError(msg.str());
            }
        }
        out.push_back(y);
    }
    return out;
}

/// Integrates the cardiovascular model with tone clamping, sampled every second.
std::vector<CvState> simulate_cv(const CvParams& p, const CvState& init, const FluidInput& input, double t_end,
                                 double dt = 0.01);

}  // namespace cfqp::ode
