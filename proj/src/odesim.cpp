#include "cfqp/odesim.hpp"

#include <algorithm>

namespace cfqp::ode {

void CvParams::validate() const {
    const bool positive = c_a > 0 && c_v > 0 && r_tpr_min > 0 && r_tpr_max > 0 && r_tpr_mod >= 0 && f_hr_min > 0 &&
                          f_hr_max > 0 && tau_baro > 0 && k_width > 0 && p_a_set > 0 && sv_init > 0 &&
                          p_a_init > 0 && p_v_init > 0 && s_init > 0;
    if (!positive) throw ConfigError("CvParams: all constants must be positive");
    if (sv_spread < 0 || p_a_spread < 0 || p_v_spread < 0 || s_spread < 0 || sv_spread >= 1 || p_v_spread >= 1)
        throw ConfigError("CvParams: initial-state spreads must lie in [0, 1)");
    if (!(f_hr_max > f_hr_min)) throw ConfigError("CvParams: f_hr_max must exceed f_hr_min");
    if (!(r_tpr_max > r_tpr_min)) throw ConfigError("CvParams: r_tpr_max must exceed r_tpr_min");
}

void to_json(nlohmann::json& j, const CvParams& p) {
    j = nlohmann::json{{"c_a", p.c_a},           {"c_v", p.c_v},
                       {"r_tpr_min", p.r_tpr_min}, {"r_tpr_max", p.r_tpr_max},
                       {"r_tpr_mod", p.r_tpr_mod}, {"f_hr_min", p.f_hr_min},
                       {"f_hr_max", p.f_hr_max},   {"tau_baro", p.tau_baro},
                       {"k_width", p.k_width},     {"p_a_set", p.p_a_set},
                       {"sv_init", p.sv_init},     {"p_a_init", p.p_a_init},
                       {"p_v_init", p.p_v_init},   {"s_init", p.s_init},
                       {"sv_spread", p.sv_spread}, {"p_a_spread", p.p_a_spread},
                       {"p_v_spread", p.p_v_spread}, {"s_spread", p.s_spread}};
}

void from_json(const nlohmann::json& j, CvParams& p) {
    const CvParams d;
    p.c_a = j.value("c_a", d.c_a);
    p.c_v = j.value("c_v", d.c_v);
    p.r_tpr_min = j.value("r_tpr_min", d.r_tpr_min);
    p.r_tpr_max = j.value("r_tpr_max", d.r_tpr_max);
    p.r_tpr_mod = j.value("r_tpr_mod", d.r_tpr_mod);
    p.f_hr_min = j.value("f_hr_min", d.f_hr_min);
    p.f_hr_max = j.value("f_hr_max", d.f_hr_max);
    p.tau_baro = j.value("tau_baro", d.tau_baro);
    p.k_width = j.value("k_width", d.k_width);
    p.p_a_set = j.value("p_a_set", d.p_a_set);
    p.sv_init = j.value("sv_init", d.sv_init);
    p.p_a_init = j.value("p_a_init", d.p_a_init);
    p.p_v_init = j.value("p_v_init", d.p_v_init);
    p.s_init = j.value("s_init", d.s_init);
    p.sv_spread = j.value("sv_spread", d.sv_spread);
    p.p_a_spread = j.value("p_a_spread", d.p_a_spread);
    p.p_v_spread = j.value("p_v_spread", d.p_v_spread);
    p.s_spread = j.value("s_spread", d.s_spread);
}

namespace {

void check_term(double v, const char* name) {
    if (!std::isfinite(v)) throw NumericError(std::string("cv_derivative: non-finite ") + name);
}

double baro_target(const CvParams& p, double p_a) {
    return 1.0 - 1.0 / (1.0 + std::exp(-p.k_width * (p_a - p.p_a_set)));
}

}  // namespace

CvState cv_derivative(const CvState& state, double t, const FluidInput& input, const CvParams& p) {
    const double fluid = input ? input(t) : 0.0;
    check_term(fluid, "I_external");
    const double r_tpr = p.resistance(state.s);
    const double f_hr = p.heart_rate(state.s);

    CvState rate;
    rate.sv = fluid;
    // Cardiac output fills the arterial compartment, peripheral flow drains it.
    rate.p_a = (state.sv * f_hr - (state.p_a - state.p_v) / r_tpr) / p.c_a;
    check_term(rate.p_a, "dP_a/dt");
    rate.p_v = (-p.c_a * rate.p_a + fluid) / p.c_v;
    check_term(rate.p_v, "dP_v/dt");
    rate.s = (baro_target(p, state.p_a) - state.s) / p.tau_baro;
    check_term(rate.s, "dS/dt");
    return rate;
}

CvState cv_equilibrium(const CvParams& p, double sv, double p_v) {
    // Mismatch between the pressure drop implied by the baroreflex tone at p_a and p_a itself.
    // It is strictly increasing in p_a, so bisection finds the unique root.
    auto residual = [&](double p_a) {
        const double s = baro_target(p, p_a);
        return p_a - p_v - sv * p.heart_rate(s) * p.resistance(s);
    };
    double lo = p_v;
    double hi = p_v + sv * p.f_hr_max * (p.r_tpr_max + p.r_tpr_mod) + 1.0;
    for (int i = 0; i < 200; ++i) {
        const double mid = 0.5 * (lo + hi);
        (residual(mid) < 0.0 ? lo : hi) = mid;
    }
    const double p_a = 0.5 * (lo + hi);
    return {sv, p_a, p_v, baro_target(p, p_a)};
}

std::vector<CvState> simulate_cv(const CvParams& p, const CvState& init, const FluidInput& input, double t_end,
                                 double dt) {
    if (dt > 0.05) throw ConfigError("simulate_cv: dt must not exceed 0.05");
    auto rhs = [&](const CvState& s, double t) { return cv_derivative(s, t, input, p); };
    return rk4_integrate(rhs, init, 0.0, t_end, dt, 1.0, [](CvState s) { return clamp_tone(s); });
}

}  // namespace cfqp::ode
