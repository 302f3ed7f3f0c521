//! Transmembrane flux physics: Nernst potentials, conductive channel
//! fluxes, Hodgkin–Huxley gating, pump fluxes, and the capacitive flux
//! with its per-species partition.
//!
//! All fluxes here are in ions/(m^2 s), matching the 1/(z e) factors of
//! the flux laws; the transport assembly converts to molar units once.

use thiserror::Error;

use crate::params::{Compartment, ParameterSet, PhysicalConstants, Species};

#[derive(Debug, Error)]
pub enum MembraneError {
    #[error("non-positive {side} concentration for {species}: {value} mol/m^3")]
    NonPositiveConcentration {
        species: Species,
        side: &'static str,
        value: f64,
    },
}

/// Which membrane a flux crosses. Each separates one cellular compartment
/// from the extracellular space.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Membrane {
    Ax,
    Gl,
}

impl Membrane {
    pub const ALL: [Membrane; 2] = [Membrane::Ax, Membrane::Gl];

    /// The intracellular compartment this membrane bounds.
    pub fn inner(self) -> Compartment {
        match self {
            Membrane::Ax => Compartment::Ax,
            Membrane::Gl => Compartment::Gl,
        }
    }
}

/// Hodgkin–Huxley gating variables, each confined to [0, 1].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GatingState {
    pub m: f64,
    pub h: f64,
    pub n: f64,
}

impl GatingState {
    /// Steady-state gating at a fixed membrane potential.
    pub fn steady(v_m: f64) -> GatingState {
        let r = hh_rates(v_m);
        GatingState {
            m: r.alpha_m / (r.alpha_m + r.beta_m),
            h: r.alpha_h / (r.alpha_h + r.beta_h),
            n: r.alpha_n / (r.alpha_n + r.beta_n),
        }
    }
}

/// One species' transmembrane flux split into its three contributions
/// (ions/(m^2 s), positive = out of the cell).
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct MembraneFlux {
    pub pump: f64,
    pub channel: f64,
    pub capacitive: f64,
}

impl MembraneFlux {
    pub fn total(&self) -> f64 {
        self.pump + self.channel + self.capacitive
    }
}

/// Nernst potential (V): (k_B T / z e) ln(c_ex / c_in).
pub fn nernst_potential(
    c_ex: f64,
    c_in: f64,
    species: Species,
    constants: &PhysicalConstants,
) -> Result<f64, MembraneError> {
    if !(c_ex > 0.0) {
        return Err(MembraneError::NonPositiveConcentration {
            species,
            side: "extracellular",
            value: c_ex,
        });
    }
    if !(c_in > 0.0) {
        return Err(MembraneError::NonPositiveConcentration {
            species,
            side: "intracellular",
            value: c_in,
        });
    }
    let v_t = constants.k_b * constants.temperature / constants.e;
    Ok(v_t / species.valence() * (c_ex / c_in).ln())
}

/// Conductive channel flux (ions/(m^2 s)): (g / z e)(V_m - E).
pub fn channel_flux(g: f64, v_m: f64, e_rev: f64, species: Species) -> f64 {
    g / (species.valence() * crate::params::E_CHARGE) * (v_m - e_rev)
}

/// Capacitive flux (ions/(m^2 s)): the species' share of the displacement
/// current, lambda_i (C_m / z e) dV/dt.
pub fn capacitive_flux(c_m: f64, lambda_i: f64, species: Species, dvdt: f64) -> f64 {
    lambda_i * (c_m / (species.valence() * crate::params::E_CHARGE)) * dvdt
}

/// The six gating rate constants at a membrane potential, in 1/s.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HhRates {
    pub alpha_m: f64,
    pub beta_m: f64,
    pub alpha_h: f64,
    pub beta_h: f64,
    pub alpha_n: f64,
    pub beta_n: f64,
}

/// y / (e^y - 1), evaluated stably through the removable singularity.
fn phi_over_expm1(y: f64) -> f64 {
    if y.abs() < 1e-5 {
        1.0 - 0.5 * y + y * y / 12.0
    } else {
        y / y.exp_m1()
    }
}

/// Resting potential offset used by the classical rate functions (V).
pub const V_REST_OFFSET: f64 = -70e-3;

/// Classical squid-axon rate functions, expressed in the deviation
/// v = V_m - V_rest (mV) and converted to 1/s. The removable
/// singularities of alpha_m (v = 25) and alpha_n (v = 10) are evaluated
/// through their analytic limits.
pub fn hh_rates(v_m: f64) -> HhRates {
    let v = (v_m - V_REST_OFFSET) * 1e3; // deviation in mV
    let alpha_m = 1.0 * phi_over_expm1((25.0 - v) / 10.0);
    let beta_m = 4.0 * (-v / 18.0).exp();
    let alpha_h = 0.07 * (-v / 20.0).exp();
    let beta_h = 1.0 / (((30.0 - v) / 10.0).exp() + 1.0);
    let alpha_n = 0.1 * phi_over_expm1((10.0 - v) / 10.0);
    let beta_n = 0.125 * (-v / 80.0).exp();
    // Rates above are per millisecond.
    HhRates {
        alpha_m: alpha_m * 1e3,
        beta_m: beta_m * 1e3,
        alpha_h: alpha_h * 1e3,
        beta_h: beta_h * 1e3,
        alpha_n: alpha_n * 1e3,
        beta_n: beta_n * 1e3,
    }
}

fn relax(x: f64, alpha: f64, beta: f64, dt: f64) -> f64 {
    let rate = alpha + beta;
    let x_inf = alpha / rate;
    let w = (-dt * rate).exp();
    (x_inf + (x - x_inf) * w).clamp(0.0, 1.0)
}

/// Exponential-integrator gating update: x <- x_inf + (x - x_inf) e^(-dt/tau)
/// per gate. Exact for frozen V_m, and confined to the unit interval for
/// any dt.
pub fn gating_step(state: GatingState, v_m: f64, dt: f64) -> GatingState {
    let r = hh_rates(v_m);
    GatingState {
        m: relax(state.m, r.alpha_m, r.beta_m, dt),
        h: relax(state.h, r.alpha_h, r.beta_h, dt),
        n: relax(state.n, r.alpha_n, r.beta_n, dt),
    }
}

/// Saturating 3Na/2K pump. Returns per-species fluxes (ions/(m^2 s)):
/// +3 I_p/e sodium out, -2 I_p/e potassium in, chloride untouched, with
/// I_p = I_max (c_Na_in/(c_Na_in+K_Na))^3 (c_K_ex/(c_K_ex+K_K))^2.
pub fn pump_flux(c_na_in: f64, c_k_ex: f64, i_max: f64, k_na: f64, k_k: f64) -> [f64; 3] {
    let i_p = pump_current(c_na_in, c_k_ex, i_max, k_na, k_k);
    let e = crate::params::E_CHARGE;
    [3.0 * i_p / e, -2.0 * i_p / e, 0.0]
}

/// Net outward pump current I_p (A/m^2).
pub fn pump_current(c_na_in: f64, c_k_ex: f64, i_max: f64, k_na: f64, k_k: f64) -> f64 {
    let na = c_na_in / (c_na_in + k_na);
    let k = c_k_ex / (c_k_ex + k_k);
    i_max * na * na * na * k * k
}

/// d I_p / d c_Na_in at fixed c_K_ex.
pub fn pump_current_dna(c_na_in: f64, c_k_ex: f64, i_max: f64, k_na: f64, k_k: f64) -> f64 {
    let na = c_na_in / (c_na_in + k_na);
    let k = c_k_ex / (c_k_ex + k_k);
    let dna = k_na / ((c_na_in + k_na) * (c_na_in + k_na));
    i_max * 3.0 * na * na * dna * k * k
}

/// d I_p / d c_K_ex at fixed c_Na_in.
pub fn pump_current_dk(c_na_in: f64, c_k_ex: f64, i_max: f64, k_na: f64, k_k: f64) -> f64 {
    let na = c_na_in / (c_na_in + k_na);
    let k = c_k_ex / (c_k_ex + k_k);
    let dk = k_k / ((c_k_ex + k_k) * (c_k_ex + k_k));
    i_max * na * na * na * 2.0 * k * dk
}

/// Channel conductance for one species on one membrane (S/m^2). The axon
/// carries the gated Na (m^3 h) and K (n^4) conductances on top of its
/// leaks; the glial membrane is passive.
pub fn conductance(
    membrane: Membrane,
    species: Species,
    gating: &GatingState,
    params: &ParameterSet,
) -> f64 {
    match (membrane, species) {
        (Membrane::Ax, Species::Na) => {
            params.g_leak_na + params.gbar_na * gating.m * gating.m * gating.m * gating.h
        }
        (Membrane::Ax, Species::K) => {
            params.g_leak_k + params.gbar_k * gating.n * gating.n * gating.n * gating.n
        }
        (Membrane::Ax, Species::Cl) => params.g_ax_cl,
        (Membrane::Gl, Species::Na) => params.g_gl_na,
        (Membrane::Gl, Species::K) => params.g_gl_k,
        (Membrane::Gl, Species::Cl) => 0.0,
    }
}

/// Pump strength for a membrane (A/m^2).
pub fn pump_strength(membrane: Membrane, params: &ParameterSet) -> f64 {
    match membrane {
        Membrane::Ax => params.i_ax1,
        Membrane::Gl => params.i_ax2,
    }
}

/// Everything the flux assembly needs at one membrane patch.
#[derive(Debug, Clone, Copy)]
pub struct MembraneInputs {
    /// V_m = phi_in - phi_ex (V).
    pub v_m: f64,
    /// Discrete dV/dt entering the capacitive flux (V/s).
    pub dvdt: f64,
    /// Intracellular concentrations, indexed Na/K/Cl (mol/m^3).
    pub c_in: [f64; 3],
    /// Extracellular concentrations, indexed Na/K/Cl (mol/m^3).
    pub c_ex: [f64; 3],
    pub gating: GatingState,
}

/// Assembles one species' transmembrane flux decomposition
/// J = J_pump + J_channel + J_capacitive on a membrane patch.
pub fn total_membrane_flux(
    membrane: Membrane,
    species: Species,
    inputs: &MembraneInputs,
    params: &ParameterSet,
) -> Result<MembraneFlux, MembraneError> {
    let si = species.index();
    let e_rev = nernst_potential(inputs.c_ex[si], inputs.c_in[si], species, &params.constants)?;
    let g = conductance(membrane, species, &inputs.gating, params);
    let i_max = pump_strength(membrane, params);
    let pump = pump_flux(
        inputs.c_in[Species::Na.index()],
        inputs.c_ex[Species::K.index()],
        i_max,
        params.pump_k_na,
        params.pump_k_k,
    )[si];
    Ok(MembraneFlux {
        pump,
        channel: channel_flux(g, inputs.v_m, e_rev, species),
        capacitive: capacitive_flux(params.c_m, params.lambda[si], species, inputs.dvdt),
    })
}
