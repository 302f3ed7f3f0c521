//! Implicit time integration of the coupled differential-algebraic
//! system: operator-split gating (exponential integrator, explicit),
//! backward-Euler Newton for concentrations and potentials, rest-state
//! initialization, and the finite-difference Jacobian check.
//!
//! The Newton system recombines the published current equations with the
//! conservation equations into per-cell charge rows (eta/dt)(sum z c + a/F),
//! an algebraically equivalent form that re-anchors electroneutrality at
//! every solve instead of letting roundoff accumulate. Rows are all in
//! mol m^-3 s^-1, so one RMS norm governs convergence.

use std::time::{Duration, Instant};

use thiserror::Error;

use crate::band::BandMatrix;
use crate::membrane::{self, GatingState, Membrane, MembraneError};
use crate::mesh::{BoundaryMode, Mesh};
use crate::params::{Compartment, ParameterSet, Species, FARADAY};
use crate::transport::{
    assemble_system, GatingField, StimulusTerm, SystemSpec, TridomainState, SLOTS,
};

/// Positivity floor for concentration iterates (mol/m^3). A converged
/// step must not have any clip active.
const CONC_FLOOR: f64 = 1e-9;

/// Safety factor on the roundoff floor of the residual. The time terms
/// eta (c - c_prev)/dt cancel catastrophically near convergence, so the
/// achievable residual RMS scales like eps * eta * c / dt.
const RESIDUAL_FLOOR_SAFETY: f64 = 8.0;

/// A chord iteration contracting worse than this triggers a Jacobian
/// refresh.
const CHORD_RATE_LIMIT: f64 = 0.3;

const MAX_HALVINGS: usize = 6;

#[derive(Debug, Error)]
pub enum SolverError {
    #[error("newton failed to converge at t = {t:.6e} s after {iters} iterations (residual {residual:.3e}, target {target:.3e})")]
    NonConvergence {
        t: f64,
        iters: usize,
        residual: f64,
        target: f64,
    },
    #[error("singular jacobian: zero pivot in {block}")]
    SingularJacobian { block: String },
    #[error("rest state failed: {0}")]
    RestState(String),
    #[error("jacobian_check needs a mesh of at most 64 cells, got {cells}")]
    MeshTooLarge { cells: usize },
    #[error(transparent)]
    Membrane(#[from] MembraneError),
    #[error("invalid solver config: {0}")]
    InvalidConfig(String),
}

/// Time step, tolerances, and horizon of the implicit integrator.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverConfig {
    /// Time step (s).
    pub dt: f64,
    /// Relative residual tolerance of the Newton iteration.
    pub newton_tol: f64,
    pub newton_max_iter: usize,
    /// Reserved for an iterative linear backend; the direct band solver
    /// ignores it.
    pub linear_tol: f64,
    /// Simulated horizon (s).
    pub max_time: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            dt: 1e-5,
            newton_tol: 1e-9,
            newton_max_iter: 12,
            linear_tol: 0.0,
            max_time: 0.1,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<(), SolverError> {
        if !(self.dt > 0.0) {
            return Err(SolverError::InvalidConfig(format!(
                "dt must be positive, got {}",
                self.dt
            )));
        }
        if !(self.newton_tol > 0.0 && self.newton_tol < 1.0) {
            return Err(SolverError::InvalidConfig(format!(
                "newton_tol must lie in (0,1), got {}",
                self.newton_tol
            )));
        }
        if self.newton_max_iter < 1 {
            return Err(SolverError::InvalidConfig(
                "newton_max_iter must be at least 1".into(),
            ));
        }
        if !(self.max_time > 0.0) {
            return Err(SolverError::InvalidConfig(format!(
                "max_time must be positive, got {}",
                self.max_time
            )));
        }
        Ok(())
    }
}

/// Outcome of one accepted step.
#[derive(Debug, Clone, Copy)]
pub struct StepReport {
    pub newton_iters: usize,
    pub jacobian_refreshes: usize,
    pub residual_norm: f64,
    pub initial_norm: f64,
    pub wall_time: Duration,
    pub converged: bool,
    /// True when the nominal dt had to be halved internally.
    pub dt_rejected: bool,
}

/// Owns the Newton workspaces and the cached Jacobian factorization,
/// which is reused across iterations and steps (chord iteration) until
/// its contraction degrades.
pub struct Stepper<'a> {
    pub mesh: &'a Mesh,
    pub params: &'a ParameterSet,
    pub config: SolverConfig,
    gauge_cell: Option<usize>,
    jac: BandMatrix,
    ipiv: Vec<usize>,
    fact_valid: bool,
    fact_dt: f64,
    res: Vec<f64>,
    res_try: Vec<f64>,
    dx: Vec<f64>,
    x: Vec<f64>,
    x_try: Vec<f64>,
}

impl<'a> Stepper<'a> {
    pub fn new(
        mesh: &'a Mesh,
        params: &'a ParameterSet,
        config: SolverConfig,
    ) -> Result<Stepper<'a>, SolverError> {
        config.validate()?;
        let n = mesh.n_cells() * SLOTS;
        let bw = (SLOTS * mesh.nr + SLOTS - 1).min(n - 1);
        let gauge_cell = match mesh.boundary {
            BoundaryMode::Sealed => Some(0),
            BoundaryMode::Bath => None,
        };
        Ok(Stepper {
            mesh,
            params,
            config,
            gauge_cell,
            jac: BandMatrix::new(n, bw, bw),
            ipiv: Vec::new(),
            fact_valid: false,
            fact_dt: 0.0,
            res: vec![0.0; n],
            res_try: vec![0.0; n],
            dx: vec![0.0; n],
            x: vec![0.0; n],
            x_try: vec![0.0; n],
        })
    }

    /// Advances one nominal step, transparently halving dt (bounded) when
    /// the Newton iteration rejects. The input state is untouched on
    /// failure.
    pub fn step(
        &mut self,
        state: &TridomainState,
        t: f64,
        stim: Option<&StimulusTerm>,
    ) -> Result<(TridomainState, StepReport), SolverError> {
        let start = Instant::now();
        let mut report = StepReport {
            newton_iters: 0,
            jacobian_refreshes: 0,
            residual_norm: 0.0,
            initial_norm: 0.0,
            wall_time: Duration::ZERO,
            converged: false,
            dt_rejected: false,
        };
        let result = self.advance(state, t, self.config.dt, stim, 0, &mut report)?;
        report.converged = true;
        report.wall_time = start.elapsed();
        Ok((result, report))
    }

    fn advance(
        &mut self,
        state: &TridomainState,
        t: f64,
        dt: f64,
        stim: Option<&StimulusTerm>,
        depth: usize,
        report: &mut StepReport,
    ) -> Result<TridomainState, SolverError> {
        match self.step_once(state, t, dt, stim, report) {
            Ok(next) => Ok(next),
            Err(e @ SolverError::SingularJacobian { .. }) => Err(e),
            Err(e) => {
                if depth >= MAX_HALVINGS {
                    return Err(e);
                }
                report.dt_rejected = true;
                self.fact_valid = false;
                let half = dt * 0.5;
                let mid = self.advance(state, t, half, stim, depth + 1, report)?;
                self.advance(&mid, t + half, half, stim, depth + 1, report)
            }
        }
    }

    fn refresh_jacobian(
        &mut self,
        state: &TridomainState,
        gating: &GatingField,
        dt: f64,
        stim: Option<&StimulusTerm>,
        report: &mut StepReport,
    ) -> Result<(), SolverError> {
        let spec = SystemSpec {
            mesh: self.mesh,
            params: self.params,
            x_prev: &state.x,
            gating,
            background: &state.background,
            dt,
            stim,
            gauge_cell: self.gauge_cell,
        };
        assemble_system(&spec, &self.x, &mut self.res, Some(&mut self.jac));
        self.jac
            .factor(&mut self.ipiv)
            .map_err(|col| SolverError::SingularJacobian {
                block: describe_unknown(col),
            })?;
        self.fact_valid = true;
        self.fact_dt = dt;
        report.jacobian_refreshes += 1;
        Ok(())
    }

    fn step_once(
        &mut self,
        state: &TridomainState,
        t: f64,
        dt: f64,
        stim: Option<&StimulusTerm>,
        report: &mut StepReport,
    ) -> Result<TridomainState, SolverError> {
        debug_assert_eq!(state.x.len(), self.x.len());
        // Operator splitting: gating relaxes first, against the old
        // potentials, and stays frozen through the implicit solve.
        let gating = state.advance_gating(dt);
        if self.fact_valid && self.fact_dt != dt {
            self.fact_valid = false;
        }

        self.x.copy_from_slice(&state.x);
        let mut clipped = clip_concentrations(&mut self.x);
        {
            let spec = SystemSpec {
                mesh: self.mesh,
                params: self.params,
                x_prev: &state.x,
                gating: &gating,
                background: &state.background,
                dt,
                stim,
                gauge_cell: self.gauge_cell,
            };
            assemble_system(&spec, &self.x, &mut self.res, None);
        }
        let mut norm = wrms(&self.res);
        report.initial_norm = report.initial_norm.max(norm);
        let target = (self.config.newton_tol * norm).max(self.residual_floor(dt));
        report.residual_norm = norm;

        if norm <= target && !clipped {
            // Fixed point: nothing to solve.
            return Ok(self.finish(state, gating));
        }

        let mut fresh = false;
        let mut iters = 0usize;
        while iters < self.config.newton_max_iter {
            if !self.fact_valid {
                self.refresh_jacobian(state, &gating, dt, stim, report)?;
                fresh = true;
            }
            // Newton direction from the cached factorization.
            for (d, r) in self.dx.iter_mut().zip(&self.res) {
                *d = -r;
            }
            self.jac.solve(&self.ipiv, &mut self.dx);
            iters += 1;
            report.newton_iters += 1;

            // Backtracking on the residual norm, with positivity clipping.
            let mut accepted = false;
            let mut best_norm = f64::INFINITY;
            for &alpha in &[1.0, 0.5, 0.25, 0.0625] {
                self.x_try.copy_from_slice(&self.x);
                for (xt, d) in self.x_try.iter_mut().zip(&self.dx) {
                    *xt += alpha * d;
                }
                let clip_try = clip_concentrations(&mut self.x_try);
                {
                    let spec = SystemSpec {
                        mesh: self.mesh,
                        params: self.params,
                        x_prev: &state.x,
                        gating: &gating,
                        background: &state.background,
                        dt,
                        stim,
                        gauge_cell: self.gauge_cell,
                    };
                    assemble_system(&spec, &self.x_try, &mut self.res_try, None);
                }
                let n_try = wrms(&self.res_try);
                if n_try <= target || n_try <= norm * (1.0 - 1e-4 * alpha) {
                    std::mem::swap(&mut self.x, &mut self.x_try);
                    std::mem::swap(&mut self.res, &mut self.res_try);
                    let rate = n_try / norm;
                    norm = n_try;
                    clipped = clip_try;
                    accepted = true;
                    // A sluggish chord step means the cached Jacobian has
                    // drifted too far; refresh it next iteration.
                    if !fresh && rate > CHORD_RATE_LIMIT {
                        self.fact_valid = false;
                    }
                    fresh = false;
                    break;
                }
                best_norm = best_norm.min(n_try);
            }

            if !accepted {
                if !fresh {
                    // Retry this iteration with a Jacobian assembled at the
                    // current iterate.
                    self.fact_valid = false;
                    iters -= 1;
                    report.newton_iters -= 1;
                    continue;
                }
                return Err(SolverError::NonConvergence {
                    t,
                    iters,
                    residual: best_norm.min(norm),
                    target,
                });
            }

            if norm <= target && !clipped {
                report.residual_norm = norm;
                return Ok(self.finish(state, gating));
            }
        }
        report.residual_norm = norm;
        Err(SolverError::NonConvergence {
            t,
            iters,
            residual: norm,
            target,
        })
    }

    fn finish(&self, state: &TridomainState, gating: GatingField) -> TridomainState {
        TridomainState {
            x: self.x.clone(),
            gating,
            background: state.background.clone(),
        }
    }

    /// Roundoff floor of the residual RMS for the current iterate scale.
    fn residual_floor(&self, dt: f64) -> f64 {
        let mut c_max = 1.0f64;
        for cell in 0..self.x.len() / SLOTS {
            for slot in 0..9 {
                c_max = c_max.max(self.x[cell * SLOTS + slot].abs());
            }
        }
        let eta_max = self.params.eta.iter().fold(0.0f64, |a, v| a.max(*v));
        RESIDUAL_FLOOR_SAFETY * f64::EPSILON * eta_max * c_max / dt
    }
}

fn clip_concentrations(x: &mut [f64]) -> bool {
    let mut any = false;
    for cell in 0..x.len() / SLOTS {
        for slot in 0..9 {
            let v = &mut x[cell * SLOTS + slot];
            if *v < CONC_FLOOR {
                *v = CONC_FLOOR;
                any = true;
            }
        }
    }
    any
}

fn wrms(r: &[f64]) -> f64 {
    (r.iter().map(|v| v * v).sum::<f64>() / r.len() as f64).sqrt()
}

/// Names the unknown behind a solver column, for singular-pivot reports.
fn describe_unknown(col: usize) -> String {
    let cell = col / SLOTS;
    let slot = col % SLOTS;
    let name = match slot {
        0..=8 => {
            let comp = Compartment::ALL[slot / 3];
            let species = Species::ALL[slot % 3];
            format!("c_{comp}^{species}")
        }
        _ => format!("phi_{}", Compartment::ALL[slot - 9]),
    };
    format!("{name} at cell {cell}")
}

/// One membrane's algebraic rest point.
#[derive(Debug, Clone, Copy)]
pub struct RestPoint {
    /// Membrane potential (V).
    pub v: f64,
    /// Intracellular concentrations, indexed Na/K/Cl (mol/m^3).
    pub c_in: [f64; 3],
}

/// Diagnostics of the rest-state relaxation.
#[derive(Debug, Clone, Copy)]
pub struct RestReport {
    pub v_ax: f64,
    pub v_gl: f64,
    pub ax: RestPoint,
    pub gl: RestPoint,
    pub relax_steps: usize,
    pub max_dvdt: f64,
    pub max_dc_rel: f64,
}

/// Solves one membrane's steady state: potassium fixed at the configured
/// intracellular value, sodium set so the saturating pump balances its
/// leak, chloride at electrochemical equilibrium, and the potential from
/// the potassium balance. With the pump disabled every species falls back
/// to equilibrium at the potassium Nernst potential.
pub fn membrane_rest_point(
    membrane: Membrane,
    params: &ParameterSet,
) -> Result<RestPoint, SolverError> {
    let v_t = params.thermal_voltage();
    let bath = params.bath;
    let k_in = match membrane {
        Membrane::Ax => params.init_k_ax,
        Membrane::Gl => params.init_k_gl,
    };
    let e_k = v_t * (bath[1] / k_in).ln();
    let i_max = membrane::pump_strength(membrane, params);
    let psi = {
        let k = bath[1] / (bath[1] + params.pump_k_k);
        k * k
    };
    let i_sat = i_max * psi;

    let g_of = |v: f64, s: Species| -> f64 {
        let gating = GatingState::steady(v);
        membrane::conductance(membrane, s, &gating, params)
    };

    if i_sat == 0.0 {
        // No pump: every conducting species must be at equilibrium, which
        // pins the potential at the potassium Nernst value (Donnan-like).
        let v = e_k;
        return Ok(RestPoint {
            v,
            c_in: [bath[0] * (-v / v_t).exp(), k_in, bath[2] * (v / v_t).exp()],
        });
    }

    if g_of(e_k + 1e-3, Species::K) == 0.0 {
        return Err(SolverError::RestState(format!(
            "{membrane:?} membrane has no potassium conductance; cannot balance its pump"
        )));
    }
    if g_of(e_k + 1e-3, Species::Na) == 0.0 {
        return Err(SolverError::RestState(format!(
            "{membrane:?} membrane has no sodium conductance; cannot balance its pump"
        )));
    }

    // Parameterize by the pump's sodium occupancy u in (0, 1):
    // I_p = u^3 I_sat, Na_in = K_Na u/(1-u), and the potential follows
    // from the potassium balance g_K(v)(v - E_K) = 2 I_p. The sodium
    // balance residual G(u) runs from -inf (u -> 0, Na_in -> 0 makes E_Na
    // huge) to +inf (u -> 1), so a bracket always exists; a potential
    // scan would miss rest points that sit within microvolts of the
    // pump's saturation ceiling.
    let v_of_u = |u: f64| -> f64 {
        let rhs = 2.0 * u * u * u * i_sat;
        // g_K(v)(v - e_k) - rhs is strictly increasing in v.
        let mut lo = e_k;
        let mut hi = e_k + 0.3;
        for _ in 0..100 {
            let mid = 0.5 * (lo + hi);
            if g_of(mid, Species::K) * (mid - e_k) > rhs {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        0.5 * (lo + hi)
    };
    let sodium_residual = |u: f64| -> f64 {
        let v = v_of_u(u);
        let na_in = params.pump_k_na * u / (1.0 - u);
        let e_na = v_t * (bath[0] / na_in).ln();
        g_of(v, Species::Na) * (v - e_na) + 3.0 * u * u * u * i_sat
    };

    let steps = 2000;
    let mut prev: Option<(f64, f64)> = None;
    let mut bracket = None;
    for i in 1..steps {
        let u = i as f64 / steps as f64;
        let g = sodium_residual(u);
        if let Some((u0, g0)) = prev {
            if g0 * g <= 0.0 {
                bracket = Some((u0, u));
                break;
            }
        }
        prev = Some((u, g));
    }
    let (mut lo, mut hi) = bracket.ok_or_else(|| {
        SolverError::RestState(format!(
            "no rest point for the {membrane:?} membrane: pump strength and leak \
             conductances are inconsistent (I_sat = {i_sat:.3e} A/m^2)"
        ))
    })?;
    let mut g_lo = sodium_residual(lo);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        let g_mid = sodium_residual(mid);
        if g_lo * g_mid <= 0.0 {
            hi = mid;
        } else {
            lo = mid;
            g_lo = g_mid;
        }
    }
    let u = 0.5 * (lo + hi);
    let v = v_of_u(u);
    Ok(RestPoint {
        v,
        c_in: [
            params.pump_k_na * u / (1.0 - u),
            k_in,
            bath[2] * (v / v_t).exp(),
        ],
    })
}

/// Convergence thresholds of the rest-state relaxation.
const REST_DVDT_LIMIT: f64 = 1e-6; // V/s
const REST_DC_REL_LIMIT: f64 = 1e-10; // relative change per step
const REST_RELAX_DT: f64 = 1e-4; // s
const REST_MAX_STEPS: usize = 5000;

/// Constructs the resting state: per-membrane algebraic balance, exact
/// per-cell electroneutrality through the fixed background charge, gating
/// at steady state, then an unstimulated relaxation until the state stops
/// moving.
pub fn find_rest_state(
    mesh: &Mesh,
    params: &ParameterSet,
    config: &SolverConfig,
) -> Result<(TridomainState, RestReport), SolverError> {
    let ax = membrane_rest_point(Membrane::Ax, params)?;
    let gl = membrane_rest_point(Membrane::Gl, params)?;
    let n_cells = mesh.n_cells();

    let mut state = TridomainState {
        x: vec![0.0; n_cells * SLOTS],
        gating: GatingField::uniform(n_cells, GatingState::steady(ax.v)),
        background: [vec![0.0; n_cells], vec![0.0; n_cells], vec![0.0; n_cells]],
    };
    for cell in 0..n_cells {
        for s in Species::ALL {
            state.set_conc(Compartment::Ax, s, cell, ax.c_in[s.index()]);
            state.set_conc(Compartment::Gl, s, cell, gl.c_in[s.index()]);
            state.set_conc(Compartment::Ex, s, cell, params.bath[s.index()]);
        }
        state.set_phi(Compartment::Ax, cell, ax.v);
        state.set_phi(Compartment::Gl, cell, gl.v);
        state.set_phi(Compartment::Ex, cell, 0.0);
    }
    // Background charge makes every compartment exactly electroneutral.
    for comp in Compartment::ALL {
        for cell in 0..n_cells {
            let q: f64 = Species::ALL
                .iter()
                .map(|s| s.valence() * state.conc(comp, *s, cell))
                .sum();
            state.background[comp.index()][cell] = -FARADAY * q;
        }
    }

    // Relax with no stimulus until the state stops moving.
    let relax_config = SolverConfig {
        dt: REST_RELAX_DT,
        max_time: REST_MAX_STEPS as f64 * REST_RELAX_DT,
        ..*config
    };
    let mut stepper = Stepper::new(mesh, params, relax_config)?;
    let mut report = RestReport {
        v_ax: ax.v,
        v_gl: gl.v,
        ax,
        gl,
        relax_steps: 0,
        max_dvdt: f64::INFINITY,
        max_dc_rel: f64::INFINITY,
    };
    for step in 1..=REST_MAX_STEPS {
        let (next, _) = stepper.step(&state, step as f64 * REST_RELAX_DT, None)?;
        let mut max_dv = 0.0f64;
        let mut max_dc = 0.0f64;
        for cell in 0..n_cells {
            for mb in Membrane::ALL {
                max_dv = max_dv.max((next.v_m(mb, cell) - state.v_m(mb, cell)).abs());
            }
            for comp in Compartment::ALL {
                for s in Species::ALL {
                    let a = state.conc(comp, s, cell);
                    let b = next.conc(comp, s, cell);
                    max_dc = max_dc.max((b - a).abs() / a.abs().max(1e-12));
                }
            }
        }
        state = next;
        report.relax_steps = step;
        report.max_dvdt = max_dv / REST_RELAX_DT;
        report.max_dc_rel = max_dc;
        if report.max_dvdt < REST_DVDT_LIMIT && max_dc < REST_DC_REL_LIMIT {
            report.v_ax = state.v_m(Membrane::Ax, 0);
            report.v_gl = state.v_m(Membrane::Gl, 0);
            return Ok((state, report));
        }
    }
    Err(SolverError::RestState(format!(
        "did not settle within {REST_MAX_STEPS} steps: max |dV/dt| = {:.3e} V/s, \
         max relative dc = {:.3e} per step",
        report.max_dvdt, report.max_dc_rel
    )))
}

/// A randomized admissible state suitable for finite-difference Jacobian
/// probing: concentrations are random, while the potentials carry
/// guaranteed face-to-face separation (and stay away from the bath
/// ground), so no difference step of [`jacobian_check_with_step`] can
/// straddle a drift-upwinding switch.
pub fn jacobian_probe_state(mesh: &Mesh, seed: u64) -> TridomainState {
    let n = mesh.n_cells();
    let mut s = seed | 1;
    let mut next = move || {
        s ^= s << 13;
        s ^= s >> 7;
        s ^= s << 17;
        (s >> 11) as f64 / (1u64 << 53) as f64
    };
    let mut state = TridomainState {
        x: vec![0.0; n * SLOTS],
        gating: GatingField::uniform(n, GatingState::steady(-0.07)),
        background: [vec![0.0; n], vec![0.0; n], vec![0.0; n]],
    };
    // Per-compartment slopes of alternating sign exercise both upwind
    // branches; the jitter stays well below the slope.
    let slopes = [(0.05, -0.06), (-0.05, 0.06), (0.05, 0.06)];
    for cell in 0..n {
        let (ir, iz) = mesh.cell_coords(cell);
        for comp in Compartment::ALL {
            for sp in Species::ALL {
                state.set_conc(comp, sp, cell, 3.0 + 120.0 * next());
            }
            let (sr, sz) = slopes[comp.index()];
            let phi = 0.35 + sr * ir as f64 + sz * iz as f64 + 0.01 * (next() - 0.5);
            state.set_phi(comp, cell, phi);
        }
    }
    for comp in Compartment::ALL {
        for cell in 0..n {
            let q: f64 = Species::ALL
                .iter()
                .map(|sp| sp.valence() * state.conc(comp, *sp, cell))
                .sum();
            state.background[comp.index()][cell] = -FARADAY * q;
        }
    }
    state
}

/// Compares the analytic Jacobian against central finite differences of
/// the residual on a small mesh. Returns the worst relative discrepancy
/// over entries above a floor.
pub fn jacobian_check(
    mesh: &Mesh,
    params: &ParameterSet,
    state: &TridomainState,
    dt: f64,
) -> Result<f64, SolverError> {
    // The residual is piecewise linear in the potentials; the step only
    // has to clear the roundoff of the large time terms.
    jacobian_check_with_step(mesh, params, state, dt, 1e-3)
}

/// [`jacobian_check`] with an explicit relative finite-difference step,
/// exposed so the quadratic convergence of the discrepancy in the step
/// size can be tested.
pub fn jacobian_check_with_step(
    mesh: &Mesh,
    params: &ParameterSet,
    state: &TridomainState,
    dt: f64,
    h_rel: f64,
) -> Result<f64, SolverError> {
    if mesh.n_cells() > 64 {
        return Err(SolverError::MeshTooLarge {
            cells: mesh.n_cells(),
        });
    }
    let n = mesh.n_cells() * SLOTS;
    let bw = (SLOTS * mesh.nr + SLOTS - 1).min(n - 1);
    let gauge_cell = match mesh.boundary {
        BoundaryMode::Sealed => Some(0),
        BoundaryMode::Bath => None,
    };
    let spec = SystemSpec {
        mesh,
        params,
        x_prev: &state.x,
        gating: &state.gating,
        background: &state.background,
        dt,
        stim: None,
        gauge_cell,
    };
    let mut jac = BandMatrix::new(n, bw, bw);
    let mut res = vec![0.0; n];
    assemble_system(&spec, &state.x, &mut res, Some(&mut jac));

    let mut x = state.x.clone();
    let mut rp = vec![0.0; n];
    let mut rm = vec![0.0; n];
    // Floor below which entries are treated as structurally zero.
    let mut max_entry = 0.0f64;
    for i in 0..n {
        for j in i.saturating_sub(bw)..(i + bw + 1).min(n) {
            max_entry = max_entry.max(jac.get(i, j).abs());
        }
    }
    let floor = 1e-7 * max_entry;
    let mut worst = 0.0f64;
    for col in 0..n {
        let h = h_rel * x[col].abs().max(1.0);
        let orig = x[col];
        x[col] = orig + h;
        assemble_system(&spec, &x, &mut rp, None);
        x[col] = orig - h;
        assemble_system(&spec, &x, &mut rm, None);
        x[col] = orig;
        for row in col.saturating_sub(bw)..(col + bw + 1).min(n) {
            let fd = (rp[row] - rm[row]) / (2.0 * h);
            let an = jac.get(row, col);
            if fd.abs().max(an.abs()) > floor {
                worst = worst.max((fd - an).abs() / fd.abs().max(an.abs()));
            }
        }
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{build_mesh, single_cell_mesh};
    use crate::params::Geometry;
    use crate::transport::total_content;

    fn small_geometry(nr: usize, nz: usize) -> Geometry {
        Geometry {
            nr,
            nz,
            ..Default::default()
        }
    }

    #[test]
    fn config_validation() {
        let mut c = SolverConfig::default();
        c.validate().unwrap();
        c.dt = 0.0;
        assert!(c.validate().is_err());
        c = SolverConfig {
            newton_tol: 1.5,
            ..Default::default()
        };
        assert!(c.validate().is_err());
    }

    #[test]
    fn rest_algebra_balances_every_species() {
        let params = ParameterSet::default();
        for mb in Membrane::ALL {
            let p = membrane_rest_point(mb, &params).unwrap();
            let v_t = params.thermal_voltage();
            let i_max = membrane::pump_strength(mb, &params);
            let i_p = membrane::pump_current(
                p.c_in[0],
                params.bath[1],
                i_max,
                params.pump_k_na,
                params.pump_k_k,
            );
            let gating = GatingState::steady(p.v);
            for s in Species::ALL {
                let g = membrane::conductance(mb, s, &gating, &params);
                let e_rev = v_t / s.valence() * (params.bath[s.index()] / p.c_in[s.index()]).ln();
                let chan = g * (p.v - e_rev); // A/m^2 carried by this species
                let pump = match s {
                    Species::Na => 3.0 * i_p,
                    Species::K => -2.0 * i_p,
                    Species::Cl => 0.0,
                };
                // Species flux balance: channel current + pump current = 0
                // (both expressed as charge flow of this species).
                assert!(
                    (chan * s.valence() + pump * s.valence()).abs() < 1e-10,
                    "{mb:?} {s}: chan {chan}, pump {pump}, v {}",
                    p.v
                );
            }
            // Physiological sanity.
            assert!(p.v < -0.05 && p.v > -0.1, "{mb:?} rest at {} V", p.v);
            assert!(p.c_in[0] > 1.0 && p.c_in[0] < 80.0);
        }
    }

    #[test]
    fn rest_point_exists_for_the_legacy_profile() {
        // The legacy column scales the axon conductances and pump strength
        // by one common factor, so its axon rest point coincides with the
        // current profile's. The glial window is microvolts wide there
        // (the occupancy parameterization must not miss it).
        let new = ParameterSet::default();
        let prev = ParameterSet::with_profile(crate::params::Profile::Previous);
        let ax_new = membrane_rest_point(Membrane::Ax, &new).unwrap();
        let ax_prev = membrane_rest_point(Membrane::Ax, &prev).unwrap();
        assert!(
            (ax_new.v - ax_prev.v).abs() < 1e-5,
            "{} vs {}",
            ax_new.v,
            ax_prev.v
        );
        let gl_prev = membrane_rest_point(Membrane::Gl, &prev).unwrap();
        assert!(gl_prev.v < -0.08 && gl_prev.v > -0.09, "{}", gl_prev.v);
    }

    #[test]
    fn donnan_rest_when_pump_disabled() {
        let mut params = ParameterSet::default();
        params.i_ax1 = 0.0;
        let p = membrane_rest_point(Membrane::Ax, &params).unwrap();
        let v_t = params.thermal_voltage();
        // All Nernst potentials coincide with the membrane potential.
        for s in Species::ALL {
            let e_rev = v_t / s.valence() * (params.bath[s.index()] / p.c_in[s.index()]).ln();
            assert!((e_rev - p.v).abs() < 1e-12, "{s}: {e_rev} vs {}", p.v);
        }
    }

    #[test]
    fn rest_state_is_a_fixed_point() {
        let params = ParameterSet::default();
        let mesh = build_mesh(&small_geometry(2, 4), BoundaryMode::Bath).unwrap();
        let config = SolverConfig::default();
        let (rest, report) = find_rest_state(&mesh, &params, &config).unwrap();
        assert!(report.max_dvdt < REST_DVDT_LIMIT);
        assert!(rest.electroneutrality_max_rel() < 1e-10);

        let mut stepper = Stepper::new(&mesh, &params, config).unwrap();
        let (next, rep) = stepper.step(&rest, 0.0, None).unwrap();
        assert!(rep.converged);
        for cell in 0..mesh.n_cells() {
            for mb in Membrane::ALL {
                assert!(
                    (next.v_m(mb, cell) - rest.v_m(mb, cell)).abs() < 1e-9,
                    "{mb:?} moved"
                );
            }
        }
    }

    #[test]
    fn rest_state_stable_over_a_second() {
        let params = ParameterSet::default();
        let mesh = build_mesh(&small_geometry(2, 4), BoundaryMode::Bath).unwrap();
        let config = SolverConfig {
            dt: 1e-3,
            ..Default::default()
        };
        let (rest, _) = find_rest_state(&mesh, &params, &config).unwrap();
        let mut stepper = Stepper::new(&mesh, &params, config).unwrap();
        let mut state = rest.clone();
        for i in 0..1000 {
            let (next, _) = stepper.step(&state, i as f64 * 1e-3, None).unwrap();
            state = next;
        }
        for cell in 0..mesh.n_cells() {
            let dv = (state.v_m(Membrane::Ax, cell) - rest.v_m(Membrane::Ax, cell)).abs();
            assert!(dv < 1e-4, "axon potential drifted {dv} V in 1 s");
            for s in Species::ALL {
                let a = rest.conc(Compartment::Ex, s, cell);
                let b = state.conc(Compartment::Ex, s, cell);
                assert!((b - a).abs() / a < 1e-3, "{s} drifted");
            }
        }
    }

    #[test]
    fn sealed_mesh_conserves_species_content() {
        let params = ParameterSet::default();
        let mesh = build_mesh(&small_geometry(2, 3), BoundaryMode::Sealed).unwrap();
        let config = SolverConfig {
            dt: 1e-3,
            ..Default::default()
        };
        let (rest, _) = find_rest_state(&mesh, &params, &config).unwrap();
        let mut stepper = Stepper::new(&mesh, &params, config).unwrap();
        let initial: Vec<f64> = Species::ALL
            .iter()
            .map(|s| total_content(&mesh, &params, &rest, *s))
            .collect();
        let mut state = rest;
        let mut last: Vec<f64> = initial.clone();
        for i in 0..200 {
            let (next, _) = stepper.step(&state, i as f64 * 1e-3, None).unwrap();
            state = next;
            for (si, s) in Species::ALL.iter().enumerate() {
                let now = total_content(&mesh, &params, &state, *s);
                assert!(
                    (now - last[si]).abs() / initial[si] < 1e-8,
                    "{s} drifted {:.3e} in one step",
                    (now - last[si]) / initial[si]
                );
                last[si] = now;
            }
        }
        for (si, s) in Species::ALL.iter().enumerate() {
            let now = total_content(&mesh, &params, &state, *s);
            assert!(
                (now - initial[si]).abs() / initial[si] < 1e-6,
                "{s} cumulative drift"
            );
        }
    }

    /// Kicks the one-cell axon potential and returns the fitted decay time
    /// constant of V_ax over roughly 1.2 tau_guess of simulated time.
    fn fitted_rc_time_constant(params: &ParameterSet, tau_guess: f64) -> f64 {
        let mesh = single_cell_mesh(1e-4, 2e-4);
        let config = SolverConfig {
            dt: tau_guess / 400.0,
            newton_tol: 1e-10,
            max_time: 1.0,
            ..Default::default()
        };
        let (rest, _) = find_rest_state(&mesh, params, &config).unwrap();
        let v_rest = rest.v_m(Membrane::Ax, 0);
        let mut state = rest.clone();
        state.set_phi(Compartment::Ax, 0, rest.phi(Compartment::Ax, 0) + 5e-3);
        let mut stepper = Stepper::new(&mesh, params, config).unwrap();
        let mut samples: Vec<(f64, f64)> = Vec::new();
        let n_steps = 480;
        for i in 0..n_steps {
            let t = (i as f64 + 1.0) * config.dt;
            let (next, _) = stepper.step(&state, t, None).unwrap();
            state = next;
            let dv = state.v_m(Membrane::Ax, 0) - v_rest;
            if t > 0.1 * tau_guess {
                samples.push((t, dv.abs().ln()));
            }
        }
        // Least-squares slope of ln|dV| vs t.
        let n = samples.len() as f64;
        let sx: f64 = samples.iter().map(|(t, _)| t).sum();
        let sy: f64 = samples.iter().map(|(_, y)| y).sum();
        let sxx: f64 = samples.iter().map(|(t, _)| t * t).sum();
        let sxy: f64 = samples.iter().map(|(t, y)| t * y).sum();
        let slope = (n * sxy - sx * sy) / (n * sxx - sx * sx);
        -1.0 / slope
    }

    #[test]
    fn one_cell_rc_relaxation_matches_analytic_time_constant() {
        // Passive membranes, pumps off: every species rests at equilibrium,
        // so a small kick decays with exactly tau = C_m / g_total.
        let mut params = ParameterSet::default();
        params.gbar_na = 0.0;
        params.gbar_k = 0.0;
        params.i_ax1 = 0.0;
        params.i_ax2 = 0.0;
        let g_total = params.g_leak_na + params.g_leak_k + params.g_ax_cl;
        let tau = params.c_m / g_total;
        let fitted = fitted_rc_time_constant(&params, tau);
        assert!(
            (fitted - tau).abs() / tau < 0.02,
            "fitted {fitted:.6e} vs analytic {tau:.6e}"
        );
    }

    #[test]
    fn step_is_deterministic() {
        let params = ParameterSet::default();
        let mesh = build_mesh(&small_geometry(2, 3), BoundaryMode::Bath).unwrap();
        let config = SolverConfig::default();
        let (rest, _) = find_rest_state(&mesh, &params, &config).unwrap();
        let run = || {
            let mut stepper = Stepper::new(&mesh, &params, config).unwrap();
            let mut state = rest.clone();
            let mut flux = vec![0.0; mesh.n_cells()];
            for f in flux.iter_mut().take(mesh.nr) {
                *f = -params.i_shock / params.constants.e;
            }
            let stim = StimulusTerm {
                species: Species::K,
                flux,
            };
            for i in 0..50 {
                let t = i as f64 * config.dt;
                let s = if t < 2e-4 { Some(&stim) } else { None };
                let (next, _) = stepper.step(&state, t, s).unwrap();
                state = next;
            }
            state.content_hash()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn failed_step_reports_nonconvergence() {
        let params = ParameterSet::default();
        let mesh = build_mesh(&small_geometry(2, 3), BoundaryMode::Bath).unwrap();
        let config = SolverConfig {
            newton_max_iter: 1,
            newton_tol: 1e-14,
            dt: 5e-3,
            ..Default::default()
        };
        let (rest, _) = find_rest_state(&mesh, &params, &SolverConfig::default()).unwrap();
        let mut stepper = Stepper::new(&mesh, &params, config).unwrap();
        // A violent stimulus with a single Newton iteration cannot converge.
        let stim = StimulusTerm {
            species: Species::K,
            flux: vec![-1e22; mesh.n_cells()],
        };
        let before = rest.content_hash();
        let result = stepper.step(&rest, 0.0, Some(&stim));
        assert!(result.is_err());
        // Transactional: the input state is untouched.
        assert_eq!(rest.content_hash(), before);
    }

    #[test]
    fn jacobian_check_on_random_state() {
        let params = ParameterSet::default();
        let mesh = build_mesh(&small_geometry(4, 4), BoundaryMode::Bath).unwrap();
        let state = jacobian_probe_state(&mesh, 0xfeedfacecafebeef);
        let worst = jacobian_check(&mesh, &params, &state, 1e-5).unwrap();
        assert!(worst < 1e-5, "jacobian discrepancy {worst}");

        // Truncation error of the central difference scales with h^2.
        let big = jacobian_check_with_step(&mesh, &params, &state, 1e-5, 1e-2).unwrap();
        let small = jacobian_check_with_step(&mesh, &params, &state, 1e-5, 1e-3).unwrap();
        assert!(
            big / small > 20.0,
            "expected roughly quadratic scaling, got {big:.3e} / {small:.3e}"
        );

        let too_big = build_mesh(&small_geometry(9, 8), BoundaryMode::Bath).unwrap();
        let err = jacobian_check(&too_big, &params, &state, 1e-5);
        assert!(matches!(err, Err(SolverError::MeshTooLarge { .. })));
    }

    #[test]
    fn dead_system_reports_singular_block() {
        // No conductances, no capacitance, no pumps, no diffusion: the
        // potential columns vanish and factorization must name them.
        let mut params = ParameterSet::default();
        params.g_leak_na = 0.0;
        params.g_leak_k = 0.0;
        params.g_ax_cl = 0.0;
        params.gbar_na = 0.0;
        params.gbar_k = 0.0;
        params.g_gl_na = 0.0;
        params.g_gl_k = 0.0;
        params.i_ax1 = 0.0;
        params.i_ax2 = 0.0;
        params.c_m = 0.0;
        params.diffusivity_free = [0.0; 3];
        let mesh = build_mesh(&small_geometry(2, 2), BoundaryMode::Bath).unwrap();
        let config = SolverConfig::default();
        let mut stepper = Stepper::new(&mesh, &params, config).unwrap();
        let n = mesh.n_cells();
        let state = TridomainState {
            x: {
                let mut x = vec![10.0; n * SLOTS];
                for cell in 0..n {
                    for slot in 9..SLOTS {
                        x[cell * SLOTS + slot] = -0.05;
                    }
                    // Perturb so the residual is nonzero and a solve is needed.
                    x[cell * SLOTS] = 11.0 + cell as f64;
                }
                x
            },
            gating: GatingField::uniform(n, GatingState::steady(-0.07)),
            background: [vec![0.0; n], vec![0.0; n], vec![0.0; n]],
        };
        let err = stepper.step(&state, 0.0, None).unwrap_err();
        match err {
            SolverError::SingularJacobian { block } => {
                assert!(block.contains("phi"), "unexpected block name: {block}")
            }
            other => panic!("expected singular jacobian, got {other}"),
        }
    }
}
