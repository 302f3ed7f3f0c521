//! Semi-discrete tridomain system: electrodiffusive compartment fluxes,
//! the nine ion-conservation residuals, the three current-conservation
//! residuals, and the stimulus source term.
//!
//! Unknowns are packed per cell as
//! `[c_ax(Na,K,Cl), c_gl(Na,K,Cl), c_ex(Na,K,Cl), phi_ax, phi_gl, phi_ex]`.
//! Conservation residuals are molar (mol m^-3 s^-1); the published current
//! residuals are assembled in A/m^3. Membrane fluxes arrive in
//! ions/(m^2 s) and are converted to molar exactly once, here.

use crate::band::BandMatrix;
use crate::membrane::{self, GatingState, Membrane, MembraneError, MembraneFlux, MembraneInputs};
use crate::mesh::{AxisPolicy, FaceTag, FaceValues, Mesh};
use crate::params::{Compartment, ParameterSet, Species, FARADAY, N_AVOGADRO};

/// Unknowns per cell.
pub const SLOTS: usize = 12;

#[inline]
pub fn slot_conc(comp: Compartment, species: Species) -> usize {
    comp.index() * 3 + species.index()
}

#[inline]
pub fn slot_phi(comp: Compartment) -> usize {
    9 + comp.index()
}

/// Hodgkin–Huxley gating variables for every cell's axon membrane patch.
#[derive(Debug, Clone, PartialEq)]
pub struct GatingField {
    pub m: Vec<f64>,
    pub h: Vec<f64>,
    pub n: Vec<f64>,
}

impl GatingField {
    pub fn uniform(n_cells: usize, g: GatingState) -> GatingField {
        GatingField {
            m: vec![g.m; n_cells],
            h: vec![g.h; n_cells],
            n: vec![g.n; n_cells],
        }
    }

    pub fn at(&self, cell: usize) -> GatingState {
        GatingState {
            m: self.m[cell],
            h: self.h[cell],
            n: self.n[cell],
        }
    }

    pub fn set(&mut self, cell: usize, g: GatingState) {
        self.m[cell] = g.m;
        self.h[cell] = g.h;
        self.n[cell] = g.n;
    }
}

/// Full dynamic state: packed concentrations and potentials, gating, and
/// the fixed background charge densities chosen at initialization.
#[derive(Debug, Clone, PartialEq)]
pub struct TridomainState {
    /// Packed unknowns, `n_cells * SLOTS` long.
    pub x: Vec<f64>,
    pub gating: GatingField,
    /// Fixed background charge per compartment per cell (C/m^3).
    pub background: [Vec<f64>; 3],
}

impl TridomainState {
    pub fn n_cells(&self) -> usize {
        self.x.len() / SLOTS
    }

    pub fn conc(&self, comp: Compartment, species: Species, cell: usize) -> f64 {
        self.x[cell * SLOTS + slot_conc(comp, species)]
    }

    pub fn set_conc(&mut self, comp: Compartment, species: Species, cell: usize, v: f64) {
        self.x[cell * SLOTS + slot_conc(comp, species)] = v;
    }

    pub fn phi(&self, comp: Compartment, cell: usize) -> f64 {
        self.x[cell * SLOTS + slot_phi(comp)]
    }

    pub fn set_phi(&mut self, comp: Compartment, cell: usize, v: f64) {
        self.x[cell * SLOTS + slot_phi(comp)] = v;
    }

    /// Membrane potential of one membrane at one cell.
    pub fn v_m(&self, membrane: Membrane, cell: usize) -> f64 {
        self.phi(membrane.inner(), cell) - self.phi(Compartment::Ex, cell)
    }

    /// Gating advanced by the exponential integrator using this state's
    /// axon membrane potentials.
    pub fn advance_gating(&self, dt: f64) -> GatingField {
        let n_cells = self.n_cells();
        let mut out = self.gating.clone();
        for cell in 0..n_cells {
            let v = self.v_m(Membrane::Ax, cell);
            out.set(cell, membrane::gating_step(self.gating.at(cell), v, dt));
        }
        out
    }

    /// Largest per-cell electroneutrality violation, relative to e * sum c.
    pub fn electroneutrality_max_rel(&self) -> f64 {
        let mut worst = 0.0f64;
        for cell in 0..self.n_cells() {
            for comp in Compartment::ALL {
                let mut charge = self.background[comp.index()][cell] / FARADAY;
                let mut total = 0.0;
                for s in Species::ALL {
                    let c = self.conc(comp, s, cell);
                    charge += s.valence() * c;
                    total += c;
                }
                worst = worst.max(charge.abs() / total);
            }
        }
        worst
    }

    /// FNV-1a over the raw state; used for determinism assertions.
    pub fn content_hash(&self) -> u64 {
        let mut h = 0xcbf29ce484222325u64;
        let mut eat = |v: f64| {
            for b in v.to_bits().to_le_bytes() {
                h ^= b as u64;
                h = h.wrapping_mul(0x100000001b3);
            }
        };
        for v in &self.x {
            eat(*v);
        }
        for v in self
            .gating
            .m
            .iter()
            .chain(&self.gating.h)
            .chain(&self.gating.n)
        {
            eat(*v);
        }
        for comp in &self.background {
            for v in comp {
                eat(*v);
            }
        }
        h
    }
}

/// Exogenous stimulus: an extra flux of one species across the axon
/// membrane, per cell (ions/(m^2 s), negative = into the axon).
#[derive(Debug, Clone, PartialEq)]
pub struct StimulusTerm {
    pub species: Species,
    pub flux: Vec<f64>,
}

/// Per-cell membrane flux decompositions for both membranes,
/// `[species][cell]`.
#[derive(Debug, Clone)]
pub struct MembraneFluxField {
    pub ax: [Vec<MembraneFlux>; 3],
    pub gl: [Vec<MembraneFlux>; 3],
}

impl MembraneFluxField {
    pub fn of(&self, membrane: Membrane) -> &[Vec<MembraneFlux>; 3] {
        match membrane {
            Membrane::Ax => &self.ax,
            Membrane::Gl => &self.gl,
        }
    }
}

/// Evaluates both membranes' flux decompositions at the implicit state
/// `state`, with dV/dt discretized against `state_prev`.
pub fn compute_membrane_fluxes(
    params: &ParameterSet,
    state: &TridomainState,
    state_prev: &TridomainState,
    dt: f64,
) -> Result<MembraneFluxField, MembraneError> {
    let n_cells = state.n_cells();
    let empty = || [vec![], vec![], vec![]];
    let mut field = MembraneFluxField {
        ax: empty(),
        gl: empty(),
    };
    for mb in Membrane::ALL {
        for cell in 0..n_cells {
            let v_m = state.v_m(mb, cell);
            let dvdt = (v_m - state_prev.v_m(mb, cell)) / dt;
            let inner = mb.inner();
            let inputs = MembraneInputs {
                v_m,
                dvdt,
                c_in: [
                    state.conc(inner, Species::Na, cell),
                    state.conc(inner, Species::K, cell),
                    state.conc(inner, Species::Cl, cell),
                ],
                c_ex: [
                    state.conc(Compartment::Ex, Species::Na, cell),
                    state.conc(Compartment::Ex, Species::K, cell),
                    state.conc(Compartment::Ex, Species::Cl, cell),
                ],
                gating: state.gating.at(cell),
            };
            for s in Species::ALL {
                let f = membrane::total_membrane_flux(mb, s, &inputs, params)?;
                match mb {
                    Membrane::Ax => field.ax[s.index()].push(f),
                    Membrane::Gl => field.gl[s.index()].push(f),
                }
            }
        }
    }
    Ok(field)
}

/// Electrodiffusive face flux of one species in one compartment
/// (mol m^-2 s^-1, without the volume-fraction weight):
/// j = -D (grad c + (z/V_T) c_up grad phi), with the face concentration
/// upwinded against the drift.
pub fn np_flux(
    mesh: &Mesh,
    params: &ParameterSet,
    state: &TridomainState,
    comp: Compartment,
    species: Species,
) -> FaceValues {
    let mut out = FaceValues::zeros(mesh);
    let d = params.diffusivity(comp, species);
    let v_t = params.thermal_voltage();
    let z = species.valence();
    let policy = AxisPolicy::for_compartment(comp);
    let bath_c = params.bath[species.index()];
    let nr = mesh.nr;
    let nz = mesh.nz;
    let cval = |cell: usize| state.conc(comp, species, cell);
    let pval = |cell: usize| state.phi(comp, cell);

    if policy == AxisPolicy::Full {
        for iz in 0..nz {
            for irf in 0..=nr {
                let idx = iz * (nr + 1) + irf;
                out.r[idx] = match mesh.r_face_tag(comp, irf) {
                    FaceTag::Interior => {
                        let l = mesh.cell_index(irf - 1, iz);
                        let r = mesh.cell_index(irf, iz);
                        face_flux(d, z, v_t, (cval(l), pval(l)), (cval(r), pval(r)), mesh.dr).0
                    }
                    FaceTag::Bath => {
                        let l = mesh.cell_index(nr - 1, iz);
                        face_flux(d, z, v_t, (cval(l), pval(l)), (bath_c, 0.0), 0.5 * mesh.dr).0
                    }
                    FaceTag::Sealed => 0.0,
                };
            }
        }
    }
    for izf in 0..=nz {
        for ir in 0..nr {
            let idx = izf * nr + ir;
            out.z[idx] = match mesh.z_face_tag(comp, izf) {
                FaceTag::Interior => {
                    let l = mesh.cell_index(ir, izf - 1);
                    let r = mesh.cell_index(ir, izf);
                    face_flux(d, z, v_t, (cval(l), pval(l)), (cval(r), pval(r)), mesh.dz).0
                }
                FaceTag::Bath => {
                    if izf == 0 {
                        let r = mesh.cell_index(ir, 0);
                        face_flux(d, z, v_t, (bath_c, 0.0), (cval(r), pval(r)), 0.5 * mesh.dz).0
                    } else {
                        let l = mesh.cell_index(ir, nz - 1);
                        face_flux(d, z, v_t, (cval(l), pval(l)), (bath_c, 0.0), 0.5 * mesh.dz).0
                    }
                }
                FaceTag::Sealed => 0.0,
            };
        }
    }
    out
}

/// Face flux and its four partial derivatives
/// (d/dc_left, d/dc_right, d/dphi_left, d/dphi_right). The sides carry
/// (concentration, potential) pairs.
#[inline]
fn face_flux(
    d: f64,
    z: f64,
    v_t: f64,
    (c_l, phi_l): (f64, f64),
    (c_r, phi_r): (f64, f64),
    h: f64,
) -> (f64, [f64; 4]) {
    let w = -d * z * (phi_r - phi_l) / (v_t * h);
    let (c_up, up_left) = if w >= 0.0 { (c_l, true) } else { (c_r, false) };
    let flux = -d * (c_r - c_l) / h + w * c_up;
    let dw_dphi_l = d * z / (v_t * h);
    let derivs = [
        d / h + if up_left { w } else { 0.0 },
        -d / h + if up_left { 0.0 } else { w },
        c_up * dw_dphi_l,
        -c_up * dw_dphi_l,
    ];
    (flux, derivs)
}

/// Residuals of the published system, with named blocks.
#[derive(Debug, Clone)]
pub struct Residual {
    /// Ion conservation per `[compartment][species]` (mol m^-3 s^-1).
    pub conservation: [[Vec<f64>; 3]; 3],
    /// Current conservation per compartment equation (A/m^3), in the
    /// printed order: glial, axon, extracellular.
    pub current: [Vec<f64>; 3],
}

impl Residual {
    fn zeros(n_cells: usize) -> Residual {
        let block = || [vec![0.0; n_cells], vec![0.0; n_cells], vec![0.0; n_cells]];
        Residual {
            conservation: [block(), block(), block()],
            current: block(),
        }
    }
}

/// Assembles the nine conservation residuals at the implicit time level:
/// eta (c - c_prev)/dt +- M_k J_k + div(eta j).
pub fn conservation_residual(
    mesh: &Mesh,
    params: &ParameterSet,
    state: &TridomainState,
    state_prev: &TridomainState,
    dt: f64,
    fluxes: &MembraneFluxField,
) -> Residual {
    let n_cells = mesh.n_cells();
    let mut res = Residual::zeros(n_cells);
    for comp in Compartment::ALL {
        let eta = params.eta[comp.index()];
        for s in Species::ALL {
            let div = mesh
                .divergence(
                    &np_flux(mesh, params, state, comp, s),
                    AxisPolicy::for_compartment(comp),
                )
                .expect("face arrays sized by the same mesh");
            let block = &mut res.conservation[comp.index()][s.index()];
            for cell in 0..n_cells {
                let dc = state.conc(comp, s, cell) - state_prev.conc(comp, s, cell);
                block[cell] = eta * dc / dt + eta * div[cell];
            }
        }
    }
    // Membrane exchange: source for the cellular compartments, sink for
    // the shared extracellular space.
    for mb in Membrane::ALL {
        let m_density = match mb {
            Membrane::Ax => params.m_ax,
            Membrane::Gl => params.m_gl,
        };
        let inner = mb.inner();
        for s in Species::ALL {
            for cell in 0..n_cells {
                let j_molar = m_density * fluxes.of(mb)[s.index()][cell].total() / N_AVOGADRO;
                res.conservation[inner.index()][s.index()][cell] += j_molar;
                res.conservation[Compartment::Ex.index()][s.index()][cell] -= j_molar;
            }
        }
    }
    res
}

/// Assembles the three current-conservation residuals exactly as printed
/// (A/m^3): the z-weighted membrane and divergence terms of the glial,
/// axon, and combined equations.
pub fn current_residual(
    mesh: &Mesh,
    params: &ParameterSet,
    state: &TridomainState,
    fluxes: &MembraneFluxField,
) -> [Vec<f64>; 3] {
    let n_cells = mesh.n_cells();
    let mut gl = vec![0.0; n_cells];
    let mut ax = vec![0.0; n_cells];
    let mut ex = vec![0.0; n_cells];
    for s in Species::ALL {
        let z = s.valence();
        let div_gl = mesh
            .divergence(
                &np_flux(mesh, params, state, Compartment::Gl, s),
                AxisPolicy::Full,
            )
            .unwrap();
        let div_ax = mesh
            .divergence(
                &np_flux(mesh, params, state, Compartment::Ax, s),
                AxisPolicy::AxialOnly,
            )
            .unwrap();
        let div_ex = mesh
            .divergence(
                &np_flux(mesh, params, state, Compartment::Ex, s),
                AxisPolicy::Full,
            )
            .unwrap();
        let eta_gl = params.eta[Compartment::Gl.index()];
        let eta_ax = params.eta[Compartment::Ax.index()];
        let eta_ex = params.eta[Compartment::Ex.index()];
        for cell in 0..n_cells {
            let m_gl = params.m_gl * fluxes.gl[s.index()][cell].total() / N_AVOGADRO;
            let m_ax = params.m_ax * fluxes.ax[s.index()][cell].total() / N_AVOGADRO;
            gl[cell] += z * (m_gl + eta_gl * div_gl[cell]);
            ax[cell] += z * (m_ax + eta_ax * div_ax[cell]);
            ex[cell] += z * (eta_gl * div_gl[cell] + eta_ax * div_ax[cell] + eta_ex * div_ex[cell]);
        }
    }
    for block in [&mut gl, &mut ax, &mut ex] {
        for v in block.iter_mut() {
            *v *= FARADAY;
        }
    }
    // Printed order: glial equation, axon equation, combined equation.
    [gl, ax, ex]
}

/// Adds the stimulus to an assembled residual: an equivalent transmembrane
/// flux of the carrier species on the stimulated axon cells.
pub fn apply_stimulus(res: &mut Residual, mesh: &Mesh, params: &ParameterSet, term: &StimulusTerm) {
    let s = term.species;
    let z = s.valence();
    for cell in 0..mesh.n_cells() {
        let j = term.flux[cell];
        if j == 0.0 {
            continue;
        }
        let j_molar = params.m_ax * j / N_AVOGADRO;
        res.conservation[Compartment::Ax.index()][s.index()][cell] += j_molar;
        res.conservation[Compartment::Ex.index()][s.index()][cell] -= j_molar;
        // The axon current equation sees the same z-weighted term.
        res.current[1][cell] += z * FARADAY * j_molar;
    }
}

/// Total dissolved content of one species over the tissue (mol).
pub fn total_content(
    mesh: &Mesh,
    params: &ParameterSet,
    state: &TridomainState,
    s: Species,
) -> f64 {
    let mut total = 0.0;
    for comp in Compartment::ALL {
        let eta = params.eta[comp.index()];
        for cell in 0..mesh.n_cells() {
            total += eta * state.conc(comp, s, cell) * mesh.cell_volume(cell);
        }
    }
    total
}

/// Everything the fused solver assembly needs besides the iterate.
pub(crate) struct SystemSpec<'a> {
    pub mesh: &'a Mesh,
    pub params: &'a ParameterSet,
    /// State at the previous time level (packed).
    pub x_prev: &'a [f64],
    /// Gating, already advanced for this step and frozen during the solve.
    pub gating: &'a GatingField,
    pub background: &'a [Vec<f64>; 3],
    pub dt: f64,
    pub stim: Option<&'a StimulusTerm>,
    /// For fully sealed meshes: the cell whose phi_ex is pinned to zero.
    pub gauge_cell: Option<usize>,
}

/// Fused residual/Jacobian assembly of the nonlinear system the solver
/// iterates on: nine conservation rows plus three charge rows per cell
/// (the current equations recombined with the conservation equations so
/// each solve re-anchors per-cell electroneutrality; see the solver docs).
/// All rows are scaled to mol m^-3 s^-1.
pub(crate) fn assemble_system(
    spec: &SystemSpec<'_>,
    x: &[f64],
    res: &mut [f64],
    mut jac: Option<&mut BandMatrix>,
) {
    let mesh = spec.mesh;
    let params = spec.params;
    let dt = spec.dt;
    let n_cells = mesh.n_cells();
    debug_assert_eq!(x.len(), n_cells * SLOTS);
    debug_assert_eq!(res.len(), n_cells * SLOTS);
    res.fill(0.0);
    if let Some(j) = jac.as_deref_mut() {
        j.clear();
    }
    let v_t = params.thermal_voltage();
    let e = params.constants.e;

    // Time terms and charge rows.
    for cell in 0..n_cells {
        let base = cell * SLOTS;
        for comp in Compartment::ALL {
            let eta = params.eta[comp.index()];
            let scale = eta / dt;
            let charge_row = base + slot_phi(comp);
            let mut charge = spec.background[comp.index()][cell] / FARADAY;
            for s in Species::ALL {
                let slot = base + slot_conc(comp, s);
                res[slot] += scale * (x[slot] - spec.x_prev[slot]);
                charge += s.valence() * x[slot];
                if let Some(j) = jac.as_deref_mut() {
                    j.add(slot, slot, scale);
                    j.add(charge_row, slot, scale * s.valence());
                }
            }
            res[charge_row] = scale * charge;
        }
    }

    // Membrane exchange terms.
    for cell in 0..n_cells {
        let base = cell * SLOTS;
        let phi_ex_col = base + slot_phi(Compartment::Ex);
        let c_ex_na = x[base + slot_conc(Compartment::Ex, Species::Na)];
        let c_ex_k = x[base + slot_conc(Compartment::Ex, Species::K)];
        let c_ex_cl = x[base + slot_conc(Compartment::Ex, Species::Cl)];
        let c_ex = [c_ex_na, c_ex_k, c_ex_cl];
        let gating = spec.gating.at(cell);
        for mb in Membrane::ALL {
            let inner = mb.inner();
            let m_density = match mb {
                Membrane::Ax => params.m_ax,
                Membrane::Gl => params.m_gl,
            };
            if m_density == 0.0 {
                continue;
            }
            let phi_in_col = base + slot_phi(inner);
            let v = x[phi_in_col] - x[phi_ex_col];
            let v_prev = spec.x_prev[phi_in_col] - spec.x_prev[phi_ex_col];
            let dvdt = (v - v_prev) / dt;
            let c_na_in = x[base + slot_conc(inner, Species::Na)];
            let i_max = membrane::pump_strength(mb, params);
            let i_p =
                membrane::pump_current(c_na_in, c_ex_k, i_max, params.pump_k_na, params.pump_k_k);
            let dip_dna = membrane::pump_current_dna(
                c_na_in,
                c_ex_k,
                i_max,
                params.pump_k_na,
                params.pump_k_k,
            );
            let dip_dkex = membrane::pump_current_dk(
                c_na_in,
                c_ex_k,
                i_max,
                params.pump_k_na,
                params.pump_k_k,
            );
            for s in Species::ALL {
                let si = s.index();
                let z = s.valence();
                let c_in = x[base + slot_conc(inner, s)];
                let g = membrane::conductance(mb, s, &gating, params);
                let e_rev = v_t / z * (c_ex[si] / c_in).ln();
                let pump_coeff = match s {
                    Species::Na => 3.0,
                    Species::K => -2.0,
                    Species::Cl => 0.0,
                };
                let lam_c = params.lambda[si] * params.c_m / (z * e);
                let mut flux = pump_coeff * i_p / e + g / (z * e) * (v - e_rev) + lam_c * dvdt;
                if mb == Membrane::Ax {
                    if let Some(stim) = spec.stim {
                        if stim.species == s {
                            flux += stim.flux[cell];
                        }
                    }
                }
                let conv = m_density / N_AVOGADRO;
                let row_in = base + slot_conc(inner, s);
                let row_ex = base + slot_conc(Compartment::Ex, s);
                res[row_in] += conv * flux;
                res[row_ex] -= conv * flux;
                if let Some(j) = jac.as_deref_mut() {
                    let dflux_dphi = g / (z * e) + lam_c / dt;
                    let dflux_dcin = g / (z * e) * v_t / (z * c_in);
                    let dflux_dcex = -g / (z * e) * v_t / (z * c_ex[si]);
                    let dflux_dna = pump_coeff * dip_dna / e;
                    let dflux_dkex = pump_coeff * dip_dkex / e;
                    let col_cin = base + slot_conc(inner, s);
                    let col_cex = base + slot_conc(Compartment::Ex, s);
                    let col_na = base + slot_conc(inner, Species::Na);
                    let col_kex = base + slot_conc(Compartment::Ex, Species::K);
                    for (row, sign) in [(row_in, 1.0), (row_ex, -1.0)] {
                        let c = sign * conv;
                        j.add(row, phi_in_col, c * dflux_dphi);
                        j.add(row, phi_ex_col, -c * dflux_dphi);
                        j.add(row, col_cin, c * dflux_dcin);
                        j.add(row, col_cex, c * dflux_dcex);
                        if dflux_dna != 0.0 {
                            j.add(row, col_na, c * dflux_dna);
                        }
                        if dflux_dkex != 0.0 {
                            j.add(row, col_kex, c * dflux_dkex);
                        }
                    }
                }
            }
        }
    }

    // Electrodiffusive transport, face by face.
    let nr = mesh.nr;
    let nz = mesh.nz;
    for comp in Compartment::ALL {
        let eta = params.eta[comp.index()];
        let policy = AxisPolicy::for_compartment(comp);
        let phi_slot = slot_phi(comp);
        for s in Species::ALL {
            let d_eff = eta * params.diffusivity(comp, s);
            let z = s.valence();
            let c_slot = slot_conc(comp, s);
            let bath_c = params.bath[s.index()];

            let scatter = |cells: [Option<usize>; 2],
                           vals: [(f64, f64); 2],
                           h: f64,
                           area: f64,
                           res: &mut [f64],
                           jac: &mut Option<&mut BandMatrix>| {
                let (flux, derivs) = face_flux(d_eff, z, v_t, vals[0], vals[1], h);
                for (side, cell) in cells.iter().enumerate() {
                    let Some(cell) = cell else { continue };
                    let sign = if side == 0 { 1.0 } else { -1.0 };
                    let w = sign * area / mesh.cell_volume(*cell);
                    let row = cell * SLOTS + c_slot;
                    res[row] += w * flux;
                    if let Some(j) = jac.as_deref_mut() {
                        for (k, other) in cells.iter().enumerate() {
                            let Some(other) = other else { continue };
                            j.add(row, other * SLOTS + c_slot, w * derivs[k]);
                            j.add(row, other * SLOTS + phi_slot, w * derivs[2 + k]);
                        }
                    }
                }
            };

            if policy == AxisPolicy::Full {
                for iz in 0..nz {
                    for irf in 0..=nr {
                        let tag = mesh.r_face_tag(comp, irf);
                        if tag == FaceTag::Sealed {
                            continue;
                        }
                        let area = mesh.r_face_area(irf);
                        match tag {
                            FaceTag::Interior => {
                                let l = mesh.cell_index(irf - 1, iz);
                                let r = mesh.cell_index(irf, iz);
                                scatter(
                                    [Some(l), Some(r)],
                                    [
                                        (x[l * SLOTS + c_slot], x[l * SLOTS + phi_slot]),
                                        (x[r * SLOTS + c_slot], x[r * SLOTS + phi_slot]),
                                    ],
                                    mesh.dr,
                                    area,
                                    res,
                                    &mut jac,
                                );
                            }
                            FaceTag::Bath => {
                                let l = mesh.cell_index(nr - 1, iz);
                                scatter(
                                    [Some(l), None],
                                    [
                                        (x[l * SLOTS + c_slot], x[l * SLOTS + phi_slot]),
                                        (bath_c, 0.0),
                                    ],
                                    0.5 * mesh.dr,
                                    area,
                                    res,
                                    &mut jac,
                                );
                            }
                            FaceTag::Sealed => unreachable!(),
                        }
                    }
                }
            }
            for izf in 0..=nz {
                let tag = mesh.z_face_tag(comp, izf);
                if tag == FaceTag::Sealed {
                    continue;
                }
                for ir in 0..nr {
                    let area = mesh.z_face_area(ir);
                    match tag {
                        FaceTag::Interior => {
                            let l = mesh.cell_index(ir, izf - 1);
                            let r = mesh.cell_index(ir, izf);
                            scatter(
                                [Some(l), Some(r)],
                                [
                                    (x[l * SLOTS + c_slot], x[l * SLOTS + phi_slot]),
                                    (x[r * SLOTS + c_slot], x[r * SLOTS + phi_slot]),
                                ],
                                mesh.dz,
                                area,
                                res,
                                &mut jac,
                            );
                        }
                        FaceTag::Bath => {
                            if izf == 0 {
                                let r = mesh.cell_index(ir, 0);
                                scatter(
                                    [None, Some(r)],
                                    [
                                        (bath_c, 0.0),
                                        (x[r * SLOTS + c_slot], x[r * SLOTS + phi_slot]),
                                    ],
                                    0.5 * mesh.dz,
                                    area,
                                    res,
                                    &mut jac,
                                );
                            } else {
                                let l = mesh.cell_index(ir, nz - 1);
                                scatter(
                                    [Some(l), None],
                                    [
                                        (x[l * SLOTS + c_slot], x[l * SLOTS + phi_slot]),
                                        (bath_c, 0.0),
                                    ],
                                    0.5 * mesh.dz,
                                    area,
                                    res,
                                    &mut jac,
                                );
                            }
                        }
                        FaceTag::Sealed => unreachable!(),
                    }
                }
            }
        }
    }

    // Potential gauge on fully sealed meshes.
    if let Some(cell) = spec.gauge_cell {
        let row = cell * SLOTS + slot_phi(Compartment::Ex);
        let scale = params.eta[Compartment::Ex.index()] / dt;
        res[row] = scale * x[row];
        if let Some(j) = jac {
            // Wipe the charge row's entries and pin phi_ex instead.
            for s in Species::ALL {
                j.add(
                    row,
                    cell * SLOTS + slot_conc(Compartment::Ex, s),
                    -scale * s.valence(),
                );
            }
            j.add(row, row, scale);
        }
    }
}
