//! Experiment protocols: rest stability, single action potential, pulse
//! trains, and the with/without-capacitance comparison, plus CSV and SVG
//! trace output.

use std::io::Write;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::mesh::{build_mesh, BoundaryMode, Mesh};
use crate::params::{Compartment, ParameterSet, Species};
use crate::solver::{find_rest_state, RestReport, SolverConfig, SolverError, Stepper};
use crate::transport::{StimulusTerm, TridomainState};

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("invalid scenario: {0}")]
    Invalid(String),
    #[error("solver failed at t = {t:.6e} s: {source}")]
    Solver { t: f64, source: SolverError },
    #[error(transparent)]
    Init(#[from] SolverError),
    #[error("output: {0}")]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Mesh(#[from] crate::mesh::MeshError),
}

/// What the simulation does after reaching rest.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Mode {
    Rest,
    #[default]
    SingleAp,
    Train,
    Comparison,
}

impl Mode {
    pub fn label(self) -> &'static str {
        match self {
            Mode::Rest => "rest",
            Mode::SingleAp => "single_ap",
            Mode::Train => "train",
            Mode::Comparison => "comparison",
        }
    }

    fn pulses(self, configured: usize) -> usize {
        match self {
            Mode::Rest => 0,
            Mode::SingleAp | Mode::Comparison => 1,
            Mode::Train => configured.max(1),
        }
    }
}

/// Current injection at one end of the axon bundle.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StimulusProtocol {
    /// Start of the first pulse (s).
    pub onset: f64,
    /// Pulse width (s).
    pub duration: f64,
    /// Pulse spacing for trains (s).
    pub period: f64,
    /// Pulse count for trains.
    pub count: usize,
    /// Fraction of the nerve length (from z = 0) that is stimulated.
    pub z_fraction: f64,
}

impl Default for StimulusProtocol {
    fn default() -> Self {
        // Supramaximal trunk shock: the whole bundle fires a synchronous
        // compound action potential. End-segment stimulation with a
        // propagating wave is available through `z_fraction`.
        StimulusProtocol {
            onset: 5e-3,
            duration: 3e-3,
            period: 50e-3,
            count: 10,
            z_fraction: 1.0,
        }
    }
}

impl StimulusProtocol {
    /// Whether the stimulus is on at time t, with the first `pulses`
    /// pulses of the train enabled.
    pub fn active(&self, t: f64, pulses: usize) -> bool {
        (0..pulses).any(|k| {
            let start = self.onset + k as f64 * self.period;
            t >= start && t < start + self.duration
        })
    }
}

/// Where results land.
#[derive(Debug, Clone, PartialEq)]
pub struct OutputPlan {
    pub dir: PathBuf,
    /// Trace sampling interval (s); must be at least the solver dt.
    pub cadence: f64,
    pub csv: bool,
    pub svg: bool,
}

impl Default for OutputPlan {
    fn default() -> Self {
        OutputPlan {
            dir: PathBuf::from("out"),
            cadence: 1e-4,
            csv: true,
            svg: true,
        }
    }
}

/// A full experiment description.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioConfig {
    pub mode: Mode,
    pub stimulus: StimulusProtocol,
    /// Sample points (r, z); empty means the default mid-nerve probe.
    pub probes: Vec<(f64, f64)>,
    pub output: OutputPlan,
    pub solver: SolverConfig,
    /// Model switch: false runs the purely conductive membrane
    /// (all capacitive partitions zero) outside comparison mode.
    pub capacitive: bool,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        ScenarioConfig {
            mode: Mode::default(),
            stimulus: StimulusProtocol::default(),
            probes: Vec::new(),
            output: OutputPlan::default(),
            solver: SolverConfig::default(),
            capacitive: true,
        }
    }
}

impl ScenarioConfig {
    pub fn validate(&self, params: &ParameterSet) -> Result<(), crate::params::ParamError> {
        use crate::params::ParamError;
        let bad = |key: &str, msg: String| ParamError::Invalid {
            key: key.into(),
            msg,
        };
        for (r, z) in &self.probes {
            if !(*r >= 0.0
                && *r <= params.geometry.radius
                && *z >= 0.0
                && *z <= params.geometry.length)
            {
                return Err(bad("probe", format!("({r}, {z}) lies outside the domain")));
            }
        }
        if self.output.cadence < self.solver.dt {
            return Err(bad(
                "cadence",
                format!(
                    "must be at least the solver dt ({} < {})",
                    self.output.cadence, self.solver.dt
                ),
            ));
        }
        if !(self.stimulus.z_fraction > 0.0 && self.stimulus.z_fraction <= 1.0) {
            return Err(bad("stim_z_fraction", "must lie in (0, 1]".to_string()));
        }
        if self.stimulus.onset < 0.0 || self.stimulus.duration < 0.0 || self.stimulus.period < 0.0 {
            return Err(bad("onset", "stimulus times must be non-negative".into()));
        }
        if let Err(e) = self.solver.validate() {
            return Err(bad("solver", e.to_string()));
        }
        Ok(())
    }
}

/// Builds the per-cell stimulus flux at time t, if a pulse is on.
/// The injected current is carried across the axon membrane by the
/// configured species, signed to depolarize.
pub fn stimulus_term(
    mesh: &Mesh,
    params: &ParameterSet,
    protocol: &StimulusProtocol,
    t: f64,
    pulses: usize,
) -> Option<StimulusTerm> {
    if pulses == 0 || params.i_shock == 0.0 || !protocol.active(t, pulses) {
        return None;
    }
    let carrier = params.stim_carrier;
    // Inward (depolarizing) current: negative flux = ions entering the axon
    // for a cation carrier.
    let j = -params.i_shock / (carrier.valence() * params.constants.e);
    let stim_slabs = ((mesh.nz as f64 * protocol.z_fraction).ceil() as usize).max(1);
    let mut flux = vec![0.0; mesh.n_cells()];
    for iz in 0..stim_slabs.min(mesh.nz) {
        for ir in 0..mesh.nr {
            flux[mesh.cell_index(ir, iz)] = j;
        }
    }
    Some(StimulusTerm {
        species: carrier,
        flux,
    })
}

/// One probe's recorded columns.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbeTrace {
    pub r: f64,
    pub z: f64,
    pub cell: usize,
    /// Axon membrane potential phi_ax - phi_ex (V).
    pub v_ax: Vec<f64>,
    /// Glial membrane potential phi_gl - phi_ex (V).
    pub v_gl: Vec<f64>,
    /// Extracellular potassium (mol/m^3 = mM).
    pub ck_ex: Vec<f64>,
}

/// Time series at every probe; rows are accepted solver steps.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceSet {
    pub time: Vec<f64>,
    pub probes: Vec<ProbeTrace>,
}

impl TraceSet {
    fn new(mesh: &Mesh, probes: &[(f64, f64)]) -> TraceSet {
        TraceSet {
            time: Vec::new(),
            probes: probes
                .iter()
                .map(|(r, z)| ProbeTrace {
                    r: *r,
                    z: *z,
                    cell: mesh.locate(*r, *z),
                    v_ax: Vec::new(),
                    v_gl: Vec::new(),
                    ck_ex: Vec::new(),
                })
                .collect(),
        }
    }

    fn record(&mut self, t: f64, state: &TridomainState) {
        self.time.push(t);
        for p in self.probes.iter_mut() {
            let ex = state.phi(Compartment::Ex, p.cell);
            p.v_ax.push(state.phi(Compartment::Ax, p.cell) - ex);
            p.v_gl.push(state.phi(Compartment::Gl, p.cell) - ex);
            p.ck_ex
                .push(state.conc(Compartment::Ex, Species::K, p.cell));
        }
    }
}

/// One simulated branch.
#[derive(Debug, Clone)]
pub struct ScenarioRun {
    pub label: &'static str,
    pub traces: TraceSet,
    pub final_state: TridomainState,
    pub initial_hash: u64,
    pub steps: usize,
    pub dt_rejections: usize,
}

/// Result of [`run_scenario`]: one run, or the capacitive/conductive pair.
#[derive(Debug)]
pub struct ScenarioResult {
    pub rest: RestReport,
    pub runs: Vec<ScenarioRun>,
}

/// Executes the configured scenario: rest-state initialization, stimulus
/// protocol, probe recording. Comparison mode runs the capacitive and the
/// purely conductive membrane from the same rest state, concurrently.
pub fn run_scenario(
    params: &ParameterSet,
    scenario: &ScenarioConfig,
) -> Result<ScenarioResult, ScenarioError> {
    scenario
        .validate(params)
        .map_err(|e| ScenarioError::Invalid(e.to_string()))?;
    let mesh = build_mesh(&params.geometry, BoundaryMode::Bath)?;
    let probes: Vec<(f64, f64)> = if scenario.probes.is_empty() {
        vec![(params.geometry.radius * 0.5, params.geometry.length * 0.5)]
    } else {
        scenario.probes.clone()
    };
    let (rest, rest_report) = find_rest_state(&mesh, params, &scenario.solver)?;
    let pulses = scenario.mode.pulses(scenario.stimulus.count);

    let branches: Vec<(&'static str, ParameterSet)> = match scenario.mode {
        Mode::Comparison => vec![
            ("capacitive", params.clone()),
            ("conductive", conductive_variant(params)),
        ],
        _ if !scenario.capacitive => vec![("conductive", conductive_variant(params))],
        _ => vec![("run", params.clone())],
    };

    let mut runs: Vec<ScenarioRun> = Vec::new();
    if branches.len() == 1 {
        let (label, p) = &branches[0];
        runs.push(run_branch(
            label, &mesh, p, scenario, &probes, &rest, pulses,
        )?);
    } else {
        // The branches are independent; run them on separate threads.
        let results: Vec<Result<ScenarioRun, ScenarioError>> = std::thread::scope(|scope| {
            let handles: Vec<_> = branches
                .iter()
                .map(|(label, p)| {
                    let mesh = &mesh;
                    let probes = &probes;
                    let rest = &rest;
                    scope.spawn(move || run_branch(label, mesh, p, scenario, probes, rest, pulses))
                })
                .collect();
            handles.into_iter().map(|h| h.join().unwrap()).collect()
        });
        for r in results {
            runs.push(r?);
        }
        // Both branches must have started from the same rest state.
        assert_eq!(
            runs[0].initial_hash, runs[1].initial_hash,
            "comparison branches diverged before t = 0"
        );
    }
    Ok(ScenarioResult {
        rest: rest_report,
        runs,
    })
}

/// The purely conductive membrane: every capacitive partition zero.
/// This bypasses the config-level partition sum invariant on purpose;
/// it is the reference model the capacitive condition is compared against.
fn conductive_variant(params: &ParameterSet) -> ParameterSet {
    let mut p = params.clone();
    p.lambda = [0.0; 3];
    p
}

fn run_branch(
    label: &'static str,
    mesh: &Mesh,
    params: &ParameterSet,
    scenario: &ScenarioConfig,
    probes: &[(f64, f64)],
    rest: &TridomainState,
    pulses: usize,
) -> Result<ScenarioRun, ScenarioError> {
    let dt = scenario.solver.dt;
    let n_steps = (scenario.solver.max_time / dt).round() as usize;
    let cadence_every = ((scenario.output.cadence / dt).round() as usize).max(1);
    let mut stepper = Stepper::new(mesh, params, scenario.solver)?;
    let mut traces = TraceSet::new(mesh, probes);
    let mut state = rest.clone();
    let initial_hash = state.content_hash();
    let mut dt_rejections = 0usize;
    traces.record(0.0, &state);
    for i in 0..n_steps {
        let t = i as f64 * dt;
        let stim = stimulus_term(mesh, params, &scenario.stimulus, t + 0.5 * dt, pulses);
        let (next, report) = stepper
            .step(&state, t, stim.as_ref())
            .map_err(|source| ScenarioError::Solver { t, source })?;
        state = next;
        if report.dt_rejected {
            dt_rejections += 1;
        }
        if (i + 1) % cadence_every == 0 {
            traces.record((i + 1) as f64 * dt, &state);
        }
    }
    Ok(ScenarioRun {
        label,
        traces,
        final_state: state,
        initial_hash,
        steps: n_steps,
        dt_rejections,
    })
}

/// Writes an RFC 4180 CSV with full double precision and LF line endings.
/// Header: `t_s,V_ax_V@p0,V_gl_V@p0,cK_ex_mM@p0,...` per probe.
pub fn emit_csv(traces: &TraceSet, path: &Path) -> Result<(), ScenarioError> {
    let mut out = Vec::new();
    write!(out, "t_s")?;
    for (i, _) in traces.probes.iter().enumerate() {
        write!(out, ",V_ax_V@p{i},V_gl_V@p{i},cK_ex_mM@p{i}")?;
    }
    out.push(b'\n');
    for (row, t) in traces.time.iter().enumerate() {
        write!(out, "{t:.16e}")?;
        for p in &traces.probes {
            write!(
                out,
                ",{:.16e},{:.16e},{:.16e}",
                p.v_ax[row], p.v_gl[row], p.ck_ex[row]
            )?;
        }
        out.push(b'\n');
    }
    std::fs::write(path, out)?;
    Ok(())
}

const PLOT_COLORS: [&str; 2] = ["#1f77b4", "#d62728"];

/// Renders the three stacked panels of the stimulation figure (glial
/// potential, extracellular potassium, axon potential vs time) as a
/// standalone SVG, overlaying runs when more than one is given. Output is
/// byte-deterministic for identical traces.
pub fn emit_plot(runs: &[(&str, &TraceSet)], path: &Path) -> Result<(), ScenarioError> {
    if runs.is_empty() || runs.iter().any(|(_, t)| t.time.len() < 2) {
        return Err(ScenarioError::Invalid(
            "plotting needs at least two time samples".into(),
        ));
    }
    let width = 900.0;
    let panel_h = 210.0;
    let margin_l = 80.0;
    let margin_r = 30.0;
    let margin_top = 30.0;
    let gap = 50.0;
    let height = margin_top + 3.0 * panel_h + 3.0 * gap;

    let t_ms = |t: f64| t * 1e3;
    let t_max = runs
        .iter()
        .map(|(_, tr)| *tr.time.last().unwrap())
        .fold(0.0f64, f64::max);
    let (t_lo, t_hi) = (0.0, t_ms(t_max));

    // Panel extractors: (label, scale to display units, accessor).
    type Extract = fn(&ProbeTrace) -> &Vec<f64>;
    let panels: [(&str, f64, Extract); 3] = [
        ("V_gl (mV)", 1e3, |p: &ProbeTrace| &p.v_gl),
        ("cK_ex (mM)", 1.0, |p: &ProbeTrace| &p.ck_ex),
        ("V_ax (mV)", 1e3, |p: &ProbeTrace| &p.v_ax),
    ];

    let mut svg = String::new();
    svg.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{width}\" height=\"{height}\" \
         viewBox=\"0 0 {width} {height}\" font-family=\"sans-serif\" font-size=\"12\">\n"
    ));
    svg.push_str("<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n");

    for (pi, (ylabel, scale, extract)) in panels.iter().enumerate() {
        let top = margin_top + pi as f64 * (panel_h + gap);
        let bottom = top + panel_h;
        let left = margin_l;
        let right = width - margin_r;
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for (_, tr) in runs {
            for v in extract(&tr.probes[0]) {
                lo = lo.min(v * scale);
                hi = hi.max(v * scale);
            }
        }
        if hi - lo < 1e-12 {
            lo -= 0.5;
            hi += 0.5;
        }
        let pad = 0.05 * (hi - lo);
        let (lo, hi) = (lo - pad, hi + pad);
        let x_of = |t: f64| left + (t - t_lo) / (t_hi - t_lo) * (right - left);
        let y_of = |v: f64| bottom - (v - lo) / (hi - lo) * panel_h;

        svg.push_str(&format!(
            "<rect x=\"{left:.3}\" y=\"{top:.3}\" width=\"{:.3}\" height=\"{panel_h:.3}\" \
             fill=\"none\" stroke=\"black\"/>\n",
            right - left
        ));
        for tick in nice_ticks(lo, hi) {
            let y = y_of(tick);
            svg.push_str(&format!(
                "<line x1=\"{left:.3}\" y1=\"{y:.3}\" x2=\"{:.3}\" y2=\"{y:.3}\" \
                 stroke=\"#dddddd\"/>\n<text x=\"{:.3}\" y=\"{:.3}\" \
                 text-anchor=\"end\">{tick}</text>\n",
                right,
                left - 6.0,
                y + 4.0
            ));
        }
        for tick in nice_ticks(t_lo, t_hi) {
            let x = x_of(tick);
            svg.push_str(&format!(
                "<line x1=\"{x:.3}\" y1=\"{top:.3}\" x2=\"{x:.3}\" y2=\"{bottom:.3}\" \
                 stroke=\"#eeeeee\"/>\n<text x=\"{x:.3}\" y=\"{:.3}\" \
                 text-anchor=\"middle\">{tick}</text>\n",
                bottom + 16.0
            ));
        }
        svg.push_str(&format!(
            "<text x=\"{:.3}\" y=\"{:.3}\" text-anchor=\"middle\" \
             transform=\"rotate(-90 {:.3} {:.3})\">{ylabel}</text>\n",
            left - 50.0,
            (top + bottom) / 2.0,
            left - 50.0,
            (top + bottom) / 2.0
        ));
        for (ri, (_, tr)) in runs.iter().enumerate() {
            let color = PLOT_COLORS[ri % PLOT_COLORS.len()];
            let series = extract(&tr.probes[0]);
            let mut d = String::new();
            for (k, (t, v)) in tr.time.iter().zip(series).enumerate() {
                let cmd = if k == 0 { 'M' } else { 'L' };
                d.push_str(&format!(
                    "{cmd}{:.3} {:.3} ",
                    x_of(t_ms(*t)),
                    y_of(v * scale)
                ));
            }
            svg.push_str(&format!(
                "<path d=\"{}\" fill=\"none\" stroke=\"{color}\" stroke-width=\"1.5\"/>\n",
                d.trim_end()
            ));
        }
        if pi == 2 {
            svg.push_str(&format!(
                "<text x=\"{:.3}\" y=\"{:.3}\" text-anchor=\"middle\">t (ms)</text>\n",
                (left + right) / 2.0,
                bottom + 36.0
            ));
        }
    }
    if runs.len() > 1 {
        for (ri, (label, _)) in runs.iter().enumerate() {
            let color = PLOT_COLORS[ri % PLOT_COLORS.len()];
            let y = margin_top + 14.0 + 16.0 * ri as f64;
            svg.push_str(&format!(
                "<line x1=\"{:.3}\" y1=\"{y:.3}\" x2=\"{:.3}\" y2=\"{y:.3}\" \
                 stroke=\"{color}\" stroke-width=\"2\"/>\n<text x=\"{:.3}\" \
                 y=\"{:.3}\">{label}</text>\n",
                width - 180.0,
                width - 150.0,
                width - 144.0,
                y + 4.0
            ));
        }
    }
    svg.push_str("</svg>\n");
    std::fs::write(path, svg)?;
    Ok(())
}

/// At most six round tick positions covering [lo, hi].
fn nice_ticks(lo: f64, hi: f64) -> Vec<f64> {
    let span = hi - lo;
    if !(span > 0.0) {
        return vec![lo];
    }
    let raw = span / 5.0;
    let mag = 10f64.powf(raw.log10().floor());
    let step = [1.0, 2.0, 5.0, 10.0]
        .iter()
        .map(|m| m * mag)
        .find(|s| span / s <= 6.0)
        .unwrap_or(10.0 * mag);
    let first = (lo / step).ceil() * step;
    let mut ticks = Vec::new();
    let mut t = first;
    while t <= hi + 1e-9 * span {
        // Snap near-zero ticks to exactly zero for stable labels.
        ticks.push(if t.abs() < 1e-9 * span { 0.0 } else { t });
        t += step;
    }
    ticks
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::Geometry;

    #[test]
    fn protocol_windows() {
        let p = StimulusProtocol {
            onset: 1e-3,
            duration: 2e-3,
            period: 10e-3,
            count: 3,
            z_fraction: 0.1,
        };
        assert!(!p.active(0.5e-3, 3));
        assert!(p.active(1.5e-3, 3));
        assert!(!p.active(4e-3, 3));
        assert!(p.active(11.5e-3, 3));
        assert!(!p.active(11.5e-3, 1));
        assert!(p.active(21.5e-3, 3));
        assert!(!p.active(31.5e-3, 3));
    }

    #[test]
    fn stimulus_term_geometry_and_charge() {
        let params = ParameterSet::default();
        let mesh = build_mesh(
            &Geometry {
                nr: 2,
                nz: 10,
                ..Default::default()
            },
            BoundaryMode::Bath,
        )
        .unwrap();
        let protocol = StimulusProtocol {
            duration: 1e-3,
            z_fraction: 0.1,
            ..Default::default()
        };
        let term = stimulus_term(&mesh, &params, &protocol, 5.5e-3, 1).unwrap();
        // One slab stimulated per 0.1 fraction of 10 slabs.
        let stim_cells: Vec<usize> = (0..mesh.n_cells())
            .filter(|c| term.flux[*c] != 0.0)
            .collect();
        assert_eq!(stim_cells, vec![0, 1]);
        // Quadrature over the window reproduces I_shock * area * duration.
        let dt = 1e-5;
        let mut charge = 0.0;
        let mut t = 0.0;
        while t < 0.02 {
            if let Some(term) = stimulus_term(&mesh, &params, &protocol, t + 0.5 * dt, 1) {
                for cell in 0..mesh.n_cells() {
                    let j = term.flux[cell];
                    if j != 0.0 {
                        let area = params.m_ax * mesh.cell_volume(cell);
                        charge += j.abs() * params.constants.e * area * dt;
                    }
                }
            }
            t += dt;
        }
        let area: f64 = stim_cells
            .iter()
            .map(|c| params.m_ax * mesh.cell_volume(*c))
            .sum();
        let expected = params.i_shock * area * protocol.duration;
        assert!(
            (charge - expected).abs() < 1e-9 * expected,
            "{charge} vs {expected}"
        );
        // Outside every window: no term.
        assert!(stimulus_term(&mesh, &params, &protocol, 20e-3, 1).is_none());
    }

    #[test]
    fn csv_roundtrip_bit_exact() {
        let traces = TraceSet {
            time: vec![0.0, 1e-5, 2e-5],
            probes: vec![ProbeTrace {
                r: 1e-5,
                z: 1e-3,
                cell: 0,
                v_ax: vec![-0.07012345678901234, -0.06923456789012345, 0.031],
                v_gl: vec![-0.08512345678901234, -0.08423456789012345, -0.084],
                ck_ex: vec![3.0000000000000004, 3.1234567890123456, 3.2],
            }],
        };
        let dir = std::env::temp_dir().join("tridomain_csv_test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("t.csv");
        emit_csv(&traces, &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), "t_s,V_ax_V@p0,V_gl_V@p0,cK_ex_mM@p0");
        for (row, line) in lines.enumerate() {
            let cols: Vec<f64> = line.split(',').map(|v| v.parse().unwrap()).collect();
            assert_eq!(cols[0], traces.time[row]);
            assert_eq!(cols[1], traces.probes[0].v_ax[row]);
            assert_eq!(cols[2], traces.probes[0].v_gl[row]);
            assert_eq!(cols[3], traces.probes[0].ck_ex[row]);
        }
        assert!(!text.contains('\r'));
        std::fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn csv_header_only_for_empty_traces() {
        let traces = TraceSet {
            time: vec![],
            probes: vec![ProbeTrace {
                r: 0.0,
                z: 0.0,
                cell: 0,
                v_ax: vec![],
                v_gl: vec![],
                ck_ex: vec![],
            }],
        };
        let dir = std::env::temp_dir().join("tridomain_csv_empty");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("e.csv");
        emit_csv(&traces, &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text, "t_s,V_ax_V@p0,V_gl_V@p0,cK_ex_mM@p0\n");
        std::fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn plot_is_deterministic_and_labels_comparison() {
        let mk = |offset: f64| TraceSet {
            time: (0..50).map(|i| i as f64 * 1e-4).collect(),
            probes: vec![ProbeTrace {
                r: 0.0,
                z: 0.0,
                cell: 0,
                v_ax: (0..50)
                    .map(|i| -0.07 + offset + 1e-3 * (i as f64))
                    .collect(),
                v_gl: (0..50).map(|i| -0.085 + 2e-5 * (i as f64)).collect(),
                ck_ex: (0..50).map(|i| 3.0 + 1e-3 * (i as f64)).collect(),
            }],
        };
        let a = mk(0.0);
        let b = mk(1e-3);
        let dir = std::env::temp_dir().join("tridomain_svg_test");
        std::fs::create_dir_all(&dir).unwrap();
        let p1 = dir.join("one.svg");
        let p2 = dir.join("two.svg");
        emit_plot(&[("capacitive", &a), ("conductive", &b)], &p1).unwrap();
        emit_plot(&[("capacitive", &a), ("conductive", &b)], &p2).unwrap();
        let s1 = std::fs::read(&p1).unwrap();
        let s2 = std::fs::read(&p2).unwrap();
        assert_eq!(s1, s2, "plot output must be byte-deterministic");
        let text = String::from_utf8(s1).unwrap();
        assert!(text.contains("capacitive") && text.contains("conductive"));
        assert_eq!(text.matches("<path").count(), 6, "three panels, two curves");
        // Single run: three panels, one curve each, no legend.
        let p3 = dir.join("single.svg");
        emit_plot(&[("run", &a)], &p3).unwrap();
        let text = std::fs::read_to_string(&p3).unwrap();
        assert_eq!(text.matches("<path").count(), 3);
        std::fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn plot_rejects_degenerate_traces() {
        let t = TraceSet {
            time: vec![0.0],
            probes: vec![],
        };
        let err = emit_plot(&[("run", &t)], Path::new("/nonexistent/x.svg"));
        assert!(err.is_err());
    }
}
