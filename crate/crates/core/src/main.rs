//! Command-line front end: run scenarios, inspect the rest state, print
//! resolved parameters, and exercise the built-in self-checks.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use tridomain::membrane;
use tridomain::mesh::{build_mesh, BoundaryMode};
use tridomain::params::{self, load_config_str, Compartment, ParameterSet, Species, E_CHARGE};
use tridomain::scenarios::{self, ScenarioConfig, ScenarioError};
use tridomain::solver;

const OUTPUT_DIR_ENV: &str = "TRIDOMAIN_OUTPUT_DIR";

#[derive(Parser)]
#[command(
    name = "tridomain",
    version,
    about = "Tridomain electrodiffusion simulator: axon/glia/extracellular \
             ion dynamics with a capacitive membrane condition"
)]
struct Cli {
    /// Reserved for future stochastic channel models; currently a no-op.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Execute the scenario described by a config file
    Run { config: PathBuf },
    /// Compute the resting state and print a report
    Rest { config: PathBuf },
    /// Run the built-in invariant self-tests
    Check,
    /// Print resolved parameters with provenance
    Params {
        config: Option<PathBuf>,
        /// Parameter profile overriding the config ("new" or "previous")
        #[arg(long)]
        profile: Option<String>,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // Help and version requests are successes; everything else is
            // a usage error.
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let code = match cli.command {
        Command::Run { config } => cmd_run(&config),
        Command::Rest { config } => cmd_rest(&config),
        Command::Check => cmd_check(),
        Command::Params { config, profile } => cmd_params(config.as_deref(), profile.as_deref()),
    };
    ExitCode::from(code)
}

fn load(path: &std::path::Path) -> Result<(ParameterSet, ScenarioConfig), u8> {
    match params::load_config(path) {
        Ok(v) => Ok(v),
        Err(e) => {
            eprintln!("error: {e}");
            Err(1)
        }
    }
}

fn cmd_run(config: &std::path::Path) -> u8 {
    let (params, mut scenario) = match load(config) {
        Ok(v) => v,
        Err(code) => return code,
    };
    if let Ok(dir) = std::env::var(OUTPUT_DIR_ENV) {
        scenario.output.dir = PathBuf::from(dir);
    }
    let result = match scenarios::run_scenario(&params, &scenario) {
        Ok(r) => r,
        Err(e @ ScenarioError::Solver { .. }) => {
            eprintln!("error: {e}");
            return 2;
        }
        Err(ScenarioError::Init(e)) => {
            eprintln!("error: rest-state initialization failed: {e}");
            return 2;
        }
        Err(e) => {
            eprintln!("error: {e}");
            return 1;
        }
    };
    println!(
        "rest state: V_ax = {:.3} mV, V_gl = {:.3} mV ({} relaxation steps)",
        result.rest.v_ax * 1e3,
        result.rest.v_gl * 1e3,
        result.rest.relax_steps
    );
    let dir = &scenario.output.dir;
    if let Err(e) = std::fs::create_dir_all(dir) {
        eprintln!("error: cannot create {}: {e}", dir.display());
        return 1;
    }
    for run in &result.runs {
        let p0 = &run.traces.probes[0];
        let peak_v = p0.v_ax.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let base_k = p0.ck_ex[0];
        let peak_dk = p0
            .ck_ex
            .iter()
            .map(|c| c - base_k)
            .fold(f64::NEG_INFINITY, f64::max);
        println!(
            "{}: {} steps, peak V_ax = {:.2} mV, peak dK_ex = {:.4} mM{}",
            run.label,
            run.steps,
            peak_v * 1e3,
            peak_dk,
            if run.dt_rejections > 0 {
                format!(" ({} dt rejections)", run.dt_rejections)
            } else {
                String::new()
            }
        );
        if scenario.output.csv {
            let name = if result.runs.len() > 1 {
                format!("traces_{}.csv", run.label)
            } else {
                "traces.csv".to_string()
            };
            let path = dir.join(name);
            if let Err(e) = scenarios::emit_csv(&run.traces, &path) {
                eprintln!("error: {e}");
                return 1;
            }
            println!("wrote {}", path.display());
        }
    }
    if scenario.output.svg {
        let labeled: Vec<(&str, &scenarios::TraceSet)> =
            result.runs.iter().map(|r| (r.label, &r.traces)).collect();
        let path = dir.join("traces.svg");
        if let Err(e) = scenarios::emit_plot(&labeled, &path) {
            eprintln!("error: {e}");
            return 1;
        }
        println!("wrote {}", path.display());
    }
    0
}

fn cmd_rest(config: &std::path::Path) -> u8 {
    let (params, scenario) = match load(config) {
        Ok(v) => v,
        Err(code) => return code,
    };
    let mesh = match build_mesh(&params.geometry, BoundaryMode::Bath) {
        Ok(m) => m,
        Err(e) => {
            eprintln!("error: {e}");
            return 1;
        }
    };
    let (state, report) = match solver::find_rest_state(&mesh, &params, &scenario.solver) {
        Ok(v) => v,
        Err(e) => {
            eprintln!("error: {e}");
            return 2;
        }
    };
    println!("rest state after {} relaxation steps", report.relax_steps);
    println!(
        "  max |dV/dt| = {:.3e} V/s, max relative dc per step = {:.3e}",
        report.max_dvdt, report.max_dc_rel
    );
    println!("  V_ax = {:+.4} mV", report.v_ax * 1e3);
    println!("  V_gl = {:+.4} mV", report.v_gl * 1e3);
    for comp in Compartment::ALL {
        let c: Vec<String> = Species::ALL
            .iter()
            .map(|s| format!("{s} = {:.4} mM", state.conc(comp, *s, 0)))
            .collect();
        println!("  [{comp}] {}", c.join(", "));
    }
    for comp in Compartment::ALL {
        println!(
            "  background charge a_{comp} = {:+.6e} C/m^3",
            state.background[comp.index()][0]
        );
    }
    println!(
        "  electroneutrality residual (relative): {:.3e}",
        state.electroneutrality_max_rel()
    );
    0
}

fn check_line(name: &str, pass: bool, detail: String) -> bool {
    println!("{} {name}: {detail}", if pass { "PASS" } else { "FAIL" });
    pass
}

fn cmd_check() -> u8 {
    let params = ParameterSet::default();
    let mut all = true;

    // Capacitive partition identity: sum_i z_i e J_m^i = C_m dV/dt.
    {
        let mut worst = 0.0f64;
        let mut rng = 0x1234_5678_9abc_def0u64;
        let mut next = move || {
            rng ^= rng << 13;
            rng ^= rng >> 7;
            rng ^= rng << 17;
            (rng >> 11) as f64 / (1u64 << 53) as f64
        };
        for _ in 0..100_000 {
            let l1 = next();
            let l2 = next() * (1.0 - l1);
            let lambda = [l1, l2, 1.0 - l1 - l2];
            let c_m = 1e-3 + 1e-2 * next();
            let dvdt = (next() - 0.5) * 2e4;
            let sum: f64 = Species::ALL
                .iter()
                .map(|s| {
                    s.valence()
                        * E_CHARGE
                        * membrane::capacitive_flux(c_m, lambda[s.index()], *s, dvdt)
                })
                .sum();
            let target = c_m * dvdt;
            let ulps = (sum - target).abs() / (f64::EPSILON * target.abs().max(f64::MIN_POSITIVE));
            worst = worst.max(ulps);
        }
        all &= check_line(
            "charge identity",
            worst <= 10.0,
            format!("max deviation {worst:.2} ulps over 1e5 samples"),
        );
    }

    // Nernst oracle values.
    {
        let c = params.constants;
        let v_t = c.k_b * c.temperature / c.e;
        let cases = [
            (3.0, 100.0, Species::K, v_t * (3.0f64 / 100.0).ln()),
            (3.0, 100.0, Species::Cl, -v_t * (3.0f64 / 100.0).ln()),
            (10.0, 10.0, Species::Na, 0.0),
        ];
        let mut worst = 0.0f64;
        for (ex, inside, s, expect) in cases {
            let got = membrane::nernst_potential(ex, inside, s, &c).unwrap();
            worst = worst.max((got - expect).abs() / expect.abs().max(1e-30));
        }
        all &= check_line(
            "nernst oracle",
            worst < 1e-12,
            format!("max relative error {worst:.2e}"),
        );
    }

    // Discrete divergence theorem on a random mesh.
    {
        let mesh = build_mesh(
            &params::Geometry {
                nr: 5,
                nz: 7,
                ..Default::default()
            },
            BoundaryMode::Bath,
        )
        .unwrap();
        let mut flux = tridomain::mesh::FaceValues::zeros(&mesh);
        let mut rng = 0xdead_beef_0bad_cafeu64;
        let mut next = move || {
            rng ^= rng << 13;
            rng ^= rng >> 7;
            rng ^= rng << 17;
            (rng >> 11) as f64 / (1u64 << 53) as f64 - 0.5
        };
        for v in flux.r.iter_mut().chain(flux.z.iter_mut()) {
            *v = next();
        }
        let div = mesh
            .divergence(&flux, tridomain::mesh::AxisPolicy::Full)
            .unwrap();
        let total: f64 = (0..mesh.n_cells())
            .map(|c| div[c] * mesh.cell_volume(c))
            .sum();
        let mut boundary = 0.0;
        for iz in 0..mesh.nz {
            boundary += flux.r[iz * (mesh.nr + 1) + mesh.nr] * mesh.r_face_area(mesh.nr);
        }
        for ir in 0..mesh.nr {
            boundary += flux.z[mesh.nz * mesh.nr + ir] * mesh.z_face_area(ir);
            boundary -= flux.z[ir] * mesh.z_face_area(ir);
        }
        let err = (total - boundary).abs() / boundary.abs().max(1e-12);
        all &= check_line(
            "divergence theorem",
            err < 1e-10,
            format!("relative defect {err:.2e}"),
        );
    }

    // Analytic Jacobian against finite differences on a random 4x4 state.
    {
        let mesh = build_mesh(
            &params::Geometry {
                nr: 4,
                nz: 4,
                ..Default::default()
            },
            BoundaryMode::Bath,
        )
        .unwrap();
        let state = solver::jacobian_probe_state(&mesh, 0x0123_4567_89ab_cdef);
        match solver::jacobian_check(&mesh, &params, &state, 1e-5) {
            Ok(worst) => {
                all &= check_line(
                    "jacobian vs finite differences",
                    worst < 1e-5,
                    format!("max relative discrepancy {worst:.2e}"),
                );
            }
            Err(e) => {
                all &= check_line("jacobian vs finite differences", false, e.to_string());
            }
        }
    }

    // Partition and volume-fraction sums of the default parameter set.
    {
        let lambda_sum: f64 = params.lambda.iter().sum();
        let eta_sum: f64 = params.eta.iter().sum();
        let ok = (lambda_sum - 1.0).abs() < 1e-12 && (eta_sum - 1.0).abs() < 1e-12;
        all &= check_line(
            "partition sums",
            ok,
            format!("sum lambda = {lambda_sum}, sum eta = {eta_sum}"),
        );
    }

    if all {
        0
    } else {
        1
    }
}

fn cmd_params(config: Option<&std::path::Path>, profile: Option<&str>) -> u8 {
    let mut text = match config {
        Some(path) => match std::fs::read_to_string(path) {
            Ok(t) => t,
            Err(e) => {
                eprintln!("error: cannot read {}: {e}", path.display());
                return 1;
            }
        },
        None => String::new(),
    };
    if let Some(p) = profile {
        // Appended last, so it wins the profile resolution pre-pass while
        // leaving explicit key overrides in force.
        text.push_str(&format!("\n[parameters]\nprofile = \"{p}\"\n"));
    }
    let (params, _scenario) = match load_config_str(&text) {
        Ok(v) => v,
        Err(e) => {
            eprintln!("error: {e}");
            return 1;
        }
    };
    println!("profile: {}", params.profile.label());
    println!("{:<12} {:>14}  {:<12} source", "key", "value", "unit");
    let rows: Vec<(&str, f64, &str)> = vec![
        ("M_ax", params.m_ax, "1/m"),
        ("M_gl", params.m_gl, "1/m"),
        ("I_ax1", params.i_ax1, "A/m^2"),
        ("I_ax2", params.i_ax2, "A/m^2"),
        ("g_leak_Na", params.g_leak_na, "S/m^2"),
        ("g_leak_K", params.g_leak_k, "S/m^2"),
        ("gbar_Na", params.gbar_na, "S/m^2"),
        ("gbar_K", params.gbar_k, "S/m^2"),
        ("g_ax_Cl", params.g_ax_cl, "S/m^2"),
        ("g_gl_Na", params.g_gl_na, "S/m^2"),
        ("g_gl_K", params.g_gl_k, "S/m^2"),
        ("I_shock", params.i_shock, "A/m^2"),
        ("C_m", params.c_m, "F/m^2"),
        ("T", params.constants.temperature, "K"),
        ("eta_ax", params.eta[0], ""),
        ("eta_gl", params.eta[1], ""),
        ("eta_ex", params.eta[2], ""),
        ("R", params.geometry.radius, "m"),
        ("L", params.geometry.length, "m"),
    ];
    for (key, value, unit) in rows {
        println!(
            "{key:<12} {value:>14.6e}  {unit:<12} {}",
            params.provenance(key).label()
        );
    }
    println!(
        "lambda       ({}, {}, {})            {}",
        params.lambda[0],
        params.lambda[1],
        params.lambda[2],
        params.provenance("lambda").label()
    );
    for s in Species::ALL {
        println!(
            "bath_{:<7} {:>14.6e}  {:<12} {}",
            s.symbol(),
            params.bath[s.index()],
            "mM",
            params.provenance(s.symbol()).label()
        );
    }
    0
}
