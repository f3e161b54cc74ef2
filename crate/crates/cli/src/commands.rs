//! The six subcommands. Each writes its artifacts into the output directory
//! and returns `Err` with the exit-code-carrying [`CliError`] on failure.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use serde::Serialize;
use sha2::{Digest, Sha256};
use wentzell::acceptance::{self, Outcome};
use wentzell::coefficients::{check_principal_symbol, validate_coefficients, CoefficientSet, MatrixField, ScalarField};
use wentzell::elliptic::{realize, MassMode, RealizedOperator, Validated};
use wentzell::export::{
    write_coo_csv, write_eigen_csv, write_eigenvectors_csv, write_trajectory_csv, Diagnostics, Plot, Series,
};
use wentzell::mesh::Mesh;
use wentzell::semigroup::{
    conserved_pairing, decay_fit, default_epsilon, evolve_spectral, growth_horizon, scan_trajectory, steady_state,
    step_theta, LongTime, Method, ThetaOptions, Trajectory,
};
use wentzell::spectral::{eig_generalized, kernel_dimension, oracle_eigenvalues_interval, EigenDecomposition};
use wentzell::wentzell::{assemble_wentzell_form, project_to_coupled, ProductState, WentzellSystem};

use crate::config::{Domain, RunConfig, Scheme};
use crate::CliError;

/// Sector half-angle and direction count for the principal-symbol sampling.
const SECTOR_ANGLE: f64 = std::f64::consts::FRAC_PI_2;
const SYMBOL_SAMPLES: usize = 32;
/// Relative eigenvalue tolerance for counting kernel modes in summaries.
const KERNEL_TOL: f64 = 1e-10;
/// Number of snapshot curves in `snapshots.svg`.
const SNAPSHOTS: usize = 6;

pub struct Context {
    pub out: PathBuf,
    pub seed: Option<u64>,
    pub quiet: bool,
}

impl Context {
    fn say(&self, line: impl AsRef<str>) {
        if !self.quiet {
            println!("{}", line.as_ref());
        }
    }

    fn create(&self, name: &str) -> Result<BufWriter<File>, CliError> {
        fs::create_dir_all(&self.out)?;
        Ok(BufWriter::new(File::create(self.out.join(name))?))
    }

    fn write_json(&self, name: &str, value: &impl Serialize) -> Result<(), CliError> {
        let mut w = self.create(name)?;
        serde_json::to_writer_pretty(&mut w, value).map_err(std::io::Error::from)?;
        writeln!(w)?;
        w.flush()?;
        Ok(())
    }

    fn write_text(&self, name: &str, text: &str) -> Result<(), CliError> {
        fs::create_dir_all(&self.out)?;
        fs::write(self.out.join(name), text)?;
        Ok(())
    }

    fn with_writer(
        &self,
        name: &str,
        f: impl FnOnce(&mut BufWriter<File>) -> std::io::Result<()>,
    ) -> Result<(), CliError> {
        let mut w = self.create(name)?;
        f(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }
}

struct Built {
    mesh: Mesh,
    op: RealizedOperator,
    sys: WentzellSystem,
    mode: MassMode,
}

fn build(cfg: &RunConfig) -> Result<Built, CliError> {
    let mesh = cfg.mesh()?;
    let mode = cfg.mass_mode(&mesh);
    let v = Validated::new(&mesh, cfg.coefficients.clone())?;
    let op = realize(&mesh, &v, mode)?;
    let sys = assemble_wentzell_form(&op, &mesh, &v, cfg.order_power)?;
    Ok(Built { mesh, op, sys, mode })
}

#[derive(Serialize)]
struct ValidationOutput {
    passed: bool,
    report: wentzell::coefficients::ValidationReport,
    symbol: Option<wentzell::coefficients::SymbolReport>,
    symbol_error: Option<String>,
}

pub fn validate(cfg: &RunConfig, ctx: &Context) -> Result<(), CliError> {
    let mesh = cfg.mesh()?;
    let report = validate_coefficients(&mesh, &cfg.coefficients)?;
    let (symbol, symbol_error) = match check_principal_symbol(&cfg.coefficients, &mesh, SECTOR_ANGLE, SYMBOL_SAMPLES) {
        Ok(s) => (Some(s), None),
        Err(e) => (None, Some(e.to_string())),
    };
    let passed = report.passed && symbol.is_some();
    for c in &report.checks {
        ctx.say(format!(
            "{} {}: margin {:e}",
            if c.passed { "ok  " } else { "FAIL" },
            c.name,
            c.margin
        ));
    }
    if let Some(e) = &symbol_error {
        ctx.say(format!("FAIL principal symbol: {e}"));
    }
    ctx.write_json(
        "validation.json",
        &ValidationOutput {
            passed,
            report: report.clone(),
            symbol,
            symbol_error: symbol_error.clone(),
        },
    )?;
    report.require()?;
    if let Some(e) = symbol_error {
        return Err(CliError::Core(wentzell::Error::Hypothesis(e)));
    }
    Ok(())
}

#[derive(Serialize)]
struct SystemSummary {
    nodes: usize,
    boundary_nodes: usize,
    order_power: usize,
    mass: MassMode,
    coefficients_sha256: String,
    /// `max|A - Aᵀ| / max|A|`.
    a_asymmetry: f64,
    m_h_asymmetry: f64,
    /// `M_H` admitted a Cholesky factorization.
    m_h_spd: bool,
    /// Smallest generalized eigenvalue of the second-order realization.
    semibound: f64,
    shift: f64,
}

fn asymmetry(a: &DMatrix<f64>) -> f64 {
    (a - a.transpose()).amax() / a.amax().max(f64::MIN_POSITIVE)
}

fn coefficients_hash(c: &CoefficientSet) -> String {
    let json = serde_json::to_vec(c).expect("coefficients are serializable");
    Sha256::digest(json).iter().map(|b| format!("{b:02x}")).collect()
}

pub fn assemble(cfg: &RunConfig, ctx: &Context) -> Result<(), CliError> {
    let b = build(cfg)?;
    let summary = SystemSummary {
        nodes: b.mesh.num_nodes(),
        boundary_nodes: b.mesh.num_boundary_nodes(),
        order_power: cfg.order_power,
        mass: b.mode,
        coefficients_sha256: coefficients_hash(&cfg.coefficients),
        a_asymmetry: asymmetry(&b.sys.a),
        m_h_asymmetry: asymmetry(&b.sys.mass.m_h),
        m_h_spd: true,
        semibound: b.op.semibound,
        shift: b.sys.shift,
    };
    ctx.with_writer("A.csv", |w| write_coo_csv(w, &b.sys.a, 0.0))?;
    ctx.with_writer("M_H.csv", |w| write_coo_csv(w, &b.sys.mass.m_h, 0.0))?;
    ctx.write_json("mesh.json", &b.mesh)?;
    ctx.write_json("system.json", &summary)?;
    ctx.say(format!(
        "assembled N = {} ({} boundary nodes), asymmetry {:e}",
        summary.nodes, summary.boundary_nodes, summary.a_asymmetry
    ));
    Ok(())
}

#[derive(Serialize)]
struct EigenSummary {
    count: usize,
    dimension: usize,
    lambda1: f64,
    lambda2: Option<f64>,
    kernel_dimension: usize,
    max_residual: f64,
    /// Last time `𝒯(t)` stays below the growth cap, when `λ₁ < 0`.
    growth_horizon: Option<f64>,
}

pub fn eigs(cfg: &RunConfig, ctx: &Context) -> Result<(), CliError> {
    let b = build(cfg)?;
    let d = eig_generalized(&b.sys, cfg.eigen_count)?;
    ctx.with_writer("eigenvalues.csv", |w| write_eigen_csv(w, &d))?;
    if cfg.dump_eigenvectors {
        ctx.with_writer("eigenvectors.csv", |w| write_eigenvectors_csv(w, &d, d.len()))?;
    }
    let summary = EigenSummary {
        count: d.len(),
        dimension: d.dim(),
        lambda1: d.eigenvalues[0],
        lambda2: d.eigenvalues.get(1).copied(),
        kernel_dimension: kernel_dimension(&d, KERNEL_TOL),
        max_residual: d.max_residual(),
        growth_horizon: growth_horizon(&d),
    };
    ctx.write_json("eigen_summary.json", &summary)?;
    for (k, l) in d.eigenvalues.iter().enumerate().take(10) {
        ctx.say(format!("lambda_{} = {l:e}", k + 1));
    }
    ctx.say(format!("max residual {:e}", summary.max_residual));
    Ok(())
}

fn constant(f: &ScalarField, name: &str) -> Result<f64, CliError> {
    f.as_constant()
        .ok_or_else(|| CliError::Config(format!("oracle needs a constant {name}")))
}

fn constant_q(q: &MatrixField) -> Result<f64, CliError> {
    match q {
        MatrixField::Isotropic(s) => constant(s, "q"),
        MatrixField::Full(rows) if rows.len() == 1 && rows[0].len() == 1 => constant(&rows[0][0], "q"),
        MatrixField::Full(_) => Err(CliError::Config("oracle needs a 1 x 1 q on an interval".into())),
    }
}

pub fn oracle(cfg: &RunConfig, ctx: &Context) -> Result<(), CliError> {
    let Domain::Interval { a, b, .. } = cfg.domain else {
        return Err(CliError::Config("oracle is available on intervals only".into()));
    };
    if cfg.order_power != 1 {
        return Err(CliError::Config("oracle covers order_power 1 only".into()));
    }
    let c = &cfg.coefficients;
    let q = constant_q(&c.q)?;
    let (alpha, beta) = (constant(&c.alpha, "alpha")?, constant(&c.beta, "beta")?);
    let (gamma, delta) = (constant(&c.gamma, "gamma")?, constant(&c.delta, "delta")?);
    let built = build(cfg)?;
    let d = eig_generalized(&built.sys, cfg.eigen_count)?;
    let o = oracle_eigenvalues_interval(q, alpha, beta, gamma, delta, b - a, cfg.eigen_count)?;
    if o.eigenvalues.len() < d.len() {
        return Err(CliError::Core(wentzell::Error::Precondition(format!(
            "oracle found {} roots below {:e}, {} requested",
            o.eigenvalues.len(),
            o.scan_ceiling,
            d.len()
        ))));
    }
    // Relative errors are taken against max(|oracle|, smallest nonzero |oracle|),
    // so that a kernel eigenvalue is compared on the scale of the first
    // nonzero one.
    let floor = o
        .eigenvalues
        .iter()
        .map(|l| l.abs())
        .filter(|&l| l > 0.0)
        .fold(f64::INFINITY, f64::min);
    let floor = if floor.is_finite() { floor } else { 1.0 };
    let mut worst: f64 = 0.0;
    ctx.with_writer("oracle.csv", |w| {
        writeln!(w, "k,oracle,discrete,relative_error")?;
        for (k, (&lo, &ld)) in o.eigenvalues.iter().zip(&d.eigenvalues).enumerate() {
            let rel = (ld - lo).abs() / lo.abs().max(floor);
            worst = worst.max(rel);
            writeln!(w, "{},{lo:e},{ld:e},{rel:e}", k + 1)?;
        }
        Ok(())
    })?;
    ctx.say(format!("max relative error over {} eigenvalues: {worst:e}", d.len()));
    Ok(())
}

/// Samples the configured initial data: `u1` at every node (a table gives one
/// value per node), `u2` at the boundary nodes or the trace of `u1`.
pub fn initial_state(cfg: &RunConfig, mesh: &Mesh) -> Result<ProductState, CliError> {
    let n = mesh.num_nodes();
    let nb = mesh.num_boundary_nodes();
    let check = |f: &ScalarField, len: usize, what: &str| match f {
        ScalarField::PerCell { per_cell } if per_cell.len() != len => Err(CliError::Config(format!(
            "initial {what} table has {} entries, expected {len}",
            per_cell.len()
        ))),
        _ => Ok(()),
    };
    check(&cfg.initial.u1, n, "u1")?;
    let u1 = nalgebra::DVector::from_iterator(n, mesh.nodes.iter().enumerate().map(|(i, x)| cfg.initial.u1.eval(x, i)));
    let state = match &cfg.initial.u2 {
        None => ProductState::coupled(&mesh.boundary_trace(), u1)?,
        Some(f) => {
            check(f, nb, "u2")?;
            let u2 = nalgebra::DVector::from_iterator(nb, mesh.boundary_points().enumerate().map(|(j, x)| f.eval(x, j)));
            ProductState::new(u1, u2)
        }
    };
    if state.u1.iter().chain(state.u2.iter()).any(|v| !v.is_finite()) {
        return Err(CliError::Config("initial data is not finite at some node".into()));
    }
    Ok(state)
}

#[derive(Serialize)]
struct EvolveReport {
    method: Method,
    regime: LongTime,
    epsilon: f64,
    /// Conserved pairing of the initial and the last state.
    pairing_start: f64,
    pairing_end: f64,
    capped_times: Vec<f64>,
    dropped_mass: Option<f64>,
    #[serde(flatten)]
    diagnostics: Diagnostics,
}

/// Runs the θ-scheme from one requested time to the next. Each segment uses
/// the largest step not exceeding `dt` that divides it evenly; start-up steps
/// are applied in the first nonempty segment only.
fn theta_segments(
    sys: &WentzellSystem,
    f: &ProductState,
    times: &[f64],
    theta: f64,
    dt: f64,
    startup: usize,
) -> Result<Trajectory, CliError> {
    if !(dt > 0.0 && dt.is_finite()) || !(0.0..=1.0).contains(&theta) {
        return Err(CliError::Config("theta must lie in [0, 1] and dt must be positive".into()));
    }
    let f = if f.is_coupled(&sys.mass.trace) {
        f.clone()
    } else {
        project_to_coupled(&sys.mass, f)?
    };
    let mut states = Vec::with_capacity(times.len());
    let (mut t, mut u, mut startup) = (0.0, f, startup);
    for &target in times {
        let span = target - t;
        if span > 0.0 {
            let nsteps = (span / dt).ceil().max(1.0) as usize;
            let mut opts = ThetaOptions::new(theta, span / nsteps as f64, nsteps);
            opts.startup_steps = startup.min(nsteps);
            opts.record_every = nsteps;
            startup = 0;
            let seg = step_theta(sys, &u, opts)?;
            u = seg.states.into_iter().last().expect("segment records its end");
            t = target;
        }
        states.push(u.clone());
    }
    Ok(Trajectory {
        times: times.to_vec(),
        states,
        method: Method::ThetaScheme { theta, dt },
        dropped_mass: None,
        capped_times: Vec::new(),
    })
}

/// The nodes of a 1D mesh, or the middle row of a 2D one, ordered along `x`.
fn profile_nodes(mesh: &Mesh) -> Vec<usize> {
    let mut idx: Vec<usize> = if mesh.dimension == 1 {
        (0..mesh.num_nodes()).collect()
    } else {
        let mut ys: Vec<f64> = mesh.nodes.iter().map(|p| p[1]).collect();
        ys.sort_by(f64::total_cmp);
        ys.dedup();
        let mid = ys[ys.len() / 2];
        (0..mesh.num_nodes()).filter(|&i| mesh.nodes[i][1] == mid).collect()
    };
    idx.sort_by(|&i, &j| mesh.nodes[i][0].total_cmp(&mesh.nodes[j][0]));
    idx
}

fn plots(traj: &Trajectory, minima: &[f64], mesh: &Mesh, ctx: &Context) -> Result<(), CliError> {
    let nodes = profile_nodes(mesh);
    let count = traj.times.len();
    let picks: Vec<usize> = if count <= SNAPSHOTS {
        (0..count).collect()
    } else {
        let mut p: Vec<usize> = (0..SNAPSHOTS).map(|i| i * (count - 1) / (SNAPSHOTS - 1)).collect();
        p.dedup();
        p
    };
    let snapshots = Plot {
        title: if mesh.dimension == 1 { "u1(t, x)".into() } else { "u1(t, x, y) on the middle row".into() },
        x_label: "x".into(),
        y_label: "u1".into(),
        log_x: false,
        series: picks
            .iter()
            .map(|&k| Series {
                label: format!("t = {:.3e}", traj.times[k]),
                points: nodes.iter().map(|&i| (mesh.nodes[i][0], traj.states[k].u1[i])).collect(),
            })
            .collect(),
    };
    let positive = traj.times.iter().filter(|&&t| t > 0.0).count();
    let minimum = Plot {
        title: "minimum nodal value".into(),
        x_label: "t".into(),
        y_label: "min u".into(),
        log_x: positive >= 2,
        series: vec![Series {
            label: "min over interior and boundary".into(),
            points: traj.times.iter().copied().zip(minima.iter().copied()).collect(),
        }],
    };
    ctx.write_text("snapshots.svg", &snapshots.to_svg())?;
    ctx.write_text("minimum.svg", &minimum.to_svg())?;
    Ok(())
}

pub fn evolve(cfg: &RunConfig, ctx: &Context) -> Result<(), CliError> {
    let b = build(cfg)?;
    let times = cfg.time_values()?;
    let f = initial_state(cfg, &b.mesh)?;
    let mass = &b.sys.mass;
    let (traj, decomp): (Trajectory, EigenDecomposition) = match cfg.scheme {
        Scheme::Spectral => {
            let d = eig_generalized(&b.sys, b.sys.dim())?;
            (evolve_spectral(&d, mass, &f, &times)?, d)
        }
        Scheme::Theta { theta, dt, startup_steps } => {
            let d = eig_generalized(&b.sys, b.sys.dim().min(2))?;
            (theta_segments(&b.sys, &f, &times, theta, dt, startup_steps)?, d)
        }
    };
    let steady = steady_state(&b.sys, &f)?;
    let epsilon = default_epsilon(&f, mass);
    let scan = scan_trajectory(&traj, epsilon);
    let diagnostics = Diagnostics {
        lambda1: decomp.eigenvalues.first().copied(),
        lambda2: decomp.eigenvalues.get(1).copied(),
        t0: scan.t0,
        dip: scan.dip.clone(),
        decay_fit: decay_fit(&traj, mass, &steady),
    };
    let report = EvolveReport {
        method: traj.method,
        regime: steady.regime,
        epsilon,
        pairing_start: conserved_pairing(&f, mass),
        pairing_end: traj.states.last().map_or(f64::NAN, |s| conserved_pairing(s, mass)),
        capped_times: traj.capped_times.clone(),
        dropped_mass: traj.dropped_mass,
        diagnostics,
    };
    ctx.with_writer("trajectory.csv", |w| write_trajectory_csv(w, &traj, &b.mesh))?;
    ctx.write_json("diagnostics.json", &report)?;
    if cfg.plots {
        plots(&traj, &scan.minima, &b.mesh, ctx)?;
    }
    ctx.say(format!(
        "evolved to t = {:e} over {} times; t0 = {:?}, decay fit = {:?}",
        traj.times.last().copied().unwrap_or(0.0),
        traj.times.len(),
        report.diagnostics.t0,
        report.diagnostics.decay_fit
    ));
    if !traj.capped_times.is_empty() {
        ctx.say(format!("{} times beyond the growth cap were skipped", traj.capped_times.len()));
    }
    Ok(())
}

#[derive(Serialize)]
struct VerifyReport<'a> {
    seed: u64,
    passed: bool,
    criteria: &'a [Outcome],
}

/// Runs the acceptance criteria `ids` (all by default). The suite fixes its
/// own configurations; only the seed is taken from the command line or config.
pub fn verify(cfg: Option<&RunConfig>, ids: &[u32], ctx: &Context) -> Result<(), CliError> {
    let seed = ctx
        .seed
        .or_else(|| cfg.and_then(|c| c.seed))
        .unwrap_or(acceptance::DEFAULT_SEED);
    let ids = if ids.is_empty() { &acceptance::ALL[..] } else { ids };
    if let Some(bad) = ids.iter().find(|id| !acceptance::ALL.contains(id)) {
        return Err(CliError::Config(format!("no acceptance criterion {bad}")));
    }
    let outcomes = acceptance::run(ids, seed, |o| ctx.say(o.to_string()));
    let failed: Vec<u32> = outcomes.iter().filter(|o| !o.passed).map(|o| o.id).collect();
    ctx.write_json(
        "verify.json",
        &VerifyReport {
            seed,
            passed: failed.is_empty(),
            criteria: &outcomes,
        },
    )?;
    ctx.say(format!("{} passed, {} failed", outcomes.len() - failed.len(), failed.len()));
    if failed.is_empty() {
        Ok(())
    } else {
        Err(CliError::Acceptance { failed })
    }
}

/// Output directory: `--out`, else the config's `output_dir`, else `out/`.
pub fn output_dir(flag: Option<&Path>, cfg: Option<&RunConfig>) -> PathBuf {
    flag.map(Path::to_path_buf)
        .or_else(|| cfg.and_then(|c| c.output_dir.as_ref().map(PathBuf::from)))
        .unwrap_or_else(|| PathBuf::from("out"))
}
