//! The semigroup `𝒯(t) = e^{-t𝓐}` on discrete `𝓗`: eigen-expansion,
//! θ-scheme stepping, steady states, the conserved pairing and positivity
//! diagnostics.

use nalgebra::{Cholesky, DVector, Dyn};
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::spectral::EigenDecomposition;
use crate::wentzell::{project_to_coupled, ProductMass, ProductState, WentzellSystem};

/// Growth factor bound for runs with `λ₁ < 0`.
pub const GROWTH_CAP: f64 = 1e12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Method {
    Spectral,
    ThetaScheme { theta: f64, dt: f64 },
}

#[derive(Debug, Clone)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<ProductState>,
    pub method: Method,
    /// `‖f‖²_𝓗 - Σ_k ⟨f, e_k⟩²` when the basis is truncated.
    pub dropped_mass: Option<f64>,
    /// Requested times beyond the growth cap that were not evaluated.
    pub capped_times: Vec<f64>,
}

/// Last time with `e^{-λ₁ t} ≤ GROWTH_CAP`, if `λ₁ < 0`.
pub fn growth_horizon(decomp: &EigenDecomposition) -> Option<f64> {
    let l1 = *decomp.eigenvalues.first()?;
    (l1 < 0.0).then(|| GROWTH_CAP.ln() / -l1)
}

/// `𝒯(t) f = Σ_k e^{-λ_k t} ⟨f, e_k⟩_𝓗 e_k` at each requested time. Decoupled
/// data is projected onto coupled states first.
pub fn evolve_spectral(
    decomp: &EigenDecomposition,
    mass: &ProductMass,
    f: &ProductState,
    times: &[f64],
) -> Result<Trajectory> {
    evolve_modes(decomp, mass, f, times, 0)
}

/// The same expansion without the first `skip` modes. With `skip` equal to
/// the kernel dimension of a conservative system this is `𝒯(t)f - f̄`,
/// evaluated without the cancellation that limits the direct difference to
/// about `1e-16‖f‖`.
pub fn evolve_transient(
    decomp: &EigenDecomposition,
    mass: &ProductMass,
    f: &ProductState,
    times: &[f64],
    skip: usize,
) -> Result<Trajectory> {
    evolve_modes(decomp, mass, f, times, skip)
}

fn evolve_modes(
    decomp: &EigenDecomposition,
    mass: &ProductMass,
    f: &ProductState,
    times: &[f64],
    skip: usize,
) -> Result<Trajectory> {
    if decomp.dim() != mass.dim() {
        return Err(Error::shape("eigenbasis", mass.dim(), decomp.dim()));
    }
    if let Some(t) = times.iter().find(|t| !(**t >= 0.0)) {
        return Err(Error::Precondition(format!("times must be >= 0, got {t}")));
    }
    let f = if f.is_coupled(&mass.trace) {
        f.clone()
    } else {
        project_to_coupled(mass, f)?
    };
    let c = decomp.coefficients(&f.u1);
    let dropped_mass = (!decomp.is_complete()).then(|| {
        let total = mass.norm_coupled(&f.u1).powi(2);
        (total - c.norm_squared()).max(0.0)
    });
    let horizon = growth_horizon(decomp).unwrap_or(f64::INFINITY);
    let (kept, capped): (Vec<f64>, Vec<f64>) = times.iter().partition(|&&t| t <= horizon);

    let states: Vec<ProductState> = kept
        .par_iter()
        .map(|&t| {
            let weights = DVector::from_fn(c.len(), |k, _| {
                if k < skip {
                    0.0
                } else if t == 0.0 {
                    c[k]
                } else {
                    (-decomp.eigenvalues[k] * t).exp() * c[k]
                }
            });
            mass.to_state(&decomp.eigenvectors * weights)
        })
        .collect();
    Ok(Trajectory {
        times: kept,
        states,
        method: Method::Spectral,
        dropped_mass,
        capped_times: capped,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ThetaOptions {
    pub theta: f64,
    pub dt: f64,
    pub nsteps: usize,
    /// Leading steps replaced by two implicit-Euler half steps each. Damps
    /// the stiff modes Crank–Nicolson leaves undamped.
    pub startup_steps: usize,
    /// Keep every `record_every`-th state (the first and last are always kept).
    pub record_every: usize,
}

impl ThetaOptions {
    pub fn new(theta: f64, dt: f64, nsteps: usize) -> Self {
        ThetaOptions {
            theta,
            dt,
            nsteps,
            startup_steps: 0,
            record_every: 1,
        }
    }
}

/// `(M_H + θ dt A) u⁺ = (M_H - (1-θ) dt A) u`, written as the increment
/// `u⁺ = u - dt (M_H + θ dt A)⁻¹ A u`.
pub fn step_theta(sys: &WentzellSystem, f: &ProductState, opts: ThetaOptions) -> Result<Trajectory> {
    let ThetaOptions {
        theta,
        dt,
        nsteps,
        startup_steps,
        record_every,
    } = opts;
    if !(dt > 0.0) {
        return Err(Error::Precondition(format!("dt must be > 0, got {dt}")));
    }
    if !(0.5..=1.0).contains(&theta) {
        return Err(Error::Precondition(format!("theta must lie in [0.5, 1], got {theta}")));
    }
    let mass = &sys.mass;
    let f = if f.is_coupled(&mass.trace) {
        f.clone()
    } else {
        project_to_coupled(mass, f)?
    };
    let factor = |c: f64| {
        Cholesky::new(&mass.m_h + &sys.a * c)
            .map(|ch| (ch, c))
            .ok_or(Error::NotSpd("M_H + theta dt A"))
    };
    let main = factor(theta * dt)?;
    let half = if startup_steps > 0 && theta < 1.0 {
        Some(factor(0.5 * dt)?)
    } else {
        None
    };
    // `(M_H + c A)⁻¹ A u` with one refinement step against the structured `A`.
    // The dense factorization alone loses about `eps·c‖A‖` per step, which at
    // fine meshes shows up as drift in the conserved pairing.
    let increment = |(ch, c): &(Cholesky<f64, Dyn>, f64), u: &DVector<f64>| {
        let b = sys.apply(u);
        let mut y = ch.solve(&b);
        let r = &b - (&mass.m_h * &y + sys.apply(&y) * *c);
        y += ch.solve(&r);
        y
    };

    let every = record_every.max(1);
    let mut u = f.u1.clone();
    let mut times = vec![0.0];
    let mut states = vec![f];
    for m in 0..nsteps {
        match &half {
            Some(h) if m < startup_steps => {
                for _ in 0..2 {
                    u -= increment(h, &u) * (0.5 * dt);
                }
            }
            _ => u -= increment(&main, &u) * dt,
        }
        if (m + 1) % every == 0 || m + 1 == nsteps {
            times.push((m + 1) as f64 * dt);
            states.push(mass.to_state(u.clone()));
        }
    }
    Ok(Trajectory {
        times,
        states,
        method: Method::ThetaScheme { theta, dt },
        dropped_mass: None,
        capped_times: Vec::new(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum LongTime {
    /// `γ ≡ 0, δ ≡ 0`: convergence to the mean `f̄`.
    Conservative,
    /// `γ, δ ≥ 0`, not both zero: exponential decay to `0`.
    Stable,
    /// `γ` negative somewhere: no steady state is claimed.
    Indefinite,
}

#[derive(Debug, Clone)]
pub struct SteadyState {
    pub state: ProductState,
    /// The constant value of the state.
    pub value: f64,
    pub regime: LongTime,
}

/// `∫_Ω u₁ + ∫_Γ β⁻¹ u₂`, i.e. `⟨u, (𝟙, 𝟙)⟩_𝓗`.
pub fn conserved_pairing(state: &ProductState, mass: &ProductMass) -> f64 {
    let ones = ones_like(mass);
    mass.inner(state, &ones)
}

fn ones_like(mass: &ProductMass) -> ProductState {
    ProductState::new(
        DVector::from_element(mass.dim(), 1.0),
        DVector::from_element(mass.trace.len(), 1.0),
    )
}

/// `f̄ = (∫_Ω f₁ + ∫_Γ β⁻¹ f₂)/(|Ω| + ∫_Γ β⁻¹) · (𝟙, 𝟙)` for the conservative
/// configuration; the zero state otherwise.
pub fn steady_state(sys: &WentzellSystem, f: &ProductState) -> Result<SteadyState> {
    let mass = &sys.mass;
    f.check_shape(&mass.trace)?;
    let regime = if sys.is_conservative() {
        LongTime::Conservative
    } else if sys.gamma_weights.iter().all(|&g| g >= 0.0) {
        LongTime::Stable
    } else {
        LongTime::Indefinite
    };
    let value = match regime {
        LongTime::Conservative => {
            let ones = ones_like(mass);
            conserved_pairing(f, mass) / mass.inner(&ones, &ones)
        }
        _ => 0.0,
    };
    let state = ProductState::new(
        DVector::from_element(mass.dim(), value),
        DVector::from_element(mass.trace.len(), value),
    );
    Ok(SteadyState {
        state,
        value,
        regime,
    })
}

/// Least-squares slope of `-log ‖u(t) - f̄‖_𝓗` against `t`, over the
/// recorded times where the distance is resolvable. For a conservative or
/// stable run this estimates the decay rate, which should approach `λ₂`
/// (resp. `λ₁`) once higher modes have died out.
pub fn decay_fit(traj: &Trajectory, mass: &ProductMass, steady: &SteadyState) -> Option<f64> {
    let pts: Vec<(f64, f64)> = traj
        .times
        .iter()
        .zip(&traj.states)
        .filter_map(|(&t, s)| {
            let d = ProductState::new(&s.u1 - &steady.state.u1, &s.u2 - &steady.state.u2);
            let r = mass.norm(&d);
            (r > 1e-13 * mass.norm(s).max(f64::MIN_POSITIVE)).then(|| (t, r.ln()))
        })
        .collect();
    if pts.len() < 2 {
        return None;
    }
    let n = pts.len() as f64;
    let (mt, my) = pts.iter().fold((0.0, 0.0), |(a, b), (t, y)| (a + t / n, b + y / n));
    let (mut sxy, mut sxx) = (0.0, 0.0);
    for (t, y) in &pts {
        sxy += (t - mt) * (y - my);
        sxx += (t - mt) * (t - mt);
    }
    (sxx > 0.0).then(|| -sxy / sxx)
}

#[derive(Debug, Clone, Serialize)]
pub struct Dip {
    pub t: f64,
    /// Node index in the interior vector.
    pub node: usize,
    pub value: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct PositivityReport {
    pub times: Vec<f64>,
    /// Minimum over interior and boundary nodes at each time.
    pub minima: Vec<f64>,
    pub epsilon: f64,
    /// First grid time after which the minimum stays `≥ ε` through the horizon.
    pub t0: Option<f64>,
    /// The most negative excursion, if any value dropped below zero.
    pub dip: Option<Dip>,
}

/// Default `ε`: `10⁻³` of the asymptotic constant `⟨f, 𝟙⟩_𝓗 / ⟨𝟙, 𝟙⟩_𝓗`.
pub fn default_epsilon(f: &ProductState, mass: &ProductMass) -> f64 {
    let ones = ones_like(mass);
    1e-3 * conserved_pairing(f, mass) / mass.inner(&ones, &ones)
}

pub fn positivity_scan(
    decomp: &EigenDecomposition,
    mass: &ProductMass,
    f: &ProductState,
    times: &[f64],
    epsilon: Option<f64>,
) -> Result<PositivityReport> {
    f.check_shape(&mass.trace)?;
    if f.min_value() < 0.0 {
        return Err(Error::Precondition(format!(
            "initial datum must be nonnegative, minimum is {}",
            f.min_value()
        )));
    }
    if f.max_value() <= 0.0 {
        return Err(Error::Precondition("initial datum must not vanish".into()));
    }
    let epsilon = epsilon.unwrap_or_else(|| default_epsilon(f, mass));
    let traj = evolve_spectral(decomp, mass, f, times)?;
    Ok(scan_trajectory(&traj, epsilon))
}

/// Minima, `t₀` and the deepest dip of a recorded trajectory, for any
/// evolution method.
pub fn scan_trajectory(traj: &Trajectory, epsilon: f64) -> PositivityReport {
    let mut minima = Vec::with_capacity(traj.times.len());
    let mut dip: Option<Dip> = None;
    for (&t, s) in traj.times.iter().zip(&traj.states) {
        let node = s.u1.imin();
        let value = s.u1[node].min(s.u2.min());
        minima.push(value);
        if value < 0.0 && dip.as_ref().is_none_or(|d| value < d.value) {
            dip = Some(Dip { t, node, value });
        }
    }
    let mut t0 = None;
    for (i, &t) in traj.times.iter().enumerate().rev() {
        if minima[i] >= epsilon {
            t0 = Some(t);
        } else {
            break;
        }
    }
    PositivityReport {
        times: traj.times.clone(),
        minima,
        epsilon,
        t0,
        dip,
    }
}

/// A nonnegative datum whose evolution dips below zero.
#[derive(Debug, Clone, Serialize)]
pub struct NonPositiveInstance {
    pub width: f64,
    pub centre: Vec<f64>,
    pub t: f64,
    pub node: usize,
    pub value: f64,
    /// `value / max f`.
    pub relative: f64,
}

/// Hat bump `max(0, 1 - |x - c|_∞ / w)` as a coupled state.
pub fn hat_bump(mesh: &crate::mesh::Mesh, centre: &[f64], width: f64) -> ProductState {
    let f = |x: &[f64]| {
        let r = x
            .iter()
            .zip(centre)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        (1.0 - r / width).max(0.0)
    };
    ProductState::sample(mesh, f, f)
}

/// Searches hat bumps of the given widths over `times` for the most negative
/// relative minimum. Returns `None` if every value stays nonnegative.
pub fn search_nonpositivity(
    decomp: &EigenDecomposition,
    mass: &ProductMass,
    mesh: &crate::mesh::Mesh,
    centre: &[f64],
    widths: &[f64],
    times: &[f64],
) -> Result<Option<NonPositiveInstance>> {
    let mut best: Option<NonPositiveInstance> = None;
    for &w in widths {
        let f = hat_bump(mesh, centre, w);
        let fmax = f.max_value();
        let traj = evolve_spectral(decomp, mass, &f, times)?;
        for (&t, s) in traj.times.iter().zip(&traj.states) {
            let node = s.u1.imin();
            let value = s.u1[node];
            let relative = value / fmax;
            if value < 0.0 && best.as_ref().is_none_or(|b| relative < b.relative) {
                best = Some(NonPositiveInstance {
                    width: w,
                    centre: centre.to_vec(),
                    t,
                    node,
                    value,
                    relative,
                });
            }
        }
    }
    Ok(best)
}

/// `n` log-spaced points from `a` to `b` inclusive.
pub fn log_grid(a: f64, b: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![a];
    }
    let (la, lb) = (a.ln(), b.ln());
    (0..n)
        .map(|i| (la + (lb - la) * i as f64 / (n - 1) as f64).exp())
        .collect()
}
