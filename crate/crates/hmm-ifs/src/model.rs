//! Model runtime: state grid, transition kernel, stationary law,
//! emission families, observation sequences, and a seeded simulator.
//!
//! The hidden chain `X_t` lives on a finite grid of real points with
//! strictly positive quadrature weights standing in for the reference
//! measure `m(dy)`. Transition and emission kernels are densities with
//! respect to that measure, so a finite (categorical) state space is the
//! special case of all-ones weights and a continuous state space enters
//! through a user-supplied quadrature grid.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::linalg;

/// Inverse of sqrt(2 pi); normalizing constant of the unit-variance
/// Gaussian density. All Gaussian emissions are proper densities.
pub const INV_SQRT_2PI: f64 = 0.3989422804014327;

/// Standard normal density.
pub fn std_normal_pdf(z: f64) -> f64 {
    INV_SQRT_2PI * (-0.5 * z * z).exp()
}

/// State grid: points of the hidden state space plus quadrature weights
/// for the reference measure.
#[derive(Debug, Clone, PartialEq)]
pub struct StateGrid {
    points: Vec<f64>,
    weights: Vec<f64>,
}

impl StateGrid {
    pub fn new(points: Vec<f64>, weights: Vec<f64>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::Config("grid must have at least one point".into()));
        }
        if points.len() != weights.len() {
            return Err(Error::Dimension(format!(
                "grid has {} points but {} weights",
                points.len(),
                weights.len()
            )));
        }
        if points.iter().any(|p| !p.is_finite()) {
            return Err(Error::Config("grid points must be finite".into()));
        }
        if points.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Config(
                "grid points must be strictly increasing".into(),
            ));
        }
        if weights.iter().any(|w| !(w.is_finite() && *w > 0.0)) {
            return Err(Error::Config("grid weights must be finite and > 0".into()));
        }
        Ok(StateGrid { points, weights })
    }

    /// Counting-measure grid: all weights exactly 1.
    pub fn categorical(points: Vec<f64>) -> Result<Self> {
        let w = vec![1.0; points.len()];
        StateGrid::new(points, w)
    }

    /// Trapezoid quadrature weights for a continuous state space
    /// discretized on `points`. A single point gets weight 1.
    pub fn trapezoid(points: Vec<f64>) -> Result<Self> {
        let n = points.len();
        if n < 2 {
            return StateGrid::categorical(points);
        }
        let mut w = vec![0.0; n];
        w[0] = 0.5 * (points[1] - points[0]);
        w[n - 1] = 0.5 * (points[n - 1] - points[n - 2]);
        for i in 1..n - 1 {
            w[i] = 0.5 * (points[i + 1] - points[i - 1]);
        }
        StateGrid::new(points, w)
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Weighted sum of a grid function: the quadrature for `∫ h dm`.
    pub fn integrate(&self, h: &[f64]) -> f64 {
        h.iter().zip(&self.weights).map(|(v, w)| v * w).sum()
    }
}

/// Row-stochastic transition kernel: entry `(i, j)` is the density
/// `p(x_i, x_j)` per unit weight, so each row integrates to 1 against
/// the grid weights.
#[derive(Debug, Clone)]
pub struct TransitionKernel {
    matrix: Vec<f64>,
    n: usize,
}

impl TransitionKernel {
    pub fn new(matrix: Vec<f64>, grid: &StateGrid) -> Result<Self> {
        let n = grid.len();
        if matrix.len() != n * n {
            return Err(Error::Dimension(format!(
                "transition kernel has {} entries, expected {}",
                matrix.len(),
                n * n
            )));
        }
        for (k, v) in matrix.iter().enumerate() {
            if !v.is_finite() || *v < 0.0 {
                return Err(Error::Config(format!(
                    "transition entry ({}, {}) is {v}, must be finite and >= 0",
                    k / n,
                    k % n
                )));
            }
        }
        for i in 0..n {
            let row_mass = grid.integrate(&matrix[i * n..(i + 1) * n]);
            if (row_mass - 1.0).abs() > 1e-12 {
                return Err(Error::Config(format!(
                    "transition row {i} integrates to {row_mass:.15}, expected 1"
                )));
            }
        }
        Ok(TransitionKernel { matrix, n })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn entry(&self, from: usize, to: usize) -> f64 {
        self.matrix[from * self.n + to]
    }

    pub fn row(&self, from: usize) -> &[f64] {
        &self.matrix[from * self.n..(from + 1) * self.n]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.matrix
    }
}

/// Stationary density of the hidden chain against the grid measure.
#[derive(Debug, Clone)]
pub struct StationaryDist {
    pi: Vec<f64>,
}

impl StationaryDist {
    pub fn values(&self) -> &[f64] {
        &self.pi
    }
}

/// Solves `∫ π(x) p(x, y) m(dx) = π(y)` with the normalization
/// `∫ π dm = 1` replacing one redundant stationarity equation, then
/// verifies the residual. A solve failure or a residual above 1e-10
/// means the chain is reducible (no unique stationary law).
pub fn stationary_distribution(
    kernel: &TransitionKernel,
    grid: &StateGrid,
) -> Result<StationaryDist> {
    let n = grid.len();
    let w = grid.weights();
    // Row j of the system is the stationarity equation for state j:
    // sum_i w_i P[i][j] v_i = v_j. The last row is the normalization.
    let mut a = vec![0.0; n * n];
    for j in 0..n - 1 {
        for i in 0..n {
            a[j * n + i] = w[i] * kernel.entry(i, j) - if i == j { 1.0 } else { 0.0 };
        }
    }
    for i in 0..n {
        a[(n - 1) * n + i] = w[i];
    }
    let mut b = vec![0.0; n];
    b[n - 1] = 1.0;
    let mut pi = solve(a, b, n)?;

    // Residual check covers the stationarity equation dropped above.
    let mut resid = 0.0f64;
    for j in 0..n {
        let mut acc = 0.0;
        for i in 0..n {
            acc += w[i] * kernel.entry(i, j) * pi[i];
        }
        resid = resid.max((acc - pi[j]).abs());
    }
    if resid > 1e-10 {
        return Err(Error::ReducibleChain(format!(
            "stationary residual {resid:.3e} exceeds 1e-10"
        )));
    }
    for v in pi.iter_mut() {
        if *v < 0.0 {
            if *v < -1e-10 {
                return Err(Error::ReducibleChain(format!(
                    "stationary solution has negative mass {v:.3e}"
                )));
            }
            *v = 0.0;
        }
    }
    Ok(StationaryDist { pi })
}

fn solve(a: Vec<f64>, b: Vec<f64>, n: usize) -> Result<Vec<f64>> {
    linalg::solve(a, b, n)
}

/// Emission family: evaluates the conditional observation density
/// `f(ξ_t | x_t, ξ_{t-1})` and the initial density `f(ξ_0 | x_0)`
/// (selected by passing `xi_prev = None`).
#[derive(Debug, Clone)]
pub enum EmissionKernel {
    /// `f(ξ | x) = φ(ξ − x − μ)`, unit variance; ignores the previous
    /// observation.
    GaussianMean { mu: f64 },
    /// Unit-variance Gaussian with mean `x + μ + ρ ξ_{t-1}`; the initial
    /// observation uses mean `x + μ`.
    GaussianAr { mu: f64, rho: f64 },
    /// Finite observation alphabet: `rows[state][k]` is the density of
    /// `support[k]` given the state, against counting measure.
    Table {
        support: Vec<f64>,
        rows: Vec<Vec<f64>>,
    },
}

impl EmissionKernel {
    pub fn validate(&self, n_states: usize) -> Result<()> {
        match self {
            EmissionKernel::GaussianMean { mu } => {
                if !mu.is_finite() {
                    return Err(Error::Config("emission mu must be finite".into()));
                }
            }
            EmissionKernel::GaussianAr { mu, rho } => {
                if !mu.is_finite() || !rho.is_finite() {
                    return Err(Error::Config("emission mu and rho must be finite".into()));
                }
            }
            EmissionKernel::Table { support, rows } => {
                if support.is_empty() {
                    return Err(Error::Config(
                        "table emission needs a nonempty support".into(),
                    ));
                }
                if rows.len() != n_states {
                    return Err(Error::Dimension(format!(
                        "table emission has {} rows, expected {n_states}",
                        rows.len()
                    )));
                }
                for (s, row) in rows.iter().enumerate() {
                    if row.len() != support.len() {
                        return Err(Error::Dimension(format!(
                            "table emission row {s} has {} entries, expected {}",
                            row.len(),
                            support.len()
                        )));
                    }
                    if row.iter().any(|v| !v.is_finite() || *v < 0.0) {
                        return Err(Error::Config(format!(
                            "table emission row {s} must be finite and >= 0"
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    /// Density of `xi` given state (index + point value) and the
    /// previous observation. `xi_prev = None` selects the initial
    /// density.
    pub fn density(&self, xi: f64, xi_prev: Option<f64>, state: usize, x: f64) -> f64 {
        match self {
            EmissionKernel::GaussianMean { mu } => std_normal_pdf(xi - x - mu),
            EmissionKernel::GaussianAr { mu, rho } => {
                let mean = x + mu + xi_prev.map_or(0.0, |p| rho * p);
                std_normal_pdf(xi - mean)
            }
            EmissionKernel::Table { support, rows } => support
                .iter()
                .position(|v| (v - xi).abs() <= 1e-12)
                .map_or(0.0, |k| rows[state][k]),
        }
    }

    /// Derivative of `density` with respect to the named emission
    /// parameter. Zero for families that do not carry the parameter.
    pub fn d_density_mu(&self, xi: f64, xi_prev: Option<f64>, state: usize, x: f64) -> f64 {
        match self {
            EmissionKernel::GaussianMean { mu } => {
                let z = xi - x - mu;
                std_normal_pdf(z) * z
            }
            EmissionKernel::GaussianAr { mu, rho } => {
                let mean = x + mu + xi_prev.map_or(0.0, |p| rho * p);
                let z = xi - mean;
                std_normal_pdf(z) * z
            }
            EmissionKernel::Table { .. } => {
                let _ = (xi, xi_prev, state, x);
                0.0
            }
        }
    }

    pub fn d_density_rho(&self, xi: f64, xi_prev: Option<f64>, _state: usize, x: f64) -> f64 {
        match self {
            EmissionKernel::GaussianAr { mu, rho } => match xi_prev {
                Some(p) => {
                    let mean = x + mu + rho * p;
                    let z = xi - mean;
                    std_normal_pdf(z) * z * p
                }
                None => 0.0,
            },
            _ => 0.0,
        }
    }

    /// Log of the supremum of the density over all inputs; bounds every
    /// per-step normalizer from above.
    pub fn log_sup_density(&self) -> f64 {
        match self {
            EmissionKernel::GaussianMean { .. } | EmissionKernel::GaussianAr { .. } => {
                INV_SQRT_2PI.ln()
            }
            EmissionKernel::Table { rows, .. } => {
                rows.iter().flatten().fold(0.0f64, |m, v| m.max(*v)).ln()
            }
        }
    }
}

/// A fully materialized model at one parameter point: grid, transition
/// kernel with per-parameter derivatives, stationary law with
/// per-parameter derivatives, and the emission kernel.
///
/// Immutable after construction; shared freely across threads.
#[derive(Debug, Clone)]
pub struct Model {
    pub(crate) grid: StateGrid,
    pub(crate) trans: TransitionKernel,
    pub(crate) pi: StationaryDist,
    pub(crate) emission: EmissionKernel,
    /// Derivative of the transition kernel per free parameter
    /// (row-major n*n each; zero matrices for emission parameters).
    pub(crate) dtrans: Vec<Vec<f64>>,
    /// Derivative of the stationary density per free parameter.
    pub(crate) dpi: Vec<Vec<f64>>,
    /// Names of the free parameters, in layout order.
    pub(crate) param_names: Vec<String>,
    /// Parsed roles of the free parameters, in layout order.
    pub(crate) param_roles: Vec<crate::family::ParamRole>,
    /// Parameter values this model was built at, in layout order.
    pub(crate) theta: Vec<f64>,
}

impl Model {
    pub fn grid(&self) -> &StateGrid {
        &self.grid
    }

    pub fn transition(&self) -> &TransitionKernel {
        &self.trans
    }

    pub fn stationary(&self) -> &StationaryDist {
        &self.pi
    }

    pub fn emission(&self) -> &EmissionKernel {
        &self.emission
    }

    pub fn n_states(&self) -> usize {
        self.grid.len()
    }

    /// Number of free parameters.
    pub fn n_params(&self) -> usize {
        self.theta.len()
    }

    pub fn param_names(&self) -> &[String] {
        &self.param_names
    }

    pub fn theta(&self) -> &[f64] {
        &self.theta
    }

    pub fn density(&self, xi: f64, xi_prev: Option<f64>, state: usize) -> f64 {
        self.emission
            .density(xi, xi_prev, state, self.grid.points()[state])
    }
}

/// Observed sequence `ξ_0, …, ξ_n`, optionally with the simulated
/// hidden path and the seed that generated it.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationSequence {
    pub obs: Vec<f64>,
    pub hidden: Option<Vec<usize>>,
    pub seed: Option<u64>,
}

impl ObservationSequence {
    pub fn from_obs(obs: Vec<f64>) -> Result<Self> {
        ObservationSequence::new(obs, None, None)
    }

    pub fn new(obs: Vec<f64>, hidden: Option<Vec<usize>>, seed: Option<u64>) -> Result<Self> {
        if obs.is_empty() {
            return Err(Error::Config(
                "observation sequence must be nonempty".into(),
            ));
        }
        if obs.iter().any(|v| !v.is_finite()) {
            return Err(Error::Config("observations must be finite".into()));
        }
        if let Some(h) = &hidden {
            if h.len() != obs.len() {
                return Err(Error::Dimension(format!(
                    "hidden path has length {}, observations {}",
                    h.len(),
                    obs.len()
                )));
            }
        }
        Ok(ObservationSequence { obs, hidden, seed })
    }

    pub fn len(&self) -> usize {
        self.obs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.obs.is_empty()
    }

    /// Previous observation for step `t` (`None` at `t = 0`).
    pub fn prev(&self, t: usize) -> Option<f64> {
        if t == 0 {
            None
        } else {
            Some(self.obs[t - 1])
        }
    }
}

fn sample_categorical<R: Rng>(rng: &mut R, probs: impl Iterator<Item = f64>, len: usize) -> usize {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    for (k, p) in probs.enumerate() {
        acc += p;
        if u < acc {
            return k;
        }
    }
    len - 1
}

/// Simulates a chain of length `n + 1`: `X_0 ~ π`, then `n` transitions,
/// each state emitting one observation. Deterministic given the seed;
/// the hidden path and seed are stored in the output.
pub fn simulate(model: &Model, n: usize, seed: u64) -> Result<ObservationSequence> {
    if let EmissionKernel::Table { rows, .. } = &model.emission {
        for (s, row) in rows.iter().enumerate() {
            let mass: f64 = row.iter().sum();
            if (mass - 1.0).abs() > 1e-9 {
                return Err(Error::Config(format!(
                    "table emission row {s} sums to {mass}, cannot simulate"
                )));
            }
        }
    }
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let m = model.n_states();
    let w = model.grid.weights();
    let pi = model.pi.values();
    let mut hidden = Vec::with_capacity(n + 1);
    let mut obs = Vec::with_capacity(n + 1);

    let x0 = sample_categorical(&mut rng, (0..m).map(|i| pi[i] * w[i]), m);
    hidden.push(x0);
    for t in 1..=n {
        let prev = hidden[t - 1];
        let x = sample_categorical(
            &mut rng,
            (0..m).map(|j| model.trans.entry(prev, j) * w[j]),
            m,
        );
        hidden.push(x);
    }
    for t in 0..=n {
        let state = hidden[t];
        let x = model.grid.points()[state];
        let xi = match &model.emission {
            EmissionKernel::GaussianMean { mu } => {
                let z: f64 = StandardNormal.sample(&mut rng);
                x + mu + z
            }
            EmissionKernel::GaussianAr { mu, rho } => {
                let mean = x + mu + if t == 0 { 0.0 } else { rho * obs[t - 1] };
                let z: f64 = StandardNormal.sample(&mut rng);
                mean + z
            }
            EmissionKernel::Table { support, rows } => {
                let k = sample_categorical(&mut rng, rows[state].iter().copied(), support.len());
                support[k]
            }
        };
        obs.push(xi);
    }
    ObservationSequence::new(obs, Some(hidden), Some(seed))
}
