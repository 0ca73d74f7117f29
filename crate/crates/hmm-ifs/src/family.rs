//! Parametric model families: JSON config, parameter layout, and the
//! map from a parameter vector to a concrete [`Model`].
//!
//! A family fixes the grid, the emission family, and which components of
//! θ are free. Transition kernels are either fixed row-stochastic
//! matrices or row-softmax of a logit matrix; free logits are named
//! `logit_<row>_<col>` in the layout, the emission mean `mu` and the AR
//! coefficient `rho`. Softmax rows are shift invariant, so a layout that
//! frees every logit of a row leaves a flat direction in the likelihood;
//! the shipped configs pin one reference column per row at 0.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;
use crate::model::{stationary_distribution, EmissionKernel, Model, StateGrid, TransitionKernel};

/// Role of one free parameter.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamRole {
    TransitionLogit { row: usize, col: usize },
    EmissionMu,
    EmissionRho,
}

/// Ordered set of free parameters: names plus parsed roles.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamLayout {
    names: Vec<String>,
    roles: Vec<ParamRole>,
}

impl ParamLayout {
    pub fn parse(names: &[String]) -> Result<Self> {
        let mut roles = Vec::with_capacity(names.len());
        for (k, name) in names.iter().enumerate() {
            if names[..k].contains(name) {
                return Err(Error::Config(format!(
                    "parameter `{name}` appears more than once in theta.layout"
                )));
            }
            roles.push(parse_role(name)?);
        }
        Ok(ParamLayout {
            names: names.to_vec(),
            roles,
        })
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn roles(&self) -> &[ParamRole] {
        &self.roles
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }
}

fn parse_role(name: &str) -> Result<ParamRole> {
    if name == "mu" {
        return Ok(ParamRole::EmissionMu);
    }
    if name == "rho" {
        return Ok(ParamRole::EmissionRho);
    }
    if let Some(rest) = name.strip_prefix("logit_") {
        let mut it = rest.split('_');
        let row = it.next().and_then(|s| s.parse::<usize>().ok());
        let col = it.next().and_then(|s| s.parse::<usize>().ok());
        if let (Some(row), Some(col), None) = (row, col, it.next()) {
            return Ok(ParamRole::TransitionLogit { row, col });
        }
    }
    Err(Error::Config(format!(
        "unknown parameter `{name}` (expected `mu`, `rho`, or `logit_<row>_<col>`)"
    )))
}

/// A parameter point: values for the layout's components, in order.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamVector {
    names: Vec<String>,
    values: Vec<f64>,
}

impl ParamVector {
    pub fn new(names: Vec<String>, values: Vec<f64>) -> Result<Self> {
        if names.len() != values.len() {
            return Err(Error::Dimension(format!(
                "{} parameter names but {} values",
                names.len(),
                values.len()
            )));
        }
        for (n, v) in names.iter().zip(&values) {
            if !v.is_finite() {
                return Err(Error::Config(format!("parameter `{n}` is not finite: {v}")));
            }
        }
        Ok(ParamVector { names, values })
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Same names, new values.
    pub fn with_values(&self, values: Vec<f64>) -> Result<Self> {
        ParamVector::new(self.names.clone(), values)
    }
}

// ---------------------------------------------------------------------------
// JSON config
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelConfig {
    pub grid: GridConfig,
    pub transition: TransitionConfig,
    pub emission: EmissionConfig,
    #[serde(default)]
    pub theta: ThetaConfig,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GridConfig {
    pub points: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weights: Option<WeightSpec>,
}

/// Grid weights: an explicit array, or the rules `"ones"` / `"trapezoid"`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum WeightSpec {
    Rule(String),
    Values(Vec<f64>),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TransitionConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub logits: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub matrix: Option<Vec<Vec<f64>>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EmissionConfig {
    pub family: String,
    #[serde(default)]
    pub params: serde_json::Value,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct ThetaConfig {
    #[serde(default)]
    pub layout: Vec<String>,
}

impl ModelConfig {
    pub fn from_json_str(s: &str) -> Result<Self> {
        serde_json::from_str(s).map_err(|e| Error::Parse {
            line: e.line(),
            msg: e.to_string(),
        })
    }

    pub fn from_json_file(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        ModelConfig::from_json_str(&text)
    }

    pub fn to_json_string(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serialization cannot fail")
    }
}

// ---------------------------------------------------------------------------
// Family
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
enum TransitionSpec {
    /// Row-major logit matrix; kernel row i is softmax(logits[i]) / w.
    Logits(Vec<f64>),
    /// Fixed row-stochastic kernel; no free transition parameters.
    Fixed(Vec<f64>),
}

/// Validated model family: structure plus base parameter values. Free
/// components of θ override the base values at build time.
#[derive(Debug, Clone)]
pub struct ModelFamily {
    grid: StateGrid,
    transition: TransitionSpec,
    emission: EmissionKernel,
    layout: ParamLayout,
}

impl ModelFamily {
    pub fn from_config(config: &ModelConfig) -> Result<Self> {
        let n = config.grid.points.len();
        let weights = match &config.grid.weights {
            None => vec![1.0; n],
            Some(WeightSpec::Values(w)) => w.clone(),
            Some(WeightSpec::Rule(rule)) => match rule.as_str() {
                "ones" => vec![1.0; n],
                "trapezoid" => {
                    return StateGrid::trapezoid(config.grid.points.clone())
                        .and_then(|grid| ModelFamily::assemble(grid, config))
                }
                other => {
                    return Err(Error::Config(format!(
                        "unknown weight rule `{other}` (expected `ones` or `trapezoid`)"
                    )))
                }
            },
        };
        let grid = StateGrid::new(config.grid.points.clone(), weights)?;
        ModelFamily::assemble(grid, config)
    }

    fn assemble(grid: StateGrid, config: &ModelConfig) -> Result<Self> {
        let n = grid.len();
        let transition = match (&config.transition.logits, &config.transition.matrix) {
            (Some(_), Some(_)) => {
                return Err(Error::Config(
                    "transition must give either logits or matrix, not both".into(),
                ))
            }
            (None, None) => {
                return Err(Error::Config(
                    "transition must give logits or matrix".into(),
                ))
            }
            (Some(logits), None) => TransitionSpec::Logits(flatten_square(logits, n, "logits")?),
            (None, Some(matrix)) => TransitionSpec::Fixed(flatten_square(matrix, n, "matrix")?),
        };
        let emission = parse_emission(&config.emission)?;
        emission.validate(n)?;
        let layout = ParamLayout::parse(&config.theta.layout)?;
        for (name, role) in layout.names().iter().zip(layout.roles()) {
            match role {
                ParamRole::TransitionLogit { row, col } => {
                    if !matches!(transition, TransitionSpec::Logits(_)) {
                        return Err(Error::Config(format!(
                            "layout frees `{name}` but the transition kernel is fixed"
                        )));
                    }
                    if *row >= n || *col >= n {
                        return Err(Error::Config(format!(
                            "layout entry `{name}` is out of range for a {n}-state grid"
                        )));
                    }
                }
                ParamRole::EmissionMu => {
                    if matches!(emission, EmissionKernel::Table { .. }) {
                        return Err(Error::Config(
                            "layout frees `mu` but the emission family is a table".into(),
                        ));
                    }
                }
                ParamRole::EmissionRho => {
                    if !matches!(emission, EmissionKernel::GaussianAr { .. }) {
                        return Err(Error::Config(
                            "layout frees `rho` but the emission family is not gaussian_ar".into(),
                        ));
                    }
                }
            }
        }
        Ok(ModelFamily {
            grid,
            transition,
            emission,
            layout,
        })
    }

    pub fn grid(&self) -> &StateGrid {
        &self.grid
    }

    pub fn layout(&self) -> &ParamLayout {
        &self.layout
    }

    /// Number of free parameters.
    pub fn dim(&self) -> usize {
        self.layout.len()
    }

    /// Base parameter values read off the config, in layout order.
    pub fn theta0(&self) -> ParamVector {
        let n = self.grid.len();
        let values = self
            .layout
            .roles()
            .iter()
            .map(|role| match role {
                ParamRole::TransitionLogit { row, col } => match &self.transition {
                    TransitionSpec::Logits(l) => l[row * n + col],
                    TransitionSpec::Fixed(_) => unreachable!("validated in assemble"),
                },
                ParamRole::EmissionMu => match &self.emission {
                    EmissionKernel::GaussianMean { mu } => *mu,
                    EmissionKernel::GaussianAr { mu, .. } => *mu,
                    EmissionKernel::Table { .. } => unreachable!("validated in assemble"),
                },
                ParamRole::EmissionRho => match &self.emission {
                    EmissionKernel::GaussianAr { rho, .. } => *rho,
                    _ => unreachable!("validated in assemble"),
                },
            })
            .collect();
        ParamVector::new(self.layout.names().to_vec(), values)
            .expect("base values are validated finite")
    }

    /// Builds the model at the config's base parameter values.
    pub fn build(&self) -> Result<Model> {
        let theta0 = self.theta0();
        self.build_at(&theta0)
    }

    /// Builds the model at θ, materializing the transition kernel, the
    /// stationary law, and their derivatives with respect to every free
    /// parameter.
    pub fn build_at(&self, theta: &ParamVector) -> Result<Model> {
        if theta.names() != self.layout.names() {
            return Err(Error::Config(format!(
                "parameter vector names {:?} do not match the layout {:?}",
                theta.names(),
                self.layout.names()
            )));
        }
        let n = self.grid.len();
        let d = self.layout.len();
        let w = self.grid.weights();

        // Transition kernel and its per-parameter derivative.
        let (trans, dtrans) = match &self.transition {
            TransitionSpec::Fixed(matrix) => {
                let kernel = TransitionKernel::new(matrix.clone(), &self.grid)?;
                (kernel, vec![vec![0.0; n * n]; d])
            }
            TransitionSpec::Logits(base) => {
                let mut logits = base.clone();
                for (k, role) in self.layout.roles().iter().enumerate() {
                    if let ParamRole::TransitionLogit { row, col } = role {
                        logits[row * n + col] = theta.values()[k];
                    }
                }
                let mut matrix = vec![0.0; n * n];
                let mut soft = vec![0.0; n * n];
                for i in 0..n {
                    let row = &logits[i * n..(i + 1) * n];
                    let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                    let mut denom = 0.0;
                    for j in 0..n {
                        let e = (row[j] - mx).exp();
                        soft[i * n + j] = e;
                        denom += e;
                    }
                    for j in 0..n {
                        soft[i * n + j] /= denom;
                        matrix[i * n + j] = soft[i * n + j] / w[j];
                    }
                }
                let kernel = TransitionKernel::new(matrix, &self.grid)?;
                let mut dtrans = vec![vec![0.0; n * n]; d];
                for (k, role) in self.layout.roles().iter().enumerate() {
                    if let ParamRole::TransitionLogit { row, col } = role {
                        let (r, b) = (*row, *col);
                        for j in 0..n {
                            let s_rj = soft[r * n + j];
                            let s_rb = soft[r * n + b];
                            let kron = if j == b { 1.0 } else { 0.0 };
                            dtrans[k][r * n + j] = s_rj * (kron - s_rb) / w[j];
                        }
                    }
                }
                (kernel, dtrans)
            }
        };

        // Emission kernel at θ.
        let mut emission = self.emission.clone();
        for (k, role) in self.layout.roles().iter().enumerate() {
            let v = theta.values()[k];
            match (role, &mut emission) {
                (ParamRole::EmissionMu, EmissionKernel::GaussianMean { mu }) => *mu = v,
                (ParamRole::EmissionMu, EmissionKernel::GaussianAr { mu, .. }) => *mu = v,
                (ParamRole::EmissionRho, EmissionKernel::GaussianAr { rho, .. }) => *rho = v,
                _ => {}
            }
        }

        // Stationary law and its derivative by implicit differentiation
        // of the bordered stationarity system: the same matrix solved
        // for pi is reused with right-hand side -(d T) pi and a zero
        // normalization row.
        let pi = stationary_distribution(&trans, &self.grid)?;
        let mut a = vec![0.0; n * n];
        for j in 0..n - 1 {
            for i in 0..n {
                a[j * n + i] = w[i] * trans.entry(i, j) - if i == j { 1.0 } else { 0.0 };
            }
        }
        for i in 0..n {
            a[(n - 1) * n + i] = w[i];
        }
        let mut dpi = Vec::with_capacity(d);
        for dt in &dtrans {
            if dt.iter().all(|v| *v == 0.0) {
                dpi.push(vec![0.0; n]);
                continue;
            }
            let mut rhs = vec![0.0; n];
            for j in 0..n - 1 {
                let mut acc = 0.0;
                for i in 0..n {
                    acc += w[i] * dt[i * n + j] * pi.values()[i];
                }
                rhs[j] = -acc;
            }
            dpi.push(linalg::solve(a.clone(), rhs, n)?);
        }

        Ok(Model {
            grid: self.grid.clone(),
            trans,
            pi,
            emission,
            dtrans,
            dpi,
            param_names: self.layout.names().to_vec(),
            param_roles: self.layout.roles().to_vec(),
            theta: theta.values().to_vec(),
        })
    }
}

fn flatten_square(rows: &[Vec<f64>], n: usize, what: &str) -> Result<Vec<f64>> {
    if rows.len() != n {
        return Err(Error::Dimension(format!(
            "transition {what} has {} rows, expected {n}",
            rows.len()
        )));
    }
    let mut out = Vec::with_capacity(n * n);
    for (i, row) in rows.iter().enumerate() {
        if row.len() != n {
            return Err(Error::Dimension(format!(
                "transition {what} row {i} has {} entries, expected {n}",
                row.len()
            )));
        }
        out.extend_from_slice(row);
    }
    for v in &out {
        if !v.is_finite() {
            return Err(Error::Config(format!("transition {what} must be finite")));
        }
    }
    Ok(out)
}

fn parse_emission(config: &EmissionConfig) -> Result<EmissionKernel> {
    let get = |key: &str| -> Result<f64> {
        config
            .params
            .get(key)
            .and_then(|v| v.as_f64())
            .ok_or_else(|| {
                Error::Config(format!(
                    "emission family `{}` needs numeric param `{key}`",
                    config.family
                ))
            })
    };
    match config.family.as_str() {
        "gaussian_mean" => Ok(EmissionKernel::GaussianMean { mu: get("mu")? }),
        "gaussian_ar" => Ok(EmissionKernel::GaussianAr {
            mu: get("mu")?,
            rho: get("rho")?,
        }),
        "table" => {
            let support: Vec<f64> = config
                .params
                .get("support")
                .and_then(|v| serde_json::from_value(v.clone()).ok())
                .ok_or_else(|| Error::Config("table emission needs `support`".into()))?;
            let rows: Vec<Vec<f64>> = config
                .params
                .get("rows")
                .and_then(|v| serde_json::from_value(v.clone()).ok())
                .ok_or_else(|| Error::Config("table emission needs `rows`".into()))?;
            Ok(EmissionKernel::Table { support, rows })
        }
        other => Err(Error::Config(format!(
            "unknown emission family `{other}` (expected gaussian_mean, gaussian_ar, or table)"
        ))),
    }
}

/// Builds a validated model straight from a config: the `build_model`
/// entry point used by the CLI.
pub fn build_model(config: &ModelConfig) -> Result<Model> {
    ModelFamily::from_config(config)?.build()
}
