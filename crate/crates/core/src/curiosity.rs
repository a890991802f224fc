//! Intrinsic reward functions.
//!
//! The nuclear-norm reward measures how many linearly independent directions
//! a set of encoded states spans, normalized into `[1/sqrt(max(m, n)), 1]`:
//!
//! ```text
//! r = |Z|_* / (|Z|_F * sqrt(max(m, n)))
//! ```
//!
//! The remaining functions are the usual baselines: forward-model error (ICM),
//! ensemble variance (Disagreement), distillation error (RND) and the
//! k-nearest-neighbour particle estimate (APT).

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::matlin::{self, DenseMatrix};

/// Below this Frobenius norm a state matrix is treated as all-zero.
pub const ZERO_MATRIX_THRESHOLD: f64 = 1e-15;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum RewardMethod {
    Nnm,
    Icm,
    Disagreement,
    Rnd,
    Apt,
}

impl RewardMethod {
    pub const ALL: [RewardMethod; 5] = [
        RewardMethod::Nnm,
        RewardMethod::Icm,
        RewardMethod::Disagreement,
        RewardMethod::Rnd,
        RewardMethod::Apt,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            RewardMethod::Nnm => "nnm",
            RewardMethod::Icm => "icm",
            RewardMethod::Disagreement => "disagreement",
            RewardMethod::Rnd => "rnd",
            RewardMethod::Apt => "apt",
        }
    }
}

impl fmt::Display for RewardMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for RewardMethod {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "nnm" => Ok(RewardMethod::Nnm),
            "icm" => Ok(RewardMethod::Icm),
            "disagreement" => Ok(RewardMethod::Disagreement),
            "rnd" => Ok(RewardMethod::Rnd),
            "apt" => Ok(RewardMethod::Apt),
            other => Err(format!(
                "unknown reward method `{other}` (expected nnm, icm, disagreement, rnd or apt)"
            )),
        }
    }
}

/// Where the columns of the NNM state matrix come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MatrixSource {
    /// One column per ensemble member prediction of the next encoding.
    Ensemble,
    /// The visited encoding plus its `n - 1` nearest stored encodings.
    Knn,
}

impl FromStr for MatrixSource {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "ensemble" => Ok(MatrixSource::Ensemble),
            "knn" => Ok(MatrixSource::Knn),
            other => Err(format!("unknown matrix source `{other}` (expected ensemble or knn)")),
        }
    }
}

impl fmt::Display for MatrixSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            MatrixSource::Ensemble => "ensemble",
            MatrixSource::Knn => "knn",
        })
    }
}

/// Which curiosity signal to use and how to mix it with the task reward.
#[derive(Debug, Clone, PartialEq)]
pub struct RewardSpec {
    pub method: RewardMethod,
    pub source: MatrixSource,
    /// Ensemble size, or column count of the k-NN state matrix.
    pub n: usize,
    /// Neighbour count for APT.
    pub k: usize,
    pub alpha: f64,
    pub beta: f64,
    /// Divide intrinsic rewards by their running standard deviation.
    pub normalize: bool,
}

impl RewardSpec {
    /// Defaults for `method`: five-member ensemble, `k = 10`, `alpha = 1`,
    /// `beta = 2`, normalization on for the prediction-error style rewards.
    pub fn new(method: RewardMethod) -> Self {
        Self {
            method,
            source: MatrixSource::Ensemble,
            n: 5,
            k: 10,
            alpha: 1.0,
            beta: 2.0,
            normalize: matches!(
                method,
                RewardMethod::Icm | RewardMethod::Rnd | RewardMethod::Disagreement
            ),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 || self.k == 0 {
            return Err(Error::InvalidSpec("reward n and k must be positive".into()));
        }
        let needs_ensemble = matches!(self.method, RewardMethod::Disagreement | RewardMethod::Nnm);
        if needs_ensemble && self.n < 2 {
            return Err(Error::DegenerateEnsemble(self.n));
        }
        if !(self.alpha.is_finite() && self.beta.is_finite()) || self.alpha < 0.0 || self.beta < 0.0 {
            return Err(Error::InvalidSpec(format!(
                "alpha and beta must be finite and non-negative (alpha={}, beta={})",
                self.alpha, self.beta
            )));
        }
        if self.alpha == 0.0 && self.beta == 0.0 {
            return Err(Error::InvalidSpec("alpha and beta are both zero".into()));
        }
        Ok(())
    }

    /// True when intrinsic rewards contribute nothing and need not be computed.
    pub fn extrinsic_only(&self) -> bool {
        self.alpha == 0.0
    }
}

/// An `m x n` matrix whose columns are encoded states.
#[derive(Debug, Clone, PartialEq)]
pub struct StateMatrix(DenseMatrix);

impl StateMatrix {
    pub fn new(z: DenseMatrix) -> Result<Self> {
        if z.cols() < 2 {
            return Err(Error::DegenerateEnsemble(z.cols()));
        }
        Ok(Self(z))
    }

    pub fn from_columns<C: AsRef<[f64]>>(columns: &[C]) -> Result<Self> {
        if columns.len() < 2 {
            return Err(Error::DegenerateEnsemble(columns.len()));
        }
        Self::new(DenseMatrix::from_columns(columns)?)
    }

    pub fn matrix(&self) -> &DenseMatrix {
        &self.0
    }

    pub fn into_matrix(self) -> DenseMatrix {
        self.0
    }

    /// Encoding dimension.
    pub fn m(&self) -> usize {
        self.0.rows()
    }

    /// Number of encoded states.
    pub fn n(&self) -> usize {
        self.0.cols()
    }
}

/// Nuclear-norm reward `|Z|_* / (|Z|_F sqrt(max(m, n)))`; 0 for the zero matrix.
pub fn nnm_reward(z: &StateMatrix) -> Result<f64> {
    let fro = matlin::frobenius_norm(z.matrix());
    if fro < ZERO_MATRIX_THRESHOLD {
        return Ok(0.0);
    }
    let nuclear = matlin::nuclear_norm(z.matrix())?;
    let scale = (z.m().max(z.n()) as f64).sqrt();
    Ok(nuclear / (fro * scale))
}

/// Population variance across predictions, averaged over dimensions.
pub fn disagreement_reward<V: AsRef<[f64]>>(predictions: &[V]) -> Result<f64> {
    if predictions.len() < 2 {
        return Err(Error::DegenerateEnsemble(predictions.len()));
    }
    let m = predictions[0].as_ref().len();
    if m == 0 {
        return Err(Error::Empty("prediction vectors"));
    }
    for p in predictions {
        if p.as_ref().len() != m {
            return Err(Error::dimension(
                "disagreement_reward",
                format!("length {m}"),
                format!("length {}", p.as_ref().len()),
            ));
        }
    }
    let n = predictions.len() as f64;
    let mut total = 0.0;
    for d in 0..m {
        let mean = predictions.iter().map(|p| p.as_ref()[d]).sum::<f64>() / n;
        let var = predictions
            .iter()
            .map(|p| {
                let e = p.as_ref()[d] - mean;
                e * e
            })
            .sum::<f64>()
            / n;
        total += var;
    }
    Ok(total / m as f64)
}

/// Squared forward-model error `|predicted - actual|^2`.
pub fn icm_reward(predicted: &[f64], actual: &[f64]) -> Result<f64> {
    squared_error("icm_reward", predicted, actual)
}

/// Squared distillation error between the trained predictor and the frozen target net.
pub fn rnd_reward(predictor_out: &[f64], frozen_out: &[f64]) -> Result<f64> {
    squared_error("rnd_reward", predictor_out, frozen_out)
}

fn squared_error(op: &'static str, a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::dimension(
            op,
            format!("length {}", a.len()),
            format!("length {}", b.len()),
        ));
    }
    Ok(matlin::squared_distance(a, b))
}

/// `sum_j ln(1 + |state - neighbor_j|^2)` over the supplied neighbours.
pub fn apt_reward<V: AsRef<[f64]>>(state: &[f64], neighbors: &[V]) -> Result<f64> {
    if neighbors.is_empty() {
        return Err(Error::Empty("APT neighbour list"));
    }
    let mut total = 0.0;
    for nb in neighbors {
        let d2 = squared_error("apt_reward", state, nb.as_ref())?;
        total += d2.ln_1p();
    }
    Ok(total)
}

/// `alpha * r_int + beta * r_ext`, without normalization.
pub fn combine(r_int: f64, r_ext: f64, spec: &RewardSpec) -> f64 {
    spec.alpha * r_int + spec.beta * r_ext
}

/// Welford accumulator over the full history.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunningStd {
    count: u64,
    mean: f64,
    m2: f64,
}

impl RunningStd {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, x: f64) {
        self.count += 1;
        let delta = x - self.mean;
        self.mean += delta / self.count as f64;
        self.m2 += delta * (x - self.mean);
    }

    pub fn count(&self) -> u64 {
        self.count
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    /// Population standard deviation; 0 before two samples.
    pub fn std(&self) -> f64 {
        if self.count < 2 {
            0.0
        } else {
            (self.m2 / self.count as f64).sqrt()
        }
    }
}

/// Mixes intrinsic and extrinsic rewards, normalizing the intrinsic part by
/// its running standard deviation when the spec asks for it.
#[derive(Debug, Clone)]
pub struct RewardMixer {
    spec: RewardSpec,
    stats: RunningStd,
}

impl RewardMixer {
    pub fn new(spec: RewardSpec) -> Self {
        Self {
            spec,
            stats: RunningStd::new(),
        }
    }

    pub fn spec(&self) -> &RewardSpec {
        &self.spec
    }

    /// Intrinsic reward after optional normalization. Updates the running
    /// statistics when normalization is on.
    pub fn normalize(&mut self, r_int: f64) -> f64 {
        if !self.spec.normalize {
            return r_int;
        }
        self.stats.push(r_int);
        let std = self.stats.std();
        if std > 1e-8 {
            r_int / std
        } else {
            r_int
        }
    }

    /// Returns `(normalized r_int, r_total)`.
    pub fn combine(&mut self, r_int: f64, r_ext: f64) -> (f64, f64) {
        let r = self.normalize(r_int);
        (r, combine(r, r_ext, &self.spec))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sm(cols: &[Vec<f64>]) -> StateMatrix {
        StateMatrix::from_columns(cols).unwrap()
    }

    #[test]
    fn nnm_identity_hits_upper_bound() {
        let z = StateMatrix::new(DenseMatrix::identity(4)).unwrap();
        assert!((nnm_reward(&z).unwrap() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn nnm_repeated_column_hits_lower_bound() {
        let mut v = vec![0.0; 9];
        v[2] = 0.6;
        v[7] = -0.8;
        let z = sm(&[v.clone(), v.clone(), v]);
        assert!((nnm_reward(&z).unwrap() - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn nnm_zero_matrix_is_zero() {
        let z = StateMatrix::new(DenseMatrix::zeros(3, 4)).unwrap();
        assert_eq!(nnm_reward(&z).unwrap(), 0.0);
    }

    #[test]
    fn state_matrix_needs_two_columns() {
        assert!(matches!(
            StateMatrix::new(DenseMatrix::zeros(3, 1)),
            Err(Error::DegenerateEnsemble(1))
        ));
    }

    #[test]
    fn disagreement_examples() {
        let a = vec![1.0, -2.0, 3.0];
        assert_eq!(disagreement_reward(&[a.clone(), a]).unwrap(), 0.0);
        assert_eq!(disagreement_reward(&[vec![0.0, 0.0], vec![2.0, 2.0]]).unwrap(), 1.0);
        assert!(matches!(
            disagreement_reward(&[vec![1.0]]),
            Err(Error::DegenerateEnsemble(1))
        ));
        assert!(disagreement_reward(&[vec![1.0], vec![1.0, 2.0]]).is_err());
    }

    #[test]
    fn icm_and_rnd_examples() {
        let p = [0.3, -1.0, 2.0];
        assert_eq!(icm_reward(&p, &p).unwrap(), 0.0);
        assert_eq!(icm_reward(&[1.0, 2.0, 2.0], &[0.0, 0.0, 0.0]).unwrap(), 9.0);
        assert_eq!(rnd_reward(&p, &p).unwrap(), 0.0);
        assert_eq!(rnd_reward(&[0.5, 0.5], &[0.0, 0.0]).unwrap(), 0.5);
        assert!(icm_reward(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn apt_examples() {
        let s = vec![1.0, 2.0];
        assert_eq!(apt_reward(&s, &[s.clone(), s.clone()]).unwrap(), 0.0);
        let e1 = std::f64::consts::E - 1.0;
        let nb = vec![1.0 + e1.sqrt(), 2.0];
        assert!((apt_reward(&s, &[nb]).unwrap() - 1.0).abs() < 1e-15);
        let empty: [Vec<f64>; 0] = [];
        assert!(matches!(apt_reward(&s, &empty), Err(Error::Empty(_))));
    }

    #[test]
    fn combine_examples() {
        let spec = RewardSpec::new(RewardMethod::Nnm);
        assert_eq!((spec.alpha, spec.beta), (1.0, 2.0));
        assert_eq!(combine(0.5, 1.0, &spec), 2.5);
        let intrinsic_only = RewardSpec { beta: 0.0, ..spec.clone() };
        assert_eq!(combine(0.37, 1.0, &intrinsic_only), 0.37);
        assert_eq!(combine(0.0, 0.0, &spec), 0.0);
    }

    #[test]
    fn spec_validation() {
        let mut spec = RewardSpec::new(RewardMethod::Disagreement);
        spec.n = 1;
        assert!(matches!(spec.validate(), Err(Error::DegenerateEnsemble(1))));
        let mut spec = RewardSpec::new(RewardMethod::Icm);
        spec.n = 1;
        assert!(spec.validate().is_ok());
        spec.alpha = 0.0;
        spec.beta = 0.0;
        assert!(spec.validate().is_err());
    }

    #[test]
    fn normalization_defaults() {
        assert!(!RewardSpec::new(RewardMethod::Nnm).normalize);
        assert!(RewardSpec::new(RewardMethod::Icm).normalize);
        assert!(RewardSpec::new(RewardMethod::Rnd).normalize);
        assert!(RewardSpec::new(RewardMethod::Disagreement).normalize);
    }

    #[test]
    fn welford_matches_two_pass() {
        let xs = [1.0, 4.0, -2.0, 0.5, 9.0, 3.25];
        let mut rs = RunningStd::new();
        xs.iter().for_each(|&x| rs.push(x));
        let mean = xs.iter().sum::<f64>() / xs.len() as f64;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / xs.len() as f64;
        assert!((rs.mean() - mean).abs() < 1e-12);
        assert!((rs.std() - var.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn mixer_without_normalization_is_combine() {
        let mut mixer = RewardMixer::new(RewardSpec::new(RewardMethod::Nnm));
        assert_eq!(mixer.combine(0.5, 1.0), (0.5, 2.5));
    }

    #[test]
    fn mixer_normalizes_by_running_std() {
        let mut spec = RewardSpec::new(RewardMethod::Icm);
        spec.beta = 0.0;
        let mut mixer = RewardMixer::new(spec);
        assert_eq!(mixer.combine(2.0, 0.0).0, 2.0);
        // history {2, 4}: population std 1
        assert_eq!(mixer.combine(4.0, 0.0).0, 4.0);
        let (r, total) = mixer.combine(6.0, 0.0);
        let std = (8.0_f64 / 3.0).sqrt();
        assert!((r - 6.0 / std).abs() < 1e-12);
        assert_eq!(r, total);
    }
}
