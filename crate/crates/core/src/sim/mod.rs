//! Seeded data generators for matched-pair studies with several outcomes.

mod plot;
mod studies;

pub use plot::{svg_grouped_bars, BarSeries};
pub use studies::*;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::design::{MatchedDesign, OutcomeMatrix};
use crate::error::{Error, Result};
use crate::scores::{Statistic, DEFAULT_TRIM};

/// Treatment-effect vector.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum TauKind {
    /// Evenly spaced from `lo` to `hi` across the outcomes.
    Linspace {
        lo: f64,
        hi: f64,
    },
    /// `value` on the first half of the outcomes, zero on the rest.
    Half {
        value: f64,
    },
    Custom {
        values: Vec<f64>,
    },
}

impl TauKind {
    pub fn linspace() -> Self {
        TauKind::Linspace { lo: 0.15, hi: 0.35 }
    }

    pub fn half() -> Self {
        TauKind::Half { value: 0.3 }
    }

    pub fn vector(&self, k: usize) -> Result<Vec<f64>> {
        Ok(match self {
            TauKind::Linspace { lo, hi } => {
                if k == 1 {
                    vec![*lo]
                } else {
                    (0..k)
                        .map(|j| lo + (hi - lo) * j as f64 / (k - 1) as f64)
                        .collect()
                }
            }
            TauKind::Half { value } => (0..k)
                .map(|j| if j < k / 2 { *value } else { 0.0 })
                .collect(),
            TauKind::Custom { values } => {
                if values.len() != k {
                    return Err(Error::Config(format!(
                        "custom tau has {} entries for {k} outcomes",
                        values.len()
                    )));
                }
                values.clone()
            }
        })
    }

    pub fn label(&self) -> String {
        match self {
            TauKind::Linspace { lo, hi } => format!("linspace({lo}, {hi})"),
            TauKind::Half { value } => format!("half({value})"),
            TauKind::Custom { .. } => "custom".into(),
        }
    }
}

/// Covariance of the control potential outcomes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum SigmaKind {
    Identity,
    /// `(1 - rho) I + rho 1 1'`.
    Equicorrelated {
        rho: f64,
    },
    Custom {
        rows: Vec<Vec<f64>>,
    },
}

impl SigmaKind {
    pub fn equicorrelated() -> Self {
        SigmaKind::Equicorrelated { rho: 0.2 }
    }

    pub fn matrix(&self, k: usize) -> Result<DMatrix<f64>> {
        Ok(match self {
            SigmaKind::Identity => DMatrix::identity(k, k),
            SigmaKind::Equicorrelated { rho } => {
                DMatrix::from_fn(k, k, |i, j| if i == j { 1.0 } else { *rho })
            }
            SigmaKind::Custom { rows } => {
                if rows.len() != k || rows.iter().any(|r| r.len() != k) {
                    return Err(Error::Config(format!(
                        "custom covariance must be {k} x {k}"
                    )));
                }
                DMatrix::from_fn(k, k, |i, j| rows[i][j])
            }
        })
    }

    /// Lower Cholesky factor; a non-positive-definite matrix is a config error.
    pub fn cholesky(&self, k: usize) -> Result<DMatrix<f64>> {
        let m = self.matrix(k)?;
        if (0..k).any(|i| (0..k).any(|j| m[(i, j)] != m[(j, i)])) {
            return Err(Error::Config("covariance matrix is not symmetric".into()));
        }
        m.cholesky()
            .map(|c| c.l())
            .ok_or_else(|| Error::Config("covariance matrix is not positive definite".into()))
    }

    pub fn label(&self) -> String {
        match self {
            SigmaKind::Identity => "identity".into(),
            SigmaKind::Equicorrelated { rho } => format!("equicorrelated({rho})"),
            SigmaKind::Custom { .. } => "custom".into(),
        }
    }
}

/// A simulation configuration. Missing fields take the defaults.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentSpec {
    /// Number of matched pairs `B`.
    pub pairs: usize,
    /// Number of outcomes `K`.
    pub outcomes: usize,
    pub tau: TauKind,
    pub sigma: SigmaKind,
    pub gamma_grid: Vec<f64>,
    pub alpha: f64,
    pub replicates: usize,
    pub seed: u64,
    #[serde(default = "default_statistic")]
    pub statistic: Statistic,
}

fn default_statistic() -> Statistic {
    Statistic::Huber { trim: DEFAULT_TRIM }
}

impl Default for ExperimentSpec {
    fn default() -> Self {
        Self {
            pairs: 500,
            outcomes: 4,
            tau: TauKind::linspace(),
            sigma: SigmaKind::Identity,
            gamma_grid: vec![1.0, 1.25, 1.5, 1.75],
            alpha: 0.05,
            replicates: 200,
            seed: 20_240_601,
            statistic: default_statistic(),
        }
    }
}

impl ExperimentSpec {
    pub fn validate(&self) -> Result<()> {
        if self.pairs == 0 {
            return Err(Error::Config("need at least one pair".into()));
        }
        if self.outcomes == 0 {
            return Err(Error::Config("need at least one outcome".into()));
        }
        if self.replicates == 0 {
            return Err(Error::Config("need at least one replicate".into()));
        }
        if let Some(g) = self
            .gamma_grid
            .iter()
            .find(|g| !(**g >= 1.0 && g.is_finite()))
        {
            return Err(Error::Config(format!("Gamma values must be >= 1, got {g}")));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::Config(format!(
                "alpha must lie in (0, 1), got {}",
                self.alpha
            )));
        }
        self.tau.vector(self.outcomes)?;
        self.sigma.cholesky(self.outcomes)?;
        Ok(())
    }
}

/// Bias in treatment assignment driven by some outcomes' potential values.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConfoundedAssignmentSpec {
    /// Odds that the unit with the larger driver sum is the treated one.
    pub bias_strength: f64,
    pub driver_outcomes: Vec<usize>,
}

impl ConfoundedAssignmentSpec {
    pub fn validate(&self, k: usize) -> Result<()> {
        if !(self.bias_strength >= 1.0 && self.bias_strength.is_finite()) {
            return Err(Error::Config(format!(
                "bias strength must be >= 1, got {}",
                self.bias_strength
            )));
        }
        if self.driver_outcomes.is_empty() {
            return Err(Error::Config(
                "at least one driver outcome is required".into(),
            ));
        }
        if let Some(&d) = self.driver_outcomes.iter().find(|&&d| d >= k) {
            return Err(Error::OutcomeIndex { index: d, count: k });
        }
        Ok(())
    }
}

/// One simulated study.
#[derive(Clone, Debug)]
pub struct SimulatedData {
    pub design: MatchedDesign,
    pub outcomes: OutcomeMatrix,
    /// `true` where the outcome has a nonzero effect.
    pub truth: Vec<bool>,
}

impl SimulatedData {
    /// Number of true nulls in `subset`.
    pub fn true_nulls_in(&self, subset: &[usize]) -> usize {
        subset.iter().filter(|&&k| !self.truth[k]).count()
    }
}

/// Generator for replicate `replicate` of a run seeded with `seed`: one
/// ChaCha stream per replicate, so replicates can run in any order.
pub fn replicate_rng(seed: u64, replicate: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(replicate);
    rng
}

/// Control potential outcomes for both units of every pair, `[pair][unit][k]`.
fn draw_controls(rng: &mut ChaCha8Rng, b: usize, l: &DMatrix<f64>) -> Vec<[Vec<f64>; 2]> {
    let k = l.nrows();
    let mut z = vec![0.0; k];
    let mut draw = |rng: &mut ChaCha8Rng| -> Vec<f64> {
        for v in z.iter_mut() {
            *v = rng.sample(StandardNormal);
        }
        (0..k)
            .map(|i| (0..=i).map(|j| l[(i, j)] * z[j]).sum())
            .collect()
    };
    (0..b).map(|_| [draw(rng), draw(rng)]).collect()
}

fn assemble(
    controls: &[[Vec<f64>; 2]],
    first_treated: &[bool],
    tau: &[f64],
) -> Result<(MatchedDesign, OutcomeMatrix)> {
    let k = tau.len();
    let b = controls.len();
    let mut columns = vec![Vec::with_capacity(2 * b); k];
    for (pair, &first) in controls.iter().zip(first_treated) {
        for (j, unit) in pair.iter().enumerate() {
            let treated = (j == 0) == first;
            for kk in 0..k {
                columns[kk].push(unit[kk] + if treated { tau[kk] } else { 0.0 });
            }
        }
    }
    let names = (1..=k).map(|j| format!("y{j}")).collect();
    let design = MatchedDesign::pairs(first_treated)?;
    Ok((design, OutcomeMatrix::inferred(names, columns)?))
}

/// Matched pairs with treatment assigned uniformly within each pair.
pub fn gen_matched_pairs(spec: &ExperimentSpec, replicate: u64) -> Result<SimulatedData> {
    spec.validate()?;
    let tau = spec.tau.vector(spec.outcomes)?;
    let l = spec.sigma.cholesky(spec.outcomes)?;
    let mut rng = replicate_rng(spec.seed, replicate);
    let controls = draw_controls(&mut rng, spec.pairs, &l);
    let first: Vec<bool> = (0..spec.pairs).map(|_| rng.random_bool(0.5)).collect();
    let (design, outcomes) = assemble(&controls, &first, &tau)?;
    Ok(SimulatedData {
        design,
        outcomes,
        truth: tau.iter().map(|&t| t != 0.0).collect(),
    })
}

/// Matched pairs where, in each pair, the unit with the larger sum of
/// driver-outcome potentials is treated with probability `G / (1 + G)`.
pub fn gen_confounded_pairs(
    spec: &ExperimentSpec,
    confound: &ConfoundedAssignmentSpec,
    replicate: u64,
) -> Result<SimulatedData> {
    spec.validate()?;
    confound.validate(spec.outcomes)?;
    if confound.bias_strength == 1.0 {
        return gen_matched_pairs(spec, replicate);
    }
    let tau = spec.tau.vector(spec.outcomes)?;
    let l = spec.sigma.cholesky(spec.outcomes)?;
    let mut rng = replicate_rng(spec.seed, replicate);
    let controls = draw_controls(&mut rng, spec.pairs, &l);
    let p_high = confound.bias_strength / (1.0 + confound.bias_strength);
    let first: Vec<bool> = controls
        .iter()
        .map(|pair| {
            // drivers are null outcomes, so treated and control potentials agree
            let s0: f64 = confound
                .driver_outcomes
                .iter()
                .map(|&d| pair[0][d] + tau[d])
                .sum();
            let s1: f64 = confound
                .driver_outcomes
                .iter()
                .map(|&d| pair[1][d] + tau[d])
                .sum();
            let high_is_first = s0 >= s1;
            let treat_high = rng.random_bool(p_high);
            high_is_first == treat_high
        })
        .collect();
    let (design, outcomes) = assemble(&controls, &first, &tau)?;
    Ok(SimulatedData {
        design,
        outcomes,
        truth: tau.iter().map(|&t| t != 0.0).collect(),
    })
}

/// Mean treated-minus-control difference per outcome.
pub fn mean_differences(data: &SimulatedData) -> Vec<f64> {
    let d = &data.design;
    (0..data.outcomes.num_outcomes())
        .map(|k| {
            let y = data.outcomes.column(k).expect("valid outcome");
            let mut acc = 0.0;
            let mut n = 0usize;
            for i in 0..d.num_strata() {
                let t = d.treated_unit(i);
                for u in d.range(i) {
                    if u != t {
                        acc += y[t] - y[u];
                        n += 1;
                    }
                }
            }
            acc / n as f64
        })
        .collect()
}

/// Number of pairs in the calibration pilot.
pub const PILOT_PAIRS: usize = 50_000;

/// Effect size for the affected outcomes that matches the spurious mean
/// difference the confounding induces on the driver outcomes, estimated
/// from one large pilot replicate with no true effects.
pub fn calibrate_effect(spec: &ExperimentSpec, confound: &ConfoundedAssignmentSpec) -> Result<f64> {
    let pilot = ExperimentSpec {
        pairs: PILOT_PAIRS,
        tau: TauKind::Custom {
            values: vec![0.0; spec.outcomes],
        },
        seed: spec.seed ^ 0x9E37_79B9_7F4A_7C15,
        ..spec.clone()
    };
    let data = gen_confounded_pairs(&pilot, confound, 0)?;
    let diffs = mean_differences(&data);
    let d: f64 = confound
        .driver_outcomes
        .iter()
        .map(|&k| diffs[k])
        .sum::<f64>()
        / confound.driver_outcomes.len() as f64;
    Ok(d)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tau_vectors() {
        assert_eq!(
            TauKind::half().vector(10).unwrap(),
            [0.3, 0.3, 0.3, 0.3, 0.3, 0.0, 0.0, 0.0, 0.0, 0.0]
        );
        let t = TauKind::linspace().vector(5).unwrap();
        assert!(
            (t[0] - 0.15).abs() < 1e-15
                && (t[4] - 0.35).abs() < 1e-15
                && (t[2] - 0.25).abs() < 1e-15
        );
    }

    #[test]
    fn non_pd_sigma_is_config_error() {
        let s = SigmaKind::Equicorrelated { rho: -0.6 };
        assert!(matches!(s.cholesky(3), Err(Error::Config(_))));
    }

    #[test]
    fn same_seed_same_data() {
        let spec = ExperimentSpec {
            pairs: 20,
            ..ExperimentSpec::default()
        };
        let a = gen_matched_pairs(&spec, 3).unwrap();
        let b = gen_matched_pairs(&spec, 3).unwrap();
        assert_eq!(a.outcomes, b.outcomes);
        assert_eq!(a.design, b.design);
        let c = gen_matched_pairs(&spec, 4).unwrap();
        assert_ne!(a.outcomes, c.outcomes);
    }

    #[test]
    fn unit_bias_is_unconfounded_generator() {
        let spec = ExperimentSpec {
            pairs: 30,
            ..ExperimentSpec::default()
        };
        let c = ConfoundedAssignmentSpec {
            bias_strength: 1.0,
            driver_outcomes: vec![3],
        };
        let d = gen_confounded_pairs(&spec, &c, 0).unwrap();
        let m = gen_matched_pairs(&spec, 0).unwrap();
        assert_eq!(d.outcomes, m.outcomes);
        assert_eq!(d.design, m.design);
    }
}
