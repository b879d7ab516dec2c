//! JSON experiment configuration: the published schema, validation, and
//! construction of the sampler inputs it describes.

use std::path::{Path, PathBuf};
use std::time::Duration;

use anyhow::{bail, Context, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::Deserialize;
use tamis::adapt::{EmSettings, ResampleScheme};
use tamis::engine::{NtSchedule, TamisConfig};
use tamis::model::MixtureParams;
use tamis::targets::{BlackboxTarget, GaussianIid, Rosenbrock, Target};

/// One experiment: a target, an initial proposal family, an algorithm, and
/// the replication plan. Unknown keys are rejected so typos fail loudly.
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Short name echoed in logs; has no effect on the run.
    pub experiment: String,
    pub target: TargetSpec,
    pub init: InitSpec,
    pub algorithm: AlgorithmSpec,
    pub draws_per_stage: DrawsSpec,
    pub ess_min: f64,
    pub tau: f64,
    pub stop: StopSpec,
    #[serde(default)]
    pub em: EmSpec,
    #[serde(default)]
    pub resampling: ResamplingSpec,
    #[serde(default = "default_replicates")]
    pub replicates: u64,
    /// Base seed; replicate r runs with seed + r.
    pub seed: u64,
    /// Default output directory; the `--out` flag overrides it.
    #[serde(default)]
    pub output: Option<PathBuf>,
}

fn default_replicates() -> u64 {
    1
}

#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TargetSpec {
    /// Product of `dim` identical normal marginals.
    GaussianIid { mean: f64, variance: f64, dim: usize },
    /// Curved banana density; see the library's target documentation.
    Rosenbrock { sigma2: f64, b: f64, dim: usize },
    /// External density server spoken to over JSON lines.
    Blackbox {
        program: String,
        #[serde(default)]
        args: Vec<String>,
        dim: usize,
        #[serde(default = "default_timeout_secs")]
        timeout_secs: f64,
    },
}

fn default_timeout_secs() -> f64 {
    30.0
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum AlgorithmSpec {
    Tamis,
    Amis,
    Npmc {
        #[serde(default = "default_ladder_center")]
        ladder_center: f64,
    },
}

fn default_ladder_center() -> f64 {
    5.0
}

/// Either one draw count for every stage or an explicit per-stage list.
#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum DrawsSpec {
    Constant(usize),
    PerStage(Vec<usize>),
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StopSpec {
    /// Stop once the summed per-stage ESS exceeds this; omit to disable.
    #[serde(default)]
    pub cumulative_ess: Option<f64>,
    pub max_iterations: usize,
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EmSpec {
    #[serde(default = "default_em_steps")]
    pub max_steps: usize,
    #[serde(default = "default_em_rel_tol")]
    pub rel_tol: f64,
}

fn default_em_steps() -> usize {
    EmSettings::default().max_steps
}

fn default_em_rel_tol() -> f64 {
    EmSettings::default().rel_tol
}

impl Default for EmSpec {
    fn default() -> Self {
        EmSpec {
            max_steps: default_em_steps(),
            rel_tol: default_em_rel_tol(),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResamplingSpec {
    #[default]
    Systematic,
    Multinomial,
}

/// Initial mixture: component count, how means are drawn, and the shared
/// per-component covariance diagonal.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitSpec {
    pub components: usize,
    pub means: MeansSpec,
    pub variance: VarianceSpec,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum MeansSpec {
    /// Each mean coordinate drawn uniformly from [low, high].
    Uniform { low: f64, high: f64 },
    /// Each mean drawn from N(0, variance I).
    Gaussian { variance: f64 },
    /// Explicit means, one row of `dim` values per component.
    Fixed { values: Vec<Vec<f64>> },
}

#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum VarianceSpec {
    Isotropic { value: f64 },
    /// One variance per coordinate, shared by all components.
    Diagonal { values: Vec<f64> },
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading {}", path.display()))?;
        let cfg: ExperimentConfig = serde_json::from_str(&text)
            .with_context(|| format!("parsing {}", path.display()))?;
        Ok(cfg)
    }

    pub fn dim(&self) -> usize {
        match &self.target {
            TargetSpec::GaussianIid { dim, .. }
            | TargetSpec::Rosenbrock { dim, .. }
            | TargetSpec::Blackbox { dim, .. } => *dim,
        }
    }

    pub fn tamis_config(&self) -> TamisConfig {
        TamisConfig {
            n_per_stage: match &self.draws_per_stage {
                DrawsSpec::Constant(n) => NtSchedule::Constant(*n),
                DrawsSpec::PerStage(v) => NtSchedule::PerStage(v.clone()),
            },
            ess_min: self.ess_min,
            tau: self.tau,
            ess_predefined: self.stop.cumulative_ess.unwrap_or(f64::INFINITY),
            max_iterations: self.stop.max_iterations,
            bisection_tol: 1e-6,
            em: EmSettings {
                max_steps: self.em.max_steps,
                rel_tol: self.em.rel_tol,
            },
            resampling: match self.resampling {
                ResamplingSpec::Systematic => ResampleScheme::Systematic,
                ResamplingSpec::Multinomial => ResampleScheme::Multinomial,
            },
        }
    }

    pub fn build_target(&self) -> Result<Box<dyn Target>> {
        Ok(match &self.target {
            TargetSpec::GaussianIid {
                mean,
                variance,
                dim,
            } => Box::new(GaussianIid::new(*mean, *variance, *dim)?),
            TargetSpec::Rosenbrock { sigma2, b, dim } => {
                Box::new(Rosenbrock::new(*sigma2, *b, *dim)?)
            }
            TargetSpec::Blackbox {
                program,
                args,
                dim,
                timeout_secs,
            } => Box::new(BlackboxTarget::spawn(
                program,
                args,
                *dim,
                Duration::from_secs_f64(*timeout_secs),
            )?),
        })
    }

    /// Draws the initial proposal for one replicate from `rng`.
    pub fn build_proposal(&self, rng: &mut ChaCha8Rng) -> Result<MixtureParams> {
        let d = self.dim();
        let k = self.init.components;
        let means: Vec<f64> = match &self.init.means {
            MeansSpec::Uniform { low, high } => {
                (0..k * d).map(|_| rng.gen_range(*low..*high)).collect()
            }
            MeansSpec::Gaussian { variance } => {
                let sd = variance.sqrt();
                (0..k * d)
                    .map(|_| sd * rng.sample::<f64, _>(StandardNormal))
                    .collect()
            }
            MeansSpec::Fixed { values } => values.iter().flatten().copied().collect(),
        };
        let variances: Vec<f64> = match &self.init.variance {
            VarianceSpec::Isotropic { value } => vec![*value; k * d],
            VarianceSpec::Diagonal { values } => {
                values.iter().copied().cycle().take(k * d).collect()
            }
        };
        Ok(MixtureParams::new(
            vec![1.0 / k as f64; k],
            means,
            variances,
            d,
        )?)
    }

    /// True per-coordinate mean and covariance trace, where analytic.
    pub fn true_moments(&self) -> Option<(f64, f64)> {
        match &self.target {
            TargetSpec::GaussianIid {
                mean,
                variance,
                dim,
            } => Some((*mean, *dim as f64 * *variance)),
            _ => None,
        }
    }

    /// Full validation; hard violations are errors, the returned strings are
    /// advisory warnings to surface to the user.
    pub fn validate(&self) -> Result<Vec<String>> {
        if self.replicates < 1 {
            bail!("replicates must be >= 1");
        }
        let d = self.dim();
        let k = self.init.components;
        if k == 0 {
            bail!("init.components must be >= 1");
        }
        match &self.init.means {
            MeansSpec::Uniform { low, high } => {
                if !(low.is_finite() && high.is_finite() && low < high) {
                    bail!("init.means uniform needs finite low < high, got [{low}, {high}]");
                }
            }
            MeansSpec::Gaussian { variance } => {
                if !(variance.is_finite() && *variance > 0.0) {
                    bail!("init.means gaussian needs a positive variance, got {variance}");
                }
            }
            MeansSpec::Fixed { values } => {
                if values.len() != k {
                    bail!(
                        "init.means fixed has {} rows for {k} components",
                        values.len()
                    );
                }
                if values.iter().any(|row| row.len() != d) {
                    bail!("every fixed mean row must have dim = {d} entries");
                }
            }
        }
        if let VarianceSpec::Diagonal { values } = &self.init.variance {
            if values.len() != d {
                bail!(
                    "init.variance diagonal has {} entries for dim = {d}",
                    values.len()
                );
            }
        }
        if let TargetSpec::Blackbox { timeout_secs, .. } = &self.target {
            if !(timeout_secs.is_finite() && *timeout_secs > 0.0) {
                bail!("blackbox timeout_secs must be positive, got {timeout_secs}");
            }
        }
        // The probe proposal checks the numeric init values and gives the
        // engine config something to validate dimensions against. Seed
        // choice is irrelevant: only shapes and scales matter here.
        let mut probe_rng = ChaCha8Rng::seed_from_u64(self.seed);
        let probe = self
            .build_proposal(&mut probe_rng)
            .context("initial proposal")?;
        let warnings = self.tamis_config().validate(&probe)?;
        Ok(warnings)
    }
}
