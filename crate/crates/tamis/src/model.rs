//! Gaussian mixture proposals with diagonal covariances.

use crate::math::{log_sum_exp, LN_2PI};
use crate::{Error, Result};
use rand::Rng;
use rand_distr::StandardNormal;

/// Smallest admissible component weight. Weights below the floor are raised
/// to it and the vector renormalized, so log p_k stays finite.
pub const WEIGHT_FLOOR: f64 = 1e-8;

/// Parameters of a K-component Gaussian mixture on R^d with diagonal
/// covariances. Weights are strictly positive and sum to 1; variances are
/// strictly positive. Both are enforced at construction.
#[derive(Debug, Clone, PartialEq)]
pub struct MixtureParams {
    weights: Vec<f64>,   // K
    means: Vec<f64>,     // K*d, row-major by component
    variances: Vec<f64>, // K*d, row-major by component
    k: usize,
    d: usize,
    // Derived, kept consistent with the fields above:
    // ln w_k - 0.5 * sum_j (ln 2pi + ln var_kj), and 1/var.
    ln_weight_norm: Vec<f64>,
    inv_var: Vec<f64>,
}

impl MixtureParams {
    /// Builds a mixture from raw parameter vectors. `means` and `variances`
    /// are row-major `weights.len() x dim`. Weights may be unnormalized; they
    /// are floored at [`WEIGHT_FLOOR`] and rescaled to sum to 1.
    pub fn new(weights: Vec<f64>, means: Vec<f64>, variances: Vec<f64>, dim: usize) -> Result<Self> {
        let k = weights.len();
        if k == 0 || dim == 0 {
            return Err(Error::InvalidParams(
                "mixture needs at least one component and one dimension".into(),
            ));
        }
        if means.len() != k * dim || variances.len() != k * dim {
            return Err(Error::InvalidParams(format!(
                "expected {k}x{dim} means and variances, got {} and {}",
                means.len(),
                variances.len()
            )));
        }
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::InvalidParams("weights must be finite and >= 0".into()));
        }
        if means.iter().any(|m| !m.is_finite()) {
            return Err(Error::NonFinite("mixture mean".into()));
        }
        if variances.iter().any(|v| !v.is_finite() || *v <= 0.0) {
            return Err(Error::InvalidParams(
                "variances must be finite and strictly positive".into(),
            ));
        }
        let raw_sum: f64 = weights.iter().sum();
        if raw_sum <= 0.0 {
            return Err(Error::InvalidParams("weights sum to zero".into()));
        }
        let mut weights: Vec<f64> = weights
            .into_iter()
            .map(|w| (w / raw_sum).max(WEIGHT_FLOOR))
            .collect();
        let floored_sum: f64 = weights.iter().sum();
        for w in &mut weights {
            *w /= floored_sum;
        }

        let mut out = MixtureParams {
            weights,
            means,
            variances,
            k,
            d: dim,
            ln_weight_norm: Vec::new(),
            inv_var: Vec::new(),
        };
        out.rebuild_cache();
        Ok(out)
    }

    fn rebuild_cache(&mut self) {
        self.inv_var = self.variances.iter().map(|v| 1.0 / v).collect();
        self.ln_weight_norm = (0..self.k)
            .map(|c| {
                let row = &self.variances[c * self.d..(c + 1) * self.d];
                let ln_det: f64 = row.iter().map(|v| v.ln()).sum();
                self.weights[c].ln() - 0.5 * (self.d as f64 * LN_2PI + ln_det)
            })
            .collect();
    }

    pub fn n_components(&self) -> usize {
        self.k
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Mean vector of component `c`.
    pub fn mean(&self, c: usize) -> &[f64] {
        &self.means[c * self.d..(c + 1) * self.d]
    }

    /// Diagonal of the covariance of component `c`.
    pub fn variance(&self, c: usize) -> &[f64] {
        &self.variances[c * self.d..(c + 1) * self.d]
    }

    /// Mean of the mixture, sum_k w_k mu_k.
    pub fn mixture_mean(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.d];
        for c in 0..self.k {
            let mu = self.mean(c);
            for j in 0..self.d {
                out[j] += self.weights[c] * mu[j];
            }
        }
        out
    }

    /// Log-density of the mixture at `x`, computed as a log-sum-exp over the
    /// per-component Gaussian log-densities. Never returns +inf or NaN for
    /// finite input; -inf can only arise from underflow of every component in
    /// extended-real arithmetic.
    pub fn log_density(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.d {
            return Err(Error::DimensionMismatch {
                expected: self.d,
                got: x.len(),
            });
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("mixture evaluation point".into()));
        }
        Ok(self.log_density_unchecked(x))
    }

    #[inline]
    pub(crate) fn log_density_unchecked(&self, x: &[f64]) -> f64 {
        let mut per_comp = [0.0f64; 8];
        let mut heap;
        let buf: &mut [f64] = if self.k <= 8 {
            &mut per_comp[..self.k]
        } else {
            heap = vec![0.0; self.k];
            &mut heap
        };
        self.log_weighted_components(x, buf);
        log_sum_exp(buf)
    }

    /// Fills `out[c] = ln(w_c * N(x | mu_c, Sigma_c))` for every component.
    pub(crate) fn log_weighted_components(&self, x: &[f64], out: &mut [f64]) {
        debug_assert_eq!(out.len(), self.k);
        for c in 0..self.k {
            let mu = &self.means[c * self.d..(c + 1) * self.d];
            let iv = &self.inv_var[c * self.d..(c + 1) * self.d];
            let mut quad = 0.0;
            for j in 0..self.d {
                let diff = x[j] - mu[j];
                quad += diff * diff * iv[j];
            }
            out[c] = self.ln_weight_norm[c] - 0.5 * quad;
        }
    }

    /// Raw `K*d` variance vector, row-major by component.
    pub(crate) fn variance_entries(&self) -> &[f64] {
        &self.variances
    }

    /// Log-density at every row of `batch`.
    pub fn log_density_batch(&self, batch: &SampleBatch) -> Result<Vec<f64>> {
        if batch.dim() != self.d {
            return Err(Error::DimensionMismatch {
                expected: self.d,
                got: batch.dim(),
            });
        }
        Ok((0..batch.len())
            .map(|i| self.log_density_unchecked(batch.row(i)))
            .collect())
    }

    /// Draws `n` independent points: a component index from the categorical
    /// weights, then one normal draw per coordinate. The batch is tagged with
    /// `source_stage` 0; the engine re-tags it.
    pub fn sample<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Result<SampleBatch> {
        if n == 0 {
            return Err(Error::InvalidParams("sample size must be >= 1".into()));
        }
        let sds: Vec<f64> = self.variances.iter().map(|v| v.sqrt()).collect();
        let mut cum = Vec::with_capacity(self.k);
        let mut acc = 0.0;
        for w in &self.weights {
            acc += w;
            cum.push(acc);
        }
        let mut points = Vec::with_capacity(n * self.d);
        for _ in 0..n {
            let u: f64 = rng.gen();
            let c = cum.partition_point(|edge| *edge < u).min(self.k - 1);
            let mu = &self.means[c * self.d..(c + 1) * self.d];
            let sd = &sds[c * self.d..(c + 1) * self.d];
            for j in 0..self.d {
                let z: f64 = rng.sample(StandardNormal);
                points.push(mu[j] + sd[j] * z);
            }
        }
        SampleBatch::new(points, self.d, 0)
    }

    /// Serializes to a line-oriented text record with >= 17 significant
    /// digits per value, enough for an exact f64 round-trip.
    pub fn to_text_record(&self) -> String {
        let join = |v: &[f64]| {
            v.iter()
                .map(|x| format!("{x:.17e}"))
                .collect::<Vec<_>>()
                .join(" ")
        };
        format!(
            "mixture-params\nk {}\nd {}\nweights {}\nmeans {}\nvariances {}\n",
            self.k,
            self.d,
            join(&self.weights),
            join(&self.means),
            join(&self.variances)
        )
    }

    /// Parses the format written by [`Self::to_text_record`] and re-validates
    /// all invariants.
    pub fn from_text_record(text: &str) -> Result<Self> {
        let mut k: Option<usize> = None;
        let mut d: Option<usize> = None;
        let mut weights: Option<Vec<f64>> = None;
        let mut means: Option<Vec<f64>> = None;
        let mut variances: Option<Vec<f64>> = None;

        let bad = |what: &str| Error::InvalidParams(format!("mixture record: {what}"));
        let mut lines = text.lines();
        if lines.next().map(str::trim) != Some("mixture-params") {
            return Err(bad("missing mixture-params header"));
        }
        for line in lines {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let (field, rest) = line
                .split_once(' ')
                .ok_or_else(|| bad("malformed line"))?;
            let parse_floats = |s: &str| -> Result<Vec<f64>> {
                s.split_whitespace()
                    .map(|tok| {
                        tok.parse::<f64>()
                            .map_err(|_| bad(&format!("bad float {tok:?}")))
                    })
                    .collect()
            };
            match field {
                "k" => k = Some(rest.trim().parse().map_err(|_| bad("bad k"))?),
                "d" => d = Some(rest.trim().parse().map_err(|_| bad("bad d"))?),
                "weights" => weights = Some(parse_floats(rest)?),
                "means" => means = Some(parse_floats(rest)?),
                "variances" => variances = Some(parse_floats(rest)?),
                other => return Err(bad(&format!("unknown field {other:?}"))),
            }
        }
        let (k, d) = (k.ok_or_else(|| bad("missing k"))?, d.ok_or_else(|| bad("missing d"))?);
        let weights = weights.ok_or_else(|| bad("missing weights"))?;
        if weights.len() != k {
            return Err(bad("weights length does not match k"));
        }
        MixtureParams::new(
            weights,
            means.ok_or_else(|| bad("missing means"))?,
            variances.ok_or_else(|| bad("missing variances"))?,
            d,
        )
    }
}

/// A batch of draws, stored row-major `n x d`, tagged with the stage that
/// produced it. Points are always finite.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleBatch {
    points: Vec<f64>,
    n: usize,
    d: usize,
    source_stage: usize,
}

impl SampleBatch {
    /// Wraps a row-major matrix. `points.len()` must be a positive multiple
    /// of `dim` and every entry finite.
    pub fn new(points: Vec<f64>, dim: usize, source_stage: usize) -> Result<Self> {
        if dim == 0 || points.is_empty() || points.len() % dim != 0 {
            return Err(Error::InvalidParams(format!(
                "batch of {} values is not a non-empty multiple of dim {dim}",
                points.len()
            )));
        }
        if points.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("sample batch entry".into()));
        }
        let n = points.len() / dim;
        Ok(SampleBatch {
            points,
            n,
            d: dim,
            source_stage,
        })
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn source_stage(&self) -> usize {
        self.source_stage
    }

    pub fn with_source_stage(mut self, stage: usize) -> Self {
        self.source_stage = stage;
        self
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.points[i * self.d..(i + 1) * self.d]
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    /// New batch holding the listed rows (repeats allowed), same stage tag.
    pub fn gather(&self, indices: &[usize]) -> Result<Self> {
        if indices.is_empty() {
            return Err(Error::InvalidParams("gather of zero rows".into()));
        }
        let mut points = Vec::with_capacity(indices.len() * self.d);
        for &i in indices {
            points.extend_from_slice(self.row(i));
        }
        SampleBatch::new(points, self.d, self.source_stage)
    }
}
