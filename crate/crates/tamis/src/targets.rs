//! Target densities: analytic test targets and the JSON-lines subprocess
//! black box.

use crate::math::gauss_ln_pdf;
use crate::{Error, Result};
use std::fmt;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::process::{Child, ChildStdin, Command, Stdio};
use std::sync::mpsc;
use std::time::Duration;

/// An unnormalized log target density on R^d. Evaluation takes `&mut self`
/// because a target may hold external state (a subprocess, a counter).
///
/// Implementations return -inf where the density is zero and never NaN or
/// +inf; the engine treats those as hard evaluation failures.
pub trait Target {
    fn dim(&self) -> usize;
    fn log_density(&mut self, x: &[f64]) -> Result<f64>;
}

fn check_point(dim: usize, x: &[f64]) -> Result<()> {
    if x.len() != dim {
        return Err(Error::DimensionMismatch {
            expected: dim,
            got: x.len(),
        });
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("target evaluation point".into()));
    }
    Ok(())
}

/// Product of `dim` identical normal marginals N(mean, variance).
#[derive(Debug, Clone)]
pub struct GaussianIid {
    mean: f64,
    variance: f64,
    dim: usize,
}

impl GaussianIid {
    pub fn new(mean: f64, variance: f64, dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidParams("target dimension must be >= 1".into()));
        }
        if !mean.is_finite() || !variance.is_finite() || variance <= 0.0 {
            return Err(Error::InvalidParams(format!(
                "gaussian_iid needs finite mean and positive variance, got {mean}, {variance}"
            )));
        }
        Ok(GaussianIid {
            mean,
            variance,
            dim,
        })
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    pub fn variance(&self) -> f64 {
        self.variance
    }
}

impl Target for GaussianIid {
    fn dim(&self) -> usize {
        self.dim
    }

    fn log_density(&mut self, x: &[f64]) -> Result<f64> {
        check_point(self.dim, x)?;
        Ok(x.iter()
            .map(|&xi| gauss_ln_pdf(xi, self.mean, self.variance))
            .sum())
    }
}

/// Curved "banana" density: a standard product Gaussian with first marginal
/// variance `sigma2`, evaluated after the warp
///
///   y_1 = x_1,  y_2 = x_2 + b (x_1^2 - sigma2),  y_j = x_j (j >= 3).
///
/// The warp's Jacobian is lower triangular with unit diagonal, so |det J| = 1
/// and the density of x is the Gaussian density at y with no correction
/// factor. The mode sits at (0, b*sigma2, 0, ..., 0).
#[derive(Debug, Clone)]
pub struct Rosenbrock {
    sigma2: f64,
    b: f64,
    dim: usize,
}

impl Rosenbrock {
    pub fn new(sigma2: f64, b: f64, dim: usize) -> Result<Self> {
        if dim < 2 {
            return Err(Error::InvalidParams(
                "rosenbrock target needs dim >= 2".into(),
            ));
        }
        if !sigma2.is_finite() || sigma2 <= 0.0 || !b.is_finite() {
            return Err(Error::InvalidParams(format!(
                "rosenbrock needs positive sigma2 and finite b, got {sigma2}, {b}"
            )));
        }
        Ok(Rosenbrock { sigma2, b, dim })
    }

    pub fn mode(&self) -> Vec<f64> {
        let mut m = vec![0.0; self.dim];
        m[1] = self.b * self.sigma2;
        m
    }
}

impl Target for Rosenbrock {
    fn dim(&self) -> usize {
        self.dim
    }

    fn log_density(&mut self, x: &[f64]) -> Result<f64> {
        check_point(self.dim, x)?;
        let y2 = x[1] + self.b * (x[0] * x[0] - self.sigma2);
        let mut lp = gauss_ln_pdf(x[0], 0.0, self.sigma2) + gauss_ln_pdf(y2, 0.0, 1.0);
        for &xj in &x[2..] {
            lp += gauss_ln_pdf(xj, 0.0, 1.0);
        }
        Ok(lp)
    }
}

/// Wrapper that counts evaluations of the inner target.
#[derive(Debug)]
pub struct CountingTarget<T> {
    inner: T,
    count: u64,
}

impl<T: Target> CountingTarget<T> {
    pub fn new(inner: T) -> Self {
        CountingTarget { inner, count: 0 }
    }

    pub fn count(&self) -> u64 {
        self.count
    }

    pub fn into_inner(self) -> T {
        self.inner
    }
}

impl<T: Target> Target for CountingTarget<T> {
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn log_density(&mut self, x: &[f64]) -> Result<f64> {
        self.count += 1;
        self.inner.log_density(x)
    }
}

/// A log target served by a subprocess over JSON lines.
///
/// Protocol, one JSON document per line on the child's stdin/stdout:
///
/// ```text
/// client: {"hello":{"dim":D}}      server: {"hello":{"dim":D}}
/// client: {"x":[...D floats...]}   server: {"logpi":V}
/// ```
///
/// The handshake dimension must match. Every exchange is guarded by the
/// response timeout; a dead, silent or garbling child turns into an
/// [`Error::Blackbox`] on the evaluation that hits it. The child is killed
/// when the target is dropped.
pub struct BlackboxTarget {
    child: Child,
    stdin: BufWriter<ChildStdin>,
    lines: mpsc::Receiver<std::io::Result<String>>,
    dim: usize,
    evals: u64,
    timeout: Duration,
    desc: String,
}

impl BlackboxTarget {
    pub fn spawn(program: &str, args: &[String], dim: usize, timeout: Duration) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidParams("target dimension must be >= 1".into()));
        }
        let desc = if args.is_empty() {
            program.to_string()
        } else {
            format!("{program} {}", args.join(" "))
        };
        let mut child = Command::new(program)
            .args(args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .map_err(|e| Error::Blackbox(format!("failed to spawn {desc:?}: {e}")))?;
        let stdin = BufWriter::new(child.stdin.take().expect("piped stdin"));
        let stdout = child.stdout.take().expect("piped stdout");
        let (tx, lines) = mpsc::channel();
        std::thread::Builder::new()
            .name("blackbox-reader".into())
            .spawn(move || {
                for line in BufReader::new(stdout).lines() {
                    let stop = line.is_err();
                    if tx.send(line).is_err() || stop {
                        return;
                    }
                }
            })?;
        let mut target = BlackboxTarget {
            child,
            stdin,
            lines,
            dim,
            evals: 0,
            timeout,
            desc,
        };
        target.handshake()?;
        Ok(target)
    }

    fn handshake(&mut self) -> Result<()> {
        self.send_line(&format!("{{\"hello\":{{\"dim\":{}}}}}", self.dim))?;
        let line = self.recv_line("handshake")?;
        let v: serde_json::Value = serde_json::from_str(&line)
            .map_err(|e| self.protocol_error(&format!("handshake reply {line:?}: {e}")))?;
        let echoed = v
            .get("hello")
            .and_then(|h| h.get("dim"))
            .and_then(serde_json::Value::as_u64)
            .ok_or_else(|| self.protocol_error(&format!("handshake reply {line:?}")))?;
        if echoed as usize != self.dim {
            return Err(self.protocol_error(&format!(
                "dimension mismatch: asked for {}, server answered {echoed}",
                self.dim
            )));
        }
        Ok(())
    }

    fn protocol_error(&self, what: &str) -> Error {
        Error::Blackbox(format!("{}: {what}", self.desc))
    }

    fn send_line(&mut self, line: &str) -> Result<()> {
        let io = writeln!(self.stdin, "{line}").and_then(|_| self.stdin.flush());
        io.map_err(|e| self.protocol_error(&format!("write failed ({e})")))
    }

    fn recv_line(&mut self, during: &str) -> Result<String> {
        match self.lines.recv_timeout(self.timeout) {
            Ok(Ok(line)) => Ok(line),
            Ok(Err(e)) => Err(self.protocol_error(&format!("read failed during {during} ({e})"))),
            Err(mpsc::RecvTimeoutError::Timeout) => Err(self.protocol_error(&format!(
                "no response within {:?} during {during}",
                self.timeout
            ))),
            Err(mpsc::RecvTimeoutError::Disconnected) => {
                let status = match self.child.try_wait() {
                    Ok(Some(s)) => format!(" ({s})"),
                    _ => String::new(),
                };
                Err(self.protocol_error(&format!("process closed its output{status}")))
            }
        }
    }

    /// Number of completed density exchanges, handshake excluded.
    pub fn evaluations(&self) -> u64 {
        self.evals
    }
}

impl fmt::Debug for BlackboxTarget {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("BlackboxTarget")
            .field("command", &self.desc)
            .field("dim", &self.dim)
            .field("evals", &self.evals)
            .finish_non_exhaustive()
    }
}

impl Target for BlackboxTarget {
    fn dim(&self) -> usize {
        self.dim
    }

    fn log_density(&mut self, x: &[f64]) -> Result<f64> {
        check_point(self.dim, x)?;
        let req = serde_json::json!({ "x": x });
        self.send_line(&req.to_string())?;
        let line = self.recv_line("density request")?;
        let v: serde_json::Value = serde_json::from_str(&line)
            .map_err(|e| self.protocol_error(&format!("malformed reply {line:?}: {e}")))?;
        let logpi = v
            .get("logpi")
            .and_then(serde_json::Value::as_f64)
            .ok_or_else(|| self.protocol_error(&format!("reply {line:?} has no logpi")))?;
        if logpi.is_nan() || logpi == f64::INFINITY {
            return Err(self.protocol_error(&format!("non-finite logpi {logpi}")));
        }
        self.evals += 1;
        Ok(logpi)
    }
}

impl Drop for BlackboxTarget {
    fn drop(&mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}
