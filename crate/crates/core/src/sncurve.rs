//! Synthetic S-N (Wohler) curves.
//!
//! A curve is the stress-life relation
//!
//! ```text
//! stress(N) = 10^(a * log10(N) + b) + d
//! ```
//!
//! sampled on a log-spaced grid of cycle counts. This module evaluates,
//! samples, fits, partitions and persists such curves, and owns the min-max
//! stress scaler the networks consume.

use std::fs;
use std::io::Write;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::kv::KvDocument;

/// Coefficients and sampling grid of one S-N curve.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SnCurveParams {
    /// Slope in log-log space (negative for a decreasing curve).
    pub a: f64,
    /// Intercept in log-log space.
    pub b: f64,
    /// Stress offset in MPa, the asymptote the curve decays toward.
    pub d: f64,
    pub n_min: f64,
    pub n_max: f64,
    pub n_points: usize,
}

impl SnCurveParams {
    pub fn new(a: f64, b: f64, d: f64, n_min: f64, n_max: f64, n_points: usize) -> Result<Self> {
        let params = SnCurveParams {
            a,
            b,
            d,
            n_min,
            n_max,
            n_points,
        };
        params.validate()?;
        Ok(params)
    }

    /// Checks the hard invariants. Returns the soft warnings (currently only
    /// a non-negative slope) so callers can surface them.
    pub fn validate(&self) -> Result<Vec<String>> {
        if !(self.a.is_finite() && self.b.is_finite() && self.d.is_finite()) {
            return Err(Error::Argument(format!(
                "curve coefficients must be finite (a={}, b={}, d={})",
                self.a, self.b, self.d
            )));
        }
        check_grid_bounds(self.n_min, self.n_max, self.n_points)?;
        let mut warnings = Vec::new();
        if self.a >= 0.0 {
            warnings.push(format!(
                "slope a={} is not negative; the S-N curve will not decrease with cycles",
                self.a
            ));
        }
        Ok(warnings)
    }

    pub fn evaluate(&self, n: f64) -> Result<f64> {
        evaluate_sn_curve(self, n)
    }

    pub fn grid(&self) -> Result<Vec<f64>> {
        log_spaced_grid(self.n_min, self.n_max, self.n_points)
    }

    /// Builds params from one section of a key-value document.
    pub fn from_kv(doc: &KvDocument, section: &str) -> Result<Self> {
        let params = SnCurveParams {
            a: doc.get_parsed(section, "a")?,
            b: doc.get_parsed(section, "b")?,
            d: doc.get_parsed(section, "d")?,
            n_min: doc.get_parsed(section, "n_min")?,
            n_max: doc.get_parsed(section, "n_max")?,
            n_points: doc.get_parsed(section, "n_points")?,
        };
        params.validate()?;
        Ok(params)
    }
}

/// A named curve as stored in a parameter file.
#[derive(Debug, Clone, PartialEq)]
pub struct CurveSpec {
    pub label: String,
    pub params: SnCurveParams,
}

/// Reads every section of a curve parameter file. Each section must carry
/// the keys `a, b, d, n_min, n_max, n_points`; `label` defaults to the
/// section name.
pub fn read_curve_file(path: &Path) -> Result<Vec<CurveSpec>> {
    let doc = KvDocument::read(path)?;
    parse_curve_doc(&doc)
}

pub fn parse_curve_doc(doc: &KvDocument) -> Result<Vec<CurveSpec>> {
    let mut curves = Vec::new();
    for section in doc.sections() {
        if section.is_empty() {
            continue;
        }
        let params = SnCurveParams::from_kv(doc, section)?;
        let label = doc
            .get(section, "label")
            .map(str::to_string)
            .unwrap_or_else(|| section.to_string());
        curves.push(CurveSpec { label, params });
    }
    Ok(curves)
}

fn check_grid_bounds(n_min: f64, n_max: f64, count: usize) -> Result<()> {
    if !(n_min.is_finite() && n_max.is_finite()) || n_min <= 0.0 || n_max <= n_min {
        return Err(Error::Argument(format!(
            "grid bounds must satisfy 0 < n_min < n_max, got n_min={n_min}, n_max={n_max}"
        )));
    }
    if count < 2 {
        return Err(Error::Argument(format!(
            "grid needs at least 2 points, got {count}"
        )));
    }
    Ok(())
}

/// `10^(a*log10(n) + b) + d`.
pub fn evaluate_sn_curve(params: &SnCurveParams, n: f64) -> Result<f64> {
    if !(n > 0.0) || !n.is_finite() {
        return Err(Error::Domain(format!(
            "cycle count must be positive and finite, got {n}"
        )));
    }
    let stress = 10f64.powf(params.a * n.log10() + params.b) + params.d;
    if !stress.is_finite() {
        return Err(Error::Numeric("evaluate_sn_curve"));
    }
    Ok(stress)
}

/// `count` points equally spaced in log10 between `n_min` and `n_max`,
/// both endpoints included and pinned exactly.
pub fn log_spaced_grid(n_min: f64, n_max: f64, count: usize) -> Result<Vec<f64>> {
    check_grid_bounds(n_min, n_max, count)?;
    let lo = n_min.log10();
    let hi = n_max.log10();
    let step = (hi - lo) / (count - 1) as f64;
    let mut grid: Vec<f64> = (0..count)
        .map(|i| 10f64.powf(lo + i as f64 * step))
        .collect();
    grid[0] = n_min;
    grid[count - 1] = n_max;
    Ok(grid)
}

/// Ordered (cycles, stress) samples with a training prefix.
#[derive(Debug, Clone, PartialEq)]
pub struct SnSeries {
    cycles: Vec<f64>,
    stress: Vec<f64>,
    pub label: String,
    train_count: usize,
}

impl SnSeries {
    /// The training region defaults to the whole series.
    pub fn new(cycles: Vec<f64>, stress: Vec<f64>, label: impl Into<String>) -> Result<Self> {
        if cycles.len() != stress.len() {
            return Err(Error::Argument(format!(
                "cycles and stress lengths differ ({} vs {})",
                cycles.len(),
                stress.len()
            )));
        }
        if let Some(i) = stress.iter().position(|s| !s.is_finite()) {
            return Err(Error::Argument(format!("stress[{i}] is not finite")));
        }
        if let Some(i) = cycles.iter().position(|c| !c.is_finite()) {
            return Err(Error::Argument(format!("cycles[{i}] is not finite")));
        }
        if let Some(i) = cycles.windows(2).position(|w| w[1] <= w[0]) {
            return Err(Error::Argument(format!(
                "cycles must be strictly increasing (index {} -> {})",
                i,
                i + 1
            )));
        }
        let train_count = cycles.len();
        Ok(SnSeries {
            cycles,
            stress,
            label: label.into(),
            train_count,
        })
    }

    pub fn len(&self) -> usize {
        self.cycles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cycles.is_empty()
    }

    pub fn cycles(&self) -> &[f64] {
        &self.cycles
    }

    pub fn stress(&self) -> &[f64] {
        &self.stress
    }

    pub fn train_count(&self) -> usize {
        self.train_count
    }

    pub fn train_stress(&self) -> &[f64] {
        &self.stress[..self.train_count]
    }

    pub fn test_stress(&self) -> &[f64] {
        &self.stress[self.train_count..]
    }

    pub fn train_cycles(&self) -> &[f64] {
        &self.cycles[..self.train_count]
    }

    pub fn test_cycles(&self) -> &[f64] {
        &self.cycles[self.train_count..]
    }
}

/// Samples the curve on its grid and adds seeded Gaussian noise.
pub fn synthesize_series(
    params: &SnCurveParams,
    label: &str,
    noise_std: f64,
    seed: u64,
) -> Result<SnSeries> {
    if !(noise_std >= 0.0) || !noise_std.is_finite() {
        return Err(Error::Argument(format!(
            "noise_std must be finite and non-negative, got {noise_std}"
        )));
    }
    params.validate()?;
    let cycles = params.grid()?;
    let mut stress = cycles
        .iter()
        .map(|&n| evaluate_sn_curve(params, n))
        .collect::<Result<Vec<_>>>()?;
    if noise_std > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, noise_std).expect("validated std");
        for s in &mut stress {
            *s += normal.sample(&mut rng);
        }
    }
    SnSeries::new(cycles, stress, label)
}

/// Marks the first `train_count` points as the training region.
pub fn split_series(series: &SnSeries, train_count: usize) -> Result<SnSeries> {
    if train_count > series.len() {
        return Err(Error::Argument(format!(
            "train_count {} exceeds series length {}",
            train_count,
            series.len()
        )));
    }
    let mut out = series.clone();
    out.train_count = train_count;
    Ok(out)
}

/// Result of [`fit_sn_params`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SnFit {
    pub a: f64,
    pub b: f64,
    pub d: f64,
    /// Euclidean norm of the stress residuals at the solution, in MPa.
    pub residual_norm: f64,
    pub iterations: usize,
}

impl SnFit {
    /// Reattaches the series grid bounds to the fitted coefficients.
    pub fn to_params(&self, series: &SnSeries) -> Result<SnCurveParams> {
        let cycles = series.cycles();
        SnCurveParams::new(
            self.a,
            self.b,
            self.d,
            cycles[0],
            cycles[cycles.len() - 1],
            cycles.len(),
        )
    }
}

const D_GRID_STEPS: usize = 256;
const LM_MAX_ITER: usize = 500;

/// Least-squares fit of `(a, b, d)` to every point of the series.
///
/// For fixed `d` the model is linear in `(a, b)` after taking
/// `log10(stress - d)`, so `d` is scanned over `[0, min(stress))` with a
/// closed-form line fit at each candidate. The best candidate seeds a
/// Levenberg-Marquardt refinement on the untransformed residuals.
pub fn fit_sn_params(series: &SnSeries) -> Result<SnFit> {
    if series.len() < 3 {
        return Err(Error::Fit {
            reason: format!("need at least 3 points, got {}", series.len()),
            a: f64::NAN,
            b: f64::NAN,
            d: f64::NAN,
        });
    }
    let x: Vec<f64> = series.cycles().iter().map(|n| n.log10()).collect();
    let y = series.stress();
    let y_min = y.iter().copied().fold(f64::INFINITY, f64::min);
    let y_max = y.iter().copied().fold(f64::NEG_INFINITY, f64::max);

    if y_max - y_min <= 1e-12 * y_max.abs().max(1.0) {
        // Flat data: any (b, d) with 10^b + d = level fits; pick d = level / 2.
        let d = 0.5 * y_min;
        return Ok(SnFit {
            a: 0.0,
            b: (y_min - d).log10(),
            d,
            residual_norm: 0.0,
            iterations: 0,
        });
    }
    if y_min <= 0.0 {
        return Err(Error::Fit {
            reason: format!("stress must be positive for the offset scan, min is {y_min}"),
            a: f64::NAN,
            b: f64::NAN,
            d: f64::NAN,
        });
    }

    let mut best: Option<(f64, f64, f64, f64)> = None;
    for k in 0..D_GRID_STEPS {
        let d = y_min * k as f64 / D_GRID_STEPS as f64;
        let logs: Vec<f64> = y.iter().map(|&s| (s - d).log10()).collect();
        let Some((a, b)) = line_fit(&x, &logs) else {
            continue;
        };
        let sse = sse(&x, y, a, b, d);
        if sse.is_finite() && best.map_or(true, |(.., e)| sse < e) {
            best = Some((a, b, d, sse));
        }
    }
    let (a0, b0, d0, _) = best.ok_or_else(|| Error::Fit {
        reason: "offset scan produced no finite candidate".into(),
        a: f64::NAN,
        b: f64::NAN,
        d: f64::NAN,
    })?;
    levenberg_marquardt(&x, y, a0, b0, d0)
}

fn line_fit(x: &[f64], y: &[f64]) -> Option<(f64, f64)> {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx) = (0.0, 0.0);
    for (&xi, &yi) in x.iter().zip(y) {
        sxy += (xi - mx) * (yi - my);
        sxx += (xi - mx) * (xi - mx);
    }
    if sxx == 0.0 || !sxy.is_finite() {
        return None;
    }
    let a = sxy / sxx;
    Some((a, my - a * mx))
}

fn sse(x: &[f64], y: &[f64], a: f64, b: f64, d: f64) -> f64 {
    x.iter()
        .zip(y)
        .map(|(&xi, &yi)| {
            let r = 10f64.powf(a * xi + b) + d - yi;
            r * r
        })
        .sum()
}

/// Refines `(a, b, d)` in centred coordinates `10^(a*(x - xm) + c) + d`,
/// which decorrelates the slope and intercept columns of the Jacobian.
fn levenberg_marquardt(x: &[f64], y: &[f64], a0: f64, b0: f64, d0: f64) -> Result<SnFit> {
    let ln10 = std::f64::consts::LN_10;
    let xm = x.iter().sum::<f64>() / x.len() as f64;
    let xc: Vec<f64> = x.iter().map(|v| v - xm).collect();
    let mut p = [a0, b0 + a0 * xm, d0];
    let cost = |p: &[f64; 3]| -> f64 {
        xc.iter()
            .zip(y)
            .map(|(&xi, &yi)| {
                let r = 10f64.powf(p[0] * xi + p[1]) + p[2] - yi;
                r * r
            })
            .sum()
    };
    let mut current = cost(&p);
    let mut lambda = 1e-3;
    for iter in 0..LM_MAX_ITER {
        let iterations = iter + 1;
        let mut jtj = [[0.0; 3]; 3];
        let mut jtr = [0.0; 3];
        for (&xi, &yi) in xc.iter().zip(y) {
            let e = 10f64.powf(p[0] * xi + p[1]);
            let r = e + p[2] - yi;
            let j = [ln10 * xi * e, ln10 * e, 1.0];
            for row in 0..3 {
                jtr[row] += j[row] * r;
                for col in 0..3 {
                    jtj[row][col] += j[row] * j[col];
                }
            }
        }
        let mut accepted = false;
        while lambda < 1e16 {
            let mut m = jtj;
            for k in 0..3 {
                m[k][k] += lambda * jtj[k][k].max(1e-300);
            }
            let rhs = [-jtr[0], -jtr[1], -jtr[2]];
            let Some(step) = solve3(m, rhs) else {
                lambda *= 10.0;
                continue;
            };
            let trial = [p[0] + step[0], p[1] + step[1], p[2] + step[2]];
            let trial_cost = cost(&trial);
            if trial_cost.is_finite() && trial_cost <= current {
                let moved = step
                    .iter()
                    .zip(&p)
                    .map(|(s, v)| s.abs() / v.abs().max(1.0))
                    .fold(0.0, f64::max);
                p = trial;
                current = trial_cost;
                lambda = (lambda * 0.1).max(1e-12);
                accepted = true;
                if moved < 1e-15 {
                    return Ok(finish(p, xm, current, iterations));
                }
                break;
            }
            lambda *= 10.0;
        }
        if !accepted {
            // No downhill step at any damping: we are at a minimum to machine precision.
            return Ok(finish(p, xm, current, iterations));
        }
    }
    let a = p[0];
    Err(Error::Fit {
        reason: format!("no convergence after {LM_MAX_ITER} iterations"),
        a,
        b: p[1] - a * xm,
        d: p[2],
    })
}

fn finish(p: [f64; 3], xm: f64, cost: f64, iterations: usize) -> SnFit {
    SnFit {
        a: p[0],
        b: p[1] - p[0] * xm,
        d: p[2],
        residual_norm: cost.sqrt(),
        iterations,
    }
}

fn solve3(mut m: [[f64; 3]; 3], mut rhs: [f64; 3]) -> Option<[f64; 3]> {
    for col in 0..3 {
        let pivot = (col..3).max_by(|&i, &j| m[i][col].abs().total_cmp(&m[j][col].abs()))?;
        if m[pivot][col].abs() < 1e-300 {
            return None;
        }
        m.swap(col, pivot);
        rhs.swap(col, pivot);
        for row in col + 1..3 {
            let f = m[row][col] / m[col][col];
            for k in col..3 {
                m[row][k] -= f * m[col][k];
            }
            rhs[row] -= f * rhs[col];
        }
    }
    let mut out = [0.0; 3];
    for row in (0..3).rev() {
        let mut acc = rhs[row];
        for k in row + 1..3 {
            acc -= m[row][k] * out[k];
        }
        out[row] = acc / m[row][row];
    }
    out.iter().all(|v| v.is_finite()).then_some(out)
}

/// Min-max stress normalization fitted on a training region.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScalerState {
    pub stress_min: f64,
    pub stress_max: f64,
}

impl ScalerState {
    pub fn new(stress_min: f64, stress_max: f64) -> Result<Self> {
        if !(stress_min.is_finite() && stress_max.is_finite()) || stress_max <= stress_min {
            return Err(Error::Scaler(format!(
                "need stress_max > stress_min, got [{stress_min}, {stress_max}]"
            )));
        }
        Ok(ScalerState {
            stress_min,
            stress_max,
        })
    }

    pub fn range(&self) -> f64 {
        self.stress_max - self.stress_min
    }

    /// Maps `stress_min` to 0 and `stress_max` to 1. Values outside the
    /// fitted range extrapolate linearly.
    pub fn scale(&self, stress: f64) -> f64 {
        (stress - self.stress_min) / self.range()
    }

    pub fn unscale(&self, value: f64) -> f64 {
        value * self.range() + self.stress_min
    }

    pub fn scale_all(&self, stress: &[f64]) -> Vec<f64> {
        stress.iter().map(|&s| self.scale(s)).collect()
    }

    pub fn unscale_all(&self, values: &[f64]) -> Vec<f64> {
        values.iter().map(|&v| self.unscale(v)).collect()
    }
}

/// Fits the scaler on the training region of `series` only.
pub fn fit_scaler(series: &SnSeries) -> Result<ScalerState> {
    fit_scaler_on(series.train_stress())
}

pub fn fit_scaler_on(stress: &[f64]) -> Result<ScalerState> {
    if stress.is_empty() {
        return Err(Error::Scaler("training region is empty".into()));
    }
    let lo = stress.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = stress.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if hi <= lo {
        return Err(Error::Scaler(format!(
            "training region is constant at {lo} MPa"
        )));
    }
    ScalerState::new(lo, hi)
}

pub const SERIES_CSV_HEADER: &str = "cycles,stress_mpa";

/// Writes `cycles,stress_mpa` rows using shortest round-trip decimals.
pub fn write_series_csv(series: &SnSeries, path: &Path) -> Result<()> {
    let mut out = String::with_capacity(32 * (series.len() + 1));
    out.push_str(SERIES_CSV_HEADER);
    out.push('\n');
    for (c, s) in series.cycles().iter().zip(series.stress()) {
        out.push_str(&format!("{c},{s}\n"));
    }
    write_file(path, out.as_bytes())
}

pub fn read_series_csv(path: &Path) -> Result<SnSeries> {
    let text = fs::read_to_string(path)
        .map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    let parse_err = |line: usize, msg: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        msg,
    };
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, header)) if header.trim() == SERIES_CSV_HEADER => {}
        Some((_, header)) => {
            return Err(parse_err(
                1,
                format!("expected header `{SERIES_CSV_HEADER}`, found `{header}`"),
            ))
        }
        None => return Err(Error::EmptySeries(path.to_path_buf())),
    }
    let mut cycles = Vec::new();
    let mut stress = Vec::new();
    for (idx, raw) in lines {
        let line_no = idx + 1;
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        let mut fields = line.split(',');
        let (Some(c), Some(s), None) = (fields.next(), fields.next(), fields.next()) else {
            return Err(parse_err(line_no, format!("expected 2 fields, got `{line}`")));
        };
        let c: f64 = c
            .trim()
            .parse()
            .map_err(|_| parse_err(line_no, format!("cycles `{c}` is not a number")))?;
        let s: f64 = s
            .trim()
            .parse()
            .map_err(|_| parse_err(line_no, format!("stress `{s}` is not a number")))?;
        if !c.is_finite() || c <= 0.0 {
            return Err(parse_err(line_no, format!("cycles must be positive, got {c}")));
        }
        if !s.is_finite() {
            return Err(parse_err(line_no, format!("stress must be finite, got {s}")));
        }
        if let Some(&prev) = cycles.last() {
            if c <= prev {
                return Err(parse_err(
                    line_no,
                    format!("cycles must be strictly increasing ({prev} then {c})"),
                ));
            }
        }
        cycles.push(c);
        stress.push(s);
    }
    if cycles.is_empty() {
        return Err(Error::EmptySeries(path.to_path_buf()));
    }
    let label = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    SnSeries::new(cycles, stress, label)
}

pub(crate) fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut f = fs::File::create(path)
        .map_err(|e| Error::io(format!("creating {}", path.display()), e))?;
    f.write_all(bytes)
        .map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params(a: f64, b: f64, d: f64) -> SnCurveParams {
        SnCurveParams::new(a, b, d, 5e3, 3e6, 1000).unwrap()
    }

    #[test]
    fn evaluate_examples() {
        let v = evaluate_sn_curve(&params(-0.1, 3.0, 100.0), 1e4).unwrap();
        // 10^2.6 = 398.1071705534972...
        assert!((v - 498.107_170_553_497_2).abs() < 1e-9, "{v}");

        let flat = params(0.0, 2.0, 0.0);
        for n in [1.0, 7.5e3, 1e9] {
            assert!((evaluate_sn_curve(&flat, n).unwrap() - 100.0).abs() < 1e-12);
        }

        let v = evaluate_sn_curve(&params(-0.5, 5.0, 50.0), 1e4).unwrap();
        assert!((v - 1050.0).abs() < 1e-9, "{v}");
    }

    #[test]
    fn evaluate_rejects_non_positive_cycles() {
        let p = params(-0.1, 3.0, 100.0);
        assert!(matches!(evaluate_sn_curve(&p, 0.0), Err(Error::Domain(_))));
        assert!(matches!(evaluate_sn_curve(&p, -5.0), Err(Error::Domain(_))));
        assert!(matches!(evaluate_sn_curve(&p, f64::NAN), Err(Error::Domain(_))));
    }

    #[test]
    fn grid_examples() {
        let g = log_spaced_grid(10.0, 1000.0, 3).unwrap();
        assert_eq!(g[0], 10.0);
        assert!((g[1] - 100.0).abs() < 1e-12);
        assert_eq!(g[2], 1000.0);

        let g = log_spaced_grid(5e3, 3e6, 1000).unwrap();
        assert_eq!(g.len(), 1000);
        assert_eq!(g[0], 5000.0);
        assert_eq!(g[999], 3_000_000.0);
        // Closed form: 10^(log10(5e3) + 599 * log10(600) / 999).
        let expected = 10f64.powf(5e3f64.log10() + 599.0 * 600f64.log10() / 999.0);
        assert!((g[599] - expected).abs() / expected < 1e-12);
        assert!((g[599] - 2.316e5).abs() / 2.316e5 < 1e-3, "{}", g[599]);
    }

    #[test]
    fn grid_rejects_bad_arguments() {
        assert!(matches!(log_spaced_grid(0.0, 10.0, 5), Err(Error::Argument(_))));
        assert!(matches!(log_spaced_grid(10.0, 10.0, 5), Err(Error::Argument(_))));
        assert!(matches!(log_spaced_grid(100.0, 10.0, 5), Err(Error::Argument(_))));
        assert!(matches!(log_spaced_grid(1.0, 10.0, 1), Err(Error::Argument(_))));
    }

    #[test]
    fn positive_slope_is_only_a_warning() {
        let p = SnCurveParams::new(0.1, 2.0, 0.0, 1.0, 10.0, 4).unwrap();
        assert_eq!(p.validate().unwrap().len(), 1);
        assert!(params(-0.1, 2.0, 0.0).validate().unwrap().is_empty());
    }

    #[test]
    fn synthesize_noise_free_matches_curve() {
        let p = params(-0.25, 3.6, 100.0);
        let s = synthesize_series(&p, "axial", 0.0, 7).unwrap();
        for (&n, &v) in s.cycles().iter().zip(s.stress()) {
            assert_eq!(v, evaluate_sn_curve(&p, n).unwrap());
        }
        assert_eq!(s.train_count(), s.len());
    }

    #[test]
    fn synthesize_is_seeded() {
        let p = params(-0.25, 3.6, 100.0);
        let a = synthesize_series(&p, "x", 2.0, 1).unwrap();
        let b = synthesize_series(&p, "x", 2.0, 1).unwrap();
        let c = synthesize_series(&p, "x", 2.0, 2).unwrap();
        assert_eq!(a, b);
        assert!(a.stress().iter().zip(c.stress()).any(|(x, y)| x != y));
        assert!(synthesize_series(&p, "x", -1.0, 1).is_err());
    }

    #[test]
    fn split_examples() {
        let s = synthesize_series(&params(-0.25, 3.6, 100.0), "axial", 0.0, 0).unwrap();
        let axial = split_series(&s, 600).unwrap();
        let last = axial.train_cycles()[599];
        assert!((last - 2.31e5).abs() / 2.31e5 < 0.01, "{last}");
        assert_eq!(axial.test_stress().len(), 400);
        assert_eq!(axial.stress(), s.stress());

        let tors = split_series(&s, 300).unwrap();
        let last = tors.train_cycles()[299];
        assert!((last - 3.4e4).abs() / 3.4e4 < 0.02, "{last}");

        let none = split_series(&s, 0).unwrap();
        assert!(none.train_stress().is_empty());
        assert_eq!(none.test_stress().len(), 1000);

        assert!(matches!(split_series(&s, 1001), Err(Error::Argument(_))));
    }

    #[test]
    fn fit_recovers_noise_free_params() {
        let p = params(-0.2, 4.0, 80.0);
        let s = synthesize_series(&p, "x", 0.0, 0).unwrap();
        let fit = fit_sn_params(&s).unwrap();
        assert!((fit.a + 0.2).abs() < 1e-6, "{fit:?}");
        assert!((fit.b - 4.0).abs() < 1e-6, "{fit:?}");
        assert!((fit.d - 80.0).abs() < 1e-6, "{fit:?}");
        assert!(fit.residual_norm < 1e-6);
    }

    #[test]
    fn fit_flat_series_has_zero_slope() {
        let cycles = log_spaced_grid(1e3, 1e6, 50).unwrap();
        let s = SnSeries::new(cycles, vec![250.0; 50], "flat").unwrap();
        let fit = fit_sn_params(&s).unwrap();
        assert!(fit.a.abs() < 1e-9);
        let back = fit.to_params(&s).unwrap();
        assert!((back.evaluate(5e4).unwrap() - 250.0).abs() < 1e-9);
    }

    #[test]
    fn fit_with_noise_is_within_five_percent() {
        let p = params(-0.2, 4.0, 80.0);
        let s = synthesize_series(&p, "x", 1.0, 42).unwrap();
        let fit = fit_sn_params(&s).unwrap();
        assert!((fit.a + 0.2).abs() / 0.2 < 0.05, "{fit:?}");
        assert!((fit.b - 4.0).abs() / 4.0 < 0.05, "{fit:?}");
        assert!((fit.d - 80.0).abs() / 80.0 < 0.05, "{fit:?}");
    }

    #[test]
    fn fit_needs_three_points() {
        let s = SnSeries::new(vec![1.0, 2.0], vec![3.0, 2.0], "x").unwrap();
        assert!(matches!(fit_sn_params(&s), Err(Error::Fit { .. })));
    }

    #[test]
    fn scaler_examples() {
        let sc = ScalerState::new(100.0, 300.0).unwrap();
        assert_eq!(sc.scale(200.0), 0.5);
        for x in [87.3, 412.9] {
            assert!((sc.unscale(sc.scale(x)) - x).abs() <= 1e-12 * x);
        }

        let s = synthesize_series(&params(-0.25, 3.6, 100.0), "axial", 0.0, 0).unwrap();
        let s = split_series(&s, 600).unwrap();
        let sc = fit_scaler(&s).unwrap();
        assert!(s.test_stress().iter().all(|&v| sc.scale(v) < 0.0));
    }

    #[test]
    fn scaler_rejects_constant_or_empty_region() {
        assert!(matches!(fit_scaler_on(&[5.0, 5.0]), Err(Error::Scaler(_))));
        assert!(matches!(fit_scaler_on(&[]), Err(Error::Scaler(_))));
        assert!(ScalerState::new(2.0, 1.0).is_err());
    }

    #[test]
    fn series_rejects_non_monotone_cycles() {
        assert!(SnSeries::new(vec![1.0, 1.0], vec![1.0, 2.0], "x").is_err());
        assert!(SnSeries::new(vec![1.0], vec![1.0, 2.0], "x").is_err());
        assert!(SnSeries::new(vec![1.0], vec![f64::NAN], "x").is_err());
    }

    #[test]
    fn csv_round_trip_and_errors() {
        let dir = tempfile::tempdir().unwrap();
        let s = synthesize_series(&params(-0.25, 3.6, 100.0), "axial", 1.5, 3).unwrap();
        let path = dir.path().join("axial.csv");
        write_series_csv(&s, &path).unwrap();
        let back = read_series_csv(&path).unwrap();
        assert_eq!(back.len(), 1000);
        for (x, y) in back.stress().iter().zip(s.stress()) {
            assert!((x - y).abs() <= 1e-9 * y.abs());
        }
        assert_eq!(back.label, "axial");

        let header_only = dir.path().join("h.csv");
        fs::write(&header_only, "cycles,stress_mpa\n").unwrap();
        assert!(matches!(read_series_csv(&header_only), Err(Error::EmptySeries(_))));

        let bad = dir.path().join("bad.csv");
        fs::write(&bad, "cycles,stress_mpa\n1,2\n2,abc\n").unwrap();
        match read_series_csv(&bad) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("expected parse error, got {other:?}"),
        }

        let unordered = dir.path().join("u.csv");
        fs::write(&unordered, "cycles,stress_mpa\n2,2\n1,3\n").unwrap();
        assert!(matches!(read_series_csv(&unordered), Err(Error::Parse { line: 3, .. })));
    }

    #[test]
    fn curve_file_sections() {
        let doc = KvDocument::parse(
            "# curves\n[axial]\na = -0.25\nb = 3.6\nd = 100\nn_min = 5e3\nn_max = 3e6\nn_points = 1000\n\
             [torsional]\nlabel = torsion\na = -0.2\nb = 3.2\nd = 60\nn_min = 5e3\nn_max = 3e6\nn_points = 10\n",
        )
        .unwrap();
        let curves = parse_curve_doc(&doc).unwrap();
        assert_eq!(curves.len(), 2);
        assert_eq!(curves[0].label, "axial");
        assert_eq!(curves[1].label, "torsion");
        assert_eq!(curves[1].params.n_points, 10);

        let bad = KvDocument::parse("[x]\na=-0.2\nb=3\nd=0\nn_min=10\nn_max=5\nn_points=10\n").unwrap();
        assert!(matches!(parse_curve_doc(&bad), Err(Error::Argument(_))));
    }
}
