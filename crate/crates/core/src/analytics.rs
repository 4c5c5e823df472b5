//! Closed-form models: mid-shot rejection timing, pseudo-thresholds against physical
//! mitigation, and the circuit-volume-boost scan.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Result, SalemError};
use crate::mitigation::{baseline_point, BaselineInputs, BaselinePoint, Method, BASELINE_METHODS};

/// Circuit of `width` logical gates per layer and `depth` layers, each gate accepted with
/// probability `p_acc`. Time is counted in layers.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimingModel {
    pub width: f64,
    pub depth: f64,
    pub p_acc: f64,
}

impl TimingModel {
    pub fn new(width: f64, depth: f64, p_acc: f64) -> Result<Self> {
        if !(width >= 1.0 && depth >= 1.0) {
            return Err(SalemError::InvalidInput(format!("width {width} and depth {depth} must be >= 1")));
        }
        if !(p_acc > 0.0 && p_acc <= 1.0) {
            return Err(SalemError::InvalidInput(format!("acceptance probability {p_acc} outside (0, 1]")));
        }
        Ok(TimingModel { width, depth, p_acc })
    }

    pub fn volume(&self) -> f64 {
        self.width * self.depth
    }

    /// Mean number of layers run before the shot ends, `(1 - p^(wD)) / (1 - p^w)`.
    pub fn mean_time(&self) -> f64 {
        let lp = self.p_acc.ln();
        if lp == 0.0 {
            return self.depth;
        }
        // expm1 keeps the ratio accurate for p_acc close to 1
        (-(lp * self.volume()).exp_m1()) / (-(lp * self.width).exp_m1())
    }

    /// Shot overhead of post-shot rejection, `p_acc^(-wD)`.
    pub fn gamma_rej(&self) -> f64 {
        (-self.p_acc.ln() * self.volume()).exp()
    }

    /// QPU-time overhead of mid-shot rejection, `E[t] / (D P_acc)`.
    pub fn gamma_ms(&self) -> f64 {
        self.gamma_rej() * self.mean_time() / self.depth
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct MidshotReport {
    pub mean_time: f64,
    pub gamma_ms: f64,
    pub gamma_rej: f64,
    /// `ln Gamma_MS / (V eps_L p_rej|L)`.
    pub lambda_ms: f64,
    /// `ln Gamma_MS / ln Gamma_rej`; `None` without rejection.
    pub r_exact: Option<f64>,
}

pub fn midshot_overhead(model: &TimingModel, eps_l: f64, p_rej_given_l: f64) -> MidshotReport {
    let gamma_ms = model.gamma_ms();
    let gamma_rej = model.gamma_rej();
    let r_exact = if model.p_acc < 1.0 { Some(gamma_ms.ln() / gamma_rej.ln()) } else { None };
    MidshotReport {
        mean_time: model.mean_time(),
        gamma_ms,
        gamma_rej,
        lambda_ms: gamma_ms.ln() / (model.volume() * eps_l * p_rej_given_l),
        r_exact,
    }
}

/// QPU-time blowup rate of inverting accepted cycles (per-cycle overhead `w0_sq`) and
/// rejecting the rest mid-shot, for a `1 x V` memory with `V = v / eps_L`.
pub fn midshot_lambda(w0_sq: f64, p_acc: f64, eps_l: f64, v: f64) -> Result<f64> {
    let volume = (v / eps_l).max(1.0);
    let m = TimingModel::new(1.0, volume, p_acc)?;
    Ok((volume * w0_sq.ln() + m.gamma_ms().ln()) / (volume * eps_l))
}

/// Leading-order ratio of mid-shot to post-shot rejection rates,
/// `r(u) = u^-1 ln[(e^u - 1) / u]`, rising from 1/2 to 1.
pub fn midshot_ratio(u: f64) -> f64 {
    if u < 1e-4 {
        return 0.5 + u / 24.0 - u.powi(3) / 2880.0;
    }
    1.0 + ((-(-u).exp_m1()).ln() - u.ln()) / u
}

/// `u = v p_rej|L / eps_L|rej`.
pub fn midshot_u(v: f64, p_rej_given_l: f64, eps_l_rej: f64) -> f64 {
    v * p_rej_given_l / eps_l_rej
}

/// Exact mid-shot ratio for a circuit of normalized volume `v = V eps_L` and aspect ratio
/// `w / D`, with per-gate rejection `p_rej|L eps_L / eps_L|rej`.
pub fn midshot_ratio_exact(v: f64, aspect: f64, eps_l: f64, p_rej_given_l: f64, eps_l_rej: f64) -> Result<f64> {
    let volume = v / eps_l;
    let depth = (volume / aspect).sqrt();
    let width = volume / depth;
    let m = TimingModel::new(width, depth, 1.0 - p_rej_given_l * eps_l / eps_l_rej)?;
    midshot_overhead(&m, eps_l, p_rej_given_l).r_exact.ok_or_else(|| SalemError::InvalidInput("no rejection".into()))
}

/// Logical error rate as a function of the physical one.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum EpsLModel {
    /// `c eps^exponent`.
    PowerLaw { c: f64, exponent: f64 },
    /// Points `(eps, eps_L)` interpolated linearly in log-log, extrapolated from the end
    /// segments.
    Table { points: Vec<(f64, f64)> },
}

impl EpsLModel {
    /// Least-squares power law through `(eps, eps_L)` points in log-log.
    pub fn fit_power_law(points: &[(f64, f64)]) -> Result<Self> {
        let pts: Vec<(f64, f64)> = points.iter().filter(|p| p.0 > 0.0 && p.1 > 0.0).map(|p| (p.0.ln(), p.1.ln())).collect();
        if pts.len() < 2 {
            return Err(SalemError::MissingFit(format!("need 2+ positive points, got {}", pts.len())));
        }
        let n = pts.len() as f64;
        let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
        let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
        let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
        if sxx <= 0.0 {
            return Err(SalemError::MissingFit("all points share one eps".into()));
        }
        let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
        let exponent = sxy / sxx;
        Ok(EpsLModel::PowerLaw { c: (my - exponent * mx).exp(), exponent })
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            EpsLModel::PowerLaw { c, exponent } => {
                if !(*c > 0.0 && *exponent > 1.0) {
                    return Err(SalemError::MissingFit(format!("power law needs c > 0 and exponent > 1, got {c}, {exponent}")));
                }
            }
            EpsLModel::Table { points } => {
                if points.len() < 2
                    || points.windows(2).any(|w| !(w[1].0 > w[0].0 && w[1].1 > w[0].1))
                    || points[0].0 <= 0.0
                    || points[0].1 <= 0.0
                {
                    return Err(SalemError::MissingFit("table needs 2+ positive points increasing in both columns".into()));
                }
            }
        }
        Ok(())
    }

    pub fn eval(&self, eps: f64) -> f64 {
        match self {
            EpsLModel::PowerLaw { c, exponent } => c * eps.powf(*exponent),
            EpsLModel::Table { points } => {
                let x = eps.ln();
                let i = match points.iter().position(|p| p.0 >= eps) {
                    Some(0) => 1,
                    Some(i) => i,
                    None => points.len() - 1,
                };
                let (x0, y0) = (points[i - 1].0.ln(), points[i - 1].1.ln());
                let (x1, y1) = (points[i].0.ln(), points[i].1.ln());
                (y0 + (y1 - y0) * (x - x0) / (x1 - x0)).exp()
            }
        }
    }
}

/// How the circuit volume follows the error rate in a threshold scan.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VolumeRule {
    /// `V = v / eps_L(eps)`.
    Logical,
    /// `V = v / eps`.
    Physical,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ThresholdInputs {
    /// Blowup rate of physical mitigation (4 for depolarizing noise).
    pub lambda: f64,
    pub lambda_salem: f64,
    pub v_ec: f64,
    pub model: EpsLModel,
    pub rule: VolumeRule,
}

impl ThresholdInputs {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda_salem < self.lambda && self.lambda_salem > 0.0) {
            return Err(SalemError::InvalidInput(format!("need 0 < lambda_salem ({}) < lambda ({})", self.lambda_salem, self.lambda)));
        }
        if !(self.v_ec >= 1.0) {
            return Err(SalemError::InvalidInput(format!("V_EC {} below 1", self.v_ec)));
        }
        self.model.validate()
    }

    /// Normalized volume above which the SALEM threshold exceeds the FT threshold,
    /// `ln V_EC / (lambda - lambda_SALEM)`.
    pub fn v0(&self) -> f64 {
        self.v_ec.ln() / (self.lambda - self.lambda_salem)
    }

    fn volume(&self, v: f64, eps: f64) -> f64 {
        match self.rule {
            VolumeRule::Logical => v / self.model.eval(eps),
            VolumeRule::Physical => v / eps,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Thresholds {
    pub v: f64,
    pub eps_ft: f64,
    pub eps_ext_lem: f64,
    pub eps_salem: f64,
}

const BRACKET: (f64, f64) = (1e-7, 1e-1);
const REL_TOL: f64 = 1e-12;

/// Root of `f` by bisection in log space; the bracket grows tenfold on both ends up to
/// four times until `f` changes sign.
pub fn bisect_log<F: Fn(f64) -> f64>(f: F, lo: f64, hi: f64) -> Result<f64> {
    let (mut lo, mut hi) = (lo, hi);
    let mut tries = 0;
    while f(lo).signum() == f(hi).signum() {
        if tries == 4 {
            return Err(SalemError::NoRoot { lo, hi });
        }
        lo /= 10.0;
        hi = (hi * 10.0).min(1.0);
        tries += 1;
    }
    let flo = f(lo).signum();
    while hi / lo - 1.0 > REL_TOL {
        let mid = (lo * hi).sqrt();
        let fm = f(mid);
        if fm == 0.0 {
            return Ok(mid);
        }
        if fm.signum() == flo {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok((lo * hi).sqrt())
}

/// Pseudo-thresholds at normalized volume `v`: break-even of EC with bare execution, and of
/// ExtLEM / SALEM with physical mitigation at equal QPU time.
pub fn solve_thresholds(inp: &ThresholdInputs, v: f64) -> Result<Thresholds> {
    inp.validate()?;
    let m = &inp.model;
    let lv = inp.v_ec.ln() / inp.lambda;
    let ratio = inp.lambda_salem / inp.lambda;
    let eps_ft = bisect_log(|e| m.eval(e) - e, BRACKET.0, BRACKET.1)?;
    let eps_ext_lem = bisect_log(|e| lv / inp.volume(v, e) + m.eval(e) - e, BRACKET.0, BRACKET.1)?;
    let eps_salem = bisect_log(|e| lv / inp.volume(v, e) + ratio * m.eval(e) - e, BRACKET.0, BRACKET.1)?;
    Ok(Thresholds { v, eps_ft, eps_ext_lem, eps_salem })
}

/// Largest volume with `bias + sigma <= delta` for one method, `sigma = sqrt(Gamma / N)`.
pub fn max_volume(inp: &BaselineInputs, method: Method, delta: f64, shots: f64) -> f64 {
    let ok = |v: f64| baseline_point(inp, method, v, shots).total_error() <= delta;
    if !ok(0.0) {
        return 0.0;
    }
    let mut hi = 1.0;
    while ok(hi) {
        hi *= 2.0;
        if hi > 1e15 {
            return f64::INFINITY;
        }
    }
    let mut lo = hi / 2.0;
    if !ok(lo) {
        lo = 0.0;
    }
    while hi - lo > 1e-9 * hi {
        let mid = 0.5 * (lo + hi);
        if ok(mid) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    lo
}

/// Shots available at accuracy `delta`: `factor` error-corrected shots per error-free shot,
/// which needs `1 / delta^2`.
pub fn shot_budget(factor: f64, delta: f64) -> f64 {
    factor / (delta * delta)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct CvbPoint {
    pub delta: f64,
    pub method: Method,
    pub max_volume: f64,
    /// `max_volume / max_volume(Bare)`.
    pub cvb: f64,
}

pub fn cvb_scan(inp: &BaselineInputs, methods: &[Method], deltas: &[f64], budget_factor: f64) -> Vec<CvbPoint> {
    let mut out = Vec::new();
    for &delta in deltas {
        let n = shot_budget(budget_factor, delta);
        let bare = max_volume(inp, Method::Bare, delta, n);
        for &method in methods {
            let max_volume = max_volume(inp, method, delta, n);
            out.push(CvbPoint { delta, method, max_volume, cvb: max_volume / bare });
        }
    }
    out
}

/// Baseline inputs at another physical error rate, keeping the ratios of the flip and
/// rejection rates to `eps_L` fixed.
pub fn rescale_inputs(inp: &BaselineInputs, eps: f64, eps_l: f64) -> BaselineInputs {
    let k = eps_l / inp.eps_l;
    BaselineInputs { eps, eps_l, flip_ec: inp.flip_ec * k, flip_ecps: inp.flip_ecps * k, p_reject: inp.p_reject * k, ..*inp }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ErrorVsEps {
    pub eps: f64,
    pub volume: f64,
    pub point: BaselinePoint,
}

/// Total estimation error of every method over physical error rates at `V = v / eps`.
pub fn error_vs_eps(inp: &BaselineInputs, model: &EpsLModel, methods: &[Method], eps_grid: &[f64], v: f64, shots: f64) -> Vec<ErrorVsEps> {
    let mut out = Vec::new();
    for &eps in eps_grid {
        let scaled = rescale_inputs(inp, eps, model.eval(eps));
        let volume = v / eps;
        for &m in methods {
            out.push(ErrorVsEps { eps, volume, point: baseline_point(&scaled, m, volume, shots) });
        }
    }
    out
}

/// Methods shown in the performance panels.
pub fn panel_methods() -> Vec<Method> {
    BASELINE_METHODS.to_vec()
}

fn fmt(x: f64) -> String {
    format!("{x:.10e}")
}

pub fn write_fig2a<W: Write>(points: &[BaselinePoint], out: W, config_hash: &str) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["V", "method", "bias", "sigma", "gamma", "total_error", "config_hash"])?;
    for p in points {
        w.write_record([
            fmt(p.volume),
            p.method.name().into(),
            fmt(p.bias),
            fmt(p.sigma),
            fmt(p.gamma),
            fmt(p.total_error()),
            config_hash.into(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_fig2b<W: Write>(points: &[CvbPoint], out: W, config_hash: &str) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["delta", "method", "max_V", "cvb", "config_hash"])?;
    for p in points {
        w.write_record([fmt(p.delta), p.method.name().into(), fmt(p.max_volume), fmt(p.cvb), config_hash.into()])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_fig2c<W: Write>(points: &[ErrorVsEps], out: W, config_hash: &str) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["eps", "V", "method", "bias", "sigma", "total_error", "config_hash"])?;
    for p in points {
        w.write_record([
            fmt(p.eps),
            fmt(p.volume),
            p.point.method.name().into(),
            fmt(p.point.bias),
            fmt(p.point.sigma),
            fmt(p.point.total_error()),
            config_hash.into(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct MsrejPoint {
    pub aspect: f64,
    pub v: f64,
    pub u: f64,
    pub r_exact: f64,
    pub r_leading: f64,
}

/// Exact and leading-order mid-shot ratios over aspect ratios and normalized volumes.
pub fn msrej_scan(aspects: &[f64], vs: &[f64], eps_l: f64, p_rej_given_l: f64, eps_l_rej: f64) -> Result<Vec<MsrejPoint>> {
    let mut out = Vec::new();
    for &aspect in aspects {
        for &v in vs {
            let u = midshot_u(v, p_rej_given_l, eps_l_rej);
            out.push(MsrejPoint {
                aspect,
                v,
                u,
                r_exact: midshot_ratio_exact(v, aspect, eps_l, p_rej_given_l, eps_l_rej)?,
                r_leading: midshot_ratio(u),
            });
        }
    }
    Ok(out)
}

pub fn write_msrej<W: Write>(points: &[MsrejPoint], out: W, config_hash: &str) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["aspect", "v", "u", "r_exact", "r_leading", "config_hash"])?;
    for p in points {
        w.write_record([fmt(p.aspect), fmt(p.v), fmt(p.u), fmt(p.r_exact), fmt(p.r_leading), config_hash.into()])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_thresholds<W: Write>(rows: &[Thresholds], v0: f64, out: W, config_hash: &str) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["v", "eps_ft", "eps_ext_lem", "eps_salem", "v0", "config_hash"])?;
    for t in rows {
        w.write_record([fmt(t.v), fmt(t.eps_ft), fmt(t.eps_ext_lem), fmt(t.eps_salem), fmt(v0), config_hash.into()])?;
    }
    w.flush()?;
    Ok(())
}

/// Log-spaced grid of `n` points from `a` to `b`.
pub fn log_grid(a: f64, b: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![a];
    }
    (0..n).map(|i| (a.ln() + (b.ln() - a.ln()) * i as f64 / (n - 1) as f64).exp()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn inputs() -> ThresholdInputs {
        ThresholdInputs {
            lambda: 4.0,
            lambda_salem: 1.86,
            v_ec: 75.0,
            model: EpsLModel::PowerLaw { c: 100.0, exponent: 2.0 },
            rule: VolumeRule::Logical,
        }
    }

    #[test]
    fn mean_time_matches_direct_sum() {
        let m = TimingModel::new(3.0, 7.0, 0.97).unwrap();
        let pw: f64 = 0.97f64.powi(3);
        let direct = 7.0 * pw.powi(7) + (1.0 - pw) * (1..=7).map(|t| t as f64 * pw.powi(t - 1)).sum::<f64>();
        assert!((m.mean_time() - direct).abs() < 1e-12);
        assert!(m.mean_time() <= 7.0);
        assert_eq!(TimingModel::new(3.0, 7.0, 1.0).unwrap().mean_time(), 7.0);
    }

    #[test]
    fn depth_one_gains_nothing() {
        let m = TimingModel::new(50.0, 1.0, 0.99).unwrap();
        assert!((m.gamma_ms() - m.gamma_rej()).abs() < 1e-12 * m.gamma_rej());
        assert!((m.gamma_rej() - 0.99f64.powf(-50.0)).abs() < 1e-12);
    }

    #[test]
    fn no_rejection_has_unit_overhead() {
        let r = midshot_overhead(&TimingModel::new(2.0, 5.0, 1.0).unwrap(), 1e-3, 0.5);
        assert_eq!(r.gamma_ms, 1.0);
        assert!(r.r_exact.is_none());
    }

    #[test]
    fn ratio_limits() {
        assert!((midshot_ratio(1e-9) - 0.5).abs() < 1e-9);
        assert!(midshot_ratio(1e6) > 0.9999);
        // both branches agree at the switch
        let u = 1.0001e-4;
        assert!((midshot_ratio(u) - (0.5 + u / 24.0)).abs() < 1e-10);
    }

    #[test]
    fn v0_value() {
        assert!((inputs().v0() - 75f64.ln() / 2.14).abs() < 1e-15);
        assert!((inputs().v0() - 2.0175).abs() < 1e-3);
    }

    #[test]
    fn threshold_ordering() {
        let inp = inputs();
        for v in [0.5, 1.0, 2.0, 5.0, 20.0] {
            let t = solve_thresholds(&inp, v).unwrap();
            assert!((t.eps_ft - 0.01).abs() < 1e-12);
            assert!(t.eps_ext_lem < t.eps_ft);
            assert!(t.eps_salem > t.eps_ext_lem);
            assert_eq!(t.eps_salem > t.eps_ft, v > inp.v0());
        }
    }

    #[test]
    fn fit_recovers_power_law() {
        let pts: Vec<(f64, f64)> = [1e-4, 2e-4, 4e-4].iter().map(|&e| (e, 700.0 * e * e)).collect();
        match EpsLModel::fit_power_law(&pts).unwrap() {
            EpsLModel::PowerLaw { c, exponent } => {
                assert!((exponent - 2.0).abs() < 1e-9);
                assert!((c / 700.0 - 1.0).abs() < 1e-8);
            }
            _ => unreachable!(),
        }
        assert!(EpsLModel::fit_power_law(&pts[..1]).is_err());
    }

    #[test]
    fn table_interpolates_in_log_log() {
        let t = EpsLModel::Table { points: vec![(1e-4, 1e-6), (1e-3, 1e-4)] };
        assert!((t.eval(10f64.powf(-3.5)) / 1e-5 - 1.0).abs() < 1e-12);
        assert!((t.eval(1e-2) / 1e-2 - 1.0).abs() < 1e-12);
    }

    #[test]
    fn no_root_is_reported() {
        let r = bisect_log(|x| x + 1.0, 1e-3, 1e-2);
        assert!(matches!(r, Err(SalemError::NoRoot { .. })));
    }
}
