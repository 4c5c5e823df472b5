//! Shot overheads, blowup rates, lower bounds and baseline bias/variance models of the
//! error reduction methods, plus the Monte Carlo estimators in [`chain`].

pub mod chain;

use serde::{Deserialize, Serialize};

use crate::error::{Result, SalemError};
use crate::p2lc::{logical_inverse_norm, Characterization, Logical, SubsetStats};

/// `(sum p)/(sum p / v)`; infinite values contribute nothing to the denominator.
pub fn harmonic_mean(probs: &[f64], values: &[f64]) -> f64 {
    let total: f64 = probs.iter().sum();
    let inv: f64 = probs.iter().zip(values).map(|(p, v)| if v.is_infinite() { 0.0 } else { p / v }).sum();
    if inv == 0.0 {
        f64::INFINITY
    } else {
        total / inv
    }
}

pub fn geometric_mean(probs: &[f64], values: &[f64]) -> f64 {
    let total: f64 = probs.iter().sum();
    let log: f64 = probs.iter().zip(values).map(|(p, v)| if *p == 0.0 { 0.0 } else { p * v.ln() }).sum();
    (log / total).exp()
}

pub fn arithmetic_mean(probs: &[f64], values: &[f64]) -> f64 {
    let total: f64 = probs.iter().sum();
    probs.iter().zip(values).map(|(p, v)| p * v).sum::<f64>() / total
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Bare,
    EmPhysical,
    Ec,
    EcPs,
    ExtLem,
    FgSalem,
    CgSalem,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Bare => "bare",
            Method::EmPhysical => "em_physical",
            Method::Ec => "ec",
            Method::EcPs => "ec_ps",
            Method::ExtLem => "ext_lem",
            Method::FgSalem => "fg_salem",
            Method::CgSalem => "cg_salem",
        }
    }
}

impl std::str::FromStr for Method {
    type Err = SalemError;

    fn from_str(s: &str) -> Result<Self> {
        ALL_METHODS.into_iter().find(|m| m.name() == s).ok_or_else(|| SalemError::InvalidInput(format!("unknown method {s:?}")))
    }
}

pub const ALL_METHODS: [Method; 7] =
    [Method::Bare, Method::EmPhysical, Method::Ec, Method::EcPs, Method::ExtLem, Method::FgSalem, Method::CgSalem];

/// What a binary coarse-grained protocol does with the rejected-candidate subset `S1`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SubsetAction {
    Invert,
    Reject,
    MidshotReject,
    DoNothing,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EstimatorSpec {
    pub method: Method,
    /// Action on `S1` for `cg_salem`; `ec_ps` always rejects `S1` and leaves `S0` alone.
    #[serde(default = "default_action")]
    pub s1_action: SubsetAction,
}

fn default_action() -> SubsetAction {
    SubsetAction::Reject
}

impl EstimatorSpec {
    pub fn new(method: Method) -> Self {
        EstimatorSpec { method, s1_action: SubsetAction::Reject }
    }

    pub fn cg(action: SubsetAction) -> Self {
        EstimatorSpec { method: Method::CgSalem, s1_action: action }
    }

    pub fn validate(&self) -> Result<()> {
        if self.method == Method::CgSalem && self.s1_action == SubsetAction::DoNothing {
            return Err(SalemError::InvalidInput("cg_salem cannot leave S1 unmitigated; use ec_ps".into()));
        }
        Ok(())
    }

    pub fn label(&self) -> String {
        match (self.method, self.s1_action) {
            (Method::CgSalem, SubsetAction::Invert) => "cg_salem:inv0_inv1".into(),
            (Method::CgSalem, SubsetAction::Reject) => "cg_salem:inv0_rej1".into(),
            (Method::CgSalem, SubsetAction::MidshotReject) => "cg_salem:inv0_msrej1".into(),
            (m, _) => m.name().into(),
        }
    }

    /// Inverse of [`EstimatorSpec::label`]; plain `cg_salem` means `inv0_rej1`.
    pub fn parse(s: &str) -> Result<Self> {
        let spec = match s {
            "cg_salem:inv0_inv1" => EstimatorSpec::cg(SubsetAction::Invert),
            "cg_salem:inv0_rej1" => EstimatorSpec::cg(SubsetAction::Reject),
            "cg_salem:inv0_msrej1" => EstimatorSpec::cg(SubsetAction::MidshotReject),
            m => EstimatorSpec::new(m.parse()?),
        };
        Ok(spec)
    }

    pub fn rejects(&self) -> bool {
        self.method == Method::EcPs
            || (self.method == Method::CgSalem && matches!(self.s1_action, SubsetAction::Reject | SubsetAction::MidshotReject))
    }
}

/// Per-cycle overhead summary.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct OverheadReport {
    /// Shot overhead of one cycle.
    pub gamma: f64,
    /// QPU-time overhead of one cycle (differs from `gamma` only with mid-shot rejection).
    pub gamma_time: f64,
    /// `log(gamma) / eps_L`.
    pub lambda: f64,
    pub eps_l: f64,
    pub eps_l0: f64,
    pub eps_l1: f64,
    pub p1_given_l: f64,
    pub p_accept: f64,
}

impl OverheadReport {
    fn plain(gamma: f64, eps_l: f64) -> Self {
        OverheadReport {
            gamma,
            gamma_time: gamma,
            lambda: gamma.ln() / eps_l,
            eps_l,
            eps_l0: eps_l,
            eps_l1: 0.0,
            p1_given_l: 0.0,
            p_accept: 1.0,
        }
    }
}

/// Fine-grained overhead from `(P(s), W_s)`: `Gamma = H[W^2]`, `lambda = -log E[1/W^2] / eps_L`.
pub fn fg_overhead(per_syndrome: &[(f64, f64)], eps_l: f64) -> Result<OverheadReport> {
    if let Some(&(p, _)) = per_syndrome.iter().find(|(p, w)| *p > 0.0 && !w.is_finite()) {
        return Err(SalemError::SingularChannel { basis: format!("syndrome with probability {p:.3e}; reject it"), eigenvalue: 0.0 });
    }
    let probs: Vec<f64> = per_syndrome.iter().map(|e| e.0).collect();
    let gammas: Vec<f64> = per_syndrome.iter().map(|e| e.1 * e.1).collect();
    let total: f64 = probs.iter().sum();
    let e_inv: f64 = probs.iter().zip(&gammas).map(|(p, g)| p / g).sum::<f64>() / total;
    let mut r = OverheadReport::plain(1.0 / e_inv, eps_l);
    r.lambda = -e_inv.ln() / eps_l;
    Ok(r)
}

/// `(P(s), W_s)` of every record in a characterization.
pub fn fg_inputs(ch: &Characterization) -> Vec<(f64, f64)> {
    ch.per_key.iter().map(|k| (k.probability, logical_inverse_norm(&k.channel))).collect()
}

/// Fine-grained blowup with the missing mass treated as one extra syndrome whose
/// conditional channel flips with probability `eps_missing`.
pub fn fg_lambda_with_missing(per_syndrome: &[(f64, f64)], eps_l: f64, missing: f64, eps_missing: f64) -> f64 {
    let mut e_inv: f64 = per_syndrome.iter().map(|(p, w)| p / (w * w)).sum();
    e_inv += missing * (1.0 - 2.0 * eps_missing).powi(2);
    let total: f64 = per_syndrome.iter().map(|e| e.0).sum::<f64>() + missing;
    -(e_inv / total).ln() / (eps_l + missing * eps_missing)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MissingScan {
    /// `(eps_L|missing, lambda)`.
    pub points: Vec<(f64, f64)>,
    pub min: f64,
    pub max: f64,
    /// Value at `eps_L|missing = 1/2`.
    pub mid: f64,
}

impl MissingScan {
    pub fn width(&self) -> f64 {
        self.max - self.min
    }
}

/// Scan `eps_L|missing` over `grid` (values in `[0, 1]`).
pub fn missing_mass_scan(per_syndrome: &[(f64, f64)], eps_l: f64, missing: f64, grid: &[f64]) -> Result<MissingScan> {
    if grid.iter().any(|e| !(0.0..=1.0).contains(e)) {
        return Err(SalemError::InvalidInput("eps_L|missing grid must lie in [0, 1]".into()));
    }
    let points: Vec<(f64, f64)> = grid.iter().map(|&e| (e, fg_lambda_with_missing(per_syndrome, eps_l, missing, e))).collect();
    let min = points.iter().map(|p| p.1).fold(f64::INFINITY, f64::min);
    let max = points.iter().map(|p| p.1).fold(f64::NEG_INFINITY, f64::max);
    Ok(MissingScan { points, min, max, mid: fg_lambda_with_missing(per_syndrome, eps_l, missing, 0.5) })
}

/// ML post-correction of the missing syndrome: the better of the two flips is applied.
pub fn ml_missing_flip(eps_missing: f64) -> f64 {
    eps_missing.min(1.0 - eps_missing)
}

/// Syndrome-blind inversion of the average channel: `Gamma = W^2`.
pub fn ext_lem_overhead(channel: &Logical) -> OverheadReport {
    let eps = 1.0 - channel[0] / channel.iter().sum::<f64>();
    let w = logical_inverse_norm(channel);
    OverheadReport::plain(w * w, eps)
}

/// Model for the overhead of mitigating `S1` in the leading-order binary formulas.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum CgVariant {
    /// Inversion of `S1` with overhead `gamma1`.
    Inversion {
        gamma1: f64,
    },
    Rejection,
    /// Inversion with `W^2 = (1 - 2 eps)^-2`.
    SimpleQp,
}

/// Leading-order blowup of binary coarse-grained SALEM with `S0` inverted.
pub fn cg_blowup(eps_l1: f64, p1_given_l: f64, variant: CgVariant) -> Result<f64> {
    if !(0.0..=1.0).contains(&p1_given_l) || !(0.0..=1.0).contains(&eps_l1) {
        return Err(SalemError::InvalidInput(format!("eps_L|1 = {eps_l1}, p_1|L = {p1_given_l} outside [0, 1]")));
    }
    if eps_l1 == 0.0 {
        if p1_given_l > 0.0 {
            return Err(SalemError::InvalidInput("p_1|L > 0 requires eps_L|1 > 0".into()));
        }
        return Ok(4.0);
    }
    let base = 4.0 * (1.0 - p1_given_l);
    Ok(match variant {
        CgVariant::Inversion { gamma1 } => base + (1.0 - 1.0 / gamma1) / eps_l1 * p1_given_l,
        CgVariant::Rejection => base + p1_given_l / eps_l1,
        CgVariant::SimpleQp => 4.0 * (1.0 - p1_given_l * eps_l1),
    })
}

/// Per-cycle overhead of binary coarse-grained SALEM from exact subset statistics.
/// For rejection, `accepted` is the channel of accepted cycles (with accepted neighbours)
/// and `p_accept` its per-cycle acceptance.
pub fn cg_overhead(stats: &SubsetStats, eps_l: f64, action: SubsetAction, accepted: Option<(&Logical, f64)>) -> Result<OverheadReport> {
    let w0 = logical_inverse_norm(&stats.channel0);
    let mut r = OverheadReport {
        gamma: 0.0,
        gamma_time: 0.0,
        lambda: 0.0,
        eps_l,
        eps_l0: stats.eps_l0,
        eps_l1: stats.eps_l1,
        p1_given_l: stats.p1_given_l,
        p_accept: 1.0,
    };
    match action {
        SubsetAction::Invert => {
            let w1 = logical_inverse_norm(&stats.channel1);
            r.gamma = harmonic_mean(&[stats.p_s0, stats.p_s1], &[w0 * w0, w1 * w1]);
        }
        SubsetAction::Reject | SubsetAction::MidshotReject => {
            let (ch, p_acc) = accepted.unwrap_or((&stats.channel0, stats.p_s0));
            if p_acc <= 0.0 {
                return Err(SalemError::EmptyAcceptedSubset);
            }
            let w = logical_inverse_norm(ch);
            r.gamma = w * w / p_acc;
            r.p_accept = p_acc;
        }
        SubsetAction::DoNothing => {
            return Err(SalemError::InvalidInput("no overhead model for an unmitigated subset".into()));
        }
    }
    r.gamma_time = r.gamma;
    r.lambda = r.gamma.ln() / eps_l;
    Ok(r)
}

/// Variance bound `sum w_k^2 Gamma_k / N_k / (sum w_k)^2` of a weighted average of subset
/// estimators; subsets with zero weight are ignored.
pub fn variance_bound(counts: &[f64], gammas: &[f64], weights: &[f64]) -> f64 {
    let sw: f64 = weights.iter().sum();
    let num: f64 = counts.iter().zip(gammas).zip(weights).filter(|(_, w)| **w > 0.0).map(|((n, g), w)| w * w * g / n).sum();
    num / (sw * sw)
}

/// Inverse-variance weights `N_k / Gamma_k`; rejected subsets (`Gamma = inf`) get zero.
pub fn iv_weights(counts: &[f64], gammas: &[f64]) -> Vec<f64> {
    counts.iter().zip(gammas).map(|(n, g)| if g.is_finite() { n / g } else { 0.0 }).collect()
}

/// Weighted average of subset estimators.
pub fn aggregate(outcomes: &[f64], weights: &[f64]) -> Result<f64> {
    let sw: f64 = weights.iter().sum();
    if sw <= 0.0 {
        return Err(SalemError::EmptyAcceptedSubset);
    }
    Ok(outcomes.iter().zip(weights).map(|(o, w)| o * w).sum::<f64>() / sw)
}

/// Depolarizing lower bound `(1 - 4 eps / 3)^(-2D)`.
pub fn depolarizing_bound(eps: f64, depth: f64) -> f64 {
    (1.0 - 4.0 * eps / 3.0).abs().powf(-2.0 * depth)
}

/// Bit-flip lower bound `(1 - 2 eps)^(-2D)`.
pub fn bitflip_bound(eps: f64, depth: f64) -> f64 {
    (1.0 - 2.0 * eps).abs().powf(-2.0 * depth)
}

/// Lower bound for a general single-qubit Pauli channel,
/// `|1 - 2 max_{i != j}(p_i + p_j)|^(-2D)` over the error weights, which reduces to the
/// bit-flip and depolarizing forms.
pub fn pauli_bound(channel: &Logical, depth: f64) -> f64 {
    let t: f64 = channel.iter().sum();
    let p = [channel[1] / t, channel[2] / t, channel[3] / t];
    let m = (p[0] + p[1]).max(p[0] + p[2]).max(p[1] + p[2]);
    (1.0 - 2.0 * m).abs().powf(-2.0 * depth)
}

/// Syndrome-aware bound `H[f_bound(Lambda_L|k)]`.
pub fn salem_bound(probs: &[f64], bounds: &[f64]) -> f64 {
    harmonic_mean(probs, bounds)
}

/// Inputs of the closed-form per-volume bias and spread of every method.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BaselineInputs {
    /// Physical error rate.
    pub eps: f64,
    pub eps_l: f64,
    /// Per-gate probability that the measured `Z_L` flips, without and with post-selection.
    pub flip_ec: f64,
    pub flip_ecps: f64,
    /// Per-gate rejection probability of EC+PS and SALEM.
    pub p_reject: f64,
    /// Blowup of syndrome-blind mitigation.
    pub lambda_ext: f64,
    pub lambda_salem: f64,
    /// Space-time overhead of one error-corrected gate relative to a physical one.
    pub v_ec: f64,
}

impl BaselineInputs {
    /// Surface-code rounds where a logical error per `d` rounds is a bit flip:
    /// the flip rates are `eps_L / d` and `eps_L|0 / d`.
    #[allow(clippy::too_many_arguments)]
    pub fn surface(eps: f64, eps_l: f64, eps_l0: f64, d: usize, p_reject: f64, lambda_ext: f64, lambda_salem: f64, v_ec: f64) -> Self {
        BaselineInputs { eps, eps_l, flip_ec: eps_l / d as f64, flip_ecps: eps_l0 / d as f64, p_reject, lambda_ext, lambda_salem, v_ec }
    }
}

/// Space-time overhead per round of a distance-`d` surface code: `5 (2 d^2 - 1)`.
pub fn surface_v_ec(d: usize) -> f64 {
    5.0 * (2.0 * (d * d) as f64 - 1.0)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct BaselinePoint {
    pub method: Method,
    pub volume: f64,
    pub bias: f64,
    pub gamma: f64,
    pub sigma: f64,
}

impl BaselinePoint {
    pub fn total_error(&self) -> f64 {
        self.bias + self.sigma
    }
}

pub const BASELINE_METHODS: [Method; 6] = [Method::Bare, Method::EmPhysical, Method::Ec, Method::EcPs, Method::ExtLem, Method::CgSalem];

/// Bias and `sigma = sqrt(Gamma / N)` of one method at volume `v` with `budget` shots.
pub fn baseline_point(inp: &BaselineInputs, method: Method, v: f64, budget: f64) -> BaselinePoint {
    let bare = 1.0 - 4.0 * inp.eps / 3.0;
    let (bias, gamma) = match method {
        Method::Bare => (1.0 - bare.powf(v), 1.0 / inp.v_ec),
        Method::EmPhysical => (0.0, bare.powf(-2.0 * v) / inp.v_ec),
        Method::Ec => (1.0 - (1.0 - 2.0 * inp.flip_ec).powf(v), 1.0),
        Method::EcPs => (1.0 - (1.0 - 2.0 * inp.flip_ecps).powf(v), (1.0 - inp.p_reject).powf(-v)),
        Method::ExtLem => (0.0, (inp.lambda_ext * inp.eps_l * v).exp()),
        Method::FgSalem | Method::CgSalem => (0.0, (inp.lambda_salem * inp.eps_l * v).exp()),
    };
    BaselinePoint { method, volume: v, bias, gamma, sigma: (gamma / budget).sqrt() }
}

/// Bias/spread curves of every baseline method over a volume grid.
pub fn baseline_curves(inp: &BaselineInputs, volumes: &[f64], budget: f64) -> Vec<BaselinePoint> {
    let mut out = Vec::new();
    for &v in volumes {
        for m in BASELINE_METHODS {
            out.push(baseline_point(inp, m, v, budget));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn means_are_ordered() {
        let p = [0.2, 0.5, 0.3];
        let v = [1.0, 3.0, 10.0];
        let h = harmonic_mean(&p, &v);
        let g = geometric_mean(&p, &v);
        let a = arithmetic_mean(&p, &v);
        assert!(h <= g && g <= a);
        assert!((h - 1.0 / (0.2 + 0.5 / 3.0 + 0.03)).abs() < 1e-12);
    }

    #[test]
    fn uniform_syndromes_give_extlem_rate() {
        let w = 1.0 / (1.0 - 2.0 * 1e-3);
        let r = fg_overhead(&[(0.4, w), (0.6, w)], 1e-3).unwrap();
        let e = ext_lem_overhead(&[1.0 - 1e-3, 1e-3, 0.0, 0.0]);
        assert!((r.lambda - e.lambda).abs() < 1e-9);
    }

    #[test]
    fn singular_syndrome_is_refused() {
        assert!(fg_overhead(&[(0.9, 1.0), (0.1, f64::INFINITY)], 1e-3).is_err());
    }

    #[test]
    fn binary_formulas() {
        assert_eq!(cg_blowup(0.3, 0.0, CgVariant::Rejection).unwrap(), 4.0);
        let rej = cg_blowup(0.5, 0.6, CgVariant::Rejection).unwrap();
        let inv = cg_blowup(0.5, 0.6, CgVariant::Inversion { gamma1: f64::INFINITY }).unwrap();
        assert!((rej - inv).abs() < 1e-12);
        assert!((cg_blowup(0.25, 0.7, CgVariant::Rejection).unwrap() - 4.0).abs() < 1e-12);
        assert!(cg_blowup(0.0, 0.5, CgVariant::Rejection).is_err());
    }

    #[test]
    fn bounds() {
        assert!((depolarizing_bound(0.3, 1.0) - 1.0 / 0.36).abs() < 1e-12);
        assert_eq!(depolarizing_bound(0.0, 5.0), 1.0);
        assert!((pauli_bound(&[0.9, 0.1, 0.0, 0.0], 1.0) - bitflip_bound(0.1, 1.0)).abs() < 1e-12);
    }

    #[test]
    fn baseline_regressions() {
        let inp = BaselineInputs::surface(1e-3, 1e-4, 1e-5, 4, 1e-4, 4.0, 1.86, 75.0);
        assert_eq!(surface_v_ec(4), 155.0);
        let b = baseline_point(&inp, Method::Bare, 1000.0, 1e4);
        assert!((b.bias - 0.736_637_274_6).abs() < 1e-9);
        for m in BASELINE_METHODS {
            assert_eq!(baseline_point(&inp, m, 0.0, 1e4).bias, 0.0);
        }
    }

    #[test]
    fn iv_weights_beat_uniform() {
        let n = [100.0, 50.0, 10.0];
        let g = [1.0, 4.0, 30.0];
        let iv = iv_weights(&n, &g);
        let best = variance_bound(&n, &g, &iv);
        assert!((best - 1.0 / iv.iter().sum::<f64>()).abs() < 1e-15);
        assert!(best <= variance_bound(&n, &g, &[1.0, 1.0, 1.0]));
    }
}
