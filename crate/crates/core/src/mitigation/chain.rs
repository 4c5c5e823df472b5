//! Monte Carlo memory runs and the estimators built on them.
//!
//! A shot of a `V`-cycle memory is drawn from the joint table as a Markov chain over data
//! cosets: each cycle samples `(record, output coset)` given the current coset. Runs of
//! trivial cycles from a clean state are skipped geometrically. Logical corrections chosen
//! by the mitigation protocols commute with the cycle (the table is covariant under logical
//! Paulis), so every method is evaluated on the same physical trajectory and only its
//! quasi-probability draws differ. A full Pauli-frame run of the circuit is available for
//! validating the chain at small `V`.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::weighted::WeightedAliasIndex;
use rand_distr::{Binomial, Distribution, Geometric};
use rayon::prelude::*;
use serde::Serialize;

use super::{EstimatorSpec, Method, SubsetAction};
use crate::error::{Result, SalemError};
use crate::ftcircuit::shot_seed;
use crate::p2lc::{logical_class_of, z_flip_rate, Conditioning, JointTable, Logical, P2lc};
use crate::pauli::{invert_channel, logical_channel, PauliChannel, PauliOp};
use crate::steane::{class_product, Coset, SteaneCycle, N_COSETS, N_DATA};

/// Key id used for records that are missing from the table.
pub const UNKNOWN_KEY: u32 = u32::MAX;

/// One simulated shot: non-trivial records with their cycle index and the final data coset.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub cycles: u32,
    pub events: Vec<(u32, u32)>,
    pub final_coset: Coset,
}

struct SliceSampler {
    entries: Vec<(u32, u8)>,
    alias: Option<WeightedAliasIndex<f64>>,
    /// Probability of a trivial record with unchanged coset (clean syndrome only).
    stay: f64,
    geo: Option<Geometric>,
}

/// Per-cycle transition model read off a joint table, missing mass renormalized away.
pub struct ChainModel {
    samplers: Vec<SliceSampler>,
    trivial_key: Option<u32>,
}

impl ChainModel {
    pub fn new(table: &JointTable) -> Result<Self> {
        let trivial_key = table.keys.iter().position(|k| k.is_trivial()).map(|k| k as u32);
        let mut samplers = Vec::with_capacity(64);
        for syn in 0..64u8 {
            let slice = &table.inputs[Coset::new(syn, 0).index()];
            let total: f64 = slice.entries.iter().map(|e| e.2).sum();
            if total <= 0.0 {
                return Err(SalemError::InvalidInput(format!("empty table slice for syndrome {syn:06b}")));
            }
            let mut stay = 0.0;
            let mut entries = Vec::new();
            let mut weights = Vec::new();
            for &(k, o, p) in &slice.entries {
                if syn == 0 && o == 0 && Some(k) == trivial_key {
                    stay += p / total;
                } else if p > 0.0 {
                    entries.push((k, o));
                    weights.push(p);
                }
            }
            let alias = if weights.is_empty() {
                None
            } else {
                Some(WeightedAliasIndex::new(weights).map_err(|e| SalemError::InvalidInput(e.to_string()))?)
            };
            let geo = if stay > 0.0 && alias.is_some() {
                Some(Geometric::new(1.0 - stay).map_err(|e| SalemError::InvalidInput(e.to_string()))?)
            } else {
                None
            };
            samplers.push(SliceSampler { entries, alias, stay, geo });
        }
        Ok(ChainModel { samplers, trivial_key })
    }

    /// Probability that a clean cycle stays clean with a trivial record.
    pub fn stay_probability(&self) -> f64 {
        self.samplers[0].stay
    }

    pub fn sample<R: Rng + ?Sized>(&self, cycles: u32, rng: &mut R) -> Trajectory {
        let mut state = Coset(0);
        let mut t = 0u32;
        let mut events = Vec::new();
        while t < cycles {
            let s = &self.samplers[state.syndrome() as usize];
            let Some(alias) = &s.alias else {
                break;
            };
            if let Some(geo) = &s.geo {
                let k = geo.sample(rng);
                if k >= (cycles - t) as u64 {
                    break;
                }
                t += k as u32;
            } else if s.stay >= 1.0 {
                break;
            }
            let (key, out) = s.entries[alias.sample(rng)];
            if Some(key) != self.trivial_key {
                events.push((t, key));
            }
            let oc = Coset(out);
            state = Coset::new(oc.syndrome(), class_product(oc.class(), state.class()));
            t += 1;
        }
        Trajectory { cycles, events, final_coset: state }
    }
}

/// A shot simulated gate by gate on the physical circuit, starting from a clean code block.
pub fn full_frame_trajectory<R: Rng + ?Sized>(cycle: &SteaneCycle, table: &JointTable, cycles: u32, rng: &mut R) -> Result<Trajectory> {
    let mut frame = PauliOp::identity(N_DATA);
    let mut events = Vec::new();
    for t in 0..cycles {
        let o = cycle.circuit.sample_with(&frame, rng);
        let r = cycle.recovery(&o.record)?;
        frame = r.mul(&o.data_frame);
        if !o.record.is_trivial() {
            events.push((t, table.key_of(&o.record).unwrap_or(UNKNOWN_KEY)));
        }
    }
    Ok(Trajectory { cycles, events, final_coset: cycle.code.reduce_to_coset(&frame) })
}

/// Quasi-probability inverse of a single-qubit logical channel, indexed by class.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct QpTable {
    pub probs: [f64; 4],
    pub signs: [f64; 4],
    pub norm: f64,
}

impl QpTable {
    pub fn from_logical(l: &Logical) -> Result<Self> {
        let t: f64 = l.iter().sum();
        Self::from_channel(&logical_channel(l.map(|x| x / t)))
    }

    pub fn from_channel(ch: &PauliChannel) -> Result<Self> {
        let qp = invert_channel(ch)?;
        let mut probs = [0.0; 4];
        let mut signs = [1.0; 4];
        for (i, p) in qp.paulis.iter().enumerate() {
            let c = logical_class_of(p);
            probs[c] += qp.probs[i];
            signs[c] = qp.sign(i);
        }
        Ok(QpTable { probs, signs, norm: qp.norm })
    }

    /// Draw `n` corrections; returns whether `Z_L` is flipped and the product of signs.
    pub fn draw<R: Rng + ?Sized>(&self, n: u64, rng: &mut R) -> (bool, f64) {
        let mut left = n;
        let mut rest = 1.0;
        let mut flip = false;
        let mut sign = 1.0;
        for c in 0..4 {
            if left == 0 {
                break;
            }
            let k = if c == 3 || rest <= self.probs[c] {
                left
            } else if self.probs[c] <= 0.0 {
                0
            } else {
                Binomial::new(left, (self.probs[c] / rest).min(1.0)).map(|b| b.sample(rng)).unwrap_or(0)
            };
            rest -= self.probs[c];
            left -= k;
            if k % 2 == 1 {
                if c == 1 || c == 2 {
                    flip = !flip;
                }
                if self.signs[c] < 0.0 {
                    sign = -sign;
                }
            }
        }
        (flip, sign)
    }
}

/// Per-cycle protocol data shared by every estimator.
#[derive(Clone, Debug)]
pub struct Protocol {
    pub eps_ph: f64,
    pub tau: f64,
    pub eps_l: f64,
    /// `P(X_L) + P(Y_L)` of the unconditioned and of the accepted channel.
    pub flip_rate: f64,
    pub flip_rate_accepted: f64,
    /// Same rates from the ablated characterizations: no input errors for EC, no
    /// future-acceptance conditioning for EC+PS.
    pub flip_rate_no_input: f64,
    pub flip_rate_accepted_no_future: f64,
    pub p_accept: f64,
    pub ext: QpTable,
    pub cg0: QpTable,
    pub cg1: Option<QpTable>,
    fg: Vec<Option<QpTable>>,
    fg_trivial: Option<QpTable>,
    s1: Vec<bool>,
    final_class: Vec<u8>,
    final_s1: Vec<bool>,
}

impl Protocol {
    /// Build from the characterized table with `S1 = {s : eps_L|s > tau}`.
    pub fn new(p2lc: &P2lc, tau: f64) -> Result<Self> {
        let cond = Conditioning::default();
        let ch = p2lc.characterize(cond);
        let part = ch.partition(tau);
        let acc = p2lc.accepted_channel(&part, cond)?;
        let stats = ch.subset_stats(&part);
        let table = p2lc.table;
        let fg: Vec<Option<QpTable>> =
            table.keys.iter().map(|k| ch.key_channel(k).and_then(|kc| QpTable::from_logical(&kc.channel).ok())).collect();
        let fg_trivial = table.keys.iter().position(|k| k.is_trivial()).and_then(|i| fg_vec_get(&fg, i));
        let s1 = table.keys.iter().map(|k| !part.accepts(k)).collect();
        let mut final_class = Vec::with_capacity(N_COSETS);
        let mut final_s1 = Vec::with_capacity(N_COSETS);
        for c in 0..N_COSETS {
            let (rec, out) = p2lc.cycle.noiseless(Coset(c as u8));
            final_class.push(out.class() as u8);
            final_s1.push(!part.accepts(&rec));
        }
        Ok(Protocol {
            eps_ph: table.eps_ph,
            tau,
            eps_l: ch.eps_l,
            flip_rate: z_flip_rate(&ch.channel),
            flip_rate_accepted: z_flip_rate(&acc.channel),
            flip_rate_no_input: z_flip_rate(&p2lc.characterize(Conditioning { input_errors: false, future_acceptance: true }).channel),
            flip_rate_accepted_no_future: z_flip_rate(
                &p2lc.accepted_channel(&part, Conditioning { input_errors: true, future_acceptance: false })?.channel,
            ),
            p_accept: acc.p_accept,
            ext: QpTable::from_logical(&ch.channel)?,
            cg0: QpTable::from_logical(&acc.channel)?,
            cg1: if stats.p_s1 > 0.0 { QpTable::from_logical(&stats.channel1).ok() } else { None },
            fg,
            fg_trivial,
            s1,
            final_class,
            final_s1,
        })
    }

    fn in_s1(&self, key: u32) -> bool {
        self.s1.get(key as usize).copied().unwrap_or(true)
    }

    fn fg_table(&self, key: u32) -> Option<&QpTable> {
        self.fg.get(key as usize).and_then(|q| q.as_ref())
    }

    /// `<Z>` after `v` cycles of a logical channel flipping `Z_L` with probability `flip`.
    pub fn decay(flip: f64, volume: u32) -> f64 {
        (1.0 - 2.0 * flip).powf(volume as f64)
    }

    /// Model bias `1 - <Z>` of an unmitigated method.
    pub fn bias_model(&self, method: Method, volume: u32) -> f64 {
        let v = volume as f64;
        match method {
            Method::Ec => 1.0 - Self::decay(self.flip_rate, volume),
            Method::EcPs => 1.0 - Self::decay(self.flip_rate_accepted, volume),
            Method::Bare => 1.0 - (1.0 - 4.0 * self.eps_ph / 3.0).powf(v),
            _ => 0.0,
        }
    }
}

/// Contribution of one shot to an inverse-variance weighted estimate: with shot weight
/// `1/W^2` and mitigated outcome `x = z * sign * W`, `a = x / W^2` and `b = 1/W^2`.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct ShotValue {
    pub accepted: bool,
    pub a: f64,
    pub b: f64,
    /// Cycles executed before the shot ended.
    pub time: f64,
}

impl ShotValue {
    fn rejected(time: f64) -> Self {
        ShotValue { accepted: false, a: 0.0, b: 0.0, time }
    }

    fn mitigated(z: f64, sign: f64, norm: f64, time: f64) -> Self {
        ShotValue { accepted: true, a: z * sign / norm, b: 1.0 / (norm * norm), time }
    }
}

/// Running sums of one estimator; merging is plain addition.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct Ledger {
    pub shots: u64,
    pub accepted: u64,
    pub sum_a: f64,
    pub sum_b: f64,
    pub sum_aa: f64,
    pub sum_ab: f64,
    pub sum_bb: f64,
    pub sum_time: f64,
}

impl Ledger {
    pub fn add(&mut self, v: &ShotValue) {
        self.add_weighted(v, 1.0);
        self.shots += 1;
        if v.accepted {
            self.accepted += 1;
        }
    }

    /// Add a shot with a probability weight (exact expectations over enumerated shots).
    pub fn add_weighted(&mut self, v: &ShotValue, p: f64) {
        self.sum_a += p * v.a;
        self.sum_b += p * v.b;
        self.sum_aa += p * v.a * v.a;
        self.sum_ab += p * v.a * v.b;
        self.sum_bb += p * v.b * v.b;
        self.sum_time += p * v.time;
    }

    pub fn merge(&mut self, o: &Ledger) {
        self.shots += o.shots;
        self.accepted += o.accepted;
        self.sum_a += o.sum_a;
        self.sum_b += o.sum_b;
        self.sum_aa += o.sum_aa;
        self.sum_ab += o.sum_ab;
        self.sum_bb += o.sum_bb;
        self.sum_time += o.sum_time;
    }

    /// `sum (z sign / W) / sum (1 / W^2)`.
    pub fn estimate(&self) -> f64 {
        self.sum_a / self.sum_b
    }

    /// `sqrt(1 / sum W^-2)`, the variance bound with `Gamma_shot = W^2`.
    pub fn sigma_bound(&self) -> f64 {
        (1.0 / self.sum_b).sqrt()
    }

    /// Delta-method standard error of the ratio estimate.
    pub fn sigma_empirical(&self) -> f64 {
        let o = self.estimate();
        let r = self.sum_aa - 2.0 * o * self.sum_ab + o * o * self.sum_bb;
        r.max(0.0).sqrt() / self.sum_b
    }

    /// Shot overhead `N / sum W^-2`.
    pub fn gamma(&self) -> f64 {
        self.shots as f64 / self.sum_b
    }

    pub fn mean_time(&self) -> f64 {
        self.sum_time / self.shots as f64
    }
}

fn fg_vec_get(fg: &[Option<QpTable>], i: usize) -> Option<QpTable> {
    fg.get(i).copied().flatten()
}

fn z_of_class(c: u8) -> f64 {
    if c == 1 || c == 2 {
        -1.0
    } else {
        1.0
    }
}

/// Evaluate one estimator on a trajectory.
pub fn evaluate<R: Rng + ?Sized>(proto: &Protocol, spec: &EstimatorSpec, tr: &Trajectory, rng: &mut R) -> ShotValue {
    let v = tr.cycles as u64;
    let full = tr.cycles as f64;
    let z = z_of_class(proto.final_class[tr.final_coset.index()]);
    let rejected_at = || {
        tr.events.iter().find(|e| proto.in_s1(e.1)).map(|e| e.0).or(if proto.final_s1[tr.final_coset.index()] {
            Some(tr.cycles)
        } else {
            None
        })
    };
    match spec.method {
        Method::Ec => ShotValue { accepted: true, a: z, b: 1.0, time: full },
        Method::EcPs => match rejected_at() {
            Some(_) => ShotValue::rejected(full),
            None => ShotValue { accepted: true, a: z, b: 1.0, time: full },
        },
        Method::ExtLem => {
            let (f, s) = proto.ext.draw(v, rng);
            ShotValue::mitigated(if f { -z } else { z }, s, proto.ext.norm.powf(full), full)
        }
        Method::FgSalem => {
            let mut counts: BTreeMap<u32, u64> = BTreeMap::new();
            for e in &tr.events {
                *counts.entry(e.1).or_insert(0) += 1;
            }
            let trivial = v - tr.events.len() as u64;
            let mut z = z;
            let mut sign = 1.0;
            let mut log_norm = 0.0;
            let trivial_table = proto.fg_trivial.as_ref();
            let groups = counts.iter().map(|(k, n)| (proto.fg_table(*k), *n)).chain(std::iter::once((trivial_table, trivial)));
            for (t, n) in groups {
                if n == 0 {
                    continue;
                }
                let Some(t) = t else {
                    return ShotValue::rejected(full);
                };
                let (f, s) = t.draw(n, rng);
                if f {
                    z = -z;
                }
                sign *= s;
                log_norm += n as f64 * t.norm.ln();
            }
            ShotValue::mitigated(z, sign, log_norm.exp(), full)
        }
        Method::CgSalem => match spec.s1_action {
            SubsetAction::Invert => {
                let n1 = tr.events.iter().filter(|e| proto.in_s1(e.1)).count() as u64;
                let Some(t1) = &proto.cg1 else {
                    return ShotValue::rejected(full);
                };
                let (f0, s0) = proto.cg0.draw(v - n1, rng);
                let (f1, s1) = t1.draw(n1, rng);
                let norm = proto.cg0.norm.powf((v - n1) as f64) * t1.norm.powf(n1 as f64);
                ShotValue::mitigated(if f0 ^ f1 { -z } else { z }, s0 * s1, norm, full)
            }
            SubsetAction::Reject | SubsetAction::MidshotReject => {
                let midshot = spec.s1_action == SubsetAction::MidshotReject;
                if let Some(t) = rejected_at() {
                    let time = if midshot { (t + 1).min(tr.cycles) as f64 } else { full };
                    return ShotValue::rejected(time);
                }
                let (f, s) = proto.cg0.draw(v, rng);
                ShotValue::mitigated(if f { -z } else { z }, s, proto.cg0.norm.powf(full), full)
            }
            SubsetAction::DoNothing => ShotValue { accepted: true, a: z, b: 1.0, time: full },
        },
        Method::Bare | Method::EmPhysical => physical_shot(proto.eps_ph, spec.method, tr.cycles, rng),
    }
}

/// Unencoded qubit under depolarizing noise; `em_physical` inverts each gate's channel.
fn physical_shot<R: Rng + ?Sized>(eps: f64, method: Method, volume: u32, rng: &mut R) -> ShotValue {
    let v = volume as u64;
    let flips = Binomial::new(v, 2.0 * eps / 3.0).map(|b| b.sample(rng)).unwrap_or(0);
    let z = if flips % 2 == 1 { -1.0 } else { 1.0 };
    if method == Method::Bare {
        return ShotValue { accepted: true, a: z, b: 1.0, time: volume as f64 };
    }
    let qp = QpTable::from_channel(&PauliChannel::depolarizing(1, eps)).expect("depolarizing channel below 3/4 is invertible");
    let (f, s) = qp.draw(v, rng);
    ShotValue::mitigated(if f { -z } else { z }, s, qp.norm.powf(volume as f64), volume as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EstimateRow {
    pub method: String,
    pub volume: u32,
    pub eps: f64,
    pub estimate: f64,
    pub bias_model: f64,
    pub sigma: f64,
    pub gamma: f64,
    pub lambda: f64,
    pub shots: u64,
    pub seed: u64,
}

#[derive(Clone, Debug, Serialize)]
pub struct EstimateRecord {
    pub row: EstimateRow,
    pub ledger: Ledger,
    pub sigma_empirical: f64,
    pub mean_time: f64,
}

/// Chunk size of the parallel shot loop; chunk sums are merged in order so results do not
/// depend on the thread count.
const CHUNK: u64 = 512;

/// Seed of shot `i` at volume `v`.
pub fn volume_seed(seed: u64, volume: u32) -> u64 {
    seed ^ (volume as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15)
}

/// Run every estimator on `shots` compressed trajectories per volume.
pub fn run_estimator(
    chain: &ChainModel,
    proto: &Protocol,
    specs: &[EstimatorSpec],
    volumes: &[u32],
    shots: u64,
    seed: u64,
) -> Result<Vec<EstimateRecord>> {
    for s in specs {
        s.validate()?;
    }
    let mut out = Vec::new();
    if shots == 0 {
        return Ok(out);
    }
    for &vol in volumes {
        let base = volume_seed(seed, vol);
        let chunks: Vec<Vec<Ledger>> = (0..shots.div_ceil(CHUNK))
            .into_par_iter()
            .map(|c| {
                let mut led = vec![Ledger::default(); specs.len()];
                for i in c * CHUNK..((c + 1) * CHUNK).min(shots) {
                    let mut rng = ChaCha8Rng::seed_from_u64(shot_seed(base, i));
                    let tr = chain.sample(vol, &mut rng);
                    for (m, spec) in specs.iter().enumerate() {
                        let mut mr = ChaCha8Rng::seed_from_u64(shot_seed(base, i));
                        mr.set_stream(1 + m as u64);
                        led[m].add(&evaluate(proto, spec, &tr, &mut mr));
                    }
                }
                led
            })
            .collect();
        let mut total = vec![Ledger::default(); specs.len()];
        for c in &chunks {
            for (t, l) in total.iter_mut().zip(c) {
                t.merge(l);
            }
        }
        for (spec, led) in specs.iter().zip(total) {
            out.push(record(proto, spec, vol, &led, seed)?);
        }
    }
    Ok(out)
}

fn record(proto: &Protocol, spec: &EstimatorSpec, vol: u32, led: &Ledger, seed: u64) -> Result<EstimateRecord> {
    if led.accepted == 0 {
        return Err(SalemError::NoAcceptedShots { method: spec.label(), volume: vol as u64 });
    }
    let mut gamma = led.gamma();
    if spec.s1_action == SubsetAction::MidshotReject && spec.method == Method::CgSalem {
        gamma *= led.mean_time() / vol as f64;
    }
    let rate = match spec.method {
        Method::Bare | Method::EmPhysical => proto.eps_ph,
        _ => proto.eps_l,
    };
    let row = EstimateRow {
        method: spec.label(),
        volume: vol,
        eps: proto.eps_ph,
        estimate: led.estimate(),
        bias_model: proto.bias_model(spec.method, vol),
        sigma: led.sigma_empirical(),
        gamma,
        lambda: gamma.ln() / (rate * vol as f64),
        shots: led.shots,
        seed,
    };
    Ok(EstimateRecord { row, ledger: *led, sigma_empirical: led.sigma_empirical(), mean_time: led.mean_time() })
}

/// Write result rows as CSV.
pub fn write_rows<W: std::io::Write>(rows: &[EstimateRecord], out: W, config_hash: &str) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["method", "V", "eps", "estimate", "bias_model", "sigma", "gamma", "lambda", "N", "seed", "config_hash"])?;
    for r in rows {
        let r = &r.row;
        w.write_record([
            r.method.clone(),
            r.volume.to_string(),
            r.eps.to_string(),
            r.estimate.to_string(),
            r.bias_model.to_string(),
            r.sigma.to_string(),
            r.gamma.to_string(),
            r.lambda.to_string(),
            r.shots.to_string(),
            r.seed.to_string(),
            config_hash.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ledger_merge_is_addition() {
        let vals = [ShotValue::mitigated(1.0, 1.0, 1.2, 3.0), ShotValue::mitigated(-1.0, 1.0, 1.5, 3.0), ShotValue::rejected(1.0)];
        let mut all = Ledger::default();
        let mut a = Ledger::default();
        let mut b = Ledger::default();
        for (i, v) in vals.iter().enumerate() {
            all.add(v);
            if i == 0 {
                a.add(v)
            } else {
                b.add(v)
            }
        }
        a.merge(&b);
        assert_eq!(a, all);
        assert_eq!(all.accepted, 2);
        let expect = (1.0 / 1.2 - 1.0 / 1.5) / (1.0 / 1.44 + 1.0 / 2.25);
        assert!((all.estimate() - expect).abs() < 1e-15);
        assert!((all.mean_time() - 7.0 / 3.0).abs() < 1e-15);
        assert!((all.gamma() - 3.0 / all.sum_b).abs() < 1e-15);
    }

    #[test]
    fn constant_outcomes_have_no_spread() {
        let mut l = Ledger::default();
        for _ in 0..10 {
            l.add(&ShotValue::mitigated(1.0, 1.0, 1.3, 1.0));
        }
        assert!((l.estimate() - 1.3).abs() < 1e-12);
        assert!(l.sigma_empirical() < 1e-7);
        assert!((l.sigma_bound() - (1.69f64 / 10.0).sqrt()).abs() < 1e-12);
    }

    #[test]
    fn batched_draws_have_binomial_parity() {
        let p = 0.1;
        let qp = QpTable::from_logical(&[1.0 - p, p, 0.0, 0.0]).unwrap();
        assert!((qp.norm - 1.0 / (1.0 - 2.0 * p)).abs() < 1e-12);
        let px = qp.probs[1];
        let n = 7;
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let trials = 200_000;
        let mut odd = 0;
        for _ in 0..trials {
            let (flip, sign) = qp.draw(n, &mut rng);
            // every X correction carries a minus sign
            assert_eq!(flip, sign < 0.0);
            odd += usize::from(flip);
        }
        let expect = 0.5 * (1.0 - (1.0 - 2.0 * px).powi(n as i32));
        let f = odd as f64 / trials as f64;
        assert!((f - expect).abs() < 4.0 * (expect * (1.0 - expect) / trials as f64).sqrt(), "{f} vs {expect}");
    }

    #[test]
    fn decay_formula() {
        assert_eq!(Protocol::decay(0.0, 100), 1.0);
        assert!((Protocol::decay(0.01, 50) - 0.98f64.powi(50)).abs() < 1e-15);
    }
}
