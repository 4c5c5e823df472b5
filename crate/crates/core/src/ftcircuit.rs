//! Adaptive Clifford circuits with Pauli noise locations.
//!
//! Every circuit built here has deterministic measurement outcomes in the noiseless
//! reference, so a shot is fully described by the Pauli frame and the record flips.
//! `BRANCH` ops are evaluated at run time against the flips recorded so far; fault paths
//! are enumerated depth-first over the locations that actually execute, so a path's
//! probability carries the no-fault factor of every executed location it leaves empty.

use std::fmt;
use std::io::Write;

use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SalemError};
use crate::pauli::{PauliChannel, PauliOp};

pub type OpId = usize;
pub type RecordId = usize;
pub type LocId = usize;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Op {
    Cnot {
        control: usize,
        target: usize,
    },
    H {
        qubit: usize,
    },
    ResetZ {
        qubit: usize,
    },
    MeasureZ {
        qubit: usize,
        record: RecordId,
    },
    /// Runs `then_block` when any listed record flipped, `else_block` otherwise.
    Branch {
        when_any: Vec<RecordId>,
        then_block: Vec<OpId>,
        else_block: Vec<OpId>,
    },
}

impl Op {
    pub fn qubits(&self) -> Vec<usize> {
        match self {
            Op::Cnot { control, target } => vec![*control, *target],
            Op::H { qubit } | Op::ResetZ { qubit } | Op::MeasureZ { qubit, .. } => vec![*qubit],
            Op::Branch { .. } => vec![],
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Placement {
    Before,
    After,
}

/// A noise location: with probability `channel` weight, the local Pauli acts on the op's
/// qubits before or after it. The channel holds only the error terms.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseLocation {
    pub op: OpId,
    pub placement: Placement,
    pub channel: PauliChannel,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FtCircuit {
    pub n_qubits: usize,
    pub n_records: usize,
    pub data_qubits: Vec<usize>,
    pub ops: Vec<Op>,
    pub body: Vec<OpId>,
    pub noise: Vec<NoiseLocation>,
    #[serde(skip)]
    compiled: Compiled,
}

#[derive(Clone, Debug, Default)]
struct Compiled {
    blocks: Vec<Vec<OpId>>,
    branch_blocks: Vec<(usize, usize)>,
    before: Vec<Vec<LocId>>,
    after: Vec<Vec<LocId>>,
    faults: Vec<Vec<(PauliOp, f64)>>,
    rates: Vec<f64>,
}

/// Measurement record of one shot: which records executed and which of those flipped.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Debug)]
pub struct SyndromeRecord {
    pub n: u8,
    pub executed: u64,
    pub values: u64,
}

impl SyndromeRecord {
    pub fn empty(n: usize) -> Self {
        SyndromeRecord { n: n as u8, executed: 0, values: 0 }
    }

    pub fn bit(&self, r: RecordId) -> Option<bool> {
        if (self.executed >> r) & 1 == 1 {
            Some((self.values >> r) & 1 == 1)
        } else {
            None
        }
    }

    pub fn set(&mut self, r: RecordId, v: bool) {
        self.executed |= 1 << r;
        if v {
            self.values |= 1 << r;
        } else {
            self.values &= !(1 << r);
        }
    }

    pub fn is_trivial(&self) -> bool {
        self.values == 0
    }

    /// One symbol per record: `0`, `1`, or `-` when the record was not executed.
    pub fn canonical_key(&self) -> String {
        self.to_string()
    }

    pub fn parse(s: &str) -> Result<Self> {
        let mut r = SyndromeRecord::empty(s.len());
        for (i, c) in s.chars().enumerate() {
            match c {
                '0' => r.set(i, false),
                '1' => r.set(i, true),
                '-' => {}
                _ => return Err(SalemError::InvalidInput(format!("bad record key {s:?}"))),
            }
        }
        Ok(r)
    }
}

impl fmt::Display for SyndromeRecord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for i in 0..self.n as usize {
            let c = match self.bit(i) {
                None => '-',
                Some(false) => '0',
                Some(true) => '1',
            };
            write!(f, "{c}")?;
        }
        Ok(())
    }
}

/// Faults of a path as `(location, index into the location's fault list)`.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct FaultPath {
    pub faults: Vec<(LocId, usize)>,
    pub probability: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ShotOutcome {
    pub record: SyndromeRecord,
    pub frame: PauliOp,
    pub data_frame: PauliOp,
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct EnumerationSummary {
    pub paths: u64,
    pub total_probability: f64,
    pub missing_probability: f64,
}

#[derive(Clone, Debug)]
struct ExecState {
    frame: PauliOp,
    record: SyndromeRecord,
}

#[derive(Clone, Debug)]
struct Cursor {
    stack: Vec<(usize, usize)>,
    sub: usize,
}

/// Builds op arenas with nested branch blocks.
pub struct CircuitBuilder {
    n_qubits: usize,
    n_records: usize,
    ops: Vec<Op>,
    stack: Vec<Vec<OpId>>,
}

impl CircuitBuilder {
    pub fn new(n_qubits: usize) -> Self {
        assert!(n_qubits <= 64);
        CircuitBuilder { n_qubits, n_records: 0, ops: Vec::new(), stack: vec![Vec::new()] }
    }

    fn push(&mut self, op: Op) -> OpId {
        let id = self.ops.len();
        self.ops.push(op);
        self.stack.last_mut().unwrap().push(id);
        id
    }

    pub fn cnot(&mut self, control: usize, target: usize) -> OpId {
        self.push(Op::Cnot { control, target })
    }

    pub fn h(&mut self, qubit: usize) -> OpId {
        self.push(Op::H { qubit })
    }

    pub fn reset(&mut self, qubit: usize) -> OpId {
        self.push(Op::ResetZ { qubit })
    }

    pub fn measure(&mut self, qubit: usize) -> RecordId {
        let record = self.n_records;
        self.n_records += 1;
        self.push(Op::MeasureZ { qubit, record });
        record
    }

    pub fn branch_any(&mut self, when_any: Vec<RecordId>, then_f: impl FnOnce(&mut Self), else_f: impl FnOnce(&mut Self)) -> OpId {
        self.stack.push(Vec::new());
        then_f(self);
        let then_block = self.stack.pop().unwrap();
        self.stack.push(Vec::new());
        else_f(self);
        let else_block = self.stack.pop().unwrap();
        self.push(Op::Branch { when_any, then_block, else_block })
    }

    pub fn n_records(&self) -> usize {
        self.n_records
    }

    pub fn build(mut self, data_qubits: Vec<usize>) -> FtCircuit {
        assert_eq!(self.stack.len(), 1, "unclosed branch");
        let body = self.stack.pop().unwrap();
        let mut c = FtCircuit {
            n_qubits: self.n_qubits,
            n_records: self.n_records,
            data_qubits,
            ops: self.ops,
            body,
            noise: Vec::new(),
            compiled: Compiled::default(),
        };
        c.compile().expect("builder produces valid circuits");
        c
    }
}

/// Error channels attached to each op type; `None` leaves the op noiseless.
#[derive(Clone, Debug, Default)]
pub struct NoiseModel {
    pub after_cnot: Option<PauliChannel>,
    pub after_h: Option<PauliChannel>,
    pub after_reset: Option<PauliChannel>,
    pub before_measure: Option<PauliChannel>,
}

/// Error terms of an `n`-qubit depolarizing channel with total rate `eps`.
pub fn depolarizing_faults(n: usize, eps: f64) -> PauliChannel {
    let ch = PauliChannel::depolarizing(n, eps);
    let id = PauliOp::identity(n);
    let terms: Vec<(PauliOp, f64)> = ch.iter().filter(|(p, _)| **p != id).map(|(p, w)| (*p, *w)).collect();
    PauliChannel::from_terms(n, terms).expect("valid depolarizing terms")
}

/// Single Pauli `X` with rate `eps`.
pub fn x_flip(eps: f64) -> PauliChannel {
    PauliChannel::from_terms(1, [(PauliOp::single(1, 0, 'X'), eps)]).expect("valid flip")
}

impl FtCircuit {
    pub fn from_json(s: &str) -> Result<Self> {
        let mut c: FtCircuit = serde_json::from_str(s)?;
        c.compile()?;
        Ok(c)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn with_noise(mut self, model: &NoiseModel) -> Self {
        self.noise.clear();
        for (id, op) in self.ops.iter().enumerate() {
            let (ch, placement) = match op {
                Op::Cnot { .. } => (&model.after_cnot, Placement::After),
                Op::H { .. } => (&model.after_h, Placement::After),
                Op::ResetZ { .. } => (&model.after_reset, Placement::After),
                Op::MeasureZ { .. } => (&model.before_measure, Placement::Before),
                Op::Branch { .. } => continue,
            };
            if let Some(ch) = ch {
                self.noise.push(NoiseLocation { op: id, placement, channel: ch.clone() });
            }
        }
        self.compile().expect("noise model matches op arity");
        self
    }

    fn compile(&mut self) -> Result<()> {
        if self.n_qubits > 64 || self.n_records > 64 {
            return Err(SalemError::InvalidCircuit("at most 64 qubits and 64 records".into()));
        }
        let mut comp = Compiled {
            blocks: vec![self.body.clone()],
            branch_blocks: vec![(usize::MAX, usize::MAX); self.ops.len()],
            before: vec![Vec::new(); self.ops.len()],
            after: vec![Vec::new(); self.ops.len()],
            ..Default::default()
        };
        for (id, op) in self.ops.iter().enumerate() {
            for q in op.qubits() {
                if q >= self.n_qubits {
                    return Err(SalemError::InvalidCircuit(format!("op {id} touches qubit {q}")));
                }
            }
            match op {
                Op::Branch { when_any, then_block, else_block } => {
                    if when_any.iter().any(|&r| r >= self.n_records) {
                        return Err(SalemError::InvalidCircuit(format!("branch {id} reads unknown record")));
                    }
                    let t = comp.blocks.len();
                    comp.blocks.push(then_block.clone());
                    comp.blocks.push(else_block.clone());
                    comp.branch_blocks[id] = (t, t + 1);
                }
                Op::MeasureZ { record, .. } if *record >= self.n_records => {
                    return Err(SalemError::InvalidCircuit(format!("op {id} writes unknown record")));
                }
                _ => {}
            }
        }
        for block in &comp.blocks {
            if block.iter().any(|&o| o >= self.ops.len()) {
                return Err(SalemError::InvalidCircuit("block references unknown op".into()));
            }
        }
        for (l, loc) in self.noise.iter().enumerate() {
            let op = self.ops.get(loc.op).ok_or_else(|| SalemError::InvalidCircuit(format!("noise on op {}", loc.op)))?;
            let qs = op.qubits();
            if qs.len() != loc.channel.num_qubits() {
                return Err(SalemError::InvalidCircuit(format!("noise location {l} has wrong arity")));
            }
            match loc.placement {
                Placement::Before => comp.before[loc.op].push(l),
                Placement::After => comp.after[loc.op].push(l),
            }
            let faults: Vec<(PauliOp, f64)> =
                loc.channel.iter().filter(|(p, w)| !p.is_identity() && **w > 0.0).map(|(p, w)| (p.embed(self.n_qubits, &qs), *w)).collect();
            let rate: f64 = faults.iter().map(|f| f.1).sum();
            if !(0.0..1.0).contains(&rate) {
                return Err(SalemError::InvalidCircuit(format!("noise location {l} has rate {rate}")));
            }
            comp.faults.push(faults);
            comp.rates.push(rate);
        }
        self.compiled = comp;
        Ok(())
    }

    pub fn num_locations(&self) -> usize {
        self.noise.len()
    }

    pub fn location_rate(&self, l: LocId) -> f64 {
        self.compiled.rates[l]
    }

    pub fn location_faults(&self, l: LocId) -> &[(PauliOp, f64)] {
        &self.compiled.faults[l]
    }

    fn initial_state(&self, input: &PauliOp) -> ExecState {
        let frame = if input.num_qubits() == self.n_qubits {
            *input
        } else {
            assert_eq!(input.num_qubits(), self.data_qubits.len(), "input acts on the data qubits");
            input.embed(self.n_qubits, &self.data_qubits)
        };
        ExecState { frame, record: SyndromeRecord::empty(self.n_records) }
    }

    fn cursor(&self) -> Cursor {
        Cursor { stack: vec![(0, 0)], sub: 0 }
    }

    fn apply(&self, op: &Op, st: &mut ExecState) {
        let f = &mut st.frame;
        match *op {
            Op::Cnot { control, target } => {
                let (xc, zc) = f.get(control);
                let (xt, zt) = f.get(target);
                f.set(target, xt ^ xc, zt);
                f.set(control, xc, zc ^ zt);
            }
            Op::H { qubit } => {
                let (x, z) = f.get(qubit);
                f.set(qubit, z, x);
            }
            Op::ResetZ { qubit } => f.set(qubit, false, false),
            Op::MeasureZ { qubit, record } => {
                let (x, _) = f.get(qubit);
                st.record.set(record, x);
            }
            Op::Branch { .. } => unreachable!(),
        }
    }

    /// Advance to the next noise location, applying ops on the way.
    fn next_location(&self, cur: &mut Cursor, st: &mut ExecState) -> Option<LocId> {
        let comp = &self.compiled;
        loop {
            let &(b, i) = cur.stack.last()?;
            let block = &comp.blocks[b];
            if i >= block.len() {
                cur.stack.pop();
                if let Some(top) = cur.stack.last_mut() {
                    top.1 += 1;
                }
                cur.sub = 0;
                continue;
            }
            let id = block[i];
            let nb = comp.before[id].len();
            if cur.sub < nb {
                cur.sub += 1;
                return Some(comp.before[id][cur.sub - 1]);
            }
            if cur.sub == nb {
                if let Op::Branch { when_any, .. } = &self.ops[id] {
                    let fire = when_any.iter().any(|&r| st.record.bit(r) == Some(true));
                    let (t, e) = comp.branch_blocks[id];
                    cur.sub = 0;
                    cur.stack.push((if fire { t } else { e }, 0));
                    continue;
                }
                self.apply(&self.ops[id], st);
                cur.sub += 1;
            }
            let k = cur.sub - nb - 1;
            if k < comp.after[id].len() {
                cur.sub += 1;
                return Some(comp.after[id][k]);
            }
            cur.stack.last_mut().unwrap().1 += 1;
            cur.sub = 0;
        }
    }

    fn outcome(&self, st: &ExecState) -> ShotOutcome {
        ShotOutcome { record: st.record, frame: st.frame, data_frame: st.frame.restrict(&self.data_qubits) }
    }

    /// Run with the faults of `path` inserted; locations that do not execute are ignored.
    pub fn propagate(&self, path: &FaultPath, input: &PauliOp) -> ShotOutcome {
        let mut st = self.initial_state(input);
        let mut cur = self.cursor();
        while let Some(l) = self.next_location(&mut cur, &mut st) {
            for &(fl, k) in &path.faults {
                if fl == l {
                    let p = self.compiled.faults[l][k].0;
                    st.frame = st.frame.mul(&p);
                }
            }
        }
        self.outcome(&st)
    }

    /// Depth-first enumeration of every fault path with at most `max_weight` faults.
    pub fn enumerate_fault_paths<F>(&self, input: &PauliOp, max_weight: usize, mut visit: F) -> EnumerationSummary
    where
        F: FnMut(&FaultPath, &ShotOutcome),
    {
        let mut summary = EnumerationSummary::default();
        let mut path = FaultPath::default();
        let st = self.initial_state(input);
        self.dfs(self.cursor(), st, 1.0, max_weight, &mut path, &mut summary, &mut visit);
        summary
    }

    #[allow(clippy::too_many_arguments)]
    fn dfs<F>(
        &self,
        mut cur: Cursor,
        mut st: ExecState,
        mut prob: f64,
        budget: usize,
        path: &mut FaultPath,
        summary: &mut EnumerationSummary,
        visit: &mut F,
    ) where
        F: FnMut(&FaultPath, &ShotOutcome),
    {
        while let Some(l) = self.next_location(&mut cur, &mut st) {
            let rate = self.compiled.rates[l];
            if rate == 0.0 {
                continue;
            }
            if budget > 0 {
                for (k, &(p, w)) in self.compiled.faults[l].iter().enumerate() {
                    let mut st2 = st.clone();
                    st2.frame = st2.frame.mul(&p);
                    path.faults.push((l, k));
                    self.dfs(cur.clone(), st2, prob * w, budget - 1, path, summary, visit);
                    path.faults.pop();
                }
            } else {
                summary.missing_probability += prob * rate;
            }
            prob *= 1.0 - rate;
        }
        path.probability = prob;
        summary.paths += 1;
        summary.total_probability += prob;
        visit(path, &self.outcome(&st));
    }

    /// Collect all fault paths (small circuits and tests).
    pub fn fault_paths(&self, max_weight: usize) -> (Vec<FaultPath>, EnumerationSummary) {
        let mut v = Vec::new();
        let id = PauliOp::identity(self.data_qubits.len());
        let s = self.enumerate_fault_paths(&id, max_weight, |p, _| v.push(p.clone()));
        (v, s)
    }

    /// One shot with independently sampled faults at every executed location.
    pub fn sample_with<R: rand::Rng + ?Sized>(&self, input: &PauliOp, rng: &mut R) -> ShotOutcome {
        let mut st = self.initial_state(input);
        let mut cur = self.cursor();
        while let Some(l) = self.next_location(&mut cur, &mut st) {
            let rate = self.compiled.rates[l];
            let mut u: f64 = rng.random();
            if u < rate {
                for &(p, w) in &self.compiled.faults[l] {
                    if u < w {
                        st.frame = st.frame.mul(&p);
                        break;
                    }
                    u -= w;
                }
            }
        }
        self.outcome(&st)
    }

    /// One shot seeded by `seed`.
    pub fn sample_shot(&self, input: &PauliOp, seed: u64) -> ShotOutcome {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        self.sample_with(input, &mut rng)
    }

    /// `n` shots; shot `i` is seeded with `base_seed ^ i`.
    pub fn sample_shots(&self, input: &PauliOp, n: u64, base_seed: u64) -> Vec<ShotOutcome> {
        (0..n).map(|i| self.sample_shot(input, shot_seed(base_seed, i))).collect()
    }

    /// Write enumerated paths as CSV: index, probability, faults, record, data frame.
    pub fn dump_fault_paths<W: Write>(&self, max_weight: usize, out: W) -> Result<EnumerationSummary> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["path", "probability", "faults", "record", "data_frame"])?;
        let mut err = None;
        let mut i = 0u64;
        let id = PauliOp::identity(self.data_qubits.len());
        let s = self.enumerate_fault_paths(&id, max_weight, |p, o| {
            let faults: Vec<String> = p.faults.iter().map(|&(l, k)| format!("{}:{}", l, self.compiled.faults[l][k].0)).collect();
            let row =
                [i.to_string(), format!("{:.17e}", p.probability), faults.join(";"), o.record.canonical_key(), o.data_frame.to_string()];
            if let Err(e) = w.write_record(&row) {
                err.get_or_insert(e);
            }
            i += 1;
        });
        if let Some(e) = err {
            return Err(e.into());
        }
        w.flush()?;
        Ok(s)
    }
}

pub fn shot_seed(base: u64, index: u64) -> u64 {
    base ^ index
}

/// Probability mass of at most `w` faults over independent locations with the given rates.
pub fn truncated_binomial_mass(rates: &[f64], w: usize) -> f64 {
    // e[k]: probability of exactly k faults so far
    let mut e = vec![0.0; w + 1];
    e[0] = 1.0;
    for &r in rates {
        for k in (0..=w).rev() {
            let stay = e[k] * (1.0 - r);
            let from = if k > 0 { e[k - 1] * r } else { 0.0 };
            e[k] = stay + from;
        }
    }
    e.iter().sum()
}
