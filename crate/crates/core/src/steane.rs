//! Steane [[7,1,3]] code with a flagged syndrome-extraction cycle and a lookup-table decoder.
//!
//! Qubits 0..7 are data, 7 is the syndrome ancilla and 8 the flag. Round one measures the
//! three X stabilizers and then the three Z stabilizers with flagged gadgets, stopping at the
//! first gadget that reports a flag or a non-trivial outcome; in that case a second,
//! unflagged round measures all six stabilizers.

use std::cmp::Ordering;
use std::collections::HashMap;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Result, SalemError};
use crate::ftcircuit::{depolarizing_faults, x_flip, CircuitBuilder, FtCircuit, NoiseModel, SyndromeRecord};
use crate::pauli::PauliOp;

pub const N_DATA: usize = 7;
pub const SYNDROME_ANCILLA: usize = 7;
pub const FLAG_ANCILLA: usize = 8;
pub const N_COSETS: usize = 256;
/// Hamming supports in the order of the stabilizer generators.
pub const SUPPORTS: [[usize; 4]; 3] = [[0, 2, 4, 6], [1, 2, 5, 6], [3, 4, 5, 6]];
const ROUND2_FIRST_RECORD: usize = 12;
const N_RECORDS: usize = 18;

/// Logical classes are indexed `I, X, Y, Z`.
pub fn class_from_bits(x: bool, z: bool) -> usize {
    match (x, z) {
        (false, false) => 0,
        (true, false) => 1,
        (true, true) => 2,
        (false, true) => 3,
    }
}

pub fn class_product(a: usize, b: usize) -> usize {
    let bits = |c: usize| -> (bool, bool) { (c == 1 || c == 2, c == 2 || c == 3) };
    let (ax, az) = bits(a);
    let (bx, bz) = bits(b);
    class_from_bits(ax ^ bx, az ^ bz)
}

/// Logical coset: 6 syndrome bits, then the X_L and Z_L components of the logical class.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Debug, Serialize, Deserialize)]
pub struct Coset(pub u8);

impl Coset {
    pub fn new(syndrome: u8, class: usize) -> Coset {
        let (x, z) = (class == 1 || class == 2, class == 2 || class == 3);
        Coset((syndrome & 0x3f) | (x as u8) << 6 | (z as u8) << 7)
    }

    pub fn syndrome(self) -> u8 {
        self.0 & 0x3f
    }

    pub fn class(self) -> usize {
        class_from_bits(self.0 & 0x40 != 0, self.0 & 0x80 != 0)
    }

    pub fn index(self) -> usize {
        self.0 as usize
    }
}

#[derive(Clone, Debug)]
pub struct SteaneCode {
    pub stabilizers: [PauliOp; 6],
    pub logical_x: PauliOp,
    pub logical_z: PauliOp,
    pub destabilizers: [PauliOp; 6],
}

impl Default for SteaneCode {
    fn default() -> Self {
        SteaneCode::new()
    }
}

impl SteaneCode {
    pub fn new() -> Self {
        let mut stabilizers = [PauliOp::identity(N_DATA); 6];
        for (i, sup) in SUPPORTS.iter().enumerate() {
            let m: u64 = sup.iter().map(|q| 1u64 << q).sum();
            stabilizers[i] = PauliOp::from_masks(N_DATA, m, 0);
            stabilizers[i + 3] = PauliOp::from_masks(N_DATA, 0, m);
        }
        let all = (1u64 << N_DATA) - 1;
        let logical_x = PauliOp::from_masks(N_DATA, all, 0);
        let logical_z = PauliOp::from_masks(N_DATA, 0, all);
        let mut code = SteaneCode { stabilizers, logical_x, logical_z, destabilizers: stabilizers };
        for i in 0..6 {
            code.destabilizers[i] = code.find_destabilizer(i);
        }
        code
    }

    fn find_destabilizer(&self, i: usize) -> PauliOp {
        let mut best: Option<PauliOp> = None;
        for p in PauliOp::all(N_DATA) {
            if self.syndrome(&p) != 1 << i || p.anticommutes(&self.logical_x) || p.anticommutes(&self.logical_z) {
                continue;
            }
            best = match best {
                None => Some(p),
                Some(b) if weight_lex(&p, &b) == Ordering::Less => Some(p),
                b => b,
            };
        }
        best.expect("destabilizer exists")
    }

    /// Bit `i` set when `p` anticommutes with stabilizer `i`.
    pub fn syndrome(&self, p: &PauliOp) -> u8 {
        self.stabilizers.iter().enumerate().filter(|(_, s)| s.anticommutes(p)).fold(0u8, |acc, (i, _)| acc | 1 << i)
    }

    pub fn pure_error(&self, syndrome: u8) -> PauliOp {
        (0..6).filter(|i| syndrome >> i & 1 == 1).fold(PauliOp::identity(N_DATA), |acc, i| acc.mul(&self.destabilizers[i]))
    }

    pub fn logical_op(&self, class: usize) -> PauliOp {
        match class {
            0 => PauliOp::identity(N_DATA),
            1 => self.logical_x,
            2 => self.logical_x.mul(&self.logical_z),
            _ => self.logical_z,
        }
    }

    /// Coset of `p`: its syndrome and its logical class relative to the pure error.
    pub fn reduce_to_coset(&self, p: &PauliOp) -> Coset {
        let s = self.syndrome(p);
        let r = p.mul(&self.pure_error(s));
        Coset::new(s, class_from_bits(r.anticommutes(&self.logical_z), r.anticommutes(&self.logical_x)))
    }

    pub fn representative(&self, c: Coset) -> PauliOp {
        self.pure_error(c.syndrome()).mul(&self.logical_op(c.class()))
    }

    /// Minimal-weight correction of a full six-bit syndrome (X and Z parts independently).
    pub fn standard_recovery(&self, syndrome: u8) -> PauliOp {
        let mut r = PauliOp::identity(N_DATA);
        let z_pos = (syndrome & 0b111) as usize;
        let x_pos = (syndrome >> 3 & 0b111) as usize;
        if z_pos > 0 {
            r = r.mul(&PauliOp::single(N_DATA, z_pos - 1, 'Z'));
        }
        if x_pos > 0 {
            r = r.mul(&PauliOp::single(N_DATA, x_pos - 1, 'X'));
        }
        r
    }

    /// Whether the standard decoder removes `p` without a logical error.
    pub fn standard_correctable(&self, p: &PauliOp) -> bool {
        let s = self.syndrome(p);
        self.reduce_to_coset(&self.standard_recovery(s).mul(p)) == Coset(0)
    }
}

fn weight_lex(a: &PauliOp, b: &PauliOp) -> Ordering {
    a.weight().cmp(&b.weight()).then_with(|| a.lex_cmp(b))
}

fn flagged_gadget(b: &mut CircuitBuilder, support: &[usize; 4], x_type: bool) {
    let (a, f) = (SYNDROME_ANCILLA, FLAG_ANCILLA);
    b.reset(a);
    b.reset(f);
    if x_type {
        b.h(a);
    } else {
        b.h(f);
    }
    for (k, &d) in support.iter().enumerate() {
        if x_type {
            b.cnot(a, d);
        } else {
            b.cnot(d, a);
        }
        if k == 0 || k == 2 {
            if x_type {
                b.cnot(a, f);
            } else {
                b.cnot(f, a);
            }
        }
    }
    if x_type {
        b.h(a);
    } else {
        b.h(f);
    }
    b.measure(a);
    b.measure(f);
}

fn plain_gadget(b: &mut CircuitBuilder, support: &[usize; 4], x_type: bool) {
    let a = SYNDROME_ANCILLA;
    b.reset(a);
    if x_type {
        b.h(a);
    }
    for &d in support {
        if x_type {
            b.cnot(a, d);
        } else {
            b.cnot(d, a);
        }
    }
    if x_type {
        b.h(a);
    }
    b.measure(a);
}

fn gadget_support(g: usize) -> (&'static [usize; 4], bool) {
    (&SUPPORTS[g % 3], g < 3)
}

/// The flagged cycle as an adaptive circuit without noise.
pub fn cycle_circuit() -> FtCircuit {
    let mut b = CircuitBuilder::new(N_DATA + 2);
    let mut prior: Vec<usize> = Vec::new();
    for g in 0..6 {
        let (sup, x_type) = gadget_support(g);
        if g == 0 {
            flagged_gadget(&mut b, sup, x_type);
        } else {
            b.branch_any(prior.clone(), |_| {}, |b| flagged_gadget(b, sup, x_type));
        }
        prior.extend([2 * g, 2 * g + 1]);
    }
    b.branch_any(
        prior,
        |b| {
            for g in 0..6 {
                let (sup, x_type) = gadget_support(g);
                plain_gadget(b, sup, x_type);
            }
        },
        |_| {},
    );
    debug_assert_eq!(b.n_records(), N_RECORDS);
    b.build((0..N_DATA).collect())
}

/// CNOTs followed by two-qubit depolarizing noise, resets followed and ancilla measurements
/// preceded by `X` with half the rate; Hadamards are noiseless.
pub fn noise_model(eps_ph: f64) -> NoiseModel {
    NoiseModel {
        after_cnot: Some(depolarizing_faults(2, eps_ph)),
        after_h: None,
        after_reset: Some(x_flip(eps_ph / 2.0)),
        before_measure: Some(x_flip(eps_ph / 2.0)),
    }
}

/// Six-bit syndrome read by the unflagged round, if it ran.
pub fn round2_syndrome(rec: &SyndromeRecord) -> Option<u8> {
    let mut s = 0u8;
    for g in 0..6 {
        match rec.bit(ROUND2_FIRST_RECORD + g) {
            Some(true) => s |= 1 << g,
            Some(false) => {}
            None => return None,
        }
    }
    Some(s)
}

/// Structural check of a record against the cycle's branching.
pub fn is_realizable(rec: &SyndromeRecord) -> bool {
    if rec.n as usize != N_RECORDS {
        return false;
    }
    let mut triggered = false;
    for g in 0..6 {
        let (s, f) = (rec.bit(2 * g), rec.bit(2 * g + 1));
        if triggered {
            if s.is_some() || f.is_some() {
                return false;
            }
            continue;
        }
        match (s, f) {
            (Some(s), Some(f)) => triggered = s || f,
            _ => return false,
        }
    }
    let r2 = (0..6).map(|g| rec.bit(ROUND2_FIRST_RECORD + g)).collect::<Vec<_>>();
    if triggered {
        r2.iter().all(|b| b.is_some())
    } else {
        r2.iter().all(|b| b.is_none())
    }
}

/// Recovery table keyed by the full record.
#[derive(Clone, Debug, Default)]
pub struct Lut {
    pub entries: HashMap<SyndromeRecord, PauliOp>,
    /// Keys whose paths could not all be left correctable by a single recovery.
    pub conflicts: usize,
}

#[derive(Clone, Debug)]
pub struct SteaneCycle {
    pub code: SteaneCode,
    pub eps_ph: f64,
    pub circuit: FtCircuit,
    pub lut: Lut,
    noiseless: Vec<(SyndromeRecord, Coset)>,
}

impl SteaneCycle {
    pub fn new(eps_ph: f64) -> Result<Self> {
        if !(0.0..0.5).contains(&eps_ph) {
            return Err(SalemError::InvalidInput(format!("physical error rate {eps_ph} outside [0, 0.5)")));
        }
        let code = SteaneCode::new();
        let circuit = cycle_circuit().with_noise(&noise_model(eps_ph));
        let mut cycle = SteaneCycle { code, eps_ph, circuit, lut: Lut::default(), noiseless: Vec::new() };
        cycle.lut = build_lut(&cycle);
        cycle.noiseless = (0..N_COSETS).map(|c| cycle.run_noiseless(Coset(c as u8))).collect::<Result<Vec<_>>>()?;
        Ok(cycle)
    }

    fn run_noiseless(&self, c: Coset) -> Result<(SyndromeRecord, Coset)> {
        let input = self.code.representative(c);
        let out = self.circuit.propagate(&Default::default(), &input);
        let r = self.recovery(&out.record)?;
        Ok((out.record, self.code.reduce_to_coset(&r.mul(&out.data_frame))))
    }

    /// Recovery for a record: table entry, else the minimal-weight correction of the
    /// unflagged round's syndrome.
    pub fn recovery(&self, rec: &SyndromeRecord) -> Result<PauliOp> {
        if let Some(r) = self.lut.entries.get(rec) {
            return Ok(*r);
        }
        if !is_realizable(rec) {
            return Err(SalemError::UnknownSyndrome(rec.canonical_key()));
        }
        Ok(match round2_syndrome(rec) {
            Some(s) => self.code.standard_recovery(s),
            None => PauliOp::identity(N_DATA),
        })
    }

    /// Record and post-recovery coset of one noiseless cycle on coset `c`.
    pub fn noiseless(&self, c: Coset) -> (SyndromeRecord, Coset) {
        self.noiseless[c.index()]
    }

    /// Logical class a noiseless cycle assigns to `c`.
    pub fn ideal_class(&self, c: Coset) -> usize {
        self.noiseless[c.index()].1.class()
    }

    /// One noiseless cycle maps `c` to the trivial logical class.
    pub fn correctable(&self, c: Coset) -> bool {
        self.noiseless[c.index()].1.class() == 0
    }

    pub fn write_lut_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["key", "recovery"])?;
        let mut rows: Vec<(String, String)> = self.lut.entries.iter().map(|(k, r)| (k.canonical_key(), r.to_string())).collect();
        rows.sort();
        for (k, r) in rows {
            w.write_record([k, r])?;
        }
        w.flush()?;
        Ok(())
    }
}

struct GroupEntry {
    frame: PauliOp,
    weight: f64,
    from_input: bool,
}

/// Build the recovery table from every path with at most one fault, counting an input
/// error on the data as that fault.
pub fn build_lut(cycle: &SteaneCycle) -> Lut {
    let code = &cycle.code;
    let mut groups: HashMap<SyndromeRecord, Vec<GroupEntry>> = HashMap::new();
    let mut inputs = vec![PauliOp::identity(N_DATA)];
    for q in 0..N_DATA {
        for c in ['X', 'Y', 'Z'] {
            inputs.push(PauliOp::single(N_DATA, q, c));
        }
    }
    for e in &inputs {
        let out = cycle.circuit.propagate(&Default::default(), e);
        groups.entry(out.record).or_default().push(GroupEntry { frame: out.data_frame, weight: 1.0, from_input: true });
    }
    cycle.circuit.enumerate_fault_paths(&PauliOp::identity(N_DATA), 1, |p, o| {
        if !p.faults.is_empty() {
            groups.entry(o.record).or_default().push(GroupEntry { frame: o.data_frame, weight: p.probability, from_input: false });
        }
    });

    let mut candidates: Vec<PauliOp> = PauliOp::all(N_DATA).filter(|p| p.weight() <= 2).collect();
    candidates.sort_by(weight_lex);

    let mut lut = Lut::default();
    let mut keys: Vec<SyndromeRecord> = groups.keys().copied().collect();
    keys.sort();
    for key in keys {
        let group = &groups[&key];
        let mut best: Option<(u8, f64, PauliOp)> = None;
        for r in &candidates {
            let mut inputs_ok = true;
            let mut all_ok = true;
            let mut score = 0.0;
            for g in group {
                let res = r.mul(&g.frame);
                let exact = code.reduce_to_coset(&res) == Coset(0);
                if exact {
                    score += g.weight;
                } else if g.from_input {
                    inputs_ok = false;
                }
                if !code.standard_correctable(&res) {
                    all_ok = false;
                }
            }
            let tier = match (inputs_ok, all_ok) {
                (true, true) => 3,
                (true, false) => 2,
                (false, true) => 1,
                (false, false) => 0,
            };
            let better = match &best {
                None => true,
                Some((t, s, _)) => tier > *t || (tier == *t && score > *s * (1.0 + 1e-12)),
            };
            if better {
                best = Some((tier, score, *r));
            }
        }
        let (tier, _, r) = best.expect("candidates are non-empty");
        if tier < 3 {
            lut.conflicts += 1;
            log::warn!("recovery table conflict at {}", key.canonical_key());
        }
        lut.entries.insert(key, r);
    }
    lut
}
