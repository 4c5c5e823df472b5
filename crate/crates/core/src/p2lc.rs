//! Physical-to-logical characterization of a memory cycle.
//!
//! A `JointTable` stores `P(s, out | in)` over records `s` and input/output cosets from
//! truncated fault-path enumeration. From it the approximate logical channel of a cycle
//! in a long memory is assembled: the correctable part of a previous cycle's output is fed
//! through the noisy cycle and then through one noiseless cycle that fixes the logical class.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Result, SalemError};
use crate::ftcircuit::SyndromeRecord;
use crate::pauli::{inverse_norm, invert_channel, logical_channel, PauliOp};
use crate::steane::{class_product, Coset, SteaneCycle, N_COSETS};

pub type Dist = Vec<f64>;
/// Logical channel weights in `I, X, Y, Z` order; the sum may fall short of one by the
/// missing mass of the truncated enumeration.
pub type Logical = [f64; 4];

#[derive(Clone, Debug, Default, PartialEq)]
pub struct InputSlice {
    /// `(key index, output coset, probability)`, sorted by key then coset.
    pub entries: Vec<(u32, u8, f64)>,
    pub missing: f64,
    pub max_internal_faults: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct JointTable {
    pub eps_ph: f64,
    pub max_weight: usize,
    pub keys: Vec<SyndromeRecord>,
    pub key_index: HashMap<SyndromeRecord, u32>,
    pub inputs: Vec<InputSlice>,
}

#[derive(Serialize, Deserialize)]
struct TableIndex {
    format: String,
    eps_ph: f64,
    max_weight: usize,
    config_hash: String,
    keys: Vec<String>,
    inputs: Vec<SliceIndex>,
}

#[derive(Serialize, Deserialize)]
struct SliceIndex {
    offset: u64,
    len: u64,
    missing: f64,
    max_internal_faults: usize,
}

const TABLE_FORMAT: &str = "salem-joint-table-v1";
const ENTRY_BYTES: usize = 13;

impl JointTable {
    /// Enumerate every input coset. The identity input gets `max_weight` internal faults;
    /// any other input already carries one fault, so it gets `max_weight - 1`.
    pub fn build(cycle: &SteaneCycle, max_weight: usize) -> Result<Self> {
        let mut keys = Vec::new();
        let mut key_index = HashMap::new();
        let mut inputs = Vec::with_capacity(N_COSETS);
        for c in 0..N_COSETS {
            let coset = Coset(c as u8);
            let budget = if c == 0 { max_weight } else { max_weight.saturating_sub(1) };
            let input = cycle.code.representative(coset);
            let mut acc: HashMap<(SyndromeRecord, u8), f64> = HashMap::new();
            let mut err = None;
            let summary = cycle.circuit.enumerate_fault_paths(&input, budget, |p, o| match cycle.recovery(&o.record) {
                Ok(r) => {
                    let out = cycle.code.reduce_to_coset(&r.mul(&o.data_frame));
                    *acc.entry((o.record, out.0)).or_insert(0.0) += p.probability;
                }
                Err(e) => {
                    err.get_or_insert(e);
                }
            });
            if let Some(e) = err {
                return Err(e);
            }
            let mut rows: Vec<((SyndromeRecord, u8), f64)> = acc.into_iter().collect();
            rows.sort_by_key(|a| a.0);
            let mut entries = Vec::with_capacity(rows.len());
            for ((rec, out), p) in rows {
                let k = *key_index.entry(rec).or_insert_with(|| {
                    keys.push(rec);
                    (keys.len() - 1) as u32
                });
                entries.push((k, out, p));
            }
            inputs.push(InputSlice { entries, missing: summary.missing_probability, max_internal_faults: budget });
        }
        let mut t = JointTable { eps_ph: cycle.eps_ph, max_weight, keys, key_index, inputs };
        t.canonicalize();
        Ok(t)
    }

    /// Renumber keys in sorted order so the table is independent of enumeration order.
    fn canonicalize(&mut self) {
        let mut order: Vec<u32> = (0..self.keys.len() as u32).collect();
        order.sort_by_key(|&k| self.keys[k as usize]);
        let mut remap = vec![0u32; self.keys.len()];
        for (new, &old) in order.iter().enumerate() {
            remap[old as usize] = new as u32;
        }
        self.keys = order.iter().map(|&k| self.keys[k as usize]).collect();
        self.key_index = self.keys.iter().enumerate().map(|(i, k)| (*k, i as u32)).collect();
        for s in &mut self.inputs {
            for e in &mut s.entries {
                e.0 = remap[e.0 as usize];
            }
            s.entries.sort_by_key(|a| (a.0, a.1));
        }
    }

    pub fn num_keys(&self) -> usize {
        self.keys.len()
    }

    pub fn key_of(&self, rec: &SyndromeRecord) -> Option<u32> {
        self.key_index.get(rec).copied()
    }

    /// Keys reachable from the identity input.
    pub fn identity_keys(&self) -> usize {
        let set: HashSet<u32> = self.inputs[0].entries.iter().map(|e| e.0).collect();
        set.len()
    }

    /// `sum_in p(in) P(s, out | in)` as a map key -> output-coset distribution.
    pub fn propagate(&self, input: &[f64]) -> BTreeMap<u32, Dist> {
        let mut out: BTreeMap<u32, Dist> = BTreeMap::new();
        for (c, &w) in input.iter().enumerate() {
            if w == 0.0 {
                continue;
            }
            for &(k, o, p) in &self.inputs[c].entries {
                out.entry(k).or_insert_with(|| vec![0.0; N_COSETS])[o as usize] += w * p;
            }
        }
        out
    }

    /// Missing mass for a given input distribution.
    pub fn missing(&self, input: &[f64]) -> f64 {
        input.iter().zip(&self.inputs).map(|(w, s)| w * s.missing).sum()
    }

    pub fn save(&self, dir: &Path, config_hash: &str) -> Result<()> {
        fs::create_dir_all(dir)?;
        let mut bin = Vec::new();
        let mut slices = Vec::new();
        for s in &self.inputs {
            slices.push(SliceIndex {
                offset: (bin.len() / ENTRY_BYTES) as u64,
                len: s.entries.len() as u64,
                missing: s.missing,
                max_internal_faults: s.max_internal_faults,
            });
            for &(k, o, p) in &s.entries {
                bin.extend_from_slice(&k.to_le_bytes());
                bin.push(o);
                bin.extend_from_slice(&p.to_le_bytes());
            }
        }
        let index = TableIndex {
            format: TABLE_FORMAT.into(),
            eps_ph: self.eps_ph,
            max_weight: self.max_weight,
            config_hash: config_hash.into(),
            keys: self.keys.iter().map(|k| k.canonical_key()).collect(),
            inputs: slices,
        };
        fs::write(dir.join("table.bin"), bin)?;
        let mut f = fs::File::create(dir.join("table.json"))?;
        f.write_all(serde_json::to_string_pretty(&index)?.as_bytes())?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let idx_path = dir.join("table.json");
        let bin_path = dir.join("table.bin");
        if !idx_path.exists() || !bin_path.exists() {
            return Err(SalemError::MissingTable(dir.display().to_string()));
        }
        let index: TableIndex = serde_json::from_str(&fs::read_to_string(idx_path)?)?;
        if index.format != TABLE_FORMAT {
            return Err(SalemError::InvalidInput(format!("unknown table format {}", index.format)));
        }
        let bin = fs::read(bin_path)?;
        let keys = index.keys.iter().map(|k| SyndromeRecord::parse(k)).collect::<Result<Vec<_>>>()?;
        let mut inputs = Vec::new();
        for s in &index.inputs {
            let mut entries = Vec::with_capacity(s.len as usize);
            for i in s.offset..s.offset + s.len {
                let b = &bin
                    .get(i as usize * ENTRY_BYTES..(i as usize + 1) * ENTRY_BYTES)
                    .ok_or_else(|| SalemError::InvalidInput("truncated table.bin".into()))?;
                let k = u32::from_le_bytes(b[0..4].try_into().unwrap());
                let p = f64::from_le_bytes(b[5..13].try_into().unwrap());
                entries.push((k, b[4], p));
            }
            inputs.push(InputSlice { entries, missing: s.missing, max_internal_faults: s.max_internal_faults });
        }
        let key_index = keys.iter().enumerate().map(|(i, k)| (*k, i as u32)).collect();
        Ok(JointTable { eps_ph: index.eps_ph, max_weight: index.max_weight, keys, key_index, inputs })
    }
}

/// Which conditioning the channel estimate uses.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Conditioning {
    /// Feed the previous cycle's correctable output as input errors.
    pub input_errors: bool,
    /// For post-selected estimates, also require the next (noiseless) cycle to be accepted.
    pub future_acceptance: bool,
}

impl Default for Conditioning {
    fn default() -> Self {
        Conditioning { input_errors: true, future_acceptance: true }
    }
}

/// Set of rejected (or otherwise singled-out) record keys.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Partition {
    pub s1: HashSet<SyndromeRecord>,
    pub tau: f64,
}

impl Partition {
    pub fn accepts(&self, rec: &SyndromeRecord) -> bool {
        !self.s1.contains(rec)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct KeyChannel {
    pub key: String,
    pub probability: f64,
    /// Normalized logical channel given this record.
    pub channel: Logical,
    pub eps_l: f64,
}

/// Alg.-style channel estimate with fine-grained (per-record) conditionals.
#[derive(Clone, Debug)]
pub struct Characterization {
    pub eps_ph: f64,
    pub channel: Logical,
    pub eps_l: f64,
    pub missing: f64,
    pub per_key: Vec<KeyChannel>,
    key_pos: HashMap<SyndromeRecord, usize>,
    pub records: Vec<SyndromeRecord>,
}

impl Characterization {
    pub fn key_channel(&self, rec: &SyndromeRecord) -> Option<&KeyChannel> {
        self.key_pos.get(rec).map(|&i| &self.per_key[i])
    }

    /// `S1 = {s : eps_L|s > tau}`.
    pub fn partition(&self, tau: f64) -> Partition {
        let s1 = self.per_key.iter().zip(&self.records).filter(|(k, _)| k.eps_l > tau).map(|(_, r)| *r).collect();
        Partition { s1, tau }
    }

    /// Distinct values of `eps_L|s`, sorted; thresholds between them give distinct partitions.
    pub fn tau_breakpoints(&self) -> Vec<f64> {
        let mut v: Vec<f64> = self.per_key.iter().map(|k| k.eps_l).collect();
        v.sort_by(|a, b| a.partial_cmp(b).unwrap());
        v.dedup_by(|a, b| (*a - *b).abs() < 1e-14);
        v
    }

    /// Per-subset channels `Lambda_L|k`, their probabilities and Bayes statistics.
    pub fn subset_stats(&self, part: &Partition) -> SubsetStats {
        let mut ch = [[0.0; 4]; 2];
        let mut p = [0.0; 2];
        for (k, r) in self.per_key.iter().zip(&self.records) {
            let i = usize::from(!part.accepts(r));
            p[i] += k.probability;
            for c in 0..4 {
                ch[i][c] += k.probability * k.channel[c];
            }
        }
        let norm = |v: [f64; 4], m: f64| if m > 0.0 { v.map(|x| x / m) } else { [1.0, 0.0, 0.0, 0.0] };
        let ch0 = norm(ch[0], p[0]);
        let ch1 = norm(ch[1], p[1]);
        let eps0 = 1.0 - ch0[0];
        let eps1 = 1.0 - ch1[0];
        let eps_l = p[0] * eps0 + p[1] * eps1;
        SubsetStats {
            p_s0: p[0],
            p_s1: p[1],
            eps_l0: eps0,
            eps_l1: eps1,
            p1_given_l: if eps_l > 0.0 { p[1] * eps1 / eps_l } else { 0.0 },
            channel0: ch0,
            channel1: ch1,
        }
    }

    /// ML post-correction: apply the most likely logical class of each conditional channel.
    pub fn ml_corrected(&self) -> Characterization {
        let mut out = self.clone();
        let mut total = [0.0; 4];
        for k in &mut out.per_key {
            let best = argmax(&k.channel);
            let mut shifted = [0.0; 4];
            for c in 0..4 {
                shifted[class_product(c, best)] += k.channel[c];
            }
            k.channel = shifted;
            k.eps_l = 1.0 - shifted[0];
            for c in 0..4 {
                total[c] += k.probability * shifted[c];
            }
        }
        out.channel = total;
        out.eps_l = total[1] + total[2] + total[3];
        out
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct SubsetStats {
    pub p_s0: f64,
    pub p_s1: f64,
    pub eps_l0: f64,
    pub eps_l1: f64,
    pub p1_given_l: f64,
    pub channel0: Logical,
    pub channel1: Logical,
}

/// Channel of the accepted subset for a post-selected run.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct AcceptedChannel {
    /// Normalized logical channel given acceptance.
    pub channel: Logical,
    /// Per-cycle acceptance probability.
    pub p_accept: f64,
    pub eps_l: f64,
}

fn argmax(v: &[f64; 4]) -> usize {
    let mut best = 0;
    for i in 1..4 {
        if v[i] > v[best] {
            best = i;
        }
    }
    best
}

fn normalize4(v: Logical) -> Logical {
    let t: f64 = v.iter().sum();
    if t > 0.0 {
        v.map(|x| x / t)
    } else {
        [1.0, 0.0, 0.0, 0.0]
    }
}

pub struct P2lc<'a> {
    pub cycle: &'a SteaneCycle,
    pub table: &'a JointTable,
}

impl<'a> P2lc<'a> {
    pub fn new(cycle: &'a SteaneCycle, table: &'a JointTable) -> Self {
        P2lc { cycle, table }
    }

    fn identity_input() -> Dist {
        let mut d = vec![0.0; N_COSETS];
        d[0] = 1.0;
        d
    }

    /// Output coset distribution of a cycle with identity input, optionally restricted to
    /// accepted records and renormalized.
    pub fn previous_output(&self, accept: Option<&Partition>) -> Dist {
        let out = self.table.propagate(&Self::identity_input());
        let mut d = vec![0.0; N_COSETS];
        for (k, v) in &out {
            if let Some(p) = accept {
                if !p.accepts(&self.table.keys[*k as usize]) {
                    continue;
                }
            }
            for (c, x) in v.iter().enumerate() {
                d[c] += x;
            }
        }
        if accept.is_some() {
            let t: f64 = d.iter().sum();
            if t > 0.0 {
                d.iter_mut().for_each(|x| *x /= t);
            }
        }
        d
    }

    /// Keep correctable cosets; the rest of the mass moves to the identity.
    pub fn correctable_part(&self, d: &[f64]) -> Dist {
        let mut out = vec![0.0; N_COSETS];
        for (c, &w) in d.iter().enumerate() {
            if self.cycle.correctable(Coset(c as u8)) {
                out[c] += w;
            } else {
                out[0] += w;
            }
        }
        out
    }

    /// Input-error distribution of the middle cycle.
    pub fn input_distribution(&self, cond: Conditioning, accept: Option<&Partition>) -> Dist {
        if cond.input_errors {
            self.correctable_part(&self.previous_output(accept))
        } else {
            Self::identity_input()
        }
    }

    fn ideal_logical(&self, d: &[f64]) -> Logical {
        let mut l = [0.0; 4];
        for (c, &w) in d.iter().enumerate() {
            l[self.cycle.ideal_class(Coset(c as u8))] += w;
        }
        l
    }

    /// Fine-grained characterization: logical channel conditioned on each record.
    pub fn characterize(&self, cond: Conditioning) -> Characterization {
        let input = self.input_distribution(cond, None);
        let out = self.table.propagate(&input);
        let missing = self.table.missing(&input);
        let mut per_key = Vec::with_capacity(out.len());
        let mut records = Vec::with_capacity(out.len());
        let mut total = [0.0; 4];
        for (k, v) in &out {
            let l = self.ideal_logical(v);
            let p: f64 = l.iter().sum();
            if p <= 0.0 {
                continue;
            }
            for c in 0..4 {
                total[c] += l[c];
            }
            let ch = normalize4(l);
            let rec = self.table.keys[*k as usize];
            records.push(rec);
            per_key.push(KeyChannel { key: rec.canonical_key(), probability: p, channel: ch, eps_l: 1.0 - ch[0] });
        }
        let key_pos = records.iter().enumerate().map(|(i, r)| (*r, i)).collect();
        Characterization {
            eps_ph: self.table.eps_ph,
            eps_l: total[1] + total[2] + total[3],
            channel: total,
            missing,
            per_key,
            key_pos,
            records,
        }
    }

    /// Channel of a cycle that is accepted, with accepted neighbours.
    pub fn accepted_channel(&self, part: &Partition, cond: Conditioning) -> Result<AcceptedChannel> {
        let input = self.input_distribution(cond, Some(part));
        let out = self.table.propagate(&input);
        let mut total = 0.0;
        let mut accepted = 0.0;
        let mut l = [0.0; 4];
        for (k, v) in &out {
            let m: f64 = v.iter().sum();
            total += m;
            if !part.accepts(&self.table.keys[*k as usize]) {
                continue;
            }
            accepted += m;
            for (c, &w) in v.iter().enumerate() {
                if w == 0.0 {
                    continue;
                }
                let (next_rec, out_coset) = self.cycle.noiseless(Coset(c as u8));
                if cond.future_acceptance && !part.accepts(&next_rec) {
                    continue;
                }
                l[out_coset.class()] += w;
            }
        }
        if accepted <= 0.0 {
            return Err(SalemError::EmptyAcceptedSubset);
        }
        let ch = normalize4(l);
        Ok(AcceptedChannel { channel: ch, p_accept: accepted / total, eps_l: 1.0 - ch[0] })
    }

    /// Middle-cycle logical channel from the exact recursion over a three-cycle window:
    /// the first cycle's output with its own logical channel inverted is the input error.
    pub fn exact_window_channel(&self) -> Result<Logical> {
        let first = self.previous_output(None);
        let l1 = normalize4(self.ideal_logical(&first));
        let inv = invert_channel(&logical_channel(l1))?;
        let mut input = vec![0.0; N_COSETS];
        for (c, &w) in first.iter().enumerate() {
            if w == 0.0 {
                continue;
            }
            let coset = Coset(c as u8);
            for (p, q) in inv.paulis.iter().zip(&inv.quasi) {
                let cls = logical_class_of(p);
                let moved = Coset::new(coset.syndrome(), class_product(coset.class(), cls));
                input[moved.index()] += w * q;
            }
        }
        let out = self.table.propagate(&input);
        let mut l = [0.0; 4];
        for v in out.values() {
            let li = self.ideal_logical(v);
            for c in 0..4 {
                l[c] += li[c];
            }
        }
        Ok(normalize4(l))
    }
}

/// Index of a single-qubit Pauli in `I, X, Y, Z` order.
pub fn logical_class_of(p: &PauliOp) -> usize {
    let (x, z) = p.get(0);
    crate::steane::class_from_bits(x, z)
}

/// Total variation distance of two logical channels.
pub fn tv_distance(a: &Logical, b: &Logical) -> f64 {
    0.5 * a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<f64>()
}

/// QP norm of the inverse of a logical channel (normalized first).
pub fn logical_inverse_norm(l: &Logical) -> f64 {
    inverse_norm(&logical_channel(normalize4(*l)))
}

/// `Pr[X] + Pr[Y]`: the rate at which a logical channel flips `Z_L`.
pub fn z_flip_rate(l: &Logical) -> f64 {
    let t: f64 = l.iter().sum();
    (l[1] + l[2]) / t
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::OnceLock;

    fn fixture() -> &'static (SteaneCycle, JointTable) {
        static F: OnceLock<(SteaneCycle, JointTable)> = OnceLock::new();
        F.get_or_init(|| {
            let c = SteaneCycle::new(1e-3).unwrap();
            let t = JointTable::build(&c, 2).unwrap();
            (c, t)
        })
    }

    #[test]
    fn table_mass_is_conserved() {
        let (_, t) = fixture();
        for s in &t.inputs {
            let m: f64 = s.entries.iter().map(|e| e.2).sum();
            assert!((m + s.missing - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn fine_grained_channels_average_to_total() {
        let (c, t) = fixture();
        let ch = P2lc::new(c, t).characterize(Conditioning::default());
        let mut sum = [0.0; 4];
        for k in &ch.per_key {
            for i in 0..4 {
                sum[i] += k.probability * k.channel[i];
            }
        }
        for i in 0..4 {
            assert!((sum[i] - ch.channel[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn subsets_recombine() {
        let (c, t) = fixture();
        let ch = P2lc::new(c, t).characterize(Conditioning::default());
        let st = ch.subset_stats(&ch.partition(0.2));
        for i in 0..4 {
            let v = st.p_s0 * st.channel0[i] + st.p_s1 * st.channel1[i];
            assert!((v - ch.channel[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn table_roundtrips_through_disk() {
        let (_, t) = fixture();
        let dir = tempfile::tempdir().unwrap();
        t.save(dir.path(), "abc").unwrap();
        let back = JointTable::load(dir.path()).unwrap();
        assert_eq!(&back, t);
    }

    #[test]
    fn missing_table_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(JointTable::load(dir.path()), Err(SalemError::MissingTable(_))));
    }
}
