//! Rotated surface-code memory (Z basis) with circuit-level noise, a decoding graph harvested
//! from single faults, exact minimum-weight matching with a forced logical sector, and the
//! syndrome distribution of truncated fault paths.
//!
//! Layout and CNOT schedule follow the common rotated-memory convention: data at odd
//! coordinates, measure qubits at even coordinates, hook errors running across the logical.
//! `d` noisy rounds are followed by one ideal round read straight off the Pauli frame.

use std::collections::{BTreeMap, HashMap};
use std::hash::{BuildHasherDefault, Hasher};
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Result, SalemError};
use crate::ftcircuit::{depolarizing_faults, x_flip, CircuitBuilder, FtCircuit, NoiseModel, ShotOutcome};
use crate::pauli::PauliOp;

/// Multiplicative hasher for integer keys.
#[derive(Default, Clone, Copy)]
pub struct IntHasher(u64);

impl Hasher for IntHasher {
    fn finish(&self) -> u64 {
        self.0
    }
    fn write(&mut self, bytes: &[u8]) {
        for &b in bytes {
            self.0 = (self.0.rotate_left(5) ^ b as u64).wrapping_mul(0x51_7c_c1_b7_27_22_0a_95);
        }
    }
    fn write_u32(&mut self, v: u32) {
        self.0 = (self.0 ^ v as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15).rotate_left(29);
    }
    fn write_u64(&mut self, v: u64) {
        self.0 = (self.0 ^ v).wrapping_mul(0x9e37_79b9_7f4a_7c15).rotate_left(29);
    }
}

pub type IntMap<K, V> = HashMap<K, V, BuildHasherDefault<IntHasher>>;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum StabKind {
    X,
    Z,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Detector {
    pub kind: StabKind,
    pub plaquette: usize,
    /// Round index; `rounds` denotes the ideal final round.
    pub layer: usize,
}

/// Which detectors form the conditioning syndrome.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SyndromeBasis {
    /// Only the Z-type detectors, which see the X errors that flip `Z_L`.
    ZOnly,
    /// Z-type detectors plus X-type comparisons from the second round on, ideal round included.
    Full,
}

#[derive(Clone, Debug)]
pub struct SurfaceLayout {
    pub distance: usize,
    pub rounds: usize,
    pub eps: f64,
    pub data_coords: Vec<(i32, i32)>,
    pub x_plaquettes: Vec<Vec<usize>>,
    pub z_plaquettes: Vec<Vec<usize>>,
    pub logical_z: Vec<usize>,
    pub circuit: FtCircuit,
    pub detectors: Vec<Detector>,
    pub basis: SyndromeBasis,
    n_data: usize,
    n_x: usize,
    /// Record id of each (round, measure qubit); measure qubits are X then Z plaquettes.
    record_of: Vec<Vec<usize>>,
}

const X_ORDER: [(i32, i32); 4] = [(1, 1), (-1, 1), (1, -1), (-1, -1)];
const Z_ORDER: [(i32, i32); 4] = [(1, 1), (1, -1), (-1, 1), (-1, -1)];

impl SurfaceLayout {
    /// Distance-`d` memory with `d` noisy rounds at physical error rate `eps`.
    pub fn new(d: usize, eps: f64, basis: SyndromeBasis) -> Result<Self> {
        if d < 2 || d.is_multiple_of(2) {
            return Err(SalemError::InvalidInput(format!("distance {d} must be odd and at least 3")));
        }
        if !(0.0..0.5).contains(&eps) {
            return Err(SalemError::InvalidInput(format!("error rate {eps} outside [0, 0.5)")));
        }
        let mut data_coords = Vec::new();
        for x in 0..d as i32 {
            for y in 0..d as i32 {
                data_coords.push((2 * x + 1, 2 * y + 1));
            }
        }
        let data_index: HashMap<(i32, i32), usize> = data_coords.iter().enumerate().map(|(i, c)| (*c, i)).collect();
        let mut x_meas = Vec::new();
        let mut z_meas = Vec::new();
        for x in 0..=d as i32 {
            for y in 0..=d as i32 {
                let on_b1 = x == 0 || x == d as i32;
                let on_b2 = y == 0 || y == d as i32;
                let parity = x % 2 != y % 2;
                if (on_b1 && parity) || (on_b2 && !parity) {
                    continue;
                }
                if parity {
                    x_meas.push((2 * x, 2 * y));
                } else {
                    z_meas.push((2 * x, 2 * y));
                }
            }
        }
        let support = |m: (i32, i32)| -> Vec<usize> {
            let mut v: Vec<usize> =
                [(1, 1), (1, -1), (-1, 1), (-1, -1)].iter().filter_map(|(dx, dy)| data_index.get(&(m.0 + dx, m.1 + dy)).copied()).collect();
            v.sort();
            v
        };
        let x_plaquettes: Vec<Vec<usize>> = x_meas.iter().map(|&m| support(m)).collect();
        let z_plaquettes: Vec<Vec<usize>> = z_meas.iter().map(|&m| support(m)).collect();

        // Z_L along a boundary row or column, whichever commutes with every X plaquette.
        let row: Vec<usize> = data_coords.iter().enumerate().filter(|(_, c)| c.1 == 1).map(|(i, _)| i).collect();
        let col: Vec<usize> = data_coords.iter().enumerate().filter(|(_, c)| c.0 == 1).map(|(i, _)| i).collect();
        let commutes = |l: &Vec<usize>| x_plaquettes.iter().all(|p| p.iter().filter(|q| l.contains(q)).count() % 2 == 0);
        let logical_z = if commutes(&row) { row } else { col };
        debug_assert!(commutes(&logical_z));

        let n_data = data_coords.len();
        let n_x = x_meas.len();
        let n_anc = n_x + z_meas.len();
        let n_qubits = n_data + n_anc;
        if n_qubits > 64 {
            return Err(SalemError::InvalidInput(format!("distance {d} needs more than 64 qubits")));
        }
        let x_anc = |i: usize| n_data + i;
        let z_anc = |i: usize| n_data + n_x + i;

        let mut b = CircuitBuilder::new(n_qubits);
        for q in 0..n_qubits {
            b.reset(q);
        }
        let mut record_of = Vec::new();
        for _ in 0..d {
            for i in 0..n_x {
                b.h(x_anc(i));
            }
            for k in 0..4 {
                for (i, m) in x_meas.iter().enumerate() {
                    if let Some(&q) = data_index.get(&(m.0 + X_ORDER[k].0, m.1 + X_ORDER[k].1)) {
                        b.cnot(x_anc(i), q);
                    }
                }
                for (i, m) in z_meas.iter().enumerate() {
                    if let Some(&q) = data_index.get(&(m.0 + Z_ORDER[k].0, m.1 + Z_ORDER[k].1)) {
                        b.cnot(q, z_anc(i));
                    }
                }
            }
            for i in 0..n_x {
                b.h(x_anc(i));
            }
            let mut recs = Vec::new();
            for a in 0..n_anc {
                recs.push(b.measure(n_data + a));
                b.reset(n_data + a);
            }
            record_of.push(recs);
        }
        let model = NoiseModel {
            after_cnot: Some(depolarizing_faults(2, eps)),
            after_h: Some(depolarizing_faults(1, eps)),
            after_reset: Some(x_flip(eps)),
            before_measure: Some(x_flip(eps)),
        };
        let circuit = b.build((0..n_data).collect()).with_noise(&model);

        let mut detectors = Vec::new();
        for layer in 0..=d {
            for p in 0..z_plaquettes.len() {
                detectors.push(Detector { kind: StabKind::Z, plaquette: p, layer });
            }
        }
        if basis == SyndromeBasis::Full {
            for layer in 1..=d {
                for p in 0..x_plaquettes.len() {
                    detectors.push(Detector { kind: StabKind::X, plaquette: p, layer });
                }
            }
        }
        if detectors.len() > 32 {
            return Err(SalemError::InvalidInput("more than 32 detectors".into()));
        }
        Ok(SurfaceLayout {
            distance: d,
            rounds: d,
            eps,
            data_coords,
            x_plaquettes,
            z_plaquettes,
            logical_z,
            circuit,
            detectors,
            basis,
            n_data,
            n_x,
            record_of,
        })
    }

    pub fn num_detectors(&self) -> usize {
        self.detectors.len()
    }

    /// Number of Z-type detectors; they occupy the low bits of a detector mask.
    pub fn num_z_detectors(&self) -> usize {
        self.z_plaquettes.len() * (self.rounds + 1)
    }

    pub fn z_mask(&self) -> u32 {
        ((1u64 << self.num_z_detectors()) - 1) as u32
    }

    fn meas_flip(&self, o: &ShotOutcome, round: usize, kind: StabKind, p: usize) -> bool {
        let a = match kind {
            StabKind::X => p,
            StabKind::Z => self.n_x + p,
        };
        o.record.bit(self.record_of[round][a]).unwrap_or(false)
    }

    fn ideal_flip(&self, data: &PauliOp, kind: StabKind, p: usize) -> bool {
        let (sup, mask) = match kind {
            StabKind::X => (&self.x_plaquettes[p], data.z_mask()),
            StabKind::Z => (&self.z_plaquettes[p], data.x_mask()),
        };
        sup.iter().filter(|&&q| mask >> q & 1 == 1).count() % 2 == 1
    }

    /// Detector mask and logical flip of a shot.
    pub fn detectors_of(&self, o: &ShotOutcome) -> (u32, bool) {
        let mut mask = 0u32;
        for (i, det) in self.detectors.iter().enumerate() {
            let cur = if det.layer == self.rounds {
                self.ideal_flip(&o.data_frame, det.kind, det.plaquette)
            } else {
                self.meas_flip(o, det.layer, det.kind, det.plaquette)
            };
            let prev = if det.layer == 0 { false } else { self.meas_flip(o, det.layer - 1, det.kind, det.plaquette) };
            if cur ^ prev {
                mask |= 1 << i;
            }
        }
        let flip = self.logical_z.iter().filter(|&&q| o.data_frame.x_mask() >> q & 1 == 1).count() % 2 == 1;
        (mask, flip)
    }

    /// Effect of every single fault: `(location, detector mask, flip, probability)`.
    pub fn single_fault_effects(&self) -> Vec<Vec<(u32, bool, f64)>> {
        let id = PauliOp::identity(self.n_data);
        (0..self.circuit.num_locations())
            .map(|l| {
                self.circuit
                    .location_faults(l)
                    .iter()
                    .enumerate()
                    .map(|(k, &(_, p))| {
                        let path = crate::ftcircuit::FaultPath { faults: vec![(l, k)], probability: p };
                        let o = self.circuit.propagate(&path, &id);
                        let (m, f) = self.detectors_of(&o);
                        (m, f, p)
                    })
                    .collect()
            })
            .collect()
    }

    /// Distribution of (detector mask, logical flip) over fault paths with at most
    /// `max_weight` faults. The circuit has no branches, so fault effects add mod 2 and
    /// the distribution is a truncated convolution over locations.
    pub fn syndrome_distribution(&self, max_weight: usize) -> SyndromeDistribution {
        let effects = self.single_fault_effects();
        let mut layers: Vec<IntMap<u32, [f64; 2]>> = vec![IntMap::default(); max_weight + 1];
        layers[0].insert(0, [1.0, 0.0]);
        for (l, eff) in effects.iter().enumerate() {
            let rate = self.circuit.location_rate(l);
            let mut merged: BTreeMap<(u32, bool), f64> = BTreeMap::new();
            for &(m, f, p) in eff {
                *merged.entry((m, f)).or_insert(0.0) += p;
            }
            for w in (0..=max_weight).rev() {
                if w > 0 {
                    let (lo, hi) = layers.split_at_mut(w);
                    let src = &lo[w - 1];
                    let dst = &mut hi[0];
                    for v in dst.values_mut() {
                        v[0] *= 1.0 - rate;
                        v[1] *= 1.0 - rate;
                    }
                    for (&(m, f), &p) in &merged {
                        for (&key, v) in src {
                            let e = dst.entry(key ^ m).or_insert([0.0, 0.0]);
                            let (a, b) = if f { (v[1], v[0]) } else { (v[0], v[1]) };
                            e[0] += a * p;
                            e[1] += b * p;
                        }
                    }
                } else {
                    for v in layers[0].values_mut() {
                        v[0] *= 1.0 - rate;
                        v[1] *= 1.0 - rate;
                    }
                }
            }
        }
        let mut probs: IntMap<u32, [f64; 2]> = IntMap::default();
        for layer in layers {
            for (k, v) in layer {
                let e = probs.entry(k).or_insert([0.0, 0.0]);
                e[0] += v[0];
                e[1] += v[1];
            }
        }
        let total: f64 = probs.values().map(|v| v[0] + v[1]).sum();
        SyndromeDistribution { probs, missing: (1.0 - total).max(0.0), max_weight }
    }
}

#[derive(Clone, Debug)]
pub struct SyndromeDistribution {
    /// Detector mask -> `[P(s, no flip), P(s, flip)]`.
    pub probs: IntMap<u32, [f64; 2]>,
    pub missing: f64,
    pub max_weight: usize,
}

impl SyndromeDistribution {
    /// Entries sorted by decreasing probability, ties by mask.
    pub fn sorted(&self) -> Vec<(u32, [f64; 2])> {
        let mut v: Vec<(u32, [f64; 2])> = self.probs.iter().map(|(k, p)| (*k, *p)).collect();
        v.sort_by(|a, b| (b.1[0] + b.1[1]).partial_cmp(&(a.1[0] + a.1[1])).unwrap().then(a.0.cmp(&b.0)));
        v
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GraphEdge {
    pub a: usize,
    /// `None` for boundary edges.
    pub b: Option<usize>,
    pub flip: bool,
    pub probability: f64,
    pub weight: f64,
}

/// Decoding graph over the Z-type detectors with one boundary node.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DecodingGraph {
    pub num_nodes: usize,
    pub edges: Vec<GraphEdge>,
    /// Mechanisms that touched more than two detectors or flipped the logical silently.
    pub hyperedges: usize,
    #[serde(skip)]
    dist: Vec<Vec<[f64; 2]>>,
}

impl DecodingGraph {
    /// Harvest edges from single faults; parallel mechanisms add their probabilities.
    pub fn from_layout(layout: &SurfaceLayout) -> Self {
        let zmask = layout.z_mask();
        let mut merged: BTreeMap<(u32, bool), f64> = BTreeMap::new();
        for eff in layout.single_fault_effects() {
            for (m, f, p) in eff {
                let m = m & zmask;
                if m == 0 && !f {
                    continue;
                }
                *merged.entry((m, f)).or_insert(0.0) += p;
            }
        }
        let mut edges = Vec::new();
        let mut hyperedges = 0;
        for ((m, flip), p) in merged {
            let nodes: Vec<usize> = (0..32).filter(|i| m >> i & 1 == 1).collect();
            let (a, b) = match nodes.len() {
                1 => (nodes[0], None),
                2 => (nodes[0], Some(nodes[1])),
                _ => {
                    hyperedges += 1;
                    continue;
                }
            };
            edges.push(GraphEdge { a, b, flip, probability: p, weight: -p.ln() });
        }
        let mut g = DecodingGraph { num_nodes: layout.num_z_detectors(), edges, hyperedges, dist: Vec::new() };
        g.compute_distances();
        g
    }

    pub fn boundary(&self) -> usize {
        self.num_nodes
    }

    /// All-pairs shortest paths per logical parity (nodes plus boundary).
    fn compute_distances(&mut self) {
        let n = self.num_nodes + 1;
        let mut adj: Vec<Vec<(usize, usize, f64)>> = vec![Vec::new(); n];
        for e in &self.edges {
            let b = e.b.unwrap_or(self.num_nodes);
            adj[e.a].push((b, e.flip as usize, e.weight));
            adj[b].push((e.a, e.flip as usize, e.weight));
        }
        self.dist = (0..n)
            .map(|s| {
                let mut d = vec![[f64::INFINITY; 2]; n];
                let mut done = vec![[false; 2]; n];
                d[s][0] = 0.0;
                loop {
                    let mut best: Option<(usize, usize)> = None;
                    for v in 0..n {
                        for par in 0..2 {
                            if !done[v][par] && d[v][par].is_finite() && best.is_none_or(|(bv, bp)| d[v][par] < d[bv][bp]) {
                                best = Some((v, par));
                            }
                        }
                    }
                    let Some((v, par)) = best else { break };
                    done[v][par] = true;
                    for &(u, f, w) in &adj[v] {
                        let np = par ^ f;
                        if d[v][par] + w < d[u][np] {
                            d[u][np] = d[v][par] + w;
                        }
                    }
                }
                // a return to the start with odd parity is a closed logical loop
                d
            })
            .collect();
    }

    /// Shortest path weight between two nodes (boundary = `num_nodes`) with given parity.
    pub fn distance(&self, a: usize, b: usize, parity: usize) -> f64 {
        self.dist[a][b][parity]
    }

    /// Exact matching weights with the logical parity forced to 0 and to 1.
    pub fn match_weights(&self, defects: &[usize]) -> [f64; 2] {
        let k = defects.len();
        assert!(k <= 20, "too many defects for exact matching");
        let bnd = self.boundary();
        let full = (1usize << k) - 1;
        let mut f = vec![[f64::INFINITY; 2]; 1 << k];
        f[0] = [0.0, self.dist[bnd][bnd][1]];
        for mask in 1..=full {
            let i = mask.trailing_zeros() as usize;
            let rest = mask & !(1 << i);
            let mut best = [f64::INFINITY; 2];
            for par in 0..2 {
                for b in 0..2 {
                    let c = f[rest][par ^ b] + self.dist[defects[i]][bnd][b];
                    if c < best[par] {
                        best[par] = c;
                    }
                }
                let mut r = rest;
                while r != 0 {
                    let j = r.trailing_zeros() as usize;
                    r &= r - 1;
                    let sub = rest & !(1 << j);
                    for b in 0..2 {
                        let c = f[sub][par ^ b] + self.dist[defects[i]][defects[j]][b];
                        if c < best[par] {
                            best[par] = c;
                        }
                    }
                }
            }
            f[mask] = best;
        }
        f[full]
    }

    /// Decoded logical flip and matching gap for a Z-detector mask.
    pub fn decode(&self, mask: u32) -> MatchResult {
        let defects: Vec<usize> = (0..self.num_nodes).filter(|i| mask >> i & 1 == 1).collect();
        let w = self.match_weights(&defects);
        let flip = w[1] < w[0];
        let gap = if w[0].is_infinite() && w[1].is_infinite() { 0.0 } else { (w[0] - w[1]).abs() };
        MatchResult { flip, weights: w, gap }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MatchResult {
    pub flip: bool,
    pub weights: [f64; 2],
    /// `|w0 - w1|`; `e^{-gap}` near one marks an ambiguous syndrome.
    pub gap: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SurfaceDecoder {
    Mwpm,
    MaximumLikelihood,
}

/// Per-syndrome logical error of a decoder.
#[derive(Clone, Debug)]
pub struct SurfaceCharacterization {
    /// `(detector mask, P(s), eps_L|s, matching gap)`.
    pub entries: Vec<(u32, f64, f64, f64)>,
    pub eps_l: f64,
    pub missing: f64,
}

impl SurfaceCharacterization {
    /// `(P(s), W_s)` with the bit-flip inverse norm `W = 1 / |1 - 2 eps_L|s|`.
    pub fn fg_inputs(&self) -> Vec<(f64, f64)> {
        self.entries.iter().map(|e| (e.1, 1.0 / (1.0 - 2.0 * e.2).abs())).collect()
    }
}

pub fn characterize(
    layout: &SurfaceLayout,
    graph: &DecodingGraph,
    dist: &SyndromeDistribution,
    decoder: SurfaceDecoder,
) -> SurfaceCharacterization {
    let zmask = layout.z_mask();
    let mut cache: IntMap<u32, MatchResult> = IntMap::default();
    let mut entries = Vec::with_capacity(dist.probs.len());
    let mut eps_l = 0.0;
    for (mask, pr) in dist.sorted() {
        let p = pr[0] + pr[1];
        if p <= 0.0 {
            continue;
        }
        let m = *cache.entry(mask & zmask).or_insert_with(|| graph.decode(mask & zmask));
        let err = match decoder {
            SurfaceDecoder::Mwpm => pr[usize::from(!m.flip)],
            SurfaceDecoder::MaximumLikelihood => pr[0].min(pr[1]),
        };
        eps_l += err;
        entries.push((mask, p, err / p, m.gap));
    }
    SurfaceCharacterization { entries, eps_l, missing: dist.missing }
}

/// Read defect sets (one row of detector indices per line) and decode each.
pub fn decode_defect_csv<R: Read, W: Write>(graph: &DecodingGraph, input: R, output: W) -> Result<()> {
    let mut rd = csv::ReaderBuilder::new().has_headers(false).flexible(true).from_reader(input);
    let mut wr = csv::Writer::from_writer(output);
    wr.write_record(["defects", "flip", "w0", "w1", "gap"])?;
    for row in rd.records() {
        let row = row?;
        let mut mask = 0u32;
        let mut ids = Vec::new();
        for f in row.iter().map(str::trim).filter(|f| !f.is_empty()) {
            let i: usize = f.parse().map_err(|_| SalemError::InvalidInput(format!("bad detector index {f:?}")))?;
            if i >= graph.num_nodes {
                return Err(SalemError::InvalidInput(format!("detector {i} out of range")));
            }
            mask ^= 1 << i;
            ids.push(f.to_string());
        }
        let m = graph.decode(mask);
        wr.write_record([
            ids.join(" "),
            (m.flip as u8).to_string(),
            m.weights[0].to_string(),
            m.weights[1].to_string(),
            m.gap.to_string(),
        ])?;
    }
    wr.flush()?;
    Ok(())
}
