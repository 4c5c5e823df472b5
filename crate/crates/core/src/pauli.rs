//! Symplectic Pauli operators, sparse Pauli channels and their quasi-probability inverses.
//!
//! Phases are dropped everywhere: a Pauli is the pair of bit masks `(x, z)` over at most
//! 64 qubits, with qubit 0 in the least significant bit and printed first.

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::RngExt;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Result, SalemError};

/// Terms with absolute weight below this are dropped after products.
pub const PRUNE_EPS: f64 = 1e-15;
const SINGULAR_EPS: f64 = 1e-13;
const MAX_DENSE_QUBITS: usize = 10;

#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Debug)]
pub struct PauliOp {
    n: u8,
    x: u64,
    z: u64,
}

impl PauliOp {
    pub fn identity(n: usize) -> Self {
        assert!(n <= 64, "at most 64 qubits");
        PauliOp { n: n as u8, x: 0, z: 0 }
    }

    pub fn from_masks(n: usize, x: u64, z: u64) -> Self {
        assert!(n <= 64, "at most 64 qubits");
        let m = mask(n);
        PauliOp { n: n as u8, x: x & m, z: z & m }
    }

    /// Single-qubit Pauli `kind` (one of `I`, `X`, `Y`, `Z`) on qubit `q`.
    pub fn single(n: usize, q: usize, kind: char) -> Self {
        let (x, z) = match kind {
            'I' => (false, false),
            'X' => (true, false),
            'Y' => (true, true),
            'Z' => (false, true),
            _ => panic!("unknown pauli letter {kind}"),
        };
        let mut p = PauliOp::identity(n);
        p.set(q, x, z);
        p
    }

    pub fn num_qubits(&self) -> usize {
        self.n as usize
    }

    pub fn x_mask(&self) -> u64 {
        self.x
    }

    pub fn z_mask(&self) -> u64 {
        self.z
    }

    pub fn is_identity(&self) -> bool {
        self.x == 0 && self.z == 0
    }

    pub fn weight(&self) -> u32 {
        (self.x | self.z).count_ones()
    }

    pub fn get(&self, q: usize) -> (bool, bool) {
        ((self.x >> q) & 1 == 1, (self.z >> q) & 1 == 1)
    }

    pub fn letter(&self, q: usize) -> char {
        match self.get(q) {
            (false, false) => 'I',
            (true, false) => 'X',
            (true, true) => 'Y',
            (false, true) => 'Z',
        }
    }

    pub fn set(&mut self, q: usize, x: bool, z: bool) {
        assert!(q < self.n as usize, "qubit {q} out of range");
        let b = 1u64 << q;
        self.x = if x { self.x | b } else { self.x & !b };
        self.z = if z { self.z | b } else { self.z & !b };
    }

    /// Product up to phase.
    pub fn mul(&self, other: &PauliOp) -> PauliOp {
        debug_assert_eq!(self.n, other.n);
        PauliOp { n: self.n, x: self.x ^ other.x, z: self.z ^ other.z }
    }

    /// Symplectic inner product: `true` when the operators anticommute.
    pub fn anticommutes(&self, other: &PauliOp) -> bool {
        ((self.x & other.z).count_ones() + (self.z & other.x).count_ones()) % 2 == 1
    }

    pub fn commutes(&self, other: &PauliOp) -> bool {
        !self.anticommutes(other)
    }

    /// Lexicographic order on the printed string with `I < X < Y < Z`, qubit 0 first.
    pub fn lex_cmp(&self, other: &PauliOp) -> Ordering {
        for q in 0..self.n.max(other.n) as usize {
            let a = letter_rank(self.letter_or_i(q));
            let b = letter_rank(other.letter_or_i(q));
            match a.cmp(&b) {
                Ordering::Equal => continue,
                o => return o,
            }
        }
        Ordering::Equal
    }

    fn letter_or_i(&self, q: usize) -> char {
        if q < self.n as usize {
            self.letter(q)
        } else {
            'I'
        }
    }

    /// Restrict to the listed qubits, in order.
    pub fn restrict(&self, qubits: &[usize]) -> PauliOp {
        let mut out = PauliOp::identity(qubits.len());
        for (i, &q) in qubits.iter().enumerate() {
            let (x, z) = self.get(q);
            out.set(i, x, z);
        }
        out
    }

    /// Place `self` (on `qubits.len()` qubits) onto `qubits` of an `n`-qubit register.
    pub fn embed(&self, n: usize, qubits: &[usize]) -> PauliOp {
        assert_eq!(self.n as usize, qubits.len());
        let mut out = PauliOp::identity(n);
        for (i, &q) in qubits.iter().enumerate() {
            let (x, z) = self.get(i);
            out.set(q, x, z);
        }
        out
    }

    /// Dense index `x | z << n` used by the Walsh transform.
    fn dense_index(&self) -> usize {
        (self.x | (self.z << self.n)) as usize
    }

    fn from_dense_index(n: usize, idx: usize) -> PauliOp {
        let m = mask(n);
        PauliOp::from_masks(n, idx as u64 & m, (idx as u64 >> n) & m)
    }

    /// All `4^n` Paulis in dense-index order.
    pub fn all(n: usize) -> impl Iterator<Item = PauliOp> {
        assert!(n <= MAX_DENSE_QUBITS);
        (0..1usize << (2 * n)).map(move |i| PauliOp::from_dense_index(n, i))
    }
}

fn mask(n: usize) -> u64 {
    if n >= 64 {
        u64::MAX
    } else {
        (1u64 << n) - 1
    }
}

fn letter_rank(c: char) -> u8 {
    match c {
        'I' => 0,
        'X' => 1,
        'Y' => 2,
        _ => 3,
    }
}

impl fmt::Display for PauliOp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for q in 0..self.n as usize {
            write!(f, "{}", self.letter(q))?;
        }
        Ok(())
    }
}

impl FromStr for PauliOp {
    type Err = SalemError;

    fn from_str(s: &str) -> Result<Self> {
        let n = s.chars().count();
        if n > 64 {
            return Err(SalemError::InvalidPauli(s.to_string()));
        }
        let mut p = PauliOp::identity(n);
        for (q, c) in s.chars().enumerate() {
            match c {
                'I' | '_' => {}
                'X' => p.set(q, true, false),
                'Y' => p.set(q, true, true),
                'Z' => p.set(q, false, true),
                _ => return Err(SalemError::InvalidPauli(s.to_string())),
            }
        }
        Ok(p)
    }
}

impl Serialize for PauliOp {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for PauliOp {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Clone, Copy, PartialEq, Eq, Debug, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChannelKind {
    /// Non-negative weights summing to at most one.
    Probability,
    /// Signed weights, e.g. an inverse.
    Quasi,
}

/// Sparse Pauli channel: Pauli -> weight.
#[derive(Clone, Debug, PartialEq)]
pub struct PauliChannel {
    n: usize,
    kind: ChannelKind,
    terms: BTreeMap<PauliOp, f64>,
}

#[derive(Serialize, Deserialize)]
struct ChannelTerm {
    pauli: PauliOp,
    weight: f64,
}

#[derive(Serialize, Deserialize)]
struct ChannelJson {
    n: usize,
    kind: ChannelKind,
    terms: Vec<ChannelTerm>,
}

impl Serialize for PauliChannel {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        ChannelJson { n: self.n, kind: self.kind, terms: self.terms.iter().map(|(p, &w)| ChannelTerm { pauli: *p, weight: w }).collect() }
            .serialize(s)
    }
}

impl<'de> Deserialize<'de> for PauliChannel {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let j = ChannelJson::deserialize(d)?;
        let mut ch = PauliChannel::empty(j.n, j.kind);
        for t in j.terms {
            if t.pauli.num_qubits() != j.n {
                return Err(serde::de::Error::custom(format!("term {} does not act on {} qubits", t.pauli, j.n)));
            }
            ch.add(t.pauli, t.weight);
        }
        Ok(ch)
    }
}

impl PauliChannel {
    pub fn empty(n: usize, kind: ChannelKind) -> Self {
        PauliChannel { n, kind, terms: BTreeMap::new() }
    }

    pub fn identity(n: usize) -> Self {
        let mut ch = PauliChannel::empty(n, ChannelKind::Probability);
        ch.add(PauliOp::identity(n), 1.0);
        ch
    }

    /// Build a probability channel from explicit terms; weights may not be negative.
    pub fn from_terms<I: IntoIterator<Item = (PauliOp, f64)>>(n: usize, terms: I) -> Result<Self> {
        let mut ch = PauliChannel::empty(n, ChannelKind::Probability);
        for (p, w) in terms {
            if p.num_qubits() != n {
                return Err(SalemError::QubitMismatch { expected: n, got: p.num_qubits() });
            }
            if w < 0.0 || !w.is_finite() {
                return Err(SalemError::InvalidChannel(format!("weight {w} on {p}")));
            }
            ch.add(p, w);
        }
        if ch.total() > 1.0 + 1e-9 {
            return Err(SalemError::InvalidChannel(format!("total weight {} exceeds one", ch.total())));
        }
        Ok(ch)
    }

    /// `(1-eps) I + eps/(4^n - 1) sum_{P != I} P`.
    pub fn depolarizing(n: usize, eps: f64) -> Self {
        let mut ch = PauliChannel::empty(n, ChannelKind::Probability);
        let others = (1usize << (2 * n)) - 1;
        for p in PauliOp::all(n) {
            let w = if p.is_identity() { 1.0 - eps } else { eps / others as f64 };
            ch.add(p, w);
        }
        ch
    }

    /// `(1-eps) I + eps P`.
    pub fn single_pauli(p: PauliOp, eps: f64) -> Self {
        let mut ch = PauliChannel::empty(p.num_qubits(), ChannelKind::Probability);
        ch.add(PauliOp::identity(p.num_qubits()), 1.0 - eps);
        ch.add(p, eps);
        ch
    }

    pub fn num_qubits(&self) -> usize {
        self.n
    }

    pub fn kind(&self) -> ChannelKind {
        self.kind
    }

    pub fn add(&mut self, p: PauliOp, w: f64) {
        debug_assert_eq!(p.num_qubits(), self.n);
        *self.terms.entry(p).or_insert(0.0) += w;
        if w < 0.0 {
            self.kind = ChannelKind::Quasi;
        }
    }

    pub fn weight(&self, p: &PauliOp) -> f64 {
        self.terms.get(p).copied().unwrap_or(0.0)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&PauliOp, &f64)> {
        self.terms.iter()
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn total(&self) -> f64 {
        self.terms.values().sum()
    }

    /// Sum of absolute weights.
    pub fn norm(&self) -> f64 {
        self.terms.values().map(|w| w.abs()).sum()
    }

    pub fn infidelity(&self) -> f64 {
        self.total() - self.weight(&PauliOp::identity(self.n))
    }

    pub fn scaled(&self, c: f64) -> Self {
        let mut out = self.clone();
        for w in out.terms.values_mut() {
            *w *= c;
        }
        out
    }

    /// Rescale so the weights sum to one.
    pub fn normalized(&self) -> Result<Self> {
        let t = self.total();
        if t <= 0.0 {
            return Err(SalemError::InvalidChannel("cannot normalize a channel of zero weight".into()));
        }
        Ok(self.scaled(1.0 / t))
    }

    pub fn pruned(mut self) -> Self {
        self.terms.retain(|_, w| w.abs() >= PRUNE_EPS);
        self
    }

    /// Eigenvalue of the channel on basis operator `a`: `sum_s p_s (-1)^<a,s>`.
    pub fn eigenvalue(&self, a: &PauliOp) -> f64 {
        self.terms.iter().map(|(s, w)| if a.anticommutes(s) { -w } else { *w }).sum()
    }

    /// Total variation distance `1/2 sum |p - q|`.
    pub fn tv_distance(&self, other: &PauliChannel) -> f64 {
        let mut keys: Vec<&PauliOp> = self.terms.keys().chain(other.terms.keys()).collect();
        keys.sort();
        keys.dedup();
        0.5 * keys.into_iter().map(|k| (self.weight(k) - other.weight(k)).abs()).sum::<f64>()
    }

    fn dense(&self) -> Vec<f64> {
        let mut v = vec![0.0; 1usize << (2 * self.n)];
        for (p, w) in &self.terms {
            v[p.dense_index()] += w;
        }
        v
    }
}

/// Product of two Paulis, phase dropped.
pub fn compose(a: &PauliOp, b: &PauliOp) -> PauliOp {
    a.mul(b)
}

/// Channel composition: weights multiply over Pauli products.
pub fn convolve(a: &PauliChannel, b: &PauliChannel) -> Result<PauliChannel> {
    if a.n != b.n {
        return Err(SalemError::QubitMismatch { expected: a.n, got: b.n });
    }
    let kind = if a.kind == ChannelKind::Quasi || b.kind == ChannelKind::Quasi { ChannelKind::Quasi } else { ChannelKind::Probability };
    let mut out = PauliChannel::empty(a.n, kind);
    for (p, wp) in &a.terms {
        for (q, wq) in &b.terms {
            out.add(p.mul(q), wp * wq);
        }
    }
    out.kind = kind;
    Ok(out.pruned())
}

/// In-place fast Walsh-Hadamard transform (unnormalized).
fn walsh_hadamard(v: &mut [f64]) {
    let mut h = 1;
    while h < v.len() {
        for i in (0..v.len()).step_by(2 * h) {
            for j in i..i + h {
                let (a, b) = (v[j], v[j + h]);
                v[j] = a + b;
                v[j + h] = a - b;
            }
        }
        h *= 2;
    }
}

/// Signed decomposition of an inverse channel: `q_s = norm * sign_s * prob_s`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QpDecomposition {
    pub n: usize,
    pub paulis: Vec<PauliOp>,
    pub quasi: Vec<f64>,
    pub probs: Vec<f64>,
    pub norm: f64,
    cumulative: Vec<f64>,
}

impl QpDecomposition {
    fn from_quasi(n: usize, terms: Vec<(PauliOp, f64)>) -> Self {
        let norm: f64 = terms.iter().map(|(_, q)| q.abs()).sum();
        let paulis: Vec<PauliOp> = terms.iter().map(|t| t.0).collect();
        let quasi: Vec<f64> = terms.iter().map(|t| t.1).collect();
        let probs: Vec<f64> = quasi.iter().map(|q| q.abs() / norm).collect();
        let mut acc = 0.0;
        let cumulative = probs
            .iter()
            .map(|p| {
                acc += p;
                acc
            })
            .collect();
        QpDecomposition { n, paulis, quasi, probs, norm, cumulative }
    }

    pub fn sign(&self, i: usize) -> f64 {
        if self.quasi[i] < 0.0 {
            -1.0
        } else {
            1.0
        }
    }

    pub fn norm_squared(&self) -> f64 {
        self.norm * self.norm
    }

    pub fn quasi_of(&self, p: &PauliOp) -> f64 {
        self.paulis.iter().position(|q| q == p).map(|i| self.quasi[i]).unwrap_or(0.0)
    }

    /// Probability of drawing a non-identity correction.
    pub fn non_identity_probability(&self) -> f64 {
        self.paulis.iter().zip(&self.probs).filter(|(p, _)| !p.is_identity()).map(|(_, w)| w).sum()
    }

    /// Draw an index `i` with probability `probs[i]`.
    pub fn sample_index<R: rand::Rng + ?Sized>(&self, rng: &mut R) -> usize {
        let u: f64 = rng.random::<f64>() * self.cumulative.last().copied().unwrap_or(1.0);
        self.cumulative.partition_point(|&c| c <= u).min(self.paulis.len() - 1)
    }

    /// Draw a correction and its sign.
    pub fn sample<R: rand::Rng + ?Sized>(&self, rng: &mut R) -> (PauliOp, f64) {
        let i = self.sample_index(rng);
        (self.paulis[i], self.sign(i))
    }

    pub fn as_channel(&self) -> PauliChannel {
        let mut ch = PauliChannel::empty(self.n, ChannelKind::Quasi);
        for (p, q) in self.paulis.iter().zip(&self.quasi) {
            ch.add(*p, *q);
        }
        ch.kind = ChannelKind::Quasi;
        ch
    }
}

/// Exact inverse of a Pauli channel through its diagonal (Walsh) representation.
pub fn invert_channel(ch: &PauliChannel) -> Result<QpDecomposition> {
    let n = ch.n;
    if n > MAX_DENSE_QUBITS {
        return Err(SalemError::InvalidChannel(format!("inversion limited to {MAX_DENSE_QUBITS} qubits")));
    }
    let mut lam = ch.dense();
    walsh_hadamard(&mut lam);
    // lam[b] is the eigenvalue of the basis operator whose x/z halves are swapped relative to b
    for (b, l) in lam.iter_mut().enumerate() {
        if l.abs() < SINGULAR_EPS {
            let p = PauliOp::from_dense_index(n, b);
            let basis = PauliOp::from_masks(n, p.z, p.x);
            return Err(SalemError::SingularChannel { basis: basis.to_string(), eigenvalue: *l });
        }
        *l = 1.0 / *l;
    }
    walsh_hadamard(&mut lam);
    let scale = 1.0 / (1usize << (2 * n)) as f64;
    let terms: Vec<(PauliOp, f64)> =
        lam.iter().enumerate().map(|(i, q)| (PauliOp::from_dense_index(n, i), q * scale)).filter(|(_, q)| q.abs() >= PRUNE_EPS).collect();
    let qp = QpDecomposition::from_quasi(n, terms);
    let eps = ch.infidelity();
    if eps < 0.25 && qp.norm.powi(-2) <= 1.0 - 4.0 * eps {
        log::debug!("inverse norm {} outside first-order bound for eps {}", qp.norm, eps);
    }
    Ok(qp)
}

/// QP norm of the inverse, `+inf` for singular channels.
pub fn inverse_norm(ch: &PauliChannel) -> f64 {
    match invert_channel(ch) {
        Ok(qp) => qp.norm,
        Err(_) => f64::INFINITY,
    }
}

/// Draw a Pauli from a probability channel; the deficit (if any) maps to identity.
pub fn sample_channel<R: rand::Rng + ?Sized>(ch: &PauliChannel, rng: &mut R) -> PauliOp {
    let mut u: f64 = rng.random();
    for (p, w) in &ch.terms {
        if u < *w {
            return *p;
        }
        u -= w;
    }
    PauliOp::identity(ch.n)
}

/// Single-qubit logical Pauli classes in the fixed order `I, X, Y, Z`.
pub const LOGICAL_LETTERS: [char; 4] = ['I', 'X', 'Y', 'Z'];

/// Single-qubit channel from weights in `I, X, Y, Z` order.
pub fn logical_channel(w: [f64; 4]) -> PauliChannel {
    let mut ch = PauliChannel::empty(1, ChannelKind::Probability);
    for (i, c) in LOGICAL_LETTERS.iter().enumerate() {
        if w[i] != 0.0 {
            ch.add(PauliOp::single(1, 0, *c), w[i]);
        }
    }
    if w.iter().all(|x| *x >= 0.0) {
        ch.kind = ChannelKind::Probability;
    }
    ch
}

/// Weights of a single-qubit channel in `I, X, Y, Z` order.
pub fn logical_weights(ch: &PauliChannel) -> [f64; 4] {
    let mut w = [0.0; 4];
    for (i, c) in LOGICAL_LETTERS.iter().enumerate() {
        w[i] = ch.weight(&PauliOp::single(1, 0, *c));
    }
    w
}
