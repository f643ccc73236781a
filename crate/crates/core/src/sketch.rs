//! Feature-hashing and Gaussian random-projection sketches.
//!
//! Both schemes compress a `p`-vector to `k` entries such that the sketch
//! inner product is unbiased for the original one. [`suff_stats`] reduces a
//! pair of sketches to the three sufficient statistics `(w1, w2, w3)`
//! estimating `(|x_i|^2, |x_j|^2, <x_i, x_j>)`.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// The Mersenne prime `2^61 - 1` used by the universal hash family.
pub const MERSENNE_61: u64 = (1 << 61) - 1;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SketchError {
    #[error("angle {0} is outside [0, pi]")]
    InvalidAngle(f64),
    #[error("dimension must be at least 2, got {0}")]
    InvalidDimension(usize),
    #[error("norm ratio must be positive and finite, got {0}")]
    InvalidRatio(f64),
    #[error("sketch size must be at least 1")]
    EmptySketch,
    #[error("sketch lengths differ: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("squared norms must be positive and finite")]
    InvalidNorm,
}

/// Sketching scheme; decides how raw sums are normalized.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Scheme {
    #[serde(rename = "fh")]
    FeatureHash,
    #[serde(rename = "rp")]
    RandomProjection,
}

impl Scheme {
    pub fn tag(self) -> &'static str {
        match self {
            Scheme::FeatureHash => "fh",
            Scheme::RandomProjection => "rp",
        }
    }
}

/// SplitMix64 finalizer; used to derive independent stream ids.
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Combine two words into one stream id.
pub fn hash64(a: u64, b: u64) -> u64 {
    mix64(mix64(a) ^ b.rotate_left(32) ^ 0x632b_e59b_d9b4_e019)
}

/// Reproducible random source addressed by `(seed, stream)`.
///
/// Backed by ChaCha8 with the stream id mapped onto the cipher's stream
/// counter, so any `(seed, stream)` pair replays the same sequence on every
/// platform and independently of scheduling.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SeededRng {
    pub seed: u64,
    pub stream: u64,
}

impl SeededRng {
    pub fn new(seed: u64, stream: u64) -> Self {
        Self { seed, stream }
    }

    /// Trial `i` of a batch rooted at `self`.
    pub fn offset(&self, i: u64) -> Self {
        Self::new(self.seed, self.stream.wrapping_add(i))
    }

    /// Stream derived by hashing in a key.
    pub fn derive(&self, key: u64) -> Self {
        Self::new(self.seed, hash64(self.stream, key))
    }

    pub fn sampler(&self) -> Sampler {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(self.stream);
        Sampler { rng, spare: None }
    }
}

/// Uniform and standard-normal draws from a [`SeededRng`].
///
/// Normals use the Box-Muller transform; both outputs of each transform are
/// consumed in order.
#[derive(Debug, Clone)]
pub struct Sampler {
    rng: ChaCha8Rng,
    spare: Option<f64>,
}

impl Sampler {
    pub fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }

    /// Uniform in `[0, 1)` with 53 random bits.
    pub fn uniform(&mut self) -> f64 {
        (self.rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform integer in `[lo, hi)`, rejection sampled.
    pub fn below(&mut self, lo: u64, hi: u64) -> u64 {
        let span = hi - lo;
        let zone = u64::MAX - (u64::MAX % span);
        loop {
            let x = self.rng.next_u64();
            if x < zone {
                return lo + x % span;
            }
        }
    }

    pub fn normal(&mut self) -> f64 {
        if let Some(z) = self.spare.take() {
            return z;
        }
        // u1 in (0, 1] keeps the log finite
        let u1 = ((self.rng.next_u64() >> 11) + 1) as f64 * (1.0 / (1u64 << 53) as f64);
        let u2 = self.uniform();
        let r = (-2.0 * u1.ln()).sqrt();
        let (s, c) = (std::f64::consts::TAU * u2).sin_cos();
        self.spare = Some(r * s);
        r * c
    }

    pub fn rademacher(&mut self) -> f64 {
        if self.rng.next_u64() >> 63 == 0 {
            1.0
        } else {
            -1.0
        }
    }

    pub fn normal_vec(&mut self, n: usize) -> Vec<f64> {
        (0..n).map(|_| self.normal()).collect()
    }
}

/// Bucket and sign assignment for feature hashing.
pub trait FeatureHasher {
    /// Bucket of column `t`, in `0..k`.
    fn bucket(&self, t: usize) -> usize;
    /// Sign of column `t`, `+1.0` or `-1.0`.
    fn sign(&self, t: usize) -> f64;
}

/// Pair of 2-wise universal hashes `h(t) = ((a t + b) mod P) mod k` and
/// `phi(t) = +-1` from the parity of an independent `(a', b')` hash.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HashPair {
    k: usize,
    a: u64,
    b: u64,
    sign_a: u64,
    sign_b: u64,
}

fn mod_mersenne(x: u128) -> u64 {
    let p = MERSENNE_61 as u128;
    let folded = (x & p) + (x >> 61);
    let folded = (folded & p) + (folded >> 61);
    let r = folded as u64;
    if r >= MERSENNE_61 {
        r - MERSENNE_61
    } else {
        r
    }
}

impl HashPair {
    pub fn new(k: usize, a: u64, b: u64, sign_a: u64, sign_b: u64) -> Self {
        assert!(k >= 1, "sketch size must be at least 1");
        Self {
            k,
            a: a % MERSENNE_61,
            b: b % MERSENNE_61,
            sign_a: sign_a % MERSENNE_61,
            sign_b: sign_b % MERSENNE_61,
        }
    }

    pub fn random(k: usize, sampler: &mut Sampler) -> Self {
        let a = sampler.below(1, MERSENNE_61);
        let b = sampler.below(0, MERSENNE_61);
        let sign_a = sampler.below(1, MERSENNE_61);
        let sign_b = sampler.below(0, MERSENNE_61);
        Self::new(k, a, b, sign_a, sign_b)
    }

    pub fn k(&self) -> usize {
        self.k
    }

    fn eval(a: u64, b: u64, t: usize) -> u64 {
        mod_mersenne(a as u128 * t as u128 + b as u128)
    }
}

impl FeatureHasher for HashPair {
    fn bucket(&self, t: usize) -> usize {
        (Self::eval(self.a, self.b, t) % self.k as u64) as usize
    }

    fn sign(&self, t: usize) -> f64 {
        if Self::eval(self.sign_a, self.sign_b, t) & 1 == 0 {
            1.0
        } else {
            -1.0
        }
    }
}

/// Explicit lookup-table hashes.
#[derive(Debug, Clone, PartialEq)]
pub struct TableHash {
    pub buckets: Vec<usize>,
    pub signs: Vec<f64>,
}

impl TableHash {
    /// Independent uniform bucket and sign for each of `p` columns.
    pub fn random(p: usize, k: usize, sampler: &mut Sampler) -> Self {
        assert!(k >= 1, "sketch size must be at least 1");
        let buckets = (0..p).map(|_| sampler.below(0, k as u64) as usize).collect();
        let signs = (0..p).map(|_| sampler.rademacher()).collect();
        Self { buckets, signs }
    }
}

/// How feature-hashing buckets and signs are drawn.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub enum HashFamily {
    /// [`HashPair`]: linear hashes modulo `2^61 - 1`.
    #[serde(rename = "linear")]
    Linear,
    /// [`TableHash::random`]: a fresh uniform bucket and sign per column.
    #[default]
    #[serde(rename = "random")]
    Random,
}

impl HashFamily {
    pub fn tag(self) -> &'static str {
        match self {
            HashFamily::Linear => "linear",
            HashFamily::Random => "random",
        }
    }
}

impl FeatureHasher for TableHash {
    fn bucket(&self, t: usize) -> usize {
        self.buckets[t]
    }

    fn sign(&self, t: usize) -> f64 {
        self.signs[t]
    }
}

/// `v_s = sum_{t : h(t) = s} phi(t) x_t`.
pub fn feature_hash<H: FeatureHasher>(x: &[f64], k: usize, hashes: &H) -> Vec<f64> {
    let mut v = vec![0.0; k];
    for (t, &xt) in x.iter().enumerate() {
        v[hashes.bucket(t)] += hashes.sign(t) * xt;
    }
    v
}

/// `v_s = <x, r_s>` for each column `r_s`.
pub fn random_projection(x: &[f64], r_cols: &[Vec<f64>]) -> Vec<f64> {
    r_cols
        .iter()
        .map(|col| {
            assert_eq!(col.len(), x.len(), "projection column length must match x");
            dot(x, col)
        })
        .collect()
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Feature-hash two vectors with one freshly drawn hash from `family`.
pub fn hash_pair(
    x1: &[f64],
    x2: &[f64],
    k: usize,
    family: HashFamily,
    sampler: &mut Sampler,
) -> (Vec<f64>, Vec<f64>) {
    match family {
        HashFamily::Linear => {
            let h = HashPair::random(k, sampler);
            (feature_hash(x1, k, &h), feature_hash(x2, k, &h))
        }
        HashFamily::Random => {
            let h = TableHash::random(x1.len(), k, sampler);
            (feature_hash(x1, k, &h), feature_hash(x2, k, &h))
        }
    }
}

/// Project two vectors with one freshly drawn `p x k` Gaussian matrix.
///
/// Columns are generated one at a time in column order and never stored.
pub fn project_pair(
    x1: &[f64],
    x2: &[f64],
    k: usize,
    sampler: &mut Sampler,
) -> (Vec<f64>, Vec<f64>) {
    let mut v1 = Vec::with_capacity(k);
    let mut v2 = Vec::with_capacity(k);
    let mut col = vec![0.0; x1.len()];
    for _ in 0..k {
        for c in col.iter_mut() {
            *c = sampler.normal();
        }
        v1.push(dot(x1, &col));
        v2.push(dot(x2, &col));
    }
    (v1, v2)
}

/// Two sketches of equal length plus the known squared norms of their inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct SketchPair {
    pub vi: Vec<f64>,
    pub vj: Vec<f64>,
    pub norm_i_sq: f64,
    pub norm_j_sq: f64,
    pub scheme: Scheme,
}

impl SketchPair {
    pub fn new(
        vi: Vec<f64>,
        vj: Vec<f64>,
        norm_i_sq: f64,
        norm_j_sq: f64,
        scheme: Scheme,
    ) -> Result<Self, SketchError> {
        if vi.is_empty() {
            return Err(SketchError::EmptySketch);
        }
        if vi.len() != vj.len() {
            return Err(SketchError::LengthMismatch(vi.len(), vj.len()));
        }
        let ok = |n: f64| n.is_finite() && n > 0.0;
        if !ok(norm_i_sq) || !ok(norm_j_sq) {
            return Err(SketchError::InvalidNorm);
        }
        Ok(Self {
            vi,
            vj,
            norm_i_sq,
            norm_j_sq,
            scheme,
        })
    }

    pub fn k(&self) -> usize {
        self.vi.len()
    }

    /// Per-slot scale that turns raw sums into unbiased norm estimates.
    pub fn slot_scale(&self) -> f64 {
        match self.scheme {
            Scheme::FeatureHash => 1.0,
            Scheme::RandomProjection => 1.0 / self.k() as f64,
        }
    }
}

/// Normalized sufficient statistics of a sketch pair.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SuffStats {
    /// Estimate of `|x_i|^2`.
    pub w1: f64,
    /// Estimate of `|x_j|^2`.
    pub w2: f64,
    /// Estimate of `<x_i, x_j>`.
    pub w3: f64,
    pub k: usize,
}

impl SuffStats {
    /// Slack allowed in the Cauchy-Schwarz check for rounding.
    pub fn satisfies_cauchy_schwarz(&self) -> bool {
        let bound = (self.w1 * self.w2).sqrt();
        self.w1 >= 0.0 && self.w2 >= 0.0 && self.w3.abs() <= bound * (1.0 + 1e-12) + 1e-300
    }
}

pub fn suff_stats(pair: &SketchPair) -> SuffStats {
    let mut s11 = 0.0;
    let mut s22 = 0.0;
    let mut s12 = 0.0;
    for (a, b) in pair.vi.iter().zip(&pair.vj) {
        s11 += a * a;
        s22 += b * b;
        s12 += a * b;
    }
    let scale = pair.slot_scale();
    SuffStats {
        w1: s11 * scale,
        w2: s22 * scale,
        w3: s12 * scale,
        k: pair.k(),
    }
}

/// Vectors with `|x1|^2 = r |x2|^2`, `|x2|^2 = d` and angle `theta`.
pub fn generate_vector_pair(
    d: usize,
    r: f64,
    theta: f64,
    rng: &SeededRng,
) -> Result<(Vec<f64>, Vec<f64>), SketchError> {
    if d < 2 {
        return Err(SketchError::InvalidDimension(d));
    }
    if !(r.is_finite() && r > 0.0) {
        return Err(SketchError::InvalidRatio(r));
    }
    if !(0.0..=std::f64::consts::PI).contains(&theta) {
        return Err(SketchError::InvalidAngle(theta));
    }
    let mut s = rng.sampler();
    let (u, w) = loop {
        let g1 = s.normal_vec(d);
        let g2 = s.normal_vec(d);
        let n1 = dot(&g1, &g1).sqrt();
        if n1 == 0.0 {
            continue;
        }
        let u: Vec<f64> = g1.iter().map(|x| x / n1).collect();
        let proj = dot(&g2, &u);
        let mut w: Vec<f64> = g2.iter().zip(&u).map(|(g, ui)| g - proj * ui).collect();
        // second pass cleans up cancellation error
        let proj2 = dot(&w, &u);
        w.iter_mut().zip(&u).for_each(|(wi, ui)| *wi -= proj2 * ui);
        let nw = dot(&w, &w).sqrt();
        if nw <= 1e-8 * (d as f64).sqrt() {
            continue;
        }
        w.iter_mut().for_each(|x| *x /= nw);
        break (u, w);
    };
    let base = (d as f64).sqrt();
    let scale1 = (r * d as f64).sqrt();
    let (sin_t, cos_t) = theta.sin_cos();
    let x2: Vec<f64> = u.iter().map(|x| base * x).collect();
    let x1: Vec<f64> = u
        .iter()
        .zip(&w)
        .map(|(a, b)| scale1 * (cos_t * a + sin_t * b))
        .collect();
    Ok((x1, x2))
}
