//! Trainable feature clustering codebook: entry table, single-layer decoder,
//! hard/soft decoding and the four training losses with analytic gradients.
//!
//! Conventions shared by every function here:
//! - cosine similarities use the unnormalized entry rows, so entries are never
//!   forced back onto the unit sphere;
//! - every argmax breaks ties towards the lowest index;
//! - the assigned entry `d` is a constant under differentiation.

use std::path::Path;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::binio::{self, Reader, Writer};
use crate::error::{Error, Result};

pub const CODEBOOK_MAGIC: &[u8; 4] = b"GOIC";
pub const DECODER_MAGIC: &[u8; 4] = b"GOID";
pub const DEFAULT_ENTRIES: usize = 300;
pub const DEFAULT_SEMANTIC_DIM: usize = 256;
/// Rows shorter than this are considered degenerate.
pub const MIN_ENTRY_NORM: f64 = 1e-8;
const MIN_VECTOR_NORM: f64 = 1e-12;

/// `N × D_high` table of semantic-space vectors.
#[derive(Clone, Debug, PartialEq)]
pub struct Codebook {
    entries: Array2<f64>,
}

impl Codebook {
    pub fn new(entries: Array2<f64>) -> Result<Self> {
        if entries.nrows() < 2 {
            return Err(Error::Invalid(format!(
                "codebook needs at least 2 entries, got {}",
                entries.nrows()
            )));
        }
        for (i, row) in entries.outer_iter().enumerate() {
            if row.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidRecord {
                    index: i,
                    reason: "non-finite codebook entry".into(),
                });
            }
            if norm(row) < MIN_ENTRY_NORM {
                return Err(Error::InvalidRecord {
                    index: i,
                    reason: "zero codebook entry".into(),
                });
            }
        }
        Ok(Self { entries })
    }

    pub fn len(&self) -> usize {
        self.entries.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.nrows() == 0
    }

    pub fn dim(&self) -> usize {
        self.entries.ncols()
    }

    pub fn entries(&self) -> &Array2<f64> {
        &self.entries
    }

    /// Mutable access for optimizers. Callers are responsible for keeping
    /// rows away from zero (see [`Codebook::reset_degenerate`]).
    pub fn entries_mut(&mut self) -> &mut Array2<f64> {
        &mut self.entries
    }

    pub fn entry(&self, i: usize) -> ArrayView1<'_, f64> {
        self.entries.row(i)
    }

    /// Unit-length rows and the original row norms.
    pub fn unit_rows(&self) -> Result<(Array2<f64>, Array1<f64>)> {
        let norms: Array1<f64> = self.entries.outer_iter().map(norm).collect();
        if let Some(i) = norms.iter().position(|&n| !(n >= MIN_ENTRY_NORM)) {
            return Err(Error::Numeric(format!("codebook entry {i} has zero norm")));
        }
        let units = &self.entries / &norms.view().insert_axis(Axis(1));
        Ok((units, norms))
    }

    /// Replaces rows whose norm fell below [`MIN_ENTRY_NORM`] with random unit
    /// vectors; returns how many were reset.
    pub fn reset_degenerate<R: Rng>(&mut self, rng: &mut R) -> usize {
        let mut count = 0;
        for mut row in self.entries.outer_iter_mut() {
            if norm(row.view()) < MIN_ENTRY_NORM || row.iter().any(|v| !v.is_finite()) {
                let fresh = random_unit(rng, row.len());
                row.assign(&fresh);
                count += 1;
            }
        }
        count
    }

    /// Rounds every value to the nearest `f32`, the precision of the file
    /// format.
    pub fn round_to_f32(&mut self) {
        self.entries.mapv_inplace(|v| v as f32 as f64);
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::with_header(CODEBOOK_MAGIC);
        w.u32(self.len() as u32);
        w.u32(self.dim() as u32);
        for &v in self.entries.iter() {
            w.f32(v as f32);
        }
        w.buf
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new("GOIC", bytes);
        r.header(CODEBOOK_MAGIC)?;
        let n = r.u32()? as usize;
        let d = r.u32()? as usize;
        r.expect_remaining(n as u64 * d as u64 * 4)?;
        let data = r.f32_vec(n * d)?;
        r.finish()?;
        let entries = Array2::from_shape_vec((n, d), data.into_iter().map(f64::from).collect())
            .map_err(|e| Error::Shape(e.to_string()))?;
        Self::new(entries)
    }
}

pub fn load_codebook(path: impl AsRef<Path>) -> Result<Codebook> {
    Codebook::from_bytes(&binio::read_file(path.as_ref())?)
}

pub fn save_codebook(cb: &Codebook, path: impl AsRef<Path>) -> Result<()> {
    binio::write_file(path.as_ref(), &cb.to_bytes())
}

/// Single fully-connected layer mapping a low-dimensional feature to entry
/// logits: `e = W f + b`.
#[derive(Clone, Debug, PartialEq)]
pub struct Decoder {
    /// `N × D_low`.
    pub weight: Array2<f64>,
    /// `N`.
    pub bias: Array1<f64>,
}

impl Decoder {
    pub fn new(weight: Array2<f64>, bias: Array1<f64>) -> Result<Self> {
        if weight.nrows() != bias.len() {
            return Err(Error::Shape(format!(
                "decoder weight has {} rows but bias has {} entries",
                weight.nrows(),
                bias.len()
            )));
        }
        if weight.iter().chain(bias.iter()).any(|v| !v.is_finite()) {
            return Err(Error::Invalid("decoder parameters must be finite".into()));
        }
        Ok(Self { weight, bias })
    }

    /// Uniform `±1/sqrt(in_dim)` weights and zero bias.
    pub fn random(out_dim: usize, in_dim: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let bound = 1.0 / (in_dim.max(1) as f64).sqrt();
        let weight = Array2::from_shape_fn((out_dim, in_dim), |_| rng.random_range(-bound..bound));
        Self {
            weight,
            bias: Array1::zeros(out_dim),
        }
    }

    pub fn in_dim(&self) -> usize {
        self.weight.ncols()
    }

    pub fn out_dim(&self) -> usize {
        self.weight.nrows()
    }

    pub fn round_to_f32(&mut self) {
        self.weight.mapv_inplace(|v| v as f32 as f64);
        self.bias.mapv_inplace(|v| v as f32 as f64);
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::with_header(DECODER_MAGIC);
        w.u32(self.in_dim() as u32);
        w.u32(self.out_dim() as u32);
        for &v in self.weight.iter().chain(self.bias.iter()) {
            w.f32(v as f32);
        }
        w.buf
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new("GOID", bytes);
        r.header(DECODER_MAGIC)?;
        let in_dim = r.u32()? as usize;
        let out_dim = r.u32()? as usize;
        r.expect_remaining((out_dim as u64 * in_dim as u64 + out_dim as u64) * 4)?;
        let w = r.f32_vec(out_dim * in_dim)?;
        let b = r.f32_vec(out_dim)?;
        r.finish()?;
        let weight = Array2::from_shape_vec((out_dim, in_dim), w.into_iter().map(f64::from).collect())
            .map_err(|e| Error::Shape(e.to_string()))?;
        Self::new(weight, b.into_iter().map(f64::from).collect())
    }
}

pub fn load_decoder(path: impl AsRef<Path>) -> Result<Decoder> {
    Decoder::from_bytes(&binio::read_file(path.as_ref())?)
}

pub fn save_decoder(dec: &Decoder, path: impl AsRef<Path>) -> Result<()> {
    binio::write_file(path.as_ref(), &dec.to_bytes())
}

pub(crate) fn norm(v: ArrayView1<f64>) -> f64 {
    v.dot(&v).sqrt()
}

pub(crate) fn random_unit<R: Rng>(rng: &mut R, dim: usize) -> Array1<f64> {
    use rand_distr::StandardNormal;
    loop {
        let v: Array1<f64> = (0..dim).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        let n = norm(v.view());
        if n > 1e-6 {
            return v / n;
        }
    }
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(values: ArrayView1<f64>) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

fn unit_vector(v: ArrayView1<f64>, what: &str) -> Result<(Array1<f64>, f64)> {
    let n = norm(v);
    if !(n >= MIN_VECTOR_NORM) {
        return Err(Error::Invalid(format!("{what} has zero norm")));
    }
    Ok((&v / n, n))
}

fn log_softmax(z: ArrayView1<f64>) -> Array1<f64> {
    let m = z.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    let lse = m + z.iter().map(|&v| (v - m).exp()).sum::<f64>().ln();
    z.mapv(|v| v - lse)
}

fn softmax_rows_inplace(z: &mut Array2<f64>) {
    for mut row in z.outer_iter_mut() {
        let m = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        row.mapv_inplace(|v| (v - m).exp());
        let s = row.sum();
        row.mapv_inplace(|v| v / s);
    }
}

/// `e = W f + b`.
pub fn decode_logits(f: ArrayView1<f64>, dec: &Decoder) -> Result<Array1<f64>> {
    if f.len() != dec.in_dim() {
        return Err(Error::Shape(format!(
            "feature has {} components, decoder expects {}",
            f.len(),
            dec.in_dim()
        )));
    }
    Ok(dec.weight.dot(&f) + &dec.bias)
}

/// Entry selected by the largest logit and its semantic vector.
pub fn decode_hard<'a>(e: ArrayView1<f64>, cb: &'a Codebook) -> Result<(usize, ArrayView1<'a, f64>)> {
    if e.len() != cb.len() {
        return Err(Error::Shape(format!(
            "{} logits for a codebook of {} entries",
            e.len(),
            cb.len()
        )));
    }
    let d = argmax(e);
    Ok((d, cb.entry(d)))
}

/// Softmax-weighted mix of the entries, `softmax(temp · e)ᵀ T`.
pub fn decode_soft(e: ArrayView1<f64>, cb: &Codebook, temp: f64) -> Result<Array1<f64>> {
    if !(temp > 0.0) {
        return Err(Error::Invalid(format!("temperature must be positive, got {temp}")));
    }
    if e.len() != cb.len() {
        return Err(Error::Shape(format!(
            "{} logits for a codebook of {} entries",
            e.len(),
            cb.len()
        )));
    }
    let p = log_softmax((&e * temp).view()).mapv(f64::exp);
    Ok(cb.entries.t().dot(&p))
}

fn cosines(v_gt: ArrayView1<f64>, cb: &Codebook) -> Result<(Array1<f64>, Array1<f64>, Array2<f64>, Array1<f64>)> {
    if v_gt.len() != cb.dim() {
        return Err(Error::Shape(format!(
            "feature has {} components, codebook has {}",
            v_gt.len(),
            cb.dim()
        )));
    }
    let (g, _) = unit_vector(v_gt, "ground-truth feature")?;
    let (units, norms) = cb.unit_rows()?;
    let c = units.dot(&g);
    Ok((g, c, units, norms))
}

/// Entry with the highest cosine similarity to `v_gt`.
pub fn assign_entry(v_gt: ArrayView1<f64>, cb: &Codebook) -> Result<usize> {
    let (_, c, _, _) = cosines(v_gt, cb)?;
    Ok(argmax(c.view()))
}

/// Self-entropy of `p = softmax(tau · cos⟨v_gt, T_i⟩)` and its gradient
/// with respect to every entry row.
pub fn loss_ent(v_gt: ArrayView1<f64>, cb: &Codebook, tau: f64) -> Result<(f64, Array2<f64>)> {
    if !(tau > 0.0) {
        return Err(Error::Invalid(format!("tau must be positive, got {tau}")));
    }
    let (g, c, units, norms) = cosines(v_gt, cb)?;
    let logp = log_softmax((&c * tau).view());
    let p = logp.mapv(f64::exp);
    let h = -p.iter().zip(&logp).map(|(p, l)| p * l).sum::<f64>();
    let mut grad = Array2::zeros(cb.entries.raw_dim());
    for j in 0..cb.len() {
        let dz = -p[j] * (logp[j] + h);
        let scale = tau * dz / norms[j];
        let mut row = grad.row_mut(j);
        row.assign(&(&g - &(&units.row(j) * c[j])));
        row *= scale;
    }
    let max_h = (cb.len() as f64).ln();
    Ok((h.clamp(0.0, max_h), grad))
}

/// `1 - cos⟨v_gt, T_d⟩` for the assigned entry `d`; returns the loss, `d`
/// and the gradient with respect to row `d` (all other rows get none).
pub fn loss_max(v_gt: ArrayView1<f64>, cb: &Codebook) -> Result<(f64, usize, Array1<f64>)> {
    let (g, c, units, norms) = cosines(v_gt, cb)?;
    let d = argmax(c.view());
    let grad = -(&g - &(&units.row(d) * c[d])) / norms[d];
    Ok(((1.0 - c[d]).clamp(0.0, 2.0), d, grad))
}

/// `‖e − onehot(d)‖²` and its gradient with respect to `e`.
pub fn loss_joint(e: ArrayView1<f64>, d: usize) -> Result<(f64, Array1<f64>)> {
    if d >= e.len() {
        return Err(Error::Invalid(format!(
            "entry index {d} out of range for {} logits",
            e.len()
        )));
    }
    let mut diff = e.to_owned();
    diff[d] -= 1.0;
    let loss = diff.dot(&diff);
    Ok((loss, diff * 2.0))
}

/// `1 − cos⟨v_gt, v⟩` and its gradient with respect to `v`.
pub fn loss_e2e(v_gt: ArrayView1<f64>, v: ArrayView1<f64>) -> Result<(f64, Array1<f64>)> {
    if v_gt.len() != v.len() {
        return Err(Error::Shape(format!("{} vs {} components", v_gt.len(), v.len())));
    }
    let (g, _) = unit_vector(v_gt, "ground-truth feature")?;
    let (u, n) = unit_vector(v, "decoded feature")?;
    let c = g.dot(&u);
    let grad = -(&g - &(&u * c)) / n;
    Ok(((1.0 - c).clamp(0.0, 2.0), grad))
}

/// Weights of the combined objective and the soft-decoding temperature used
/// by the end-to-end term.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossWeights {
    pub ent: f64,
    pub max: f64,
    pub joint: f64,
    pub e2e: f64,
    pub temp_dec: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            ent: 0.3,
            max: 1.0,
            joint: 1.0,
            e2e: 1.0,
            temp_dec: 10.0,
        }
    }
}

/// Batch means of the (unweighted) loss terms and their weighted total.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossTerms {
    pub total: f64,
    pub ent: f64,
    pub max: f64,
    pub joint: f64,
    pub e2e: f64,
}

#[derive(Clone, Debug)]
pub struct TotalLoss {
    pub terms: LossTerms,
    pub grad_entries: Array2<f64>,
    pub grad_weight: Array2<f64>,
    pub grad_bias: Array1<f64>,
    /// Gradient with respect to each rendered feature `f̂` of the batch.
    pub grad_features: Array2<f64>,
    /// Assigned entry per batch row.
    pub assignments: Vec<usize>,
}

/// Mean combined loss over a batch of `(v_gt, f̂)` rows.
///
/// The end-to-end term decodes through [`decode_soft`] at
/// `weights.temp_dec` so that gradients reach the decoder and the features.
pub fn total_loss(
    v_gt: ArrayView2<f64>,
    fhat: ArrayView2<f64>,
    cb: &Codebook,
    dec: &Decoder,
    tau: f64,
    weights: &LossWeights,
) -> Result<TotalLoss> {
    let (b, dh) = v_gt.dim();
    if b == 0 {
        return Err(Error::Invalid("empty loss batch".into()));
    }
    if fhat.nrows() != b {
        return Err(Error::Shape(format!("{b} targets but {} features", fhat.nrows())));
    }
    if dh != cb.dim() || fhat.ncols() != dec.in_dim() || dec.out_dim() != cb.len() {
        return Err(Error::Shape(format!(
            "batch {b}x{dh} / {b}x{} against codebook {}x{} and decoder {}x{}",
            fhat.ncols(),
            cb.len(),
            cb.dim(),
            dec.out_dim(),
            dec.in_dim()
        )));
    }
    if !(tau > 0.0) || !(weights.temp_dec > 0.0) {
        return Err(Error::Invalid("tau and temp_dec must be positive".into()));
    }
    let n = cb.len();
    let inv_b = 1.0 / b as f64;
    let (units, norms) = cb.unit_rows()?;

    let mut g = v_gt.to_owned();
    for (i, mut row) in g.outer_iter_mut().enumerate() {
        let nr = norm(row.view());
        if !(nr >= MIN_VECTOR_NORM) {
            return Err(Error::Invalid(format!("ground-truth feature {i} has zero norm")));
        }
        row /= nr;
    }

    // Cosine terms: entropy and max-similarity.
    let cos = g.dot(&units.t());
    let mut dcos = Array2::<f64>::zeros((b, n));
    let mut assignments = Vec::with_capacity(b);
    let (mut sum_ent, mut sum_max) = (0.0, 0.0);
    for i in 0..b {
        let c = cos.row(i);
        let logp = log_softmax((&c * tau).view());
        let h = -logp.iter().map(|&l| l.exp() * l).sum::<f64>();
        sum_ent += h.clamp(0.0, (n as f64).ln());
        let mut dc = dcos.row_mut(i);
        for j in 0..n {
            let p = logp[j].exp();
            dc[j] = weights.ent * inv_b * tau * (-p * (logp[j] + h));
        }
        let d = argmax(c);
        assignments.push(d);
        sum_max += (1.0 - c[d]).clamp(0.0, 2.0);
        dc[d] -= weights.max * inv_b;
    }

    // Logit terms: joint alignment and end-to-end through soft decoding.
    let logits = fhat.dot(&dec.weight.t()) + &dec.bias;
    let mut de = Array2::<f64>::zeros((b, n));
    let mut sum_joint = 0.0;
    for (i, &d) in assignments.iter().enumerate() {
        for j in 0..n {
            let diff = logits[[i, j]] - if j == d { 1.0 } else { 0.0 };
            sum_joint += diff * diff;
            de[[i, j]] = weights.joint * inv_b * 2.0 * diff;
        }
    }
    let mut soft = &logits * weights.temp_dec;
    softmax_rows_inplace(&mut soft);
    let v = soft.dot(&cb.entries);
    let mut dv = Array2::<f64>::zeros((b, dh));
    let mut sum_e2e = 0.0;
    for i in 0..b {
        let vi = v.row(i);
        let vn = norm(vi);
        if !(vn >= MIN_VECTOR_NORM) {
            return Err(Error::Numeric(format!("soft-decoded feature {i} has zero norm")));
        }
        let gi = g.row(i);
        let c = gi.dot(&vi) / vn;
        sum_e2e += (1.0 - c).clamp(0.0, 2.0);
        let scale = -weights.e2e * inv_b / vn;
        let mut row = dv.row_mut(i);
        for k in 0..dh {
            row[k] = scale * (gi[k] - c * vi[k] / vn);
        }
    }
    let ds = dv.dot(&cb.entries.t());
    for i in 0..b {
        let s = soft.row(i);
        let dsi = ds.row(i);
        let inner = s.dot(&dsi);
        for j in 0..n {
            de[[i, j]] += weights.temp_dec * s[j] * (dsi[j] - inner);
        }
    }

    let mut grad_entries = soft.t().dot(&dv);
    let dcos_g = dcos.t().dot(&g);
    for j in 0..n {
        let col: f64 = (0..b).map(|i| dcos[[i, j]] * cos[[i, j]]).sum();
        let mut row = grad_entries.row_mut(j);
        for k in 0..dh {
            row[k] += (dcos_g[[j, k]] - col * units[[j, k]]) / norms[j];
        }
    }

    let grad_weight = de.t().dot(&fhat);
    let grad_bias = de.sum_axis(Axis(0));
    let grad_features = de.dot(&dec.weight);

    let mut terms = LossTerms {
        ent: sum_ent * inv_b,
        max: sum_max * inv_b,
        joint: sum_joint * inv_b,
        e2e: sum_e2e * inv_b,
        total: 0.0,
    };
    terms.total = weights.ent * terms.ent
        + weights.max * terms.max
        + weights.joint * terms.joint
        + weights.e2e * terms.e2e;
    if !terms.total.is_finite() {
        return Err(Error::Numeric("loss is not finite".into()));
    }
    Ok(TotalLoss {
        terms,
        grad_entries,
        grad_weight,
        grad_bias,
        grad_features,
        assignments,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn book(rows: &[&[f64]]) -> Codebook {
        let n = rows.len();
        let d = rows[0].len();
        Codebook::new(Array2::from_shape_fn((n, d), |(i, j)| rows[i][j])).unwrap()
    }

    fn random_book(n: usize, d: usize, seed: u64) -> Codebook {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Codebook::new(Array2::from_shape_fn((n, d), |_| rng.random_range(-1.0..1.0))).unwrap()
    }

    #[test]
    fn codebook_invariants() {
        assert!(Codebook::new(Array2::ones((1, 3))).is_err());
        assert!(Codebook::new(array![[1.0, 0.0], [0.0, 0.0]]).is_err());
        assert!(Codebook::new(array![[1.0, 0.0], [0.0, f64::NAN]]).is_err());
    }

    #[test]
    fn decode_logits_is_affine() {
        let dec = Decoder::new(array![[1.0, 2.0], [3.0, 4.0], [0.0, 0.0]], array![0.5, -1.0, 2.0]).unwrap();
        assert_eq!(decode_logits(array![0.0, 0.0].view(), &dec).unwrap(), dec.bias);
        assert_eq!(
            decode_logits(array![1.0, 1.0].view(), &dec).unwrap(),
            array![3.5, 6.0, 2.0]
        );
        assert!(decode_logits(array![1.0].view(), &dec).is_err());
        let zero = Decoder::new(Array2::zeros((4, 2)), array![0.0, 0.0, 1.0, 0.0]).unwrap();
        let e = decode_logits(array![3.0, -7.0].view(), &zero).unwrap();
        assert_eq!(argmax(e.view()), 2);
    }

    #[test]
    fn hard_decode_and_ties() {
        let cb = random_book(10, 4, 1);
        let mut e = Array1::zeros(10);
        e[7] = 1.0;
        let (d, v) = decode_hard(e.view(), &cb).unwrap();
        assert_eq!(d, 7);
        assert_eq!(v, cb.entry(7));
        let (d, _) = decode_hard(Array1::from_elem(10, 0.3).view(), &cb).unwrap();
        assert_eq!(d, 0);
    }

    #[test]
    fn soft_decode_limits() {
        let cb = random_book(5, 3, 2);
        let mut e = Array1::zeros(5);
        e[2] = 1e6;
        let v = decode_soft(e.view(), &cb, 1.0).unwrap();
        assert!((&v - &cb.entry(2)).iter().all(|x| x.abs() < 1e-6));
        let v = decode_soft(Array1::from_elem(5, 0.7).view(), &cb, 10.0).unwrap();
        let mean = cb.entries().mean_axis(Axis(0)).unwrap();
        assert!((&v - &mean).iter().all(|x| x.abs() < 1e-12));
        assert!(decode_soft(e.view(), &cb, 0.0).is_err());
    }

    #[test]
    fn assign_entry_cases() {
        let cb = random_book(6, 5, 3);
        assert_eq!(assign_entry(cb.entry(3), &cb).unwrap(), 3);
        let ortho = book(&[&[1.0, 0.0, 0.0], &[0.0, 1.0, 0.0], &[0.0, 0.0, 1.0], &[-1.0, 0.0, 0.0]]);
        assert_eq!(assign_entry(array![0.0, 0.0, 2.0].view(), &ortho).unwrap(), 2);
        assert!(assign_entry(array![0.0, 0.0, 0.0].view(), &ortho).is_err());
    }

    #[test]
    fn entropy_closed_forms() {
        // Uniform similarities: every entry orthogonal to v_gt.
        let mut entries = Array2::zeros((300, 2));
        entries.column_mut(1).fill(1.0);
        let cb = Codebook::new(entries).unwrap();
        let (h, _) = loss_ent(array![1.0, 0.0].view(), &cb, 1.0).unwrap();
        assert!((h - 300f64.ln()).abs() < 1e-12);
        assert!((h - 5.7038).abs() < 1e-4);

        let mut rows = vec![vec![-1.0, 0.0]; 8];
        rows[3] = vec![1.0, 0.0];
        let cb = Codebook::new(Array2::from_shape_fn((8, 2), |(i, j)| rows[i][j])).unwrap();
        let (h, _) = loss_ent(array![1.0, 0.0].view(), &cb, 50.0).unwrap();
        assert!(h < 1e-10);
    }

    #[test]
    fn entropy_scale_invariant_in_v_gt() {
        let cb = random_book(7, 4, 4);
        let v = array![0.3, -0.2, 0.9, 0.1];
        let (a, _) = loss_ent(v.view(), &cb, 1.7).unwrap();
        let (b, _) = loss_ent((&v * 3.0).view(), &cb, 1.7).unwrap();
        assert!((a - b).abs() <= 1e-9);
    }

    #[test]
    fn max_loss_bounds() {
        let cb = random_book(4, 3, 5);
        let (l, d, _) = loss_max(cb.entry(1), &cb).unwrap();
        assert_eq!(d, 1);
        assert!(l.abs() < 1e-12);
        // Duplicate rows act like a single-entry book.
        let cb = book(&[&[0.0, 2.0], &[0.0, 2.0]]);
        let (l, d, _) = loss_max(array![0.0, -1.0].view(), &cb).unwrap();
        assert_eq!(d, 0);
        assert!((l - 2.0).abs() < 1e-12);
    }

    #[test]
    fn joint_loss_cases() {
        let e = array![0.0, 1.0, 0.0];
        assert_eq!(loss_joint(e.view(), 1).unwrap().0, 0.0);
        assert_eq!(loss_joint(Array1::zeros(3).view(), 2).unwrap().0, 1.0);
        assert!(loss_joint(e.view(), 3).is_err());
        let (l, g) = loss_joint(array![0.5, -1.0].view(), 0).unwrap();
        assert!((l - 1.25).abs() < 1e-15);
        assert_eq!(g, array![-1.0, -2.0]);
    }

    #[test]
    fn e2e_loss_cases() {
        let v = array![1.0, 2.0, -0.5];
        assert!(loss_e2e(v.view(), v.view()).unwrap().0.abs() < 1e-12);
        let (l, _) = loss_e2e(array![1.0, 0.0].view(), array![0.0, 3.0].view()).unwrap();
        assert!((l - 1.0).abs() < 1e-15);
        assert!(loss_e2e(v.view(), Array1::zeros(3).view()).is_err());
    }

    #[test]
    fn one_hot_batch_leaves_only_entropy() {
        // Entries are orthogonal, logits are exact one-hots, and the soft
        // decode is saturated by a huge temperature.
        let cb = book(&[&[1.0, 0.0, 0.0], &[0.0, 1.0, 0.0], &[0.0, 0.0, 1.0]]);
        let dec = Decoder::new(Array2::eye(3), Array1::zeros(3)).unwrap();
        let v_gt = array![[0.0, 2.0, 0.0], [0.0, 0.0, 1.0]];
        let fhat = array![[0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
        let w = LossWeights {
            temp_dec: 1e4,
            ..Default::default()
        };
        let out = total_loss(v_gt.view(), fhat.view(), &cb, &dec, 1.0, &w).unwrap();
        assert!(out.terms.max.abs() < 1e-12);
        assert!(out.terms.joint.abs() < 1e-12);
        assert!(out.terms.e2e.abs() < 1e-12);
        assert!((out.terms.total - 0.3 * out.terms.ent).abs() < 1e-12);
        assert_eq!(out.assignments, vec![1, 2]);
    }

    #[test]
    fn reset_degenerate_rows() {
        let mut cb = random_book(3, 4, 9);
        cb.entries_mut().row_mut(1).fill(0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(cb.reset_degenerate(&mut rng), 1);
        assert!((norm(cb.entry(1)) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn file_round_trips() {
        let mut cb = random_book(5, 3, 11);
        cb.round_to_f32();
        let bytes = cb.to_bytes();
        assert_eq!(bytes.len(), 16 + 5 * 3 * 4);
        assert_eq!(Codebook::from_bytes(&bytes).unwrap(), cb);
        let mut dec = Decoder::random(5, 2, 1);
        dec.bias[3] = 0.25;
        dec.round_to_f32();
        let bytes = dec.to_bytes();
        assert_eq!(bytes.len(), 16 + (5 * 2 + 5) * 4);
        assert_eq!(Decoder::from_bytes(&bytes).unwrap(), dec);
        assert!(matches!(Decoder::from_bytes(&cb.to_bytes()), Err(Error::WrongContainer { .. })));
    }
}
