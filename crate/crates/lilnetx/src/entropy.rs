//! Learned factorized density over latent values.
//!
//! Each latent dimension of a parameter group gets an independent univariate
//! CDF model c_i built from a stack of small monotone layers: weights are
//! kept positive through a softplus reparameterization and the gated tanh
//! nonlinearity has slope in (0, 2), so c_i is nondecreasing by construction
//! and saturates to 0/1 at the tails. The probability of a rounding bin is
//! q_i(w) = c_i(w+½) − c_i(w−½), floored at ε_q. Training minimizes
//! −log₂ q over noise-smoothed surrogates; at compress time the same model
//! is frozen into integer frequency tables for the range coder.

use crate::optim::AdamState;
use crate::reparam::LatentTensor;
use crate::scalar::Scalar;
use crate::{Error, Result};
use rand::Rng;

/// Likelihood floor: bin probabilities never drop below this.
pub const EPS_Q: f64 = 1.0 / (1 << 20) as f64;

/// Frequency total of the quantized tables; must match the range coder.
pub const PMF_TOTAL: u32 = 1 << 16;

#[derive(Debug, Clone)]
struct Layout {
    /// Layer widths including the scalar input and output, e.g. [1,3,3,3,1].
    dims: Vec<usize>,
    /// (h, b, a) offsets per layer into the flat parameter vector.
    offsets: Vec<(usize, usize, usize)>,
    total: usize,
}

impl Layout {
    fn new(hidden: &[usize]) -> Self {
        let mut dims = Vec::with_capacity(hidden.len() + 2);
        dims.push(1);
        dims.extend_from_slice(hidden);
        dims.push(1);
        let layers = dims.len() - 1;
        let mut offsets = Vec::with_capacity(layers);
        let mut at = 0;
        for k in 0..layers {
            let (r_in, r_out) = (dims[k], dims[k + 1]);
            let h = at;
            at += r_in * r_out;
            let b = at;
            at += r_out;
            let a = at;
            if k + 1 < layers {
                at += r_out;
            }
            offsets.push((h, b, a));
        }
        Self { dims, offsets, total: at }
    }

    fn layers(&self) -> usize {
        self.dims.len() - 1
    }
}

/// Per-group factorized density: one univariate model per latent dimension.
#[derive(Debug, Clone)]
pub struct FactorizedDensity<T> {
    pub l: usize,
    layout: Layout,
    /// Flat parameter vector per dimension.
    params: Vec<Vec<T>>,
}

/// Softplus-transformed weights and other fixed-per-call quantities.
struct Prepared<T> {
    sp_h: Vec<Vec<T>>,
    sig_h: Vec<Vec<T>>,
    tanh_a: Vec<Vec<T>>,
}

/// Forward caches for one CDF evaluation, reused across elements to keep the
/// per-element loop allocation-free.
struct Scratch<T> {
    /// xs[k]: input to layer k.
    xs: Vec<Vec<T>>,
    /// ts[k]: pre-gate linear output of layer k.
    ts: Vec<Vec<T>>,
    tanh_ts: Vec<Vec<T>>,
    /// Backward buffers, g[k] has the width of layer k's input.
    g: Vec<Vec<T>>,
}

impl<T: Scalar> Scratch<T> {
    fn new(layout: &Layout) -> Self {
        let layers = layout.layers();
        Scratch {
            xs: (0..layers).map(|k| vec![T::zero(); layout.dims[k]]).collect(),
            ts: (0..layers).map(|k| vec![T::zero(); layout.dims[k + 1]]).collect(),
            tanh_ts: (0..layers).map(|k| vec![T::zero(); layout.dims[k + 1]]).collect(),
            g: (0..=layers).map(|k| vec![T::zero(); layout.dims[k]]).collect(),
        }
    }
}

fn softplus<T: Scalar>(h: T) -> T {
    if h > T::from_f64(20.0) {
        h
    } else {
        h.exp().ln_1p()
    }
}

fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

impl<T: Scalar> FactorizedDensity<T> {
    /// Fresh density with the default 4-layer, width-3 architecture.
    pub fn new<R: Rng>(l: usize, rng: &mut R) -> Self {
        Self::with_hidden(l, &[3, 3, 3], rng)
    }

    pub fn with_hidden<R: Rng>(l: usize, hidden: &[usize], rng: &mut R) -> Self {
        let layout = Layout::new(hidden);
        let layers = layout.layers();
        // Spread the initial CDF over roughly [-init_scale, init_scale].
        let init_scale: f64 = 10.0;
        let scale = init_scale.powf(1.0 / layers as f64);
        let mut params = Vec::with_capacity(l);
        for _ in 0..l {
            let mut p = vec![T::zero(); layout.total];
            for k in 0..layers {
                let (r_in, r_out) = (layout.dims[k], layout.dims[k + 1]);
                let (h_off, b_off, _) = layout.offsets[k];
                let h_init = (1.0 / (scale * r_out as f64)).exp_m1().ln();
                for v in &mut p[h_off..h_off + r_in * r_out] {
                    *v = T::from_f64(h_init);
                }
                for v in &mut p[b_off..b_off + r_out] {
                    *v = T::from_f64(rng.gen_range(-0.5..0.5));
                }
                // gates start at zero
            }
            params.push(p);
        }
        Self { l, layout, params }
    }

    pub fn params(&self) -> &[Vec<T>] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Vec<T>] {
        &mut self.params
    }

    pub fn param_sizes(&self) -> Vec<usize> {
        self.params.iter().map(Vec::len).collect()
    }

    pub fn set_params(&mut self, params: Vec<Vec<T>>) -> Result<()> {
        if params.len() != self.l || params.iter().any(|p| p.len() != self.layout.total) {
            return Err(Error::Config("density parameter shape mismatch".into()));
        }
        self.params = params;
        Ok(())
    }

    fn prepare(&self, dim: usize) -> Prepared<T> {
        let p = &self.params[dim];
        let layers = self.layout.layers();
        let mut sp_h = Vec::with_capacity(layers);
        let mut sig_h = Vec::with_capacity(layers);
        let mut tanh_a = Vec::with_capacity(layers);
        for k in 0..layers {
            let (r_in, r_out) = (self.layout.dims[k], self.layout.dims[k + 1]);
            let (h_off, _, a_off) = self.layout.offsets[k];
            sp_h.push(p[h_off..h_off + r_in * r_out].iter().map(|&h| softplus(h)).collect());
            sig_h.push(p[h_off..h_off + r_in * r_out].iter().map(|&h| sigmoid(h)).collect());
            if k + 1 < layers {
                tanh_a.push(p[a_off..a_off + r_out].iter().map(|&a| a.tanh()).collect());
            } else {
                tanh_a.push(Vec::new());
            }
        }
        Prepared { sp_h, sig_h, tanh_a }
    }

    /// Logit of the CDF at x (c(x) = sigmoid of this), filling caches.
    fn logit(&self, dim: usize, prep: &Prepared<T>, x: T, scratch: &mut Scratch<T>) -> T {
        let p = &self.params[dim];
        let layers = self.layout.layers();
        scratch.xs[0][0] = x;
        for k in 0..layers {
            let (r_in, r_out) = (self.layout.dims[k], self.layout.dims[k + 1]);
            let (_, b_off, _) = self.layout.offsets[k];
            for i in 0..r_out {
                let mut acc = p[b_off + i];
                for j in 0..r_in {
                    acc = acc + prep.sp_h[k][i * r_in + j] * scratch.xs[k][j];
                }
                scratch.ts[k][i] = acc;
                if k + 1 < layers {
                    let th = acc.tanh();
                    scratch.tanh_ts[k][i] = th;
                    scratch.xs[k + 1][i] = acc + prep.tanh_a[k][i] * th;
                }
            }
        }
        scratch.ts[layers - 1][0]
    }

    /// Backpropagate d(loss)/d(logit) = delta through one cached evaluation.
    /// Accumulates into `grad_params` and returns d(loss)/dx.
    fn logit_backward(
        &self,
        prep: &Prepared<T>,
        scratch: &mut Scratch<T>,
        delta: T,
        grad_params: &mut [T],
    ) -> T {
        let layers = self.layout.layers();
        scratch.g[layers][0] = delta;
        for k in (0..layers).rev() {
            let (r_in, r_out) = (self.layout.dims[k], self.layout.dims[k + 1]);
            let (h_off, b_off, a_off) = self.layout.offsets[k];
            for j in 0..r_in {
                scratch.g[k][j] = T::zero();
            }
            for i in 0..r_out {
                let gi = scratch.g[k + 1][i];
                // through the gate: y = t + tanh(a)·tanh(t)
                let gt = if k + 1 < layers {
                    let th = scratch.tanh_ts[k][i];
                    let ta = prep.tanh_a[k][i];
                    grad_params[a_off + i] =
                        grad_params[a_off + i] + gi * th * (T::one() - ta * ta);
                    gi * (T::one() + ta * (T::one() - th * th))
                } else {
                    gi
                };
                grad_params[b_off + i] = grad_params[b_off + i] + gt;
                for j in 0..r_in {
                    grad_params[h_off + i * r_in + j] = grad_params[h_off + i * r_in + j]
                        + gt * scratch.xs[k][j] * prep.sig_h[k][i * r_in + j];
                    scratch.g[k][j] = scratch.g[k][j] + prep.sp_h[k][i * r_in + j] * gt;
                }
            }
        }
        scratch.g[0][0]
    }

    /// CDF value c_i(x) in (0, 1).
    pub fn cdf(&self, dim: usize, x: T) -> T {
        let prep = self.prepare(dim);
        let mut scratch = Scratch::new(&self.layout);
        sigmoid(self.logit(dim, &prep, x, &mut scratch))
    }

    /// q_i(w) = c_i(w+½) − c_i(w−½), floored at ε_q.
    pub fn bin_probability(&self, dim: usize, w: T) -> T {
        let prep = self.prepare(dim);
        let mut scratch = Scratch::new(&self.layout);
        let half = T::from_f64(0.5);
        let lp = self.logit(dim, &prep, w + half, &mut scratch);
        let lm = self.logit(dim, &prep, w - half, &mut scratch);
        stable_bin_prob(lp, lm).max(T::from_f64(EPS_Q))
    }
}

/// σ(l₊) − σ(l₋), evaluated on whichever tail keeps the subtraction
/// well-conditioned.
fn stable_bin_prob<T: Scalar>(lp: T, lm: T) -> T {
    if lp + lm > T::zero() {
        sigmoid(-lm) - sigmoid(-lp)
    } else {
        sigmoid(lp) - sigmoid(lm)
    }
}

/// Gradients produced by [`rate_loss`].
#[derive(Debug, Clone)]
pub struct RateGrads<T> {
    /// d(bits)/dŴ per member tensor, unscaled.
    pub latents: Vec<Vec<T>>,
    /// d(bits)/d(density params) per latent dimension, unscaled.
    pub density: Vec<Vec<T>>,
}

/// Total self-information in bits of one group's latents under the density.
///
/// With `noise` present (training) each surrogate is smoothed as Ŵ+n; the
/// noise matrices must match the member tensors elementwise and should be
/// freshly drawn from U(−½,½) every step. Without noise (evaluation) the
/// rounded view is scored instead. Floored bins contribute ε_q bits with
/// zero gradient.
pub fn rate_loss<T: Scalar>(
    latents: &[&LatentTensor<T>],
    density: &FactorizedDensity<T>,
    noise: Option<&[Vec<T>]>,
    want_grads: bool,
) -> Result<(T, Option<RateGrads<T>>)> {
    let l = density.l;
    let half = T::from_f64(0.5);
    let eps_q = T::from_f64(EPS_Q);
    let ln2 = T::from_f64(std::f64::consts::LN_2);
    if let Some(n) = noise {
        if n.len() != latents.len() {
            return Err(Error::Config("one noise matrix per member tensor required".into()));
        }
    }
    let prepared: Vec<Prepared<T>> = (0..l).map(|i| density.prepare(i)).collect();
    let mut scratch_p = Scratch::new(&density.layout);
    let mut scratch_m = Scratch::new(&density.layout);
    let mut grads = want_grads.then(|| RateGrads {
        latents: latents.iter().map(|t| vec![T::zero(); t.surrogate.len()]).collect(),
        density: density.params.iter().map(|p| vec![T::zero(); p.len()]).collect(),
    });
    let mut bits = T::zero();
    for (ti, latent) in latents.iter().enumerate() {
        if latent.l != l {
            return Err(Error::Config(format!(
                "latent with l={} scored by density with l={l}",
                latent.l
            )));
        }
        for idx in 0..latent.surrogate.len() {
            let dim = idx % l;
            let x = match noise {
                Some(n) => latent.surrogate[idx] + n[ti][idx],
                None => latent.surrogate[idx].round(),
            };
            if !x.is_finite() {
                return Err(Error::NonFinite(format!("latent {ti} element {idx} in rate term")));
            }
            let lp = density.logit(dim, &prepared[dim], x + half, &mut scratch_p);
            let lm = density.logit(dim, &prepared[dim], x - half, &mut scratch_m);
            let q_raw = stable_bin_prob(lp, lm);
            let q = q_raw.max(eps_q);
            bits = bits - q.ln() / ln2;
            if let Some(g) = grads.as_mut() {
                if q_raw > eps_q {
                    // d(−log₂ q)/dq = −1/(q ln 2)
                    let dq = -(T::one() / (q * ln2));
                    let sp = sigmoid(lp);
                    let sm = sigmoid(lm);
                    let delta_p = dq * sp * (T::one() - sp);
                    let delta_m = -(dq * sm * (T::one() - sm));
                    let dxp = density.logit_backward(
                        &prepared[dim],
                        &mut scratch_p,
                        delta_p,
                        &mut g.density[dim],
                    );
                    let dxm = density.logit_backward(
                        &prepared[dim],
                        &mut scratch_m,
                        delta_m,
                        &mut g.density[dim],
                    );
                    g.latents[ti][idx] = dxp + dxm;
                }
            }
        }
    }
    if !bits.is_finite() {
        return Err(Error::NonFinite("rate loss".into()));
    }
    Ok((bits, grads))
}

/// One maximum-likelihood step of the density parameters.
pub fn fit_step<T: Scalar>(
    density: &mut FactorizedDensity<T>,
    grads: &RateGrads<T>,
    adam: &mut AdamState<T>,
) -> Result<()> {
    adam.step(
        density.params.iter_mut().map(|p| p.as_mut_slice()),
        grads.density.iter().map(|g| g.as_slice()),
        |i| format!("density[dim {i}]"),
    )
}

/// Integer frequency table for one latent dimension. The last entry is the
/// tail/escape symbol for out-of-support values.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DimPmf {
    pub s_min: i32,
    pub s_max: i32,
    pub freqs: Vec<u16>,
}

impl DimPmf {
    pub fn support_len(&self) -> usize {
        (self.s_max - self.s_min + 1) as usize
    }

    /// Symbol index for a latent value, or the tail index if out of support.
    pub fn symbol_index(&self, value: i32) -> usize {
        if value < self.s_min || value > self.s_max {
            self.freqs.len() - 1
        } else {
            (value - self.s_min) as usize
        }
    }

    pub fn tail_index(&self) -> usize {
        self.freqs.len() - 1
    }
}

/// Frequency tables for every latent dimension of one group.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PmfTable {
    pub dims: Vec<DimPmf>,
}

/// Round probabilities to integer frequencies summing exactly to `total`,
/// with every entry at least 1. The rounding residual lands on the most
/// probable symbol.
pub fn quantize_pmf(probs: &[f64], total: u32) -> Vec<u32> {
    assert!(!probs.is_empty());
    assert!(probs.len() as u32 <= total, "more symbols than frequency budget");
    let mut freqs: Vec<u32> =
        probs.iter().map(|p| ((p * total as f64).round() as i64).max(1) as u32).collect();
    let mut diff = total as i64 - freqs.iter().map(|&f| f as i64).sum::<i64>();
    // first max index, deterministic under ties
    let argmax = |fs: &[u32]| {
        let mut best = 0;
        for (i, &f) in fs.iter().enumerate() {
            if f > fs[best] {
                best = i;
            }
        }
        best
    };
    if diff >= 0 {
        let i = argmax(&freqs);
        freqs[i] += diff as u32;
    } else {
        // shave the largest entries, never below 1
        while diff < 0 {
            let i = argmax(&freqs);
            let take = (freqs[i] as i64 - 1).min(-diff);
            debug_assert!(take > 0, "cannot renormalize pmf");
            freqs[i] -= take as u32;
            diff += take;
        }
    }
    debug_assert_eq!(freqs.iter().map(|&f| f as i64).sum::<i64>(), total as i64);
    freqs
}

/// Freeze the density into frequency tables covering the observed symbols.
/// Support per dimension is [min−1, max+1] plus the tail symbol.
pub fn build_pmf_table<T: Scalar>(
    density: &FactorizedDensity<T>,
    observed: &[(i32, i32)],
) -> Result<PmfTable> {
    if observed.len() != density.l {
        return Err(Error::Config(format!(
            "observed ranges for {} dims, density has {}",
            observed.len(),
            density.l
        )));
    }
    let mut dims = Vec::with_capacity(density.l);
    for (i, &(lo, hi)) in observed.iter().enumerate() {
        if lo > hi {
            return Err(Error::Codec(format!("empty support for dimension {i}")));
        }
        let s_min = lo - 1;
        let s_max = hi + 1;
        let count = (s_max - s_min + 1) as usize;
        let mut probs = Vec::with_capacity(count + 1);
        let mut covered = 0.0f64;
        for k in s_min..=s_max {
            let q = density.bin_probability(i, T::from_f64(k as f64)).as_f64();
            covered += q;
            probs.push(q);
        }
        // leftover mass goes to the tail symbol
        probs.push((1.0 - covered).max(EPS_Q));
        let freqs = quantize_pmf(&probs, PMF_TOTAL);
        if freqs.iter().any(|&f| f > u16::MAX as u32) {
            // possible only for a single-symbol support; tail guarantees >= 2 entries
            return Err(Error::Codec(format!("dimension {i}: frequency overflows u16")));
        }
        dims.push(DimPmf {
            s_min,
            s_max,
            freqs: freqs.into_iter().map(|f| f as u16).collect(),
        });
    }
    Ok(PmfTable { dims })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::reparam::WeightShape;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn test_density(l: usize, seed: u64) -> FactorizedDensity<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        FactorizedDensity::new(l, &mut rng)
    }

    #[test]
    fn cdf_is_monotone_and_saturates() {
        let d = test_density(2, 5);
        for dim in 0..2 {
            let mut prev = -1.0;
            let mut x = -60.0;
            while x <= 60.0 {
                let c = d.cdf(dim, x);
                assert!(c >= prev - 1e-12, "cdf decreased at {x}");
                assert!((0.0..=1.0).contains(&c));
                prev = c;
                x += 0.25;
            }
            assert!(d.cdf(dim, -1e4) < 1e-6);
            assert!(d.cdf(dim, 1e4) > 1.0 - 1e-6);
        }
    }

    #[test]
    fn bin_probabilities_sum_to_one() {
        let d = test_density(3, 9);
        for dim in 0..3 {
            let mut total = 0.0;
            for k in -200i32..=200 {
                total += d.bin_probability(dim, k as f64);
            }
            assert!((total - 1.0).abs() < 1e-3, "sum {total}");
        }
    }

    #[test]
    fn extreme_values_hit_the_floor() {
        let d = test_density(1, 2);
        assert_eq!(d.bin_probability(0, 1e6), EPS_Q);
        assert_eq!(d.bin_probability(0, -1e6), EPS_Q);
    }

    #[test]
    fn symmetric_density_peaks_at_zero() {
        // zero biases and gates give c(x) = σ(k·x), symmetric around 0
        let mut d = test_density(1, 0);
        for p in &mut d.params[0] {
            *p = 0.0;
        }
        // restore positive-ish weights: softplus(0) = ln 2 per entry
        let q0 = d.bin_probability(0, 0.0);
        for k in 1..6 {
            assert!(q0 > d.bin_probability(0, k as f64));
            assert!(q0 > d.bin_probability(0, -(k as f64)));
        }
    }

    #[test]
    fn rate_gradient_matches_finite_differences_with_frozen_noise() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let d = test_density(4, 33);
        let shape = WeightShape::Conv { c_out: 2, c_in: 2, k: 2 };
        let surrogate: Vec<f64> = (0..16).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let latent = LatentTensor::new(shape, surrogate.clone());
        let noise: Vec<Vec<f64>> =
            vec![(0..16).map(|_| rng.gen_range(-0.5..0.5)).collect()];
        let (_, grads) = rate_loss(&[&latent], &d, Some(&noise), true).unwrap();
        let g = grads.unwrap();
        let h = 1e-6;
        for i in 0..16 {
            let mut plus = surrogate.clone();
            plus[i] += h;
            let mut minus = surrogate.clone();
            minus[i] -= h;
            let lp = LatentTensor::new(shape, plus);
            let lm = LatentTensor::new(shape, minus);
            let (bp, _) = rate_loss(&[&lp], &d, Some(&noise), false).unwrap();
            let (bm, _) = rate_loss(&[&lm], &d, Some(&noise), false).unwrap();
            let fd = (bp - bm) / (2.0 * h);
            let rel = (g.latents[0][i] - fd).abs() / fd.abs().max(1e-9);
            assert!(rel < 1e-3, "elem {i}: analytic {} vs fd {fd}", g.latents[0][i]);
        }
    }

    #[test]
    fn density_param_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(123);
        let mut d = test_density(1, 44);
        let shape = WeightShape::Dense { c_out: 3, c_in: 2 };
        let latent =
            LatentTensor::new(shape, (0..6).map(|_| rng.gen_range(-1.5..1.5)).collect());
        let noise: Vec<Vec<f64>> = vec![(0..6).map(|_| rng.gen_range(-0.5..0.5)).collect()];
        let (_, grads) = rate_loss(&[&latent], &d, Some(&noise), true).unwrap();
        let g = grads.unwrap();
        let h = 1e-6;
        for pi in 0..d.params[0].len() {
            let orig = d.params[0][pi];
            d.params[0][pi] = orig + h;
            let (bp, _) = rate_loss(&[&latent], &d, Some(&noise), false).unwrap();
            d.params[0][pi] = orig - h;
            let (bm, _) = rate_loss(&[&latent], &d, Some(&noise), false).unwrap();
            d.params[0][pi] = orig;
            let fd = (bp - bm) / (2.0 * h);
            let rel = (g.density[0][pi] - fd).abs() / fd.abs().max(1e-7);
            assert!(rel < 1e-3, "param {pi}: analytic {} vs fd {fd}", g.density[0][pi]);
        }
    }

    #[test]
    fn fitting_constant_data_drives_bits_to_floor() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut d = FactorizedDensity::<f64>::new(1, &mut rng);
        let shape = WeightShape::Dense { c_out: 16, c_in: 8 };
        let latent = LatentTensor::new(shape, vec![0.0; 128]);
        let mut adam = AdamState::new(1e-2, &d.param_sizes());
        for _ in 0..800 {
            let noise: Vec<Vec<f64>> =
                vec![(0..128).map(|_| rng.gen_range(-0.5..0.5)).collect()];
            let (_, grads) = rate_loss(&[&latent], &d, Some(&noise), true).unwrap();
            fit_step(&mut d, &grads.unwrap(), &mut adam).unwrap();
        }
        let (bits, _) = rate_loss(&[&latent], &d, None, false).unwrap();
        let per_elem = bits / 128.0;
        assert!(per_elem < 0.05, "bits/element {per_elem}");
    }

    #[test]
    fn quantize_pmf_exact_powers() {
        assert_eq!(quantize_pmf(&[0.75, 0.25], PMF_TOTAL), vec![49152, 16384]);
    }

    #[test]
    fn quantize_pmf_floors_to_one() {
        let f = quantize_pmf(&[1.0 - 2e-9, 1e-9, 1e-9], PMF_TOTAL);
        assert_eq!(f[1], 1);
        assert_eq!(f[2], 1);
        assert_eq!(f.iter().sum::<u32>(), PMF_TOTAL);
    }

    #[test]
    fn pmf_table_sums_to_total_and_covers_support() {
        let d = test_density(2, 21);
        let table = build_pmf_table(&d, &[(-3, 4), (0, 0)]).unwrap();
        assert_eq!(table.dims.len(), 2);
        for dim in &table.dims {
            let sum: u32 = dim.freqs.iter().map(|&f| f as u32).sum();
            assert_eq!(sum, PMF_TOTAL);
            assert_eq!(dim.freqs.len(), dim.support_len() + 1);
            assert!(dim.freqs.iter().all(|&f| f >= 1));
        }
        assert_eq!(table.dims[0].s_min, -4);
        assert_eq!(table.dims[0].s_max, 5);
        assert_eq!(table.dims[0].symbol_index(-4), 0);
        assert_eq!(table.dims[0].symbol_index(99), table.dims[0].tail_index());
    }

    #[test]
    fn empty_support_is_rejected() {
        let d = test_density(1, 3);
        assert!(build_pmf_table(&d, &[(2, 1)]).is_err());
    }
}
