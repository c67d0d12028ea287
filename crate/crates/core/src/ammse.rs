//! Closed-form MMSE / AMMSE quantities and the Monte-Carlo AMMSE oracle.
//!
//! For user `k` with true channel `h`, the MMSE receiver yields
//! `ε_k = 1 − R_k / T_k` where `R_k = |hᴴp_k|²` and
//! `T_k = Σ_i |hᴴp_i|² + σ²_n`. The transmitter only knows `h ~ CN(ĥ_k, σ²_ek I)`
//! and works with the average `ε̄_k = 1 − E{R_k / T_k}`, approximated here to
//! second order around `(R̄_k, T̄_k)`:
//!
//! ```text
//! ε̄_k^(2) = 1 − R̄/T̄ + σ²_e a_k / T̄² − σ²_e b_k R̄ / T̄³ = 1 − α_k R̄/T̄
//! ```

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::channel::{chunk_lengths, sample_chunk, ChannelInstance};
use crate::error::{Error, Result};
use crate::linalg::{
    check_hermitian, min_eigenvalue, norm_sqr, outer, quad_form, symmetrize, trace_product, CMatrix, CVector,
};

/// Asymmetry beyond which Hermitian inputs are rejected rather than repaired.
const HERMITIAN_REJECT_TOL: f64 = 1e-6;

/// The `K` beamforming vectors `p_k`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Precoder {
    pub vectors: Vec<CVector>,
}

impl Precoder {
    pub fn new(vectors: Vec<CVector>) -> Result<Self> {
        if vectors.is_empty() {
            return Err(Error::InvalidArgument("precoder has no users".into()));
        }
        let n = vectors[0].len();
        if let Some(bad) = vectors.iter().find(|p| p.len() != n) {
            return Err(Error::Dimension {
                expected: n,
                actual: bad.len(),
            });
        }
        Ok(Self { vectors })
    }

    pub fn num_users(&self) -> usize {
        self.vectors.len()
    }

    pub fn num_antennas(&self) -> usize {
        self.vectors[0].len()
    }

    /// `tr(PᴴP) = Σ_k ‖p_k‖²`.
    pub fn total_power(&self) -> f64 {
        self.vectors.iter().map(norm_sqr).sum()
    }

    /// `{c p_k}`.
    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            vectors: self.vectors.iter().map(|p| p.scale(factor)).collect(),
        }
    }

    /// Multiplies every `p_k` by the same unit-modulus phase.
    pub fn rotated(&self, phase: f64) -> Self {
        let rot = Complex64::from_polar(1.0, phase);
        Self {
            vectors: self.vectors.iter().map(|p| p * rot).collect(),
        }
    }

    pub fn gram(&self) -> GramSet {
        GramSet::from_precoder(self)
    }

    fn check_against(&self, instance: &ChannelInstance) -> Result<()> {
        if self.num_users() != instance.num_users() {
            return Err(Error::Dimension {
                expected: instance.num_users(),
                actual: self.num_users(),
            });
        }
        if self.num_antennas() != instance.num_antennas() {
            return Err(Error::Dimension {
                expected: instance.num_antennas(),
                actual: self.num_antennas(),
            });
        }
        Ok(())
    }
}

/// Per-user Gram matrices `Q_k` and their sum `Q`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GramSet {
    pub per_user: Vec<CMatrix>,
    pub sum: CMatrix,
}

impl GramSet {
    pub fn from_precoder(precoder: &Precoder) -> Self {
        let per_user: Vec<CMatrix> = precoder.vectors.iter().map(outer).collect();
        Self::from_parts(per_user)
    }

    /// Builds a Gram set from arbitrary (possibly higher-rank) matrices,
    /// checking they are Hermitian and PSD to within `tol_psd`.
    pub fn from_matrices(matrices: Vec<CMatrix>, tol_psd: f64) -> Result<Self> {
        if matrices.is_empty() {
            return Err(Error::InvalidArgument("empty Gram set".into()));
        }
        let mut per_user = Vec::with_capacity(matrices.len());
        for m in matrices {
            check_hermitian(&m, HERMITIAN_REJECT_TOL)?;
            let m = symmetrize(&m);
            let scale = m.norm().max(1.0);
            let lo = min_eigenvalue(&m);
            if lo < -tol_psd * scale {
                return Err(Error::Numerical(format!("Gram matrix has eigenvalue {lo:.3e}")));
            }
            per_user.push(m);
        }
        Ok(Self::from_parts(per_user))
    }

    fn from_parts(per_user: Vec<CMatrix>) -> Self {
        let n = per_user[0].nrows();
        let sum = per_user.iter().fold(CMatrix::zeros(n, n), |acc, q| acc + q);
        Self { per_user, sum }
    }

    pub fn num_users(&self) -> usize {
        self.per_user.len()
    }

    /// `Σ_k tr(Q_k)`.
    pub fn total_power(&self) -> f64 {
        self.sum.trace().re
    }
}

/// Inputs of the Gaussian quartic moment `E{(xᴴAx)(xᴴBx)}` with
/// `x ~ CN(mean, cov_scale · I)`.
#[derive(Debug, Clone)]
pub struct MomentInputs {
    pub mean: CVector,
    pub cov_scale: f64,
    pub a: CMatrix,
    pub b: CMatrix,
}

/// All intermediate scalars of the second-order AMMSE of one user.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AmmseBreakdown {
    /// `R̄_k = E{R_k}`.
    pub r_bar: f64,
    /// `T̄_k = E{T_k}`.
    pub t_bar: f64,
    pub a: f64,
    pub b: f64,
    /// Absent when `R̄_k = 0`.
    pub alpha: Option<f64>,
    /// `1 − R̄_k / T̄_k`.
    pub value_order1: f64,
    pub value_order2: f64,
}

/// Sample mean and its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McEstimate {
    pub mean: f64,
    pub std_error: f64,
}

fn check_user(k: usize, k_max: usize) -> Result<()> {
    if k >= k_max {
        return Err(Error::InvalidArgument(format!(
            "user index {k} out of range (K = {k_max})"
        )));
    }
    Ok(())
}

fn check_len(h: &CVector, precoder: &Precoder) -> Result<()> {
    if h.len() != precoder.num_antennas() {
        return Err(Error::Dimension {
            expected: precoder.num_antennas(),
            actual: h.len(),
        });
    }
    Ok(())
}

/// `(R_k, T_k)` for a known channel.
fn signal_and_total(h: &CVector, precoder: &Precoder, k: usize, noise_var: f64) -> (f64, f64) {
    let mut total = noise_var;
    let mut signal = 0.0;
    for (i, p) in precoder.vectors.iter().enumerate() {
        let g = h.dotc(p).norm_sqr();
        total += g;
        if i == k {
            signal = g;
        }
    }
    (signal, total)
}

/// `ε_k = 1 − R_k / T_k` for the true channel `h` of user `k`.
pub fn exact_mmse(h: &CVector, precoder: &Precoder, k: usize, noise_var: f64) -> Result<f64> {
    check_user(k, precoder.num_users())?;
    check_len(h, precoder)?;
    if !(noise_var > 0.0) {
        return Err(Error::InvalidArgument("noise variance must be positive".into()));
    }
    let (r, t) = signal_and_total(h, precoder, k, noise_var);
    Ok(1.0 - r / t)
}

/// `g_k = p_kᴴ h T_k⁻¹`.
pub fn mmse_receiver_gain(h: &CVector, precoder: &Precoder, k: usize, noise_var: f64) -> Result<Complex64> {
    check_user(k, precoder.num_users())?;
    check_len(h, precoder)?;
    let (_, t) = signal_and_total(h, precoder, k, noise_var);
    Ok(precoder.vectors[k].dotc(h) / t)
}

/// MSE of user `k` with an arbitrary scalar receiver `g`:
/// `|g|² T_k − 2 Re(g hᴴ p_k) + 1`.
pub fn mse_with_receiver(h: &CVector, precoder: &Precoder, k: usize, noise_var: f64, g: Complex64) -> Result<f64> {
    check_user(k, precoder.num_users())?;
    check_len(h, precoder)?;
    let (_, t) = signal_and_total(h, precoder, k, noise_var);
    let eff = h.dotc(&precoder.vectors[k]);
    Ok(g.norm_sqr() * t - 2.0 * (g * eff).re + 1.0)
}

/// `M_k = ĥ_k ĥ_kᴴ + σ²_ek I`, the second moment of user `k`'s channel.
pub fn channel_second_moment(instance: &ChannelInstance, k: usize) -> CMatrix {
    let n = instance.num_antennas();
    outer(&instance.estimates[k]) + CMatrix::identity(n, n).scale(instance.error_vars[k])
}

/// `R̄_k = tr(Q_k M_k)`.
pub fn mean_signal(instance: &ChannelInstance, gram: &GramSet, k: usize) -> f64 {
    trace_product(&gram.per_user[k], &channel_second_moment(instance, k)).re
}

/// `T̄_k = tr(Q M_k) + σ²_n`.
pub fn mean_total(instance: &ChannelInstance, gram: &GramSet, k: usize) -> f64 {
    trace_product(&gram.sum, &channel_second_moment(instance, k)).re + instance.noise_var
}

/// Receiver the transmitter would compute from its own CSI:
/// `ĝ_k = p_kᴴ ĥ_k T̄_k⁻¹`.
pub fn ignorant_receiver_gain(instance: &ChannelInstance, precoder: &Precoder, k: usize) -> Result<Complex64> {
    precoder.check_against(instance)?;
    check_user(k, instance.num_users())?;
    let t_bar = mean_total(instance, &precoder.gram(), k);
    Ok(precoder.vectors[k].dotc(&instance.estimates[k]) / t_bar)
}

/// `ε̂_k = 1 − |ĥ_kᴴ p_k|² / T̄_k`, an upper bound on the true AMMSE.
pub fn ignorant_ammse(instance: &ChannelInstance, precoder: &Precoder, k: usize) -> Result<f64> {
    precoder.check_against(instance)?;
    check_user(k, instance.num_users())?;
    let t_bar = mean_total(instance, &precoder.gram(), k);
    let eff = instance.estimates[k].dotc(&precoder.vectors[k]).norm_sqr();
    Ok(1.0 - eff / t_bar)
}

fn prepare_hermitian(m: &CMatrix, n: usize) -> Result<CMatrix> {
    if m.nrows() != n || m.ncols() != n {
        return Err(Error::Dimension {
            expected: n,
            actual: m.nrows(),
        });
    }
    check_hermitian(m, HERMITIAN_REJECT_TOL)?;
    Ok(symmetrize(m))
}

/// The complex-valued assembly of the quartic moment; its imaginary part is
/// pure rounding for Hermitian inputs.
pub fn quartic_moment_complex(inputs: &MomentInputs) -> Result<Complex64> {
    let n = inputs.mean.len();
    if !(inputs.cov_scale >= 0.0) {
        return Err(Error::InvalidArgument("covariance scale must be nonnegative".into()));
    }
    let a = prepare_hermitian(&inputs.a, n)?;
    let b = prepare_hermitian(&inputs.b, n)?;
    let s = inputs.cov_scale;
    let x = &inputs.mean;

    // C = s I, so ACB = s AB and tr(ACBC) = s² tr(AB).
    let ab = &a * &b;
    let ba = &b * &a;
    let cross = (x.dotc(&(&ab * x)) + x.dotc(&(&ba * x))) * s;
    let trace_term = trace_product(&a, &b) * (s * s);
    let first = a.trace() * s + x.dotc(&(&a * x));
    let second = b.trace() * s + x.dotc(&(&b * x));
    Ok(cross + trace_term + first * second)
}

/// `E{(xᴴAx)(xᴴBx)}` for `x ~ CN(x̂, sI)`:
/// `x̂ᴴACBx̂ + x̂ᴴBCAx̂ + tr(ACBC) + (tr(AC) + x̂ᴴAx̂)(tr(BC) + x̂ᴴBx̂)`.
pub fn quartic_moment(inputs: &MomentInputs) -> Result<f64> {
    let z = quartic_moment_complex(inputs)?;
    if z.im.abs() > 1e-10 * (1.0 + z.re.abs()) {
        log::warn!("quartic moment has imaginary residue {:.3e}", z.im);
    }
    Ok(z.re)
}

/// `E{R_k T_k}` in closed form.
pub fn expected_rt(instance: &ChannelInstance, gram: &GramSet, k: usize) -> f64 {
    let var = instance.error_vars[k];
    let h = &instance.estimates[k];
    let qk = &gram.per_user[k];
    let q = &gram.sum;
    let cross = h.dotc(&((qk * q) * h)).re + h.dotc(&((q * qk) * h)).re;
    var * cross + var * var * trace_product(qk, q).re + mean_signal(instance, gram, k) * mean_total(instance, gram, k)
}

/// `E{T_k²}` in closed form.
pub fn expected_t2(instance: &ChannelInstance, gram: &GramSet, k: usize) -> f64 {
    let var = instance.error_vars[k];
    let h = &instance.estimates[k];
    let q2 = &gram.sum * &gram.sum;
    let t_bar = mean_total(instance, gram, k);
    2.0 * var * quad_form(h, &q2) + var * var * q2.trace().re + t_bar * t_bar
}

fn moment_inputs(instance: &ChannelInstance, a: &CMatrix, b: &CMatrix, k: usize) -> MomentInputs {
    MomentInputs {
        mean: instance.estimates[k].clone(),
        cov_scale: instance.error_vars[k],
        a: a.clone(),
        b: b.clone(),
    }
}

/// `E{R_k T_k}` through the generic quartic moment:
/// `E{R (hᴴQh)} + σ²_n R̄`.
pub fn expected_rt_via_moment(instance: &ChannelInstance, gram: &GramSet, k: usize) -> Result<f64> {
    let rq = quartic_moment(&moment_inputs(instance, &gram.per_user[k], &gram.sum, k))?;
    Ok(rq + instance.noise_var * mean_signal(instance, gram, k))
}

/// `E{T_k²}` through the generic quartic moment:
/// `E{(hᴴQh)²} + 2σ²_n E{hᴴQh} + σ⁴_n`.
pub fn expected_t2_via_moment(instance: &ChannelInstance, gram: &GramSet, k: usize) -> Result<f64> {
    let qq = quartic_moment(&moment_inputs(instance, &gram.sum, &gram.sum, k))?;
    let mean_q = mean_total(instance, gram, k) - instance.noise_var;
    let n = instance.noise_var;
    Ok(qq + 2.0 * n * mean_q + n * n)
}

/// Second-order AMMSE from the covariance form
/// `1 − (R̄/T̄ − cov{R,T}/T̄² + R̄ var{T}/T̄³)`, moments taken via the
/// generic quartic moment.
pub fn order2_via_moments(instance: &ChannelInstance, gram: &GramSet, k: usize) -> Result<f64> {
    let r = mean_signal(instance, gram, k);
    let t = mean_total(instance, gram, k);
    let cov = expected_rt_via_moment(instance, gram, k)? - r * t;
    let var = expected_t2_via_moment(instance, gram, k)? - t * t;
    Ok(1.0 - (r / t - cov / (t * t) + r * var / (t * t * t)))
}

/// Second-order breakdown from (possibly relaxed) Gram matrices.
pub fn breakdown_from_gram(instance: &ChannelInstance, gram: &GramSet, k: usize) -> Result<AmmseBreakdown> {
    check_user(k, instance.num_users())?;
    if gram.num_users() != instance.num_users() {
        return Err(Error::Dimension {
            expected: instance.num_users(),
            actual: gram.num_users(),
        });
    }
    let var = instance.error_vars[k];
    let h = &instance.estimates[k];
    let qk = &gram.per_user[k];
    let q = &gram.sum;

    let r_bar = mean_signal(instance, gram, k);
    let t_bar = mean_total(instance, gram, k);
    let qkq = qk * q;
    let a = h.dotc(&(&qkq * h)).re + h.dotc(&((q * qk) * h)).re + var * qkq.trace().re;
    let q2 = q * q;
    let b = 2.0 * quad_form(h, &q2) + var * q2.trace().re;

    let value_order1 = 1.0 - r_bar / t_bar;
    let value_order2 = value_order1 + a * var / (t_bar * t_bar) - b * var * r_bar / (t_bar * t_bar * t_bar);
    let alpha = if var == 0.0 {
        Some(1.0)
    } else if r_bar > 0.0 {
        Some(1.0 - var / (t_bar * t_bar * r_bar) * (a * t_bar - b * r_bar))
    } else {
        None
    };
    Ok(AmmseBreakdown {
        r_bar,
        t_bar,
        a,
        b,
        alpha,
        value_order1,
        value_order2,
    })
}

pub fn ammse_breakdown(instance: &ChannelInstance, precoder: &Precoder, k: usize) -> Result<AmmseBreakdown> {
    precoder.check_against(instance)?;
    breakdown_from_gram(instance, &precoder.gram(), k)
}

/// Running mean / sum of squared deviations, merged in a fixed order.
#[derive(Debug, Clone, Copy, Default)]
struct Moments {
    n: f64,
    mean: f64,
    m2: f64,
}

impl Moments {
    fn push(&mut self, x: f64) {
        self.n += 1.0;
        let d = x - self.mean;
        self.mean += d / self.n;
        self.m2 += d * (x - self.mean);
    }

    fn merge(self, other: Moments) -> Moments {
        if self.n == 0.0 {
            return other;
        }
        if other.n == 0.0 {
            return self;
        }
        let n = self.n + other.n;
        let d = other.mean - self.mean;
        Moments {
            n,
            mean: self.mean + d * other.n / n,
            m2: self.m2 + other.m2 + d * d * self.n * other.n / n,
        }
    }

    fn estimate(&self) -> McEstimate {
        let var = if self.n > 1.0 { self.m2 / (self.n - 1.0) } else { 0.0 };
        McEstimate {
            mean: self.mean,
            std_error: (var.max(0.0) / self.n).sqrt(),
        }
    }
}

/// Runs `per_sample` on every draw and aggregates one estimate per user.
/// Chunk statistics are merged in chunk order so the result does not depend
/// on scheduling.
fn mc_per_user<F>(instance: &ChannelInstance, count: usize, seed: u64, per_sample: F) -> Result<Vec<McEstimate>>
where
    F: Fn(&[CVector], &mut [f64]) + Sync,
{
    if count < 2 {
        return Err(Error::InvalidArgument("Monte-Carlo count must be at least 2".into()));
    }
    let k = instance.num_users();
    let partials: Vec<Vec<Moments>> = chunk_lengths(count)
        .into_par_iter()
        .enumerate()
        .map(|(idx, len)| {
            let mut acc = vec![Moments::default(); k];
            let mut values = vec![0.0; k];
            for sample in sample_chunk(instance, seed, idx, len) {
                per_sample(&sample.channels, &mut values);
                for (m, &v) in acc.iter_mut().zip(&values) {
                    m.push(v);
                }
            }
            acc
        })
        .collect();
    let total = partials.into_iter().fold(vec![Moments::default(); k], |acc, part| {
        acc.into_iter().zip(part).map(|(a, b)| a.merge(b)).collect()
    });
    Ok(total.iter().map(Moments::estimate).collect())
}

/// Monte-Carlo AMMSE of every user from one shared set of channel draws.
pub fn mc_ammse_all(
    instance: &ChannelInstance,
    precoder: &Precoder,
    count: usize,
    seed: u64,
) -> Result<Vec<McEstimate>> {
    precoder.check_against(instance)?;
    let noise = instance.noise_var;
    mc_per_user(instance, count, seed, |channels, out| {
        for (k, h) in channels.iter().enumerate() {
            let (r, t) = signal_and_total(h, precoder, k, noise);
            out[k] = 1.0 - r / t;
        }
    })
}

/// Monte-Carlo estimate of `ε̄_k = 1 − E{R_k / T_k}` with perfect CSIR.
pub fn mc_ammse(
    instance: &ChannelInstance,
    precoder: &Precoder,
    k: usize,
    count: usize,
    seed: u64,
) -> Result<McEstimate> {
    check_user(k, instance.num_users())?;
    Ok(mc_ammse_all(instance, precoder, count, seed)?[k])
}

/// Monte-Carlo estimate of `E{(xᴴAx)(xᴴBx)}`, the brute-force counterpart of
/// [`quartic_moment`].
pub fn mc_quartic_moment(inputs: &MomentInputs, count: usize, seed: u64) -> Result<McEstimate> {
    let n = inputs.mean.len();
    let a = prepare_hermitian(&inputs.a, n)?;
    let b = prepare_hermitian(&inputs.b, n)?;
    if !(inputs.cov_scale >= 0.0) {
        return Err(Error::InvalidArgument("covariance scale must be nonnegative".into()));
    }
    // x ~ CN(x̂, σ²I) is the channel draw of a single user with estimate x̂.
    let carrier = ChannelInstance::new(vec![inputs.mean.clone()], vec![inputs.cov_scale], 1.0)?;
    let est = mc_per_user(&carrier, count, seed, |x, out| {
        out[0] = quad_form(&x[0], &a) * quad_form(&x[0], &b);
    })?;
    Ok(est[0])
}

/// Monte-Carlo average MSE when each user applies a fixed receiver instead
/// of its own MMSE receiver (e.g. receivers forwarded by the transmitter).
pub fn mc_mse_fixed_receivers(
    instance: &ChannelInstance,
    precoder: &Precoder,
    receivers: &[Complex64],
    count: usize,
    seed: u64,
) -> Result<Vec<McEstimate>> {
    precoder.check_against(instance)?;
    if receivers.len() != instance.num_users() {
        return Err(Error::Dimension {
            expected: instance.num_users(),
            actual: receivers.len(),
        });
    }
    let noise = instance.noise_var;
    mc_per_user(instance, count, seed, |channels, out| {
        for (k, h) in channels.iter().enumerate() {
            let (_, t) = signal_and_total(h, precoder, k, noise);
            let eff = h.dotc(&precoder.vectors[k]);
            let g = receivers[k];
            out[k] = g.norm_sqr() * t - 2.0 * (g * eff).re + 1.0;
        }
    })
}

/// `−log₂(ε̄)`: lower bound on the average rate in bits per channel use.
pub fn rate_lower_bound(ammse: f64) -> Result<f64> {
    if !(ammse > 0.0) || ammse > 1.0 + 1e-12 {
        return Err(Error::InvalidArgument(format!("AMMSE must lie in (0, 1], got {ammse}")));
    }
    Ok(-ammse.min(1.0).log2())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::c;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn cvec(v: &[(f64, f64)]) -> CVector {
        CVector::from_iterator(v.len(), v.iter().map(|&(r, i)| c(r, i)))
    }

    fn random_vec(n: usize, rng: &mut ChaCha8Rng) -> CVector {
        CVector::from_fn(n, |_, _| c(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
    }

    fn random_instance(n: usize, k: usize, err: f64, rng: &mut ChaCha8Rng) -> ChannelInstance {
        ChannelInstance::new((0..k).map(|_| random_vec(n, rng)).collect(), vec![err; k], 1.0).unwrap()
    }

    fn random_precoder(n: usize, k: usize, rng: &mut ChaCha8Rng) -> Precoder {
        Precoder::new((0..k).map(|_| random_vec(n, rng)).collect()).unwrap()
    }

    #[test]
    fn scalar_mmse_by_hand() {
        let h = cvec(&[(1.0, 0.0)]);
        let p = Precoder::new(vec![cvec(&[(1.0, 0.0)])]).unwrap();
        assert!((exact_mmse(&h, &p, 0, 1.0).unwrap() - 0.5).abs() < 1e-15);
        let g = mmse_receiver_gain(&h, &p, 0, 1.0).unwrap();
        assert!((g - c(0.5, 0.0)).norm() < 1e-15);
    }

    #[test]
    fn zero_precoder_gives_unit_mse() {
        let h = cvec(&[(0.3, 0.2), (1.0, -1.0)]);
        let p = Precoder::new(vec![CVector::zeros(2), cvec(&[(1.0, 0.0), (0.0, 1.0)])]).unwrap();
        assert_eq!(exact_mmse(&h, &p, 0, 1.0).unwrap(), 1.0);
    }

    #[test]
    fn mmse_matches_direct_evaluation() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let p = random_precoder(4, 3, &mut rng);
            let h = random_vec(4, &mut rng);
            for k in 0..3 {
                // direct: 1 - |hᴴp_k|² / (Σ|hᴴp_i|² + σ²)
                let mut denom = 0.7;
                for pi in &p.vectors {
                    let mut s = c(0.0, 0.0);
                    for m in 0..4 {
                        s += h[m].conj() * pi[m];
                    }
                    denom += s.norm_sqr();
                }
                let mut s = c(0.0, 0.0);
                for m in 0..4 {
                    s += h[m].conj() * p.vectors[k][m];
                }
                let direct = 1.0 - s.norm_sqr() / denom;
                assert!((exact_mmse(&h, &p, k, 0.7).unwrap() - direct).abs() < 1e-13);
            }
        }
    }

    #[test]
    fn receiver_gain_minimizes_mse() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let p = random_precoder(3, 2, &mut rng);
        let h = random_vec(3, &mut rng);
        let g = mmse_receiver_gain(&h, &p, 1, 0.5).unwrap();
        let best = mse_with_receiver(&h, &p, 1, 0.5, g).unwrap();
        assert!((best - exact_mmse(&h, &p, 1, 0.5).unwrap()).abs() < 1e-13);
        for d in [c(1e-3, 0.0), c(-1e-3, 0.0), c(0.0, 1e-3), c(0.0, -1e-3)] {
            assert!(mse_with_receiver(&h, &p, 1, 0.5, g + d).unwrap() > best);
        }
    }

    #[test]
    fn orthogonal_channel_gives_zero_gain() {
        let h = cvec(&[(1.0, 0.0), (0.0, 0.0)]);
        let p = Precoder::new(vec![cvec(&[(0.0, 0.0), (1.0, 0.0)]), cvec(&[(1.0, 0.0), (0.0, 0.0)])]).unwrap();
        assert_eq!(mmse_receiver_gain(&h, &p, 0, 1.0).unwrap(), c(0.0, 0.0));
    }

    #[test]
    fn common_phase_rotation_leaves_mmse_unchanged() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let p = random_precoder(4, 3, &mut rng);
        let h = random_vec(4, &mut rng);
        let rotated = p.rotated(1.234);
        for k in 0..3 {
            let a = exact_mmse(&h, &p, k, 1.0).unwrap();
            let b = exact_mmse(&h, &rotated, k, 1.0).unwrap();
            assert!((a - b).abs() < 1e-13);
        }
    }

    #[test]
    fn dimension_mismatch_is_rejected() {
        let p = Precoder::new(vec![cvec(&[(1.0, 0.0), (0.0, 0.0)])]).unwrap();
        let h = cvec(&[(1.0, 0.0)]);
        assert!(matches!(exact_mmse(&h, &p, 0, 1.0), Err(Error::Dimension { .. })));
        assert!(Precoder::new(vec![cvec(&[(1.0, 0.0)]), cvec(&[(1.0, 0.0), (0.0, 0.0)])]).is_err());
    }

    #[test]
    fn ignorant_equals_exact_without_error() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let inst = random_instance(4, 3, 0.0, &mut rng);
        let p = random_precoder(4, 3, &mut rng);
        for k in 0..3 {
            let exact = exact_mmse(&inst.estimates[k], &p, k, 1.0).unwrap();
            assert!((ignorant_ammse(&inst, &p, k).unwrap() - exact).abs() < 1e-13);
        }
    }

    #[test]
    fn ignorant_is_one_for_orthogonal_precoder() {
        let inst = ChannelInstance::new(
            vec![cvec(&[(1.0, 0.0), (0.0, 0.0)]), cvec(&[(0.0, 0.0), (1.0, 0.0)])],
            vec![0.1, 0.1],
            1.0,
        )
        .unwrap();
        let p = Precoder::new(vec![cvec(&[(0.0, 0.0), (1.0, 0.0)]), cvec(&[(0.0, 0.0), (1.0, 0.0)])]).unwrap();
        assert_eq!(ignorant_ammse(&inst, &p, 0).unwrap(), 1.0);
    }

    #[test]
    fn quartic_moment_deterministic_case() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let x = random_vec(3, &mut rng);
        let a = outer(&random_vec(3, &mut rng));
        let b = outer(&random_vec(3, &mut rng)) + outer(&random_vec(3, &mut rng));
        let got = quartic_moment(&MomentInputs {
            mean: x.clone(),
            cov_scale: 0.0,
            a: a.clone(),
            b: b.clone(),
        })
        .unwrap();
        let want = quad_form(&x, &a) * quad_form(&x, &b);
        assert!((got - want).abs() < 1e-12 * want.abs().max(1.0));
    }

    #[test]
    fn quartic_moment_zero_mean_identity() {
        for n in [1usize, 2, 4, 8] {
            let s = 0.3;
            let got = quartic_moment(&MomentInputs {
                mean: CVector::zeros(n),
                cov_scale: s,
                a: CMatrix::identity(n, n),
                b: CMatrix::identity(n, n),
            })
            .unwrap();
            let nf = n as f64;
            assert!((got - nf * (nf + 1.0) * s * s).abs() < 1e-12);
        }
    }

    #[test]
    fn quartic_moment_rejects_non_hermitian() {
        let mut a = CMatrix::identity(2, 2);
        a[(0, 1)] = c(0.0, 1.0);
        let r = quartic_moment(&MomentInputs {
            mean: CVector::zeros(2),
            cov_scale: 1.0,
            a,
            b: CMatrix::identity(2, 2),
        });
        assert!(matches!(r, Err(Error::NotHermitian(_))));
    }

    #[test]
    fn quartic_moment_imaginary_residue_is_negligible() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        for _ in 0..20 {
            let x = random_vec(4, &mut rng);
            let a = outer(&random_vec(4, &mut rng)) + outer(&random_vec(4, &mut rng));
            let b = outer(&random_vec(4, &mut rng));
            let z = quartic_moment_complex(&MomentInputs {
                mean: x,
                cov_scale: 0.4,
                a,
                b,
            })
            .unwrap();
            assert!(z.im.abs() < 1e-10 * z.re.abs().max(1.0));
        }
    }

    #[test]
    fn closed_form_moments_agree_with_quartic_route() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for trial in 0..25 {
            let inst = random_instance(4, 3, 0.02 * trial as f64, &mut rng);
            let gram = random_precoder(4, 3, &mut rng).gram();
            for k in 0..3 {
                let rt = expected_rt(&inst, &gram, k);
                let rt2 = expected_rt_via_moment(&inst, &gram, k).unwrap();
                assert!((rt - rt2).abs() <= 1e-8 * rt.abs());
                let t2 = expected_t2(&inst, &gram, k);
                let t22 = expected_t2_via_moment(&inst, &gram, k).unwrap();
                assert!((t2 - t22).abs() <= 1e-8 * t2.abs());
            }
        }
    }

    #[test]
    fn moments_collapse_without_error() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let inst = random_instance(3, 2, 0.0, &mut rng);
        let gram = random_precoder(3, 2, &mut rng).gram();
        for k in 0..2 {
            let r = mean_signal(&inst, &gram, k);
            let t = mean_total(&inst, &gram, k);
            assert!((expected_rt(&inst, &gram, k) - r * t).abs() < 1e-12 * r * t);
            assert!((expected_t2(&inst, &gram, k) - t * t).abs() < 1e-12 * t * t);
        }
    }

    #[test]
    fn scalar_instance_moments_by_hand() {
        // N = K = 1, ĥ = 1, p = 1, σ²_e = s, σ²_n = 1.
        // R = T - 1 = |h|², |h|² ~ noncentral with E|h|² = 1 + s,
        // E|h|⁴ = 1 + 4s + 2s².
        let s = 0.3;
        let inst = ChannelInstance::new(vec![cvec(&[(1.0, 0.0)])], vec![s], 1.0).unwrap();
        let gram = Precoder::new(vec![cvec(&[(1.0, 0.0)])]).unwrap().gram();
        let m2 = 1.0 + s;
        let m4 = 1.0 + 4.0 * s + 2.0 * s * s;
        assert!((expected_rt(&inst, &gram, 0) - (m4 + m2)).abs() < 1e-12);
        assert!((expected_t2(&inst, &gram, 0) - (m4 + 2.0 * m2 + 1.0)).abs() < 1e-12);
    }

    #[test]
    fn breakdown_without_error_is_first_order() {
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let inst = random_instance(4, 3, 0.0, &mut rng);
        let p = random_precoder(4, 3, &mut rng);
        for k in 0..3 {
            let bd = ammse_breakdown(&inst, &p, k).unwrap();
            assert_eq!(bd.alpha, Some(1.0));
            assert_eq!(bd.value_order1, bd.value_order2);
            let exact = exact_mmse(&inst.estimates[k], &p, k, 1.0).unwrap();
            assert!((bd.value_order2 - exact).abs() < 1e-13);
        }
    }

    #[test]
    fn breakdown_routes_and_alpha_are_consistent() {
        let mut rng = ChaCha8Rng::seed_from_u64(15);
        for _ in 0..20 {
            let inst = random_instance(4, 4, 0.1, &mut rng);
            let p = random_precoder(4, 4, &mut rng);
            let gram = p.gram();
            for k in 0..4 {
                let bd = ammse_breakdown(&inst, &p, k).unwrap();
                let via = order2_via_moments(&inst, &gram, k).unwrap();
                assert!((bd.value_order2 - via).abs() <= 1e-10 * bd.value_order2.abs().max(1e-3));
                let alpha = bd.alpha.unwrap();
                assert!((1.0 - alpha * bd.r_bar / bd.t_bar - bd.value_order2).abs() < 1e-12);
                assert!(bd.t_bar >= inst.noise_var && bd.t_bar >= bd.r_bar);

                let eff = inst.estimates[k].dotc(&p.vectors[k]).norm_sqr();
                let ign = 1.0 - (eff / bd.r_bar) * bd.r_bar / bd.t_bar;
                assert!((ign - ignorant_ammse(&inst, &p, k).unwrap()).abs() < 1e-13);
            }
        }
    }

    #[test]
    fn breakdown_flags_missing_alpha_for_silent_user() {
        let inst = ChannelInstance::new(
            vec![cvec(&[(1.0, 0.0), (0.0, 0.0)]), cvec(&[(0.0, 0.0), (1.0, 0.0)])],
            vec![0.1, 0.1],
            1.0,
        )
        .unwrap();
        let p = Precoder::new(vec![CVector::zeros(2), cvec(&[(0.0, 0.0), (1.0, 0.0)])]).unwrap();
        let bd = ammse_breakdown(&inst, &p, 0).unwrap();
        assert!(bd.alpha.is_none());
        assert!(bd.value_order2.is_finite());
        assert_eq!(bd.value_order1, 1.0);
    }

    #[test]
    fn mc_without_error_is_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(16);
        let inst = random_instance(3, 2, 0.0, &mut rng);
        let p = random_precoder(3, 2, &mut rng);
        let est = mc_ammse(&inst, &p, 1, 5000, 1).unwrap();
        assert_eq!(est.mean, exact_mmse(&inst.estimates[1], &p, 1, 1.0).unwrap());
        assert_eq!(est.std_error, 0.0);
    }

    #[test]
    fn mc_is_deterministic_and_rejects_tiny_counts() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let inst = random_instance(3, 2, 0.1, &mut rng);
        let p = random_precoder(3, 2, &mut rng);
        assert_eq!(
            mc_ammse_all(&inst, &p, 3000, 4).unwrap(),
            mc_ammse_all(&inst, &p, 3000, 4).unwrap()
        );
        assert!(mc_ammse(&inst, &p, 0, 1, 4).is_err());
    }

    #[test]
    fn forwarded_ignorant_receiver_averages_to_ignorant_ammse() {
        let mut rng = ChaCha8Rng::seed_from_u64(18);
        let inst = random_instance(4, 2, 0.2, &mut rng);
        let p = random_precoder(4, 2, &mut rng);
        let g: Vec<_> = (0..2).map(|k| ignorant_receiver_gain(&inst, &p, k).unwrap()).collect();
        let est = mc_mse_fixed_receivers(&inst, &p, &g, 200_000, 8).unwrap();
        for (k, e) in est.iter().enumerate() {
            let want = ignorant_ammse(&inst, &p, k).unwrap();
            assert!((e.mean - want).abs() < 3.0 * e.std_error, "{} vs {want}", e.mean);
        }
    }

    #[test]
    fn rate_bound_values() {
        assert_eq!(rate_lower_bound(0.5).unwrap(), 1.0);
        assert_eq!(rate_lower_bound(1.0).unwrap(), 0.0);
        assert_eq!(rate_lower_bound(0.25).unwrap(), 2.0);
        assert!(rate_lower_bound(0.0).is_err());
        assert!(rate_lower_bound(-0.1).is_err());
    }

    #[test]
    fn gram_from_matrices_rejects_indefinite() {
        let mut m = CMatrix::identity(2, 2);
        m[(1, 1)] = c(-0.5, 0.0);
        assert!(GramSet::from_matrices(vec![m], 1e-9).is_err());
        let ok = GramSet::from_matrices(vec![CMatrix::identity(2, 2), CMatrix::identity(2, 2)], 1e-9).unwrap();
        assert!((ok.total_power() - 4.0).abs() < 1e-15);
    }
}
