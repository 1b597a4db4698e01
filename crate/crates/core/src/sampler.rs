//! Metropolis estimation of the variational normal equations when exact
//! enumeration over the retained configurations is too large.
//!
//! The chain targets π(s) ∝ |ρ(s)|² with two self-inverse proposal moves
//! that preserve fermion parity by construction: (i) flip one bit of n̄ and
//! one bit of n̄′; (ii) flip one bit of m̄ together with one bit of n̄ or n̄′.
//! Moves that would exceed the tier bound are rejected outright. Estimators
//! are local (normalized by the evaluation), so all sampled sums carry a
//! 1/Σ|ρ|² normalization relative to the exact ones — which the regularized
//! velocity solve is insensitive to, up to its absolute floor.

use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

use crate::liouvillian::Generator;
use crate::space::{Config, SpaceIndex};
use crate::tdvp::{NormalEquations, VariationalAnsatz};
use crate::{Error, Result, C64};

/// Chain-quality summary.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChainDiagnostics {
    /// Accepted proposals / total proposals (after burn-in).
    pub acceptance_rate: f64,
    /// Lag-1 autocorrelation of the sampled weight series |ρ(s_t)|².
    pub autocorrelation: f64,
}

/// One Metropolis chain: the visited configurations in order, run-length
/// encoded (consecutive repeats share an entry).
#[derive(Debug, Clone, PartialEq)]
pub struct SampleSet {
    entries: Vec<(Config, u32)>,
    n_samples: usize,
    pub diagnostics: ChainDiagnostics,
    pub seed: u64,
}

impl SampleSet {
    pub fn n_samples(&self) -> usize {
        self.n_samples
    }

    /// Run-length encoded view of the chain.
    pub fn entries(&self) -> &[(Config, u32)] {
        &self.entries
    }

    /// The chain as a flat sequence.
    pub fn iter_expanded(&self) -> impl Iterator<Item = Config> + '_ {
        self.entries.iter().flat_map(|&(c, k)| std::iter::repeat(c).take(k as usize))
    }
}

fn push_rle(entries: &mut Vec<(Config, u32)>, cfg: Config) {
    if let Some(last) = entries.last_mut() {
        if last.0 == cfg {
            last.1 += 1;
            return;
        }
    }
    entries.push((cfg, 1));
}

/// Draws `n_samples` configurations from π(s) ∝ |ρ(s)|² after `n_burn`
/// warm-up steps. Deterministic for a given seed.
pub fn metropolis_sample<A: VariationalAnsatz>(
    ansatz: &A,
    space: &SpaceIndex,
    n_samples: usize,
    n_burn: usize,
    seed: u64,
) -> Result<SampleSet> {
    if n_samples == 0 {
        return Err(Error::Sampler("requested zero samples".into()));
    }
    let dims = space.dims();
    let n_s = dims.n_s as u32;
    let n_modes = dims.n_modes as u32;
    let n_e = 2 * n_modes;
    let mut rng = ChaCha20Rng::seed_from_u64(seed);

    // Starting point: system-diagonal zero-mode configs first (always
    // retained), then uniformly random retained configs.
    let mut start = None;
    let diag =
        (0..1u16 << n_s).map(|n| Config { n_ket: n, n_bra: n, m_minus: 0, m_plus: 0 });
    for cfg in diag {
        if ansatz.eval_at(space, cfg).norm_sqr() > 0.0 {
            start = Some(cfg);
            break;
        }
    }
    if start.is_none() {
        for _ in 0..400 {
            let cfg = space.config_at(rng.gen_range(0..space.len()));
            if ansatz.eval_at(space, cfg).norm_sqr() > 0.0 {
                start = Some(cfg);
                break;
            }
        }
    }
    let mut state = start.ok_or_else(|| {
        Error::Sampler("no configuration with nonzero weight found to start the chain".into())
    })?;
    let mut weight = ansatz.eval_at(space, state).norm_sqr();

    let tier_cap = space.tier_cap();
    let mut entries = Vec::new();
    let mut accepted = 0usize;
    let mut proposed = 0usize;

    // Streaming lag-1 autocorrelation accumulators over the weight series.
    let (mut w_sum, mut w_sq, mut w_cross, mut w_prev) = (0.0f64, 0.0f64, 0.0f64, f64::NAN);

    for step in 0..n_burn + n_samples {
        proposed += 1;
        let mut cand = state;
        if n_e == 0 || rng.gen_bool(0.5) {
            // (i): one ket bit and one bra bit.
            cand.n_ket ^= 1 << rng.gen_range(0..n_s);
            cand.n_bra ^= 1 << rng.gen_range(0..n_s);
        } else {
            // (ii): one mode bit and one system bit (either register).
            let e = rng.gen_range(0..n_e);
            if e < n_modes {
                cand.m_minus ^= 1 << e;
            } else {
                cand.m_plus ^= 1 << (e - n_modes);
            }
            if rng.gen_bool(0.5) {
                cand.n_ket ^= 1 << rng.gen_range(0..n_s);
            } else {
                cand.n_bra ^= 1 << rng.gen_range(0..n_s);
            }
        }
        // Tier overflow is rejected before any evaluation; parity is
        // preserved by the move set.
        let mut accept = false;
        if cand.tier() <= tier_cap {
            debug_assert!(space.passes_filter(cand), "proposal left the retained space");
            let w_new = ansatz.eval_at(space, cand).norm_sqr();
            if w_new > 0.0 {
                let ratio = w_new / weight;
                if ratio >= 1.0 || rng.gen::<f64>() < ratio {
                    state = cand;
                    weight = w_new;
                    accept = true;
                }
            }
        }
        if step >= n_burn {
            if accept {
                accepted += 1;
            }
            assert!(space.passes_filter(state), "sampled state violates the space filter");
            push_rle(&mut entries, state);
            w_sum += weight;
            w_sq += weight * weight;
            if !w_prev.is_nan() {
                w_cross += w_prev * weight;
            }
            w_prev = weight;
        }
    }
    let n = n_samples as f64;
    let mean = w_sum / n;
    let var = (w_sq / n - mean * mean).max(0.0);
    let autocorrelation = if var > 0.0 && n_samples > 1 {
        ((w_cross / (n - 1.0) - mean * mean) / var).clamp(-1.0, 1.0)
    } else {
        0.0
    };
    let denom = (proposed - n_burn).max(1) as f64;
    Ok(SampleSet {
        entries,
        n_samples,
        diagnostics: ChainDiagnostics { acceptance_rate: accepted as f64 / denom, autocorrelation },
        seed,
    })
}

/// Component-wise standard errors of the sampled sums, from batch means.
#[derive(Debug, Clone)]
pub struct MomentErrors {
    pub se_s: Array2<f64>,
    pub se_f: Array1<f64>,
    pub se_l_norm: f64,
    /// Batches that entered the error estimate.
    pub n_batches: usize,
}

/// Estimates the normal-equation sums from one or more chains with local
/// estimators O_k(s) = ∂ρ(s)/∂α_k / ρ(s) and ℓ(s) = (Lρ)(s)/ρ(s):
///
///   Ŝ_{kk′} = ⟨conj(O_k) O_{k′}⟩_π,  F̂_k = ⟨conj(O_k) ℓ⟩_π,  ⟨|ℓ|²⟩_π,
///
/// which estimate the exact sums divided by Σ_s |ρ(s)|². Standard errors
/// come from batch means over equal-length batches (each chain is cut into
/// equal batches; a remainder shorter than a batch is dropped, and the
/// quoted estimate is the mean of the batch means, so estimate and error
/// refer to the same data).
pub fn estimate_moments<A: VariationalAnsatz>(
    samples: &[SampleSet],
    ansatz: &A,
    gen: &Generator,
) -> Result<(NormalEquations, MomentErrors)> {
    if samples.is_empty() || samples.iter().all(|s| s.n_samples == 0) {
        return Err(Error::Sampler("empty sample set".into()));
    }
    let space = gen.space().as_ref();
    let n = ansatz.n_real();

    // Batch-mean accumulators.
    let mut sum_s = Array2::<C64>::zeros((n, n));
    let mut sum_sq_s_re = Array2::<f64>::zeros((n, n));
    let mut sum_sq_s_im = Array2::<f64>::zeros((n, n));
    let mut sum_f = Array1::<C64>::zeros(n);
    let mut sum_sq_f_re = Array1::<f64>::zeros(n);
    let mut sum_sq_f_im = Array1::<f64>::zeros(n);
    let (mut sum_l, mut sum_sq_l) = (0.0f64, 0.0f64);
    let mut n_batches = 0usize;

    let mut g_row = vec![C64::new(0.0, 0.0); n];
    for set in samples {
        if set.n_samples == 0 {
            continue;
        }
        let n_b = batches_for(set.n_samples);
        let batch_len = set.n_samples / n_b;
        let mut chain = set.iter_expanded();
        for _ in 0..n_b {
            // One batch: rows of O stacked, ℓ alongside.
            let mut o_rows = Array2::<C64>::zeros((batch_len, n));
            let mut ell = Array1::<C64>::zeros(batch_len);
            for row in 0..batch_len {
                let cfg = chain.next().expect("batch within chain length");
                let v = ansatz.grad_into(space, cfg, &mut g_row);
                if v.norm_sqr() == 0.0 {
                    return Err(Error::Sampler(
                        "zero evaluation inside the sample set".into(),
                    ));
                }
                let inv = C64::new(1.0, 0.0) / v;
                for k in 0..n {
                    o_rows[(row, k)] = g_row[k] * inv;
                }
                ell[row] = gen.row_apply(cfg, |c| ansatz.eval_at(space, c)) * inv;
            }
            let scale = 1.0 / batch_len as f64;
            let o_conj = o_rows.mapv(|z| z.conj());
            let s_b = o_conj.t().dot(&o_rows) * C64::new(scale, 0.0);
            let f_b = o_conj.t().dot(&ell) * C64::new(scale, 0.0);
            let l_b = ell.iter().map(|z| z.norm_sqr()).sum::<f64>() * scale;
            for ((acc, sq_re), (sq_im, v)) in sum_s
                .iter_mut()
                .zip(sum_sq_s_re.iter_mut())
                .zip(sum_sq_s_im.iter_mut().zip(s_b.iter()))
            {
                *acc += v;
                *sq_re += v.re * v.re;
                *sq_im += v.im * v.im;
            }
            for ((acc, sq_re), (sq_im, v)) in sum_f
                .iter_mut()
                .zip(sum_sq_f_re.iter_mut())
                .zip(sum_sq_f_im.iter_mut().zip(f_b.iter()))
            {
                *acc += v;
                *sq_re += v.re * v.re;
                *sq_im += v.im * v.im;
            }
            sum_l += l_b;
            sum_sq_l += l_b * l_b;
            n_batches += 1;
        }
    }
    if n_batches < 2 {
        return Err(Error::Sampler("too few samples for batch-mean errors".into()));
    }
    let kb = n_batches as f64;
    let mean_s = sum_s.mapv(|z| z / kb);
    let mean_f = sum_f.mapv(|z| z / kb);
    let mean_l = sum_l / kb;
    // SE of the mean of K batch means: sqrt(Var(batch means)/K), with the
    // complex entries carrying Var(Re) + Var(Im).
    let se_from = |sq_re: f64, sq_im: f64, m: C64| -> f64 {
        let var_re = (sq_re / kb - m.re * m.re).max(0.0);
        let var_im = (sq_im / kb - m.im * m.im).max(0.0);
        ((var_re + var_im) / (kb - 1.0)).sqrt()
    };
    let mut se_s = Array2::<f64>::zeros((n, n));
    for i in 0..n {
        for j in 0..n {
            se_s[(i, j)] =
                se_from(sum_sq_s_re[(i, j)], sum_sq_s_im[(i, j)], mean_s[(i, j)]);
        }
    }
    let mut se_f = Array1::<f64>::zeros(n);
    for i in 0..n {
        se_f[i] = se_from(sum_sq_f_re[i], sum_sq_f_im[i], mean_f[i]);
    }
    let var_l = (sum_sq_l / kb - mean_l * mean_l).max(0.0);
    let se_l_norm = (var_l / (kb - 1.0)).sqrt();

    Ok((
        NormalEquations { s: mean_s, f: mean_f, l_norm_sq: mean_l },
        MomentErrors { se_s, se_f, se_l_norm, n_batches },
    ))
}

/// Equal batches: enough for a variance estimate, long enough each to damp
/// autocorrelation.
fn batches_for(n_samples: usize) -> usize {
    (n_samples / 64).clamp(2, 32)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rbm::{RbmParams, RbmSizes};
    use crate::tdvp::LinearAnsatz;
    use std::collections::HashMap;
    use std::sync::Arc;

    #[test]
    fn single_config_support_repeats_that_configuration() {
        let space = SpaceIndex::enumerate(1, 0, 0, true).unwrap();
        let mut a = LinearAnsatz { coeffs: Array1::zeros(space.len()) };
        let only = space.rank_of(Config { n_ket: 1, n_bra: 1, m_minus: 0, m_plus: 0 }).unwrap();
        a.coeffs[only] = C64::new(0.7, -0.2);
        let set = metropolis_sample(&a, &space, 500, 50, 3).unwrap();
        assert_eq!(set.entries().len(), 1);
        assert_eq!(set.entries()[0].1, 500);
        assert_eq!(set.entries()[0].0, space.config_at(only));
        assert_eq!(set.diagnostics.acceptance_rate, 0.0);
    }

    #[test]
    fn uniform_weights_sample_uniformly_within_multinomial_bounds() {
        let space = SpaceIndex::enumerate(1, 2, 2, true).unwrap();
        let a = LinearAnsatz { coeffs: Array1::from_elem(space.len(), C64::new(1.0, 0.0)) };
        let n = 100_000usize;
        let set = metropolis_sample(&a, &space, n, 200, 11).unwrap();
        let mut counts: HashMap<u64, usize> = HashMap::new();
        let dims = space.dims();
        for cfg in set.iter_expanded() {
            *counts.entry(cfg.packed(dims)).or_insert(0) += 1;
        }
        let m = space.len() as f64;
        let p = 1.0 / m;
        let sigma = (n as f64 * p * (1.0 - p)).sqrt();
        for r in 0..space.len() {
            let c = *counts.get(&space.config_at(r).packed(dims)).unwrap_or(&0) as f64;
            let dev = (c - n as f64 * p).abs();
            assert!(
                dev <= 4.0 * sigma,
                "config {r}: count {c} deviates {dev:.0} > 4σ = {:.0}",
                4.0 * sigma
            );
        }
    }

    #[test]
    fn empirical_distribution_approaches_the_target_in_total_variation() {
        let space = SpaceIndex::enumerate(1, 2, 2, true).unwrap();
        let params =
            RbmParams::random(RbmSizes { n_s: 1, n_e: 2, n_h: 2, n_a: 2 }, 21, 0.5).unwrap();
        let dims = space.dims();
        let mut pi: HashMap<u64, f64> = HashMap::new();
        let mut z = 0.0;
        for r in 0..space.len() {
            let cfg = space.config_at(r);
            let w = params.eval(&space, cfg).norm_sqr();
            pi.insert(cfg.packed(dims), w);
            z += w;
        }
        let n = 1_000_000usize;
        let set = metropolis_sample(&params, &space, n, 300, 5).unwrap();
        let mut counts: HashMap<u64, usize> = HashMap::new();
        for cfg in set.iter_expanded() {
            *counts.entry(cfg.packed(dims)).or_insert(0) += 1;
        }
        let mut tv = 0.0;
        for (key, w) in &pi {
            let emp = *counts.get(key).unwrap_or(&0) as f64 / n as f64;
            tv += (emp - w / z).abs();
        }
        tv *= 0.5;
        println!("total-variation distance at {n} samples: {tv:.4}");
        assert!(tv <= 0.02, "TV distance {tv:.4} > 0.02");
    }

    #[test]
    fn chains_are_reproducible_for_a_fixed_seed() {
        let space = SpaceIndex::enumerate(1, 2, 2, true).unwrap();
        let params =
            RbmParams::random(RbmSizes { n_s: 1, n_e: 2, n_h: 2, n_a: 2 }, 8, 0.4).unwrap();
        let s1 = metropolis_sample(&params, &space, 5_000, 100, 77).unwrap();
        let s2 = metropolis_sample(&params, &space, 5_000, 100, 77).unwrap();
        assert_eq!(s1, s2);
        let s3 = metropolis_sample(&params, &space, 5_000, 100, 78).unwrap();
        assert_ne!(s1, s3);
    }

    #[test]
    fn zero_support_everywhere_is_a_start_error() {
        let space = SpaceIndex::enumerate(1, 2, 2, true).unwrap();
        let a = LinearAnsatz { coeffs: Array1::zeros(space.len()) };
        let err = metropolis_sample(&a, &space, 100, 10, 1).unwrap_err();
        assert!(format!("{err}").contains("nonzero weight"));
    }

    #[test]
    fn moment_estimates_are_reproducible_and_batch_counted() {
        let space = Arc::new(SpaceIndex::enumerate(1, 2, 2, true).unwrap());
        let params =
            RbmParams::random(RbmSizes { n_s: 1, n_e: 2, n_h: 1, n_a: 1 }, 9, 0.4).unwrap();
        let res = crate::bath::ReservoirSpec {
            label: "B".into(),
            coupling: 1.0,
            bandwidth: 10.0,
            chemical_potential: 0.0,
            temperature: 1.0,
            coupled_orbitals: vec![0],
        };
        let modes = crate::bath::decompose(&res, crate::bath::Scheme::Pade, 0).unwrap();
        let h = ndarray::array![[C64::new(0.0, 0.0), C64::new(0.0, 0.0)], [
            C64::new(0.0, 0.0),
            C64::new(0.3, 0.0)
        ]];
        let gen = crate::liouvillian::Generator::new(space.clone(), h, modes).unwrap();
        let set = metropolis_sample(&params, &space, 4_000, 200, 13).unwrap();
        let (ne1, er1) = estimate_moments(std::slice::from_ref(&set), &params, &gen).unwrap();
        let (ne2, _) = estimate_moments(std::slice::from_ref(&set), &params, &gen).unwrap();
        assert_eq!(ne1.s, ne2.s);
        assert_eq!(ne1.f, ne2.f);
        assert!(er1.n_batches >= 2);
        assert!(er1.se_l_norm.is_finite());
    }
}
