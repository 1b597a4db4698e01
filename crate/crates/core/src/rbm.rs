//! Neural parameterization of the reduced density tensor: a pair of
//! restricted Boltzmann machines (a ket factor ψ and a bra factor φ) over
//! the visible bits (n̄, n̄′, m̄), with independent hidden units per factor
//! and one set of auxiliary units shared between the factors.
//!
//! Tracing the binary hidden and auxiliary units analytically gives the
//! closed product form evaluated here:
//!
//!   ρ_pre(n̄, n̄′; m̄) = e^{−v_ψ} · conj(e^{−v_φ})
//!                      · Π_k (1 + e^{−θ_k}) · Π_k conj(1 + e^{−θ′_k})
//!                      · Π_l (1 + e^{−(u_l + conj(u′_l))})
//!
//! with visible energies v = cᵀn + dᵀm + nᵀD m, hidden fields
//! θ_k = g_k + (nᵀX)_k + (mᵀY)_k, and auxiliary fields
//! u_l = b_l + (nᵀX′)_l + (mᵀK)_l (primed quantities read n̄′ through the
//! φ parameter copy). The shared auxiliary trace is what entangles the two
//! factors. Evaluation runs in the log domain; the physical tensor value is
//! the symmetrized, sparsity-filtered combination in [`RbmParams::eval`].
//!
//! Every complex parameter is exposed to the propagator as two independent
//! real degrees of freedom; the flattening order is a fixed part of the
//! layout contract (see [`RbmParams::to_real_vec`]).

use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

use crate::observables::RdtRead;
use crate::space::{conjugate_partner, Config, SpaceDims, SpaceIndex};
use crate::{Error, Result, C64};

/// Layer widths of the ansatz.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RbmSizes {
    /// System orbitals (bits of n̄ and of n̄′).
    pub n_s: usize,
    /// Auxiliary-mode bits of m̄ (must be even: equal σ = −/+ halves).
    pub n_e: usize,
    /// Hidden units per factor.
    pub n_h: usize,
    /// Shared auxiliary units.
    pub n_a: usize,
}

impl RbmSizes {
    pub fn validate(&self) -> Result<()> {
        if self.n_s == 0 || self.n_s > 12 {
            return Err(Error::Ansatz(format!("n_s = {} out of range 1..=12", self.n_s)));
        }
        if self.n_e % 2 != 0 {
            return Err(Error::Ansatz(format!(
                "n_e = {} must be even (σ = −/+ halves)",
                self.n_e
            )));
        }
        if self.n_e > 62 || self.n_h > 24 || self.n_a > 24 {
            return Err(Error::Ansatz("layer width out of supported range".into()));
        }
        Ok(())
    }

    pub fn dims(&self) -> SpaceDims {
        SpaceDims { n_s: self.n_s, n_modes: self.n_e / 2 }
    }

    /// Complex parameters in one factor copy.
    fn complex_per_copy(&self) -> usize {
        let (s, e, h, a) = (self.n_s, self.n_e, self.n_h, self.n_a);
        s + e + h + a + s * e + s * h + s * a + e * h + e * a
    }
}

/// Exact and leading-order parameter counts for a given set of widths.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamCount {
    /// Exact complex-parameter count of this layout (both factor copies).
    pub exact: usize,
    /// Leading-order estimate 2N_s(2N_h + N_a) + N_E(N_h + N_a): the
    /// dominant weight blocks only, for size reporting next to `exact`.
    pub estimate: usize,
}

pub fn param_count(sizes: RbmSizes) -> ParamCount {
    ParamCount {
        exact: 2 * sizes.complex_per_copy(),
        estimate: 2 * sizes.n_s * (2 * sizes.n_h + sizes.n_a)
            + sizes.n_e * (sizes.n_h + sizes.n_a),
    }
}

/// Parameters of one factor (ψ or φ).
#[derive(Debug, Clone, PartialEq)]
pub struct WaveParams {
    /// System visible bias c (N_s).
    pub c: Array1<C64>,
    /// Mode visible bias d (N_E).
    pub d: Array1<C64>,
    /// Hidden bias g (N_h).
    pub g: Array1<C64>,
    /// Auxiliary bias b (N_a).
    pub b: Array1<C64>,
    /// System–mode visible coupling D (N_s × N_E).
    pub dd: Array2<C64>,
    /// System–hidden coupling X (N_s × N_h).
    pub x: Array2<C64>,
    /// System–auxiliary coupling X′ (N_s × N_a).
    pub xp: Array2<C64>,
    /// Mode–hidden coupling Y (N_E × N_h).
    pub y: Array2<C64>,
    /// Mode–auxiliary coupling K (N_E × N_a).
    pub k: Array2<C64>,
}

impl WaveParams {
    fn zeros(s: RbmSizes) -> WaveParams {
        WaveParams {
            c: Array1::zeros(s.n_s),
            d: Array1::zeros(s.n_e),
            g: Array1::zeros(s.n_h),
            b: Array1::zeros(s.n_a),
            dd: Array2::zeros((s.n_s, s.n_e)),
            x: Array2::zeros((s.n_s, s.n_h)),
            xp: Array2::zeros((s.n_s, s.n_a)),
            y: Array2::zeros((s.n_e, s.n_h)),
            k: Array2::zeros((s.n_e, s.n_a)),
        }
    }

    /// Canonical traversal order of this factor's arrays (layout contract).
    fn for_each(&self, mut f: impl FnMut(C64)) {
        self.c.iter().for_each(|&z| f(z));
        self.d.iter().for_each(|&z| f(z));
        self.g.iter().for_each(|&z| f(z));
        self.b.iter().for_each(|&z| f(z));
        self.dd.iter().for_each(|&z| f(z));
        self.x.iter().for_each(|&z| f(z));
        self.xp.iter().for_each(|&z| f(z));
        self.y.iter().for_each(|&z| f(z));
        self.k.iter().for_each(|&z| f(z));
    }

    fn for_each_mut(&mut self, mut f: impl FnMut(&mut C64)) {
        self.c.iter_mut().for_each(&mut f);
        self.d.iter_mut().for_each(&mut f);
        self.g.iter_mut().for_each(&mut f);
        self.b.iter_mut().for_each(&mut f);
        self.dd.iter_mut().for_each(&mut f);
        self.x.iter_mut().for_each(&mut f);
        self.xp.iter_mut().for_each(&mut f);
        self.y.iter_mut().for_each(&mut f);
        self.k.iter_mut().for_each(&mut f);
    }
}

/// The full ansatz: a ψ copy reading n̄ and a φ copy reading n̄′, both
/// reading m̄, with the auxiliary units traced jointly.
#[derive(Debug, Clone, PartialEq)]
pub struct RbmParams {
    sizes: RbmSizes,
    pub psi: WaveParams,
    pub phi: WaveParams,
}

/// Effective fields of one factor at fixed visible words.
struct Fields {
    v: C64,
    theta: Vec<C64>,
    u: Vec<C64>,
}

#[inline]
fn bits(word: u64) -> impl Iterator<Item = usize> {
    let mut w = word;
    std::iter::from_fn(move || {
        if w == 0 {
            None
        } else {
            let i = w.trailing_zeros() as usize;
            w &= w - 1;
            Some(i)
        }
    })
}

/// ln(1 + e^{−z}), evaluated on whichever side keeps the exponential small.
/// Branch jumps of 2πi are harmless: only the exponential of sums of these
/// logs is ever used as a value.
fn lp(z: C64) -> C64 {
    if z.re >= 0.0 {
        ((-z).exp() + 1.0).ln()
    } else {
        -z + (z.exp() + 1.0).ln()
    }
}

/// d/dz ln(1 + e^{−z}) = −1/(1 + e^{z}), overflow-safe on both sides.
fn lp_prime(z: C64) -> C64 {
    if z.re >= 0.0 {
        let w = (-z).exp();
        -w / (w + 1.0)
    } else {
        -(C64::new(1.0, 0.0)) / (z.exp() + 1.0)
    }
}

impl RbmParams {
    pub fn zeros(sizes: RbmSizes) -> Result<RbmParams> {
        sizes.validate()?;
        Ok(RbmParams { sizes, psi: WaveParams::zeros(sizes), phi: WaveParams::zeros(sizes) })
    }

    /// Complex Gaussian initialization with E|z|² = scale².
    pub fn random(sizes: RbmSizes, seed: u64, scale: f64) -> Result<RbmParams> {
        let mut p = RbmParams::zeros(sizes)?;
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let draw = |rng: &mut ChaCha20Rng| -> f64 {
            // Box–Muller from two open-interval uniforms.
            let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
            let u2: f64 = rng.gen_range(0.0..1.0);
            (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
        };
        let s = scale / std::f64::consts::SQRT_2;
        p.psi.for_each_mut(|z| *z = C64::new(s * draw(&mut rng), s * draw(&mut rng)));
        p.phi.for_each_mut(|z| *z = C64::new(s * draw(&mut rng), s * draw(&mut rng)));
        Ok(p)
    }

    pub fn sizes(&self) -> RbmSizes {
        self.sizes
    }

    /// Real degrees of freedom (two per complex parameter).
    pub fn n_real(&self) -> usize {
        4 * self.sizes.complex_per_copy()
    }

    /// Flattens to the canonical real layout: ψ then φ; within each copy
    /// c, d, g, b, D, X, X′, Y, K in row-major order; each complex entry
    /// contributes (re, im) adjacently.
    pub fn to_real_vec(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.n_real());
        let mut push = |z: C64| {
            out.push(z.re);
            out.push(z.im);
        };
        self.psi.for_each(&mut push);
        self.phi.for_each(&mut push);
        out
    }

    /// Inverse of [`RbmParams::to_real_vec`]; rejects NaN entries.
    pub fn from_real_vec(sizes: RbmSizes, v: &[f64]) -> Result<RbmParams> {
        let mut p = RbmParams::zeros(sizes)?;
        if v.len() != p.n_real() {
            return Err(Error::Ansatz(format!(
                "real vector has {} entries, layout needs {}",
                v.len(),
                p.n_real()
            )));
        }
        if v.iter().any(|x| x.is_nan()) {
            return Err(Error::Ansatz("parameter vector contains NaN".into()));
        }
        let mut it = v.chunks_exact(2);
        let mut take = |z: &mut C64| {
            let c = it.next().expect("length checked");
            *z = C64::new(c[0], c[1]);
        };
        p.psi.for_each_mut(&mut take);
        p.phi.for_each_mut(&mut take);
        Ok(p)
    }

    fn fields(&self, w: &WaveParams, n_word: u64, m_word: u64) -> Fields {
        let mut v = C64::new(0.0, 0.0);
        let mut theta: Vec<C64> = w.g.to_vec();
        let mut u: Vec<C64> = w.b.to_vec();
        for nu in bits(n_word) {
            v += w.c[nu];
            for e in bits(m_word) {
                v += w.dd[(nu, e)];
            }
            for (k, t) in theta.iter_mut().enumerate() {
                *t += w.x[(nu, k)];
            }
            for (l, t) in u.iter_mut().enumerate() {
                *t += w.xp[(nu, l)];
            }
        }
        for e in bits(m_word) {
            v += w.d[e];
            for (k, t) in theta.iter_mut().enumerate() {
                *t += w.y[(e, k)];
            }
            for (l, t) in u.iter_mut().enumerate() {
                *t += w.k[(e, l)];
            }
        }
        Fields { v, theta, u }
    }

    /// The traced factor-pair value before symmetrization and filtering.
    pub fn eval_pre(&self, cfg: Config) -> C64 {
        let m = cfg.m_word(self.sizes.dims());
        let fp = self.fields(&self.psi, cfg.n_ket as u64, m);
        let fq = self.fields(&self.phi, cfg.n_bra as u64, m);
        let mut g = -fp.v - fq.v.conj();
        for k in 0..self.sizes.n_h {
            g += lp(fp.theta[k]) + lp(fq.theta[k]).conj();
        }
        for l in 0..self.sizes.n_a {
            g += lp(fp.u[l] + fq.u[l].conj());
        }
        g.exp()
    }

    /// The tensor component the ansatz represents: zero outside the space's
    /// filter, otherwise the symmetrized combination
    /// ρ_pre(s) + sign·conj(ρ_pre(partner(s))).
    pub fn eval(&self, space: &SpaceIndex, cfg: Config) -> C64 {
        if !space.passes_filter(cfg) {
            return C64::new(0.0, 0.0);
        }
        let (partner, sign) = conjugate_partner(cfg);
        self.eval_pre(cfg) + self.eval_pre(partner).conj() * sign
    }

    /// Adds scale·∂ρ_pre(cfg)/∂α (or its conjugate) for every real
    /// parameter α into `out`, returning ρ_pre(cfg).
    fn accumulate_pre_grad(
        &self,
        cfg: Config,
        conjugated: bool,
        scale: f64,
        out: &mut [C64],
    ) -> C64 {
        let sz = self.sizes;
        let m = cfg.m_word(sz.dims());
        let nk = cfg.n_ket as u64;
        let nb = cfg.n_bra as u64;
        let fp = self.fields(&self.psi, nk, m);
        let fq = self.fields(&self.phi, nb, m);
        let mut g = -fp.v - fq.v.conj();
        let mut s_psi = Vec::with_capacity(sz.n_h);
        let mut s_phi = Vec::with_capacity(sz.n_h);
        let mut t_aux = Vec::with_capacity(sz.n_a);
        for k in 0..sz.n_h {
            g += lp(fp.theta[k]) + lp(fq.theta[k]).conj();
            s_psi.push(lp_prime(fp.theta[k]));
            s_phi.push(lp_prime(fq.theta[k]));
        }
        for l in 0..sz.n_a {
            let w = fp.u[l] + fq.u[l].conj();
            g += lp(w);
            t_aux.push(lp_prime(w));
        }
        let rho = g.exp();

        let one = C64::new(1.0, 0.0);
        let ind = |word: u64, i: usize| -> C64 {
            if word >> i & 1 == 1 {
                one
            } else {
                C64::new(0.0, 0.0)
            }
        };

        // `im_factor` is ∂(complex param)/∂(its imaginary part) as seen by
        // the value: +i where the parameter enters holomorphically (ψ copy),
        // −i where it enters through its conjugate (φ copy).
        let mut idx = 0usize;
        let mut emit = |dv: C64, im_factor: C64, out: &mut [C64]| {
            let base = rho * dv * scale;
            if conjugated {
                out[idx] += base.conj();
                out[idx + 1] += (base * im_factor).conj();
            } else {
                out[idx] += base;
                out[idx + 1] += base * im_factor;
            }
            idx += 2;
        };
        let i_pos = C64::new(0.0, 1.0);
        let i_neg = C64::new(0.0, -1.0);

        // ψ copy: holomorphic derivatives of the exponent.
        for nu in 0..sz.n_s {
            emit(-ind(nk, nu), i_pos, out);
        }
        for e in 0..sz.n_e {
            emit(-ind(m, e), i_pos, out);
        }
        for k in 0..sz.n_h {
            emit(s_psi[k], i_pos, out);
        }
        for l in 0..sz.n_a {
            emit(t_aux[l], i_pos, out);
        }
        for nu in 0..sz.n_s {
            for e in 0..sz.n_e {
                emit(-ind(nk, nu) * ind(m, e), i_pos, out);
            }
        }
        for nu in 0..sz.n_s {
            for k in 0..sz.n_h {
                emit(ind(nk, nu) * s_psi[k], i_pos, out);
            }
        }
        for nu in 0..sz.n_s {
            for l in 0..sz.n_a {
                emit(ind(nk, nu) * t_aux[l], i_pos, out);
            }
        }
        for e in 0..sz.n_e {
            for k in 0..sz.n_h {
                emit(ind(m, e) * s_psi[k], i_pos, out);
            }
        }
        for e in 0..sz.n_e {
            for l in 0..sz.n_a {
                emit(ind(m, e) * t_aux[l], i_pos, out);
            }
        }
        // φ copy: the value depends on conj(param); derivatives w.r.t. the
        // conjugate, so the imaginary-part factor is −i.
        for nu in 0..sz.n_s {
            emit(-ind(nb, nu), i_neg, out);
        }
        for e in 0..sz.n_e {
            emit(-ind(m, e), i_neg, out);
        }
        for k in 0..sz.n_h {
            emit(s_phi[k].conj(), i_neg, out);
        }
        for l in 0..sz.n_a {
            emit(t_aux[l], i_neg, out);
        }
        for nu in 0..sz.n_s {
            for e in 0..sz.n_e {
                emit(-ind(nb, nu) * ind(m, e), i_neg, out);
            }
        }
        for nu in 0..sz.n_s {
            for k in 0..sz.n_h {
                emit(ind(nb, nu) * s_phi[k].conj(), i_neg, out);
            }
        }
        for nu in 0..sz.n_s {
            for l in 0..sz.n_a {
                emit(ind(nb, nu) * t_aux[l], i_neg, out);
            }
        }
        for e in 0..sz.n_e {
            for k in 0..sz.n_h {
                emit(ind(m, e) * s_phi[k].conj(), i_neg, out);
            }
        }
        for e in 0..sz.n_e {
            for l in 0..sz.n_a {
                emit(ind(m, e) * t_aux[l], i_neg, out);
            }
        }
        debug_assert_eq!(idx, out.len());
        rho
    }

    /// Value and full real-parameter gradient of [`RbmParams::eval`] at one
    /// config. The gradient row is complex: the value is complex while the
    /// parameters are real.
    pub fn eval_with_grad(&self, space: &SpaceIndex, cfg: Config) -> (C64, Array1<C64>) {
        let mut grad = Array1::zeros(self.n_real());
        let v = self.eval_with_grad_into(space, cfg, grad.as_slice_mut().expect("contiguous"));
        (v, grad)
    }

    /// Allocation-free variant of [`RbmParams::eval_with_grad`]: writes the
    /// gradient into `out` (length [`RbmParams::n_real`]) and returns the
    /// value.
    pub fn eval_with_grad_into(&self, space: &SpaceIndex, cfg: Config, out: &mut [C64]) -> C64 {
        assert_eq!(out.len(), self.n_real(), "gradient buffer length");
        out.iter_mut().for_each(|z| *z = C64::new(0.0, 0.0));
        if !space.passes_filter(cfg) {
            return C64::new(0.0, 0.0);
        }
        let (partner, sign) = conjugate_partner(cfg);
        let v1 = self.accumulate_pre_grad(cfg, false, 1.0, out);
        let v2 = self.accumulate_pre_grad(partner, true, sign, out);
        v1 + v2.conj() * sign
    }
}

// ---------------------------------------------------------------------------
// Supervised initialization
// ---------------------------------------------------------------------------

/// Options for [`init_supervised`].
#[derive(Debug, Clone, Copy)]
pub struct InitOptions {
    /// Target relative L2 fit error (√(Σ|Δ|²/Σ|target|²)). An infinite
    /// tolerance skips optimization and reports the raw initialization.
    pub tol: f64,
    /// Descent iterations; each one builds the Jacobian once and tries
    /// damped steps until the loss decreases.
    pub max_steps: usize,
    pub seed: u64,
    /// Scale of the complex Gaussian initialization.
    pub noise_scale: f64,
}

impl Default for InitOptions {
    fn default() -> InitOptions {
        InitOptions { tol: 1e-3, max_steps: 300, seed: 1, noise_scale: 0.01 }
    }
}

/// Outcome report of [`init_supervised`]. A fit that stagnates above
/// tolerance is reported, not an error: the caller decides whether the
/// achieved error is acceptable.
#[derive(Debug, Clone, Copy)]
pub struct InitReport {
    pub rel_error: f64,
    pub steps: usize,
    pub converged: bool,
}

/// Fits fresh ansatz parameters to a known tensor by descent on
/// Σ_s |eval(s) − target(s)|² over the target's own space, using only first
/// derivatives of the evaluation: each step solves the damped least-squares
/// normal equations (JᴴJ with an adaptive diagonal shift), which descends
/// for large damping and converges fast near a representable target.
pub fn init_supervised(
    target: &dyn RdtRead,
    sizes: RbmSizes,
    opts: InitOptions,
) -> Result<(RbmParams, InitReport)> {
    use ndarray_linalg::Solve;

    let space = target.space().clone();
    let dims = space.dims();
    if dims.n_s != sizes.n_s || dims.n_e() != sizes.n_e {
        return Err(Error::Ansatz(format!(
            "ansatz widths (n_s = {}, n_e = {}) do not match the target space ({}, {})",
            sizes.n_s,
            sizes.n_e,
            dims.n_s,
            dims.n_e()
        )));
    }
    let params = RbmParams::random(sizes, opts.seed, opts.noise_scale)?;
    let configs: Vec<Config> = space.iter().collect();
    let targets: Vec<C64> = configs.iter().map(|&c| target.get(c)).collect();
    let norm_sq: f64 = targets.iter().map(|z| z.norm_sqr()).sum();
    if norm_sq <= 0.0 {
        return Err(Error::Ansatz("supervised target is identically zero".into()));
    }

    let loss_of = |p: &RbmParams| -> f64 {
        configs
            .iter()
            .zip(&targets)
            .map(|(&c, y)| (p.eval(&space, c) - y).norm_sqr())
            .sum()
    };

    let report_err = |loss: f64| (loss / norm_sq).sqrt();
    if !opts.tol.is_finite() {
        let rel = report_err(loss_of(&params));
        return Ok((params, InitReport { rel_error: rel, steps: 0, converged: true }));
    }

    let n = params.n_real();
    let n_cfg = configs.len();
    let mut x = Array1::from_vec(params.to_real_vec());
    let mut cur = params;
    let mut loss = loss_of(&cur);
    let mut best = x.clone();
    let mut best_loss = loss;
    let mut damping = 1e-3f64;
    let mut steps_done = 0usize;
    // Real and imaginary parts of the Jacobian, kept separate so the normal
    // equations assemble from two real matrix products.
    let mut jac_re = Array2::<f64>::zeros((n_cfg, n));
    let mut jac_im = Array2::<f64>::zeros((n_cfg, n));
    let mut res_re = Array1::<f64>::zeros(n_cfg);
    let mut res_im = Array1::<f64>::zeros(n_cfg);

    for step in 0..opts.max_steps {
        steps_done = step + 1;
        if report_err(loss) <= opts.tol {
            break;
        }
        for (row, (&cfg, y)) in configs.iter().zip(&targets).enumerate() {
            let (v, gv) = cur.eval_with_grad(&space, cfg);
            let r = v - y;
            res_re[row] = r.re;
            res_im[row] = r.im;
            for (col, g) in gv.iter().enumerate() {
                jac_re[(row, col)] = g.re;
                jac_im[(row, col)] = g.im;
            }
        }
        // Re(JᴴJ) and Re(Jᴴr): the exact Hessian of the loss minus the
        // residual-curvature term, and the exact half-gradient.
        let mut h = jac_re.t().dot(&jac_re);
        h += &jac_im.t().dot(&jac_im);
        let g = jac_re.t().dot(&res_re) + jac_im.t().dot(&res_im);
        let diag: Array1<f64> = (0..n).map(|i| h[(i, i)]).collect();
        let floor = 1e-12 * diag.iter().cloned().fold(0.0f64, f64::max) + 1e-300;

        let mut accepted = false;
        for _ in 0..60 {
            let mut h_damped = h.clone();
            for i in 0..n {
                h_damped[(i, i)] += damping * diag[i] + floor;
            }
            if let Ok(delta) = h_damped.solve(&g) {
                let trial = &x - &delta;
                if let Ok(tp) = RbmParams::from_real_vec(sizes, trial.as_slice().expect("contig"))
                {
                    let tl = loss_of(&tp);
                    if tl.is_finite() && tl <= loss {
                        x = trial;
                        cur = tp;
                        loss = tl;
                        damping = (damping / 3.0).max(1e-14);
                        accepted = true;
                        break;
                    }
                }
            }
            damping *= 4.0;
            if damping > 1e15 {
                break;
            }
        }
        if loss < best_loss {
            best_loss = loss;
            best.assign(&x);
        }
        if !accepted {
            break; // no damped step descends any further; report what we reached
        }
    }
    let rel = report_err(best_loss);
    let out = RbmParams::from_real_vec(sizes, best.as_slice().expect("contig"))?;
    Ok((out, InitReport { rel_error: rel, steps: steps_done, converged: rel <= opts.tol }))
}

// ---------------------------------------------------------------------------
// Checkpoint I/O
// ---------------------------------------------------------------------------

const CHECKPOINT_HEADER: &str = "rbm-checkpoint v1";
const FIELD_NAMES: [&str; 9] = ["c", "d", "g", "b", "D", "X", "Xp", "Y", "K"];

fn field_shape(sizes: RbmSizes, name: &str) -> (usize, usize) {
    let (s, e, h, a) = (sizes.n_s, sizes.n_e, sizes.n_h, sizes.n_a);
    match name {
        "c" => (s, 1),
        "d" => (e, 1),
        "g" => (h, 1),
        "b" => (a, 1),
        "D" => (s, e),
        "X" => (s, h),
        "Xp" => (s, a),
        "Y" => (e, h),
        "K" => (e, a),
        _ => unreachable!("fixed field list"),
    }
}

/// Writes a checkpoint: a versioned, named, exact-round-trip text layout
/// (shortest-representation floats).
pub fn write_checkpoint(p: &RbmParams, w: &mut dyn std::io::Write) -> std::io::Result<()> {
    let s = p.sizes;
    writeln!(w, "{CHECKPOINT_HEADER}")?;
    writeln!(w, "sizes {} {} {} {}", s.n_s, s.n_e, s.n_h, s.n_a)?;
    for (copy_name, copy) in [("psi", &p.psi), ("phi", &p.phi)] {
        let blocks: [(&str, Vec<C64>); 9] = [
            ("c", copy.c.to_vec()),
            ("d", copy.d.to_vec()),
            ("g", copy.g.to_vec()),
            ("b", copy.b.to_vec()),
            ("D", copy.dd.iter().cloned().collect()),
            ("X", copy.x.iter().cloned().collect()),
            ("Xp", copy.xp.iter().cloned().collect()),
            ("Y", copy.y.iter().cloned().collect()),
            ("K", copy.k.iter().cloned().collect()),
        ];
        for (name, vals) in blocks {
            let (r, c) = field_shape(s, name);
            writeln!(w, "field {copy_name}.{name} {r} {c}")?;
            for z in vals {
                writeln!(w, "{} {}", z.re, z.im)?;
            }
        }
    }
    Ok(())
}

/// Reads a checkpoint written by [`write_checkpoint`].
pub fn read_checkpoint<R: std::io::BufRead>(r: R) -> Result<RbmParams> {
    let bad = |m: &str| Error::Ansatz(format!("checkpoint: {m}"));
    let mut lines = r.lines();
    let mut next_line = move || -> Result<String> {
        loop {
            match lines.next() {
                None => return Err(bad("unexpected end of file")),
                Some(Err(e)) => return Err(Error::Ansatz(format!("checkpoint read: {e}"))),
                Some(Ok(l)) => {
                    if !l.trim().is_empty() {
                        return Ok(l);
                    }
                }
            }
        }
    };
    if next_line()?.trim() != CHECKPOINT_HEADER {
        return Err(bad("unrecognized header"));
    }
    let sizes_line = next_line()?;
    let nums: Vec<usize> = sizes_line
        .strip_prefix("sizes")
        .ok_or_else(|| bad("missing sizes line"))?
        .split_whitespace()
        .map(|t| t.parse::<usize>().map_err(|_| bad("bad sizes entry")))
        .collect::<Result<_>>()?;
    if nums.len() != 4 {
        return Err(bad("sizes line needs 4 entries"));
    }
    let sizes = RbmSizes { n_s: nums[0], n_e: nums[1], n_h: nums[2], n_a: nums[3] };
    let mut p = RbmParams::zeros(sizes)?;
    for copy_name in ["psi", "phi"] {
        for name in FIELD_NAMES {
            let head = next_line()?;
            let mut toks = head.split_whitespace();
            if toks.next() != Some("field") {
                return Err(bad("expected a field line"));
            }
            let full = format!("{copy_name}.{name}");
            if toks.next() != Some(full.as_str()) {
                return Err(bad(&format!("expected field {full}")));
            }
            let (er, ec) = field_shape(sizes, name);
            let rr: usize =
                toks.next().and_then(|t| t.parse().ok()).ok_or_else(|| bad("bad shape"))?;
            let cc: usize =
                toks.next().and_then(|t| t.parse().ok()).ok_or_else(|| bad("bad shape"))?;
            if (rr, cc) != (er, ec) {
                return Err(bad(&format!("field {full} has shape {rr}×{cc}, expected {er}×{ec}")));
            }
            let mut vals = Vec::with_capacity(er * ec);
            for _ in 0..er * ec {
                let line = next_line()?;
                let mut t = line.split_whitespace();
                let re: f64 =
                    t.next().and_then(|v| v.parse().ok()).ok_or_else(|| bad("bad value"))?;
                let im: f64 =
                    t.next().and_then(|v| v.parse().ok()).ok_or_else(|| bad("bad value"))?;
                if re.is_nan() || im.is_nan() {
                    return Err(bad("NaN parameter"));
                }
                vals.push(C64::new(re, im));
            }
            let copy = if copy_name == "psi" { &mut p.psi } else { &mut p.phi };
            match name {
                "c" => copy.c = Array1::from_vec(vals),
                "d" => copy.d = Array1::from_vec(vals),
                "g" => copy.g = Array1::from_vec(vals),
                "b" => copy.b = Array1::from_vec(vals),
                "D" => copy.dd = Array2::from_shape_vec((er, ec), vals).expect("shape"),
                "X" => copy.x = Array2::from_shape_vec((er, ec), vals).expect("shape"),
                "Xp" => copy.xp = Array2::from_shape_vec((er, ec), vals).expect("shape"),
                "Y" => copy.y = Array2::from_shape_vec((er, ec), vals).expect("shape"),
                "K" => copy.k = Array2::from_shape_vec((er, ec), vals).expect("shape"),
                _ => unreachable!(),
            }
        }
    }
    Ok(p)
}
