//! Time-dependent variational propagation of parameterized density tensors.
//!
//! For a state ρ(α) with real parameters α, the parameter velocity α̇ is the
//! least-squares minimizer of ‖Σ_k α̇_k ∂ρ/∂α_k − Lρ‖². This module builds
//! the normal-equation data of that loss (exactly over the whole space, or
//! by Metropolis estimation through the sampler), solves its regularized
//! form, integrates α(t) with fixed-step RK4, and minimizes the scaled
//! stationarity norm ‖Lρ‖²/|tr ρ₀|² for steady states.

use ndarray::{Array1, Array2};
use ndarray_linalg::{Eigh, SolveC, UPLO};
use std::sync::Arc;

use crate::dense::RdtVector;
use crate::liouvillian::Generator;
use crate::rbm::RbmParams;
use crate::sampler;
use crate::space::{Config, SpaceIndex};
use crate::{Error, Result, C64};

/// A state family that exposes value and parameter-derivative information
/// per configuration. Parameters are real (each complex degree of freedom
/// appears as two).
pub trait VariationalAnsatz: Clone {
    fn n_real(&self) -> usize;
    fn to_real_vec(&self) -> Vec<f64>;
    /// Same family and shapes, new parameter values.
    fn with_real_vec(&self, v: &[f64]) -> Result<Self>;
    /// ρ(cfg); exactly zero outside the space's filter.
    fn eval_at(&self, space: &SpaceIndex, cfg: Config) -> C64;
    /// Writes ∂ρ(cfg)/∂α_k for all k into `out` and returns ρ(cfg).
    fn grad_into(&self, space: &SpaceIndex, cfg: Config, out: &mut [C64]) -> C64;
}

impl VariationalAnsatz for RbmParams {
    fn n_real(&self) -> usize {
        RbmParams::n_real(self)
    }
    fn to_real_vec(&self) -> Vec<f64> {
        RbmParams::to_real_vec(self)
    }
    fn with_real_vec(&self, v: &[f64]) -> Result<Self> {
        RbmParams::from_real_vec(self.sizes(), v)
    }
    fn eval_at(&self, space: &SpaceIndex, cfg: Config) -> C64 {
        self.eval(space, cfg)
    }
    fn grad_into(&self, space: &SpaceIndex, cfg: Config, out: &mut [C64]) -> C64 {
        self.eval_with_grad_into(space, cfg, out)
    }
}

/// The fully parameterized family: one complex coefficient per retained
/// configuration. Its variational dynamics is the exact dense dynamics,
/// which makes it the equivalence oracle for the propagation machinery.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearAnsatz {
    pub coeffs: Array1<C64>,
}

impl LinearAnsatz {
    pub fn new(space: &SpaceIndex) -> LinearAnsatz {
        LinearAnsatz { coeffs: Array1::zeros(space.len()) }
    }

    pub fn from_state(state: &RdtVector) -> LinearAnsatz {
        LinearAnsatz { coeffs: state.data.clone() }
    }
}

impl VariationalAnsatz for LinearAnsatz {
    fn n_real(&self) -> usize {
        2 * self.coeffs.len()
    }
    fn to_real_vec(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.n_real());
        for z in self.coeffs.iter() {
            v.push(z.re);
            v.push(z.im);
        }
        v
    }
    fn with_real_vec(&self, v: &[f64]) -> Result<Self> {
        if v.len() != self.n_real() {
            return Err(Error::Tdvp(format!(
                "real vector has {} entries, ansatz needs {}",
                v.len(),
                self.n_real()
            )));
        }
        if v.iter().any(|x| x.is_nan()) {
            return Err(Error::Tdvp("parameter vector contains NaN".into()));
        }
        let coeffs = v.chunks_exact(2).map(|c| C64::new(c[0], c[1])).collect();
        Ok(LinearAnsatz { coeffs })
    }
    fn eval_at(&self, space: &SpaceIndex, cfg: Config) -> C64 {
        assert_eq!(self.coeffs.len(), space.len(), "ansatz built for another space");
        match space.rank_of(cfg) {
            Some(r) => self.coeffs[r],
            None => C64::new(0.0, 0.0),
        }
    }
    fn grad_into(&self, space: &SpaceIndex, cfg: Config, out: &mut [C64]) -> C64 {
        assert_eq!(out.len(), self.n_real(), "gradient buffer length");
        out.iter_mut().for_each(|z| *z = C64::new(0.0, 0.0));
        match space.rank_of(cfg) {
            Some(r) => {
                out[2 * r] = C64::new(1.0, 0.0);
                out[2 * r + 1] = C64::new(0.0, 1.0);
                self.coeffs[r]
            }
            None => C64::new(0.0, 0.0),
        }
    }
}

/// Evaluates the ansatz on every retained configuration, producing a dense
/// state (used for observables; divide by the trace at readout).
pub fn materialize<A: VariationalAnsatz>(
    ansatz: &A,
    space: &Arc<SpaceIndex>,
    time: f64,
) -> RdtVector {
    let mut state = RdtVector::zeros(space.clone(), time);
    for r in 0..space.len() {
        state.data[r] = ansatz.eval_at(space, space.config_at(r));
    }
    state
}

// ---------------------------------------------------------------------------
// Normal equations
// ---------------------------------------------------------------------------

/// Least-squares data of the parameter-velocity problem:
/// S_{kk′} = Σ_s conj(∂ρ(s)/∂α_k)·∂ρ(s)/∂α_{k′},
/// F_k = Σ_s conj(∂ρ(s)/∂α_k)·(Lρ)(s), and ‖Lρ‖².
///
/// Exact-sum assembly carries the plain sums; sampled assembly divides all
/// three by the sampling normalization Σ_s |ρ(s)|², which leaves the solved
/// velocity unchanged up to the absolute regularization floor.
#[derive(Debug, Clone)]
pub struct NormalEquations {
    pub s: Array2<C64>,
    pub f: Array1<C64>,
    pub l_norm_sq: f64,
}

impl NormalEquations {
    /// Builds the sums from an explicit Jacobian (configs × parameters) and
    /// derivative vector (Lρ per config).
    pub fn from_jacobian(g: &Array2<C64>, l: &Array1<C64>) -> NormalEquations {
        assert_eq!(g.nrows(), l.len(), "Jacobian rows must match derivative entries");
        let gc = g.mapv(|z| z.conj());
        let s = gc.t().dot(g);
        let f = gc.t().dot(l);
        let l_norm_sq = l.iter().map(|z| z.norm_sqr()).sum();
        NormalEquations { s, f, l_norm_sq }
    }

    /// Extreme eigenvalues (min, max) of the Hermitian part of S — the
    /// singularity report: a duplicated or redundant parameter direction
    /// shows up as a vanishing minimum eigenvalue.
    pub fn eigen_range(&self) -> Result<(f64, f64)> {
        let herm = (&self.s + &self.s.t().mapv(|z| z.conj())).mapv(|z| 0.5 * z);
        let (w, _) = herm
            .eigh(UPLO::Lower)
            .map_err(|e| Error::Tdvp(format!("eigenvalue report failed: {e}")))?;
        let min = w.iter().cloned().fold(f64::INFINITY, f64::min);
        let max = w.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        Ok((min, max))
    }
}

/// How [`assemble`] forms the sums.
#[derive(Debug, Clone)]
pub enum AssembleMode {
    /// Sum over every retained configuration.
    ExactSum,
    /// Metropolis estimation; one chain per seed, merged deterministically.
    Sampled { n_samples: usize, n_burn: usize, seeds: Vec<u64> },
}

/// Builds the normal equations for the current parameters.
pub fn assemble<A: VariationalAnsatz>(
    ansatz: &A,
    gen: &Generator,
    mode: &AssembleMode,
) -> Result<NormalEquations> {
    match mode {
        AssembleMode::ExactSum => Ok(assemble_exact(ansatz, gen)),
        AssembleMode::Sampled { n_samples, n_burn, seeds } => {
            if seeds.is_empty() {
                return Err(Error::Tdvp("sampled assembly needs at least one seed".into()));
            }
            let space = gen.space();
            let mut sets = Vec::with_capacity(seeds.len());
            for &seed in seeds {
                sets.push(sampler::metropolis_sample(ansatz, space, *n_samples, *n_burn, seed)?);
            }
            let (ne, _errors) = sampler::estimate_moments(&sets, ansatz, gen)?;
            Ok(ne)
        }
    }
}

fn assemble_exact<A: VariationalAnsatz>(ansatz: &A, gen: &Generator) -> NormalEquations {
    let space = gen.space();
    let n_cfg = space.len();
    let n = ansatz.n_real();
    let mut g = Array2::<C64>::zeros((n_cfg, n));
    let mut values = Array1::<C64>::zeros(n_cfg);
    for r in 0..n_cfg {
        let row = g.row_mut(r);
        let slice = row.into_slice().expect("row-major Jacobian");
        values[r] = ansatz.grad_into(space, space.config_at(r), slice);
    }
    let l = gen.apply(&values);
    NormalEquations::from_jacobian(&g, &l)
}

// ---------------------------------------------------------------------------
// Regularized solve
// ---------------------------------------------------------------------------

/// Which linear-algebra path produced the velocity.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolverPath {
    Cholesky,
    EigenPinv,
}

impl std::fmt::Display for SolverPath {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            SolverPath::Cholesky => write!(f, "cholesky"),
            SolverPath::EigenPinv => write!(f, "eigen-pinv"),
        }
    }
}

#[derive(Debug, Clone)]
pub struct TdvpSolution {
    pub alpha_dot: Array1<f64>,
    /// Achieved residual ‖Σ α̇_k ∂ρ/∂α_k − Lρ‖² (same normalization as the
    /// input sums; clamped into [0, ∞) within a −1e−12 relative tolerance).
    pub ds2: f64,
    pub path: SolverPath,
}

/// Absolute diagonal floor added on top of the relative Tikhonov term.
pub const SOLVE_EPS: f64 = 1e-10;

/// Default relative regularization for production propagation.
pub const LAMBDA_DEFAULT: f64 = 1e-4;

/// Solves (Re S + λ·diag(Re S) + εI) α̇ = Re F for the real parameter
/// velocity. Real parts are the exact normal equations for real parameters:
/// the imaginary parts of S and F cancel in the real-valued loss. Reports
/// the achieved Δs² from the undamped data.
pub fn solve_regularized(ne: &NormalEquations, lambda: f64) -> Result<TdvpSolution> {
    if !(lambda >= 0.0) {
        return Err(Error::Tdvp(format!("regularization λ = {lambda} must be ≥ 0")));
    }
    let n = ne.f.len();
    if ne.s.nrows() != n || ne.s.ncols() != n {
        return Err(Error::Tdvp("normal-equation shapes disagree".into()));
    }
    let s_re = ne.s.mapv(|z| z.re);
    let f_re = ne.f.mapv(|z| z.re);
    let mut damped = s_re.clone();
    for i in 0..n {
        damped[(i, i)] += lambda * s_re[(i, i)] + SOLVE_EPS;
    }
    let (alpha_dot, path) = match damped.solvec(&f_re) {
        Ok(x) if x.iter().all(|v| v.is_finite()) => (x, SolverPath::Cholesky),
        _ => {
            let (w, v) = damped
                .eigh(UPLO::Lower)
                .map_err(|e| Error::Tdvp(format!("eigendecomposition failed: {e}")))?;
            let w_max = w.iter().cloned().fold(0.0f64, |a, b| a.max(b.abs()));
            let cutoff = 1e-12 * w_max;
            let vt_f = v.t().dot(&f_re);
            let scaled: Array1<f64> = w
                .iter()
                .zip(vt_f.iter())
                .map(|(&wi, &fi)| if wi.abs() > cutoff { fi / wi } else { 0.0 })
                .collect();
            (v.dot(&scaled), SolverPath::EigenPinv)
        }
    };
    let s_a = s_re.dot(&alpha_dot);
    let raw = ne.l_norm_sq - 2.0 * f_re.dot(&alpha_dot) + alpha_dot.dot(&s_a);
    let tol = 1e-12 * ne.l_norm_sq.max(1.0);
    let ds2 = if raw >= 0.0 {
        raw
    } else if raw >= -tol {
        0.0
    } else {
        raw // inconsistent inputs; surfaced rather than hidden
    };
    Ok(TdvpSolution { alpha_dot, ds2, path })
}

// ---------------------------------------------------------------------------
// Time propagation
// ---------------------------------------------------------------------------

/// Per-step diagnostics handed to the observer (from the first RK4 stage).
#[derive(Debug, Clone, Copy)]
pub struct StepDiag {
    pub ds2: f64,
    pub trace: C64,
    pub lambda: f64,
    pub path: SolverPath,
    /// True when Δs² exceeded the configured ceiling (expressiveness
    /// warning; propagation continues).
    pub warned: bool,
}

#[derive(Debug, Clone)]
pub struct PropagateOptions {
    pub mode: AssembleMode,
    /// Warn (non-fatally) when Δs² exceeds this.
    pub ds2_ceiling: f64,
}

impl Default for PropagateOptions {
    fn default() -> PropagateOptions {
        PropagateOptions { mode: AssembleMode::ExactSum, ds2_ceiling: f64::INFINITY }
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct PropagateReport {
    pub max_ds2: f64,
    pub warned: bool,
}

/// Sum of the system-diagonal, zero-mode components: the trace gauge.
fn trace0_of<A: VariationalAnsatz>(ansatz: &A, space: &SpaceIndex) -> C64 {
    let n_levels = 1u16 << space.dims().n_s;
    let mut tr = C64::new(0.0, 0.0);
    for n in 0..n_levels {
        tr += ansatz.eval_at(space, Config { n_ket: n, n_bra: n, m_minus: 0, m_plus: 0 });
    }
    tr
}

/// Integrates the parameters with fixed-step RK4; `lambda_of(t)` sets the
/// regularization per stage, and the observer sees the state before the
/// first step and after every step with that step's leading-stage
/// diagnostics. Returns the final parameters and a ceiling report.
pub fn propagate_parameters<A, L, O>(
    params0: &A,
    gen: &Generator,
    dt: f64,
    n_steps: usize,
    lambda_of: L,
    opts: &PropagateOptions,
    mut observe: O,
) -> Result<(A, PropagateReport)>
where
    A: VariationalAnsatz,
    L: Fn(f64) -> f64,
    O: FnMut(usize, f64, &A, &StepDiag),
{
    if !(dt > 0.0) {
        return Err(Error::Tdvp(format!("time step dt = {dt} must be positive")));
    }
    let space = gen.space().as_ref();
    let n = params0.n_real();
    let mut x = Array1::from_vec(params0.to_real_vec());
    let mut cur = params0.clone();
    let mut report = PropagateReport::default();

    let velocity = |a: &A, t: f64| -> Result<(Array1<f64>, TdvpSolution)> {
        let ne = assemble(a, gen, &opts.mode)?;
        let sol = solve_regularized(&ne, lambda_of(t))?;
        Ok((sol.alpha_dot.clone(), sol))
    };

    // Initial observation at t = 0 with leading diagnostics.
    {
        let (_, sol0) = velocity(&cur, 0.0)?;
        let warned = sol0.ds2 > opts.ds2_ceiling;
        report.max_ds2 = sol0.ds2;
        report.warned |= warned;
        let diag = StepDiag {
            ds2: sol0.ds2,
            trace: trace0_of(&cur, space),
            lambda: lambda_of(0.0),
            path: sol0.path,
            warned,
        };
        observe(0, 0.0, &cur, &diag);
    }

    for step in 0..n_steps {
        let t = step as f64 * dt;
        let (k1, sol1) = velocity(&cur, t)?;
        let half = |k: &Array1<f64>, h: f64| -> Result<A> {
            let mut y = x.clone();
            y.scaled_add(h, k);
            cur.with_real_vec(y.as_slice().expect("contig"))
        };
        let a2 = half(&k1, 0.5 * dt)?;
        let (k2, _) = velocity(&a2, t + 0.5 * dt)?;
        let a3 = half(&k2, 0.5 * dt)?;
        let (k3, _) = velocity(&a3, t + 0.5 * dt)?;
        let a4 = half(&k3, dt)?;
        let (k4, _) = velocity(&a4, t + dt)?;
        for i in 0..n {
            x[i] += dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::Tdvp(format!(
                "parameter divergence at t = {:.6} (step {})",
                t + dt,
                step + 1
            )));
        }
        cur = cur.with_real_vec(x.as_slice().expect("contig"))?;
        let warned = sol1.ds2 > opts.ds2_ceiling;
        report.max_ds2 = report.max_ds2.max(sol1.ds2);
        report.warned |= warned;
        let diag = StepDiag {
            ds2: sol1.ds2,
            trace: trace0_of(&cur, space),
            lambda: lambda_of(t),
            path: sol1.path,
            warned,
        };
        observe(step + 1, t + dt, &cur, &diag);
    }
    Ok((cur, report))
}

// ---------------------------------------------------------------------------
// Steady-state minimization
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy)]
pub struct SteadyMinOptions {
    /// Target scaled norm ‖Lρ‖²/|tr ρ₀|².
    pub tol: f64,
    pub max_steps: usize,
    /// Initial step size of the descent.
    pub step0: f64,
}

impl Default for SteadyMinOptions {
    fn default() -> SteadyMinOptions {
        SteadyMinOptions { tol: 1e-10, max_steps: 2000, step0: 1e-2 }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct SteadyMinReport {
    pub scaled_norm: f64,
    pub steps: usize,
    pub converged: bool,
}

/// Minimizes the scaled stationarity norm ‖Lρ‖² / |tr ρ₀|² by first-order
/// descent: momentum 0.9 with step-size halving whenever the norm rises
/// (and 5% growth when it falls), falling back to the raw gradient when no
/// momentum step descends. Stagnation above tolerance is reported, not an
/// error.
pub fn steady_minimize<A: VariationalAnsatz>(
    params0: &A,
    gen: &Generator,
    opts: &SteadyMinOptions,
) -> Result<(A, SteadyMinReport)> {
    let space = gen.space().clone();
    let sparse = gen.build_sparse();
    let n_cfg = space.len();
    let n = params0.n_real();

    // Scaled norm and its gradient. The gradient needs the adjoint action:
    // ∂‖Lρ‖²/∂α_k = 2 Re[(Gᴴ L†Lρ)_k], and the trace part differentiates
    // |tr ρ₀|² through the tier-0 diagonal rows of the Jacobian.
    let eval_all = |a: &A| -> (Array1<C64>, Array1<C64>, C64) {
        let mut values = Array1::<C64>::zeros(n_cfg);
        for r in 0..n_cfg {
            values[r] = a.eval_at(&space, space.config_at(r));
        }
        let l = sparse.matvec(&values);
        let tr = trace0_of(a, &space);
        (values, l, tr)
    };
    let loss_of = |l: &Array1<C64>, tr: C64| -> f64 {
        let ln: f64 = l.iter().map(|z| z.norm_sqr()).sum();
        ln / tr.norm_sqr()
    };

    let (_, l0, tr0) = eval_all(params0);
    if tr0.norm_sqr() < 1e-280 {
        return Err(Error::Tdvp(
            "zero trace at the initial parameters; re-seed the initialization".into(),
        ));
    }
    let mut loss = loss_of(&l0, tr0);
    let mut x = Array1::from_vec(params0.to_real_vec());
    let mut cur = params0.clone();
    let mut best = x.clone();
    let mut best_loss = loss;
    let mut momentum = Array1::<f64>::zeros(n);
    let mut lr = opts.step0;
    let mut steps_done = 0usize;
    let mut grad = Array1::<f64>::zeros(n);
    let mut g_row = vec![C64::new(0.0, 0.0); n];

    for step in 0..opts.max_steps {
        steps_done = step;
        if loss <= opts.tol {
            break;
        }
        // Gradient assembly: w = L†(Lρ), t_k = Σ_{tier-0 diag} ∂ρ/∂α_k.
        let (_, l, tr) = eval_all(&cur);
        let tr_sq = tr.norm_sqr();
        let l_sq: f64 = l.iter().map(|z| z.norm_sqr()).sum();
        let w = sparse.matvec_adjoint(&l);
        grad.fill(0.0);
        let mut t_vec = vec![C64::new(0.0, 0.0); n];
        for r in 0..n_cfg {
            let cfg = space.config_at(r);
            let v = cur.grad_into(&space, cfg, &mut g_row);
            let _ = v;
            let is_trace_row =
                cfg.n_ket == cfg.n_bra && cfg.m_minus == 0 && cfg.m_plus == 0;
            for k in 0..n {
                grad[k] += 2.0 * (g_row[k].conj() * w[r]).re;
                if is_trace_row {
                    t_vec[k] += g_row[k];
                }
            }
        }
        for k in 0..n {
            let d_tr_sq = 2.0 * (tr.conj() * t_vec[k]).re;
            grad[k] = grad[k] / tr_sq - l_sq / (tr_sq * tr_sq) * d_tr_sq;
        }
        momentum.mapv_inplace(|m| 0.9 * m);
        momentum.scaled_add(0.1, &grad);

        let mut accepted = false;
        let mut halvings = 0usize;
        while lr > 1e-16 {
            let dir = if halvings < 3 { &momentum } else { &grad };
            let mut trial = x.clone();
            trial.scaled_add(-lr, dir);
            if let Ok(tp) = cur.with_real_vec(trial.as_slice().expect("contig")) {
                let (_, lt, trt) = eval_all(&tp);
                if trt.norm_sqr() > 1e-280 {
                    let tl = loss_of(&lt, trt);
                    if tl.is_finite() && tl <= loss {
                        x = trial;
                        cur = tp;
                        loss = tl;
                        lr *= 1.05;
                        if halvings >= 3 {
                            momentum.fill(0.0);
                        }
                        accepted = true;
                        break;
                    }
                }
            }
            lr *= 0.5;
            halvings += 1;
        }
        if loss < best_loss {
            best_loss = loss;
            best.assign(&x);
        }
        if !accepted {
            break;
        }
        steps_done = step + 1;
    }
    let out = cur.with_real_vec(best.as_slice().expect("contig"))?;
    Ok((
        out,
        SteadyMinReport {
            scaled_norm: best_loss,
            steps: steps_done,
            converged: best_loss <= opts.tol,
        },
    ))
}
