//! Dense reference solver: exact time evolution and steady states of the
//! truncated hierarchy by direct linear algebra on the coefficient vector.
//!
//! This path scales with the full dimension of the enumerated space and is
//! the in-repo ground truth that variational propagation is measured
//! against. Time stepping is classic fourth-order Runge–Kutta with exact
//! step times t₀ + k·dt; steady states come from a damped conjugate-gradient
//! least-squares solve of the singular system L ρ = 0 pinned by the trace
//! functional, with a dense SVD fallback (and null-space degeneracy
//! detection) on small spaces.

use ndarray::{Array1, Array2};
use std::sync::Arc;

use crate::liouvillian::SparseGenerator;
use crate::observables::RdtRead;
use crate::space::{Config, SpaceIndex};
use crate::{Error, Result, C64};

/// A dense coefficient vector over an enumerated space, stamped with the
/// physical time it represents.
#[derive(Debug, Clone)]
pub struct RdtVector {
    pub data: Array1<C64>,
    space: Arc<SpaceIndex>,
    pub time: f64,
}

impl RdtVector {
    pub fn zeros(space: Arc<SpaceIndex>, time: f64) -> RdtVector {
        let n = space.len();
        RdtVector { data: Array1::zeros(n), space, time }
    }

    /// Embeds a system density matrix into the dissipaton-free block.
    /// Entries that the space's parity filter drops must be numerically
    /// negligible; a physical state never populates them.
    pub fn from_system_density(
        space: Arc<SpaceIndex>,
        rho: &Array2<C64>,
        time: f64,
    ) -> Result<RdtVector> {
        let dim = 1usize << space.dims().n_s;
        if rho.nrows() != dim || rho.ncols() != dim {
            return Err(Error::Dense(format!(
                "density matrix is {}×{}, expected {dim}×{dim}",
                rho.nrows(),
                rho.ncols()
            )));
        }
        let mut v = RdtVector::zeros(space.clone(), time);
        for a in 0..dim {
            for b in 0..dim {
                let cfg =
                    Config { n_ket: a as u16, n_bra: b as u16, m_minus: 0, m_plus: 0 };
                match space.rank_of(cfg) {
                    Some(r) => v.data[r] = rho[(a, b)],
                    None => {
                        if rho[(a, b)].norm() > 1e-12 {
                            return Err(Error::Dense(
                                "density matrix mixes fermion-parity sectors".into(),
                            ));
                        }
                    }
                }
            }
        }
        Ok(v)
    }

    pub fn space(&self) -> &Arc<SpaceIndex> {
        &self.space
    }

    pub fn norm(&self) -> f64 {
        self.data.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
    }

    /// Writes the full coefficient vector as `rank,re,im` CSV.
    pub fn write_snapshot(&self, w: &mut dyn std::io::Write) -> std::io::Result<()> {
        writeln!(w, "rank,re,im")?;
        for (r, z) in self.data.iter().enumerate() {
            writeln!(w, "{},{},{}", r, z.re, z.im)?;
        }
        Ok(())
    }

    /// Reads a snapshot written by [`RdtVector::write_snapshot`].
    pub fn read_snapshot<R: std::io::BufRead>(
        space: Arc<SpaceIndex>,
        time: f64,
        r: R,
    ) -> Result<RdtVector> {
        let mut lines = r.lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::Dense("snapshot is empty".into()))?
            .map_err(|e| Error::Dense(format!("snapshot read failed: {e}")))?;
        if header.trim() != "rank,re,im" {
            return Err(Error::Dense("snapshot header mismatch".into()));
        }
        let mut v = RdtVector::zeros(space, time);
        let mut seen = 0usize;
        for line in lines {
            let line = line.map_err(|e| Error::Dense(format!("snapshot read failed: {e}")))?;
            if line.trim().is_empty() {
                continue;
            }
            let mut parts = line.split(',');
            let bad = || Error::Dense(format!("malformed snapshot line: {line}"));
            let rank: usize =
                parts.next().ok_or_else(bad)?.trim().parse().map_err(|_| bad())?;
            let re: f64 = parts.next().ok_or_else(bad)?.trim().parse().map_err(|_| bad())?;
            let im: f64 = parts.next().ok_or_else(bad)?.trim().parse().map_err(|_| bad())?;
            if rank >= v.data.len() {
                return Err(Error::Dense(format!("snapshot rank {rank} out of range")));
            }
            v.data[rank] = C64::new(re, im);
            seen += 1;
        }
        if seen != v.data.len() {
            return Err(Error::Dense(format!(
                "snapshot has {seen} rows, space needs {}",
                v.data.len()
            )));
        }
        Ok(v)
    }
}

impl RdtRead for RdtVector {
    fn space(&self) -> &Arc<SpaceIndex> {
        &self.space
    }
    fn get(&self, cfg: Config) -> C64 {
        match self.space.rank_of(cfg) {
            Some(r) => self.data[r],
            None => C64::new(0.0, 0.0),
        }
    }
}

fn check_finite(y: &Array1<C64>, context: &str) -> Result<()> {
    if y.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
        return Err(Error::Dense(format!("{context}: state diverged (non-finite values)")));
    }
    Ok(())
}

/// One classic Runge–Kutta step of size `h` for y′ = L y.
fn rk4_step(gen: &SparseGenerator, y: &mut Array1<C64>, h: f64, work: &mut [Array1<C64>; 5]) {
    let [k1, k2, k3, k4, tmp] = work;
    gen.matvec_into(y, k1);
    for i in 0..y.len() {
        tmp[i] = y[i] + k1[i] * (0.5 * h);
    }
    gen.matvec_into(tmp, k2);
    for i in 0..y.len() {
        tmp[i] = y[i] + k2[i] * (0.5 * h);
    }
    gen.matvec_into(tmp, k3);
    for i in 0..y.len() {
        tmp[i] = y[i] + k3[i] * h;
    }
    gen.matvec_into(tmp, k4);
    for i in 0..y.len() {
        y[i] += (k1[i] + (k2[i] + k3[i]) * 2.0 + k4[i]) * (h / 6.0);
    }
}

/// Propagates the state in place from its stamped time to `t_end` with fixed
/// step `dt` (the final step is shortened to land on `t_end` exactly).
/// `observe` is called at every step time, including the initial one.
pub fn rk4_propagate<F: FnMut(&RdtVector)>(
    gen: &SparseGenerator,
    state: &mut RdtVector,
    t_end: f64,
    dt: f64,
    mut observe: F,
) -> Result<()> {
    if !(dt > 0.0) {
        return Err(Error::Dense(format!("step size {dt} must be positive")));
    }
    if t_end < state.time - 1e-12 {
        return Err(Error::Dense(format!(
            "cannot propagate backwards from {} to {t_end}",
            state.time
        )));
    }
    if gen.dim() != state.data.len() {
        return Err(Error::Dense("generator and state dimensions differ".into()));
    }
    let t0 = state.time;
    let n = state.data.len();
    let mut work = [
        Array1::zeros(n),
        Array1::zeros(n),
        Array1::zeros(n),
        Array1::zeros(n),
        Array1::zeros(n),
    ];
    observe(state);
    let mut k = 0usize;
    loop {
        let t = t0 + k as f64 * dt;
        if t >= t_end - 1e-12 * dt.max(1.0) {
            break;
        }
        let h = if t + dt > t_end { t_end - t } else { dt };
        rk4_step(gen, &mut state.data, h, &mut work);
        k += 1;
        state.time = if h == dt { t0 + k as f64 * dt } else { t_end };
        check_finite(&state.data, "time propagation")?;
        observe(state);
    }
    state.time = state.time.max(t_end);
    Ok(())
}

/// Report returned by [`equilibrate`].
#[derive(Debug, Clone, Copy)]
pub struct EquilibrateReport {
    pub steps: usize,
    pub residual: f64,
}

fn residual_inf(gen: &SparseGenerator, y: &Array1<C64>, work: &mut Array1<C64>) -> f64 {
    gen.matvec_into(y, work);
    work.iter().map(|z| z.norm()).fold(0.0, f64::max)
}

/// Relaxes the state toward stationarity by time stepping until
/// ‖L y‖∞ < tol, checking stationarity before the first step so an already
/// stationary state returns immediately. Fails if `budget_steps` is
/// exhausted first.
pub fn equilibrate(
    gen: &SparseGenerator,
    state: &mut RdtVector,
    dt: f64,
    tol: f64,
    budget_steps: usize,
) -> Result<EquilibrateReport> {
    if !(dt > 0.0) || !(tol > 0.0) {
        return Err(Error::Dense("equilibration needs positive dt and tol".into()));
    }
    let n = state.data.len();
    let mut probe = Array1::zeros(n);
    let mut res = residual_inf(gen, &state.data, &mut probe);
    if res < tol {
        return Ok(EquilibrateReport { steps: 0, residual: res });
    }
    let mut work = [
        Array1::zeros(n),
        Array1::zeros(n),
        Array1::zeros(n),
        Array1::zeros(n),
        Array1::zeros(n),
    ];
    let chunk = 50usize;
    let mut steps = 0usize;
    while steps < budget_steps {
        let todo = chunk.min(budget_steps - steps);
        for _ in 0..todo {
            rk4_step(gen, &mut state.data, dt, &mut work);
        }
        steps += todo;
        state.time += todo as f64 * dt;
        check_finite(&state.data, "equilibration")?;
        res = residual_inf(gen, &state.data, &mut probe);
        if res < tol {
            return Ok(EquilibrateReport { steps, residual: res });
        }
    }
    Err(Error::Dense(format!(
        "equilibration did not reach ‖Ly‖∞ < {tol:.3e} within {budget_steps} steps (residual {res:.3e})"
    )))
}

/// How a steady state was obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SteadyPath {
    ConjugateGradient { iterations: usize },
    DenseSvd,
}

#[derive(Debug, Clone)]
pub struct SteadyState {
    pub state: RdtVector,
    /// ‖L ρ‖₂ / ‖ρ‖₂ at the returned state.
    pub residual: f64,
    pub path: SteadyPath,
}

/// Options for [`steady_state`].
#[derive(Debug, Clone, Copy)]
pub struct SteadyOptions {
    /// Tikhonov damping added to the normal equations.
    pub damping: f64,
    /// Target relative residual ‖Lρ‖/‖ρ‖.
    pub tol: f64,
    /// Iteration cap for the conjugate-gradient stage.
    pub max_iterations: usize,
    /// Space size up to which the dense fallback may run.
    pub dense_limit: usize,
    /// Skip the iterative stage entirely (testing / tiny spaces).
    pub force_dense: bool,
}

impl Default for SteadyOptions {
    fn default() -> SteadyOptions {
        SteadyOptions {
            damping: 1e-12,
            tol: 1e-9,
            max_iterations: 200_000,
            dense_limit: 3000,
            force_dense: false,
        }
    }
}

/// Trace-functional row vector: 1 on the ranks of (n, n; 0̄, 0̄).
fn trace_vector(space: &SpaceIndex) -> Array1<C64> {
    let mut t = Array1::zeros(space.len());
    for n in 0..(1u16 << space.dims().n_s) {
        let cfg = Config { n_ket: n, n_bra: n, m_minus: 0, m_plus: 0 };
        if let Some(r) = space.rank_of(cfg) {
            t[r] = C64::new(1.0, 0.0);
        }
    }
    t
}

fn norm2(x: &Array1<C64>) -> f64 {
    x.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

/// Solves the stationarity problem min ‖L ρ‖² subject to the trace pin
/// t̂ᵀρ = 1, then renormalizes to unit trace.
pub fn steady_state(
    gen: &SparseGenerator,
    space: &Arc<SpaceIndex>,
    start: Option<&RdtVector>,
    opts: SteadyOptions,
) -> Result<SteadyState> {
    let n = gen.dim();
    if n != space.len() {
        return Err(Error::Dense("generator and space dimensions differ".into()));
    }
    let t = trace_vector(space);

    if !opts.force_dense {
        if let Some(sol) = cgls_trace_pinned(gen, &t, start, &opts)? {
            return finish_steady(gen, space, sol, &t, &opts);
        }
    }
    if n <= opts.dense_limit {
        let sol = dense_trace_pinned(gen, &t)?;
        return finish_steady(gen, space, (sol, SteadyPath::DenseSvd), &t, &opts);
    }
    Err(Error::Dense(format!(
        "steady-state iteration did not converge and the space ({n}) exceeds the dense fallback limit ({})",
        opts.dense_limit
    )))
}

fn finish_steady(
    gen: &SparseGenerator,
    space: &Arc<SpaceIndex>,
    (mut x, path): (Array1<C64>, SteadyPath),
    t: &Array1<C64>,
    opts: &SteadyOptions,
) -> Result<SteadyState> {
    let tr: C64 = t.iter().zip(x.iter()).map(|(a, b)| a * b).sum();
    if tr.norm() < 1e-12 {
        return Err(Error::Dense("steady-state candidate has zero trace".into()));
    }
    x.mapv_inplace(|z| z / tr);
    let res = norm2(&gen.matvec(&x)) / norm2(&x);
    if res > opts.tol * 10.0 {
        return Err(Error::Dense(format!(
            "steady-state residual {res:.3e} exceeds tolerance {:.3e}",
            opts.tol
        )));
    }
    Ok(SteadyState {
        state: RdtVector { data: x, space: space.clone(), time: 0.0 },
        residual: res,
        path,
    })
}

/// Damped conjugate-gradient least squares on the stacked system
/// A = [L; t̂ᵀ], b = [0; 1]. Returns None if it stalls without converging.
fn cgls_trace_pinned(
    gen: &SparseGenerator,
    t: &Array1<C64>,
    start: Option<&RdtVector>,
    opts: &SteadyOptions,
) -> Result<Option<(Array1<C64>, SteadyPath)>> {
    let n = gen.dim();
    let lam = opts.damping;
    let mut x: Array1<C64> = match start {
        Some(s) => {
            if s.data.len() != n {
                return Err(Error::Dense("starting state has the wrong dimension".into()));
            }
            s.data.clone()
        }
        None => t.clone(),
    };
    // Normalize the start so the trace row is satisfied roughly.
    let tr0: C64 = t.iter().zip(x.iter()).map(|(a, b)| a * b).sum();
    if tr0.norm() > 1e-12 {
        x.mapv_inplace(|z| z / tr0);
    }

    // Residual blocks: r_top = 0 − Lx, r_bot = 1 − t̂ᵀx.
    let mut r_top = gen.matvec(&x);
    r_top.mapv_inplace(|z| -z);
    let mut r_bot = C64::new(1.0, 0.0)
        - t.iter().zip(x.iter()).map(|(a, b)| a * b).sum::<C64>();
    // s = Aᴴ r − λ x.
    let mut s = gen.matvec_adjoint(&r_top);
    for i in 0..n {
        s[i] += t[i].conj() * r_bot - x[i] * lam;
    }
    let mut p = s;
    let mut gamma: f64 = p.iter().map(|z| z.norm_sqr()).sum();
    let mut q_top = Array1::zeros(n);

    let check_every = 100usize;
    let mut best_res = f64::INFINITY;
    let mut stall = 0usize;
    for it in 1..=opts.max_iterations {
        gen.matvec_into(&p, &mut q_top);
        let q_bot: C64 = t.iter().zip(p.iter()).map(|(a, b)| a * b).sum();
        let delta: f64 = q_top.iter().map(|z| z.norm_sqr()).sum::<f64>()
            + q_bot.norm_sqr()
            + lam * p.iter().map(|z| z.norm_sqr()).sum::<f64>();
        if delta <= 0.0 || !delta.is_finite() {
            return Ok(None);
        }
        let alpha = gamma / delta;
        for i in 0..n {
            x[i] += p[i] * alpha;
            r_top[i] -= q_top[i] * alpha;
        }
        r_bot -= q_bot * alpha;
        let mut s_new = gen.matvec_adjoint(&r_top);
        for i in 0..n {
            s_new[i] += t[i].conj() * r_bot - x[i] * lam;
        }
        let gamma_new: f64 = s_new.iter().map(|z| z.norm_sqr()).sum();
        let beta = gamma_new / gamma;
        gamma = gamma_new;
        for i in 0..n {
            p[i] = s_new[i] + p[i] * beta;
        }

        if it % check_every == 0 || gamma < 1e-306 {
            let res = norm2(&gen.matvec(&x)) / norm2(&x).max(1e-300);
            if res < opts.tol {
                return Ok(Some((x, SteadyPath::ConjugateGradient { iterations: it })));
            }
            if res < best_res * 0.999 {
                best_res = res;
                stall = 0;
            } else {
                stall += 1;
                if stall >= 20 {
                    return Ok(None);
                }
            }
        }
    }
    let res = norm2(&gen.matvec(&x)) / norm2(&x).max(1e-300);
    if res < opts.tol {
        return Ok(Some((x, SteadyPath::ConjugateGradient { iterations: opts.max_iterations })));
    }
    Ok(None)
}

/// Dense route: SVD-based null-space analysis plus a least-squares solve of
/// the stacked trace-pinned system.
fn dense_trace_pinned(gen: &SparseGenerator, t: &Array1<C64>) -> Result<Array1<C64>> {
    use ndarray_linalg::{LeastSquaresSvd, SVD};
    let n = gen.dim();
    let l = gen.to_dense();
    let (_, sv, _) = l
        .svd(false, false)
        .map_err(|e| Error::Dense(format!("singular-value decomposition failed: {e}")))?;
    let smax = sv.iter().cloned().fold(0.0f64, f64::max);
    let null_dim = sv.iter().filter(|&&s| s < 1e-10 * smax.max(1e-300)).count();
    if null_dim >= 2 {
        return Err(Error::Dense(format!(
            "stationary subspace is {null_dim}-fold degenerate; the steady state is not unique"
        )));
    }
    let mut a: Array2<C64> = Array2::zeros((n + 1, n));
    for r in 0..n {
        for c in 0..n {
            a[(r, c)] = l[(r, c)];
        }
    }
    for c in 0..n {
        a[(n, c)] = t[c];
    }
    let mut b: Array1<C64> = Array1::zeros(n + 1);
    b[n] = C64::new(1.0, 0.0);
    let sol = a
        .least_squares(&b)
        .map_err(|e| Error::Dense(format!("least-squares solve failed: {e}")))?;
    Ok(sol.solution)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bath::{DissipatonMode, DissipatonSet, PoleKind};
    use crate::liouvillian::Generator;
    use crate::observables::{occupancy, trace0};
    use approx::assert_abs_diff_eq;

    fn two_level_h(eps: f64) -> Array2<C64> {
        Array2::from_diag(&ndarray::arr1(&[C64::new(0.0, 0.0), C64::new(eps, 0.0)]))
    }

    fn mk_mode(orbital: usize, eta_plus: C64, eta_minus: C64, gamma_plus: C64) -> DissipatonMode {
        DissipatonMode {
            reservoir: "test".into(),
            orbital,
            kind: PoleKind::Spectral,
            eta_plus,
            eta_minus,
            gamma_plus,
            gamma_minus: gamma_plus.conj(),
        }
    }

    fn simple_open_generator() -> (Arc<SpaceIndex>, SparseGenerator, DissipatonSet) {
        let space = Arc::new(SpaceIndex::enumerate(1, 2, 2, true).unwrap());
        let set = DissipatonSet::new(vec![mk_mode(
            0,
            C64::new(0.4, 0.1),
            C64::new(0.35, -0.2),
            C64::new(1.0, 0.3),
        )])
        .unwrap();
        let gen = Generator::new(space.clone(), two_level_h(0.5), set.clone()).unwrap();
        (space, gen.build_sparse(), set)
    }

    #[test]
    fn coherence_phase_rotates_at_the_level_splitting() {
        let space = Arc::new(SpaceIndex::enumerate(1, 0, 0, false).unwrap());
        let eps = 0.8;
        let gen = Generator::new(space.clone(), two_level_h(eps), DissipatonSet::new(vec![]).unwrap())
            .unwrap()
            .build_sparse();
        let mut rho: Array2<C64> = Array2::zeros((2, 2));
        rho[(0, 0)] = C64::new(0.6, 0.0);
        rho[(1, 1)] = C64::new(0.4, 0.0);
        rho[(0, 1)] = C64::new(0.25, -0.1);
        rho[(1, 0)] = rho[(0, 1)].conj();
        let mut state = RdtVector::from_system_density(space.clone(), &rho, 0.0).unwrap();
        let t_end = 1.0;
        rk4_propagate(&gen, &mut state, t_end, 1e-3, |_| {}).unwrap();
        // d/dt ρ₀₁ = −i(H₀₀ − H₁₁) ρ₀₁ = +iε ρ₀₁.
        let expect = rho[(0, 1)] * C64::new(0.0, eps * t_end).exp();
        let got = state.get(Config { n_ket: 0, n_bra: 1, m_minus: 0, m_plus: 0 });
        assert!((got - expect).norm() < 1e-10, "{got:?} vs {expect:?}");
        // Diagonals and trace unchanged.
        let tr = trace0(&state);
        assert_abs_diff_eq!(tr.re, 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(tr.im, 0.0, epsilon = 1e-12);
        assert_eq!(state.time, t_end);
    }

    #[test]
    fn stepping_error_shrinks_at_fourth_order() {
        let (space, gen, _) = simple_open_generator();
        let mut rho: Array2<C64> = Array2::zeros((2, 2));
        rho[(0, 0)] = C64::new(1.0, 0.0);
        let run = |dt: f64| {
            let mut s =
                RdtVector::from_system_density(space.clone(), &rho, 0.0).unwrap();
            rk4_propagate(&gen, &mut s, 0.5, dt, |_| {}).unwrap();
            s
        };
        let fine = run(1e-4);
        let mid = run(4e-3);
        let coarse = run(8e-3);
        let err = |s: &RdtVector| {
            s.data
                .iter()
                .zip(fine.data.iter())
                .map(|(a, b)| (a - b).norm_sqr())
                .sum::<f64>()
                .sqrt()
        };
        let ratio = err(&coarse) / err(&mid);
        assert!(
            (10.0..24.0).contains(&ratio),
            "halving dt should cut the error ~16×, got {ratio}"
        );
    }

    #[test]
    fn partial_final_step_lands_exactly_on_t_end() {
        let (space, gen, _) = simple_open_generator();
        let mut rho: Array2<C64> = Array2::zeros((2, 2));
        rho[(0, 0)] = C64::new(1.0, 0.0);
        let mut s = RdtVector::from_system_density(space.clone(), &rho, 0.0).unwrap();
        let mut times = Vec::new();
        rk4_propagate(&gen, &mut s, 0.0105, 1e-3, |st| times.push(st.time)).unwrap();
        assert_eq!(times.len(), 12); // initial + 10 full steps + 1 partial
        assert_eq!(times[0], 0.0);
        assert_abs_diff_eq!(times[10], 0.010, epsilon = 1e-15);
        assert_eq!(*times.last().unwrap(), 0.0105);
        // Exact step times, no accumulation drift.
        for (k, &t) in times[..11].iter().enumerate() {
            assert_eq!(t, k as f64 * 1e-3);
        }
    }

    #[test]
    fn equilibrate_returns_immediately_on_stationary_states() {
        let space = Arc::new(SpaceIndex::enumerate(1, 0, 0, false).unwrap());
        let gen =
            Generator::new(space.clone(), two_level_h(0.9), DissipatonSet::new(vec![]).unwrap())
                .unwrap()
                .build_sparse();
        // Any diagonal state commutes with a diagonal Hamiltonian.
        let mut rho: Array2<C64> = Array2::zeros((2, 2));
        rho[(0, 0)] = C64::new(0.3, 0.0);
        rho[(1, 1)] = C64::new(0.7, 0.0);
        let mut s = RdtVector::from_system_density(space, &rho, 0.0).unwrap();
        let rep = equilibrate(&gen, &mut s, 1e-2, 1e-10, 10).unwrap();
        assert_eq!(rep.steps, 0);
        assert!(rep.residual < 1e-10);
    }

    #[test]
    fn equilibrate_errors_when_the_budget_is_too_small() {
        let (space, gen, _) = simple_open_generator();
        let mut rho: Array2<C64> = Array2::zeros((2, 2));
        rho[(0, 0)] = C64::new(1.0, 0.0);
        let mut s = RdtVector::from_system_density(space, &rho, 0.0).unwrap();
        assert!(equilibrate(&gen, &mut s, 1e-3, 1e-12, 3).is_err());
    }

    #[test]
    fn equilibrate_reaches_the_generators_stationary_state() {
        let (space, gen, _) = simple_open_generator();
        let mut rho: Array2<C64> = Array2::zeros((2, 2));
        rho[(0, 0)] = C64::new(1.0, 0.0);
        let mut s = RdtVector::from_system_density(space.clone(), &rho, 0.0).unwrap();
        let rep = equilibrate(&gen, &mut s, 5e-3, 1e-9, 2_000_000).unwrap();
        assert!(rep.residual < 1e-9);
        // Must agree with the algebraic steady state.
        let ss = steady_state(&gen, &space, None, SteadyOptions::default()).unwrap();
        let tr = trace0(&s);
        for r in 0..space.len() {
            let a = s.data[r] / tr;
            let b = ss.state.data[r];
            assert!((a - b).norm() < 1e-6, "rank {r}: {a:?} vs {b:?}");
        }
    }

    #[test]
    fn cgls_and_dense_steady_states_agree() {
        let (space, gen, _) = simple_open_generator();
        let it = steady_state(&gen, &space, None, SteadyOptions::default()).unwrap();
        assert!(matches!(it.path, SteadyPath::ConjugateGradient { .. }));
        assert!(it.residual < 1e-9);
        let dn = steady_state(
            &gen,
            &space,
            None,
            SteadyOptions { force_dense: true, ..SteadyOptions::default() },
        )
        .unwrap();
        assert_eq!(dn.path, SteadyPath::DenseSvd);
        for r in 0..space.len() {
            assert!((it.state.data[r] - dn.state.data[r]).norm() < 1e-7);
        }
        let tr = trace0(&it.state);
        assert_abs_diff_eq!(tr.re, 1.0, epsilon = 1e-10);
        // Physical occupation.
        let n0 = occupancy(&it.state, 0).unwrap();
        assert!((0.0..=1.0).contains(&n0), "n = {n0}");
    }

    #[test]
    fn degenerate_stationary_spaces_are_rejected() {
        // A closed two-level system has every diagonal mixture stationary.
        let space = Arc::new(SpaceIndex::enumerate(1, 0, 0, false).unwrap());
        let gen =
            Generator::new(space.clone(), two_level_h(0.9), DissipatonSet::new(vec![]).unwrap())
                .unwrap()
                .build_sparse();
        let err = steady_state(
            &gen,
            &space,
            None,
            SteadyOptions { force_dense: true, ..SteadyOptions::default() },
        );
        assert!(err.is_err());
    }

    #[test]
    fn snapshot_roundtrip_is_bit_exact() {
        let (space, gen, _) = simple_open_generator();
        let mut rho: Array2<C64> = Array2::zeros((2, 2));
        rho[(0, 0)] = C64::new(0.25, 0.0);
        rho[(1, 1)] = C64::new(0.75, 0.0);
        let mut s = RdtVector::from_system_density(space.clone(), &rho, 0.0).unwrap();
        rk4_propagate(&gen, &mut s, 0.1, 1e-3, |_| {}).unwrap();
        let mut buf = Vec::new();
        s.write_snapshot(&mut buf).unwrap();
        let back =
            RdtVector::read_snapshot(space.clone(), s.time, &mut buf.as_slice()).unwrap();
        for r in 0..space.len() {
            assert_eq!(s.data[r], back.data[r], "rank {r} drifted through CSV");
        }
        // Corrupt header is rejected.
        let mut bad = b"rank,re\n0,1,0\n".to_vec();
        assert!(RdtVector::read_snapshot(space.clone(), 0.0, &mut bad.as_slice()).is_err());
        bad = b"rank,re,im\n0,1,0\n".to_vec();
        assert!(RdtVector::read_snapshot(space, 0.0, &mut bad.as_slice()).is_err());
    }

    #[test]
    fn parity_mixing_initial_states_are_rejected() {
        let space = Arc::new(SpaceIndex::enumerate(2, 2, 1, true).unwrap());
        let mut rho: Array2<C64> = Array2::zeros((4, 4));
        rho[(0, 0)] = C64::new(0.5, 0.0);
        rho[(0, 1)] = C64::new(0.3, 0.0); // even ↔ odd coherence
        assert!(RdtVector::from_system_density(space.clone(), &rho, 0.0).is_err());
        rho[(0, 1)] = C64::new(0.0, 0.0);
        rho[(3, 3)] = C64::new(0.5, 0.0);
        assert!(RdtVector::from_system_density(space, &rho, 0.0).is_ok());
    }
}
