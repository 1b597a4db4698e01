//! Physical readouts from reduced-density-tensor coefficients.
//!
//! Every observable here needs only the lowest tiers of the tensor: the
//! dissipaton-free block (the reduced system density matrix, unnormalized)
//! and, for transport quantities, the bra-side single-excitation slices.
//! Both are gauge-invariant under the storage phase described in
//! [`crate::liouvillian`]. Readers are abstracted behind [`RdtRead`] so the
//! same functions serve dense coefficient vectors and variational states.

use ndarray::Array2;
use ndarray_linalg::{Eigh, UPLO};
use std::sync::Arc;

use crate::bath::DissipatonSet;
use crate::models::{creation_matrix, spin_dot_spin};
use crate::space::{Config, SpaceIndex};
use crate::{Error, Result, C64};

/// Read access to tensor components; absent components read as zero.
pub trait RdtRead {
    fn space(&self) -> &Arc<SpaceIndex>;
    fn get(&self, cfg: Config) -> C64;
}

/// Prefactor relating bra-side single-excitation slices to the particle
/// current into the system (and, via the real part, to the system–reservoir
/// coupling energy).
const SLICE_PREFACTOR: f64 = -2.0;

/// Unnormalized reduced system density matrix ρ₀[(n, n′)] = ρ(n, n′; 0, 0).
pub fn rho0_matrix(r: &dyn RdtRead) -> Array2<C64> {
    let n_s = r.space().dims().n_s;
    let dim = 1usize << n_s;
    let mut m = Array2::zeros((dim, dim));
    for a in 0..dim {
        for b in 0..dim {
            m[(a, b)] = r.get(Config {
                n_ket: a as u16,
                n_bra: b as u16,
                m_minus: 0,
                m_plus: 0,
            });
        }
    }
    m
}

/// Trace of the dissipaton-free block.
pub fn trace0(r: &dyn RdtRead) -> C64 {
    let n_s = r.space().dims().n_s;
    let mut tr = C64::new(0.0, 0.0);
    for n in 0..(1u16 << n_s) {
        tr += r.get(Config { n_ket: n, n_bra: n, m_minus: 0, m_plus: 0 });
    }
    tr
}

fn checked_trace0(r: &dyn RdtRead) -> Result<C64> {
    let tr = trace0(r);
    if tr.norm() < 1e-14 {
        return Err(Error::Observable("state has (near-)zero trace".into()));
    }
    Ok(tr)
}

/// Occupation ⟨n̂_ν⟩ of one system orbital.
pub fn occupancy(r: &dyn RdtRead, nu: usize) -> Result<f64> {
    let n_s = r.space().dims().n_s;
    if nu >= n_s {
        return Err(Error::Observable(format!("orbital {nu} out of range")));
    }
    let tr = checked_trace0(r)?;
    let mut acc = C64::new(0.0, 0.0);
    for n in 0..(1u16 << n_s) {
        if n >> nu & 1 == 1 {
            acc += r.get(Config { n_ket: n, n_bra: n, m_minus: 0, m_plus: 0 });
        }
    }
    Ok((acc / tr).re)
}

/// Total occupation ⟨N̂⟩ = Σ_ν ⟨n̂_ν⟩.
pub fn total_occupancy(r: &dyn RdtRead) -> Result<f64> {
    let n_s = r.space().dims().n_s;
    let tr = checked_trace0(r)?;
    let mut acc = C64::new(0.0, 0.0);
    for n in 0..(1u16 << n_s) {
        acc += r.get(Config { n_ket: n, n_bra: n, m_minus: 0, m_plus: 0 })
            * C64::new(n.count_ones() as f64, 0.0);
    }
    Ok((acc / tr).re)
}

/// Parity-dressed transpose of the bra-side single-excitation slice of mode
/// `j`: F_j[(x, y)] = (−1)^{par(x)} · ρ(n̄ = y, n̄′ = x; 0̄, m̄⁺ = e_j).
pub fn mode_slice(r: &dyn RdtRead, j: usize) -> Array2<C64> {
    let dims = r.space().dims();
    assert!(j < dims.n_modes, "mode index out of range");
    let dim = 1usize << dims.n_s;
    let mut f = Array2::zeros((dim, dim));
    for x in 0..dim {
        let sign = if (x as u16).count_ones() % 2 == 0 { 1.0 } else { -1.0 };
        for y in 0..dim {
            f[(x, y)] = r.get(Config {
                n_ket: y as u16,
                n_bra: x as u16,
                m_minus: 0,
                m_plus: 1 << j,
            }) * sign;
        }
    }
    f
}

/// Normalized slice overlaps z_j = tr_S[ĉ†_{ν_j} F_j] / tr₀ for every mode.
fn slice_overlaps(r: &dyn RdtRead, modes: &DissipatonSet) -> Result<Vec<C64>> {
    let dims = r.space().dims();
    if modes.n_modes() != dims.n_modes {
        return Err(Error::Observable(format!(
            "mode set has {} modes, space expects {}",
            modes.n_modes(),
            dims.n_modes
        )));
    }
    let tr = checked_trace0(r)?;
    let mut out = Vec::with_capacity(dims.n_modes);
    for (j, m) in modes.modes().iter().enumerate() {
        let f = mode_slice(r, j);
        let cd = creation_matrix(dims.n_s, m.orbital);
        let prod = cd.dot(&f);
        let mut t = C64::new(0.0, 0.0);
        for a in 0..prod.nrows() {
            t += prod[(a, a)];
        }
        out.push(t / tr);
    }
    Ok(out)
}

/// Particle current flowing from the named reservoir into the system.
pub fn current(r: &dyn RdtRead, modes: &DissipatonSet, reservoir: &str) -> Result<f64> {
    let z = slice_overlaps(r, modes)?;
    let mut known = false;
    let mut acc = 0.0;
    for (j, m) in modes.modes().iter().enumerate() {
        if m.reservoir == reservoir {
            known = true;
            acc += z[j].im;
        }
    }
    if !known {
        return Err(Error::Observable(format!("no modes belong to reservoir '{reservoir}'")));
    }
    Ok(SLICE_PREFACTOR * acc)
}

/// System–reservoir coupling energy ⟨Ĥ_coupling⟩, summed over all modes.
///
/// The sign pairing with [`current`] is that of a single physical amplitude
/// w_j = conj(z_j): the current is −2·Σ Im z_j and the coupling energy
/// +2·Σ Re z_j. Both are pinned empirically — the current by exact particle
/// conservation and the two-terminal quadrature oracle, the energy by its
/// negativity in every equilibrium state (binding to the band lowers the
/// energy), enforced in the resonant-level integration tests.
pub fn hybridization_energy(r: &dyn RdtRead, modes: &DissipatonSet) -> Result<f64> {
    let z = slice_overlaps(r, modes)?;
    Ok(-SLICE_PREFACTOR * z.iter().map(|v| v.re).sum::<f64>())
}

/// ⟨Ŝ₁·Ŝ₂⟩ of the two impurity spins (four-orbital systems only).
pub fn spin_correlation(r: &dyn RdtRead) -> Result<f64> {
    if r.space().dims().n_s != 4 {
        return Err(Error::Observable("spin correlation requires a four-orbital system".into()));
    }
    let tr = checked_trace0(r)?;
    let rho = rho0_matrix(r);
    let prod = spin_dot_spin().dot(&rho);
    let mut t = C64::new(0.0, 0.0);
    for a in 0..prod.nrows() {
        t += prod[(a, a)];
    }
    Ok((t / tr).re)
}

/// ⟨Ĥ_S⟩ for a given system Hamiltonian.
pub fn system_energy(r: &dyn RdtRead, h: &Array2<C64>) -> Result<f64> {
    let tr = checked_trace0(r)?;
    let rho = rho0_matrix(r);
    if h.nrows() != rho.nrows() {
        return Err(Error::Observable("Hamiltonian dimension mismatch".into()));
    }
    let prod = h.dot(&rho);
    let mut t = C64::new(0.0, 0.0);
    for a in 0..prod.nrows() {
        t += prod[(a, a)];
    }
    Ok((t / tr).re)
}

/// Von Neumann entropy −tr[ρ ln ρ] of the normalized reduced density matrix.
pub fn entropy_vn(r: &dyn RdtRead) -> Result<f64> {
    let tr = checked_trace0(r)?;
    let rho = rho0_matrix(r).mapv(|z| z / tr);
    entropy_of_density_matrix(&rho)
}

/// Entropy of an explicit density matrix. The matrix is Hermitized first;
/// eigenvalues below −10⁻⁶ are a hard error, small negative dust is clipped.
pub fn entropy_of_density_matrix(rho: &Array2<C64>) -> Result<f64> {
    let herm = (rho + &rho.t().mapv(|z| z.conj())) * C64::new(0.5, 0.0);
    let (eigs, _) = herm
        .eigh(UPLO::Lower)
        .map_err(|e| Error::Observable(format!("eigenvalue solver failed: {e}")))?;
    let mut ps = Vec::with_capacity(eigs.len());
    for &l in eigs.iter() {
        if l < -1e-6 {
            return Err(Error::Observable(format!(
                "density matrix has a negative eigenvalue {l:.3e}"
            )));
        }
        ps.push(l.max(0.0));
    }
    let z: f64 = ps.iter().sum();
    if z <= 0.0 {
        return Err(Error::Observable("density matrix has zero trace".into()));
    }
    let mut s = 0.0;
    for p in ps {
        let p = p / z;
        if p > 0.0 {
            s -= p * p.ln();
        }
    }
    Ok(s)
}

/// Five-point centred first derivative on a uniform grid; the result is
/// aligned with `ts[2..ts.len()−2]`.
pub fn stencil_derivative_5pt(ts: &[f64], ys: &[f64]) -> Result<Vec<f64>> {
    if ts.len() != ys.len() || ts.len() < 5 {
        return Err(Error::Observable("need at least five samples on matching grids".into()));
    }
    let h = ts[1] - ts[0];
    if h <= 0.0 {
        return Err(Error::Observable("time grid must increase".into()));
    }
    for i in 1..ts.len() {
        if ((ts[i] - ts[i - 1]) - h).abs() > 1e-9 * h.max(1.0) {
            return Err(Error::Observable("time grid must be uniform".into()));
        }
    }
    let mut d = Vec::with_capacity(ts.len() - 4);
    for i in 2..ts.len() - 2 {
        d.push((-ys[i + 2] + 8.0 * ys[i + 1] - 8.0 * ys[i - 1] + ys[i - 2]) / (12.0 * h));
    }
    Ok(d)
}

fn interp_linear(ts: &[f64], ys: &[f64], t: f64) -> f64 {
    match ts.binary_search_by(|x| x.partial_cmp(&t).unwrap()) {
        Ok(i) => ys[i],
        Err(i) => {
            let i = i.clamp(1, ts.len() - 1);
            let w = (t - ts[i - 1]) / (ts[i] - ts[i - 1]);
            ys[i - 1] * (1.0 - w) + ys[i] * w
        }
    }
}

/// Relative L¹ deviation of a test curve from a reference curve,
/// ∫|test − ref| dt / ∫|ref| dt over the overlap of both domains from
/// `t_from` onward, with linear-interpolation resampling onto the reference
/// grid.
pub fn integral_error(
    ts_test: &[f64],
    ys_test: &[f64],
    ts_ref: &[f64],
    ys_ref: &[f64],
    t_from: f64,
) -> Result<f64> {
    if ts_test.len() != ys_test.len() || ts_ref.len() != ys_ref.len() {
        return Err(Error::Observable("curve lengths do not match their grids".into()));
    }
    if ts_test.len() < 2 || ts_ref.len() < 2 {
        return Err(Error::Observable("curves need at least two samples".into()));
    }
    let t_hi = ts_test.last().unwrap().min(*ts_ref.last().unwrap());
    let t_lo = t_from.max(ts_test[0]).max(ts_ref[0]);
    if t_hi <= t_lo {
        return Err(Error::Observable("curves do not overlap beyond the start time".into()));
    }
    let mut grid: Vec<f64> = vec![t_lo];
    for &t in ts_ref.iter() {
        if t > t_lo && t < t_hi {
            grid.push(t);
        }
    }
    grid.push(t_hi);
    let mut num = 0.0;
    let mut den = 0.0;
    for w in grid.windows(2) {
        let (a, b) = (w[0], w[1]);
        let da = (interp_linear(ts_test, ys_test, a) - interp_linear(ts_ref, ys_ref, a)).abs();
        let db = (interp_linear(ts_test, ys_test, b) - interp_linear(ts_ref, ys_ref, b)).abs();
        let ra = interp_linear(ts_ref, ys_ref, a).abs();
        let rb = interp_linear(ts_ref, ys_ref, b).abs();
        num += 0.5 * (da + db) * (b - a);
        den += 0.5 * (ra + rb) * (b - a);
    }
    if den < 1e-300 {
        return Err(Error::Observable("reference curve is identically zero on the window".into()));
    }
    Ok(num / den)
}
