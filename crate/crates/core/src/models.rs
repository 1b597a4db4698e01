//! System models: impurity Hamiltonians and fermionic Fock-space operators.
//!
//! The system Fock basis is indexed by occupation bitmasks: basis state `n`
//! has orbital ν occupied iff bit ν of `n` is set. Annihilation operators
//! carry Jordan–Wigner signs counting occupied orbitals below the target,
//! ⟨n − e_ν| ĉ_ν |n⟩ = (−1)^{Σ_{μ<ν} n_μ}, which makes the matrices satisfy
//! the canonical anticommutation relations exactly.

use ndarray::Array2;

use crate::{Error, Result, C64};

/// Which side of the sudden parameter switch a Hamiltonian belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Epoch {
    Pre,
    Post,
}

/// Dimension of the Fock space on `n_s` orbitals.
pub fn fock_dim(n_s: usize) -> usize {
    1 << n_s
}

/// Matrix of the annihilation operator ĉ_ν with Jordan–Wigner sign.
pub fn annihilation_matrix(n_s: usize, nu: usize) -> Array2<C64> {
    assert!(nu < n_s, "orbital index out of range");
    let dim = fock_dim(n_s);
    let mut a = Array2::zeros((dim, dim));
    let below = (1usize << nu) - 1;
    for src in 0..dim {
        if src >> nu & 1 == 1 {
            let sign = if (src & below).count_ones() % 2 == 0 { 1.0 } else { -1.0 };
            a[(src ^ (1 << nu), src)] = C64::new(sign, 0.0);
        }
    }
    a
}

/// Matrix of the creation operator ĉ†_ν.
pub fn creation_matrix(n_s: usize, nu: usize) -> Array2<C64> {
    annihilation_matrix(n_s, nu).t().mapv(|z| z.conj())
}

/// Diagonal occupation-number matrix n̂_ν = ĉ†_ν ĉ_ν.
pub fn number_matrix(n_s: usize, nu: usize) -> Array2<C64> {
    let dim = fock_dim(n_s);
    Array2::from_diag(&ndarray::Array1::from_iter(
        (0..dim).map(|n| C64::new((n >> nu & 1) as f64, 0.0)),
    ))
}

/// Total particle-number matrix N̂ = Σ_ν n̂_ν.
pub fn total_number_matrix(n_s: usize) -> Array2<C64> {
    let dim = fock_dim(n_s);
    Array2::from_diag(&ndarray::Array1::from_iter(
        (0..dim).map(|n| C64::new(n.count_ones() as f64, 0.0)),
    ))
}

/// Single impurity with two spin orbitals (↑ = 0, ↓ = 1) and an interaction
/// quench: H = ε(n̂_↑ + n̂_↓) + U n̂_↑ n̂_↓ with (ε, U) switching from
/// (eps0, u0) to (eps0 + d_eps, u0 + d_u) at the quench time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AndersonSpec {
    pub eps0: f64,
    pub u0: f64,
    pub d_eps: f64,
    pub d_u: f64,
}

/// Two impurities, each with two spin orbitals (1↑ = 0, 1↓ = 1, 2↑ = 2,
/// 2↓ = 3): H = ε₀ Σ n̂ + U₀ (n̂_{1↑}n̂_{1↓} + n̂_{2↑}n̂_{2↓}), and the quench
/// switches on an exchange coupling −J Ŝ₁·Ŝ₂ between the impurity spins.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TwoImpuritySpec {
    pub eps0: f64,
    pub u0: f64,
    pub j_exchange: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ModelSpec {
    Anderson(AndersonSpec),
    TwoImpurity(TwoImpuritySpec),
}

impl ModelSpec {
    /// Number of system orbitals.
    pub fn n_s(&self) -> usize {
        match self {
            ModelSpec::Anderson(_) => 2,
            ModelSpec::TwoImpurity(_) => 4,
        }
    }

    /// System Hamiltonian for the given epoch.
    pub fn hamiltonian(&self, epoch: Epoch) -> Array2<C64> {
        match self {
            ModelSpec::Anderson(a) => {
                let (eps, u) = match epoch {
                    Epoch::Pre => (a.eps0, a.u0),
                    Epoch::Post => (a.eps0 + a.d_eps, a.u0 + a.d_u),
                };
                let n0 = number_matrix(2, 0);
                let n1 = number_matrix(2, 1);
                (&n0 + &n1) * C64::new(eps, 0.0) + n0.dot(&n1) * C64::new(u, 0.0)
            }
            ModelSpec::TwoImpurity(t) => {
                let mut h: Array2<C64> = Array2::zeros((16, 16));
                for nu in 0..4 {
                    h = h + number_matrix(4, nu) * C64::new(t.eps0, 0.0);
                }
                let pair = |up: usize, dn: usize| number_matrix(4, up).dot(&number_matrix(4, dn));
                h = h + (pair(0, 1) + pair(2, 3)) * C64::new(t.u0, 0.0);
                if epoch == Epoch::Post {
                    h = h - spin_dot_spin() * C64::new(t.j_exchange, 0.0);
                }
                h
            }
        }
    }

    /// Validates the couplings a reservoir wants to attach to this model.
    pub fn check_orbitals(&self, orbitals: &[usize]) -> Result<()> {
        for &nu in orbitals {
            if nu >= self.n_s() {
                return Err(Error::Model(format!(
                    "coupled orbital {nu} out of range for a {}-orbital model",
                    self.n_s()
                )));
            }
        }
        Ok(())
    }
}

/// Ŝ₁·Ŝ₂ of the two impurity spins in the four-orbital model,
/// ½(Ŝ₁⁺Ŝ₂⁻ + Ŝ₁⁻Ŝ₂⁺) + Ŝ₁ᶻŜ₂ᶻ.
pub fn spin_dot_spin() -> Array2<C64> {
    let cu = |nu| creation_matrix(4, nu);
    let an = |nu| annihilation_matrix(4, nu);
    let s1p = cu(0).dot(&an(1));
    let s2p = cu(2).dot(&an(3));
    let s1m = s1p.t().mapv(|z: C64| z.conj());
    let s2m = s2p.t().mapv(|z: C64| z.conj());
    let s1z = (number_matrix(4, 0) - number_matrix(4, 1)) * C64::new(0.5, 0.0);
    let s2z = (number_matrix(4, 2) - number_matrix(4, 3)) * C64::new(0.5, 0.0);
    (s1p.dot(&s2m) + s1m.dot(&s2p)) * C64::new(0.5, 0.0) + s1z.dot(&s2z)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray_linalg::{Eigh, UPLO};

    fn frob(a: &Array2<C64>) -> f64 {
        a.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
    }

    #[test]
    fn annihilation_matrices_anticommute_canonically() {
        for n_s in 1..=4 {
            let dim = fock_dim(n_s);
            let id: Array2<C64> = Array2::eye(dim);
            for nu in 0..n_s {
                for mu in 0..n_s {
                    let a = annihilation_matrix(n_s, nu);
                    let b = annihilation_matrix(n_s, mu);
                    let bdag = creation_matrix(n_s, mu);
                    let acc = a.dot(&bdag) + bdag.dot(&a);
                    let expect = if nu == mu { id.clone() } else { Array2::zeros((dim, dim)) };
                    assert!(frob(&(&acc - &expect)) < 1e-14, "{{c,c†}} at ({nu},{mu})");
                    let aa = a.dot(&b) + b.dot(&a);
                    assert!(frob(&aa) < 1e-14, "{{c,c}} at ({nu},{mu})");
                }
            }
        }
    }

    #[test]
    fn jordan_wigner_sign_counts_lower_orbitals() {
        // ĉ_1 |11⟩ = −|10⟩ because orbital 0 is occupied below orbital 1.
        let a1 = annihilation_matrix(2, 1);
        assert_abs_diff_eq!(a1[(0b01, 0b11)].re, -1.0, epsilon = 1e-15);
        // ĉ_0 |11⟩ = +|01⟩: nothing below orbital 0.
        let a0 = annihilation_matrix(2, 0);
        assert_abs_diff_eq!(a0[(0b10, 0b11)].re, 1.0, epsilon = 1e-15);
        // ĉ_2 |111⟩ = (+1)(−1)^2 ... two occupied below → +.
        let a2 = annihilation_matrix(3, 2);
        assert_abs_diff_eq!(a2[(0b011, 0b111)].re, 1.0, epsilon = 1e-15);
        let a2b = annihilation_matrix(3, 2);
        // ĉ_2 |101⟩ = −|001⟩: one occupied below.
        assert_abs_diff_eq!(a2b[(0b001, 0b101)].re, -1.0, epsilon = 1e-15);
    }

    #[test]
    fn number_matrix_is_projector_product() {
        for n_s in 1..=3 {
            for nu in 0..n_s {
                let n = number_matrix(n_s, nu);
                let built = creation_matrix(n_s, nu).dot(&annihilation_matrix(n_s, nu));
                assert!(frob(&(&n - &built)) < 1e-14);
            }
        }
    }

    #[test]
    fn anderson_spectrum_before_and_after_the_switch() {
        let m = ModelSpec::Anderson(AndersonSpec { eps0: 2.0, u0: 4.0, d_eps: -7.0, d_u: 6.0 });
        let pre = m.hamiltonian(Epoch::Pre);
        let post = m.hamiltonian(Epoch::Post);
        // Diagonal in the Fock basis: |00⟩, |10⟩, |01⟩, |11⟩.
        let diag = |h: &Array2<C64>| (0..4).map(|i| h[(i, i)].re).collect::<Vec<_>>();
        assert_eq!(diag(&pre), vec![0.0, 2.0, 2.0, 8.0]);
        assert_eq!(diag(&post), vec![0.0, -5.0, -5.0, 0.0]);
        for h in [&pre, &post] {
            for i in 0..4 {
                for j in 0..4 {
                    if i != j {
                        assert_eq!(h[(i, j)], C64::new(0.0, 0.0));
                    }
                }
            }
        }
    }

    #[test]
    fn spin_dot_spin_spectrum_is_triplet_singlet_and_zeros() {
        let ss = spin_dot_spin();
        // Hermitian.
        let adj = ss.t().mapv(|z: C64| z.conj());
        assert!(frob(&(&ss - &adj)) < 1e-14);
        let (eigs, _) = ss.eigh(UPLO::Lower).unwrap();
        let mut e: Vec<f64> = eigs.to_vec();
        e.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert_abs_diff_eq!(e[0], -0.75, epsilon = 1e-12);
        for v in &e[1..13] {
            assert_abs_diff_eq!(*v, 0.0, epsilon = 1e-12);
        }
        for v in &e[13..16] {
            assert_abs_diff_eq!(*v, 0.25, epsilon = 1e-12);
        }
    }

    #[test]
    fn hamiltonians_conserve_total_particle_number() {
        let models = [
            ModelSpec::Anderson(AndersonSpec { eps0: 2.0, u0: 4.0, d_eps: -7.0, d_u: 6.0 }),
            ModelSpec::TwoImpurity(TwoImpuritySpec { eps0: -6.0, u0: 12.0, j_exchange: 8.0 }),
        ];
        for m in models {
            let ntot = total_number_matrix(m.n_s());
            for epoch in [Epoch::Pre, Epoch::Post] {
                let h = m.hamiltonian(epoch);
                let comm = h.dot(&ntot) - ntot.dot(&h);
                assert!(frob(&comm) < 1e-12, "{m:?} {epoch:?}");
                let adj = h.t().mapv(|z: C64| z.conj());
                assert!(frob(&(&h - &adj)) < 1e-12);
            }
        }
    }

    #[test]
    fn exchange_quench_splits_singlet_from_triplet() {
        let m = ModelSpec::TwoImpurity(TwoImpuritySpec { eps0: -6.0, u0: 12.0, j_exchange: 8.0 });
        let h = m.hamiltonian(Epoch::Post);
        // In the (1↑1↓ singly occupied each) sector the exchange term adds
        // −J/4 to the triplet and +3J/4 to the singlet on top of 2ε₀.
        let (eigs, _) = h.eigh(UPLO::Lower).unwrap();
        let mut e = eigs.to_vec();
        e.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let base = 2.0 * -6.0;
        assert!(e.iter().any(|&x| (x - (base - 2.0)).abs() < 1e-10), "triplet at 2ε₀ − J/4");
        assert!(e.iter().any(|&x| (x - (base + 6.0)).abs() < 1e-10), "singlet at 2ε₀ + 3J/4");
        assert!(m.check_orbitals(&[0, 1, 2, 3]).is_ok());
        assert!(m.check_orbitals(&[4]).is_err());
    }
}
