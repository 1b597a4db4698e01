//! Cross-checks the bit-kernel generator against an independent dense
//! construction that uses nothing but elementary fermionic operator matrices
//! on the extended Fock space (system orbitals first, then one auxiliary
//! mode per dissipaton, with Jordan–Wigner strings over the whole chain).
//!
//! The dense route multiplies explicit matrices for every term of the
//! equation of motion and reads the result off matrix elements; the kernel
//! route uses packed-bit index arithmetic and sign masks. Agreement pins the
//! operator ordering, every Jordan–Wigner string, and the truncation rule.

use dqn_core::bath::{DissipatonMode, DissipatonSet, PoleKind};
use dqn_core::liouvillian::Generator;
use dqn_core::models::{annihilation_matrix, creation_matrix, ModelSpec, AndersonSpec, Epoch};
use dqn_core::space::{Config, SpaceIndex};
use dqn_core::C64;
use ndarray::{Array1, Array2};
use std::sync::Arc;

const I: C64 = C64::new(0.0, 1.0);

fn dag(m: &Array2<C64>) -> Array2<C64> {
    m.t().mapv(|z| z.conj())
}

fn mode(orbital: usize, eta_plus: C64, eta_minus: C64, gamma_plus: C64) -> DissipatonMode {
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

/// Extended-space (row, column) of a configuration: ket register n̄ with the
/// ket-side auxiliary bits m̄⁻, bra register n̄′ with the bra-side bits m̄⁺.
fn ext_index(cfg: Config, n_s: usize) -> (usize, usize) {
    (
        (cfg.n_ket as usize) | (cfg.m_minus as usize) << n_s,
        (cfg.n_bra as usize) | (cfg.m_plus as usize) << n_s,
    )
}

/// Dense superoperator on the enumerated space, built from matrix products.
fn oracle_superop(h_sys: &Array2<C64>, set: &DissipatonSet, space: &SpaceIndex) -> Array2<C64> {
    let dims = space.dims();
    let (n_s, n_modes) = (dims.n_s, dims.n_modes);
    let d = 1usize << (n_s + n_modes);
    let n = space.len();

    let c: Vec<Array2<C64>> = (0..n_s).map(|nu| annihilation_matrix(n_s + n_modes, nu)).collect();
    let b: Vec<Array2<C64>> = (0..n_modes)
        .map(|j| annihilation_matrix(n_s + n_modes, n_s + j))
        .collect();

    // A system operator embeds without auxiliary-mode strings because the
    // system orbitals sit at the bottom of the Jordan–Wigner chain.
    let smask = (1usize << n_s) - 1;
    let mut h_ext: Array2<C64> = Array2::zeros((d, d));
    for i in 0..d {
        for k in 0..d {
            if i >> n_s == k >> n_s {
                h_ext[(i, k)] = h_sys[(i & smask, k & smask)];
            }
        }
    }

    let mut sup: Array2<C64> = Array2::zeros((n, n));
    for src_rank in 0..n {
        let (si, sj) = ext_index(space.config_at(src_rank), n_s);
        let mut e: Array2<C64> = Array2::zeros((d, d));
        e[(si, sj)] = C64::new(1.0, 0.0);

        let mut out = (h_ext.dot(&e) - e.dot(&h_ext)) * (-I);
        for (jm, m) in set.modes().iter().enumerate() {
            let bb = &b[jm];
            let bd = dag(bb);
            let cc = c[m.orbital].clone();
            let cd = dag(&cc);
            let nj = bd.dot(bb);
            out = out - nj.dot(&e) * m.gamma_minus - e.dot(&nj) * m.gamma_plus;
            let sweep = cd.dot(&bb.dot(&e)) - bb.dot(&e.dot(&cd)) + cc.dot(&e.dot(&bd))
                - e.dot(&bd.dot(&cc));
            out = out - sweep * I;
            let up = cc.dot(&bd.dot(&e)) * (-m.eta_minus)
                + bd.dot(&e.dot(&cc)) * (-m.eta_plus.conj());
            out = out - up * I;
            let dn = cd.dot(&e.dot(bb)) * m.eta_plus + e.dot(&bb.dot(&cd)) * m.eta_minus.conj();
            out = out - dn * I;
        }

        for out_rank in 0..n {
            let (oi, oj) = ext_index(space.config_at(out_rank), n_s);
            sup[(out_rank, src_rank)] = out[(oi, oj)];
        }
    }

    // Stored components are gauged by the diagonal phase i^{k(s)},
    // k(s) = ⌊M⁻/2⌋ + ⌊M⁺/2⌋, relative to bare matrix elements; conjugate
    // the operator construction by the same diagonal.
    let k = |cfg: Config| (cfg.m_minus.count_ones() / 2 + cfg.m_plus.count_ones() / 2) as i32;
    for r in 0..n {
        let kr = k(space.config_at(r));
        for s in 0..n {
            let d = (k(space.config_at(s)) - kr).rem_euclid(4);
            let phase = [C64::new(1.0, 0.0), I, C64::new(-1.0, 0.0), -I][d as usize];
            sup[(r, s)] *= phase;
        }
    }
    sup
}

fn compare_case(h_sys: Array2<C64>, set: DissipatonSet, l: usize, filter: bool) {
    let n_s = h_sys.nrows().trailing_zeros() as usize;
    let space = Arc::new(SpaceIndex::enumerate(n_s, set.n_e(), l, filter).unwrap());
    let oracle = oracle_superop(&h_sys, &set, &space);
    let gen = Generator::new(space.clone(), h_sys, set).unwrap();

    let n = space.len();
    let mut worst = 0.0f64;
    for src in 0..n {
        let mut e: Array1<C64> = Array1::zeros(n);
        e[src] = C64::new(1.0, 0.0);
        let got = gen.apply(&e);
        for r in 0..n {
            worst = worst.max((got[r] - oracle[(r, src)]).norm());
        }
    }
    assert!(worst < 1e-13, "matrix-free apply deviates from oracle by {worst:.3e}");

    let dense = gen.build_sparse().to_dense();
    let mut worst_sp = 0.0f64;
    for r in 0..n {
        for s in 0..n {
            worst_sp = worst_sp.max((dense[(r, s)] - oracle[(r, s)]).norm());
        }
    }
    assert!(worst_sp < 1e-13, "sparse build deviates from oracle by {worst_sp:.3e}");
}

#[test]
fn single_mode_single_orbital_full_tier() {
    let h = Array2::from_diag(&ndarray::arr1(&[C64::new(0.0, 0.0), C64::new(0.7, 0.0)]));
    let set = DissipatonSet::new(vec![mode(
        0,
        C64::new(0.3, -0.2),
        C64::new(-0.1, 0.45),
        C64::new(0.8, 0.3),
    )])
    .unwrap();
    compare_case(h, set, 2, false);
}

#[test]
fn truncation_drops_only_sources_above_the_tier_cap() {
    let h = Array2::from_diag(&ndarray::arr1(&[C64::new(0.0, 0.0), C64::new(0.7, 0.0)]));
    let set = DissipatonSet::new(vec![mode(
        0,
        C64::new(0.3, -0.2),
        C64::new(-0.1, 0.45),
        C64::new(0.8, 0.3),
    )])
    .unwrap();
    compare_case(h, set, 1, false);
}

#[test]
fn two_modes_on_distinct_orbitals_with_hopping() {
    let m = ModelSpec::Anderson(AndersonSpec { eps0: 2.0, u0: 4.0, d_eps: -7.0, d_u: 6.0 });
    let hop = creation_matrix(2, 0).dot(&annihilation_matrix(2, 1));
    let hop = (&hop + &dag(&hop)) * C64::new(0.4, 0.0);
    let h = m.hamiltonian(Epoch::Post) + hop;
    let set = DissipatonSet::new(vec![
        mode(0, C64::new(0.25, 0.15), C64::new(-0.3, 0.05), C64::new(0.6, 0.1)),
        mode(1, C64::new(-0.12, 0.4), C64::new(0.2, 0.33), C64::new(1.1, -0.4)),
    ])
    .unwrap();
    compare_case(h, set, 2, true);
}

#[test]
fn two_modes_sharing_one_orbital_exercise_exchange_strings() {
    let h = Array2::from_diag(&ndarray::arr1(&[C64::new(0.0, 0.0), C64::new(-0.3, 0.0)]));
    let set = DissipatonSet::new(vec![
        mode(0, C64::new(0.3, -0.2), C64::new(-0.1, 0.45), C64::new(0.5, 0.2)),
        mode(0, C64::new(-0.05, 0.17), C64::new(0.4, -0.28), C64::new(0.9, -0.6)),
    ])
    .unwrap();
    compare_case(h, set, 2, false);
}

#[test]
fn three_modes_mixed_orbitals_in_a_filtered_space() {
    let m = ModelSpec::Anderson(AndersonSpec { eps0: -1.0, u0: 3.0, d_eps: 0.0, d_u: 0.0 });
    let hop = creation_matrix(2, 0).dot(&annihilation_matrix(2, 1));
    let hop = (&hop + &dag(&hop)) * C64::new(-0.25, 0.0);
    let h = m.hamiltonian(Epoch::Pre) + hop;
    let set = DissipatonSet::new(vec![
        mode(0, C64::new(0.2, -0.3), C64::new(0.11, 0.07), C64::new(0.4, 0.25)),
        mode(1, C64::new(-0.6, 0.1), C64::new(0.05, -0.44), C64::new(0.7, -0.1)),
        mode(1, C64::new(0.33, 0.21), C64::new(-0.18, 0.09), C64::new(1.3, 0.5)),
    ])
    .unwrap();
    compare_case(h, set, 2, true);
}
