//! End-to-end physics validation of the dense solver chain.
//!
//! The noninteracting resonant level with Lorentzian hybridization windows
//! has closed-form steady-state observables as frequency integrals over the
//! exact spectral function and Fermi functions (computed here by adaptive
//! quadrature — a route that shares no code with the hierarchy solver):
//!
//! * occupation        n = ∫ dω A(ω) f_eff(ω),
//! * two-terminal flow I = (1/2π) ∫ dω Γ_L Γ_R |G^r|² (f_L − f_R),
//!
//! with G^r(ω) = 1/(ω − ε − Σ^r), Σ^r(ω) = Σ_α (Γ_α W_α/2)/(ω − μ_α + i W_α),
//! A = −Im G^r/π, and f_eff = Σ_α Γ_α(ω) f_α / Σ_α Γ_α(ω).
//!
//! These pin the magnitude AND sign of every convention at once: the bath
//! correlation decomposition, the generator's coupling terms, and the
//! slice-based current/hybridization readouts. A weak-coupling interacting
//! check against the Gibbs state covers what the quadratic oracle cannot.

use std::sync::Arc;

use ndarray::Array2;

use dqn_core::bath::{
    decompose, decomposition_error, fermi, time_grid, DissipatonSet, ReservoirSpec, Scheme,
};
use dqn_core::dense::{equilibrate, rk4_propagate, steady_state, RdtVector, SteadyOptions};
use dqn_core::liouvillian::Generator;
use dqn_core::models::{AndersonSpec, Epoch, ModelSpec};
use dqn_core::observables::{
    current, hybridization_energy, occupancy, rho0_matrix, stencil_derivative_5pt, trace0,
};
use dqn_core::quad::{integrate_real_line, Rule, Tol};
use dqn_core::space::SpaceIndex;
use dqn_core::C64;

fn reservoir(label: &str, coupling: f64, mu: f64, t: f64, w: f64) -> ReservoirSpec {
    ReservoirSpec {
        label: label.into(),
        coupling,
        bandwidth: w,
        chemical_potential: mu,
        temperature: t,
        coupled_orbitals: vec![0],
    }
}

/// Retarded hybridization self-energy for Lorentzian windows.
fn self_energy(res: &[ReservoirSpec], omega: f64) -> C64 {
    res.iter()
        .map(|r| {
            C64::new(r.coupling * r.bandwidth / 2.0, 0.0)
                / C64::new(omega - r.chemical_potential, r.bandwidth)
        })
        .sum()
}

fn retarded_propagator(res: &[ReservoirSpec], eps: f64, omega: f64) -> C64 {
    C64::new(1.0, 0.0) / (C64::new(omega - eps, 0.0) - self_energy(res, omega))
}

/// Exact steady occupation n = ∫ A f_eff by adaptive quadrature.
fn oracle_occupation(res: &[ReservoirSpec], eps: f64) -> f64 {
    let mut f = |w: f64| -> C64 {
        let gr = retarded_propagator(res, eps, w);
        let num: f64 = res
            .iter()
            .map(|r| {
                r.window(C64::new(w, 0.0)).re
                    * fermi((w - r.chemical_potential) / r.temperature)
            })
            .sum();
        C64::new(gr.norm_sqr() * num / (2.0 * std::f64::consts::PI), 0.0)
    };
    let scale = 2.0 + eps.abs();
    integrate_real_line(Rule::GaussKronrod, &mut f, eps, scale, Tol::new(1e-12, 1e-10))
        .expect("occupation quadrature")
        .value
        .re
}

/// Exact steady particle flow out of the first reservoir into the system.
fn oracle_current(res: &[ReservoirSpec; 2], eps: f64) -> f64 {
    let mut f = |w: f64| -> C64 {
        let gr = retarded_propagator(res, eps, w);
        let g_l = res[0].window(C64::new(w, 0.0)).re;
        let g_r = res[1].window(C64::new(w, 0.0)).re;
        let df = fermi((w - res[0].chemical_potential) / res[0].temperature)
            - fermi((w - res[1].chemical_potential) / res[1].temperature);
        C64::new(g_l * g_r * gr.norm_sqr() * df / (2.0 * std::f64::consts::PI), 0.0)
    };
    let scale = 2.0 + eps.abs();
    integrate_real_line(Rule::GaussKronrod, &mut f, eps, scale, Tol::new(1e-12, 1e-10))
        .expect("current quadrature")
        .value
        .re
}

/// Bath decomposition with a pinned pole count, validated against the exact
/// correlation before use so a bad fit can't masquerade as solver error.
/// The fit check runs on a single-channel clone because a multi-orbital
/// reservoir repeats its channel modes once per orbital.
fn checked_modes(specs: &[ReservoirSpec], p: usize, max_err: f64) -> DissipatonSet {
    let grid = time_grid(10.0, 60);
    let sets: Vec<DissipatonSet> = specs
        .iter()
        .map(|s| {
            let single = ReservoirSpec { coupled_orbitals: vec![0], ..s.clone() };
            let fit = decompose(&single, Scheme::Pade, p).expect("decompose");
            let err = decomposition_error(&fit, &single, &grid).expect("decomposition error");
            assert!(
                err.max_abs() < max_err,
                "bath fit for {} too loose: {:.3e} ≥ {max_err:.1e}",
                s.label,
                err.max_abs()
            );
            decompose(s, Scheme::Pade, p).expect("decompose")
        })
        .collect();
    DissipatonSet::merged(sets).expect("merge")
}

fn single_level_h(eps: f64) -> Array2<C64> {
    let mut h = Array2::zeros((2, 2));
    h[(1, 1)] = C64::new(eps, 0.0);
    h
}

fn vacuum_density(n_s: usize) -> Array2<C64> {
    let dim = 1usize << n_s;
    let mut rho = Array2::zeros((dim, dim));
    rho[(0, 0)] = C64::new(1.0, 0.0);
    rho
}

/// Least-squares slope of y against t.
fn fit_slope(ts: &[f64], ys: &[f64]) -> f64 {
    let n = ts.len() as f64;
    let tm = ts.iter().sum::<f64>() / n;
    let ym = ys.iter().sum::<f64>() / n;
    let mut num = 0.0;
    let mut den = 0.0;
    for (&t, &y) in ts.iter().zip(ys) {
        num += (t - tm) * (y - ym);
        den += (t - tm) * (t - tm);
    }
    num / den
}

/// Symmetric wide-band level at high temperature: occupation must hit the
/// quadrature value (= 1/2 by particle–hole symmetry) and the relaxation
/// from vacuum must proceed at the total hybridization rate 2Γ.
#[test]
fn relaxation_rate_and_occupation_match_the_wideband_level() {
    let specs =
        [reservoir("L", 1.0, 0.0, 5.0, 20.0), reservoir("R", 1.0, 0.0, 5.0, 20.0)];
    let set = checked_modes(&specs, 2, 1e-3);
    let space =
        Arc::new(SpaceIndex::enumerate(1, set.n_e(), 2, true).expect("space"));
    let gen = Generator::new(space.clone(), single_level_h(0.0), set.clone())
        .expect("generator")
        .build_sparse();

    let mut state =
        RdtVector::from_system_density(space.clone(), &vacuum_density(1), 0.0).unwrap();
    let mut ts = Vec::new();
    let mut ns = Vec::new();
    rk4_propagate(&gen, &mut state, 4.0, 2e-3, |s| {
        ts.push(s.time);
        ns.push(occupancy(s, 0).expect("n"));
    })
    .expect("propagate");

    let n_ss = *ns.last().unwrap();
    let n_oracle = oracle_occupation(&specs, 0.0);
    assert!(
        (n_oracle - 0.5).abs() < 1e-10,
        "oracle sanity: symmetric level must give 1/2, got {n_oracle}"
    );
    let rel = (n_ss / n_oracle - 1.0).abs();
    println!("wideband level: n_ss = {n_ss:.6}, oracle = {n_oracle:.6}, rel = {rel:.2e}");
    assert!(rel <= 0.02, "steady occupation off by {rel:.3e} (limit 2%)");

    // Relaxation rate: ln(n_ss − n(t)) should fall with slope −(Γ_L+Γ_R).
    let mut fts = Vec::new();
    let mut fys = Vec::new();
    for (&t, &n) in ts.iter().zip(&ns) {
        if t >= 0.25 && t <= 1.5 && n_ss - n > 1e-9 {
            fts.push(t);
            fys.push((n_ss - n).ln());
        }
    }
    let rate = -fit_slope(&fts, &fys);
    println!("wideband level: relaxation rate = {rate:.4} (expected 2)");
    assert!(
        (rate - 2.0).abs() <= 0.2,
        "relaxation rate {rate:.4} outside 2 ± 10%"
    );

    // Hybridizing with the band lowers the energy.
    let e_hyb = hybridization_energy(&state, &set).expect("E_hyb");
    println!("wideband level: E_hyb = {e_hyb:.6}");
    assert!(e_hyb < 0.0, "equilibrium hybridization energy must be negative, got {e_hyb}");
    let tr = trace0(&state);
    assert!((tr - C64::new(1.0, 0.0)).norm() < 1e-8, "trace drifted: {tr}");
}

/// Detuned levels in equilibrium: the steady occupation must track the
/// quadrature value across filled, resonant, and empty regimes, and deepen
/// consistently as the hierarchy tier grows.
#[test]
fn detuned_level_occupations_match_the_quadrature_oracle() {
    let spec = reservoir("B", 1.0, 0.3, 1.0, 10.0);
    let set = checked_modes(std::slice::from_ref(&spec), 4, 4e-4);

    let steady_n = |eps: f64, tier: usize| -> (f64, f64) {
        let space =
            Arc::new(SpaceIndex::enumerate(1, set.n_e(), tier, true).expect("space"));
        let gen = Generator::new(space.clone(), single_level_h(eps), set.clone())
            .expect("generator")
            .build_sparse();
        let mut state =
            RdtVector::from_system_density(space.clone(), &vacuum_density(1), 0.0).unwrap();
        let rep = equilibrate(&gen, &mut state, 5e-3, 1e-9, 12_000).expect("equilibrate");
        println!(
            "eps = {eps:+.1}, tier {tier}: reached residual {:.2e} in {} steps",
            rep.residual, rep.steps
        );
        let n = occupancy(&state, 0).expect("n");
        let e_hyb = hybridization_energy(&state, &set).expect("E_hyb");
        (n, e_hyb)
    };

    // Near-resonant level: check both tiers and the algebraic route.
    let oracle_res = oracle_occupation(std::slice::from_ref(&spec), 0.8);
    let (n3, e3) = steady_n(0.8, 3);
    let (n4, _) = steady_n(0.8, 4);
    println!("eps = +0.8: n(L3) = {n3:.6}, n(L4) = {n4:.6}, oracle = {oracle_res:.6}");
    assert!((n3 - oracle_res).abs() <= 0.01, "tier-3 occupation off: {n3} vs {oracle_res}");
    assert!((n4 - oracle_res).abs() <= 0.01, "tier-4 occupation off: {n4} vs {oracle_res}");
    assert!(
        (n4 - oracle_res).abs() <= (n3 - oracle_res).abs() + 1e-4,
        "deeper hierarchy must not drift away from the exact value"
    );
    assert!(e3 < 0.0, "equilibrium hybridization energy must be negative, got {e3}");

    // Same problem through the least-squares steady-state route.
    {
        let space =
            Arc::new(SpaceIndex::enumerate(1, set.n_e(), 3, true).expect("space"));
        let gen = Generator::new(space.clone(), single_level_h(0.8), set.clone())
            .expect("generator")
            .build_sparse();
        let ss = steady_state(&gen, &space, None, SteadyOptions::default())
            .expect("steady state");
        let n_alg = occupancy(&ss.state, 0).expect("n");
        println!("eps = +0.8: algebraic steady state n = {n_alg:.6} ({:?})", ss.path);
        assert!(
            (n_alg - n3).abs() < 1e-6,
            "time evolution and least-squares steady states disagree: {n3} vs {n_alg}"
        );
    }

    // Level far above the Fermi edge: nearly empty.
    let oracle_hi = oracle_occupation(std::slice::from_ref(&spec), 3.0);
    let (n_hi, _) = steady_n(3.0, 3);
    println!("eps = +3.0: n = {n_hi:.6}, oracle = {oracle_hi:.6}");
    assert!(n_hi < 0.15, "far-detuned level should be nearly empty, got {n_hi}");
    assert!((n_hi - oracle_hi).abs() <= 0.01, "occupation off: {n_hi} vs {oracle_hi}");

    // Level far below: nearly full.
    let oracle_lo = oracle_occupation(std::slice::from_ref(&spec), -2.0);
    let (n_lo, _) = steady_n(-2.0, 3);
    println!("eps = -2.0: n = {n_lo:.6}, oracle = {oracle_lo:.6}");
    assert!(n_lo > 0.85, "deep level should be nearly full, got {n_lo}");
    assert!((n_lo - oracle_lo).abs() <= 0.01, "occupation off: {n_lo} vs {oracle_lo}");
}

/// Biased two-terminal level: the slice-readout currents must satisfy exact
/// particle conservation against the occupation derivative along the
/// transient, and the steady current must land on the quadrature value.
#[test]
fn biased_level_current_matches_the_quadrature_oracle() {
    let eps = 0.3;
    let specs =
        [reservoir("L", 1.0, 0.25, 1.0, 10.0), reservoir("R", 1.0, -0.25, 1.0, 10.0)];
    let set = checked_modes(&specs, 4, 4e-4);
    let space =
        Arc::new(SpaceIndex::enumerate(1, set.n_e(), 3, true).expect("space"));
    let gen = Generator::new(space.clone(), single_level_h(eps), set.clone())
        .expect("generator")
        .build_sparse();

    // Transient from vacuum, recording occupation and both currents.
    let dt = 2e-3;
    let mut state =
        RdtVector::from_system_density(space.clone(), &vacuum_density(1), 0.0).unwrap();
    let mut ts = Vec::new();
    let mut ns = Vec::new();
    let mut flows = Vec::new();
    rk4_propagate(&gen, &mut state, 1.2, dt, |s| {
        ts.push(s.time);
        ns.push(occupancy(s, 0).expect("n"));
        let i_l = current(s, &set, "L").expect("I_L");
        let i_r = current(s, &set, "R").expect("I_R");
        flows.push(i_l + i_r);
    })
    .expect("propagate");

    // d⟨N⟩/dt = I_L + I_R pointwise (5-point stencil on the interior).
    let dn = stencil_derivative_5pt(&ts, &ns).expect("stencil");
    let mut worst = 0.0f64;
    for (k, d) in dn.iter().enumerate() {
        let defect = (d - flows[k + 2]).abs();
        worst = worst.max(defect);
    }
    println!("conservation defect along transient: {worst:.3e}");
    assert!(worst <= 1e-6, "particle conservation violated: {worst:.3e} > 1e-6");

    // Relax the remainder of the way and compare with the exact flow.
    equilibrate(&gen, &mut state, 5e-3, 1e-9, 12_000).expect("equilibrate");
    let i_l = current(&state, &set, "L").expect("I_L");
    let i_r = current(&state, &set, "R").expect("I_R");
    let i_oracle = oracle_current(&specs, eps);
    let n_oracle = oracle_occupation(&specs, eps);
    let n_ss = occupancy(&state, 0).expect("n");
    println!("biased level: I_L = {i_l:.6e}, I_R = {i_r:.6e}, oracle = {i_oracle:.6e}");
    println!("biased level: n = {n_ss:.6}, oracle = {n_oracle:.6}");
    assert!(i_oracle > 0.0, "oracle sanity: flow should run L → R");
    assert!((i_l + i_r).abs() < 1e-7, "steady currents must balance: {}", i_l + i_r);
    assert!(
        (i_l - i_oracle).abs() <= 0.02 * i_oracle.abs(),
        "steady current {i_l:.6e} vs quadrature {i_oracle:.6e}"
    );
    assert!((n_ss - n_oracle).abs() <= 0.01, "occupation off: {n_ss} vs {n_oracle}");
}

/// Weakly coupled interacting dot: the steady state must approach the Gibbs
/// state of the isolated interacting Hamiltonian — a regime the quadratic
/// oracle cannot reach, testing the interaction and multi-orbital wiring.
#[test]
fn weakly_coupled_interacting_dot_thermalizes_to_the_gibbs_state() {
    let eps = 0.4;
    let u = 1.0;
    let temp = 1.0;
    let model = ModelSpec::Anderson(AndersonSpec { eps0: eps, u0: u, d_eps: 0.0, d_u: 0.0 });
    let h = model.hamiltonian(Epoch::Pre);

    let spec = ReservoirSpec {
        label: "B".into(),
        coupling: 0.05,
        bandwidth: 10.0,
        chemical_potential: 0.0,
        temperature: temp,
        coupled_orbitals: vec![0, 1],
    };
    let set = checked_modes(std::slice::from_ref(&spec), 3, 1e-3);
    let space =
        Arc::new(SpaceIndex::enumerate(2, set.n_e(), 2, true).expect("space"));
    let gen = Generator::new(space.clone(), h, set.clone()).expect("generator").build_sparse();

    let mut state =
        RdtVector::from_system_density(space.clone(), &vacuum_density(2), 0.0).unwrap();
    equilibrate(&gen, &mut state, 2e-2, 3e-6, 9_000).expect("equilibrate");
    let ss = steady_state(&gen, &space, Some(&state), SteadyOptions::default())
        .expect("steady state");

    // Gibbs reference for H = ε(n↑+n↓) + U n↑n↓ at β = 1/T, μ = 0.
    let z = 1.0 + 2.0 * (-eps / temp).exp() + (-(2.0 * eps + u) / temp).exp();
    let n_gibbs = ((-eps / temp).exp() + (-(2.0 * eps + u) / temp).exp()) / z;
    let d_gibbs = (-(2.0 * eps + u) / temp).exp() / z;

    let n_up = occupancy(&ss.state, 0).expect("n_up");
    let n_dn = occupancy(&ss.state, 1).expect("n_dn");
    let rho0 = rho0_matrix(&ss.state);
    let tr = trace0(&ss.state);
    let double_occ = (rho0[(3, 3)] / tr).re;
    println!("interacting dot: n_up = {n_up:.6}, n_dn = {n_dn:.6}, Gibbs = {n_gibbs:.6}");
    println!("interacting dot: double occupancy = {double_occ:.6}, Gibbs = {d_gibbs:.6}");

    assert!((n_up - n_dn).abs() < 1e-8, "spin symmetry broken: {n_up} vs {n_dn}");
    assert!(
        (n_up - n_gibbs).abs() <= 0.02,
        "occupation {n_up:.4} vs Gibbs {n_gibbs:.4} beyond weak-coupling tolerance"
    );
    assert!(
        (double_occ - d_gibbs).abs() <= 0.012,
        "double occupancy {double_occ:.4} vs Gibbs {d_gibbs:.4}"
    );
    let e_hyb = hybridization_energy(&ss.state, &set).expect("E_hyb");
    println!("interacting dot: E_hyb = {e_hyb:.6}");
    assert!(e_hyb < 0.0, "equilibrium hybridization energy must be negative, got {e_hyb}");
}
