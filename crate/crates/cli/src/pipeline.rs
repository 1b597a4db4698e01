//! Run orchestration: assemble the generators for both quench epochs from a
//! config, prepare the pre-quench equilibrium, and drive the dense and
//! variational trajectories, steady states, and count reports.

use crate::config::{RunConfig, SamplingKind};
use crate::error::{AppError, ExitCode};
use crate::output::{DiagRow, TrajRow};
use dqn_core::bath::{decompose, DissipatonSet};
use dqn_core::dense::{rk4_propagate, steady_state, RdtVector, SteadyOptions, SteadyState};
use dqn_core::liouvillian::Generator;
use dqn_core::models::ModelSpec;
use dqn_core::observables::{
    current, entropy_vn, hybridization_energy, occupancy, spin_correlation, trace0, RdtRead,
};
use dqn_core::rbm::{init_supervised, param_count, InitOptions, InitReport, RbmParams, RbmSizes};
use dqn_core::space::SpaceIndex;
use dqn_core::tdvp::{
    materialize, propagate_parameters, steady_minimize, AssembleMode, PropagateOptions,
    PropagateReport, SteadyMinOptions, SteadyMinReport,
};
use std::sync::Arc;

/// Everything a run needs: the retained space and the generators of the
/// pre-quench (preparation) and post-quench (evolution) epochs.
pub struct Workbench {
    pub cfg: RunConfig,
    pub model: ModelSpec,
    pub space: Arc<SpaceIndex>,
    /// Post-quench dissipaton modes; currents and hybridization energy are
    /// read against these.
    pub modes: DissipatonSet,
    pub gen_pre: Generator,
    pub gen_post: Generator,
}

fn merged_modes(cfg: &RunConfig, post: bool) -> Result<DissipatonSet, AppError> {
    let mut sets = Vec::new();
    for spec in cfg.reservoir_specs(post) {
        let p = cfg.pole_count(&spec)?;
        sets.push(decompose(&spec, cfg.bath.scheme.to_core(), p)?);
    }
    Ok(DissipatonSet::merged(sets)?)
}

pub fn assemble_workbench(cfg: &RunConfig) -> Result<Workbench, AppError> {
    let model = cfg.model_spec();
    let modes_pre = merged_modes(cfg, false)?;
    let modes_post = merged_modes(cfg, true)?;
    if modes_pre.n_modes() != modes_post.n_modes() {
        return Err(AppError::new(
            ExitCode::Config,
            "pre- and post-quench decompositions disagree in mode count",
        ));
    }
    let space = Arc::new(SpaceIndex::enumerate(
        model.n_s(),
        2 * modes_post.n_modes(),
        cfg.truncation.tier,
        cfg.truncation.parity_filter,
    )?);
    let gen_pre = Generator::new(
        space.clone(),
        model.hamiltonian(dqn_core::models::Epoch::Pre),
        modes_pre,
    )?;
    let gen_post = Generator::new(
        space.clone(),
        model.hamiltonian(dqn_core::models::Epoch::Post),
        modes_post.clone(),
    )?;
    Ok(Workbench { cfg: cfg.clone(), model, space, modes: modes_post, gen_pre, gen_post })
}

impl Workbench {
    fn has_reservoir(&self, label: &str) -> bool {
        self.cfg.bath.reservoir.iter().any(|r| r.label == label)
    }

    /// All readouts for one state. Currents and the hybridization energy
    /// are taken against the post-quench modes.
    pub fn observe(&self, r: &dyn RdtRead, t: f64, ds2: Option<f64>) -> Result<TrajRow, AppError> {
        let two_impurity = matches!(self.model, ModelSpec::TwoImpurity(_));
        Ok(TrajRow {
            t,
            i_l: if self.has_reservoir("L") {
                Some(current(r, &self.modes, "L")?)
            } else {
                None
            },
            i_r: if self.has_reservoir("R") {
                Some(current(r, &self.modes, "R")?)
            } else {
                None
            },
            n_up: Some(occupancy(r, 0)?),
            n_dn: Some(occupancy(r, 1)?),
            s12: if two_impurity { Some(spin_correlation(r)?) } else { None },
            svn: Some(entropy_vn(r)?),
            ehyb: Some(hybridization_energy(r, &self.modes)?),
            trace: trace0(r).re,
            ds2,
        })
    }

    /// Pre-quench equilibrium, stamped with the configured start time. Both
    /// the dense benchmark and the variational run start here.
    pub fn initial_state(&self) -> Result<RdtVector, AppError> {
        let sparse = self.gen_pre.build_sparse();
        let steady = steady_state(&sparse, &self.space, None, SteadyOptions::default())?;
        let mut state = steady.state;
        state.time = self.cfg.integrator.t_start;
        Ok(state)
    }
}

/// Fixed-step dense trajectory of the post-quench generator from the
/// pre-quench equilibrium.
pub fn run_dense(wb: &Workbench) -> Result<Vec<TrajRow>, AppError> {
    let mut state = wb.initial_state()?;
    let sparse = wb.gen_post.build_sparse();
    let mut rows: Vec<TrajRow> = Vec::new();
    let mut first_err: Option<AppError> = None;
    rk4_propagate(
        &sparse,
        &mut state,
        wb.cfg.integrator.t_end,
        wb.cfg.integrator.dt,
        |s| {
            if first_err.is_none() {
                match wb.observe(s, s.time, None) {
                    Ok(row) => rows.push(row),
                    Err(e) => first_err = Some(e),
                }
            }
        },
    )?;
    match first_err {
        Some(e) => Err(e),
        None => Ok(rows),
    }
}

pub struct RbmArtifacts {
    pub rows: Vec<TrajRow>,
    pub diag: Vec<DiagRow>,
    pub init: InitReport,
    pub params: RbmParams,
    pub report: PropagateReport,
}

/// Variational sizes implied by the config and the assembled space.
pub fn rbm_sizes(wb: &Workbench) -> Result<RbmSizes, AppError> {
    let rbm = wb
        .cfg
        .rbm
        .as_ref()
        .ok_or_else(|| AppError::new(ExitCode::Config, "missing [rbm] section"))?;
    Ok(RbmSizes {
        n_s: wb.model.n_s(),
        n_e: 2 * wb.modes.n_modes(),
        n_h: rbm.n_h,
        n_a: rbm.n_a,
    })
}

fn assemble_mode(wb: &Workbench) -> AssembleMode {
    let rbm = wb.cfg.rbm.as_ref().expect("caller checked");
    match rbm.sampling {
        SamplingKind::Exact => AssembleMode::ExactSum,
        SamplingKind::Sampled => AssembleMode::Sampled {
            n_samples: rbm.n_samples.unwrap_or(20_000),
            n_burn: rbm.n_burn.unwrap_or_else(|| 10 * (2 * wb.model.n_s() + wb.space.dims().n_modes * 2)),
            seeds: (0..rbm.n_chains.unwrap_or(4) as u64).map(|k| rbm.seed ^ (0x9e37 + k)).collect(),
        },
    }
}

/// Variational trajectory: supervised initialization against the pre-quench
/// equilibrium, then parameter integration under the post-quench generator.
pub fn run_rbm(wb: &Workbench) -> Result<RbmArtifacts, AppError> {
    let rbm_cfg = wb
        .cfg
        .rbm
        .as_ref()
        .ok_or_else(|| AppError::new(ExitCode::Config, "missing [rbm] section"))?;
    let target = wb.initial_state()?;
    let sizes = rbm_sizes(wb)?;
    let (params0, init) = init_supervised(
        &target,
        sizes,
        InitOptions {
            tol: rbm_cfg.init_tol,
            max_steps: rbm_cfg.init_steps,
            seed: rbm_cfg.seed,
            noise_scale: 0.01,
        },
    )?;

    let lambda = rbm_cfg.lambda;
    let opts = PropagateOptions { mode: assemble_mode(wb), ds2_ceiling: f64::INFINITY };
    let mut rows: Vec<TrajRow> = Vec::new();
    let mut diag: Vec<DiagRow> = Vec::new();
    let mut first_err: Option<AppError> = None;
    let t0 = wb.cfg.integrator.t_start;
    let (params, report) = propagate_parameters(
        &params0,
        &wb.gen_post,
        wb.cfg.integrator.dt,
        wb.cfg.n_steps(),
        |_| lambda,
        &opts,
        |_, t, a, d| {
            if first_err.is_some() {
                return;
            }
            let state = materialize(a, &wb.space, t0 + t);
            match wb.observe(&state, t0 + t, Some(d.ds2)) {
                Ok(row) => rows.push(row),
                Err(e) => {
                    first_err = Some(e);
                    return;
                }
            }
            diag.push(DiagRow {
                t: t0 + t,
                ds2: d.ds2,
                trace_re: d.trace.re,
                trace_im: d.trace.im,
                lambda: d.lambda,
                path: d.path.to_string(),
            });
        },
    )?;
    match first_err {
        Some(e) => Err(e),
        None => Ok(RbmArtifacts { rows, diag, init, params, report }),
    }
}

pub struct SteadyArtifacts {
    pub dense: Option<(TrajRow, SteadyState)>,
    pub rbm: Option<(TrajRow, SteadyMinReport, InitReport)>,
}

/// Post-quench stationary state: algebraically for the dense mode, by
/// scaled-norm descent from a supervised initialization for the variational
/// mode (the initialization targets the dense stationary state, which is
/// available at every desk-scale size this tool runs at).
pub fn run_steady(wb: &Workbench) -> Result<SteadyArtifacts, AppError> {
    let sparse = wb.gen_post.build_sparse();
    let steady = steady_state(&sparse, &wb.space, None, SteadyOptions::default())?;
    let dense_row = wb.observe(&steady.state, 0.0, None)?;

    let rbm = if wb.cfg.mode.wants_rbm() {
        let rbm_cfg = wb
            .cfg
            .rbm
            .as_ref()
            .ok_or_else(|| AppError::new(ExitCode::Config, "missing [rbm] section"))?;
        let sizes = rbm_sizes(wb)?;
        let (params0, init) = init_supervised(
            &steady.state,
            sizes,
            InitOptions {
                tol: rbm_cfg.init_tol,
                max_steps: rbm_cfg.init_steps,
                seed: rbm_cfg.seed,
                noise_scale: 0.01,
            },
        )?;
        let (params, report) =
            steady_minimize(&params0, &wb.gen_post, &SteadyMinOptions::default())?;
        let state = materialize(&params, &wb.space, 0.0);
        let row = wb.observe(&state, 0.0, None)?;
        Some((row, report, init))
    } else {
        None
    };

    let dense = if wb.cfg.mode.wants_dense() { Some((dense_row, steady)) } else { None };
    Ok(SteadyArtifacts { dense, rbm })
}

#[derive(Debug, Clone, Copy)]
pub struct CountsReport {
    pub n_e: usize,
    pub tier: usize,
    pub n_rdt_filtered: usize,
    pub n_rdt_unfiltered: u128,
    pub n_para_exact: usize,
    pub n_para_estimate: usize,
}

impl CountsReport {
    pub fn parameter_count_is_smaller(&self) -> bool {
        (self.n_para_exact as u128) < self.n_rdt_unfiltered
            && self.n_para_exact < self.n_rdt_filtered
    }
}

fn binomial(n: usize, k: usize) -> u128 {
    if k > n {
        return 0;
    }
    let mut acc: u128 = 1;
    for i in 0..k.min(n - k) {
        acc = acc * (n - i) as u128 / (i + 1) as u128;
    }
    acc
}

/// Component counts: retained tensor components (with and without the
/// parity filter) against variational parameter counts.
pub fn counts_report(wb: &Workbench) -> Result<CountsReport, AppError> {
    let sizes = rbm_sizes(wb)?;
    let pc = param_count(sizes);
    let n_e = 2 * wb.modes.n_modes();
    let tier = wb.cfg.truncation.tier;
    let blocks: u128 = (0..=tier.min(n_e)).map(|k| binomial(n_e, k)).sum();
    let unfiltered = (4u128).pow(wb.model.n_s() as u32) * blocks;
    Ok(CountsReport {
        n_e,
        tier,
        n_rdt_filtered: wb.space.len(),
        n_rdt_unfiltered: unfiltered,
        n_para_exact: pc.exact,
        n_para_estimate: pc.estimate,
    })
}
