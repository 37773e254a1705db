//! Implementations of the four subcommands. Monte Carlo seeds fan out over
//! a worker pool; each seed writes only its own files, so outputs are
//! deterministic regardless of the worker count.

use std::path::{Path, PathBuf};

use nalgebra::DVector;
use rayon::prelude::*;

use fiekit_core::estimators::{
    build_deadbeat_matrices, run_deadbeat, run_linear_observer, run_state_norm,
    StateNormEstimatorConfig,
};
use fiekit_core::fie::run_fie_sequence;
use fiekit_core::lyapunov::{build_certificate, verify_decrease_sampled, verify_observer_conditions};
use fiekit_core::model::{
    derive_seed, rollout, simulate, BoxSet, NoiseSampler, Trajectory,
};
use fiekit_core::powersys::{default_initial_state, PowerSystemParams};

use crate::config::{EstimatorKind, ResolvedModel, RunConfig};
use crate::output::{
    write_estimates_csv, write_json, write_timing_csv, EstimateRow,
};
use crate::CliError;

pub struct CommandContext {
    pub config: RunConfig,
    pub out_dir: PathBuf,
    pub jobs: Option<usize>,
    pub override_seed: Option<u64>,
}

impl CommandContext {
    fn seeds(&self) -> Vec<u64> {
        self.config.effective_seeds(self.override_seed)
    }

    fn in_pool<T: Send>(
        &self,
        work: impl Fn() -> Result<T, CliError> + Send,
    ) -> Result<T, CliError> {
        match self.jobs {
            None => work(),
            Some(jobs) => {
                let pool = rayon::ThreadPoolBuilder::new()
                    .num_threads(jobs.max(1))
                    .build()
                    .map_err(|e| CliError::runtime(format!("worker pool: {e}")))?;
                pool.install(work)
            }
        }
    }
}

/// Simulated ground truth for one seed: the trajectory plus the perturbed
/// prior state estimate used by the estimators.
fn ground_truth(
    resolved: &ResolvedModel,
    zero_noise: bool,
    horizon: usize,
    seed: u64,
) -> Result<(Trajectory, DVector<f64>), CliError> {
    let run = |r| CliError::runtime(format!("simulation failed: {r}"));
    match resolved {
        ResolvedModel::PowerSystem { params, model } => {
            let (x0, x_bar) =
                default_initial_state(params, derive_seed(seed, 0)).map_err(run)?;
            let (wx, wy) = if zero_noise {
                (0.0, 0.0)
            } else {
                (params.wx_bound, params.wy_bound)
            };
            let sx = NoiseSampler::uniform(
                BoxSet::symmetric(params.n_x(), wx).unwrap(),
                derive_seed(seed, 1),
            )
            .map_err(run)?;
            let sy = NoiseSampler::uniform(
                BoxSet::symmetric(params.n_y(), wy).unwrap(),
                derive_seed(seed, 2),
            )
            .map_err(run)?;
            let traj = simulate(model, &x0, &sx, &sy, horizon, 0).map_err(run)?;
            Ok((traj, x_bar))
        }
        ResolvedModel::Linear {
            model,
            noise_bound,
            x0,
            ..
        } => {
            let n_w = model.dims().n_w;
            let w_seq = match noise_bound {
                Some(bound) if !zero_noise => NoiseSampler::uniform(
                    BoxSet::symmetric(n_w, *bound).unwrap(),
                    derive_seed(seed, 1),
                )
                .map_err(run)?
                .sample_sequence(horizon),
                _ => vec![DVector::zeros(n_w); horizon],
            };
            let traj = rollout(model, x0, &w_seq, 0).map_err(run)?;
            Ok((traj, x0.clone()))
        }
    }
}

fn trajectory_path(dir: &Path, seed: u64) -> PathBuf {
    dir.join(format!("trajectory_seed{seed}.csv"))
}

fn write_trajectory(dir: &Path, seed: u64, traj: &Trajectory) -> Result<(), CliError> {
    let path = trajectory_path(dir, seed);
    let mut out = crate::output::create(&path)?;
    traj.write_csv(&mut out)
        .map_err(|e| CliError::runtime(format!("writing {}: {e}", path.display())))
}

pub fn cmd_simulate(ctx: &CommandContext) -> Result<(), CliError> {
    let resolved = ctx.config.resolve_model()?;
    let horizon = ctx.config.experiment.horizon;
    let zero_noise = ctx.config.experiment.zero_noise;
    let seeds = ctx.seeds();
    let dir = ctx.out_dir.clone();
    ctx.in_pool(|| {
        seeds
            .par_iter()
            .map(|&seed| {
                let (traj, _) = ground_truth(&resolved, zero_noise, horizon, seed)?;
                write_trajectory(&dir, seed, &traj)
            })
            .collect::<Result<Vec<_>, _>>()
            .map(|_| ())
    })
}

pub fn cmd_estimate(ctx: &CommandContext) -> Result<(), CliError> {
    let estimator = ctx.config.estimator.ok_or_else(|| {
        CliError::config("estimator: selection is required for the estimate command".to_string())
    })?;
    let resolved = ctx.config.resolve_model()?;
    let horizon = ctx.config.experiment.horizon;
    let zero_noise = ctx.config.experiment.zero_noise;
    let seeds = ctx.seeds();
    let dir = ctx.out_dir.clone();

    // estimator-specific setup shared across seeds
    let fie_config = match estimator {
        EstimatorKind::Fie => Some(ctx.config.fie_config(&resolved)?),
        _ => None,
    };
    let deadbeat = match (estimator, &resolved) {
        (EstimatorKind::Deadbeat, ResolvedModel::PowerSystem { params, .. }) => Some(
            build_deadbeat_matrices(params)
                .map_err(|e| CliError::config(format!("model.params: {e}")))?,
        ),
        (EstimatorKind::Deadbeat, _) => {
            return Err(CliError::config(
                "estimator: deadbeat requires the powersys builtin model".to_string(),
            ))
        }
        _ => None,
    };
    let observer = match (estimator, &resolved) {
        (EstimatorKind::Observer, ResolvedModel::Linear { sys, .. }) => {
            Some(ctx.config.resolve_observer(sys)?)
        }
        (EstimatorKind::Observer, _) => {
            return Err(CliError::config(
                "estimator: observer requires a linear model".to_string(),
            ))
        }
        _ => None,
    };
    let statenorm = match estimator {
        EstimatorKind::Statenorm => {
            let section = ctx.config.statenorm.as_ref().ok_or_else(|| {
                CliError::config("statenorm: section is required".to_string())
            })?;
            Some(
                StateNormEstimatorConfig::new(
                    section.epsilon,
                    section.rho1.build(),
                    section.rho2.build(),
                )
                .map_err(|e| CliError::config(format!("statenorm: {e}")))?,
            )
        }
        _ => None,
    };

    let emit = &ctx.config.outputs;
    let label = match estimator {
        EstimatorKind::Fie => "fie",
        EstimatorKind::Deadbeat => "deadbeat",
        EstimatorKind::Observer => "observer",
        EstimatorKind::Statenorm => "statenorm",
    };
    let emit_states = emit.emit_states;
    let emit_estimates = emit.emit_estimates;
    let emit_timing = emit.emit_timing;
    let n_z = resolved.model().dims().n_z;

    ctx.in_pool(|| {
        seeds
            .par_iter()
            .map(|&seed| {
                let (traj, x_bar) = ground_truth(&resolved, zero_noise, horizon, seed)?;
                if emit_states {
                    write_trajectory(&dir, seed, &traj)?;
                }
                let mut rows: Vec<EstimateRow> = Vec::new();
                let mut timing: Vec<(u64, f64)> = Vec::new();
                match estimator {
                    EstimatorKind::Fie => {
                        let config = fie_config.as_ref().expect("configured above");
                        let records =
                            run_fie_sequence(resolved.model(), config, &x_bar, &traj.y, 0)
                                .map_err(|e| {
                                    CliError::runtime(format!("estimation failed: {e}"))
                                })?;
                        for record in &records {
                            rows.push(EstimateRow::from_record(record));
                            timing.push((
                                record.t,
                                record.solver_stats.wall_time.as_secs_f64() * 1e3,
                            ));
                        }
                    }
                    EstimatorKind::Deadbeat => {
                        let mats = deadbeat.as_ref().expect("configured above");
                        let estimates = run_deadbeat(mats, &traj.y)
                            .map_err(|e| CliError::runtime(format!("deadbeat failed: {e}")))?;
                        for (t, est) in estimates.iter().enumerate() {
                            rows.push(EstimateRow::plain(t as u64, *est, "deadbeat"));
                        }
                    }
                    EstimatorKind::Observer => {
                        let obs = observer.as_ref().expect("configured above");
                        let estimates = run_linear_observer(obs, &traj.y)
                            .map_err(|e| CliError::runtime(format!("observer failed: {e}")))?;
                        for (t, z) in estimates.iter().enumerate() {
                            rows.push(EstimateRow {
                                t: t as u64,
                                z_hat: Some(z.clone()),
                                objective: None,
                                iterations: None,
                                converged: None,
                                wall_time_ms: None,
                                source: "observer",
                            });
                        }
                    }
                    EstimatorKind::Statenorm => {
                        let config = statenorm.as_ref().expect("configured above");
                        let estimates = run_state_norm(config, 0.0, &traj.y, None)
                            .map_err(|e| CliError::runtime(format!("state norm failed: {e}")))?;
                        for (t, z) in estimates.iter().enumerate() {
                            rows.push(EstimateRow::plain(t as u64, Some(*z), "statenorm"));
                        }
                    }
                }
                if emit_estimates {
                    let path = dir.join(format!("estimates_{label}_seed{seed}.csv"));
                    let width = if estimator == EstimatorKind::Fie { n_z } else { 1 };
                    write_estimates_csv(&path, width, &rows)?;
                }
                if emit_timing && !timing.is_empty() {
                    write_timing_csv(&dir.join(format!("timing_seed{seed}.csv")), &timing)?;
                }
                Ok(())
            })
            .collect::<Result<Vec<_>, _>>()
            .map(|_| ())
    })
}

pub fn cmd_certify(ctx: &CommandContext) -> Result<(), CliError> {
    let resolved = ctx.config.resolve_model()?;
    let sys = match &resolved {
        ResolvedModel::Linear { sys, .. } => sys,
        ResolvedModel::PowerSystem { .. } => {
            return Err(CliError::config(
                "certify: requires a linear model with observer matrices".to_string(),
            ))
        }
    };
    let obs = ctx.config.resolve_observer(sys)?;
    let tol = ctx.config.certify.tol;
    let conditions = verify_observer_conditions(sys, &obs, tol)
        .map_err(|e| CliError::config(format!("observer: {e}")))?;
    let mut report = serde_json::json!({
        "passes": conditions.passes,
        "sylvester_residual": conditions.sylvester_residual,
        "functional_residual": conditions.functional_residual,
        "spectral_radius": conditions.spectral_radius,
        "tol": tol,
    });
    if conditions.passes {
        let cert = build_certificate(sys, &obs, ctx.config.certify.epsilon)
            .map_err(|e| CliError::runtime(format!("certificate construction failed: {e}")))?;
        let seed = ctx.override_seed.unwrap_or(42);
        let samples = ctx.config.certify.n_samples;
        let check = verify_decrease_sampled(&cert, sys, &obs, samples, seed, tol)
            .map_err(|e| CliError::runtime(format!("sampled verification failed: {e}")))?;
        report["certificate"] = serde_json::json!({
            "rho": cert.rho,
            "eta": cert.eta,
            "sigma_w_gain": cert.sigma_w_gain,
            "sigma_y_gain": cert.sigma_y_gain,
            "alpha1_gain": cert.alpha1_gain,
            "alpha2_gain": cert.alpha2_gain,
        });
        report["sampled_check"] = serde_json::json!({
            "n_samples": samples,
            "seed": seed,
            "violations": check.violations,
            "worst_margin": check.worst_margin,
        });
        report["passes"] = serde_json::json!(check.violations == 0);
    }
    write_json(&ctx.out_dir.join("certificate.json"), &report)
}

pub fn cmd_compare(ctx: &CommandContext) -> Result<(), CliError> {
    let resolved = ctx.config.resolve_model()?;
    let params: &PowerSystemParams = match &resolved {
        ResolvedModel::PowerSystem { params, .. } => params,
        ResolvedModel::Linear { .. } => {
            return Err(CliError::config(
                "compare: requires the powersys builtin model".to_string(),
            ))
        }
    };
    let horizon = ctx.config.experiment.horizon;
    let burn_in = ctx.config.experiment.burn_in;
    if burn_in >= horizon {
        return Err(CliError::config(format!(
            "experiment.burn_in ({burn_in}) must be below the horizon ({horizon})"
        )));
    }
    if burn_in < 2 {
        return Err(CliError::config(
            "experiment.burn_in must be at least 2 (the deadbeat estimator needs two \
             past measurements)"
                .to_string(),
        ));
    }
    let fie_config = ctx.config.fie_config(&resolved)?;
    let mats = build_deadbeat_matrices(params)
        .map_err(|e| CliError::config(format!("model.params: {e}")))?;
    let zero_noise = ctx.config.experiment.zero_noise;
    let seeds = ctx.seeds();
    let dir = ctx.out_dir.clone();

    let per_seed: Vec<(u64, f64, f64)> = ctx.in_pool(|| {
        seeds
            .par_iter()
            .map(|&seed| {
                let (traj, x_bar) = ground_truth(&resolved, zero_noise, horizon, seed)?;
                let records = run_fie_sequence(resolved.model(), &fie_config, &x_bar, &traj.y, 0)
                    .map_err(|e| CliError::runtime(format!("estimation failed: {e}")))?;
                let deadbeat = run_deadbeat(&mats, &traj.y)
                    .map_err(|e| CliError::runtime(format!("deadbeat failed: {e}")))?;

                let path = dir.join(format!("compare_seed{seed}.csv"));
                let mut out = crate::output::create(&path)?;
                use std::io::Write;
                let io_err = |e: std::io::Error| {
                    CliError::runtime(format!("writing {}: {e}", path.display()))
                };
                writeln!(out, "t,z_true,z_fie,z_deadbeat").map_err(io_err)?;
                for t in 0..=horizon {
                    let z_fie = if t >= 1 {
                        format!("{}", records[t - 1].z_hat[0])
                    } else {
                        String::new()
                    };
                    let z_db = deadbeat[t].map_or(String::new(), |z| format!("{z}"));
                    writeln!(out, "{t},{},{z_fie},{z_db}", traj.z[t][0]).map_err(io_err)?;
                }

                let mut se_fie = 0.0;
                let mut se_db = 0.0;
                let mut count = 0.0;
                for t in burn_in..=horizon {
                    let z = traj.z[t][0];
                    se_fie += (records[t - 1].z_hat[0] - z).powi(2);
                    se_db += (deadbeat[t].expect("t >= 2") - z).powi(2);
                    count += 1.0;
                }
                Ok((seed, (se_fie / count).sqrt(), (se_db / count).sqrt()))
            })
            .collect::<Result<Vec<_>, _>>()
    })?;

    let median = |mut values: Vec<f64>| -> f64 {
        values.sort_by(|a, b| a.partial_cmp(b).unwrap());
        values[values.len() / 2]
    };
    let fie_wins = per_seed.iter().filter(|(_, f, d)| f < d).count();
    let summary = serde_json::json!({
        "rmse_fie": median(per_seed.iter().map(|(_, f, _)| *f).collect()),
        "rmse_deadbeat": median(per_seed.iter().map(|(_, _, d)| *d).collect()),
        "fie_wins": fie_wins,
        "runs": per_seed.len(),
        "burn_in": burn_in,
        "horizon": horizon,
        "per_seed": per_seed
            .iter()
            .map(|(seed, f, d)| {
                serde_json::json!({"seed": seed, "rmse_fie": f, "rmse_deadbeat": d})
            })
            .collect::<Vec<_>>(),
    });
    write_json(&dir.join("summary.json"), &summary)
}
