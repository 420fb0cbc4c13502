//! Mode dispatch and artifact emission.
//!
//! Every run writes its artifacts under the configured output directory:
//! CSV files carry a leading comment line with the config hash and master
//! seed; JSON files carry the same pair as their first fields.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use serde::Serialize;

use pfedwn::analysis::{self, ConvergenceDiagnostics};
use pfedwn::em::EmConfig;
use pfedwn::pfl::{
    run_fedavg, run_fedprox, run_local, run_pfedwn, LoopConfig, Metrics, PfedwnConfig,
};
use pfedwn::rng::substream;
use pfedwn::selection::{select_neighbors, selection_sweep, SweepGrid};
use pfedwn::topology::Area;

use crate::config::{ExperimentConfig, Mode};
use crate::pipeline::{build_layout, build_shards};
use crate::validate;
use crate::RunnerError;

/// Runs the configured experiment; artifacts land in `output_dir`.
pub fn run(config: &ExperimentConfig) -> Result<(), RunnerError> {
    config.validate()?;
    let out = &config.output_dir;
    fs::create_dir_all(out).map_err(|e| RunnerError::Io(format!("creating {}: {e}", out.display())))?;
    let hash = config.hash();

    // Echo the effective configuration next to the artifacts.
    let echo = EchoDoc { config_hash: &hash, seed: config.master_seed, config };
    write_json(&out.join("config.echo.json"), &echo)?;

    match config.mode {
        Mode::Pfedwn => run_pfedwn_mode(config, &hash),
        Mode::Local => run_local_mode(config, &hash),
        Mode::Fedavg => run_federated_mode(config, &hash, None),
        Mode::Fedprox => run_federated_mode(config, &hash, Some(config.train.prox_mu)),
        Mode::ChannelSweep => run_sweep_mode(config, &hash),
        Mode::Validate => run_validate_mode(config),
    }
}

#[derive(Serialize)]
struct EchoDoc<'a> {
    config_hash: &'a str,
    seed: u64,
    config: &'a ExperimentConfig,
}

#[derive(Serialize)]
struct Summary<'a> {
    config_hash: &'a str,
    seed: u64,
    mode: Mode,
    rounds: usize,
    max_test_accuracy: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    per_client_max_accuracy: Option<BTreeMap<u32, f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    selected_ids: Option<Vec<u32>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    em_weights: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    diagnostics: Option<ConvergenceDiagnostics>,
    wall_time_ms: f64,
    config: &'a ExperimentConfig,
}

fn to_pfedwn_config(
    config: &ExperimentConfig,
    target_train: &pfedwn::data::Dataset,
) -> (LoopConfig, PfedwnConfig) {
    let base = LoopConfig {
        arch: config.arch_for(target_train.dim(), target_train.n_classes),
        train: config.to_train_config(),
        rounds: config.train.rounds,
        init_scale: config.train.init_scale,
        master_seed: config.master_seed,
    };
    let pf = PfedwnConfig {
        base: base.clone(),
        alpha: config.train.alpha,
        em: EmConfig { ..config.to_em_config() },
        em_warmup_epochs: config.em.warmup_epochs,
        refresh_em_each_round: config.em.refresh_each_round,
        sample_drops: config.train.drops,
        record_model_trace: false,
    };
    (base, pf)
}

fn run_pfedwn_mode(config: &ExperimentConfig, hash: &str) -> Result<(), RunnerError> {
    let topology = build_layout(config)?;
    let shards = build_shards(config, &topology)?;
    let (_, pf_config) = to_pfedwn_config(config, &shards[&topology.target.id].train);
    let run = run_pfedwn(&topology, &config.to_channel_params(), &shards, &pf_config)
        .map_err(|e| RunnerError::from_module("pfl", e))?;

    write_metrics_csv(&config.output_dir.join("metrics.csv"), hash, config.master_seed, &run.metrics)?;
    write_pi_trace_csv(&config.output_dir.join("pi_trace.csv"), hash, config.master_seed, &run.em_trace)?;

    let target_shard = &shards[&topology.target.id];
    let diagnostics = build_diagnostics(config, &run.metrics, run.c_estimate, target_shard)?;
    let summary = Summary {
        config_hash: hash,
        seed: config.master_seed,
        mode: config.mode,
        rounds: run.metrics.rounds.len(),
        max_test_accuracy: Some(run.metrics.max_test_accuracy),
        per_client_max_accuracy: None,
        selected_ids: Some(run.selection.selected_ids.clone()),
        em_weights: Some(run.em_weights.clone()),
        diagnostics: Some(diagnostics),
        wall_time_ms: run.metrics.wall_time_ms,
        config,
    };
    write_json(&config.output_dir.join("summary.json"), &summary)?;
    if config.save_models {
        save_model(&config.output_dir, "target_model", &run.final_model)?;
    }
    Ok(())
}

fn run_local_mode(config: &ExperimentConfig, hash: &str) -> Result<(), RunnerError> {
    let topology = build_layout(config)?;
    let shards = build_shards(config, &topology)?;
    let (base, _) = to_pfedwn_config(config, &shards[&topology.target.id].train);
    let run = run_local(&shards[&topology.target.id], &base)
        .map_err(|e| RunnerError::from_module("pfl", e))?;
    write_metrics_csv(&config.output_dir.join("metrics.csv"), hash, config.master_seed, &run.metrics)?;
    let summary = Summary {
        config_hash: hash,
        seed: config.master_seed,
        mode: config.mode,
        rounds: run.metrics.rounds.len(),
        max_test_accuracy: Some(run.metrics.max_test_accuracy),
        per_client_max_accuracy: None,
        selected_ids: None,
        em_weights: None,
        diagnostics: None,
        wall_time_ms: run.metrics.wall_time_ms,
        config,
    };
    write_json(&config.output_dir.join("summary.json"), &summary)?;
    if config.save_models {
        save_model(&config.output_dir, "target_model", &run.final_model)?;
    }
    Ok(())
}

fn run_federated_mode(
    config: &ExperimentConfig,
    hash: &str,
    prox_mu: Option<f64>,
) -> Result<(), RunnerError> {
    let topology = build_layout(config)?;
    let shards = build_shards(config, &topology)?;
    let channel = config.to_channel_params();
    // Only the target and the selected neighbors join the training process.
    let selection =
        select_neighbors(&topology, &channel).map_err(|e| RunnerError::from_module("selection", e))?;
    let mut participants = vec![shards[&topology.target.id].clone()];
    for id in &selection.selected_ids {
        participants.push(shards[id].clone());
    }
    let (base, _) = to_pfedwn_config(config, &shards[&topology.target.id].train);
    let run = match prox_mu {
        None => run_fedavg(&participants, &base),
        Some(mu) => run_fedprox(&participants, &base, mu),
    }
    .map_err(|e| RunnerError::from_module("pfl", e))?;

    let target_metrics = &run.per_client[&topology.target.id];
    write_metrics_csv(&config.output_dir.join("metrics.csv"), hash, config.master_seed, target_metrics)?;
    let summary = Summary {
        config_hash: hash,
        seed: config.master_seed,
        mode: config.mode,
        rounds: target_metrics.rounds.len(),
        max_test_accuracy: Some(target_metrics.max_test_accuracy),
        per_client_max_accuracy: Some(
            run.per_client.iter().map(|(id, m)| (*id, m.max_test_accuracy)).collect(),
        ),
        selected_ids: Some(selection.selected_ids.clone()),
        em_weights: None,
        diagnostics: None,
        wall_time_ms: target_metrics.wall_time_ms,
        config,
    };
    write_json(&config.output_dir.join("summary.json"), &summary)?;
    if config.save_models {
        save_model(&config.output_dir, "global_model", &run.global_model)?;
    }
    Ok(())
}

fn run_sweep_mode(config: &ExperimentConfig, hash: &str) -> Result<(), RunnerError> {
    let grid = SweepGrid {
        gamma_th: config.sweep.gamma_th.clone(),
        epsilon: config.sweep.epsilon.clone(),
        density: config.sweep.density.clone(),
        n_subchannels: config.sweep.n_subchannels.clone(),
    };
    let rows = selection_sweep(
        &grid,
        &config.to_channel_params(),
        Area::new(config.topology.area[0], config.topology.area[1]),
        config.sweep.replications,
        config.master_seed,
    )
    .map_err(|e| RunnerError::from_module("selection", e))?;

    let path = config.output_dir.join("sweep.csv");
    let mut lines = Vec::with_capacity(rows.len());
    for r in &rows {
        lines.push(format!(
            "{},{},{},{},{},{},{}",
            r.gamma_th, r.epsilon, r.density, r.n_subchannels, r.mean_selected, r.stderr, r.replications
        ));
    }
    write_csv(
        &path,
        hash,
        config.master_seed,
        "gamma_th,epsilon,density,n_subchannels,mean_selected,stderr,replications",
        &lines,
    )
}

fn run_validate_mode(config: &ExperimentConfig) -> Result<(), RunnerError> {
    let reports = validate::run_all(200_000);
    let mut all_passed = true;
    for report in &reports {
        println!("{}", report.summary_line());
        all_passed &= report.passed;
    }
    let rate_ok = validate::rate_fit_sanity();
    println!("rate_fit_sanity: {}", if rate_ok { "PASS" } else { "FAIL" });
    all_passed &= rate_ok;

    let path = config.output_dir.join("validate.json");
    #[derive(Serialize)]
    struct ValidateDoc {
        config_hash: String,
        seed: u64,
        suites: Vec<SuiteDoc>,
    }
    #[derive(Serialize)]
    struct SuiteDoc {
        name: String,
        passed: bool,
        worst: f64,
        tolerance: f64,
        details: Vec<String>,
    }
    let doc = ValidateDoc {
        config_hash: config.hash(),
        seed: config.master_seed,
        suites: reports
            .iter()
            .map(|r| SuiteDoc {
                name: r.name.to_string(),
                passed: r.passed,
                worst: r.worst,
                tolerance: r.tolerance,
                details: r.details.clone(),
            })
            .collect(),
    };
    write_json(&path, &doc)?;
    if all_passed {
        Ok(())
    } else {
        Err(RunnerError::Numerical("one or more validation suites failed".into()))
    }
}

fn build_diagnostics(
    config: &ExperimentConfig,
    metrics: &Metrics,
    c_estimate: Option<f64>,
    target_shard: &pfedwn::data::ClientShard,
) -> Result<ConvergenceDiagnostics, RunnerError> {
    let grad_trace = metrics.grad_norm_trace();
    let running = analysis::gradient_norm_average(&grad_trace)
        .map_err(|e| RunnerError::from_module("analysis", e))?;
    let l_estimate = analysis::estimate_smoothness(
        config.arch_for(target_shard.train.dim(), target_shard.train.n_classes),
        &target_shard.train,
        config.train.l2,
        32,
        &mut substream(config.master_seed, "smoothness", 0),
    )
    .map_err(|e| RunnerError::from_module("analysis", e))?;
    let mut diagnostics = ConvergenceDiagnostics {
        l_estimate: Some(l_estimate),
        g_estimate: grad_trace.iter().copied().fold(0.0f64, f64::max).sqrt().into(),
        c_estimate,
        grad_norm_running_average: running.last().copied(),
        ..Default::default()
    };
    if config.train.l2 > 0.0 {
        let check = analysis::contraction_condition(
            config.train.alpha,
            config.train.eta,
            config.train.l2,
            config.train.epochs,
        )
        .map_err(|e| RunnerError::from_module("analysis", e))?;
        diagnostics.condition_value = Some(check.value);
        diagnostics.condition_holds = Some(check.holds);
        diagnostics.gamma = Some(check.value);
    }
    Ok(diagnostics)
}

/// Writes a CSV whose first line is `# config_hash=<hash> seed=<seed>`.
pub fn write_csv(
    path: &Path,
    hash: &str,
    seed: u64,
    header: &str,
    rows: &[String],
) -> Result<(), RunnerError> {
    let mut out = String::new();
    out.push_str(&format!("# config_hash={hash} seed={seed}\n"));
    out.push_str(header);
    out.push('\n');
    for row in rows {
        out.push_str(row);
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| RunnerError::Io(format!("writing {}: {e}", path.display())))
}

fn write_metrics_csv(path: &Path, hash: &str, seed: u64, metrics: &Metrics) -> Result<(), RunnerError> {
    let rows: Vec<String> = metrics
        .rounds
        .iter()
        .map(|r| {
            format!(
                "{},{},{},{},{}",
                r.round, r.test_accuracy, r.train_loss, r.grad_norm_sq, r.transmissions
            )
        })
        .collect();
    write_csv(
        path,
        hash,
        seed,
        "round,target_test_acc,target_train_loss,grad_norm_sq,n_transmissions",
        &rows,
    )
}

fn write_pi_trace_csv(
    path: &Path,
    hash: &str,
    seed: u64,
    trace: &[Vec<f64>],
) -> Result<(), RunnerError> {
    let width = trace.first().map_or(0, Vec::len);
    let header: Vec<String> = std::iter::once("iteration".to_string())
        .chain((0..width).map(|m| format!("pi_{m}")))
        .collect();
    let rows: Vec<String> = trace
        .iter()
        .enumerate()
        .map(|(t, pi)| {
            let cells: Vec<String> = pi.iter().map(|w| format!("{w}")).collect();
            format!("{t},{}", cells.join(","))
        })
        .collect();
    write_csv(path, hash, seed, &header.join(","), &rows)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), RunnerError> {
    let mut text = serde_json::to_string_pretty(value)
        .map_err(|e| RunnerError::Io(format!("serializing {}: {e}", path.display())))?;
    text.push('\n');
    fs::write(path, text).map_err(|e| RunnerError::Io(format!("writing {}: {e}", path.display())))
}

fn save_model(dir: &Path, stem: &str, model: &pfedwn::model::ModelParams) -> Result<(), RunnerError> {
    let bin = dir.join(format!("{stem}.bin"));
    let mut file =
        fs::File::create(&bin).map_err(|e| RunnerError::Io(format!("creating {}: {e}", bin.display())))?;
    model
        .write_binary(&mut file)
        .map_err(|e| RunnerError::Io(format!("writing {}: {e}", bin.display())))?;
    let desc = dir.join(format!("{stem}.arch.json"));
    let mut file = fs::File::create(&desc)
        .map_err(|e| RunnerError::Io(format!("creating {}: {e}", desc.display())))?;
    writeln!(file, "{}", model.arch_json())
        .map_err(|e| RunnerError::Io(format!("writing {}: {e}", desc.display())))?;
    Ok(())
}
