//! The five pipeline commands. Each consumes a resolved [`Config`],
//! writes its outputs plus a run manifest into the output directory, and
//! returns the manifest.

use std::path::Path;
use std::time::Instant;

use tscert_core::attacks::{self, BenignTarget, DecisionTarget, SmoothedTarget};
use tscert_core::certmath;
use tscert_core::evalkit::{self, CertificationRecord};
use tscert_core::masks::MaskKind;
use tscert_core::nnkit::{self, ModelParams};
use tscert_core::smoothing::{self, SmoothedModel, SmoothingMode};
use tscert_core::tsdata::{Delimiter, Split};

use crate::config::{AblateKind, Config, SetupMode};
use crate::error::CliError;
use crate::manifest::Manifest;
use crate::pipeline;
use crate::tables;

fn ensure_out_dir(out: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(out)
        .map_err(|e| CliError::data(format!("cannot create {}: {e}", out.display())))
}

/// Train the configured smoothed classifier; writes checkpoint(s), loss
/// trace(s), and the manifest.
pub fn cmd_train(
    config: Config,
    out: &Path,
    delimiter: Option<Delimiter>,
) -> Result<Manifest, CliError> {
    let started = Instant::now();
    ensure_out_dir(out)?;
    let train_set = pipeline::build_split(&config.dataset, Split::Train, delimiter)?;
    let model_cfg = config
        .require_model()?
        .to_model_config(train_set.length, train_set.num_labels)?;
    let train_cfg = config.require_train()?.to_train_config();
    let smoothing_cfg = config.require_smoothing()?.to_smoothing_config()?;

    let mut manifest = Manifest::new("train", config);
    match smoothing_cfg.mode {
        SmoothingMode::DeepEnsemble => {
            let outcomes = smoothing::train_deep_ensemble(
                &train_set,
                &model_cfg,
                &train_cfg,
                smoothing_cfg.sigma,
                smoothing_cfg.m,
                smoothing_cfg.base_seed,
            )?;
            let mut members = Vec::with_capacity(outcomes.len());
            for (i, outcome) in outcomes.iter().enumerate() {
                let name = format!("model_{i}.ckpt");
                nnkit::save_checkpoint(&outcome.params, &out.join(&name))?;
                manifest.outputs.push(name);
                let trace_name = format!("loss_trace_{i}.csv");
                tables::write_loss_trace(&out.join(&trace_name), &outcome.loss_trace)?;
                manifest.outputs.push(trace_name);
                manifest.metrics.insert(
                    format!("final_loss_{i}"),
                    *outcome.loss_trace.last().expect("epochs >= 1"),
                );
                members.push(outcome.params.clone());
            }
            let model = SmoothedModel::DeepEnsemble(members);
            manifest
                .metrics
                .insert("clean_train_accuracy".into(), evalkit::clean_accuracy(&model, &train_set)?);
        }
        _ => {
            let outcome =
                smoothing::train_smoothed(&train_set, &model_cfg, &train_cfg, &smoothing_cfg)?;
            nnkit::save_checkpoint(&outcome.params, &out.join("model.ckpt"))?;
            manifest.outputs.push("model.ckpt".into());
            tables::write_loss_trace(&out.join("loss_trace.csv"), &outcome.loss_trace)?;
            manifest.outputs.push("loss_trace.csv".into());
            manifest
                .metrics
                .insert("final_loss".into(), *outcome.loss_trace.last().expect("epochs >= 1"));
            let model =
                pipeline::assemble_model(&smoothing_cfg, &[outcome.params], train_set.length)?;
            manifest
                .metrics
                .insert("clean_train_accuracy".into(), evalkit::clean_accuracy(&model, &train_set)?);
        }
    }
    manifest.wall_clock_seconds = started.elapsed().as_secs_f64();
    manifest.write(out)?;
    Ok(manifest)
}

/// Certify the test split: one record per sample plus the
/// accuracy-radius curve and summary metrics.
pub fn cmd_certify(
    config: Config,
    out: &Path,
    delimiter: Option<Delimiter>,
) -> Result<Manifest, CliError> {
    let started = Instant::now();
    ensure_out_dir(out)?;
    let test_set = pipeline::build_split(&config.dataset, Split::Test, delimiter)?;
    let smoothing_cfg = config.require_smoothing()?.to_smoothing_config()?;
    let certify = config
        .certify
        .as_ref()
        .ok_or_else(|| CliError::config("[certify] section required"))?
        .clone();

    let checkpoints: Vec<ModelParams> = certify
        .checkpoints
        .iter()
        .map(|p| pipeline::load_compatible_checkpoint(p, &test_set))
        .collect::<Result<_, _>>()?;
    let model = pipeline::assemble_model(&smoothing_cfg, &checkpoints, test_set.length)?;

    let max_samples = certify.max_samples.unwrap_or(usize::MAX);
    let records = evalkit::certify_dataset(&model, &test_set, &smoothing_cfg, max_samples)?;

    let points = certify.radius_grid_points.max(2);
    let grid: Vec<f64> = (0..points)
        .map(|i| certify.radius_grid_max * i as f64 / (points - 1) as f64)
        .collect();
    let curve = evalkit::accuracy_radius_curve(&records, &grid)?;

    let mut manifest = Manifest::new("certify", config);
    tables::write_records(&out.join("records.csv"), &records)?;
    manifest.outputs.push("records.csv".into());
    tables::write_curve(&out.join("accuracy_radius_curve.csv"), &curve)?;
    manifest.outputs.push("accuracy_radius_curve.csv".into());

    let abstained = records.iter().filter(|r| r.abstained).count();
    manifest.metrics.insert("acr".into(), evalkit::acr(&records)?);
    manifest
        .metrics
        .insert("certified_accuracy_at_0".into(), evalkit::certified_accuracy(&records, 0.0));
    manifest
        .metrics
        .insert("clean_accuracy".into(), evalkit::clean_accuracy(&model, &test_set)?);
    manifest
        .metrics
        .insert("abstention_rate".into(), abstained as f64 / records.len().max(1) as f64);
    manifest.metrics.insert("samples".into(), records.len() as f64);
    manifest.wall_clock_seconds = started.elapsed().as_secs_f64();
    manifest.write(out)?;
    Ok(manifest)
}

/// Storage keeping attack-target models alive while `&dyn` refs run.
enum OwnedTarget {
    Benign(ModelParams),
    Smoothed(SmoothedModel),
}

/// Run the PGD-ℓ2 sweep over the configured setups and ε grid.
pub fn cmd_attack(
    config: Config,
    out: &Path,
    delimiter: Option<Delimiter>,
) -> Result<Manifest, CliError> {
    let started = Instant::now();
    ensure_out_dir(out)?;
    let test_set = pipeline::build_split(&config.dataset, Split::Test, delimiter)?;
    let sigma = config.require_smoothing()?.sigma;
    let attack = config
        .attack
        .as_ref()
        .ok_or_else(|| CliError::config("[attack] section required"))?
        .clone();

    let mut owned: Vec<(String, OwnedTarget)> = Vec::with_capacity(attack.setups.len());
    for setup in &attack.setups {
        let params: Vec<ModelParams> = setup
            .checkpoints
            .iter()
            .map(|p| pipeline::load_compatible_checkpoint(p, &test_set))
            .collect::<Result<_, _>>()?;
        let target = match setup.mode {
            SetupMode::Benign => OwnedTarget::Benign(params[0].clone()),
            SetupMode::Single => OwnedTarget::Smoothed(SmoothedModel::Single(params[0].clone())),
            SetupMode::SelfEnsemble => {
                let set = pipeline::setup_mask_set(
                    setup.m.expect("validated"),
                    setup.mask_kind.expect("validated"),
                    setup.keep_ratio.unwrap_or(0.9),
                    setup.mask_seed.expect("validated"),
                    test_set.length,
                )?;
                OwnedTarget::Smoothed(SmoothedModel::SelfEnsemble(params[0].clone(), set))
            }
            SetupMode::DeepEnsemble => OwnedTarget::Smoothed(SmoothedModel::DeepEnsemble(params)),
        };
        owned.push((setup.name.clone(), target));
    }

    let smoothed_targets: Vec<(usize, SmoothedTarget)> = owned
        .iter()
        .enumerate()
        .filter_map(|(i, (_, t))| match t {
            OwnedTarget::Smoothed(model) => Some((
                i,
                SmoothedTarget::new(model, sigma, attack.eot_draws, attack.n_eval, attack.seed),
            )),
            OwnedTarget::Benign(_) => None,
        })
        .collect();
    let benign_targets: Vec<(usize, BenignTarget)> = owned
        .iter()
        .enumerate()
        .filter_map(|(i, (_, t))| match t {
            OwnedTarget::Benign(params) => Some((i, BenignTarget::new(params))),
            OwnedTarget::Smoothed(_) => None,
        })
        .collect();
    let mut setups_by_index: Vec<(usize, &str, &dyn DecisionTarget)> = Vec::new();
    for (i, t) in &smoothed_targets {
        setups_by_index.push((*i, owned[*i].0.as_str(), t));
    }
    for (i, t) in &benign_targets {
        setups_by_index.push((*i, owned[*i].0.as_str(), t));
    }
    setups_by_index.sort_by_key(|(i, _, _)| *i);
    let setups: Vec<(String, &dyn DecisionTarget)> =
        setups_by_index.into_iter().map(|(_, name, t)| (name.to_string(), t)).collect();

    let rows = attacks::attack_sweep(
        &setups,
        &test_set,
        &attack.epsilons,
        attack.steps,
        attack.eot_draws,
        attack.n_eval,
        attack.max_samples,
        attack.seed,
    )?;

    let mut manifest = Manifest::new("attack", config);
    tables::write_asr(&out.join("asr.csv"), &rows)?;
    manifest.outputs.push("asr.csv".into());
    for row in &rows {
        manifest
            .metrics
            .insert(format!("asr:{}:{}", row.setup, row.epsilon), row.asr);
    }
    manifest.metrics.insert("samples".into(), rows.first().map_or(0.0, |r| r.n_samples as f64));
    manifest.wall_clock_seconds = started.elapsed().as_secs_f64();
    manifest.write(out)?;
    Ok(manifest)
}

/// Ensemble-size or keep-ratio ablation over paired seeds.
pub fn cmd_ablate(
    config: Config,
    out: &Path,
    delimiter: Option<Delimiter>,
) -> Result<Manifest, CliError> {
    let started = Instant::now();
    ensure_out_dir(out)?;
    let test_set = pipeline::build_split(&config.dataset, Split::Test, delimiter)?;
    let smoothing_cfg = config.require_smoothing()?.to_smoothing_config()?;
    let ablate = config
        .ablate
        .as_ref()
        .ok_or_else(|| CliError::config("[ablate] section required"))?
        .clone();
    let max_samples = ablate.max_samples.unwrap_or(usize::MAX);

    let mut manifest = Manifest::new("ablate", config.clone());
    match ablate.kind {
        AblateKind::EnsembleSize => {
            if smoothing_cfg.mask.is_none() {
                return Err(CliError::config(
                    "ablate.kind = ensemble_size needs smoothing.mode = self_ensemble mask params",
                ));
            }
            let params = pipeline::load_compatible_checkpoint(
                ablate.checkpoint.as_ref().expect("validated"),
                &test_set,
            )?;
            let sizes = ablate.sizes.as_ref().expect("validated");
            let rows = evalkit::ablate_ensemble_size(
                &params,
                &test_set,
                sizes,
                &smoothing_cfg,
                max_samples,
            )?;
            tables::write_ensemble_size_rows(&out.join("ablation.csv"), &rows)?;
            manifest.outputs.push("ablation.csv".into());
            for row in &rows {
                manifest.metrics.insert(format!("acr:m={}", row.m), row.acr);
            }
        }
        AblateKind::KeepRatio => {
            let train_set = pipeline::build_split(&config.dataset, Split::Train, delimiter)?;
            let model_cfg = config
                .require_model()?
                .to_model_config(train_set.length, train_set.num_labels)?;
            let train_cfg = config.require_train()?.to_train_config();
            let kinds = ablate
                .mask_kinds
                .clone()
                .unwrap_or_else(|| vec![MaskKind::Binomial]);
            let ratios = ablate.keep_ratios.as_ref().expect("validated");
            let rows = evalkit::ablate_keep_ratio(
                &train_set,
                &test_set,
                &model_cfg,
                &train_cfg,
                &kinds,
                ratios,
                &smoothing_cfg,
                max_samples,
            )?;
            tables::write_keep_ratio_rows(&out.join("ablation.csv"), &rows)?;
            manifest.outputs.push("ablation.csv".into());
            for row in &rows {
                let kind = match row.kind {
                    MaskKind::Binomial => "binomial",
                    MaskKind::Continuous => "continuous",
                };
                manifest
                    .metrics
                    .insert(format!("acr:{kind}:p={}", row.keep_ratio), row.acr);
            }
        }
    }
    manifest.wall_clock_seconds = started.elapsed().as_secs_f64();
    manifest.write(out)?;
    Ok(manifest)
}

/// Combine manifests into a summary table and emit figure data.
pub fn cmd_report(config: Config, out: &Path) -> Result<Manifest, CliError> {
    let started = Instant::now();
    ensure_out_dir(out)?;
    let report = config
        .report
        .as_ref()
        .ok_or_else(|| CliError::config("[report] section required"))?
        .clone();

    let mut rows: Vec<tables::SummaryRow> = Vec::with_capacity(report.manifests.len());
    for path in &report.manifests {
        let m = Manifest::read(path)?;
        let missing = |field: &str| {
            CliError::data(format!("manifest {} is missing {field}", path.display()))
        };
        let smoothing = m
            .config
            .smoothing
            .as_ref()
            .ok_or_else(|| missing("[config.smoothing]"))?;
        let metric = |name: &str| {
            m.metrics
                .get(name)
                .copied()
                .ok_or_else(|| missing(&format!("metrics.{name}")))
        };
        rows.push(tables::SummaryRow {
            dataset: pipeline::dataset_display_name(&m.config),
            sigma: smoothing.sigma,
            mode: match smoothing.mode {
                SmoothingMode::Single => "single".to_string(),
                SmoothingMode::SelfEnsemble => "self_ensemble".to_string(),
                SmoothingMode::DeepEnsemble => "deep_ensemble".to_string(),
            },
            acr: metric("acr")?,
            certified_accuracy_at_0: metric("certified_accuracy_at_0")?,
            clean_accuracy: metric("clean_accuracy")?,
        });
    }
    rows.sort_by(|a, b| {
        a.dataset
            .cmp(&b.dataset)
            .then(a.sigma.total_cmp(&b.sigma))
            .then(a.mode.cmp(&b.mode))
    });

    let points = report.surface_pa_points.max(2);
    let pa_grid: Vec<f64> =
        (0..points).map(|i| 0.5 + (0.999 - 0.5) * i as f64 / (points - 1) as f64).collect();
    let surface =
        certmath::emit_radius_surface(report.surface_sigma, &report.surface_alphas, &pa_grid)?;

    let mut manifest = Manifest::new("report", config);
    tables::write_summary(&out.join("summary.csv"), &rows)?;
    manifest.outputs.push("summary.csv".into());
    tables::write_surface(&out.join("figure2_radius_surface.csv"), &surface)?;
    manifest.outputs.push("figure2_radius_surface.csv".into());
    manifest.metrics.insert("rows".into(), rows.len() as f64);
    manifest.wall_clock_seconds = started.elapsed().as_secs_f64();
    manifest.write(out)?;
    Ok(manifest)
}

/// Certification records from a finished certify run (used by reruns and
/// tests).
pub fn read_records_output(dir: &Path) -> Result<Vec<CertificationRecord>, CliError> {
    tables::read_records(&dir.join("records.csv"))
}
