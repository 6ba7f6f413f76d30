//! One function per subcommand. Each returns the run status or a fatal
//! error, and writes a manifest next to its primary output.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Duration;

use anyhow::{bail, ensure, Context, Result};
use gsadvisor_core::evaluate::{
    curve_r2, evaluate, mean_regret, subset_weights, AblationRow, EvaluationReport, GroundTruth, LabeledTruth,
    SyntheticTruth, ADAPTIVE,
};
use gsadvisor_core::pipeline::{fit_predictor, model_featurizer, prompt_inputs, select_prompts};
use gsadvisor_core::predictor::{load_model, save_model, MAX_PARAMS};
use gsadvisor_core::prompts::read_prompts;
use gsadvisor_core::selector::write_selection_report;
use gsadvisor_core::sweep::{read_dataset, run_sweep, write_dataset, SweepOptions, SweepPlan, SweepReport};
use gsadvisor_core::text_features::ModifierLexicon;
use gsadvisor_core::{PredictorModel, PromptRecord, UtilityConfig};
use serde::Serialize;

use crate::config::RunConfig;
use crate::manifest::ManifestBuilder;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    Success,
    Partial,
}

pub const SWEEP_REPORT_SCHEMA: &str = "sweep.report.v1";
pub const TRAIN_REPORT_SCHEMA: &str = "train.report.v1";

fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let mut s = OsString::from(path.as_os_str());
    s.push(suffix);
    PathBuf::from(s)
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn load_prompts(path: &Path) -> Result<Vec<PromptRecord>> {
    read_prompts(path).with_context(|| format!("reading prompts {}", path.display()))
}

fn add_embeddings(manifest: &mut ManifestBuilder, cfg: &RunConfig) -> Result<()> {
    if let Some(path) = &cfg.paths.embeddings {
        manifest.input("embeddings", path)?;
    }
    Ok(())
}

#[derive(Serialize)]
struct SweepReportFile<'a> {
    schema: &'static str,
    #[serde(flatten)]
    report: &'a SweepReport,
}

pub fn sweep(cfg: &RunConfig, out: Option<&Path>) -> Result<Status> {
    let prompts_path = cfg.prompts_path()?;
    let prompts = load_prompts(prompts_path)?;
    let dataset_path = out.unwrap_or(&cfg.paths.dataset);
    let schema = cfg.metric_schema()?;
    let plan = SweepPlan {
        prompts,
        grid: cfg.grid()?,
        samples_per_pair: cfg.samples_per_pair(),
        seed_base: cfg.seed,
        metric_schema: schema.clone(),
        provider: cfg.provider()?,
    };
    let journal = sibling(dataset_path, ".journal");
    let options = SweepOptions {
        workers: cfg.workers(),
        max_retries: cfg.sweep.max_retries,
        retry_backoff: Duration::from_millis(cfg.sweep.retry_backoff_ms),
        journal: Some(journal.clone()),
        max_pairs: None,
    };
    let outcome = run_sweep(&plan, &options)?;
    write_dataset(&outcome.records, &schema, plan.samples_per_pair, dataset_path)?;
    let report = &outcome.report;
    let report_path = sibling(dataset_path, ".report.json");
    write_json(
        &report_path,
        &SweepReportFile {
            schema: SWEEP_REPORT_SCHEMA,
            report,
        },
    )?;
    let mut manifest = ManifestBuilder::new("sweep", cfg);
    manifest.input("prompts", prompts_path)?.output("dataset", dataset_path)?;
    manifest.write(dataset_path)?;

    eprintln!(
        "sweep: {} of {} pairs scored ({} resumed), {} failed, {:.1}s",
        report.pairs_completed + report.pairs_resumed,
        report.pairs_planned,
        report.pairs_resumed,
        report.failures.len(),
        report.elapsed_secs
    );
    for f in &report.failures {
        eprintln!("  failed {} @ {} after {} attempts: {}", f.id, f.scale, f.attempts, f.error);
    }
    if report.failures.is_empty() && !report.interrupted {
        for path in [journal.clone(), sibling(&journal, ".records")] {
            if path.exists() {
                std::fs::remove_file(&path).with_context(|| format!("removing {}", path.display()))?;
            }
        }
        Ok(Status::Success)
    } else {
        eprintln!("sweep: partial; rerun to retry the failed pairs");
        Ok(Status::Partial)
    }
}

#[derive(Serialize)]
struct TrainReportFile<'a> {
    schema: &'static str,
    #[serde(flatten)]
    report: &'a gsadvisor_core::predictor::TrainingReport,
}

pub fn train(cfg: &RunConfig, out: Option<&Path>) -> Result<Status> {
    let dataset = read_dataset(&cfg.paths.dataset)
        .with_context(|| format!("reading dataset {}", cfg.paths.dataset.display()))?;
    let prompts_path = cfg.prompts_path()?;
    let prompts = load_prompts(prompts_path)?;
    let provider = cfg.embedding_provider()?;
    let config = cfg.train_config();
    let every = (config.epochs / 10).max(1);
    let (model, report) = fit_predictor(
        &dataset,
        &prompts,
        &provider,
        &config,
        Some(&cfg.metric_schema()?),
        |epoch, loss| {
            if (epoch + 1) % every == 0 {
                eprintln!("epoch {:>4}/{}: loss {:.6}", epoch + 1, config.epochs, loss);
            }
        },
    )?;
    println!("param_count {}", report.param_count);
    ensure!(
        report.param_count <= MAX_PARAMS,
        "model has {} parameters, the budget is {MAX_PARAMS}",
        report.param_count
    );
    let model_path = out.unwrap_or(&cfg.paths.model);
    save_model(&model, model_path)?;
    let report_path = sibling(model_path, ".train.json");
    write_json(
        &report_path,
        &TrainReportFile {
            schema: TRAIN_REPORT_SCHEMA,
            report: &report,
        },
    )?;
    eprintln!(
        "train: loss {:.6} -> {:.6} over {} steps",
        report.initial_loss, report.final_loss, report.steps
    );
    let mut manifest = ManifestBuilder::new("train", cfg);
    manifest.input("dataset", &cfg.paths.dataset)?.input("prompts", prompts_path)?;
    add_embeddings(&mut manifest, cfg)?;
    manifest.output("model", model_path)?.output("train_report", &report_path)?;
    manifest.write(model_path)?;
    Ok(Status::Success)
}

fn load_checked_model(cfg: &RunConfig) -> Result<(PredictorModel, UtilityConfig)> {
    let path = &cfg.paths.model;
    let model = load_model(path).with_context(|| format!("loading model {}", path.display()))?;
    if cfg.metrics.is_some() {
        let expected = cfg.metric_schema()?;
        if &expected != model.metric_schema() {
            bail!(
                "model metrics {:?} differ from configured metrics {:?}",
                model.metric_schema().names,
                expected.names
            );
        }
    }
    let ucfg = cfg.utility_config(model.d_q())?;
    Ok((model, ucfg))
}

fn choices(
    model: &PredictorModel,
    prompts: &[PromptRecord],
    cfg: &RunConfig,
    ucfg: &UtilityConfig,
) -> Result<BTreeMap<String, f64>> {
    let lines = select_prompts(model, prompts, &cfg.embedding_provider()?, ModifierLexicon::bundled(), &cfg.grid()?, ucfg)?;
    Ok(lines.into_iter().map(|l| (l.id, l.chosen_scale)).collect())
}

pub fn select(cfg: &RunConfig, out: Option<&Path>) -> Result<Status> {
    let (model, ucfg) = load_checked_model(cfg)?;
    let prompts_path = cfg.select_prompts_path()?;
    let prompts = load_prompts(prompts_path)?;
    let provider = cfg.embedding_provider()?;
    let lines = select_prompts(&model, &prompts, &provider, ModifierLexicon::bundled(), &cfg.grid()?, &ucfg)?;
    let out_path = out.unwrap_or(&cfg.paths.selection);
    let mut w = BufWriter::new(File::create(out_path).with_context(|| format!("creating {}", out_path.display()))?);
    write_selection_report(&lines, &mut w)?;
    w.flush()?;
    drop(w);
    let mut manifest = ManifestBuilder::new("select", cfg);
    manifest.input("model", &cfg.paths.model)?.input("prompts", prompts_path)?;
    add_embeddings(&mut manifest, cfg)?;
    manifest.output("selection", out_path)?;
    manifest.write(out_path)?;
    eprintln!("select: {} prompts", lines.len());
    Ok(Status::Success)
}

pub fn evaluate_cmd(cfg: &RunConfig, out: Option<&Path>) -> Result<Status> {
    let (model, ucfg) = load_checked_model(cfg)?;
    let prompts_path = cfg.eval_prompts_path()?;
    let prompts = load_prompts(prompts_path)?;
    let names = model.metric_schema().names.clone();
    let truth: Box<dyn GroundTruth> = match &cfg.evaluate.truth_dataset {
        Some(path) => {
            let data = read_dataset(path).with_context(|| format!("reading truth dataset {}", path.display()))?;
            ensure!(
                &data.metric_schema == model.metric_schema(),
                "truth dataset metrics {:?} differ from the model's {:?}",
                data.metric_schema.names,
                names
            );
            Box::new(LabeledTruth::from_dataset(&data))
        }
        None if cfg.is_synthetic() => {
            let mut params = cfg.synthetic_params()?;
            params.noise_std = 0.0;
            Box::new(SyntheticTruth::new(params, names.clone()))
        }
        None => bail!("evaluation with an external provider needs evaluate.truth_dataset"),
    };
    let grid = cfg.grid()?;
    let adaptive = choices(&model, &prompts, cfg, &ucfg)?;
    let summary = evaluate(&prompts, &adaptive, truth.as_ref(), &grid, &ucfg.weights, ucfg.anchor)?;

    let featurizer = model_featurizer(&model, ModifierLexicon::bundled())?;
    let inputs = prompt_inputs(&prompts, &featurizer, &cfg.embedding_provider()?)?;
    let r2 = curve_r2(&model, &prompts, &inputs, truth.as_ref(), &grid)?;

    let full = summary.policy(ADAPTIVE).map(|p| p.mean_regret).unwrap_or(f64::NAN);
    let mut ablations = Vec::new();
    for subset in &cfg.evaluate.ablation {
        let weights = subset_weights(&ucfg.weights, &names, subset)?;
        let sub_cfg = UtilityConfig::new(weights.clone(), ucfg.alpha, ucfg.anchor)?;
        let picks = choices(&model, &prompts, cfg, &sub_cfg)?;
        ablations.push(AblationRow {
            metrics: subset.clone(),
            weights,
            mean_regret: mean_regret(&prompts, &picks, truth.as_ref(), &grid, &ucfg.weights)?,
            full_mean_regret: full,
        });
    }

    let report = EvaluationReport::new(summary, &r2, ablations);
    let out_path = out.unwrap_or(&cfg.paths.evaluation);
    write_json(out_path, &report)?;
    print!("{}", report.render());
    let mut manifest = ManifestBuilder::new("evaluate", cfg);
    manifest.input("model", &cfg.paths.model)?.input("prompts", prompts_path)?;
    add_embeddings(&mut manifest, cfg)?;
    if let Some(path) = &cfg.evaluate.truth_dataset {
        manifest.input("truth_dataset", path)?;
    }
    manifest.output("evaluation", out_path)?;
    manifest.write(out_path)?;
    Ok(Status::Success)
}

pub fn report(cfg: &RunConfig, out: Option<&Path>) -> Result<Status> {
    let input = &cfg.paths.evaluation;
    let text = std::fs::read_to_string(input).with_context(|| format!("reading {}", input.display()))?;
    let report: EvaluationReport =
        serde_json::from_str(&text).with_context(|| format!("parsing {}", input.display()))?;
    ensure!(
        report.schema == gsadvisor_core::evaluate::EVALUATION_SCHEMA,
        "{} has schema {:?}",
        input.display(),
        report.schema
    );
    let rendered = report.render();
    let out_path = out.unwrap_or(&cfg.paths.report);
    std::fs::write(out_path, &rendered).with_context(|| format!("writing {}", out_path.display()))?;
    print!("{rendered}");
    let mut manifest = ManifestBuilder::new("report", cfg);
    manifest.input("evaluation", input)?.output("report", out_path)?;
    manifest.write(out_path)?;
    Ok(Status::Success)
}
