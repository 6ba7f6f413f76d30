//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;
use std::time::{Duration, Instant};

use gsadvisor_core::evaluate::{evaluate, mean_regret, subset_weights, SyntheticTruth, ADAPTIVE, BEST_FIXED};
use gsadvisor_core::pipeline::{fit, fit_predictor, model_featurizer, prompt_inputs, select_prompts};
use gsadvisor_core::predictor::{
    gradient_check, save_model, Direction, MetricSchema, PredictorError, TrainingExample, MAX_PARAMS,
};
use gsadvisor_core::prompts::synthetic_pool;
use gsadvisor_core::selector::{cfg_combine, select_from_curve, tilt_distribution, write_selection_report, NoisePrediction};
use gsadvisor_core::sweep::{run_sweep, write_dataset, Dataset, Provider, SweepOptions, SweepPlan, SyntheticOracleParams};
use gsadvisor_core::text_features::{FeatureNormalization, Featurizer, ModifierLexicon};
use gsadvisor_core::{EmbeddingProvider, PredictorModel, PromptRecord, QualityVector, ScaleGrid, TrainConfig, UtilityConfig};
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const CFG_PAIRS: usize = 1000;
const CFG_TOLERANCE: f64 = 1e-12;
const CFG_TIME: Duration = Duration::from_secs(1);

const TILT_DISTRIBUTIONS: usize = 1000;
const TILT_SUM_TOLERANCE: f64 = 1e-9;
const TILT_TIME: Duration = Duration::from_secs(1);

const GRAD_MODELS: usize = 20;
const GRAD_MAX_PARAMS: usize = 1000;
const GRAD_EPSILON: f64 = 1e-5;
const GRAD_TOLERANCE: f64 = 1e-4;
const GRAD_TIME: Duration = Duration::from_secs(10);

const SELECTOR_INSTANCES: usize = 100;
const SELECTOR_HUGE_ALPHA: f64 = 1e9;
const SELECTOR_ALPHAS: [f64; 5] = [0.0, 0.01, 0.1, 1.0, 10.0];

const E2E_TRAIN_PROMPTS: usize = 2000;
const E2E_HELD_OUT: usize = 500;
const E2E_SAMPLES: usize = 16;
const E2E_NOISE: f64 = 0.1;
const E2E_EPOCHS: usize = 10;
const E2E_MIN_R2: f64 = 0.9;
const E2E_MIN_WITHIN_ONE_STEP: f64 = 0.9;
const E2E_MIN_WIN_RATE: f64 = 0.6;
const E2E_MAX_LOSS_RATIO: f64 = 0.1;
const E2E_TIME: Duration = Duration::from_secs(600);

const ABLATION_TRAIN_PROMPTS: usize = 1000;
const ABLATION_HELD_OUT: usize = 500;
const ABLATION_OFFSETS: [f64; 4] = [-0.5, 3.0, -1.0, -0.7];
const ABLATION_SUBSET: [&str; 2] = ["kid", "clip"];

const DETERMINISM_PROMPTS: usize = 300;
const DETERMINISM_EPOCHS: usize = 2;

const SEED: u64 = 20_240_501;

struct Outcome {
    name: &'static str,
    pass: bool,
    detail: String,
}

fn outcome(name: &'static str, pass: bool, detail: String) -> Outcome {
    Outcome { name, pass, detail }
}

fn random_vec(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-scale..scale)).collect()
}

fn cfg_endpoints() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(SEED);
    let mut endpoints_exact = true;
    let mut worst: f64 = 0.0;
    for _ in 0..CFG_PAIRS {
        let d = rng.random_range(1..=256);
        let cond = random_vec(&mut rng, d, 3.0);
        let uncond = random_vec(&mut rng, d, 3.0);
        let np = NoisePrediction::new(cond.clone(), uncond.clone()).unwrap();
        endpoints_exact &= cfg_combine(&np, 1.0) == cond && cfg_combine(&np, 0.0) == uncond;
        let w = rng.random_range(0.0..15.0);
        for ((g, c), u) in cfg_combine(&np, w).iter().zip(&cond).zip(&uncond) {
            worst = worst.max((g - (u + w * (c - u))).abs());
        }
    }
    let elapsed = start.elapsed();
    outcome(
        "CFG endpoints",
        endpoints_exact && worst <= CFG_TOLERANCE && elapsed < CFG_TIME,
        format!(
            "{CFG_PAIRS} pairs, endpoints exact: {endpoints_exact}, max affine error {worst:.2e} (<= {CFG_TOLERANCE:e}), {:.3}s",
            elapsed.as_secs_f64()
        ),
    )
}

fn random_distribution(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    let raw: Vec<f64> = (0..n).map(|_| rng.random_range(0.01..1.0f64).powi(3)).collect();
    let total: f64 = raw.iter().sum();
    let mut p: Vec<f64> = raw.iter().map(|v| v / total).collect();
    let rest: f64 = p[1..].iter().sum();
    p[0] = 1.0 - rest;
    p
}

fn tilting() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(SEED + 1);
    let exponents = [0.0, 0.25, 0.5, 1.0, 2.0, 4.0, 8.0, 16.0];
    let mut worst_sum: f64 = 0.0;
    let mut identity = true;
    let mut sharpening = true;
    for _ in 0..TILT_DISTRIBUTIONS {
        let n = rng.random_range(2..=40);
        let cond = random_distribution(&mut rng, n);
        let marg = random_distribution(&mut rng, n);
        let ratio: Vec<f64> = cond.iter().zip(&marg).map(|(c, m)| c / m).collect();
        let top = (0..n).max_by(|&a, &b| ratio[a].total_cmp(&ratio[b])).unwrap();
        let mut last = f64::NEG_INFINITY;
        for &s in &exponents {
            let p = tilt_distribution(&cond, &marg, s).unwrap();
            worst_sum = worst_sum.max((p.iter().sum::<f64>() - 1.0).abs());
            if s == 0.0 {
                identity &= p == cond;
            }
            sharpening &= p[top] >= last;
            last = p[top];
        }
    }
    let elapsed = start.elapsed();
    outcome(
        "Tilting",
        worst_sum <= TILT_SUM_TOLERANCE && identity && sharpening && elapsed < TILT_TIME,
        format!(
            "{TILT_DISTRIBUTIONS} distributions, max |sum - 1| {worst_sum:.2e} (<= {TILT_SUM_TOLERANCE:e}), s=0 identity: {identity}, sharpening: {sharpening}, {:.3}s",
            elapsed.as_secs_f64()
        ),
    )
}

fn small_model(rng: &mut ChaCha8Rng, featurizer: &Featurizer, prompts: &[PromptRecord]) -> (PredictorModel, TrainingExample) {
    loop {
        let d_e = rng.random_range(8..=16);
        let d_c = rng.random_range(2..=4);
        let d_q = rng.random_range(1..=4);
        let hidden: Vec<usize> = (0..rng.random_range(1..=2)).map(|_| rng.random_range(3..=12)).collect();
        let schema = MetricSchema::new((0..d_q).map(|m| (format!("m{m}"), Direction::HigherBetter))).unwrap();
        let pool: Vec<_> = prompts.iter().map(|p| featurizer.features(&p.text)).collect();
        let norm = FeatureNormalization::fit(pool.iter());
        let model = PredictorModel::initialize(d_e, d_c, &hidden, schema, norm, rng.random()).unwrap();
        if model.param_count() > GRAD_MAX_PARAMS {
            continue;
        }
        let prompt = prompts.choose(rng).unwrap();
        let embedding = EmbeddingProvider::hashed(d_e).unwrap().get(prompt).unwrap();
        let example = TrainingExample {
            prompt_id: prompt.id.clone(),
            embedding: Arc::new(embedding),
            complexity: featurizer.features(&prompt.text),
            scale: rng.random_range(1.0..12.0),
            target: QualityVector(random_vec(rng, d_q, 2.0)),
        };
        return (model, example);
    }
}

fn gradients() -> Outcome {
    let prompts = synthetic_pool(64, SEED, "g");
    let featurizer = Featurizer::fit(&prompts.iter().map(|p| p.text.as_str()).collect::<Vec<_>>()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(SEED + 2);
    let start = Instant::now();
    let mut worst: f64 = 0.0;
    let mut largest = 0;
    for _ in 0..GRAD_MODELS {
        let (model, example) = small_model(&mut rng, &featurizer, &prompts);
        largest = largest.max(model.param_count());
        worst = worst.max(gradient_check(&model, &example, GRAD_EPSILON).unwrap());
    }
    let elapsed = start.elapsed();
    outcome(
        "Gradient correctness",
        worst < GRAD_TOLERANCE && elapsed < GRAD_TIME,
        format!(
            "{GRAD_MODELS} models (largest {largest} params), eps {GRAD_EPSILON:e}, max relative error {worst:.2e} (< {GRAD_TOLERANCE:e}), {:.2}s",
            elapsed.as_secs_f64()
        ),
    )
}

fn parameter_budget() -> Outcome {
    let d = TrainConfig::default();
    let schema = SyntheticOracleParams::image_schema();
    let model = PredictorModel::initialize(
        gsadvisor_core::embedding::DEFAULT_HASHED_DIM,
        d.complexity_dim,
        &d.hidden_sizes,
        schema.clone(),
        FeatureNormalization::identity(),
        0,
    )
    .unwrap();
    let over = PredictorModel::initialize(
        gsadvisor_core::embedding::DEFAULT_HASHED_DIM,
        d.complexity_dim,
        &[1024, 1024],
        schema,
        FeatureNormalization::identity(),
        0,
    );
    let rejected = matches!(over, Err(PredictorError::BudgetExceeded { .. }));
    outcome(
        "Parameter budget",
        model.param_count() <= MAX_PARAMS && rejected,
        format!(
            "default model {} params (<= {MAX_PARAMS}), over-budget architecture rejected: {rejected}",
            model.param_count()
        ),
    )
}

fn selector_limits() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(SEED + 3);
    let mut nearest_ok = 0;
    let mut monotone = true;
    for _ in 0..SELECTOR_INSTANCES {
        let mut scales: Vec<f64> = (0..rng.random_range(2..=20)).map(|_| (rng.random_range(0.25..30.0f64) * 4.0).round() / 4.0).collect();
        scales.sort_by(f64::total_cmp);
        scales.dedup();
        if scales.len() < 2 {
            scales = vec![1.0, 2.0];
        }
        let grid = ScaleGrid::new(scales).unwrap();
        let d_q = rng.random_range(1..=5);
        let weights: Vec<f64> = (0..d_q).map(|_| rng.random_range(0.0..1.0)).collect();
        let curve: Vec<QualityVector> = (0..grid.len()).map(|_| QualityVector(random_vec(&mut rng, d_q, 5.0))).collect();
        let anchor = rng.random_range(0.1..35.0);

        let cfg = UtilityConfig::new(weights.clone(), SELECTOR_HUGE_ALPHA, anchor).unwrap();
        let chosen = select_from_curve(&grid, &cfg, curve.clone()).unwrap().chosen_scale;
        if chosen == grid.nearest(anchor) {
            nearest_ok += 1;
        }
        let mut last = f64::INFINITY;
        for &alpha in &SELECTOR_ALPHAS {
            let cfg = UtilityConfig::new(weights.clone(), alpha, anchor).unwrap();
            let d = (select_from_curve(&grid, &cfg, curve.clone()).unwrap().chosen_scale - anchor).abs();
            monotone &= d <= last;
            last = d;
        }
    }
    outcome(
        "Selector limits",
        nearest_ok == SELECTOR_INSTANCES && monotone,
        format!(
            "alpha={SELECTOR_HUGE_ALPHA:e} picks the grid point nearest the anchor on {nearest_ok}/{SELECTOR_INSTANCES}; |scale - anchor| non-increasing over alpha {SELECTOR_ALPHAS:?}: {monotone}"
        ),
    )
}

struct Trained {
    model: PredictorModel,
    initial_loss: f64,
    final_loss: f64,
    provider: EmbeddingProvider,
}

fn sweep_and_train(params: &SyntheticOracleParams, prompts: &[PromptRecord], epochs: usize, workers: usize) -> (Dataset, Trained) {
    let schema = SyntheticOracleParams::image_schema();
    let plan = SweepPlan {
        prompts: prompts.to_vec(),
        grid: ScaleGrid::image_default(),
        samples_per_pair: E2E_SAMPLES,
        seed_base: SEED,
        metric_schema: schema.clone(),
        provider: Provider::Synthetic(params.clone()),
    };
    let options = SweepOptions {
        workers,
        ..SweepOptions::default()
    };
    let out = run_sweep(&plan, &options).unwrap();
    let dataset = Dataset {
        metric_schema: schema,
        n_g: E2E_SAMPLES,
        records: out.records,
    };
    let provider = EmbeddingProvider::hashed(gsadvisor_core::embedding::DEFAULT_HASHED_DIM).unwrap();
    let config = TrainConfig {
        epochs,
        seed: SEED,
        ..TrainConfig::default()
    };
    let (model, report) = fit(&dataset, prompts, &provider, &config).unwrap();
    let trained = Trained {
        model,
        initial_loss: report.initial_loss,
        final_loss: report.final_loss,
        provider,
    };
    (dataset, trained)
}

fn choose(t: &Trained, prompts: &[PromptRecord], cfg: &UtilityConfig) -> BTreeMap<String, f64> {
    select_prompts(&t.model, prompts, &t.provider, ModifierLexicon::bundled(), &ScaleGrid::image_default(), cfg)
        .unwrap()
        .into_iter()
        .map(|l| (l.id, l.chosen_scale))
        .collect()
}

fn end_to_end() -> Outcome {
    let start = Instant::now();
    let pool = synthetic_pool(E2E_TRAIN_PROMPTS + E2E_HELD_OUT, SEED, "p");
    let (train, held) = pool.split_at(E2E_TRAIN_PROMPTS);
    let params = SyntheticOracleParams::image_default(E2E_NOISE);
    let (dataset, t) = sweep_and_train(&params, train, E2E_EPOCHS, SweepOptions::default().workers);

    let grid = ScaleGrid::image_default();
    let cfg = UtilityConfig::uniform(4, gsadvisor_core::selector::DEFAULT_ALPHA, gsadvisor_core::selector::IMAGE_DEFAULT_ANCHOR).unwrap();
    let choices = choose(&t, held, &cfg);
    let exact = SyntheticOracleParams {
        noise_std: 0.0,
        ..params.clone()
    };
    let truth = SyntheticTruth::new(exact.clone(), dataset.metric_schema.names.clone());
    let summary = evaluate(held, &choices, &truth, &grid, &cfg.weights, cfg.anchor).unwrap();
    let featurizer = model_featurizer(&t.model, ModifierLexicon::bundled()).unwrap();
    let inputs = prompt_inputs(held, &featurizer, &t.provider).unwrap();
    let r2 = gsadvisor_core::evaluate::curve_r2(&t.model, held, &inputs, &truth, &grid).unwrap();
    let elapsed = start.elapsed();

    let within = held
        .iter()
        .filter(|p| {
            let target = grid.position(grid.nearest(exact.optimum(&p.text))).unwrap();
            grid.position(choices[&p.id]).unwrap().abs_diff(target) <= 1
        })
        .count() as f64
        / held.len() as f64;
    let adaptive = summary.policy(ADAPTIVE).unwrap().mean_regret;
    let best = summary.policy(BEST_FIXED).unwrap().mean_regret;
    let win = summary.win_rate_vs_fixed_anchor;
    let min_r2 = r2.iter().copied().fold(f64::INFINITY, f64::min);
    let loss_ratio = t.final_loss / t.initial_loss;
    let pass = min_r2 > E2E_MIN_R2
        && within >= E2E_MIN_WITHIN_ONE_STEP
        && adaptive < best
        && win >= E2E_MIN_WIN_RATE
        && loss_ratio < E2E_MAX_LOSS_RATIO
        && elapsed < E2E_TIME;
    outcome(
        "Synthetic end-to-end",
        pass,
        format!(
            "{E2E_TRAIN_PROMPTS} train / {E2E_HELD_OUT} held-out, N_g={E2E_SAMPLES}, sigma={E2E_NOISE}, {E2E_EPOCHS} epochs, {} params; \
             R^2 {:?} (> {E2E_MIN_R2}); within one step {:.1}% (>= {:.0}%); regret adaptive {adaptive:.4} vs best fixed {best:.4} at scale {}; \
             wins vs fixed anchor {:.1}% (>= {:.0}%); loss ratio {loss_ratio:.4} (< {E2E_MAX_LOSS_RATIO}); {:.1}s (< {}s)",
            t.model.param_count(),
            r2.iter().map(|v| (v * 1e4).round() / 1e4).collect::<Vec<_>>(),
            100.0 * within,
            100.0 * E2E_MIN_WITHIN_ONE_STEP,
            summary.best_fixed_scale,
            100.0 * win,
            100.0 * E2E_MIN_WIN_RATE,
            elapsed.as_secs_f64(),
            E2E_TIME.as_secs()
        ),
    )
}

fn ablation() -> Outcome {
    let pool = synthetic_pool(ABLATION_TRAIN_PROMPTS + ABLATION_HELD_OUT, SEED + 4, "a");
    let (train, held) = pool.split_at(ABLATION_TRAIN_PROMPTS);
    let params = SyntheticOracleParams {
        peak_offsets: ABLATION_OFFSETS.to_vec(),
        ..SyntheticOracleParams::image_default(E2E_NOISE)
    };
    let (dataset, t) = sweep_and_train(&params, train, E2E_EPOCHS, SweepOptions::default().workers);
    let names = dataset.metric_schema.names.clone();
    let grid = ScaleGrid::image_default();
    let full = UtilityConfig::uniform(4, gsadvisor_core::selector::DEFAULT_ALPHA, gsadvisor_core::selector::IMAGE_DEFAULT_ANCHOR).unwrap();
    let subset: Vec<String> = ABLATION_SUBSET.iter().map(|s| s.to_string()).collect();
    let restricted = UtilityConfig::new(subset_weights(&full.weights, &names, &subset).unwrap(), full.alpha, full.anchor).unwrap();
    let truth = SyntheticTruth::new(
        SyntheticOracleParams {
            noise_std: 0.0,
            ..params
        },
        names,
    );
    let full_regret = mean_regret(held, &choose(&t, held, &full), &truth, &grid, &full.weights).unwrap();
    let subset_regret = mean_regret(held, &choose(&t, held, &restricted), &truth, &grid, &full.weights).unwrap();
    outcome(
        "Ablation direction",
        subset_regret >= full_regret,
        format!(
            "peak offsets {ABLATION_OFFSETS:?}; mean regret with {{{}}} only {subset_regret:.4} >= all four metrics {full_regret:.4}",
            ABLATION_SUBSET.join(", ")
        ),
    )
}

fn pipeline_files(dir: &Path, workers: usize) -> [Vec<u8>; 3] {
    let pool = synthetic_pool(DETERMINISM_PROMPTS, SEED + 5, "d");
    let params = SyntheticOracleParams::image_default(E2E_NOISE);
    let schema = SyntheticOracleParams::image_schema();
    let plan = SweepPlan {
        prompts: pool.clone(),
        grid: ScaleGrid::image_default(),
        samples_per_pair: E2E_SAMPLES,
        seed_base: SEED,
        metric_schema: schema.clone(),
        provider: Provider::Synthetic(params),
    };
    let out = run_sweep(
        &plan,
        &SweepOptions {
            workers,
            ..SweepOptions::default()
        },
    )
    .unwrap();
    let data_path = dir.join("dataset.jsonl");
    write_dataset(&out.records, &schema, E2E_SAMPLES, &data_path).unwrap();
    let dataset = gsadvisor_core::sweep::read_dataset(&data_path).unwrap();
    let provider = EmbeddingProvider::hashed(gsadvisor_core::embedding::DEFAULT_HASHED_DIM).unwrap();
    let config = TrainConfig {
        epochs: DETERMINISM_EPOCHS,
        seed: SEED,
        ..TrainConfig::default()
    };
    let (model, _) = fit_predictor(&dataset, &pool, &provider, &config, Some(&schema), |_, _| {}).unwrap();
    let model_path = dir.join("model.json");
    save_model(&model, &model_path).unwrap();
    let model = gsadvisor_core::predictor::load_model(&model_path).unwrap();
    let cfg = UtilityConfig::uniform(4, gsadvisor_core::selector::DEFAULT_ALPHA, gsadvisor_core::selector::IMAGE_DEFAULT_ANCHOR).unwrap();
    let lines = select_prompts(&model, &pool, &provider, ModifierLexicon::bundled(), &ScaleGrid::image_default(), &cfg).unwrap();
    let sel_path = dir.join("selection.jsonl");
    write_selection_report(&lines, std::fs::File::create(&sel_path).unwrap()).unwrap();
    [data_path, model_path, sel_path].map(|p| std::fs::read(p).unwrap())
}

fn determinism() -> Outcome {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let first = pipeline_files(a.path(), 1);
    let second = pipeline_files(b.path(), 4);
    let same: Vec<bool> = first.iter().zip(&second).map(|(x, y)| x == y).collect();
    outcome(
        "Determinism",
        same.iter().all(|s| *s),
        format!(
            "two sweep+train+select runs (1 and 4 sweep workers), byte-identical dataset/model/selection: {same:?} ({} / {} / {} bytes)",
            first[0].len(),
            first[1].len(),
            first[2].len()
        ),
    )
}

fn main() {
    let checks: [fn() -> Outcome; 8] = [
        cfg_endpoints,
        tilting,
        gradients,
        parameter_budget,
        selector_limits,
        end_to_end,
        ablation,
        determinism,
    ];
    let mut failed = Vec::new();
    for check in checks {
        let o = check();
        println!("{} {}: {}", if o.pass { "PASS" } else { "FAIL" }, o.name, o.detail);
        if !o.pass {
            failed.push(o.name);
        }
    }
    if failed.is_empty() {
        println!("acceptance: all criteria pass");
    } else {
        println!("acceptance: failing criteria: {}", failed.join(", "));
        std::process::exit(1);
    }
}
