use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{Context, Result};
use rayon::prelude::*;

use hoc::estimator::estimate_consensus;
use hoc::format::{
    self, format_value, manifest_path, read_dataset, read_f32_table, read_matrix, render_dense, render_key_values,
    render_vector, write_dataset_with, write_f32_table, write_solver_result, write_stats, write_text, KeyValues,
};
use hoc::local::{build_local_datasets, default_zeta, estimate_local};
use hoc::solver::solve;
use hoc::synth::{apply_noise, apply_soft_clusterability, average_instance_rows, generate_features, NoisyData};
use hoc::train::{accuracy, fit, LinearModel, TrainOptions};
use hoc::{l11_error, EstimatorConfig, LabeledDataset, TransitionMatrix};

use crate::settings::{
    self, Correction, EstimateOverrides, EstimateSettings, GenerateSettings, GridAxis, SweepSettings, TrainSettings,
    ESTIMATE_KEYS, GENERATE_KEYS, SWEEP_KEYS, TRAIN_KEYS,
};
use crate::{CommonArgs, EstimateArgs, EvalArgs, SweepArgs, TrainArgs, UsageError};

const TRUTH_FILE: &str = "truth_T.txt";
const INSTANCE_ROWS_FILE: &str = "truth_instance_rows.bin";

fn out_dir(common: &CommonArgs, default: &str) -> PathBuf {
    common.out_dir.clone().unwrap_or_else(|| PathBuf::from(default))
}

fn synthesize(s: &GenerateSettings) -> Result<NoisyData> {
    let clean = generate_features(&s.cluster, s.seed)?;
    let clean = match s.soft_e {
        Some(e) => apply_soft_clusterability(&clean, e, s.seed)?,
        None => clean,
    };
    Ok(apply_noise(&clean, &s.noise)?)
}

pub fn generate(args: &CommonArgs) -> Result<()> {
    let kv = settings::load(args.config.as_deref(), &[GENERATE_KEYS])?;
    let s = GenerateSettings::from_kv(&kv, args.seed)?;
    let data = synthesize(&s)?;
    let dir = out_dir(args, "data");
    let mut extra = vec![("truth", TRUTH_FILE.to_string())];
    if data.instance_rows.is_some() {
        extra.push(("instance_rows", INSTANCE_ROWS_FILE.to_string()));
    }
    let manifest = write_dataset_with(&dir, &data.dataset, &extra)?;
    format::write_matrix(&dir.join(TRUTH_FILE), &data.truth)?;
    if let Some(rows) = &data.instance_rows {
        let values: Vec<f32> = rows.iter().map(|&v| v as f32).collect();
        write_f32_table(&dir.join(INSTANCE_ROWS_FILE), data.dataset.n(), data.dataset.k(), &values)?;
    }
    println!("manifest={}", manifest.display());
    println!("n={}", data.dataset.n());
    println!("k={}", data.dataset.k());
    println!("noise_fraction={}", data.dataset.noise_fraction()?);
    Ok(())
}

/// Ground truth bound in a dataset manifest, if any.
struct Sidecar {
    truth: Option<TransitionMatrix>,
    instance_rows: Option<Vec<f64>>,
}

fn read_sidecar(data: &Path) -> Result<Sidecar> {
    let manifest = manifest_path(data);
    let kv = KeyValues::load(&manifest)?;
    let base = manifest.parent().unwrap_or(Path::new("."));
    let truth = match kv.get("truth") {
        Some(file) => Some(read_matrix(&base.join(file))?),
        None => None,
    };
    let instance_rows = match kv.get("instance_rows") {
        Some(file) => {
            let (_, _, values) = read_f32_table(&base.join(file))?;
            Some(values.into_iter().map(f64::from).collect())
        }
        None => None,
    };
    Ok(Sidecar { truth, instance_rows })
}

fn load_dataset(path: &Path) -> Result<LabeledDataset> {
    read_dataset(path).with_context(|| format!("loading dataset {}", path.display()))
}

pub fn estimate(args: &EstimateArgs, local: bool) -> Result<()> {
    let kv = settings::load(args.common.config.as_deref(), &[ESTIMATE_KEYS])?;
    let overrides = EstimateOverrides {
        seed: args.common.seed,
        rounds: args.rounds,
        sample_size: args.sample_size,
        zeta: args.zeta,
    };
    let mut s = EstimateSettings::from_kv(&kv, &overrides)?;
    let ds = load_dataset(&args.data)?;
    s.fit_to(ds.n());
    let sidecar = read_sidecar(&args.data)?;
    let dir = out_dir(&args.common, "estimate");

    let consensus = estimate_consensus(&ds, &s.config)?;
    let result = solve(&consensus.stats, &s.config)?;
    write_stats(&dir.join("consensus.txt"), &consensus.stats)?;
    let meta = [
        ("seed", s.config.seed.to_string()),
        ("rounds", s.config.rounds.to_string()),
        ("sample_size", s.config.sample_size.to_string()),
        ("tuple_mode", s.config.tuple_mode.to_string()),
        ("tuples", consensus.tuple_counts.iter().sum::<usize>().to_string()),
    ];
    write_solver_result(&dir, &result, &meta)?;

    let diag = result.t_hat.diagonal();
    let mut report = vec![
        ("diagonal_mean", format_value(diag.iter().sum::<f64>() / diag.len() as f64)),
        ("final_objective", format_value(result.final_objective)),
        ("converged", result.converged.to_string()),
    ];
    if let Some(truth) = &sidecar.truth {
        report.push(("l11_error", format_value(l11_error(&result.t_hat, truth)?)));
    }
    if local {
        report.extend(estimate_locals(&ds, &s, &result, &sidecar, &dir)?);
    }
    let text = render_key_values(&report);
    write_text(&dir.join("report.txt"), &text)?;
    print!("{text}");
    Ok(())
}

fn estimate_locals(
    ds: &LabeledDataset,
    s: &EstimateSettings,
    global: &hoc::SolverResult,
    sidecar: &Sidecar,
    dir: &Path,
) -> Result<Vec<(&'static str, String)>> {
    let n = ds.n();
    let local_size = s.local_size.unwrap_or(n.min(1000));
    if local_size < 3 || local_size > n {
        return Err(UsageError(format!("local_size = {local_size} must lie in [3, {n}]")).into());
    }
    let local_rounds = s.local_rounds.unwrap_or(n.div_ceil(local_size));
    let zeta = s.zeta.unwrap_or(default_zeta(ds.k()));
    let config = EstimatorConfig {
        sparse_reg_weight: s.local_sparse_weight,
        ..s.config.clone()
    };
    let plan = build_local_datasets(ds, local_size, local_rounds, hoc::seed::derive_seed(s.config.seed, "local-plan", 0))?;
    let estimates = estimate_local(ds, &plan, global, &config, zeta)?;

    let local_dir = dir.join("local");
    if local_dir.exists() {
        fs::remove_dir_all(&local_dir).with_context(|| format!("clearing {}", local_dir.display()))?;
    }
    let mut index = String::from("center,file,size,l11_error\n");
    let mut errors = Vec::new();
    for (est, plan_local) in estimates.iter().zip(plan.locals.iter().filter(|l| l.member_indices.len() >= 3)) {
        let file = format!("center_{}.txt", est.center);
        format::write_matrix(&local_dir.join(&file), &est.t)?;
        let truth = match (&sidecar.instance_rows, ds.clean_labels()) {
            (Some(rows), Some(clean)) => {
                let k = ds.k();
                let members = &plan_local.member_indices;
                let sub_rows: Vec<f64> = members.iter().flat_map(|&m| rows[m * k..(m + 1) * k].to_vec()).collect();
                let sub_clean: Vec<usize> = members.iter().map(|&m| clean[m]).collect();
                Some(average_instance_rows(&sub_clean, &sub_rows, k)?)
            }
            _ => sidecar.truth.clone(),
        };
        let err = match &truth {
            Some(t) => {
                let e = l11_error(&est.t, t)?;
                errors.push(e);
                e.to_string()
            }
            None => String::new(),
        };
        writeln!(index, "{},{file},{},{err}", est.center, plan_local.member_indices.len()).expect("string write");
    }
    write_text(&local_dir.join("index.csv"), &index)?;
    let mut report = vec![
        ("local_estimates", estimates.len().to_string()),
        ("local_covered", plan.covered.len().to_string()),
    ];
    if !errors.is_empty() {
        report.push(("local_l11_mean", format_value(errors.iter().sum::<f64>() / errors.len() as f64)));
    }
    Ok(report)
}

fn write_model(dir: &Path, model: &LinearModel) -> Result<()> {
    write_text(&dir.join("model_weights.txt"), &render_dense(model.d(), model.k(), &model.weights))?;
    write_text(&dir.join("model_bias.txt"), &render_vector(&model.bias))?;
    Ok(())
}

fn read_model(dir: &Path) -> Result<LinearModel> {
    let path = dir.join("model_weights.txt");
    let (d, k, weights) = format::parse_dense(&path, &format::read_text(&path)?)?;
    let path = dir.join("model_bias.txt");
    let bias = format::parse_vector(&path, &format::read_text(&path)?)?;
    Ok(LinearModel::from_parts(d, k, weights, bias)?)
}

pub fn train(args: &TrainArgs) -> Result<()> {
    let kv = settings::load(args.common.config.as_deref(), &[TRAIN_KEYS])?;
    let s = TrainSettings::from_kv(&kv, args.common.seed, args.correction.as_deref())?;
    let ds = load_dataset(&args.data)?;
    let correction = match &s.correction {
        Correction::None => None,
        Correction::Truth => Some(
            read_sidecar(&args.data)?
                .truth
                .ok_or_else(|| UsageError("correction=truth but the dataset has no truth sidecar".into()))?,
        ),
        Correction::File(path) => Some(read_matrix(path)?),
    };
    let test_size = (ds.n() as f64 * s.test_fraction).round() as usize;
    let (train_set, test_set) = ds.split_tail(test_size)?;
    let eval = if test_size > 0 {
        test_set.require_clean_labels()?;
        Some(&test_set)
    } else {
        None
    };
    let opts = TrainOptions {
        epochs: s.epochs,
        lr: s.lr,
        seed: s.seed,
        batch_size: s.batch_size,
    };
    let outcome = fit(&train_set, correction.as_ref(), &opts, eval)?;
    let dir = out_dir(&args.common, "model");
    write_model(&dir, &outcome.model)?;
    let mut csv = String::from("epoch,train_loss,clean_test_accuracy\n");
    for m in &outcome.history {
        let acc = m.clean_test_accuracy.map(|a| a.to_string()).unwrap_or_default();
        writeln!(csv, "{},{},{acc}", m.epoch, m.train_loss).expect("string write");
    }
    write_text(&dir.join("metrics.csv"), &csv)?;
    if let Some(last) = outcome.history.last() {
        println!("train_loss={}", last.train_loss);
        if let Some(a) = last.clean_test_accuracy {
            println!("clean_test_accuracy={a}");
        }
    }
    Ok(())
}

pub fn eval(args: &EvalArgs) -> Result<()> {
    let mut lines = Vec::new();
    match (&args.model, &args.data) {
        (Some(model), Some(data)) => {
            let model = read_model(model)?;
            let ds = load_dataset(data)?;
            lines.push(("clean_accuracy", accuracy(&model, &ds)?.to_string()));
        }
        (None, Some(_)) => return Err(UsageError("--data needs --model".into()).into()),
        _ => {}
    }
    if let (Some(estimate), Some(truth)) = (&args.estimate, &args.truth) {
        let err = l11_error(&read_matrix(estimate)?, &read_matrix(truth)?)?;
        lines.push(("l11_error", format_value(err)));
    }
    if lines.is_empty() {
        return Err(UsageError("eval needs --model with --data, or --estimate with --truth".into()).into());
    }
    let text = render_key_values(&lines);
    if let Some(dir) = &args.common.out_dir {
        write_text(&dir.join("eval.txt"), &text)?;
    }
    print!("{text}");
    Ok(())
}

struct SweepRow {
    value: f64,
    seed: u64,
    l11: f64,
    seconds: f64,
}

pub fn sweep(args: &SweepArgs) -> Result<()> {
    let config = args
        .common
        .config
        .as_deref()
        .ok_or_else(|| UsageError("sweep needs --config".into()))?;
    let kv = settings::load(Some(config), &[SWEEP_KEYS, GENERATE_KEYS, ESTIMATE_KEYS])?;
    let base_gen = GenerateSettings::from_kv(&kv, None)?;
    let base_est = EstimateSettings::from_kv(&kv, &EstimateOverrides::default())?;
    let base_seed = args.common.seed.unwrap_or(base_gen.seed);
    let grid = SweepSettings::from_kv(&kv, base_seed)?;

    let jobs: Vec<(f64, u64)> = grid
        .values
        .iter()
        .flat_map(|&v| grid.seeds.iter().map(move |&s| (v, s)))
        .collect();
    let rows = jobs
        .par_iter()
        .map(|&(value, seed)| -> Result<SweepRow> {
            let start = Instant::now();
            let mut gen = base_gen.clone();
            match grid.axis {
                GridAxis::N => gen.cluster.points = value as usize,
                GridAxis::Eta => gen.noise.eta = value,
            }
            gen.seed = seed;
            gen.noise.seed = seed;
            let data = synthesize(&gen)?;
            let mut est = base_est.clone();
            est.config.seed = seed;
            est.fit_to(data.dataset.n());
            let result = hoc::estimate_hoc(&data.dataset, &est.config)?;
            Ok(SweepRow {
                value,
                seed,
                l11: l11_error(&result.t_hat, &data.truth)?,
                seconds: start.elapsed().as_secs_f64(),
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let axis = match grid.axis {
        GridAxis::N => "n",
        GridAxis::Eta => "eta",
    };
    let mut csv = String::from("grid,value,seed,l11_error");
    csv.push_str(if args.timing { ",runtime_seconds\n" } else { "\n" });
    for r in &rows {
        write!(csv, "{axis},{},{},{}", r.value, r.seed, r.l11).expect("string write");
        if args.timing {
            write!(csv, ",{}", r.seconds).expect("string write");
        }
        csv.push('\n');
    }
    let dir = out_dir(&args.common, "sweep");
    write_text(&dir.join("sweep.csv"), &csv)?;
    for &v in &grid.values {
        let mut errs: Vec<f64> = rows.iter().filter(|r| r.value == v).map(|r| r.l11).collect();
        errs.sort_by(|a, b| a.total_cmp(b));
        let m = errs.len();
        let median = if m % 2 == 1 { errs[m / 2] } else { 0.5 * (errs[m / 2 - 1] + errs[m / 2]) };
        println!("{axis}={v} median_l11={median}");
    }
    Ok(())
}
