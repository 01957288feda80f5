use std::fs;
use std::path::{Path, PathBuf};

use log::info;
use rankforge::checkpoint;
use rankforge::dataset::{generate_synthetic, Nonlinearity, RankedDataset, SyntheticConfig};
use rankforge::experiment::{
    annotation_sweep, config_comment, cross_validate, mean_std, seed_variance, sweep_csv_body,
};
use rankforge::metrics::MetricReport;
use rankforge::train::{train_method, Method, TrainConfig, TrainedModel};
use rankforge::uncertainty::{anchors_by_position, confidence_profile, profile_csv, McConfig};
use rankforge::Exec;
use serde_json::{json, Value};
use thiserror::Error;

use crate::{
    AnnotateSimArgs, Command, CvArgs, DataArgs, EvalArgs, GenerateArgs, ServeArgs, TrainArgs, TrainOpts,
    UncertaintyArgs, VarianceArgs,
};

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] rankforge::Error),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{0}")]
    Usage(String),
}

type Result<T> = std::result::Result<T, CliError>;

pub fn run(command: Command) -> Result<()> {
    match command {
        Command::Generate(a) => generate(a),
        Command::Train(a) => train(a),
        Command::Eval(a) => eval(a),
        Command::Cv(a) => cv(a),
        Command::Variance(a) => variance(a),
        Command::Uncertainty(a) => uncertainty(a),
        Command::AnnotateSim(a) => annotate_sim(a),
        Command::Serve(a) => serve(a),
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io { path: path.to_path_buf(), source }
}

/// Writes `<path>.partial` and renames it into place once complete, so an
/// interrupted run never leaves a file that looks finished.
fn write_output(path: &Path, write: impl FnOnce(&Path) -> Result<()>) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    let mut partial = path.as_os_str().to_owned();
    partial.push(".partial");
    let partial = PathBuf::from(partial);
    write(&partial)?;
    fs::rename(&partial, path).map_err(io_err(path))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    write_output(path, |p| fs::write(p, text).map_err(io_err(p)))
}

fn synthetic_config(data: &DataArgs, seed: u64) -> Result<SyntheticConfig> {
    let nonlinearity = match data.basis.as_str() {
        "linear" => Nonlinearity::Linear,
        "polynomial" => Nonlinearity::Polynomial,
        other => return Err(CliError::Usage(format!("unknown basis {other:?} (linear, polynomial)"))),
    };
    Ok(SyntheticConfig {
        n: data.n,
        d: data.d,
        informative_dim: SyntheticConfig::default().informative_dim.min(data.d),
        feature_noise_sigma: data.sigma,
        nonlinearity,
        seed,
    })
}

/// Loads `--dataset` or draws the synthetic set; also returns its
/// description for embedding in reports.
fn load_data(data: &DataArgs, seed: u64) -> Result<(RankedDataset, Value)> {
    match &data.dataset {
        Some(path) => {
            if !path.exists() {
                return Err(CliError::Usage(format!("dataset {} does not exist", path.display())));
            }
            Ok((RankedDataset::load(path)?, json!({ "path": path })))
        }
        None => {
            let cfg = synthetic_config(data, seed)?;
            Ok((generate_synthetic(&cfg)?, json!({ "synthetic": cfg })))
        }
    }
}

fn train_config(opts: &TrainOpts) -> TrainConfig {
    TrainConfig {
        seed: opts.seed,
        epochs: opts.epochs,
        m: opts.m,
        dropout_p: opts.dropout,
        lr_init: opts.lr,
        batch_size: opts.batch_size,
        exec: if opts.sequential { Exec::Sequential } else { Exec::default() },
        ..Default::default()
    }
}

fn parse_method(name: &str) -> Result<Method> {
    name.parse().map_err(|e: rankforge::Error| CliError::Usage(e.to_string()))
}

fn generate(a: GenerateArgs) -> Result<()> {
    let cfg = synthetic_config(&a.data, a.seed)?;
    let ds = generate_synthetic(&cfg)?;
    let meta = json!({ "command": "generate", "synthetic": cfg });
    write_output(&a.out, |p| Ok(ds.save_with_config(p, Some(&meta))?))?;
    println!("wrote {} items to {}", ds.len(), a.out.display());
    Ok(())
}

fn train(a: TrainArgs) -> Result<()> {
    let method = parse_method(&a.method)?;
    let cfg = train_config(&a.train);
    let (ds, _) = load_data(&a.data, cfg.seed)?;
    let (model, log) = train_method(method, &ds, &cfg)?;
    write_output(&a.out, |p| Ok(checkpoint::save(&model, Some(&cfg), p)?))?;
    println!(
        "{method}: best validation SPC {:.6} at epoch {}; checkpoint {}",
        log.best_val_spc,
        log.best_epoch,
        a.out.display()
    );
    Ok(())
}

fn eval(a: EvalArgs) -> Result<()> {
    let (model, header) = checkpoint::load(&a.checkpoint)?;
    let (ds, source) = load_data(&a.data, a.seed)?;
    let scores: Vec<f64> = model.predict_scores(&ds, Exec::default())?.into_iter().map(|(_, s)| s).collect();
    let report = MetricReport::evaluate(&ds.ranks(), &scores)?;
    let body = format!("{}\n{}\n", MetricReport::CSV_HEADER, report.csv_row(header.method.name(), "eval"));
    print!("{body}");
    if let Some(out) = &a.out {
        let meta = json!({ "command": "eval", "checkpoint": a.checkpoint, "dataset": source, "model": header });
        write_text(out, &format!("{}{body}", config_comment(&meta)))?;
    }
    Ok(())
}

fn cv(a: CvArgs) -> Result<()> {
    let method = parse_method(&a.method)?;
    let cfg = train_config(&a.train);
    let (ds, source) = load_data(&a.data, cfg.seed)?;
    info!("{method}: {}-fold cross-validation on {} items", a.k, ds.len());
    let result = cross_validate(&ds, method, a.k, &cfg)?;
    let meta = json!({ "command": "cv", "method": method, "k": a.k, "dataset": source, "train": cfg });
    write_text(&a.out, &format!("{}{}", config_comment(&meta), result.csv_body()))?;
    let (mean, std) = result.summary();
    println!("{method}: SPC {:.4} ± {:.4} over {} folds", mean.spc, std.spc, a.k);
    Ok(())
}

fn variance(a: VarianceArgs) -> Result<()> {
    let method = parse_method(&a.method)?;
    let cfg = train_config(&a.train);
    let (ds, source) = load_data(&a.data, cfg.seed)?;
    let seeds: Vec<u64> = (cfg.seed..cfg.seed + a.seeds).collect();
    let result = seed_variance(&ds, method, a.k, &seeds, &cfg)?;
    let meta = json!({
        "command": "variance", "method": method, "k": a.k, "seeds": seeds, "dataset": source, "train": cfg
    });
    write_text(&a.out, &format!("{}{}", config_comment(&meta), result.csv_body()))?;
    let spcs = result.spcs();
    let (mean, std) = mean_std(&spcs);
    println!("{method}: SPC {mean:.4} ± {std:.4} over {} models", spcs.len());
    Ok(())
}

fn parse_positions(raw: &[String]) -> Result<Vec<usize>> {
    raw.iter()
        .map(|s| match s.trim() {
            "last" => Ok(0),
            t => t
                .parse::<usize>()
                .ok()
                .filter(|&p| p >= 1)
                .ok_or_else(|| CliError::Usage(format!("bad anchor position {t:?} (1-based or `last`)"))),
        })
        .collect()
}

fn uncertainty(a: UncertaintyArgs) -> Result<()> {
    let positions = parse_positions(&a.anchors)?;
    let cfg = train_config(&a.train);
    let (ds, source) = load_data(&a.data, cfg.seed)?;
    let (model, model_meta) = match &a.checkpoint {
        Some(path) => {
            let (model, header) = checkpoint::load(path)?;
            (model, json!({ "checkpoint": path, "header": header }))
        }
        None => {
            let (model, _) = train_method(Method::OrbNet, &ds, &cfg)?;
            (model, json!({ "trained": cfg }))
        }
    };
    let TrainedModel::OrbNet(params) = model else {
        return Err(CliError::Usage("uncertainty profiles need an orbnet model".into()));
    };
    let mc = McConfig { passes: a.passes, dropout_p: a.train.dropout, seed: a.train.seed, exec: cfg.exec };
    fs::create_dir_all(&a.out).map_err(io_err(&a.out))?;
    for (&pos, anchor) in positions.iter().zip(anchors_by_position(&ds, &positions)) {
        let rows = confidence_profile(&params, &anchor, &ds, &mc)?;
        let label = if pos == 0 { "last".to_string() } else { pos.to_string() };
        let meta = json!({
            "command": "uncertainty", "anchor_position": label, "anchor_id": anchor,
            "dataset": source, "model": model_meta, "mc": mc
        });
        let path = a.out.join(format!("profile_{label}.csv"));
        write_text(&path, &format!("{}{}", config_comment(&meta), profile_csv(&rows)))?;
        let mean = rows.iter().map(|r| r.confidence).sum::<f64>() / rows.len().max(1) as f64;
        println!("anchor {label} ({anchor}): mean confidence {mean:.4} -> {}", path.display());
    }
    Ok(())
}

fn parse_beta(s: &str) -> Result<f64> {
    match s.trim() {
        "inf" | "infinity" => Ok(f64::INFINITY),
        t => t
            .parse::<f64>()
            .ok()
            .filter(|b| *b >= 0.0)
            .ok_or_else(|| CliError::Usage(format!("bad beta {t:?} (non-negative number or `inf`)"))),
    }
}

fn annotate_sim(a: AnnotateSimArgs) -> Result<()> {
    let betas = a.beta.iter().map(|b| parse_beta(b)).collect::<Result<Vec<_>>>()?;
    let (ds, source) = load_data(&a.data, a.seed)?;
    let rows = annotation_sweep(&ds, &betas, &a.n_sub, a.seed)?;
    let beta_labels: Vec<String> = a.beta.iter().map(|b| b.trim().to_string()).collect();
    let meta = json!({
        "command": "annotate-sim", "seed": a.seed, "beta": beta_labels, "n_sub": a.n_sub, "dataset": source
    });
    write_text(&a.out, &format!("{}{}", config_comment(&meta), sweep_csv_body(&rows)))?;
    println!("wrote {} rows to {}", rows.len(), a.out.display());
    Ok(())
}

fn serve(a: ServeArgs) -> Result<()> {
    let config = rankforge_service::ServiceConfig {
        listen: a.listen,
        data_dir: a.data_dir.clone(),
        image_source: a.image_source,
    };
    let runtime = tokio::runtime::Runtime::new().map_err(io_err(Path::new("tokio runtime")))?;
    runtime.block_on(rankforge_service::serve(&config)).map_err(io_err(&a.data_dir))
}
