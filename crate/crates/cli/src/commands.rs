use std::path::{Path, PathBuf};

use fairsvi::data::{
    load_dataset, parse_table, skewed_priors, synth_gmm, synth_nb, synth_sp, Dataset, DatasetSchema, GmmSynthConfig,
    NbSynthConfig, RawTable, SpSynthConfig, Splits, SynthOutput,
};
use fairsvi::evaluation::{
    assemble_report, config_hash, write_group_targets_csv, write_reports_csv, EvalReport, ReportMeta,
};
use fairsvi::fairness::{audit_metrics, encode_intersections, AuditReport};
use fairsvi::models::{Checkpoint, Model};
use fairsvi::training::{
    fair_grid_search, random_restarts, train, write_json, write_scatter_csv, write_trace_csv, GridSpec, SelectionReport,
    TrainConfig, Trial,
};
use fairsvi::{Error, Result};
use serde::Serialize;

use crate::args::{AuditArgs, EvaluateArgs, GridArgs, KindArg, Overrides, SynthArgs, TrainArgs};
use crate::config::RunConfig;

pub const OUTPUT_ENV: &str = "FAIRSVI_OUTPUT_DIR";
const DEFAULT_OUTPUT: &str = "fairsvi-out";

/// Flag, then config file, then environment, then the built-in default.
fn output_dir(flag: Option<&Path>, config: Option<&Path>) -> Result<PathBuf> {
    let dir = flag
        .or(config)
        .map(Path::to_path_buf)
        .or_else(|| std::env::var_os(OUTPUT_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUTPUT));
    std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    Ok(dir)
}

/// Prints to stdout, ignoring a closed pipe.
fn emit(text: &str) {
    use std::io::Write;
    let _ = writeln!(std::io::stdout().lock(), "{text}");
}

fn apply_overrides(cfg: &mut RunConfig, o: &Overrides) {
    if let Some(k) = o.model {
        cfg.model.kind = k.into();
    }
    if let Some(k) = o.k {
        cfg.model.k = k;
    }
    if let Some(p) = &o.data {
        cfg.data.path = Some(p.clone());
    }
    if let Some(p) = &o.schema {
        cfg.data.schema = Some(p.clone());
    }
    if let Some(v) = o.epochs {
        cfg.train.epochs = v;
    }
    if let Some(v) = o.batch_size {
        cfg.train.batch_size = v;
    }
    if let Some(v) = o.learning_rate {
        cfg.train.learning_rate = v;
    }
    if let Some(v) = o.lambda {
        cfg.fairness.lambda = v;
    }
    if let Some(v) = o.epsilon0 {
        cfg.fairness.epsilon0 = v;
    }
    if let Some(v) = o.seed {
        cfg.train.seed = v;
    }
    if o.no_warm_start {
        cfg.train.warm_start = false;
    }
}

fn load_config(path: &Path, o: &Overrides) -> Result<RunConfig> {
    let mut cfg = RunConfig::load(path)?;
    apply_overrides(&mut cfg, o);
    cfg.validate()?;
    Ok(cfg)
}

fn load_splits(cfg: &RunConfig) -> Result<Splits> {
    let schema = DatasetSchema::load(cfg.schema_path()?)?;
    let splits = load_dataset(cfg.data.path.as_deref(), &schema, &cfg.split)?;
    for w in &splits.report.warnings {
        log::warn!("{w}");
    }
    if splits.report.dropped_missing + splits.report.dropped_unparseable > 0 {
        log::warn!(
            "dropped {} rows with missing and {} with unparseable values",
            splits.report.dropped_missing,
            splits.report.dropped_unparseable
        );
    }
    Ok(splits)
}

fn model_id(kind: fairsvi::models::ModelKind, cfg: &TrainConfig) -> String {
    format!("{}-{kind}", if cfg.is_vanilla() { "vanilla" } else { "df" })
}

fn write_report(dir: &Path, stem: &str, report: &EvalReport) -> Result<()> {
    report.write_json(dir.join(format!("{stem}.json")))?;
    write_reports_csv(dir.join(format!("{stem}.csv")), std::slice::from_ref(report))?;
    if let Some(groups) = &report.group_targets {
        write_group_targets_csv(dir.join(format!("{stem}_jail_time.csv")), groups)?;
    }
    Ok(())
}

fn save_checkpoint(model: &Model, splits: &Splits, path: &Path) -> Result<()> {
    model.checkpoint().with_encoder(splits.encoder.clone()).save(path)
}

pub fn cmd_train(args: &TrainArgs, out_flag: Option<&Path>) -> Result<()> {
    let cfg = load_config(&args.config, &args.overrides)?;
    let out = output_dir(out_flag, cfg.output_dir.as_deref())?;
    let splits = load_splits(&cfg)?;
    let tcfg = cfg.train_config();
    let Trial { mut result, model } = if cfg.restarts.is_empty() {
        train(&cfg.model, &splits.train, &splits.dev, &tcfg)?
    } else {
        random_restarts(&cfg.model, &splits.train, &splits.dev, &tcfg, &cfg.restarts, cfg.workers)?
    };
    let ck = out.join("checkpoint.json");
    save_checkpoint(&model, &splits, &ck)?;
    result.checkpoint = Some(ck);
    write_trace_csv(out.join("trace.csv"), &result.trace)?;
    write_json(out.join("trial.json"), &result)?;
    if result.collapsed() {
        log::warn!("posterior collapse: largest dev class share {:.3}", result.max_class_share());
    }
    let meta = ReportMeta {
        model_id: model_id(model.kind(), &result.config),
        split: "dev".into(),
        seed: result.config.seed,
        config_hash: config_hash(&cfg)?,
    };
    let report = assemble_report(&model, &splits.dev, meta)?;
    write_report(&out, "report_dev", &report)?;
    println!(
        "{}: dev LL {:.4}, dev ε-DF {:.4}, outputs in {}",
        report.meta.model_id,
        result.dev_ll,
        result.dev_epsilon,
        out.display()
    );
    Ok(())
}

pub fn cmd_grid(args: &GridArgs, out_flag: Option<&Path>) -> Result<()> {
    let mut cfg = load_config(&args.config, &args.overrides)?;
    if let Some(s) = args.slack {
        cfg.fairness.slack = s;
    }
    if let Some(w) = args.workers {
        cfg.workers = w;
    }
    let grid = match &args.grid {
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .map_err(|e| Error::Config(format!("cannot read grid file {}: {e}", p.display())))?;
            toml::from_str::<GridSpec>(&text).map_err(|e| Error::Config(format!("{}: {e}", p.display())))?
        }
        None => cfg.grid.clone().unwrap_or_default(),
    };
    cfg.grid = Some(grid.clone());
    cfg.validate()?;
    let out = output_dir(out_flag, cfg.output_dir.as_deref())?;
    let splits = load_splits(&cfg)?;
    let outcome = fair_grid_search(&cfg.model, &splits.train, &splits.dev, &cfg.train_config(), &grid, cfg.workers)?;
    for (c, e) in &outcome.failures {
        log::warn!("trial seed={} lambda={} failed: {e}", c.seed, c.lambda);
    }

    write_scatter_csv(out.join("trials.csv"), &outcome)?;
    write_json(out.join("selection.json"), &SelectionReport::new(&outcome))?;
    save_checkpoint(&outcome.best_vanilla_model, &splits, &out.join("vanilla_checkpoint.json"))?;
    save_checkpoint(&outcome.fair_model, &splits, &out.join("fair_checkpoint.json"))?;
    let hash = config_hash(&cfg)?;
    let mut reports = Vec::new();
    for (model, result, family) in [
        (&outcome.best_vanilla_model, outcome.best_vanilla_result(), "vanilla"),
        (&outcome.fair_model, outcome.selected_fair(), "df"),
    ] {
        let meta = ReportMeta {
            model_id: format!("{family}-{}", model.kind()),
            split: "test".into(),
            seed: result.config.seed,
            config_hash: hash.clone(),
        };
        let report = assemble_report(model, &splits.test, meta)?;
        report.write_json(out.join(format!("report_test_{family}.json")))?;
        if let Some(groups) = &report.group_targets {
            write_group_targets_csv(out.join(format!("jail_time_{family}.csv")), groups)?;
        }
        reports.push(report);
    }
    write_reports_csv(out.join("report_test.csv"), &reports)?;
    let sel = &outcome.selection;
    println!(
        "best vanilla dev LL {:.4}; threshold {:.4}; selected λ = {} (dev ε-DF {:.4}){}; outputs in {}",
        sel.best_vanilla_ll,
        sel.threshold,
        outcome.selected_fair().config.lambda,
        outcome.selected_fair().dev_epsilon,
        if sel.fallback { " by fallback" } else { "" },
        out.display()
    );
    Ok(())
}

/// Encodes every row of a data file with a checkpoint's fitted encoder.
fn encode_with_checkpoint(ck: &Checkpoint, data: &Path) -> Result<Dataset> {
    let encoder = ck.encoder.as_ref().ok_or_else(|| Error::Data("checkpoint has no fitted encoder".into()))?;
    let raw = RawTable::read_csv(data)?;
    let (table, report) = parse_table(&raw, encoder.schema())?;
    if report.rows_kept == 0 {
        return Err(Error::Data(format!("{}: no usable rows", data.display())));
    }
    let rows: Vec<usize> = (0..table.len()).collect();
    encoder.transform(&table, &rows)
}

pub fn cmd_audit(args: &AuditArgs, out_flag: Option<&Path>) -> Result<()> {
    let report: AuditReport = if let Some(ck_path) = &args.checkpoint {
        let data = args.data.as_deref().ok_or_else(|| Error::Config("--checkpoint needs --data".into()))?;
        let ck = Checkpoint::load(ck_path)?;
        let model = Model::from_checkpoint(&ck)?;
        let ds = encode_with_checkpoint(&ck, data)?;
        let z = model.assign(&model.inputs(&ds)?)?;
        let k = args.classes.unwrap_or(model.k());
        if let Some(path) = &args.export_assignments {
            export_assignments(path, &z, &ds)?;
        }
        audit_metrics(&z, k, &ds.group_ids, &ds.groups, args.alpha)?
    } else if let Some(path) = &args.assignments {
        let (z, ids, index) = read_assignments(path, &args.protected)?;
        let k = args.classes.unwrap_or_else(|| z.iter().max().map_or(1, |m| m + 1));
        audit_metrics(&z, k, &ids, &index, args.alpha)?
    } else {
        return Err(Error::Config("audit needs --checkpoint with --data, or --assignments with --protected".into()));
    };
    let out = output_dir(out_flag, None)?;
    write_json(out.join("audit.json"), &report)?;
    emit(&serde_json::to_string_pretty(&report)?);
    Ok(())
}

fn export_assignments(path: &Path, z: &[usize], ds: &Dataset) -> Result<()> {
    let mut header = vec!["z".to_string()];
    header.extend(ds.groups.attributes().iter().cloned());
    let rows = z
        .iter()
        .enumerate()
        .map(|(r, zi)| std::iter::once(zi.to_string()).chain(ds.protected.iter().map(|col| col[r].clone())).collect())
        .collect();
    RawTable::new(header, rows)?.write_csv(path)
}

fn read_assignments(
    path: &Path,
    protected: &[String],
) -> Result<(Vec<usize>, Vec<usize>, fairsvi::fairness::GroupIndex)> {
    let raw = RawTable::read_csv(path)?;
    let col = |name: &str| {
        raw.column_index(name).ok_or_else(|| Error::Data(format!("{}: no column {name:?}", path.display())))
    };
    let zi = col("z")?;
    let z = raw
        .rows
        .iter()
        .enumerate()
        .map(|(r, row)| {
            row[zi].trim().parse::<usize>().map_err(|_| Error::Data(format!("row {r}: bad class {:?}", row[zi])))
        })
        .collect::<Result<Vec<_>>>()?;
    let columns = protected
        .iter()
        .map(|name| {
            let i = col(name)?;
            Ok(raw.rows.iter().map(|row| row[i].clone()).collect())
        })
        .collect::<Result<Vec<Vec<String>>>>()?;
    let names: Vec<&str> = protected.iter().map(String::as_str).collect();
    let (ids, index) = encode_intersections(&names, &columns)?;
    Ok((z, ids, index))
}

pub fn cmd_evaluate(args: &EvaluateArgs, out_flag: Option<&Path>) -> Result<()> {
    let ck = Checkpoint::load(&args.checkpoint)?;
    let model = Model::from_checkpoint(&ck)?;
    let ds = encode_with_checkpoint(&ck, &args.data)?;
    let stem = args.checkpoint.file_stem().map_or("model".into(), |s| s.to_string_lossy().into_owned());
    let meta = ReportMeta {
        model_id: args.model_id.clone().unwrap_or(stem),
        split: args.split_name.clone(),
        seed: 0,
        config_hash: config_hash(&ck.spec)?,
    };
    let report = assemble_report(&model, &ds, meta)?;
    let out = output_dir(out_flag, None)?;
    write_report(&out, &format!("report_{}", args.split_name), &report)?;
    emit(&serde_json::to_string_pretty(&report)?);
    Ok(())
}

#[derive(Serialize)]
struct TruthSidecar<'a> {
    kind: &'static str,
    generator: serde_json::Value,
    n: usize,
    generating_epsilon: f64,
    group_priors: &'a [Vec<f64>],
}

pub fn cmd_synth(args: &SynthArgs, out_flag: Option<&Path>) -> Result<()> {
    let out = output_dir(out_flag, None)?;
    let write = |o: &SynthOutput, kind: &'static str, generator: serde_json::Value| -> Result<()> {
        o.table.write_csv(out.join("data.csv"))?;
        let schema_path = out.join("schema.toml");
        std::fs::write(&schema_path, o.schema.to_toml()).map_err(|e| Error::io(&schema_path, e))?;
        o.truth_table().write_csv(out.join("truth.csv"))?;
        let sidecar = TruthSidecar {
            kind,
            generator,
            n: o.truth.z.len(),
            generating_epsilon: o.truth.generating_epsilon,
            group_priors: &o.truth.group_priors,
        };
        write_json(out.join("truth.json"), &sidecar)
    };
    match args.kind {
        KindArg::Nb => {
            let cfg = NbSynthConfig {
                attributes: args.attributes,
                categories: args.categories,
                ..NbSynthConfig::with_skew(args.n, args.k, args.skew, args.seed)
            };
            write(&synth_nb(&cfg)?, "nb", serde_json::to_value(&cfg)?)?;
        }
        KindArg::Gmm => {
            let cfg = GmmSynthConfig {
                group_priors: skewed_priors(args.k, 2, args.skew),
                ..GmmSynthConfig::new(args.n, args.k, args.dims, args.separation, args.seed)
            };
            write(&synth_gmm(&cfg)?, "gmm", serde_json::to_value(&cfg)?)?;
        }
        KindArg::Sp => {
            let cfg = SpSynthConfig::new(args.n, args.seed);
            write(&synth_sp(&cfg)?, "sp", serde_json::to_value(&cfg)?)?;
        }
    }
    println!("wrote data.csv, schema.toml, truth.csv, truth.json to {}", out.display());
    Ok(())
}
