use std::io::Write;
use std::path::{Path, PathBuf};

use rddl_transfer::a3c::{self, TrainConfig, TrainError};
use rddl_transfer::domains::{generate_instance, GeneratorConfig};
use rddl_transfer::eval::{self, ActionMode, BaselinePolicy, EvalError, ModelPolicy};
use rddl_transfer::io::{load_checkpoint, save_checkpoint, write_instance, Checkpoint, TrainingMeta};
use rddl_transfer::model::ModelError;
use rddl_transfer::{DomainId, ProblemInstance};

use crate::manifest::{load_instance, parse_domain, topology, Experiment};
use crate::tables::{self, CurveRow, EvalRow, LogWriter, MergedRow};
use crate::{CliError, EvalArgs, GenArgs, PlotdataArgs, TrainArgs, TransferArgs};

fn write_output(path: Option<&Path>, bytes: &[u8]) -> Result<(), CliError> {
    match path {
        Some(p) => std::fs::write(p, bytes).map_err(|e| CliError::io(format!("{}: {e}", p.display()))),
        None => std::io::stdout().write_all(bytes).map_err(CliError::io),
    }
}

fn csv_bytes<T: serde::Serialize>(header: &[&str], rows: &[T]) -> Result<Vec<u8>, CliError> {
    let mut buf = Vec::new();
    tables::write_rows(&mut buf, header, rows).map_err(CliError::runtime)?;
    Ok(buf)
}

pub fn read_checkpoint(path: &Path) -> Result<Checkpoint, CliError> {
    let bytes = std::fs::read(path).map_err(|e| CliError::io(format!("cannot read checkpoint {}: {e}", path.display())))?;
    load_checkpoint(&bytes).map_err(|e| CliError::io(format!("{}: {e}", path.display())))
}

fn model_error(e: ModelError) -> CliError {
    CliError::runtime(e)
}

fn eval_error(e: EvalError) -> CliError {
    CliError::runtime(e)
}

fn train_error(e: TrainError) -> CliError {
    match e {
        TrainError::InvalidConfig(_) => CliError::usage(e),
        TrainError::Sink(_) => CliError::io(e),
        _ => CliError::runtime(e),
    }
}

pub fn gen(a: GenArgs) -> Result<(), CliError> {
    let domain = parse_domain(&a.domain).map_err(CliError::usage)?;
    let topo = topology(domain, a.size, a.topology.as_deref(), a.edge_prob, a.rows, a.cols).map_err(CliError::usage)?;
    let inst = generate_instance(&GeneratorConfig {
        domain,
        size: a.size,
        topology: topo,
        seed: a.seed,
    })
    .map_err(CliError::usage)?;
    write_output(a.out.as_deref(), write_instance(&inst).as_bytes())
}

pub fn checkpoint_file_name(step: u64) -> String {
    format!("ckpt_{step:010}.bin")
}

pub fn train(a: TrainArgs, threads: Option<usize>) -> Result<(), CliError> {
    let mut exp = Experiment::load(&a.manifest)?;
    if let Some(cap) = threads {
        exp.config.threads = exp.config.threads.min(cap);
    }
    let resume = a.resume.as_deref().map(read_checkpoint).transpose()?;
    let ckpt_dir = exp.output_dir.join("checkpoints");
    std::fs::create_dir_all(&ckpt_dir).map_err(|e| CliError::io(format!("{}: {e}", ckpt_dir.display())))?;
    let names: Vec<String> = exp.config.instances.iter().map(|i| i.name.clone()).collect();
    let mut log = LogWriter::create(&exp.output_dir.join("train_log.csv"), &names)?;

    let mut last: Option<Checkpoint> = None;
    let summary = a3c::train(
        exp.config.clone(),
        resume.as_ref(),
        |c| {
            let bytes = save_checkpoint(c).map_err(|e| e.to_string())?;
            let path = ckpt_dir.join(checkpoint_file_name(c.meta.gradient_steps));
            std::fs::write(&path, bytes).map_err(|e| format!("{}: {e}", path.display()))?;
            last = Some(c.clone());
            Ok(())
        },
        |row| log.write(row),
    )
    .map_err(train_error)?;
    eprintln!(
        "trained {} steps in {:.1}s, {} checkpoints in {}",
        summary.steps,
        summary.elapsed_seconds,
        summary.checkpoints,
        ckpt_dir.display()
    );

    if let (Some(ckpt), false) = (last, exp.test.is_empty()) {
        let mut rows = Vec::new();
        for inst in &exp.test {
            let net = a3c::transfer_init(&ckpt, inst).map_err(model_error)?;
            let policy = ModelPolicy::new(net, ActionMode::Greedy);
            let r = eval::estimate_value(inst, &policy, eval::DEFAULT_RUNS, exp.config.seed).map_err(eval_error)?;
            rows.push(EvalRow::from(&r));
        }
        tables::write_file(&exp.output_dir.join("eval.csv"), &tables::EVAL_HEADER, &rows)?;
    }
    Ok(())
}

fn resolve_baseline(name: &str, domain: DomainId) -> Result<BaselinePolicy, CliError> {
    let b = match name {
        "greedy" => BaselinePolicy::greedy_for(domain),
        other => BaselinePolicy::from_name(other).ok_or_else(|| {
            CliError::usage(format!(
                "unknown baseline `{other}` (random, noop, greedy, sysadmin_greedy, gol_greedy, acad_greedy)"
            ))
        })?,
    };
    if !b.applies_to(domain) {
        return Err(CliError::usage(format!("baseline `{name}` does not apply to {domain}")));
    }
    Ok(b)
}

pub fn eval(a: EvalArgs) -> Result<(), CliError> {
    if a.runs == 0 {
        return Err(CliError::usage("--runs must be at least 1"));
    }
    let inst = load_instance(&a.instance)?;
    let baselines = a
        .baselines
        .iter()
        .map(|b| resolve_baseline(b.trim(), inst.domain))
        .collect::<Result<Vec<_>, _>>()?;
    if a.checkpoint.is_none() && baselines.is_empty() {
        return Err(CliError::usage("nothing to evaluate: pass --checkpoint and/or --baselines"));
    }
    let mut rows = Vec::new();
    if let Some(path) = &a.checkpoint {
        let ckpt = read_checkpoint(path)?;
        let net = a3c::transfer_init(&ckpt, &inst).map_err(model_error)?;
        for mode in [ActionMode::Greedy, ActionMode::Sampled] {
            let policy = ModelPolicy::new(net.clone(), mode);
            rows.push(EvalRow::from(&eval::estimate_value(&inst, &policy, a.runs, a.seed).map_err(eval_error)?));
        }
    }
    for b in &baselines {
        rows.push(EvalRow::from(&eval::estimate_value(&inst, b, a.runs, a.seed).map_err(eval_error)?));
    }
    write_output(a.out.as_deref(), &csv_bytes(&tables::EVAL_HEADER, &rows)?)
}

/// Baselines used as alpha anchors for an instance.
pub fn anchor_baselines(domain: DomainId) -> Vec<BaselinePolicy> {
    vec![
        BaselinePolicy::UniformRandom,
        BaselinePolicy::NoopOnly,
        BaselinePolicy::greedy_for(domain),
    ]
}

pub fn fine_tune(
    start: &Checkpoint,
    inst: &ProblemInstance,
    budget: f64,
    interval: f64,
    seed: u64,
    threads: usize,
) -> Result<Vec<Checkpoint>, CliError> {
    let mut cfg = TrainConfig::new(vec![inst.clone()]);
    cfg.encoder = start.config.encoder;
    cfg.shared_encoder = start.config.shared_encoder;
    cfg.wall_clock_budget = budget;
    cfg.checkpoint_interval = interval;
    cfg.seed = seed;
    cfg.threads = threads;
    // the curve clock starts at the transfer, not at the source training
    let origin = Checkpoint {
        meta: TrainingMeta {
            elapsed_seconds: 0.0,
            gradient_steps: 0,
            seed,
        },
        ..start.clone()
    };
    let mut out = Vec::new();
    a3c::train(cfg, Some(&origin), |c| Ok(out.push(c.clone())), |_| Ok(())).map_err(train_error)?;
    Ok(out)
}

pub fn transfer(a: TransferArgs, threads: Option<usize>) -> Result<(), CliError> {
    if !(a.budget >= 0.0 && a.budget.is_finite()) {
        return Err(CliError::usage("--budget must be a non-negative number of seconds"));
    }
    if a.runs == 0 {
        return Err(CliError::usage("--runs must be at least 1"));
    }
    let inst = load_instance(&a.instance)?;
    let ckpt = read_checkpoint(&a.checkpoint)?;
    a3c::transfer_init(&ckpt, &inst).map_err(model_error)?;
    let interval = a.interval.unwrap_or((a.budget / 5.0).max(1e-3));
    if !(interval > 0.0) {
        return Err(CliError::usage("--interval must be positive"));
    }
    let checkpoints = fine_tune(&ckpt, &inst, a.budget, interval, a.seed, threads.unwrap_or(1))?;
    let curve = eval::learning_curve(&checkpoints, &inst, a.runs, a.seed, &anchor_baselines(inst.domain))
        .map_err(eval_error)?;
    let rows: Vec<CurveRow> = curve.points.iter().map(CurveRow::from).collect();
    tables::write_file(&a.out, &tables::CURVE_HEADER, &rows)?;
    if let Some(p) = &a.anchors {
        let rows: Vec<EvalRow> = curve.baselines.iter().map(EvalRow::from).collect();
        tables::write_file(p, &tables::EVAL_HEADER, &rows)?;
    }
    Ok(())
}

fn curve_name(path: &PathBuf) -> String {
    path.file_stem().map_or_else(|| path.display().to_string(), |s| s.to_string_lossy().into_owned())
}

pub fn plotdata(a: PlotdataArgs) -> Result<(), CliError> {
    let mut rows = Vec::new();
    for path in &a.curves {
        let name = curve_name(path);
        rows.extend(tables::read_curve(path)?.into_iter().map(|r| MergedRow::new(&name, r)));
    }
    write_output(a.out.as_deref(), &csv_bytes(&tables::MERGED_HEADER, &rows)?)
}
