//! Experiment manifests.
//!
//! A manifest is a TOML file. Relative paths are resolved against the
//! directory containing the manifest.
//!
//! ```toml
//! domain = "sysadmin"
//! output_dir = "runs/sysadmin"
//! test_instances = ["inst/sysadmin_15.inst"]   # optional
//!
//! [[train]]                   # an instance file ...
//! file = "inst/sysadmin_5.inst"
//!
//! [[train]]                   # ... or a generated instance
//! size = 6
//! topology = "random"         # random | grid | dag
//! edge_prob = 0.6             # random and dag
//! rows = 2                    # grid
//! cols = 3
//! seed = 1
//!
//! [trainer]                   # every key optional
//! budget_seconds = 600
//! checkpoint_interval = 60
//! checkpoint_every_steps = 500
//! max_steps = 10000
//! nstep = 20
//! gamma = 0.99
//! entropy_weight = 0.01
//! value_loss_weight = 0.5
//! grad_clip_norm = 40
//! learning_rate = 0.001
//! normalize_rewards = false
//! encoder = "gat"             # gat | gcn
//! shared_encoder = false
//! threads = 1
//! seed = 0
//! log_every_steps = 100
//! ```

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use rddl_transfer::a3c::TrainConfig;
use rddl_transfer::domains::{generate_instance, GeneratorConfig, Topology};
use rddl_transfer::io::parse_instance;
use rddl_transfer::model::EncoderKind;
use rddl_transfer::{DomainId, ProblemInstance};
use serde::Deserialize;

use crate::CliError;

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub domain: String,
    pub output_dir: PathBuf,
    #[serde(default)]
    pub test_instances: Vec<PathBuf>,
    pub train: Vec<TrainSource>,
    #[serde(default)]
    pub trainer: TrainerSection,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSource {
    pub file: Option<PathBuf>,
    pub size: Option<usize>,
    pub topology: Option<String>,
    pub edge_prob: Option<f64>,
    pub rows: Option<usize>,
    pub cols: Option<usize>,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainerSection {
    pub budget_seconds: Option<f64>,
    pub checkpoint_interval: Option<f64>,
    pub checkpoint_every_steps: Option<u64>,
    pub max_steps: Option<u64>,
    pub nstep: Option<usize>,
    pub gamma: Option<f64>,
    pub entropy_weight: Option<f64>,
    pub value_loss_weight: Option<f64>,
    pub grad_clip_norm: Option<f64>,
    pub learning_rate: Option<f64>,
    pub normalize_rewards: Option<bool>,
    pub encoder: Option<String>,
    pub shared_encoder: Option<bool>,
    pub threads: Option<usize>,
    pub seed: Option<u64>,
    pub log_every_steps: Option<u64>,
}

/// A manifest with every path resolved and every instance loaded.
pub struct Experiment {
    pub output_dir: PathBuf,
    pub test: Vec<ProblemInstance>,
    pub config: TrainConfig,
}

pub fn parse_domain(s: &str) -> Result<DomainId> {
    DomainId::from_name(s).with_context(|| format!("unknown domain `{s}` (sysadmin, game_of_life, academic_advising)"))
}

/// Builds a generator topology from CLI or manifest fields, falling back to
/// the domain's natural topology.
pub fn topology(
    domain: DomainId,
    size: usize,
    name: Option<&str>,
    edge_prob: Option<f64>,
    rows: Option<usize>,
    cols: Option<usize>,
) -> Result<Topology> {
    let name = name.unwrap_or(match domain {
        DomainId::SysAdmin => "random",
        DomainId::GameOfLife => "grid",
        DomainId::AcademicAdvising => "dag",
    });
    Ok(match name {
        "random" => Topology::RandomGraph {
            edge_prob: edge_prob.unwrap_or_else(|| default_edge_prob(size)),
        },
        "dag" => Topology::Dag {
            edge_prob: edge_prob.unwrap_or(0.3),
        },
        "grid" => {
            let (rows, cols) = match (rows, cols) {
                (Some(r), Some(c)) => (r, c),
                (Some(r), None) if r > 0 => (r, size / r),
                (None, Some(c)) if c > 0 => (size / c, c),
                _ => {
                    let r = (size as f64).sqrt().round() as usize;
                    (r, r)
                }
            };
            Topology::Grid { rows, cols }
        }
        other => bail!("unknown topology `{other}` (random, grid, dag)"),
    })
}

/// Edge probability giving an expected degree of about 3.
pub fn default_edge_prob(size: usize) -> f64 {
    if size <= 1 {
        0.0
    } else {
        (3.0 / (size - 1) as f64).min(1.0)
    }
}

pub fn load_instance(path: &Path) -> Result<ProblemInstance, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::io(format!("cannot read instance {}: {e}", path.display())))?;
    parse_instance(&text).map_err(|e| CliError::io(format!("{}: {e}", path.display())))
}

impl Experiment {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::io(format!("cannot read manifest {}: {e}", path.display())))?;
        let m: Manifest =
            toml::from_str(&text).map_err(|e| CliError::io(format!("manifest {}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        let resolve = |p: &Path| if p.is_absolute() { p.to_path_buf() } else { base.join(p) };
        let domain = parse_domain(&m.domain).map_err(CliError::usage)?;

        // every referenced file must exist before any work starts
        let files = m.train.iter().filter_map(|s| s.file.as_deref()).chain(m.test_instances.iter().map(PathBuf::as_path));
        for f in files {
            let p = resolve(f);
            if !p.is_file() {
                return Err(CliError::io(format!("instance file not found: {}", p.display())));
            }
        }

        let mut train = Vec::with_capacity(m.train.len());
        for (k, src) in m.train.iter().enumerate() {
            let inst = match (&src.file, src.size) {
                (Some(f), None) => load_instance(&resolve(f))?,
                (None, Some(size)) => {
                    let topo = topology(domain, size, src.topology.as_deref(), src.edge_prob, src.rows, src.cols)
                        .map_err(CliError::usage)?;
                    generate_instance(&GeneratorConfig {
                        domain,
                        size,
                        topology: topo,
                        seed: src.seed,
                    })
                    .map_err(|e| CliError::usage(anyhow::anyhow!("train entry {}: {e}", k + 1)))?
                }
                _ => {
                    return Err(CliError::usage(anyhow::anyhow!(
                        "train entry {} needs exactly one of `file` or `size`",
                        k + 1
                    )))
                }
            };
            if inst.domain != domain {
                return Err(CliError::usage(anyhow::anyhow!(
                    "training instance `{}` is {}, manifest domain is {domain}",
                    inst.name,
                    inst.domain
                )));
            }
            train.push(inst);
        }
        let test = m
            .test_instances
            .iter()
            .map(|p| load_instance(&resolve(p)))
            .collect::<Result<Vec<_>, _>>()?;

        let t = &m.trainer;
        let mut config = TrainConfig::new(train);
        macro_rules! set {
            ($($field:ident),*) => { $( if let Some(v) = t.$field { config.$field = v; } )* };
        }
        set!(nstep, gamma, entropy_weight, value_loss_weight, grad_clip_norm, learning_rate);
        set!(normalize_rewards, shared_encoder, threads, seed, log_every_steps, checkpoint_interval);
        if let Some(b) = t.budget_seconds {
            config.wall_clock_budget = b;
        }
        config.checkpoint_every_steps = t.checkpoint_every_steps;
        config.max_steps = t.max_steps;
        if let Some(e) = &t.encoder {
            config.encoder = EncoderKind::from_name(e)
                .ok_or_else(|| CliError::usage(anyhow::anyhow!("unknown encoder `{e}` (gat, gcn)")))?;
        }
        config
            .validate()
            .map_err(|e| CliError::usage(anyhow::anyhow!("{e}")))?;

        Ok(Self {
            output_dir: resolve(&m.output_dir),
            test,
            config,
        })
    }
}
