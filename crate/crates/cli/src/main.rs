//! `mtmlf`: operator entry points for the learned query-optimizer pipeline.
//!
//! Every command is deterministic given `(config, seed)`: reruns produce
//! byte-identical artifacts and reports. Reports carry the SHA-256 of the
//! effective config for provenance.

use clap::{Parser, Subcommand};
use mtqo_core::featurize::{encoders_from_params, encoders_to_params, train_all_encoders};
use mtqo_core::meta::{self, TrainConfig, TransferConfig};
use mtqo_core::model::{Model, ModelConfig};
use mtqo_core::oracle::CostParams;
use mtqo_core::report::{bootstrap_mean_ci, config_hash, render_eval, EvalReport};
use mtqo_core::schema_gen::{gen_database, load_database, save_database, write_atomic, GenConfig};
use mtqo_core::tensor::checkpoint;
use mtqo_core::workload::{
    gen_query, initial_plan, load_workload, save_workload, QueryGenConfig, WorkloadItem,
};
use mtqo_core::{Error, Result};
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

/// Everything an experiment needs, in one JSON file. Unknown keys are
/// rejected; omitted keys take the documented defaults.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct ExperimentConfig {
    seed: u64,
    /// Queries per generated workload.
    queries: usize,
    db: GenConfig,
    workload: QueryGenConfig,
    cost: CostParams,
    model: ModelConfig,
    train: TrainConfig,
    seq_epochs: usize,
    eval_beam_k: usize,
    eval_beam_cap: usize,
    transfer: TransferConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            seed: 0,
            queries: 500,
            db: GenConfig::default(),
            workload: QueryGenConfig::default(),
            cost: CostParams::default(),
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            seq_epochs: 3,
            eval_beam_k: mtqo_core::decode::DEFAULT_BEAM_WIDTH,
            eval_beam_cap: mtqo_core::decode::DEFAULT_BEAM_CAP,
            transfer: TransferConfig::default(),
        }
    }
}

#[derive(Parser)]
#[command(name = "mtmlf", version, about = "Learned query-optimizer pipeline driver")]
struct Cli {
    /// Experiment config (JSON); defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override the config's master seed (and the training seed).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output path: a directory for gen-db/eval/transfer, a file otherwise.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a synthetic database (MTDB1 layout) into --out.
    GenDb,
    /// Generate an unlabeled query workload (JSONL) over a database.
    GenWorkload {
        #[arg(long)]
        db: PathBuf,
    },
    /// Attach oracle labels (cardinalities, costs, optimal order) to a workload.
    Label {
        #[arg(long)]
        db: PathBuf,
        #[arg(long)]
        workload: PathBuf,
    },
    /// Train the per-table featurizer encoders; writes an MTCK1 checkpoint.
    TrainEnc {
        #[arg(long)]
        db: PathBuf,
    },
    /// Joint multi-task training on a labeled workload; writes a model checkpoint.
    Train {
        #[arg(long)]
        db: PathBuf,
        #[arg(long)]
        workload: PathBuf,
        #[arg(long)]
        encoders: PathBuf,
        /// Continue from an existing model checkpoint instead of fresh init.
        #[arg(long)]
        init: Option<PathBuf>,
    },
    /// Sequence-level refinement of a trained model with beam-derived candidate sets.
    SeqFinetune {
        #[arg(long)]
        db: PathBuf,
        #[arg(long)]
        workload: PathBuf,
        #[arg(long)]
        encoders: PathBuf,
        #[arg(long)]
        model: PathBuf,
    },
    /// Evaluate a model on a labeled workload; writes report.json and report.txt.
    Eval {
        #[arg(long)]
        db: PathBuf,
        #[arg(long)]
        workload: PathBuf,
        #[arg(long)]
        encoders: PathBuf,
        #[arg(long)]
        model: PathBuf,
    },
    /// End-to-end transfer experiment: meta-train on fresh databases, evaluate
    /// zero-shot and fine-tuned on a held-out database.
    Transfer,
}

#[derive(Serialize)]
struct StampedReport<'a> {
    config_hash: &'a str,
    report: &'a EvalReport,
}

#[derive(Serialize)]
struct TransferReport {
    config_hash: String,
    zero_shot: EvalReport,
    fine_tuned: EvalReport,
    random_mean_joeu: f64,
    random_joeu_ci: (f64, f64),
    zero_shot_mean_joeu: f64,
    zero_shot_joeu_ci: (f64, f64),
    fine_tuned_mean_joeu: f64,
    fine_tuned_joeu_ci: (f64, f64),
    pretrain_curve: Vec<f64>,
    finetune_curve: Vec<f64>,
}

fn main() {
    if let Err(e) = run() {
        eprintln!("error: {e}");
        std::process::exit(1);
    }
}

fn load_config(cli: &Cli) -> Result<ExperimentConfig> {
    let mut cfg = match &cli.config {
        Some(path) => serde_json::from_slice(&std::fs::read(path)?)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
        cfg.train.seed = seed;
    }
    Ok(cfg)
}

fn out_path(cli: &Cli) -> Result<&Path> {
    cli.out
        .as_deref()
        .ok_or_else(|| Error::Config("--out is required for this command".into()))
}

fn configure_threads() -> Result<()> {
    if let Ok(v) = std::env::var("MTMLF_THREADS") {
        let n: usize = v
            .parse()
            .map_err(|_| Error::Config(format!("MTMLF_THREADS must be a positive integer, got {v:?}")))?;
        if n == 0 {
            return Err(Error::Config("MTMLF_THREADS must be positive".into()));
        }
        // ignore AlreadyInitialized; first configuration wins
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    Ok(())
}

fn effective_hash(cfg: &ExperimentConfig) -> Result<String> {
    Ok(config_hash(&serde_json::to_vec_pretty(cfg)?))
}

fn load_labeled(path: &Path) -> Result<Vec<WorkloadItem>> {
    let items = load_workload(path)?;
    if items.iter().any(|i| i.labels.is_none()) {
        return Err(Error::State(format!(
            "{}: workload is unlabeled; run `mtmlf label` first",
            path.display()
        )));
    }
    Ok(items)
}

fn load_encoders(
    path: &Path,
    db: &mtqo_core::schema_gen::Database,
    cfg: &ExperimentConfig,
) -> Result<Vec<mtqo_core::featurize::SingleTableEncoder>> {
    let params = checkpoint::load_params(path)?;
    encoders_from_params(&params, db.schema.tables.len(), &cfg.model.enc)
}

fn write_report(dir: &Path, hash: &str, report: &EvalReport) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let stamped = StampedReport { config_hash: hash, report };
    write_atomic(&dir.join("report.json"), &serde_json::to_vec_pretty(&stamped)?)?;
    let text = render_eval(report, hash);
    write_atomic(&dir.join("report.txt"), text.as_bytes())?;
    print!("{text}");
    Ok(())
}

fn render_transfer(r: &TransferReport) -> String {
    let mut s = String::new();
    s.push_str(&format!("config: {}\n", r.config_hash));
    s.push_str(&format!("eval queries: {}\n\n", r.zero_shot.queries));
    s.push_str("policy        total cost   improvement   mean JOEU   JOEU 95% CI\n");
    s.push_str(&format!(
        "random             -            -          {:.4}   [{:.4}, {:.4}]\n",
        r.random_mean_joeu, r.random_joeu_ci.0, r.random_joeu_ci.1
    ));
    for (name, rep, ci) in [
        ("zero-shot", &r.zero_shot, r.zero_shot_joeu_ci),
        ("fine-tuned", &r.fine_tuned, r.fine_tuned_joeu_ci),
    ] {
        s.push_str(&format!(
            "{name:<12} {:>11.1}      {:>7.3}      {:.4}   [{:.4}, {:.4}]\n",
            rep.total_cost_model, rep.improvement_ratio, rep.mean_joeu, ci.0, ci.1
        ));
    }
    let z = &r.zero_shot;
    s.push_str(&format!("greedy       {:>11.1}      {:>7.3}\n", z.total_cost_greedy, 0.0));
    s.push_str(&format!(
        "optimal      {:>11.1}      {:>7.3}\n",
        z.total_cost_optimal, z.optimal_improvement_ratio
    ));
    s
}

fn run() -> Result<()> {
    let cli = Cli::parse();
    configure_threads()?;
    let cfg = load_config(&cli)?;
    let hash = effective_hash(&cfg)?;

    match &cli.cmd {
        Cmd::GenDb => {
            let dir = out_path(&cli)?;
            let db = gen_database(cfg.seed, &cfg.db)?;
            save_database(&db, dir)?;
            println!(
                "wrote database ({} tables) to {} [config {hash}]",
                db.schema.tables.len(),
                dir.display()
            );
        }
        Cmd::GenWorkload { db } => {
            let out = out_path(&cli)?;
            let db = load_database(db)?;
            let mut items = Vec::with_capacity(cfg.queries);
            for j in 0..cfg.queries {
                let q = gen_query(&db, cfg.seed.wrapping_add(1 + j as u64), &cfg.workload)?;
                let plan = initial_plan(&q, &db);
                items.push(WorkloadItem { query: q, plan, labels: None });
            }
            save_workload(&items, out)?;
            println!("wrote {} queries to {} [config {hash}]", items.len(), out.display());
        }
        Cmd::Label { db, workload } => {
            let out = out_path(&cli)?;
            let db = load_database(db)?;
            let items = load_workload(workload)?;
            let items = meta::label_items(&db, &items, &cfg.cost)?;
            save_workload(&items, out)?;
            println!("labeled {} queries into {} [config {hash}]", items.len(), out.display());
        }
        Cmd::TrainEnc { db } => {
            let out = out_path(&cli)?;
            let db = load_database(db)?;
            let encoders = train_all_encoders(&db, &cfg.model.enc, cfg.seed);
            checkpoint::save_params(&encoders_to_params(&encoders), out)?;
            println!(
                "trained {} table encoders into {} [config {hash}]",
                encoders.len(),
                out.display()
            );
        }
        Cmd::Train { db, workload, encoders, init } => {
            let out = out_path(&cli)?;
            let db = load_database(db)?;
            let items = load_labeled(workload)?;
            let encoders = load_encoders(encoders, &db, &cfg)?;
            let records = meta::build_records(0, &db, &encoders, &items, &cfg.model.enc)?;
            let mut model = match init {
                Some(path) => Model::load(path)?,
                None => Model::init(&cfg.model, cfg.seed)?,
            };
            let curve = meta::train_joint(&mut model, &records, &cfg.train)?;
            model.save(out)?;
            println!(
                "trained {} epochs on {} queries: loss {:.4} -> {:.4} [config {hash}]",
                cfg.train.epochs,
                records.len(),
                curve.first().unwrap(),
                curve.last().unwrap()
            );
        }
        Cmd::SeqFinetune { db, workload, encoders, model } => {
            let out = out_path(&cli)?;
            let db = load_database(db)?;
            let items = load_labeled(workload)?;
            let encoders = load_encoders(encoders, &db, &cfg)?;
            let records = meta::build_records(0, &db, &encoders, &items, &cfg.model.enc)?;
            let mut m = Model::load(model)?;
            let seq_cfg = TrainConfig { epochs: cfg.seq_epochs, ..cfg.train };
            let curve = meta::seq_finetune(&mut m, &records, &seq_cfg)?;
            m.save(out)?;
            println!(
                "sequence-finetuned {} epochs on {} queries: last loss {:.4} [config {hash}]",
                cfg.seq_epochs,
                records.len(),
                curve.last().copied().unwrap_or(f64::NAN)
            );
        }
        Cmd::Eval { db, workload, encoders, model } => {
            let dir = out_path(&cli)?;
            let db = load_database(db)?;
            let items = load_labeled(workload)?;
            let encoders = load_encoders(encoders, &db, &cfg)?;
            let m = Model::load(model)?;
            let ev = meta::evaluate(
                &m,
                &db,
                &encoders,
                &items,
                &cfg.cost,
                &cfg.model.enc,
                cfg.eval_beam_k,
                cfg.eval_beam_cap,
            )?;
            write_report(dir, &hash, &ev.report)?;
        }
        Cmd::Transfer => {
            let dir = out_path(&cli)?;
            std::fs::create_dir_all(dir)?;
            let outcome = meta::transfer_run(
                &cfg.db,
                &cfg.workload,
                &cfg.cost,
                &cfg.model,
                &cfg.train,
                &cfg.transfer,
                cfg.seed,
            )?;
            outcome.model.save(&dir.join("model.mtck"))?;
            let boot = |samples: &[f64]| bootstrap_mean_ci(samples, 2000, cfg.seed);
            let report = TransferReport {
                config_hash: hash.clone(),
                random_mean_joeu: outcome.random_joeu.iter().sum::<f64>()
                    / outcome.random_joeu.len() as f64,
                random_joeu_ci: boot(&outcome.random_joeu)?,
                zero_shot_mean_joeu: outcome.zero_shot.report.mean_joeu,
                zero_shot_joeu_ci: boot(&outcome.zero_shot.joeu_samples)?,
                fine_tuned_mean_joeu: outcome.fine_tuned.report.mean_joeu,
                fine_tuned_joeu_ci: boot(&outcome.fine_tuned.joeu_samples)?,
                zero_shot: outcome.zero_shot.report,
                fine_tuned: outcome.fine_tuned.report,
                pretrain_curve: outcome.pretrain_curve,
                finetune_curve: outcome.finetune_curve,
            };
            write_atomic(&dir.join("report.json"), &serde_json::to_vec_pretty(&report)?)?;
            let text = render_transfer(&report);
            write_atomic(&dir.join("report.txt"), text.as_bytes())?;
            print!("{text}");
        }
    }
    Ok(())
}
