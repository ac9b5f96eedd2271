//! Command-line verbs and file output helpers.

use std::fmt::Write as _;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::checkpoint::Checkpoint;
use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::evalrank::{unix_time, zero_shot_report, RankingReport, RelationSpace, ZeroShotReport};
use crate::grl::ZeroShotMode;
use crate::kgdata::{make_zero_shot_split, read_triples, Split, ZeroShotSplit};
use crate::model::Model;
use crate::train::{test_report, train, Dataset, LogRecord};

/// Writes `bytes` to a sibling temp file and renames it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let name = path.file_name().ok_or_else(|| Error::Data(format!("{} is not a file path", path.display())))?;
    let tmp = dir.join(format!(".{}.tmp{}", name.to_string_lossy(), std::process::id()));
    let write = || -> std::io::Result<()> {
        fs::create_dir_all(dir)?;
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    };
    write().map_err(|e| {
        let _ = fs::remove_file(&tmp);
        Error::io(path, e)
    })
}

#[derive(Debug, Parser)]
#[command(name = "kgrl", version, about = "Knowledge-graph embeddings with a relation-learning head")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Common {
    /// Run configuration (`key = value` lines).
    #[arg(long)]
    pub config: PathBuf,
    /// Override a config key, e.g. `--set seed=3`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a model and save the best checkpoint.
    Train(Common),
    /// Evaluate a checkpoint on the test split and write a JSON report.
    Eval(Common),
    /// Score unseen-relation triples with a trained relation-learning head.
    Zeroshot(Common),
    /// Write relation (and optionally entity) embeddings as TSV.
    Export {
        #[command(flatten)]
        common: Common,
        /// Output file for relation vectors.
        #[arg(long)]
        out: PathBuf,
        /// Also write entity vectors here.
        #[arg(long)]
        entities: Option<PathBuf>,
    },
    /// Print the many-shot / few-shot relation partition.
    SplitStats(Common),
}

impl Common {
    pub fn load(&self) -> Result<RunConfig> {
        let mut cfg = RunConfig::load(&self.config)?;
        cfg.apply_overrides(&self.overrides)?;
        Ok(cfg)
    }
}

pub fn run(cli: Cli) -> Result<()> {
    let stdout = &mut std::io::stdout().lock();
    match cli.command {
        Command::Train(c) => run_train(&c.load()?, stdout).map(|_| ()),
        Command::Eval(c) => {
            let cfg = c.load()?;
            let report = run_eval(&cfg)?;
            write_line(stdout, &metric_table(&report))
        }
        Command::Zeroshot(c) => {
            let reports = run_zero_shot(&c.load()?)?;
            write_line(stdout, &serde_json::to_string_pretty(&reports)?)
        }
        Command::Export { common, out, entities } => {
            let cfg = common.load()?;
            export_embeddings(&Checkpoint::load(&cfg.checkpoint)?, &out, entities.as_deref())
        }
        Command::SplitStats(c) => {
            let cfg = c.load()?;
            write_line(stdout, &split_stats(&Dataset::load(&cfg)?)?)
        }
    }
}

fn write_line(out: &mut dyn Write, s: &str) -> Result<()> {
    writeln!(out, "{s}").map_err(|e| Error::io("<stdout>", e))
}

/// Trains, logging one JSON object per epoch to `out`, and saves the best
/// checkpoint.
pub fn run_train(cfg: &RunConfig, out: &mut dyn Write) -> Result<Checkpoint> {
    let data = Dataset::load(cfg)?;
    let mut io_err = None;
    let mut on_log = |r: &LogRecord| {
        let line = serde_json::to_string(r).expect("log record serialises");
        if let Err(e) = writeln!(out, "{line}") {
            io_err.get_or_insert(e);
        }
    };
    let outcome = train(cfg, &data, &mut on_log)?;
    if let Some(e) = io_err {
        return Err(Error::io("<stdout>", e));
    }
    let ckpt = Checkpoint::from_model(&outcome.model, &data.kg, cfg);
    ckpt.save(&cfg.checkpoint)?;
    eprintln!(
        "best validation MRR {:.4} at epoch {} ({} epochs run); saved {}",
        outcome.best_val_mrr,
        outcome.best_epoch,
        outcome.epochs_run,
        cfg.checkpoint.display()
    );
    Ok(ckpt)
}

fn load_checked(cfg: &RunConfig, path: &Path, data: &Dataset) -> Result<Model> {
    let ckpt = Checkpoint::load(path)?;
    if ckpt.kind()? != cfg.model {
        return Err(Error::Checkpoint(format!("checkpoint holds a {} model, config asks for {}", ckpt.header.model, cfg.model)));
    }
    ckpt.check_vocab(&data.kg)?;
    ckpt.into_model()
}

/// Evaluates the configured checkpoint on the test split and writes the
/// report (and the attention export, when configured).
pub fn run_eval(cfg: &RunConfig) -> Result<RankingReport> {
    let data = Dataset::load(cfg)?;
    let model = load_checked(cfg, &cfg.checkpoint, &data)?;
    let report = test_report(&model, &data, cfg.per_query)?;
    write_atomic(&cfg.report_path, report.to_json()?.as_bytes())?;
    if let Some(path) = &cfg.attention_path {
        export_attention(&model, &data, path, cfg.attention_samples)?;
    }
    Ok(report)
}

pub fn metric_table(r: &RankingReport) -> String {
    let mut s = String::from("group      queries      MRR   HITS@1   HITS@5  HITS@10\n");
    for (name, m) in [("all", &r.metrics), ("many-shot", &r.groups.many), ("few-shot", &r.groups.few)] {
        let _ = writeln!(s, "{name:<10} {:>7} {:>8.4} {:>8.4} {:>8.4} {:>8.4}", m.queries, m.mrr, m.h1, m.h5, m.h10);
    }
    s.trim_end().to_owned()
}

#[derive(Debug, Serialize)]
pub struct ZeroShotOutput {
    pub timestamp: u64,
    pub reports: Vec<ZeroShotReport>,
}

/// Zero-shot report for both substitution modes against the UNK baseline.
/// Unseen triples come from the withheld relation, a side-table file, or a
/// sample of a superset graph, in that order of preference.
pub fn run_zero_shot(cfg: &RunConfig) -> Result<ZeroShotOutput> {
    let data = Dataset::load(cfg)?;
    let model = load_checked(cfg, &cfg.checkpoint, &data)?;
    let zs = if data.withheld.is_some() {
        data.zero_shot()?
    } else if let Some(p) = &cfg.zero_shot_path {
        ZeroShotSplit::from_side_table(&data.kg, read_triples(p)?)?
    } else if let Some(p) = &cfg.zero_shot_superset {
        make_zero_shot_split(&data.kg, &read_triples(p)?, cfg.zero_shot_count, cfg.seed)?
    } else {
        return Err(Error::Config("zeroshot needs withhold_relation, zero_shot_path or zero_shot_superset".into()));
    };
    let transe = cfg.transe_checkpoint.as_ref().map(|p| Checkpoint::load(p)).transpose()?;
    let transe = match transe {
        Some(c) => {
            let names = c.relation_vocab();
            Some((c.into_model()?, names))
        }
        None => None,
    };
    let space = transe.as_ref().map(|(m, names)| RelationSpace::new(&m.kge, names));
    let mut reports = Vec::new();
    for mode in [ZeroShotMode::Fusion, ZeroShotMode::MostSimilar] {
        reports.push(zero_shot_report(&model, &data.kg, &zs, mode, space.as_ref())?);
    }
    let out = ZeroShotOutput { timestamp: unix_time(), reports };
    write_atomic(&cfg.zero_shot_report, serde_json::to_string_pretty(&out)?.as_bytes())?;
    Ok(out)
}

fn tsv_rows(names: &[String], values: &[f32], dim: usize) -> String {
    let mut s = String::new();
    for (name, row) in names.iter().zip(values.chunks(dim)) {
        s.push_str(name);
        for v in row {
            let _ = write!(s, "\t{v}");
        }
        s.push('\n');
    }
    s
}

/// `name<TAB>v1<TAB>...` per relation (UNK last); entities optionally.
/// Values are the stored f32 numbers in shortest round-trip form.
pub fn export_embeddings(ckpt: &Checkpoint, out: &Path, entities: Option<&Path>) -> Result<()> {
    let block = |name: &str| {
        ckpt.blocks.iter().find(|b| b.name == name).ok_or_else(|| Error::Checkpoint(format!("missing block {name}")))
    };
    let dim = ckpt.header.dim;
    write_atomic(out, tsv_rows(&ckpt.header.relations, &block("relation")?.values, dim).as_bytes())?;
    if let Some(path) = entities {
        write_atomic(path, tsv_rows(&ckpt.header.entities, &block("entity")?.values, dim).as_bytes())?;
    }
    Ok(())
}

/// `gold<TAB>k<TAB>alpha[k]` rows for the first `samples` test triples.
pub fn export_attention(model: &Model, data: &Dataset, path: &Path, samples: usize) -> Result<()> {
    let kg = &data.kg;
    let triples: Vec<_> = kg.split(Split::Test).iter().take(samples).copied().collect();
    if triples.is_empty() {
        return Err(Error::Data("no test triples for the attention export".into()));
    }
    let att = model.attention(&triples)?;
    let mut s = String::new();
    for (i, t) in triples.iter().enumerate() {
        for (k, a) in att.row(i).iter().enumerate() {
            let _ = writeln!(s, "{}\t{}\t{a}", kg.relations.name(t.relation), kg.relations.name(k));
        }
    }
    write_atomic(path, s.as_bytes())
}

pub fn split_stats(data: &Dataset) -> Result<String> {
    #[derive(Serialize)]
    struct Row<'a> {
        relation: &'a str,
        train_triples: usize,
        group: &'a str,
    }
    let kg = &data.kg;
    let g = &data.groups;
    let rows: Vec<Row> = (0..kg.num_base_relations())
        .map(|r| Row {
            relation: kg.relations.name(r),
            train_triples: g.frequency[r],
            group: if g.many_shot.contains(&r) { "many" } else { "few" },
        })
        .collect();
    Ok(serde_json::to_string_pretty(&serde_json::json!({
        "many_shot": g.many_shot.len(),
        "few_shot": g.few_shot.len(),
        "relations": rows,
    }))?)
}
