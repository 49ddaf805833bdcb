use std::fs::{self, File};
use std::io::{self, Read, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use serde::de::DeserializeOwned;
use serde::Serialize;

use kpgen::eval::{self, EvalReport};
use kpgen::io::synth::{synth_instances, SynthConfig};
use kpgen::io::{
    self as kio, AssignmentRecord, EmbeddingRecord, InstanceRecord, LabelRecord, PredictionRecord,
    ReplyRecord,
};
use kpgen::losses::GeneratorLossConfig;
use kpgen::pipeline::{self, Assigner, SelectKind};
use kpgen::selector::OrderingMode;
use kpgen::transport::AssignConfig;

#[derive(Parser)]
#[command(
    name = "kpgen",
    version,
    about = "Supervision assignment, selection and evaluation for set-style keyphrase generation"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate synthetic instances with planted assignments.
    Synth {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Overrides the seed in the config.
        #[arg(long)]
        seed: Option<u64>,
        #[command(flatten)]
        out: Output,
    },
    /// Assign a target to every control code.
    Assign {
        #[arg(long, value_enum)]
        assigner: AssignerArg,
        #[command(flatten)]
        common: AssignArgs,
    },
    /// Dump match scores, normalized mu and supplies.
    Score {
        #[command(flatten)]
        common: AssignArgs,
    },
    /// Exact assignment by enumeration, for cross-checking small instances.
    Oracle {
        #[arg(value_enum)]
        assigner: AssignerArg,
        #[command(flatten)]
        common: AssignArgs,
    },
    /// Evaluate training losses.
    Loss {
        #[command(subcommand)]
        which: LossCommand,
    },
    /// Selector prompts, reply application and tuning data.
    Select {
        #[command(subcommand)]
        which: SelectCommand,
    },
    /// Score predictions against gold.
    Eval {
        /// Predictions: JSONL of {id, keyphrases}.
        #[arg(long)]
        pred: PathBuf,
        /// Instances carrying the documents and gold phrases.
        #[arg(long)]
        gold: PathBuf,
        /// JSONL of {phrase, vector}.
        #[arg(long)]
        embeddings: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = Format::Json)]
        format: Format,
        #[command(flatten)]
        out: Output,
    },
}

#[derive(Subcommand)]
enum LossCommand {
    /// Lambda-weighted generator loss of an assignment.
    Generator {
        #[arg(long)]
        input: PathBuf,
        /// Assignment JSONL produced by `assign`.
        #[arg(long)]
        assignments: PathBuf,
        #[arg(long, default_value_t = 0.2)]
        lambda_pre: f64,
        #[arg(long, default_value_t = 0.1)]
        lambda_abs: f64,
        #[command(flatten)]
        out: Output,
    },
    /// Class-balanced selector loss of labeled log-probabilities.
    Selector {
        /// JSONL of {id, labels, logprobs}.
        #[arg(long)]
        input: PathBuf,
        #[command(flatten)]
        out: Output,
    },
}

#[derive(Subcommand)]
enum SelectCommand {
    /// Render inference prompts.
    Render {
        #[command(flatten)]
        sel: SelectArgs,
        /// `sorted` or `random:<seed>`.
        #[arg(long, default_value = "sorted")]
        order: OrderingMode,
    },
    /// Apply model replies to the candidates they label.
    Apply {
        #[command(flatten)]
        sel: SelectArgs,
        /// JSONL of {instance_id, reply_text}.
        #[arg(long)]
        replies: PathBuf,
        /// Must match the order the prompts were rendered with.
        #[arg(long, default_value = "sorted")]
        order: OrderingMode,
    },
    /// Emit tuning records with gold-derived labels in seeded random order.
    ExportTuning {
        #[command(flatten)]
        sel: SelectArgs,
        #[arg(long)]
        seed: u64,
    },
}

#[derive(Args)]
struct SelectArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long, value_enum, default_value_t = KindArg::All)]
    kind: KindArg,
    #[command(flatten)]
    out: Output,
}

#[derive(Args)]
struct AssignArgs {
    #[arg(long)]
    input: PathBuf,
    /// TOML assignment config; defaults apply to missing keys.
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    out: Output,
}

#[derive(Args)]
struct Output {
    /// Output file; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum AssignerArg {
    Ot,
    Bipartite,
}

impl From<AssignerArg> for Assigner {
    fn from(a: AssignerArg) -> Self {
        match a {
            AssignerArg::Ot => Assigner::Ot,
            AssignerArg::Bipartite => Assigner::Bipartite,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum KindArg {
    Present,
    Absent,
    All,
    Scoring,
}

impl From<KindArg> for SelectKind {
    fn from(k: KindArg) -> Self {
        match k {
            KindArg::Present => SelectKind::Present,
            KindArg::Absent => SelectKind::Absent,
            KindArg::All => SelectKind::All,
            KindArg::Scoring => SelectKind::Scoring,
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Json,
    Table,
}

#[derive(Serialize)]
struct InstanceLoss {
    id: String,
    loss: f64,
}

#[derive(Serialize)]
struct LossReport {
    instances: Vec<InstanceLoss>,
    total: f64,
    mean: f64,
}

impl LossReport {
    fn new(instances: Vec<InstanceLoss>) -> Self {
        let total: f64 = instances.iter().map(|l| l.loss).sum();
        let mean = if instances.is_empty() {
            0.0
        } else {
            total / instances.len() as f64
        };
        LossReport {
            instances,
            total,
            mean,
        }
    }
}

fn open_output(out: &Output) -> anyhow::Result<Box<dyn Write>> {
    Ok(match &out.out {
        Some(p) => Box::new(File::create(p).with_context(|| format!("creating {}", p.display()))?),
        None => Box::new(io::stdout().lock()),
    })
}

fn write_records<T: Serialize>(out: &Output, records: &[T]) -> anyhow::Result<()> {
    kio::write_jsonl(open_output(out)?, records)?;
    Ok(())
}

fn write_json<T: Serialize>(out: &Output, value: &T) -> anyhow::Result<()> {
    let mut w = open_output(out)?;
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

fn read_input(path: &Path) -> anyhow::Result<Box<dyn Read>> {
    if path == Path::new("-") {
        return Ok(Box::new(io::stdin().lock()));
    }
    Ok(Box::new(
        File::open(path).with_context(|| format!("opening {}", path.display()))?,
    ))
}

fn instances(path: &Path) -> anyhow::Result<Vec<InstanceRecord>> {
    kio::parse_instances(read_input(path)?).with_context(|| format!("reading {}", path.display()))
}

fn records<T: DeserializeOwned>(path: &Path) -> anyhow::Result<Vec<T>> {
    kio::read_jsonl(read_input(path)?).with_context(|| format!("reading {}", path.display()))
}

fn toml_config<T: DeserializeOwned + Default>(path: Option<&PathBuf>) -> anyhow::Result<T> {
    match path {
        None => Ok(T::default()),
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            toml::from_str(&text).with_context(|| format!("parsing {}", p.display()))
        }
    }
}

fn assign_inputs(a: &AssignArgs) -> anyhow::Result<(Vec<InstanceRecord>, AssignConfig)> {
    let cfg: AssignConfig = toml_config(a.config.as_ref())?;
    cfg.validate()?;
    Ok((instances(&a.input)?, cfg))
}

fn map_instances<T: Send>(
    recs: &[InstanceRecord],
    f: impl Fn(&InstanceRecord) -> kpgen::Result<T> + Sync,
) -> anyhow::Result<Vec<T>> {
    recs.par_iter()
        .map(|r| f(r).with_context(|| format!("instance {:?}", r.id)))
        .collect()
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Synth { config, seed, out } => {
            let mut cfg: SynthConfig = toml_config(config.as_ref())?;
            if let Some(s) = seed {
                cfg.seed = s;
            }
            write_records(&out, &synth_instances(&cfg)?)
        }
        Command::Assign { assigner, common } => {
            let (recs, cfg) = assign_inputs(&common)?;
            let plans = map_instances(&recs, |r| {
                pipeline::assign_instance(r, assigner.into(), &cfg)
            })?;
            write_records(&common.out, &plans)
        }
        Command::Score { common } => {
            let (recs, cfg) = assign_inputs(&common)?;
            let scores = map_instances(&recs, |r| pipeline::score_instance(r, &cfg))?;
            write_records(&common.out, &scores)
        }
        Command::Oracle { assigner, common } => {
            let (recs, cfg) = assign_inputs(&common)?;
            let plans = map_instances(&recs, |r| {
                pipeline::oracle_instance(r, assigner.into(), &cfg)
            })?;
            write_records(&common.out, &plans)
        }
        Command::Loss { which } => run_loss(which),
        Command::Select { which } => run_select(which),
        Command::Eval {
            pred,
            gold,
            embeddings,
            format,
            out,
        } => {
            let preds: Vec<PredictionRecord> = records(&pred)?;
            let gold = instances(&gold)?;
            let emb = match embeddings {
                Some(p) => Some(pipeline::embeddings_from(&records::<EmbeddingRecord>(&p)?)?),
                None => None,
            };
            let (p, g) = pipeline::eval_inputs(&preds, &gold);
            let report: EvalReport = eval::evaluate_corpus(&p, &g, emb.as_ref())?;
            match format {
                Format::Json => write_json(&out, &report),
                Format::Table => {
                    let mut w = open_output(&out)?;
                    w.write_all(report.to_table().as_bytes())?;
                    w.flush()?;
                    Ok(())
                }
            }
        }
    }
}

fn run_loss(which: LossCommand) -> anyhow::Result<()> {
    match which {
        LossCommand::Generator {
            input,
            assignments,
            lambda_pre,
            lambda_abs,
            out,
        } => {
            let cfg = GeneratorLossConfig {
                lambda_pre,
                lambda_abs,
            };
            cfg.validate()?;
            let recs = instances(&input)?;
            let plans: Vec<AssignmentRecord> = records(&assignments)?;
            let by_id = pipeline::by_id(&plans, |p| p.id.as_str());
            let losses = map_instances(&recs, |r| {
                let plan = by_id.get(&r.id).ok_or_else(|| {
                    kpgen::Error::InvalidInput(format!("no assignment for {:?}", r.id))
                })?;
                Ok(InstanceLoss {
                    id: r.id.clone(),
                    loss: pipeline::generator_loss_instance(r, plan, &cfg)?,
                })
            })?;
            write_json(&out, &LossReport::new(losses))
        }
        LossCommand::Selector { input, out } => {
            let recs: Vec<LabelRecord> = records(&input)?;
            let losses = recs
                .iter()
                .map(|r| {
                    Ok(InstanceLoss {
                        id: r.id.clone(),
                        loss: pipeline::selector_loss_record(r)
                            .with_context(|| format!("record {:?}", r.id))?,
                    })
                })
                .collect::<anyhow::Result<Vec<_>>>()?;
            write_json(&out, &LossReport::new(losses))
        }
    }
}

fn run_select(which: SelectCommand) -> anyhow::Result<()> {
    match which {
        SelectCommand::Render { sel, order } => {
            let recs = instances(&sel.input)?;
            let prompts = map_instances(&recs, |r| {
                pipeline::render_instance(r, sel.kind.into(), order)
            })?;
            write_records(&sel.out, &prompts.into_iter().flatten().collect::<Vec<_>>())
        }
        SelectCommand::Apply {
            sel,
            replies,
            order,
        } => {
            let recs = instances(&sel.input)?;
            let replies: Vec<ReplyRecord> = records(&replies)?;
            let by_id = pipeline::by_id(&replies, |r| r.instance_id.as_str());
            let preds = map_instances(&recs, |r| {
                let reply = by_id.get(&r.id).map(|x| x.reply_text.as_str());
                pipeline::apply_reply(r, sel.kind.into(), order, reply)
            })?;
            write_records(&sel.out, &preds)
        }
        SelectCommand::ExportTuning { sel, seed } => {
            if matches!(sel.kind, KindArg::Scoring) {
                bail!("export-tuning needs a labeling template; use present, absent or all");
            }
            let recs = instances(&sel.input)?;
            let out = map_instances(&recs, |r| {
                pipeline::export_instance(r, sel.kind.into(), seed)
            })?;
            write_records(&sel.out, &out.into_iter().flatten().collect::<Vec<_>>())
        }
    }
}

fn exit_code(err: &anyhow::Error) -> u8 {
    let numerical = err
        .chain()
        .filter_map(|e| e.downcast_ref::<kpgen::Error>())
        .any(kpgen::Error::is_numerical);
    if numerical {
        3
    } else {
        2
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
