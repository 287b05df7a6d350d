use std::error::Error;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use dta_core::model::Ablation;
use dta_core::pipeline::{
    cluster_scores, embeddings_tsv, evaluate, export_embeddings, gradient_check, infer_pair,
    load_checkpoint, load_dataset, metrics_tsv, prepare, save_checkpoint, train,
    write_planted_dataset, Checkpoint, DatasetBundle, DatasetKind, EpochLog, PlantedSpec,
    Preparation, TrainConfig, TrainingPlan,
};
use dta_core::split::{Pair, Scenario};
use dta_core::tensor::GradCheckConfig;

type CliResult<T> = Result<T, Box<dyn Error>>;

#[derive(Parser)]
#[command(
    name = "dta",
    version,
    about = "Drug-target binding affinity prediction"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Validate a dataset, split it and write split.tsv.
    Prepare(RunArgs),
    /// Train one or more runs and report test metrics.
    Train {
        #[command(flatten)]
        run: RunArgs,
        /// Independent runs; run r uses seed + r.
        #[arg(long, default_value_t = 1)]
        runs: u64,
        /// Continue training from this checkpoint.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Evaluate a checkpoint on the test pairs of its split.
    Evaluate {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Directory for metrics.tsv.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Predict the affinity of a single pair.
    Infer {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        drug: String,
        #[arg(long)]
        target: String,
    },
    /// Write test-pair embeddings and print cluster separation scores.
    ExportEmbeddings {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Output TSV file.
        #[arg(long)]
        out: PathBuf,
        /// Affinity at or above which a pair counts as strong.
        #[arg(long)]
        threshold: Option<f64>,
    },
    /// Compare backpropagated and finite-difference gradients.
    Gradcheck {
        #[command(flatten)]
        run: RunArgs,
        /// Training pairs in the checked loss.
        #[arg(long, default_value_t = 4)]
        pairs: usize,
        /// Central-difference step.
        #[arg(long, default_value_t = 1e-5)]
        step: f64,
    },
    /// Write a small synthetic dataset with planted low-rank affinities.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 8)]
        drugs: usize,
        #[arg(long, default_value_t = 6)]
        targets: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

#[derive(Args)]
struct DataArgs {
    /// Dataset directory.
    #[arg(long)]
    dataset: PathBuf,
    /// davis, kiba or synthetic.
    #[arg(long, default_value = "davis")]
    kind: DatasetKind,
    /// Synthesize missing contact maps with this density.
    #[arg(long)]
    synthesize_contacts: Option<f64>,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long, default_value = "s1")]
    scenario: Scenario,
    #[arg(long)]
    seed: Option<u64>,
    /// File of `key = value` lines.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Disable one component: gag, lmg, wa or mb.
    #[arg(long)]
    ablation: Option<Ablation>,
    #[arg(long)]
    topk_drug: Option<usize>,
    #[arg(long)]
    topk_target: Option<usize>,
    #[arg(long)]
    dropedge: Option<f64>,
    #[arg(long)]
    simk_drug: Option<usize>,
    #[arg(long)]
    simk_target: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    /// Output directory.
    #[arg(long, default_value = ".")]
    out: PathBuf,
}

impl RunArgs {
    fn config(&self) -> CliResult<TrainConfig> {
        self.config_over(TrainConfig::default())
    }

    /// `--config` (or `base` without one) with the flags applied on top.
    fn config_over(&self, base: TrainConfig) -> CliResult<TrainConfig> {
        let mut c = match &self.config {
            Some(path) => TrainConfig::from_text(&read(path)?)
                .map_err(|e| format!("{}: {e}", path.display()))?,
            None => base,
        };
        c = c.with_ablation(self.ablation);
        if let Some(s) = self.seed {
            c.seed = s;
        }
        if let Some(k) = self.topk_drug {
            c.topk_drug = Some(k);
        }
        if let Some(k) = self.topk_target {
            c.topk_target = Some(k);
        }
        if let Some(p) = self.dropedge {
            c.model.dropedge = p;
        }
        if let Some(k) = self.simk_drug {
            c.simk_drug = k;
        }
        if let Some(k) = self.simk_target {
            c.simk_target = k;
        }
        if let Some(e) = self.epochs {
            c.epochs = e;
        }
        if let Some(d) = self.data.synthesize_contacts {
            c.synthesize_contact_maps = true;
            c.contact_density = d;
        }
        c.validate()?;
        Ok(c)
    }
}

impl DataArgs {
    fn load(&self, density: Option<f64>) -> CliResult<Arc<DatasetBundle>> {
        let density = density.or(self.synthesize_contacts);
        Ok(Arc::new(load_dataset(&self.dataset, self.kind, density)?))
    }
}

fn read(path: &Path) -> CliResult<String> {
    fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()).into())
}

fn write(path: &Path, text: &str) -> CliResult<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| format!("{}: {e}", dir.display()))?;
    }
    fs::write(path, text).map_err(|e| format!("{}: {e}", path.display()).into())
}

fn load_for(config: &TrainConfig, data: &DataArgs) -> CliResult<Arc<DatasetBundle>> {
    data.load(
        config
            .synthesize_contact_maps
            .then_some(config.contact_density),
    )
}

fn split_tsv(bundle: &DatasetBundle, prep: &Preparation) -> String {
    let mut out = String::from("drug\ttarget\trole\n");
    let mut rows: Vec<(Pair, &str)> = Vec::new();
    rows.extend(prep.fit.iter().map(|&p| (p, "train")));
    rows.extend(prep.validation.iter().map(|&p| (p, "validation")));
    rows.extend(prep.split.test.iter().map(|&p| (p, "test")));
    rows.extend(prep.split.excluded.iter().map(|&p| (p, "excluded")));
    rows.sort();
    for ((d, t), role) in rows {
        writeln!(
            out,
            "{}\t{}\t{role}",
            bundle.drug_ids[d], bundle.target_ids[t]
        )
        .expect("writing to a String");
    }
    out
}

fn loss_tsv(history: &[EpochLog]) -> String {
    let mut out = String::from("epoch\ttrain_loss\tval_loss\n");
    for l in history {
        let val = l
            .val_loss
            .map_or_else(|| "NA".to_string(), |v| v.to_string());
        writeln!(out, "{}\t{}\t{val}", l.epoch, l.train_loss).expect("writing to a String");
    }
    out
}

fn test_pairs(bundle: &DatasetBundle, ckpt: &Checkpoint) -> CliResult<Vec<Pair>> {
    let prep = prepare(bundle, &ckpt.config, ckpt.scenario)?;
    if prep.split_digest != ckpt.split_digest {
        return Err("the dataset no longer yields the split the checkpoint was trained on".into());
    }
    Ok(prep.split.test.into_iter().collect())
}

fn checkpoint_session(data: &DataArgs, path: &Path) -> CliResult<(Checkpoint, Arc<DatasetBundle>)> {
    let ckpt = load_checkpoint(path)?;
    let bundle = load_for(&ckpt.config, data)?;
    Ok((ckpt, bundle))
}

fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Prepare(args) => {
            let config = args.config()?;
            let bundle = load_for(&config, &args.data)?;
            let prep = prepare(&bundle, &config, args.scenario)?;
            write(&args.out.join("split.tsv"), &split_tsv(&bundle, &prep))?;
            println!(
                "{} drugs, {} targets, {} labelled pairs",
                bundle.n_drugs(),
                bundle.n_targets(),
                bundle.affinity.len()
            );
            println!(
                "{}: train {} validation {} test {} excluded {} graph {}",
                args.scenario,
                prep.fit.len(),
                prep.validation.len(),
                prep.split.test.len(),
                prep.split.excluded.len(),
                prep.graph_pairs.len()
            );
            println!("split digest {}", prep.split_digest);
        }
        Command::Train { run, runs, resume } => {
            let resume = resume.as_deref().map(load_checkpoint).transpose()?;
            let base = match &resume {
                Some(ckpt) => run.config_over(ckpt.config.clone())?,
                None => run.config()?,
            };
            let bundle = load_for(&base, &run.data)?;
            if resume.is_some() && runs != 1 {
                return Err("--resume continues a single run".into());
            }
            let mut metrics = Vec::new();
            for r in 0..runs.max(1) {
                let mut config = base.clone();
                config.seed = base.seed.wrapping_add(r);
                let dir = if runs > 1 {
                    run.out.join(format!("run{r}"))
                } else {
                    run.out.clone()
                };
                let plan = TrainingPlan {
                    config,
                    scenario: run.scenario,
                    resume: resume.clone(),
                };
                let result = train(bundle.clone(), plan, &mut |l: &EpochLog| {
                    let val = l
                        .val_loss
                        .map_or_else(String::new, |v| format!(" val {v:.6}"));
                    eprintln!("run {r} epoch {} loss {:.6}{val}", l.epoch, l.train_loss);
                })?;
                fs::create_dir_all(&dir).map_err(|e| format!("{}: {e}", dir.display()))?;
                save_checkpoint(
                    &dir.join("checkpoint.json"),
                    &Checkpoint::from_result(&result),
                )?;
                write(&dir.join("loss.tsv"), &loss_tsv(&result.history))?;
                write(
                    &dir.join("split.tsv"),
                    &split_tsv(&bundle, &result.preparation),
                )?;
                let test: Vec<Pair> = result.preparation.split.test.iter().copied().collect();
                let eval = evaluate(&result.session, &test)?;
                let m = eval.metrics;
                println!(
                    "run {r}: epochs {} best {} train mse {:.6} test mse {:.6} ci {:.4} rm2 {:.4} pearson {:.4}",
                    result.epoch, result.best_epoch, result.final_train_mse, m.mse, m.ci, m.rm2, m.pearson
                );
                metrics.push(m);
            }
            write(
                &run.out.join("metrics.tsv"),
                &metrics_tsv(&run.scenario.to_string(), &metrics),
            )?;
        }
        Command::Evaluate {
            data,
            checkpoint,
            out,
        } => {
            let (ckpt, bundle) = checkpoint_session(&data, &checkpoint)?;
            let test = test_pairs(&bundle, &ckpt)?;
            let session = ckpt.session(bundle)?;
            let m = evaluate(&session, &test)?.metrics;
            println!(
                "mse {} ci {} rm2 {} pearson {}",
                m.mse, m.ci, m.rm2, m.pearson
            );
            if let Some(dir) = out {
                write(
                    &dir.join("metrics.tsv"),
                    &metrics_tsv(&ckpt.scenario.to_string(), &[m]),
                )?;
            }
        }
        Command::Infer {
            data,
            checkpoint,
            drug,
            target,
        } => {
            let (ckpt, bundle) = checkpoint_session(&data, &checkpoint)?;
            let session = ckpt.session(bundle)?;
            println!("{}", infer_pair(&session, &drug, &target)?);
        }
        Command::ExportEmbeddings {
            data,
            checkpoint,
            out,
            threshold,
        } => {
            let (ckpt, bundle) = checkpoint_session(&data, &checkpoint)?;
            let test = test_pairs(&bundle, &ckpt)?;
            let threshold = threshold
                .or(ckpt.config.strong_threshold)
                .unwrap_or_else(|| bundle.kind.strong_threshold());
            let session = ckpt.session(bundle)?;
            let rows = export_embeddings(&session, &test, threshold)?;
            write(&out, &embeddings_tsv(&rows))?;
            let strong = rows.iter().filter(|r| r.strong).count();
            println!(
                "{} pairs ({strong} strong) written to {}",
                rows.len(),
                out.display()
            );
            match cluster_scores(&rows) {
                Ok(s) => println!(
                    "SC {} CHI {} DBI {}",
                    s.silhouette, s.calinski_harabasz, s.davies_bouldin
                ),
                Err(e) => println!("cluster scores unavailable: {e}"),
            }
        }
        Command::Gradcheck { run, pairs, step } => {
            let config = run.config()?;
            let bundle = load_for(&config, &run.data)?;
            let check = GradCheckConfig {
                step,
                ..GradCheckConfig::default()
            };
            let report = gradient_check(bundle, &config, run.scenario, pairs, &check)?;
            let worst = report
                .worst
                .as_ref()
                .map_or_else(String::new, |(n, i)| format!(" at {n}[{i}]"));
            println!(
                "{} elements, step {step:e}, max relative error {:.3e}{worst}: {}",
                report.checked,
                report.max_relative_error,
                if report.passed { "ok" } else { "FAILED" }
            );
            if !report.passed {
                return Err("gradient check failed".into());
            }
        }
        Command::Synth {
            out,
            drugs,
            targets,
            seed,
        } => {
            let spec = PlantedSpec {
                n_drugs: drugs,
                n_targets: targets,
                seed,
                ..PlantedSpec::default()
            };
            fs::create_dir_all(&out).map_err(|e| format!("{}: {e}", out.display()))?;
            write_planted_dataset(&out, &spec)?;
            println!(
                "{drugs} drugs, {targets} targets written to {}",
                out.display()
            );
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
