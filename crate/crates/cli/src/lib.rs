//! `cirkit` command-line pipeline: synth, ingest, annotate, filter, train,
//! eval and report.

pub mod config;

use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use cirkit_core::annotate::{
    annotate_triplets, filter_annotations, mock_judges, GeneratorClient, HttpGenerator, HttpJudge,
    JudgeClient, MockGenerator,
};
use cirkit_core::dataset::{
    generate_synthetic_world, load_annotations, load_nli_pairs, load_triplets, split_holdout,
    write_annotations, write_nli_pairs, write_triplets, SynthConfig,
};
use cirkit_core::eval::evaluate_model;
use cirkit_core::metrics::display;
use cirkit_core::model::ParamSet;
use cirkit_core::retrieval::write_ranked;
use cirkit_core::store::{load_embeddings, save_embeddings};
use cirkit_core::trainer::{
    build_examples, load_checkpoint, save_checkpoint, train_stage1, train_stage2, write_loss_log,
};
use cirkit_core::{AnnotationMode, EvalReport, Triplet};
use clap::{Parser, Subcommand};

pub use config::RunConfig;

#[derive(Debug, Parser)]
#[command(name = "cirkit", version, about = "Composed image retrieval pipeline")]
pub struct Cli {
    /// JSON run config. Defaults to ./config.json when present.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Print the resolved config and exit.
    #[arg(long, global = true)]
    pub print_config: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic world and a matching config.json into a directory.
    Synth {
        #[arg(long)]
        out: PathBuf,
    },
    /// Validate embeddings, triplets and text pairs.
    Ingest,
    /// Generate and judge annotations for the training triplets.
    Annotate {
        /// Use the deterministic mock generator and judges.
        #[arg(long)]
        mock: bool,
    },
    /// Apply the judge consensus rule.
    Filter,
    Train {
        #[arg(long, value_parser = clap::value_parser!(u8).range(1..=2))]
        stage: u8,
        #[arg(long)]
        annotation_mode: Option<AnnotationMode>,
        /// Stage 2 only: start from a fresh initialization.
        #[arg(long)]
        from_scratch: bool,
    },
    Eval {
        #[arg(long, value_delimiter = ',')]
        k_list: Option<Vec<usize>>,
        #[arg(long, value_delimiter = ',')]
        map_k_list: Option<Vec<usize>>,
    },
    /// Print a saved evaluation report.
    Report,
}

/// Loads the config and applies flag overrides.
pub fn resolve_config(cli: &Cli) -> Result<RunConfig> {
    let mut c = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None if Path::new(config::CONFIG_FILE).exists() => {
            RunConfig::load(Path::new(config::CONFIG_FILE))?
        }
        None => RunConfig::default(),
    };
    if let Some(s) = cli.seed {
        c.seed = s;
    }
    match &cli.command {
        Command::Train { annotation_mode: Some(m), .. } => c.annotation_mode = *m,
        Command::Eval { k_list, map_k_list } => {
            if let Some(k) = k_list {
                c.k_list = k.clone();
            }
            if let Some(k) = map_k_list {
                c.map_k_list = k.clone();
            }
        }
        _ => {}
    }
    c.validate()?;
    Ok(c)
}

pub fn run(cli: Cli) -> Result<()> {
    let c = resolve_config(&cli)?;
    if cli.print_config {
        println!("{}", c.to_json()?);
        return Ok(());
    }
    match cli.command {
        Command::Synth { out } => cmd_synth(&c, &out),
        Command::Ingest => cmd_ingest(&c),
        Command::Annotate { mock } => cmd_annotate(&c, mock),
        Command::Filter => cmd_filter(&c),
        Command::Train {
            stage, from_scratch, ..
        } => cmd_train(&c, stage, from_scratch),
        Command::Eval { .. } => cmd_eval(&c),
        Command::Report => cmd_report(&c),
    }
}

fn require(path: &Path, what: &str) -> Result<()> {
    if !path.exists() {
        bail!("{what} not found: {}", path.display());
    }
    Ok(())
}

fn cmd_synth(c: &RunConfig, out: &Path) -> Result<()> {
    let w = &c.world;
    let synth = SynthConfig {
        seed: c.seed,
        n_items: w.items,
        n_attrs: w.attributes,
        vocab: c.model.vocab,
        image_dims: c.model.image_dims,
        noise: w.noise,
        subset_size: w.subset_size,
        max_flips: w.max_flips,
        ..SynthConfig::default()
    };
    let world = generate_synthetic_world(&synth)?;
    let (train, test) = split_holdout(&world.triplets, w.holdout, c.seed)?;
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;

    // written paths are relative so the directory can be moved
    let mut fresh = RunConfig {
        seed: c.seed,
        model: c.model,
        annotation_mode: c.annotation_mode,
        stage1: c.stage1,
        stage2: c.stage2,
        annotation: c.annotation.clone(),
        world: c.world.clone(),
        k_list: c.k_list.clone(),
        map_k_list: c.map_k_list.clone(),
        ..RunConfig::default()
    };
    fresh.save(&out.join(config::CONFIG_FILE))?;
    fresh.rebase(out);
    let manifest_dir = fresh.embeddings.parent().unwrap_or(out);
    save_embeddings(&world.embeddings, manifest_dir)?;
    write_triplets(&fresh.train_triplets, &train)?;
    write_triplets(&fresh.test_triplets, &test)?;
    write_nli_pairs(&fresh.nli_pairs, &world.nli_pairs)?;
    println!(
        "wrote {} items, {} train / {} test triplets, {} text pairs to {}",
        world.embeddings.count(),
        train.len(),
        test.len(),
        world.nli_pairs.len(),
        out.display()
    );
    Ok(())
}

fn check_refs(triplets: &[Triplet], known: &HashSet<&str>, file: &Path) -> Result<()> {
    for t in triplets {
        if let Some(id) = t.referenced_ids().find(|id| !known.contains(id)) {
            bail!(
                "{}: triplet {} references unknown id {id:?}",
                file.display(),
                t.pair_id
            );
        }
    }
    Ok(())
}

fn cmd_ingest(c: &RunConfig) -> Result<()> {
    require(&c.embeddings, "embedding manifest")?;
    let m = load_embeddings(&c.embeddings)?;
    let known: HashSet<&str> = m.ids().iter().map(String::as_str).collect();
    println!("embeddings: {} items x {} dims", m.count(), m.dims());
    for (path, name) in [(&c.train_triplets, "train"), (&c.test_triplets, "test")] {
        require(path, "triplet file")?;
        let ts = load_triplets(path)?;
        check_refs(&ts, &known, path)?;
        println!("{name} triplets: {}", ts.len());
    }
    if c.nli_pairs.exists() {
        println!("text pairs: {}", load_nli_pairs(&c.nli_pairs)?.len());
    }
    Ok(())
}

fn cmd_annotate(c: &RunConfig, mock: bool) -> Result<()> {
    require(&c.train_triplets, "triplet file")?;
    let triplets = load_triplets(&c.train_triplets)?;
    let run = if mock {
        let judges = mock_judges(c.annotation.mock_judges, c.seed);
        let refs: Vec<&dyn JudgeClient> = judges.iter().map(|j| j as &dyn JudgeClient).collect();
        annotate_triplets(&triplets, &MockGenerator { seed: c.seed }, &refs)?
    } else {
        let url = c
            .annotation
            .generator_url
            .clone()
            .ok_or_else(|| anyhow!("no generator_url configured (or pass --mock)"))?;
        if c.annotation.judge_urls.is_empty() {
            bail!("no judge_urls configured (or pass --mock)");
        }
        let policy = c.annotation.http;
        let generator: Box<dyn GeneratorClient> = Box::new(HttpGenerator { url, policy });
        let judges: Vec<HttpJudge> = c
            .annotation
            .judge_urls
            .iter()
            .map(|u| HttpJudge {
                url: u.clone(),
                policy,
            })
            .collect();
        let refs: Vec<&dyn JudgeClient> = judges.iter().map(|j| j as &dyn JudgeClient).collect();
        annotate_triplets(&triplets, generator.as_ref(), &refs)?
    };
    write_annotations(&c.annotations, &run.annotations)?;
    for (id, reason) in &run.unparseable {
        eprintln!("unparseable output for {id}: {reason}");
    }
    println!(
        "annotated {} of {} triplets ({} unparseable) -> {}",
        run.annotations.len(),
        triplets.len(),
        run.unparseable.len(),
        c.annotations.display()
    );
    Ok(())
}

fn cmd_filter(c: &RunConfig) -> Result<()> {
    require(&c.annotations, "annotation file")?;
    let records = load_annotations(&c.annotations)?
        .into_iter()
        .map(|a| {
            let s = a.judge_scores.clone();
            (a, s)
        })
        .collect::<Vec<_>>();
    let total = records.len();
    let (accepted, rejected) =
        filter_annotations(records, c.annotation.mean_threshold, c.annotation.max_range)?;
    write_annotations(&c.accepted, &accepted)?;
    write_annotations(&c.rejected, &rejected)?;
    let rate = if total == 0 {
        0.0
    } else {
        100.0 * accepted.len() as f64 / total as f64
    };
    println!(
        "accepted {} / rejected {} of {total} (acceptance rate {}%)",
        accepted.len(),
        rejected.len(),
        display(rate)
    );
    Ok(())
}

fn load_params(path: &Path, c: &RunConfig) -> Result<ParamSet> {
    let (p, _) = load_checkpoint(path)?;
    if p.dims != c.model {
        bail!(
            "checkpoint {} has dims {:?}, config has {:?}",
            path.display(),
            p.dims,
            c.model
        );
    }
    Ok(p)
}

fn cmd_train(c: &RunConfig, stage: u8, from_scratch: bool) -> Result<()> {
    let tc = c.train_config(stage)?;
    let (out, ckpt, log_path) = if stage == 1 {
        require(&c.nli_pairs, "text pair file")?;
        let pairs = load_nli_pairs(&c.nli_pairs)?;
        let init = ParamSet::init(c.model, c.seed)?;
        let out = train_stage1(&pairs, init, &tc)?;
        println!("stage 1: {} text pairs", pairs.len());
        (out, &c.stage1_checkpoint, &c.stage1_loss_log)
    } else {
        let init = if from_scratch {
            ParamSet::init(c.model, c.seed)?
        } else {
            if !c.stage1_checkpoint.exists() {
                bail!(
                    "stage-1 checkpoint not found: {} (train stage 1 first or pass --from-scratch)",
                    c.stage1_checkpoint.display()
                );
            }
            load_params(&c.stage1_checkpoint, c)?
        };
        require(&c.embeddings, "embedding manifest")?;
        require(&c.train_triplets, "triplet file")?;
        require(&c.accepted, "accepted annotation file")?;
        let m = load_embeddings(&c.embeddings)?;
        let triplets = load_triplets(&c.train_triplets)?;
        let annotations = load_annotations(&c.accepted)?;
        let examples = build_examples(&m, &triplets, &annotations, tc.annotation_mode, c.model.vocab)?;
        let tokens: usize = examples
            .iter()
            .filter_map(|e| e.supervision.as_ref())
            .map(|s| s.len())
            .sum();
        println!(
            "stage 2: {} examples, {} supervision tokens ({} mode)",
            examples.len(),
            tokens,
            match tc.annotation_mode {
                AnnotationMode::Full => "full",
                AnnotationMode::Fast => "fast",
            }
        );
        (train_stage2(&examples, init, &tc)?, &c.checkpoint, &c.stage2_loss_log)
    };
    save_checkpoint(&out.params, c.seed, ckpt)?;
    write_loss_log(log_path, &out.log)?;
    if let Some(last) = out.epoch_means().last() {
        println!("final epoch mean loss {last:.4}");
    }
    println!("checkpoint -> {}", ckpt.display());
    Ok(())
}

fn cmd_eval(c: &RunConfig) -> Result<()> {
    require(&c.checkpoint, "checkpoint")?;
    require(&c.embeddings, "embedding manifest")?;
    require(&c.test_triplets, "triplet file")?;
    let (p, _) = load_checkpoint(&c.checkpoint)?;
    let gallery = load_embeddings(&c.embeddings)?;
    let triplets = load_triplets(&c.test_triplets)?;
    let run = evaluate_model(&p, &gallery, &triplets, &c.k_list, &c.map_k_list)?;
    let json = serde_json::to_string_pretty(&run.report)?;
    fs::write(&c.report, json + "\n").with_context(|| format!("writing {}", c.report.display()))?;
    write_ranked(&c.ranked, &run.ranked)?;
    print!("{}", format_report(&run.report));
    Ok(())
}

fn cmd_report(c: &RunConfig) -> Result<()> {
    require(&c.report, "report")?;
    let text = fs::read_to_string(&c.report)?;
    let report: EvalReport =
        serde_json::from_str(&text).with_context(|| format!("parsing {}", c.report.display()))?;
    print!("{}", format_report(&report));
    Ok(())
}

/// Two-decimal table of a report.
pub fn format_report(r: &EvalReport) -> String {
    let mut s = format!("{:<14}{}\n", "queries", r.query_count);
    let mut row = |name: String, v: f64| s.push_str(&format!("{name:<14}{}\n", display(v)));
    for (k, v) in &r.recall {
        row(format!("R@{k}"), *v);
    }
    for (k, v) in &r.subset_recall {
        row(format!("R_subset@{k}"), *v);
    }
    for (k, v) in &r.map {
        row(format!("mAP@{k}"), *v);
    }
    if let Some(a) = r.cirr_average {
        row("avg".into(), a);
    }
    s
}
