//! Command-line surface and command implementations.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use dceeg_autodiff::Real;
use dceeg_core::clip::HeadNames;
use dceeg_core::curves::{read_ndjson, write_ndjson};
use dceeg_core::distill::checkpoint_kind;
use dceeg_core::{
    ecam, load_clip, load_student, predict, save_clip, save_student, ConformerConfig, CoreError,
    CurvePoint, EegEncoder, KlDirection, Predictions, Samples,
};
use dceeg_metrics::{
    compute_metrics, write_channel_scores_csv, write_confusion_csv, write_report_csv, write_roc_csv,
};
use dceeg_signal::{generate, load_dir, preprocess, save_recording, EpochDataset};
use serde_json::json;
use sha2::{Digest, Sha256};

use crate::config::RunConfigFile;
use crate::error::{file_error, CliError, Result};
use crate::pipeline::{
    ablation_grid, clip_spec, cross_validate_models, fit_student, fit_teacher, ModelAccount,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, serde::Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    F32,
    F64,
}

#[derive(Debug, Parser)]
#[command(
    name = "dceeg",
    version,
    about = "Prompted EEG/text teacher training, distillation and evaluation"
)]
pub struct Cli {
    /// TOML run configuration.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides the config's seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[arg(long, global = true, default_value = "out")]
    pub out_dir: PathBuf,
    #[arg(long, global = true, value_enum, default_value_t = Precision::F64)]
    pub precision: Precision,
    /// Worker threads; computation currently runs on one.
    #[arg(long, global = true, default_value_t = 1)]
    pub threads: usize,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write synthetic recordings and annotation CSVs to <out-dir>/raw.
    Synth,
    /// Filter, resample, segment, balance and z-score a directory of recordings.
    Preprocess {
        #[arg(long)]
        raw: PathBuf,
    },
    /// Train the teacher on an epoch dataset.
    Train {
        #[arg(long)]
        data: PathBuf,
    },
    /// Distill a trained teacher into the student.
    Distill {
        #[arg(long)]
        teacher: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        alpha: Option<f64>,
        #[arg(long)]
        temperature: Option<f64>,
        #[arg(long, value_enum)]
        kl_direction: Option<KlArg>,
    },
    /// Score a checkpoint on a dataset, or cross-validate teacher and student with --cv.
    Eval {
        #[arg(long, required_unless_present = "cv")]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        cv: bool,
    },
    /// Per-electrode attribution maps.
    Ecam {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
    },
    /// Parameter/FLOP tables; with --data also the six-variant prompt ablation grid.
    Report {
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        ablation_epochs: Option<usize>,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum KlArg {
    TeacherRef,
    StudentRef,
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Synth => "synth",
            Command::Preprocess { .. } => "preprocess",
            Command::Train { .. } => "train",
            Command::Distill { .. } => "distill",
            Command::Eval { .. } => "eval",
            Command::Ecam { .. } => "ecam",
            Command::Report { .. } => "report",
        }
    }
}

struct Ctx {
    cfg: RunConfigFile,
    out: PathBuf,
}

impl Ctx {
    fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    fn create(&self, name: &str) -> Result<BufWriter<File>> {
        let p = self.path(name);
        Ok(BufWriter::new(File::create(&p).map_err(file_error(&p))?))
    }
}

pub fn run(cli: Cli) -> Result<()> {
    if cli.threads == 0 {
        return Err(CliError::Usage("--threads must be at least 1".into()));
    }
    let mut cfg = match &cli.config {
        Some(p) => RunConfigFile::load(p)?,
        None => RunConfigFile::default(),
    }
    .resolve(cli.seed)?;
    if let Command::Distill {
        alpha,
        temperature,
        kl_direction,
        ..
    } = &cli.command
    {
        cfg.distill.alpha = alpha.unwrap_or(cfg.distill.alpha);
        cfg.distill.temperature = temperature.unwrap_or(cfg.distill.temperature);
        if let Some(k) = kl_direction {
            cfg.distill.kl_direction = match k {
                KlArg::TeacherRef => KlDirection::TeacherRef,
                KlArg::StudentRef => KlDirection::StudentRef,
            };
        }
        cfg.validate()?;
    }
    std::fs::create_dir_all(&cli.out_dir).map_err(file_error(&cli.out_dir))?;
    let ctx = Ctx {
        cfg,
        out: cli.out_dir.clone(),
    };
    std::fs::write(ctx.path("resolved_config.toml"), ctx.cfg.to_toml())?;
    let invocation = json!({
        "command": cli.command.name(),
        "precision": cli.precision,
        "threads": cli.threads,
        "seed": ctx.cfg.seed,
    });
    std::fs::write(ctx.path("invocation.json"), format!("{invocation}\n"))?;
    match cli.precision {
        Precision::F32 => dispatch::<f32>(&ctx, &cli.command),
        Precision::F64 => dispatch::<f64>(&ctx, &cli.command),
    }
}

fn dispatch<T: Real>(ctx: &Ctx, cmd: &Command) -> Result<()> {
    match cmd {
        Command::Synth => cmd_synth(ctx),
        Command::Preprocess { raw } => cmd_preprocess(ctx, raw),
        Command::Train { data } => cmd_train::<T>(ctx, data),
        Command::Distill { teacher, data, .. } => cmd_distill::<T>(ctx, teacher, data),
        Command::Eval {
            checkpoint: _,
            data,
            cv: true,
        } => cmd_cv::<T>(ctx, data),
        Command::Eval {
            checkpoint: Some(ck),
            data,
            cv: false,
        } => cmd_eval::<T>(ctx, ck, data),
        Command::Eval {
            checkpoint: None, ..
        } => Err(CliError::Usage("eval needs --checkpoint or --cv".into())),
        Command::Ecam { checkpoint, data } => cmd_ecam::<T>(ctx, checkpoint, data),
        Command::Report {
            data,
            ablation_epochs,
        } => cmd_report::<T>(ctx, data.as_deref(), *ablation_epochs),
    }
}

fn sha256_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(file_error(path))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

fn load_dataset(path: &Path) -> Result<EpochDataset> {
    if !path.exists() {
        return Err(CliError::Usage(format!(
            "dataset {} does not exist",
            path.display()
        )));
    }
    Ok(EpochDataset::load(path)?)
}

fn cmd_synth(ctx: &Ctx) -> Result<()> {
    let recs = generate(&ctx.cfg.synth)?;
    let dir = ctx.path("raw");
    std::fs::create_dir_all(&dir).map_err(file_error(&dir))?;
    for r in &recs {
        save_recording(&dir, &r.id, r)?;
    }
    println!("wrote {} recordings to {}", recs.len(), dir.display());
    Ok(())
}

fn cmd_preprocess(ctx: &Ctx, raw: &Path) -> Result<()> {
    if !raw.is_dir() {
        return Err(CliError::Usage(format!(
            "{} is not a directory",
            raw.display()
        )));
    }
    let recs = load_dir(raw)?;
    let (ds, report) = preprocess(&recs, &ctx.cfg.preprocess, ctx.cfg.seed)?;
    let path = ctx.path("dataset.epochs");
    ds.save(&path)?;
    let mut inputs = Vec::new();
    let mut files: Vec<PathBuf> = std::fs::read_dir(raw)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .collect();
    files.sort();
    for f in files.iter().filter(|p| p.is_file()) {
        inputs.push(json!({ "file": f.file_name().map(|n| n.to_string_lossy().into_owned()), "sha256": sha256_file(f)? }));
    }
    let counts: serde_json::Map<String, serde_json::Value> = ds
        .classes
        .iter()
        .cloned()
        .zip(ds.class_counts().into_iter().map(serde_json::Value::from))
        .collect();
    let manifest = json!({
        "inputs": inputs,
        "seed": ctx.cfg.seed,
        "preprocess": ctx.cfg.preprocess,
        "recordings": report.recordings,
        "windows": report.windows,
        "rejected_clipped": report.rejected_clipped,
        "rejected_flatline": report.rejected_flatline,
        "too_short": report.too_short,
        "class_counts": counts,
        "dataset_sha256": sha256_file(&path)?,
    });
    std::fs::write(
        ctx.path("provenance.json"),
        serde_json::to_string_pretty(&manifest)? + "\n",
    )?;
    println!(
        "{} epochs ({}) -> {}",
        ds.len(),
        describe_counts(&ds),
        path.display()
    );
    Ok(())
}

fn describe_counts(ds: &EpochDataset) -> String {
    ds.classes
        .iter()
        .zip(ds.class_counts())
        .map(|(c, n)| format!("{c}={n}"))
        .collect::<Vec<_>>()
        .join(", ")
}

fn write_curve(ctx: &Ctx, name: &str, curve: &[CurvePoint]) -> Result<()> {
    let mut w = ctx.create(name)?;
    write_ndjson(&mut w, curve)?;
    w.flush()?;
    Ok(())
}

fn progress(p: &CurvePoint) {
    eprintln!(
        "epoch {:>4}  loss {:.5}  accuracy {:.4}",
        p.epoch, p.loss, p.accuracy
    );
}

fn cmd_train<T: Real>(ctx: &Ctx, data: &Path) -> Result<()> {
    let ds = load_dataset(data)?;
    let spec = clip_spec(&ctx.cfg, &ds, &ctx.cfg.text, &ctx.cfg.teacher)?;
    let samples: Samples<T> = Samples::from_dataset(&ds)?;
    let (model, store, summary) = fit_teacher(&ctx.cfg, spec, &samples, progress)?;
    save_clip(&ctx.path("teacher.ckpt"), &model, &store)?;
    write_curve(ctx, "teacher_curve.ndjson", &summary.curve)?;
    let mut v = ctx.create("vocab.txt")?;
    model.vocab.write(&mut v)?;
    v.flush()?;
    println!(
        "teacher: {} epochs, final loss {:.5}, epochs to {:.0}% train accuracy: {}",
        summary.epochs_run,
        summary.final_loss,
        ctx.cfg.train.target_accuracy * 100.0,
        summary
            .epochs_to_target
            .map_or("not reached".into(), |e| e.to_string())
    );
    Ok(())
}

fn cmd_distill<T: Real>(ctx: &Ctx, teacher_path: &Path, data: &Path) -> Result<()> {
    let ds = load_dataset(data)?;
    let (teacher, tstore) = load_clip::<T>(teacher_path)?;
    check_classes(&teacher.spec.classes, &ds)?;
    let samples: Samples<T> = Samples::from_dataset(&ds)?;
    let (student, store, summary) = fit_student(&ctx.cfg, &teacher, &tstore, &samples, progress)?;
    save_student(&ctx.path("student.ckpt"), &student, &store)?;
    write_curve(ctx, "student_curve.ndjson", &summary.curve)?;

    let teacher_curve = teacher_path.with_file_name("teacher_curve.ndjson");
    let teacher_to_target = std::fs::read_to_string(&teacher_curve)
        .ok()
        .and_then(|t| read_ndjson(&t).ok())
        .and_then(|c| dceeg_core::curves::epochs_to_threshold(&c, ctx.cfg.distill.target_accuracy));
    let rows = [
        (
            "teacher",
            ModelAccount::of("teacher", &teacher.spec.eeg, 1),
            teacher_to_target,
        ),
        (
            "student",
            ModelAccount::of("student", &student.spec.eeg, 1),
            summary.epochs_to_target,
        ),
    ];
    let mut w = ctx.create("distill_report.csv")?;
    writeln!(w, "model,params,flops,epochs_to_threshold")?;
    for (name, acc, epochs) in &rows {
        let e = epochs.map_or(String::new(), |e| e.to_string());
        writeln!(w, "{name},{},{},{e}", acc.params.total(), acc.total_flops())?;
    }
    w.flush()?;
    println!(
        "student: {} epochs, final loss {:.5}, {} tensors updated, params {} vs teacher {}",
        summary.epochs_run,
        summary.final_loss,
        summary.update_set.len(),
        rows[1].1.params.total(),
        rows[0].1.params.total()
    );
    Ok(())
}

fn check_classes(model_classes: &[String], ds: &EpochDataset) -> Result<()> {
    if model_classes != ds.classes.as_slice() {
        return Err(CoreError::Mismatch(format!(
            "checkpoint classes {model_classes:?} differ from dataset classes {:?}",
            ds.classes
        ))
        .into());
    }
    Ok(())
}

enum Loaded<T: Real> {
    Teacher(dceeg_core::ClipModel, dceeg_autodiff::ParamStore<T>),
    Student(dceeg_core::StudentModel, dceeg_autodiff::ParamStore<T>),
}

impl<T: Real> Loaded<T> {
    fn open(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(CliError::Usage(format!(
                "checkpoint {} does not exist",
                path.display()
            )));
        }
        match checkpoint_kind(path)?.as_str() {
            "clip" => load_clip(path)
                .map(|(m, s)| Loaded::Teacher(m, s))
                .map_err(Into::into),
            "student" => load_student(path)
                .map(|(m, s)| Loaded::Student(m, s))
                .map_err(Into::into),
            k => Err(CoreError::Mismatch(format!("unknown checkpoint kind '{k}'")).into()),
        }
    }

    fn classes(&self) -> &[String] {
        match self {
            Loaded::Teacher(m, _) => &m.spec.classes,
            Loaded::Student(m, _) => &m.spec.classes,
        }
    }

    fn predict(&self, data: &Samples<T>, batch: usize) -> Result<Predictions> {
        Ok(match self {
            Loaded::Teacher(m, s) => predict(m, s, data, batch)?,
            Loaded::Student(m, s) => m.predict(s, data, batch)?,
        })
    }

    fn encoder(&self) -> (&EegEncoder, HeadNames, &dceeg_autodiff::ParamStore<T>) {
        match self {
            Loaded::Teacher(m, s) => (&m.eeg, HeadNames::under(dceeg_core::clip::CLIP), s),
            Loaded::Student(m, s) => (&m.eeg, m.heads(), s),
        }
    }
}

fn cmd_eval<T: Real>(ctx: &Ctx, ck: &Path, data: &Path) -> Result<()> {
    let ds = load_dataset(data)?;
    let model = Loaded::<T>::open(ck)?;
    check_classes(model.classes(), &ds)?;
    let samples: Samples<T> = Samples::from_dataset(&ds)?;
    let preds = model.predict(&samples, ctx.cfg.eval.batch_size)?;
    let report = compute_metrics(&samples.labels, &preds.probs)?;
    write_report_csv(ctx.create("metrics.csv")?, &report, &ds.classes)?;
    write_confusion_csv(ctx.create("confusion.csv")?, &report, &ds.classes)?;
    write_roc_csv(
        ctx.create("roc.csv")?,
        &samples.labels,
        &preds.probs,
        &ds.classes,
    )?;
    if let Loaded::Teacher(..) = model {
        let zs = compute_metrics(&samples.labels, &preds.zero_shot)?;
        write_report_csv(ctx.create("zero_shot_metrics.csv")?, &zs, &ds.classes)?;
    }
    for w in &report.warnings {
        eprintln!("warning: {w}");
    }
    println!(
        "accuracy {:.4}, macro F1 {:.4}, macro AUC {}",
        report.micro_rates.acc,
        report.macro_rates.f1,
        report.macro_auc.map_or("n/a".into(), |a| format!("{a:.4}"))
    );
    Ok(())
}

fn cmd_cv<T: Real>(ctx: &Ctx, data: &Path) -> Result<()> {
    let ds = load_dataset(data)?;
    let out = cross_validate_models::<T>(&ctx.cfg, &ds, |l| eprintln!("{l}"))?;
    let mut w = ctx.create("cv_folds.csv")?;
    writeln!(w, "fold,model,train_size,test_size,train_accuracy,test_accuracy,macro_f1,macro_auc,epochs_run,epochs_to_threshold")?;
    for f in &out.folds {
        for (name, m) in [("teacher", &f.teacher), ("student", &f.student)] {
            writeln!(
                w,
                "{},{name},{},{},{:.6},{:.6},{:.6},{},{},{}",
                f.fold,
                f.train_size,
                f.test_size,
                m.train_accuracy,
                m.test.micro_rates.acc,
                m.test.macro_rates.f1,
                m.test
                    .macro_auc
                    .map_or(String::new(), |a| format!("{a:.6}")),
                m.epochs_run,
                m.epochs_to_target.map_or(String::new(), |e| e.to_string())
            )?;
        }
    }
    w.flush()?;
    let mut w = ctx.create("cv_summary.csv")?;
    writeln!(w, "model,accuracy_mean,accuracy_std")?;
    for (name, a) in [
        ("teacher", out.teacher_accuracy),
        ("student", out.student_accuracy),
    ] {
        writeln!(w, "{name},{:.6},{:.6}", a.mean, a.std)?;
    }
    w.flush()?;
    println!(
        "{}-fold test accuracy: teacher {:.4} ± {:.4}, student {:.4} ± {:.4}",
        out.folds.len(),
        out.teacher_accuracy.mean,
        out.teacher_accuracy.std,
        out.student_accuracy.mean,
        out.student_accuracy.std
    );
    Ok(())
}

fn cmd_ecam<T: Real>(ctx: &Ctx, ck: &Path, data: &Path) -> Result<()> {
    let ds = load_dataset(data)?;
    let model = Loaded::<T>::open(ck)?;
    check_classes(model.classes(), &ds)?;
    let samples: Samples<T> = Samples::from_dataset(&ds)?;
    let (enc, heads, store) = model.encoder();
    let maps = ecam(
        enc,
        &heads,
        store,
        &samples,
        ctx.cfg.eval.ecam_method,
        ctx.cfg.eval.batch_size,
    )?;
    let scores: Vec<Vec<f64>> = maps.iter().map(|m| m.scores.clone()).collect();
    write_channel_scores_csv(ctx.create("channel_scores.csv")?, &ds.channels, &scores)?;
    let mut w = ctx.create("channel_summary.csv")?;
    writeln!(w, "class,channel,mean_score,epochs")?;
    for (k, class) in ds.classes.iter().enumerate() {
        let rows: Vec<&Vec<f64>> = scores
            .iter()
            .zip(&samples.labels)
            .filter(|(_, &l)| l == k)
            .map(|(s, _)| s)
            .collect();
        for (c, ch) in ds.channels.iter().enumerate() {
            let mean = rows.iter().map(|r| r[c]).sum::<f64>() / rows.len().max(1) as f64;
            writeln!(w, "{class},{ch},{mean:.6},{}", rows.len())?;
        }
    }
    w.flush()?;
    let warned = maps.iter().filter(|m| m.warning.is_some()).count();
    if warned > 0 {
        eprintln!("warning: {warned} epochs had constant attribution and got a uniform map");
    }
    println!("wrote maps for {} epochs", maps.len());
    Ok(())
}

fn write_accounts(ctx: &Ctx, accounts: &[ModelAccount]) -> Result<()> {
    let mut w = ctx.create("params.csv")?;
    writeln!(w, "model,front_end,blocks,final_norm,head,projection,total")?;
    for a in accounts {
        let p = &a.params;
        writeln!(
            w,
            "{},{},{},{},{},{},{}",
            a.name,
            p.front_end,
            p.block_total(),
            p.final_norm,
            p.head,
            p.projection,
            p.total()
        )?;
    }
    w.flush()?;
    let mut w = ctx.create("flops.csv")?;
    writeln!(w, "model,layer,dense,attention,ffn,total,cumulative")?;
    for a in accounts {
        for l in &a.flops {
            writeln!(
                w,
                "{},{},{},{},{},{},{}",
                a.name,
                l.name,
                l.dense,
                l.attention,
                l.ffn,
                l.total(),
                l.cumulative
            )?;
        }
    }
    w.flush()?;
    Ok(())
}

fn cmd_report<T: Real>(
    ctx: &Ctx,
    data: Option<&Path>,
    ablation_epochs: Option<usize>,
) -> Result<()> {
    let mut teacher_cfg: ConformerConfig = ctx.cfg.teacher.clone();
    let mut student_cfg = ctx.cfg.student();
    if let Some(p) = data {
        let ds = load_dataset(p)?;
        for c in [&mut teacher_cfg, &mut student_cfg] {
            c.electrodes = ds.channels.len();
            c.window_samples = ds.window_samples;
        }
    }
    let accounts = [
        ModelAccount::of("paper_teacher", &ConformerConfig::paper_teacher(), 1),
        ModelAccount::of("paper_student", &ConformerConfig::paper_student(), 1),
        ModelAccount::of("teacher", &teacher_cfg, 1),
        ModelAccount::of("student", &student_cfg, 1),
    ];
    write_accounts(ctx, &accounts)?;
    for pair in accounts.chunks(2) {
        let (t, s) = (&pair[0], &pair[1]);
        println!(
            "{} vs {}: parameter ratio {:.4} ({} / {}), FLOP ratio {:.4}",
            s.name,
            t.name,
            s.params.total() as f64 / t.params.total() as f64,
            s.params.total(),
            t.params.total(),
            s.total_flops() as f64 / t.total_flops() as f64
        );
    }
    let Some(p) = data else { return Ok(()) };
    let ds = load_dataset(p)?;
    let epochs = ablation_epochs.unwrap_or(ctx.cfg.eval.ablation_epochs);
    if epochs == 0 {
        return Err(CliError::Usage("ablation epochs must be positive".into()));
    }
    let rows = ablation_grid::<T>(&ctx.cfg, &ds, epochs, |l| eprintln!("{l}"))?;
    let mut w = ctx.create("ablation.csv")?;
    writeln!(w, "variant,eeg_prompts,text_prompt_mode,trainable_params,prompt_params,train_loss,train_accuracy,test_accuracy,manifest_sha256")?;
    for r in &rows {
        writeln!(
            w,
            "{},{},{},{},{},{:.6},{:.6},{:.6},{}",
            r.variant.label(),
            r.eeg_prompts,
            r.text_prompt_mode.name(),
            r.trainable_params,
            r.prompt_params,
            r.train_loss,
            r.train_accuracy,
            r.test_accuracy,
            r.manifest_hash
        )?;
    }
    w.flush()?;
    println!(
        "ablation grid: {} variants, {epochs} epochs each",
        rows.len()
    );
    Ok(())
}
