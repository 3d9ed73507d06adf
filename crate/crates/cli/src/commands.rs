//! The subcommands, as library functions so they can be driven in-process.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use bvi_core::data::{self, FeatureFormat, LabeledFeatureSet};
use bvi_core::eval::{density_histogram, evaluation_suite, DensityHistogram, EvalBundle, EvalOptions, ExampleScores};
use bvi_core::io::write_atomic;
use bvi_core::model::{build_head, Head, Variant};
use bvi_core::seeding::sub_seed;
use bvi_core::train::{train, TrainReport};
use bvi_core::uncertainty::{mc_predict, report};
use bvi_core::{Error, Result};
use rayon::prelude::*;

use crate::config::ExperimentConfig;

/// Process exit code for an error: 2 configuration or usage, 3 I/O or
/// unreadable data, 4 numeric failure.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_)
        | Error::Generation(_)
        | Error::Dimension { .. }
        | Error::Contract(_)
        | Error::Index { .. } => 2,
        Error::Io { .. } | Error::Parse { .. } | Error::Data(_) | Error::Checkpoint(_) => 3,
        Error::Numeric(_) | Error::Diverged { .. } | Error::State(_) | Error::UndefinedCurve(_) => 4,
    }
}

fn load(path: &Path, format: FeatureFormat) -> Result<LabeledFeatureSet> {
    if !path.exists() {
        return Err(Error::io(
            path,
            std::io::Error::new(std::io::ErrorKind::NotFound, "dataset file not found"),
        ));
    }
    data::load_features(path, format)
}

fn class_summary(set: &LabeledFeatureSet) -> String {
    format!(
        "N={}, F={}, K={}, class counts {:?}",
        set.len(),
        set.num_features(),
        set.num_classes(),
        set.class_counts()
    )
}

#[derive(Debug, Clone)]
pub struct GeneratedFiles {
    pub train: PathBuf,
    pub val: PathBuf,
    pub ood: PathBuf,
}

/// Generates the synthetic splits and writes them under `out` in each of
/// `formats`. Returns the paths written for the first format.
pub fn gen_data(cfg: &ExperimentConfig, out: &Path, formats: &[FeatureFormat]) -> Result<GeneratedFiles> {
    cfg.data.synth.validate()?;
    let d = data::generate(&cfg.data.synth)?;
    let mut first = None;
    for &fmt in formats {
        let path = |stem: &str| out.join(format!("{stem}.{}", fmt.extension()));
        let files = GeneratedFiles {
            train: path("train"),
            val: path("val"),
            ood: path("ood"),
        };
        data::write_features(&d.train, &files.train, fmt)?;
        data::write_features(&d.val, &files.val, fmt)?;
        data::write_features(&d.ood, &files.ood, fmt)?;
        first.get_or_insert(files);
    }
    println!("train: {}", class_summary(&d.train));
    println!("val:   {}", class_summary(&d.val));
    println!("ood:   N={}, F={}", d.ood.len(), d.ood.num_features());
    first.ok_or_else(|| Error::Config("no output format requested".into()))
}

/// Everything one evaluation produces.
#[derive(Debug, Clone)]
pub struct Evaluation {
    pub mc_samples: usize,
    pub examples: Vec<ExampleScores>,
    pub bundle: EvalBundle,
}

impl Evaluation {
    /// Per-example CSV: one row per validation example, then per OOD
    /// example (true label −1).
    pub fn report_csv(&self) -> String {
        let mut s = String::from("example_id,true_label,predicted,confidence,pred_entropy,exp_entropy,bald,is_ood\n");
        for (i, e) in self.examples.iter().enumerate() {
            let r = &e.report;
            let _ = writeln!(
                s,
                "{i},{},{},{:?},{:?},{:?},{:?},{}",
                e.label.map_or(-1, |l| l as i64),
                r.predicted_class,
                r.confidence,
                r.predictive_entropy,
                r.expected_entropy,
                r.bald,
                u8::from(e.is_ood)
            );
        }
        s
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        write_atomic(&dir.join("report.csv"), self.report_csv().as_bytes())?;
        self.bundle.write(dir)?;
        let mut notes = self.bundle.notices.join("\n");
        notes.push('\n');
        write_atomic(&dir.join("notices.txt"), notes.as_bytes())
    }
}

/// Runs `mc_samples` passes (one for a deterministic head) over the
/// validation set and optional OOD set, then the evaluation suite.
pub fn evaluate(
    head: &Head,
    val: &LabeledFeatureSet,
    ood: Option<&LabeledFeatureSet>,
    mc_samples: usize,
    seed: u64,
    bins: usize,
) -> Result<Evaluation> {
    let t = if head.variant().is_stochastic() {
        mc_samples
    } else {
        if mc_samples != 1 {
            eprintln!(
                "warning: the {} head is deterministic; using 1 Monte Carlo sample instead of {mc_samples}",
                head.variant().display_name()
            );
        }
        1
    };
    check_compatible(head, val)?;
    let all = match ood {
        Some(o) => {
            check_compatible(head, o)?;
            val.concat(o)?
        }
        None => val.clone(),
    };
    let pds = mc_predict(head, &all.feature_tensor()?, t, seed)?;
    let examples: Vec<ExampleScores> = pds
        .iter()
        .zip(all.labels())
        .map(|(pd, &l)| ExampleScores {
            mean_probs: pd.mean_probs().to_vec(),
            report: report(pd),
            label: usize::try_from(l).ok(),
            is_ood: l < 0,
        })
        .collect();
    let bundle = evaluation_suite(&examples, &EvalOptions { bins })?;
    Ok(Evaluation {
        mc_samples: t,
        examples,
        bundle,
    })
}

fn check_compatible(head: &Head, set: &LabeledFeatureSet) -> Result<()> {
    if set.num_features() != head.input_dim() {
        return Err(Error::Config(format!(
            "checkpoint expects F={} input features but the data has F={}",
            head.input_dim(),
            set.num_features()
        )));
    }
    if set.num_classes() > head.num_classes() {
        return Err(Error::Config(format!(
            "checkpoint has K={} classes but the data has K={}",
            head.num_classes(),
            set.num_classes()
        )));
    }
    Ok(())
}

fn head_for(cfg: &ExperimentConfig, variant: Variant, set: &LabeledFeatureSet) -> Result<Head> {
    let hc = cfg.head.head_config(set.num_features(), set.num_classes(), variant);
    build_head(&hc, cfg.head.init_seed)
}

fn save_training(dir: &Path, head: &Head, report: &TrainReport) -> Result<()> {
    head.save(&dir.join("checkpoint.json"))?;
    write_atomic(&dir.join("train_report.csv"), report.to_csv().as_bytes())
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub head: Head,
    pub report: TrainReport,
    pub checkpoint: PathBuf,
    pub val_top1: Option<f64>,
}

/// Trains `variant` on the configured training file and writes
/// `checkpoint.json` and `train_report.csv` under `out/<variant>/`.
pub fn cmd_train(cfg: &ExperimentConfig, variant: Variant, out: &Path) -> Result<TrainOutcome> {
    cfg.validate()?;
    let train_set = load(&cfg.data.train_path(), cfg.data.format)?;
    let head = head_for(cfg, variant, &train_set)?;
    let (head, report) = train(&head, &train_set, &cfg.train)?;
    let dir = out.join(variant.as_str());
    save_training(&dir, &head, &report)?;
    let checkpoint = dir.join("checkpoint.json");
    println!(
        "{}: trained {} epochs (seed {}), final train accuracy {:.4}",
        variant.display_name(),
        report.epochs.len(),
        cfg.train.seed,
        report.final_accuracy().unwrap_or(f64::NAN)
    );

    let val_path = cfg.data.val_path();
    let val_top1 = if val_path.exists() {
        let val = load(&val_path, cfg.data.format)?;
        let e = evaluate(&head, &val, None, cfg.inference.mc_samples, cfg.inference.seed, cfg.eval.bins)?;
        let top1 = e.bundle.summary.top1;
        if let Some(a) = top1 {
            println!("validation top-1 {a:.4} ({} MC samples)", e.mc_samples);
        }
        top1
    } else {
        None
    };
    println!("checkpoint written to {}", checkpoint.display());
    Ok(TrainOutcome {
        head,
        report,
        checkpoint,
        val_top1,
    })
}

/// Evaluates a checkpoint on the configured validation (and, if present,
/// OOD) files and writes every artifact under `out`.
pub fn cmd_eval(cfg: &ExperimentConfig, checkpoint: &Path, out: &Path) -> Result<Evaluation> {
    cfg.validate()?;
    let head = Head::load(checkpoint)?;
    let val = load(&cfg.data.val_path(), cfg.data.format)?;
    let ood_path = cfg.data.ood_path();
    let ood = if ood_path.exists() {
        Some(load(&ood_path, cfg.data.format)?)
    } else {
        eprintln!("notice: no OOD file at {}; OOD metrics omitted", ood_path.display());
        None
    };
    let e = evaluate(&head, &val, ood.as_ref(), cfg.inference.mc_samples, cfg.inference.seed, cfg.eval.bins)?;
    e.write(out)?;
    for n in &e.bundle.notices {
        eprintln!("notice: {n}");
    }
    println!("{}", e.bundle.summary_json().trim_end());
    Ok(e)
}

#[derive(Debug, Clone)]
pub struct VariantResult {
    pub variant: Variant,
    pub train_seed: u64,
    pub report: TrainReport,
    pub evaluation: Evaluation,
    pub seconds: f64,
}

#[derive(Debug, Clone)]
pub struct Comparison {
    pub rows: Vec<VariantResult>,
    pub data_files: GeneratedFiles,
}

const TABLE_COLUMNS: [&str; 8] = [
    "top1",
    "top5",
    "pr_auc_micro",
    "pr_auc_correctness",
    "roc_auc_micro",
    "roc_auc_correctness",
    "ood_auroc_entropy",
    "ood_auroc_bald",
];

fn table_values(e: &Evaluation) -> [Option<f64>; 8] {
    let s = &e.bundle.summary;
    [
        s.top1,
        s.top5,
        s.pr_auc_micro,
        s.pr_auc_correctness,
        s.roc_auc_micro,
        s.roc_auc_correctness,
        s.ood_auroc_entropy,
        s.ood_auroc_bald,
    ]
}

impl Comparison {
    pub fn markdown(&self) -> String {
        let mut s = format!("| model | train seed | {} |\n", TABLE_COLUMNS.join(" | "));
        s.push_str(&format!("|---|---|{}\n", "---|".repeat(TABLE_COLUMNS.len())));
        for r in &self.rows {
            let cells: Vec<String> = table_values(&r.evaluation)
                .iter()
                .map(|v| v.map_or("n/a".into(), |x| format!("{x:.4}")))
                .collect();
            s.push_str(&format!(
                "| {} | {} | {} |\n",
                r.variant.display_name(),
                r.train_seed,
                cells.join(" | ")
            ));
        }
        s
    }

    pub fn csv(&self) -> String {
        let mut s = format!("model,variant,train_seed,{}\n", TABLE_COLUMNS.join(","));
        for r in &self.rows {
            let cells: Vec<String> = table_values(&r.evaluation)
                .iter()
                .map(|v| v.map_or(String::new(), |x| format!("{x:?}")))
                .collect();
            s.push_str(&format!(
                "{},{},{},{}\n",
                r.variant.display_name(),
                r.variant.as_str(),
                r.train_seed,
                cells.join(",")
            ));
        }
        s
    }
}

/// Train seed for the `i`-th variant, derived from the configured seed.
pub fn variant_seed(base: u64, i: usize) -> u64 {
    sub_seed(base, i as u64)
}

/// Trains and evaluates all three variants on one shared synthetic
/// dataset. Data is written to `out/data` and read back, so every variant
/// sees exactly the on-disk values.
pub fn compare(cfg: &ExperimentConfig, out: &Path) -> Result<Comparison> {
    cfg.validate()?;
    let fmt = cfg.data.format;
    let files = gen_data(cfg, &out.join("data"), &[fmt])?;
    let train_set = load(&files.train, fmt)?;
    let val = load(&files.val, fmt)?;
    let ood = load(&files.ood, fmt)?;

    let rows = Variant::ALL
        .par_iter()
        .enumerate()
        .map(|(i, &variant)| -> Result<VariantResult> {
            let started = std::time::Instant::now();
            let train_seed = variant_seed(cfg.train.seed, i);
            println!("{}: train seed {train_seed}", variant.display_name());
            let head = head_for(cfg, variant, &train_set)?;
            let tc = bvi_core::TrainConfig {
                seed: train_seed,
                ..cfg.train.clone()
            };
            let (head, report) = train(&head, &train_set, &tc)?;
            let dir = out.join(variant.as_str());
            save_training(&dir, &head, &report)?;
            let evaluation = evaluate(&head, &val, Some(&ood), cfg.inference.mc_samples, cfg.inference.seed, cfg.eval.bins)?;
            evaluation.write(&dir)?;
            Ok(VariantResult {
                variant,
                train_seed,
                report,
                evaluation,
                seconds: started.elapsed().as_secs_f64(),
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let cmp = Comparison {
        rows,
        data_files: files,
    };
    write_atomic(&out.join("comparison.md"), cmp.markdown().as_bytes())?;
    write_atomic(&out.join("comparison.csv"), cmp.csv().as_bytes())?;
    print!("{}", cmp.markdown());
    Ok(cmp)
}

/// Which report rows feed a histogram.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    All,
    True,
    False,
    In,
    Out,
}

impl std::str::FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "all" => Ok(Split::All),
            "true" => Ok(Split::True),
            "false" => Ok(Split::False),
            "in" => Ok(Split::In),
            "out" => Ok(Split::Out),
            _ => Err(Error::Config(format!(
                "unknown split {s:?}; expected all, true, false, in or out"
            ))),
        }
    }
}

pub const HIST_COLUMNS: [&str; 4] = ["confidence", "pred_entropy", "exp_entropy", "bald"];

#[derive(Debug, Clone)]
pub struct HistRequest {
    pub column: String,
    pub split: Split,
    pub bins: usize,
    pub range: Option<(f64, f64)>,
    /// Class count for the default entropy range; inferred from the
    /// report's labels when absent.
    pub classes: Option<usize>,
}

/// Builds a density histogram from one column of a per-example report CSV.
pub fn hist_from_report(report_csv: &Path, req: &HistRequest) -> Result<DensityHistogram> {
    let col = HIST_COLUMNS
        .iter()
        .position(|c| *c == req.column)
        .ok_or_else(|| Error::Config(format!("unknown column {:?}; expected one of {HIST_COLUMNS:?}", req.column)))?;
    let mut reader = csv::Reader::from_path(report_csv).map_err(|e| csv_error(report_csv, e))?;
    let headers = reader.headers().map_err(|e| csv_error(report_csv, e))?.clone();
    let idx = |name: &str| {
        headers.iter().position(|h| h == name).ok_or_else(|| Error::Parse {
            path: report_csv.to_path_buf(),
            position: "line 1".into(),
            message: format!("missing column {name}"),
        })
    };
    let (i_val, i_true, i_pred, i_ood) = (idx(HIST_COLUMNS[col])?, idx("true_label")?, idx("predicted")?, idx("is_ood")?);

    let mut values = Vec::new();
    let mut max_class = 0usize;
    for rec in reader.records() {
        let rec = rec.map_err(|e| csv_error(report_csv, e))?;
        let line = rec.position().map_or(0, |p| p.line());
        let field = |i: usize| -> Result<&str> {
            rec.get(i).ok_or_else(|| Error::Parse {
                path: report_csv.to_path_buf(),
                position: format!("line {line}"),
                message: "short row".into(),
            })
        };
        let parse_err = |what: &str| Error::Parse {
            path: report_csv.to_path_buf(),
            position: format!("line {line}"),
            message: format!("bad {what}"),
        };
        let v: f64 = field(i_val)?.parse().map_err(|_| parse_err(HIST_COLUMNS[col]))?;
        let truth: i64 = field(i_true)?.parse().map_err(|_| parse_err("true_label"))?;
        let pred: usize = field(i_pred)?.parse().map_err(|_| parse_err("predicted"))?;
        let is_ood = field(i_ood)? == "1";
        max_class = max_class.max(pred).max(truth.max(0) as usize);
        let keep = match req.split {
            Split::All => true,
            Split::In => !is_ood,
            Split::Out => is_ood,
            Split::True => !is_ood && truth == pred as i64,
            Split::False => !is_ood && truth != pred as i64,
        };
        if keep {
            values.push(v);
        }
    }
    let (lo, hi) = match req.range {
        Some(r) => r,
        None if col == 0 => (0.0, 1.0),
        None => (0.0, (req.classes.unwrap_or(max_class + 1).max(2) as f64).ln()),
    };
    density_histogram(&values, req.bins, lo, hi)
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    match e.kind() {
        csv::ErrorKind::Io(_) => match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::io(path, io),
            _ => unreachable!(),
        },
        _ => Error::Parse {
            path: path.to_path_buf(),
            position: e.position().map_or("unknown".into(), |p| format!("line {}", p.line())),
            message: e.to_string(),
        },
    }
}
