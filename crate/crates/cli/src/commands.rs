use std::fs;
use std::path::{Path, PathBuf};

use clap::Args;
use serde_json::{json, Value};

use kdgan::checkpoint::{Checkpoint, Manifest};
use kdgan::config::ExperimentConfig;
use kdgan::distill::{self, EpochView, GanPair, ObserverResult, Role, TrainConfig, TrainHistory, TrainedPair};
use kdgan::eval;
use kdgan::experiment::{self, DataBundle};
use kdgan::{ArchSpec, CostReport};

use crate::failure::{self, Failure};
use crate::Common;

type Result<T> = std::result::Result<T, Failure>;

/// Output directory that refuses to replace files unless asked to.
struct Outputs {
    dir: PathBuf,
    overwrite: bool,
}

impl Outputs {
    fn new(common: &Common, cfg: &ExperimentConfig) -> Result<Self> {
        let dir = common
            .out
            .clone()
            .or_else(|| cfg.output_dir.clone())
            .ok_or_else(|| Failure::new(failure::CONFIG, "output_dir: not set (pass --out or set it in the config)"))?;
        Ok(Self { dir, overwrite: common.overwrite })
    }

    /// Fails early if any of `paths` (relative to the output directory) exists.
    fn check_free(&self, paths: &[&str]) -> Result<()> {
        if self.overwrite {
            return Ok(());
        }
        for p in paths {
            let full = self.dir.join(p);
            if full.exists() {
                return Err(Failure::new(failure::IO, format!("{} already exists (pass --overwrite to replace it)", full.display())));
            }
        }
        Ok(())
    }

    fn write(&self, rel: impl AsRef<Path>, contents: &str) -> Result<()> {
        let path = self.dir.join(rel);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(|e| Failure::io(parent, e))?;
        }
        fs::write(&path, contents).map_err(|e| Failure::io(&path, e))
    }

    fn save(&self, rel: impl AsRef<Path>, ck: &Checkpoint) -> Result<PathBuf> {
        let dir = self.dir.join(rel);
        ck.save(&dir, self.overwrite)?;
        Ok(dir)
    }
}

fn load_config(common: &Common) -> Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::load(&common.config)?;
    if let Some(seed) = common.seed {
        cfg = cfg.with_seed(seed);
    }
    Ok(cfg)
}

fn source(cfg: &ExperimentConfig) -> String {
    format!("{}/class-{}", cfg.data.kind.name(), cfg.data.normal_class)
}

fn manifest(cfg: &ExperimentConfig, role: Role, pair: &GanPair<f32>, train: &TrainConfig, history: &TrainHistory, structure: Option<&str>) -> Manifest {
    let mut m = Manifest::new(role, pair.spec, train.seed, train.epochs, source(cfg));
    m.structure = structure.map(str::to_string);
    m.losses = history.epoch_losses.iter().rev().find(|e| e.role == role).map(|e| e.mean);
    m.auc = history.final_auc(role);
    m
}

fn cost_json(spec: &ArchSpec) -> Value {
    let c = CostReport::of(spec);
    json!({ "params": c.param_count, "flops": c.flop_count })
}

fn write_logs(out: &Outputs, prefix: &str, history: &TrainHistory) -> Result<()> {
    out.write(Path::new(prefix).join("losses.csv"), &history.losses_csv())?;
    out.write(Path::new(prefix).join("auc_curve.csv"), &history.auc_csv())
}

fn write_report(out: &Outputs, prefix: &str, report: &Value, rows: &[(Role, Option<f64>, &ArchSpec)]) -> Result<()> {
    out.write(Path::new(prefix).join("report.json"), &(serde_json::to_string_pretty(report).expect("json") + "\n"))?;
    let mut csv = String::from("role,auc,params,flops\n");
    for (role, auc, spec) in rows {
        let c = CostReport::of(spec);
        let auc = auc.map(|a| a.to_string()).unwrap_or_default();
        csv += &format!("{role},{auc},{},{}\n", c.param_count, c.flop_count);
    }
    out.write(Path::new(prefix).join("report.csv"), &csv)
}

/// Observer writing `<dir>/epoch_<n>` every `every` epochs (never the last; that is `final`).
fn periodic<'a>(cfg: &'a ExperimentConfig, out: &'a Outputs, prefix: &'a str, train: &'a TrainConfig, structure: Option<&'a str>) -> impl FnMut(&EpochView<'_>) -> ObserverResult + 'a {
    move |view: &EpochView<'_>| {
        let every = train.checkpoint_every;
        if every == 0 || view.epoch % every != 0 || view.epoch == train.epochs {
            return Ok(());
        }
        let save = |role: Role, pair: &GanPair<f32>, name: &str| -> ObserverResult {
            let mut m = manifest(cfg, role, pair, train, view.history, structure);
            m.epoch = view.epoch;
            Checkpoint::from_pair(m, pair).save(&out.dir.join(prefix).join(name).join(format!("epoch_{}", view.epoch)), out.overwrite)?;
            Ok(())
        };
        match view.student {
            None => save(Role::Teacher, view.teacher, "")?,
            Some(student) => {
                save(Role::Student, student, "student")?;
                save(Role::Teacher, view.teacher, "teacher")?;
            }
        }
        Ok(())
    }
}

pub fn train_teacher(common: &Common) -> Result<()> {
    let cfg = load_config(common)?;
    let out = Outputs::new(common, &cfg)?;
    out.check_free(&["teacher/final/manifest.json", "teacher/losses.csv", "teacher/report.json"])?;
    let split = experiment::load_split(&cfg)?;
    log::info!("training teacher on {} ({} images)", source(&cfg), split.train.len());
    let train = cfg.teacher_train;
    let mut observer = periodic(&cfg, &out, "teacher", &train, None);
    let run = distill::train_teacher_observed(&split, &cfg.teacher_spec(), &train, &cfg.objectives(), &mut observer)?;
    let m = manifest(&cfg, Role::Teacher, &run.pair, &train, &run.history, None);
    let dir = out.save("teacher/final", &Checkpoint::from_pair(m, &run.pair))?;
    write_logs(&out, "teacher", &run.history)?;
    let auc = run.history.final_auc(Role::Teacher);
    let report = json!({
        "command": "train-teacher",
        "source": source(&cfg),
        "seed": train.seed,
        "epochs": train.epochs,
        "checkpoint": dir,
        "auc": { "teacher": auc },
        "cost": { "teacher": cost_json(&run.pair.spec) },
        "checksum": { "teacher": run.pair.checksum() },
    });
    write_report(&out, "teacher", &report, &[(Role::Teacher, auc, &run.pair.spec)])?;
    println!("teacher AUC {}", auc.map_or("n/a".into(), |a| format!("{a:.4}")));
    println!("checkpoint {}", dir.display());
    Ok(())
}

/// Loads the configured teacher checkpoint; every failure is an incompatibility.
fn load_teacher(cfg: &ExperimentConfig) -> Result<(GanPair<f32>, PathBuf)> {
    let path = cfg
        .teacher_checkpoint
        .clone()
        .ok_or_else(|| Failure::new(failure::INCOMPATIBLE, "teacher_checkpoint: not set in the config"))?;
    let ck = Checkpoint::load(&path).map_err(|e| Failure::teacher_checkpoint(&path, e))?;
    distill::check_compatible(&ck.manifest.arch, &cfg.student_spec())?;
    Ok((GanPair::from_networks(ck.gen, ck.disc, cfg.student_train.adam()), path))
}

fn save_pair_outputs(out: &Outputs, cfg: &ExperimentConfig, prefix: &str, run: &TrainedPair, train: &TrainConfig, origin: Option<&Path>) -> Result<Value> {
    let mut dirs = Vec::new();
    for (role, pair) in [(Role::Student, &run.student), (Role::Teacher, &run.teacher)] {
        let mut m = manifest(cfg, role, pair, train, &run.history, Some(&run.structure));
        if let Some(origin) = origin {
            m.source = origin.join(role.to_string()).join("final").display().to_string();
        }
        dirs.push(out.save(format!("{prefix}/{role}/final"), &Checkpoint::from_pair(m, pair))?);
    }
    write_logs(out, prefix, &run.history)?;
    let (s_auc, t_auc) = (run.history.final_auc(Role::Student), run.history.final_auc(Role::Teacher));
    let report = json!({
        "structure": run.structure,
        "source": source(cfg),
        "seed": train.seed,
        "epochs": train.epochs,
        "checkpoints": { "student": dirs[0], "teacher": dirs[1] },
        "auc": { "student": s_auc, "teacher": t_auc },
        "cost": { "student": cost_json(&run.student.spec), "teacher": cost_json(&run.teacher.spec) },
        "checksum": { "student": run.student.checksum(), "teacher": run.teacher.checksum() },
    });
    write_report(out, prefix, &report, &[(Role::Student, s_auc, &run.student.spec), (Role::Teacher, t_auc, &run.teacher.spec)])?;
    println!("{} student AUC {}", run.structure, s_auc.map_or("n/a".into(), |a| format!("{a:.4}")));
    Ok(report)
}

pub fn distill(common: &Common, structure: Option<u32>) -> Result<()> {
    let mut cfg = load_config(common)?;
    if structure.is_some() {
        cfg.structure = structure;
    }
    let structure = cfg.structure()?;
    let out = Outputs::new(common, &cfg)?;
    out.check_free(&["distill/student/final/manifest.json", "distill/teacher/final/manifest.json", "distill/report.json"])?;
    let (teacher, _) = load_teacher(&cfg)?;
    let split = experiment::load_split(&cfg)?;
    let train = cfg.student_train;
    let name = structure.name();
    let mut observer = periodic(&cfg, &out, "distill", &train, Some(&name));
    let run = distill::run_kdgan_observed(structure, teacher, &cfg.student_spec(), &split, &train, &cfg.objectives(), &mut observer)?;
    save_pair_outputs(&out, &cfg, "distill", &run, &train, None)?;
    Ok(())
}

pub fn progressive(common: &Common, variant: Option<u32>) -> Result<()> {
    let mut cfg = load_config(common)?;
    if variant.is_some() {
        cfg.variant = variant;
    }
    let variant = cfg.variant()?;
    let out = Outputs::new(common, &cfg)?;
    out.check_free(&["step1/student/final/manifest.json", "step2/student/final/manifest.json", "step1/report.json", "step2/report.json"])?;
    let (teacher, _) = load_teacher(&cfg)?;
    let split = experiment::load_split(&cfg)?;
    let objectives = cfg.objectives();

    let (train1, train2) = (cfg.student_train, cfg.step2_train);
    let step1_name = distill::Structure::Two.name();
    let mut observer = periodic(&cfg, &out, "step1", &train1, Some(&step1_name));
    let step1 = distill::run_kdgan_observed(distill::Structure::Two, teacher, &cfg.student_spec(), &split, &train1, &objectives, &mut observer)?;
    save_pair_outputs(&out, &cfg, "step1", &step1, &train1, None)?;

    let mut observer = periodic(&cfg, &out, "step2", &train2, Some(variant.name()));
    let step2 = distill::continue_progressive(variant, &step1, &split, &train2, &objectives, &mut observer)?;
    save_pair_outputs(&out, &cfg, "step2", &step2, &train2, Some(&out.dir.join("step1")))?;
    Ok(())
}

pub fn eval(common: &Common, checkpoint: &Path) -> Result<()> {
    let cfg = load_config(common)?;
    let out = Outputs::new(common, &cfg)?;
    out.check_free(&["report.json", "report.csv"])?;
    let ck = Checkpoint::load(checkpoint)?;
    let split = experiment::load_split(&cfg)?;
    let ev = eval::evaluate_model(&ck.gen, &split).map_err(distill::DistillError::from)?;
    let report = json!({
        "command": "eval",
        "checkpoint": checkpoint,
        "role": ck.manifest.role,
        "source": source(&cfg),
        "auc": ev.auc,
        "scores": { "normal": ev.normal, "novel": ev.novel },
        "cost": cost_json(&ck.manifest.arch),
    });
    write_report(&out, "", &report, &[(ck.manifest.role, Some(ev.auc), &ck.manifest.arch)])?;
    println!("AUC {:.6}", ev.auc);
    Ok(())
}

#[derive(Args)]
pub struct CountArgs {
    /// Count the teacher and student of this config.
    #[arg(long, conflicts_with = "channels")]
    config: Option<PathBuf>,
    /// Student widths, e.g. 8,16,64.
    #[arg(long, value_delimiter = ',')]
    channels: Option<Vec<usize>>,
    #[arg(long, default_value_t = 3)]
    input_channels: usize,
    #[arg(long, default_value_t = kdgan::model::DEFAULT_LATENT_DIM)]
    latent: usize,
}

fn human(n: u64) -> String {
    format!("{:.2}M", n as f64 / 1e6)
}

fn count_line(name: &str, spec: &ArchSpec) -> String {
    let c = CostReport::of(spec);
    format!("{name:<24} params {:>10} ({:>7})  flops {:>10} ({:>7})", c.param_count, human(c.param_count), c.flop_count, human(c.flop_count))
}

fn ratio_line(name: &str, student: &ArchSpec, teacher: &ArchSpec) -> String {
    let (p, f) = CostReport::of(teacher).ratio_over(&CostReport::of(student));
    format!("{name:<24} teacher/student params {p:.2}x  flops {f:.2}x")
}

pub fn count(args: &CountArgs) -> Result<()> {
    let mut pairs: Vec<(String, ArchSpec, ArchSpec)> = Vec::new();
    if let Some(path) = &args.config {
        let text = fs::read_to_string(path).map_err(|e| Failure::new(failure::CONFIG, format!("{}: {e}", path.display())))?;
        let cfg = ExperimentConfig::from_toml_str(&text)?;
        pairs.push((format!("{} student", cfg.data.kind.name()), cfg.student_spec(), cfg.teacher_spec()));
    } else if let Some(ch) = &args.channels {
        if ch.len() != 3 {
            return Err(Failure::new(failure::CONFIG, format!("--channels: expected three widths, got {}", ch.len())));
        }
        let student = ArchSpec::new(args.input_channels, [ch[0], ch[1], ch[2]], args.latent);
        student.validate().map_err(|e| Failure::new(failure::CONFIG, e))?;
        let teacher = ArchSpec { latent_dim: args.latent, ..ArchSpec::teacher(args.input_channels) };
        pairs.push((format!("student {ch:?}"), student, teacher));
    } else {
        for (name, s) in [("cifar10 student", ArchSpec::student_cifar10()), ("mnist student", ArchSpec::student_mnist()), ("fmnist student", ArchSpec::student_fmnist())] {
            pairs.push((name.into(), s, ArchSpec::teacher(s.input_channels)));
        }
    }
    let mut last_teacher = None;
    for (name, student, teacher) in &pairs {
        if last_teacher != Some(*teacher) {
            println!("{}", count_line(&format!("teacher ({}ch)", teacher.input_channels), teacher));
            last_teacher = Some(*teacher);
        }
        println!("{}", count_line(name, student));
        println!("{}", ratio_line(name, student, teacher));
    }
    Ok(())
}

pub fn suite(common: &Common) -> Result<()> {
    let cfg = load_config(common)?;
    let out = Outputs::new(common, &cfg)?;
    out.check_free(&["report.csv", "report.json"])?;
    let bundle = DataBundle::load(&cfg)?;
    let report = experiment::run_suite(&cfg, &bundle);
    out.write("report.csv", &report.to_csv())?;
    out.write("report.json", &(serde_json::to_string_pretty(&report).expect("json") + "\n"))?;
    for row in &report.rows {
        for (repeat, msg) in &row.failures {
            log::warn!("class {} repeat {repeat} failed: {msg}", row.class);
        }
    }
    print!("{}", report.to_csv());
    Ok(())
}

