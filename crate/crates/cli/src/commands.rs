use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::Args;
use serde_json::json;
use thiserror::Error;

use micronet::accounting::{check_budget, count_model, Section};
use micronet::arch::{ArchSpec, Network, Summary, Task, Variant};
use micronet::bundle::{load_network, save_network};
use micronet::data::{from_dir, load_image, synthetic_blobs, Dataset};
use micronet::train::{train_toy, write_log, TrainConfig};
use micronet::verify::{self, Suite};

use crate::{ArchArgs, Exclude};

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] micronet::Error),

    #[error("{0}")]
    Usage(String),

    /// A check or property suite ran to completion and did not pass.
    #[error("{0}")]
    Failed(String),
}

impl CliError {
    fn kind(&self) -> &'static str {
        match self {
            CliError::Core(e) => e.kind(),
            CliError::Usage(_) => "usage",
            CliError::Failed(_) => "check_failed",
        }
    }

    fn exit_code(&self) -> u8 {
        match self {
            CliError::Core(_) => 1,
            CliError::Usage(_) => 2,
            CliError::Failed(_) => 3,
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Core(e.into())
    }
}

/// One JSON object on stderr, then the exit code.
pub fn report(e: &CliError) -> ExitCode {
    eprintln!("{}", json!({ "error": e.kind(), "message": e.to_string() }));
    ExitCode::from(e.exit_code())
}

fn warn(kind: &str, message: String) {
    eprintln!("{}", json!({ "warning": kind, "message": message }));
}

pub fn parse_hw(s: &str) -> Result<(usize, usize), String> {
    let (h, w) = s.split_once(['x', 'X']).ok_or_else(|| format!("expected HxW, got `{s}`"))?;
    let h: usize = h.trim().parse().map_err(|_| format!("bad height in `{s}`"))?;
    let w: usize = w.trim().parse().map_err(|_| format!("bad width in `{s}`"))?;
    if h == 0 || w == 0 {
        return Err(format!("resolution must be positive, got `{s}`"));
    }
    Ok((h, w))
}

fn load_spec(a: &ArchArgs) -> Result<ArchSpec, CliError> {
    match (&a.arch, &a.config) {
        (Some(name), None) => Ok(ArchSpec::builtin(name)?),
        (None, Some(path)) => {
            let src = fs::read_to_string(path)?;
            Ok(ArchSpec::from_toml(&src)?)
        }
        _ => Err(CliError::Usage("give an architecture name or --config FILE".into())),
    }
}

/// Writes to stdout; a closed pipe (e.g. `| head`) ends output quietly.
fn emit(text: &str) {
    let mut out = std::io::stdout().lock();
    let _ = out.write_all(text.as_bytes()).and_then(|_| out.flush());
}

fn print_json(v: &serde_json::Value) {
    emit(&format!("{}\n", serde_json::to_string_pretty(v).expect("json value serializes")));
}

pub fn build(a: &ArchArgs, json: bool) -> Result<(), CliError> {
    let spec = load_spec(a)?;
    let s = Summary::new(&spec)?;
    if json {
        print_json(&serde_json::to_value(&s).expect("summary serializes"));
    } else {
        emit(&s.to_table());
    }
    Ok(())
}

pub fn flops(
    a: &ArchArgs,
    input: Option<(usize, usize)>,
    exclude: &[Exclude],
    check: bool,
    full_rank: bool,
    json: bool,
    seed: u64,
) -> Result<(), CliError> {
    let mut spec = load_spec(a)?;
    if let Some((h, w)) = input {
        spec = spec.with_input(h, w);
    }
    let variant = if full_rank { Variant::FullRank } else { Variant::Micro };
    let net: Network<f32> = Network::new(&spec, variant, seed)?;
    let report = count_model(&net, None)?;
    let sections: Vec<Section> = exclude
        .iter()
        .map(|e| match e {
            Exclude::Classifier => Section::Classifier,
            Exclude::Heatmap => Section::Heatmap,
            Exclude::Attention => Section::Attention,
        })
        .collect();
    let shown = report.without(&sections);
    let budget = if check { Some(check_budget(&report)?) } else { None };
    if json {
        let mut v = shown.to_json();
        if let Some(b) = &budget {
            v["check"] = json!({ "passed": b.passed(), "result": b });
        }
        print_json(&v);
    } else {
        let mut text = shown.to_table();
        if let Some(b) = &budget {
            text += &format!(
                "check {}: madds {} vs {:.1}M ({:+.1}%) {}, params {} vs {:.1}M ({:+.1}%) {}\n",
                b.arch,
                b.madds,
                b.target_madds / 1e6,
                100.0 * b.madds_deviation,
                if b.madds_ok { "ok" } else { "OUT" },
                b.params,
                b.target_params / 1e6,
                100.0 * b.params_deviation,
                if b.params_ok { "ok" } else { "OUT" },
            );
        }
        emit(&text);
    }
    match budget {
        Some(b) if !b.passed() => Err(CliError::Failed(format!(
            "{} outside ±20% of its budget (madds {:+.1}%, params {:+.1}%)",
            b.arch,
            100.0 * b.madds_deviation,
            100.0 * b.params_deviation
        ))),
        _ => Ok(()),
    }
}

pub fn verify(suite: &str, json: bool, seed: u64) -> Result<(), CliError> {
    let suite: Suite = suite.parse().map_err(|e: micronet::Error| CliError::Usage(e.to_string()))?;
    let reports = verify::run(suite, seed)?;
    if json {
        let passed = reports.iter().all(|r| r.passed());
        print_json(&json!({ "passed": passed, "suites": reports }));
    } else {
        emit(&reports.iter().map(|r| r.to_string()).collect::<String>());
    }
    let failed: Vec<String> = reports
        .iter()
        .flat_map(|r| r.properties.iter().filter(|p| !p.passed()).map(move |p| format!("{}/{}", r.suite, p.name)))
        .collect();
    if failed.is_empty() {
        Ok(())
    } else {
        Err(CliError::Failed(format!("failing properties: {}", failed.join(", "))))
    }
}

#[derive(Args, Debug, Clone)]
pub struct TrainArgs {
    #[command(flatten)]
    pub arch: ArchArgs,
    /// Train on the built-in colored-blob set.
    #[arg(long, conflicts_with = "data")]
    pub synthetic: bool,
    /// Image directory laid out as DIR/<class>/<image>.
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long, default_value_t = 10)]
    pub classes: usize,
    #[arg(long, default_value_t = 40)]
    pub per_class: usize,
    /// Training resolution as HxW (defaults to the architecture's).
    #[arg(long, value_parser = parse_hw)]
    pub input: Option<(usize, usize)>,
    /// TOML file with training hyperparameters; flags below override it.
    #[arg(long)]
    pub train_config: Option<PathBuf>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub momentum: Option<f64>,
    #[arg(long)]
    pub weight_decay: Option<f64>,
    #[arg(long)]
    pub label_smoothing: Option<f64>,
    /// Co-train a full-rank partner with a KL term.
    #[arg(long)]
    pub mutual: bool,
    #[arg(long)]
    pub beta: Option<f64>,
    #[arg(long)]
    pub temperature: Option<f64>,
    #[arg(long, requires = "mutual")]
    pub symmetric: bool,
    /// Weight bundle to write.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Per-epoch metric log (JSON lines).
    #[arg(long)]
    pub log: Option<PathBuf>,
    #[arg(long)]
    pub json: bool,
}

fn train_config(args: &TrainArgs, seed: u64) -> Result<TrainConfig, CliError> {
    let mut cfg = match &args.train_config {
        Some(p) => toml::from_str::<TrainConfig>(&fs::read_to_string(p)?)
            .map_err(|e| micronet::Error::Parse(format!("{}: {e}", p.display())))?,
        None => TrainConfig::default(),
    };
    macro_rules! set {
        ($($field:ident <- $flag:ident),*) => { $( if let Some(v) = args.$flag { cfg.$field = v; } )* };
    }
    set!(epochs <- epochs, batch_size <- batch_size, lr0 <- lr, momentum <- momentum,
         weight_decay <- weight_decay, label_smoothing <- label_smoothing, beta <- beta, temperature <- temperature);
    cfg.mutual |= args.mutual;
    cfg.symmetric |= args.symmetric;
    cfg.seed = seed;
    cfg.validate()?;
    Ok(cfg)
}

pub fn train(args: &TrainArgs, seed: u64) -> Result<(), CliError> {
    let mut spec = load_spec(&args.arch)?;
    if let Some((h, w)) = args.input {
        spec = spec.with_input(h, w);
    }
    if spec.task() != Task::Classification {
        return Err(micronet::Error::Unsupported(format!("{} is a keypoint model; training covers classifiers", spec.name)).into());
    }
    let cfg = train_config(args, seed)?;
    let (h, w) = spec.validate()?.input;
    let data: Dataset = match (&args.data, args.synthetic) {
        (Some(dir), false) => from_dir(dir, h, w)?,
        (None, true) => synthetic_blobs(args.classes, args.per_class, h, w, seed)?,
        _ => return Err(CliError::Usage("give --synthetic or --data DIR".into())),
    };
    if let Some(c) = spec.classifier.as_mut() {
        c.classes = data.classes;
    }
    let outcome = train_toy(&spec, &data, &cfg)?;
    if let Some(p) = &args.log {
        let mut f = fs::File::create(p)?;
        write_log(&mut f, &outcome.log)?;
        f.flush()?;
    }
    if let Some(p) = &args.out {
        save_network(&outcome.student, p)?;
    }
    if args.json {
        print_json(&serde_json::to_value(&outcome.log).expect("log serializes"));
    } else {
        let mut text = String::new();
        for r in &outcome.log {
            text += &format!(
                "epoch {:>3}  lr {:.5}  loss {:.4}  ce {:.4}  train acc {:.3}  eval acc {:.3}  eval ce {:.4}",
                r.epoch, r.lr, r.loss, r.ce, r.train_accuracy, r.eval_accuracy, r.eval_ce
            );
            if let Some(kl) = r.kl {
                text += &format!("  kl {kl:.5}");
            }
            text.push('\n');
        }
        emit(&text);
    }
    Ok(())
}

pub fn infer(bundle: &Path, image: &Path, top_k: usize, out: Option<&Path>, json: bool) -> Result<(), CliError> {
    let net = load_network(bundle)?;
    let (h, w) = net.plan().input;
    let (x, resized) = load_image(image, h, w)?;
    if resized {
        warn("resized", format!("{} resized to {h}x{w} (nearest neighbor)", image.display()));
    }
    let y = net.predict(&x)?;
    match net.task() {
        Task::Classification => {
            let probs = y.item(0);
            let mut order: Vec<usize> = (0..probs.len()).collect();
            order.sort_by(|&a, &b| probs[b].total_cmp(&probs[a]).then(a.cmp(&b)));
            order.truncate(top_k.max(1));
            if json {
                let top: Vec<_> = order.iter().map(|&i| json!({ "class": i, "probability": probs[i] })).collect();
                print_json(&json!({ "arch": net.spec().name, "top_k": top }));
            } else {
                emit(&order.iter().map(|&i| format!("{i:>5}  {:.6}\n", probs[i])).collect::<String>());
            }
        }
        Task::Keypoints => {
            let s = y.shape();
            let shape = [s.c, s.h, s.w];
            let peaks: Vec<_> = (0..s.c)
                .map(|c| {
                    let plane = y.plane(0, c);
                    let (i, v) = plane.iter().enumerate().fold((0, f32::NEG_INFINITY), |m, (i, &v)| if v > m.1 { (i, v) } else { m });
                    json!({ "keypoint": c, "y": i / s.w, "x": i % s.w, "value": v })
                })
                .collect();
            if let Some(p) = out {
                let doc = json!({ "arch": net.spec().name, "shape": shape, "data": y.item(0) });
                let tmp = tempfile::NamedTempFile::new_in(p.parent().filter(|d| !d.as_os_str().is_empty()).unwrap_or(Path::new(".")))?;
                serde_json::to_writer(std::io::BufWriter::new(tmp.as_file()), &doc).map_err(std::io::Error::from)?;
                tmp.persist(p).map_err(|e| e.error)?;
            }
            if json {
                print_json(&json!({ "arch": net.spec().name, "shape": shape, "peaks": peaks }));
            } else {
                let mut text = format!("heatmaps {}x{}x{}\n", shape[0], shape[1], shape[2]);
                for p in &peaks {
                    text += &format!("  keypoint {:>2} at ({}, {})  {:.4}\n", p["keypoint"], p["y"], p["x"], p["value"].as_f64().unwrap_or(0.0));
                }
                emit(&text);
            }
        }
    }
    Ok(())
}
