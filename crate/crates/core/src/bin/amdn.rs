use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use amdn::checkpoint::Checkpoint;
use amdn::config::{Manifest, RunConfig};
use amdn::datasets::{read_csv, write_csv_with_meta};
use amdn::eval::{emit_report, AdvReport, NatReport, ScenarioSet, VariantReport};
use amdn::pipeline;
use amdn::trainer::{InferenceMode, ModelKind, ModelVariant};

#[derive(Parser)]
#[command(
    name = "amdn",
    version,
    about = "Expert data, collision data, training and testing of car-following policies"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the expert demonstration dataset.
    GenExpert(Common),
    /// Gather the collision dataset against a calibrated imitation follower snapshot.
    GenCollisions(Common),
    /// Train one model variant.
    Train(Common),
    /// Naturalistic test of a trained model.
    EvalNat(Common),
    /// Adversarial test of a trained model.
    EvalAdv(Common),
    /// Collect evaluation results into the comparison table.
    Report(Common),
}

#[derive(Args, Clone)]
struct Common {
    /// JSON run configuration; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value = "out")]
    out: PathBuf,
    #[arg(long)]
    model: Option<ModelKind>,
    #[arg(long, default_value = "mean")]
    inference: InferenceMode,
    /// Naturalistic scenario count or adversarial episodes per adversary.
    #[arg(long)]
    episodes: Option<usize>,
    #[arg(long)]
    adversaries: Option<usize>,
    /// Dataset size multiplier.
    #[arg(long)]
    scale: Option<f64>,
}

struct Failure {
    kind: &'static str,
    detail: serde_json::Value,
}

impl Failure {
    fn new(kind: &'static str, message: impl ToString) -> Self {
        Self {
            kind,
            detail: json!({ "message": message.to_string() }),
        }
    }

    fn missing(artifact: &str, path: &Path) -> Self {
        Self {
            kind: "missing-input",
            detail: json!({ "artifact": artifact, "path": path.display().to_string() }),
        }
    }
}

type Res<T> = Result<T, Failure>;

fn io(e: impl ToString) -> Failure {
    Failure::new("io", e)
}

fn load_config(c: &Common) -> Res<RunConfig> {
    let mut cfg = match &c.config {
        Some(p) => RunConfig::load(p).map_err(|e| Failure::new("config", e))?,
        None => RunConfig::default(),
    };
    if let Some(s) = c.seed {
        cfg.seed = s;
    }
    if let Some(s) = c.scale {
        cfg.scale = s;
    }
    if let Some(n) = c.adversaries {
        cfg.adversarial.n_adversaries = n;
    }
    cfg.validate().map_err(|e| Failure::new("config", e))?;
    Ok(cfg)
}

fn require(out: &Path, artifact: &str, file: &str) -> Res<PathBuf> {
    let p = out.join(file);
    if p.exists() {
        Ok(p)
    } else {
        Err(Failure::missing(artifact, &p))
    }
}

fn model(c: &Common) -> Res<ModelKind> {
    c.model
        .ok_or_else(|| Failure::new("usage", "--model {ffn|mdn|amdn-nokl|amdn} is required"))
}

fn load_checkpoint(out: &Path, kind: ModelKind) -> Res<Checkpoint> {
    let p = require(out, kind.tag(), &format!("{}.json", kind.tag()))?;
    Checkpoint::load(&p).map_err(|e| Failure::new("checkpoint", e))
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Res<()> {
    fs::write(
        path,
        serde_json::to_string_pretty(value).expect("serializable") + "\n",
    )
    .map_err(io)
}

fn finish(out: &Path, name: &str, manifest: &Manifest) -> Res<()> {
    manifest
        .save(&out.join(format!("manifest.{name}.json")))
        .map_err(io)
}

fn gen_expert(c: &Common) -> Res<()> {
    let cfg = load_config(c)?;
    fs::create_dir_all(&c.out).map_err(io)?;
    let ds = pipeline::expert_dataset(&cfg);
    write_csv_with_meta(
        &ds,
        &c.out.join("expert.csv"),
        Some(cfg.scale),
        Some(cfg.hash()),
    )
    .map_err(|e| Failure::new("dataset", e))?;
    let mut m = Manifest::new("gen-expert", &cfg);
    m.add_output(&c.out, "expert", "expert.csv").map_err(io)?;
    m.add_output(&c.out, "expert-meta", "expert.csv.meta.json")
        .map_err(io)?;
    finish(&c.out, "gen-expert", &m)
}

fn gen_collisions(c: &Common) -> Res<()> {
    let cfg = load_config(c)?;
    let mut candidates = Vec::new();
    let mut files = Vec::new();
    for step in cfg.follower_steps() {
        let file = follower_file(step);
        let path = require(&c.out, "follower", &file)?;
        candidates.push(Checkpoint::load(&path).map_err(|e| Failure::new("checkpoint", e))?);
        files.push(file);
    }
    let (follower, probes) =
        pipeline::select_follower(&cfg, &candidates).map_err(|e| Failure::new("collisions", e))?;
    log::info!(
        "collection follower: snapshot at step {}",
        follower.metadata.steps
    );
    write_json(&c.out.join("follower.probe.json"), &probes)?;
    let (ds, stats) =
        pipeline::collision_dataset(&cfg, follower).map_err(|e| Failure::new("collisions", e))?;
    write_csv_with_meta(
        &ds,
        &c.out.join("collisions.csv"),
        Some(cfg.scale),
        Some(cfg.hash()),
    )
    .map_err(|e| Failure::new("dataset", e))?;
    write_json(&c.out.join("collisions.stats.json"), &stats)?;
    let mut m = Manifest::new("gen-collisions", &cfg);
    for f in &files {
        m.add_input(&c.out, "follower", f).map_err(io)?;
    }
    m.add_output(&c.out, "follower-probe", "follower.probe.json")
        .map_err(io)?;
    m.add_output(&c.out, "collisions", "collisions.csv")
        .map_err(io)?;
    m.add_output(&c.out, "collision-stats", "collisions.stats.json")
        .map_err(io)?;
    finish(&c.out, "gen-collisions", &m)
}

fn follower_file(step: u64) -> String {
    format!("follower_{step}.json")
}

fn train_cmd(c: &Common) -> Res<()> {
    let cfg = load_config(c)?;
    let kind = model(c)?;
    let expert_path = require(&c.out, "expert", "expert.csv")?;
    let collisions = if kind.needs_collisions() {
        let p = require(&c.out, "collisions", "collisions.csv")?;
        Some(read_csv(&p).map_err(|e| Failure::new("dataset", e))?)
    } else {
        None
    };
    let expert = read_csv(&expert_path).map_err(|e| Failure::new("dataset", e))?;
    let outcome = pipeline::train_model(&cfg, kind, &expert, collisions.as_ref())
        .map_err(|e| Failure::new("train", e))?;
    let tag = kind.tag();
    let ck_file = format!("{tag}.json");
    let log_file = format!("{tag}.train_log.csv");
    outcome
        .checkpoint
        .save(&c.out.join(&ck_file))
        .map_err(|e| Failure::new("checkpoint", e))?;
    outcome.log.save(&c.out.join(&log_file)).map_err(io)?;
    let mut m = Manifest::new("train", &cfg);
    m.args.insert("model".into(), tag.into());
    m.add_input(&c.out, "expert", "expert.csv").map_err(io)?;
    if collisions.is_some() {
        m.add_input(&c.out, "collisions", "collisions.csv")
            .map_err(io)?;
    }
    m.add_output(&c.out, tag, &ck_file).map_err(io)?;
    m.add_output(&c.out, "train-log", &log_file).map_err(io)?;
    for snap in &outcome.snapshots {
        let file = follower_file(snap.metadata.steps);
        snap.save(&c.out.join(&file))
            .map_err(|e| Failure::new("checkpoint", e))?;
        m.add_output(&c.out, "follower", &file).map_err(io)?;
    }
    finish(&c.out, &format!("train.{tag}"), &m)
}

fn scenarios(c: &Common, cfg: &mut RunConfig) -> Res<ScenarioSet> {
    if let Some(n) = c.episodes {
        cfg.scenarios.count = n;
    }
    let path = c.out.join("scenarios.json");
    let set = pipeline::scenario_set(cfg);
    if path.exists() {
        let existing = ScenarioSet::load(&path).map_err(|e| Failure::new("scenarios", e))?;
        if existing == set {
            return Ok(existing);
        }
    }
    set.save(&path).map_err(io)?;
    Ok(set)
}

fn eval_nat(c: &Common) -> Res<()> {
    let mut cfg = load_config(c)?;
    let kind = model(c)?;
    let ck = load_checkpoint(&c.out, kind)?;
    let set = scenarios(c, &mut cfg)?;
    let variant = ModelVariant::new(kind, c.inference);
    let (report, _) = pipeline::naturalistic(&cfg, &set, &ck, c.inference, false)
        .map_err(|e| Failure::new("eval", e))?;
    let file = format!("nat_{}.json", variant.tag());
    write_json(&c.out.join(&file), &report)?;
    let mut m = Manifest::new("eval-nat", &cfg);
    m.args.insert("model".into(), kind.tag().into());
    m.args.insert("inference".into(), c.inference.to_string());
    m.add_input(&c.out, kind.tag(), &format!("{}.json", kind.tag()))
        .map_err(io)?;
    m.add_input(&c.out, "scenarios", "scenarios.json")
        .map_err(io)?;
    m.add_output(&c.out, "naturalistic", &file).map_err(io)?;
    finish(&c.out, &format!("eval-nat.{}", variant.tag()), &m)
}

fn eval_adv(c: &Common) -> Res<()> {
    let mut cfg = load_config(c)?;
    if let Some(n) = c.episodes {
        cfg.adversarial.max_episodes = n;
    }
    let kind = model(c)?;
    let ck = load_checkpoint(&c.out, kind)?;
    let variant = ModelVariant::new(kind, c.inference);
    let report =
        pipeline::adversarial(&cfg, &ck, c.inference).map_err(|e| Failure::new("eval", e))?;
    let file = format!("adv_{}.json", variant.tag());
    write_json(&c.out.join(&file), &report)?;
    let mut m = Manifest::new("eval-adv", &cfg);
    m.args.insert("model".into(), kind.tag().into());
    m.args.insert("inference".into(), c.inference.to_string());
    m.add_input(&c.out, kind.tag(), &format!("{}.json", kind.tag()))
        .map_err(io)?;
    m.add_output(&c.out, "adversarial", &file).map_err(io)?;
    finish(&c.out, &format!("eval-adv.{}", variant.tag()), &m)
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Res<Option<T>> {
    if !path.exists() {
        return Ok(None);
    }
    let text = fs::read_to_string(path).map_err(io)?;
    serde_json::from_str(&text).map(Some).map_err(|e| {
        Failure::new(
            "parse",
            format!("{}: line {}: {e}", path.display(), e.line()),
        )
    })
}

fn report(c: &Common) -> Res<()> {
    let cfg = load_config(c)?;
    let mut reports = Vec::new();
    let mut m = Manifest::new("report", &cfg);
    for v in ModelVariant::report_set() {
        let tag = v.tag();
        let nat_file = format!("nat_{tag}.json");
        let adv_file = format!("adv_{tag}.json");
        let nat: Option<NatReport> = read_json(&c.out.join(&nat_file))?;
        let adv: Option<AdvReport> = read_json(&c.out.join(&adv_file))?;
        if nat.is_some() {
            m.add_input(&c.out, &format!("naturalistic-{tag}"), &nat_file)
                .map_err(io)?;
        }
        if adv.is_some() {
            m.add_input(&c.out, &format!("adversarial-{tag}"), &adv_file)
                .map_err(io)?;
        }
        reports.push(VariantReport {
            variant: tag,
            naturalistic: nat,
            adversarial: adv,
        });
    }
    if reports
        .iter()
        .all(|r| r.naturalistic.is_none() && r.adversarial.is_none())
    {
        return Err(Failure::missing(
            "evaluation results",
            &c.out.join("nat_<variant>.json"),
        ));
    }
    let dir = c.out.join("report");
    let written = emit_report(&reports, &dir, &cfg.hash(), cfg.seed).map_err(io)?;
    for p in written {
        let rel = p
            .strip_prefix(&c.out)
            .expect("inside out dir")
            .display()
            .to_string();
        m.add_output(&c.out, &rel, &rel).map_err(io)?;
    }
    finish(&c.out, "report", &m)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::GenExpert(c) => gen_expert(c),
        Command::GenCollisions(c) => gen_collisions(c),
        Command::Train(c) => train_cmd(c),
        Command::EvalNat(c) => eval_nat(c),
        Command::EvalAdv(c) => eval_adv(c),
        Command::Report(c) => report(c),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            let mut line = json!({ "error": f.kind });
            if let (Some(obj), serde_json::Value::Object(extra)) = (line.as_object_mut(), f.detail)
            {
                obj.extend(extra);
            }
            eprintln!("{line}");
            ExitCode::from(2)
        }
    }
}
