use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde::{de::DeserializeOwned, Deserialize, Serialize};
use sha2::{Digest, Sha256};

use svip::pipeline::{run_bench, run_trial, train_skill, BenchReport, SafetyMode, TrainSettings, TrainedSkill, TrialRecord};
use svip::planner::desk::{desk_domain, plan_steps, rollout};
use svip::planner::{Plan, SolveConfig};
use svip::scenegraph::{segment, DemoTrace, EventSequence};
use svip::sim::{sample_scenario, scripted_demos, DemoTask, ScenarioName};
use svip::symbolic::serialize_domain;

const SCHEMA_VERSION: u32 = 1;

#[derive(Parser)]
#[command(name = "svip", version, about = "Plan and execute bimanual skills on a simulated desk")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    flags: Flags,
}

#[derive(clap::Args, Clone, Default)]
struct Flags {
    /// JSON run configuration; flags override its fields.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    scenario: Option<ScenarioName>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    trials: Option<usize>,
    /// Planner timeout in seconds.
    #[arg(long, global = true)]
    timeout: Option<f64>,
    /// Directory for artifacts and reports.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, short, global = true)]
    verbose: bool,
}

#[derive(Subcommand, Clone, Copy)]
enum Command {
    /// Script demonstrations of the configured task.
    DemoGen,
    /// Segment demonstrations and write the compiled domain.
    Segment,
    /// Fit generators, validator and policy emulator.
    Train,
    /// Plan for one seeded scenario.
    Plan,
    /// Execute the saved plan in simulation.
    Rollout,
    /// Plan and execute a batch of seeded trials.
    Bench,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct RunConfig {
    task: DemoTask,
    skill: String,
    scenario: ScenarioName,
    seed: u64,
    demos: usize,
    trials: usize,
    safety: SafetyMode,
    solve: SolveConfig,
    train: TrainSettings,
    out: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            task: DemoTask::Insertion,
            skill: "insert".into(),
            scenario: ScenarioName::Id,
            seed: 0,
            demos: 50,
            trials: 50,
            safety: SafetyMode::Validator,
            solve: SolveConfig::default(),
            train: TrainSettings::default(),
            out: PathBuf::from("out"),
        }
    }
}

impl RunConfig {
    fn load(flags: &Flags) -> Result<Self, String> {
        let mut c: RunConfig = match &flags.config {
            Some(p) => read_json(p, "a run configuration")?,
            None => RunConfig::default(),
        };
        if let Some(s) = flags.scenario {
            c.scenario = s;
        }
        if let Some(s) = flags.seed {
            c.seed = s;
        }
        if let Some(n) = flags.trials {
            c.trials = n;
        }
        if let Some(t) = flags.timeout {
            c.solve.timeout = t;
        }
        if let Some(o) = &flags.out {
            c.out = o.clone();
        }
        if c.trials == 0 {
            return Err("trial count must be at least 1".into());
        }
        c.solve.validate().map_err(|e| e.to_string())?;
        Ok(c)
    }

    /// SHA-256 of the configuration without its output directory.
    fn hash(&self) -> String {
        let mut v = serde_json::to_value(self).expect("config serializes");
        if let Some(m) = v.as_object_mut() {
            m.remove("out");
        }
        hex::encode(Sha256::digest(v.to_string().as_bytes()))
    }
}

#[derive(Serialize, Deserialize)]
struct Envelope<T> {
    schema_version: u32,
    config_hash: String,
    seed: u64,
    #[serde(flatten)]
    body: T,
}

#[derive(Serialize, Deserialize)]
struct DemoManifest {
    task: DemoTask,
    files: Vec<String>,
}

#[derive(Serialize, Deserialize)]
struct Segments {
    sequences: Vec<EventSequence>,
    domain_file: String,
}

#[derive(Serialize, Deserialize)]
struct ModelFile {
    skill: TrainedSkill,
}

#[derive(Serialize, Deserialize)]
struct PlanFile {
    scenario: ScenarioName,
    record: TrialRecord,
    plan: Option<Plan>,
}

#[derive(Serialize, Deserialize)]
struct RolloutFile {
    scenario: ScenarioName,
    success: bool,
    failure: Option<String>,
    failed_step: Option<usize>,
    trajectory: Vec<svip::scenegraph::Timestep>,
}

fn read_json<T: DeserializeOwned>(path: &Path, what: &str) -> Result<T, String> {
    let text = fs::read_to_string(path).map_err(|e| format!("cannot read {what} at {}: {e}", path.display()))?;
    serde_json::from_str(&text).map_err(|e| format!("{} is not {what}: {e}", path.display()))
}

/// Reads an artifact, naming the command that produces it when absent.
fn need<T: DeserializeOwned>(path: &Path, producer: &str) -> Result<T, String> {
    if !path.exists() {
        return Err(format!("missing {}; run `svip {producer}` first", path.display()));
    }
    read_json(path, &format!("output of `svip {producer}`"))
}

fn write_json<T: Serialize>(cfg: &RunConfig, name: &str, seed: u64, body: T) -> Result<PathBuf, String> {
    fs::create_dir_all(&cfg.out).map_err(|e| format!("cannot create {}: {e}", cfg.out.display()))?;
    let path = cfg.out.join(name);
    let env = Envelope {
        schema_version: SCHEMA_VERSION,
        config_hash: cfg.hash(),
        seed,
        body,
    };
    let text = serde_json::to_string_pretty(&env).map_err(|e| e.to_string())?;
    fs::write(&path, text + "\n").map_err(|e| format!("cannot write {}: {e}", path.display()))?;
    Ok(path)
}

fn load_demos(cfg: &RunConfig) -> Result<Vec<DemoTrace>, String> {
    let m: Envelope<DemoManifest> = need(&cfg.out.join("demos.json"), "demo-gen")?;
    m.body
        .files
        .iter()
        .map(|f| {
            let p = cfg.out.join(f);
            DemoTrace::load(&p).map_err(|e| format!("{}: {e}; rerun `svip demo-gen`", p.display()))
        })
        .collect()
}

fn load_skill(cfg: &RunConfig) -> Result<TrainedSkill, String> {
    let m: Envelope<ModelFile> = need(&cfg.out.join("model.json"), "train")?;
    Ok(m.body.skill)
}

fn run(cmd: Command, cfg: &RunConfig) -> Result<PathBuf, String> {
    match cmd {
        Command::DemoGen => {
            let demos = scripted_demos(cfg.task, cfg.demos, cfg.seed).map_err(|e| e.to_string())?;
            let dir = cfg.out.join("demos");
            fs::create_dir_all(&dir).map_err(|e| format!("cannot create {}: {e}", dir.display()))?;
            let mut files = Vec::new();
            for (i, d) in demos.iter().enumerate() {
                let name = format!("demos/demo_{i:03}.jsonl");
                d.save(&cfg.out.join(&name)).map_err(|e| e.to_string())?;
                files.push(name);
            }
            write_json(cfg, "demos.json", cfg.seed, DemoManifest { task: cfg.task, files })
        }
        Command::Segment => {
            let demos = load_demos(cfg)?;
            let sequences = demos
                .iter()
                .map(segment)
                .collect::<Result<Vec<_>, _>>()
                .map_err(|e| e.to_string())?;
            let (_, action) = svip::pipeline::compile_skill(&cfg.skill, &demos).map_err(|e| e.to_string())?;
            let domain = desk_domain(&[action]).map_err(|e| e.to_string())?;
            let domain_file = "domain.svd".to_string();
            fs::create_dir_all(&cfg.out).map_err(|e| e.to_string())?;
            fs::write(cfg.out.join(&domain_file), serialize_domain(&domain)).map_err(|e| e.to_string())?;
            write_json(cfg, "segments.json", cfg.seed, Segments { sequences, domain_file })
        }
        Command::Train => {
            let demos = load_demos(cfg)?;
            let skill = train_skill(&cfg.skill, cfg.task, &demos, &cfg.train).map_err(|e| e.to_string())?;
            log::info!("validator: {:?}", skill.validator_report);
            write_json(cfg, "model.json", cfg.seed, ModelFile { skill })
        }
        Command::Plan => {
            let skill = load_skill(cfg)?;
            let sc = sample_scenario(cfg.scenario, cfg.seed).map_err(|e| e.to_string())?;
            let solve = SolveConfig {
                seed: cfg.seed,
                ..cfg.solve.clone()
            };
            let run = run_trial(&skill, &sc, cfg.safety, &solve).map_err(|e| e.to_string())?;
            if let Some(p) = &run.plan {
                for a in &p.actions {
                    log::info!("{a}");
                }
            }
            let file = PlanFile {
                scenario: cfg.scenario,
                record: run.record,
                plan: run.plan,
            };
            write_json(cfg, "plan.json", cfg.seed, file)
        }
        Command::Rollout => {
            let skill = load_skill(cfg)?;
            let p: Envelope<PlanFile> = need(&cfg.out.join("plan.json"), "plan")?;
            let plan = p
                .body
                .plan
                .ok_or("the saved plan file holds no plan; planning failed for that scenario")?;
            let sc = sample_scenario(p.body.scenario, p.seed).map_err(|e| e.to_string())?;
            let steps = plan_steps(&plan)?;
            let out = rollout(&sc.state, &steps, &skill.emulator);
            let file = RolloutFile {
                scenario: p.body.scenario,
                success: out.success,
                failure: out.failure,
                failed_step: out.failed_step,
                trajectory: out.trajectory,
            };
            write_json(cfg, "rollout.json", p.seed, file)
        }
        Command::Bench => {
            let skill = load_skill(cfg)?;
            let seeds: Vec<u64> = (cfg.seed..cfg.seed + cfg.trials as u64).collect();
            let report: BenchReport =
                run_bench(&skill, cfg.scenario, &seeds, cfg.safety, &cfg.solve).map_err(|e| e.to_string())?;
            let a = &report.aggregates;
            println!(
                "{} trials: success {:.1}%, mean length {}, mean time {:.3} s",
                a.trials,
                a.success_rate,
                a.mean_plan_length.map_or("-".into(), |l| format!("{l:.2}")),
                a.mean_compute_seconds
            );
            write_json(cfg, "bench.json", cfg.seed, report)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = if cli.flags.verbose { "info" } else { "warn" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    let result = RunConfig::load(&cli.flags).and_then(|cfg| run(cli.command, &cfg));
    match result {
        Ok(path) => {
            println!("wrote {}", path.display());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
