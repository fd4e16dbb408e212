//! Glue from scripted demonstrations to trained skill components.

use std::collections::BTreeMap;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::generator::{
    train_config_generator, train_traj_generator, Config, GeneratorError, HyperParams, NoiseSchedule, SkillGenerators,
    Symmetry, TrainReport, WAYPOINTS,
};
use crate::geometry::{Footprint, PointCloud, Pose};
use crate::planner::desk::{
    declare_kinds, desk_domain, desk_streams, oracle_clearance, plan_steps, rollout, skill_problem, DeskContext,
    RolloutOutcome, Safety, Step, PLANNER_MARGIN,
};
use crate::planner::{solve, Plan, PlannerError, SolveConfig};
use crate::scenegraph::{extract_grasp, graph_of_state, segment, DemoTrace, EdgeLabel, SceneGraphError};
use crate::sim::{
    exec_primitive, sample_scenario, skill_window, synth_cloud, CloudOptions, DemoTask, PolicyEmulator, Scenario,
    ScenarioName, SimError,
    SkillTemplate, WorldState, LEFT, RIGHT,
};
use crate::symbolic::{compile_bioperation, ActionSchema, SkillSchema, SymbolicError};
use crate::validator::{
    build_collision_dataset, train_validator, PlacementGrid, ValidatorError, ValidatorModel, ValidatorParams,
    ValidatorReport,
};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("demonstration {demo}: {object} is never grasped")]
    NeverGrasped { demo: usize, object: String },
    #[error("demonstration {demo}: no point cloud of {object} in the first step")]
    MissingCloud { demo: usize, object: String },
    #[error("demonstration {0} has no contact-rich span")]
    NoSkill(usize),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Symbolic(#[from] SymbolicError),
    #[error(transparent)]
    SceneGraph(#[from] SceneGraphError),
    #[error(transparent)]
    Generator(#[from] GeneratorError),
    #[error(transparent)]
    Validator(#[from] ValidatorError),
    #[error(transparent)]
    Planner(#[from] PlannerError),
    #[error("scenario has no `{0}` for this skill")]
    MissingObject(String),
}

/// Training data for the generators of one skill.
#[derive(Debug, Clone, Default)]
pub struct SkillExamples {
    /// `(q_pre, q_eff)` per demonstration.
    pub configs: Vec<(Config, Config)>,
    /// Initial cloud and world-frame approach trajectory per held object.
    pub trajectories: BTreeMap<String, Vec<(PointCloud, Vec<Pose>)>>,
    pub footprints: BTreeMap<String, Footprint>,
}

/// Picks `n` poses spread evenly over `poses`, keeping both ends.
pub fn resample(poses: &[Pose], n: usize) -> Vec<Pose> {
    match poses.len() {
        0 => Vec::new(),
        1 => vec![poses[0]; n],
        m => (0..n)
            .map(|i| poses[((i * (m - 1)) as f64 / (n - 1).max(1) as f64).round() as usize])
            .collect(),
    }
}

fn config_at(trace: &DemoTrace, i: usize) -> Config {
    let g = &trace.steps[i].grippers;
    [g[LEFT].pose, g[RIGHT].pose]
}

fn first_grasp(trace: &DemoTrace, arm: &str, object: &str) -> Result<Option<usize>, SceneGraphError> {
    for (i, step) in trace.steps.iter().enumerate() {
        let g = graph_of_state(&trace.header, step)?;
        if g.edges_labeled(EdgeLabel::AtGrasp).any(|e| e.src == arm && e.dst == object) {
            return Ok(Some(i));
        }
    }
    Ok(None)
}

pub fn skill_examples(demos: &[DemoTrace], template: &SkillTemplate) -> Result<SkillExamples, PipelineError> {
    let mut ex = SkillExamples::default();
    for (n, d) in demos.iter().enumerate() {
        let (start, end) = skill_window(d)?;
        ex.configs.push((config_at(d, start), config_at(d, end)));
        for (arm, o) in template.held_at_start() {
            let never = || PipelineError::NeverGrasped {
                demo: n,
                object: o.to_string(),
            };
            let event = first_grasp(d, arm, o)?.ok_or_else(never)?;
            let (oct, g) = extract_grasp(d, o, event)?;
            let mut local = resample(&oct.poses[..=event - oct.start], WAYPOINTS);
            *local.last_mut().expect("non-empty window") = g;
            let p0 = d.steps[0].objects[o];
            let cloud = d.steps[0].clouds.get(o).cloned().ok_or_else(|| PipelineError::MissingCloud {
                demo: n,
                object: o.to_string(),
            })?;
            ex.trajectories
                .entry(o.to_string())
                .or_default()
                .push((cloud, local.iter().map(|p| p0 * *p).collect()));
            ex.footprints.insert(o.to_string(), d.header.objects[o].footprint);
        }
    }
    Ok(ex)
}

/// Training settings for both generator kinds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorSettings {
    pub schedule: NoiseSchedule,
    pub config: HyperParams,
    pub trajectory: HyperParams,
}

impl Default for GeneratorSettings {
    fn default() -> Self {
        Self {
            schedule: NoiseSchedule::default(),
            config: HyperParams::default(),
            trajectory: HyperParams::default(),
        }
    }
}

pub fn train_skill_generators(
    skill: &str,
    ex: &SkillExamples,
    settings: &GeneratorSettings,
) -> Result<(SkillGenerators, BTreeMap<String, TrainReport>), PipelineError> {
    let mut reports = BTreeMap::new();
    let (config, r) = train_config_generator(&ex.configs, settings.schedule.clone(), &settings.config)?;
    reports.insert("q".to_string(), r);
    let mut trajectories = BTreeMap::new();
    for (o, data) in &ex.trajectories {
        let sym = Symmetry::of_footprint(&ex.footprints[o]);
        let (den, r) = train_traj_generator(data, settings.schedule.clone(), &settings.trajectory, &sym)?;
        trajectories.insert(o.clone(), den);
        reports.insert(format!("tau:{o}"), r);
    }
    Ok((
        SkillGenerators {
            skill: skill.to_string(),
            config: Some(config),
            trajectories,
        },
        reports,
    ))
}

/// Segments the first demonstration and compiles its first contact-rich
/// span into a `BiOperation` action.
pub fn compile_skill(id: &str, demos: &[DemoTrace]) -> Result<(SkillSchema, ActionSchema), PipelineError> {
    let d = demos.first().ok_or(PipelineError::NoSkill(0))?;
    let seq = segment(d)?;
    let span = seq.contact_rich.first().ok_or(PipelineError::NoSkill(0))?;
    let schema = SkillSchema::from_span(id, &seq, span, &d.header);
    let action = compile_bioperation(&schema)?;
    Ok((schema, action))
}

/// Everything learned from the demonstrations of one skill.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainedSkill {
    pub id: String,
    pub task: DemoTask,
    /// Objects the skill holds; the safety test ignores them.
    pub manipulated: Vec<String>,
    pub action: ActionSchema,
    pub generators: SkillGenerators,
    pub emulator: PolicyEmulator,
    pub validator: ValidatorModel,
    pub validator_report: ValidatorReport,
    pub generator_reports: BTreeMap<String, TrainReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct TrainSettings {
    pub generators: GeneratorSettings,
    pub grid: PlacementGrid,
    pub validator: ValidatorParams,
}

/// Compiles the skill, fits its generators and validator, and fits the
/// policy emulator, all from the same demonstrations.
pub fn train_skill(
    id: &str,
    task: DemoTask,
    demos: &[DemoTrace],
    settings: &TrainSettings,
) -> Result<TrainedSkill, PipelineError> {
    let template = task.template();
    let (_, action) = compile_skill(id, demos)?;
    let examples = skill_examples(demos, &template)?;
    let (generators, generator_reports) = train_skill_generators(id, &examples, &settings.generators)?;
    let emulator = PolicyEmulator::fit(id, template.clone(), demos)?;
    let manipulated: Vec<String> = template.held_at_start().into_iter().map(|(_, o)| o.to_string()).collect();
    let names: Vec<&str> = manipulated.iter().map(String::as_str).collect();
    let data = build_collision_dataset(demos, &settings.grid)?;
    let (validator, validator_report) = train_validator(id, &names, &data, &settings.validator)?;
    Ok(TrainedSkill {
        id: id.to_string(),
        task,
        manipulated,
        action,
        generators,
        emulator,
        validator,
        validator_report,
        generator_reports,
    })
}

/// How a trial certifies the safety constraint.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum SafetyMode {
    #[default]
    Validator,
    Oracle,
}

/// One plan-and-execute cycle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub seed: u64,
    pub success: bool,
    pub plan_length: Option<usize>,
    /// Wall-clock time of `solve`, streams included.
    pub compute_seconds: f64,
    pub failure: Option<String>,
    pub iterations: usize,
    /// Objects the plan puts down somewhere new before the skill.
    pub relocated: Vec<String>,
    /// Oracle clearance at the start of the skill, if the plan reaches it.
    pub clearance: Option<f64>,
}

pub struct TrialRun {
    pub record: TrialRecord,
    pub plan: Option<Plan>,
    pub outcome: Option<RolloutOutcome>,
}

/// The state at the start of the plan's first skill.
pub fn state_before_skill(scenario: &Scenario, plan: &Plan) -> Option<WorldState> {
    let mut s = scenario.state.clone();
    for step in plan_steps(plan).ok()? {
        match step {
            Step::Primitive(p) => s = exec_primitive(&s, &p).ok()?.0,
            Step::Skill { .. } => return Some(s),
        }
    }
    None
}

/// Plans for `skill` in `scenario`, then executes the plan in simulation.
/// Planner failures, including timeouts, are failed trials.
pub fn run_trial(
    skill: &TrainedSkill,
    scenario: &Scenario,
    safety: SafetyMode,
    config: &SolveConfig,
) -> Result<TrialRun, PipelineError> {
    let state = &scenario.state;
    for o in &skill.manipulated {
        if !state.objects.contains_key(o) {
            return Err(PipelineError::MissingObject(o.clone()));
        }
    }
    let mut domain = desk_domain(std::slice::from_ref(&skill.action))?;
    declare_kinds(&mut domain, state);
    let names: Vec<&str> = skill.manipulated.iter().map(String::as_str).collect();
    let problem = skill_problem(state, &skill.id, &names);
    let mut clouds = BTreeMap::new();
    for o in state.objects.keys() {
        clouds.insert(o.clone(), synth_cloud(state, o, scenario.seed, CloudOptions::default())?);
    }
    let ctx = DeskContext {
        state,
        generators: &skill.generators,
        clouds: &clouds,
        safety: match safety {
            SafetyMode::Validator => Safety::Validator(&skill.validator),
            SafetyMode::Oracle => Safety::Oracle(&skill.emulator),
        },
        margin: PLANNER_MARGIN,
        motion: Some(&skill.emulator),
    };
    let streams = desk_streams(&ctx);
    let started = Instant::now();
    let result = solve(&domain, &problem, &streams, config)?;
    let compute_seconds = started.elapsed().as_secs_f64();
    let mut record = TrialRecord {
        seed: scenario.seed,
        success: false,
        plan_length: None,
        compute_seconds,
        failure: None,
        iterations: 0,
        relocated: Vec::new(),
        clearance: None,
    };
    match result {
        Err(f) => {
            record.failure = Some(f.reason.as_str().to_string());
            record.iterations = f.iterations;
            Ok(TrialRun {
                record,
                plan: None,
                outcome: None,
            })
        }
        Ok(sol) => {
            let steps = plan_steps(&sol.plan).map_err(|m| PlannerError::Stream {
                stream: "plan".into(),
                message: m,
            })?;
            record.plan_length = Some(sol.plan.len());
            record.iterations = sol.iterations;
            record.relocated = relocated_objects(&sol.plan);
            record.clearance = state_before_skill(scenario, &sol.plan).and_then(|s| oracle_clearance(&skill.emulator, &s));
            let outcome = rollout(state, &steps, &skill.emulator);
            record.success = outcome.success;
            record.failure = outcome.failure.clone();
            Ok(TrialRun {
                record,
                plan: Some(sol.plan),
                outcome: Some(outcome),
            })
        }
    }
}

/// Objects placed before the first action that is not a primitive.
pub fn relocated_objects(plan: &Plan) -> Vec<String> {
    const PRIMITIVES: [&str; 4] = ["move", "pick", "place", "approach-pair"];
    plan.actions
        .iter()
        .take_while(|a| PRIMITIVES.contains(&a.name.as_str()))
        .filter(|a| a.name == "place")
        .filter_map(|a| a.args.get(1).cloned())
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregates {
    pub trials: usize,
    /// Percent of trials that succeeded.
    pub success_rate: f64,
    /// Mean length over trials that produced a plan.
    pub mean_plan_length: Option<f64>,
    pub mean_compute_seconds: f64,
}

impl Aggregates {
    pub fn of(records: &[TrialRecord]) -> Self {
        let n = records.len();
        let lengths: Vec<f64> = records.iter().filter_map(|r| r.plan_length).map(|l| l as f64).collect();
        let mean = |v: &[f64]| (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64);
        let times: Vec<f64> = records.iter().map(|r| r.compute_seconds).collect();
        Self {
            trials: n,
            success_rate: if n == 0 {
                0.0
            } else {
                100.0 * records.iter().filter(|r| r.success).count() as f64 / n as f64
            },
            mean_plan_length: mean(&lengths),
            mean_compute_seconds: mean(&times).unwrap_or(0.0),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub scenario: ScenarioName,
    pub safety: SafetyMode,
    /// Ordered by seed.
    pub records: Vec<TrialRecord>,
    pub aggregates: Aggregates,
}

/// Runs one trial per seed, in parallel, and aggregates them.
pub fn run_bench(
    skill: &TrainedSkill,
    scenario: ScenarioName,
    seeds: &[u64],
    safety: SafetyMode,
    config: &SolveConfig,
) -> Result<BenchReport, PipelineError> {
    use rayon::prelude::*;
    let mut records = seeds
        .par_iter()
        .map(|&seed| {
            let sc = sample_scenario(scenario, seed)?;
            let cfg = SolveConfig { seed, ..config.clone() };
            Ok(run_trial(skill, &sc, safety, &cfg)?.record)
        })
        .collect::<Result<Vec<_>, PipelineError>>()?;
    records.sort_by_key(|r| r.seed);
    Ok(BenchReport {
        scenario,
        safety,
        aggregates: Aggregates::of(&records),
        records,
    })
}
