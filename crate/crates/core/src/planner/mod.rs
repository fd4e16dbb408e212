//! Focused stream-based task-and-motion planning: search skeletons over
//! optimistic stream outputs, bind them with real samples, blame failures
//! and search again.

pub mod desk;
mod search;

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::generator::sub_seed;
use crate::geometry::Pose;
use crate::symbolic::{Atom, Domain, Literal, Problem, StreamKind, SymbolicError, Term};

pub use search::{fluent_predicates, Blame, PLACEMENT_PREDICATES};
use search::{bindings, ground, index_facts, Op, SearchOutcome, Task, Universe};

#[derive(Debug, Error)]
pub enum PlannerError {
    #[error("stream `{0}` is registered but not declared by the domain")]
    UndeclaredStream(String),
    #[error("stream `{0}` is declared but has no implementation")]
    MissingStream(String),
    #[error("invalid solver configuration: {0}")]
    InvalidConfig(String),
    #[error("stream `{stream}` failed: {message}")]
    Stream { stream: String, message: String },
    #[error(transparent)]
    Symbolic(#[from] SymbolicError),
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct GroundAction {
    pub name: String,
    pub args: Vec<String>,
}

impl std::fmt::Display for GroundAction {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "({}", self.name)?;
        for a in &self.args {
            write!(f, " {a}")?;
        }
        write!(f, ")")
    }
}

/// Optimistic stream outputs are named with this prefix.
pub const OPTIMISTIC_PREFIX: char = '#';

pub fn is_optimistic(name: &str) -> bool {
    name.starts_with(OPTIMISTIC_PREFIX)
}

/// An action sequence whose continuous arguments may still be placeholders.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlanSkeleton {
    pub actions: Vec<GroundAction>,
}

impl PlanSkeleton {
    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    pub fn placeholders(&self) -> BTreeSet<&str> {
        self.actions
            .iter()
            .flat_map(|a| a.args.iter().map(String::as_str))
            .filter(|a| is_optimistic(a))
            .collect()
    }
}

/// A fully bound plan with the payload of every continuous handle it uses.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Plan {
    pub actions: Vec<GroundAction>,
    pub values: BTreeMap<String, Pose>,
}

impl Plan {
    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FailureReason {
    Timeout,
    UnsatisfiableSkeletonSpace,
    StreamExhaustion,
    NodeBudget,
}

impl FailureReason {
    pub fn as_str(self) -> &'static str {
        match self {
            FailureReason::Timeout => "timeout",
            FailureReason::UnsatisfiableSkeletonSpace => "unsatisfiable-skeleton-space",
            FailureReason::StreamExhaustion => "stream-exhaustion",
            FailureReason::NodeBudget => "node-budget",
        }
    }
}

impl std::fmt::Display for FailureReason {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Failure {
    pub reason: FailureReason,
    pub blamed: Option<String>,
    pub iterations: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Solution {
    pub plan: Plan,
    pub iterations: usize,
    /// Length of every skeleton tried, in order.
    pub skeletons: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveConfig {
    pub timeout: f64,
    /// Binding attempts per skeleton.
    pub budget: usize,
    /// Longest chain of optimistic stream outputs.
    pub max_level: usize,
    pub max_iterations: usize,
    /// Cap on grounded operators and on searched states.
    pub node_budget: usize,
    pub seed: u64,
}

impl Default for SolveConfig {
    fn default() -> Self {
        Self {
            timeout: 60.0,
            budget: 30,
            max_level: 2,
            max_iterations: 40,
            node_budget: 2_000_000,
            seed: 0,
        }
    }
}

impl SolveConfig {
    pub fn validate(&self) -> Result<(), PlannerError> {
        if !(self.timeout > 0.0) {
            return Err(PlannerError::InvalidConfig("timeout must be positive".into()));
        }
        if self.budget == 0 || self.max_iterations == 0 {
            return Err(PlannerError::InvalidConfig("budget and iteration cap must be positive".into()));
        }
        Ok(())
    }
}

/// One stream argument: the object name and its payload, if it has one.
#[derive(Debug, Clone, Copy)]
pub struct StreamInput<'a> {
    pub name: &'a str,
    pub value: Option<&'a Pose>,
}

/// The symbolic state a fluent test is evaluated in.
#[derive(Debug, Clone, Copy)]
pub struct FluentState<'a> {
    pub atoms: &'a [Atom],
    pub values: &'a BTreeMap<String, Pose>,
}

impl FluentState<'_> {
    pub fn value(&self, name: &str) -> Option<&Pose> {
        self.values.get(name)
    }
}

/// Implementation behind one stream declaration.
pub trait StreamFn: Send + Sync {
    /// Eager streams are evaluated as soon as their inputs are concrete.
    fn eager(&self) -> bool {
        false
    }

    /// Output tuples of one generator call; empty when the sampler gives up.
    fn sample(&self, _inputs: &[StreamInput], _seed: u64) -> Result<Vec<Vec<Pose>>, String> {
        Ok(Vec::new())
    }

    /// Tests; `state` is present for fluent tests.
    fn test(&self, _inputs: &[StreamInput], _state: Option<&FluentState>) -> Result<bool, String> {
        Ok(true)
    }
}

/// A generator stream backed by a closure.
pub struct FnGenerator<F> {
    eager: bool,
    f: F,
}

pub fn gen_stream<F>(eager: bool, f: F) -> FnGenerator<F>
where
    F: Fn(&[StreamInput], u64) -> Result<Vec<Vec<Pose>>, String> + Send + Sync,
{
    FnGenerator { eager, f }
}

impl<F> StreamFn for FnGenerator<F>
where
    F: Fn(&[StreamInput], u64) -> Result<Vec<Vec<Pose>>, String> + Send + Sync,
{
    fn eager(&self) -> bool {
        self.eager
    }

    fn sample(&self, inputs: &[StreamInput], seed: u64) -> Result<Vec<Vec<Pose>>, String> {
        (self.f)(inputs, seed)
    }
}

/// A test stream backed by a closure.
pub struct FnTest<F> {
    eager: bool,
    f: F,
}

pub fn test_stream<F>(eager: bool, f: F) -> FnTest<F>
where
    F: Fn(&[StreamInput], Option<&FluentState>) -> Result<bool, String> + Send + Sync,
{
    FnTest { eager, f }
}

impl<F> StreamFn for FnTest<F>
where
    F: Fn(&[StreamInput], Option<&FluentState>) -> Result<bool, String> + Send + Sync,
{
    fn eager(&self) -> bool {
        self.eager
    }

    fn test(&self, inputs: &[StreamInput], state: Option<&FluentState>) -> Result<bool, String> {
        (self.f)(inputs, state)
    }
}

type Checker<'a> = Box<dyn Fn(&Plan) -> Result<(), String> + Send + Sync + 'a>;

/// Stream implementations keyed by declaration name, plus an optional
/// whole-plan check run on every candidate binding.
#[derive(Default)]
pub struct StreamRegistry<'a> {
    streams: BTreeMap<String, Box<dyn StreamFn + 'a>>,
    checker: Option<Checker<'a>>,
}

impl<'a> StreamRegistry<'a> {
    pub fn new() -> Self {
        Self {
            streams: BTreeMap::new(),
            checker: None,
        }
    }

    pub fn register(&mut self, name: &str, s: impl StreamFn + 'a) -> &mut Self {
        self.streams.insert(name.to_string(), Box::new(s));
        self
    }

    pub fn set_checker(&mut self, f: impl Fn(&Plan) -> Result<(), String> + Send + Sync + 'a) -> &mut Self {
        self.checker = Some(Box::new(f));
        self
    }

    /// Every declaration needs an implementation and vice versa.
    pub fn check(&self, domain: &Domain) -> Result<(), PlannerError> {
        for name in self.streams.keys() {
            if domain.stream(name).is_none() {
                return Err(PlannerError::UndeclaredStream(name.clone()));
            }
        }
        for s in &domain.streams {
            if !self.streams.contains_key(&s.name) {
                return Err(PlannerError::MissingStream(s.name.clone()));
            }
        }
        Ok(())
    }
}

struct Instance {
    stream: usize,
    key: String,
    inputs: Vec<String>,
    outputs: Vec<String>,
    domain: Vec<Atom>,
    certified: Vec<Atom>,
}

/// The universe after optimistic instantiation.
struct Optimistic {
    universe: Universe,
    instances: Vec<Instance>,
    /// Optimistic fact to the instance that certified it.
    producer: HashMap<Atom, usize>,
    /// Optimistic object to the instance that produced it.
    maker: HashMap<String, usize>,
}

enum BindFailure {
    Generator(usize),
    Test(usize),
    Fluent { constraint: Atom, context: Vec<Atom> },
    Check(String),
}

enum Bound {
    Plan(Plan, BTreeSet<Atom>),
    Failed(BindFailure),
    Timeout,
}

fn subst(a: &Atom, sub: &BTreeMap<String, String>) -> Atom {
    Atom::new(
        &a.predicate,
        a.args
            .iter()
            .map(|t| Term::Const(sub.get(t.name()).cloned().unwrap_or_else(|| t.name().to_string())))
            .collect(),
    )
}

struct Session<'s, 'a> {
    domain: &'s Domain,
    problem: &'s Problem,
    streams: &'s StreamRegistry<'a>,
    config: &'s SolveConfig,
    deadline: Instant,
    values: BTreeMap<String, Pose>,
    /// Outputs of eager generator instances, by instance key.
    eager: HashMap<String, Vec<Vec<String>>>,
    eager_tests: HashMap<String, bool>,
    counter: usize,
    blames: Vec<Blame>,
    disabled: HashSet<String>,
}

impl<'s, 'a> Session<'s, 'a> {
    fn timed_out(&self) -> bool {
        Instant::now() >= self.deadline
    }

    fn stream_err(name: &str, message: String) -> PlannerError {
        PlannerError::Stream {
            stream: name.to_string(),
            message,
        }
    }

    fn fresh(&mut self, ty: &str) -> String {
        self.counter += 1;
        format!("{ty}-{}", self.counter)
    }

    fn inputs<'v>(names: &'v [String], values: &'v BTreeMap<String, Pose>) -> Vec<StreamInput<'v>> {
        names
            .iter()
            .map(|n| StreamInput {
                name: n,
                value: values.get(n),
            })
            .collect()
    }

    fn eager_outputs(&mut self, si: usize, key: &str, inputs: &[String]) -> Result<Vec<Vec<String>>, PlannerError> {
        if let Some(r) = self.eager.get(key) {
            return Ok(r.clone());
        }
        let decl = &self.domain.streams[si];
        let seed = sub_seed(self.config.seed, &format!("eager:{key}"));
        let tuples = self.streams.streams[&decl.name]
            .sample(&Self::inputs(inputs, &self.values), seed)
            .map_err(|m| Self::stream_err(&decl.name, m))?;
        let mut out = Vec::new();
        for t in tuples {
            if t.len() != decl.outputs.len() {
                return Err(Self::stream_err(&decl.name, "wrong number of outputs".into()));
            }
            let mut names = Vec::new();
            for (v, p) in decl.outputs.iter().zip(t) {
                let n = self.fresh(&v.ty);
                self.values.insert(n.clone(), p);
                names.push(n);
            }
            out.push(names);
        }
        self.eager.insert(key.to_string(), out.clone());
        Ok(out)
    }

    fn eager_test(&mut self, si: usize, key: &str, inputs: &[String]) -> Result<bool, PlannerError> {
        if let Some(&r) = self.eager_tests.get(key) {
            return Ok(r);
        }
        let decl = &self.domain.streams[si];
        let r = self.streams.streams[&decl.name]
            .test(&Self::inputs(inputs, &self.values), None)
            .map_err(|m| Self::stream_err(&decl.name, m))?;
        self.eager_tests.insert(key.to_string(), r);
        Ok(r)
    }

    /// Applies every non-fluent stream until no new instance appears, with
    /// optimistic outputs chained at most `level` deep.
    fn instantiate(&mut self, level: usize) -> Result<Optimistic, PlannerError> {
        let mut universe = Universe {
            objects: self.problem.objects.clone(),
            facts: self.problem.init.iter().cloned().collect(),
        };
        for (c, t) in &self.domain.constants {
            universe.objects.insert(c.clone(), t.clone());
        }
        let mut opt = Optimistic {
            universe: Universe::default(),
            instances: Vec::new(),
            producer: HashMap::new(),
            maker: HashMap::new(),
        };
        let mut levels: HashMap<String, usize> = HashMap::new();
        let mut seen: HashSet<String> = HashSet::new();
        let mut n_opt = 0usize;
        loop {
            let mut progressed = false;
            for (si, decl) in self.domain.streams.iter().enumerate() {
                if decl.fluent {
                    continue;
                }
                let pats: Vec<&Atom> = decl.domain.iter().collect();
                let found = {
                    let by_pred = index_facts(universe.facts.iter());
                    bindings(self.domain, &universe, &decl.inputs, &pats, &by_pred)
                };
                for b in found {
                    let inputs: Vec<String> = decl.inputs.iter().map(|v| b[&v.name].clone()).collect();
                    let key = format!("{}({})", decl.name, inputs.join(","));
                    if self.disabled.contains(&key) || !seen.insert(key.clone()) {
                        continue;
                    }
                    if seen.len() > self.config.node_budget {
                        return Err(PlannerError::InvalidConfig("stream instantiation exceeded the node budget".into()));
                    }
                    let lvl = inputs.iter().map(|i| levels.get(i).copied().unwrap_or(0)).max().unwrap_or(0);
                    let concrete = inputs.iter().all(|i| !is_optimistic(i));
                    let eager = self.streams.streams[&decl.name].eager();
                    let domain_atoms: Vec<Atom> = decl.domain.iter().map(|a| a.substitute(&b)).collect();
                    match decl.kind() {
                        StreamKind::Generator if concrete && eager => {
                            for outs in self.eager_outputs(si, &key, &inputs)? {
                                let mut bb = b.clone();
                                for (v, n) in decl.outputs.iter().zip(outs) {
                                    universe.objects.insert(n.clone(), v.ty.clone());
                                    bb.insert(v.name.clone(), n);
                                }
                                for c in &decl.certified {
                                    progressed |= universe.facts.insert(c.substitute(&bb));
                                }
                            }
                        }
                        StreamKind::Generator => {
                            if lvl + 1 > level {
                                seen.remove(&key);
                                continue;
                            }
                            let idx = opt.instances.len();
                            let mut bb = b.clone();
                            let mut outputs = Vec::new();
                            for v in &decl.outputs {
                                n_opt += 1;
                                let n = format!("{OPTIMISTIC_PREFIX}{}{n_opt}", v.ty);
                                universe.objects.insert(n.clone(), v.ty.clone());
                                levels.insert(n.clone(), lvl + 1);
                                opt.maker.insert(n.clone(), idx);
                                bb.insert(v.name.clone(), n.clone());
                                outputs.push(n);
                            }
                            let certified: Vec<Atom> = decl.certified.iter().map(|c| c.substitute(&bb)).collect();
                            for c in &certified {
                                opt.producer.insert(c.clone(), idx);
                                universe.facts.insert(c.clone());
                            }
                            opt.instances.push(Instance {
                                stream: si,
                                key,
                                inputs,
                                outputs,
                                domain: domain_atoms,
                                certified,
                            });
                            progressed = true;
                        }
                        StreamKind::Test if concrete && eager => {
                            if self.eager_test(si, &key, &inputs)? {
                                for c in &decl.certified {
                                    progressed |= universe.facts.insert(c.substitute(&b));
                                }
                            }
                        }
                        StreamKind::Test => {
                            let idx = opt.instances.len();
                            let certified: Vec<Atom> = decl.certified.iter().map(|c| c.substitute(&b)).collect();
                            for c in &certified {
                                if universe.facts.insert(c.clone()) {
                                    opt.producer.insert(c.clone(), idx);
                                    progressed = true;
                                }
                            }
                            opt.instances.push(Instance {
                                stream: si,
                                key,
                                inputs,
                                outputs: Vec::new(),
                                domain: domain_atoms,
                                certified,
                            });
                        }
                    }
                }
            }
            if !progressed {
                break;
            }
        }
        opt.universe = universe;
        Ok(opt)
    }

    /// Instances whose optimistic outputs or facts the skeleton relies on,
    /// in creation order.
    fn needed(&self, opt: &Optimistic, ops: &[&Op]) -> Vec<usize> {
        let mut stack = Vec::new();
        for op in ops {
            for a in op.statics.iter().chain(&op.constraints) {
                if let Some(&i) = opt.producer.get(a) {
                    stack.push(i);
                }
                for t in &a.args {
                    if let Some(&i) = opt.maker.get(t.name()) {
                        stack.push(i);
                    }
                }
            }
            for a in &op.action.args {
                if let Some(&i) = opt.maker.get(a) {
                    stack.push(i);
                }
            }
        }
        let mut set = BTreeSet::new();
        while let Some(i) = stack.pop() {
            if !set.insert(i) {
                continue;
            }
            let inst = &opt.instances[i];
            for n in &inst.inputs {
                if let Some(&j) = opt.maker.get(n) {
                    stack.push(j);
                }
            }
            for d in &inst.domain {
                if let Some(&j) = opt.producer.get(d) {
                    stack.push(j);
                }
            }
        }
        set.into_iter().collect()
    }

    fn bind(&mut self, task: &Task, opt: &Optimistic, skeleton: &[usize], iteration: usize) -> Result<Bound, PlannerError> {
        let ops: Vec<&Op> = skeleton.iter().map(|&i| &task.ops[i]).collect();
        let needed = self.needed(opt, &ops);
        let fluent_tests: HashMap<&str, usize> = self
            .domain
            .streams
            .iter()
            .enumerate()
            .filter(|(_, s)| s.fluent)
            .flat_map(|(i, s)| s.certified.iter().map(move |c| (c.predicate.as_str(), i)))
            .collect();

        let mut tally: Vec<(String, usize, BindFailure)> = Vec::new();
        for attempt in 0..self.config.budget {
            if self.timed_out() {
                return Ok(Bound::Timeout);
            }
            let mut values = self.values.clone();
            let mut sub: BTreeMap<String, String> = BTreeMap::new();
            let mut certified: BTreeSet<Atom> = BTreeSet::new();
            let mut failure = None;
            for &i in &needed {
                let inst = &opt.instances[i];
                let decl = &self.domain.streams[inst.stream];
                let inputs: Vec<String> = inst
                    .inputs
                    .iter()
                    .map(|n| sub.get(n).cloned().unwrap_or_else(|| n.clone()))
                    .collect();
                let imp = &self.streams.streams[&decl.name];
                match decl.kind() {
                    StreamKind::Generator => {
                        let seed = sub_seed(self.config.seed, &format!("bind:{iteration}:{attempt}:{}", inst.key));
                        let tuples = imp
                            .sample(&Self::inputs(&inputs, &values), seed)
                            .map_err(|m| Self::stream_err(&decl.name, m))?;
                        let Some(t) = tuples.into_iter().next() else {
                            failure = Some(BindFailure::Generator(i));
                            break;
                        };
                        if t.len() != inst.outputs.len() {
                            return Err(Self::stream_err(&decl.name, "wrong number of outputs".into()));
                        }
                        for ((o, v), p) in inst.outputs.iter().zip(&decl.outputs).zip(t) {
                            self.counter += 1;
                            let n = format!("{}-{}", v.ty, self.counter);
                            values.insert(n.clone(), p);
                            sub.insert(o.clone(), n);
                        }
                    }
                    StreamKind::Test => {
                        let ok = imp
                            .test(&Self::inputs(&inputs, &values), None)
                            .map_err(|m| Self::stream_err(&decl.name, m))?;
                        if !ok {
                            failure = Some(BindFailure::Test(i));
                            break;
                        }
                    }
                }
                certified.extend(inst.certified.iter().map(|c| subst(c, &sub)));
            }

            if failure.is_none() {
                let mut state = task.init.clone();
                'steps: for op in &ops {
                    if !op.constraints.is_empty() {
                        let atoms: Vec<Atom> = state.iter().map(|&a| subst(task.table_atom(a), &sub)).collect();
                        for c in &op.constraints {
                            let Some(&si) = fluent_tests.get(c.predicate.as_str()) else {
                                continue;
                            };
                            let decl = &self.domain.streams[si];
                            let bound = subst(c, &sub);
                            let names: Vec<String> = bound.args.iter().map(|t| t.name().to_string()).collect();
                            let fs = FluentState {
                                atoms: &atoms,
                                values: &values,
                            };
                            let ok = self.streams.streams[&decl.name]
                                .test(&Self::inputs(&names, &values), Some(&fs))
                                .map_err(|m| Self::stream_err(&decl.name, m))?;
                            if !ok {
                                failure = Some(BindFailure::Fluent {
                                    constraint: c.clone(),
                                    context: task.context(&state),
                                });
                                break 'steps;
                            }
                            certified.insert(bound);
                        }
                    }
                    state = task.apply(op, &state);
                }
            }

            let plan = Plan {
                actions: ops
                    .iter()
                    .map(|op| GroundAction {
                        name: op.action.name.clone(),
                        args: op
                            .action
                            .args
                            .iter()
                            .map(|a| sub.get(a).cloned().unwrap_or_else(|| a.clone()))
                            .collect(),
                    })
                    .collect(),
                values: BTreeMap::new(),
            };
            if failure.is_none() {
                let mut plan = plan;
                plan.values = plan
                    .actions
                    .iter()
                    .flat_map(|a| a.args.iter())
                    .filter_map(|a| values.get(a).map(|v| (a.clone(), *v)))
                    .collect();
                if let Some(check) = &self.streams.checker {
                    if let Err(m) = check(&plan) {
                        failure = Some(BindFailure::Check(m));
                    }
                }
                if failure.is_none() {
                    return Ok(Bound::Plan(plan, certified));
                }
            }
            let f = failure.expect("set above");
            let key = match &f {
                BindFailure::Generator(i) | BindFailure::Test(i) => opt.instances[*i].key.clone(),
                BindFailure::Fluent { constraint, .. } => constraint.to_string(),
                BindFailure::Check(m) => format!("check: {m}"),
            };
            match tally.iter_mut().find(|(k, _, _)| *k == key) {
                Some(e) => e.1 += 1,
                None => tally.push((key, 1, f)),
            }
        }
        // Most frequent failure; earliest first among ties.
        let best = tally
            .into_iter()
            .enumerate()
            .max_by_key(|(i, (_, n, _))| (*n, std::cmp::Reverse(*i)))
            .map(|(_, (_, _, f))| f)
            .expect("budget is positive");
        Ok(Bound::Failed(best))
    }

    /// Records `f` so the next search avoids it; returns a description.
    fn blame(&mut self, opt: &Optimistic, f: BindFailure) -> String {
        match f {
            BindFailure::Generator(i) | BindFailure::Test(i) => {
                let key = opt.instances[i].key.clone();
                self.disabled.insert(key.clone());
                key
            }
            BindFailure::Fluent { constraint, context } => {
                let placeholders: Vec<&str> = context
                    .iter()
                    .flat_map(|a| a.args.iter().map(Term::name))
                    .filter(|n| is_optimistic(n))
                    .collect();
                // A context with placeholders changes with every draw, so
                // only concrete contexts are blamed.
                if placeholders.is_empty() {
                    self.blames.push(Blame {
                        predicate: constraint.predicate.clone(),
                        args: constraint
                            .args
                            .iter()
                            .map(|t| (!is_optimistic(t.name())).then(|| t.name().to_string()))
                            .collect(),
                        context,
                    });
                }
                constraint.to_string()
            }
            BindFailure::Check(m) => m,
        }
    }
}

/// Replays `plan` from `init`, checking every precondition against the
/// state and `statics`, and checks the goal at the end.
pub fn validate_plan(
    domain: &Domain,
    init: &[Atom],
    statics: &BTreeSet<Atom>,
    goal: &[Literal],
    plan: &Plan,
) -> Result<(), String> {
    let fluent = fluent_predicates(domain);
    let mut state: BTreeSet<Atom> = init.iter().filter(|a| fluent.contains(&a.predicate)).cloned().collect();
    let holds = |state: &BTreeSet<Atom>, a: &Atom| {
        if fluent.contains(&a.predicate) {
            state.contains(a)
        } else {
            statics.contains(a) || init.contains(a)
        }
    };
    for (k, act) in plan.actions.iter().enumerate() {
        let schema = domain
            .action(&act.name)
            .ok_or_else(|| format!("step {k}: unknown action {}", act.name))?;
        if schema.parameters.len() != act.args.len() {
            return Err(format!("step {k}: {act} has the wrong arity"));
        }
        let b: BTreeMap<String, String> = schema
            .parameters
            .iter()
            .zip(&act.args)
            .map(|(p, a)| (p.name.clone(), a.clone()))
            .collect();
        for l in &schema.precondition {
            let g = l.atom.substitute(&b);
            if holds(&state, &g) != l.positive {
                return Err(format!("step {k}: {act} needs {}{g}", if l.positive { "" } else { "not " }));
            }
        }
        let adds: Vec<Atom> = schema.effect.iter().filter(|l| l.positive).map(|l| l.atom.substitute(&b)).collect();
        for l in schema.effect.iter().filter(|l| !l.positive) {
            state.remove(&l.atom.substitute(&b));
        }
        for a in adds {
            if let Some(&n) = domain.functional.get(&a.predicate) {
                state.retain(|s| s.predicate != a.predicate || s.args[..n] != a.args[..n]);
            }
            state.insert(a);
        }
    }
    for l in goal {
        if holds(&state, &l.atom) != l.positive {
            return Err(format!("goal literal {} does not hold", l.atom));
        }
    }
    Ok(())
}

/// Shortest skeleton over the optimistic universe of `problem`, with every
/// stream instantiated up to `max_level` deep. `Ok(None)` when no action
/// sequence reaches the goal.
pub fn first_skeleton(
    domain: &Domain,
    problem: &Problem,
    streams: &StreamRegistry,
    config: &SolveConfig,
) -> Result<Result<Option<PlanSkeleton>, FailureReason>, PlannerError> {
    streams.check(domain)?;
    config.validate()?;
    let mut s = Session {
        domain,
        problem,
        streams,
        config,
        deadline: Instant::now() + Duration::from_secs_f64(config.timeout),
        values: problem.values.clone(),
        eager: HashMap::new(),
        eager_tests: HashMap::new(),
        counter: 0,
        blames: Vec::new(),
        disabled: HashSet::new(),
    };
    let opt = s.instantiate(config.max_level)?;
    let Ok(task) = ground(domain, &opt.universe, &problem.goal, config.node_budget) else {
        return Ok(Err(FailureReason::NodeBudget));
    };
    Ok(match task.shortest(&[], config.node_budget, s.deadline) {
        SearchOutcome::Found(ops) => Ok(Some(PlanSkeleton {
            actions: ops.iter().map(|&i| task.ops[i].action.clone()).collect(),
        })),
        SearchOutcome::Exhausted => Ok(None),
        SearchOutcome::Budget => Err(FailureReason::NodeBudget),
        SearchOutcome::Timeout => Err(FailureReason::Timeout),
    })
}

/// Plans until a bound, validated plan is found or the session gives up.
/// Planning failures are `Ok(Err(_))`; configuration errors are `Err(_)`.
pub fn solve(
    domain: &Domain,
    problem: &Problem,
    streams: &StreamRegistry,
    config: &SolveConfig,
) -> Result<Result<Solution, Failure>, PlannerError> {
    streams.check(domain)?;
    config.validate()?;
    let mut s = Session {
        domain,
        problem,
        streams,
        config,
        deadline: Instant::now() + Duration::from_secs_f64(config.timeout),
        values: problem.values.clone(),
        eager: HashMap::new(),
        eager_tests: HashMap::new(),
        counter: 0,
        blames: Vec::new(),
        disabled: HashSet::new(),
    };
    let fail = |reason, blamed: Option<String>, iterations| {
        Ok(Err(Failure {
            reason,
            blamed,
            iterations,
        }))
    };
    let mut level = 1;
    let mut blamed: Option<String> = None;
    let mut skeletons = Vec::new();
    for iteration in 1..=config.max_iterations {
        if s.timed_out() {
            return fail(FailureReason::Timeout, blamed, iteration - 1);
        }
        let opt = s.instantiate(level)?;
        let Ok(task) = ground(domain, &opt.universe, &problem.goal, config.node_budget) else {
            return fail(FailureReason::NodeBudget, blamed, iteration);
        };
        let ops = match task.shortest(&s.blames, config.node_budget, s.deadline) {
            SearchOutcome::Found(ops) => ops,
            SearchOutcome::Exhausted if level < config.max_level => {
                log::info!("iteration {iteration}: no skeleton at level {level}, deepening");
                level += 1;
                continue;
            }
            SearchOutcome::Exhausted => {
                let reason = if s.blames.is_empty() && s.disabled.is_empty() {
                    FailureReason::UnsatisfiableSkeletonSpace
                } else {
                    FailureReason::StreamExhaustion
                };
                return fail(reason, blamed, iteration);
            }
            SearchOutcome::Budget => return fail(FailureReason::NodeBudget, blamed, iteration),
            SearchOutcome::Timeout => return fail(FailureReason::Timeout, blamed, iteration),
        };
        skeletons.push(ops.len());
        // Blame lasts for one iteration only; fluent-test blame persists.
        s.disabled.clear();
        match s.bind(&task, &opt, &ops, iteration)? {
            Bound::Plan(plan, certified) => {
                let mut statics: BTreeSet<Atom> = opt
                    .universe
                    .facts
                    .iter()
                    .filter(|a| !opt.producer.contains_key(*a))
                    .cloned()
                    .collect();
                statics.extend(certified);
                if let Err(m) = validate_plan(domain, &problem.init, &statics, &problem.goal, &plan) {
                    return Err(PlannerError::InvalidConfig(format!("bound plan failed validation: {m}")));
                }
                log::info!("iteration {iteration}: bound a plan of length {}", plan.len());
                return Ok(Ok(Solution {
                    plan,
                    iterations: iteration,
                    skeletons,
                }));
            }
            Bound::Timeout => return fail(FailureReason::Timeout, blamed, iteration),
            Bound::Failed(f) => {
                let b = s.blame(&opt, f);
                log::info!("iteration {iteration}: skeleton of length {} failed, blamed {b}", ops.len());
                blamed = Some(b);
            }
        }
    }
    fail(FailureReason::StreamExhaustion, blamed, config.max_iterations)
}
