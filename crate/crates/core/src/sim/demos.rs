//! Scripted demonstrations for the bimanual skills.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::scenario::{peg, socket};
use super::{
    cup, exec_primitive, synth_cloud, CloudOptions, PolicyEmulator, Primitive, SimError, SkillTemplate, WorldObject, WorldState, LEFT,
    RIGHT,
};
use crate::geometry::{Footprint, Pose};
use crate::scenegraph::{segment, DemoTrace, Timestep};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DemoTask {
    Handoff,
    Insertion,
    ScrewdriverAnalogue,
    CupSleeveAnalogue,
}

impl DemoTask {
    pub const ALL: [DemoTask; 4] = [
        DemoTask::Handoff,
        DemoTask::Insertion,
        DemoTask::ScrewdriverAnalogue,
        DemoTask::CupSleeveAnalogue,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            DemoTask::Handoff => "handoff",
            DemoTask::Insertion => "insertion",
            DemoTask::ScrewdriverAnalogue => "screwdriver-analogue",
            DemoTask::CupSleeveAnalogue => "cup-sleeve-analogue",
        }
    }

    /// Coordinated motion of the task's bimanual skill.
    pub fn template(self) -> SkillTemplate {
        match self {
            DemoTask::Handoff => SkillTemplate::handoff("o1"),
            DemoTask::Insertion => SkillTemplate::insertion(),
            DemoTask::ScrewdriverAnalogue => insertion_like("case", "driver"),
            DemoTask::CupSleeveAnalogue => insertion_like("cup", "sleeve"),
        }
    }

    /// Whether the demonstration leaves the contact-rich phase before it ends.
    pub fn has_effect_graph(self) -> bool {
        self == DemoTask::Handoff
    }
}

fn insertion_like(base: &str, insert: &str) -> SkillTemplate {
    SkillTemplate::Insertion {
        base: base.into(),
        base_arm: LEFT.into(),
        insert: insert.into(),
        insert_arm: RIGHT.into(),
    }
}

impl fmt::Display for DemoTask {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for DemoTask {
    type Err = SimError;

    fn from_str(s: &str) -> Result<Self, SimError> {
        Self::ALL
            .into_iter()
            .find(|t| t.as_str() == s)
            .ok_or_else(|| SimError::UnknownTask(s.to_string()))
    }
}

/// Geometry of an insertion-like demonstration.
#[derive(Debug, Clone)]
pub struct InsertionDemoParams {
    pub base: (String, WorldObject),
    pub insert: (String, WorldObject),
    /// Gap between the gripper and the footprint when grasping.
    pub grasp_gap: f64,
    /// Half distance between the two objects' centers at the skill start.
    pub meet_half_gap: f64,
}

impl InsertionDemoParams {
    pub fn for_task(task: DemoTask) -> Option<Self> {
        let id = Pose::identity();
        let rect = |hx, hy, h| WorldObject::new("", Footprint::Rect { half_x: hx, half_y: hy }, id, h);
        let disk = |r, h| WorldObject::new("", Footprint::Disk { radius: r }, id, h);
        let named = |kind: &str, mut o: WorldObject| {
            o.kind = kind.to_string();
            (kind.to_string(), o)
        };
        match task {
            DemoTask::Insertion => Some(Self {
                base: ("socket".into(), socket(id)),
                insert: ("peg".into(), peg(id)),
                grasp_gap: 0.005,
                meet_half_gap: 0.07,
            }),
            DemoTask::ScrewdriverAnalogue => Some(Self {
                base: named("case", rect(0.07, 0.025, 0.03)),
                insert: named("driver", rect(0.06, 0.008, 0.02)),
                grasp_gap: 0.005,
                meet_half_gap: 0.1,
            }),
            DemoTask::CupSleeveAnalogue => Some(Self {
                base: named("cup", disk(0.03, 0.08)),
                insert: named("sleeve", disk(0.04, 0.04)),
                grasp_gap: 0.005,
                meet_half_gap: 0.09,
            }),
            DemoTask::Handoff => None,
        }
    }
}

/// Extent of `fp` along its local x axis.
fn half_x(fp: &Footprint) -> f64 {
    match *fp {
        Footprint::Disk { radius } => radius,
        Footprint::Rect { half_x, .. } => half_x,
    }
}

struct Recorder {
    state: WorldState,
    header_state: WorldState,
    steps: Vec<Timestep>,
}

impl Recorder {
    /// Starts a trace whose first step carries a point cloud of every object.
    fn new(state: WorldState, cloud_seed: u64) -> Result<Self, SimError> {
        let mut first = state.snapshot();
        for (i, id) in state.objects.keys().enumerate() {
            let c = synth_cloud(&state, id, cloud_seed.wrapping_add(i as u64), CloudOptions::default())?;
            first.clouds.insert(id.clone(), c);
        }
        let steps = vec![first];
        Ok(Self {
            header_state: state.clone(),
            state,
            steps,
        })
    }

    fn run(&mut self, p: Primitive) -> Result<(), SimError> {
        let (s, traj) = exec_primitive(&self.state, &p)?;
        self.state = s;
        self.steps.extend(traj);
        Ok(())
    }

    fn dwell(&mut self, n: usize) {
        for _ in 0..n {
            self.state.t += 1;
            self.steps.push(self.state.snapshot());
        }
    }

    fn skill(&mut self, emulator: &PolicyEmulator) -> Result<(), SimError> {
        let (end, frames) = emulator.run_template(&self.state).map_err(|f| SimError::DemoFailed {
            task: format!("{f:?}"),
            attempts: 1,
        })?;
        self.steps.extend(frames[1..].iter().map(WorldState::snapshot));
        self.state = end;
        Ok(())
    }

    fn finish(self) -> DemoTrace {
        DemoTrace {
            header: self.header_state.header(),
            steps: self.steps,
        }
    }
}

/// Steps the arms hold still before the coordinated motion.
const PRE_DWELL: usize = 3;

fn insertion_demo(p: &InsertionDemoParams, template: &SkillTemplate, rng: &mut ChaCha8Rng) -> Result<DemoTrace, SimError> {
    let mut s = WorldState::desk();
    let (bx, by) = (rng.random_range(-0.35..=-0.15), rng.random_range(-0.1..=0.1));
    let (ix, iy) = (rng.random_range(0.15..=0.35), rng.random_range(-0.1..=0.1));
    let mut base = p.base.1.clone();
    base.pose = Pose::planar(bx, by, 0.0);
    let mut insert = p.insert.1.clone();
    insert.pose = Pose::planar(ix, iy, 0.0);
    let (base_id, insert_id) = (p.base.0.clone(), p.insert.0.clone());
    let g_base = Pose::planar(-(half_x(&base.footprint) + p.grasp_gap), rng.random_range(-0.01..=0.01), 0.0);
    let phi: f64 = match insert.footprint {
        Footprint::Disk { .. } => rng.random_range(-0.3..=0.3),
        Footprint::Rect { .. } => 0.0,
    };
    let r = half_x(&insert.footprint) + p.grasp_gap;
    let g_insert = Pose::planar(r * phi.cos(), r * phi.sin(), phi + PI);
    s.objects.insert(base_id.clone(), base.clone());
    s.objects.insert(insert_id.clone(), insert.clone());

    let mut rec = Recorder::new(s, rng.random())?;
    rec.run(Primitive::Move { arm: LEFT.into(), to: base.pose * g_base })?;
    rec.run(Primitive::Pick { arm: LEFT.into(), object: base_id })?;
    rec.run(Primitive::Move { arm: RIGHT.into(), to: insert.pose * g_insert })?;
    rec.run(Primitive::Pick { arm: RIGHT.into(), object: insert_id })?;
    let j = |rng: &mut ChaCha8Rng| rng.random_range(-0.01..=0.01);
    let base_at = Pose::planar(-p.meet_half_gap + j(rng), j(rng), 0.0);
    let insert_at = Pose::planar(p.meet_half_gap + j(rng), j(rng), 0.0);
    rec.run(Primitive::Approach {
        left: base_at * g_base,
        right: insert_at * g_insert,
    })?;
    rec.dwell(PRE_DWELL);
    rec.skill(&PolicyEmulator::scripted(template.clone(), None))?;
    Ok(rec.finish())
}

/// Radial gap between the cup and either gripper in the handoff.
const HANDOFF_GAP: f64 = 0.005;

fn handoff_demo(rng: &mut ChaCha8Rng) -> Result<DemoTrace, SimError> {
    let mut s = WorldState::desk();
    let (x, y) = (rng.random_range(0.15..=0.35), rng.random_range(-0.1..=0.1));
    let o = cup(Pose::planar(x, y, 0.0));
    let r = 0.03 + HANDOFF_GAP;
    s.objects.insert("o1".into(), o.clone());
    let phi: f64 = rng.random_range(-0.3..=0.3);
    let g_give = Pose::planar(r * phi.cos(), r * phi.sin(), phi + PI);
    let psi: f64 = PI + rng.random_range(-0.3..=0.3);
    let g_recv = Pose::planar(r * psi.cos(), r * psi.sin(), psi + PI);
    let wait = Pose::planar((r + 0.06) * psi.cos(), (r + 0.06) * psi.sin(), psi + PI);

    let mut rec = Recorder::new(s, rng.random())?;
    rec.run(Primitive::Move { arm: RIGHT.into(), to: o.pose * g_give })?;
    rec.run(Primitive::Pick { arm: RIGHT.into(), object: "o1".into() })?;
    let meet = Pose::planar(rng.random_range(-0.01..=0.01), rng.random_range(-0.01..=0.01), 0.0);
    rec.run(Primitive::Approach {
        left: meet * wait,
        right: meet * g_give,
    })?;
    rec.dwell(PRE_DWELL);
    rec.skill(&PolicyEmulator::scripted(SkillTemplate::handoff("o1"), Some(g_recv)))?;
    Ok(rec.finish())
}

/// Retries per demonstration before giving up.
const MAX_ATTEMPTS: usize = 20;

fn expected_pattern(task: DemoTask, trace: &DemoTrace) -> bool {
    match segment(trace) {
        Ok(seq) => {
            seq.contact_rich.len() == 1 && seq.contact_rich[0].eff.is_some() == task.has_effect_graph()
        }
        Err(_) => false,
    }
}

/// `n` demonstrations of `task` from in-distribution initial states.
pub fn scripted_demos(task: DemoTask, n: usize, seed: u64) -> Result<Vec<DemoTrace>, SimError> {
    let params = InsertionDemoParams::for_task(task);
    let template = task.template();
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(0x9e37_79b9_7f4a_7c15).wrapping_add(i as u64));
        let mut ok = None;
        for _ in 0..MAX_ATTEMPTS {
            let attempt = match &params {
                Some(p) => insertion_demo(p, &template, &mut rng),
                None => handoff_demo(&mut rng),
            };
            if let Ok(trace) = attempt {
                if expected_pattern(task, &trace) {
                    ok = Some(trace);
                    break;
                }
            }
        }
        out.push(ok.ok_or_else(|| SimError::DemoFailed {
            task: task.to_string(),
            attempts: MAX_ATTEMPTS,
        })?);
    }
    Ok(out)
}
