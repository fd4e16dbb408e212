//! Scene graphs over grippers, regions and objects, and segmentation of
//! demonstration traces into event-driven graph sequences.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{Footprint, PointCloud, Pose};

/// Closed gripper within this distance of an object footprint holds it.
pub const GRASP_THRESHOLD: f64 = 0.02;
/// Footprints closer than this are in contact.
pub const CONTACT_CLEARANCE: f64 = 0.005;
/// Half-width, in timesteps, of the object-centric window around an event.
pub const OBJECT_WINDOW: usize = 25;
/// Id of the table region.
pub const TABLE: &str = "table";

#[derive(Debug, Error)]
pub enum SceneGraphError {
    #[error("object `{0}` is neither supported nor grasped")]
    Unsupported(String),
    #[error("trace has {0} timesteps, need at least 2")]
    TraceTooShort(usize),
    #[error("timestamps not strictly increasing at index {0}")]
    NonMonotonicTime(usize),
    #[error("undeclared entity `{0}` in trace")]
    UndeclaredEntity(String),
    #[error("timestep {t} is missing entity `{id}`")]
    MissingEntity { t: i64, id: String },
    #[error("no gripper approaches `{object}` around timestep index {index}")]
    NoApproach { object: String, index: usize },
    #[error("trace file line {line}: {msg}")]
    Format { line: usize, msg: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum EntityKind {
    Gripper,
    Region,
    Object,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Entity {
    pub id: String,
    pub kind: EntityKind,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum EdgeLabel {
    AtGrasp,
    AtConf,
    AtPose,
    AtRelativePose,
    Contact,
}

impl EdgeLabel {
    pub fn name(self) -> &'static str {
        match self {
            EdgeLabel::AtGrasp => "AtGrasp",
            EdgeLabel::AtConf => "AtConf",
            EdgeLabel::AtPose => "AtPose",
            EdgeLabel::AtRelativePose => "AtRelativePose",
            EdgeLabel::Contact => "Contact",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Edge {
    pub src: String,
    pub dst: String,
    pub label: EdgeLabel,
    /// Grasp `g` (gripper in object frame), configuration `q`, or pose `p`.
    /// Contact edges carry the identity.
    pub payload: Pose,
}

impl Edge {
    pub fn key(&self) -> (String, String, EdgeLabel) {
        (self.src.clone(), self.dst.clone(), self.label)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SceneGraph {
    pub entities: BTreeMap<String, EntityKind>,
    pub edges: Vec<Edge>,
}

impl SceneGraph {
    pub fn keys(&self) -> BTreeSet<(String, String, EdgeLabel)> {
        self.edges.iter().map(Edge::key).collect()
    }

    /// Contact-mode equality: payloads are ignored.
    pub fn same_mode(&self, other: &SceneGraph) -> bool {
        self.keys() == other.keys()
    }

    pub fn edges_labeled(&self, label: EdgeLabel) -> impl Iterator<Item = &Edge> {
        self.edges.iter().filter(move |e| e.label == label)
    }

    /// Object-object contact or two grippers on one object.
    pub fn is_contact_rich(&self) -> bool {
        if self.edges_labeled(EdgeLabel::Contact).next().is_some() {
            return true;
        }
        let mut holders: BTreeMap<&str, usize> = BTreeMap::new();
        for e in self.edges_labeled(EdgeLabel::AtGrasp) {
            *holders.entry(e.dst.as_str()).or_default() += 1;
        }
        holders.values().any(|&n| n >= 2)
    }
}

impl PartialEq for SceneGraph {
    fn eq(&self, other: &Self) -> bool {
        self.entities == other.entities && self.same_mode(other)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectSpec {
    pub kind: String,
    pub footprint: Footprint,
    #[serde(default = "default_true")]
    pub graspable: bool,
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionSpec {
    pub footprint: Footprint,
    pub pose: Pose,
}

/// Entity declarations shared by every timestep of a trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceHeader {
    pub grippers: Vec<String>,
    pub objects: BTreeMap<String, ObjectSpec>,
    pub table: RegionSpec,
    #[serde(default)]
    pub regions: BTreeMap<String, RegionSpec>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GripperState {
    pub pose: Pose,
    pub closed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Timestep {
    pub t: i64,
    pub grippers: BTreeMap<String, GripperState>,
    pub objects: BTreeMap<String, Pose>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub clouds: BTreeMap<String, PointCloud>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DemoTrace {
    pub header: TraceHeader,
    pub steps: Vec<Timestep>,
}

#[derive(Serialize, Deserialize)]
struct HeaderLine {
    header: TraceHeader,
}

impl DemoTrace {
    pub fn validate(&self) -> Result<(), SceneGraphError> {
        for (i, w) in self.steps.windows(2).enumerate() {
            if w[1].t <= w[0].t {
                return Err(SceneGraphError::NonMonotonicTime(i + 1));
            }
        }
        for s in &self.steps {
            for id in s.grippers.keys() {
                if !self.header.grippers.contains(id) {
                    return Err(SceneGraphError::UndeclaredEntity(id.clone()));
                }
            }
            for id in s.objects.keys() {
                if !self.header.objects.contains_key(id) {
                    return Err(SceneGraphError::UndeclaredEntity(id.clone()));
                }
            }
            for id in &self.header.grippers {
                if !s.grippers.contains_key(id) {
                    return Err(SceneGraphError::MissingEntity { t: s.t, id: id.clone() });
                }
            }
            for id in self.header.objects.keys() {
                if !s.objects.contains_key(id) {
                    return Err(SceneGraphError::MissingEntity { t: s.t, id: id.clone() });
                }
            }
        }
        Ok(())
    }

    /// JSON Lines: a header line followed by one timestep per line.
    pub fn write_jsonl<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        serde_json::to_writer(
            &mut w,
            &HeaderLine {
                header: self.header.clone(),
            },
        )?;
        writeln!(w)?;
        for s in &self.steps {
            serde_json::to_writer(&mut w, s)?;
            writeln!(w)?;
        }
        Ok(())
    }

    pub fn read_jsonl<R: BufRead>(r: R) -> Result<Self, SceneGraphError> {
        let mut header = None;
        let mut steps = Vec::new();
        for (i, line) in r.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let fmt_err = |e: serde_json::Error| SceneGraphError::Format {
                line: i + 1,
                msg: e.to_string(),
            };
            if header.is_none() {
                let h: HeaderLine = serde_json::from_str(&line).map_err(fmt_err)?;
                header = Some(h.header);
            } else {
                steps.push(serde_json::from_str(&line).map_err(fmt_err)?);
            }
        }
        let header = header.ok_or(SceneGraphError::Format {
            line: 1,
            msg: "missing header line".into(),
        })?;
        let trace = DemoTrace { header, steps };
        trace.validate()?;
        Ok(trace)
    }

    pub fn save(&self, path: &Path) -> Result<(), SceneGraphError> {
        let f = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write_jsonl(f)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, SceneGraphError> {
        Self::read_jsonl(std::io::BufReader::new(std::fs::File::open(path)?))
    }
}

/// `Gr(s_t)`: the contact-mode graph of one state.
pub fn graph_of_state(header: &TraceHeader, step: &Timestep) -> Result<SceneGraph, SceneGraphError> {
    let mut entities = BTreeMap::new();
    entities.insert(TABLE.to_string(), EntityKind::Region);
    for r in header.regions.keys() {
        entities.insert(r.clone(), EntityKind::Region);
    }
    for g in &header.grippers {
        entities.insert(g.clone(), EntityKind::Gripper);
    }
    for o in header.objects.keys() {
        entities.insert(o.clone(), EntityKind::Object);
    }

    let mut edges = Vec::new();
    for h in &header.grippers {
        let gs = step.grippers.get(h).ok_or_else(|| SceneGraphError::MissingEntity {
            t: step.t,
            id: h.clone(),
        })?;
        edges.push(Edge {
            src: TABLE.into(),
            dst: h.clone(),
            label: EdgeLabel::AtConf,
            payload: gs.pose,
        });
    }

    let object_pose = |o: &str| {
        step.objects.get(o).copied().ok_or_else(|| SceneGraphError::MissingEntity {
            t: step.t,
            id: o.to_string(),
        })
    };

    // A closed gripper attaches to the single nearest object within threshold.
    let mut grasped: BTreeSet<String> = BTreeSet::new();
    for h in &header.grippers {
        let gs = &step.grippers[h];
        if !gs.closed {
            continue;
        }
        let mut best: Option<(f64, &String)> = None;
        for (o, spec) in &header.objects {
            let p = object_pose(o)?;
            let d = spec.footprint.distance_to_point(&p, gs.pose.xy());
            if d <= GRASP_THRESHOLD + 1e-12 && best.is_none_or(|(bd, _)| d < bd) {
                best = Some((d, o));
            }
        }
        if let Some((_, o)) = best {
            let p = object_pose(o)?;
            edges.push(Edge {
                src: h.clone(),
                dst: o.clone(),
                label: EdgeLabel::AtGrasp,
                payload: p.inverse() * gs.pose,
            });
            grasped.insert(o.clone());
        }
    }

    for (o, spec) in &header.objects {
        if grasped.contains(o) {
            continue;
        }
        let p = object_pose(o)?;
        let region = header
            .regions
            .iter()
            .find(|(_, r)| spec.footprint.inside(&p, &r.footprint, &r.pose, 1e-9));
        if let Some((rid, r)) = region {
            edges.push(Edge {
                src: rid.clone(),
                dst: o.clone(),
                label: EdgeLabel::AtRelativePose,
                payload: r.pose.inverse() * p,
            });
        } else if header
            .table
            .footprint
            .contains_point(&header.table.pose, p.xy(), 1e-9)
        {
            edges.push(Edge {
                src: TABLE.into(),
                dst: o.clone(),
                label: EdgeLabel::AtPose,
                payload: p,
            });
        } else {
            return Err(SceneGraphError::Unsupported(o.clone()));
        }
    }

    let ids: Vec<&String> = header.objects.keys().collect();
    for i in 0..ids.len() {
        for j in i + 1..ids.len() {
            let (a, b) = (ids[i], ids[j]);
            let d = header.objects[a].footprint.distance_to(
                &object_pose(a)?,
                &header.objects[b].footprint,
                &object_pose(b)?,
            );
            if d <= CONTACT_CLEARANCE {
                edges.push(Edge {
                    src: a.clone(),
                    dst: b.clone(),
                    label: EdgeLabel::Contact,
                    payload: Pose::identity(),
                });
            }
        }
    }

    edges.sort_by(|x, y| x.key().cmp(&y.key()));
    Ok(SceneGraph { entities, edges })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Keyframe {
    /// Index into the trace's timestep list.
    pub index: usize,
    pub t: i64,
    pub graph: SceneGraph,
}

/// One contact-rich segment: keyframe indices of G_pre, G_mid and G_eff.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContactRichSpan {
    pub pre: usize,
    pub mid: usize,
    /// Absent when the demonstration ends inside the contact-rich segment.
    pub eff: Option<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EventSequence {
    pub keyframes: Vec<Keyframe>,
    pub contact_rich: Vec<ContactRichSpan>,
    /// Number of timesteps in the source trace.
    pub len: usize,
}

impl EventSequence {
    pub fn times(&self) -> Vec<i64> {
        self.keyframes.iter().map(|k| k.t).collect()
    }

    /// Trace indices covered by keyframe `k` (until the next keyframe).
    pub fn span_of(&self, k: usize) -> std::ops::Range<usize> {
        let start = self.keyframes[k].index;
        let end = self
            .keyframes
            .get(k + 1)
            .map_or(self.len, |n| n.index);
        start..end
    }

    pub fn pre_graph(&self, span: &ContactRichSpan) -> &SceneGraph {
        &self.keyframes[span.pre].graph
    }

    pub fn mid_graph(&self, span: &ContactRichSpan) -> &SceneGraph {
        &self.keyframes[span.mid].graph
    }

    pub fn eff_graph(&self, span: &ContactRichSpan) -> Option<&SceneGraph> {
        span.eff.map(|e| &self.keyframes[e].graph)
    }

    /// Trace indices of the G_pre, G_mid and G_eff phases of a span.
    pub fn phase_indices(
        &self,
        span: &ContactRichSpan,
    ) -> (std::ops::Range<usize>, std::ops::Range<usize>, std::ops::Range<usize>) {
        let pre = self.span_of(span.pre);
        let last_mid = span.eff.map_or(self.keyframes.len() - 1, |e| e - 1);
        let mid = self.keyframes[span.mid].index..self.span_of(last_mid).end;
        let eff = span.eff.map_or(mid.end..mid.end, |e| self.span_of(e));
        (pre, mid, eff)
    }
}

/// `G(D)`: keyframes at every contact-mode change plus the first step.
///
/// Several edges changing within the same timestep yield a single keyframe.
pub fn segment(trace: &DemoTrace) -> Result<EventSequence, SceneGraphError> {
    if trace.steps.len() < 2 {
        return Err(SceneGraphError::TraceTooShort(trace.steps.len()));
    }
    trace.validate()?;
    let mut keyframes: Vec<Keyframe> = Vec::new();
    for (i, step) in trace.steps.iter().enumerate() {
        let g = graph_of_state(&trace.header, step)?;
        if keyframes.last().is_none_or(|k| !k.graph.same_mode(&g)) {
            keyframes.push(Keyframe {
                index: i,
                t: step.t,
                graph: g,
            });
        }
    }

    let mut contact_rich = Vec::new();
    let mut k = 0;
    while k < keyframes.len() {
        if !keyframes[k].graph.is_contact_rich() {
            k += 1;
            continue;
        }
        let mid = k;
        while k < keyframes.len() && keyframes[k].graph.is_contact_rich() {
            k += 1;
        }
        if mid > 0 {
            contact_rich.push(ContactRichSpan {
                pre: mid - 1,
                mid,
                eff: (k < keyframes.len()).then_some(k),
            });
        }
    }

    Ok(EventSequence {
        keyframes,
        contact_rich,
        len: trace.steps.len(),
    })
}

/// Object-centric gripper trajectory around a grasp or release event.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectCentricTrajectory {
    pub object: String,
    pub gripper: String,
    /// Trace index of the first pose.
    pub start: usize,
    /// Gripper poses in the object's frame.
    pub poses: Vec<Pose>,
}

/// Returns the gripper trajectory in `object`'s frame over the window around
/// `event` and the contact pose `g_o` where the gripper comes closest.
pub fn extract_grasp(
    trace: &DemoTrace,
    object: &str,
    event: usize,
) -> Result<(ObjectCentricTrajectory, Pose), SceneGraphError> {
    let spec = trace
        .header
        .objects
        .get(object)
        .ok_or_else(|| SceneGraphError::UndeclaredEntity(object.to_string()))?;
    let no_approach = || SceneGraphError::NoApproach {
        object: object.to_string(),
        index: event,
    };
    if event >= trace.steps.len() {
        return Err(no_approach());
    }
    let holder = |i: usize| -> Result<BTreeSet<String>, SceneGraphError> {
        let g = graph_of_state(&trace.header, &trace.steps[i])?;
        Ok(g.edges_labeled(EdgeLabel::AtGrasp)
            .filter(|e| e.dst == object)
            .map(|e| e.src.clone())
            .collect())
    };
    let now = holder(event)?;
    let before = if event > 0 { holder(event - 1)? } else { BTreeSet::new() };
    let after = if event + 1 < trace.steps.len() {
        holder(event + 1)?
    } else {
        BTreeSet::new()
    };
    let gripper = now
        .symmetric_difference(&before)
        .chain(now.symmetric_difference(&after))
        .next()
        .cloned()
        .ok_or_else(no_approach)?;

    let start = event.saturating_sub(OBJECT_WINDOW);
    let end = (event + OBJECT_WINDOW + 1).min(trace.steps.len());
    let mut poses = Vec::with_capacity(end - start);
    let mut best = (f64::INFINITY, f64::INFINITY, 0usize);
    for i in start..end {
        let step = &trace.steps[i];
        let p_o = step.objects[object];
        let p_h = step.grippers[&gripper].pose;
        let local = p_o.inverse() * p_h;
        let d = spec.footprint.distance_to_point(&p_o, p_h.xy());
        let key = (d, local.translation.norm());
        if key.0 < best.0 || (key.0 == best.0 && key.1 < best.1) {
            best = (key.0, key.1, poses.len());
        }
        poses.push(local);
    }
    if best.0 > GRASP_THRESHOLD + 1e-12 {
        return Err(no_approach());
    }
    let g = poses[best.2];
    Ok((
        ObjectCentricTrajectory {
            object: object.to_string(),
            gripper,
            start,
            poses,
        },
        g,
    ))
}
