//! Scene graphs to literals, and segmented skills to `BiOperation` actions.

use std::collections::{BTreeMap, BTreeSet};

use super::{ActionSchema, Atom, Literal, SymbolicError, Term, TypedVar};
use crate::geometry::Pose;
use crate::scenegraph::{
    ContactRichSpan, EdgeLabel, EntityKind, EventSequence, SceneGraph, TraceHeader,
};

/// Predicates produced from scene-graph edges.
pub const CONTACT_PREDICATES: [&str; 5] = ["AtConf", "AtGrasp", "AtPose", "AtRelativePose", "Contact"];

/// Payloads closer than this reuse the pre-contact handle.
const SAME_PAYLOAD: f64 = 1e-6;

pub const LEFT_GRIPPER_TYPE: &str = "left-gripper";
pub const RIGHT_GRIPPER_TYPE: &str = "right-gripper";

/// Ground literals whose continuous arguments are handles into `bindings`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct GroundLiterals {
    pub literals: BTreeSet<Literal>,
    pub bindings: BTreeMap<String, Pose>,
}

impl GroundLiterals {
    pub fn len(&self) -> usize {
        self.literals.len()
    }

    pub fn is_empty(&self) -> bool {
        self.literals.is_empty()
    }

    /// Every payload handle mentioned by a literal is bound.
    pub fn handles_resolve(&self) -> bool {
        self.literals.iter().all(|l| {
            payload_arg(&l.atom.predicate)
                .is_none_or(|i| self.bindings.contains_key(l.atom.args[i].name()))
        })
    }
}

fn payload_arg(predicate: &str) -> Option<usize> {
    match predicate {
        "AtConf" | "AtPose" => Some(1),
        "AtGrasp" | "AtRelativePose" => Some(2),
        _ => None,
    }
}

fn handle_type(predicate: &str) -> &'static str {
    match predicate {
        "AtConf" => "conf",
        "AtGrasp" => "grasp",
        _ => "pose",
    }
}

struct Raw {
    predicate: &'static str,
    entities: Vec<String>,
    handle: Option<(String, Pose)>,
}

fn raw_literals(g: &SceneGraph) -> Result<Vec<Raw>, SymbolicError> {
    let mut grasps_per_object: BTreeMap<&str, usize> = BTreeMap::new();
    for e in g.edges_labeled(EdgeLabel::AtGrasp) {
        *grasps_per_object.entry(&e.dst).or_default() += 1;
    }
    let kind = |id: &str| g.entities.get(id).copied();
    let mut out = Vec::with_capacity(g.edges.len());
    for e in &g.edges {
        let ok = match e.label {
            EdgeLabel::AtConf => kind(&e.src) == Some(EntityKind::Region) && kind(&e.dst) == Some(EntityKind::Gripper),
            EdgeLabel::AtGrasp => kind(&e.src) == Some(EntityKind::Gripper) && kind(&e.dst) == Some(EntityKind::Object),
            EdgeLabel::AtPose | EdgeLabel::AtRelativePose => {
                kind(&e.src) == Some(EntityKind::Region) && kind(&e.dst) == Some(EntityKind::Object)
            }
            EdgeLabel::Contact => kind(&e.src) == Some(EntityKind::Object) && kind(&e.dst) == Some(EntityKind::Object),
        };
        if !ok {
            return Err(SymbolicError::InvalidEdge {
                src: e.src.clone(),
                dst: e.dst.clone(),
                label: e.label.name().to_string(),
            });
        }
        let raw = match e.label {
            EdgeLabel::AtConf => Raw {
                predicate: "AtConf",
                entities: vec![e.dst.clone()],
                handle: Some((format!("q_{}", e.dst), e.payload)),
            },
            EdgeLabel::AtGrasp => {
                let name = if grasps_per_object[e.dst.as_str()] > 1 {
                    format!("g_{}_{}", e.dst, e.src)
                } else {
                    format!("g_{}", e.dst)
                };
                Raw {
                    predicate: "AtGrasp",
                    entities: vec![e.src.clone(), e.dst.clone()],
                    handle: Some((name, e.payload)),
                }
            }
            EdgeLabel::AtPose => Raw {
                predicate: "AtPose",
                entities: vec![e.dst.clone()],
                handle: Some((format!("p_{}", e.dst), e.payload)),
            },
            EdgeLabel::AtRelativePose => Raw {
                predicate: "AtRelativePose",
                entities: vec![e.src.clone(), e.dst.clone()],
                handle: Some((format!("p_{}", e.dst), e.payload)),
            },
            EdgeLabel::Contact => Raw {
                predicate: "Contact",
                entities: vec![e.src.clone(), e.dst.clone()],
                handle: None,
            },
        };
        out.push(raw);
    }
    Ok(out)
}

fn atom_of(r: &Raw, handle: Option<&str>) -> Atom {
    let mut args: Vec<&str> = r.entities.iter().map(String::as_str).collect();
    args.extend(handle);
    Atom::ground(r.predicate, &args)
}

/// `Pr(G)`: one positive literal per edge, with unprimed payload handles.
pub fn predicates_of_graph(g: &SceneGraph) -> Result<GroundLiterals, SymbolicError> {
    let mut out = GroundLiterals::default();
    for r in raw_literals(g)? {
        let h = r.handle.as_ref().map(|(n, p)| {
            out.bindings.insert(n.clone(), *p);
            n.as_str()
        });
        out.literals.insert(Literal::pos(atom_of(&r, h)));
    }
    Ok(out)
}

/// Literals of an effect graph. Payloads that did not change keep the
/// handle they have in `pre`; changed or new ones get a primed handle.
pub fn effect_literals(eff: &SceneGraph, pre: &GroundLiterals) -> Result<GroundLiterals, SymbolicError> {
    let mut out = GroundLiterals::default();
    for r in raw_literals(eff)? {
        let h = match &r.handle {
            None => None,
            Some((name, p)) => {
                let unchanged = pre.bindings.get(name).is_some_and(|q| q.approx_eq(p, SAME_PAYLOAD))
                    && pre.literals.contains(&Literal::pos(atom_of(&r, Some(name))));
                let name = if unchanged { name.clone() } else { format!("{name}'") };
                out.bindings.insert(name.clone(), *p);
                Some(name)
            }
        };
        out.literals.insert(Literal::pos(atom_of(&r, h.as_deref())));
    }
    Ok(out)
}

/// `(eff \ pre) ∪ ¬(pre \ eff)` over scene-graph predicates.
pub fn diff_effects(pre: &BTreeSet<Literal>, eff: &BTreeSet<Literal>) -> BTreeSet<Literal> {
    let keep = |l: &&Literal| CONTACT_PREDICATES.contains(&l.atom.predicate.as_str());
    eff.difference(pre)
        .filter(keep)
        .cloned()
        .chain(pre.difference(eff).filter(keep).map(Literal::negated))
        .collect()
}

/// An abstracted bimanual skill.
#[derive(Debug, Clone)]
pub struct SkillSchema {
    pub id: String,
    pub g_pre: Option<SceneGraph>,
    pub g_mid: SceneGraph,
    /// Absent when the demonstration ends in contact.
    pub g_eff: Option<SceneGraph>,
    pub policy: String,
    pub generator: String,
    pub validator: String,
    /// Domain type of each entity the schema mentions.
    pub entity_types: BTreeMap<String, String>,
}

impl SkillSchema {
    /// Builds a schema from one contact-rich span of a segmented demonstration.
    pub fn from_span(id: &str, seq: &EventSequence, span: &ContactRichSpan, header: &TraceHeader) -> Self {
        Self {
            id: id.to_string(),
            g_pre: Some(seq.pre_graph(span).clone()),
            g_mid: seq.mid_graph(span).clone(),
            g_eff: seq.eff_graph(span).cloned(),
            policy: format!("{id}/policy"),
            generator: format!("{id}/generator"),
            validator: format!("{id}/validator"),
            entity_types: entity_types(header),
        }
    }

    pub fn skill_type(&self) -> String {
        format!("{}-skill", self.id)
    }
}

/// Gripper ids containing `left` are typed as left grippers; objects by kind.
pub fn entity_types(header: &TraceHeader) -> BTreeMap<String, String> {
    let mut out = BTreeMap::new();
    for g in &header.grippers {
        let ty = if g.contains("left") { LEFT_GRIPPER_TYPE } else { RIGHT_GRIPPER_TYPE };
        out.insert(g.clone(), ty.to_string());
    }
    for (o, spec) in &header.objects {
        out.insert(o.clone(), spec.kind.clone());
    }
    for r in header.regions.keys() {
        out.insert(r.clone(), "region".to_string());
    }
    out
}

/// Lifts the skill's pre/effect graphs into a `BiOperation` action schema.
///
/// Negated `AtConf` literals are dropped: a gripper's configuration is
/// replaced, not retracted.
pub fn compile_bioperation(s: &SkillSchema) -> Result<ActionSchema, SymbolicError> {
    let g_pre = s
        .g_pre
        .as_ref()
        .ok_or_else(|| SymbolicError::MissingPreGraph(s.id.clone()))?;
    let pre = predicates_of_graph(g_pre)?;
    let effect_geom = match &s.g_eff {
        Some(g) => {
            let eff = effect_literals(g, &pre)?;
            diff_effects(&pre.literals, &eff.literals)
                .into_iter()
                .filter(|l| l.positive || l.atom.predicate != "AtConf")
                .collect()
        }
        None => BTreeSet::new(),
    };

    let ty_of = |e: &str| s.entity_types.get(e).cloned().unwrap_or_else(|| super::OBJECT_TYPE.to_string());
    let mut objects = BTreeSet::new();
    let mut grippers = BTreeSet::new();
    let mut regions = BTreeSet::new();
    let mut handles: BTreeMap<(u8, bool), BTreeSet<String>> = BTreeMap::new();
    for l in pre.literals.iter().chain(&effect_geom) {
        let a = &l.atom;
        let payload = payload_arg(&a.predicate);
        for (i, t) in a.args.iter().enumerate() {
            let n = t.name().to_string();
            if Some(i) == payload {
                let rank = match handle_type(&a.predicate) {
                    "conf" => 0,
                    "grasp" => 1,
                    _ => 2,
                };
                handles.entry((rank, n.ends_with('\''))).or_default().insert(n);
                continue;
            }
            match g_pre.entities.get(&n) {
                Some(EntityKind::Gripper) => grippers.insert(n),
                Some(EntityKind::Region) => regions.insert(n),
                _ => objects.insert(n),
            };
        }
    }
    let mut grippers: Vec<String> = grippers.into_iter().collect();
    grippers.sort_by_key(|g| (ty_of(g) != LEFT_GRIPPER_TYPE, g.clone()));

    let mut params = vec![TypedVar::new("a", &s.skill_type())];
    params.extend(objects.iter().map(|o| TypedVar::new(o, &ty_of(o))));
    params.extend(grippers.iter().map(|g| TypedVar::new(g, &ty_of(g))));
    params.extend(regions.iter().map(|r| TypedVar::new(r, "region")));
    for ((rank, _), names) in &handles {
        let ty = ["conf", "grasp", "pose"][*rank as usize];
        params.extend(names.iter().map(|n| TypedVar::new(n, ty)));
    }

    let lift = |l: &Literal| Literal {
        atom: Atom::new(
            &l.atom.predicate,
            l.atom.args.iter().map(|t| Term::Var(t.name().to_string())).collect(),
        ),
        positive: l.positive,
    };
    let precondition: Vec<Literal> = pre.literals.iter().map(lift).collect();
    let mut effect: Vec<Literal> = effect_geom.iter().map(lift).collect();
    effect.push(Literal::pos(Atom::new("DoneBiOp", vec![Term::parse("?a")])));

    let mut constraint = Vec::new();
    if grippers.len() == 2 {
        let q = |g: &str| {
            pre.literals
                .iter()
                .find(|l| l.atom.predicate == "AtConf" && l.atom.args[0].name() == g)
                .map(|l| Term::Var(l.atom.args[1].name().to_string()))
        };
        if let (Some(ql), Some(qr)) = (q(&grippers[0]), q(&grippers[1])) {
            constraint.push(Literal::pos(Atom::new(
                "SafeBiOp",
                vec![
                    Term::parse("?a"),
                    Term::Var(grippers[0].clone()),
                    Term::Var(grippers[1].clone()),
                    ql,
                    qr,
                ],
            )));
        }
    }

    Ok(ActionSchema {
        name: format!("biop-{}", s.id),
        parameters: params,
        precondition,
        effect,
        constraint,
    })
}
