#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};

use svip::geometry::{Footprint, Pose};
use svip::scenegraph::{DemoTrace, GripperState, ObjectSpec, RegionSpec, Timestep, TraceHeader};

pub fn header() -> TraceHeader {
    let mut objects = BTreeMap::new();
    objects.insert(
        "o1".to_string(),
        ObjectSpec {
            kind: "cup".into(),
            footprint: Footprint::Disk { radius: 0.02 },
            graspable: true,
        },
    );
    objects.insert(
        "o2".to_string(),
        ObjectSpec {
            kind: "pole".into(),
            footprint: Footprint::Rect { half_x: 0.02, half_y: 0.02 },
            graspable: true,
        },
    );
    TraceHeader {
        grippers: vec!["left".into(), "right".into()],
        objects,
        table: RegionSpec {
            footprint: Footprint::Rect { half_x: 0.6, half_y: 0.4 },
            pose: Pose::identity(),
        },
        regions: BTreeMap::new(),
    }
}

/// Contact events of a scripted handoff: right grasps, left grasps, right
/// releases.
#[derive(Debug, Clone, Copy)]
pub struct Handoff {
    pub len: i64,
    pub right_grasp: i64,
    pub left_grasp: i64,
    pub right_release: i64,
    /// Where the object sits.
    pub at: [f64; 2],
    /// Per-step drift of the free gripper; moves never change contacts.
    pub wobble: f64,
}

/// A handoff trace whose contact mode changes exactly at the given times.
/// Grippers touch the object when grasping and park 0.3 m away otherwise.
pub fn handoff_trace(h: Handoff) -> DemoTrace {
    let o = Pose::planar(h.at[0], h.at[1], 0.0);
    let side = |dx: f64| Pose::planar(h.at[0] + dx, h.at[1], 0.0);
    let steps = (0..h.len)
        .map(|t| {
            let right_holds = t >= h.right_grasp && t < h.right_release;
            let left_holds = t >= h.left_grasp;
            let drift = h.wobble * (t as f64 * 0.37).sin();
            let mut grippers = BTreeMap::new();
            grippers.insert(
                "right".to_string(),
                GripperState {
                    pose: if right_holds { side(0.025) } else { side(0.3 + drift) },
                    closed: right_holds,
                },
            );
            grippers.insert(
                "left".to_string(),
                GripperState {
                    pose: if left_holds { side(-0.025) } else { side(-0.3 - drift) },
                    closed: left_holds,
                },
            );
            let mut objects = BTreeMap::new();
            objects.insert("o1".to_string(), o);
            objects.insert("o2".to_string(), Pose::planar(-0.4, 0.3, 0.0));
            Timestep {
                t,
                grippers,
                objects,
                clouds: BTreeMap::new(),
            }
        })
        .collect();
    DemoTrace { header: header(), steps }
}

/// The handoff BiOperation written out by hand: parameters, then
/// precondition and effect literals as `(polarity, predicate, args)`.
pub const HANDOFF_PARAMS: [&str; 10] = ["a", "o1", "hl", "hr", "ql", "qr", "ql'", "qr'", "g", "g'"];
pub const HANDOFF_PRE: [(bool, &str, &[&str]); 3] = [
    (true, "AtGrasp", &["hr", "o1", "g"]),
    (true, "AtConf", &["hl", "ql"]),
    (true, "AtConf", &["hr", "qr"]),
];
pub const HANDOFF_EFF: [(bool, &str, &[&str]); 5] = [
    (true, "AtGrasp", &["hl", "o1", "g'"]),
    (false, "AtGrasp", &["hr", "o1", "g"]),
    (true, "AtConf", &["hl", "ql'"]),
    (true, "AtConf", &["hr", "qr'"]),
    (true, "DoneBiOp", &["a"]),
];

type Lit = (bool, String, Vec<String>);

fn lits(ls: &[svip::symbolic::Literal]) -> Vec<Lit> {
    ls.iter()
        .map(|l| {
            (
                l.positive,
                l.atom.predicate.clone(),
                l.atom.args.iter().map(|t| t.name().to_string()).collect(),
            )
        })
        .collect()
}

/// Finds a bijective renaming of the reference variables under which the
/// reference literal sets equal `pre` and `eff`.
pub fn match_up_to_renaming(
    params: &[String],
    pre: &[svip::symbolic::Literal],
    eff: &[svip::symbolic::Literal],
    ref_params: &[&str],
    ref_pre: &[(bool, &str, &[&str])],
    ref_eff: &[(bool, &str, &[&str])],
) -> Option<BTreeMap<String, String>> {
    let owned = |r: &[(bool, &str, &[&str])]| -> Vec<Lit> {
        r.iter()
            .map(|(p, n, a)| (*p, n.to_string(), a.iter().map(|s| s.to_string()).collect()))
            .collect()
    };
    let (pre, eff) = (lits(pre), lits(eff));
    let (rp, re) = (owned(ref_pre), owned(ref_eff));
    if pre.len() != rp.len() || eff.len() != re.len() || params.len() != ref_params.len() {
        return None;
    }
    // Reference literal i must land on a distinct target literal in the same block.
    let goals: Vec<(&Lit, &Vec<Lit>)> = rp.iter().map(|l| (l, &pre)).chain(re.iter().map(|l| (l, &eff))).collect();
    let mut used = vec![BTreeSet::new(), BTreeSet::new()];
    let mut sigma = BTreeMap::new();
    fn go(
        k: usize,
        goals: &[(&Lit, &Vec<Lit>)],
        split: usize,
        used: &mut Vec<BTreeSet<usize>>,
        sigma: &mut BTreeMap<String, String>,
    ) -> bool {
        let Some((r, targets)) = goals.get(k) else { return true };
        let block = usize::from(k >= split);
        for (j, t) in targets.iter().enumerate() {
            if used[block].contains(&j) || t.0 != r.0 || t.1 != r.1 || t.2.len() != r.2.len() {
                continue;
            }
            let mut added = Vec::new();
            let mut ok = true;
            for (x, y) in r.2.iter().zip(&t.2) {
                match sigma.get(x) {
                    Some(v) if v == y => {}
                    Some(_) => ok = false,
                    None if sigma.values().any(|v| v == y) => ok = false,
                    None => {
                        sigma.insert(x.clone(), y.clone());
                        added.push(x.clone());
                    }
                }
                if !ok {
                    break;
                }
            }
            if ok {
                used[block].insert(j);
                if go(k + 1, goals, split, used, sigma) {
                    return true;
                }
                used[block].remove(&j);
            }
            for x in added {
                sigma.remove(&x);
            }
        }
        false
    }
    if !go(0, &goals, rp.len(), &mut used, &mut sigma) {
        return None;
    }
    let image: BTreeSet<&String> = sigma.values().collect();
    let wanted: BTreeSet<&String> = params.iter().collect();
    let all_mapped = ref_params.iter().all(|p| sigma.contains_key(*p));
    (all_mapped && image == wanted).then_some(sigma)
}

/// Generators fitted briefly on scripted demos; quality is irrelevant to the
/// structural properties tested with them.
pub fn quick_generators(
    task: svip::sim::DemoTask,
    demos: usize,
    epochs: usize,
) -> (svip::generator::SkillGenerators, svip::pipeline::SkillExamples) {
    use svip::generator::HyperParams;
    use svip::pipeline::{skill_examples, train_skill_generators, GeneratorSettings};

    let traces = svip::sim::scripted_demos(task, demos, 3).unwrap();
    let ex = skill_examples(&traces, &task.template()).unwrap();
    let hp = HyperParams {
        hidden: vec![32, 32],
        epochs,
        ..HyperParams::default()
    };
    let settings = GeneratorSettings {
        config: hp.clone(),
        trajectory: hp,
        ..GeneratorSettings::default()
    };
    let (gens, _) = train_skill_generators(task.as_str(), &ex, &settings).unwrap();
    (gens, ex)
}

/// The insertion skill trained with default settings on 50 demonstrations.
pub fn trained_insertion() -> svip::pipeline::TrainedSkill {
    let demos = svip::sim::scripted_demos(svip::sim::DemoTask::Insertion, 50, 1).unwrap();
    svip::pipeline::train_skill(
        "insert",
        svip::sim::DemoTask::Insertion,
        &demos,
        &svip::pipeline::TrainSettings::default(),
    )
    .unwrap()
}

/// Reach class of a table point: which arms can reach it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Reach {
    pub left: bool,
    pub right: bool,
}

/// Breadth-first search over an abstract model of the desk insertion task:
/// arms move between spots, pick and place whole objects, then pair up,
/// run the skill and retreat. Spots are the two initial object positions
/// and one placement spot per reach class. Returns the optimal plan length.
pub fn desk_bfs_length(socket: Reach, peg: Reach) -> Option<usize> {
    use std::collections::{HashSet, VecDeque};

    // Spots: 0 socket start, 1 peg start, 2 left-only, 3 right-only, 4 shared, 5 home.
    let spots = [
        socket,
        peg,
        Reach { left: true, right: false },
        Reach { left: false, right: true },
        Reach { left: true, right: true },
    ];
    const HOME: u8 = 5;
    #[derive(Clone, PartialEq, Eq, Hash)]
    struct S {
        arm: [u8; 2],
        /// Spot of each object, or 10 + arm while held.
        obj: [u8; 2],
        paired: bool,
        done: bool,
        retreated: bool,
    }
    let reaches = |arm: usize, spot: u8| {
        let r = spots[spot as usize];
        if arm == 0 { r.left } else { r.right }
    };
    let start = S {
        arm: [HOME, HOME],
        obj: [0, 1],
        paired: false,
        done: false,
        retreated: false,
    };
    let mut seen = HashSet::from([start.clone()]);
    let mut queue = VecDeque::from([(start, 0usize)]);
    while let Some((s, d)) = queue.pop_front() {
        if s.retreated {
            return Some(d);
        }
        let mut next = Vec::new();
        if s.done {
            let mut n = s.clone();
            n.retreated = true;
            next.push(n);
        } else if s.paired {
            let mut n = s.clone();
            n.done = true;
            next.push(n);
        } else {
            // The left arm holds the socket, the right arm the peg.
            if s.obj == [10, 11] {
                let mut n = s.clone();
                n.paired = true;
                next.push(n);
            }
            for arm in 0..2 {
                for spot in 0..spots.len() as u8 {
                    let held_elsewhere = s.obj.iter().any(|&o| o == spot);
                    let holding = s.obj.contains(&(10 + arm as u8));
                    if reaches(arm, spot) && s.arm[arm] != spot && !(holding && held_elsewhere) {
                        let mut n = s.clone();
                        n.arm[arm] = spot;
                        next.push(n);
                    }
                }
                let holding = s.obj.iter().position(|&o| o == 10 + arm as u8);
                match holding {
                    None => {
                        for o in 0..2 {
                            if s.obj[o] == s.arm[arm] {
                                let mut n = s.clone();
                                n.obj[o] = 10 + arm as u8;
                                next.push(n);
                            }
                        }
                    }
                    Some(o) if s.arm[arm] != HOME => {
                        let mut n = s.clone();
                        n.obj[o] = s.arm[arm];
                        next.push(n);
                    }
                    Some(_) => {}
                }
            }
        }
        for n in next {
            if seen.insert(n.clone()) {
                queue.push_back((n, d + 1));
            }
        }
    }
    None
}

pub fn reach_of(p: nalgebra::Vector2<f64>) -> Reach {
    Reach {
        left: svip::validator::test_reachable(svip::sim::LEFT, p),
        right: svip::validator::test_reachable(svip::sim::RIGHT, p),
    }
}
