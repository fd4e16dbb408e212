//! Grounding by relaxed reachability and shortest-skeleton search.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet, VecDeque};
use std::time::Instant;

use crate::symbolic::{ActionSchema, Atom, Domain, Literal, Term};

use super::GroundAction;

/// Predicates whose facts make up the context of a fluent test.
pub const PLACEMENT_PREDICATES: [&str; 2] = ["AtPose", "AtRelativePose"];

/// Typed objects and facts that grounding draws from.
#[derive(Debug, Clone, Default)]
pub struct Universe {
    /// Object name to type.
    pub objects: BTreeMap<String, String>,
    pub facts: BTreeSet<Atom>,
}

/// A fluent test known to fail for matching arguments in one placement context.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Blame {
    pub predicate: String,
    /// `None` matches any argument.
    pub args: Vec<Option<String>>,
    pub context: Vec<Atom>,
}

impl Blame {
    fn matches(&self, atom: &Atom) -> bool {
        atom.predicate == self.predicate
            && atom.args.len() == self.args.len()
            && atom
                .args
                .iter()
                .zip(&self.args)
                .all(|(t, a)| a.as_deref().is_none_or(|a| a == t.name()))
    }
}

#[derive(Debug, Clone)]
pub struct Op {
    pub action: GroundAction,
    /// Fluent preconditions.
    pub pre: Vec<u32>,
    pub neg: Vec<u32>,
    pub add: Vec<u32>,
    pub del: Vec<u32>,
    /// Static preconditions, kept for binding and validation.
    pub statics: Vec<Atom>,
    pub constraints: Vec<Atom>,
}

/// Interned ground atoms with their functional keys.
#[derive(Debug, Default)]
pub struct AtomTable {
    atoms: Vec<Atom>,
    index: HashMap<Atom, u32>,
    keys: Vec<Option<u32>>,
    key_index: HashMap<(String, Vec<String>), u32>,
}

impl AtomTable {
    fn intern(&mut self, a: &Atom, functional: &BTreeMap<String, usize>) -> u32 {
        if let Some(&i) = self.index.get(a) {
            return i;
        }
        let id = self.atoms.len() as u32;
        let key = functional.get(&a.predicate).map(|&n| {
            let k = (
                a.predicate.clone(),
                a.args.iter().take(n).map(|t| t.name().to_string()).collect(),
            );
            let next = self.key_index.len() as u32;
            *self.key_index.entry(k).or_insert(next)
        });
        self.atoms.push(a.clone());
        self.index.insert(a.clone(), id);
        self.keys.push(key);
        id
    }

    pub fn atom(&self, id: u32) -> &Atom {
        &self.atoms[id as usize]
    }
}

/// Predicates changed by some action.
pub fn fluent_predicates(domain: &Domain) -> BTreeSet<String> {
    domain
        .actions
        .iter()
        .flat_map(|a| a.effect.iter().map(|l| l.atom.predicate.clone()))
        .collect()
}

fn bind_atom(a: &Atom, b: &BTreeMap<String, String>) -> Atom {
    a.substitute(b)
}

/// Extends `binding` so that every atom in `pats` matches a fact.
fn join(
    pats: &[&Atom],
    by_pred: &HashMap<&str, Vec<&Atom>>,
    binding: &mut BTreeMap<String, String>,
    out: &mut Vec<BTreeMap<String, String>>,
) {
    let Some((first, rest)) = pats.split_first() else {
        out.push(binding.clone());
        return;
    };
    let Some(cands) = by_pred.get(first.predicate.as_str()) else {
        return;
    };
    'facts: for f in cands {
        if f.args.len() != first.args.len() {
            continue;
        }
        let mut added = Vec::new();
        for (t, v) in first.args.iter().zip(&f.args) {
            match t {
                Term::Const(c) if c != v.name() => {
                    for k in &added {
                        binding.remove(k);
                    }
                    continue 'facts;
                }
                Term::Const(_) => {}
                Term::Var(x) => match binding.get(x) {
                    Some(b) if b != v.name() => {
                        for k in &added {
                            binding.remove(k);
                        }
                        continue 'facts;
                    }
                    Some(_) => {}
                    None => {
                        binding.insert(x.clone(), v.name().to_string());
                        added.push(x.clone());
                    }
                },
            }
        }
        join(rest, by_pred, binding, out);
        for k in &added {
            binding.remove(k);
        }
    }
}

/// Every binding of `params` under which the positive atoms in `pats` are
/// facts and each parameter's object has a compatible type.
pub fn bindings(
    domain: &Domain,
    universe: &Universe,
    params: &[crate::symbolic::TypedVar],
    pats: &[&Atom],
    by_pred: &HashMap<&str, Vec<&Atom>>,
) -> Vec<BTreeMap<String, String>> {
    let mut partial = Vec::new();
    join(pats, by_pred, &mut BTreeMap::new(), &mut partial);
    let mut out = Vec::new();
    for b in partial {
        extend_typed(domain, universe, params, 0, &mut b.clone(), &mut out);
    }
    out
}

fn extend_typed(
    domain: &Domain,
    universe: &Universe,
    params: &[crate::symbolic::TypedVar],
    i: usize,
    b: &mut BTreeMap<String, String>,
    out: &mut Vec<BTreeMap<String, String>>,
) {
    let Some(p) = params.get(i) else {
        out.push(b.clone());
        return;
    };
    let typed = |o: &str| {
        universe
            .objects
            .get(o)
            .is_some_and(|t| domain.is_subtype(t, &p.ty))
    };
    if let Some(v) = b.get(&p.name) {
        if typed(v) {
            extend_typed(domain, universe, params, i + 1, b, out);
        }
        return;
    }
    let names: Vec<String> = universe.objects.keys().filter(|o| typed(o)).cloned().collect();
    for o in names {
        b.insert(p.name.clone(), o);
        extend_typed(domain, universe, params, i + 1, b, out);
    }
    b.remove(&p.name);
}

pub fn index_facts<'a>(facts: impl IntoIterator<Item = &'a Atom>) -> HashMap<&'a str, Vec<&'a Atom>> {
    let mut m: HashMap<&str, Vec<&Atom>> = HashMap::new();
    for f in facts {
        m.entry(f.predicate.as_str()).or_default().push(f);
    }
    m
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SearchOutcome {
    Found(Vec<usize>),
    /// Every reachable state was expanded.
    Exhausted,
    Budget,
    Timeout,
}

/// The grounded task: every operator reachable under delete relaxation.
pub struct Task {
    pub table: AtomTable,
    pub ops: Vec<Op>,
    pub init: Vec<u32>,
    pub goal_pos: Vec<u32>,
    pub goal_neg: Vec<u32>,
    /// Static goal literals that do not hold.
    pub goal_unmet: bool,
}

fn positive_pats(a: &ActionSchema) -> Vec<&Atom> {
    a.precondition.iter().filter(|l| l.positive).map(|l| &l.atom).collect()
}

/// Grounds `domain` over `universe`, starting from its fluent facts.
pub fn ground(domain: &Domain, universe: &Universe, goal: &[Literal], node_budget: usize) -> Result<Task, usize> {
    let fluent = fluent_predicates(domain);
    let statics: BTreeSet<&Atom> = universe.facts.iter().filter(|a| !fluent.contains(&a.predicate)).collect();
    let mut reached: BTreeSet<Atom> = universe.facts.clone();
    let mut table = AtomTable::default();
    let mut ops = Vec::new();
    let mut seen: HashSet<(usize, Vec<String>)> = HashSet::new();
    loop {
        let mut fresh = Vec::new();
        {
            let by_pred = index_facts(reached.iter());
            for (ai, a) in domain.actions.iter().enumerate() {
                for b in bindings(domain, universe, &a.parameters, &positive_pats(a), &by_pred) {
                    let args: Vec<String> = a.parameters.iter().map(|p| b[&p.name].clone()).collect();
                    if !seen.insert((ai, args.clone())) {
                        continue;
                    }
                    if seen.len() > node_budget {
                        return Err(seen.len());
                    }
                    let mut op = Op {
                        action: GroundAction {
                            name: a.name.clone(),
                            args,
                        },
                        pre: Vec::new(),
                        neg: Vec::new(),
                        add: Vec::new(),
                        del: Vec::new(),
                        statics: Vec::new(),
                        constraints: a.constraint.iter().map(|l| bind_atom(&l.atom, &b)).collect(),
                    };
                    let mut ok = true;
                    for l in &a.precondition {
                        let g = bind_atom(&l.atom, &b);
                        if fluent.contains(&g.predicate) {
                            let id = table.intern(&g, &domain.functional);
                            if l.positive { op.pre.push(id) } else { op.neg.push(id) }
                        } else if l.positive {
                            op.statics.push(g);
                        } else if statics.contains(&g) {
                            ok = false;
                        }
                    }
                    if !ok {
                        continue;
                    }
                    for l in &a.effect {
                        let g = bind_atom(&l.atom, &b);
                        let id = table.intern(&g, &domain.functional);
                        if l.positive {
                            op.add.push(id);
                            fresh.push(g);
                        } else {
                            op.del.push(id);
                        }
                    }
                    ops.push(op);
                }
            }
        }
        let before = reached.len();
        reached.extend(fresh);
        if reached.len() == before {
            break;
        }
    }

    let mut init: Vec<u32> = universe
        .facts
        .iter()
        .filter(|a| fluent.contains(&a.predicate))
        .map(|a| table.intern(a, &domain.functional))
        .collect();
    init.sort_unstable();
    init.dedup();
    let mut goal_pos = Vec::new();
    let mut goal_neg = Vec::new();
    let mut goal_unmet = false;
    for l in goal {
        if fluent.contains(&l.atom.predicate) {
            let id = table.intern(&l.atom, &domain.functional);
            if l.positive { goal_pos.push(id) } else { goal_neg.push(id) }
        } else if universe.facts.contains(&l.atom) != l.positive {
            goal_unmet = true;
        }
    }
    Ok(Task {
        table,
        ops,
        init,
        goal_pos,
        goal_neg,
        goal_unmet,
    })
}

impl Task {
    pub fn table_atom(&self, id: u32) -> &Atom {
        self.table.atom(id)
    }

    fn satisfies_goal(&self, s: &[u32]) -> bool {
        !self.goal_unmet
            && self.goal_pos.iter().all(|g| s.binary_search(g).is_ok())
            && self.goal_neg.iter().all(|g| s.binary_search(g).is_err())
    }

    fn applicable(&self, op: &Op, s: &[u32]) -> bool {
        op.pre.iter().all(|p| s.binary_search(p).is_ok()) && op.neg.iter().all(|p| s.binary_search(p).is_err())
    }

    pub fn apply(&self, op: &Op, s: &[u32]) -> Vec<u32> {
        let keys: Vec<u32> = op.add.iter().filter_map(|&a| self.table.keys[a as usize]).collect();
        let mut next: Vec<u32> = s
            .iter()
            .copied()
            .filter(|a| !op.del.contains(a))
            .filter(|a| self.table.keys[*a as usize].is_none_or(|k| !keys.contains(&k)))
            .collect();
        next.extend(&op.add);
        next.sort_unstable();
        next.dedup();
        next
    }

    /// Placement facts of `s`, the scope of fluent-test blame.
    pub fn context(&self, s: &[u32]) -> Vec<Atom> {
        s.iter()
            .map(|&a| self.table.atom(a))
            .filter(|a| PLACEMENT_PREDICATES.contains(&a.predicate.as_str()))
            .cloned()
            .collect()
    }

    fn blamed(&self, op: &Op, s: &[u32], blames: &[Blame]) -> bool {
        if op.constraints.is_empty() || blames.is_empty() {
            return false;
        }
        let ctx = self.context(s);
        op.constraints
            .iter()
            .any(|c| blames.iter().any(|b| b.matches(c) && b.context == ctx))
    }

    /// Breadth-first search for the shortest operator sequence reaching the
    /// goal. Successors are generated in lexicographic order of action name
    /// then arguments, so ties resolve to the lexicographically first plan.
    pub fn shortest(&self, blames: &[Blame], node_budget: usize, deadline: Instant) -> SearchOutcome {
        let mut order: Vec<usize> = (0..self.ops.len()).collect();
        order.sort_by(|&a, &b| {
            let (x, y) = (&self.ops[a].action, &self.ops[b].action);
            (&x.name, &x.args).cmp(&(&y.name, &y.args))
        });
        if self.satisfies_goal(&self.init) {
            return SearchOutcome::Found(Vec::new());
        }
        let mut parent: HashMap<Vec<u32>, Option<(Vec<u32>, usize)>> = HashMap::new();
        parent.insert(self.init.clone(), None);
        let mut queue = VecDeque::from([self.init.clone()]);
        let mut expanded = 0usize;
        while let Some(s) = queue.pop_front() {
            expanded += 1;
            if expanded % 1024 == 0 && Instant::now() >= deadline {
                return SearchOutcome::Timeout;
            }
            for &oi in &order {
                let op = &self.ops[oi];
                if !self.applicable(op, &s) || self.blamed(op, &s, blames) {
                    continue;
                }
                let next = self.apply(op, &s);
                if parent.contains_key(&next) {
                    continue;
                }
                parent.insert(next.clone(), Some((s.clone(), oi)));
                if parent.len() > node_budget {
                    return SearchOutcome::Budget;
                }
                if self.satisfies_goal(&next) {
                    let mut plan = Vec::new();
                    let mut cur = next;
                    while let Some(Some((prev, oi))) = parent.get(&cur) {
                        plan.push(*oi);
                        cur = prev.clone();
                    }
                    plan.reverse();
                    return SearchOutcome::Found(plan);
                }
                queue.push_back(next);
            }
        }
        SearchOutcome::Exhausted
    }
}
