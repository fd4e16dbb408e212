//! Reader and printer for `.svd` domain and `.svp` problem files.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use nalgebra::Vector3;

use super::{
    ActionSchema, Atom, Domain, Literal, PredicateDecl, Problem, StreamDecl, SymbolicError, Term,
    TypedVar, OBJECT_TYPE,
};
use crate::geometry::Pose;

#[derive(Debug, Clone, PartialEq)]
enum Sexp {
    Sym { text: String, line: usize, col: usize },
    List { items: Vec<Sexp>, line: usize, col: usize },
}

impl Sexp {
    fn pos(&self) -> (usize, usize) {
        match self {
            Sexp::Sym { line, col, .. } | Sexp::List { line, col, .. } => (*line, *col),
        }
    }

    fn err(&self, msg: impl Into<String>) -> SymbolicError {
        let (line, col) = self.pos();
        SymbolicError::Syntax {
            line,
            col,
            msg: msg.into(),
        }
    }

    fn sym(&self) -> Option<&str> {
        match self {
            Sexp::Sym { text, .. } => Some(text),
            Sexp::List { .. } => None,
        }
    }

    fn expect_sym(&self, what: &str) -> Result<&str, SymbolicError> {
        self.sym().ok_or_else(|| self.err(format!("expected {what}")))
    }

    fn expect_list(&self, what: &str) -> Result<&[Sexp], SymbolicError> {
        match self {
            Sexp::List { items, .. } => Ok(items),
            Sexp::Sym { .. } => Err(self.err(format!("expected {what}"))),
        }
    }
}

fn read(text: &str) -> Result<Sexp, SymbolicError> {
    let mut stack: Vec<(Vec<Sexp>, usize, usize)> = Vec::new();
    let mut done: Option<Sexp> = None;
    let mut line = 1;
    let mut col = 1;
    let mut chars = text.chars().peekable();
    let syntax = |line, col, msg: &str| SymbolicError::Syntax {
        line,
        col,
        msg: msg.to_string(),
    };
    while let Some(&c) = chars.peek() {
        match c {
            '\n' => {
                chars.next();
                line += 1;
                col = 1;
            }
            c if c.is_whitespace() => {
                chars.next();
                col += 1;
            }
            ';' => {
                while let Some(&c) = chars.peek() {
                    if c == '\n' {
                        break;
                    }
                    chars.next();
                }
            }
            '(' => {
                if done.is_some() {
                    return Err(syntax(line, col, "trailing input after top-level form"));
                }
                stack.push((Vec::new(), line, col));
                chars.next();
                col += 1;
            }
            ')' => {
                let (items, l, c0) = stack
                    .pop()
                    .ok_or_else(|| syntax(line, col, "unbalanced `)`"))?;
                let node = Sexp::List {
                    items,
                    line: l,
                    col: c0,
                };
                match stack.last_mut() {
                    Some(parent) => parent.0.push(node),
                    None => done = Some(node),
                }
                chars.next();
                col += 1;
            }
            _ => {
                let (l, c0) = (line, col);
                let mut s = String::new();
                while let Some(&c) = chars.peek() {
                    if c.is_whitespace() || c == '(' || c == ')' || c == ';' {
                        break;
                    }
                    s.push(c);
                    chars.next();
                    col += 1;
                }
                let node = Sexp::Sym {
                    text: s,
                    line: l,
                    col: c0,
                };
                match stack.last_mut() {
                    Some(parent) => parent.0.push(node),
                    None => return Err(syntax(l, c0, "expected `(`")),
                }
            }
        }
    }
    if let Some((_, l, c)) = stack.last() {
        return Err(syntax(*l, *c, "unclosed `(`"));
    }
    done.ok_or_else(|| syntax(line, col, "empty input"))
}

/// `a b - t c` style lists. Untyped names get `object`.
fn typed_list(items: &[Sexp], vars: bool) -> Result<Vec<(TypedVar, (usize, usize))>, SymbolicError> {
    let mut out = Vec::new();
    let mut pending: Vec<(String, (usize, usize))> = Vec::new();
    let mut i = 0;
    while i < items.len() {
        let s = items[i].expect_sym("a name")?;
        if s == "-" {
            let ty = items
                .get(i + 1)
                .ok_or_else(|| items[i].err("missing type after `-`"))?
                .expect_sym("a type name")?;
            if pending.is_empty() {
                return Err(items[i].err("type given without names"));
            }
            for (n, p) in pending.drain(..) {
                out.push((TypedVar::new(&n, ty), p));
            }
            i += 2;
            continue;
        }
        let name = if vars {
            s.strip_prefix('?')
                .ok_or_else(|| items[i].err(format!("expected variable, found `{s}`")))?
        } else {
            s
        };
        pending.push((name.to_string(), items[i].pos()));
        i += 1;
    }
    for (n, p) in pending {
        out.push((TypedVar::new(&n, OBJECT_TYPE), p));
    }
    Ok(out)
}

fn atom(e: &Sexp) -> Result<(Atom, (usize, usize)), SymbolicError> {
    let items = e.expect_list("an atom")?;
    let head = items.first().ok_or_else(|| e.err("empty atom"))?;
    let pred = head.expect_sym("a predicate name")?;
    let args = items[1..]
        .iter()
        .map(|a| a.expect_sym("a term").map(Term::parse))
        .collect::<Result<_, _>>()?;
    Ok((Atom::new(pred, args), e.pos()))
}

fn literal(e: &Sexp) -> Result<(Literal, (usize, usize)), SymbolicError> {
    let items = e.expect_list("a literal")?;
    if items.first().and_then(Sexp::sym) == Some("not") {
        if items.len() != 2 {
            return Err(e.err("`not` takes exactly one atom"));
        }
        let (a, p) = atom(&items[1])?;
        return Ok((Literal::neg(a), p));
    }
    let (a, p) = atom(e)?;
    Ok((Literal::pos(a), p))
}

/// `(and l*)`, a single literal, or `()`.
fn conjunction(e: &Sexp) -> Result<Vec<(Literal, (usize, usize))>, SymbolicError> {
    let items = e.expect_list("a formula")?;
    if items.is_empty() {
        return Ok(Vec::new());
    }
    if items[0].sym() == Some("and") {
        items[1..].iter().map(literal).collect()
    } else {
        Ok(vec![literal(e)?])
    }
}

fn positive_atoms(e: &Sexp) -> Result<Vec<(Atom, (usize, usize))>, SymbolicError> {
    conjunction(e)?
        .into_iter()
        .map(|(l, p)| {
            if l.positive {
                Ok((l.atom, p))
            } else {
                Err(SymbolicError::Syntax {
                    line: p.0,
                    col: p.1,
                    msg: "negation not allowed here".into(),
                })
            }
        })
        .collect()
}

fn keyword_args<'a>(items: &'a [Sexp], start: usize) -> Result<BTreeMap<String, Option<&'a Sexp>>, SymbolicError> {
    let mut out = BTreeMap::new();
    let mut i = start;
    while i < items.len() {
        let k = items[i].expect_sym("a keyword")?;
        if !k.starts_with(':') {
            return Err(items[i].err(format!("expected keyword, found `{k}`")));
        }
        let value = items.get(i + 1).filter(|v| v.sym().is_none_or(|s| !s.starts_with(':')));
        out.insert(k.to_string(), value);
        i += if value.is_some() { 2 } else { 1 };
    }
    Ok(out)
}

fn header<'a>(root: &'a Sexp, kind: &str) -> Result<(String, &'a [Sexp]), SymbolicError> {
    let items = root.expect_list("`(define ...)`")?;
    if items.first().and_then(Sexp::sym) != Some("define") {
        return Err(root.err("expected `define`"));
    }
    let name_form = items
        .get(1)
        .ok_or_else(|| root.err(format!("missing `({kind} NAME)`")))?
        .expect_list(&format!("`({kind} NAME)`"))?;
    if name_form.len() != 2 || name_form[0].sym() != Some(kind) {
        return Err(items[1].err(format!("expected `({kind} NAME)`")));
    }
    let name = name_form[1].expect_sym("a name")?.to_string();
    Ok((name, &items[2..]))
}

fn section(e: &Sexp) -> Result<(&str, &[Sexp]), SymbolicError> {
    let items = e.expect_list("a section")?;
    let k = items
        .first()
        .ok_or_else(|| e.err("empty section"))?
        .expect_sym("a section keyword")?;
    Ok((k, &items[1..]))
}

struct Checker<'a> {
    domain: &'a Domain,
}

impl Checker<'_> {
    fn ty(&self, ty: &str, pos: (usize, usize)) -> Result<(), SymbolicError> {
        if self.domain.has_type(ty) {
            Ok(())
        } else {
            Err(SymbolicError::UndeclaredType {
                line: pos.0,
                col: pos.1,
                name: ty.to_string(),
            })
        }
    }

    fn atom(&self, a: &Atom, pos: (usize, usize)) -> Result<(), SymbolicError> {
        let decl = self
            .domain
            .predicates
            .get(&a.predicate)
            .ok_or_else(|| SymbolicError::UndeclaredPredicate {
                line: pos.0,
                col: pos.1,
                name: a.predicate.clone(),
            })?;
        if decl.params.len() != a.args.len() {
            return Err(SymbolicError::Arity {
                line: pos.0,
                col: pos.1,
                name: a.predicate.clone(),
                expected: decl.params.len(),
                got: a.args.len(),
            });
        }
        Ok(())
    }

    fn vars_bound(&self, a: &Atom, bound: &BTreeSet<String>, pos: (usize, usize)) -> Result<(), SymbolicError> {
        for v in a.vars() {
            if !bound.contains(v) {
                return Err(SymbolicError::UnboundVariable {
                    line: pos.0,
                    col: pos.1,
                    name: v.to_string(),
                });
            }
        }
        Ok(())
    }
}

pub fn parse_domain(text: &str) -> Result<Domain, SymbolicError> {
    let root = read(text)?;
    let (name, sections) = header(&root, "domain")?;
    let mut d = Domain {
        name,
        ..Domain::default()
    };
    let mut type_pos = Vec::new();
    let mut pred_pos = Vec::new();
    let mut action_pos = Vec::new();
    let mut stream_pos = Vec::new();

    for s in sections {
        let (kw, body) = section(s)?;
        match kw {
            ":requirements" => {}
            ":types" => {
                for (tv, p) in typed_list(body, false)? {
                    type_pos.push((tv.ty.clone(), p));
                    d.types.insert(tv.name, tv.ty);
                }
            }
            ":constants" => {
                for (tv, p) in typed_list(body, false)? {
                    type_pos.push((tv.ty.clone(), p));
                    d.constants.insert(tv.name, tv.ty);
                }
            }
            ":predicates" => {
                for p in body {
                    let items = p.expect_list("a predicate declaration")?;
                    let name = items
                        .first()
                        .ok_or_else(|| p.err("empty predicate declaration"))?
                        .expect_sym("a predicate name")?;
                    let params = typed_list(&items[1..], true)?;
                    for (tv, pos) in &params {
                        type_pos.push((tv.ty.clone(), *pos));
                    }
                    d.predicates.insert(
                        name.to_string(),
                        PredicateDecl {
                            name: name.to_string(),
                            params: params.into_iter().map(|(t, _)| t).collect(),
                        },
                    );
                }
            }
            ":functional" => {
                for f in body {
                    let items = f.expect_list("`(PREDICATE KEY-ARITY)`")?;
                    if items.len() != 2 {
                        return Err(f.err("expected `(PREDICATE KEY-ARITY)`"));
                    }
                    let name = items[0].expect_sym("a predicate name")?;
                    let n: usize = items[1]
                        .expect_sym("an integer")?
                        .parse()
                        .map_err(|_| items[1].err("expected an integer"))?;
                    pred_pos.push((Atom::new(name, vec![]), f.pos()));
                    d.functional.insert(name.to_string(), n);
                }
            }
            ":action" => {
                let name = body
                    .first()
                    .ok_or_else(|| s.err("action needs a name"))?
                    .expect_sym("an action name")?;
                let kw = keyword_args(body, 1)?;
                let params = match kw.get(":parameters").copied().flatten() {
                    Some(p) => typed_list(p.expect_list("a parameter list")?, true)?,
                    None => Vec::new(),
                };
                for (tv, p) in &params {
                    type_pos.push((tv.ty.clone(), *p));
                }
                let formula = |k: &str| -> Result<Vec<(Literal, (usize, usize))>, SymbolicError> {
                    match kw.get(k).copied().flatten() {
                        Some(f) => conjunction(f),
                        None => Ok(Vec::new()),
                    }
                };
                let pre = formula(":precondition")?;
                let eff = formula(":effect")?;
                let con = formula(":constraint")?;
                let bound: BTreeSet<String> = params.iter().map(|(t, _)| t.name.clone()).collect();
                for (l, p) in pre.iter().chain(&eff).chain(&con) {
                    action_pos.push((l.atom.clone(), *p, bound.clone()));
                }
                d.actions.push(ActionSchema {
                    name: name.to_string(),
                    parameters: params.into_iter().map(|(t, _)| t).collect(),
                    precondition: pre.into_iter().map(|(l, _)| l).collect(),
                    effect: eff.into_iter().map(|(l, _)| l).collect(),
                    constraint: con.into_iter().map(|(l, _)| l).collect(),
                });
            }
            ":stream" => {
                let name = body
                    .first()
                    .ok_or_else(|| s.err("stream needs a name"))?
                    .expect_sym("a stream name")?;
                let kw = keyword_args(body, 1)?;
                let vars = |k: &str| -> Result<Vec<(TypedVar, (usize, usize))>, SymbolicError> {
                    match kw.get(k).copied().flatten() {
                        Some(l) => typed_list(l.expect_list("a variable list")?, true),
                        None => Ok(Vec::new()),
                    }
                };
                let atoms = |k: &str| -> Result<Vec<(Atom, (usize, usize))>, SymbolicError> {
                    match kw.get(k).copied().flatten() {
                        Some(f) => positive_atoms(f),
                        None => Ok(Vec::new()),
                    }
                };
                let inputs = vars(":inputs")?;
                let outputs = vars(":outputs")?;
                let dom = atoms(":domain")?;
                let cert = atoms(":certified")?;
                let bound: BTreeSet<String> = inputs
                    .iter()
                    .chain(&outputs)
                    .map(|(t, _)| t.name.clone())
                    .collect();
                for (tv, p) in inputs.iter().chain(&outputs) {
                    type_pos.push((tv.ty.clone(), *p));
                }
                for (a, p) in dom.iter().chain(&cert) {
                    stream_pos.push((a.clone(), *p, bound.clone()));
                }
                d.streams.push(StreamDecl {
                    name: name.to_string(),
                    inputs: inputs.into_iter().map(|(t, _)| t).collect(),
                    domain: dom.into_iter().map(|(a, _)| a).collect(),
                    outputs: outputs.into_iter().map(|(t, _)| t).collect(),
                    certified: cert.into_iter().map(|(a, _)| a).collect(),
                    fluent: kw.contains_key(":fluent"),
                });
            }
            other => return Err(s.err(format!("unknown domain section `{other}`"))),
        }
    }

    let c = Checker { domain: &d };
    for (ty, p) in &type_pos {
        c.ty(ty, *p)?;
    }
    for (a, p) in &pred_pos {
        if !d.predicates.contains_key(&a.predicate) {
            return Err(SymbolicError::UndeclaredPredicate {
                line: p.0,
                col: p.1,
                name: a.predicate.clone(),
            });
        }
    }
    for (a, p, bound) in action_pos.iter().chain(&stream_pos) {
        c.atom(a, *p)?;
        c.vars_bound(a, bound, *p)?;
        for t in &a.args {
            if let Term::Const(k) = t {
                if !d.constants.contains_key(k) {
                    return Err(SymbolicError::UnknownObject {
                        line: p.0,
                        col: p.1,
                        name: k.clone(),
                    });
                }
            }
        }
    }
    Ok(d)
}

/// Syntax-only problem parse; see [`parse_problem_for`] for validation.
pub fn parse_problem(text: &str) -> Result<Problem, SymbolicError> {
    parse_problem_inner(text, None)
}

/// Parses a problem and checks it against `domain`.
pub fn parse_problem_for(text: &str, domain: &Domain) -> Result<Problem, SymbolicError> {
    parse_problem_inner(text, Some(domain))
}

fn parse_problem_inner(text: &str, domain: Option<&Domain>) -> Result<Problem, SymbolicError> {
    let root = read(text)?;
    let (name, sections) = header(&root, "problem")?;
    let mut pr = Problem {
        name,
        ..Problem::default()
    };
    let mut obj_pos = Vec::new();
    let mut atom_pos = Vec::new();
    for s in sections {
        let (kw, body) = section(s)?;
        match kw {
            ":domain" => {
                pr.domain = body
                    .first()
                    .ok_or_else(|| s.err("missing domain name"))?
                    .expect_sym("a domain name")?
                    .to_string();
            }
            ":objects" => {
                for (tv, p) in typed_list(body, false)? {
                    obj_pos.push((tv.ty.clone(), p));
                    pr.objects.insert(tv.name, tv.ty);
                }
            }
            ":init" => {
                for a in body {
                    let (a, p) = atom(a)?;
                    if !a.is_ground() {
                        return Err(SymbolicError::Syntax {
                            line: p.0,
                            col: p.1,
                            msg: "initial facts must be ground".into(),
                        });
                    }
                    atom_pos.push((a.clone(), p));
                    pr.init.push(a);
                }
            }
            ":goal" => {
                let f = body.first().ok_or_else(|| s.err("missing goal formula"))?;
                for (l, p) in conjunction(f)? {
                    atom_pos.push((l.atom.clone(), p));
                    pr.goal.push(l);
                }
            }
            ":values" => {
                for v in body {
                    let items = v.expect_list("`(NAME x y z qw qx qy qz)`")?;
                    if items.len() != 8 {
                        return Err(v.err("a value binds a name to 7 numbers"));
                    }
                    let name = items[0].expect_sym("a constant name")?;
                    let mut nums = [0.0; 7];
                    for (k, it) in items[1..].iter().enumerate() {
                        nums[k] = it
                            .expect_sym("a number")?
                            .parse()
                            .map_err(|_| it.err("expected a number"))?;
                    }
                    let pose = Pose::from_wxyz(
                        Vector3::new(nums[0], nums[1], nums[2]),
                        [nums[3], nums[4], nums[5], nums[6]],
                    )
                    .map_err(|e| v.err(e.to_string()))?;
                    pr.values.insert(name.to_string(), pose);
                }
            }
            other => return Err(s.err(format!("unknown problem section `{other}`"))),
        }
    }
    if let Some(d) = domain {
        let c = Checker { domain: d };
        for (ty, p) in &obj_pos {
            c.ty(ty, *p)?;
        }
        for (a, p) in &atom_pos {
            c.atom(a, *p)?;
            if let Some(v) = a.vars().next() {
                return Err(SymbolicError::UnboundVariable {
                    line: p.0,
                    col: p.1,
                    name: v.to_string(),
                });
            }
            for t in &a.args {
                let n = t.name();
                if !pr.objects.contains_key(n) && !d.constants.contains_key(n) {
                    return Err(SymbolicError::UnknownObject {
                        line: p.0,
                        col: p.1,
                        name: n.to_string(),
                    });
                }
            }
        }
    }
    Ok(pr)
}

fn write_typed(out: &mut String, vars: &[TypedVar], prefix: &str) {
    let parts: Vec<String> = vars
        .iter()
        .map(|v| format!("{prefix}{} - {}", v.name, v.ty))
        .collect();
    out.push_str(&parts.join(" "));
}

fn write_conj(out: &mut String, lits: &[Literal]) {
    out.push_str("(and");
    for l in lits {
        let _ = write!(out, " {l}");
    }
    out.push(')');
}

fn write_atoms(out: &mut String, atoms: &[Atom]) {
    out.push_str("(and");
    for a in atoms {
        let _ = write!(out, " {a}");
    }
    out.push(')');
}

fn write_by_type(out: &mut String, items: &BTreeMap<String, String>) {
    let mut by_type: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
    for (n, t) in items {
        by_type.entry(t).or_default().push(n);
    }
    for (t, names) in by_type {
        let _ = write!(out, "\n    {} - {}", names.join(" "), t);
    }
}

pub fn serialize_domain(d: &Domain) -> String {
    let mut out = format!("(define (domain {})\n", d.name);
    if !d.types.is_empty() {
        out.push_str("  (:types");
        write_by_type(&mut out, &d.types);
        out.push_str(")\n");
    }
    if !d.constants.is_empty() {
        out.push_str("  (:constants");
        write_by_type(&mut out, &d.constants);
        out.push_str(")\n");
    }
    out.push_str("  (:predicates");
    for p in d.predicates.values() {
        let _ = write!(out, "\n    ({}", p.name);
        if !p.params.is_empty() {
            out.push(' ');
            write_typed(&mut out, &p.params, "?");
        }
        out.push(')');
    }
    out.push_str(")\n");
    if !d.functional.is_empty() {
        out.push_str("  (:functional");
        for (p, n) in &d.functional {
            let _ = write!(out, " ({p} {n})");
        }
        out.push_str(")\n");
    }
    for a in &d.actions {
        let _ = write!(out, "  (:action {}\n    :parameters (", a.name);
        write_typed(&mut out, &a.parameters, "?");
        out.push_str(")\n    :precondition ");
        write_conj(&mut out, &a.precondition);
        out.push_str("\n    :effect ");
        write_conj(&mut out, &a.effect);
        if !a.constraint.is_empty() {
            out.push_str("\n    :constraint ");
            write_conj(&mut out, &a.constraint);
        }
        out.push_str(")\n");
    }
    for s in &d.streams {
        let _ = write!(out, "  (:stream {}\n    :inputs (", s.name);
        write_typed(&mut out, &s.inputs, "?");
        out.push_str(")\n    :domain ");
        write_atoms(&mut out, &s.domain);
        out.push_str("\n    :outputs (");
        write_typed(&mut out, &s.outputs, "?");
        out.push_str(")\n    :certified ");
        write_atoms(&mut out, &s.certified);
        if s.fluent {
            out.push_str("\n    :fluent");
        }
        out.push_str(")\n");
    }
    out.push_str(")\n");
    out
}

pub fn serialize_problem(p: &Problem) -> String {
    let mut out = format!("(define (problem {})\n  (:domain {})\n", p.name, p.domain);
    out.push_str("  (:objects");
    write_by_type(&mut out, &p.objects);
    out.push_str(")\n  (:init");
    for a in &p.init {
        let _ = write!(out, "\n    {a}");
    }
    out.push_str(")\n  (:goal ");
    write_conj(&mut out, &p.goal);
    out.push_str(")\n");
    if !p.values.is_empty() {
        out.push_str("  (:values");
        for (n, v) in &p.values {
            let a = v.to_array();
            let _ = write!(
                out,
                "\n    ({n} {:?} {:?} {:?} {:?} {:?} {:?} {:?})",
                a[0], a[1], a[2], a[3], a[4], a[5], a[6]
            );
        }
        out.push_str(")\n");
    }
    out.push_str(")\n");
    out
}
