//! Symbolic layer: literals, action and stream schemas, domains and problems
//! in an s-expression planning language, plus compilation of segmented
//! bimanual skills into action schemas.

mod parse;
mod skill;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::Pose;

pub use parse::{parse_domain, parse_problem, parse_problem_for, serialize_domain, serialize_problem};
pub use skill::{
    compile_bioperation, diff_effects, effect_literals, entity_types, predicates_of_graph,
    GroundLiterals, SkillSchema, CONTACT_PREDICATES, LEFT_GRIPPER_TYPE, RIGHT_GRIPPER_TYPE,
};

/// Root of the type hierarchy.
pub const OBJECT_TYPE: &str = "object";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SymbolicError {
    #[error("{line}:{col}: {msg}")]
    Syntax { line: usize, col: usize, msg: String },
    #[error("{line}:{col}: undeclared predicate `{name}`")]
    UndeclaredPredicate { line: usize, col: usize, name: String },
    #[error("{line}:{col}: undeclared type `{name}`")]
    UndeclaredType { line: usize, col: usize, name: String },
    #[error("{line}:{col}: `{name}` expects {expected} arguments, got {got}")]
    Arity {
        line: usize,
        col: usize,
        name: String,
        expected: usize,
        got: usize,
    },
    #[error("{line}:{col}: unbound variable `{name}`")]
    UnboundVariable { line: usize, col: usize, name: String },
    #[error("{line}:{col}: unknown object `{name}`")]
    UnknownObject { line: usize, col: usize, name: String },
    #[error("edge {src}->{dst} labeled {label} does not match its endpoint kinds")]
    InvalidEdge {
        src: String,
        dst: String,
        label: String,
    },
    #[error("skill `{0}` has no pre-contact scene graph")]
    MissingPreGraph(String),
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Term {
    Var(String),
    Const(String),
}

impl Term {
    pub fn parse(s: &str) -> Term {
        match s.strip_prefix('?') {
            Some(v) => Term::Var(v.to_string()),
            None => Term::Const(s.to_string()),
        }
    }

    pub fn name(&self) -> &str {
        match self {
            Term::Var(s) | Term::Const(s) => s,
        }
    }

    pub fn is_var(&self) -> bool {
        matches!(self, Term::Var(_))
    }
}

impl fmt::Display for Term {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Term::Var(v) => write!(f, "?{v}"),
            Term::Const(c) => write!(f, "{c}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Atom {
    pub predicate: String,
    pub args: Vec<Term>,
}

impl Atom {
    pub fn new(predicate: &str, args: Vec<Term>) -> Self {
        Self {
            predicate: predicate.to_string(),
            args,
        }
    }

    /// Ground atom from constant names.
    pub fn ground(predicate: &str, args: &[&str]) -> Self {
        Self::new(predicate, args.iter().map(|a| Term::Const(a.to_string())).collect())
    }

    pub fn is_ground(&self) -> bool {
        self.args.iter().all(|a| !a.is_var())
    }

    pub fn vars(&self) -> impl Iterator<Item = &str> {
        self.args.iter().filter_map(|a| match a {
            Term::Var(v) => Some(v.as_str()),
            Term::Const(_) => None,
        })
    }

    /// Replaces variables found in `binding`; others are kept.
    pub fn substitute(&self, binding: &BTreeMap<String, String>) -> Atom {
        Atom {
            predicate: self.predicate.clone(),
            args: self
                .args
                .iter()
                .map(|t| match t {
                    Term::Var(v) => binding
                        .get(v)
                        .map_or_else(|| t.clone(), |c| Term::Const(c.clone())),
                    Term::Const(_) => t.clone(),
                })
                .collect(),
        }
    }
}

impl fmt::Display for Atom {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}", self.predicate)?;
        for a in &self.args {
            write!(f, " {a}")?;
        }
        write!(f, ")")
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Literal {
    pub atom: Atom,
    pub positive: bool,
}

impl Literal {
    pub fn pos(atom: Atom) -> Self {
        Self { atom, positive: true }
    }

    pub fn neg(atom: Atom) -> Self {
        Self {
            atom,
            positive: false,
        }
    }

    pub fn negated(&self) -> Self {
        Self {
            atom: self.atom.clone(),
            positive: !self.positive,
        }
    }
}

impl fmt::Display for Literal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.positive {
            write!(f, "{}", self.atom)
        } else {
            write!(f, "(not {})", self.atom)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct TypedVar {
    pub name: String,
    pub ty: String,
}

impl TypedVar {
    pub fn new(name: &str, ty: &str) -> Self {
        Self {
            name: name.to_string(),
            ty: ty.to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PredicateDecl {
    pub name: String,
    pub params: Vec<TypedVar>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActionSchema {
    pub name: String,
    pub parameters: Vec<TypedVar>,
    pub precondition: Vec<Literal>,
    pub effect: Vec<Literal>,
    /// Certified by test streams before the action may be applied.
    pub constraint: Vec<Literal>,
}

impl ActionSchema {
    /// Variables used in effects or constraints but missing from the parameters.
    pub fn free_variables(&self) -> BTreeSet<String> {
        let params: BTreeSet<&str> = self.parameters.iter().map(|p| p.name.as_str()).collect();
        self.precondition
            .iter()
            .chain(&self.effect)
            .chain(&self.constraint)
            .flat_map(|l| l.atom.vars())
            .filter(|v| !params.contains(v))
            .map(str::to_string)
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum StreamKind {
    Generator,
    Test,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StreamDecl {
    pub name: String,
    pub inputs: Vec<TypedVar>,
    pub domain: Vec<Atom>,
    pub outputs: Vec<TypedVar>,
    pub certified: Vec<Atom>,
    /// Fluent tests are evaluated against the world state reached by the
    /// plan prefix rather than on their inputs alone.
    pub fluent: bool,
}

impl StreamDecl {
    pub fn kind(&self) -> StreamKind {
        if self.outputs.is_empty() {
            StreamKind::Test
        } else {
            StreamKind::Generator
        }
    }

    /// Certified facts may only mention inputs and outputs.
    pub fn check_certified(&self) -> Result<(), String> {
        let known: BTreeSet<&str> = self
            .inputs
            .iter()
            .chain(&self.outputs)
            .map(|v| v.name.as_str())
            .collect();
        for a in self.certified.iter().chain(&self.domain) {
            for v in a.vars() {
                if !known.contains(v) {
                    return Err(format!("stream `{}` mentions unknown variable ?{v}", self.name));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Domain {
    pub name: String,
    /// Type name to parent type.
    pub types: BTreeMap<String, String>,
    pub constants: BTreeMap<String, String>,
    pub predicates: BTreeMap<String, PredicateDecl>,
    /// Predicates whose first `n` arguments determine the rest: adding a
    /// fact removes any other fact sharing that key.
    pub functional: BTreeMap<String, usize>,
    pub actions: Vec<ActionSchema>,
    pub streams: Vec<StreamDecl>,
}

impl Domain {
    pub fn has_type(&self, ty: &str) -> bool {
        ty == OBJECT_TYPE || self.types.contains_key(ty)
    }

    pub fn is_subtype(&self, ty: &str, ancestor: &str) -> bool {
        let mut cur = ty;
        for _ in 0..=self.types.len() + 1 {
            if cur == ancestor {
                return true;
            }
            match self.types.get(cur) {
                Some(p) => cur = p,
                None => return false,
            }
        }
        false
    }

    pub fn action(&self, name: &str) -> Option<&ActionSchema> {
        self.actions.iter().find(|a| a.name == name)
    }

    pub fn stream(&self, name: &str) -> Option<&StreamDecl> {
        self.streams.iter().find(|s| s.name == name)
    }

    /// Checks arity of every literal in `lits` against the declarations.
    pub fn check_literals<'a>(&self, lits: impl IntoIterator<Item = &'a Atom>) -> Result<(), SymbolicError> {
        for a in lits {
            let decl = self.predicates.get(&a.predicate).ok_or_else(|| {
                SymbolicError::UndeclaredPredicate {
                    line: 0,
                    col: 0,
                    name: a.predicate.clone(),
                }
            })?;
            if decl.params.len() != a.args.len() {
                return Err(SymbolicError::Arity {
                    line: 0,
                    col: 0,
                    name: a.predicate.clone(),
                    expected: decl.params.len(),
                    got: a.args.len(),
                });
            }
        }
        Ok(())
    }

    /// Validates a (possibly compiled) action schema against this domain.
    pub fn check_action(&self, a: &ActionSchema) -> Result<(), SymbolicError> {
        for p in &a.parameters {
            if !self.has_type(&p.ty) {
                return Err(SymbolicError::UndeclaredType {
                    line: 0,
                    col: 0,
                    name: p.ty.clone(),
                });
            }
        }
        if let Some(v) = a.free_variables().into_iter().next() {
            return Err(SymbolicError::UnboundVariable { line: 0, col: 0, name: v });
        }
        self.check_literals(
            a.precondition
                .iter()
                .chain(&a.effect)
                .chain(&a.constraint)
                .map(|l| &l.atom),
        )
    }

    /// Adds or replaces an action after validating it.
    pub fn add_action(&mut self, a: ActionSchema) -> Result<(), SymbolicError> {
        self.check_action(&a)?;
        self.actions.retain(|x| x.name != a.name);
        self.actions.push(a);
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Problem {
    pub name: String,
    pub domain: String,
    pub objects: BTreeMap<String, String>,
    pub init: Vec<Atom>,
    /// Conjunctive goal formula.
    pub goal: Vec<Literal>,
    /// Side table binding continuous payload constants.
    pub values: BTreeMap<String, Pose>,
}

impl Problem {
    pub fn object_type<'a>(&'a self, domain: &'a Domain, name: &str) -> Option<&'a str> {
        self.objects
            .get(name)
            .or_else(|| domain.constants.get(name))
            .map(String::as_str)
    }
}
