//! Syntax-tree validation of verifier modules.
//!
//! Pure function of the source text: the module is parsed but never run,
//! and the spec list is read structurally from its literal.

use std::collections::BTreeSet;

use serde_json::Value as Json;

use super::ast::*;
use super::parser::parse_module;
use crate::bundle::{
    FindingKind, LintFinding, VerifierSpec, AGGREGATE_FUNCTION, ALLOWED_IMPORTS, FORBIDDEN_IDENTIFIERS,
    SPECS_CONSTANT,
};

#[derive(Debug, Clone, PartialEq)]
pub struct ValidationReport {
    pub ok: bool,
    pub specs: Vec<VerifierSpec>,
    pub violations: Vec<LintFinding>,
}

pub fn validate_source(source: &str) -> ValidationReport {
    let module = match parse_module(source) {
        Ok(m) => m,
        Err(e) => {
            return report(
                Vec::new(),
                vec![finding(FindingKind::SyntaxError, e.message, Some(e.line))],
            )
        }
    };
    let mut walker = Walker::default();
    walker.block(&module);
    let mut violations = walker.findings;

    let (specs, spec_findings) = read_specs(&module);
    violations.extend(spec_findings);

    let defined: BTreeSet<&str> = module
        .iter()
        .filter_map(|s| match &s.kind {
            StmtKind::Def(f) => Some(f.name.as_str()),
            _ => None,
        })
        .collect();
    if !defined.contains(AGGREGATE_FUNCTION) {
        violations.push(finding(
            FindingKind::MissingAggregate,
            format!("no top-level def {AGGREGATE_FUNCTION}(checks, x, y, context=None)"),
            None,
        ));
    }
    for spec in &specs {
        if !defined.contains(spec.name.as_str()) {
            violations.push(finding(
                FindingKind::MissingFunction,
                format!("spec {:?} has no matching top-level function", spec.name),
                None,
            ));
        }
    }
    report(specs, violations)
}

fn report(specs: Vec<VerifierSpec>, violations: Vec<LintFinding>) -> ValidationReport {
    let ok = violations.is_empty();
    ValidationReport {
        ok,
        specs: if ok { specs } else { Vec::new() },
        violations,
    }
}

fn finding(kind: FindingKind, detail: impl Into<String>, line: Option<u32>) -> LintFinding {
    LintFinding {
        kind,
        detail: detail.into(),
        line,
    }
}

fn is_forbidden(name: &str) -> bool {
    FORBIDDEN_IDENTIFIERS.contains(&name)
}

fn is_dunder(name: &str) -> bool {
    name.len() > 4 && name.starts_with("__") && name.ends_with("__")
}

#[derive(Default)]
struct Walker {
    findings: Vec<LintFinding>,
    line: u32,
}

impl Walker {
    fn flag(&mut self, kind: FindingKind, detail: String) {
        self.findings.push(finding(kind, detail, Some(self.line)));
    }

    fn name(&mut self, name: &str) {
        if is_forbidden(name) {
            self.flag(FindingKind::ForbiddenIdentifier, format!("reference to {name}"));
        }
    }

    fn import(&mut self, module: &str) {
        let root = module.split('.').next().unwrap_or("");
        if module.starts_with('.') || !ALLOWED_IMPORTS.contains(&root) {
            self.flag(FindingKind::DisallowedImport, format!("import of {module}"));
        }
    }

    fn block(&mut self, body: &[Stmt]) {
        for s in body {
            self.stmt(s);
        }
    }

    fn stmt(&mut self, s: &Stmt) {
        self.line = s.line;
        match &s.kind {
            StmtKind::Expr(e) => self.expr(e),
            StmtKind::Assign(targets, value) => {
                for t in targets {
                    self.target(t);
                }
                self.expr(value);
            }
            StmtKind::AugAssign(t, _, value) => {
                self.target(t);
                self.expr(value);
            }
            StmtKind::If(arms, otherwise) => {
                for (cond, body) in arms {
                    self.expr(cond);
                    self.block(body);
                }
                if let Some(b) = otherwise {
                    self.block(b);
                }
            }
            StmtKind::For(t, iter, body) => {
                self.target(t);
                self.expr(iter);
                self.block(body);
            }
            StmtKind::While(cond, body) => {
                self.expr(cond);
                self.block(body);
            }
            StmtKind::Return(e) | StmtKind::Raise(e) => {
                if let Some(e) = e {
                    self.expr(e);
                }
            }
            StmtKind::Assert(c, m) => {
                self.expr(c);
                if let Some(m) = m {
                    self.expr(m);
                }
            }
            StmtKind::Try { body, handlers, finally } => {
                self.block(body);
                for h in handlers {
                    if let Some(t) = &h.types {
                        self.expr(t);
                    }
                    if let Some(n) = &h.name {
                        self.name(n);
                    }
                    self.block(&h.body);
                }
                if let Some(f) = finally {
                    self.block(f);
                }
            }
            StmtKind::Def(f) => self.func(f),
            StmtKind::Import(names) => {
                for (module, alias) in names {
                    self.import(module);
                    if let Some(a) = alias {
                        self.name(a);
                    }
                }
            }
            StmtKind::ImportFrom(module, names) => {
                self.import(module);
                for (n, alias) in names {
                    self.name(n);
                    if is_dunder(n) {
                        self.flag(FindingKind::ForbiddenIdentifier, format!("import of dunder name {n}"));
                    }
                    if let Some(a) = alias {
                        self.name(a);
                    }
                }
            }
            StmtKind::Pass | StmtKind::Break | StmtKind::Continue => {}
        }
    }

    fn func(&mut self, f: &FuncDef) {
        let line = self.line;
        self.name(&f.name);
        for (p, default) in &f.params {
            self.name(p);
            if let Some(d) = default {
                self.expr(d);
            }
        }
        self.block(&f.body);
        self.line = line;
    }

    fn target(&mut self, t: &Target) {
        match t {
            Target::Name(n) => self.name(n),
            Target::Tuple(items) => items.iter().for_each(|t| self.target(t)),
            Target::Index(obj, idx) => {
                self.expr(obj);
                self.expr(idx);
            }
        }
    }

    fn expr(&mut self, e: &Expr) {
        match e {
            Expr::Name(n, line) => {
                self.line = *line;
                self.name(n);
            }
            Expr::Const(_) => {}
            Expr::List(items) | Expr::Tuple(items) | Expr::Set(items) => items.iter().for_each(|i| self.expr(i)),
            Expr::Dict(pairs) => {
                for (k, v) in pairs {
                    self.expr(k);
                    self.expr(v);
                }
            }
            Expr::Attr(obj, name, line) => {
                self.expr(obj);
                self.line = *line;
                if is_forbidden(name) || is_dunder(name) {
                    self.flag(FindingKind::ForbiddenIdentifier, format!("attribute access .{name}"));
                }
            }
            Expr::Call { func, args, kwargs, .. } => {
                self.expr(func);
                args.iter().for_each(|a| self.expr(a));
                kwargs.iter().for_each(|(_, v)| self.expr(v));
            }
            Expr::Index(a, b) | Expr::Bin(_, a, b) | Expr::And(a, b) | Expr::Or(a, b) => {
                self.expr(a);
                self.expr(b);
            }
            Expr::Slice { obj, lo, hi, step } => {
                self.expr(obj);
                for part in [lo, hi, step].into_iter().flatten() {
                    self.expr(part);
                }
            }
            Expr::Unary(_, a) => self.expr(a),
            Expr::Compare(a, rest) => {
                self.expr(a);
                rest.iter().for_each(|(_, b)| self.expr(b));
            }
            Expr::IfExp { cond, then, otherwise } => {
                self.expr(cond);
                self.expr(then);
                self.expr(otherwise);
            }
            Expr::Comp {
                elt, value, generators, ..
            } => {
                for g in generators {
                    self.target(&g.target);
                    self.expr(&g.iter);
                    g.conds.iter().for_each(|c| self.expr(c));
                }
                self.expr(elt);
                if let Some(v) = value {
                    self.expr(v);
                }
            }
            Expr::Lambda(f) => self.func(f),
        }
    }
}

/// Reads the spec list from the module's top-level literal assignment.
fn read_specs(module: &[Stmt]) -> (Vec<VerifierSpec>, Vec<LintFinding>) {
    let assignment = module.iter().find_map(|s| match &s.kind {
        StmtKind::Assign(targets, value)
            if targets
                .iter()
                .any(|t| matches!(t, Target::Name(n) if n == SPECS_CONSTANT)) =>
        {
            Some((value, s.line))
        }
        _ => None,
    });
    let Some((value, line)) = assignment else {
        return (
            Vec::new(),
            vec![finding(FindingKind::MissingSpecs, format!("no top-level {SPECS_CONSTANT} assignment"), None)],
        );
    };
    match specs_from_literal(value) {
        Ok(specs) if specs.is_empty() => (
            specs,
            vec![finding(FindingKind::MissingSpecs, format!("{SPECS_CONSTANT} is empty"), Some(line))],
        ),
        Ok(specs) => {
            let mut seen = BTreeSet::new();
            let dupes: Vec<_> = specs
                .iter()
                .filter(|s| !seen.insert(s.name.as_str()))
                .map(|s| finding(FindingKind::MissingSpecs, format!("duplicate spec name {:?}", s.name), Some(line)))
                .collect();
            (specs, dupes)
        }
        Err(why) => (
            Vec::new(),
            vec![finding(
                FindingKind::MissingSpecs,
                format!("{SPECS_CONSTANT} must be a literal list of dicts: {why}"),
                Some(line),
            )],
        ),
    }
}

fn specs_from_literal(e: &Expr) -> Result<Vec<VerifierSpec>, String> {
    let Expr::List(items) = e else {
        return Err("not a list literal".into());
    };
    items
        .iter()
        .map(|item| {
            let Expr::Dict(pairs) = item else {
                return Err("entry is not a dict literal".into());
            };
            let mut obj = serde_json::Map::new();
            for (k, v) in pairs {
                let Expr::Const(Const::Str(k)) = k else {
                    return Err("dict key is not a string literal".into());
                };
                obj.insert(k.clone(), literal_json(v)?);
            }
            let spec: VerifierSpec = serde_json::from_value(Json::Object(obj)).map_err(|e| e.to_string())?;
            if !crate::bundle::is_identifier(&spec.name) {
                return Err(format!("spec name {:?} is not an identifier", spec.name));
            }
            Ok(spec)
        })
        .collect()
}

fn literal_json(e: &Expr) -> Result<Json, String> {
    Ok(match e {
        Expr::Const(Const::Str(s)) => Json::String(s.clone()),
        Expr::Const(Const::Int(i)) => Json::from(*i),
        Expr::Const(Const::Bool(b)) => Json::Bool(*b),
        Expr::Const(Const::None) => Json::Null,
        Expr::List(items) | Expr::Tuple(items) => Json::Array(items.iter().map(literal_json).collect::<Result<_, _>>()?),
        _ => return Err("value is not a literal".into()),
    })
}
