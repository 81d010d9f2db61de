//! Tree-walking interpreter for validated verifier modules.
//!
//! Every statement, loop iteration and comprehension step checks the call
//! deadline, so pure-compute loops are preempted. Builtins only do bounded
//! work per element. Integers are 64-bit; overflow raises OverflowError.

use std::cell::RefCell;
use std::collections::HashMap;
use std::rc::Rc;
use std::time::Instant;

use super::ast::*;
use super::value::*;

pub const MAX_DEPTH: usize = 100;
/// Largest list/string a single operation may build.
pub const MAX_LEN: usize = 10_000_000;

#[derive(Debug, Default)]
pub struct Scope {
    vars: RefCell<HashMap<String, Value>>,
    parent: Option<Rc<Scope>>,
}

impl Scope {
    pub fn child(parent: &Rc<Scope>) -> Rc<Scope> {
        Rc::new(Scope {
            vars: RefCell::new(HashMap::new()),
            parent: Some(parent.clone()),
        })
    }

    pub fn get(&self, name: &str) -> Option<Value> {
        if let Some(v) = self.vars.borrow().get(name) {
            return Some(v.clone());
        }
        self.parent.as_ref()?.get(name)
    }

    pub fn set(&self, name: &str, value: Value) {
        self.vars.borrow_mut().insert(name.to_string(), value);
    }

    /// Drops all bindings. Closures defined in a scope hold it alive, so
    /// module namespaces are cleared explicitly to break the cycle.
    pub fn clear(&self) {
        let vars = std::mem::take(&mut *self.vars.borrow_mut());
        drop(vars);
    }
}

#[derive(Debug, Clone)]
pub enum Signal {
    Exc(Rc<ExcValue>),
    /// The call deadline passed; never catchable by verifier code.
    Timeout,
}

pub type R<T> = Result<T, Signal>;

pub fn exc<T>(kind: &str, message: impl Into<String>) -> R<T> {
    Err(Signal::Exc(Rc::new(ExcValue {
        kind: kind.into(),
        message: message.into(),
    })))
}

pub fn type_error<T>(message: impl Into<String>) -> R<T> {
    exc("TypeError", message)
}

enum Flow {
    Normal,
    Return(Value),
    Break,
    Continue,
}

pub struct Interp {
    pub deadline: Instant,
    depth: usize,
    steps: u32,
    handling: Vec<Rc<ExcValue>>,
    pub(super) regex_cache: HashMap<(String, i64), Rc<PatternValue>>,
}

impl Default for Interp {
    fn default() -> Self {
        Self::new()
    }
}

impl Interp {
    pub fn new() -> Self {
        Self {
            deadline: Instant::now(),
            depth: 0,
            steps: 0,
            handling: Vec::new(),
            regex_cache: HashMap::new(),
        }
    }

    pub fn tick(&mut self) -> R<()> {
        self.steps = self.steps.wrapping_add(1);
        // Instant::now is cheap but not free; sample every few steps
        if self.steps.is_multiple_of(16) && Instant::now() >= self.deadline {
            return Err(Signal::Timeout);
        }
        Ok(())
    }

    /// Runs module top level in `globals`.
    pub fn load_module(&mut self, body: &[Stmt], globals: &Rc<Scope>) -> R<()> {
        match self.exec_block(body, globals)? {
            Flow::Normal => Ok(()),
            _ => exc("SyntaxError", "'return', 'break' or 'continue' outside function"),
        }
    }

    fn exec_block(&mut self, body: &[Stmt], scope: &Rc<Scope>) -> R<Flow> {
        for s in body {
            match self.exec(s, scope)? {
                Flow::Normal => {}
                other => return Ok(other),
            }
        }
        Ok(Flow::Normal)
    }

    fn exec(&mut self, s: &Stmt, scope: &Rc<Scope>) -> R<Flow> {
        self.tick()?;
        match &s.kind {
            StmtKind::Expr(e) => {
                self.eval(e, scope)?;
            }
            StmtKind::Assign(targets, value) => {
                let v = self.eval(value, scope)?;
                for t in targets {
                    self.assign(t, v.clone(), scope)?;
                }
            }
            StmtKind::AugAssign(target, op, value) => {
                let current = match target {
                    Target::Name(n) => self.lookup(n, scope)?,
                    Target::Index(obj, idx) => {
                        let o = self.eval(obj, scope)?;
                        let i = self.eval(idx, scope)?;
                        self.get_item(&o, &i)?
                    }
                    Target::Tuple(_) => return exc("SyntaxError", "illegal target for augmented assignment"),
                };
                let rhs = self.eval(value, scope)?;
                let result = match (&current, op) {
                    (Value::List(l), BinOp::Add) => {
                        let extra = self.collect(&rhs)?;
                        l.borrow_mut().extend(extra);
                        current.clone()
                    }
                    _ => self.binop(*op, &current, &rhs)?,
                };
                self.assign(target, result, scope)?;
            }
            StmtKind::If(arms, otherwise) => {
                for (cond, body) in arms {
                    if self.eval(cond, scope)?.truthy() {
                        return self.exec_block(body, scope);
                    }
                }
                if let Some(body) = otherwise {
                    return self.exec_block(body, scope);
                }
            }
            StmtKind::For(target, iter, body) => {
                let it = self.eval(iter, scope)?;
                let it = self.iterate(&it)?;
                for item in it {
                    self.tick()?;
                    self.assign(target, item, scope)?;
                    match self.exec_block(body, scope)? {
                        Flow::Break => break,
                        Flow::Return(v) => return Ok(Flow::Return(v)),
                        Flow::Normal | Flow::Continue => {}
                    }
                }
            }
            StmtKind::While(cond, body) => {
                while self.eval(cond, scope)?.truthy() {
                    self.tick()?;
                    match self.exec_block(body, scope)? {
                        Flow::Break => break,
                        Flow::Return(v) => return Ok(Flow::Return(v)),
                        Flow::Normal | Flow::Continue => {}
                    }
                }
            }
            StmtKind::Return(e) => {
                let v = match e {
                    Some(e) => self.eval(e, scope)?,
                    None => Value::None,
                };
                return Ok(Flow::Return(v));
            }
            StmtKind::Pass => {}
            StmtKind::Break => return Ok(Flow::Break),
            StmtKind::Continue => return Ok(Flow::Continue),
            StmtKind::Raise(e) => {
                let Some(e) = e else {
                    return match self.handling.last() {
                        Some(current) => Err(Signal::Exc(current.clone())),
                        None => exc("RuntimeError", "No active exception to reraise"),
                    };
                };
                return Err(Signal::Exc(match self.eval(e, scope)? {
                    Value::Exc(x) => x,
                    Value::ExcType(kind) => Rc::new(ExcValue {
                        kind,
                        message: String::new(),
                    }),
                    other => {
                        return type_error(format!("exceptions must derive from BaseException, not {}", other.type_name()))
                    }
                }));
            }
            StmtKind::Assert(cond, msg) => {
                if !self.eval(cond, scope)?.truthy() {
                    let message = match msg {
                        Some(m) => self.eval(m, scope)?.to_str(),
                        None => String::new(),
                    };
                    return exc("AssertionError", message);
                }
            }
            StmtKind::Try { body, handlers, finally } => {
                let outcome = match self.exec_block(body, scope) {
                    Err(Signal::Exc(e)) => self.handle(e, handlers, scope),
                    other => other,
                };
                if let Some(fin) = finally {
                    if matches!(outcome, Err(Signal::Timeout)) {
                        return outcome;
                    }
                    match self.exec_block(fin, scope)? {
                        Flow::Normal => {}
                        flow => return Ok(flow),
                    }
                }
                return outcome;
            }
            StmtKind::Def(f) => {
                let closure = self.make_closure(f, scope)?;
                scope.set(&f.name, closure);
            }
            StmtKind::Import(names) => {
                for (module, alias) in names {
                    let root = module.split('.').next().unwrap_or(module);
                    let bound = alias.as_deref().unwrap_or(root);
                    scope.set(bound, Value::Module(root.into()));
                }
            }
            StmtKind::ImportFrom(module, names) => {
                for (name, alias) in names {
                    if name == "*" {
                        return exc("ImportError", "wildcard imports are not supported");
                    }
                    let v = self.module_attr(module, name).or_else(|_| {
                        exc("ImportError", format!("cannot import name '{name}' from '{module}'"))
                    })?;
                    scope.set(alias.as_deref().unwrap_or(name), v);
                }
            }
        }
        Ok(Flow::Normal)
    }

    fn handle(&mut self, e: Rc<ExcValue>, handlers: &[Handler], scope: &Rc<Scope>) -> R<Flow> {
        for h in handlers {
            let matched = match &h.types {
                None => true,
                Some(t) => {
                    let t = self.eval(t, scope)?;
                    exc_matches(&e.kind, &t)
                }
            };
            if matched {
                if let Some(n) = &h.name {
                    scope.set(n, Value::Exc(e.clone()));
                }
                self.handling.push(e);
                let r = self.exec_block(&h.body, scope);
                self.handling.pop();
                return r;
            }
        }
        Err(Signal::Exc(e))
    }

    fn make_closure(&mut self, f: &Rc<FuncDef>, scope: &Rc<Scope>) -> R<Value> {
        let mut defaults = Vec::with_capacity(f.params.len());
        for (_, d) in &f.params {
            defaults.push(match d {
                Some(d) => Some(self.eval(d, scope)?),
                None => None,
            });
        }
        Ok(Value::Func(Rc::new(Closure {
            def: f.clone(),
            defaults,
            scope: scope.clone(),
        })))
    }

    fn assign(&mut self, t: &Target, v: Value, scope: &Rc<Scope>) -> R<()> {
        match t {
            Target::Name(n) => scope.set(n, v),
            Target::Tuple(targets) => {
                let items = self.collect(&v)?;
                if items.len() != targets.len() {
                    return exc(
                        "ValueError",
                        format!("expected {} values to unpack, got {}", targets.len(), items.len()),
                    );
                }
                for (t, item) in targets.iter().zip(items) {
                    self.assign(t, item, scope)?;
                }
            }
            Target::Index(obj, idx) => {
                let o = self.eval(obj, scope)?;
                let i = self.eval(idx, scope)?;
                self.set_item(&o, i, v)?;
            }
        }
        Ok(())
    }

    fn set_item(&mut self, o: &Value, i: Value, v: Value) -> R<()> {
        match o {
            Value::List(l) => {
                let mut l = l.borrow_mut();
                let idx = norm_index(&i, l.len())?;
                l[idx] = v;
                Ok(())
            }
            Value::Dict(d) => {
                check_hashable(&i)?;
                d.borrow_mut().insert(i, v);
                Ok(())
            }
            other => type_error(format!("'{}' object does not support item assignment", other.type_name())),
        }
    }

    pub fn lookup(&self, name: &str, scope: &Rc<Scope>) -> R<Value> {
        if let Some(v) = scope.get(name) {
            return Ok(v);
        }
        match builtin_global(name) {
            Some(v) => Ok(v),
            None => exc("NameError", format!("name '{name}' is not defined")),
        }
    }

    pub fn eval(&mut self, e: &Expr, scope: &Rc<Scope>) -> R<Value> {
        Ok(match e {
            Expr::Name(n, _) => self.lookup(n, scope)?,
            Expr::Const(c) => match c {
                Const::None => Value::None,
                Const::Bool(b) => Value::Bool(*b),
                Const::Int(i) => Value::Int(*i),
                Const::Float(f) => Value::Float(*f),
                Const::Str(s) => Value::str(s.as_str()),
            },
            Expr::List(items) => Value::list(self.eval_all(items, scope)?),
            Expr::Tuple(items) => Value::tuple(self.eval_all(items, scope)?),
            Expr::Set(items) => {
                let items = self.eval_all(items, scope)?;
                set_from(items)?
            }
            Expr::Dict(pairs) => {
                let mut d = Dict::default();
                for (k, v) in pairs {
                    let k = self.eval(k, scope)?;
                    check_hashable(&k)?;
                    let v = self.eval(v, scope)?;
                    d.insert(k, v);
                }
                Value::Dict(Rc::new(RefCell::new(d)))
            }
            Expr::Attr(obj, name, _) => {
                let o = self.eval(obj, scope)?;
                self.get_attr(o, name)?
            }
            Expr::Call { func, args, kwargs, .. } => {
                let f = self.eval(func, scope)?;
                let args = self.eval_all(args, scope)?;
                let mut kw = Vec::with_capacity(kwargs.len());
                for (k, v) in kwargs {
                    kw.push((k.clone(), self.eval(v, scope)?));
                }
                self.call(&f, args, kw)?
            }
            Expr::Index(obj, idx) => {
                let o = self.eval(obj, scope)?;
                let i = self.eval(idx, scope)?;
                self.get_item(&o, &i)?
            }
            Expr::Slice { obj, lo, hi, step } => {
                let o = self.eval(obj, scope)?;
                let part = |p: &Option<Box<Expr>>, this: &mut Self| -> R<Option<i64>> {
                    match p {
                        None => Ok(None),
                        Some(e) => match this.eval(e, scope)? {
                            Value::None => Ok(None),
                            v => Ok(Some(as_index(&v)?)),
                        },
                    }
                };
                let lo = part(lo, self)?;
                let hi = part(hi, self)?;
                let step = part(step, self)?;
                slice(&o, lo, hi, step)?
            }
            Expr::Unary(op, a) => {
                let v = self.eval(a, scope)?;
                match op {
                    UnOp::Not => Value::Bool(!v.truthy()),
                    UnOp::Neg => match v.as_num() {
                        Some(Num::Int(i)) => Value::Int(i.checked_neg().map_or_else(overflow, Ok)?),
                        Some(Num::Float(f)) => Value::Float(-f),
                        None => return type_error(format!("bad operand type for unary -: '{}'", v.type_name())),
                    },
                    UnOp::Pos => match v.as_num() {
                        Some(Num::Int(i)) => Value::Int(i),
                        Some(Num::Float(f)) => Value::Float(f),
                        None => return type_error(format!("bad operand type for unary +: '{}'", v.type_name())),
                    },
                }
            }
            Expr::Bin(op, a, b) => {
                let a = self.eval(a, scope)?;
                let b = self.eval(b, scope)?;
                self.binop(*op, &a, &b)?
            }
            Expr::And(a, b) => {
                let a = self.eval(a, scope)?;
                if !a.truthy() {
                    a
                } else {
                    self.eval(b, scope)?
                }
            }
            Expr::Or(a, b) => {
                let a = self.eval(a, scope)?;
                if a.truthy() {
                    a
                } else {
                    self.eval(b, scope)?
                }
            }
            Expr::Compare(first, rest) => {
                let mut left = self.eval(first, scope)?;
                for (op, right) in rest {
                    let right = self.eval(right, scope)?;
                    if !self.compare(*op, &left, &right)? {
                        return Ok(Value::Bool(false));
                    }
                    left = right;
                }
                Value::Bool(true)
            }
            Expr::IfExp { cond, then, otherwise } => {
                if self.eval(cond, scope)?.truthy() {
                    self.eval(then, scope)?
                } else {
                    self.eval(otherwise, scope)?
                }
            }
            Expr::Comp {
                kind,
                elt,
                value,
                generators,
            } => {
                let inner = Scope::child(scope);
                let mut out = Vec::new();
                self.comprehend(generators, elt, value.as_deref(), &inner, &mut out)?;
                match kind {
                    CompKind::List | CompKind::Gen => Value::list(out),
                    CompKind::Set => set_from(out)?,
                    CompKind::Dict => {
                        let mut d = Dict::default();
                        for pair in out {
                            let Value::Tuple(kv) = pair else { unreachable!("dict comprehension pairs") };
                            check_hashable(&kv[0])?;
                            d.insert(kv[0].clone(), kv[1].clone());
                        }
                        Value::Dict(Rc::new(RefCell::new(d)))
                    }
                }
            }
            Expr::Lambda(f) => self.make_closure(f, scope)?,
        })
    }

    fn comprehend(
        &mut self,
        generators: &[Comprehension],
        elt: &Expr,
        value: Option<&Expr>,
        scope: &Rc<Scope>,
        out: &mut Vec<Value>,
    ) -> R<()> {
        let Some((g, rest)) = generators.split_first() else {
            let e = self.eval(elt, scope)?;
            out.push(match value {
                Some(v) => Value::tuple(vec![e, self.eval(v, scope)?]),
                None => e,
            });
            if out.len() > MAX_LEN {
                return exc("MemoryError", "comprehension too large");
            }
            return Ok(());
        };
        let it = self.eval(&g.iter, scope)?;
        let it = self.iterate(&it)?;
        'items: for item in it {
            self.tick()?;
            self.assign(&g.target, item, scope)?;
            for c in &g.conds {
                if !self.eval(c, scope)?.truthy() {
                    continue 'items;
                }
            }
            self.comprehend(rest, elt, value, scope, out)?;
        }
        Ok(())
    }

    fn eval_all(&mut self, items: &[Expr], scope: &Rc<Scope>) -> R<Vec<Value>> {
        items.iter().map(|e| self.eval(e, scope)).collect()
    }

    pub fn call(&mut self, f: &Value, args: Vec<Value>, kwargs: Vec<(String, Value)>) -> R<Value> {
        self.tick()?;
        match f {
            Value::Func(c) => self.call_closure(c, args, kwargs),
            Value::Builtin(name) => self.call_builtin(name, args, kwargs),
            Value::Method(m) => self.call_method(&m.0, &m.1, args, kwargs),
            Value::ExcType(kind) => {
                let message = match args.as_slice() {
                    [] => String::new(),
                    [one] => one.to_str(),
                    many => Value::tuple(many.to_vec()).repr(),
                };
                Ok(Value::Exc(Rc::new(ExcValue {
                    kind: kind.clone(),
                    message,
                })))
            }
            other => type_error(format!("'{}' object is not callable", other.type_name())),
        }
    }

    pub fn call_closure(&mut self, c: &Closure, args: Vec<Value>, kwargs: Vec<(String, Value)>) -> R<Value> {
        let def = &c.def;
        if args.len() > def.params.len() {
            return type_error(format!(
                "{}() takes {} positional arguments but {} were given",
                def.name,
                def.params.len(),
                args.len()
            ));
        }
        let frame = Scope::child(&c.scope);
        let mut bound: Vec<Option<Value>> = args.into_iter().map(Some).collect();
        bound.resize(def.params.len(), None);
        for (k, v) in kwargs {
            let Some(i) = def.params.iter().position(|(p, _)| *p == k) else {
                return type_error(format!("{}() got an unexpected keyword argument '{k}'", def.name));
            };
            if bound[i].is_some() {
                return type_error(format!("{}() got multiple values for argument '{k}'", def.name));
            }
            bound[i] = Some(v);
        }
        for (i, ((name, _), v)) in def.params.iter().zip(bound).enumerate() {
            let v = match v.or_else(|| c.defaults[i].clone()) {
                Some(v) => v,
                None => return type_error(format!("{}() missing required argument: '{name}'", def.name)),
            };
            frame.set(name, v);
        }
        if self.depth >= MAX_DEPTH {
            return exc("RecursionError", "maximum recursion depth exceeded");
        }
        self.depth += 1;
        let r = self.exec_block(&def.body, &frame);
        self.depth -= 1;
        match r? {
            Flow::Return(v) => Ok(v),
            _ => Ok(Value::None),
        }
    }

    pub fn get_item(&mut self, o: &Value, i: &Value) -> R<Value> {
        match o {
            Value::List(l) => {
                let l = l.borrow();
                Ok(l[norm_index(i, l.len())?].clone())
            }
            Value::Tuple(t) => Ok(t[norm_index(i, t.len())?].clone()),
            Value::Str(s) => {
                let chars: Vec<char> = s.chars().collect();
                Ok(Value::str(chars[norm_index(i, chars.len())?].to_string()))
            }
            Value::Dict(d) => match d.borrow().get(i) {
                Some(v) => Ok(v.clone()),
                None => exc("KeyError", i.repr()),
            },
            Value::Range(start, stop, step) => {
                let n = range_len(*start, *stop, *step);
                let idx = norm_index(i, n as usize)?;
                Ok(Value::Int(start + step * idx as i64))
            }
            Value::Match(m) => self.call_method(o, "group", vec![i.clone()], vec![]).or_else(|_| {
                exc("IndexError", format!("no such group: {}", m.groups.len()))
            }),
            other => type_error(format!("'{}' object is not subscriptable", other.type_name())),
        }
    }

    pub fn binop(&mut self, op: BinOp, a: &Value, b: &Value) -> R<Value> {
        if let (Some(x), Some(y)) = (a.as_num(), b.as_num()) {
            return arith(op, x, y);
        }
        match (op, a, b) {
            (BinOp::Add, Value::Str(x), Value::Str(y)) => {
                if x.len() + y.len() > MAX_LEN {
                    return exc("MemoryError", "string too large");
                }
                Ok(Value::str(format!("{x}{y}")))
            }
            (BinOp::Add, Value::List(x), Value::List(y)) => {
                let mut v = x.borrow().clone();
                v.extend(y.borrow().iter().cloned());
                Ok(Value::list(v))
            }
            (BinOp::Add, Value::Tuple(x), Value::Tuple(y)) => {
                let mut v = x.to_vec();
                v.extend(y.iter().cloned());
                Ok(Value::tuple(v))
            }
            (BinOp::Mul, Value::Str(_) | Value::List(_) | Value::Tuple(_), Value::Int(_) | Value::Bool(_)) => {
                repeat(a, b)
            }
            (BinOp::Mul, Value::Int(_) | Value::Bool(_), Value::Str(_) | Value::List(_) | Value::Tuple(_)) => {
                repeat(b, a)
            }
            (BinOp::Mod, Value::Str(fmt), _) => percent_format(fmt, b),
            (BinOp::Sub, Value::Set(x), Value::Set(y)) => {
                let y = y.borrow();
                let v = x.borrow().iter().filter(|i| !y.iter().any(|j| j.py_eq(i))).cloned().collect();
                Ok(Value::Set(Rc::new(RefCell::new(v))))
            }
            _ => type_error(format!(
                "unsupported operand type(s) for {}: '{}' and '{}'",
                op_symbol(op),
                a.type_name(),
                b.type_name()
            )),
        }
    }

    fn compare(&mut self, op: CmpOp, a: &Value, b: &Value) -> R<bool> {
        use std::cmp::Ordering::*;
        let ord = |a: &Value, b: &Value| match a.py_cmp(b) {
            Some(o) => Ok(o),
            None if matches!(a.as_num(), Some(Num::Float(f)) if f.is_nan())
                || matches!(b.as_num(), Some(Num::Float(f)) if f.is_nan()) =>
            {
                Err(None)
            }
            None => Err(Some(format!(
                "'<' not supported between instances of '{}' and '{}'",
                a.type_name(),
                b.type_name()
            ))),
        };
        let by = |want: &[std::cmp::Ordering]| -> R<bool> {
            match ord(a, b) {
                Ok(o) => Ok(want.contains(&o)),
                Err(None) => Ok(false),
                Err(Some(m)) => type_error(m),
            }
        };
        match op {
            CmpOp::Eq => Ok(a.py_eq(b)),
            CmpOp::Ne => Ok(!a.py_eq(b)),
            CmpOp::Lt => by(&[Less]),
            CmpOp::Le => by(&[Less, Equal]),
            CmpOp::Gt => by(&[Greater]),
            CmpOp::Ge => by(&[Greater, Equal]),
            CmpOp::In => self.contains(b, a),
            CmpOp::NotIn => Ok(!self.contains(b, a)?),
            CmpOp::Is => Ok(a.py_is(b)),
            CmpOp::IsNot => Ok(!a.py_is(b)),
        }
    }

    pub fn contains(&mut self, container: &Value, item: &Value) -> R<bool> {
        match container {
            Value::Str(s) => match item {
                Value::Str(i) => Ok(s.contains(&**i)),
                other => type_error(format!("'in <string>' requires string as left operand, not {}", other.type_name())),
            },
            Value::List(l) | Value::Set(l) => Ok(l.borrow().iter().any(|v| v.py_eq(item))),
            Value::Tuple(t) => Ok(t.iter().any(|v| v.py_eq(item))),
            Value::Dict(d) => Ok(d.borrow().get(item).is_some()),
            Value::Range(start, stop, step) => Ok(match item.as_num() {
                Some(Num::Int(i)) => {
                    let in_bounds = if *step > 0 { i >= *start && i < *stop } else { i <= *start && i > *stop };
                    in_bounds && (i - start) % step == 0
                }
                _ => false,
            }),
            other => type_error(format!("argument of type '{}' is not iterable", other.type_name())),
        }
    }

    pub fn iterate(&mut self, v: &Value) -> R<Iter> {
        Ok(match v {
            Value::Range(start, stop, step) => Iter::Range {
                cur: *start,
                left: range_len(*start, *stop, *step),
                step: *step,
            },
            Value::List(l) | Value::Set(l) => Iter::items(l.borrow().clone()),
            Value::Tuple(t) => Iter::items(t.to_vec()),
            Value::Str(s) => Iter::items(s.chars().map(|c| Value::str(c.to_string())).collect()),
            Value::Dict(d) => Iter::items(d.borrow().entries.iter().map(|(k, _)| k.clone()).collect()),
            other => return type_error(format!("'{}' object is not iterable", other.type_name())),
        })
    }

    /// Materializes an iterable, checking the deadline and size cap.
    pub fn collect(&mut self, v: &Value) -> R<Vec<Value>> {
        if let Value::Range(a, b, c) = v {
            if range_len(*a, *b, *c) as usize > MAX_LEN {
                return exc("MemoryError", "range too large to materialize");
            }
        }
        let mut out = Vec::new();
        let it = self.iterate(v)?;
        for x in it {
            self.tick()?;
            out.push(x);
        }
        Ok(out)
    }
}

pub enum Iter {
    Range { cur: i64, left: i64, step: i64 },
    Items(std::vec::IntoIter<Value>),
}

impl Iter {
    fn items(v: Vec<Value>) -> Self {
        Iter::Items(v.into_iter())
    }
}

impl Iterator for Iter {
    type Item = Value;

    fn next(&mut self) -> Option<Value> {
        match self {
            Iter::Range { cur, left, step } => {
                if *left <= 0 {
                    return None;
                }
                let v = *cur;
                *left -= 1;
                *cur = cur.wrapping_add(*step);
                Some(Value::Int(v))
            }
            Iter::Items(it) => it.next(),
        }
    }
}

fn overflow<T>() -> R<T> {
    exc("OverflowError", "integer overflow")
}

fn op_symbol(op: BinOp) -> &'static str {
    match op {
        BinOp::Add => "+",
        BinOp::Sub => "-",
        BinOp::Mul => "*",
        BinOp::Div => "/",
        BinOp::FloorDiv => "//",
        BinOp::Mod => "%",
        BinOp::Pow => "**",
    }
}

pub fn arith(op: BinOp, x: Num, y: Num) -> R<Value> {
    match (x, y) {
        (Num::Int(a), Num::Int(b)) => int_arith(op, a, b),
        _ => float_arith(op, x.to_f64(), y.to_f64()),
    }
}

fn int_arith(op: BinOp, a: i64, b: i64) -> R<Value> {
    let checked = |r: Option<i64>| r.map(Value::Int).map_or_else(overflow, Ok);
    match op {
        BinOp::Add => checked(a.checked_add(b)),
        BinOp::Sub => checked(a.checked_sub(b)),
        BinOp::Mul => checked(a.checked_mul(b)),
        BinOp::Div => float_arith(op, a as f64, b as f64),
        BinOp::FloorDiv | BinOp::Mod if b == 0 => exc("ZeroDivisionError", "integer division or modulo by zero"),
        BinOp::FloorDiv => checked(a.checked_div_euclid(b).map(|_| floor_div(a, b))),
        BinOp::Mod => checked(a.checked_rem_euclid(b).map(|_| a - b * floor_div(a, b))),
        BinOp::Pow if b < 0 => float_arith(op, a as f64, b as f64),
        BinOp::Pow => checked(u32::try_from(b).ok().and_then(|e| a.checked_pow(e))),
    }
}

fn floor_div(a: i64, b: i64) -> i64 {
    let q = a / b;
    if (a % b != 0) && ((a < 0) != (b < 0)) {
        q - 1
    } else {
        q
    }
}

fn float_arith(op: BinOp, a: f64, b: f64) -> R<Value> {
    let zero = || exc("ZeroDivisionError", "float division by zero");
    Ok(Value::Float(match op {
        BinOp::Add => a + b,
        BinOp::Sub => a - b,
        BinOp::Mul => a * b,
        BinOp::Div if b == 0.0 => return zero(),
        BinOp::Div => a / b,
        BinOp::FloorDiv if b == 0.0 => return zero(),
        BinOp::FloorDiv => (a / b).floor(),
        BinOp::Mod if b == 0.0 => return zero(),
        BinOp::Mod => {
            let r = a % b;
            if r != 0.0 && (r < 0.0) != (b < 0.0) {
                r + b
            } else {
                r
            }
        }
        BinOp::Pow if a == 0.0 && b < 0.0 => return exc("ZeroDivisionError", "0.0 cannot be raised to a negative power"),
        BinOp::Pow => {
            let r = a.powf(b);
            if r.is_nan() && !a.is_nan() && !b.is_nan() {
                return exc("ValueError", "math domain error");
            }
            r
        }
    }))
}

fn repeat(seq: &Value, n: &Value) -> R<Value> {
    let n = match n.as_num() {
        Some(Num::Int(n)) => n.max(0) as usize,
        _ => unreachable!("repeat count is an int"),
    };
    let unit = match seq {
        Value::Str(s) => s.len(),
        Value::List(l) => l.borrow().len(),
        Value::Tuple(t) => t.len(),
        _ => 0,
    };
    if unit.saturating_mul(n) > MAX_LEN {
        return exc("MemoryError", "repetition too large");
    }
    Ok(match seq {
        Value::Str(s) => Value::str(s.repeat(n)),
        Value::List(l) => {
            let l = l.borrow();
            Value::list((0..n).flat_map(|_| l.iter().cloned()).collect())
        }
        Value::Tuple(t) => Value::tuple((0..n).flat_map(|_| t.iter().cloned()).collect()),
        _ => unreachable!("sequence kinds"),
    })
}

/// `"%s/%d" % args` for the common conversions.
fn percent_format(fmt: &str, args: &Value) -> R<Value> {
    let args: Vec<Value> = match args {
        Value::Tuple(t) => t.to_vec(),
        other => vec![other.clone()],
    };
    let mut args = args.into_iter();
    let mut out = String::new();
    let mut chars = fmt.chars().peekable();
    while let Some(c) = chars.next() {
        if c != '%' {
            out.push(c);
            continue;
        }
        let mut spec = String::new();
        while let Some(&d) = chars.peek() {
            if d.is_ascii_digit() || d == '.' || d == '-' {
                spec.push(d);
                chars.next();
            } else {
                break;
            }
        }
        let conv = chars.next();
        if conv == Some('%') {
            out.push('%');
            continue;
        }
        let Some(arg) = args.next() else {
            return type_error("not enough arguments for format string");
        };
        let precision = spec.split_once('.').and_then(|(_, p)| p.parse::<usize>().ok());
        match conv {
            Some('s') => out.push_str(&arg.to_str()),
            Some('r') => out.push_str(&arg.repr()),
            Some('d') | Some('i') => match arg.as_num() {
                Some(n) => out.push_str(&format!("{}", n.to_f64().trunc() as i64)),
                None => return type_error("%d format: a number is required"),
            },
            Some('f') => match arg.as_num() {
                Some(n) => out.push_str(&format!("{:.*}", precision.unwrap_or(6), n.to_f64())),
                None => return type_error("%f format: a number is required"),
            },
            _ => return exc("ValueError", "unsupported format character"),
        }
    }
    if args.next().is_some() {
        return type_error("not all arguments converted during string formatting");
    }
    Ok(Value::str(out))
}

pub fn as_index(v: &Value) -> R<i64> {
    match v {
        Value::Int(i) => Ok(*i),
        Value::Bool(b) => Ok(*b as i64),
        other => type_error(format!("indices must be integers, not {}", other.type_name())),
    }
}

fn norm_index(i: &Value, len: usize) -> R<usize> {
    let i = as_index(i)?;
    let idx = if i < 0 { i + len as i64 } else { i };
    if idx < 0 || idx >= len as i64 {
        return exc("IndexError", "index out of range");
    }
    Ok(idx as usize)
}

fn slice_indices(len: usize, lo: Option<i64>, hi: Option<i64>, step: Option<i64>) -> R<Vec<usize>> {
    let step = step.unwrap_or(1);
    if step == 0 {
        return exc("ValueError", "slice step cannot be zero");
    }
    let len = len as i64;
    let clamp = |v: i64, lower: i64, upper: i64| {
        let v = if v < 0 { v + len } else { v };
        v.clamp(lower, upper)
    };
    let mut out = Vec::new();
    if step > 0 {
        let start = lo.map_or(0, |v| clamp(v, 0, len));
        let stop = hi.map_or(len, |v| clamp(v, 0, len));
        let mut i = start;
        while i < stop {
            out.push(i as usize);
            i += step;
        }
    } else {
        let start = lo.map_or(len - 1, |v| clamp(v, -1, len - 1));
        let stop = hi.map_or(-1, |v| clamp(v, -1, len - 1));
        let mut i = start;
        while i > stop {
            out.push(i as usize);
            i += step;
        }
    }
    Ok(out)
}

fn slice(o: &Value, lo: Option<i64>, hi: Option<i64>, step: Option<i64>) -> R<Value> {
    match o {
        Value::Str(s) => {
            let chars: Vec<char> = s.chars().collect();
            let idx = slice_indices(chars.len(), lo, hi, step)?;
            Ok(Value::str(idx.into_iter().map(|i| chars[i]).collect::<String>()))
        }
        Value::List(l) => {
            let l = l.borrow();
            let idx = slice_indices(l.len(), lo, hi, step)?;
            Ok(Value::list(idx.into_iter().map(|i| l[i].clone()).collect()))
        }
        Value::Tuple(t) => {
            let idx = slice_indices(t.len(), lo, hi, step)?;
            Ok(Value::tuple(idx.into_iter().map(|i| t[i].clone()).collect()))
        }
        other => type_error(format!("'{}' object is not subscriptable", other.type_name())),
    }
}

pub fn check_hashable(v: &Value) -> R<()> {
    match v {
        Value::List(_) | Value::Dict(_) | Value::Set(_) => type_error(format!("unhashable type: '{}'", v.type_name())),
        Value::Tuple(t) => t.iter().try_for_each(check_hashable),
        _ => Ok(()),
    }
}

pub fn set_from(items: Vec<Value>) -> R<Value> {
    let mut out: Vec<Value> = Vec::new();
    for i in items {
        check_hashable(&i)?;
        if !out.iter().any(|v| v.py_eq(&i)) {
            out.push(i);
        }
    }
    Ok(Value::Set(Rc::new(RefCell::new(out))))
}

const EXCEPTION_TYPES: [&str; 20] = [
    "BaseException",
    "Exception",
    "ValueError",
    "TypeError",
    "KeyError",
    "IndexError",
    "LookupError",
    "ZeroDivisionError",
    "ArithmeticError",
    "OverflowError",
    "AttributeError",
    "RuntimeError",
    "AssertionError",
    "NameError",
    "RecursionError",
    "MemoryError",
    "StopIteration",
    "NotImplementedError",
    "ImportError",
    "UnicodeError",
];

fn exc_parent(kind: &str) -> Option<&'static str> {
    Some(match kind {
        "BaseException" => return None,
        "KeyError" | "IndexError" => "LookupError",
        "ZeroDivisionError" | "OverflowError" => "ArithmeticError",
        "RecursionError" | "NotImplementedError" => "RuntimeError",
        "json.JSONDecodeError" | "UnicodeError" => "ValueError",
        "Exception" => "BaseException",
        _ => "Exception",
    })
}

fn exc_matches(kind: &str, handler: &Value) -> bool {
    match handler {
        Value::ExcType(h) => {
            let mut k: Option<&str> = Some(kind);
            while let Some(cur) = k {
                if cur == &**h {
                    return true;
                }
                k = exc_parent(cur);
            }
            false
        }
        Value::Tuple(items) => items.iter().any(|h| exc_matches(kind, h)),
        _ => false,
    }
}

pub const BUILTIN_FUNCTIONS: [&str; 31] = [
    "len", "int", "float", "str", "bool", "abs", "min", "max", "sum", "all", "any", "sorted", "reversed", "list",
    "tuple", "dict", "set", "range", "enumerate", "zip", "isinstance", "round", "map", "filter", "print", "repr",
    "ord", "chr", "divmod", "pow", "frozenset",
];

fn builtin_global(name: &str) -> Option<Value> {
    if EXCEPTION_TYPES.contains(&name) {
        return Some(Value::ExcType(name.into()));
    }
    BUILTIN_FUNCTIONS
        .contains(&name)
        .then(|| Value::Builtin(name.into()))
}
