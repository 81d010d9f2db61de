//! Builtin functions, methods and the supported standard modules.

use std::cell::RefCell;
use std::cmp::Ordering;
use std::rc::Rc;

use regex::RegexBuilder;

use super::interp::*;
use super::value::*;

type Kwargs = Vec<(String, Value)>;

const STR_METHODS: &[&str] = &[
    "strip", "lstrip", "rstrip", "lower", "upper", "casefold", "title", "capitalize", "split", "rsplit",
    "splitlines", "join", "replace", "startswith", "endswith", "isdigit", "isnumeric", "isdecimal", "isalpha",
    "isalnum", "isspace", "isupper", "islower", "find", "rfind", "index", "rindex", "count", "format", "partition",
    "rpartition", "zfill", "ljust", "rjust", "removeprefix", "removesuffix",
];
const LIST_METHODS: &[&str] = &[
    "append", "extend", "insert", "pop", "remove", "index", "count", "sort", "reverse", "copy", "clear",
];
const DICT_METHODS: &[&str] = &[
    "get", "keys", "values", "items", "setdefault", "pop", "update", "copy", "clear", "most_common",
];
const SET_METHODS: &[&str] = &[
    "add", "remove", "discard", "union", "intersection", "difference", "issubset", "issuperset", "copy",
];
const MATCH_METHODS: &[&str] = &["group", "groups", "groupdict", "start", "end", "span"];
const PATTERN_METHODS: &[&str] = &["search", "match", "fullmatch", "findall", "finditer", "sub", "split"];

const RE_I: i64 = 2;
const RE_M: i64 = 8;
const RE_S: i64 = 16;
const RE_X: i64 = 64;

fn arity(name: &str, args: &[Value], min: usize, max: usize) -> R<()> {
    if args.len() < min || args.len() > max {
        let expected = if min == max { format!("{min}") } else { format!("{min} to {max}") };
        return type_error(format!("{name}() takes {expected} arguments ({} given)", args.len()));
    }
    Ok(())
}

fn kwarg(kwargs: &mut Kwargs, name: &str) -> Option<Value> {
    let i = kwargs.iter().position(|(k, _)| k == name)?;
    Some(kwargs.remove(i).1)
}

fn no_kwargs(name: &str, kwargs: &Kwargs) -> R<()> {
    match kwargs.first() {
        Some((k, _)) => type_error(format!("{name}() got an unexpected keyword argument '{k}'")),
        None => Ok(()),
    }
}

fn want_str<'a>(what: &str, v: &'a Value) -> R<&'a Rc<str>> {
    match v {
        Value::Str(s) => Ok(s),
        other => type_error(format!("{what} must be str, not {}", other.type_name())),
    }
}

fn want_f64(what: &str, v: &Value) -> R<f64> {
    match v.as_num() {
        Some(n) => Ok(n.to_f64()),
        None => type_error(format!("{what} must be a real number, not {}", v.type_name())),
    }
}

fn char_index(s: &str, byte: usize) -> i64 {
    s[..byte].chars().count() as i64
}

fn byte_index(s: &str, chars: i64) -> usize {
    s.char_indices().nth(chars.max(0) as usize).map_or(s.len(), |(b, _)| b)
}

impl Interp {
    pub fn get_attr(&mut self, o: Value, name: &str) -> R<Value> {
        let methods: &[&str] = match &o {
            Value::Module(m) => {
                let m = m.clone();
                return self.module_attr(&m, name);
            }
            Value::Pattern(p) if name == "pattern" => return Ok(Value::str(p.source.as_str())),
            Value::Pattern(p) if name == "flags" => return Ok(Value::Int(p.flags)),
            Value::Match(m) if name == "string" => return Ok(Value::Str(m.haystack.clone())),
            Value::Exc(e) if name == "args" => return Ok(Value::tuple(vec![Value::str(e.message.as_str())])),
            Value::Str(_) => STR_METHODS,
            Value::List(_) => LIST_METHODS,
            Value::Dict(_) => DICT_METHODS,
            Value::Set(_) => SET_METHODS,
            Value::Match(_) => MATCH_METHODS,
            Value::Pattern(_) => PATTERN_METHODS,
            _ => &[],
        };
        match methods.iter().find(|m| **m == name) {
            Some(m) => Ok(Value::Method(Rc::new((o, (*m).into())))),
            None => exc("AttributeError", format!("'{}' object has no attribute '{name}'", o.type_name())),
        }
    }

    pub fn module_attr(&mut self, module: &str, name: &str) -> R<Value> {
        let func = |n: &str| Ok(Value::Builtin(format!("{module}.{n}").into()));
        match (module, name) {
            ("re", "search" | "match" | "fullmatch" | "findall" | "finditer" | "sub" | "split" | "compile" | "escape") => {
                func(name)
            }
            ("re", "I" | "IGNORECASE") => Ok(Value::Int(RE_I)),
            ("re", "M" | "MULTILINE") => Ok(Value::Int(RE_M)),
            ("re", "S" | "DOTALL") => Ok(Value::Int(RE_S)),
            ("re", "X" | "VERBOSE") => Ok(Value::Int(RE_X)),
            ("re", "A" | "ASCII") => Ok(Value::Int(256)),
            ("re", "error") => Ok(Value::ExcType("re.error".into())),
            (
                "math",
                "sqrt" | "floor" | "ceil" | "isclose" | "fabs" | "log" | "log10" | "log2" | "exp" | "trunc" | "gcd"
                | "pow" | "isnan" | "isinf" | "isfinite",
            ) => func(name),
            ("math", "pi") => Ok(Value::Float(std::f64::consts::PI)),
            ("math", "e") => Ok(Value::Float(std::f64::consts::E)),
            ("math", "inf") => Ok(Value::Float(f64::INFINITY)),
            ("math", "nan") => Ok(Value::Float(f64::NAN)),
            ("json", "loads" | "dumps") => func(name),
            ("json", "JSONDecodeError") => Ok(Value::ExcType("json.JSONDecodeError".into())),
            ("statistics", "mean" | "median") => func(name),
            ("collections", "Counter") => func(name),
            _ => exc("AttributeError", format!("module '{module}' has no attribute '{name}' in this runner")),
        }
    }

    pub fn call_builtin(&mut self, name: &str, mut args: Vec<Value>, mut kwargs: Kwargs) -> R<Value> {
        if let Some((module, func)) = name.split_once('.') {
            return self.call_module_fn(module, func, args, kwargs);
        }
        match name {
            "sorted" => {
                arity(name, &args, 1, 1)?;
                let key = kwarg(&mut kwargs, "key");
                let reverse = kwarg(&mut kwargs, "reverse").map(|v| v.truthy()).unwrap_or(false);
                no_kwargs(name, &kwargs)?;
                let items = self.collect(&args[0])?;
                return Ok(Value::list(self.sort_values(items, key, reverse)?));
            }
            "min" | "max" => {
                let key = kwarg(&mut kwargs, "key");
                let default = kwarg(&mut kwargs, "default");
                no_kwargs(name, &kwargs)?;
                let items = match args.len() {
                    0 => return type_error(format!("{name} expected at least 1 argument, got 0")),
                    1 => self.collect(&args[0])?,
                    _ => args,
                };
                if items.is_empty() {
                    return match default {
                        Some(d) => Ok(d),
                        None => exc("ValueError", format!("{name}() arg is an empty sequence")),
                    };
                }
                let want = if name == "min" { Ordering::Less } else { Ordering::Greater };
                let mut best = items[0].clone();
                let mut best_key = self.key_of(&key, &best)?;
                for item in items.into_iter().skip(1) {
                    let k = self.key_of(&key, &item)?;
                    if order(&k, &best_key)? == want {
                        best = item;
                        best_key = k;
                    }
                }
                return Ok(best);
            }
            "round" => {
                let ndigits = kwarg(&mut kwargs, "ndigits");
                no_kwargs(name, &kwargs)?;
                arity(name, &args, 1, 2)?;
                let nd = ndigits.or_else(|| args.get(1).cloned()).filter(|v| !matches!(v, Value::None));
                return round(&args[0], nd);
            }
            "int" => {
                let base = kwarg(&mut kwargs, "base");
                no_kwargs(name, &kwargs)?;
                arity(name, &args, 0, 2)?;
                let base = base.or_else(|| args.get(1).cloned());
                return to_int(args.first().unwrap_or(&Value::Int(0)), base);
            }
            "dict" => {
                arity(name, &args, 0, 1)?;
                let mut d = Dict::default();
                if let Some(src) = args.first() {
                    match src {
                        Value::Dict(other) => d.entries = other.borrow().entries.clone(),
                        other => {
                            for pair in self.collect(other)? {
                                let kv = self.collect(&pair)?;
                                if kv.len() != 2 {
                                    return exc("ValueError", "dictionary update sequence element has wrong length");
                                }
                                check_hashable(&kv[0])?;
                                d.insert(kv[0].clone(), kv[1].clone());
                            }
                        }
                    }
                }
                for (k, v) in kwargs {
                    d.insert(Value::str(k), v);
                }
                return Ok(Value::Dict(Rc::new(RefCell::new(d))));
            }
            "enumerate" => {
                let start = kwarg(&mut kwargs, "start");
                no_kwargs(name, &kwargs)?;
                arity(name, &args, 1, 2)?;
                let start = match start.or_else(|| args.get(1).cloned()) {
                    Some(v) => as_index(&v)?,
                    None => 0,
                };
                let items = self.collect(&args[0])?;
                return Ok(Value::list(
                    items
                        .into_iter()
                        .enumerate()
                        .map(|(i, v)| Value::tuple(vec![Value::Int(start + i as i64), v]))
                        .collect(),
                ));
            }
            "print" => return Ok(Value::None),
            _ => {}
        }
        no_kwargs(name, &kwargs)?;
        match name {
            "len" => {
                arity(name, &args, 1, 1)?;
                Ok(Value::Int(match &args[0] {
                    Value::Str(s) => s.chars().count() as i64,
                    Value::List(l) | Value::Set(l) => l.borrow().len() as i64,
                    Value::Tuple(t) => t.len() as i64,
                    Value::Dict(d) => d.borrow().entries.len() as i64,
                    Value::Range(a, b, c) => range_len(*a, *b, *c),
                    other => return type_error(format!("object of type '{}' has no len()", other.type_name())),
                }))
            }
            "float" => {
                arity(name, &args, 0, 1)?;
                to_float(args.first().unwrap_or(&Value::Float(0.0)))
            }
            "str" => {
                arity(name, &args, 0, 1)?;
                Ok(Value::str(args.first().map(Value::to_str).unwrap_or_default()))
            }
            "repr" => {
                arity(name, &args, 1, 1)?;
                Ok(Value::str(args[0].repr()))
            }
            "bool" => {
                arity(name, &args, 0, 1)?;
                Ok(Value::Bool(args.first().map(Value::truthy).unwrap_or(false)))
            }
            "abs" => {
                arity(name, &args, 1, 1)?;
                match args[0].as_num() {
                    Some(Num::Int(i)) => i.checked_abs().map(Value::Int).map_or_else(|| exc("OverflowError", "integer overflow"), Ok),
                    Some(Num::Float(f)) => Ok(Value::Float(f.abs())),
                    None => type_error(format!("bad operand type for abs(): '{}'", args[0].type_name())),
                }
            }
            "sum" => {
                arity(name, &args, 1, 2)?;
                let mut acc = args.get(1).cloned().unwrap_or(Value::Int(0));
                let it = self.iterate(&args[0])?;
                for v in it {
                    self.tick()?;
                    acc = self.binop(super::ast::BinOp::Add, &acc, &v)?;
                }
                Ok(acc)
            }
            "all" | "any" => {
                arity(name, &args, 1, 1)?;
                let want = name == "any";
                let it = self.iterate(&args[0])?;
                for v in it {
                    self.tick()?;
                    if v.truthy() == want {
                        return Ok(Value::Bool(want));
                    }
                }
                Ok(Value::Bool(!want))
            }
            "list" => {
                arity(name, &args, 0, 1)?;
                Ok(Value::list(match args.first() {
                    Some(v) => self.collect(v)?,
                    None => Vec::new(),
                }))
            }
            "tuple" => {
                arity(name, &args, 0, 1)?;
                Ok(Value::tuple(match args.first() {
                    Some(v) => self.collect(v)?,
                    None => Vec::new(),
                }))
            }
            "set" | "frozenset" => {
                arity(name, &args, 0, 1)?;
                set_from(match args.first() {
                    Some(v) => self.collect(v)?,
                    None => Vec::new(),
                })
            }
            "reversed" => {
                arity(name, &args, 1, 1)?;
                let mut items = self.collect(&args[0])?;
                items.reverse();
                Ok(Value::list(items))
            }
            "range" => {
                arity(name, &args, 1, 3)?;
                let nums = args.iter().map(as_index).collect::<R<Vec<_>>>()?;
                let (start, stop, step) = match nums.as_slice() {
                    [stop] => (0, *stop, 1),
                    [start, stop] => (*start, *stop, 1),
                    [start, stop, step] => (*start, *stop, *step),
                    _ => unreachable!("arity checked"),
                };
                if step == 0 {
                    return exc("ValueError", "range() arg 3 must not be zero");
                }
                Ok(Value::Range(start, stop, step))
            }
            "zip" => {
                let cols = args.iter().map(|a| self.collect(a)).collect::<R<Vec<_>>>()?;
                let n = cols.iter().map(Vec::len).min().unwrap_or(0);
                Ok(Value::list(
                    (0..n)
                        .map(|i| Value::tuple(cols.iter().map(|c| c[i].clone()).collect()))
                        .collect(),
                ))
            }
            "map" => {
                arity(name, &args, 2, 2)?;
                let f = args.remove(0);
                let items = self.collect(&args[0])?;
                let mut out = Vec::with_capacity(items.len());
                for v in items {
                    out.push(self.call(&f, vec![v], vec![])?);
                }
                Ok(Value::list(out))
            }
            "filter" => {
                arity(name, &args, 2, 2)?;
                let f = args.remove(0);
                let items = self.collect(&args[0])?;
                let mut out = Vec::new();
                for v in items {
                    let keep = match f {
                        Value::None => v.truthy(),
                        _ => self.call(&f, vec![v.clone()], vec![])?.truthy(),
                    };
                    if keep {
                        out.push(v);
                    }
                }
                Ok(Value::list(out))
            }
            "isinstance" => {
                arity(name, &args, 2, 2)?;
                Ok(Value::Bool(is_instance(&args[0], &args[1])?))
            }
            "callable" => {
                arity(name, &args, 1, 1)?;
                Ok(Value::Bool(matches!(
                    args[0],
                    Value::Func(_) | Value::Builtin(_) | Value::Method(_) | Value::ExcType(_)
                )))
            }
            "ord" => {
                arity(name, &args, 1, 1)?;
                let s = want_str("ord() argument", &args[0])?;
                let mut chars = s.chars();
                match (chars.next(), chars.next()) {
                    (Some(c), None) => Ok(Value::Int(c as i64)),
                    _ => type_error("ord() expected a character"),
                }
            }
            "chr" => {
                arity(name, &args, 1, 1)?;
                let i = as_index(&args[0])?;
                match u32::try_from(i).ok().and_then(char::from_u32) {
                    Some(c) => Ok(Value::str(c.to_string())),
                    None => exc("ValueError", "chr() arg not in range(0x110000)"),
                }
            }
            "divmod" => {
                arity(name, &args, 2, 2)?;
                let q = self.binop(super::ast::BinOp::FloorDiv, &args[0], &args[1])?;
                let r = self.binop(super::ast::BinOp::Mod, &args[0], &args[1])?;
                Ok(Value::tuple(vec![q, r]))
            }
            "pow" => {
                arity(name, &args, 2, 3)?;
                if let Some(m) = args.get(2) {
                    let (b, e, m) = (as_index(&args[0])?, as_index(&args[1])?, as_index(m)?);
                    if m == 0 {
                        return exc("ValueError", "pow() 3rd argument cannot be 0");
                    }
                    if e < 0 {
                        return exc("ValueError", "negative exponent with modulus");
                    }
                    let (mut acc, mut base, mut e, m) = (1i128, (b as i128).rem_euclid(m as i128), e, m as i128);
                    while e > 0 {
                        if e & 1 == 1 {
                            acc = acc * base % m;
                        }
                        base = base * base % m;
                        e >>= 1;
                    }
                    return Ok(Value::Int(acc.rem_euclid(m) as i64));
                }
                self.binop(super::ast::BinOp::Pow, &args[0], &args[1])
            }
            _ => exc("NameError", format!("name '{name}' is not defined")),
        }
    }

    fn key_of(&mut self, key: &Option<Value>, v: &Value) -> R<Value> {
        match key {
            Some(Value::None) | None => Ok(v.clone()),
            Some(f) => self.call(f, vec![v.clone()], vec![]),
        }
    }

    fn sort_values(&mut self, items: Vec<Value>, key: Option<Value>, reverse: bool) -> R<Vec<Value>> {
        let mut keyed = Vec::with_capacity(items.len());
        for v in items {
            self.tick()?;
            keyed.push((self.key_of(&key, &v)?, v));
        }
        let mut failure = None;
        keyed.sort_by(|(a, _), (b, _)| {
            let o = match order(a, b) {
                Ok(o) => o,
                Err(e) => {
                    failure.get_or_insert(e);
                    Ordering::Equal
                }
            };
            if reverse {
                o.reverse()
            } else {
                o
            }
        });
        if let Some(e) = failure {
            return Err(e);
        }
        Ok(keyed.into_iter().map(|(_, v)| v).collect())
    }

    pub fn call_method(&mut self, recv: &Value, name: &str, mut args: Vec<Value>, mut kwargs: Kwargs) -> R<Value> {
        match recv {
            Value::List(l) if name == "sort" => {
                let key = kwarg(&mut kwargs, "key");
                let reverse = kwarg(&mut kwargs, "reverse").map(|v| v.truthy()).unwrap_or(false);
                no_kwargs(name, &kwargs)?;
                arity(name, &args, 0, 0)?;
                let items = l.borrow().clone();
                let sorted = self.sort_values(items, key, reverse)?;
                *l.borrow_mut() = sorted;
                return Ok(Value::None);
            }
            Value::Str(s) if name == "split" || name == "rsplit" => {
                let sep = kwarg(&mut kwargs, "sep");
                let maxsplit = kwarg(&mut kwargs, "maxsplit");
                no_kwargs(name, &kwargs)?;
                arity(name, &args, 0, 2)?;
                let sep = sep.or_else(|| args.first().cloned()).filter(|v| !matches!(v, Value::None));
                let maxsplit = match maxsplit.or_else(|| args.get(1).cloned()) {
                    Some(v) => as_index(&v)?,
                    None => -1,
                };
                return str_split(s, sep.as_ref(), maxsplit, name == "rsplit");
            }
            Value::Str(s) if name == "format" => return self.str_format(s, &args, &kwargs),
            Value::Pattern(p) => {
                let mut full = vec![Value::Pattern(p.clone())];
                full.append(&mut args);
                return self.call_module_fn("re", name, full, kwargs);
            }
            _ => {}
        }
        no_kwargs(name, &kwargs)?;
        match recv {
            Value::Str(s) => self.str_method(s, name, &args),
            Value::List(l) => self.list_method(l, name, args),
            Value::Dict(d) => self.dict_method(d, name, args),
            Value::Set(s) => self.set_method(s, name, args),
            Value::Match(m) => match_method(m, name, &args),
            other => exc("AttributeError", format!("'{}' object has no attribute '{name}'", other.type_name())),
        }
    }

    fn str_method(&mut self, s: &Rc<str>, name: &str, args: &[Value]) -> R<Value> {
        let s: &str = s;
        let arg_str = |i: usize| -> R<&Rc<str>> {
            match args.get(i) {
                Some(v) => want_str(&format!("{name}() argument"), v),
                None => type_error(format!("{name}() missing argument")),
            }
        };
        let b = Value::Bool;
        Ok(match name {
            "strip" | "lstrip" | "rstrip" => {
                arity(name, args, 0, 1)?;
                let chars: Option<Vec<char>> = match args.first() {
                    None | Some(Value::None) => None,
                    Some(v) => Some(want_str("strip arg", v)?.chars().collect()),
                };
                let pred = |c: char| match &chars {
                    Some(set) => set.contains(&c),
                    None => c.is_whitespace(),
                };
                Value::str(match name {
                    "strip" => s.trim_matches(pred),
                    "lstrip" => s.trim_start_matches(pred),
                    _ => s.trim_end_matches(pred),
                })
            }
            "lower" | "casefold" => Value::str(s.to_lowercase()),
            "upper" => Value::str(s.to_uppercase()),
            "title" | "capitalize" => {
                let mut out = String::with_capacity(s.len());
                let mut start = true;
                for (i, c) in s.chars().enumerate() {
                    let upper = if name == "title" { start } else { i == 0 };
                    if upper {
                        out.extend(c.to_uppercase());
                    } else {
                        out.extend(c.to_lowercase());
                    }
                    start = !c.is_alphabetic();
                }
                Value::str(out)
            }
            "splitlines" => Value::list(s.lines().map(Value::str).collect()),
            "join" => {
                arity(name, args, 1, 1)?;
                let parts = self.collect(&args[0])?;
                let mut out = String::new();
                for (i, p) in parts.iter().enumerate() {
                    if i > 0 {
                        out.push_str(s);
                    }
                    out.push_str(want_str("sequence item", p)?);
                    if out.len() > MAX_LEN {
                        return exc("MemoryError", "joined string too large");
                    }
                }
                Value::str(out)
            }
            "replace" => {
                arity(name, args, 2, 3)?;
                let (old, new) = (arg_str(0)?, arg_str(1)?);
                let count = match args.get(2) {
                    Some(v) => as_index(v)?,
                    None => -1,
                };
                let estimate = s.len() + new.len().saturating_mul(s.len() + 1);
                if estimate > MAX_LEN && new.len() > old.len() {
                    return exc("MemoryError", "replacement too large");
                }
                if count < 0 {
                    if old.is_empty() {
                        let mut out = String::from(&**new);
                        for c in s.chars() {
                            out.push(c);
                            out.push_str(new);
                        }
                        Value::str(out)
                    } else {
                        Value::str(s.replace(&**old, new))
                    }
                } else {
                    Value::str(s.replacen(&**old, new, count as usize))
                }
            }
            "startswith" | "endswith" => {
                arity(name, args, 1, 2)?;
                let start = match args.get(1) {
                    Some(v) => as_index(v)?,
                    None => 0,
                };
                let len = s.chars().count() as i64;
                let start = if start < 0 { (start + len).max(0) } else { start.min(len) };
                let hay = &s[byte_index(s, start)..];
                let test = |p: &str| if name == "startswith" { hay.starts_with(p) } else { hay.ends_with(p) };
                match &args[0] {
                    Value::Str(p) => b(test(p)),
                    Value::Tuple(ps) => {
                        let mut any = false;
                        for p in ps.iter() {
                            any |= test(want_str("tuple item", p)?);
                        }
                        b(any)
                    }
                    other => return type_error(format!("{name} first arg must be str or a tuple of str, not {}", other.type_name())),
                }
            }
            "isdigit" | "isnumeric" | "isdecimal" => b(!s.is_empty() && s.chars().all(|c| c.is_ascii_digit() || (name != "isdecimal" && c.is_numeric()))),
            "isalpha" => b(!s.is_empty() && s.chars().all(char::is_alphabetic)),
            "isalnum" => b(!s.is_empty() && s.chars().all(char::is_alphanumeric)),
            "isspace" => b(!s.is_empty() && s.chars().all(char::is_whitespace)),
            "isupper" => b(s.chars().any(char::is_uppercase) && !s.chars().any(char::is_lowercase)),
            "islower" => b(s.chars().any(char::is_lowercase) && !s.chars().any(char::is_uppercase)),
            "find" | "rfind" | "index" | "rindex" => {
                arity(name, args, 1, 1)?;
                let needle = arg_str(0)?;
                let found = if name.starts_with('r') { s.rfind(&**needle) } else { s.find(&**needle) };
                match found {
                    Some(byte) => Value::Int(char_index(s, byte)),
                    None if name.ends_with("find") => Value::Int(-1),
                    None => return exc("ValueError", "substring not found"),
                }
            }
            "count" => {
                arity(name, args, 1, 1)?;
                let needle = arg_str(0)?;
                Value::Int(if needle.is_empty() {
                    s.chars().count() as i64 + 1
                } else {
                    s.matches(&**needle).count() as i64
                })
            }
            "partition" | "rpartition" => {
                arity(name, args, 1, 1)?;
                let sep = arg_str(0)?;
                if sep.is_empty() {
                    return exc("ValueError", "empty separator");
                }
                let split = if name == "partition" { s.split_once(&**sep) } else { s.rsplit_once(&**sep) };
                let parts = match split {
                    Some((a, c)) => [a, sep, c],
                    None if name == "partition" => [s, "", ""],
                    None => ["", "", s],
                };
                Value::tuple(parts.iter().map(|p| Value::str(*p)).collect())
            }
            "zfill" | "ljust" | "rjust" => {
                arity(name, args, 1, 2)?;
                let width = as_index(&args[0])?.max(0) as usize;
                if width > MAX_LEN {
                    return exc("MemoryError", "padding too large");
                }
                let fill = match args.get(1) {
                    Some(v) => want_str("fill", v)?.chars().next().unwrap_or(' '),
                    None if name == "zfill" => '0',
                    None => ' ',
                };
                let len = s.chars().count();
                let pad: String = std::iter::repeat_n(fill, width.saturating_sub(len)).collect();
                Value::str(match name {
                    "ljust" => format!("{s}{pad}"),
                    "zfill" if s.starts_with(['-', '+']) => format!("{}{pad}{}", &s[..1], &s[1..]),
                    _ => format!("{pad}{s}"),
                })
            }
            "removeprefix" => Value::str(s.strip_prefix(&**arg_str(0)?).unwrap_or(s)),
            "removesuffix" => Value::str(s.strip_suffix(&**arg_str(0)?).unwrap_or(s)),
            _ => return exc("AttributeError", format!("'str' object has no attribute '{name}'")),
        })
    }

    fn str_format(&mut self, fmt: &str, args: &[Value], kwargs: &Kwargs) -> R<Value> {
        let mut out = String::new();
        let mut auto = 0usize;
        let mut chars = fmt.chars().peekable();
        while let Some(c) = chars.next() {
            match c {
                '{' if chars.peek() == Some(&'{') => {
                    chars.next();
                    out.push('{');
                }
                '}' if chars.peek() == Some(&'}') => {
                    chars.next();
                    out.push('}');
                }
                '{' => {
                    let mut field = String::new();
                    loop {
                        match chars.next() {
                            Some('}') => break,
                            Some(c) => field.push(c),
                            None => return exc("ValueError", "Single '{' encountered in format string"),
                        }
                    }
                    let (name, spec) = field.split_once(':').unwrap_or((&field, ""));
                    let (name, conv) = name.split_once('!').map_or((name, None), |(n, c)| (n, Some(c)));
                    let v = if name.is_empty() {
                        auto += 1;
                        args.get(auto - 1).cloned()
                    } else if let Ok(i) = name.parse::<usize>() {
                        args.get(i).cloned()
                    } else {
                        kwargs.iter().find(|(k, _)| k == name).map(|(_, v)| v.clone())
                    };
                    let Some(v) = v else {
                        return exc("IndexError", format!("replacement field {name:?} has no argument"));
                    };
                    let v = if conv == Some("r") { Value::str(v.repr()) } else { v };
                    out.push_str(&format_spec(&v, spec)?);
                }
                '}' => return exc("ValueError", "Single '}' encountered in format string"),
                c => out.push(c),
            }
        }
        Ok(Value::str(out))
    }

    fn list_method(&mut self, l: &Rc<RefCell<Vec<Value>>>, name: &str, args: Vec<Value>) -> R<Value> {
        match name {
            "append" => {
                arity(name, &args, 1, 1)?;
                let mut l = l.borrow_mut();
                if l.len() >= MAX_LEN {
                    return exc("MemoryError", "list too large");
                }
                l.push(args.into_iter().next().expect("one arg"));
                Ok(Value::None)
            }
            "extend" => {
                arity(name, &args, 1, 1)?;
                let items = self.collect(&args[0])?;
                l.borrow_mut().extend(items);
                Ok(Value::None)
            }
            "insert" => {
                arity(name, &args, 2, 2)?;
                let mut l = l.borrow_mut();
                let len = l.len() as i64;
                let i = as_index(&args[0])?;
                let i = if i < 0 { (i + len).max(0) } else { i.min(len) };
                l.insert(i as usize, args[1].clone());
                Ok(Value::None)
            }
            "pop" => {
                arity(name, &args, 0, 1)?;
                let mut l = l.borrow_mut();
                if l.is_empty() {
                    return exc("IndexError", "pop from empty list");
                }
                let len = l.len() as i64;
                let i = match args.first() {
                    Some(v) => as_index(v)?,
                    None => -1,
                };
                let i = if i < 0 { i + len } else { i };
                if !(0..len).contains(&i) {
                    return exc("IndexError", "pop index out of range");
                }
                Ok(l.remove(i as usize))
            }
            "remove" | "index" | "count" => {
                arity(name, &args, 1, 1)?;
                let mut l = l.borrow_mut();
                let pos = l.iter().position(|v| v.py_eq(&args[0]));
                match (name, pos) {
                    ("count", _) => Ok(Value::Int(l.iter().filter(|v| v.py_eq(&args[0])).count() as i64)),
                    ("index", Some(i)) => Ok(Value::Int(i as i64)),
                    ("remove", Some(i)) => {
                        l.remove(i);
                        Ok(Value::None)
                    }
                    _ => exc("ValueError", "value is not in list"),
                }
            }
            "reverse" => {
                l.borrow_mut().reverse();
                Ok(Value::None)
            }
            "copy" => Ok(Value::list(l.borrow().clone())),
            "clear" => {
                l.borrow_mut().clear();
                Ok(Value::None)
            }
            _ => exc("AttributeError", format!("'list' object has no attribute '{name}'")),
        }
    }

    fn dict_method(&mut self, d: &Rc<RefCell<Dict>>, name: &str, args: Vec<Value>) -> R<Value> {
        match name {
            "get" => {
                arity(name, &args, 1, 2)?;
                Ok(d.borrow().get(&args[0]).cloned().unwrap_or_else(|| args.get(1).cloned().unwrap_or(Value::None)))
            }
            "keys" => Ok(Value::list(d.borrow().entries.iter().map(|(k, _)| k.clone()).collect())),
            "values" => Ok(Value::list(d.borrow().entries.iter().map(|(_, v)| v.clone()).collect())),
            "items" => Ok(Value::list(
                d.borrow()
                    .entries
                    .iter()
                    .map(|(k, v)| Value::tuple(vec![k.clone(), v.clone()]))
                    .collect(),
            )),
            "setdefault" => {
                arity(name, &args, 1, 2)?;
                check_hashable(&args[0])?;
                let mut d = d.borrow_mut();
                if let Some(v) = d.get(&args[0]) {
                    return Ok(v.clone());
                }
                let v = args.get(1).cloned().unwrap_or(Value::None);
                d.insert(args[0].clone(), v.clone());
                Ok(v)
            }
            "pop" => {
                arity(name, &args, 1, 2)?;
                match (d.borrow_mut().remove(&args[0]), args.get(1)) {
                    (Some(v), _) => Ok(v),
                    (None, Some(default)) => Ok(default.clone()),
                    (None, None) => exc("KeyError", args[0].repr()),
                }
            }
            "update" => {
                arity(name, &args, 1, 1)?;
                let Value::Dict(other) = &args[0] else {
                    return type_error("update() argument must be a dict");
                };
                let entries = other.borrow().entries.clone();
                let mut d = d.borrow_mut();
                for (k, v) in entries {
                    d.insert(k, v);
                }
                Ok(Value::None)
            }
            "copy" => Ok(Value::dict(d.borrow().entries.clone())),
            "clear" => {
                d.borrow_mut().entries.clear();
                Ok(Value::None)
            }
            "most_common" => {
                arity(name, &args, 0, 1)?;
                let entries = d.borrow().entries.clone();
                let mut items: Vec<Value> = entries.into_iter().map(|(k, v)| Value::tuple(vec![k, v])).collect();
                let mut failure = None;
                items.sort_by(|a, b| {
                    let (Value::Tuple(a), Value::Tuple(b)) = (a, b) else { return Ordering::Equal };
                    match order(&b[1], &a[1]) {
                        Ok(o) => o,
                        Err(e) => {
                            failure.get_or_insert(e);
                            Ordering::Equal
                        }
                    }
                });
                if let Some(e) = failure {
                    return Err(e);
                }
                if let Some(n) = args.first().filter(|v| !matches!(v, Value::None)) {
                    items.truncate(as_index(n)?.max(0) as usize);
                }
                Ok(Value::list(items))
            }
            _ => exc("AttributeError", format!("'dict' object has no attribute '{name}'")),
        }
    }

    fn set_method(&mut self, s: &Rc<RefCell<Vec<Value>>>, name: &str, args: Vec<Value>) -> R<Value> {
        let other = |this: &mut Self| -> R<Vec<Value>> {
            match args.first() {
                Some(v) => this.collect(v),
                None => type_error(format!("{name}() takes exactly one argument")),
            }
        };
        let has = |items: &[Value], v: &Value| items.iter().any(|i| i.py_eq(v));
        match name {
            "add" => {
                arity(name, &args, 1, 1)?;
                check_hashable(&args[0])?;
                let mut s = s.borrow_mut();
                if !has(&s, &args[0]) {
                    s.push(args[0].clone());
                }
                Ok(Value::None)
            }
            "remove" | "discard" => {
                arity(name, &args, 1, 1)?;
                let mut s = s.borrow_mut();
                match s.iter().position(|v| v.py_eq(&args[0])) {
                    Some(i) => {
                        s.remove(i);
                    }
                    None if name == "remove" => return exc("KeyError", args[0].repr()),
                    None => {}
                }
                Ok(Value::None)
            }
            "union" => {
                let mut items = s.borrow().clone();
                items.extend(other(self)?);
                set_from(items)
            }
            "intersection" | "difference" => {
                let o = other(self)?;
                let keep = name == "intersection";
                set_from(s.borrow().iter().filter(|v| has(&o, v) == keep).cloned().collect())
            }
            "issubset" => {
                let o = other(self)?;
                Ok(Value::Bool(s.borrow().iter().all(|v| has(&o, v))))
            }
            "issuperset" => {
                let o = other(self)?;
                let s = s.borrow();
                Ok(Value::Bool(o.iter().all(|v| has(&s, v))))
            }
            "copy" => set_from(s.borrow().clone()),
            _ => exc("AttributeError", format!("'set' object has no attribute '{name}'")),
        }
    }

    fn call_module_fn(&mut self, module: &str, name: &str, args: Vec<Value>, kwargs: Kwargs) -> R<Value> {
        match module {
            "re" => self.re_fn(name, args, kwargs),
            "math" => {
                no_kwargs_except(name, &kwargs, &["rel_tol", "abs_tol"])?;
                math_fn(name, &args, &kwargs)
            }
            "json" => json_fn(name, &args, kwargs),
            "statistics" => {
                no_kwargs(name, &kwargs)?;
                arity(name, &args, 1, 1)?;
                let mut xs = Vec::new();
                for v in self.collect(&args[0])? {
                    xs.push(want_f64("data point", &v)?);
                }
                if xs.is_empty() {
                    return exc("StatisticsError", format!("{name} requires at least one data point"));
                }
                Ok(Value::Float(if name == "mean" {
                    xs.iter().sum::<f64>() / xs.len() as f64
                } else {
                    xs.sort_by(|a, b| a.partial_cmp(b).unwrap_or(Ordering::Equal));
                    let n = xs.len();
                    if n % 2 == 1 {
                        xs[n / 2]
                    } else {
                        (xs[n / 2 - 1] + xs[n / 2]) / 2.0
                    }
                }))
            }
            "collections" => {
                no_kwargs(name, &kwargs)?;
                arity(name, &args, 0, 1)?;
                let mut d = Dict::default();
                if let Some(src) = args.first() {
                    for v in self.collect(src)? {
                        check_hashable(&v)?;
                        let n = match d.get(&v) {
                            Some(Value::Int(n)) => n + 1,
                            _ => 1,
                        };
                        d.insert(v, Value::Int(n));
                    }
                }
                Ok(Value::Dict(Rc::new(RefCell::new(d))))
            }
            _ => exc("AttributeError", format!("module '{module}' has no attribute '{name}'")),
        }
    }

    fn compile_regex(&mut self, pattern: &Value, flags: i64) -> R<Rc<PatternValue>> {
        let src = match pattern {
            Value::Pattern(p) => return Ok(p.clone()),
            other => want_str("pattern", other)?.to_string(),
        };
        let key = (src.clone(), flags);
        if let Some(p) = self.regex_cache.get(&key) {
            return Ok(p.clone());
        }
        let regex = RegexBuilder::new(&translate_pattern(&src))
            .case_insensitive(flags & RE_I != 0)
            .multi_line(flags & RE_M != 0)
            .dot_matches_new_line(flags & RE_S != 0)
            .ignore_whitespace(flags & RE_X != 0)
            .size_limit(1 << 22)
            .build();
        let regex = match regex {
            Ok(r) => r,
            Err(e) => return exc("re.error", e.to_string()),
        };
        let p = Rc::new(PatternValue {
            regex,
            source: src,
            flags,
        });
        if self.regex_cache.len() < 256 {
            self.regex_cache.insert(key, p.clone());
        }
        Ok(p)
    }

    fn re_fn(&mut self, name: &str, mut args: Vec<Value>, mut kwargs: Kwargs) -> R<Value> {
        let flags_kw = kwarg(&mut kwargs, "flags");
        let count_kw = kwarg(&mut kwargs, "count").or_else(|| kwarg(&mut kwargs, "maxsplit"));
        no_kwargs(name, &kwargs)?;
        if name == "escape" {
            arity(name, &args, 1, 1)?;
            return Ok(Value::str(regex::escape(want_str("escape arg", &args[0])?)));
        }
        let needs = match name {
            "sub" => 3,
            "compile" => 1,
            _ => 2,
        };
        if args.len() < needs {
            return type_error(format!("re.{name}() missing required arguments"));
        }
        let rest: Vec<Value> = args.split_off(needs);
        let (count_pos, flags_pos) = match name {
            "sub" | "split" => (rest.first().cloned(), rest.get(1).cloned()),
            _ => (None, rest.first().cloned()),
        };
        let flags = match flags_kw.or(flags_pos) {
            Some(v) => as_index(&v)?,
            None => 0,
        };
        let count = match count_kw.or(count_pos) {
            Some(v) => as_index(&v)?,
            None => 0,
        };
        let pattern = self.compile_regex(&args[0], flags)?;
        if name == "compile" {
            return Ok(Value::Pattern(pattern));
        }
        let hay: Rc<str> = match name {
            "sub" => want_str("string", &args[2])?.clone(),
            _ => want_str("string", &args[1])?.clone(),
        };
        let re = &pattern.regex;
        let to_match = |caps: regex::Captures| {
            Value::Match(Rc::new(MatchValue {
                groups: (0..caps.len()).map(|i| caps.get(i).map(|m| (m.start(), m.end()))).collect(),
                names: re.capture_names().map(|n| n.map(str::to_string)).collect(),
                haystack: hay.clone(),
            }))
        };
        match name {
            "search" => Ok(re.captures(&hay).map(to_match).unwrap_or(Value::None)),
            "match" | "fullmatch" => {
                let found = re.captures_iter(&hay).find(|c| {
                    let m = c.get(0).expect("group 0");
                    m.start() == 0 && (name == "match" || m.end() == hay.len())
                });
                // leftmost-first can pick a shorter alternative; retry anchored
                let found = match found {
                    Some(c) => Some(c),
                    None => {
                        let anchored = if name == "match" {
                            format!(r"\A(?:{})", translate_pattern(&pattern.source))
                        } else {
                            format!(r"\A(?:{})\z", translate_pattern(&pattern.source))
                        };
                        let p = self.compile_regex(&Value::str(anchored), pattern.flags)?;
                        return Ok(p
                            .regex
                            .captures(&hay)
                            .map(|caps| {
                                Value::Match(Rc::new(MatchValue {
                                    groups: (0..caps.len()).map(|i| caps.get(i).map(|m| (m.start(), m.end()))).collect(),
                                    names: p.regex.capture_names().map(|n| n.map(str::to_string)).collect(),
                                    haystack: hay.clone(),
                                }))
                            })
                            .unwrap_or(Value::None));
                    }
                };
                Ok(found.map(to_match).unwrap_or(Value::None))
            }
            "findall" => {
                let mut out = Vec::new();
                for caps in re.captures_iter(&hay) {
                    self.tick()?;
                    let text = |i: usize| Value::str(caps.get(i).map_or("", |m| m.as_str()));
                    out.push(match caps.len() {
                        1 => text(0),
                        2 => text(1),
                        n => Value::tuple((1..n).map(text).collect()),
                    });
                }
                Ok(Value::list(out))
            }
            "finditer" => {
                let mut out = Vec::new();
                for caps in re.captures_iter(&hay) {
                    self.tick()?;
                    out.push(to_match(caps));
                }
                Ok(Value::list(out))
            }
            "split" => {
                let mut out = Vec::new();
                let mut last = 0;
                for (n, caps) in re.captures_iter(&hay).enumerate() {
                    self.tick()?;
                    if count > 0 && n as i64 >= count {
                        break;
                    }
                    let m = caps.get(0).expect("group 0");
                    out.push(Value::str(&hay[last..m.start()]));
                    for i in 1..caps.len() {
                        out.push(caps.get(i).map_or(Value::None, |g| Value::str(g.as_str())));
                    }
                    last = m.end();
                }
                out.push(Value::str(&hay[last..]));
                Ok(Value::list(out))
            }
            "sub" => {
                let repl = args[1].clone();
                let template = match &repl {
                    Value::Str(s) => Some(parse_repl(s)?),
                    _ => None,
                };
                let mut out = String::new();
                let mut last = 0;
                for (n, caps) in re.captures_iter(&hay).enumerate() {
                    self.tick()?;
                    if count > 0 && n as i64 >= count {
                        break;
                    }
                    let m = caps.get(0).expect("group 0");
                    out.push_str(&hay[last..m.start()]);
                    match &template {
                        Some(parts) => {
                            for part in parts {
                                match part {
                                    ReplPart::Lit(s) => out.push_str(s),
                                    ReplPart::Group(g) => {
                                        let idx = match g {
                                            GroupRef::Num(i) => Some(*i),
                                            GroupRef::Name(n) => re.capture_names().position(|c| c == Some(n.as_str())),
                                        };
                                        match idx {
                                            Some(i) if i < caps.len() => out.push_str(caps.get(i).map_or("", |m| m.as_str())),
                                            _ => return exc("re.error", "invalid group reference"),
                                        }
                                    }
                                }
                            }
                        }
                        None => {
                            let r = self.call(&repl, vec![to_match(caps)], vec![])?;
                            out.push_str(want_str("replacement", &r)?);
                        }
                    }
                    if out.len() > MAX_LEN {
                        return exc("MemoryError", "substitution result too large");
                    }
                    last = m.end();
                }
                out.push_str(&hay[last..]);
                Ok(Value::str(out))
            }
            _ => exc("AttributeError", format!("module 're' has no attribute '{name}'")),
        }
    }
}

fn no_kwargs_except(name: &str, kwargs: &Kwargs, allowed: &[&str]) -> R<()> {
    match kwargs.iter().find(|(k, _)| !allowed.contains(&k.as_str())) {
        Some((k, _)) => type_error(format!("{name}() got an unexpected keyword argument '{k}'")),
        None => Ok(()),
    }
}

fn order(a: &Value, b: &Value) -> R<Ordering> {
    match a.py_cmp(b) {
        Some(o) => Ok(o),
        None if matches!(a, Value::Float(_)) || matches!(b, Value::Float(_)) => Ok(Ordering::Equal),
        None => type_error(format!(
            "'<' not supported between instances of '{}' and '{}'",
            a.type_name(),
            b.type_name()
        )),
    }
}

fn is_instance(v: &Value, t: &Value) -> R<bool> {
    match t {
        Value::Tuple(ts) => {
            for t in ts.iter() {
                if is_instance(v, t)? {
                    return Ok(true);
                }
            }
            Ok(false)
        }
        Value::Builtin(name) => Ok(match &**name {
            "int" => matches!(v, Value::Int(_) | Value::Bool(_)),
            "float" => matches!(v, Value::Float(_)),
            "str" => matches!(v, Value::Str(_)),
            "bool" => matches!(v, Value::Bool(_)),
            "list" => matches!(v, Value::List(_)),
            "dict" => matches!(v, Value::Dict(_)),
            "tuple" => matches!(v, Value::Tuple(_)),
            "set" | "frozenset" => matches!(v, Value::Set(_)),
            "range" => matches!(v, Value::Range(..)),
            _ => return type_error("isinstance() arg 2 must be a type or tuple of types"),
        }),
        Value::ExcType(kind) => Ok(matches!(v, Value::Exc(e) if e.kind == *kind)),
        _ => type_error("isinstance() arg 2 must be a type or tuple of types"),
    }
}

fn to_int(v: &Value, base: Option<Value>) -> R<Value> {
    match v {
        Value::Str(s) => {
            let base = match base {
                Some(b) => as_index(&b)?,
                None => 10,
            };
            if !(2..=36).contains(&base) {
                return exc("ValueError", "int() base must be >= 2 and <= 36");
            }
            let t = s.trim().replace('_', "");
            match i64::from_str_radix(&t, base as u32) {
                Ok(i) if !t.starts_with("+-") => Ok(Value::Int(i)),
                _ => exc("ValueError", format!("invalid literal for int() with base {base}: {}", str_repr(s))),
            }
        }
        _ if base.is_some() => type_error("int() can't convert non-string with explicit base"),
        Value::Bool(b) => Ok(Value::Int(*b as i64)),
        Value::Int(i) => Ok(Value::Int(*i)),
        Value::Float(f) => {
            if !f.is_finite() {
                return exc("OverflowError", "cannot convert float infinity or nan to integer");
            }
            let t = f.trunc();
            if t.abs() >= 9.2e18 {
                return exc("OverflowError", "integer overflow");
            }
            Ok(Value::Int(t as i64))
        }
        other => type_error(format!("int() argument must be a string or a number, not '{}'", other.type_name())),
    }
}

fn to_float(v: &Value) -> R<Value> {
    match v {
        Value::Str(s) => {
            let t = s.trim().to_lowercase();
            let parsed = match t.trim_start_matches(['+', '-']) {
                "inf" | "infinity" | "nan" => t.replace("infinity", "inf").parse::<f64>().ok(),
                body if body.chars().all(|c| c.is_ascii_digit() || matches!(c, '.' | 'e' | '+' | '-' | '_')) => {
                    t.replace('_', "").parse::<f64>().ok()
                }
                _ => None,
            };
            match parsed {
                Some(f) => Ok(Value::Float(f)),
                None => exc("ValueError", format!("could not convert string to float: {}", str_repr(s))),
            }
        }
        other => match other.as_num() {
            Some(n) => Ok(Value::Float(n.to_f64())),
            None => type_error(format!("float() argument must be a string or a number, not '{}'", other.type_name())),
        },
    }
}

fn round(v: &Value, ndigits: Option<Value>) -> R<Value> {
    let Some(n) = v.as_num() else {
        return type_error(format!("type {} doesn't define __round__ method", v.type_name()));
    };
    match (n, ndigits) {
        (Num::Int(i), None) => Ok(Value::Int(i)),
        (Num::Int(i), Some(d)) => {
            let d = as_index(&d)?;
            if d >= 0 {
                return Ok(Value::Int(i));
            }
            let p = 10f64.powi((-d) as i32);
            Ok(Value::Int(((i as f64 / p).round_ties_even() * p) as i64))
        }
        (Num::Float(f), None) => to_int(&Value::Float(f.round_ties_even()), None),
        (Num::Float(f), Some(d)) => {
            let d = as_index(&d)?.clamp(-308, 308) as i32;
            if d >= 0 {
                // go through decimal formatting so 2.675 rounds like its stored value
                let s = format!("{:.*}", d as usize, f);
                Ok(Value::Float(s.parse().unwrap_or(f)))
            } else {
                let p = 10f64.powi(-d);
                Ok(Value::Float((f / p).round_ties_even() * p))
            }
        }
    }
}

fn str_split(s: &str, sep: Option<&Value>, maxsplit: i64, from_right: bool) -> R<Value> {
    let limit = if maxsplit < 0 { usize::MAX } else { maxsplit as usize };
    let parts: Vec<String> = match sep {
        None => {
            let words: Vec<&str> = s.split_whitespace().collect();
            if words.len() <= limit.saturating_add(1) {
                words.into_iter().map(str::to_string).collect()
            } else if from_right {
                let mut rest = s.trim_end();
                let mut v = Vec::new();
                for _ in 0..limit {
                    let start = rest.rfind(char::is_whitespace).map_or(0, |i| i + rest[i..].chars().next().map_or(1, char::len_utf8));
                    v.push(rest[start..].to_string());
                    rest = rest[..start].trim_end();
                }
                v.push(rest.to_string());
                v.reverse();
                v
            } else {
                let mut rest = s.trim_start();
                let mut v = Vec::new();
                for _ in 0..limit {
                    let end = rest.find(char::is_whitespace).unwrap_or(rest.len());
                    v.push(rest[..end].to_string());
                    rest = rest[end..].trim_start();
                }
                v.push(rest.to_string());
                v
            }
        }
        Some(sep) => {
            let sep = want_str("separator", sep)?;
            if sep.is_empty() {
                return exc("ValueError", "empty separator");
            }
            if from_right {
                let mut v: Vec<String> = s.rsplitn(limit.saturating_add(1), &**sep).map(str::to_string).collect();
                v.reverse();
                v
            } else {
                s.splitn(limit.saturating_add(1), &**sep).map(str::to_string).collect()
            }
        }
    };
    Ok(Value::list(parts.into_iter().map(Value::str).collect()))
}

/// Applies a format-spec mini-language subset: fill, align, sign, width,
/// grouping comma, precision and the types s d f e % g.
fn format_spec(v: &Value, spec: &str) -> R<String> {
    if spec.is_empty() {
        return Ok(v.to_str());
    }
    let chars: Vec<char> = spec.chars().collect();
    let mut i = 0;
    let (mut fill, mut align) = (' ', None);
    if chars.len() >= 2 && matches!(chars[1], '<' | '>' | '^' | '=') {
        fill = chars[0];
        align = Some(chars[1]);
        i = 2;
    } else if matches!(chars.first(), Some('<' | '>' | '^' | '=')) {
        align = Some(chars[0]);
        i = 1;
    }
    let mut sign = false;
    if chars.get(i) == Some(&'+') {
        sign = true;
        i += 1;
    }
    if chars.get(i) == Some(&'0') && align.is_none() {
        fill = '0';
        align = Some('=');
        i += 1;
    }
    let mut width = 0usize;
    while let Some(d) = chars.get(i).and_then(|c| c.to_digit(10)) {
        width = width.saturating_mul(10).saturating_add(d as usize);
        i += 1;
    }
    let comma = chars.get(i) == Some(&',');
    if comma {
        i += 1;
    }
    let mut precision = None;
    if chars.get(i) == Some(&'.') {
        i += 1;
        let mut p = 0usize;
        while let Some(d) = chars.get(i).and_then(|c| c.to_digit(10)) {
            p = p.saturating_mul(10).saturating_add(d as usize);
            i += 1;
        }
        precision = Some(p.min(100));
    }
    let ty = chars.get(i).copied();
    if i + ty.is_some() as usize != chars.len() || width > MAX_LEN {
        return exc("ValueError", format!("Invalid format specifier '{spec}'"));
    }
    let num = v.as_num();
    let mut body = match (ty, num) {
        (Some('d'), Some(Num::Int(n))) | (None, Some(Num::Int(n))) if !matches!(v, Value::Bool(_)) || ty == Some('d') => {
            group(&n.abs().to_string(), comma, n < 0, sign)
        }
        (Some('f' | 'F'), Some(n)) | (None, Some(n @ Num::Float(_))) if ty.is_some() || precision.is_some() => {
            let f = n.to_f64();
            let s = format!("{:.*}", precision.unwrap_or(6), f.abs());
            let (int, frac) = s.split_once('.').map_or((s.as_str(), None), |(a, b)| (a, Some(b)));
            let mut out = group(int, comma, f < 0.0, sign);
            if let Some(frac) = frac {
                out.push('.');
                out.push_str(frac);
            }
            out
        }
        (Some('%'), Some(n)) => format!("{:.*}%", precision.unwrap_or(6), n.to_f64() * 100.0),
        (Some('e'), Some(n)) => {
            let s = format!("{:.*e}", precision.unwrap_or(6), n.to_f64());
            let (m, e) = s.split_once('e').expect("exponent form");
            let e: i32 = e.parse().expect("exponent digits");
            format!("{m}e{}{:02}", if e < 0 { '-' } else { '+' }, e.abs())
        }
        (Some('g') | None, Some(n)) => {
            let f = n.to_f64();
            let out = float_repr(f);
            if sign && f >= 0.0 {
                format!("+{out}")
            } else {
                out
            }
        }
        (Some('s') | None, _) => {
            let s = v.to_str();
            match precision {
                Some(p) => s.chars().take(p).collect(),
                None => s,
            }
        }
        _ => return exc("ValueError", format!("Unknown format code for object of type '{}'", v.type_name())),
    };
    let len = body.chars().count();
    if len < width {
        let pad = width - len;
        let default_align = if num.is_some() && !matches!(v, Value::Str(_)) { '>' } else { '<' };
        let fill_str = |n: usize| std::iter::repeat_n(fill, n).collect::<String>();
        body = match align.unwrap_or(default_align) {
            '<' => format!("{body}{}", fill_str(pad)),
            '^' => format!("{}{body}{}", fill_str(pad / 2), fill_str(pad - pad / 2)),
            '=' if body.starts_with(['-', '+']) => format!("{}{}{}", &body[..1], fill_str(pad), &body[1..]),
            _ => format!("{}{body}", fill_str(pad)),
        };
    }
    Ok(body)
}

fn group(digits: &str, comma: bool, negative: bool, sign: bool) -> String {
    let mut out = String::new();
    if negative {
        out.push('-');
    } else if sign {
        out.push('+');
    }
    if !comma {
        out.push_str(digits);
        return out;
    }
    for (i, c) in digits.chars().enumerate() {
        if i > 0 && (digits.len() - i).is_multiple_of(3) {
            out.push(',');
        }
        out.push(c);
    }
    out
}

fn match_method(m: &Rc<MatchValue>, name: &str, args: &[Value]) -> R<Value> {
    let group_index = |v: &Value| -> R<usize> {
        match v {
            Value::Str(n) => match m.names.iter().position(|x| x.as_deref() == Some(&**n)) {
                Some(i) => Ok(i),
                None => exc("IndexError", "no such group"),
            },
            other => {
                let i = as_index(other)?;
                if i < 0 || i as usize >= m.groups.len() {
                    return exc("IndexError", "no such group");
                }
                Ok(i as usize)
            }
        }
    };
    let text = |i: usize| m.text(i).map(Value::str).unwrap_or(Value::None);
    let pos = |i: usize, end: bool| -> Value {
        match m.groups[i] {
            Some((s, e)) => Value::Int(char_index(&m.haystack, if end { e } else { s })),
            None => Value::Int(-1),
        }
    };
    match name {
        "group" => match args {
            [] => Ok(text(0)),
            [one] => Ok(text(group_index(one)?)),
            many => Ok(Value::tuple(
                many.iter()
                    .map(|a| group_index(a).map(text))
                    .collect::<R<Vec<_>>>()?,
            )),
        },
        "groups" => {
            let default = args.first().cloned().unwrap_or(Value::None);
            Ok(Value::tuple(
                (1..m.groups.len())
                    .map(|i| m.text(i).map(Value::str).unwrap_or_else(|| default.clone()))
                    .collect(),
            ))
        }
        "groupdict" => Ok(Value::dict(
            m.names
                .iter()
                .enumerate()
                .filter_map(|(i, n)| n.as_ref().map(|n| (Value::str(n.as_str()), text(i))))
                .collect(),
        )),
        "start" | "end" | "span" => {
            let g = match args.first() {
                Some(a) => group_index(a)?,
                None => 0,
            };
            Ok(match name {
                "start" => pos(g, false),
                "end" => pos(g, true),
                _ => Value::tuple(vec![pos(g, false), pos(g, true)]),
            })
        }
        _ => exc("AttributeError", format!("'re.Match' object has no attribute '{name}'")),
    }
}

/// Rewrites the few escapes whose spelling differs between dialects.
fn translate_pattern(src: &str) -> String {
    let mut out = String::with_capacity(src.len());
    let mut chars = src.chars();
    while let Some(c) = chars.next() {
        if c == '\\' {
            match chars.next() {
                Some('Z') => out.push_str(r"\z"),
                Some(n) => {
                    out.push('\\');
                    out.push(n);
                }
                None => out.push('\\'),
            }
        } else {
            out.push(c);
        }
    }
    out
}

enum GroupRef {
    Num(usize),
    Name(String),
}

enum ReplPart {
    Lit(String),
    Group(GroupRef),
}

fn parse_repl(s: &str) -> R<Vec<ReplPart>> {
    let mut parts = Vec::new();
    let mut lit = String::new();
    let mut chars = s.chars().peekable();
    while let Some(c) = chars.next() {
        if c != '\\' {
            lit.push(c);
            continue;
        }
        let group = match chars.next() {
            Some(d) if d.is_ascii_digit() => {
                let mut n = d.to_digit(10).unwrap() as usize;
                if let Some(e) = chars.peek().and_then(|e| e.to_digit(10)) {
                    n = n * 10 + e as usize;
                    chars.next();
                }
                GroupRef::Num(n)
            }
            Some('g') => {
                if chars.next() != Some('<') {
                    return exc("re.error", "missing < in group reference");
                }
                let mut name = String::new();
                loop {
                    match chars.next() {
                        Some('>') => break,
                        Some(c) => name.push(c),
                        None => return exc("re.error", "missing > in group reference"),
                    }
                }
                match name.parse::<usize>() {
                    Ok(n) => GroupRef::Num(n),
                    Err(_) => GroupRef::Name(name),
                }
            }
            Some('n') => {
                lit.push('\n');
                continue;
            }
            Some('t') => {
                lit.push('\t');
                continue;
            }
            Some('\\') => {
                lit.push('\\');
                continue;
            }
            Some(other) => {
                lit.push('\\');
                lit.push(other);
                continue;
            }
            None => return exc("re.error", "bad escape (end of pattern)"),
        };
        if !lit.is_empty() {
            parts.push(ReplPart::Lit(std::mem::take(&mut lit)));
        }
        parts.push(ReplPart::Group(group));
    }
    if !lit.is_empty() {
        parts.push(ReplPart::Lit(lit));
    }
    Ok(parts)
}

fn math_fn(name: &str, args: &[Value], kwargs: &Kwargs) -> R<Value> {
    let x = |i: usize| -> R<f64> {
        match args.get(i) {
            Some(v) => want_f64(&format!("math.{name}() argument"), v),
            None => type_error(format!("math.{name}() missing argument")),
        }
    };
    let domain = || exc("ValueError", "math domain error");
    let f = Value::Float;
    Ok(match name {
        "sqrt" => {
            let v = x(0)?;
            if v < 0.0 {
                return domain();
            }
            f(v.sqrt())
        }
        "floor" | "ceil" | "trunc" => {
            if let Some(Value::Int(i)) = args.first() {
                return Ok(Value::Int(*i));
            }
            let v = x(0)?;
            let r = match name {
                "floor" => v.floor(),
                "ceil" => v.ceil(),
                _ => v.trunc(),
            };
            return to_int(&Value::Float(r), None);
        }
        "fabs" => f(x(0)?.abs()),
        "exp" => f(x(0)?.exp()),
        "log" | "log10" | "log2" => {
            let v = x(0)?;
            if v <= 0.0 {
                return domain();
            }
            match (name, args.get(1)) {
                ("log", Some(_)) => {
                    let base = x(1)?;
                    if base <= 0.0 || base == 1.0 {
                        return domain();
                    }
                    f(v.ln() / base.ln())
                }
                ("log", None) => f(v.ln()),
                ("log10", _) => f(v.log10()),
                _ => f(v.log2()),
            }
        }
        "pow" => f(x(0)?.powf(x(1)?)),
        "isnan" => Value::Bool(x(0)?.is_nan()),
        "isinf" => Value::Bool(x(0)?.is_infinite()),
        "isfinite" => Value::Bool(x(0)?.is_finite()),
        "gcd" => {
            let mut a = as_index(args.first().unwrap_or(&Value::Int(0)))?.unsigned_abs();
            let mut b = as_index(args.get(1).unwrap_or(&Value::Int(0)))?.unsigned_abs();
            while b != 0 {
                (a, b) = (b, a % b);
            }
            Value::Int(a as i64)
        }
        "isclose" => {
            let (a, b) = (x(0)?, x(1)?);
            let get = |k: &str, d: f64| -> R<f64> {
                match kwargs.iter().find(|(n, _)| n == k) {
                    Some((_, v)) => want_f64(k, v),
                    None => Ok(d),
                }
            };
            let rel = get("rel_tol", 1e-9)?;
            let abs = get("abs_tol", 0.0)?;
            Value::Bool(a == b || (a - b).abs() <= (rel * a.abs().max(b.abs())).max(abs))
        }
        _ => return exc("AttributeError", format!("module 'math' has no attribute '{name}'")),
    })
}

fn json_fn(name: &str, args: &[Value], mut kwargs: Kwargs) -> R<Value> {
    match name {
        "loads" => {
            no_kwargs(name, &kwargs)?;
            arity(name, args, 1, 1)?;
            let s = want_str("the JSON object", &args[0])?;
            match serde_json::from_str::<serde_json::Value>(s) {
                Ok(v) => Ok(Value::from_json(&v)),
                Err(e) => exc("json.JSONDecodeError", e.to_string()),
            }
        }
        "dumps" => {
            let sort_keys = kwarg(&mut kwargs, "sort_keys").map(|v| v.truthy()).unwrap_or(false);
            let ensure_ascii = kwarg(&mut kwargs, "ensure_ascii").map(|v| v.truthy()).unwrap_or(true);
            no_kwargs(name, &kwargs)?;
            arity(name, args, 1, 1)?;
            let mut out = String::new();
            json_dump(&args[0], sort_keys, ensure_ascii, &mut out, 0)?;
            Ok(Value::str(out))
        }
        _ => exc("AttributeError", format!("module 'json' has no attribute '{name}'")),
    }
}

fn json_dump(v: &Value, sort_keys: bool, ascii: bool, out: &mut String, depth: usize) -> R<()> {
    if depth > 64 {
        return exc("RecursionError", "maximum recursion depth exceeded while encoding a JSON object");
    }
    match v {
        Value::None => out.push_str("null"),
        Value::Bool(b) => out.push_str(if *b { "true" } else { "false" }),
        Value::Int(i) => out.push_str(&i.to_string()),
        Value::Float(f) if f.is_nan() => out.push_str("NaN"),
        Value::Float(f) if f.is_infinite() => out.push_str(if *f > 0.0 { "Infinity" } else { "-Infinity" }),
        Value::Float(f) => out.push_str(&float_repr(*f)),
        Value::Str(s) => json_str(s, ascii, out),
        Value::List(_) | Value::Tuple(_) => {
            let items = match v {
                Value::List(l) => l.borrow().clone(),
                Value::Tuple(t) => t.to_vec(),
                _ => unreachable!(),
            };
            out.push('[');
            for (i, item) in items.iter().enumerate() {
                if i > 0 {
                    out.push_str(", ");
                }
                json_dump(item, sort_keys, ascii, out, depth + 1)?;
            }
            out.push(']');
        }
        Value::Dict(d) => {
            let mut entries = Vec::new();
            for (k, v) in d.borrow().entries.iter() {
                let key = match k {
                    Value::Str(s) => s.to_string(),
                    Value::Bool(b) => (if *b { "true" } else { "false" }).to_string(),
                    Value::None => "null".to_string(),
                    Value::Int(i) => i.to_string(),
                    Value::Float(f) => float_repr(*f),
                    other => return type_error(format!("keys must be str, int, float, bool or None, not {}", other.type_name())),
                };
                entries.push((key, v.clone()));
            }
            if sort_keys {
                entries.sort_by(|a, b| a.0.cmp(&b.0));
            }
            out.push('{');
            for (i, (k, v)) in entries.iter().enumerate() {
                if i > 0 {
                    out.push_str(", ");
                }
                json_str(k, ascii, out);
                out.push_str(": ");
                json_dump(v, sort_keys, ascii, out, depth + 1)?;
            }
            out.push('}');
        }
        other => return type_error(format!("Object of type {} is not JSON serializable", other.type_name())),
    }
    Ok(())
}

fn json_str(s: &str, ascii: bool, out: &mut String) {
    out.push('"');
    for c in s.chars() {
        match c {
            '"' => out.push_str("\\\""),
            '\\' => out.push_str("\\\\"),
            '\n' => out.push_str("\\n"),
            '\r' => out.push_str("\\r"),
            '\t' => out.push_str("\\t"),
            '\u{8}' => out.push_str("\\b"),
            '\u{c}' => out.push_str("\\f"),
            c if (c as u32) < 0x20 || (ascii && (c as u32) > 0x7e) => {
                let mut buf = [0u16; 2];
                for unit in c.encode_utf16(&mut buf) {
                    out.push_str(&format!("\\u{unit:04x}"));
                }
            }
            c => out.push(c),
        }
    }
    out.push('"');
}
