//! Recursive-descent parser for the verifier-language subset.
//!
//! Covers what small deterministic verifier modules use: functions, control
//! flow, comprehensions, lambdas, try/except, and the usual expression
//! grammar. Classes, decorators, `with`, `global`, star-args and f-strings
//! are rejected as syntax errors.

use std::rc::Rc;

use super::ast::*;
use super::lexer::{tokenize, SyntaxError, Tok, Token};

const MAX_NESTING: usize = 64;

type CallArgs = (Vec<Expr>, Vec<(String, Expr)>);

pub fn parse_module(src: &str) -> Result<Vec<Stmt>, SyntaxError> {
    let tokens = tokenize(src)?;
    let mut p = Parser { tokens, pos: 0, nesting: 0 };
    let mut body = Vec::new();
    while !p.at(&Tok::Eof) {
        if p.eat_newline() {
            continue;
        }
        body.extend(p.statement()?);
    }
    Ok(body)
}

struct Parser {
    tokens: Vec<Token>,
    pos: usize,
    nesting: usize,
}

const KEYWORDS: [&str; 30] = [
    "False", "None", "True", "and", "as", "assert", "break", "class", "continue", "def", "del", "elif", "else",
    "except", "finally", "for", "from", "global", "if", "import", "in", "is", "lambda", "nonlocal", "not", "or",
    "pass", "raise", "return", "try",
];
const MORE_KEYWORDS: [&str; 4] = ["while", "with", "yield", "async"];

fn is_keyword(name: &str) -> bool {
    KEYWORDS.contains(&name) || MORE_KEYWORDS.contains(&name)
}

impl Parser {
    fn tok(&self) -> &Tok {
        &self.tokens[self.pos].tok
    }

    fn line(&self) -> u32 {
        self.tokens[self.pos].line
    }

    fn at(&self, t: &Tok) -> bool {
        self.tok() == t
    }

    fn at_op(&self, op: &str) -> bool {
        matches!(self.tok(), Tok::Op(o) if *o == op)
    }

    fn at_kw(&self, kw: &str) -> bool {
        matches!(self.tok(), Tok::Name(n) if n == kw)
    }

    fn bump(&mut self) -> Tok {
        let t = self.tokens[self.pos].tok.clone();
        if self.pos + 1 < self.tokens.len() {
            self.pos += 1;
        }
        t
    }

    fn err<T>(&self, message: impl Into<String>) -> Result<T, SyntaxError> {
        Err(SyntaxError {
            line: self.line(),
            message: message.into(),
        })
    }

    fn expect_op(&mut self, op: &str) -> Result<(), SyntaxError> {
        if self.at_op(op) {
            self.bump();
            Ok(())
        } else {
            self.err(format!("expected {op:?}, found {}", self.tok()))
        }
    }

    fn expect_kw(&mut self, kw: &str) -> Result<(), SyntaxError> {
        if self.at_kw(kw) {
            self.bump();
            Ok(())
        } else {
            self.err(format!("expected {kw:?}, found {}", self.tok()))
        }
    }

    fn eat_op(&mut self, op: &str) -> bool {
        if self.at_op(op) {
            self.bump();
            true
        } else {
            false
        }
    }

    fn eat_kw(&mut self, kw: &str) -> bool {
        if self.at_kw(kw) {
            self.bump();
            true
        } else {
            false
        }
    }

    fn eat_newline(&mut self) -> bool {
        if self.at(&Tok::Newline) {
            self.bump();
            true
        } else {
            false
        }
    }

    fn ident(&mut self) -> Result<String, SyntaxError> {
        match self.tok().clone() {
            Tok::Name(n) if !is_keyword(&n) => {
                self.bump();
                Ok(n)
            }
            other => self.err(format!("expected identifier, found {other}")),
        }
    }

    fn enter(&mut self) -> Result<(), SyntaxError> {
        self.nesting += 1;
        if self.nesting > MAX_NESTING {
            return self.err("nesting too deep");
        }
        Ok(())
    }

    fn leave(&mut self) {
        self.nesting -= 1;
    }

    // statements ----------------------------------------------------------

    fn statement(&mut self) -> Result<Vec<Stmt>, SyntaxError> {
        let line = self.line();
        match self.tok().clone() {
            Tok::Name(kw) => match kw.as_str() {
                "def" => return Ok(vec![self.funcdef()?]),
                "if" => return Ok(vec![self.if_stmt()?]),
                "for" => return Ok(vec![self.for_stmt()?]),
                "while" => return Ok(vec![self.while_stmt()?]),
                "try" => return Ok(vec![self.try_stmt()?]),
                "class" | "with" | "async" | "global" | "nonlocal" | "del" | "yield" => {
                    return self.err(format!("{kw:?} is not supported"))
                }
                _ => {}
            },
            Tok::Op("@") => return self.err("decorators are not supported"),
            _ => {}
        }
        let mut out = vec![self.simple_statement(line)?];
        while self.eat_op(";") {
            if self.at(&Tok::Newline) {
                break;
            }
            let line = self.line();
            out.push(self.simple_statement(line)?);
        }
        if !self.eat_newline() && !self.at(&Tok::Eof) {
            return self.err(format!("expected end of statement, found {}", self.tok()));
        }
        Ok(out)
    }

    fn simple_statement(&mut self, line: u32) -> Result<Stmt, SyntaxError> {
        let kind = if self.eat_kw("pass") {
            StmtKind::Pass
        } else if self.eat_kw("break") {
            StmtKind::Break
        } else if self.eat_kw("continue") {
            StmtKind::Continue
        } else if self.eat_kw("return") {
            if self.at(&Tok::Newline) || self.at_op(";") || self.at(&Tok::Eof) {
                StmtKind::Return(None)
            } else {
                StmtKind::Return(Some(self.expr_list()?))
            }
        } else if self.eat_kw("raise") {
            if self.at(&Tok::Newline) || self.at(&Tok::Eof) {
                StmtKind::Raise(None)
            } else {
                let e = self.expr()?;
                if self.eat_kw("from") {
                    self.expr()?;
                }
                StmtKind::Raise(Some(e))
            }
        } else if self.eat_kw("assert") {
            let cond = self.expr()?;
            let msg = if self.eat_op(",") { Some(self.expr()?) } else { None };
            StmtKind::Assert(cond, msg)
        } else if self.eat_kw("import") {
            let mut names = Vec::new();
            loop {
                let module = self.dotted()?;
                let alias = if self.eat_kw("as") { Some(self.ident()?) } else { None };
                names.push((module, alias));
                if !self.eat_op(",") {
                    break;
                }
            }
            StmtKind::Import(names)
        } else if self.eat_kw("from") {
            let mut module = String::new();
            while self.at_op(".") {
                self.bump();
                module.push('.');
            }
            if !self.at_kw("import") {
                module.push_str(&self.dotted()?);
            }
            self.expect_kw("import")?;
            let paren = self.eat_op("(");
            let mut names = Vec::new();
            if self.eat_op("*") {
                names.push(("*".to_string(), None));
            } else {
                loop {
                    let name = self.ident()?;
                    let alias = if self.eat_kw("as") { Some(self.ident()?) } else { None };
                    names.push((name, alias));
                    if !self.eat_op(",") || (paren && self.at_op(")")) {
                        break;
                    }
                }
            }
            if paren {
                self.expect_op(")")?;
            }
            StmtKind::ImportFrom(module, names)
        } else {
            let first = self.expr_list()?;
            if self.at_op(":") {
                // annotated assignment: `name: T = value`
                self.bump();
                self.expr()?;
                if self.eat_op("=") {
                    let value = self.expr_list()?;
                    StmtKind::Assign(vec![to_target(first, line)?], value)
                } else {
                    StmtKind::Pass
                }
            } else if self.at_op("=") {
                let mut targets = vec![to_target(first, line)?];
                let mut value;
                loop {
                    self.expect_op("=")?;
                    value = self.expr_list()?;
                    if !self.at_op("=") {
                        break;
                    }
                    targets.push(to_target(value.clone(), line)?);
                }
                StmtKind::Assign(targets, value)
            } else if let Some(op) = self.aug_op() {
                self.bump();
                let value = self.expr_list()?;
                StmtKind::AugAssign(to_target(first, line)?, op, value)
            } else {
                StmtKind::Expr(first)
            }
        };
        Ok(Stmt { kind, line })
    }

    fn aug_op(&self) -> Option<BinOp> {
        let Tok::Op(o) = self.tok() else { return None };
        Some(match *o {
            "+=" => BinOp::Add,
            "-=" => BinOp::Sub,
            "*=" => BinOp::Mul,
            "/=" => BinOp::Div,
            "//=" => BinOp::FloorDiv,
            "%=" => BinOp::Mod,
            "**=" => BinOp::Pow,
            _ => return None,
        })
    }

    fn dotted(&mut self) -> Result<String, SyntaxError> {
        let mut name = self.ident()?;
        while self.eat_op(".") {
            name.push('.');
            name.push_str(&self.ident()?);
        }
        Ok(name)
    }

    fn block(&mut self) -> Result<Vec<Stmt>, SyntaxError> {
        self.expect_op(":")?;
        self.enter()?;
        let body = if self.eat_newline() {
            if !self.at(&Tok::Indent) {
                return self.err("expected an indented block");
            }
            self.bump();
            let mut body = Vec::new();
            while !self.at(&Tok::Dedent) && !self.at(&Tok::Eof) {
                if self.eat_newline() {
                    continue;
                }
                body.extend(self.statement()?);
            }
            if self.at(&Tok::Dedent) {
                self.bump();
            }
            body
        } else {
            // single-line suite: `if x: return y`
            self.statement()?
        };
        self.leave();
        Ok(body)
    }

    fn funcdef(&mut self) -> Result<Stmt, SyntaxError> {
        let line = self.line();
        self.expect_kw("def")?;
        let name = self.ident()?;
        self.expect_op("(")?;
        let params = self.params(")")?;
        self.expect_op(")")?;
        if self.eat_op("->") {
            self.expr()?;
        }
        let body = self.block()?;
        Ok(Stmt {
            kind: StmtKind::Def(Rc::new(FuncDef { name, params, body, line })),
            line,
        })
    }

    fn params(&mut self, close: &str) -> Result<Vec<(String, Option<Expr>)>, SyntaxError> {
        let mut params = Vec::new();
        while !self.at_op(close) {
            if self.at_op("*") || self.at_op("**") {
                return self.err("star parameters are not supported");
            }
            let name = self.ident()?;
            if close == ")" && self.eat_op(":") {
                self.expr()?;
            }
            let default = if self.eat_op("=") { Some(self.expr()?) } else { None };
            params.push((name, default));
            if !self.eat_op(",") {
                break;
            }
        }
        Ok(params)
    }

    fn if_stmt(&mut self) -> Result<Stmt, SyntaxError> {
        let line = self.line();
        self.expect_kw("if")?;
        let mut arms = vec![(self.expr()?, self.block()?)];
        let mut otherwise = None;
        loop {
            if self.eat_kw("elif") {
                let cond = self.expr()?;
                arms.push((cond, self.block()?));
            } else if self.eat_kw("else") {
                otherwise = Some(self.block()?);
                break;
            } else {
                break;
            }
        }
        Ok(Stmt {
            kind: StmtKind::If(arms, otherwise),
            line,
        })
    }

    fn for_stmt(&mut self) -> Result<Stmt, SyntaxError> {
        let line = self.line();
        self.expect_kw("for")?;
        let target = self.target_list()?;
        self.expect_kw("in")?;
        let iter = self.expr_list()?;
        let body = self.block()?;
        if self.at_kw("else") {
            return self.err("for/else is not supported");
        }
        Ok(Stmt {
            kind: StmtKind::For(target, iter, body),
            line,
        })
    }

    fn while_stmt(&mut self) -> Result<Stmt, SyntaxError> {
        let line = self.line();
        self.expect_kw("while")?;
        let cond = self.expr()?;
        let body = self.block()?;
        if self.at_kw("else") {
            return self.err("while/else is not supported");
        }
        Ok(Stmt {
            kind: StmtKind::While(cond, body),
            line,
        })
    }

    fn try_stmt(&mut self) -> Result<Stmt, SyntaxError> {
        let line = self.line();
        self.expect_kw("try")?;
        let body = self.block()?;
        let mut handlers = Vec::new();
        while self.eat_kw("except") {
            let types = if self.at_op(":") { None } else { Some(self.expr()?) };
            let name = if self.eat_kw("as") { Some(self.ident()?) } else { None };
            handlers.push(Handler {
                types,
                name,
                body: self.block()?,
            });
        }
        if self.at_kw("else") {
            return self.err("try/else is not supported");
        }
        let finally = if self.eat_kw("finally") { Some(self.block()?) } else { None };
        if handlers.is_empty() && finally.is_none() {
            return self.err("try without except or finally");
        }
        Ok(Stmt {
            kind: StmtKind::Try { body, handlers, finally },
            line,
        })
    }

    fn target_list(&mut self) -> Result<Target, SyntaxError> {
        let line = self.line();
        // targets stop short of comparisons so `for a in b` leaves `in` alone
        let mut items = vec![self.arith()?];
        let mut tuple = false;
        while self.eat_op(",") {
            tuple = true;
            if self.at_kw("in") || self.at_op("=") {
                break;
            }
            items.push(self.arith()?);
        }
        let e = if tuple { Expr::Tuple(items) } else { items.pop().unwrap() };
        to_target(e, line)
    }

    // expressions ---------------------------------------------------------

    /// Comma-separated expressions; more than one (or a trailing comma)
    /// makes a tuple.
    fn expr_list(&mut self) -> Result<Expr, SyntaxError> {
        let first = self.expr()?;
        if !self.at_op(",") {
            return Ok(first);
        }
        let mut items = vec![first];
        while self.eat_op(",") {
            if self.ends_expr_list() {
                break;
            }
            items.push(self.expr()?);
        }
        Ok(Expr::Tuple(items))
    }

    fn ends_expr_list(&self) -> bool {
        matches!(self.tok(), Tok::Newline | Tok::Eof)
            || self.at_op("=")
            || self.at_op(")")
            || self.at_op(";")
            || self.at_op(":")
    }

    fn expr(&mut self) -> Result<Expr, SyntaxError> {
        self.enter()?;
        let e = self.expr_inner();
        self.leave();
        e
    }

    fn expr_inner(&mut self) -> Result<Expr, SyntaxError> {
        if self.at_kw("lambda") {
            let line = self.line();
            self.bump();
            let params = self.params(":")?;
            self.expect_op(":")?;
            let body = self.expr()?;
            return Ok(Expr::Lambda(Rc::new(FuncDef {
                name: "<lambda>".into(),
                params,
                body: vec![Stmt {
                    kind: StmtKind::Return(Some(body)),
                    line,
                }],
                line,
            })));
        }
        let e = self.or_expr()?;
        if self.at_kw("if") {
            // only a conditional expression if an else follows; otherwise
            // it belongs to an enclosing comprehension
            let save = self.pos;
            self.bump();
            let cond = self.or_expr()?;
            if self.eat_kw("else") {
                let otherwise = self.expr()?;
                return Ok(Expr::IfExp {
                    cond: Box::new(cond),
                    then: Box::new(e),
                    otherwise: Box::new(otherwise),
                });
            }
            self.pos = save;
        }
        Ok(e)
    }

    fn or_expr(&mut self) -> Result<Expr, SyntaxError> {
        let mut left = self.and_expr()?;
        while self.eat_kw("or") {
            let right = self.and_expr()?;
            left = Expr::Or(Box::new(left), Box::new(right));
        }
        Ok(left)
    }

    fn and_expr(&mut self) -> Result<Expr, SyntaxError> {
        let mut left = self.not_expr()?;
        while self.eat_kw("and") {
            let right = self.not_expr()?;
            left = Expr::And(Box::new(left), Box::new(right));
        }
        Ok(left)
    }

    fn not_expr(&mut self) -> Result<Expr, SyntaxError> {
        if self.eat_kw("not") {
            self.enter()?;
            let inner = self.not_expr();
            self.leave();
            return Ok(Expr::Unary(UnOp::Not, Box::new(inner?)));
        }
        self.comparison()
    }

    fn cmp_op(&mut self) -> Option<CmpOp> {
        let op = match self.tok() {
            Tok::Op("==") => CmpOp::Eq,
            Tok::Op("!=") => CmpOp::Ne,
            Tok::Op("<") => CmpOp::Lt,
            Tok::Op("<=") => CmpOp::Le,
            Tok::Op(">") => CmpOp::Gt,
            Tok::Op(">=") => CmpOp::Ge,
            Tok::Name(n) if n == "in" => CmpOp::In,
            Tok::Name(n) if n == "is" => {
                self.bump();
                return Some(if self.eat_kw("not") { CmpOp::IsNot } else { CmpOp::Is });
            }
            Tok::Name(n) if n == "not" => {
                if matches!(&self.tokens.get(self.pos + 1).map(|t| &t.tok), Some(Tok::Name(n)) if n == "in") {
                    self.bump();
                    self.bump();
                    return Some(CmpOp::NotIn);
                }
                return None;
            }
            _ => return None,
        };
        self.bump();
        Some(op)
    }

    fn comparison(&mut self) -> Result<Expr, SyntaxError> {
        let left = self.arith()?;
        let mut rest = Vec::new();
        while let Some(op) = self.cmp_op() {
            rest.push((op, self.arith()?));
        }
        Ok(if rest.is_empty() {
            left
        } else {
            Expr::Compare(Box::new(left), rest)
        })
    }

    fn arith(&mut self) -> Result<Expr, SyntaxError> {
        let mut left = self.term()?;
        loop {
            let op = if self.at_op("+") {
                BinOp::Add
            } else if self.at_op("-") {
                BinOp::Sub
            } else {
                break;
            };
            self.bump();
            let right = self.term()?;
            left = Expr::Bin(op, Box::new(left), Box::new(right));
        }
        Ok(left)
    }

    fn term(&mut self) -> Result<Expr, SyntaxError> {
        let mut left = self.factor()?;
        loop {
            let op = match self.tok() {
                Tok::Op("*") => BinOp::Mul,
                Tok::Op("/") => BinOp::Div,
                Tok::Op("//") => BinOp::FloorDiv,
                Tok::Op("%") => BinOp::Mod,
                _ => break,
            };
            self.bump();
            let right = self.factor()?;
            left = Expr::Bin(op, Box::new(left), Box::new(right));
        }
        Ok(left)
    }

    fn factor(&mut self) -> Result<Expr, SyntaxError> {
        let op = match self.tok() {
            Tok::Op("-") => UnOp::Neg,
            Tok::Op("+") => UnOp::Pos,
            _ => return self.power(),
        };
        self.bump();
        self.enter()?;
        let inner = self.factor();
        self.leave();
        Ok(Expr::Unary(op, Box::new(inner?)))
    }

    fn power(&mut self) -> Result<Expr, SyntaxError> {
        let base = self.primary()?;
        if self.eat_op("**") {
            self.enter()?;
            let exp = self.factor();
            self.leave();
            return Ok(Expr::Bin(BinOp::Pow, Box::new(base), Box::new(exp?)));
        }
        Ok(base)
    }

    fn primary(&mut self) -> Result<Expr, SyntaxError> {
        let mut e = self.atom()?;
        loop {
            let line = self.line();
            if self.eat_op(".") {
                let name = match self.bump() {
                    Tok::Name(n) => n,
                    other => return self.err(format!("expected attribute name, found {other}")),
                };
                e = Expr::Attr(Box::new(e), name, line);
            } else if self.eat_op("(") {
                let (args, kwargs) = self.call_args()?;
                self.expect_op(")")?;
                e = Expr::Call {
                    func: Box::new(e),
                    args,
                    kwargs,
                    line,
                };
            } else if self.eat_op("[") {
                e = self.subscript(e)?;
                self.expect_op("]")?;
            } else {
                break;
            }
        }
        Ok(e)
    }

    fn call_args(&mut self) -> Result<CallArgs, SyntaxError> {
        let mut args = Vec::new();
        let mut kwargs = Vec::new();
        while !self.at_op(")") {
            if self.at_op("*") || self.at_op("**") {
                return self.err("star arguments are not supported");
            }
            let is_kw = matches!(self.tok(), Tok::Name(n) if !is_keyword(n))
                && matches!(self.tokens.get(self.pos + 1).map(|t| &t.tok), Some(Tok::Op("=")));
            if is_kw {
                let name = self.ident()?;
                self.bump();
                kwargs.push((name, self.expr()?));
            } else {
                let e = self.expr()?;
                if self.at_kw("for") {
                    let generators = self.comp_for()?;
                    args.push(Expr::Comp {
                        kind: CompKind::Gen,
                        elt: Box::new(e),
                        value: None,
                        generators,
                    });
                } else {
                    if !kwargs.is_empty() {
                        return self.err("positional argument after keyword argument");
                    }
                    args.push(e);
                }
            }
            if !self.eat_op(",") {
                break;
            }
        }
        Ok((args, kwargs))
    }

    fn subscript(&mut self, obj: Expr) -> Result<Expr, SyntaxError> {
        let lo = if self.at_op(":") { None } else { Some(Box::new(self.expr()?)) };
        if !self.at_op(":") {
            let index = lo.expect("index expression");
            if self.at_op(",") {
                let mut items = vec![*index];
                while self.eat_op(",") {
                    if self.at_op("]") {
                        break;
                    }
                    items.push(self.expr()?);
                }
                return Ok(Expr::Index(Box::new(obj), Box::new(Expr::Tuple(items))));
            }
            return Ok(Expr::Index(Box::new(obj), index));
        }
        self.bump();
        let hi = if self.at_op(":") || self.at_op("]") { None } else { Some(Box::new(self.expr()?)) };
        let step = if self.eat_op(":") && !self.at_op("]") {
            Some(Box::new(self.expr()?))
        } else {
            None
        };
        Ok(Expr::Slice {
            obj: Box::new(obj),
            lo,
            hi,
            step,
        })
    }

    fn comp_for(&mut self) -> Result<Vec<Comprehension>, SyntaxError> {
        let mut generators = Vec::new();
        while self.eat_kw("for") {
            let target = self.target_list()?;
            self.expect_kw("in")?;
            let iter = self.or_expr()?;
            let mut conds = Vec::new();
            while self.eat_kw("if") {
                conds.push(self.or_expr()?);
            }
            generators.push(Comprehension { target, iter, conds });
        }
        Ok(generators)
    }

    fn atom(&mut self) -> Result<Expr, SyntaxError> {
        let line = self.line();
        match self.bump() {
            Tok::Int(i) => Ok(Expr::Const(Const::Int(i))),
            Tok::Float(f) => Ok(Expr::Const(Const::Float(f))),
            Tok::Str(s) => Ok(Expr::Const(Const::Str(s))),
            Tok::Name(n) => match n.as_str() {
                "None" => Ok(Expr::Const(Const::None)),
                "True" => Ok(Expr::Const(Const::Bool(true))),
                "False" => Ok(Expr::Const(Const::Bool(false))),
                _ if is_keyword(&n) => Err(SyntaxError {
                    line,
                    message: format!("unexpected keyword {n:?}"),
                }),
                _ => Ok(Expr::Name(n, line)),
            },
            Tok::Op("(") => {
                if self.eat_op(")") {
                    return Ok(Expr::Tuple(Vec::new()));
                }
                let first = self.expr()?;
                if self.at_kw("for") {
                    let generators = self.comp_for()?;
                    self.expect_op(")")?;
                    return Ok(Expr::Comp {
                        kind: CompKind::Gen,
                        elt: Box::new(first),
                        value: None,
                        generators,
                    });
                }
                if self.eat_op(")") {
                    return Ok(first);
                }
                let mut items = vec![first];
                while self.eat_op(",") {
                    if self.at_op(")") {
                        break;
                    }
                    items.push(self.expr()?);
                }
                self.expect_op(")")?;
                Ok(Expr::Tuple(items))
            }
            Tok::Op("[") => {
                if self.eat_op("]") {
                    return Ok(Expr::List(Vec::new()));
                }
                let first = self.expr()?;
                if self.at_kw("for") {
                    let generators = self.comp_for()?;
                    self.expect_op("]")?;
                    return Ok(Expr::Comp {
                        kind: CompKind::List,
                        elt: Box::new(first),
                        value: None,
                        generators,
                    });
                }
                let mut items = vec![first];
                while self.eat_op(",") {
                    if self.at_op("]") {
                        break;
                    }
                    items.push(self.expr()?);
                }
                self.expect_op("]")?;
                Ok(Expr::List(items))
            }
            Tok::Op("{") => {
                if self.eat_op("}") {
                    return Ok(Expr::Dict(Vec::new()));
                }
                let first = self.expr()?;
                if self.eat_op(":") {
                    let value = self.expr()?;
                    if self.at_kw("for") {
                        let generators = self.comp_for()?;
                        self.expect_op("}")?;
                        return Ok(Expr::Comp {
                            kind: CompKind::Dict,
                            elt: Box::new(first),
                            value: Some(Box::new(value)),
                            generators,
                        });
                    }
                    let mut pairs = vec![(first, value)];
                    while self.eat_op(",") {
                        if self.at_op("}") {
                            break;
                        }
                        let k = self.expr()?;
                        self.expect_op(":")?;
                        pairs.push((k, self.expr()?));
                    }
                    self.expect_op("}")?;
                    return Ok(Expr::Dict(pairs));
                }
                if self.at_kw("for") {
                    let generators = self.comp_for()?;
                    self.expect_op("}")?;
                    return Ok(Expr::Comp {
                        kind: CompKind::Set,
                        elt: Box::new(first),
                        value: None,
                        generators,
                    });
                }
                let mut items = vec![first];
                while self.eat_op(",") {
                    if self.at_op("}") {
                        break;
                    }
                    items.push(self.expr()?);
                }
                self.expect_op("}")?;
                Ok(Expr::Set(items))
            }
            other => Err(SyntaxError {
                line,
                message: format!("unexpected {other}"),
            }),
        }
    }
}

fn to_target(e: Expr, line: u32) -> Result<Target, SyntaxError> {
    match e {
        Expr::Name(n, _) => Ok(Target::Name(n)),
        Expr::Tuple(items) | Expr::List(items) => Ok(Target::Tuple(
            items
                .into_iter()
                .map(|i| to_target(i, line))
                .collect::<Result<_, _>>()?,
        )),
        Expr::Index(obj, idx) => Ok(Target::Index(*obj, *idx)),
        _ => Err(SyntaxError {
            line,
            message: "cannot assign to expression".into(),
        }),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_contract_module() {
        let src = r#"
import re
from collections import Counter

VERIFIER_SPECS = [
    {"name": "has_box", "description": "boxed answer", "requires": ["final_answer"]},
]

def has_box(x, y, context=None):
    m = re.search(r"\\boxed\{(\d+)\}", y)
    if m is None:
        return False
    return int(m.group(1)) % 2 == 0

def aggregate(checks, x, y, context=None):
    return all(checks.values())
"#;
        let body = parse_module(src).unwrap();
        assert_eq!(body.len(), 5);
        assert!(matches!(body[3].kind, StmtKind::Def(ref f) if f.name == "has_box" && f.params.len() == 3));
    }

    #[test]
    fn expressions() {
        for src in [
            "x = [a for a in b if a]\n",
            "y = {k: v for k, v in d.items()}\n",
            "z = a if b else c\n",
            "w = not a in b\n",
            "v = sorted(xs, key=lambda t: -t)\n",
            "u = s[1:-1], s[::2]\n",
            "t = any(c.isdigit() for c in y)\n",
            "a, b = 1, 2\n",
            "n += 1; m = 2\n",
        ] {
            parse_module(src).unwrap_or_else(|e| panic!("{src}: {e}"));
        }
    }

    #[test]
    fn rejects_unsupported() {
        for src in ["class A:\n    pass\n", "@d\ndef f():\n    pass\n", "def f(*a):\n    pass\n", "1 = x\n"] {
            assert!(parse_module(src).is_err(), "{src}");
        }
    }

    #[test]
    fn deep_nesting_is_an_error_not_a_crash() {
        let src = format!("x = {}1{}\n", "(".repeat(500), ")".repeat(500));
        assert!(parse_module(&src).is_err());
        let src = format!("x = {}1\n", "-".repeat(5000));
        assert!(parse_module(&src).is_err());
    }
}
