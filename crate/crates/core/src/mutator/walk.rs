use std::collections::BTreeMap;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rustpython_parser::ast::{
    self, text_size::TextRange, BoolOp, CmpOp, Constant, ExceptHandler, Expr, ExprContext,
    Operator, Ranged, Stmt, UnaryOp,
};

use super::infer::{annotation, Ty, TypeEnv};
use super::{AppliedMutation, MutationConfig, Rule};
use crate::python::LineIndex;

pub(crate) struct Walker<'a> {
    cfg: &'a MutationConfig,
    p: f64,
    rng: ChaCha8Rng,
    index: LineIndex<'a>,
    functions: BTreeMap<String, usize>,
    env: TypeEnv,
    pub(crate) applied: Vec<AppliedMutation>,
    pub(crate) sites: Vec<AppliedMutation>,
}

impl<'a> Walker<'a> {
    pub(crate) fn new(
        cfg: &'a MutationConfig,
        p: f64,
        rng: ChaCha8Rng,
        source: &'a str,
        suite: &[Stmt],
    ) -> Self {
        let mut functions = BTreeMap::new();
        collect_functions(suite, &mut functions);
        Self {
            cfg,
            p,
            rng,
            index: LineIndex::new(source),
            functions,
            env: TypeEnv::default(),
            applied: Vec::new(),
            sites: Vec::new(),
        }
    }

    fn capped(&self) -> bool {
        self.cfg
            .max_mutations_per_program
            .is_some_and(|m| self.applied.len() >= m)
    }

    /// One draw for a site offering `rules`; picks uniformly among them on a hit.
    fn draw(&mut self, range: TextRange, rules: &[Rule]) -> Option<Rule> {
        if range.is_empty() {
            return None;
        }
        let offered: Vec<Rule> = rules
            .iter()
            .copied()
            .filter(|r| self.cfg.enabled_rules.contains(r))
            .collect();
        if offered.is_empty() {
            return None;
        }
        let location = self.index.locate(range.start().to_usize());
        for &rule in &offered {
            self.sites.push(AppliedMutation { rule, location });
        }
        if self.capped() || !self.rng.gen_bool(self.p) {
            return None;
        }
        let rule = offered[self.rng.gen_range(0..offered.len())];
        self.applied.push(AppliedMutation { rule, location });
        Some(rule)
    }

    pub(crate) fn block(&mut self, body: &mut Vec<Stmt>) {
        let mut i = 0;
        while i < body.len() {
            if let Stmt::Try(t) = &body[i] {
                if !t.handlers.is_empty()
                    && self.draw(t.range, &[Rule::DropExceptionHandler]).is_some()
                {
                    let Stmt::Try(t) = body.remove(i) else {
                        unreachable!()
                    };
                    let spliced: Vec<Stmt> = t
                        .body
                        .into_iter()
                        .chain(t.orelse)
                        .chain(t.finalbody)
                        .collect();
                    body.splice(i..i, spliced);
                    continue;
                }
            }
            self.stmt(&mut body[i]);
            i += 1;
        }
    }

    fn stmt(&mut self, stmt: &mut Stmt) {
        match stmt {
            Stmt::FunctionDef(f) => {
                self.arguments(&mut f.args);
                self.env.push();
                self.bind_args(&f.args);
                self.block(&mut f.body);
                self.env.pop();
            }
            Stmt::AsyncFunctionDef(f) => {
                self.arguments(&mut f.args);
                self.env.push();
                self.bind_args(&f.args);
                self.block(&mut f.body);
                self.env.pop();
            }
            Stmt::ClassDef(c) => {
                self.env.push();
                self.block(&mut c.body);
                self.env.pop();
            }
            Stmt::Return(r) => {
                if let Some(value) = r.value.as_deref_mut() {
                    if let Some(replacement) = self.alter_return(value) {
                        *value = replacement;
                    }
                    self.expr(value);
                }
            }
            Stmt::Delete(d) => d.targets.iter_mut().for_each(|e| self.expr(e)),
            Stmt::Assign(a) => {
                let ty = self.env.infer(&a.value);
                for t in &a.targets {
                    self.env.bind(t, ty);
                }
                a.targets.iter_mut().for_each(|e| self.expr(e));
                self.expr(&mut a.value);
            }
            Stmt::AugAssign(a) => {
                if let Some(op) = swap_operator(a.op) {
                    if self.draw(a.range, &[Rule::ChangeOperator]).is_some() {
                        a.op = op;
                    }
                }
                self.expr(&mut a.target);
                self.expr(&mut a.value);
            }
            Stmt::AnnAssign(a) => {
                let ty = annotation(&a.annotation);
                self.env.bind(&a.target, ty);
                self.expr(&mut a.target);
                if let Some(v) = a.value.as_deref_mut() {
                    self.expr(v);
                }
            }
            Stmt::For(f) => {
                self.loop_header(f.range, &mut f.target, &mut f.iter);
                self.block(&mut f.body);
                self.block(&mut f.orelse);
            }
            Stmt::AsyncFor(f) => {
                self.loop_header(f.range, &mut f.target, &mut f.iter);
                self.block(&mut f.body);
                self.block(&mut f.orelse);
            }
            Stmt::While(w) => {
                self.expr(&mut w.test);
                self.block(&mut w.body);
                self.block(&mut w.orelse);
            }
            Stmt::If(s) => {
                let rules: &[Rule] = if s.orelse.is_empty() {
                    &[Rule::NegateCondition]
                } else {
                    &[Rule::NegateCondition, Rule::SwapIfElse]
                };
                match self.draw(s.range, rules) {
                    Some(Rule::NegateCondition) => negate(&mut s.test),
                    Some(Rule::SwapIfElse) => std::mem::swap(&mut s.body, &mut s.orelse),
                    _ => {}
                }
                self.expr(&mut s.test);
                self.block(&mut s.body);
                self.block(&mut s.orelse);
            }
            Stmt::With(w) => {
                for item in &mut w.items {
                    self.expr(&mut item.context_expr);
                }
                self.block(&mut w.body);
            }
            Stmt::AsyncWith(w) => {
                for item in &mut w.items {
                    self.expr(&mut item.context_expr);
                }
                self.block(&mut w.body);
            }
            Stmt::Match(m) => {
                self.expr(&mut m.subject);
                for case in &mut m.cases {
                    if let Some(g) = case.guard.as_deref_mut() {
                        self.expr(g);
                    }
                    self.block(&mut case.body);
                }
            }
            Stmt::Raise(r) => {
                if let Some(e) = r.exc.as_deref_mut() {
                    self.expr(e);
                }
            }
            Stmt::Try(t) => {
                self.block(&mut t.body);
                for ExceptHandler::ExceptHandler(h) in &mut t.handlers {
                    self.block(&mut h.body);
                }
                self.block(&mut t.orelse);
                self.block(&mut t.finalbody);
            }
            Stmt::TryStar(t) => {
                self.block(&mut t.body);
                for ExceptHandler::ExceptHandler(h) in &mut t.handlers {
                    self.block(&mut h.body);
                }
                self.block(&mut t.orelse);
                self.block(&mut t.finalbody);
            }
            Stmt::Assert(a) => self.expr(&mut a.test),
            Stmt::Expr(e) => self.expr(&mut e.value),
            _ => {}
        }
    }

    fn arguments(&mut self, args: &mut ast::Arguments) {
        for a in args
            .posonlyargs
            .iter_mut()
            .chain(&mut args.args)
            .chain(&mut args.kwonlyargs)
        {
            if let Some(d) = a.default.as_deref_mut() {
                self.expr(d);
            }
        }
    }

    fn bind_args(&mut self, args: &ast::Arguments) {
        for a in args
            .posonlyargs
            .iter()
            .chain(&args.args)
            .chain(&args.kwonlyargs)
        {
            let ty = a.def.annotation.as_deref().map_or(Ty::Unknown, annotation);
            self.env.set(a.def.arg.as_str(), ty);
        }
        if let Some(v) = &args.vararg {
            self.env.set(v.arg.as_str(), Ty::Tuple);
        }
        if let Some(k) = &args.kwarg {
            self.env.set(k.arg.as_str(), Ty::Dict);
        }
    }

    fn loop_header(&mut self, range: TextRange, target: &mut Expr, iter: &mut Expr) {
        let stop = range_stop_index(iter);
        self.env
            .bind(target, if stop.is_some() { Ty::Int } else { Ty::Unknown });
        if let Some(i) = stop {
            if self.draw(range, &[Rule::OffByOne]).is_some() {
                let minus = self.rng.gen_bool(0.5);
                if let Expr::Call(c) = iter {
                    let old = std::mem::replace(&mut c.args[i], placeholder());
                    c.args[i] = shift_by_one(old, minus);
                }
            }
        }
        self.expr(target);
        self.expr(iter);
    }

    fn alter_return(&mut self, value: &Expr) -> Option<Expr> {
        let replacement = match value {
            Expr::Constant(c) => match &c.value {
                Constant::Int(v) => {
                    constant(Constant::Int(v.clone() + ast::bigint::BigInt::from(1)))
                }
                Constant::Float(f) if (f + 1.0).is_finite() => constant(Constant::Float(f + 1.0)),
                Constant::Bool(b) => constant(Constant::Bool(!b)),
                Constant::Str(s) => constant(Constant::Str(format!("x{s}"))),
                _ => return None,
            },
            other => match self.env.infer(other) {
                t if t.is_numeric() => toggle_unary(other.clone(), UnaryOp::USub),
                Ty::Bool => toggle_unary(other.clone(), UnaryOp::Not),
                _ => return None,
            },
        };
        self.draw(value.range(), &[Rule::AlterReturn])
            .map(|_| replacement)
    }

    fn expr(&mut self, expr: &mut Expr) {
        match expr {
            Expr::BoolOp(b) => {
                if self.draw(b.range, &[Rule::ChangeOperator]).is_some() {
                    b.op = match b.op {
                        BoolOp::And => BoolOp::Or,
                        BoolOp::Or => BoolOp::And,
                    };
                }
                b.values.iter_mut().for_each(|e| self.expr(e));
            }
            Expr::NamedExpr(n) => {
                self.expr(&mut n.value);
                let ty = self.env.infer(&n.value);
                self.env.bind(&n.target, ty);
            }
            Expr::BinOp(b) => {
                if let Some(op) = swap_operator(b.op) {
                    if self.draw(b.range, &[Rule::ChangeOperator]).is_some() {
                        b.op = op;
                    }
                }
                self.expr(&mut b.left);
                self.expr(&mut b.right);
            }
            Expr::UnaryOp(u) => self.expr(&mut u.operand),
            Expr::Lambda(l) => self.expr(&mut l.body),
            Expr::IfExp(i) => {
                match self.draw(i.range, &[Rule::NegateCondition, Rule::SwapIfElse]) {
                    Some(Rule::NegateCondition) => negate(&mut i.test),
                    Some(Rule::SwapIfElse) => std::mem::swap(&mut i.body, &mut i.orelse),
                    _ => {}
                }
                self.expr(&mut i.test);
                self.expr(&mut i.body);
                self.expr(&mut i.orelse);
            }
            Expr::Dict(d) => {
                d.keys.iter_mut().flatten().for_each(|e| self.expr(e));
                d.values.iter_mut().for_each(|e| self.expr(e));
            }
            Expr::Set(s) => s.elts.iter_mut().for_each(|e| self.expr(e)),
            Expr::List(l) => l.elts.iter_mut().for_each(|e| self.expr(e)),
            Expr::Tuple(t) => t.elts.iter_mut().for_each(|e| self.expr(e)),
            Expr::ListComp(c) => {
                self.comprehensions(&mut c.generators);
                self.expr(&mut c.elt);
            }
            Expr::SetComp(c) => {
                self.comprehensions(&mut c.generators);
                self.expr(&mut c.elt);
            }
            Expr::GeneratorExp(c) => {
                self.comprehensions(&mut c.generators);
                self.expr(&mut c.elt);
            }
            Expr::DictComp(c) => {
                self.comprehensions(&mut c.generators);
                self.expr(&mut c.key);
                self.expr(&mut c.value);
            }
            Expr::Await(a) => self.expr(&mut a.value),
            Expr::Yield(y) => {
                if let Some(v) = y.value.as_deref_mut() {
                    self.expr(v);
                }
            }
            Expr::YieldFrom(y) => self.expr(&mut y.value),
            Expr::Compare(c) => {
                if let Some(i) = c.ops.iter().position(|op| swap_cmp(*op).is_some()) {
                    if self.draw(c.range, &[Rule::ChangeOperator]).is_some() {
                        c.ops[i] = swap_cmp(c.ops[i]).expect("position checked");
                    }
                }
                self.expr(&mut c.left);
                c.comparators.iter_mut().for_each(|e| self.expr(e));
            }
            Expr::Call(c) => {
                self.call(c);
                self.expr(&mut c.func);
                c.args.iter_mut().for_each(|e| self.expr(e));
                c.keywords.iter_mut().for_each(|k| self.expr(&mut k.value));
            }
            Expr::FormattedValue(f) => self.expr(&mut f.value),
            Expr::JoinedStr(j) => j.values.iter_mut().for_each(|e| self.expr(e)),
            Expr::Attribute(a) => self.expr(&mut a.value),
            Expr::Subscript(s) => {
                self.expr(&mut s.value);
                self.expr(&mut s.slice);
            }
            Expr::Starred(s) => self.expr(&mut s.value),
            Expr::Slice(s) => {
                for part in [&mut s.lower, &mut s.upper, &mut s.step] {
                    if let Some(e) = part.as_deref_mut() {
                        self.expr(e);
                    }
                }
            }
            Expr::Constant(_) | Expr::Name(_) => {}
        }
    }

    fn comprehensions(&mut self, generators: &mut [ast::Comprehension]) {
        for g in generators {
            self.expr(&mut g.iter);
            let ty = if range_stop_index(&g.iter).is_some() {
                Ty::Int
            } else {
                Ty::Unknown
            };
            self.env.bind(&g.target, ty);
            g.ifs.iter_mut().for_each(|e| self.expr(e));
        }
    }

    fn call(&mut self, c: &mut ast::ExprCall) {
        let positional = c.args.iter().all(|a| !matches!(a, Expr::Starred(_)));
        if positional && c.args.len() >= 2 {
            let types: Vec<Ty> = c.args.iter().map(|a| self.env.infer(a)).collect();
            let rendered: Vec<String> = c.args.iter().map(|a| a.to_string()).collect();
            let mut pairs = Vec::new();
            for i in 0..c.args.len() {
                for j in i + 1..c.args.len() {
                    let compatible = match (types[i], types[j]) {
                        (Ty::Unknown, Ty::Unknown) => self.cfg.allow_unknown_types,
                        (a, b) => a == b && a != Ty::Unknown,
                    };
                    if compatible && rendered[i] != rendered[j] {
                        pairs.push((i, j));
                    }
                }
            }
            if !pairs.is_empty() && self.draw(c.range, &[Rule::SwapArgs]).is_some() {
                let (i, j) = pairs[self.rng.gen_range(0..pairs.len())];
                c.args.swap(i, j);
            }
        }

        if let Expr::Name(callee) = c.func.as_ref() {
            if positional
                && c.keywords.is_empty()
                && self.functions.contains_key(callee.id.as_str())
            {
                let alternatives: Vec<String> = self
                    .functions
                    .iter()
                    .filter(|(name, arity)| {
                        **arity == c.args.len() && name.as_str() != callee.id.as_str()
                    })
                    .map(|(name, _)| name.clone())
                    .collect();
                if !alternatives.is_empty() && self.draw(c.range, &[Rule::ReplaceCall]).is_some() {
                    let name = &alternatives[self.rng.gen_range(0..alternatives.len())];
                    *c.func = Expr::Name(ast::ExprName {
                        range: TextRange::default(),
                        id: ast::Identifier::new(name.as_str()),
                        ctx: ExprContext::Load,
                    });
                }
            }
        }
    }
}

/// Functions outside class bodies with a fixed positional arity.
fn collect_functions(body: &[Stmt], out: &mut BTreeMap<String, usize>) {
    for stmt in body {
        match stmt {
            Stmt::FunctionDef(f) => {
                if f.args.vararg.is_none() {
                    out.insert(
                        f.name.to_string(),
                        f.args.posonlyargs.len() + f.args.args.len(),
                    );
                }
                collect_functions(&f.body, out);
            }
            Stmt::If(s) => {
                collect_functions(&s.body, out);
                collect_functions(&s.orelse, out);
            }
            Stmt::Try(t) => {
                collect_functions(&t.body, out);
                collect_functions(&t.orelse, out);
            }
            _ => {}
        }
    }
}

fn swap_operator(op: Operator) -> Option<Operator> {
    Some(match op {
        Operator::Add => Operator::Sub,
        Operator::Sub => Operator::Add,
        Operator::Mult => Operator::Div,
        Operator::Div => Operator::Mult,
        Operator::FloorDiv => Operator::Div,
        _ => return None,
    })
}

fn swap_cmp(op: CmpOp) -> Option<CmpOp> {
    Some(match op {
        CmpOp::Lt => CmpOp::LtE,
        CmpOp::LtE => CmpOp::Lt,
        CmpOp::Gt => CmpOp::GtE,
        CmpOp::GtE => CmpOp::Gt,
        CmpOp::Eq => CmpOp::NotEq,
        CmpOp::NotEq => CmpOp::Eq,
        _ => return None,
    })
}

/// Index of the stop argument when `iter` is a plain `range(...)` call.
fn range_stop_index(iter: &Expr) -> Option<usize> {
    let Expr::Call(c) = iter else { return None };
    let Expr::Name(n) = c.func.as_ref() else {
        return None;
    };
    let plain = c.keywords.is_empty() && c.args.iter().all(|a| !matches!(a, Expr::Starred(_)));
    match (n.id.as_str(), c.args.len()) {
        ("range", 1) if plain => Some(0),
        ("range", 2 | 3) if plain => Some(1),
        _ => None,
    }
}

fn placeholder() -> Expr {
    constant(Constant::None)
}

fn constant(value: Constant) -> Expr {
    Expr::Constant(ast::ExprConstant {
        range: TextRange::default(),
        value,
        kind: None,
    })
}

fn shift_by_one(expr: Expr, minus: bool) -> Expr {
    let one = ast::bigint::BigInt::from(1);
    if let Expr::Constant(ast::ExprConstant {
        value: Constant::Int(v),
        ..
    }) = &expr
    {
        return constant(Constant::Int(if minus {
            v.clone() - one
        } else {
            v.clone() + one
        }));
    }
    Expr::BinOp(ast::ExprBinOp {
        range: TextRange::default(),
        left: Box::new(expr),
        op: if minus { Operator::Sub } else { Operator::Add },
        right: Box::new(constant(Constant::Int(one))),
    })
}

/// Wrap in `op`, or strip it when the expression already carries it.
fn toggle_unary(expr: Expr, op: UnaryOp) -> Expr {
    match expr {
        Expr::UnaryOp(u) if u.op == op => *u.operand,
        other => Expr::UnaryOp(ast::ExprUnaryOp {
            range: TextRange::default(),
            op,
            operand: Box::new(other),
        }),
    }
}

fn negate(test: &mut Expr) {
    let old = std::mem::replace(test, placeholder());
    *test = toggle_unary(old, UnaryOp::Not);
}
