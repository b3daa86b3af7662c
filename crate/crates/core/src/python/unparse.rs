use std::fmt::Write;

use rustpython_parser::ast::{
    self, Arg, ArgWithDefault, Arguments, Constant, ExceptHandler, Expr, Pattern, Stmt, TypeParam,
};

const INDENT: &str = "    ";

/// Render a statement list as Python source.
///
/// Output is normalized: one statement per line, four-space indentation,
/// no comments or blank lines, expressions printed with minimal parentheses.
pub fn unparse_suite(suite: &[Stmt]) -> String {
    let mut out = Printer::default();
    out.block_body(suite);
    out.buf
}

#[derive(Default)]
struct Printer {
    buf: String,
    depth: usize,
}

impl Printer {
    fn line(&mut self, text: &str) {
        for _ in 0..self.depth {
            self.buf.push_str(INDENT);
        }
        self.buf.push_str(text);
        self.buf.push('\n');
    }

    fn block_body(&mut self, body: &[Stmt]) {
        for stmt in body {
            self.stmt(stmt);
        }
    }

    fn block(&mut self, header: &str, body: &[Stmt]) {
        self.line(header);
        self.depth += 1;
        if body.is_empty() {
            self.line("pass");
        } else {
            self.block_body(body);
        }
        self.depth -= 1;
    }

    fn else_chain(&mut self, orelse: &[Stmt]) {
        if orelse.is_empty() {
            return;
        }
        if let [Stmt::If(nested)] = orelse {
            self.block(&format!("elif {}:", nested.test), &nested.body);
            self.else_chain(&nested.orelse);
        } else {
            self.block("else:", orelse);
        }
    }

    fn decorators(&mut self, decorators: &[Expr]) {
        for d in decorators {
            self.line(&format!("@{d}"));
        }
    }

    fn stmt(&mut self, stmt: &Stmt) {
        match stmt {
            Stmt::FunctionDef(f) => {
                self.decorators(&f.decorator_list);
                let header = function_header(
                    "def",
                    &f.name,
                    &f.type_params,
                    &f.args,
                    f.returns.as_deref(),
                );
                self.block(&header, &f.body);
            }
            Stmt::AsyncFunctionDef(f) => {
                self.decorators(&f.decorator_list);
                let header = function_header(
                    "async def",
                    &f.name,
                    &f.type_params,
                    &f.args,
                    f.returns.as_deref(),
                );
                self.block(&header, &f.body);
            }
            Stmt::ClassDef(c) => {
                self.decorators(&c.decorator_list);
                let mut header = format!("class {}{}", c.name, type_params(&c.type_params));
                let mut parts: Vec<String> = c.bases.iter().map(ToString::to_string).collect();
                parts.extend(c.keywords.iter().map(keyword));
                if !parts.is_empty() {
                    let _ = write!(header, "({})", parts.join(", "));
                }
                header.push(':');
                self.block(&header, &c.body);
            }
            Stmt::Return(r) => match &r.value {
                Some(v) => self.line(&format!("return {v}")),
                None => self.line("return"),
            },
            Stmt::Delete(d) => self.line(&format!("del {}", join(&d.targets))),
            Stmt::Assign(a) => {
                let mut text = String::new();
                for t in &a.targets {
                    let _ = write!(text, "{t} = ");
                }
                let _ = write!(text, "{}", a.value);
                self.line(&text);
            }
            Stmt::TypeAlias(t) => {
                self.line(&format!(
                    "type {}{} = {}",
                    t.name,
                    type_params(&t.type_params),
                    t.value
                ));
            }
            Stmt::AugAssign(a) => {
                self.line(&format!("{} {}= {}", a.target, operator(a.op), a.value));
            }
            Stmt::AnnAssign(a) => {
                let target = if a.simple {
                    a.target.to_string()
                } else {
                    format!("({})", a.target)
                };
                let mut text = format!("{target}: {}", a.annotation);
                if let Some(v) = &a.value {
                    let _ = write!(text, " = {v}");
                }
                self.line(&text);
            }
            Stmt::For(f) => {
                self.block(&format!("for {} in {}:", f.target, f.iter), &f.body);
                if !f.orelse.is_empty() {
                    self.block("else:", &f.orelse);
                }
            }
            Stmt::AsyncFor(f) => {
                self.block(&format!("async for {} in {}:", f.target, f.iter), &f.body);
                if !f.orelse.is_empty() {
                    self.block("else:", &f.orelse);
                }
            }
            Stmt::While(w) => {
                self.block(&format!("while {}:", w.test), &w.body);
                if !w.orelse.is_empty() {
                    self.block("else:", &w.orelse);
                }
            }
            Stmt::If(i) => {
                self.block(&format!("if {}:", i.test), &i.body);
                self.else_chain(&i.orelse);
            }
            Stmt::With(w) => self.block(&format!("with {}:", with_items(&w.items)), &w.body),
            Stmt::AsyncWith(w) => {
                self.block(&format!("async with {}:", with_items(&w.items)), &w.body)
            }
            Stmt::Match(m) => {
                self.line(&format!("match {}:", m.subject));
                self.depth += 1;
                for case in &m.cases {
                    let mut header = format!("case {}", pattern(&case.pattern, false));
                    if let Some(g) = &case.guard {
                        let _ = write!(header, " if {g}");
                    }
                    header.push(':');
                    self.block(&header, &case.body);
                }
                self.depth -= 1;
            }
            Stmt::Raise(r) => {
                let mut text = String::from("raise");
                if let Some(e) = &r.exc {
                    let _ = write!(text, " {e}");
                }
                if let Some(c) = &r.cause {
                    let _ = write!(text, " from {c}");
                }
                self.line(&text);
            }
            Stmt::Try(t) => self.try_stmt(&t.body, &t.handlers, &t.orelse, &t.finalbody, false),
            Stmt::TryStar(t) => self.try_stmt(&t.body, &t.handlers, &t.orelse, &t.finalbody, true),
            Stmt::Assert(a) => match &a.msg {
                Some(m) => self.line(&format!("assert {}, {m}", a.test)),
                None => self.line(&format!("assert {}", a.test)),
            },
            Stmt::Import(i) => {
                let names: Vec<String> = i.names.iter().map(alias).collect();
                self.line(&format!("import {}", names.join(", ")));
            }
            Stmt::ImportFrom(i) => {
                let level = i.level.map_or(0, |l| l.to_u32()) as usize;
                let module = i.module.as_ref().map_or("", |m| m.as_str());
                let names: Vec<String> = i.names.iter().map(alias).collect();
                self.line(&format!(
                    "from {}{module} import {}",
                    ".".repeat(level),
                    names.join(", ")
                ));
            }
            Stmt::Global(g) => self.line(&format!("global {}", idents(&g.names))),
            Stmt::Nonlocal(n) => self.line(&format!("nonlocal {}", idents(&n.names))),
            Stmt::Expr(e) => self.line(&e.value.to_string()),
            Stmt::Pass(_) => self.line("pass"),
            Stmt::Break(_) => self.line("break"),
            Stmt::Continue(_) => self.line("continue"),
        }
    }

    fn try_stmt(
        &mut self,
        body: &[Stmt],
        handlers: &[ExceptHandler],
        orelse: &[Stmt],
        finalbody: &[Stmt],
        star: bool,
    ) {
        self.block("try:", body);
        let keyword = if star { "except*" } else { "except" };
        for handler in handlers {
            let ExceptHandler::ExceptHandler(h) = handler;
            let mut header = keyword.to_string();
            if let Some(t) = &h.type_ {
                let _ = write!(header, " {t}");
                if let Some(name) = &h.name {
                    let _ = write!(header, " as {name}");
                }
            }
            header.push(':');
            self.block(&header, &h.body);
        }
        if !orelse.is_empty() {
            self.block("else:", orelse);
        }
        if !finalbody.is_empty() {
            self.block("finally:", finalbody);
        }
    }
}

fn join(exprs: &[Expr]) -> String {
    exprs
        .iter()
        .map(ToString::to_string)
        .collect::<Vec<_>>()
        .join(", ")
}

fn idents(names: &[ast::Identifier]) -> String {
    names
        .iter()
        .map(|n| n.as_str())
        .collect::<Vec<_>>()
        .join(", ")
}

fn alias(a: &ast::Alias) -> String {
    match &a.asname {
        Some(as_name) => format!("{} as {as_name}", a.name),
        None => a.name.to_string(),
    }
}

fn keyword(k: &ast::Keyword) -> String {
    match &k.arg {
        Some(name) => format!("{name}={}", k.value),
        None => format!("**{}", k.value),
    }
}

fn with_items(items: &[ast::WithItem]) -> String {
    items
        .iter()
        .map(|item| match &item.optional_vars {
            Some(v) => format!("{} as {v}", item.context_expr),
            None => item.context_expr.to_string(),
        })
        .collect::<Vec<_>>()
        .join(", ")
}

fn function_header(
    keyword: &str,
    name: &str,
    params: &[TypeParam],
    args: &Arguments,
    returns: Option<&Expr>,
) -> String {
    let mut header = format!(
        "{keyword} {name}{}({})",
        type_params(params),
        arguments(args)
    );
    if let Some(r) = returns {
        let _ = write!(header, " -> {r}");
    }
    header.push(':');
    header
}

fn type_params(params: &[TypeParam]) -> String {
    if params.is_empty() {
        return String::new();
    }
    let parts: Vec<String> = params
        .iter()
        .map(|p| match p {
            TypeParam::TypeVar(t) => match &t.bound {
                Some(b) => format!("{}: {b}", t.name),
                None => t.name.to_string(),
            },
            TypeParam::ParamSpec(p) => format!("**{}", p.name),
            TypeParam::TypeVarTuple(t) => format!("*{}", t.name),
        })
        .collect();
    format!("[{}]", parts.join(", "))
}

fn arg(a: &Arg) -> String {
    match &a.annotation {
        Some(ann) => format!("{}: {ann}", a.arg),
        None => a.arg.to_string(),
    }
}

fn arg_with_default(a: &ArgWithDefault) -> String {
    let mut text = arg(&a.def);
    if let Some(d) = &a.default {
        if a.def.annotation.is_some() {
            let _ = write!(text, " = {d}");
        } else {
            let _ = write!(text, "={d}");
        }
    }
    text
}

fn arguments(args: &Arguments) -> String {
    let mut parts = Vec::new();
    for a in &args.posonlyargs {
        parts.push(arg_with_default(a));
    }
    if !args.posonlyargs.is_empty() {
        parts.push("/".to_string());
    }
    for a in &args.args {
        parts.push(arg_with_default(a));
    }
    match &args.vararg {
        Some(v) => parts.push(format!("*{}", arg(v))),
        None if !args.kwonlyargs.is_empty() => parts.push("*".to_string()),
        None => {}
    }
    for a in &args.kwonlyargs {
        parts.push(arg_with_default(a));
    }
    if let Some(k) = &args.kwarg {
        parts.push(format!("**{}", arg(k)));
    }
    parts.join(", ")
}

pub(crate) fn operator(op: ast::Operator) -> &'static str {
    use ast::Operator::*;
    match op {
        Add => "+",
        Sub => "-",
        Mult => "*",
        MatMult => "@",
        Div => "/",
        Mod => "%",
        Pow => "**",
        LShift => "<<",
        RShift => ">>",
        BitOr => "|",
        BitXor => "^",
        BitAnd => "&",
        FloorDiv => "//",
    }
}

fn pattern(p: &Pattern, nested: bool) -> String {
    match p {
        Pattern::MatchValue(v) => v.value.to_string(),
        Pattern::MatchSingleton(s) => match s.value {
            Constant::None => "None".into(),
            Constant::Bool(true) => "True".into(),
            Constant::Bool(false) => "False".into(),
            _ => "None".into(),
        },
        Pattern::MatchSequence(s) => {
            let items: Vec<String> = s.patterns.iter().map(|p| pattern(p, false)).collect();
            format!("[{}]", items.join(", "))
        }
        Pattern::MatchMapping(m) => {
            let mut items: Vec<String> = m
                .keys
                .iter()
                .zip(&m.patterns)
                .map(|(k, p)| format!("{k}: {}", pattern(p, false)))
                .collect();
            if let Some(rest) = &m.rest {
                items.push(format!("**{rest}"));
            }
            format!("{{{}}}", items.join(", "))
        }
        Pattern::MatchClass(c) => {
            let mut items: Vec<String> = c.patterns.iter().map(|p| pattern(p, false)).collect();
            items.extend(
                c.kwd_attrs
                    .iter()
                    .zip(&c.kwd_patterns)
                    .map(|(k, p)| format!("{k}={}", pattern(p, false))),
            );
            format!("{}({})", c.cls, items.join(", "))
        }
        Pattern::MatchStar(s) => format!("*{}", s.name.as_ref().map_or("_", |n| n.as_str())),
        Pattern::MatchAs(a) => match (&a.pattern, &a.name) {
            (None, None) => "_".into(),
            (None, Some(name)) => name.to_string(),
            (Some(inner), name) => {
                let text = format!(
                    "{} as {}",
                    pattern(inner, true),
                    name.as_ref().map_or("_", |n| n.as_str())
                );
                if nested {
                    format!("({text})")
                } else {
                    text
                }
            }
        },
        Pattern::MatchOr(o) => {
            let text = o
                .patterns
                .iter()
                .map(|p| pattern(p, true))
                .collect::<Vec<_>>()
                .join(" | ");
            if nested {
                format!("({text})")
            } else {
                text
            }
        }
    }
}
