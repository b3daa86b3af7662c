//! Just enough local type inference to gate argument swaps and return rewrites.

use std::collections::HashMap;

use rustpython_parser::ast::{self, Constant, Expr, Operator, UnaryOp};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub(crate) enum Ty {
    Int,
    Float,
    Str,
    Bool,
    List,
    Tuple,
    Dict,
    Set,
    None,
    Unknown,
}

impl Ty {
    pub(crate) fn is_numeric(self) -> bool {
        matches!(self, Ty::Int | Ty::Float)
    }

    fn from_name(name: &str) -> Ty {
        match name {
            "int" => Ty::Int,
            "float" => Ty::Float,
            "str" => Ty::Str,
            "bool" => Ty::Bool,
            "list" | "List" => Ty::List,
            "tuple" | "Tuple" => Ty::Tuple,
            "dict" | "Dict" => Ty::Dict,
            "set" | "Set" => Ty::Set,
            _ => Ty::Unknown,
        }
    }
}

#[derive(Debug, Default)]
pub(crate) struct TypeEnv {
    scopes: Vec<HashMap<String, Ty>>,
}

impl TypeEnv {
    pub(crate) fn push(&mut self) {
        self.scopes.push(HashMap::new());
    }

    pub(crate) fn pop(&mut self) {
        self.scopes.pop();
    }

    pub(crate) fn set(&mut self, name: &str, ty: Ty) {
        if self.scopes.is_empty() {
            self.push();
        }
        if let Some(scope) = self.scopes.last_mut() {
            scope.insert(name.to_string(), ty);
        }
    }

    pub(crate) fn get(&self, name: &str) -> Ty {
        self.scopes
            .iter()
            .rev()
            .find_map(|s| s.get(name).copied())
            .unwrap_or(Ty::Unknown)
    }

    /// Record types for every name bound by an assignment target.
    pub(crate) fn bind(&mut self, target: &Expr, ty: Ty) {
        match target {
            Expr::Name(n) => self.set(n.id.as_str(), ty),
            Expr::Tuple(t) => t.elts.iter().for_each(|e| self.bind(e, Ty::Unknown)),
            Expr::List(l) => l.elts.iter().for_each(|e| self.bind(e, Ty::Unknown)),
            Expr::Starred(s) => self.bind(&s.value, Ty::List),
            _ => {}
        }
    }

    pub(crate) fn infer(&self, expr: &Expr) -> Ty {
        match expr {
            Expr::Constant(c) => match &c.value {
                Constant::Int(_) => Ty::Int,
                Constant::Float(_) => Ty::Float,
                Constant::Str(_) => Ty::Str,
                Constant::Bool(_) => Ty::Bool,
                Constant::None => Ty::None,
                Constant::Tuple(_) => Ty::Tuple,
                _ => Ty::Unknown,
            },
            Expr::Name(n) => self.get(n.id.as_str()),
            Expr::JoinedStr(_) => Ty::Str,
            Expr::List(_) | Expr::ListComp(_) => Ty::List,
            Expr::Tuple(_) => Ty::Tuple,
            Expr::Dict(_) | Expr::DictComp(_) => Ty::Dict,
            Expr::Set(_) | Expr::SetComp(_) => Ty::Set,
            Expr::Compare(_) => Ty::Bool,
            Expr::BoolOp(b) => {
                let first = b.values.first().map_or(Ty::Unknown, |v| self.infer(v));
                if b.values.iter().all(|v| self.infer(v) == first) {
                    first
                } else {
                    Ty::Unknown
                }
            }
            Expr::UnaryOp(u) => match u.op {
                UnaryOp::Not => Ty::Bool,
                UnaryOp::USub | UnaryOp::UAdd => match self.infer(&u.operand) {
                    Ty::Bool => Ty::Int,
                    t if t.is_numeric() => t,
                    _ => Ty::Unknown,
                },
                UnaryOp::Invert => match self.infer(&u.operand) {
                    Ty::Int | Ty::Bool => Ty::Int,
                    _ => Ty::Unknown,
                },
            },
            Expr::BinOp(b) => binop(self.infer(&b.left), b.op, self.infer(&b.right)),
            Expr::IfExp(i) => {
                let (a, b) = (self.infer(&i.body), self.infer(&i.orelse));
                if a == b {
                    a
                } else {
                    Ty::Unknown
                }
            }
            Expr::Call(c) => match c.func.as_ref() {
                Expr::Name(n) => match n.id.as_str() {
                    "len" | "int" | "ord" => Ty::Int,
                    "round" if c.args.len() < 2 => Ty::Int,
                    "isinstance" | "any" | "all" | "callable" => Ty::Bool,
                    "repr" | "chr" | "hex" | "bin" | "oct" => Ty::Str,
                    "sorted" => Ty::List,
                    name => Ty::from_name(name),
                },
                Expr::Attribute(a) => match a.attr.as_str() {
                    "join" | "upper" | "lower" | "strip" | "lstrip" | "rstrip" | "replace"
                    | "format" => Ty::Str,
                    "split" | "splitlines" => Ty::List,
                    "count" | "index" | "find" => Ty::Int,
                    "startswith" | "endswith" | "isdigit" | "isalpha" | "isalnum" => Ty::Bool,
                    _ => Ty::Unknown,
                },
                _ => Ty::Unknown,
            },
            _ => Ty::Unknown,
        }
    }
}

fn binop(l: Ty, op: Operator, r: Ty) -> Ty {
    use Ty::*;
    let num = |t: Ty| matches!(t, Int | Float | Bool);
    match op {
        Operator::Div if num(l) && num(r) => Float,
        Operator::Add
        | Operator::Sub
        | Operator::Mult
        | Operator::FloorDiv
        | Operator::Mod
        | Operator::Pow
            if num(l) && num(r) =>
        {
            if l == Float || r == Float {
                Float
            } else {
                Int
            }
        }
        Operator::Add if l == r && matches!(l, Str | List | Tuple) => l,
        Operator::Mult if matches!((l, r), (Str, Int) | (Int, Str)) => Str,
        Operator::Mult if matches!((l, r), (List, Int) | (Int, List)) => List,
        Operator::Mod if l == Str => Str,
        Operator::BitAnd
        | Operator::BitOr
        | Operator::BitXor
        | Operator::LShift
        | Operator::RShift
            if matches!(l, Int | Bool) && matches!(r, Int | Bool) =>
        {
            Int
        }
        _ => Unknown,
    }
}

/// Type named by an annotation expression, looking through `List[int]`-style subscripts.
pub(crate) fn annotation(expr: &Expr) -> Ty {
    match expr {
        Expr::Name(n) => Ty::from_name(n.id.as_str()),
        Expr::Attribute(a) => Ty::from_name(a.attr.as_str()),
        Expr::Subscript(s) => match annotation(&s.value) {
            Ty::List | Ty::Tuple | Ty::Dict | Ty::Set => annotation(&s.value),
            _ => Ty::Unknown,
        },
        Expr::Constant(ast::ExprConstant {
            value: Constant::Str(s),
            ..
        }) => Ty::from_name(s.trim()),
        _ => Ty::Unknown,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::python::parse_module;
    use rustpython_parser::ast::Stmt;

    fn expr(src: &str) -> Expr {
        match parse_module(src).unwrap().remove(0) {
            Stmt::Expr(e) => *e.value,
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn literals_and_operators() {
        let mut env = TypeEnv::default();
        env.set("n", Ty::Int);
        env.set("s", Ty::Str);
        assert_eq!(env.infer(&expr("n + 1")), Ty::Int);
        assert_eq!(env.infer(&expr("n / 2")), Ty::Float);
        assert_eq!(env.infer(&expr("s + 'x'")), Ty::Str);
        assert_eq!(env.infer(&expr("n > 0 and n < 5")), Ty::Bool);
        assert_eq!(env.infer(&expr("len(s)")), Ty::Int);
        assert_eq!(env.infer(&expr("q")), Ty::Unknown);
        assert_eq!(env.infer(&expr("-n")), Ty::Int);
    }

    #[test]
    fn scopes_shadow() {
        let mut env = TypeEnv::default();
        env.set("x", Ty::Int);
        env.push();
        env.set("x", Ty::Str);
        assert_eq!(env.get("x"), Ty::Str);
        env.pop();
        assert_eq!(env.get("x"), Ty::Int);
    }

    #[test]
    fn annotations() {
        assert_eq!(annotation(&expr("int")), Ty::Int);
        assert_eq!(annotation(&expr("List[int]")), Ty::List);
        assert_eq!(annotation(&expr("typing.Dict[str, int]")), Ty::Dict);
        assert_eq!(annotation(&expr("Foo")), Ty::Unknown);
    }
}
