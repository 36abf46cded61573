//! `.ospar` programs: an s-expression syntax for the structured subset.
//!
//! ```text
//! ; master write vs. critical read/write
//! (vars a)
//! (parallel 2
//!   (master (write a))
//!   (critical (read a) (write a)))
//! ```
//!
//! Declarations: `(vars NAME...)`, `(array NAME LEN)`, `(private NAME...)`.
//! Statements: `(parallel N STMT...)`, `(master STMT...)`, `(on-rank R STMT...)`,
//! `(critical [NAME] STMT...)`, `(barrier [ID])`, `(read REF)`, `(write REF)`,
//! `(for I LO HI STMT...)`, `(for-nowait I LO HI STMT...)`, `(loop I LO HI STMT...)`,
//! `(seq STMT...)`. A REF is `NAME` or `(NAME INDEX)` where INDEX is an
//! integer, a loop variable, or `(+ X Y)` / `(- X Y)`.

use std::fmt;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct Pos {
    pub line: usize,
    pub col: usize,
}

impl fmt::Display for Pos {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.line, self.col)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("{pos}: {msg}")]
pub struct ParseError {
    pub pos: Pos,
    pub msg: String,
}

fn perr<T>(pos: Pos, msg: impl Into<String>) -> Result<T, ParseError> {
    Err(ParseError { pos, msg: msg.into() })
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum VarKind {
    Scalar,
    Array(u64),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VarDecl {
    pub name: String,
    pub kind: VarKind,
    pub private: bool,
    pub pos: Pos,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Index {
    Const(i64),
    Var(String),
    Add(Box<Index>, Box<Index>),
    Sub(Box<Index>, Box<Index>),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Ref {
    Var(String),
    Elem(String, Index),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Loop {
    pub var: String,
    pub lo: i64,
    pub hi: i64,
    pub body: Vec<Node>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Stmt {
    Parallel { team_size: u32, body: Vec<Node> },
    Master(Vec<Node>),
    OnRank(u32, Vec<Node>),
    Critical(Option<String>, Vec<Node>),
    Barrier(Option<u64>),
    Read(Ref),
    Write(Ref),
    /// Worksharing loop: iterations split over the team, then a barrier.
    For(Loop),
    ForNowait(Loop),
    /// Plain loop run in full by every thread that reaches it.
    SeqLoop(Loop),
    Seq(Vec<Node>),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Node {
    pub stmt: Stmt,
    pub pos: Pos,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Program {
    pub vars: Vec<VarDecl>,
    pub body: Vec<Node>,
}

impl Program {
    pub fn parse(src: &str) -> Result<Program, ParseError> {
        let forms = read_sexps(src)?;
        let mut prog = Program::default();
        for form in &forms {
            match head(form) {
                Some("vars") | Some("private") => {
                    let private = head(form) == Some("private");
                    for item in &form.items()[1..] {
                        let name = item.atom_name("variable name")?;
                        prog.declare(name, VarKind::Scalar, private, item.pos())?;
                    }
                }
                Some("array") => {
                    let items = form.items();
                    if items.len() != 3 {
                        return perr(form.pos(), "expected (array NAME LEN)");
                    }
                    let name = items[1].atom_name("array name")?;
                    let len = items[2].int()?;
                    if len < 1 {
                        return perr(items[2].pos(), "array length must be positive");
                    }
                    prog.declare(name, VarKind::Array(len as u64), false, form.pos())?;
                }
                _ => prog.body.push(stmt(form)?),
            }
        }
        Ok(prog)
    }

    fn declare(&mut self, name: &str, kind: VarKind, private: bool, pos: Pos) -> Result<(), ParseError> {
        if self.vars.iter().any(|v| v.name == name) {
            return perr(pos, format!("variable {name} declared twice"));
        }
        self.vars.push(VarDecl {
            name: name.to_string(),
            kind,
            private,
            pos,
        });
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Sexp {
    Atom(String, Pos),
    List(Vec<Sexp>, Pos),
}

impl Sexp {
    fn pos(&self) -> Pos {
        match self {
            Sexp::Atom(_, p) | Sexp::List(_, p) => *p,
        }
    }

    fn items(&self) -> &[Sexp] {
        match self {
            Sexp::List(v, _) => v,
            Sexp::Atom(..) => &[],
        }
    }

    fn atom_name(&self, what: &str) -> Result<&str, ParseError> {
        match self {
            Sexp::Atom(s, p) => {
                if s.parse::<i64>().is_ok() || !s.chars().all(|c| c.is_alphanumeric() || c == '_') {
                    return perr(*p, format!("expected {what}, found {s:?}"));
                }
                Ok(s)
            }
            Sexp::List(_, p) => perr(*p, format!("expected {what}, found a list")),
        }
    }

    fn int(&self) -> Result<i64, ParseError> {
        match self {
            Sexp::Atom(s, p) => s
                .parse::<i64>()
                .or_else(|_| perr(*p, format!("expected an integer, found {s:?}"))),
            Sexp::List(_, p) => perr(*p, "expected an integer, found a list"),
        }
    }
}

fn head(s: &Sexp) -> Option<&str> {
    match s.items().first() {
        Some(Sexp::Atom(h, _)) => Some(h),
        _ => None,
    }
}

fn read_sexps(src: &str) -> Result<Vec<Sexp>, ParseError> {
    let mut stack: Vec<(Vec<Sexp>, Pos)> = vec![(Vec::new(), Pos::default())];
    let mut atom: Option<(String, Pos)> = None;
    let (mut line, mut col) = (1, 0);
    let mut comment = false;
    for ch in src.chars() {
        if ch == '\n' {
            line += 1;
            col = 0;
        } else {
            col += 1;
        }
        let pos = Pos { line, col };
        if comment {
            if ch == '\n' {
                comment = false;
            }
            continue;
        }
        if ch == '(' || ch == ')' || ch == ';' || ch.is_whitespace() {
            if let Some((a, p)) = atom.take() {
                stack.last_mut().unwrap().0.push(Sexp::Atom(a, p));
            }
        }
        match ch {
            ';' => comment = true,
            '(' => stack.push((Vec::new(), pos)),
            ')' => {
                if stack.len() == 1 {
                    return perr(pos, "unbalanced ')'");
                }
                let (items, p) = stack.pop().unwrap();
                stack.last_mut().unwrap().0.push(Sexp::List(items, p));
            }
            c if c.is_whitespace() => {}
            c => match &mut atom {
                Some((a, _)) => a.push(c),
                None => atom = Some((c.to_string(), pos)),
            },
        }
    }
    if let Some((a, p)) = atom.take() {
        stack.last_mut().unwrap().0.push(Sexp::Atom(a, p));
    }
    if stack.len() > 1 {
        return perr(stack.last().unwrap().1, "unclosed '('");
    }
    let top = stack.pop().unwrap().0;
    if let Some(Sexp::Atom(a, p)) = top.iter().find(|s| matches!(s, Sexp::Atom(..))) {
        return perr(*p, format!("unexpected atom {a:?} at top level"));
    }
    Ok(top)
}

fn body(items: &[Sexp]) -> Result<Vec<Node>, ParseError> {
    items.iter().map(stmt).collect()
}

fn stmt(s: &Sexp) -> Result<Node, ParseError> {
    let pos = s.pos();
    let Some(h) = head(s) else {
        return perr(pos, "expected a statement");
    };
    let items = s.items();
    let args = &items[1..];
    let arity = |n: usize| -> Result<(), ParseError> {
        if args.len() < n {
            return perr(pos, format!("{h} needs at least {n} argument(s)"));
        }
        Ok(())
    };
    let stmt = match h {
        "parallel" => {
            arity(1)?;
            let n = args[0].int()?;
            if !(1..=u32::MAX as i64).contains(&n) {
                return perr(args[0].pos(), "team size must be at least 1");
            }
            Stmt::Parallel {
                team_size: n as u32,
                body: body(&args[1..])?,
            }
        }
        "master" => Stmt::Master(body(args)?),
        "on-rank" => {
            arity(1)?;
            let r = args[0].int()?;
            if r < 0 || r > u32::MAX as i64 {
                return perr(args[0].pos(), "rank must be a natural number");
            }
            Stmt::OnRank(r as u32, body(&args[1..])?)
        }
        "critical" => match args.first() {
            Some(Sexp::Atom(..)) => Stmt::Critical(
                Some(args[0].atom_name("critical name")?.to_string()),
                body(&args[1..])?,
            ),
            _ => Stmt::Critical(None, body(args)?),
        },
        "barrier" => match args {
            [] => Stmt::Barrier(None),
            [id] => {
                let id = id.int()?;
                if id < 1 {
                    return perr(args[0].pos(), "barrier id must be positive");
                }
                Stmt::Barrier(Some(id as u64))
            }
            _ => return perr(pos, "expected (barrier [ID])"),
        },
        "read" | "write" => {
            if args.len() != 1 {
                return perr(pos, format!("expected ({h} REF)"));
            }
            let r = reference(&args[0])?;
            if h == "read" {
                Stmt::Read(r)
            } else {
                Stmt::Write(r)
            }
        }
        "for" | "for-nowait" | "loop" => {
            arity(3)?;
            let lp = Loop {
                var: args[0].atom_name("loop variable")?.to_string(),
                lo: args[1].int()?,
                hi: args[2].int()?,
                body: body(&args[3..])?,
            };
            match h {
                "for" => Stmt::For(lp),
                "for-nowait" => Stmt::ForNowait(lp),
                _ => Stmt::SeqLoop(lp),
            }
        }
        "seq" => Stmt::Seq(body(args)?),
        other => return perr(pos, format!("unknown statement {other:?}")),
    };
    Ok(Node { stmt, pos })
}

fn reference(s: &Sexp) -> Result<Ref, ParseError> {
    match s {
        Sexp::Atom(..) => Ok(Ref::Var(s.atom_name("variable")?.to_string())),
        Sexp::List(items, pos) => {
            if items.len() != 2 {
                return perr(*pos, "expected (ARRAY INDEX)");
            }
            Ok(Ref::Elem(items[0].atom_name("array name")?.to_string(), index(&items[1])?))
        }
    }
}

fn index(s: &Sexp) -> Result<Index, ParseError> {
    match s {
        Sexp::Atom(a, _) => match a.parse::<i64>() {
            Ok(n) => Ok(Index::Const(n)),
            Err(_) => Ok(Index::Var(s.atom_name("index")?.to_string())),
        },
        Sexp::List(items, pos) => {
            if items.len() != 3 {
                return perr(*pos, "expected (+ X Y) or (- X Y)");
            }
            let (x, y) = (Box::new(index(&items[1])?), Box::new(index(&items[2])?));
            match head(s) {
                Some("+") => Ok(Index::Add(x, y)),
                Some("-") => Ok(Index::Sub(x, y)),
                _ => perr(*pos, "expected + or -"),
            }
        }
    }
}
