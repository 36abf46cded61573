//! Lowering programs to per-thread operation templates.
//!
//! Every team member gets its own template, already specialised to its rank:
//! `master`/`on-rank` bodies appear only in the matching member, worksharing
//! loops are split into static blocks, loop indices are resolved to element
//! addresses. A member body is always
//! `TaskBegin, <body>, Barrier(k), TaskEnd`, where the trailing barrier is the
//! region's implicit one. Barrier ids count up from 1 per team in textual order.

use std::collections::BTreeMap;
use std::sync::Arc;

use super::program::{Index, Loop, Node, Pos, Program, Ref, Stmt, VarKind};
use crate::trace::{Addr, Mat, MutexName};

pub const BASE_ADDR: Addr = 0x1000;
pub const WORD: Addr = 8;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Op {
    TaskBegin,
    TaskEnd,
    Access { addr: Addr, mat: Mat },
    Acquire(MutexName),
    Release(MutexName),
    Barrier(u64),
    /// Fork a team; `members[r]` is the template of rank `r`.
    Parallel { team_size: u32, members: Vec<Arc<[Op]>> },
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("{pos}: {msg}")]
pub struct LowerError {
    pub pos: Pos,
    pub msg: String,
}

fn lerr<T>(pos: Pos, msg: impl Into<String>) -> Result<T, LowerError> {
    Err(LowerError { pos, msg: msg.into() })
}

/// Address to source-name mapping, e.g. `a[2]` or `t@0.1` for a private.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Symbols {
    names: BTreeMap<Addr, String>,
}

impl Symbols {
    pub fn name(&self, addr: Addr) -> Option<&str> {
        self.names.get(&addr).map(String::as_str)
    }

    /// Inverse lookup.
    pub fn addr(&self, name: &str) -> Option<Addr> {
        self.names.iter().find(|(_, n)| *n == name).map(|(a, _)| *a)
    }

    pub fn iter(&self) -> impl Iterator<Item = (Addr, &str)> {
        self.names.iter().map(|(a, n)| (*a, n.as_str()))
    }

    /// `name` if known, otherwise the number.
    pub fn display(&self, addr: Addr) -> String {
        self.name(addr).map(str::to_string).unwrap_or_else(|| addr.to_string())
    }
}

#[derive(Debug, Clone)]
pub struct Lowered {
    /// Template of the initial thread.
    pub root: Arc<[Op]>,
    pub symbols: Symbols,
}

#[derive(Clone)]
struct Ctx {
    rank: u32,
    team_size: u32,
    in_team: bool,
    /// Inside master/on-rank: only part of the team runs this code.
    partial: bool,
    locks: Vec<MutexName>,
    path: Vec<u32>,
    env: BTreeMap<String, i64>,
}

struct Var {
    base: Addr,
    kind: VarKind,
    private: bool,
}

struct Lowerer {
    vars: BTreeMap<String, Var>,
    symbols: Symbols,
    private_next: Addr,
    private_slots: BTreeMap<(String, Vec<u32>), Addr>,
}

/// Lower a parsed program.
pub fn lower(program: &Program) -> Result<Lowered, LowerError> {
    let mut vars = BTreeMap::new();
    let mut symbols = Symbols::default();
    let mut next = BASE_ADDR;
    for v in program.vars.iter().filter(|v| !v.private) {
        match v.kind {
            VarKind::Scalar => {
                symbols.names.insert(next, v.name.clone());
                vars.insert(
                    v.name.clone(),
                    Var {
                        base: next,
                        kind: VarKind::Scalar,
                        private: false,
                    },
                );
                next += WORD;
            }
            VarKind::Array(n) => {
                for i in 0..n {
                    symbols.names.insert(next + i * WORD, format!("{}[{i}]", v.name));
                }
                vars.insert(
                    v.name.clone(),
                    Var {
                        base: next,
                        kind: VarKind::Array(n),
                        private: false,
                    },
                );
                next += n * WORD;
            }
        }
    }
    for v in program.vars.iter().filter(|v| v.private) {
        vars.insert(
            v.name.clone(),
            Var {
                base: 0,
                kind: VarKind::Scalar,
                private: true,
            },
        );
    }
    let mut lw = Lowerer {
        vars,
        symbols,
        private_next: next,
        private_slots: BTreeMap::new(),
    };
    let ctx = Ctx {
        rank: 0,
        team_size: 1,
        in_team: false,
        partial: false,
        locks: Vec::new(),
        path: Vec::new(),
        env: BTreeMap::new(),
    };
    let mut out = Vec::new();
    let mut bids = 0;
    lw.block(&program.body, &ctx, &mut bids, &mut out)?;
    Ok(Lowered {
        root: out.into(),
        symbols: lw.symbols,
    })
}

impl Lowerer {
    fn block(&mut self, nodes: &[Node], ctx: &Ctx, bids: &mut u64, out: &mut Vec<Op>) -> Result<(), LowerError> {
        for n in nodes {
            self.node(n, ctx, bids, out)?;
        }
        Ok(())
    }

    fn node(&mut self, node: &Node, ctx: &Ctx, bids: &mut u64, out: &mut Vec<Op>) -> Result<(), LowerError> {
        let pos = node.pos;
        match &node.stmt {
            Stmt::Parallel { team_size, body } => {
                if !ctx.locks.is_empty() {
                    return lerr(pos, "parallel region inside a critical section");
                }
                let mut members = Vec::with_capacity(*team_size as usize);
                for rank in 0..*team_size {
                    let mut path = ctx.path.clone();
                    path.push(rank);
                    let member = Ctx {
                        rank,
                        team_size: *team_size,
                        in_team: true,
                        partial: false,
                        locks: Vec::new(),
                        path,
                        env: ctx.env.clone(),
                    };
                    let mut ops = vec![Op::TaskBegin];
                    let mut member_bids = 0;
                    self.block(body, &member, &mut member_bids, &mut ops)?;
                    ops.push(Op::Barrier(member_bids + 1));
                    ops.push(Op::TaskEnd);
                    members.push(Arc::from(ops));
                }
                out.push(Op::Parallel {
                    team_size: *team_size,
                    members,
                });
            }
            Stmt::Master(body) => self.partial(0, body, ctx, bids, out)?,
            Stmt::OnRank(r, body) => {
                if *r >= ctx.team_size {
                    return lerr(pos, format!("rank {r} is outside a team of {}", ctx.team_size));
                }
                self.partial(*r, body, ctx, bids, out)?
            }
            Stmt::Critical(name, body) => {
                let m = name.as_deref().map(MutexName::from).unwrap_or(MutexName::Anonymous);
                if ctx.locks.contains(&m) {
                    return lerr(pos, format!("critical section {m} nested in itself"));
                }
                let mut inner = ctx.clone();
                inner.locks.push(m.clone());
                out.push(Op::Acquire(m.clone()));
                self.block(body, &inner, bids, out)?;
                out.push(Op::Release(m));
            }
            Stmt::Barrier(id) => {
                self.team_sync(pos, ctx, "barrier")?;
                *bids += 1;
                out.push(Op::Barrier(id.unwrap_or(*bids)));
            }
            Stmt::Read(r) => out.push(Op::Access {
                addr: self.resolve(pos, r, ctx)?,
                mat: Mat::R,
            }),
            Stmt::Write(r) => out.push(Op::Access {
                addr: self.resolve(pos, r, ctx)?,
                mat: Mat::W,
            }),
            Stmt::For(lp) | Stmt::ForNowait(lp) => {
                let nowait = matches!(node.stmt, Stmt::ForNowait(_));
                self.team_sync(pos, ctx, "worksharing loop")?;
                let n = (lp.hi - lp.lo).max(0);
                let p = i64::from(ctx.team_size);
                let chunk = (n + p - 1) / p;
                let lo = lp.lo + chunk * i64::from(ctx.rank);
                let hi = (lo + chunk).min(lp.hi);
                self.iterate(lp, lo, hi, ctx, bids, out)?;
                if !nowait {
                    *bids += 1;
                    out.push(Op::Barrier(*bids));
                }
            }
            Stmt::SeqLoop(lp) => self.iterate(lp, lp.lo, lp.hi, ctx, bids, out)?,
            Stmt::Seq(body) => self.block(body, ctx, bids, out)?,
        }
        Ok(())
    }

    fn team_sync(&self, pos: Pos, ctx: &Ctx, what: &str) -> Result<(), LowerError> {
        if !ctx.in_team {
            return lerr(pos, format!("{what} outside a parallel region"));
        }
        if ctx.partial {
            return lerr(pos, format!("{what} inside master/on-rank would not be reached by the whole team"));
        }
        if !ctx.locks.is_empty() {
            return lerr(pos, format!("{what} inside a critical section"));
        }
        Ok(())
    }

    fn partial(&mut self, rank: u32, body: &[Node], ctx: &Ctx, bids: &mut u64, out: &mut Vec<Op>) -> Result<(), LowerError> {
        let mut inner = ctx.clone();
        inner.partial = true;
        // Always lowered so that errors do not depend on the rank.
        let mut ops = Vec::new();
        self.block(body, &inner, bids, &mut ops)?;
        if ctx.rank == rank {
            out.extend(ops);
        }
        Ok(())
    }

    fn iterate(&mut self, lp: &Loop, lo: i64, hi: i64, ctx: &Ctx, bids: &mut u64, out: &mut Vec<Op>) -> Result<(), LowerError> {
        let mut inner = ctx.clone();
        for i in lo..hi {
            inner.env.insert(lp.var.clone(), i);
            self.block(&lp.body, &inner, bids, out)?;
        }
        Ok(())
    }

    fn resolve(&mut self, pos: Pos, r: &Ref, ctx: &Ctx) -> Result<Addr, LowerError> {
        let name = match r {
            Ref::Var(n) | Ref::Elem(n, _) => n,
        };
        let Some(var) = self.vars.get(name) else {
            return lerr(pos, format!("undeclared variable {name}"));
        };
        match (r, &var.kind) {
            (Ref::Var(_), VarKind::Scalar) if var.private => {
                let key = (name.clone(), ctx.path.clone());
                if let Some(a) = self.private_slots.get(&key) {
                    return Ok(*a);
                }
                let a = self.private_next;
                self.private_next += WORD;
                let path: Vec<String> = ctx.path.iter().map(u32::to_string).collect();
                self.symbols.names.insert(a, format!("{name}@{}", path.join(".")));
                self.private_slots.insert(key, a);
                Ok(a)
            }
            (Ref::Var(_), VarKind::Scalar) => Ok(var.base),
            (Ref::Elem(_, idx), VarKind::Array(n)) => {
                let i = eval(pos, idx, &ctx.env)?;
                if i < 0 || i as u64 >= *n {
                    return lerr(pos, format!("index {i} out of bounds for {name}[{n}]"));
                }
                Ok(var.base + i as u64 * WORD)
            }
            (Ref::Var(_), VarKind::Array(_)) => lerr(pos, format!("{name} is an array; index it")),
            (Ref::Elem(..), VarKind::Scalar) => lerr(pos, format!("{name} is not an array")),
        }
    }
}

fn eval(pos: Pos, idx: &Index, env: &BTreeMap<String, i64>) -> Result<i64, LowerError> {
    Ok(match idx {
        Index::Const(c) => *c,
        Index::Var(v) => match env.get(v) {
            Some(x) => *x,
            None => return lerr(pos, format!("unknown loop variable {v}")),
        },
        Index::Add(a, b) => eval(pos, a, env)? + eval(pos, b, env)?,
        Index::Sub(a, b) => eval(pos, a, env)? - eval(pos, b, env)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lw(src: &str) -> Result<Lowered, LowerError> {
        lower(&Program::parse(src).unwrap())
    }

    fn members(l: &Lowered) -> Vec<Arc<[Op]>> {
        match &l.root[0] {
            Op::Parallel { members, .. } => members.clone(),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn master_and_critical() {
        let l = lw("(vars a)(parallel 2 (master (write a)) (critical (read a) (write a)))").unwrap();
        let a = l.symbols.addr("a").unwrap();
        assert_eq!(a, BASE_ADDR);
        let m = members(&l);
        let crit = [
            Op::Acquire(MutexName::Anonymous),
            Op::Access { addr: a, mat: Mat::R },
            Op::Access { addr: a, mat: Mat::W },
            Op::Release(MutexName::Anonymous),
            Op::Barrier(1),
            Op::TaskEnd,
        ];
        let mut t0 = vec![Op::TaskBegin, Op::Access { addr: a, mat: Mat::W }];
        t0.extend(crit.iter().cloned());
        let mut t1 = vec![Op::TaskBegin];
        t1.extend(crit.iter().cloned());
        assert_eq!(&*m[0], &t0[..]);
        assert_eq!(&*m[1], &t1[..]);
    }

    #[test]
    fn static_chunks() {
        let l = lw("(array a 5)(parallel 2 (for i 0 5 (write (a i))))").unwrap();
        let m = members(&l);
        let addrs = |ops: &[Op]| -> Vec<String> {
            ops.iter()
                .filter_map(|o| match o {
                    Op::Access { addr, .. } => Some(l.symbols.display(*addr)),
                    _ => None,
                })
                .collect()
        };
        assert_eq!(addrs(&m[0]), ["a[0]", "a[1]", "a[2]"]);
        assert_eq!(addrs(&m[1]), ["a[3]", "a[4]"]);
        assert_eq!(m[1][m[1].len() - 3], Op::Barrier(1));
        assert_eq!(m[1][m[1].len() - 2], Op::Barrier(2));
    }

    #[test]
    fn private_addresses_differ_per_thread() {
        let l = lw("(private t)(parallel 2 (write t))").unwrap();
        let m = members(&l);
        assert_ne!(m[0][1], m[1][1]);
        assert_eq!(l.symbols.name(BASE_ADDR), Some("t@0"));
    }

    #[test]
    fn nesting_errors() {
        assert!(lw("(barrier)").is_err());
        assert!(lw("(parallel 2 (master (barrier)))").is_err());
        assert!(lw("(parallel 2 (critical (barrier)))").is_err());
        assert!(lw("(parallel 2 (critical (parallel 2)))").is_err());
        assert!(lw("(parallel 2 (critical (critical)))").is_err());
        assert!(lw("(parallel 2 (on-rank 2))").is_err());
        assert!(lw("(array a 2)(parallel 2 (write (a 2)))").is_err());
        assert!(lw("(vars x)(parallel 2 (write (x 0)))").is_err());
        assert!(lw("(parallel 2 (write q))").is_err());
        let e = lw("(vars x)\n(parallel 2\n  (master (barrier)))").unwrap_err();
        assert_eq!(e.pos, Pos { line: 3, col: 11 });
        // Nested parallel inside on-rank is fine.
        assert!(lw("(parallel 2 (on-rank 1 (parallel 2 (barrier))))").is_ok());
    }
}
