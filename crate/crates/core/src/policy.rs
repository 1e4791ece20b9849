//! Endorsement policies: a monotone boolean tree over principals.
//!
//! Text syntax, whitespace-insensitive:
//!
//! ```text
//! expr := AND(expr, ...) | OR(expr, ...) | <n>-OutOf(expr, ...) | 'Org.role'
//! ```

use alloc::collections::BTreeSet;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;

use crate::identity::{Principal, Role};

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum PolicyExpr {
    Signed(Principal),
    And(Vec<PolicyExpr>),
    Or(Vec<PolicyExpr>),
    NOutOf(usize, Vec<PolicyExpr>),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParseError {
    /// Byte offset into the input.
    pub position: usize,
    pub message: String,
}

impl fmt::Display for ParseError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "policy parse error at {}: {}", self.position, self.message)
    }
}

#[cfg(feature = "std")]
impl std::error::Error for ParseError {}

pub type PrincipalSet = BTreeSet<Principal>;

impl PolicyExpr {
    pub fn signed(org: &str) -> Self {
        PolicyExpr::Signed(Principal::member(org))
    }

    pub fn evaluate(&self, endorsers: &PrincipalSet) -> bool {
        match self {
            PolicyExpr::Signed(p) => endorsers.contains(p),
            PolicyExpr::And(cs) => cs.iter().all(|c| c.evaluate(endorsers)),
            PolicyExpr::Or(cs) => cs.iter().any(|c| c.evaluate(endorsers)),
            PolicyExpr::NOutOf(n, cs) => cs.iter().filter(|c| c.evaluate(endorsers)).count() >= *n,
        }
    }

    /// Distinct leaf principals, sorted.
    pub fn principals(&self) -> Vec<Principal> {
        fn walk(e: &PolicyExpr, out: &mut PrincipalSet) {
            match e {
                PolicyExpr::Signed(p) => {
                    out.insert(p.clone());
                }
                PolicyExpr::And(cs) | PolicyExpr::Or(cs) | PolicyExpr::NOutOf(_, cs) => {
                    cs.iter().for_each(|c| walk(c, out));
                }
            }
        }
        let mut set = PrincipalSet::new();
        walk(self, &mut set);
        set.into_iter().collect()
    }

    /// All minimal subsets of `universe` satisfying the policy, sorted by
    /// size and then lexicographically.
    pub fn min_satisfying_sets(&self, universe: &[Principal]) -> Vec<PrincipalSet> {
        let universe: PrincipalSet = universe.iter().cloned().collect();
        let mut sets = self.satisfying(&universe);
        minimize(&mut sets);
        sets
    }

    fn satisfying(&self, universe: &PrincipalSet) -> Vec<PrincipalSet> {
        match self {
            PolicyExpr::Signed(p) => {
                if universe.contains(p) {
                    alloc::vec![core::iter::once(p.clone()).collect()]
                } else {
                    Vec::new()
                }
            }
            PolicyExpr::Or(cs) => {
                let mut out: Vec<PrincipalSet> = cs.iter().flat_map(|c| c.satisfying(universe)).collect();
                minimize(&mut out);
                out
            }
            PolicyExpr::And(cs) => {
                let parts: Vec<_> = cs.iter().map(|c| c.satisfying(universe)).collect();
                cross(&parts)
            }
            PolicyExpr::NOutOf(n, cs) => {
                let parts: Vec<_> = cs.iter().map(|c| c.satisfying(universe)).collect();
                let mut out = Vec::new();
                for combo in combinations(parts.len(), *n) {
                    let chosen: Vec<_> = combo.iter().map(|&i| parts[i].clone()).collect();
                    out.extend(cross(&chosen));
                }
                minimize(&mut out);
                out
            }
        }
    }

    fn check(&self) -> Result<(), &'static str> {
        match self {
            PolicyExpr::Signed(_) => Ok(()),
            PolicyExpr::And(cs) | PolicyExpr::Or(cs) if cs.is_empty() => Err("empty operand list"),
            PolicyExpr::NOutOf(n, cs) if *n == 0 || *n > cs.len() => Err("n must be between 1 and the operand count"),
            PolicyExpr::And(cs) | PolicyExpr::Or(cs) | PolicyExpr::NOutOf(_, cs) => {
                cs.iter().try_for_each(|c| c.check())
            }
        }
    }
}

fn cross(parts: &[Vec<PrincipalSet>]) -> Vec<PrincipalSet> {
    let mut acc: Vec<PrincipalSet> = alloc::vec![PrincipalSet::new()];
    for options in parts {
        let mut next = Vec::with_capacity(acc.len() * options.len());
        for base in &acc {
            for opt in options {
                next.push(base.union(opt).cloned().collect());
            }
        }
        minimize(&mut next);
        acc = next;
    }
    acc
}

fn combinations(n: usize, k: usize) -> Vec<Vec<usize>> {
    fn go(start: usize, n: usize, k: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == k {
            out.push(cur.clone());
            return;
        }
        for i in start..n {
            if n - i < k - cur.len() {
                break;
            }
            cur.push(i);
            go(i + 1, n, k, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    go(0, n, k, &mut Vec::new(), &mut out);
    out
}

/// Dedups, drops supersets of other members, and sorts.
fn minimize(sets: &mut Vec<PrincipalSet>) {
    sets.sort_by(|a, b| a.len().cmp(&b.len()).then_with(|| a.cmp(b)));
    sets.dedup();
    let mut kept: Vec<PrincipalSet> = Vec::with_capacity(sets.len());
    for s in sets.drain(..) {
        if !kept.iter().any(|k| k.is_subset(&s)) {
            kept.push(s);
        }
    }
    *sets = kept;
}

impl fmt::Display for PolicyExpr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let list = |f: &mut fmt::Formatter<'_>, cs: &[PolicyExpr]| -> fmt::Result {
            for (i, c) in cs.iter().enumerate() {
                if i > 0 {
                    f.write_str(",")?;
                }
                write!(f, "{c}")?;
            }
            f.write_str(")")
        };
        match self {
            PolicyExpr::Signed(p) => write!(f, "'{p}'"),
            PolicyExpr::And(cs) => {
                f.write_str("AND(")?;
                list(f, cs)
            }
            PolicyExpr::Or(cs) => {
                f.write_str("OR(")?;
                list(f, cs)
            }
            PolicyExpr::NOutOf(n, cs) => {
                write!(f, "{n}-OutOf(")?;
                list(f, cs)
            }
        }
    }
}

impl core::str::FromStr for PolicyExpr {
    type Err = ParseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        parse_policy(s)
    }
}

pub fn parse_policy(text: &str) -> Result<PolicyExpr, ParseError> {
    let mut p = Parser { src: text, pos: 0 };
    let start = p.skip_ws();
    let expr = p.expr()?;
    p.skip_ws();
    if p.pos != text.len() {
        return Err(p.error("unexpected trailing input"));
    }
    expr.check().map_err(|m| ParseError { position: start, message: m.to_string() })?;
    Ok(expr)
}

struct Parser<'a> {
    src: &'a str,
    pos: usize,
}

impl<'a> Parser<'a> {
    fn rest(&self) -> &'a str {
        &self.src[self.pos..]
    }

    fn skip_ws(&mut self) -> usize {
        let trimmed = self.rest().trim_start();
        self.pos = self.src.len() - trimmed.len();
        self.pos
    }

    fn error(&self, message: &str) -> ParseError {
        ParseError { position: self.pos, message: message.to_string() }
    }

    fn eat(&mut self, c: char) -> Result<(), ParseError> {
        self.skip_ws();
        if self.rest().starts_with(c) {
            self.pos += c.len_utf8();
            Ok(())
        } else {
            Err(self.error(&alloc::format!("expected '{c}'")))
        }
    }

    fn keyword(&mut self, kw: &str) -> bool {
        let r = self.rest();
        if r.len() >= kw.len() && r[..kw.len()].eq_ignore_ascii_case(kw) {
            let after = r[kw.len()..].trim_start();
            if after.starts_with('(') {
                self.pos += kw.len();
                return true;
            }
        }
        false
    }

    fn expr(&mut self) -> Result<PolicyExpr, ParseError> {
        self.skip_ws();
        let r = self.rest();
        if r.starts_with('\'') {
            return self.principal().map(PolicyExpr::Signed);
        }
        if self.keyword("AND") {
            return Ok(PolicyExpr::And(self.list()?));
        }
        if self.keyword("OR") {
            return Ok(PolicyExpr::Or(self.list()?));
        }
        let digits = r.bytes().take_while(u8::is_ascii_digit).count();
        if digits > 0 {
            let start = self.pos;
            let n: usize = r[..digits].parse().map_err(|_| self.error("count out of range"))?;
            self.pos += digits;
            self.skip_ws();
            self.eat('-')?;
            self.skip_ws();
            if !self.keyword("OutOf") {
                return Err(self.error("expected OutOf"));
            }
            let children = self.list()?;
            if n == 0 || n > children.len() {
                return Err(ParseError {
                    position: start,
                    message: alloc::format!("{n}-OutOf over {} operands", children.len()),
                });
            }
            return Ok(PolicyExpr::NOutOf(n, children));
        }
        Err(self.error("expected AND, OR, <n>-OutOf or a quoted principal"))
    }

    fn list(&mut self) -> Result<Vec<PolicyExpr>, ParseError> {
        self.eat('(')?;
        let mut out = Vec::new();
        loop {
            out.push(self.expr()?);
            self.skip_ws();
            if self.rest().starts_with(',') {
                self.pos += 1;
                continue;
            }
            self.eat(')')?;
            return Ok(out);
        }
    }

    fn principal(&mut self) -> Result<Principal, ParseError> {
        let start = self.pos;
        self.pos += 1;
        let Some(end) = self.rest().find('\'') else {
            return Err(ParseError { position: start, message: "unterminated principal".to_string() });
        };
        let body = &self.rest()[..end];
        self.pos += end + 1;
        let bad = |m: &str| ParseError { position: start, message: m.to_string() };
        let (org, role) = body.rsplit_once('.').ok_or_else(|| bad("principal must be 'Org.role'"))?;
        let org = org.trim();
        if org.is_empty() {
            return Err(bad("empty organization"));
        }
        let role = Role::parse(role.trim()).ok_or_else(|| bad("role must be member or admin"))?;
        Ok(Principal::new(org, role))
    }
}
