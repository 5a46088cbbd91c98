//! Reading and writing `.sfmdp` domain files.
//!
//! The format is a sequence of s-expressions:
//!
//! ```text
//! (variables (HUC 0 1) (L office cafe) ...)
//! (discount 0.8)
//! (terminal PRED)            PRED := (VAR value) | (and PRED...) | (or PRED...) | (not PRED) | (true)
//! (start PRED)
//! (action NAME (VAR TREE) ...)   one CPD tree per declared variable
//! (reward TREE)
//! ```
//!
//! `TREE` is a number (reward leaf), `(dist p1 ... pk)` (CPD leaf over the
//! variable's domain) or `(VAR (value TREE) ... [(* TREE)])`. A multiway node
//! becomes a chain of binary tests, one per listed value; `*` catches the rest.
//! Without `*` every value must be listed and the last one is the fallthrough.
//! Comments run from `;` or `#` to the end of the line.

use std::fmt::Write;

use fmdpu_core::fmdp::{Fmdp, Predicate};
use fmdpu_core::model::{ActionDecl, ActionId, VarId, VarTable};
use fmdpu_core::tree::{Categorical, Tree};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum DomainError {
    #[error("{line}:{col}: syntax error: {msg}")]
    Syntax { line: usize, col: usize, msg: String },
    #[error("{line}:{col}: {msg}: `{symbol}`")]
    Semantic { line: usize, col: usize, symbol: String, msg: String },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
struct Pos {
    line: usize,
    col: usize,
}

#[derive(Clone, Debug)]
enum Sx {
    Atom(String, Pos),
    List(Vec<Sx>, Pos),
}

impl Sx {
    fn pos(&self) -> Pos {
        match self {
            Sx::Atom(_, p) | Sx::List(_, p) => *p,
        }
    }

    fn text(&self) -> String {
        match self {
            Sx::Atom(s, _) => s.clone(),
            Sx::List(items, _) => {
                let inner: Vec<String> = items.iter().map(|i| i.text()).collect();
                format!("({})", inner.join(" "))
            }
        }
    }
}

fn syntax(p: Pos, msg: impl Into<String>) -> DomainError {
    DomainError::Syntax { line: p.line, col: p.col, msg: msg.into() }
}

fn semantic(p: Pos, symbol: impl Into<String>, msg: impl Into<String>) -> DomainError {
    DomainError::Semantic { line: p.line, col: p.col, symbol: symbol.into(), msg: msg.into() }
}

fn read_sexprs(text: &str) -> Result<Vec<Sx>, DomainError> {
    let mut stack: Vec<(Vec<Sx>, Pos)> = Vec::new();
    let mut top = Vec::new();
    let mut chars = text.chars().peekable();
    let (mut line, mut col) = (1usize, 1usize);
    while let Some(&c) = chars.peek() {
        let here = Pos { line, col };
        match c {
            '\n' => {
                chars.next();
                line += 1;
                col = 1;
            }
            c if c.is_whitespace() => {
                chars.next();
                col += 1;
            }
            ';' | '#' => {
                while let Some(&c) = chars.peek() {
                    if c == '\n' {
                        break;
                    }
                    chars.next();
                }
            }
            '(' => {
                chars.next();
                col += 1;
                stack.push((Vec::new(), here));
            }
            ')' => {
                chars.next();
                col += 1;
                let (items, p) = stack.pop().ok_or_else(|| syntax(here, "unbalanced `)`"))?;
                let list = Sx::List(items, p);
                match stack.last_mut() {
                    Some((parent, _)) => parent.push(list),
                    None => top.push(list),
                }
            }
            _ => {
                let mut atom = String::new();
                while let Some(&c) = chars.peek() {
                    if c.is_whitespace() || c == '(' || c == ')' || c == ';' || c == '#' {
                        break;
                    }
                    atom.push(c);
                    chars.next();
                    col += 1;
                }
                let a = Sx::Atom(atom, here);
                match stack.last_mut() {
                    Some((parent, _)) => parent.push(a),
                    None => return Err(syntax(here, "atom outside of a list")),
                }
            }
        }
    }
    if let Some((_, p)) = stack.pop() {
        return Err(syntax(p, "unclosed `(`"));
    }
    Ok(top)
}

const RESERVED: &[&str] = &["dist", "and", "or", "not", "true", "*"];

fn atom(sx: &Sx) -> Result<&str, DomainError> {
    match sx {
        Sx::Atom(s, _) => Ok(s),
        Sx::List(_, p) => Err(syntax(*p, "expected a symbol")),
    }
}

fn list(sx: &Sx) -> Result<&[Sx], DomainError> {
    match sx {
        Sx::List(items, _) => Ok(items),
        Sx::Atom(s, p) => Err(syntax(*p, format!("expected a list, found `{s}`"))),
    }
}

fn number(sx: &Sx) -> Result<f64, DomainError> {
    let s = atom(sx)?;
    s.parse::<f64>().map_err(|_| syntax(sx.pos(), format!("expected a number, found `{s}`")))
}

struct Ctx<'a> {
    vars: &'a VarTable,
}

impl Ctx<'_> {
    fn var(&self, sx: &Sx) -> Result<VarId, DomainError> {
        let name = atom(sx)?;
        self.vars.by_name(name).ok_or_else(|| semantic(sx.pos(), name, "undeclared variable"))
    }

    fn value(&self, v: VarId, sx: &Sx) -> Result<u8, DomainError> {
        let name = atom(sx)?;
        let d = self.vars.decl(v);
        d.domain
            .iter()
            .position(|x| x == name)
            .map(|i| i as u8)
            .ok_or_else(|| semantic(sx.pos(), name, format!("not a value of {}", d.name)))
    }

    fn predicate(&self, sx: &Sx) -> Result<Predicate, DomainError> {
        let items = list(sx)?;
        let head = items.first().ok_or_else(|| syntax(sx.pos(), "empty predicate"))?;
        let args = &items[1..];
        Ok(match atom(head)? {
            "true" => Predicate::True,
            "and" => Predicate::And(args.iter().map(|a| self.predicate(a)).collect::<Result<_, _>>()?),
            "or" => Predicate::Or(args.iter().map(|a| self.predicate(a)).collect::<Result<_, _>>()?),
            "not" => {
                if args.len() != 1 {
                    return Err(syntax(sx.pos(), "`not` takes one predicate"));
                }
                Predicate::Not(Box::new(self.predicate(&args[0])?))
            }
            _ => {
                if args.len() != 1 {
                    return Err(syntax(sx.pos(), "expected (VARIABLE value)"));
                }
                let v = self.var(head)?;
                Predicate::Atom(v, self.value(v, &args[0])?)
            }
        })
    }

    /// Parses a tree whose leaves are produced by `leaf`.
    fn tree<L>(&self, sx: &Sx, leaf: &impl Fn(&Sx) -> Result<L, DomainError>) -> Result<Tree<L>, DomainError> {
        let items = match sx {
            Sx::Atom(..) => return Ok(Tree::Leaf(leaf(sx)?)),
            Sx::List(items, _) => items,
        };
        let head = items.first().ok_or_else(|| syntax(sx.pos(), "empty tree"))?;
        if atom(head)? == "dist" {
            return Ok(Tree::Leaf(leaf(sx)?));
        }
        let v = self.var(head)?;
        let card = self.vars.card(v);
        let mut branches: Vec<(u8, Tree<L>)> = Vec::new();
        let mut default: Option<Tree<L>> = None;
        for b in &items[1..] {
            let pair = list(b)?;
            if pair.len() != 2 {
                return Err(syntax(b.pos(), "expected (value tree)"));
            }
            if default.is_some() {
                return Err(syntax(b.pos(), "branch after `*`"));
            }
            if atom(&pair[0])? == "*" {
                default = Some(self.tree(&pair[1], leaf)?);
                continue;
            }
            let x = self.value(v, &pair[0])?;
            if branches.iter().any(|(y, _)| *y == x) {
                return Err(semantic(pair[0].pos(), atom(&pair[0])?, "duplicate branch"));
            }
            branches.push((x, self.tree(&pair[1], leaf)?));
        }
        let mut fallthrough = match default {
            Some(d) => {
                if branches.len() >= card {
                    return Err(semantic(head.pos(), atom(head)?, "`*` branch is unreachable"));
                }
                d
            }
            None => {
                if branches.len() != card {
                    return Err(semantic(head.pos(), atom(head)?, "branches must cover every value or end with `*`"));
                }
                branches.pop().unwrap().1
            }
        };
        if branches.is_empty() {
            return Err(semantic(head.pos(), atom(head)?, "test without branches"));
        }
        while let Some((x, t)) = branches.pop() {
            fallthrough = Tree::test(v, x, t, fallthrough);
        }
        Ok(fallthrough)
    }
}

fn dist_leaf(card: usize, owner: &str) -> impl Fn(&Sx) -> Result<Categorical, DomainError> + '_ {
    move |sx: &Sx| {
        let items = match sx {
            Sx::List(items, _) if items.first().map(|h| h.text()) == Some("dist".into()) => items,
            _ => return Err(semantic(sx.pos(), sx.text(), format!("expected a distribution in the CPD of {owner}"))),
        };
        let p: Vec<f64> = items[1..].iter().map(number).collect::<Result<_, _>>()?;
        if p.len() != card {
            return Err(semantic(sx.pos(), sx.text(), format!("distribution for {owner} needs {card} entries")));
        }
        if p.iter().any(|&x| !(0.0..=1.0).contains(&x)) || (p.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(semantic(sx.pos(), sx.text(), format!("distribution for {owner} does not sum to 1")));
        }
        Ok(Categorical(p))
    }
}

fn reward_leaf(sx: &Sx) -> Result<f64, DomainError> {
    let x = number(sx)?;
    if !x.is_finite() {
        return Err(semantic(sx.pos(), sx.text(), "reward must be finite"));
    }
    Ok(x)
}

const INCONSISTENT: &str = "a test repeats a decided variable or no value can reach a branch";

/// Parses and validates a domain.
pub fn parse_domain(text: &str) -> Result<Fmdp, DomainError> {
    let forms = read_sexprs(text)?;
    let origin = Pos { line: 1, col: 1 };
    let section = |name: &str| -> Vec<&Sx> {
        forms
            .iter()
            .filter(|f| matches!(f, Sx::List(items, _) if items.first().map(|h| h.text()).as_deref() == Some(name)))
            .collect()
    };
    for f in &forms {
        let items = list(f)?;
        let head = items.first().ok_or_else(|| syntax(f.pos(), "empty form"))?;
        let h = atom(head)?;
        if !["variables", "discount", "terminal", "start", "action", "reward"].contains(&h) {
            return Err(semantic(head.pos(), h, "unknown section"));
        }
    }
    let single = |name: &str| -> Result<&Sx, DomainError> {
        let s = section(name);
        match s.len() {
            1 => Ok(s[0]),
            0 => Err(semantic(origin, name, "missing section")),
            _ => Err(semantic(s[1].pos(), name, "repeated section")),
        }
    };

    let mut decls: Vec<(String, Vec<String>)> = Vec::new();
    for v in &list(single("variables")?)?[1..] {
        let items = list(v)?;
        let name = atom(items.first().ok_or_else(|| syntax(v.pos(), "empty variable declaration"))?)?;
        if RESERVED.contains(&name) || name.parse::<f64>().is_ok() {
            return Err(semantic(v.pos(), name, "reserved or numeric variable name"));
        }
        if decls.iter().any(|(n, _)| n == name) {
            return Err(semantic(v.pos(), name, "duplicate variable"));
        }
        let domain: Vec<String> = items[1..].iter().map(|x| atom(x).map(str::to_owned)).collect::<Result<_, _>>()?;
        if domain.len() < 2 || domain.len() > 16 {
            return Err(semantic(v.pos(), name, "a domain needs between 2 and 16 values"));
        }
        for (i, d) in domain.iter().enumerate() {
            if domain[..i].contains(d) || d == "*" {
                return Err(semantic(v.pos(), d.as_str(), "duplicate or reserved value"));
            }
        }
        decls.push((name.to_owned(), domain));
    }
    if decls.is_empty() || decls.len() > fmdpu_core::model::MAX_IDS {
        return Err(semantic(origin, "variables", "between 1 and 64 variables are required"));
    }
    let vars = VarTable::new(decls);
    let ctx = Ctx { vars: &vars };

    let d = list(single("discount")?)?;
    if d.len() != 2 {
        return Err(syntax(d[0].pos(), "expected (discount value)"));
    }
    let discount = number(&d[1])?;
    if !(discount > 0.0 && discount < 1.0) {
        return Err(semantic(d[1].pos(), d[1].text(), "discount must lie in (0, 1)"));
    }

    let pred = |name: &str| -> Result<Predicate, DomainError> {
        let items = list(single(name)?)?;
        if items.len() != 2 {
            return Err(syntax(items[0].pos(), format!("expected ({name} predicate)")));
        }
        ctx.predicate(&items[1])
    };
    let terminal = pred("terminal")?;
    let start = pred("start")?;

    let r = list(single("reward")?)?;
    if r.len() != 2 {
        return Err(syntax(r[0].pos(), "expected (reward tree)"));
    }
    let reward = ctx.tree(&r[1], &reward_leaf)?;
    let cards = vars.cards();
    if !reward.is_path_consistent(&cards) {
        return Err(semantic(r[1].pos(), "reward", INCONSISTENT));
    }

    let mut actions = Vec::new();
    let mut cpds = Vec::new();
    for (k, a) in section("action").into_iter().enumerate() {
        let items = list(a)?;
        let name_sx = items.get(1).ok_or_else(|| syntax(a.pos(), "action without a name"))?;
        let name = atom(name_sx)?;
        if actions.iter().any(|d: &ActionDecl| d.name == name) {
            return Err(semantic(name_sx.pos(), name, "duplicate action"));
        }
        if k >= fmdpu_core::model::MAX_IDS {
            return Err(semantic(name_sx.pos(), name, "too many actions"));
        }
        let mut row: Vec<Option<Tree<Categorical>>> = vec![None; vars.len()];
        for c in &items[2..] {
            let pair = list(c)?;
            if pair.len() != 2 {
                return Err(syntax(c.pos(), "expected (VARIABLE tree)"));
            }
            let x = ctx.var(&pair[0])?;
            if row[x.index()].is_some() {
                return Err(semantic(pair[0].pos(), atom(&pair[0])?, "duplicate CPD"));
            }
            let owner = format!("{}/{}", name, vars.decl(x).name);
            let t = ctx.tree(&pair[1], &dist_leaf(vars.card(x), &owner))?;
            if !t.is_path_consistent(&cards) {
                return Err(semantic(pair[1].pos(), owner, INCONSISTENT));
            }
            row[x.index()] = Some(t);
        }
        let mut full = Vec::with_capacity(vars.len());
        for (i, t) in row.into_iter().enumerate() {
            match t {
                Some(t) => full.push(t),
                None => {
                    return Err(semantic(
                        name_sx.pos(),
                        format!("{}/{}", name, vars.decls()[i].name),
                        "missing CPD",
                    ))
                }
            }
        }
        actions.push(ActionDecl { id: ActionId(k as u8), name: name.to_owned() });
        cpds.push(full);
    }
    if actions.is_empty() {
        return Err(semantic(origin, "action", "at least one action is required"));
    }

    let m = Fmdp { vars, actions, cpds, reward, terminal, start, discount };
    m.validate().map_err(|e| semantic(origin, "domain", e.to_string()))?;
    if m.start_states().is_empty() {
        return Err(semantic(origin, "start", "no state satisfies the start predicate"));
    }
    Ok(m)
}

fn write_tree<L>(t: &Tree<L>, vars: &VarTable, leaf: &impl Fn(&L) -> String, out: &mut String) {
    match t {
        Tree::Leaf(l) => out.push_str(&leaf(l)),
        Tree::Test(n) => {
            let d = vars.decl(n.var);
            let _ = write!(out, "({} ({} ", d.name, d.domain[n.value as usize]);
            write_tree(&n.pass, vars, leaf, out);
            out.push_str(") (* ");
            write_tree(&n.fail, vars, leaf, out);
            out.push_str("))");
        }
    }
}

fn write_predicate(p: &Predicate, vars: &VarTable, out: &mut String) {
    let many = |head: &str, ps: &[Predicate], out: &mut String| {
        let _ = write!(out, "({head}");
        for q in ps {
            out.push(' ');
            write_predicate(q, vars, out);
        }
        out.push(')');
    };
    match p {
        Predicate::True => out.push_str("(true)"),
        Predicate::Atom(v, x) => {
            let d = vars.decl(*v);
            let _ = write!(out, "({} {})", d.name, d.domain[*x as usize]);
        }
        Predicate::And(ps) => many("and", ps, out),
        Predicate::Or(ps) => many("or", ps, out),
        Predicate::Not(q) => {
            out.push_str("(not ");
            write_predicate(q, vars, out);
            out.push(')');
        }
    }
}

/// Serializes a domain; binary tests are written as `(VAR (value T) (* F))`.
pub fn write_domain(m: &Fmdp) -> String {
    let mut out = String::from("(variables");
    for d in m.vars.decls() {
        let _ = write!(out, "\n  ({} {})", d.name, d.domain.join(" "));
    }
    let _ = write!(out, ")\n\n(discount {})\n(terminal ", m.discount);
    write_predicate(&m.terminal, &m.vars, &mut out);
    out.push_str(")\n(start ");
    write_predicate(&m.start, &m.vars, &mut out);
    out.push_str(")\n");
    let dist = |c: &Categorical| {
        let ps: Vec<String> = c.0.iter().map(|p| p.to_string()).collect();
        format!("(dist {})", ps.join(" "))
    };
    for (a, row) in m.actions.iter().zip(&m.cpds) {
        let _ = write!(out, "\n(action {}", a.name);
        for (d, t) in m.vars.decls().iter().zip(row) {
            let _ = write!(out, "\n  ({} ", d.name);
            write_tree(t, &m.vars, &dist, &mut out);
            out.push(')');
        }
        out.push_str(")\n");
    }
    out.push_str("\n(reward ");
    write_tree(&m.reward, &m.vars, &|r: &f64| r.to_string(), &mut out);
    out.push_str(")\n");
    out
}
