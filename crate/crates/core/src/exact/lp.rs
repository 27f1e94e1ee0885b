//! The placement integer program as an LP-format document.
//!
//! Node indexes follow [`crate::model::ilp`]: participants `0..U`, then VM
//! slots (mixers first, then compressors). Per-VM variables use the slot
//! index. Products of placement and adjacency are linearised with continuous
//! auxiliaries: `j_a_b_s_t = d(a,b) x(s,a) x(t,b)`, `q_u_v_s = d(u,v) x(s,v)`
//! and `r_v_u_s = d(v,u) x(s,v)`.

use std::collections::BTreeMap;
use std::fmt;

use thiserror::Error;

use crate::model::ilp::{mixer_slots, node_count, vm_slots};
use crate::model::{CostMode, Instance};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LpSense {
    Le,
    Ge,
    Eq,
}

impl LpSense {
    fn symbol(self) -> &'static str {
        match self {
            LpSense::Le => "<=",
            LpSense::Ge => ">=",
            LpSense::Eq => "=",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LpRow {
    pub name: String,
    pub terms: Vec<(f64, String)>,
    pub sense: LpSense,
    pub rhs: f64,
}

/// A minimisation problem in CPLEX LP text layout.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct LpDocument {
    pub objective: Vec<(f64, String)>,
    pub rows: Vec<LpRow>,
    /// Every variable with its `(lower, upper)` bounds.
    pub bounds: Vec<(String, f64, f64)>,
    pub binaries: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Error)]
#[error("line {line}: {message}")]
pub struct LpParseError {
    pub line: usize,
    pub message: String,
}

impl LpDocument {
    /// Variables in bounds order.
    pub fn variables(&self) -> impl Iterator<Item = &str> {
        self.bounds.iter().map(|(n, _, _)| n.as_str())
    }

    /// Number of variables whose name starts with `prefix` followed by `_`.
    pub fn count_family(&self, prefix: &str) -> usize {
        self.variables()
            .filter(|n| n.strip_prefix(prefix).is_some_and(|r| r.starts_with('_')))
            .count()
    }

    pub fn row(&self, name: &str) -> Option<&LpRow> {
        self.rows.iter().find(|r| r.name == name)
    }

    /// Rows whose name starts with `prefix`.
    pub fn count_rows(&self, prefix: &str) -> usize {
        self.rows
            .iter()
            .filter(|r| r.name.starts_with(prefix))
            .count()
    }

    pub fn parse(text: &str) -> Result<LpDocument, LpParseError> {
        #[derive(PartialEq)]
        enum Section {
            Start,
            Objective,
            Rows,
            Bounds,
            Binaries,
            End,
        }
        let mut doc = LpDocument::default();
        let mut section = Section::Start;
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let err = |message: String| LpParseError { line, message };
            let content = raw.split('\\').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let keyword = content.to_ascii_lowercase();
            if section == Section::Start
                && !matches!(keyword.as_str(), "minimize" | "minimise" | "min")
            {
                return Err(err("expected Minimize".into()));
            }
            match keyword.as_str() {
                "minimize" | "minimise" | "min" => {
                    section = Section::Objective;
                    continue;
                }
                "subject to" | "st" | "s.t." => {
                    section = Section::Rows;
                    continue;
                }
                "bounds" => {
                    section = Section::Bounds;
                    continue;
                }
                "binaries" | "binary" => {
                    section = Section::Binaries;
                    continue;
                }
                "end" => {
                    section = Section::End;
                    continue;
                }
                _ => {}
            }
            match section {
                Section::Start => return Err(err("expected Minimize".into())),
                Section::End => return Err(err("text after End".into())),
                Section::Objective => {
                    let body = content.split_once(':').map_or(content, |(_, b)| b);
                    doc.objective.extend(parse_terms(body).map_err(err)?);
                }
                Section::Rows => {
                    let (name, body) = content
                        .split_once(':')
                        .ok_or_else(|| err("row without a name".into()))?;
                    let (lhs, sense, rhs) =
                        split_sense(body).ok_or_else(|| err("row without a sense".into()))?;
                    doc.rows.push(LpRow {
                        name: name.trim().to_string(),
                        terms: parse_terms(lhs).map_err(err)?,
                        sense,
                        rhs: parse_number(rhs.trim())
                            .ok_or_else(|| err(format!("bad rhs {rhs:?}")))?,
                    });
                }
                Section::Bounds => doc.bounds.push(parse_bound(content).map_err(err)?),
                Section::Binaries => doc
                    .binaries
                    .extend(content.split_whitespace().map(String::from)),
            }
        }
        if section != Section::End {
            return Err(LpParseError {
                line: text.lines().count(),
                message: "missing End".into(),
            });
        }
        Ok(doc)
    }
}

fn parse_number(s: &str) -> Option<f64> {
    match s.to_ascii_lowercase().as_str() {
        "inf" | "+inf" | "infinity" | "+infinity" => Some(f64::INFINITY),
        "-inf" | "-infinity" => Some(f64::NEG_INFINITY),
        t => t.parse().ok(),
    }
}

fn split_sense(body: &str) -> Option<(&str, LpSense, &str)> {
    for (sym, sense) in [("<=", LpSense::Le), (">=", LpSense::Ge), ("=", LpSense::Eq)] {
        if let Some((l, r)) = body.split_once(sym) {
            return Some((l, sense, r));
        }
    }
    None
}

/// `+ 3 x - y + 0.5 z` style expressions.
fn parse_terms(body: &str) -> Result<Vec<(f64, String)>, String> {
    let mut terms = Vec::new();
    let mut sign = 1.0;
    let mut coef: Option<f64> = None;
    for tok in body.split_whitespace() {
        match tok {
            "+" => {}
            "-" => sign = -sign,
            _ => {
                if let Some(c) = parse_number(tok).filter(|c| c.is_finite()) {
                    if coef.is_some() {
                        return Err(format!("two coefficients in a row near {tok:?}"));
                    }
                    coef = Some(c);
                } else {
                    terms.push((sign * coef.unwrap_or(1.0), tok.to_string()));
                    sign = 1.0;
                    coef = None;
                }
            }
        }
    }
    if coef.is_some_and(|c| c != 0.0) {
        return Err("dangling coefficient".into());
    }
    Ok(terms)
}

fn parse_bound(content: &str) -> Result<(String, f64, f64), String> {
    let toks: Vec<&str> = content.split_whitespace().collect();
    let num = |s: &str| parse_number(s).ok_or_else(|| format!("bad bound {s:?}"));
    match toks.as_slice() {
        [lo, "<=", name, "<=", hi] => Ok((name.to_string(), num(lo)?, num(hi)?)),
        [name, "=", v] => {
            let v = num(v)?;
            Ok((name.to_string(), v, v))
        }
        [name, ">=", lo] => Ok((name.to_string(), num(lo)?, f64::INFINITY)),
        [name, "<=", hi] => Ok((name.to_string(), 0.0, num(hi)?)),
        _ => Err(format!("unrecognised bound {content:?}")),
    }
}

fn write_terms(f: &mut fmt::Formatter<'_>, terms: &[(f64, String)]) -> fmt::Result {
    for (i, (c, name)) in terms.iter().enumerate() {
        let sign = if *c < 0.0 { "-" } else { "+" };
        if i == 0 && *c >= 0.0 {
            write!(f, " {} {name}", c.abs())?;
        } else {
            write!(f, " {sign} {} {name}", c.abs())?;
        }
    }
    if terms.is_empty() {
        write!(f, " 0")?;
    }
    Ok(())
}

fn fmt_bound(v: f64) -> String {
    if v == f64::INFINITY {
        "+inf".into()
    } else if v == f64::NEG_INFINITY {
        "-inf".into()
    } else {
        v.to_string()
    }
}

impl fmt::Display for LpDocument {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "Minimize")?;
        write!(f, " cost:")?;
        write_terms(f, &self.objective)?;
        writeln!(f)?;
        writeln!(f, "Subject To")?;
        for row in &self.rows {
            write!(f, " {}:", row.name)?;
            write_terms(f, &row.terms)?;
            writeln!(f, " {} {}", row.sense.symbol(), row.rhs)?;
        }
        writeln!(f, "Bounds")?;
        for (name, lo, hi) in &self.bounds {
            if lo == hi {
                writeln!(f, " {name} = {}", fmt_bound(*lo))?;
            } else {
                writeln!(f, " {} <= {name} <= {}", fmt_bound(*lo), fmt_bound(*hi))?;
            }
        }
        writeln!(f, "Binaries")?;
        for chunk in self.binaries.chunks(10) {
            writeln!(f, " {}", chunk.join(" "))?;
        }
        writeln!(f, "End")
    }
}

struct Builder {
    doc: LpDocument,
}

impl Builder {
    fn var(&mut self, name: String, lo: f64, hi: f64, binary: bool) -> String {
        if binary {
            self.doc.binaries.push(name.clone());
        }
        self.doc.bounds.push((name.clone(), lo, hi));
        name
    }

    fn row(&mut self, name: String, terms: Vec<(f64, String)>, sense: LpSense, rhs: f64) {
        let mut merged: BTreeMap<String, f64> = BTreeMap::new();
        let mut order = Vec::new();
        for (c, v) in terms {
            if !merged.contains_key(&v) {
                order.push(v.clone());
            }
            *merged.entry(v).or_insert(0.0) += c;
        }
        let terms = order
            .into_iter()
            .filter_map(|v| {
                let c = merged[&v];
                (c != 0.0).then_some((c, v))
            })
            .collect();
        self.doc.rows.push(LpRow {
            name,
            terms,
            sense,
            rhs,
        });
    }
}

fn d(a: usize, b: usize) -> String {
    format!("d_{a}_{b}")
}
fn e(u: usize, v: usize) -> String {
    format!("e_{u}_{v}")
}
fn x(s: usize, v: usize) -> String {
    format!("x_{s}_{v}")
}
fn y(u: usize, v: usize) -> String {
    format!("y_{u}_{v}")
}
fn z(s: usize, v: usize) -> String {
    format!("z_{s}_{v}")
}
fn g(v: usize) -> String {
    format!("g_{v}")
}
fn j(a: usize, b: usize, s: usize, t: usize) -> String {
    format!("j_{a}_{b}_{s}_{t}")
}
fn q(u: usize, v: usize, s: usize) -> String {
    format!("q_{u}_{v}_{s}")
}
fn r(v: usize, u: usize, s: usize) -> String {
    format!("r_{v}_{u}_{s}")
}

/// Builds the full integer program for `instance`.
pub fn export_lp(instance: &Instance) -> LpDocument {
    use LpSense::{Eq, Ge, Le};

    let users = instance.participants().len();
    let n_nodes = node_count(users);
    let n_vm = vm_slots(users);
    let n_mix = mixer_slots(users);
    let servers = instance.servers().len();
    let media = instance.media();
    let net = instance.network();
    let gamma = media.gamma_fraction();
    let bound = instance.qos().max_delay_ms;
    let beta = (n_nodes + 1) as f64;
    let t_max = net.max_time();
    let big_m = n_vm as f64 * (t_max + media.handling_time(n_nodes)) + bound + t_max;
    let uf = users as f64;

    let node = |v: usize| users + v;
    let is_c = |v: usize| v >= n_mix;
    let keep = |v: usize| if is_c(v) { 1.0 - gamma } else { 1.0 };
    let user_site: Vec<_> = instance.participants().iter().map(|p| p.site).collect();
    let srv_site = |s: usize| instance.servers()[s].site;
    let vm_pairs: Vec<(usize, usize)> = (0..n_vm)
        .flat_map(|a| (0..n_vm).map(move |b| (a, b)))
        .filter(|&(a, b)| a != b && !(is_c(a) && is_c(b)))
        .collect();

    let mut b = Builder {
        doc: LpDocument::default(),
    };

    // Variables.
    for a in 0..n_nodes {
        for c in 0..n_nodes {
            let hi = if a == c { 0.0 } else { 1.0 };
            b.var(d(a, c), 0.0, hi, true);
        }
    }
    for u in 0..users {
        for v in 0..n_vm {
            b.var(e(u, v), 0.0, 1.0, true);
        }
    }
    for u in 0..users {
        for i in 0..n_vm {
            for v in 0..n_vm {
                if i != v {
                    b.var(format!("f_{u}_{i}_{v}"), 0.0, 1.0, true);
                }
            }
        }
    }
    for s in 0..servers {
        for v in 0..n_vm {
            b.var(x(s, v), 0.0, 1.0, true);
        }
    }
    for m in 0..n_mix {
        b.var(format!("h_{m}"), 0.0, 1.0, true);
    }
    for u in 0..users {
        for v in 0..n_vm {
            b.var(y(u, v), 0.0, f64::INFINITY, false);
        }
    }
    for s in 0..servers {
        for v in 0..n_vm {
            b.var(z(s, v), 0.0, beta, false);
        }
    }
    for v in 0..n_vm {
        b.var(g(v), 0.0, beta, false);
    }
    for &(a, c) in &vm_pairs {
        for s in 0..servers {
            for t in 0..servers {
                b.var(j(a, c, s, t), 0.0, 1.0, false);
            }
        }
    }
    for u in 0..users {
        for v in 0..n_vm {
            for s in 0..servers {
                b.var(q(u, v, s), 0.0, 1.0, false);
                b.var(r(v, u, s), 0.0, 1.0, false);
            }
        }
    }

    // Objective.
    let mut obj = Vec::new();
    for s in 0..servers {
        let price = instance.servers()[s].cost_per_mb;
        for v in 0..n_vm {
            match instance.cost_mode() {
                CostMode::PerMb => {
                    obj.push((price * media.vm_overhead_mb, x(s, v)));
                    obj.push((price * media.resource_per_stream_mb, z(s, v)));
                }
                CostMode::PerVm => obj.push((price, x(s, v))),
            }
        }
    }
    for u in 0..users {
        for v in 0..n_vm {
            for s in 0..servers {
                obj.push((net.cost(user_site[u], srv_site(s)), q(u, v, s)));
                obj.push((net.cost(srv_site(s), user_site[u]) * keep(v), r(v, u, s)));
            }
        }
    }
    for &(a, c) in &vm_pairs {
        for s in 0..servers {
            for t in 0..servers {
                obj.push((net.cost(srv_site(s), srv_site(t)) * keep(a), j(a, c, s, t)));
            }
        }
    }
    b.doc.objective = obj.into_iter().filter(|(c, _)| *c != 0.0).collect();

    let in_terms =
        |v: usize| -> Vec<(f64, String)> { (0..n_nodes).map(|k| (1.0, d(k, node(v)))).collect() };
    let out_terms =
        |v: usize| -> Vec<(f64, String)> { (0..n_nodes).map(|k| (1.0, d(node(v), k))).collect() };

    // Each participant uploads once and downloads once, only through VMs.
    for u in 0..users {
        b.row(
            format!("upload_{u}"),
            (0..n_vm).map(|v| (1.0, d(u, node(v)))).collect(),
            Eq,
            1.0,
        );
        b.row(
            format!("download_{u}"),
            (0..n_vm).map(|v| (1.0, d(node(v), u))).collect(),
            Eq,
            1.0,
        );
    }
    let pp = (0..users)
        .flat_map(|p| {
            (0..users)
                .filter(move |&w| w != p)
                .map(move |w| (1.0, d(p, w)))
        })
        .collect();
    b.row("no_participant_link".into(), pp, Eq, 0.0);

    // Reachability.
    for u in 0..users {
        for v in 0..n_vm {
            b.row(
                format!("reach_direct_{u}_{v}"),
                vec![(1.0, e(u, v)), (-1.0, d(u, node(v)))],
                Ge,
                0.0,
            );
            let mut support = vec![(1.0, e(u, v)), (-1.0, d(u, node(v)))];
            for i in (0..n_vm).filter(|&i| i != v) {
                b.row(
                    format!("reach_chain_{u}_{i}_{v}"),
                    vec![(1.0, e(u, v)), (-1.0, d(node(i), node(v))), (-1.0, e(u, i))],
                    Ge,
                    -1.0,
                );
                let fv = format!("f_{u}_{i}_{v}");
                b.row(
                    format!("reach_via_{u}_{i}_{v}"),
                    vec![
                        (2.0, fv.clone()),
                        (-1.0, d(node(i), node(v))),
                        (-1.0, e(u, i)),
                    ],
                    Le,
                    0.0,
                );
                support.push((-1.0, fv));
            }
            let mut has_in = vec![(1.0, e(u, v))];
            has_in.extend(in_terms(v).into_iter().map(|(c, n)| (-c, n)));
            b.row(format!("reach_in_{u}_{v}"), has_in, Le, 0.0);
            b.row(format!("reach_support_{u}_{v}"), support, Le, 0.0);
        }
    }

    // Download sources are complete.
    for v in 0..n_vm {
        for u in 0..users {
            let mut t = vec![(uf, d(node(v), u))];
            t.extend((0..users).map(|p| (-1.0, e(p, v))));
            b.row(format!("complete_{v}_{u}"), t, Le, 0.0);
        }
    }

    // Compressors pass every stream on and never feed each other.
    let mut cc = Vec::new();
    for v in n_mix..n_vm {
        let mut t = in_terms(v);
        t.extend(out_terms(v).into_iter().map(|(c, n)| (-c, n)));
        b.row(format!("balance_{v}"), t, Eq, 0.0);
        for w in (n_mix..n_vm).filter(|&w| w != v) {
            cc.push((1.0, d(node(v), node(w))));
        }
    }
    b.row("no_compressor_link".into(), cc, Eq, 0.0);

    // Some mixer is reached by everyone.
    b.row(
        "coverage".into(),
        (0..n_mix).map(|m| (1.0, format!("h_{m}"))).collect(),
        Ge,
        1.0,
    );
    for m in 0..n_mix {
        let mut t = vec![(uf, format!("h_{m}"))];
        t.extend((0..users).map(|u| (-1.0, e(u, m))));
        b.row(format!("coverage_{m}"), t, Le, 0.0);
    }

    // Placement: a VM with edges sits on exactly one server, an unplaced one has none.
    for v in 0..n_vm {
        let xs: Vec<(f64, String)> = (0..servers).map(|s| (1.0, x(s, v))).collect();
        b.row(format!("place_{v}"), xs.clone(), Le, 1.0);
        for (label, deg) in [("in", in_terms(v)), ("out", out_terms(v))] {
            let mut hi = deg.clone();
            hi.extend(xs.iter().map(|(_, n)| (-beta, n.clone())));
            b.row(format!("{label}_max_{v}"), hi, Le, 0.0);
            let mut lo = deg;
            lo.extend(xs.iter().map(|(_, n)| (-1.0, n.clone())));
            b.row(format!("{label}_min_{v}"), lo, Ge, 0.0);
        }
    }

    // Inputs per VM and their server-resolved copy.
    for v in 0..n_vm {
        let mut t = vec![(1.0, g(v))];
        t.extend(in_terms(v).into_iter().map(|(c, n)| (-c, n)));
        b.row(format!("load_{v}"), t, Eq, 0.0);
        for s in 0..servers {
            b.row(
                format!("load_gate_{s}_{v}"),
                vec![(1.0, z(s, v)), (-beta, x(s, v))],
                Le,
                0.0,
            );
            b.row(
                format!("load_cap_{s}_{v}"),
                vec![(1.0, z(s, v)), (-1.0, g(v))],
                Le,
                0.0,
            );
            b.row(
                format!("load_floor_{s}_{v}"),
                vec![(1.0, z(s, v)), (-1.0, g(v)), (-beta, x(s, v))],
                Ge,
                -beta,
            );
        }
    }
    for s in 0..servers {
        let mut t = Vec::new();
        for v in 0..n_vm {
            t.push((media.vm_overhead_mb, x(s, v)));
            t.push((media.resource_per_stream_mb, z(s, v)));
        }
        b.row(
            format!("capacity_{s}"),
            t,
            Le,
            instance.servers()[s].capacity_mb,
        );
    }

    // Products.
    let product = |b: &mut Builder, name: String, factors: Vec<String>| {
        for (k, f) in factors.iter().enumerate() {
            b.row(
                format!("{name}_le{k}"),
                vec![(1.0, name.clone()), (-1.0, f.clone())],
                Le,
                0.0,
            );
        }
        let mut t = vec![(1.0, name.clone())];
        t.extend(factors.iter().map(|f| (-1.0, f.clone())));
        let n = factors.len() as f64;
        b.row(format!("{name}_ge"), t, Ge, 1.0 - n);
    };
    for &(a, c) in &vm_pairs {
        for s in 0..servers {
            for t in 0..servers {
                product(
                    &mut b,
                    j(a, c, s, t),
                    vec![d(node(a), node(c)), x(s, a), x(t, c)],
                );
            }
        }
    }
    for u in 0..users {
        for v in 0..n_vm {
            for s in 0..servers {
                product(&mut b, q(u, v, s), vec![d(u, node(v)), x(s, v)]);
                product(&mut b, r(v, u, s), vec![d(node(v), u), x(s, v)]);
            }
        }
    }

    // Arrival times, gated on the edge that carries them.
    let tm = media.time_per_stream_ms;
    for p in 0..users {
        for v in 0..n_vm {
            let mut t = vec![(1.0, y(p, v)), (-tm, g(v)), (-big_m, d(p, node(v)))];
            for s in 0..servers {
                t.push((-net.time(user_site[p], srv_site(s)), q(p, v, s)));
            }
            b.row(format!("arrive_{p}_{v}"), t, Ge, -big_m);
            for &(i, _) in vm_pairs.iter().filter(|&&(_, c)| c == v) {
                let mut t = vec![
                    (1.0, y(p, v)),
                    (-1.0, y(p, i)),
                    (-tm, g(v)),
                    (-big_m, d(node(i), node(v))),
                ];
                for s in 0..servers {
                    for w in 0..servers {
                        t.push((-net.time(srv_site(s), srv_site(w)) * keep(i), j(i, v, s, w)));
                    }
                }
                b.row(format!("relay_{p}_{i}_{v}"), t, Ge, -big_m);
            }
            for u in 0..users {
                let mut t = vec![(1.0, y(p, v)), (big_m, d(node(v), u))];
                for s in 0..servers {
                    t.push((net.time(srv_site(s), user_site[u]) * keep(v), r(v, u, s)));
                }
                b.row(format!("deadline_{p}_{v}_{u}"), t, Le, bound + big_m);
            }
        }
    }

    b.doc
}
