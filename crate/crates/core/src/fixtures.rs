//! Printed expansion terms and their reconciliation with the generated
//! term list.
//!
//! The bundled table (`fixtures/expansion_terms.txt`) lists terms as they
//! appear in a published expansion. Each one is either generated verbatim,
//! known to vanish, or a misprint whose corrected form is generated exactly
//! once. See the header of that file for the line grammar.

use std::collections::{BTreeSet, HashMap};
use std::fmt;

use crate::amplitudes::{Label, Sign};
use crate::dyson::{traced_terms, Family, FieldClass, ProbeClass, TracedTerm};
use crate::error::{Error, Result};

const BUNDLED: &str = include_str!("../fixtures/expansion_terms.txt");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Kind {
    /// Field traced; the probe is an operator word.
    FieldTraced,
    /// Probe and field traced; the probe is a class symbol.
    FullyTraced,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Status {
    Match,
    Absent,
    Typo(Vec<(String, String)>),
}

/// Comparable form of a term; both printed and generated terms reduce to it.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct TermKey {
    pub kind: Kind,
    pub family: String,
    pub block: String,
    pub sign: String,
    /// Factors in sorted order.
    pub coefficient: Vec<String>,
    pub probe: String,
    pub field: String,
    pub target: String,
}

impl fmt::Display for TermKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let kind = match self.kind {
            Kind::FieldTraced => "F",
            Kind::FullyTraced => "T",
        };
        write!(
            f,
            "{kind} {} {} {} [{}] probe={} field={} target={}",
            self.family,
            self.block,
            self.sign,
            self.coefficient.join(" "),
            self.probe,
            self.field,
            self.target
        )
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PrintedTermFixture {
    pub id: String,
    pub key: TermKey,
    pub status: Status,
    pub line: usize,
}

impl PrintedTermFixture {
    /// Key with the listed corrections applied.
    pub fn corrected(&self) -> Result<TermKey> {
        let mut k = self.key.clone();
        if let Status::Typo(fixes) = &self.status {
            for (field, value) in fixes {
                set_field(&mut k, field, value).map_err(|e| self.error(&e))?;
            }
        }
        Ok(k)
    }

    fn error(&self, msg: &str) -> Error {
        Error::Parse(format!("fixture {} (line {}): {msg}", self.id, self.line))
    }
}

fn set_field(k: &mut TermKey, field: &str, value: &str) -> std::result::Result<(), String> {
    match field {
        "family" => k.family = check_family(value)?,
        "block" => k.block = check_block(value)?,
        "sign" => k.sign = check_sign(value)?,
        "coefficient" => k.coefficient = parse_coefficient(value)?,
        "probe" => k.probe = check_probe(k.kind, value)?,
        "field" => k.field = check_field(value)?,
        "target" => k.target = check_target(value)?,
        _ => return Err(format!("unknown field '{field}'")),
    }
    Ok(())
}

fn check_family(s: &str) -> std::result::Result<String, String> {
    Family::parse(s).map(|f| f.symbol().to_string()).ok_or_else(|| format!("bad family '{s}'"))
}

fn check_block(s: &str) -> std::result::Result<String, String> {
    let ok = (1..=2).contains(&s.len()) && s.chars().all(|c| c == 'A' || c == 'B');
    ok.then(|| s.to_string()).ok_or_else(|| format!("bad block '{s}'"))
}

fn check_sign(s: &str) -> std::result::Result<String, String> {
    matches!(s, "+" | "-" | "+i" | "-i")
        .then(|| s.to_string())
        .ok_or_else(|| format!("bad sign '{s}'"))
}

fn check_field(s: &str) -> std::result::Result<String, String> {
    matches!(s, "1" | "a" | "a*" | "a^2" | "a*^2" | "|a|^2" | "1+|a|^2")
        .then(|| s.to_string())
        .ok_or_else(|| format!("bad field factor '{s}'"))
}

fn check_probe(kind: Kind, s: &str) -> std::result::Result<String, String> {
    match kind {
        Kind::FullyTraced => matches!(s, "1" | "eta" | "beta" | "g" | "g*")
            .then(|| s.to_string())
            .ok_or_else(|| format!("bad probe class '{s}'")),
        Kind::FieldTraced => {
            if s == "1" {
                return Ok(s.into());
            }
            let words: Vec<&str> = s.split_whitespace().collect();
            if words.iter().all(|w| matches!(*w, "A+" | "A-")) {
                Ok(words.join(" "))
            } else {
                Err(format!("bad probe word '{s}'"))
            }
        }
    }
}

fn check_target(s: &str) -> std::result::Result<String, String> {
    let words: Vec<&str> = s.split_whitespace().collect();
    let rho = words.iter().filter(|w| **w == "rho").count();
    let ok = rho == 1 && words.iter().all(|w| matches!(*w, "rho" | "s+" | "s-"));
    ok.then(|| words.join(" ")).ok_or_else(|| format!("bad target '{s}'"))
}

/// Parses one factor such as `J[+,-,1](-A,B)*` and returns its canonical
/// spelling.
fn parse_factor(s: &str) -> std::result::Result<String, String> {
    let bad = || format!("bad amplitude factor '{s}'");
    let (body, conj) = match s.strip_suffix('*') {
        Some(b) => (b, true),
        None => (s, false),
    };
    let (head, rest) = body.split_once('[').ok_or_else(bad)?;
    let (idx, rest) = rest.split_once("](").ok_or_else(bad)?;
    let args = rest.strip_suffix(')').ok_or_else(bad)?;
    let idx: Vec<&str> = idx.split(',').map(str::trim).collect();
    let args: Vec<&str> = args.split(',').map(str::trim).collect();
    let mode = *idx.last().ok_or_else(bad)?;
    if mode != "1" && mode != "j" {
        return Err(bad());
    }
    let sign = |x: &str| Sign::parse(x).map(|s| s.symbol()).ok_or_else(bad);
    let base = match (head, idx.len(), args.len()) {
        ("I", 2, 1) => {
            let l = Label::parse(args[0]).ok_or_else(bad)?;
            format!("I[{},{mode}]({l})", sign(idx[0])?)
        }
        ("J", 3, 2) => {
            let l = Label::parse(args[0]).ok_or_else(bad)?;
            let d = Label::parse(args[1]).ok_or_else(bad)?;
            if d.sign() != Sign::Plus {
                return Err(bad());
            }
            format!("J[{},{},{mode}]({l},{d})", sign(idx[0])?, sign(idx[1])?)
        }
        _ => return Err(bad()),
    };
    Ok(if conj { base + "*" } else { base })
}

fn parse_coefficient(s: &str) -> std::result::Result<Vec<String>, String> {
    let mut v = s.split_whitespace().map(parse_factor).collect::<std::result::Result<Vec<_>, _>>()?;
    if v.is_empty() {
        return Err("empty coefficient".into());
    }
    v.sort();
    Ok(v)
}

fn parse_status(s: &str) -> std::result::Result<Status, String> {
    match s {
        "match" => return Ok(Status::Match),
        "absent" => return Ok(Status::Absent),
        _ => {}
    }
    let inner = s
        .strip_prefix("typo(")
        .and_then(|r| r.strip_suffix(')'))
        .ok_or_else(|| format!("bad status '{s}'"))?;
    let fixes = inner
        .split(';')
        .map(|kv| {
            let (k, v) = kv.split_once('=').ok_or_else(|| format!("bad correction '{kv}'"))?;
            Ok((k.trim().to_string(), v.trim().to_string()))
        })
        .collect::<std::result::Result<Vec<_>, String>>()?;
    if fixes.is_empty() {
        return Err("typo without corrections".into());
    }
    Ok(Status::Typo(fixes))
}

fn parse_line(line: &str, lineno: usize) -> Result<PrintedTermFixture> {
    let cols: Vec<&str> = line.split(" | ").map(str::trim).collect();
    let err = |m: String| Error::Parse(format!("fixture line {lineno}: {m}"));
    if cols.len() != 10 {
        return Err(err(format!("expected 10 fields, found {}", cols.len())));
    }
    let kind = match cols[1] {
        "F" => Kind::FieldTraced,
        "T" => Kind::FullyTraced,
        k => return Err(err(format!("bad kind '{k}'"))),
    };
    let key = TermKey {
        kind,
        family: check_family(cols[2]).map_err(err)?,
        block: check_block(cols[3]).map_err(err)?,
        sign: check_sign(cols[4]).map_err(err)?,
        coefficient: parse_coefficient(cols[5]).map_err(err)?,
        probe: check_probe(kind, cols[6]).map_err(err)?,
        field: check_field(cols[7]).map_err(err)?,
        target: check_target(cols[8]).map_err(err)?,
    };
    Ok(PrintedTermFixture {
        id: cols[0].to_string(),
        key,
        status: parse_status(cols[9]).map_err(err)?,
        line: lineno,
    })
}

/// Parses a fixture table. Blank lines and `#` comments are skipped.
pub fn parse(text: &str) -> Result<Vec<PrintedTermFixture>> {
    let mut out = Vec::new();
    let mut ids = BTreeSet::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let f = parse_line(line, i + 1)?;
        if !ids.insert(f.id.clone()) {
            return Err(Error::Parse(format!("duplicate fixture id {}", f.id)));
        }
        out.push(f);
    }
    Ok(out)
}

/// The table shipped with the crate.
pub fn bundled() -> Vec<PrintedTermFixture> {
    parse(BUNDLED).expect("bundled fixture table parses")
}

fn probe_word(t: &TracedTerm) -> String {
    if t.probe.is_empty() {
        "1".into()
    } else {
        t.probe.iter().map(|s| format!("A{}", s.symbol())).collect::<Vec<_>>().join(" ")
    }
}

/// Every non-vanishing traced term at both levels of tracing, for the
/// coherent mode (`1`) and a vacuum mode (`j`), with multiplicities.
pub fn generated_keys() -> HashMap<TermKey, usize> {
    let mut out = HashMap::new();
    for t in traced_terms() {
        for (m, coherent) in [("1", true), ("j", false)] {
            let field = FieldClass::of(&t.field, coherent);
            if field == FieldClass::Zero {
                continue;
            }
            let mut coefficient: Vec<String> = t.term.factors.iter().map(|f| f.render(m)).collect();
            coefficient.sort();
            let key = TermKey {
                kind: Kind::FieldTraced,
                family: t.term.family.symbol().into(),
                block: t.term.block(),
                sign: t.term.phase_symbol().into(),
                coefficient,
                probe: probe_word(&t),
                field: field.symbol().into(),
                target: t.target_symbol(),
            };
            *out.entry(key.clone()).or_insert(0) += 1;
            let class = t.probe_class();
            if class != ProbeClass::Zero {
                let full = TermKey {
                    kind: Kind::FullyTraced,
                    probe: class.symbol().into(),
                    ..key
                };
                *out.entry(full).or_insert(0) += 1;
            }
        }
    }
    out
}

#[derive(Debug, Clone, Default)]
pub struct FixtureReport {
    pub total: usize,
    pub matched: usize,
    pub absent: usize,
    /// Ids of misprints whose corrected form is generated.
    pub reconciled: Vec<String>,
    /// `(id, reason)` for every fixture that does not behave as declared.
    pub failures: Vec<(String, String)>,
    pub blocks: BTreeSet<String>,
    pub coherent: usize,
    pub vacuum: usize,
}

impl FixtureReport {
    pub fn ok(&self) -> bool {
        self.failures.is_empty()
    }
}

/// Checks each fixture against the generated term list.
///
/// `match` needs the printed key generated exactly once, `absent` needs it
/// never generated, and a misprint needs the printed key never generated and
/// the corrected key generated exactly once.
pub fn check_against_generated(fixtures: &[PrintedTermFixture]) -> FixtureReport {
    let generated = generated_keys();
    let count = |k: &TermKey| generated.get(k).copied().unwrap_or(0);
    let mut r = FixtureReport {
        total: fixtures.len(),
        ..Default::default()
    };
    for f in fixtures {
        r.blocks.insert(f.key.block.clone());
        if f.key.coefficient.iter().any(|c| c.contains(",1]")) {
            r.coherent += 1;
        } else {
            r.vacuum += 1;
        }
        let n = count(&f.key);
        let fail = |r: &mut FixtureReport, why: String| r.failures.push((f.id.clone(), why));
        match &f.status {
            Status::Match if n == 1 => r.matched += 1,
            Status::Match => fail(&mut r, format!("generated {n} times: {}", f.key)),
            Status::Absent if n == 0 => r.absent += 1,
            Status::Absent => fail(&mut r, format!("declared absent but generated {n} times")),
            Status::Typo(_) => match f.corrected() {
                Err(e) => fail(&mut r, e.to_string()),
                Ok(_) if n != 0 => fail(&mut r, format!("misprint is generated {n} times as written")),
                Ok(k) => match count(&k) {
                    1 => r.reconciled.push(f.id.clone()),
                    c => fail(&mut r, format!("correction generated {c} times: {k}")),
                },
            },
        }
    }
    r
}
