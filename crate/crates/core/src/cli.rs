//! Command-line front end.
//!
//! Spec files are line-oriented:
//!
//! ```text
//! # comment
//! order 6
//! grading 1 1
//! morphism phi { source 1 ; target 1 ; S x1*q1 + (1/2)*eps*q1^2 }
//! quantum psi { source 1 ; target 1 ; S x1*q1 + hbar*x1 }
//! function g { y1^2/2 }
//! ```
//!
//! Blocks may span several lines. `#` starts a comment running to the end of
//! the line.

use std::collections::BTreeMap;
use std::fmt;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use thiserror::Error;

use crate::graded::Grading;
use crate::microformal::{compose, hj_action, lie_algebra_check, pullback, ThickMorphism};
use crate::parse::{parse, ParseError};
use crate::poly::{Family, Polynomial, Rational};
use crate::quantum::{
    classical_limit_sweep, quantum_compose, quantum_pullback_formal, write_sweep_csv, ComplexSeries,
    HbarOrder, QuantumMorphism, SweepConfig,
};

pub const DEFAULT_ORDER: u32 = 6;

/// Classical or quantum morphism declaration.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MorphismKind {
    Classical,
    Quantum,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MorphismDecl {
    pub kind: MorphismKind,
    pub source: u32,
    pub target: u32,
    pub s: Polynomial,
    pub line: usize,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SpecFile {
    pub order: Option<u32>,
    pub grading: Grading,
    pub morphisms: BTreeMap<String, MorphismDecl>,
    pub functions: BTreeMap<String, Polynomial>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SpecError {
    #[error("cannot read {path}: {message}")]
    Io { path: String, message: String },
    #[error("line {line}, column {column}: {message}")]
    Syntax { line: usize, column: usize, message: String },
    #[error("line {line}: {message}")]
    Invalid { line: usize, message: String },
}

impl SpecError {
    /// Syntax and I/O problems are usage errors; the rest are domain errors.
    pub fn exit_code(&self) -> i32 {
        match self {
            SpecError::Io { .. } | SpecError::Syntax { .. } => 2,
            SpecError::Invalid { .. } => 1,
        }
    }
}

struct Scanner<'a> {
    text: String,
    src: &'a str,
    pos: usize,
}

impl<'a> Scanner<'a> {
    fn new(src: &'a str) -> Self {
        // comments become spaces so offsets still map to the original text
        let text: String = src
            .split_inclusive('\n')
            .map(|line| match line.find('#') {
                Some(i) => {
                    let tail: String = line[i..].chars().map(|c| if c == '\n' { '\n' } else { ' ' }).collect();
                    format!("{}{}", &line[..i], tail)
                }
                None => line.to_string(),
            })
            .collect();
        Scanner { text, src, pos: 0 }
    }

    fn line_col(&self, offset: usize) -> (usize, usize) {
        let before = &self.src[..offset.min(self.src.len())];
        let line = before.matches('\n').count() + 1;
        let col = before.rfind('\n').map_or(before.chars().count(), |i| before[i + 1..].chars().count()) + 1;
        (line, col)
    }

    fn error_at<T>(&self, offset: usize, message: impl Into<String>) -> Result<T, SpecError> {
        let (line, column) = self.line_col(offset);
        Err(SpecError::Syntax { line, column, message: message.into() })
    }

    fn skip_ws(&mut self) {
        while let Some(c) = self.text[self.pos..].chars().next() {
            if !c.is_whitespace() {
                break;
            }
            self.pos += c.len_utf8();
        }
    }

    fn at_end(&mut self) -> bool {
        self.skip_ws();
        self.pos >= self.text.len()
    }

    fn word(&mut self, what: &str) -> Result<(usize, String), SpecError> {
        self.skip_ws();
        let start = self.pos;
        let len = self.text[start..]
            .find(|c: char| !(c.is_ascii_alphanumeric() || c == '_' || c == '-'))
            .unwrap_or(self.text.len() - start);
        if len == 0 {
            return self.error_at(start, format!("expected {what}"));
        }
        self.pos += len;
        Ok((start, self.text[start..self.pos].to_string()))
    }

    fn keyword(&mut self, kw: &str) -> Result<(), SpecError> {
        let (at, w) = self.word(&format!("`{kw}`"))?;
        if w != kw {
            return self.error_at(at, format!("expected `{kw}`, found `{w}`"));
        }
        Ok(())
    }

    fn uint(&mut self, what: &str) -> Result<u32, SpecError> {
        let (at, w) = self.word(what)?;
        w.parse().or_else(|_| self.error_at(at, format!("expected {what}, found `{w}`")))
    }

    fn punct(&mut self, c: char) -> Result<(), SpecError> {
        self.skip_ws();
        if self.text[self.pos..].starts_with(c) {
            self.pos += 1;
            Ok(())
        } else {
            let found = self.text[self.pos..].chars().next().map_or("end of file".to_string(), |f| format!("`{f}`"));
            self.error_at(self.pos, format!("expected `{c}`, found {found}"))
        }
    }

    /// Expression text up to (not including) the next `stop` character.
    fn expr_until(&mut self, stop: char) -> Result<Polynomial, SpecError> {
        let start = self.pos;
        let len = match self.text[start..].find(stop) {
            Some(l) => l,
            None => return self.error_at(self.text.len(), format!("expected `{stop}`, found end of file")),
        };
        self.pos += len;
        parse(&self.text[start..start + len]).or_else(|e| self.error_at(start + e.offset(), describe(&e)))
    }
}

fn describe(e: &ParseError) -> String {
    match e {
        ParseError::Syntax { expected, found, .. } => format!("expected {}, found {found}", expected.join(" or ")),
        ParseError::UnknownVariable { name, .. } => format!("unknown variable `{name}`"),
        ParseError::DivisionByZero { .. } => "division by zero".into(),
    }
}

/// Reads and validates a spec file.
pub fn load_spec(path: &Path) -> Result<SpecFile, SpecError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| SpecError::Io { path: path.display().to_string(), message: e.to_string() })?;
    parse_spec(&text)
}

/// Parses and validates spec-file text.
pub fn parse_spec(text: &str) -> Result<SpecFile, SpecError> {
    let mut sc = Scanner::new(text);
    let mut spec = SpecFile {
        order: None,
        grading: Grading::default(),
        morphisms: BTreeMap::new(),
        functions: BTreeMap::new(),
    };
    while !sc.at_end() {
        let (at, kw) = sc.word("declaration")?;
        let line = sc.line_col(at).0;
        match kw.as_str() {
            "order" => spec.order = Some(sc.uint("truncation order")?),
            "grading" => {
                let e = sc.uint("eps weight")?;
                let h = sc.uint("hbar weight")?;
                spec.grading =
                    Grading::new(e, h, 0).map_err(|err| SpecError::Invalid { line, message: err.to_string() })?;
            }
            "morphism" | "quantum" => {
                let (name_at, name) = sc.word("name")?;
                sc.punct('{')?;
                sc.keyword("source")?;
                let source = sc.uint("source dimension")?;
                sc.punct(';')?;
                sc.keyword("target")?;
                let target = sc.uint("target dimension")?;
                sc.punct(';')?;
                sc.keyword("S")?;
                let s = sc.expr_until('}')?;
                sc.punct('}')?;
                if spec.morphisms.contains_key(&name) || spec.functions.contains_key(&name) {
                    return sc.error_at(name_at, format!("duplicate name `{name}`"));
                }
                let kind = if kw == "morphism" { MorphismKind::Classical } else { MorphismKind::Quantum };
                spec.morphisms.insert(name, MorphismDecl { kind, source, target, s, line });
            }
            "function" => {
                let (name_at, name) = sc.word("name")?;
                sc.punct('{')?;
                let body = sc.expr_until('}')?;
                sc.punct('}')?;
                if spec.morphisms.contains_key(&name) || spec.functions.contains_key(&name) {
                    return sc.error_at(name_at, format!("duplicate name `{name}`"));
                }
                spec.functions.insert(name, body);
            }
            other => {
                return sc.error_at(
                    at,
                    format!("expected `order`, `grading`, `morphism`, `quantum` or `function`, found `{other}`"),
                )
            }
        }
    }
    let order = spec.order.unwrap_or(DEFAULT_ORDER);
    for (name, decl) in &spec.morphisms {
        decl.build(spec.grading, order)
            .map_err(|e| SpecError::Invalid { line: decl.line, message: format!("morphism `{name}`: {e}") })?;
    }
    Ok(spec)
}

/// A morphism built at a given grading and order.
#[derive(Clone, Debug)]
pub enum Built {
    Classical(ThickMorphism),
    Quantum(QuantumMorphism),
}

impl Built {
    fn quantum(&self) -> QuantumMorphism {
        match self {
            Built::Classical(m) => QuantumMorphism::from_classical(m),
            Built::Quantum(q) => q.clone(),
        }
    }
}

impl MorphismDecl {
    pub fn build(&self, grading: Grading, order: u32) -> Result<Built, String> {
        match self.kind {
            MorphismKind::Classical => ThickMorphism::from_polynomial(self.source, self.target, &self.s, grading, order)
                .map(Built::Classical)
                .map_err(|e| e.to_string()),
            MorphismKind::Quantum => QuantumMorphism::from_polynomial(self.source, self.target, &self.s, grading, order)
                .map(Built::Quantum)
                .map_err(|e| e.to_string()),
        }
    }
}

#[derive(Parser, Debug)]
#[command(name = "thick", version, about = "Nonlinear pullbacks and compositions of thick morphisms")]
pub struct Cli {
    /// Truncation order (overrides the spec file).
    #[arg(long, global = true)]
    pub order: Option<u32>,
    /// Rational value substituted for eps in numeric commands.
    #[arg(long, global = true)]
    pub eps: Option<String>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Pull back a function along a morphism.
    Pullback { spec: PathBuf, morphism: String, function: String },
    /// Compose two morphisms (`inner` applied first).
    Compose { spec: PathBuf, outer: String, inner: String },
    /// Hamilton-Jacobi action f + eps*H(x, df/dx).
    Hj { spec: PathBuf, hamiltonian: String, function: String },
    /// Compare the pullback commutator with the Poisson bracket action.
    Liecheck { spec: PathBuf, h1: String, h2: String, function: String },
    /// Numeric hbar sweep of the oscillatory integral.
    Qsweep(QsweepArgs),
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Pullback { .. } => "pullback",
            Command::Compose { .. } => "compose",
            Command::Hj { .. } => "hj",
            Command::Liecheck { .. } => "liecheck",
            Command::Qsweep(_) => "qsweep",
        }
    }
}

#[derive(Args, Debug)]
pub struct QsweepArgs {
    pub spec: PathBuf,
    pub morphism: String,
    pub function: String,
    /// Evaluation point, comma separated.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true, required = true)]
    pub x: Vec<f64>,
    #[arg(long, default_value_t = 0.1)]
    pub hbar_start: f64,
    #[arg(long, default_value_t = 0.5)]
    pub hbar_factor: f64,
    #[arg(long, default_value_t = 7)]
    pub count: usize,
    /// Half-width of the integration box.
    #[arg(long, default_value_t = 4.0)]
    pub window: f64,
    /// Trapezoid step as a multiple of hbar.
    #[arg(long, default_value_t = 0.1)]
    pub step: f64,
    #[arg(long)]
    pub out: PathBuf,
}

/// Failure of a command, carrying its exit code.
#[derive(Debug)]
pub struct Failure {
    pub code: i32,
    pub message: String,
    pub usage: bool,
}

impl Failure {
    fn usage(message: impl Into<String>) -> Self {
        Failure { code: 2, message: message.into(), usage: true }
    }

    fn domain(message: impl fmt::Display) -> Self {
        Failure { code: 1, message: message.to_string(), usage: false }
    }
}

impl From<SpecError> for Failure {
    fn from(e: SpecError) -> Self {
        Failure { code: e.exit_code(), message: e.to_string(), usage: false }
    }
}

struct Session {
    spec: SpecFile,
    order: u32,
}

impl Session {
    fn open(path: &Path, order: Option<u32>) -> Result<Self, Failure> {
        let spec = load_spec(path)?;
        let order = order.or(spec.order).unwrap_or(DEFAULT_ORDER);
        Ok(Session { spec, order })
    }

    fn morphism(&self, name: &str) -> Result<Built, Failure> {
        let decl = self
            .spec
            .morphisms
            .get(name)
            .ok_or_else(|| Failure::usage(format!("no morphism named `{name}` in spec file")))?;
        decl.build(self.spec.grading, self.order).map_err(|e| Failure::domain(format!("morphism `{name}`: {e}")))
    }

    fn function(&self, name: &str) -> Result<&Polynomial, Failure> {
        self.spec
            .functions
            .get(name)
            .ok_or_else(|| Failure::usage(format!("no function named `{name}` in spec file")))
    }
}

fn parse_eps(text: &str) -> Result<Rational, Failure> {
    let p = parse(text).map_err(|e| Failure::usage(format!("--eps: {e}")))?;
    p.as_constant().ok_or_else(|| Failure::usage("--eps must be a rational constant"))
}

fn complex_line(c: &ComplexSeries) -> String {
    c.to_string()
}

fn quantum_line(q: &QuantumMorphism) -> String {
    complex_line(&ComplexSeries { re: q.generating().clone(), im: q.imaginary().clone() })
}

fn execute(cli: &Cli, out: &mut dyn Write) -> Result<(), Failure> {
    let io = |e: std::io::Error| Failure::domain(format!("write failed: {e}"));
    match &cli.command {
        Command::Pullback { spec, morphism, function } => {
            let s = Session::open(spec, cli.order)?;
            let g = s.function(function)?.clone();
            match s.morphism(morphism)? {
                Built::Classical(phi) => {
                    let r = pullback(&phi, &g).map_err(Failure::domain)?;
                    writeln!(out, "{}", r.f).map_err(io)?;
                }
                Built::Quantum(q) => {
                    let r = quantum_pullback_formal(&q, &g, HbarOrder::One).map_err(Failure::domain)?;
                    writeln!(out, "f0 = {}", r.f0).map_err(io)?;
                    writeln!(out, "f1 = {}", complex_line(&r.f1)).map_err(io)?;
                }
            }
        }
        Command::Compose { spec, outer, inner } => {
            let s = Session::open(spec, cli.order)?;
            match (s.morphism(outer)?, s.morphism(inner)?) {
                (Built::Classical(a), Built::Classical(b)) => {
                    let c = compose(&a, &b).map_err(Failure::domain)?;
                    writeln!(out, "{}", c.generating()).map_err(io)?;
                }
                (a, b) => {
                    let c = quantum_compose(&a.quantum(), &b.quantum(), HbarOrder::One).map_err(Failure::domain)?;
                    writeln!(out, "{}", quantum_line(&c)).map_err(io)?;
                }
            }
        }
        Command::Hj { spec, hamiltonian, function } => {
            let s = Session::open(spec, cli.order)?;
            let h = s.function(hamiltonian)?;
            let f = s.function(function)?;
            let r = hj_action(h, f).map_err(Failure::domain)?;
            writeln!(out, "{r}").map_err(io)?;
        }
        Command::Liecheck { spec, h1, h2, function } => {
            let s = Session::open(spec, cli.order)?;
            let (a, b, f) = (s.function(h1)?, s.function(h2)?, s.function(function)?);
            let r = lie_algebra_check(a, b, f, s.order.max(2)).map_err(Failure::domain)?;
            writeln!(out, "commutator = {}", r.commutator).map_err(io)?;
            writeln!(out, "bracket = {}", r.bracket).map_err(io)?;
            writeln!(out, "bracket action = {}", r.bracket_action).map_err(io)?;
            let sigma = match r.sigma {
                Some(s) if s > 0 => "+1",
                Some(_) => "-1",
                None => "undetermined",
            };
            writeln!(out, "sigma = {sigma}").map_err(io)?;
            writeln!(out, "result = {}", if r.passed { "pass" } else { "fail" }).map_err(io)?;
            if !r.passed {
                return Err(Failure::domain("lie check failed"));
            }
        }
        Command::Qsweep(a) => {
            let s = Session::open(&a.spec, cli.order)?;
            let q = s.morphism(&a.morphism)?.quantum();
            let g = s.function(&a.function)?.clone();
            let uses_eps = q.generating().body().variables().iter().chain(g.variables().iter()).any(|v| v.family == Family::Eps);
            let eps = match &cli.eps {
                Some(t) => parse_eps(t)?,
                None if uses_eps => return Err(Failure::usage("qsweep needs --eps when eps appears")),
                None => Rational::from_integer(0.into()),
            };
            if a.x.len() != q.source_dim() as usize {
                return Err(Failure::usage(format!(
                    "--x has {} coordinates, morphism source dimension is {}",
                    a.x.len(),
                    q.source_dim()
                )));
            }
            if !(a.hbar_start > 0.0) || !(a.hbar_factor > 0.0 && a.hbar_factor < 1.0) || a.count == 0 {
                return Err(Failure::usage("need --hbar-start > 0, 0 < --hbar-factor < 1 and --count >= 1"));
            }
            let hbars: Vec<f64> = (0..a.count).map(|k| a.hbar_start * a.hbar_factor.powi(k as i32)).collect();
            let cfg = SweepConfig { window: a.window, step_ratio: a.step };
            let report = classical_limit_sweep(&q, &g, &eps, &a.x, &hbars, cfg).map_err(Failure::domain)?;
            let file = File::create(&a.out).map_err(|e| Failure::usage(format!("cannot create {}: {e}", a.out.display())))?;
            let mut w = BufWriter::new(file);
            write_sweep_csv(&report.records, &mut w).and_then(|_| w.flush()).map_err(io)?;
            let slope = |s: Option<f64>| s.map_or("undefined".to_string(), |v| format!("{v:.6}"));
            writeln!(out, "f0 = {:.12e}", report.f0).map_err(io)?;
            let sign = if report.f1.im.is_sign_negative() { '-' } else { '+' };
            writeln!(out, "f1 = {:.12e} {sign} {:.12e}i", report.f1.re, report.f1.im.abs()).map_err(io)?;
            writeln!(out, "slope err0 = {}", slope(report.slope_err0)).map_err(io)?;
            writeln!(out, "slope err1 = {}", slope(report.slope_err1)).map_err(io)?;
            if report.records.iter().any(|r| !r.branch_ok) {
                writeln!(out, "warning: phase branch jump detected").map_err(io)?;
            }
        }
    }
    Ok(())
}

/// Runs the command line and returns the exit code.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    use clap::CommandFactory;
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = e.exit_code();
            let text = e.render().to_string();
            let _ = if code == 0 { write!(out, "{text}") } else { write!(err, "{text}") };
            return code;
        }
    };
    match execute(&cli, out) {
        Ok(()) => 0,
        Err(f) => {
            let _ = writeln!(err, "error: {}", f.message);
            if f.usage {
                let mut cmd = Cli::command();
                cmd.build();
                let name = cli.command.name();
                let usage = match cmd.find_subcommand_mut(name) {
                    Some(sub) => sub.render_usage(),
                    None => cmd.render_usage(),
                };
                let _ = writeln!(err, "\n{usage}");
            }
            f.code
        }
    }
}
