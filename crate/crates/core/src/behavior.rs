//! Static behavioral score over a generated code completion.
//!
//! Four independent components, each contributing its weight when it passes:
//! syntax validity, entry-point definition, absence of risky patterns and
//! absence of undesirable patterns. The score is the clamped weighted sum.

use std::collections::BTreeMap;
use std::io::Write;
use std::time::Duration;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::process::{run_with_timeout, CommandStatus};

#[derive(Debug, Error)]
pub enum BehaviorError {
    #[error("invalid pattern `{pattern}`: {source}")]
    BadPattern {
        pattern: String,
        #[source]
        source: regex::Error,
    },
    #[error("invalid behavior weights: {0}")]
    BadWeights(String),
    #[error("external syntax checker needs a command")]
    EmptyCommand,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BehaviorWeights {
    pub syntax: f64,
    pub entry_point: f64,
    pub risk_free: f64,
    pub no_undesirable: f64,
}

impl Default for BehaviorWeights {
    fn default() -> Self {
        Self {
            syntax: 0.35,
            entry_point: 0.35,
            risk_free: 0.20,
            no_undesirable: 0.10,
        }
    }
}

impl BehaviorWeights {
    pub fn validate(&self) -> Result<(), BehaviorError> {
        let all = [self.syntax, self.entry_point, self.risk_free, self.no_undesirable];
        if all.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(BehaviorError::BadWeights("weights must be nonnegative".into()));
        }
        let sum: f64 = all.iter().sum();
        if sum > 1.0 + 1e-9 {
            return Err(BehaviorError::BadWeights(format!("weights sum to {sum} > 1")));
        }
        Ok(())
    }

    fn weight(&self, c: Component) -> f64 {
        match c {
            Component::Syntax => self.syntax,
            Component::EntryPoint => self.entry_point,
            Component::RiskFree => self.risk_free,
            Component::NoUndesirable => self.no_undesirable,
        }
    }
}

/// A literal substring or a regular expression, matched line by line so
/// `^` anchors at the start of each line.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pattern {
    Literal(String),
    Regex(String),
}

impl Pattern {
    pub fn source(&self) -> &str {
        match self {
            Pattern::Literal(s) | Pattern::Regex(s) => s,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct PatternConfig {
    pub risk: Vec<Pattern>,
    pub undesirable: Vec<Pattern>,
    /// Flag numeric literals returned at function top level.
    pub flag_hardcoded_returns: bool,
}

impl Default for PatternConfig {
    fn default() -> Self {
        default_pattern_config()
    }
}

pub fn default_pattern_config() -> PatternConfig {
    let re = |s: &str| Pattern::Regex(s.to_string());
    PatternConfig {
        risk: vec![
            re(r"\bexec\s*\("),
            re(r"\beval\s*\("),
            re(r"\bopen\s*\("),
            re(r"\bos\.system\s*\("),
            re(r"\bos\.(remove|unlink|rmdir|removedirs)\s*\("),
            re(r"\bshutil\.rmtree\s*\("),
            re(r"\bsubprocess\b"),
            re(r"\b__import__\s*\("),
        ],
        undesirable: vec![re(r"^print\s*\(")],
        flag_hardcoded_returns: false,
    }
}

#[derive(Debug, Clone)]
enum Matcher {
    Literal(String),
    Regex(Regex),
}

#[derive(Debug, Clone)]
struct CompiledPattern {
    label: String,
    matcher: Matcher,
}

impl CompiledPattern {
    fn is_match(&self, line: &str) -> bool {
        match &self.matcher {
            Matcher::Literal(s) => line.contains(s.as_str()),
            Matcher::Regex(r) => r.is_match(line),
        }
    }
}

/// A compiled list of patterns.
#[derive(Debug, Clone)]
pub struct PatternSet {
    patterns: Vec<CompiledPattern>,
}

impl PatternSet {
    pub fn compile(patterns: &[Pattern]) -> Result<Self, BehaviorError> {
        let patterns = patterns
            .iter()
            .map(|p| {
                let matcher = match p {
                    Pattern::Literal(s) => Matcher::Literal(s.clone()),
                    Pattern::Regex(s) => Matcher::Regex(Regex::new(s).map_err(|source| {
                        BehaviorError::BadPattern {
                            pattern: s.clone(),
                            source,
                        }
                    })?),
                };
                Ok(CompiledPattern {
                    label: p.source().to_string(),
                    matcher,
                })
            })
            .collect::<Result<_, BehaviorError>>()?;
        Ok(Self { patterns })
    }

    /// True when any pattern matches any line of `text`.
    pub fn matches(&self, text: &str) -> bool {
        text.lines().any(|l| self.patterns.iter().any(|p| p.is_match(l)))
    }

    fn scan(&self, code: &str, out: &mut Vec<PatternMatch>) -> bool {
        let before = out.len();
        for (idx, line) in code.lines().enumerate() {
            for p in &self.patterns {
                if p.is_match(line) {
                    out.push(PatternMatch {
                        pattern: p.label.clone(),
                        line: idx + 1,
                    });
                }
            }
        }
        out.len() > before
    }
}

/// Decides whether a piece of code parses.
pub trait SyntaxChecker: Send + Sync {
    fn is_valid(&self, code: &str) -> bool;
}

/// Structural approximation of a Python parse: balanced brackets, closed
/// string literals, and a consistent indentation block structure.
#[derive(Debug, Clone, Copy, Default)]
pub struct StructuralChecker;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SyntaxIssue {
    Empty,
    UnbalancedBracket { line: usize },
    UnterminatedString { line: usize },
    MixedIndentation { line: usize },
    UnexpectedIndent { line: usize },
    ExpectedIndent { line: usize },
    InconsistentDedent { line: usize },
}

fn closing(open: char) -> char {
    match open {
        '(' => ')',
        '[' => ']',
        _ => '}',
    }
}

/// Runs the structural checks, reporting the first issue found.
pub fn structural_check(code: &str) -> Result<(), SyntaxIssue> {
    if code.trim().is_empty() {
        return Err(SyntaxIssue::Empty);
    }
    let mut brackets: Vec<char> = Vec::new();
    let mut indents: Vec<usize> = vec![0];
    let mut expect_block = false;
    let mut triple: Option<char> = None;
    let mut backslash_cont = false;
    let mut triple_start = 0;

    for (idx, line) in code.lines().enumerate() {
        let line_no = idx + 1;
        let continuing = triple.is_some() || !brackets.is_empty() || backslash_cont;
        backslash_cont = false;
        if !continuing {
            let stripped = line.trim_start_matches([' ', '\t']);
            if stripped.is_empty() || stripped.starts_with('#') {
                continue;
            }
            let prefix = &line[..line.len() - stripped.len()];
            if prefix.contains(' ') && prefix.contains('\t') {
                return Err(SyntaxIssue::MixedIndentation { line: line_no });
            }
            let width = prefix.chars().map(|c| if c == '\t' { 8 } else { 1 }).sum::<usize>();
            let top = *indents.last().unwrap_or(&0);
            if expect_block {
                if width <= top {
                    return Err(SyntaxIssue::ExpectedIndent { line: line_no });
                }
                indents.push(width);
            } else if width > top {
                return Err(SyntaxIssue::UnexpectedIndent { line: line_no });
            } else {
                while indents.last().is_some_and(|&t| t > width) {
                    indents.pop();
                }
                if indents.last() != Some(&width) {
                    return Err(SyntaxIssue::InconsistentDedent { line: line_no });
                }
            }
            expect_block = false;
        }

        let chars: Vec<char> = line.chars().collect();
        let mut i = 0;
        let mut last_significant: Option<char> = None;
        while i < chars.len() {
            if let Some(q) = triple {
                // inside a triple-quoted string
                if chars[i] == '\\' {
                    i += 2;
                    continue;
                }
                if chars[i] == q && chars.get(i + 1) == Some(&q) && chars.get(i + 2) == Some(&q) {
                    triple = None;
                    last_significant = Some(q);
                    i += 3;
                } else {
                    i += 1;
                }
                continue;
            }
            let c = chars[i];
            match c {
                '#' => break,
                '"' | '\'' => {
                    if chars.get(i + 1) == Some(&c) && chars.get(i + 2) == Some(&c) {
                        triple = Some(c);
                        triple_start = line_no;
                        i += 3;
                        continue;
                    }
                    let mut j = i + 1;
                    let mut closed = false;
                    while j < chars.len() {
                        if chars[j] == '\\' {
                            j += 2;
                            continue;
                        }
                        if chars[j] == c {
                            closed = true;
                            break;
                        }
                        j += 1;
                    }
                    if !closed {
                        return Err(SyntaxIssue::UnterminatedString { line: line_no });
                    }
                    last_significant = Some(c);
                    i = j + 1;
                    continue;
                }
                '(' | '[' | '{' => brackets.push(c),
                ')' | ']' | '}' => match brackets.pop() {
                    Some(open) if closing(open) == c => {}
                    _ => return Err(SyntaxIssue::UnbalancedBracket { line: line_no }),
                },
                _ => {}
            }
            if !c.is_whitespace() {
                last_significant = Some(c);
            }
            i += 1;
        }
        if triple.is_none() && last_significant == Some('\\') && line.trim_end().ends_with('\\') {
            backslash_cont = true;
        } else if triple.is_none() && brackets.is_empty() && last_significant == Some(':') {
            expect_block = true;
        }
    }
    if triple.is_some() {
        return Err(SyntaxIssue::UnterminatedString { line: triple_start });
    }
    if !brackets.is_empty() {
        return Err(SyntaxIssue::UnbalancedBracket {
            line: code.lines().count(),
        });
    }
    if expect_block {
        return Err(SyntaxIssue::ExpectedIndent {
            line: code.lines().count() + 1,
        });
    }
    Ok(())
}

impl SyntaxChecker for StructuralChecker {
    fn is_valid(&self, code: &str) -> bool {
        structural_check(code).is_ok()
    }
}

/// Delegates to `<command...> <path-to-code-file>`; exit 0 means valid.
/// Timeouts and spawn failures count as invalid.
#[derive(Debug, Clone)]
pub struct ExternalChecker {
    command: Vec<String>,
    timeout: Duration,
}

impl ExternalChecker {
    pub fn new(command: Vec<String>, timeout: Duration) -> Result<Self, BehaviorError> {
        if command.first().is_none_or(|c| c.trim().is_empty()) {
            return Err(BehaviorError::EmptyCommand);
        }
        Ok(Self { command, timeout })
    }
}

impl SyntaxChecker for ExternalChecker {
    fn is_valid(&self, code: &str) -> bool {
        let file = tempfile::Builder::new().suffix(".code").tempfile();
        let Ok(mut file) = file else {
            return false;
        };
        if file.write_all(code.as_bytes()).and_then(|_| file.flush()).is_err() {
            return false;
        }
        let mut args: Vec<String> = self.command[1..].to_vec();
        args.push(file.path().display().to_string());
        matches!(
            run_with_timeout(&self.command[0], &args, None, self.timeout),
            Ok(CommandStatus::Exited(0))
        )
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
#[derive(Default)]
pub enum SyntaxCheckerConfig {
    #[default]
    Structural,
    External {
        command: Vec<String>,
        #[serde(default = "default_validator_timeout")]
        timeout_ms: u64,
    },
}

fn default_validator_timeout() -> u64 {
    5_000
}


impl SyntaxCheckerConfig {
    pub fn build(&self) -> Result<Box<dyn SyntaxChecker>, BehaviorError> {
        Ok(match self {
            SyntaxCheckerConfig::Structural => Box::new(StructuralChecker),
            SyntaxCheckerConfig::External {
                command,
                timeout_ms,
            } => Box::new(ExternalChecker::new(
                command.clone(),
                Duration::from_millis(*timeout_ms),
            )?),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Component {
    Syntax,
    EntryPoint,
    RiskFree,
    NoUndesirable,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ComponentResult {
    pub passed: bool,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatternMatch {
    pub pattern: String,
    pub line: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BehaviorReport {
    pub score: f64,
    pub components: BTreeMap<Component, ComponentResult>,
    pub matched_patterns: Vec<PatternMatch>,
}

/// `def <name>(` on its own line, tolerant of indentation and `async`.
pub fn defines_entry_point(code: &str, name: &str) -> bool {
    let re = Regex::new(&format!(r"(?m)^[ \t]*(?:async[ \t]+)?def[ \t]+{}[ \t]*\(", regex::escape(name)))
        .expect("escaped identifier forms a valid regex");
    re.is_match(code)
}

const HARDCODED_LABEL: &str = "hardcoded-return-constant";

fn hardcoded_returns(code: &str, out: &mut Vec<PatternMatch>) -> bool {
    let def_re = Regex::new(r"^([ \t]*)(?:async[ \t]+)?def[ \t]").unwrap();
    let ret_re = Regex::new(
        r"^([ \t]*)return[ \t]+[-+]?(?:\d[\d_]*(?:\.\d*)?(?:[eE][-+]?\d+)?|\.\d+)[ \t]*(?:#.*)?$",
    )
    .unwrap();
    let before = out.len();
    // (def indent, body indent once known)
    let mut current: Option<(usize, Option<usize>)> = None;
    for (idx, line) in code.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let indent = line.len() - line.trim_start().len();
        if let Some(c) = def_re.captures(line) {
            current = Some((c[1].len(), None));
            continue;
        }
        let Some((def_indent, body)) = current.as_mut() else {
            continue;
        };
        if indent <= *def_indent {
            current = None;
            continue;
        }
        let body_indent = *body.get_or_insert(indent);
        if indent == body_indent && ret_re.is_match(line) {
            out.push(PatternMatch {
                pattern: HARDCODED_LABEL.to_string(),
                line: idx + 1,
            });
        }
    }
    out.len() > before
}

/// A ready-to-use scorer: weights, compiled patterns and a syntax checker.
pub struct BehaviorScorer {
    weights: BehaviorWeights,
    risk: PatternSet,
    undesirable: PatternSet,
    flag_hardcoded_returns: bool,
    checker: Box<dyn SyntaxChecker>,
}

impl std::fmt::Debug for BehaviorScorer {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("BehaviorScorer")
            .field("weights", &self.weights)
            .finish_non_exhaustive()
    }
}

impl BehaviorScorer {
    pub fn new(
        weights: BehaviorWeights,
        patterns: &PatternConfig,
        checker: Box<dyn SyntaxChecker>,
    ) -> Result<Self, BehaviorError> {
        weights.validate()?;
        Ok(Self {
            weights,
            risk: PatternSet::compile(&patterns.risk)?,
            undesirable: PatternSet::compile(&patterns.undesirable)?,
            flag_hardcoded_returns: patterns.flag_hardcoded_returns,
            checker,
        })
    }

    pub fn with_defaults() -> Self {
        Self::new(
            BehaviorWeights::default(),
            &default_pattern_config(),
            Box::new(StructuralChecker),
        )
        .expect("default behavior configuration is valid")
    }

    pub fn weights(&self) -> &BehaviorWeights {
        &self.weights
    }

    /// Scores `code` as given; callers extract code blocks beforehand.
    pub fn score(&self, code: &str, entry_point: Option<&str>) -> BehaviorReport {
        let empty = code.trim().is_empty();
        let mut matched = Vec::new();

        let syntax = !empty && self.checker.is_valid(code);
        let entry = !empty && entry_point.is_none_or(|name| defines_entry_point(code, name));
        let risky = self.risk.scan(code, &mut matched);
        let mut undesirable = self.undesirable.scan(code, &mut matched);
        if self.flag_hardcoded_returns {
            undesirable |= hardcoded_returns(code, &mut matched);
        }

        let passed = [
            (Component::Syntax, syntax),
            (Component::EntryPoint, entry),
            (Component::RiskFree, !risky),
            (Component::NoUndesirable, !undesirable),
        ];
        let components: BTreeMap<Component, ComponentResult> = passed
            .into_iter()
            .map(|(c, ok)| {
                (
                    c,
                    ComponentResult {
                        passed: ok,
                        weight: self.weights.weight(c),
                    },
                )
            })
            .collect();
        let score = components
            .values()
            .filter(|r| r.passed)
            .map(|r| r.weight)
            .sum::<f64>()
            .clamp(0.0, 1.0);
        BehaviorReport {
            score,
            components,
            matched_patterns: matched,
        }
    }
}

/// Free-function form of [`BehaviorScorer::score`].
pub fn score_behavior(
    code: &str,
    entry_point: Option<&str>,
    weights: BehaviorWeights,
    patterns: &PatternConfig,
    checker: Box<dyn SyntaxChecker>,
) -> Result<BehaviorReport, BehaviorError> {
    Ok(BehaviorScorer::new(weights, patterns, checker)?.score(code, entry_point))
}
