//! Proof-script and proof-state parsing.
//!
//! Scripts are split into executable tactic blocks: comments are dropped,
//! blank lines removed, the common indentation stripped, and physical lines
//! merged while a block is still open. A line continues the current block
//! when the previous line ends with `<;>` (or the line itself starts with
//! it), when a `(`, `[` or `{` opened earlier in the block is still
//! unclosed, or when the line is indented deeper than the block's first
//! line.
//!
//! Pretty-printed states are split into goal blocks on blank lines; a block
//! counts as an open goal when it carries exactly one `⊢`.

use thiserror::Error;

use crate::types::Tactic;

/// Marker that introduces the target of a goal in pretty-printed states.
pub const TARGET_MARKER: char = '⊢';

const COMBINATOR: &str = "<;>";

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ParseFailure {
    #[error("script contains no tactics")]
    Empty,
    #[error("line {line}: indented line has no block to continue")]
    OrphanContinuation { line: usize },
    #[error("line {line}: `{found}` does not close any open delimiter")]
    UnbalancedDelimiter { line: usize, found: char },
    #[error("script ends with unclosed `{open}`")]
    UnclosedDelimiter { open: char },
    #[error("script ends inside a string literal")]
    UnterminatedString,
    #[error("script ends inside a block comment")]
    UnterminatedComment,
    #[error("script ends with a dangling `<;>`")]
    DanglingCombinator,
}

/// Removes `--` line comments and (nested) `/- -/` block comments.
///
/// Newlines inside block comments are kept so line numbers stay stable.
fn strip_comments(script: &str) -> Result<String, ParseFailure> {
    let chars: Vec<char> = script.chars().collect();
    let mut out = String::with_capacity(script.len());
    let mut i = 0;
    let mut in_string = false;
    let mut comment_depth = 0usize;
    while i < chars.len() {
        let c = chars[i];
        let next = chars.get(i + 1).copied();
        if comment_depth > 0 {
            match (c, next) {
                ('/', Some('-')) => {
                    comment_depth += 1;
                    i += 2;
                }
                ('-', Some('/')) => {
                    comment_depth -= 1;
                    i += 2;
                }
                ('\n', _) => {
                    out.push('\n');
                    i += 1;
                }
                _ => i += 1,
            }
            continue;
        }
        if in_string {
            out.push(c);
            if c == '\\' {
                if let Some(n) = next {
                    out.push(n);
                    i += 1;
                }
            } else if c == '"' {
                in_string = false;
            }
            i += 1;
            continue;
        }
        match (c, next) {
            ('"', _) => {
                in_string = true;
                out.push(c);
                i += 1;
            }
            ('-', Some('-')) => {
                while i < chars.len() && chars[i] != '\n' {
                    i += 1;
                }
            }
            ('/', Some('-')) => {
                comment_depth = 1;
                i += 2;
            }
            _ => {
                out.push(c);
                i += 1;
            }
        }
    }
    if comment_depth > 0 {
        return Err(ParseFailure::UnterminatedComment);
    }
    Ok(out)
}

fn indent_width(line: &str) -> usize {
    line.chars().take_while(|c| *c == ' ' || *c == '\t').count()
}

fn drop_indent(line: &str, width: usize) -> &str {
    let cut = line
        .char_indices()
        .nth(width)
        .map(|(i, _)| i)
        .unwrap_or(line.len());
    &line[cut..]
}

/// Delimiter and string state carried across the lines of one block.
#[derive(Default)]
struct Balance {
    open: Vec<char>,
    in_string: bool,
}

impl Balance {
    fn is_open(&self) -> bool {
        self.in_string || !self.open.is_empty()
    }

    fn feed(&mut self, line: &str, line_no: usize) -> Result<(), ParseFailure> {
        let mut escaped = false;
        for c in line.chars() {
            if self.in_string {
                if escaped {
                    escaped = false;
                } else if c == '\\' {
                    escaped = true;
                } else if c == '"' {
                    self.in_string = false;
                }
                continue;
            }
            match c {
                '"' => self.in_string = true,
                '(' | '[' | '{' => self.open.push(c),
                ')' | ']' | '}' => {
                    let want = match c {
                        ')' => '(',
                        ']' => '[',
                        _ => '{',
                    };
                    if self.open.pop() != Some(want) {
                        return Err(ParseFailure::UnbalancedDelimiter {
                            line: line_no,
                            found: c,
                        });
                    }
                }
                _ => {}
            }
        }
        Ok(())
    }
}

/// Splits a proof body into tactic blocks.
pub fn parse_proof_script(script_text: &str) -> Result<Vec<Tactic>, ParseFailure> {
    let stripped = strip_comments(script_text)?;
    // (1-based line number, text without trailing whitespace)
    let lines: Vec<(usize, &str)> = stripped
        .split('\n')
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim_end()))
        .filter(|(_, l)| !l.is_empty())
        .collect();
    if lines.is_empty() {
        return Err(ParseFailure::Empty);
    }
    let common = lines.iter().map(|(_, l)| indent_width(l)).min().unwrap_or(0);

    let mut blocks: Vec<String> = Vec::new();
    let mut current: Option<(String, usize)> = None;
    let mut balance = Balance::default();
    let mut after_combinator = false;

    for (line_no, raw) in lines {
        let line = drop_indent(raw, common);
        let indent = indent_width(line);
        let continues = match &current {
            Some((_, block_indent)) => {
                after_combinator
                    || balance.is_open()
                    || indent > *block_indent
                    || line.trim_start().starts_with(COMBINATOR)
            }
            None => false,
        };
        if continues {
            let (text, _) = current.as_mut().expect("continuation requires a block");
            text.push('\n');
            text.push_str(line);
        } else {
            if current.is_none() && indent > 0 {
                return Err(ParseFailure::OrphanContinuation { line: line_no });
            }
            if let Some((text, _)) = current.take() {
                blocks.push(text);
            }
            current = Some((line.to_string(), indent));
        }
        balance.feed(line, line_no)?;
        after_combinator = line.ends_with(COMBINATOR);
    }

    if balance.in_string {
        return Err(ParseFailure::UnterminatedString);
    }
    if let Some(&open) = balance.open.last() {
        return Err(ParseFailure::UnclosedDelimiter { open });
    }
    if after_combinator {
        return Err(ParseFailure::DanglingCombinator);
    }
    if let Some((text, _)) = current {
        blocks.push(text);
    }
    blocks
        .into_iter()
        .map(|b| Tactic::new(b).map_err(|_| ParseFailure::Empty))
        .collect()
}

/// One blank-line-delimited block of a pretty-printed state.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GoalBlock {
    pub text: String,
    pub has_single_target: bool,
}

impl GoalBlock {
    fn new(text: String) -> Self {
        let has_single_target = text.chars().filter(|c| *c == TARGET_MARKER).count() == 1;
        GoalBlock {
            text,
            has_single_target,
        }
    }
}

/// Splits a pretty-printed state on runs of blank lines.
pub fn parse_proof_state(pretty: &str) -> Vec<GoalBlock> {
    let mut blocks = Vec::new();
    let mut current: Vec<&str> = Vec::new();
    for line in pretty.lines() {
        if line.trim().is_empty() {
            if !current.is_empty() {
                blocks.push(GoalBlock::new(current.join("\n")));
                current.clear();
            }
        } else {
            current.push(line);
        }
    }
    if !current.is_empty() {
        blocks.push(GoalBlock::new(current.join("\n")));
    }
    blocks
}

/// Number of goal blocks carrying exactly one target marker.
///
/// Empty text and the environment's `no goals` completion text both count
/// as zero, since neither contains a marker.
pub fn count_open_goals(pretty: &str) -> usize {
    parse_proof_state(pretty)
        .iter()
        .filter(|b| b.has_single_target)
        .count()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn blocks(s: &str) -> Vec<String> {
        parse_proof_script(s)
            .unwrap()
            .into_iter()
            .map(String::from)
            .collect()
    }

    #[test]
    fn plain_lines_split() {
        assert_eq!(blocks("intro h\nexact h"), ["intro h", "exact h"]);
    }

    #[test]
    fn combinator_merges() {
        assert_eq!(blocks("constructor <;>\n  simp"), ["constructor <;>\n  simp"]);
    }

    #[test]
    fn open_paren_merges() {
        assert_eq!(
            blocks("have h : (1 +\n  1) = 2 := by norm_num\nexact h"),
            ["have h : (1 +\n  1) = 2 := by norm_num", "exact h"]
        );
    }

    #[test]
    fn orphan_indent_fails() {
        assert_eq!(
            parse_proof_script("  exact h\nintro h"),
            Err(ParseFailure::OrphanContinuation { line: 1 })
        );
    }

    #[test]
    fn empty_script_fails() {
        assert_eq!(parse_proof_script(""), Err(ParseFailure::Empty));
        assert_eq!(parse_proof_script("  \n\n -- only a comment\n"), Err(ParseFailure::Empty));
    }

    #[test]
    fn comments_and_strings() {
        assert_eq!(blocks("simp -- (unbalanced in comment\nring"), ["simp", "ring"]);
        assert_eq!(blocks("/- a /- nested -/ (\n-/\nring"), ["ring"]);
        assert_eq!(blocks("trace \"(\"\nring"), ["trace \"(\"", "ring"]);
        assert_eq!(blocks("trace \"-- not a comment\""), ["trace \"-- not a comment\""]);
        assert_eq!(parse_proof_script("/- open"), Err(ParseFailure::UnterminatedComment));
        assert_eq!(parse_proof_script("trace \"abc"), Err(ParseFailure::UnterminatedString));
    }

    #[test]
    fn malformed_delimiters() {
        assert_eq!(
            parse_proof_script("exact (h"),
            Err(ParseFailure::UnclosedDelimiter { open: '(' })
        );
        assert_eq!(
            parse_proof_script("exact h)"),
            Err(ParseFailure::UnbalancedDelimiter { line: 1, found: ')' })
        );
        assert_eq!(
            parse_proof_script("exact (h]"),
            Err(ParseFailure::UnbalancedDelimiter { line: 1, found: ']' })
        );
        assert_eq!(parse_proof_script("simp <;>"), Err(ParseFailure::DanglingCombinator));
    }

    #[test]
    fn state_blocks() {
        let s = "case h\nn : ℕ\n⊢ n + 0 = n\n\ncase h2\n⊢ 0 < 1";
        let b = parse_proof_state(s);
        assert_eq!(b.len(), 2);
        assert!(b.iter().all(|b| b.has_single_target));
        assert_eq!(count_open_goals(s), 2);
        assert!(parse_proof_state("").is_empty());
        let merged = parse_proof_state("⊢ A\n⊢ B");
        assert_eq!(merged.len(), 1);
        assert!(!merged[0].has_single_target);
        assert_eq!(count_open_goals("⊢ True"), 1);
        assert_eq!(count_open_goals("  no goals \n"), 0);
        assert_eq!(count_open_goals("No Goals"), 0);
    }

    fn script_line() -> impl Strategy<Value = String> {
        prop_oneof![
            "[a-z_]{1,6}( [a-z0-9]{1,3}){0,2}",
            "[a-z]{1,4} \\([a-z]{1,3}\\)",
            "[a-z]{1,4} <;>",
            "  [a-z]{1,5}",
            "",
        ]
    }

    proptest! {
        #[test]
        fn reparse_is_identity(lines in prop::collection::vec(script_line(), 1..12)) {
            let script = lines.join("\n");
            if let Ok(first) = parse_proof_script(&script) {
                let joined = first.iter().map(Tactic::as_str).collect::<Vec<_>>().join("\n");
                prop_assert_eq!(parse_proof_script(&joined).unwrap(), first);
            }
        }

        #[test]
        fn count_matches_blocks(text in "([a-z ⊢:\n]{0,8}\n?){0,8}") {
            let n = parse_proof_state(&text).iter().filter(|b| b.has_single_target).count();
            prop_assert_eq!(count_open_goals(&text), n);
        }

        #[test]
        fn whitespace_has_no_goals(ws in "[ \t\n]{0,20}") {
            prop_assert_eq!(count_open_goals(&ws), 0);
        }
    }
}
