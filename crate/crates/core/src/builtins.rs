//! Builtin program tools: calculator, corpus search, echo, and a
//! simulated-latency sleeper used by the concurrency tests.

use std::path::Path;

use thiserror::Error;

pub const CALCULATOR: &str = "calculator";
pub const CORPUS_SEARCH: &str = "corpus_search";
pub const ECHO: &str = "echo";
pub const SLEEP: &str = "sleep";

pub fn is_known(id: &str) -> bool {
    matches!(id, CALCULATOR | CORPUS_SEARCH | ECHO | SLEEP)
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum CalcError {
    #[error("division by zero")]
    DivisionByZero,
    #[error("invalid expression: {0}")]
    Invalid(String),
}

/// Evaluates an arithmetic expression with `+ - * /`, parentheses, and unary
/// minus. `2+3*4` evaluates to `14`.
pub fn evaluate(expr: &str) -> Result<f64, CalcError> {
    let mut parser = ExprParser {
        bytes: expr.as_bytes(),
        pos: 0,
    };
    let value = parser.expression()?;
    parser.skip_ws();
    if parser.pos != parser.bytes.len() {
        return Err(CalcError::Invalid(format!(
            "unexpected trailing input at byte {}",
            parser.pos
        )));
    }
    if !value.is_finite() {
        return Err(CalcError::Invalid("result is not finite".into()));
    }
    Ok(value)
}

/// Formats a calculator result the way tests and verifiers compare it:
/// integral values print without a fractional part.
pub fn format_number(value: f64) -> String {
    format!("{value}")
}

struct ExprParser<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl ExprParser<'_> {
    fn skip_ws(&mut self) {
        while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
    }

    fn peek(&mut self) -> Option<u8> {
        self.skip_ws();
        self.bytes.get(self.pos).copied()
    }

    fn expression(&mut self) -> Result<f64, CalcError> {
        let mut acc = self.term()?;
        while let Some(op @ (b'+' | b'-')) = self.peek() {
            self.pos += 1;
            let rhs = self.term()?;
            if op == b'+' {
                acc += rhs;
            } else {
                acc -= rhs;
            }
        }
        Ok(acc)
    }

    fn term(&mut self) -> Result<f64, CalcError> {
        let mut acc = self.factor()?;
        while let Some(op @ (b'*' | b'/')) = self.peek() {
            self.pos += 1;
            let rhs = self.factor()?;
            if op == b'*' {
                acc *= rhs;
            } else {
                if rhs == 0.0 {
                    return Err(CalcError::DivisionByZero);
                }
                acc /= rhs;
            }
        }
        Ok(acc)
    }

    fn factor(&mut self) -> Result<f64, CalcError> {
        match self.peek() {
            Some(b'-') => {
                self.pos += 1;
                Ok(-self.factor()?)
            }
            Some(b'(') => {
                self.pos += 1;
                let inner = self.expression()?;
                if self.peek() != Some(b')') {
                    return Err(CalcError::Invalid("missing closing parenthesis".into()));
                }
                self.pos += 1;
                Ok(inner)
            }
            Some(c) if c.is_ascii_digit() || c == b'.' => self.number(),
            Some(c) => Err(CalcError::Invalid(format!(
                "unexpected character '{}'",
                c as char
            ))),
            None => Err(CalcError::Invalid("unexpected end of expression".into())),
        }
    }

    fn number(&mut self) -> Result<f64, CalcError> {
        self.skip_ws();
        let start = self.pos;
        while self
            .bytes
            .get(self.pos)
            .is_some_and(|c| c.is_ascii_digit() || *c == b'.')
        {
            self.pos += 1;
        }
        let text = std::str::from_utf8(&self.bytes[start..self.pos]).expect("ascii digits");
        text.parse::<f64>()
            .map_err(|_| CalcError::Invalid(format!("bad number literal '{text}'")))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Doc {
    pub id: String,
    pub text: String,
}

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("cannot read corpus {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("corpus {path}: line {line} has no tab separator")]
    Malformed { path: String, line: usize },
}

/// A read-only document set, one `id<TAB>text` record per line.
#[derive(Debug, Clone, Default)]
pub struct Corpus {
    docs: Vec<Doc>,
}

impl Corpus {
    pub fn load(path: impl AsRef<Path>) -> Result<Self, CorpusError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| CorpusError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_str_content(&text).map_err(|line| CorpusError::Malformed {
            path: path.display().to_string(),
            line,
        })
    }

    /// Parses corpus text; on failure returns the offending 1-based line.
    pub fn from_str_content(text: &str) -> Result<Self, usize> {
        let mut docs = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let (id, body) = line.split_once('\t').ok_or(i + 1)?;
            docs.push(Doc {
                id: id.to_string(),
                text: body.to_string(),
            });
        }
        Ok(Self { docs })
    }

    pub fn len(&self) -> usize {
        self.docs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.docs.is_empty()
    }

    /// Top-k keyword match: a document scores one point per distinct query
    /// term it contains (case-insensitive), plus a bonus when the whole
    /// query appears as a phrase. Ties break by corpus order.
    pub fn search(&self, query: &str, k: usize) -> Vec<&Doc> {
        let query_lower = query.to_lowercase();
        let terms: Vec<&str> = query_lower.split_whitespace().collect();
        if terms.is_empty() || k == 0 {
            return Vec::new();
        }

        let mut scored: Vec<(usize, usize)> = Vec::new();
        for (idx, doc) in self.docs.iter().enumerate() {
            let text_lower = doc.text.to_lowercase();
            let mut score = terms.iter().filter(|t| text_lower.contains(**t)).count();
            if terms.len() > 1 && text_lower.contains(&query_lower) {
                score += terms.len();
            }
            if score > 0 {
                scored.push((score, idx));
            }
        }
        scored.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));
        scored.into_iter().take(k).map(|(_, idx)| &self.docs[idx]).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn arithmetic_precedence() {
        assert_eq!(evaluate("2+3*4").unwrap(), 14.0);
        assert_eq!(evaluate("(2+3)*4").unwrap(), 20.0);
        assert_eq!(evaluate("10/4").unwrap(), 2.5);
        assert_eq!(evaluate("-3 + 5").unwrap(), 2.0);
        assert_eq!(evaluate(" 2 + 2 ").unwrap(), 4.0);
    }

    #[test]
    fn division_by_zero_is_an_error() {
        assert_eq!(evaluate("1/0"), Err(CalcError::DivisionByZero));
        assert_eq!(evaluate("1/(2-2)"), Err(CalcError::DivisionByZero));
    }

    #[test]
    fn malformed_expressions_are_errors() {
        assert!(matches!(evaluate("2+"), Err(CalcError::Invalid(_))));
        assert!(matches!(evaluate("(1"), Err(CalcError::Invalid(_))));
        assert!(matches!(evaluate("two"), Err(CalcError::Invalid(_))));
        assert!(matches!(evaluate(""), Err(CalcError::Invalid(_))));
    }

    #[test]
    fn integral_results_format_without_fraction() {
        assert_eq!(format_number(evaluate("2+3*4").unwrap()), "14");
        assert_eq!(format_number(evaluate("10/4").unwrap()), "2.5");
    }

    fn fixture_corpus() -> Corpus {
        Corpus::from_str_content(
            "d1\tThe Eiffel Tower is 330 metres tall.\n\
             d2\tParis is the capital of France.\n\
             d3\tThe Louvre is a museum in Paris.\n",
        )
        .unwrap()
    }

    #[test]
    fn search_finds_the_eiffel_document() {
        let corpus = fixture_corpus();
        let hits = corpus.search("Eiffel", 3);
        assert_eq!(hits.len(), 1);
        assert_eq!(hits[0].id, "d1");
        assert!(hits[0].text.contains("330 metres"));
    }

    #[test]
    fn search_ranks_phrase_matches_first_and_respects_k() {
        let corpus = fixture_corpus();
        let hits = corpus.search("capital of France", 2);
        assert_eq!(hits[0].id, "d2");
        let hits = corpus.search("Paris", 1);
        assert_eq!(hits.len(), 1);
        assert_eq!(hits[0].id, "d2"); // corpus order breaks the tie
    }

    #[test]
    fn malformed_corpus_line_reports_line_number() {
        let err = Corpus::from_str_content("d1\tok\nno tab here\n").unwrap_err();
        assert_eq!(err, 2);
    }
}
