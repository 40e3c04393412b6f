//! Line-oriented `key value...` text used by the model files.

use std::fmt::Write as _;

use crate::error::{Error, Result};

pub(crate) struct TextWriter {
    buf: String,
}

impl TextWriter {
    pub fn new() -> Self {
        Self { buf: String::new() }
    }

    pub fn line(&mut self, key: &str, fields: &[String]) {
        self.buf.push_str(key);
        for f in fields {
            self.buf.push(' ');
            self.buf.push_str(f);
        }
        self.buf.push('\n');
    }

    pub fn floats(&mut self, key: &str, values: impl IntoIterator<Item = f64>) {
        self.buf.push_str(key);
        for v in values {
            // `{:e}` prints the shortest representation that parses back exactly
            let _ = write!(self.buf, " {v:e}");
        }
        self.buf.push('\n');
    }

    pub fn finish(self) -> String {
        self.buf
    }
}

pub(crate) struct TextReader<'a> {
    lines: Vec<(usize, &'a str)>,
    pos: usize,
}

impl<'a> TextReader<'a> {
    /// Blank lines and `#` comments are skipped.
    pub fn new(text: &'a str) -> Self {
        let lines = text
            .lines()
            .enumerate()
            .map(|(i, l)| (i + 1, l.trim()))
            .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'))
            .collect();
        Self { lines, pos: 0 }
    }

    fn line_no(&self) -> usize {
        self.lines
            .get(self.pos)
            .or_else(|| self.lines.last())
            .map_or(0, |(n, _)| *n)
    }

    pub fn error(&self, reason: impl Into<String>) -> Error {
        Error::Parse {
            line: self.line_no(),
            reason: reason.into(),
        }
    }

    pub fn peek_key(&self) -> Option<&'a str> {
        self.lines
            .get(self.pos)
            .and_then(|(_, l)| l.split_whitespace().next())
    }

    /// Consumes the next line, which must start with `key`, and returns the
    /// remaining fields.
    pub fn expect(&mut self, key: &str) -> Result<Vec<&'a str>> {
        let Some(&(_, line)) = self.lines.get(self.pos) else {
            return Err(self.error(format!("unexpected end of file, expected `{key}`")));
        };
        let mut it = line.split_whitespace();
        let found = it.next().unwrap_or("");
        if found != key {
            return Err(self.error(format!("expected `{key}`, found `{found}`")));
        }
        self.pos += 1;
        Ok(it.collect())
    }

    pub fn expect_usize(&mut self, key: &str) -> Result<usize> {
        let f = self.expect(key)?;
        self.pos -= 1;
        let v = match f.as_slice() {
            [v] => v.parse().map_err(|_| self.error(format!("bad integer `{v}` for `{key}`"))),
            _ => Err(self.error(format!("`{key}` takes one integer"))),
        };
        self.pos += 1;
        v
    }

    pub fn expect_word(&mut self, key: &str) -> Result<&'a str> {
        let f = self.expect(key)?;
        match f.as_slice() {
            [v] => Ok(v),
            _ => {
                self.pos -= 1;
                Err(self.error(format!("`{key}` takes one value")))
            }
        }
    }

    pub fn expect_floats(&mut self, key: &str, count: usize) -> Result<Vec<f64>> {
        let f = self.expect(key)?;
        self.pos -= 1;
        if f.len() != count {
            return Err(self.error(format!("`{key}` needs {count} values, found {}", f.len())));
        }
        let mut out = Vec::with_capacity(count);
        for v in f {
            match v.parse::<f64>() {
                Ok(x) if x.is_finite() => out.push(x),
                _ => return Err(self.error(format!("bad number `{v}`"))),
            }
        }
        self.pos += 1;
        Ok(out)
    }

    pub fn at_end(&self) -> bool {
        self.pos >= self.lines.len()
    }
}
