//! Line-oriented reader shared by the text file formats.

use std::str::FromStr;

use crate::{Error, Result, FORMAT_TAG};

pub(crate) fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

pub(crate) fn join_f64<'a>(xs: impl IntoIterator<Item = &'a f64>) -> String {
    xs.into_iter().map(|x| fmt_f64(*x)).collect::<Vec<_>>().join(" ")
}

/// Iterates over non-blank lines, remembering 1-based line numbers for error messages.
pub(crate) struct Lines<'a> {
    inner: std::iter::Enumerate<std::str::Lines<'a>>,
    line: usize,
}

impl<'a> Lines<'a> {
    pub(crate) fn new(text: &'a str) -> Self {
        Self {
            inner: text.lines().enumerate(),
            line: 0,
        }
    }

    #[cfg(test)]
    pub(crate) fn line(&self) -> usize {
        self.line
    }

    pub(crate) fn next_line(&mut self) -> Result<&'a str> {
        self.try_next_line().ok_or(Error::UnexpectedEof)
    }

    pub(crate) fn try_next_line(&mut self) -> Option<&'a str> {
        for (i, l) in self.inner.by_ref() {
            if !l.trim().is_empty() {
                self.line = i + 1;
                return Some(l.trim());
            }
        }
        None
    }

    pub(crate) fn expect_tag(&mut self) -> Result<()> {
        let tag = self.next_line()?;
        if tag != FORMAT_TAG {
            return Err(Error::Version {
                expected: FORMAT_TAG.into(),
                found: tag.into(),
            });
        }
        Ok(())
    }

    pub(crate) fn error(&self, msg: impl Into<String>) -> Error {
        Error::Parse {
            line: self.line,
            msg: msg.into(),
        }
    }

    /// Parses a whitespace-separated line of exactly `n` values.
    pub(crate) fn values<T: FromStr>(&mut self, n: usize) -> Result<Vec<T>>
    where
        T::Err: std::fmt::Display,
    {
        let line = self.next_line()?;
        let vals = parse_fields(line).map_err(|e| self.error(e))?;
        if vals.len() != n {
            return Err(self.error(format!("expected {n} values, found {}", vals.len())));
        }
        Ok(vals)
    }
}

pub(crate) fn parse_fields<T: FromStr>(line: &str) -> std::result::Result<Vec<T>, String>
where
    T::Err: std::fmt::Display,
{
    line.split_whitespace()
        .map(|x| x.parse::<T>().map_err(|e| format!("`{x}`: {e}")))
        .collect()
}

pub(crate) fn parse_field<T: FromStr>(field: &str, what: &str) -> std::result::Result<T, String>
where
    T::Err: std::fmt::Display,
{
    field.parse::<T>().map_err(|e| format!("{what} `{field}`: {e}"))
}
