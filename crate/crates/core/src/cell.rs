//! The `method:key=value,...` grammar used to describe experiment cells.
//!
//! `slic:n_segments=64,compactness=10` names a method and its parameters. A
//! token without `=` extends the previous key's value list, so
//! `fgsm:eps=0.02,0.06,0.1` gives `eps` three values.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Cell {
    pub name: String,
    pub params: Vec<(String, Vec<String>)>,
}

impl Cell {
    pub fn parse(text: &str) -> Result<Self> {
        let text = text.trim();
        let (name, rest) = match text.split_once(':') {
            Some((n, r)) => (n.trim(), Some(r)),
            None => (text, None),
        };
        if name.is_empty() {
            return Err(Error::Config(format!("cell {text:?} has no method name")));
        }
        let mut params: Vec<(String, Vec<String>)> = Vec::new();
        for token in rest.into_iter().flat_map(|r| r.split(',')) {
            let token = token.trim();
            if token.is_empty() {
                continue;
            }
            match token.split_once('=') {
                Some((k, v)) => {
                    let k = k.trim().replace('-', "_");
                    if params.iter().any(|(have, _)| *have == k) {
                        return Err(Error::Config(format!("{text:?}: key {k} given twice")));
                    }
                    params.push((k, vec![v.trim().to_owned()]));
                }
                None => match params.last_mut() {
                    Some((_, values)) => values.push(token.to_owned()),
                    None => {
                        return Err(Error::Config(format!(
                            "{text:?}: value {token:?} does not follow a key"
                        )))
                    }
                },
            }
        }
        Ok(Cell {
            name: name.to_ascii_lowercase().replace('_', "-"),
            params,
        })
    }

    /// Fails on any key outside `allowed`.
    pub fn expect_keys(&self, allowed: &[&str]) -> Result<()> {
        for (k, _) in &self.params {
            if !allowed.contains(&k.as_str()) {
                return Err(Error::Config(format!(
                    "{}: unknown parameter {k:?} (expected one of {})",
                    self.name,
                    allowed.join(", ")
                )));
            }
        }
        Ok(())
    }

    pub fn values(&self, key: &str) -> Option<&[String]> {
        self.params
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_slice())
    }

    /// The single value of `key` parsed as `T`, or `default` when absent.
    pub fn get<T: FromStr>(&self, key: &str, default: T) -> Result<T> {
        match self.values(key) {
            None => Ok(default),
            Some([v]) => v
                .parse()
                .map_err(|_| Error::Config(format!("{}: cannot parse {key}={v}", self.name))),
            Some(vs) => Err(Error::Config(format!(
                "{}: {key} takes one value, got {}",
                self.name,
                vs.len()
            ))),
        }
    }

    pub fn get_list<T: FromStr>(&self, key: &str, default: &[T]) -> Result<Vec<T>>
    where
        T: Clone,
    {
        match self.values(key) {
            None => Ok(default.to_vec()),
            Some(vs) => vs
                .iter()
                .map(|v| {
                    v.parse()
                        .map_err(|_| Error::Config(format!("{}: cannot parse {key} value {v}", self.name)))
                })
                .collect(),
        }
    }
}

impl fmt::Display for Cell {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name)?;
        for (i, (k, vs)) in self.params.iter().enumerate() {
            f.write_str(if i == 0 { ":" } else { "," })?;
            write!(f, "{k}={}", vs.join(","))?;
        }
        Ok(())
    }
}
