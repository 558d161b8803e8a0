//! Key-tracking view over a YAML mapping.
//!
//! Every key read through an [`Obj`] is marked as consumed; whatever is left
//! when the view is dropped is reported as an unknown key.

use std::cell::RefCell;
use std::collections::BTreeSet;
use std::str::FromStr;

use serde_yaml::{Mapping, Value};

use crate::diag::{Diagnostic, Severity};

pub(crate) struct Ctx {
    diags: RefCell<Vec<Diagnostic>>,
    /// Strict mode has no defaults to fall back on: missing keys are errors.
    strict: bool,
}

impl Ctx {
    pub fn new(strict: bool) -> Self {
        Self {
            diags: RefCell::new(Vec::new()),
            strict,
        }
    }

    pub fn push(&self, d: Diagnostic) {
        self.diags.borrow_mut().push(d);
    }

    pub fn error(&self, path: &str, msg: impl Into<String>) {
        self.push(Diagnostic::error(path, msg));
    }

    pub fn warn(&self, path: &str, msg: impl Into<String>) {
        self.push(Diagnostic::warning(path, msg));
    }

    pub fn missing(&self, path: &str, what: &str) {
        if self.strict {
            self.error(path, format!("missing {what}"));
        } else {
            self.warn(path, format!("missing {what}; default applied"));
        }
    }

    pub fn into_diags(self) -> Vec<Diagnostic> {
        self.diags.into_inner()
    }
}

pub(crate) fn key_string(k: &Value) -> String {
    match k {
        Value::String(s) => s.clone(),
        Value::Number(n) => n.to_string(),
        Value::Bool(b) => b.to_string(),
        Value::Null => "null".into(),
        other => serde_yaml::to_string(other).unwrap_or_default().trim().to_string(),
    }
}

pub(crate) fn join(path: &str, key: &str) -> String {
    if path.is_empty() {
        key.to_string()
    } else {
        format!("{path}.{key}")
    }
}

pub(crate) fn as_f64(v: &Value) -> Option<f64> {
    match v {
        Value::Number(n) => n.as_f64(),
        _ => None,
    }
}

pub(crate) fn as_bool(v: &Value) -> Option<bool> {
    match v {
        Value::Bool(b) => Some(*b),
        Value::String(s) => match s.as_str() {
            "on" | "true" | "yes" => Some(true),
            "off" | "false" | "no" => Some(false),
            _ => None,
        },
        _ => None,
    }
}

/// Scalar rendered as text; numbers and booleans are accepted too.
pub(crate) fn as_text(v: &Value) -> Option<String> {
    match v {
        Value::String(s) => Some(s.clone()),
        Value::Number(n) => Some(n.to_string()),
        Value::Bool(b) => Some(b.to_string()),
        _ => None,
    }
}

pub(crate) struct Obj<'a> {
    map: &'a Mapping,
    pub path: String,
    used: RefCell<BTreeSet<String>>,
    pub ctx: &'a Ctx,
}

impl<'a> Obj<'a> {
    pub fn new(value: &'a Value, path: impl Into<String>, ctx: &'a Ctx) -> Option<Obj<'a>> {
        let path = path.into();
        match value {
            Value::Mapping(map) => Some(Obj {
                map,
                path,
                used: RefCell::new(BTreeSet::new()),
                ctx,
            }),
            _ => {
                ctx.error(&path, "expected a mapping");
                None
            }
        }
    }

    pub fn at(&self, key: &str) -> String {
        join(&self.path, key)
    }

    pub fn has(&self, key: &str) -> bool {
        self.map.iter().any(|(k, _)| key_string(k) == key)
    }

    /// Looks up `key`, marking it consumed.
    pub fn raw(&self, key: &str) -> Option<&'a Value> {
        let found = self
            .map
            .iter()
            .find(|(k, _)| key_string(k) == key)
            .map(|(_, v)| v);
        if found.is_some() {
            self.used.borrow_mut().insert(key.to_string());
        }
        found
    }

    /// Optional nested mapping; `null` counts as absent.
    pub fn obj(&self, key: &str) -> Option<Obj<'a>> {
        match self.raw(key)? {
            Value::Null => None,
            v => Obj::new(v, self.at(key), self.ctx),
        }
    }

    /// Nested mapping that should be present; reports when missing.
    pub fn block(&self, key: &str) -> Option<Obj<'a>> {
        if !self.has(key) {
            self.ctx.missing(&self.at(key), "block");
            return None;
        }
        self.obj(key)
    }

    /// All entries in source order; marks every key consumed.
    pub fn entries(&self) -> Vec<(String, &'a Value)> {
        let out: Vec<_> = self.map.iter().map(|(k, v)| (key_string(k), v)).collect();
        let mut used = self.used.borrow_mut();
        for (k, _) in &out {
            used.insert(k.clone());
        }
        out
    }

    fn read<T>(&self, key: &str, what: &str, conv: impl Fn(&Value) -> Option<T>) -> Option<T> {
        match self.raw(key) {
            None => {
                self.ctx.missing(&self.at(key), "key");
                None
            }
            Some(v) => {
                let out = conv(v);
                if out.is_none() {
                    self.ctx.error(&self.at(key), format!("expected {what}"));
                }
                out
            }
        }
    }

    pub fn set_string(&self, key: &str, target: &mut String) {
        if let Some(v) = self.read(key, "a string", as_text) {
            *target = v;
        }
    }

    /// Present-or-absent string; absent leaves `None` without a diagnostic.
    pub fn opt_string(&self, key: &str) -> Option<String> {
        let v = self.raw(key)?;
        if v.is_null() {
            return None;
        }
        let s = as_text(v);
        if s.is_none() {
            self.ctx.error(&self.at(key), "expected a string");
        }
        s
    }

    pub fn set_f64(&self, key: &str, target: &mut f64) {
        if let Some(v) = self.read(key, "a number", as_f64) {
            *target = v;
        }
    }

    pub fn set_bool(&self, key: &str, target: &mut bool) {
        if let Some(v) = self.read(key, "a boolean", as_bool) {
            *target = v;
        }
    }

    pub fn set_count<T: TryFrom<u64>>(&self, key: &str, target: &mut T) {
        let conv = |v: &Value| match v {
            Value::Number(n) => n.as_u64().and_then(|u| T::try_from(u).ok()),
            _ => None,
        };
        if let Some(v) = self.read(key, "a non-negative integer", conv) {
            *target = v;
        }
    }

    pub fn set_parsed<T>(&self, key: &str, target: &mut T)
    where
        T: FromStr<Err = String>,
    {
        let path = self.at(key);
        if let Some(s) = self.read(key, "a string", as_text) {
            match s.parse() {
                Ok(v) => *target = v,
                Err(e) => self.ctx.error(&path, e),
            }
        }
    }

    pub fn set_strings(&self, key: &str, target: &mut Vec<String>) {
        let path = self.at(key);
        match self.raw(key) {
            None => self.ctx.missing(&path, "key"),
            Some(v) => {
                if let Some(list) = string_list(v, &path, self.ctx) {
                    *target = list;
                }
            }
        }
    }
}

pub(crate) fn string_list(v: &Value, path: &str, ctx: &Ctx) -> Option<Vec<String>> {
    match v {
        Value::Null => Some(Vec::new()),
        Value::Sequence(items) => {
            let mut out = Vec::with_capacity(items.len());
            for (i, item) in items.iter().enumerate() {
                match as_text(item) {
                    Some(s) => out.push(s),
                    None => ctx.error(&format!("{path}[{i}]"), "expected a string"),
                }
            }
            Some(out)
        }
        _ => {
            ctx.error(path, "expected a list");
            None
        }
    }
}

impl Drop for Obj<'_> {
    fn drop(&mut self) {
        let used = self.used.borrow();
        for (k, _) in self.map.iter() {
            let key = key_string(k);
            if !used.contains(&key) {
                self.ctx.push(Diagnostic::new(
                    Severity::Warning,
                    join(&self.path, &key),
                    format!("unknown key \"{key}\""),
                ));
            }
        }
    }
}
