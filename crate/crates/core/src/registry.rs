//! Name-keyed factories for interchangeable strategies (advisors, diagnosers,
//! tuning strategies). Each registry is built once with its defaults and can
//! be extended by callers before lookups.

use std::collections::BTreeMap;

use crate::error::{Error, Result};

type Factory<T, C> = Box<dyn Fn(&C) -> Result<Box<T>> + Send + Sync>;

pub struct Registry<T: ?Sized, C> {
    kind: &'static str,
    factories: BTreeMap<String, Factory<T, C>>,
}

impl<T: ?Sized, C> Registry<T, C> {
    pub fn new(kind: &'static str) -> Self {
        Registry {
            kind,
            factories: BTreeMap::new(),
        }
    }

    /// Registers `factory` under `name`, replacing any previous entry.
    pub fn register<F>(&mut self, name: &str, factory: F) -> &mut Self
    where
        F: Fn(&C) -> Result<Box<T>> + Send + Sync + 'static,
    {
        self.factories.insert(name.to_string(), Box::new(factory));
        self
    }

    pub fn contains(&self, name: &str) -> bool {
        self.factories.contains_key(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.factories.keys().map(String::as_str)
    }

    pub fn create(&self, name: &str, config: &C) -> Result<Box<T>> {
        match self.factories.get(name) {
            Some(f) => f(config),
            None => Err(Error::UnknownStrategy {
                kind: self.kind,
                name: name.to_string(),
                suggestion: closest(name, self.names()),
            }),
        }
    }
}

fn closest<'a>(name: &str, candidates: impl Iterator<Item = &'a str>) -> Option<String> {
    candidates
        .map(|c| (edit_distance(name, c), c))
        .filter(|(d, c)| *d <= c.len().max(name.len()) / 2)
        .min()
        .map(|(_, c)| c.to_string())
}

fn edit_distance(a: &str, b: &str) -> usize {
    let b: Vec<char> = b.chars().collect();
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    for (i, ca) in a.chars().enumerate() {
        let mut cur = vec![i + 1; b.len() + 1];
        for (j, cb) in b.iter().enumerate() {
            let sub = prev[j] + usize::from(ca != *cb);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        prev = cur;
    }
    prev[b.len()]
}
