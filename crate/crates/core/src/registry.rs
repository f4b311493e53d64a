//! Named strategy lookup.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::sharing::{Broadcast, Isolated, SharingPolicy};

#[derive(Debug, Error, PartialEq, Eq)]
#[error("unknown {kind} {name:?}; known: {known}")]
pub struct UnknownStrategy {
    pub kind: &'static str,
    pub name: String,
    pub known: String,
}

pub type Factory<T> = fn() -> Box<T>;

/// Maps names to factories for one family of trait objects.
pub struct Registry<T: ?Sized> {
    kind: &'static str,
    entries: BTreeMap<&'static str, Factory<T>>,
}

impl<T: ?Sized> Registry<T> {
    pub fn new(kind: &'static str) -> Self {
        Self {
            kind,
            entries: BTreeMap::new(),
        }
    }

    /// Later registrations under the same name replace earlier ones.
    pub fn register(&mut self, name: &'static str, factory: Factory<T>) -> &mut Self {
        self.entries.insert(name, factory);
        self
    }

    pub fn create(&self, name: &str) -> Result<Box<T>, UnknownStrategy> {
        self.entries
            .get(name)
            .map(|f| f())
            .ok_or_else(|| UnknownStrategy {
                kind: self.kind,
                name: name.to_string(),
                known: self.names().collect::<Vec<_>>().join(", "),
            })
    }

    pub fn names(&self) -> impl Iterator<Item = &'static str> + '_ {
        self.entries.keys().copied()
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.contains_key(name)
    }
}

/// The built-in sharing policies: `isolated` and `shared`.
pub fn sharing_policies() -> Registry<dyn SharingPolicy> {
    let mut r: Registry<dyn SharingPolicy> = Registry::new("sharing policy");
    r.register("isolated", || Box::new(Isolated) as Box<dyn SharingPolicy>)
        .register("shared", || Box::new(Broadcast) as Box<dyn SharingPolicy>);
    r
}
