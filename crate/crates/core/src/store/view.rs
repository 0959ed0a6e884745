use std::collections::BTreeMap;
use std::sync::{Arc, OnceLock};

use serde_json::{json, Map, Value};

use super::event::{EventKind, WriteEvent};
use super::schema::RegistrySchema;
use crate::canonical::{self, Digest};
use crate::scalar::Values;

/// One registry: its schema and rows keyed by the key field.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Registry {
    pub schema: RegistrySchema,
    pub rows: BTreeMap<String, Values>,
}

#[derive(Debug)]
struct ViewInner {
    seq: u64,
    registries: BTreeMap<String, Arc<Registry>>,
    digest: OnceLock<Digest>,
}

/// Immutable point-in-time snapshot of every registry.
///
/// Cloning is cheap. Views built from one another share unchanged
/// registries.
#[derive(Debug, Clone)]
pub struct StoreView(Arc<ViewInner>);

impl PartialEq for StoreView {
    fn eq(&self, other: &Self) -> bool {
        self.seq() == other.seq() && self.digest() == other.digest()
    }
}

impl Default for StoreView {
    fn default() -> Self {
        StoreView::empty()
    }
}

impl StoreView {
    pub fn empty() -> Self {
        Self::from_parts(0, BTreeMap::new())
    }

    fn from_parts(seq: u64, registries: BTreeMap<String, Arc<Registry>>) -> Self {
        StoreView(Arc::new(ViewInner {
            seq,
            registries,
            digest: OnceLock::new(),
        }))
    }

    /// Sequence number of the last event folded into this view.
    pub fn seq(&self) -> u64 {
        self.0.seq
    }

    pub fn registry(&self, id: &str) -> Option<&Registry> {
        self.0.registries.get(id).map(Arc::as_ref)
    }

    pub fn schema(&self, id: &str) -> Option<&RegistrySchema> {
        self.registry(id).map(|r| &r.schema)
    }

    pub fn registry_ids(&self) -> impl Iterator<Item = &str> {
        self.0.registries.keys().map(String::as_str)
    }

    pub fn get(&self, registry: &str, key: &str) -> Option<&Values> {
        self.registry(registry)?.rows.get(key)
    }

    /// Canonical JSON of the content (schemas and rows, not the seq).
    pub fn canonical_dump(&self) -> Vec<u8> {
        let mut regs = Map::new();
        for (id, reg) in &self.0.registries {
            let rows: Map<String, Value> = reg
                .rows
                .iter()
                .map(|(k, v)| (k.clone(), serde_json::to_value(v).expect("scalars serialize")))
                .collect();
            regs.insert(id.clone(), json!({ "schema": reg.schema, "rows": rows }));
        }
        canonical::canonical_value_bytes(&json!({ "registries": regs }))
            .expect("store content contains no floats")
    }

    /// SHA-256 of [`canonical_dump`](Self::canonical_dump). Two views with the
    /// same content have the same digest regardless of how they were built.
    pub fn digest(&self) -> Digest {
        *self.0.digest.get_or_init(|| Digest::of(&self.canonical_dump()))
    }

    /// Folds one event into a new view, checking that it is consistent with
    /// this one. Used identically by live writes and replay.
    pub(crate) fn apply(&self, ev: &WriteEvent) -> Result<StoreView, String> {
        if ev.seq != self.seq() + 1 {
            return Err(format!("event seq {} does not follow {}", ev.seq, self.seq()));
        }
        let mut registries = self.0.registries.clone();
        match ev.kind {
            EventKind::Define => {
                let schema = ev.schema.as_ref().ok_or("define event without schema")?;
                if schema.registry_id != ev.registry_id {
                    return Err("define event names a different registry".into());
                }
                schema.validate()?;
                if registries.contains_key(&ev.registry_id) {
                    return Err(format!("registry {} already defined", ev.registry_id));
                }
                registries.insert(
                    ev.registry_id.clone(),
                    Arc::new(Registry {
                        schema: schema.clone(),
                        rows: BTreeMap::new(),
                    }),
                );
            }
            kind => {
                let reg = registries
                    .get_mut(&ev.registry_id)
                    .ok_or_else(|| format!("unknown registry {}", ev.registry_id))?;
                let key = ev.key.as_deref().ok_or("data event without key")?;
                let current = reg.rows.get(key);
                if current != ev.before.as_ref() {
                    return Err(format!("before-image of {}/{key} does not match", ev.registry_id));
                }
                match kind {
                    EventKind::Insert | EventKind::Update => {
                        let after = ev.after.as_ref().ok_or("write event without after-image")?;
                        if kind == EventKind::Insert && current.is_some() {
                            return Err(format!("{}/{key} already exists", ev.registry_id));
                        }
                        if kind == EventKind::Update && current.is_none() {
                            return Err(format!("{}/{key} does not exist", ev.registry_id));
                        }
                        if &reg.schema.conform(after)? != after {
                            return Err("after-image does not conform to the schema".into());
                        }
                        if reg.schema.key_of(after).as_deref() != Some(key) {
                            return Err("after-image key differs from event key".into());
                        }
                        Arc::make_mut(reg).rows.insert(key.to_string(), after.clone());
                    }
                    EventKind::Delete => {
                        if current.is_none() || ev.after.is_some() {
                            return Err(format!("bad delete of {}/{key}", ev.registry_id));
                        }
                        Arc::make_mut(reg).rows.remove(key);
                    }
                    EventKind::Define => unreachable!(),
                }
            }
        }
        Ok(Self::from_parts(ev.seq, registries))
    }
}
