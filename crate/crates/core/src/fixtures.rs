//! Scenario fixtures: the ship voyage (sauna rules under the ship's house
//! rules and in Iranian waters) and the Slovenian civil registries (child
//! support, driving permits, land transfer).

use std::collections::BTreeMap;

use chrono::{DateTime, Duration, NaiveDate, TimeZone, Utc};
use serde::Deserialize;

use crate::calculus::LegalFrame;
use crate::command::{receipt_id_for, AuditEntry, AuditLog, Authority};
use crate::canonical::{self, Digest};
use crate::scalar::{NationalId, Values};
use crate::store::{RegistrySchema, Store, StoreError, WriteOp, WriteRequest};

pub const SHIP_FRAME_JSON: &str = include_str!("../fixtures/ship_frame.json");
pub const IRAN_FRAME_JSON: &str = include_str!("../fixtures/iran_frame.json");
pub const SI_FRAME_JSON: &str = include_str!("../fixtures/si_frame.json");
pub const SHIP_DATA_JSON: &str = include_str!("../fixtures/ship_data.json");
pub const SI_DATA_JSON: &str = include_str!("../fixtures/si_data.json");

/// Passengers and residents referenced by tests and examples.
pub mod who {
    pub const EVE: &str = "EVE";
    pub const MOTHER: &str = "MOTHER";
    pub const FATHER: &str = "FATHER";
    pub const FIONA: &str = "FIONA";

    pub const PARENT_1: &str = "P1";
    pub const PARENT_2: &str = "P2";
    pub const DRIVER: &str = "D1";
    pub const PRESIDENT: &str = "PRES";
    pub const MEMBER: &str = "MEMB";
    pub const INSPECTOR: &str = "INSP";
    pub const POLICE: &str = "POL1";
    pub const REGISTRAR: &str = "REG1";
    pub const OFFICIAL: &str = "OFF1";
    pub const SELLER: &str = "S1";
    pub const BUYER: &str = "B2";
    /// Requester recorded on bootstrap events.
    pub const BOOTSTRAP: &str = "BOOTSTRAP";
}

pub const SHIP_TAGS: [&str; 2] = ["international", "ship"];
pub const IRAN_TAGS: [&str; 2] = ["iran", "ship"];
pub const SI_TAGS: [&str; 1] = ["si"];
pub const LAND_PARCEL: &str = "KO1722-451";

pub fn ship_frame() -> LegalFrame {
    LegalFrame::from_json(SHIP_FRAME_JSON.as_bytes()).expect("ship frame fixture is valid")
}

pub fn iran_frame() -> LegalFrame {
    LegalFrame::from_json(IRAN_FRAME_JSON.as_bytes()).expect("iran frame fixture is valid")
}

pub fn si_frame() -> LegalFrame {
    LegalFrame::from_json(SI_FRAME_JSON.as_bytes()).expect("si frame fixture is valid")
}

/// First day of the voyage.
pub fn voyage_day_1() -> NaiveDate {
    NaiveDate::from_ymd_opt(2026, 7, 1).expect("valid date")
}

/// Noon UTC on voyage day `n` (1-based).
pub fn voyage_day(n: u32) -> DateTime<Utc> {
    let d = voyage_day_1() + Duration::days(i64::from(n) - 1);
    Utc.from_utc_datetime(&d.and_hms_opt(12, 0, 0).expect("valid time"))
}

/// Jurisdiction tags the ship is under on voyage day `n`.
pub fn voyage_tags(n: u32) -> [&'static str; 2] {
    if n >= 5 {
        IRAN_TAGS
    } else {
        SHIP_TAGS
    }
}

/// Reference instant for the Slovenian scenarios.
pub fn si_time() -> DateTime<Utc> {
    Utc.with_ymd_and_hms(2026, 9, 15, 9, 0, 0).single().expect("valid instant")
}

/// Registry schemas plus rows to load into them.
#[derive(Debug, Clone, Deserialize)]
pub struct Dataset {
    pub schemas: Vec<RegistrySchema>,
    pub rows: BTreeMap<String, Vec<Values>>,
}

impl Dataset {
    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }

    /// Defines every registry and inserts every row as bootstrap events,
    /// recording each as an administrative action when an audit log is
    /// given.
    pub fn seed(&self, store: &Store, audit: Option<&AuditLog>, at: DateTime<Utc>) -> Result<(), StoreError> {
        let requester = NationalId::new(who::BOOTSTRAP).expect("valid id");
        let write = |registry: &str, op: WriteOp, action: String| -> Result<(), StoreError> {
            let command_digest = match &op {
                WriteOp::Define(s) => canonical::canonical_digest(s),
                WriteOp::Insert(v) => canonical::canonical_digest(v),
                _ => unreachable!(),
            }
            .expect("fixtures contain no floats");
            let request_digest = Digest::of(format!("bootstrap:{}:{command_digest}", store.latest_seq()).as_bytes());
            let receipt_id = receipt_id_for(&request_digest);
            let ev = store.apply_write(WriteRequest {
                registry: registry.to_string(),
                op,
                requester: requester.clone(),
                receipt_id: receipt_id.clone(),
                command_digest,
                at,
                expected_before: None,
            })?;
            if let Some(audit) = audit {
                audit.append(AuditEntry {
                    receipt_id,
                    at,
                    requester: requester.clone(),
                    request_digest,
                    authority: Authority::Admin { action },
                    event_seq: Some(ev.seq),
                })?;
            }
            Ok(())
        };
        for schema in &self.schemas {
            let id = schema.registry_id.clone();
            write(&id, WriteOp::Define(schema.clone()), format!("define_registry {id}"))?;
        }
        for schema in &self.schemas {
            for row in self.rows.get(&schema.registry_id).into_iter().flatten() {
                write(&schema.registry_id, WriteOp::Insert(row.clone()), "bootstrap_insert".into())?;
            }
        }
        Ok(())
    }
}

pub fn ship_data() -> Dataset {
    Dataset::from_json(SHIP_DATA_JSON).expect("ship data fixture is valid")
}

pub fn si_data() -> Dataset {
    Dataset::from_json(SI_DATA_JSON).expect("si data fixture is valid")
}

/// In-memory store holding the ship passengers and sauna tickets.
pub fn ship_store() -> Store {
    let store = Store::in_memory();
    ship_data()
        .seed(&store, None, voyage_day(1) - Duration::days(1))
        .expect("ship fixture seeds");
    store
}

/// In-memory store holding the Slovenian registries.
pub fn si_store() -> Store {
    let store = Store::in_memory();
    si_data()
        .seed(&store, None, si_time() - Duration::days(1))
        .expect("si fixture seeds");
    store
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn frames_match_their_registries() {
        let ship = ship_store().view();
        ship_frame().check_against(&ship).unwrap();
        iran_frame().check_against(&ship).unwrap();
        si_frame().check_against(&si_store().view()).unwrap();
    }

    #[test]
    fn eve_turns_14_on_day_3() {
        use crate::scalar::age_in_years;
        let dob = NaiveDate::from_ymd_opt(2012, 7, 3).unwrap();
        assert_eq!(age_in_years(dob, voyage_day(2).date_naive()), 13);
        assert_eq!(age_in_years(dob, voyage_day(3).date_naive()), 14);
    }
}
