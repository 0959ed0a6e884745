use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::scalar::{is_identifier as is_ident, is_valid_national_id, parse_date, Scalar, Values};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScalarType {
    String,
    Integer,
    Date,
    NationalId,
    Boolean,
}

impl ScalarType {
    /// Coerces `v` into this type, or explains why it cannot be.
    pub fn conform(self, v: Scalar) -> Result<Scalar, String> {
        match (self, v) {
            (_, Scalar::Null) => Ok(Scalar::Null),
            (ScalarType::String, Scalar::Str(s)) => Ok(Scalar::Str(s)),
            (ScalarType::String, d @ Scalar::Date(_)) => Ok(Scalar::Str(d.to_string())),
            (ScalarType::NationalId, v @ (Scalar::Str(_) | Scalar::Date(_))) => {
                let s = v.to_string();
                if is_valid_national_id(&s) {
                    Ok(Scalar::Str(s))
                } else {
                    Err(format!("{s:?} is not a national id"))
                }
            }
            (ScalarType::Integer, v @ Scalar::Int(_)) => Ok(v),
            (ScalarType::Boolean, v @ Scalar::Bool(_)) => Ok(v),
            (ScalarType::Date, v @ Scalar::Date(_)) => Ok(v),
            (ScalarType::Date, Scalar::Str(s)) => parse_date(&s)
                .map(Scalar::Date)
                .ok_or_else(|| format!("{s:?} is not a YYYY-MM-DD date")),
            (ty, v) => Err(format!("expected {ty:?}, got {}", v.type_name())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct FieldDef {
    pub name: String,
    #[serde(rename = "type")]
    pub ty: ScalarType,
    #[serde(default)]
    pub nullable: bool,
}

impl FieldDef {
    pub fn new(name: impl Into<String>, ty: ScalarType, nullable: bool) -> Self {
        FieldDef {
            name: name.into(),
            ty,
            nullable,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RegistrySchema {
    pub registry_id: String,
    pub fields: Vec<FieldDef>,
    pub key_field: String,
}

impl RegistrySchema {
    pub fn field(&self, name: &str) -> Option<&FieldDef> {
        self.fields.iter().find(|f| f.name == name)
    }

    pub fn validate(&self) -> Result<(), String> {
        if !is_ident(&self.registry_id) {
            return Err(format!("registry id {:?} is not an identifier", self.registry_id));
        }
        let mut seen = BTreeSet::new();
        for f in &self.fields {
            if !is_ident(&f.name) {
                return Err(format!("field name {:?} is not an identifier", f.name));
            }
            if !seen.insert(f.name.as_str()) {
                return Err(format!("duplicate field {}", f.name));
            }
        }
        let key = self
            .field(&self.key_field)
            .ok_or_else(|| format!("key field {} not declared", self.key_field))?;
        if key.nullable {
            return Err("key field must not be nullable".into());
        }
        if !matches!(key.ty, ScalarType::NationalId | ScalarType::String) {
            return Err("key field must be a national_id or string".into());
        }
        Ok(())
    }

    /// Full, typed record from the given values; absent nullable fields
    /// become null.
    pub fn conform(&self, values: &Values) -> Result<Values, String> {
        if let Some(unknown) = values.keys().find(|k| self.field(k).is_none()) {
            return Err(format!("unknown field {}.{unknown}", self.registry_id));
        }
        let mut out = Values::new();
        for f in &self.fields {
            let v = values.get(&f.name).cloned().unwrap_or(Scalar::Null);
            let v = f
                .ty
                .conform(v)
                .map_err(|e| format!("{}.{}: {e}", self.registry_id, f.name))?;
            if v.is_null() && !f.nullable {
                return Err(format!("{}.{} must not be null", self.registry_id, f.name));
            }
            out.insert(f.name.clone(), v);
        }
        Ok(out)
    }

    pub fn key_of(&self, record: &Values) -> Option<String> {
        record.get(&self.key_field).and_then(|v| v.as_str()).map(str::to_string)
    }
}
