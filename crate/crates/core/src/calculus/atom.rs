use std::collections::BTreeMap;
use std::collections::BTreeSet;
use std::fmt;

use serde::{de, Deserialize, Deserializer, Serialize};

use crate::scalar::Scalar;

/// A ground right-token: a name plus literal parameters.
///
/// Frames may write an atom without parameters as a bare string.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub struct EligibilityAtom {
    pub name: String,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub params: BTreeMap<String, Scalar>,
}

impl EligibilityAtom {
    pub fn new(name: impl Into<String>) -> Self {
        EligibilityAtom {
            name: name.into(),
            params: BTreeMap::new(),
        }
    }

    pub fn with_param(mut self, key: impl Into<String>, value: impl Into<Scalar>) -> Self {
        self.params.insert(key.into(), value.into());
        self
    }

    pub fn is_ground(&self) -> bool {
        !self.name.is_empty() && self.params.values().all(|v| !v.is_null())
    }
}

impl fmt::Display for EligibilityAtom {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name)?;
        if !self.params.is_empty() {
            f.write_str("{")?;
            for (i, (k, v)) in self.params.iter().enumerate() {
                if i > 0 {
                    f.write_str(",")?;
                }
                write!(f, "{k}={v}")?;
            }
            f.write_str("}")?;
        }
        Ok(())
    }
}

impl<'de> Deserialize<'de> for EligibilityAtom {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Repr {
            Bare(String),
            Full {
                name: String,
                #[serde(default)]
                params: BTreeMap<String, Scalar>,
            },
        }
        let atom = match Repr::deserialize(d)? {
            Repr::Bare(name) => EligibilityAtom::new(name),
            Repr::Full { name, params } => EligibilityAtom { name, params },
        };
        if !atom.is_ground() {
            return Err(de::Error::custom(format!("atom `{atom}` is not ground")));
        }
        Ok(atom)
    }
}

macro_rules! atom_set {
    ($(#[$doc:meta])* $name:ident) => {
        $(#[$doc])*
        #[derive(Debug, Clone, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
        #[serde(transparent)]
        pub struct $name(pub BTreeSet<EligibilityAtom>);

        impl $name {
            pub fn new() -> Self {
                Self::default()
            }

            pub fn len(&self) -> usize {
                self.0.len()
            }

            pub fn is_empty(&self) -> bool {
                self.0.is_empty()
            }

            pub fn contains(&self, atom: &EligibilityAtom) -> bool {
                self.0.contains(atom)
            }

            pub fn iter(&self) -> impl Iterator<Item = &EligibilityAtom> {
                self.0.iter()
            }

            pub fn insert(&mut self, atom: EligibilityAtom) -> bool {
                self.0.insert(atom)
            }

            pub fn names(&self) -> Vec<&str> {
                self.0.iter().map(|a| a.name.as_str()).collect()
            }
        }

        impl FromIterator<EligibilityAtom> for $name {
            fn from_iter<I: IntoIterator<Item = EligibilityAtom>>(iter: I) -> Self {
                $name(iter.into_iter().collect())
            }
        }

        impl Extend<EligibilityAtom> for $name {
            fn extend<I: IntoIterator<Item = EligibilityAtom>>(&mut self, iter: I) {
                self.0.extend(iter)
            }
        }
    };
}

atom_set!(
    /// The rights a subject holds under a frame in a given context.
    Bundle
);
atom_set!(
    /// The rights a request demands; all of them (conjunctive).
    RequiredSet
);
