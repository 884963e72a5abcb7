use serde::{Deserialize, Deserializer, Serialize, Serializer};

/// A statistic that may be undefined (zero variance, degenerate agreement).
/// Serializes as the number or the string `"undefined"`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Stat<T> {
    Value(T),
    Undefined,
}

impl<T: Copy> Stat<T> {
    pub fn value(self) -> Option<T> {
        match self {
            Stat::Value(v) => Some(v),
            Stat::Undefined => None,
        }
    }

    pub fn is_defined(self) -> bool {
        matches!(self, Stat::Value(_))
    }
}

impl<T: Serialize> Serialize for Stat<T> {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            Stat::Value(v) => v.serialize(s),
            Stat::Undefined => s.serialize_str("undefined"),
        }
    }
}

impl<'de, T: Deserialize<'de>> Deserialize<'de> for Stat<T> {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Repr<T> {
            Value(T),
            Marker(String),
        }
        match Repr::deserialize(d)? {
            Repr::Value(v) => Ok(Stat::Value(v)),
            Repr::Marker(m) if m == "undefined" => Ok(Stat::Undefined),
            Repr::Marker(m) => Err(serde::de::Error::custom(format!("unexpected marker {m:?}"))),
        }
    }
}
