//! Typed blackboard shared by the bridge and the controller.
//!
//! Keys are dot-separated paths. Each entry is either a typed value or a
//! callable with a declared signature; the declared type of a key never
//! changes while the key exists.
//!
//! Reserved namespaces: `servo.*` for gain access, `camera.*` for the image
//! stub and `demo.*` for scenario flags.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::actuation::ServoGains;

pub const SET_GAINS: &str = "servo.set_gains";
pub const GET_GAINS: &str = "servo.get_gains";
pub const GAINS_PREFIX: &str = "servo.gains.";
pub const READ_IMAGE: &str = "camera.read_image";

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct DatastoreKey(String);

impl DatastoreKey {
    pub fn new(path: impl Into<String>) -> Result<Self, DatastoreError> {
        let path = path.into();
        if path.is_empty() || path.chars().any(char::is_whitespace) {
            return Err(DatastoreError::InvalidKey(path));
        }
        Ok(DatastoreKey(path))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl TryFrom<String> for DatastoreKey {
    type Error = DatastoreError;
    fn try_from(s: String) -> Result<Self, Self::Error> {
        DatastoreKey::new(s)
    }
}

impl From<DatastoreKey> for String {
    fn from(k: DatastoreKey) -> Self {
        k.0
    }
}

impl fmt::Display for DatastoreKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// Placeholder returned by the camera stub: a frame shape without pixels.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CameraFrame {
    pub camera: String,
    pub width: u32,
    pub height: u32,
    pub channels: u8,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ValueType {
    Bool,
    Int,
    Float,
    Text,
    Gains,
    Floats,
    Frame,
}

impl fmt::Display for ValueType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            ValueType::Bool => "bool",
            ValueType::Int => "int",
            ValueType::Float => "float",
            ValueType::Text => "text",
            ValueType::Gains => "gains",
            ValueType::Floats => "floats",
            ValueType::Frame => "frame",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", content = "value", rename_all = "snake_case")]
pub enum Value {
    Bool(bool),
    Int(i64),
    Float(f64),
    Text(String),
    Gains(ServoGains),
    Floats(Vec<f64>),
    Frame(CameraFrame),
}

impl Value {
    pub fn value_type(&self) -> ValueType {
        match self {
            Value::Bool(_) => ValueType::Bool,
            Value::Int(_) => ValueType::Int,
            Value::Float(_) => ValueType::Float,
            Value::Text(_) => ValueType::Text,
            Value::Gains(_) => ValueType::Gains,
            Value::Floats(_) => ValueType::Floats,
            Value::Frame(_) => ValueType::Frame,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Signature {
    pub params: Vec<ValueType>,
    pub ret: ValueType,
}

impl Signature {
    pub fn new(params: impl Into<Vec<ValueType>>, ret: ValueType) -> Self {
        Signature {
            params: params.into(),
            ret,
        }
    }
}

impl fmt::Display for Signature {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let params: Vec<_> = self.params.iter().map(ToString::to_string).collect();
        write!(f, "fn({}) -> {}", params.join(", "), self.ret)
    }
}

pub type Callback = Arc<dyn Fn(&mut Datastore, &[Value]) -> Result<Value, DatastoreError> + Send + Sync>;

#[derive(Clone)]
pub enum Entry {
    Value(Value),
    Callable { signature: Signature, func: Callback },
}

impl Entry {
    pub fn callable<F>(signature: Signature, func: F) -> Self
    where
        F: Fn(&mut Datastore, &[Value]) -> Result<Value, DatastoreError> + Send + Sync + 'static,
    {
        Entry::Callable {
            signature,
            func: Arc::new(func),
        }
    }

    pub fn entry_type(&self) -> EntryType {
        match self {
            Entry::Value(v) => EntryType::Value(v.value_type()),
            Entry::Callable { signature, .. } => EntryType::Callable(signature.clone()),
        }
    }
}

impl PartialEq for Entry {
    fn eq(&self, other: &Self) -> bool {
        match (self, other) {
            (Entry::Value(a), Entry::Value(b)) => a == b,
            (
                Entry::Callable { signature: sa, func: fa },
                Entry::Callable { signature: sb, func: fb },
            ) => sa == sb && Arc::ptr_eq(fa, fb),
            _ => false,
        }
    }
}

impl fmt::Debug for Entry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Entry::Value(v) => f.debug_tuple("Value").field(v).finish(),
            Entry::Callable { signature, .. } => write!(f, "Callable({signature})"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum EntryType {
    Value(ValueType),
    Callable(Signature),
}

impl fmt::Display for EntryType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EntryType::Value(t) => t.fmt(f),
            EntryType::Callable(s) => s.fmt(f),
        }
    }
}

#[derive(Default, Clone, Debug)]
pub struct Datastore {
    entries: BTreeMap<DatastoreKey, Entry>,
}

impl Datastore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Inserts or overwrites an entry. Overwriting requires the same
    /// declared type or signature.
    pub fn put(&mut self, key: &str, entry: Entry) -> Result<(), DatastoreError> {
        let key = DatastoreKey::new(key)?;
        if let Some(existing) = self.entries.get(&key) {
            let (old, new) = (existing.entry_type(), entry.entry_type());
            if old != new {
                return Err(DatastoreError::TypeMismatch {
                    key: key.0,
                    expected: old.to_string(),
                    found: new.to_string(),
                });
            }
        }
        self.entries.insert(key, entry);
        Ok(())
    }

    pub fn put_value(&mut self, key: &str, value: Value) -> Result<(), DatastoreError> {
        self.put(key, Entry::Value(value))
    }

    pub fn get_entry(&self, key: &str) -> Result<&Entry, DatastoreError> {
        let key = DatastoreKey::new(key)?;
        self.entries
            .get(&key)
            .ok_or(DatastoreError::MissingKey(key.0))
    }

    /// Reads a value entry, checking its declared type.
    pub fn get(&self, key: &str, expected: ValueType) -> Result<&Value, DatastoreError> {
        match self.get_entry(key)? {
            Entry::Value(v) if v.value_type() == expected => Ok(v),
            other => Err(DatastoreError::TypeMismatch {
                key: key.to_string(),
                expected: expected.to_string(),
                found: other.entry_type().to_string(),
            }),
        }
    }

    pub fn get_bool(&self, key: &str) -> Result<bool, DatastoreError> {
        match self.get(key, ValueType::Bool)? {
            Value::Bool(b) => Ok(*b),
            _ => unreachable!("type checked"),
        }
    }

    pub fn get_gains(&self, key: &str) -> Result<ServoGains, DatastoreError> {
        match self.get(key, ValueType::Gains)? {
            Value::Gains(g) => Ok(*g),
            _ => unreachable!("type checked"),
        }
    }

    pub fn contains(&self, key: &str) -> bool {
        DatastoreKey::new(key).is_ok_and(|k| self.entries.contains_key(&k))
    }

    pub fn remove(&mut self, key: &str) -> Result<Entry, DatastoreError> {
        let key = DatastoreKey::new(key)?;
        self.entries
            .remove(&key)
            .ok_or(DatastoreError::MissingKey(key.0))
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(DatastoreKey::as_str)
    }

    /// Invokes a callable entry synchronously after checking the argument
    /// types against its signature.
    pub fn call(&mut self, key: &str, args: &[Value]) -> Result<Value, DatastoreError> {
        let (signature, func) = match self.get_entry(key)? {
            Entry::Callable { signature, func } => (signature.clone(), Arc::clone(func)),
            Entry::Value(_) => return Err(DatastoreError::NotCallable(key.to_string())),
        };
        let found: Vec<ValueType> = args.iter().map(Value::value_type).collect();
        if found != signature.params {
            return Err(DatastoreError::SignatureMismatch {
                key: key.to_string(),
                expected: signature.to_string(),
                found: Signature::new(found, signature.ret).to_string(),
            });
        }
        let out = func(self, args)?;
        if out.value_type() != signature.ret {
            return Err(DatastoreError::Callback(format!(
                "`{key}` returned {} instead of {}",
                out.value_type(),
                signature.ret
            )));
        }
        Ok(out)
    }
}

pub fn gains_key(joint: &str) -> String {
    format!("{GAINS_PREFIX}{joint}")
}

/// Registers `servo.set_gains(joint, kp, kd)` and `servo.get_gains(joint)`.
/// Overrides live under `servo.gains.<joint>`; `get_gains` falls back to
/// `defaults` when no override exists.
pub fn install_servo_callbacks(
    store: &mut Datastore,
    defaults: BTreeMap<String, ServoGains>,
) -> Result<(), DatastoreError> {
    let defaults = Arc::new(defaults);
    let known: Arc<BTreeSet<String>> = Arc::new(defaults.keys().cloned().collect());
    store.put(
        SET_GAINS,
        Entry::callable(
            Signature::new([ValueType::Text, ValueType::Float, ValueType::Float], ValueType::Bool),
            move |store, args| {
                let (Value::Text(joint), Value::Float(kp), Value::Float(kd)) = (&args[0], &args[1], &args[2]) else {
                    unreachable!("signature checked")
                };
                if !known.contains(joint) {
                    return Err(DatastoreError::Callback(format!("unknown servo `{joint}`")));
                }
                let gains = ServoGains::new(*kp, *kd).map_err(|e| DatastoreError::Callback(e.to_string()))?;
                store.put_value(&gains_key(joint), Value::Gains(gains))?;
                Ok(Value::Bool(true))
            },
        ),
    )?;
    store.put(
        GET_GAINS,
        Entry::callable(
            Signature::new([ValueType::Text], ValueType::Gains),
            move |store, args| {
                let Value::Text(joint) = &args[0] else {
                    unreachable!("signature checked")
                };
                if let Ok(g) = store.get_gains(&gains_key(joint)) {
                    return Ok(Value::Gains(g));
                }
                defaults
                    .get(joint)
                    .map(|g| Value::Gains(*g))
                    .ok_or_else(|| DatastoreError::Callback(format!("unknown servo `{joint}`")))
            },
        ),
    )
}

/// Registers the camera stub `camera.read_image(name)`, which always answers
/// with a fixed 640x480x3 descriptor.
pub fn install_camera_stub(store: &mut Datastore) -> Result<(), DatastoreError> {
    store.put(
        READ_IMAGE,
        Entry::callable(Signature::new([ValueType::Text], ValueType::Frame), |_, args| {
            let Value::Text(camera) = &args[0] else {
                unreachable!("signature checked")
            };
            Ok(Value::Frame(CameraFrame {
                camera: camera.clone(),
                width: 640,
                height: 480,
                channels: 3,
            }))
        }),
    )
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DatastoreError {
    #[error("invalid key `{0}`")]
    InvalidKey(String),
    #[error("missing key `{0}`")]
    MissingKey(String),
    #[error("type mismatch for `{key}`: expected {expected}, found {found}")]
    TypeMismatch {
        key: String,
        expected: String,
        found: String,
    },
    #[error("signature mismatch for `{key}`: expected {expected}, found {found}")]
    SignatureMismatch {
        key: String,
        expected: String,
        found: String,
    },
    #[error("`{0}` is a value, not a callable")]
    NotCallable(String),
    #[error("callback failed: {0}")]
    Callback(String),
}
