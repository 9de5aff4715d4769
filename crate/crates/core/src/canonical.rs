//! Canonical JSON: struct field order, floats rounded to 12 significant
//! digits, no insignificant whitespace.

use serde::Serialize;
use serde_json::Value;

pub const SIGNIFICANT_DIGITS: usize = 12;

/// Rounds to [`SIGNIFICANT_DIGITS`] significant digits.
pub fn round_sig(x: f64) -> f64 {
    if !x.is_finite() || x == 0.0 {
        return x;
    }
    format!("{:.*e}", SIGNIFICANT_DIGITS - 1, x)
        .parse()
        .expect("formatted float parses")
}

fn round_value(v: &mut Value) {
    match v {
        Value::Number(n) if n.is_f64() => {
            let x = n.as_f64().expect("f64 number");
            *v = serde_json::Number::from_f64(round_sig(x)).map_or(Value::Null, Value::Number);
        }
        Value::Array(items) => items.iter_mut().for_each(round_value),
        Value::Object(map) => map.values_mut().for_each(round_value),
        _ => {}
    }
}

/// Canonical value tree of `value`.
pub fn to_canonical_value<T: Serialize + ?Sized>(value: &T) -> Value {
    let mut v = serde_json::to_value(value).expect("canonical types serialize");
    round_value(&mut v);
    v
}

/// Canonical serialization of `value`.
pub fn to_canonical_json<T: Serialize + ?Sized>(value: &T) -> String {
    to_canonical_value(value).to_string()
}
