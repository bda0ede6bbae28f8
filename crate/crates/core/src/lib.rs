//! Differentially private selective fine-tuning for small layered models.
//!
//! The pipeline releases a private synthetic dataset, uses it to pick which
//! layers to fine-tune, then fine-tunes only those layers with DP-SGD/AdamW.

// `!(x > 0.0)` is used throughout to reject NaN along with non-positive values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod accountant;
pub mod data;
pub mod dp_optim;
pub mod error;
pub mod nn;
pub mod pipeline;
pub mod rng;
pub mod select;
pub mod synth;
pub mod theory;

pub use error::{Error, Result};

/// Serializes an `f64` with `INFINITY` written as `null`.
pub mod serde_inf {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_infinite() && *v > 0.0 {
            s.serialize_none()
        } else {
            s.serialize_f64(*v)
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::INFINITY))
    }
}
