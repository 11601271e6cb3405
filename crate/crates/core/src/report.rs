//! Text renderings shared by the library and the CLI: 17-digit float
//! formatting, CSV summaries, and serde helpers that keep `±∞` intact in JSON.

use std::fmt::Write as _;

use crate::simulation::{DeviationEstimate, ExperimentResult};

/// Header of the per-rule summary CSV.
pub const SUMMARY_HEADER: &str = "rule,n,N,mean_loss,sd_loss,mean_tau,sd_tau,emergency_rate";

pub const DEVIATION_HEADER: &str =
    "event,reference,threshold,exceedances,N,frequency,wilson_low,wilson_high";

/// 17 significant digits in scientific notation; parses back to the same bits.
pub fn fmt_f64(x: f64) -> String {
    if x.is_finite() {
        format!("{x:.16e}")
    } else if x.is_nan() {
        "nan".to_string()
    } else if x > 0.0 {
        "inf".to_string()
    } else {
        "-inf".to_string()
    }
}

/// One row per rule and result, in input order.
pub fn summary_csv(results: &[ExperimentResult]) -> String {
    let mut out = String::new();
    out.push_str(SUMMARY_HEADER);
    out.push('\n');
    for res in results {
        for r in &res.rules {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{}",
                r.rule,
                res.config.n,
                res.config.replications,
                fmt_f64(r.mean_loss),
                fmt_f64(r.sd_loss),
                fmt_f64(r.mean_tau),
                fmt_f64(r.sd_tau),
                fmt_f64(r.emergency_rate),
            );
        }
    }
    out
}

pub fn deviation_csv(est: &DeviationEstimate) -> String {
    let mut out = String::new();
    out.push_str(DEVIATION_HEADER);
    out.push('\n');
    for c in &est.curves {
        for i in 0..c.thresholds.len() {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{}",
                c.event,
                fmt_f64(c.reference),
                fmt_f64(c.thresholds[i]),
                c.exceedances[i],
                est.replications,
                fmt_f64(c.frequencies[i]),
                fmt_f64(c.wilson_low[i]),
                fmt_f64(c.wilson_high[i]),
            );
        }
    }
    out
}

fn encode(x: f64) -> serde_json::Value {
    if x.is_finite() {
        serde_json::Value::from(x)
    } else {
        serde_json::Value::from(fmt_f64(x))
    }
}

fn decode<E: serde::de::Error>(v: serde_json::Value) -> Result<f64, E> {
    match v {
        serde_json::Value::Number(n) => n
            .as_f64()
            .ok_or_else(|| E::custom("number out of f64 range")),
        serde_json::Value::String(s) => match s.as_str() {
            "inf" => Ok(f64::INFINITY),
            "-inf" => Ok(f64::NEG_INFINITY),
            "nan" => Ok(f64::NAN),
            other => Err(E::custom(format!("invalid float '{other}'"))),
        },
        other => Err(E::custom(format!("expected float, got {other}"))),
    }
}

/// `#[serde(with)]` adapter writing non-finite floats as `"inf"`, `"-inf"`, `"nan"`.
pub mod extended_f64 {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(x: &f64, s: S) -> Result<S::Ok, S::Error> {
        super::encode(*x).serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        super::decode(serde_json::Value::deserialize(d)?)
    }
}

pub mod extended_f64_vec {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(xs: &[f64], s: S) -> Result<S::Ok, S::Error> {
        xs.iter()
            .map(|&x| super::encode(x))
            .collect::<Vec<_>>()
            .serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<f64>, D::Error> {
        Vec::<serde_json::Value>::deserialize(d)?
            .into_iter()
            .map(super::decode)
            .collect()
    }
}
