//! JSON emission for reports and simulation summaries.
//!
//! Keys appear in struct declaration order and every float is written with
//! 17 significant digits, so equal values serialize to identical bytes and
//! parse back to the exact same `f64`.

use serde::Serialize;
use serde_json::ser::{Formatter, Serializer};
use std::io;

// Every Formatter method except float emission keeps its compact default.
struct SigDigits17;

impl Formatter for SigDigits17 {
    fn write_f64<W>(&mut self, writer: &mut W, value: f64) -> io::Result<()>
    where
        W: ?Sized + io::Write,
    {
        // 1 leading digit + 16 fractional digits = 17 significant digits.
        write!(writer, "{value:.16e}")
    }

    fn write_f32<W>(&mut self, writer: &mut W, value: f32) -> io::Result<()>
    where
        W: ?Sized + io::Write,
    {
        write!(writer, "{value:e}")
    }
}

/// Serializes any report type to deterministic single-line JSON.
pub fn to_json<T: Serialize>(value: &T) -> String {
    let mut out = Vec::new();
    let mut ser = Serializer::with_formatter(&mut out, SigDigits17);
    value
        .serialize(&mut ser)
        .expect("report serialization is infallible");
    String::from_utf8(out).expect("serializer emits valid UTF-8")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::inference::{run_test, Tail, TestReport};
    use crate::sample::{ingest_csv, IngestOptions, KurtosisWeights};

    #[test]
    fn floats_round_trip_exactly() {
        #[derive(Serialize, serde::Deserialize, PartialEq, Debug)]
        struct S {
            a: f64,
            b: f64,
            c: Option<f64>,
            n: usize,
        }
        let s = S {
            a: 0.1 + 0.2,
            b: -3.725290298461914e-9,
            c: None,
            n: 42,
        };
        let text = to_json(&s);
        assert!(text.starts_with("{\"a\":"));
        let back: S = serde_json::from_str(&text).unwrap();
        assert_eq!(s, back);
    }

    #[test]
    fn test_report_round_trips_through_schema() {
        let text = "1.0,1.0,2.0\n2.0,3.0,1.0\n3.0,2.0,4.0\n2.5,1.5,3.0\n0.5,2.5,2.0\nNA,4.0,1.0\nNA,2.0,3.5\n";
        let s = ingest_csv(text, &IngestOptions::new(1, 2)).unwrap();
        let w = KurtosisWeights::tau_bar_weights(s.tau()).unwrap();
        let r = run_test(&s, &w, 0.05, Tail::TwoSided).unwrap();
        let json = to_json(&r);
        let back: TestReport = serde_json::from_str(&json).unwrap();
        assert_eq!(to_json(&back), json);
        assert_eq!(back.b.to_bits(), r.b.to_bits());
        assert_eq!(back.p_value.to_bits(), r.p_value.to_bits());
    }

    #[test]
    fn serialization_is_deterministic() {
        #[derive(Serialize)]
        struct S {
            x: f64,
            y: Vec<f64>,
        }
        let s = S {
            x: std::f64::consts::PI,
            y: vec![1.0, 0.5, -0.25],
        };
        assert_eq!(to_json(&s), to_json(&s));
    }
}
