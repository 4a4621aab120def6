//! Serde helpers shared by the report types.
//!
//! Constraint indices are 0-based in memory and 1-based in every serialized
//! form. JSON has no infinity, so non-finite margins are written as strings.

use serde::ser::SerializeSeq;
use serde::Serializer;

pub fn one_based<S: Serializer>(v: &[usize], s: S) -> Result<S::Ok, S::Error> {
    let mut seq = s.serialize_seq(Some(v.len()))?;
    for i in v {
        seq.serialize_element(&(i + 1))?;
    }
    seq.end()
}

pub fn float<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
    if v.is_finite() {
        s.serialize_f64(*v)
    } else {
        s.serialize_str(&float_text(*v))
    }
}

pub fn float_text(v: f64) -> String {
    if v.is_nan() {
        "nan".into()
    } else if v == f64::INFINITY {
        "inf".into()
    } else if v == f64::NEG_INFINITY {
        "-inf".into()
    } else if v != 0.0 && !(1e-4..1e6).contains(&v.abs()) {
        format!("{v:e}")
    } else {
        format!("{v}")
    }
}

pub fn floats<S: Serializer>(v: &[f64], s: S) -> Result<S::Ok, S::Error> {
    let mut seq = s.serialize_seq(Some(v.len()))?;
    for x in v {
        if x.is_finite() {
            seq.serialize_element(x)?;
        } else {
            seq.serialize_element(&float_text(*x))?;
        }
    }
    seq.end()
}

/// Matrix as a list of rows.
pub fn matrix<S: Serializer>(v: &nalgebra::DMatrix<f64>, s: S) -> Result<S::Ok, S::Error> {
    let mut seq = s.serialize_seq(Some(v.nrows()))?;
    for r in 0..v.nrows() {
        let row: Vec<f64> = v.row(r).iter().copied().collect();
        seq.serialize_element(&row)?;
    }
    seq.end()
}

/// `{1, 3}` style rendering of a 0-based index set.
pub fn index_set(v: &[usize]) -> String {
    let parts: Vec<String> = v.iter().map(|i| (i + 1).to_string()).collect();
    format!("{{{}}}", parts.join(","))
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde::Serialize;

    #[derive(Serialize)]
    struct Row {
        #[serde(serialize_with = "one_based")]
        j: Vec<usize>,
        #[serde(serialize_with = "float")]
        margin: f64,
    }

    #[test]
    fn indices_and_infinity() {
        let text = serde_json::to_string(&Row {
            j: vec![0, 2],
            margin: f64::INFINITY,
        })
        .unwrap();
        assert_eq!(text, r#"{"j":[1,3],"margin":"inf"}"#);
        assert_eq!(index_set(&[0, 4]), "{1,5}");
        assert_eq!(index_set(&[]), "{}");
        assert_eq!(float_text(0.25), "0.25");
        assert_eq!(float_text(2.5e-32), "2.5e-32");
        assert_eq!(float_text(0.0), "0");
    }
}
