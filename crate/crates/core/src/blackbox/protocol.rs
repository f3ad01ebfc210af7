//! Line-delimited JSON protocol spoken between the explainer and an
//! out-of-process model host.
//!
//! ```text
//! -> {"hello": true}
//! <- {"classes": 2}
//! -> {"id": 1, "instances": [[0.5, 1.25], [3.0, -1.0]]}
//! <- {"id": 1, "probabilities": [[0.9, 0.1], [0.2, 0.8]]}
//! ```
//!
//! Floats are written with 17 significant digits so every value survives the
//! round trip bit-for-bit.

use std::io::{BufRead, Write};

use nalgebra::DMatrix;
use serde::Deserialize;

use super::ProbabilityModel;
use crate::error::{ClimaxError, Result};
use crate::util::fmt_f64;

pub const HELLO: &str = r#"{"hello": true}"#;

fn write_rows(out: &mut String, m: &DMatrix<f64>) {
    out.push('[');
    for i in 0..m.nrows() {
        if i > 0 {
            out.push_str(", ");
        }
        out.push('[');
        for j in 0..m.ncols() {
            if j > 0 {
                out.push_str(", ");
            }
            out.push_str(&fmt_f64(m[(i, j)]));
        }
        out.push(']');
    }
    out.push(']');
}

pub fn encode_request(id: u64, instances: &DMatrix<f64>) -> Result<String> {
    if instances.iter().any(|v| !v.is_finite()) {
        return Err(ClimaxError::Config("cannot serialize a non-finite instance".into()));
    }
    let mut s = format!(r#"{{"id": {id}, "instances": "#);
    write_rows(&mut s, instances);
    s.push('}');
    Ok(s)
}

pub fn encode_response(id: u64, probabilities: &DMatrix<f64>) -> String {
    let mut s = format!(r#"{{"id": {id}, "probabilities": "#);
    write_rows(&mut s, probabilities);
    s.push('}');
    s
}

pub fn encode_hello_reply(classes: usize) -> String {
    format!(r#"{{"classes": {classes}}}"#)
}

#[derive(Debug, Deserialize)]
struct HelloReply {
    classes: usize,
}

#[derive(Debug, Deserialize)]
struct Response {
    id: u64,
    probabilities: Vec<Vec<f64>>,
}

#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum Request {
    Hello { hello: bool },
    Predict { id: u64, instances: Vec<Vec<f64>> },
}

fn rows_to_matrix(rows: &[Vec<f64>], width: usize) -> Option<DMatrix<f64>> {
    if rows.iter().any(|r| r.len() != width) {
        return None;
    }
    Some(DMatrix::from_fn(rows.len(), width, |i, j| rows[i][j]))
}

pub fn decode_hello_reply(line: &str) -> Result<usize> {
    serde_json::from_str::<HelloReply>(line.trim())
        .map(|h| h.classes)
        .map_err(|e| ClimaxError::ModelUnavailable(format!("bad handshake reply {line:?}: {e}")))
}

/// Parses a response and checks it answers request `id` with `rows` rows of
/// width `classes`.
pub fn decode_response(line: &str, id: u64, rows: usize, classes: usize) -> Result<DMatrix<f64>> {
    let resp: Response = serde_json::from_str(line.trim())
        .map_err(|e| ClimaxError::ModelUnavailable(format!("malformed response: {e}")))?;
    if resp.id != id {
        return Err(ClimaxError::ModelUnavailable(format!("response id {} does not match request {id}", resp.id)));
    }
    if resp.probabilities.len() != rows {
        return Err(ClimaxError::ModelUnavailable(format!(
            "expected {rows} probability rows, got {}",
            resp.probabilities.len()
        )));
    }
    rows_to_matrix(&resp.probabilities, classes)
        .ok_or_else(|| ClimaxError::ModelUnavailable(format!("a probability row is not {classes} wide")))
}

/// Serves `model` over a line-delimited stream until end of input. Used by
/// the `host` subcommand and by tests.
pub fn serve<M, R, W>(model: &M, input: R, mut output: W) -> Result<()>
where
    M: ProbabilityModel + ?Sized,
    R: BufRead,
    W: Write,
{
    for line in input.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let reply = match serde_json::from_str::<Request>(&line) {
            Ok(Request::Hello { hello: true }) => encode_hello_reply(model.n_classes()),
            Ok(Request::Hello { hello: false }) => return Err(ClimaxError::Config("handshake with hello=false".into())),
            Ok(Request::Predict { id, instances }) => {
                let width = instances.first().map_or(model.n_features().unwrap_or(0), Vec::len);
                let batch = rows_to_matrix(&instances, width)
                    .ok_or_else(|| ClimaxError::Config("ragged instance rows".into()))?;
                let probs = model.predict_proba(&batch)?;
                encode_response(id, &probs)
            }
            Err(e) => return Err(ClimaxError::Config(format!("bad request: {e}"))),
        };
        writeln!(output, "{reply}")?;
        output.flush()?;
    }
    Ok(())
}
