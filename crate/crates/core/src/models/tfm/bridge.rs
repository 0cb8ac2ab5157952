//! In-context inference through an external process.
//!
//! Each call spawns `command` with `args`, writes one JSON request line to
//! its stdin and reads one JSON response line from its stdout:
//!
//! ```text
//! -> {"checkpoint": "...", "context_x": [[..]], "context_y": [..], "query_x": [[..]]}
//! <- {"logits": [..]}  or  {"probabilities": [..]}  or  {"error": "..."}
//! ```
//!
//! Probabilities are converted to logits with the inverse sigmoid.

use std::io::{BufRead, BufReader, Write};
use std::path::PathBuf;
use std::process::{Command, Stdio};

use ndarray::ArrayView2;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::InContextModel;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BridgeConfig {
    pub command: String,
    #[serde(default)]
    pub args: Vec<String>,
    #[serde(default = "default_version")]
    pub version: String,
}

fn default_version() -> String {
    "external".into()
}

#[derive(Debug, Clone)]
pub struct BridgeModel {
    name: String,
    config: BridgeConfig,
    checkpoint: Option<PathBuf>,
    checkpoint_digest: Option<String>,
}

#[derive(Serialize)]
struct Request<'a> {
    checkpoint: Option<&'a PathBuf>,
    context_x: Vec<Vec<f64>>,
    context_y: &'a [u8],
    query_x: Vec<Vec<f64>>,
}

#[derive(Deserialize)]
struct Response {
    logits: Option<Vec<f64>>,
    probabilities: Option<Vec<f64>>,
    error: Option<String>,
}

fn rows(x: ArrayView2<'_, f64>) -> Vec<Vec<f64>> {
    x.rows().into_iter().map(|r| r.to_vec()).collect()
}

impl BridgeModel {
    pub fn new(
        name: impl Into<String>,
        config: BridgeConfig,
        checkpoint: Option<(PathBuf, String)>,
    ) -> Self {
        let (checkpoint, checkpoint_digest) = match checkpoint {
            Some((p, d)) => (Some(p), Some(d)),
            None => (None, None),
        };
        Self {
            name: name.into(),
            config,
            checkpoint,
            checkpoint_digest,
        }
    }

    pub fn checkpoint_digest(&self) -> Option<&str> {
        self.checkpoint_digest.as_deref()
    }
}

impl InContextModel for BridgeModel {
    fn model_name(&self) -> String {
        self.name.clone()
    }

    fn version(&self) -> String {
        self.config.version.clone()
    }

    fn predict_logits(
        &self,
        context_x: ArrayView2<'_, f64>,
        context_y: &[u8],
        query_x: ArrayView2<'_, f64>,
    ) -> Result<Vec<f64>> {
        if query_x.ncols() != context_x.ncols() {
            return Err(Error::WidthMismatch {
                expected: context_x.ncols(),
                actual: query_x.ncols(),
            });
        }
        let request = Request {
            checkpoint: self.checkpoint.as_ref(),
            context_x: rows(context_x),
            context_y,
            query_x: rows(query_x),
        };
        let mut line = serde_json::to_string(&request)?;
        line.push('\n');

        let fail = |m: String| Error::Backend(format!("{}: {m}", self.config.command));
        let mut child = Command::new(&self.config.command)
            .args(&self.config.args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .spawn()
            .map_err(|e| fail(format!("cannot start: {e}")))?;
        child
            .stdin
            .take()
            .expect("piped stdin")
            .write_all(line.as_bytes())
            .map_err(|e| fail(format!("write failed: {e}")))?;
        let mut reply = String::new();
        BufReader::new(child.stdout.take().expect("piped stdout"))
            .read_line(&mut reply)
            .map_err(|e| fail(format!("read failed: {e}")))?;
        let status = child.wait().map_err(|e| fail(e.to_string()))?;
        if reply.trim().is_empty() {
            return Err(fail(format!("no response (exit status {status})")));
        }
        let response: Response = serde_json::from_str(reply.trim())?;
        if let Some(e) = response.error {
            return Err(fail(e));
        }
        let logits = match (response.logits, response.probabilities) {
            (Some(z), _) => z,
            (None, Some(p)) => p
                .into_iter()
                .map(|p| {
                    let p = p.clamp(1e-15, 1.0 - 1e-15);
                    (p / (1.0 - p)).ln()
                })
                .collect(),
            (None, None) => return Err(fail("response has neither logits nor probabilities".into())),
        };
        if logits.len() != query_x.nrows() || logits.iter().any(|z| z.is_nan()) {
            return Err(fail(format!(
                "expected {} finite scores, got {}",
                query_x.nrows(),
                logits.len()
            )));
        }
        Ok(logits)
    }

    fn parameter_checksum(&self) -> String {
        match &self.checkpoint_digest {
            Some(d) => d.clone(),
            None => {
                let mut h = Sha256::new();
                h.update(self.config.command.as_bytes());
                for a in &self.config.args {
                    h.update(a.as_bytes());
                }
                h.update(self.config.version.as_bytes());
                hex::encode(h.finalize())
            }
        }
    }
}

#[cfg(all(test, unix))]
mod tests {
    use super::*;
    use ndarray::array;

    fn shell(script: &str) -> BridgeModel {
        BridgeModel::new(
            "echo",
            BridgeConfig {
                command: "sh".into(),
                args: vec!["-c".into(), script.into()],
                version: "test".into(),
            },
            None,
        )
    }

    #[test]
    fn reads_probabilities_as_logits() {
        let m = shell("read line; echo '{\"probabilities\": [0.5, 0.8]}'");
        let z = m
            .predict_logits(array![[1.0], [2.0]].view(), &[0, 1], array![[1.5], [3.0]].view())
            .unwrap();
        assert!(z[0].abs() < 1e-12);
        assert!((z[1] - 4f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn reports_backend_errors() {
        let m = shell("read line; echo '{\"error\": \"no runtime\"}'");
        let err = m
            .predict_logits(array![[1.0]].view(), &[0], array![[1.0]].view())
            .unwrap_err();
        assert!(err.to_string().contains("no runtime"));
        let m = shell("read line; echo '{\"logits\": [1.0]}'");
        assert!(m
            .predict_logits(array![[1.0]].view(), &[0], array![[1.0], [2.0]].view())
            .is_err());
    }
}
