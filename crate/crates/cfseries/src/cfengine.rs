//! Abduction–action–prediction. Given a factual outcome window the engine
//! infers the latent noise z under the factual event flag, substitutes the
//! counterfactual flag, and decodes the counterfactual window:
//! z = E(y_f, h, e_f), then y_cf = D(z, h, e_cf).

use crate::models::{Model, ModelKind};
use crate::error::{CfError, Result};
use crate::rng::stream;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use std::io::{BufRead, Write};
use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};

/// Total number of counterfactual queries answered by this process; exists
/// so tests can account for engine invocations.
pub(crate) static QUERY_CALLS: AtomicU64 = AtomicU64::new(0);

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CounterfactualQuery {
    pub h: Vec<f64>,
    pub y_f: Vec<f64>,
    pub e_f: u8,
    pub e_cf: u8,
    /// Sample z from the variational posterior instead of using its mean.
    /// Ignored by deterministic encoders.
    #[serde(default)]
    pub sample_posterior: bool,
    /// Seed for posterior sampling; the same seed gives the same draw.
    #[serde(default)]
    pub rng_seed: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CounterfactualResult {
    pub y_cf: Vec<f64>,
    /// The abducted latent code (or recurrent representation for
    /// forecasters).
    pub z: Vec<f64>,
    /// Set when the model cannot honor the query faithfully, e.g. a plain
    /// forecaster that has no way to condition on the counterfactual flag.
    pub warning: Option<String>,
}

/// Answers one counterfactual query. Encoder–decoder models perform full
/// abduction–action–prediction; the balanced forecaster flips the event
/// flag on its outcome head; the plain forecaster can only extrapolate and
/// returns its forecast with a warning.
pub fn counterfactual(model: &Model, q: &CounterfactualQuery) -> Result<CounterfactualResult> {
    QUERY_CALLS.fetch_add(1, Ordering::Relaxed);
    if q.h.len() != model.arch.t1 {
        return Err(CfError::Shape {
            expected: vec![model.arch.t1],
            got: vec![q.h.len()],
        });
    }
    if q.e_f > 1 || q.e_cf > 1 {
        return Err(CfError::Input("event flags must be 0 or 1".into()));
    }
    match model.kind {
        ModelKind::Cepae | ModelKind::Caae => {
            let z = model.encode(&q.y_f, &q.h, q.e_f)?;
            let y_cf = model.decode(&z, &q.h, q.e_cf)?;
            Ok(CounterfactualResult {
                y_cf,
                z,
                warning: None,
            })
        }
        ModelKind::Cvae => {
            let (mu, sigma) = model.encode_dist(&q.y_f, &q.h, q.e_f)?;
            let z = if q.sample_posterior {
                let mut rng = stream(q.rng_seed, "posterior-draw", 0);
                mu.iter()
                    .zip(&sigma)
                    .map(|(m, s)| {
                        let eps: f64 = StandardNormal.sample(&mut rng);
                        m + s * eps
                    })
                    .collect()
            } else {
                mu
            };
            let y_cf = model.decode(&z, &q.h, q.e_cf)?;
            Ok(CounterfactualResult {
                y_cf,
                z,
                warning: None,
            })
        }
        ModelKind::AbLstm => {
            let z = model.lstm_representation(&q.h)?;
            let y_cf = model.forecast(&q.h, q.e_cf)?;
            Ok(CounterfactualResult {
                y_cf,
                z,
                warning: None,
            })
        }
        ModelKind::Lstm => {
            let z = model.lstm_representation(&q.h)?;
            let y_cf = model.forecast(&q.h, q.e_f)?;
            Ok(CounterfactualResult {
                y_cf,
                z,
                warning: Some(
                    "plain forecaster cannot condition on the counterfactual event flag; \
                     returning its unconditional forecast"
                        .into(),
                ),
            })
        }
    }
}

/// Identity query: encode and decode under the factual flag. A faithful
/// model should return (approximately) the factual window.
pub fn null_transform(model: &Model, h: &[f64], y_f: &[f64], e_f: u8) -> Result<Vec<f64>> {
    let q = CounterfactualQuery {
        h: h.to_vec(),
        y_f: y_f.to_vec(),
        e_f,
        e_cf: e_f,
        sample_posterior: false,
        rng_seed: 0,
    };
    Ok(counterfactual(model, &q)?.y_cf)
}

/// Round trip e → 1−e → e in exactly two counterfactual queries; a faithful
/// model should land back near the factual window.
pub fn cycle_transform(model: &Model, h: &[f64], y_f: &[f64], e_f: u8) -> Result<Vec<f64>> {
    let there = counterfactual(
        model,
        &CounterfactualQuery {
            h: h.to_vec(),
            y_f: y_f.to_vec(),
            e_f,
            e_cf: 1 - e_f,
            sample_posterior: false,
            rng_seed: 0,
        },
    )?;
    let back = counterfactual(
        model,
        &CounterfactualQuery {
            h: h.to_vec(),
            y_f: there.y_cf,
            e_f: 1 - e_f,
            e_cf: e_f,
            sample_posterior: false,
            rng_seed: 0,
        },
    )?;
    Ok(back.y_cf)
}

/// Answers a JSON-lines file of queries, writing one JSON result per line
/// in the same order.
pub fn run_query_file(model: &Model, input: &Path, output: &Path) -> Result<usize> {
    let reader = std::io::BufReader::new(std::fs::File::open(input)?);
    if let Some(dir) = output.parent() {
        std::fs::create_dir_all(dir)?;
    }
    let mut writer = std::io::BufWriter::new(std::fs::File::create(output)?);
    let mut n = 0;
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let q: CounterfactualQuery = serde_json::from_str(&line)
            .map_err(|e| CfError::Serde(format!("query line {}: {e}", lineno + 1)))?;
        let r = counterfactual(model, &q)?;
        serde_json::to_writer(&mut writer, &r)?;
        writeln!(writer)?;
        n += 1;
    }
    Ok(n)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::ArchitectureSpec;

    fn arch() -> ArchitectureSpec {
        ArchitectureSpec {
            t1: 6,
            t2: 4,
            latent_dim: 3,
            conv_channels: (3, 4),
            kernel: 3,
            stride: 2,
            cond_embed: 4,
            lstm_hidden: 4,
        }
    }

    fn query(e_f: u8, e_cf: u8) -> CounterfactualQuery {
        CounterfactualQuery {
            h: vec![0.2; 6],
            y_f: vec![-0.1, 0.4, 0.0, 0.3],
            e_f,
            e_cf,
            sample_posterior: false,
            rng_seed: 0,
        }
    }

    #[test]
    fn abduction_then_prediction_uses_the_flipped_flag() {
        let m = Model::init(ModelKind::Cepae, arch(), 3);
        let q = query(1, 0);
        let r = counterfactual(&m, &q).unwrap();
        assert_eq!(r.y_cf.len(), 4);
        assert!(r.warning.is_none());
        // Direct composition of encode and decode must agree exactly.
        let z = m.encode(&q.y_f, &q.h, 1).unwrap();
        assert_eq!(r.z, z);
        assert_eq!(r.y_cf, m.decode(&z, &q.h, 0).unwrap());
    }

    #[test]
    fn null_transform_equals_same_flag_round_trip() {
        let m = Model::init(ModelKind::Caae, arch(), 3);
        let q = query(1, 1);
        let direct = counterfactual(&m, &q).unwrap().y_cf;
        let null = null_transform(&m, &q.h, &q.y_f, 1).unwrap();
        assert_eq!(direct, null);
    }

    #[test]
    fn cycle_makes_exactly_two_queries() {
        let m = Model::init(ModelKind::Cepae, arch(), 3);
        let q = query(0, 1);
        let before = QUERY_CALLS.load(Ordering::Relaxed);
        cycle_transform(&m, &q.h, &q.y_f, 0).unwrap();
        let after = QUERY_CALLS.load(Ordering::Relaxed);
        assert_eq!(after - before, 2);
    }

    #[test]
    fn posterior_sampling_is_seeded_and_optional() {
        let m = Model::init(ModelKind::Cvae, arch(), 3);
        let mut q = query(1, 0);
        let mean_answer = counterfactual(&m, &q).unwrap();
        q.sample_posterior = true;
        q.rng_seed = 5;
        let a = counterfactual(&m, &q).unwrap();
        let b = counterfactual(&m, &q).unwrap();
        assert_eq!(a.y_cf, b.y_cf);
        q.rng_seed = 6;
        let c = counterfactual(&m, &q).unwrap();
        assert_ne!(a.z, c.z);
        assert_ne!(a.z, mean_answer.z);
    }

    #[test]
    fn plain_forecaster_warns_and_ignores_the_flag() {
        let m = Model::init(ModelKind::Lstm, arch(), 3);
        let r0 = counterfactual(&m, &query(1, 0)).unwrap();
        let r1 = counterfactual(&m, &query(1, 1)).unwrap();
        assert!(r0.warning.is_some());
        assert_eq!(r0.y_cf, r1.y_cf);
        // The balanced forecaster does condition on the flag.
        let b = Model::init(ModelKind::AbLstm, arch(), 3);
        let b0 = counterfactual(&b, &query(1, 0)).unwrap();
        let b1 = counterfactual(&b, &query(1, 1)).unwrap();
        assert!(b0.warning.is_none());
        assert_ne!(b0.y_cf, b1.y_cf);
    }

    #[test]
    fn bad_flags_and_shapes_are_input_errors() {
        let m = Model::init(ModelKind::Cepae, arch(), 3);
        let mut q = query(1, 0);
        q.e_cf = 2;
        assert!(counterfactual(&m, &q).is_err());
        let mut q2 = query(1, 0);
        q2.h = vec![0.0; 5];
        assert!(counterfactual(&m, &q2).is_err());
    }

    #[test]
    fn query_file_round_trip() {
        let m = Model::init(ModelKind::Cepae, arch(), 3);
        let dir = tempfile::tempdir().unwrap();
        let qpath = dir.path().join("q.jsonl");
        let rpath = dir.path().join("r.jsonl");
        let mut lines = Vec::new();
        for e in [0u8, 1] {
            lines.push(serde_json::to_string(&query(e, 1 - e)).unwrap());
        }
        std::fs::write(&qpath, lines.join("\n")).unwrap();
        let n = run_query_file(&m, &qpath, &rpath).unwrap();
        assert_eq!(n, 2);
        let body = std::fs::read_to_string(&rpath).unwrap();
        let results: Vec<CounterfactualResult> = body
            .lines()
            .map(|l| serde_json::from_str(l).unwrap())
            .collect();
        assert_eq!(results.len(), 2);
        let direct = counterfactual(&m, &query(0, 1)).unwrap();
        assert_eq!(results[0].y_cf, direct.y_cf);
    }
}
