//! Versioned textual parameter container. The format is line oriented:
//!
//! ```text
//! WSTAN-CKPT v1
//! fingerprint <token>
//! tensor <name> <rank> <dim 0> ... <dim rank-1>
//! <value 0> <value 1> ... <value numel-1>
//! ```
//!
//! Values are printed in scientific notation with 17 significant digits,
//! which round-trips doubles exactly, so save → load → save reproduces the
//! file byte for byte.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use crate::autodiff::{ParamSet, Tensor};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// First line of every checkpoint file.
pub const MAGIC: &str = "WSTAN-CKPT v1";

/// A loaded checkpoint: the producing run's config fingerprint plus named
/// tensors in file order.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint<S: Scalar> {
    pub fingerprint: String,
    pub tensors: Vec<(String, Vec<usize>, Vec<S>)>,
}

fn check_token(kind: &str, token: &str) -> Result<()> {
    if token.is_empty() || token.chars().any(|c| c.is_whitespace()) {
        return Err(Error::Protocol(format!(
            "{kind} {token:?} must be nonempty and free of whitespace"
        )));
    }
    Ok(())
}

/// Writes `params` with the given fingerprint. Tensor order is the
/// parameter set's insertion order, so equal parameter sets serialize to
/// identical bytes.
pub fn save<S: Scalar, W: Write>(
    mut out: W,
    fingerprint: &str,
    params: &ParamSet<S>,
) -> Result<()> {
    check_token("fingerprint", fingerprint)?;
    writeln!(out, "{MAGIC}")?;
    writeln!(out, "fingerprint {fingerprint}")?;
    for (name, tensor) in params.iter() {
        check_token("tensor name", name)?;
        write!(out, "tensor {name} {}", tensor.shape().len())?;
        for dim in tensor.shape() {
            write!(out, " {dim}")?;
        }
        writeln!(out)?;
        for (i, v) in tensor.values().iter().enumerate() {
            if i > 0 {
                write!(out, " ")?;
            }
            write!(out, "{:.16e}", v.to_f64_lossy())?;
        }
        writeln!(out)?;
    }
    Ok(())
}

pub fn save_to_path<S: Scalar>(
    path: &Path,
    fingerprint: &str,
    params: &ParamSet<S>,
) -> Result<()> {
    let file = File::create(path)?;
    let mut out = BufWriter::new(file);
    save(&mut out, fingerprint, params)?;
    out.flush()?;
    Ok(())
}

fn parse_err(line: usize, detail: impl Into<String>) -> Error {
    Error::Parse { line, detail: detail.into() }
}

/// Reads a checkpoint, validating the header, every tensor declaration,
/// and every value. Errors name the offending 1-based line.
pub fn load<S: Scalar, R: BufRead>(input: R) -> Result<Checkpoint<S>> {
    let mut lines = input.lines().enumerate();
    let (_, magic) = lines
        .next()
        .ok_or_else(|| parse_err(1, "empty file, expected magic header"))
        .and_then(|(i, l)| Ok((i, l?)))?;
    if magic != MAGIC {
        return Err(parse_err(1, format!("bad magic {magic:?}, expected {MAGIC:?}")));
    }
    let (_, fp_line) = lines
        .next()
        .ok_or_else(|| parse_err(2, "missing fingerprint line"))
        .and_then(|(i, l)| Ok((i, l?)))?;
    let fingerprint = fp_line
        .strip_prefix("fingerprint ")
        .ok_or_else(|| parse_err(2, format!("expected `fingerprint <token>`, got {fp_line:?}")))?
        .to_string();
    check_token("fingerprint", &fingerprint)?;

    let mut tensors = Vec::new();
    while let Some((idx, line)) = lines.next() {
        let lineno = idx + 1;
        let line = line?;
        let mut fields = line.split_whitespace();
        if fields.next() != Some("tensor") {
            return Err(parse_err(lineno, format!("expected `tensor ...`, got {line:?}")));
        }
        let name = fields
            .next()
            .ok_or_else(|| parse_err(lineno, "tensor line missing a name"))?
            .to_string();
        let rank: usize = fields
            .next()
            .ok_or_else(|| parse_err(lineno, "tensor line missing a rank"))?
            .parse()
            .map_err(|e| parse_err(lineno, format!("bad rank: {e}")))?;
        let dims: Vec<usize> = fields
            .map(|f| f.parse().map_err(|e| parse_err(lineno, format!("bad dimension: {e}"))))
            .collect::<Result<_>>()?;
        if dims.len() != rank {
            return Err(parse_err(
                lineno,
                format!("declared rank {rank} but {} dimensions follow", dims.len()),
            ));
        }
        let numel: usize = dims.iter().product();
        let (vidx, values_line) = lines
            .next()
            .ok_or_else(|| parse_err(lineno + 1, format!("missing values for tensor {name}")))
            .and_then(|(i, l)| Ok((i, l?)))?;
        let values: Vec<S> = values_line
            .split_whitespace()
            .map(|f| {
                f.parse::<f64>()
                    .map(S::from_f64_lossy)
                    .map_err(|e| parse_err(vidx + 1, format!("bad value {f:?}: {e}")))
            })
            .collect::<Result<_>>()?;
        if values.len() != numel {
            return Err(parse_err(
                vidx + 1,
                format!("tensor {name} declares {numel} values but the line holds {}", values.len()),
            ));
        }
        tensors.push((name, dims, values));
    }
    Ok(Checkpoint { fingerprint, tensors })
}

pub fn load_from_path<S: Scalar>(path: &Path) -> Result<Checkpoint<S>> {
    let file = File::open(path)?;
    load(BufReader::new(file))
}

impl<S: Scalar> Checkpoint<S> {
    /// Copies stored values into an existing parameter set. The stored and
    /// live tensors must agree as a set: same names, same shapes, nothing
    /// missing on either side.
    pub fn apply_to(&self, params: &mut ParamSet<S>) -> Result<()> {
        if self.tensors.len() != params.len() {
            return Err(Error::Compatibility(format!(
                "checkpoint holds {} tensors, model has {} parameters",
                self.tensors.len(),
                params.len()
            )));
        }
        for (name, dims, values) in &self.tensors {
            let id = params.id(name).ok_or_else(|| {
                Error::Compatibility(format!("checkpoint tensor {name} has no model parameter"))
            })?;
            let tensor = params.get_mut(id);
            if tensor.shape() != dims.as_slice() {
                return Err(Error::Compatibility(format!(
                    "tensor {name} has shape {:?} in the checkpoint but {:?} in the model",
                    dims,
                    tensor.shape()
                )));
            }
            tensor.values_mut().copy_from_slice(values);
        }
        Ok(())
    }

    /// Rebuilds a standalone parameter set holding the stored tensors.
    pub fn into_params(self) -> Result<ParamSet<S>> {
        let mut params = ParamSet::new();
        for (name, dims, values) in self.tensors {
            params.insert(&name, Tensor::trainable(&dims, values)?)?;
        }
        Ok(params)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn sample_params() -> ParamSet<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut params = ParamSet::new();
        params
            .insert("a.w", Tensor::uniform(&[2, 3], -1.0, 1.0, &mut rng).unwrap())
            .unwrap();
        params
            .insert("a.b", Tensor::trainable(&[3], vec![0.25, -1.5, 3.0]).unwrap())
            .unwrap();
        params
    }

    #[test]
    fn round_trip_is_exact_and_byte_stable() {
        let params = sample_params();
        let mut bytes = Vec::new();
        save(&mut bytes, "f00d", &params).unwrap();
        let loaded: Checkpoint<f64> = load(bytes.as_slice()).unwrap();
        assert_eq!(loaded.fingerprint, "f00d");
        let reloaded = loaded.clone().into_params().unwrap();
        for ((n1, t1), (n2, t2)) in params.iter().zip(reloaded.iter()) {
            assert_eq!(n1, n2);
            assert_eq!(t1.shape(), t2.shape());
            assert_eq!(t1.values(), t2.values());
        }
        let mut again = Vec::new();
        save(&mut again, "f00d", &reloaded).unwrap();
        assert_eq!(bytes, again);
    }

    #[test]
    fn header_starts_with_magic() {
        let params = sample_params();
        let mut bytes = Vec::new();
        save(&mut bytes, "f00d", &params).unwrap();
        let text = String::from_utf8(bytes).unwrap();
        assert!(text.starts_with("WSTAN-CKPT v1\nfingerprint f00d\n"));
    }

    #[test]
    fn apply_to_rejects_shape_and_name_drift() {
        let params = sample_params();
        let mut bytes = Vec::new();
        save(&mut bytes, "f00d", &params).unwrap();
        let loaded: Checkpoint<f64> = load(bytes.as_slice()).unwrap();

        let zeros = |shape: &[usize]| {
            let numel = shape.iter().product();
            Tensor::trainable(shape, vec![0.0; numel]).unwrap()
        };
        let mut renamed = ParamSet::new();
        renamed.insert("a.w", zeros(&[2, 3])).unwrap();
        renamed.insert("other", zeros(&[3])).unwrap();
        assert!(loaded.apply_to(&mut renamed).is_err());

        let mut reshaped = ParamSet::new();
        reshaped.insert("a.w", zeros(&[3, 2])).unwrap();
        reshaped.insert("a.b", zeros(&[3])).unwrap();
        assert!(loaded.apply_to(&mut reshaped).is_err());

        let mut fewer = ParamSet::new();
        fewer.insert("a.w", zeros(&[2, 3])).unwrap();
        assert!(loaded.apply_to(&mut fewer).is_err());
    }

    #[test]
    fn parse_errors_name_the_line() {
        let err = load::<f64, _>("WSTAN-CKPT v2\n".as_bytes()).unwrap_err().to_string();
        assert!(err.contains("line 1"), "{err}");

        let text = format!("{MAGIC}\nfingerprint f\ntensor a.w 2 2 3\n1.0 2.0\n");
        let err = load::<f64, _>(text.as_bytes()).unwrap_err().to_string();
        assert!(err.contains("line 4"), "{err}");

        let text = format!("{MAGIC}\nfingerprint f\nweird line\n");
        let err = load::<f64, _>(text.as_bytes()).unwrap_err().to_string();
        assert!(err.contains("line 3"), "{err}");

        let text = format!("{MAGIC}\nfingerprint f\ntensor a.w 1 2\n1.0 oops\n");
        let err = load::<f64, _>(text.as_bytes()).unwrap_err().to_string();
        assert!(err.contains("line 4") && err.contains("oops"), "{err}");
    }

    #[test]
    fn fingerprint_token_is_validated() {
        let params = sample_params();
        let mut bytes = Vec::new();
        assert!(save(&mut bytes, "has space", &params).is_err());
        assert!(save(&mut bytes, "", &params).is_err());
    }

    #[test]
    fn extreme_values_survive_the_round_trip() {
        let mut params = ParamSet::new();
        let values = vec![
            f64::MIN_POSITIVE,
            -f64::MAX,
            1.0 + f64::EPSILON,
            -0.0,
            1e-300,
            std::f64::consts::PI,
        ];
        params
            .insert("x", Tensor::trainable(&[6], values.clone()).unwrap())
            .unwrap();
        let mut bytes = Vec::new();
        save(&mut bytes, "f", &params).unwrap();
        let loaded: Checkpoint<f64> = load(bytes.as_slice()).unwrap();
        let got = &loaded.tensors[0].2;
        for (a, b) in got.iter().zip(&values) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }
}
