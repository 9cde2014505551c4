//! Truth manifests: one JSON object per line.
//!
//! ```text
//! {"id":"inv_add_sub_mul-2.1.1-n0-s3","operands":"inv,+,-,*","a":2,"b":1,"c":1,"sigma":0.0,"seed":3,"truth":"(+ ...)"}
//! ```
//!
//! `b` and `c` describe generated truths; hand-written entries may set them
//! to 0.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use cvgp::bench::{gen_truth, BenchError, BenchmarkConfig, OperandSet};
use cvgp::ExpressionTree;
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub id: String,
    pub operands: OperandSet,
    pub a: usize,
    #[serde(default)]
    pub b: usize,
    #[serde(default)]
    pub c: usize,
    #[serde(default)]
    pub sigma: f64,
    pub seed: u64,
    pub truth: String,
}

impl ManifestEntry {
    pub fn truth_tree(&self) -> Result<ExpressionTree, String> {
        let t: ExpressionTree = self.truth.parse().map_err(|e| format!("truth: {e}"))?;
        if !t.is_closed() {
            return Err("truth has open constants".into());
        }
        if let Some(&v) = t.variables().iter().find(|&&v| v >= self.a) {
            return Err(format!("truth uses x{} but a = {}", v + 1, self.a));
        }
        if let Some(op) = t.operators().into_iter().find(|o| !self.operands.0.contains(o)) {
            return Err(format!("truth uses `{}` outside the operand set", op.symbol()));
        }
        Ok(t)
    }

    fn validate(&self) -> Result<(), String> {
        if self.id.is_empty() || self.id.contains(['/', '\\']) || self.id.starts_with('.') {
            return Err(format!("id `{}` is not usable as a directory name", self.id));
        }
        if self.a == 0 {
            return Err("a must be positive".into());
        }
        if !(self.sigma.is_finite() && self.sigma >= 0.0) {
            return Err(format!("sigma {} is not a finite non-negative number", self.sigma));
        }
        self.truth_tree().map(drop)
    }
}

pub fn entry_id(operands: &OperandSet, (a, b, c): (usize, usize, usize), sigma: f64, seed: u64) -> String {
    format!("{}-{a}.{b}.{c}-n{sigma}-s{seed}", operands.tag())
}

/// One entry per family, noise level and seed, in that nesting order.
pub fn generate(
    families: &[(OperandSet, (usize, usize, usize))],
    sigmas: &[f64],
    seeds: &[u64],
) -> Result<Vec<ManifestEntry>, BenchError> {
    let mut out = Vec::new();
    for (operands, abc @ (a, b, c)) in families {
        for &sigma in sigmas {
            for &seed in seeds {
                let cfg = BenchmarkConfig {
                    operands: operands.clone(),
                    a: *a,
                    b: *b,
                    c: *c,
                    sigma,
                    seed,
                };
                // the truth depends on the seed only, so every noise level
                // shares the same expressions
                let truth = gen_truth(&cfg)?;
                out.push(ManifestEntry {
                    id: entry_id(operands, *abc, sigma, seed),
                    operands: operands.clone(),
                    a: *a,
                    b: *b,
                    c: *c,
                    sigma,
                    seed,
                    truth: truth.to_string(),
                });
            }
        }
    }
    Ok(out)
}

pub fn to_jsonl(entries: &[ManifestEntry]) -> String {
    let mut s = String::new();
    for e in entries {
        let _ = writeln!(s, "{}", serde_json::to_string(e).expect("entry serializes"));
    }
    s
}

pub fn parse(text: &str, path: &Path) -> Result<Vec<ManifestEntry>, CliError> {
    let mut out: Vec<ManifestEntry> = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let err = |message: String| CliError::Manifest {
            path: path.to_path_buf(),
            line: i + 1,
            message,
        };
        let entry: ManifestEntry = serde_json::from_str(line).map_err(|e| err(e.to_string()))?;
        entry.validate().map_err(err)?;
        if out.iter().any(|o| o.id == entry.id) {
            return Err(err(format!("duplicate id `{}`", entry.id)));
        }
        out.push(entry);
    }
    if out.is_empty() {
        return Err(CliError::Manifest {
            path: path.to_path_buf(),
            line: 0,
            message: "manifest has no entries".into(),
        });
    }
    Ok(out)
}

pub fn read(path: &Path) -> Result<Vec<ManifestEntry>, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    parse(&text, path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use cvgp::bench::term_census;

    fn inv() -> OperandSet {
        "inv,+,-,*".parse().unwrap()
    }

    #[test]
    fn generated_entries_round_trip() {
        let entries = generate(&[(inv(), (2, 1, 1)), (inv(), (3, 2, 2))], &[0.0, 0.1], &[0, 1, 2]).unwrap();
        assert_eq!(entries.len(), 12);
        let back = parse(&to_jsonl(&entries), Path::new("m.jsonl")).unwrap();
        assert_eq!(back, entries);
        for e in &back {
            let census = term_census(&e.truth_tree().unwrap()).unwrap();
            assert_eq!((census.singular, census.cross, census.variables.len()), (e.b, e.c, e.a));
        }
        // noise levels share truths
        assert_eq!(entries[0].truth, entries[3].truth);
        assert_eq!(entries[0].id, "inv_add_sub_mul-2.1.1-n0-s0");
    }

    #[test]
    fn bad_lines_are_located() {
        let good = r#"{"id":"p","operands":"+,-,*","a":4,"seed":0,"truth":"(* (+ x1 x2) (+ x3 x4))"}"#;
        assert_eq!(parse(good, Path::new("m")).unwrap()[0].b, 0);
        for (bad, line) in [
            (format!("{good}\n{good}"), 2),
            (r#"{"id":"q","operands":"+,-,*","a":3,"seed":0,"truth":"(* (+ x1 x2) (+ x3 x4))"}"#.to_string(), 1),
            (r#"{"id":"q","operands":"+,-,*","a":1,"seed":0,"truth":"(inv x1)"}"#.to_string(), 1),
            (format!("\n# c\n{}", r#"{"id":"q","operands":"+,-,*","a":1,"seed":0,"truth":"(+ x1 C<1,open>)"}"#), 3),
            ("{}".to_string(), 1),
        ] {
            match parse(&bad, Path::new("m")) {
                Err(CliError::Manifest { line: l, .. }) => assert_eq!(l, line, "{bad}"),
                other => panic!("{bad}: {other:?}"),
            }
        }
        assert!(parse("", Path::new("m")).is_err());
    }
}
