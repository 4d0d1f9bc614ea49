//! CSV and JSON serialization of experiment results.
//!
//! Floats are written with the shortest decimal string that parses back to
//! the same `f64`; non-finite values are written as `NaN`, `inf`, `-inf`.

use std::io::Write;

use serde_json::{json, Value};

use crate::error::{Error, Result};
use crate::harness::{DensityResult, MomentsResult, TableCell, TableRotation};

/// Version tag written by the CLI alongside every artifact.
pub const CSV_SCHEMA_VERSION: u32 = 1;

fn io_err(e: impl std::fmt::Display) -> Error {
    Error::InvalidInput(format!("write failed: {e}"))
}

/// Shortest round-trip representation.
pub fn fmt_f64(x: f64) -> String {
    format!("{x}")
}

fn writer<W: Write>(w: W) -> csv::Writer<W> {
    csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(w)
}

/// `rep,k,r_stat,supercritical`; `r_stat` is empty for excluded replicates.
pub fn write_samples_csv<W: Write>(w: W, res: &DensityResult) -> Result<()> {
    let mut out = writer(w);
    out.write_record(["rep", "k", "r_stat", "supercritical"]).map_err(io_err)?;
    for rep in 0..res.reps {
        for s in &res.spikes {
            let (stat, sup) = match s.samples[rep] {
                Some(v) => (fmt_f64(v), "true"),
                None => (String::new(), "false"),
            };
            out.write_record([rep.to_string(), (s.k + 1).to_string(), stat, sup.into()])
                .map_err(io_err)?;
        }
    }
    out.flush().map_err(io_err)
}

/// `x,gaussian_pdf,edgeworth_pdf` for the top spike, followed by
/// `edgeworth_pdf_<k>` columns for the others (1-based `k`).
pub fn write_curves_csv<W: Write>(w: W, res: &DensityResult) -> Result<()> {
    let mut out = writer(w);
    let mut header = vec!["x".to_string(), "gaussian_pdf".into(), "edgeworth_pdf".into()];
    header.extend(res.spikes.iter().skip(1).map(|s| format!("edgeworth_pdf_{}", s.k + 1)));
    out.write_record(&header).map_err(io_err)?;
    let Some(first) = res.spikes.first() else {
        return out.flush().map_err(io_err);
    };
    for (j, pt) in first.curves.iter().enumerate() {
        let mut row = vec![fmt_f64(pt.x), fmt_f64(pt.gaussian_pdf), fmt_f64(pt.edgeworth_pdf)];
        row.extend(res.spikes.iter().skip(1).map(|s| fmt_f64(s.curves[j].edgeworth_pdf)));
        out.write_record(&row).map_err(io_err)?;
    }
    out.flush().map_err(io_err)
}

fn num(x: f64) -> Value {
    // JSON has no NaN; keep the value visible as a string
    if x.is_finite() {
        json!(x)
    } else {
        json!(fmt_f64(x))
    }
}

/// Top-level `ks_gauss`, `ks_edgeworth`, `excluded` refer to the top spike;
/// `spikes` repeats them for every spike.
pub fn density_summary(res: &DensityResult) -> Value {
    let spikes: Vec<Value> = res
        .spikes
        .iter()
        .map(|s| {
            json!({
                "k": s.k + 1,
                "ks_gauss": num(s.ks_gauss),
                "ks_edgeworth": num(s.ks_edgeworth),
                "excluded": s.excluded,
                "histogram": {
                    "edges": s.histogram.edges.iter().map(|&e| num(e)).collect::<Vec<_>>(),
                    "counts": s.histogram.counts,
                    "below": s.histogram.below,
                    "above": s.histogram.above,
                },
                "coefficients": s.coefficients,
            })
        })
        .collect();
    let top = res.spikes.first();
    json!({
        "schema_version": CSV_SCHEMA_VERSION,
        "ks_gauss": top.map_or(Value::Null, |s| num(s.ks_gauss)),
        "ks_edgeworth": top.map_or(Value::Null, |s| num(s.ks_edgeworth)),
        "excluded": top.map_or(0, |s| s.excluded),
        "n": res.n,
        "reps": res.reps,
        "seed": res.seed,
        "spikes": spikes,
    })
}

pub fn write_json<W: Write>(mut w: W, v: &Value) -> Result<()> {
    serde_json::to_writer_pretty(&mut w, v).map_err(io_err)?;
    w.write_all(b"\n").map_err(io_err)
}

fn rotation_tag(r: TableRotation) -> &'static str {
    match r {
        TableRotation::Diagonal => "diagonal",
        TableRotation::Block => "block",
        TableRotation::General => "general",
    }
}

/// `p,n,method,percent,reps,seed,dist,covariance`.
pub fn write_accuracy_csv<W: Write>(w: W, cells: &[TableCell]) -> Result<()> {
    let mut out = writer(w);
    out.write_record(["p", "n", "method", "percent", "reps", "seed", "dist", "covariance"])
        .map_err(io_err)?;
    for c in cells {
        for m in &c.result.methods {
            out.write_record([
                c.result.p.to_string(),
                c.result.n.to_string(),
                m.method.label().to_string(),
                fmt_f64(m.percent),
                c.result.reps.to_string(),
                c.result.seed.to_string(),
                c.dist.tag().to_string(),
                rotation_tag(c.rotation).to_string(),
            ])
            .map_err(io_err)?;
        }
    }
    out.flush().map_err(io_err)
}

/// `estimator,mean,se,truth`.
pub fn write_moments_csv<W: Write>(w: W, res: &MomentsResult) -> Result<()> {
    let mut out = writer(w);
    out.write_record(["estimator", "mean", "se", "truth"]).map_err(io_err)?;
    for (name, s) in [
        ("beta_z", &res.beta_z),
        ("gamma_sq", &res.gamma_sq),
        ("delta", &res.delta),
    ] {
        out.write_record([name.to_string(), fmt_f64(s.mean), fmt_f64(s.se), fmt_f64(s.truth)])
            .map_err(io_err)?;
    }
    out.flush().map_err(io_err)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn floats_round_trip() {
        for x in [0.1, 1.0 / 3.0, 1e-300, 6.02e23, -0.0, 123456789.12345679, f64::MIN_POSITIVE] {
            let s = fmt_f64(x);
            assert_eq!(s.parse::<f64>().unwrap().to_bits(), x.to_bits(), "{s}");
        }
        assert_eq!(fmt_f64(f64::NAN), "NaN");
    }
}
