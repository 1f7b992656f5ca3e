//! Per-pair metric reports with a mean row, as CSV or a text table.

use std::fmt::Write as _;

use ndarray::Array2;

use super::{ag, ei, fusion_vif, qabf, qw, sf};
use crate::error::{ensure, Result};
use crate::imaging::ImageF;

pub const CSV_HEADER: [&str; 7] = ["pair", "vif", "ag", "ei", "qabf", "sf", "qw"];

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct MetricValues {
    pub vif: f64,
    pub ag: f64,
    pub ei: f64,
    pub qabf: f64,
    pub sf: f64,
    pub qw: f64,
}

impl MetricValues {
    pub fn as_array(&self) -> [f64; 6] {
        [self.vif, self.ag, self.ei, self.qabf, self.sf, self.qw]
    }

    fn from_array(v: [f64; 6]) -> Self {
        MetricValues {
            vif: v[0],
            ag: v[1],
            ei: v[2],
            qabf: v[3],
            sf: v[4],
            qw: v[5],
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PairMetrics {
    pub pair: String,
    /// `Err` holds the failure message of the first metric that failed.
    pub values: std::result::Result<MetricValues, String>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricReport {
    pub rows: Vec<PairMetrics>,
    /// Mean over the rows that succeeded; `None` if none did.
    pub mean: Option<MetricValues>,
}

/// Luma on the 0-255 scale.
pub fn luma255(img: &ImageF) -> Array2<f64> {
    img.luma().plane(0).mapv(|v| v * 255.0)
}

/// All six metrics for one `(infrared, visible, fused)` triple.
pub fn evaluate_triple(ir: &ImageF, vi: &ImageF, fused: &ImageF) -> Result<MetricValues> {
    ensure!(
        ir.same_size(vi) && ir.same_size(fused),
        InvalidInput,
        "triple is not aligned: {}x{}, {}x{}, {}x{}",
        ir.height(),
        ir.width(),
        vi.height(),
        vi.width(),
        fused.height(),
        fused.width()
    );
    let (a, b, f) = (luma255(ir), luma255(vi), luma255(fused));
    let v = MetricValues {
        vif: fusion_vif(a.view(), b.view(), f.view())?,
        ag: ag(f.view())?,
        ei: ei(f.view())?,
        qabf: qabf(a.view(), b.view(), f.view())?,
        sf: sf(f.view())?,
        qw: qw(a.view(), b.view(), f.view())?,
    };
    ensure!(
        v.as_array().iter().all(|x| x.is_finite()),
        Numeric,
        "non-finite metric value"
    );
    Ok(v)
}

/// Evaluates every triple; a failing triple is recorded with its error and
/// excluded from the mean.
pub fn evaluate(triples: &[(String, ImageF, ImageF, ImageF)]) -> MetricReport {
    let rows: Vec<PairMetrics> = triples
        .iter()
        .map(|(name, a, b, f)| PairMetrics {
            pair: name.clone(),
            values: evaluate_triple(a, b, f).map_err(|e| e.to_string()),
        })
        .collect();
    MetricReport::from_rows(rows)
}

impl MetricReport {
    pub fn from_rows(rows: Vec<PairMetrics>) -> Self {
        let ok: Vec<[f64; 6]> = rows
            .iter()
            .filter_map(|r| r.values.as_ref().ok())
            .map(|v| v.as_array())
            .collect();
        let mean = (!ok.is_empty()).then(|| {
            let mut m = [0.0; 6];
            for v in &ok {
                for (acc, x) in m.iter_mut().zip(v) {
                    *acc += x;
                }
            }
            MetricValues::from_array(m.map(|s| s / ok.len() as f64))
        });
        MetricReport { rows, mean }
    }

    pub fn failures(&self) -> usize {
        self.rows.iter().filter(|r| r.values.is_err()).count()
    }

    /// Header, one row per pair, then a `mean` row. Failed pairs keep their
    /// row with the error in place of values.
    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(CSV_HEADER).expect("in-memory write");
        for r in &self.rows {
            match &r.values {
                Ok(v) => w.write_record(row(&r.pair, v)).expect("in-memory write"),
                Err(e) => {
                    let mut rec = vec![format!("{} (failed: {e})", r.pair)];
                    rec.extend(std::iter::repeat_n(String::new(), 6));
                    w.write_record(rec).expect("in-memory write")
                }
            }
        }
        if let Some(m) = &self.mean {
            w.write_record(row("mean", m)).expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("flush")).expect("utf-8")
    }

    pub fn table(&self) -> String {
        let width = self
            .rows
            .iter()
            .map(|r| r.pair.len())
            .max()
            .unwrap_or(4)
            .max(4);
        let mut s = format!("{:<width$}", "pair");
        for h in &CSV_HEADER[1..] {
            let _ = write!(s, " {h:>10}");
        }
        s.push('\n');
        let mut line = |name: &str, v: &MetricValues| {
            let _ = write!(s, "{name:<width$}");
            for x in v.as_array() {
                let _ = write!(s, " {x:>10.4}");
            }
            s.push('\n');
        };
        for r in &self.rows {
            if let Ok(v) = &r.values {
                line(&r.pair, v)
            }
        }
        if let Some(m) = &self.mean {
            line("mean", m);
        }
        for r in &self.rows {
            if let Err(e) = &r.values {
                let _ = writeln!(s, "{}: failed: {e}", r.pair);
            }
        }
        s
    }
}

fn row(name: &str, v: &MetricValues) -> Vec<String> {
    let mut r = vec![name.to_string()];
    r.extend(v.as_array().iter().map(|x| format!("{x:.6}")));
    r
}
