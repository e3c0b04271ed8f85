//! File formats: instance JSON, solver trace CSV, run summary JSON and
//! landscape CSV.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::experiments::LandscapeGrid;
use crate::model::{Matrix, ProblemInstance, RegMode, Terms, Vector};
use crate::newton::SolveTrace;

/// On-disk instance layout. `A` is row-major.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InstanceFile {
    pub n: usize,
    pub d: usize,
    #[serde(rename = "A")]
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    pub w: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x_star: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reg_mode: Option<RegMode>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub terms: Option<Terms>,
}

impl From<&ProblemInstance> for InstanceFile {
    fn from(inst: &ProblemInstance) -> Self {
        let a = inst.a();
        let mut rows = Vec::with_capacity(a.len());
        for i in 0..a.nrows() {
            rows.extend(a.row(i).iter().copied());
        }
        let terms = inst.terms();
        Self {
            n: inst.n(),
            d: inst.d(),
            a: rows,
            b: inst.b().as_slice().to_vec(),
            w: inst.w().as_slice().to_vec(),
            x_star: inst.x_star().map(|x| x.as_slice().to_vec()),
            reg_mode: Some(inst.reg_mode()),
            terms: (terms != Terms::default()).then_some(terms),
        }
    }
}

impl TryFrom<InstanceFile> for ProblemInstance {
    type Error = Error;

    fn try_from(file: InstanceFile) -> Result<Self> {
        if file.a.len() != file.n * file.d {
            return Err(Error::DimensionMismatch {
                what: "A entries",
                expected: file.n * file.d,
                got: file.a.len(),
            });
        }
        ProblemInstance::with_options(
            Matrix::from_row_slice(file.n, file.d, &file.a),
            Vector::from_vec(file.b),
            Vector::from_vec(file.w),
            file.terms.unwrap_or_default(),
            file.reg_mode.unwrap_or_default(),
            file.x_star.map(Vector::from_vec),
        )
    }
}

pub fn read_instance<R: Read>(reader: R) -> Result<ProblemInstance> {
    let file: InstanceFile = serde_json::from_reader(reader)?;
    file.try_into()
}

pub fn write_instance<W: Write>(mut writer: W, inst: &ProblemInstance) -> Result<()> {
    serde_json::to_writer_pretty(&mut writer, &InstanceFile::from(inst))?;
    writeln!(writer)?;
    Ok(())
}

/// Writes `t,loss,grad_norm,err_to_opt,step_seconds`. Timing is wall-clock and
/// therefore left empty unless `with_timing` is set, which keeps default
/// output byte-reproducible.
pub fn write_trace_csv<W: Write>(writer: W, trace: &SolveTrace, with_timing: bool) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["t", "loss", "grad_norm", "err_to_opt", "step_seconds"])?;
    for r in &trace.iterates {
        let err = r.err_to_opt.map(|e| e.to_string()).unwrap_or_default();
        let secs = if with_timing {
            r.step_seconds.to_string()
        } else {
            String::new()
        };
        w.write_record([
            r.t.to_string(),
            r.loss.to_string(),
            r.grad_norm.to_string(),
            err,
            secs,
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub converged: bool,
    pub iters: usize,
    pub final_grad_norm: f64,
    pub final_err: Option<f64>,
}

impl From<&SolveTrace> for RunSummary {
    fn from(trace: &SolveTrace) -> Self {
        let last = trace.last();
        Self {
            converged: trace.converged,
            iters: trace.iterations_run,
            final_grad_norm: last.grad_norm,
            final_err: last.err_to_opt,
        }
    }
}

pub fn write_summary<W: Write>(mut writer: W, summary: &RunSummary) -> Result<()> {
    serde_json::to_writer_pretty(&mut writer, summary)?;
    writeln!(writer)?;
    Ok(())
}

/// Writes `u,v,l_exp,l_cent,l_reg,total`, one row per grid point.
pub fn write_landscape_csv<W: Write>(writer: W, grid: &LandscapeGrid) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["u", "v", "l_exp", "l_cent", "l_reg", "total"])?;
    for (u, v, l) in grid.rows() {
        w.write_record([
            u.to_string(),
            v.to_string(),
            l.l_exp.to_string(),
            l.l_cent.to_string(),
            l.l_reg.to_string(),
            l.total.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
