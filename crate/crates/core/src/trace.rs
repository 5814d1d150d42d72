//! Time-indexed simulation record with CSV export and import.
//!
//! Columns, in order: `t`, `q_<name>`, `qdot_<name>`, `tau_<name>`,
//! `fext_x..z`, `c_<i>`, `E_kin`, `E_el`, `E_grav`, `x..z` (end effector),
//! then the optional groups `qd_<name>`, `qdotd_<name>` (configuration
//! reference), `xd_x..z` (Cartesian reference) and `sigma_<i>` (contact sigmoid).

use std::io::{Read, Write};
use std::path::Path;

use nalgebra::{DVector, Vector3};

use crate::dynamics::{Energy, RobotState};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct TraceRow {
    pub t: f64,
    pub q: DVector<f64>,
    pub qdot: DVector<f64>,
    pub tau: DVector<f64>,
    /// Net external force at the end effector.
    pub f_ext: Vector3<f64>,
    pub gaps: Vec<f64>,
    pub energy: Energy,
    pub x: Vector3<f64>,
    pub q_d: Option<DVector<f64>>,
    pub qdot_d: Option<DVector<f64>>,
    pub x_d: Option<Vector3<f64>>,
    pub sigma: Vec<f64>,
}

impl TraceRow {
    pub fn state(&self) -> RobotState {
        RobotState::new(self.q.clone(), self.qdot.clone(), self.t)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimTrace {
    pub coordinate_names: Vec<String>,
    pub module_count: usize,
    pub dt: f64,
    pub rows: Vec<TraceRow>,
}

fn fmt(v: f64) -> String {
    // shortest representation that round-trips
    format!("{v:?}")
}

impl SimTrace {
    pub fn new(coordinate_names: Vec<String>, module_count: usize, dt: f64) -> Self {
        Self { coordinate_names, module_count, dt, rows: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn has_reference(&self) -> bool {
        self.rows.first().is_some_and(|r| r.q_d.is_some() && r.qdot_d.is_some())
    }

    /// Checks uniform, strictly increasing time stamps.
    pub fn check_timestamps(&self) -> Result<()> {
        for w in self.rows.windows(2) {
            let dt = w[1].t - w[0].t;
            if !(dt > 0.0) || (dt - self.dt).abs() > 1e-9 * self.dt.max(1.0) + 1e-12 * w[1].t.abs() {
                return Err(Error::Csv(format!("non-uniform time step at t = {}", w[1].t)));
            }
        }
        Ok(())
    }

    fn header(&self) -> Vec<String> {
        let names = &self.coordinate_names;
        let mut h = vec!["t".to_string()];
        for p in ["q", "qdot", "tau"] {
            h.extend(names.iter().map(|n| format!("{p}_{n}")));
        }
        h.extend(["fext_x", "fext_y", "fext_z"].map(String::from));
        h.extend((1..=self.module_count).map(|i| format!("c_{i}")));
        h.extend(["E_kin", "E_el", "E_grav", "x", "y", "z"].map(String::from));
        if let Some(r) = self.rows.first() {
            if r.q_d.is_some() {
                h.extend(names.iter().map(|n| format!("qd_{n}")));
            }
            if r.qdot_d.is_some() {
                h.extend(names.iter().map(|n| format!("qdotd_{n}")));
            }
            if r.x_d.is_some() {
                h.extend(["xd_x", "xd_y", "xd_z"].map(String::from));
            }
            h.extend((1..=r.sigma.len()).map(|i| format!("sigma_{i}")));
        }
        h
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        let csv_err = |e: csv::Error| Error::Csv(e.to_string());
        wr.write_record(self.header()).map_err(csv_err)?;
        for r in &self.rows {
            let mut rec = vec![fmt(r.t)];
            for v in [&r.q, &r.qdot, &r.tau] {
                rec.extend(v.iter().map(|x| fmt(*x)));
            }
            rec.extend(r.f_ext.iter().map(|x| fmt(*x)));
            rec.extend(r.gaps.iter().map(|x| fmt(*x)));
            rec.extend([r.energy.kinetic, r.energy.elastic, r.energy.gravitational].map(fmt));
            rec.extend(r.x.iter().map(|x| fmt(*x)));
            if let Some(v) = &r.q_d {
                rec.extend(v.iter().map(|x| fmt(*x)));
            }
            if let Some(v) = &r.qdot_d {
                rec.extend(v.iter().map(|x| fmt(*x)));
            }
            if let Some(v) = &r.x_d {
                rec.extend(v.iter().map(|x| fmt(*x)));
            }
            rec.extend(r.sigma.iter().map(|x| fmt(*x)));
            wr.write_record(&rec).map_err(csv_err)?;
        }
        wr.flush()?;
        Ok(())
    }

    pub fn write_csv_file(&self, path: &Path) -> Result<()> {
        let f = std::fs::File::create(path)?;
        self.write_csv(std::io::BufWriter::new(f))
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("csv is utf-8")
    }

    pub fn read_csv<R: Read>(r: R) -> Result<Self> {
        let mut rd = csv::Reader::from_reader(r);
        let csv_err = |e: csv::Error| Error::Csv(e.to_string());
        let header: Vec<String> = rd.headers().map_err(csv_err)?.iter().map(String::from).collect();
        let find = |name: &str| header.iter().position(|h| h == name);
        let names: Vec<String> = header.iter().filter_map(|h| h.strip_prefix("q_").map(String::from)).collect();
        let n = names.len();
        let module_count = header.iter().filter(|h| h.starts_with("c_")).count();
        let sigma_count = header.iter().filter(|h| h.starts_with("sigma_")).count();
        let col = |name: String| find(&name).ok_or_else(|| Error::Csv(format!("missing column {name}")));
        let t_col = col("t".into())?;
        let group =
            |prefix: &str| -> Result<Vec<usize>> { names.iter().map(|nm| col(format!("{prefix}_{nm}"))).collect() };
        let (q_cols, qd_cols, tau_cols) = (group("q")?, group("qdot")?, group("tau")?);
        let opt_group =
            |prefix: &str| -> Option<Vec<usize>> { names.iter().map(|nm| find(&format!("{prefix}_{nm}"))).collect() };
        let (ref_cols, refd_cols) = (opt_group("qd"), opt_group("qdotd"));
        let xyz =
            |names: [&str; 3]| -> Option<[usize; 3]> { Some([find(names[0])?, find(names[1])?, find(names[2])?]) };
        let f_cols = xyz(["fext_x", "fext_y", "fext_z"]).ok_or(Error::Csv("missing fext columns".into()))?;
        let x_cols = xyz(["x", "y", "z"]).ok_or(Error::Csv("missing end-effector columns".into()))?;
        let xd_cols = xyz(["xd_x", "xd_y", "xd_z"]);
        let c_cols: Vec<usize> = (1..=module_count).map(|i| col(format!("c_{i}"))).collect::<Result<_>>()?;
        let s_cols: Vec<usize> = (1..=sigma_count).map(|i| col(format!("sigma_{i}"))).collect::<Result<_>>()?;
        let e_cols = [col("E_kin".into())?, col("E_el".into())?, col("E_grav".into())?];

        let mut rows = Vec::new();
        for (line, rec) in rd.records().enumerate() {
            let rec = rec.map_err(csv_err)?;
            let vals: Vec<f64> = rec
                .iter()
                .map(|s| s.parse::<f64>().map_err(|e| Error::Csv(format!("row {}: {e}", line + 2))))
                .collect::<Result<_>>()?;
            let pick = |cols: &[usize]| DVector::from_iterator(cols.len(), cols.iter().map(|&c| vals[c]));
            let v3 = |c: [usize; 3]| Vector3::new(vals[c[0]], vals[c[1]], vals[c[2]]);
            rows.push(TraceRow {
                t: vals[t_col],
                q: pick(&q_cols),
                qdot: pick(&qd_cols),
                tau: pick(&tau_cols),
                f_ext: v3(f_cols),
                gaps: c_cols.iter().map(|&c| vals[c]).collect(),
                energy: Energy { kinetic: vals[e_cols[0]], elastic: vals[e_cols[1]], gravitational: vals[e_cols[2]] },
                x: v3(x_cols),
                q_d: ref_cols.as_ref().map(|c| pick(c)),
                qdot_d: refd_cols.as_ref().map(|c| pick(c)),
                x_d: xd_cols.map(v3),
                sigma: s_cols.iter().map(|&c| vals[c]).collect(),
            });
        }
        let dt = if rows.len() >= 2 { rows[1].t - rows[0].t } else { 0.0 };
        debug_assert_eq!(n, names.len());
        Ok(Self { coordinate_names: names, module_count, dt, rows })
    }

    pub fn read_csv_file(path: &Path) -> Result<Self> {
        Self::read_csv(std::io::BufReader::new(std::fs::File::open(path)?))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(t: f64, with_ref: bool) -> TraceRow {
        TraceRow {
            t,
            q: DVector::from_vec(vec![0.1 * t, -0.3]),
            qdot: DVector::from_vec(vec![0.1, 1.0 / 3.0]),
            tau: DVector::from_vec(vec![1e-7, 2.5]),
            f_ext: Vector3::new(0.0, 1.0, 0.0),
            gaps: vec![0.025],
            energy: Energy { kinetic: 0.5, elastic: 0.25, gravitational: -1.0 },
            x: Vector3::new(0.0, 0.0, 0.68),
            q_d: with_ref.then(|| DVector::from_vec(vec![0.0, 0.0])),
            qdot_d: with_ref.then(|| DVector::from_vec(vec![0.0, 0.0])),
            x_d: None,
            sigma: if with_ref { vec![-1e-6] } else { vec![] },
        }
    }

    #[test]
    fn csv_round_trip() {
        for with_ref in [false, true] {
            let mut tr = SimTrace::new(vec!["theta1".into(), "dx1".into()], 1, 1e-3);
            for k in 0..5 {
                tr.rows.push(row(k as f64 * 1e-3, with_ref));
            }
            let text = tr.to_csv_string();
            let back = SimTrace::read_csv(text.as_bytes()).unwrap();
            assert_eq!(back.rows, tr.rows);
            assert_eq!(back.coordinate_names, tr.coordinate_names);
            assert_eq!(back.has_reference(), with_ref);
            back.check_timestamps().unwrap();
        }
    }

    #[test]
    fn missing_column_reported() {
        let err = SimTrace::read_csv("t,q_a\n0,1\n".as_bytes()).unwrap_err();
        assert!(err.to_string().contains("missing column qdot_a"), "{err}");
    }
}
