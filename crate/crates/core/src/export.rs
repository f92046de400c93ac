//! CSV export of a JSONL trajectory log, one file per joint.

use std::collections::BTreeMap;
use std::io::BufRead;
use std::path::{Path, PathBuf};

use crate::trajectory::{read_log, LogRecord};

#[derive(Debug, thiserror::Error)]
pub enum ExportError {
    #[error("{0}")]
    Io(#[from] std::io::Error),
    #[error("{0}")]
    Csv(#[from] csv::Error),
}

/// `arm/elbow` becomes `arm_elbow.csv`.
pub fn csv_file_name(joint: &str) -> String {
    format!("{}.csv", joint.replace(crate::model::NAME_SEPARATOR, "_"))
}

/// Writes `t,tick,fsm,q,qd,tau,q_ref,qd_ref` rows for every joint seen in
/// tick records. Returns the files written, in joint name order.
pub fn export_csv(log: impl BufRead, out_dir: &Path) -> Result<Vec<PathBuf>, ExportError> {
    let records = read_log(log)?;
    std::fs::create_dir_all(out_dir)?;
    let mut writers: BTreeMap<String, (PathBuf, csv::Writer<std::fs::File>)> = BTreeMap::new();
    for rec in &records {
        let LogRecord::Tick {
            t, tick, fsm, joints, ..
        } = rec
        else {
            continue;
        };
        for (name, j) in joints {
            if !writers.contains_key(name) {
                let path = out_dir.join(csv_file_name(name));
                let mut w = csv::Writer::from_path(&path)?;
                w.write_record(["t", "tick", "fsm", "q", "qd", "tau", "q_ref", "qd_ref"])?;
                writers.insert(name.clone(), (path, w));
            }
            let (_, w) = writers.get_mut(name).expect("inserted above");
            w.write_record([
                t.to_string(),
                tick.to_string(),
                fsm.clone(),
                j.q.to_string(),
                j.qd.to_string(),
                j.tau.to_string(),
                j.q_ref.to_string(),
                j.qd_ref.to_string(),
            ])?;
        }
    }
    let mut paths = Vec::new();
    for (_, (path, mut w)) in writers {
        w.flush()?;
        paths.push(path);
    }
    Ok(paths)
}
