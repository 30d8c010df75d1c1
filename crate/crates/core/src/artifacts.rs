//! Output artifacts: CSV/SVG/report files under a run directory, listed in
//! a manifest with content hashes so reruns can be compared byte for byte.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::error::Result;
use crate::sim::PathTrace;

/// FNV-1a 64-bit content hash.
pub fn fnv64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for b in bytes {
        h ^= *b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

/// Collects written files and renders `manifest.txt`.
pub struct Manifest {
    dir: PathBuf,
    header: Vec<(String, String)>,
    files: Vec<(String, usize, u64)>,
}

impl Manifest {
    pub fn new(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir)?;
        Ok(Self {
            dir: dir.to_path_buf(),
            header: Vec::new(),
            files: Vec::new(),
        })
    }

    pub fn set(&mut self, key: &str, value: impl ToString) {
        self.header.push((key.to_string(), value.to_string()));
    }

    pub fn write(&mut self, name: &str, contents: &str) -> Result<()> {
        let bytes = contents.as_bytes();
        fs::write(self.dir.join(name), bytes)?;
        self.files.push((name.to_string(), bytes.len(), fnv64(bytes)));
        Ok(())
    }

    pub fn finish(mut self) -> Result<()> {
        self.files.sort();
        let mut out = String::new();
        for (k, v) in &self.header {
            let _ = writeln!(out, "{k} = {v}");
        }
        let _ = writeln!(out, "files:");
        for (name, len, hash) in &self.files {
            let _ = writeln!(out, "  {name} bytes={len} fnv64={hash:016x}");
        }
        fs::write(self.dir.join("manifest.txt"), out)?;
        Ok(())
    }
}

/// Minimal SVG line chart of selected trajectory columns.
pub fn trace_svg(dt: f64, trace: &PathTrace, columns: &[(usize, &str)]) -> String {
    const W: f64 = 800.0;
    const H: f64 = 420.0;
    const PAD: f64 = 45.0;
    let n = trace.states.len();
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for s in &trace.states {
        for (c, _) in columns {
            lo = lo.min(s[*c]);
            hi = hi.max(s[*c]);
        }
    }
    if !(lo.is_finite() && hi.is_finite()) || lo == hi {
        lo -= 1.0;
        hi += 1.0;
    }
    let span = hi - lo;
    let t_max = (n.saturating_sub(1)) as f64 * dt;
    let xmap = |t: f64| PAD + (W - 2.0 * PAD) * if t_max > 0.0 { t / t_max } else { 0.0 };
    let ymap = |v: f64| H - PAD - (H - 2.0 * PAD) * (v - lo) / span;

    let palette = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"];
    let mut out = String::new();
    let _ = write!(
        out,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{W}\" height=\"{H}\" viewBox=\"0 0 {W} {H}\">\n"
    );
    let _ = writeln!(out, "<rect width=\"{W}\" height=\"{H}\" fill=\"white\"/>");
    let _ = writeln!(
        out,
        "<line x1=\"{PAD}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"black\"/>",
        H - PAD,
        W - PAD,
        H - PAD
    );
    let _ = writeln!(
        out,
        "<line x1=\"{PAD}\" y1=\"{PAD}\" x2=\"{PAD}\" y2=\"{}\" stroke=\"black\"/>",
        H - PAD
    );
    let _ = writeln!(
        out,
        "<text x=\"{}\" y=\"{}\" font-size=\"12\">t = 0 .. {t_max:.3}</text>",
        PAD,
        H - PAD / 3.0
    );
    let _ = writeln!(
        out,
        "<text x=\"4\" y=\"{PAD}\" font-size=\"12\">[{lo:.3}, {hi:.3}]</text>"
    );
    for (ci, (col, label)) in columns.iter().enumerate() {
        let color = palette[ci % palette.len()];
        let mut pts = String::new();
        for (k, s) in trace.states.iter().enumerate() {
            let _ = write!(pts, "{:.2},{:.2} ", xmap(k as f64 * dt), ymap(s[*col]));
        }
        let _ = writeln!(
            out,
            "<polyline fill=\"none\" stroke=\"{color}\" stroke-width=\"1.2\" points=\"{}\"/>",
            pts.trim_end()
        );
        let _ = writeln!(
            out,
            "<text x=\"{}\" y=\"{}\" font-size=\"12\" fill=\"{color}\">{label}</text>",
            W - PAD + 4.0,
            PAD + 14.0 * ci as f64
        );
    }
    out.push_str("</svg>\n");
    out
}

/// Per-node diagnostics of the decoupling stages.
pub fn decoupling_csv(
    model: &crate::model::Model,
    sol: &crate::leader_riccati::LeaderSolution,
) -> String {
    let mut out = String::from("t,det1,det2,det3,det4,rcond1,rcond2,rcond3,rcond4\n");
    for k in 0..model.grid.n_nodes() {
        let g = &sol.gains[k];
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{}",
            model.grid.node(k),
            g.dets[0],
            g.dets[1],
            g.dets[2],
            g.dets[3],
            g.rconds[0],
            g.rconds[1],
            g.rconds[2],
            g.rconds[3]
        );
    }
    out
}

/// Labeled dump of the block matrices at one node.
pub fn mats_debug_dump(mats: &crate::leader_mats::LeaderMats) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "block,t,row,col,value");
    let mut emit = |name: String, r: usize, c: usize, v: f64| {
        if v != 0.0 {
            let _ = writeln!(out, "{name},{},{r},{c},{v}", mats.t);
        }
    };
    for i in 0..4 {
        for r in 0..5 {
            for c in 0..5 {
                emit(format!("Acal{i}"), r, c, mats.acal[i][r][c]);
                emit(format!("Mcal{i}"), r, c, mats.mcal[i][r][c]);
                emit(format!("Hcal{i}"), r, c, mats.hcal[i][r][c]);
            }
        }
        for r in 0..4 {
            for c in 0..4 {
                emit(format!("Abar{i}"), r, c, mats.abar[i][r][c]);
                emit(format!("Mbar{i}"), r, c, mats.mbar1[i][r][c]);
                emit(format!("Ical{i}"), r, c, mats.ical[i][r][c]);
            }
        }
        for j in 0..4 {
            for r in 0..5 {
                for c in 0..4 {
                    emit(format!("Ncal{i}{j}"), r, c, mats.ncal[i][j][r][c]);
                    emit(format!("Bcal{i}{j}"), r, c, mats.bcal[i][j][r][c]);
                    emit(format!("Ccal{i}{j}"), r, c, mats.ccal[i][j][r][c]);
                }
            }
        }
    }
    for r in 0..4 {
        for c in 0..5 {
            emit("Qcal".into(), r, c, mats.qcal[r][c]);
            emit("QcalCheckhat".into(), r, c, mats.qcal_checkhat[r][c]);
            emit("Gcal".into(), r, c, mats.gcal[r][c]);
        }
    }
    out
}
