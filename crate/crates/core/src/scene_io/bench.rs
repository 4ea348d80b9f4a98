use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One row of the per-stage timing report. Times are microseconds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub scene: String,
    pub triangles: u64,
    pub shadow_rays: u64,
    pub outer_rays: u64,
    pub inner_rays: u64,
    pub bvh_ray_cast_us: f64,
    pub nif_ray_cast_us: f64,
    pub outer_grid_us: f64,
    pub outer_inference_us: f64,
    pub inner_grid_us: f64,
    pub inner_inference_us: f64,
    pub nif_total_us: f64,
    pub speedup: f64,
}

impl BenchRow {
    /// Fills `nif_total_us` and `speedup` from the stage columns.
    pub fn finish(mut self) -> Self {
        self.nif_total_us = self.nif_ray_cast_us
            + self.outer_grid_us
            + self.outer_inference_us
            + self.inner_grid_us
            + self.inner_inference_us;
        self.speedup = if self.nif_total_us > 0.0 {
            self.bvh_ray_cast_us / self.nif_total_us
        } else {
            0.0
        };
        self
    }
}

pub fn write_bench_csv(rows: &[BenchRow], path: impl AsRef<Path>) -> Result<()> {
    let mut w = csv::Writer::from_path(path.as_ref())?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io(path.as_ref(), e))
}

pub fn read_bench_csv(path: impl AsRef<Path>) -> Result<Vec<BenchRow>> {
    let mut r = csv::Reader::from_path(path.as_ref())?;
    r.deserialize().map(|row| row.map_err(Error::from)).collect()
}

/// `epoch,loss` table.
pub fn write_loss_curve(curve: &[f64], path: impl AsRef<Path>) -> Result<()> {
    let mut w = csv::Writer::from_path(path.as_ref())?;
    w.write_record(["epoch", "loss"])?;
    for (i, l) in curve.iter().enumerate() {
        w.write_record([(i + 1).to_string(), l.to_string()])?;
    }
    w.flush().map_err(|e| Error::io(path.as_ref(), e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row() -> BenchRow {
        BenchRow {
            scene: "torus".into(),
            triangles: 1000,
            shadow_rays: 4096,
            outer_rays: 1200,
            inner_rays: 3000,
            bvh_ray_cast_us: 900.5,
            nif_ray_cast_us: 100.0,
            outer_grid_us: 50.25,
            outer_inference_us: 200.0,
            inner_grid_us: 75.0,
            inner_inference_us: 300.125,
            nif_total_us: 0.0,
            speedup: 0.0,
        }
        .finish()
    }

    #[test]
    fn header_and_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("b.csv");
        let r = row();
        write_bench_csv(&[r.clone()], &p).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        assert_eq!(
            text.lines().next().unwrap(),
            "scene,triangles,shadow_rays,outer_rays,inner_rays,bvh_ray_cast_us,nif_ray_cast_us,outer_grid_us,outer_inference_us,inner_grid_us,inner_inference_us,nif_total_us,speedup"
        );
        let back = read_bench_csv(&p).unwrap();
        assert_eq!(back, vec![r]);
    }

    #[test]
    fn speedup_recomputes_from_columns() {
        let r = row();
        assert_eq!(r.nif_total_us, 100.0 + 50.25 + 200.0 + 75.0 + 300.125);
        assert!((r.speedup - r.bvh_ray_cast_us / r.nif_total_us).abs() < 1e-15);
    }

    #[test]
    fn loss_curve_file() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("l.csv");
        write_loss_curve(&[0.5, 0.25], &p).unwrap();
        assert_eq!(std::fs::read_to_string(&p).unwrap(), "epoch,loss\n1,0.5\n2,0.25\n");
    }
}
