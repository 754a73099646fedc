//! Decision-boundary grids of 2-D models for external plotting.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{self, MlpParams};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridSpec {
    pub x_min: f64,
    pub x_max: f64,
    pub y_min: f64,
    pub y_max: f64,
    /// Points per axis; both ends are included.
    pub resolution: usize,
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec {
            x_min: -10.0,
            x_max: 10.0,
            y_min: -10.0,
            y_max: 10.0,
            resolution: 200,
        }
    }
}

impl GridSpec {
    pub fn validate(&self) -> Result<()> {
        let ok = |lo: f64, hi: f64| lo.is_finite() && hi.is_finite() && lo < hi;
        if !ok(self.x_min, self.x_max) || !ok(self.y_min, self.y_max) {
            return Err(Error::InvalidConfig("grid bounds must be finite with min < max".into()));
        }
        if self.resolution < 2 {
            return Err(Error::InvalidConfig("grid resolution must be at least 2".into()));
        }
        Ok(())
    }

    fn coord(lo: f64, hi: f64, i: usize, n: usize) -> f64 {
        lo + (hi - lo) * i as f64 / (n - 1) as f64
    }

    /// Cell `(i, j)`: `i` indexes x, `j` indexes y.
    pub fn point(&self, i: usize, j: usize) -> [f64; 2] {
        [
            Self::coord(self.x_min, self.x_max, i, self.resolution),
            Self::coord(self.y_min, self.y_max, j, self.resolution),
        ]
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridPoint {
    pub x: f64,
    pub y: f64,
    pub p1: f64,
}

/// `P(f = 1)` on every grid point, x-major.
pub fn boundary_grid(params: &MlpParams, grid: &GridSpec) -> Result<Vec<GridPoint>> {
    grid.validate()?;
    if params.architecture().input_dim() != 2 {
        return Err(Error::DimensionMismatch {
            expected: 2,
            actual: params.architecture().input_dim(),
            context: "boundary export needs a 2-D model",
        });
    }
    let n = grid.resolution;
    let mut out = Vec::with_capacity(n * n);
    for i in 0..n {
        for j in 0..n {
            let [x, y] = grid.point(i, j);
            out.push(GridPoint {
                x,
                y,
                p1: nn::forward(params, &[x, y])?[1],
            });
        }
    }
    Ok(out)
}

/// CSV with header `x,y,p1`.
pub fn write_boundary_csv<W: Write>(out: W, points: &[GridPoint]) -> std::io::Result<()> {
    let mut w = std::io::BufWriter::new(out);
    writeln!(w, "x,y,p1")?;
    for p in points {
        writeln!(w, "{},{},{}", p.x, p.y, p.p1)?;
    }
    w.flush()
}

/// Computes the grid and writes it to `path`.
pub fn export_boundary(params: &MlpParams, grid: &GridSpec, path: &std::path::Path) -> Result<usize> {
    let points = boundary_grid(params, grid)?;
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_boundary_csv(file, &points).map_err(|e| Error::io(path, e))?;
    Ok(points.len())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Architecture;

    #[test]
    fn zero_model_is_flat() {
        let p = MlpParams::zeros(Architecture::two_hidden(2).unwrap());
        let g = boundary_grid(&p, &GridSpec::default()).unwrap();
        assert_eq!(g.len(), 40_000);
        assert!(g.iter().all(|c| c.p1 == 0.5));
        assert_eq!((g[0].x, g[0].y), (-10.0, -10.0));
        assert_eq!((g[39_999].x, g[39_999].y), (10.0, 10.0));
    }

    #[test]
    fn rejects_non_2d_models() {
        let p = MlpParams::zeros(Architecture::two_hidden(3).unwrap());
        assert!(boundary_grid(&p, &GridSpec::default()).is_err());
    }

    #[test]
    fn csv_layout() {
        let mut out = Vec::new();
        write_boundary_csv(
            &mut out,
            &[GridPoint {
                x: -1.0,
                y: 0.5,
                p1: 0.25,
            }],
        )
        .unwrap();
        assert_eq!(String::from_utf8(out).unwrap(), "x,y,p1\n-1,0.5,0.25\n");
    }
}
