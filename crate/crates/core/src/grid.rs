//! Rectangular grids discretizing the state space in one or two dimensions.
//!
//! A grid partitions a box into axis-aligned cells of equal size per axis.
//! Cells are indexed in row-major order with the first axis outermost, and
//! cell centers serve as quadrature nodes for analytic kernels.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One axis of a grid: extent `[lo, hi]` split into `cells` equal intervals.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Axis {
    pub lo: f64,
    pub hi: f64,
    pub cells: usize,
}

impl Axis {
    pub fn new(lo: f64, hi: f64, cells: usize) -> Result<Self> {
        if !(lo.is_finite() && hi.is_finite()) || lo >= hi {
            return Err(Error::Config(format!(
                "axis extent [{lo}, {hi}] must be finite with lo < hi"
            )));
        }
        if cells < 2 {
            return Err(Error::Config(format!(
                "axis needs at least 2 cells, got {cells}"
            )));
        }
        Ok(Self { lo, hi, cells })
    }

    pub fn width(&self) -> f64 {
        (self.hi - self.lo) / self.cells as f64
    }

    pub fn center(&self, i: usize) -> f64 {
        self.lo + (i as f64 + 0.5) * self.width()
    }

    /// Cell containing `x`, or `None` if `x` lies outside the extent.
    fn locate(&self, x: f64) -> Option<usize> {
        if !x.is_finite() || x < self.lo || x > self.hi {
            return None;
        }
        let i = ((x - self.lo) / self.width()) as usize;
        Some(i.min(self.cells - 1))
    }
}

/// Uniform rectangular grid in dimension 1 or 2.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    axes: Vec<Axis>,
}

impl Grid {
    pub fn new(axes: Vec<Axis>) -> Result<Self> {
        if axes.is_empty() || axes.len() > 2 {
            return Err(Error::Config(format!(
                "grid dimension must be 1 or 2, got {}",
                axes.len()
            )));
        }
        Ok(Self { axes })
    }

    pub fn new_1d(lo: f64, hi: f64, cells: usize) -> Result<Self> {
        Self::new(vec![Axis::new(lo, hi, cells)?])
    }

    pub fn new_2d(x: (f64, f64, usize), y: (f64, f64, usize)) -> Result<Self> {
        Self::new(vec![Axis::new(x.0, x.1, x.2)?, Axis::new(y.0, y.1, y.2)?])
    }

    pub fn dim(&self) -> usize {
        self.axes.len()
    }

    pub fn axes(&self) -> &[Axis] {
        &self.axes
    }

    /// Total number of cells.
    pub fn len(&self) -> usize {
        self.axes.iter().map(|a| a.cells).product()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Volume (length or area) of one cell.
    pub fn cell_volume(&self) -> f64 {
        self.axes.iter().map(|a| a.width()).product()
    }

    /// Center coordinates of cell `i` (row-major, first axis outermost).
    pub fn center(&self, i: usize) -> Vec<f64> {
        match self.axes.len() {
            1 => vec![self.axes[0].center(i)],
            2 => {
                let ny = self.axes[1].cells;
                vec![self.axes[0].center(i / ny), self.axes[1].center(i % ny)]
            }
            _ => unreachable!(),
        }
    }

    /// All cell centers, indexed like the flat cell index.
    pub fn centers(&self) -> Vec<Vec<f64>> {
        (0..self.len()).map(|i| self.center(i)).collect()
    }

    /// Flat index of the cell containing `x`, or `None` when outside.
    pub fn locate(&self, x: &[f64]) -> Option<usize> {
        if x.len() != self.dim() {
            return None;
        }
        match self.axes.len() {
            1 => self.axes[0].locate(x[0]),
            2 => {
                let ix = self.axes[0].locate(x[0])?;
                let iy = self.axes[1].locate(x[1])?;
                Some(ix * self.axes[1].cells + iy)
            }
            _ => unreachable!(),
        }
    }

    /// Largest half-extent over axes; the simulation guard is a multiple of it.
    pub fn max_extent(&self) -> f64 {
        self.axes
            .iter()
            .map(|a| a.lo.abs().max(a.hi.abs()))
            .fold(0.0, f64::max)
    }
}
