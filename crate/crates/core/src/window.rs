//! Axis-aligned sampling window centered on the current estimate.
//!
//! Each axis of the window `[center - h, center + h]` is split into
//! `partitions` equal sub-intervals, and every sub-interval is sampled at
//! `samples_per_partition` uniformly spaced points including its endpoints.
//! Neighbouring sub-intervals share their endpoint, so one axis carries
//! `partitions * (samples_per_partition - 1) + 1` distinct samples.

use nalgebra::DVector;

use crate::error::{Error, Result};

pub const DEFAULT_PARTITIONS: usize = 8;
pub const DEFAULT_SAMPLES_PER_PARTITION: usize = 9;

#[derive(Debug, Clone, PartialEq)]
pub struct Window {
    center: DVector<f64>,
    half_width: DVector<f64>,
    partitions: usize,
    samples_per_partition: usize,
}

/// One cell of the partition. Inactive axes span the whole window.
#[derive(Debug, Clone, PartialEq)]
pub struct SubBox {
    pub lower: DVector<f64>,
    pub upper: DVector<f64>,
}

impl SubBox {
    pub fn center(&self) -> DVector<f64> {
        (&self.lower + &self.upper) * 0.5
    }

    pub fn half_width(&self) -> DVector<f64> {
        (&self.upper - &self.lower) * 0.5
    }
}

impl Window {
    pub fn new(
        center: DVector<f64>,
        half_width: DVector<f64>,
        partitions: usize,
        samples_per_partition: usize,
    ) -> Result<Self> {
        if center.len() == 0 {
            return Err(Error::InvalidWindow("zero-dimensional window".into()));
        }
        if half_width.len() != center.len() {
            return Err(Error::DimensionMismatch {
                expected: center.len(),
                got: half_width.len(),
            });
        }
        if half_width.iter().any(|h| !(h.is_finite() && *h > 0.0)) {
            return Err(Error::InvalidWindow(format!(
                "half widths must be positive, got {:?}",
                half_width.as_slice()
            )));
        }
        if center.iter().any(|c| !c.is_finite()) {
            return Err(Error::InvalidWindow("non-finite center".into()));
        }
        if partitions == 0 {
            return Err(Error::InvalidWindow("partitions must be >= 1".into()));
        }
        if samples_per_partition < 3 {
            return Err(Error::InvalidWindow(
                "samples_per_partition must be >= 3".into(),
            ));
        }
        Ok(Self {
            center,
            half_width,
            partitions,
            samples_per_partition,
        })
    }

    /// Window with the same half width on every axis and default sampling.
    pub fn uniform(center: DVector<f64>, half_width: f64) -> Result<Self> {
        let n = center.len();
        Self::new(
            center,
            DVector::from_element(n, half_width),
            DEFAULT_PARTITIONS,
            DEFAULT_SAMPLES_PER_PARTITION,
        )
    }

    pub fn dim(&self) -> usize {
        self.center.len()
    }

    pub fn center(&self) -> &DVector<f64> {
        &self.center
    }

    pub fn half_width(&self) -> &DVector<f64> {
        &self.half_width
    }

    pub fn partitions(&self) -> usize {
        self.partitions
    }

    pub fn samples_per_partition(&self) -> usize {
        self.samples_per_partition
    }

    pub fn lower(&self) -> DVector<f64> {
        &self.center - &self.half_width
    }

    pub fn upper(&self) -> DVector<f64> {
        &self.center + &self.half_width
    }

    /// Same sampling parameters, new center.
    pub fn recentered(&self, center: DVector<f64>) -> Result<Self> {
        Self::new(
            center,
            self.half_width.clone(),
            self.partitions,
            self.samples_per_partition,
        )
    }

    pub fn with_partitions(&self, partitions: usize) -> Result<Self> {
        Self::new(
            self.center.clone(),
            self.half_width.clone(),
            partitions,
            self.samples_per_partition,
        )
    }

    pub fn contains(&self, x: &DVector<f64>, tol: f64) -> bool {
        x.len() == self.dim()
            && (0..self.dim()).all(|d| {
                let lo = self.center[d] - self.half_width[d];
                let hi = self.center[d] + self.half_width[d];
                x[d] >= lo - tol && x[d] <= hi + tol
            })
    }

    pub fn project(&self, x: &DVector<f64>) -> DVector<f64> {
        DVector::from_fn(self.dim(), |d, _| {
            let lo = self.center[d] - self.half_width[d];
            let hi = self.center[d] + self.half_width[d];
            x[d].clamp(lo, hi)
        })
    }

    pub fn samples_per_axis(&self) -> usize {
        self.partitions * (self.samples_per_partition - 1) + 1
    }

    /// Spacing of the sample grid along axis `d`.
    pub fn spacing(&self, d: usize) -> f64 {
        2.0 * self.half_width[d] / (self.samples_per_axis() - 1) as f64
    }

    /// All sample coordinates along axis `d`, ascending.
    pub fn axis_samples(&self, d: usize) -> Vec<f64> {
        let lo = self.center[d] - self.half_width[d];
        let count = self.samples_per_axis();
        let step = self.spacing(d);
        (0..count)
            .map(|i| {
                if i + 1 == count {
                    self.center[d] + self.half_width[d]
                } else {
                    lo + step * i as f64
                }
            })
            .collect()
    }

    /// Tensor sample grid over the listed axes. Axes not listed sit at the
    /// window center. Points are ordered with the last listed axis varying
    /// fastest.
    pub fn sample_grid(&self, axes: &[usize]) -> Vec<DVector<f64>> {
        let per_axis: Vec<Vec<f64>> = axes.iter().map(|&d| self.axis_samples(d)).collect();
        tensor_points(&self.center, axes, &per_axis)
    }

    /// Sample grid over every axis of the window.
    pub fn full_grid(&self) -> Vec<DVector<f64>> {
        let axes: Vec<usize> = (0..self.dim()).collect();
        self.sample_grid(&axes)
    }

    /// The `partitions^|axes|` cells obtained by splitting the listed axes,
    /// in lexicographic order (last listed axis fastest).
    pub fn sub_boxes(&self, axes: &[usize]) -> Vec<SubBox> {
        let lo = self.lower();
        let hi = self.upper();
        let total = self.partitions.pow(axes.len() as u32);
        (0..total)
            .map(|flat| {
                let mut lower = lo.clone();
                let mut upper = hi.clone();
                let mut rem = flat;
                for &d in axes.iter().rev() {
                    let cell = rem % self.partitions;
                    rem /= self.partitions;
                    let width = 2.0 * self.half_width[d] / self.partitions as f64;
                    lower[d] = lo[d] + width * cell as f64;
                    upper[d] = if cell + 1 == self.partitions {
                        hi[d]
                    } else {
                        lo[d] + width * (cell + 1) as f64
                    };
                }
                SubBox { lower, upper }
            })
            .collect()
    }

    /// Tensor grid of `samples_per_partition` points per listed axis inside
    /// `cell`; other axes sit at the window center.
    pub fn sub_box_samples(&self, cell: &SubBox, axes: &[usize]) -> Vec<DVector<f64>> {
        let k = self.samples_per_partition;
        let per_axis: Vec<Vec<f64>> = axes
            .iter()
            .map(|&d| {
                let (a, b) = (cell.lower[d], cell.upper[d]);
                (0..k)
                    .map(|i| {
                        if i + 1 == k {
                            b
                        } else {
                            a + (b - a) * i as f64 / (k - 1) as f64
                        }
                    })
                    .collect()
            })
            .collect();
        tensor_points(&self.center, axes, &per_axis)
    }
}

fn tensor_points(base: &DVector<f64>, axes: &[usize], per_axis: &[Vec<f64>]) -> Vec<DVector<f64>> {
    let total: usize = per_axis.iter().map(Vec::len).product();
    let mut out = Vec::with_capacity(total);
    for flat in 0..total {
        let mut p = base.clone();
        let mut rem = flat;
        for (slot, &d) in axes.iter().enumerate().rev() {
            let len = per_axis[slot].len();
            p[d] = per_axis[slot][rem % len];
            rem /= len;
        }
        out.push(p);
    }
    out
}
