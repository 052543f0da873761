//! State-visitation analysis of a finished off-policy run: TD-errors of the
//! stored transitions under the final networks, a 2-D PCA projection, and
//! kernel density estimates per training phase.

use std::fmt;
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, SymmetricEigen};
use ndarray::{Array1, Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::buffer::{read_jsonl, Batch, Transition, TransitionRecord};
use crate::error::{Error, Result};
use crate::harness::{read_snapshot, Snapshot, MODEL_PREFIX, TRANSITIONS_PREFIX};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Early,
    Intermediate,
    Late,
}

impl Phase {
    pub const ALL: [Phase; 3] = [Phase::Early, Phase::Intermediate, Phase::Late];

    pub fn as_str(self) -> &'static str {
        match self {
            Phase::Early => "early",
            Phase::Intermediate => "intermediate",
            Phase::Late => "late",
        }
    }
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Sizes of three contiguous thirds. They differ by at most one; leftover
/// records go to the later phases.
pub fn phase_sizes(n: usize) -> [usize; 3] {
    let base = n / 3;
    match n % 3 {
        0 => [base, base, base],
        1 => [base, base, base + 1],
        _ => [base, base + 1, base + 1],
    }
}

pub fn assign_phases(n: usize) -> Vec<Phase> {
    phase_sizes(n)
        .iter()
        .zip(Phase::ALL)
        .flat_map(|(&count, phase)| std::iter::repeat_n(phase, count))
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VisitationRecord {
    pub step: u64,
    pub state: Vec<f64>,
    pub td_error: f64,
    pub phase: Phase,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct VisitationLog {
    pub records: Vec<VisitationRecord>,
}

impl VisitationLog {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn states(&self) -> Array2<f64> {
        let dim = self.records.first().map_or(0, |r| r.state.len());
        Array2::from_shape_fn((self.records.len(), dim), |(i, j)| self.records[i].state[j])
    }
}

/// `|y - Q_1(s, executed_action)|` per transition under the snapshot's
/// networks. The next action is the target actor's, perturbed by the target
/// explorer when one exists; no random smoothing is applied.
pub fn td_errors(snapshot: &Snapshot, transitions: &[Transition]) -> Result<Vec<f64>> {
    let Snapshot::OffPolicy { agent, explorer } = snapshot else {
        return Err(Error::Config(
            "TD-error diagnostics need an off-policy run".into(),
        ));
    };
    if transitions.is_empty() {
        return Ok(Vec::new());
    }
    let refs: Vec<&Transition> = transitions.iter().collect();
    let batch = Batch::from_transitions(&refs);
    let states = agent.normalize_rows(&batch.states);
    let next_states = agent.normalize_rows(&batch.next_states);
    let mut next_actions = agent.target_actions(next_states.view())?;
    if let Some(explorer) = explorer {
        next_actions = explorer.perturb_target_actions(next_states.view(), next_actions.view())?;
    }
    let targets = agent.td_targets(
        &batch.rewards,
        &batch.dones,
        next_states.view(),
        next_actions.view(),
    )?;
    let q = agent.q1(states.view(), batch.executed_actions.view())?;
    let errors: Vec<f64> = (&targets - &q).iter().map(|d| d.abs()).collect();
    if errors.iter().any(|e| !e.is_finite()) {
        return Err(Error::NonFinite("recomputed TD-error".into()));
    }
    Ok(errors)
}

pub fn transitions_path(run_dir: &Path, seed: u64) -> PathBuf {
    run_dir.join(format!("{TRANSITIONS_PREFIX}{seed}.jsonl"))
}

pub fn model_path(run_dir: &Path, seed: u64) -> PathBuf {
    run_dir.join(format!("{MODEL_PREFIX}{seed}.json"))
}

pub fn read_transitions(run_dir: &Path, seed: u64) -> Result<Vec<TransitionRecord>> {
    let path = transitions_path(run_dir, seed);
    let file = File::open(&path)
        .map_err(|e| Error::MissingArtifact(format!("{}: {e}", path.display())))?;
    read_jsonl(BufReader::new(file))
}

/// Builds the visitation log of one seed of a recorded run directory.
pub fn log_td_errors(run_dir: &Path, seed: u64) -> Result<VisitationLog> {
    let records = read_transitions(run_dir, seed)?;
    let snapshot = read_snapshot(&model_path(run_dir, seed))?;
    visitation_log(&snapshot, &records)
}

pub fn visitation_log(snapshot: &Snapshot, records: &[TransitionRecord]) -> Result<VisitationLog> {
    let transitions: Vec<Transition> = records.iter().map(TransitionRecord::transition).collect();
    let errors = td_errors(snapshot, &transitions)?;
    let phases = assign_phases(records.len());
    Ok(VisitationLog {
        records: records
            .iter()
            .zip(errors)
            .zip(phases)
            .map(|((r, td_error), phase)| VisitationRecord {
                step: r.step,
                state: r.state.clone(),
                td_error,
                phase,
            })
            .collect(),
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct Projection {
    /// `(n, out_dim)` coordinates along the principal axes.
    pub points: Array2<f64>,
    /// `(out_dim, dim)`; rows are unit principal axes, largest variance first.
    pub components: Array2<f64>,
    pub mean: Array1<f64>,
    /// Variance along each kept axis.
    pub variances: Vec<f64>,
    pub explained_variance_ratio: f64,
}

/// Projects mean-centred rows onto the top `out_dim` eigenvectors of the
/// sample covariance. Each axis is signed so its largest-magnitude entry is
/// positive.
pub fn pca_project(data: ArrayView2<f64>, out_dim: usize) -> Result<Projection> {
    let (n, dim) = data.dim();
    if out_dim == 0 || out_dim > dim {
        return Err(Error::Config(format!(
            "out_dim must lie in 1..={dim}, got {out_dim}"
        )));
    }
    if n < 2 || n < out_dim {
        return Err(Error::DegenerateData(format!(
            "{n} samples for a {out_dim}-dimensional projection"
        )));
    }
    let mean = data.mean_axis(ndarray::Axis(0)).expect("non-empty");
    let centred = &data - &mean;
    let cov = centred.t().dot(&centred) / (n as f64 - 1.0);
    let total: f64 = cov.diag().sum();
    if total.is_nan() || total <= 0.0 {
        return Err(Error::DegenerateData("all samples are identical".into()));
    }

    let eigen = SymmetricEigen::new(DMatrix::from_fn(dim, dim, |i, j| cov[[i, j]]));
    let mut order: Vec<usize> = (0..dim).collect();
    order.sort_by(|&a, &b| eigen.eigenvalues[b].total_cmp(&eigen.eigenvalues[a]));

    let mut components = Array2::zeros((out_dim, dim));
    let mut variances = Vec::with_capacity(out_dim);
    for (k, &idx) in order.iter().take(out_dim).enumerate() {
        let v = eigen.eigenvectors.column(idx);
        let pivot = v
            .iter()
            .copied()
            .fold(0.0f64, |m, x| if x.abs() > m.abs() { x } else { m });
        let sign = if pivot < 0.0 { -1.0 } else { 1.0 };
        for j in 0..dim {
            components[[k, j]] = sign * v[j];
        }
        variances.push(eigen.eigenvalues[idx].max(0.0));
    }
    let kept: f64 = variances.iter().sum();
    let explained_variance_ratio = (kept / total).clamp(0.0, 1.0);
    Ok(Projection {
        points: centred.dot(&components.t()),
        components,
        mean,
        variances,
        explained_variance_ratio,
    })
}

/// Per-axis Scott's rule `n^(-1/6) * sigma` for 2-D points.
pub fn scott_bandwidth(points: ArrayView2<f64>) -> Result<[f64; 2]> {
    let n = points.nrows();
    if n < 2 || points.ncols() != 2 {
        return Err(Error::DegenerateData(format!(
            "Scott's rule needs at least 2 two-dimensional points, got {n}"
        )));
    }
    let factor = (n as f64).powf(-1.0 / 6.0);
    let mut out = [0.0; 2];
    for (j, h) in out.iter_mut().enumerate() {
        let sigma = points.column(j).std(1.0);
        if sigma.is_nan() || sigma <= 0.0 {
            return Err(Error::DegenerateData(format!("zero spread along axis {j}")));
        }
        *h = factor * sigma;
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub x_min: f64,
    pub x_max: f64,
    pub y_min: f64,
    pub y_max: f64,
    pub nx: usize,
    pub ny: usize,
}

impl GridSpec {
    /// Bounding box of `points` widened by `padding` on every side.
    pub fn around(points: ArrayView2<f64>, padding: f64, nx: usize, ny: usize) -> Self {
        let bounds = |j: usize| {
            points
                .column(j)
                .iter()
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
                    (lo.min(v), hi.max(v))
                })
        };
        let (x_lo, x_hi) = bounds(0);
        let (y_lo, y_hi) = bounds(1);
        Self {
            x_min: x_lo - padding,
            x_max: x_hi + padding,
            y_min: y_lo - padding,
            y_max: y_hi + padding,
            nx,
            ny,
        }
    }

    fn validate(&self) -> Result<()> {
        let empty = |lo: f64, hi: f64| lo.is_nan() || hi.is_nan() || hi <= lo;
        if self.nx == 0
            || self.ny == 0
            || empty(self.x_min, self.x_max)
            || empty(self.y_min, self.y_max)
        {
            return Err(Error::Config(format!("invalid grid {self:?}")));
        }
        Ok(())
    }

    pub fn dx(&self) -> f64 {
        (self.x_max - self.x_min) / self.nx as f64
    }

    pub fn dy(&self) -> f64 {
        (self.y_max - self.y_min) / self.ny as f64
    }

    pub fn cell_area(&self) -> f64 {
        self.dx() * self.dy()
    }

    /// Cell-centre x coordinates.
    pub fn xs(&self) -> Vec<f64> {
        (0..self.nx)
            .map(|i| self.x_min + (i as f64 + 0.5) * self.dx())
            .collect()
    }

    pub fn ys(&self) -> Vec<f64> {
        (0..self.ny)
            .map(|i| self.y_min + (i as f64 + 0.5) * self.dy())
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DensityGrid {
    pub grid: GridSpec,
    /// `(ny, nx)`; entry `[iy, ix]` belongs to cell centre `(xs[ix], ys[iy])`.
    pub density: Array2<f64>,
}

impl DensityGrid {
    /// Riemann sum of the density over the grid.
    pub fn integral(&self) -> f64 {
        self.density.sum() * self.grid.cell_area()
    }

    /// Cell centre with the highest density.
    pub fn mode(&self) -> (f64, f64) {
        let (mut best, mut at) = (f64::NEG_INFINITY, (0, 0));
        for ((iy, ix), &d) in self.density.indexed_iter() {
            if d > best {
                best = d;
                at = (iy, ix);
            }
        }
        (self.grid.xs()[at.1], self.grid.ys()[at.0])
    }
}

/// Gaussian kernel density with per-axis `bandwidth`, evaluated at cell
/// centres and normalized so the grid integrates to one. Optional `weights`
/// scale each point's kernel.
pub fn kde_density(
    points: ArrayView2<f64>,
    bandwidth: [f64; 2],
    grid: &GridSpec,
    weights: Option<&[f64]>,
) -> Result<DensityGrid> {
    grid.validate()?;
    if points.nrows() == 0 || points.ncols() != 2 {
        return Err(Error::DegenerateData(
            "KDE needs at least one 2-D point".into(),
        ));
    }
    if !(bandwidth[0] > 0.0 && bandwidth[1] > 0.0) {
        return Err(Error::Config(format!(
            "bandwidth must be positive, got {bandwidth:?}"
        )));
    }
    if let Some(w) = weights {
        if w.len() != points.nrows() || w.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::Config(
                "weights must be finite, non-negative and one per point".into(),
            ));
        }
    }
    let xs = grid.xs();
    let ys = grid.ys();
    // Separable kernel: precompute per-axis factors.
    let axis = |coords: &[f64], j: usize, h: f64| -> Array2<f64> {
        Array2::from_shape_fn((points.nrows(), coords.len()), |(i, c)| {
            let z = (coords[c] - points[[i, j]]) / h;
            (-0.5 * z * z).exp()
        })
    };
    let kx = axis(&xs, 0, bandwidth[0]);
    let mut ky = axis(&ys, 1, bandwidth[1]);
    if let Some(w) = weights {
        for (mut row, wi) in ky.rows_mut().into_iter().zip(w) {
            row *= *wi;
        }
    }
    let raw = ky.t().dot(&kx);
    let mass = raw.sum() * grid.cell_area();
    if !(mass > 0.0 && mass.is_finite()) {
        return Err(Error::DegenerateData(
            "kernel mass on the grid is zero".into(),
        ));
    }
    Ok(DensityGrid {
        grid: grid.clone(),
        density: raw / mass,
    })
}

pub fn write_visitation_csv<W: Write>(
    out: W,
    projected: ArrayView2<f64>,
    log: &VisitationLog,
) -> Result<()> {
    #[derive(Serialize)]
    struct Row {
        x: f64,
        y: f64,
        td_error: f64,
        phase: Phase,
    }
    let mut w = csv::Writer::from_writer(out);
    for (p, r) in projected.rows().into_iter().zip(&log.records) {
        w.serialize(Row {
            x: p[0],
            y: p[1],
            td_error: r.td_error,
            phase: r.phase,
        })?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_density_csv<W: Write>(
    out: W,
    density: &DensityGrid,
    weighted: &DensityGrid,
) -> Result<()> {
    #[derive(Serialize)]
    struct Row {
        grid_x: f64,
        grid_y: f64,
        density: f64,
        density_tderr_weighted: f64,
    }
    let xs = density.grid.xs();
    let ys = density.grid.ys();
    let mut w = csv::Writer::from_writer(out);
    for (iy, y) in ys.iter().enumerate() {
        for (ix, x) in xs.iter().enumerate() {
            w.serialize(Row {
                grid_x: *x,
                grid_y: *y,
                density: density.density[[iy, ix]],
                density_tderr_weighted: weighted.density[[iy, ix]],
            })?;
        }
    }
    w.flush()?;
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticsSummary {
    pub seed: u64,
    pub records: usize,
    pub explained_variance_ratio: f64,
    pub phase_sizes: [usize; 3],
    pub mean_td_error: [f64; 3],
}

/// Full pipeline for one seed: writes `visitation.csv` and
/// `density_{phase}.csv` into `out_dir`.
pub fn run_diagnostics(
    run_dir: &Path,
    seed: u64,
    out_dir: &Path,
    resolution: usize,
) -> Result<DiagnosticsSummary> {
    let log = log_td_errors(run_dir, seed)?;
    if log.len() < 6 {
        return Err(Error::DegenerateData(format!(
            "{} transitions are too few to analyse",
            log.len()
        )));
    }
    let states = log.states();
    let projection = pca_project(states.view(), 2)?;
    std::fs::create_dir_all(out_dir)?;
    write_visitation_csv(
        BufWriter::new(File::create(out_dir.join("visitation.csv"))?),
        projection.points.view(),
        &log,
    )?;

    let all = projection.points.view();
    let pad = scott_bandwidth(all)?.iter().copied().fold(0.0, f64::max) * 3.0;
    let grid = GridSpec::around(all, pad, resolution, resolution);
    let sizes = phase_sizes(log.len());
    let mut mean_td_error = [0.0; 3];
    let mut start = 0;
    for (k, phase) in Phase::ALL.iter().enumerate() {
        let end = start + sizes[k];
        let pts = projection.points.slice(ndarray::s![start..end, ..]);
        let tds: Vec<f64> = log.records[start..end].iter().map(|r| r.td_error).collect();
        mean_td_error[k] = tds.iter().sum::<f64>() / tds.len() as f64;
        let bw = scott_bandwidth(pts)?;
        let density = kde_density(pts, bw, &grid, None)?;
        let weighted = if tds.iter().any(|t| *t > 0.0) {
            kde_density(pts, bw, &grid, Some(&tds))?
        } else {
            DensityGrid {
                grid: grid.clone(),
                density: Array2::zeros(density.density.raw_dim()),
            }
        };
        write_density_csv(
            BufWriter::new(File::create(out_dir.join(format!("density_{phase}.csv")))?),
            &density,
            &weighted,
        )?;
        start = end;
    }
    Ok(DiagnosticsSummary {
        seed,
        records: log.len(),
        explained_variance_ratio: projection.explained_variance_ratio,
        phase_sizes: sizes,
        mean_td_error,
    })
}
