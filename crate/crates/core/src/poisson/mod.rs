//! Occupancy grids and the discrete pressure Poisson systems assembled from
//! them.
//!
//! Every fluid cell gets one unknown (row-major numbering over fluid cells).
//! The 5-point stencil has 4 on the diagonal and -1 for each fluid neighbour;
//! solid cells and the domain boundary clamp the pressure to zero, so the
//! diagonal stays 4 everywhere and the matrix is SPD.

mod dataset;

pub use dataset::{load_dataset, read_dataset, save_dataset, write_dataset};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::sparse::CsrMatrix;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OccupancyGrid {
    height: usize,
    width: usize,
    solid: Vec<bool>,
    fluid_index: Vec<Option<usize>>,
    n_fluid: usize,
}

impl OccupancyGrid {
    /// Builds a grid from a row-major solid mask.
    pub fn from_solid_mask(height: usize, width: usize, solid: Vec<bool>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::InvalidGrid(format!("empty grid {height}x{width}")));
        }
        if solid.len() != height * width {
            return Err(Error::DimensionMismatch {
                expected: height * width,
                found: solid.len(),
            });
        }
        let mut fluid_index = vec![None; solid.len()];
        let mut n_fluid = 0;
        for (k, &s) in solid.iter().enumerate() {
            if !s {
                fluid_index[k] = Some(n_fluid);
                n_fluid += 1;
            }
        }
        if n_fluid == 0 {
            return Err(Error::InvalidGrid("grid has no fluid cells".into()));
        }
        Ok(Self {
            height,
            width,
            solid,
            fluid_index,
            n_fluid,
        })
    }

    pub fn all_fluid(height: usize, width: usize) -> Result<Self> {
        Self::from_solid_mask(height, width, vec![false; height * width])
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn n_fluid(&self) -> usize {
        self.n_fluid
    }

    pub fn is_solid(&self, r: usize, c: usize) -> bool {
        self.solid[r * self.width + c]
    }

    /// Equation index of fluid cell `(r, c)`.
    pub fn fluid_index(&self, r: usize, c: usize) -> Option<usize> {
        self.fluid_index[r * self.width + c]
    }

    pub fn fluid_fraction(&self) -> f64 {
        self.n_fluid as f64 / (self.height * self.width) as f64
    }

    /// Row strings of `.` (fluid) and `#` (solid).
    pub fn rows(&self) -> Vec<String> {
        (0..self.height)
            .map(|r| {
                (0..self.width)
                    .map(|c| if self.is_solid(r, c) { '#' } else { '.' })
                    .collect()
            })
            .collect()
    }

    pub fn from_rows(rows: &[&str]) -> Result<Self> {
        let height = rows.len();
        let width = rows.first().map_or(0, |r| r.len());
        let mut solid = Vec::with_capacity(height * width);
        for row in rows {
            if row.len() != width {
                return Err(Error::InvalidGrid(format!(
                    "ragged rows: expected width {width}, found {}",
                    row.len()
                )));
            }
            for ch in row.chars() {
                match ch {
                    '.' => solid.push(false),
                    '#' => solid.push(true),
                    other => {
                        return Err(Error::InvalidGrid(format!(
                            "unexpected cell character {other:?}"
                        )))
                    }
                }
            }
        }
        Self::from_solid_mask(height, width, solid)
    }
}

#[derive(Debug, Clone, Copy)]
enum Obstacle {
    Rect {
        r0: usize,
        c0: usize,
        r1: usize,
        c1: usize,
    },
    Ellipse {
        cr: f64,
        cc: f64,
        ar: f64,
        ac: f64,
    },
}

impl Obstacle {
    fn covers(&self, r: usize, c: usize) -> bool {
        match *self {
            Obstacle::Rect { r0, c0, r1, c1 } => (r0..=r1).contains(&r) && (c0..=c1).contains(&c),
            Obstacle::Ellipse { cr, cc, ar, ac } => {
                let dr = (r as f64 - cr) / ar;
                let dc = (c as f64 - cc) / ac;
                dr * dr + dc * dc <= 1.0
            }
        }
    }
}

/// Places `obstacle_count` random solid rectangles or ellipses on a
/// `height x width` grid. Deterministic in `seed`. If the obstacles cover
/// every cell, the most recently placed ones are removed until a fluid cell
/// remains.
pub fn generate_grid(
    height: usize,
    width: usize,
    obstacle_count: usize,
    seed: u64,
) -> Result<OccupancyGrid> {
    if height < 2 || width < 2 {
        return Err(Error::InvalidGrid(format!(
            "grid must be at least 2x2, got {height}x{width}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let max_hr = (height / 4).max(1);
    let max_hc = (width / 4).max(1);
    let mut obstacles: Vec<Obstacle> = (0..obstacle_count)
        .map(|_| {
            let cr = rng.random_range(0..height);
            let cc = rng.random_range(0..width);
            let hr = rng.random_range(1..=max_hr);
            let hc = rng.random_range(1..=max_hc);
            if rng.random_bool(0.5) {
                Obstacle::Rect {
                    r0: cr.saturating_sub(hr),
                    c0: cc.saturating_sub(hc),
                    r1: (cr + hr).min(height - 1),
                    c1: (cc + hc).min(width - 1),
                }
            } else {
                Obstacle::Ellipse {
                    cr: cr as f64,
                    cc: cc as f64,
                    ar: hr as f64 + 0.5,
                    ac: hc as f64 + 0.5,
                }
            }
        })
        .collect();
    loop {
        let solid: Vec<bool> = (0..height * width)
            .map(|k| obstacles.iter().any(|o| o.covers(k / width, k % width)))
            .collect();
        match OccupancyGrid::from_solid_mask(height, width, solid) {
            Ok(g) => return Ok(g),
            Err(_) if !obstacles.is_empty() => {
                obstacles.pop();
            }
            Err(e) => return Err(e),
        }
    }
}

/// 5-point Laplacian over the fluid cells with homogeneous Dirichlet
/// conditions on solids and the domain boundary.
pub fn assemble_poisson(grid: &OccupancyGrid) -> CsrMatrix {
    let n = grid.n_fluid();
    let (h, w) = (grid.height(), grid.width());
    let mut row_ptr = Vec::with_capacity(n + 1);
    let mut col_idx = Vec::with_capacity(5 * n);
    let mut values = Vec::with_capacity(5 * n);
    row_ptr.push(0);
    for r in 0..h {
        for c in 0..w {
            let Some(i) = grid.fluid_index(r, c) else {
                continue;
            };
            // neighbours in increasing equation order: up, left, self, right, down
            let up = (r > 0).then(|| grid.fluid_index(r - 1, c)).flatten();
            let left = (c > 0).then(|| grid.fluid_index(r, c - 1)).flatten();
            let right = (c + 1 < w).then(|| grid.fluid_index(r, c + 1)).flatten();
            let down = (r + 1 < h).then(|| grid.fluid_index(r + 1, c)).flatten();
            for (j, v) in [
                (up, -1.0),
                (left, -1.0),
                (Some(i), 4.0),
                (right, -1.0),
                (down, -1.0),
            ] {
                if let Some(j) = j {
                    col_idx.push(j);
                    values.push(v);
                }
            }
            row_ptr.push(col_idx.len());
        }
    }
    CsrMatrix::from_raw_parts(n, n, row_ptr, col_idx, values)
        .expect("stencil assembly yields canonical CSR")
}

/// I.i.d. standard normal right-hand side over the fluid cells.
pub fn generate_rhs(grid: &OccupancyGrid, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..grid.n_fluid())
        .map(|_| rng.sample(StandardNormal))
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct PoissonSample {
    pub id: usize,
    pub grid: OccupancyGrid,
    pub matrix: CsrMatrix,
    pub rhs: Vec<f64>,
}

impl PoissonSample {
    pub fn from_grid(id: usize, grid: OccupancyGrid, rhs_seed: u64) -> Self {
        let matrix = assemble_poisson(&grid);
        let rhs = generate_rhs(&grid, rhs_seed);
        Self {
            id,
            grid,
            matrix,
            rhs,
        }
    }

    pub fn n(&self) -> usize {
        self.matrix.n_rows()
    }
}

fn splitmix(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Generates `count` samples; sample `k` draws its grid and right-hand side
/// from seeds derived from `(seed, k)`.
pub fn generate_samples(
    height: usize,
    width: usize,
    count: usize,
    obstacles: usize,
    seed: u64,
    exec: Execution,
) -> Result<Vec<PoissonSample>> {
    exec.map_range(count, |k| {
        let grid_seed = splitmix(seed ^ splitmix(k as u64));
        let grid = generate_grid(height, width, obstacles, grid_seed)?;
        Ok(PoissonSample::from_grid(k, grid, splitmix(grid_seed)))
    })
    .into_iter()
    .collect()
}

/// Dirichlet 1D Laplacian `tridiag(-1, 2, -1)` of size `n`.
pub fn laplacian_1d(n: usize) -> CsrMatrix {
    let mut e = Vec::with_capacity(3 * n);
    for i in 0..n {
        e.push((i, i, 2.0));
        if i > 0 {
            e.push((i, i - 1, -1.0));
            e.push((i - 1, i, -1.0));
        }
    }
    CsrMatrix::from_coo(n, n, &e).expect("indices in range")
}
