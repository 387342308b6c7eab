use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Boundary treatment used by every operator assembled on a grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Boundary {
    Neumann,
    Periodic,
    Dirichlet,
}

impl std::fmt::Display for Boundary {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Boundary::Neumann => "neumann",
            Boundary::Periodic => "periodic",
            Boundary::Dirichlet => "dirichlet",
        };
        f.write_str(s)
    }
}

/// Uniform grid on `(0, L)` or `(0, L)²`.
///
/// Nodes sit at `x_i = i·h` for `i = 1..=D` with `h = L / D`, so the right
/// (and top) end of the domain is a node. Coefficients are stored x-fastest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    extent: f64,
    points: Vec<usize>,
    boundary: Boundary,
}

impl GridSpec {
    pub fn line(extent: f64, points: usize, boundary: Boundary) -> Result<Self> {
        Self::new(extent, vec![points], boundary)
    }

    pub fn square(extent: f64, nx: usize, ny: usize, boundary: Boundary) -> Result<Self> {
        Self::new(extent, vec![nx, ny], boundary)
    }

    pub fn new(extent: f64, points: Vec<usize>, boundary: Boundary) -> Result<Self> {
        if !(extent.is_finite() && extent > 0.0) {
            return Err(Error::config("grid.extent", "must be a positive finite length"));
        }
        if points.is_empty() || points.len() > 2 {
            return Err(Error::config("grid.points", "grid must be one- or two-dimensional"));
        }
        if points.iter().any(|&p| p == 0) {
            return Err(Error::config("grid.points", "points per axis must be positive"));
        }
        Ok(Self {
            extent,
            points,
            boundary,
        })
    }

    pub fn dim(&self) -> usize {
        self.points.len()
    }

    pub fn extent(&self) -> f64 {
        self.extent
    }

    pub fn boundary(&self) -> Boundary {
        self.boundary
    }

    pub fn points(&self) -> &[usize] {
        &self.points
    }

    /// Total number of degrees of freedom.
    pub fn dof(&self) -> usize {
        self.points.iter().product()
    }

    /// Mesh width along `axis`.
    pub fn spacing(&self, axis: usize) -> f64 {
        self.extent / self.points[axis] as f64
    }

    /// Volume element `h^d` of the mesh-weighted inner product.
    pub fn cell_volume(&self) -> f64 {
        (0..self.dim()).map(|a| self.spacing(a)).product()
    }

    /// Same grid with a different boundary tag.
    pub fn with_boundary(&self, boundary: Boundary) -> Self {
        Self {
            boundary,
            ..self.clone()
        }
    }

    /// Coordinates of node `index` (grid-major order).
    pub fn node(&self, index: usize) -> [f64; 2] {
        let nx = self.points[0];
        let i = index % nx;
        let j = index / nx;
        let x = (i + 1) as f64 * self.spacing(0);
        let y = if self.dim() == 2 {
            (j + 1) as f64 * self.spacing(1)
        } else {
            0.0
        };
        [x, y]
    }

    fn nearest_on_axis(&self, axis: usize, coord: f64) -> usize {
        let n = self.points[axis];
        let h = self.spacing(axis);
        let k = (coord / h).round() as i64;
        if self.boundary == Boundary::Periodic {
            // node 0 is identified with node n
            let k = k.rem_euclid(n as i64);
            let k = if k == 0 { n as i64 } else { k };
            (k - 1) as usize
        } else {
            (k.clamp(1, n as i64) - 1) as usize
        }
    }

    /// Index of the grid node nearest to `point`.
    pub fn nearest_node(&self, point: &[f64]) -> Result<usize> {
        if point.len() != self.dim() {
            return Err(Error::invalid(format!(
                "point has {} coordinates, grid is {}-dimensional",
                point.len(),
                self.dim()
            )));
        }
        for &c in point {
            if !(0.0..=self.extent).contains(&c) {
                return Err(Error::invalid(format!(
                    "point coordinate {c} outside the closed domain [0, {}]",
                    self.extent
                )));
            }
        }
        let i = self.nearest_on_axis(0, point[0]);
        if self.dim() == 1 {
            Ok(i)
        } else {
            let j = self.nearest_on_axis(1, point[1]);
            Ok(j * self.points[0] + i)
        }
    }
}

/// Coefficients of a function on a grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Field {
    grid: GridSpec,
    coeffs: DVector<f64>,
}

impl Field {
    pub fn new(grid: GridSpec, coeffs: DVector<f64>) -> Result<Self> {
        if coeffs.len() != grid.dof() {
            return Err(Error::invalid(format!(
                "field has {} coefficients, grid has {} nodes",
                coeffs.len(),
                grid.dof()
            )));
        }
        Ok(Self { grid, coeffs })
    }

    pub fn zeros(grid: &GridSpec) -> Self {
        Self {
            coeffs: DVector::zeros(grid.dof()),
            grid: grid.clone(),
        }
    }

    /// Evaluates `f` at every node.
    pub fn from_fn(grid: &GridSpec, f: impl Fn([f64; 2]) -> f64) -> Self {
        let coeffs = DVector::from_iterator(grid.dof(), (0..grid.dof()).map(|i| f(grid.node(i))));
        Self {
            grid: grid.clone(),
            coeffs,
        }
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn coeffs(&self) -> &DVector<f64> {
        &self.coeffs
    }

    pub fn into_coeffs(self) -> DVector<f64> {
        self.coeffs
    }

    /// Mesh-weighted L² inner product `h^d Σ u_i v_i`.
    pub fn inner(&self, other: &Field) -> f64 {
        self.grid.cell_volume() * self.coeffs.dot(&other.coeffs)
    }

    pub fn l2_norm_sq(&self) -> f64 {
        l2_norm_sq(&self.grid, &self.coeffs)
    }

    /// One CSV row, coefficients in grid-major order, 17 significant digits.
    pub fn to_csv_row(&self) -> String {
        csv_row(self.coeffs.iter().copied())
    }
}

/// `‖u‖²_{L²}` for raw coefficients on `grid`.
pub fn l2_norm_sq(grid: &GridSpec, coeffs: &DVector<f64>) -> f64 {
    grid.cell_volume() * coeffs.norm_squared()
}

/// Formats a float with 17 significant digits.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

pub fn csv_row(values: impl Iterator<Item = f64>) -> String {
    let parts: Vec<String> = values.map(fmt_f64).collect();
    parts.join(",")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mesh_weight_and_dof() {
        let g = GridSpec::line(2.0 * std::f64::consts::PI, 100, Boundary::Neumann).unwrap();
        assert_eq!(g.dof(), 100);
        assert!((g.cell_volume() - 2.0 * std::f64::consts::PI / 100.0).abs() < 1e-15);
        let g2 = GridSpec::square(1.0, 16, 16, Boundary::Neumann).unwrap();
        assert_eq!(g2.dof(), 256);
        assert!((g2.cell_volume() - 1.0 / 256.0).abs() < 1e-15);
    }

    #[test]
    fn rejects_degenerate_grids() {
        assert!(GridSpec::line(0.0, 10, Boundary::Neumann).is_err());
        assert!(GridSpec::line(1.0, 0, Boundary::Neumann).is_err());
        assert!(GridSpec::new(1.0, vec![2, 2, 2], Boundary::Neumann).is_err());
    }

    #[test]
    fn observation_points_land_on_nodes() {
        let l = 2.0 * std::f64::consts::PI;
        let g = GridSpec::line(l, 100, Boundary::Periodic).unwrap();
        for j in 1..=25 {
            let d = l * j as f64 / 25.0;
            let idx = g.nearest_node(&[d]).unwrap();
            assert!((g.node(idx)[0] - d).abs() < 1e-12);
        }
        // x = 0 is identified with the last node on a periodic grid
        assert_eq!(g.nearest_node(&[0.0]).unwrap(), 99);
    }

    #[test]
    fn field_norm_is_refinement_consistent() {
        for n in [50, 100, 400] {
            let g = GridSpec::line(1.0, n, Boundary::Periodic).unwrap();
            let f = Field::from_fn(&g, |_| 2.0);
            assert!((f.l2_norm_sq() - 4.0).abs() < 1e-12);
        }
    }

    #[test]
    fn csv_has_seventeen_digits() {
        assert_eq!(fmt_f64(0.1), "1.0000000000000001e-1");
    }
}
