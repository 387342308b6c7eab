//! Precision-operator recipes.
//!
//! A recipe is a small expression over the identity `I`, the mean projection
//! `T`, the grid Laplacian `lap`, scalar constants and non-negative integer
//! powers, prefixed with `inv:` to mark it as the inverse covariance:
//!
//! ```text
//! inv:(I - lap)
//! inv:4*(100*T - lap)^2
//! inv:(I - lap)^2
//! ```

use std::fmt;

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use super::grid::{Boundary, GridSpec};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
enum Expr {
    Num(f64),
    Identity,
    MeanProjection,
    Laplacian,
    Neg(Box<Expr>),
    Add(Box<Expr>, Box<Expr>),
    Sub(Box<Expr>, Box<Expr>),
    Mul(Box<Expr>, Box<Expr>),
    Pow(Box<Expr>, u32),
}

/// Parsed precision recipe. Serializes as its source string.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct PrecisionRecipe {
    source: String,
    expr: Expr,
}

impl PrecisionRecipe {
    pub fn parse(source: &str) -> Result<Self> {
        let body = source
            .trim()
            .strip_prefix("inv:")
            .ok_or_else(|| Error::config("prior", format!("recipe `{source}` must start with `inv:`")))?;
        let tokens = tokenize(body).map_err(|m| Error::config("prior", m))?;
        let mut parser = Parser { tokens, pos: 0 };
        let expr = parser.expr().map_err(|m| Error::config("prior", m))?;
        if parser.pos != parser.tokens.len() {
            return Err(Error::config(
                "prior",
                format!("trailing input in recipe `{source}`"),
            ));
        }
        Ok(Self {
            source: source.trim().to_string(),
            expr,
        })
    }

    pub fn as_str(&self) -> &str {
        &self.source
    }

    fn uses_mean_projection(&self) -> bool {
        fn walk(e: &Expr) -> bool {
            match e {
                Expr::MeanProjection => true,
                Expr::Num(_) | Expr::Identity | Expr::Laplacian => false,
                Expr::Neg(a) | Expr::Pow(a, _) => walk(a),
                Expr::Add(a, b) | Expr::Sub(a, b) | Expr::Mul(a, b) => walk(a) || walk(b),
            }
        }
        walk(&self.expr)
    }
}

impl TryFrom<String> for PrecisionRecipe {
    type Error = Error;
    fn try_from(s: String) -> Result<Self> {
        Self::parse(&s)
    }
}

impl From<PrecisionRecipe> for String {
    fn from(r: PrecisionRecipe) -> String {
        r.source
    }
}

impl fmt::Display for PrecisionRecipe {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.source)
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Num(f64),
    Ident(String),
    Plus,
    Minus,
    Star,
    Caret,
    LParen,
    RParen,
}

fn tokenize(s: &str) -> std::result::Result<Vec<Tok>, String> {
    let chars: Vec<char> = s.chars().collect();
    let mut out = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        match c {
            ' ' | '\t' => i += 1,
            '+' => {
                out.push(Tok::Plus);
                i += 1
            }
            '-' => {
                out.push(Tok::Minus);
                i += 1
            }
            '*' => {
                out.push(Tok::Star);
                i += 1
            }
            '^' => {
                out.push(Tok::Caret);
                i += 1
            }
            '(' => {
                out.push(Tok::LParen);
                i += 1
            }
            ')' => {
                out.push(Tok::RParen);
                i += 1
            }
            c if c.is_ascii_digit() || c == '.' => {
                let start = i;
                while i < chars.len()
                    && (chars[i].is_ascii_digit()
                        || chars[i] == '.'
                        || chars[i] == 'e'
                        || chars[i] == 'E'
                        || ((chars[i] == '-' || chars[i] == '+')
                            && matches!(chars[i - 1], 'e' | 'E')))
                {
                    i += 1;
                }
                let text: String = chars[start..i].iter().collect();
                let v = text
                    .parse::<f64>()
                    .map_err(|_| format!("bad number `{text}`"))?;
                out.push(Tok::Num(v));
            }
            c if c.is_ascii_alphabetic() => {
                let start = i;
                while i < chars.len() && chars[i].is_ascii_alphanumeric() {
                    i += 1;
                }
                out.push(Tok::Ident(chars[start..i].iter().collect()));
            }
            other => return Err(format!("unexpected character `{other}` in recipe")),
        }
    }
    Ok(out)
}

struct Parser {
    tokens: Vec<Tok>,
    pos: usize,
}

type PResult<T> = std::result::Result<T, String>;

impl Parser {
    fn peek(&self) -> Option<&Tok> {
        self.tokens.get(self.pos)
    }

    fn next(&mut self) -> Option<Tok> {
        let t = self.tokens.get(self.pos).cloned();
        self.pos += 1;
        t
    }

    fn expr(&mut self) -> PResult<Expr> {
        let mut lhs = self.term()?;
        loop {
            match self.peek() {
                Some(Tok::Plus) => {
                    self.pos += 1;
                    lhs = Expr::Add(Box::new(lhs), Box::new(self.term()?));
                }
                Some(Tok::Minus) => {
                    self.pos += 1;
                    lhs = Expr::Sub(Box::new(lhs), Box::new(self.term()?));
                }
                _ => return Ok(lhs),
            }
        }
    }

    fn term(&mut self) -> PResult<Expr> {
        if self.peek() == Some(&Tok::Minus) {
            self.pos += 1;
            return Ok(Expr::Neg(Box::new(self.term()?)));
        }
        let mut lhs = self.power()?;
        while self.peek() == Some(&Tok::Star) {
            self.pos += 1;
            lhs = Expr::Mul(Box::new(lhs), Box::new(self.power()?));
        }
        Ok(lhs)
    }

    fn power(&mut self) -> PResult<Expr> {
        let base = self.atom()?;
        if self.peek() == Some(&Tok::Caret) {
            self.pos += 1;
            match self.next() {
                Some(Tok::Num(v)) if v >= 0.0 && v.fract() == 0.0 && v <= 16.0 => {
                    Ok(Expr::Pow(Box::new(base), v as u32))
                }
                _ => Err("exponent must be an integer between 0 and 16".into()),
            }
        } else {
            Ok(base)
        }
    }

    fn atom(&mut self) -> PResult<Expr> {
        match self.next() {
            Some(Tok::Num(v)) => Ok(Expr::Num(v)),
            Some(Tok::Ident(id)) => match id.as_str() {
                "I" => Ok(Expr::Identity),
                "T" => Ok(Expr::MeanProjection),
                "lap" => Ok(Expr::Laplacian),
                other => Err(format!("unknown operator `{other}` (expected I, T or lap)")),
            },
            Some(Tok::LParen) => {
                let e = self.expr()?;
                match self.next() {
                    Some(Tok::RParen) => Ok(e),
                    _ => Err("missing `)`".into()),
                }
            }
            other => Err(format!("unexpected token {other:?}")),
        }
    }
}

enum Value {
    Scalar(f64),
    Matrix(DMatrix<f64>),
}

impl Value {
    fn into_matrix(self, n: usize) -> DMatrix<f64> {
        match self {
            Value::Scalar(s) => DMatrix::identity(n, n) * s,
            Value::Matrix(m) => m,
        }
    }
}

fn laplacian_1d(n: usize, h: f64, boundary: Boundary) -> DMatrix<f64> {
    let mut lap = DMatrix::zeros(n, n);
    let w = 1.0 / (h * h);
    for i in 0..n {
        let mut diag = 0.0;
        let neighbours: [Option<usize>; 2] = match boundary {
            Boundary::Periodic => [Some((i + n - 1) % n), Some((i + 1) % n)],
            Boundary::Neumann | Boundary::Dirichlet => {
                [i.checked_sub(1), if i + 1 < n { Some(i + 1) } else { None }]
            }
        };
        for nb in neighbours {
            match nb {
                Some(j) if j != i => {
                    lap[(i, j)] += w;
                    diag -= w;
                }
                Some(_) => {}
                // Dirichlet ghost value is zero; a Neumann ghost mirrors the node itself.
                None if boundary == Boundary::Dirichlet => diag -= w,
                None => {}
            }
        }
        lap[(i, i)] += diag;
    }
    lap
}

/// Second-order finite-difference Laplacian on `grid`.
pub fn laplacian(grid: &GridSpec) -> DMatrix<f64> {
    let nx = grid.points()[0];
    let lx = laplacian_1d(nx, grid.spacing(0), grid.boundary());
    if grid.dim() == 1 {
        return lx;
    }
    let ny = grid.points()[1];
    let ly = laplacian_1d(ny, grid.spacing(1), grid.boundary());
    let n = nx * ny;
    let mut lap = DMatrix::zeros(n, n);
    for j in 0..ny {
        for i in 0..nx {
            let row = j * nx + i;
            for i2 in 0..nx {
                let v = lx[(i, i2)];
                if v != 0.0 {
                    lap[(row, j * nx + i2)] += v;
                }
            }
            for j2 in 0..ny {
                let v = ly[(j, j2)];
                if v != 0.0 {
                    lap[(row, j2 * nx + i)] += v;
                }
            }
        }
    }
    lap
}

fn eval(expr: &Expr, grid: &GridSpec, lap: &DMatrix<f64>) -> Value {
    let n = grid.dof();
    match expr {
        Expr::Num(v) => Value::Scalar(*v),
        Expr::Identity => Value::Matrix(DMatrix::identity(n, n)),
        Expr::MeanProjection => Value::Matrix(DMatrix::from_element(n, n, 1.0 / n as f64)),
        Expr::Laplacian => Value::Matrix(lap.clone()),
        Expr::Neg(a) => match eval(a, grid, lap) {
            Value::Scalar(s) => Value::Scalar(-s),
            Value::Matrix(m) => Value::Matrix(-m),
        },
        Expr::Add(a, b) | Expr::Sub(a, b) => {
            let sign = if matches!(expr, Expr::Add(..)) { 1.0 } else { -1.0 };
            match (eval(a, grid, lap), eval(b, grid, lap)) {
                (Value::Scalar(x), Value::Scalar(y)) => Value::Scalar(x + sign * y),
                (x, y) => Value::Matrix(x.into_matrix(n) + y.into_matrix(n) * sign),
            }
        }
        Expr::Mul(a, b) => match (eval(a, grid, lap), eval(b, grid, lap)) {
            (Value::Scalar(x), Value::Scalar(y)) => Value::Scalar(x * y),
            (Value::Scalar(x), Value::Matrix(m)) | (Value::Matrix(m), Value::Scalar(x)) => {
                Value::Matrix(m * x)
            }
            (Value::Matrix(x), Value::Matrix(y)) => Value::Matrix(x * y),
        },
        Expr::Pow(a, k) => match eval(a, grid, lap) {
            Value::Scalar(x) => Value::Scalar(x.powi(*k as i32)),
            Value::Matrix(m) => {
                let mut acc = DMatrix::identity(n, n);
                for _ in 0..*k {
                    acc = &acc * &m;
                }
                Value::Matrix(acc)
            }
        },
    }
}

/// Assembles the operator denoted by `recipe` on `grid`, without the SPD check.
///
/// The result acts in the mesh-weighted inner product; the coordinate
/// precision of the corresponding Gaussian is `h^d` times this matrix.
pub fn assemble_operator(recipe: &PrecisionRecipe, grid: &GridSpec) -> Result<DMatrix<f64>> {
    if recipe.uses_mean_projection() && grid.boundary() != Boundary::Periodic {
        return Err(Error::config(
            "problem.boundary",
            format!(
                "recipe `{recipe}` uses the mean projection T, which requires a periodic grid (got {})",
                grid.boundary()
            ),
        ));
    }
    let lap = laplacian(grid);
    let m = eval(&recipe.expr, grid, &lap).into_matrix(grid.dof());
    Ok((&m + m.transpose()) * 0.5)
}

/// Assembles the precision operator and verifies it is symmetric positive definite.
pub fn assemble_precision(recipe: &PrecisionRecipe, grid: &GridSpec) -> Result<DMatrix<f64>> {
    let m = assemble_operator(recipe, grid)?;
    let min_eig = SymmetricEigen::new(m.clone()).eigenvalues.min();
    if !(min_eig > 0.0) {
        return Err(Error::numerical(format!(
            "recipe `{recipe}` is not positive definite on this grid (smallest eigenvalue {min_eig:e})"
        )));
    }
    Ok(m)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DVector;
    use std::f64::consts::PI;

    #[test]
    fn neumann_shifted_laplacian_fixes_constants() {
        let g = GridSpec::line(2.0 * PI, 40, Boundary::Neumann).unwrap();
        let p = assemble_precision(&PrecisionRecipe::parse("inv:(I - lap)").unwrap(), &g).unwrap();
        let c = DVector::from_element(40, 3.7);
        let pc = &p * &c;
        assert!((pc - c).amax() < 1e-9);
    }

    #[test]
    fn periodic_spectrum_matches_circulant_formula() {
        let d = 24;
        let g = GridSpec::line(2.0 * PI, d, Boundary::Periodic).unwrap();
        let h = g.spacing(0);
        let mut eig: Vec<f64> = SymmetricEigen::new(-laplacian(&g)).eigenvalues.iter().copied().collect();
        let mut exact: Vec<f64> = (0..d)
            .map(|k| 2.0 * (1.0 - (2.0 * PI * k as f64 / d as f64).cos()) / (h * h))
            .collect();
        eig.sort_by(f64::total_cmp);
        exact.sort_by(f64::total_cmp);
        for (a, b) in eig.iter().zip(&exact) {
            assert!((a - b).abs() < 1e-10 * (1.0 + b.abs()), "{a} vs {b}");
        }
    }

    #[test]
    fn darcy_prior_recipe_is_spd() {
        let g = GridSpec::line(2.0 * PI, 100, Boundary::Periodic).unwrap();
        let r = PrecisionRecipe::parse("inv:4*(100*T - lap)^2").unwrap();
        assert!(assemble_precision(&r, &g).is_ok());
    }

    #[test]
    fn mean_projection_needs_periodic_grid() {
        let g = GridSpec::line(1.0, 10, Boundary::Neumann).unwrap();
        let r = PrecisionRecipe::parse("inv:4*(100*T - lap)^2").unwrap();
        assert!(matches!(assemble_operator(&r, &g), Err(Error::Config { .. })));
    }

    #[test]
    fn bare_laplacian_is_rejected_as_not_spd() {
        let g = GridSpec::line(1.0, 10, Boundary::Neumann).unwrap();
        let r = PrecisionRecipe::parse("inv:-1*lap").unwrap();
        assert!(matches!(assemble_precision(&r, &g), Err(Error::Numerical(_))));
    }

    #[test]
    fn parse_errors() {
        assert!(PrecisionRecipe::parse("(I - lap)").is_err());
        assert!(PrecisionRecipe::parse("inv:(I - lap").is_err());
        assert!(PrecisionRecipe::parse("inv:I - grad").is_err());
        assert!(PrecisionRecipe::parse("inv:(I - lap)^0.5").is_err());
    }

    #[test]
    fn dirichlet_and_two_dimensional_assembly() {
        let g = GridSpec::line(1.0, 5, Boundary::Dirichlet).unwrap();
        let lap = laplacian(&g);
        assert!((lap[(0, 0)] + 50.0).abs() < 1e-12);
        assert!((lap[(4, 4)] + 50.0).abs() < 1e-12);
        assert_eq!(lap[(0, 1)], -0.5 * lap[(0, 0)]);
        let g2 = GridSpec::square(1.0, 4, 4, Boundary::Neumann).unwrap();
        let lap2 = laplacian(&g2);
        let ones = DVector::from_element(16, 1.0);
        assert!((&lap2 * ones).amax() < 1e-12);
        assert!((&lap2 - lap2.transpose()).amax() == 0.0);
    }

    #[test]
    fn squared_recipe_equals_matrix_square() {
        let g = GridSpec::line(1.0, 8, Boundary::Neumann).unwrap();
        let a = assemble_operator(&PrecisionRecipe::parse("inv:(I - lap)").unwrap(), &g).unwrap();
        let b = assemble_operator(&PrecisionRecipe::parse("inv:(I - lap)^2").unwrap(), &g).unwrap();
        assert!((&a * &a - b).amax() < 1e-9);
    }
}
