//! File formats: operator and state JSON, raw complex64 grids with a JSON
//! sidecar, a serializable view of the structure report, and atomic writes.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::semigroup::{GaussianState, GridState};
use crate::structure::{OUOperator, StructureReport};

fn to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

fn to_columns(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.column_iter().map(|c| c.iter().copied().collect()).collect()
}

fn from_rows(rows: &[Vec<f64>], n: usize, name: &str) -> Result<DMatrix<f64>> {
    if rows.len() != n || rows.iter().any(|r| r.len() != n) {
        return Err(Error::InvalidArgument(format!("field '{name}' must be an {n}x{n} array of rows")));
    }
    Ok(DMatrix::from_fn(n, n, |i, j| rows[i][j]))
}

fn vector(v: &[f64], n: usize, name: &str) -> Result<DVector<f64>> {
    if v.len() != n {
        return Err(Error::InvalidArgument(format!("field '{name}' must have length {n}, got {}", v.len())));
    }
    Ok(DVector::from_column_slice(v))
}

/// `{"n": .., "B": [[..]], "Q": [[..]], "s": ..}` with row-major matrices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OperatorSpec {
    pub n: usize,
    #[serde(rename = "B")]
    pub b: Vec<Vec<f64>>,
    #[serde(rename = "Q")]
    pub q: Vec<Vec<f64>>,
    pub s: f64,
}

impl OperatorSpec {
    pub fn from_operator(op: &OUOperator) -> Self {
        Self { n: op.n(), b: to_rows(op.b()), q: to_rows(op.q()), s: op.s() }
    }

    pub fn build(&self) -> Result<OUOperator> {
        let b = from_rows(&self.b, self.n, "B")?;
        let q = from_rows(&self.q, self.n, "Q")?;
        OUOperator::new(b, q, self.s)
    }
}

pub fn parse_operator(text: &str) -> Result<OUOperator> {
    serde_json::from_str::<OperatorSpec>(text)?.build()
}

pub fn load_operator(path: &Path) -> Result<OUOperator> {
    parse_operator(&fs::read_to_string(path)?)
}

/// Complex amplitude written either as a number or as `[re, im]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum AmplitudeSpec {
    Real(f64),
    Complex([f64; 2]),
}

impl AmplitudeSpec {
    pub fn value(self) -> Complex64 {
        match self {
            AmplitudeSpec::Real(re) => Complex64::new(re, 0.0),
            AmplitudeSpec::Complex([re, im]) => Complex64::new(re, im),
        }
    }
}

/// State JSON. `L` is the half side length: the box is `[-L, L)^n`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase", deny_unknown_fields)]
pub enum StateSpec {
    Gaussian {
        amplitude: AmplitudeSpec,
        mu: Vec<f64>,
        omega: Vec<f64>,
        #[serde(rename = "Gamma")]
        gamma: Vec<Vec<f64>>,
    },
    Grid {
        /// Dimension; inferred from the file length when absent.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        n: Option<usize>,
        #[serde(rename = "N")]
        size: usize,
        #[serde(rename = "L")]
        half_length: f64,
        file: PathBuf,
    },
}

#[derive(Debug, Clone)]
pub enum State {
    Gaussian(GaussianState),
    Grid(GridState),
}

impl State {
    pub fn n(&self) -> usize {
        match self {
            State::Gaussian(g) => g.n(),
            State::Grid(g) => g.n(),
        }
    }
}

impl StateSpec {
    pub fn from_gaussian(u: &GaussianState) -> Self {
        StateSpec::Gaussian {
            amplitude: AmplitudeSpec::Complex([u.amplitude().re, u.amplitude().im]),
            mu: u.mu().iter().copied().collect(),
            omega: u.omega().iter().copied().collect(),
            gamma: to_rows(u.gamma()),
        }
    }

    /// Builds the state; relative grid paths are resolved against `base_dir`.
    pub fn build(&self, base_dir: &Path) -> Result<State> {
        match self {
            StateSpec::Gaussian { amplitude, mu, omega, gamma } => {
                let n = gamma.len();
                let g = from_rows(gamma, n, "Gamma")?;
                let u = GaussianState::new(amplitude.value(), vector(mu, n, "mu")?, vector(omega, n, "omega")?, g)?;
                Ok(State::Gaussian(u))
            }
            StateSpec::Grid { n, size, half_length, file } => {
                let path = if file.is_absolute() { file.clone() } else { base_dir.join(file) };
                let values = read_complex64(&path)?;
                let n = match n {
                    Some(n) => *n,
                    None => infer_dimension(values.len(), *size)?,
                };
                Ok(State::Grid(GridState::new(n, *size, *half_length, values)?))
            }
        }
    }
}

fn infer_dimension(len: usize, size: usize) -> Result<usize> {
    if size < 2 {
        return Err(Error::InvalidState(format!("points per axis {size} must be at least 2")));
    }
    let (mut total, mut n) = (1usize, 0usize);
    while total < len {
        total = total.saturating_mul(size);
        n += 1;
    }
    if total != len || n == 0 {
        return Err(Error::InvalidState(format!("{len} values is not a power of {size}")));
    }
    Ok(n)
}

pub fn load_state(path: &Path) -> Result<State> {
    let spec: StateSpec = serde_json::from_str(&fs::read_to_string(path)?)?;
    spec.build(path.parent().unwrap_or(Path::new(".")))
}

/// Little-endian `(re, im)` pairs of `f32`, no header.
pub fn read_complex64(path: &Path) -> Result<Vec<Complex64>> {
    let bytes = fs::read(path)?;
    if bytes.len() % 8 != 0 {
        return Err(Error::InvalidState(format!(
            "{}: length {} is not a multiple of 8 bytes",
            path.display(),
            bytes.len()
        )));
    }
    Ok(bytes
        .chunks_exact(8)
        .map(|c| {
            let re = f32::from_le_bytes([c[0], c[1], c[2], c[3]]);
            let im = f32::from_le_bytes([c[4], c[5], c[6], c[7]]);
            Complex64::new(re as f64, im as f64)
        })
        .collect())
}

pub fn encode_complex64(values: &[Complex64]) -> Vec<u8> {
    let mut out = Vec::with_capacity(values.len() * 8);
    for v in values {
        out.extend_from_slice(&(v.re as f32).to_le_bytes());
        out.extend_from_slice(&(v.im as f32).to_le_bytes());
    }
    out
}

/// Dimensions stored next to a raw grid file.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSidecar {
    pub n: usize,
    #[serde(rename = "N")]
    pub size: usize,
    #[serde(rename = "L")]
    pub half_length: f64,
}

/// `grid.c64` -> `grid.c64.json`.
pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

/// Writes the raw values and the sidecar, both atomically.
pub fn write_grid(path: &Path, grid: &GridState) -> Result<()> {
    write_atomic(path, &encode_complex64(grid.values()))?;
    let meta = GridSidecar { n: grid.n(), size: grid.size(), half_length: grid.half_length() };
    write_atomic(&sidecar_path(path), serde_json::to_string_pretty(&meta)?.as_bytes())
}

/// Reads a raw grid using its sidecar.
pub fn read_grid(path: &Path) -> Result<GridState> {
    let meta: GridSidecar = serde_json::from_str(&fs::read_to_string(sidecar_path(path))?)?;
    GridState::new(meta.n, meta.size, meta.half_length, read_complex64(path)?)
}

/// Writes through a temporary file in the target directory and renames it
/// into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| Error::Io(e.error))?;
    Ok(())
}

#[derive(Debug, Clone, Serialize)]
pub struct FrameView {
    /// Columns of the orthonormal basis of `S^perp`.
    pub basis: Vec<Vec<f64>>,
    pub levels: Vec<usize>,
}

/// JSON form of a [`StructureReport`]. Bases are lists of column vectors and
/// matrices are lists of rows.
#[derive(Debug, Clone, Serialize)]
pub struct StructureView {
    pub n: usize,
    #[serde(rename = "sqrtQ")]
    pub sqrt_q: Vec<Vec<f64>>,
    #[serde(rename = "S_basis")]
    pub s_basis: Vec<Vec<f64>>,
    pub dim_s: usize,
    pub r: usize,
    #[serde(rename = "V_bases")]
    pub v_bases: Vec<Vec<Vec<f64>>>,
    pub projectors: Vec<Vec<Vec<f64>>>,
    pub kalman: bool,
    pub frame: FrameView,
    pub rank_tol: f64,
}

impl From<&StructureReport> for StructureView {
    fn from(r: &StructureReport) -> Self {
        Self {
            n: r.n(),
            sqrt_q: to_rows(&r.sqrt_q),
            s_basis: to_columns(&r.s_basis),
            dim_s: r.dim_s(),
            r: r.r,
            v_bases: r.v_bases.iter().map(to_columns).collect(),
            projectors: r.projectors.iter().map(to_rows).collect(),
            kalman: r.kalman,
            frame: FrameView { basis: to_columns(&r.frame.basis), levels: r.frame.levels.clone() },
            rank_tol: r.rank_tol,
        }
    }
}
