//! The sinc-kernel decay matrix `S` and its centred rescaling `Q`.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rayon::prelude::*;

use crate::cloud::{distance, CloudSample};
use crate::error::{Error, Result};

/// `sin(x)/x` with the removable singularity filled in.
#[inline]
pub fn sinc(x: f64) -> f64 {
    if x.abs() < 1e-4 {
        let x2 = x * x;
        1.0 - x2 / 6.0 + x2 * x2 / 120.0
    } else {
        x.sin() / x
    }
}

/// Which matrix a spectrum was computed from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MatrixKind {
    Decay,
    Centered,
}

/// Read access shared by `S` and `Q` for the eigensolver.
pub trait SymmetricMatrix {
    fn dim(&self) -> usize;
    /// Row-major, full square storage.
    fn entries(&self) -> &[f64];
    fn cooperativeness(&self) -> f64;
    fn kind(&self) -> MatrixKind;
    fn source_seed(&self) -> u64;

    fn get(&self, i: usize, j: usize) -> f64 {
        self.entries()[i * self.dim() + j]
    }
}

/// Dense decay-rate matrix `S_ij = sinc(sqrt(M) |x_i - x_j|)`.
#[derive(Debug, Clone, PartialEq)]
pub struct DecayMatrix {
    entries: Vec<f64>,
    n_atoms: usize,
    mode_count: f64,
    cooperativeness: f64,
    source_seed: u64,
}

impl DecayMatrix {
    pub fn n_atoms(&self) -> usize {
        self.n_atoms
    }

    /// `M = N / b0`.
    pub fn mode_count(&self) -> f64 {
        self.mode_count
    }

    pub fn trace(&self) -> f64 {
        (0..self.n_atoms).map(|i| self.get(i, i)).sum()
    }

    /// Builds a matrix from explicit row-major entries, checking the
    /// structural invariants (unit diagonal, exact symmetry, |S_ij| <= 1).
    pub fn from_entries(entries: Vec<f64>, n_atoms: usize, b0: f64) -> Result<Self> {
        check_positive("b0", b0)?;
        if n_atoms == 0 || entries.len() != n_atoms * n_atoms {
            return Err(Error::invalid(format!(
                "expected {n_atoms}x{n_atoms} entries, got {}",
                entries.len()
            )));
        }
        for i in 0..n_atoms {
            if entries[i * n_atoms + i] != 1.0 {
                return Err(Error::Data(format!("diagonal entry {i} is not 1")));
            }
            for j in (i + 1)..n_atoms {
                let a = entries[i * n_atoms + j];
                if !a.is_finite() || a.abs() > 1.0 || a != entries[j * n_atoms + i] {
                    return Err(Error::Data(format!("entry ({i}, {j}) violates symmetry or bounds")));
                }
            }
        }
        Ok(Self {
            entries,
            n_atoms,
            mode_count: n_atoms as f64 / b0,
            cooperativeness: b0,
            source_seed: 0,
        })
    }

    /// Little-endian dump: `N` as u64, `b0` as f64, then `N²` row-major f64.
    pub fn write_binary(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        let mut put = |bytes: &[u8]| w.write_all(bytes).map_err(|e| Error::io(path, e));
        put(&(self.n_atoms as u64).to_le_bytes())?;
        put(&self.cooperativeness.to_le_bytes())?;
        for v in &self.entries {
            put(&v.to_le_bytes())?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn read_binary(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut r = BufReader::new(file);
        let mut word = [0u8; 8];
        let mut next = |r: &mut BufReader<File>| -> Result<[u8; 8]> {
            r.read_exact(&mut word).map_err(|e| Error::io(path, e))?;
            Ok(word)
        };
        let n = u64::from_le_bytes(next(&mut r)?) as usize;
        let b0 = f64::from_le_bytes(next(&mut r)?);
        let len = n
            .checked_mul(n)
            .ok_or_else(|| Error::Data(format!("implausible dimension {n}")))?;
        let mut entries = Vec::with_capacity(len);
        for _ in 0..len {
            entries.push(f64::from_le_bytes(next(&mut r)?));
        }
        let mut trailing = [0u8; 1];
        if r.read(&mut trailing).map_err(|e| Error::io(path, e))? != 0 {
            return Err(Error::Data("trailing bytes after matrix payload".into()));
        }
        Self::from_entries(entries, n, b0)
    }
}

impl SymmetricMatrix for DecayMatrix {
    fn dim(&self) -> usize {
        self.n_atoms
    }
    fn entries(&self) -> &[f64] {
        &self.entries
    }
    fn cooperativeness(&self) -> f64 {
        self.cooperativeness
    }
    fn kind(&self) -> MatrixKind {
        MatrixKind::Decay
    }
    fn source_seed(&self) -> u64 {
        self.source_seed
    }
}

fn check_positive(name: &str, v: f64) -> Result<()> {
    if !(v.is_finite() && v > 0.0) {
        return Err(Error::invalid(format!("{name} must be positive and finite, got {v}")));
    }
    Ok(())
}

/// Builds `S` in the fixed-`b0` scaling, `M = N / b0`.
pub fn build_decay_matrix(cloud: &CloudSample, b0: f64) -> Result<DecayMatrix> {
    check_positive("b0", b0)?;
    let n = cloud.n_atoms();
    build(cloud, n as f64 / b0, b0)
}

/// Builds `S` for an explicit mode count `M = (k_a σ)²`; `b0` is derived as `N / M`.
pub fn build_decay_matrix_with_modes(cloud: &CloudSample, modes: f64) -> Result<DecayMatrix> {
    check_positive("M", modes)?;
    let n = cloud.n_atoms();
    build(cloud, modes, n as f64 / modes)
}

fn build(cloud: &CloudSample, modes: f64, b0: f64) -> Result<DecayMatrix> {
    let pts = cloud.points();
    if pts.iter().flatten().any(|c| !c.is_finite()) {
        return Err(Error::Data("cloud contains non-finite coordinates".into()));
    }
    let n = pts.len();
    let k = modes.sqrt();
    let mut entries = vec![0.0; n * n];
    // Upper triangle row by row, then mirror so S_ij == S_ji bit for bit.
    entries.par_chunks_mut(n).enumerate().for_each(|(i, row)| {
        row[i] = 1.0;
        for j in (i + 1)..n {
            row[j] = sinc(k * distance(&pts[i], &pts[j]));
        }
    });
    for i in 0..n {
        for j in (i + 1)..n {
            entries[j * n + i] = entries[i * n + j];
        }
    }
    Ok(DecayMatrix {
        entries,
        n_atoms: n,
        mode_count: modes,
        cooperativeness: b0,
        source_seed: cloud.seed(),
    })
}

/// `Q = sqrt(2 / (3 b0)) (S - I)`.
#[derive(Debug, Clone, PartialEq)]
pub struct CenteredMatrix {
    entries: Vec<f64>,
    n_atoms: usize,
    cooperativeness: f64,
    source_seed: u64,
}

impl CenteredMatrix {
    pub fn scale(b0: f64) -> f64 {
        (2.0 / (3.0 * b0)).sqrt()
    }
}

impl SymmetricMatrix for CenteredMatrix {
    fn dim(&self) -> usize {
        self.n_atoms
    }
    fn entries(&self) -> &[f64] {
        &self.entries
    }
    fn cooperativeness(&self) -> f64 {
        self.cooperativeness
    }
    fn kind(&self) -> MatrixKind {
        MatrixKind::Centered
    }
    fn source_seed(&self) -> u64 {
        self.source_seed
    }
}

pub fn build_centered_matrix(s: &DecayMatrix) -> CenteredMatrix {
    let n = s.n_atoms;
    let c = CenteredMatrix::scale(s.cooperativeness);
    let mut entries: Vec<f64> = s.entries.iter().map(|v| c * v).collect();
    for i in 0..n {
        entries[i * n + i] = 0.0;
    }
    CenteredMatrix {
        entries,
        n_atoms: n,
        cooperativeness: s.cooperativeness,
        source_seed: s.source_seed,
    }
}
