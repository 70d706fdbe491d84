use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

/// Per-volume diffusion weighting: b-values in s/mm² and unit directions.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientTable {
    bvals: Vec<f64>,
    bvecs: Vec<[f64; 3]>,
}

impl GradientTable {
    pub fn new(bvals: Vec<f64>, bvecs: Vec<[f64; 3]>) -> Result<Self> {
        if bvals.len() != bvecs.len() {
            return Err(Error::Shape(format!("{} b-values but {} b-vectors", bvals.len(), bvecs.len())));
        }
        if bvals.len() < 7 {
            return Err(Error::Precondition(format!("need at least 7 volumes, got {}", bvals.len())));
        }
        if bvals.iter().any(|&b| !(b >= 0.0) || !b.is_finite()) {
            return Err(Error::Precondition("b-values must be finite and non-negative".into()));
        }
        if !bvals.iter().any(|&b| b == 0.0) {
            return Err(Error::Precondition("no b=0 volume".into()));
        }
        let weighted = bvals.iter().filter(|&&b| b > 0.0).count();
        if weighted < 6 {
            return Err(Error::Precondition(format!("need 6 diffusion-weighted volumes, got {weighted}")));
        }
        for (i, (b, g)) in bvals.iter().zip(&bvecs).enumerate() {
            let norm = (g[0] * g[0] + g[1] * g[1] + g[2] * g[2]).sqrt();
            if *b > 0.0 && (norm - 1.0).abs() > 1e-6 {
                return Err(Error::Precondition(format!("b-vector {i} has norm {norm}")));
            }
        }
        Ok(GradientTable { bvals, bvecs })
    }

    /// `n_b0` unweighted volumes followed by `n_dirs` directions at `bval`,
    /// spread over the upper hemisphere on a Fibonacci lattice.
    pub fn hemisphere(n_dirs: usize, bval: f64, n_b0: usize) -> Result<Self> {
        let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
        let mut bvals = vec![0.0; n_b0];
        let mut bvecs = vec![[0.0; 3]; n_b0];
        for i in 0..n_dirs {
            let z = 1.0 - (i as f64 + 0.5) / n_dirs as f64;
            let r = (1.0 - z * z).sqrt();
            let phi = golden * i as f64;
            let g = [r * phi.cos(), r * phi.sin(), z];
            let n = (g[0] * g[0] + g[1] * g[1] + g[2] * g[2]).sqrt();
            bvecs.push(g.map(|c| c / n));
            bvals.push(bval);
        }
        Self::new(bvals, bvecs)
    }

    pub fn len(&self) -> usize {
        self.bvals.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bvals.is_empty()
    }

    pub fn bvals(&self) -> &[f64] {
        &self.bvals
    }

    pub fn bvecs(&self) -> &[[f64; 3]] {
        &self.bvecs
    }

    /// Reads FSL-style `bvals` (one row) and `bvecs` (three rows) files.
    pub fn read_fsl(bvals: impl AsRef<Path>, bvecs: impl AsRef<Path>) -> Result<Self> {
        let parse = |path: &Path| -> Result<Vec<Vec<f64>>> {
            let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            text.lines()
                .filter(|l| !l.trim().is_empty())
                .map(|l| {
                    l.split_whitespace()
                        .map(|t| {
                            t.parse::<f64>()
                                .map_err(|_| Error::Format(format!("{}: cannot parse {t:?}", path.display())))
                        })
                        .collect()
                })
                .collect()
        };
        let bval_rows = parse(bvals.as_ref())?;
        let bvec_rows = parse(bvecs.as_ref())?;
        if bval_rows.len() != 1 {
            return Err(Error::Format(format!("bvals must have one row, found {}", bval_rows.len())));
        }
        if bvec_rows.len() != 3 || bvec_rows.iter().any(|r| r.len() != bval_rows[0].len()) {
            return Err(Error::Format("bvecs must have three rows matching the bvals length".into()));
        }
        let vecs = (0..bval_rows[0].len())
            .map(|i| [bvec_rows[0][i], bvec_rows[1][i], bvec_rows[2][i]])
            .collect();
        Self::new(bval_rows[0].clone(), vecs)
    }

    pub fn write_fsl(&self, bvals: impl AsRef<Path>, bvecs: impl AsRef<Path>) -> Result<()> {
        let row = |vals: &mut dyn Iterator<Item = f64>| {
            let mut s = String::new();
            for (i, v) in vals.enumerate() {
                if i > 0 {
                    s.push(' ');
                }
                write!(s, "{v}").unwrap();
            }
            s.push('\n');
            s
        };
        let bval_text = row(&mut self.bvals.iter().copied());
        let mut bvec_text = String::new();
        for axis in 0..3 {
            bvec_text.push_str(&row(&mut self.bvecs.iter().map(|g| g[axis])));
        }
        fs::write(bvals.as_ref(), bval_text).map_err(|e| Error::io(bvals.as_ref(), e))?;
        fs::write(bvecs.as_ref(), bvec_text).map_err(|e| Error::io(bvecs.as_ref(), e))
    }
}
