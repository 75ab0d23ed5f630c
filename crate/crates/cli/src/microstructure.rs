//! Two-phase pixel microstructures of one period.

use std::fmt;
use std::str::FromStr;

use fehmm::mesh::PhaseGrid;
use fehmm::{Error, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Generator {
    /// Phase 1 everywhere.
    Homogeneous,
    /// Left half phase 1, right half phase 2.
    LaminateX,
    /// Phase-1 grid whose material blends smoothly between the two phases along x.
    BlurredLaminate,
    /// Four quadrants, phase 1 top-left and bottom-right.
    Checkerboard,
    /// Random periodic disks of phase 2 in phase 1.
    Blob,
    /// Phase grid read from `micro.file`.
    File,
}

impl Generator {
    pub fn name(self) -> &'static str {
        match self {
            Generator::Homogeneous => "homogeneous",
            Generator::LaminateX => "laminate-x",
            Generator::BlurredLaminate => "blurred-laminate",
            Generator::Checkerboard => "checkerboard",
            Generator::Blob => "blob",
            Generator::File => "file",
        }
    }
}

impl fmt::Display for Generator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Generator {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "homogeneous" => Generator::Homogeneous,
            "laminate-x" | "laminate" => Generator::LaminateX,
            "blurred-laminate" => Generator::BlurredLaminate,
            "checkerboard" => Generator::Checkerboard,
            "blob" => Generator::Blob,
            "file" => Generator::File,
            other => return Err(Error::InvalidArgument(format!("unknown generator '{other}'"))),
        })
    }
}

fn halves(name: &str, n: usize) -> Result<()> {
    if n < 2 || n % 2 != 0 {
        return Err(Error::InvalidArgument(format!("{name} needs an even resolution, got {n}")));
    }
    Ok(())
}

/// `n x n` grid of one period. `seed` only affects `blob`.
pub fn generate_microstructure(g: Generator, n: usize, seed: u64) -> Result<PhaseGrid> {
    if n == 0 {
        return Err(Error::InvalidArgument("resolution must be positive".into()));
    }
    let rows: Vec<Vec<u8>> = match g {
        Generator::Homogeneous | Generator::BlurredLaminate => vec![vec![1; n]; n],
        Generator::LaminateX => {
            halves("laminate-x", n)?;
            vec![(0..n).map(|i| if i < n / 2 { 1 } else { 2 }).collect(); n]
        }
        Generator::Checkerboard => {
            halves("checkerboard", n)?;
            (0..n)
                .map(|r| (0..n).map(|i| if (i < n / 2) == (r < n / 2) { 1 } else { 2 }).collect())
                .collect()
        }
        Generator::Blob => blobs(n, seed),
        Generator::File => return Err(Error::InvalidArgument("file microstructures are read, not generated".into())),
    };
    PhaseGrid::from_rows_top_down(&rows)
}

fn blobs(n: usize, seed: u64) -> Vec<Vec<u8>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let count = 1 + n * n / 256;
    let disks: Vec<(f64, f64, f64)> = (0..count)
        .map(|_| {
            let x = rng.gen::<f64>() * n as f64;
            let y = rng.gen::<f64>() * n as f64;
            let r = rng.gen_range(0.12..0.25) * n as f64;
            (x, y, r)
        })
        .collect();
    // periodic distance so the grid tiles without seams
    let wrap = |d: f64| {
        let d = d.abs() % n as f64;
        d.min(n as f64 - d)
    };
    (0..n)
        .map(|r| {
            (0..n)
                .map(|i| {
                    let (px, py) = (i as f64 + 0.5, r as f64 + 0.5);
                    let inside = disks.iter().any(|&(x, y, rad)| wrap(px - x).hypot(wrap(py - y)) < rad);
                    if inside {
                        2
                    } else {
                        1
                    }
                })
                .collect()
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn laminate_columns() {
        let g = generate_microstructure(Generator::LaminateX, 8, 0).unwrap();
        assert_eq!(g.volume_fraction(1), 0.5);
        for j in 0..8 {
            for i in 0..8 {
                assert_eq!(g.get(i, j), if i < 4 { 1 } else { 2 });
            }
        }
    }

    #[test]
    fn checkerboard_two() {
        let g = generate_microstructure(Generator::Checkerboard, 2, 0).unwrap();
        assert_eq!(g.to_text(), "2 2\n1 2\n2 1\n");
    }

    #[test]
    fn blob_is_seeded() {
        let a = generate_microstructure(Generator::Blob, 48, 7).unwrap();
        let b = generate_microstructure(Generator::Blob, 48, 7).unwrap();
        let c = generate_microstructure(Generator::Blob, 48, 8).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        let f = a.volume_fraction(2);
        assert!(f > 0.0 && f < 1.0, "{f}");
    }

    #[test]
    fn unknown_and_odd() {
        assert!("voronoi".parse::<Generator>().is_err());
        assert!(generate_microstructure(Generator::Checkerboard, 3, 0).is_err());
        assert_eq!("laminate-x".parse::<Generator>().unwrap().to_string(), "laminate-x");
    }
}
