//! Structured and pixel-derived meshes, nested refinement and periodic
//! node pairing on square sampling domains.
//!
//! Structured meshes number nodes row by row from the lower-left corner,
//! `node(i, j) = j * (nx + 1) + i`, and elements cell by cell in the same
//! order. A quad cell `(n00, n10, n11, n01)` is split into the triangles
//! `(n00, n10, n11)` and `(n00, n11, n01)`, always along the lower-left to
//! upper-right diagonal.

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fem::QuadratureRule;

/// Geometric tolerance for periodic matching, relative to the cell size.
pub const PERIODIC_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ElementKind {
    Tri3,
    Quad4,
}

impl ElementKind {
    pub fn nodes_per_element(self) -> usize {
        match self {
            ElementKind::Tri3 => 3,
            ElementKind::Quad4 => 4,
        }
    }

    /// Number of elements a single structured grid cell is split into.
    pub fn elements_per_cell(self) -> usize {
        match self {
            ElementKind::Tri3 => 2,
            ElementKind::Quad4 => 1,
        }
    }
}

impl fmt::Display for ElementKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ElementKind::Tri3 => write!(f, "tri3"),
            ElementKind::Quad4 => write!(f, "quad4"),
        }
    }
}

impl std::str::FromStr for ElementKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "tri3" | "tri" => Ok(ElementKind::Tri3),
            "quad4" | "quad" => Ok(ElementKind::Quad4),
            other => Err(Error::Parse(format!("unknown element kind '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundingBox {
    pub min: [f64; 2],
    pub max: [f64; 2],
}

impl BoundingBox {
    pub fn width(&self) -> f64 {
        self.max[0] - self.min[0]
    }

    pub fn height(&self) -> f64 {
        self.max[1] - self.min[1]
    }

    pub fn center(&self) -> [f64; 2] {
        [
            0.5 * (self.min[0] + self.max[0]),
            0.5 * (self.min[1] + self.max[1]),
        ]
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }
}

/// Structured grid layout retained by generated meshes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridLayout {
    pub nx: usize,
    pub ny: usize,
    pub origin: [f64; 2],
    pub width: f64,
    pub height: f64,
}

impl GridLayout {
    pub fn cell_size(&self) -> [f64; 2] {
        [self.width / self.nx as f64, self.height / self.ny as f64]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mesh {
    pub kind: ElementKind,
    pub nodes: Vec<[f64; 2]>,
    connectivity: Vec<usize>,
    /// Phase label per element, 1 or 2.
    pub phases: Vec<u8>,
    pub bbox: BoundingBox,
    grid: Option<GridLayout>,
}

impl Mesh {
    /// Builds an unstructured mesh and checks all mesh invariants.
    pub fn new(
        kind: ElementKind,
        nodes: Vec<[f64; 2]>,
        connectivity: Vec<usize>,
        phases: Vec<u8>,
    ) -> Result<Self> {
        Self::build(kind, nodes, connectivity, phases, None)
    }

    fn build(
        kind: ElementKind,
        nodes: Vec<[f64; 2]>,
        connectivity: Vec<usize>,
        phases: Vec<u8>,
        grid: Option<GridLayout>,
    ) -> Result<Self> {
        let npe = kind.nodes_per_element();
        if nodes.is_empty() || connectivity.is_empty() {
            return Err(Error::InvalidArgument("empty mesh".into()));
        }
        if connectivity.len() % npe != 0 {
            return Err(Error::InvalidArgument(format!(
                "connectivity length {} is not a multiple of {npe}",
                connectivity.len()
            )));
        }
        let n_el = connectivity.len() / npe;
        if phases.len() != n_el {
            return Err(Error::InvalidArgument(format!(
                "{} phase labels for {n_el} elements",
                phases.len()
            )));
        }
        if let Some(p) = phases.iter().find(|&&p| p != 1 && p != 2) {
            return Err(Error::InvalidArgument(format!("phase label {p} not in {{1, 2}}")));
        }
        if let Some(&i) = connectivity.iter().find(|&&i| i >= nodes.len()) {
            return Err(Error::InvalidArgument(format!(
                "node index {i} out of range ({} nodes)",
                nodes.len()
            )));
        }
        let mut min = [f64::INFINITY; 2];
        let mut max = [f64::NEG_INFINITY; 2];
        for x in &nodes {
            for a in 0..2 {
                min[a] = min[a].min(x[a]);
                max[a] = max[a].max(x[a]);
            }
        }
        let mesh = Mesh {
            kind,
            nodes,
            connectivity,
            phases,
            bbox: BoundingBox { min, max },
            grid,
        };
        mesh.check_jacobians()?;
        Ok(mesh)
    }

    fn check_jacobians(&self) -> Result<()> {
        let rule = QuadratureRule::standard(self.kind);
        let mut coords = [[0.0; 2]; 4];
        for e in 0..self.num_elements() {
            let n = self.element_coords_into(e, &mut coords);
            for qp in rule.points() {
                let (_, det) = crate::fem::reference_jacobian(self.kind, &coords[..n], qp.xi);
                if !(det > 0.0) {
                    return Err(Error::DegenerateElement { det }.in_element(e));
                }
            }
        }
        Ok(())
    }

    pub fn num_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn num_elements(&self) -> usize {
        self.phases.len()
    }

    pub fn ndof(&self) -> usize {
        2 * self.nodes.len()
    }

    pub fn element(&self, e: usize) -> &[usize] {
        let npe = self.kind.nodes_per_element();
        &self.connectivity[e * npe..(e + 1) * npe]
    }

    pub fn elements(&self) -> impl Iterator<Item = &[usize]> {
        self.connectivity.chunks(self.kind.nodes_per_element())
    }

    /// Copies the element's nodal coordinates into `out`, returning the count.
    pub fn element_coords_into(&self, e: usize, out: &mut [[f64; 2]; 4]) -> usize {
        let conn = self.element(e);
        for (slot, &n) in out.iter_mut().zip(conn) {
            *slot = self.nodes[n];
        }
        conn.len()
    }

    pub fn grid(&self) -> Option<&GridLayout> {
        self.grid.as_ref()
    }

    pub fn set_phases(&mut self, phases: Vec<u8>) -> Result<()> {
        if phases.len() != self.num_elements() || phases.iter().any(|&p| p != 1 && p != 2) {
            return Err(Error::InvalidArgument("invalid phase vector".into()));
        }
        self.phases = phases;
        Ok(())
    }

    /// Nodes lying on the bounding box boundary, in ascending index order.
    pub fn boundary_nodes(&self) -> Vec<usize> {
        let tol = PERIODIC_TOLERANCE * self.bbox.width().max(self.bbox.height());
        let b = &self.bbox;
        (0..self.nodes.len())
            .filter(|&i| {
                let [x, y] = self.nodes[i];
                (x - b.min[0]).abs() <= tol
                    || (x - b.max[0]).abs() <= tol
                    || (y - b.min[1]).abs() <= tol
                    || (y - b.max[1]).abs() <= tol
            })
            .collect()
    }

    /// Nodes whose coordinate along `axis` equals `value` within tolerance.
    pub fn nodes_at(&self, axis: usize, value: f64) -> Vec<usize> {
        let tol = PERIODIC_TOLERANCE * self.bbox.width().max(self.bbox.height());
        (0..self.nodes.len())
            .filter(|&i| (self.nodes[i][axis] - value).abs() <= tol)
            .collect()
    }
}

/// Structured rectangular mesh on `[0, width] x [0, height]`.
pub fn generate_structured(
    width: f64,
    height: f64,
    nx: usize,
    ny: usize,
    kind: ElementKind,
) -> Result<Mesh> {
    generate_structured_at([0.0, 0.0], width, height, nx, ny, kind)
}

pub fn generate_structured_at(
    origin: [f64; 2],
    width: f64,
    height: f64,
    nx: usize,
    ny: usize,
    kind: ElementKind,
) -> Result<Mesh> {
    if !(width > 0.0 && height > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "dimensions must be positive, got {width} x {height}"
        )));
    }
    if nx == 0 || ny == 0 {
        return Err(Error::InvalidArgument(format!(
            "element counts must be positive, got {nx} x {ny}"
        )));
    }
    let hx = width / nx as f64;
    let hy = height / ny as f64;
    let mut nodes = Vec::with_capacity((nx + 1) * (ny + 1));
    for j in 0..=ny {
        for i in 0..=nx {
            // Snap the last row/column exactly onto the boundary.
            let x = if i == nx { width } else { i as f64 * hx };
            let y = if j == ny { height } else { j as f64 * hy };
            nodes.push([origin[0] + x, origin[1] + y]);
        }
    }
    let node = |i: usize, j: usize| j * (nx + 1) + i;
    let mut conn = Vec::with_capacity(nx * ny * 4);
    for j in 0..ny {
        for i in 0..nx {
            let (n00, n10, n11, n01) = (node(i, j), node(i + 1, j), node(i + 1, j + 1), node(i, j + 1));
            match kind {
                ElementKind::Quad4 => conn.extend_from_slice(&[n00, n10, n11, n01]),
                ElementKind::Tri3 => {
                    conn.extend_from_slice(&[n00, n10, n11]);
                    conn.extend_from_slice(&[n00, n11, n01]);
                }
            }
        }
    }
    let phases = vec![1; nx * ny * kind.elements_per_cell()];
    Mesh::build(
        kind,
        nodes,
        conn,
        phases,
        Some(GridLayout {
            nx,
            ny,
            origin,
            width,
            height,
        }),
    )
}

/// Two-phase pixel image. Row `j` of `cells` is the pixel row at height
/// index `j`, counted from the bottom.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PhaseGrid {
    pub nx: usize,
    pub ny: usize,
    pub cells: Vec<u8>,
}

impl PhaseGrid {
    pub fn new(nx: usize, ny: usize, cells: Vec<u8>) -> Result<Self> {
        if nx == 0 || ny == 0 {
            return Err(Error::InvalidArgument("phase grid must be non-empty".into()));
        }
        if cells.len() != nx * ny {
            return Err(Error::InvalidArgument(format!(
                "phase grid {nx}x{ny} needs {} cells, got {}",
                nx * ny,
                cells.len()
            )));
        }
        if let Some(p) = cells.iter().find(|&&p| p != 1 && p != 2) {
            return Err(Error::InvalidArgument(format!("phase label {p} not in {{1, 2}}")));
        }
        Ok(PhaseGrid { nx, ny, cells })
    }

    pub fn uniform(nx: usize, ny: usize, phase: u8) -> Result<Self> {
        Self::new(nx, ny, vec![phase; nx * ny])
    }

    /// Builds a grid from rows listed top to bottom, as they appear on screen.
    pub fn from_rows_top_down(rows: &[Vec<u8>]) -> Result<Self> {
        let ny = rows.len();
        let nx = rows.first().map_or(0, |r| r.len());
        if rows.iter().any(|r| r.len() != nx) {
            return Err(Error::InvalidArgument("ragged phase grid rows".into()));
        }
        let cells = rows.iter().rev().flat_map(|r| r.iter().copied()).collect();
        Self::new(nx, ny, cells)
    }

    pub fn get(&self, i: usize, j: usize) -> u8 {
        self.cells[j * self.nx + i]
    }

    pub fn volume_fraction(&self, phase: u8) -> f64 {
        self.cells.iter().filter(|&&p| p == phase).count() as f64 / self.cells.len() as f64
    }

    /// Repeats the grid `k` times in each direction.
    pub fn tile(&self, k: usize) -> Result<Self> {
        if k == 0 {
            return Err(Error::InvalidArgument("tile factor must be positive".into()));
        }
        let (nx, ny) = (self.nx * k, self.ny * k);
        let mut cells = Vec::with_capacity(nx * ny);
        for j in 0..ny {
            for i in 0..nx {
                cells.push(self.get(i % self.nx, j % self.ny));
            }
        }
        Self::new(nx, ny, cells)
    }

    /// Parses either the plain-text grid format (`nx ny` header followed by
    /// `ny` rows of `nx` labels) or an ASCII PGM (`P2`) image thresholded
    /// at mid-gray. Rows are listed top to bottom in both formats.
    pub fn parse(text: &str) -> Result<Self> {
        let stripped: Vec<&str> = text
            .lines()
            .map(|l| l.split('#').next().unwrap_or("").trim())
            .filter(|l| !l.is_empty())
            .collect();
        let tokens: Vec<&str> = stripped.iter().flat_map(|l| l.split_whitespace()).collect();
        if tokens.first() == Some(&"P2") {
            Self::parse_pgm_tokens(&tokens[1..])
        } else {
            Self::parse_text_tokens(&tokens)
        }
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    fn parse_usize(tok: Option<&&str>, what: &str) -> Result<usize> {
        tok.ok_or_else(|| Error::Parse(format!("missing {what}")))?
            .parse::<usize>()
            .map_err(|e| Error::Parse(format!("bad {what}: {e}")))
    }

    fn parse_text_tokens(tokens: &[&str]) -> Result<Self> {
        let nx = Self::parse_usize(tokens.first(), "nx")?;
        let ny = Self::parse_usize(tokens.get(1), "ny")?;
        let body = &tokens[2..];
        if body.len() != nx * ny {
            return Err(Error::Parse(format!(
                "expected {} phase labels, found {}",
                nx * ny,
                body.len()
            )));
        }
        let mut rows = Vec::with_capacity(ny);
        for r in body.chunks(nx) {
            let row = r
                .iter()
                .map(|t| t.parse::<u8>().map_err(|e| Error::Parse(format!("bad label '{t}': {e}"))))
                .collect::<Result<Vec<u8>>>()?;
            rows.push(row);
        }
        Self::from_rows_top_down(&rows)
    }

    fn parse_pgm_tokens(tokens: &[&str]) -> Result<Self> {
        let nx = Self::parse_usize(tokens.first(), "width")?;
        let ny = Self::parse_usize(tokens.get(1), "height")?;
        let maxval = Self::parse_usize(tokens.get(2), "maxval")?;
        if maxval == 0 {
            return Err(Error::Parse("PGM maxval must be positive".into()));
        }
        let body = &tokens[3..];
        if body.len() != nx * ny {
            return Err(Error::Parse(format!(
                "expected {} pixels, found {}",
                nx * ny,
                body.len()
            )));
        }
        // Mid-gray threshold; 128 for the usual maxval of 255.
        let threshold = (maxval + 1) as f64 / 2.0;
        let mut rows = Vec::with_capacity(ny);
        for r in body.chunks(nx) {
            let row = r
                .iter()
                .map(|t| {
                    let v: usize = t
                        .parse()
                        .map_err(|e| Error::Parse(format!("bad pixel '{t}': {e}")))?;
                    Ok(if (v as f64) < threshold { 1 } else { 2 })
                })
                .collect::<Result<Vec<u8>>>()?;
            rows.push(row);
        }
        Self::from_rows_top_down(&rows)
    }

    /// Plain-text serialization, rows top to bottom.
    pub fn to_text(&self) -> String {
        let mut s = format!("{} {}\n", self.nx, self.ny);
        for j in (0..self.ny).rev() {
            let row: Vec<String> = (0..self.nx).map(|i| self.get(i, j).to_string()).collect();
            s.push_str(&row.join(" "));
            s.push('\n');
        }
        s
    }
}

/// One element (or two triangles) per pixel on the square `[0, delta]^2`.
pub fn mesh_from_phase_grid(grid: &PhaseGrid, delta: f64, kind: ElementKind) -> Result<Mesh> {
    let mut mesh = generate_structured(delta, delta, grid.nx, grid.ny, kind)?;
    let per_cell = kind.elements_per_cell();
    mesh.phases = grid
        .cells
        .iter()
        .flat_map(|&p| std::iter::repeat(p).take(per_cell))
        .collect();
    Ok(mesh)
}

/// Uniform refinement of a structured mesh: every quad becomes four quads,
/// every triangle four triangles, and phases are inherited from the parent.
pub fn refine_uniform(mesh: &Mesh) -> Result<Mesh> {
    let g = mesh
        .grid
        .ok_or_else(|| Error::Unsupported("uniform refinement needs a structured mesh".into()))?;
    let mut fine = generate_structured_at(g.origin, g.width, g.height, 2 * g.nx, 2 * g.ny, mesh.kind)?;
    let per_cell = mesh.kind.elements_per_cell();
    let mut phases = Vec::with_capacity(fine.num_elements());
    for cj in 0..2 * g.ny {
        for ci in 0..2 * g.nx {
            let parent_cell = (cj / 2) * g.nx + ci / 2;
            let (a, b) = (ci % 2, cj % 2);
            for t in 0..per_cell {
                let parent_local = match mesh.kind {
                    ElementKind::Quad4 => 0,
                    // The child cells straddling the parent diagonal keep
                    // their lower/upper split; off-diagonal children lie
                    // entirely in one parent triangle.
                    ElementKind::Tri3 => match (a, b) {
                        (1, 0) => 0,
                        (0, 1) => 1,
                        _ => t,
                    },
                };
                phases.push(mesh.phases[parent_cell * per_cell + parent_local]);
            }
        }
    }
    fine.phases = phases;
    Ok(fine)
}

/// Periodic partner nodes on opposite edges of a square sampling domain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PeriodicPairing {
    /// `(p, q)` with `x_q - x_p` equal to `delta * e1` or `delta * e2`.
    pub pairs: Vec<(usize, usize)>,
    /// Lower-left, lower-right, upper-right, upper-left.
    pub corners: [usize; 4],
    pub tolerance: f64,
}

/// Pairs every non-corner boundary node of the square `[x0, x0 + delta]^2`
/// with its counterpart on the opposite edge.
pub fn pair_periodic_nodes(mesh: &Mesh, delta: f64) -> Result<PeriodicPairing> {
    let tol = PERIODIC_TOLERANCE * delta;
    let b = mesh.bbox;
    if (b.width() - delta).abs() > tol || (b.height() - delta).abs() > tol {
        return Err(Error::InvalidArgument(format!(
            "mesh spans {} x {}, expected a square of side {delta}",
            b.width(),
            b.height()
        )));
    }
    let (x0, y0) = (b.min[0], b.min[1]);
    let (x1, y1) = (x0 + delta, y0 + delta);
    let near = |a: f64, v: f64| (a - v).abs() <= tol;

    let mut corners = [usize::MAX; 4];
    let mut left = Vec::new();
    let mut right = Vec::new();
    let mut bottom = Vec::new();
    let mut top = Vec::new();
    for (i, &[x, y]) in mesh.nodes.iter().enumerate() {
        let (l, r, bo, t) = (near(x, x0), near(x, x1), near(y, y0), near(y, y1));
        match (l || r, bo || t) {
            (true, true) => {
                let slot = match (r, t) {
                    (false, false) => 0,
                    (true, false) => 1,
                    (true, true) => 2,
                    (false, true) => 3,
                };
                corners[slot] = i;
            }
            (true, false) => {
                if l { left.push(i) } else { right.push(i) }
            }
            (false, true) => {
                if bo { bottom.push(i) } else { top.push(i) }
            }
            (false, false) => {}
        }
    }
    if let Some(k) = corners.iter().position(|&c| c == usize::MAX) {
        let c = [[x0, y0], [x1, y0], [x1, y1], [x0, y1]][k];
        return Err(Error::PairingFailure { x: c[0], y: c[1] });
    }

    let mut pairs = Vec::with_capacity((left.len() + bottom.len()).max(right.len() + top.len()));
    match_edges(mesh, &mut left, &mut right, 1, tol, &mut pairs)?;
    match_edges(mesh, &mut bottom, &mut top, 0, tol, &mut pairs)?;
    Ok(PeriodicPairing {
        pairs,
        corners,
        tolerance: tol,
    })
}

fn match_edges(
    mesh: &Mesh,
    minus: &mut [usize],
    plus: &mut [usize],
    along: usize,
    tol: f64,
    pairs: &mut Vec<(usize, usize)>,
) -> Result<()> {
    let key = |i: &usize| mesh.nodes[*i][along];
    minus.sort_by(|a, b| key(a).total_cmp(&key(b)));
    plus.sort_by(|a, b| key(a).total_cmp(&key(b)));
    let (mut i, mut j) = (0, 0);
    while i < minus.len() || j < plus.len() {
        match (minus.get(i), plus.get(j)) {
            (Some(&p), Some(&q)) if (key(&p) - key(&q)).abs() <= tol => {
                pairs.push((p, q));
                i += 1;
                j += 1;
            }
            (Some(&p), Some(&q)) => {
                let lonely = if key(&p) < key(&q) { p } else { q };
                let [x, y] = mesh.nodes[lonely];
                return Err(Error::PairingFailure { x, y });
            }
            (Some(&n), None) | (None, Some(&n)) => {
                let [x, y] = mesh.nodes[n];
                return Err(Error::PairingFailure { x, y });
            }
            (None, None) => unreachable!(),
        }
    }
    Ok(())
}
