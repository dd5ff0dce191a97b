//! Lattice geometry, link indexing, and group-level operations on gauge
//! field configurations.
//!
//! All covariance-matrix indexing in the crate is derived from the canonical
//! ordering fixed here: vertices are row-major with the first coordinate
//! fastest, and each vertex contributes its horizontal link before its
//! vertical link.

use crate::error::Error;

/// Direction of a link emanating from a vertex.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Direction {
    Horizontal,
    Vertical,
}

/// A vertex of the periodic L×L lattice, stored in canonical (wrapped) form.
pub type Vertex = (usize, usize);

/// A link addressed by its base vertex and direction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct LinkId {
    pub vertex: Vertex,
    pub dir: Direction,
}

/// Geometry of the periodic lattice: linear extent `l` and gauge group
/// order `n`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LatticeGeom {
    pub l: usize,
    pub n: usize,
}

impl LatticeGeom {
    pub fn new(l: usize, n: usize) -> Result<Self, Error> {
        if l == 0 {
            return Err(Error::Config("lattice.L must be positive".into()));
        }
        if n < 2 {
            return Err(Error::Config("lattice.N must be at least 2".into()));
        }
        Ok(LatticeGeom { l, n })
    }

    pub fn n_vertices(&self) -> usize {
        self.l * self.l
    }

    pub fn n_links(&self) -> usize {
        2 * self.l * self.l
    }

    pub fn n_plaquettes(&self) -> usize {
        self.l * self.l
    }

    /// Wrap arbitrary integer coordinates onto the torus.
    pub fn vertex(&self, x: i64, y: i64) -> Vertex {
        let l = self.l as i64;
        (x.rem_euclid(l) as usize, y.rem_euclid(l) as usize)
    }

    /// Canonical vertex ordinal: row-major, first coordinate fastest.
    pub fn vertex_index(&self, v: Vertex) -> usize {
        let (x, y) = self.vertex(v.0 as i64, v.1 as i64);
        y * self.l + x
    }

    /// Canonical link ordinal in [0, 2L²): horizontal before vertical at
    /// each vertex.
    pub fn link_index(&self, link: LinkId) -> usize {
        let base = 2 * self.vertex_index(link.vertex);
        match link.dir {
            Direction::Horizontal => base,
            Direction::Vertical => base + 1,
        }
    }

    /// Inverse of [`link_index`](Self::link_index).
    pub fn link_from_index(&self, idx: usize) -> LinkId {
        let vidx = idx / 2;
        let dir = if idx % 2 == 0 {
            Direction::Horizontal
        } else {
            Direction::Vertical
        };
        LinkId {
            vertex: (vidx % self.l, vidx / self.l),
            dir,
        }
    }

    /// Iterator over all vertices in canonical order.
    pub fn vertices(&self) -> impl Iterator<Item = Vertex> + '_ {
        let l = self.l;
        (0..l * l).map(move |i| (i % l, i / l))
    }

    /// Iterator over all links in canonical order.
    pub fn links(&self) -> impl Iterator<Item = LinkId> + '_ {
        (0..self.n_links()).map(move |i| self.link_from_index(i))
    }
}

/// Staggering sign (−1)^(x₁+x₂); the origin is even.
pub fn staggering_sign(v: Vertex) -> i32 {
    if (v.0 + v.1) % 2 == 0 {
        1
    } else {
        -1
    }
}

/// A gauge field configuration: one Z_N element per link, in canonical
/// link order.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct GaugeConfig {
    pub q: Vec<u8>,
    pub n: u8,
}

impl GaugeConfig {
    /// The all-zero configuration (electric vacuum on every link).
    pub fn zeros(geom: &LatticeGeom) -> Self {
        GaugeConfig {
            q: vec![0; geom.n_links()],
            n: geom.n as u8,
        }
    }

    pub fn from_values(geom: &LatticeGeom, values: &[u8]) -> Result<Self, Error> {
        if values.len() != geom.n_links() {
            return Err(Error::Config(format!(
                "gauge config has {} entries, lattice has {} links",
                values.len(),
                geom.n_links()
            )));
        }
        let n = geom.n as u8;
        Ok(GaugeConfig {
            q: values.iter().map(|&v| v % n).collect(),
            n,
        })
    }

    pub fn q_at(&self, geom: &LatticeGeom, link: LinkId) -> u8 {
        self.q[geom.link_index(link)]
    }

    /// Shift the element on one link by `delta` (mod N).
    pub fn shift(&mut self, idx: usize, delta: i32) {
        let n = self.n as i32;
        self.q[idx] = (self.q[idx] as i32 + delta).rem_euclid(n) as u8;
    }

    /// Pack the configuration into a base-N integer, for histogramming and
    /// exhaustive enumeration.
    pub fn code(&self) -> u64 {
        let mut c = 0u64;
        for &q in self.q.iter().rev() {
            c = c * self.n as u64 + q as u64;
        }
        c
    }

    pub fn from_code(geom: &LatticeGeom, mut code: u64) -> Self {
        let n = geom.n as u64;
        let q = (0..geom.n_links())
            .map(|_| {
                let d = (code % n) as u8;
                code /= n;
                d
            })
            .collect();
        GaugeConfig { q, n: geom.n as u8 }
    }
}

/// The four links of the plaquette whose lower-left corner is `p`, with the
/// orientation signs used in the plaquette (Wilson loop) product: +1 where
/// traversal follows the link's canonical direction, −1 against it.
pub fn plaquette_links(geom: &LatticeGeom, p: Vertex) -> [(LinkId, i8); 4] {
    let (x, y) = (p.0 as i64, p.1 as i64);
    [
        (
            LinkId {
                vertex: geom.vertex(x, y),
                dir: Direction::Horizontal,
            },
            1,
        ),
        (
            LinkId {
                vertex: geom.vertex(x + 1, y),
                dir: Direction::Vertical,
            },
            1,
        ),
        (
            LinkId {
                vertex: geom.vertex(x, y + 1),
                dir: Direction::Horizontal,
            },
            -1,
        ),
        (
            LinkId {
                vertex: geom.vertex(x, y),
                dir: Direction::Vertical,
            },
            -1,
        ),
    ]
}

/// Apply the gauge transformation generated at vertex `v`: the two outgoing
/// links gain one unit, the two incoming links lose one, mod N.
pub fn gauge_transform(geom: &LatticeGeom, config: &GaugeConfig, v: Vertex) -> GaugeConfig {
    let (x, y) = (v.0 as i64, v.1 as i64);
    let mut out = config.clone();
    let touched = [
        (
            LinkId {
                vertex: geom.vertex(x, y),
                dir: Direction::Horizontal,
            },
            1,
        ),
        (
            LinkId {
                vertex: geom.vertex(x, y),
                dir: Direction::Vertical,
            },
            1,
        ),
        (
            LinkId {
                vertex: geom.vertex(x - 1, y),
                dir: Direction::Horizontal,
            },
            -1,
        ),
        (
            LinkId {
                vertex: geom.vertex(x, y - 1),
                dir: Direction::Vertical,
            },
            -1,
        ),
    ];
    for (link, delta) in touched {
        out.shift(geom.link_index(link), delta);
    }
    out
}

/// Closed rectangular path of extent `r1` horizontally and `r2` vertically,
/// starting from `origin`. Signs mark traversal with (+) or against (−) the
/// canonical link orientation; the path has 2(r1+r2) links.
pub fn wilson_path(
    geom: &LatticeGeom,
    origin: Vertex,
    r1: usize,
    r2: usize,
) -> Result<Vec<(LinkId, i8)>, Error> {
    if r1 < 1 || r2 < 1 || r1 > geom.l || r2 > geom.l {
        return Err(Error::Config(format!(
            "Wilson loop extent ({r1},{r2}) outside [1, {}]",
            geom.l
        )));
    }
    let (ox, oy) = (origin.0 as i64, origin.1 as i64);
    let mut path = Vec::with_capacity(2 * (r1 + r2));
    // Counterclockwise: bottom edge rightwards, right edge upwards,
    // top edge leftwards, left edge downwards.
    for i in 0..r1 {
        path.push((
            LinkId {
                vertex: geom.vertex(ox + i as i64, oy),
                dir: Direction::Horizontal,
            },
            1,
        ));
    }
    for j in 0..r2 {
        path.push((
            LinkId {
                vertex: geom.vertex(ox + r1 as i64, oy + j as i64),
                dir: Direction::Vertical,
            },
            1,
        ));
    }
    for i in (0..r1).rev() {
        path.push((
            LinkId {
                vertex: geom.vertex(ox + i as i64, oy + r2 as i64),
                dir: Direction::Horizontal,
            },
            -1,
        ));
    }
    for j in (0..r2).rev() {
        path.push((
            LinkId {
                vertex: geom.vertex(ox, oy + j as i64),
                dir: Direction::Vertical,
            },
            -1,
        ));
    }
    Ok(path)
}
