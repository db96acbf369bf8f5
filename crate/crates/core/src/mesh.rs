//! P1 triangulations of planar domains with tagged boundary edges.
//!
//! Text format (line oriented, `#` starts a comment, whitespace separated):
//!
//! ```text
//! v <x> <y>          node, 0-based in order of appearance
//! t <i> <j> <k>      counterclockwise triangle
//! e <i> <j> <tag>    boundary edge with its tag
//! ```
//!
//! Solution dumps append `u <i> <vx> <vy>` lines; [`read_mesh`] skips them.

use std::collections::{BTreeSet, HashMap};
use std::fmt::Write as _;

/// Gauss points of the 2-point rule on `[0, 1]`.
pub const EDGE_GAUSS: [f64; 2] = [
    0.5 - 0.5 / 1.732_050_807_568_877_2,
    0.5 + 0.5 / 1.732_050_807_568_877_2,
];

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum MeshError {
    #[error("line {line}: {message}")]
    Format { line: usize, message: String },
    #[error("element {element} is not counterclockwise (signed area {area:.3e})")]
    Orientation { element: usize, area: f64 },
    #[error("topology: {0}")]
    Topology(String),
    #[error("degenerate mesh parameters: {0}")]
    Degenerate(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoundaryEdge {
    /// Endpoints in the counterclockwise order of the owning element.
    pub nodes: [usize; 2],
    pub owner: usize,
    pub tag: String,
    pub length: f64,
    /// Outward unit normal.
    pub normal: [f64; 2],
}

impl BoundaryEdge {
    pub fn tangent(&self) -> [f64; 2] {
        // n rotated by +90°
        [-self.normal[1], self.normal[0]]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TagScheme {
    /// Tags `left`, `right`, `bottom`, `top`.
    Sides,
    /// Every boundary edge gets the same tag.
    Uniform(&'static str),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mesh {
    nodes: Vec<[f64; 2]>,
    elements: Vec<[usize; 3]>,
    edges: Vec<BoundaryEdge>,
    areas: Vec<f64>,
    /// Constant gradients of the three barycentric shape functions.
    grads: Vec<[[f64; 2]; 3]>,
}

fn signed_area(a: [f64; 2], b: [f64; 2], c: [f64; 2]) -> f64 {
    0.5 * ((b[0] - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (b[1] - a[1]))
}

/// Owning element and the directed edge in its CCW order.
type EdgeOwner = (usize, [usize; 2]);

impl Mesh {
    /// Builds a mesh and its geometry. Boundary edges may be given in either
    /// node order; they are reoriented to follow their owning element.
    pub fn new(
        nodes: Vec<[f64; 2]>,
        elements: Vec<[usize; 3]>,
        boundary: Vec<([usize; 2], String)>,
    ) -> Result<Mesh, MeshError> {
        if elements.is_empty() {
            return Err(MeshError::Topology("mesh has no elements".into()));
        }
        let n = nodes.len();
        for (e, tri) in elements.iter().enumerate() {
            if let Some(bad) = tri.iter().find(|i| **i >= n) {
                return Err(MeshError::Topology(format!(
                    "element {e} references node {bad}, but there are only {n} nodes"
                )));
            }
        }
        let mut referenced = vec![false; n];
        for tri in &elements {
            for &i in tri {
                referenced[i] = true;
            }
        }
        if let Some(i) = referenced.iter().position(|r| !r) {
            return Err(MeshError::Topology(format!("node {i} belongs to no element")));
        }

        let mut areas = Vec::with_capacity(elements.len());
        let mut grads = Vec::with_capacity(elements.len());
        for (e, tri) in elements.iter().enumerate() {
            let [a, b, c] = tri.map(|i| nodes[i]);
            let area = signed_area(a, b, c);
            if !(area > 0.0) {
                return Err(MeshError::Orientation { element: e, area });
            }
            let inv = 1.0 / (2.0 * area);
            grads.push([
                [(b[1] - c[1]) * inv, (c[0] - b[0]) * inv],
                [(c[1] - a[1]) * inv, (a[0] - c[0]) * inv],
                [(a[1] - b[1]) * inv, (b[0] - a[0]) * inv],
            ]);
            areas.push(area);
        }

        // edge key -> owners with the directed edge in CCW order
        let mut owners: HashMap<(usize, usize), Vec<EdgeOwner>> = HashMap::new();
        for (e, tri) in elements.iter().enumerate() {
            for k in 0..3 {
                let (i, j) = (tri[k], tri[(k + 1) % 3]);
                owners.entry((i.min(j), i.max(j))).or_default().push((e, [i, j]));
            }
        }
        for (key, own) in &owners {
            if own.len() > 2 {
                return Err(MeshError::Topology(format!(
                    "edge ({}, {}) is shared by {} elements",
                    key.0,
                    key.1,
                    own.len()
                )));
            }
        }

        let mut edges = Vec::with_capacity(boundary.len());
        let mut tagged = BTreeSet::new();
        for ([i, j], tag) in boundary {
            let key = (i.min(j), i.max(j));
            let own = owners.get(&key).ok_or_else(|| {
                MeshError::Topology(format!("boundary edge ({i}, {j}) is not an element edge"))
            })?;
            if own.len() != 1 {
                return Err(MeshError::Topology(format!(
                    "boundary edge ({i}, {j}) is interior (shared by two elements)"
                )));
            }
            if !tagged.insert(key) {
                return Err(MeshError::Topology(format!("boundary edge ({i}, {j}) listed twice")));
            }
            let (owner, [a, b]) = own[0];
            let (pa, pb) = (nodes[a], nodes[b]);
            let d = [pb[0] - pa[0], pb[1] - pa[1]];
            let length = d[0].hypot(d[1]);
            edges.push(BoundaryEdge {
                nodes: [a, b],
                owner,
                tag,
                length,
                normal: [d[1] / length, -d[0] / length],
            });
        }
        let mut untagged: Vec<_> = owners
            .iter()
            .filter(|(k, o)| o.len() == 1 && !tagged.contains(*k))
            .map(|(k, _)| *k)
            .collect();
        if !untagged.is_empty() {
            untagged.sort_unstable();
            return Err(MeshError::Topology(format!(
                "{} boundary edge(s) carry no tag, first ({}, {})",
                untagged.len(),
                untagged[0].0,
                untagged[0].1
            )));
        }

        Ok(Mesh { nodes, elements, edges, areas, grads })
    }

    /// Structured mesh of `[x0, x1] × [y0, y1]`, each cell split along the
    /// diagonal from its lower-left to its upper-right corner.
    pub fn rect(
        nx: usize,
        ny: usize,
        x_range: [f64; 2],
        y_range: [f64; 2],
        scheme: TagScheme,
    ) -> Result<Mesh, MeshError> {
        if nx == 0 || ny == 0 {
            return Err(MeshError::Degenerate(format!("nx = {nx}, ny = {ny}")));
        }
        if !(x_range[1] > x_range[0]) || !(y_range[1] > y_range[0]) {
            return Err(MeshError::Degenerate(format!(
                "empty range x {x_range:?}, y {y_range:?}"
            )));
        }
        let id = |i: usize, j: usize| j * (nx + 1) + i;
        let mut nodes = Vec::with_capacity((nx + 1) * (ny + 1));
        for j in 0..=ny {
            let y = y_range[0] + (y_range[1] - y_range[0]) * j as f64 / ny as f64;
            for i in 0..=nx {
                let x = x_range[0] + (x_range[1] - x_range[0]) * i as f64 / nx as f64;
                nodes.push([x, y]);
            }
        }
        let mut elements = Vec::with_capacity(2 * nx * ny);
        for j in 0..ny {
            for i in 0..nx {
                let (a, b, c, d) = (id(i, j), id(i + 1, j), id(i + 1, j + 1), id(i, j + 1));
                elements.push([a, b, c]);
                elements.push([a, c, d]);
            }
        }
        let tag = |side: &'static str| -> String {
            match scheme {
                TagScheme::Sides => side.to_string(),
                TagScheme::Uniform(t) => t.to_string(),
            }
        };
        let mut boundary = Vec::with_capacity(2 * (nx + ny));
        for i in 0..nx {
            boundary.push(([id(i, 0), id(i + 1, 0)], tag("bottom")));
        }
        for j in 0..ny {
            boundary.push(([id(nx, j), id(nx, j + 1)], tag("right")));
        }
        for i in (0..nx).rev() {
            boundary.push(([id(i + 1, ny), id(i, ny)], tag("top")));
        }
        for j in (0..ny).rev() {
            boundary.push(([id(0, j + 1), id(0, j)], tag("left")));
        }
        Mesh::new(nodes, elements, boundary)
    }

    /// The canonical square `(−½, ½)²` with side tags.
    pub fn unit_square(n: usize) -> Result<Mesh, MeshError> {
        Mesh::rect(n, n, [-0.5, 0.5], [-0.5, 0.5], TagScheme::Sides)
    }

    pub fn n_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn n_dofs(&self) -> usize {
        2 * self.nodes.len()
    }

    pub fn n_elements(&self) -> usize {
        self.elements.len()
    }

    pub fn nodes(&self) -> &[[f64; 2]] {
        &self.nodes
    }

    pub fn elements(&self) -> &[[usize; 3]] {
        &self.elements
    }

    pub fn boundary_edges(&self) -> &[BoundaryEdge] {
        &self.edges
    }

    pub fn area(&self, e: usize) -> f64 {
        self.areas[e]
    }

    pub fn areas(&self) -> &[f64] {
        &self.areas
    }

    /// Shape-function gradients of element `e`, one row per local node.
    pub fn shape_grads(&self, e: usize) -> &[[f64; 2]; 3] {
        &self.grads[e]
    }

    pub fn total_area(&self) -> f64 {
        self.areas.iter().sum()
    }

    pub fn centroid(&self, e: usize) -> [f64; 2] {
        let [a, b, c] = self.elements[e].map(|i| self.nodes[i]);
        [(a[0] + b[0] + c[0]) / 3.0, (a[1] + b[1] + c[1]) / 3.0]
    }

    /// Area-weighted mean of the node coordinates, `∫x / |Ω|`.
    pub fn barycenter(&self) -> [f64; 2] {
        let mut s = [0.0; 2];
        for e in 0..self.n_elements() {
            let c = self.centroid(e);
            s[0] += self.areas[e] * c[0];
            s[1] += self.areas[e] * c[1];
        }
        let a = self.total_area();
        [s[0] / a, s[1] / a]
    }

    /// Sorted distinct boundary tags.
    pub fn tags(&self) -> Vec<String> {
        let set: BTreeSet<&str> = self.edges.iter().map(|e| e.tag.as_str()).collect();
        set.into_iter().map(String::from).collect()
    }

    /// Points of the 2-point Gauss rule on a boundary edge with their weights.
    pub fn edge_quadrature(&self, edge: &BoundaryEdge) -> [([f64; 2], [f64; 2], f64); 2] {
        // (point, (φ_a, φ_b), weight)
        let (pa, pb) = (self.nodes[edge.nodes[0]], self.nodes[edge.nodes[1]]);
        EDGE_GAUSS.map(|s| {
            (
                [pa[0] + s * (pb[0] - pa[0]), pa[1] + s * (pb[1] - pa[1])],
                [1.0 - s, s],
                0.5 * edge.length,
            )
        })
    }

    /// Edge-midpoint rule on element `e` (exact for quadratics): points,
    /// barycentric values of the three shape functions, weight.
    pub fn element_quadrature(&self, e: usize) -> [([f64; 2], [f64; 3], f64); 3] {
        let [a, b, c] = self.elements[e].map(|i| self.nodes[i]);
        let w = self.areas[e] / 3.0;
        let mid = |p: [f64; 2], q: [f64; 2]| [0.5 * (p[0] + q[0]), 0.5 * (p[1] + q[1])];
        [
            (mid(a, b), [0.5, 0.5, 0.0], w),
            (mid(b, c), [0.0, 0.5, 0.5], w),
            (mid(c, a), [0.5, 0.0, 0.5], w),
        ]
    }

    /// Same mesh with nodes mapped by `x ↦ R x` (orientation preserving `R`).
    pub fn transformed(&self, r: &[[f64; 2]; 2]) -> Result<Mesh, MeshError> {
        let nodes = self
            .nodes
            .iter()
            .map(|p| [r[0][0] * p[0] + r[0][1] * p[1], r[1][0] * p[0] + r[1][1] * p[1]])
            .collect();
        let boundary = self.edges.iter().map(|e| (e.nodes, e.tag.clone())).collect();
        Mesh::new(nodes, self.elements.clone(), boundary)
    }
}

/// Serializes the mesh in the text format.
pub fn write_mesh(mesh: &Mesh) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        "# {} nodes, {} triangles, {} boundary edges",
        mesh.n_nodes(),
        mesh.n_elements(),
        mesh.boundary_edges().len()
    );
    for p in mesh.nodes() {
        let _ = writeln!(s, "v {:?} {:?}", p[0], p[1]);
    }
    for t in mesh.elements() {
        let _ = writeln!(s, "t {} {} {}", t[0], t[1], t[2]);
    }
    for e in mesh.boundary_edges() {
        let _ = writeln!(s, "e {} {} {}", e.nodes[0], e.nodes[1], e.tag);
    }
    s
}

/// Appends `u <i> <vx> <vy>` lines for an interleaved nodal field.
pub fn write_solution(mesh: &Mesh, values: &[f64]) -> String {
    let mut s = write_mesh(mesh);
    for (i, v) in values.chunks_exact(2).enumerate() {
        let _ = writeln!(s, "u {} {:?} {:?}", i, v[0], v[1]);
    }
    s
}

fn parse_num<T: std::str::FromStr>(tok: Option<&str>, line: usize, what: &str) -> Result<T, MeshError> {
    let tok = tok.ok_or_else(|| MeshError::Format { line, message: format!("missing {what}") })?;
    tok.parse().map_err(|_| MeshError::Format {
        line,
        message: format!("cannot parse {what} from `{tok}`"),
    })
}

struct Parsed {
    nodes: Vec<[f64; 2]>,
    elements: Vec<[usize; 3]>,
    boundary: Vec<([usize; 2], String)>,
    solution: Vec<(usize, [f64; 2])>,
}

fn parse(text: &str) -> Result<Parsed, MeshError> {
    let mut p = Parsed { nodes: vec![], elements: vec![], boundary: vec![], solution: vec![] };
    let mut element_lines = vec![];
    let mut edge_lines = vec![];
    for (k, raw) in text.lines().enumerate() {
        let line = k + 1;
        let body = raw.split('#').next().unwrap_or("");
        let mut toks = body.split_whitespace();
        let Some(kind) = toks.next() else { continue };
        match kind {
            "v" => {
                let x = parse_num(toks.next(), line, "x")?;
                let y = parse_num(toks.next(), line, "y")?;
                p.nodes.push([x, y]);
            }
            "t" => {
                let tri = [
                    parse_num(toks.next(), line, "node index")?,
                    parse_num(toks.next(), line, "node index")?,
                    parse_num(toks.next(), line, "node index")?,
                ];
                p.elements.push(tri);
                element_lines.push(line);
            }
            "e" => {
                let a = parse_num(toks.next(), line, "node index")?;
                let b = parse_num(toks.next(), line, "node index")?;
                let tag: String = toks
                    .next()
                    .ok_or_else(|| MeshError::Format { line, message: "missing tag".into() })?
                    .to_string();
                p.boundary.push(([a, b], tag));
                edge_lines.push(line);
            }
            "u" => {
                let i = parse_num(toks.next(), line, "node index")?;
                let vx = parse_num(toks.next(), line, "vx")?;
                let vy = parse_num(toks.next(), line, "vy")?;
                p.solution.push((i, [vx, vy]));
            }
            other => {
                return Err(MeshError::Format { line, message: format!("unknown record `{other}`") })
            }
        }
        if let Some(extra) = toks.next() {
            return Err(MeshError::Format { line, message: format!("trailing token `{extra}`") });
        }
    }
    let n = p.nodes.len();
    for (tri, line) in p.elements.iter().zip(&element_lines) {
        if let Some(bad) = tri.iter().find(|i| **i >= n) {
            return Err(MeshError::Format {
                line: *line,
                message: format!("node index {bad} out of range ({n} nodes)"),
            });
        }
    }
    for ((e, _), line) in p.boundary.iter().zip(&edge_lines) {
        if let Some(bad) = e.iter().find(|i| **i >= n) {
            return Err(MeshError::Format {
                line: *line,
                message: format!("node index {bad} out of range ({n} nodes)"),
            });
        }
    }
    Ok(p)
}

/// Parses the text format. Clockwise triangles are an error, never repaired.
pub fn read_mesh(text: &str) -> Result<Mesh, MeshError> {
    let p = parse(text)?;
    Mesh::new(p.nodes, p.elements, p.boundary)
}

/// Parses a solution dump: the mesh plus its `u` lines as interleaved values.
pub fn read_solution(text: &str) -> Result<(Mesh, Vec<f64>), MeshError> {
    let p = parse(text)?;
    let n = p.nodes.len();
    let mut values = vec![0.0; 2 * n];
    let mut seen = vec![false; n];
    for (i, v) in &p.solution {
        if *i >= n {
            return Err(MeshError::Topology(format!("solution line for missing node {i}")));
        }
        values[2 * i] = v[0];
        values[2 * i + 1] = v[1];
        seen[*i] = true;
    }
    if let Some(i) = seen.iter().position(|s| !s) {
        return Err(MeshError::Topology(format!("no solution value for node {i}")));
    }
    Ok((Mesh::new(p.nodes, p.elements, p.boundary)?, values))
}

#[cfg(test)]
mod tests {
    use super::*;

    const SQUARE: &str = "\
# unit square
v -0.5 -0.5
v 0.5 -0.5
v 0.5 0.5
v -0.5 0.5
t 0 1 2
t 0 2 3
e 0 1 bottom
e 1 2 right
e 2 3 top
e 3 0 left
";

    #[test]
    fn rect_counts() {
        let m = Mesh::unit_square(1).unwrap();
        assert_eq!((m.n_nodes(), m.n_elements(), m.boundary_edges().len()), (4, 2, 4));
        assert!((m.total_area() - 1.0).abs() < 1e-15);
        let m = Mesh::rect(2, 1, [-0.5, 0.5], [-0.5, 0.5], TagScheme::Sides).unwrap();
        assert_eq!((m.n_nodes(), m.n_elements(), m.boundary_edges().len()), (6, 4, 6));
        assert_eq!(m.tags(), vec!["bottom", "left", "right", "top"]);
    }

    #[test]
    fn rect_rejects_degenerate() {
        assert!(matches!(
            Mesh::rect(0, 3, [0.0, 1.0], [0.0, 1.0], TagScheme::Sides),
            Err(MeshError::Degenerate(_))
        ));
        assert!(matches!(
            Mesh::rect(2, 2, [1.0, 1.0], [0.0, 1.0], TagScheme::Sides),
            Err(MeshError::Degenerate(_))
        ));
    }

    #[test]
    fn geometry_invariants() {
        for (nx, ny) in [(1, 1), (3, 2), (8, 8), (5, 11)] {
            let m = Mesh::rect(nx, ny, [-1.0, 2.0], [0.5, 1.25], TagScheme::Sides).unwrap();
            let area = 3.0 * 0.75;
            assert!((m.total_area() - area).abs() <= 1e-12 * area);
            assert!(m.areas().iter().all(|a| *a > 0.0));

            let mut closure = [0.0; 2];
            let mut nx_moment = [[0.0; 2]; 2];
            for e in m.boundary_edges() {
                assert!((e.normal[0].hypot(e.normal[1]) - 1.0).abs() < 1e-15);
                // normal points away from the owner's centroid
                let c = m.centroid(e.owner);
                let p = m.nodes()[e.nodes[0]];
                assert!((p[0] - c[0]) * e.normal[0] + (p[1] - c[1]) * e.normal[1] > 0.0);
                closure[0] += e.length * e.normal[0];
                closure[1] += e.length * e.normal[1];
                for (x, _, w) in m.edge_quadrature(e) {
                    for i in 0..2 {
                        for j in 0..2 {
                            nx_moment[i][j] += w * e.normal[i] * x[j];
                        }
                    }
                }
            }
            assert!(closure[0].abs() < 1e-13 && closure[1].abs() < 1e-13);
            // ∫ n⊗x = |Ω| I
            for i in 0..2 {
                for j in 0..2 {
                    let expected = if i == j { area } else { 0.0 };
                    assert!((nx_moment[i][j] - expected).abs() <= 1e-12 * area);
                }
            }
        }
    }

    #[test]
    fn shape_gradients_reproduce_linear_fields() {
        let m = Mesh::rect(4, 3, [-0.3, 0.9], [0.0, 1.0], TagScheme::Sides).unwrap();
        let a = [[0.7, -1.3], [2.1, 0.4]];
        for (e, tri) in m.elements().iter().enumerate() {
            let g = m.shape_grads(e);
            let mut grad = [[0.0; 2]; 2];
            for (k, &n) in tri.iter().enumerate() {
                let x = m.nodes()[n];
                let v = [a[0][0] * x[0] + a[0][1] * x[1] + 5.0, a[1][0] * x[0] + a[1][1] * x[1] - 2.0];
                for i in 0..2 {
                    for j in 0..2 {
                        grad[i][j] += v[i] * g[k][j];
                    }
                }
            }
            for i in 0..2 {
                for j in 0..2 {
                    assert!((grad[i][j] - a[i][j]).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn parses_square() {
        let m = read_mesh(SQUARE).unwrap();
        assert_eq!(m.n_elements(), 2);
        assert!((m.total_area() - 1.0).abs() < 1e-15);
        assert_eq!(m.tags().len(), 4);
    }

    #[test]
    fn edge_given_reversed_is_reoriented() {
        let text = SQUARE.replace("e 1 2 right", "e 2 1 right");
        let m = read_mesh(&text).unwrap();
        let right = m.boundary_edges().iter().find(|e| e.tag == "right").unwrap();
        assert_eq!(right.nodes, [1, 2]);
        assert_eq!(right.normal, [1.0, 0.0]);
    }

    #[test]
    fn clockwise_triangle_is_an_error() {
        let text = SQUARE.replace("t 0 2 3", "t 0 3 2");
        assert!(matches!(read_mesh(&text), Err(MeshError::Orientation { element: 1, .. })));
    }

    #[test]
    fn dangling_index_is_a_format_error() {
        let text = SQUARE.replace("t 0 2 3", "t 0 2 7");
        assert!(matches!(read_mesh(&text), Err(MeshError::Format { line: 7, .. })));
    }

    #[test]
    fn interior_or_missing_edges_are_topology_errors() {
        let text = format!("{SQUARE}e 0 2 diag\n");
        assert!(matches!(read_mesh(&text), Err(MeshError::Topology(_))));
        let text = SQUARE.replace("e 3 0 left\n", "");
        assert!(matches!(read_mesh(&text), Err(MeshError::Topology(_))));
    }

    #[test]
    fn garbage_is_a_format_error() {
        assert!(matches!(read_mesh("v 1.0 abc\n"), Err(MeshError::Format { line: 1, .. })));
        assert!(matches!(read_mesh("q 1 2\n"), Err(MeshError::Format { .. })));
    }

    #[test]
    fn round_trip() {
        let m = Mesh::unit_square(4).unwrap();
        let again = read_mesh(&write_mesh(&m)).unwrap();
        assert_eq!(again, m);
        let values: Vec<f64> = (0..m.n_dofs()).map(|i| (i as f64).sin() / 7.0).collect();
        let (m2, v2) = read_solution(&write_solution(&m, &values)).unwrap();
        assert_eq!(m2, m);
        assert_eq!(v2, values);
    }
}
