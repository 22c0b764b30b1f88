//! Schreier graphs of finitely generated subgroups of G̃ on the orbit of a
//! point, with the tree-and-rays analysis of 2-prechain actions.
//!
//! For a 2-prechain `(f, g)` with `supp(f) = (a, c)`, `supp(g) = (b, d)` and
//! `g⁻¹(c) < f(b)`, the orbit of `b` restricted to `[b, c]` is a binary tree:
//! `g⁻¹` sends `[b, c]` onto `A = [b, g⁻¹(c)]` and `f` onto `B = [f(b), c]`.
//! Every orbit point outside `[b, c]` lies on an `f`-ray in `(a, b)` or a
//! `g`-ray in `(c, d)` hanging off a tree vertex.

use std::collections::{HashMap, HashSet, VecDeque};
use std::fmt::Write as _;
use std::io;
use std::path::Path;

use indexmap::IndexSet;
use num_bigint::BigInt;
use num_traits::Zero;
use serde::Serialize;
use thiserror::Error;

use crate::exactnum::{qn_canonical_key, ExtendedPoint, PointKey, Rational};
use crate::piecewise::{pm_inverse, PiecewiseProjectiveMap};

/// Guard on `n(x)`, `m(x)` iterations.
pub const ITERATION_CAP: u64 = 1_000_000;

#[derive(Debug, Error)]
pub enum SchreierError {
    #[error("structure check {check} fails at {vertex}: {detail}")]
    StructureViolation {
        check: u8,
        vertex: ExtendedPoint,
        detail: String,
    },
    #[error("precondition violated: {0}")]
    PreconditionViolated(String),
    #[error("{0} is not on a detected ray")]
    NotARay(ExtendedPoint),
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize)]
pub enum Region {
    /// `[b, g⁻¹(c)]`
    A,
    /// `[f(b), c]`
    B,
    /// `(g⁻¹(c), f(b))`
    C,
    /// Outside `(a, d)`.
    TreeOther,
    /// `index` steps of `generator` away from the tree.
    Ray { generator: usize, index: u64 },
}

/// The data of a 2-prechain needed to classify orbit points.
#[derive(Clone, Debug)]
pub struct PrechainLayout {
    pub f_index: usize,
    pub g_index: usize,
    pub f: PiecewiseProjectiveMap,
    pub g: PiecewiseProjectiveMap,
    pub f_inv: PiecewiseProjectiveMap,
    pub g_inv: PiecewiseProjectiveMap,
    pub a: ExtendedPoint,
    pub b: ExtendedPoint,
    pub c: ExtendedPoint,
    pub d: ExtendedPoint,
    pub g_inv_c: ExtendedPoint,
    pub f_b: ExtendedPoint,
}

fn support_containing(h: &PiecewiseProjectiveMap, x: &ExtendedPoint) -> Option<(ExtendedPoint, ExtendedPoint)> {
    h.support_intervals().into_iter().find(|(lo, hi)| {
        let above = lo.is_infinity() || lo < x;
        let below = hi.is_infinity() || x < hi;
        above && below
    })
}

impl PrechainLayout {
    /// Derives `a` and `d` and checks `g(b) = b`, `f(c) = c`,
    /// `(b, c] ⊆ supp(g)`, `[b, c) ⊆ supp(f)`, and that both maps push
    /// their supports upward.
    pub fn new(
        f: &PiecewiseProjectiveMap,
        g: &PiecewiseProjectiveMap,
        b: &ExtendedPoint,
        c: &ExtendedPoint,
    ) -> Result<Self, SchreierError> {
        let bad = |m: &str| Err(SchreierError::PreconditionViolated(m.to_string()));
        if g.apply(b) != *b || f.apply(c) != *c || b >= c {
            return bad("need g(b) = b, f(c) = c and b < c");
        }
        let Some((a, fc)) = support_containing(f, b) else {
            return bad("b is not in supp(f)");
        };
        let Some((gb, d)) = support_containing(g, c) else {
            return bad("c is not in supp(g)");
        };
        if fc != *c || gb != *b || a.is_infinity() || d.is_infinity() {
            return bad("supports are not (a, c) and (b, d) with finite a, d");
        }
        let mid = b.clone();
        if f.apply(&mid) <= mid || g.apply(c) <= *c {
            return bad("f and g must exceed the identity on their supports");
        }
        let (f_inv, g_inv) = (pm_inverse(f), pm_inverse(g));
        let g_inv_c = g_inv.apply(c);
        let f_b = f.apply(b);
        if g_inv_c >= f_b {
            return bad("g⁻¹(c) < f(b) fails");
        }
        Ok(PrechainLayout {
            f_index: 0,
            g_index: 1,
            f: f.clone(),
            g: g.clone(),
            f_inv,
            g_inv,
            a,
            b: b.clone(),
            c: c.clone(),
            d,
            g_inv_c,
            f_b,
        })
    }

    pub fn in_tree_interval(&self, x: &ExtendedPoint) -> bool {
        self.b <= *x && *x <= self.c
    }

    /// `n(x) = min{n : fⁿ(x) ∈ [b, c]}` for `x ∈ (a, b)`.
    pub fn n_of(&self, x: &ExtendedPoint) -> Result<u64, SchreierError> {
        self.steps_to_tree(x, &self.f)
    }

    /// `m(x) = min{m : g⁻ᵐ(x) ∈ [b, c]}` for `x ∈ (c, d)`.
    pub fn m_of(&self, x: &ExtendedPoint) -> Result<u64, SchreierError> {
        self.steps_to_tree(x, &self.g_inv)
    }

    fn steps_to_tree(&self, x: &ExtendedPoint, h: &PiecewiseProjectiveMap) -> Result<u64, SchreierError> {
        let mut y = x.clone();
        for n in 0..=ITERATION_CAP {
            if self.in_tree_interval(&y) {
                return Ok(n);
            }
            y = h.apply(&y);
        }
        Err(SchreierError::PreconditionViolated(format!(
            "no return to [b, c] from {x} within {ITERATION_CAP} steps"
        )))
    }

    pub fn classify(&self, x: &ExtendedPoint) -> Result<Region, SchreierError> {
        if self.in_tree_interval(x) {
            return Ok(if *x <= self.g_inv_c {
                Region::A
            } else if *x >= self.f_b {
                Region::B
            } else {
                Region::C
            });
        }
        if self.a < *x && *x < self.b {
            return Ok(Region::Ray {
                generator: self.f_index,
                index: self.n_of(x)?,
            });
        }
        if self.c < *x && *x < self.d {
            return Ok(Region::Ray {
                generator: self.g_index,
                index: self.m_of(x)?,
            });
        }
        Ok(Region::TreeOther)
    }
}

/// Labeled Schreier graph explored breadth-first from a root.
#[derive(Clone, Debug)]
pub struct OrbitGraph {
    vertices: IndexSet<PointKey>,
    generators: Vec<PiecewiseProjectiveMap>,
    inverses: Vec<PiecewiseProjectiveMap>,
    labels: Vec<String>,
    /// `forward[i][v]` is the vertex `generators[i](v)`.
    forward: Vec<Vec<Option<usize>>>,
    /// `backward[i][v]` is the vertex `generators[i]⁻¹(v)`.
    backward: Vec<Vec<Option<usize>>>,
    depth: Vec<u32>,
    frontier: Vec<bool>,
    truncated: bool,
    regions: Option<Vec<Region>>,
    layout: Option<PrechainLayout>,
}

fn default_labels(n: usize) -> Vec<String> {
    if n == 2 {
        vec!["f".into(), "g".into()]
    } else {
        (0..n).map(|i| format!("h{i}")).collect()
    }
}

pub fn build_orbit_graph(gens: &[PiecewiseProjectiveMap], root: &ExtendedPoint, max_vertices: usize) -> OrbitGraph {
    build_orbit_graph_labeled(gens, &default_labels(gens.len()), root, max_vertices)
}

pub fn build_orbit_graph_labeled(
    gens: &[PiecewiseProjectiveMap],
    labels: &[String],
    root: &ExtendedPoint,
    max_vertices: usize,
) -> OrbitGraph {
    assert!(max_vertices >= 1, "vertex cap must be positive");
    assert_eq!(gens.len(), labels.len());
    let inverses: Vec<_> = gens.iter().map(pm_inverse).collect();
    let mut graph = OrbitGraph {
        vertices: IndexSet::new(),
        generators: gens.to_vec(),
        inverses,
        labels: labels.to_vec(),
        forward: vec![Vec::new(); gens.len()],
        backward: vec![Vec::new(); gens.len()],
        depth: Vec::new(),
        frontier: Vec::new(),
        truncated: false,
        regions: None,
        layout: None,
    };
    graph.push_vertex(qn_canonical_key(root), 0);
    let mut queue = VecDeque::from([0usize]);
    while let Some(v) = queue.pop_front() {
        let x = graph.point(v).clone();
        for i in 0..gens.len() {
            for inverse in [false, true] {
                let known = if inverse { graph.backward[i][v] } else { graph.forward[i][v] };
                if known.is_some() {
                    continue;
                }
                let y = if inverse {
                    graph.inverses[i].apply(&x)
                } else {
                    graph.generators[i].apply(&x)
                };
                let key = qn_canonical_key(&y);
                let w = match graph.vertices.get_index_of(&key) {
                    Some(w) => w,
                    None if graph.vertices.len() < max_vertices => {
                        let w = graph.push_vertex(key, graph.depth[v] + 1);
                        queue.push_back(w);
                        w
                    }
                    None => {
                        graph.frontier[v] = true;
                        graph.truncated = true;
                        continue;
                    }
                };
                if inverse {
                    graph.backward[i][v] = Some(w);
                    graph.forward[i][w] = Some(v);
                } else {
                    graph.forward[i][v] = Some(w);
                    graph.backward[i][w] = Some(v);
                }
            }
        }
    }
    graph
}

impl OrbitGraph {
    fn push_vertex(&mut self, key: PointKey, depth: u32) -> usize {
        let (idx, _) = self.vertices.insert_full(key);
        for e in self.forward.iter_mut().chain(self.backward.iter_mut()) {
            e.push(None);
        }
        self.depth.push(depth);
        self.frontier.push(false);
        idx
    }

    pub fn len(&self) -> usize {
        self.vertices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vertices.is_empty()
    }

    pub fn root(&self) -> &ExtendedPoint {
        self.point(0)
    }

    pub fn point(&self, v: usize) -> &ExtendedPoint {
        self.vertices[v].point()
    }

    pub fn key(&self, v: usize) -> &PointKey {
        &self.vertices[v]
    }

    pub fn index_of(&self, x: &ExtendedPoint) -> Option<usize> {
        self.vertices.get_index_of(&qn_canonical_key(x))
    }

    pub fn points(&self) -> impl Iterator<Item = &ExtendedPoint> {
        self.vertices.iter().map(PointKey::point)
    }

    pub fn generators(&self) -> &[PiecewiseProjectiveMap] {
        &self.generators
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn is_truncated(&self) -> bool {
        self.truncated
    }

    pub fn is_frontier(&self, v: usize) -> bool {
        self.frontier[v]
    }

    pub fn depth(&self, v: usize) -> u32 {
        self.depth[v]
    }

    /// Image of vertex `v` under generator `i` (or its inverse), if explored.
    pub fn neighbor(&self, v: usize, i: usize, inverse: bool) -> Option<usize> {
        if inverse {
            self.backward[i][v]
        } else {
            self.forward[i][v]
        }
    }

    pub fn region(&self, v: usize) -> Option<Region> {
        self.regions.as_ref().map(|r| r[v])
    }

    pub fn layout(&self) -> Option<&PrechainLayout> {
        self.layout.as_ref()
    }

    /// Tags every vertex with its region for the given 2-prechain, whose
    /// maps must be among the generators.
    pub fn attach_prechain(&mut self, layout: &PrechainLayout) -> Result<(), SchreierError> {
        let find = |h: &PiecewiseProjectiveMap| self.generators.iter().position(|x| x == h);
        let (Some(fi), Some(gi)) = (find(&layout.f), find(&layout.g)) else {
            return Err(SchreierError::PreconditionViolated(
                "f and g must be generators of the graph".into(),
            ));
        };
        let mut layout = layout.clone();
        layout.f_index = fi;
        layout.g_index = gi;
        let regions = (0..self.len())
            .map(|v| layout.classify(self.point(v)))
            .collect::<Result<Vec<_>, _>>()?;
        self.regions = Some(regions);
        self.layout = Some(layout);
        Ok(())
    }

    /// Vertex counts in `[b, c]` by BFS depth.
    pub fn tree_depth_profile(&self) -> Vec<usize> {
        let Some(regions) = &self.regions else { return Vec::new() };
        let mut profile = Vec::new();
        for (v, r) in regions.iter().enumerate() {
            if matches!(r, Region::A | Region::B | Region::C) {
                let d = self.depth[v] as usize;
                if profile.len() <= d {
                    profile.resize(d + 1, 0);
                }
                profile[d] += 1;
            }
        }
        profile
    }

    /// Vertex indices sorted by canonical key.
    fn sorted_vertices(&self) -> Vec<usize> {
        let mut order: Vec<usize> = (0..self.len()).collect();
        order.sort_by(|&x, &y| self.vertices[x].cmp(&self.vertices[y]));
        order
    }

    pub fn to_dot(&self) -> String {
        let order = self.sorted_vertices();
        let mut pos = vec![0usize; self.len()];
        for (p, &v) in order.iter().enumerate() {
            pos[v] = p;
        }
        let mut out = String::from("digraph schreier {\n  node [shape=circle, style=filled];\n");
        for &v in &order {
            let color = match self.region(v) {
                Some(Region::A) => "lightblue",
                Some(Region::B) => "lightsalmon",
                Some(Region::C) => "red",
                Some(Region::Ray { .. }) => "lightgray",
                Some(Region::TreeOther) => "yellow",
                None => "white",
            };
            let shape = if v == 0 { ", shape=doublecircle" } else { "" };
            let _ = writeln!(
                out,
                "  v{} [label=\"{}\", fillcolor={}{}];",
                pos[v],
                self.point(v),
                color,
                shape
            );
        }
        for &v in &order {
            for (i, label) in self.labels.iter().enumerate() {
                if let Some(w) = self.forward[i][v] {
                    let _ = writeln!(out, "  v{} -> v{} [label=\"{}\"];", pos[v], pos[w], label);
                }
            }
        }
        out.push_str("}\n");
        out
    }

    pub fn export_dot(&self, path: &Path) -> Result<(), SchreierError> {
        std::fs::write(path, self.to_dot())?;
        Ok(())
    }

    /// `src_key,label,dst_key` rows for every explored forward edge.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("src_key,label,dst_key\n");
        for v in self.sorted_vertices() {
            for (i, label) in self.labels.iter().enumerate() {
                if let Some(w) = self.forward[i][v] {
                    let _ = writeln!(out, "{},{},{}", self.key(v), label, self.key(w));
                }
            }
        }
        out
    }

    pub fn export_csv(&self, path: &Path) -> Result<(), SchreierError> {
        std::fs::write(path, self.to_csv())?;
        Ok(())
    }
}

#[derive(Clone, Debug, Default, Serialize)]
pub struct TreeReport {
    pub vertices: usize,
    pub tree_vertices: usize,
    pub region_a: usize,
    pub region_b: usize,
    pub ray_vertices: usize,
    pub frontier_skipped: usize,
    pub truncated: bool,
    /// tree vertex counts by depth
    pub depth_profile: Vec<usize>,
}

fn violation(check: u8, vertex: &ExtendedPoint, detail: impl Into<String>) -> SchreierError {
    SchreierError::StructureViolation {
        check,
        vertex: vertex.clone(),
        detail: detail.into(),
    }
}

/// Runs the five structural checks on the explored part of the graph; rooted
/// at `b` with `f`, `g` among its generators.
pub fn verify_tree_structure(
    graph: &mut OrbitGraph,
    f: &PiecewiseProjectiveMap,
    g: &PiecewiseProjectiveMap,
    b: &ExtendedPoint,
    c: &ExtendedPoint,
) -> Result<TreeReport, SchreierError> {
    if graph.root() != b {
        return Err(SchreierError::PreconditionViolated("graph must be rooted at b".into()));
    }
    let layout = PrechainLayout::new(f, g, b, c)?;
    graph.attach_prechain(&layout)?;
    let layout = graph.layout.clone().unwrap();
    let regions = graph.regions.clone().unwrap();
    let (fi, gi) = (layout.f_index, layout.g_index);
    let in_tree = |v: usize| matches!(regions[v], Region::A | Region::B | Region::C);

    // (4) Γ̃ ∩ C = ∅ and c ∉ Γ̃
    for (v, region) in regions.iter().enumerate() {
        if *region == Region::C {
            return Err(violation(4, graph.point(v), "orbit point inside C"));
        }
    }
    if graph.index_of(c).is_some() {
        return Err(violation(4, c, "c is an orbit point"));
    }

    // (1) the [b, c] part is a tree: connected from the root with |E| = |V| − 1
    let tree: Vec<usize> = (0..graph.len()).filter(|&v| in_tree(v)).collect();
    let mut edges: HashSet<(usize, usize)> = HashSet::new();
    for &v in &tree {
        for i in 0..graph.generators.len() {
            if let Some(w) = graph.forward[i][v] {
                if w != v && in_tree(w) {
                    edges.insert((v.min(w), v.max(w)));
                }
            }
        }
    }
    let mut adjacency: HashMap<usize, Vec<usize>> = HashMap::new();
    for &(x, y) in &edges {
        adjacency.entry(x).or_default().push(y);
        adjacency.entry(y).or_default().push(x);
    }
    let mut seen: HashSet<usize> = HashSet::from([0]);
    let mut stack = vec![0usize];
    while let Some(v) = stack.pop() {
        for &w in adjacency.get(&v).map(Vec::as_slice).unwrap_or(&[]) {
            if seen.insert(w) {
                stack.push(w);
            }
        }
    }
    if let Some(&v) = tree.iter().find(|v| !seen.contains(v)) {
        return Err(violation(1, graph.point(v), "tree vertex not connected to b inside [b, c]"));
    }
    if edges.len() + 1 != tree.len() {
        return Err(violation(
            1,
            b,
            format!("{} edges on {} tree vertices", edges.len(), tree.len()),
        ));
    }

    let mut report = TreeReport {
        vertices: graph.len(),
        tree_vertices: tree.len(),
        truncated: graph.truncated,
        depth_profile: graph.tree_depth_profile(),
        ..TreeReport::default()
    };
    for v in 0..graph.len() {
        let x = graph.point(v).clone();
        match regions[v] {
            Region::A => report.region_a += 1,
            Region::B => report.region_b += 1,
            Region::Ray { .. } => report.ray_vertices += 1,
            _ => {}
        }
        if graph.frontier[v] {
            report.frontier_skipped += 1;
            continue;
        }
        let nb = |i: usize, inv: bool| graph.neighbor(v, i, inv).expect("non-frontier vertices are fully explored");
        match regions[v] {
            Region::A | Region::B => {
                // (2) children g⁻¹(x) ∈ A and f(x) ∈ B, one level deeper; the root's g⁻¹-child is itself
                let left = nb(gi, true);
                let right = nb(fi, false);
                if regions[right] != Region::B || graph.depth[right] != graph.depth[v] + 1 {
                    return Err(violation(2, &x, "f(x) is not a B-child"));
                }
                if v == 0 {
                    if left != 0 || nb(gi, false) != 0 {
                        return Err(violation(2, &x, "g does not fix the root"));
                    }
                } else if regions[left] != Region::A || graph.depth[left] != graph.depth[v] + 1 {
                    return Err(violation(2, &x, "g⁻¹(x) is not an A-child"));
                }
                let tree_neighbors: HashSet<usize> = (0..graph.generators.len())
                    .flat_map(|i| [nb(i, false), nb(i, true)])
                    .filter(|&w| w != v && in_tree(w))
                    .collect();
                let expected = if v == 0 { 1 } else { 3 };
                if tree_neighbors.len() != expected {
                    return Err(violation(
                        2,
                        &x,
                        format!("{} tree neighbours, expected {expected}", tree_neighbors.len()),
                    ));
                }
                // (3) A-vertices leave [b, c] under f⁻¹, B-vertices under g
                let exit = if regions[v] == Region::A {
                    nb(fi, true)
                } else {
                    nb(gi, false)
                };
                if in_tree(exit) {
                    return Err(violation(3, &x, "expected exit from [b, c]"));
                }
            }
            Region::Ray { generator, index } => {
                // (5) the other generator fixes x; the ray generator moves one step along the ray
                let (other, toward_inverse) = if generator == fi { (gi, false) } else { (fi, true) };
                if nb(other, false) != v || nb(other, true) != v {
                    return Err(violation(5, &x, "off-ray generator moves a ray vertex"));
                }
                let inward = nb(generator, toward_inverse);
                let outward = nb(generator, !toward_inverse);
                let inward_ok = match regions[inward] {
                    Region::Ray {
                        generator: g2,
                        index: i2,
                    } => g2 == generator && i2 + 1 == index,
                    Region::A | Region::B => index == 1,
                    _ => false,
                };
                let outward_ok =
                    matches!(regions[outward], Region::Ray { generator: g2, index: i2 } if g2 == generator && i2 == index + 1);
                if !inward_ok || !outward_ok {
                    return Err(violation(
                        5,
                        &x,
                        format!("ray of generator {generator} broken at index {index}"),
                    ));
                }
            }
            Region::C | Region::TreeOther => return Err(violation(5, &x, "vertex outside (a, d)")),
        }
    }
    Ok(report)
}

/// One of the four generator steps of a two-generator action.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize)]
pub enum Step {
    F,
    FInv,
    G,
    GInv,
}

impl Step {
    pub const ALL: [Step; 4] = [Step::F, Step::FInv, Step::G, Step::GInv];

    pub fn inverse(self) -> Step {
        match self {
            Step::F => Step::FInv,
            Step::FInv => Step::F,
            Step::G => Step::GInv,
            Step::GInv => Step::G,
        }
    }
}

/// The symmetric doubly stochastic kernel `P₂` of the comparison argument.
#[derive(Clone, Debug)]
pub struct ComparisonKernel {
    layout: PrechainLayout,
}

pub fn comparison_kernel(
    f: &PiecewiseProjectiveMap,
    g: &PiecewiseProjectiveMap,
    a: &ExtendedPoint,
    b: &ExtendedPoint,
    c: &ExtendedPoint,
    d: &ExtendedPoint,
) -> Result<ComparisonKernel, SchreierError> {
    let layout = PrechainLayout::new(f, g, b, c)?;
    if layout.a != *a || layout.d != *d {
        return Err(SchreierError::PreconditionViolated(format!(
            "a, d must be the fixed points {} and {} adjacent to [b, c]",
            layout.a, layout.d
        )));
    }
    Ok(ComparisonKernel { layout })
}

fn quarter(n: i64) -> Rational {
    Rational::new(BigInt::from(n), BigInt::from(4))
}

impl ComparisonKernel {
    pub fn layout(&self) -> &PrechainLayout {
        &self.layout
    }

    pub fn apply(&self, x: &ExtendedPoint, step: Step) -> ExtendedPoint {
        let l = &self.layout;
        match step {
            Step::F => l.f.apply(x),
            Step::FInv => l.f_inv.apply(x),
            Step::G => l.g.apply(x),
            Step::GInv => l.g_inv.apply(x),
        }
    }

    /// `P₂(x, step(x))`.
    pub fn weight(&self, x: &ExtendedPoint, step: Step) -> Result<Rational, SchreierError> {
        let l = &self.layout;
        if l.in_tree_interval(x) {
            return Ok(quarter(1));
        }
        if l.a < *x && *x < l.b {
            let odd = l.n_of(x)? % 2 == 1;
            return Ok(match (step, odd) {
                (Step::F, true) | (Step::FInv, false) => quarter(1),
                (Step::F, false) | (Step::FInv, true) => quarter(3),
                _ => Rational::zero(),
            });
        }
        if l.c < *x && *x < l.d {
            let odd = l.m_of(x)? % 2 == 1;
            return Ok(match (step, odd) {
                (Step::G, true) | (Step::GInv, false) => quarter(3),
                (Step::G, false) | (Step::GInv, true) => quarter(1),
                _ => Rational::zero(),
            });
        }
        Err(SchreierError::PreconditionViolated(format!("{x} lies outside (a, d)")))
    }

    /// Which displayed case governs `x`.
    pub fn case(&self, x: &ExtendedPoint) -> Result<KernelCase, SchreierError> {
        let l = &self.layout;
        Ok(if l.in_tree_interval(x) {
            KernelCase::Tree
        } else if l.a < *x && *x < l.b {
            if l.n_of(x)? % 2 == 1 {
                KernelCase::LeftOdd
            } else {
                KernelCase::LeftEven
            }
        } else if l.c < *x && *x < l.d {
            if l.m_of(x)? % 2 == 1 {
                KernelCase::RightOdd
            } else {
                KernelCase::RightEven
            }
        } else {
            return Err(SchreierError::PreconditionViolated(format!("{x} lies outside (a, d)")));
        })
    }

    /// Transition probabilities to each neighbour, loops merged into `x`.
    pub fn row(&self, x: &ExtendedPoint) -> Result<Vec<(ExtendedPoint, Rational)>, SchreierError> {
        let mut out: Vec<(ExtendedPoint, Rational)> = Vec::new();
        for step in Step::ALL {
            let w = self.weight(x, step)?;
            let y = self.apply(x, step);
            match out.iter_mut().find(|(p, _)| *p == y) {
                Some(slot) => slot.1 += w,
                None => out.push((y, w)),
            }
        }
        Ok(out)
    }

    /// Row sum equals 1 and `P₂(x, y) = P₂(y, x)` on every edge at `x`.
    pub fn check_vertex(&self, x: &ExtendedPoint) -> Result<(), SchreierError> {
        let row = self.row(x)?;
        let total: Rational = row.iter().map(|(_, w)| w.clone()).sum();
        if total != Rational::from_integer(BigInt::from(1)) {
            return Err(violation(0, x, format!("row sum {total}")));
        }
        for (y, w) in &row {
            if w.is_zero() {
                continue;
            }
            let back = self
                .row(y)?
                .into_iter()
                .find(|(p, _)| p == x)
                .map(|(_, w)| w)
                .unwrap_or_default();
            if back != *w {
                return Err(violation(0, x, format!("P(x, {y}) = {w} but P({y}, x) = {back}")));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize)]
pub enum KernelCase {
    Tree,
    LeftOdd,
    LeftEven,
    RightOdd,
    RightEven,
}

/// `|∂S| / |S|` for `S` the first `len` vertices of the ray through
/// `ray_start`, read outward; the boundary is taken in the full Schreier graph.
pub fn foelner_ratio(graph: &OrbitGraph, ray_start: &ExtendedPoint, len: usize) -> Result<Rational, SchreierError> {
    let not_ray = || SchreierError::NotARay(ray_start.clone());
    let v = graph.index_of(ray_start).ok_or_else(not_ray)?;
    let (Some(Region::Ray { generator, .. }), Some(layout)) = (graph.region(v), graph.layout()) else {
        return Err(not_ray());
    };
    if len == 0 {
        return Err(SchreierError::PreconditionViolated("ray segment must be nonempty".into()));
    }
    let outward = if generator == layout.f_index {
        &graph.inverses[generator]
    } else {
        &graph.generators[generator]
    };
    let mut segment = vec![ray_start.clone()];
    while segment.len() < len {
        let next = outward.apply(segment.last().unwrap());
        segment.push(next);
    }
    let members: HashSet<PointKey> = segment.iter().map(qn_canonical_key).collect();
    let mut boundary: HashSet<PointKey> = HashSet::new();
    for x in &segment {
        for h in graph.generators.iter().chain(&graph.inverses) {
            let key = qn_canonical_key(&h.apply(x));
            if !members.contains(&key) {
                boundary.insert(key);
            }
        }
    }
    Ok(Rational::new(BigInt::from(boundary.len()), BigInt::from(len)))
}

/// Side of `[b, c]` a ray hangs on.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize)]
pub enum RaySide {
    /// `f`-ray in `(a, b)`, hanging off an A-vertex.
    Left,
    /// `g`-ray in `(c, d)`, hanging off a B-vertex.
    Right,
}

/// Combinatorial position in the tree-with-rays: the child choices from the
/// root (`false` = A-child `g⁻¹`, `true` = B-child `f`) and an optional ray
/// offset. Valid as a model of the Schreier graph of `b` once
/// [`verify_tree_structure`] passes.
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash)]
pub struct TreePosition {
    path: Vec<bool>,
    ray: Option<(RaySide, u64)>,
}

impl TreePosition {
    pub fn root() -> Self {
        Self::default()
    }

    pub fn is_root(&self) -> bool {
        self.path.is_empty() && self.ray.is_none()
    }

    pub fn tree_depth(&self) -> usize {
        self.path.len()
    }

    pub fn ray(&self) -> Option<(RaySide, u64)> {
        self.ray
    }

    pub fn step(&mut self, step: Step) {
        match &mut self.ray {
            Some((side, n)) => {
                let (inward, outward) = match side {
                    RaySide::Left => (Step::F, Step::FInv),
                    RaySide::Right => (Step::GInv, Step::G),
                };
                if step == inward {
                    *n -= 1;
                    if *n == 0 {
                        self.ray = None;
                    }
                } else if step == outward {
                    *n += 1;
                }
            }
            None => {
                let in_b = self.path.last().copied();
                match (step, in_b) {
                    (Step::F, _) => self.path.push(true),
                    (Step::GInv, None) | (Step::G, None) => {}
                    (Step::GInv, Some(_)) => self.path.push(false),
                    (Step::G, Some(false)) | (Step::FInv, Some(true)) => {
                        self.path.pop();
                    }
                    (Step::G, Some(true)) => self.ray = Some((RaySide::Right, 1)),
                    (Step::FInv, Some(false)) | (Step::FInv, None) => self.ray = Some((RaySide::Left, 1)),
                }
            }
        }
    }

    /// The orbit point this position stands for.
    pub fn decode(&self, layout: &PrechainLayout) -> ExtendedPoint {
        let mut x = layout.b.clone();
        for &right in &self.path {
            x = if right { layout.f.apply(&x) } else { layout.g_inv.apply(&x) };
        }
        if let Some((side, n)) = self.ray {
            let h = match side {
                RaySide::Left => &layout.f_inv,
                RaySide::Right => &layout.g,
            };
            for _ in 0..n {
                x = h.apply(&x);
            }
        }
        x
    }
}
