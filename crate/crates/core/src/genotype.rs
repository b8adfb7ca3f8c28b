//! Architecture weights, discrete architectures and their text format.

use std::fmt::Write as _;

use rand::Rng;
use sod_autograd::{Bound, ParamId, ParamStore, Tensor, Var};

use crate::cells::{CellSpec, CellType, OpId, NUM_OPS};
use crate::error::{Error, Result};
use crate::nn::normal_tensor;

/// One `[E, 8]` logit table per cell type, shared by all cells of that type.
#[derive(Clone, Debug)]
pub struct ArchParams {
    pub store: ParamStore,
    pub specs: [CellSpec; 4],
    ids: [ParamId; 4],
}

impl ArchParams {
    /// Logits start at `1e-3 * N(0, 1)`.
    pub fn init(specs: [CellSpec; 4], rng: &mut impl Rng) -> Self {
        let mut store = ParamStore::new();
        let ids = specs.map(|s| {
            store.add(
                format!("alpha.{}", s.cell_type.name()),
                normal_tensor(&[s.num_edges(), NUM_OPS], 1e-3, rng),
            )
        });
        Self { store, specs, ids }
    }

    pub fn id(&self, t: CellType) -> ParamId {
        self.ids[t.index()]
    }

    pub fn logits(&self, t: CellType) -> &Tensor {
        self.store.get(self.id(t))
    }

    pub fn logits_mut(&mut self, t: CellType) -> &mut Tensor {
        let id = self.id(t);
        self.store.get_mut(id)
    }

    /// Row-wise softmax of one table.
    pub fn softmax(&self, t: CellType) -> Tensor {
        let l = self.logits(t);
        let mut out = l.clone();
        for row in out.data_mut().chunks_mut(NUM_OPS) {
            let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            row.iter_mut().for_each(|v| *v = (*v - m).exp());
            let s: f64 = row.iter().sum();
            row.iter_mut().for_each(|v| *v /= s);
        }
        out
    }

    /// Mean per-edge entropy (nats) of the softmax over operations.
    pub fn entropy(&self, t: CellType) -> f64 {
        let p = self.softmax(t);
        let rows = p.len() / NUM_OPS;
        let total: f64 = p
            .data()
            .chunks(NUM_OPS)
            .map(|row| -row.iter().filter(|&&q| q > 0.0).map(|q| q * q.ln()).sum::<f64>())
            .sum();
        total / rows as f64
    }

    /// Softmax tables on a tape, in [`CellType::ALL`] order.
    pub fn weights<'t>(&self, bound: &Bound<'t>) -> [Var<'t>; 4] {
        self.ids.map(|id| bound.var(id).softmax_rows())
    }
}

/// Kept edges of one cell as `(from, to, op)`, ordered like [`CellSpec::edges`].
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CellGenotype {
    pub cell_type: CellType,
    pub num_nodes: usize,
    pub num_inputs: usize,
    pub edges: Vec<(usize, usize, OpId)>,
}

impl CellGenotype {
    pub fn spec(&self) -> CellSpec {
        CellSpec {
            cell_type: self.cell_type,
            num_nodes: self.num_nodes,
            num_inputs: self.num_inputs,
        }
    }

    pub(crate) fn check_spec(&self, spec: &CellSpec) -> Result<()> {
        if self.spec() != *spec {
            return Err(Error::InvalidArgument(format!(
                "{} genotype has {} nodes, cell has {}",
                self.cell_type.name(),
                self.num_nodes,
                spec.num_nodes
            )));
        }
        Ok(())
    }

    pub fn op(&self, i: usize, j: usize) -> Option<OpId> {
        self.edges.iter().find(|e| e.0 == i && e.1 == j).map(|e| e.2)
    }
}

/// A discrete architecture for all four cell types.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Genotype {
    pub cells: [CellGenotype; 4],
}

const HEADER: &str = "genotype v1";

impl Genotype {
    pub fn cell(&self, t: CellType) -> &CellGenotype {
        &self.cells[t.index()]
    }

    /// Every edge of every cell uses `op`.
    pub fn uniform(specs: [CellSpec; 4], op: OpId) -> Self {
        Self {
            cells: specs.map(|s| CellGenotype {
                cell_type: s.cell_type,
                num_nodes: s.num_nodes,
                num_inputs: s.num_inputs,
                edges: s.edges().into_iter().map(|(i, j)| (i, j, op)).collect(),
            }),
        }
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        writeln!(s, "{HEADER}").unwrap();
        for c in &self.cells {
            writeln!(s, "cell {} nodes={} inputs={}", c.cell_type.name(), c.num_nodes, c.num_inputs).unwrap();
            for (i, j, op) in &c.edges {
                writeln!(s, "edge {i}->{j}: {op}").unwrap();
            }
        }
        s
    }

    pub fn parse(text: &str) -> Result<Self> {
        let err = |line: usize, msg: &str| Error::GenotypeParse {
            line,
            msg: msg.to_string(),
        };
        let mut lines = text.lines().enumerate().map(|(n, l)| (n + 1, l));
        match lines.next() {
            Some((_, l)) if l == HEADER => {}
            _ => return Err(err(1, "missing `genotype v1` header")),
        }
        let mut cells: Vec<CellGenotype> = Vec::new();
        for (n, line) in lines {
            if line.is_empty() {
                continue;
            }
            let words: Vec<&str> = line.split(' ').collect();
            match words.as_slice() {
                ["cell", name, nodes, inputs] => {
                    let cell_type = CellType::from_name(name).ok_or_else(|| err(n, "unknown cell type"))?;
                    if cell_type.index() != cells.len() {
                        return Err(err(n, "cells must appear in MM, MS, GA, SR order"));
                    }
                    let num = |w: &str, key: &str| {
                        w.strip_prefix(key)
                            .and_then(|v| v.parse::<usize>().ok())
                            .ok_or_else(|| err(n, &format!("expected {key}<count>")))
                    };
                    let num_nodes = num(nodes, "nodes=")?;
                    let num_inputs = num(inputs, "inputs=")?;
                    if num_inputs != cell_type.num_inputs() || num_nodes <= num_inputs {
                        return Err(err(n, "invalid node or input count"));
                    }
                    cells.push(CellGenotype {
                        cell_type,
                        num_nodes,
                        num_inputs,
                        edges: Vec::new(),
                    });
                }
                ["edge", ends, op] => {
                    let ends = ends.strip_suffix(':').ok_or_else(|| err(n, "expected `edge i->j: op`"))?;
                    let cell = cells.last_mut().ok_or_else(|| err(n, "edge before any cell"))?;
                    let (i, j) = ends
                        .split_once("->")
                        .and_then(|(a, b)| Some((a.parse::<usize>().ok()?, b.parse::<usize>().ok()?)))
                        .ok_or_else(|| err(n, "expected `i->j`"))?;
                    let idx = cell.spec().edge_index(i, j).ok_or_else(|| err(n, "edge outside the cell"))?;
                    if let Some(&(pi, pj, _)) = cell.edges.last() {
                        if cell.spec().edge_index(pi, pj).unwrap() >= idx {
                            return Err(err(n, "edges out of order or repeated"));
                        }
                    }
                    let op = OpId::from_name(op).map_err(|_| err(n, &format!("unknown operation `{op}`")))?;
                    cell.edges.push((i, j, op));
                }
                _ => return Err(err(n, "unrecognized line")),
            }
        }
        let cells: [CellGenotype; 4] = cells
            .try_into()
            .map_err(|_| err(text.lines().count(), "expected four cells"))?;
        Ok(Self { cells })
    }

    /// Parametric MM edges leaving an RGB input (nodes 0, 1) and a depth
    /// input (nodes 2, 3), as `(rgb, depth)`.
    pub fn count_modality_edges(&self) -> (usize, usize) {
        let mm = self.cell(CellType::MM);
        let count = |sources: std::ops::Range<usize>| {
            mm.edges
                .iter()
                .filter(|(i, _, op)| sources.contains(i) && op.is_parametric())
                .count()
        };
        (count(0..2), count(2..4))
    }
}

fn argmax_lowest(row: &[f64]) -> usize {
    let mut best = 0;
    for (k, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = k;
        }
    }
    best
}

/// Pick the highest-weight operation per edge (lowest id on ties).
///
/// With `prune_top2`, each intermediate node keeps only its two incoming edges
/// with the largest winning weight.
pub fn discretize(alpha: &ArchParams, prune_top2: bool) -> Genotype {
    let cells = alpha.specs.map(|spec| {
        let p = alpha.softmax(spec.cell_type);
        let choice: Vec<(usize, usize, OpId, f64)> = spec
            .edges()
            .into_iter()
            .enumerate()
            .map(|(e, (i, j))| {
                let row = &p.data()[e * NUM_OPS..(e + 1) * NUM_OPS];
                let k = argmax_lowest(row);
                (i, j, OpId::ALL[k], row[k])
            })
            .collect();
        let edges = if prune_top2 {
            let mut kept = Vec::new();
            for j in spec.num_inputs..spec.num_nodes {
                let mut incoming: Vec<_> = choice.iter().filter(|c| c.1 == j).collect();
                incoming.sort_by(|a, b| b.3.total_cmp(&a.3).then(a.0.cmp(&b.0)));
                let mut top: Vec<_> = incoming.into_iter().take(2).map(|c| (c.0, c.1, c.2)).collect();
                top.sort();
                kept.extend(top);
            }
            kept
        } else {
            choice.into_iter().map(|c| (c.0, c.1, c.2)).collect()
        };
        CellGenotype {
            cell_type: spec.cell_type,
            num_nodes: spec.num_nodes,
            num_inputs: spec.num_inputs,
            edges,
        }
    });
    Genotype { cells }
}
