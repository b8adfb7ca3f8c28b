//! Searchable cells: a DAG whose edges carry one of eight candidate operations.

use std::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};
use sod_autograd::{concat_channels, lin_comb, Bound, ParamId, ParamStore, Tensor, Var};

use crate::error::{shape, Error, Result};
use crate::genotype::CellGenotype;
use crate::nn::{normal_tensor, Conv};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum OpId {
    MaxPool3,
    Skip,
    Conv3,
    Conv1,
    SepConv3,
    DilConv3R2,
    SpatialAttn3,
    ChannelAttn1,
}

pub const NUM_OPS: usize = 8;

impl OpId {
    pub const ALL: [OpId; NUM_OPS] = [
        OpId::MaxPool3,
        OpId::Skip,
        OpId::Conv3,
        OpId::Conv1,
        OpId::SepConv3,
        OpId::DilConv3R2,
        OpId::SpatialAttn3,
        OpId::ChannelAttn1,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            OpId::MaxPool3 => "max_pool3",
            OpId::Skip => "skip",
            OpId::Conv3 => "conv3",
            OpId::Conv1 => "conv1",
            OpId::SepConv3 => "sep_conv3",
            OpId::DilConv3R2 => "dil_conv3_r2",
            OpId::SpatialAttn3 => "spatial_attn3",
            OpId::ChannelAttn1 => "channel_attn1",
        }
    }

    pub fn from_name(name: &str) -> Result<OpId> {
        OpId::ALL
            .into_iter()
            .find(|op| op.name() == name)
            .ok_or_else(|| Error::UnknownOp(name.to_string()))
    }

    /// Operations that mix information instead of passing it through.
    pub fn is_parametric(self) -> bool {
        !matches!(self, OpId::MaxPool3 | OpId::Skip)
    }
}

impl fmt::Display for OpId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum CellType {
    /// Multi-modal fusion of adjacent RGB and depth levels.
    MM,
    /// Multi-scale fusion.
    MS,
    /// Global aggregation.
    GA,
    /// Spatial refinement with low-level features.
    SR,
}

impl CellType {
    pub const ALL: [CellType; 4] = [CellType::MM, CellType::MS, CellType::GA, CellType::SR];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            CellType::MM => "MM",
            CellType::MS => "MS",
            CellType::GA => "GA",
            CellType::SR => "SR",
        }
    }

    pub fn from_name(name: &str) -> Option<CellType> {
        CellType::ALL.into_iter().find(|c| c.name() == name)
    }

    pub fn num_inputs(self) -> usize {
        match self {
            CellType::MM | CellType::GA => 4,
            CellType::MS | CellType::SR => 3,
        }
    }
}

/// Topology of a cell: `num_nodes` nodes, the first `num_inputs` of which are inputs.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CellSpec {
    pub cell_type: CellType,
    pub num_nodes: usize,
    pub num_inputs: usize,
}

impl CellSpec {
    pub fn new(cell_type: CellType, num_nodes: usize) -> Result<Self> {
        let num_inputs = cell_type.num_inputs();
        if num_nodes <= num_inputs {
            return Err(crate::error::invalid(format!(
                "{} cell needs more than {num_inputs} nodes, got {num_nodes}",
                cell_type.name()
            )));
        }
        Ok(Self {
            cell_type,
            num_nodes,
            num_inputs,
        })
    }

    /// Every `(i, j)` with `i < j` and `j` an intermediate node, ordered by `j` then `i`.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        (self.num_inputs..self.num_nodes)
            .flat_map(|j| (0..j).map(move |i| (i, j)))
            .collect()
    }

    pub fn num_edges(&self) -> usize {
        (self.num_inputs..self.num_nodes).sum()
    }

    pub fn edge_index(&self, i: usize, j: usize) -> Option<usize> {
        if j < self.num_inputs || j >= self.num_nodes || i >= j {
            return None;
        }
        let before: usize = (self.num_inputs..j).sum();
        Some(before + i)
    }
}

/// Parameters of one candidate operation at a fixed width.
#[derive(Clone, Debug)]
pub enum OpParams {
    None,
    Conv(Conv),
    Sep { depthwise: ParamId, pointwise: Conv },
    /// `C -> 1` gate convolution (3x3 spatial, or 1x1 on pooled channels).
    Gate(Conv),
}

pub fn init_op(op: OpId, width: usize, store: &mut ParamStore, name: &str, rng: &mut impl Rng) -> OpParams {
    let name = format!("{name}.{}", op.name());
    match op {
        OpId::MaxPool3 | OpId::Skip => OpParams::None,
        OpId::Conv3 => OpParams::Conv(Conv::new(store, &name, width, width, 3, 1, false, 1.0, rng)),
        OpId::Conv1 => OpParams::Conv(Conv::new(store, &name, width, width, 1, 1, false, 1.0, rng)),
        OpId::DilConv3R2 => OpParams::Conv(Conv::new(store, &name, width, width, 3, 2, false, 1.0, rng)),
        OpId::SepConv3 => {
            let dw = normal_tensor(&[width, 1, 3, 3], (2.0f64 / 9.0).sqrt(), rng);
            OpParams::Sep {
                depthwise: store.add(format!("{name}.dw"), dw),
                pointwise: Conv::new(store, &format!("{name}.pw"), width, width, 1, 1, false, 1.0, rng),
            }
        }
        OpId::SpatialAttn3 => OpParams::Gate(Conv::new(store, &name, width, 1, 3, 1, true, 1.0, rng)),
        OpId::ChannelAttn1 => OpParams::Gate(Conv::new(store, &name, width, width, 1, 1, true, 1.0, rng)),
    }
}

fn params_mismatch(op: OpId) -> Error {
    Error::InvalidArgument(format!("parameters do not match operation {op}"))
}

/// Apply one candidate operation to a `[C, H, W]` map; the output has the same shape.
pub fn apply_op<'t>(op: OpId, x: Var<'t>, params: &OpParams, bound: &Bound<'t>) -> Result<Var<'t>> {
    let out = match (op, params) {
        (OpId::MaxPool3, OpParams::None) => x.pad_replicate(1).max_pool2d(3, 1),
        (OpId::Skip, OpParams::None) => x,
        (OpId::Conv3 | OpId::Conv1 | OpId::DilConv3R2, OpParams::Conv(c)) => {
            c.forward(x, bound).layer_norm().relu()
        }
        (OpId::SepConv3, OpParams::Sep { depthwise, pointwise }) => {
            let dw = x.pad_replicate(1).depthwise_conv2d(&bound.var(*depthwise), 1);
            pointwise.forward(dw, bound).layer_norm().relu()
        }
        (OpId::SpatialAttn3, OpParams::Gate(c)) => x.mul_spatial(&c.forward(x, bound).sigmoid()),
        (OpId::ChannelAttn1, OpParams::Gate(c)) => x.mul_channel(&c.forward(x.global_avg_pool(), bound).sigmoid()),
        _ => return Err(params_mismatch(op)),
    };
    Ok(out)
}

/// Candidate operations of one edge, indexed by [`OpId::index`].
#[derive(Clone, Debug)]
pub struct EdgeOps {
    pub ops: Vec<Option<OpParams>>,
}

/// Softmax-weighted sum of all candidate operations on one edge.
///
/// `weights` is the `[E, 8]` softmax table of this cell type and `row` the edge.
pub fn mixed_op<'t>(x: Var<'t>, weights: &Var<'t>, row: usize, edge: &EdgeOps, bound: &Bound<'t>) -> Result<Var<'t>> {
    let outs = OpId::ALL
        .iter()
        .map(|&op| {
            let p = edge.ops[op.index()].as_ref().ok_or_else(|| params_mismatch(op))?;
            apply_op(op, x, p, bound)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(lin_comb(&outs, weights, row))
}

/// Which parameters a cell allocates.
#[derive(Clone, Copy, Debug)]
pub enum CellMode<'a> {
    /// Every operation on every edge.
    Supernet,
    /// Only the operations of a discrete architecture.
    Discrete(&'a CellGenotype),
    /// No DAG: the projected inputs are concatenated and projected again.
    Concat,
}

/// How a cell is evaluated in a forward pass.
#[derive(Clone, Copy, Debug)]
pub enum CellArch<'a, 't> {
    Mixed(&'a Var<'t>),
    Discrete(&'a CellGenotype),
    Concat,
}

#[derive(Clone, Debug)]
pub struct CellParams {
    pub spec: CellSpec,
    pub width: usize,
    input_proj: Vec<Conv>,
    edges: Vec<EdgeOps>,
    out_proj: Conv,
}

impl CellParams {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        spec: CellSpec,
        in_channels: &[usize],
        width: usize,
        mode: CellMode<'_>,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        if in_channels.len() != spec.num_inputs {
            return Err(shape(format!(
                "{} cell takes {} inputs, got {}",
                spec.cell_type.name(),
                spec.num_inputs,
                in_channels.len()
            )));
        }
        let input_proj = in_channels
            .iter()
            .enumerate()
            .map(|(i, &c)| Conv::new(store, &format!("{name}.in{i}"), c, width, 1, 1, true, 1.0, rng))
            .collect();
        let mut edges: Vec<EdgeOps> = spec
            .edges()
            .iter()
            .map(|_| EdgeOps {
                ops: vec![None; NUM_OPS],
            })
            .collect();
        match mode {
            CellMode::Supernet => {
                for (e, (i, j)) in spec.edges().into_iter().enumerate() {
                    for op in OpId::ALL {
                        edges[e].ops[op.index()] = Some(init_op(op, width, store, &format!("{name}.e{i}_{j}"), rng));
                    }
                }
            }
            CellMode::Discrete(g) => {
                g.check_spec(&spec)?;
                for &(i, j, op) in &g.edges {
                    let e = spec.edge_index(i, j).expect("checked edge");
                    edges[e].ops[op.index()] = Some(init_op(op, width, store, &format!("{name}.e{i}_{j}"), rng));
                }
            }
            CellMode::Concat => {}
        }
        let out_in = match mode {
            CellMode::Concat => spec.num_inputs * width,
            _ => (spec.num_nodes - spec.num_inputs) * width,
        };
        let out_proj = Conv::new(store, &format!("{name}.out"), out_in, width, 1, 1, true, 1.0, rng);
        Ok(Self {
            spec,
            width,
            input_proj,
            edges,
            out_proj,
        })
    }

    /// Project every input to the cell width and resize to the coarsest input.
    pub fn project_inputs<'t>(&self, inputs: &[Var<'t>], bound: &Bound<'t>) -> Result<Vec<Var<'t>>> {
        if inputs.len() != self.spec.num_inputs {
            return Err(shape(format!("cell expects {} inputs, got {}", self.spec.num_inputs, inputs.len())));
        }
        let (h, w) = inputs
            .iter()
            .map(|x| {
                let s = x.shape();
                (s[1], s[2])
            })
            .min()
            .expect("non-empty inputs");
        Ok(inputs
            .iter()
            .zip(&self.input_proj)
            .map(|(x, p)| p.forward(x.resize_bilinear(h, w), bound))
            .collect())
    }

    /// Evaluate the cell on raw inputs (projection included).
    pub fn forward<'t>(&self, inputs: &[Var<'t>], arch: CellArch<'_, 't>, bound: &Bound<'t>) -> Result<Var<'t>> {
        let aligned = self.project_inputs(inputs, bound)?;
        cell_forward(&aligned, self, arch, bound)
    }
}

/// Evaluate a cell on inputs already projected to its width and a common size.
pub fn cell_forward<'t>(
    inputs: &[Var<'t>],
    cell: &CellParams,
    arch: CellArch<'_, 't>,
    bound: &Bound<'t>,
) -> Result<Var<'t>> {
    let spec = &cell.spec;
    if inputs.len() != spec.num_inputs {
        return Err(shape(format!("cell expects {} inputs, got {}", spec.num_inputs, inputs.len())));
    }
    let s0 = inputs[0].shape();
    if inputs.iter().any(|x| x.shape() != s0 || s0[0] != cell.width) {
        return Err(shape("cell inputs must share shape [width, H, W]"));
    }
    if let CellArch::Concat = arch {
        return Ok(cell.out_proj.forward(concat_channels(inputs), bound));
    }
    let mut nodes: Vec<Var<'t>> = inputs.to_vec();
    for j in spec.num_inputs..spec.num_nodes {
        let mut terms = Vec::new();
        match arch {
            CellArch::Mixed(weights) => {
                let ws = weights.shape();
                if ws != [spec.num_edges(), NUM_OPS] {
                    return Err(shape(format!("architecture table {ws:?} does not fit {} edges", spec.num_edges())));
                }
                for (i, node) in nodes.iter().enumerate().take(j) {
                    let e = spec.edge_index(i, j).expect("valid edge");
                    terms.push(mixed_op(*node, weights, e, &cell.edges[e], bound)?);
                }
            }
            CellArch::Discrete(g) => {
                for &(i, jj, op) in g.edges.iter().filter(|(_, jj, _)| *jj == j) {
                    let e = spec.edge_index(i, jj).ok_or_else(|| shape("edge outside cell"))?;
                    let p = cell.edges[e].ops[op.index()].as_ref().ok_or_else(|| params_mismatch(op))?;
                    terms.push(apply_op(op, nodes[i], p, bound)?);
                }
            }
            CellArch::Concat => unreachable!(),
        }
        let node = if terms.is_empty() {
            bound.tape().constant(Tensor::zeros(&s0))
        } else {
            sod_autograd::add_n(&terms)
        };
        nodes.push(node);
    }
    Ok(cell.out_proj.forward(concat_channels(&nodes[spec.num_inputs..]), bound))
}
