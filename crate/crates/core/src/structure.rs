//! Layered partition structure of a circuit.
//!
//! Layer 0 holds one partition per variable. Every following layer is the
//! result of a product step that pairs neighbouring partitions of the layer
//! below (left to right in 1-D, alternating column/row merges on a 2-D grid).
//! An unpaired trailing partition passes through unchanged. Internal layers
//! additionally carry intra-layer dependency edges that feed the weight
//! network (or the quotient product) of each partition; these edges induce a
//! total order on the variables.

use std::cmp::Reverse;
use std::collections::BinaryHeap;
use std::fmt;

use crate::error::{PncError, Result};

/// Flavor of the internal sum layers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum LayerKind {
    /// Constant mixture weights (an ordinary probabilistic circuit).
    PlainSum,
    /// Conditional mixing operator: weights reweighted by the product of the
    /// preceding partitions' component values.
    Quotient,
    /// Weights produced by a masked convolution over preceding partitions.
    Neural,
}

impl LayerKind {
    pub fn as_str(self) -> &'static str {
        match self {
            LayerKind::PlainSum => "plain",
            LayerKind::Quotient => "quotient",
            LayerKind::Neural => "neural",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "plain" | "plain_sum" => Some(LayerKind::PlainSum),
            "quotient" => Some(LayerKind::Quotient),
            "neural" => Some(LayerKind::Neural),
            _ => None,
        }
    }
}

impl fmt::Display for LayerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum MergeAxis {
    /// Merge horizontally adjacent partitions (halves the column count).
    Column,
    /// Merge vertically adjacent partitions (halves the row count).
    Row,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct GridShape {
    pub rows: usize,
    pub cols: usize,
}

impl GridShape {
    pub fn new(rows: usize, cols: usize) -> Self {
        GridShape { rows, cols }
    }

    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl fmt::Display for GridShape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}", self.rows, self.cols)
    }
}

/// How a partition was formed from the layer below.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Children {
    Pair(usize, usize),
    PassThrough(usize),
}

impl Children {
    pub fn first(&self) -> usize {
        match *self {
            Children::Pair(a, _) | Children::PassThrough(a) => a,
        }
    }

    pub fn second(&self) -> Option<usize> {
        match *self {
            Children::Pair(_, b) => Some(b),
            Children::PassThrough(_) => None,
        }
    }
}

/// One intra-layer edge: `partition` feeds the weight network of the owning
/// partition through kernel tap `tap`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Dependency {
    pub tap: usize,
    pub partition: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PartitionLayout {
    pub layer_index: usize,
    pub grid: GridShape,
    /// Sorted variable ids per partition, partitions in raster order.
    pub scopes: Vec<Vec<usize>>,
    /// Empty for the leaf layer.
    pub children: Vec<Children>,
    /// Per partition, the partitions feeding its weight network in ascending order.
    pub dependencies: Vec<Vec<Dependency>>,
    /// Number of kernel taps of this layer's half kernel (0 = no dependencies).
    pub num_taps: usize,
}

impl PartitionLayout {
    pub fn num_partitions(&self) -> usize {
        self.scopes.len()
    }

    pub fn has_dependencies(&self) -> bool {
        self.dependencies.iter().any(|d| !d.is_empty())
    }
}

/// Rank of every variable in the induced total order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VariableOrder {
    rank_of: Vec<usize>,
    var_at: Vec<usize>,
}

impl VariableOrder {
    /// Builds an order from the sequence of variables listed rank by rank.
    pub fn from_sequence(sequence: Vec<usize>) -> Result<Self> {
        let n = sequence.len();
        let mut rank_of = vec![usize::MAX; n];
        for (rank, &v) in sequence.iter().enumerate() {
            if v >= n || rank_of[v] != usize::MAX {
                return Err(PncError::InvalidStructure(format!(
                    "variable order is not a permutation (variable {v} at rank {rank})"
                )));
            }
            rank_of[v] = rank;
        }
        Ok(VariableOrder {
            rank_of,
            var_at: sequence,
        })
    }

    pub fn len(&self) -> usize {
        self.rank_of.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rank_of.is_empty()
    }

    pub fn rank(&self, var: usize) -> usize {
        self.rank_of[var]
    }

    pub fn var_at(&self, rank: usize) -> usize {
        self.var_at[rank]
    }

    pub fn ranks(&self) -> &[usize] {
        &self.rank_of
    }

    /// Variables in rank order.
    pub fn sequence(&self) -> &[usize] {
        &self.var_at
    }

    /// Marginalization mask for every variable of rank `>= first_rank`.
    pub fn suffix_mask(&self, first_rank: usize) -> Vec<bool> {
        self.rank_of.iter().map(|&r| r >= first_rank).collect()
    }
}

/// Offending pair reported by [`validate_query`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct QueryViolation {
    pub marginalized: usize,
    pub marginalized_rank: usize,
    pub evidence: usize,
    pub evidence_rank: usize,
}

impl From<QueryViolation> for PncError {
    fn from(v: QueryViolation) -> Self {
        PncError::OrderViolation {
            marginalized: v.marginalized,
            marginalized_rank: v.marginalized_rank,
            evidence: v.evidence,
            evidence_rank: v.evidence_rank,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Dimensionality {
    Chain,
    Grid,
}

/// Immutable layered partition graph.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CircuitStructure {
    pub num_variables: usize,
    pub dimensionality: Dimensionality,
    pub layers: Vec<PartitionLayout>,
    /// Axis merged by each product step (`layers.len() - 1` entries).
    pub merge_axes: Vec<MergeAxis>,
    /// Global window size for chains; 3 (fixed half kernel) for grids.
    pub nu: usize,
    pub num_components: usize,
    pub num_leaf_components: usize,
    pub layer_kind: LayerKind,
    pub variable_order: VariableOrder,
}

/// Offsets `(row, col)` of the 3x3 half kernel, tap order.
pub const GRID_TAP_OFFSETS: [(isize, isize); 3] = [(-1, -1), (0, -1), (-1, 0)];

fn check_sizes(num_components: usize, num_leaf_components: usize) -> Result<()> {
    if num_components == 0 {
        return Err(PncError::InvalidStructure("num_components must be >= 1".into()));
    }
    if num_leaf_components == 0 {
        return Err(PncError::InvalidStructure(
            "num_leaf_components must be >= 1".into(),
        ));
    }
    Ok(())
}

fn leaf_layer(grid: GridShape) -> PartitionLayout {
    let n = grid.len();
    PartitionLayout {
        layer_index: 0,
        grid,
        scopes: (0..n).map(|v| vec![v]).collect(),
        children: Vec::new(),
        dependencies: vec![Vec::new(); n],
        num_taps: 0,
    }
}

fn merge(prev: &PartitionLayout, axis: MergeAxis) -> PartitionLayout {
    let GridShape { rows, cols } = prev.grid;
    let grid = match axis {
        MergeAxis::Column => GridShape::new(rows, cols.div_ceil(2)),
        MergeAxis::Row => GridShape::new(rows.div_ceil(2), cols),
    };
    let mut scopes = Vec::with_capacity(grid.len());
    let mut children = Vec::with_capacity(grid.len());
    for r in 0..grid.rows {
        for c in 0..grid.cols {
            let (first, second) = match axis {
                MergeAxis::Column => {
                    let a = r * cols + 2 * c;
                    let b = (2 * c + 1 < cols).then(|| a + 1);
                    (a, b)
                }
                MergeAxis::Row => {
                    let a = 2 * r * cols + c;
                    let b = (2 * r + 1 < rows).then(|| a + cols);
                    (a, b)
                }
            };
            let mut scope = prev.scopes[first].clone();
            let ch = match second {
                Some(b) => {
                    scope.extend_from_slice(&prev.scopes[b]);
                    scope.sort_unstable();
                    Children::Pair(first, b)
                }
                None => Children::PassThrough(first),
            };
            scopes.push(scope);
            children.push(ch);
        }
    }
    PartitionLayout {
        layer_index: prev.layer_index + 1,
        grid,
        dependencies: vec![Vec::new(); scopes.len()],
        scopes,
        children,
        num_taps: 0,
    }
}

fn chain_dependencies(layout: &mut PartitionLayout, nu: usize) {
    layout.num_taps = nu;
    for p in 0..layout.num_partitions() {
        let deps = &mut layout.dependencies[p];
        deps.clear();
        for tap in 0..nu {
            // tap t sits at offset t - nu
            if let Some(q) = (p + tap).checked_sub(nu) {
                deps.push(Dependency { tap, partition: q });
            }
        }
    }
}

fn grid_dependencies(layout: &mut PartitionLayout) {
    let GridShape { rows, cols } = layout.grid;
    layout.num_taps = GRID_TAP_OFFSETS.len();
    for r in 0..rows {
        for c in 0..cols {
            let p = r * cols + c;
            let mut deps = Vec::new();
            for (tap, &(dr, dc)) in GRID_TAP_OFFSETS.iter().enumerate() {
                let (rr, cc) = (r as isize + dr, c as isize + dc);
                if rr >= 0 && cc >= 0 {
                    deps.push(Dependency {
                        tap,
                        partition: rr as usize * cols + cc as usize,
                    });
                }
            }
            deps.sort_by_key(|d| d.partition);
            layout.dependencies[p] = deps;
        }
    }
}

/// Chain structure with a single window size `nu` for every internal layer.
pub fn build_1d_structure(
    num_vars: usize,
    num_components: usize,
    num_leaf_components: usize,
    nu: usize,
    layer_kind: LayerKind,
) -> Result<CircuitStructure> {
    build_1d_structure_with_windows(
        num_vars,
        num_components,
        num_leaf_components,
        nu,
        &[],
        layer_kind,
    )
}

/// Chain structure where `nu_per_layer[i]` overrides the window of the i-th
/// internal sum layer (missing entries fall back to `nu`).
pub fn build_1d_structure_with_windows(
    num_vars: usize,
    num_components: usize,
    num_leaf_components: usize,
    nu: usize,
    nu_per_layer: &[usize],
    layer_kind: LayerKind,
) -> Result<CircuitStructure> {
    if num_vars == 0 {
        return Err(PncError::InvalidStructure("zero variables".into()));
    }
    check_sizes(num_components, num_leaf_components)?;
    let mut layers = vec![leaf_layer(GridShape::new(1, num_vars))];
    let mut merge_axes = Vec::new();
    while layers.last().unwrap().num_partitions() > 1 {
        let next = merge(layers.last().unwrap(), MergeAxis::Column);
        merge_axes.push(MergeAxis::Column);
        layers.push(next);
    }
    let last = layers.len() - 1;
    if layer_kind != LayerKind::PlainSum {
        for (i, layer) in layers.iter_mut().enumerate().take(last).skip(1) {
            let window = nu_per_layer.get(i - 1).copied().unwrap_or(nu);
            chain_dependencies(layer, window);
        }
    }
    CircuitStructure::assemble(
        num_vars,
        Dimensionality::Chain,
        layers,
        merge_axes,
        nu,
        num_components,
        num_leaf_components,
        layer_kind,
    )
}

/// The grid shapes visited by alternating column/row merges (columns first).
/// An axis of size one is skipped in favour of the other.
pub fn grid_merge_plan(height: usize, width: usize) -> Vec<(MergeAxis, GridShape)> {
    let mut plan = Vec::new();
    let mut shape = GridShape::new(height, width);
    let mut preferred = MergeAxis::Column;
    while shape.len() > 1 {
        let axis = match preferred {
            MergeAxis::Column if shape.cols > 1 => MergeAxis::Column,
            MergeAxis::Row if shape.rows > 1 => MergeAxis::Row,
            MergeAxis::Column => MergeAxis::Row,
            MergeAxis::Row => MergeAxis::Column,
        };
        shape = match axis {
            MergeAxis::Column => GridShape::new(shape.rows, shape.cols.div_ceil(2)),
            MergeAxis::Row => GridShape::new(shape.rows.div_ceil(2), shape.cols),
        };
        plan.push((axis, shape));
        preferred = match axis {
            MergeAxis::Column => MergeAxis::Row,
            MergeAxis::Row => MergeAxis::Column,
        };
    }
    plan
}

/// Grid structure with the fixed 3x3 half kernel on every internal layer.
pub fn build_2d_structure(
    height: usize,
    width: usize,
    num_components: usize,
    num_leaf_components: usize,
    layer_kind: LayerKind,
) -> Result<CircuitStructure> {
    if height == 0 || width == 0 {
        return Err(PncError::InvalidStructure(format!(
            "grid must be non-empty, got {height}x{width}"
        )));
    }
    check_sizes(num_components, num_leaf_components)?;
    let mut layers = vec![leaf_layer(GridShape::new(height, width))];
    let mut merge_axes = Vec::new();
    for (axis, _) in grid_merge_plan(height, width) {
        let next = merge(layers.last().unwrap(), axis);
        merge_axes.push(axis);
        layers.push(next);
    }
    let last = layers.len() - 1;
    if layer_kind != LayerKind::PlainSum {
        for layer in layers.iter_mut().take(last).skip(1) {
            grid_dependencies(layer);
        }
    }
    CircuitStructure::assemble(
        height * width,
        Dimensionality::Grid,
        layers,
        merge_axes,
        GRID_TAP_OFFSETS.len(),
        num_components,
        num_leaf_components,
        layer_kind,
    )
}

impl CircuitStructure {
    /// Validates a hand-assembled layer stack and computes its induced order.
    #[allow(clippy::too_many_arguments)]
    pub fn assemble(
        num_variables: usize,
        dimensionality: Dimensionality,
        layers: Vec<PartitionLayout>,
        merge_axes: Vec<MergeAxis>,
        nu: usize,
        num_components: usize,
        num_leaf_components: usize,
        layer_kind: LayerKind,
    ) -> Result<Self> {
        check_sizes(num_components, num_leaf_components)?;
        validate_layers(num_variables, &layers)?;
        if merge_axes.len() + 1 != layers.len() {
            return Err(PncError::InvalidStructure(format!(
                "{} merge axes for {} layers",
                merge_axes.len(),
                layers.len()
            )));
        }
        let variable_order = compute_order(num_variables, &layers)?;
        Ok(CircuitStructure {
            num_variables,
            dimensionality,
            layers,
            merge_axes,
            nu,
            num_components,
            num_leaf_components,
            layer_kind,
            variable_order,
        })
    }

    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }

    pub fn leaf_grid(&self) -> GridShape {
        self.layers[0].grid
    }

    /// Indices of the internal sum layers (every layer except the leaf layer
    /// and the root layer).
    pub fn internal_layers(&self) -> std::ops::Range<usize> {
        1..self.layers.len().saturating_sub(1).max(1)
    }

    pub fn partition_counts(&self) -> Vec<usize> {
        self.layers.iter().map(|l| l.num_partitions()).collect()
    }

    /// Canonical textual description hashed into checkpoint fingerprints.
    pub fn canonical_description(&self) -> String {
        use std::fmt::Write;
        let mut s = String::new();
        let _ = write!(
            s,
            "vars={};dim={:?};kind={};nc={};nd={};nu={};",
            self.num_variables,
            self.dimensionality,
            self.layer_kind,
            self.num_components,
            self.num_leaf_components,
            self.nu
        );
        for (i, layer) in self.layers.iter().enumerate() {
            let _ = write!(s, "L{i}:{}:taps={}:", layer.grid, layer.num_taps);
            for (p, scope) in layer.scopes.iter().enumerate() {
                let _ = write!(s, "{scope:?}");
                if let Some(ch) = layer.children.get(p) {
                    let _ = write!(s, "<{ch:?}");
                }
                for d in &layer.dependencies[p] {
                    let _ = write!(s, "^{}.{}", d.tap, d.partition);
                }
                s.push(',');
            }
            s.push(';');
        }
        s
    }
}

fn validate_layers(num_variables: usize, layers: &[PartitionLayout]) -> Result<()> {
    let invalid = |m: String| Err(PncError::InvalidStructure(m));
    if num_variables == 0 {
        return invalid("zero variables".into());
    }
    let Some(first) = layers.first() else {
        return invalid("no layers".into());
    };
    if first.num_partitions() != num_variables
        || first.scopes.iter().enumerate().any(|(v, s)| s != &[v])
    {
        return invalid("leaf layer must hold one partition per variable in id order".into());
    }
    if layers.last().unwrap().num_partitions() != 1 {
        return invalid("final layer must have exactly one partition".into());
    }
    for (l, layer) in layers.iter().enumerate() {
        if layer.grid.len() != layer.num_partitions() {
            return invalid(format!("layer {l}: grid {} does not match partition count", layer.grid));
        }
        if layer.dependencies.len() != layer.num_partitions() {
            return invalid(format!("layer {l}: dependency table has wrong length"));
        }
        let mut seen = vec![false; num_variables];
        for scope in &layer.scopes {
            for &v in scope {
                if v >= num_variables || seen[v] {
                    return invalid(format!("layer {l}: scopes overlap or exceed variable range"));
                }
                seen[v] = true;
            }
        }
        if seen.iter().any(|s| !s) {
            return invalid(format!("layer {l}: scopes do not cover all variables"));
        }
        for (p, deps) in layer.dependencies.iter().enumerate() {
            for d in deps {
                if d.partition >= p {
                    return invalid(format!(
                        "layer {l}: partition {p} depends on non-earlier partition {}",
                        d.partition
                    ));
                }
                if d.tap >= layer.num_taps {
                    return invalid(format!("layer {l}: tap {} out of range", d.tap));
                }
            }
        }
        if l == 0 {
            if !layer.children.is_empty() {
                return invalid("leaf layer cannot have children".into());
            }
            continue;
        }
        let prev = &layers[l - 1];
        if layer.children.len() != layer.num_partitions() {
            return invalid(format!("layer {l}: children table has wrong length"));
        }
        let mut used = vec![false; prev.num_partitions()];
        for (p, ch) in layer.children.iter().enumerate() {
            let mut scope: Vec<usize> = Vec::new();
            for c in [Some(ch.first()), ch.second()].into_iter().flatten() {
                if c >= used.len() || used[c] {
                    return invalid(format!("layer {l}: child {c} reused or out of range"));
                }
                used[c] = true;
                scope.extend_from_slice(&prev.scopes[c]);
            }
            scope.sort_unstable();
            if scope != layer.scopes[p] {
                return invalid(format!("layer {l}: scope of partition {p} != union of children"));
            }
        }
        if used.iter().any(|u| !u) {
            return invalid(format!("layer {l}: some partitions of layer {} unused", l - 1));
        }
    }
    Ok(())
}

/// Depth-first traversal of the partition tree, first child before second.
fn tree_order(layers: &[PartitionLayout]) -> Vec<usize> {
    let mut out = Vec::new();
    let mut stack = vec![(layers.len() - 1, 0usize)];
    while let Some((l, p)) = stack.pop() {
        if l == 0 {
            out.push(p);
            continue;
        }
        let ch = layers[l].children[p];
        if let Some(b) = ch.second() {
            stack.push((l - 1, b));
        }
        stack.push((l - 1, ch.first()));
    }
    out
}

/// Topological sort over variable-level constraints implied by dependency
/// edges, ties broken by partition-tree position (or by variable id when no
/// edge constrains the order).
fn compute_order(num_variables: usize, layers: &[PartitionLayout]) -> Result<VariableOrder> {
    let has_edges = layers.iter().any(|l| l.has_dependencies());
    let priority: Vec<usize> = if has_edges {
        let mut pos = vec![0; num_variables];
        for (i, v) in tree_order(layers).into_iter().enumerate() {
            pos[v] = i;
        }
        pos
    } else {
        (0..num_variables).collect()
    };

    // Nodes 0..n are variables; each dependency edge A -> B adds a hub node
    // with edges scope(A) -> hub -> scope(B).
    let mut succ: Vec<Vec<usize>> = vec![Vec::new(); num_variables];
    let mut indegree = vec![0usize; num_variables];
    for layer in layers {
        for (p, deps) in layer.dependencies.iter().enumerate() {
            for d in deps {
                let hub = succ.len();
                succ.push(layer.scopes[p].clone());
                indegree.push(layer.scopes[d.partition].len());
                for &v in &layer.scopes[p] {
                    indegree[v] += 1;
                }
                for &v in &layer.scopes[d.partition] {
                    succ[v].push(hub);
                }
            }
        }
    }

    // hubs (class 0) are drained before any variable (class 1)
    let key = |node: usize| {
        if node < num_variables {
            (1usize, priority[node])
        } else {
            (0, node)
        }
    };
    let mut heap: BinaryHeap<Reverse<((usize, usize), usize)>> = (0..succ.len())
        .filter(|&n| indegree[n] == 0)
        .map(|n| Reverse((key(n), n)))
        .collect();
    let mut sequence = Vec::with_capacity(num_variables);
    let mut processed = 0;
    while let Some(Reverse((_, node))) = heap.pop() {
        processed += 1;
        if node < num_variables {
            sequence.push(node);
        }
        for i in 0..succ[node].len() {
            let next = succ[node][i];
            indegree[next] -= 1;
            if indegree[next] == 0 {
                heap.push(Reverse((key(next), next)));
            }
        }
    }
    if processed != succ.len() {
        return Err(PncError::InvalidStructure(
            "cycle detected in dependency edges".into(),
        ));
    }
    VariableOrder::from_sequence(sequence)
}

/// Returns the structure's induced variable order.
pub fn induced_order(structure: &CircuitStructure) -> Result<VariableOrder> {
    compute_order(structure.num_variables, &structure.layers)
}

/// Accepts a marginalized set iff it is a suffix of the induced order.
pub fn validate_query(
    structure: &CircuitStructure,
    marginalized: &[bool],
) -> std::result::Result<(), QueryViolation> {
    let order = &structure.variable_order;
    let first_marg = (0..order.len())
        .map(|r| order.var_at(r))
        .find(|&v| marginalized[v]);
    let last_evid = (0..order.len())
        .rev()
        .map(|r| order.var_at(r))
        .find(|&v| !marginalized[v]);
    match (first_marg, last_evid) {
        (Some(m), Some(e)) if order.rank(m) < order.rank(e) => Err(QueryViolation {
            marginalized: m,
            marginalized_rank: order.rank(m),
            evidence: e,
            evidence_rank: order.rank(e),
        }),
        _ => Ok(()),
    }
}

/// Checks the per-layer invariants of a built structure: disjoint covering
/// scopes and dependency edges that respect the induced order.
pub fn check_invariants(structure: &CircuitStructure) -> Result<()> {
    validate_layers(structure.num_variables, &structure.layers)?;
    let order = &structure.variable_order;
    for (l, layer) in structure.layers.iter().enumerate() {
        for (p, deps) in layer.dependencies.iter().enumerate() {
            for d in deps {
                let max_src = layer.scopes[d.partition].iter().map(|&v| order.rank(v)).max();
                let min_dst = layer.scopes[p].iter().map(|&v| order.rank(v)).min();
                if max_src >= min_dst {
                    return Err(PncError::InvalidStructure(format!(
                        "layer {l}: edge {} -> {p} violates the induced order",
                        d.partition
                    )));
                }
            }
        }
    }
    Ok(())
}
