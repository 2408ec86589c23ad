//! Forward evaluation, forward-mode (dual) derivatives, and reverse-mode
//! gradients. A [`Workspace`] holds per-node buffers sized once per graph so
//! repeated evaluation allocates nothing.

use std::collections::BTreeMap;

use super::graph::{Bindings, Graph, NodeId, NodeKind, Shape, Value};
use super::ExprError;

/// Value and its derivative along the single scalar input.
#[derive(Debug, Clone, PartialEq)]
pub struct DualValue {
    pub value: Value,
    pub tangent: Value,
}

/// One gradient tensor per parameter leaf, shape-matched, keyed by name.
/// Ordered map so iteration (and any reduction over it) is deterministic.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct GradientSet {
    entries: BTreeMap<String, Value>,
}

impl GradientSet {
    /// Zero gradients for every parameter leaf of the graph.
    pub fn for_graph(graph: &Graph) -> Self {
        let mut entries = BTreeMap::new();
        for node in &graph.nodes {
            if let NodeKind::Param(name) = &node.kind {
                entries.insert(name.clone(), Value::zeros(node.shape));
            }
        }
        GradientSet { entries }
    }

    pub fn get(&self, name: &str) -> Option<&Value> {
        self.entries.get(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Value)> {
        self.entries.iter()
    }

    pub fn fill_zero(&mut self) {
        for v in self.entries.values_mut() {
            v.fill_zero();
        }
    }

    pub fn scale(&mut self, c: f64) {
        for v in self.entries.values_mut() {
            for x in v.data_mut() {
                *x *= c;
            }
        }
    }

    /// Euclidean norm over all entries, used in diagnostics.
    pub fn l2_norm(&self) -> f64 {
        let mut s = 0.0;
        for v in self.entries.values() {
            for x in v.data() {
                s += x * x;
            }
        }
        s.sqrt()
    }

    pub(crate) fn accumulate(&mut self, name: &str, contribution: &Value, weight: f64) {
        if let Some(slot) = self.entries.get_mut(name) {
            for (dst, src) in slot.data_mut().iter_mut().zip(contribution.data()) {
                *dst += weight * src;
            }
        }
    }
}

/// Reusable per-node buffers for one graph.
#[derive(Debug, Clone)]
pub struct Workspace {
    graph_len: usize,
    vals: Vec<Value>,
    tans: Vec<Value>,
    adjs: Vec<Value>,
}

impl Workspace {
    pub fn for_graph(graph: &Graph) -> Self {
        let vals = graph
            .nodes
            .iter()
            .map(|n| match &n.kind {
                NodeKind::Constant(v) => v.clone(),
                _ => Value::zeros(n.shape),
            })
            .collect();
        Workspace {
            graph_len: graph.len(),
            vals,
            tans: Vec::new(),
            adjs: Vec::new(),
        }
    }

    pub fn value(&self, id: NodeId) -> &Value {
        &self.vals[id.0]
    }

    fn ensure_tangents(&mut self, graph: &Graph) {
        if self.tans.is_empty() {
            self.tans = graph.nodes.iter().map(|n| Value::zeros(n.shape)).collect();
        }
    }

    fn ensure_adjoints(&mut self, graph: &Graph) {
        if self.adjs.is_empty() {
            self.adjs = graph.nodes.iter().map(|n| Value::zeros(n.shape)).collect();
        }
    }
}

fn sign0(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

impl Graph {
    pub fn workspace(&self) -> Workspace {
        Workspace::for_graph(self)
    }

    /// Single forward pass; deterministic and allocation-free given a
    /// reused workspace.
    pub fn eval_in(
        &self,
        root: NodeId,
        bindings: &Bindings,
        scalar_override: Option<(&str, f64)>,
        ws: &mut Workspace,
    ) -> Result<(), ExprError> {
        assert_eq!(ws.graph_len, self.len(), "workspace built for another graph");
        for i in 0..=root.0 {
            self.forward_node(i, bindings, scalar_override, &mut ws.vals)?;
        }
        Ok(())
    }

    pub fn eval(&self, root: NodeId, bindings: &Bindings) -> Result<Value, ExprError> {
        let mut ws = self.workspace();
        self.eval_in(root, bindings, None, &mut ws)?;
        Ok(ws.vals[root.0].clone())
    }

    pub fn eval_scalar(&self, root: NodeId, bindings: &Bindings) -> Result<f64, ExprError> {
        Ok(self.eval(root, bindings)?.as_scalar())
    }

    /// Forward pass carrying the exact derivative with respect to the unique
    /// scalar input, which is bound to `t`.
    pub fn eval_dual(
        &self,
        root: NodeId,
        t: f64,
        bindings: &Bindings,
    ) -> Result<DualValue, ExprError> {
        let mut ws = self.workspace();
        self.eval_dual_in(root, t, bindings, &mut ws)?;
        Ok(DualValue {
            value: ws.vals[root.0].clone(),
            tangent: ws.tans[root.0].clone(),
        })
    }

    pub fn eval_dual_in(
        &self,
        root: NodeId,
        t: f64,
        bindings: &Bindings,
        ws: &mut Workspace,
    ) -> Result<(), ExprError> {
        assert_eq!(ws.graph_len, self.len(), "workspace built for another graph");
        let dual_name = self.unique_scalar_input(root)?;
        ws.ensure_tangents(self);
        for i in 0..=root.0 {
            self.forward_node(i, bindings, Some((&dual_name, t)), &mut ws.vals)?;
            self.tangent_node(i, &ws.vals, &mut ws.tans);
        }
        Ok(())
    }

    /// Reverse-mode gradient of a scalar root with respect to every
    /// parameter leaf.
    pub fn grad(&self, root: NodeId, bindings: &Bindings) -> Result<GradientSet, ExprError> {
        let mut out = GradientSet::for_graph(self);
        let mut ws = self.workspace();
        self.grad_accumulate(root, bindings, None, &mut ws, &mut out, 1.0)?;
        Ok(out)
    }

    /// Forward + reverse pass; adds `weight` times the gradient into `out`
    /// and returns the root value. Batched losses sum samples in call order,
    /// so results do not depend on any parallel schedule.
    pub fn grad_accumulate(
        &self,
        root: NodeId,
        bindings: &Bindings,
        scalar_override: Option<(&str, f64)>,
        ws: &mut Workspace,
        out: &mut GradientSet,
        weight: f64,
    ) -> Result<f64, ExprError> {
        if self.shape(root) != Shape::Scalar {
            return Err(ExprError::NonScalarRoot);
        }
        self.eval_in(root, bindings, scalar_override, ws)?;
        ws.ensure_adjoints(self);
        for adj in ws.adjs.iter_mut().take(root.0 + 1) {
            adj.fill_zero();
        }
        ws.adjs[root.0] = Value::Scalar(1.0);
        for i in (0..=root.0).rev() {
            self.reverse_node(i, &ws.vals, &mut ws.adjs);
        }
        for i in 0..=root.0 {
            if let NodeKind::Param(name) = &self.nodes[i].kind {
                out.accumulate(name, &ws.adjs[i], weight);
            }
        }
        Ok(ws.vals[root.0].as_scalar())
    }

    /// The unique scalar-input name reachable under `root`.
    fn unique_scalar_input(&self, root: NodeId) -> Result<String, ExprError> {
        let mut found: Option<&str> = None;
        for node in self.nodes.iter().take(root.0 + 1) {
            if let NodeKind::InputScalar(name) = &node.kind {
                match found {
                    None => found = Some(name),
                    Some(prev) if prev == name => {}
                    Some(prev) => {
                        return Err(ExprError::MultipleDualInputs(
                            prev.to_string(),
                            name.clone(),
                        ))
                    }
                }
            }
        }
        found.map(str::to_string).ok_or(ExprError::NoDualInput)
    }

    fn forward_node(
        &self,
        i: usize,
        bindings: &Bindings,
        scalar_override: Option<(&str, f64)>,
        vals: &mut [Value],
    ) -> Result<(), ExprError> {
        let node = &self.nodes[i];
        let (head, rest) = vals.split_at_mut(i);
        let out = &mut rest[0];
        match &node.kind {
            NodeKind::Constant(_) => {} // pre-filled by Workspace::for_graph
            NodeKind::InputScalar(name) => {
                let v = match scalar_override {
                    Some((n, t)) if n == name => t,
                    _ => bindings
                        .get(name)
                        .ok_or_else(|| ExprError::UnboundInput(name.clone()))?
                        .as_scalar(),
                };
                *out = Value::Scalar(v);
            }
            NodeKind::Param(name) => {
                let v = bindings
                    .get(name)
                    .ok_or_else(|| ExprError::UnboundInput(name.clone()))?;
                if v.shape() != node.shape {
                    return Err(ExprError::BindingShape { name: name.clone() });
                }
                out.clone_from(v);
            }
            NodeKind::Add(a, b) => {
                let (a, b) = (head[a.0].data(), head[b.0].data());
                for (o, (x, y)) in out.data_mut().iter_mut().zip(a.iter().zip(b)) {
                    *o = x + y;
                }
            }
            NodeKind::Sub(a, b) => {
                let (a, b) = (head[a.0].data(), head[b.0].data());
                for (o, (x, y)) in out.data_mut().iter_mut().zip(a.iter().zip(b)) {
                    *o = x - y;
                }
            }
            NodeKind::Neg(a) => {
                for (o, x) in out.data_mut().iter_mut().zip(head[a.0].data()) {
                    *o = -x;
                }
            }
            NodeKind::Mul(a, b) => {
                let (a, b) = (head[a.0].data(), head[b.0].data());
                for (o, (x, y)) in out.data_mut().iter_mut().zip(a.iter().zip(b)) {
                    *o = x * y;
                }
            }
            NodeKind::Scale(s, v) => {
                let c = head[s.0].as_scalar();
                for (o, x) in out.data_mut().iter_mut().zip(head[v.0].data()) {
                    *o = c * x;
                }
            }
            NodeKind::MatVec(m, v) => {
                let mat = head[m.0].as_matrix();
                let x = head[v.0].as_vector();
                match out {
                    Value::Vector(y) => mat.matvec_into(x, y),
                    _ => unreachable!("matvec output is a vector"),
                }
            }
            NodeKind::Dot(a, b) => {
                let (a, b) = (head[a.0].as_vector(), head[b.0].as_vector());
                *out = Value::Scalar(crate::linalg::dot(a, b));
            }
            NodeKind::Tanh(a) => {
                for (o, x) in out.data_mut().iter_mut().zip(head[a.0].data()) {
                    *o = x.tanh();
                }
            }
            NodeKind::Exp(a) => {
                for (o, x) in out.data_mut().iter_mut().zip(head[a.0].data()) {
                    *o = x.exp();
                }
            }
            NodeKind::Abs(a) => {
                for (o, x) in out.data_mut().iter_mut().zip(head[a.0].data()) {
                    *o = x.abs();
                }
            }
            NodeKind::Relu(a) => {
                for (o, x) in out.data_mut().iter_mut().zip(head[a.0].data()) {
                    *o = x.max(0.0);
                }
            }
            NodeKind::Clamp(a, lo, hi) => {
                let xs = head[a.0].data();
                for (k, o) in out.data_mut().iter_mut().enumerate() {
                    *o = xs[k].max(lo[k]).min(hi[k]);
                }
            }
            NodeKind::SignSelect(a) => {
                for (o, x) in out.data_mut().iter_mut().zip(head[a.0].data()) {
                    *o = sign0(*x);
                }
            }
            NodeKind::Recip(a) => {
                for (o, x) in out.data_mut().iter_mut().zip(head[a.0].data()) {
                    *o = 1.0 / x;
                }
            }
            NodeKind::NormSq(a) => {
                let x = head[a.0].as_vector();
                *out = Value::Scalar(crate::linalg::dot(x, x));
            }
            NodeKind::Norm(a) => {
                let x = head[a.0].as_vector();
                *out = Value::Scalar(crate::linalg::dot(x, x).sqrt());
            }
        }
        Ok(())
    }

    /// Tangent of node `i` given tangents of its operands; piecewise
    /// primitives use the module's fixed selections.
    fn tangent_node(&self, i: usize, vals: &[Value], tans: &mut [Value]) {
        let node = &self.nodes[i];
        let (head, rest) = tans.split_at_mut(i);
        let out = &mut rest[0];
        match &node.kind {
            NodeKind::Constant(_) | NodeKind::Param(_) => out.fill_zero(),
            NodeKind::InputScalar(_) => *out = Value::Scalar(1.0),
            NodeKind::Add(a, b) => {
                let (a, b) = (head[a.0].data(), head[b.0].data());
                for (o, (x, y)) in out.data_mut().iter_mut().zip(a.iter().zip(b)) {
                    *o = x + y;
                }
            }
            NodeKind::Sub(a, b) => {
                let (a, b) = (head[a.0].data(), head[b.0].data());
                for (o, (x, y)) in out.data_mut().iter_mut().zip(a.iter().zip(b)) {
                    *o = x - y;
                }
            }
            NodeKind::Neg(a) => {
                for (o, x) in out.data_mut().iter_mut().zip(head[a.0].data()) {
                    *o = -x;
                }
            }
            NodeKind::Mul(a, b) => {
                let (ta, tb) = (head[a.0].data(), head[b.0].data());
                let (va, vb) = (vals[a.0].data(), vals[b.0].data());
                for (k, o) in out.data_mut().iter_mut().enumerate() {
                    *o = ta[k] * vb[k] + va[k] * tb[k];
                }
            }
            NodeKind::Scale(s, v) => {
                let (ts, vs) = (head[s.0].as_scalar(), vals[s.0].as_scalar());
                let (tv, vv) = (head[v.0].data(), vals[v.0].data());
                for (k, o) in out.data_mut().iter_mut().enumerate() {
                    *o = ts * vv[k] + vs * tv[k];
                }
            }
            NodeKind::MatVec(m, v) => {
                let tm = head[m.0].as_matrix();
                let vm = vals[m.0].as_matrix();
                let tv = head[v.0].as_vector();
                let vv = vals[v.0].as_vector();
                match out {
                    Value::Vector(y) => {
                        vm.matvec_into(tv, y);
                        let extra = tm.matvec(vv);
                        for (o, e) in y.iter_mut().zip(&extra) {
                            *o += e;
                        }
                    }
                    _ => unreachable!(),
                }
            }
            NodeKind::Dot(a, b) => {
                let s = crate::linalg::dot(head[a.0].as_vector(), vals[b.0].as_vector())
                    + crate::linalg::dot(vals[a.0].as_vector(), head[b.0].as_vector());
                *out = Value::Scalar(s);
            }
            NodeKind::Tanh(a) => {
                let tx = head[a.0].data();
                let y = vals[i].data();
                for (k, o) in out.data_mut().iter_mut().enumerate() {
                    *o = (1.0 - y[k] * y[k]) * tx[k];
                }
            }
            NodeKind::Exp(a) => {
                let tx = head[a.0].data();
                let y = vals[i].data();
                for (k, o) in out.data_mut().iter_mut().enumerate() {
                    *o = y[k] * tx[k];
                }
            }
            NodeKind::Abs(a) => {
                let tx = head[a.0].data();
                let x = vals[a.0].data();
                for (k, o) in out.data_mut().iter_mut().enumerate() {
                    *o = sign0(x[k]) * tx[k];
                }
            }
            NodeKind::Relu(a) => {
                let tx = head[a.0].data();
                let x = vals[a.0].data();
                for (k, o) in out.data_mut().iter_mut().enumerate() {
                    *o = if x[k] > 0.0 { tx[k] } else { 0.0 };
                }
            }
            NodeKind::Clamp(a, lo, hi) => {
                let tx = head[a.0].data();
                let x = vals[a.0].data();
                for (k, o) in out.data_mut().iter_mut().enumerate() {
                    *o = if lo[k] < x[k] && x[k] < hi[k] { tx[k] } else { 0.0 };
                }
            }
            NodeKind::SignSelect(_) => out.fill_zero(),
            NodeKind::Recip(a) => {
                let tx = head[a.0].data();
                let y = vals[i].data();
                for (k, o) in out.data_mut().iter_mut().enumerate() {
                    *o = -y[k] * y[k] * tx[k];
                }
            }
            NodeKind::NormSq(a) => {
                let s = 2.0 * crate::linalg::dot(vals[a.0].as_vector(), head[a.0].as_vector());
                *out = Value::Scalar(s);
            }
            NodeKind::Norm(a) => {
                let y = vals[i].as_scalar();
                let s = if y > 0.0 {
                    crate::linalg::dot(vals[a.0].as_vector(), head[a.0].as_vector()) / y
                } else {
                    0.0
                };
                *out = Value::Scalar(s);
            }
        }
    }

    /// Scatter the adjoint of node `i` into its operands.
    fn reverse_node(&self, i: usize, vals: &[Value], adjs: &mut [Value]) {
        let node = &self.nodes[i];
        let (head, rest) = adjs.split_at_mut(i);
        let adj = &rest[0];
        match &node.kind {
            NodeKind::Constant(_) | NodeKind::InputScalar(_) | NodeKind::Param(_) => {}
            NodeKind::Add(a, b) => {
                for (o, x) in head[a.0].data_mut().iter_mut().zip(adj.data()) {
                    *o += x;
                }
                for (o, x) in head[b.0].data_mut().iter_mut().zip(adj.data()) {
                    *o += x;
                }
            }
            NodeKind::Sub(a, b) => {
                for (o, x) in head[a.0].data_mut().iter_mut().zip(adj.data()) {
                    *o += x;
                }
                for (o, x) in head[b.0].data_mut().iter_mut().zip(adj.data()) {
                    *o -= x;
                }
            }
            NodeKind::Neg(a) => {
                for (o, x) in head[a.0].data_mut().iter_mut().zip(adj.data()) {
                    *o -= x;
                }
            }
            NodeKind::Mul(a, b) => {
                let (a, b) = (a.0, b.0);
                let adj = adj.data();
                if a == b {
                    let va = vals[a].data().to_vec();
                    for (k, o) in head[a].data_mut().iter_mut().enumerate() {
                        *o += 2.0 * adj[k] * va[k];
                    }
                } else {
                    let (va, vb) = (vals[a].data(), vals[b].data());
                    for (k, o) in head[a].data_mut().iter_mut().enumerate() {
                        *o += adj[k] * vb[k];
                    }
                    for (k, o) in head[b].data_mut().iter_mut().enumerate() {
                        *o += adj[k] * va[k];
                    }
                }
            }
            NodeKind::Scale(s, v) => {
                let c = vals[s.0].as_scalar();
                let adj_d = adj.data();
                let vv = vals[v.0].data();
                let mut ds = 0.0;
                for k in 0..adj_d.len() {
                    ds += adj_d[k] * vv[k];
                }
                *head[s.0].data_mut().first_mut().unwrap() += ds;
                for (k, o) in head[v.0].data_mut().iter_mut().enumerate() {
                    *o += c * adj_d[k];
                }
            }
            NodeKind::MatVec(m, v) => {
                let adj_v = adj.as_vector();
                let mat = vals[m.0].as_matrix();
                let x = vals[v.0].as_vector();
                let (rows, cols) = (mat.rows(), mat.cols());
                // adjoint of the matrix: outer product adj (x)^T
                if let Value::Matrix(am) = &mut head[m.0] {
                    let data = am.data_mut();
                    for r in 0..rows {
                        let ar = adj_v[r];
                        if ar != 0.0 {
                            let row = &mut data[r * cols..(r + 1) * cols];
                            for c in 0..cols {
                                row[c] += ar * x[c];
                            }
                        }
                    }
                }
                // adjoint of the vector: M^T adj
                let av = head[v.0].data_mut();
                for r in 0..rows {
                    let ar = adj_v[r];
                    if ar != 0.0 {
                        let row = mat.row(r);
                        for c in 0..cols {
                            av[c] += ar * row[c];
                        }
                    }
                }
            }
            NodeKind::Dot(a, b) => {
                let s = adj.as_scalar();
                let (a, b) = (a.0, b.0);
                if a == b {
                    let va = vals[a].data().to_vec();
                    for (k, o) in head[a].data_mut().iter_mut().enumerate() {
                        *o += 2.0 * s * va[k];
                    }
                } else {
                    let (va, vb) = (vals[a].data(), vals[b].data());
                    for (k, o) in head[a].data_mut().iter_mut().enumerate() {
                        *o += s * vb[k];
                    }
                    for (k, o) in head[b].data_mut().iter_mut().enumerate() {
                        *o += s * va[k];
                    }
                }
            }
            NodeKind::Tanh(a) => {
                let y = vals[i].data();
                let adj = adj.data();
                for (k, o) in head[a.0].data_mut().iter_mut().enumerate() {
                    *o += adj[k] * (1.0 - y[k] * y[k]);
                }
            }
            NodeKind::Exp(a) => {
                let y = vals[i].data();
                let adj = adj.data();
                for (k, o) in head[a.0].data_mut().iter_mut().enumerate() {
                    *o += adj[k] * y[k];
                }
            }
            NodeKind::Abs(a) => {
                let x = vals[a.0].data();
                let adj = adj.data();
                for (k, o) in head[a.0].data_mut().iter_mut().enumerate() {
                    *o += adj[k] * sign0(x[k]);
                }
            }
            NodeKind::Relu(a) => {
                let x = vals[a.0].data();
                let adj = adj.data();
                for (k, o) in head[a.0].data_mut().iter_mut().enumerate() {
                    if x[k] > 0.0 {
                        *o += adj[k];
                    }
                }
            }
            NodeKind::Clamp(a, lo, hi) => {
                let x = vals[a.0].data();
                let adj = adj.data();
                for (k, o) in head[a.0].data_mut().iter_mut().enumerate() {
                    if lo[k] < x[k] && x[k] < hi[k] {
                        *o += adj[k];
                    }
                }
            }
            NodeKind::SignSelect(_) => {}
            NodeKind::Recip(a) => {
                let y = vals[i].data();
                let adj = adj.data();
                for (k, o) in head[a.0].data_mut().iter_mut().enumerate() {
                    *o -= adj[k] * y[k] * y[k];
                }
            }
            NodeKind::NormSq(a) => {
                let s = adj.as_scalar();
                let x = vals[a.0].data();
                for (k, o) in head[a.0].data_mut().iter_mut().enumerate() {
                    *o += 2.0 * s * x[k];
                }
            }
            NodeKind::Norm(a) => {
                let y = vals[i].as_scalar();
                if y > 0.0 {
                    let s = adj.as_scalar() / y;
                    let x = vals[a.0].data();
                    for (k, o) in head[a.0].data_mut().iter_mut().enumerate() {
                        *o += s * x[k];
                    }
                }
            }
        }
    }
}
