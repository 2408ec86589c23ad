//! The neural approximate state solution: a one-hidden-layer tanh network
//! wrapped so the initial condition holds by construction,
//!
//! y(t; w) = y0 + (1 - e^{-t}) N(t; w),
//!
//! which pins y(0) = y0 bit-exactly for any parameters. The time derivative
//! is available in closed form and through the engine's dual pass; both
//! agree because they run the same primitive sequence.

use std::fmt::Write as _;
use std::path::Path;

use rand::Rng;
use thiserror::Error;

use crate::autodiff::{Bindings, Graph, NodeId, Shape, Value};
use crate::linalg::Mat;
use crate::problems::{AffineSet, BoxSet};

pub const DEFAULT_HIDDEN: usize = 100;

pub const W1: &str = "w1";
pub const B1: &str = "b1";
pub const W2: &str = "w2";
pub const B2: &str = "b2";
pub const TIME: &str = "t";

/// Parameters of the one-hidden-layer network N(t): the first layer is the
/// h x 1 column `w1` (stored flat), the output layer is `w2` (n x h).
#[derive(Debug, Clone, PartialEq)]
pub struct MlpParams {
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub w2: Mat,
    pub b2: Vec<f64>,
}

impl MlpParams {
    pub fn zeros(state_dim: usize, hidden: usize) -> Self {
        MlpParams {
            w1: vec![0.0; hidden],
            b1: vec![0.0; hidden],
            w2: Mat::zeros(state_dim, hidden),
            b2: vec![0.0; state_dim],
        }
    }

    /// Symmetric uniform init on +-sqrt(6 / (fan_in + fan_out)) per layer,
    /// biases zero. Seeded by the caller, so runs reproduce exactly.
    pub fn init<R: Rng>(state_dim: usize, hidden: usize, rng: &mut R) -> Self {
        let bound1 = (6.0 / (1.0 + hidden as f64)).sqrt();
        let bound2 = (6.0 / (hidden as f64 + state_dim as f64)).sqrt();
        let w1 = (0..hidden).map(|_| rng.random_range(-bound1..bound1)).collect();
        let w2 = Mat::from_vec(
            state_dim,
            hidden,
            (0..state_dim * hidden)
                .map(|_| rng.random_range(-bound2..bound2))
                .collect(),
        );
        MlpParams {
            w1,
            b1: vec![0.0; hidden],
            w2,
            b2: vec![0.0; state_dim],
        }
    }

    pub fn hidden_dim(&self) -> usize {
        self.w1.len()
    }

    pub fn state_dim(&self) -> usize {
        self.b2.len()
    }

    /// Raw network output W2 tanh(w1 t + b1) + b2, evaluated directly.
    pub fn forward(&self, t: f64) -> Vec<f64> {
        let h = self.hidden_dim();
        let n = self.state_dim();
        let mut act = vec![0.0; h];
        for i in 0..h {
            act[i] = (t * self.w1[i] + self.b1[i]).tanh();
        }
        let mut out = vec![0.0; n];
        for r in 0..n {
            let row = self.w2.row(r);
            let mut acc = 0.0;
            for i in 0..h {
                acc += row[i] * act[i];
            }
            out[r] = acc + self.b2[r];
        }
        out
    }

    /// Write parameter values into evaluation bindings (creating or
    /// overwriting the four named slots).
    pub fn bind(&self, bindings: &mut Bindings) {
        for (name, value) in [
            (W1, Value::Vector(self.w1.clone())),
            (B1, Value::Vector(self.b1.clone())),
            (W2, Value::Matrix(self.w2.clone())),
            (B2, Value::Vector(self.b2.clone())),
        ] {
            match bindings.get_mut(name) {
                Some(slot) if slot.shape() == value.shape() => {
                    slot.data_mut().copy_from_slice(value.data())
                }
                _ => bindings.set(name, value),
            }
        }
    }

    pub fn all_finite(&self) -> bool {
        self.w1
            .iter()
            .chain(&self.b1)
            .chain(self.w2.data())
            .chain(&self.b2)
            .all(|x| x.is_finite())
    }
}

/// Endpoint projection choice, fixed per problem class.
#[derive(Debug, Clone)]
pub enum Projection {
    Identity,
    Box(BoxSet),
    NonnegOrthant,
    /// Project the leading `set.dim()` components onto Ax = b; any trailing
    /// (dual) components pass through unchanged.
    AffinePrefix(AffineSet),
}

impl Projection {
    pub fn apply(&self, y: &[f64]) -> Vec<f64> {
        match self {
            Projection::Identity => y.to_vec(),
            Projection::Box(omega) => omega.project(y),
            Projection::NonnegOrthant => y.iter().map(|v| v.max(0.0)).collect(),
            Projection::AffinePrefix(set) => {
                let j = set.dim();
                assert!(j <= y.len(), "projection dimension mismatch");
                let mut out = set.project(&y[..j]);
                out.extend_from_slice(&y[j..]);
                out
            }
        }
    }
}

/// Network parameters plus initial point and horizon; evaluable as an
/// approximate state solution y(t; w) on [0, horizon].
#[derive(Debug, Clone)]
pub struct StateNet {
    pub params: MlpParams,
    pub y0: Vec<f64>,
    pub horizon: f64,
}

impl StateNet {
    pub fn new(params: MlpParams, y0: Vec<f64>, horizon: f64) -> Self {
        assert_eq!(params.state_dim(), y0.len(), "state dimension mismatch");
        assert!(horizon > 0.0, "horizon must be positive");
        StateNet { params, y0, horizon }
    }

    pub fn state_dim(&self) -> usize {
        self.y0.len()
    }

    /// y(t) = y0 + (1 - e^{-t}) N(t). At t = 0 this returns y0 bit-exactly.
    pub fn forward(&self, t: f64) -> Vec<f64> {
        let s = 1.0 - (-t).exp();
        let n = self.params.forward(t);
        self.y0.iter().zip(&n).map(|(y0, ni)| y0 + s * ni).collect()
    }

    /// dy/dt = e^{-t} N(t) + (1 - e^{-t}) dN/dt, computed through the
    /// engine's dual pass over the model graph.
    pub fn time_derivative(&self, t: f64) -> Vec<f64> {
        let mg = ModelGraph::new(&self.y0, self.params.hidden_dim());
        let mut bindings = Bindings::new();
        self.params.bind(&mut bindings);
        let dual = mg
            .graph
            .eval_dual(mg.y, t, &bindings)
            .expect("model graph evaluates on its own parameters");
        dual.tangent.data().to_vec()
    }

    /// Endpoint prediction: the chosen projection applied to y(horizon).
    pub fn predict(&self, projection: &Projection) -> Vec<f64> {
        projection.apply(&self.forward(self.horizon))
    }
}

/// The model as an expression graph: input scalar `t`, parameter leaves
/// `w1`, `b1`, `w2`, `b2`, and roots for N(t), y(t), and the closed-form
/// dy/dt. The trainer splices a vector field on top of these.
pub struct ModelGraph {
    pub graph: Graph,
    pub t: NodeId,
    pub network: NodeId,
    pub y: NodeId,
    pub dy: NodeId,
}

impl ModelGraph {
    pub fn new(y0: &[f64], hidden: usize) -> Self {
        let n = y0.len();
        let mut g = Graph::new();
        let t = g.input_scalar(TIME);
        let w1 = g.param(W1, Shape::Vector(hidden));
        let b1 = g.param(B1, Shape::Vector(hidden));
        let w2 = g.param(W2, Shape::Matrix(n, hidden));
        let b2 = g.param(B2, Shape::Vector(n));

        let built = (|| -> Result<(NodeId, NodeId, NodeId), crate::autodiff::ExprError> {
            let pre = g.scale(t, w1)?;
            let z = g.add(pre, b1)?;
            let act = g.tanh(z);
            let wa = g.matvec(w2, act)?;
            let network = g.add(wa, b2)?;

            let neg_t = g.neg(t);
            let decay = g.exp(neg_t); // e^{-t}
            let one = g.scalar(1.0);
            let ramp = g.sub(one, decay)?; // 1 - e^{-t}
            let y0c = g.vector(y0);
            let lifted = g.scale(ramp, network)?;
            let y = g.add(y0c, lifted)?;

            // dN/dt = W2 [(1 - tanh^2 z) (.) w1]
            let ones = g.vector(&vec![1.0; hidden]);
            let act_sq = g.mul(act, act)?;
            let gain = g.sub(ones, act_sq)?;
            let inner = g.mul(gain, w1)?;
            let dn = g.matvec(w2, inner)?;
            let first = g.scale(decay, network)?;
            let second = g.scale(ramp, dn)?;
            let dy = g.add(first, second)?;
            Ok((network, y, dy))
        })();
        let (network, y, dy) = built.expect("model graph shapes are consistent");
        ModelGraph {
            graph: g,
            t,
            network,
            y,
            dy,
        }
    }
}

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("unsupported checkpoint version `{0}`")]
    Version(String),
    #[error("malformed checkpoint field `{0}`")]
    Malformed(String),
}

/// Textual key-value checkpoint: format version, dimensions, horizon, y0,
/// and the row-major parameter arrays. Floats print with enough digits to
/// round-trip exactly.
pub fn save_checkpoint(path: &Path, net: &StateNet) -> Result<(), CheckpointError> {
    let p = &net.params;
    let mut out = String::new();
    let _ = writeln!(out, "format_version 1");
    let _ = writeln!(out, "state_dim {}", net.state_dim());
    let _ = writeln!(out, "hidden_dim {}", p.hidden_dim());
    let _ = writeln!(out, "horizon {:?}", net.horizon);
    let mut write_arr = |name: &str, data: &[f64]| {
        let _ = write!(out, "{name}");
        for v in data {
            let _ = write!(out, " {v:?}");
        }
        let _ = writeln!(out);
    };
    write_arr("y0", &net.y0);
    write_arr("w1", &p.w1);
    write_arr("b1", &p.b1);
    write_arr("w2", p.w2.data());
    write_arr("b2", &p.b2);
    std::fs::write(path, out)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<StateNet, CheckpointError> {
    let text = std::fs::read_to_string(path)?;
    let mut fields = std::collections::HashMap::new();
    for line in text.lines() {
        if let Some((key, rest)) = line.split_once(' ') {
            fields.insert(key.to_string(), rest.to_string());
        }
    }
    let version = fields
        .get("format_version")
        .ok_or_else(|| CheckpointError::Malformed("format_version".into()))?;
    if version != "1" {
        return Err(CheckpointError::Version(version.clone()));
    }
    let usize_field = |name: &str| -> Result<usize, CheckpointError> {
        fields
            .get(name)
            .and_then(|s| s.trim().parse().ok())
            .ok_or_else(|| CheckpointError::Malformed(name.into()))
    };
    let arr_field = |name: &str, expect: usize| -> Result<Vec<f64>, CheckpointError> {
        let raw = fields
            .get(name)
            .ok_or_else(|| CheckpointError::Malformed(name.into()))?;
        let vals: Result<Vec<f64>, _> = raw.split_whitespace().map(str::parse).collect();
        let vals = vals.map_err(|_| CheckpointError::Malformed(name.into()))?;
        if vals.len() != expect {
            return Err(CheckpointError::Malformed(name.into()));
        }
        Ok(vals)
    };
    let n = usize_field("state_dim")?;
    let h = usize_field("hidden_dim")?;
    let horizon: f64 = fields
        .get("horizon")
        .and_then(|s| s.trim().parse().ok())
        .ok_or_else(|| CheckpointError::Malformed("horizon".into()))?;
    let y0 = arr_field("y0", n)?;
    let params = MlpParams {
        w1: arr_field("w1", h)?,
        b1: arr_field("b1", h)?,
        w2: Mat::from_vec(n, h, arr_field("w2", n * h)?),
        b2: arr_field("b2", n)?,
    };
    Ok(StateNet::new(params, y0, horizon))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_net(seed: u64, n: usize, h: usize) -> StateNet {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let params = MlpParams::init(n, h, &mut rng);
        let y0: Vec<f64> = (0..n).map(|i| i as f64 - 1.0).collect();
        StateNet::new(params, y0, 10.0)
    }

    #[test]
    fn zero_params_give_zero_network_and_constant_state() {
        let params = MlpParams::zeros(3, 7);
        for &t in &[0.0, 0.5, 4.0] {
            assert_eq!(params.forward(t), vec![0.0; 3]);
        }
        let net = StateNet::new(MlpParams::zeros(3, 7), vec![1.0, -2.0, 0.5], 10.0);
        for &t in &[0.0, 1.0, 10.0] {
            assert_eq!(net.forward(t), vec![1.0, -2.0, 0.5]);
            assert_eq!(net.time_derivative(t), vec![0.0; 3]);
        }
    }

    #[test]
    fn single_neuron_values_by_hand() {
        // w1 = [1], b1 = [0], w2 = [[1]], b2 = [0]
        let params = MlpParams {
            w1: vec![1.0],
            b1: vec![0.0],
            w2: Mat::from_vec(1, 1, vec![1.0]),
            b2: vec![0.0],
        };
        assert_eq!(params.forward(0.0), vec![0.0]);
        let net = StateNet::new(params, vec![2.0], 10.0);
        let t: f64 = 10.0;
        let expect = 2.0 + (1.0 - (-t).exp()) * t.tanh();
        assert!((net.forward(t)[0] - expect).abs() < 1e-15);
    }

    #[test]
    fn initial_condition_holds_bit_exactly() {
        for seed in 0..100 {
            let net = random_net(seed, 4, 13);
            assert_eq!(net.forward(0.0), net.y0);
        }
    }

    #[test]
    fn graph_forward_matches_direct_evaluation() {
        let net = random_net(3, 3, 11);
        let mg = ModelGraph::new(&net.y0, 11);
        let mut b = Bindings::new();
        net.params.bind(&mut b);
        for &t in &[0.0, 0.3, 2.7, 9.9] {
            b.set(TIME, Value::Scalar(t));
            let from_graph = mg.graph.eval(mg.y, &b).unwrap();
            assert_eq!(from_graph.data(), net.forward(t).as_slice());
            let net_out = mg.graph.eval(mg.network, &b).unwrap();
            assert_eq!(net_out.data(), net.params.forward(t).as_slice());
        }
    }

    #[test]
    fn time_derivative_at_origin_equals_network_output() {
        let net = random_net(8, 2, 9);
        let d = net.time_derivative(0.0);
        let n = net.params.forward(0.0);
        for (a, b) in d.iter().zip(&n) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn time_derivative_matches_finite_differences() {
        let h = 1e-5;
        for seed in 0..50 {
            let net = random_net(seed, 3, 8);
            let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
            let t: f64 = rng.random_range(0.1..9.0);
            let d = net.time_derivative(t);
            let fp = net.forward(t + h);
            let fm = net.forward(t - h);
            for i in 0..3 {
                let fd = (fp[i] - fm[i]) / (2.0 * h);
                assert!(
                    (d[i] - fd).abs() / fd.abs().max(1.0) <= 1e-4,
                    "seed {seed} comp {i}: {} vs {fd}",
                    d[i]
                );
            }
        }
    }

    #[test]
    fn predictions_respect_projections() {
        let net = random_net(4, 3, 6);
        let omega = BoxSet::new(vec![0.0, 0.0, 0.0], vec![0.5, 0.5, 0.5]).unwrap();
        let boxed = net.predict(&Projection::Box(omega.clone()));
        assert!(omega.contains(&boxed));

        let raw = net.predict(&Projection::Identity);
        assert_eq!(raw, net.forward(net.horizon));

        // interior point is untouched by the box
        let inside = Projection::Box(BoxSet::new(vec![-100.0; 3], vec![100.0; 3]).unwrap());
        assert_eq!(net.predict(&inside), raw);

        let orthant = net.predict(&Projection::NonnegOrthant);
        assert!(orthant.iter().all(|v| *v >= 0.0));
    }

    #[test]
    fn affine_prefix_projection_leaves_duals_alone() {
        let set = AffineSet::new(Mat::from_rows(&[&[2.0, 0.0, 5.0]]), vec![7.0]).unwrap();
        let proj = Projection::AffinePrefix(set);
        let y = [0.0, 0.0, 0.0, 3.5];
        let p = proj.apply(&y);
        assert_eq!(p.len(), 4);
        assert_eq!(p[3], 3.5);
        assert!((2.0 * p[0] + 5.0 * p[2] - 7.0).abs() < 1e-12);
    }

    #[test]
    fn checkpoint_round_trips_exactly() {
        let net = random_net(99, 4, 5);
        let dir = std::env::temp_dir().join(format!("neurodyn-ckpt-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("checkpoint");
        save_checkpoint(&path, &net).unwrap();
        let loaded = load_checkpoint(&path).unwrap();
        assert_eq!(loaded.params, net.params);
        assert_eq!(loaded.y0, net.y0);
        assert_eq!(loaded.horizon, net.horizon);
        std::fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn checkpoint_rejects_unknown_version() {
        let dir = std::env::temp_dir().join(format!("neurodyn-ckpt-v-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("checkpoint");
        std::fs::write(&path, "format_version 9\nstate_dim 1\n").unwrap();
        assert!(matches!(
            load_checkpoint(&path),
            Err(CheckpointError::Version(_))
        ));
        std::fs::remove_dir_all(&dir).ok();
    }
}
