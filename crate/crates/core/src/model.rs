//! Message-passing neural solver: MLP encoder, `M` processor layers and a
//! CNN decoder that emits a bundle of `K` future steps per call.
//!
//! Parameters live in one flat list of named tensors. To run the network they
//! are bound to a [`Tape`], either as trainable leaves ([`MpPdeModel::bind`])
//! or as constants for inference ([`MpPdeModel::bind_frozen`]).

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pde::{Boundary, Grid, PdeParams};
use crate::tensor::{Tape, Tensor, Var};

/// Encoder inputs besides the window: x, t, three coefficients, boundary one-hot.
const NODE_EXTRA: usize = 8;
/// Coefficients plus boundary one-hot, injected into every block.
const THETA: usize = 6;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    /// `K`: steps consumed and emitted per call.
    pub bundle_size: usize,
    /// `M`: processor layers.
    pub num_layers: usize,
    pub hidden_dim: usize,
    pub neighborhood_radius: usize,
    pub decoder_channels: usize,
    /// Odd kernel width of both decoder convolutions.
    pub decoder_kernel: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            bundle_size: 5,
            num_layers: 6,
            hidden_dim: 64,
            neighborhood_radius: 3,
            decoder_channels: 8,
            decoder_kernel: 5,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("bundle_size", self.bundle_size),
            ("num_layers", self.num_layers),
            ("hidden_dim", self.hidden_dim),
            ("neighborhood_radius", self.neighborhood_radius),
            ("decoder_channels", self.decoder_channels),
            ("decoder_kernel", self.decoder_kernel),
        ];
        if let Some((name, _)) = fields.iter().find(|(_, v)| *v == 0) {
            return Err(Error::InvalidParameter(format!("{name} must be positive")));
        }
        if self.decoder_kernel % 2 == 0 {
            return Err(Error::InvalidParameter(format!("decoder_kernel must be odd, got {}", self.decoder_kernel)));
        }
        Ok(())
    }

    /// Trajectories need one input window and at least one target bundle.
    pub fn check_horizon(&self, n_t: usize) -> Result<()> {
        if n_t < 2 * self.bundle_size {
            return Err(Error::InsufficientHorizon { n_t, needed: 2 * self.bundle_size });
        }
        Ok(())
    }

    pub fn node_features(&self) -> usize {
        self.bundle_size + NODE_EXTRA
    }

    pub fn message_features(&self) -> usize {
        2 * self.hidden_dim + self.bundle_size + 1 + THETA
    }

    pub fn update_features(&self) -> usize {
        2 * self.hidden_dim + THETA
    }

    /// Names and shapes of every parameter, in storage order.
    pub fn param_specs(&self) -> Vec<(String, Vec<usize>)> {
        let h = self.hidden_dim;
        let mut specs = Vec::new();
        let mut mlp = |prefix: &str, inp: usize, out: usize| {
            specs.push((format!("{prefix}.w1"), vec![inp, h]));
            specs.push((format!("{prefix}.b1"), vec![h]));
            specs.push((format!("{prefix}.w2"), vec![h, out]));
            specs.push((format!("{prefix}.b2"), vec![out]));
        };
        mlp("encoder", self.node_features(), h);
        for m in 0..self.num_layers {
            mlp(&format!("layers.{m}.phi"), self.message_features(), h);
            mlp(&format!("layers.{m}.psi"), self.update_features(), h);
        }
        let (c, k) = (self.decoder_channels, self.decoder_kernel);
        specs.push(("decoder.conv1.weight".into(), vec![c, 1, k]));
        specs.push(("decoder.conv1.bias".into(), vec![c]));
        specs.push(("decoder.conv2.weight".into(), vec![1, c, k]));
        specs.push(("decoder.conv2.bias".into(), vec![1]));
        specs.push(("decoder.linear.weight".into(), vec![h, self.bundle_size]));
        specs.push(("decoder.linear.bias".into(), vec![self.bundle_size]));
        specs
    }
}

/// Directed edges `src -> dst`, ordered by destination and then by signed offset.
#[derive(Clone, Debug, PartialEq)]
pub struct Graph {
    pub n_nodes: usize,
    pub src: Vec<usize>,
    pub dst: Vec<usize>,
    /// `dst - src` in cells, taken as the minimum image on periodic domains.
    pub offset: Vec<isize>,
}

impl Graph {
    pub fn n_edges(&self) -> usize {
        self.src.len()
    }

    pub fn in_neighbors(&self, i: usize) -> Vec<usize> {
        self.dst.iter().zip(&self.src).filter(|(d, _)| **d == i).map(|(_, s)| *s).collect()
    }

    /// `x_dst - x_src` for every edge.
    pub fn displacements(&self, dx: f64) -> Vec<f64> {
        self.offset.iter().map(|&o| o as f64 * dx).collect()
    }
}

/// Connects `i` to every `j != i` with `|i - j| <= radius`, wrapping for periodic domains.
pub fn build_graph(n_x: usize, radius: usize, boundary: Boundary) -> Result<Graph> {
    if n_x <= 2 * radius {
        return Err(Error::GridTooSmall(format!("{n_x} nodes cannot host a neighborhood of radius {radius}")));
    }
    let r = radius as isize;
    let n = n_x as isize;
    let mut g = Graph { n_nodes: n_x, src: vec![], dst: vec![], offset: vec![] };
    for i in 0..n {
        for d in (-r..=r).filter(|&d| d != 0) {
            let j = i + d;
            let j = if boundary.is_periodic() {
                j.rem_euclid(n)
            } else if (0..n).contains(&j) {
                j
            } else {
                continue;
            };
            g.src.push(j as usize);
            g.dst.push(i as usize);
            g.offset.push(-d);
        }
    }
    Ok(g)
}

/// `x_i - x_j` snapped to the lattice of spacing `dx`, with the minimum image
/// taken on a periodic domain of length `period`.
pub fn lattice_displacement(x_i: f64, x_j: f64, dx: f64, period: Option<f64>) -> f64 {
    let mut cells = ((x_i - x_j) / dx).round();
    if let Some(l) = period {
        let n = (l / dx).round();
        cells -= n * (cells / n).round();
    }
    cells * dx
}

/// Per-node encoder input.
#[derive(Clone, Debug, PartialEq)]
pub struct NodeInput {
    /// `u_i` at the `K` most recent steps, oldest first.
    pub u_window: Vec<f64>,
    /// Position divided by the domain length.
    pub x: f64,
    /// Time divided by the horizon `t_end`.
    pub t: f64,
    /// `(alpha, beta, gamma)` followed by the boundary one-hot.
    pub theta: [f64; THETA],
}

fn theta_features(params: &PdeParams) -> [f64; THETA] {
    let [a, b, g] = params.theta();
    let [p, d, n] = params.boundary().one_hot();
    [a, b, g, p, d, n]
}

impl NodeInput {
    /// Inputs of every node for the window `[K, n_x]` whose last row is at `t_k`.
    pub fn from_window(window: &Tensor, t_k: f64, grid: &Grid, params: &PdeParams) -> Result<Vec<Self>> {
        let (k, n) = window_dims(window, grid.n_x)?;
        let theta = theta_features(params);
        Ok((0..n)
            .map(|i| NodeInput {
                u_window: (0..k).map(|r| window.data()[r * n + i]).collect(),
                x: grid.x_center(i) / grid.domain_length,
                t: t_k / grid.t_end,
                theta,
            })
            .collect())
    }
}

fn window_dims(window: &Tensor, n_x: usize) -> Result<(usize, usize)> {
    match window.shape() {
        &[k, n] if n == n_x => Ok((k, n)),
        s => Err(Error::ShapeMismatch(format!("window of shape {s:?} for {n_x} nodes"))),
    }
}

/// Feature matrix `[n, K + 8]` of a set of node inputs.
pub fn node_feature_matrix(nodes: &[NodeInput]) -> Result<Tensor> {
    let k = nodes.first().map_or(0, |n| n.u_window.len());
    let mut data = Vec::with_capacity(nodes.len() * (k + NODE_EXTRA));
    for node in nodes {
        if node.u_window.len() != k {
            return Err(Error::ShapeMismatch(format!("window length {} vs {k}", node.u_window.len())));
        }
        data.extend_from_slice(&node.u_window);
        data.push(node.x);
        data.push(node.t);
        data.extend_from_slice(&node.theta);
    }
    Tensor::new(vec![nodes.len(), k + NODE_EXTRA], data)
}

/// Two-layer perceptron with swish in between.
#[derive(Clone, Copy, Debug)]
pub struct Mlp<'t> {
    pub w1: Var<'t>,
    pub b1: Var<'t>,
    pub w2: Var<'t>,
    pub b2: Var<'t>,
}

impl<'t> Mlp<'t> {
    pub fn apply(&self, x: Var<'t>) -> Result<Var<'t>> {
        let h = x.matmul(self.w1)?.add(self.b1)?.swish();
        h.matmul(self.w2)?.add(self.b2)
    }
}

/// Edge inputs shared by every processor layer, one row per edge.
#[derive(Clone, Copy, Debug)]
pub struct EdgeInputs<'t> {
    /// `u_i - u_j` over the window, `[E, K]`.
    pub du: Var<'t>,
    /// `x_i - x_j`, `[E, 1]`.
    pub displacement: Var<'t>,
    /// `[E, 6]`.
    pub theta: Var<'t>,
}

/// Model parameters recorded on a tape.
#[derive(Clone, Debug)]
pub struct Bound<'t> {
    pub vars: Vec<Var<'t>>,
    num_layers: usize,
}

impl<'t> Bound<'t> {
    fn mlp(&self, start: usize) -> Mlp<'t> {
        let v = &self.vars[start..start + 4];
        Mlp { w1: v[0], b1: v[1], w2: v[2], b2: v[3] }
    }

    pub fn encoder(&self) -> Mlp<'t> {
        self.mlp(0)
    }

    pub fn phi(&self, layer: usize) -> Mlp<'t> {
        self.mlp(4 + 8 * layer)
    }

    pub fn psi(&self, layer: usize) -> Mlp<'t> {
        self.mlp(8 + 8 * layer)
    }

    fn decoder(&self) -> &[Var<'t>] {
        &self.vars[4 + 8 * self.num_layers..]
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MpPdeModel {
    config: ModelConfig,
    names: Vec<String>,
    params: Vec<Tensor>,
}

impl MpPdeModel {
    /// Seeded uniform initialization in `±1/sqrt(fan_in)`; biases use the bound of their weight.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let specs = config.param_specs();
        let mut bound = 1.0;
        let mut names = Vec::with_capacity(specs.len());
        let mut params = Vec::with_capacity(specs.len());
        for (name, shape) in specs {
            let fan_in = match shape.as_slice() {
                [i, _] => *i,
                [_, cin, k] => cin * k,
                _ => 0,
            };
            if fan_in > 0 {
                bound = 1.0 / (fan_in as f64).sqrt();
            }
            let n: usize = shape.iter().product();
            let data = (0..n).map(|_| rng.gen_range(-bound..bound)).collect();
            names.push(name);
            params.push(Tensor::new(shape, data)?);
        }
        Ok(Self { config, names, params })
    }

    /// Rebuilds a model from named tensors, checking names and shapes against `config`.
    pub fn from_named(config: ModelConfig, named: Vec<(String, Tensor)>) -> Result<Self> {
        config.validate()?;
        let specs = config.param_specs();
        if specs.len() != named.len() {
            return Err(Error::ShapeMismatch(format!("expected {} tensors, got {}", specs.len(), named.len())));
        }
        let mut names = Vec::with_capacity(specs.len());
        let mut params = Vec::with_capacity(specs.len());
        for ((name, shape), (got_name, t)) in specs.into_iter().zip(named) {
            if name != got_name || shape != t.shape() {
                return Err(Error::ShapeMismatch(format!(
                    "expected {name} {shape:?}, got {got_name} {:?}",
                    t.shape()
                )));
            }
            names.push(name);
            params.push(t);
        }
        Ok(Self { config, names, params })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn named_params(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names.iter().map(String::as_str).zip(&self.params)
    }

    pub fn params(&self) -> &[Tensor] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Tensor] {
        &mut self.params
    }

    pub fn param_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        let i = self.names.iter().position(|n| n == name)?;
        Some(&mut self.params[i])
    }

    pub fn num_params(&self) -> usize {
        self.params.iter().map(Tensor::numel).sum()
    }

    /// Parameters as trainable leaves.
    pub fn bind<'t>(&self, tape: &'t Tape) -> Bound<'t> {
        let vars = self.params.iter().map(|p| tape.param(p.clone())).collect();
        Bound { vars, num_layers: self.config.num_layers }
    }

    /// Parameters as constants.
    pub fn bind_frozen<'t>(&self, tape: &'t Tape) -> Bound<'t> {
        let vars = self.params.iter().map(|p| tape.constant(p.clone())).collect();
        Bound { vars, num_layers: self.config.num_layers }
    }

    /// `f^0 = encoder(features)` for a `[n, K + 8]` feature matrix.
    pub fn encode<'t>(&self, p: &Bound<'t>, features: Var<'t>) -> Result<Var<'t>> {
        p.encoder().apply(features)
    }

    /// Messages `phi_m(f_i, f_j, u_i - u_j, x_i - x_j, theta)`, one row per edge.
    pub fn message<'t>(
        &self,
        p: &Bound<'t>,
        layer: usize,
        f_i: Var<'t>,
        f_j: Var<'t>,
        du: Var<'t>,
        displacement: Var<'t>,
        theta: Var<'t>,
    ) -> Result<Var<'t>> {
        let x = Var::concat(&[f_i, f_j, du, displacement, theta], 1)?;
        p.phi(layer).apply(x)
    }

    /// `psi_m(f_i, aggregated messages, theta)`.
    pub fn node_update<'t>(
        &self,
        p: &Bound<'t>,
        layer: usize,
        f: Var<'t>,
        aggregated: Var<'t>,
        theta: Var<'t>,
    ) -> Result<Var<'t>> {
        let x = Var::concat(&[f, aggregated, theta], 1)?;
        p.psi(layer).apply(x)
    }

    /// One processor layer: messages along `graph`, summed per destination, then the node update.
    pub fn process<'t>(
        &self,
        p: &Bound<'t>,
        layer: usize,
        f: Var<'t>,
        graph: &Graph,
        edges: &EdgeInputs<'t>,
        node_theta: Var<'t>,
    ) -> Result<Var<'t>> {
        let f_i = f.gather(&graph.dst)?;
        let f_j = f.gather(&graph.src)?;
        let m = self.message(p, layer, f_i, f_j, edges.du, edges.displacement, edges.theta)?;
        let agg = m.scatter_add(&graph.dst, graph.n_nodes)?;
        self.node_update(p, layer, f, agg, node_theta)
    }

    /// Bundle `[K, n]` with rows `u_k + (t_{k+l} - t_k) d^l`.
    pub fn decode<'t>(&self, p: &Bound<'t>, f: Var<'t>, u_k: Var<'t>, t_offsets: &[f64]) -> Result<Var<'t>> {
        let (n, h) = (f.shape()[0], self.config.hidden_dim);
        if t_offsets.len() != self.config.bundle_size {
            return Err(Error::ShapeMismatch(format!(
                "{} time offsets for bundle size {}",
                t_offsets.len(),
                self.config.bundle_size
            )));
        }
        let dec = p.decoder();
        let x = f.reshape(&[n, 1, h])?;
        let x = x.conv1d(dec[0], dec[1])?.swish();
        let x = x.conv1d(dec[2], dec[3])?.reshape(&[n, h])?;
        let d = x.matmul(dec[4])?.add(dec[5])?;
        let dt = f.tape().constant(Tensor::from_vec(t_offsets.to_vec()));
        d.mul(dt)?.transpose()?.add(u_k)
    }

    /// Full network on a window `[K, n]` whose last row is at time `t_k`.
    pub fn forward<'t>(
        &self,
        p: &Bound<'t>,
        window: Var<'t>,
        t_k: f64,
        grid: &Grid,
        params: &PdeParams,
    ) -> Result<Var<'t>> {
        let tape = window.tape();
        let k = self.config.bundle_size;
        let n = grid.n_x;
        if window.shape() != [k, n] {
            return Err(Error::ShapeMismatch(format!("window {:?}, expected [{k}, {n}]", window.shape())));
        }
        let graph = build_graph(n, self.config.neighborhood_radius, params.boundary())?;
        let theta = theta_features(params);

        let mut node_static = Vec::with_capacity(n * NODE_EXTRA);
        for i in 0..n {
            node_static.push(grid.x_center(i) / grid.domain_length);
            node_static.push(t_k / grid.t_end);
            node_static.extend_from_slice(&theta);
        }
        let node_static = tape.constant(Tensor::new(vec![n, NODE_EXTRA], node_static)?);
        let node_theta = tape.constant(Tensor::new(vec![n, THETA], theta.repeat(n))?);

        let w_t = window.transpose()?;
        let du = w_t.gather(&graph.dst)?.sub(w_t.gather(&graph.src)?)?;
        let e = graph.n_edges();
        let edges = EdgeInputs {
            du,
            displacement: tape.constant(Tensor::new(vec![e, 1], graph.displacements(grid.dx()))?),
            theta: tape.constant(Tensor::new(vec![e, THETA], theta.repeat(e))?),
        };

        let mut f = self.encode(p, Var::concat(&[w_t, node_static], 1)?)?;
        for layer in 0..self.config.num_layers {
            f = self.process(p, layer, f, &graph, &edges, node_theta)?;
        }
        let u_k = window.slice(0, k - 1, 1)?.reshape(&[n])?;
        let offsets: Vec<f64> = (1..=k).map(|l| l as f64 * grid.dt()).collect();
        self.decode(p, f, u_k, &offsets)
    }

    /// Forward pass without gradient bookkeeping.
    pub fn predict(&self, window: &Tensor, t_k: f64, grid: &Grid, params: &PdeParams) -> Result<Tensor> {
        let tape = Tape::new();
        let p = self.bind_frozen(&tape);
        let w = tape.constant(window.clone());
        Ok(self.forward(&p, w, t_k, grid, params)?.value())
    }

    /// Autoregressive inference. `window` holds rows `k - K + 1..=k` of a
    /// trajectory on `grid`; each call feeds the previous bundle back in.
    /// Returns the `K * steps` predicted rows as `[K * steps, n]`.
    pub fn rollout(&self, window: &Tensor, k: usize, grid: &Grid, params: &PdeParams, steps: usize) -> Result<Tensor> {
        if steps == 0 {
            return Err(Error::InvalidParameter("rollout needs at least one step".into()));
        }
        let kb = self.config.bundle_size;
        let n = grid.n_x;
        let mut out = Vec::with_capacity(kb * steps * n);
        let mut current = window.clone();
        for s in 0..steps {
            let t_k = (k + s * kb) as f64 * grid.dt();
            let next = self.predict(&current, t_k, grid, params)?;
            if !next.is_finite() {
                return Err(Error::SolutionBlowup(format!("non-finite prediction in rollout call {s}")));
            }
            out.extend_from_slice(next.data());
            current = next;
        }
        Tensor::new(vec![kb * steps, n], out)
    }
}
