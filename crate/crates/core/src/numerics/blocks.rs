//! Differentiable building blocks recorded on a `Tape`.

use rand::Rng;

use super::params::{ParamId, ParamStore};
use super::tape::{Segment, Tape, Var};
use super::tensor::Tensor2;
use crate::error::{shape_mismatch, Error, Result};

/// Negative slope of the attention LeakyReLU.
pub const LEAKY_SLOPE: f64 = 0.2;

fn expect_cols(tape: &Tape, v: Var, cols: usize, context: &'static str) -> Result<()> {
    let (_, c) = tape.shape(v);
    if c != cols {
        return Err(shape_mismatch(context, format!("{cols} columns"), format!("{c} columns")));
    }
    Ok(())
}

fn expect_rows(tape: &Tape, v: Var, rows: usize, context: &'static str) -> Result<()> {
    let (r, _) = tape.shape(v);
    if r != rows {
        return Err(shape_mismatch(context, format!("{rows} rows"), format!("{r} rows")));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Identity,
    Relu,
}

impl Activation {
    fn apply(self, tape: &mut Tape, v: Var) -> Var {
        match self {
            Activation::Identity => v,
            Activation::Relu => tape.relu(v),
        }
    }
}

/// Affine map `x W + b`.
#[derive(Debug, Clone)]
pub struct Dense {
    pub w: ParamId,
    pub b: Option<ParamId>,
    pub input: usize,
    pub output: usize,
}

impl Dense {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, name: &str, input: usize, output: usize, rng: &mut R) -> Result<Self> {
        let w = store.add_uniform(&format!("{name}.w"), input, output, input, rng)?;
        let b = store.add_uniform(&format!("{name}.b"), 1, output, input, rng)?;
        Ok(Self {
            w,
            b: Some(b),
            input,
            output,
        })
    }

    pub fn without_bias<R: Rng + ?Sized>(store: &mut ParamStore, name: &str, input: usize, output: usize, rng: &mut R) -> Result<Self> {
        let w = store.add_uniform(&format!("{name}.w"), input, output, input, rng)?;
        Ok(Self { w, b: None, input, output })
    }

    pub fn forward(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        expect_cols(tape, x, self.input, "dense input")?;
        let w = tape.param(self.w);
        let y = tape.matmul(x, w);
        Ok(match self.b {
            Some(b) => {
                let b = tape.param(b);
                tape.add_row(y, b)
            }
            None => y,
        })
    }
}

/// Layer widths plus the activation after the last layer; hidden layers
/// always use ReLU.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MlpSpec {
    pub dims: Vec<usize>,
    pub output: Activation,
}

impl MlpSpec {
    pub fn new(dims: &[usize]) -> Self {
        Self {
            dims: dims.to_vec(),
            output: Activation::Identity,
        }
    }

    pub fn with_output(mut self, output: Activation) -> Self {
        self.output = output;
        self
    }
}

#[derive(Debug, Clone)]
pub struct Mlp {
    pub layers: Vec<Dense>,
    pub output: Activation,
}

impl Mlp {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, name: &str, spec: &MlpSpec, rng: &mut R) -> Result<Self> {
        if spec.dims.len() < 2 {
            return Err(Error::InvalidConfig(format!("{name}: an MLP needs at least two widths")));
        }
        let layers = spec
            .dims
            .windows(2)
            .enumerate()
            .map(|(i, d)| Dense::new(store, &format!("{name}.{i}"), d[0], d[1], rng))
            .collect::<Result<_>>()?;
        Ok(Self {
            layers,
            output: spec.output,
        })
    }

    pub fn input(&self) -> usize {
        self.layers[0].input
    }

    pub fn output_width(&self) -> usize {
        self.layers.last().map_or(0, |l| l.output)
    }

    pub fn forward(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        let mut h = x;
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            h = layer.forward(tape, h)?;
            h = if i == last { self.output.apply(tape, h) } else { tape.relu(h) };
        }
        Ok(h)
    }
}

/// `relu(W2 relu(W1 x + b1) + b2 + S x)`; `S` is the identity when input
/// and output widths agree, else a learned projection.
#[derive(Debug, Clone)]
pub struct ResidualBlock {
    pub first: Dense,
    pub second: Dense,
    pub skip: Option<Dense>,
}

impl ResidualBlock {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, name: &str, input: usize, output: usize, rng: &mut R) -> Result<Self> {
        let first = Dense::new(store, &format!("{name}.fc1"), input, output, rng)?;
        let second = Dense::new(store, &format!("{name}.fc2"), output, output, rng)?;
        let skip = if input == output {
            None
        } else {
            Some(Dense::without_bias(store, &format!("{name}.skip"), input, output, rng)?)
        };
        Ok(Self { first, second, skip })
    }

    pub fn output_width(&self) -> usize {
        self.second.output
    }

    pub fn forward(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        let h = self.first.forward(tape, x)?;
        let h = tape.relu(h);
        let h = self.second.forward(tape, h)?;
        let s = match &self.skip {
            Some(skip) => skip.forward(tape, x)?,
            None => x,
        };
        let y = tape.add(h, s);
        Ok(tape.relu(y))
    }
}

/// Gated recurrent cell with gate order (reset, update, candidate):
/// `h' = (1 - z) h + z n`.
#[derive(Debug, Clone)]
pub struct GruCell {
    pub wx: ParamId,
    pub bx: ParamId,
    pub wh: ParamId,
    pub bh: ParamId,
    pub input: usize,
    pub hidden: usize,
}

impl GruCell {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, name: &str, input: usize, hidden: usize, rng: &mut R) -> Result<Self> {
        let g = 3 * hidden;
        Ok(Self {
            wx: store.add_uniform(&format!("{name}.wx"), input, g, hidden, rng)?,
            bx: store.add_uniform(&format!("{name}.bx"), 1, g, hidden, rng)?,
            wh: store.add_uniform(&format!("{name}.wh"), hidden, g, hidden, rng)?,
            bh: store.add_uniform(&format!("{name}.bh"), 1, g, hidden, rng)?,
            input,
            hidden,
        })
    }

    pub fn forward(&self, tape: &mut Tape, x: Var, h: Var) -> Result<Var> {
        expect_cols(tape, x, self.input, "gru input")?;
        expect_cols(tape, h, self.hidden, "gru hidden")?;
        expect_rows(tape, h, tape.shape(x).0, "gru hidden rows")?;
        let g = self.hidden;
        let (wx, bx, wh, bh) = (tape.param(self.wx), tape.param(self.bx), tape.param(self.wh), tape.param(self.bh));
        let gx = tape.matmul(x, wx);
        let gx = tape.add_row(gx, bx);
        let gh = tape.matmul(h, wh);
        let gh = tape.add_row(gh, bh);
        let (xr, xz, xn) = (
            tape.slice_cols(gx, 0, g),
            tape.slice_cols(gx, g, 2 * g),
            tape.slice_cols(gx, 2 * g, 3 * g),
        );
        let (hr, hz, hn) = (
            tape.slice_cols(gh, 0, g),
            tape.slice_cols(gh, g, 2 * g),
            tape.slice_cols(gh, 2 * g, 3 * g),
        );
        let r = tape.add(xr, hr);
        let r = tape.sigmoid(r);
        let z = tape.add(xz, hz);
        let z = tape.sigmoid(z);
        let rn = tape.mul(r, hn);
        let n = tape.add(xn, rn);
        let n = tape.tanh(n);
        let keep = tape.one_minus(z);
        let keep = tape.mul(keep, h);
        let upd = tape.mul(z, n);
        Ok(tape.add(keep, upd))
    }
}

/// Attention over parent messages:
/// `alpha = softmax_parents(LeakyReLU(a^T [W1 b || W2 h]))`, `m = sum alpha W1 b`.
#[derive(Debug, Clone)]
pub struct GraphAttention {
    pub w1: Dense,
    pub w2: Dense,
    pub a: ParamId,
    pub message: usize,
    pub state: usize,
    pub width: usize,
}

/// Output of one attention aggregation.
#[derive(Debug, Clone, Copy)]
pub struct Aggregated {
    /// One row per segment.
    pub messages: Var,
    /// Attention weight of every edge, as a column vector.
    pub weights: Var,
}

impl GraphAttention {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        message: usize,
        state: usize,
        width: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let w1 = Dense::without_bias(store, &format!("{name}.w1"), message, width, rng)?;
        let w2 = Dense::without_bias(store, &format!("{name}.w2"), state, width, rng)?;
        let a = store.add_uniform(&format!("{name}.a"), 2 * width, 1, 2 * width, rng)?;
        Ok(Self {
            w1,
            w2,
            a,
            message,
            state,
            width,
        })
    }

    /// `messages` and `states` have one row per edge (the state row is the
    /// receiving node's); edges of one receiver form a contiguous segment.
    pub fn forward(&self, tape: &mut Tape, messages: Var, states: Var, segments: &[Segment]) -> Result<Aggregated> {
        let edges = tape.shape(messages).0;
        expect_rows(tape, states, edges, "attention states")?;
        let covered: usize = segments.iter().map(|s| s.1).sum();
        if covered != edges {
            return Err(shape_mismatch(
                "attention segments",
                format!("{edges} edges"),
                format!("{covered} edges"),
            ));
        }
        let wb = self.w1.forward(tape, messages)?;
        let wh = self.w2.forward(tape, states)?;
        let cat = tape.concat_cols(&[wb, wh]);
        let a = tape.param(self.a);
        let logits = tape.matmul(cat, a);
        let logits = tape.leaky_relu(logits, LEAKY_SLOPE);
        let weights = tape.segment_softmax(logits, segments);
        let messages = tape.segment_weighted_sum(weights, wb, segments);
        Ok(Aggregated { messages, weights })
    }
}

/// Learned per-type vectors followed by a 2-layer MLP over the pair
/// `[emb(type_m) || emb(type_n)]`.
#[derive(Debug, Clone)]
pub struct TypePairEncoder {
    pub table: ParamId,
    pub mlp: Mlp,
}

impl TypePairEncoder {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        n_types: usize,
        embed: usize,
        output: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let table = store.add_uniform(&format!("{name}.embed"), n_types, embed, embed, rng)?;
        let mlp = Mlp::new(store, &format!("{name}.mlp"), &MlpSpec::new(&[2 * embed, output, output]), rng)?;
        Ok(Self { table, mlp })
    }

    pub fn forward(&self, tape: &mut Tape, pairs: &[(usize, usize)]) -> Result<Var> {
        let table = tape.param(self.table);
        let n_types = tape.shape(table).0;
        if let Some(&(a, b)) = pairs.iter().find(|(a, b)| *a >= n_types || *b >= n_types) {
            return Err(shape_mismatch("type index", format!("< {n_types}"), format!("({a}, {b})")));
        }
        let first: Vec<usize> = pairs.iter().map(|p| p.0).collect();
        let second: Vec<usize> = pairs.iter().map(|p| p.1).collect();
        let em = tape.gather_rows(table, &first);
        let en = tape.gather_rows(table, &second);
        let cat = tape.concat_cols(&[em, en]);
        self.mlp.forward(tape, cat)
    }
}

/// One-hot rows: row `i` has a 1 in column `indices[i]`.
pub fn one_hot(indices: &[usize], width: usize) -> Tensor2 {
    let mut t = Tensor2::zeros(indices.len(), width);
    for (r, &i) in indices.iter().enumerate() {
        t.set(r, i, 1.0);
    }
    t
}

// ---------------------------------------------------------------------------
// Tape-free evaluation

/// Evaluates an MLP on a plain input matrix.
pub fn mlp_forward(store: &ParamStore, mlp: &Mlp, input: &Tensor2) -> Result<Tensor2> {
    let mut tape = Tape::new(store);
    let x = tape.constant(input.clone());
    let y = mlp.forward(&mut tape, x)?;
    Ok(tape.value(y).clone())
}

/// One GRU step on plain matrices.
pub fn gru_cell(store: &ParamStore, cell: &GruCell, input: &Tensor2, hidden: &Tensor2) -> Result<Tensor2> {
    let mut tape = Tape::new(store);
    let x = tape.constant(input.clone());
    let h = tape.constant(hidden.clone());
    let y = cell.forward(&mut tape, x, h)?;
    Ok(tape.value(y).clone())
}

/// Attention aggregate for a single receiving node; returns the message and
/// the per-parent weights.
pub fn graph_attention_aggregate(
    store: &ParamStore,
    gat: &GraphAttention,
    parent_messages: &[Vec<f64>],
    node_state: &[f64],
) -> Result<(Vec<f64>, Vec<f64>)> {
    if parent_messages.is_empty() {
        return Err(Error::EmptyParents);
    }
    let mut tape = Tape::new(store);
    let b = tape.constant(Tensor2::from_rows(parent_messages)?);
    let states = vec![node_state.to_vec(); parent_messages.len()];
    let h = tape.constant(Tensor2::from_rows(&states)?);
    let out = gat.forward(&mut tape, b, h, &[(0, parent_messages.len())])?;
    Ok((tape.value(out.messages).data.clone(), tape.value(out.weights).data.clone()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::tape::sigmoid;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(21)
    }

    fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor2 {
        Tensor2::from_vec(rows, cols, (0..rows * cols).map(|_| rng.gen_range(-2.0..2.0)).collect()).unwrap()
    }

    fn zero_all(store: &mut ParamStore) {
        for id in store.ids().collect::<Vec<_>>() {
            store.get_mut(id).data.iter_mut().for_each(|v| *v = 0.0);
        }
    }

    #[test]
    fn zero_mlp_gives_zero_output() {
        let mut store = ParamStore::new();
        let mlp = Mlp::new(&mut store, "m", &MlpSpec::new(&[3, 5, 2]), &mut rng()).unwrap();
        zero_all(&mut store);
        let out = mlp_forward(&store, &mlp, &random_matrix(&mut rng(), 4, 3)).unwrap();
        assert!(out.data.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn identity_layer_passes_input_through() {
        let mut store = ParamStore::new();
        let mlp = Mlp::new(&mut store, "m", &MlpSpec::new(&[3, 3]), &mut rng()).unwrap();
        *store.get_mut(mlp.layers[0].w) = Tensor2::identity(3);
        *store.get_mut(mlp.layers[0].b.unwrap()) = Tensor2::zeros(1, 3);
        let x = random_matrix(&mut rng(), 2, 3);
        assert_eq!(mlp_forward(&store, &mlp, &x).unwrap(), x);
    }

    #[test]
    fn two_layer_mlp_matches_direct_arithmetic() {
        let mut r = rng();
        let mut store = ParamStore::new();
        let mlp = Mlp::new(&mut store, "m", &MlpSpec::new(&[4, 6, 3]), &mut r).unwrap();
        let x = random_matrix(&mut r, 5, 4);
        let got = mlp_forward(&store, &mlp, &x).unwrap();
        let (w0, b0) = (store.get(mlp.layers[0].w), store.get(mlp.layers[0].b.unwrap()));
        let (w1, b1) = (store.get(mlp.layers[1].w), store.get(mlp.layers[1].b.unwrap()));
        for i in 0..5 {
            let hidden: Vec<f64> = (0..6)
                .map(|j| (b0.data[j] + (0..4).map(|k| x.get(i, k) * w0.get(k, j)).sum::<f64>()).max(0.0))
                .collect();
            for j in 0..3 {
                let expect = b1.data[j] + (0..6).map(|k| hidden[k] * w1.get(k, j)).sum::<f64>();
                assert!((got.get(i, j) - expect).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn mlp_rejects_wrong_width() {
        let mut store = ParamStore::new();
        let mlp = Mlp::new(&mut store, "m", &MlpSpec::new(&[3, 2]), &mut rng()).unwrap();
        assert!(matches!(
            mlp_forward(&store, &mlp, &Tensor2::zeros(1, 4)),
            Err(Error::ShapeMismatch { .. })
        ));
    }

    #[test]
    fn gru_matches_direct_equations() {
        let mut r = rng();
        let mut store = ParamStore::new();
        let cell = GruCell::new(&mut store, "g", 3, 4, &mut r).unwrap();
        let x = random_matrix(&mut r, 2, 3);
        let h = random_matrix(&mut r, 2, 4);
        let got = gru_cell(&store, &cell, &x, &h).unwrap();
        let (wx, bx, wh, bh) = (store.get(cell.wx), store.get(cell.bx), store.get(cell.wh), store.get(cell.bh));
        for i in 0..2 {
            let gate = |c: usize, from_x: bool| -> f64 {
                if from_x {
                    bx.data[c] + (0..3).map(|k| x.get(i, k) * wx.get(k, c)).sum::<f64>()
                } else {
                    bh.data[c] + (0..4).map(|k| h.get(i, k) * wh.get(k, c)).sum::<f64>()
                }
            };
            for j in 0..4 {
                let r = sigmoid(gate(j, true) + gate(j, false));
                let z = sigmoid(gate(4 + j, true) + gate(4 + j, false));
                let n = (gate(8 + j, true) + r * gate(8 + j, false)).tanh();
                let expect = (1.0 - z) * h.get(i, j) + z * n;
                assert!((got.get(i, j) - expect).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn gru_zero_fixed_point_and_carry() {
        let mut r = rng();
        let mut store = ParamStore::new();
        let cell = GruCell::new(&mut store, "g", 3, 4, &mut r).unwrap();
        let mut zeroed = store.clone();
        zero_all(&mut zeroed);
        let out = gru_cell(&zeroed, &cell, &Tensor2::zeros(1, 3), &Tensor2::zeros(1, 4)).unwrap();
        assert!(out.data.iter().all(|&v| v == 0.0));

        // Saturate the update gate closed.
        for c in 4..8 {
            store.get_mut(cell.bx).data[c] = -60.0;
        }
        let x = random_matrix(&mut r, 3, 3);
        let h = random_matrix(&mut r, 3, 4);
        let out = gru_cell(&store, &cell, &x, &h).unwrap();
        for (a, b) in out.data.iter().zip(&h.data) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn attention_examples() {
        let mut r = rng();
        let mut store = ParamStore::new();
        let gat = GraphAttention::new(&mut store, "a", 4, 3, 5, &mut r).unwrap();
        let b = vec![0.3, -0.2, 1.0, 0.5];
        let h = vec![0.1, 0.2, -0.3];
        let (m, w) = graph_attention_aggregate(&store, &gat, std::slice::from_ref(&b), &h).unwrap();
        assert_eq!(w, vec![1.0]);
        let w1 = store.get(gat.w1.w);
        for j in 0..5 {
            let expect: f64 = (0..4).map(|k| b[k] * w1.get(k, j)).sum();
            assert!((m[j] - expect).abs() < 1e-12);
        }
        let (_, w) = graph_attention_aggregate(&store, &gat, &[b.clone(), b.clone()], &h).unwrap();
        assert_eq!(w, vec![0.5, 0.5]);
        assert!(matches!(graph_attention_aggregate(&store, &gat, &[], &h), Err(Error::EmptyParents)));
    }

    #[test]
    fn attention_three_parents_matches_direct_softmax() {
        let mut r = rng();
        let mut store = ParamStore::new();
        let gat = GraphAttention::new(&mut store, "a", 4, 3, 5, &mut r).unwrap();
        let parents: Vec<Vec<f64>> = (0..3).map(|_| (0..4).map(|_| r.gen_range(-2.0..2.0)).collect()).collect();
        let h: Vec<f64> = (0..3).map(|_| r.gen_range(-2.0..2.0)).collect();
        let (m, w) = graph_attention_aggregate(&store, &gat, &parents, &h).unwrap();
        let (w1, w2, a) = (store.get(gat.w1.w), store.get(gat.w2.w), store.get(gat.a));
        let proj =
            |v: &[f64], mat: &Tensor2| -> Vec<f64> { (0..5).map(|j| v.iter().enumerate().map(|(k, x)| x * mat.get(k, j)).sum()).collect() };
        let wh = proj(&h, w2);
        let scores: Vec<f64> = parents
            .iter()
            .map(|b| {
                let wb = proj(b, w1);
                let s: f64 = wb.iter().chain(&wh).zip(&a.data).map(|(x, y)| x * y).sum();
                if s >= 0.0 {
                    s
                } else {
                    0.2 * s
                }
            })
            .collect();
        let z: f64 = scores.iter().map(|s| s.exp()).sum();
        for (wi, s) in w.iter().zip(&scores) {
            assert!((wi - s.exp() / z).abs() < 1e-12);
        }
        assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        for j in 0..5 {
            let expect: f64 = parents.iter().zip(&w).map(|(b, wi)| wi * proj(b, w1)[j]).sum();
            assert!((m[j] - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn residual_identity_skip() {
        let mut r = rng();
        let mut store = ParamStore::new();
        let block = ResidualBlock::new(&mut store, "r", 3, 3, &mut r).unwrap();
        assert!(block.skip.is_none());
        let mut zeroed = store.clone();
        zero_all(&mut zeroed);
        let x = random_matrix(&mut r, 2, 3);
        let mut tape = Tape::new(&zeroed);
        let xv = tape.constant(x.clone());
        let y = block.forward(&mut tape, xv).unwrap();
        assert_eq!(tape.value(y), &x.map(|v| v.max(0.0)));
    }
}
