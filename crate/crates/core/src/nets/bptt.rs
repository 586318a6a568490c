//! Forward and backward passes through stacked, optionally bidirectional
//! recurrent layers and the fully-connected regression head.
//!
//! Cell equations are the standard ones: Elman RNN with tanh, GRU with
//! reset/update gates and the candidate bias outside the reset product
//! (single combined bias per gate block), LSTM with input/forget/cell/output
//! gates. Per-timestep input projections are batched into one matrix product
//! per layer and direction; only the hidden-to-hidden recurrence runs step by
//! step, so results stay bit-identical to the naive unrolled loop.

use super::params::ParameterSet;
use super::{parameter_layout, CellVariant, NetError, NetworkConfig};
use crate::tensor::{
    matmul, matmul_transpose_a, matmul_transpose_b, matvec_into, matvec_transpose_add, sigmoid,
    Tensor,
};

/// Cached activations from one forward call, consumed exactly once by
/// [`backward`]. All per-direction buffers are indexed by processing step
/// `s`; for the reverse direction `s` walks the input back to front.
#[derive(Debug)]
pub struct ForwardTape {
    input: Tensor,
    layer_outputs: Vec<Tensor>,
    layer_dirs: Vec<Vec<DirTape>>,
    fc_hidden_act: Tensor,
    seq_len: usize,
    layout_id: u64,
}

#[derive(Debug)]
struct DirTape {
    /// Hidden states, `seq_len * hidden` flat, processing order.
    h: Vec<f64>,
    cache: CellCache,
}

#[derive(Debug)]
enum CellCache {
    SimpleRnn,
    Gru {
        r: Vec<f64>,
        z: Vec<f64>,
        n: Vec<f64>,
        /// W_hn * h_prev, needed to route gradients through the reset gate.
        hh_n: Vec<f64>,
    },
    Lstm {
        i: Vec<f64>,
        f: Vec<f64>,
        g: Vec<f64>,
        o: Vec<f64>,
        c: Vec<f64>,
        tc: Vec<f64>,
    },
}

impl CellCache {
    fn new(variant: CellVariant, cap: usize) -> Self {
        match variant {
            CellVariant::SimpleRnn => CellCache::SimpleRnn,
            CellVariant::Gru => CellCache::Gru {
                r: vec![0.0; cap],
                z: vec![0.0; cap],
                n: vec![0.0; cap],
                hh_n: vec![0.0; cap],
            },
            CellVariant::Lstm => CellCache::Lstm {
                i: vec![0.0; cap],
                f: vec![0.0; cap],
                g: vec![0.0; cap],
                o: vec![0.0; cap],
                c: vec![0.0; cap],
                tc: vec![0.0; cap],
            },
        }
    }
}

/// Indices of one layer-direction's parameters within the canonical entry
/// order, resolved once per pass.
struct LayerIdx {
    w_ih: usize,
    w_hh: usize,
    b: usize,
}

struct FcIdx {
    w1: usize,
    b1: usize,
    w2: usize,
    b2: usize,
}

fn resolve_indices(
    params: &ParameterSet,
    config: &NetworkConfig,
) -> Result<(Vec<Vec<LayerIdx>>, FcIdx), NetError> {
    let layout = parameter_layout(config);
    if layout.len() != params.len() {
        return Err(NetError::TapeMismatch(format!(
            "expected {} parameter entries, got {}",
            layout.len(),
            params.len()
        )));
    }
    for (name, shape) in &layout {
        let tensor = params
            .get(name)
            .ok_or_else(|| NetError::MissingParameter(name.clone()))?;
        if tensor.shape() != shape.as_slice() {
            return Err(NetError::BadParameterShape {
                name: name.clone(),
                expected: shape.clone(),
                got: tensor.shape().to_vec(),
            });
        }
    }
    let idx = |name: &str| params.index_of(name).expect("checked above");
    let dirs = config.cell.directions();
    let mut layers = Vec::with_capacity(config.num_layers);
    for l in 0..config.num_layers {
        let mut per_dir = Vec::with_capacity(dirs);
        for d in 0..dirs {
            let dir = if d == 0 { "fwd" } else { "bwd" };
            per_dir.push(LayerIdx {
                w_ih: idx(&format!("layer{l}.{dir}.w_ih")),
                w_hh: idx(&format!("layer{l}.{dir}.w_hh")),
                b: idx(&format!("layer{l}.{dir}.b")),
            });
        }
        layers.push(per_dir);
    }
    let fc = FcIdx {
        w1: idx("fc.w1"),
        b1: idx("fc.b1"),
        w2: idx("fc.w2"),
        b2: idx("fc.b2"),
    };
    Ok((layers, fc))
}

/// Run the network over a `T x input_size` sequence, producing per-timestep
/// predictions (`T x outputs`) and the tape for [`backward`].
///
/// `T` may be shorter than the configured sequence length but not longer.
pub fn forward(
    params: &ParameterSet,
    config: &NetworkConfig,
    x: &Tensor,
) -> Result<(Tensor, ForwardTape), NetError> {
    config.validate()?;
    if x.shape().len() != 2 {
        return Err(NetError::InputWidth {
            expected: config.input_size,
            got: 0,
        });
    }
    let t_len = x.rows();
    if x.cols() != config.input_size {
        return Err(NetError::InputWidth {
            expected: config.input_size,
            got: x.cols(),
        });
    }
    if t_len == 0 {
        return Err(NetError::EmptySequence);
    }
    if t_len > config.sequence_length {
        return Err(NetError::SequenceTooLong {
            got: t_len,
            max: config.sequence_length,
        });
    }
    if !x.is_finite() {
        return Err(NetError::NonFiniteInput);
    }
    let (layer_idx, fc_idx) = resolve_indices(params, config)?;

    let h = config.hidden_size;
    let dirs = config.cell.directions();
    let variant = config.cell.variant;
    let gates = variant.gates();

    let mut layer_outputs: Vec<Tensor> = Vec::with_capacity(config.num_layers);
    let mut layer_dirs: Vec<Vec<DirTape>> = Vec::with_capacity(config.num_layers);

    for l in 0..config.num_layers {
        let cur: &Tensor = if l == 0 { x } else { &layer_outputs[l - 1] };
        let mut out = Tensor::zeros(vec![t_len, dirs * h]);
        let mut dir_tapes = Vec::with_capacity(dirs);
        for (d, idx) in layer_idx[l].iter().enumerate() {
            let w_ih = params.tensor(idx.w_ih);
            let w_hh = params.tensor(idx.w_hh);
            let b = params.tensor(idx.b).data();
            // one batched projection for all timesteps: pre[t] = W_ih * x_t
            let pre = matmul_transpose_b(cur, w_ih);
            let mut tape = DirTape {
                h: vec![0.0; t_len * h],
                cache: CellCache::new(variant, t_len * h),
            };
            let mut h_prev = vec![0.0; h];
            let mut c_prev = vec![0.0; h];
            let mut rec = vec![0.0; gates * h];
            for s in 0..t_len {
                let t = if d == 0 { s } else { t_len - 1 - s };
                matvec_into(w_hh, &h_prev, &mut rec);
                let pre_row = pre.row(t);
                let span = s * h..(s + 1) * h;
                match &mut tape.cache {
                    CellCache::SimpleRnn => {
                        for j in 0..h {
                            h_prev[j] = (pre_row[j] + rec[j] + b[j]).tanh();
                        }
                    }
                    CellCache::Gru { r, z, n, hh_n } => {
                        let (r, z, n, hh_n) = (
                            &mut r[span.clone()],
                            &mut z[span.clone()],
                            &mut n[span.clone()],
                            &mut hh_n[span.clone()],
                        );
                        for j in 0..h {
                            r[j] = sigmoid(pre_row[j] + rec[j] + b[j]);
                            z[j] = sigmoid(pre_row[h + j] + rec[h + j] + b[h + j]);
                            hh_n[j] = rec[2 * h + j];
                            n[j] = (pre_row[2 * h + j] + r[j] * hh_n[j] + b[2 * h + j]).tanh();
                            h_prev[j] = (1.0 - z[j]) * n[j] + z[j] * h_prev[j];
                        }
                    }
                    CellCache::Lstm { i, f, g, o, c, tc } => {
                        let (i, f, g, o, c, tc) = (
                            &mut i[span.clone()],
                            &mut f[span.clone()],
                            &mut g[span.clone()],
                            &mut o[span.clone()],
                            &mut c[span.clone()],
                            &mut tc[span.clone()],
                        );
                        for j in 0..h {
                            i[j] = sigmoid(pre_row[j] + rec[j] + b[j]);
                            f[j] = sigmoid(pre_row[h + j] + rec[h + j] + b[h + j]);
                            g[j] = (pre_row[2 * h + j] + rec[2 * h + j] + b[2 * h + j]).tanh();
                            o[j] = sigmoid(pre_row[3 * h + j] + rec[3 * h + j] + b[3 * h + j]);
                            c[j] = f[j] * c_prev[j] + i[j] * g[j];
                            tc[j] = c[j].tanh();
                            c_prev[j] = c[j];
                            h_prev[j] = o[j] * tc[j];
                        }
                    }
                }
                tape.h[span].copy_from_slice(&h_prev);
                out.row_mut(t)[d * h..(d + 1) * h].copy_from_slice(&h_prev);
            }
            dir_tapes.push(tape);
        }
        layer_outputs.push(out);
        layer_dirs.push(dir_tapes);
    }

    // fully-connected head: tanh hidden layer, linear output
    let fc_in = layer_outputs.last().expect("num_layers >= 1");
    let w1 = params.tensor(fc_idx.w1);
    let b1 = params.tensor(fc_idx.b1).data();
    let w2 = params.tensor(fc_idx.w2);
    let b2 = params.tensor(fc_idx.b2).data();
    let mut u = matmul_transpose_b(fc_in, w1);
    for row in 0..t_len {
        let r = u.row_mut(row);
        for (v, &bias) in r.iter_mut().zip(b1) {
            *v = (*v + bias).tanh();
        }
    }
    let mut y = matmul_transpose_b(&u, w2);
    for row in 0..t_len {
        let r = y.row_mut(row);
        for (v, &bias) in r.iter_mut().zip(b2) {
            *v += bias;
        }
    }
    if !y.is_finite() {
        return Err(NetError::NonFiniteOutput);
    }

    let tape = ForwardTape {
        input: x.clone(),
        layer_outputs,
        layer_dirs,
        fc_hidden_act: u,
        seq_len: t_len,
        layout_id: params.layout_id(),
    };
    Ok((y, tape))
}

/// Backpropagate through time. Consumes the tape (it is valid for exactly
/// one backward pass) and returns gradients with the same layout as
/// `params`, accumulated over all timesteps.
pub fn backward(
    params: &ParameterSet,
    config: &NetworkConfig,
    tape: ForwardTape,
    grad_y: &Tensor,
) -> Result<ParameterSet, NetError> {
    if tape.layout_id != params.layout_id() {
        return Err(NetError::LayoutMismatch {
            expected: tape.layout_id,
            got: params.layout_id(),
        });
    }
    let t_len = tape.seq_len;
    if grad_y.shape() != [t_len, config.outputs] {
        return Err(NetError::GradShape {
            expected: vec![t_len, config.outputs],
            got: grad_y.shape().to_vec(),
        });
    }
    if !grad_y.is_finite() {
        return Err(NetError::NonFiniteInput);
    }
    let (layer_idx, fc_idx) = resolve_indices(params, config)?;

    let h = config.hidden_size;
    let variant = config.cell.variant;
    let gates = variant.gates();
    let gh = gates * h;

    let mut grads = params.zeros_like();

    // --- fully-connected head ---
    let fc_in = tape.layer_outputs.last().expect("num_layers >= 1");
    let u = &tape.fc_hidden_act;
    let w1 = params.tensor(fc_idx.w1);
    let w2 = params.tensor(fc_idx.w2);

    grads
        .values_mut(fc_idx.w2)
        .copy_from_slice(matmul_transpose_a(grad_y, u).data());
    col_sum_into(grad_y, grads.values_mut(fc_idx.b2));

    let mut d_a1 = matmul(grad_y, w2)?;
    for (v, &uv) in d_a1.data_mut().iter_mut().zip(u.data()) {
        *v *= 1.0 - uv * uv;
    }
    grads
        .values_mut(fc_idx.w1)
        .copy_from_slice(matmul_transpose_a(&d_a1, fc_in).data());
    col_sum_into(&d_a1, grads.values_mut(fc_idx.b1));
    let mut d_cur = matmul(&d_a1, w1)?;

    // --- recurrent layers, top down ---
    for l in (0..config.num_layers).rev() {
        let layer_in: &Tensor = if l == 0 {
            &tape.input
        } else {
            &tape.layer_outputs[l - 1]
        };
        let width_in = layer_in.cols();
        let mut d_in = Tensor::zeros(vec![t_len, width_in]);
        for (d, idx) in layer_idx[l].iter().enumerate() {
            let dir_tape = &tape.layer_dirs[l][d];
            let w_hh = params.tensor(idx.w_hh);

            // dz_in rows live at the original timestep (for the batched
            // input-side products); dz_hid and h_prev rows live at the
            // processing step (for the batched recurrent product).
            let mut dz_in = Tensor::zeros(vec![t_len, gh]);
            let mut dz_hid = Tensor::zeros(vec![t_len, gh]);
            let mut h_prev_mat = Tensor::zeros(vec![t_len, h]);
            for s in 1..t_len {
                let (dst, src) = (s * h..(s + 1) * h, (s - 1) * h..s * h);
                h_prev_mat.data_mut()[dst].copy_from_slice(&dir_tape.h[src]);
            }

            let mut carry_dh = vec![0.0; h];
            let mut carry_dc = vec![0.0; h];
            let mut dh = vec![0.0; h];
            for s in (0..t_len).rev() {
                let t = if d == 0 { s } else { t_len - 1 - s };
                let out_row = d_cur.row(t);
                for j in 0..h {
                    dh[j] = out_row[d * h + j] + carry_dh[j];
                }
                carry_dh.iter_mut().for_each(|v| *v = 0.0);
                let span = s * h..(s + 1) * h;
                let h_prev = h_prev_mat.row(s);
                match &dir_tape.cache {
                    CellCache::SimpleRnn => {
                        let hs = &dir_tape.h[span];
                        let dz_row = dz_in.row_mut(t);
                        for j in 0..h {
                            dz_row[j] = dh[j] * (1.0 - hs[j] * hs[j]);
                        }
                        let dz_row = dz_in.row(t).to_vec();
                        dz_hid.row_mut(s).copy_from_slice(&dz_row);
                        matvec_transpose_add(w_hh, &dz_row, &mut carry_dh);
                    }
                    CellCache::Gru { r, z, n, hh_n } => {
                        let (r, z, n, hh_n) = (
                            &r[span.clone()],
                            &z[span.clone()],
                            &n[span.clone()],
                            &hh_n[span],
                        );
                        let dz_row = dz_in.row_mut(t);
                        let hid_row = dz_hid.row_mut(s);
                        for j in 0..h {
                            let dn = dh[j] * (1.0 - z[j]);
                            let dzg = dh[j] * (h_prev[j] - n[j]);
                            let da_n = dn * (1.0 - n[j] * n[j]);
                            let da_r = da_n * hh_n[j] * r[j] * (1.0 - r[j]);
                            let da_z = dzg * z[j] * (1.0 - z[j]);
                            dz_row[j] = da_r;
                            dz_row[h + j] = da_z;
                            dz_row[2 * h + j] = da_n;
                            hid_row[j] = da_r;
                            hid_row[h + j] = da_z;
                            hid_row[2 * h + j] = da_n * r[j];
                            carry_dh[j] = dh[j] * z[j];
                        }
                        let hid_row = dz_hid.row(s).to_vec();
                        matvec_transpose_add(w_hh, &hid_row, &mut carry_dh);
                    }
                    CellCache::Lstm { i, f, g, o, c, tc } => {
                        let (i, f, g, o, tc) = (
                            &i[span.clone()],
                            &f[span.clone()],
                            &g[span.clone()],
                            &o[span.clone()],
                            &tc[span],
                        );
                        let dz_row = dz_in.row_mut(t);
                        for j in 0..h {
                            let c_prev = if s == 0 { 0.0 } else { c[(s - 1) * h + j] };
                            let d_o = dh[j] * tc[j];
                            let da_o = d_o * o[j] * (1.0 - o[j]);
                            let dc = carry_dc[j] + dh[j] * o[j] * (1.0 - tc[j] * tc[j]);
                            let da_i = dc * g[j] * i[j] * (1.0 - i[j]);
                            let da_f = dc * c_prev * f[j] * (1.0 - f[j]);
                            let da_g = dc * i[j] * (1.0 - g[j] * g[j]);
                            carry_dc[j] = dc * f[j];
                            dz_row[j] = da_i;
                            dz_row[h + j] = da_f;
                            dz_row[2 * h + j] = da_g;
                            dz_row[3 * h + j] = da_o;
                        }
                        let dz_row = dz_in.row(t).to_vec();
                        dz_hid.row_mut(s).copy_from_slice(&dz_row);
                        matvec_transpose_add(w_hh, &dz_row, &mut carry_dh);
                    }
                }
            }

            let g_w_ih = matmul_transpose_a(&dz_in, layer_in);
            grads.values_mut(idx.w_ih).copy_from_slice(g_w_ih.data());
            let g_w_hh = matmul_transpose_a(&dz_hid, &h_prev_mat);
            grads.values_mut(idx.w_hh).copy_from_slice(g_w_hh.data());
            col_sum_into(&dz_in, grads.values_mut(idx.b));

            let w_ih = params.tensor(idx.w_ih);
            let dx = matmul(&dz_in, w_ih)?;
            for (acc, &v) in d_in.data_mut().iter_mut().zip(dx.data()) {
                *acc += v;
            }
        }
        d_cur = d_in;
    }

    Ok(grads)
}

/// Column sums of a `T x n` matrix accumulated in increasing row order.
fn col_sum_into(m: &Tensor, out: &mut [f64]) {
    debug_assert_eq!(m.cols(), out.len());
    for r in 0..m.rows() {
        for (o, &v) in out.iter_mut().zip(m.row(r)) {
            *o += v;
        }
    }
}
