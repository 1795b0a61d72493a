use ndarray::{s, Array2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::layers::{
    cross_entropy, rms_backward, rms_forward, silu, silu_backward, Linear, RmsCache,
};
use super::{ModelConfig, PreparedCloud, TarMode};
use crate::error::{invalid, Result};
use crate::geometry::Point3;
use crate::mae::{chamfer_with_grad, tar_append, tar_remove, tar_restore, MaskPlan, TokenSequence};
use crate::ssm::{diag_selective_scan, diag_selective_scan_backward, sigmoid, softplus, DiagScanCache};
use crate::traversal::{check_bijection, TraversalOrder};

/// One selective-SSM layer over concatenated ordered copies of the tokens.
///
/// Per token: `n = rmsnorm(x)`, `u = silu(n W_in)`, `delta = softplus(u W_dt)`,
/// `B = u W_B`, `C = u W_C`, `gate = silu(n W_g)`. The projected rows are laid
/// out once per traversal order, one after another, and scanned as a single
/// sequence with diagonal `A = -exp(a_log)`. Scan outputs are averaged back
/// onto token identity, gated, projected and added to the input.
#[derive(Clone, Debug, PartialEq)]
pub struct Block {
    pub norm: Array2<f64>,
    pub in_proj: Linear,
    pub dt_proj: Linear,
    pub b_proj: Linear,
    pub c_proj: Linear,
    pub gate: Linear,
    pub a_log: Array2<f64>,
    pub out_proj: Linear,
}

pub(crate) struct BlockCache {
    rms: RmsCache,
    n: Array2<f64>,
    zu: Array2<f64>,
    u: Array2<f64>,
    zdt: Array2<f64>,
    zg: Array2<f64>,
    gate: Array2<f64>,
    tok: Vec<usize>,
    inv_count: Vec<f64>,
    xs: Array2<f64>,
    ds: Array2<f64>,
    bs: Array2<f64>,
    cs: Array2<f64>,
    a: Array2<f64>,
    scan: DiagScanCache,
    y: Array2<f64>,
    o: Array2<f64>,
}

fn check_sequences(n_tokens: usize, seqs: &[Vec<usize>]) -> Result<()> {
    if seqs.is_empty() {
        return Err(invalid("encoder: at least one traversal order is required"));
    }
    for s in seqs {
        if s.len() != n_tokens {
            return Err(invalid(format!(
                "encoder: order of length {} for {n_tokens} tokens",
                s.len()
            )));
        }
        check_bijection(s)?;
    }
    Ok(())
}

fn scatter_rows(dst: &mut Array2<f64>, src: &Array2<f64>, tok: &[usize]) {
    for (j, &t) in tok.iter().enumerate() {
        let mut row = dst.row_mut(t);
        row += &src.row(j);
    }
}

/// Encoder sequences over the visible tokens (local ids) and decoder
/// sequences over all tokens, plus the global-to-local visible map
/// (`usize::MAX` for masked tokens).
fn mae_sequences(
    n_c: usize,
    orders: &[TraversalOrder],
    plan: &MaskPlan,
    tar: TarMode,
) -> Result<(Vec<usize>, Vec<Vec<usize>>, Vec<Vec<usize>>)> {
    let mut local = vec![usize::MAX; n_c];
    for (i, &t) in plan.visible().iter().enumerate() {
        local[t] = i;
    }
    let unit = vec![(); n_c];
    let mut enc_seqs = Vec::with_capacity(orders.len());
    let mut dec_seqs = Vec::with_capacity(orders.len());
    for o in orders {
        let (vis, recorded) = tar_remove(TokenSequence::from_order(o, &unit)?, plan)?;
        enc_seqs.push(vis.original_indices().iter().map(|&t| local[t]).collect());
        let restored = match tar {
            TarMode::Restore => tar_restore(vis, &(), &recorded)?,
            TarMode::Append => tar_append(vis, &(), &recorded)?,
        };
        dec_seqs.push(restored.original_indices());
    }
    Ok((local, enc_seqs, dec_seqs))
}

impl Block {
    fn init(rng: &mut ChaCha8Rng, d: usize, n: usize) -> Self {
        let mut dt_proj = Linear::init(rng, d, d);
        dt_proj.w.mapv_inplace(|v| 0.1 * v);
        // initial step sizes log-uniform in [1e-3, 1e-1]
        for b in dt_proj.b.iter_mut() {
            let dt: f64 = (rng.random_range(1e-2f64.ln()..1f64.ln())).exp();
            *b = dt + (-(-dt).exp_m1()).ln();
        }
        Self {
            norm: Array2::ones((1, d)),
            in_proj: Linear::init(rng, d, d),
            dt_proj,
            b_proj: Linear::init(rng, d, n),
            c_proj: Linear::init(rng, d, n),
            gate: Linear::init(rng, d, d),
            a_log: Array2::from_shape_fn((d, n), |(_, j)| ((j + 1) as f64).ln()),
            out_proj: Linear::init(rng, d, d),
        }
    }

    fn zeros_like(&self) -> Self {
        Self {
            norm: Array2::zeros(self.norm.raw_dim()),
            in_proj: self.in_proj.zeros_like(),
            dt_proj: self.dt_proj.zeros_like(),
            b_proj: self.b_proj.zeros_like(),
            c_proj: self.c_proj.zeros_like(),
            gate: self.gate.zeros_like(),
            a_log: Array2::zeros(self.a_log.raw_dim()),
            out_proj: self.out_proj.zeros_like(),
        }
    }

    pub(crate) fn forward(&self, x: &Array2<f64>, seqs: &[Vec<usize>]) -> Result<(Array2<f64>, BlockCache)> {
        check_sequences(x.nrows(), seqs)?;
        let (n, rms) = rms_forward(x, &self.norm);
        let zu = self.in_proj.forward(&n);
        let u = silu(&zu);
        let zdt = self.dt_proj.forward(&u);
        let delta = zdt.mapv(softplus);
        let bm = self.b_proj.forward(&u);
        let cm = self.c_proj.forward(&u);
        let zg = self.gate.forward(&n);
        let gate = silu(&zg);

        let tok: Vec<usize> = seqs.iter().flatten().copied().collect();
        let xs = u.select(Axis(0), &tok);
        let ds = delta.select(Axis(0), &tok);
        let bs = bm.select(Axis(0), &tok);
        let cs = cm.select(Axis(0), &tok);
        let a = self.a_log.mapv(|v| -v.exp());
        let (ys, scan) = diag_selective_scan(xs.view(), ds.view(), a.view(), bs.view(), cs.view())?;

        let mut y = Array2::zeros(x.raw_dim());
        scatter_rows(&mut y, &ys, &tok);
        let inv_count = vec![1.0 / seqs.len() as f64; x.nrows()];
        for (mut row, &w) in y.rows_mut().into_iter().zip(&inv_count) {
            row *= w;
        }
        let o = &y * &gate;
        let out = x + &self.out_proj.forward(&o);
        Ok((
            out,
            BlockCache {
                rms,
                n,
                zu,
                u,
                zdt,
                zg,
                gate,
                tok,
                inv_count,
                xs,
                ds,
                bs,
                cs,
                a,
                scan,
                y,
                o,
            },
        ))
    }

    pub(crate) fn backward(&self, c: &BlockCache, dout: &Array2<f64>, g: &mut Block) -> Result<Array2<f64>> {
        let d_o = self.out_proj.backward(&c.o, dout, &mut g.out_proj);
        let dy = &d_o * &c.gate;
        let dgate = &d_o * &c.y;
        let dzg = silu_backward(&c.zg, &dgate);
        let mut dn = self.gate.backward(&c.n, &dzg, &mut g.gate);

        let mut dys = dy.select(Axis(0), &c.tok);
        for (mut row, &t) in dys.rows_mut().into_iter().zip(&c.tok) {
            row *= c.inv_count[t];
        }
        let sg = diag_selective_scan_backward(
            c.xs.view(),
            c.ds.view(),
            c.a.view(),
            c.bs.view(),
            c.cs.view(),
            &c.scan,
            dys.view(),
        )?;
        g.a_log += &(&sg.a * &c.a);

        let n_tok = dout.nrows();
        let mut du = Array2::zeros(c.u.raw_dim());
        let mut ddelta = Array2::zeros(c.u.raw_dim());
        let mut dbm = Array2::zeros((n_tok, c.bs.ncols()));
        let mut dcm = Array2::zeros((n_tok, c.cs.ncols()));
        scatter_rows(&mut du, &sg.x, &c.tok);
        scatter_rows(&mut ddelta, &sg.delta, &c.tok);
        scatter_rows(&mut dbm, &sg.b, &c.tok);
        scatter_rows(&mut dcm, &sg.c, &c.tok);

        let mut dzdt = ddelta;
        dzdt.zip_mut_with(&c.zdt, |d, &z| *d *= sigmoid(z));
        du += &self.dt_proj.backward(&c.u, &dzdt, &mut g.dt_proj);
        du += &self.b_proj.backward(&c.u, &dbm, &mut g.b_proj);
        du += &self.c_proj.backward(&c.u, &dcm, &mut g.c_proj);
        let dzu = silu_backward(&c.zu, &du);
        dn += &self.in_proj.backward(&c.n, &dzu, &mut g.in_proj);
        Ok(dout + &rms_backward(&c.rms, &self.norm, &dn, &mut g.norm))
    }

    fn push_named<'a>(&'a self, p: &str, out: &mut Vec<(String, &'a Array2<f64>)>) {
        out.push((format!("{p}.norm"), &self.norm));
        self.in_proj.push_named(&format!("{p}.in_proj"), out);
        self.dt_proj.push_named(&format!("{p}.dt_proj"), out);
        self.b_proj.push_named(&format!("{p}.b_proj"), out);
        self.c_proj.push_named(&format!("{p}.c_proj"), out);
        self.gate.push_named(&format!("{p}.gate"), out);
        out.push((format!("{p}.a_log"), &self.a_log));
        self.out_proj.push_named(&format!("{p}.out_proj"), out);
    }

    fn push_named_mut<'a>(&'a mut self, p: &str, out: &mut Vec<(String, &'a mut Array2<f64>)>) {
        out.push((format!("{p}.norm"), &mut self.norm));
        self.in_proj.push_named_mut(&format!("{p}.in_proj"), out);
        self.dt_proj.push_named_mut(&format!("{p}.dt_proj"), out);
        self.b_proj.push_named_mut(&format!("{p}.b_proj"), out);
        self.c_proj.push_named_mut(&format!("{p}.c_proj"), out);
        self.gate.push_named_mut(&format!("{p}.gate"), out);
        out.push((format!("{p}.a_log"), &mut self.a_log));
        self.out_proj.push_named_mut(&format!("{p}.out_proj"), out);
    }
}

/// Reconstruction path: learnable mask token, one decoder block over the
/// restored sequences, and a two-layer per-token map to `N_n x 3` offsets.
#[derive(Clone, Debug, PartialEq)]
pub struct MaeHead {
    pub mask_token: Array2<f64>,
    pub block: Block,
    pub norm: Array2<f64>,
    pub l1: Linear,
    pub l2: Linear,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    pub point_l1: Linear,
    pub point_l2: Linear,
    pub pos_l1: Linear,
    pub pos_l2: Linear,
    pub blocks: Vec<Block>,
    pub norm_f: Array2<f64>,
    pub head: Linear,
    pub mae: MaeHead,
}

struct EmbedCache {
    h1_pre: Array2<f64>,
    h1: Array2<f64>,
    /// Winning row per (patch, channel).
    argmax: Array2<usize>,
    pos_pre: Array2<f64>,
    pos_h: Array2<f64>,
}

pub(crate) struct EncodeCache {
    blocks: Vec<BlockCache>,
    rms: RmsCache,
}

impl Model {
    pub fn new(config: &ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = config.d_model;
        let n = config.state_size;
        let point_l1 = Linear::init(&mut rng, config.embed_mode.n_features(), d);
        let point_l2 = Linear::init(&mut rng, d, d);
        let pos_l1 = Linear::init(&mut rng, config.pos_features(), d);
        let pos_l2 = Linear::init(&mut rng, d, d);
        let blocks = (0..config.n_blocks).map(|_| Block::init(&mut rng, d, n)).collect();
        let head = Linear::init(&mut rng, d, config.n_classes);
        let mae = MaeHead {
            mask_token: Array2::from_shape_fn((1, d), |_| rng.random_range(-0.02..0.02)),
            block: Block::init(&mut rng, d, n),
            norm: Array2::ones((1, d)),
            l1: Linear::init(&mut rng, d, 4 * d),
            l2: Linear::init(&mut rng, 4 * d, config.n_neighbors * 3),
        };
        Ok(Self {
            config: config.clone(),
            point_l1,
            point_l2,
            pos_l1,
            pos_l2,
            blocks,
            norm_f: Array2::ones((1, d)),
            head,
            mae,
        })
    }

    /// Same structure, all tensors zero; used as a gradient accumulator.
    pub fn zeros_like(&self) -> Self {
        Self {
            config: self.config.clone(),
            point_l1: self.point_l1.zeros_like(),
            point_l2: self.point_l2.zeros_like(),
            pos_l1: self.pos_l1.zeros_like(),
            pos_l2: self.pos_l2.zeros_like(),
            blocks: self.blocks.iter().map(Block::zeros_like).collect(),
            norm_f: Array2::zeros(self.norm_f.raw_dim()),
            head: self.head.zeros_like(),
            mae: MaeHead {
                mask_token: Array2::zeros(self.mae.mask_token.raw_dim()),
                block: self.mae.block.zeros_like(),
                norm: Array2::zeros(self.mae.norm.raw_dim()),
                l1: self.mae.l1.zeros_like(),
                l2: self.mae.l2.zeros_like(),
            },
        }
    }

    pub fn named_tensors(&self) -> Vec<(String, &Array2<f64>)> {
        let mut out = Vec::new();
        self.point_l1.push_named("point.l1", &mut out);
        self.point_l2.push_named("point.l2", &mut out);
        self.pos_l1.push_named("pos.l1", &mut out);
        self.pos_l2.push_named("pos.l2", &mut out);
        for (i, b) in self.blocks.iter().enumerate() {
            b.push_named(&format!("blocks.{i}"), &mut out);
        }
        out.push(("norm_f".into(), &self.norm_f));
        self.head.push_named("head", &mut out);
        out.push(("mae.mask_token".into(), &self.mae.mask_token));
        self.mae.block.push_named("mae.block", &mut out);
        out.push(("mae.norm".into(), &self.mae.norm));
        self.mae.l1.push_named("mae.l1", &mut out);
        self.mae.l2.push_named("mae.l2", &mut out);
        out
    }

    pub fn named_tensors_mut(&mut self) -> Vec<(String, &mut Array2<f64>)> {
        let mut out = Vec::new();
        self.point_l1.push_named_mut("point.l1", &mut out);
        self.point_l2.push_named_mut("point.l2", &mut out);
        self.pos_l1.push_named_mut("pos.l1", &mut out);
        self.pos_l2.push_named_mut("pos.l2", &mut out);
        for (i, b) in self.blocks.iter_mut().enumerate() {
            b.push_named_mut(&format!("blocks.{i}"), &mut out);
        }
        out.push(("norm_f".into(), &mut self.norm_f));
        self.head.push_named_mut("head", &mut out);
        out.push(("mae.mask_token".into(), &mut self.mae.mask_token));
        self.mae.block.push_named_mut("mae.block", &mut out);
        out.push(("mae.norm".into(), &mut self.mae.norm));
        self.mae.l1.push_named_mut("mae.l1", &mut out);
        self.mae.l2.push_named_mut("mae.l2", &mut out);
        out
    }

    pub fn n_parameters(&self) -> usize {
        self.named_tensors().iter().map(|(_, t)| t.len()).sum()
    }

    /// `self += alpha * other`, tensor by tensor.
    pub fn add_scaled(&mut self, alpha: f64, other: &Model) {
        for ((_, a), (_, b)) in self.named_tensors_mut().into_iter().zip(other.named_tensors()) {
            a.scaled_add(alpha, b);
        }
    }

    pub fn norm(&self) -> f64 {
        self.named_tensors()
            .iter()
            .map(|(_, t)| t.iter().map(|v| v * v).sum::<f64>())
            .sum::<f64>()
            .sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.named_tensors().iter().all(|(_, t)| t.iter().all(|v| v.is_finite()))
    }

    fn embed_forward(&self, sample: &PreparedCloud) -> Result<(Array2<f64>, Array2<f64>, EmbedCache)> {
        let n_c = sample.n_centers();
        let n_n = sample.n_neighbors();
        if sample.point_features.dim() != (n_c * n_n, self.config.embed_mode.n_features())
            || sample.pos_input.dim() != (n_c, self.config.pos_features())
        {
            return Err(invalid("model: sample features do not match the model configuration"));
        }
        let h1_pre = self.point_l1.forward(&sample.point_features);
        let h1 = silu(&h1_pre);
        let h2 = self.point_l2.forward(&h1);
        let d = self.config.d_model;
        let mut tokens = Array2::<f64>::zeros((n_c, d));
        let mut argmax = Array2::<usize>::zeros((n_c, d));
        for t in 0..n_c {
            for ch in 0..d {
                let mut best = t * n_n;
                for r in t * n_n + 1..(t + 1) * n_n {
                    if h2[[r, ch]] > h2[[best, ch]] {
                        best = r;
                    }
                }
                tokens[[t, ch]] = h2[[best, ch]];
                argmax[[t, ch]] = best;
            }
        }
        let pos_pre = self.pos_l1.forward(&sample.pos_input);
        let pos_h = silu(&pos_pre);
        let pos = self.pos_l2.forward(&pos_h);
        Ok((
            tokens,
            pos,
            EmbedCache {
                h1_pre,
                h1,
                argmax,
                pos_pre,
                pos_h,
            },
        ))
    }

    fn embed_backward(
        &self,
        sample: &PreparedCloud,
        c: &EmbedCache,
        dtokens: &Array2<f64>,
        dpos: &Array2<f64>,
        g: &mut Model,
    ) {
        let mut dh2 = Array2::<f64>::zeros(c.h1.raw_dim());
        for ((t, ch), &r) in c.argmax.indexed_iter() {
            dh2[[r, ch]] += dtokens[[t, ch]];
        }
        let dh1 = self.point_l2.backward(&c.h1, &dh2, &mut g.point_l2);
        let dh1_pre = silu_backward(&c.h1_pre, &dh1);
        self.point_l1.backward(&sample.point_features, &dh1_pre, &mut g.point_l1);
        let dpos_h = self.pos_l2.backward(&c.pos_h, dpos, &mut g.pos_l2);
        let dpos_pre = silu_backward(&c.pos_pre, &dpos_h);
        self.pos_l1.backward(&sample.pos_input, &dpos_pre, &mut g.pos_l1);
    }

    /// Patch tokens (max-pooled point features) and positional codes, each `N_c x d`.
    pub fn embed(&self, sample: &PreparedCloud) -> Result<(Array2<f64>, Array2<f64>)> {
        self.embed_forward(sample).map(|(t, p, _)| (t, p))
    }

    pub(crate) fn encode_forward(
        &self,
        x: &Array2<f64>,
        seqs: &[Vec<usize>],
    ) -> Result<(Array2<f64>, EncodeCache)> {
        let mut h = x.clone();
        let mut caches = Vec::with_capacity(self.blocks.len());
        for b in &self.blocks {
            let (next, c) = b.forward(&h, seqs)?;
            caches.push(c);
            h = next;
        }
        let (out, rms) = rms_forward(&h, &self.norm_f);
        Ok((out, EncodeCache { blocks: caches, rms }))
    }

    pub(crate) fn encode_backward(&self, c: &EncodeCache, dout: &Array2<f64>, g: &mut Model) -> Result<Array2<f64>> {
        let mut dh = rms_backward(&c.rms, &self.norm_f, dout, &mut g.norm_f);
        for (i, b) in self.blocks.iter().enumerate().rev() {
            dh = b.backward(&c.blocks[i], &dh, &mut g.blocks[i])?;
        }
        Ok(dh)
    }

    /// Runs the encoder blocks over `x` (one row per token) with the given
    /// token sequences; returns one normalized feature row per token.
    pub fn encode(&self, x: &Array2<f64>, orders: &[TraversalOrder]) -> Result<Array2<f64>> {
        let seqs: Vec<Vec<usize>> = orders.iter().map(|o| o.permutation().to_vec()).collect();
        self.encode_forward(x, &seqs).map(|r| r.0)
    }

    /// Encoder over the `2s` forward/reverse eigenvector orders.
    pub fn encode_sast(&self, x: &Array2<f64>, orders: &[TraversalOrder]) -> Result<Array2<f64>> {
        if orders.is_empty() || !orders.len().is_multiple_of(2) {
            return Err(invalid(format!(
                "encode_sast: expected 2s orders, got {}",
                orders.len()
            )));
        }
        self.encode(x, orders)
    }

    /// Encoder over the increasing and decreasing code orders.
    pub fn encode_hlt(&self, x: &Array2<f64>, orders: &[TraversalOrder]) -> Result<Array2<f64>> {
        if orders.len() != 2 {
            return Err(invalid(format!("encode_hlt: expected 2 orders, got {}", orders.len())));
        }
        self.encode(x, orders)
    }

    fn token_inputs(tokens: &Array2<f64>, pos: &Array2<f64>) -> Array2<f64> {
        tokens + pos
    }

    /// Class logits for one cloud.
    pub fn logits(&self, sample: &PreparedCloud, orders: &[TraversalOrder]) -> Result<Vec<f64>> {
        Ok(self.classifier_loss(sample, orders, None)?.1)
    }

    /// Cross-entropy of the mean-pooled encoder features; accumulates gradients
    /// into `grad` when given. Returns `(loss, logits)`.
    pub fn classifier_loss(
        &self,
        sample: &PreparedCloud,
        orders: &[TraversalOrder],
        grad: Option<&mut Model>,
    ) -> Result<(f64, Vec<f64>)> {
        if sample.label >= self.config.n_classes {
            return Err(invalid(format!(
                "classifier: label {} but the model has {} classes",
                sample.label, self.config.n_classes
            )));
        }
        let seqs: Vec<Vec<usize>> = orders.iter().map(|o| o.permutation().to_vec()).collect();
        let (tokens, pos, ec) = self.embed_forward(sample)?;
        let x0 = Self::token_inputs(&tokens, &pos);
        let (f, enc) = self.encode_forward(&x0, &seqs)?;
        let pooled = f.mean_axis(Axis(0)).expect("non-empty").insert_axis(Axis(0));
        let logits = self.head.forward(&pooled);
        let logits: Vec<f64> = logits.iter().copied().collect();
        let (loss, dlogits) = cross_entropy(&logits, sample.label);
        if let Some(g) = grad {
            let dl = Array2::from_shape_vec((1, dlogits.len()), dlogits).expect("shape");
            let dpooled = self.head.backward(&pooled, &dl, &mut g.head);
            let n_tok = f.nrows() as f64;
            let df = Array2::from_shape_fn(f.raw_dim(), |(_, j)| dpooled[[0, j]] / n_tok);
            let dx0 = self.encode_backward(&enc, &df, g)?;
            self.embed_backward(sample, &ec, &dx0, &dx0, g);
        }
        Ok((loss, logits))
    }

    /// Masked reconstruction loss: mean Chamfer distance over the masked
    /// patches, with gradients accumulated into `grad` when given. Zero when
    /// nothing is masked.
    pub fn mae_loss(
        &self,
        sample: &PreparedCloud,
        orders: &[TraversalOrder],
        plan: &MaskPlan,
        tar: TarMode,
        grad: Option<&mut Model>,
    ) -> Result<f64> {
        let n_c = sample.n_centers();
        if plan.n_tokens != n_c {
            return Err(invalid(format!(
                "mae: mask plan over {} tokens for a cloud with {n_c}",
                plan.n_tokens
            )));
        }
        if sample.n_neighbors() != self.config.n_neighbors {
            return Err(invalid("mae: patch size does not match the decoder output"));
        }
        if plan.n_masked() == 0 {
            return Ok(0.0);
        }
        let visible = plan.visible();
        let (local, enc_seqs, dec_seqs) = mae_sequences(n_c, orders, plan, tar)?;

        let (tokens, pos, ec) = self.embed_forward(sample)?;
        let x0 = Self::token_inputs(&tokens, &pos);
        let xv = x0.select(Axis(0), visible);
        let (ev, enc) = self.encode_forward(&xv, &enc_seqs)?;

        let d = self.config.d_model;
        let mut z = Array2::<f64>::zeros((n_c, d));
        for t in 0..n_c {
            if local[t] != usize::MAX {
                z.row_mut(t).assign(&ev.row(local[t]));
            } else {
                let row = &self.mae.mask_token.row(0) + &pos.row(t);
                z.row_mut(t).assign(&row);
            }
        }
        let (zd, dec) = self.mae.block.forward(&z, &dec_seqs)?;
        let (fd, dec_rms) = rms_forward(&zd, &self.mae.norm);
        let masked = &plan.masked;
        let fm = fd.select(Axis(0), masked);
        let h_pre = self.mae.l1.forward(&fm);
        let h = silu(&h_pre);
        let out = self.mae.l2.forward(&h);

        let n_n = self.config.n_neighbors;
        let scale = 1.0 / masked.len() as f64;
        let mut loss = 0.0;
        let mut dout = Array2::<f64>::zeros(out.raw_dim());
        for (i, &t) in masked.iter().enumerate() {
            let pred: Vec<Point3> = (0..n_n)
                .map(|j| Point3::new(out[[i, 3 * j]], out[[i, 3 * j + 1]], out[[i, 3 * j + 2]]))
                .collect();
            let (l, gp) = chamfer_with_grad(&sample.targets[t], &pred)?;
            loss += l;
            for (j, p) in gp.iter().enumerate() {
                dout[[i, 3 * j]] = p.x * scale;
                dout[[i, 3 * j + 1]] = p.y * scale;
                dout[[i, 3 * j + 2]] = p.z * scale;
            }
        }
        loss *= scale;

        if let Some(g) = grad {
            let dh = self.mae.l2.backward(&h, &dout, &mut g.mae.l2);
            let dh_pre = silu_backward(&h_pre, &dh);
            let dfm = self.mae.l1.backward(&fm, &dh_pre, &mut g.mae.l1);
            let mut dfd = Array2::<f64>::zeros(fd.raw_dim());
            for (i, &t) in masked.iter().enumerate() {
                dfd.row_mut(t).assign(&dfm.row(i));
            }
            let dzd = rms_backward(&dec_rms, &self.mae.norm, &dfd, &mut g.mae.norm);
            let dz = self.mae.block.backward(&dec, &dzd, &mut g.mae.block)?;
            let mut dev = Array2::<f64>::zeros(ev.raw_dim());
            let mut dpos = Array2::<f64>::zeros(pos.raw_dim());
            for t in 0..n_c {
                if local[t] != usize::MAX {
                    dev.row_mut(local[t]).assign(&dz.row(t));
                } else {
                    let mut mt = g.mae.mask_token.row_mut(0);
                    mt += &dz.row(t);
                    dpos.row_mut(t).assign(&dz.row(t));
                }
            }
            let dxv = self.encode_backward(&enc, &dev, g)?;
            let mut dx0 = Array2::<f64>::zeros(x0.raw_dim());
            for (i, &t) in visible.iter().enumerate() {
                dx0.row_mut(t).assign(&dxv.row(i));
            }
            dpos += &dx0;
            self.embed_backward(sample, &ec, &dx0, &dpos, g);
        }
        Ok(loss)
    }

    /// Decoder output for the masked tokens, as `N_n` predicted points per
    /// masked patch in cloud coordinates (offsets added to the patch center).
    pub fn reconstruct(
        &self,
        sample: &PreparedCloud,
        orders: &[TraversalOrder],
        plan: &MaskPlan,
        tar: TarMode,
    ) -> Result<Vec<Vec<Point3>>> {
        let n_n = self.config.n_neighbors;
        let out = self.decode_outputs(sample, orders, plan, tar)?;
        let mut recon = Vec::with_capacity(plan.n_masked());
        for (i, &t) in plan.masked.iter().enumerate() {
            let row = out.slice(s![i, ..]);
            recon.push(
                (0..n_n)
                    .map(|j| Point3::new(row[3 * j], row[3 * j + 1], row[3 * j + 2]) + sample.centers[t])
                    .collect(),
            );
        }
        Ok(recon)
    }

    fn decode_outputs(
        &self,
        sample: &PreparedCloud,
        orders: &[TraversalOrder],
        plan: &MaskPlan,
        tar: TarMode,
    ) -> Result<Array2<f64>> {
        let n_c = sample.n_centers();
        let visible = plan.visible();
        let (local, enc_seqs, dec_seqs) = mae_sequences(n_c, orders, plan, tar)?;
        let (tokens, pos, _) = self.embed_forward(sample)?;
        let x0 = Self::token_inputs(&tokens, &pos);
        let (ev, _) = self.encode_forward(&x0.select(Axis(0), visible), &enc_seqs)?;
        let mut z = Array2::<f64>::zeros((n_c, self.config.d_model));
        for t in 0..n_c {
            if local[t] != usize::MAX {
                z.row_mut(t).assign(&ev.row(local[t]));
            } else {
                z.row_mut(t).assign(&(&self.mae.mask_token.row(0) + &pos.row(t)));
            }
        }
        let (zd, _) = self.mae.block.forward(&z, &dec_seqs)?;
        let (fd, _) = rms_forward(&zd, &self.mae.norm);
        let h = silu(&self.mae.l1.forward(&fd.select(Axis(0), &plan.masked)));
        Ok(self.mae.l2.forward(&h))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error::Error;
    use crate::geometry::{gen_shape, ShapeKind};
    use crate::mae::make_mask;
    use crate::pipeline::{prepare, EmbedMode, OrderingMode, TrainConfig};
    use crate::traversal::{Direction, OrderSource};

    fn small(embed_mode: EmbedMode) -> (Model, PreparedCloud) {
        let config = TrainConfig {
            n_centers: 16,
            n_neighbors: 8,
            k_neighbors: 6,
            s: 2,
            d_model: 8,
            state_size: 4,
            embed_mode,
            ..TrainConfig::default()
        };
        let cloud = gen_shape(ShapeKind::Torus, 300, 5, 0.01).unwrap();
        let sample = prepare(&cloud, 0, &config, 1).unwrap();
        (Model::new(&config.model_config(3), 2).unwrap(), sample)
    }

    fn identity_pair(n: usize) -> Vec<TraversalOrder> {
        let fwd = TraversalOrder::new((0..n).collect(), Direction::Forward, OrderSource::Sast { eigenvector: 1 })
            .unwrap();
        let rev = fwd.reversed();
        vec![fwd, rev]
    }

    /// Straight-line re-implementation of one block: per step, per channel,
    /// per state element, over the concatenated sequence.
    fn naive_block(b: &Block, x: &Array2<f64>, seqs: &[Vec<usize>]) -> Array2<f64> {
        let (t, d) = x.dim();
        let n = b.a_log.ncols();
        let rms = |v: &[f64], g: &Array2<f64>| -> Vec<f64> {
            let ms = v.iter().map(|a| a * a).sum::<f64>() / v.len() as f64;
            v.iter().enumerate().map(|(j, a)| a / (ms + 1e-6).sqrt() * g[[0, j]]).collect()
        };
        let lin = |l: &Linear, v: &[f64]| -> Vec<f64> {
            (0..l.w.ncols())
                .map(|o| l.b[[0, o]] + v.iter().enumerate().map(|(i, a)| a * l.w[[i, o]]).sum::<f64>())
                .collect()
        };
        let silu1 = |v: f64| v / (1.0 + (-v).exp());
        let mut normed = Vec::new();
        let mut u = Vec::new();
        for r in 0..t {
            let nr = rms(&x.row(r).to_vec(), &b.norm);
            u.push(lin(&b.in_proj, &nr).into_iter().map(silu1).collect::<Vec<_>>());
            normed.push(nr);
        }
        let mut acc = vec![vec![0.0; d]; t];
        let mut h = vec![vec![0.0; n]; d];
        for &tok in seqs.iter().flatten() {
            let dt: Vec<f64> = lin(&b.dt_proj, &u[tok]).into_iter().map(|z| (1.0 + z.exp()).ln()).collect();
            let bv = lin(&b.b_proj, &u[tok]);
            let cv = lin(&b.c_proj, &u[tok]);
            for ch in 0..d {
                let mut y = 0.0;
                for s in 0..n {
                    let a = -b.a_log[[ch, s]].exp();
                    let abar = (1.0 + dt[ch] * a / 2.0) / (1.0 - dt[ch] * a / 2.0);
                    let bbar = dt[ch] * bv[s] / (1.0 - dt[ch] * a / 2.0);
                    h[ch][s] = abar * h[ch][s] + bbar * u[tok][ch];
                    y += cv[s] * h[ch][s];
                }
                acc[tok][ch] += y / seqs.len() as f64;
            }
        }
        let mut out = x.clone();
        for r in 0..t {
            let gate: Vec<f64> = lin(&b.gate, &normed[r]).into_iter().map(silu1).collect();
            let o: Vec<f64> = (0..d).map(|c| acc[r][c] * gate[c]).collect();
            for (c, v) in lin(&b.out_proj, &o).into_iter().enumerate() {
                out[[r, c]] += v;
            }
        }
        out
    }

    #[test]
    fn block_matches_naive_loops() {
        let (model, sample) = small(EmbedMode::Invariant);
        let (tok, pos) = model.embed(&sample).unwrap();
        let x = &tok + &pos;
        let orders = sample.orders(None).unwrap();
        let seqs: Vec<Vec<usize>> = orders.iter().map(|o| o.permutation().to_vec()).collect();
        let (got, cache) = model.blocks[0].forward(&x, &seqs).unwrap();
        assert_eq!(cache.tok.len(), 4 * 16);
        let want = naive_block(&model.blocks[0], &x, &seqs);
        assert!((&got - &want).iter().all(|v| v.abs() < 1e-12));

        // identity order and its reverse: a bidirectional pass over the tokens
        let pair: Vec<Vec<usize>> = identity_pair(16).iter().map(|o| o.permutation().to_vec()).collect();
        let (got, _) = model.blocks[0].forward(&x, &pair).unwrap();
        let want = naive_block(&model.blocks[0], &x, &pair);
        assert!((&got - &want).iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn internal_sequence_is_orders_times_tokens() {
        let config = TrainConfig {
            n_centers: 128,
            n_neighbors: 8,
            ..TrainConfig::default()
        };
        let cloud = gen_shape(ShapeKind::Sphere, 1024, 1, 0.01).unwrap();
        let sample = prepare(&cloud, 0, &config, 0).unwrap();
        let model = Model::new(&config.model_config(2), 0).unwrap();
        let (tok, pos) = model.embed(&sample).unwrap();
        let seqs: Vec<Vec<usize>> =
            sample.orders(None).unwrap().iter().map(|o| o.permutation().to_vec()).collect();
        let (_, cache) = model.blocks[0].forward(&(&tok + &pos), &seqs).unwrap();
        assert_eq!(cache.tok.len(), 1024);
        assert_eq!(cache.scan.states().dim(), (1025, 32, 8));
    }

    #[test]
    fn tokens_ignore_point_order_within_patch() {
        let (model, sample) = small(EmbedMode::CenteredXyz);
        let mut shuffled = sample.clone();
        let n_n = sample.n_neighbors();
        for t in 0..sample.n_centers() {
            for j in 0..n_n {
                let src = t * n_n + (j * 3 + 1) % n_n;
                shuffled.point_features.row_mut(t * n_n + j).assign(&sample.point_features.row(src));
            }
        }
        assert_eq!(model.embed(&sample).unwrap().0, model.embed(&shuffled).unwrap().0);
    }

    #[test]
    fn translation_keeps_tokens_and_shifts_raw_positions() {
        let config = TrainConfig {
            n_centers: 16,
            n_neighbors: 8,
            k_neighbors: 6,
            s: 2,
            d_model: 8,
            embed_mode: EmbedMode::CenteredXyz,
            pos_mode: crate::pipeline::PosMode::RawXyz,
            ..TrainConfig::default()
        };
        let cloud = gen_shape(ShapeKind::Box, 300, 3, 0.0).unwrap();
        let shift = Point3::new(3.0, -1.0, 0.5);
        let moved = crate::geometry::PointCloud::new(cloud.points().iter().map(|&p| p + shift).collect()).unwrap();
        let a = prepare(&cloud, 0, &config, 0).unwrap();
        let b = prepare(&moved, 0, &config, 0).unwrap();
        let model = Model::new(&config.model_config(2), 0).unwrap();
        let (ta, pa) = model.embed(&a).unwrap();
        let (tb, pb) = model.embed(&b).unwrap();
        assert!((&ta - &tb).iter().all(|v| v.abs() < 1e-12));
        assert!((&pa - &pb).iter().any(|v| v.abs() > 1e-6));
        for (ra, rb) in a.pos_input.rows().into_iter().zip(b.pos_input.rows()) {
            for k in 0..3 {
                assert!((rb[k] - ra[k] - shift.coord(k)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn storage_permutation_is_consistent() {
        let (model, sample) = small(EmbedMode::Invariant);
        let (tok, pos) = model.embed(&sample).unwrap();
        let x = &tok + &pos;
        let orders = sample.orders(None).unwrap();
        let out = model.encode_sast(&x, &orders).unwrap();

        // new storage slot of token i is perm[i]
        let n = x.nrows();
        let perm: Vec<usize> = (0..n).map(|i| (i * 5 + 3) % n).collect();
        let mut xp = Array2::zeros(x.raw_dim());
        for i in 0..n {
            xp.row_mut(perm[i]).assign(&x.row(i));
        }
        let relabeled: Vec<TraversalOrder> = orders
            .iter()
            .map(|o| {
                let p = o.permutation().iter().map(|&i| perm[i]).collect();
                TraversalOrder::new(p, o.direction(), o.source()).unwrap()
            })
            .collect();
        let outp = model.encode_sast(&xp, &relabeled).unwrap();
        for i in 0..n {
            for c in 0..out.ncols() {
                assert!((out[[i, c]] - outp[[perm[i], c]]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn order_errors() {
        let (model, sample) = small(EmbedMode::Invariant);
        let (tok, pos) = model.embed(&sample).unwrap();
        let x = &tok + &pos;
        let short = identity_pair(15);
        assert!(matches!(model.encode_sast(&x, &short), Err(Error::InvalidArgument(_))));
        let orders = sample.orders(None).unwrap();
        assert!(matches!(model.encode_sast(&x, &orders[..3]), Err(Error::InvalidArgument(_))));
        assert!(matches!(model.encode_hlt(&x, &orders), Err(Error::InvalidArgument(_))));
        assert_eq!(model.encode_hlt(&x, &orders[..2]).unwrap().dim(), (16, 8));
    }

    #[test]
    fn hlt_with_equal_codes_matches_first_eigenvector_order() {
        let config = TrainConfig {
            n_centers: 16,
            n_neighbors: 8,
            k_neighbors: 6,
            s: 2,
            d_model: 8,
            ordering: OrderingMode::Hlt,
            ..TrainConfig::default()
        };
        let cloud = gen_shape(ShapeKind::Sphere, 300, 5, 0.01).unwrap();
        let mut sample = prepare(&cloud, 0, &config, 1).unwrap();
        sample.hlt = Some(crate::traversal::HltCode::from_bits(vec![vec![false; 2]; 16]).unwrap());
        let model = Model::new(&config.model_config(2), 0).unwrap();
        let (tok, pos) = model.embed(&sample).unwrap();
        let x = &tok + &pos;
        let hlt = model.encode_hlt(&x, &sample.orders(None).unwrap()).unwrap();
        let sast = crate::traversal::sast_orders(&sample.embedding, 1).unwrap();
        assert_eq!(model.encode(&x, &sast).unwrap(), hlt);
    }

    #[test]
    fn empty_mask_gives_zero_loss() {
        let (model, sample) = small(EmbedMode::Invariant);
        let orders = sample.orders(None).unwrap();
        let plan = make_mask(16, 0.0, 0).unwrap();
        let mut g = model.zeros_like();
        let l = model.mae_loss(&sample, &orders, &plan, TarMode::Restore, Some(&mut g)).unwrap();
        assert_eq!(l, 0.0);
        assert_eq!(g.norm(), 0.0);
    }

    #[test]
    fn reconstruction_matches_loss() {
        let (model, sample) = small(EmbedMode::Invariant);
        let orders = sample.orders(None).unwrap();
        let plan = make_mask(16, 0.5, 3).unwrap();
        let rec = model.reconstruct(&sample, &orders, &plan, TarMode::Restore).unwrap();
        let targets: Vec<Vec<Point3>> = plan
            .masked
            .iter()
            .map(|&t| sample.targets[t].iter().map(|&p| p + sample.centers[t]).collect())
            .collect();
        let want = model.mae_loss(&sample, &orders, &plan, TarMode::Restore, None).unwrap();
        let got = crate::mae::rec_loss(&targets, &rec).unwrap();
        assert!((got - want).abs() < 1e-9);
    }

    #[test]
    fn class_count_checked() {
        let (model, mut sample) = small(EmbedMode::Invariant);
        sample.label = 3;
        let orders = sample.orders(None).unwrap();
        assert!(matches!(model.classifier_loss(&sample, &orders, None), Err(Error::InvalidArgument(_))));
    }
}
