//! Embedding + GRU + linear head network shared by the generator and the
//! discriminator. Both unroll the same way: a start step whose input carries
//! only the query, then one step per rank with
//! `x_t = v_q ⊕ v_d ⊕ v_v ⊕ v_c`; they differ in the head width and in which
//! interaction id is fed as `v_c`.

use std::fmt::Write as _;

use rand::Rng;

use crate::clicklog::{Dataset, CLICK_VOCAB, OOV_ID, PAD_ID};
use crate::error::{Error, Result};
use crate::numkernel::{GruCache, GruCell, Matrix, ParamId, ParamStore};
use crate::scalar::Scalar;

/// Embedding rows held at zero: padding and the out-of-vocabulary slot.
const PINNED: [usize; 2] = [PAD_ID as usize, OOV_ID as usize];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NetDims {
    pub n_queries: usize,
    pub n_docs: usize,
    pub n_verticals: usize,
    pub n_clicks: usize,
    pub l_q: usize,
    pub l_d: usize,
    pub l_v: usize,
    pub l_c: usize,
    pub l_h: usize,
}

impl NetDims {
    /// Every embedding of size `emb`, hidden size `hidden`.
    pub fn uniform(n_queries: usize, n_docs: usize, n_verticals: usize, emb: usize, hidden: usize) -> Self {
        Self {
            n_queries,
            n_docs,
            n_verticals,
            n_clicks: CLICK_VOCAB,
            l_q: emb,
            l_d: emb,
            l_v: emb,
            l_c: emb,
            l_h: hidden,
        }
    }

    pub fn for_dataset(ds: &Dataset, emb: usize, hidden: usize) -> Self {
        Self::uniform(ds.n_queries(), ds.n_docs(), ds.n_verticals(), emb, hidden)
    }

    pub fn input_size(&self) -> usize {
        self.l_q + self.l_d + self.l_v + self.l_c
    }

    pub(crate) fn to_fields(self) -> [(&'static str, usize); 9] {
        [
            ("n_queries", self.n_queries),
            ("n_docs", self.n_docs),
            ("n_verticals", self.n_verticals),
            ("n_clicks", self.n_clicks),
            ("l_q", self.l_q),
            ("l_d", self.l_d),
            ("l_v", self.l_v),
            ("l_c", self.l_c),
            ("l_h", self.l_h),
        ]
    }

    pub(crate) fn from_lookup(get: impl Fn(&str) -> Option<usize>) -> Result<Self> {
        let f = |k: &str| get(k).ok_or_else(|| Error::Model(format!("checkpoint lacks dimension {k}")));
        Ok(Self {
            n_queries: f("n_queries")?,
            n_docs: f("n_docs")?,
            n_verticals: f("n_verticals")?,
            n_clicks: f("n_clicks")?,
            l_q: f("l_q")?,
            l_d: f("l_d")?,
            l_v: f("l_v")?,
            l_c: f("l_c")?,
            l_h: f("l_h")?,
        })
    }
}

/// Inputs of one rank: document, vertical and interaction ids.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StepInput {
    pub doc: u32,
    pub vertical: u32,
    pub click: u32,
}

/// Forward trace of one sequence, kept for the reverse pass.
#[derive(Debug, Clone)]
pub struct Unroll<S> {
    pub query: u32,
    pub inputs: Vec<StepInput>,
    /// Head inputs `m_t ⊙ h_t` for ranks 1..=T.
    pub features: Vec<Vec<S>>,
    /// Head outputs for ranks 1..=T.
    pub logits: Vec<Vec<S>>,
    /// Hidden state after the last step.
    pub last_hidden: Vec<S>,
    start: GruCache<S>,
    caches: Vec<GruCache<S>>,
    masks: Vec<Option<Vec<S>>>,
}

#[derive(Debug, Clone)]
pub struct SeqNet<S> {
    store: ParamStore<S>,
    dims: NetDims,
    out: usize,
    emb_q: ParamId,
    emb_d: ParamId,
    emb_v: ParamId,
    emb_c: ParamId,
    gru: GruCell,
    head_w: ParamId,
    head_b: ParamId,
}

impl<S: Scalar> SeqNet<S> {
    /// Zero-initialised network with an `out`-wide head.
    pub fn zeros(dims: NetDims, out: usize) -> Result<Self> {
        if dims.n_queries <= OOV_ID as usize || dims.n_docs <= OOV_ID as usize || dims.n_verticals <= OOV_ID as usize {
            return Err(Error::Model("vocabularies must include the reserved ids".into()));
        }
        if dims.n_clicks < CLICK_VOCAB {
            return Err(Error::Model(format!("click vocabulary must hold {CLICK_VOCAB} ids")));
        }
        let mut store = ParamStore::new();
        let mut emb = |name: &str, rows: usize, cols: usize| store.add(name, Matrix::zeros(rows, cols), PINNED.to_vec());
        let emb_q = emb("emb_q", dims.n_queries, dims.l_q)?;
        let emb_d = emb("emb_d", dims.n_docs, dims.l_d)?;
        let emb_v = emb("emb_v", dims.n_verticals, dims.l_v)?;
        let emb_c = emb("emb_c", dims.n_clicks, dims.l_c)?;
        let gru = GruCell::register(&mut store, "gru", dims.input_size(), dims.l_h)?;
        let head_w = store.add("head.w", Matrix::zeros(out, dims.l_h), vec![])?;
        let head_b = store.add("head.b", Matrix::zeros(out, 1), vec![])?;
        Ok(Self {
            store,
            dims,
            out,
            emb_q,
            emb_d,
            emb_v,
            emb_c,
            gru,
            head_w,
            head_b,
        })
    }

    /// Parameters drawn uniformly from `[-scale, scale]`.
    pub fn random<R: Rng + ?Sized>(dims: NetDims, out: usize, scale: f64, rng: &mut R) -> Result<Self> {
        let mut net = Self::zeros(dims, out)?;
        net.store.init_uniform(rng, scale);
        Ok(net)
    }

    pub fn dims(&self) -> NetDims {
        self.dims
    }

    pub fn out_size(&self) -> usize {
        self.out
    }

    pub fn store(&self) -> &ParamStore<S> {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore<S> {
        &mut self.store
    }

    pub fn head_ids(&self) -> (ParamId, ParamId) {
        (self.head_w, self.head_b)
    }

    fn emb_row(&self, table: ParamId, id: u32) -> Result<&[S]> {
        let m = self.store.value(table);
        if (id as usize) >= m.rows() {
            return Err(Error::Model(format!(
                "id {id} outside embedding table {} of {} rows",
                self.store.param(table).name(),
                m.rows()
            )));
        }
        Ok(m.row(id as usize))
    }

    fn input(&self, query: u32, step: Option<StepInput>) -> Result<Vec<S>> {
        let d = &self.dims;
        let mut x = Vec::with_capacity(d.input_size());
        x.extend_from_slice(self.emb_row(self.emb_q, query)?);
        match step {
            Some(s) => {
                x.extend_from_slice(self.emb_row(self.emb_d, s.doc)?);
                x.extend_from_slice(self.emb_row(self.emb_v, s.vertical)?);
                x.extend_from_slice(self.emb_row(self.emb_c, s.click)?);
            }
            None => x.resize(d.input_size(), S::zero()),
        }
        Ok(x)
    }

    /// `h_0` from the query-only input.
    pub fn start(&self, query: u32) -> Result<(Vec<S>, GruCache<S>)> {
        let x = self.input(query, None)?;
        Ok(self.gru.forward(&self.store, &x, &vec![S::zero(); self.dims.l_h])?)
    }

    pub fn advance(&self, query: u32, h: &[S], step: StepInput) -> Result<(Vec<S>, GruCache<S>)> {
        let x = self.input(query, Some(step))?;
        Ok(self.gru.forward(&self.store, &x, h)?)
    }

    pub fn head(&self, h: &[S]) -> Vec<S> {
        let mut y = self.store.value(self.head_b).as_slice().to_vec();
        self.store
            .value(self.head_w)
            .matvec_acc(h, &mut y)
            .expect("head shape fixed at construction");
        y
    }

    /// Full forward pass. With `dropout = Some((p, rng))` each head input is
    /// multiplied by an inverted-dropout mask.
    pub fn unroll<R: Rng + ?Sized>(
        &self,
        query: u32,
        inputs: &[StepInput],
        mut dropout: Option<(f64, &mut R)>,
    ) -> Result<Unroll<S>> {
        let (mut h, start) = self.start(query)?;
        let n = inputs.len();
        let mut caches = Vec::with_capacity(n);
        let mut features = Vec::with_capacity(n);
        let mut logits = Vec::with_capacity(n);
        let mut masks = Vec::with_capacity(n);
        for &s in inputs {
            let (h_new, cache) = self.advance(query, &h, s)?;
            h = h_new;
            let mask = match dropout.as_mut() {
                Some((p, rng)) if *p > 0.0 => {
                    let keep = S::lit(1.0 / (1.0 - *p));
                    Some(
                        (0..h.len())
                            .map(|_| if rng.gen::<f64>() < *p { S::zero() } else { keep })
                            .collect::<Vec<S>>(),
                    )
                }
                _ => None,
            };
            let feat: Vec<S> = match &mask {
                Some(m) => h.iter().zip(m).map(|(a, b)| *a * *b).collect(),
                None => h.clone(),
            };
            logits.push(self.head(&feat));
            features.push(feat);
            caches.push(cache);
            masks.push(mask);
        }
        Ok(Unroll {
            query,
            inputs: inputs.to_vec(),
            features,
            logits,
            last_hidden: h,
            start,
            caches,
            masks,
        })
    }

    fn scatter(&mut self, table: ParamId, id: u32, g: &[S]) {
        let row = self.store.grad_mut(table).row_mut(id as usize);
        for (r, v) in row.iter_mut().zip(g) {
            *r += *v;
        }
    }

    /// Back-propagates per-rank head cotangents through time, accumulating
    /// into the parameter gradients. Pinned rows are cleared afterwards.
    pub fn backward(&mut self, u: &Unroll<S>, dlogits: &[Vec<S>]) -> Result<()> {
        if dlogits.len() != u.caches.len() {
            return Err(Error::Model("cotangent count differs from unrolled steps".into()));
        }
        let d = self.dims;
        let mut dh = vec![S::zero(); d.l_h];
        for t in (0..u.caches.len()).rev() {
            let dy = &dlogits[t];
            let mut dfeat = vec![S::zero(); d.l_h];
            {
                let (w, dw) = self.store.value_and_grad_mut(self.head_w);
                w.matvec_t_acc(dy, &mut dfeat)?;
                dw.add_outer(dy, &u.features[t])?;
            }
            for (b, g) in self.store.grad_mut(self.head_b).as_mut_slice().iter_mut().zip(dy) {
                *b += *g;
            }
            match &u.masks[t] {
                Some(m) => dh.iter_mut().zip(dfeat.iter().zip(m)).for_each(|(a, (g, k))| *a += *g * *k),
                None => dh.iter_mut().zip(&dfeat).for_each(|(a, g)| *a += *g),
            }
            let (dx, dh_prev) = self.gru.backward(&mut self.store, &u.caches[t], &dh)?;
            let s = u.inputs[t];
            let (q_end, d_end, v_end) = (d.l_q, d.l_q + d.l_d, d.l_q + d.l_d + d.l_v);
            self.scatter(self.emb_q, u.query, &dx[..q_end]);
            self.scatter(self.emb_d, s.doc, &dx[q_end..d_end]);
            self.scatter(self.emb_v, s.vertical, &dx[d_end..v_end]);
            self.scatter(self.emb_c, s.click, &dx[v_end..]);
            dh = dh_prev;
        }
        let (dx, _) = self.gru.backward(&mut self.store, &u.start, &dh)?;
        self.scatter(self.emb_q, u.query, &dx[..d.l_q]);
        self.store.clear_pinned_grads();
        Ok(())
    }

    /// Tensor dump: `tensor<TAB>name<TAB>rows<TAB>cols` followed by one line
    /// of space-separated values.
    pub fn write_tensors(&self, prefix: &str, out: &mut String) {
        for p in self.store.iter() {
            let v = p.value();
            let _ = writeln!(out, "tensor\t{prefix}{}\t{}\t{}", p.name(), v.rows(), v.cols());
            let vals: Vec<String> = v.as_slice().iter().map(|x| format!("{:?}", x.as_f64())).collect();
            out.push_str(&vals.join(" "));
            out.push('\n');
        }
    }

    pub fn set_tensor(&mut self, name: &str, rows: usize, cols: usize, values: Vec<S>) -> Result<()> {
        let m = Matrix::from_vec(rows, cols, values)?;
        self.store.set_value(name, m)?;
        Ok(())
    }
}
