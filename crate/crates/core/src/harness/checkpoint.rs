//! Binary checkpoints: an 8-byte magic, a little-endian u32 version, then
//! little-endian u64 sizes and f64 values.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::plasticity::{LayerTraces, OnlineLearner, PlasticityConfig};
use crate::snn::{Architecture, Biases, LifParams, Network};

pub const MAGIC: &[u8; 8] = b"SNNCKPT\0";
pub const VERSION: u32 = 1;

fn bad(msg: impl Into<String>) -> Error {
    Error::Checkpoint(msg.into())
}

#[derive(Default)]
struct Writer(Vec<u8>);

impl Writer {
    fn u64(&mut self, v: usize) {
        self.0.extend_from_slice(&(v as u64).to_le_bytes());
    }

    fn f64(&mut self, v: f64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }

    fn flag(&mut self, b: bool) {
        self.0.push(u8::from(b));
    }

    fn vec(&mut self, v: &[f64]) {
        self.u64(v.len());
        v.iter().for_each(|&x| self.f64(x));
    }

    fn matrix(&mut self, m: &Matrix) {
        self.u64(m.rows());
        self.u64(m.cols());
        m.as_slice().iter().for_each(|&x| self.f64(x));
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| bad("truncated file"))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u64(&mut self) -> Result<usize> {
        let v = u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes"));
        usize::try_from(v).map_err(|_| bad("size does not fit in usize"))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(
            self.take(8)?.try_into().expect("8 bytes"),
        ))
    }

    fn flag(&mut self) -> Result<bool> {
        match self.take(1)?[0] {
            0 => Ok(false),
            1 => Ok(true),
            b => Err(bad(format!("invalid flag byte {b}"))),
        }
    }

    fn vec(&mut self, expected: usize) -> Result<Vec<f64>> {
        let n = self.u64()?;
        if n != expected {
            return Err(bad(format!("vector of length {n}, expected {expected}")));
        }
        (0..n).map(|_| self.f64()).collect()
    }

    fn matrix(&mut self, rows: usize, cols: usize) -> Result<Matrix> {
        let (r, c) = (self.u64()?, self.u64()?);
        if (r, c) != (rows, cols) {
            return Err(bad(format!("matrix is {r}x{c}, expected {rows}x{cols}")));
        }
        let data = (0..r * c).map(|_| self.f64()).collect::<Result<Vec<_>>>()?;
        Ok(Matrix::from_vec(r, c, data))
    }
}

fn write_traces(w: &mut Writer, t: &LayerTraces) {
    w.matrix(&t.e_fast);
    w.matrix(&t.e_slow);
    w.matrix(&t.g);
    w.flag(t.g_sum.is_some());
    if let Some(s) = &t.g_sum {
        w.matrix(s);
    }
}

fn read_traces(r: &mut Reader<'_>, t: &mut LayerTraces) -> Result<()> {
    let (rows, cols) = t.e_fast.shape();
    t.e_fast = r.matrix(rows, cols)?;
    t.e_slow = r.matrix(rows, cols)?;
    t.g = r.matrix(rows, cols)?;
    t.g_sum = if r.flag()? {
        Some(r.matrix(rows, cols)?)
    } else {
        None
    };
    Ok(())
}

/// Serializes weights, neuron parameters and (optionally) learner state.
pub fn encode_checkpoint(net: &Network, learner: Option<&OnlineLearner>) -> Vec<u8> {
    let mut w = Writer::default();
    w.0.extend_from_slice(MAGIC);
    w.0.extend_from_slice(&VERSION.to_le_bytes());
    let a = &net.arch;
    for d in [a.n_in, a.n_h1, a.n_h2, a.n_out] {
        w.u64(d);
    }
    w.flag(a.recurrent);
    w.flag(a.bias);
    let p = &net.params;
    for v in [p.beta_h, p.beta_out, p.threshold, p.surrogate_slope] {
        w.f64(v);
    }
    let ws = &net.weights;
    w.matrix(&ws.w_in);
    if let Some(m) = &ws.w_rec {
        w.matrix(m);
    }
    w.matrix(&ws.w_h);
    w.matrix(&ws.w_out);
    if let Some(b) = &ws.biases {
        w.vec(&b.b1);
        w.vec(&b.b2);
        w.vec(&b.b_out);
    }
    w.flag(learner.is_some());
    if let Some(l) = learner {
        let t = &l.traces;
        write_traces(&mut w, &t.w_in);
        if let Some(r) = &t.w_rec {
            write_traces(&mut w, r);
        }
        write_traces(&mut w, &t.w_h);
        write_traces(&mut w, &t.w_out);
        w.u64(t.window_step);
        let m = &l.meta;
        w.f64(m.p);
        w.f64(m.s);
        w.f64(m.window_loss_acc);
        w.u64(m.window_steps);
        w.flag(m.prev_window_loss.is_some());
        w.f64(m.prev_window_loss.unwrap_or(0.0));
        let r = &l.rms;
        for e in [&r.x, &r.s1_prev, &r.s1, &r.s2, &r.e_out, &r.e2, &r.e1] {
            w.f64(e.mean_square);
        }
        w.u64(l.steps() as usize);
    }
    w.0
}

/// Inverse of [`encode_checkpoint`]. Learner state present in the blob is
/// restored only when `plasticity` is given.
pub fn decode_checkpoint(
    bytes: &[u8],
    plasticity: Option<PlasticityConfig>,
) -> Result<(Network, Option<OnlineLearner>)> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(8)? != MAGIC {
        return Err(bad("bad magic header"));
    }
    let version = u32::from_le_bytes(r.take(4)?.try_into().expect("4 bytes"));
    if version != VERSION {
        return Err(bad(format!("unsupported version {version}")));
    }
    let dims = [r.u64()?, r.u64()?, r.u64()?, r.u64()?];
    let mut arch =
        Architecture::new(dims[0], dims[1], dims[2], dims[3]).map_err(|e| bad(e.to_string()))?;
    arch.recurrent = r.flag()?;
    arch.bias = r.flag()?;
    let params = LifParams {
        beta_h: r.f64()?,
        beta_out: r.f64()?,
        threshold: r.f64()?,
        surrogate_slope: r.f64()?,
    };
    params.validate().map_err(|e| bad(e.to_string()))?;
    let mut net = Network::new(arch, params, 0);
    let ws = &mut net.weights;
    ws.w_in = r.matrix(arch.n_h1, arch.n_in)?;
    if arch.recurrent {
        ws.w_rec = Some(r.matrix(arch.n_h1, arch.n_h1)?);
    }
    ws.w_h = r.matrix(arch.n_h2, arch.n_h1)?;
    ws.w_out = r.matrix(arch.n_out, arch.n_h2)?;
    if arch.bias {
        ws.biases = Some(Biases {
            b1: r.vec(arch.n_h1)?,
            b2: r.vec(arch.n_h2)?,
            b_out: r.vec(arch.n_out)?,
        });
    }
    let has_learner = r.flag()?;
    let learner = match (has_learner, plasticity) {
        (true, Some(cfg)) => {
            let mut l = OnlineLearner::new(&net, cfg)?;
            let t = &mut l.traces;
            read_traces(&mut r, &mut t.w_in)?;
            if let Some(rec) = t.w_rec.as_mut() {
                read_traces(&mut r, rec)?;
            }
            read_traces(&mut r, &mut t.w_h)?;
            read_traces(&mut r, &mut t.w_out)?;
            t.window_step = r.u64()?;
            let m = &mut l.meta;
            m.p = r.f64()?;
            m.s = r.f64()?;
            m.window_loss_acc = r.f64()?;
            m.window_steps = r.u64()?;
            let has_prev = r.flag()?;
            let prev = r.f64()?;
            m.prev_window_loss = has_prev.then_some(prev);
            let rs = &mut l.rms;
            for e in [
                &mut rs.x,
                &mut rs.s1_prev,
                &mut rs.s1,
                &mut rs.s2,
                &mut rs.e_out,
                &mut rs.e2,
                &mut rs.e1,
            ] {
                e.mean_square = r.f64()?;
            }
            let steps = r.u64()?;
            l.restore_steps(steps as u64);
            Some(l)
        }
        _ => None,
    };
    if learner.is_some() || !has_learner {
        if r.pos != bytes.len() {
            return Err(bad("trailing bytes"));
        }
    }
    if !net.weights.is_finite() {
        return Err(bad("non-finite weights"));
    }
    Ok((net, learner))
}

pub fn save_checkpoint(path: &Path, net: &Network, learner: Option<&OnlineLearner>) -> Result<()> {
    fs::write(path, encode_checkpoint(net, learner))?;
    Ok(())
}

pub fn load_checkpoint(
    path: &Path,
    plasticity: Option<PlasticityConfig>,
) -> Result<(Network, Option<OnlineLearner>)> {
    decode_checkpoint(&fs::read(path)?, plasticity)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::plasticity::online_update_step;

    fn trained() -> (Network, OnlineLearner) {
        let mut net = Network::new(
            Architecture::new(5, 4, 3, 2).unwrap(),
            LifParams::default(),
            3,
        );
        let mut l = OnlineLearner::new(&net, PlasticityConfig::default()).unwrap();
        for t in 0..73 {
            let x: Vec<f64> = (0..5).map(|i| ((i + t) % 3) as f64).collect();
            online_update_step(&mut net, &mut l, &x, &[0.3, -0.2]).unwrap();
        }
        (net, l)
    }

    #[test]
    fn round_trip_is_exact() {
        let (net, l) = trained();
        let bytes = encode_checkpoint(&net, Some(&l));
        let (n2, l2) = decode_checkpoint(&bytes, Some(l.cfg.clone())).unwrap();
        let l2 = l2.unwrap();
        assert_eq!(n2.weights, net.weights);
        assert_eq!(n2.params, net.params);
        assert_eq!(l2.meta, l.meta);
        assert_eq!(l2.rms, l.rms);
        assert_eq!(l2.steps(), l.steps());
        assert_eq!(l2.traces.w_out.g, l.traces.w_out.g);
        assert_eq!(encode_checkpoint(&n2, Some(&l2)), bytes);
    }

    #[test]
    fn weights_only() {
        let (net, _) = trained();
        let (n2, l2) = decode_checkpoint(&encode_checkpoint(&net, None), None).unwrap();
        assert_eq!(n2.weights, net.weights);
        assert!(l2.is_none());
    }

    #[test]
    fn header_and_truncation_errors() {
        let (net, _) = trained();
        let mut bytes = encode_checkpoint(&net, None);
        assert_eq!(&bytes[..8], MAGIC);
        assert_eq!(&bytes[8..12], &1u32.to_le_bytes());
        assert!(decode_checkpoint(&bytes[..bytes.len() - 3], None).is_err());
        bytes[0] = b'X';
        assert!(matches!(
            decode_checkpoint(&bytes, None),
            Err(Error::Checkpoint(_))
        ));
        let mut v = encode_checkpoint(&net, None);
        v[8] = 9;
        assert!(decode_checkpoint(&v, None).is_err());
    }
}
