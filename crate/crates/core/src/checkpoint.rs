//! Text checkpoints for the neural models.
//!
//! ```text
//! clicksim-checkpoint 1
//! net<TAB>generator
//! dim<TAB>generator<TAB>l_h<TAB>64
//! tensor<TAB>generator/gru.w_z<TAB>64<TAB>256
//! <space-separated values>
//! ```
//!
//! Values are written in shortest round-trip form, so a load reproduces the
//! saved parameters bit for bit.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use crate::critic::Discriminator;
use crate::error::{Error, Result};
use crate::policy::Generator;
use crate::scalar::Scalar;
use crate::seqnet::{NetDims, SeqNet};

const MAGIC: &str = "clicksim-checkpoint 1";
const GEN: &str = "generator";
const DISC: &str = "discriminator";

fn write_net<S: Scalar>(out: &mut String, name: &str, net: &SeqNet<S>) {
    let _ = writeln!(out, "net\t{name}");
    for (k, v) in net.dims().to_fields() {
        let _ = writeln!(out, "dim\t{name}\t{k}\t{v}");
    }
    net.write_tensors(&format!("{name}/"), out);
}

pub fn to_text<S: Scalar>(generator: &Generator<S>, discriminator: Option<&Discriminator<S>>) -> String {
    let mut out = format!("{MAGIC}\n");
    write_net(&mut out, GEN, generator.net());
    if let Some(d) = discriminator {
        write_net(&mut out, DISC, d.net());
    }
    out
}

struct Tensor {
    name: String,
    rows: usize,
    cols: usize,
    values: Vec<f64>,
}

#[derive(Default)]
struct NetText {
    dims: BTreeMap<String, usize>,
    tensors: Vec<Tensor>,
}

impl NetText {
    fn build<S: Scalar>(self, out: usize) -> Result<SeqNet<S>> {
        let dims = NetDims::from_lookup(|k| self.dims.get(k).copied())?;
        let mut net = SeqNet::<S>::zeros(dims, out)?;
        if self.tensors.len() != net.store().len() {
            return Err(Error::Model(format!(
                "checkpoint holds {} tensors, model has {}",
                self.tensors.len(),
                net.store().len()
            )));
        }
        for t in self.tensors {
            net.set_tensor(&t.name, t.rows, t.cols, t.values.into_iter().map(S::lit).collect())?;
        }
        Ok(net)
    }
}

pub fn from_text<S: Scalar>(text: &str) -> Result<(Generator<S>, Option<Discriminator<S>>)> {
    let bad = |line: usize, msg: String| Error::Parse {
        path: "checkpoint".into(),
        line,
        msg,
    };
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, MAGIC)) => {}
        _ => return Err(bad(1, "missing checkpoint header".into())),
    }
    let mut nets: BTreeMap<String, NetText> = BTreeMap::new();
    while let Some((i, line)) = lines.next() {
        let f: Vec<&str> = line.split('\t').collect();
        match f.as_slice() {
            ["net", name] => {
                nets.insert(name.to_string(), NetText::default());
            }
            ["dim", net, key, v] => {
                let v = v.parse().map_err(|_| bad(i + 1, format!("bad dimension {v:?}")))?;
                nets.get_mut(*net)
                    .ok_or_else(|| bad(i + 1, format!("dimension for undeclared net {net}")))?
                    .dims
                    .insert(key.to_string(), v);
            }
            ["tensor", full, rows, cols] => {
                let (net, name) = full
                    .split_once('/')
                    .ok_or_else(|| bad(i + 1, format!("tensor name {full:?} lacks a net prefix")))?;
                let rows: usize = rows.parse().map_err(|_| bad(i + 1, "bad row count".into()))?;
                let cols: usize = cols.parse().map_err(|_| bad(i + 1, "bad column count".into()))?;
                let (j, vals) = lines.next().ok_or_else(|| bad(i + 2, "missing tensor values".into()))?;
                let values: Vec<f64> = if vals.is_empty() {
                    Vec::new()
                } else {
                    vals.split(' ')
                        .map(|v| v.parse().map_err(|_| bad(j + 1, format!("bad value {v:?}"))))
                        .collect::<Result<_>>()?
                };
                if values.len() != rows * cols {
                    return Err(bad(j + 1, format!("expected {} values, found {}", rows * cols, values.len())));
                }
                nets.get_mut(net)
                    .ok_or_else(|| bad(i + 1, format!("tensor for undeclared net {net}")))?
                    .tensors
                    .push(Tensor {
                        name: name.to_string(),
                        rows,
                        cols,
                        values,
                    });
            }
            _ => return Err(bad(i + 1, "unrecognised line".into())),
        }
    }
    let gen = nets
        .remove(GEN)
        .ok_or_else(|| Error::Model("checkpoint has no generator".into()))?;
    let generator = Generator::from_net(gen.build(2)?)?;
    let discriminator = match nets.remove(DISC) {
        Some(d) => Some(Discriminator::from_net(d.build(1)?)?),
        None => None,
    };
    Ok((generator, discriminator))
}

pub fn save<S: Scalar>(path: &Path, generator: &Generator<S>, discriminator: Option<&Discriminator<S>>) -> Result<()> {
    std::fs::write(path, to_text(generator, discriminator)).map_err(|e| Error::io(path, e))
}

pub fn load<S: Scalar>(path: &Path) -> Result<(Generator<S>, Option<Discriminator<S>>)> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    from_text(&text).map_err(|e| match e {
        Error::Parse { line, msg, .. } => Error::Parse {
            path: path.display().to_string(),
            line,
            msg,
        },
        other => other,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn dims() -> NetDims {
        NetDims::uniform(4, 6, 3, 3, 4)
    }

    #[test]
    fn round_trip_is_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let g = Generator::<f64>::random(dims(), 0.1, &mut rng).unwrap();
        let d = Discriminator::<f64>::random(dims(), 0.1, &mut rng).unwrap();
        let text = to_text(&g, Some(&d));
        let (g2, d2) = from_text::<f64>(&text).unwrap();
        assert_eq!(to_text(&g2, d2.as_ref()), text);
        for (a, b) in g.store().iter().zip(g2.store().iter()) {
            assert_eq!(a.value().as_slice(), b.value().as_slice());
        }
    }

    #[test]
    fn single_precision_round_trip() {
        let g = Generator::<f32>::random(dims(), 0.1, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let (g2, d2) = from_text::<f32>(&to_text(&g, None)).unwrap();
        assert!(d2.is_none());
        for (a, b) in g.store().iter().zip(g2.store().iter()) {
            assert_eq!(a.value().as_slice(), b.value().as_slice());
        }
    }

    #[test]
    fn shape_mismatch_is_reported() {
        let g = Generator::<f64>::zeros(dims()).unwrap();
        let text = to_text(&g, None).replace("dim\tgenerator\tl_h\t4", "dim\tgenerator\tl_h\t5");
        assert!(from_text::<f64>(&text).is_err());
    }

    #[test]
    fn truncated_file_is_a_parse_error() {
        let g = Generator::<f64>::zeros(dims()).unwrap();
        let text = to_text(&g, None);
        let cut: String = text.lines().take(14).collect::<Vec<_>>().join("\n");
        assert!(matches!(from_text::<f64>(&cut), Err(Error::Parse { .. } | Error::Model(_))));
    }
}
