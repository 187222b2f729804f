//! Finite-difference verification of every differentiable primitive and of
//! the composite network paths.
//!
//! Each check reduces its output to a scalar with a random weighting, then
//! compares reverse-mode gradients with central differences. Probes whose
//! perturbation moves any ReLU or clamp input across its kink are skipped,
//! since a difference quotient straddling a kink is meaningless.

use alloc::boxed::Box;
use alloc::vec::Vec;

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::decoder::{ModulatedMlp, QueryBatch};
use crate::encoder::{image_tensor, Encoder};
use crate::image::{make_coord_grid, Image};
use crate::lfe::{sample, Lfe, SampleMode};
use crate::model::{Model, ModelConfig, Variant};
use crate::params::{Bound, ParamStore};
use crate::tensor::{gradient_check, CheckReport, Graph, RowMap, Tensor, Var};
use crate::trainer::charbonnier;
use crate::{Error, Result};

pub const TOLERANCE: f64 = 1e-4;
/// initial step of the extrapolated differences
pub const STEP: f64 = 1e-2;
/// components compared per trial for the network paths
const COMPOSITE_PROBES: usize = 40;

#[derive(Debug, Clone, PartialEq)]
pub struct CheckOutcome {
    pub name: &'static str,
    pub trials: usize,
    pub max_rel_error: f64,
    /// components compared over all trials
    pub compared: usize,
    /// probes skipped for crossing a kink
    pub skipped: usize,
}

impl CheckOutcome {
    pub fn passed(&self) -> bool {
        self.max_rel_error < TOLERANCE
    }
}

type Body = dyn Fn(&mut Graph, &[Var]) -> Result<Var>;

/// One sampled problem: inputs, the function, and optional probe subset.
struct Draw {
    inputs: Vec<Tensor>,
    f: Box<Body>,
    probe: Option<Vec<(usize, usize)>>,
}

fn run_case(
    name: &'static str,
    trials: usize,
    step: f64,
    rng: &mut ChaCha8Rng,
    make: &dyn Fn(&mut ChaCha8Rng) -> Result<Draw>,
) -> Result<CheckOutcome> {
    let mut out = CheckOutcome {
        name,
        trials,
        max_rel_error: 0.0,
        compared: 0,
        skipped: 0,
    };
    for _ in 0..trials {
        let draw = make(rng)?;
        let report: CheckReport = gradient_check(&*draw.f, &draw.inputs, step, draw.probe.as_deref())?;
        out.max_rel_error = out.max_rel_error.max(report.max_rel_error);
        out.compared += report.components;
        out.skipped += report.skipped;
    }
    Ok(out)
}

fn normal_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0))
}

/// `Σ out ⊙ w` for a fixed random `w`.
fn weighted(g: &mut Graph, out: Var, w: &Tensor) -> Result<Var> {
    let w = g.constant(w.clone());
    let p = g.mul(out, w)?;
    g.sum(p)
}

fn unary(
    shape: &'static [usize],
    lo: f64,
    hi: f64,
    op: fn(&mut Graph, Var) -> Result<Var>,
) -> impl Fn(&mut ChaCha8Rng) -> Result<Draw> {
    reducing(shape, shape, lo, hi, op)
}

/// Like [`unary`] for ops whose output shape is `out`.
fn reducing(
    shape: &'static [usize],
    out: &'static [usize],
    lo: f64,
    hi: f64,
    op: fn(&mut Graph, Var) -> Result<Var>,
) -> impl Fn(&mut ChaCha8Rng) -> Result<Draw> {
    move |rng| {
        let x = Tensor::from_fn(shape, |_| rng.random_range(lo..hi));
        let w = normal_tensor(rng, out);
        Ok(Draw {
            inputs: alloc::vec![x],
            f: Box::new(move |g, v| {
                let y = op(g, v[0])?;
                weighted(g, y, &w)
            }),
            probe: None,
        })
    }
}

fn binary(op: fn(&mut Graph, Var, Var) -> Result<Var>) -> impl Fn(&mut ChaCha8Rng) -> Result<Draw> {
    move |rng| {
        let a = normal_tensor(rng, &[3, 4]);
        let b = normal_tensor(rng, &[3, 4]);
        let w = normal_tensor(rng, &[3, 4]);
        Ok(Draw {
            inputs: alloc::vec![a, b],
            f: Box::new(move |g, v| {
                let y = op(g, v[0], v[1])?;
                weighted(g, y, &w)
            }),
            probe: None,
        })
    }
}

/// Random subset of all components across `inputs`.
fn probe_subset(rng: &mut ChaCha8Rng, inputs: &[Tensor], count: usize) -> Vec<(usize, usize)> {
    let flat: Vec<(usize, usize)> = inputs
        .iter()
        .enumerate()
        .flat_map(|(i, t)| (0..t.len()).map(move |j| (i, j)))
        .collect();
    let n = count.min(flat.len());
    let mut picks = index::sample(rng, flat.len(), n).into_vec();
    picks.sort_unstable();
    picks.into_iter().map(|k| flat[k]).collect()
}

fn random_image(rng: &mut ChaCha8Rng, h: usize, w: usize) -> Image {
    let px = (0..h * w * 3).map(|_| rng.random_range(0.0..1.0)).collect();
    Image::new(h, w, px).expect("valid size")
}

type Case = (&'static str, Box<dyn Fn(&mut ChaCha8Rng) -> Result<Draw>>);

fn primitive_cases() -> Vec<Case> {
    let mut v: Vec<Case> = Vec::new();
    v.push(("add", Box::new(binary(|g, a, b| g.add(a, b)))));
    v.push(("sub", Box::new(binary(|g, a, b| g.sub(a, b)))));
    v.push(("mul", Box::new(binary(|g, a, b| g.mul(a, b)))));
    v.push(("scale", Box::new(unary(&[3, 4], -1.0, 1.0, |g, a| g.scale(a, -1.7)))));
    v.push((
        "add_scalar",
        Box::new(unary(&[3, 4], -1.0, 1.0, |g, a| g.add_scalar(a, 0.3))),
    ));
    v.push(("relu", Box::new(unary(&[3, 4], -1.0, 1.0, |g, a| g.relu(a)))));
    v.push(("sin", Box::new(unary(&[3, 4], -3.0, 3.0, |g, a| g.sin(a)))));
    v.push(("exp", Box::new(unary(&[3, 4], -2.0, 2.0, |g, a| g.exp(a)))));
    v.push(("sqrt", Box::new(unary(&[3, 4], 0.2, 2.0, |g, a| g.sqrt(a)))));
    v.push((
        "clamp",
        Box::new(unary(&[3, 4], -1.0, 1.0, |g, a| g.clamp(a, -0.5, 0.5))),
    ));
    v.push((
        "sum",
        Box::new(reducing(&[3, 4], &[1], -1.0, 1.0, |g, a| {
            let s = g.sum(a)?;
            g.mul(s, s)
        })),
    ));
    v.push((
        "mean",
        Box::new(reducing(&[3, 4], &[1], -1.0, 1.0, |g, a| {
            let s = g.mean(a)?;
            g.mul(s, s)
        })),
    ));
    v.push((
        "transpose",
        Box::new(|rng: &mut ChaCha8Rng| {
            let x = normal_tensor(rng, &[3, 4]);
            let w = normal_tensor(rng, &[4, 3]);
            Ok(Draw {
                inputs: alloc::vec![x],
                f: Box::new(move |g, v| {
                    let y = g.transpose(v[0])?;
                    weighted(g, y, &w)
                }),
                probe: None,
            })
        }),
    ));
    v.push((
        "reshape",
        Box::new(|rng: &mut ChaCha8Rng| {
            let x = normal_tensor(rng, &[3, 4]);
            let w = normal_tensor(rng, &[2, 6]);
            Ok(Draw {
                inputs: alloc::vec![x],
                f: Box::new(move |g, v| {
                    let y = g.reshape(v[0], &[2, 6])?;
                    let y = g.mul(y, y)?;
                    weighted(g, y, &w)
                }),
                probe: None,
            })
        }),
    ));
    v.push((
        "linear",
        Box::new(|rng: &mut ChaCha8Rng| {
            let x = normal_tensor(rng, &[3, 4]);
            let w = normal_tensor(rng, &[4, 5]);
            let b = normal_tensor(rng, &[5]);
            let r = normal_tensor(rng, &[3, 5]);
            Ok(Draw {
                inputs: alloc::vec![x, w, b],
                f: Box::new(move |g, v| {
                    let y = g.linear(v[0], v[1], Some(v[2]))?;
                    weighted(g, y, &r)
                }),
                probe: None,
            })
        }),
    ));
    for bias in [true, false] {
        let name = if bias { "conv2d" } else { "conv2d_nobias" };
        v.push((
            name,
            Box::new(move |rng: &mut ChaCha8Rng| {
                let x = normal_tensor(rng, &[2, 5, 4]);
                let w = normal_tensor(rng, &[3, 2, 3, 3]);
                let b = normal_tensor(rng, &[3]);
                let r = normal_tensor(rng, &[3, 5, 4]);
                let mut inputs = alloc::vec![x, w];
                if bias {
                    inputs.push(b);
                }
                Ok(Draw {
                    inputs,
                    f: Box::new(move |g, v| {
                        let y = g.conv2d(v[0], v[1], v.get(2).copied())?;
                        weighted(g, y, &r)
                    }),
                    probe: None,
                })
            }),
        ));
    }
    v.push((
        "concat",
        Box::new(|rng: &mut ChaCha8Rng| {
            let a = normal_tensor(rng, &[3, 2]);
            let b = normal_tensor(rng, &[3, 4]);
            let r = normal_tensor(rng, &[3, 6]);
            Ok(Draw {
                inputs: alloc::vec![a, b],
                f: Box::new(move |g, v| {
                    let y = g.concat(&[v[0], v[1]])?;
                    let y = g.mul(y, y)?;
                    weighted(g, y, &r)
                }),
                probe: None,
            })
        }),
    ));
    v.push((
        "rows",
        Box::new(|rng: &mut ChaCha8Rng| {
            let x = normal_tensor(rng, &[5, 3]);
            let mut map = RowMap::new(5);
            for _ in 0..7 {
                let taps: Vec<(usize, f64)> = (0..3)
                    .map(|_| (rng.random_range(0..5), rng.random_range(-1.0..1.0)))
                    .collect();
                map.push_row(&taps);
            }
            let r = normal_tensor(rng, &[7, 3]);
            Ok(Draw {
                inputs: alloc::vec![x],
                f: Box::new(move |g, v| {
                    let y = g.rows(v[0], map.clone())?;
                    let y = g.mul(y, y)?;
                    weighted(g, y, &r)
                }),
                probe: None,
            })
        }),
    ));
    v.push((
        "unfold3x3",
        Box::new(|rng: &mut ChaCha8Rng| {
            let x = normal_tensor(rng, &[2, 4, 3]);
            let r = normal_tensor(rng, &[18, 4, 3]);
            Ok(Draw {
                inputs: alloc::vec![x],
                f: Box::new(move |g, v| {
                    let y = g.unfold3x3(v[0])?;
                    let y = g.mul(y, y)?;
                    weighted(g, y, &r)
                }),
                probe: None,
            })
        }),
    ));
    v
}

fn composite_cases() -> Vec<Case> {
    let mut v: Vec<Case> = Vec::new();

    v.push((
        "encoder",
        Box::new(|rng: &mut ChaCha8Rng| {
            let mut store = ParamStore::new();
            let enc = Encoder::new(&mut store, rng, 3, 1);
            let img = image_tensor(&random_image(rng, 6, 5));
            let r = normal_tensor(rng, &[3, 6, 5]);
            let inputs = store.tensors().to_vec();
            let probe = Some(probe_subset(rng, &inputs, COMPOSITE_PROBES));
            Ok(Draw {
                inputs,
                f: Box::new(move |g, vars| {
                    let p = Bound::from_vars(vars.to_vec());
                    let x = g.constant(img.clone());
                    let fm = enc.encode(g, &p, x)?;
                    weighted(g, fm.values, &r)
                }),
                probe,
            })
        }),
    ));

    v.push((
        "lfe",
        Box::new(|rng: &mut ChaCha8Rng| {
            let mut store = ParamStore::new();
            let lfe = Lfe::new(&mut store, rng, 3, 2, 3);
            let img = image_tensor(&random_image(rng, 5, 5));
            let r = normal_tensor(rng, &[3, 5, 5]);
            let noise_seed: u64 = rng.random();
            let inputs = store.tensors().to_vec();
            let probe = Some(probe_subset(rng, &inputs, COMPOSITE_PROBES));
            Ok(Draw {
                inputs,
                f: Box::new(move |g, vars| {
                    let p = Bound::from_vars(vars.to_vec());
                    let x = g.constant(img.clone());
                    let dist = lfe.encode(g, &p, x)?;
                    let mut noise = ChaCha8Rng::seed_from_u64(noise_seed);
                    let z = sample(g, &dist, SampleMode::Train, &mut noise)?;
                    let t = lfe.decode(g, &p, z)?;
                    weighted(g, t.values, &r)
                }),
                probe,
            })
        }),
    ));

    v.push((
        "modulated_mlp",
        Box::new(|rng: &mut ChaCha8Rng| {
            let mut store = ParamStore::new();
            let mlp = ModulatedMlp::new(&mut store, rng, 6, 5, 3, 42);
            let x = normal_tensor(rng, &[4, 6]);
            let enc = Tensor::from_fn(&[2, 42], |_| rng.random_range(-1.0..1.0));
            let expand = RowMap::gather(2, &[0, 0, 1, 1]);
            let r = normal_tensor(rng, &[4, 3]);
            let inputs = store.tensors().to_vec();
            let probe = Some(probe_subset(rng, &inputs, COMPOSITE_PROBES));
            Ok(Draw {
                inputs,
                f: Box::new(move |g, vars| {
                    let p = Bound::from_vars(vars.to_vec());
                    let xi = g.constant(x.clone());
                    let e = g.constant(enc.clone());
                    let y = mlp.forward(g, &p, xi, e, Some(&expand), true)?;
                    weighted(g, y, &r)
                }),
                probe,
            })
        }),
    ));

    v.push((
        "full_loss",
        Box::new(|rng: &mut ChaCha8Rng| {
            let cfg = ModelConfig {
                features: 3,
                res_blocks: 1,
                lfe_hidden: 3,
                latent: 2,
                tokens: 2,
                mlp_blocks: 2,
                hidden: 6,
                pe_freqs: 3,
            };
            let model = Model::new(cfg, Variant::FULL, rng.random())?;
            let lr = random_image(rng, 5, 5);
            let grid = make_coord_grid(9, 9)?;
            let picks = index::sample(rng, grid.len(), 6).into_vec();
            let coords = picks.iter().map(|&i| grid.coords()[i]).collect();
            let queries = QueryBatch::for_scale(coords, [1.8, 1.8])?;
            let target = Tensor::from_fn(&[6, 3], |_| rng.random_range(0.0..1.0));
            let noise_seed: u64 = rng.random();
            let inputs = model.params().tensors().to_vec();
            let probe = Some(probe_subset(rng, &inputs, COMPOSITE_PROBES));
            Ok(Draw {
                inputs,
                f: Box::new(move |g, vars| {
                    let p = Bound::from_vars(vars.to_vec());
                    let mut noise = ChaCha8Rng::seed_from_u64(noise_seed);
                    let pred = model
                        .forward(g, &p, &lr, &queries, &Variant::FULL, SampleMode::Train, &mut noise)?
                        .ok_or_else(|| Error::invalid("gradcheck", "empty batch"))?;
                    let t = g.constant(target.clone());
                    charbonnier(g, pred, t, 1e-3)
                }),
                probe,
            })
        }),
    ));
    v
}

/// Names of every check in suite order.
pub fn check_names() -> Vec<&'static str> {
    primitive_cases()
        .into_iter()
        .chain(composite_cases())
        .map(|(n, _)| n)
        .collect()
}

/// Runs every check for `trials` draws each.
pub fn run_suite(trials: usize, seed: u64) -> Result<Vec<CheckOutcome>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    primitive_cases()
        .into_iter()
        .chain(composite_cases())
        .map(|(name, make)| run_case(name, trials, STEP, &mut rng, &*make))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn suite_covers_primitives_and_paths() {
        let names = check_names();
        for n in [
            "relu",
            "sin",
            "conv2d",
            "linear",
            "rows",
            "unfold3x3",
            "encoder",
            "lfe",
            "modulated_mlp",
            "full_loss",
        ] {
            assert!(names.contains(&n), "{n}");
        }
    }

    #[test]
    fn a_few_trials_pass() {
        for outcome in run_suite(2, 5).unwrap() {
            assert!(outcome.passed(), "{outcome:?}");
        }
    }
}
