//! Oracles shared by the integration tests.
#![allow(dead_code)]

pub mod cases;

use std::collections::BTreeMap;

use keep_core::datagen::{Domain, ImpressionRecord};
use keep_core::nncore::{Activation, DenseLayer, Matrix, MlpStack, Parameterized};
use keep_core::plugnet::{DownstreamModel, PlugInNetwork};
use rand::Rng;

pub const FD_DELTA: f32 = 1e-3;
pub const FD_TOL: f64 = 1e-3;
/// Gradient magnitude below which the error is measured absolutely. f32
/// forward passes quantize O(1) values at ~1e-7, which is ~5e-5 after
/// dividing by 2δ, so smaller gradients are checked to FD_TOL·FD_FLOOR.
pub const FD_FLOOR: f64 = 0.1;

#[derive(Debug, Default)]
pub struct FdStats {
    pub checked: usize,
    pub failures: Vec<String>,
    /// Entries whose perturbation crossed a ReLU kink (one-sided slopes
    /// disagree), where the function is not differentiable at this δ.
    pub kinks: usize,
    pub max_rel: f64,
}

impl FdStats {
    pub fn ok(&self) -> bool {
        self.failures.is_empty() && self.kinks * 50 <= self.checked
    }

    pub fn merge(&mut self, o: FdStats) {
        self.checked += o.checked;
        self.failures.extend(o.failures);
        self.kinks += o.kinks;
        self.max_rel = self.max_rel.max(o.max_rel);
    }
}

pub fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(FD_FLOOR)
}

/// Compare every entry of `analytic` (laid out as `model.named_params()`)
/// with a central difference of `f`.
pub fn fd_check<P: Parameterized>(model: &mut P, analytic: &[Matrix], f: impl Fn(&P) -> f64) -> FdStats {
    let mut st = FdStats::default();
    let names: Vec<String> = model.named_params().into_iter().map(|(n, _)| n).collect();
    assert_eq!(names.len(), analytic.len(), "gradient layout");
    let f0 = f(model);
    for (t, name) in names.iter().enumerate() {
        for j in 0..analytic[t].len() {
            let orig = model.named_params_mut()[t].1.data()[j];
            model.named_params_mut()[t].1.data_mut()[j] = orig + FD_DELTA;
            let up = f(model);
            model.named_params_mut()[t].1.data_mut()[j] = orig - FD_DELTA;
            let down = f(model);
            model.named_params_mut()[t].1.data_mut()[j] = orig;
            // the step actually taken in f32
            let h_up = ((orig + FD_DELTA) - orig) as f64;
            let h_down = (orig - (orig - FD_DELTA)) as f64;
            let numeric = (up - down) / (h_up + h_down);
            let a = analytic[t].data()[j] as f64;
            let r = rel_err(a, numeric);
            st.checked += 1;
            if r <= FD_TOL {
                st.max_rel = st.max_rel.max(r);
                continue;
            }
            let fwd = (up - f0) / h_up;
            let bwd = (f0 - down) / h_down;
            if rel_err(fwd, bwd) > 10.0 * FD_TOL && (rel_err(a, fwd) <= FD_TOL || rel_err(a, bwd) <= FD_TOL) {
                st.kinks += 1;
                continue;
            }
            st.max_rel = st.max_rel.max(r);
            st.failures.push(format!("{name}[{j}]: analytic {a:.6e} numeric {numeric:.6e} (rel {r:.2e})"));
        }
    }
    st
}

/// Redraw every parameter uniformly in `±scale`. Default initializations
/// keep pre-activations within a few δ of the ReLU kinks.
pub fn scramble<P: Parameterized>(model: &mut P, scale: f32, rng: &mut impl Rng) {
    for (_, m) in model.named_params_mut() {
        for v in m.data_mut() {
            *v = rng.gen_range(-scale..scale);
        }
    }
}

/// A small random impression with ids below the given vocabularies.
pub fn random_record(rng: &mut impl Rng, users: u64, items: u64, shops: u64, cats: u32, max_beh: usize) -> ImpressionRecord {
    let click = rng.gen_bool(0.4) as u8;
    let n_beh = rng.gen_range(0..=max_beh);
    ImpressionRecord {
        domain: Domain::Super,
        day: 0,
        session_id: rng.gen_range(0..3),
        user_id: rng.gen_range(0..users),
        item_id: rng.gen_range(0..items),
        shop_id: rng.gen_range(0..shops),
        category_id: rng.gen_range(0..cats),
        behavior_seq: (0..n_beh).map(|_| rng.gen_range(0..items)).collect(),
        click,
        conversion: click & rng.gen_bool(0.5) as u8,
        cart: click & rng.gen_bool(0.5) as u8,
    }
}

fn relu_all(layer: &DenseLayer) -> bool {
    layer.activation == Activation::Relu
}

/// Build the concatenation model equivalent to `model` with `plug` attached:
/// the plug's hidden layer runs beside main layer 1 (block-diagonal weights
/// on `[x ; K]`), its non-negative activations ride along through identity
/// blocks up to layer `m`, and main layer `m+1` absorbs the plug's output
/// projection as an extra weight block `W2·W_{m+1}`.
pub fn concat_model(model: &DownstreamModel, plug: &PlugInNetwork) -> MlpStack {
    let main = model.mlp().layers();
    let pl = plug.mlp().layers();
    assert_eq!(pl.len(), 2, "plug is one hidden layer plus a projection");
    let (p1, p2) = (&pl[0], &pl[1]);
    let m = plug.plug_layer();
    let kd = p1.in_dim();
    let z = p1.out_dim();
    let mut layers = Vec::new();
    for (k, layer) in main.iter().enumerate() {
        if k < m {
            assert!(relu_all(layer), "layers up to the plug point are ReLU");
            let in_extra = if k == 0 { kd } else { z };
            let (i, o) = (layer.in_dim(), layer.out_dim());
            let mut w = Matrix::zeros(i + in_extra, o + z);
            let mut b = Matrix::zeros(1, o + z);
            for r in 0..i {
                for c in 0..o {
                    w.set(r, c, layer.weight.get(r, c));
                }
            }
            for c in 0..o {
                b.set(0, c, layer.bias.get(0, c));
            }
            for r in 0..in_extra {
                for c in 0..z {
                    let v = if k == 0 { p1.weight.get(r, c) } else { (r == c) as u8 as f32 };
                    w.set(i + r, o + c, v);
                }
            }
            if k == 0 {
                for c in 0..z {
                    b.set(0, o + c, p1.bias.get(0, c));
                }
            }
            layers.push(DenseLayer {
                weight: w,
                bias: b,
                activation: Activation::Relu,
            });
        } else if k == m {
            let (i, o) = (layer.in_dim(), layer.out_dim());
            let extra = p2.weight.matmul(&layer.weight).unwrap();
            let shift = p2.bias.matmul(&layer.weight).unwrap();
            let mut w = Matrix::zeros(i + z, o);
            for r in 0..i {
                for c in 0..o {
                    w.set(r, c, layer.weight.get(r, c));
                }
            }
            for r in 0..z {
                for c in 0..o {
                    w.set(i + r, c, extra.get(r, c));
                }
            }
            let mut b = layer.bias.clone();
            b.add_assign(&shift).unwrap();
            layers.push(DenseLayer {
                weight: w,
                bias: b,
                activation: layer.activation,
            });
        } else {
            layers.push(layer.clone());
        }
    }
    MlpStack::from_layers("concat", layers).unwrap()
}

/// Logits of the concatenation model on `[x ; K]`.
pub fn concat_logits(model: &DownstreamModel, plug: &PlugInNetwork, x: &Matrix, k: &Matrix) -> Vec<f32> {
    let cat = concat_model(model, plug);
    let input = Matrix::hcat(&[x, k]).unwrap();
    cat.forward(&input).unwrap().logits().data().to_vec()
}

/// Impression-weighted mean over users with both labels of the fraction of
/// (positive, negative) pairs ranked correctly, ties counting one half.
pub fn brute_force_gauc(imps: &[(u64, f32, u8)]) -> Option<f64> {
    let mut by_user: BTreeMap<u64, Vec<(f32, u8)>> = BTreeMap::new();
    for &(u, s, l) in imps {
        by_user.entry(u).or_default().push((s, l));
    }
    let (mut num, mut den) = (0.0f64, 0usize);
    for v in by_user.values() {
        let (mut good, mut pairs) = (0.0f64, 0usize);
        for &(sp, lp) in v {
            for &(sn, ln) in v {
                if lp == 1 && ln == 0 {
                    pairs += 1;
                    good += if sp > sn {
                        1.0
                    } else if sp == sn {
                        0.5
                    } else {
                        0.0
                    };
                }
            }
        }
        if pairs > 0 {
            num += v.len() as f64 * good / pairs as f64;
            den += v.len();
        }
    }
    (den > 0).then(|| num / den as f64)
}
