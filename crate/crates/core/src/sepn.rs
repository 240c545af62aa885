//! Complex-valued mini-UNets attached residually to physical layers.
//!
//! Wiring: three encoder convolutions (stride 1, 2, 2), a stride-1 bottleneck, two
//! stride-2 transposed convolutions with additive skips, and a final stride-1 projection
//! to one channel. CReLU follows every layer but the last. Weights are stored as separate
//! real and imaginary parameter planes; there are no biases.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::cgraph::{ConvGeom, NodeId, ParamId, ParamStore, Tape};
use crate::error::{Error, Result};

/// Channel widths, kernel extent and the spatial extent the network operates on.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SepnConfig {
    pub f1: usize,
    pub f2: usize,
    pub f3: usize,
    pub k: usize,
}

impl SepnConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("f1", self.f1), ("f2", self.f2), ("f3", self.f3), ("k", self.k)] {
            if v == 0 {
                return Err(Error::config(format!("sepn.{name}"), "must be at least 1"));
            }
        }
        if self.k % 2 == 0 {
            return Err(Error::config("sepn.k", "kernel extent must be odd for same padding"));
        }
        Ok(())
    }
}

/// Closed-form learnable-parameter count `k²(4F1+2F1²+4F1F2+2F2²+2F2F3+2F3²)`.
pub fn paper_param_count(f1: usize, f2: usize, f3: usize, k: usize) -> usize {
    k * k * (4 * f1 + 2 * f1 * f1 + 4 * f1 * f2 + 2 * f2 * f2 + 2 * f2 * f3 + 2 * f3 * f3)
}

/// Real scalar count of the implemented wiring, `k²(4F1+4F1F2+4F2F3+2F3²)`.
pub fn wiring_param_count(f1: usize, f2: usize, f3: usize, k: usize) -> usize {
    k * k * (4 * f1 + 4 * f1 * f2 + 4 * f2 * f3 + 2 * f3 * f3)
}

#[derive(Clone, Copy, Debug)]
enum Kind {
    Conv,
    ConvT,
}

#[derive(Clone, Debug)]
struct Layer {
    kind: Kind,
    re: ParamId,
    im: ParamId,
    geom: ConvGeom,
}

/// One residual error-prediction network over an `h×w` complex map.
#[derive(Clone, Debug)]
pub struct Sepn {
    config: SepnConfig,
    h: usize,
    w: usize,
    layers: Vec<Layer>,
}

impl Sepn {
    /// Registers the weights in `store`. `std = 0` gives the exact zero function.
    ///
    /// Maps with a single row (mesh outputs) downsample along the width only.
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, name: &str, config: SepnConfig, h: usize, w: usize, std: f64, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let (sh, sw) = if h == 1 { (1, 2) } else { (2, 2) };
        if h % (sh * sh) != 0 || w % (sw * sw) != 0 {
            return Err(Error::config("sepn", format!("map extent {h}x{w} is not divisible by the two stride-2 stages")));
        }
        let normal = Normal::new(0.0, std).map_err(|e| Error::config("sepn.init_std", e.to_string()))?;
        let SepnConfig { f1, f2, f3, k } = config;
        let spec: [(Kind, usize, usize, (usize, usize)); 7] = [
            (Kind::Conv, f1, 1, (1, 1)),
            (Kind::Conv, f2, f1, (sh, sw)),
            (Kind::Conv, f3, f2, (sh, sw)),
            (Kind::Conv, f3, f3, (1, 1)),
            (Kind::ConvT, f3, f2, (sh, sw)),
            (Kind::ConvT, f2, f1, (sh, sw)),
            (Kind::Conv, 1, f1, (1, 1)),
        ];
        let mut layers = Vec::with_capacity(spec.len());
        for (i, (kind, a, b, stride)) in spec.into_iter().enumerate() {
            let shape = [a, b, k, k];
            let n = a * b * k * k;
            let mut draw = || -> Vec<f64> { (0..n).map(|_| normal.sample(rng)).collect() };
            let re = store.add(format!("{name}.l{i}.re"), &shape, draw())?;
            let im = store.add(format!("{name}.l{i}.im"), &shape, draw())?;
            layers.push(Layer {
                kind,
                re,
                im,
                geom: ConvGeom::same(k, stride),
            });
        }
        Ok(Self { config, h, w, layers })
    }

    pub fn config(&self) -> SepnConfig {
        self.config
    }

    pub fn extent(&self) -> (usize, usize) {
        (self.h, self.w)
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        self.layers.iter().flat_map(|l| [l.re, l.im]).collect()
    }

    /// Number of real scalars actually allocated for this network.
    pub fn implemented_param_count(&self, store: &ParamStore) -> usize {
        store.count(&self.param_ids())
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: NodeId) -> Result<NodeId> {
        self.run(tape, store, x, true)
    }

    /// The same network with every CReLU replaced by the identity (complex-linear map).
    pub fn forward_linear(&self, tape: &mut Tape, store: &ParamStore, x: NodeId) -> Result<NodeId> {
        self.run(tape, store, x, false)
    }

    fn run(&self, tape: &mut Tape, store: &ParamStore, x: NodeId, act: bool) -> Result<NodeId> {
        if tape.shape(x) != [self.h, self.w] {
            return Err(Error::shape("sepn_forward", tape.shape(x), &[self.h, self.w]));
        }
        let x = tape.reshape(x, &[1, self.h, self.w])?;
        let apply = |tape: &mut Tape, i: usize, input: NodeId, relu: bool| -> Result<NodeId> {
            let l = &self.layers[i];
            let re = tape.param(store, l.re);
            let im = tape.param(store, l.im);
            let w = tape.complex(re, im)?;
            let y = match l.kind {
                Kind::Conv => tape.conv2d(input, w, l.geom)?,
                Kind::ConvT => tape.conv_transpose2d(input, w, l.geom)?,
            };
            Ok(if relu && act { tape.crelu(y) } else { y })
        };
        let e1 = apply(tape, 0, x, true)?;
        let e2 = apply(tape, 1, e1, true)?;
        let e3 = apply(tape, 2, e2, true)?;
        let b = apply(tape, 3, e3, true)?;
        let u2 = apply(tape, 4, b, true)?;
        let d2 = tape.add(u2, e2)?;
        let u1 = apply(tape, 5, d2, true)?;
        let d1 = tape.add(u1, e1)?;
        let out = apply(tape, 6, d1, false)?;
        tape.reshape(out, &[self.h, self.w])
    }
}

/// All networks of a model, partitioned into groups (one group per measurable state).
#[derive(Clone, Debug, Default)]
pub struct SepnSet {
    nets: Vec<Sepn>,
    groups: Vec<Vec<usize>>,
}

impl SepnSet {
    pub fn new(nets: Vec<Sepn>, groups: Vec<Vec<usize>>) -> Result<Self> {
        let mut seen = vec![false; nets.len()];
        for &i in groups.iter().flatten() {
            if i >= nets.len() || seen[i] {
                return Err(Error::Topology(format!("network {i} is missing or assigned to two groups")));
            }
            seen[i] = true;
        }
        Ok(Self { nets, groups })
    }

    pub fn nets(&self) -> &[Sepn] {
        &self.nets
    }

    pub fn get(&self, i: usize) -> &Sepn {
        &self.nets[i]
    }

    pub fn num_groups(&self) -> usize {
        self.groups.len()
    }

    /// Indices of the networks in group `g`.
    pub fn group(&self, g: usize) -> &[usize] {
        &self.groups[g]
    }

    /// Parameters of every network in group `g`.
    pub fn group_params(&self, g: usize) -> Vec<ParamId> {
        self.groups[g].iter().flat_map(|&i| self.nets[i].param_ids()).collect()
    }

    pub fn all_params(&self) -> Vec<ParamId> {
        self.nets.iter().flat_map(Sepn::param_ids).collect()
    }
}

/// Residual attachment `N(x) + x`; with `detach` the correction keeps its value but passes no gradient.
pub fn residual(sepn: Option<&Sepn>, tape: &mut Tape, store: &ParamStore, x: NodeId, detach: bool) -> Result<NodeId> {
    match sepn {
        None => Ok(x),
        Some(net) => {
            let mut n = net.forward(tape, store, x)?;
            if detach {
                n = tape.detach(n);
            }
            tape.add(n, x)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cgraph::{CTensor, C64};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn closed_form_counts() {
        assert_eq!(paper_param_count(4, 8, 16, 5), 26_800);
        assert_eq!(paper_param_count(4, 6, 8, 3), 3_960);
        assert_eq!(paper_param_count(4, 8, 16, 3), 9_648);
        assert_eq!(wiring_param_count(4, 8, 16, 5), 29_200);
    }

    #[test]
    fn allocated_count_matches_wiring_formula() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let cfg = SepnConfig { f1: 4, f2: 8, f3: 16, k: 5 };
        let s = Sepn::new(&mut store, "s", cfg, 8, 8, 0.02, &mut rng).unwrap();
        assert_eq!(s.implemented_param_count(&store), wiring_param_count(4, 8, 16, 5));
    }

    #[test]
    fn rejects_bad_extent_and_even_kernel() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let cfg = SepnConfig { f1: 2, f2: 2, f3: 2, k: 3 };
        assert!(Sepn::new(&mut store, "s", cfg, 6, 6, 0.02, &mut rng).is_err());
        let even = SepnConfig { k: 4, ..cfg };
        assert!(Sepn::new(&mut store, "s", even, 8, 8, 0.02, &mut rng).is_err());
    }

    #[test]
    fn single_row_maps_keep_extent() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let cfg = SepnConfig { f1: 4, f2: 6, f3: 8, k: 3 };
        let s = Sepn::new(&mut store, "s", cfg, 1, 16, 0.1, &mut rng).unwrap();
        let mut t = Tape::new();
        let x = t.constant(CTensor::new(vec![1, 16], (0..16).map(|i| C64::new(i as f64, 1.0)).collect()).unwrap());
        let y = s.forward(&mut t, &store, x).unwrap();
        assert_eq!(t.shape(y), &[1, 16]);
    }
}
