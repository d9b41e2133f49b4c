use rand::Rng;
use serde::{Deserialize, Serialize};

use super::spec::{ModelSpec, Variant};
use crate::array::Array;

/// Parameters of one gate's pre-activation map.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GateParams {
    /// `[P, Q, K, 2]` diffusion filter.
    pub theta: Option<Array>,
    /// `[kh, kw, P, Q]` grid filter.
    pub conv: Option<Array>,
    /// `[N·P, N·Q]` dense map (FC-GRU only).
    pub dense: Option<Array>,
    /// `[Q]`, or `[N·Q]` for the dense variant.
    pub bias: Array,
}

pub const GATE_NAMES: [&str; 3] = ["r", "u", "h"];

/// One recurrent layer: reset, update and candidate gates in that order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellParams {
    pub c_in: usize,
    pub hidden: usize,
    pub gates: [GateParams; 3],
}

impl CellParams {
    pub fn zeros(spec: &ModelSpec, c_in: usize) -> Self {
        let p = c_in + spec.hidden;
        let q = spec.hidden;
        let n = spec.regions();
        let ks = spec.kernel_size;
        let gate = || GateParams {
            theta: spec
                .variant
                .uses_graph()
                .then(|| Array::zeros(&[p, q, spec.diffusion_steps, 2])),
            conv: spec.variant.uses_conv().then(|| Array::zeros(&[ks, ks, p, q])),
            dense: (spec.variant == Variant::Fc).then(|| Array::zeros(&[n * p, n * q])),
            bias: if spec.variant == Variant::Fc {
                Array::zeros(&[n * q])
            } else {
                Array::zeros(&[q])
            },
        };
        CellParams {
            c_in,
            hidden: spec.hidden,
            gates: [gate(), gate(), gate()],
        }
    }
}

/// Every trainable array of a model, in a fixed order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub layers: Vec<CellParams>,
    /// `[T·d, 2]`, shared by all regions.
    pub head_weight: Array,
    pub head_bias: Array,
}

impl ModelParams {
    pub fn zeros(spec: &ModelSpec) -> Self {
        ModelParams {
            layers: (0..spec.layers)
                .map(|l| CellParams::zeros(spec, spec.layer_input(l)))
                .collect(),
            head_weight: Array::zeros(&[spec.history * spec.hidden, 2]),
            head_bias: Array::zeros(&[2]),
        }
    }

    /// Glorot-uniform weights, zero biases. Arrays are drawn in
    /// [`ModelParams::names`] order.
    pub fn init<R: Rng>(spec: &ModelSpec, rng: &mut R) -> Self {
        let mut params = Self::zeros(spec);
        for (name, arr) in params.names().into_iter().zip(params.arrays_mut()) {
            if name.ends_with("bias") {
                continue;
            }
            let (fan_in, fan_out) = fans(&name, &arr.shape);
            let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
            for v in arr.data.iter_mut() {
                *v = -a + 2.0 * a * rng.gen::<f64>();
            }
        }
        params
    }

    pub fn names(&self) -> Vec<String> {
        let mut names = Vec::new();
        for (l, layer) in self.layers.iter().enumerate() {
            for (g, gate) in GATE_NAMES.iter().zip(&layer.gates) {
                if gate.theta.is_some() {
                    names.push(format!("layer{l}.{g}.theta"));
                }
                if gate.conv.is_some() {
                    names.push(format!("layer{l}.{g}.conv"));
                }
                if gate.dense.is_some() {
                    names.push(format!("layer{l}.{g}.dense"));
                }
                names.push(format!("layer{l}.{g}.bias"));
            }
        }
        names.push("head.weight".into());
        names.push("head.bias".into());
        names
    }

    pub fn arrays(&self) -> Vec<&Array> {
        let mut out = Vec::new();
        for layer in &self.layers {
            for gate in &layer.gates {
                out.extend(gate.theta.iter());
                out.extend(gate.conv.iter());
                out.extend(gate.dense.iter());
                out.push(&gate.bias);
            }
        }
        out.push(&self.head_weight);
        out.push(&self.head_bias);
        out
    }

    pub fn arrays_mut(&mut self) -> Vec<&mut Array> {
        let mut out = Vec::new();
        for layer in &mut self.layers {
            for gate in &mut layer.gates {
                out.extend(gate.theta.iter_mut());
                out.extend(gate.conv.iter_mut());
                out.extend(gate.dense.iter_mut());
                out.push(&mut gate.bias);
            }
        }
        out.push(&mut self.head_weight);
        out.push(&mut self.head_bias);
        out
    }

    pub fn named(&self) -> Vec<(String, &Array)> {
        self.names().into_iter().zip(self.arrays()).collect()
    }

    pub fn count(&self) -> usize {
        self.arrays().iter().map(|a| a.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.arrays().iter().all(|a| a.is_finite())
    }

    /// `self += alpha * other` over all arrays.
    pub fn axpy(&mut self, alpha: f64, other: &ModelParams) {
        for (a, b) in self.arrays_mut().into_iter().zip(other.arrays()) {
            a.axpy(alpha, b);
        }
    }

    pub fn scale(&mut self, alpha: f64) {
        for a in self.arrays_mut() {
            a.scale(alpha);
        }
    }

    pub fn norm(&self) -> f64 {
        self.arrays().iter().map(|a| a.sum_sq()).sum::<f64>().sqrt()
    }

    /// Mutable access to one flat coordinate, by array position and offset.
    pub fn coord_mut(&mut self, array: usize, offset: usize) -> &mut f64 {
        &mut self.arrays_mut().swap_remove(array).data[offset]
    }
}

fn fans(name: &str, shape: &[usize]) -> (usize, usize) {
    match shape {
        // theta [P, Q, K, 2]: receptive field is K·2
        [p, q, k, 2] if name.ends_with("theta") => (p * k * 2, q * k * 2),
        [kh, kw, p, q] => (kh * kw * p, kh * kw * q),
        [a, b] => (*a, *b),
        [a] => (*a, *a),
        _ => (shape.iter().product(), shape.iter().product()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn names_match_arrays() {
        for variant in Variant::ALL {
            let spec = ModelSpec {
                variant,
                hidden: 4,
                layers: 2,
                ..ModelSpec::new(2, 3)
            };
            let p = ModelParams::zeros(&spec);
            let names = p.names();
            assert_eq!(names.len(), p.arrays().len());
            let unique: std::collections::BTreeSet<_> = names.iter().collect();
            assert_eq!(unique.len(), names.len());
        }
    }

    #[test]
    fn count_depends_only_on_spec() {
        let spec = ModelSpec {
            hidden: 4,
            layers: 2,
            history: 3,
            ..ModelSpec::new(3, 3)
        };
        // layer0: P=6, layer1: P=8; Q=4; K=2; 3x3 kernels
        let per_gate = |p: usize| p * 4 * 2 * 2 + 9 * p * 4 + 4;
        let expected = 3 * per_gate(6) + 3 * per_gate(8) + 12 * 2 + 2;
        assert_eq!(ModelParams::zeros(&spec).count(), expected);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(ModelParams::init(&spec, &mut rng).count(), expected);
    }

    #[test]
    fn init_is_bounded_and_seeded() {
        let spec = ModelSpec {
            hidden: 4,
            ..ModelSpec::new(2, 2)
        };
        let a = ModelParams::init(&spec, &mut ChaCha8Rng::seed_from_u64(5));
        let b = ModelParams::init(&spec, &mut ChaCha8Rng::seed_from_u64(5));
        assert_eq!(a, b);
        for (name, arr) in a.named() {
            if name.ends_with("bias") {
                assert!(arr.data.iter().all(|&v| v == 0.0));
            } else {
                let (fi, fo) = fans(&name, &arr.shape);
                let bound = (6.0 / (fi + fo) as f64).sqrt();
                assert!(arr.data.iter().all(|v| v.abs() <= bound), "{name}");
                assert!(arr.data.iter().any(|&v| v != 0.0), "{name}");
            }
        }
    }
}
