use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{Archive, FieldGrads, GridKind, RadianceField};
use crate::scalar::Scalar;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamSettings {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Learning rate per optimized grid, in update order.
    pub rates: Vec<(GridKind, f64)>,
    pub step: u64,
}

/// Adam with one learning rate per grid. Grids without a rate are never touched.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam<S> {
    pub settings: AdamSettings,
    m: Vec<Vec<S>>,
    v: Vec<Vec<S>>,
}

impl<S: Scalar> Adam<S> {
    pub fn new(field: &RadianceField<S>, rates: &[(GridKind, f64)]) -> Self {
        let zeros = || rates.iter().map(|(k, _)| vec![S::zero(); field.grid(*k).params().len()]).collect();
        Adam {
            settings: AdamSettings {
                beta1: 0.9,
                beta2: 0.99,
                eps: 1e-8,
                rates: rates.to_vec(),
                step: 0,
            },
            m: zeros(),
            v: zeros(),
        }
    }

    pub fn kinds(&self) -> Vec<GridKind> {
        self.settings.rates.iter().map(|(k, _)| *k).collect()
    }

    pub fn step(&mut self, field: &mut RadianceField<S>, grads: &FieldGrads<S>) -> Result<()> {
        let st = &mut self.settings;
        st.step += 1;
        let t = st.step as i32;
        let (b1, b2) = (S::lit(st.beta1), S::lit(st.beta2));
        let c1 = S::lit(1.0 / (1.0 - st.beta1.powi(t)));
        let c2 = S::lit(1.0 / (1.0 - st.beta2.powi(t)));
        let eps = S::lit(st.eps);
        for (i, &(kind, lr)) in st.rates.iter().enumerate() {
            let Some(g) = grads.slot(kind) else {
                continue;
            };
            let params = field.grid_mut(kind).params_mut();
            if g.len() != params.len() {
                return Err(Error::invalid(format!("gradient size mismatch for the {} grid", kind.name())));
            }
            let lr = S::lit(lr);
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            for j in 0..params.len() {
                let gj = g[j];
                m[j] = b1 * m[j] + (S::one() - b1) * gj;
                v[j] = b2 * v[j] + (S::one() - b2) * gj * gj;
                params[j] -= lr * (m[j] * c1) / ((v[j] * c2).sqrt() + eps);
            }
        }
        Ok(())
    }

    pub fn write_archive(&self, archive: &mut Archive, prefix: &str) {
        for (i, (k, _)) in self.settings.rates.iter().enumerate() {
            archive.push(format!("{prefix}.{}.m", k.name()), self.m[i].iter().map(|x| x.to_f32_lossy()).collect());
            archive.push(format!("{prefix}.{}.v", k.name()), self.v[i].iter().map(|x| x.to_f32_lossy()).collect());
        }
    }

    pub fn read_archive(archive: &Archive, prefix: &str, settings: AdamSettings, field: &RadianceField<S>) -> Result<Self> {
        let mut m = Vec::new();
        let mut v = Vec::new();
        for (k, _) in &settings.rates {
            let len = field.grid(*k).params().len();
            for (dst, suffix) in [(&mut m, "m"), (&mut v, "v")] {
                let t = archive.tensor(&format!("{prefix}.{}.{suffix}", k.name()))?;
                if t.len() != len {
                    return Err(Error::format(format!("optimizer state for the {} grid has the wrong size", k.name())));
                }
                dst.push(t.iter().map(|&x| S::lit(x as f64)).collect());
            }
        }
        Ok(Adam { settings, m, v })
    }
}
