//! Adam with bias correction. The generator and the critic each own an
//! independent instance.

use serde::{Deserialize, Serialize};

use crate::archive::Archive;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 2e-5,
            beta1: 0.5,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Adam {
    pub config: AdamConfig,
    t: u64,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
}

impl Adam {
    pub fn new(config: AdamConfig, params: &[Tensor]) -> Self {
        let zeros = || params.iter().map(|p| Tensor::zeros(p.shape())).collect::<Vec<_>>();
        Adam {
            config,
            t: 0,
            m: zeros(),
            v: zeros(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    /// Applies one update. Entries whose gradient is `None` are left
    /// untouched, moments included.
    pub fn step(&mut self, params: &mut [Tensor], grads: &[Option<Tensor>]) {
        assert_eq!(params.len(), self.m.len(), "parameter count changed");
        assert_eq!(params.len(), grads.len(), "one gradient slot per parameter");
        self.t += 1;
        let AdamConfig { lr, beta1, beta2, eps } = self.config;
        let c1 = 1.0 - beta1.powi(self.t as i32);
        let c2 = 1.0 - beta2.powi(self.t as i32);
        for (i, (p, grad)) in params.iter_mut().zip(grads).enumerate() {
            let Some(grad) = grad else { continue };
            assert_eq!(p.shape(), grad.shape(), "gradient shape for parameter {i}");
            let m = self.m[i].data_mut();
            let v = self.v[i].data_mut();
            for (((w, &gr), mi), vi) in p.data_mut().iter_mut().zip(grad.data()).zip(m).zip(v) {
                *mi = beta1 * *mi + (1.0 - beta1) * gr;
                *vi = beta2 * *vi + (1.0 - beta2) * gr * gr;
                let mh = *mi / c1;
                let vh = *vi / c2;
                *w -= lr * mh / (vh.sqrt() + eps);
            }
        }
    }

    /// Writes moments under `{prefix}.m.{i}` / `{prefix}.v.{i}` and the step
    /// count into metadata.
    pub fn export(&self, prefix: &str, archive: &mut Archive) {
        archive
            .metadata
            .insert(format!("{prefix}.t"), self.t.to_string());
        for (i, (m, v)) in self.m.iter().zip(&self.v).enumerate() {
            archive.push(format!("{prefix}.m.{i}"), m.clone());
            archive.push(format!("{prefix}.v.{i}"), v.clone());
        }
    }

    pub fn import(config: AdamConfig, prefix: &str, archive: &Archive, params: &[Tensor]) -> Result<Self, String> {
        let t = archive
            .metadata
            .get(&format!("{prefix}.t"))
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| format!("missing {prefix}.t"))?;
        let mut m = Vec::with_capacity(params.len());
        let mut v = Vec::with_capacity(params.len());
        for (i, p) in params.iter().enumerate() {
            for (dst, kind) in [(&mut m, "m"), (&mut v, "v")] {
                let name = format!("{prefix}.{kind}.{i}");
                let t = archive.get(&name).ok_or_else(|| format!("missing {name}"))?;
                if t.shape() != p.shape() {
                    return Err(format!("{name}: shape {:?}, expected {:?}", t.shape(), p.shape()));
                }
                dst.push(t.clone());
            }
        }
        Ok(Adam { config, t, m, v })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_by_lr_times_sign() {
        let mut p = vec![Tensor::new(vec![3], vec![1.0, 1.0, 1.0])];
        let mut opt = Adam::new(AdamConfig { lr: 0.1, ..Default::default() }, &p);
        opt.step(&mut p, &[Some(Tensor::new(vec![3], vec![2.0, -0.5, 0.0]))]);
        let d = p[0].data();
        assert!((d[0] - 0.9).abs() < 1e-6);
        assert!((d[1] - 1.1).abs() < 1e-6);
        assert_eq!(d[2], 1.0);
    }

    #[test]
    fn none_gradient_is_skipped() {
        let mut p = vec![Tensor::ones(&[2]), Tensor::ones(&[2])];
        let mut opt = Adam::new(AdamConfig::default(), &p);
        opt.step(&mut p, &[None, Some(Tensor::ones(&[2]))]);
        assert_eq!(p[0], Tensor::ones(&[2]));
        assert_ne!(p[1], Tensor::ones(&[2]));
    }

    #[test]
    fn minimizes_a_quadratic() {
        let mut p = vec![Tensor::new(vec![1], vec![5.0])];
        let mut opt = Adam::new(AdamConfig { lr: 0.05, beta1: 0.9, ..Default::default() }, &p);
        for _ in 0..2000 {
            let g = p[0].map(|x| 2.0 * (x - 1.5));
            opt.step(&mut p, &[Some(g)]);
        }
        assert!((p[0].item() - 1.5).abs() < 1e-2);
    }

    #[test]
    fn export_import_round_trip() {
        let mut p = vec![Tensor::ones(&[2, 2])];
        let mut opt = Adam::new(AdamConfig::default(), &p);
        opt.step(&mut p, &[Some(Tensor::full(&[2, 2], 0.3))]);
        let mut a = Archive::new();
        opt.export("g", &mut a);
        let back = Adam::import(AdamConfig::default(), "g", &a, &p).unwrap();
        assert_eq!(back, opt);
        assert!(Adam::import(AdamConfig::default(), "d", &a, &p).is_err());
    }
}
