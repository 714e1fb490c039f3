use super::Mlp;
use crate::error::{Error, Result};

/// Delayed copy of a network, updated by exponential moving average.
#[derive(Debug, Clone, PartialEq)]
pub struct TargetNet {
    net: Mlp,
}

impl TargetNet {
    pub fn new(online: &Mlp) -> Self {
        Self { net: online.clone() }
    }

    pub fn net(&self) -> &Mlp {
        &self.net
    }

    pub fn net_mut(&mut self) -> &mut Mlp {
        &mut self.net
    }

    /// `target <- (1 - tau) * target + tau * online`, elementwise.
    pub fn ema_update(&mut self, online: &Mlp, tau: f64) -> Result<()> {
        if online.widths() != self.net.widths() {
            return Err(Error::Shape(format!(
                "target layout {:?} differs from online {:?}",
                self.net.widths(),
                online.widths()
            )));
        }
        for (t, &o) in self.net.params_mut().iter_mut().zip(online.params()) {
            *t = (1.0 - tau) * *t + tau * o;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Activation;

    fn scalar_net(value: f64) -> Mlp {
        let mut net = Mlp::zeros(&[1, 1], Activation::Gelu).unwrap();
        net.params_mut()[0] = value;
        net
    }

    #[test]
    fn tau_one_copies_and_tau_zero_keeps() {
        let online = scalar_net(0.7);
        let mut t = TargetNet::new(&scalar_net(-3.0));
        t.ema_update(&online, 0.0).unwrap();
        assert_eq!(t.net().params()[0], -3.0);
        t.ema_update(&online, 1.0).unwrap();
        assert_eq!(t.net().params(), online.params());
    }

    #[test]
    fn default_rate_arithmetic() {
        let mut t = TargetNet::new(&scalar_net(0.0));
        t.ema_update(&scalar_net(1.0), 0.005).unwrap();
        assert!((t.net().params()[0] - 0.005).abs() < 1e-15);
    }
}
