//! Regression and MLP fusion over normalized `[h_a, h_v]`.

use crate::error::{Error, Result};
use crate::nn::{LayerKind, NetworkSpec};

/// Default L2 weight for regression fusion.
pub const REGRESSION_L2: f64 = 1e-5;

/// `2C -> C` affine map followed by a sigmoid.
pub fn regression_spec(classes: usize) -> Result<NetworkSpec> {
    if classes == 0 {
        return Err(Error::InvalidSpec("class count must be at least 1".into()));
    }
    let mut net = NetworkSpec::default();
    net.push(
        "linear",
        LayerKind::Dense {
            in_features: 2 * classes,
            out_features: classes,
        },
    )
    .push("sigmoid", LayerKind::Sigmoid);
    Ok(net)
}

/// `2C -> hidden` with batch norm, ReLU and dropout, then `hidden -> C` and a
/// sigmoid.
pub fn mlp_spec(classes: usize, hidden: usize, dropout: f64) -> Result<NetworkSpec> {
    if classes == 0 || hidden == 0 {
        return Err(Error::InvalidSpec(
            "class count and hidden width must be at least 1".into(),
        ));
    }
    let mut net = NetworkSpec::default();
    net.push(
        "fc1",
        LayerKind::Dense {
            in_features: 2 * classes,
            out_features: hidden,
        },
    )
    .push("bn1", LayerKind::BatchNorm { features: hidden })
    .push("relu1", LayerKind::Relu)
    .push("drop1", LayerKind::Dropout { rate: dropout })
    .push(
        "out",
        LayerKind::Dense {
            in_features: hidden,
            out_features: classes,
        },
    )
    .push("sigmoid", LayerKind::Sigmoid);
    net.validate()?;
    Ok(net)
}
