use crate::error::{Error, Result};
use crate::nn::{LayerDesc, LayerKind};

/// FLOPs of one layer: `2 · output_elements · kernel_volume · in_channels / groups`.
pub fn layer_flops(layer: &LayerDesc) -> Result<u64> {
    match &layer.kind {
        LayerKind::Conv {
            in_ch,
            kernel,
            groups,
            ..
        } => {
            let out: usize = layer.output.iter().product();
            let kvol: usize = kernel.iter().product();
            Ok(2 * out as u64 * (kvol * in_ch / groups) as u64)
        }
        LayerKind::Dynamic => Err(Error::Shape(format!(
            "layer {} has a data-dependent shape and cannot be counted statically",
            layer.name
        ))),
    }
}

/// Analytic convolution FLOPs of a layer list.
pub fn count_flops(layers: &[LayerDesc]) -> Result<u64> {
    layers.iter().map(layer_flops).sum()
}
