use rayon::prelude::*;

use super::{find_breakpoint, quantize_piecewise, EmpiricalCdf, PiecewiseParams, QuantError, Region};
use crate::bitpack::{decode_sign_magnitude, encode_sign_magnitude, BitReader, BitWriter};
use crate::importance::ImportancePartition;
use crate::store::{LayerDescriptor, ModelBundle, QuantizedLayer, QuantizedModel, TensorRecord};

/// Quantizes one layer. The breakpoint is searched once with
/// `breakpoint_bits` and shared by every channel; each channel is then coded
/// at its own width from `channel_bits`.
pub fn quantize_layer(
    layer: &LayerDescriptor,
    tensor: &TensorRecord,
    channel_bits: &[u8],
    breakpoint_bits: u32,
    grid: usize,
) -> Result<QuantizedLayer, QuantError> {
    let idx = layer.layer_index;
    if channel_bits.len() != layer.m || tensor.data.len() != layer.weight_count() {
        return Err(QuantError::PartitionMismatch(idx));
    }
    let cdf = EmpiricalCdf::from_weights(&tensor.data)?;
    let params = match find_breakpoint(&cdf, breakpoint_bits, grid) {
        Ok(bp) => PiecewiseParams::new(bp.l, bp.p)?,
        Err(QuantError::DegenerateRange) => PiecewiseParams::degenerate(),
        Err(e) => return Err(e),
    };

    let per = layer.weights_per_channel();
    let code_bits: u64 = channel_bits.iter().map(|&b| per as u64 * u64::from(b)).sum();
    let mut codes = BitWriter::with_capacity_bits(code_bits);
    let mut mask = BitWriter::with_capacity_bits(tensor.data.len() as u64);
    for (channel, &bits) in tensor.data.chunks(per).zip(channel_bits) {
        let bits = u32::from(bits);
        if bits < 2 {
            return Err(QuantError::InvalidBits(bits));
        }
        for &w in channel {
            let c = quantize_piecewise(f64::from(w), &params, bits);
            codes.push(encode_sign_magnitude(c.negative, c.magnitude, bits), bits);
            mask.push_bit(c.region == Region::Sparse);
        }
    }
    let (codes, codes_nbits) = codes.finish();
    let (mask, mask_nbits) = mask.finish();
    Ok(QuantizedLayer {
        layer: layer.clone(),
        p: params.p,
        l: params.l,
        channel_bits: channel_bits.to_vec(),
        scales_dense: channel_bits.iter().map(|&b| params.scale_dense(u32::from(b))).collect(),
        scales_sparse: channel_bits.iter().map(|&b| params.scale_sparse(u32::from(b))).collect(),
        codes,
        codes_nbits,
        mask,
        mask_nbits,
    })
}

/// Runs the full pipeline over every layer of `bundle` using the bit
/// assignment in `partition`. Layers are processed in parallel; the output
/// does not depend on scheduling.
pub fn quantize_model(
    bundle: &ModelBundle,
    partition: &ImportancePartition,
    grid: usize,
) -> Result<QuantizedModel, QuantError> {
    if partition.channel_bits.len() != bundle.layers.len() {
        return Err(QuantError::PartitionMismatch(partition.channel_bits.len()));
    }
    let breakpoint_bits = u32::from(partition.config.bits_important);
    let layers = bundle
        .layers
        .par_iter()
        .zip(&partition.channel_bits)
        .map(|(layer, bits)| {
            let tensor = bundle
                .tensor_for(layer)
                .ok_or(QuantError::PartitionMismatch(layer.layer_index))?;
            quantize_layer(layer, tensor, bits, breakpoint_bits, grid)
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(QuantizedModel {
        source_model_name: bundle.model_name.clone(),
        settings: None,
        layers,
    })
}

/// Decodes a layer back to float weights using its stored scales.
pub fn dequantize_layer(ql: &QuantizedLayer) -> Result<Vec<f32>, QuantError> {
    let idx = ql.layer.layer_index;
    let corrupt = |detail: &str| QuantError::CorruptStream {
        layer: idx,
        detail: detail.to_string(),
    };
    let per = ql.layer.weights_per_channel();
    let mut codes = BitReader::new(&ql.codes, ql.codes_nbits);
    let mut mask = BitReader::new(&ql.mask, ql.mask_nbits);
    let mut out = Vec::with_capacity(ql.weight_count());
    for (c, &bits) in ql.channel_bits.iter().enumerate() {
        let bits = u32::from(bits);
        let (s_dense, s_sparse) = (ql.scales_dense[c], ql.scales_sparse[c]);
        for _ in 0..per {
            let field = codes.read(bits).ok_or_else(|| corrupt("code stream too short"))?;
            let sparse = mask.read_bit().ok_or_else(|| corrupt("region mask too short"))?;
            let (negative, magnitude) = decode_sign_magnitude(field, bits);
            let mag = if sparse {
                ql.p + s_sparse * f64::from(magnitude)
            } else {
                s_dense * f64::from(magnitude)
            };
            out.push(if negative { -mag } else { mag } as f32);
        }
    }
    if codes.remaining() != 0 || mask.remaining() != 0 {
        return Err(corrupt("trailing bits"));
    }
    Ok(out)
}

/// Decodes every layer into a float bundle with the original names and shapes.
pub fn dequantize_model(qm: &QuantizedModel) -> Result<ModelBundle, QuantError> {
    let decoded = qm
        .layers
        .par_iter()
        .map(dequantize_layer)
        .collect::<Result<Vec<_>, _>>()?;
    let mut bundle = ModelBundle::new(qm.source_model_name.clone());
    for (ql, data) in qm.layers.iter().zip(decoded) {
        let tensor = TensorRecord::new(ql.layer.tensor_name.clone(), ql.layer.expected_shape(), data)
            .map_err(|e| QuantError::CorruptStream {
                layer: ql.layer.layer_index,
                detail: e.to_string(),
            })?;
        bundle.tensors.insert(tensor.name.clone(), tensor);
        bundle.layers.push(ql.layer.clone());
    }
    Ok(bundle)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::importance::{partition, ImportanceConfig};
    use crate::store::LayerKind;

    #[test]
    fn all_zero_model() {
        let mut b = ModelBundle::new("z");
        b.push_layer(LayerKind::Fc, 1, 4, 1, vec![0.0; 4]).unwrap();
        let part = partition(&b, &ImportanceConfig::default()).unwrap();
        let qm = quantize_model(&b, &part, 200).unwrap();
        let ql = &qm.layers[0];
        assert_eq!((ql.p, ql.l), (0.0, 0.0));
        assert!(ql.codes.iter().chain(&ql.mask).all(|&x| x == 0));
        qm.validate().unwrap();
        let d = dequantize_model(&qm).unwrap();
        assert!(d.tensors.values().next().unwrap().data.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn two_layer_bit_histogram_follows_partition() {
        let mut b = ModelBundle::new("two");
        let big: Vec<f32> = (0..40).map(|i| ((i % 7) as f32 - 3.0) * 0.5).collect();
        let small: Vec<f32> = (0..40).map(|i| ((i % 5) as f32 - 2.0) * 0.01).collect();
        b.push_layer(LayerKind::Fc, 10, 4, 1, small).unwrap();
        b.push_layer(LayerKind::Fc, 10, 4, 1, big).unwrap();
        let cfg = ImportanceConfig {
            alpha: 50.0,
            beta: 0.8,
            bits_important: 8,
            bits_other: 2,
            normalize_layer_score: false,
        };
        let part = partition(&b, &cfg).unwrap();
        assert_eq!(part.important_layers.iter().copied().collect::<Vec<_>>(), vec![1]);
        let qm = quantize_model(&b, &part, 200).unwrap();
        let count = |l: usize, bits: u8| qm.layers[l].channel_bits.iter().filter(|&&x| x == bits).count();
        assert_eq!((count(1, 8), count(1, 2)), (8, 2));
        assert_eq!((count(0, 8), count(0, 2)), (2, 8));
        assert_eq!(qm.layers[1].codes_nbits, 4 * (8 * 8 + 2 * 2));
        assert_eq!(qm.layers[1].mask_nbits, 40);
    }

    #[test]
    fn round_trip_bound_per_weight() {
        let mut b = ModelBundle::new("r");
        let data: Vec<f32> = (0..3 * 2 * 9)
            .map(|i| (((i * 37) % 101) as f32 / 50.0 - 1.0).powi(3))
            .collect();
        b.push_layer(LayerKind::Conv, 3, 2, 3, data.clone()).unwrap();
        let cfg = ImportanceConfig { alpha: 100.0, beta: 0.67, bits_important: 6, bits_other: 3, ..Default::default() };
        let part = partition(&b, &cfg).unwrap();
        let qm = quantize_model(&b, &part, 200).unwrap();
        let ql = &qm.layers[0];
        let params = PiecewiseParams::new(ql.l, ql.p).unwrap();
        let decoded = dequantize_layer(ql).unwrap();
        for (i, (&w, &d)) in data.iter().zip(&decoded).enumerate() {
            let bits = u32::from(ql.channel_bits[i / 18]);
            let region = if f64::from(w.abs()) <= ql.p { Region::Dense } else { Region::Sparse };
            let bound = params.scale(region, bits) / 2.0 + 4.0 * f64::from(f32::EPSILON) * ql.l;
            assert!(f64::from((d - w).abs()) <= bound, "weight {i}: {w} -> {d}");
        }
    }

    #[test]
    fn corrupt_stream_detected() {
        let mut b = ModelBundle::new("c");
        b.push_layer(LayerKind::Fc, 2, 2, 1, vec![0.1, -0.2, 0.3, -0.4]).unwrap();
        let part = partition(&b, &ImportanceConfig::default()).unwrap();
        let mut qm = quantize_model(&b, &part, 200).unwrap();
        qm.layers[0].codes_nbits -= 1;
        assert!(matches!(dequantize_layer(&qm.layers[0]), Err(QuantError::CorruptStream { .. })));
    }

    #[test]
    fn mismatched_partition_rejected() {
        let mut b = ModelBundle::new("m");
        b.push_layer(LayerKind::Fc, 2, 1, 1, vec![0.1, 0.2]).unwrap();
        let mut part = partition(&b, &ImportanceConfig::default()).unwrap();
        part.channel_bits[0].pop();
        assert_eq!(quantize_model(&b, &part, 200), Err(QuantError::PartitionMismatch(0)));
    }
}
