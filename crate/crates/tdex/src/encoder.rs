//! Tactile encoder variants behind one interface: the spatial 16x16 image
//! CNN, the 45-channel stacked CNN, and a per-pad shared CNN whose outputs
//! are concatenated.

use crate::data::{upscale, TactileImage, IMAGE_SIZE, NUM_AXES, NUM_PADS, PAD_COLS, PAD_ROWS};
use crate::error::{Result, TdexError};
use crate::nn::{backward, forward, Gradients, LayerSpec, NetSpec, ParamStore, Tape, Tensor};
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum EncoderInput {
    /// The 3 x size x size spatial image (size 16 unless upscaled).
    Image { size: usize },
    /// One 45-channel 4x4 tensor: 15 pads x 3 axes stacked channel-wise.
    Stacked,
    /// Fifteen 3x4x4 pad tensors through one shared net, outputs concatenated.
    PerPad,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TactileEncoder {
    pub input: EncoderInput,
    pub net: NetSpec,
}

fn conv(in_ch: usize, out_ch: usize, stride: usize) -> LayerSpec {
    LayerSpec::Conv2d {
        in_ch,
        out_ch,
        kernel: 3,
        stride,
        padding: 1,
    }
}

impl TactileEncoder {
    /// Default spatial encoder: three stride-2 convs then global average
    /// pooling, 64-dimensional output. `upscale_to` >= 16 selects the input
    /// resolution (16 = native).
    pub fn tdex3(upscale_to: usize) -> Result<Self> {
        if upscale_to < IMAGE_SIZE {
            return Err(TdexError::InvalidArg(format!(
                "encoder input size must be >= {IMAGE_SIZE}"
            )));
        }
        let net = NetSpec::new(
            vec![NUM_AXES, upscale_to, upscale_to],
            vec![
                conv(3, 16, 2),
                LayerSpec::Relu,
                conv(16, 32, 2),
                LayerSpec::Relu,
                conv(32, 64, 2),
                LayerSpec::Relu,
                LayerSpec::GlobalAvgPool,
            ],
        )?;
        Ok(TactileEncoder {
            input: EncoderInput::Image { size: upscale_to },
            net,
        })
    }

    /// Stacked variant: one 45-channel 4x4 image, stride-1 convs.
    pub fn stacked() -> Result<Self> {
        let net = NetSpec::new(
            vec![NUM_PADS * NUM_AXES, PAD_ROWS, PAD_COLS],
            vec![
                conv(45, 16, 1),
                LayerSpec::Relu,
                conv(16, 32, 1),
                LayerSpec::Relu,
                conv(32, 64, 1),
                LayerSpec::Relu,
                LayerSpec::GlobalAvgPool,
            ],
        )?;
        Ok(TactileEncoder {
            input: EncoderInput::Stacked,
            net,
        })
    }

    /// Shared per-pad variant: a small net applied to each 3x4x4 pad, 16 dims
    /// per pad, concatenated into 240.
    pub fn shared_per_pad() -> Result<Self> {
        let net = NetSpec::new(
            vec![NUM_AXES, PAD_ROWS, PAD_COLS],
            vec![
                conv(3, 16, 1),
                LayerSpec::Relu,
                conv(16, 16, 1),
                LayerSpec::Relu,
                LayerSpec::GlobalAvgPool,
            ],
        )?;
        Ok(TactileEncoder {
            input: EncoderInput::PerPad,
            net,
        })
    }

    pub fn from_arch_tag(tag: &str, upscale_to: usize) -> Result<Self> {
        match tag {
            "tdex3" => Self::tdex3(upscale_to),
            "stacked" => Self::stacked(),
            "shared" => Self::shared_per_pad(),
            other => Err(TdexError::InvalidArg(format!(
                "unknown arch `{other}` (expected tdex3|stacked|shared)"
            ))),
        }
    }

    pub fn arch_tag(&self) -> &'static str {
        match self.input {
            EncoderInput::Image { .. } => "tdex3",
            EncoderInput::Stacked => "stacked",
            EncoderInput::PerPad => "shared",
        }
    }

    /// Feature dimension produced by [`TactileEncoder::forward_batch`].
    pub fn out_dim(&self) -> Result<usize> {
        let d = self.net.output_dim()?;
        Ok(match self.input {
            EncoderInput::PerPad => NUM_PADS * d,
            _ => d,
        })
    }

    /// Per-sample input values in the layout the net expects.
    fn sample_values(&self, image: &TactileImage) -> Result<Vec<f64>> {
        match self.input {
            EncoderInput::Image { size } => {
                if size == IMAGE_SIZE {
                    Ok(image.pixels().to_vec())
                } else {
                    Ok(upscale(image, size)?.pixels().to_vec())
                }
            }
            // [pad, axis, row, col] flat; for Stacked this is the 45x4x4
            // channel stack, for PerPad the same bytes read as 15 x [3,4,4].
            EncoderInput::Stacked | EncoderInput::PerPad => {
                let frame = image.to_frame();
                let mut values = vec![0.0; NUM_PADS * NUM_AXES * PAD_ROWS * PAD_COLS];
                for pad in 0..NUM_PADS {
                    for axis in 0..NUM_AXES {
                        for row in 0..PAD_ROWS {
                            for col in 0..PAD_COLS {
                                values[((pad * NUM_AXES + axis) * PAD_ROWS + row) * PAD_COLS
                                    + col] = frame.get(pad, row, col, axis);
                            }
                        }
                    }
                }
                Ok(values)
            }
        }
    }

    /// Stacks images into one batch tensor shaped for this encoder.
    pub fn batch_tensor(&self, images: &[&TactileImage]) -> Result<Tensor> {
        if images.is_empty() {
            return Err(TdexError::EmptyDataset);
        }
        let mut data = Vec::new();
        for image in images {
            data.extend(self.sample_values(image)?);
        }
        let mut shape = vec![images.len()];
        match self.input {
            EncoderInput::Image { size } => shape.extend([NUM_AXES, size, size]),
            EncoderInput::Stacked => shape.extend([NUM_PADS * NUM_AXES, PAD_ROWS, PAD_COLS]),
            EncoderInput::PerPad => shape.extend([NUM_PADS, NUM_AXES, PAD_ROWS, PAD_COLS]),
        }
        Tensor::new(shape, data)
    }

    /// Runs a batch, returning [N, out_dim] features and the tape.
    pub fn forward_batch(
        &self,
        store: &ParamStore,
        prefix: &str,
        batch: &Tensor,
    ) -> Result<(Tensor, Tape)> {
        match self.input {
            EncoderInput::PerPad => {
                let n = batch.shape()[0];
                let flat = batch.clone().reshaped(vec![
                    n * NUM_PADS,
                    NUM_AXES,
                    PAD_ROWS,
                    PAD_COLS,
                ])?;
                let (out, tape) = forward(&self.net, store, prefix, &flat)?;
                let d = out.shape()[1];
                Ok((out.reshaped(vec![n, NUM_PADS * d])?, tape))
            }
            _ => forward(&self.net, store, prefix, batch),
        }
    }

    /// Backward through the batch; `grad` is [N, out_dim].
    pub fn backward_batch(
        &self,
        store: &ParamStore,
        tape: &Tape,
        grad: &Tensor,
    ) -> Result<(Gradients, Tensor)> {
        match self.input {
            EncoderInput::PerPad => {
                let n = grad.shape()[0];
                let d = grad.shape()[1] / NUM_PADS;
                let flat = grad.clone().reshaped(vec![n * NUM_PADS, d])?;
                let (grads, gx) = backward(&self.net, store, tape, &flat)?;
                let gx = gx.reshaped(vec![n, NUM_PADS, NUM_AXES, PAD_ROWS, PAD_COLS])?;
                Ok((grads, gx))
            }
            _ => backward(&self.net, store, tape, grad),
        }
    }

    /// Convenience: features for a single image with batch dim stripped.
    pub fn encode_one(
        &self,
        store: &ParamStore,
        prefix: &str,
        image: &TactileImage,
    ) -> Result<Vec<f64>> {
        let batch = self.batch_tensor(&[image])?;
        let (out, _) = self.forward_batch(store, prefix, &batch)?;
        Ok(out.data().to_vec())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{layout_image, TactileFrame, FRAME_LEN};
    use rand::prelude::*;
    use rand_chacha::ChaCha12Rng;

    fn random_image(seed: u64) -> TactileImage {
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        let frame = TactileFrame::from_values(
            (0..FRAME_LEN).map(|_| rng.gen_range(0.0..1.0)).collect(),
        )
        .unwrap();
        layout_image(&frame, 0.0)
    }

    #[test]
    fn output_dims_match_contract() {
        assert_eq!(TactileEncoder::tdex3(16).unwrap().out_dim().unwrap(), 64);
        assert_eq!(TactileEncoder::stacked().unwrap().out_dim().unwrap(), 64);
        assert_eq!(
            TactileEncoder::shared_per_pad().unwrap().out_dim().unwrap(),
            240
        );
    }

    #[test]
    fn forward_shapes_for_all_variants() {
        let images = [random_image(0), random_image(1)];
        let refs: Vec<&TactileImage> = images.iter().collect();
        for enc in [
            TactileEncoder::tdex3(16).unwrap(),
            TactileEncoder::tdex3(32).unwrap(),
            TactileEncoder::stacked().unwrap(),
            TactileEncoder::shared_per_pad().unwrap(),
        ] {
            let mut store = ParamStore::new();
            let mut rng = ChaCha12Rng::seed_from_u64(7);
            enc.net.init_params(&mut store, "e.", &mut rng);
            let batch = enc.batch_tensor(&refs).unwrap();
            let (out, _) = enc.forward_batch(&store, "e.", &batch).unwrap();
            assert_eq!(out.shape(), &[2, enc.out_dim().unwrap()]);
        }
    }

    #[test]
    fn per_pad_encoder_is_shared() {
        // moving a pattern from one pad to another permutes the 16-wide
        // blocks of the output without changing their values
        let enc = TactileEncoder::shared_per_pad().unwrap();
        let mut store = ParamStore::new();
        let mut rng = ChaCha12Rng::seed_from_u64(3);
        enc.net.init_params(&mut store, "e.", &mut rng);

        let mut frame_a = TactileFrame::zeros();
        let mut frame_b = TactileFrame::zeros();
        for r in 0..PAD_ROWS {
            for c in 0..PAD_COLS {
                frame_a.set(2, r, c, 1, (r + c) as f64 * 0.1);
                frame_b.set(9, r, c, 1, (r + c) as f64 * 0.1);
            }
        }
        let fa = enc
            .encode_one(&store, "e.", &layout_image(&frame_a, 0.0))
            .unwrap();
        let fb = enc
            .encode_one(&store, "e.", &layout_image(&frame_b, 0.0))
            .unwrap();
        assert_eq!(&fa[2 * 16..3 * 16], &fb[9 * 16..10 * 16]);
    }
}
