use crate::error::{Error, Result};
use crate::rng::{self, DetRng};
use crate::tensor::{
    affine, affine_grad, batchnorm, batchnorm_grad, conv2d, conv2d_grad, BatchNormCache, BnMode,
    BnParams, BnStats, Element, Tensor,
};

/// A bias-free convolution followed by its batch-norm layer.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvBn<T> {
    pub id: String,
    /// `[Cout, Cin, K, K]`
    pub weight: Tensor<T>,
    pub stride: usize,
    pub pad: usize,
    pub gamma: Tensor<T>,
    pub beta: Tensor<T>,
    pub stats: BnStats<T>,
    pub prunable: bool,
}

#[derive(Debug, Clone)]
pub(crate) struct ConvBnCache<T> {
    pub(crate) input: Tensor<T>,
    bn: BatchNormCache<T>,
}

pub(crate) struct ConvBnGrads<T> {
    pub d_input: Tensor<T>,
    pub d_weight: Tensor<T>,
    pub d_gamma: Tensor<T>,
    pub d_beta: Tensor<T>,
}

impl<T: Element> ConvBn<T> {
    /// Kaiming (fan-out) normal weights, γ = 1, β = 0.
    pub fn init(
        rng: &mut DetRng,
        id: impl Into<String>,
        cin: usize,
        cout: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
        prunable: bool,
    ) -> Self {
        let std = (2.0 / (cout * kernel * kernel) as f64).sqrt();
        Self {
            id: id.into(),
            weight: rng::normal_tensor(rng, &[cout, cin, kernel, kernel], std),
            stride,
            pad,
            gamma: Tensor::ones(&[cout]),
            beta: Tensor::zeros(&[cout]),
            stats: BnStats::new(cout),
            prunable,
        }
    }

    pub fn out_channels(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn in_channels(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn kernel(&self) -> usize {
        self.weight.shape()[2]
    }

    pub(crate) fn forward(
        &mut self,
        x: &Tensor<T>,
        mode: BnMode,
        bn: BnParams,
    ) -> Result<(Tensor<T>, ConvBnCache<T>)> {
        let z = conv2d(x, &self.weight, self.stride, self.pad).map_err(|e| e.in_layer(&self.id))?;
        let (y, cache) = batchnorm(&z, &self.gamma, &self.beta, &mut self.stats, bn, mode)
            .map_err(|e| e.in_layer(&self.id))?;
        Ok((
            y,
            ConvBnCache {
                input: x.clone(),
                bn: cache,
            },
        ))
    }

    /// Eval-mode forward without side effects.
    pub(crate) fn infer(&self, x: &Tensor<T>, bn: BnParams) -> Result<Tensor<T>> {
        let z = conv2d(x, &self.weight, self.stride, self.pad).map_err(|e| e.in_layer(&self.id))?;
        let mut stats = self.stats.clone();
        let (y, _) = batchnorm(&z, &self.gamma, &self.beta, &mut stats, bn, BnMode::Eval)
            .map_err(|e| e.in_layer(&self.id))?;
        Ok(y)
    }

    pub(crate) fn backward(&self, cache: &ConvBnCache<T>, dy: &Tensor<T>) -> Result<ConvBnGrads<T>> {
        let (dz, d_gamma, d_beta) =
            batchnorm_grad(dy, &self.gamma, &cache.bn).map_err(|e| e.in_layer(&self.id))?;
        let (d_input, d_weight) = conv2d_grad(&cache.input, &self.weight, &dz, self.stride, self.pad)
            .map_err(|e| e.in_layer(&self.id))?;
        Ok(ConvBnGrads {
            d_input,
            d_weight,
            d_gamma,
            d_beta,
        })
    }

    /// Sets filters `indices` and their BN γ/β to exactly zero.
    pub fn zeroize(&mut self, indices: &[usize]) -> Result<()> {
        let cout = self.out_channels();
        if let Some(&bad) = indices.iter().find(|&&i| i >= cout) {
            return Err(Error::Index(format!(
                "filter {bad} out of range for `{}` with {cout} filters",
                self.id
            )));
        }
        for &j in indices {
            self.weight.slice0_mut(j).fill(T::zero());
            self.gamma.data_mut()[j] = T::zero();
            self.beta.data_mut()[j] = T::zero();
        }
        Ok(())
    }

    /// Keeps only output filters `keep` (with their BN channels).
    pub(crate) fn retain_outputs(&mut self, keep: &[usize]) -> Result<()> {
        self.weight = self.weight.select0(keep)?;
        self.gamma = self.gamma.select0(keep)?;
        self.beta = self.beta.select0(keep)?;
        self.stats.running_mean = self.stats.running_mean.select0(keep)?;
        self.stats.running_var = self.stats.running_var.select0(keep)?;
        Ok(())
    }

    /// Keeps only input channels `keep`.
    pub(crate) fn retain_inputs(&mut self, keep: &[usize]) -> Result<()> {
        self.weight = self.weight.select1(keep)?;
        Ok(())
    }

    pub(crate) fn visit<'a>(&'a self, f: &mut dyn FnMut(String, bool, &'a Tensor<T>)) {
        f(format!("{}.weight", self.id), true, &self.weight);
        f(format!("{}.bn.gamma", self.id), true, &self.gamma);
        f(format!("{}.bn.beta", self.id), true, &self.beta);
        f(format!("{}.bn.running_mean", self.id), false, &self.stats.running_mean);
        f(format!("{}.bn.running_var", self.id), false, &self.stats.running_var);
    }

    pub(crate) fn visit_mut(&mut self, f: &mut dyn FnMut(String, bool, &mut Tensor<T>)) {
        f(format!("{}.weight", self.id), true, &mut self.weight);
        f(format!("{}.bn.gamma", self.id), true, &mut self.gamma);
        f(format!("{}.bn.beta", self.id), true, &mut self.beta);
        f(format!("{}.bn.running_mean", self.id), false, &mut self.stats.running_mean);
        f(format!("{}.bn.running_var", self.id), false, &mut self.stats.running_var);
    }

    pub(crate) fn emit_grads(&self, g: ConvBnGrads<T>, out: &mut super::Gradients<T>) {
        out.insert(format!("{}.weight", self.id), g.d_weight);
        out.insert(format!("{}.bn.gamma", self.id), g.d_gamma);
        out.insert(format!("{}.bn.beta", self.id), g.d_beta);
    }
}

/// Fully connected classifier head.
#[derive(Debug, Clone, PartialEq)]
pub struct Affine<T> {
    pub id: String,
    /// `[Dout, Din]`
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
}

impl<T: Element> Affine<T> {
    /// Uniform(±1/√Din) weights, zero bias.
    pub fn init(rng: &mut DetRng, id: impl Into<String>, din: usize, dout: usize) -> Self {
        let bound = 1.0 / (din as f64).sqrt();
        Self {
            id: id.into(),
            weight: rng::uniform_tensor(rng, &[dout, din], -bound, bound),
            bias: Tensor::zeros(&[dout]),
        }
    }

    pub fn in_features(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn out_features(&self) -> usize {
        self.weight.shape()[0]
    }

    pub(crate) fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        affine(x, &self.weight, &self.bias).map_err(|e| e.in_layer(&self.id))
    }

    pub(crate) fn backward(
        &self,
        x: &Tensor<T>,
        dy: &Tensor<T>,
        out: &mut super::Gradients<T>,
    ) -> Result<Tensor<T>> {
        let (dx, dw, db) = affine_grad(x, &self.weight, dy).map_err(|e| e.in_layer(&self.id))?;
        out.insert(format!("{}.weight", self.id), dw);
        out.insert(format!("{}.bias", self.id), db);
        Ok(dx)
    }

    pub(crate) fn retain_inputs(&mut self, keep: &[usize]) -> Result<()> {
        self.weight = self.weight.select1(keep)?;
        Ok(())
    }

    pub(crate) fn visit<'a>(&'a self, f: &mut dyn FnMut(String, bool, &'a Tensor<T>)) {
        f(format!("{}.weight", self.id), true, &self.weight);
        f(format!("{}.bias", self.id), true, &self.bias);
    }

    pub(crate) fn visit_mut(&mut self, f: &mut dyn FnMut(String, bool, &mut Tensor<T>)) {
        f(format!("{}.weight", self.id), true, &mut self.weight);
        f(format!("{}.bias", self.id), true, &mut self.bias);
    }
}
