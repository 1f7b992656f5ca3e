//! Two-stage trainer. Stage 1 fits DDON to the degradation objective; stage 2
//! freezes DDON and fits ILGFN plus the reconstruction head to the fusion
//! objective.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::ProjectConfig;
use crate::ddon::{concat_batch, DdonInputs};
use crate::error::{ensure, Error, Result};
use crate::losses::{loss_do, loss_fu, DoValues, FuValues, PerceptualExtractor};
use crate::model::{plane_tensor, FusionModel};
use crate::params::{Group, Session};
use crate::tensor::Tensor;
use crate::training::checkpoint::Checkpoint;
use crate::training::dataset::SamplePair;
use crate::training::optim::Adam;

pub const STAGE1_COLUMNS: [&str; 7] =
    ["step", "l_total", "l_ir", "l_vi", "l_illu", "l_tv", "l_per"];
pub const STAGE2_COLUMNS: [&str; 4] = ["step", "l_total", "l_int", "l_text"];

const PERCEPTUAL_SEED: u64 = 0x7065_7263;
const SHUFFLE_SEED: [u64; 2] = [0x7374_6731, 0x7374_6732];

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Stage1Row {
    pub step: u64,
    pub terms: DoValues,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Stage2Row {
    pub step: u64,
    pub terms: FuValues,
}

impl Stage1Row {
    pub fn fields(&self) -> [String; 7] {
        let t = &self.terms;
        [
            self.step.to_string(),
            fmt(t.total),
            fmt(t.ir),
            fmt(t.vi),
            fmt(t.illu),
            fmt(t.tv),
            fmt(t.per),
        ]
    }
}

impl Stage2Row {
    pub fn fields(&self) -> [String; 4] {
        let t = &self.terms;
        [self.step.to_string(), fmt(t.total), fmt(t.int), fmt(t.text)]
    }
}

/// Shortest representation that parses back to the same `f64`.
fn fmt(v: f64) -> String {
    format!("{v:?}")
}

/// Decomposed inputs and stage-1 references, one entry per sample.
pub struct Stage1Data {
    inputs: Vec<DdonInputs>,
    ir_ref: Vec<Tensor>,
    vi_ref: Vec<Tensor>,
}

impl Stage1Data {
    pub fn build(model: &FusionModel, samples: &[SamplePair]) -> Result<Self> {
        ensure!(!samples.is_empty(), Dataset, "empty dataset");
        let mut d = Stage1Data {
            inputs: Vec::new(),
            ir_ref: Vec::new(),
            vi_ref: Vec::new(),
        };
        for s in samples {
            let ir = plane_tensor(&s.ir_degraded);
            let vi = plane_tensor(&s.vi_degraded_rgb.luma());
            d.inputs.push(model.prepare(&ir, &vi)?);
            d.ir_ref.push(plane_tensor(&s.ir_clean));
            d.vi_ref.push(plane_tensor(&s.vi_reference_rgb.luma()));
        }
        Ok(d)
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    fn batch(&self, idx: &[usize]) -> (DdonInputs, Tensor, Tensor) {
        let pick = |f: &dyn Fn(&DdonInputs) -> &Tensor| {
            concat_batch(
                &idx.iter()
                    .map(|&i| f(&self.inputs[i]).clone())
                    .collect::<Vec<_>>(),
            )
        };
        let x = DdonInputs {
            ir: pick(&|x| &x.ir),
            vi: pick(&|x| &x.vi),
            low: pick(&|x| &x.low),
            high: pick(&|x| &x.high),
            reflectance: pick(&|x| &x.reflectance),
            illumination: pick(&|x| &x.illumination),
        };
        (x, gather(&self.ir_ref, idx), gather(&self.vi_ref, idx))
    }
}

/// Frozen DDON features and stage-2 references, one entry per sample.
pub struct Stage2Data {
    f_ir: Vec<Tensor>,
    f_vi: Vec<Tensor>,
    ir_ref: Vec<Tensor>,
    vi_ref: Vec<Tensor>,
    ddon_digest: [u8; 32],
}

impl Stage2Data {
    pub fn build(model: &FusionModel, samples: &[SamplePair]) -> Result<Self> {
        ensure!(!samples.is_empty(), Dataset, "empty dataset");
        let mut d = Stage2Data {
            f_ir: Vec::new(),
            f_vi: Vec::new(),
            ir_ref: Vec::new(),
            vi_ref: Vec::new(),
            ddon_digest: model.ddon_digest(),
        };
        for s in samples {
            let ir = plane_tensor(&s.ir_degraded);
            let vi = plane_tensor(&s.vi_degraded_rgb.luma());
            let (fi, fv) = model.enhance(&model.prepare(&ir, &vi)?)?;
            d.f_ir.push(fi);
            d.f_vi.push(fv);
            d.ir_ref.push(plane_tensor(&s.ir_clean));
            d.vi_ref.push(plane_tensor(&s.vi_reference_rgb.luma()));
        }
        Ok(d)
    }

    pub fn len(&self) -> usize {
        self.f_ir.len()
    }

    pub fn is_empty(&self) -> bool {
        self.f_ir.is_empty()
    }
}

fn gather(items: &[Tensor], idx: &[usize]) -> Tensor {
    concat_batch(&idx.iter().map(|&i| items[i].clone()).collect::<Vec<_>>())
}

/// Sample indices of batch `step`: consecutive slices of a per-epoch seeded
/// permutation, so any step's batch is known without replaying earlier ones.
pub fn batch_indices(n: usize, batch: usize, seed: u64, stage: usize, step: u64) -> Vec<usize> {
    let b = batch.min(n);
    let mut cached: Option<(u64, Vec<usize>)> = None;
    (0..b as u64)
        .map(|j| {
            let pos = step * b as u64 + j;
            let epoch = pos / n as u64;
            if cached.as_ref().is_none_or(|(e, _)| *e != epoch) {
                let mut rng = ChaCha8Rng::seed_from_u64(seed ^ SHUFFLE_SEED[stage]);
                rng.set_stream(epoch);
                let mut perm: Vec<usize> = (0..n).collect();
                perm.shuffle(&mut rng);
                cached = Some((epoch, perm));
            }
            cached.as_ref().expect("permutation").1[(pos % n as u64) as usize]
        })
        .collect()
}

pub struct Trainer {
    pub config: ProjectConfig,
    pub model: FusionModel,
    /// Completed steps of stage 1 and stage 2.
    pub steps: [u64; 2],
    pub optimizer: Option<Adam>,
    extractor: PerceptualExtractor,
}

impl Trainer {
    pub fn new(config: &ProjectConfig) -> Result<Self> {
        config.validate()?;
        Ok(Trainer {
            model: FusionModel::new(&config.model(), config.seed)?,
            extractor: PerceptualExtractor::new(config.seed ^ PERCEPTUAL_SEED),
            config: config.clone(),
            steps: [0, 0],
            optimizer: None,
        })
    }

    /// Continues from a checkpoint under `config`, which may change training
    /// settings but not the architecture.
    pub fn from_checkpoint(ck: &Checkpoint, config: &ProjectConfig) -> Result<Self> {
        config.validate()?;
        ensure!(
            ck.config.model() == config.model(),
            Config,
            "checkpoint architecture differs from the configured one"
        );
        let model = ck.restore_model()?;
        let mut optimizer = ck.restore_optimizer(&model)?;
        if let Some(o) = optimizer.as_mut() {
            o.lr = config.train.learning_rate;
        }
        Ok(Trainer {
            model,
            optimizer,
            extractor: PerceptualExtractor::new(config.seed ^ PERCEPTUAL_SEED),
            config: config.clone(),
            steps: [ck.stage1_step, ck.stage2_step],
        })
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint::capture(
            &self.config,
            &self.model,
            self.optimizer.as_ref(),
            self.steps,
        )
    }

    fn apply(&mut self, group: Group, grads: &[Option<Tensor>]) {
        if self.optimizer.as_ref().is_none_or(|o| o.group != group) {
            self.optimizer = Some(Adam::new(
                &self.model.params,
                group,
                self.config.train.learning_rate,
            ));
        }
        let opt = self.optimizer.as_mut().expect("optimizer");
        opt.step(&mut self.model.params, grads);
    }

    /// One stage-1 update; the row holds the loss before the update.
    pub fn stage1_step(&mut self, data: &Stage1Data) -> Result<Stage1Row> {
        let step = self.steps[0];
        let idx = batch_indices(
            data.len(),
            self.config.train.batch_size,
            self.config.seed,
            0,
            step,
        );
        let (x, ir_ref, vi_ref) = data.batch(&idx);
        let (terms, grads) = {
            let mut s = Session::new(&self.model.params, &[Group::Ddon]);
            let f = self.model.ddon.forward(&mut s, &x)?;
            let (ir_en, vi_en) = self.model.ddon.reconstruct(&mut s, &f);
            let ir_ref = s.g.constant(ir_ref);
            let vi_ref = s.g.constant(vi_ref);
            let t = loss_do(
                &mut s.g,
                ir_en,
                vi_en,
                ir_ref,
                vi_ref,
                &self.config.loss,
                &self.extractor,
            )?;
            let values = t.values(&s.g);
            if !values.total.is_finite() {
                return Err(Error::NonFiniteLoss {
                    step: step as usize,
                });
            }
            let mut g = s.g.backward(t.total);
            (values, s.param_grads(&mut g))
        };
        self.apply(Group::Ddon, &grads);
        self.steps[0] += 1;
        Ok(Stage1Row { step, terms })
    }

    /// One stage-2 update on frozen DDON features.
    pub fn stage2_step(&mut self, data: &Stage2Data) -> Result<Stage2Row> {
        ensure!(
            data.ddon_digest == self.model.ddon_digest(),
            InvalidInput,
            "stage-2 features were computed with different DDON weights"
        );
        let step = self.steps[1];
        let idx = batch_indices(
            data.len(),
            self.config.train.batch_size,
            self.config.seed,
            1,
            step,
        );
        let (terms, grads) = {
            let mut s = Session::new(&self.model.params, &[Group::Ilgfn]);
            let fi = s.g.constant(gather(&data.f_ir, &idx));
            let fv = s.g.constant(gather(&data.f_vi, &idx));
            let fu = self.model.ilgfn.forward(&mut s, fv, fi)?;
            let y = self.model.ilgfn.recon.forward(&mut s, fu);
            let ir_ref = s.g.constant(gather(&data.ir_ref, &idx));
            let vi_ref = s.g.constant(gather(&data.vi_ref, &idx));
            let t = loss_fu(&mut s.g, y, ir_ref, vi_ref, &self.config.loss)?;
            let values = t.values(&s.g);
            if !values.total.is_finite() {
                return Err(Error::NonFiniteLoss {
                    step: step as usize,
                });
            }
            let mut g = s.g.backward(t.total);
            (values, s.param_grads(&mut g))
        };
        self.apply(Group::Ilgfn, &grads);
        self.steps[1] += 1;
        Ok(Stage2Row { step, terms })
    }

    pub fn train_stage1(
        &mut self,
        data: &Stage1Data,
        steps: usize,
        mut on_row: impl FnMut(&Stage1Row) -> Result<()>,
    ) -> Result<()> {
        for _ in 0..steps {
            let row = self.stage1_step(data)?;
            on_row(&row)?;
        }
        Ok(())
    }

    /// Runs stage 2 and verifies afterwards that no DDON value changed.
    pub fn train_stage2(
        &mut self,
        data: &Stage2Data,
        steps: usize,
        mut on_row: impl FnMut(&Stage2Row) -> Result<()>,
    ) -> Result<()> {
        let before = self.model.ddon_digest();
        for _ in 0..steps {
            let row = self.stage2_step(data)?;
            on_row(&row)?;
        }
        ensure!(
            self.model.ddon_digest() == before,
            Numeric,
            "DDON parameters changed during stage 2"
        );
        Ok(())
    }
}
