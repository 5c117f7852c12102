use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{cosine_similarity, update_prototype, FeatureVec, PbfError};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BankConfig {
    pub capacity: usize,
    /// Cosine similarity at which an initialization feature merges into an
    /// existing prototype instead of opening a new slot.
    pub tau_new: f64,
    pub beta_init: f64,
    pub beta_train: f64,
}

impl Default for BankConfig {
    fn default() -> Self {
        Self { capacity: 256, tau_new: 0.8, beta_init: 0.01, beta_train: 0.005 }
    }
}

impl BankConfig {
    pub fn validate(&self) -> Result<(), PbfError> {
        if self.capacity == 0 {
            return Err(PbfError::InvalidConfig("capacity must be at least 1".into()));
        }
        for (name, b) in [("beta_init", self.beta_init), ("beta_train", self.beta_train)] {
            if !(0.0..=1.0).contains(&b) {
                return Err(PbfError::InvalidConfig(format!("{name} = {b} outside [0, 1]")));
            }
        }
        if !(self.tau_new > -1.0 && self.tau_new <= 1.0) {
            return Err(PbfError::InvalidConfig(format!("tau_new = {} outside (-1, 1]", self.tau_new)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrototypeSlot {
    pub vector: FeatureVec,
    pub update_count: u64,
}

/// Fixed-capacity prototype set for one class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrototypeBank {
    config: BankConfig,
    slots: Vec<PrototypeSlot>,
    /// Zero vectors dropped during initialization.
    skipped: u64,
}

impl PrototypeBank {
    pub fn new(config: BankConfig) -> Result<Self, PbfError> {
        config.validate()?;
        Ok(Self { config, slots: Vec::new(), skipped: 0 })
    }

    pub fn config(&self) -> &BankConfig {
        &self.config
    }

    /// Replaces the training-time update weight.
    pub fn set_beta_train(&mut self, beta: f64) -> Result<(), PbfError> {
        let config = BankConfig { beta_train: beta, ..self.config };
        config.validate()?;
        self.config = config;
        Ok(())
    }

    /// Checks a bank that did not come through the constructors.
    pub fn validate(&self) -> Result<(), PbfError> {
        self.config.validate()?;
        if self.slots.len() > self.config.capacity {
            return Err(PbfError::InvalidConfig(format!(
                "{} slots exceed capacity {}",
                self.slots.len(),
                self.config.capacity
            )));
        }
        for s in &self.slots {
            self.check_dim(&s.vector)?;
            if s.vector.is_zero() || s.vector.values().iter().any(|v| !v.is_finite()) {
                return Err(PbfError::InvalidConfig("prototype must be finite and nonzero".into()));
            }
        }
        Ok(())
    }

    pub fn slots(&self) -> &[PrototypeSlot] {
        &self.slots
    }

    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    pub fn skipped(&self) -> u64 {
        self.skipped
    }

    pub fn dim(&self) -> Option<usize> {
        self.slots.first().map(|s| s.vector.dim())
    }

    fn check_dim(&self, f: &FeatureVec) -> Result<(), PbfError> {
        match self.dim() {
            Some(d) if d != f.dim() => Err(PbfError::DimensionMismatch { expected: d, found: f.dim() }),
            _ => Ok(()),
        }
    }

    /// Most similar slot; the lowest index wins exact ties.
    pub fn nearest(&self, f: &FeatureVec) -> Result<(usize, f64), PbfError> {
        if self.slots.is_empty() {
            return Err(PbfError::EmptyBank);
        }
        self.check_dim(f)?;
        let mut best = (0, f64::NEG_INFINITY);
        for (i, slot) in self.slots.iter().enumerate() {
            let c = cosine_similarity(f, &slot.vector)?;
            if c > best.1 {
                best = (i, c);
            }
        }
        Ok(best)
    }

    fn merge_into(&mut self, slot: usize, f: &FeatureVec, beta: f64) -> Result<(), PbfError> {
        let s = &mut self.slots[slot];
        s.vector = update_prototype(&s.vector, f, beta)?;
        s.update_count += 1;
        Ok(())
    }

    /// One initialization step: merge above `tau_new`, else open a slot while
    /// capacity remains, else merge into the nearest slot regardless.
    pub fn absorb_initial(&mut self, f: FeatureVec) -> Result<(), PbfError> {
        if f.is_zero() {
            self.skipped += 1;
            return Ok(());
        }
        self.check_dim(&f)?;
        if self.slots.is_empty() {
            self.slots.push(PrototypeSlot { vector: f, update_count: 1 });
            return Ok(());
        }
        let (idx, sim) = self.nearest(&f)?;
        if sim >= self.config.tau_new {
            self.merge_into(idx, &f, self.config.beta_init)
        } else if self.slots.len() < self.config.capacity {
            self.slots.push(PrototypeSlot { vector: f, update_count: 1 });
            Ok(())
        } else {
            self.merge_into(idx, &f, self.config.beta_init)
        }
    }

    /// Merges each validated feature into its nearest slot with `beta_train`,
    /// in input order.
    pub fn refine<'a>(
        &mut self,
        features: impl IntoIterator<Item = &'a FeatureVec>,
    ) -> Result<(), PbfError> {
        if self.slots.is_empty() {
            return Err(PbfError::EmptyBank);
        }
        for f in features {
            let (idx, _) = self.nearest(f)?;
            self.merge_into(idx, f, self.config.beta_train)?;
        }
        Ok(())
    }
}

pub fn initialize_prototypes(
    features: impl IntoIterator<Item = FeatureVec>,
    config: BankConfig,
) -> Result<PrototypeBank, PbfError> {
    let mut bank = PrototypeBank::new(config)?;
    for f in features {
        bank.absorb_initial(f)?;
    }
    Ok(bank)
}

pub fn refine_prototypes(bank: &mut PrototypeBank, features: &[FeatureVec]) -> Result<(), PbfError> {
    bank.refine(features)
}

/// Class name used when labels carry no other class.
pub const DEFAULT_CLASS: &str = "Car";

/// Prototype banks keyed by class name.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ClassBanks {
    banks: BTreeMap<String, PrototypeBank>,
}

impl ClassBanks {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn get(&self, class_name: &str) -> Option<&PrototypeBank> {
        self.banks.get(class_name)
    }

    pub fn get_mut(&mut self, class_name: &str) -> Option<&mut PrototypeBank> {
        self.banks.get_mut(class_name)
    }

    pub fn insert(&mut self, class_name: impl Into<String>, bank: PrototypeBank) {
        self.banks.insert(class_name.into(), bank);
    }

    pub fn classes(&self) -> impl Iterator<Item = &str> {
        self.banks.keys().map(String::as_str)
    }

    /// Builds one bank per class from `(class, feature)` pairs in order.
    pub fn initialize(
        features: impl IntoIterator<Item = (String, FeatureVec)>,
        config: BankConfig,
    ) -> Result<Self, PbfError> {
        let mut out = Self::new();
        for (class, f) in features {
            if !out.banks.contains_key(&class) {
                out.banks.insert(class.clone(), PrototypeBank::new(config)?);
            }
            out.banks.get_mut(&class).unwrap().absorb_initial(f)?;
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fv(v: &[f64]) -> FeatureVec {
        FeatureVec::new(v.to_vec())
    }

    #[test]
    fn identical_features_share_a_slot() {
        let bank = initialize_prototypes([fv(&[0.3, 0.4]), fv(&[0.3, 0.4])], BankConfig::default())
            .unwrap();
        assert_eq!(bank.len(), 1);
        assert_eq!(bank.slots()[0].update_count, 2);
        let v = bank.slots()[0].vector.values();
        assert!((v[0] - 0.3).abs() < 1e-15 && (v[1] - 0.4).abs() < 1e-15);
    }

    #[test]
    fn orthogonal_features_open_slots() {
        let bank = initialize_prototypes([fv(&[1.0, 0.0]), fv(&[0.0, 1.0])], BankConfig::default())
            .unwrap();
        assert_eq!(bank.len(), 2);
    }

    #[test]
    fn full_bank_merges_regardless() {
        let cfg = BankConfig { capacity: 1, ..BankConfig::default() };
        let bank = initialize_prototypes([fv(&[1.0, 0.0]), fv(&[0.0, 1.0])], cfg).unwrap();
        assert_eq!(bank.len(), 1);
        assert_eq!(bank.slots()[0].vector.values(), &[0.99, 0.01]);
        assert_eq!(bank.slots()[0].update_count, 2);
    }

    #[test]
    fn zero_features_are_counted_and_skipped() {
        let bank =
            initialize_prototypes([fv(&[0.0, 0.0]), fv(&[1.0, 2.0])], BankConfig::default()).unwrap();
        assert_eq!(bank.len(), 1);
        assert_eq!(bank.skipped(), 1);
    }

    #[test]
    fn dimension_mismatch_is_an_error() {
        let err = initialize_prototypes([fv(&[1.0, 0.0]), fv(&[1.0, 0.0, 0.0])], BankConfig::default())
            .unwrap_err();
        assert_eq!(err, PbfError::DimensionMismatch { expected: 2, found: 3 });
    }

    #[test]
    fn refine_cases() {
        let mut bank =
            initialize_prototypes([fv(&[1.0, 0.0]), fv(&[0.0, 1.0])], BankConfig::default()).unwrap();
        let before = bank.clone();
        bank.refine(&[]).unwrap();
        assert_eq!(bank, before);
        bank.refine(&[fv(&[0.0, 1.0])]).unwrap();
        assert_eq!(bank.slots()[1].vector, before.slots()[1].vector);
        assert_eq!(bank.slots()[1].update_count, 2);
        let mut empty = PrototypeBank::new(BankConfig::default()).unwrap();
        assert_eq!(empty.refine(&[fv(&[1.0])]), Err(PbfError::EmptyBank));
    }

    #[test]
    fn nearest_breaks_ties_by_index() {
        let bank =
            initialize_prototypes([fv(&[1.0, 0.0]), fv(&[0.0, 1.0])], BankConfig::default()).unwrap();
        let (idx, sim) = bank.nearest(&fv(&[1.0, 1.0])).unwrap();
        assert_eq!(idx, 0);
        assert!((sim - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-12);
    }

    #[test]
    fn class_banks_split_by_class() {
        let banks = ClassBanks::initialize(
            [
                ("Car".to_string(), fv(&[1.0, 0.0])),
                ("Pedestrian".to_string(), fv(&[0.0, 1.0])),
                ("Car".to_string(), fv(&[1.0, 0.01])),
            ],
            BankConfig::default(),
        )
        .unwrap();
        assert_eq!(banks.get("Car").unwrap().len(), 1);
        assert_eq!(banks.get("Pedestrian").unwrap().len(), 1);
        assert_eq!(banks.classes().collect::<Vec<_>>(), ["Car", "Pedestrian"]);
    }
}
