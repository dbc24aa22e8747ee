//! Named parameter collections with a meta-update mask.

use indexmap::IndexMap;
use ndarray::ArrayD;

use crate::ensure_arg;
use crate::error::{MrdaError, Result};

use super::graph::{Graph, Gradients, Var};
use super::scalar::Scalar;

#[derive(Debug, Clone)]
pub struct ParamEntry<T: Scalar> {
    pub value: ArrayD<T>,
    /// True when the entry participates in meta/inner-loop updates.
    pub meta: bool,
}

/// Ordered name -> array map. Shapes are fixed at insertion.
#[derive(Debug, Clone, Default)]
pub struct ParamSet<T: Scalar> {
    entries: IndexMap<String, ParamEntry<T>>,
}

impl<T: Scalar> ParamSet<T> {
    pub fn new() -> Self {
        Self {
            entries: IndexMap::new(),
        }
    }

    pub fn insert(&mut self, name: &str, value: ArrayD<T>, meta: bool) -> Result<()> {
        ensure_arg!(
            !self.entries.contains_key(name),
            "duplicate parameter '{name}'"
        );
        self.entries
            .insert(name.to_string(), ParamEntry { value, meta });
        Ok(())
    }

    pub fn get(&self, name: &str) -> Result<&ParamEntry<T>> {
        self.entries
            .get(name)
            .ok_or_else(|| MrdaError::InvalidArgument(format!("unknown parameter '{name}'")))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut ParamEntry<T>> {
        self.entries
            .get_mut(name)
            .ok_or_else(|| MrdaError::InvalidArgument(format!("unknown parameter '{name}'")))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.contains_key(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &ParamEntry<T>)> {
        self.entries.iter()
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.entries.keys()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn num_scalars(&self) -> usize {
        self.entries.values().map(|e| e.value.len()).sum()
    }

    /// Flips the meta mask on every entry whose name starts with `prefix`.
    pub fn set_meta_by_prefix(&mut self, prefix: &str, meta: bool) -> usize {
        let mut n = 0;
        for (name, entry) in self.entries.iter_mut() {
            if name.starts_with(prefix) {
                entry.meta = meta;
                n += 1;
            }
        }
        n
    }

    /// Exact elementwise equality, including bit patterns of signed zeros.
    pub fn bitwise_eq(&self, other: &Self) -> bool {
        if self.entries.len() != other.entries.len() {
            return false;
        }
        self.entries.iter().all(|(name, e)| {
            other.entries.get(name).is_some_and(|o| {
                o.meta == e.meta
                    && o.value.shape() == e.value.shape()
                    && o.value
                        .iter()
                        .zip(e.value.iter())
                        .all(|(a, b)| {
                            Scalar::to_f64(*a).to_bits() == Scalar::to_f64(*b).to_bits()
                        })
            })
        })
    }

    /// Plain gradient-descent step on masked entries only; entries with
    /// meta = false are left untouched even if a gradient is supplied.
    pub fn apply_masked_sgd(&mut self, grads: &IndexMap<String, ArrayD<T>>, lr: T) -> Result<()> {
        for (name, grad) in grads {
            let entry = self.get_mut(name)?;
            if !entry.meta {
                continue;
            }
            ensure_arg!(
                entry.value.shape() == grad.shape(),
                "gradient shape {:?} does not match parameter '{name}' {:?}",
                grad.shape(),
                entry.value.shape()
            );
            entry.value.zip_mut_with(grad, |v, g| *v = *v - lr * *g);
        }
        Ok(())
    }

    /// Copies every entry of `other` into `self`; names and shapes must
    /// match exactly. Returns the per-entry report on success.
    pub fn copy_from(&mut self, other: &Self) -> Result<Vec<String>> {
        let mut report = Vec::new();
        let mut missing: Vec<&String> = Vec::new();
        for (name, entry) in &other.entries {
            match self.entries.get_mut(name) {
                Some(dst) if dst.value.shape() == entry.value.shape() => {
                    dst.value.assign(&entry.value);
                    report.push(format!(
                        "{name}: copied {:?}",
                        entry.value.shape()
                    ));
                }
                Some(dst) => {
                    return Err(MrdaError::Structural(format!(
                        "parameter '{name}': source shape {:?} vs destination {:?}",
                        entry.value.shape(),
                        dst.value.shape()
                    )));
                }
                None => missing.push(name),
            }
        }
        if !missing.is_empty() {
            return Err(MrdaError::Structural(format!(
                "destination lacks parameters: {missing:?}"
            )));
        }
        if self.entries.len() != other.entries.len() {
            let extra: Vec<&String> = self
                .entries
                .keys()
                .filter(|k| !other.entries.contains_key(*k))
                .collect();
            return Err(MrdaError::Structural(format!(
                "destination has extra parameters: {extra:?}"
            )));
        }
        Ok(report)
    }
}

/// How parameter leaves enter a graph.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BindMode {
    /// Pure inference: nothing tracks gradients.
    Constant,
    /// Entries with meta = true become differentiable leaves; the rest are
    /// constants.
    Trainable,
}

/// name -> graph var map for one bound parameter set.
#[derive(Debug, Clone)]
pub struct Binding {
    vars: IndexMap<String, Var>,
}

impl Binding {
    pub fn from_vars(vars: IndexMap<String, Var>) -> Self {
        Self { vars }
    }

    pub fn var(&self, name: &str) -> Result<Var> {
        self.vars
            .get(name)
            .copied()
            .ok_or_else(|| MrdaError::InvalidArgument(format!("unbound parameter '{name}'")))
    }

    pub fn set(&mut self, name: &str, var: Var) {
        self.vars.insert(name.to_string(), var);
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Var)> {
        self.vars.iter()
    }
}

pub fn bind<T: Scalar>(g: &mut Graph<T>, params: &ParamSet<T>, mode: BindMode) -> Binding {
    let mut vars = IndexMap::new();
    for (name, entry) in params.iter() {
        let var = match mode {
            BindMode::Constant => g.constant(entry.value.clone()),
            BindMode::Trainable => {
                if entry.meta {
                    g.param(entry.value.clone())
                } else {
                    g.constant(entry.value.clone())
                }
            }
        };
        vars.insert(name.clone(), var);
    }
    Binding { vars }
}

/// Pulls gradient arrays out of a sweep for every bound var that got one.
pub fn collect_grads<T: Scalar>(
    g: &Graph<T>,
    binding: &Binding,
    grads: &Gradients,
) -> IndexMap<String, ArrayD<T>> {
    let mut out = IndexMap::new();
    for (name, var) in binding.iter() {
        if let Some(gv) = grads.get(*var) {
            out.insert(name.clone(), g.value(gv).clone());
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::arr1;

    fn small_set() -> ParamSet<f64> {
        let mut p = ParamSet::new();
        p.insert("body.w", arr1(&[1.0, 2.0]).into_dyn(), true).unwrap();
        p.insert("upscaler.w", arr1(&[3.0, 4.0]).into_dyn(), false)
            .unwrap();
        p
    }

    #[test]
    fn masked_step_touches_only_masked_entries() {
        let mut p = small_set();
        let before = p.clone();
        let mut grads = IndexMap::new();
        grads.insert("body.w".to_string(), arr1(&[1.0, 1.0]).into_dyn());
        grads.insert("upscaler.w".to_string(), arr1(&[1.0, 1.0]).into_dyn());
        p.apply_masked_sgd(&grads, 0.5).unwrap();
        assert_eq!(p.get("body.w").unwrap().value, arr1(&[0.5, 1.5]).into_dyn());
        assert_eq!(
            p.get("upscaler.w").unwrap().value,
            before.get("upscaler.w").unwrap().value
        );
    }

    #[test]
    fn duplicate_names_rejected() {
        let mut p = small_set();
        assert!(p.insert("body.w", arr1(&[0.0]).into_dyn(), true).is_err());
    }

    #[test]
    fn bitwise_eq_detects_single_bit() {
        let p = small_set();
        let mut q = p.clone();
        assert!(p.bitwise_eq(&q));
        let v = q.get_mut("body.w").unwrap().value[[0]];
        q.get_mut("body.w").unwrap().value[[0]] = f64::from_bits(v.to_bits() + 1);
        assert!(!p.bitwise_eq(&q));
    }

    #[test]
    fn copy_from_reports_shape_mismatch() {
        let mut dst = small_set();
        let mut src = ParamSet::<f64>::new();
        src.insert("body.w", arr1(&[1.0, 2.0, 3.0]).into_dyn(), true)
            .unwrap();
        src.insert("upscaler.w", arr1(&[0.0, 0.0]).into_dyn(), false)
            .unwrap();
        let err = dst.copy_from(&src).unwrap_err();
        assert!(matches!(err, MrdaError::Structural(_)));
    }

    #[test]
    fn set_meta_by_prefix_counts() {
        let mut p = small_set();
        assert_eq!(p.set_meta_by_prefix("upscaler", true), 1);
        assert!(p.get("upscaler.w").unwrap().meta);
    }
}
