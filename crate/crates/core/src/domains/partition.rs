use std::collections::BTreeMap;

use super::generate::SampleRecord;
use super::schema::AttributeSchema;
use crate::error::{Error, Result};

/// One domain: all samples sharing a tuple of key-attribute values.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DomainGroup {
    pub tau: usize,
    /// Value indices of the key attributes, in key order.
    pub tuple: Vec<usize>,
    /// Positions into the sample slice the partition was built from.
    pub members: Vec<usize>,
}

/// Disjoint, exhaustive grouping of a sample set by key attributes.
///
/// Domain ids `tau` follow the lexicographic order of the occurring tuples.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DomainPartition {
    keys: Vec<String>,
    key_indices: Vec<usize>,
    groups: Vec<DomainGroup>,
    sample_domain: Vec<usize>,
}

pub fn partition<S: AsRef<str>>(
    schema: &AttributeSchema,
    samples: &[SampleRecord],
    key_attrs: &[S],
) -> Result<DomainPartition> {
    let key_indices = schema.resolve_keys(key_attrs)?;
    let mut by_tuple: BTreeMap<Vec<usize>, Vec<usize>> = BTreeMap::new();
    for (pos, s) in samples.iter().enumerate() {
        schema.check_attrs(&s.attrs)?;
        let tuple = key_indices.iter().map(|&k| s.attrs[k]).collect();
        by_tuple.entry(tuple).or_default().push(pos);
    }
    let mut sample_domain = vec![0; samples.len()];
    let groups = by_tuple
        .into_iter()
        .enumerate()
        .map(|(tau, (tuple, members))| {
            for &m in &members {
                sample_domain[m] = tau;
            }
            DomainGroup { tau, tuple, members }
        })
        .collect();
    Ok(DomainPartition {
        keys: key_attrs.iter().map(|k| k.as_ref().to_string()).collect(),
        key_indices,
        groups,
        sample_domain,
    })
}

/// Partitions an evaluation set by `eval_keys`, which may differ from the
/// keys the model was trained with. Both key sets are validated.
pub fn regroup<S: AsRef<str>, U: AsRef<str>>(
    schema: &AttributeSchema,
    train_keys: &[S],
    eval_keys: &[U],
    samples: &[SampleRecord],
) -> Result<DomainPartition> {
    schema.resolve_keys(train_keys)?;
    partition(schema, samples, eval_keys)
}

impl DomainPartition {
    pub fn keys(&self) -> &[String] {
        &self.keys
    }

    pub fn key_indices(&self) -> &[usize] {
        &self.key_indices
    }

    pub fn groups(&self) -> &[DomainGroup] {
        &self.groups
    }

    pub fn len(&self) -> usize {
        self.groups.len()
    }

    pub fn is_empty(&self) -> bool {
        self.groups.is_empty()
    }

    pub fn group(&self, tau: usize) -> Result<&DomainGroup> {
        self.groups.get(tau).ok_or(Error::UnknownDomain(tau))
    }

    pub fn domain_of_sample(&self, pos: usize) -> usize {
        self.sample_domain[pos]
    }

    pub fn sample_count(&self) -> usize {
        self.sample_domain.len()
    }

    /// Domain id of a full attribute tuple under this partition's keys.
    pub fn tau_of_attrs(&self, attrs: &[usize]) -> Option<usize> {
        let tuple: Vec<usize> = self.key_indices.iter().map(|&k| attrs[k]).collect();
        self.groups.iter().find(|g| g.tuple == tuple).map(|g| g.tau)
    }

    /// Human-readable value names of a group's key tuple.
    pub fn tuple_names(&self, schema: &AttributeSchema, tau: usize) -> Vec<String> {
        self.groups[tau]
            .tuple
            .iter()
            .zip(&self.key_indices)
            .map(|(&v, &a)| schema.value_name(a, v).to_string())
            .collect()
    }

    pub fn label(&self, schema: &AttributeSchema, tau: usize) -> String {
        let names = self.tuple_names(schema, tau);
        if names.is_empty() {
            "all".into()
        } else {
            names.join("-")
        }
    }
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;
    use crate::numerics::Tensor;

    fn records(attrs: &[[usize; 3]]) -> Vec<SampleRecord> {
        attrs
            .iter()
            .enumerate()
            .map(|(id, a)| SampleRecord {
                id,
                image: Tensor::zeros(vec![1]),
                label: 0,
                attrs: a.to_vec(),
            })
            .collect()
    }

    #[test]
    fn empty_keys_give_one_group() {
        let s = records(&[[0, 0, 0], [1, 2, 1], [0, 1, 0]]);
        let p = partition::<&str>(&AttributeSchema::driving(), &s, &[]).unwrap();
        assert_eq!(p.len(), 1);
        assert_eq!(p.groups()[0].members, vec![0, 1, 2]);
    }

    #[test]
    fn cross_product_of_keys() {
        let all: Vec<[usize; 3]> = (0..2).flat_map(|t| (0..3).map(move |w| [t, w, (t + w) % 2])).collect();
        let p = partition(&AttributeSchema::driving(), &records(&all), &["time", "weather"]).unwrap();
        assert_eq!(p.len(), 6);
        assert_eq!(p.groups()[4].tuple, vec![1, 1]);
        assert_eq!(p.groups().iter().map(|g| g.members.len()).sum::<usize>(), 6);
    }

    #[test]
    fn unknown_attribute_is_rejected() {
        let err = partition(&AttributeSchema::driving(), &records(&[[0, 0, 0]]), &["season"]).unwrap_err();
        assert!(matches!(err, Error::UnknownAttribute(ref a) if a == "season"));
    }

    #[test]
    fn regroup_by_scene_counts_scene_values() {
        let all: Vec<[usize; 3]> = (0..12).map(|i| [i % 2, i % 3, (i / 6) % 2]).collect();
        let s = records(&all);
        let schema = AttributeSchema::driving();
        let p = regroup(&schema, &["time", "weather"], &["scene"], &s).unwrap();
        assert_eq!(p.len(), 2);
        let same = regroup(&schema, &["time", "weather"], &["time", "weather"], &s).unwrap();
        assert_eq!(same, partition(&schema, &s, &["time", "weather"]).unwrap());
        assert!(regroup(&schema, &["bogus"], &["scene"], &s).is_err());
    }

    proptest! {
        #[test]
        fn groups_are_disjoint_and_exhaustive(
            attrs in proptest::collection::vec((0usize..2, 0usize..3, 0usize..2), 1..60),
            key_mask in 0u8..8,
        ) {
            let rows: Vec<[usize; 3]> = attrs.iter().map(|&(a, b, c)| [a, b, c]).collect();
            let s = records(&rows);
            let keys: Vec<&str> = ["time", "weather", "scene"]
                .iter()
                .enumerate()
                .filter(|(i, _)| key_mask & (1 << i) != 0)
                .map(|(_, k)| *k)
                .collect();
            let p = partition(&AttributeSchema::driving(), &s, &keys).unwrap();
            let mut seen = vec![0usize; s.len()];
            for g in p.groups() {
                prop_assert!(!g.members.is_empty());
                for &m in &g.members {
                    seen[m] += 1;
                    prop_assert_eq!(p.domain_of_sample(m), g.tau);
                }
            }
            prop_assert!(seen.iter().all(|&c| c == 1));
            for w in p.groups().windows(2) {
                prop_assert!(w[0].tuple < w[1].tuple);
            }
        }
    }
}
