//! CSV export of controller outputs.

use std::io::Write;

use crate::domains::{Dataset, DomainPartition, EmbeddingTable, FeatureBank};
use crate::dynnet::DynamicNetwork;
use crate::error::{Error, Result};

/// Column names: `id`, every schema attribute, then one `alpha_<layer>_<expert>`
/// per controller output (both 1-based).
pub fn factor_header(data: &Dataset, net: &DynamicNetwork) -> Vec<String> {
    let mut cols = vec!["id".to_string()];
    cols.extend(data.schema.attributes().iter().map(|a| a.name.clone()));
    for l in 1..=net.dynamic_layer_count() {
        for k in 1..=net.k() {
            cols.push(format!("alpha_{l}_{k}"));
        }
    }
    cols
}

fn write_row(out: &mut dyn Write, fields: &[String]) -> Result<()> {
    let line = fields.join(",");
    writeln!(out, "{line}").map_err(|e| Error::io("<factor csv>", e))
}

fn check_field(v: &str) -> Result<()> {
    if v.contains([',', '"', '\n', '\r']) {
        return Err(Error::InvalidArgument(format!("value {v:?} cannot be written unquoted")));
    }
    Ok(())
}

/// One row per domain of `partition`, conditioned on its embedding. Attribute
/// columns outside the partition keys are left empty. Ids are `domain-<tau>`.
pub fn export_domain_factors(
    out: &mut dyn Write,
    net: &DynamicNetwork,
    data: &Dataset,
    partition: &DomainPartition,
    table: &EmbeddingTable,
) -> Result<()> {
    write_row(out, &factor_header(data, net))?;
    for g in partition.groups() {
        let mut row = vec![format!("domain-{}", g.tau)];
        for a in 0..data.schema.len() {
            let name = match partition.key_indices().iter().position(|&k| k == a) {
                Some(pos) => data.schema.value_name(a, g.tuple[pos]).to_string(),
                None => String::new(),
            };
            check_field(&name)?;
            row.push(name);
        }
        let alphas = net.factor_vector(&table.get(g.tau)?.vector)?;
        row.extend(alphas.iter().map(|a| a.to_string()));
        write_row(out, &row)?;
    }
    Ok(())
}

/// One row per image, conditioned on its own encoder feature. Ids are sample ids.
pub fn export_image_factors(out: &mut dyn Write, net: &DynamicNetwork, data: &Dataset, bank: &FeatureBank) -> Result<()> {
    if bank.len() != data.len() {
        return Err(Error::shape("export_image_factors", data.len(), bank.len()));
    }
    write_row(out, &factor_header(data, net))?;
    for (s, f) in data.samples.iter().zip(bank.features()) {
        let mut row = vec![s.id.to_string()];
        for (a, &v) in s.attrs.iter().enumerate() {
            let name = data.schema.value_name(a, v).to_string();
            check_field(&name)?;
            row.push(name);
        }
        row.extend(net.factor_vector(f)?.iter().map(|a| a.to_string()));
        write_row(out, &row)?;
    }
    Ok(())
}
