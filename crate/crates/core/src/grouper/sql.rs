//! SQL text for one exact-matching pass without replacement.
//!
//! The query marks every still-unmatched row whose active-covariate values
//! form a group with at least one treated and one control row. The
//! `is_matched` column records the level at which each row was matched
//! (0 = unmatched). Identifiers are substituted verbatim; no quoting is done.

use super::ActiveSet;
use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::scalar::Real;

fn check_identifier(id: &str) -> Result<()> {
    if id.is_empty() {
        return Err(Error::SqlEmission("empty identifier".into()));
    }
    if let Some(c) = id.chars().find(|c| c.is_whitespace() || matches!(c, '\'' | '"' | '`')) {
        return Err(Error::SqlEmission(format!("identifier `{id}` contains {c:?}")));
    }
    Ok(())
}

/// Emits the matching query for the named covariates at `level` against `table`.
pub fn emit_sql<S: AsRef<str>>(covariates: &[S], level: u32, table: &str) -> Result<String> {
    if covariates.is_empty() {
        return Err(Error::SqlEmission("no covariates to group on".into()));
    }
    if level < 1 {
        return Err(Error::SqlEmission("level must be at least 1".into()));
    }
    check_identifier(table)?;
    for c in covariates {
        check_identifier(c.as_ref())?;
    }
    let cols: Vec<&str> = covariates.iter().map(AsRef::as_ref).collect();
    let plain = cols.join(", ");
    let qualified = cols.iter().map(|c| format!("{table}.{c}")).collect::<Vec<_>>().join(", ");
    let join = cols.iter().map(|c| format!("S.{c} = {table}.{c}")).collect::<Vec<_>>().join(" AND ");
    Ok(format!(
        "WITH tempgroups AS\n\
         (SELECT {plain}\n\
         FROM {table}\n\
         WHERE is_matched = 0\n\
         GROUP BY {plain}\n\
         HAVING SUM(T) >= 1 AND SUM(T) <= COUNT(*)-1\n\
         ),\n\
         UPDATE {table}\n\
         SET is_matched = {level}\n\
         WHERE EXISTS\n   \
         (SELECT {qualified}\n    \
         FROM tempgroups S\n    \
         WHERE {join} )\n   \
         AND is_matched = 0\n"
    ))
}

/// [`emit_sql`] with covariate names taken from the dataset.
pub fn emit_sql_for<F: Real>(d: &Dataset<F>, active: &ActiveSet, level: u32, table: &str) -> Result<String> {
    active.check_within(d.n_covariates())?;
    let names: Vec<&str> = active.iter().map(|k| d.covariate_names()[k].as_str()).collect();
    emit_sql(&names, level, table)
}
