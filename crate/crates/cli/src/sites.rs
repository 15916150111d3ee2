//! Site-list syntax: `grid(a,b,n)`, a comma list of numbers, or a JSON array
//! of numbers or coordinate arrays.

use opkern::{grid, Site};
use serde_json::Value;

use crate::error::CliError;

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

fn number(text: &str) -> Result<f64, CliError> {
    text.trim().parse().map_err(|_| usage(format!("sites: not a number: {:?}", text.trim())))
}

pub fn parse_sites(text: &str) -> Result<Vec<Site>, CliError> {
    let text = text.trim();
    let sites = if let Some(rest) = text.strip_prefix("grid") {
        let inner = rest
            .trim()
            .strip_prefix('(')
            .and_then(|r| r.strip_suffix(')'))
            .ok_or_else(|| usage("sites: expected grid(a,b,n)"))?;
        let parts: Vec<&str> = inner.split(',').collect();
        let [a, b, n] = parts[..] else {
            return Err(usage("sites: grid takes exactly three arguments"));
        };
        let n = n.trim().parse().map_err(|_| usage(format!("sites: bad grid size {:?}", n.trim())))?;
        grid(number(a)?, number(b)?, n)?
    } else if text.starts_with('[') {
        let value: Value = serde_json::from_str(text).map_err(|e| usage(format!("sites: {e}")))?;
        let items = value.as_array().ok_or_else(|| usage("sites: expected an array"))?;
        items.iter().map(json_site).collect::<Result<_, _>>()?
    } else if text.is_empty() {
        Vec::new()
    } else {
        text.split(',').map(|t| Ok(Site::new(vec![number(t)?])?)).collect::<Result<_, CliError>>()?
    };
    if sites.is_empty() {
        return Err(usage("sites: empty site list"));
    }
    if sites.iter().any(|s| s.dim() != sites[0].dim()) {
        return Err(usage("sites: mixed coordinate dimensions"));
    }
    Ok(sites)
}

fn json_site(v: &Value) -> Result<Site, CliError> {
    let coords = match v {
        Value::Number(x) => vec![x.as_f64().unwrap_or(f64::NAN)],
        Value::Array(xs) => xs
            .iter()
            .map(|x| x.as_f64().ok_or_else(|| usage(format!("sites: not a number: {x}"))))
            .collect::<Result<_, _>>()?,
        other => return Err(usage(format!("sites: unexpected {other}"))),
    };
    Ok(Site::new(coords)?)
}

/// `a,b` with `a < b`.
pub fn parse_domain(text: &str) -> Result<(f64, f64), CliError> {
    let parts: Vec<&str> = text.split(',').collect();
    let [a, b] = parts[..] else {
        return Err(usage("domain: expected a,b"));
    };
    let (a, b) = (number(a)?, number(b)?);
    if !(a < b) {
        return Err(usage("domain: need a < b"));
    }
    Ok((a, b))
}

pub fn parse_counts(text: &str) -> Result<Vec<usize>, CliError> {
    text.split(',')
        .map(str::trim)
        .filter(|t| !t.is_empty())
        .map(|t| t.parse().map_err(|_| usage(format!("counts: bad size {t:?}"))))
        .collect()
}
