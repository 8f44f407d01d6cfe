//! Parameter-grid parsing for `sweep`: "lo..hi" inclusive integer ranges or
//! comma-separated decimal lists.

pub fn parse(flag: &str, spec: &str) -> Result<Vec<f64>, String> {
    let spec = spec.trim();
    if spec.is_empty() {
        return Err(format!("--{flag}: empty grid"));
    }
    if let Some((lo, hi)) = spec.split_once("..") {
        let end = |s: &str, which: &str| {
            s.trim().parse::<i64>().map_err(|_| format!("--{flag}: bad range {which} {s:?}"))
        };
        let lo = end(lo, "start")?;
        let hi = end(hi, "end")?;
        if hi < lo {
            return Err(format!("--{flag}: range {spec:?} is empty"));
        }
        return Ok((lo..=hi).map(|v| v as f64).collect());
    }
    spec.split(',')
        .map(|tok| {
            let v: f64 =
                tok.trim().parse().map_err(|_| format!("--{flag}: bad value {tok:?}"))?;
            if v.is_finite() {
                Ok(v)
            } else {
                Err(format!("--{flag}: non-finite value {tok:?}"))
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::parse;

    #[test]
    fn ranges_and_lists() {
        assert_eq!(parse("d", "2..6").unwrap(), vec![2.0, 3.0, 4.0, 5.0, 6.0]);
        assert_eq!(parse("t0", "0.5, 1.5,3").unwrap(), vec![0.5, 1.5, 3.0]);
        assert_eq!(parse("m", "7").unwrap(), vec![7.0]);
        assert_eq!(parse("d", "3..3").unwrap(), vec![3.0]);
    }

    #[test]
    fn rejects_malformed_specs() {
        assert!(parse("d", "").is_err());
        assert!(parse("d", "6..2").is_err());
        assert!(parse("d", "a..b").is_err());
        assert!(parse("t0", "1,x").is_err());
        assert!(parse("t0", "inf").is_err());
    }
}
