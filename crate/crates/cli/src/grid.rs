use anyhow::{bail, Context, Result};

/// Parses `a:b:step` into the inclusive grid `a, a+step, ..., b`.
pub fn parse_grid(text: &str) -> Result<Vec<f64>> {
    let parts: Vec<&str> = text.split(':').collect();
    let [a, b, step] = parts.as_slice() else {
        bail!("grid must look like a:b:step, got {text:?}");
    };
    let parse = |s: &str| -> Result<f64> {
        s.trim()
            .parse::<f64>()
            .with_context(|| format!("bad number {s:?} in grid {text:?}"))
    };
    let (a, b, step) = (parse(a)?, parse(b)?, parse(step)?);
    if !(step > 0.0) || !a.is_finite() || !b.is_finite() {
        bail!("grid {text:?} needs finite ends and a positive step");
    }
    if b < a {
        bail!("grid {text:?} ends below its start");
    }
    let count = ((b - a) / step + 1e-9).floor() as usize + 1;
    if count > 100_000 {
        bail!("grid {text:?} has {count} points");
    }
    // Rounded so that 0.1 + 2*0.1 prints and caches as 0.3.
    let grid = (0..count)
        .map(|i| ((a + i as f64 * step) * 1e12).round() / 1e12)
        .collect::<Vec<_>>();
    check_rhos(&grid)?;
    Ok(grid)
}

pub fn check_rhos(grid: &[f64]) -> Result<()> {
    if let Some(r) = grid.iter().find(|r| !(0.0..=1.0).contains(*r)) {
        bail!("rho {r} outside [0, 1]");
    }
    Ok(())
}
