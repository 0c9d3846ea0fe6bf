//! Re-serialize report CSVs into per-figure long-format files.

use crate::report::write_atomic;
use anyhow::{bail, Context, Result};
use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

type Figures = BTreeMap<String, Vec<(String, String, String)>>;

fn push(figures: &mut Figures, figure: &str, series: String, x: String, y: String) {
    figures.entry(figure.to_string()).or_default().push((series, x, y));
}

fn read_rows(path: &Path) -> Result<(Vec<String>, Vec<Vec<String>>)> {
    let mut reader = csv::Reader::from_path(path)
        .with_context(|| format!("cannot read report CSV {}", path.display()))?;
    let header: Vec<String> = reader
        .headers()
        .context("missing CSV header")?
        .iter()
        .map(str::to_string)
        .collect();
    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record.with_context(|| format!("bad CSV row in {}", path.display()))?;
        rows.push(record.iter().map(str::to_string).collect());
    }
    Ok((header, rows))
}

fn column(header: &[String], rows: &[Vec<String>], name: &str, path: &Path) -> Result<usize> {
    header
        .iter()
        .position(|h| h == name)
        .with_context(|| format!("column {name:?} missing from {}", path.display()))
        .and_then(|i| {
            if rows.iter().all(|r| r.len() == header.len()) {
                Ok(i)
            } else {
                bail!("ragged rows in {}", path.display())
            }
        })
}

fn series_name(cap_layers: &str, train_beta: &str) -> String {
    format!("{cap_layers}-b{train_beta}")
}

/// Convert the report CSVs found in `input` into `plot_<figure>.csv` files
/// under `out`, each with a `series,x,y` header. Returns the file names
/// written, sorted.
pub fn emit_plot_data(input: &Path, out: &Path) -> Result<Vec<String>> {
    let mut figures = Figures::new();
    let mut seen_any = false;

    let capsweep = input.join("capsweep.csv");
    if capsweep.exists() {
        seen_any = true;
        let (header, rows) = read_rows(&capsweep)?;
        let arch = column(&header, &rows, "arch", &capsweep)?;
        let cap = column(&header, &rows, "cap_layers", &capsweep)?;
        let tb = column(&header, &rows, "train_beta", &capsweep)?;
        let eb = column(&header, &rows, "eval_beta", &capsweep)?;
        for metric in ["std_acc", "rob_acc", "success_rate"] {
            let m = column(&header, &rows, metric, &capsweep)?;
            for r in &rows {
                push(
                    &mut figures,
                    &format!("capsweep_{}_{metric}", r[arch]),
                    series_name(&r[cap], &r[tb]),
                    r[eb].clone(),
                    r[m].clone(),
                );
            }
        }
    }

    let layerdist = input.join("layerdist.csv");
    if layerdist.exists() {
        seen_any = true;
        let (header, rows) = read_rows(&layerdist)?;
        let cap = column(&header, &rows, "cap_layers", &layerdist)?;
        let tb = column(&header, &rows, "train_beta", &layerdist)?;
        let norm = column(&header, &rows, "norm", &layerdist)?;
        let li = column(&header, &rows, "layer_index", &layerdist)?;
        let d = column(&header, &rows, "mean_distance", &layerdist)?;
        for r in &rows {
            push(
                &mut figures,
                &format!("layerdist_{}", r[norm]),
                series_name(&r[cap], &r[tb]),
                r[li].clone(),
                r[d].clone(),
            );
        }
    }

    let zerograd = input.join("zerograd.csv");
    if zerograd.exists() {
        seen_any = true;
        let (header, rows) = read_rows(&zerograd)?;
        let arch = column(&header, &rows, "arch", &zerograd)?;
        let cap = column(&header, &rows, "cap_layers", &zerograd)?;
        let tb = column(&header, &rows, "train_beta", &zerograd)?;
        let eb = column(&header, &rows, "eval_beta", &zerograd)?;
        let d = column(&header, &rows, "mean_distance", &zerograd)?;
        let ff = column(&header, &rows, "found_fraction", &zerograd)?;
        for r in &rows {
            if !r[d].is_empty() {
                push(
                    &mut figures,
                    &format!("zerograd_{}_distance", r[arch]),
                    series_name(&r[cap], &r[tb]),
                    r[eb].clone(),
                    r[d].clone(),
                );
            }
            push(
                &mut figures,
                &format!("zerograd_{}_found", r[arch]),
                series_name(&r[cap], &r[tb]),
                r[eb].clone(),
                r[ff].clone(),
            );
        }
    }

    let table = input.join("table1.csv");
    if table.exists() {
        seen_any = true;
        let (header, rows) = read_rows(&table)?;
        let mv = column(&header, &rows, "max_val", &table)?;
        let adv = column(&header, &rows, "adv_training", &table)?;
        for metric in ["clean_acc", "fgsm_acc", "pgd_acc", "cw_acc"] {
            let m = column(&header, &rows, metric, &table)?;
            for r in &rows {
                if !r[m].is_empty() {
                    push(
                        &mut figures,
                        &format!("table1_{metric}"),
                        r[adv].clone(),
                        r[mv].clone(),
                        r[m].clone(),
                    );
                }
            }
        }
    }

    let smap = input.join("smap.csv");
    if smap.exists() {
        seen_any = true;
        let (header, rows) = read_rows(&smap)?;
        let tb = column(&header, &rows, "train_beta", &smap)?;
        let id = column(&header, &rows, "image_id", &smap)?;
        let total = column(&header, &rows, "total", &smap)?;
        for r in &rows {
            push(
                &mut figures,
                "smap_totals",
                format!("b{}", r[tb]),
                r[id].clone(),
                r[total].clone(),
            );
        }
    }

    if !seen_any {
        bail!("no report CSVs found in {}", input.display());
    }

    let mut written = Vec::new();
    for (figure, rows) in figures {
        let mut doc = String::from("series,x,y\n");
        for (series, x, y) in rows {
            let _ = writeln!(doc, "{series},{x},{y}");
        }
        let name = format!("plot_{figure}.csv");
        write_atomic(&out.join(&name), doc.as_bytes())?;
        written.push(name);
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn capsweep_rows_fan_out_per_metric() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(
            dir.path().join("capsweep.csv"),
            "arch,cap_layers,train_beta,eval_beta,std_acc,rob_acc,success_rate\n\
             general,hl2,0.1,0.01,0.9,0.5,0.4\n\
             general,hl2,0.1,0.02,0.91,0.52,0.39\n",
        )
        .unwrap();
        let out = dir.path().join("plots");
        let written = emit_plot_data(dir.path(), &out).unwrap();
        assert_eq!(
            written,
            vec![
                "plot_capsweep_general_rob_acc.csv",
                "plot_capsweep_general_std_acc.csv",
                "plot_capsweep_general_success_rate.csv"
            ]
        );
        let text = std::fs::read_to_string(out.join("plot_capsweep_general_rob_acc.csv")).unwrap();
        assert_eq!(text, "series,x,y\nhl2-b0.1,0.01,0.5\nhl2-b0.1,0.02,0.52\n");
    }

    #[test]
    fn empty_cells_are_skipped() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(
            dir.path().join("table1.csv"),
            "max_val,adv_training,clean_acc,fgsm_acc,pgd_acc,cw_acc\n\
             -,-,0.98,0.4,0.1,\n",
        )
        .unwrap();
        let written = emit_plot_data(dir.path(), dir.path()).unwrap();
        assert!(!written.contains(&"plot_table1_cw_acc.csv".to_string()));
        assert!(written.contains(&"plot_table1_pgd_acc.csv".to_string()));
    }

    #[test]
    fn empty_dir_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        assert!(emit_plot_data(dir.path(), dir.path()).is_err());
    }
}
