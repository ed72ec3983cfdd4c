use std::fs;
use std::path::Path;

use shortpanel::densities::{local_power_gaussian, SpacingStatistic};
use shortpanel::io::{
    fmt_f64, load_instruments, load_panel, write_density, write_power_curve, write_report,
    DensityFamily, GridSpec, PlotWriter,
};
use shortpanel::pipeline::{run_test_sweep, Statistic, TestConfig};
use shortpanel::Error;

fn write(dir: &Path, name: &str, text: &str) -> std::path::PathBuf {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p
}

fn ingest_message(e: Error) -> String {
    match e {
        Error::Ingest { message, .. } => message,
        other => panic!("expected an ingest error, got {other}"),
    }
}

#[test]
fn two_by_two_panel() {
    let dir = tempfile::tempdir().unwrap();
    let p = write(dir.path(), "p.csv", "asset_id,t1,t2\na,1,2\nb,3,4\n");
    let lp = load_panel(&p).unwrap();
    assert_eq!((lp.panel.n(), lp.panel.t()), (2, 2));
    assert_eq!(lp.ids, ["a", "b"]);
    assert_eq!(lp.panel.y()[(1, 0)], 3.0);
    assert_eq!(lp.panel.y()[(0, 1)], 2.0);
}

#[test]
fn blank_cell_is_named() {
    let dir = tempfile::tempdir().unwrap();
    let p = write(dir.path(), "p.csv", "asset_id,t1,t2,t3\na,1,2,3\nb,4,,6\nc,7,8,9\n");
    let msg = ingest_message(load_panel(&p).unwrap_err());
    assert!(msg.contains("line 3") && msg.contains("t2"), "{msg}");
}

#[test]
fn ragged_row_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let p = write(dir.path(), "p.csv", "asset_id,t1,t2\na,1,2\nb,3\n");
    let msg = ingest_message(load_panel(&p).unwrap_err());
    assert!(msg.contains("line 3"), "{msg}");
}

#[test]
fn non_numeric_duplicate_and_header_errors() {
    let dir = tempfile::tempdir().unwrap();
    let p = write(dir.path(), "p.csv", "asset_id,t1,t2\na,1,x\nb,3,4\n");
    assert!(ingest_message(load_panel(&p).unwrap_err()).contains("'x'"));
    let p = write(dir.path(), "p.csv", "asset_id,t1,t2\na,1,2\na,3,4\n");
    assert!(ingest_message(load_panel(&p).unwrap_err()).contains("duplicate"));
    let p = write(dir.path(), "p.csv", "id,t1,t2\na,1,2\nb,3,4\n");
    assert!(load_panel(&p).is_err());
    let p = write(dir.path(), "p.csv", "asset_id,t1,t3\na,1,2\nb,3,4\n");
    assert!(load_panel(&p).is_err());
    assert!(matches!(
        load_panel(dir.path().join("missing.csv")).unwrap_err(),
        Error::Ingest { .. }
    ));
}

#[test]
fn instruments_are_reordered() {
    let dir = tempfile::tempdir().unwrap();
    let p = write(dir.path(), "p.csv", "asset_id,t1,t2\na,1,2\nb,3,4\nc,5,6\n");
    let z = write(dir.path(), "z.csv", "asset_id,z1,z2\nc,30,31\na,10,11\nb,20,21\n");
    let lp = load_panel(&p).unwrap();
    let inst = load_instruments(&z, &lp).unwrap();
    assert_eq!(inst.z()[(0, 0)], 10.0);
    assert_eq!(inst.z()[(1, 1)], 21.0);
    assert_eq!(inst.z()[(2, 0)], 30.0);
}

#[test]
fn instrument_id_mismatch_lists_difference() {
    let dir = tempfile::tempdir().unwrap();
    let p = write(dir.path(), "p.csv", "asset_id,t1,t2\na,1,2\nb,3,4\n");
    let z = write(dir.path(), "z.csv", "asset_id,z1\na,1\nb,2\nextra,3\n");
    let lp = load_panel(&p).unwrap();
    let msg = ingest_message(load_instruments(&z, &lp).unwrap_err());
    assert!(msg.contains("extra"), "{msg}");

    let mut text = String::from("asset_id,z1\n");
    for i in 0..30 {
        text.push_str(&format!("x{i},1\n"));
    }
    let z = write(dir.path(), "z.csv", &text);
    let msg = ingest_message(load_instruments(&z, &lp).unwrap_err());
    assert!(msg.contains("32 place"), "{msg}");
    assert_eq!(msg.split(", ").count(), 10, "{msg}");
}

#[test]
fn constant_single_instrument_accepted() {
    let dir = tempfile::tempdir().unwrap();
    let p = write(dir.path(), "p.csv", "asset_id,t1,t2\na,1,2\nb,3,4\nc,5,7\n");
    let z = write(dir.path(), "z.csv", "asset_id,z1\na,1\nb,1\nc,1\n");
    let lp = load_panel(&p).unwrap();
    let inst = load_instruments(&z, &lp).unwrap();
    assert_eq!(inst.k(), 1);
}

#[test]
fn report_files_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let mut text = String::from("asset_id,t1,t2,t3,t4,t5\n");
    let mut zt = String::from("asset_id,z1,z2\n");
    for i in 0..60 {
        let x = i as f64;
        text.push_str(&format!(
            "a{i},{},{},{},{},{}\n",
            (x * 0.7).sin(),
            (x * 1.3).cos(),
            (x * 0.4).sin() * 2.0,
            (x * 2.1).cos(),
            (x * 0.9).sin() - 0.5
        ));
        zt.push_str(&format!("a{i},{},{}\n", (x * 0.3).cos(), (x * 1.7).sin()));
    }
    let p = write(dir.path(), "p.csv", &text);
    let z = write(dir.path(), "z.csv", &zt);
    let lp = load_panel(&p).unwrap();
    let inst = load_instruments(&z, &lp).unwrap();
    let cfg = TestConfig {
        stats: vec![Statistic::S, Statistic::SStar, Statistic::TIv],
        draws: 300,
        ..TestConfig::default()
    };
    let report = run_test_sweep(&lp.panel, Some(&inst), &cfg).unwrap();
    let out = dir.path().join("out");
    let mut w = PlotWriter::new(&out).unwrap();
    write_report(&report, &mut w).unwrap();
    let curve = local_power_gaussian(3, 0.05, &[0.0, 1.0, 2.0], 500, 1, SpacingStatistic::S).unwrap();
    write_power_curve(&curve, "power_s.csv", "power", &mut w).unwrap();
    write_density(DensityFamily::Goe3Joint, &GridSpec::default_for(DensityFamily::Goe3Joint), &mut w)
        .unwrap();
    let files: Vec<String> = w.entries().iter().map(|e| e.file.clone()).collect();
    w.finish().unwrap();

    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
    let listed: Vec<&str> = manifest["files"]
        .as_array()
        .unwrap()
        .iter()
        .map(|f| f["file"].as_str().unwrap())
        .collect();
    let mut on_disk: Vec<String> = fs::read_dir(&out)
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .filter(|f| f != "manifest.json")
        .collect();
    on_disk.sort();
    let mut listed_sorted: Vec<String> = listed.iter().map(|s| s.to_string()).collect();
    listed_sorted.sort();
    assert_eq!(on_disk, listed_sorted);
    assert_eq!(listed, files);
    for f in ["pvalues.csv", "vy_eigenvalues.csv", "vy_spacings.csv", "vy_spacing_ratios.csv", "vxi_eigenvalues.csv"] {
        assert!(listed.contains(&f), "{f}");
    }

    let power = fs::read_to_string(out.join("power_s.csv")).unwrap();
    assert_eq!(power.lines().next().unwrap(), "a,power");
    assert_eq!(power.lines().count(), 4);

    let joint = fs::read_to_string(out.join("density_goe3joint.csv")).unwrap();
    assert_eq!(joint.lines().next().unwrap(), "s1,s2,density");
    assert_eq!(joint.lines().count(), 1 + 200 * 200);
    let last = joint.lines().last().unwrap();
    assert!(last.starts_with("8,8,"), "{last}");

    let pv = fs::read_to_string(out.join("pvalues.csv")).unwrap();
    let rows: Vec<&str> = pv.lines().skip(1).collect();
    assert_eq!(rows.len(), report.rows.len());
    for (line, row) in rows.iter().zip(&report.rows) {
        let cells: Vec<&str> = line.split(',').collect();
        assert_eq!(cells[5].parse::<f64>().unwrap(), row.p_value);
        assert_eq!(cells[5], fmt_f64(row.p_value));
    }
}

#[test]
fn grid_spec_parsing() {
    let g: GridSpec = "0:4:5".parse().unwrap();
    assert_eq!(g.nodes(), vec![0.0, 1.0, 2.0, 3.0, 4.0]);
    assert!("4:0:5".parse::<GridSpec>().is_err());
    assert!("0:4".parse::<GridSpec>().is_err());
    assert_eq!("GOE3Joint".parse::<DensityFamily>().unwrap(), DensityFamily::Goe3Joint);
}
