//! CSV writers. Every file opens with a `# run_id:` comment line.

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::Path;

use platoonx::analysis::Analysis;
use platoonx::compare::CompareRow;
use platoonx::hearing::HearingMatrix;
use platoonx::kinematics::Trajectory;
use platoonx::metrics::{p_exposed, p_hidden, Channel, HiddenFormula};
use platoonx::scenario::NUM_ACS;
use platoonx::simulator::{SimEvent, SimResult};

pub struct CsvFile {
    inner: csv::Writer<BufWriter<File>>,
}

impl CsvFile {
    pub fn create(path: &Path, run_id: &str, header: &[&str]) -> io::Result<Self> {
        let mut file = BufWriter::new(File::create(path)?);
        writeln!(file, "# run_id: {run_id}")?;
        let mut inner = csv::Writer::from_writer(file);
        inner.write_record(header)?;
        Ok(CsvFile { inner })
    }

    pub fn row<I, S>(&mut self, fields: I) -> io::Result<()>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<[u8]>,
    {
        self.inner.write_record(fields).map_err(io::Error::from)
    }

    pub fn finish(mut self) -> io::Result<()> {
        self.inner.flush()
    }
}

/// Sample times are sums of Δt; print them without the accumulated noise.
fn time(t: f64) -> String {
    ((t * 1e9).round() / 1e9).to_string()
}

fn opt(x: Option<f64>) -> String {
    x.map_or_else(String::new, |v| v.to_string())
}

pub fn write_trajectory(dir: &Path, run_id: &str, tr: &Trajectory) -> io::Result<Vec<String>> {
    let mut f = CsvFile::create(
        &dir.join("trajectory.csv"),
        run_id,
        &["t", "platoon", "vehicle", "x", "y", "theta", "v", "a", "regime"],
    )?;
    for (t, states) in tr.times.iter().zip(&tr.states) {
        for (meta, st) in tr.vehicles.iter().zip(states) {
            let (k, i) = meta.label();
            f.row([
                time(*t),
                k.to_string(),
                i.to_string(),
                st.x.to_string(),
                st.y.to_string(),
                st.theta.to_string(),
                st.v.to_string(),
                st.a.to_string(),
                st.regime.as_str().to_string(),
            ])?;
        }
    }
    f.finish()?;
    Ok(vec!["trajectory.csv".into()])
}

pub fn write_analysis(dir: &Path, run_id: &str, tr: &Trajectory, a: &Analysis) -> io::Result<Vec<String>> {
    let mut ptd = CsvFile::create(
        &dir.join("ptd.csv"),
        run_id,
        &["t", "platoon", "vehicle", "ac", "ptd_s"],
    )?;
    let mut pdr = CsvFile::create(&dir.join("pdr.csv"), run_id, &["t", "platoon", "vehicle", "ac", "pdr"])?;
    let mut service = CsvFile::create(
        &dir.join("service.csv"),
        run_id,
        &[
            "t", "platoon", "vehicle", "ac", "T", "sigma2", "rho", "p_b", "p_v", "w", "tau_m",
        ],
    )?;
    let mut nc = CsvFile::create(&dir.join("nc.csv"), run_id, &["t", "platoon", "vehicle", "n_c"])?;

    for v in &a.series {
        let (k, i) = tr.vehicles[v.vehicle].label();
        let (k, i) = (k.to_string(), i.to_string());
        for (step, t) in a.times.iter().enumerate() {
            let t = time(*t);
            nc.row([&t, &k, &i, &v.n_c[step].to_string()])?;
            for ac in 0..NUM_ACS {
                let m = &v.moments[step].acs[ac];
                let acs = ac.to_string();
                ptd.row([&t, &k, &i, &acs, &v.ptd[step][ac].to_string()])?;
                pdr.row([&t, &k, &i, &acs, &v.pdr[step][ac].to_string()])?;
                service.row([
                    t.clone(),
                    k.clone(),
                    i.clone(),
                    acs,
                    m.t.to_string(),
                    m.sigma2.to_string(),
                    m.rho.to_string(),
                    m.p_b.to_string(),
                    m.p_v.to_string(),
                    m.w.to_string(),
                    m.tau_m.to_string(),
                ])?;
            }
        }
    }
    ptd.finish()?;
    pdr.finish()?;
    service.finish()?;
    nc.finish()?;
    Ok(["ptd.csv", "pdr.csv", "service.csv", "nc.csv"]
        .map(String::from)
        .to_vec())
}

/// Per-pair reception diagnostics with the analysed vehicles as senders.
pub fn write_pairs(
    dir: &Path,
    run_id: &str,
    tr: &Trajectory,
    a: &Analysis,
    hearings: &[HearingMatrix],
    t_tr: f64,
    slot: f64,
    formula: HiddenFormula,
) -> io::Result<Vec<String>> {
    let mut f = CsvFile::create(
        &dir.join("pairs.csv"),
        run_id,
        &["t", "sender", "receiver", "p_exposed", "p_hidden", "p_s"],
    )?;
    let label = |u: usize| {
        let (k, i) = tr.vehicles[u].label();
        format!("{k}.{i}")
    };
    for ((h, tau), t) in hearings.iter().zip(&a.tau).zip(&a.times) {
        let ch = Channel {
            h,
            tau,
            t_tr,
            slot,
            formula,
        };
        for v in &a.series {
            let s = v.vehicle;
            for r in h.neighbors(s) {
                f.row([
                    time(*t),
                    label(s),
                    label(r),
                    p_exposed(s, h, tau).to_string(),
                    p_hidden(s, r, h, tau, t_tr, slot, formula).to_string(),
                    ch.p_success(s, r).to_string(),
                ])?;
            }
        }
    }
    f.finish()?;
    Ok(vec!["pairs.csv".into()])
}

pub fn write_simulation(dir: &Path, run_id: &str, tr: &Trajectory, r: &SimResult) -> io::Result<Vec<String>> {
    let mut ptd = CsvFile::create(
        &dir.join("ptd.csv"),
        run_id,
        &["t", "platoon", "vehicle", "ac", "ptd_s"],
    )?;
    let mut pdr = CsvFile::create(&dir.join("pdr.csv"), run_id, &["t", "platoon", "vehicle", "ac", "pdr"])?;
    let mut service = CsvFile::create(
        &dir.join("service.csv"),
        run_id,
        &["t", "platoon", "vehicle", "ac", "T"],
    )?;
    let mut counts = CsvFile::create(
        &dir.join("counts.csv"),
        run_id,
        &[
            "platoon",
            "vehicle",
            "ac",
            "arrivals",
            "transmitted",
            "dropped",
            "queued",
        ],
    )?;

    for s in &r.series {
        let (k, i) = tr.vehicles[s.vehicle].label();
        let (k, i) = (k.to_string(), i.to_string());
        for (b, t) in r.bucket_times.iter().enumerate() {
            let t = time(*t);
            for ac in 0..NUM_ACS {
                let acs = ac.to_string();
                // empty buckets are omitted rather than zero-filled
                if let Some(x) = s.ptd[b][ac] {
                    ptd.row([&t, &k, &i, &acs, &x.to_string()])?;
                }
                if let Some(x) = s.pdr[b][ac] {
                    pdr.row([&t, &k, &i, &acs, &x.to_string()])?;
                }
                if let Some(x) = s.service[b][ac] {
                    service.row([&t, &k, &i, &acs, &x.to_string()])?;
                }
            }
        }
        for (ac, c) in r.counts[s.vehicle].iter().enumerate() {
            counts.row([
                k.clone(),
                i.clone(),
                ac.to_string(),
                c.arrivals.to_string(),
                c.transmitted.to_string(),
                c.dropped.to_string(),
                c.queued.to_string(),
            ])?;
        }
    }
    ptd.finish()?;
    pdr.finish()?;
    service.finish()?;
    counts.finish()?;
    Ok(["ptd.csv", "pdr.csv", "service.csv", "counts.csv"]
        .map(String::from)
        .to_vec())
}

pub fn write_events(dir: &Path, run_id: &str, events: &[SimEvent]) -> io::Result<Vec<String>> {
    let mut f = CsvFile::create(&dir.join("events.csv"), run_id, &["slot", "vehicle", "ac", "event"])?;
    for e in events {
        f.row([
            e.slot.to_string(),
            e.vehicle.to_string(),
            e.ac.to_string(),
            e.kind.as_str().to_string(),
        ])?;
    }
    f.finish()?;
    Ok(vec!["events.csv".into()])
}

pub fn write_compare(dir: &Path, run_id: &str, tr: &Trajectory, rows: &[CompareRow]) -> io::Result<Vec<String>> {
    let mut f = CsvFile::create(
        &dir.join("compare.csv"),
        run_id,
        &[
            "platoon",
            "vehicle",
            "ac",
            "T_analytical",
            "T_simulated",
            "T_rel_error",
            "pdr_analytical",
            "pdr_simulated",
            "pdr_abs_error",
        ],
    )?;
    for r in rows {
        let (k, i) = match r.vehicle {
            Some(u) => {
                let (k, i) = tr.vehicles[u].label();
                (k.to_string(), i.to_string())
            }
            None => ("all".to_string(), "all".to_string()),
        };
        f.row([
            k,
            i,
            r.ac.to_string(),
            r.t_analytical.to_string(),
            opt(r.t_simulated),
            opt(r.service_rel_error()),
            opt(r.pdr_analytical),
            opt(r.pdr_simulated),
            opt(r.pdr_abs_error()),
        ])?;
    }
    f.finish()?;
    Ok(vec!["compare.csv".into()])
}
