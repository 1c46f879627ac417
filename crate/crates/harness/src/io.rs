//! Dataset CSV: `episode,t,x,y,theta,feat_0..feat_{d-1},action_id,x_next,y_next,theta_next`.

use std::io::{Read, Write};

use anyhow::{anyhow, bail, Context};
use causal_mdp::{ContextFeature, Dataset, QueryPoint, Sample, State};

pub fn write_dataset<W: Write>(writer: W, dataset: &Dataset) -> anyhow::Result<()> {
    let d = dataset.samples().first().map_or(0, |s| s.query.feature.dim());
    let mut w = csv::Writer::from_writer(writer);
    let mut header: Vec<String> = ["episode", "t", "x", "y", "theta"].map(String::from).to_vec();
    header.extend((0..d).map(|k| format!("feat_{k}")));
    header.extend(["action_id", "x_next", "y_next", "theta_next"].map(String::from));
    w.write_record(&header)?;
    for s in dataset.samples() {
        let q = &s.query;
        let mut rec = vec![
            s.episode.to_string(),
            s.t.to_string(),
            q.state.x.to_string(),
            q.state.y.to_string(),
            q.state.theta.to_string(),
        ];
        rec.extend(q.feature.0.iter().map(f64::to_string));
        rec.extend([
            s.action.to_string(),
            s.next_state.x.to_string(),
            s.next_state.y.to_string(),
            s.next_state.theta.to_string(),
        ]);
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_dataset<R: Read>(reader: R, n_actions: usize) -> anyhow::Result<Dataset> {
    let mut r = csv::Reader::from_reader(reader);
    let header = r.headers()?.clone();
    let n = header.len();
    if n < 9 {
        bail!("dataset header has {n} columns, expected at least 9");
    }
    let d = n - 9;
    let fixed = ["episode", "t", "x", "y", "theta"];
    for (k, name) in fixed.iter().enumerate() {
        if &header[k] != *name {
            bail!("column {k} is '{}', expected '{name}'", &header[k]);
        }
    }
    for k in 0..d {
        if header[5 + k] != format!("feat_{k}") {
            bail!("column {} is '{}', expected 'feat_{k}'", 5 + k, &header[5 + k]);
        }
    }
    for (k, name) in ["action_id", "x_next", "y_next", "theta_next"].iter().enumerate() {
        if &header[5 + d + k] != *name {
            bail!("column {} is '{}', expected '{name}'", 5 + d + k, &header[5 + d + k]);
        }
    }
    let mut samples = Vec::new();
    for (line, rec) in r.records().enumerate() {
        let rec = rec?;
        let line = line + 2;
        let f = |k: usize| -> anyhow::Result<f64> {
            rec[k]
                .parse::<f64>()
                .map_err(|e| anyhow!("line {line}, column {k}: {e}"))
        };
        let episode: u32 = rec[0].parse().with_context(|| format!("line {line}: episode"))?;
        let t: u32 = rec[1].parse().with_context(|| format!("line {line}: t"))?;
        let state = State::new(f(2)?, f(3)?, f(4)?);
        let feature = (0..d).map(|k| f(5 + k)).collect::<anyhow::Result<Vec<_>>>()?;
        let action: usize = rec[5 + d].parse().with_context(|| format!("line {line}: action_id"))?;
        let next = State::new(f(6 + d)?, f(7 + d)?, f(8 + d)?);
        samples.push(Sample::new(
            episode,
            t,
            QueryPoint::new(state, ContextFeature(feature)),
            action,
            next,
        ));
    }
    Ok(Dataset::new(samples, n_actions)?)
}
