use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use clicksim::checkpoint;
use clicksim::clicklog::{dataset_stats, split_stats, Dataset, PermutationMode, Split};
use clicksim::metrics::{generate_synthetic, ndcg_at, reverse_forward_ppl, MetricReport, Surrogate};
use clicksim::oracle::{self, AuditReport, OracleSpec};
use clicksim::pgm::{self, PgmConfig, PgmKind, PgmModel};
use clicksim::seqnet::NetDims;
use clicksim::train::{gail_loop, pretrain_mle, TrainConfig};
use clicksim::{ClickModel, Discriminator, Generator};

use crate::run::{usage, RunDir, RunManifest, EXIT_AUDIT};
use crate::{Common, DataArgs, TrainFlags};

const NDCG_CUTOFFS: [usize; 4] = [1, 3, 5, 10];
const CLICK_TOKENS: [&str; 4] = ["<pad>", "<unused>", "skip", "click"];

/// Defaults < config file < `CLICKSIM_SEED` < flags.
fn resolve_config(common: &Common, flags: Option<&TrainFlags>) -> Result<TrainConfig> {
    let mut cfg = TrainConfig::default();
    if let Some(p) = &common.config {
        let text = fs::read_to_string(p).with_context(|| format!("reading config {}", p.display()))?;
        cfg.apply_text(&text)?;
    }
    if let Ok(v) = std::env::var("CLICKSIM_SEED") {
        cfg.seed = v
            .trim()
            .parse()
            .map_err(|_| usage(format!("CLICKSIM_SEED must be an unsigned integer, got {v:?}")))?;
    }
    if let Some(f) = flags {
        let typed = [
            ("pretrain_epochs", f.pretrain_epochs.map(|v| v.to_string())),
            ("max_epochs", f.max_epochs.map(|v| v.to_string())),
            ("g_step", f.g_step.map(|v| v.to_string())),
            ("d_step", f.d_step.clone()),
            ("gamma", f.gamma.map(|v| v.to_string())),
            ("batch_size", f.batch_size.map(|v| v.to_string())),
            ("emb_size", f.emb_size.map(|v| v.to_string())),
            ("hidden_size", f.hidden_size.map(|v| v.to_string())),
        ];
        for (k, v) in typed {
            if let Some(v) = v {
                cfg.set(k, &v)?;
            }
        }
    }
    for kv in &common.set {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| usage(format!("--set expects KEY=VALUE, got {kv:?}")))?;
        cfg.set(k.trim(), v.trim())?;
    }
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn data_inputs(dir: &Path) -> Vec<(String, PathBuf)> {
    let mut v: Vec<(String, PathBuf)> = ["train.tsv", "valid.tsv", "test.tsv"]
        .iter()
        .map(|n| (n.to_string(), dir.join(n)))
        .collect();
    let ann = dir.join("annotations.tsv");
    if ann.exists() {
        v.push(("annotations.tsv".into(), ann));
    }
    v
}

fn manifest(command: &str, common: &Common, data: Option<&Path>, seed: u64, settings: String) -> RunManifest {
    let mut inputs = Vec::new();
    if let Some(c) = &common.config {
        inputs.push(("config".to_string(), c.clone()));
    }
    if let Some(d) = data {
        inputs.extend(data_inputs(d));
    }
    RunManifest {
        command: command.to_string(),
        config_path: common.config.clone(),
        data_dir: data.map(Path::to_path_buf),
        seed,
        out_dir: common.out.clone(),
        inputs,
        settings,
    }
}

/// Runs `body` in the output directory, removing everything it wrote on error.
fn in_run_dir(out: &Path, m: RunManifest, body: impl FnOnce(&mut RunDir) -> Result<u8>) -> Result<u8> {
    let mut dir = RunDir::create(out)?;
    let res = dir.write_manifest(&m).and_then(|_| body(&mut dir));
    if res.is_err() {
        dir.remove_outputs();
    }
    res
}

fn pick_split<'a>(ds: &'a Dataset, name: &str) -> Result<&'a Split> {
    match name {
        "train" => Ok(&ds.train),
        "valid" => Ok(&ds.valid),
        "test" => Ok(&ds.test),
        other => Err(usage(format!("split must be train, valid or test, got {other:?}"))),
    }
}

enum Loaded {
    Neural(Box<Generator>),
    Pgm(PgmModel),
}

impl Loaded {
    fn model(&self) -> &dyn ClickModel {
        match self {
            Loaded::Neural(g) => g.as_ref(),
            Loaded::Pgm(m) => m,
        }
    }
}

fn check_dims(found: NetDims, ds: &Dataset) -> Result<()> {
    let want = (ds.n_queries(), ds.n_docs(), ds.n_verticals());
    let got = (found.n_queries, found.n_docs, found.n_verticals);
    if want != got {
        return Err(clicksim::Error::Data(format!(
            "checkpoint vocabulary sizes (queries, docs, verticals) {got:?} do not match the dataset's {want:?}"
        ))
        .into());
    }
    Ok(())
}

fn load_model(path: &Path, ds: &Dataset) -> Result<Loaded> {
    let text = fs::read_to_string(path).with_context(|| format!("reading model {}", path.display()))?;
    if text.starts_with("clicksim-checkpoint") {
        let (g, _) = checkpoint::load::<f64>(path)?;
        check_dims(g.dims(), ds)?;
        Ok(Loaded::Neural(Box::new(g)))
    } else {
        let m = PgmModel::from_text(&text).with_context(|| format!("parsing {}", path.display()))?;
        if let Some(t) = m.list_len().filter(|t| *t != ds.list_len) {
            return Err(clicksim::Error::Data(format!(
                "model covers {t} ranks, dataset lists have {}",
                ds.list_len
            ))
            .into());
        }
        Ok(Loaded::Pgm(m))
    }
}

fn load_dataset(d: &DataArgs) -> Result<Dataset> {
    Ok(Dataset::load(&d.data, d.list_len)?)
}

/// Prediction metrics on `split`, plus NDCG when annotations are present.
fn full_metrics(model: &dyn ClickModel, ds: &Dataset, split: &Split) -> Result<MetricReport> {
    let mut rep = MetricReport::prediction(model, &split.records)?;
    if !ds.annotations.is_empty() {
        let ks: Vec<usize> = NDCG_CUTOFFS.iter().copied().filter(|k| *k <= ds.list_len).collect();
        for (k, s) in ndcg_at(model, split, &ds.annotations, &ks) {
            if s.queries > 0 {
                rep.ndcg_at.insert(k, s.mean);
            }
        }
    }
    Ok(rep)
}

pub fn stats(data: &Path, list_len: usize, common: &Common) -> Result<u8> {
    let m = manifest("stats", common, Some(data), 0, format!("list_len = {list_len}\n"));
    in_run_dir(&common.out, m, |dir| {
        let ds = Dataset::load(data, list_len)?;
        let st = dataset_stats(&ds);
        dir.write("report.tsv", st.to_tsv())?;
        let mut s = String::new();
        let _ = writeln!(s, "queries = {}", ds.queries.len() - 2);
        let _ = writeln!(s, "documents = {}", ds.docs.len() - 2);
        let _ = writeln!(s, "verticals = {}", ds.verticals.len() - 2);
        let _ = writeln!(s, "annotations = {}", ds.annotations.len());
        dir.write("metrics.txt", &s)?;
        print!("{}", st.to_tsv());
        Ok(0)
    })
}

pub fn fit_pgm(model: &str, data: &DataArgs, common: &Common) -> Result<u8> {
    let kind: PgmKind = model.parse()?;
    let cfg = PgmConfig::default();
    let settings = format!(
        "model = {kind}\nlist_len = {}\nmax_iter = {}\ntol = {:?}\n",
        data.list_len, cfg.max_iter, cfg.tol
    );
    let m = manifest("fit-pgm", common, Some(&data.data), 0, settings);
    in_run_dir(&common.out, m, |dir| {
        let ds = load_dataset(data)?;
        let (fitted, fit) = pgm::fit(kind, &ds.train.records, &cfg)?;
        dir.write("model.ckpt", fitted.to_text())?;
        let mut trace = String::from("iteration\ttrain_ll\n");
        for (i, ll) in fit.ll_trace.iter().enumerate() {
            let _ = writeln!(trace, "{}\t{ll:.10}", i + 1);
        }
        dir.write("report.tsv", trace)?;
        let rep = full_metrics(&fitted, &ds, &ds.test)?;
        dir.write("metrics.txt", rep.to_kv())?;
        print!("{}", rep.to_kv());
        Ok(0)
    })
}

fn new_models(ds: &Dataset, cfg: &TrainConfig, rng: &mut ChaCha8Rng) -> Result<(Generator, Discriminator)> {
    let dims = NetDims::for_dataset(ds, cfg.emb_size, cfg.hidden_size);
    Ok((
        Generator::random(dims, cfg.init_scale, rng)?,
        Discriminator::random(dims, cfg.init_scale, rng)?,
    ))
}

fn write_training_outputs(
    dir: &mut RunDir,
    ds: &Dataset,
    gen: &Generator,
    disc: &Discriminator,
    report: &clicksim::train::TrainReport,
) -> Result<()> {
    dir.write("model.ckpt", checkpoint::to_text(gen, Some(disc)))?;
    dir.write("report.tsv", report.to_tsv())?;
    dir.write("timing.tsv", report.timing_tsv())?;
    let rep = full_metrics(gen, ds, &ds.test)?;
    dir.write("metrics.txt", rep.to_kv())?;
    print!("{}", rep.to_kv());
    Ok(())
}

pub fn pretrain(data: &DataArgs, flags: &TrainFlags, common: &Common) -> Result<u8> {
    let cfg = resolve_config(common, Some(flags))?;
    let settings = format!("list_len = {}\n{}", data.list_len, cfg.to_text());
    let m = manifest("pretrain", common, Some(&data.data), cfg.seed, settings);
    in_run_dir(&common.out, m, |dir| {
        let ds = load_dataset(data)?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let (mut gen, mut disc) = new_models(&ds, &cfg, &mut rng)?;
        let report = pretrain_mle(&mut gen, Some(&mut disc), &ds.train, &ds.valid, &cfg, &mut rng)?;
        write_training_outputs(dir, &ds, &gen, &disc, &report)?;
        Ok(0)
    })
}

pub fn train_gail(init: Option<&Path>, data: &DataArgs, flags: &TrainFlags, common: &Common) -> Result<u8> {
    let cfg = resolve_config(common, Some(flags))?;
    let settings = format!("list_len = {}\n{}", data.list_len, cfg.to_text());
    let mut m = manifest("train-gail", common, Some(&data.data), cfg.seed, settings);
    if let Some(p) = init {
        m.inputs.push(("init".into(), p.to_path_buf()));
    }
    in_run_dir(&common.out, m, |dir| {
        let ds = load_dataset(data)?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let (mut gen, mut disc, mut report) = match init {
            Some(p) => {
                let (g, d) = checkpoint::load::<f64>(p)?;
                check_dims(g.dims(), &ds)?;
                let d = match d {
                    Some(d) => d,
                    None => Discriminator::random(g.dims(), cfg.init_scale, &mut rng)?,
                };
                (g, d, Default::default())
            }
            None => {
                let (mut g, mut d) = new_models(&ds, &cfg, &mut rng)?;
                let r = pretrain_mle(&mut g, Some(&mut d), &ds.train, &ds.valid, &cfg, &mut rng)?;
                (g, d, r)
            }
        };
        let adv = gail_loop(&mut gen, &mut disc, &ds.train, &ds.valid, &cfg, &mut rng)?;
        report.extend(adv);
        write_training_outputs(dir, &ds, &gen, &disc, &report)?;
        Ok(0)
    })
}

pub fn eval(model: &Path, split: &str, data: &DataArgs, common: &Common) -> Result<u8> {
    let settings = format!("list_len = {}\nsplit = {split}\n", data.list_len);
    let mut m = manifest("eval", common, Some(&data.data), 0, settings);
    m.inputs.push(("model".into(), model.to_path_buf()));
    in_run_dir(&common.out, m, |dir| {
        let ds = load_dataset(data)?;
        let split = pick_split(&ds, split)?;
        let loaded = load_model(model, &ds)?;
        let rep = full_metrics(loaded.model(), &ds, split)?;
        dir.write("report.tsv", rep.to_tsv())?;
        dir.write("metrics.txt", rep.to_kv())?;
        print!("{}", rep.to_kv());
        Ok(0)
    })
}

fn stats_rows(out: &mut String, name: &str, split: &Split, list_len: usize) {
    let s = split_stats(split, list_len);
    let _ = write!(out, "{name}\t{}\t{}", s.records, s.unique_queries);
    for c in &s.ctr_by_rank {
        let _ = write!(out, "\t{c:.6}");
    }
    out.push('\n');
}

pub fn generate(
    model: &Path,
    repeats: usize,
    permute: &str,
    split: &str,
    data: &DataArgs,
    common: &Common,
) -> Result<u8> {
    let mode: PermutationMode = permute.parse()?;
    if repeats == 0 {
        return Err(usage("--repeats must be positive"));
    }
    let cfg = resolve_config(common, None)?;
    let settings = format!(
        "list_len = {}\nsplit = {split}\nrepeats = {repeats}\npermute = {mode}\nseed = {}\n",
        data.list_len, cfg.seed
    );
    let mut m = manifest("generate", common, Some(&data.data), cfg.seed, settings);
    m.inputs.push(("model".into(), model.to_path_buf()));
    in_run_dir(&common.out, m, |dir| {
        let ds = load_dataset(data)?;
        let real = pick_split(&ds, split)?;
        let loaded = load_model(model, &ds)?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let synth = generate_synthetic(loaded.model(), real, repeats, mode, &mut rng);
        dir.write("synthetic.tsv", synth.to_lines())?;
        let mut rep = String::from("source\trecords\tunique_queries");
        for k in 1..=ds.list_len {
            let _ = write!(rep, "\tctr@{k}");
        }
        rep.push('\n');
        stats_rows(&mut rep, "real", real, ds.list_len);
        stats_rows(&mut rep, "synthetic", &synth, ds.list_len);
        dir.write("report.tsv", &rep)?;
        dir.write("metrics.txt", format!("records = {}\n", synth.len()))?;
        print!("{rep}");
        Ok(0)
    })
}

pub fn coverage(
    synthetic: &Path,
    surrogate: &str,
    split: &str,
    data: &DataArgs,
    flags: &TrainFlags,
    common: &Common,
) -> Result<u8> {
    let kind: Surrogate = surrogate.parse()?;
    let cfg = resolve_config(common, Some(flags))?;
    let settings = format!(
        "list_len = {}\nsplit = {split}\nsurrogate = {kind}\n{}",
        data.list_len,
        cfg.to_text()
    );
    let mut m = manifest("coverage", common, Some(&data.data), cfg.seed, settings);
    m.inputs.push(("synthetic".into(), synthetic.to_path_buf()));
    in_run_dir(&common.out, m, |dir| {
        let ds = load_dataset(data)?;
        let real = pick_split(&ds, split)?;
        let synth = ds.load_split(synthetic)?;
        let dims = NetDims::for_dataset(&ds, cfg.emb_size, cfg.hidden_size);
        let (reverse, forward) = reverse_forward_ppl(&synth, real, kind, dims, &cfg)?;
        let rep = MetricReport {
            reverse_ppl: Some(reverse),
            forward_ppl: Some(forward),
            ..Default::default()
        };
        dir.write("report.tsv", rep.to_tsv())?;
        dir.write("metrics.txt", rep.to_kv())?;
        print!("{}", rep.to_kv());
        Ok(0)
    })
}

pub struct OracleArgs {
    pub family: String,
    pub exam: Vec<f64>,
    pub list_len: usize,
    pub queries: usize,
    pub docs_per_query: usize,
    pub verticals: usize,
    /// Train, valid, test.
    pub sessions: [usize; 3],
}

pub fn synth_oracle(a: &OracleArgs, common: &Common) -> Result<u8> {
    let cfg = resolve_config(common, None)?;
    if a.queries == 0 || a.verticals == 0 {
        return Err(usage("--queries and --verticals must be positive"));
    }
    if a.sessions.iter().any(|n| *n == 0) {
        return Err(usage("every split needs at least one session"));
    }
    let (family_text, list_len) = match a.family.as_str() {
        "pbm" => {
            if a.exam.iter().any(|e| !(0.0..=1.0).contains(e)) {
                return Err(usage("examination probabilities must lie in [0, 1]"));
            }
            (format!("exam = {:?}\n", a.exam), a.exam.len())
        }
        "sdbn" => (String::new(), a.list_len),
        other => return Err(usage(format!("family must be pbm or sdbn, got {other:?}"))),
    };
    let settings = format!(
        "family = {}\n{family_text}list_len = {list_len}\nqueries = {}\ndocs_per_query = {}\nverticals = {}\nsessions = {:?}\nseed = {}\n",
        a.family, a.queries, a.docs_per_query, a.verticals, a.sessions, cfg.seed
    );
    let m = manifest("synth-oracle", common, None, cfg.seed, settings);
    in_run_dir(&common.out, m, |dir| {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let spec = if a.family == "pbm" {
            OracleSpec::random_pbm(a.exam.clone(), a.queries, a.docs_per_query, a.verticals, &mut rng)
        } else {
            OracleSpec::random_sdbn(list_len, a.queries, a.docs_per_query, a.verticals, &mut rng)
        };
        let [n_train, n_valid, n_test] = a.sessions;
        let ds = spec.dataset(n_train, n_valid, n_test, &mut rng)?;
        let data_dir = dir.track("data");
        ds.write(&data_dir)?;
        dir.write("oracle.txt", spec.to_text())?;
        let (valid_at, valid) = spec.ppl(&ds.valid.raw)?;
        let (test_at, test) = spec.ppl(&ds.test.raw)?;
        let mut rep = String::from("rank\tvalid_ppl_floor\ttest_ppl_floor\n");
        for (t, (v, s)) in valid_at.iter().zip(&test_at).enumerate() {
            let _ = writeln!(rep, "{}\t{v:.10}\t{s:.10}", t + 1);
        }
        dir.write("report.tsv", rep)?;
        let kv = format!("valid_ppl_floor = {valid:.10}\ntest_ppl_floor = {test:.10}\n");
        dir.write("metrics.txt", &kv)?;
        print!("{kv}");
        Ok(0)
    })
}

pub fn theory_audit(instances: usize, horizons: &[usize], common: &Common) -> Result<u8> {
    let cfg = resolve_config(common, None)?;
    if instances == 0 {
        return Err(usage("--instances must be positive"));
    }
    if let Some(h) = horizons.iter().find(|h| !(1..=12).contains(*h)) {
        return Err(usage(format!("horizon {h} outside 1..=12")));
    }
    let settings = format!("instances = {instances}\nhorizons = {horizons:?}\nseed = {}\n", cfg.seed);
    let m = manifest("theory-audit", common, None, cfg.seed, settings);
    in_run_dir(&common.out, m, |dir| {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut all = AuditReport::default();
        let mut kv = String::new();
        for &t in horizons {
            let rep = oracle::audit(instances, t, &mut rng)?;
            let _ = writeln!(kv, "bc_holds@{t} = {}/{instances}", rep.bc_holds());
            let _ = writeln!(kv, "gail_holds@{t} = {}/{instances}", rep.gail_holds());
            all.rows.extend(rep.rows);
        }
        let mut ok = all.all_hold();
        dir.write("report.tsv", all.to_tsv())?;

        let mut sorted = horizons.to_vec();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() >= 2 && sorted[0] >= 2 {
            let rows = oracle::scaling_audit(&sorted)?;
            let mut tsv = String::from("horizon\tbc_normalized_gap\tbc_per_horizon\tbc_worst_delta\tgail_normalized_gap\tgail_coefficient\n");
            for r in &rows {
                let _ = writeln!(
                    tsv,
                    "{}\t{:.10}\t{:.10}\t{:.6e}\t{:.10}\t{:.10}",
                    r.horizon,
                    r.bc_normalized,
                    r.bc_normalized / r.horizon as f64,
                    r.bc_delta,
                    r.gail_normalized,
                    r.gail_coefficient
                );
            }
            dir.write("scaling.tsv", tsv)?;
            let superlinear = rows
                .windows(2)
                .all(|w| w[1].bc_normalized / w[1].horizon as f64 > w[0].bc_normalized / w[0].horizon as f64);
            let linear = rows.iter().all(|r| r.gail_normalized <= r.gail_coefficient);
            let _ = writeln!(kv, "bc_gap_superlinear = {superlinear}");
            let _ = writeln!(kv, "gail_gap_within_linear_bound = {linear}");
            ok &= superlinear && linear;
        }
        let _ = writeln!(kv, "all_hold = {ok}");
        dir.write("metrics.txt", &kv)?;
        print!("{kv}");
        Ok(if ok { 0 } else { EXIT_AUDIT })
    })
}

pub fn export_embeddings(model: &Path, table: &str, data: &DataArgs, common: &Common) -> Result<u8> {
    let param = match table {
        "query" => Some("emb_q"),
        "doc" => Some("emb_d"),
        "vertical" => Some("emb_v"),
        "click" => Some("emb_c"),
        "hidden" => None,
        other => {
            return Err(usage(format!(
                "table must be query, doc, vertical, click or hidden, got {other:?}"
            )))
        }
    };
    let settings = format!("list_len = {}\ntable = {table}\n", data.list_len);
    let mut m = manifest("export-embeddings", common, Some(&data.data), 0, settings);
    m.inputs.push(("model".into(), model.to_path_buf()));
    in_run_dir(&common.out, m, |dir| {
        let ds = load_dataset(data)?;
        let gen = match load_model(model, &ds)? {
            Loaded::Neural(g) => g,
            Loaded::Pgm(_) => return Err(usage("embeddings need a neural checkpoint")),
        };
        let net = gen.net();
        let mut rows: Vec<(String, Vec<f64>)> = Vec::new();
        match param {
            Some(name) => {
                let id = net
                    .store()
                    .id(name)
                    .ok_or_else(|| clicksim::Error::Model(format!("checkpoint lacks {name}")))?;
                let mat = net.store().value(id);
                let tokens: Vec<(u32, String)> = match table {
                    "query" => ds.queries.tokens().map(|(i, t)| (i, t.to_string())).collect(),
                    "doc" => ds.docs.tokens().map(|(i, t)| (i, t.to_string())).collect(),
                    "vertical" => ds.verticals.tokens().map(|(i, t)| (i, t.to_string())).collect(),
                    _ => CLICK_TOKENS.iter().enumerate().map(|(i, t)| (i as u32, t.to_string())).collect(),
                };
                for (i, tok) in tokens {
                    rows.push((tok, mat.row(i as usize).to_vec()));
                }
            }
            None => {
                for (i, tok) in ds.queries.tokens() {
                    let (h, _) = net.start(i)?;
                    rows.push((tok.to_string(), h));
                }
            }
        }
        let mut out = String::new();
        for (tok, v) in rows {
            out.push_str(&tok);
            for x in v {
                let _ = write!(out, "\t{x}");
            }
            out.push('\n');
        }
        dir.write("embeddings.tsv", out)?;
        Ok(0)
    })
}
